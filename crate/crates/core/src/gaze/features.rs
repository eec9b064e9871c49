use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::fixation::{detect_fixations, Fixation, FixationParams};
use super::layout::{assign_to_images, CollageLayout, ImageViewing, Rect};
use super::GazeSample;

pub const EYE_FEATURES: usize = 19;

pub const EYE_FEATURE_NAMES: [&str; EYE_FEATURES] = [
    "numMeasurements",
    "numOutsideFix",
    "ratioInsideOutside",
    "speed",
    "coverage",
    "normCoverage",
    "pupil",
    "nJumps1",
    "nJumps2",
    "numFix",
    "meanFixLen",
    "totalFixLen",
    "fixPrct",
    "nJumpsFix",
    "maxAngle",
    "firstFixLen",
    "firstFixNum",
    "distPrev",
    "durPrev",
];

/// Breaks longer than these (ms) count towards `nJumps1` / `nJumps2`.
pub const SHORT_BREAK_MS: f64 = 60.0;
pub const LONG_BREAK_MS: f64 = 600.0;
const COVERAGE_GRID: usize = 4;

/// Per-image gaze descriptor. Unviewed images carry all zeros.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EyeFeatureVector {
    pub values: [f64; EYE_FEATURES],
    pub viewed: bool,
}

impl Default for EyeFeatureVector {
    fn default() -> Self {
        Self::unviewed()
    }
}

impl EyeFeatureVector {
    pub fn unviewed() -> Self {
        EyeFeatureVector {
            values: [0.0; EYE_FEATURES],
            viewed: false,
        }
    }

    pub fn viewed(values: [f64; EYE_FEATURES]) -> Self {
        EyeFeatureVector {
            values,
            viewed: true,
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        EYE_FEATURE_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.values[i])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

fn angle_between(u: (f64, f64), v: (f64, f64)) -> Option<f64> {
    let cross = u.0 * v.1 - u.1 * v.0;
    let dot = u.0 * v.0 + u.1 * v.1;
    (u != (0.0, 0.0) && v != (0.0, 0.0)).then(|| cross.abs().atan2(dot))
}

/// Computes the 19 eye-movement features for one image.
///
/// `samples` is the valid-sample stream the `viewing` indices refer to and
/// `fixations` are all fixations detected on that stream; fixations count
/// towards the image when their centroid falls inside `cell`.
pub fn compute_eye_features(
    samples: &[GazeSample],
    viewing: &ImageViewing,
    cell: &Rect,
    fixations: &[Fixation],
) -> EyeFeatureVector {
    if !viewing.viewed() {
        return EyeFeatureVector::unviewed();
    }

    let view_time: f64 = viewing.visits.iter().map(|v| v.duration()).sum();
    let on_image: Vec<&Fixation> = fixations
        .iter()
        .filter(|f| cell.contains(f.centroid.0, f.centroid.1))
        .collect();
    // Fixation time inside the image's visits; a fixation straddling the cell
    // border only contributes the part spent on this image.
    let on_time = |f: &Fixation| -> f64 {
        viewing
            .visits
            .iter()
            .map(|v| (f.end().min(v.exit) - f.start.max(v.entry)).max(0.0))
            .sum()
    };
    let total_fix: f64 = on_image.iter().map(|f| on_time(f)).sum();
    let num_fix = on_image.len();

    let in_fixation = |idx: usize| fixations.iter().any(|f| idx >= f.first && idx <= f.last);
    let inside = viewing.samples.iter().filter(|&&i| in_fixation(i)).count();
    let raw_count = viewing.samples.len() as f64;

    let mut steps = 0usize;
    let mut travelled = 0.0;
    for visit in &viewing.visits {
        for i in visit.first..visit.last {
            travelled += distance((samples[i].x, samples[i].y), (samples[i + 1].x, samples[i + 1].y));
            steps += 1;
        }
    }

    let mut occupied = [false; COVERAGE_GRID * COVERAGE_GRID];
    for &i in &viewing.samples {
        let gx = ((samples[i].x - cell.x) / cell.w * COVERAGE_GRID as f64) as usize;
        let gy = ((samples[i].y - cell.y) / cell.h * COVERAGE_GRID as f64) as usize;
        occupied[gy.min(COVERAGE_GRID - 1) * COVERAGE_GRID + gx.min(COVERAGE_GRID - 1)] = true;
    }
    let coverage = occupied.iter().filter(|&&o| o).count() as f64;

    let pupil = viewing
        .samples
        .iter()
        .map(|&i| samples[i].pupil)
        .filter(|p| p.is_finite())
        .fold(0.0, f64::max);

    let breaks = viewing.breaks();
    let n_jumps1 = breaks.iter().filter(|&&b| b > SHORT_BREAK_MS).count();
    let n_jumps2 = breaks.iter().filter(|&&b| b > LONG_BREAK_MS).count();

    // Returns to the image in the fixation sequence.
    let mut runs = 0usize;
    let mut previous_on = false;
    for f in fixations {
        let on = cell.contains(f.centroid.0, f.centroid.1);
        if on && !previous_on {
            runs += 1;
        }
        previous_on = on;
    }
    let n_jumps_fix = runs.saturating_sub(1);

    let saccades: Vec<(f64, f64)> = on_image
        .windows(2)
        .map(|w| (w[1].centroid.0 - w[0].centroid.0, w[1].centroid.1 - w[0].centroid.1))
        .collect();
    let max_angle = saccades
        .windows(2)
        .filter_map(|w| angle_between(w[0], w[1]))
        .fold(0.0, f64::max);

    let first_visit = viewing.visits[0];
    let first_fix_len = on_image.first().map_or(0.0, |f| on_time(f));
    let first_fix_num = on_image
        .iter()
        .filter(|f| f.start >= first_visit.entry && f.start <= first_visit.exit)
        .count();

    let previous = fixations
        .iter()
        .rev()
        .find(|f| f.end() <= first_visit.entry && !cell.contains(f.centroid.0, f.centroid.1));
    let (dist_prev, dur_prev) = previous.map_or((0.0, 0.0), |p| {
        let anchor = on_image.first().map_or_else(
            || (samples[first_visit.first].x, samples[first_visit.first].y),
            |f| f.centroid,
        );
        (distance(p.centroid, anchor), p.duration)
    });

    EyeFeatureVector::viewed([
        view_time.ln_1p(),
        (view_time - total_fix).max(0.0),
        inside as f64 / raw_count,
        if steps > 0 { travelled / steps as f64 } else { 0.0 },
        coverage,
        coverage / raw_count,
        pupil,
        n_jumps1 as f64,
        n_jumps2 as f64,
        num_fix as f64,
        if num_fix > 0 { total_fix / num_fix as f64 } else { 0.0 },
        total_fix,
        if view_time > 0.0 { (total_fix / view_time).min(1.0) } else { 0.0 },
        n_jumps_fix as f64,
        max_angle,
        first_fix_len,
        first_fix_num as f64,
        dist_prev,
        dur_prev,
    ])
}

/// Runs fixation detection, cell assignment and feature computation for a
/// whole collage. Every cell gets an entry.
pub fn collage_eye_features(
    stream: &[GazeSample],
    layout: &CollageLayout,
    params: FixationParams,
) -> BTreeMap<String, EyeFeatureVector> {
    let assignment = assign_to_images(stream, layout);
    let fixations = detect_fixations(&assignment.samples, params);
    layout
        .cells
        .iter()
        .map(|cell| {
            let viewing = &assignment.per_image[&cell.image];
            let features = compute_eye_features(&assignment.samples, viewing, &cell.rect, &fixations);
            (cell.image.clone(), features)
        })
        .collect()
}
