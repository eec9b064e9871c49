use serde::{Deserialize, Serialize};

use super::GazeSample;

pub const DEFAULT_DISPERSION_PX: f64 = 30.0;
pub const DEFAULT_MIN_DURATION_MS: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixationParams {
    pub dispersion_px: f64,
    pub min_duration_ms: f64,
}

impl Default for FixationParams {
    fn default() -> Self {
        FixationParams {
            dispersion_px: DEFAULT_DISPERSION_PX,
            min_duration_ms: DEFAULT_MIN_DURATION_MS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub start: f64,
    pub duration: f64,
    pub centroid: (f64, f64),
    pub samples: usize,
    /// Index range (inclusive) into the valid-sample stream.
    pub first: usize,
    pub last: usize,
}

impl Fixation {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

/// Valid samples only, in stream order.
pub fn valid_samples(stream: &[GazeSample]) -> Vec<GazeSample> {
    stream.iter().filter(|s| s.valid).copied().collect()
}

#[derive(Clone, Copy)]
struct Extent {
    min_x: f64,
    max_x: f64,
    min_y: f64,
    max_y: f64,
}

impl Extent {
    fn of(s: &GazeSample) -> Self {
        Extent {
            min_x: s.x,
            max_x: s.x,
            min_y: s.y,
            max_y: s.y,
        }
    }

    fn with(mut self, s: &GazeSample) -> Self {
        self.min_x = self.min_x.min(s.x);
        self.max_x = self.max_x.max(s.x);
        self.min_y = self.min_y.min(s.y);
        self.max_y = self.max_y.max(s.y);
        self
    }

    fn dispersion(&self) -> f64 {
        (self.max_x - self.min_x) + (self.max_y - self.min_y)
    }
}

/// Dispersion-threshold (I-DT) fixation detection.
///
/// Invalid samples are dropped first; the returned index ranges refer to the
/// remaining valid samples. A window is a fixation when its coordinate
/// ranges sum to at most `dispersion_px` and it spans at least
/// `min_duration_ms`; windows are grown while the dispersion bound holds.
pub fn detect_fixations(stream: &[GazeSample], params: FixationParams) -> Vec<Fixation> {
    let samples = valid_samples(stream);
    let n = samples.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let Some(j) = (i..n).find(|&j| samples[j].t - samples[i].t >= params.min_duration_ms) else {
            break;
        };
        let extent = samples[i + 1..=j]
            .iter()
            .fold(Extent::of(&samples[i]), Extent::with);
        if extent.dispersion() > params.dispersion_px {
            i += 1;
            continue;
        }
        let mut extent = extent;
        let mut end = j;
        while end + 1 < n {
            let grown = extent.with(&samples[end + 1]);
            if grown.dispersion() > params.dispersion_px {
                break;
            }
            extent = grown;
            end += 1;
        }
        let window = &samples[i..=end];
        let count = window.len() as f64;
        let cx = window.iter().map(|s| s.x).sum::<f64>() / count;
        let cy = window.iter().map(|s| s.y).sum::<f64>() / count;
        out.push(Fixation {
            start: samples[i].t,
            duration: samples[end].t - samples[i].t,
            centroid: (cx, cy),
            samples: window.len(),
            first: i,
            last: end,
        });
        i = end + 1;
    }
    out
}
