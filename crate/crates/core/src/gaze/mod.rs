//! Gaze streams: fixation detection, per-image assignment and eye-movement
//! features.

mod features;
mod fixation;
mod layout;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use features::{
    collage_eye_features, compute_eye_features, EyeFeatureVector, EYE_FEATURES, EYE_FEATURE_NAMES,
    LONG_BREAK_MS, SHORT_BREAK_MS,
};
pub use fixation::{
    detect_fixations, valid_samples, Fixation, FixationParams, DEFAULT_DISPERSION_PX,
    DEFAULT_MIN_DURATION_MS,
};
pub use layout::{
    assign_to_images, Cell, CollageLayout, ImageViewing, Rect, StreamAssignment, Visit,
    DEFAULT_SCREEN, GRID_COLUMNS, GRID_ROWS,
};

/// Nominal tracker sampling interval (50 Hz).
pub const SAMPLE_INTERVAL_MS: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    /// Milliseconds since collage onset.
    pub t: f64,
    pub x: f64,
    pub y: f64,
    /// Pupil diameter in mm; 0 when the device reports none.
    #[serde(default)]
    pub pupil: f64,
    #[serde(default = "default_valid")]
    pub valid: bool,
}

fn default_valid() -> bool {
    true
}

impl GazeSample {
    pub fn new(t: f64, x: f64, y: f64) -> Self {
        GazeSample {
            t,
            x,
            y,
            pupil: 0.0,
            valid: true,
        }
    }
}

/// Reads a gaze log: one `t_ms<TAB>x<TAB>y<TAB>pupil<TAB>valid(0|1)` per line.
pub fn read_gaze_log(reader: impl BufRead) -> Result<Vec<GazeSample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| Error::Parse { line: i + 1, reason };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 fields, got {}", fields.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(e.to_string()));
        let valid = match fields[4].trim() {
            "1" => true,
            "0" => false,
            other => return Err(bad(format!("valid flag must be 0 or 1, got `{other}`"))),
        };
        let sample = GazeSample {
            t: num(fields[0])?,
            x: num(fields[1])?,
            y: num(fields[2])?,
            pupil: num(fields[3])?,
            valid,
        };
        if out.last().is_some_and(|p: &GazeSample| sample.t < p.t) {
            return Err(bad("timestamps must be non-decreasing".into()));
        }
        out.push(sample);
    }
    Ok(out)
}

pub fn write_gaze_log(mut writer: impl Write, samples: &[GazeSample]) -> std::io::Result<()> {
    for s in samples {
        writeln!(writer, "{}\t{}\t{}\t{}\t{}", s.t, s.x, s.y, s.pupil, u8::from(s.valid))?;
    }
    Ok(())
}
