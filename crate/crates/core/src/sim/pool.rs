//! Pools of eye-movement feature vectors for simulated gaze feedback,
//! grouped by polarity and by how many relevant images the collage held.

use std::collections::BTreeSet;
use std::io::BufRead;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaze::{collage_eye_features, read_gaze_log, CollageLayout, EyeFeatureVector, FixationParams, DEFAULT_SCREEN, EYE_FEATURES};
use crate::relevance::RelevanceTrainingSet;

pub const BINS: usize = 6;
pub const BIN_NAMES: [&str; BINS] = ["0", "1", "2-3", "4-6", "7-10", "11-15"];

/// Bin index for a collage holding `relevant` relevant images. A count of
/// 10 belongs to "7-10"; counts past 15 fall in the last bin.
pub fn bin_of(relevant: usize) -> usize {
    match relevant {
        0 => 0,
        1 => 1,
        2..=3 => 2,
        4..=6 => 3,
        7..=10 => 4,
        _ => 5,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolProvenance {
    Recorded,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPool {
    pub positive: Vec<Vec<EyeFeatureVector>>,
    pub negative: Vec<Vec<EyeFeatureVector>>,
    pub provenance: PoolProvenance,
}

impl SimPool {
    pub fn empty(provenance: PoolProvenance) -> Self {
        SimPool {
            positive: vec![Vec::new(); BINS],
            negative: vec![Vec::new(); BINS],
            provenance,
        }
    }

    pub fn push(&mut self, relevant: bool, collage_relevant: usize, v: EyeFeatureVector) {
        let group = if relevant { &mut self.positive } else { &mut self.negative };
        group[bin_of(collage_relevant)].push(v);
    }

    pub fn bin(&self, relevant: bool, bin: usize) -> &[EyeFeatureVector] {
        if relevant {
            &self.positive[bin]
        } else {
            &self.negative[bin]
        }
    }

    /// Draws one vector for an image of the given polarity on a collage with
    /// `collage_relevant` relevant images.
    pub fn draw(&self, relevant: bool, collage_relevant: usize, rng: &mut impl Rng) -> Result<EyeFeatureVector> {
        let bin = bin_of(collage_relevant);
        let cell = self.bin(relevant, bin);
        if cell.is_empty() {
            let polarity = if relevant { "positive" } else { "negative" };
            return Err(Error::EmptyBin(format!("{polarity} {}", BIN_NAMES[bin])));
        }
        Ok(cell[rng.random_range(0..cell.len())])
    }

    pub fn check_complete(&self) -> Result<()> {
        for relevant in [true, false] {
            for (bin, name) in BIN_NAMES.iter().enumerate() {
                if self.bin(relevant, bin).is_empty() {
                    let polarity = if relevant { "positive" } else { "negative" };
                    return Err(Error::EmptyBin(format!("{polarity} {name}")));
                }
            }
        }
        Ok(())
    }

    /// Flattens the pool into labelled predictor training rows.
    pub fn training_set(&self) -> RelevanceTrainingSet {
        let mut set = RelevanceTrainingSet::default();
        for (bin, name) in BIN_NAMES.iter().enumerate() {
            for v in &self.positive[bin] {
                set.push(*v, true, *name);
            }
            for v in &self.negative[bin] {
                set.push(*v, false, *name);
            }
        }
        set
    }

    pub fn len(&self) -> usize {
        self.positive.iter().chain(&self.negative).map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Typical magnitude of each eye feature; synthetic draws are
/// `offset + scale * z`.
const FEATURE_SCALE: [(f64, f64); EYE_FEATURES] = [
    (5.5, 1.0),
    (150.0, 60.0),
    (0.6, 0.15),
    (25.0, 8.0),
    (4.0, 1.5),
    (0.25, 0.08),
    (3.5, 0.4),
    (1.0, 0.6),
    (0.2, 0.2),
    (2.0, 0.8),
    (220.0, 50.0),
    (450.0, 150.0),
    (0.6, 0.15),
    (0.5, 0.4),
    (1.5, 0.6),
    (220.0, 60.0),
    (1.5, 0.6),
    (300.0, 100.0),
    (220.0, 60.0),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPoolConfig {
    /// Distance between the class means in standardized units.
    pub separation: f64,
    /// Features whose mean differs between the classes.
    pub informative: Vec<usize>,
    pub per_bin: usize,
    /// Shift of both class means per bin step, in standardized units along
    /// the informative direction. Models gaze behaviour changing with the
    /// number of relevant images on screen.
    pub bin_drift: f64,
}

impl Default for SyntheticPoolConfig {
    fn default() -> Self {
        SyntheticPoolConfig {
            separation: 3.0,
            // numMeasurements, ratio, numFix, totalFixLen, fixPrct
            informative: vec![0, 2, 9, 11, 12],
            per_bin: 200,
            bin_drift: 0.0,
        }
    }
}

impl SyntheticPoolConfig {
    pub fn with_separation(separation: f64) -> Self {
        SyntheticPoolConfig {
            separation,
            ..Default::default()
        }
    }
}

/// Gaussian pool with unit variance per feature; the positive mean sits
/// `separation` away from the negative one along an equal-weight direction
/// over the informative features.
pub fn generate_synthetic_pool(config: &SyntheticPoolConfig, seed: u64) -> Result<SimPool> {
    if !(config.separation >= 0.0 && config.separation.is_finite()) {
        return Err(Error::InvalidConfig(format!("separation {} must be >= 0", config.separation)));
    }
    if config.per_bin == 0 {
        return Err(Error::InvalidConfig("per_bin must be >= 1".into()));
    }
    let informative: BTreeSet<usize> = config.informative.iter().copied().collect();
    if informative.is_empty() || informative.iter().any(|&i| i >= EYE_FEATURES) {
        return Err(Error::InvalidConfig("informative features must be a non-empty subset of 0..19".into()));
    }
    let step = 1.0 / (informative.len() as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = SimPool::empty(PoolProvenance::Synthetic);
    for bin in 0..BINS {
        let base = config.bin_drift * bin as f64;
        let representative = [0, 1, 2, 4, 7, 11][bin];
        for relevant in [true, false] {
            let shift = base + if relevant { config.separation } else { 0.0 };
            for _ in 0..config.per_bin {
                let mut values = [0.0; EYE_FEATURES];
                for (j, v) in values.iter_mut().enumerate() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let mean = if informative.contains(&j) { shift * step } else { 0.0 };
                    let (offset, scale) = FEATURE_SCALE[j];
                    *v = offset + scale * (z + mean);
                }
                pool.push(relevant, representative, EyeFeatureVector::viewed(values));
            }
        }
    }
    Ok(pool)
}

/// Reads a pool from tab-separated rows `polarity  relevant_count  f1 .. f19`
/// with polarity `pos` or `neg`. Lines starting with `#` are skipped.
pub fn read_pool_tsv(reader: impl BufRead) -> Result<SimPool> {
    let mut pool = SimPool::empty(PoolProvenance::Recorded);
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("pool", e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |reason: String| Error::Parse { line: line_no, reason };
        if fields.len() != EYE_FEATURES + 2 {
            return Err(bad(format!("expected {} fields, got {}", EYE_FEATURES + 2, fields.len())));
        }
        let relevant = match fields[0] {
            "pos" => true,
            "neg" => false,
            other => return Err(bad(format!("polarity `{other}` is not pos or neg"))),
        };
        let count: usize = fields[1]
            .parse()
            .map_err(|_| bad(format!("bad relevant count `{}`", fields[1])))?;
        let mut values = [0.0f64; EYE_FEATURES];
        for (v, f) in values.iter_mut().zip(&fields[2..]) {
            *v = f.parse().map_err(|_| bad(format!("bad number `{f}`")))?;
            if !v.is_finite() {
                return Err(Error::NonFinite(line_no));
            }
        }
        pool.push(relevant, count, EyeFeatureVector::viewed(values));
    }
    Ok(pool)
}

#[derive(Debug, Clone, Deserialize)]
struct RecordingMeta {
    collage: Vec<String>,
    relevant: Vec<String>,
}

/// Builds a pool from recorded sessions: every `<name>.gaze` log in `dir`
/// needs a `<name>.json` with the collage ids in layout order and the
/// relevant subset. Only viewed images enter the pool.
pub fn load_recorded_pool(dir: &Path) -> Result<SimPool> {
    let mut logs: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "gaze"))
        .collect();
    logs.sort();
    let mut pool = SimPool::empty(PoolProvenance::Recorded);
    for log in logs {
        let meta_path = log.with_extension("json");
        let meta: RecordingMeta = serde_json::from_str(
            &std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?,
        )?;
        let file = std::fs::File::open(&log).map_err(|e| Error::io(&log, e))?;
        let stream = read_gaze_log(std::io::BufReader::new(file))?;
        let layout = CollageLayout::grid(&meta.collage, DEFAULT_SCREEN);
        let relevant: BTreeSet<&String> = meta.relevant.iter().collect();
        let count = meta.collage.iter().filter(|id| relevant.contains(id)).count();
        for (id, v) in collage_eye_features(&stream, &layout, FixationParams::default()) {
            if v.viewed {
                pool.push(relevant.contains(&id), count, v);
            }
        }
    }
    Ok(pool)
}
