use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::BufRead;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{extract_features, Corpus, FeatureSpec, ImageRecord, Provenance};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "features.bin";
pub const LABELS_FILE: &str = "labels.json";
pub const FEATURE_TABLE_FILE: &str = "features.tsv";

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "gif"];

#[derive(Serialize, Deserialize)]
struct BlobRange {
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct ManifestImage {
    id: String,
    source: String,
    labels: BTreeSet<String>,
    features: BTreeMap<String, BlobRange>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    name: String,
    specs: Vec<FeatureSpec>,
    blob: String,
    images: Vec<ManifestImage>,
}

pub(super) fn encode(corpus: &Corpus) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut blob = Vec::new();
    let mut offset = 0;
    let mut images = Vec::with_capacity(corpus.len());
    for img in corpus.images() {
        let mut features = BTreeMap::new();
        for (name, v) in &img.features {
            for x in v {
                blob.extend_from_slice(&x.to_le_bytes());
            }
            features.insert(name.clone(), BlobRange { offset, len: v.len() });
            offset += v.len();
        }
        images.push(ManifestImage {
            id: img.id.clone(),
            source: img.source.clone(),
            labels: img.labels.clone(),
            features,
        });
    }
    let manifest = Manifest {
        name: corpus.name().to_owned(),
        specs: corpus.specs().to_vec(),
        blob: BLOB_FILE.to_owned(),
        images,
    };
    Ok((serde_json::to_vec_pretty(&manifest)?, blob))
}

pub(super) fn save(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (manifest, blob) = encode(corpus)?;
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    let bpath = dir.join(BLOB_FILE);
    fs::write(&bpath, blob).map_err(|e| Error::io(&bpath, e))?;
    Ok(())
}

pub(super) fn load(dir: &Path) -> Result<Corpus> {
    let mpath = dir.join(MANIFEST_FILE);
    let raw = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_slice(&raw)?;
    let bpath = dir.join(&manifest.blob);
    let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    if blob.len() % 8 != 0 {
        return Err(Error::Parse {
            line: 0,
            reason: format!("blob length {} is not a multiple of 8", blob.len()),
        });
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();

    let mut images = Vec::with_capacity(manifest.images.len());
    for img in manifest.images {
        let mut record = ImageRecord::new(img.id, img.source);
        record.labels = img.labels;
        for (name, range) in img.features {
            let slice = values.get(range.offset..range.offset + range.len).ok_or_else(|| {
                Error::Parse {
                    line: 0,
                    reason: format!("feature `{name}` of `{}` is out of blob bounds", record.id),
                }
            })?;
            record.features.insert(name, slice.to_vec());
        }
        images.push(record);
    }
    Corpus::new(manifest.name, manifest.specs, images)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestWarning {
    pub path: String,
    pub reason: String,
}

#[derive(Debug)]
pub struct IngestReport {
    pub corpus: Corpus,
    pub skipped: Vec<IngestWarning>,
    pub import: Option<ImportReport>,
}

/// Reads every image in `dir` (non-recursive), computes the computed-provenance
/// features, attaches labels from `labels.json` (`{"id": ["label", ...]}`) and
/// imported features from `features.tsv` when those files exist.
pub fn ingest_directory(dir: &Path, specs: &[FeatureSpec]) -> Result<IngestReport> {
    for spec in specs {
        if spec.provenance == Provenance::Computed
            && !super::COMPUTED_FEATURES.iter().any(|(n, d)| *n == spec.name && *d == spec.dim)
        {
            return Err(Error::UnknownFeature(spec.name.clone()));
        }
    }

    let labels: BTreeMap<String, BTreeSet<String>> = {
        let path = dir.join(LABELS_FILE);
        match fs::read(&path) {
            Ok(raw) => serde_json::from_slice(&raw)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(Error::io(path, e)),
        }
    };

    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();

    let mut skipped = Vec::new();
    let mut images = Vec::new();
    let mut ids = BTreeSet::new();
    for path in files {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_owned();
        let display = path.display().to_string();
        if !ids.insert(id.clone()) {
            warn!("skipping {display}: duplicate id `{id}`");
            skipped.push(IngestWarning {
                path: display,
                reason: format!("duplicate id `{id}`"),
            });
            continue;
        }
        let raster = match image::open(&path) {
            Ok(img) => img.to_rgb8(),
            Err(e) => {
                warn!("skipping {display}: {e}");
                skipped.push(IngestWarning {
                    path: display,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let computed = match extract_features(&raster) {
            Ok(f) => f,
            Err(e) => {
                warn!("skipping {display}: {e}");
                skipped.push(IngestWarning {
                    path: display,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let mut record = ImageRecord::new(id.clone(), display);
        record.labels = labels.get(&id).cloned().unwrap_or_default();
        for spec in specs.iter().filter(|s| s.provenance == Provenance::Computed) {
            record
                .features
                .insert(spec.name.clone(), computed[&spec.name].clone());
        }
        images.push(record);
    }

    let name = dir
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("corpus")
        .to_owned();
    let mut corpus = Corpus::new(name, specs.to_vec(), images)?;

    let table = dir.join(FEATURE_TABLE_FILE);
    let import = if table.is_file() {
        let file = fs::File::open(&table).map_err(|e| Error::io(&table, e))?;
        Some(import_features(&mut corpus, std::io::BufReader::new(file))?)
    } else {
        None
    };

    Ok(IngestReport {
        corpus,
        skipped,
        import,
    })
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct ImportReport {
    pub attached: usize,
    /// `(line, reason)` for rows naming an unknown image.
    pub rejected: Vec<(usize, String)>,
    pub warnings: Vec<String>,
}

/// Attaches vectors from a feature table (`id<TAB>feature<TAB>v1,v2,...`).
///
/// Rows naming an unknown image are rejected and reported; a dimension
/// mismatch aborts the import. Repeated `(id, feature)` rows overwrite
/// earlier ones with a warning.
pub fn import_features(corpus: &mut Corpus, reader: impl BufRead) -> Result<ImportReport> {
    let mut report = ImportReport::default();
    let mut pending: BTreeMap<(usize, String), (usize, Vec<f64>)> = BTreeMap::new();

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (Some(id), Some(feature), Some(values)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Parse {
                line: lineno,
                reason: "expected `id<TAB>feature<TAB>values`".into(),
            });
        };
        let Some(pos) = corpus.position(id) else {
            report.rejected.push((lineno, format!("unknown image id `{id}`")));
            continue;
        };
        let spec = corpus
            .spec(feature)
            .ok_or_else(|| Error::UnknownFeature(feature.to_owned()))?;
        let vector = values
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: lineno,
                reason: e.to_string(),
            })?;
        if vector.len() != spec.dim {
            return Err(Error::DimensionMismatch {
                image: id.to_owned(),
                feature: feature.to_owned(),
                expected: spec.dim,
                actual: vector.len(),
                row: Some(lineno),
            });
        }
        if let Some((prev, _)) = pending.insert((pos, feature.to_owned()), (lineno, vector)) {
            let msg = format!("line {lineno} overrides line {prev} for ({id}, {feature})");
            warn!("{msg}");
            report.warnings.push(msg);
        }
    }

    let mut imported = BTreeSet::new();
    for ((pos, feature), (_, vector)) in pending {
        corpus.images_mut()[pos].features.insert(feature.clone(), vector);
        imported.insert(feature);
        report.attached += 1;
    }
    for spec in corpus.specs_mut() {
        if imported.contains(&spec.name) {
            spec.provenance = Provenance::Imported;
        }
    }
    Ok(report)
}
