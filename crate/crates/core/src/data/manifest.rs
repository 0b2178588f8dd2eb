//! The 105-image dataset layout and its on-disk manifest.
//!
//! Composition (fixed for every seed):
//!
//! | group                 | count | label        | tint              | stage | darkness        |
//! |-----------------------|------:|--------------|-------------------|-------|-----------------|
//! | original-clean-dark   |    14 | clean        | none              | 0     | 0.85 - 1.00     |
//! | original-clean        |    14 | clean        | none              | 0     | 0.00 - 0.15     |
//! | original-clean-tinted |     7 | clean        | one per color     | 0     | 0.00 - 0.15     |
//! | contaminated-plain    |    28 | contaminated | none              | 1-4 (7 each) | 0.00 - 0.15 |
//! | contaminated-tinted   |    28 | contaminated | one per color per stage | 1-4 (7 each) | 0.00 - 0.15 |
//! | extra-clean           |    14 | clean        | none              | 0     | evenly 0 to 1   |
//!
//! 49 clean and 56 contaminated in total, 14 per contamination stage.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{decode_and_resize, encode_png, generate_sample, DataError, ImageSample, SampleParams, Source, Tint, IMAGE_SIZE};
use crate::label::Label;
use crate::rng::SeededRng;

pub const MANIFEST_SCHEMA: &str = "aquasight.dataset-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Group {
    OriginalCleanDark,
    OriginalClean,
    OriginalCleanTinted,
    ContaminatedPlain,
    ContaminatedTinted,
    ExtraClean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub label: Label,
    pub group: Group,
    pub tint: Tint,
    pub stage: u8,
    pub darkness: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub clean: usize,
    pub contaminated: usize,
    pub total: usize,
}

impl ClassCounts {
    pub fn of<'a>(labels: impl IntoIterator<Item = &'a Label>) -> Self {
        let (mut clean, mut contaminated) = (0, 0);
        for l in labels {
            match l {
                Label::Clean => clean += 1,
                Label::Contaminated => contaminated += 1,
            }
        }
        Self {
            clean,
            contaminated,
            total: clean + contaminated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: String,
    pub seed: u64,
    /// `[height, width]` of every image.
    pub image_size: [usize; 2],
    pub counts: ClassCounts,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let m: Self = serde_json::from_str(text).map_err(|e| DataError::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    /// Checks schema, counts and the stage/label correspondence.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.schema != MANIFEST_SCHEMA {
            return Err(DataError::Manifest(format!("unsupported schema {:?}", self.schema)));
        }
        let counts = ClassCounts::of(self.entries.iter().map(|e| &e.label));
        if counts != self.counts {
            return Err(DataError::Manifest(format!(
                "counts {:?} do not match entries {:?}",
                self.counts, counts
            )));
        }
        for e in &self.entries {
            if (e.stage == 0) != (e.label == Label::Clean) {
                return Err(DataError::Manifest(format!("{}: stage {} contradicts label {}", e.file, e.stage, e.label)));
            }
        }
        Ok(())
    }
}

fn plan(seed: u64) -> Vec<(Group, SampleParams)> {
    let mut rng = SeededRng::derive(seed, 0xDA7A);
    let mut light = |lo: f64, hi: f64| (rng.range(lo, hi) * 1000.0).round() / 1000.0;
    let mut out = Vec::with_capacity(105);
    let mut push = |group, tint, stage, darkness| {
        out.push((
            group,
            SampleParams {
                tint,
                stage,
                darkness,
                seed: 0,
            },
        ))
    };
    for _ in 0..14 {
        push(Group::OriginalCleanDark, Tint::None, 0, light(0.85, 1.0));
    }
    for _ in 0..14 {
        push(Group::OriginalClean, Tint::None, 0, light(0.0, 0.15));
    }
    for tint in Tint::COLORS {
        push(Group::OriginalCleanTinted, tint, 0, light(0.0, 0.15));
    }
    for stage in 1..=4 {
        for _ in 0..7 {
            push(Group::ContaminatedPlain, Tint::None, stage, light(0.0, 0.15));
        }
    }
    for stage in 1..=4 {
        for tint in Tint::COLORS {
            push(Group::ContaminatedTinted, tint, stage, light(0.0, 0.15));
        }
    }
    for i in 0..14 {
        push(Group::ExtraClean, Tint::None, 0, (i as f64 / 13.0 * 1000.0).round() / 1000.0);
    }
    for (i, (_, p)) in out.iter_mut().enumerate() {
        p.seed = SeededRng::derive(seed, i as u64).next_u64();
    }
    out
}

/// Renders the full 105-image dataset for `seed`.
pub fn generate_dataset(seed: u64) -> Result<(DatasetManifest, Vec<ImageSample>), DataError> {
    let mut entries = Vec::with_capacity(105);
    let mut samples = Vec::with_capacity(105);
    for (i, (group, params)) in plan(seed).into_iter().enumerate() {
        let sample = generate_sample(params)?;
        entries.push(ManifestEntry {
            file: format!("water_{i:03}.png"),
            label: sample.label,
            group,
            tint: params.tint,
            stage: params.stage,
            darkness: params.darkness,
            seed: params.seed,
        });
        samples.push(sample);
    }
    let manifest = DatasetManifest {
        schema: MANIFEST_SCHEMA.to_string(),
        seed,
        image_size: [IMAGE_SIZE, IMAGE_SIZE],
        counts: ClassCounts::of(entries.iter().map(|e| &e.label)),
        entries,
    };
    Ok((manifest, samples))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the PNGs and `manifest.json` for `seed` into `dir`, creating it.
pub fn write_dataset(dir: &Path, seed: u64) -> Result<DatasetManifest, DataError> {
    let (manifest, samples) = generate_dataset(seed)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (entry, sample) in manifest.entries.iter().zip(&samples) {
        let path = dir.join(&entry.file);
        fs::write(&path, encode_png(&sample.pixels)?).map_err(io_err(&path))?;
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()).map_err(io_err(&path))?;
    Ok(manifest)
}

/// Reads `manifest.json` from `dir` and decodes every referenced image.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<ImageSample>), DataError> {
    let path = dir.join(MANIFEST_FILE);
    let manifest = DatasetManifest::from_json(&fs::read_to_string(&path).map_err(io_err(&path))?)?;
    let samples = manifest
        .entries
        .iter()
        .map(|e| {
            let path = dir.join(&e.file);
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            Ok(ImageSample {
                pixels: decode_and_resize(&bytes)?,
                label: e.label,
                meta: super::SampleMeta {
                    tint: e.tint,
                    stage: e.stage,
                    darkness: e.darkness,
                    source: Source::File(path),
                },
            })
        })
        .collect::<Result<_, DataError>>()?;
    Ok((manifest, samples))
}
