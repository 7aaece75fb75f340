//! Dataset layout on disk and the train/test split manifest.
//!
//! A dataset root holds `images/<stem>.png`, `masks/<stem>.png`, and a
//! `manifest.json` recording each pair, its split tag, the split ratio, and
//! the shuffle seed.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::image_io::{load_mask, load_tile};
use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!(
                "unknown split `{other}`, expected train or test"
            ))),
        }
    }
}

/// One image/mask pair; paths are relative to the dataset root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    pub mask: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub seed: u64,
    pub split_ratio: f64,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Deterministically shuffles the pairs by seed and tags the first
/// `ceil(ratio * n)` as train, the rest as test.
pub fn split_dataset(
    pairs: Vec<(String, String)>,
    ratio: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if pairs.is_empty() {
        return Err(Error::data("cannot split an empty entry list"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config(format!(
            "split ratio must lie in (0,1), got {ratio}"
        )));
    }
    let mut shuffled = pairs;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix(seed, seeds::SPLIT));
    shuffled.shuffle(&mut rng);
    let n = shuffled.len();
    let train_count = ((ratio * n as f64).ceil() as usize).min(n);
    let entries = shuffled
        .into_iter()
        .enumerate()
        .map(|(i, (image, mask))| ManifestEntry {
            image,
            mask,
            split: if i < train_count {
                Split::Train
            } else {
                Split::Test
            },
        })
        .collect();
    Ok(DatasetManifest {
        entries,
        seed,
        split_ratio: ratio,
    })
}

impl DatasetManifest {
    pub fn save(&self, root: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(root.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::data(format!("malformed {}: {e}", path.display())))?;
        Ok(manifest)
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    /// Loads all image/mask pairs of one split into memory.
    pub fn load_split(&self, root: &Path, split: Split) -> Result<Vec<(Tensor, Tensor)>> {
        let mut items = Vec::new();
        for entry in self.entries.iter().filter(|e| e.split == split) {
            let image = load_tile(&root.join(&entry.image))?;
            let mask = load_mask(&root.join(&entry.mask))?;
            if image.shape() != mask.shape() {
                return Err(Error::data(format!(
                    "{} and {} disagree in size",
                    entry.image, entry.mask
                )));
            }
            items.push((image, mask));
        }
        if items.is_empty() {
            return Err(Error::data(format!(
                "dataset at {} has no {:?} items",
                root.display(),
                split
            )));
        }
        Ok(items)
    }
}

/// Standard layout paths for a pair stem.
pub fn pair_paths(stem: &str) -> (String, String) {
    (format!("images/{stem}.png"), format!("masks/{stem}.png"))
}

/// Dataset root must contain images/, masks/, and the manifest.
pub fn dataset_dirs(root: &Path) -> (PathBuf, PathBuf) {
    (root.join("images"), root.join("masks"))
}
