use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_features, FeatureSequence, Segment};
use crate::error::{LocoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Feature file, relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub utterance_label: u8,
    pub gt_segments: Vec<Segment>,
    #[serde(rename = "T")]
    pub n_frames: usize,
    #[serde(rename = "D")]
    pub dim: usize,
    pub fps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
    /// Directory relative entry paths resolve against; not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(split: Split, root: impl Into<PathBuf>) -> Self {
        DatasetManifest {
            split,
            entries: Vec::new(),
            root: root.into(),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| LocoError::io(path, e))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.check_ids()?;
        Ok(manifest)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| LocoError::io(path, e))
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.root.join(&entry.path)
        }
    }

    pub fn check_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for entry in &self.entries {
            if !seen.insert(entry.id.as_str()) {
                return Err(LocoError::InvalidInput(format!(
                    "duplicate id {} in manifest",
                    entry.id
                )));
            }
        }
        Ok(())
    }

    /// Loads every referenced file, checking it against its entry.
    pub fn load_all(&self) -> Result<Vec<FeatureSequence>> {
        self.check_ids()?;
        self.entries
            .iter()
            .map(|entry| {
                let mut seq = load_features(self.resolve(entry))?;
                if seq.n_frames() != entry.n_frames || seq.dim() != entry.dim {
                    return Err(LocoError::ShapeMismatch(format!(
                        "{}: manifest says {}x{}, file holds {}x{}",
                        entry.id,
                        entry.n_frames,
                        entry.dim,
                        seq.n_frames(),
                        seq.dim()
                    )));
                }
                seq.id = entry.id.clone();
                Ok(seq)
            })
            .collect()
    }
}
