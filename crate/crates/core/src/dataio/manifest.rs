use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::CropSpec;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Millimetres per pixel assumed for synthetic phantoms after resizing.
pub const SYNTHETIC_PIXEL_SPACING_MM: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Instrument {
    Aixplorer,
    Esaote,
    Telemed,
    SyntheticA,
    SyntheticB,
}

impl Instrument {
    pub const ALL: [Instrument; 5] = [
        Instrument::Aixplorer,
        Instrument::Esaote,
        Instrument::Telemed,
        Instrument::SyntheticA,
        Instrument::SyntheticB,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Instrument::Aixplorer => "Aixplorer",
            Instrument::Esaote => "Esaote",
            Instrument::Telemed => "Telemed",
            Instrument::SyntheticA => "SyntheticA",
            Instrument::SyntheticB => "SyntheticB",
        }
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Instrument {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Instrument::ALL
            .into_iter()
            .find(|i| i.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidInput(format!("unknown instrument `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Movement {
    MVC,
    PT,
    RUN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Muscle {
    MG,
    LG,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubjectGroup {
    Healthy,
    Impaired,
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub video_id: String,
    pub instrument: Instrument,
    pub movement: Movement,
    pub muscle: Muscle,
    pub subject_group: SubjectGroup,
    /// Directory of `frame_%06d.png` files, relative to the manifest.
    pub frame_dir: String,
    /// Millimetres per pixel in the resized grid.
    pub pixel_spacing_mm: f64,
    pub crop: CropSpec,
    /// Labeling stride over the frame sequence.
    #[serde(default = "default_stride")]
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    /// Label CSV relative to the manifest, when the dataset ships one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    pub entries: Vec<VideoEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<VideoEntry>) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            labels: None,
            entries,
            base_dir: PathBuf::new(),
        }
    }

    pub fn entry(&self, video_id: &str) -> Option<&VideoEntry> {
        self.entries.iter().find(|e| e.video_id == video_id)
    }

    pub fn frame_dir(&self, entry: &VideoEntry) -> PathBuf {
        self.base_dir.join(&entry.frame_dir)
    }

    pub fn labels_path(&self) -> Option<PathBuf> {
        self.labels.as_ref().map(|l| self.base_dir.join(l))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::ManifestParse(format!(
                "unsupported schema_version {} (expected {MANIFEST_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if matches!(&self.labels, Some(l) if l.trim().is_empty()) {
            return Err(Error::ManifestParse("empty labels path".into()));
        }
        let mut seen = HashSet::new();
        for (index, e) in self.entries.iter().enumerate() {
            let fail = |message: String| Error::ManifestEntry { index, message };
            if e.video_id.trim().is_empty() {
                return Err(fail("empty video_id".into()));
            }
            if !seen.insert(e.video_id.as_str()) {
                return Err(fail(format!("duplicate video_id `{}`", e.video_id)));
            }
            if e.frame_dir.trim().is_empty() {
                return Err(fail("empty frame_dir".into()));
            }
            if !(e.pixel_spacing_mm.is_finite() && e.pixel_spacing_mm > 0.0) {
                return Err(fail(format!(
                    "pixel_spacing_mm must be positive, got {}",
                    e.pixel_spacing_mm
                )));
            }
            if e.stride == 0 {
                return Err(fail("stride must be at least 1".into()));
            }
            e.crop.check_ratio().map_err(|err| fail(err.to_string()))?;
        }
        Ok(())
    }
}

pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let manifest: DatasetManifest = serde_json::from_str(text).map_err(|e| Error::ManifestParse(e.to_string()))?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest = parse_manifest(&text)?;
    manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(manifest)
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    manifest.validate()?;
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| Error::ManifestParse(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
