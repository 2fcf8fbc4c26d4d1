//! Dataset manifest (TOML).
//!
//! ```toml
//! images_dir = "images"
//! labels_dir = "labels"
//! predictions = "predictions.json"   # optional
//! class_names = ["apple"]
//! image_size = [640, 640]            # default frame size
//!
//! [image_sizes]                      # optional per-image overrides
//! scene_0003 = [800, 600]
//! ```
//!
//! Relative paths resolve against the manifest's own directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::FormatError;
use crate::geometry::ImageSize;

pub const IMAGE_EXTENSIONS: [&str; 9] = ["png", "jpg", "jpeg", "bmp", "ppm", "pgm", "tif", "tiff", "webp"];

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub images_dir: PathBuf,
    pub labels_dir: PathBuf,
    pub predictions_path: Option<PathBuf>,
    pub class_names: Vec<String>,
    pub default_size: Option<ImageSize>,
    pub sizes: BTreeMap<String, ImageSize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawManifest {
    images_dir: PathBuf,
    labels_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    predictions: Option<PathBuf>,
    class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_size: Option<[u32; 2]>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    image_sizes: BTreeMap<String, [u32; 2]>,
}

fn size_from(path: &Path, pair: [u32; 2]) -> Result<ImageSize, FormatError> {
    ImageSize::new(pair[0], pair[1]).map_err(|e| FormatError::Document {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
        let raw: RawManifest = toml::from_str(&text).map_err(|e| FormatError::Document {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

        let manifest = DatasetManifest {
            images_dir: resolve(&raw.images_dir),
            labels_dir: resolve(&raw.labels_dir),
            predictions_path: raw.predictions.as_deref().map(resolve),
            class_names: raw.class_names,
            default_size: raw.image_size.map(|s| size_from(path, s)).transpose()?,
            sizes: raw
                .image_sizes
                .into_iter()
                .map(|(k, v)| Ok((k, size_from(path, v)?)))
                .collect::<Result<_, FormatError>>()?,
        };
        for dir in [&manifest.images_dir, &manifest.labels_dir] {
            if !dir.is_dir() {
                return Err(FormatError::Document {
                    path: path.to_path_buf(),
                    message: format!("directory {} does not exist", dir.display()),
                });
            }
        }
        Ok(manifest)
    }

    /// Serialize with paths written as given (callers pass paths relative to
    /// where the manifest will live).
    pub fn to_toml(&self) -> String {
        let raw = RawManifest {
            images_dir: self.images_dir.clone(),
            labels_dir: self.labels_dir.clone(),
            predictions: self.predictions_path.clone(),
            class_names: self.class_names.clone(),
            image_size: self.default_size.map(|s| [s.width, s.height]),
            image_sizes: self.sizes.iter().map(|(k, s)| (k.clone(), [s.width, s.height])).collect(),
        };
        toml::to_string(&raw).expect("manifest serializes")
    }

    pub fn size_of(&self, image_id: &str) -> Option<ImageSize> {
        self.sizes.get(image_id).copied().or(self.default_size)
    }

    /// Image files in `images_dir` as sorted `(stem, path)` pairs.
    pub fn images(&self) -> Result<Vec<(String, PathBuf)>, FormatError> {
        let mut out = Vec::new();
        let entries = fs::read_dir(&self.images_dir).map_err(|e| FormatError::io(&self.images_dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| FormatError::io(&self.images_dir, e))?.path();
            let ext = path
                .extension()
                .and_then(|e| e.to_str())
                .map(str::to_ascii_lowercase);
            let is_image = ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str()));
            if path.is_file() && is_image {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    out.push((stem.to_string(), path.clone()));
                }
            }
        }
        out.sort();
        Ok(out)
    }

    /// Check every class id against `class_names`.
    pub fn check_class(&self, class_id: u32) -> Result<(), FormatError> {
        if (class_id as usize) < self.class_names.len() {
            Ok(())
        } else {
            Err(FormatError::UnknownClass {
                class_id,
                n_classes: self.class_names.len(),
            })
        }
    }
}
