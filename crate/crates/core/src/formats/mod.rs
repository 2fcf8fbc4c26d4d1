//! Readers and writers for everything that touches disk or the wire.

mod label;
mod manifest;
mod predictions;
mod report;
mod rle;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use label::{
    format_label_line, label_path, parse_label_file, parse_label_line, read_label_dir,
    read_label_file, save_label_file, write_label_file, InstanceAnnotation, LabelFile,
    COORD_DIGITS, LABEL_EXTENSION,
};
pub use manifest::{DatasetManifest, IMAGE_EXTENSIONS};
pub use predictions::{
    detections_from_records, masks_from_records, parse_predictions, read_predictions,
    render_predictions, write_predictions, BoxRecord, DetectionRecord, MaskRecord, PredictedMask,
    PredictionSet,
};
pub use report::{
    aggregate_fields, write_pr_curves, write_report, write_timings, ReportFormat,
};
pub use rle::{rle_decode, rle_encode, RleMask};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("malformed label line: {reason}")]
    MalformedLine { reason: String },
    #[error("value {value} outside [0, 1]")]
    OutOfRange { value: f64 },
    #[error("cannot parse token `{token}`")]
    Parse { token: String },
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<FormatError>,
    },
    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<FormatError>,
    },
    #[error("RLE counts sum to {sum}, expected {expected}")]
    RleLength { sum: u64, expected: u64 },
    #[error("RLE run {index} has zero length")]
    RleZeroRun { index: usize },
    #[error("image `{image_id}`, field `{field}`: {message}")]
    Schema {
        image_id: String,
        field: String,
        message: String,
    },
    #[error("class id {class_id} out of range for {n_classes} class(es)")]
    UnknownClass { class_id: u32, n_classes: usize },
    #[error("{}: {message}", path.display())]
    Document { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FormatError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn in_file(self, path: &Path) -> Self {
        FormatError::InFile {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }
}
