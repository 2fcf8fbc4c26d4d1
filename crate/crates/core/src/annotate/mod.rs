//! Auto-annotation: detect, filter, prompt the segmenter, convert masks to
//! polygon labels.

mod adapter;
mod convert;
mod pipeline;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formats::FormatError;

pub use adapter::{
    Adapter, AdapterError, AdapterOp, AdapterRequest, AdapterResponse, FileAdapter, ProcessAdapter,
};
pub use convert::{clip_to_box, filter_detections, mask_to_annotation, simplify_ring};
pub use pipeline::{run_pipeline, Adapters, ImageFailure, RunOutput, RunSummary};

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.3;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
/// Slack around a prompt box inside which a returned mask is left untouched.
pub const PROMPT_MARGIN_PX: f64 = 2.0;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("mask has no foreground pixels")]
    NoForeground,
    #[error("no images found in {}", .0.display())]
    NoImages(PathBuf),
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
}

/// Per-image stage durations in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingRecord {
    pub preprocess_ms: f64,
    pub inference_ms: f64,
    pub postprocess_ms: f64,
}

impl TimingRecord {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("preprocess_ms", self.preprocess_ms),
            ("inference_ms", self.inference_ms),
            ("postprocess_ms", self.postprocess_ms),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} = {v} is not a non-negative duration"));
            }
        }
        Ok(())
    }

    pub fn total_ms(&self) -> f64 {
        self.preprocess_ms + self.inference_ms + self.postprocess_ms
    }

    pub fn add(&self, o: &TimingRecord) -> TimingRecord {
        TimingRecord {
            preprocess_ms: self.preprocess_ms + o.preprocess_ms,
            inference_ms: self.inference_ms + o.inference_ms,
            postprocess_ms: self.postprocess_ms + o.postprocess_ms,
        }
    }

    /// Stage-wise mean; `None` for an empty input.
    pub fn mean<'a>(records: impl IntoIterator<Item = &'a TimingRecord>) -> Option<TimingRecord> {
        let (sum, n) = records
            .into_iter()
            .fold((TimingRecord::default(), 0usize), |(s, n), r| (s.add(r), n + 1));
        (n > 0).then(|| TimingRecord {
            preprocess_ms: sum.preprocess_ms / n as f64,
            inference_ms: sum.inference_ms / n as f64,
            postprocess_ms: sum.postprocess_ms / n as f64,
        })
    }
}

/// Where a timing record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingSource {
    Adapter,
    WallClock,
    /// Aggregate over images with different sources.
    Mixed,
}

impl TimingSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            TimingSource::Adapter => "adapter",
            TimingSource::WallClock => "wall_clock",
            TimingSource::Mixed => "mixed",
        }
    }

    pub fn combine(sources: impl IntoIterator<Item = TimingSource>) -> Option<TimingSource> {
        sources.into_iter().fold(None, |acc, s| match acc {
            None => Some(s),
            Some(a) if a == s => Some(a),
            Some(_) => Some(TimingSource::Mixed),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTiming {
    pub image_id: String,
    pub timings: TimingRecord,
    pub source: TimingSource,
}

/// Where an adapter lives: a command line speaking the line protocol, or a
/// prediction document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterEndpoint {
    Command(String),
    File(PathBuf),
}

impl AdapterEndpoint {
    pub fn open(&self, timeout: Duration) -> Result<Box<dyn Adapter>, AdapterError> {
        Ok(match self {
            AdapterEndpoint::Command(line) => Box::new(ProcessAdapter::from_command_line(line, timeout)),
            AdapterEndpoint::File(path) => Box::new(FileAdapter::open(path)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub confidence_threshold: f64,
    /// Detector class -> output class. Empty means identity; otherwise
    /// detections of unmapped classes are dropped.
    pub class_map: BTreeMap<u32, u32>,
    pub adapter_detect: Option<AdapterEndpoint>,
    /// Defaults to the detect endpoint.
    pub adapter_segment: Option<AdapterEndpoint>,
    /// Douglas-Peucker tolerance in pixels; 0 disables simplification.
    pub simplify_epsilon: f64,
    pub timeout: Duration,
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            class_map: BTreeMap::new(),
            adapter_detect: None,
            adapter_segment: None,
            simplify_epsilon: 0.0,
            timeout: DEFAULT_TIMEOUT,
            jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPipelineConfig {
    confidence_threshold: Option<f64>,
    #[serde(default)]
    class_map: BTreeMap<String, u32>,
    adapter_detect: Option<AdapterEndpoint>,
    adapter_segment: Option<AdapterEndpoint>,
    simplify_epsilon: Option<f64>,
    timeout_s: Option<f64>,
    jobs: Option<usize>,
}

impl PipelineConfig {
    /// Parse the `[annotate]`-style TOML document:
    ///
    /// ```toml
    /// confidence_threshold = 0.3
    /// simplify_epsilon = 0.0
    /// timeout_s = 120
    /// adapter_detect = { command = "python detect.py" }
    /// adapter_segment = { file = "masks.json" }
    /// [class_map]
    /// 0 = 0
    /// ```
    ///
    /// Relative `file` endpoints resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, AnnotateError> {
        let raw: RawPipelineConfig = toml::from_str(text).map_err(|e| AnnotateError::Config(e.to_string()))?;
        let mut c = PipelineConfig::default();
        if let Some(t) = raw.confidence_threshold {
            c.confidence_threshold = t;
        }
        for (k, v) in raw.class_map {
            let k: u32 = k
                .parse()
                .map_err(|_| AnnotateError::Config(format!("class_map key `{k}` is not a class id")))?;
            c.class_map.insert(k, v);
        }
        let resolve = |e: AdapterEndpoint| match e {
            AdapterEndpoint::File(p) if p.is_relative() => AdapterEndpoint::File(base.join(p)),
            other => other,
        };
        c.adapter_detect = raw.adapter_detect.map(resolve);
        c.adapter_segment = raw.adapter_segment.map(resolve);
        if let Some(e) = raw.simplify_epsilon {
            c.simplify_epsilon = e;
        }
        if let Some(t) = raw.timeout_s {
            if !(t.is_finite() && t > 0.0) {
                return Err(AnnotateError::Config(format!("timeout_s = {t} must be positive")));
            }
            c.timeout = Duration::from_secs_f64(t);
        }
        if let Some(j) = raw.jobs {
            c.jobs = j;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), AnnotateError> {
        let t = self.confidence_threshold;
        if !(0.0..=1.0).contains(&t) {
            return Err(AnnotateError::Config(format!("confidence_threshold {t} outside [0, 1]")));
        }
        let e = self.simplify_epsilon;
        if !(e.is_finite() && e >= 0.0) {
            return Err(AnnotateError::Config(format!("simplify_epsilon {e} must be >= 0")));
        }
        if self.jobs == 0 {
            return Err(AnnotateError::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }

    pub(crate) fn map_class(&self, class_id: u32) -> Option<u32> {
        if self.class_map.is_empty() {
            Some(class_id)
        } else {
            self.class_map.get(&class_id).copied()
        }
    }
}
