//! Detector/segmenter adapters.
//!
//! Process mode speaks line-delimited JSON over the child's stdio: one
//! request object per line in, one response object per line out, responses
//! in request order.
//!
//! ```text
//! -> {"op":"detect","image_id":"a","image_path":"/data/a.png"}
//! <- {"image_id":"a","width":640,"height":640,"detections":[...],"timings":{...}}
//! -> {"op":"segment","image_id":"a","image_path":"/data/a.png","boxes":[{"cx":..,"cy":..,"w":..,"h":..}]}
//! <- {"image_id":"a","masks":[{"rle":[...]}]}
//! ```
//!
//! File mode answers from a prediction document.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TimingRecord;
use crate::formats::{read_predictions, BoxRecord, DetectionRecord, FormatError, MaskRecord, PredictionSet};
use crate::geometry::{box_iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterOp {
    Detect,
    Segment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterRequest {
    pub op: AdapterOp,
    pub image_id: String,
    pub image_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<BoxRecord>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdapterResponse {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<Vec<DetectionRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<Vec<MaskRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<TimingRecord>,
}

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("image `{image_id}`: adapter timed out after {after:?}")]
    Timeout { image_id: String, after: Duration },
    #[error("image `{image_id}`: protocol error: {message}")]
    Protocol { image_id: String, message: String },
    #[error("image `{image_id}`: not present in prediction file")]
    UnknownImage { image_id: String },
    #[error("cannot start adapter `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image `{image_id}`: adapter i/o: {source}")]
    Io {
        image_id: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
}

fn protocol(image_id: &str, message: impl Into<String>) -> AdapterError {
    AdapterError::Protocol {
        image_id: image_id.to_string(),
        message: message.into(),
    }
}

/// One request in, one response out. Implementations are used behind a lock,
/// so at most one request is in flight per adapter.
pub trait Adapter: Send {
    fn call(&mut self, request: &AdapterRequest) -> Result<AdapterResponse, AdapterError>;
}

struct Running {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

/// Child process speaking the line protocol. The child is started lazily and
/// restarted after a timeout or an unexpected exit.
pub struct ProcessAdapter {
    command: Vec<String>,
    timeout: Duration,
    running: Option<Running>,
}

impl ProcessAdapter {
    pub fn new(command: Vec<String>, timeout: Duration) -> Self {
        assert!(!command.is_empty(), "adapter command must not be empty");
        Self {
            command,
            timeout,
            running: None,
        }
    }

    /// Split a shell-style command line on whitespace.
    pub fn from_command_line(line: &str, timeout: Duration) -> Self {
        Self::new(line.split_whitespace().map(str::to_string).collect(), timeout)
    }

    fn spawn(&self) -> Result<Running, AdapterError> {
        let spawn_err = |source| AdapterError::Spawn {
            command: self.command.join(" "),
            source,
        };
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(spawn_err)?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        if tx.send(Ok(line)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        Ok(Running {
            child,
            stdin,
            lines: rx,
        })
    }

    fn reset(&mut self) {
        if let Some(mut r) = self.running.take() {
            let _ = r.child.kill();
            let _ = r.child.wait();
        }
    }
}

impl Drop for ProcessAdapter {
    fn drop(&mut self) {
        self.reset();
    }
}

impl Adapter for ProcessAdapter {
    fn call(&mut self, request: &AdapterRequest) -> Result<AdapterResponse, AdapterError> {
        if self.running.is_none() {
            self.running = Some(self.spawn()?);
        }
        let id = request.image_id.as_str();
        let io_err = |source| AdapterError::Io {
            image_id: id.to_string(),
            source,
        };
        let running = self.running.as_mut().expect("spawned above");
        let mut line = serde_json::to_string(request).expect("requests serialize");
        line.push('\n');
        if let Err(e) = running.stdin.write_all(line.as_bytes()).and_then(|_| running.stdin.flush()) {
            self.reset();
            return Err(io_err(e));
        }
        let reply = match running.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => {
                self.reset();
                return Err(io_err(e));
            }
            Err(RecvTimeoutError::Timeout) => {
                self.reset();
                return Err(AdapterError::Timeout {
                    image_id: id.to_string(),
                    after: self.timeout,
                });
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.reset();
                return Err(protocol(id, "adapter closed its output"));
            }
        };
        let response: AdapterResponse = serde_json::from_str(reply.trim_end())
            .map_err(|e| protocol(id, format!("malformed response: {e}")))?;
        if response.image_id != request.image_id {
            return Err(protocol(
                id,
                format!("response is for `{}`", response.image_id),
            ));
        }
        Ok(response)
    }
}

/// Answers from precomputed predictions, looked up by image id.
///
/// `segment` requests are served by pairing each prompt box with the unused
/// stored detection of highest box IoU (an exact copy of a stored box always
/// wins) and returning that detection's mask.
pub struct FileAdapter {
    sets: HashMap<String, PredictionSet>,
}

impl FileAdapter {
    pub fn new(sets: Vec<PredictionSet>) -> Self {
        Self {
            sets: sets.into_iter().map(|s| (s.image_id.clone(), s)).collect(),
        }
    }

    pub fn open(path: &Path) -> Result<Self, AdapterError> {
        Ok(Self::new(read_predictions(path)?))
    }

    fn segment(&self, set: &PredictionSet, boxes: &[BoxRecord]) -> Result<Vec<MaskRecord>, AdapterError> {
        let id = set.image_id.as_str();
        let masks = set
            .masks
            .as_ref()
            .ok_or_else(|| protocol(id, "prediction file has no masks for this image"))?;
        let mut used = vec![false; set.detections.len()];
        boxes
            .iter()
            .map(|b| {
                let prompt = BBox::from(*b);
                let best = set
                    .detections
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !used[*i])
                    .map(|(i, d)| (i, box_iou(&prompt, &d.bbox)))
                    .filter(|(_, iou)| *iou > 0.0)
                    .fold(None, |acc: Option<(usize, f64)>, (i, iou)| match acc {
                        Some((_, best)) if best >= iou => acc,
                        _ => Some((i, iou)),
                    });
                let (i, _) = best.ok_or_else(|| protocol(id, "prompt box overlaps no stored detection"))?;
                used[i] = true;
                Ok(MaskRecord::from(&masks[i]))
            })
            .collect()
    }
}

impl Adapter for FileAdapter {
    fn call(&mut self, request: &AdapterRequest) -> Result<AdapterResponse, AdapterError> {
        let set = self.sets.get(&request.image_id).ok_or_else(|| AdapterError::UnknownImage {
            image_id: request.image_id.clone(),
        })?;
        let mut response = AdapterResponse {
            image_id: set.image_id.clone(),
            width: Some(set.image_size.width),
            height: Some(set.image_size.height),
            timings: set.timings,
            ..Default::default()
        };
        match request.op {
            AdapterOp::Detect => {
                response.detections = Some(set.detections.iter().map(DetectionRecord::from).collect());
            }
            AdapterOp::Segment => {
                let boxes = request.boxes.as_deref().unwrap_or_default();
                response.masks = Some(self.segment(set, boxes)?);
            }
        }
        Ok(response)
    }
}
