//! Pose sequence files.
//!
//! ```text
//! version = 1
//! joints = 17
//! dims = 3
//! frames = 120
//! fps = 50.0
//! action = "walk"          # optional
//! topology = "h36m17"
//! ---
//! <frame 0: joints * dims numbers>
//! <frame 1>
//! ...
//! ```
//!
//! The header is TOML. Each payload line holds one frame, joint-major then
//! coordinate, written in Rust's shortest round-trip float format, so a
//! save/load cycle reproduces every value bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use ugcn_core::PoseSequence;

use crate::error::{Error, Result};

pub const SEQUENCE_VERSION: u32 = 1;
const SEPARATOR: &str = "---";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceHeader {
    pub version: u32,
    pub joints: usize,
    pub dims: usize,
    pub frames: usize,
    pub fps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    pub topology: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFile {
    pub header: SequenceHeader,
    pub pose: PoseSequence,
}

impl SequenceFile {
    pub fn new(pose: PoseSequence, fps: f64, action: Option<String>, topology: &str) -> Self {
        Self {
            header: SequenceHeader {
                version: SEQUENCE_VERSION,
                joints: pose.joints(),
                dims: pose.dims(),
                frames: pose.frames(),
                fps,
                action,
                topology: topology.to_string(),
            },
            pose,
        }
    }
}

pub fn format_sequence(file: &SequenceFile) -> String {
    let h = &file.header;
    let mut out = toml::to_string(h).expect("header is serializable");
    out.push_str(SEPARATOR);
    out.push('\n');
    let width = h.joints * h.dims;
    for frame in file.pose.data().chunks(width.max(1)) {
        for (i, v) in frame.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            write!(out, "{v:?}").expect("writing to a string");
        }
        out.push('\n');
    }
    out
}

/// Parses the text of a sequence file; `origin` is used in error messages.
pub fn parse_sequence(text: &str, origin: &Path) -> Result<SequenceFile> {
    let (head, body) = match text.split_once(&format!("\n{SEPARATOR}\n")) {
        Some(parts) => parts,
        None => match text.strip_suffix(&format!("\n{SEPARATOR}")) {
            Some(head) => (head, ""),
            None => return Err(Error::parse(origin, "missing `---` line after the header")),
        },
    };
    let probe: toml::Table = head.parse().map_err(|e| Error::parse(origin, format!("header: {e}")))?;
    if let Some(v) = probe.get("version").and_then(toml::Value::as_integer) {
        if v != i64::from(SEQUENCE_VERSION) {
            return Err(Error::VersionMismatch {
                path: origin.to_path_buf(),
                found: u32::try_from(v).unwrap_or(u32::MAX),
                expected: SEQUENCE_VERSION,
            });
        }
    }
    let header: SequenceHeader = toml::from_str(head).map_err(|e| Error::parse(origin, format!("header: {e}")))?;
    if !(header.dims == 2 || header.dims == 3) {
        return Err(Error::SchemaMismatch {
            path: origin.to_path_buf(),
            msg: format!("dims must be 2 or 3, got {}", header.dims),
        });
    }
    if header.joints == 0 {
        return Err(Error::SchemaMismatch {
            path: origin.to_path_buf(),
            msg: "joints must be positive".into(),
        });
    }
    let width = header.joints * header.dims;
    let mut data = Vec::with_capacity(header.frames * width);
    let mut lines = body.lines().filter(|l| !l.trim().is_empty());
    for frame in 0..header.frames {
        let line = lines
            .next()
            .ok_or_else(|| Error::parse(origin, format!("payload ends after {frame} of {} frames", header.frames)))?;
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(origin, format!("frame {frame}: `{tok}` is not a number")))?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    path: origin.to_path_buf(),
                    frame,
                });
            }
            data.push(v);
        }
        if data.len() - before != width {
            return Err(Error::parse(
                origin,
                format!("frame {frame}: expected {width} values, found {}", data.len() - before),
            ));
        }
    }
    if lines.next().is_some() {
        return Err(Error::parse(origin, format!("more than the declared {} frames", header.frames)));
    }
    let pose = PoseSequence::new(header.frames, header.joints, header.dims, data)?;
    Ok(SequenceFile { header, pose })
}

pub fn load_sequence(path: &Path) -> Result<SequenceFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sequence(&text, path)
}

pub fn save_sequence(path: &Path, file: &SequenceFile) -> Result<()> {
    if let Some(frame) = (0..file.pose.frames()).find(|&t| file.pose.frame(t).iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFiniteValue {
            path: path.to_path_buf(),
            frame,
        });
    }
    std::fs::write(path, format_sequence(file)).map_err(|e| Error::io(path, e))
}
