//! Network-facing coordinate scaling and dataset plumbing.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::pose::PoseSequence;

/// Maps pixel and millimetre coordinates to the unit-scale values the
/// network sees, and back.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct Normalizer {
    /// Image point mapped to the origin (usually the principal point).
    pub center: [f64; 2],
    /// Pixels per normalized 2D unit.
    pub scale_2d: f64,
    /// Millimetres per normalized 3D unit.
    pub scale_3d: f64,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self {
            center: [500.0, 500.0],
            scale_2d: 1000.0,
            scale_3d: 1000.0,
        }
    }
}

impl Normalizer {
    pub fn normalize_2d(&self, p: &PoseSequence) -> PoseSequence {
        PoseSequence::from_fn(p.frames(), p.joints(), p.dims(), |t, j, d| {
            (p.point(t, j)[d] - self.center[d.min(1)]) / self.scale_2d
        })
    }

    pub fn denormalize_2d(&self, p: &PoseSequence) -> PoseSequence {
        PoseSequence::from_fn(p.frames(), p.joints(), p.dims(), |t, j, d| {
            p.point(t, j)[d] * self.scale_2d + self.center[d.min(1)]
        })
    }

    pub fn normalize_3d(&self, s: &PoseSequence) -> PoseSequence {
        s.scaled(1.0 / self.scale_3d)
    }

    pub fn denormalize_3d(&self, s: &PoseSequence) -> PoseSequence {
        s.scaled(self.scale_3d)
    }
}

/// A paired 2D input / 3D target sequence of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: PoseSequence,
    pub target: PoseSequence,
    pub action: Option<String>,
}

impl Sample {
    pub fn new(input: PoseSequence, target: PoseSequence, action: Option<String>) -> Result<Self> {
        if input.frames() != target.frames() || input.joints() != target.joints() {
            return Err(crate::error::mismatch(
                "Sample::new",
                &[input.frames(), input.joints()],
                &[target.frames(), target.joints()],
            ));
        }
        if input.dims() != 2 {
            return Err(Error::DimensionError { expected: 2, got: input.dims() });
        }
        if target.dims() != 3 {
            return Err(Error::DimensionError { expected: 3, got: target.dims() });
        }
        Ok(Self { input, target, action })
    }

    pub fn frames(&self) -> usize {
        self.input.frames()
    }

    /// Frames `start..start + len` of both sequences.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        Ok(Self {
            input: self.input.window(start, len)?,
            target: self.target.window(start, len)?,
            action: self.action.clone(),
        })
    }
}

/// Window starts `0, step, 2 step, ..` plus a final window
/// flush with the end of the sequence.
pub fn window_starts(frames: usize, window: usize, step: usize) -> Result<Vec<usize>> {
    if frames < window {
        return Err(Error::TooShort { frames, needed: window });
    }
    if step == 0 || window == 0 {
        return Err(Error::InvalidConfig(alloc::format!("window {window} and step {step} must be positive")));
    }
    let last = frames - window;
    let mut starts: Vec<usize> = (0..=last).step_by(step).collect();
    if starts.last() != Some(&last) {
        starts.push(last);
    }
    Ok(starts)
}

/// Splits every group of `group` consecutive items into `group - held_out`
/// training items followed by `held_out` test items.
pub fn split_groups<T: Clone>(items: &[T], group: usize, held_out: usize) -> Result<(Vec<T>, Vec<T>)> {
    if group == 0 || held_out >= group {
        return Err(Error::InvalidConfig(alloc::format!(
            "cannot hold out {held_out} of every {group} sequences"
        )));
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, item) in items.iter().enumerate() {
        if i % group >= group - held_out {
            test.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    Ok((train, test))
}
