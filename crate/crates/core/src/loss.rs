//! Pairwise motion encodings, the multiscale motion loss and the position loss.
//!
//! A motion encoding pairs each joint with itself `tau` frames later:
//! `m[t, j] = s[t, j] (op) s[t + tau, j]` for `t` in `0..T - tau`, with the
//! earlier frame on the left. The motion loss sums the distance between the
//! predicted and ground-truth encodings over frames, joints and every
//! interval in the set. All losses are raw sums; callers average over a
//! batch if they want to.
//!
//! The graph functions accept `(T, M, D)` or `(N, T, M, D)` tensors.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{mismatch, Error, Result};
use crate::graph::{cross3, Graph, Var};
use crate::pose::PoseSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum MotionOperator {
    Subtraction,
    InnerProduct,
    CrossProduct,
}

impl MotionOperator {
    /// Encoding width for `dims`-dimensional coordinates.
    pub fn width(self, dims: usize) -> usize {
        match self {
            Self::InnerProduct => 1,
            Self::Subtraction | Self::CrossProduct => dims,
        }
    }

    fn check_dims(self, dims: usize) -> Result<()> {
        if self == Self::CrossProduct && dims != 3 {
            return Err(Error::DimensionError { expected: 3, got: dims });
        }
        Ok(())
    }
}

/// Distance used between encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum MotionNorm {
    #[default]
    L1,
    L2,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct LossConfig {
    pub operator: MotionOperator,
    pub intervals: Vec<usize>,
    pub lambda: f64,
    pub norm: MotionNorm,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            operator: MotionOperator::CrossProduct,
            intervals: vec![8, 12, 16, 24],
            lambda: 1.0,
            norm: MotionNorm::L1,
        }
    }
}

impl LossConfig {
    /// Position loss only.
    pub fn position_only() -> Self {
        Self {
            lambda: 0.0,
            intervals: Vec::new(),
            ..Self::default()
        }
    }

    pub fn derivative() -> Self {
        Self {
            operator: MotionOperator::Subtraction,
            intervals: vec![1],
            lambda: 1.0,
            norm: MotionNorm::L1,
        }
    }

    pub fn validate(&self, frames: usize) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("lambda {} must be finite and >= 0", self.lambda)));
        }
        for &tau in &self.intervals {
            check_interval(tau, frames)?;
        }
        Ok(())
    }
}

fn check_interval(tau: usize, frames: usize) -> Result<()> {
    if tau == 0 || tau >= frames {
        return Err(Error::IntervalTooLarge { tau, frames });
    }
    Ok(())
}

/// Encodings for one interval, laid out `(T - tau, M, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionEncoding {
    pub tau: usize,
    pub frames: usize,
    pub joints: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl MotionEncoding {
    pub fn get(&self, t: usize, j: usize) -> &[f64] {
        let o = (t * self.joints + j) * self.width;
        &self.values[o..o + self.width]
    }
}

/// Plain-value encoding of a single sequence.
pub fn encode_motion(s: &PoseSequence, tau: usize, op: MotionOperator) -> Result<MotionEncoding> {
    check_interval(tau, s.frames())?;
    op.check_dims(s.dims())?;
    let width = op.width(s.dims());
    let frames = s.frames() - tau;
    let mut values = Vec::with_capacity(frames * s.joints() * width);
    for t in 0..frames {
        for j in 0..s.joints() {
            let (a, b) = (s.point(t, j), s.point(t + tau, j));
            match op {
                MotionOperator::Subtraction => values.extend(a.iter().zip(b).map(|(x, y)| x - y)),
                MotionOperator::InnerProduct => values.push(a.iter().zip(b).map(|(x, y)| x * y).sum()),
                MotionOperator::CrossProduct => values.extend(cross3(a, b)),
            }
        }
    }
    Ok(MotionEncoding {
        tau,
        frames,
        joints: s.joints(),
        width,
        values,
    })
}

fn time_axis(g: &Graph, s: Var) -> Result<(usize, usize, usize)> {
    let shape = g.shape(s);
    if shape.len() < 3 {
        return Err(mismatch("motion encoding", shape, &[0, 0, 0]));
    }
    let axis = shape.len() - 3;
    Ok((axis, shape[axis], shape[shape.len() - 1]))
}

/// Differentiable encoding of `s` (`(.., T, M, D)`) at interval `tau`.
pub fn encode_motion_var(g: &mut Graph, s: Var, tau: usize, op: MotionOperator) -> Result<Var> {
    let (axis, frames, dims) = time_axis(g, s)?;
    check_interval(tau, frames)?;
    op.check_dims(dims)?;
    let a = g.slice(s, axis, 0, frames - tau)?;
    let b = g.slice(s, axis, tau, frames - tau)?;
    match op {
        MotionOperator::Subtraction => g.sub(a, b),
        MotionOperator::InnerProduct => {
            let p = g.mul(a, b)?;
            let last = g.shape(p).len() - 1;
            g.sum(p, &[last])
        }
        MotionOperator::CrossProduct => g.cross(a, b),
    }
}

/// `L_m`: distance between encodings summed over intervals, frames and joints.
pub fn motion_loss(g: &mut Graph, pred: Var, gt: Var, cfg: &LossConfig) -> Result<Var> {
    if g.shape(pred) != g.shape(gt) {
        return Err(mismatch("motion_loss", g.shape(pred), g.shape(gt)));
    }
    let (_, frames, _) = time_axis(g, pred)?;
    cfg.validate(frames)?;
    let mut total: Option<Var> = None;
    for &tau in &cfg.intervals {
        let mp = encode_motion_var(g, pred, tau, cfg.operator)?;
        let mg = encode_motion_var(g, gt, tau, cfg.operator)?;
        let d = g.sub(mp, mg)?;
        let dist = match (cfg.norm, cfg.operator) {
            (MotionNorm::L1, _) | (MotionNorm::L2, MotionOperator::InnerProduct) => g.abs(d),
            (MotionNorm::L2, _) => g.norm_last(d)?,
        };
        let term = g.sum_all(dist);
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    Ok(match total {
        Some(t) => t,
        None => g.constant(crate::array::Array::scalar(0.0)),
    })
}

/// `L_p`: squared Euclidean distance summed over frames and joints.
pub fn position_loss(g: &mut Graph, pred: Var, gt: Var) -> Result<Var> {
    if g.shape(pred) != g.shape(gt) {
        return Err(mismatch("position_loss", g.shape(pred), g.shape(gt)));
    }
    let d = g.sub(pred, gt)?;
    let sq = g.square(d);
    Ok(g.sum_all(sq))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossTerms {
    pub total: Var,
    pub position: Var,
    pub motion: Var,
}

/// `L = L_p + lambda * L_m`.
pub fn combined_loss(g: &mut Graph, pred: Var, gt: Var, cfg: &LossConfig) -> Result<LossTerms> {
    let position = position_loss(g, pred, gt)?;
    let motion = motion_loss(g, pred, gt, cfg)?;
    let total = if cfg.lambda == 0.0 {
        position
    } else {
        let weighted = g.scale(motion, cfg.lambda);
        g.add(position, weighted)?
    };
    Ok(LossTerms {
        total,
        position,
        motion,
    })
}

/// Motion loss with subtraction at interval 1: penalizes mismatched
/// frame-to-frame offsets.
pub fn derivative_loss(g: &mut Graph, pred: Var, gt: Var) -> Result<Var> {
    motion_loss(g, pred, gt, &LossConfig::derivative())
}

/// Evaluates `L_m` on plain sequences.
pub fn motion_loss_value(pred: &PoseSequence, gt: &PoseSequence, cfg: &LossConfig) -> Result<f64> {
    pred.check_same_shape(gt, "motion_loss")?;
    let mut g = Graph::new();
    let p = g.constant(pred.to_array());
    let q = g.constant(gt.to_array());
    let l = motion_loss(&mut g, p, q, cfg)?;
    Ok(g.value(l).item())
}

/// Evaluates `L_p` on plain sequences.
pub fn position_loss_value(pred: &PoseSequence, gt: &PoseSequence) -> Result<f64> {
    pred.check_same_shape(gt, "position_loss")?;
    let mut g = Graph::new();
    let p = g.constant(pred.to_array());
    let q = g.constant(gt.to_array());
    let l = position_loss(&mut g, p, q)?;
    Ok(g.value(l).item())
}
