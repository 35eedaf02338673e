//! Pose-estimation metrics: root-aligned MPJPE, Procrustes-aligned MPJPE,
//! velocity error, PCK and its area under the curve.
//!
//! Inputs are `(T, M, 3)` sequences in millimetres. Every metric is a mean
//! over (frame, joint) pairs, and the accumulator pools those sums across
//! sequences so a dataset score is the mean over all pairs it saw.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::sym_eigen;
use crate::pose::PoseSequence;

/// PCK threshold in millimetres.
pub const PCK_THRESHOLD: f64 = 150.0;
/// Threshold spacing of the AUC sweep.
pub const AUC_STEP: f64 = 5.0;

/// Transform family fitted before Protocol-2 scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Alignment {
    /// Rotation, translation and uniform scale.
    #[default]
    Similarity,
    /// Rotation and translation only.
    Rigid,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

fn check(pred: &PoseSequence, gt: &PoseSequence, root: usize) -> Result<()> {
    pred.check_same_shape(gt, "metric")?;
    if root >= gt.joints() {
        return Err(Error::IndexOutOfRange {
            index: root,
            num_joints: gt.joints(),
        });
    }
    Ok(())
}

/// Subtracts each frame's root position from every joint.
pub fn root_aligned(s: &PoseSequence, root: usize) -> PoseSequence {
    let mut out = s.clone();
    for t in 0..s.frames() {
        let r = s.point(t, root).to_vec();
        for j in 0..s.joints() {
            out.point_mut(t, j).iter_mut().zip(&r).for_each(|(v, r)| *v -= r);
        }
    }
    out
}

fn root_errors(pred: &PoseSequence, gt: &PoseSequence, root: usize) -> Vec<f64> {
    let (p, g) = (root_aligned(pred, root), root_aligned(gt, root));
    (0..p.frames())
        .flat_map(|t| (0..p.joints()).map(move |j| (t, j)))
        .map(|(t, j)| dist(p.point(t, j), g.point(t, j)))
        .collect()
}

/// Protocol 1: mean joint distance after root alignment.
pub fn mpjpe_p1(pred: &PoseSequence, gt: &PoseSequence, root: usize) -> Result<f64> {
    check(pred, gt, root)?;
    let e = root_errors(pred, gt, root);
    Ok(e.iter().sum::<f64>() / e.len().max(1) as f64)
}

/// Protocol 2 with similarity alignment.
pub fn mpjpe_p2(pred: &PoseSequence, gt: &PoseSequence) -> Result<f64> {
    mpjpe_p2_with(pred, gt, Alignment::Similarity)
}

/// Protocol 2: per frame, fit `pred` onto `gt` by least squares and average
/// the remaining joint distances. Degenerate frames are skipped; an error is
/// returned only when every frame is degenerate.
pub fn mpjpe_p2_with(pred: &PoseSequence, gt: &PoseSequence, alignment: Alignment) -> Result<f64> {
    let (sum, count, _) = p2_sums(pred, gt, alignment)?;
    if count == 0 {
        return Err(Error::DegenerateFrame);
    }
    Ok(sum / count as f64)
}

/// `(sum of distances, number of joint terms, skipped frames)`.
fn p2_sums(pred: &PoseSequence, gt: &PoseSequence, alignment: Alignment) -> Result<(f64, usize, usize)> {
    pred.check_same_shape(gt, "mpjpe_p2")?;
    if gt.dims() != 3 {
        return Err(Error::DimensionError { expected: 3, got: gt.dims() });
    }
    let (mut sum, mut count, mut skipped) = (0.0, 0, 0);
    for t in 0..gt.frames() {
        match align_frame(pred.frame(t), gt.frame(t), alignment) {
            Some(aligned) => {
                for (a, b) in aligned.iter().zip(gt.frame(t).chunks_exact(3)) {
                    sum += dist(a, b);
                }
                count += gt.joints();
            }
            None => skipped += 1,
        }
    }
    Ok((sum, count, skipped))
}

fn centered(frame: &[f64]) -> (Vec<[f64; 3]>, [f64; 3]) {
    let n = (frame.len() / 3) as f64;
    let mut c = [0.0; 3];
    for p in frame.chunks_exact(3) {
        (0..3).for_each(|k| c[k] += p[k] / n);
    }
    let pts = frame.chunks_exact(3).map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]]).collect();
    (pts, c)
}

/// True when the centred points are coincident or collinear.
fn degenerate(pts: &[[f64; 3]]) -> bool {
    let mut cov = [[0.0; 3]; 3];
    for p in pts {
        for r in 0..3 {
            for c in 0..3 {
                cov[r][c] += p[r] * p[c];
            }
        }
    }
    let (ev, _) = sym_eigen(cov);
    let scale = cov[0][0] + cov[1][1] + cov[2][2];
    scale <= f64::MIN_POSITIVE || ev[1] <= 1e-12 * ev[0]
}

/// Least-squares fit of `pred` onto `gt` (unit quaternion from the
/// dominant eigenvector of the 4x4 cross-covariance form), returned as the
/// transformed `pred` points. `None` for degenerate frames.
pub fn align_frame(pred: &[f64], gt: &[f64], alignment: Alignment) -> Option<Vec<[f64; 3]>> {
    let (a, _) = centered(pred);
    let (b, cb) = centered(gt);
    if degenerate(&a) || degenerate(&b) {
        return None;
    }
    let mut s = [[0.0; 3]; 3];
    for (p, q) in a.iter().zip(&b) {
        for r in 0..3 {
            for c in 0..3 {
                s[r][c] += p[r] * q[c];
            }
        }
    }
    let [[sxx, sxy, sxz], [syx, syy, syz], [szx, szy, szz]] = s;
    let n = [
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ];
    let (_, vecs) = sym_eigen(n);
    let q = [vecs[0][0], vecs[1][0], vecs[2][0], vecs[3][0]];
    let r = quat_to_matrix(q);
    let rotated: Vec<[f64; 3]> = a
        .iter()
        .map(|p| core::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2]))
        .collect();
    let scale = match alignment {
        Alignment::Rigid => 1.0,
        Alignment::Similarity => {
            let num: f64 = rotated.iter().zip(&b).map(|(p, q)| p[0] * q[0] + p[1] * q[1] + p[2] * q[2]).sum();
            let den: f64 = a.iter().map(|p| p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sum();
            num / den
        }
    };
    Some(rotated.iter().map(|p| core::array::from_fn(|i| scale * p[i] + cb[i])).collect())
}

fn quat_to_matrix(q: [f64; 4]) -> [[f64; 3]; 3] {
    let norm = libm::sqrt(q.iter().map(|v| v * v).sum());
    let [w, x, y, z] = q.map(|v| v / norm);
    [
        [w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ]
}

fn velocity_errors(pred: &PoseSequence, gt: &PoseSequence, root: usize) -> Result<Vec<f64>> {
    if gt.frames() < 2 {
        return Err(Error::TooShort {
            frames: gt.frames(),
            needed: 2,
        });
    }
    let (p, g) = (root_aligned(pred, root), root_aligned(gt, root));
    let mut out = Vec::with_capacity((gt.frames() - 1) * gt.joints());
    for t in 0..gt.frames() - 1 {
        for j in 0..gt.joints() {
            let d: f64 = (0..gt.dims())
                .map(|k| {
                    let vp = p.point(t + 1, j)[k] - p.point(t, j)[k];
                    let vg = g.point(t + 1, j)[k] - g.point(t, j)[k];
                    (vp - vg) * (vp - vg)
                })
                .sum();
            out.push(libm::sqrt(d));
        }
    }
    Ok(out)
}

/// Mean joint velocity error on root-aligned first differences.
pub fn mpjve(pred: &PoseSequence, gt: &PoseSequence, root: usize) -> Result<f64> {
    check(pred, gt, root)?;
    let e = velocity_errors(pred, gt, root)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// Thresholds `5, 10, .., 150` mm.
pub fn auc_thresholds() -> Vec<f64> {
    let n = libm::round(PCK_THRESHOLD / AUC_STEP) as usize;
    (1..=n).map(|k| k as f64 * AUC_STEP).collect()
}

/// `(PCK@150mm, AUC)` after root alignment. A joint counts as correct when
/// its error is strictly below the threshold.
pub fn pck_auc(pred: &PoseSequence, gt: &PoseSequence, root: usize) -> Result<(f64, f64)> {
    check(pred, gt, root)?;
    let e = root_errors(pred, gt, root);
    let pck = |th: f64| e.iter().filter(|&&v| v < th).count() as f64 / e.len().max(1) as f64;
    let ths = auc_thresholds();
    let auc = ths.iter().map(|&t| pck(t)).sum::<f64>() / ths.len() as f64;
    Ok((pck(PCK_THRESHOLD), auc))
}

/// The five headline numbers.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricRow {
    pub mpjpe_mm: f64,
    pub p_mpjpe_mm: f64,
    pub mpjve_mm: f64,
    pub pck_at_150: f64,
    pub auc: f64,
}

impl MetricRow {
    pub const KEYS: [&'static str; 5] = ["mpjpe_mm", "p_mpjpe_mm", "mpjve_mm", "pck_at_150", "auc"];

    pub fn values(&self) -> [f64; 5] {
        [self.mpjpe_mm, self.p_mpjpe_mm, self.mpjve_mm, self.pck_at_150, self.auc]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub overall: MetricRow,
    pub per_action: BTreeMap<String, MetricRow>,
    /// Frames skipped by Protocol 2 as degenerate.
    pub degenerate_frames: usize,
}

#[derive(Debug, Clone, Default)]
struct Sums {
    p1: f64,
    p1_n: usize,
    p2: f64,
    p2_n: usize,
    vel: f64,
    vel_n: usize,
    /// Counts below each AUC threshold; the last entry is PCK@150.
    below: Vec<usize>,
}

impl Sums {
    fn add(&mut self, pred: &PoseSequence, gt: &PoseSequence, root: usize, alignment: Alignment) -> Result<usize> {
        let ths = auc_thresholds();
        if self.below.is_empty() {
            self.below = vec![0; ths.len()];
        }
        let e = root_errors(pred, gt, root);
        self.p1 += e.iter().sum::<f64>();
        self.p1_n += e.len();
        for (c, &th) in self.below.iter_mut().zip(&ths) {
            *c += e.iter().filter(|&&v| v < th).count();
        }
        let (s, n, skipped) = p2_sums(pred, gt, alignment)?;
        self.p2 += s;
        self.p2_n += n;
        let v = velocity_errors(pred, gt, root)?;
        self.vel += v.iter().sum::<f64>();
        self.vel_n += v.len();
        Ok(skipped)
    }

    fn row(&self) -> MetricRow {
        let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
        let n = self.p1_n.max(1) as f64;
        let pcks: Vec<f64> = self.below.iter().map(|&c| c as f64 / n).collect();
        MetricRow {
            mpjpe_mm: mean(self.p1, self.p1_n),
            p_mpjpe_mm: mean(self.p2, self.p2_n),
            mpjve_mm: mean(self.vel, self.vel_n),
            pck_at_150: pcks.last().copied().unwrap_or(0.0),
            auc: pcks.iter().sum::<f64>() / pcks.len().max(1) as f64,
        }
    }
}

/// Pools metric sums over many sequences, optionally grouped by action.
#[derive(Debug, Clone)]
pub struct MetricAccumulator {
    root: usize,
    alignment: Alignment,
    all: Sums,
    by_action: BTreeMap<String, Sums>,
    degenerate: usize,
}

impl MetricAccumulator {
    pub fn new(root: usize, alignment: Alignment) -> Self {
        Self {
            root,
            alignment,
            all: Sums::default(),
            by_action: BTreeMap::new(),
            degenerate: 0,
        }
    }

    pub fn add(&mut self, pred: &PoseSequence, gt: &PoseSequence, action: Option<&str>) -> Result<()> {
        check(pred, gt, self.root)?;
        let skipped = self.all.add(pred, gt, self.root, self.alignment)?;
        self.degenerate += skipped;
        if let Some(a) = action {
            self.by_action
                .entry(String::from(a))
                .or_default()
                .add(pred, gt, self.root, self.alignment)?;
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<EvalReport> {
        if self.all.p1_n == 0 {
            return Err(Error::EmptyDataset);
        }
        if self.all.p2_n == 0 {
            return Err(Error::DegenerateFrame);
        }
        Ok(EvalReport {
            overall: self.all.row(),
            per_action: self.by_action.iter().map(|(k, v)| (k.clone(), v.row())).collect(),
            degenerate_frames: self.degenerate,
        })
    }
}

/// Scores paired sequences in one call.
pub fn evaluate(pairs: &[(&PoseSequence, &PoseSequence, Option<&str>)], root: usize, alignment: Alignment) -> Result<EvalReport> {
    let mut acc = MetricAccumulator::new(root, alignment);
    for (pred, gt, action) in pairs {
        acc.add(pred, gt, *action)?;
    }
    acc.finish()
}
