//! Whole-sequence prediction from fixed-length windows.
//!
//! Windows start every `step` frames, with one more window flush against
//! the end when the last regular start leaves a tail uncovered. Each output
//! frame is the plain mean of every prediction that covers it. With flip
//! testing on, each window also runs on its mirror image and the un-mirrored
//! result enters the mean as another prediction of the same window.

use alloc::vec::Vec;

use crate::data::window_starts;
use crate::error::{Error, Result};
use crate::model::UgcnModel;
use crate::pose::PoseSequence;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct InferenceConfig {
    pub window: usize,
    pub step: usize,
    pub flip_test: bool,
    /// Windows predicted per forward pass.
    pub batch: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            window: 96,
            step: 5,
            flip_test: true,
            batch: 64,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step == 0 || self.step > self.window || self.batch == 0 {
            return Err(Error::InvalidConfig(alloc::format!(
                "inference step {} must lie in 1..={} and batch {} be positive",
                self.step, self.window, self.batch
            )));
        }
        Ok(())
    }
}

/// Anything that maps a batch of equally long 2D windows to 3D windows.
pub trait Lifter {
    fn lift(&self, windows: &[PoseSequence]) -> Result<Vec<PoseSequence>>;
}

impl Lifter for UgcnModel {
    fn lift(&self, windows: &[PoseSequence]) -> Result<Vec<PoseSequence>> {
        self.predict(windows)
    }
}

impl<F> Lifter for F
where
    F: Fn(&[PoseSequence]) -> Result<Vec<PoseSequence>>,
{
    fn lift(&self, windows: &[PoseSequence]) -> Result<Vec<PoseSequence>> {
        self(windows)
    }
}

fn average(a: &PoseSequence, b: &PoseSequence) -> PoseSequence {
    let mut out = a.clone();
    out.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x = (*x + y) / 2.0);
    out
}

fn lift_checked<L: Lifter + ?Sized>(lifter: &L, windows: &[PoseSequence]) -> Result<Vec<PoseSequence>> {
    let out = lifter.lift(windows)?;
    if out.len() != windows.len() {
        return Err(crate::error::mismatch("Lifter::lift", &[windows.len()], &[out.len()]));
    }
    Ok(out)
}

/// `(f(p) + unflip(f(flip(p)))) / 2`.
pub fn flip_invariant_predict<L: Lifter + ?Sized>(lifter: &L, p: &PoseSequence, mirror: &[usize]) -> Result<PoseSequence> {
    let out = lift_checked(lifter, &[p.clone(), p.flipped(mirror)])?;
    Ok(average(&out[0], &out[1].flipped(mirror)))
}

/// Predicts a sequence of any length `>= cfg.window`.
pub fn sliding_window_predict<L: Lifter + ?Sized>(
    lifter: &L,
    p: &PoseSequence,
    cfg: &InferenceConfig,
    mirror: &[usize],
) -> Result<PoseSequence> {
    cfg.validate()?;
    let starts = window_starts(p.frames(), cfg.window, cfg.step)?;
    let mut sum: Option<PoseSequence> = None;
    let mut cover = alloc::vec![0usize; p.frames()];
    for chunk in starts.chunks(cfg.batch) {
        let windows: Vec<PoseSequence> = chunk.iter().map(|&s| p.window(s, cfg.window)).collect::<Result<_>>()?;
        let preds = if cfg.flip_test {
            let mut both = windows.clone();
            both.extend(windows.iter().map(|w| w.flipped(mirror)));
            let out = lift_checked(lifter, &both)?;
            let (plain, flipped) = out.split_at(windows.len());
            plain.iter().zip(flipped).map(|(a, b)| average(a, &b.flipped(mirror))).collect()
        } else {
            lift_checked(lifter, &windows)?
        };
        for (&start, pred) in chunk.iter().zip(&preds) {
            let acc = sum.get_or_insert_with(|| PoseSequence::zeros(p.frames(), pred.joints(), pred.dims()));
            let width = pred.joints() * pred.dims();
            let dst = &mut acc.data_mut()[start * width..(start + cfg.window) * width];
            dst.iter_mut().zip(pred.data()).for_each(|(d, v)| *d += v);
            cover[start..start + cfg.window].iter_mut().for_each(|c| *c += 1);
        }
    }
    let mut out = sum.ok_or(Error::EmptyDataset)?;
    let width = out.joints() * out.dims();
    for (t, &c) in cover.iter().enumerate() {
        out.data_mut()[t * width..(t + 1) * width].iter_mut().for_each(|v| *v /= c as f64);
    }
    Ok(out)
}

/// Number of windows covering each frame.
pub fn cover_counts(frames: usize, cfg: &InferenceConfig) -> Result<Vec<usize>> {
    let mut cover = alloc::vec![0usize; frames];
    for s in window_starts(frames, cfg.window, cfg.step)? {
        cover[s..s + cfg.window].iter_mut().for_each(|c| *c += 1);
    }
    Ok(cover)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Lifts each 2D point to (x, y, x * y).
    fn stub(w: &[PoseSequence]) -> Result<Vec<PoseSequence>> {
        Ok(w.iter()
            .map(|p| {
                PoseSequence::from_fn(p.frames(), p.joints(), 3, |t, j, d| {
                    let q = p.point(t, j);
                    [q[0], q[1], q[0] * q[1]][d]
                })
            })
            .collect())
    }

    #[test]
    fn coverage_for_101_frames() {
        let cfg = InferenceConfig::default();
        let c = cover_counts(101, &cfg).unwrap();
        assert!(c[..5].iter().all(|&v| v == 1));
        assert!(c[5..96].iter().all(|&v| v == 2));
        assert!(c[96..].iter().all(|&v| v == 1));
    }

    #[test]
    fn pointwise_stub_is_step_independent() {
        let p = PoseSequence::from_fn(37, 2, 2, |t, j, d| (t * 3 + j + d) as f64 * 0.1);
        let mirror = [1, 0];
        let f = |step| {
            let cfg = InferenceConfig {
                window: 16,
                step,
                flip_test: false,
                batch: 3,
            };
            sliding_window_predict(&stub, &p, &cfg, &mirror).unwrap()
        };
        let a = f(1);
        for step in [2, 5, 16] {
            let b = f(step);
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn constant_stub_flip_average() {
        let c = |w: &[PoseSequence]| -> Result<Vec<PoseSequence>> {
            Ok(w.iter().map(|p| PoseSequence::from_fn(p.frames(), 2, 3, |_, j, _| [1.0, 3.0][j])).collect())
        };
        let p = PoseSequence::zeros(4, 2, 2);
        let out = flip_invariant_predict(&c, &p, &[1, 0]).unwrap();
        // the flipped branch un-mirrors: joint 0 reads joint 1's constant with x negated
        assert_eq!(out.point(0, 0), &[-1.0, 2.0, 2.0]);
    }

    #[test]
    fn short_sequences_are_rejected() {
        let p = PoseSequence::zeros(10, 1, 2);
        let cfg = InferenceConfig {
            window: 16,
            ..Default::default()
        };
        assert!(matches!(
            sliding_window_predict(&stub, &p, &cfg, &[0]),
            Err(Error::TooShort { .. })
        ));
    }
}
