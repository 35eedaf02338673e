//! Keypoint sequences laid out frame-major: `(frames, joints, dims)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::array::Array;
use crate::error::{mismatch, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    frames: usize,
    joints: usize,
    dims: usize,
    data: Vec<f64>,
}

impl PoseSequence {
    pub fn new(frames: usize, joints: usize, dims: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * joints * dims {
            return Err(mismatch("PoseSequence::new", &[frames, joints, dims], &[data.len()]));
        }
        Ok(Self {
            frames,
            joints,
            dims,
            data,
        })
    }

    pub fn zeros(frames: usize, joints: usize, dims: usize) -> Self {
        Self {
            frames,
            joints,
            dims,
            data: vec![0.0; frames * joints * dims],
        }
    }

    pub fn from_fn(frames: usize, joints: usize, dims: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(frames * joints * dims);
        for t in 0..frames {
            for j in 0..joints {
                for d in 0..dims {
                    data.push(f(t, j, d));
                }
            }
        }
        Self {
            frames,
            joints,
            dims,
            data,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn point(&self, t: usize, j: usize) -> &[f64] {
        let o = (t * self.joints + j) * self.dims;
        &self.data[o..o + self.dims]
    }

    pub fn point_mut(&mut self, t: usize, j: usize) -> &mut [f64] {
        let o = (t * self.joints + j) * self.dims;
        &mut self.data[o..o + self.dims]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let w = self.joints * self.dims;
        &self.data[t * w..(t + 1) * w]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.frames == other.frames && self.joints == other.joints && self.dims == other.dims
    }

    pub fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(mismatch(
                op,
                &[self.frames, self.joints, self.dims],
                &[other.frames, other.joints, other.dims],
            ))
        }
    }

    /// Frames `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.frames {
            return Err(Error::TooShort {
                frames: self.frames,
                needed: start + len,
            });
        }
        let w = self.joints * self.dims;
        Ok(Self {
            frames: len,
            joints: self.joints,
            dims: self.dims,
            data: self.data[start * w..(start + len) * w].to_vec(),
        })
    }

    /// Horizontal flip: negates the first coordinate and swaps left/right
    /// joints, so joint `mirror[j]` of the result is the flipped joint `j`.
    pub fn flipped(&self, mirror: &[usize]) -> Self {
        debug_assert_eq!(mirror.len(), self.joints);
        let mut out = Self::zeros(self.frames, self.joints, self.dims);
        for t in 0..self.frames {
            for (j, &mj) in mirror.iter().enumerate() {
                let src = self.point(t, j);
                let dst = out.point_mut(t, mj);
                dst.copy_from_slice(src);
                dst[0] = -dst[0];
            }
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= factor);
        out
    }

    pub fn to_array(&self) -> Array {
        Array::new([self.frames, self.joints, self.dims], self.data.clone()).expect("consistent shape")
    }

    /// Accepts a `(T, M, D)` array.
    pub fn from_array(a: &Array) -> Result<Self> {
        match a.shape() {
            &[t, m, d] => Self::new(t, m, d, a.data().to_vec()),
            s => Err(mismatch("PoseSequence::from_array", s, &[0, 0, 0])),
        }
    }

    /// Stacks equally shaped sequences into an `(N, T, M, D)` array.
    pub fn stack(seqs: &[Self]) -> Result<Array> {
        let first = seqs.first().ok_or(Error::EmptyDataset)?;
        let mut data = Vec::with_capacity(seqs.len() * first.data.len());
        for s in seqs {
            first.check_same_shape(s, "stack")?;
            data.extend_from_slice(&s.data);
        }
        Array::new([seqs.len(), first.frames, first.joints, first.dims], data)
    }

    /// Splits an `(N, T, M, D)` array into sequences.
    pub fn unstack(a: &Array) -> Result<Vec<Self>> {
        let &[n, t, m, d] = a.shape() else {
            return Err(mismatch("unstack", a.shape(), &[0, 0, 0, 0]));
        };
        Ok(a.data()
            .chunks_exact((t * m * d).max(1))
            .take(n)
            .map(|c| Self {
                frames: t,
                joints: m,
                dims: d,
                data: c.to_vec(),
            })
            .collect())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flip_is_an_involution() {
        let mirror = [0, 2, 1];
        let s = PoseSequence::from_fn(4, 3, 3, |t, j, d| (t * 9 + j * 3 + d) as f64 - 5.0);
        let f = s.flipped(&mirror);
        assert_eq!(f.point(1, 2)[0], -s.point(1, 1)[0]);
        assert_eq!(f.point(1, 2)[1], s.point(1, 1)[1]);
        assert_eq!(f.flipped(&mirror), s);
    }

    #[test]
    fn stack_roundtrip() {
        let a = PoseSequence::from_fn(2, 2, 2, |t, j, d| (t + j + d) as f64);
        let b = a.scaled(2.0);
        let st = PoseSequence::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(st.shape(), &[2, 2, 2, 2]);
        assert_eq!(PoseSequence::unstack(&st).unwrap(), vec![a, b]);
    }
}
