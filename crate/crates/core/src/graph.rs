//! A dynamic-tape reverse-mode differentiation engine over [`Array`]s.
//!
//! Every operation appends a node to the [`Graph`] holding its value and the
//! information needed to run its adjoint. Node creation order is a valid
//! topological order, so [`Graph::backward`] simply walks the tape in reverse
//! and accumulates gradients additively into each node's parents.
//!
//! ```
//! use ugcn_core::{Array, Graph};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Array::new([3], vec![1.0, -2.0, 3.0]).unwrap());
//! let sq = g.mul(x, x).unwrap();
//! let y = g.sum_all(sq);
//! g.backward(y).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[2.0, -4.0, 6.0]);
//! ```

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::array::{strides, Array};
use crate::error::{mismatch, Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Adjoint of a user-defined operation: `(inputs, output, output_grad) -> input_grads`.
pub type BackwardFn = Box<dyn Fn(&[&Array], &Array, &Array) -> Vec<Array>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

/// Sparse `M x M` mixing matrix applied along the last (joint) axis.
#[derive(Debug, Clone, PartialEq)]
pub struct JointMatrix {
    size: usize,
    /// `(row, col, value)` triples with `value != 0`.
    entries: Vec<(usize, usize, f64)>,
}

impl JointMatrix {
    pub fn from_dense(size: usize, dense: &[f64]) -> Self {
        debug_assert_eq!(dense.len(), size * size);
        let entries = (0..size)
            .flat_map(|r| (0..size).map(move |c| (r, c)))
            .filter_map(|(r, c)| {
                let v = dense[r * size + c];
                (v != 0.0).then_some((r, c, v))
            })
            .collect();
        Self { size, entries }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.size * self.size];
        for &(r, c, v) in &self.entries {
            d[r * self.size + c] = v;
        }
        d
    }
}

/// Batch-norm statistics measured in training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, which is what running estimates track.
    pub var_unbiased: Vec<f64>,
}

pub enum BatchNormMode<'a> {
    Train,
    Eval { mean: &'a [f64], var: &'a [f64] },
}

pub const BN_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Binary(BinaryKind, Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Abs(Var),
    Square(Var),
    MatMul(Var, Var),
    ConvTime {
        x: Var,
        w: Var,
        stride: usize,
    },
    Reduce {
        x: Var,
        axes: Vec<usize>,
    },
    JointMix(Var, JointMatrix),
    Upsample(Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Cross(Var, Var),
    NormLast(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array,
        inv_std: Vec<f64>,
        train: bool,
    },
    ChannelBias(Var, Var),
    Custom(Vec<Var>, BackwardFn),
}

struct Node {
    value: Array,
    grad: Option<Array>,
    requires_grad: bool,
    op: Op,
}

/// The tape. One graph per forward pass; not shared across threads.
pub struct Graph {
    nodes: Vec<Node>,
    track_kinks: bool,
    signature: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            track_kinks: false,
            signature: FNV_OFFSET,
        }
    }

    /// Record the branch taken by every non-smooth op (ReLU, |x|, norm at 0)
    /// into [`Graph::kink_signature`]. Used by gradient checking to detect
    /// finite-difference probes that straddle a kink.
    pub fn track_kinks(&mut self, on: bool) {
        self.track_kinks = on;
    }

    pub fn kink_signature(&self) -> u64 {
        self.signature
    }

    fn record_pattern(&mut self, bits: impl Iterator<Item = u8>) {
        if !self.track_kinks {
            return;
        }
        let mut h = self.signature;
        for b in bits {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        self.signature = h;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Array) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Array) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Array> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient of `v`, or zeros when nothing flowed into it.
    pub fn grad_or_zeros(&self, v: Var) -> Array {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Array::zeros(self.shape(v)))
    }

    // ---- elementwise -------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    /// Elementwise binary op. One operand may be broadcast over the other when
    /// its shape, after dropping leading size-1 axes, is a suffix of the
    /// other's shape.
    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let out_shape = broadcast_shape(va.shape(), vb.shape())
            .ok_or_else(|| mismatch("elementwise", va.shape(), vb.shape()))?;
        let n: usize = out_shape.iter().product();
        let (da, db) = (va.data(), vb.data());
        let (la, lb) = (da.len(), db.len());
        let f: fn(f64, f64) -> f64 = match kind {
            BinaryKind::Add => |x, y| x + y,
            BinaryKind::Sub => |x, y| x - y,
            BinaryKind::Mul => |x, y| x * y,
        };
        let data = if la == n && lb == n {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else {
            (0..n).map(|i| f(da[i % la], db[i % lb])).collect()
        };
        let value = Array::new(out_shape, data)?;
        Ok(self.push(value, Op::Binary(kind, a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, alpha: f64) -> Var {
        let value = self.value(x).map(|v| alpha * v);
        self.push(value, Op::Scale(x, alpha), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        if self.track_kinks {
            let bits: Vec<u8> = self.value(x).data().iter().map(|&v| u8::from(v > 0.0)).collect();
            self.record_pattern(bits.into_iter());
        }
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::abs);
        if self.track_kinks {
            let bits: Vec<u8> = self
                .value(x)
                .data()
                .iter()
                .map(|&v| (v > 0.0) as u8 | (((v < 0.0) as u8) << 1))
                .collect();
            self.record_pattern(bits.into_iter());
        }
        self.push(value, Op::Abs(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        self.push(value, Op::Square(x), &[x])
    }

    // ---- linear algebra ------------------------------------------------------

    /// `(m x k) . (k x n) -> (m x n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(mismatch("matmul", va.shape(), vb.shape()));
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let value = Array::new([m, n], matmul_raw(va.data(), vb.data(), m, k, n))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// Per-joint 1-D convolution along time.
    ///
    /// `x` is `(C_in, T, M)` or `(N, C_in, T, M)`, `w` is `(C_out, C_in, K)`
    /// with odd `K`. Zero padding of `(K-1)/2` on both ends is applied before
    /// striding, giving `T' = ceil(T / stride)`.
    pub fn conv_time(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        let d = ConvDims::new(vx.shape(), vw.shape(), stride)?;
        let mut out = vec![0.0; d.n * d.c_out * d.t_out * d.m];
        conv_forward(&d, vx.data(), vw.data(), &mut out);
        let mut shape = vx.shape().to_vec();
        let r = shape.len();
        shape[r - 3] = d.c_out;
        shape[r - 2] = d.t_out;
        let value = Array::new(shape, out)?;
        Ok(self.push(value, Op::ConvTime { x, w, stride }, &[x, w]))
    }

    /// Applies `out[.., j] = sum_i mix[j, i] * x[.., i]` along the last axis.
    pub fn joint_mix(&mut self, x: Var, mix: &JointMatrix) -> Result<Var> {
        let vx = self.value(x);
        let m = *vx.shape().last().unwrap_or(&0);
        if m != mix.size() {
            return Err(mismatch("joint_mix", vx.shape(), &[mix.size(), mix.size()]));
        }
        let mut out = vec![0.0; vx.len()];
        for (src, dst) in vx.data().chunks_exact(m).zip(out.chunks_exact_mut(m)) {
            for &(j, i, a) in mix.entries() {
                dst[j] += a * src[i];
            }
        }
        let value = Array::new(vx.shape(), out)?;
        Ok(self.push(value, Op::JointMix(x, mix.clone()), &[x]))
    }

    /// Adds a per-channel bias; the channel axis is `rank - 3`.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(b));
        let (outer, c, inner) = channel_split(vx.shape())?;
        if vb.len() != c {
            return Err(mismatch("channel_bias", vx.shape(), vb.shape()));
        }
        let mut out = vx.data().to_vec();
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                for v in &mut out[base..base + inner] {
                    *v += vb.data()[ch];
                }
            }
        }
        let value = Array::new(vx.shape(), out)?;
        Ok(self.push(value, Op::ChannelBias(x, b), &[x, b]))
    }

    /// Batch normalization over every axis except the channel axis (`rank - 3`).
    ///
    /// In training mode the batch statistics are returned so the caller can
    /// update its running estimates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let vx = self.value(x);
        let (outer, c, inner) = channel_split(vx.shape())?;
        let (vg, vb) = (self.value(gamma), self.value(beta));
        if vg.len() != c || vb.len() != c {
            return Err(mismatch("batch_norm", vx.shape(), vg.shape()));
        }
        let count = (outer * inner) as f64;
        let xd = vx.data();
        let (mean, var, train) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for o in 0..outer {
                    for ch in 0..c {
                        let base = (o * c + ch) * inner;
                        mean[ch] += xd[base..base + inner].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for o in 0..outer {
                    for ch in 0..c {
                        let base = (o * c + ch) * inner;
                        var[ch] += xd[base..base + inner]
                            .iter()
                            .map(|v| (v - mean[ch]) * (v - mean[ch]))
                            .sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count);
                (mean, var, true)
            }
            BatchNormMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(mismatch("batch_norm", vx.shape(), &[mean.len()]));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + BN_EPS)).collect();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                let (g, b) = (vg.data()[ch], vb.data()[ch]);
                for i in base..base + inner {
                    let h = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = g * h + b;
                }
            }
        }
        let stats = train.then(|| BatchStats {
            var_unbiased: var
                .iter()
                .map(|v| if count > 1.0 { v * count / (count - 1.0) } else { *v })
                .collect(),
            mean,
        });
        let shape = vx.shape().to_vec();
        let value = Array::new(shape.clone(), out)?;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat: Array::new(shape, xhat)?,
            inv_std,
            train,
        };
        Ok((self.push(value, op, &[x, gamma, beta]), stats))
    }

    // ---- shape manipulation --------------------------------------------------

    /// Nearest-neighbour temporal upsampling by two: output frame `t` copies
    /// input frame `t / 2`. The time axis is `rank - 2`.
    pub fn temporal_upsample(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let r = vx.rank();
        if r < 2 {
            return Err(Error::InvalidAxis { axis: 0, rank: r });
        }
        let (t, m) = (vx.shape()[r - 2], vx.shape()[r - 1]);
        let outer = vx.len() / (t * m).max(1);
        let mut out = Vec::with_capacity(vx.len() * 2);
        for o in 0..outer {
            for tt in 0..2 * t {
                let src = (o * t + tt / 2) * m;
                out.extend_from_slice(&vx.data()[src..src + m]);
            }
        }
        let mut shape = vx.shape().to_vec();
        shape[r - 2] *= 2;
        let value = Array::new(shape, out)?;
        Ok(self.push(value, Op::Upsample(x), &[x]))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let r = vx.rank();
        let mut seen = vec![false; r];
        if perm.len() != r || perm.iter().any(|&p| p >= r || core::mem::replace(&mut seen[p], true)) {
            return Err(mismatch("permute", vx.shape(), perm));
        }
        let shape: Vec<usize> = perm.iter().map(|&p| vx.shape()[p]).collect();
        let src_strides = vx.strides();
        let gather: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
        let mut out = Vec::with_capacity(vx.len());
        for_each_offset(&shape, &gather, |o| out.push(vx.data()[o]));
        let value = Array::new(shape, out)?;
        Ok(self.push(value, Op::Permute(x, perm.to_vec()), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let vx = self.value(x);
        let r = vx.rank();
        if axis >= r {
            return Err(Error::InvalidAxis { axis, rank: r });
        }
        let dim = vx.shape()[axis];
        if start + len > dim {
            return Err(mismatch("slice", vx.shape(), &[start, len]));
        }
        let outer: usize = vx.shape()[..axis].iter().product();
        let inner: usize = vx.shape()[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            out.extend_from_slice(&vx.data()[base..base + len * inner]);
        }
        let mut shape = vx.shape().to_vec();
        shape[axis] = len;
        let value = Array::new(shape, out)?;
        Ok(self.push(value, Op::Slice { x, axis, start }, &[x]))
    }

    // ---- vector ops on the last axis ---------------------------------------

    /// Cross product over a trailing axis of length 3.
    pub fn cross(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch("cross", va.shape(), vb.shape()));
        }
        let d = *va.shape().last().unwrap_or(&0);
        if d != 3 {
            return Err(Error::DimensionError { expected: 3, got: d });
        }
        let mut out = vec![0.0; va.len()];
        for ((x, y), o) in va
            .data()
            .chunks_exact(3)
            .zip(vb.data().chunks_exact(3))
            .zip(out.chunks_exact_mut(3))
        {
            o.copy_from_slice(&cross3(x, y));
        }
        let value = Array::new(va.shape(), out)?;
        Ok(self.push(value, Op::Cross(a, b), &[a, b]))
    }

    /// Euclidean norm over the last axis (which is removed).
    pub fn norm_last(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let r = vx.rank();
        if r == 0 {
            return Err(Error::InvalidAxis { axis: 0, rank: 0 });
        }
        let d = vx.shape()[r - 1].max(1);
        let out: Vec<f64> = vx
            .data()
            .chunks_exact(d)
            .map(|c| libm::sqrt(c.iter().map(|v| v * v).sum()))
            .collect();
        let value = Array::new(&vx.shape()[..r - 1], out)?;
        if self.track_kinks {
            let bits: Vec<u8> = value.data().iter().map(|&v| u8::from(v > 0.0)).collect();
            self.record_pattern(bits.into_iter());
        }
        Ok(self.push(value, Op::NormLast(x), &[x]))
    }

    // ---- reductions ----------------------------------------------------------

    /// Sums over `axes` (removed from the output shape).
    pub fn sum(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let r = vx.rank();
        let mut reduced = vec![false; r];
        for &a in axes {
            if a >= r {
                return Err(Error::InvalidAxis { axis: a, rank: r });
            }
            reduced[a] = true;
        }
        let out_shape: Vec<usize> = (0..r).filter(|&i| !reduced[i]).map(|i| vx.shape()[i]).collect();
        let out_strides = strides(&out_shape);
        let mut scatter = vec![0; r];
        let mut k = 0;
        for i in 0..r {
            if !reduced[i] {
                scatter[i] = out_strides[k];
                k += 1;
            }
        }
        let mut out = vec![0.0; out_shape.iter().product()];
        let data = vx.data();
        let mut idx = 0;
        for_each_offset(vx.shape(), &scatter, |o| {
            out[o] += data[idx];
            idx += 1;
        });
        let value = Array::new(out_shape, out)?;
        Ok(self.push(
            value,
            Op::Reduce {
                x,
                axes: axes.to_vec(),
            },
            &[x],
        ))
    }

    pub fn mean(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let count: usize = axes.iter().filter_map(|&a| shape.get(a)).product();
        let s = self.sum(x, axes)?;
        Ok(self.scale(s, 1.0 / count.max(1) as f64))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let axes: Vec<usize> = (0..self.value(x).rank()).collect();
        self.sum(x, &axes).expect("all axes are valid")
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    // ---- extension -----------------------------------------------------------

    /// Registers an operation whose value was computed by the caller, with a
    /// caller-supplied adjoint.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Array,
        backward: impl Fn(&[&Array], &Array, &Array) -> Vec<Array> + 'static,
    ) -> Var {
        self.push(value, Op::Custom(inputs.to_vec(), Box::new(backward)), inputs)
    }

    // ---- reverse pass --------------------------------------------------------

    /// Reverse-mode sweep from a scalar output. Afterwards [`Graph::grad`]
    /// returns `d output / d node` for every node that requires a gradient
    /// and is reachable from `output`.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let out_shape = self.value(output).shape().to_vec();
        if self.value(output).len() != 1 {
            return Err(Error::NonScalarOutput(out_shape));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[output.0].grad = Some(Array::ones(out_shape));
        for i in (0..=output.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.adjoint(i, &g);
            self.nodes[i].grad = Some(g);
            for (p, dg) in contributions {
                let node = &mut self.nodes[p.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&dg),
                    None => node.grad = Some(dg),
                }
            }
        }
        Ok(())
    }

    fn adjoint(&self, i: usize, g: &Array) -> Vec<(Var, Array)> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let gd = g.data();
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Binary(kind, a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (la, lb) = (va.len(), vb.len());
                let mut ga = vec![0.0; la];
                let mut gb = vec![0.0; lb];
                match kind {
                    BinaryKind::Add => {
                        for (k, &gv) in gd.iter().enumerate() {
                            ga[k % la] += gv;
                            gb[k % lb] += gv;
                        }
                    }
                    BinaryKind::Sub => {
                        for (k, &gv) in gd.iter().enumerate() {
                            ga[k % la] += gv;
                            gb[k % lb] -= gv;
                        }
                    }
                    BinaryKind::Mul => {
                        let (da, db) = (va.data(), vb.data());
                        for (k, &gv) in gd.iter().enumerate() {
                            ga[k % la] += gv * db[k % lb];
                            gb[k % lb] += gv * da[k % la];
                        }
                    }
                }
                vec![
                    (*a, shaped(va.shape(), ga)),
                    (*b, shaped(vb.shape(), gb)),
                ]
            }
            Op::Scale(x, alpha) => vec![(*x, g.map(|v| alpha * v))],
            Op::Relu(x) => {
                let vx = val(*x);
                let d = vx.data().iter().zip(gd).map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 });
                vec![(*x, shaped(vx.shape(), d.collect()))]
            }
            Op::Abs(x) => {
                let vx = val(*x);
                let d = vx.data().iter().zip(gd).map(|(&v, &gv)| sign(v) * gv);
                vec![(*x, shaped(vx.shape(), d.collect()))]
            }
            Op::Square(x) => {
                let vx = val(*x);
                let d = vx.data().iter().zip(gd).map(|(&v, &gv)| 2.0 * v * gv);
                vec![(*x, shaped(vx.shape(), d.collect()))]
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                let mut out = Vec::new();
                if wants(*a) {
                    let bt = transpose(vb.data(), k, n);
                    out.push((*a, shaped(va.shape(), matmul_raw(gd, &bt, m, n, k))));
                }
                if wants(*b) {
                    let at = transpose(va.data(), m, k);
                    out.push((*b, shaped(vb.shape(), matmul_raw(&at, gd, k, m, n))));
                }
                out
            }
            Op::ConvTime { x, w, stride } => {
                let (vx, vw) = (val(*x), val(*w));
                let d = ConvDims::new(vx.shape(), vw.shape(), *stride).expect("validated in forward");
                let mut gx = if wants(*x) { Some(vec![0.0; vx.len()]) } else { None };
                let mut gw = if wants(*w) { Some(vec![0.0; vw.len()]) } else { None };
                conv_backward(&d, vx.data(), vw.data(), gd, gx.as_deref_mut(), gw.as_deref_mut());
                let mut out = Vec::new();
                if let Some(gx) = gx {
                    out.push((*x, shaped(vx.shape(), gx)));
                }
                if let Some(gw) = gw {
                    out.push((*w, shaped(vw.shape(), gw)));
                }
                out
            }
            Op::Reduce { x, axes } => {
                let vx = val(*x);
                let r = vx.rank();
                let mut reduced = vec![false; r];
                for &a in axes {
                    reduced[a] = true;
                }
                let out_shape: Vec<usize> = (0..r).filter(|&i| !reduced[i]).map(|i| vx.shape()[i]).collect();
                let out_strides = strides(&out_shape);
                let mut scatter = vec![0; r];
                let mut k = 0;
                for i in 0..r {
                    if !reduced[i] {
                        scatter[i] = out_strides[k];
                        k += 1;
                    }
                }
                let mut gx = Vec::with_capacity(vx.len());
                for_each_offset(vx.shape(), &scatter, |o| gx.push(gd[o]));
                vec![(*x, shaped(vx.shape(), gx))]
            }
            Op::JointMix(x, mix) => {
                let vx = val(*x);
                let m = mix.size();
                let mut gx = vec![0.0; vx.len()];
                for (src, dst) in gd.chunks_exact(m).zip(gx.chunks_exact_mut(m)) {
                    for &(j, i, a) in mix.entries() {
                        dst[i] += a * src[j];
                    }
                }
                vec![(*x, shaped(vx.shape(), gx))]
            }
            Op::Upsample(x) => {
                let vx = val(*x);
                let r = vx.rank();
                let (t, m) = (vx.shape()[r - 2], vx.shape()[r - 1]);
                let outer = vx.len() / (t * m).max(1);
                let mut gx = vec![0.0; vx.len()];
                for o in 0..outer {
                    for tt in 0..2 * t {
                        let src = (o * 2 * t + tt) * m;
                        let dst = (o * t + tt / 2) * m;
                        for k in 0..m {
                            gx[dst + k] += gd[src + k];
                        }
                    }
                }
                vec![(*x, shaped(vx.shape(), gx))]
            }
            Op::Permute(x, perm) => {
                let vx = val(*x);
                let src_strides = vx.strides();
                let gather: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
                let mut gx = vec![0.0; vx.len()];
                let mut k = 0;
                for_each_offset(node.value.shape(), &gather, |o| {
                    gx[o] = gd[k];
                    k += 1;
                });
                vec![(*x, shaped(vx.shape(), gx))]
            }
            Op::Reshape(x) => vec![(*x, shaped(val(*x).shape(), gd.to_vec()))],
            Op::Slice { x, axis, start } => {
                let vx = val(*x);
                let dim = vx.shape()[*axis];
                let len = node.value.shape()[*axis];
                let outer: usize = vx.shape()[..*axis].iter().product();
                let inner: usize = vx.shape()[axis + 1..].iter().product();
                let mut gx = vec![0.0; vx.len()];
                for o in 0..outer {
                    let dst = (o * dim + start) * inner;
                    let src = o * len * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
                }
                vec![(*x, shaped(vx.shape(), gx))]
            }
            Op::Cross(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let mut ga = vec![0.0; va.len()];
                let mut gb = vec![0.0; vb.len()];
                for k in (0..va.len()).step_by(3) {
                    let (x, y, gg) = (&va.data()[k..k + 3], &vb.data()[k..k + 3], &gd[k..k + 3]);
                    ga[k..k + 3].copy_from_slice(&cross3(y, gg));
                    gb[k..k + 3].copy_from_slice(&cross3(gg, x));
                }
                vec![(*a, shaped(va.shape(), ga)), (*b, shaped(vb.shape(), gb))]
            }
            Op::NormLast(x) => {
                let vx = val(*x);
                let d = vx.shape()[vx.rank() - 1].max(1);
                let mut gx = vec![0.0; vx.len()];
                for (r, (&nv, &gv)) in node.value.data().iter().zip(gd).enumerate() {
                    if nv > 0.0 {
                        for k in r * d..(r + 1) * d {
                            gx[k] = gv * vx.data()[k] / nv;
                        }
                    }
                }
                vec![(*x, shaped(vx.shape(), gx))]
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (vx, vg) = (val(*x), val(*gamma));
                let (outer, c, inner) = channel_split(vx.shape()).expect("validated in forward");
                let count = (outer * inner) as f64;
                let hd = xhat.data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for o in 0..outer {
                    for ch in 0..c {
                        let base = (o * c + ch) * inner;
                        for i in base..base + inner {
                            dgamma[ch] += gd[i] * hd[i];
                            dbeta[ch] += gd[i];
                        }
                    }
                }
                let mut gx = vec![0.0; vx.len()];
                for o in 0..outer {
                    for ch in 0..c {
                        let base = (o * c + ch) * inner;
                        let scale = vg.data()[ch] * inv_std[ch];
                        for i in base..base + inner {
                            gx[i] = if *train {
                                scale * (gd[i] - dbeta[ch] / count - hd[i] * dgamma[ch] / count)
                            } else {
                                scale * gd[i]
                            };
                        }
                    }
                }
                vec![
                    (*x, shaped(vx.shape(), gx)),
                    (*gamma, shaped(vg.shape(), dgamma)),
                    (*beta, shaped(val(*beta).shape(), dbeta)),
                ]
            }
            Op::ChannelBias(x, b) => {
                let vx = val(*x);
                let (outer, c, inner) = channel_split(vx.shape()).expect("validated in forward");
                let mut gb = vec![0.0; c];
                for o in 0..outer {
                    for (ch, acc) in gb.iter_mut().enumerate() {
                        let base = (o * c + ch) * inner;
                        *acc += gd[base..base + inner].iter().sum::<f64>();
                    }
                }
                vec![(*x, g.clone()), (*b, shaped(val(*b).shape(), gb))]
            }
            Op::Custom(inputs, backward) => {
                let ins: Vec<&Array> = inputs.iter().map(|&v| val(v)).collect();
                let grads = backward(&ins, &node.value, g);
                inputs.iter().copied().zip(grads).collect()
            }
        }
    }
}

fn shaped(shape: &[usize], data: Vec<f64>) -> Array {
    Array::new(shape, data).expect("gradient length matches its value")
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn cross3(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a == b {
        return Some(a.to_vec());
    }
    let strip = |s: &[usize]| -> Vec<usize> { s.iter().copied().skip_while(|&d| d == 1).collect() };
    let (sa, sb) = (strip(a), strip(b));
    let (na, nb): (usize, usize) = (a.iter().product(), b.iter().product());
    let (big, small_core) = if na >= nb { (a, &sb) } else { (b, &sa) };
    if small_core.len() <= big.len() && big[big.len() - small_core.len()..] == small_core[..] {
        Some(big.to_vec())
    } else {
        None
    }
}

/// Visits every multi-index of `shape` in row-major order, passing
/// `sum(index[i] * coef[i])`.
fn for_each_offset(shape: &[usize], coef: &[usize], mut f: impl FnMut(usize)) {
    let r = shape.len();
    if shape.contains(&0) {
        return;
    }
    if r == 0 {
        f(0);
        return;
    }
    let mut idx = vec![0usize; r];
    let mut off = 0usize;
    let last = r - 1;
    loop {
        // Innermost axis unrolled for speed.
        let c = coef[last];
        for k in 0..shape[last] {
            f(off + k * c);
        }
        let mut ax = last;
        loop {
            if ax == 0 {
                return;
            }
            ax -= 1;
            idx[ax] += 1;
            off += coef[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            off -= coef[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
}

fn channel_split(shape: &[usize]) -> Result<(usize, usize, usize)> {
    let r = shape.len();
    if r < 3 {
        return Err(Error::InvalidAxis { axis: 0, rank: r });
    }
    let outer: usize = shape[..r - 3].iter().product();
    let inner: usize = shape[r - 2..].iter().product();
    Ok((outer, shape[r - 3], inner))
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

struct ConvDims {
    n: usize,
    c_in: usize,
    c_out: usize,
    t: usize,
    t_out: usize,
    m: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl ConvDims {
    fn new(x: &[usize], w: &[usize], stride: usize) -> Result<Self> {
        let r = x.len();
        if !(r == 3 || r == 4) || w.len() != 3 || w[1] != x[r - 3] {
            return Err(mismatch("conv_time", x, w));
        }
        if w[2] % 2 == 0 {
            return Err(Error::EvenKernel(w[2]));
        }
        if !(stride == 1 || stride == 2) {
            return Err(Error::InvalidStride(stride));
        }
        let t = x[r - 2];
        Ok(Self {
            n: if r == 4 { x[0] } else { 1 },
            c_in: w[1],
            c_out: w[0],
            t,
            t_out: t.div_ceil(stride),
            m: x[r - 1],
            k: w[2],
            stride,
            pad: (w[2] - 1) / 2,
        })
    }

    /// Source frame for output frame `to` and tap `k`, if inside the input.
    #[inline]
    fn src(&self, to: usize, k: usize) -> Option<usize> {
        (to * self.stride + k).checked_sub(self.pad).filter(|&s| s < self.t)
    }
}

fn conv_forward(d: &ConvDims, x: &[f64], w: &[f64], out: &mut [f64]) {
    let (m, t, to_len) = (d.m, d.t, d.t_out);
    for n in 0..d.n {
        for o in 0..d.c_out {
            let ob = (n * d.c_out + o) * to_len * m;
            for c in 0..d.c_in {
                let xb = (n * d.c_in + c) * t * m;
                for k in 0..d.k {
                    let wv = w[(o * d.c_in + c) * d.k + k];
                    if wv == 0.0 {
                        continue;
                    }
                    for to in 0..to_len {
                        if let Some(s) = d.src(to, k) {
                            let dst = &mut out[ob + to * m..ob + (to + 1) * m];
                            let src = &x[xb + s * m..xb + (s + 1) * m];
                            for (a, b) in dst.iter_mut().zip(src) {
                                *a += wv * b;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_backward(
    d: &ConvDims,
    x: &[f64],
    w: &[f64],
    g: &[f64],
    mut gx: Option<&mut [f64]>,
    mut gw: Option<&mut [f64]>,
) {
    let (m, t, to_len) = (d.m, d.t, d.t_out);
    for n in 0..d.n {
        for o in 0..d.c_out {
            let gb = (n * d.c_out + o) * to_len * m;
            for c in 0..d.c_in {
                let xb = (n * d.c_in + c) * t * m;
                for k in 0..d.k {
                    let wi = (o * d.c_in + c) * d.k + k;
                    let wv = w[wi];
                    let mut acc = 0.0;
                    for to in 0..to_len {
                        let Some(s) = d.src(to, k) else { continue };
                        let gs = &g[gb + to * m..gb + (to + 1) * m];
                        if let Some(gx) = gx.as_deref_mut() {
                            let dst = &mut gx[xb + s * m..xb + (s + 1) * m];
                            for (a, b) in dst.iter_mut().zip(gs) {
                                *a += wv * b;
                            }
                        }
                        if gw.is_some() {
                            let xs = &x[xb + s * m..xb + (s + 1) * m];
                            acc += xs.iter().zip(gs).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                    if let Some(gw) = gw.as_deref_mut() {
                        gw[wi] += acc;
                    }
                }
            }
        }
    }
}
