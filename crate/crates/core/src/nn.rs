//! Network building blocks on top of [`Graph`]: parameter storage, the
//! forward-pass session, the partitioned spatial graph convolution and the
//! st-gcn block.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::array::Array;
use crate::error::{mismatch, Result};
use crate::graph::{BatchNormMode, BatchStats, Graph, Var};
use crate::skeleton::PartitionedAdjacency;

/// Momentum of running batch-norm estimates.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Array,
    /// Convolution weights receive weight decay; norms and biases do not.
    pub decay: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, value: Array, decay: bool) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            decay,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Running mean/variance of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub name: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn update(&mut self, batch: &BatchStats) {
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var_unbiased) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward (and optionally backward) pass over read-only parameters.
///
/// Parameters are placed on the tape lazily the first time they are used.
/// Batch-norm statistics measured in training mode are collected in
/// [`Session::stat_updates`] rather than written back, so the caller decides
/// when running estimates change.
pub struct Session<'a> {
    pub graph: Graph,
    params: &'a ParamStore,
    stats: &'a [RunningStats],
    leaves: Vec<Option<Var>>,
    mode: Mode,
    rng: ChaCha8Rng,
    /// Dropout is forced off when false (used by gradient checks).
    pub dropout_enabled: bool,
    pub stat_updates: Vec<(usize, BatchStats)>,
}

impl<'a> Session<'a> {
    pub fn new(params: &'a ParamStore, stats: &'a [RunningStats], mode: Mode, seed: u64) -> Self {
        Self {
            graph: Graph::new(),
            params,
            stats,
            leaves: vec![None; params.len()],
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            dropout_enabled: true,
            stat_updates: Vec::new(),
        }
    }

    /// Continues recording on an existing tape.
    pub fn with_graph(graph: Graph, params: &'a ParamStore, stats: &'a [RunningStats], mode: Mode, seed: u64) -> Self {
        Self {
            graph,
            ..Self::new(params, stats, mode, seed)
        }
    }

    /// Uses `v` in place of the stored value of parameter `id`.
    pub fn bind(&mut self, id: ParamId, v: Var) {
        self.leaves[id.0] = Some(v);
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.leaves[id.0] {
            return v;
        }
        let v = self.graph.leaf(self.params.get(id).value.clone());
        self.leaves[id.0] = Some(v);
        v
    }

    /// Gradients of every parameter (zeros for parameters that were not used).
    pub fn param_grads(&self) -> Vec<Array> {
        self.params
            .iter()
            .zip(&self.leaves)
            .map(|(p, leaf)| match leaf {
                Some(v) => self.graph.grad_or_zeros(*v),
                None => Array::zeros(p.value.shape()),
            })
            .collect()
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if self.mode == Mode::Eval || rate <= 0.0 || !self.dropout_enabled {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let shape = self.graph.shape(x).to_vec();
        let rng = &mut self.rng;
        let mask = Array::from_fn(shape, |_| if rng.random::<f64>() < rate { 0.0 } else { keep });
        let m = self.graph.constant(mask);
        self.graph.mul(x, m)
    }

    pub fn batch_norm(&mut self, x: Var, gamma: ParamId, beta: ParamId, stats: usize) -> Result<Var> {
        let (g, b) = (self.param(gamma), self.param(beta));
        let mode = match self.mode {
            Mode::Train => BatchNormMode::Train,
            Mode::Eval => BatchNormMode::Eval {
                mean: &self.stats[stats].mean,
                var: &self.stats[stats].var,
            },
        };
        let (y, batch) = self.graph.batch_norm(x, g, b, mode)?;
        if let Some(batch) = batch {
            self.stat_updates.push((stats, batch));
        }
        Ok(y)
    }
}

/// `f_s = sum_l W_l . f_in . A_l^T`, applied independently per frame.
///
/// `x` is `(C_in, T, M)` or `(N, C_in, T, M)`; each weight is
/// `(C_out, C_in)` or `(C_out, C_in, 1)`.
pub fn spatial_graph_conv(g: &mut Graph, x: Var, adj: &PartitionedAdjacency, weights: [Var; 3]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (label, &w) in weights.iter().enumerate() {
        let w = match g.shape(w) {
            &[o, i] => g.reshape(w, &[o, i, 1])?,
            [_, _, 1] => w,
            s => return Err(mismatch("spatial_graph_conv", s, &[0, 0])),
        };
        let mixed = g.joint_mix(x, adj.matrix(label))?;
        let y = g.conv_time(mixed, w, 1)?;
        acc = Some(match acc {
            Some(a) => g.add(a, y)?,
            None => y,
        });
    }
    Ok(acc.expect("three subsets"))
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization.
pub fn init_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Array {
    let bound = 1.0 / libm::sqrt(fan_in.max(1) as f64);
    Array::from_fn(shape, |_| rng.random_range(-bound..bound))
}

/// Parameters of one st-gcn block: spatial graph convolution, temporal
/// convolution, batch norm, dropout and ReLU, in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct StgcnBlock {
    pub spatial: [ParamId; 3],
    pub temporal: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: usize,
    pub stride: usize,
    pub dropout: f64,
    pub residual: bool,
    pub c_in: usize,
    pub c_out: usize,
}

pub struct BlockSpec<'n> {
    pub name: &'n str,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dropout: f64,
    pub residual: bool,
}

impl StgcnBlock {
    pub fn new(store: &mut ParamStore, stats: &mut Vec<RunningStats>, spec: &BlockSpec<'_>, rng: &mut ChaCha8Rng) -> Self {
        let BlockSpec {
            name,
            c_in,
            c_out,
            kernel,
            ..
        } = *spec;
        let spatial = [0, 1, 2].map(|l| {
            let w = init_uniform(rng, &[c_out, c_in, 1], c_in);
            store.add(alloc::format!("{name}.spatial{l}"), w, true)
        });
        let tw = init_uniform(rng, &[c_out, c_out, kernel], c_out * kernel);
        let temporal = store.add(alloc::format!("{name}.temporal"), tw, true);
        let gamma = store.add(alloc::format!("{name}.bn.gamma"), Array::ones([c_out]), false);
        let beta = store.add(alloc::format!("{name}.bn.beta"), Array::zeros([c_out]), false);
        stats.push(RunningStats::new(alloc::format!("{name}.bn"), c_out));
        Self {
            spatial,
            temporal,
            gamma,
            beta,
            stats: stats.len() - 1,
            stride: spec.stride,
            dropout: spec.dropout,
            residual: spec.residual && spec.stride == 1 && c_in == c_out,
            c_in,
            c_out,
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var, adj: &PartitionedAdjacency) -> Result<Var> {
        let w = self.spatial.map(|id| s.param(id));
        let f = spatial_graph_conv(&mut s.graph, x, adj, w)?;
        let tw = s.param(self.temporal);
        let f = s.graph.conv_time(f, tw, self.stride)?;
        let f = s.batch_norm(f, self.gamma, self.beta, self.stats)?;
        let f = s.dropout(f, self.dropout)?;
        let f = if self.residual { s.graph.add(f, x)? } else { f };
        Ok(s.graph.relu(f))
    }
}
