//! The U-shaped graph convolutional network.
//!
//! ```text
//! 2D (N,T,M,2) -> embed -> down1 .. down9 ---------------------------.
//!                           stride 2 at 2,4,6,8; the last feature at    |
//!                           each temporal resolution is cached          |
//!                                                                      v
//!           up1 -> x2 -> +cache -> up2 -> x2 -> +cache -> ... -> up4 -> x2 -> +cache
//!            |                     |                               |
//!            '---- upsample to T, 1x1 transform, sum (merge) ------'
//!                                   |
//!                          st-gcn regressor -> 3D (N,T,M,3), root at origin
//! ```
//!
//! With fewer strided blocks (the ablation that removes down/up pairs) the
//! last `p` up units upsample and the earlier ones stay at the bottleneck
//! resolution, so every skip addition still pairs equal shapes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::array::Array;
use crate::error::{mismatch, Error, Result};
use crate::graph::{JointMatrix, Var};
use crate::nn::{init_uniform, BlockSpec, Mode, ParamId, ParamStore, RunningStats, Session, StgcnBlock};
use crate::pose::PoseSequence;
use crate::skeleton::{PartitionedAdjacency, SkeletonTopology};

/// Block positions (1-based) that downsample in the standard network.
pub const STANDARD_STRIDED: [usize; 4] = [2, 4, 6, 8];

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct ModelConfig {
    /// Input window length `T`.
    pub frames: usize,
    pub num_joints: usize,
    /// Channel width of every hidden feature map.
    pub channels: usize,
    pub down_blocks: usize,
    /// 1-based positions of the stride-2 downsampling blocks.
    pub strided: Vec<usize>,
    pub up_blocks: usize,
    pub kernel: usize,
    pub dropout: f64,
    /// Fuse every upsampling-stage scale before the regressor.
    pub merge: bool,
    /// Identity shortcut inside stride-1 blocks (off in the standard network).
    pub residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            frames: 96,
            num_joints: 17,
            channels: 64,
            down_blocks: 9,
            strided: STANDARD_STRIDED.to_vec(),
            up_blocks: 4,
            kernel: 5,
            dropout: 0.5,
            merge: true,
            residual: false,
        }
    }
}

impl ModelConfig {
    /// Keeps only the first `pairs` downsample/upsample pairs.
    pub fn with_sampling_pairs(mut self, pairs: usize) -> Self {
        self.strided = STANDARD_STRIDED.iter().copied().take(pairs).collect();
        self
    }

    pub fn sampling_pairs(&self) -> usize {
        self.strided.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        let p = self.strided.len();
        let factor = 1usize << p;
        if self.frames == 0 || self.frames % factor != 0 {
            return bad(format!(
                "frames ({}) must be divisible by {factor} for {p} stride-2 blocks",
                self.frames
            ));
        }
        if self.channels == 0 || self.num_joints == 0 {
            return bad("channels and num_joints must be positive".into());
        }
        if self.kernel % 2 == 0 {
            return bad(format!("temporal kernel {} must be odd", self.kernel));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        if self.strided.windows(2).any(|w| w[0] >= w[1])
            || self.strided.iter().any(|&s| s == 0 || s > self.down_blocks)
        {
            return bad(format!(
                "strided positions {:?} must be increasing within 1..={}",
                self.strided, self.down_blocks
            ));
        }
        if self.up_blocks == 0 || self.up_blocks < p {
            return bad(format!("{} up blocks cannot undo {p} downsamplings", self.up_blocks));
        }
        Ok(())
    }
}

/// One upsampling-stage unit: st-gcn block, optional x2 upsampling, skip add.
#[derive(Debug, Clone, PartialEq)]
pub struct UpUnit {
    pub block: StgcnBlock,
    pub upsample: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    pub spatial: [ParamId; 3],
    pub temporal: ParamId,
    pub bias: ParamId,
}

/// Shapes observed during a forward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForwardTrace {
    /// Temporal length after the embedding and after each down block.
    pub down_frames: Vec<usize>,
    /// `(frames, shape)` of every cached downsample feature.
    pub cached: Vec<(usize, Vec<usize>)>,
    /// `(upsample branch shape, cached feature shape)` of every skip addition.
    pub skips: Vec<(Vec<usize>, Vec<usize>)>,
    /// Temporal length after each up unit.
    pub up_frames: Vec<usize>,
    /// Shapes of the merge-stage inputs after transformation.
    pub merged: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UgcnModel {
    config: ModelConfig,
    topology: SkeletonTopology,
    adjacency: PartitionedAdjacency,
    root_mix: JointMatrix,
    params: ParamStore,
    stats: Vec<RunningStats>,
    embed: StgcnBlock,
    down: Vec<StgcnBlock>,
    up: Vec<UpUnit>,
    merge: Vec<ParamId>,
    regressor: Regressor,
}

/// Builds a model with parameters drawn deterministically from `seed`.
pub fn build_model(config: ModelConfig, topology: &SkeletonTopology, seed: u64) -> Result<UgcnModel> {
    UgcnModel::build(config, topology, seed)
}

impl UgcnModel {
    pub fn build(config: ModelConfig, topology: &SkeletonTopology, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.num_joints != topology.num_joints() {
            return Err(Error::InvalidConfig(format!(
                "config has {} joints, topology has {}",
                config.num_joints,
                topology.num_joints()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        let mut stats = Vec::new();
        let c = config.channels;
        let mut block = |name: &str, c_in: usize, stride: usize, rng: &mut ChaCha8Rng| {
            let spec = BlockSpec {
                name,
                c_in,
                c_out: c,
                kernel: config.kernel,
                stride,
                dropout: config.dropout,
                residual: config.residual,
            };
            StgcnBlock::new(&mut params, &mut stats, &spec, rng)
        };

        let embed = block("embed", 2, 1, &mut rng);
        let down: Vec<StgcnBlock> = (1..=config.down_blocks)
            .map(|i| {
                let stride = if config.strided.contains(&i) { 2 } else { 1 };
                block(&format!("down{i}"), c, stride, &mut rng)
            })
            .collect();
        let p = config.sampling_pairs();
        let up: Vec<UpUnit> = (1..=config.up_blocks)
            .map(|i| UpUnit {
                block: block(&format!("up{i}"), c, 1, &mut rng),
                upsample: i > config.up_blocks - p,
            })
            .collect();
        let merge = if config.merge {
            (1..=config.up_blocks)
                .map(|i| params.add(format!("merge{i}"), init_uniform(&mut rng, &[c, c, 1], c), true))
                .collect()
        } else {
            Vec::new()
        };
        let regressor = Regressor {
            spatial: [0, 1, 2].map(|l| {
                params.add(format!("regressor.spatial{l}"), init_uniform(&mut rng, &[c, c, 1], c), true)
            }),
            temporal: params.add(
                "regressor.temporal",
                init_uniform(&mut rng, &[3, c, config.kernel], c * config.kernel),
                true,
            ),
            bias: params.add("regressor.bias", Array::zeros([3]), false),
        };

        let m = topology.num_joints();
        let root = topology.root();
        let dense: Vec<f64> = (0..m * m)
            .map(|k| {
                let (j, i) = (k / m, k % m);
                f64::from(u8::from(i == j)) - f64::from(u8::from(i == root))
            })
            .collect();
        Ok(Self {
            adjacency: topology.partition(),
            root_mix: JointMatrix::from_dense(m, &dense),
            topology: topology.clone(),
            config,
            params,
            stats,
            embed,
            down,
            up,
            merge,
            regressor,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn topology(&self) -> &SkeletonTopology {
        &self.topology
    }

    pub fn adjacency(&self) -> &PartitionedAdjacency {
        &self.adjacency
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn stats(&self) -> &[RunningStats] {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut [RunningStats] {
        &mut self.stats
    }

    pub fn session(&self, mode: Mode, seed: u64) -> Session<'_> {
        Session::new(&self.params, &self.stats, mode, seed)
    }

    /// Temporal lengths the standard forward pass visits, top to bottom.
    pub fn resolution_ladder(&self) -> Vec<usize> {
        let mut t = self.config.frames;
        let mut ladder = vec![t];
        for i in 1..=self.config.down_blocks {
            if self.config.strided.contains(&i) {
                t = t.div_ceil(2);
                ladder.push(t);
            }
        }
        ladder
    }

    /// `input` is `(N, T, M, 2)`; returns `(N, T, M, 3)` root-relative poses.
    pub fn forward(&self, s: &mut Session<'_>, input: Var) -> Result<Var> {
        self.forward_traced(s, input).map(|(v, _)| v)
    }

    pub fn forward_traced(&self, s: &mut Session<'_>, input: Var) -> Result<(Var, ForwardTrace)> {
        let cfg = &self.config;
        let shape = s.graph.shape(input).to_vec();
        if shape.len() != 4 || shape[1] != cfg.frames || shape[2] != cfg.num_joints || shape[3] != 2 {
            return Err(mismatch("UgcnModel::forward", &shape, &[0, cfg.frames, cfg.num_joints, 2]));
        }
        let adj = &self.adjacency;
        let mut trace = ForwardTrace::default();
        let frames_of = |s: &Session<'_>, v: Var| s.graph.shape(v)[2];

        let x = s.graph.permute(input, &[0, 3, 1, 2])?;
        let mut f = self.embed.forward(s, x, adj)?;
        trace.down_frames.push(frames_of(s, f));

        // Last feature at each temporal length, finest first.
        let mut cache: Vec<(usize, Var)> = Vec::new();
        let remember = |cache: &mut Vec<(usize, Var)>, t: usize, v: Var| match cache.iter_mut().find(|(ct, _)| *ct == t) {
            Some(slot) => slot.1 = v,
            None => cache.push((t, v)),
        };
        for block in &self.down {
            f = block.forward(s, f, adj)?;
            let t = frames_of(s, f);
            trace.down_frames.push(t);
            remember(&mut cache, t, f);
        }
        for &(t, v) in &cache {
            trace.cached.push((t, s.graph.shape(v).to_vec()));
        }

        let mut scales = Vec::with_capacity(self.up.len());
        for unit in &self.up {
            f = unit.block.forward(s, f, adj)?;
            if unit.upsample {
                f = s.graph.temporal_upsample(f)?;
            }
            let t = frames_of(s, f);
            let &(_, skip) = cache
                .iter()
                .find(|(ct, _)| *ct == t)
                .ok_or_else(|| mismatch("skip connection", s.graph.shape(f), &[t]))?;
            trace.skips.push((s.graph.shape(f).to_vec(), s.graph.shape(skip).to_vec()));
            f = s.graph.add(f, skip)?;
            trace.up_frames.push(t);
            scales.push(f);
        }

        let fused = if self.merge.is_empty() {
            f
        } else {
            let mut acc: Option<Var> = None;
            for (&scale, &w) in scales.iter().zip(&self.merge) {
                let mut v = scale;
                while frames_of(s, v) < cfg.frames {
                    v = s.graph.temporal_upsample(v)?;
                }
                let w = s.param(w);
                let v = s.graph.conv_time(v, w, 1)?;
                trace.merged.push(s.graph.shape(v).to_vec());
                acc = Some(match acc {
                    Some(a) => s.graph.add(a, v)?,
                    None => v,
                });
            }
            acc.expect("merge has at least one scale")
        };

        let r = &self.regressor;
        let w = r.spatial.map(|id| s.param(id));
        let y = crate::nn::spatial_graph_conv(&mut s.graph, fused, adj, w)?;
        let tw = s.param(r.temporal);
        let y = s.graph.conv_time(y, tw, 1)?;
        let b = s.param(r.bias);
        let y = s.graph.channel_bias(y, b)?;
        let y = s.graph.joint_mix(y, &self.root_mix)?;
        let out = s.graph.permute(y, &[0, 2, 3, 1])?;
        Ok((out, trace))
    }

    /// Eval-mode prediction for a batch of equally shaped 2D windows.
    pub fn predict(&self, inputs: &[PoseSequence]) -> Result<Vec<PoseSequence>> {
        let batch = PoseSequence::stack(inputs)?;
        let mut s = self.session(Mode::Eval, 0);
        let x = s.graph.constant(batch);
        let y = self.forward(&mut s, x)?;
        PoseSequence::unstack(s.graph.value(y))
    }

    /// Overwrites parameter values and running statistics by name.
    pub fn load_state(&mut self, params: &[(alloc::string::String, Array)], stats: &[RunningStats]) -> Result<()> {
        for (name, value) in params {
            let id = self
                .params
                .find(name)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown parameter {name}")))?;
            let slot = &mut self.params.get_mut(id).value;
            if slot.shape() != value.shape() {
                return Err(mismatch("load_state", slot.shape(), value.shape()));
            }
            *slot = value.clone();
        }
        for st in stats {
            let slot = self
                .stats
                .iter_mut()
                .find(|s| s.name == st.name)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown statistics {}", st.name)))?;
            if slot.mean.len() != st.mean.len() || slot.var.len() != st.var.len() {
                return Err(mismatch("load_state", &[slot.mean.len()], &[st.mean.len()]));
            }
            *slot = st.clone();
        }
        Ok(())
    }
}
