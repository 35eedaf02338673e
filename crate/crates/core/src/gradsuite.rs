//! The finite-difference suite: every differentiable op, each motion-loss
//! operator and a complete tiny network, on random inputs per seed.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::array::Array;
use crate::error::{Error, Result};
use crate::gradcheck::{grad_check_many, GradCheckOptions, GradCheckReport};
use crate::graph::{BatchNormMode, Graph, JointMatrix, Var};
use crate::loss::{combined_loss, derivative_loss, motion_loss, position_loss, LossConfig, MotionNorm, MotionOperator};
use crate::model::{build_model, ModelConfig, UgcnModel};
use crate::nn::{spatial_graph_conv, BlockSpec, Mode, ParamStore, RunningStats, Session, StgcnBlock};
use crate::skeleton::SkeletonTopology;

type Objective = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

pub const CASES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "abs",
    "square",
    "matmul",
    "conv_time",
    "conv_time_stride2",
    "joint_mix",
    "channel_bias",
    "batch_norm_train",
    "batch_norm_eval",
    "temporal_upsample",
    "permute",
    "reshape",
    "slice",
    "cross",
    "norm_last",
    "sum_axes",
    "mean_axes",
    "mean_all",
    "spatial_graph_conv",
    "stgcn_block",
    "motion_subtraction",
    "motion_inner_product",
    "motion_cross_product",
    "motion_cross_l2",
    "position_loss",
    "combined_loss",
    "derivative_loss",
    "tiny_ugcn",
];

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: &'static str,
    pub seed: u64,
    pub report: GradCheckReport,
}

/// Tiny network configuration used by the suite.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        frames: 16,
        num_joints: 3,
        channels: 4,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

pub fn tiny_topology() -> SkeletonTopology {
    SkeletonTopology::new(3, &[(0, 1), (1, 2)], 0, &[0, 1, 2]).expect("valid chain")
}

fn small_tree() -> SkeletonTopology {
    SkeletonTopology::new(5, &[(0, 1), (1, 2), (0, 3), (3, 4)], 0, &[0, 3, 4, 1, 2]).expect("valid tree")
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
    Array::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `sum(y * r)` for a fixed random `r`, so every output element matters.
fn project(g: &mut Graph, y: Var, r: &Array) -> Result<Var> {
    let c = g.constant(r.clone());
    let p = g.mul(y, c)?;
    Ok(g.sum_all(p))
}

fn projected(rng: &mut ChaCha8Rng, shape: &[usize], f: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static) -> Objective {
    let r = uniform(rng, shape);
    Box::new(move |g, v| {
        let y = f(g, v)?;
        project(g, y, &r)
    })
}

fn setup(name: &str, rng: &mut ChaCha8Rng) -> Result<(Vec<Array>, Objective)> {
    let x4 = [2, 3, 5, 4];
    let case = match name {
        "add" | "sub" | "mul" => {
            let ins = vec![uniform(rng, &x4), uniform(rng, &x4)];
            let f: Objective = match name {
                "add" => projected(rng, &x4, |g, v| g.add(v[0], v[1])),
                "sub" => projected(rng, &x4, |g, v| g.sub(v[0], v[1])),
                _ => projected(rng, &x4, |g, v| g.mul(v[0], v[1])),
            };
            (ins, f)
        }
        "scale" => (vec![uniform(rng, &x4)], projected(rng, &x4, |g, v| Ok(g.scale(v[0], -1.7)))),
        "relu" => (vec![uniform(rng, &x4)], projected(rng, &x4, |g, v| Ok(g.relu(v[0])))),
        "abs" => (vec![uniform(rng, &x4)], projected(rng, &x4, |g, v| Ok(g.abs(v[0])))),
        "square" => (vec![uniform(rng, &x4)], projected(rng, &x4, |g, v| Ok(g.square(v[0])))),
        "matmul" => (
            vec![uniform(rng, &[3, 4]), uniform(rng, &[4, 2])],
            projected(rng, &[3, 2], |g, v| g.matmul(v[0], v[1])),
        ),
        "conv_time" => (
            vec![uniform(rng, &[2, 3, 7, 4]), uniform(rng, &[5, 3, 3])],
            projected(rng, &[2, 5, 7, 4], |g, v| g.conv_time(v[0], v[1], 1)),
        ),
        "conv_time_stride2" => (
            vec![uniform(rng, &[2, 3, 7, 4]), uniform(rng, &[5, 3, 5])],
            projected(rng, &[2, 5, 4, 4], |g, v| g.conv_time(v[0], v[1], 2)),
        ),
        "joint_mix" => {
            let dense: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mix = JointMatrix::from_dense(4, &dense);
            (vec![uniform(rng, &x4)], projected(rng, &x4, move |g, v| g.joint_mix(v[0], &mix)))
        }
        "channel_bias" => (
            vec![uniform(rng, &x4), uniform(rng, &[3])],
            projected(rng, &x4, |g, v| g.channel_bias(v[0], v[1])),
        ),
        "batch_norm_train" => (
            vec![uniform(rng, &x4), uniform(rng, &[3]), uniform(rng, &[3])],
            projected(rng, &x4, |g, v| Ok(g.batch_norm(v[0], v[1], v[2], BatchNormMode::Train)?.0)),
        ),
        "batch_norm_eval" => {
            let mean: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
            let var: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..2.0)).collect();
            (
                vec![uniform(rng, &x4), uniform(rng, &[3]), uniform(rng, &[3])],
                projected(rng, &x4, move |g, v| {
                    Ok(g.batch_norm(v[0], v[1], v[2], BatchNormMode::Eval { mean: &mean, var: &var })?.0)
                }),
            )
        }
        "temporal_upsample" => (vec![uniform(rng, &x4)], projected(rng, &[2, 3, 10, 4], |g, v| g.temporal_upsample(v[0]))),
        "permute" => (vec![uniform(rng, &x4)], projected(rng, &[2, 4, 3, 5], |g, v| g.permute(v[0], &[0, 3, 1, 2]))),
        "reshape" => (vec![uniform(rng, &x4)], projected(rng, &[6, 20], |g, v| g.reshape(v[0], &[6, 20]))),
        "slice" => (vec![uniform(rng, &x4)], projected(rng, &[2, 3, 2, 4], |g, v| g.slice(v[0], 2, 1, 2))),
        "cross" => (
            vec![uniform(rng, &[4, 3]), uniform(rng, &[4, 3])],
            projected(rng, &[4, 3], |g, v| g.cross(v[0], v[1])),
        ),
        "norm_last" => (vec![uniform(rng, &[4, 3])], projected(rng, &[4], |g, v| g.norm_last(v[0]))),
        "sum_axes" => (vec![uniform(rng, &x4)], projected(rng, &[3, 4], |g, v| g.sum(v[0], &[0, 2]))),
        "mean_axes" => (vec![uniform(rng, &x4)], projected(rng, &[2, 5], |g, v| g.mean(v[0], &[1, 3]))),
        "mean_all" => (vec![uniform(rng, &x4)], Box::new(|g: &mut Graph, v: &[Var]| Ok(g.mean_all(v[0]))) as Objective),
        "spatial_graph_conv" => {
            let adj = small_tree().partition();
            (
                vec![uniform(rng, &[2, 3, 4, 5]), uniform(rng, &[4, 3]), uniform(rng, &[4, 3]), uniform(rng, &[4, 3])],
                projected(rng, &[2, 4, 4, 5], move |g, v| spatial_graph_conv(g, v[0], &adj, [v[1], v[2], v[3]])),
            )
        }
        "stgcn_block" => {
            let adj = small_tree().partition();
            let mut store = ParamStore::default();
            let mut stats = Vec::new();
            let spec = BlockSpec {
                name: "b",
                c_in: 3,
                c_out: 4,
                kernel: 3,
                stride: 2,
                dropout: 0.3,
                residual: false,
            };
            let block = StgcnBlock::new(&mut store, &mut stats, &spec, rng);
            let mut ins = vec![uniform(rng, &[2, 3, 6, 5])];
            ins.extend(store.iter().map(|p| p.value.clone()));
            let mask_seed = rng.random();
            let f = projected(rng, &[2, 4, 3, 5], move |g, v| {
                with_session(g, &store, &stats, Mode::Train, mask_seed, &v[1..], |s| block.forward(s, v[0], &adj))
            });
            (ins, f)
        }
        "motion_subtraction" | "motion_inner_product" | "motion_cross_product" | "motion_cross_l2" => {
            let (operator, norm) = match name {
                "motion_subtraction" => (MotionOperator::Subtraction, MotionNorm::L1),
                "motion_inner_product" => (MotionOperator::InnerProduct, MotionNorm::L1),
                "motion_cross_product" => (MotionOperator::CrossProduct, MotionNorm::L1),
                _ => (MotionOperator::CrossProduct, MotionNorm::L2),
            };
            let cfg = LossConfig {
                operator,
                intervals: vec![1, 3, 5],
                lambda: 1.0,
                norm,
            };
            let gt = uniform(rng, &[2, 8, 3, 3]);
            let f: Objective = Box::new(move |g, v| {
                let gt = g.constant(gt.clone());
                motion_loss(g, v[0], gt, &cfg)
            });
            (vec![uniform(rng, &[2, 8, 3, 3])], f)
        }
        "position_loss" | "combined_loss" | "derivative_loss" => {
            let gt = uniform(rng, &[2, 8, 3, 3]);
            let which = match name {
                "position_loss" => 0,
                "derivative_loss" => 1,
                _ => 2,
            };
            let f: Objective = Box::new(move |g, v| {
                let gt = g.constant(gt.clone());
                match which {
                    0 => position_loss(g, v[0], gt),
                    1 => derivative_loss(g, v[0], gt),
                    _ => {
                        let cfg = LossConfig {
                            intervals: vec![2, 4],
                            lambda: 0.7,
                            ..LossConfig::default()
                        };
                        Ok(combined_loss(g, v[0], gt, &cfg)?.total)
                    }
                }
            });
            (vec![uniform(rng, &[2, 8, 3, 3])], f)
        }
        "tiny_ugcn" => {
            let seed = rng.random();
            let model = build_model(tiny_model_config(), &tiny_topology(), seed)?;
            tiny_model_objective(model, rng, None)
        }
        _ => return Err(Error::InvalidConfig(alloc::format!("unknown gradient case {name}"))),
    };
    Ok(case)
}

/// Runs `f` in a session recording onto `g`, with parameter `i` bound to
/// `params[i]`.
fn with_session(
    g: &mut Graph,
    store: &ParamStore,
    stats: &[RunningStats],
    mode: Mode,
    seed: u64,
    params: &[Var],
    f: impl FnOnce(&mut Session<'_>) -> Result<Var>,
) -> Result<Var> {
    let mut s = Session::with_graph(core::mem::take(g), store, stats, mode, seed);
    for (i, &v) in params.iter().enumerate() {
        s.bind(crate::nn::ParamId(i), v);
    }
    let out = f(&mut s);
    *g = s.graph;
    out
}

/// The tiny network's projected output as a function of its input and every
/// parameter. `fault` scales the adjoint flowing out of the network.
fn tiny_model_objective(model: UgcnModel, rng: &mut ChaCha8Rng, fault: Option<f64>) -> (Vec<Array>, Objective) {
    let c = model.config();
    let (t, m) = (c.frames, c.num_joints);
    let mut ins = vec![uniform(rng, &[2, t, m, 2])];
    ins.extend(model.params().iter().map(|p| p.value.clone()));
    let r = uniform(rng, &[2, t, m, 3]);
    let f: Objective = Box::new(move |g, v| {
        let y = with_session(g, model.params(), model.stats(), Mode::Train, 0, &v[1..], |s| {
            s.dropout_enabled = false;
            model.forward(s, v[0])
        })?;
        let y = match fault {
            Some(k) => {
                let val = g.value(y).clone();
                g.custom(&[y], val, move |_, _, gr| vec![gr.map(|d| d * k)])
            }
            None => y,
        };
        project(g, y, &r)
    });
    (ins, f)
}

fn case_rng(name: &str, seed: u64) -> ChaCha8Rng {
    let tag = name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3));
    ChaCha8Rng::seed_from_u64(seed ^ tag)
}

pub fn run_case(name: &str, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = case_rng(name, seed);
    let (inputs, f) = setup(name, &mut rng)?;
    grad_check_many(f, &inputs, opts)
}

/// Every case for seeds `0..seeds`.
pub fn run_suite(seeds: u64, opts: &GradCheckOptions) -> Result<Vec<CaseResult>> {
    let mut out = Vec::with_capacity(CASES.len() * seeds as usize);
    for &name in CASES {
        for seed in 0..seeds {
            out.push(CaseResult {
                name,
                seed,
                report: run_case(name, seed, opts)?,
            });
        }
    }
    Ok(out)
}

/// Negative control: the tiny network with its output adjoint scaled by
/// `1 + error`. The checker must reject it.
pub fn run_fault_injected(seed: u64, error: f64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = case_rng("fault", seed);
    let model = build_model(tiny_model_config(), &tiny_topology(), rng.random())?;
    let (inputs, f) = tiny_model_objective(model, &mut rng, Some(1.0 + error));
    grad_check_many(f, &inputs, opts)
}
