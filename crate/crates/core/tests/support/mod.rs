//! Brute-force reference implementations shared by the oracle tests and the
//! acceptance target. Nothing here calls into the code under test except to
//! obtain the value being checked.

#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ugcn_core::array::Array;
use ugcn_core::loss::{motion_loss, motion_loss_value, position_loss_value, LossConfig, MotionNorm, MotionOperator};
use ugcn_core::metrics;
use ugcn_core::nn::{spatial_graph_conv, ParamStore};
use ugcn_core::optim::{adam_step, AdamConfig, OptimizerState};
use ugcn_core::{Graph, PoseSequence, SkeletonTopology};

pub const TOL: f64 = 1e-9;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_pose(rng: &mut ChaCha8Rng, frames: usize, joints: usize, dims: usize, scale: f64) -> PoseSequence {
    PoseSequence::new(frames, joints, dims, uniform(rng, frames * joints * dims, scale)).unwrap()
}

/// Random labelled tree with a random root; the mirror map is the identity.
pub fn random_tree(rng: &mut ChaCha8Rng, joints: usize) -> SkeletonTopology {
    let mut label: Vec<usize> = (0..joints).collect();
    label.shuffle(rng);
    let edges: Vec<(usize, usize)> = (1..joints)
        .map(|j| (label[rng.random_range(0..j)], label[j]))
        .collect();
    let root = rng.random_range(0..joints);
    let mirror: Vec<usize> = (0..joints).collect();
    SkeletonTopology::new(joints, &edges, root, &mirror).unwrap()
}

/// All-pairs hop counts by Floyd-Warshall, read off at the root.
pub fn hops_reference(topo: &SkeletonTopology) -> Vec<usize> {
    let m = topo.num_joints();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; m]; m];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for &(a, b) in topo.edges() {
        d[a][b] = 1;
        d[b][a] = 1;
    }
    for k in 0..m {
        for i in 0..m {
            for j in 0..m {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    (0..m).map(|j| d[topo.root()][j]).collect()
}

/// Label-wise normalized adjacency built directly from the edge list.
pub fn partition_reference(topo: &SkeletonTopology) -> [Vec<f64>; 3] {
    let m = topo.num_joints();
    let h = hops_reference(topo);
    let linked = |a: usize, b: usize| a == b || topo.edges().iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a));
    let label = |j: usize, i: usize| {
        if h[i] == h[j] {
            0
        } else if h[i] > h[j] {
            1
        } else {
            2
        }
    };
    let mut out = [vec![0.0; m * m], vec![0.0; m * m], vec![0.0; m * m]];
    for j in 0..m {
        for (l, mat) in out.iter_mut().enumerate() {
            let members: Vec<usize> = (0..m).filter(|&i| linked(j, i) && label(j, i) == l).collect();
            for &i in &members {
                mat[j * m + i] = 1.0 / members.len() as f64;
            }
        }
    }
    out
}

/// Spatial graph convolution on a random tree against the quadruple sum
/// over subsets, input channels and neighbours. Returns the max abs error.
pub fn gconv_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let m = r.random_range(2..9);
    let topo = random_tree(&mut r, m);
    let adj = topo.partition();
    let (n, ci, co, t) = (r.random_range(1..3), r.random_range(1..5), r.random_range(1..5), r.random_range(1..6));
    let x = uniform(&mut r, n * ci * t * m, 1.0);
    let ws: Vec<Vec<f64>> = (0..3).map(|_| uniform(&mut r, co * ci, 1.0)).collect();

    let mut g = Graph::new();
    let xv = g.constant(Array::new(vec![n, ci, t, m], x.clone()).unwrap());
    let wv = [0, 1, 2].map(|l| g.constant(Array::new(vec![co, ci], ws[l].clone()).unwrap()));
    let y = spatial_graph_conv(&mut g, xv, &adj, wv).unwrap();
    let got = g.value(y);
    assert_eq!(got.shape(), &[n, co, t, m]);

    let mut worst: f64 = 0.0;
    for b in 0..n {
        for o in 0..co {
            for tt in 0..t {
                for j in 0..m {
                    let mut acc = 0.0;
                    for (l, w) in ws.iter().enumerate() {
                        for c in 0..ci {
                            for i in 0..m {
                                acc += w[o * ci + c] * adj.entry(l, j, i) * x[((b * ci + c) * t + tt) * m + i];
                            }
                        }
                    }
                    worst = worst.max((acc - got.at(&[b, o, tt, j])).abs());
                }
            }
        }
    }
    worst
}

fn encode(op: MotionOperator, a: &[f64], b: &[f64]) -> Vec<f64> {
    match op {
        MotionOperator::Subtraction => a.iter().zip(b).map(|(x, y)| x - y).collect(),
        MotionOperator::InnerProduct => vec![a.iter().zip(b).map(|(x, y)| x * y).sum()],
        MotionOperator::CrossProduct => vec![
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ],
    }
}

/// Triple loop over intervals, frames and joints.
pub fn motion_loss_reference(pred: &PoseSequence, gt: &PoseSequence, cfg: &LossConfig) -> f64 {
    let mut total = 0.0;
    for &tau in &cfg.intervals {
        for t in 0..pred.frames() - tau {
            for j in 0..pred.joints() {
                let ep = encode(cfg.operator, pred.point(t, j), pred.point(t + tau, j));
                let eg = encode(cfg.operator, gt.point(t, j), gt.point(t + tau, j));
                let d: Vec<f64> = ep.iter().zip(&eg).map(|(x, y)| x - y).collect();
                total += match cfg.norm {
                    MotionNorm::L1 => d.iter().map(|v| v.abs()).sum::<f64>(),
                    MotionNorm::L2 => d.iter().map(|v| v * v).sum::<f64>().sqrt(),
                };
            }
        }
    }
    total
}

pub const OPERATORS: [MotionOperator; 3] = [
    MotionOperator::Subtraction,
    MotionOperator::InnerProduct,
    MotionOperator::CrossProduct,
];

/// Motion loss for every operator and both norms, through the plain-value
/// entry point and through a batched graph. Returns the max abs error.
pub fn motion_loss_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (t, m) = (r.random_range(3..12), r.random_range(1..4));
    let mut intervals: Vec<usize> = (1..t).filter(|_| r.random_bool(0.5)).collect();
    if intervals.is_empty() {
        intervals.push(1);
    }
    let batch: Vec<(PoseSequence, PoseSequence)> = (0..2)
        .map(|_| (random_pose(&mut r, t, m, 3, 2.0), random_pose(&mut r, t, m, 3, 2.0)))
        .collect();
    let mut worst: f64 = 0.0;
    for op in OPERATORS {
        for norm in [MotionNorm::L1, MotionNorm::L2] {
            let cfg = LossConfig {
                operator: op,
                intervals: intervals.clone(),
                lambda: 1.0,
                norm,
            };
            let mut expected_batch = 0.0;
            for (p, q) in &batch {
                let expected = motion_loss_reference(p, q, &cfg);
                expected_batch += expected;
                worst = worst.max((motion_loss_value(p, q, &cfg).unwrap() - expected).abs());
            }
            let preds: Vec<PoseSequence> = batch.iter().map(|b| b.0.clone()).collect();
            let gts: Vec<PoseSequence> = batch.iter().map(|b| b.1.clone()).collect();
            let mut g = Graph::new();
            let pv = g.leaf(PoseSequence::stack(&preds).unwrap());
            let gv = g.constant(PoseSequence::stack(&gts).unwrap());
            let l = motion_loss(&mut g, pv, gv, &cfg).unwrap();
            worst = worst.max((g.value(l).item() - expected_batch).abs());
        }
    }
    worst
}

pub fn position_loss_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (t, m, d) = (r.random_range(1..10), r.random_range(1..6), r.random_range(1..4));
    let p = random_pose(&mut r, t, m, d, 5.0);
    let q = random_pose(&mut r, t, m, d, 5.0);
    let mut expected = 0.0;
    for (a, b) in p.data().iter().zip(q.data()) {
        expected += (a - b) * (a - b);
    }
    (position_loss_value(&p, &q).unwrap() - expected).abs()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn p1_reference(p: &PoseSequence, g: &PoseSequence, root: usize) -> f64 {
    let mut sum = 0.0;
    for t in 0..g.frames() {
        for j in 0..g.joints() {
            let a: Vec<f64> = (0..3).map(|k| p.point(t, j)[k] - p.point(t, root)[k]).collect();
            let b: Vec<f64> = (0..3).map(|k| g.point(t, j)[k] - g.point(t, root)[k]).collect();
            sum += dist(&a, &b);
        }
    }
    sum / (g.frames() * g.joints()) as f64
}

/// Umeyama similarity fit of one frame via SVD of the cross-covariance.
pub fn umeyama_aligned(pred: &[f64], gt: &[f64]) -> Vec<Vector3<f64>> {
    let pts = |f: &[f64]| -> Vec<Vector3<f64>> { f.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect() };
    let (x, y) = (pts(pred), pts(gt));
    let n = x.len() as f64;
    let mx = x.iter().sum::<Vector3<f64>>() / n;
    let my = y.iter().sum::<Vector3<f64>>() / n;
    let xc: Vec<Vector3<f64>> = x.iter().map(|v| v - mx).collect();
    let yc: Vec<Vector3<f64>> = y.iter().map(|v| v - my).collect();
    let mut cov = Matrix3::zeros();
    for (a, b) in xc.iter().zip(&yc) {
        cov += b * a.transpose();
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = if (u * vt).determinant() < 0.0 { -1.0 } else { 1.0 };
    let s = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rot = u * s * vt;
    let trace = svd.singular_values[0] + svd.singular_values[1] + d * svd.singular_values[2];
    let var: f64 = xc.iter().map(|v| v.norm_squared()).sum();
    let scale = trace / var;
    xc.iter().map(|v| scale * rot * v + my).collect()
}

pub fn p2_reference(p: &PoseSequence, g: &PoseSequence) -> f64 {
    let mut sum = 0.0;
    for t in 0..g.frames() {
        let aligned = umeyama_aligned(p.frame(t), g.frame(t));
        for (j, a) in aligned.iter().enumerate() {
            sum += dist(a.as_slice(), g.point(t, j));
        }
    }
    sum / (g.frames() * g.joints()) as f64
}

pub fn mpjve_reference(p: &PoseSequence, g: &PoseSequence, root: usize) -> f64 {
    let mut sum = 0.0;
    for t in 1..g.frames() {
        for j in 0..g.joints() {
            let v = |s: &PoseSequence, k: usize| {
                (s.point(t, j)[k] - s.point(t, root)[k]) - (s.point(t - 1, j)[k] - s.point(t - 1, root)[k])
            };
            let d: Vec<f64> = (0..3).map(|k| v(p, k) - v(g, k)).collect();
            sum += d.iter().map(|x| x * x).sum::<f64>().sqrt();
        }
    }
    sum / ((g.frames() - 1) * g.joints()) as f64
}

/// `(PCK@150, AUC over 5..=150 step 5)`.
pub fn pck_auc_reference(p: &PoseSequence, g: &PoseSequence, root: usize) -> (f64, f64) {
    let pck = |th: f64| {
        let mut hit = 0usize;
        for t in 0..g.frames() {
            for j in 0..g.joints() {
                let a: Vec<f64> = (0..3).map(|k| p.point(t, j)[k] - p.point(t, root)[k]).collect();
                let b: Vec<f64> = (0..3).map(|k| g.point(t, j)[k] - g.point(t, root)[k]).collect();
                if dist(&a, &b) < th {
                    hit += 1;
                }
            }
        }
        hit as f64 / (g.frames() * g.joints()) as f64
    };
    let auc = (1..=30).map(|k| pck(5.0 * k as f64)).sum::<f64>() / 30.0;
    (pck(150.0), auc)
}

/// A random metric instance: ground truth plus a perturbation of random size,
/// so errors straddle the PCK thresholds.
pub fn metric_instance(r: &mut ChaCha8Rng) -> (PoseSequence, PoseSequence, usize) {
    let (t, m) = (r.random_range(2..8), r.random_range(3..10));
    let gt = random_pose(r, t, m, 3, 400.0);
    let noise = r.random_range(1.0..200.0);
    let mut pred = gt.clone();
    pred.data_mut().iter_mut().for_each(|v| *v += r.random_range(-noise..noise));
    (pred, gt, r.random_range(0..m))
}

/// Max abs errors of `[P1, P2, MPJVE, PCK, AUC]` against the references.
pub fn metrics_case(seed: u64) -> [f64; 5] {
    let mut r = rng(seed);
    let (p, g, root) = metric_instance(&mut r);
    let (pck, auc) = metrics::pck_auc(&p, &g, root).unwrap();
    let (pck_ref, auc_ref) = pck_auc_reference(&p, &g, root);
    [
        (metrics::mpjpe_p1(&p, &g, root).unwrap() - p1_reference(&p, &g, root)).abs(),
        (metrics::mpjpe_p2(&p, &g).unwrap() - p2_reference(&p, &g)).abs(),
        (metrics::mpjve(&p, &g, root).unwrap() - mpjve_reference(&p, &g, root)).abs(),
        (pck - pck_ref).abs(),
        (auc - auc_ref).abs(),
    ]
}

/// 100 Adam steps against a scalar-at-a-time reference. Returns the max abs
/// parameter difference.
pub fn adam_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let cfg = AdamConfig {
        weight_decay: 1e-2,
        ..AdamConfig::default()
    };
    let mut store = ParamStore::default();
    let shapes = [vec![3, 2], vec![4], vec![1]];
    for (k, s) in shapes.iter().enumerate() {
        let n = s.iter().product();
        store.add(format!("p{k}"), Array::new(s.clone(), uniform(&mut r, n, 1.0)).unwrap(), k != 1);
    }
    let mut theta: Vec<Vec<f64>> = store.iter().map(|p| p.value.data().to_vec()).collect();
    let decays: Vec<bool> = store.iter().map(|p| p.decay).collect();
    let mut m: Vec<Vec<f64>> = theta.iter().map(|v| vec![0.0; v.len()]).collect();
    let mut v = m.clone();
    let mut state = OptimizerState::new(&store);
    for step in 1..=100 {
        let lr = 1e-2 / step as f64;
        let grads: Vec<Array> = shapes
            .iter()
            .map(|s| Array::new(s.clone(), uniform(&mut r, s.iter().product(), 3.0)).unwrap())
            .collect();
        adam_step(&mut store, &grads, &mut state, &cfg, lr).unwrap();
        for p in 0..theta.len() {
            for i in 0..theta[p].len() {
                let gi = grads[p].data()[i];
                m[p][i] = cfg.beta1 * m[p][i] + (1.0 - cfg.beta1) * gi;
                v[p][i] = cfg.beta2 * v[p][i] + (1.0 - cfg.beta2) * gi * gi;
                let mh = m[p][i] / (1.0 - cfg.beta1.powi(step));
                let vh = v[p][i] / (1.0 - cfg.beta2.powi(step));
                if decays[p] {
                    theta[p][i] *= 1.0 - lr * cfg.weight_decay;
                }
                theta[p][i] -= lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
    }
    store
        .iter()
        .zip(&theta)
        .flat_map(|(p, t)| p.value.data().iter().zip(t).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

/// Runs `case` over `count` seeds and returns the largest error seen.
pub fn worst_over(count: u64, case: impl Fn(u64) -> f64) -> f64 {
    (0..count).map(case).fold(0.0, f64::max)
}
