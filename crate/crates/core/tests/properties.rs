mod support;

use proptest::prelude::*;
use rand::Rng;
use support::*;
use ugcn_core::array::Array;
use ugcn_core::loss::{motion_loss_value, position_loss_value, LossConfig, MotionNorm, MotionOperator};
use ugcn_core::metrics::{self, align_frame, Alignment};
use ugcn_core::model::{build_model, ModelConfig, UgcnModel};
use ugcn_core::nn::{spatial_graph_conv, Mode};
use ugcn_core::synth::{gen_lifting_dataset, SynthMotionSpec};
use ugcn_core::{Graph, PoseSequence, SkeletonTopology};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn rotation(r: &mut rand_chacha::ChaCha8Rng) -> [[f64; 3]; 3] {
    let q: [f64; 4] = std::array::from_fn(|_| r.random_range(-1.0..1.0));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ]
}

fn rigid(s: &PoseSequence, rot: &[[f64; 3]; 3], shift: [f64; 3]) -> PoseSequence {
    let mut out = s.clone();
    for t in 0..s.frames() {
        for j in 0..s.joints() {
            let p = s.point(t, j).to_vec();
            for (i, v) in out.point_mut(t, j).iter_mut().enumerate() {
                *v = (0..3).map(|k| rot[i][k] * p[k]).sum::<f64>() + shift[i];
            }
        }
    }
    out
}

fn translated(s: &PoseSequence, shift: &[f64]) -> PoseSequence {
    let mut out = s.clone();
    for t in 0..s.frames() {
        for j in 0..s.joints() {
            out.point_mut(t, j).iter_mut().zip(shift).for_each(|(v, d)| *v += d);
        }
    }
    out
}

fn all_metrics(p: &PoseSequence, g: &PoseSequence, root: usize) -> [f64; 5] {
    let (pck, auc) = metrics::pck_auc(p, g, root).unwrap();
    [
        metrics::mpjpe_p1(p, g, root).unwrap(),
        metrics::mpjpe_p2(p, g).unwrap(),
        metrics::mpjve(p, g, root).unwrap(),
        pck,
        auc,
    ]
}

/// Root-mean-square joint error after root alignment and after Procrustes.
fn rms_p1_p2(p: &PoseSequence, g: &PoseSequence, root: usize) -> (f64, f64) {
    let (mut s1, mut s2) = (0.0, 0.0);
    for t in 0..g.frames() {
        for j in 0..g.joints() {
            for k in 0..3 {
                let d = (p.point(t, j)[k] - p.point(t, root)[k]) - (g.point(t, j)[k] - g.point(t, root)[k]);
                s1 += d * d;
            }
        }
        let aligned = align_frame(p.frame(t), g.frame(t), Alignment::Similarity).unwrap();
        for (a, b) in aligned.iter().zip(g.frame(t).chunks_exact(3)) {
            s2 += (0..3).map(|k| (a[k] - b[k]) * (a[k] - b[k])).sum::<f64>();
        }
    }
    let n = (g.frames() * g.joints()) as f64;
    ((s1 / n).sqrt(), (s2 / n).sqrt())
}

fn tiny_config(joints: usize) -> ModelConfig {
    ModelConfig {
        frames: 16,
        num_joints: joints,
        channels: 4,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

fn copy_state(from: &UgcnModel, to: &mut UgcnModel) {
    let params: Vec<(String, Array)> = from.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect();
    to.load_state(&params, from.stats()).unwrap();
}

fn permute_joints(s: &PoseSequence, perm: &[usize]) -> PoseSequence {
    let mut out = s.clone();
    for t in 0..s.frames() {
        for (j, &pj) in perm.iter().enumerate() {
            out.point_mut(t, pj).copy_from_slice(s.point(t, j));
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn partition_supports_are_disjoint_and_complete(seed in any::<u64>(), joints in 1usize..20) {
        let mut r = rng(seed);
        let topo = random_tree(&mut r, joints);
        let adj = topo.partition();
        for j in 0..joints {
            for i in 0..joints {
                let bone = topo.edges().iter().any(|&(a, b)| (a, b) == (i, j) || (a, b) == (j, i));
                let nonzero = (0..3).filter(|&l| adj.entry(l, j, i) != 0.0).count();
                prop_assert_eq!(nonzero, usize::from(i == j || bone), "({}, {})", j, i);
            }
            for l in 0..3 {
                let row: f64 = (0..joints).map(|i| adj.entry(l, j, i)).sum();
                prop_assert!(row == 0.0 || (row - 1.0).abs() < 1e-15, "row {} label {} sums to {}", j, l, row);
            }
        }
    }

    #[test]
    fn hop_distances_are_a_bfs_layering(seed in any::<u64>(), joints in 1usize..20) {
        let mut r = rng(seed);
        let topo = random_tree(&mut r, joints);
        let h = topo.hop_distances();
        prop_assert_eq!(h.get(topo.root()), 0);
        for &(a, b) in topo.edges() {
            prop_assert!(h.get(a).abs_diff(h.get(b)) <= 1);
        }
    }

    #[test]
    fn partition_is_relabeling_equivariant(seed in any::<u64>(), joints in 2usize..15) {
        let mut r = rng(seed);
        let topo = random_tree(&mut r, joints);
        let mut perm: Vec<usize> = (0..joints).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
        let (a, b) = (topo.partition(), topo.permuted(&perm).unwrap().partition());
        for l in 0..3 {
            for j in 0..joints {
                for i in 0..joints {
                    prop_assert_eq!(a.entry(l, j, i), b.entry(l, perm[j], perm[i]));
                }
            }
        }
    }

    #[test]
    fn graph_conv_is_permutation_equivariant(seed in any::<u64>(), joints in 2usize..10) {
        let mut r = rng(seed);
        let topo = random_tree(&mut r, joints);
        let mut perm: Vec<usize> = (0..joints).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
        let ptopo = topo.permuted(&perm).unwrap();
        let (ci, co, t) = (3, 2, 4);
        let x = Array::from_fn(vec![ci, t, joints], |_| r.random_range(-1.0..1.0));
        let mut px = x.clone();
        for c in 0..ci {
            for tt in 0..t {
                for j in 0..joints {
                    *px.at_mut(&[c, tt, perm[j]]) = x.at(&[c, tt, j]);
                }
            }
        }
        let ws: Vec<Array> = (0..3).map(|_| Array::from_fn(vec![co, ci], |_| r.random_range(-1.0..1.0))).collect();
        let run = |topo: &SkeletonTopology, x: &Array| {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let w = [0, 1, 2].map(|l| g.constant(ws[l].clone()));
            let y = spatial_graph_conv(&mut g, xv, &topo.partition(), w).unwrap();
            g.value(y).clone()
        };
        let (y, py) = (run(&topo, &x), run(&ptopo, &px));
        for o in 0..co {
            for tt in 0..t {
                for j in 0..joints {
                    prop_assert!(close(y.at(&[o, tt, j]), py.at(&[o, tt, perm[j]]), 1e-12));
                }
            }
        }
    }

    #[test]
    fn metrics_are_invariant_to_shared_rigid_motion(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (p, g, root) = metric_instance(&mut r);
        let rot = rotation(&mut r);
        let shift: [f64; 3] = std::array::from_fn(|_| r.random_range(-1000.0..1000.0));
        let before = all_metrics(&p, &g, root);
        let after = all_metrics(&rigid(&p, &rot, shift), &rigid(&g, &rot, shift), root);
        for k in 0..3 {
            prop_assert!(close(before[k], after[k], 1e-9), "metric {}: {} vs {}", k, before[k], after[k]);
        }
    }

    #[test]
    fn root_aligned_metrics_ignore_per_frame_translation(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (p, g, root) = metric_instance(&mut r);
        let mut moved = p.clone();
        for t in 0..p.frames() {
            let d: [f64; 3] = std::array::from_fn(|_| r.random_range(-500.0..500.0));
            for j in 0..p.joints() {
                moved.point_mut(t, j).iter_mut().zip(d).for_each(|(v, d)| *v += d);
            }
        }
        let (a, b) = (all_metrics(&p, &g, root), all_metrics(&moved, &g, root));
        for k in [0, 2] {
            prop_assert!(close(a[k], b[k], 1e-9));
        }
        prop_assert!(close(a[1], b[1], 1e-9));
    }

    #[test]
    fn metrics_are_invariant_to_flipping_both(seed in any::<u64>()) {
        let mut r = rng(seed);
        let topo = SkeletonTopology::h36m17();
        let g = random_pose(&mut r, 4, 17, 3, 400.0);
        let mut p = g.clone();
        p.data_mut().iter_mut().for_each(|v| *v += r.random_range(-100.0..100.0));
        let (fp, fg) = (p.flipped(topo.mirror()), g.flipped(topo.mirror()));
        let (a, b) = (all_metrics(&p, &g, 0), all_metrics(&fp, &fg, 0));
        for k in 0..5 {
            prop_assert!(close(a[k], b[k], 1e-9), "metric {}: {} vs {}", k, a[k], b[k]);
        }
    }

    #[test]
    fn procrustes_rms_never_exceeds_root_aligned_rms(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (t, m) = (r.random_range(1..6), r.random_range(3..12));
        let p = random_pose(&mut r, t, m, 3, 500.0);
        let g = random_pose(&mut r, t, m, 3, 500.0);
        let (rms1, rms2) = rms_p1_p2(&p, &g, r.random_range(0..m));
        prop_assert!(rms2 <= rms1 * (1.0 + 1e-12));
    }

    #[test]
    fn procrustes_mean_does_not_exceed_root_aligned_mean(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (p, g, root) = metric_instance(&mut r);
        let (p1, p2) = (metrics::mpjpe_p1(&p, &g, root).unwrap(), metrics::mpjpe_p2(&p, &g).unwrap());
        prop_assert!(p2 <= p1, "{} > {}", p2, p1);
    }

    #[test]
    fn subtraction_motion_loss_ignores_constant_offsets(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_pose(&mut r, 12, 3, 3, 10.0);
        let g = random_pose(&mut r, 12, 3, 3, 10.0);
        let cfg = LossConfig { operator: MotionOperator::Subtraction, intervals: vec![1, 3, 7], lambda: 1.0, norm: MotionNorm::L1 };
        let base = motion_loss_value(&p, &g, &cfg).unwrap();
        let dp: Vec<f64> = (0..3).map(|_| r.random_range(-100.0..100.0)).collect();
        let dg: Vec<f64> = (0..3).map(|_| r.random_range(-100.0..100.0)).collect();
        prop_assert!(close(base, motion_loss_value(&translated(&p, &dp), &g, &cfg).unwrap(), 1e-9));
        prop_assert!(close(base, motion_loss_value(&p, &translated(&g, &dg), &cfg).unwrap(), 1e-9));
    }

    #[test]
    fn losses_vanish_exactly_on_identical_inputs(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_pose(&mut r, 10, 4, 3, 100.0);
        let q = random_pose(&mut r, 10, 4, 3, 100.0);
        prop_assert_eq!(position_loss_value(&p, &p).unwrap(), 0.0);
        prop_assert!(position_loss_value(&p, &q).unwrap() > 0.0);
        for op in OPERATORS {
            for norm in [MotionNorm::L1, MotionNorm::L2] {
                let cfg = LossConfig { operator: op, intervals: vec![1, 2, 5], lambda: 1.0, norm };
                prop_assert_eq!(motion_loss_value(&p, &p, &cfg).unwrap(), 0.0);
                prop_assert!(motion_loss_value(&p, &q, &cfg).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn backprop_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut r = rng(seed);
        let x = Array::from_fn(vec![2, 5, 3], |_| r.random_range(-1.0..1.0));
        let grad = |a: f64, b: f64| {
            let mut g = Graph::new();
            let xv = g.leaf(x.clone());
            let sq = g.square(xv);
            let f = g.sum_all(sq);
            let rl = g.relu(xv);
            let c = g.cross(xv, rl).unwrap();
            let gg = g.sum_all(c);
            let fa = g.scale(f, a);
            let gb = g.scale(gg, b);
            let out = g.add(fa, gb).unwrap();
            g.backward(out).unwrap();
            g.grad_or_zeros(xv)
        };
        let (both, f, gg) = (grad(alpha, beta), grad(1.0, 0.0), grad(0.0, 1.0));
        for ((v, a), b) in both.data().iter().zip(f.data()).zip(gg.data()) {
            prop_assert!(close(*v, alpha * a + beta * b, 1e-12));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn model_is_joint_permutation_equivariant(seed in any::<u64>(), joints in 3usize..8) {
        let mut r = rng(seed);
        let topo = random_tree(&mut r, joints);
        let mut perm: Vec<usize> = (0..joints).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
        let ptopo = topo.permuted(&perm).unwrap();
        let model = build_model(tiny_config(joints), &topo, seed).unwrap();
        let mut pmodel = build_model(tiny_config(joints), &ptopo, seed ^ 1).unwrap();
        copy_state(&model, &mut pmodel);
        let x = random_pose(&mut r, 16, joints, 2, 1.0);
        let y = model.predict(std::slice::from_ref(&x)).unwrap().remove(0);
        let py = pmodel.predict(&[permute_joints(&x, &perm)]).unwrap().remove(0);
        let expected = permute_joints(&y, &perm);
        for (a, b) in py.data().iter().zip(expected.data()) {
            prop_assert!(close(*a, *b, 1e-10), "{} vs {}", a, b);
        }
    }
}

#[test]
fn default_model_walks_the_resolution_ladder() {
    let topo = SkeletonTopology::h36m17();
    let model = build_model(ModelConfig::default(), &topo, 0).unwrap();
    assert_eq!(model.resolution_ladder(), vec![96, 48, 24, 12, 6]);
    let mut s = model.session(Mode::Eval, 0);
    let x = s.graph.constant(Array::zeros(vec![1, 96, 17, 2]));
    let (y, trace) = model.forward_traced(&mut s, x).unwrap();
    assert_eq!(s.graph.shape(y), &[1, 96, 17, 3]);
    let cached: Vec<usize> = trace.cached.iter().map(|c| c.0).collect();
    assert_eq!(cached, vec![96, 48, 24, 12, 6]);
    assert_eq!(trace.down_frames, vec![96, 96, 48, 48, 24, 24, 12, 12, 6, 6]);
    assert_eq!(trace.up_frames, vec![12, 24, 48, 96]);
    assert_eq!(trace.skips.len(), 4);
    for (up, skip) in &trace.skips {
        assert_eq!(up, skip);
        assert_eq!(up[1], 64);
        assert_eq!(up[3], 17);
    }
    for m in &trace.merged {
        assert_eq!(m, &vec![1, 64, 96, 17]);
    }
}

#[test]
fn first_input_frame_reaches_last_output_frame() {
    let topo = SkeletonTopology::h36m17();
    let model = build_model(ModelConfig::default(), &topo, 5).unwrap();
    let mut r = rng(5);
    let mut s = model.session(Mode::Eval, 0);
    let x = s.graph.leaf(Array::from_fn(vec![1, 96, 17, 2], |_| r.random_range(-1.0..1.0)));
    let y = model.forward(&mut s, x).unwrap();
    let last = s.graph.slice(y, 1, 95, 1).unwrap();
    let l = s.graph.sum_all(last);
    s.graph.backward(l).unwrap();
    let grad = s.graph.grad_or_zeros(x);
    let first: f64 = (0..17 * 2).map(|k| grad.data()[k].abs()).sum();
    assert!(first > 0.0, "frame 0 does not influence frame 95");
}

#[test]
fn stride_then_upsample_restores_a_constant_signal() {
    let mut g = Graph::new();
    let x = g.constant(Array::full(vec![2, 3, 12, 4], 1.75));
    let w = g.constant(Array::new(vec![3, 3, 1], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap());
    let down = g.conv_time(x, w, 2).unwrap();
    let up = g.temporal_upsample(down).unwrap();
    assert_eq!(g.value(up), g.value(x));
}

#[test]
fn seeded_forward_and_backward_are_bitwise_repeatable() {
    let topo = SkeletonTopology::h36m17();
    let cfg = ModelConfig { frames: 16, channels: 8, dropout: 0.3, ..ModelConfig::default() };
    let model = build_model(cfg, &topo, 9).unwrap();
    let mut r = rng(9);
    let x = Array::from_fn(vec![2, 16, 17, 2], |_| r.random_range(-1.0..1.0));
    let run = || {
        let mut s = model.session(Mode::Train, 42);
        let xv = s.graph.leaf(x.clone());
        let y = model.forward(&mut s, xv).unwrap();
        let l = s.graph.sum_all(y);
        s.graph.backward(l).unwrap();
        (s.graph.value(y).clone(), s.param_grads())
    };
    assert_eq!(run(), run());
}

#[test]
fn pixel_noise_has_gaussian_absolute_means() {
    let topo = SkeletonTopology::h36m17();
    let base = SynthMotionSpec { actions: 1, sequences_per_action: 40, seed: 11, ..SynthMotionSpec::default() };
    let sigma = 0.01;
    let clean = gen_lifting_dataset(&topo, &base).unwrap();
    let noisy = gen_lifting_dataset(&topo, &SynthMotionSpec { noise_sigma: sigma, ..base }).unwrap();
    let (mut axis_sum, mut axis_n, mut norm_sum, mut norm_n) = (0.0, 0usize, 0.0, 0usize);
    for (c, n) in clean.iter().zip(&noisy) {
        assert_eq!(c.pose3d, n.pose3d);
        for (a, b) in c.pose2d.data().chunks_exact(2).zip(n.pose2d.data().chunks_exact(2)) {
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            axis_sum += dx.abs() + dy.abs();
            axis_n += 2;
            norm_sum += (dx * dx + dy * dy).sqrt();
            norm_n += 1;
        }
    }
    assert!(norm_n >= 100_000);
    let axis_mean = axis_sum / axis_n as f64;
    let norm_mean = norm_sum / norm_n as f64;
    let pi = std::f64::consts::PI;
    let half_normal = sigma * (2.0 / pi).sqrt();
    let rayleigh = sigma * (pi / 2.0).sqrt();
    assert!((axis_mean / half_normal - 1.0).abs() < 0.02, "per-axis {axis_mean} vs {half_normal}");
    assert!((norm_mean / rayleigh - 1.0).abs() < 0.02, "2D {norm_mean} vs {rayleigh}");
}
