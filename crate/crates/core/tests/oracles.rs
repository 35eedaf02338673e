mod support;

use support::*;
use ugcn_core::loss::{encode_motion, LossConfig, MotionOperator};
use ugcn_core::SkeletonTopology;

const INSTANCES: u64 = 200;

#[test]
fn graph_conv_matches_nested_loops() {
    let worst = worst_over(INSTANCES, gconv_case);
    assert!(worst < TOL, "max abs error {worst:e}");
}

#[test]
fn motion_loss_matches_triple_loop() {
    let worst = worst_over(INSTANCES, motion_loss_case);
    assert!(worst < TOL, "max abs error {worst:e}");
}

#[test]
fn position_loss_matches_direct_sum() {
    let worst = worst_over(INSTANCES, position_loss_case);
    assert!(worst < TOL, "max abs error {worst:e}");
}

#[test]
fn metrics_match_references() {
    let names = ["mpjpe", "p_mpjpe", "mpjve", "pck", "auc"];
    for seed in 0..INSTANCES {
        for (name, err) in names.iter().zip(metrics_case(seed)) {
            assert!(err < TOL, "{name} seed {seed}: {err:e}");
        }
    }
}

#[test]
fn hop_distances_match_floyd_warshall() {
    let mut r = rng(7);
    let mut topos = vec![SkeletonTopology::h36m17()];
    topos.extend((0..100).map(|k| random_tree(&mut r, 2 + k % 15)));
    for topo in &topos {
        assert_eq!(topo.hop_distances().as_slice(), hops_reference(topo).as_slice());
    }
}

#[test]
fn partition_matches_edge_list_construction() {
    let mut r = rng(8);
    let mut topos = vec![SkeletonTopology::h36m17()];
    topos.extend((0..100).map(|k| random_tree(&mut r, 2 + k % 15)));
    for topo in &topos {
        let adj = topo.partition();
        let expected = partition_reference(topo);
        for (l, e) in expected.iter().enumerate() {
            assert_eq!(adj.dense(l), e.as_slice());
        }
    }
}

#[test]
fn adam_matches_reference_loop() {
    let worst = worst_over(20, adam_case);
    assert!(worst < 1e-10, "max abs error {worst:e}");
}

#[test]
fn cross_product_encoding_by_components() {
    let s = ugcn_core::PoseSequence::new(2, 1, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let e = encode_motion(&s, 1, MotionOperator::CrossProduct).unwrap();
    assert_eq!(e.get(0, 0), &[2.0 * 6.0 - 3.0 * 5.0, 3.0 * 4.0 - 1.0 * 6.0, 1.0 * 5.0 - 2.0 * 4.0]);
}

#[test]
fn combined_loss_composes_the_two_terms() {
    let mut r = rng(3);
    let p = random_pose(&mut r, 30, 2, 3, 1.0);
    let q = random_pose(&mut r, 30, 2, 3, 1.0);
    let cfg = LossConfig {
        lambda: 2.0,
        ..LossConfig::default()
    };
    let mut g = ugcn_core::Graph::new();
    let (pv, qv) = (g.constant(p.to_array()), g.constant(q.to_array()));
    let terms = ugcn_core::loss::combined_loss(&mut g, pv, qv, &cfg).unwrap();
    let lp: f64 = p.data().iter().zip(q.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    let expected = lp + 2.0 * motion_loss_reference(&p, &q, &cfg);
    assert!((g.value(terms.total).item() - expected).abs() < TOL);
}
