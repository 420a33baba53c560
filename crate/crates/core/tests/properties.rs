use nalgebra::{DMatrix, DVector};
use pipeline_fusion::consensus::{metropolis_weights, run_consensus, CommGraph, ConsensusState};
use pipeline_fusion::ekf::{numeric_jacobian, predict, update, FilterState, ProcessModel};
use pipeline_fusion::fusvaf::{
    confidence, fuse_detailed, FusionParams, GateAdaptation, ValidationGate,
};
use pipeline_fusion::sim::cluster::aggregate;
use pipeline_fusion::sim::node::report_on_change;
use pipeline_fusion::trace::{merge_traces, read_trace, write_trace, NodeId, SensorKind, Trace};
use proptest::prelude::*;

fn gate() -> impl Strategy<Value = ValidationGate> {
    (
        -1e3..1e3f64,
        1e-3..50.0f64,
        1e-3..50.0f64,
        0.05..5.0f64,
        0.05..5.0f64,
    )
        .prop_map(|(x, dl, dr, fl, fr)| {
            ValidationGate::new(x, x - dl, x + dr, fl * dl, fr * dr).unwrap()
        })
}

/// Connected graph on `n` agents: a random spanning tree plus extra edges.
fn connected_graph() -> impl Strategy<Value = CommGraph> {
    (2usize..=12).prop_flat_map(|n| {
        let parents: Vec<BoxedStrategy<usize>> = (1..n).map(|i| (0..i).boxed()).collect();
        (parents, prop::collection::vec((0..n, 0..n), 0..2 * n)).prop_map(
            move |(parents, extra)| {
                let mut edges: Vec<(usize, usize)> = parents
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| (i + 1, p))
                    .collect();
                edges.extend(extra.into_iter().filter(|(a, b)| a != b));
                CommGraph::new(n, edges).unwrap()
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn confidence_in_unit_interval(g in gate(), z in -2e3..2e3f64) {
        let s = confidence(&g, z);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(confidence(&g, g.x_hat()), 1.0);
        prop_assert_eq!(confidence(&g, g.v_l()), 0.0);
        prop_assert_eq!(confidence(&g, g.v_r()), 0.0);
    }

    #[test]
    fn confidence_falls_away_from_prediction(g in gate(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let (near, far) = if a <= b { (a, b) } else { (b, a) };
        let right = |t: f64| g.x_hat() + t * (g.v_r() - g.x_hat());
        let left = |t: f64| g.x_hat() - t * (g.x_hat() - g.v_l());
        prop_assert!(confidence(&g, right(near)) >= confidence(&g, right(far)));
        prop_assert!(confidence(&g, left(near)) >= confidence(&g, left(far)));
    }

    #[test]
    fn fused_value_is_a_convex_combination(
        g in gate(),
        offsets in prop::collection::vec(-60.0..60.0f64, 0..8),
        alpha in 0.0..5.0f64,
        omega in 0.1..5.0f64,
    ) {
        let zs: Vec<f64> = offsets.iter().map(|o| g.x_hat() + o).collect();
        let params = FusionParams::new(alpha, omega).unwrap();
        match fuse_detailed(&g, &params, &zs) {
            Ok(f) => {
                let valid = zs.iter().zip(&f.confidences).filter(|(_, s)| **s > 0.0).map(|(z, _)| *z);
                let lo = valid.clone().fold(g.x_hat(), f64::min);
                let hi = valid.fold(g.x_hat(), f64::max);
                prop_assert!(f.value >= lo && f.value <= hi, "{} not in [{lo}, {hi}]", f.value);
            }
            Err(_) => {
                prop_assert_eq!(alpha, 0.0);
                prop_assert!(zs.iter().all(|z| confidence(&g, *z) == 0.0));
            }
        }
    }

    #[test]
    fn fusion_ignores_input_order(
        g in gate(),
        offsets in prop::collection::vec(-10.0..10.0f64, 1..8),
        seed in any::<u64>(),
    ) {
        let zs: Vec<f64> = offsets.iter().map(|o| g.x_hat() + o).collect();
        let mut shuffled = zs.clone();
        let len = shuffled.len();
        for i in (1..len).rev() {
            shuffled.swap(i, (seed.rotate_left(i as u32) as usize) % (i + 1));
        }
        let p = FusionParams::default();
        let a = fuse_detailed(&g, &p, &zs).unwrap().value;
        let b = fuse_detailed(&g, &p, &shuffled).unwrap().value;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn wider_residuals_never_narrow_the_gate(
        rs in prop::collection::vec(0.0..20.0f64, 1..30),
        bump in prop::collection::vec(0.0..5.0f64, 30),
    ) {
        let rule = GateAdaptation::default();
        let larger: Vec<f64> = rs.iter().zip(&bump).map(|(r, b)| r + b).collect();
        prop_assert!(rule.half_width(&larger).unwrap() >= rule.half_width(&rs).unwrap());
    }

    #[test]
    fn consensus_keeps_the_mean_and_shrinks_dispersion(
        graph in connected_graph(),
        values in prop::collection::vec(-100.0..100.0f64, 12),
    ) {
        let x0 = ConsensusState::new(values[..graph.n()].to_vec()).unwrap();
        let out = run_consensus(&x0, &graph, 1e-10, 20_000).unwrap();
        prop_assert!(out.converged);
        let mean = x0.mean();
        for v in out.estimates.iter() {
            prop_assert!((v - mean).abs() < 1e-4);
        }
        prop_assert!((out.estimates.mean() - mean).abs() < 1e-12 * mean.abs().max(1.0));
        for pair in out.mse_history.windows(2) {
            prop_assert!(pair[1] <= pair[0] * (1.0 + 1e-12) + 1e-300);
        }
    }

    #[test]
    fn metropolis_weights_are_doubly_stochastic(graph in connected_graph()) {
        let w = metropolis_weights(&graph).unwrap();
        prop_assert_eq!(&w, &w.transpose());
        for i in 0..graph.n() {
            prop_assert!((w.row(i).sum() - 1.0).abs() < 1e-12);
            prop_assert!(w.row(i).iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn consensus_is_label_invariant(
        graph in connected_graph(),
        values in prop::collection::vec(-10.0..10.0f64, 12),
        rot in 0usize..12,
    ) {
        let n = graph.n();
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let permuted = graph.permuted(&perm).unwrap();
        let x = values[..n].to_vec();
        let mut y = vec![0.0; n];
        for (i, &p) in perm.iter().enumerate() {
            y[p] = x[i];
        }
        let a = run_consensus(&ConsensusState::new(x).unwrap(), &graph, 1e-9, 5000).unwrap();
        let b = run_consensus(&ConsensusState::new(y).unwrap(), &permuted, 1e-9, 5000).unwrap();
        prop_assert_eq!(a.iterations, b.iterations);
        for (i, &p) in perm.iter().enumerate() {
            prop_assert!((a.estimates[i] - b.estimates[p]).abs() < 1e-9);
        }
    }

    #[test]
    fn ekf_covariance_stays_symmetric_and_shrinks_on_update(
        a in prop::collection::vec(-1.2..1.2f64, 4),
        q in prop::collection::vec(0.0..1.0f64, 2),
        r in 0.01..5.0f64,
        p in prop::collection::vec(0.01..5.0f64, 2),
        ys in prop::collection::vec(-10.0..10.0f64, 1..20),
    ) {
        let model = ProcessModel::linear(
            DMatrix::from_row_slice(2, 2, &a),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.5]),
            DMatrix::from_diagonal(&DVector::from_vec(q)),
            DMatrix::from_element(1, 1, r),
        ).unwrap();
        let mut state = FilterState::new(DVector::zeros(2), DMatrix::from_diagonal(&DVector::from_vec(p)), 0).unwrap();
        for y in ys {
            let prior = predict(&state, &model).unwrap();
            let post = update(&prior, &DVector::from_element(1, y), &model).unwrap();
            prop_assert_eq!(&post.covariance, &post.covariance.transpose());
            prop_assert!(post.covariance.trace() <= prior.covariance.trace() + 1e-12);
            prop_assert!(post.covariance.diagonal().iter().all(|d| *d >= 0.0));
            prop_assert!(post.x_hat.iter().all(|v| v.is_finite()));
            state = post;
        }
    }

    #[test]
    fn numeric_jacobian_matches_analytic(x in -3.0..3.0f64, y in -3.0..3.0f64) {
        let f = |v: &DVector<f64>| DVector::from_vec(vec![v[0].sin() * v[1], v[0] * v[0] + v[1].exp()]);
        let j = numeric_jacobian(&f, &DVector::from_vec(vec![x, y]), 1e-6).unwrap();
        let exact = DMatrix::from_row_slice(2, 2, &[x.cos() * y, x.sin(), 2.0 * x, y.exp()]);
        for (a, b) in j.iter().zip(exact.iter()) {
            prop_assert!((a - b).abs() <= 1e-4 * b.abs().max(1.0));
        }
    }

    #[test]
    fn deadband_holds_within_delta(
        xs in prop::collection::vec(-50.0..50.0f64, 1..200),
        delta in 0.01..5.0f64,
    ) {
        let reports = report_on_change(xs.iter().copied().enumerate().map(|(t, v)| (t as u64, v)), delta);
        prop_assert_eq!(reports[0], (0, xs[0]));
        let mut held = reports[0].1;
        let mut next = 1;
        for (t, x) in xs.iter().enumerate() {
            if next < reports.len() && reports[next].0 == t as u64 {
                held = reports[next].1;
                next += 1;
            }
            prop_assert!((x - held).abs() < delta || reports.iter().any(|r| r.0 == t as u64));
        }
    }

    #[test]
    fn aggregate_orders_its_statistics(xs in prop::collection::vec(-1e6..1e6f64, 1..50)) {
        let a = aggregate(&xs).unwrap();
        prop_assert_eq!(a.count, xs.len());
        prop_assert!(a.min <= a.avg + 1e-9 && a.avg <= a.max + 1e-9);
    }

    #[test]
    fn traces_round_trip_through_csv(
        values in prop::collection::vec(-1e9..1e9f64, 1..40),
        gaps in prop::collection::vec(1u64..5, 40),
    ) {
        let mut t = 0;
        let samples: Vec<(u64, f64)> = values.iter().zip(&gaps).map(|(v, g)| { t += g; (t, *v) }).collect();
        let trace = Trace::from_samples("n1", SensorKind::Pressure, &samples).unwrap();
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        let back = read_trace(buf.as_slice(), NodeId::new("n1"), SensorKind::Pressure).unwrap();
        prop_assert_eq!(back, trace);
    }

    #[test]
    fn merged_ticks_increase_and_cover_every_reading(
        a in prop::collection::btree_set(0u64..100, 1..30),
        b in prop::collection::btree_set(0u64..100, 1..30),
    ) {
        let ta: Vec<(u64, f64)> = a.iter().map(|t| (*t, 1.0)).collect();
        let tb: Vec<(u64, f64)> = b.iter().map(|t| (*t, 2.0)).collect();
        let traces = [
            Trace::from_samples("a", SensorKind::Humidity, &ta).unwrap(),
            Trace::from_samples("b", SensorKind::Humidity, &tb).unwrap(),
        ];
        let merged = merge_traces(&traces).unwrap();
        prop_assert!(merged.windows(2).all(|w| w[0].tick < w[1].tick));
        let total: usize = merged.iter().map(|s| s.values().len()).sum();
        prop_assert_eq!(total, a.len() + b.len());
    }
}
