use ndarray::{Array1, Array2};
use proptest::prelude::*;

use mtssl::baselines::build_gramian;
use mtssl::config::ExperimentConfig;
use mtssl::datasets::{generate, mask_labels, DatasetKind, DatasetSpec, LabelPolicy};
use mtssl::metrics::{error_rate, imbalance_fraction, overlap_matrix, Prediction};
use mtssl::snapshot::ModelSnapshot;
use mtssl::ssl::{Rule, SslNeuron, SslParams};
use mtssl::tiling::{fast_step, infer, init_tiling, TilingActivity, TilingParams, TilingState};

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(lo..hi, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn vector(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Array1<f64>> {
    prop::collection::vec(lo..hi, n).prop_map(Array1::from)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fast_step_stays_nonnegative(
        w in matrix(4, 3, -2.0, 2.0),
        b in vector(4, 0.0, 1.0),
        h in vector(4, 0.0, 1.0),
        u in vector(4, 0.0, 1.0),
        v in matrix(4, 4, 0.0, 1.0),
        x in vector(3, -2.0, 2.0),
        alpha in 0.0..3.0f64,
    ) {
        let params = TilingParams::new(4, 3, alpha);
        let state = TilingState { w, b, t: 0 };
        let next = fast_step(&state, &TilingActivity { h, u, v }, x.view(), &params).unwrap();
        prop_assert!(next.h.iter().chain(&next.u).chain(next.v.iter()).all(|&a| a >= 0.0));
    }

    #[test]
    fn settled_codes_are_nonnegative_and_bounded(
        w in matrix(5, 3, -1.0, 1.0),
        b in vector(5, 0.0, 0.5),
        x in vector(3, -1.0, 1.0),
        alpha in 0.0..1.0f64,
    ) {
        let mut params = TilingParams::new(5, 3, alpha);
        params.max_fast_iters = 5000;
        let state = TilingState { w, b, t: 0 };
        let inf = infer(&state, x.view(), &params, None).unwrap();
        prop_assert!(inf.h().iter().all(|&a| a >= 0.0));
        if inf.converged {
            prop_assert!(inf.h().dot(inf.h()).sqrt() <= 1.0 + 1e-2);
        }
    }

    #[test]
    fn neuron_output_stays_in_range(
        hs in prop::collection::vec(vector(3, 0.0, 1.0), 1..60),
        zs in prop::collection::vec(prop::sample::select(vec![-1i8, 0, 0, 1]), 60),
        mu in 0.0..1000.0f64,
        tanh in any::<bool>(),
    ) {
        let rule = if tanh { Rule::Tanh } else { Rule::Clipped };
        let mut neuron = SslNeuron::new(SslParams { mu, rule }, 3);
        for (h, &z) in hs.iter().zip(&zs) {
            let y = neuron.step(h.view(), z).unwrap();
            prop_assert!((-1.0..=1.0).contains(&y));
        }
    }

    #[test]
    fn metrics_stay_in_range(ys in prop::collection::vec(-1.0..1.0f64, 1..80), seed in 0u64..1000) {
        let data = generate(&DatasetSpec::new(DatasetKind::TwoMoons, ys.len(), seed)).unwrap();
        let e = error_rate(&ys, &data).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        let preds: Vec<Prediction> = ys.iter().map(|&y| Prediction::from_output(y)).collect();
        let f = imbalance_fraction(&preds).unwrap();
        prop_assert!((0.5..=1.0).contains(&f));
    }

    #[test]
    fn overlap_is_symmetric_with_nonnegative_diagonal(hs in prop::collection::vec(vector(4, 0.0, 1.0), 1..30)) {
        let s = overlap_matrix(&hs).unwrap();
        for i in 0..4 {
            prop_assert!(s[[i, i]] >= 0.0);
            for j in 0..4 {
                prop_assert_eq!(s[[i, j]], s[[j, i]]);
            }
        }
    }

    #[test]
    fn laplacian_rows_sum_to_zero_and_form_is_nonnegative(
        h in matrix(5, 12, 0.0, 1.0),
        w in vector(5, -10.0, 10.0),
    ) {
        let g = build_gramian(h.view()).unwrap();
        for row in g.l.rows() {
            prop_assert!(row.sum().abs() < 1e-12);
        }
        prop_assert!(g.quadratic_form(w.view()) >= -1e-12);
        let edge = g.edge_sum(w.view());
        prop_assert!((edge - 2.0 * g.quadratic_form(w.view())).abs() <= 1e-10 * edge.abs().max(1.0));
    }

    #[test]
    fn masking_never_flips_a_label(seed in 0u64..500, p in 0.0..1.0f64, size in 1usize..300) {
        let data = generate(&DatasetSpec::new(DatasetKind::SwissChessboard, size, seed)).unwrap();
        let masked = mask_labels(&data, &LabelPolicy::RandomFraction(p), seed ^ 7).unwrap();
        for (a, b) in data.iter().zip(&masked) {
            prop_assert_eq!(a.z_true, b.z_true);
            prop_assert!(b.z == 0 || b.z == b.z_true);
            prop_assert_eq!(&a.x, &b.x);
        }
        let want = (p * size as f64).round() as usize;
        prop_assert_eq!(masked.iter().filter(|s| s.is_labeled()).count(), want);
    }

    #[test]
    fn config_text_round_trips(
        m in 1usize..300,
        alpha in 0.0..1000.0f64,
        mu in 0.0..1e4f64,
        lr in 1e-4..10.0f64,
        seed in any::<u64>(),
        repeats in 1usize..20,
    ) {
        let mut cfg = ExperimentConfig::default();
        for (k, v) in [
            ("tiling.m", m.to_string()),
            ("tiling.alpha", alpha.to_string()),
            ("ssl.mu", mu.to_string()),
            ("logreg.lr", lr.to_string()),
            ("experiment.seed", seed.to_string()),
            ("experiment.repeats", repeats.to_string()),
        ] {
            cfg.set(k, &v).unwrap();
        }
        let back = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        prop_assert_eq!(back.hash(), cfg.hash());
        prop_assert_eq!(back.to_text(), cfg.to_text());
    }

    #[test]
    fn snapshot_round_trips_bit_for_bit(
        seed in any::<u64>(),
        w in vector(6, -1e3, 1e3),
        mu in 0.0..1e4f64,
    ) {
        let cfg = ExperimentConfig::parse("tiling.m = 6").unwrap();
        let params = cfg.tiling_params();
        let mut ssl = mtssl::ssl::SslState::new(6);
        ssl.w = w;
        ssl.t = seed % 10_000;
        let snap = ModelSnapshot {
            lift: cfg.lift.clone(),
            tiling_params: params.clone(),
            tiling: init_tiling(&params, seed).unwrap(),
            ssl_params: SslParams { mu, rule: Rule::Tanh },
            ssl,
        };
        let mut buf = Vec::new();
        snap.write_to(&mut buf).unwrap();
        prop_assert_eq!(ModelSnapshot::read_from(buf.as_slice()).unwrap(), snap);
    }
}
