use std::sync::Arc;

use proptest::prelude::*;

use mdp_lab::attack::{cramer_solve, direct_solve, QueryMatrix};
use mdp_lab::data::{preprocess, split, synthesize, Cell, ColumnKind, ColumnSpec, RawDataset, Schema};
use mdp_lab::defense::{apba_allocate, PrivacyAccountant, ResponseStatus};
use mdp_lab::harness::{summarize, RValue, ResultRow, RowStatus};
use mdp_lab::mechanisms::{bdpl_keep_probability, round_confidence};
use mdp_lab::metrics::{accuracy, r_test};
use mdp_lab::models::{sigmoid, Classifier, LogisticModel};
use mdp_lab::monitor::{batch_extraction_status, joint_entropy, marginal_entropies, pcc, Monitor, TrainingInfo};

fn training() -> Arc<TrainingInfo> {
    let d = synthesize(3, 300, &[1.5, -1.0, 0.5], 0.2, 5).unwrap();
    Arc::new(TrainingInfo::from_dataset(&split(&d, 5).unwrap().train).unwrap())
}

fn unit() -> impl Strategy<Value = f64> {
    -1.0..=1.0f64
}

fn row(width: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(unit(), width)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn allocation_is_bounded_and_non_increasing(
        eps in 0.01..10.0f64, lt in 0.1..1e4f64, f1 in 0.0..=1.0f64, f2 in 0.0..=1.0f64,
    ) {
        let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        let a = apba_allocate(eps, lo * lt, lt, None);
        let b = apba_allocate(eps, hi * lt, lt, None);
        prop_assert!((0.0..=eps).contains(&a) && (0.0..=eps).contains(&b));
        prop_assert!(b <= a);
    }

    #[test]
    fn accountant_never_overspends(eps in 0.1..5.0f64, fractions in prop::collection::vec(0.0..=1.5f64, 1..200)) {
        let mut acc = PrivacyAccountant::new(eps, 50.0).unwrap();
        for f in fractions {
            let want = f * acc.allocate().max(acc.epsilon_remaining() * 0.5);
            if acc.commit(want, ResponseStatus::Charged).is_err() {
                prop_assert!(want > acc.epsilon_remaining());
            }
            acc.add_leakage(0.05);
            prop_assert!(acc.spent() <= eps);
            let plain: f64 = acc.history().iter().map(|h| h.epsilon_i).sum();
            prop_assert!(plain <= eps + 1e-12);
        }
    }

    #[test]
    fn keep_probability_is_monotone(e1 in 0.0..20.0f64, e2 in 0.0..20.0f64) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let (a, b) = (bdpl_keep_probability(lo), bdpl_keep_probability(hi));
        prop_assert!((0.5..=1.0).contains(&a));
        prop_assert!(a <= b);
    }

    #[test]
    fn rounding_is_idempotent(y in 0.0..=1.0f64, d in 0u32..6) {
        let once = round_confidence(y, d).value;
        prop_assert_eq!(round_confidence(once, d).value, once);
        prop_assert!((once - y).abs() <= 0.5 * 10f64.powi(-(d as i32)) + 1e-9);
    }

    #[test]
    fn pcc_is_symmetric_and_bounded(u in row(8), v in row(8)) {
        let a = pcc(&u, &v).unwrap();
        let b = pcc(&v, &u).unwrap();
        prop_assert!((a.value - b.value).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&a.value));
    }

    #[test]
    fn cramer_matches_lu(n in 1usize..8, seed in any::<u64>(), coeffs in row(8)) {
        let q = mdp_lab::attack::build_query_matrix(n, seed).unwrap();
        let aug = q.augmented();
        let z: Vec<f64> = aug.iter().map(|r| r.iter().zip(&coeffs).map(|(a, c)| a * c).sum()).collect();
        let c = cramer_solve(&aug, &z).unwrap();
        let d = direct_solve(&aug, &z).unwrap();
        for (x, y) in c.iter().zip(&d) {
            prop_assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn noiseless_linear_recovery(coeffs in row(4), seed in any::<u64>()) {
        let q = mdp_lab::attack::build_query_matrix(3, seed).unwrap();
        let target = LogisticModel::new(coeffs[..3].to_vec(), coeffs[3]);
        let z: Vec<f64> = q.rows().iter().map(|x| target.logit(x).unwrap()).collect();
        let m = mdp_lab::attack::solve_cramer(&q, &z).unwrap();
        for (x, y) in m.a.iter().chain([&m.b]).zip(&coeffs) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn query_matrix_rejects_duplicated_rows(r in row(2)) {
        prop_assert!(QueryMatrix::new(vec![r.clone(), r, vec![0.3, -0.2]]).is_err());
    }

    #[test]
    fn leakage_is_non_decreasing(stream in prop::collection::vec((row(3), 0.0..=1.0f64, any::<bool>()), 1..40)) {
        let mut monitor = Monitor::new(training());
        let mut last = 0.0;
        let mut seen: Vec<Vec<f64>> = Vec::new();
        for (q, z, repeat) in stream {
            let u = match (repeat, seen.last()) {
                (true, Some(prev)) => prev.clone(),
                _ => { let mut u = q; u.push(z); u }
            };
            let before = monitor.leakage();
            let obs = monitor.observe(&u).unwrap();
            if seen.contains(&u) {
                prop_assert!(obs.leakage - before <= 1e-9);
            }
            prop_assert!(obs.leakage >= last);
            last = obs.leakage;
            seen.push(u);
        }
        let s = monitor.status();
        prop_assert!((0.0..=1.0).contains(&s.overall));
    }

    #[test]
    fn batch_status_ignores_order(rows in prop::collection::vec((row(3), 0.0..=1.0f64), 2..20), shift in 0usize..20) {
        let info = training();
        let rows: Vec<Vec<f64>> = rows.into_iter().map(|(mut q, z)| { q.push(z); q }).collect();
        let mut rotated = rows.clone();
        rotated.rotate_left(shift % rows.len());
        let a = batch_extraction_status(&rows, &info);
        let b = batch_extraction_status(&rotated, &info);
        prop_assert!((a.overall - b.overall).abs() < 1e-12);
    }

    #[test]
    fn joint_entropy_is_subadditive(m in prop::collection::vec(prop::collection::vec(0u32..4, 3), 1..60)) {
        let joint = joint_entropy(&m).unwrap();
        let sum: f64 = marginal_entropies(&m).unwrap().iter().sum();
        prop_assert!(joint <= sum + 1e-9);
    }

    #[test]
    fn split_is_a_permutation(m in 10usize..200, seed in any::<u64>()) {
        let d = synthesize(2, m, &[1.0, -1.0], 0.0, seed).unwrap();
        let s = split(&d, seed).unwrap();
        let mut all: Vec<usize> = s.train_index.iter().chain(&s.test_index).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..m).collect::<Vec<_>>());
        prop_assert_eq!(s.train.len(), (0.7 * m as f64).floor() as usize);
    }

    #[test]
    fn preprocess_is_idempotent_on_clean_data(rows in prop::collection::vec((unit(), unit(), any::<bool>()), 4..30)) {
        prop_assume!(rows.iter().any(|r| r.2) && rows.iter().any(|r| !r.2));
        let schema = Schema {
            columns: vec![
                ColumnSpec { name: "x".into(), kind: ColumnKind::Numeric },
                ColumnSpec { name: "y".into(), kind: ColumnKind::Numeric },
                ColumnSpec { name: "label".into(), kind: ColumnKind::Categorical },
            ],
            label: "label".into(),
        };
        let cells = rows
            .iter()
            .map(|(x, y, l)| vec![Cell::Numeric(*x), Cell::Numeric(*y), Cell::Categorical(if *l { "b" } else { "a" }.into())])
            .collect();
        let d = preprocess(&RawDataset::new(schema, cells).unwrap()).unwrap();
        for (f, (x, y, l)) in d.features.iter().zip(&rows) {
            prop_assert_eq!(f, &vec![*x, *y]);
            prop_assert_eq!(d.labels[d.features.iter().position(|g| g == f).unwrap()], u8::from(*l));
        }
    }

    #[test]
    fn metrics_stay_in_unit_interval(a in row(2), b in row(2)) {
        let d = synthesize(2, 60, &[1.0, 2.0], 0.0, 3).unwrap();
        let f = LogisticModel::new(a.clone(), 0.1);
        let g = LogisticModel::new(b, -0.1);
        prop_assert!((0.0..=1.0).contains(&accuracy(&f, &d).unwrap()));
        let fg = r_test(&f, &g, &d).unwrap();
        prop_assert_eq!(fg, r_test(&g, &f, &d).unwrap());
        prop_assert_eq!(r_test(&f, &f, &d).unwrap(), 0.0);
        prop_assert!((0.0..=1.0).contains(&fg));
    }

    #[test]
    fn logit_round_trip(a in row(3), b in unit(), x in row(3)) {
        let m = LogisticModel::new(a, b);
        prop_assert!((sigmoid(m.logit(&x).unwrap()) - m.predict_prob(&x).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn summary_means_match_columns(values in prop::collection::vec((0.0..=1.0f64, 0usize..500), 1..30)) {
        let rows: Vec<ResultRow> = values
            .iter()
            .enumerate()
            .map(|(i, (acc, q))| ResultRow {
                experiment: "p".into(),
                dataset: "d".into(),
                defense: "none".into(),
                attack: "qpd-linear".into(),
                r: RValue::Auto.to_string(),
                r_used: Some(2),
                epsilon: 1.0,
                alpha: 1.0,
                seed: i as u64,
                accuracy: Some(*acc),
                r_test: None,
                extraction_status: None,
                warning_estimate: None,
                epsilon_spent: None,
                queries_sent: Some(*q),
                wall_time: 0.0,
                status: RowStatus::Ok,
                error: String::new(),
            })
            .collect();
        let s = summarize(&rows);
        prop_assert_eq!(s.len(), 1);
        let n = values.len() as f64;
        let acc_mean = values.iter().map(|v| v.0).sum::<f64>() / n;
        let q_mean = values.iter().map(|v| v.1 as f64).sum::<f64>() / n;
        prop_assert!((s[0].metrics["accuracy"].mean - acc_mean).abs() <= 1e-12);
        prop_assert!((s[0].metrics["queries_sent"].mean - q_mean).abs() <= 1e-12);
        prop_assert!(!s[0].metrics.contains_key("r_test"));
    }

    #[test]
    fn r_value_round_trips(r in prop_oneof![Just(RValue::Auto), (1usize..1 << 20).prop_map(RValue::Fixed)]) {
        let text = serde_json::to_string(&r).unwrap();
        prop_assert_eq!(serde_json::from_str::<RValue>(&text).unwrap(), r);
    }
}
