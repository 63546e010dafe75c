use std::path::PathBuf;

use discox_core::diagnostics::evaluate_subject_diagnostics;
use discox_core::output::{read_bundle, write_bundle, P_EST};
use discox_core::partition::{partition_file, EventTarget, PartitionPlan, DEFAULT_SEED};
use discox_core::site::{compute_censoring_summary, compute_site_summaries, extract_local_event_times};
use discox_core::{fit_pooled, ingest_dataset, AnalysisDataset, ModelSpec, RunState, Ties};

// Unrounded reference fit from an independent numpy implementation.
const BETA: [f64; 3] = [-0.34644402444002836, -0.06692076949148994, 0.0965282757323932];
const SE: [f64; 3] = [0.19023565228614206, 0.02083973009510511, 0.02724121109087948];

fn rossi_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/rossi.csv")
}

fn spec(run_id: &str) -> ModelSpec {
    let mut s = ModelSpec::new(run_id, "week", "arrest", vec!["fin".into(), "age".into(), "prio".into()]);
    s.dataset_name = "rossi".into();
    s
}

fn rossi() -> AnalysisDataset {
    ingest_dataset(&rossi_path(), &spec("t"), 1).unwrap()
}

#[test]
fn fixture_shape() {
    let ds = rossi();
    assert_eq!(ds.records.len(), 432);
    assert_eq!(ds.dropped_rows, 0);
    let grid = extract_local_event_times(&ds);
    assert_eq!(grid.cells(), 49);
    let s = compute_site_summaries(&ds, &[0.0; 3], &grid, Ties::Breslow).unwrap();
    assert_eq!(s[0].s0, 432.0);
    assert_eq!((s[48].time, s[48].s0, s[48].local_tie_count), (52.0, 322.0, 4));

    let c = compute_censoring_summary(&ds).total();
    assert_eq!((c.total, c.events, c.censored), (432, 114, 318));
    assert_eq!(format!("{:.2}", c.percent_censored()), "73.61");
}

#[test]
fn pooled_fit_reproduces_example_one() {
    let a = fit_pooled(&rossi(), &spec("dc1")).unwrap();
    assert_eq!(a.status.state, RunState::Converged);
    let fit = a.fit.as_ref().unwrap();
    let cov = fit.covariance.as_ref().unwrap();
    for i in 0..3 {
        assert!((fit.beta_hat[i] - BETA[i]).abs() < 1e-8);
        assert!((cov[(i, i)] - SE[i] * SE[i]).abs() < 1e-10);
    }
    let inf = a.inference.as_ref().unwrap();
    assert!((inf.fit_stats.neg2loglik_null - 1351.366779).abs() < 5e-6);
    assert!((inf.fit_stats.neg2loglik_fit - 1322.465221).abs() < 5e-6);
    assert!((inf.fit_stats.aic - 1328.465221).abs() < 5e-6);
    assert!((inf.fit_stats.bic - 1336.673816).abs() < 5e-6);

    // Concave objective from zero: the log-likelihood never drops.
    assert!(fit.history.windows(2).all(|w| w[1].loglik >= w[0].loglik));
    assert_eq!(fit.provider_calls, fit.iterations_used + 1);
    assert!(fit.history.len() <= 21);
}

#[test]
fn tight_tolerance_solves_score_equation() {
    let mut s = spec("tight");
    s.xconv = 1e-8;
    let a = fit_pooled(&rossi(), &s).unwrap();
    let g = &a.fit.as_ref().unwrap().gradient_final;
    assert!(g.iter().all(|v| v.abs() < 1e-6), "{g:?}");
}

#[test]
fn residual_invariants() {
    let ds = rossi();
    let a = fit_pooled(&ds, &spec("dc1")).unwrap();
    let fit = a.fit.as_ref().unwrap();
    let recs = evaluate_subject_diagnostics(&ds, &fit.beta_hat, a.baseline.as_ref().unwrap());
    let total: f64 = recs.iter().map(|r| r.martingale).sum();
    assert!(total.abs() < 1e-8, "{total}");
    for r in &recs {
        assert!(r.martingale <= 1.0);
        assert!(r.survival > 0.0 && r.survival <= 1.0);
        if r.martingale != 0.0 && r.deviance != 0.0 {
            assert_eq!(r.martingale.signum(), r.deviance.signum());
        }
    }
    let mean = total / recs.len() as f64;

    assert_eq!(a.residual_bins.len(), 1);
    let bins = &a.residual_bins[0];
    assert_eq!(bins.rows.len(), 10);
    assert_eq!(bins.total_count(), 432);
    assert!(bins.rows.iter().all(|b| b.count >= 6));
    let weighted: f64 = bins.rows.iter().map(|b| b.mean_martingale * b.count as f64).sum::<f64>() / 432.0;
    assert!((weighted - mean).abs() < 1e-12);
    assert!(bins.rows.windows(2).all(|w| w[0].mean_linear_predictor < w[1].mean_linear_predictor));

    for curve in a.survival.values() {
        assert!(curve.iter().all(|(_, s)| *s > 0.0 && *s <= 1.0));
        assert!(curve.windows(2).all(|w| w[1].1 <= w[0].1));
    }
    let steps = &a.baseline.as_ref().unwrap().strata.values().next().unwrap();
    assert_eq!(steps.len(), 49);
    assert!(steps.windows(2).all(|w| w[1].1 >= w[0].1));
}

#[test]
fn bundle_is_deterministic_and_holds_table_three() {
    let a = fit_pooled(&rossi(), &spec("dc1")).unwrap();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let f1 = write_bundle(&a, d1.path()).unwrap();
    let f2 = write_bundle(&a, d2.path()).unwrap();
    assert_eq!(f1.len(), 13);
    for (x, y) in f1.iter().zip(&f2) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
    let b = read_bundle(d1.path(), "dc1").unwrap();
    let p = b.require(P_EST).unwrap();
    let est: f64 = p.lookup("fin", "Estimate").unwrap().parse().unwrap();
    let hr: f64 = p.lookup("fin", "HazardRatio").unwrap().parse().unwrap();
    assert!((est + 0.346444).abs() < 5e-7);
    assert!((hr - 0.707198).abs() < 5e-7);
}

#[test]
fn shards_with_target_event_counts() {
    let dir = tempfile::tempdir().unwrap();
    let outs: Vec<PathBuf> = (1..=3).map(|k| dir.path().join(format!("dp{k}.csv"))).collect();
    let plan = PartitionPlan {
        sizes: vec![134, 149, 149],
        seed: DEFAULT_SEED,
        events: Some(EventTarget {
            censoring_var: "arrest".into(),
            censoring_level: 0.0,
            counts: vec![36, 42, 36],
        }),
    };
    partition_file(&rossi_path(), &plan, &outs).unwrap();
    let mut s = spec("dc2");
    s.strata_vars = vec!["dp_cd".into()];
    let want = [(134, 36, 98), (149, 42, 107), (149, 36, 113)];
    for (k, path) in outs.iter().enumerate() {
        let ds = ingest_dataset(path, &s, k as i64 + 1).unwrap();
        let c = compute_censoring_summary(&ds).total();
        assert_eq!((c.total, c.events, c.censored), want[k]);
        assert!(ds.records.iter().all(|r| r.partner_id == k as i64 + 1));
    }
}
