mod common;

use common::{dataset, oracle_loglik, random_records, record};
use discox_core::aggregate::{aggregate_summaries, merge_event_time_grids, stratum_scores_from_summaries, total_score, PartnerSummaries};
use discox_core::model::SubjectRecord;
use discox_core::site::{compute_site_summaries, extract_local_event_times, ScoreContribution};
use discox_core::{AnalysisDataset, ComputationPath, EvalPurpose, LocalProvider, ScoreProvider, Ties};
use proptest::prelude::*;

fn score(datasets: &[AnalysisDataset], beta: &[f64], ties: Ties, path: ComputationPath) -> ScoreContribution {
    LocalProvider::new(datasets, path, ties)
        .evaluate(beta, EvalPurpose::Iteration)
        .unwrap()
}

fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn loglik_matches_brute_force() {
    for seed in 0..8 {
        for ties in [Ties::Breslow, Ties::Efron] {
            for strata in [0, 2] {
                let recs = random_records(seed, 25, 3, strata, 2);
                let ds = [dataset(recs.clone(), 3, 1)];
                let beta = [0.3, -0.7, 0.2];
                let sc = score(&ds, &beta, ties, ComputationPath::CenterAggregated);
                let want = oracle_loglik(&recs, &beta, ties);
                assert!((sc.loglik - want).abs() < 1e-10, "seed {seed} {ties} strata {strata}: {} vs {want}", sc.loglik);
            }
        }
    }
}

/// Central differences of the library's own log-likelihood, h = 1e-5.
fn check_derivatives(ds: &[AnalysisDataset], beta: &[f64], ties: Ties) {
    let p = beta.len();
    let h = 1e-5;
    let at = |b: &[f64]| score(ds, b, ties, ComputationPath::CenterAggregated);
    let base = at(beta);
    for j in 0..p {
        let mut up = beta.to_vec();
        let mut dn = beta.to_vec();
        up[j] += h;
        dn[j] -= h;
        let (su, sd) = (at(&up), at(&dn));
        let g_fd = (su.loglik - sd.loglik) / (2.0 * h);
        assert!(rel_close(base.gradient[j], g_fd, 1e-6), "g[{j}] {} vs {g_fd}", base.gradient[j]);
        for i in 0..p {
            let h_fd = (su.gradient[i] - sd.gradient[i]) / (2.0 * h);
            assert!(rel_close(base.hessian[(i, j)], h_fd, 1e-6), "H[{i},{j}] {} vs {h_fd}", base.hessian[(i, j)]);
        }
    }
}

#[test]
fn derivatives_match_finite_differences() {
    for seed in 0..6 {
        for ties in [Ties::Breslow, Ties::Efron] {
            for strata in [0, 3] {
                let p = 1 + (seed as usize % 3);
                let ds = [dataset(random_records(100 + seed, 30, p, strata, 1), p, 1)];
                let beta: Vec<f64> = (0..p).map(|i| 0.4 - 0.3 * i as f64).collect();
                check_derivatives(&ds, &beta, ties);
            }
        }
    }
}

#[test]
fn efron_equals_breslow_without_ties() {
    let recs: Vec<_> = (0..20)
        .map(|i| record(1.0 + i as f64 * 0.5, i % 3 != 0, vec![(i as f64 * 0.37).sin(), (i % 4) as f64], 0, 1))
        .collect();
    let ds = [dataset(recs, 2, 1)];
    let beta = [0.5, -0.25];
    let b = score(&ds, &beta, Ties::Breslow, ComputationPath::CenterAggregated);
    let e = score(&ds, &beta, Ties::Efron, ComputationPath::CenterAggregated);
    assert_eq!(b.loglik, e.loglik);
    assert_eq!(b.gradient, e.gradient);
    assert_eq!(b.hessian, e.hessian);
}

fn split(recs: &[SubjectRecord], cuts: &[usize]) -> Vec<AnalysisDataset> {
    let mut out = Vec::new();
    let mut start = 0;
    for (k, &end) in cuts.iter().chain([recs.len()].iter()).enumerate() {
        let part: Vec<_> = recs[start..end]
            .iter()
            .cloned()
            .map(|mut r| {
                r.partner_id = k as i64 + 1;
                r
            })
            .collect();
        out.push(dataset(part, recs[0].covariates.len(), k as i64 + 1));
        start = end;
    }
    out
}

fn max_gap(a: &ScoreContribution, b: &ScoreContribution) -> f64 {
    let scale = a.loglik.abs().max(1.0);
    let mut gap = (a.loglik - b.loglik).abs() / scale;
    for (x, y) in a.gradient.iter().zip(&b.gradient) {
        gap = gap.max((x - y).abs() / scale);
    }
    for (x, y) in a.hessian.as_slice().iter().zip(b.hessian.as_slice()) {
        gap = gap.max((x - y).abs() / scale);
    }
    gap
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn summaries_are_additive_over_partners(seed in 0u64..10_000, n in 6usize..40, efron in any::<bool>(), c1 in 0.0f64..1.0, c2 in 0.0f64..1.0) {
        let ties = if efron { Ties::Efron } else { Ties::Breslow };
        let recs = random_records(seed, n, 2, 0, 2);
        let (a, b) = {
            let x = (c1 * n as f64) as usize;
            let y = (c2 * n as f64) as usize;
            (x.min(y), x.max(y))
        };
        let parts = split(&recs, &[a, b]);
        let pooled = [dataset(recs.clone(), 2, 1)];
        let beta = [0.2, -0.4];
        let whole = score(&pooled, &beta, ties, ComputationPath::CenterAggregated);
        let dist = score(&parts, &beta, ties, ComputationPath::CenterAggregated);
        prop_assert!(max_gap(&whole, &dist) < 1e-12, "gap {}", max_gap(&whole, &dist));
    }

    #[test]
    fn invariant_under_row_and_partner_order(seed in 0u64..10_000, n in 6usize..40, efron in any::<bool>()) {
        let ties = if efron { Ties::Efron } else { Ties::Breslow };
        let recs = random_records(seed, n, 3, 2, 1);
        let beta = [0.1, 0.3, -0.2];
        let base = score(&split(&recs, &[n / 3, 2 * n / 3]), &beta, ties, ComputationPath::CenterAggregated);
        let mut rev = recs.clone();
        rev.reverse();
        let mut parts = split(&rev, &[n / 2]);
        parts.reverse();
        let other = score(&parts, &beta, ties, ComputationPath::CenterAggregated);
        prop_assert!(max_gap(&base, &other) < 1e-12);
    }

    #[test]
    fn site_and_center_paths_agree_when_strata_are_partners(seed in 0u64..10_000, n in 9usize..40, efron in any::<bool>()) {
        let ties = if efron { Ties::Efron } else { Ties::Breslow };
        let recs = random_records(seed, n, 2, 0, 2);
        let mut parts = split(&recs, &[n / 3, 2 * n / 3]);
        for ds in &mut parts {
            let k = ds.partner_id;
            for r in &mut ds.records {
                r.stratum = discox_core::StratumKey(vec![discox_core::model::StratumValue::Num(k as f64)]);
            }
        }
        let beta = [-0.3, 0.6];
        let a = score(&parts, &beta, ties, ComputationPath::SiteAggregated);
        let b = score(&parts, &beta, ties, ComputationPath::CenterAggregated);
        prop_assert!(max_gap(&a, &b) < 1e-12);
    }

    #[test]
    fn summaries_on_superset_grid_change_nothing(seed in 0u64..10_000, n in 4usize..30) {
        let recs = random_records(seed, n, 2, 0, 1);
        let ds = dataset(recs, 2, 1);
        let local = extract_local_event_times(&ds);
        let mut times: Vec<f64> = (1..=12).map(|t| t as f64 * 0.5).collect();
        times.extend(local.strata.values().flat_map(|g| g.times.clone()));
        let wide = discox_core::site::EventTimeGrid::from_time_set(local.strata.keys().cloned(), &times);
        let beta = [0.25, -0.5];
        for ties in [Ties::Breslow, Ties::Efron] {
            let on_local = compute_site_summaries(&ds, &beta, &local, ties).unwrap();
            let on_wide = compute_site_summaries(&ds, &beta, &wide, ties).unwrap();
            let grid_a = merge_event_time_grids([&local]);
            let grid_b = merge_event_time_grids([&wide]);
            let ga = aggregate_summaries(&[PartnerSummaries { partner_id: 1, summaries: on_local }], &[1], &grid_a, ties).unwrap();
            let gb = aggregate_summaries(&[PartnerSummaries { partner_id: 1, summaries: on_wide }], &[1], &grid_b, ties).unwrap();
            let sa = total_score(&stratum_scores_from_summaries(&ga, &beta, ties).unwrap());
            let sb = total_score(&stratum_scores_from_summaries(&gb, &beta, ties).unwrap());
            prop_assert!(max_gap(&sa, &sb) < 1e-13);
        }
    }
}
