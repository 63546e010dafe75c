#![allow(dead_code)]

use discox_core::model::{AnalysisDataset, StratumKey, StratumValue, SubjectRecord};
use discox_core::Ties;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn record(time: f64, event: bool, z: Vec<f64>, stratum: u32, partner: i64) -> SubjectRecord {
    SubjectRecord {
        weight: 1.0,
        freq: 1,
        time,
        event,
        covariates: z,
        stratum: if stratum == 0 {
            StratumKey::empty()
        } else {
            StratumKey(vec![StratumValue::Num(stratum as f64)])
        },
        partner_id: partner,
    }
}

pub fn dataset(records: Vec<SubjectRecord>, p: usize, partner: i64) -> AnalysisDataset {
    AnalysisDataset {
        records,
        covariate_names: (0..p).map(|i| format!("z{i}")).collect(),
        partner_id: partner,
        dropped_rows: 0,
    }
}

/// Small random dataset with heavily tied integer times. `strata` = 0
/// means unstratified.
pub fn random_records(seed: u64, n: usize, p: usize, strata: u32, max_freq: u64) -> Vec<SubjectRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut r = record(
                rng.gen_range(1..=6) as f64,
                rng.gen_bool(0.6),
                (0..p).map(|_| rng.gen_range(-1.5..1.5)).collect(),
                if strata == 0 { 0 } else { rng.gen_range(1..=strata) },
                1,
            );
            r.freq = rng.gen_range(1..=max_freq);
            r
        })
        .collect()
}

/// Brute-force partial log-likelihood straight from the definition, for
/// unit weights. Frequencies are expanded into copies first, so this also
/// checks the frequency convention independently.
pub fn oracle_loglik(records: &[SubjectRecord], beta: &[f64], ties: Ties) -> f64 {
    let expanded: Vec<&SubjectRecord> = records
        .iter()
        .flat_map(|r| std::iter::repeat_n(r, r.freq as usize))
        .collect();
    let theta = |r: &SubjectRecord| r.covariates.iter().zip(beta).map(|(z, b)| z * b).sum::<f64>();

    let mut times: Vec<(StratumKey, f64)> = expanded
        .iter()
        .filter(|r| r.event)
        .map(|r| (r.stratum.clone(), r.time))
        .collect();
    times.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    times.dedup();

    let mut l = 0.0;
    for (stratum, t) in times {
        let dead: Vec<&&SubjectRecord> = expanded
            .iter()
            .filter(|r| r.event && r.time == t && r.stratum == stratum)
            .collect();
        let at_risk: f64 = expanded
            .iter()
            .filter(|r| r.time >= t && r.stratum == stratum)
            .map(|r| theta(r).exp())
            .sum();
        let tied: f64 = dead.iter().map(|r| theta(r).exp()).sum();
        let d = dead.len() as f64;
        l += dead.iter().map(|r| theta(r)).sum::<f64>();
        match ties {
            Ties::Breslow => l -= d * at_risk.ln(),
            Ties::Efron => {
                for s in 0..dead.len() {
                    l -= (at_risk - s as f64 / d * tied).ln();
                }
            }
        }
    }
    l
}
