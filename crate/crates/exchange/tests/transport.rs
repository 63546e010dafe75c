use std::collections::BTreeMap;
use std::fs;
use std::time::{Duration, Instant};

use discox_core::diagnostics::{BaselineEstimator, BaselineHazard, BinnedResidualSummary, ResidualBin};
use discox_core::matrix::Matrix;
use discox_core::model::StratumKey;
use discox_core::site::{
    CensoringRow, CensoringSummary, CovariateSums, EventTimeGrid, RiskSetSummary, Scope, ScoreContribution,
    StratumGrid, TiedRiskSums,
};
use discox_core::{ComputationPath, ErrorCategory, EvalPurpose, Ties};
use discox_exchange::codec::{decode, encode};
use discox_exchange::message::*;
use discox_exchange::transport::mailbox_dir;
use discox_exchange::{Direction, ExchangeError, Transport, TransportConfig};
use proptest::prelude::*;

fn key(s: &str) -> StratumKey {
    StratumKey::parse(s)
}

fn grid() -> EventTimeGrid {
    let mut strata = BTreeMap::new();
    strata.insert(
        key("1"),
        StratumGrid {
            times: vec![1.0, 2.5, 7.0],
            ties: vec![1, 3, 2],
        },
    );
    strata.insert(key("2"), StratumGrid::default());
    EventTimeGrid { strata }
}

fn iterate(beta: Vec<f64>) -> Message {
    Message::new(
        "r1",
        1,
        Payload::Iterate(Iterate {
            beta,
            grid: grid(),
            ties: Ties::Efron,
            path: ComputationPath::CenterAggregated,
            purpose: EvalPurpose::Iteration,
            want_baseline: false,
        }),
    )
}

fn sym(v: &[f64]) -> Matrix {
    Matrix::from_lower_triangle(2, v).unwrap()
}

fn baseline() -> BaselineHazard {
    let mut strata = BTreeMap::new();
    strata.insert(key("1"), vec![(1.0, 0.1 / 3.0), (2.5, 1e-300 + 0.2)]);
    strata.insert(key("2"), Vec::new());
    BaselineHazard {
        estimator: BaselineEstimator::FlemingHarrington,
        strata,
    }
}

/// One message of every kind, with values that do not print exactly.
fn every_kind() -> Vec<Message> {
    let awkward = [1.0 / 3.0, -2.0f64.sqrt(), 6.02214076e23, 5e-324, -0.0, 0.1 + 0.2];
    let summary = RiskSetSummary {
        stratum: key("1"),
        time: 2.5,
        local_tie_count: 3,
        d0: awkward[0],
        d1: vec![awkward[1], awkward[2]],
        s0: 17.0 / 7.0,
        s1: vec![awkward[3], awkward[4]],
        s2: sym(&[awkward[5], 1.0 / 9.0, std::f64::consts::PI]),
        tied: Some(TiedRiskSums {
            q0: 0.7,
            q1: vec![1e-17, -1e17],
            q2: sym(&[2.0 / 3.0, -0.0, 1e-310]),
        }),
    };
    let score = ScoreContribution {
        stratum: key("3;a"),
        loglik: -123.456_789_012_345_68,
        gradient: vec![awkward[0], awkward[5]],
        hessian: sym(&[-1.0 / 7.0, 0.25, -3.0 / 11.0]),
        scope: Scope::Stratum,
    };
    let payloads = vec![
        Payload::HandshakeRequest(HandshakeRequest {
            dependent_var: "week".into(),
            censoring_var: "arrest".into(),
            censoring_level: 0.0,
            independent_vars: vec!["fin".into(), "age".into()],
            strata_vars: vec!["dp_cd".into()],
            weight_var: Some("w".into()),
            freq_var: None,
            ties: Ties::Breslow,
            path: ComputationPath::SiteAggregated,
            want_grid: false,
            groups: 10,
            min_count_per_grp_glob: 6,
            max_numb_of_grp: 10_000,
        }),
        Payload::HandshakeReply(HandshakeReply {
            partner_id: 2,
            grid: Some(grid()),
            censoring: CensoringSummary {
                rows: vec![CensoringRow {
                    stratum: key("1"),
                    total: 10,
                    events: 4,
                    censored: 6,
                }],
            },
            covariate_sums: vec![CovariateSums {
                stratum: key("1"),
                sums: vec![awkward[0], awkward[2]],
                weight_total: 10.5,
            }],
            records: 10,
            dropped_rows: 2,
        }),
        iterate(awkward.to_vec()).payload,
        Payload::SummaryReply(SummaryReply::RiskSets {
            partner_id: 1,
            summaries: vec![summary],
        }),
        Payload::SummaryReply(SummaryReply::Scores {
            partner_id: 3,
            scores: vec![score],
            baseline: Some(baseline()),
        }),
        Payload::Finalize(Finalize {
            beta_hat: vec![awkward[1], awkward[3]],
            baseline: baseline(),
        }),
        Payload::DiagnosticsReply(BinnedResidualSummary {
            partner_id: 2,
            rows: vec![ResidualBin {
                partner_id: 2,
                bin: 1,
                count: 12,
                mean_linear_predictor: -0.123,
                mean_martingale: 1.0 / 12.0,
                mean_deviance: -7e-8,
            }],
            suppressed: false,
        }),
        Payload::Stop(Stop {
            status: "NUMERIC_ERROR".into(),
            reason: "information matrix is singular, \"quoted\"".into(),
        }),
        Payload::Error(ErrorReply {
            partner_id: 4,
            category: ErrorCategory::Config,
            reason: "column `x` not found".into(),
        }),
    ];
    payloads
        .into_iter()
        .enumerate()
        .map(|(i, p)| Message::new("rt", i as u32, p))
        .collect()
}

fn quick(cfg: TransportConfig) -> Transport {
    Transport::new(cfg.with_waits(0.01, 0.2))
}

#[test]
fn iterate_mailbox_layout() {
    let dir = tempfile::tempdir().unwrap();
    let t = quick(TransportConfig::directory(dir.path()));
    t.send(Direction::ToPartner(1), &iterate(vec![0.0; 3])).unwrap();
    let mailbox = mailbox_dir(dir.path(), "r1", Direction::ToPartner(1), 1);
    assert!(mailbox.ends_with("r1/to_dp1/round_1"));
    let mut names: Vec<String> = fs::read_dir(&mailbox)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["beta.csv", "files_done.ok", "grid.csv", "manifest.csv"]);
    assert_eq!(fs::metadata(mailbox.join("files_done.ok")).unwrap().len(), 0);

    let manifest = fs::read_to_string(mailbox.join("manifest.csv")).unwrap();
    assert!(manifest.contains("file:beta.csv,3"));
    assert!(manifest.contains("file:grid.csv,4"));
}

#[test]
fn resend_collides() {
    let dir = tempfile::tempdir().unwrap();
    for t in [quick(TransportConfig::directory(dir.path())), quick(TransportConfig::loopback())] {
        t.send(Direction::FromPartner(2), &iterate(vec![1.0])).unwrap();
        let err = t.send(Direction::FromPartner(2), &iterate(vec![2.0])).unwrap_err();
        assert!(matches!(err, ExchangeError::MailboxCollision { .. }), "{err}");
    }
}

#[test]
fn present_trigger_returns_at_once() {
    let dir = tempfile::tempdir().unwrap();
    let t = Transport::new(TransportConfig::directory(dir.path()).with_waits(5.0, 10.0));
    t.send(Direction::ToPartner(1), &iterate(vec![0.5])).unwrap();
    let started = Instant::now();
    let (msg, _) = t.receive(Direction::ToPartner(1), "r1", 1).unwrap();
    assert!(started.elapsed() < Duration::from_secs(1));
    assert_eq!(msg, iterate(vec![0.5]));
}

#[test]
fn missing_trigger_times_out() {
    let dir = tempfile::tempdir().unwrap();
    for t in [quick(TransportConfig::directory(dir.path())), quick(TransportConfig::loopback())] {
        let started = Instant::now();
        let err = t.receive(Direction::FromPartner(9), "r1", 0).unwrap_err();
        assert!(matches!(err, ExchangeError::Timeout { .. }), "{err}");
        assert!(started.elapsed() >= Duration::from_millis(200));
        assert_eq!(err.category(), ErrorCategory::Protocol);
    }

    // Payload files without the trigger are not a message yet.
    let t = quick(TransportConfig::directory(dir.path()));
    t.send(Direction::ToPartner(1), &iterate(vec![0.5])).unwrap();
    let mailbox = mailbox_dir(dir.path(), "r1", Direction::ToPartner(1), 1);
    fs::remove_file(mailbox.join("files_done.ok")).unwrap();
    assert!(matches!(
        t.receive(Direction::ToPartner(1), "r1", 1),
        Err(ExchangeError::Timeout { .. })
    ));
}

#[test]
fn missing_column_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let t = quick(TransportConfig::directory(dir.path()));
    t.send(Direction::ToPartner(1), &iterate(vec![0.5, 0.25])).unwrap();
    let grid = mailbox_dir(dir.path(), "r1", Direction::ToPartner(1), 1).join("grid.csv");
    let text = fs::read_to_string(&grid).unwrap();
    let stripped: String = text
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n")
        .collect();
    fs::write(&grid, stripped).unwrap();

    match t.receive(Direction::ToPartner(1), "r1", 1).unwrap_err() {
        ExchangeError::MalformedPayload { file, detail } => {
            assert_eq!(file, "grid.csv");
            assert!(detail.contains("`ties`"), "{detail}");
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn row_count_and_number_checks() {
    let mut files = encode(&iterate(vec![0.5, 0.25]));
    let beta = String::from_utf8(files["beta.csv"].clone()).unwrap();
    files.insert("beta.csv".into(), beta.replace("0.25", "abc").into_bytes());
    let err = decode(&files).unwrap_err().to_string();
    assert!(err.contains("beta.csv") && err.contains("`value`"), "{err}");

    let mut files = encode(&iterate(vec![0.5, 0.25]));
    let beta = String::from_utf8(files["beta.csv"].clone()).unwrap();
    files.insert("beta.csv".into(), beta.lines().take(2).collect::<Vec<_>>().join("\n").into_bytes());
    let err = decode(&files).unwrap_err().to_string();
    assert!(err.contains("declares 2 rows"), "{err}");
}

#[test]
fn every_kind_round_trips_bit_for_bit() {
    let t = quick(TransportConfig::loopback());
    let dir = tempfile::tempdir().unwrap();
    let d = quick(TransportConfig::directory(dir.path()));
    for msg in every_kind() {
        for tr in [&t, &d] {
            tr.send(Direction::ToPartner(5), &msg).unwrap();
            let (back, stats) = tr.receive(Direction::ToPartner(5), &msg.run_id, msg.round).unwrap();
            assert_eq!(back, msg, "{}", msg.kind().as_str());
            // Equality of the re-encoding also pins signed zeros.
            assert_eq!(encode(&back), encode(&msg));
            assert!(stats.rows > 0 || matches!(msg.payload, Payload::Stop(_) | Payload::Error(_) | Payload::HandshakeRequest(_)));
        }
    }
}

#[test]
fn suppressed_bins_keep_withheld_means() {
    let msg = Message::new(
        "s",
        4,
        Payload::DiagnosticsReply(BinnedResidualSummary {
            partner_id: 1,
            rows: vec![ResidualBin {
                partner_id: 1,
                bin: 1,
                count: 4,
                mean_linear_predictor: f64::NAN,
                mean_martingale: f64::NAN,
                mean_deviance: f64::NAN,
            }],
            suppressed: true,
        }),
    );
    let Payload::DiagnosticsReply(back) = decode(&encode(&msg)).unwrap().payload else {
        panic!("wrong kind")
    };
    assert!(back.suppressed);
    assert_eq!(back.rows[0].count, 4);
    assert!(back.rows[0].mean_martingale.is_nan());
}

proptest! {
    #[test]
    fn floats_survive_the_wire(bits in proptest::collection::vec(any::<u64>(), 1..8)) {
        let beta: Vec<f64> = bits.iter().map(|b| f64::from_bits(*b)).filter(|v| v.is_finite()).collect();
        prop_assume!(!beta.is_empty());
        let back = decode(&encode(&iterate(beta.clone()))).unwrap();
        let Payload::Iterate(it) = back.payload else { unreachable!() };
        let got: Vec<u64> = it.beta.iter().map(|v| v.to_bits()).collect();
        let want: Vec<u64> = beta.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(got, want);
    }
}
