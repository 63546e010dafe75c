mod common;

use std::fs;
use std::path::{Path, PathBuf};

use common::*;
use discox_core::output::write_bundle;
use discox_core::{fit_local, ingest_dataset, ComputationPath, ErrorCategory, EvalPurpose, RunState};
use discox_exchange::transport::mailbox_dir;
use discox_exchange::{
    orchestrate_center, orchestrate_partner, CenterOptions, CenterRun, Direction, ExchangeError, Kind, Payload, Transport, TransportConfig,
};

// Reference estimates at six decimals.
const TABLE3: [f64; 3] = [-0.346444, -0.066921, 0.096528];

fn loopback() -> Transport {
    Transport::new(TransportConfig::loopback().with_waits(0.005, 60.0))
}

fn directory(root: &Path) -> Transport {
    Transport::new(TransportConfig::directory(root).with_waits(0.002, 60.0))
}

fn summary_rows(run: &CenterRun, purpose: EvalPurpose) -> Vec<usize> {
    run.traffic
        .iter()
        .filter(|t| t.kind == Kind::SummaryReply && t.purpose == Some(purpose))
        .map(|t| t.stats.rows)
        .collect()
}

#[test]
fn three_partners_reproduce_table_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = shards(dir.path());
    let spec = example_spec("dc1");
    let (run, exits) = run_distributed(&spec, &loopback(), &partner_configs("dc1", &data), &CenterOptions::default());
    assert!(run.error.is_none(), "{:?}", run.error);
    assert_eq!(run.analysis.status.state, RunState::Converged);
    for e in exits {
        assert_eq!(e.unwrap().stop.status, "CONVERGED");
    }

    let fit = run.analysis.fit.as_ref().unwrap();
    for (b, want) in fit.beta_hat.iter().zip(TABLE3) {
        assert!((b - want).abs() < 5e-7, "{b} vs {want}");
    }
    let iterations = summary_rows(&run, EvalPurpose::Iteration).len() / 3;
    let covariance = summary_rows(&run, EvalPurpose::Covariance).len() / 3;
    assert!(iterations <= 6, "{iterations} iteration rounds");
    assert_eq!(covariance, 1);
    // handshake, iterations, covariance, finalize, stop
    assert_eq!(run.rounds as usize, iterations + 3);

    // The distributed run is the in-process multi-site fit, exactly.
    let datasets: Vec<_> = data
        .iter()
        .enumerate()
        .map(|(i, p)| ingest_dataset(p, &spec, i as i64 + 1).unwrap())
        .collect();
    let local = fit_local(&datasets, &spec, ComputationPath::CenterAggregated).unwrap();
    assert_eq!(local.fit, run.analysis.fit);
    assert_eq!(local.baseline, run.analysis.baseline);
    assert_eq!(local.survival, run.analysis.survival);
    assert_eq!(local.residual_bins, run.analysis.residual_bins);
    assert_eq!(local.censoring, run.analysis.censoring);
}

fn bundle_bytes(run: &CenterRun, out: &Path) -> Vec<(String, Vec<u8>)> {
    write_bundle(&run.analysis, out)
        .unwrap()
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn transports_are_interchangeable() {
    let dir = tempfile::tempdir().unwrap();
    let data = shards(dir.path());
    for stratified in [false, true] {
        let mut spec = example_spec("eq");
        if stratified {
            spec.strata_vars = vec!["dp_cd".into()];
        }
        let partners = partner_configs("eq", &data);
        let (a, _) = run_distributed(&spec, &loopback(), &partners, &CenterOptions::default());
        let root = tempfile::tempdir().unwrap();
        let (b, _) = run_distributed(&spec, &directory(root.path()), &partners, &CenterOptions::default());
        assert!(a.error.is_none() && b.error.is_none());
        assert_eq!(a.analysis.fit, b.analysis.fit);
        assert_eq!(a.traffic, b.traffic);
        let (oa, ob) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        assert_eq!(bundle_bytes(&a, oa.path()), bundle_bytes(&b, ob.path()));
    }
}

/// Rewrites a shard with every event after the first `keep` distinct
/// event times turned into a censored record.
fn censor_late_events(src: &Path, dst: &Path, keep: usize) {
    let mut rdr = csv::Reader::from_path(src).unwrap();
    let header = rdr.headers().unwrap().clone();
    let week = header.iter().position(|h| h == "week").unwrap();
    let arrest = header.iter().position(|h| h == "arrest").unwrap();
    let rows: Vec<Vec<String>> = rdr
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect();
    let mut times: Vec<f64> = rows
        .iter()
        .filter(|r| r[arrest] == "1")
        .map(|r| r[week].parse().unwrap())
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let cutoff = times[keep - 1];
    let mut w = csv::Writer::from_path(dst).unwrap();
    w.write_record(&header).unwrap();
    for mut r in rows {
        if r[arrest] == "1" && r[week].parse::<f64>().unwrap() > cutoff {
            r[arrest] = "0".into();
        }
        w.write_record(&r).unwrap();
    }
}

#[test]
fn site_path_payload_ignores_event_time_count() {
    let dir = tempfile::tempdir().unwrap();
    let full = shards(dir.path());
    let thin: Vec<PathBuf> = full
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let out = dir.path().join(format!("thin{}.csv", i + 1));
            censor_late_events(p, &out, 5);
            out
        })
        .collect();
    let mut spec = example_spec("ca");
    spec.strata_vars = vec!["dp_cd".into()];
    let p = spec.p();

    let mut site_rows = Vec::new();
    let mut center_rows = Vec::new();
    for data in [&full, &thin] {
        let partners = partner_configs("ca", data);
        let (a, _) = run_distributed(&spec, &loopback(), &partners, &CenterOptions::default());
        assert!(a.error.is_none(), "{:?}", a.error);
        assert_eq!(a.analysis.path, ComputationPath::SiteAggregated);
        site_rows.push(summary_rows(&a, EvalPurpose::Iteration));

        let forced = CenterOptions {
            force_path: Some(ComputationPath::CenterAggregated),
            ..CenterOptions::default()
        };
        let (b, _) = run_distributed(&spec, &loopback(), &partners, &forced);
        assert!(b.error.is_none(), "{:?}", b.error);
        center_rows.push(summary_rows(&b, EvalPurpose::Iteration)[..3].to_vec());

        // Both paths fit the same stratified model.
        let (fa, fb) = (a.analysis.fit.unwrap(), b.analysis.fit.unwrap());
        for (x, y) in fa.beta_hat.iter().zip(&fb.beta_hat) {
            assert!((x - y).abs() < 1e-10);
        }
    }
    // One score row per stratum, regardless of event times.
    assert!(site_rows.iter().flatten().all(|&r| r == 1));
    assert_eq!(site_rows[0][..3], site_rows[1][..3]);
    // Risk-set rows track the grid: fewer event times, fewer rows.
    assert!(center_rows[1].iter().zip(&center_rows[0]).all(|(thin, full)| thin < full));
    assert!(center_rows[1].iter().all(|&r| r == 15), "{:?}", center_rows[1]);

    // 1 + p + p(p+1)/2 numbers per stratum row.
    let root = tempfile::tempdir().unwrap();
    let partners = partner_configs("cols", &full[..1]);
    let mut one = example_spec("cols");
    one.strata_vars = vec!["dp_cd".into()];
    one.partner_ids = vec![1];
    let (run, _) = run_distributed(&one, &directory(root.path()), &partners, &CenterOptions::default());
    assert!(run.error.is_none(), "{:?}", run.error);
    let scores = mailbox_dir(root.path(), "cols", Direction::FromPartner(1), 1).join("scores.csv");
    let text = fs::read_to_string(scores).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let numbers = lines[1].split(',').count() - 1;
    assert_eq!(numbers, 1 + p + p * (p + 1) / 2);
}

#[test]
fn silent_partner_times_out_and_stops_the_rest() {
    let dir = tempfile::tempdir().unwrap();
    let data = shards(dir.path());
    let mut spec = example_spec("silent");
    spec.partner_ids = vec![1, 2];
    let root = tempfile::tempdir().unwrap();
    let center = Transport::new(TransportConfig::directory(root.path()).with_waits(0.01, 0.5));
    // The live partner outwaits the center so it sees the STOP.
    let live = Transport::new(TransportConfig::directory(root.path()).with_waits(0.01, 30.0));
    let partners = partner_configs("silent", &data[..1]);
    let (run, exits) = std::thread::scope(|s| {
        let h = s.spawn(|| orchestrate_partner(&partners[0], &live));
        let run = orchestrate_center(&spec, &center, &CenterOptions::default());
        (run, vec![h.join().unwrap()])
    });

    assert!(matches!(run.error, Some(ExchangeError::Timeout { .. })), "{:?}", run.error);
    assert_eq!(run.analysis.status.state, RunState::Failed(ErrorCategory::Protocol));
    assert_eq!(run.exit_code(), 3);
    let exit = exits.into_iter().next().unwrap().unwrap();
    assert_eq!(exit.stop.status, "PROTOCOL_ERROR");
    for k in [1, 2] {
        assert!(mailbox_dir(root.path(), "silent", Direction::ToPartner(k), 1)
            .join("files_done.ok")
            .exists());
    }
    let written = write_bundle(&run.analysis, &root.path().join("out")).unwrap();
    assert_eq!(written.len(), 3);
}

#[test]
fn partner_failure_reaches_the_center() {
    let dir = tempfile::tempdir().unwrap();
    let data = shards(dir.path());
    let mut spec = example_spec("bad");
    spec.independent_vars[2] = "priors".into();
    let (run, exits) = run_distributed(&spec, &loopback(), &partner_configs("bad", &data), &CenterOptions::default());
    match &run.error {
        Some(ExchangeError::PartnerFailed { partner_id, category, reason }) => {
            assert_eq!((*partner_id, *category), (1, ErrorCategory::Config));
            assert!(reason.contains("priors"));
        }
        e => panic!("unexpected {e:?}"),
    }
    assert_eq!(run.exit_code(), 5);
    assert!(exits.iter().all(|e| e.is_err()));
}

#[test]
fn bins_respect_partner_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let data = shards(dir.path());
    let spec = example_spec("bins");
    let mut partners = partner_configs("bins", &data);
    partners[1].min_count_override = Some(20);
    let (run, _) = run_distributed(&spec, &loopback(), &partners, &CenterOptions::default());
    assert!(run.error.is_none());
    let bins = &run.analysis.residual_bins;
    assert_eq!(bins.len(), 3);
    for b in bins {
        let min = if b.partner_id == 2 { 20 } else { 6 };
        assert!(b.rows.len() <= 10);
        assert!(b.rows.iter().all(|r| r.count >= min), "partner {}: {:?}", b.partner_id, b.rows);
    }
    assert_eq!(bins[1].rows.len(), 7);
    assert_eq!(bins.iter().map(|b| b.total_count()).sum::<usize>(), 432);
}

#[test]
fn event_time_set_replaces_grid_collection() {
    let dir = tempfile::tempdir().unwrap();
    let data = shards(dir.path());
    let spec = example_spec("ets");
    let partners = partner_configs("ets", &data);
    let (base, _) = run_distributed(&spec, &loopback(), &partners, &CenterOptions::default());

    let all_weeks: Vec<f64> = (1..=52).map(f64::from).collect();
    let opts = CenterOptions {
        event_time_set: Some(all_weeks),
        ..CenterOptions::default()
    };
    let (run, _) = run_distributed(&spec, &loopback(), &partners, &opts);
    assert!(run.error.is_none(), "{:?}", run.error);
    // Weeks without events add zero-tie rows only.
    let (x, y) = (base.analysis.fit.as_ref().unwrap(), run.analysis.fit.as_ref().unwrap());
    for (a, b) in x.beta_hat.iter().zip(&y.beta_hat) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(summary_rows(&run, EvalPurpose::Iteration).iter().all(|&r| r == 52));

    // A set that misses event times is refused by the partners.
    let opts = CenterOptions {
        event_time_set: Some(vec![1.0, 2.0]),
        ..CenterOptions::default()
    };
    let (run, _) = run_distributed(&spec, &loopback(), &partners, &opts);
    assert!(matches!(run.error, Some(ExchangeError::PartnerFailed { .. })), "{:?}", run.error);
}

#[test]
fn partner_exits_cleanly_on_stop() {
    let t = loopback();
    let cfg = &partner_configs("halt", &[PathBuf::from("unused.csv")])[0];
    let stop = discox_exchange::Message::new(
        "halt",
        0,
        Payload::Stop(discox_exchange::message::Stop {
            status: "CONFIG_ERROR".into(),
            reason: "bad spec".into(),
        }),
    );
    t.send(Direction::ToPartner(1), &stop).unwrap();
    let exit = orchestrate_partner(cfg, &t).unwrap();
    assert_eq!(exit.rounds, 0);
}
