#![allow(dead_code)]

use std::path::{Path, PathBuf};

use discox_core::partition::{partition_file, EventTarget, PartitionPlan, DEFAULT_SEED};
use discox_core::ModelSpec;
use discox_exchange::{
    orchestrate_center, orchestrate_partner, CenterOptions, CenterRun, PartnerConfig, PartnerExit, Result, Transport,
};

pub fn rossi_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/rossi.csv")
}

pub fn example_spec(run_id: &str) -> ModelSpec {
    let mut s = ModelSpec::new(run_id, "week", "arrest", vec!["fin".into(), "age".into(), "prio".into()]);
    s.dataset_name = "rossi".into();
    s.partner_ids = vec![1, 2, 3];
    s
}

/// Three shards of 134/149/149 rows holding 36/42/36 events.
pub fn shards(dir: &Path) -> Vec<PathBuf> {
    let outs: Vec<PathBuf> = (1..=3).map(|k| dir.join(format!("dp{k}.csv"))).collect();
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
    outs
}

pub fn partner_configs(run_id: &str, data: &[PathBuf]) -> Vec<PartnerConfig> {
    data.iter()
        .enumerate()
        .map(|(i, d)| PartnerConfig {
            run_id: run_id.into(),
            partner_id: i as i64 + 1,
            data: d.clone(),
            min_count_override: None,
        })
        .collect()
}

/// Runs the center on this thread and each partner on its own thread.
pub fn run_distributed(
    spec: &ModelSpec,
    transport: &Transport,
    partners: &[PartnerConfig],
    opts: &CenterOptions,
) -> (CenterRun, Vec<Result<PartnerExit>>) {
    std::thread::scope(|s| {
        let handles: Vec<_> = partners
            .iter()
            .map(|cfg| {
                let t = transport.clone();
                s.spawn(move || orchestrate_partner(cfg, &t))
            })
            .collect();
        let run = orchestrate_center(spec, transport, opts);
        let exits = handles.into_iter().map(|h| h.join().unwrap()).collect();
        (run, exits)
    })
}
