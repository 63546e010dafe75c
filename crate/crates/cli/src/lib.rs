//! Operator commands behind the `discox` binary.
//!
//! Exit codes: 0 converged, 2 not converged, 3 protocol failure (timeout,
//! malformed payload, I/O), 4 numeric failure, 5 configuration error.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use discox_core::output::{discover_run_ids, read_bundle, render_report, write_bundle, OUTPUT_SUBDIR};
use discox_core::partition::{partition_file, EventTarget, PartitionPlan, DEFAULT_SEED};
use discox_core::{fit_pooled, ingest_dataset, Analysis, ErrorCategory, RunState};
use discox_exchange::{
    orchestrate_center, orchestrate_partner, CenterOptions, CenterRun, Mode, PartnerConfig, Transport,
};

use config::{CenterSettings, ConfigError, PartnerSettings, RawConfig};

const EXIT_HELP: &str = "Exit codes: 0 converged, 2 not converged, 3 protocol error, 4 numeric error, 5 configuration error.";

#[derive(Debug, Parser)]
#[command(name = "discox", version, about = "Distributed Cox proportional-hazards regression", after_help = EXIT_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(short, long)]
    pub config: PathBuf,
    /// Overrides a configuration key, e.g. `--set ties=EFRON`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Print debug-level log lines.
    #[arg(short, long)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the analysis center and write the output tables.
    Center(ConfigArgs),
    /// Serve one data partner until the center sends STOP.
    Partner(ConfigArgs),
    /// Fit the model on a single pooled file without any exchange.
    Pooled {
        #[command(flatten)]
        config: ConfigArgs,
        /// Pooled input; defaults to `reg_ds_in`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Shuffle a file into partner shards with a `dp_cd` column.
    Partition {
        #[arg(long)]
        input: PathBuf,
        /// Shard sizes, e.g. `134,149,149`.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Events per shard, e.g. `36,42,36`.
        #[arg(long, value_delimiter = ',')]
        events: Vec<usize>,
        #[arg(long, default_value = "arrest")]
        censoring_var: String,
        #[arg(long, default_value_t = 0.0)]
        censoring_lev: f64,
        #[arg(long)]
        out_dir: PathBuf,
        /// Shards are written as `<prefix><k>.csv`.
        #[arg(long, default_value = "dp")]
        prefix: String,
    },
    /// Render the text report and residual plot for stored output tables.
    Report {
        /// Directory holding the tables (usually `<output_dir>/msoc`).
        #[arg(long)]
        dir: PathBuf,
        /// Only this run; default is every run found.
        #[arg(long)]
        run_id: Option<String>,
        /// Where to write the report; defaults to `--dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the center and one partner per shard in this process.
    Demo {
        #[command(flatten)]
        config: ConfigArgs,
        /// One file per entry of `dp_cd_list`, in the same order.
        #[arg(long, value_delimiter = ',', required = true)]
        shards: Vec<PathBuf>,
        /// Partner-level minimum records per residual bin.
        #[arg(long)]
        min_count_per_grp: Option<usize>,
    },
}

fn config_exit(e: &ConfigError) -> i32 {
    eprintln!("configuration error: {e}");
    ErrorCategory::Config.exit_code()
}

fn load(args: &ConfigArgs) -> Result<RawConfig, ConfigError> {
    let mut raw = RawConfig::from_file(&args.config)?;
    raw.override_with(&args.overrides)?;
    Ok(raw)
}

/// Console plus a log file. Only the first call in a process installs
/// the logger.
pub fn init_logging(log_file: &Path, verbose: bool) {
    use simplelog::{ColorChoice, CombinedLogger, ConfigBuilder, LevelFilter, SharedLogger, TermLogger, TerminalMode, WriteLogger};
    let level = if verbose { LevelFilter::Debug } else { LevelFilter::Info };
    let cfg = ConfigBuilder::new().set_time_format_rfc3339().build();
    let mut loggers: Vec<Box<dyn SharedLogger>> =
        vec![TermLogger::new(level, cfg.clone(), TerminalMode::Stderr, ColorChoice::Never)];
    if let Some(dir) = log_file.parent() {
        let _ = fs::create_dir_all(dir);
    }
    match fs::File::create(log_file) {
        Ok(f) => loggers.push(WriteLogger::new(LevelFilter::Debug, cfg, f)),
        Err(e) => eprintln!("cannot open log file {}: {e}", log_file.display()),
    }
    let _ = CombinedLogger::init(loggers);
}

fn bundle_dir(output_dir: &Path) -> PathBuf {
    output_dir.join(OUTPUT_SUBDIR)
}

/// Writes the bundle and prints the outcome; returns the exit code.
pub fn finish_run(analysis: &Analysis, output_dir: &Path) -> i32 {
    let dir = bundle_dir(output_dir);
    match write_bundle(analysis, &dir) {
        Ok(files) => log::info!("wrote {} tables to {}", files.len(), dir.display()),
        Err(e) => {
            log::error!("could not write output tables: {e}");
            return e.category().exit_code();
        }
    }
    let st = &analysis.status;
    match st.state {
        RunState::Converged => {
            if let Some(inf) = &analysis.inference {
                for row in &inf.estimates {
                    log::info!(
                        "{:<12} estimate {:>12.6} se {:>10.6} hr {:>10.6}",
                        row.name,
                        row.estimate,
                        row.stderr,
                        row.hazard_ratio
                    );
                }
            }
            log::info!("run {} {}", analysis.spec.run_id, st.state.as_str());
        }
        _ => log::error!("run {} {}: {}", analysis.spec.run_id, st.state.as_str(), st.reason),
    }
    st.state.exit_code()
}

fn center_options(settings: &CenterSettings) -> CenterOptions {
    CenterOptions {
        event_time_set: settings.event_time_set.clone(),
        force_path: None,
    }
}

pub fn cmd_center(args: &ConfigArgs) -> i32 {
    let settings = match load(args).and_then(|raw| CenterSettings::from_raw(&raw)) {
        Ok(s) => s,
        Err(e) => return config_exit(&e),
    };
    if settings.transport.mode == Mode::Loopback {
        return config_exit(&ConfigError("the LOOPBACK transport only works with `demo`".into()));
    }
    let spec = &settings.spec;
    init_logging(&settings.output_dir.join(format!("{}_center.log", spec.run_id)), args.verbose);
    log::info!(
        "center run {} with partners {:?} via {}",
        spec.run_id,
        spec.partner_ids,
        settings.transport.root.display()
    );
    let run = orchestrate_center(spec, &Transport::new(settings.transport.clone()), &center_options(&settings));
    finish_run(&run.analysis, &settings.output_dir)
}

pub fn cmd_partner(args: &ConfigArgs) -> i32 {
    let settings = match load(args).and_then(|raw| PartnerSettings::from_raw(&raw)) {
        Ok(s) => s,
        Err(e) => return config_exit(&e),
    };
    if settings.transport.mode == Mode::Loopback {
        return config_exit(&ConfigError("the LOOPBACK transport only works with `demo`".into()));
    }
    let p = &settings.partner;
    init_logging(
        &settings.output_dir.join(format!("{}_dp{}.log", p.run_id, p.partner_id)),
        args.verbose,
    );
    match orchestrate_partner(p, &Transport::new(settings.transport.clone())) {
        Ok(exit) => {
            log::info!("partner {} stopped: {} {}", p.partner_id, exit.stop.status, exit.stop.reason);
            0
        }
        Err(e) => {
            log::error!("partner {} failed: {e}", p.partner_id);
            e.category().exit_code()
        }
    }
}

pub fn cmd_pooled(args: &ConfigArgs, data: Option<&Path>) -> i32 {
    let settings = match load(args).and_then(|raw| CenterSettings::from_raw(&raw)) {
        Ok(s) => s,
        Err(e) => return config_exit(&e),
    };
    let Some(path) = data.map(Path::to_path_buf).or(settings.data.clone()) else {
        return config_exit(&ConfigError("pooled fit needs `reg_ds_in` or --data".into()));
    };
    let spec = &settings.spec;
    init_logging(&settings.output_dir.join(format!("{}_pooled.log", spec.run_id)), args.verbose);
    let fitted = ingest_dataset(&path, spec, 1).and_then(|ds| fit_pooled(&ds, spec));
    match fitted {
        Ok(analysis) => finish_run(&analysis, &settings.output_dir),
        Err(e) => {
            log::error!("pooled fit failed: {e}");
            e.category().exit_code()
        }
    }
}

/// Runs the center and all partners of one configuration in-process and
/// returns the center's view of the run.
pub fn run_demo(settings: &CenterSettings, shards: &[PathBuf], min_count: Option<usize>) -> Result<CenterRun, ConfigError> {
    let spec = &settings.spec;
    if shards.len() != spec.partner_ids.len() {
        return Err(ConfigError(format!(
            "{} shards for {} partners in dp_cd_list",
            shards.len(),
            spec.partner_ids.len()
        )));
    }
    if settings.transport.mode == Mode::Directory {
        let stale = settings.transport.root.join(&spec.run_id);
        if stale.exists() {
            log::info!("clearing mailboxes of a previous demo in {}", stale.display());
            fs::remove_dir_all(&stale).map_err(|e| ConfigError(format!("{}: {e}", stale.display())))?;
        }
    }
    let transport = Transport::new(settings.transport.clone());
    let partners: Vec<PartnerConfig> = spec
        .partner_ids
        .iter()
        .zip(shards)
        .map(|(&k, data)| PartnerConfig {
            run_id: spec.run_id.clone(),
            partner_id: k,
            data: data.clone(),
            min_count_override: min_count,
        })
        .collect();
    Ok(std::thread::scope(|s| {
        for p in &partners {
            let t = transport.clone();
            s.spawn(move || {
                if let Err(e) = orchestrate_partner(p, &t) {
                    log::error!("partner {} failed: {e}", p.partner_id);
                }
            });
        }
        orchestrate_center(spec, &transport, &center_options(settings))
    }))
}

pub fn cmd_demo(args: &ConfigArgs, shards: &[PathBuf], min_count: Option<usize>) -> i32 {
    let settings = match load(args).and_then(|raw| CenterSettings::from_raw(&raw)) {
        Ok(s) => s,
        Err(e) => return config_exit(&e),
    };
    init_logging(
        &settings.output_dir.join(format!("{}_demo.log", settings.spec.run_id)),
        args.verbose,
    );
    match run_demo(&settings, shards, min_count) {
        Ok(run) => finish_run(&run.analysis, &settings.output_dir),
        Err(e) => config_exit(&e),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_partition(
    input: &Path,
    sizes: &[usize],
    seed: u64,
    events: &[usize],
    censoring_var: &str,
    censoring_lev: f64,
    out_dir: &Path,
    prefix: &str,
) -> i32 {
    let plan = PartitionPlan {
        sizes: sizes.to_vec(),
        seed,
        events: (!events.is_empty()).then(|| EventTarget {
            censoring_var: censoring_var.to_string(),
            censoring_level: censoring_lev,
            counts: events.to_vec(),
        }),
    };
    if let Err(e) = fs::create_dir_all(out_dir) {
        eprintln!("cannot create {}: {e}", out_dir.display());
        return ErrorCategory::Protocol.exit_code();
    }
    let outputs: Vec<PathBuf> = (1..=sizes.len()).map(|k| out_dir.join(format!("{prefix}{k}.csv"))).collect();
    match partition_file(input, &plan, &outputs) {
        Ok(shards) => {
            for (path, shard) in outputs.iter().zip(&shards) {
                println!("{} ({} rows)", path.display(), shard.rows.len());
            }
            0
        }
        Err(e) => {
            eprintln!("partition failed: {e}");
            e.category().exit_code()
        }
    }
}

pub fn cmd_report(dir: &Path, run_id: Option<&str>, out: Option<&Path>) -> i32 {
    let ids = match run_id {
        Some(id) => vec![id.to_string()],
        None => match discover_run_ids(dir) {
            Ok(ids) if !ids.is_empty() => ids,
            Ok(_) => {
                eprintln!("no output tables found in {}", dir.display());
                return ErrorCategory::Protocol.exit_code();
            }
            Err(e) => {
                eprintln!("{e}");
                return e.category().exit_code();
            }
        },
    };
    let dest = out.unwrap_or(dir);
    for id in ids {
        match read_bundle(dir, &id).and_then(|b| render_report(&b, dest)) {
            Ok(files) => {
                for f in files {
                    println!("{}", f.display());
                }
            }
            Err(e) => {
                eprintln!("report for {id} failed: {e}");
                return e.category().exit_code();
            }
        }
    }
    0
}

pub fn run(cli: Cli) -> i32 {
    match &cli.command {
        Command::Center(args) => cmd_center(args),
        Command::Partner(args) => cmd_partner(args),
        Command::Pooled { config, data } => cmd_pooled(config, data.as_deref()),
        Command::Partition {
            input,
            sizes,
            seed,
            events,
            censoring_var,
            censoring_lev,
            out_dir,
            prefix,
        } => cmd_partition(input, sizes, *seed, events, censoring_var, *censoring_lev, out_dir, prefix),
        Command::Report { dir, run_id, out } => cmd_report(dir, run_id.as_deref(), out.as_deref()),
        Command::Demo {
            config,
            shards,
            min_count_per_grp,
        } => cmd_demo(config, shards, *min_count_per_grp),
    }
}
