//! The `absdl` subcommands. Each writes its artifact plus a
//! `<artifact>.manifest.json` holding the full configuration, its
//! fingerprint, the seed and the SHA-256 of every input, so a run can be
//! repeated exactly.

use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use absdl_core::dataset::{self, DatasetError, DemoSet, Provenance, ScriptedExpert};
use absdl_core::evaluator::{
    load_trajectory, record_demonstrations, report_table, run_episode, run_setup, store_trajectory, EvalError, Policy,
    RandomPolicy, Setup, SetupSource, Trajectory, ZeroPolicy,
};
use absdl_core::learner::{load_model, store_model, train, LearnError, MlpPolicy, PolicyModel};
use absdl_core::sim::{ManoeuvreKind, Preset};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig};
use crate::service::{self, ServiceError, ServiceOptions, ServiceReport, Source};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("missing artifact: {0}")]
    Missing(String),
    #[error("refused: {0}")]
    Refused(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CommandError + '_ {
    move |source| CommandError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Parser)]
#[command(name = "absdl", version, about = "UAV/UGV coordination simulator and imitation-learning pipeline")]
pub struct Cli {
    /// Scenario file (TOML). Defaults to $ABSDL_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the scenario seed and the training seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the environment preset (sim or lab).
    #[arg(long, global = true)]
    pub preset: Option<Preset>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    /// Proportional controller for the manoeuvre's sub-task.
    Expert,
    Zero,
    Random,
    /// A trained model (requires --model).
    Model,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RecordSource {
    Scripted,
    /// Serve the scenario and record sessions started by a connected client.
    Teleop,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one episode and write its trajectory archive.
    Simulate {
        #[arg(long)]
        manoeuvre: Option<ManoeuvreKind>,
        #[arg(long, value_enum, default_value = "expert")]
        policy: PolicyKind,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Record demonstrations of one sub-task.
    Record {
        #[arg(long, value_enum, default_value = "scripted")]
        source: RecordSource,
        #[arg(long, default_value = "climb")]
        manoeuvre: ManoeuvreKind,
        /// Scripted episodes (default from the scenario's [record] section).
        #[arg(long)]
        episodes: Option<u32>,
        /// Dataset file (scripted) or directory for session files (teleop).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        port: Option<u16>,
        /// Teleop: stop after this many wall-clock seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Fuse sub-task datasets into one composite dataset.
    Fuse {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy network; also writes `<out>.loss.csv`.
    Train {
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a setup on the Combined manoeuvre.
    Eval {
        #[arg(long)]
        setup: Setup,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Recorded operator sessions (trajectory archives) for human-combined.
        #[arg(long = "session")]
        sessions: Vec<PathBuf>,
        /// Stand in for the operator with the scripted expert (human-combined).
        #[arg(long)]
        scripted: bool,
        #[arg(long)]
        runs: Option<usize>,
        /// Metrics report (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory receiving one trajectory archive per run.
        #[arg(long)]
        archive_dir: Option<PathBuf>,
    },
    /// Stream a trajectory archive to connected clients.
    Replay {
        archive: PathBuf,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Run the live telemetry/teleoperation service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        manoeuvre: Option<ManoeuvreKind>,
        /// Enables recording; session datasets are written here.
        #[arg(long)]
        record_dir: Option<PathBuf>,
        #[arg(long)]
        duration: Option<f64>,
    },
}

/// Resolve the configuration with command-line overrides applied.
pub fn scenario(cli: &Cli) -> Result<ScenarioConfig, CommandError> {
    let mut cfg = ScenarioConfig::resolve(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(preset) = cli.preset {
        cfg.preset = preset;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<(), CommandError> {
    let cfg = scenario(cli)?;
    match &cli.command {
        Command::Simulate { manoeuvre, policy, model, out } => {
            let kind = manoeuvre.unwrap_or(cfg.manoeuvre.kind);
            let tr = simulate(&cfg, kind, *policy, model.as_deref())?;
            store_trajectory(&tr, out)?;
            let inputs: Vec<&Path> = model.iter().map(PathBuf::as_path).collect();
            write_manifest(out, "simulate", &cfg, &inputs)?;
            let m = absdl_core::evaluator::MetricsReport::from_trajectory(&tr);
            println!(
                "{kind}: {} steps, coverage {:.4}, mean distance {:.4}, mean radius error {:.5}{}",
                m.steps,
                m.coverage,
                m.distance.mean,
                m.radius.mean,
                tr.aborted.as_deref().map(|r| format!(" (aborted: {r})")).unwrap_or_default()
            );
        }
        Command::Record { source: RecordSource::Scripted, manoeuvre, episodes, out, .. } => {
            let n = episodes.unwrap_or_else(|| cfg.record.episodes(*manoeuvre));
            let set = record_scripted(&cfg, *manoeuvre, n)?;
            dataset::store(&set, out)?;
            write_manifest(out, "record", &cfg, &[])?;
            println!("{} samples in {} episodes of {manoeuvre} -> {}", set.len(), n, out.display());
        }
        Command::Record { source: RecordSource::Teleop, manoeuvre, out, port, duration, .. } => {
            fs::create_dir_all(out).map_err(io_err(out))?;
            let options = ServiceOptions { source: Source::Live(*manoeuvre), record_dir: Some(out.clone()) };
            let report = serve(&cfg, port.unwrap_or(cfg.service.port), options, *duration)?;
            for (path, n) in &report.recordings {
                write_manifest(path, "record", &cfg, &[])?;
                println!("{n} samples -> {}", path.display());
            }
        }
        Command::Fuse { inputs, out } => {
            let sets = inputs.iter().map(dataset::load).collect::<Result<Vec<_>, _>>()?;
            let fused = fuse(&cfg, &sets)?;
            dataset::store(&fused, out)?;
            let inputs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
            write_manifest(out, "fuse", &cfg, &inputs)?;
            println!("fused {} sets into {} samples -> {}", sets.len(), fused.len(), out.display());
        }
        Command::Train { data, out, epochs } => {
            let set = dataset::load(data)?;
            let mut cfg = cfg.clone();
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            let (model, csv, summary) = train_model(&cfg, &set)?;
            store_model(&model, out)?;
            let loss_path = sibling(out, "loss.csv");
            fs::write(&loss_path, csv).map_err(io_err(&loss_path))?;
            write_manifest(out, "train", &cfg, &[data.as_path()])?;
            println!("{summary} -> {}", out.display());
        }
        Command::Eval { setup, model, sessions, scripted, runs, out, archive_dir } => {
            let runs = runs.unwrap_or(cfg.eval.runs);
            let (json, table, trajectories) = evaluate(&cfg, *setup, model.as_deref(), sessions, *scripted, runs)?;
            print!("{table}");
            if let Some(dir) = archive_dir {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
                for (i, tr) in trajectories.iter().enumerate() {
                    store_trajectory(tr, dir.join(format!("{setup}-{i:02}.jsonl")))?;
                }
            }
            if let Some(out) = out {
                fs::write(out, json).map_err(io_err(out))?;
                let mut inputs: Vec<&Path> = model.iter().map(PathBuf::as_path).collect();
                inputs.extend(sessions.iter().map(PathBuf::as_path));
                write_manifest(out, "eval", &cfg, &inputs)?;
            }
        }
        Command::Replay { archive, port, duration } => {
            let tr = load_trajectory(archive)?;
            let options = ServiceOptions { source: Source::Replay(tr), record_dir: None };
            serve(&cfg, port.unwrap_or(cfg.service.port), options, *duration)?;
        }
        Command::Serve { port, manoeuvre, record_dir, duration } => {
            if let Some(dir) = record_dir {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
            let kind = manoeuvre.unwrap_or(cfg.manoeuvre.kind);
            let options = ServiceOptions { source: Source::Live(kind), record_dir: record_dir.clone() };
            let report = serve(&cfg, port.unwrap_or(cfg.service.port), options, *duration)?;
            for (path, n) in &report.recordings {
                write_manifest(path, "serve", &cfg, &[])?;
                println!("{n} samples -> {}", path.display());
            }
        }
    }
    Ok(())
}

/// One episode of `policy` on `kind`.
pub fn simulate(
    cfg: &ScenarioConfig,
    kind: ManoeuvreKind,
    policy: PolicyKind,
    model: Option<&Path>,
) -> Result<Trajectory, CommandError> {
    let ctx = cfg.episode_context(kind)?;
    let mut policy: Box<dyn Policy> = match policy {
        PolicyKind::Expert => Box::new(ScriptedExpert::new(cfg.subtask(kind), cfg.expert.gains)),
        PolicyKind::Zero => Box::new(ZeroPolicy),
        PolicyKind::Random => Box::new(RandomPolicy::new(cfg.seed, 10)),
        PolicyKind::Model => {
            let path = model.ok_or_else(|| CommandError::Missing("--policy model needs --model <file>".into()))?;
            Box::new(MlpPolicy::new(load_checked_model(cfg, path)?)?)
        }
    };
    Ok(run_episode(policy.as_mut(), &ctx, cfg.seed)?)
}

/// Scripted-expert demonstrations of `kind`'s sub-task.
pub fn record_scripted(cfg: &ScenarioConfig, kind: ManoeuvreKind, episodes: u32) -> Result<DemoSet, CommandError> {
    let ctx = cfg.episode_context(kind)?;
    let task = cfg.subtask(kind);
    let mut expert = ScriptedExpert::new(task.clone(), cfg.expert.gains);
    let mut set = record_demonstrations(&mut expert, &ctx, &task, Provenance::Scripted, episodes, cfg.seed)?;
    set.header.config_fingerprint = Some(cfg.fingerprint());
    Ok(set)
}

pub fn fuse(cfg: &ScenarioConfig, sets: &[DemoSet]) -> Result<DemoSet, CommandError> {
    let mut fused = dataset::fuse(sets)?;
    if fused.header.config_fingerprint.is_none() {
        log::warn!("inputs carry different or no scenario fingerprints; stamping the current one");
        fused.header.config_fingerprint = Some(cfg.fingerprint());
    }
    Ok(fused)
}

/// Train on `set`; returns the model, the loss CSV and a one-line summary.
pub fn train_model(cfg: &ScenarioConfig, set: &DemoSet) -> Result<(PolicyModel, String, String), CommandError> {
    let outcome = train(set, &cfg.train)?;
    let mut model = outcome.model;
    model.set_scenario_fingerprint(cfg.fingerprint());
    let summary = format!(
        "trained {} epochs on {} samples ({} held out) in {:.1}s, final loss {:.3e}",
        cfg.train.epochs,
        outcome.train_samples,
        outcome.validation_samples,
        outcome.seconds,
        outcome.history.final_train().unwrap_or(f64::NAN)
    );
    Ok((model, outcome.history.to_csv(), summary))
}

/// Load a model and refuse it if its observation normalisation differs from
/// the one the scenario would train with.
pub fn load_checked_model(cfg: &ScenarioConfig, path: &Path) -> Result<PolicyModel, CommandError> {
    if !path.exists() {
        return Err(CommandError::Missing(format!("model file {} does not exist", path.display())));
    }
    let model = load_model(path)?;
    if model.header().normalizer != cfg.train.normalizer {
        return Err(CommandError::Refused(format!(
            "model {} was trained with observation scaling {:?}, the scenario uses {:?}",
            path.display(),
            model.header().normalizer.scale,
            cfg.train.normalizer.scale
        )));
    }
    Ok(model)
}

/// Evaluate `setup`; returns the JSON report, a text table and the runs.
pub fn evaluate(
    cfg: &ScenarioConfig,
    setup: Setup,
    model: Option<&Path>,
    sessions: &[PathBuf],
    scripted: bool,
    runs: usize,
) -> Result<(String, String, Vec<Trajectory>), CommandError> {
    let ctx = cfg.episode_context(ManoeuvreKind::Combined)?;
    let mut model_id = None;
    let report = match setup {
        Setup::HumanCombined if !sessions.is_empty() => {
            let trs = sessions.iter().map(load_trajectory).collect::<Result<Vec<_>, _>>()?;
            run_setup(setup, SetupSource::Sessions(&trs), &ctx, runs.min(trs.len()), cfg.seed)?
        }
        Setup::HumanCombined if scripted => {
            let mut expert = ScriptedExpert::new(cfg.subtask(ManoeuvreKind::Combined), cfg.expert.gains);
            run_setup(setup, SetupSource::Policy(&mut expert), &ctx, runs, cfg.seed)?
        }
        Setup::HumanCombined => {
            return Err(CommandError::Missing(
                "human-combined needs --session <archive> files (or --scripted for the scripted operator)".into(),
            ))
        }
        Setup::DnnCombined | Setup::Primitive => {
            let path = model.ok_or_else(|| CommandError::Missing(format!("{setup} needs a trained model (--model <file>)")))?;
            let m = load_checked_model(cfg, path)?;
            model_id = Some(m.id());
            run_setup(setup, SetupSource::Model(&m), &ctx, runs, cfg.seed)?
        }
    };
    let mut doc: serde_json::Value = serde_json::from_str(&report.to_json()).expect("report is valid JSON");
    doc["config_fingerprint"] = json!(cfg.fingerprint());
    doc["seed"] = json!(cfg.seed);
    doc["model"] = json!(model_id);
    let json = serde_json::to_string_pretty(&doc).expect("report serializes");
    let table = report_table(std::slice::from_ref(&report));
    Ok((json, table, report.trajectories))
}

/// Serve until `duration` seconds pass (or forever).
pub fn serve(
    cfg: &ScenarioConfig,
    port: u16,
    options: ServiceOptions,
    duration: Option<f64>,
) -> Result<ServiceReport, CommandError> {
    let addr = format!("127.0.0.1:{port}");
    let listener = TcpListener::bind(&addr).map_err(|source| CommandError::Io { path: addr.into(), source })?;
    let handle = service::start(cfg, listener, options)?;
    println!("serving on {}", handle.local_addr());
    let report = match duration {
        Some(secs) => {
            std::thread::sleep(Duration::from_secs_f64(secs.max(0.0)));
            handle.shutdown()?
        }
        None => handle.join()?,
    };
    log::info!(
        "served {} steps, {} updates ({} dropped)",
        report.steps,
        report.updates_sent,
        report.updates_dropped
    );
    Ok(report)
}

/// `<path>.<suffix>`, e.g. `model.json` → `model.json.loss.csv`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".{suffix}"));
    path.with_file_name(name)
}

fn sha256_file(path: &Path) -> Result<String, CommandError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Write `<artifact>.manifest.json`.
pub fn write_manifest(artifact: &Path, command: &str, cfg: &ScenarioConfig, inputs: &[&Path]) -> Result<(), CommandError> {
    let inputs = inputs
        .iter()
        .map(|p| Ok(json!({ "path": p.display().to_string(), "sha256": sha256_file(p)? })))
        .collect::<Result<Vec<_>, CommandError>>()?;
    let doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config_fingerprint": cfg.fingerprint(),
        "seed": cfg.seed,
        "config": cfg,
        "inputs": inputs,
        "output": { "path": artifact.display().to_string(), "sha256": sha256_file(artifact)? },
    });
    let path = sibling(artifact, "manifest.json");
    let text = serde_json::to_string_pretty(&doc).expect("manifest serializes");
    fs::write(&path, text).map_err(io_err(&path))
}
