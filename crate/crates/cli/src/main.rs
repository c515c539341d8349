//! `mmhuman`: synthetic data, training, evaluation and radar-only inference.
//!
//! Every subcommand accepts `--config FILE`, `--preset tiny|default` and one
//! flag per configuration key (`--learning-rate 3e-3`, `--joints-only-mode true`, ...).
//! On failure a single JSON line `{"error": kind, "message": ...}` goes to
//! stderr and the exit code is nonzero.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Arg, ArgAction, ArgMatches, Command};
use mmhuman_core::body::body_model_from_name;
use mmhuman_core::harness::{
    create_run_dir, evaluate, infer, plot_joint_errors, plot_loss_curves, train_enhancer, train_reconstructor, Pipeline,
    TRAIN_DTYPE,
};
use mmhuman_core::io::synth::generate_synthetic_scene;
use mmhuman_core::io::Dataset;
use mmhuman_core::nn::checkpoint::{self, NetKind};
use mmhuman_core::enhance::EnhancementNet;
use mmhuman_core::{Error, PipelineConfig};
use serde_json::json;

fn config_args() -> Vec<Arg> {
    let mut args = vec![
        Arg::new("config").long("config").value_name("FILE").help("TOML configuration file"),
        Arg::new("preset")
            .long("preset")
            .value_name("NAME")
            .value_parser(["default", "tiny"])
            .help("Base configuration before the file and flags are applied"),
    ];
    for key in PipelineConfig::keys() {
        args.push(
            Arg::new(key.clone())
                .long(key.replace('_', "-"))
                .value_name("VALUE")
                .help_heading("Configuration"),
        );
    }
    args
}

fn path_arg(name: &'static str, help: &'static str, required: bool) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("PATH")
        .value_parser(clap::value_parser!(PathBuf))
        .required(required)
        .help(help)
}

fn cli() -> Command {
    let runs = || path_arg("runs", "Parent directory of run directories [default: runs]", false);
    Command::new("mmhuman")
        .about("Human body reconstruction from sparse mmWave radar point clouds")
        .subcommand_required(true)
        .arg(
            Arg::new("verbose")
                .short('v')
                .long("verbose")
                .action(ArgAction::Count)
                .global(true)
                .help("More log output"),
        )
        .subcommand(
            Command::new("synth-data")
                .about("Write a synthetic dataset directory")
                .arg(path_arg("out", "Output dataset directory", true))
                .arg(
                    Arg::new("scene-seed")
                        .long("scene-seed")
                        .value_name("N")
                        .value_parser(clap::value_parser!(u64))
                        .default_value("0"),
                )
                .args(config_args()),
        )
        .subcommand(
            Command::new("train-enhancer")
                .about("Train the point cloud enhancer (needs masks)")
                .arg(path_arg("data", "Dataset directory", true))
                .arg(runs())
                .args(config_args()),
        )
        .subcommand(
            Command::new("train-reconstructor")
                .about("Train the reconstructor behind a frozen enhancer")
                .arg(path_arg("data", "Dataset directory", true))
                .arg(path_arg("enhancer", "Enhancer checkpoint (omit with --enhancement-enabled false)", false))
                .arg(runs())
                .args(config_args()),
        )
        .subcommand(
            Command::new("evaluate")
                .about("Evaluate trained checkpoints on a dataset")
                .arg(path_arg("data", "Dataset directory", true))
                .arg(path_arg("reconstructor", "Reconstructor checkpoint", true))
                .arg(path_arg("enhancer", "Enhancer checkpoint", false))
                .arg(path_arg("out", "Directory for the report, table and plots", true))
                .args(config_args()),
        )
        .subcommand(
            Command::new("infer")
                .about("Radar-only inference: enhanced clouds and per-frame body parameters")
                .arg(path_arg("radar", "Dataset directory; only the manifest and radar frames are read", true))
                .arg(path_arg("reconstructor", "Reconstructor checkpoint", true))
                .arg(path_arg("enhancer", "Enhancer checkpoint", false))
                .arg(path_arg("out", "Output directory", true)),
        )
}

/// Preset, then file, then flags.
fn resolve_config(m: &ArgMatches) -> anyhow::Result<(PipelineConfig, bool)> {
    let mut cfg = match m.get_one::<String>("preset").map(String::as_str) {
        Some("tiny") => PipelineConfig::tiny(),
        _ => PipelineConfig::default(),
    };
    let mut explicit = m.contains_id("preset");
    if let Some(path) = m.get_one::<String>("config") {
        cfg = PipelineConfig::load(Path::new(path))?;
        explicit = true;
    }
    let keys = PipelineConfig::keys();
    let overrides: Vec<(&str, &str)> = keys
        .iter()
        .filter_map(|k| m.get_one::<String>(k).map(|v| (k.as_str(), v.as_str())))
        .collect();
    explicit |= !overrides.is_empty();
    if !overrides.is_empty() {
        cfg = cfg.with_overrides(overrides)?;
    }
    Ok((cfg, explicit))
}

fn path<'a>(m: &'a ArgMatches, name: &str) -> Option<&'a PathBuf> {
    m.get_one::<PathBuf>(name)
}

fn synth_data(m: &ArgMatches) -> anyhow::Result<serde_json::Value> {
    let (cfg, _) = resolve_config(m)?;
    let out = path(m, "out").unwrap();
    let seed = *m.get_one::<u64>("scene-seed").unwrap();
    let scene = generate_synthetic_scene(seed, &cfg)?;
    scene.write(out)?;
    Ok(json!({ "dataset": out, "frames": scene.frame_count() }))
}

fn runs_dir(m: &ArgMatches) -> PathBuf {
    path(m, "runs").cloned().unwrap_or_else(|| PathBuf::from("runs"))
}

fn train_enhancer_cmd(m: &ArgMatches) -> anyhow::Result<serde_json::Value> {
    let (cfg, _) = resolve_config(m)?;
    let data = Dataset::load(path(m, "data").unwrap(), &cfg, true)?;
    let windows = data.windows(&cfg)?;
    let dir = create_run_dir(&runs_dir(m), &cfg)?;
    cfg.save(&dir.join("config.toml"))?;
    let trained = train_enhancer(&cfg, &windows, Some(&dir))?;
    trained.record.save(&dir.join("run_record.json"))?;
    if !trained.record.epochs.is_empty() {
        plot_loss_curves(&trained.record, &dir.join("loss_curve.svg"))?;
    }
    Ok(json!({
        "run_dir": dir,
        "checkpoint": dir.join("enhancer.safetensors"),
        "initial_loss": trained.record.initial_loss,
        "final_loss": trained.record.final_loss,
    }))
}

fn load_enhancer(path: &Path, cfg: &PipelineConfig) -> anyhow::Result<EnhancementNet> {
    let net = EnhancementNet::new(cfg, TRAIN_DTYPE)?;
    checkpoint::load_into(net.store(), NetKind::Enhancer, cfg, path)?;
    Ok(net)
}

fn train_reconstructor_cmd(m: &ArgMatches) -> anyhow::Result<serde_json::Value> {
    let (cfg, _) = resolve_config(m)?;
    let enhancer = match (cfg.enhancement_enabled, path(m, "enhancer")) {
        (true, Some(p)) => Some(load_enhancer(p, &cfg)?),
        (true, None) => bail!(Error::Config("--enhancer is required unless --enhancement-enabled false".into())),
        (false, _) => None,
    };
    let data = Dataset::load(path(m, "data").unwrap(), &cfg, false)?;
    let windows = data.windows(&cfg)?;
    let dir = create_run_dir(&runs_dir(m), &cfg)?;
    cfg.save(&dir.join("config.toml"))?;
    let mut trained = train_reconstructor(&cfg, &windows, enhancer.as_ref(), Some(&dir))?;
    let pipeline = Pipeline::new(enhancer, trained.net)?;
    let eval = evaluate(&pipeline, &windows, pipeline.body.as_deref(), data.manifest.frame_rate_hz)?;
    trained.record.report = Some(eval.report.clone());
    trained.record.save(&dir.join("run_record.json"))?;
    if !trained.record.epochs.is_empty() {
        plot_loss_curves(&trained.record, &dir.join("loss_curve.svg"))?;
    }
    Ok(json!({
        "run_dir": dir,
        "checkpoint": dir.join("reconstructor.safetensors"),
        "final_loss": trained.record.final_loss,
        "report": eval.report,
    }))
}

fn load_pipeline(m: &ArgMatches) -> anyhow::Result<Pipeline> {
    let pipeline = Pipeline::load(path(m, "enhancer").map(PathBuf::as_path), path(m, "reconstructor").unwrap())?;
    Ok(pipeline)
}

fn evaluate_cmd(m: &ArgMatches) -> anyhow::Result<serde_json::Value> {
    let pipeline = load_pipeline(m)?;
    let (requested, explicit) = resolve_config(m)?;
    if explicit && requested.model_hash() != pipeline.config.model_hash() {
        bail!(Error::HashMismatch {
            expected: requested.model_hash(),
            found: pipeline.config.model_hash(),
        });
    }
    let cfg = &pipeline.config;
    let data = Dataset::load(path(m, "data").unwrap(), cfg, false)?;
    let windows = data.windows(cfg)?;
    let body = if cfg.joints_only_mode {
        None
    } else {
        Some(body_model_from_name(&cfg.body_model)?)
    };
    let eval = evaluate(&pipeline, &windows, body.as_deref(), data.manifest.frame_rate_hz)?;
    let out = path(m, "out").unwrap();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("report.txt"), eval.report.to_key_value())?;
    std::fs::write(out.join("windows.csv"), eval.window_table())?;
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&eval)?)?;
    plot_joint_errors(&eval, &out.join("joint_errors.svg"))?;
    Ok(json!({ "out": out, "report": eval.report }))
}

fn infer_cmd(m: &ArgMatches) -> anyhow::Result<serde_json::Value> {
    let pipeline = load_pipeline(m)?;
    let outputs = infer(&pipeline, path(m, "radar").unwrap(), path(m, "out").unwrap())?;
    Ok(json!({
        "enhanced": outputs.enhanced,
        "body_params": outputs.body_params,
        "frames": outputs.frames,
    }))
}

fn error_line(err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map(Error::kind)
        .unwrap_or("usage");
    json!({ "error": kind, "message": format!("{err:#}") }).to_string()
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) if e.use_stderr() => {
            eprintln!("{}", json!({ "error": "usage", "message": e.to_string().trim() }));
            return ExitCode::from(2);
        }
        Err(e) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let level = match matches.get_count("verbose") {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let result = match name {
        "synth-data" => synth_data(sub),
        "train-enhancer" => train_enhancer_cmd(sub),
        "train-reconstructor" => train_reconstructor_cmd(sub),
        "evaluate" => evaluate_cmd(sub),
        "infer" => infer_cmd(sub),
        _ => unreachable!(),
    };
    match result {
        Ok(value) => {
            println!("{value}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", error_line(&err));
            ExitCode::FAILURE
        }
    }
}
