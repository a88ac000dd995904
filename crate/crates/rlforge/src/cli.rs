//! The `rlforge` command line.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime or file-format
//! error, 3 training reached its stop score early.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rlforge_core::replay::{decode_buffer, encode_buffer, ReplayView, StepKind, VectorReplayBuffer};
use serde_json::json;

use crate::bench::bench;
use crate::checkpoint::{write_atomic, Checkpoint};
use crate::collector::evaluate;
use crate::config::{extract_overrides, ConfigError, RunConfig};
use crate::logger::CsvLogger;
use crate::trainer::load_policy_state;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_EARLY_STOP: i32 = 3;

/// Output directory override.
pub const OUT_ENV: &str = "RLFORGE_OUT";

#[derive(Debug, Parser)]
#[command(name = "rlforge", version, about = "Train and inspect small reinforcement-learning agents")]
#[command(after_help = "Any config key can be overridden with --section.key=value, e.g. --trainer.max_epoch=3")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Args)]
struct RunFlags {
    /// TOML config file; defaults are used when omitted.
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    num_envs: Option<usize>,
    #[arg(long, value_parser = ["dummy", "pooled", "async"])]
    env_mode: Option<String>,
    #[arg(long)]
    async_min_ready: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EvalMode {
    Greedy,
    Stochastic,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Train with the configured paradigm.
    Train {
        #[command(flatten)]
        run: RunFlags,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a saved policy and print statistics as JSON.
    Eval {
        checkpoint: PathBuf,
        #[arg(long)]
        env: Option<String>,
        #[arg(long, default_value_t = 10)]
        episodes: u64,
        #[arg(long, value_enum, default_value = "stochastic")]
        mode: EvalMode,
        #[arg(long, default_value_t = 0)]
        eval_seed: u64,
    },
    /// Replay buffer files.
    Buffer {
        #[command(subcommand)]
        op: BufferOp,
    },
    /// Compare lock-step and asynchronous collection throughput.
    Bench {
        #[command(flatten)]
        run: RunFlags,
        /// Seconds per mode.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
    },
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        op: ConfigOp,
    },
}

#[derive(Debug, Subcommand)]
enum BufferOp {
    /// Write the replay buffer stored in a checkpoint as a TSBF file.
    Export { checkpoint: PathBuf, out: PathBuf },
    /// Validate a TSBF file, print its summary and optionally copy it.
    Import {
        path: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a summary of a TSBF file.
    Info { path: PathBuf },
}

#[derive(Debug, Subcommand)]
enum ConfigOp {
    /// Print the effective configuration with every default spelled out.
    Dump {
        #[command(flatten)]
        run: RunFlags,
        #[arg(long)]
        json: bool,
    },
}

struct Failure {
    code: i32,
    msg: String,
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        msg: e.to_string(),
    }
}

fn runtime_err(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_RUNTIME,
        msg: e.to_string(),
    }
}

fn effective_config(run: &RunFlags, mut overrides: Vec<(String, String)>) -> Result<RunConfig, Failure> {
    let flags = [
        ("seed", run.seed.map(|v| v.to_string())),
        ("env", run.env.as_ref().map(|v| format!("{v:?}"))),
        ("vector.num_envs", run.num_envs.map(|v| v.to_string())),
        ("vector.mode", run.env_mode.as_ref().map(|v| format!("{v:?}"))),
        ("vector.async_min_ready", run.async_min_ready.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            overrides.push((k.to_string(), v));
        }
    }
    let mut cfg = RunConfig::load(run.config.as_deref(), &overrides).map_err(config_err)?;
    if let Ok(out) = std::env::var(OUT_ENV) {
        if !out.is_empty() {
            cfg.output_dir = out;
        }
    }
    Ok(cfg)
}

fn print_json(out: &mut dyn Write, v: &serde_json::Value) -> Result<(), Failure> {
    writeln!(out, "{}", serde_json::to_string_pretty(v).expect("json")).map_err(runtime_err)
}

fn cmd_train(run: &RunFlags, resume: Option<&Path>, overrides: Vec<(String, String)>, out: &mut dyn Write) -> Result<i32, Failure> {
    let cfg = effective_config(run, overrides)?;
    let dir = PathBuf::from(&cfg.output_dir);
    std::fs::create_dir_all(&dir).map_err(runtime_err)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml()).map_err(runtime_err)?;
    std::fs::write(dir.join("config.json"), cfg.to_json()).map_err(runtime_err)?;

    let sink = CsvLogger::open(&dir).map_err(runtime_err)?;
    let mut trainer = cfg
        .build_trainer(Some(dir.clone()))
        .map_err(|e| match e {
            ConfigError::Dataset { .. } => runtime_err(e),
            e => config_err(e),
        })?
        .with_sink(Box::new(sink))
        .with_section("config", cfg.to_toml().into_bytes());
    if let Some(p) = resume {
        trainer.resume(p).map_err(runtime_err)?;
    }
    let report = trainer.run().map_err(runtime_err)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic(&dir.join("report.json"), text.as_bytes()).map_err(runtime_err)?;
    writeln!(
        out,
        "env_steps={} update_steps={} best_score={} stopped_early={} output={}",
        report.env_steps,
        report.update_steps,
        report.best_score.map_or("none".into(), |s| s.to_string()),
        report.stopped_early,
        dir.display()
    )
    .map_err(runtime_err)?;
    Ok(if report.stopped_early { EXIT_EARLY_STOP } else { EXIT_OK })
}

fn cmd_eval(
    checkpoint: &Path,
    env: Option<&str>,
    episodes: u64,
    mode: EvalMode,
    seed: u64,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let c = Checkpoint::load(checkpoint).map_err(runtime_err)?;
    let text = std::str::from_utf8(c.require("config").map_err(config_err)?).map_err(config_err)?;
    let mut cfg = RunConfig::from_toml_str(text).map_err(config_err)?;
    if let Some(e) = env {
        cfg.env = e.to_string();
    }
    cfg.vector.eval_num_envs = 1;
    let spec = cfg.env_spec().map_err(config_err)?;
    let mut policy = cfg.build_policy(&spec).map_err(config_err)?;
    load_policy_state(&mut *policy, c.require("policy").map_err(config_err)?).map_err(config_err)?;
    let mut venv = cfg.build_eval_venv().map_err(config_err)?;
    let explore = matches!(mode, EvalMode::Stochastic);
    let s = evaluate(&*policy, &mut venv, episodes, seed, explore).map_err(runtime_err)?;
    print_json(
        out,
        &json!({
            "env": cfg.env,
            "mode": if explore { "stochastic" } else { "greedy" },
            "eval_seed": seed,
            "episodes": s.episode_returns.len(),
            "mean": s.mean_return(),
            "std": s.std_return(),
            "returns": s.episode_returns,
            "lengths": s.episode_lengths,
        }),
    )?;
    Ok(EXIT_OK)
}

/// Summary of a buffer as printed by `buffer info`.
pub fn buffer_summary(buf: &VectorReplayBuffer) -> serde_json::Value {
    let order = buf.ordered_indices();
    let episodes = order
        .iter()
        .filter(|&&i| matches!(buf.step_kind(i), Ok(StepKind::LastNatural | StepKind::LastTruncated)))
        .count();
    json!({
        "n_envs": buf.n_envs(),
        "capacity": buf.capacity(),
        "sub_capacity": buf.sub_capacity(),
        "len": buf.len(),
        "sizes": buf.sub_buffers().iter().map(|b| b.len()).collect::<Vec<_>>(),
        "episodes": episodes,
        "tail_indices": buf.tail_index(),
        "prioritized": buf.sampler().is_some(),
    })
}

fn read_buffer(path: &Path) -> Result<VectorReplayBuffer, Failure> {
    let bytes = std::fs::read(path).map_err(|e| runtime_err(format!("{}: {e}", path.display())))?;
    decode_buffer(&bytes).map_err(|e| runtime_err(format!("{}: {e}", path.display())))
}

fn cmd_buffer(op: &BufferOp, out: &mut dyn Write) -> Result<i32, Failure> {
    match op {
        BufferOp::Export { checkpoint, out: dest } => {
            let c = Checkpoint::load(checkpoint).map_err(runtime_err)?;
            let bytes = c.require("buffer").map_err(runtime_err)?;
            let buf = decode_buffer(bytes).map_err(runtime_err)?;
            write_atomic(dest, bytes).map_err(runtime_err)?;
            print_json(out, &buffer_summary(&buf))?;
        }
        BufferOp::Import { path, out: dest } => {
            let buf = read_buffer(path)?;
            let bytes = encode_buffer(&buf);
            if let Some(dest) = dest {
                write_atomic(dest, &bytes).map_err(runtime_err)?;
            }
            print_json(out, &buffer_summary(&buf))?;
        }
        BufferOp::Info { path } => print_json(out, &buffer_summary(&read_buffer(path)?))?,
    }
    Ok(EXIT_OK)
}

fn cmd_bench(run: &RunFlags, secs: f64, overrides: Vec<(String, String)>, out: &mut dyn Write) -> Result<i32, Failure> {
    let cfg = effective_config(run, overrides)?;
    if !(secs.is_finite() && secs > 0.0) {
        return Err(config_err("--duration must be positive"));
    }
    let r = bench(&cfg, Duration::from_secs_f64(secs)).map_err(runtime_err)?;
    print_json(out, &serde_json::to_value(&r).expect("json"))?;
    Ok(EXIT_OK)
}

fn dispatch(args: Vec<String>, out: &mut dyn Write) -> Result<i32, Failure> {
    let (args, overrides) = extract_overrides(args);
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return Ok(code);
        }
    };
    match &cli.cmd {
        Cmd::Train { run, resume } => cmd_train(run, resume.as_deref(), overrides, out),
        Cmd::Eval {
            checkpoint,
            env,
            episodes,
            mode,
            eval_seed,
        } => cmd_eval(checkpoint, env.as_deref(), *episodes, *mode, *eval_seed, out),
        Cmd::Buffer { op } => cmd_buffer(op, out),
        Cmd::Bench { run, duration } => cmd_bench(run, *duration, overrides, out),
        Cmd::Config {
            op: ConfigOp::Dump { run, json },
        } => {
            let cfg = effective_config(run, overrides)?;
            let text = if *json { cfg.to_json() } else { cfg.to_toml() };
            write!(out, "{text}").map_err(runtime_err)?;
            if *json {
                writeln!(out).map_err(runtime_err)?;
            }
            Ok(EXIT_OK)
        }
    }
}

/// Run the CLI on `args` (program name first), writing results to `out`
/// and errors to stderr. Returns the process exit code.
pub fn run(args: Vec<String>, out: &mut dyn Write) -> i32 {
    match dispatch(args, out) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            f.code
        }
    }
}
