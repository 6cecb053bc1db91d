//! Command-line front end: `search`, `derive`, `eval` and `space-size`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::data::DatasetSpec;
use crate::discretize::{
    arch_from_json, arch_to_dot, arch_to_json, derive_state, instantiate_fresh, log10_big,
    search_space_size, DerivedArchitecture,
};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate, retrain, RetrainConfig};
use crate::search::{write_atomic, Checkpoint, SearchConfig, SearchRun, StepMetrics};

pub const SEED_ENV: &str = "RENAS_SEED";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const SUMMARY_FILE: &str = "summary.json";

const PROGRESS_EVERY: u64 = 100;

#[derive(Debug, Parser)]
#[command(name = "renas", version, about = "Differentiable search over complete DAGs with channel-block wiring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a search and write checkpoints plus a metrics log under --out.
    Search {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Discretize a checkpoint into an architecture file.
    Derive {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Build a derived network, optionally retrain it, and report test accuracy.
    Eval {
        #[arg(long)]
        arch: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        retrain: u64,
    },
    /// Print the exact number of networks in the search space.
    SpaceSize {
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        dags: u64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        nodes: u64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        ops: u64,
    },
}

/// A failed command and the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: Error,
}

impl Failure {
    fn validation(error: Error) -> Self {
        Failure { code: 2, error }
    }
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = if error.is_validation() { 2 } else { 1 };
        Failure { code, error }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit status. Normal output goes to `out`, diagnostics to
/// stderr.
pub fn main_with<I, T>(args: I, out: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command, out) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.error);
            f.code
        }
    }
}

pub fn run(command: Command, out: &mut dyn std::io::Write) -> Result<(), Failure> {
    let text = match command {
        Command::Search { config, out } => cmd_search(&config, &out)?,
        Command::Derive { checkpoint, out, dot } => cmd_derive(&checkpoint, &out, dot.as_deref())?,
        Command::Eval { arch, data, retrain } => cmd_eval(&arch, &data, retrain)?,
        Command::SpaceSize { dags, nodes, ops } => cmd_space_size(dags, nodes, ops),
    };
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Seed from `RENAS_SEED` when set, logged to stderr.
fn seed_override(current: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            let seed = v
                .trim()
                .parse()
                .map_err(|_| Error::config(SEED_ENV, format!("`{v}` is not an unsigned integer")))?;
            eprintln!("{SEED_ENV}={seed} overrides seed {current}");
            Ok(seed)
        }
        Err(_) => Ok(current),
    }
}

fn load_config(path: &Path) -> Result<SearchConfig> {
    let text = read_text(path)?;
    let mut config = SearchConfig::from_json(&text)?;
    config.seed = seed_override(config.seed)?;
    config.validate()?;
    Ok(config)
}

fn metrics_jsonl(rows: &[StepMetrics]) -> String {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r).expect("metrics serialize"));
        s.push('\n');
    }
    s
}

pub fn cmd_search(config_path: &Path, out_dir: &Path) -> Result<String, Failure> {
    let config = load_config(config_path).map_err(Failure::validation)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut run = SearchRun::new(&config)?;
    let initial = run.validation_loss()?;
    let mut rows = Vec::with_capacity(config.total_steps as usize);
    let interval = config.checkpoint_interval;
    run.run(|r, m| {
        rows.push(*m);
        let done = r.state.step;
        if done % PROGRESS_EVERY == 0 {
            eprintln!(
                "step {done}/{} train_loss {:.4} val_loss {:.4} lr {:.5}",
                config.total_steps, m.train_loss, m.val_loss, m.lr
            );
        }
        if interval > 0 && done % interval == 0 && done < config.total_steps {
            r.checkpoint()
                .write(&out_dir.join(format!("step-{done:08}.ckpt")))?;
            write_atomic(&out_dir.join(METRICS_FILE), metrics_jsonl(&rows).as_bytes())?;
        }
        Ok(())
    })?;
    let ckpt = run.checkpoint();
    let final_path = out_dir.join(FINAL_CHECKPOINT);
    ckpt.write(&final_path)?;
    write_atomic(&out_dir.join(METRICS_FILE), metrics_jsonl(&rows).as_bytes())?;
    let final_loss = run.validation_loss()?;
    let summary = serde_json::json!({
        "seed": config.seed,
        "steps": run.state.step,
        "initial_val_loss": initial,
        "final_val_loss": final_loss,
        "checkpoint": final_path,
        "checkpoint_sha256": ckpt.hash_hex(),
    });
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    write_atomic(&out_dir.join(SUMMARY_FILE), text.as_bytes())?;
    Ok(format!(
        "steps {}\ninitial_val_loss {initial:.6}\nfinal_val_loss {final_loss:.6}\ncheckpoint {}\n",
        run.state.step,
        final_path.display()
    ))
}

/// Lists per-node operation changes between two derivations.
pub fn op_diff(old: &DerivedArchitecture, new: &DerivedArchitecture) -> Vec<String> {
    let mut lines = Vec::new();
    for (d, (a, b)) in old.dags.iter().zip(&new.dags).enumerate() {
        for (j, (x, y)) in a.iter().zip(b).enumerate() {
            if x.op != y.op {
                lines.push(format!(
                    "dag {d} node {j}: {} -> {}",
                    old.shape.op_set[x.op], new.shape.op_set[y.op]
                ));
            }
        }
    }
    lines
}

pub fn cmd_derive(checkpoint: &Path, out: &Path, dot: Option<&Path>) -> Result<String, Failure> {
    let (state, ckpt) = Checkpoint::load(checkpoint)?;
    let (arch, _) = derive_state(&state, &ckpt)?;
    let mut report = String::new();
    if out.is_file() {
        match read_text(out).and_then(|t| arch_from_json(&t)) {
            Ok(previous) if previous.shape == arch.shape => {
                let diff = op_diff(&previous, &arch);
                if diff.is_empty() {
                    report.push_str("op choices unchanged from previous architecture\n");
                } else {
                    let _ = writeln!(report, "{} op choices changed:", diff.len());
                    for line in diff {
                        let _ = writeln!(report, "  {line}");
                    }
                }
            }
            Ok(_) => report.push_str("previous architecture has a different configuration\n"),
            Err(e) => eprintln!("ignoring unreadable previous architecture: {e}"),
        }
    }
    write_atomic(out, arch_to_json(&arch).as_bytes())?;
    if let Some(dot) = dot {
        write_atomic(dot, arch_to_dot(&arch).as_bytes())?;
    }
    let _ = writeln!(report, "param_count {}", arch.param_count);
    let _ = writeln!(report, "retained_fraction {:.4}", arch.retained_fraction());
    Ok(report)
}

/// Builds the derived network with fresh weights seeded from the
/// architecture's provenance (or `RENAS_SEED`), optionally retrains it on
/// the training split and reports on the test split.
pub fn cmd_eval(arch_path: &Path, data_path: &Path, steps: u64) -> Result<String, Failure> {
    let prepare = || -> Result<_> {
        let arch = arch_from_json(&read_text(arch_path)?)?;
        let spec: DatasetSpec = serde_json::from_str(&read_text(data_path)?)?;
        let (channels, side, classes, _) = spec.describe()?;
        if classes != arch.shape.classes || channels != arch.shape.in_channels {
            return Err(Error::Architecture(format!(
                "architecture expects {} classes over {} channels, dataset has {classes} classes over {channels}",
                arch.shape.classes, arch.shape.in_channels
            )));
        }
        arch.shape.check_input_size(side, side)?;
        spec.check_available()?;
        let seed = seed_override(arch.provenance.seed)?;
        Ok((arch, spec, seed))
    };
    let (arch, spec, seed) = prepare().map_err(Failure::validation)?;
    let (train, test) = spec.load()?;
    let mut net = instantiate_fresh(&arch, seed)?;
    if steps > 0 {
        let cfg = RetrainConfig {
            steps,
            seed,
            ..RetrainConfig::default()
        };
        retrain(&mut net, &train, &cfg)?;
    }
    let report = evaluate(&net, &test)?;
    let mut line = serde_json::to_string(&report).expect("report serializes");
    line.push('\n');
    Ok(line)
}

pub fn cmd_space_size(dags: u64, nodes: u64, ops: u64) -> String {
    let n = search_space_size(dags, nodes, ops);
    format!("{n}\nlog10 {:.3}\n", log10_big(&n))
}
