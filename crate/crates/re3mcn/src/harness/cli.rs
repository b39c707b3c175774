//! Command-line entry points.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::problems;
use crate::verification;

use super::scaling::{render_slopes, scaling_report, slopes_csv};
use super::sink::TraceSink;
use super::{
    build_problem, cell_result, enumerate_cells, execute_cell, ExperimentConfig, HarnessError,
};

#[derive(Parser, Debug)]
#[command(
    name = "re3mcn",
    about = "Variance-reduced stochastic cubic Newton: runs, baselines, verification, sweeps"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Execute the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker cap for parallel cells (0 = rayon default).
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Per-iteration objective logging: on | off.
        #[arg(long = "log-F", value_parser = parse_on_off)]
        log_f: Option<bool>,
    },
    /// Run every configured method and print the comparison table.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        workers: usize,
        #[arg(long = "log-F", value_parser = parse_on_off)]
        log_f: Option<bool>,
    },
    /// Run the verification suite.
    Verify {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Grid over epsilons/seeds/batch sizes, emitting the scaling dataset.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker cap for parallel cells (0 = rayon default).
        #[arg(long, default_value_t = 0)]
        workers: usize,
        #[arg(long = "log-F", value_parser = parse_on_off)]
        log_f: Option<bool>,
    },
    /// Write a synthetic classification dataset in LIBSVM format.
    GenData {
        #[arg(long, default_value = "logistic")]
        kind: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 0.1)]
        flip_prob: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_on_off(s: &str) -> Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(format!("expected 'on' or 'off', got '{other}'")),
    }
}

fn load_config(
    path: &Path,
    seed: Option<u64>,
    log_f: Option<bool>,
) -> Result<(ExperimentConfig, String, u64), HarnessError> {
    let text = fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if let Some(s) = seed {
        cfg.run.seed = Some(s);
    }
    if let Some(l) = log_f {
        cfg.run.log_f = Some(l);
    }
    let master_seed = cfg.run.seed.unwrap_or(0);
    Ok((cfg, text, master_seed))
}

/// Execute an experiment (all cells, optional parallelism) into `out`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    config_text: &str,
    master_seed: u64,
    out: &Path,
    workers: usize,
) -> Result<TraceSink, HarnessError> {
    let problem = build_problem(&cfg.problem)?;
    let cells = enumerate_cells(cfg, master_seed);
    let run_cells = || -> Result<Vec<_>, HarnessError> {
        cells.par_iter().map(|cell| execute_cell(cfg, problem.as_ref(), cell)).collect()
    };
    let executed = if workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?
            .install(run_cells)?
    } else {
        run_cells()?
    };

    let mut sink = TraceSink::new(out, config_text, master_seed);
    for ex in &executed {
        let b = ex.output.summary.config.b.unwrap_or_else(|| {
            crate::optimizer::default_batch(problem.n()).min(problem.n())
        });
        sink.record(ex, cell_result(ex, problem.n(), b));
    }
    sink.flush()?;
    Ok(sink)
}

fn cmd_run(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    workers: usize,
    log_f: Option<bool>,
    print_table: bool,
) -> Result<(), HarnessError> {
    let (cfg, text, master_seed) = load_config(config, seed, log_f)?;
    let sink = run_experiment(&cfg, &text, master_seed, out, workers)?;
    let table = sink.compare_table();
    fs::write(out.join("compare.txt"), &table)?;
    fs::write(out.join("compare.csv"), sink.runs_csv())?;
    if print_table {
        print!("{table}");
    }
    println!(
        "wrote {} run(s) to {} (config_sha256={})",
        sink.results().len(),
        out.display(),
        sink.hash()
    );
    Ok(())
}

fn cmd_sweep(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    workers: usize,
    log_f: Option<bool>,
) -> Result<(), HarnessError> {
    let (cfg, text, master_seed) = load_config(config, seed, log_f)?;
    if cfg.sweep.is_none() {
        return Err(HarnessError::Config("sweep subcommand needs a [sweep] section".into()));
    }
    let sink = run_experiment(&cfg, &text, master_seed, out, workers)?;
    match scaling_report(sink.results()) {
        Ok(slopes) => {
            let txt = render_slopes(&slopes);
            fs::write(out.join("scaling.txt"), &txt)?;
            fs::write(out.join("scaling.csv"), slopes_csv(&slopes, sink.hash(), master_seed))?;
            print!("{txt}");
        }
        Err(HarnessError::InsufficientPoints(msg)) => {
            eprintln!("scaling report skipped: {msg}");
        }
        Err(e) => return Err(e),
    }
    println!("wrote {} run(s) to {}", sink.results().len(), out.display());
    Ok(())
}

fn cmd_verify(out: &Path, seed: u64) -> Result<bool, HarnessError> {
    let results = verification::run_all(seed);
    let table = verification::render_table(&results);
    print!("{table}");
    fs::create_dir_all(out)?;
    let json = serde_json::to_string_pretty(&results).expect("check results serialize");
    fs::write(out.join("verification.json"), json)?;
    Ok(results.iter().all(|r| r.passed))
}

fn cmd_gen_data(
    kind: &str,
    n: usize,
    d: usize,
    seed: u64,
    scale: f64,
    flip_prob: f64,
    out: &Path,
) -> Result<(), HarnessError> {
    if kind != "logistic" {
        return Err(HarnessError::Config(format!(
            "unknown dataset kind '{kind}' (only 'logistic')"
        )));
    }
    let (data, labels) = problems::synthetic_classification(n, d, seed, scale, flip_prob);
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    problems::write_libsvm(out, &data, &labels)?;
    // Record the generator settings alongside the data.
    let meta = serde_json::json!({
        "kind": kind, "n": n, "d": d, "seed": seed, "scale": scale, "flip_prob": flip_prob,
    });
    fs::write(out.with_extension("meta.json"), serde_json::to_string_pretty(&meta).unwrap())?;
    println!("wrote {} samples (d={}) to {}", n, d, out.display());
    Ok(())
}

/// Entry point; returns the process exit code.
pub fn cli_main() -> i32 {
    let cli = Cli::parse();
    let outcome: Result<i32, HarnessError> = match &cli.command {
        Command::Run { config, out, seed, workers, log_f } => {
            cmd_run(config, out, *seed, *workers, *log_f, false).map(|_| 0)
        }
        Command::Compare { config, out, seed, workers, log_f } => {
            cmd_run(config, out, *seed, *workers, *log_f, true).map(|_| 0)
        }
        Command::Verify { out, seed } => cmd_verify(out, *seed).map(|ok| if ok { 0 } else { 1 }),
        Command::Sweep { config, out, seed, workers, log_f } => {
            cmd_sweep(config, out, *seed, *workers, *log_f).map(|_| 0)
        }
        Command::GenData { kind, n, d, seed, scale, flip_prob, out } => {
            cmd_gen_data(kind, *n, *d, *seed, *scale, *flip_prob, out).map(|_| 0)
        }
    };
    match outcome {
        Ok(code) => code,
        Err(e @ (HarnessError::Config(_) | HarnessError::Problem(_) | HarnessError::Io(_))) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
