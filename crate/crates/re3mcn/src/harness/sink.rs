//! Trace and summary writers.
//!
//! The per-iteration trace CSV has a fixed column set; floats print in
//! Rust's shortest round-trip form, so identical runs produce identical
//! bytes. A leading comment line embeds the config hash and master seed
//! in every emitted CSV. Wall-clock time is only written to the JSON
//! summaries (it would break byte-level reproducibility in the CSVs).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::optimizer::IterRecord;

use super::{CellResult, ExecutedCell, HarnessError};

pub const TRACE_COLUMNS: &str = "run_id,method,epoch,t,F,grad_norm,step_norm,lambda,beta_t,\
alpha_t,cg_iters,grad_oracles_raw,hess_oracles_raw,grad_oracles_paper,hess_oracles_paper,wall_ms";

/// SHA-256 of the raw config text, hex-encoded.
pub fn config_hash(config_text: &str) -> String {
    let mut h = Sha256::new();
    h.update(config_text.as_bytes());
    let out = h.finalize();
    out.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn meta_line(hash: &str, master_seed: u64) -> String {
    format!("# config_sha256={hash} master_seed={master_seed}\n")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn trace_row(run_id: &str, method: &str, r: &IterRecord) -> String {
    format!(
        "{run_id},{method},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        r.epoch,
        r.t,
        fmt_opt(r.f),
        fmt_opt(r.grad_norm),
        r.step_norm,
        r.lambda,
        r.beta_t,
        r.alpha_t,
        r.cg_iters,
        r.grad_oracles_raw,
        r.hess_oracles_raw,
        r.grad_oracles_paper,
        r.hess_oracles_paper,
        r.wall_ms
    )
}

/// Collects everything an experiment emits and writes it at the end
/// (desk-scale runs; one flush, no partial files).
pub struct TraceSink {
    out_dir: PathBuf,
    hash: String,
    master_seed: u64,
    trace: String,
    summaries: Vec<serde_json::Value>,
    results: Vec<CellResult>,
}

impl TraceSink {
    pub fn new(out_dir: &Path, config_text: &str, master_seed: u64) -> Self {
        let hash = config_hash(config_text);
        let mut trace = meta_line(&hash, master_seed);
        trace.push_str(TRACE_COLUMNS);
        trace.push('\n');
        TraceSink {
            out_dir: out_dir.to_path_buf(),
            hash,
            master_seed,
            trace,
            summaries: Vec::new(),
            results: Vec::new(),
        }
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn record(&mut self, ex: &ExecutedCell, result: CellResult) {
        for r in &ex.output.trace {
            self.trace.push_str(&trace_row(&ex.cell.run_id, &ex.method, r));
        }
        let mut summary = serde_json::to_value(&ex.output.summary).expect("summary serializes");
        if let serde_json::Value::Object(map) = &mut summary {
            map.insert("run_id".into(), ex.cell.run_id.clone().into());
            map.insert("method".into(), ex.method.clone().into());
            map.insert("config_sha256".into(), self.hash.clone().into());
            map.insert("master_seed".into(), self.master_seed.into());
            map.insert("wall_ms".into(), ex.wall_ms.into());
        }
        self.summaries.push(summary);
        self.results.push(result);
    }

    pub fn results(&self) -> &[CellResult] {
        &self.results
    }

    /// Write `trace.csv`, `runs.csv`, and `summary.json`.
    pub fn flush(&self) -> Result<(), HarnessError> {
        fs::create_dir_all(&self.out_dir)?;
        fs::write(self.out_dir.join("trace.csv"), &self.trace)?;
        fs::write(self.out_dir.join("runs.csv"), self.runs_csv())?;
        let json = serde_json::to_string_pretty(&self.summaries).expect("summaries serialize");
        fs::write(self.out_dir.join("summary.json"), json)?;
        Ok(())
    }

    pub fn runs_csv(&self) -> String {
        let mut out = meta_line(&self.hash, self.master_seed);
        out.push_str(
            "run_id,method,epsilon,seed,b,n,steps,epochs_started,terminated_by,f_final,\
final_grad_norm,final_lambda_min,final_step_norm,grad_oracles_raw,hess_oracles_raw,\
grad_oracles_paper,hess_oracles_paper\n",
        );
        for r in &self.results {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.run_id,
                r.method,
                r.epsilon,
                r.seed,
                r.b,
                r.n,
                r.steps,
                r.epochs_started,
                r.terminated_by,
                r.f_final,
                r.final_grad_norm,
                r.final_lambda_min,
                r.final_step_norm,
                r.grad_oracles_raw,
                r.hess_oracles_raw,
                r.grad_oracles_paper,
                r.hess_oracles_paper
            );
        }
        out
    }

    /// Aligned comparison table over the recorded runs.
    pub fn compare_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<28} {:>10} {:>8} {:>14} {:>14} {:>14} {:>14}",
            "method", "run", "steps", "F_final", "grad_norm", "grad_paper", "hess_paper"
        );
        for r in &self.results {
            let _ = writeln!(
                out,
                "{:<28} {:>10} {:>8} {:>14.6e} {:>14.6e} {:>14} {:>14}",
                r.method,
                r.run_id,
                r.steps,
                r.f_final,
                r.final_grad_norm,
                r.grad_oracles_paper,
                r.hess_oracles_paper
            );
        }
        out
    }
}
