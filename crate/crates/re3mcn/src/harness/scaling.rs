//! Slope fitting over sweep outputs: how the iteration count and the
//! incremental oracle cost scale with the target accuracy.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::verification::fit_loglog;

use super::{CellResult, HarnessError};

#[derive(Clone, Debug, Serialize)]
pub struct SlopeRow {
    pub method: String,
    /// Slope of mean iterations-to-termination against epsilon.
    pub iter_slope: f64,
    pub iter_stderr: f64,
    /// Slope of the mean incremental oracle total (complexity-convention
    /// gradient calls minus the n-per-epoch snapshot cost) against epsilon.
    pub oracle_slope: f64,
    pub oracle_stderr: f64,
    pub points: usize,
}

/// Fit per-method log-log slopes from sweep rows. Requires at least four
/// distinct epsilon values per method series.
pub fn scaling_report(rows: &[CellResult]) -> Result<Vec<SlopeRow>, HarnessError> {
    let mut by_method: BTreeMap<&str, Vec<&CellResult>> = BTreeMap::new();
    for r in rows {
        by_method.entry(r.method.as_str()).or_default().push(r);
    }
    let mut out = Vec::new();
    for (method, rs) in by_method {
        // Mean over seeds within each epsilon.
        let mut by_eps: BTreeMap<u64, (f64, Vec<&CellResult>)> = BTreeMap::new();
        for r in rs {
            by_eps.entry(r.epsilon.to_bits()).or_insert((r.epsilon, Vec::new())).1.push(r);
        }
        if by_eps.len() < 4 {
            return Err(HarnessError::InsufficientPoints(format!(
                "method '{method}' has {} distinct epsilon values; need at least 4",
                by_eps.len()
            )));
        }
        let mut eps = Vec::new();
        let mut iters = Vec::new();
        let mut oracle = Vec::new();
        for (_, (e, group)) in by_eps {
            let nf = group.len() as f64;
            let mean_steps = group.iter().map(|r| r.steps as f64).sum::<f64>() / nf;
            let mean_inc = group
                .iter()
                .map(|r| {
                    (r.grad_oracles_paper as f64 - (r.n as u64 * r.epochs_started) as f64).max(1.0)
                })
                .sum::<f64>()
                / nf;
            eps.push(e);
            iters.push(mean_steps.max(1.0));
            oracle.push(mean_inc);
        }
        let (iter_slope, iter_stderr) = fit_loglog(&eps, &iters);
        let (oracle_slope, oracle_stderr) = fit_loglog(&eps, &oracle);
        out.push(SlopeRow {
            method: method.to_string(),
            iter_slope,
            iter_stderr,
            oracle_slope,
            oracle_stderr,
            points: eps.len(),
        });
    }
    Ok(out)
}

pub fn render_slopes(rows: &[SlopeRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<28} {:>12} {:>10} {:>12} {:>10} {:>7}",
        "method", "iter_slope", "stderr", "oracle_slope", "stderr", "points"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<28} {:>12.4} {:>10.4} {:>12.4} {:>10.4} {:>7}",
            r.method, r.iter_slope, r.iter_stderr, r.oracle_slope, r.oracle_stderr, r.points
        );
    }
    out
}

pub fn slopes_csv(rows: &[SlopeRow], hash: &str, master_seed: u64) -> String {
    let mut out = format!("# config_sha256={hash} master_seed={master_seed}\n");
    out.push_str("method,iter_slope,iter_stderr,oracle_slope,oracle_stderr,points\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.method, r.iter_slope, r.iter_stderr, r.oracle_slope, r.oracle_stderr, r.points
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, eps: f64, seed: u64, steps: u64, paper: u64) -> CellResult {
        CellResult {
            run_id: "r0000".into(),
            method: method.into(),
            epsilon: eps,
            seed,
            b: 8,
            n: 64,
            steps,
            epochs_started: 1,
            terminated_by: "StepNorm".into(),
            f_final: 0.0,
            final_grad_norm: 0.0,
            final_lambda_min: 0.0,
            final_step_norm: 0.0,
            grad_oracles_raw: 0,
            hess_oracles_raw: 0,
            grad_oracles_paper: paper,
            hess_oracles_paper: paper,
            wall_ms: 0.0,
        }
    }

    #[test]
    fn recovers_planted_slope() {
        // steps = 100 eps^{-1.5}: slope -1.5 exactly.
        let rows: Vec<CellResult> = [0.1f64, 0.05, 0.025, 0.0125]
            .iter()
            .map(|&e| {
                let steps = (100.0 * e.powf(-1.5)).round() as u64;
                row("re3mcn-nonconvex_plain", e, 1, steps, 64 + 8 * steps)
            })
            .collect();
        let slopes = scaling_report(&rows).unwrap();
        assert_eq!(slopes.len(), 1);
        assert!((slopes[0].iter_slope + 1.5).abs() < 0.01, "{}", slopes[0].iter_slope);
    }

    #[test]
    fn errors_on_degenerate_series() {
        let rows: Vec<CellResult> =
            (0..5).map(|s| row("re3mcn-nonconvex_plain", 0.1, s, 100, 1000)).collect();
        assert!(matches!(scaling_report(&rows), Err(HarnessError::InsufficientPoints(_))));
    }
}
