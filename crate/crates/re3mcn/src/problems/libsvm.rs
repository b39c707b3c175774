//! Dense design matrices and the LIBSVM sparse text format.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::ProblemError;

/// Dense row-major design matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DesignMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, ProblemError> {
        if rows.is_empty() {
            return Err(ProblemError::NoSamples);
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(ProblemError::Invalid("ragged rows".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in &rows {
            data.extend_from_slice(r);
        }
        Ok(DesignMatrix { rows: rows.len(), cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DesignMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Scale every nonzero row to unit Euclidean norm.
    pub fn normalize_rows(&mut self) {
        for i in 0..self.rows {
            let r = self.row_mut(i);
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                for v in r.iter_mut() {
                    *v /= n;
                }
            }
        }
    }

    pub fn max_row_norm(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Parse LIBSVM sparse text: one sample per line, `label idx:val ...`
/// with 1-based feature indices. The dimension is the largest index seen.
pub fn load_libsvm_str(
    content: &str,
    normalize: bool,
) -> Result<(DesignMatrix, Vec<f64>), ProblemError> {
    let mut parsed: Vec<(f64, Vec<(usize, f64)>)> = Vec::new();
    let mut max_idx = 0usize;
    for (lineno, raw) in content.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let label_tok = parts.next().unwrap();
        let label: f64 = label_tok.parse().map_err(|_| ProblemError::Parse {
            line: lineno + 1,
            msg: format!("bad label '{label_tok}'"),
        })?;
        let mut feats = Vec::new();
        for tok in parts {
            let (idx_s, val_s) = tok.split_once(':').ok_or_else(|| ProblemError::Parse {
                line: lineno + 1,
                msg: format!("expected idx:val, got '{tok}'"),
            })?;
            let idx: usize = idx_s.parse().map_err(|_| ProblemError::Parse {
                line: lineno + 1,
                msg: format!("bad index '{idx_s}'"),
            })?;
            if idx == 0 {
                return Err(ProblemError::Parse {
                    line: lineno + 1,
                    msg: "feature indices are 1-based".into(),
                });
            }
            let val: f64 = val_s.parse().map_err(|_| ProblemError::Parse {
                line: lineno + 1,
                msg: format!("bad value '{val_s}'"),
            })?;
            max_idx = max_idx.max(idx);
            feats.push((idx - 1, val));
        }
        parsed.push((label, feats));
    }
    if parsed.is_empty() {
        return Err(ProblemError::NoSamples);
    }
    let mut m = DesignMatrix::zeros(parsed.len(), max_idx);
    let mut labels = Vec::with_capacity(parsed.len());
    for (i, (label, feats)) in parsed.iter().enumerate() {
        labels.push(*label);
        let row = m.row_mut(i);
        for &(j, v) in feats {
            row[j] = v;
        }
    }
    if normalize {
        m.normalize_rows();
    }
    Ok((m, labels))
}

pub fn load_libsvm(
    path: &Path,
    normalize: bool,
) -> Result<(DesignMatrix, Vec<f64>), ProblemError> {
    let content = fs::read_to_string(path).map_err(|e| ProblemError::Io(e.to_string()))?;
    load_libsvm_str(&content, normalize)
}

/// Write in LIBSVM text format (zeros omitted, full float precision).
pub fn write_libsvm(path: &Path, data: &DesignMatrix, labels: &[f64]) -> Result<(), ProblemError> {
    if data.nrows() != labels.len() {
        return Err(ProblemError::Invalid("labels/rows length mismatch".into()));
    }
    let mut out = String::new();
    for i in 0..data.nrows() {
        out.push_str(&format!("{}", labels[i]));
        for (j, &v) in data.row(i).iter().enumerate() {
            if v != 0.0 {
                out.push_str(&format!(" {}:{}", j + 1, v));
            }
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| ProblemError::Io(e.to_string()))?;
    f.write_all(out.as_bytes()).map_err(|e| ProblemError::Io(e.to_string()))
}
