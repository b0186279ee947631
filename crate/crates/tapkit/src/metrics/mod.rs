//! Evaluation metrics: intelligibility scoring, per-parameter acoustic
//! error, improvement tables, and report assembly.
//!
//! PESQ scores are never computed here; they are ingested from an external
//! tool via [`EvalRecord::pesq_external`] and reported as-is.

mod report;
mod stoi;

pub use report::{assemble_report, ReportDocument};
pub use stoi::stoi;

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TapError};
use crate::features::{TapStats, PARAM_NAMES};
use crate::mat::Mat;
use crate::N_PARAMS;

/// Per-parameter mean absolute error between two acoustic-parameter
/// trajectories, in raw parameter units. Rows are frames.
pub fn acoustic_mae_raw(a_ref: &Mat, a_sys: &Mat) -> Result<Vec<f64>> {
    a_ref.check_same_shape(a_sys, "acoustic trajectories")?;
    if a_ref.cols() != N_PARAMS {
        return Err(TapError::ShapeMismatch(format!(
            "expected {} parameter columns, got {}",
            N_PARAMS,
            a_ref.cols()
        )));
    }
    if a_ref.rows() == 0 {
        return Err(TapError::InvalidInput("no frames to compare".into()));
    }
    let mut mae = vec![0.0; N_PARAMS];
    for t in 0..a_ref.rows() {
        for (p, m) in mae.iter_mut().enumerate() {
            *m += (a_ref.at(t, p) - a_sys.at(t, p)).abs();
        }
    }
    let n = a_ref.rows() as f64;
    for m in mae.iter_mut() {
        *m /= n;
    }
    Ok(mae)
}

/// Per-parameter MAE in standardized space, so errors are comparable
/// across parameters with different scales. Inputs are raw trajectories.
pub fn acoustic_mae(a_ref: &Mat, a_sys: &Mat, stats: &TapStats) -> Result<Vec<f64>> {
    let r = stats.standardize(a_ref)?;
    let s = stats.standardize(a_sys)?;
    acoustic_mae_raw(&r, &s)
}

/// One row of a baseline-vs-system comparison. `improvement_pct` is
/// `None` when the baseline error is zero and the ratio is undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct ImprovementRow {
    pub param: &'static str,
    pub mae_baseline: f64,
    pub mae_system: f64,
    pub improvement_pct: Option<f64>,
}

/// Per-parameter improvement of `sys` over `base`, sorted best first.
/// Rows with an undefined percentage sort to the end in parameter order.
pub fn improvement_table(base: &[f64], sys: &[f64]) -> Result<Vec<ImprovementRow>> {
    if base.len() != N_PARAMS || sys.len() != N_PARAMS {
        return Err(TapError::ShapeMismatch(format!(
            "expected {} entries, got {} and {}",
            N_PARAMS,
            base.len(),
            sys.len()
        )));
    }
    let mut rows: Vec<ImprovementRow> = (0..N_PARAMS)
        .map(|p| {
            let pct = if base[p] == 0.0 {
                None
            } else {
                Some(100.0 * (base[p] - sys[p]) / base[p])
            };
            ImprovementRow {
                param: PARAM_NAMES[p],
                mae_baseline: base[p],
                mae_system: sys[p],
                improvement_pct: pct,
            }
        })
        .collect();
    rows.sort_by(|a, b| match (a.improvement_pct, b.improvement_pct) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    Ok(rows)
}

/// CSV rendering of an improvement table; undefined percentages appear
/// as the literal string `undefined`.
pub fn improvement_csv(rows: &[ImprovementRow]) -> String {
    let mut out = String::from("param,mae_baseline,mae_system,improvement_pct\n");
    for r in rows {
        let pct = match r.improvement_pct {
            Some(p) => format!("{p:.3}"),
            None => "undefined".to_string(),
        };
        out.push_str(&format!(
            "{},{:.6},{:.6},{}\n",
            r.param, r.mae_baseline, r.mae_system, pct
        ));
    }
    out
}

/// Evaluation result for one clip under one condition and system.
/// `pesq_external` holds a score produced by an external PESQ tool, if any.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub clip_id: String,
    pub platform: String,
    pub receiver: String,
    pub denoise_mode: String,
    pub system: String,
    pub stoi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pesq_external: Option<f64>,
    pub mae: Vec<f64>,
}

impl EvalRecord {
    pub fn validate(&self) -> Result<()> {
        if self.denoise_mode != "low" && self.denoise_mode != "auto" {
            return Err(TapError::InvalidInput(format!(
                "clip '{}': denoise mode '{}' is not 'low' or 'auto'",
                self.clip_id, self.denoise_mode
            )));
        }
        if !(0.0..=1.0).contains(&self.stoi) {
            return Err(TapError::InvalidInput(format!(
                "clip '{}': STOI {} outside [0, 1]",
                self.clip_id, self.stoi
            )));
        }
        if self.mae.len() != N_PARAMS {
            return Err(TapError::ShapeMismatch(format!(
                "clip '{}': expected {} MAE entries, got {}",
                self.clip_id,
                N_PARAMS,
                self.mae.len()
            )));
        }
        if self.mae.iter().any(|&m| m.is_nan() || m < 0.0) {
            return Err(TapError::InvalidInput(format!(
                "clip '{}': negative or non-finite MAE",
                self.clip_id
            )));
        }
        Ok(())
    }
}

/// Append-friendly JSONL writer; one record per line.
pub fn write_records_jsonl(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        r.validate()?;
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_records_jsonl(path: &Path) -> Result<Vec<EvalRecord>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: EvalRecord = serde_json::from_str(&line)?;
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}
