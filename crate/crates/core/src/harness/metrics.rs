//! Per-iteration metrics and their CSV form.

use std::path::Path;

use thiserror::Error;

use crate::globalization::DecisionLog;

pub const METRICS_HEADER: [&str; 13] = [
    "k",
    "epoch",
    "batch",
    "loss",
    "val_acc",
    "delta",
    "rho_c",
    "rho_h",
    "accepted",
    "rejections",
    "t_phase1",
    "t_phase2",
    "t_phase3",
];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no records to write")]
    Empty,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub k: usize,
    pub epoch: usize,
    pub batch: usize,
    /// Objective at the start of the iteration, on its batch.
    pub loss: f64,
    /// Validation accuracy after the iteration.
    pub val_acc: f64,
    /// Trust-region radius the iteration started with.
    pub delta: f64,
    /// Ratios of the first tested step (the additive proposal, or the
    /// steepest-descent step for the plain trust-region baselines).
    pub rho_c: f64,
    pub rho_h: f64,
    pub accepted: bool,
    pub rejections: u32,
    pub t_phase1: f64,
    pub t_phase2: f64,
    pub t_phase3: f64,
}

/// 12 significant digits in scientific notation.
pub fn format_float(v: f64) -> String {
    format!("{v:.11e}")
}

impl RunRecord {
    fn to_fields(&self) -> [String; 13] {
        [
            self.k.to_string(),
            self.epoch.to_string(),
            self.batch.to_string(),
            format_float(self.loss),
            format_float(self.val_acc),
            format_float(self.delta),
            format_float(self.rho_c),
            format_float(self.rho_h),
            u8::from(self.accepted).to_string(),
            self.rejections.to_string(),
            format_float(self.t_phase1),
            format_float(self.t_phase2),
            format_float(self.t_phase3),
        ]
    }

    fn from_fields(rec: &csv::StringRecord, line: u64) -> Result<Self, MetricsError> {
        if rec.len() != METRICS_HEADER.len() {
            return Err(MetricsError::Parse {
                line,
                reason: format!("expected {} fields, got {}", METRICS_HEADER.len(), rec.len()),
            });
        }
        let field = |i: usize| &rec[i];
        let err = |i: usize| MetricsError::Parse {
            line,
            reason: format!("bad value {:?} in column {}", &rec[i], METRICS_HEADER[i]),
        };
        let int = |i: usize| field(i).parse::<usize>().map_err(|_| err(i));
        let float = |i: usize| field(i).parse::<f64>().map_err(|_| err(i));
        Ok(Self {
            k: int(0)?,
            epoch: int(1)?,
            batch: int(2)?,
            loss: float(3)?,
            val_acc: float(4)?,
            delta: float(5)?,
            rho_c: float(6)?,
            rho_h: float(7)?,
            accepted: match field(8) {
                "0" => false,
                "1" => true,
                _ => return Err(err(8)),
            },
            rejections: field(9).parse().map_err(|_| err(9))?,
            t_phase1: float(10)?,
            t_phase2: float(11)?,
            t_phase3: float(12)?,
        })
    }
}

/// Writes `records` as CSV. Refuses to create a file for an empty list.
pub fn emit_metrics(records: &[RunRecord], path: &Path) -> Result<(), MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in records {
        w.write_record(r.to_fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<RunRecord>, MetricsError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(MetricsError::Parse {
            line: 1,
            reason: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    r.records()
        .enumerate()
        .map(|(i, rec)| RunRecord::from_fields(&rec?, i as u64 + 2))
        .collect()
}

pub const HISTORY_HEADER: [&str; 13] = [
    "index",
    "phase",
    "f",
    "f_trial",
    "f_ref",
    "pred",
    "success",
    "reference",
    "sigma_h",
    "rho_c",
    "rho_h",
    "window",
    "window_len",
];

/// Dumps the decision log with shortest round-trip floats so it can be replayed.
pub fn emit_history(log: &[DecisionLog], path: &Path) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HISTORY_HEADER)?;
    for d in log {
        let members: Vec<String> = d.members.iter().map(usize::to_string).collect();
        w.write_record([
            d.index.to_string(),
            d.phase.as_str().to_string(),
            d.f.to_string(),
            d.f_trial.to_string(),
            d.f_ref.to_string(),
            d.pred.to_string(),
            u8::from(d.success).to_string(),
            d.reference.to_string(),
            d.sigma_h.to_string(),
            d.rho_c.to_string(),
            d.rho_h.to_string(),
            members.join(";"),
            d.members.len().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
