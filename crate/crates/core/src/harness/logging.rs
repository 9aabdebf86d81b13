//! Loss curves with exponential smoothing, and run-report persistence.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distill::Branch;
use crate::ensemble::{LossRow, RunReport};
use crate::error::{Error, Result};

pub const LOSS_EMA_DECAY: f64 = 0.99;
pub const REPORT_JSON: &str = "report.json";
pub const LOSSES_CSV: &str = "losses.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedLossRow {
    pub iteration: usize,
    pub student: usize,
    pub diffusion_raw: f64,
    pub diffusion_ema: f64,
    pub kd_raw: f64,
    pub kd_ema: f64,
    pub total: f64,
    pub branch: Branch,
}

/// Raw and smoothed loss columns. Each student keeps its own average, seeded
/// with its first value: `ema_k = decay * ema_{k-1} + (1 - decay) * v_k`.
pub fn log_losses(rows: &[LossRow], decay: f64) -> Result<Vec<SmoothedLossRow>> {
    if !(decay > 0.0 && decay < 1.0) {
        return Err(Error::InvalidArgument(format!("ema decay must lie in (0, 1), got {decay}")));
    }
    let n = rows.iter().map(|r| r.student).max().unwrap_or(0);
    let mut state: Vec<Option<(f64, f64)>> = vec![None; n + 1];
    Ok(rows
        .iter()
        .map(|r| {
            let (d, k) = match state[r.student] {
                None => (r.diffusion_loss, r.kd_loss),
                Some((d, k)) => (
                    decay * d + (1.0 - decay) * r.diffusion_loss,
                    decay * k + (1.0 - decay) * r.kd_loss,
                ),
            };
            state[r.student] = Some((d, k));
            SmoothedLossRow {
                iteration: r.iteration,
                student: r.student,
                diffusion_raw: r.diffusion_loss,
                diffusion_ema: d,
                kd_raw: r.kd_loss,
                kd_ema: k,
                total: r.total,
                branch: r.branch,
            }
        })
        .collect())
}

pub fn write_loss_csv(path: &Path, rows: &[SmoothedLossRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record([
            "iteration",
            "student",
            "diffusion_raw",
            "diffusion_ema",
            "kd_raw",
            "kd_ema",
            "total",
            "branch",
        ])?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<SmoothedLossRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Write `report.json` and `losses.csv` into `dir`.
pub fn save_run(dir: &Path, report: &RunReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join(REPORT_JSON);
    fs::write(&json, serde_json::to_vec_pretty(report)?).map_err(|e| Error::io(&json, e))?;
    write_loss_csv(&dir.join(LOSSES_CSV), &log_losses(&report.loss_rows, LOSS_EMA_DECAY)?)
}

pub fn load_run(dir: &Path) -> Result<RunReport> {
    let json = dir.join(REPORT_JSON);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let mut report: RunReport = serde_json::from_str(&text)?;
    let losses = dir.join(LOSSES_CSV);
    if losses.exists() {
        report.loss_rows = read_loss_csv(&losses)?
            .into_iter()
            .map(|r| LossRow {
                iteration: r.iteration,
                student: r.student,
                diffusion_loss: r.diffusion_raw,
                kd_loss: r.kd_raw,
                total: r.total,
                branch: r.branch,
            })
            .collect();
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(iteration: usize, student: usize, d: f64, k: f64) -> LossRow {
        LossRow {
            iteration,
            student,
            diffusion_loss: d,
            kd_loss: k,
            total: d + k,
            branch: Branch::Global,
        }
    }

    #[test]
    fn constant_stream_is_its_own_average() {
        let rows: Vec<_> = (0..50).map(|i| row(i, 1, 0.3, 0.1)).collect();
        for r in log_losses(&rows, 0.99).unwrap() {
            assert_eq!(r.diffusion_ema, 0.3);
            assert_eq!(r.kd_ema, 0.1);
        }
    }

    #[test]
    fn spike_moves_average_by_one_percent() {
        let mut rows: Vec<_> = (0..10).map(|i| row(i, 1, 1.0, 0.0)).collect();
        rows[5].diffusion_loss = 101.0;
        let out = log_losses(&rows, 0.99).unwrap();
        assert!((out[5].diffusion_ema - 2.0).abs() < 1e-12);
        assert_eq!(out[4].diffusion_ema, 1.0);
    }

    #[test]
    fn students_are_smoothed_separately() {
        let rows = vec![row(0, 1, 1.0, 0.0), row(0, 2, 5.0, 0.0), row(1, 1, 1.0, 0.0)];
        let out = log_losses(&rows, 0.5).unwrap();
        assert_eq!(out[1].diffusion_ema, 5.0);
        assert_eq!(out[2].diffusion_ema, 1.0);
    }

    #[test]
    fn bad_decay() {
        assert!(log_losses(&[], 1.0).is_err());
        assert!(log_losses(&[], 0.0).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<_> = (0..20)
            .map(|i| row(i, 1 + i % 2, 0.1 * i as f64 + 1.0 / 3.0, (i as f64).sqrt() * 1e-7))
            .collect();
        let smoothed = log_losses(&rows, 0.99).unwrap();
        let path = dir.path().join("l.csv");
        write_loss_csv(&path, &smoothed).unwrap();
        assert_eq!(read_loss_csv(&path).unwrap(), smoothed);
        write_loss_csv(&path, &[]).unwrap();
        assert!(read_loss_csv(&path).unwrap().is_empty());
    }
}
