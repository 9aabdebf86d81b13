//! The comparison grid: no-KD student, one-to-one KD per method and
//! one-to-many KD per method and group size, over several seeds.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{save_checkpoint, save_group, CheckpointHeader};
use super::logging::save_run;
use super::report::{render_svg, write_report_csv, ReportRow};
use crate::distill::KdMethod;
use crate::ensemble::{evaluate_model, train_o2mkd, train_o2okd, train_teacher, TrainConfig, TrainMode};
use crate::error::{Error, Result};
use crate::numerics::DenoiserNet;

pub const THREADS_ENV: &str = "O2MKD_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixConfig {
    /// Settings shared by every run; per-cell fields are overwritten.
    pub base: TrainConfig,
    /// Teacher budget; the base budget when absent.
    pub teacher_iterations: Option<usize>,
    pub seeds: Vec<u64>,
    pub kd_methods: Vec<KdMethod>,
    pub group_sizes: Vec<usize>,
    /// Extra prediction-KD group sizes for the metric-vs-N curve.
    pub extra_group_sizes: Vec<usize>,
    /// Extra prediction-KD values of `p` at the first group size.
    pub p_sweep: Vec<f64>,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        Self {
            base: TrainConfig::default(),
            teacher_iterations: None,
            seeds: vec![0, 1, 2],
            kd_methods: KdMethod::ALL_ACTIVE.to_vec(),
            group_sizes: vec![4, 8],
            extra_group_sizes: Vec::new(),
            p_sweep: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixCell {
    pub name: String,
    pub mode: TrainMode,
    pub config: TrainConfig,
}

fn p_label(p: f64) -> String {
    format!("{p}").replace('.', "_")
}

impl MatrixConfig {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.kd_methods.contains(&KdMethod::None) {
            return Err(Error::config("kd_methods", "the no-KD baseline is always included; list only KD methods"));
        }
        for cell in self.cells() {
            cell.config
                .validate()
                .map_err(|e| Error::config(format!("cell {}", cell.name), e.to_string()))?;
        }
        Ok(())
    }

    /// Every run in a fixed order: per seed, the no-KD student, one-to-one KD
    /// per method, one-to-many KD per group size and method, then extras.
    pub fn cells(&self) -> Vec<MatrixCell> {
        let mut cells = Vec::new();
        for &seed in &self.seeds {
            let base = TrainConfig { seed, ..self.base.clone() };
            cells.push(MatrixCell {
                name: format!("s{seed}/no_kd"),
                mode: TrainMode::O2okd,
                config: TrainConfig {
                    kd_method: KdMethod::None,
                    lambda_kd: 0.0,
                    n_students: 1,
                    ..base.clone()
                },
            });
            for &m in &self.kd_methods {
                cells.push(MatrixCell {
                    name: format!("s{seed}/o2okd_{m}"),
                    mode: TrainMode::O2okd,
                    config: TrainConfig {
                        kd_method: m,
                        n_students: 1,
                        ..base.clone()
                    },
                });
            }
            for &n in &self.group_sizes {
                for &m in &self.kd_methods {
                    cells.push(MatrixCell {
                        name: format!("s{seed}/o2mkd_n{n}_{m}"),
                        mode: TrainMode::O2mkd,
                        config: TrainConfig {
                            kd_method: m,
                            n_students: n,
                            ..base.clone()
                        },
                    });
                }
            }
            for &n in &self.extra_group_sizes {
                cells.push(MatrixCell {
                    name: format!("s{seed}/o2mkd_n{n}_prediction"),
                    mode: TrainMode::O2mkd,
                    config: TrainConfig {
                        kd_method: KdMethod::Prediction,
                        n_students: n,
                        ..base.clone()
                    },
                });
            }
            if let Some(&n) = self.group_sizes.first() {
                for &p in &self.p_sweep {
                    cells.push(MatrixCell {
                        name: format!("s{seed}/o2mkd_n{n}_prediction_p{}", p_label(p)),
                        mode: TrainMode::O2mkd,
                        config: TrainConfig {
                            kd_method: KdMethod::Prediction,
                            n_students: n,
                            p,
                            ..base.clone()
                        },
                    });
                }
            }
        }
        cells
    }
}

/// Worker count from `O2MKD_THREADS`, else the machine's parallelism.
pub fn matrix_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn run_cell(teacher: &DenoiserNet, cell: &MatrixCell, out: &Path) -> Result<ReportRow> {
    let dir = out.join("runs").join(&cell.name);
    let cfg = &cell.config;
    let (mut report, metrics) = match cell.mode {
        TrainMode::O2mkd => {
            let (group, report) = train_o2mkd(teacher, cfg)?;
            save_group(&dir, &group, cfg.schedule)?;
            let m = evaluate_model(&group, cfg)?;
            (report, m)
        }
        _ => {
            let (net, report) = train_o2okd(teacher, cfg)?;
            let header = CheckpointHeader {
                architecture: net.architecture().clone(),
                schedule: cfg.schedule,
                total_steps: cfg.total_steps,
                role: "student_1".into(),
                partition: None,
                config_hash: report.config_hash.clone(),
                seed: cfg.seed,
            };
            save_checkpoint(&dir.join("student_1.o2mk"), &net, &header)?;
            let m = evaluate_model(&net, cfg)?;
            (report, m)
        }
    };
    report.metrics = Some(metrics);
    save_run(&dir, &report)?;
    Ok(ReportRow::from_report(cell.name.clone(), &report).expect("metrics attached"))
}

/// Train the shared teacher, run every cell on `threads` workers and write
/// `report.csv` and `report.svg` into `out`. Rows come back in cell order.
pub fn run_matrix(cfg: &MatrixConfig, out: &Path, threads: usize) -> Result<Vec<ReportRow>> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let teacher_cfg = TrainConfig {
        iterations: cfg.teacher_iterations.unwrap_or(cfg.base.iterations),
        ..cfg.base.clone()
    };
    let (teacher, mut teacher_report) = train_teacher(&teacher_cfg)?;
    teacher_report.metrics = Some(evaluate_model(&teacher, &teacher_cfg)?);
    let header = CheckpointHeader {
        architecture: teacher.architecture().clone(),
        schedule: teacher_cfg.schedule,
        total_steps: teacher_cfg.total_steps,
        role: "teacher".into(),
        partition: None,
        config_hash: teacher_report.config_hash.clone(),
        seed: teacher_cfg.seed,
    };
    save_checkpoint(&out.join("teacher").join("teacher.o2mk"), &teacher, &header)?;
    save_run(&out.join("teacher"), &teacher_report)?;

    let cells = cfg.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let mut rows = vec![ReportRow::from_report("teacher", &teacher_report).expect("metrics attached")];
    let cell_rows: Vec<ReportRow> =
        pool.install(|| cells.par_iter().map(|cell| run_cell(&teacher, cell, out)).collect::<Result<_>>())?;
    rows.extend(cell_rows);
    write_report_csv(&out.join("report.csv"), &rows)?;
    let svg = out.join("report.svg");
    fs::write(&svg, render_svg(&rows, None)).map_err(|e| Error::io(&svg, e))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_layout() {
        let cells = MatrixConfig::default().cells();
        assert_eq!(cells.len(), 13 * 3);
        assert_eq!(cells[0].name, "s0/no_kd");
        assert_eq!(cells.iter().filter(|c| c.mode == TrainMode::O2mkd).count(), 8 * 3);
        let mut names: Vec<_> = cells.iter().map(|c| c.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), cells.len());
    }

    #[test]
    fn extras_extend_the_grid() {
        let cfg = MatrixConfig {
            seeds: vec![0],
            extra_group_sizes: vec![2],
            p_sweep: vec![0.0, 0.25],
            ..MatrixConfig::default()
        };
        let cells = cfg.cells();
        assert_eq!(cells.len(), 13 + 3);
        assert!(cells.iter().any(|c| c.name == "s0/o2mkd_n4_prediction_p0_25"));
    }

    #[test]
    fn rejects_none_in_methods() {
        let cfg = MatrixConfig {
            kd_methods: vec![KdMethod::None],
            ..MatrixConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
    }
}
