//! A shrunken comparison grid written to a directory as CSV and SVG.
//!
//! `cargo run --release --example experiment_matrix -- [out dir]`

use std::path::PathBuf;

use o2mkd::distill::KdMethod;
use o2mkd::ensemble::{EvalConfig, StudentInit, TrainConfig};
use o2mkd::harness::{run_matrix, MatrixConfig};

fn main() -> o2mkd::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("o2mkd_matrix"));
    let cfg = MatrixConfig {
        base: TrainConfig {
            iterations: 1000,
            ema_decay: 0.99,
            student_init: StudentInit::Pruned,
            eval: EvalConfig { n_samples: 500, n_reference: 500, ..EvalConfig::default() },
            ..TrainConfig::default()
        },
        teacher_iterations: Some(4000),
        seeds: vec![0],
        kd_methods: vec![KdMethod::Prediction, KdMethod::Similarity],
        group_sizes: vec![4],
        ..MatrixConfig::default()
    };
    let rows = run_matrix(&cfg, &out, 1)?;
    for r in &rows {
        println!("{:<28} MMD^2 {:.5}", r.run, r.mmd);
    }
    println!("wrote {}", out.join("report.csv").display());
    Ok(())
}
