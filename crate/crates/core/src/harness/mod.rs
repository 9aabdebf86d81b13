//! Checkpoints, loss logging, reports, the experiment matrix and the CLI.

pub mod checkpoint;
pub mod cli;
pub mod logging;
pub mod matrix;
pub mod report;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_group, save_checkpoint, save_group, CheckpointHeader,
    GroupManifest, LoadedModel,
};
pub use cli::{read_samples_csv, write_samples_csv};
pub use logging::{load_run, log_losses, save_run, SmoothedLossRow};
pub use matrix::{run_matrix, MatrixCell, MatrixConfig};
pub use report::{collect_runs, render_svg, write_report_csv, ReportRow};
