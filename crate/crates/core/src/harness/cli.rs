//! Command-line interface. Exit codes: 0 success, 1 runtime failure,
//! 2 bad flags or configuration.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use super::checkpoint::{load_checkpoint, save_checkpoint, save_group, load_group, CheckpointHeader, LoadedModel};
use super::logging::save_run;
use super::matrix::{matrix_threads, run_matrix, MatrixConfig};
use super::report::{collect_runs, render_svg, write_report_csv};
use crate::diffusion::{sample, NoiseSchedule, SampleConfig, Sampler, ScheduleKind};
use crate::distill::KdMethod;
use crate::ensemble::{
    evaluate_model, merge_students, parse_json_config, self_distill_mode, train_o2mkd, train_o2okd, train_teacher,
    uniform_weights, GroupMetadata, Partition, PartitionScheme, StudentGroup, StudentInit, TrainConfig, TrainMode,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, feature_stats, DatasetKind, ToyDataset, METRIC_HEADER};
use crate::rng::{stream, Stream};

#[derive(Debug, Parser)]
#[command(name = "o2mkd", version, about = "One-to-many distillation of diffusion denoisers on 2-D toy data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a teacher denoiser.
    TrainTeacher {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonOverrides,
    },
    /// Distill a teacher into one student or a timestep-partitioned group.
    Distill(DistillArgs),
    /// Generate samples from a checkpoint or a group directory.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "ddim")]
        sampler: Sampler,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 2000)]
        n_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a samples CSV against fresh dataset draws.
    Eval {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, default_value = "gmm8")]
        dataset: DatasetKind,
        #[arg(long, default_value_t = 2000)]
        n_reference: usize,
        #[arg(long, default_value_t = 2000)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Average the parameters of a group's students into one network.
    Merge {
        #[arg(long)]
        group: PathBuf,
        /// `uniform` or comma-separated weights summing to 1.
        #[arg(long, default_value = "uniform")]
        weights: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-timestep box-plot statistics of the tapped feature.
    FeatureStats {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "gmm8")]
        dataset: DatasetKind,
        #[arg(long, default_value_t = 256)]
        batch: usize,
        /// Number of evenly spaced timesteps from 0 to T-1.
        #[arg(long, default_value_t = 11)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize every evaluated run below a directory.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Samples CSV for the scatter panel.
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long, default_value = "gmm8")]
        dataset: DatasetKind,
    },
    /// Run the full comparison grid over seeds.
    Matrix {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct CommonOverrides {
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dataset: Option<DatasetKind>,
    #[arg(long)]
    schedule: Option<ScheduleKind>,
    #[arg(long)]
    total_steps: Option<usize>,
}

impl CommonOverrides {
    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.iterations {
            cfg.iterations = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.adam.lr = v;
        }
        if let Some(v) = self.dataset {
            cfg.dataset = v;
        }
        if let Some(v) = self.schedule {
            cfg.schedule = v;
        }
        if let Some(v) = self.total_steps {
            cfg.total_steps = v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum DistillMode {
    O2okd,
    O2mkd,
}

#[derive(Debug, Args)]
struct DistillArgs {
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long, value_enum, default_value = "o2mkd")]
    mode: DistillMode,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "n")]
    n: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    lambda_kd: Option<f64>,
    #[arg(long)]
    kd: Option<KdMethod>,
    #[arg(long)]
    partition: Option<PartitionScheme>,
    /// `fresh` or `pruned` (teacher with low-norm units removed).
    #[arg(long)]
    student_init: Option<StudentInit>,
    #[arg(long)]
    self_distill: bool,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonOverrides,
}

/// Parse `args` (program name first) and run the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => 2,
                _ => 1,
            }
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn load_train_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => parse_json_config(&read_text(p)?),
        None => Ok(TrainConfig::default()),
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::TrainTeacher { config, out, common } => {
            let mut cfg = load_train_config(config.as_deref())?;
            common.apply(&mut cfg);
            cfg.validate()?;
            let (teacher, mut report) = train_teacher(&cfg)?;
            report.metrics = Some(evaluate_model(&teacher, &cfg)?);
            let header = CheckpointHeader {
                architecture: teacher.architecture().clone(),
                schedule: cfg.schedule,
                total_steps: cfg.total_steps,
                role: "teacher".into(),
                partition: None,
                config_hash: report.config_hash.clone(),
                seed: cfg.seed,
            };
            save_checkpoint(&out, &teacher, &header)?;
            save_run(&run_dir_for(&out), &report)
        }
        Command::Distill(args) => distill(args),
        Command::Sample {
            model,
            sampler,
            steps,
            n_samples,
            seed,
            out,
        } => {
            let loaded = LoadedModel::load(&model)?;
            let (kind, total) = loaded.schedule();
            let sched = NoiseSchedule::new(kind, total)?;
            let cfg = SampleConfig {
                sampler,
                n_steps: steps,
                n_samples,
                seed,
                keep_trajectory: false,
            };
            let samples = sample(loaded.as_denoiser(), &sched, &cfg)?.samples;
            write_samples_csv(&out, &samples)
        }
        Command::Eval {
            samples,
            dataset,
            n_reference,
            seed,
            out,
        } => {
            let x = read_samples_csv(&samples)?;
            let report = evaluate(x.view(), &ToyDataset::new(dataset), n_reference, seed)?;
            let mut buf = format!("# {METRIC_HEADER}\n").into_bytes();
            {
                let mut w = csv::Writer::from_writer(&mut buf);
                w.serialize(&report)?;
                w.flush().map_err(|e| Error::io(&out, e))?;
            }
            fs::write(&out, buf).map_err(|e| Error::io(&out, e))
        }
        Command::Merge { group, weights, out } => {
            let (g, manifest) = load_group(&group)?;
            let w = parse_weights(&weights, g.len())?;
            let merged = merge_students(&g, &w)?;
            let header = CheckpointHeader {
                architecture: merged.architecture().clone(),
                schedule: manifest.schedule,
                total_steps: manifest.partition.total_steps,
                role: "merged".into(),
                partition: Some(manifest.partition.clone()),
                config_hash: manifest.metadata.config_hash.clone(),
                seed: manifest.metadata.seed,
            };
            save_checkpoint(&out, &merged, &header)
        }
        Command::FeatureStats {
            model,
            dataset,
            batch,
            points,
            seed,
            out,
        } => {
            if model.is_dir() {
                return Err(Error::config("--model", "feature statistics need a single checkpoint file"));
            }
            let (net, header) = load_checkpoint(&model)?;
            let sched = NoiseSchedule::new(header.schedule, header.total_steps)?;
            if points < 2 {
                return Err(Error::config("--points", "need at least 2 timesteps"));
            }
            let last = header.total_steps - 1;
            let grid: Vec<usize> = (0..points).map(|k| (k * last + (points - 1) / 2) / (points - 1)).collect();
            let rows = feature_stats(&net, &sched, &ToyDataset::new(dataset), &grid, batch, seed)?;
            let mut w = csv::Writer::from_path(&out)?;
            for row in &rows {
                w.serialize(row)?;
            }
            w.flush().map_err(|e| Error::io(&out, e))
        }
        Command::Report {
            runs,
            out,
            svg,
            samples,
            dataset,
        } => {
            let rows = collect_runs(&runs)?;
            write_report_csv(&out, &rows)?;
            if let Some(svg_path) = svg {
                let generated = samples.as_deref().map(read_samples_csv).transpose()?;
                let reference = generated
                    .as_ref()
                    .map(|g| ToyDataset::new(dataset).sample(g.nrows(), &mut stream(0, Stream::Reference)));
                let scatter = generated.as_ref().zip(reference.as_ref()).map(|(g, r)| (g.view(), r.view()));
                fs::write(&svg_path, render_svg(&rows, scatter)).map_err(|e| Error::io(&svg_path, e))?;
            }
            Ok(())
        }
        Command::Matrix { config, out } => {
            let cfg: MatrixConfig = match config {
                Some(p) => parse_json_config(&read_text(&p)?)?,
                None => MatrixConfig::default(),
            };
            let rows = run_matrix(&cfg, &out, matrix_threads())?;
            println!("{} runs written to {}", rows.len(), out.display());
            Ok(())
        }
    }
}

/// Directory receiving the report of a single-file run: `<dir>/<stem>_run`.
fn run_dir_for(checkpoint: &Path) -> PathBuf {
    let stem = checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    checkpoint.with_file_name(format!("{stem}_run"))
}

fn distill(args: DistillArgs) -> Result<()> {
    let (teacher, header) = load_checkpoint(&args.teacher)?;
    let mut cfg = load_train_config(args.config.as_deref())?;
    cfg.teacher_hidden = header.architecture.hidden_dims.clone();
    cfg.time_embed_dim = header.architecture.time_embed_dim;
    cfg.schedule = header.schedule;
    cfg.total_steps = header.total_steps;
    args.common.apply(&mut cfg);
    if let Some(v) = args.n {
        cfg.n_students = v;
    }
    if let Some(v) = args.p {
        cfg.p = v;
    }
    if let Some(v) = args.lambda_kd {
        cfg.lambda_kd = v;
    }
    if let Some(v) = args.kd {
        cfg.kd_method = v;
    }
    if let Some(v) = args.partition {
        cfg.partition = v;
    }
    if let Some(v) = args.student_init {
        cfg.student_init = v;
    }
    if args.self_distill {
        cfg = self_distill_mode(&cfg);
    }
    if args.common.schedule.is_some_and(|s| s != header.schedule)
        || args.common.total_steps.is_some_and(|t| t != header.total_steps)
    {
        return Err(Error::config("--schedule", "the schedule is fixed by the teacher checkpoint"));
    }
    cfg.validate()?;

    let (group, mut report) = match args.mode {
        DistillMode::O2mkd => train_o2mkd(&teacher, &cfg)?,
        DistillMode::O2okd => {
            let (net, report) = train_o2okd(&teacher, &cfg)?;
            let group = StudentGroup::new(
                vec![net],
                Partition::uniform(1, cfg.total_steps)?,
                GroupMetadata {
                    mode: TrainMode::O2okd,
                    config_hash: report.config_hash.clone(),
                    seed: cfg.seed,
                    teacher_checksum: report.teacher_checksum.clone(),
                },
            )?;
            (group, report)
        }
    };
    save_group(&args.out, &group, cfg.schedule)?;
    report.metrics = Some(evaluate_model(&group, &cfg)?);
    save_run(&args.out, &report)
}

fn parse_weights(spec: &str, n: usize) -> Result<Vec<f64>> {
    if spec == "uniform" {
        return Ok(uniform_weights(n));
    }
    let weights = spec
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::config("--weights", format!("`{spec}`: {e}")))?;
    if weights.len() != n {
        return Err(Error::config("--weights", format!("expected {n} weights, got {}", weights.len())));
    }
    Ok(weights)
}

pub fn write_samples_csv(path: &Path, samples: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..samples.ncols()).map(|c| format!("x{c}")))?;
    for row in samples.rows() {
        w.serialize(row.to_vec())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_samples_csv(path: &Path) -> Result<Array2<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let cols = r.headers()?.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for record in r.deserialize::<Vec<f64>>() {
        let record = record?;
        if record.len() != cols {
            return Err(Error::shape("samples csv row", cols, record.len()));
        }
        values.extend(record);
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::InvalidArgument(e.to_string()))
}
