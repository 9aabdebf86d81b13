use serde::{Deserialize, Serialize};

use super::{Partition, PartitionScheme};
use crate::diffusion::{Sampler, ScheduleKind};
use crate::distill::{KdMethod, Weighting};
use crate::error::{Error, Result};
use crate::eval::DatasetKind;
use crate::numerics::{AdamConfig, Architecture};

/// How a trained model is sampled and scored at the end of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub sampler: Sampler,
    pub steps: usize,
    pub n_samples: usize,
    pub n_reference: usize,
    pub sample_seed: u64,
    pub reference_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sampler: Sampler::Ddim,
            steps: 50,
            n_samples: 2000,
            n_reference: 2000,
            sample_seed: 1000,
            reference_seed: 2000,
        }
    }
}

/// Starting point of compression-mode students.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StudentInit {
    /// Fresh random weights from the run seed's init stream.
    #[default]
    Fresh,
    /// The teacher with its lowest-norm hidden units removed.
    Pruned,
}

impl std::str::FromStr for StudentInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fresh" => Ok(Self::Fresh),
            "pruned" => Ok(Self::Pruned),
            other => Err(Error::InvalidArgument(format!("unknown student init `{other}`"))),
        }
    }
}

/// Every knob of a training run. Missing keys take the defaults below;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: DatasetKind,
    pub schedule: ScheduleKind,
    pub total_steps: usize,
    pub time_embed_dim: usize,
    pub teacher_hidden: Vec<usize>,
    pub student_hidden: Vec<usize>,
    pub n_students: usize,
    pub p: f64,
    pub lambda_kd: f64,
    pub kd_method: KdMethod,
    pub partition: PartitionScheme,
    pub batch_size: usize,
    pub iterations: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub weighting: Weighting,
    pub self_distill: bool,
    pub student_init: StudentInit,
    pub ema_decay: f64,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Gmm8,
            schedule: ScheduleKind::Linear,
            total_steps: 1000,
            time_embed_dim: 32,
            teacher_hidden: vec![128, 128, 128],
            student_hidden: vec![64, 64, 64],
            n_students: 4,
            p: 0.5,
            lambda_kd: 1.0,
            kd_method: KdMethod::Prediction,
            partition: PartitionScheme::Uniform,
            batch_size: 256,
            iterations: 20_000,
            adam: AdamConfig::default(),
            seed: 0,
            weighting: Weighting::Snr,
            self_distill: false,
            student_init: StudentInit::Fresh,
            ema_decay: 0.999,
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = parse_json_config(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn teacher_architecture(&self) -> Architecture {
        Architecture::new(2, self.time_embed_dim, self.teacher_hidden.clone())
    }

    /// Student architecture; the teacher's in self-distillation mode.
    pub fn student_architecture(&self) -> Architecture {
        if self.self_distill {
            self.teacher_architecture()
        } else {
            Architecture::new(2, self.time_embed_dim, self.student_hidden.clone())
        }
    }

    pub fn make_partition(&self) -> Result<Partition> {
        Partition::new(self.partition, self.n_students, self.total_steps)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, msg: String| if ok { Ok(()) } else { Err(Error::config(key, msg)) };
        check(self.total_steps >= 2, "total_steps", format!("must be at least 2, got {}", self.total_steps))?;
        check((0.0..=1.0).contains(&self.p), "p", format!("must lie in [0, 1], got {}", self.p))?;
        check(
            self.lambda_kd >= 0.0 && self.lambda_kd.is_finite(),
            "lambda_kd",
            format!("must be finite and >= 0, got {}", self.lambda_kd),
        )?;
        check(
            self.n_students >= 1 && self.n_students <= self.total_steps,
            "n_students",
            format!("must lie in [1, {}], got {}", self.total_steps, self.n_students),
        )?;
        self.make_partition().map_err(|e| Error::config("partition", e.to_string()))?;
        let min_batch = if self.kd_method == KdMethod::Similarity { 2 } else { 1 };
        check(
            self.batch_size >= min_batch,
            "batch_size",
            format!("must be at least {min_batch}, got {}", self.batch_size),
        )?;
        check(
            self.adam.lr > 0.0 && self.adam.lr.is_finite(),
            "adam.lr",
            format!("must be positive, got {}", self.adam.lr),
        )?;
        check(
            (0.0..1.0).contains(&self.ema_decay),
            "ema_decay",
            format!("must lie in [0, 1), got {}", self.ema_decay),
        )?;
        self.teacher_architecture()
            .validate()
            .map_err(|e| Error::config("teacher_hidden", e.to_string()))?;
        let student = self.student_architecture();
        student
            .validate()
            .map_err(|e| Error::config("student_hidden", e.to_string()))?;
        if self.kd_method == KdMethod::Attention {
            let (tw, sw) = (self.teacher_architecture().feature_width(), student.feature_width());
            check(
                tw.max(sw) % tw.min(sw) == 0,
                "student_hidden",
                format!("attention distillation needs one feature width to divide the other, got {tw} and {sw}"),
            )?;
        }
        check(
            self.eval.steps >= 1 && self.eval.steps <= self.total_steps,
            "eval.steps",
            format!("must lie in [1, {}], got {}", self.total_steps, self.eval.steps),
        )?;
        check(
            self.eval.n_samples >= 2 && self.eval.n_reference >= 2,
            "eval.n_samples",
            "evaluation needs at least 2 generated and 2 reference points".into(),
        )?;
        Ok(())
    }
}

/// Switch a configuration to self-distillation: students take the teacher's
/// architecture and start from the teacher's parameters.
pub fn self_distill_mode(cfg: &TrainConfig) -> TrainConfig {
    TrainConfig {
        self_distill: true,
        student_hidden: cfg.teacher_hidden.clone(),
        ..cfg.clone()
    }
}

/// Deserialize a JSON configuration, naming the offending key on failure.
pub fn parse_json_config<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        Error::config(key, e.into_inner().to_string())
    })
}
