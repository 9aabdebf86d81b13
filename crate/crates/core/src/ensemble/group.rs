use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::Partition;
use crate::diffusion::Denoiser;
use crate::error::{Error, Result};
use crate::numerics::DenoiserNet;

/// Which training loop produced a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Teacher,
    O2okd,
    O2mkd,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Teacher => "teacher",
            TrainMode::O2okd => "o2okd",
            TrainMode::O2mkd => "o2mkd",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher" => Ok(Self::Teacher),
            "o2okd" => Ok(Self::O2okd),
            "o2mkd" => Ok(Self::O2mkd),
            other => Err(Error::InvalidArgument(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupMetadata {
    pub mode: TrainMode,
    pub config_hash: String,
    pub seed: u64,
    pub teacher_checksum: Option<String>,
}

/// `N` students, student `i` (1-based) serving the `i`-th range of the partition.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentGroup {
    students: Vec<DenoiserNet>,
    partition: Partition,
    pub metadata: GroupMetadata,
}

impl StudentGroup {
    pub fn new(students: Vec<DenoiserNet>, partition: Partition, metadata: GroupMetadata) -> Result<Self> {
        if students.len() != partition.n_students() {
            return Err(Error::shape("student group size", partition.n_students(), students.len()));
        }
        let first = students[0].architecture();
        if let Some(other) = students.iter().find(|s| {
            let a = s.architecture();
            a.input_dim != first.input_dim || a.time_embed_dim != first.time_embed_dim
        }) {
            return Err(Error::ArchitectureMismatch(format!(
                "students disagree on input or embedding width: {first:?} vs {:?}",
                other.architecture()
            )));
        }
        Ok(Self {
            students,
            partition,
            metadata,
        })
    }

    pub fn students(&self) -> &[DenoiserNet] {
        &self.students
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn len(&self) -> usize {
        self.students.len()
    }

    pub fn is_empty(&self) -> bool {
        self.students.is_empty()
    }

    /// The student serving timestep `t`.
    pub fn student_for(&self, t: usize) -> Result<&DenoiserNet> {
        Ok(&self.students[self.partition.assign_student(t)? - 1])
    }

    /// Noise prediction from the student that owns `t`.
    pub fn routed_predict(&self, z: ArrayView2<f64>, t: usize) -> Result<Array2<f64>> {
        self.student_for(t)?.predict_eps(z, t, self.partition.total_steps)
    }
}

impl Denoiser for StudentGroup {
    fn input_dim(&self) -> usize {
        self.students[0].architecture().input_dim
    }

    fn predict_eps(&self, z: ArrayView2<f64>, t: usize, total_steps: usize) -> Result<Array2<f64>> {
        if total_steps != self.partition.total_steps {
            return Err(Error::InvalidArgument(format!(
                "group was partitioned for T={}, sampler uses T={total_steps}",
                self.partition.total_steps
            )));
        }
        self.routed_predict(z, t)
    }
}

/// Parameter-wise convex combination `sum_i w_i theta_i` of the students.
pub fn merge_students(group: &StudentGroup, weights: &[f64]) -> Result<DenoiserNet> {
    if weights.len() != group.len() {
        return Err(Error::shape("merge weights", group.len(), weights.len()));
    }
    if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(Error::InvalidArgument(format!("merge weights must be non-negative, got {weights:?}")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("merge weights must sum to 1, got {sum}")));
    }
    let nets: Vec<&DenoiserNet> = group.students.iter().collect();
    DenoiserNet::weighted_average(&nets, weights)
}

/// `1/N` for every student.
pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}
