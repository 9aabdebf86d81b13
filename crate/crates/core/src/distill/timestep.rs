use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::ensemble::Partition;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Which timestep distribution a draw came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// The student's own range.
    Range,
    /// The full chain `[0, T)`.
    Global,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Range => "range",
            Branch::Global => "global",
        }
    }
}

impl std::str::FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "range" => Ok(Self::Range),
            "global" => Ok(Self::Global),
            other => Err(Error::InvalidArgument(format!("unknown branch `{other}`"))),
        }
    }
}

/// Timesteps for one training batch of one student.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestepDraw {
    pub timesteps: Vec<usize>,
    pub branch: Branch,
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("p must lie in [0, 1], got {p}")));
    }
    Ok(())
}

/// Choose the branch: the student's range with probability `p`, else the full
/// chain. One uniform is consumed either way. A range that already spans the
/// whole chain is reported as global.
fn draw_bounds(rng: &mut Rng, student: usize, partition: &Partition, p: f64) -> Result<((usize, usize), Branch)> {
    check_p(p)?;
    let range = partition.range(student)?;
    let u: f64 = rng.random();
    if u < p && !partition.is_full_range(student) {
        Ok((range, Branch::Range))
    } else {
        Ok(((0, partition.total_steps), Branch::Global))
    }
}

/// Single timestep for 1-based `student`.
pub fn sample_timestep(rng: &mut Rng, student: usize, partition: &Partition, p: f64) -> Result<(usize, Branch)> {
    let ((lo, hi), branch) = draw_bounds(rng, student, partition, p)?;
    Ok((rng.random_range(lo..hi), branch))
}

/// A batch of `batch` timesteps sharing one branch decision.
pub fn sample_timesteps(
    rng: &mut Rng,
    batch: usize,
    student: usize,
    partition: &Partition,
    p: f64,
) -> Result<TimestepDraw> {
    let ((lo, hi), branch) = draw_bounds(rng, student, partition, p)?;
    Ok(TimestepDraw {
        timesteps: (0..batch).map(|_| rng.random_range(lo..hi)).collect(),
        branch,
    })
}
