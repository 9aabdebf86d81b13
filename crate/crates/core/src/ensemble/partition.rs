use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the timestep axis is split among students.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    /// Equal-length ranges.
    #[default]
    Uniform,
    /// Quadratic spacing with short ranges at large (noisy) timesteps.
    SchemeA,
    /// Quadratic spacing with short ranges at small timesteps.
    SchemeB,
}

impl std::str::FromStr for PartitionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "scheme_a" | "scheme-a" => Ok(Self::SchemeA),
            "scheme_b" | "scheme-b" => Ok(Self::SchemeB),
            other => Err(Error::InvalidArgument(format!("unknown partition scheme `{other}`"))),
        }
    }
}

/// Boundaries `b_0 = 0 < b_1 < ... < b_N = T`; student `i` (1-based) owns `[b_{i-1}, b_i)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub scheme: PartitionScheme,
    pub total_steps: usize,
    pub boundaries: Vec<usize>,
}

fn boundary(scheme: PartitionScheme, i: usize, n: usize, total: usize) -> usize {
    match scheme {
        // round(i * T / N), halves rounded up
        PartitionScheme::Uniform => (2 * i * total + n) / (2 * n),
        // floor(T * (i / N)^2)
        PartitionScheme::SchemeB => total * i * i / (n * n),
        // T - floor(T * ((N - i) / N)^2)
        PartitionScheme::SchemeA => total - total * (n - i) * (n - i) / (n * n),
    }
}

impl Partition {
    pub fn new(scheme: PartitionScheme, n: usize, total_steps: usize) -> Result<Self> {
        if n == 0 || n > total_steps {
            return Err(Error::InvalidArgument(format!(
                "number of students must lie in [1, T={total_steps}], got {n}"
            )));
        }
        let boundaries: Vec<usize> = (0..=n).map(|i| boundary(scheme, i, n, total_steps)).collect();
        if let Some(w) = boundaries.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "{scheme:?} with N={n}, T={total_steps} leaves student {} with an empty range",
                w + 1
            )));
        }
        Ok(Self {
            scheme,
            total_steps,
            boundaries,
        })
    }

    pub fn uniform(n: usize, total_steps: usize) -> Result<Self> {
        Self::new(PartitionScheme::Uniform, n, total_steps)
    }

    pub fn n_students(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// Half-open range `[lo, hi)` of 1-based student `i`.
    pub fn range(&self, i: usize) -> Result<(usize, usize)> {
        if i == 0 || i > self.n_students() {
            return Err(Error::InvalidArgument(format!(
                "student index {i} outside [1, {}]",
                self.n_students()
            )));
        }
        Ok((self.boundaries[i - 1], self.boundaries[i]))
    }

    /// Whether student `i`'s range spans every timestep.
    pub fn is_full_range(&self, i: usize) -> bool {
        self.range(i).map(|r| r == (0, self.total_steps)).unwrap_or(false)
    }

    /// The unique 1-based `i` with `b_{i-1} <= t < b_i`.
    pub fn assign_student(&self, t: usize) -> Result<usize> {
        if t >= self.total_steps {
            return Err(Error::InvalidArgument(format!(
                "timestep {t} out of range [0, {})",
                self.total_steps
            )));
        }
        Ok(self.boundaries.partition_point(|&b| b <= t))
    }

    /// Consistency check used when loading a partition from disk.
    pub fn validate(&self) -> Result<()> {
        let rebuilt = Self::new(self.scheme, self.n_students(), self.total_steps)?;
        if rebuilt.boundaries != self.boundaries {
            return Err(Error::InvalidArgument(format!(
                "partition boundaries {:?} do not match the {:?} rule",
                self.boundaries, self.scheme
            )));
        }
        Ok(())
    }
}
