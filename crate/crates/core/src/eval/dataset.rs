use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Gmm8,
    SwissRoll,
    Checkerboard,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmm8" => Ok(Self::Gmm8),
            "swiss_roll" | "swiss-roll" => Ok(Self::SwissRoll),
            "checkerboard" => Ok(Self::Checkerboard),
            other => Err(Error::InvalidArgument(format!("unknown dataset `{other}`"))),
        }
    }
}

/// Eight isotropic Gaussians with means evenly spaced on the unit circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gmm8Spec {
    pub radius: f64,
    pub component_std: f64,
}

impl Default for Gmm8Spec {
    fn default() -> Self {
        Self {
            radius: 1.0,
            component_std: 0.05,
        }
    }
}

impl Gmm8Spec {
    pub const COMPONENTS: usize = 8;

    pub fn means(&self) -> [[f64; 2]; 8] {
        std::array::from_fn(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / 8.0;
            [self.radius * angle.cos(), self.radius * angle.sin()]
        })
    }

    /// Index of the closest mean and the distance to it.
    pub fn nearest(&self, point: [f64; 2]) -> (usize, f64) {
        self.means()
            .iter()
            .enumerate()
            .map(|(k, m)| (k, ((point[0] - m[0]).powi(2) + (point[1] - m[1]).powi(2)).sqrt()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("eight means")
    }
}

/// Seeded 2-D toy distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyDataset {
    kind: DatasetKind,
    gmm: Gmm8Spec,
}

impl ToyDataset {
    pub fn new(kind: DatasetKind) -> Self {
        Self {
            kind,
            gmm: Gmm8Spec::default(),
        }
    }

    pub fn gmm8() -> Self {
        Self::new(DatasetKind::Gmm8)
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        2
    }

    /// Mixture geometry, when the dataset is `gmm8`.
    pub fn gmm8_spec(&self) -> Option<Gmm8Spec> {
        (self.kind == DatasetKind::Gmm8).then_some(self.gmm)
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Array2<f64> {
        self.sample_labeled(n, rng).0
    }

    /// Samples plus the generating component (gmm8) or zero labels otherwise.
    pub fn sample_labeled(&self, n: usize, rng: &mut Rng) -> (Array2<f64>, Vec<usize>) {
        let mut out = Array2::zeros((n, 2));
        let mut labels = vec![0; n];
        for (mut row, label) in out.rows_mut().into_iter().zip(labels.iter_mut()) {
            let point = match self.kind {
                DatasetKind::Gmm8 => {
                    let k = rng.random_range(0..Gmm8Spec::COMPONENTS);
                    *label = k;
                    let m = self.gmm.means()[k];
                    let (a, b): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
                    [m[0] + self.gmm.component_std * a, m[1] + self.gmm.component_std * b]
                }
                DatasetKind::SwissRoll => {
                    let u: f64 = rng.random();
                    let angle = 1.5 * std::f64::consts::PI * (1.0 + 2.0 * u);
                    let (a, b): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
                    [angle * angle.cos() / 10.0 + 0.02 * a, angle * angle.sin() / 10.0 + 0.02 * b]
                }
                DatasetKind::Checkerboard => {
                    let x: f64 = rng.random_range(-2.0..2.0);
                    let y: f64 = rng.random_range(0.0..1.0) - 2.0 * rng.random_range(0..2) as f64;
                    let y = y + x.floor().rem_euclid(2.0);
                    [x / 2.0, y / 2.0]
                }
            };
            row[0] = point[0];
            row[1] = point[1];
        }
        (out, labels)
    }
}
