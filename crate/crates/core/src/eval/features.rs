use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ToyDataset;
use crate::diffusion::{q_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::DenoiserNet;
use crate::rng::{stream, Stream};

/// Five-number summary of the tapped feature's activations at one timestep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStatRow {
    pub t: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl FeatureStatRow {
    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Per-timestep box-plot statistics of the tapped feature on noised data.
pub fn feature_stats(
    net: &DenoiserNet,
    sched: &NoiseSchedule,
    dataset: &ToyDataset,
    t_grid: &[usize],
    batch: usize,
    seed: u64,
) -> Result<Vec<FeatureStatRow>> {
    if batch == 0 {
        return Err(Error::InvalidArgument("feature_stats needs a non-empty batch".into()));
    }
    let mut data_rng = stream(seed, Stream::Data);
    let mut noise_rng = stream(seed, Stream::Noise);
    let total = sched.total_steps();
    t_grid
        .iter()
        .map(|&t| {
            let x0 = dataset.sample(batch, &mut data_rng);
            let noise = Array2::from_shape_fn(x0.dim(), |_| StandardNormal.sample(&mut noise_rng));
            let ts = vec![t; batch];
            let z = q_sample(sched, x0.view(), &ts, noise.view())?;
            let (_, feature) = net.predict_with_feature(z.view(), &ts, total)?;
            let mut values: Vec<f64> = feature.iter().copied().collect();
            values.sort_by(f64::total_cmp);
            Ok(FeatureStatRow {
                t,
                min: values[0],
                q25: quantile(&values, 0.25),
                median: quantile(&values, 0.5),
                q75: quantile(&values, 0.75),
                max: values[values.len() - 1],
            })
        })
        .collect()
}
