use ndarray::{s, Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::process::{ddim_step, ddpm_step, ddpm_strided_step, predict_x0};
use super::NoiseSchedule;
use crate::error::{Error, Result};
use crate::numerics::DenoiserNet;
use crate::rng::{stream, Rng, Stream};

/// Anything that predicts the injected noise for a batch sharing one timestep.
pub trait Denoiser {
    fn input_dim(&self) -> usize;

    fn predict_eps(&self, z: ArrayView2<f64>, t: usize, total_steps: usize) -> Result<Array2<f64>>;
}

const INFERENCE_CHUNK: usize = 1024;

impl Denoiser for DenoiserNet {
    fn input_dim(&self) -> usize {
        self.architecture().input_dim
    }

    fn predict_eps(&self, z: ArrayView2<f64>, t: usize, total_steps: usize) -> Result<Array2<f64>> {
        let rows = z.nrows();
        let mut out = Array2::zeros((rows, self.architecture().input_dim));
        let ts = vec![t; rows.min(INFERENCE_CHUNK)];
        let mut start = 0;
        while start < rows {
            let end = (start + INFERENCE_CHUNK).min(rows);
            let eps = self.predict(z.slice(s![start..end, ..]), &ts[..end - start], total_steps)?;
            out.slice_mut(s![start..end, ..]).assign(&eps);
            start = end;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    Ddpm,
    Ddim,
}

impl std::str::FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpm" => Ok(Self::Ddpm),
            "ddim" => Ok(Self::Ddim),
            other => Err(Error::InvalidArgument(format!("unknown sampler `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub sampler: Sampler,
    pub n_steps: usize,
    pub n_samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub keep_trajectory: bool,
}

impl SampleConfig {
    pub fn ddim(n_steps: usize, n_samples: usize, seed: u64) -> Self {
        Self {
            sampler: Sampler::Ddim,
            n_steps,
            n_samples,
            seed,
            keep_trajectory: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub samples: Array2<f64>,
    /// `(t, z_t)` before every model evaluation, when requested.
    pub trajectory: Option<Vec<(usize, Array2<f64>)>>,
}

/// Uniform-stride grid `{k * (T / n_steps)}`, largest timestep first.
pub fn timestep_grid(total_steps: usize, n_steps: usize) -> Result<Vec<usize>> {
    if n_steps < 1 || n_steps > total_steps {
        return Err(Error::InvalidArgument(format!(
            "n_steps must lie in [1, {total_steps}], got {n_steps}"
        )));
    }
    let stride = total_steps / n_steps;
    Ok((0..n_steps).rev().map(|k| k * stride).collect())
}

fn standard_normal(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

/// Generate `n_samples` points by running the reverse process from pure noise.
///
/// Every grid timestep costs one model evaluation; the final evaluation at
/// `t = 0` maps `z_0` to the clean-data estimate.
pub fn sample<D: Denoiser + ?Sized>(model: &D, sched: &NoiseSchedule, cfg: &SampleConfig) -> Result<SampleOutput> {
    let total = sched.total_steps();
    let grid = timestep_grid(total, cfg.n_steps)?;
    let dim = model.input_dim();
    let mut rng = stream(cfg.seed, Stream::Sampling);
    let mut z = standard_normal(cfg.n_samples, dim, &mut rng);
    let mut trajectory = cfg.keep_trajectory.then(Vec::new);

    for (k, &t) in grid.iter().enumerate() {
        if let Some(tr) = trajectory.as_mut() {
            tr.push((t, z.clone()));
        }
        let eps = model.predict_eps(z.view(), t, total)?;
        if eps.dim() != z.dim() {
            return Err(Error::shape("denoiser output", format!("{:?}", z.dim()), format!("{:?}", eps.dim())));
        }
        z = match grid.get(k + 1) {
            None => predict_x0(sched, z.view(), &vec![t; z.nrows()], eps.view())?,
            Some(&t_prev) => match cfg.sampler {
                Sampler::Ddim => ddim_step(sched, z.view(), t, t_prev, eps.view())?,
                Sampler::Ddpm => {
                    let noise = standard_normal(z.nrows(), dim, &mut rng);
                    if t_prev + 1 == t {
                        ddpm_step(sched, z.view(), t, eps.view(), noise.view())?
                    } else {
                        ddpm_strided_step(sched, z.view(), t, t_prev, eps.view(), noise.view())
                    }
                }
            },
        };
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("sampling at t={t}"),
                iteration: Some(k),
            });
        }
    }
    Ok(SampleOutput { samples: z, trajectory })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ScheduleKind;
    use crate::numerics::Architecture;

    #[test]
    fn grid_shapes() {
        assert_eq!(timestep_grid(1000, 4).unwrap(), vec![750, 500, 250, 0]);
        let g = timestep_grid(1000, 50).unwrap();
        assert_eq!((g[0], g[49], g.len()), (980, 0, 50));
        assert_eq!(timestep_grid(10, 10).unwrap(), (0..10).rev().collect::<Vec<_>>());
        assert!(timestep_grid(10, 0).is_err());
        assert!(timestep_grid(10, 11).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let sched = NoiseSchedule::new(ScheduleKind::Linear, 100).unwrap();
        let net = DenoiserNet::new(Architecture::new(2, 4, vec![8, 8]), &mut stream(1, Stream::Init)).unwrap();
        for sampler in [Sampler::Ddim, Sampler::Ddpm] {
            let cfg = SampleConfig {
                sampler,
                n_steps: 20,
                n_samples: 64,
                seed: 5,
                keep_trajectory: true,
            };
            let a = sample(&net, &sched, &cfg).unwrap();
            let b = sample(&net, &sched, &cfg).unwrap();
            assert_eq!(a.samples, b.samples);
            assert_eq!(a.trajectory.unwrap().len(), 20);
        }
    }

    #[test]
    fn chunked_inference_matches_single_pass() {
        let net = DenoiserNet::new(Architecture::new(2, 4, vec![8]), &mut stream(2, Stream::Init)).unwrap();
        let z = standard_normal(INFERENCE_CHUNK * 2 + 7, 2, &mut stream(3, Stream::Noise));
        let chunked = net.predict_eps(z.view(), 17, 100).unwrap();
        let whole = net.predict(z.view(), &vec![17; z.nrows()], 100).unwrap();
        assert_eq!(chunked, whole);
    }

    #[test]
    fn rejects_bad_step_counts() {
        let sched = NoiseSchedule::new(ScheduleKind::Linear, 100).unwrap();
        let net = DenoiserNet::zeros(Architecture::new(2, 4, vec![8])).unwrap();
        assert!(sample(&net, &sched, &SampleConfig::ddim(0, 4, 0)).is_err());
        assert!(sample(&net, &sched, &SampleConfig::ddim(101, 4, 0)).is_err());
    }
}
