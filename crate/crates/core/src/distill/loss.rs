use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};

/// Per-timestep weight of the clean-data reconstruction error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Plain `|x_hat - x|^2`.
    ConstantX,
    /// `exp(lambda_t) |x_hat - x|^2`, which equals `|eps_hat - eps|^2`.
    #[default]
    Snr,
}

impl std::str::FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant_x" | "constant-x" => Ok(Self::ConstantX),
            "snr" => Ok(Self::Snr),
            other => Err(Error::InvalidArgument(format!("unknown weighting `{other}`"))),
        }
    }
}

impl Weighting {
    /// Factor turning `|eps_hat - eps|^2` into the weighted x-error at `t`.
    ///
    /// `x_hat - x = -(sigma / alpha) (eps_hat - eps)`.
    pub fn eps_factor(self, sched: &NoiseSchedule, t: usize) -> f64 {
        match self {
            Weighting::Snr => 1.0,
            Weighting::ConstantX => {
                let ratio = sched.sigma(t) / sched.alpha(t);
                ratio * ratio
            }
        }
    }
}

/// Weighted reconstruction loss, summed over coordinates and averaged over the
/// batch, with its gradient with respect to `eps_hat`.
pub fn diffusion_loss(
    sched: &NoiseSchedule,
    eps_hat: ArrayView2<f64>,
    noise: ArrayView2<f64>,
    t: &[usize],
    weighting: Weighting,
) -> Result<(f64, Array2<f64>)> {
    if eps_hat.dim() != noise.dim() {
        return Err(Error::shape(
            "diffusion_loss noise",
            format!("{:?}", eps_hat.dim()),
            format!("{:?}", noise.dim()),
        ));
    }
    if t.len() != eps_hat.nrows() || t.is_empty() {
        return Err(Error::shape("diffusion_loss timesteps", eps_hat.nrows(), t.len()));
    }
    let b = t.len() as f64;
    let mut grad = &eps_hat - &noise;
    let mut loss = 0.0;
    for (mut row, &ti) in grad.rows_mut().into_iter().zip(t) {
        sched.check_timestep(ti)?;
        let w = weighting.eps_factor(sched, ti);
        loss += w * row.dot(&row);
        row *= 2.0 * w / b;
    }
    Ok((loss / b, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{predict_x0, q_sample, ScheduleKind};
    use crate::rng::{stream, Stream};
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rows: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream(seed, Stream::Noise);
        Array2::from_shape_fn((rows, 2), |_| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let sched = NoiseSchedule::new(ScheduleKind::Linear, 1000).unwrap();
        let eps = normal(8, 1);
        for w in [Weighting::Snr, Weighting::ConstantX] {
            let (loss, grad) = diffusion_loss(&sched, eps.view(), eps.view(), &[5; 8], w).unwrap();
            assert_eq!(loss, 0.0);
            assert!(grad.iter().all(|g| *g == 0.0));
        }
    }

    #[test]
    fn snr_weighting_is_eps_mse() {
        let sched = NoiseSchedule::new(ScheduleKind::Cosine, 1000).unwrap();
        let (a, b) = (normal(16, 2), normal(16, 3));
        let t: Vec<usize> = (0..16).map(|i| i * 60).collect();
        let (loss, _) = diffusion_loss(&sched, a.view(), b.view(), &t, Weighting::Snr).unwrap();
        let mse = (&a - &b).iter().map(|v| v * v).sum::<f64>() / 16.0;
        assert!((loss - mse).abs() < 1e-9);
    }

    #[test]
    fn constant_x_matches_reconstruction_error() {
        let sched = NoiseSchedule::new(ScheduleKind::Linear, 1000).unwrap();
        let x0 = normal(6, 4);
        let eps = normal(6, 5);
        let eps_hat = normal(6, 6);
        let t = [0, 10, 200, 500, 800, 999];
        let z = q_sample(&sched, x0.view(), &t, eps.view()).unwrap();
        let x_hat = predict_x0(&sched, z.view(), &t, eps_hat.view()).unwrap();
        let oracle = (&x_hat - &x0).iter().map(|v| v * v).sum::<f64>() / 6.0;
        let (loss, _) = diffusion_loss(&sched, eps_hat.view(), eps.view(), &t, Weighting::ConstantX).unwrap();
        assert!((loss - oracle).abs() < 1e-9 * oracle.max(1.0), "{loss} vs {oracle}");
    }

    #[test]
    fn constant_x_amplifies_at_large_t() {
        let sched = NoiseSchedule::new(ScheduleKind::Linear, 1000).unwrap();
        let (a, b) = (normal(32, 7), normal(32, 8));
        let t = vec![900; 32];
        let (x, _) = diffusion_loss(&sched, a.view(), b.view(), &t, Weighting::ConstantX).unwrap();
        let (s, _) = diffusion_loss(&sched, a.view(), b.view(), &t, Weighting::Snr).unwrap();
        assert!(x > s);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let sched = NoiseSchedule::new(ScheduleKind::Linear, 100).unwrap();
        let (a, b) = (normal(4, 9), normal(4, 10));
        let t = [3, 40, 70, 99];
        for w in [Weighting::Snr, Weighting::ConstantX] {
            let (_, g) = diffusion_loss(&sched, a.view(), b.view(), &t, w).unwrap();
            let h = 1e-6;
            let (mut up, mut dn) = (a.clone(), a.clone());
            up[[2, 1]] += h;
            dn[[2, 1]] -= h;
            let fd = (diffusion_loss(&sched, up.view(), b.view(), &t, w).unwrap().0
                - diffusion_loss(&sched, dn.view(), b.view(), &t, w).unwrap().0)
                / (2.0 * h);
            assert!((fd - g[[2, 1]]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn unknown_weighting_is_rejected() {
        assert!("sigmoid".parse::<Weighting>().is_err());
    }
}
