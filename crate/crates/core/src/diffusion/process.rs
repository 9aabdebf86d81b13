//! Forward noising and single reverse steps.

use ndarray::{Array2, ArrayView2, Zip};

use super::NoiseSchedule;
use crate::error::{Error, Result};

fn check_rows(context: &'static str, a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(context, format!("{:?}", a.dim()), format!("{:?}", b.dim())));
    }
    Ok(())
}

fn check_timesteps(sched: &NoiseSchedule, rows: usize, t: &[usize]) -> Result<()> {
    if t.len() != rows {
        return Err(Error::shape("timestep batch", rows, t.len()));
    }
    t.iter().try_for_each(|&ti| sched.check_timestep(ti))
}

/// `z_t = alpha_t * x0 + sigma_t * noise`, row by row.
pub fn q_sample(
    sched: &NoiseSchedule,
    x0: ArrayView2<f64>,
    t: &[usize],
    noise: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_rows("q_sample noise", &x0, &noise)?;
    check_timesteps(sched, x0.nrows(), t)?;
    let mut z = Array2::zeros(x0.raw_dim());
    for (r, &ti) in t.iter().enumerate() {
        let (a, s) = (sched.alpha(ti), sched.sigma(ti));
        Zip::from(z.row_mut(r))
            .and(x0.row(r))
            .and(noise.row(r))
            .for_each(|z, &x, &n| *z = a * x + s * n);
    }
    Ok(z)
}

/// Clean-data estimate `(z_t - sigma_t * eps_hat) / alpha_t`.
pub fn predict_x0(
    sched: &NoiseSchedule,
    z: ArrayView2<f64>,
    t: &[usize],
    eps_hat: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_rows("predict_x0 eps_hat", &z, &eps_hat)?;
    check_timesteps(sched, z.nrows(), t)?;
    let mut x0 = Array2::zeros(z.raw_dim());
    for (r, &ti) in t.iter().enumerate() {
        let (a, s) = (sched.alpha(ti), sched.sigma(ti));
        Zip::from(x0.row_mut(r))
            .and(z.row(r))
            .and(eps_hat.row(r))
            .for_each(|x, &z, &e| *x = (z - s * e) / a);
    }
    Ok(x0)
}

/// Deterministic (eta = 0) DDIM transition from `t` to `t_prev < t`.
pub fn ddim_step(
    sched: &NoiseSchedule,
    z: ArrayView2<f64>,
    t: usize,
    t_prev: usize,
    eps_hat: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    if t_prev >= t {
        return Err(Error::InvalidArgument(format!(
            "ddim_step needs t_prev < t, got t_prev={t_prev}, t={t}"
        )));
    }
    sched.check_timestep(t)?;
    check_rows("ddim_step eps_hat", &z, &eps_hat)?;
    Ok(ddim_transition(sched, z, t, t_prev, eps_hat))
}

pub(crate) fn ddim_transition(
    sched: &NoiseSchedule,
    z: ArrayView2<f64>,
    t: usize,
    t_prev: usize,
    eps_hat: ArrayView2<f64>,
) -> Array2<f64> {
    if t_prev == t {
        return z.to_owned();
    }
    let (a, s) = (sched.alpha(t), sched.sigma(t));
    let (a_prev, s_prev) = (sched.alpha(t_prev), sched.sigma(t_prev));
    let mut out = Array2::zeros(z.raw_dim());
    Zip::from(&mut out).and(&z).and(&eps_hat).for_each(|o, &z, &e| {
        let x0 = (z - s * e) / a;
        *o = a_prev * x0 + s_prev * e;
    });
    out
}

/// Ancestral DDPM step from `t` to `t - 1`.
///
/// `noise` is scaled by the posterior standard deviation; pass zeros for the
/// posterior mean.
pub fn ddpm_step(
    sched: &NoiseSchedule,
    z: ArrayView2<f64>,
    t: usize,
    eps_hat: ArrayView2<f64>,
    noise: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    if t == 0 {
        return Err(Error::InvalidArgument("ddpm_step is undefined at t = 0".into()));
    }
    sched.check_timestep(t)?;
    check_rows("ddpm_step eps_hat", &z, &eps_hat)?;
    check_rows("ddpm_step noise", &z, &noise)?;
    let beta = sched.beta(t);
    let posterior_var = beta * (1.0 - sched.alpha_bar(t - 1)) / (1.0 - sched.alpha_bar(t));
    Ok(ancestral(z, eps_hat, noise, beta, sched.sigma(t), posterior_var))
}

/// Ancestral step across a stride `t -> t_prev`, using the effective
/// `beta = 1 - alpha_bar_t / alpha_bar_prev`. Equals [`ddpm_step`] in
/// distribution when `t_prev = t - 1`.
pub(crate) fn ddpm_strided_step(
    sched: &NoiseSchedule,
    z: ArrayView2<f64>,
    t: usize,
    t_prev: usize,
    eps_hat: ArrayView2<f64>,
    noise: ArrayView2<f64>,
) -> Array2<f64> {
    let (ab, ab_prev) = (sched.alpha_bar(t), sched.alpha_bar(t_prev));
    let beta = 1.0 - ab / ab_prev;
    let posterior_var = beta * (1.0 - ab_prev) / (1.0 - ab);
    ancestral(z, eps_hat, noise, beta, sched.sigma(t), posterior_var)
}

fn ancestral(
    z: ArrayView2<f64>,
    eps_hat: ArrayView2<f64>,
    noise: ArrayView2<f64>,
    beta: f64,
    sigma: f64,
    posterior_var: f64,
) -> Array2<f64> {
    let scale = 1.0 / (1.0 - beta).sqrt();
    let coef = beta / sigma;
    let std = posterior_var.sqrt();
    let mut out = Array2::zeros(z.raw_dim());
    Zip::from(&mut out)
        .and(&z)
        .and(&eps_hat)
        .and(&noise)
        .for_each(|o, &z, &e, &n| *o = scale * (z - coef * e) + std * n);
    out
}
