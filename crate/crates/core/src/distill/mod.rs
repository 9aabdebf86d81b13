//! Diffusion and distillation losses, and the timestep sampler that mixes
//! range-restricted and global training.

mod kd;
mod loss;
mod timestep;

pub use kd::{kd_loss, KdHead, KdMethod, KdOutput, Projector};
pub use loss::{diffusion_loss, Weighting};
pub use timestep::{sample_timestep, sample_timesteps, Branch, TimestepDraw};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::diffusion::{q_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::{DenoiserNet, GradBundle};

/// Loss accounting for one student step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub diffusion_loss: f64,
    pub kd_loss: f64,
    /// `diffusion_loss + lambda_kd * kd_loss`
    pub total: f64,
    pub timesteps: Vec<usize>,
    pub branch: Branch,
}

/// Gradients produced by one student step.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentGrads {
    pub net: GradBundle,
    pub projector: Option<Array2<f64>>,
}

/// Inputs shared by every student loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossSpec<'a> {
    pub sched: &'a NoiseSchedule,
    pub head: &'a KdHead,
    pub lambda_kd: f64,
    pub weighting: Weighting,
}

/// Diffusion loss plus `lambda_kd` times the distillation loss, with one
/// student backward over the combined cotangents.
///
/// The teacher is only evaluated when it can contribute: `teacher` present,
/// method other than `none` and `lambda_kd > 0`.
pub fn o2mkd_student_loss(
    spec: LossSpec<'_>,
    teacher: Option<&DenoiserNet>,
    student: &DenoiserNet,
    x0: ArrayView2<f64>,
    draw: &TimestepDraw,
    noise: ArrayView2<f64>,
) -> Result<(LossTerms, StudentGrads)> {
    if !(spec.lambda_kd >= 0.0 && spec.lambda_kd.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda_kd must be finite and >= 0, got {}", spec.lambda_kd)));
    }
    let t = &draw.timesteps;
    let total_steps = spec.sched.total_steps();
    let z = q_sample(spec.sched, x0, t, noise)?;
    let out = student.forward(z.view(), t, total_steps)?;
    let (diffusion, mut d_eps) = diffusion_loss(spec.sched, out.eps.view(), noise, t, spec.weighting)?;

    let mut kd_value = 0.0;
    let mut d_feature = None;
    let mut d_projector = None;
    let active_teacher = teacher.filter(|_| spec.head.method != KdMethod::None && spec.lambda_kd > 0.0);
    if let Some(teacher) = active_teacher {
        let (t_eps, t_feature) = teacher.predict_with_feature(z.view(), t, total_steps)?;
        let kd = kd_loss(spec.head, t_eps.view(), t_feature.view(), out.eps.view(), out.feature.view())?;
        kd_value = kd.loss;
        if let Some(d) = kd.d_eps {
            d_eps.scaled_add(spec.lambda_kd, &d);
        }
        d_feature = kd.d_feature.map(|d| d * spec.lambda_kd);
        d_projector = kd.d_projector.map(|d| d * spec.lambda_kd);
    }

    let total = diffusion + spec.lambda_kd * kd_value;
    if !total.is_finite() {
        return Err(Error::NonFinite {
            context: format!(
                "student loss (diffusion {diffusion}, kd {kd_value}, branch {})",
                draw.branch.as_str()
            ),
            iteration: None,
        });
    }
    let grads = student.backward(&out.cache, d_eps.view(), d_feature.as_ref().map(|d| d.view()))?;
    Ok((
        LossTerms {
            diffusion_loss: diffusion,
            kd_loss: kd_value,
            total,
            timesteps: t.clone(),
            branch: draw.branch,
        },
        StudentGrads {
            net: grads,
            projector: d_projector,
        },
    ))
}
