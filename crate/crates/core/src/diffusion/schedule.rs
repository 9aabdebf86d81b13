use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Linear,
    Cosine,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::InvalidArgument(format!("unknown schedule kind `{other}`"))),
        }
    }
}

const LINEAR_BETA_START: f64 = 1e-4;
const LINEAR_BETA_END: f64 = 0.02;
const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

/// Variance-preserving noise schedule over discrete timesteps `0..T`.
///
/// `alpha[t]^2 + sigma[t]^2 == 1` for every `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, total_steps: usize) -> Result<Self> {
        if total_steps < 2 {
            return Err(Error::InvalidArgument(format!(
                "a schedule needs at least 2 timesteps, got {total_steps}"
            )));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Linear => {
                let span = (total_steps - 1) as f64;
                (0..total_steps)
                    .map(|t| LINEAR_BETA_START + (LINEAR_BETA_END - LINEAR_BETA_START) * t as f64 / span)
                    .collect()
            }
            ScheduleKind::Cosine => {
                let f = |t: usize| {
                    let x = (t as f64 / total_steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                    (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
                };
                let f0 = f(0);
                (0..total_steps)
                    .map(|t| (1.0 - (f(t + 1) / f0) / (f(t) / f0)).min(MAX_BETA))
                    .collect()
            }
        };
        let mut alpha_bars = Vec::with_capacity(total_steps);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        let alpha = alpha_bars.iter().map(|a| a.sqrt()).collect();
        let sigma = alpha_bars.iter().map(|a| (1.0 - a).sqrt()).collect();
        Ok(Self {
            kind,
            betas,
            alpha_bars,
            alpha,
            sigma,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn total_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub(crate) fn check_timestep(&self, t: usize) -> Result<()> {
        if t >= self.total_steps() {
            return Err(Error::InvalidArgument(format!(
                "timestep {t} out of range [0, {})",
                self.total_steps()
            )));
        }
        Ok(())
    }

    /// Log signal-to-noise ratio `log(alpha_t^2 / sigma_t^2)`.
    pub fn snr_lambda(&self, t: usize) -> Result<f64> {
        self.check_timestep(t)?;
        Ok(log_snr(self.alpha_bars[t], 1.0 - self.alpha_bars[t]))
    }
}

fn log_snr(signal: f64, noise: f64) -> f64 {
    (signal / noise).ln()
}
