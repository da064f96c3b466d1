//! Noise schedules, the closed-form forward corruption, and the sinusoidal
//! timestep encoding. Schedule arrays are `f64`; timesteps are 1-based.

use crate::error::{Error, Result};
use crate::nn::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::Config(format!("unknown schedule kind {other:?}"))),
        }
    }
}

/// β_t, α_t, ᾱ_t and the posterior variance β̃_t over T steps, with the
/// ᾱ_0 ≡ 1 convention (so β̃_1 = 0).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub posterior_variance: Vec<f64>,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl NoiseSchedule {
    pub fn t_count(&self) -> usize {
        self.beta.len()
    }

    /// ᾱ_t for 1-based t; ᾱ_0 ≡ 1.
    pub fn alpha_bar_at(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t_count = self.t_count();
        if t_count == 0 {
            return Err(Error::Config("schedule has no steps".into()));
        }
        let mut prev = 1.0f64;
        for t in 0..t_count {
            let b = self.beta[t];
            if !(0.0..1.0).contains(&b) || b <= 0.0 {
                return Err(Error::Config(format!("beta[{t}] = {b} outside (0,1)")));
            }
            if !self.alpha_bar[t].is_finite() || self.alpha_bar[t] >= prev {
                return Err(Error::Config(format!("alpha_bar not strictly decreasing at {t}")));
            }
            let pv = self.posterior_variance[t];
            if !(0.0..=b).contains(&pv) {
                return Err(Error::Config(format!("posterior variance {pv} outside [0, beta] at {t}")));
            }
            prev = self.alpha_bar[t];
        }
        let last = self.alpha_bar[t_count - 1];
        if !(0.0 < last && last < 1.0) {
            return Err(Error::Config(format!("alpha_bar_T = {last} outside (0,1)")));
        }
        Ok(())
    }
}

fn from_betas(kind: ScheduleKind, beta: Vec<f64>, beta_start: f64, beta_end: f64) -> NoiseSchedule {
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(beta.len());
    let mut prod = 1.0;
    for a in &alpha {
        prod *= a;
        alpha_bar.push(prod);
    }
    let mut posterior_variance = Vec::with_capacity(beta.len());
    for t in 0..beta.len() {
        let ab_prev = if t == 0 { 1.0 } else { alpha_bar[t - 1] };
        posterior_variance.push(beta[t] * (1.0 - ab_prev) / (1.0 - alpha_bar[t]));
    }
    NoiseSchedule { kind, beta, alpha, alpha_bar, posterior_variance, beta_start, beta_end }
}

/// Build a schedule. Linear spaces β in `[beta_start, beta_end]`; cosine uses
/// the squared-cosine ᾱ profile with β clipped at 0.999 (β bounds unused).
pub fn make_schedule(
    kind: ScheduleKind,
    t_count: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<NoiseSchedule> {
    if t_count < 1 {
        return Err(Error::Config("schedule needs T >= 1".into()));
    }
    let schedule = match kind {
        ScheduleKind::Linear => {
            if !(0.0 < beta_start && beta_start < 1.0 && 0.0 < beta_end && beta_end < 1.0) {
                return Err(Error::Config(format!(
                    "beta bounds ({beta_start}, {beta_end}) outside (0,1)"
                )));
            }
            let beta: Vec<f64> = if t_count == 1 {
                vec![beta_start]
            } else {
                (0..t_count)
                    .map(|i| {
                        beta_start + (beta_end - beta_start) * i as f64 / (t_count - 1) as f64
                    })
                    .collect()
            };
            from_betas(kind, beta, beta_start, beta_end)
        }
        ScheduleKind::Cosine => {
            let s = 0.008;
            let f = |t: f64| {
                let x = (t / t_count as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2;
                x.cos().powi(2)
            };
            let f0 = f(0.0);
            let mut beta = Vec::with_capacity(t_count);
            let mut prev = 1.0;
            for t in 1..=t_count {
                let ab = f(t as f64) / f0;
                let b = (1.0 - ab / prev).clamp(1e-8, 0.999);
                beta.push(b);
                prev *= 1.0 - b;
            }
            from_betas(kind, beta, beta_start, beta_end)
        }
    };
    schedule.validate()?;
    Ok(schedule)
}

/// Closed-form forward corruption: x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε, 1 ≤ t ≤ T.
pub fn q_sample<T: Real>(
    x0: &[T],
    t: usize,
    eps: &[T],
    schedule: &NoiseSchedule,
) -> Result<Vec<T>> {
    if t < 1 || t > schedule.t_count() {
        return Err(Error::Input(format!(
            "timestep {t} outside 1..={}",
            schedule.t_count()
        )));
    }
    if x0.len() != eps.len() {
        return Err(Error::Contract("x0 and eps shapes differ".into()));
    }
    let ab = schedule.alpha_bar[t - 1];
    let c0 = T::from_f64(ab.sqrt());
    let c1 = T::from_f64((1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps.iter()).map(|(&x, &e)| c0 * x + c1 * e).collect())
}

/// Sinusoidal timestep encoding: half sines, half cosines, with geometric
/// wavelengths spanning 1 to 10^4.
pub fn timestep_embedding(t: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Config(format!("timestep embedding dim {dim} must be even")));
    }
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let exponent = if half > 1 { i as f64 / (half - 1) as f64 } else { 0.0 };
        let freq = 1.0 / 10000f64.powf(exponent);
        out[i] = (t as f64 * freq).sin();
        out[half + i] = (t as f64 * freq).cos();
    }
    Ok(out)
}
