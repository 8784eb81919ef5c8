//! Generalized local likelihood ratio (GLLR) CUSUM on the baseline-subtracted power signal.
//!
//! With `x_t = P(t) - P_nominal` and the last `p` samples as window, the local
//! score vector is
//!
//! ```text
//! z_t = [ x_t * x_{t-p..t-1} / s^2,  (x_t^2 / s^2 - 1) / sqrt(2),  x_t / s ]
//! l_t = b * |z_t| - b^2 / 2
//! g_t = max(g_{t-1} + l_t, 0),   alarm when g_t >= h
//! ```

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Number of post-alarm samples averaged into the new nominal power.
pub const REBASELINE_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GllrParams {
    /// Drift parameter.
    pub b: f64,
    /// Decision threshold.
    pub h: f64,
    /// Measurement noise standard deviation of the power signal, W.
    #[serde(rename = "sigma_nu_w")]
    pub sigma_nu: f64,
    /// Window (AR) order.
    pub p: usize,
    /// Target false-alarm period, s.
    #[serde(rename = "gamma_s")]
    pub gamma: f64,
}

impl GllrParams {
    /// Default drift for a given window order; see [`default_drift`].
    pub fn with_defaults(sigma_nu: f64, h: f64) -> Self {
        Self {
            b: default_drift(5),
            h,
            sigma_nu,
            p: 5,
            gamma: 20.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [
            ("b", self.b),
            ("sigma_nu", self.sigma_nu),
            ("gamma", self.gamma),
        ] {
            ensure_finite(name, x)?;
            if x <= 0.0 {
                return Err(Error::InvalidInput(format!("{name} must be > 0, got {x}")));
            }
        }
        ensure_finite("h", self.h)?;
        if self.h < 0.0 {
            return Err(Error::InvalidInput(format!(
                "h must be >= 0, got {}",
                self.h
            )));
        }
        if self.p == 0 {
            return Err(Error::InvalidInput("window order p must be >= 1".into()));
        }
        Ok(())
    }
}

/// Default drift `b = 2 * sqrt(p + 2) + 1`.
///
/// Under the no-change hypothesis every entry of the score vector has unit
/// variance, so `E|z|` is close to `sqrt(p + 2)`. Any `b` below twice that
/// value gives the increment a positive mean on pure noise and the statistic
/// degenerates into a clock; this choice keeps the noise drift negative.
pub fn default_drift(p: usize) -> f64 {
    2.0 * ((p + 2) as f64).sqrt() + 1.0
}

/// Baseline-subtracted power.
#[inline]
pub fn postprocess(p_measured: f64, nominal: f64) -> f64 {
    p_measured - nominal
}

/// Local score vector for the current sample and the window (oldest first).
pub fn score_vector(p_tilde_now: f64, window: &[f64], sigma_nu: f64) -> Result<Vec<f64>> {
    if !(sigma_nu > 0.0) {
        return Err(Error::InvalidInput(format!(
            "sigma_nu must be > 0, got {sigma_nu}"
        )));
    }
    let var = sigma_nu * sigma_nu;
    let mut z: Vec<f64> = window.iter().map(|&w| p_tilde_now * w / var).collect();
    z.push((p_tilde_now * p_tilde_now / var - 1.0) / std::f64::consts::SQRT_2);
    z.push(p_tilde_now / sigma_nu);
    Ok(z)
}

/// Second-order local GLLR increment `b|z| - b^2/2`.
pub fn gllr_increment(p_tilde_now: f64, window: &[f64], params: &GllrParams) -> Result<f64> {
    if window.len() != params.p {
        return Err(Error::ShapeMismatch {
            expected: params.p,
            got: window.len(),
        });
    }
    let z = score_vector(p_tilde_now, window, params.sigma_nu)?;
    let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(params.b * norm - 0.5 * params.b * params.b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GllrState {
    pub g: f64,
    /// Last `p` post-processed samples, oldest first.
    pub window: VecDeque<f64>,
    pub nominal_power: f64,
    /// Sample index at which this detection cycle started.
    pub t_started: u64,
    /// Samples consumed since start of the cycle.
    pub samples: u64,
}

impl GllrState {
    pub fn new(nominal_power: f64) -> Self {
        Self {
            g: 0.0,
            window: VecDeque::new(),
            nominal_power,
            t_started: 0,
            samples: 0,
        }
    }
}

/// One detector update. The first `p` samples of a cycle only fill the window.
pub fn gllr_step(state: &mut GllrState, p_measured: f64, params: &GllrParams) -> Result<bool> {
    let x = postprocess(p_measured, state.nominal_power);
    state.samples += 1;
    if state.window.len() < params.p {
        state.window.push_back(x);
        return Ok(false);
    }
    let window = state.window.make_contiguous();
    let l = gllr_increment(x, window, params)?;
    state.g = (state.g + l).max(0.0);
    state.window.pop_front();
    state.window.push_back(x);
    Ok(state.g >= params.h)
}

/// Restart after an alarm: new nominal power is the mean of the first
/// [`REBASELINE_SAMPLES`] post-alarm measurements.
pub fn reset_after_alarm(
    state: &mut GllrState,
    recent_measurements: &[f64],
    t_now: u64,
) -> Result<()> {
    if recent_measurements.len() < REBASELINE_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: REBASELINE_SAMPLES,
            got: recent_measurements.len(),
        });
    }
    let used = &recent_measurements[..REBASELINE_SAMPLES];
    state.nominal_power = used.iter().sum::<f64>() / REBASELINE_SAMPLES as f64;
    state.g = 0.0;
    state.window.clear();
    state.t_started = t_now;
    state.samples = 0;
    Ok(())
}

/// Owned detector bundling parameters and state.
#[derive(Debug, Clone)]
pub struct GllrDetector {
    pub params: GllrParams,
    pub state: GllrState,
}

impl GllrDetector {
    pub fn new(params: GllrParams, nominal_power: f64) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            state: GllrState::new(nominal_power),
        })
    }

    pub fn step(&mut self, p_measured: f64) -> Result<bool> {
        gllr_step(&mut self.state, p_measured, &self.params)
    }

    pub fn reset_after_alarm(&mut self, recent_measurements: &[f64], t_now: u64) -> Result<()> {
        reset_after_alarm(&mut self.state, recent_measurements, t_now)
    }

    pub fn statistic(&self) -> f64 {
        self.state.g
    }
}
