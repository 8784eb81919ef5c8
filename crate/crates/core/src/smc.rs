//! Sequential Monte Carlo estimate of the reference voltage.
//!
//! State transition (incremental-conductance drift with adaptive step and an
//! optional refinement input) and measurement model:
//!
//! ```text
//! V(t+1) = V(t) + m(t) * dP/dV + u(t) + w(t),   w ~ N(0, sigma_w^2)
//! m(t)   = m0 * (V(t) - V_egmpp)^2
//! V_meas(t) = V(t) + v(t),                      v ~ N(0, sigma_v^2)
//! ```
//!
//! The transition density is the proposal, so the importance weight reduces to
//! the measurement likelihood.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmcParams {
    pub n_particles: usize,
    /// Step-size coefficient, 1/(V·A) so that `m0 * dV^2 * dP/dV` is in volts.
    pub m0: f64,
    #[serde(rename = "sigma_w_v")]
    pub sigma_w: f64,
    #[serde(rename = "sigma_v_v")]
    pub sigma_v: f64,
    #[serde(rename = "v0_v")]
    pub v0: f64,
    #[serde(rename = "sigma0_v")]
    pub sigma0: f64,
    /// Resample when the effective sample size drops below this.
    pub n_thr: f64,
    /// Optional bound on the per-step drift `|m(t) dP/dV|`, V.
    #[serde(
        rename = "max_drift_v",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub max_drift: Option<f64>,
    /// Optional bounds on the adaptive step `m(t)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_max: Option<f64>,
    /// Optional floor on the drift magnitude; smaller drifts are raised to it
    /// in the direction of the slope.
    #[serde(
        rename = "min_drift_v",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub min_drift: Option<f64>,
}

impl SmcParams {
    /// N = 500, m0 = 1e-2, n_thr = N/2.
    pub fn new(sigma_w: f64, sigma_v: f64, v0: f64, sigma0: f64) -> Self {
        Self {
            n_particles: 500,
            m0: 1e-2,
            sigma_w,
            sigma_v,
            v0,
            sigma0,
            n_thr: 250.0,
            m_min: None,
            m_max: None,
            max_drift: None,
            min_drift: None,
        }
    }

    /// Drift limits used by the closed-loop tracker: at least 0.05 V and at
    /// most 5 V per step, adaptive step capped at 0.2 V²/W.
    pub fn with_tracking_limits(self) -> Self {
        Self {
            min_drift: Some(0.05),
            max_drift: Some(5.0),
            m_max: Some(0.2),
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::InvalidInput("n_particles must be >= 2".into()));
        }
        for (name, x) in [("sigma_w", self.sigma_w), ("sigma_v", self.sigma_v)] {
            ensure_finite(name, x)?;
            if x <= 0.0 {
                return Err(Error::InvalidInput(format!("{name} must be > 0")));
            }
        }
        ensure_finite("m0", self.m0)?;
        ensure_finite("v0", self.v0)?;
        ensure_finite("sigma0", self.sigma0)?;
        if self.sigma0 < 0.0 {
            return Err(Error::InvalidInput("sigma0 must be >= 0".into()));
        }
        if !(self.n_thr >= 1.0 && self.n_thr <= self.n_particles as f64) {
            return Err(Error::InvalidInput("n_thr must lie in [1, N]".into()));
        }
        if let Some(d) = self.max_drift {
            if !(d > 0.0) {
                return Err(Error::InvalidInput("max_drift must be > 0".into()));
            }
        }
        let m_lo = self.m_min.unwrap_or(0.0);
        if !(m_lo >= 0.0) || self.m_max.is_some_and(|hi| !(hi >= m_lo)) {
            return Err(Error::InvalidInput(
                "adaptive step bounds need 0 <= m_min <= m_max".into(),
            ));
        }
        if let Some(d) = self.min_drift {
            if !(d >= 0.0) || self.max_drift.is_some_and(|m| d > m) {
                return Err(Error::InvalidInput(
                    "min_drift must lie in [0, max_drift]".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub particles: Vec<f64>,
    /// Normalized weights.
    pub weights: Vec<f64>,
}

impl ParticleSet {
    pub fn new(particles: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if particles.len() != weights.len() || particles.is_empty() {
            return Err(Error::ShapeMismatch {
                expected: particles.len(),
                got: weights.len(),
            });
        }
        Ok(Self { particles, weights })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TransitionInputs {
    /// Power slope estimate, W/V.
    pub slope_est: f64,
    /// Refinement input, V.
    pub u: f64,
    /// Latest predicted GMPP voltage, V.
    pub v_egmpp: f64,
}

/// Draw the initial cloud from `N(v0, sigma0^2)` with uniform weights.
pub fn init_particles<R: Rng + ?Sized>(params: &SmcParams, rng: &mut R) -> Result<ParticleSet> {
    params.validate()?;
    let n = params.n_particles;
    let particles = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            params.v0 + params.sigma0 * z
        })
        .collect();
    Ok(ParticleSet {
        particles,
        weights: vec![1.0 / n as f64; n],
    })
}

/// Adaptive step `m0 (v - v_egmpp)^2`.
#[inline]
pub fn adaptive_step(v: f64, v_egmpp: f64, m0: f64) -> f64 {
    let d = v - v_egmpp;
    m0 * d * d
}

/// Refinement input: the gap to the predicted GMPP while an alarm is latched, else 0.
#[inline]
pub fn refinement_term(v_egmpp: f64, v_meas: f64, alarm_active: bool) -> f64 {
    if alarm_active {
        v_egmpp - v_meas
    } else {
        0.0
    }
}

/// Bound a step to `[min, max]` in magnitude. A step raised to `min` keeps the
/// sign of `direction` (positive when `direction` is zero).
#[inline]
pub fn shape_step(step: f64, direction: f64, min: Option<f64>, max: Option<f64>) -> f64 {
    let mut s = step;
    if let Some(max) = max {
        s = s.clamp(-max, max);
    }
    if let Some(min) = min {
        if s.abs() < min {
            s = if direction < 0.0 { -min } else { min };
        }
    }
    s
}

/// Adaptive step limited to `[m_min, m_max]` where those are set.
#[inline]
pub fn bounded_step(v: f64, v_egmpp: f64, params: &SmcParams) -> f64 {
    let mut m = adaptive_step(v, v_egmpp, params.m0);
    if let Some(lo) = params.m_min {
        m = m.max(lo);
    }
    if let Some(hi) = params.m_max {
        m = m.min(hi);
    }
    m
}

/// Deterministic part of the transition for one particle.
#[inline]
pub fn transition_mean(v: f64, inputs: &TransitionInputs, params: &SmcParams) -> f64 {
    let drift = bounded_step(v, inputs.v_egmpp, params) * inputs.slope_est;
    v + shape_step(drift, inputs.slope_est, params.min_drift, params.max_drift) + inputs.u
}

/// Sample every particle from the transition density. Weights are unchanged.
pub fn propagate<R: Rng + ?Sized>(
    ps: &mut ParticleSet,
    inputs: &TransitionInputs,
    params: &SmcParams,
    rng: &mut R,
) {
    for v in ps.particles.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = transition_mean(*v, inputs, params) + params.sigma_w * z;
    }
}

/// Outcome of a weight update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightUpdate {
    Ok,
    /// Every likelihood underflowed; weights were reset to uniform.
    Collapsed,
}

/// Multiply by the Gaussian measurement likelihood and renormalize.
pub fn update_weights(ps: &mut ParticleSet, v_measured: f64, params: &SmcParams) -> WeightUpdate {
    let inv_two_var = 1.0 / (2.0 * params.sigma_v * params.sigma_v);
    for (w, &v) in ps.weights.iter_mut().zip(&ps.particles) {
        let d = v_measured - v;
        *w *= (-d * d * inv_two_var).exp();
    }
    let total = ps.weight_sum();
    if !(total > 0.0) || !total.is_finite() {
        let n = ps.len() as f64;
        ps.weights.iter_mut().for_each(|w| *w = 1.0 / n);
        return WeightUpdate::Collapsed;
    }
    ps.weights.iter_mut().for_each(|w| *w /= total);
    WeightUpdate::Ok
}

/// Weighted mean of the cloud.
pub fn estimate(ps: &ParticleSet) -> f64 {
    ps.particles
        .iter()
        .zip(&ps.weights)
        .map(|(v, w)| v * w)
        .sum()
}

/// `1 / sum(w^2)`.
pub fn effective_sample_size(ps: &ParticleSet) -> f64 {
    1.0 / ps.weights.iter().map(|w| w * w).sum::<f64>()
}

/// Systematic resampling indices: one uniform offset, N evenly spaced pointers.
pub fn systematic_indices<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    let step = 1.0 / n as f64;
    let mut pointer = rng.gen::<f64>() * step;
    let mut cumulative = weights[0];
    let mut j = 0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        while pointer > cumulative && j + 1 < n {
            j += 1;
            cumulative += weights[j];
        }
        out.push(j);
        pointer += step;
    }
    out
}

/// Resample when the effective sample size is below `n_thr`. Returns whether it did.
pub fn resample_if_needed<R: Rng + ?Sized>(
    ps: &mut ParticleSet,
    params: &SmcParams,
    rng: &mut R,
) -> bool {
    if effective_sample_size(ps) >= params.n_thr {
        return false;
    }
    let idx = systematic_indices(&ps.weights, rng);
    let n = ps.len();
    ps.particles = idx.into_iter().map(|j| ps.particles[j]).collect();
    ps.weights = vec![1.0 / n as f64; n];
    true
}

/// Append the cloud as CSV rows `t,j,v,w`; writes the header when `header` is set.
pub fn write_snapshot_csv<W: std::io::Write>(
    out: &mut W,
    t: f64,
    ps: &ParticleSet,
    header: bool,
) -> Result<()> {
    if header {
        writeln!(out, "t,j,v,w")?;
    }
    for (j, (v, w)) in ps.particles.iter().zip(&ps.weights).enumerate() {
        writeln!(out, "{t},{j},{v},{w}")?;
    }
    Ok(())
}
