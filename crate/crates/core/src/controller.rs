//! Closed-loop MPPT state machine.
//!
//! Each sampling instant the controller commands a voltage, reads back noisy
//! `(v, i)`, runs its change detector, and updates its voltage estimate. Three
//! kinds share the plumbing:
//!
//! * `enhanced`: GLLR detector, particle-filter tracking, network refinement
//!   on alarm (irradiance readings or `(v, i)` probes).
//! * `ic-baseline`: incremental-conductance steps `gain * dP/dV`, no detector.
//! * `ann-ic-baseline`: the same steps, restarted from a network prediction
//!   whenever `|P(t) - P(t-1)| >= h1`.
//!
//! The enhanced tracker commands the predicted mean of the particle cloud,
//! measures there, and then updates the cloud against the measurement.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ann::{generate_probe_voltages, AnnMode, GmppModel};
use crate::detect::{GllrDetector, GllrParams, ThresholdDetector, REBASELINE_SAMPLES};
use crate::error::{ensure_finite, Error, Result};
use crate::pv::{array_current, ArrayTopology, EnvironmentProfile, PvModuleParams};
use crate::smc::{self, ParticleSet, SmcParams, TransitionInputs, WeightUpdate};

/// A rebaseline window is accepted unconditionally after this many samples.
pub const REBASELINE_MAX_SAMPLES: usize = 5 * REBASELINE_SAMPLES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    Enhanced,
    IcBaseline,
    AnnIcBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub kind: ControllerKind,
    #[serde(rename = "f_s_hz")]
    pub f_s: f64,
    pub smc: SmcParams,
    pub gllr: GllrParams,
    /// Which readings feed the network; `None` disables it.
    pub ann_mode: Option<AnnMode>,
    #[serde(rename = "probe_half_width_v")]
    pub probe_half_width: f64,
    pub m_probes: usize,
    /// Current noise std; derived from `sigma_v` and the nameplate ratio when absent.
    #[serde(rename = "sigma_i_a", default)]
    pub sigma_i: Option<f64>,
    /// Slope is reused when consecutive measured voltages differ by less.
    #[serde(rename = "slope_guard_v")]
    pub slope_guard: f64,
    /// Number of recent measurements in the least-squares slope fit; 2 gives the secant.
    #[serde(default = "two")]
    pub slope_window: usize,
    /// When set, a full rebaseline window is accepted only if the means of its
    /// two halves differ by at most this many standard errors; otherwise the
    /// older half is dropped and collection continues.
    #[serde(default)]
    pub rebaseline_trend_sigmas: Option<f64>,
    /// While rebaselining, a reading that departs from the collected mean by
    /// more than this fraction of it is treated as a new alarm.
    #[serde(default)]
    pub rebaseline_jump_fraction: Option<f64>,
    /// Incremental-conductance gain of the baselines, V²/W.
    pub ic_gain: f64,
    #[serde(rename = "ic_min_step_v", default)]
    pub ic_min_step: Option<f64>,
    #[serde(rename = "ic_max_step_v", default)]
    pub ic_max_step: Option<f64>,
    /// Consecutive-difference threshold of `ann-ic-baseline`, W. Written as
    /// `null` when infinite.
    #[serde(rename = "h1_w", default = "infinite", with = "finite_or_null")]
    pub h1: f64,
    /// When false the enhanced controller never raises alarms.
    #[serde(default = "enabled")]
    pub detection: bool,
}

fn enabled() -> bool {
    true
}

fn infinite() -> f64 {
    f64::INFINITY
}

mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

fn two() -> usize {
    2
}

impl ControllerConfig {
    /// Enhanced controller with the default tracking and rebaseline settings.
    pub fn enhanced(smc: SmcParams, gllr: GllrParams, ann_mode: Option<AnnMode>) -> Self {
        Self {
            kind: ControllerKind::Enhanced,
            f_s: 20.0,
            smc,
            gllr,
            ann_mode,
            probe_half_width: 10.0,
            m_probes: 4,
            sigma_i: None,
            slope_guard: 0.02,
            slope_window: 10,
            rebaseline_trend_sigmas: Some(3.0),
            rebaseline_jump_fraction: Some(0.05),
            ic_gain: 0.2,
            ic_min_step: Some(0.05),
            ic_max_step: Some(5.0),
            h1: f64::INFINITY,
            detection: true,
        }
    }

    /// The same settings with a different controller kind.
    pub fn with_kind(&self, kind: ControllerKind) -> Self {
        Self {
            kind,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("f_s", self.f_s)?;
        if self.f_s <= 0.0 {
            return Err(Error::InvalidInput("f_s must be > 0".into()));
        }
        if self.slope_window < 2 {
            return Err(Error::InvalidInput("slope_window must be >= 2".into()));
        }
        if self.m_probes == 0 {
            return Err(Error::InvalidInput("m_probes must be >= 1".into()));
        }
        if !(self.slope_guard >= 0.0) || !(self.probe_half_width >= 0.0) || !(self.ic_gain >= 0.0) {
            return Err(Error::InvalidInput(
                "guards, probe width and gain must be >= 0".into(),
            ));
        }
        if self.h1.is_nan() || self.h1 < 0.0 {
            return Err(Error::InvalidInput("h1 must be >= 0".into()));
        }
        for (name, x) in [
            ("rebaseline_trend_sigmas", self.rebaseline_trend_sigmas),
            ("rebaseline_jump_fraction", self.rebaseline_jump_fraction),
        ] {
            if x.is_some_and(|x| !(x > 0.0)) {
                return Err(Error::InvalidInput(format!("{name} must be > 0")));
            }
        }
        self.smc.validate()?;
        self.gllr.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Tracking,
    /// Next probe index and probe count.
    Probing {
        k: usize,
        m: usize,
    },
    /// Settled samples collected so far and the number required.
    Rebaseline {
        k: usize,
        of: usize,
    },
}

impl Phase {
    pub fn label(&self) -> &'static str {
        match self {
            Phase::Tracking => "tracking",
            Phase::Probing { .. } => "probing",
            Phase::Rebaseline { .. } => "rebaseline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub v: f64,
    pub i: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub v_command: f64,
    pub v_meas: f64,
    pub i_meas: f64,
    pub p_meas: f64,
    pub g: f64,
    pub alarm: bool,
    pub ann_triggered: bool,
    pub v_hat: f64,
    pub v_egmpp: f64,
    /// Refinement input applied in this step's propagation.
    pub u: f64,
    /// Whether an alarm latch was consumed in this step.
    pub latched: bool,
    pub phase: Phase,
    pub weight_collapse: bool,
}

pub const TELEMETRY_HEADER: &str = "t,v_cmd,v_meas,i_meas,p_meas,g,alarm,ann,v_hat,v_egmpp";

impl StepRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.t,
            self.v_command,
            self.v_meas,
            self.i_meas,
            self.p_meas,
            self.g,
            self.alarm as u8,
            self.ann_triggered as u8,
            self.v_hat,
            self.v_egmpp
        )
    }
}

/// The simulated array and its irradiance schedule.
#[derive(Debug, Clone)]
pub struct Plant {
    pub topo: ArrayTopology,
    pub params: PvModuleParams,
    pub env: EnvironmentProfile,
}

impl Plant {
    pub fn v_max(&self) -> f64 {
        self.topo.v_oc_nameplate(&self.params)
    }

    pub fn current(&self, t: f64, v: f64) -> Result<f64> {
        array_current(v, self.env.at(t), &self.topo, &self.params)
    }
}

/// Noisy readback at `v_command`: `v + N(0, sigma_v²)`, `I(v) + N(0, sigma_i²)`, `p = v i`.
pub fn measure<R: rand::Rng + ?Sized>(
    plant: &Plant,
    t: f64,
    v_command: f64,
    sigma_v: f64,
    sigma_i: f64,
    rng: &mut R,
) -> Result<Measurement> {
    let i_true = plant.current(t, v_command)?;
    let zv: f64 = StandardNormal.sample(rng);
    let zi: f64 = StandardNormal.sample(rng);
    let v = v_command + sigma_v * zv;
    let i = i_true + sigma_i * zi;
    Ok(Measurement { v, i, p: v * i })
}

/// Secant slope between consecutive measurements; `prev_slope` when the
/// voltage step is below `guard`.
pub fn slope_estimate(prev: &Measurement, now: &Measurement, prev_slope: f64, guard: f64) -> f64 {
    let dv = now.v - prev.v;
    if dv.abs() < guard || dv == 0.0 {
        prev_slope
    } else {
        (now.p - prev.p) / dv
    }
}

/// Least-squares slope of power on voltage over `history`; `prev_slope` when
/// the measured voltages span less than `guard`. Two points give the secant.
pub fn regression_slope(history: &[Measurement], prev_slope: f64, guard: f64) -> f64 {
    if history.len() < 2 {
        return prev_slope;
    }
    let (lo, hi) = history
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| {
            (lo.min(m.v), hi.max(m.v))
        });
    if hi - lo < guard || hi == lo {
        return prev_slope;
    }
    let n = history.len() as f64;
    let v_mean = history.iter().map(|m| m.v).sum::<f64>() / n;
    let p_mean = history.iter().map(|m| m.p).sum::<f64>() / n;
    let (sxy, sxx) = history.iter().fold((0.0, 0.0), |(sxy, sxx), m| {
        let dv = m.v - v_mean;
        (sxy + dv * (m.p - p_mean), sxx + dv * dv)
    });
    let slope = sxy / sxx;
    if slope.is_finite() {
        slope
    } else {
        prev_slope
    }
}

#[derive(Debug, Clone)]
pub struct ControllerState {
    pub phase: Phase,
    pub v_command: f64,
    pub last_meas: Option<Measurement>,
    /// Measurements feeding the slope fit, oldest first.
    pub slope_history: VecDeque<Measurement>,
    pub last_slope: f64,
    pub v_egmpp_latest: f64,
    pub alarm_latch: bool,
    pub particles: ParticleSet,
    pub v_hat: f64,
    pub gllr: GllrDetector,
    pub threshold: ThresholdDetector,
    rebaseline_buf: Vec<f64>,
    rebaseline_waited: usize,
    rebaseline_pending: bool,
    probe_volts: Vec<f64>,
    probe_readings: Vec<(f64, f64)>,
    /// Measured voltage the refinement input is referenced to.
    u_reference: f64,
    pub ann_calls: u64,
    pub weight_collapses: u64,
}

/// One controller bound to a plant for an episode.
pub struct Controller {
    pub config: ControllerConfig,
    pub model: Option<Arc<GmppModel>>,
    pub state: ControllerState,
    sigma_i: f64,
    v_max: f64,
    step_index: u64,
    rng: ChaCha8Rng,
}

impl Controller {
    pub fn new(
        config: ControllerConfig,
        model: Option<Arc<GmppModel>>,
        plant: &Plant,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let needs_model = match config.kind {
            ControllerKind::Enhanced => config.ann_mode.is_some(),
            ControllerKind::AnnIcBaseline => true,
            ControllerKind::IcBaseline => false,
        };
        if needs_model {
            let m = model
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("controller needs a network".into()))?;
            let mode = config.ann_mode.unwrap_or(m.spec.mode);
            if m.spec.mode != mode {
                return Err(Error::InvalidInput(
                    "network mode does not match controller".into(),
                ));
            }
            if m.spec.groups != plant.topo.group_count() {
                return Err(Error::ShapeMismatch {
                    expected: plant.topo.group_count(),
                    got: m.spec.groups,
                });
            }
        }
        let v_max = plant.v_max();
        let sigma_i = config
            .sigma_i
            .unwrap_or(config.smc.sigma_v * plant.topo.i_sc_nameplate(&plant.params) / v_max);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let particles = smc::init_particles(&config.smc, &mut rng)?;
        let v0 = config.smc.v0.clamp(0.0, v_max);
        let phase = match config.kind {
            ControllerKind::Enhanced => Phase::Rebaseline {
                k: 0,
                of: REBASELINE_SAMPLES,
            },
            _ => Phase::Tracking,
        };
        let state = ControllerState {
            phase,
            v_command: v0,
            last_meas: None,
            slope_history: VecDeque::with_capacity(config.slope_window),
            last_slope: 0.0,
            v_egmpp_latest: v0,
            alarm_latch: false,
            v_hat: smc::estimate(&particles),
            particles,
            gllr: GllrDetector::new(config.gllr, 0.0)?,
            threshold: ThresholdDetector::new(config.h1),
            rebaseline_buf: Vec::with_capacity(REBASELINE_SAMPLES),
            rebaseline_waited: 0,
            rebaseline_pending: false,
            probe_volts: Vec::new(),
            probe_readings: Vec::new(),
            u_reference: v0,
            ann_calls: 0,
            weight_collapses: 0,
        };
        Ok(Self {
            config,
            model,
            state,
            sigma_i,
            v_max,
            step_index: 0,
            rng,
        })
    }

    pub fn sigma_i(&self) -> f64 {
        self.sigma_i
    }

    fn model(&self) -> Result<&GmppModel> {
        self.model
            .as_deref()
            .ok_or_else(|| Error::InvalidInput("no network loaded".into()))
    }

    fn predict_from_irradiance(&mut self, plant: &Plant, t: f64) -> Result<f64> {
        let irr = plant.env.at(t).irradiance.clone();
        let v = self.model()?.predict_irr(&irr)?;
        self.state.ann_calls += 1;
        Ok(v)
    }

    /// Advance one sampling instant.
    pub fn step(&mut self, plant: &Plant) -> Result<StepRecord> {
        let t = self.step_index as f64 / self.config.f_s;
        let rec = match self.config.kind {
            ControllerKind::Enhanced => self.step_enhanced(plant, t)?,
            _ => self.step_ic(plant, t)?,
        };
        self.step_index += 1;
        Ok(rec)
    }

    fn measure_at(&mut self, plant: &Plant, t: f64, v: f64) -> Result<Measurement> {
        measure(
            plant,
            t,
            v,
            self.config.smc.sigma_v,
            self.sigma_i,
            &mut self.rng,
        )
    }

    fn push_slope_sample(&mut self, meas: Measurement) -> f64 {
        let hist = &mut self.state.slope_history;
        if hist.len() == self.config.slope_window {
            hist.pop_front();
        }
        hist.push_back(meas);
        regression_slope(
            hist.make_contiguous(),
            self.state.last_slope,
            self.config.slope_guard,
        )
    }

    fn step_ic(&mut self, plant: &Plant, t: f64) -> Result<StepRecord> {
        let v_cmd = self.state.v_command;
        let meas = self.measure_at(plant, t, v_cmd)?;
        let slope = self.push_slope_sample(meas);
        let mut alarm = false;
        let mut ann = false;
        let mut g = 0.0;
        if self.config.kind == ControllerKind::AnnIcBaseline {
            g = ThresholdDetector::statistic(self.state.threshold.last(), meas.p);
            alarm = self.state.threshold.step(meas.p);
        }
        let next = if alarm {
            ann = true;
            self.state.last_slope = 0.0;
            self.state.slope_history.clear();
            let model = self.model()?;
            let v = match model.spec.mode {
                AnnMode::Irradiance => model.predict_irr(&plant.env.at(t).irradiance)?,
                AnnMode::ViProbes => model.predict_vi(&[(meas.v, meas.i)])?,
            };
            self.state.ann_calls += 1;
            self.state.v_egmpp_latest = v;
            v
        } else {
            self.state.last_slope = slope;
            let step = smc::shape_step(
                self.config.ic_gain * slope,
                slope,
                self.config.ic_min_step,
                self.config.ic_max_step,
            );
            v_cmd + step
        };
        self.state.last_meas = Some(meas);
        self.state.v_hat = meas.v;
        self.state.v_command = clamp_finite(next, self.v_max, v_cmd);
        Ok(StepRecord {
            t,
            v_command: v_cmd,
            v_meas: meas.v,
            i_meas: meas.i,
            p_meas: meas.p,
            g,
            alarm,
            ann_triggered: ann,
            v_hat: meas.v,
            v_egmpp: self.state.v_egmpp_latest,
            u: 0.0,
            latched: false,
            phase: Phase::Tracking,
            weight_collapse: false,
        })
    }

    fn step_enhanced(&mut self, plant: &Plant, t: f64) -> Result<StepRecord> {
        if let Phase::Probing { k, m } = self.state.phase {
            return self.step_probe(plant, t, k, m);
        }
        let phase_at_start = self.state.phase;
        let latched = self.state.alarm_latch;
        let u = smc::refinement_term(self.state.v_egmpp_latest, self.state.u_reference, latched);
        if self.step_index > 0 {
            let inputs = TransitionInputs {
                slope_est: self.state.last_slope,
                u,
                v_egmpp: self.state.v_egmpp_latest,
            };
            smc::propagate(
                &mut self.state.particles,
                &inputs,
                &self.config.smc,
                &mut self.rng,
            );
        }
        self.state.alarm_latch = false;
        let prev_cmd = self.state.v_command;
        let v_cmd = clamp_finite(smc::estimate(&self.state.particles), self.v_max, prev_cmd);
        self.state.v_command = v_cmd;
        let meas = self.measure_at(plant, t, v_cmd)?;
        let slope = self.push_slope_sample(meas);

        let mut alarm = false;
        if self.config.detection {
            match phase_at_start {
                Phase::Tracking if !self.state.rebaseline_pending => {
                    alarm = self.state.gllr.step(meas.p)?
                }
                Phase::Rebaseline { .. } => alarm = self.level_shift_during_rebaseline(meas.p),
                _ => {}
            }
        }

        let collapse = smc::update_weights(&mut self.state.particles, meas.v, &self.config.smc)
            == WeightUpdate::Collapsed;
        if collapse {
            self.state.weight_collapses += 1;
        }
        let v_hat = smc::estimate(&self.state.particles);
        self.state.v_hat = if v_hat.is_finite() { v_hat } else { meas.v };
        smc::resample_if_needed(&mut self.state.particles, &self.config.smc, &mut self.rng);
        self.state.last_slope = slope;
        self.state.last_meas = Some(meas);

        match self.state.phase {
            Phase::Rebaseline { .. } if alarm => {}
            Phase::Rebaseline { of, .. } => {
                self.state.rebaseline_buf.push(meas.p);
                self.state.rebaseline_waited += 1;
                if self.state.rebaseline_buf.len() >= of {
                    if self.window_is_stationary(of)
                        || self.state.rebaseline_waited >= REBASELINE_MAX_SAMPLES
                    {
                        self.state
                            .gllr
                            .reset_after_alarm(&self.state.rebaseline_buf, self.step_index)?;
                        self.state.phase = Phase::Tracking;
                    } else {
                        self.state.rebaseline_buf.drain(..of / 2);
                    }
                }
                if let Phase::Rebaseline { .. } = self.state.phase {
                    self.state.phase = Phase::Rebaseline {
                        k: self.state.rebaseline_buf.len(),
                        of,
                    };
                }
            }
            Phase::Tracking if self.state.rebaseline_pending => {
                self.state.rebaseline_pending = false;
                self.begin_rebaseline();
            }
            _ => {}
        }

        let mut ann = false;
        if alarm {
            self.state.last_slope = 0.0;
            self.state.slope_history.clear();
            self.state.u_reference = meas.v;
            match self.config.ann_mode {
                Some(AnnMode::Irradiance) => {
                    self.state.v_egmpp_latest = self.predict_from_irradiance(plant, t)?;
                    ann = true;
                    self.state.alarm_latch = true;
                    self.begin_rebaseline();
                }
                Some(AnnMode::ViProbes) => {
                    let m = self.model()?.spec.probes_needed();
                    self.state.probe_volts = generate_probe_voltages(
                        meas.v,
                        self.config.probe_half_width,
                        m,
                        self.v_max,
                        &mut self.rng,
                    );
                    self.state.probe_readings.clear();
                    self.state.phase = Phase::Probing { k: 0, m };
                }
                None => self.begin_rebaseline(),
            }
        }

        Ok(StepRecord {
            t,
            v_command: v_cmd,
            v_meas: meas.v,
            i_meas: meas.i,
            p_meas: meas.p,
            g: self.state.gllr.statistic(),
            alarm,
            ann_triggered: ann,
            v_hat: self.state.v_hat,
            v_egmpp: self.state.v_egmpp_latest,
            u,
            latched,
            phase: phase_at_start,
            weight_collapse: collapse,
        })
    }

    fn level_shift_during_rebaseline(&self, p: f64) -> bool {
        let (Some(frac), false) = (
            self.config.rebaseline_jump_fraction,
            self.state.rebaseline_buf.is_empty(),
        ) else {
            return false;
        };
        let buf = &self.state.rebaseline_buf;
        let mean = buf.iter().sum::<f64>() / buf.len() as f64;
        (p - mean).abs() > frac * mean.abs()
    }

    fn window_is_stationary(&self, of: usize) -> bool {
        let Some(c) = self.config.rebaseline_trend_sigmas else {
            return true;
        };
        let half = of / 2;
        let buf = &self.state.rebaseline_buf[..of];
        let m1 = buf[..half].iter().sum::<f64>() / half as f64;
        let m2 = buf[half..].iter().sum::<f64>() / (of - half) as f64;
        let se = self.config.gllr.sigma_nu * (1.0 / half as f64 + 1.0 / (of - half) as f64).sqrt();
        (m2 - m1).abs() <= c * se
    }

    fn begin_rebaseline(&mut self) {
        self.state.rebaseline_buf.clear();
        self.state.rebaseline_waited = 0;
        self.state.phase = Phase::Rebaseline {
            k: 0,
            of: REBASELINE_SAMPLES,
        };
    }

    fn step_probe(&mut self, plant: &Plant, t: f64, k: usize, m: usize) -> Result<StepRecord> {
        let v_cmd = self.state.probe_volts[k];
        let meas = self.measure_at(plant, t, v_cmd)?;
        self.state.probe_readings.push((meas.v, meas.i));
        let mut ann = false;
        if k + 1 == m {
            let v = self.model()?.predict_vi(&self.state.probe_readings)?;
            self.state.ann_calls += 1;
            self.state.v_egmpp_latest = v;
            self.state.alarm_latch = true;
            self.state.rebaseline_pending = true;
            self.state.phase = Phase::Tracking;
            ann = true;
        } else {
            self.state.phase = Phase::Probing { k: k + 1, m };
        }
        Ok(StepRecord {
            t,
            v_command: v_cmd,
            v_meas: meas.v,
            i_meas: meas.i,
            p_meas: meas.p,
            g: self.state.gllr.statistic(),
            alarm: false,
            ann_triggered: ann,
            v_hat: self.state.v_hat,
            v_egmpp: self.state.v_egmpp_latest,
            u: 0.0,
            latched: false,
            phase: Phase::Probing { k, m },
            weight_collapse: false,
        })
    }
}

fn clamp_finite(v: f64, v_max: f64, fallback: f64) -> f64 {
    if v.is_finite() {
        v.clamp(0.0, v_max)
    } else {
        fallback.clamp(0.0, v_max)
    }
}

/// Number of sampling instants in `[0, t_end)`.
pub fn episode_len(t_end: f64, f_s: f64) -> usize {
    (t_end * f_s - 1e-9).ceil().max(0.0) as usize
}

/// Simulate `[0, t_end)` at the controller's sampling rate.
pub fn run_episode(
    config: &ControllerConfig,
    model: Option<Arc<GmppModel>>,
    plant: &Plant,
    t_end: f64,
    seed: u64,
) -> Result<Vec<StepRecord>> {
    let mut ctrl = Controller::new(config.clone(), model, plant, seed)?;
    (0..episode_len(t_end, config.f_s))
        .map(|_| ctrl.step(plant))
        .collect()
}

/// Telemetry CSV for one episode.
pub fn write_telemetry<W: std::io::Write>(out: &mut W, records: &[StepRecord]) -> Result<()> {
    writeln!(out, "{TELEMETRY_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}
