//! C ABI for the mppt-lab library.
//!
//! Every fallible function returns an [`MpptStatus`]; on failure the message
//! is available from [`mppt_last_error_message`] on the same thread. Objects
//! are opaque handles created by `*_new` functions and released by the
//! matching `*_free`. Outputs are written through caller-provided pointers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use mppt_lab::ann::GmppModel;
use mppt_lab::controller::{Controller, ControllerConfig, Plant, StepRecord};
use mppt_lab::detect::{default_drift, GllrDetector, GllrParams, ThresholdDetector};
use mppt_lab::pv::{
    array_current, find_gmpp, ArrayTopology, Conditions, EnvironmentProfile, PvModuleParams,
};
use mppt_lab::smc::{self, ParticleSet, SmcParams, TransitionInputs, WeightUpdate};
use mppt_lab::Error;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpptStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    ShapeMismatch = 3,
    NonConvergence = 4,
    InsufficientSamples = 5,
    /// Singular fit, diverged training, unstable model or an impossible current.
    Numerical = 6,
    Io = 7,
    Parse = 8,
    Panic = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(MpptStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidInput(_) => MpptStatus::InvalidInput,
            Error::ShapeMismatch { .. } => MpptStatus::ShapeMismatch,
            Error::NonConvergence { .. } => MpptStatus::NonConvergence,
            Error::InsufficientSamples { .. } => MpptStatus::InsufficientSamples,
            Error::Singular(_)
            | Error::Divergence { .. }
            | Error::UnstableModel(_)
            | Error::CurrentExceedsCapability { .. } => MpptStatus::Numerical,
            Error::Io(_) => MpptStatus::Io,
            Error::Json(_) => MpptStatus::Parse,
        };
        Failure(status, e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(MpptStatus::NullPointer, format!("{name} is null"))
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> MpptStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MpptStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            MpptStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null("handle"))
}

unsafe fn handle_mut<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null("handle"))
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(MpptStatus::Parse, format!("{name} is not UTF-8: {e}")))
}

fn parse<T: serde::de::DeserializeOwned>(json: &str) -> Result<T, Failure> {
    serde_json::from_str(json).map_err(|e| Failure::from(Error::from(e)))
}

unsafe fn boxed<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    put(out, Box::into_raw(Box::new(value)))
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mppt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mppt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Series-parallel PV array with its module datasheet.
pub struct MpptArray {
    topo: ArrayTopology,
    params: PvModuleParams,
}

impl MpptArray {
    fn conditions(&self, irradiance: &[f64], temperature_k: f64) -> Result<Conditions, Failure> {
        let cond = Conditions::new(irradiance.to_vec(), temperature_k);
        cond.validate(&self.topo)?;
        Ok(cond)
    }
}

/// Array of `n_groups` bypass-diode groups with `series[k]` modules each,
/// repeated over `parallel` strings, built from the bundled 60 W module.
///
/// # Safety
/// `series` must point to `n_groups` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mppt_array_new(
    series: *const usize,
    n_groups: usize,
    parallel: usize,
    out: *mut *mut MpptArray,
) -> MpptStatus {
    guard(|| {
        let series = slice(series, n_groups, "series")?;
        if series.is_empty() || series.contains(&0) || parallel == 0 {
            return Err(Error::InvalidInput(
                "need at least one group, non-empty groups and one string".into(),
            )
            .into());
        }
        let topo = ArrayTopology::series_groups(series, parallel);
        topo.validate()?;
        boxed(
            out,
            MpptArray {
                topo,
                params: PvModuleParams::datasheet_60w(),
            },
        )
    })
}

/// Array from JSON documents of the topology and, optionally, the module
/// (null selects the bundled 60 W module).
///
/// # Safety
/// Strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mppt_array_from_json(
    topology_json: *const c_char,
    module_json: *const c_char,
    out: *mut *mut MpptArray,
) -> MpptStatus {
    guard(|| {
        let topo: ArrayTopology = parse(text(topology_json, "topology_json")?)?;
        topo.validate()?;
        let params = if module_json.is_null() {
            PvModuleParams::datasheet_60w()
        } else {
            parse(text(module_json, "module_json")?)?
        };
        params.validate()?;
        boxed(out, MpptArray { topo, params })
    })
}

/// # Safety
/// `array` must come from an `mppt_array_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn mppt_array_free(array: *mut MpptArray) {
    release(array);
}

/// # Safety
/// `array` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mppt_array_group_count(
    array: *const MpptArray,
    out: *mut usize,
) -> MpptStatus {
    guard(|| put(out, handle(array)?.topo.group_count()))
}

/// Nameplate open-circuit voltage, V.
///
/// # Safety
/// `array` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mppt_array_voc(array: *const MpptArray, out: *mut f64) -> MpptStatus {
    guard(|| {
        let a = handle(array)?;
        put(out, a.topo.v_oc_nameplate(&a.params))
    })
}

/// Array current at terminal voltage `v`, A.
///
/// # Safety
/// `irradiance` must point to one value per group (kW/m²); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mppt_array_current(
    array: *const MpptArray,
    irradiance: *const f64,
    n: usize,
    temperature_k: f64,
    v: f64,
    out: *mut f64,
) -> MpptStatus {
    guard(|| {
        let a = handle(array)?;
        let cond = a.conditions(slice(irradiance, n, "irradiance")?, temperature_k)?;
        put(out, array_current(v, &cond, &a.topo, &a.params)?)
    })
}

/// Global maximum power point: voltage in V and power in W.
///
/// # Safety
/// `irradiance` must point to one value per group; both outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mppt_array_find_gmpp(
    array: *const MpptArray,
    irradiance: *const f64,
    n: usize,
    temperature_k: f64,
    out_v: *mut f64,
    out_p: *mut f64,
) -> MpptStatus {
    guard(|| {
        let a = handle(array)?;
        let cond = a.conditions(slice(irradiance, n, "irradiance")?, temperature_k)?;
        let (v, p) = find_gmpp(&cond, &a.topo, &a.params)?;
        put(out_v, v)?;
        put(out_p, p)
    })
}

/// Streaming GLLR change detector on measured power.
pub struct MpptGllr(GllrDetector);

/// Detector with window order `p`, noise level `sigma_nu` (W) and threshold
/// `h`. A non-positive `b` selects the default drift for `p`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mppt_gllr_new(
    b: f64,
    sigma_nu: f64,
    h: f64,
    p: usize,
    nominal_power: f64,
    out: *mut *mut MpptGllr,
) -> MpptStatus {
    guard(|| {
        let b = if b > 0.0 { b } else { default_drift(p) };
        let params = GllrParams {
            b,
            p,
            ..GllrParams::with_defaults(sigma_nu, h)
        };
        boxed(out, MpptGllr(GllrDetector::new(params, nominal_power)?))
    })
}

/// # Safety
/// `detector` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mppt_gllr_free(detector: *mut MpptGllr) {
    release(detector);
}

/// Feed one power sample; `out_alarm` is set when the statistic crosses `h`.
///
/// # Safety
/// `detector` must be a live handle; `out_alarm` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mppt_gllr_step(
    detector: *mut MpptGllr,
    power: f64,
    out_alarm: *mut bool,
) -> MpptStatus {
    guard(|| {
        let alarm = handle_mut(detector)?.0.step(power)?;
        put(out_alarm, alarm)
    })
}

/// # Safety
/// `detector` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mppt_gllr_statistic(
    detector: *const MpptGllr,
    out: *mut f64,
) -> MpptStatus {
    guard(|| put(out, handle(detector)?.0.statistic()))
}

/// Restart after an alarm with the mean of `recent` as the new nominal power.
///
/// # Safety
/// `recent` must point to `n` values.
#[no_mangle]
pub unsafe extern "C" fn mppt_gllr_rebaseline(
    detector: *mut MpptGllr,
    recent: *const f64,
    n: usize,
    t_now: u64,
) -> MpptStatus {
    guard(|| {
        let d = handle_mut(detector)?;
        d.0.reset_after_alarm(slice(recent, n, "recent")?, t_now)?;
        Ok(())
    })
}

/// Consecutive-difference threshold detector.
pub struct MpptThreshold(ThresholdDetector);

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mppt_threshold_new(h1: f64, out: *mut *mut MpptThreshold) -> MpptStatus {
    guard(|| {
        if h1.is_nan() || h1 <= 0.0 {
            return Err(Error::InvalidInput(format!("h1 must be > 0, got {h1}")).into());
        }
        boxed(out, MpptThreshold(ThresholdDetector::new(h1)))
    })
}

/// # Safety
/// `detector` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mppt_threshold_free(detector: *mut MpptThreshold) {
    release(detector);
}

/// # Safety
/// `detector` must be a live handle; `out_alarm` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mppt_threshold_step(
    detector: *mut MpptThreshold,
    power: f64,
    out_alarm: *mut bool,
) -> MpptStatus {
    guard(|| {
        let alarm = handle_mut(detector)?.0.step(power);
        put(out_alarm, alarm)
    })
}

/// Particle filter over the operating voltage.
pub struct MpptSmc {
    particles: ParticleSet,
    params: SmcParams,
    rng: ChaCha8Rng,
}

/// Filter with `n_particles` particles drawn from N(v0, sigma0²).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mppt_smc_new(
    sigma_w: f64,
    sigma_v: f64,
    v0: f64,
    sigma0: f64,
    n_particles: usize,
    seed: u64,
    out: *mut *mut MpptSmc,
) -> MpptStatus {
    guard(|| {
        let params = SmcParams {
            n_particles,
            n_thr: n_particles as f64 / 2.0,
            ..SmcParams::new(sigma_w, sigma_v, v0, sigma0)
        };
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let particles = smc::init_particles(&params, &mut rng)?;
        boxed(
            out,
            MpptSmc {
                particles,
                params,
                rng,
            },
        )
    })
}

/// # Safety
/// `filter` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mppt_smc_free(filter: *mut MpptSmc) {
    release(filter);
}

/// One predict-update-resample cycle. `slope` is the power slope estimate
/// (W/V), `u` the refinement input and `v_egmpp` the latest predicted GMPP
/// voltage. Writes the posterior mean and whether every likelihood
/// underflowed.
///
/// # Safety
/// `filter` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mppt_smc_step(
    filter: *mut MpptSmc,
    slope: f64,
    u: f64,
    v_egmpp: f64,
    v_measured: f64,
    out_estimate: *mut f64,
    out_collapsed: *mut bool,
) -> MpptStatus {
    guard(|| {
        let f = handle_mut(filter)?;
        if out_estimate.is_null() || out_collapsed.is_null() {
            return Err(null("output pointer"));
        }
        for (name, x) in [
            ("slope", slope),
            ("u", u),
            ("v_egmpp", v_egmpp),
            ("v_measured", v_measured),
        ] {
            if !x.is_finite() {
                return Err(Error::InvalidInput(format!("{name} must be finite")).into());
            }
        }
        let inputs = TransitionInputs {
            slope_est: slope,
            u,
            v_egmpp,
        };
        smc::propagate(&mut f.particles, &inputs, &f.params, &mut f.rng);
        let collapsed =
            smc::update_weights(&mut f.particles, v_measured, &f.params) == WeightUpdate::Collapsed;
        let estimate = smc::estimate(&f.particles);
        smc::resample_if_needed(&mut f.particles, &f.params, &mut f.rng);
        put(out_estimate, estimate)?;
        put(out_collapsed, collapsed)
    })
}

/// # Safety
/// `filter` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mppt_smc_effective_sample_size(
    filter: *const MpptSmc,
    out: *mut f64,
) -> MpptStatus {
    guard(|| put(out, smc::effective_sample_size(&handle(filter)?.particles)))
}

/// Trained GMPP-voltage network.
pub struct MpptModel(Arc<GmppModel>);

/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mppt_model_from_json(
    json: *const c_char,
    out: *mut *mut MpptModel,
) -> MpptStatus {
    guard(|| {
        boxed(
            out,
            MpptModel(Arc::new(GmppModel::from_json(text(json, "json")?)?)),
        )
    })
}

/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mppt_model_free(model: *mut MpptModel) {
    release(model);
}

/// Number of network inputs.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mppt_model_input_len(
    model: *const MpptModel,
    out: *mut usize,
) -> MpptStatus {
    guard(|| put(out, handle(model)?.0.spec.input_len()))
}

/// Predicted GMPP voltage from per-group irradiance.
///
/// # Safety
/// `irradiance` must point to `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mppt_model_predict_irradiance(
    model: *const MpptModel,
    irradiance: *const f64,
    n: usize,
    out: *mut f64,
) -> MpptStatus {
    guard(|| {
        let m = handle(model)?;
        put(out, m.0.predict_irr(slice(irradiance, n, "irradiance")?)?)
    })
}

/// Predicted GMPP voltage from `n` probe readings `(v[k], i[k])`.
///
/// # Safety
/// `v` and `i` must each point to `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mppt_model_predict_probes(
    model: *const MpptModel,
    v: *const f64,
    i: *const f64,
    n: usize,
    out: *mut f64,
) -> MpptStatus {
    guard(|| {
        let m = handle(model)?;
        let probes: Vec<(f64, f64)> = slice(v, n, "v")?
            .iter()
            .copied()
            .zip(slice(i, n, "i")?.iter().copied())
            .collect();
        put(out, m.0.predict_vi(&probes)?)
    })
}

/// One sampling instant of a closed-loop controller.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MpptStep {
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
    pub u: f64,
    pub latched: bool,
}

impl From<&StepRecord> for MpptStep {
    fn from(r: &StepRecord) -> Self {
        Self {
            t: r.t,
            v_command: r.v_command,
            v_meas: r.v_meas,
            i_meas: r.i_meas,
            p_meas: r.p_meas,
            g: r.g,
            alarm: r.alarm,
            ann_triggered: r.ann_triggered,
            v_hat: r.v_hat,
            v_egmpp: r.v_egmpp,
            u: r.u,
            latched: r.latched,
        }
    }
}

/// Closed-loop controller driving a simulated array.
pub struct MpptController {
    ctrl: Controller,
    plant: Plant,
}

/// Controller from a JSON configuration, bound to a copy of `array` under
/// the given conditions. `model` may be null for controllers without a
/// network; the controller keeps its own reference to it.
///
/// # Safety
/// Handles must be live or null where allowed; `irradiance` must point to
/// `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mppt_controller_new(
    config_json: *const c_char,
    model: *const MpptModel,
    array: *const MpptArray,
    irradiance: *const f64,
    n: usize,
    temperature_k: f64,
    seed: u64,
    out: *mut *mut MpptController,
) -> MpptStatus {
    guard(|| {
        let config: ControllerConfig = parse(text(config_json, "config_json")?)?;
        let a = handle(array)?;
        let cond = a.conditions(slice(irradiance, n, "irradiance")?, temperature_k)?;
        let plant = Plant {
            topo: a.topo.clone(),
            params: a.params,
            env: EnvironmentProfile::constant(cond),
        };
        let model = model.as_ref().map(|m| m.0.clone());
        let ctrl = Controller::new(config, model, &plant, seed)?;
        boxed(out, MpptController { ctrl, plant })
    })
}

/// # Safety
/// `controller` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mppt_controller_free(controller: *mut MpptController) {
    release(controller);
}

/// Change the array conditions from the next step on.
///
/// # Safety
/// `irradiance` must point to `n` values.
#[no_mangle]
pub unsafe extern "C" fn mppt_controller_set_conditions(
    controller: *mut MpptController,
    irradiance: *const f64,
    n: usize,
    temperature_k: f64,
) -> MpptStatus {
    guard(|| {
        let c = handle_mut(controller)?;
        let cond = Conditions::new(slice(irradiance, n, "irradiance")?.to_vec(), temperature_k);
        cond.validate(&c.plant.topo)?;
        c.plant.env = EnvironmentProfile::constant(cond);
        Ok(())
    })
}

/// Advance one sampling instant.
///
/// # Safety
/// `controller` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mppt_controller_step(
    controller: *mut MpptController,
    out: *mut MpptStep,
) -> MpptStatus {
    guard(|| {
        let c = handle_mut(controller)?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let rec = c.ctrl.step(&c.plant)?;
        put(out, MpptStep::from(&rec))
    })
}

/// Network invocations so far.
///
/// # Safety
/// `controller` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mppt_controller_ann_calls(
    controller: *const MpptController,
    out: *mut u64,
) -> MpptStatus {
    guard(|| put(out, handle(controller)?.ctrl.state.ann_calls))
}
