//! Series/parallel composition of identical modules into a partially shaded array.
//!
//! Each string is a series chain of groups; every group shares one irradiance
//! value. A group with a bypass diode contributes `max(V, 0)` at the string
//! current, so a shaded group is shorted instead of driven into reverse bias.
//! Parallel strings are identical, so the array current is the string current
//! times the string count.

use serde::{Deserialize, Serialize};

use super::module::{PvModuleParams, T_STC_K};
use crate::error::{ensure_finite, Error, Result};

const CURRENT_TOL_A: f64 = 1e-9;
const MAX_BISECT: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleGroup {
    pub modules_in_series: usize,
    pub strings_in_parallel: usize,
    #[serde(default = "default_bypass")]
    pub bypass: bool,
}

fn default_bypass() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayTopology {
    pub groups: Vec<ModuleGroup>,
}

impl ArrayTopology {
    pub fn new(groups: Vec<ModuleGroup>) -> Result<Self> {
        let topo = Self { groups };
        topo.validate()?;
        Ok(topo)
    }

    /// Series groups of identical modules, `parallel` strings, bypass on every group.
    pub fn series_groups(series: &[usize], parallel: usize) -> Self {
        Self {
            groups: series
                .iter()
                .map(|&n| ModuleGroup {
                    modules_in_series: n,
                    strings_in_parallel: parallel,
                    bypass: true,
                })
                .collect(),
        }
    }

    /// Desk-scale small system: groups of (5, 5, 2) modules, 12 parallel strings.
    pub fn small() -> Self {
        Self::series_groups(&[5, 5, 2], 12)
    }

    /// Desk-scale large system: groups of (50, 50, 20) modules, 120 parallel strings.
    pub fn large() -> Self {
        Self::series_groups(&[50, 50, 20], 120)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .groups
            .first()
            .ok_or_else(|| Error::InvalidInput("topology needs at least one group".into()))?;
        for g in &self.groups {
            if g.modules_in_series == 0 || g.strings_in_parallel == 0 {
                return Err(Error::InvalidInput("group counts must be >= 1".into()));
            }
            if g.strings_in_parallel != first.strings_in_parallel {
                return Err(Error::InvalidInput(
                    "strings_in_parallel must be identical across groups".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn strings_in_parallel(&self) -> usize {
        self.groups[0].strings_in_parallel
    }

    pub fn modules_per_string(&self) -> usize {
        self.groups.iter().map(|g| g.modules_in_series).sum()
    }

    /// Nameplate open-circuit voltage of the array.
    pub fn v_oc_nameplate(&self, params: &PvModuleParams) -> f64 {
        self.modules_per_string() as f64 * params.v_oc_stc
    }

    /// Nameplate short-circuit current of the array.
    pub fn i_sc_nameplate(&self, params: &PvModuleParams) -> f64 {
        self.strings_in_parallel() as f64 * params.i_sc_stc
    }
}

/// Instantaneous per-group irradiance (kW/m²) and cell temperature (K).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conditions {
    #[serde(rename = "irradiance_kw_m2")]
    pub irradiance: Vec<f64>,
    #[serde(rename = "temperature_k", default = "default_temperature")]
    pub temperature: f64,
}

fn default_temperature() -> f64 {
    T_STC_K
}

impl Conditions {
    pub fn new(irradiance: Vec<f64>, temperature: f64) -> Self {
        Self {
            irradiance,
            temperature,
        }
    }

    pub fn uniform(groups: usize, irradiance: f64) -> Self {
        Self::new(vec![irradiance; groups], T_STC_K)
    }

    pub fn validate(&self, topo: &ArrayTopology) -> Result<()> {
        if self.irradiance.len() != topo.group_count() {
            return Err(Error::ShapeMismatch {
                expected: topo.group_count(),
                got: self.irradiance.len(),
            });
        }
        for &g in &self.irradiance {
            ensure_finite("irradiance", g)?;
            if g < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "irradiance must be >= 0, got {g}"
                )));
            }
        }
        ensure_finite("temperature", self.temperature)?;
        if self.temperature <= 0.0 {
            return Err(Error::InvalidInput("temperature must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    #[serde(rename = "t_start_s")]
    pub t_start: f64,
    #[serde(flatten)]
    pub conditions: Conditions,
}

/// Piecewise-constant schedule of array conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentProfile {
    pub schedule: Vec<ScheduleEntry>,
}

impl EnvironmentProfile {
    pub fn constant(conditions: Conditions) -> Self {
        Self {
            schedule: vec![ScheduleEntry {
                t_start: 0.0,
                conditions,
            }],
        }
    }

    pub fn validate(&self, topo: &ArrayTopology) -> Result<()> {
        let first = self
            .schedule
            .first()
            .ok_or_else(|| Error::InvalidInput("schedule must not be empty".into()))?;
        if first.t_start != 0.0 {
            return Err(Error::InvalidInput("schedule must start at t = 0".into()));
        }
        for w in self.schedule.windows(2) {
            if w[1].t_start <= w[0].t_start {
                return Err(Error::InvalidInput(
                    "schedule t_start must be strictly increasing".into(),
                ));
            }
        }
        for e in &self.schedule {
            e.conditions.validate(topo)?;
        }
        Ok(())
    }

    /// Index of the entry in effect at time `t`.
    pub fn index_at(&self, t: f64) -> usize {
        self.schedule
            .iter()
            .rposition(|e| e.t_start <= t)
            .unwrap_or(0)
    }

    pub fn at(&self, t: f64) -> &Conditions {
        &self.schedule[self.index_at(t)].conditions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub v: f64,
    pub i: f64,
    pub p: f64,
}

/// Series voltage of one string carrying current `i`, with bypass clamping.
/// `None` if a group without bypass cannot carry `i`.
fn string_voltage(
    i: f64,
    cond: &Conditions,
    topo: &ArrayTopology,
    params: &PvModuleParams,
) -> Option<f64> {
    let mut total = 0.0;
    for (g, &irr) in topo.groups.iter().zip(&cond.irradiance) {
        let v = params.voltage_at(i, irr, cond.temperature);
        let v = match (v, g.bypass) {
            (Some(v), true) => v.max(0.0),
            (None, true) => 0.0,
            (Some(v), false) if v >= 0.0 => v,
            _ => return None,
        };
        total += g.modules_in_series as f64 * v;
    }
    Some(total)
}

/// Total array current at terminal voltage `v_total`.
pub fn array_current(
    v_total: f64,
    cond: &Conditions,
    topo: &ArrayTopology,
    params: &PvModuleParams,
) -> Result<f64> {
    ensure_finite("v_total", v_total)?;
    if v_total < 0.0 {
        return Err(Error::InvalidInput(format!(
            "v_total must be >= 0, got {v_total}"
        )));
    }
    cond.validate(topo)?;
    Ok(string_current(v_total, cond, topo, params)? * topo.strings_in_parallel() as f64)
}

fn string_current(
    v_total: f64,
    cond: &Conditions,
    topo: &ArrayTopology,
    params: &PvModuleParams,
) -> Result<f64> {
    let iph: Vec<f64> = cond
        .irradiance
        .iter()
        .map(|&g| params.photocurrent(g, cond.temperature))
        .collect();
    let max_iph = iph.iter().cloned().fold(0.0, f64::max);
    // groups without bypass cap the string current at their own short-circuit current
    let cap = topo
        .groups
        .iter()
        .zip(&iph)
        .filter(|(g, _)| !g.bypass)
        .map(|(_, &i)| i)
        .fold(max_iph, f64::min);

    let mut hi = cap;
    match string_voltage(hi, cond, topo, params) {
        Some(v) if v >= v_total => return Ok(hi),
        Some(_) => {}
        None => {
            return Err(Error::NonConvergence {
                what: "string current upper bracket",
                iterations: 0,
                lo: 0.0,
                hi,
            })
        }
    }

    // beyond open circuit the current goes negative; widen downward until bracketed
    let mut lo = 0.0_f64.min(hi);
    let mut step = params.i_sc_stc.max(1e-6);
    let mut widen = 0;
    while string_voltage(lo, cond, topo, params).is_none_or(|v| v < v_total) {
        widen += 1;
        if widen > 64 {
            return Err(Error::NonConvergence {
                what: "string current lower bracket",
                iterations: widen,
                lo,
                hi,
            });
        }
        hi = lo;
        lo -= step;
        step *= 2.0;
    }

    for _ in 0..MAX_BISECT {
        if hi - lo <= CURRENT_TOL_A {
            return Ok(0.5 * (lo + hi));
        }
        let mid = 0.5 * (lo + hi);
        match string_voltage(mid, cond, topo, params) {
            Some(v) if v >= v_total => lo = mid,
            _ => hi = mid,
        }
    }
    Err(Error::NonConvergence {
        what: "string current bisection",
        iterations: MAX_BISECT,
        lo,
        hi,
    })
}

/// Per-group voltages of one string at array terminal voltage `v_total`.
pub fn group_voltages(
    v_total: f64,
    cond: &Conditions,
    topo: &ArrayTopology,
    params: &PvModuleParams,
) -> Result<Vec<f64>> {
    let i = array_current(v_total, cond, topo, params)? / topo.strings_in_parallel() as f64;
    Ok(topo
        .groups
        .iter()
        .zip(&cond.irradiance)
        .map(|(g, &irr)| {
            let v = params.voltage_at(i, irr, cond.temperature).unwrap_or(0.0);
            g.modules_in_series as f64 * if g.bypass { v.max(0.0) } else { v }
        })
        .collect())
}

/// Uniform voltage sweep over `[0, v_max]`.
pub fn sweep_pv_curve(
    cond: &Conditions,
    topo: &ArrayTopology,
    params: &PvModuleParams,
    v_max: f64,
    n_points: usize,
) -> Result<Vec<CurveSample>> {
    if n_points < 2 {
        return Err(Error::InvalidInput("n_points must be >= 2".into()));
    }
    ensure_finite("v_max", v_max)?;
    if v_max <= 0.0 {
        return Err(Error::InvalidInput("v_max must be > 0".into()));
    }
    cond.validate(topo)?;
    (0..n_points)
        .map(|k| {
            let v = v_max * k as f64 / (n_points - 1) as f64;
            let i = string_current(v, cond, topo, params)? * topo.strings_in_parallel() as f64;
            Ok(CurveSample { v, i, p: v * i })
        })
        .collect()
}

pub const GMPP_SWEEP_POINTS: usize = 2001;
const GOLDEN_TOL_V: f64 = 1e-3;

/// Global maximum power point: dense sweep, then golden-section refinement
/// on the winning bracket. Returns `(v_gmpp, p_gmpp)`.
pub fn find_gmpp(
    cond: &Conditions,
    topo: &ArrayTopology,
    params: &PvModuleParams,
) -> Result<(f64, f64)> {
    let v_max = topo.v_oc_nameplate(params);
    let sweep = sweep_pv_curve(cond, topo, params, v_max, GMPP_SWEEP_POINTS)?;
    let (k, best) = sweep
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.p.total_cmp(&b.1.p))
        .expect("sweep is non-empty");
    let mut lo = sweep[k.saturating_sub(1)].v;
    let mut hi = sweep[(k + 1).min(sweep.len() - 1)].v;

    let np = topo.strings_in_parallel() as f64;
    let power = |v: f64| -> Result<f64> { Ok(v * string_current(v, cond, topo, params)? * np) };

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = power(x1)?;
    let mut f2 = power(x2)?;
    while hi - lo > GOLDEN_TOL_V {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = power(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = power(x1)?;
        }
    }
    let v = 0.5 * (lo + hi);
    let p = power(v)?;
    // refinement must never lose to the grid point it started from
    if p >= best.p {
        Ok((v, p))
    } else {
        Ok((best.v, best.p))
    }
}

/// Indices of strict local maxima of the sampled power whose value exceeds
/// `fraction` of the global peak. Plateaus count once.
pub fn local_maxima(curve: &[CurveSample], fraction: f64) -> Vec<usize> {
    let peak = curve.iter().map(|s| s.p).fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::new();
    let n = curve.len();
    let mut k = 1;
    while k + 1 < n {
        if curve[k].p > curve[k - 1].p {
            // walk across an equal-valued plateau
            let mut j = k;
            while j + 1 < n && curve[j + 1].p == curve[k].p {
                j += 1;
            }
            if j + 1 < n && curve[j + 1].p < curve[k].p && curve[k].p > fraction * peak {
                out.push(k);
            }
            k = j + 1;
        } else {
            k += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pv::module::module_current;

    fn params() -> PvModuleParams {
        PvModuleParams::datasheet_60w()
    }

    #[test]
    fn single_group_series_equals_scaled_module() {
        let p = params();
        let topo = ArrayTopology::series_groups(&[4], 1);
        let cond = Conditions::uniform(1, 1.0);
        for k in 0..20 {
            let v = 20.0 * k as f64 / 20.0;
            let arr = array_current(4.0 * v, &cond, &topo, &p).unwrap();
            let m = module_current(v, 1.0, T_STC_K, &p).unwrap();
            assert!((arr - m).abs() < 1e-8, "v={v}: {arr} vs {m}");
        }
    }

    #[test]
    fn parallel_strings_double_current() {
        let p = params();
        let one = ArrayTopology::series_groups(&[3, 2], 1);
        let two = ArrayTopology::series_groups(&[3, 2], 2);
        let cond = Conditions::new(vec![1.0, 0.6], T_STC_K);
        for v in [0.0, 20.0, 50.0, 80.0, 100.0] {
            let a = array_current(v, &cond, &one, &p).unwrap();
            let b = array_current(v, &cond, &two, &p).unwrap();
            assert!((b - 2.0 * a).abs() < 1e-8);
        }
    }

    #[test]
    fn shaded_small_system_has_multiple_peaks() {
        let p = params();
        let topo = ArrayTopology::series_groups(&[5, 5, 2], 1);
        let cond = Conditions::new(vec![1.0, 0.8, 0.5], T_STC_K);
        let curve = sweep_pv_curve(&cond, &topo, &p, topo.v_oc_nameplate(&p), 2001).unwrap();
        assert!(local_maxima(&curve, 0.01).len() >= 2);
    }

    #[test]
    fn bypassed_groups_never_go_negative() {
        let p = params();
        let topo = ArrayTopology::small();
        let cond = Conditions::new(vec![1.0, 0.3, 0.2], T_STC_K);
        for k in 0..=50 {
            let v = topo.v_oc_nameplate(&p) * k as f64 / 50.0;
            for gv in group_voltages(v, &cond, &topo, &p).unwrap() {
                assert!(gv >= 0.0);
            }
        }
    }

    #[test]
    fn group_without_bypass_limits_string_current() {
        let p = params();
        let topo = ArrayTopology::new(vec![
            ModuleGroup {
                modules_in_series: 2,
                strings_in_parallel: 1,
                bypass: true,
            },
            ModuleGroup {
                modules_in_series: 2,
                strings_in_parallel: 1,
                bypass: false,
            },
        ])
        .unwrap();
        let cond = Conditions::new(vec![1.0, 0.5], T_STC_K);
        let i0 = array_current(0.0, &cond, &topo, &p).unwrap();
        assert!((i0 - p.photocurrent(0.5, T_STC_K)).abs() < 1e-8);
    }

    #[test]
    fn dark_array_produces_no_power() {
        let p = params();
        let topo = ArrayTopology::small();
        let cond = Conditions::uniform(3, 0.0);
        let curve = sweep_pv_curve(&cond, &topo, &p, 100.0, 51).unwrap();
        assert!(curve.iter().all(|s| s.p <= 0.0));
        assert_eq!(curve[0].p, 0.0);
    }

    #[test]
    fn beyond_open_circuit_current_is_negative() {
        let p = params();
        let topo = ArrayTopology::small();
        let cond = Conditions::uniform(3, 1.0);
        let i = array_current(1.02 * topo.v_oc_nameplate(&p), &cond, &topo, &p).unwrap();
        assert!(i < 0.0);
    }

    #[test]
    fn gmpp_matches_dense_sweep() {
        let p = params();
        let topo = ArrayTopology::series_groups(&[1], 1);
        let cond = Conditions::uniform(1, 1.0);
        let (v, pw) = find_gmpp(&cond, &topo, &p).unwrap();
        let sweep = sweep_pv_curve(&cond, &topo, &p, p.v_oc_stc, 20001).unwrap();
        let best = sweep.iter().max_by(|a, b| a.p.total_cmp(&b.p)).unwrap();
        assert!((v - best.v).abs() < 2e-3, "{v} vs {}", best.v);
        assert!(pw >= best.p - 1e-9);
    }

    #[test]
    fn shape_and_schedule_validation() {
        let topo = ArrayTopology::small();
        assert!(Conditions::uniform(2, 1.0).validate(&topo).is_err());
        assert!(ArrayTopology::new(vec![]).is_err());
        let env = EnvironmentProfile {
            schedule: vec![
                ScheduleEntry {
                    t_start: 0.0,
                    conditions: Conditions::uniform(3, 1.0),
                },
                ScheduleEntry {
                    t_start: 0.0,
                    conditions: Conditions::uniform(3, 0.5),
                },
            ],
        };
        assert!(env.validate(&topo).is_err());
    }

    #[test]
    fn schedule_lookup() {
        let env = EnvironmentProfile {
            schedule: vec![
                ScheduleEntry {
                    t_start: 0.0,
                    conditions: Conditions::uniform(1, 1.0),
                },
                ScheduleEntry {
                    t_start: 5.75,
                    conditions: Conditions::uniform(1, 0.5),
                },
            ],
        };
        assert_eq!(env.index_at(0.0), 0);
        assert_eq!(env.index_at(5.7), 0);
        assert_eq!(env.index_at(5.75), 1);
        assert_eq!(env.at(100.0).irradiance[0], 0.5);
    }
}
