//! Simplified single-diode module model (series and shunt resistances neglected).
//!
//! ```text
//! I = I_ph - I_sc,STC * exp(-qB/kT) * (exp(qB/kT * V / V_oc,STC) - 1)
//! I_ph = (I_ph,STC + K_I (T - T_STC)) * lambda / lambda_STC
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Elementary charge over Boltzmann constant, K/V.
pub const Q_OVER_K: f64 = 1.602_176_634e-19 / 1.380_649e-23;

/// Default operating temperature (25 °C).
pub const T_STC_K: f64 = 298.15;

const VOLTAGE_TOL_A: f64 = 1e-9;

/// Datasheet constants of one PV module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PvModuleParams {
    #[serde(rename = "v_oc_stc_v")]
    pub v_oc_stc: f64,
    #[serde(rename = "i_sc_stc_a")]
    pub i_sc_stc: f64,
    #[serde(rename = "i_ph_stc_a")]
    pub i_ph_stc: f64,
    #[serde(rename = "k_i_a_per_k")]
    pub k_i: f64,
    /// Curve-fitting constant B.
    pub b_const: f64,
    #[serde(rename = "q_over_k_k_per_v")]
    pub q_over_k: f64,
    #[serde(rename = "t_stc_k")]
    pub t_stc: f64,
    #[serde(rename = "lambda_stc_kw_m2")]
    pub lambda_stc: f64,
    #[serde(rename = "v_mpp_datasheet_v")]
    pub v_mpp_datasheet: f64,
    #[serde(rename = "i_mpp_datasheet_a")]
    pub i_mpp_datasheet: f64,
    #[serde(rename = "p_mpp_datasheet_w")]
    pub p_mpp_datasheet: f64,
    /// Open-circuit voltage temperature coefficient. Not used by the model.
    #[serde(rename = "k_v_v_per_k")]
    pub k_v: f64,
}

impl Default for PvModuleParams {
    fn default() -> Self {
        Self::datasheet_60w()
    }
}

impl PvModuleParams {
    /// The 60 W reference module (21.06 V / 3.80 A, MPP 17.10 V / 3.50 A).
    pub fn datasheet_60w() -> Self {
        Self {
            v_oc_stc: 21.06,
            i_sc_stc: 3.80,
            i_ph_stc: 3.80,
            k_i: 3.3e-4,
            b_const: 0.2464,
            q_over_k: Q_OVER_K,
            t_stc: T_STC_K,
            lambda_stc: 1.0,
            v_mpp_datasheet: 17.10,
            i_mpp_datasheet: 3.50,
            p_mpp_datasheet: 59.90,
            k_v: 0.084,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("v_oc_stc", self.v_oc_stc),
            ("i_sc_stc", self.i_sc_stc),
            ("i_ph_stc", self.i_ph_stc),
            ("q_over_k", self.q_over_k),
            ("t_stc", self.t_stc),
            ("lambda_stc", self.lambda_stc),
        ];
        for (name, x) in positive {
            ensure_finite(name, x)?;
            if x <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "{name} must be positive, got {x}"
                )));
            }
        }
        ensure_finite("k_i", self.k_i)?;
        if !(self.b_const > 0.0 && self.b_const < 1.0) {
            return Err(Error::InvalidInput(format!(
                "b_const must lie in (0, 1), got {}",
                self.b_const
            )));
        }
        Ok(())
    }

    /// Exponent scale qB/kT at the given temperature.
    #[inline]
    fn exponent_scale(&self, temperature: f64) -> f64 {
        self.q_over_k * self.b_const / temperature
    }

    /// Saturation-like prefactor I_sc,STC * exp(-qB/kT).
    #[inline]
    fn diode_prefactor(&self, temperature: f64) -> f64 {
        self.i_sc_stc * (-self.exponent_scale(temperature)).exp()
    }

    /// Photo-generated current at the given conditions.
    pub fn photocurrent(&self, irradiance: f64, temperature: f64) -> f64 {
        (self.i_ph_stc + self.k_i * (temperature - self.t_stc)) * irradiance / self.lambda_stc
    }

    /// Unchecked model evaluation; valid for any finite voltage.
    #[inline]
    pub(crate) fn current_at(&self, v: f64, irradiance: f64, temperature: f64) -> f64 {
        let c = self.exponent_scale(temperature);
        self.photocurrent(irradiance, temperature)
            - self.diode_prefactor(temperature) * (c * v / self.v_oc_stc).exp_m1()
    }

    /// Closed-form inverse of [`Self::current_at`]. Returns `None` when the
    /// current cannot be reached at any voltage (I >= I_ph + prefactor).
    #[inline]
    pub(crate) fn voltage_at(&self, i: f64, irradiance: f64, temperature: f64) -> Option<f64> {
        let c = self.exponent_scale(temperature);
        let ratio =
            (self.photocurrent(irradiance, temperature) - i) / self.diode_prefactor(temperature);
        if ratio <= -1.0 {
            None
        } else {
            Some(self.v_oc_stc / c * ratio.ln_1p())
        }
    }
}

fn check_conditions(irradiance: f64, temperature: f64) -> Result<()> {
    ensure_finite("irradiance", irradiance)?;
    ensure_finite("temperature", temperature)?;
    if irradiance < 0.0 {
        return Err(Error::InvalidInput(format!(
            "irradiance must be >= 0, got {irradiance}"
        )));
    }
    if temperature <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    Ok(())
}

/// Module output current at terminal voltage `v`.
pub fn module_current(
    v: f64,
    irradiance: f64,
    temperature: f64,
    params: &PvModuleParams,
) -> Result<f64> {
    ensure_finite("v", v)?;
    if v < 0.0 {
        return Err(Error::InvalidInput(format!("v must be >= 0, got {v}")));
    }
    check_conditions(irradiance, temperature)?;
    Ok(params.current_at(v, irradiance, temperature))
}

/// Terminal voltage at which the module delivers current `i`, found by bisection
/// on `[0, 1.5 V_oc,STC]`.
pub fn module_voltage_from_current(
    i: f64,
    irradiance: f64,
    temperature: f64,
    params: &PvModuleParams,
) -> Result<f64> {
    ensure_finite("i", i)?;
    check_conditions(irradiance, temperature)?;
    if i < 0.0 {
        return Err(Error::InvalidInput(format!("i must be >= 0, got {i}")));
    }
    let capability = params.current_at(0.0, irradiance, temperature);
    if i > capability + VOLTAGE_TOL_A {
        return Err(Error::CurrentExceedsCapability {
            requested: i,
            capability,
        });
    }

    let residual = |v: f64| params.current_at(v, irradiance, temperature) - i;
    let (mut lo, mut hi) = (0.0, 1.5 * params.v_oc_stc);
    if residual(lo) <= VOLTAGE_TOL_A {
        return Ok(0.0);
    }
    const MAX_ITER: usize = 200;
    for _ in 0..MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let r = residual(mid);
        if r.abs() <= VOLTAGE_TOL_A * 0.5 || hi - lo < 1e-13 {
            return Ok(mid);
        }
        // current decreases with voltage
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NonConvergence {
        what: "module voltage bisection",
        iterations: MAX_ITER,
        lo,
        hi,
    })
}

/// dP/dV = I + V dI/dV for a single module at operating point (v, i).
pub fn power_slope_analytic(
    v: f64,
    i: f64,
    temperature: f64,
    params: &PvModuleParams,
) -> Result<f64> {
    ensure_finite("v", v)?;
    ensure_finite("i", i)?;
    if v < 0.0 {
        return Err(Error::InvalidInput(format!("v must be >= 0, got {v}")));
    }
    check_conditions(0.0, temperature)?;
    let c = params.exponent_scale(temperature);
    let di_dv = -params.i_sc_stc * c / params.v_oc_stc * (c * (v / params.v_oc_stc - 1.0)).exp();
    let slope = i + v * di_dv;
    ensure_finite("slope", slope)?;
    Ok(slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> PvModuleParams {
        PvModuleParams::datasheet_60w()
    }

    #[test]
    fn short_circuit_current_is_photocurrent() {
        let i = module_current(0.0, 1.0, T_STC_K, &p()).unwrap();
        assert_eq!(i, 3.80);
    }

    #[test]
    fn open_circuit_residual_is_small() {
        let params = p();
        let i = module_current(params.v_oc_stc, 1.0, T_STC_K, &params).unwrap();
        assert!(i.abs() < 0.01 * params.i_sc_stc, "I(Voc) = {i}");
        // residual is I_sc * exp(-qB/kT) up to rounding
        let expected = params.i_sc_stc * (-params.q_over_k * params.b_const / T_STC_K).exp();
        assert!((i - expected).abs() < 1e-12);
    }

    #[test]
    fn dark_module_sources_no_current() {
        let params = p();
        for k in 0..50 {
            let v = params.v_oc_stc * k as f64 / 50.0;
            assert!(module_current(v, 0.0, T_STC_K, &params).unwrap() <= 0.0);
        }
    }

    #[test]
    fn rejects_non_finite_and_negative_inputs() {
        let params = p();
        assert!(module_current(f64::NAN, 1.0, T_STC_K, &params).is_err());
        assert!(module_current(1.0, f64::INFINITY, T_STC_K, &params).is_err());
        assert!(module_current(-1.0, 1.0, T_STC_K, &params).is_err());
        assert!(module_current(1.0, 1.0, 0.0, &params).is_err());
    }

    #[test]
    fn voltage_from_current_round_trip() {
        let params = p();
        let i = module_current(10.0, 1.0, T_STC_K, &params).unwrap();
        let v = module_voltage_from_current(i, 1.0, T_STC_K, &params).unwrap();
        assert!((v - 10.0).abs() < 1e-6, "v = {v}");
    }

    #[test]
    fn voltage_from_current_endpoints() {
        let params = p();
        let v_sc = module_voltage_from_current(params.i_sc_stc, 1.0, T_STC_K, &params).unwrap();
        assert!(v_sc.abs() < 1e-6);
        let v_oc = module_voltage_from_current(0.0, 1.0, T_STC_K, &params).unwrap();
        assert!((v_oc - 21.06).abs() < 0.1, "v_oc = {v_oc}");
    }

    #[test]
    fn voltage_from_current_rejects_excess_current() {
        let params = p();
        let err = module_voltage_from_current(4.0, 1.0, T_STC_K, &params).unwrap_err();
        assert_eq!(err.kind(), "current-exceeds-capability");
    }

    #[test]
    fn bisection_agrees_with_closed_form_inverse() {
        let params = p();
        for k in 0..=40 {
            let i = 3.8 * k as f64 / 40.0;
            let bisect = module_voltage_from_current(i, 1.0, T_STC_K, &params).unwrap();
            let closed = params.voltage_at(i, 1.0, T_STC_K).unwrap().max(0.0);
            assert!(
                (bisect - closed).abs() < 1e-6,
                "i={i}: {bisect} vs {closed}"
            );
        }
    }

    #[test]
    fn slope_at_zero_voltage_is_current() {
        let params = p();
        let i0 = module_current(0.0, 1.0, T_STC_K, &params).unwrap();
        assert_eq!(power_slope_analytic(0.0, i0, T_STC_K, &params).unwrap(), i0);
    }

    #[test]
    fn slope_matches_central_difference_at_10v() {
        let params = p();
        let power = |v: f64| v * params.current_at(v, 1.0, T_STC_K);
        let h = 1e-4;
        let fd = (power(10.0 + h) - power(10.0 - h)) / (2.0 * h);
        let i = params.current_at(10.0, 1.0, T_STC_K);
        let analytic = power_slope_analytic(10.0, i, T_STC_K, &params).unwrap();
        assert!(((analytic - fd) / fd).abs() < 1e-3, "{analytic} vs {fd}");
    }

    #[test]
    fn photocurrent_scales_with_irradiance_and_temperature() {
        let params = p();
        assert_eq!(params.photocurrent(0.5, T_STC_K), 1.9);
        let hot = params.photocurrent(1.0, T_STC_K + 10.0);
        assert!((hot - (3.80 + 3.3e-3)).abs() < 1e-12);
    }
}
