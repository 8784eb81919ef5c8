//! PV module and array physics.

mod array;
mod module;

pub use array::{
    array_current, find_gmpp, group_voltages, local_maxima, sweep_pv_curve, ArrayTopology,
    Conditions, CurveSample, EnvironmentProfile, ModuleGroup, ScheduleEntry, GMPP_SWEEP_POINTS,
};
pub use module::{
    module_current, module_voltage_from_current, power_slope_analytic, PvModuleParams, Q_OVER_K,
    T_STC_K,
};
