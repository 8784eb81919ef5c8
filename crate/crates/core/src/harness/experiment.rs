use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::metrics::{compute_metrics, ControllerTraces, EventOracle, MetricsReport, TraceView};
use super::scenario::{ControllerSpec, ScenarioConfig};
use crate::ann::{generate_training_data, train_gmpp_model, FeatureSpec, GmppModel};
use crate::controller::{
    run_episode, write_telemetry, ControllerConfig, ControllerKind, Plant, StepRecord,
};
use crate::detect::{
    calibrate_difference_threshold_on_traces, calibrate_threshold_on_traces, GllrParams,
};
use crate::error::{Error, Result};
use crate::pv::{find_gmpp, EnvironmentProfile};
use crate::rng::stream_seed;
use crate::smc::SmcParams;

/// Seed stream offset of the offline calibration episodes.
const CALIBRATION_STREAM: u64 = 1 << 32;

/// Values fixed by the offline phase and shared by every controller.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationSummary {
    pub v0_v: f64,
    pub sigma0_v: f64,
    pub sigma_nu_w: f64,
    pub b: f64,
    pub h: f64,
    pub h_mean_run_length: f64,
    pub h1_w: f64,
    pub h1_mean_run_length: f64,
}

/// Trained networks keyed by feature layout.
#[derive(Debug, Clone, Default)]
pub struct ModelSet {
    pub models: Vec<(FeatureSpec, Arc<GmppModel>)>,
}

impl ModelSet {
    pub fn get(&self, spec: &FeatureSpec) -> Option<Arc<GmppModel>> {
        self.models
            .iter()
            .find(|(s, _)| s == spec)
            .map(|(_, m)| m.clone())
    }
}

/// Everything a replication needs besides its seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub oracle: Vec<EventOracle>,
    pub calibration: CalibrationSummary,
    pub controllers: Vec<(ControllerSpec, ControllerConfig, Option<Arc<GmppModel>>)>,
}

/// Oracle GMPP of every schedule entry.
pub fn scenario_oracle(s: &ScenarioConfig) -> Result<Vec<EventOracle>> {
    let sched = &s.environment.schedule;
    sched
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let (v, p) = find_gmpp(&e.conditions, &s.topology, &s.module)?;
            let t_stop = sched.get(k + 1).map_or(s.experiment.t_end, |n| n.t_start);
            Ok(EventOracle {
                index: k,
                t_start: e.t_start,
                t_stop,
                v_gmpp: v,
                p_gmpp: p,
            })
        })
        .collect()
}

/// Train one network per distinct feature layout among the controllers.
pub fn train_models(s: &ScenarioConfig) -> Result<ModelSet> {
    let mut set = ModelSet::default();
    let a = &s.experiment.ann;
    let v_max = s.topology.v_oc_nameplate(&s.module);
    for c in &s.controllers {
        let Some(spec) = s.feature_spec(c) else {
            continue;
        };
        if set.get(&spec).is_some() {
            continue;
        }
        let data = generate_training_data(
            &spec,
            &s.topology,
            &s.module,
            &a.levels,
            a.probes_per_pattern,
            a.seed,
        )?;
        let (model, _) = train_gmpp_model(&data, &a.hidden, v_max, &a.train, a.seed)?;
        set.models.push((spec, Arc::new(model)));
    }
    Ok(set)
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (
        m,
        (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt(),
    )
}

fn base_config(s: &ScenarioConfig, v0: f64, sigma0: f64) -> ControllerConfig {
    let e = &s.experiment;
    let smc =
        SmcParams::new(e.sigma_w2.sqrt(), e.sigma_v2.sqrt(), v0, sigma0).with_tracking_limits();
    let mut cfg = ControllerConfig::enhanced(smc, GllrParams::with_defaults(1.0, 1.0), None);
    cfg.f_s = e.f_s;
    cfg
}

fn offline_traces(
    s: &ScenarioConfig,
    cfg: &ControllerConfig,
    plant: &Plant,
    stream: u64,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let c = &s.experiment.calibration;
    let skip = (c.warmup * s.experiment.f_s).ceil() as usize;
    let runs = (0..c.episodes)
        .into_par_iter()
        .map(|k| {
            run_episode(
                cfg,
                None,
                plant,
                c.episode,
                stream_seed(s.experiment.base_seed, stream + k as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let p = runs
        .iter()
        .map(|r| r[skip..].iter().map(|x| x.p_meas).collect())
        .collect();
    let v = runs
        .iter()
        .flat_map(|r| r[skip..].iter().map(|x| x.v_meas))
        .collect();
    Ok((p, v))
}

/// Offline phase under the first schedule entry: the particle prior and σ_ν
/// come from a tracker run with detection off, h from the GLLR replayed on
/// those power traces, and h1 from the consecutive-difference rule replayed
/// on incremental-conductance traces. Both target the scenario's γ.
pub fn calibrate(s: &ScenarioConfig) -> Result<CalibrationSummary> {
    let e = &s.experiment;
    let first = &s.environment.schedule[0].conditions;
    let plant = Plant {
        topo: s.topology.clone(),
        params: s.module,
        env: EnvironmentProfile::constant(first.clone()),
    };
    let (v_start, _) = find_gmpp(first, &s.topology, &s.module)?;
    let mut tracker = base_config(s, v_start, 1.0);
    tracker.detection = false;
    let (p_traces, v_all) = offline_traces(s, &tracker, &plant, CALIBRATION_STREAM)?;
    let (_, sigma_nu) = mean_std(&p_traces.concat());
    let (v0, v_sd) = mean_std(&v_all);
    let sigma0 = v_sd.max(e.sigma_v2.sqrt());
    let sigma_nu = sigma_nu.max(f64::EPSILON);
    let gllr = GllrParams::with_defaults(sigma_nu, 1.0);
    let cal = calibrate_threshold_on_traces(gllr, &p_traces, e.gamma, e.f_s, e.calibration.runs)?;

    let ic = base_config(s, v0, sigma0).with_kind(ControllerKind::IcBaseline);
    let (ic_traces, _) = offline_traces(s, &ic, &plant, 2 * CALIBRATION_STREAM)?;
    let cal1 =
        calibrate_difference_threshold_on_traces(&ic_traces, e.gamma, e.f_s, e.calibration.runs)?;
    Ok(CalibrationSummary {
        v0_v: v0,
        sigma0_v: sigma0,
        sigma_nu_w: sigma_nu,
        b: gllr.b,
        h: cal.h,
        h_mean_run_length: cal.mean_run_length,
        h1_w: cal1.h,
        h1_mean_run_length: cal1.mean_run_length,
    })
}

/// Controller settings for one scenario entry after calibration.
pub fn controller_config(
    s: &ScenarioConfig,
    c: &ControllerSpec,
    cal: &CalibrationSummary,
) -> ControllerConfig {
    let mut cfg = base_config(s, cal.v0_v, cal.sigma0_v).with_kind(c.kind);
    cfg.gllr = GllrParams {
        h: cal.h,
        ..GllrParams::with_defaults(cal.sigma_nu_w, cal.h)
    };
    cfg.h1 = cal.h1_w;
    cfg.ann_mode = c.ann_mode;
    if let Some(m) = c.m_probes {
        cfg.m_probes = m;
    }
    if let Some(g) = c.slope_guard {
        cfg.slope_guard = g;
    }
    if let Some(w) = c.slope_window {
        cfg.slope_window = w;
    }
    if let Some(k) = c.ic_gain {
        cfg.ic_gain = k;
    }
    cfg
}

/// Calibrate and bind networks, reusing `models` where they cover a controller.
pub fn prepare(s: &ScenarioConfig, models: &ModelSet) -> Result<Prepared> {
    s.validate()?;
    let calibration = calibrate(s)?;
    let controllers = s
        .controllers
        .iter()
        .map(|c| {
            let cfg = controller_config(s, c, &calibration);
            let model = match s.feature_spec(c) {
                Some(spec) => Some(models.get(&spec).ok_or_else(|| {
                    Error::InvalidInput(format!("no network trained for controller {:?}", c.name))
                })?),
                None => None,
            };
            cfg.validate()?;
            Ok((c.clone(), cfg, model))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        oracle: scenario_oracle(s)?,
        calibration,
        controllers,
    })
}

/// Outcome of a full experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: MetricsReport,
    pub prepared: Prepared,
    /// `(controller, replication, message)` of each failed episode.
    pub failures: Vec<(String, usize, String)>,
}

pub fn trace_file_name(controller: &str, rep: usize) -> String {
    format!("trace_{controller}_{rep}.csv")
}

fn plant(s: &ScenarioConfig) -> Plant {
    Plant {
        topo: s.topology.clone(),
        params: s.module,
        env: s.environment.clone(),
    }
}

fn uses_gllr(kind: ControllerKind) -> bool {
    kind == ControllerKind::Enhanced
}

fn uses_threshold(kind: ControllerKind) -> bool {
    kind == ControllerKind::AnnIcBaseline
}

/// Run every replication of every controller with seeds `base_seed + k`,
/// compute the metrics and, when `out` is given, write the CSV files.
pub fn run_prepared(
    s: &ScenarioConfig,
    prepared: Prepared,
    out: Option<&Path>,
) -> Result<ExperimentOutput> {
    let e = &s.experiment;
    let plant = plant(s);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let mut per_controller = Vec::new();
    let mut failures = Vec::new();
    for (spec, cfg, model) in &prepared.controllers {
        let results: Vec<std::result::Result<TraceView, String>> = (0..e.n_replications)
            .into_par_iter()
            .map(|k| {
                let recs: Vec<StepRecord> = run_episode(
                    cfg,
                    model.clone(),
                    &plant,
                    e.t_end,
                    e.base_seed.wrapping_add(k as u64),
                )
                .map_err(|err| err.to_string())?;
                if let (Some(dir), true) = (out, e.write_traces) {
                    let mut buf = Vec::new();
                    write_telemetry(&mut buf, &recs).map_err(|err| err.to_string())?;
                    std::fs::write(dir.join(trace_file_name(&spec.name, k)), buf)
                        .map_err(|err| err.to_string())?;
                }
                Ok(TraceView::from_records(&recs))
            })
            .collect();
        let mut traces = Vec::new();
        let mut failed = 0;
        for (k, r) in results.into_iter().enumerate() {
            match r {
                Ok(tr) => traces.push(tr),
                Err(msg) => {
                    failed += 1;
                    failures.push((spec.name.clone(), k, msg));
                }
            }
        }
        per_controller.push((spec, traces, failed));
    }
    let view: Vec<ControllerTraces> = per_controller
        .into_iter()
        .map(|(spec, traces, failed)| ControllerTraces {
            name: &spec.name,
            uses_gllr: uses_gllr(spec.kind),
            uses_threshold: uses_threshold(spec.kind),
            traces,
            failures: failed,
        })
        .collect();
    let report = compute_metrics(&prepared.oracle, &view, e.resource_window)?;
    if let Some(dir) = out {
        write_outputs(dir, &report, &prepared.calibration)?;
    }
    Ok(ExperimentOutput {
        report,
        prepared,
        failures,
    })
}

fn write_outputs(dir: &Path, report: &MetricsReport, cal: &CalibrationSummary) -> Result<()> {
    std::fs::write(dir.join("metrics.csv"), report.metrics_csv())?;
    std::fs::write(dir.join("efficiency.csv"), report.efficiency_csv())?;
    std::fs::write(dir.join("oracle.csv"), report.oracle_csv())?;
    std::fs::write(
        dir.join("calibration.json"),
        serde_json::to_string_pretty(cal)? + "\n",
    )?;
    Ok(())
}

/// Train, calibrate and run.
pub fn run_experiment(s: &ScenarioConfig, out: Option<&Path>) -> Result<ExperimentOutput> {
    s.validate()?;
    let models = train_models(s)?;
    let prepared = prepare(s, &models)?;
    run_prepared(s, prepared, out)
}

/// Recompute the metrics from the trace files in `dir`. Missing replications
/// count as failures, as they do when an episode fails.
pub fn recompute_metrics(s: &ScenarioConfig, dir: &Path) -> Result<MetricsReport> {
    let oracle = scenario_oracle(s)?;
    let mut all = Vec::new();
    for c in &s.controllers {
        let mut traces = Vec::new();
        let mut failures = 0;
        for k in 0..s.experiment.n_replications {
            match std::fs::read_to_string(dir.join(trace_file_name(&c.name, k))) {
                Ok(text) => traces.push(TraceView::from_csv(&text)?),
                Err(err) if err.kind() == std::io::ErrorKind::NotFound => failures += 1,
                Err(err) => return Err(err.into()),
            }
        }
        all.push(ControllerTraces {
            name: &c.name,
            uses_gllr: uses_gllr(c.kind),
            uses_threshold: uses_threshold(c.kind),
            traces,
            failures,
        });
    }
    compute_metrics(&oracle, &all, s.experiment.resource_window)
}
