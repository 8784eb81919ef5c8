use std::fmt::Write as _;

use serde::Serialize;

use crate::controller::{StepRecord, TELEMETRY_HEADER};
use crate::error::{Error, Result};

/// Power fractions of the new GMPP at which delays are reported.
pub const DELAY_FRACTIONS: [f64; 3] = [0.70, 0.80, 0.95];
/// Samples a trace must stay at or above a fraction to count as reached.
pub const HOLD_SAMPLES: usize = 3;
/// Text written in place of a delay that was never reached.
pub const NOT_REACHED: &str = "not-reached";

/// The telemetry columns the metrics need.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceView {
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub v: Vec<f64>,
    pub alarm: Vec<bool>,
    pub ann: Vec<bool>,
}

impl TraceView {
    pub fn from_records(records: &[StepRecord]) -> Self {
        Self {
            t: records.iter().map(|r| r.t).collect(),
            p: records.iter().map(|r| r.p_meas).collect(),
            v: records.iter().map(|r| r.v_meas).collect(),
            alarm: records.iter().map(|r| r.alarm).collect(),
            ann: records.iter().map(|r| r.ann_triggered).collect(),
        }
    }

    /// Parse a telemetry CSV written by [`crate::controller::write_telemetry`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(TELEMETRY_HEADER) {
            return Err(Error::InvalidInput("telemetry header mismatch".into()));
        }
        let mut view = Self::default();
        for (n, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 10 {
                return Err(Error::InvalidInput(format!(
                    "telemetry row {} has {} columns",
                    n + 2,
                    cols.len()
                )));
            }
            let num = |k: usize| {
                cols[k].parse::<f64>().map_err(|_| {
                    Error::InvalidInput(format!(
                        "telemetry row {}: bad number {:?}",
                        n + 2,
                        cols[k]
                    ))
                })
            };
            let flag = |k: usize| match cols[k] {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::InvalidInput(format!(
                    "telemetry row {}: bad flag {other:?}",
                    n + 2
                ))),
            };
            view.t.push(num(0)?);
            view.v.push(num(2)?);
            view.p.push(num(4)?);
            view.alarm.push(flag(6)?);
            view.ann.push(flag(7)?);
        }
        Ok(view)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Replication-averaged power and voltage on a shared time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedTrace {
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub v: Vec<f64>,
}

pub fn average_traces(traces: &[TraceView]) -> Result<AveragedTrace> {
    let first = traces
        .first()
        .ok_or(Error::InsufficientSamples { needed: 1, got: 0 })?;
    if traces.iter().any(|tr| tr.t != first.t) {
        return Err(Error::InvalidInput(
            "replications do not share a time grid".into(),
        ));
    }
    let n = traces.len() as f64;
    let mut p = vec![0.0; first.len()];
    let mut v = vec![0.0; first.len()];
    for tr in traces {
        for k in 0..tr.len() {
            p[k] += tr.p[k];
            v[k] += tr.v[k];
        }
    }
    p.iter_mut().for_each(|x| *x /= n);
    v.iter_mut().for_each(|x| *x /= n);
    Ok(AveragedTrace {
        t: first.t.clone(),
        p,
        v,
    })
}

/// Sample indices with `t_from <= t < t_to`.
fn window(t: &[f64], t_from: f64, t_to: f64) -> std::ops::Range<usize> {
    let lo = t.partition_point(|&x| x < t_from);
    let hi = t.partition_point(|&x| x < t_to);
    lo..hi.max(lo)
}

/// Time after `t_shading` at which `p` first reaches `fraction * p_gmpp_new`
/// and stays there for [`HOLD_SAMPLES`] samples, looking only before `t_stop`.
/// `None` means the level was not reached.
pub fn delay_to_fraction(
    t: &[f64],
    p: &[f64],
    t_shading: f64,
    t_stop: f64,
    p_gmpp_new: f64,
    fraction: f64,
) -> Result<Option<f64>> {
    if t.len() != p.len() {
        return Err(Error::ShapeMismatch {
            expected: t.len(),
            got: p.len(),
        });
    }
    if !(p_gmpp_new > 0.0) || !(fraction > 0.0) {
        return Err(Error::InvalidInput(
            "p_gmpp_new and fraction must be positive".into(),
        ));
    }
    let w = window(t, t_shading, t_stop);
    let level = fraction * p_gmpp_new;
    let mut run = 0;
    for k in w {
        run = if p[k] >= level { run + 1 } else { 0 };
        if run == HOLD_SAMPLES {
            return Ok(Some(t[k + 1 - HOLD_SAMPLES] - t_shading));
        }
    }
    Ok(None)
}

/// `(1 - r_gllr / r_th) * 100` on per-second trigger rates over `duration`.
pub fn resource_saving(
    n_gllr_triggers: f64,
    n_threshold_triggers: f64,
    duration: f64,
) -> Result<f64> {
    if !(n_threshold_triggers > 0.0) {
        return Err(Error::InvalidInput(
            "threshold trigger count must be > 0".into(),
        ));
    }
    if !(duration > 0.0) || n_gllr_triggers < 0.0 {
        return Err(Error::InvalidInput(
            "duration must be > 0 and counts >= 0".into(),
        ));
    }
    Ok((1.0 - (n_gllr_triggers / duration) / (n_threshold_triggers / duration)) * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EfficiencyPoint {
    pub delay: f64,
    pub power_ratio: f64,
    pub voltage_ratio: f64,
}

/// Averaged power and voltage over the new GMPP values, from `t_shading` until `t_stop`.
pub fn efficiency_curve(
    avg: &AveragedTrace,
    t_shading: f64,
    t_stop: f64,
    p_gmpp_new: f64,
    v_gmpp_new: f64,
) -> Vec<EfficiencyPoint> {
    window(&avg.t, t_shading, t_stop)
        .map(|k| EfficiencyPoint {
            delay: avg.t[k] - t_shading,
            power_ratio: avg.p[k] / p_gmpp_new,
            voltage_ratio: avg.v[k] / v_gmpp_new,
        })
        .collect()
}

/// Oracle GMPP of one schedule entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EventOracle {
    pub index: usize,
    pub t_start: f64,
    pub t_stop: f64,
    pub v_gmpp: f64,
    pub p_gmpp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventMetrics {
    /// Schedule index of the change.
    pub event: usize,
    /// `(fraction, delay)`; `None` when not reached.
    pub delays: Vec<(f64, Option<f64>)>,
    /// Alarms per second over the resource window, averaged over replications.
    pub alarm_rate: f64,
    /// Network invocations inside the resource window, averaged over replications.
    pub ann_calls: f64,
    /// Replications that raised an alarm inside the window.
    pub detected: usize,
    /// Mean samples from the change to the first alarm, over detecting replications.
    pub detection_delay_samples: Option<f64>,
    pub efficiency: Vec<EfficiencyPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControllerMetrics {
    pub name: String,
    pub replications: usize,
    pub failures: usize,
    /// Network invocations per replication over the whole episode.
    pub ann_calls: f64,
    /// Alarms per replication over the whole episode.
    pub alarms: f64,
    pub events: Vec<EventMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SavingMetrics {
    pub event: usize,
    pub gllr_controller: String,
    pub threshold_controller: String,
    pub saving_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub oracle: Vec<EventOracle>,
    pub controllers: Vec<ControllerMetrics>,
    pub savings: Vec<SavingMetrics>,
}

/// Completed traces of one controller.
pub struct ControllerTraces<'a> {
    pub name: &'a str,
    pub uses_gllr: bool,
    pub uses_threshold: bool,
    pub traces: Vec<TraceView>,
    pub failures: usize,
}

fn event_metrics(
    traces: &[TraceView],
    avg: &AveragedTrace,
    ev: &EventOracle,
    window_s: f64,
) -> Result<EventMetrics> {
    let delays = DELAY_FRACTIONS
        .iter()
        .map(|&f| {
            Ok((
                f,
                delay_to_fraction(&avg.t, &avg.p, ev.t_start, ev.t_stop, ev.p_gmpp, f)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let w_end = (ev.t_start + window_s).min(ev.t_stop);
    let n = traces.len() as f64;
    let mut alarms = 0usize;
    let mut anns = 0usize;
    let mut detected = 0usize;
    let mut delay_sum = 0usize;
    for tr in traces {
        let w = window(&tr.t, ev.t_start, w_end);
        alarms += tr.alarm[w.clone()].iter().filter(|&&a| a).count();
        anns += tr.ann[w.clone()].iter().filter(|&&a| a).count();
        if let Some(k) = tr.alarm[w].iter().position(|&a| a) {
            detected += 1;
            delay_sum += k;
        }
    }
    Ok(EventMetrics {
        event: ev.index,
        delays,
        alarm_rate: alarms as f64 / n / (w_end - ev.t_start),
        ann_calls: anns as f64 / n,
        detected,
        detection_delay_samples: (detected > 0).then(|| delay_sum as f64 / detected as f64),
        efficiency: efficiency_curve(avg, ev.t_start, ev.t_stop, ev.p_gmpp, ev.v_gmpp),
    })
}

/// Every metric from the controllers' traces. `oracle` lists all schedule
/// entries; entries after the first are the changes that get metrics.
pub fn compute_metrics(
    oracle: &[EventOracle],
    controllers: &[ControllerTraces],
    window_s: f64,
) -> Result<MetricsReport> {
    let mut out = Vec::with_capacity(controllers.len());
    for c in controllers {
        let n = c.traces.len();
        if n == 0 {
            out.push(ControllerMetrics {
                name: c.name.to_string(),
                replications: 0,
                failures: c.failures,
                ann_calls: f64::NAN,
                alarms: f64::NAN,
                events: Vec::new(),
            });
            continue;
        }
        let avg = average_traces(&c.traces)?;
        let events = oracle[1..]
            .iter()
            .map(|ev| event_metrics(&c.traces, &avg, ev, window_s))
            .collect::<Result<Vec<_>>>()?;
        let count = |f: fn(&TraceView) -> &Vec<bool>| {
            c.traces
                .iter()
                .map(|tr| f(tr).iter().filter(|&&a| a).count())
                .sum::<usize>() as f64
                / n as f64
        };
        out.push(ControllerMetrics {
            name: c.name.to_string(),
            replications: n,
            failures: c.failures,
            ann_calls: count(|tr| &tr.ann),
            alarms: count(|tr| &tr.alarm),
            events,
        });
    }
    let mut savings = Vec::new();
    let gllr = controllers
        .iter()
        .position(|c| c.uses_gllr && !c.traces.is_empty());
    let th = controllers
        .iter()
        .position(|c| c.uses_threshold && !c.traces.is_empty());
    if let (Some(g), Some(t)) = (gllr, th) {
        for (eg, et) in out[g].events.iter().zip(&out[t].events) {
            if et.alarm_rate > 0.0 {
                savings.push(SavingMetrics {
                    event: eg.event,
                    gllr_controller: out[g].name.clone(),
                    threshold_controller: out[t].name.clone(),
                    saving_percent: resource_saving(eg.alarm_rate, et.alarm_rate, 1.0)?,
                });
            }
        }
    }
    Ok(MetricsReport {
        oracle: oracle.to_vec(),
        controllers: out,
        savings,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| NOT_REACHED.to_string(), |v| v.to_string())
}

impl MetricsReport {
    /// Long-format `controller,event,metric,value` rows.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("controller,event,metric,value\n");
        for c in &self.controllers {
            let _ = writeln!(s, "{},all,replications,{}", c.name, c.replications);
            let _ = writeln!(s, "{},all,failures,{}", c.name, c.failures);
            let _ = writeln!(s, "{},all,ann_calls_per_run,{}", c.name, c.ann_calls);
            let _ = writeln!(s, "{},all,alarms_per_run,{}", c.name, c.alarms);
            for e in &c.events {
                for (f, d) in &e.delays {
                    let _ = writeln!(
                        s,
                        "{},{},delay_{}pct_s,{}",
                        c.name,
                        e.event,
                        (f * 100.0).round(),
                        opt(*d)
                    );
                }
                let _ = writeln!(
                    s,
                    "{},{},alarm_rate_per_s,{}",
                    c.name, e.event, e.alarm_rate
                );
                let _ = writeln!(
                    s,
                    "{},{},ann_calls_in_window,{}",
                    c.name, e.event, e.ann_calls
                );
                let _ = writeln!(s, "{},{},detected_runs,{}", c.name, e.event, e.detected);
                let _ = writeln!(
                    s,
                    "{},{},detection_delay_samples,{}",
                    c.name,
                    e.event,
                    opt(e.detection_delay_samples)
                );
            }
        }
        for sv in &self.savings {
            let _ = writeln!(
                s,
                "{}/{},{},resource_saving_pct,{}",
                sv.gllr_controller, sv.threshold_controller, sv.event, sv.saving_percent
            );
        }
        s
    }

    /// `controller,event,delay_s,power_ratio,voltage_ratio` rows.
    pub fn efficiency_csv(&self) -> String {
        let mut s = String::from("controller,event,delay_s,power_ratio,voltage_ratio\n");
        for c in &self.controllers {
            for e in &c.events {
                for pt in &e.efficiency {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{}",
                        c.name, e.event, pt.delay, pt.power_ratio, pt.voltage_ratio
                    );
                }
            }
        }
        s
    }

    /// `event,t_start_s,t_stop_s,v_gmpp_v,p_gmpp_w` rows.
    pub fn oracle_csv(&self) -> String {
        let mut s = String::from("event,t_start_s,t_stop_s,v_gmpp_v,p_gmpp_w\n");
        for o in &self.oracle {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                o.index, o.t_start, o.t_stop, o.v_gmpp, o.p_gmpp
            );
        }
        s
    }

    pub fn controller(&self, name: &str) -> Option<&ControllerMetrics> {
        self.controllers.iter().find(|c| c.name == name)
    }
}
