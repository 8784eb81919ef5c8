//! Monte-Carlo threshold calibration to a target mean run length.
//!
//! Both detectors here raise an alarm the first time a statistic path, which
//! does not depend on the threshold, reaches the threshold. Paths are simulated
//! once per run (common random numbers), so the mean run length is monotone in
//! the threshold and plain bisection applies.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use super::gllr::{GllrParams, GllrState};
use super::threshold::ThresholdDetector;
use crate::error::{Error, Result};
use crate::rng::stream_seed;

const MAX_BISECTION_STEPS: usize = 40;
/// Relative tolerance on the achieved mean run length.
pub const CALIBRATION_REL_TOL: f64 = 0.10;
/// Paths are censored at this multiple of the target run length.
const CENSOR_FACTOR: f64 = 20.0;

#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    pub h: f64,
    pub target_run_length: f64,
    pub mean_run_length: f64,
    /// Run length (samples until alarm) of every calibration run at `h`.
    pub run_lengths: Vec<u64>,
}

/// Running-maximum records of a statistic path: `(sample_index, value)` pairs
/// at which the running maximum strictly increases.
#[derive(Debug, Clone)]
struct Records {
    points: Vec<(u64, f64)>,
    len: u64,
}

impl Records {
    fn from_path(path: impl Iterator<Item = f64>, len: u64) -> Self {
        let mut points = Vec::new();
        let mut best = f64::NEG_INFINITY;
        for (k, s) in path.take(len as usize).enumerate() {
            if s > best {
                best = s;
                points.push((k as u64 + 1, s));
            }
        }
        Self { points, len }
    }

    /// First sample (1-based) where the statistic reaches `h`, or the censoring length.
    fn run_length(&self, h: f64) -> u64 {
        match self.points.iter().find(|(_, s)| *s >= h) {
            Some(&(k, _)) => k,
            None => self.len,
        }
    }
}

fn mean_run_length(records: &[Records], h: f64) -> f64 {
    records.iter().map(|r| r.run_length(h) as f64).sum::<f64>() / records.len() as f64
}

fn calibrate_records(records: &[Records], target: f64, what: &'static str) -> Result<Calibration> {
    let max_stat = records
        .iter()
        .filter_map(|r| r.points.last().map(|p| p.1))
        .fold(0.0, f64::max);
    let mut lo = 0.0;
    let mut hi = max_stat.max(1e-12);
    if mean_run_length(records, hi) < target {
        return Err(Error::NonConvergence {
            what,
            iterations: 0,
            lo,
            hi,
        });
    }
    let mut best = (hi, mean_run_length(records, hi));
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let m = mean_run_length(records, mid);
        if (m - target).abs() < (best.1 - target).abs() {
            best = (mid, m);
        }
        if m < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (best.1 - target).abs() > CALIBRATION_REL_TOL * target {
        return Err(Error::NonConvergence {
            what,
            iterations: MAX_BISECTION_STEPS,
            lo,
            hi,
        });
    }
    Ok(Calibration {
        h: best.0,
        target_run_length: target,
        mean_run_length: best.1,
        run_lengths: records.iter().map(|r| r.run_length(best.0)).collect(),
    })
}

fn check_calibration_inputs(sigma_nu: f64, gamma: f64, f_s: f64, n_runs: usize) -> Result<f64> {
    if n_runs < 100 {
        return Err(Error::InvalidInput(format!(
            "n_runs must be >= 100, got {n_runs}"
        )));
    }
    for (name, x) in [("sigma_nu", sigma_nu), ("gamma", gamma), ("f_s", f_s)] {
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "{name} must be positive and finite"
            )));
        }
    }
    Ok(gamma * f_s)
}

/// The `g_t` path of the GLLR recursion on white Gaussian noise.
pub fn gllr_noise_path(params: GllrParams, seed: u64) -> impl Iterator<Item = f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.sigma_nu).expect("sigma_nu validated");
    let mut state = GllrState::new(0.0);
    std::iter::from_fn(move || {
        let x = noise.sample(&mut rng);
        super::gllr::gllr_step(&mut state, x, &params).ok()?;
        Some(state.g)
    })
}

/// Bisection on `h` so the mean noise-only run length equals `gamma * f_s`.
pub fn calibrate_threshold(
    b: f64,
    sigma_nu: f64,
    p: usize,
    gamma: f64,
    f_s: f64,
    n_runs: usize,
    seed: u64,
) -> Result<Calibration> {
    let target = check_calibration_inputs(sigma_nu, gamma, f_s, n_runs)?;
    let params = GllrParams {
        b,
        h: f64::MAX,
        sigma_nu,
        p,
        gamma,
    };
    params.validate()?;
    let len = (CENSOR_FACTOR * target).ceil() as u64;
    let records: Vec<Records> = (0..n_runs)
        .into_par_iter()
        .map(|r| Records::from_path(gllr_noise_path(params, stream_seed(seed, r as u64)), len))
        .collect();
    calibrate_records(&records, target, "gllr threshold calibration")
}

/// Mean noise-only run length of the GLLR detector at a fixed threshold.
pub fn gllr_mean_run_length(params: GllrParams, n_runs: usize, seed: u64, censor: u64) -> f64 {
    let total: u64 = (0..n_runs)
        .into_par_iter()
        .map(|r| {
            gllr_noise_path(params, stream_seed(seed, r as u64))
                .take(censor as usize)
                .position(|g| g >= params.h)
                .map_or(censor, |k| k as u64 + 1)
        })
        .sum();
    total as f64 / n_runs as f64
}

/// Calibrate the consecutive-difference rule `|P(t) - P(t-1)| >= h1` on white noise.
pub fn calibrate_difference_threshold(
    sigma_nu: f64,
    gamma: f64,
    f_s: f64,
    n_runs: usize,
    seed: u64,
) -> Result<Calibration> {
    let target = check_calibration_inputs(sigma_nu, gamma, f_s, n_runs)?;
    let len = (CENSOR_FACTOR * target).ceil() as u64;
    let records: Vec<Records> = (0..n_runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, r as u64));
            let noise = Normal::new(0.0, sigma_nu).expect("validated");
            let mut prev: Option<f64> = None;
            let path = std::iter::from_fn(|| {
                let x = noise.sample(&mut rng);
                let s = ThresholdDetector::statistic(prev, x);
                prev = Some(x);
                Some(s)
            });
            Records::from_path(path, len)
        })
        .collect();
    calibrate_records(&records, target, "difference threshold calibration")
}

/// `(trace_index, start_offset)` for each run, spread evenly over the traces.
fn trace_runs(traces: &[Vec<f64>], n_runs: usize, min_len: usize) -> Result<Vec<(usize, usize)>> {
    if traces.is_empty() || traces.iter().any(|t| t.len() < min_len) {
        return Err(Error::InvalidInput(format!(
            "calibration needs at least one trace of {min_len} or more samples"
        )));
    }
    if traces.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(
            "calibration traces contain non-finite samples".into(),
        ));
    }
    let per_trace = n_runs.div_ceil(traces.len());
    Ok((0..n_runs)
        .map(|r| {
            let ti = r % traces.len();
            (ti, (r / traces.len()) * traces[ti].len() / per_trace)
        })
        .collect())
}

/// Calibrate the GLLR threshold against recorded power traces instead of white noise.
///
/// Each run starts at an offset into a trace (read circularly), takes the mean of the
/// next `REBASELINE_SAMPLES` readings as nominal power and then follows the recursion.
/// This accounts for any slow operating-point wander that a closed-loop tracker adds
/// on top of the measurement noise.
pub fn calibrate_threshold_on_traces(
    params: GllrParams,
    traces: &[Vec<f64>],
    gamma: f64,
    f_s: f64,
    n_runs: usize,
) -> Result<Calibration> {
    let target = check_calibration_inputs(params.sigma_nu, gamma, f_s, n_runs)?;
    let params = GllrParams {
        h: f64::MAX,
        gamma,
        ..params
    };
    params.validate()?;
    let k = super::gllr::REBASELINE_SAMPLES;
    let len = (CENSOR_FACTOR * target).ceil() as u64;
    let starts = trace_runs(traces, n_runs, 2 * k)?;
    let records: Vec<Records> = starts
        .par_iter()
        .map(|&(ti, start)| {
            let trace = &traces[ti];
            let at = |j: usize| trace[(start + j) % trace.len()];
            let nominal = (0..k).map(at).sum::<f64>() / k as f64;
            let mut state = GllrState::new(nominal);
            let mut j = k;
            let path = std::iter::from_fn(|| {
                super::gllr::gllr_step(&mut state, at(j), &params).ok()?;
                j += 1;
                Some(state.g)
            });
            Records::from_path(path, len)
        })
        .collect();
    calibrate_records(&records, target, "gllr trace calibration")
}

/// Calibrate the consecutive-difference rule against recorded power traces.
pub fn calibrate_difference_threshold_on_traces(
    traces: &[Vec<f64>],
    gamma: f64,
    f_s: f64,
    n_runs: usize,
) -> Result<Calibration> {
    let target = check_calibration_inputs(1.0, gamma, f_s, n_runs)?;
    let len = (CENSOR_FACTOR * target).ceil() as u64;
    let starts = trace_runs(traces, n_runs, 2)?;
    let records: Vec<Records> = starts
        .par_iter()
        .map(|&(ti, start)| {
            let trace = &traces[ti];
            let mut j = 0;
            let path = std::iter::from_fn(|| {
                let prev = trace[(start + j) % trace.len()];
                let now = trace[(start + j + 1) % trace.len()];
                j += 1;
                Some(ThresholdDetector::statistic(Some(prev), now))
            });
            Records::from_path(path, len)
        })
        .collect();
    calibrate_records(&records, target, "difference trace calibration")
}

/// Histogram of run lengths as `(bin_start, bin_end, count)` with `bins` equal bins.
pub fn run_length_histogram(run_lengths: &[u64], bins: usize) -> Vec<(u64, u64, usize)> {
    let max = run_lengths.iter().copied().max().unwrap_or(0);
    let bins = bins.max(1);
    let width = (max / bins as u64 + 1).max(1);
    let mut counts = vec![0usize; bins];
    for &r in run_lengths {
        counts[((r / width) as usize).min(bins - 1)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (k as u64 * width, (k as u64 + 1) * width, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::gllr::default_drift;

    #[test]
    fn records_give_first_crossing() {
        let r = Records::from_path([1.0, 0.5, 3.0, 2.0, 5.0].into_iter(), 5);
        assert_eq!(r.run_length(0.0), 1);
        assert_eq!(r.run_length(2.0), 3);
        assert_eq!(r.run_length(4.0), 5);
        assert_eq!(r.run_length(9.0), 5);
    }

    #[test]
    fn calibration_is_deterministic() {
        let a = calibrate_threshold(default_drift(5), 1.0, 5, 2.0, 20.0, 100, 9).unwrap();
        let b = calibrate_threshold(default_drift(5), 1.0, 5, 2.0, 20.0, 100, 9).unwrap();
        assert_eq!(a.h, b.h);
        assert_eq!(a.run_lengths, b.run_lengths);
        assert!((a.mean_run_length - 40.0).abs() <= 4.0);
    }

    #[test]
    fn too_few_runs_rejected() {
        assert!(calibrate_threshold(1.0, 1.0, 5, 20.0, 20.0, 50, 0).is_err());
    }

    #[test]
    fn difference_threshold_hits_target() {
        let c = calibrate_difference_threshold(1.0, 5.0, 20.0, 200, 3).unwrap();
        assert!((c.mean_run_length - 100.0).abs() <= 10.0);
        // single-sample exceedance probability ~ 1/100 for a N(0, 2) difference
        assert!(c.h > 3.0 && c.h < 4.5, "h1 = {}", c.h);
    }

    #[test]
    fn histogram_counts_everything() {
        let h = run_length_histogram(&[1, 5, 9, 10, 400], 4);
        assert_eq!(h.iter().map(|b| b.2).sum::<usize>(), 5);
        assert_eq!(h.len(), 4);
    }
}
