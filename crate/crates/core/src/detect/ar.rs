//! Autoregressive model of the fault signal:
//! `s(t) = mu + sum_j a(j) (s(t-j) - mu) + w(t)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub coeffs: Vec<f64>,
    /// Process mean, W.
    pub mean: f64,
    /// Innovation variance, W².
    pub innovation_var: f64,
}

impl ArModel {
    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    /// One-step-ahead prediction from lags, most recent first.
    pub fn predict(&self, lags_recent_first: &[f64]) -> f64 {
        self.mean
            + self
                .coeffs
                .iter()
                .zip(lags_recent_first)
                .map(|(a, s)| a * (s - self.mean))
                .sum::<f64>()
    }

    /// Stationarity via the step-down (reverse Levinson) recursion:
    /// stable iff every reflection coefficient has magnitude below one.
    pub fn is_stable(&self) -> bool {
        let mut phi = self.coeffs.clone();
        while let Some(&k) = phi.last() {
            if !(k.abs() < 1.0) {
                return false;
            }
            let m = phi.len();
            let denom = 1.0 - k * k;
            phi = (0..m - 1)
                .map(|j| (phi[j] + k * phi[m - 2 - j]) / denom)
                .collect();
        }
        true
    }
}

/// Solve a small dense system with partial pivoting. `a` is row-major n×n.
fn solve_linear(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    let scale = a
        .iter()
        .fold(0.0_f64, |m, x| m.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .expect("non-empty range");
        if a[piv * n + col].abs() <= 1e-12 * scale {
            return Err(Error::Singular(format!("pivot {col} vanishes")));
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    Ok(x)
}

/// Least-squares AR coefficients from centered regression rows.
fn least_squares(signal: &[f64], rows: &[usize], p: usize, mean: f64) -> Result<Vec<f64>> {
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    for &t in rows {
        let y = signal[t] - mean;
        for i in 0..p {
            let xi = signal[t - 1 - i] - mean;
            xty[i] += xi * y;
            for j in 0..p {
                xtx[i * p + j] += xi * (signal[t - 1 - j] - mean);
            }
        }
    }
    solve_linear(xtx, xty, p)
}

fn check_order(signal: &[f64], p: usize) -> Result<()> {
    if p == 0 {
        return Err(Error::InvalidInput("AR order must be >= 1".into()));
    }
    if signal.len() <= 10 * p {
        return Err(Error::InsufficientSamples {
            needed: 10 * p + 1,
            got: signal.len(),
        });
    }
    Ok(())
}

/// Ordinary least-squares fit of an AR(p) model.
pub fn fit_ar(signal: &[f64], p: usize) -> Result<ArModel> {
    check_order(signal, p)?;
    let mean = signal.iter().sum::<f64>() / signal.len() as f64;
    if signal.iter().all(|&s| s == signal[0]) {
        return Ok(ArModel {
            coeffs: vec![0.0; p],
            mean: signal[0],
            innovation_var: 0.0,
        });
    }
    let rows: Vec<usize> = (p..signal.len()).collect();
    let coeffs = least_squares(signal, &rows, p, mean)?;
    let model = ArModel {
        coeffs,
        mean,
        innovation_var: 0.0,
    };
    let sse: f64 = rows
        .iter()
        .map(|&t| {
            let lags: Vec<f64> = (1..=p).map(|j| signal[t - j]).collect();
            (signal[t] - model.predict(&lags)).powi(2)
        })
        .sum();
    Ok(ArModel {
        innovation_var: sse / rows.len() as f64,
        ..model
    })
}

/// K-fold one-step-ahead NRMSE (prediction RMSE over signal standard deviation)
/// for each candidate order. Folds are contiguous blocks of regression rows.
pub fn ar_cross_validate_nrmse(
    signal: &[f64],
    orders: &[usize],
    k_folds: usize,
) -> Result<Vec<(usize, f64)>> {
    if k_folds < 2 {
        return Err(Error::InvalidInput("k_folds must be >= 2".into()));
    }
    let n = signal.len() as f64;
    let mean_all = signal.iter().sum::<f64>() / n;
    let std = (signal.iter().map(|s| (s - mean_all).powi(2)).sum::<f64>() / n).sqrt();
    if std == 0.0 {
        return Err(Error::Singular("signal has zero variance".into()));
    }
    orders
        .iter()
        .map(|&p| {
            check_order(signal, p)?;
            let rows: Vec<usize> = (p..signal.len()).collect();
            let fold_len = rows.len().div_ceil(k_folds);
            let mut sse = 0.0;
            for test in rows.chunks(fold_len) {
                let (first, last) = (test[0], test[test.len() - 1]);
                let train: Vec<usize> = rows
                    .iter()
                    .copied()
                    .filter(|&t| t < first || t > last)
                    .collect();
                let mean = train.iter().map(|&t| signal[t]).sum::<f64>() / train.len() as f64;
                let coeffs = least_squares(signal, &train, p, mean)?;
                let model = ArModel {
                    coeffs,
                    mean,
                    innovation_var: 0.0,
                };
                for &t in test {
                    let lags: Vec<f64> = (1..=p).map(|j| signal[t - j]).collect();
                    sse += (signal[t] - model.predict(&lags)).powi(2);
                }
            }
            Ok((p, (sse / rows.len() as f64).sqrt() / std))
        })
        .collect()
}

/// Simulate the AR fault and add white measurement noise of std `sigma_nu`.
pub fn synth_fault_signal(
    model: &ArModel,
    length: usize,
    sigma_nu: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if !model.is_stable() {
        return Err(Error::UnstableModel(format!(
            "coefficients {:?}",
            model.coeffs
        )));
    }
    if !(model.innovation_var >= 0.0) || !(sigma_nu >= 0.0) {
        return Err(Error::InvalidInput("variances must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let innov = Normal::new(0.0, model.innovation_var.sqrt()).expect("checked");
    let noise = Normal::new(0.0, sigma_nu).expect("checked");
    let p = model.order();
    let burn_in = 10 * p + 100;
    let mut hist = vec![model.mean; p];
    let mut out = Vec::with_capacity(length);
    for k in 0..burn_in + length {
        let s = model.predict(&hist) + innov.sample(&mut rng);
        if p > 0 {
            hist.rotate_right(1);
            hist[0] = s;
        }
        if k >= burn_in {
            out.push(s + noise.sample(&mut rng));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ar1(a: f64, var: f64) -> ArModel {
        ArModel {
            coeffs: vec![a],
            mean: 0.0,
            innovation_var: var,
        }
    }

    #[test]
    fn recovers_ar1_coefficient() {
        let s = synth_fault_signal(&ar1(0.8, 1.0), 20_000, 0.0, 1).unwrap();
        let m = fit_ar(&s, 1).unwrap();
        assert!((m.coeffs[0] - 0.8).abs() < 0.05, "{:?}", m.coeffs);
        assert!((m.innovation_var - 1.0).abs() < 0.1);
    }

    #[test]
    fn white_noise_fits_near_zero() {
        let s = synth_fault_signal(&ar1(0.0, 1.0), 10_000, 0.0, 2).unwrap();
        let m = fit_ar(&s, 4).unwrap();
        assert!(m.coeffs.iter().all(|a| a.abs() < 0.1), "{:?}", m.coeffs);
    }

    #[test]
    fn constant_signal_has_zero_residual() {
        let m = fit_ar(&[7.5; 100], 3).unwrap();
        assert_eq!(m.mean, 7.5);
        assert_eq!(m.innovation_var, 0.0);
    }

    #[test]
    fn short_signal_and_zero_order_rejected() {
        assert!(fit_ar(&[1.0; 10], 1).is_err());
        assert!(fit_ar(&[1.0; 100], 0).is_err());
        let s = synth_fault_signal(&ar1(0.5, 1.0), 500, 0.0, 3).unwrap();
        assert!(ar_cross_validate_nrmse(&s, &[0], 5).is_err());
    }

    #[test]
    fn stability_check() {
        assert!(ar1(0.9, 1.0).is_stable());
        assert!(!ar1(1.1, 1.0).is_stable());
        // roots of 1 - 1.5z + 0.5z^2 include z = 1: unit root
        assert!(!ArModel {
            coeffs: vec![1.5, -0.5],
            mean: 0.0,
            innovation_var: 1.0
        }
        .is_stable());
        assert!(ArModel {
            coeffs: vec![0.5, 0.3],
            mean: 0.0,
            innovation_var: 1.0
        }
        .is_stable());
        assert!(synth_fault_signal(&ar1(1.1, 1.0), 10, 0.0, 0).is_err());
    }

    #[test]
    fn degenerate_synthesis_is_mean_plus_noise() {
        let m = ArModel {
            coeffs: vec![0.0, 0.0],
            mean: 3.0,
            innovation_var: 0.0,
        };
        let s = synth_fault_signal(&m, 20_000, 0.0, 5).unwrap();
        assert!(s.iter().all(|&x| x == 3.0));
        let s = synth_fault_signal(&m, 20_000, 1.0, 5).unwrap();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        assert!((mean - 3.0).abs() < 0.05);
    }

    #[test]
    fn solver_matches_known_system() {
        let x = solve_linear(vec![2.0, 1.0, 1.0, 3.0], vec![3.0, 5.0], 2).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12 && (x[1] - 1.4).abs() < 1e-12);
        assert!(solve_linear(vec![1.0, 2.0, 2.0, 4.0], vec![1.0, 2.0], 2).is_err());
    }
}
