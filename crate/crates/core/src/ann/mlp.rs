//! Feed-forward network with sigmoid hidden layers and a linear output unit,
//! trained by full-batch gradient descent (heavy-ball momentum or Adam).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Format tag written into every persisted model.
pub const MODEL_FORMAT: &str = "mppt-lab-mlp/1";

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub format: String,
    /// Input width, hidden widths, then 1.
    pub layer_sizes: Vec<usize>,
    /// Per layer, row-major `out x in`.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    /// Per-feature `(min, max)`.
    pub input_norm: Vec<(f64, f64)>,
    /// Output range in volts.
    pub output_norm: (f64, f64),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_mse: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    /// Heavy-ball gradient descent; `momentum` is the velocity decay.
    #[default]
    Momentum,
    /// Adam with `momentum` as the first-moment decay and 0.999 for the second.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
}

impl TrainOptions {
    /// 500 epochs of heavy-ball descent, learning rate 0.05, momentum 0.9.
    pub fn momentum_gd() -> Self {
        Self {
            epochs: 500,
            learning_rate: 0.05,
            momentum: 0.9,
            optimizer: Optimizer::Momentum,
        }
    }
}

impl Default for TrainOptions {
    /// 20000 epochs of Adam at learning rate 0.01.
    fn default() -> Self {
        Self {
            epochs: 20_000,
            learning_rate: 0.01,
            momentum: 0.9,
            optimizer: Optimizer::Adam,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Training MSE on normalized targets before each epoch's update, then after the last.
    pub mse_history: Vec<f64>,
}

fn check_norm(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidInput(format!(
            "{name} range needs min < max, got ({lo}, {hi})"
        )));
    }
    Ok(())
}

impl MlpModel {
    /// Zero weights and biases.
    pub fn zeros(
        layer_sizes: &[usize],
        input_norm: Vec<(f64, f64)>,
        output_norm: (f64, f64),
    ) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "bad architecture {layer_sizes:?}"
            )));
        }
        if *layer_sizes.last().unwrap() != 1 {
            return Err(Error::InvalidInput("output layer must have width 1".into()));
        }
        let model = Self {
            format: MODEL_FORMAT.into(),
            layer_sizes: layer_sizes.to_vec(),
            weights: layer_sizes
                .windows(2)
                .map(|w| vec![0.0; w[0] * w[1]])
                .collect(),
            biases: layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
            input_norm,
            output_norm,
            train_mse: None,
        };
        model.validate()?;
        Ok(model)
    }

    /// Uniform Glorot initialization from a seed.
    pub fn random(
        layer_sizes: &[usize],
        input_norm: Vec<(f64, f64)>,
        output_norm: (f64, f64),
        seed: u64,
    ) -> Result<Self> {
        let mut model = Self::zeros(layer_sizes, input_norm, output_norm)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, w) in model.weights.iter_mut().enumerate() {
            let limit = (6.0 / (layer_sizes[l] + layer_sizes[l + 1]) as f64).sqrt();
            w.iter_mut().for_each(|x| *x = rng.gen_range(-limit..limit));
        }
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != MODEL_FORMAT {
            return Err(Error::InvalidInput(format!(
                "unknown model format {:?}",
                self.format
            )));
        }
        let n = self.layer_sizes.len();
        if n < 2 || self.weights.len() != n - 1 || self.biases.len() != n - 1 {
            return Err(Error::ShapeMismatch {
                expected: n.saturating_sub(1),
                got: self.weights.len(),
            });
        }
        for l in 0..n - 1 {
            let expected = self.layer_sizes[l] * self.layer_sizes[l + 1];
            if self.weights[l].len() != expected {
                return Err(Error::ShapeMismatch {
                    expected,
                    got: self.weights[l].len(),
                });
            }
            if self.biases[l].len() != self.layer_sizes[l + 1] {
                return Err(Error::ShapeMismatch {
                    expected: self.layer_sizes[l + 1],
                    got: self.biases[l].len(),
                });
            }
        }
        if self.input_norm.len() != self.layer_sizes[0] {
            return Err(Error::ShapeMismatch {
                expected: self.layer_sizes[0],
                got: self.input_norm.len(),
            });
        }
        for &r in &self.input_norm {
            check_norm("input", r)?;
        }
        check_norm("output", self.output_norm)
    }

    pub fn input_len(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Min-max scale raw features to `[0, 1]`, clipping out-of-range values.
    pub fn normalize_input(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_len() {
            return Err(Error::ShapeMismatch {
                expected: self.input_len(),
                got: input.len(),
            });
        }
        Ok(input
            .iter()
            .zip(&self.input_norm)
            .map(|(&x, &(lo, hi))| ((x - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect())
    }

    pub fn normalize_target(&self, v: f64) -> f64 {
        (v - self.output_norm.0) / (self.output_norm.1 - self.output_norm.0)
    }

    pub fn denormalize_output(&self, y: f64) -> f64 {
        self.output_norm.0 + y * (self.output_norm.1 - self.output_norm.0)
    }

    /// Network output on an already-normalized input.
    pub fn forward_normalized(&self, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let n_in = a.len();
            let z: Vec<f64> = b
                .iter()
                .enumerate()
                .map(|(r, &bias)| {
                    bias + w[r * n_in..(r + 1) * n_in]
                        .iter()
                        .zip(&a)
                        .map(|(wi, ai)| wi * ai)
                        .sum::<f64>()
                })
                .collect();
            a = if l == last {
                z
            } else {
                z.into_iter().map(sigmoid).collect()
            };
        }
        a[0]
    }

    /// Predicted voltage for raw features.
    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        let x = self.normalize_input(input)?;
        Ok(self.denormalize_output(self.forward_normalized(&x)))
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Flattened parameters: every weight matrix, then every bias vector.
    pub fn params_flat(&self) -> Vec<f64> {
        self.weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .copied()
            .collect()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut()
                .for_each(|x| *x = it.next().expect("length checked"));
        }
        Ok(())
    }

    /// Mean squared error on normalized data and its gradient, in `params_flat` order.
    pub fn loss_and_gradient(&self, inputs: &[Vec<f64>], targets: &[f64]) -> (f64, Vec<f64>) {
        let n_layers = self.weights.len();
        let mut gw: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut gb: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let n_input = self.layer_sizes[0];
        let widest = self
            .biases
            .iter()
            .map(Vec::len)
            .max()
            .unwrap_or(1)
            .max(n_input);
        let mut acts: Vec<Vec<f64>> = std::iter::once(n_input)
            .chain(self.biases.iter().map(Vec::len))
            .map(|n| vec![0.0; n])
            .collect();
        let mut delta = vec![0.0; widest];
        let mut back = vec![0.0; widest];
        let scale = 1.0 / inputs.len() as f64;
        let mut loss = 0.0;
        for (x, &t) in inputs.iter().zip(targets) {
            acts[0].copy_from_slice(x);
            for l in 0..n_layers {
                let (lower, upper) = acts.split_at_mut(l + 1);
                let a = &lower[l];
                let n_in = a.len();
                let (w, b) = (&self.weights[l], &self.biases[l]);
                for (r, out) in upper[0].iter_mut().enumerate() {
                    let z = b[r]
                        + w[r * n_in..(r + 1) * n_in]
                            .iter()
                            .zip(a)
                            .map(|(wi, ai)| wi * ai)
                            .sum::<f64>();
                    *out = if l == n_layers - 1 { z } else { sigmoid(z) };
                }
            }
            let err = acts[n_layers][0] - t;
            loss += err * err * scale;
            delta[0] = 2.0 * err * scale;
            let mut n_out = 1;
            for l in (0..n_layers).rev() {
                let a = &acts[l];
                let n_in = a.len();
                for (r, &d) in delta[..n_out].iter().enumerate() {
                    gb[l][r] += d;
                    for (g, &ac) in gw[l][r * n_in..(r + 1) * n_in].iter_mut().zip(a) {
                        *g += d * ac;
                    }
                }
                if l > 0 {
                    let w = &self.weights[l];
                    for (c, slot) in back[..n_in].iter_mut().enumerate() {
                        let s: f64 = delta[..n_out]
                            .iter()
                            .enumerate()
                            .map(|(r, &d)| d * w[r * n_in + c])
                            .sum();
                        *slot = s * a[c] * (1.0 - a[c]);
                    }
                    std::mem::swap(&mut delta, &mut back);
                    n_out = n_in;
                }
            }
        }
        (loss, gw.into_iter().chain(gb).flatten().collect())
    }

    /// Train in place on raw features and voltage targets.
    pub fn train(
        &mut self,
        inputs: &[Vec<f64>],
        targets: &[f64],
        opts: &TrainOptions,
    ) -> Result<TrainReport> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::ShapeMismatch {
                expected: inputs.len(),
                got: targets.len(),
            });
        }
        if opts.epochs == 0 {
            return Err(Error::InvalidInput("epochs must be >= 1".into()));
        }
        let xs: Vec<Vec<f64>> = inputs
            .iter()
            .map(|x| self.normalize_input(x))
            .collect::<Result<_>>()?;
        let ts: Vec<f64> = targets.iter().map(|&t| self.normalize_target(t)).collect();
        let mut params = self.params_flat();
        let mut velocity = vec![0.0; params.len()];
        let mut second = vec![0.0; params.len()];
        let mut history = Vec::with_capacity(opts.epochs + 1);
        for epoch in 0..opts.epochs {
            let (loss, grad) = self.loss_and_gradient(&xs, &ts);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            history.push(loss);
            match opts.optimizer {
                Optimizer::Momentum => {
                    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                        *v = opts.momentum * *v - opts.learning_rate * g;
                        *p += *v;
                    }
                }
                Optimizer::Adam => {
                    const BETA2: f64 = 0.999;
                    let k = (epoch + 1) as i32;
                    let c1 = 1.0 - opts.momentum.powi(k);
                    let c2 = 1.0 - BETA2.powi(k);
                    for (((p, m), s), g) in params
                        .iter_mut()
                        .zip(velocity.iter_mut())
                        .zip(second.iter_mut())
                        .zip(&grad)
                    {
                        *m = opts.momentum * *m + (1.0 - opts.momentum) * g;
                        *s = BETA2 * *s + (1.0 - BETA2) * g * g;
                        *p -= opts.learning_rate * (*m / c1) / ((*s / c2).sqrt() + 1e-8);
                    }
                }
            }
            self.set_params_flat(&params)?;
        }
        let (final_loss, _) = self.loss_and_gradient(&xs, &ts);
        if !final_loss.is_finite() {
            return Err(Error::Divergence { epoch: opts.epochs });
        }
        history.push(final_loss);
        self.train_mse = Some(final_loss);
        Ok(TrainReport {
            mse_history: history,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_cases() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(1e6), 1.0);
        assert_eq!(sigmoid(-1e6), 0.0);
        for z in [-3.0, -0.4, 0.7, 12.0] {
            assert!((sigmoid(z) + sigmoid(-z) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_network_outputs_range_minimum() {
        let m = MlpModel::zeros(&[3, 4, 1], vec![(0.0, 1.0); 3], (12.0, 250.0)).unwrap();
        assert_eq!(m.forward(&[0.3, 0.9, 0.1]).unwrap(), 12.0);
        assert!(m.forward(&[0.3, 0.9]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m =
            MlpModel::random(&[2, 3, 1], vec![(0.0, 1.0), (-1.0, 5.0)], (0.0, 100.0), 4).unwrap();
        let back = MlpModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        let bad = m.to_json().unwrap().replace(MODEL_FORMAT, "other/9");
        assert!(MlpModel::from_json(&bad).is_err());
    }

    #[test]
    fn shape_errors_detected() {
        let mut m = MlpModel::zeros(&[2, 3, 1], vec![(0.0, 1.0); 2], (0.0, 1.0)).unwrap();
        m.weights[0].pop();
        assert_eq!(m.validate().unwrap_err().kind(), "shape-mismatch");
        assert!(MlpModel::zeros(&[2, 3, 2], vec![(0.0, 1.0); 2], (0.0, 1.0)).is_err());
        assert!(MlpModel::zeros(&[2, 1], vec![(1.0, 1.0); 2], (0.0, 1.0)).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = MlpModel::random(&[3, 4, 1], vec![(0.0, 1.0); 3], (0.0, 1.0), 11).unwrap();
        let xs = vec![
            vec![0.1, 0.5, 0.9],
            vec![0.7, 0.2, 0.4],
            vec![0.3, 0.3, 0.8],
        ];
        let ts = vec![0.2, 0.9, 0.5];
        let (_, grad) = m.loss_and_gradient(&xs, &ts);
        let base = m.params_flat();
        let eps = 1e-6;
        for k in 0..base.len() {
            let mut probe = m.clone();
            let mut p = base.clone();
            p[k] += eps;
            probe.set_params_flat(&p).unwrap();
            let up = probe.loss_and_gradient(&xs, &ts).0;
            p[k] -= 2.0 * eps;
            probe.set_params_flat(&p).unwrap();
            let down = probe.loss_and_gradient(&xs, &ts).0;
            let fd = (up - down) / (2.0 * eps);
            assert!(
                (fd - grad[k]).abs() <= 1e-4 * fd.abs().max(1e-3),
                "param {k}: {fd} vs {}",
                grad[k]
            );
        }
    }

    #[test]
    fn constant_target_is_learned() {
        let mut m = MlpModel::random(&[2, 5, 1], vec![(0.0, 1.0); 2], (0.0, 100.0), 2).unwrap();
        let xs: Vec<Vec<f64>> = (0..20)
            .map(|k| vec![k as f64 / 20.0, 1.0 - k as f64 / 40.0])
            .collect();
        let ts = vec![63.0; 20];
        m.train(
            &xs,
            &ts,
            &TrainOptions {
                epochs: 300,
                ..TrainOptions::momentum_gd()
            },
        )
        .unwrap();
        for x in &xs {
            assert!((m.forward(x).unwrap() - 63.0).abs() < 0.5);
        }
    }

    #[test]
    fn training_is_seed_deterministic_and_reports_divergence() {
        let xs: Vec<Vec<f64>> = (0..10).map(|k| vec![k as f64 / 10.0]).collect();
        let ts: Vec<f64> = (0..10).map(|k| (k * k) as f64).collect();
        let train = |seed| {
            let mut m = MlpModel::random(&[1, 3, 1], vec![(0.0, 1.0)], (0.0, 81.0), seed).unwrap();
            m.train(
                &xs,
                &ts,
                &TrainOptions {
                    epochs: 50,
                    ..Default::default()
                },
            )
            .unwrap();
            m
        };
        assert_eq!(train(3), train(3));
        let mut m = MlpModel::random(&[1, 3, 1], vec![(0.0, 1.0)], (0.0, 81.0), 3).unwrap();
        let err = m
            .train(
                &xs,
                &ts,
                &TrainOptions {
                    epochs: 200,
                    learning_rate: 1e3,
                    ..TrainOptions::momentum_gd()
                },
            )
            .unwrap_err();
        assert_eq!(err.kind(), "divergence");
    }
}
