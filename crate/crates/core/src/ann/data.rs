use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mlp::{MlpModel, TrainOptions, TrainReport};
use crate::error::{Error, Result};
use crate::pv::{array_current, find_gmpp, ArrayTopology, Conditions, PvModuleParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnMode {
    /// Per-group irradiance readings.
    Irradiance,
    /// Probe `(v, i)` pairs around the operating point.
    ViProbes,
}

/// Multi-input networks see every reading; single-input networks see one
/// aggregate (mean irradiance, or the present operating point).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputArity {
    Multi,
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub mode: AnnMode,
    pub arity: InputArity,
    pub groups: usize,
    pub m_probes: usize,
    #[serde(rename = "probe_half_width_v")]
    pub probe_half_width: f64,
}

impl FeatureSpec {
    pub fn irradiance(groups: usize, arity: InputArity) -> Self {
        Self {
            mode: AnnMode::Irradiance,
            arity,
            groups,
            m_probes: 4,
            probe_half_width: 10.0,
        }
    }

    pub fn vi_probes(groups: usize, m_probes: usize, arity: InputArity) -> Self {
        Self {
            mode: AnnMode::ViProbes,
            arity,
            groups,
            m_probes,
            probe_half_width: 10.0,
        }
    }

    /// Probes consumed per prediction in VI mode.
    pub fn probes_needed(&self) -> usize {
        match self.arity {
            InputArity::Multi => self.m_probes,
            InputArity::Single => 1,
        }
    }

    pub fn input_len(&self) -> usize {
        match (self.mode, self.arity) {
            (AnnMode::Irradiance, InputArity::Multi) => self.groups,
            (AnnMode::Irradiance, InputArity::Single) => 1,
            (AnnMode::ViProbes, _) => 2 * self.probes_needed(),
        }
    }

    pub fn irradiance_features(&self, irradiance: &[f64]) -> Result<Vec<f64>> {
        if irradiance.len() != self.groups {
            return Err(Error::ShapeMismatch {
                expected: self.groups,
                got: irradiance.len(),
            });
        }
        Ok(match self.arity {
            InputArity::Multi => irradiance.to_vec(),
            InputArity::Single => vec![irradiance.iter().sum::<f64>() / irradiance.len() as f64],
        })
    }

    /// Probes sorted by voltage and interleaved as `v1, i1, v2, i2, ...`.
    pub fn vi_features(&self, probes: &[(f64, f64)]) -> Result<Vec<f64>> {
        if probes.len() != self.probes_needed() {
            return Err(Error::ShapeMismatch {
                expected: self.probes_needed(),
                got: probes.len(),
            });
        }
        let mut sorted = probes.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(sorted.into_iter().flat_map(|(v, i)| [v, i]).collect())
    }
}

/// `m` uniform draws in `[center - half_width, center + half_width]`, clamped
/// to `[0, v_max]` and sorted ascending.
pub fn generate_probe_voltages<R: Rng + ?Sized>(
    center: f64,
    half_width: f64,
    m: usize,
    v_max: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut probes: Vec<f64> = (0..m)
        .map(|_| {
            let v = if half_width > 0.0 {
                rng.gen_range(center - half_width..=center + half_width)
            } else {
                center
            };
            v.clamp(0.0, v_max)
        })
        .collect();
    probes.sort_by(f64::total_cmp);
    probes
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub spec: FeatureSpec,
    /// Raw feature vectors.
    pub inputs: Vec<Vec<f64>>,
    /// Oracle GMPP voltages.
    pub targets: Vec<f64>,
    /// Irradiance pattern behind each row.
    pub patterns: Vec<Vec<f64>>,
}

/// Full grid of `levels.len()^groups` irradiance patterns, last group fastest.
pub fn irradiance_grid(levels: &[f64], groups: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..groups {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                levels.iter().map(move |&z| {
                    let mut p = prefix.clone();
                    p.push(z);
                    p
                })
            })
            .collect();
    }
    out
}

/// `count` patterns with each group irradiance uniform in `[lo, hi]`.
pub fn random_patterns(count: usize, groups: usize, lo: f64, hi: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..groups).map(|_| rng.gen_range(lo..=hi)).collect())
        .collect()
}

/// Oracle GMPP voltage for every pattern at the given temperature.
pub fn oracle_voltages(
    patterns: &[Vec<f64>],
    temperature: f64,
    topo: &ArrayTopology,
    params: &PvModuleParams,
) -> Result<Vec<f64>> {
    patterns
        .par_iter()
        .map(|p| find_gmpp(&Conditions::new(p.clone(), temperature), topo, params).map(|(v, _)| v))
        .collect()
}

/// Labelled rows over the per-group irradiance grid. VI mode draws
/// `probes_per_pattern` probe sets per pattern, centered uniformly over
/// 10–95% of the array open-circuit voltage.
pub fn generate_training_data(
    spec: &FeatureSpec,
    topo: &ArrayTopology,
    params: &PvModuleParams,
    levels: &[f64],
    probes_per_pattern: usize,
    seed: u64,
) -> Result<TrainingSet> {
    if levels.len() < 2 {
        return Err(Error::InvalidInput(
            "need at least 2 irradiance levels".into(),
        ));
    }
    if spec.groups != topo.group_count() {
        return Err(Error::ShapeMismatch {
            expected: topo.group_count(),
            got: spec.groups,
        });
    }
    let temperature = crate::pv::T_STC_K;
    let grid = irradiance_grid(levels, spec.groups);
    let oracle = oracle_voltages(&grid, temperature, topo, params)?;
    let mut set = TrainingSet {
        spec: *spec,
        inputs: Vec::new(),
        targets: Vec::new(),
        patterns: Vec::new(),
    };
    match spec.mode {
        AnnMode::Irradiance => {
            for (p, &v) in grid.iter().zip(&oracle) {
                set.inputs.push(spec.irradiance_features(p)?);
                set.targets.push(v);
                set.patterns.push(p.clone());
            }
        }
        AnnMode::ViProbes => {
            if probes_per_pattern == 0 {
                return Err(Error::InvalidInput(
                    "probes_per_pattern must be >= 1".into(),
                ));
            }
            let v_max = topo.v_oc_nameplate(params);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (p, &v) in grid.iter().zip(&oracle) {
                let cond = Conditions::new(p.clone(), temperature);
                for _ in 0..probes_per_pattern {
                    let center = rng.gen_range(0.1 * v_max..=0.95 * v_max);
                    let volts = match spec.arity {
                        InputArity::Multi => generate_probe_voltages(
                            center,
                            spec.probe_half_width,
                            spec.m_probes,
                            v_max,
                            &mut rng,
                        ),
                        InputArity::Single => vec![center],
                    };
                    let probes = volts
                        .into_iter()
                        .map(|pv| Ok((pv, array_current(pv, &cond, topo, params)?)))
                        .collect::<Result<Vec<_>>>()?;
                    set.inputs.push(spec.vi_features(&probes)?);
                    set.targets.push(v);
                    set.patterns.push(p.clone());
                }
            }
        }
    }
    Ok(set)
}

/// A trained network plus the feature layout it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmppModel {
    pub spec: FeatureSpec,
    pub net: MlpModel,
}

impl GmppModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.net.validate()?;
        if m.net.input_len() != m.spec.input_len() {
            return Err(Error::ShapeMismatch {
                expected: m.spec.input_len(),
                got: m.net.input_len(),
            });
        }
        Ok(m)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn clamped(&self, features: &[f64]) -> Result<f64> {
        let v = self.net.forward(features)?;
        Ok(if v.is_nan() {
            0.0
        } else {
            v.clamp(0.0, self.net.output_norm.1)
        })
    }

    pub fn predict_irr(&self, irradiance: &[f64]) -> Result<f64> {
        if self.spec.mode != AnnMode::Irradiance {
            return Err(Error::InvalidInput("model expects VI probes".into()));
        }
        self.clamped(&self.spec.irradiance_features(irradiance)?)
    }

    pub fn predict_vi(&self, probes: &[(f64, f64)]) -> Result<f64> {
        if self.spec.mode != AnnMode::ViProbes {
            return Err(Error::InvalidInput(
                "model expects irradiance readings".into(),
            ));
        }
        self.clamped(&self.spec.vi_features(probes)?)
    }
}

/// VI-mode prediction for an irradiance pattern: probes are drawn the same
/// way as for training data, around a seeded operating point.
pub fn vi_prediction(
    model: &GmppModel,
    pattern: &[f64],
    topo: &ArrayTopology,
    params: &PvModuleParams,
    seed: u64,
) -> Result<f64> {
    let spec = &model.spec;
    let v_max = topo.v_oc_nameplate(params);
    let cond = Conditions::new(pattern.to_vec(), crate::pv::T_STC_K);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = rng.gen_range(0.1 * v_max..=0.95 * v_max);
    let volts = match spec.arity {
        InputArity::Multi => generate_probe_voltages(
            center,
            spec.probe_half_width,
            spec.m_probes,
            v_max,
            &mut rng,
        ),
        InputArity::Single => vec![center],
    };
    let probes = volts
        .into_iter()
        .map(|v| Ok((v, array_current(v, &cond, topo, params)?)))
        .collect::<Result<Vec<_>>>()?;
    model.predict_vi(&probes)
}

/// Per-feature min-max over the rows, widened where a feature is constant.
fn feature_ranges(inputs: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let width = inputs[0].len();
    (0..width)
        .map(|c| {
            let (lo, hi) = inputs
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                    (lo.min(x[c]), hi.max(x[c]))
                });
            if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, lo + 0.5)
            }
        })
        .collect()
}

/// Train a network with the given hidden widths on `set`. The output range
/// is `[0, v_max]`.
pub fn train_gmpp_model(
    set: &TrainingSet,
    hidden: &[usize],
    v_max: f64,
    opts: &TrainOptions,
    seed: u64,
) -> Result<(GmppModel, TrainReport)> {
    if set.inputs.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut arch = vec![set.spec.input_len()];
    arch.extend_from_slice(hidden);
    arch.push(1);
    let mut net = MlpModel::random(&arch, feature_ranges(&set.inputs), (0.0, v_max), seed)?;
    let report = net.train(&set.inputs, &set.targets, opts)?;
    Ok((
        GmppModel {
            spec: set.spec,
            net,
        },
        report,
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct PqiReport {
    pub g_tests: usize,
    /// Mean of predicted / true GMPP voltage, percent.
    pub pqi: f64,
    /// Mean absolute relative error, percent.
    pub mape: f64,
    pub ratios: Vec<f64>,
}

/// PQI of a predictor over irradiance patterns against the oracle.
pub fn evaluate_pqi<F>(
    predict: F,
    patterns: &[Vec<f64>],
    topo: &ArrayTopology,
    params: &PvModuleParams,
) -> Result<PqiReport>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if patterns.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let truth = oracle_voltages(patterns, crate::pv::T_STC_K, topo, params)?;
    let ratios = patterns
        .par_iter()
        .zip(&truth)
        .map(|(p, &v)| Ok(predict(p)? / v))
        .collect::<Result<Vec<f64>>>()?;
    let g = ratios.len() as f64;
    Ok(PqiReport {
        g_tests: ratios.len(),
        pqi: 100.0 * ratios.iter().sum::<f64>() / g,
        mape: 100.0 * ratios.iter().map(|r| (r - 1.0).abs()).sum::<f64>() / g,
        ratios,
    })
}

/// PQI of a saved model. VI-mode probes for each pattern are drawn from a
/// seed derived from `seed` and the pattern values.
pub fn evaluate_model_pqi(
    model: &GmppModel,
    patterns: &[Vec<f64>],
    topo: &ArrayTopology,
    params: &PvModuleParams,
    seed: u64,
) -> Result<PqiReport> {
    match model.spec.mode {
        AnnMode::Irradiance => evaluate_pqi(|p| model.predict_irr(p), patterns, topo, params),
        AnnMode::ViProbes => evaluate_pqi(
            |p| {
                let key = p
                    .iter()
                    .fold(seed, |h, x| crate::rng::stream_seed(h, x.to_bits()));
                vi_prediction(model, p, topo, params, key)
            },
            patterns,
            topo,
            params,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_size_and_order() {
        let g = irradiance_grid(&[0.2, 0.6, 1.0], 2);
        assert_eq!(g.len(), 9);
        assert_eq!(g[1], vec![0.2, 0.6]);
        assert_eq!(
            irradiance_grid(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], 3).len(),
            216
        );
    }

    #[test]
    fn probes_clamped_sorted_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = generate_probe_voltages(3.0, 10.0, 16, 250.0, &mut rng);
        assert!(p.iter().all(|&v| (0.0..=13.0).contains(&v)));
        assert!(p.windows(2).all(|w| w[0] <= w[1]));
        let a = generate_probe_voltages(100.0, 10.0, 4, 250.0, &mut ChaCha8Rng::seed_from_u64(9));
        let b = generate_probe_voltages(100.0, 10.0, 4, 250.0, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn vi_features_are_order_invariant() {
        let spec = FeatureSpec::vi_probes(3, 3, InputArity::Multi);
        let a = spec
            .vi_features(&[(5.0, 1.0), (1.0, 3.0), (3.0, 2.0)])
            .unwrap();
        let b = spec
            .vi_features(&[(3.0, 2.0), (5.0, 1.0), (1.0, 3.0)])
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a, vec![1.0, 3.0, 3.0, 2.0, 5.0, 1.0]);
        assert!(spec.vi_features(&[(1.0, 1.0)]).is_err());
    }

    #[test]
    fn single_input_uses_mean_irradiance() {
        let spec = FeatureSpec::irradiance(3, InputArity::Single);
        assert_eq!(spec.irradiance_features(&[0.3, 0.6, 0.9]).unwrap().len(), 1);
        assert!((spec.irradiance_features(&[0.3, 0.6, 0.9]).unwrap()[0] - 0.6).abs() < 1e-12);
        assert!(spec.irradiance_features(&[0.3]).is_err());
    }

    #[test]
    fn clamp_engages_for_adversarial_weights() {
        let spec = FeatureSpec::irradiance(1, InputArity::Multi);
        let mut net = MlpModel::zeros(&[1, 1], vec![(0.0, 1.0)], (0.0, 100.0)).unwrap();
        net.biases[0][0] = 50.0;
        let m = GmppModel { spec, net };
        assert_eq!(m.predict_irr(&[0.5]).unwrap(), 100.0);
        let mut m2 = m.clone();
        m2.net.biases[0][0] = -50.0;
        assert_eq!(m2.predict_irr(&[0.5]).unwrap(), 0.0);
        assert!(m.predict_vi(&[(1.0, 1.0)]).is_err());
    }
}
