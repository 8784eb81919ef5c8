#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use mppt_lab::ann::{generate_training_data, train_gmpp_model, FeatureSpec, GmppModel, InputArity};
use mppt_lab::controller::Plant;
use mppt_lab::harness::{prepare, train_models, ModelSet, Prepared, ScenarioConfig};

pub fn scenario() -> ScenarioConfig {
    ScenarioConfig::small_sp1_sp2()
}

pub fn plant(s: &ScenarioConfig) -> Plant {
    Plant {
        topo: s.topology.clone(),
        params: s.module,
        env: s.environment.clone(),
    }
}

pub struct Fixture {
    pub scenario: ScenarioConfig,
    pub models: ModelSet,
    pub prepared: Prepared,
}

/// Trained and calibrated bundled scenario, built once per test binary.
pub fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let scenario = scenario();
        let models = train_models(&scenario).expect("training");
        let prepared = prepare(&scenario, &models).expect("calibration");
        Fixture {
            scenario,
            models,
            prepared,
        }
    })
}

/// A briefly trained VI-probe network for the bundled scenario.
pub fn vi_model(m_probes: usize) -> Arc<GmppModel> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GmppModel>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(m) = cache.lock().unwrap().get(&m_probes) {
        return m.clone();
    }
    let model = train_vi(m_probes);
    cache.lock().unwrap().insert(m_probes, model.clone());
    model
}

fn train_vi(m_probes: usize) -> Arc<GmppModel> {
    let s = scenario();
    let spec = FeatureSpec::vi_probes(s.topology.group_count(), m_probes, InputArity::Multi);
    let a = &s.experiment.ann;
    let data = generate_training_data(&spec, &s.topology, &s.module, &a.levels, 4, 3).unwrap();
    let mut opts = a.train;
    opts.epochs = 500;
    let v_max = s.topology.v_oc_nameplate(&s.module);
    Arc::new(
        train_gmpp_model(&data, &a.hidden, v_max, &opts, 3)
            .unwrap()
            .0,
    )
}
