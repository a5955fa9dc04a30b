//! Shared fixtures for the benchmarks: one scenario per family and freshly
//! initialized models at the desk-scale widths.

use pairplan_core::features::encode_scene_dim;
use pairplan_core::il::IlConfig;
use pairplan_core::metrics::MetricsConfig;
use pairplan_core::rwm::RwmConfig;
use pairplan_core::sampler::SamplerConfig;
use pairplan_core::sim::{generate_scenario, SimConfig};
use pairplan_core::{IlPolicy, RwmModel, SamplerModel, Scenario, ScenarioFamily, SceneFeatures};

pub struct Fixture {
    pub sim: SimConfig,
    pub metrics: MetricsConfig,
    pub scenarios: Vec<Scenario>,
    pub features: Vec<SceneFeatures>,
    pub il: IlPolicy,
    pub sampler: SamplerModel,
    pub rwm: RwmModel,
}

impl Fixture {
    pub fn new(d_model: usize) -> Self {
        let sim = SimConfig::default();
        let scenarios: Vec<Scenario> = ScenarioFamily::ALL
            .iter()
            .enumerate()
            .map(|(i, &f)| generate_scenario(f, i as u64, &sim).expect("scenario generates"))
            .collect();
        let il = IlPolicy::new(&IlConfig::default());
        let features = scenarios
            .iter()
            .map(|s| encode_scene_dim(s, il.feature_dim()).expect("default width"))
            .collect();
        let sampler_cfg = SamplerConfig {
            d_model,
            heads: 2,
            ..SamplerConfig::default()
        };
        Fixture {
            sim,
            metrics: MetricsConfig::default(),
            scenarios,
            features,
            il,
            sampler: SamplerModel::new(sampler_cfg, 0).expect("valid sampler config"),
            rwm: RwmModel::new(&RwmConfig::default()),
        }
    }
}
