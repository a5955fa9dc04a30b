use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::SuiteConfig;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::sim::{generate_scenario, synthesize_expert, Corruption, Scenario, ScenarioFamily, SimConfig};

pub const SUITE_SCHEMA: &str = "pairplan_suite_v1";
const EVAL_SEED_OFFSET: u64 = 100_000;
const RUN_SEED_STRIDE: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub id: String,
    pub family: ScenarioFamily,
    pub seed: u64,
    pub split: Split,
    pub corruption: Corruption,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub schema: String,
    pub entries: Vec<SuiteEntry>,
}

/// A loaded suite split: entries aligned with their scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub entries: Vec<SuiteEntry>,
    pub scenarios: Vec<Scenario>,
}

impl Suite {
    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }
}

/// Corruption that fits the family: red-light runs where there is a light,
/// otherwise drifting off the road or crawling.
fn corruption_for(family: ScenarioFamily, k: usize) -> Corruption {
    if family == ScenarioFamily::RedLight {
        Corruption::RedLightRun
    } else if k.is_multiple_of(2) {
        Corruption::OffroadDrift
    } else {
        Corruption::SlowProgress
    }
}

/// Deterministic split of `per_family` scenarios per family, with a fixed
/// share of corrupted demonstrations.
pub fn generate_split(cfg: &SuiteConfig, sim: &SimConfig, seed: u64, split: Split) -> Result<Suite> {
    let per_family = match split {
        Split::Train => cfg.train_per_family,
        Split::Eval => cfg.eval_per_family,
    };
    let base = seed.wrapping_mul(RUN_SEED_STRIDE)
        + match split {
            Split::Train => 0,
            Split::Eval => EVAL_SEED_OFFSET,
        };
    let mut entries = Vec::new();
    let mut scenarios = Vec::new();
    for family in ScenarioFamily::ALL {
        for i in 0..per_family as u64 {
            let scn = generate_scenario(family, base + i, sim)?;
            entries.push(SuiteEntry {
                id: scn.id.clone(),
                family,
                seed: base + i,
                split,
                corruption: Corruption::None,
            });
            scenarios.push(scn);
        }
    }
    let n_corrupt = (cfg.corrupt_fraction * scenarios.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..scenarios.len()).collect();
    order.shuffle(&mut seeded(derive_seed(seed, &format!("corrupt_{}", split.name()))));
    let mut chosen = order[..n_corrupt].to_vec();
    chosen.sort_unstable();
    for (k, &i) in chosen.iter().enumerate() {
        let c = corruption_for(entries[i].family, k);
        entries[i].corruption = c;
        scenarios[i].expert = synthesize_expert(&scenarios[i], c, sim);
    }
    Ok(Suite { entries, scenarios })
}

fn split_dir(dir: &Path, split: Split) -> PathBuf {
    dir.join(split.name())
}

/// Writes both splits plus `manifest.json` under `dir`.
pub fn write_suite(dir: &Path, train: &Suite, eval: &Suite) -> Result<()> {
    let mut entries = Vec::new();
    for (suite, split) in [(train, Split::Train), (eval, Split::Eval)] {
        let d = split_dir(dir, split);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        for (entry, scn) in suite.entries.iter().zip(&suite.scenarios) {
            scn.save(&d.join(format!("{}.json", entry.id)))?;
        }
        entries.extend(suite.entries.iter().cloned());
    }
    let manifest = SuiteManifest {
        schema: SUITE_SCHEMA.into(),
        entries,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<SuiteManifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: SuiteManifest =
        serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    if manifest.schema != SUITE_SCHEMA {
        return Err(Error::Format(format!(
            "{}: expected schema {SUITE_SCHEMA}, found {}",
            path.display(),
            manifest.schema
        )));
    }
    Ok(manifest)
}

pub fn load_split(dir: &Path, split: Split, horizon: usize) -> Result<Suite> {
    let manifest = read_manifest(dir)?;
    let entries: Vec<SuiteEntry> = manifest.entries.into_iter().filter(|e| e.split == split).collect();
    let scenarios = entries
        .iter()
        .map(|e| {
            let scn = Scenario::load(&split_dir(dir, split).join(format!("{}.json", e.id)))?;
            scn.validate(horizon)?;
            Ok(scn)
        })
        .collect::<Result<_>>()?;
    Ok(Suite { entries, scenarios })
}
