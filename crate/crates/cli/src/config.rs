use std::fs;
use std::path::{Path, PathBuf};

use oid_core::dataio::{load_dataset, synth_generate, DatasetDescriptor, RatingsDataset, SynthSpec};
use oid_core::selection::SelectionAlgorithm;
use oid_core::simulate::{Setting, SimulationConfig};
use oid_core::Result;
use serde::{Deserialize, Serialize};

/// Everything a command needs. Every field has a default, so an empty JSON
/// object (or no file at all) runs on generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Ratings file; synthetic ratings are generated when absent.
    pub dataset: Option<DatasetDescriptor>,
    pub synthetic: SynthSpec,
    pub simulation: SimulationConfig,
    /// Share of warm ratings held out when `train` reports its RMSE.
    pub holdout_fraction: f64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            synthetic: SynthSpec::default(),
            simulation: SimulationConfig::default(),
            holdout_fraction: 0.2,
            out_dir: PathBuf::from("results"),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub budgets: Option<Vec<usize>>,
    pub algorithms: Option<Vec<SelectionAlgorithm>>,
    pub setting: Option<Setting>,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Ok(serde_json::from_str(&fs::read_to_string(p)?)?),
            None => Ok(Self::default()),
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.simulation.seed = seed;
            self.simulation.hyper.seed = seed;
            self.synthetic.seed = seed;
        }
        if let Some(t) = o.threads {
            self.simulation.threads = t;
        }
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
        if let Some(b) = &o.budgets {
            self.simulation.budgets = b.clone();
        }
        if let Some(a) = &o.algorithms {
            self.simulation.algorithms = a.clone();
        }
        if let Some(s) = o.setting {
            self.simulation.setting = s;
        }
    }

    /// The ratings to work on and a short name for result tables.
    pub fn ratings(&self) -> Result<(String, RatingsDataset)> {
        match &self.dataset {
            Some(desc) => {
                let loaded = load_dataset(desc)?;
                for w in &loaded.warnings {
                    log::warn!("{w}");
                }
                Ok((desc.name.clone(), loaded.dataset))
            }
            None => Ok(("synthetic".into(), synth_generate(&self.synthetic)?.0)),
        }
    }
}
