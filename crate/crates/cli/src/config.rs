//! Pipeline configuration file (TOML).
//!
//! Every section is optional. Values given on the command line win over the
//! file, and the file wins over built-in defaults.

use std::path::Path;

use anyhow::Context;
use serde::Deserialize;

use attrprop::classifiers::TrainConfig;
use attrprop::mrf::Stage2Config;
use attrprop::relation::RelationTrainConfig;
use attrprop::synth::{PairSynthConfig, SynthConfig};

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Applies to every stage unless `--seed` is given.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub train: Option<TrainConfig>,
    pub graph: GraphSection,
    pub propagate: Option<Stage2Config>,
    pub relation: Option<RelationTrainConfig>,
    pub predict: PredictSection,
    pub evaluate: EvaluateSection,
    pub synth: SynthSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub h: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub smooth: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub threshold: Option<f64>,
    pub format: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub corpus: Option<SynthConfig>,
    pub pairs: Option<PairSynthConfig>,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(PipelineConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| {
            attrprop::Error::Config(format!("{}: {}", path.display(), e.message())).into()
        })
    }

    /// `--seed` if given, else the file's top-level seed.
    pub fn seed(&self, flag: Option<u64>) -> Option<u64> {
        flag.or(self.seed)
    }
}

/// First of flag, file value, default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        assert_eq!(pick(Some(1), Some(2), 3), 1);
        assert_eq!(pick(None, Some(2), 3), 2);
        assert_eq!(pick(None, None, 3), 3);
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let cfg: PipelineConfig = toml::from_str(
            "seed = 4\n[train]\nepochs = 3\n[propagate]\nrounds = 2\n[propagate.propagation]\nmode = \"deterministic\"\n",
        )
        .unwrap();
        let train = cfg.train.as_ref().unwrap();
        assert_eq!(train.epochs, 3);
        assert_eq!(train.batch_size, TrainConfig::default().batch_size);
        let prop = cfg.propagate.as_ref().unwrap();
        assert_eq!(prop.rounds, 2);
        assert_eq!(prop.propagation.k_init, 10);
        assert_eq!(cfg.seed(None), Some(4));
        assert_eq!(cfg.seed(Some(9)), Some(9));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<PipelineConfig>("sede = 1").is_err());
    }
}
