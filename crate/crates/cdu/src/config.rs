//! Scenario configuration, read from TOML. Every field has a default (an
//! empty file is the digits scenario); unknown keys are rejected.

use std::path::{Path, PathBuf};

use cdu_core::autoencoder::AeConfig;
use cdu_core::downstream::LogisticConfig;
use cdu_core::protocol::ProtocolConfig;
use cdu_core::streams::{FaultKind, SynthNetConfig};
use cdu_core::unlearner::UnlearnConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Bundled digits 0-4; one scenario is one cross-validation fold.
    Digits {
        #[serde(default = "default_folds")]
        folds: usize,
        #[serde(default)]
        fold: usize,
    },
    Synth {
        #[serde(default)]
        network: SynthNetConfig,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        has_labels: bool,
    },
}

fn default_folds() -> usize {
    10
}

impl DataSource {
    pub fn digits() -> Self {
        DataSource::Digits {
            folds: default_folds(),
            fold: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftSpec {
    /// Nothing drifts; the detector never fires.
    None,
    /// Upper half of each digit image blanked.
    Digits,
    /// One sensor fault starting at the configured onset.
    Fault {
        fault: FaultKind,
        target: usize,
        parameter: f64,
        #[serde(default)]
        seed: u64,
    },
    /// A fault drawn from the scenario seed; resolved into `Fault` when run.
    RandomFault,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    /// Share of the pre-drift stream used to train the autoencoder and the
    /// downstream models; the rest is the clean evaluation window.
    pub train_fraction: f64,
    /// Drift onset for stream sources; defaults to half the stream.
    pub onset: Option<usize>,
    /// Size of D*, the post-drift window the unlearning map is fitted on.
    pub collection: usize,
    /// Post-drift evaluation length; defaults to the rest of the stream.
    pub post_eval: Option<usize>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            train_fraction: 0.6,
            onset: None,
            collection: 200,
            post_eval: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    /// Drop scenarios whose reconstruction loss the map did not reduce.
    /// Defaults to on for fault suites and off for digits folds.
    pub filter: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "DataSource::digits")]
    pub data: DataSource,
    #[serde(default)]
    pub drift: Option<DriftSpec>,
    #[serde(default)]
    pub windows: WindowConfig,
    #[serde(default)]
    pub autoencoder: AeConfig,
    #[serde(default)]
    pub unlearner: UnlearnConfig,
    #[serde(default)]
    pub logistic: LogisticConfig,
    #[serde(default)]
    pub suite: SuiteConfig,
}

impl ScenarioConfig {
    pub fn digits() -> Self {
        Self::with_source(DataSource::digits())
    }

    pub fn synth() -> Self {
        Self::with_source(DataSource::Synth {
            network: SynthNetConfig::default(),
        })
    }

    pub fn with_source(data: DataSource) -> Self {
        ScenarioConfig {
            seed: 0,
            output_dir: None,
            data,
            drift: None,
            windows: WindowConfig::default(),
            autoencoder: AeConfig::default(),
            unlearner: UnlearnConfig::default(),
            logistic: LogisticConfig::default(),
            suite: SuiteConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn drift(&self) -> DriftSpec {
        self.drift.clone().unwrap_or(match self.data {
            DataSource::Digits { .. } => DriftSpec::Digits,
            _ => DriftSpec::RandomFault,
        })
    }

    pub fn filter_enabled(&self) -> bool {
        self.suite
            .filter
            .unwrap_or(!matches!(self.data, DataSource::Digits { .. }))
    }

    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            autoencoder: self.autoencoder.clone(),
            unlearner: self.unlearner.clone(),
            logistic: self.logistic.clone(),
        }
    }

    /// Checks that do not need the data; window bounds against the stream
    /// length are checked when the scenario is built.
    pub fn validate(&self) -> Result<()> {
        let w = &self.windows;
        if !(w.train_fraction > 0.0 && w.train_fraction < 1.0) {
            return Err(Error::Config("windows.train_fraction must lie in (0, 1)".into()));
        }
        if w.collection == 0 {
            return Err(Error::Config("windows.collection must be positive".into()));
        }
        if w.post_eval == Some(0) {
            return Err(Error::Config("windows.post_eval must be positive".into()));
        }
        match &self.data {
            DataSource::Digits { folds, fold } => {
                if *folds < 2 {
                    return Err(Error::Config("data.folds must be at least 2".into()));
                }
                if fold >= folds {
                    return Err(Error::Config(format!(
                        "data.fold {fold} out of range for {folds} folds"
                    )));
                }
            }
            DataSource::Synth { network } => {
                network
                    .validate()
                    .map_err(|e| Error::Config(format!("data.network: {e}")))?;
            }
            DataSource::Csv { .. } => {}
        }
        match self.drift() {
            DriftSpec::Digits if !matches!(self.data, DataSource::Digits { .. }) => {
                return Err(Error::Config("digits drift needs the digits data source".into()));
            }
            DriftSpec::Fault { .. } | DriftSpec::RandomFault if matches!(self.data, DataSource::Digits { .. }) => {
                return Err(Error::Config("sensor faults need a stream data source".into()));
            }
            _ => {}
        }
        if self.unlearner.regularization < 0.0 || !self.unlearner.regularization.is_finite() {
            return Err(Error::Config(
                "unlearner.regularization must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_and_full_configs() {
        let cfg = ScenarioConfig::from_toml("[data]\nsource = \"digits\"\n").unwrap();
        assert_eq!(cfg, ScenarioConfig::digits());
        assert_eq!(ScenarioConfig::from_toml("").unwrap(), cfg);
        assert_eq!(cfg.drift(), DriftSpec::Digits);

        let text = r#"
            seed = 7
            output_dir = "out"
            [data]
            source = "synth"
            [data.network]
            sensors = 16
            factors = 3
            [drift]
            kind = "fault"
            fault = "PowerFailure"
            target = 2
            parameter = 1.0
            [windows]
            onset = 900
            collection = 150
            [unlearner]
            regularization = 0.05
        "#;
        let cfg = ScenarioConfig::from_toml(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.windows.onset, Some(900));
        assert_eq!(cfg.unlearner.regularization, 0.05);
        assert!(matches!(cfg.drift(), DriftSpec::Fault { target: 2, .. }));
        let back = ScenarioConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [
            "bogus = 1\n[data]\nsource = \"digits\"\n",
            "[data]\nsource = \"digits\"\nfolds2 = 3\n",
            "[data]\nsource = \"digits\"\n[autoencoder]\nepoch = 3\n",
            "[data]\nsource = \"digits\"\n[unlearner]\nC = 3\n",
            "[data]\nsource = \"nope\"\n",
        ] {
            assert!(
                matches!(ScenarioConfig::from_toml(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn inconsistent_configs_rejected() {
        for text in [
            "[data]\nsource = \"digits\"\nfold = 10\n",
            "[data]\nsource = \"synth\"\n[drift]\nkind = \"digits\"\n",
            "[data]\nsource = \"digits\"\n[windows]\ntrain_fraction = 1.5\n",
            "[data]\nsource = \"synth\"\n[data.network]\nsensors = 4\nfactors = 4\n",
        ] {
            assert!(
                matches!(ScenarioConfig::from_toml(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }
}
