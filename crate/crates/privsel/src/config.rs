//! Experiment configuration: one JSON document, documented by
//! `docs/config.schema.json`. Command-line flags override file values,
//! which override the defaults below.

use std::fs;
use std::path::{Path, PathBuf};

use privsel_core::{InstanceFamily, Mechanism, MechanismConstants, PrivacyParams};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub family: InstanceFamily,
    pub size: usize,
    #[serde(default = "one")]
    pub scale: f64,
    /// Seed of the uniform family when the instance is shared by all trials.
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Summary CSV; standard output when absent.
    #[serde(default)]
    pub summary: Option<PathBuf>,
    /// Per-trial JSON lines.
    #[serde(default)]
    pub trials: Option<PathBuf>,
    /// Directory receiving the query log of trial 0 for each mechanism.
    #[serde(default)]
    pub query_log_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub mechanisms: Vec<Mechanism>,
    pub privacy: PrivacyParams,
    pub trials: u64,
    #[serde(default)]
    pub master_seed: u64,
    /// A trial fails when its error exceeds this value.
    #[serde(default)]
    pub failure_threshold: f64,
    /// Draw a fresh instance per trial (random families only).
    #[serde(default)]
    pub resample_instance: bool,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<u64>,
    pub out: Option<PathBuf>,
    pub constants: Option<MechanismConstants>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Read { path: path.into(), source })?;
        let config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|source| Error::Parse { path: path.into(), source })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.mechanisms.is_empty() {
            return bad("at least one mechanism is required");
        }
        if self.instance.size == 0 {
            return bad("instance size must be positive");
        }
        if !(self.instance.scale.is_finite() && self.instance.scale >= 0.0) {
            return bad("instance scale must be finite and non-negative");
        }
        if !(self.failure_threshold.is_finite() && self.failure_threshold >= 0.0) {
            return bad("failure_threshold must be finite and non-negative");
        }
        self.privacy.validate().map_err(|e| Error::Config(e.to_string()))?;
        for m in &self.mechanisms {
            if let Mechanism::RecurGap { constants } | Mechanism::Combined { constants } = m {
                constants.validate().map_err(|e| Error::Config(e.to_string()))?;
            }
            if matches!(m, Mechanism::Combined { .. }) && self.instance.size < 2 {
                return bad("the combined mechanism needs at least two candidates");
            }
        }
        Ok(())
    }

    /// Applies command-line values, then re-validates.
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.master_seed = seed;
        }
        if let Some(trials) = o.trials {
            self.trials = trials;
        }
        if let Some(out) = &o.out {
            self.output.summary = Some(out.clone());
        }
        if let Some(c) = o.constants {
            for m in &mut self.mechanisms {
                if let Mechanism::RecurGap { constants } | Mechanism::Combined { constants } = m {
                    *constants = c;
                }
            }
        }
        self.validate()
    }

    /// Row labels: the mechanism name, suffixed with its position when a
    /// name occurs more than once.
    pub fn labels(&self) -> Vec<String> {
        self.mechanisms
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let repeated = self.mechanisms.iter().filter(|o| o.name() == m.name()).count() > 1;
                if repeated {
                    format!("{}_{}", m.name(), i)
                } else {
                    m.name().to_string()
                }
            })
            .collect()
    }
}

pub fn load_constants(path: &Path) -> Result<MechanismConstants> {
    let text = fs::read_to_string(path).map_err(|source| Error::Read { path: path.into(), source })?;
    let c: MechanismConstants =
        serde_json::from_str(&text).map_err(|source| Error::Parse { path: path.into(), source })?;
    c.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "instance": {"family": "gapped", "size": 8, "scale": 3.0},
        "mechanisms": [{"kind": "bin_tree"}, {"kind": "recur_gap", "constants": {"c_xi": 1.0}}],
        "privacy": {"rho": 1.0, "beta": 0.1},
        "trials": 5
    }"#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.master_seed, 0);
        assert_eq!(c.failure_threshold, 0.0);
        assert_eq!(c.output, OutputSpec::default());
        match c.mechanisms[1] {
            Mechanism::RecurGap { constants } => {
                assert_eq!(constants.c_xi, 1.0);
                assert_eq!(constants.p_xi, MechanismConstants::reference().p_xi);
            }
            _ => panic!("wrong mechanism"),
        }
    }

    #[test]
    fn round_trips() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        let back = ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_configs() {
        let cases = [
            MINIMAL.replace("\"trials\": 5", "\"trials\": 0"),
            MINIMAL.replace("bin_tree", "quantum"),
            MINIMAL.replace("\"beta\": 0.1", "\"beta\": 1.5"),
            MINIMAL.replace("\"c_xi\": 1.0", "\"c_zi\": 1.0"),
            MINIMAL.replace("\"size\": 8", "\"size\": 0"),
        ];
        for text in cases {
            assert!(ExperimentConfig::from_json(&text).is_err(), "{text}");
        }
    }

    #[test]
    fn overrides_take_precedence() {
        let mut c = ExperimentConfig::from_json(MINIMAL).unwrap();
        let o = Overrides {
            seed: Some(9),
            trials: Some(2),
            out: Some("x.csv".into()),
            constants: Some(MechanismConstants::scaled()),
        };
        c.apply(&o).unwrap();
        assert_eq!((c.master_seed, c.trials), (9, 2));
        assert_eq!(c.output.summary.as_deref(), Some(Path::new("x.csv")));
        assert_eq!(c.mechanisms[1], Mechanism::RecurGap { constants: MechanismConstants::scaled() });
        assert!(c.apply(&Overrides { trials: Some(0), ..Overrides::default() }).is_err());
    }

    #[test]
    fn labels_disambiguate_repeats() {
        let mut c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.labels(), ["bin_tree", "recur_gap"]);
        c.mechanisms.push(Mechanism::BinTree);
        assert_eq!(c.labels(), ["bin_tree_0", "recur_gap", "bin_tree_2"]);
    }
}
