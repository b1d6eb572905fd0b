//! Pipeline configuration, read from TOML.
//!
//! Every choice that shapes the analysis, K included, lives here and is fixed
//! before any data are read.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boosting::BoostConfig;
use crate::data::SyntheticSpec;
use crate::error::{Result, TehError};
use crate::glm::Family;
use crate::inference::{NullScheme, Pipeline};
use crate::lasso::LassoConfig;
use crate::screening::{KRule, PcaConfig, ScreeningMethod, ScreeningSettings};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NullSimConfig {
    /// 0 disables the empirical correction.
    pub reps: usize,
    pub scheme: NullScheme,
}

impl Default for NullSimConfig {
    fn default() -> Self {
        Self {
            reps: 0,
            scheme: NullScheme::Parametric,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub outcome: String,
    pub treatment: String,
    /// Adjustment covariates; all other columns are candidates.
    pub adjust: Vec<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            outcome: "y".into(),
            treatment: "treatment".into(),
            adjust: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Report path used when `--out` is not given.
    pub report: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoremConfig {
    pub reps: usize,
}

impl Default for TheoremConfig {
    fn default() -> Self {
        Self { reps: 2000 }
    }
}

/// One arm of a power comparison. Unset fields inherit the top-level values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub label: String,
    pub screening: ScreeningMethod,
    #[serde(default)]
    pub k_rule: Option<KRule>,
    #[serde(default)]
    pub boosting: Option<BoostConfig>,
    #[serde(default)]
    pub lasso: Option<LassoConfig>,
    #[serde(default)]
    pub pca: Option<PcaConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerConfig {
    #[serde(default = "default_power_reps")]
    pub reps: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub methods: Vec<MethodConfig>,
}

fn default_power_reps() -> usize {
    1000
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Empty means 1..=p.
    pub k_values: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub family: Family,
    #[serde(default)]
    pub seed: u64,
    pub k_rule: KRule,
    pub screening: ScreeningMethod,
    #[serde(default)]
    pub boosting: BoostConfig,
    #[serde(default)]
    pub lasso: LassoConfig,
    #[serde(default)]
    pub pca: PcaConfig,
    #[serde(default)]
    pub null_sim: NullSimConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub generator: Option<SyntheticSpec>,
    #[serde(default)]
    pub theorem: TheoremConfig,
    #[serde(default)]
    pub power: Option<PowerConfig>,
    #[serde(default)]
    pub sweep: SweepConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| TehError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            TehError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.k_rule.validate()?;
        self.boosting.validate()?;
        self.lasso.validate()?;
        if self.null_sim.reps != 0 && self.null_sim.reps < 100 {
            return Err(TehError::Config(
                "null_sim.reps must be 0 (off) or at least 100".into(),
            ));
        }
        if self.theorem.reps < 2 {
            return Err(TehError::Config("theorem.reps must be at least 2".into()));
        }
        if let Some(g) = &self.generator {
            g.validate()
                .map_err(|e| TehError::Config(format!("generator: {e}")))?;
        }
        if let Some(power) = &self.power {
            if power.methods.is_empty() {
                return Err(TehError::Config("power.methods must not be empty".into()));
            }
            if power.reps == 0 {
                return Err(TehError::Config("power.reps must be at least 1".into()));
            }
            if !(power.alpha > 0.0 && power.alpha < 1.0) {
                return Err(TehError::Config("power.alpha must lie in (0, 1)".into()));
            }
            for m in &power.methods {
                if let Some(k) = &m.k_rule {
                    k.validate()?;
                }
                if let Some(b) = &m.boosting {
                    b.validate()?;
                }
                if let Some(l) = &m.lasso {
                    l.validate()?;
                }
            }
        }
        if self.sweep.k_values.contains(&0) {
            return Err(TehError::Config("sweep.k_values must be positive".into()));
        }
        Ok(())
    }

    pub fn settings(&self) -> ScreeningSettings {
        ScreeningSettings {
            method: self.screening,
            boosting: self.boosting,
            lasso: self.lasso,
            pca: self.pca,
            seed: self.seed,
        }
    }

    pub fn pipeline(&self) -> Pipeline {
        Pipeline {
            label: "configured".into(),
            family: self.family,
            k_rule: self.k_rule,
            screening: self.settings(),
        }
    }

    /// Pipelines compared by a power study, in listed order.
    pub fn power_pipelines(&self) -> Result<Vec<Pipeline>> {
        let power = self
            .power
            .as_ref()
            .ok_or_else(|| TehError::Config("missing [power] section".into()))?;
        Ok(power
            .methods
            .iter()
            .map(|m| Pipeline {
                label: m.label.clone(),
                family: self.family,
                k_rule: m.k_rule.unwrap_or(self.k_rule),
                screening: ScreeningSettings {
                    method: m.screening,
                    boosting: m.boosting.unwrap_or(self.boosting),
                    lasso: m.lasso.unwrap_or(self.lasso),
                    pca: m.pca.unwrap_or(self.pca),
                    seed: self.seed,
                },
            })
            .collect())
    }

    pub fn generator(&self) -> Result<&SyntheticSpec> {
        self.generator
            .as_ref()
            .ok_or_else(|| TehError::Config("missing [generator] section".into()))
    }
}
