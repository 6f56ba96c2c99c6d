use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::MsmConfig;
use crate::diffgraph::TrainConfig;
use crate::error::{Error, Result};
use crate::generators::{CvaeConfig, DiffusionConfig, GeneratorKind, GeneratorSpec};
use crate::propensity::{PropensityConfig, WeightConfig};
use crate::scm::{
    all_combos, combo_label, parse_combo, BimodalToyParams, DiscreteToySpec, ModelSpec,
    OracleHorizon, ScmCoefficients, ScmConfig, StaticCovariate,
};

/// Named data-generating processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "table4-d1")]
    Table4D1,
    #[serde(rename = "table4-d3")]
    Table4D3,
    #[serde(rename = "table4-d5")]
    Table4D5,
    /// Two-dimensional outcome with a latent hotspot.
    #[serde(rename = "bimodal")]
    Bimodal,
    /// Finite-support toy whose counterfactual pmf is enumerable.
    #[serde(rename = "discrete")]
    Discrete,
}

impl Preset {
    pub fn spec(self) -> Result<ModelSpec> {
        Ok(match self {
            Preset::Table4D1 => ModelSpec::Linear(ScmCoefficients::table4(1)?),
            Preset::Table4D3 => ModelSpec::Linear(ScmCoefficients::table4(3)?),
            Preset::Table4D5 => ModelSpec::Linear(ScmCoefficients::table4(5)?),
            Preset::Bimodal => ModelSpec::Bimodal(BimodalToyParams::default()),
            Preset::Discrete => ModelSpec::Discrete(DiscreteToySpec::default()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScmSection {
    /// Exactly one of `preset` and `model` must be given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    /// Checked against the model's history length when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(rename = "T", default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    #[serde(default)]
    pub beta0_override: Option<f64>,
    #[serde(default)]
    pub static_covariate: Option<StaticCovariate>,
}

fn default_horizon() -> usize {
    100
}

fn default_n_traj() -> usize {
    2000
}

impl ScmSection {
    pub fn preset(preset: Preset) -> Self {
        Self {
            preset: Some(preset),
            model: None,
            d: None,
            horizon: default_horizon(),
            n_traj: default_n_traj(),
            beta0_override: None,
            static_covariate: None,
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        match (&self.preset, &self.model) {
            (Some(p), None) => p.spec(),
            (None, Some(m)) => Ok(m.clone()),
            (Some(_), Some(_)) => Err(Error::Config(
                "scm: give either a preset or a model, not both".into(),
            )),
            (None, None) => Err(Error::Config("scm: a preset or a model is required".into())),
        }
    }

    pub fn history_len(&self) -> Result<usize> {
        let d = match self.model_spec()? {
            ModelSpec::Linear(c) => c.d(),
            ModelSpec::Bimodal(p) => p.base_treatment.len(),
            ModelSpec::Discrete(s) => s.d,
        };
        if let Some(stated) = self.d {
            if stated != d {
                return Err(Error::Config(format!(
                    "scm.d = {stated} but the model has history length {d}"
                )));
            }
        }
        Ok(d)
    }

    pub fn scm_config(&self, seed: u64) -> Result<ScmConfig> {
        let cfg = ScmConfig {
            d: self.history_len()?,
            horizon: self.horizon,
            n_traj: self.n_traj,
            seed,
            beta0_override: self.beta0_override,
            static_covariate: self.static_covariate.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropensitySection {
    pub model: PropensityConfig,
    pub weights: WeightConfig,
    /// Use the true propensities of the simulator instead of a fitted model.
    pub oracle_weights: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Mscvae,
    Msdiffusion,
    Cvae,
    Diffusion,
    Kde,
    PluginKde,
    MsmNn,
}

impl MethodKind {
    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Mscvae => "mscvae",
            MethodKind::Msdiffusion => "msdiffusion",
            MethodKind::Cvae => "cvae",
            MethodKind::Diffusion => "diffusion",
            MethodKind::Kde => "kde",
            MethodKind::PluginKde => "plugin_kde",
            MethodKind::MsmNn => "msm_nn",
        }
    }

    pub fn generator_kind(self) -> Option<GeneratorKind> {
        match self {
            MethodKind::Mscvae => Some(GeneratorKind::Mscvae),
            MethodKind::Msdiffusion => Some(GeneratorKind::Msdiffusion),
            MethodKind::Cvae => Some(GeneratorKind::CvaeUnweighted),
            MethodKind::Diffusion => Some(GeneratorKind::DiffusionUnweighted),
            _ => None,
        }
    }
}

/// One method with optional overrides of its defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub method: MethodKind,
    /// Name used for artifacts and in the metrics; defaults to the method name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cvae: Option<CvaeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<DiffusionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub msm: Option<MsmConfig>,
    /// KDE bandwidth, 0.5 unless given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
}

pub const DEFAULT_BANDWIDTH: f64 = 0.5;

impl MethodConfig {
    pub fn new(method: MethodKind) -> Self {
        Self {
            method,
            label: None,
            train: None,
            cvae: None,
            diffusion: None,
            msm: None,
            bandwidth: None,
        }
    }

    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.method.name().to_string())
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        match self.method.generator_kind() {
            Some(kind) => {
                let mut t = self.train.unwrap_or(GeneratorSpec::new(kind, 0).train);
                t.epochs = epochs;
                self.train = Some(t);
            }
            None => {
                let mut m = self.msm.unwrap_or_default();
                m.train.epochs = epochs;
                self.msm = Some(m);
            }
        }
        self
    }

    pub fn generator_spec(&self, seed: u64) -> Option<GeneratorSpec> {
        let kind = self.method.generator_kind()?;
        let mut spec = GeneratorSpec::new(kind, seed);
        if let Some(t) = self.train {
            spec.train = t;
        }
        if let Some(c) = &self.cvae {
            spec.cvae = c.clone();
        }
        if let Some(c) = &self.diffusion {
            spec.diffusion = c.clone();
        }
        Some(spec)
    }
}

/// A bare method name or a full object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MethodEntry {
    Name(MethodKind),
    Full(MethodConfig),
}

impl MethodEntry {
    pub fn resolve(&self) -> MethodConfig {
        match self {
            MethodEntry::Name(k) => MethodConfig::new(*k),
            MethodEntry::Full(c) => c.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComboSelection {
    /// The string `"all"`.
    All(AllCombos),
    List(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllCombos {
    All,
}

/// Static-covariate interval evaluated as its own subgroup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VGroup {
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub combos: ComboSelection,
    pub oracle_samples: usize,
    /// Draws per combination from each method.
    pub generated_samples: usize,
    pub min_observation_fraction: f64,
    pub oracle_horizon: OracleHorizon,
    pub histogram_bins: usize,
    /// When non-empty every combination is scored separately per group.
    pub v_groups: Vec<VGroup>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            combos: ComboSelection::All(AllCombos::All),
            oracle_samples: 10_000,
            generated_samples: 10_000,
            min_observation_fraction: 0.0,
            oracle_horizon: OracleHorizon::Pooled,
            histogram_bins: 50,
            v_groups: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub scm: ScmSection,
    #[serde(default)]
    pub propensity: PropensitySection,
    pub methods: Vec<MethodEntry>,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

impl ExperimentConfig {
    pub fn new(preset: Preset, methods: Vec<MethodEntry>, out: impl Into<PathBuf>) -> Self {
        Self {
            seed: 0,
            out: out.into(),
            scm: ScmSection::preset(preset),
            propensity: PropensitySection::default(),
            methods,
            eval: EvalSection::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn methods(&self) -> Vec<MethodConfig> {
        self.methods.iter().map(MethodEntry::resolve).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.scm.scm_config(self.seed)?;
        self.propensity.weights.validate()?;
        let methods = self.methods();
        if methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        let mut labels: Vec<String> = methods.iter().map(MethodConfig::label).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!(
                "method label {:?} is used twice",
                w[0]
            )));
        }
        for label in &labels {
            if label.is_empty()
                || !label
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return Err(Error::Config(format!(
                    "method label {label:?} must be [A-Za-z0-9_-]+"
                )));
            }
        }
        for m in &methods {
            if let Some(t) = &m.train {
                t.validate()?;
            }
            if let Some(h) = m.bandwidth {
                if !(h > 0.0 && h.is_finite()) {
                    return Err(Error::Config(format!("bandwidth {h} must be positive")));
                }
            }
        }
        self.combos()?;
        if self.eval.oracle_samples == 0 || self.eval.generated_samples == 0 {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.eval.min_observation_fraction) {
            return Err(Error::Config(
                "min_observation_fraction must lie in [0, 1)".into(),
            ));
        }
        if self.eval.histogram_bins == 0 {
            return Err(Error::Config("histogram_bins must be positive".into()));
        }
        if !self.eval.v_groups.is_empty() && self.scm.static_covariate.is_none() {
            return Err(Error::Config("v_groups need scm.static_covariate".into()));
        }
        for g in &self.eval.v_groups {
            if !(g.low <= g.high) {
                return Err(Error::Config(format!(
                    "v group [{}, {}] is empty",
                    g.low, g.high
                )));
            }
        }
        Ok(())
    }

    /// Labels of the evaluated combinations, checked against `d`.
    pub fn combos(&self) -> Result<Vec<String>> {
        let d = self.scm.history_len()?;
        match &self.eval.combos {
            ComboSelection::All(_) => Ok(all_combos(d).iter().map(|a| combo_label(a)).collect()),
            ComboSelection::List(list) => {
                if list.is_empty() {
                    return Err(Error::Config("eval.combos is empty".into()));
                }
                for c in list {
                    if parse_combo(c)?.len() != d {
                        return Err(Error::Config(format!(
                            "combination {c:?} does not have length d={d}"
                        )));
                    }
                }
                Ok(list.clone())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"scm": {"preset": "table4-d3"}, "methods": ["mscvae", {"method": "kde", "bandwidth": 1.0}]}"#)
                .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.combos().unwrap().len(), 8);
        assert_eq!(cfg.scm.n_traj, 2000);
        assert_eq!(cfg.scm.horizon, 100);
        let m = cfg.methods();
        assert_eq!(m[1].bandwidth, Some(1.0));
        assert_eq!(m[0].label(), "mscvae");
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            r#"{"scm": {"preset": "table4-d1"}, "methods": []}"#,
            r#"{"scm": {"preset": "table4-d1", "d": 3}, "methods": ["kde"]}"#,
            r#"{"scm": {"preset": "table4-d1"}, "methods": ["kde", "kde"]}"#,
            r#"{"scm": {"preset": "table4-d1"}, "methods": ["kde"], "eval": {"combos": ["01"]}}"#,
            r#"{"scm": {}, "methods": ["kde"]}"#,
        ];
        for text in bad {
            let parsed: Result<ExperimentConfig> = serde_json::from_str(text).map_err(Error::from);
            assert!(parsed.and_then(|c| c.validate()).is_err(), "{text}");
        }
    }

    #[test]
    fn partial_overrides_keep_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"scm": {"preset": "bimodal"}, "methods": [{"method": "msdiffusion", "diffusion": {"guidance_w": 0.0}}]}"#,
        )
        .unwrap();
        let spec = cfg.methods()[0].generator_spec(1).unwrap();
        assert_eq!(spec.diffusion.guidance_w, 0.0);
        assert_eq!(spec.diffusion.steps, DiffusionConfig::default().steps);
        assert_eq!(cfg.combos().unwrap().len(), 8);
    }
}
