// SPDX-License-Identifier: MIT OR Apache-2.0

//! JSON run configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use polvec_core::concept_vectors::Method;
use polvec_core::corpus::{Dimension, PromptTemplate, Split};
use polvec_core::steering::InjectionScope;
use polvec_core::toy_lm::GenParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Mandatory; drives every random draw.
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,

    // Activation sources; exactly one when a command needs activations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToySource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted: Option<PlantedSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actv: Option<PathBuf>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statements: Option<PathBuf>,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<PathBuf>,
    #[serde(default)]
    pub template: TemplateChoice,

    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lambda_ladder: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registry: Option<PathBuf>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<Dimension>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prompts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<GenParams>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_k")]
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySource {
    #[serde(default = "default_n_layers")]
    pub n_layers: usize,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_heads")]
    pub n_heads: usize,
    #[serde(default = "default_d_ff")]
    pub d_ff: usize,
    #[serde(default = "default_max_seq")]
    pub max_seq: usize,
    /// Load these weights instead of building from the seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedSource {
    pub d_model: usize,
    pub n_layers: usize,
    pub per_side: usize,
    pub signal: f64,
    pub noise: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_offset_scale")]
    pub offset_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_per_cell")]
    pub per_cell: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            per_cell: default_per_cell(),
            test_fraction: default_test_fraction(),
        }
    }
}

/// A named template or an explicit module set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TemplateChoice {
    Named(String),
    Custom(PromptTemplate),
}

impl Default for TemplateChoice {
    fn default() -> Self {
        TemplateChoice::Named("base".into())
    }
}

impl TemplateChoice {
    pub fn resolve(&self) -> Result<PromptTemplate> {
        match self {
            TemplateChoice::Custom(t) => Ok(t.clone()),
            TemplateChoice::Named(name) => Ok(match name.as_str() {
                "base" => PromptTemplate::base(),
                "full" => PromptTemplate::full(),
                "detection" => PromptTemplate::detection(),
                other => bail!("unknown template `{other}` (expected base, full or detection)"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    #[serde(default = "default_plan_method")]
    pub method: Method,
    pub dimension: Dimension,
    /// Defaults to the middle third of the model.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<usize>,
    pub alpha: f64,
    #[serde(default)]
    pub scope: InjectionScope,
}

fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn default_lambda() -> f64 {
    1.0
}
fn default_alphas() -> Vec<f64> {
    vec![0.5, 1.0, 2.0, 4.0]
}
fn default_k() -> usize {
    5
}
fn default_n_layers() -> usize {
    8
}
fn default_d_model() -> usize {
    64
}
fn default_heads() -> usize {
    4
}
fn default_d_ff() -> usize {
    256
}
fn default_max_seq() -> usize {
    128
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_offset_scale() -> f64 {
    2.0
}
fn default_per_cell() -> usize {
    2
}
fn default_plan_method() -> Method {
    Method::Caa
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

/// Which activation source a config names.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Toy,
    Planted,
    Actv,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.context("config error: `seed` is mandatory")
    }

    /// The single configured activation source.
    pub fn source(&self) -> Result<SourceKind> {
        let mut found = Vec::new();
        if self.toy.is_some() {
            found.push(SourceKind::Toy);
        }
        if self.planted.is_some() {
            found.push(SourceKind::Planted);
        }
        if self.actv.is_some() {
            found.push(SourceKind::Actv);
        }
        match found.as_slice() {
            [one] => Ok(*one),
            [] => bail!("config error: no activation source (set exactly one of `toy`, `planted`, `actv`)"),
            _ => bail!("config error: {} activation sources configured; set exactly one of `toy`, `planted`, `actv`", found.len()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            bail!("config error: lambda must be a finite value ≥ 0");
        }
        if self.lambda_ladder.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            bail!("config error: lambda_ladder entries must be finite and ≥ 0");
        }
        if self.alphas.iter().any(|a| !a.is_finite()) {
            bail!("config error: alphas must be finite");
        }
        if self.methods.is_empty() {
            bail!("config error: `methods` is empty");
        }
        self.template.resolve()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let c: RunConfig = serde_json::from_str(r#"{"seed": 3, "planted": {"d_model": 8, "n_layers": 1, "per_side": 4, "signal": 1, "noise": 1}}"#).unwrap();
        assert_eq!(c.source().unwrap(), SourceKind::Planted);
        assert_eq!(c.methods.len(), 3);
        assert_eq!(c.template.resolve().unwrap(), PromptTemplate::base());
    }

    #[test]
    fn two_sources_rejected() {
        let c: RunConfig = serde_json::from_str(r#"{"seed": 1, "toy": {}, "actv": "x.actv"}"#).unwrap();
        assert!(c.source().unwrap_err().to_string().contains("2 activation sources"));
    }

    #[test]
    fn seed_is_mandatory() {
        let c: RunConfig = serde_json::from_str(r#"{"toy": {}}"#).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"seed": 1, "sed": 2}"#).is_err());
    }

    #[test]
    fn custom_template() {
        let c: RunConfig = serde_json::from_str(r#"{"seed": 1, "template": {"p2": "The leaning is", "chat_wrapper": "mistral"}}"#).unwrap();
        let t = c.template.resolve().unwrap();
        assert_eq!(t.chat_wrapper.as_deref(), Some("mistral"));
    }
}
