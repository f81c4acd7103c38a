//! Generation prompts P(a) over attribute subsets, and the evaluation prompts
//! used by image-text alignment scorers.
//!
//! Templates live in a versioned JSON registry (`resources/templates.json`)
//! and are substituted verbatim: no article inflection, no re-casing.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ArtifactRecord;

const TEMPLATES_JSON: &str = include_str!("../resources/templates.json");

/// Which artifact attributes a prompt or scorer conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct AttributeSubset {
    pub name: bool,
    pub category: bool,
    pub supercategory: bool,
    pub region: bool,
}

impl AttributeSubset {
    pub fn is_empty(&self) -> bool {
        !(self.name || self.category || self.supercategory || self.region)
    }
}

impl fmt::Display for AttributeSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [
            (self.name, "n"),
            (self.category, "c"),
            (self.supercategory, "s"),
            (self.region, "r"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, l)| *l)
        .collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[allow(clippy::upper_case_acronyms)]
pub enum PromptStyle {
    N,
    C,
    R,
    NC,
    NR,
    NCR,
    #[serde(rename = "EVAL_N")]
    EvalN,
    #[serde(rename = "EVAL_C")]
    EvalC,
    #[serde(rename = "EVAL_R")]
    EvalR,
    #[serde(rename = "EVAL_CR")]
    EvalCR,
    #[serde(rename = "EVAL_KHANUJA")]
    EvalKhanuja,
    #[serde(rename = "EVAL_VENTURA")]
    EvalVentura,
    #[serde(rename = "EVAL_O3MINI")]
    EvalO3Mini,
}

impl PromptStyle {
    pub const GENERATION: [PromptStyle; 6] = [
        PromptStyle::N,
        PromptStyle::C,
        PromptStyle::R,
        PromptStyle::NC,
        PromptStyle::NR,
        PromptStyle::NCR,
    ];

    pub const EVAL: [PromptStyle; 7] = [
        PromptStyle::EvalN,
        PromptStyle::EvalC,
        PromptStyle::EvalR,
        PromptStyle::EvalCR,
        PromptStyle::EvalKhanuja,
        PromptStyle::EvalVentura,
        PromptStyle::EvalO3Mini,
    ];

    /// The four styles every artifact is generated with for benchmarking.
    pub const BENCHMARK: [PromptStyle; 4] = [
        PromptStyle::N,
        PromptStyle::NC,
        PromptStyle::NR,
        PromptStyle::NCR,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PromptStyle::N => "N",
            PromptStyle::C => "C",
            PromptStyle::R => "R",
            PromptStyle::NC => "NC",
            PromptStyle::NR => "NR",
            PromptStyle::NCR => "NCR",
            PromptStyle::EvalN => "EVAL_N",
            PromptStyle::EvalC => "EVAL_C",
            PromptStyle::EvalR => "EVAL_R",
            PromptStyle::EvalCR => "EVAL_CR",
            PromptStyle::EvalKhanuja => "EVAL_KHANUJA",
            PromptStyle::EvalVentura => "EVAL_VENTURA",
            PromptStyle::EvalO3Mini => "EVAL_O3MINI",
        }
    }

    pub fn is_generation(&self) -> bool {
        Self::GENERATION.contains(self)
    }

    pub fn is_eval(&self) -> bool {
        !self.is_generation()
    }

    /// Attributes the style's template conditions on.
    pub fn subset(&self) -> AttributeSubset {
        let (name, category, region) = match self {
            PromptStyle::N | PromptStyle::EvalN => (true, false, false),
            PromptStyle::C | PromptStyle::EvalC => (false, true, false),
            PromptStyle::R
            | PromptStyle::EvalR
            | PromptStyle::EvalKhanuja
            | PromptStyle::EvalVentura
            | PromptStyle::EvalO3Mini => (false, false, true),
            PromptStyle::NC => (true, true, false),
            PromptStyle::NR => (true, false, true),
            PromptStyle::NCR => (true, true, true),
            PromptStyle::EvalCR => (false, true, true),
        };
        AttributeSubset {
            name,
            category,
            supercategory: false,
            region,
        }
    }
}

impl fmt::Display for PromptStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptStyle {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.trim().to_ascii_uppercase();
        PromptStyle::GENERATION
            .iter()
            .chain(PromptStyle::EVAL.iter())
            .find(|p| p.as_str() == up)
            .copied()
            .ok_or_else(|| PromptError::UnknownStyle(s.to_string()))
    }
}

/// Parses a comma-separated style list such as `N,NC,NR,NCR`.
pub fn parse_style_list(s: &str) -> Result<Vec<PromptStyle>, PromptError> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect()
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("artifact `{artifact}` has no {field} required by style {style}")]
    MissingField {
        artifact: String,
        style: PromptStyle,
        field: &'static str,
    },
    #[error("style {0} is not a generation style")]
    NotGeneration(PromptStyle),
    #[error("style {0} is not an evaluation style")]
    NotEval(PromptStyle),
    #[error("unknown prompt style `{0}`")]
    UnknownStyle(String),
    #[error("no template registered for style {0}")]
    NoTemplate(PromptStyle),
    #[error("invalid template registry: {0}")]
    Registry(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateRegistry {
    pub version: u32,
    pub generation: BTreeMap<PromptStyle, String>,
    pub eval: BTreeMap<PromptStyle, String>,
}

impl TemplateRegistry {
    pub fn builtin() -> &'static TemplateRegistry {
        static REG: OnceLock<TemplateRegistry> = OnceLock::new();
        REG.get_or_init(|| {
            TemplateRegistry::from_json(TEMPLATES_JSON).expect("bundled templates.json")
        })
    }

    pub fn from_json(text: &str) -> Result<TemplateRegistry, PromptError> {
        let reg: TemplateRegistry =
            serde_json::from_str(text).map_err(|e| PromptError::Registry(e.to_string()))?;
        if let Some(s) = reg.generation.keys().find(|s| !s.is_generation()) {
            return Err(PromptError::Registry(format!("{s} listed under generation")));
        }
        if let Some(s) = reg.eval.keys().find(|s| !s.is_eval()) {
            return Err(PromptError::Registry(format!("{s} listed under eval")));
        }
        Ok(reg)
    }

    pub fn render_generation(
        &self,
        artifact: &ArtifactRecord,
        style: PromptStyle,
    ) -> Result<String, PromptError> {
        if !style.is_generation() {
            return Err(PromptError::NotGeneration(style));
        }
        let t = self.generation.get(&style).ok_or(PromptError::NoTemplate(style))?;
        substitute(t, artifact, style)
    }

    pub fn render_eval(
        &self,
        artifact: &ArtifactRecord,
        style: PromptStyle,
    ) -> Result<String, PromptError> {
        if !style.is_eval() {
            return Err(PromptError::NotEval(style));
        }
        let t = self.eval.get(&style).ok_or(PromptError::NoTemplate(style))?;
        substitute(t, artifact, style)
    }
}

fn substitute(
    template: &str,
    artifact: &ArtifactRecord,
    style: PromptStyle,
) -> Result<String, PromptError> {
    let fields: [(&str, &'static str, &str); 4] = [
        ("{n}", "name", &artifact.name),
        ("{c}", "category", &artifact.category),
        ("{s}", "supercategory", &artifact.supercategory),
        ("{r}", "region", &artifact.region),
    ];
    let mut out = template.to_string();
    for (placeholder, field, value) in fields {
        if out.contains(placeholder) {
            if value.trim().is_empty() {
                return Err(PromptError::MissingField {
                    artifact: artifact.name.clone(),
                    style,
                    field,
                });
            }
            out = out.replace(placeholder, value);
        }
    }
    Ok(out)
}

/// Renders the text-to-image prompt for `style` with the built-in templates.
pub fn render_generation_prompt(
    artifact: &ArtifactRecord,
    style: PromptStyle,
) -> Result<String, PromptError> {
    TemplateRegistry::builtin().render_generation(artifact, style)
}

/// Renders the evaluation (text side of image-text alignment) prompt.
pub fn render_eval_prompt(
    artifact: &ArtifactRecord,
    style: PromptStyle,
) -> Result<String, PromptError> {
    TemplateRegistry::builtin().render_eval(artifact, style)
}
