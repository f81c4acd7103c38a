//! Prompts for a multimodal LLM judge and parsing of its JSON replies.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::dataset::ArtifactRecord;
use crate::store::sha256_hex;

const PS_PROMPT: &str = r#"You will be shown two images below. The image on the left is an AI-generated image of {item_name} ({category_name}). The image on the right is a grid of four real images of {item_name} from Wikipedia.

Generated Image (Left):
[Image 1 Placeholder - will be inserted by API call]

Real Images Collage (Right):
[Image 2 Placeholder - will be inserted by API call]

Please analyze the images and answer the following:

1. On a scale of 1-5, how similar do you think the generated image on the left is to the real images on the right? Use the following scale:
   1: Not at all similar
   2: Slightly similar
   3: Reasonably Similar
   4: Very Similar
   5: Extremely Similar

2. Provide a brief explanation for your similarity rating, detailing specific visual aspects you compared.

Format your response strictly as JSON with the keys "similarity_rating" (for the number 1-5) and "similarity_explanation" (for the text explanation)."#;

const CURE_GT_PROMPT: &str = r#"This is an AI-generated image of {item_name}, which is a type of {category_name}.
Please analyze this image and answer the following questions:

1. Cultural Representativeness: On a scale of 1-5 (where 1 is "Highly Unlikely" and 5 is "Extremely Likely"),
   how likely can this item be found in {country}?

2. Ground-Truth Likelihood: On a scale of 1-5 (where 1 is "Highly Unlikely" and 5 is "Extremely Likely"),
   how likely is this an accurate image of {item_name}?

3. Description: What specific details in the AI-generated image make it accurate or inaccurate
   compared to how this object typically appears in {country} or your understanding of {item_name}?

Format your response as JSON with keys: 'country_likelihood', 'item_accuracy', and 'details_analysis'."#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JudgeMode {
    /// Perceptual similarity of a generated image to a ground-truth collage.
    Ps,
    /// Cultural representativeness and ground-truth likelihood, no references.
    CureGt,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MllmError {
    #[error("artifact `{artifact}` has no {field}")]
    MissingField { artifact: String, field: &'static str },
    #[error("no JSON object found in response")]
    NoJson,
    #[error("missing key `{0}`")]
    MissingKey(&'static str),
    #[error("key `{key}` has the wrong type")]
    WrongType { key: &'static str },
    #[error("`{key}` = {value} outside 1..=5")]
    OutOfRange { key: &'static str, value: i64 },
    #[error("judge `{judge}` failed: {message}")]
    Judge { judge: String, message: String },
}

/// Renders the judge prompt for `artifact`. PS mode needs ground-truth refs
/// because the second image slot is filled with them.
pub fn build_mllm_prompt(artifact: &ArtifactRecord, mode: JudgeMode) -> Result<String, MllmError> {
    let missing = |field| MllmError::MissingField {
        artifact: artifact.name.clone(),
        field,
    };
    if artifact.name.trim().is_empty() {
        return Err(missing("name"));
    }
    if artifact.category.trim().is_empty() {
        return Err(missing("category"));
    }
    let prompt = match mode {
        JudgeMode::Ps => {
            if artifact.ground_truth.is_empty() {
                return Err(missing("ground_truth"));
            }
            PS_PROMPT
        }
        JudgeMode::CureGt => {
            if artifact.region.trim().is_empty() {
                return Err(missing("region"));
            }
            CURE_GT_PROMPT
        }
    };
    Ok(prompt
        .replace("{item_name}", &artifact.name)
        .replace("{category_name}", &artifact.category)
        .replace("{country}", &artifact.region))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JudgeScores {
    Ps {
        similarity_rating: u8,
        similarity_explanation: String,
    },
    CureGt {
        country_likelihood: u8,
        item_accuracy: u8,
        details_analysis: String,
    },
}

/// Candidate JSON object texts: fenced blocks first, then every balanced
/// `{...}` span in order of appearance.
fn json_candidates(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
        let Some(end) = after[body_start..].find("```") else {
            break;
        };
        out.push(after[body_start..body_start + end].trim());
        rest = &after[body_start + end + 3..];
    }
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(end) = balanced_end(&text[i..]) {
                out.push(&text[i..i + end]);
                i += end;
                continue;
            }
        }
        i += 1;
    }
    out
}

/// Byte length of the balanced object starting at `s[0] == '{'`.
fn balanced_end(s: &str) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn extract_object(text: &str) -> Result<Map<String, Value>, MllmError> {
    json_candidates(text)
        .into_iter()
        .find_map(|c| match serde_json::from_str::<Value>(c) {
            Ok(Value::Object(m)) => Some(m),
            _ => None,
        })
        .ok_or(MllmError::NoJson)
}

fn rating(obj: &Map<String, Value>, key: &'static str) -> Result<u8, MllmError> {
    let v = obj.get(key).ok_or(MllmError::MissingKey(key))?;
    let n = match v {
        Value::Number(n) => match (n.as_i64(), n.as_f64()) {
            (Some(i), _) => i,
            (None, Some(f)) if f.fract() == 0.0 && f.abs() < 1e9 => f as i64,
            _ => return Err(MllmError::WrongType { key }),
        },
        _ => return Err(MllmError::WrongType { key }),
    };
    if !(1..=5).contains(&n) {
        return Err(MllmError::OutOfRange { key, value: n });
    }
    Ok(n as u8)
}

fn text_field(obj: &Map<String, Value>, key: &'static str) -> Result<String, MllmError> {
    match obj.get(key) {
        None => Err(MllmError::MissingKey(key)),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(MllmError::WrongType { key }),
    }
}

/// Extracts the judge's JSON object (tolerating prose and code fences around
/// it) and validates the keys and 1-5 ranges for `mode`.
pub fn parse_mllm_response(text: &str, mode: JudgeMode) -> Result<JudgeScores, MllmError> {
    let obj = extract_object(text)?;
    match mode {
        JudgeMode::Ps => Ok(JudgeScores::Ps {
            similarity_rating: rating(&obj, "similarity_rating")?,
            similarity_explanation: text_field(&obj, "similarity_explanation")?,
        }),
        JudgeMode::CureGt => Ok(JudgeScores::CureGt {
            country_likelihood: rating(&obj, "country_likelihood")?,
            item_accuracy: rating(&obj, "item_accuracy")?,
            details_analysis: text_field(&obj, "details_analysis")?,
        }),
    }
}

/// Adapter for a multimodal LLM.
pub trait MllmJudge: Send + Sync {
    fn id(&self) -> &str;
    fn version(&self) -> String;
    fn ask(&self, prompt: &str, images: &[PathBuf]) -> Result<String, String>;
}

/// Deterministic judge that answers with ratings derived from a hash of the
/// prompt and image paths, wrapped in a fenced block.
pub struct MockJudge {
    id: String,
}

impl MockJudge {
    pub fn new(id: impl Into<String>) -> Self {
        MockJudge { id: id.into() }
    }
}

impl MllmJudge for MockJudge {
    fn id(&self) -> &str {
        &self.id
    }

    fn version(&self) -> String {
        "mock-judge-1".into()
    }

    fn ask(&self, prompt: &str, images: &[PathBuf]) -> Result<String, String> {
        let mut material = prompt.as_bytes().to_vec();
        for p in images {
            let bytes = std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))?;
            material.push(b'\n');
            material.extend(bytes);
        }
        let h = hex::decode(sha256_hex(&material)).expect("hex digest");
        let r = |i: usize| 1 + h[i] % 5;
        let body = if prompt.contains("similarity_rating") {
            serde_json::json!({
                "similarity_rating": r(0),
                "similarity_explanation": "mock judgment",
            })
        } else {
            serde_json::json!({
                "country_likelihood": r(1),
                "item_accuracy": r(2),
                "details_analysis": "mock judgment",
            })
        };
        Ok(format!("Here is my assessment.\n```json\n{body}\n```\n"))
    }
}
