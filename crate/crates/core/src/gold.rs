//! Human judgments: ingest, Likert normalisation, per-artifact aggregation and
//! ranking agreement.
//!
//! Gold CSV columns (header required, any order):
//! `system,artifact,worker,question,likert,ranking,free_text`, plus an
//! optional `style` column. Worker ids are replaced by a salted hash at ingest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{cosine_set_similarity, EmbeddingSet, SimilarityMode};
use crate::store::sha256_hex;

/// Style tag when the export does not say which prompt style was judged.
pub const MIXED_STYLE: &str = "mixed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GoldQuestion {
    /// Cultural representativeness.
    Cure,
    /// Ground-truth likelihood.
    Gt,
    /// Perceptual similarity.
    Ps,
    /// Offensiveness.
    Off,
    /// Stereotyping.
    Str,
}

impl GoldQuestion {
    pub const ALL: [GoldQuestion; 5] = [
        GoldQuestion::Cure,
        GoldQuestion::Gt,
        GoldQuestion::Ps,
        GoldQuestion::Off,
        GoldQuestion::Str,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            GoldQuestion::Cure => "CURE",
            GoldQuestion::Gt => "GT",
            GoldQuestion::Ps => "PS",
            GoldQuestion::Off => "OFF",
            GoldQuestion::Str => "STR",
        }
    }
}

impl fmt::Display for GoldQuestion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GoldQuestion {
    type Err = GoldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        GoldQuestion::ALL
            .into_iter()
            .find(|q| q.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| GoldError::UnknownQuestion(t.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub system_id: String,
    pub artifact: String,
    pub worker_id: String,
    pub question: GoldQuestion,
    pub likert: u8,
    /// Ground-truth image labels, most similar first.
    pub ranking: Option<Vec<char>>,
    pub free_text: String,
    pub style: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldAggregate {
    pub system_id: String,
    pub artifact: String,
    pub question: GoldQuestion,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n_workers: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based line number in the file (header is line 1).
    pub line: usize,
    pub reason: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GoldIngest {
    pub records: Vec<GoldRecord>,
    pub rejects: Vec<Reject>,
}

#[derive(Debug, Error)]
pub enum GoldError {
    #[error("{path}: {message}")]
    Unparseable { path: String, message: String },
    #[error("likert value {0} outside 1..=5")]
    LikertRange(i64),
    #[error("unknown question `{0}`")]
    UnknownQuestion(String),
    #[error("no records for {0}")]
    NoRecords(String),
    #[error("rankings differ in length or label set")]
    MismatchedRankings,
    #[error("need at least {needed} rankings, got {got}")]
    TooFewRankings { needed: usize, got: usize },
}

/// `(x - 1) / 4`.
pub fn normalize_likert(x: i64) -> Result<f64, GoldError> {
    if !(1..=5).contains(&x) {
        return Err(GoldError::LikertRange(x));
    }
    Ok((x - 1) as f64 / 4.0)
}

/// Salted, truncated SHA-256 of a worker id.
pub fn anonymize_worker(salt: &str, worker: &str) -> String {
    sha256_hex(format!("{salt}\u{0}{worker}").as_bytes())[..16].to_string()
}

/// Parses `a,b,c,d`, `a b c d` or `abcd` and checks it is a permutation of
/// the first `n` letters.
pub fn parse_ranking(s: &str) -> Result<Vec<char>, String> {
    let letters: Vec<char> = s
        .chars()
        .filter(|c| !matches!(c, ',' | ';' | ' ' | '|' | '>'))
        .map(|c| c.to_ascii_lowercase())
        .collect();
    let expected: BTreeSet<char> = ('a'..='z').take(letters.len()).collect();
    let got: BTreeSet<char> = letters.iter().copied().collect();
    if letters.len() < 2 || got.len() != letters.len() || got != expected {
        return Err(format!("`{s}`"));
    }
    Ok(letters)
}

const REQUIRED: [&str; 7] = ["system", "artifact", "worker", "question", "likert", "ranking", "free_text"];

/// Reads a gold CSV. Invalid rows are collected in `rejects`; only an
/// unreadable file or a missing column is an error.
pub fn ingest_gold(path: &Path, salt: &str) -> Result<GoldIngest, GoldError> {
    let text = std::fs::read_to_string(path).map_err(|e| GoldError::Unparseable {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    ingest_gold_str(&text, salt).map_err(|message| GoldError::Unparseable {
        path: path.display().to_string(),
        message,
    })
}

pub fn ingest_gold_str(text: &str, salt: &str) -> Result<GoldIngest, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let mut idx = BTreeMap::new();
    for name in REQUIRED {
        idx.insert(name, col(name).ok_or_else(|| format!("missing column `{name}`"))?);
    }
    let style_col = col("style");

    let mut out = GoldIngest::default();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let reject = |reason: &str, detail: String| Reject {
            line,
            reason: reason.to_string(),
            detail,
        };
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.rejects.push(reject("malformed-row", e.to_string()));
                continue;
            }
        };
        if row.len() != headers.len() {
            out.rejects.push(reject(
                "malformed-row",
                format!("{} fields, expected {}", row.len(), headers.len()),
            ));
            continue;
        }
        let get = |name: &str| row.get(idx[name]).unwrap_or("").trim();
        let (system, artifact, worker) = (get("system"), get("artifact"), get("worker"));
        if system.is_empty() || artifact.is_empty() || worker.is_empty() {
            out.rejects.push(reject("missing-field", "system, artifact and worker are required".into()));
            continue;
        }
        let question = match get("question").parse::<GoldQuestion>() {
            Ok(q) => q,
            Err(e) => {
                out.rejects.push(reject("unknown-question", e.to_string()));
                continue;
            }
        };
        let raw = get("likert");
        if raw.is_empty() {
            out.rejects.push(reject("missing-likert", String::new()));
            continue;
        }
        let likert = match raw.parse::<i64>() {
            Ok(v) if (1..=5).contains(&v) => v as u8,
            Ok(v) => {
                out.rejects.push(reject("likert-range", v.to_string()));
                continue;
            }
            Err(_) => {
                out.rejects.push(reject("likert-range", format!("`{raw}` is not an integer")));
                continue;
            }
        };
        let ranking = match get("ranking") {
            "" => None,
            r => match parse_ranking(r) {
                Ok(p) => Some(p),
                Err(d) => {
                    out.rejects.push(reject("not-a-permutation", d));
                    continue;
                }
            },
        };
        let style = style_col
            .and_then(|c| row.get(c))
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .unwrap_or(MIXED_STYLE);
        out.records.push(GoldRecord {
            system_id: system.to_string(),
            artifact: artifact.to_string(),
            worker_id: anonymize_worker(salt, worker),
            question,
            likert,
            ranking,
            free_text: get("free_text").to_string(),
            style: style.to_string(),
        });
    }
    Ok(out)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Aggregates the Likert answers of every worker for one
/// (system, artifact, question).
pub fn aggregate_gold(
    records: &[GoldRecord],
    system_id: &str,
    artifact: &str,
    question: GoldQuestion,
) -> Result<GoldAggregate, GoldError> {
    let values: Vec<f64> = records
        .iter()
        .filter(|r| r.system_id == system_id && r.artifact == artifact && r.question == question)
        .map(|r| f64::from(r.likert))
        .collect();
    let (mean, std) = mean_std(&values)
        .ok_or_else(|| GoldError::NoRecords(format!("{system_id}/{artifact}/{question}")))?;
    Ok(GoldAggregate {
        system_id: system_id.to_string(),
        artifact: artifact.to_string(),
        question,
        mean,
        std,
        n_workers: values.len(),
    })
}

/// Aggregates for every (system, artifact, question) present, in key order.
pub fn aggregate_all(records: &[GoldRecord]) -> Vec<GoldAggregate> {
    let mut groups: BTreeMap<(&str, &str, GoldQuestion), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups
            .entry((&r.system_id, &r.artifact, r.question))
            .or_default()
            .push(f64::from(r.likert));
    }
    groups
        .into_iter()
        .map(|((s, a, q), v)| {
            let (mean, std) = mean_std(&v).expect("non-empty group");
            GoldAggregate {
                system_id: s.to_string(),
                artifact: a.to_string(),
                question: q,
                mean,
                std,
                n_workers: v.len(),
            }
        })
        .collect()
}

/// Number of discordant pairs between two rankings of the same labels.
pub fn kendall_distance<T: Ord>(a: &[T], b: &[T]) -> Result<usize, GoldError> {
    if a.len() != b.len() {
        return Err(GoldError::MismatchedRankings);
    }
    let pos: BTreeMap<&T, usize> = b.iter().enumerate().map(|(i, x)| (x, i)).collect();
    if pos.len() != b.len() {
        return Err(GoldError::MismatchedRankings);
    }
    let mapped = a
        .iter()
        .map(|x| pos.get(x).copied().ok_or(GoldError::MismatchedRankings))
        .collect::<Result<Vec<_>, _>>()?;
    let mut d = 0;
    for i in 0..mapped.len() {
        for j in (i + 1)..mapped.len() {
            if mapped[i] > mapped[j] {
                d += 1;
            }
        }
    }
    Ok(d)
}

/// `1 - KD / max(KD)` for one pair of rankings.
pub fn pair_agreement<T: Ord>(a: &[T], b: &[T]) -> Result<f64, GoldError> {
    let kd = kendall_distance(a, b)?;
    let n = a.len();
    if n < 2 {
        return Err(GoldError::MismatchedRankings);
    }
    Ok(1.0 - kd as f64 / (n * (n - 1) / 2) as f64)
}

/// Mean pairwise agreement. Without an encoder ranking, over all worker
/// pairs (needs two rankings); with one, over all (worker, encoder) pairs.
pub fn ranking_agreement<T: Ord>(rankings: &[Vec<T>], encoder_ranking: Option<&[T]>) -> Result<f64, GoldError> {
    let mut total = 0.0;
    let mut pairs = 0usize;
    match encoder_ranking {
        Some(enc) => {
            if rankings.is_empty() {
                return Err(GoldError::TooFewRankings { needed: 1, got: 0 });
            }
            for r in rankings {
                total += pair_agreement(r, enc)?;
                pairs += 1;
            }
        }
        None => {
            if rankings.len() < 2 {
                return Err(GoldError::TooFewRankings {
                    needed: 2,
                    got: rankings.len(),
                });
            }
            for i in 0..rankings.len() {
                for j in (i + 1)..rankings.len() {
                    total += pair_agreement(&rankings[i], &rankings[j])?;
                    pairs += 1;
                }
            }
        }
    }
    Ok(total / pairs as f64)
}

/// Per-(system, artifact) agreement over the PS rankings in `records`.
/// Artifacts with too few rankings are left out. `encoder` maps artifact to
/// its encoder ranking and switches to encoder mode.
pub fn agreement_by_artifact(
    records: &[GoldRecord],
    encoder: Option<&BTreeMap<String, Vec<char>>>,
) -> Result<BTreeMap<(String, String), f64>, GoldError> {
    let mut groups: BTreeMap<(String, String), Vec<Vec<char>>> = BTreeMap::new();
    for r in records {
        if let Some(rank) = &r.ranking {
            groups
                .entry((r.system_id.clone(), r.artifact.clone()))
                .or_default()
                .push(rank.clone());
        }
    }
    let mut out = BTreeMap::new();
    for (key, ranks) in groups {
        let enc = match encoder {
            Some(m) => match m.get(&key.1) {
                Some(e) => Some(e.as_slice()),
                None => continue,
            },
            None => None,
        };
        match ranking_agreement(&ranks, enc) {
            Ok(a) => {
                out.insert(key, a);
            }
            Err(GoldError::TooFewRankings { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Labels of the ground-truth images ordered by descending similarity to the
/// name-prompt image set. Ties keep label order.
pub fn encoder_ranking(
    ground_truth: &EmbeddingSet,
    generated_n: &EmbeddingSet,
    mode: SimilarityMode,
) -> Result<Vec<char>, crate::embed::EmbedError> {
    let mut scored = Vec::with_capacity(ground_truth.len());
    for (i, label) in ('a'..='z').take(ground_truth.len()).enumerate() {
        scored.push((cosine_set_similarity(&ground_truth.single(i), generated_n, mode)?, label));
    }
    scored.sort_by(|x, y| y.0.total_cmp(&x.0));
    Ok(scored.into_iter().map(|(_, l)| l).collect())
}
