//! Textual complexity metrics: average response length, type-token ratio and
//! perplexity, plus their aggregate text score.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::oracle::PerplexityOracle;
use crate::scoring::ensure_unit;

/// Raw (unnormalized) text metrics of one dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextMetrics {
    pub avg_token_length: f64,
    pub avg_ttr: f64,
    pub avg_perplexity: f64,
    pub n: usize,
}

/// Splits on Unicode word boundaries and keeps only segments containing a
/// letter or digit. Case is preserved.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.unicode_words().collect()
}

/// Mean number of response tokens per sample.
pub fn avg_token_length(dataset: &DatasetManifest) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyManifest(dataset.name.clone()));
    }
    let total: f64 = dataset
        .samples
        .iter()
        .map(|s| tokenize(&s.response).len() as f64)
        .sum();
    Ok(total / dataset.len() as f64)
}

/// Type-token ratio of a token list; `None` when empty.
pub fn type_token_ratio(tokens: &[&str]) -> Option<f64> {
    if tokens.is_empty() {
        return None;
    }
    let distinct: HashSet<&&str> = tokens.iter().collect();
    Some(distinct.len() as f64 / tokens.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TtrOutcome {
    pub value: f64,
    /// Ids of samples whose prompt+response had no tokens.
    pub skipped: Vec<String>,
}

/// Mean TTR of `prompt + " " + response` over samples with at least one token.
pub fn avg_ttr(dataset: &DatasetManifest) -> Result<TtrOutcome> {
    let mut sum = 0.0;
    let mut counted = 0usize;
    let mut skipped = Vec::new();
    for sample in &dataset.samples {
        let joined = format!("{} {}", sample.prompt, sample.response);
        match type_token_ratio(&tokenize(&joined)) {
            Some(ttr) => {
                sum += ttr;
                counted += 1;
            }
            None => skipped.push(sample.id.clone()),
        }
    }
    if counted == 0 {
        return Err(Error::UndefinedMetric("type-token ratio"));
    }
    Ok(TtrOutcome {
        value: sum / counted as f64,
        skipped,
    })
}

/// Mean response perplexity. Annotated values take precedence over `lm`.
pub fn avg_perplexity(dataset: &DatasetManifest, lm: Option<&dyn PerplexityOracle>) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyManifest(dataset.name.clone()));
    }
    let mut sum = 0.0;
    for sample in &dataset.samples {
        let ppl = sample
            .annotations
            .perplexity
            .or_else(|| lm.and_then(|lm| lm.perplexity(sample)))
            .ok_or_else(|| Error::MissingAnnotation {
                id: sample.id.clone(),
                what: "perplexity",
            })?;
        sum += ppl;
    }
    Ok(sum / dataset.len() as f64)
}

pub fn text_score(length: f64, ttr: f64, perplexity: f64) -> Result<f64> {
    ensure_unit("normalized token length", length)?;
    ensure_unit("normalized TTR", ttr)?;
    ensure_unit("normalized perplexity", perplexity)?;
    Ok((length + ttr + perplexity) / 3.0)
}

pub fn text_metrics(dataset: &DatasetManifest, lm: Option<&dyn PerplexityOracle>) -> Result<TextMetrics> {
    Ok(TextMetrics {
        avg_token_length: avg_token_length(dataset)?,
        avg_ttr: avg_ttr(dataset)?.value,
        avg_perplexity: avg_perplexity(dataset, lm)?,
        n: dataset.len(),
    })
}
