//! Providers of model-derived per-sample values.
//!
//! Annotations attached from a sidecar always win; an oracle is consulted
//! only for samples that lack the annotation.

use std::collections::HashMap;

use crate::manifest::{DatasetManifest, Sample};
use crate::textstats::tokenize;

pub trait PerplexityOracle {
    /// Perplexity of the response given the prompt, or `None` if unsupported.
    fn perplexity(&self, sample: &Sample) -> Option<f64>;
}

pub trait CountOracle {
    fn count(&self, sample: &Sample) -> Option<u64>;
}

/// OCR token counts read from annotations.
#[derive(Clone, Copy, Debug, Default)]
pub struct OcrAnnotations;

impl CountOracle for OcrAnnotations {
    fn count(&self, sample: &Sample) -> Option<u64> {
        sample.annotations.ocr_token_count
    }
}

/// Detected-object counts read from annotations.
#[derive(Clone, Copy, Debug, Default)]
pub struct ObjectAnnotations;

impl CountOracle for ObjectAnnotations {
    fn count(&self, sample: &Sample) -> Option<u64> {
        sample.annotations.object_count
    }
}

/// Add-one smoothed unigram language model fit on a dataset's responses.
///
/// `p(w) = (count(w) + 1) / (N + V)` with `N` the token total and `V` the
/// number of distinct types. Unseen tokens get `1 / (N + V)`. A response with
/// no tokens has perplexity 1.
#[derive(Clone, Debug)]
pub struct UnigramPerplexity {
    counts: HashMap<String, u64>,
    denominator: f64,
}

impl UnigramPerplexity {
    pub fn fit(dataset: &DatasetManifest) -> Self {
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut total = 0u64;
        for sample in &dataset.samples {
            for tok in tokenize(&sample.response) {
                *counts.entry(tok.to_string()).or_insert(0) += 1;
                total += 1;
            }
        }
        let denominator = (total + counts.len() as u64) as f64;
        UnigramPerplexity { counts, denominator }
    }

    pub fn response_perplexity(&self, response: &str) -> f64 {
        let tokens = tokenize(response);
        if tokens.is_empty() || self.denominator == 0.0 {
            return 1.0;
        }
        let mut log_sum = 0.0;
        for tok in &tokens {
            let c = self.counts.get(*tok).copied().unwrap_or(0);
            log_sum += ((c + 1) as f64 / self.denominator).ln();
        }
        (-log_sum / tokens.len() as f64).exp()
    }
}

impl PerplexityOracle for UnigramPerplexity {
    fn perplexity(&self, sample: &Sample) -> Option<f64> {
        Some(self.response_perplexity(&sample.response))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_token_alphabet_has_unit_perplexity() {
        let d = DatasetManifest::new(
            "a",
            vec![Sample::text("1", "q", "a a a"), Sample::text("2", "q", "a")],
        );
        let lm = UnigramPerplexity::fit(&d);
        for s in &d.samples {
            assert_eq!(lm.perplexity(s), Some(1.0));
        }
    }

    #[test]
    fn two_equiprobable_tokens() {
        // counts a:1 b:1, N=2, V=2 -> p = 2/4 each -> PPL 2
        let d = DatasetManifest::new("a", vec![Sample::text("1", "", "a b")]);
        let lm = UnigramPerplexity::fit(&d);
        assert!((lm.response_perplexity("a b") - 2.0).abs() < 1e-12);
        assert!((lm.response_perplexity("zzz") - 4.0).abs() < 1e-12);
        assert_eq!(lm.response_perplexity(""), 1.0);
    }

    #[test]
    fn deterministic_bitwise() {
        let d = DatasetManifest::new(
            "a",
            vec![Sample::text("1", "", "the cat sat on the mat"), Sample::text("2", "", "a dog")],
        );
        let x = UnigramPerplexity::fit(&d).response_perplexity("the dog sat");
        let y = UnigramPerplexity::fit(&d).response_perplexity("the dog sat");
        assert_eq!(x.to_bits(), y.to_bits());
    }
}
