//! Per-sample data filters: heuristic character/keyword rules, repeated
//! segment and frequent phrase detection, and judge verdicts.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, Sample};
use crate::textstats::tokenize;

pub const RULE_ABNORMAL_CHARS: &str = "abnormal_chars";
pub const RULE_BLOCKED_KEYWORD: &str = "blocked_keyword";
pub const RULE_REPEATED_SEGMENT: &str = "repeated_segment";
pub const RULE_FREQUENT_PHRASE: &str = "frequent_phrase";
pub const RULE_INCOHERENT: &str = "incoherent";
pub const RULE_HALLUCINATION: &str = "hallucination";
pub const NOTE_JUDGE_SKIPPED: &str = "judge-skipped";

const JUDGE_EVIDENCE_CHARS: usize = 80;
const SNIPPET_CHARS: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub max_abnormal_char_ratio: f64,
    pub keyword_blocklist: Vec<String>,
    pub min_repeat_segment_chars: usize,
    pub min_segment_occurrences: usize,
    pub phrase_ngram_range: (usize, usize),
    pub max_phrase_token_share: f64,
    /// An n-gram must also occur at least this many times, so that very
    /// short responses are not rejected on share alone.
    pub min_phrase_occurrences: usize,
    pub judge_required: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            max_abnormal_char_ratio: 0.1,
            keyword_blocklist: vec!["as an AI language model".into(), "as a large language model".into()],
            min_repeat_segment_chars: 20,
            min_segment_occurrences: 3,
            phrase_ngram_range: (1, 4),
            max_phrase_token_share: 0.3,
            min_phrase_occurrences: 3,
            judge_required: false,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.max_abnormal_char_ratio) {
            return bad(format!("max_abnormal_char_ratio {} outside [0, 1]", self.max_abnormal_char_ratio));
        }
        if self.min_repeat_segment_chars < 2 {
            return bad("min_repeat_segment_chars must be >= 2".into());
        }
        if self.min_segment_occurrences < 2 {
            return bad("min_segment_occurrences must be >= 2".into());
        }
        let (lo, hi) = self.phrase_ngram_range;
        if lo == 0 || lo > hi {
            return bad(format!("phrase_ngram_range ({lo}, {hi}) must satisfy 1 <= lo <= hi"));
        }
        if !(self.max_phrase_token_share > 0.0 && self.max_phrase_token_share <= 1.0) {
            return bad(format!("max_phrase_token_share {} outside (0, 1]", self.max_phrase_token_share));
        }
        if self.keyword_blocklist.iter().any(|k| k.trim().is_empty()) {
            return bad("blocklist keywords must be non-empty".into());
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: FilterConfig = toml::from_str(text).map_err(|e| Error::Config(format!("filter config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml_str(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Reads a blocklist: one keyword per line, blank lines and `#` comments ignored.
pub fn load_blocklist(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Keep,
    Reject,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectReason {
    pub rule: String,
    /// Verbatim excerpt of the prompt or response.
    pub evidence: String,
    pub measured: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub id: String,
    pub decision: Decision,
    pub reasons: Vec<RejectReason>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl FilterVerdict {
    fn keep(id: &str) -> Self {
        FilterVerdict {
            id: id.to_string(),
            decision: Decision::Keep,
            reasons: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn from_reasons(id: &str, reasons: Vec<RejectReason>) -> Self {
        FilterVerdict {
            id: id.to_string(),
            decision: if reasons.is_empty() { Decision::Keep } else { Decision::Reject },
            reasons,
            notes: Vec::new(),
        }
    }

    pub fn is_kept(&self) -> bool {
        self.decision == Decision::Keep
    }
}

fn is_abnormal(c: char) -> bool {
    match get_general_category(c) {
        GeneralCategory::Control => !c.is_whitespace(),
        GeneralCategory::Format
        | GeneralCategory::PrivateUse
        | GeneralCategory::Surrogate
        | GeneralCategory::Unassigned => true,
        _ => false,
    }
}

/// Up to `SNIPPET_CHARS` characters of `text` starting at byte `start`.
fn snippet_from(text: &str, start: usize) -> String {
    text[start..].chars().take(SNIPPET_CHARS).collect()
}

/// Filters with the keyword pattern compiled once.
#[derive(Clone, Debug)]
pub struct FilterBank {
    cfg: FilterConfig,
    keywords: Option<Regex>,
}

impl FilterBank {
    pub fn new(cfg: FilterConfig) -> Result<Self> {
        cfg.validate()?;
        let keywords = if cfg.keyword_blocklist.is_empty() {
            None
        } else {
            let alternation: Vec<String> = cfg.keyword_blocklist.iter().map(|k| regex::escape(k.trim())).collect();
            let pattern = format!("(?i){}", alternation.join("|"));
            Some(Regex::new(&pattern).map_err(|e| Error::Config(format!("blocklist: {e}")))?)
        };
        Ok(FilterBank { cfg, keywords })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    pub fn abnormal_chars(&self, sample: &Sample) -> FilterVerdict {
        let mut reasons = Vec::new();
        let texts = [sample.prompt.as_str(), sample.response.as_str()];
        let total: usize = texts.iter().map(|t| t.chars().count()).sum();
        let abnormal: usize = texts.iter().map(|t| t.chars().filter(|&c| is_abnormal(c)).count()).sum();
        let ratio = if total == 0 { 0.0 } else { abnormal as f64 / total as f64 };
        if ratio > self.cfg.max_abnormal_char_ratio {
            let evidence = texts
                .iter()
                .find_map(|t| t.char_indices().find(|&(_, c)| is_abnormal(c)).map(|(i, _)| snippet_from(t, i)))
                .unwrap_or_default();
            reasons.push(RejectReason {
                rule: RULE_ABNORMAL_CHARS.into(),
                evidence,
                measured: ratio,
            });
        }
        if let Some(re) = &self.keywords {
            let mut hits = texts.iter().flat_map(|t| re.find_iter(t)).peekable();
            if let Some(first) = hits.peek() {
                let evidence = first.as_str().to_string();
                let count = hits.count();
                reasons.push(RejectReason {
                    rule: RULE_BLOCKED_KEYWORD.into(),
                    evidence,
                    measured: count as f64,
                });
            }
        }
        FilterVerdict::from_reasons(&sample.id, reasons)
    }

    pub fn repeated_segment(&self, sample: &Sample) -> FilterVerdict {
        let reasons = find_repeated_segment(
            &sample.response,
            self.cfg.min_repeat_segment_chars,
            self.cfg.min_segment_occurrences,
        )
        .map(|(segment, count)| RejectReason {
            rule: RULE_REPEATED_SEGMENT.into(),
            evidence: segment,
            measured: count as f64,
        });
        FilterVerdict::from_reasons(&sample.id, reasons.into_iter().collect())
    }

    pub fn frequent_phrase(&self, sample: &Sample) -> FilterVerdict {
        let reasons = find_frequent_phrase(&sample.response, &self.cfg).map(|(evidence, share)| RejectReason {
            rule: RULE_FREQUENT_PHRASE.into(),
            evidence,
            measured: share,
        });
        FilterVerdict::from_reasons(&sample.id, reasons.into_iter().collect())
    }

    pub fn judge(&self, sample: &Sample) -> Result<FilterVerdict> {
        let Some(verdict) = sample.annotations.judge_verdict else {
            if self.cfg.judge_required {
                return Err(Error::JudgeRequired { id: sample.id.clone() });
            }
            let mut v = FilterVerdict::keep(&sample.id);
            v.notes.push(NOTE_JUDGE_SKIPPED.into());
            return Ok(v);
        };
        let evidence: String = sample.response.chars().take(JUDGE_EVIDENCE_CHARS).collect();
        let mut reasons = Vec::new();
        if !verdict.coherent {
            reasons.push(RejectReason {
                rule: RULE_INCOHERENT.into(),
                evidence: evidence.clone(),
                measured: 0.0,
            });
        }
        if verdict.hallucination {
            reasons.push(RejectReason {
                rule: RULE_HALLUCINATION.into(),
                evidence,
                measured: 1.0,
            });
        }
        Ok(FilterVerdict::from_reasons(&sample.id, reasons))
    }

    /// All stages in order, stopping at the first rejection.
    pub fn verdict(&self, sample: &Sample) -> Result<FilterVerdict> {
        for stage in [Self::abnormal_chars, Self::repeated_segment, Self::frequent_phrase] {
            let v = stage(self, sample);
            if !v.is_kept() {
                return Ok(v);
            }
        }
        self.judge(sample)
    }

    pub fn run(&self, manifest: &DatasetManifest) -> Result<(DatasetManifest, FilterReport)> {
        let mut kept = Vec::new();
        let mut report = FilterReport {
            dataset: manifest.name.clone(),
            total: manifest.len(),
            kept: 0,
            rejected: 0,
            rejections_by_rule: BTreeMap::new(),
            judge_skipped: 0,
            verdicts: Vec::with_capacity(manifest.len()),
        };
        for sample in &manifest.samples {
            let v = self.verdict(sample)?;
            if v.is_kept() {
                kept.push(sample.clone());
                report.kept += 1;
                if v.notes.iter().any(|n| n == NOTE_JUDGE_SKIPPED) {
                    report.judge_skipped += 1;
                }
            } else {
                report.rejected += 1;
                *report.rejections_by_rule.entry(v.reasons[0].rule.clone()).or_default() += 1;
            }
            report.verdicts.push(v);
        }
        let kept = DatasetManifest {
            name: manifest.name.clone(),
            category: manifest.category,
            samples: kept,
            source_note: manifest.source_note.clone(),
        };
        Ok((kept, report))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub dataset: String,
    pub total: usize,
    pub kept: usize,
    pub rejected: usize,
    /// Rejected samples counted under the first rule that fired.
    pub rejections_by_rule: BTreeMap<String, usize>,
    pub judge_skipped: usize,
    pub verdicts: Vec<FilterVerdict>,
}

pub fn abnormal_char_filter(sample: &Sample, cfg: &FilterConfig) -> Result<FilterVerdict> {
    Ok(FilterBank::new(cfg.clone())?.abnormal_chars(sample))
}

pub fn repeated_segment_filter(sample: &Sample, cfg: &FilterConfig) -> Result<FilterVerdict> {
    Ok(FilterBank::new(cfg.clone())?.repeated_segment(sample))
}

pub fn frequent_phrase_filter(sample: &Sample, cfg: &FilterConfig) -> Result<FilterVerdict> {
    Ok(FilterBank::new(cfg.clone())?.frequent_phrase(sample))
}

pub fn judge_filter(sample: &Sample, cfg: &FilterConfig) -> Result<FilterVerdict> {
    FilterBank::new(cfg.clone())?.judge(sample)
}

pub fn run_pipeline(manifest: &DatasetManifest, cfg: &FilterConfig) -> Result<(DatasetManifest, FilterReport)> {
    FilterBank::new(cfg.clone())?.run(manifest)
}

/// Greedy left-to-right count of occurrences at `positions` (sorted) that do
/// not overlap for segments of `len` chars.
fn non_overlapping(positions: &[usize], len: usize) -> Vec<usize> {
    let mut chosen = Vec::new();
    for &p in positions {
        if chosen.last().is_none_or(|&last| p >= last + len) {
            chosen.push(p);
        }
    }
    chosen
}

/// Finds a segment of at least `min_len` chars occurring at least `min_count`
/// times without overlap. Any such segment has a `min_len`-char prefix that
/// also qualifies, so only windows of exactly `min_len` chars are hashed; the
/// reported segment is then extended as far as all occurrences agree.
pub fn find_repeated_segment(text: &str, min_len: usize, min_count: usize) -> Option<(String, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    if min_len == 0 || min_count == 0 || n < min_len * min_count {
        return None;
    }
    const BASE: u64 = 1_000_003;
    let top = (1..min_len).fold(1u64, |acc, _| acc.wrapping_mul(BASE));
    let mut hash = chars[..min_len]
        .iter()
        .fold(0u64, |h, &c| h.wrapping_mul(BASE).wrapping_add(c as u64));
    let mut buckets: HashMap<u64, Vec<usize>> = HashMap::new();
    buckets.entry(hash).or_default().push(0);
    for start in 1..=n - min_len {
        hash = hash
            .wrapping_sub((chars[start - 1] as u64).wrapping_mul(top))
            .wrapping_mul(BASE)
            .wrapping_add(chars[start + min_len - 1] as u64);
        buckets.entry(hash).or_default().push(start);
    }

    let mut best: Option<(usize, Vec<usize>)> = None;
    for positions in buckets.values().filter(|p| p.len() >= min_count) {
        // exact confirmation: split the bucket into classes of identical windows
        let mut classes: Vec<Vec<usize>> = Vec::new();
        for &p in positions {
            let window = &chars[p..p + min_len];
            match classes.iter_mut().find(|c| &chars[c[0]..c[0] + min_len] == window) {
                Some(class) => class.push(p),
                None => classes.push(vec![p]),
            }
        }
        for class in classes {
            let chosen = non_overlapping(&class, min_len);
            if chosen.len() >= min_count && best.as_ref().is_none_or(|(first, _)| chosen[0] < *first) {
                best = Some((chosen[0], chosen));
            }
        }
    }
    let (_, chosen) = best?;
    let mut len = min_len;
    loop {
        let next = len + 1;
        let fits = chosen.windows(2).all(|w| w[0] + next <= w[1]) && chosen[chosen.len() - 1] + next <= n;
        if !fits || chosen.iter().any(|&p| chars[p + len] != chars[chosen[0] + len]) {
            break;
        }
        len = next;
    }
    let segment: String = chars[chosen[0]..chosen[0] + len].iter().collect();
    Some((segment, chosen.len()))
}

fn byte_offset(outer: &str, inner: &str) -> usize {
    inner.as_ptr() as usize - outer.as_ptr() as usize
}

/// Returns the verbatim span of the first occurrence of the dominant n-gram
/// and its share of all n-grams of that order.
pub fn find_frequent_phrase(text: &str, cfg: &FilterConfig) -> Option<(String, f64)> {
    let tokens = tokenize(text);
    let lowered: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
    let (lo, hi) = cfg.phrase_ngram_range;
    for n in lo..=hi {
        if tokens.len() < n {
            break;
        }
        let total = tokens.len() - n + 1;
        let mut counts: HashMap<&[String], (usize, usize)> = HashMap::new();
        for start in 0..total {
            counts.entry(&lowered[start..start + n]).or_insert((0, start)).0 += 1;
        }
        let (count, first) = counts
            .values()
            .copied()
            .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
            .expect("at least one n-gram");
        let share = count as f64 / total as f64;
        if share > cfg.max_phrase_token_share && count >= cfg.min_phrase_occurrences {
            let last = tokens[first + n - 1];
            let span = &text[byte_offset(text, tokens[first])..byte_offset(text, last) + last.len()];
            return Some((span.to_string(), share));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::JudgeVerdict;
    use proptest::prelude::*;

    fn s(response: &str) -> Sample {
        Sample::text("x", "Describe the image.", response)
    }

    fn bank() -> FilterBank {
        FilterBank::new(FilterConfig::default()).unwrap()
    }

    #[test]
    fn abnormal_ratio_measured() {
        assert!(bank().abnormal_chars(&s("A dog runs across a sunny park.")).is_kept());
        let v = bank().abnormal_chars(&Sample::text("x", "", "ab\u{1}\u{2}"));
        assert_eq!(v.decision, Decision::Reject);
        assert_eq!(v.reasons[0].rule, RULE_ABNORMAL_CHARS);
        assert_eq!(v.reasons[0].measured, 0.5);
        assert!(v.reasons[0].evidence.starts_with('\u{1}'));
        // newlines and tabs are ordinary whitespace
        assert!(bank().abnormal_chars(&s("line one\n\tline two\r\n")).is_kept());
        // private use and format chars count
        let v = bank().abnormal_chars(&Sample::text("x", "", "\u{E000}\u{200B}ab"));
        assert_eq!(v.reasons[0].measured, 0.5);
    }

    #[test]
    fn keyword_case_insensitive() {
        let text = "As An AI Language Model, I cannot see images.";
        let v = bank().abnormal_chars(&s(text));
        assert_eq!(v.reasons[0].rule, RULE_BLOCKED_KEYWORD);
        assert!(text.contains(&v.reasons[0].evidence));
    }

    #[test]
    fn repeated_sentence_rejected() {
        let sentence = "The background is mostly gray, but there's a lot of text. ";
        let text = format!("In the picture a sign stands. {}{}{}", sentence, sentence, sentence);
        let v = bank().repeated_segment(&s(&text));
        assert_eq!(v.decision, Decision::Reject);
        let r = &v.reasons[0];
        assert_eq!(r.measured, 3.0);
        assert!(r.evidence.chars().count() >= sentence.trim_end().chars().count());
        assert!(text.contains(&r.evidence));
    }

    #[test]
    fn repeated_segment_boundaries() {
        assert!(bank().repeated_segment(&s("The quick brown fox jumps over the lazy dog")).is_kept());
        assert!(bank().repeated_segment(&s("abab")).is_kept());
        // overlapping occurrences do not count: "a" * 59 has only 2 disjoint 20-char windows... plus one
        assert!(find_repeated_segment(&"a".repeat(59), 20, 3).is_none());
        assert_eq!(find_repeated_segment(&"a".repeat(60), 20, 3).unwrap().1, 3);
    }

    #[test]
    fn dots_phrase_rejected() {
        let v = bank().frequent_phrase(&s("dots, dots, dots, dots, dots, dots, dots, dots"));
        assert_eq!(v.decision, Decision::Reject);
        assert_eq!(v.reasons[0].evidence, "dots");
        assert_eq!(v.reasons[0].measured, 1.0);
    }

    #[test]
    fn phrase_share_thresholds() {
        // "red" is 2 of 8 = 0.25
        assert!(bank().frequent_phrase(&s("red car and red bus near a tall tree")).is_kept());
        assert!(bank().frequent_phrase(&s("")).is_kept());
        // short answers are not rejected on share alone
        assert!(bank().frequent_phrase(&s("Yes.")).is_kept());
    }

    #[test]
    fn phrase_evidence_is_verbatim_span() {
        let text = "Look: Big Cat, big cat; BIG CAT, big cat and more";
        let cfg = FilterConfig {
            phrase_ngram_range: (2, 2),
            ..Default::default()
        };
        let (span, share) = find_frequent_phrase(text, &cfg).unwrap();
        assert_eq!(span, "Big Cat");
        assert!((share - 4.0 / 10.0).abs() < 1e-12);
    }

    #[test]
    fn judge_rules() {
        let mut sample = s("A cat.");
        sample.annotations.judge_verdict = Some(JudgeVerdict {
            coherent: true,
            hallucination: false,
        });
        assert!(bank().judge(&sample).unwrap().is_kept());
        sample.annotations.judge_verdict = Some(JudgeVerdict {
            coherent: true,
            hallucination: true,
        });
        let v = bank().judge(&sample).unwrap();
        assert_eq!(v.reasons.len(), 1);
        assert_eq!(v.reasons[0].rule, RULE_HALLUCINATION);
        sample.annotations.judge_verdict = None;
        let v = bank().judge(&sample).unwrap();
        assert_eq!(v.notes, [NOTE_JUDGE_SKIPPED]);
        let strict = FilterBank::new(FilterConfig {
            judge_required: true,
            ..Default::default()
        })
        .unwrap();
        assert!(matches!(strict.judge(&sample), Err(Error::JudgeRequired { .. })));
    }

    #[test]
    fn pipeline_attributes_first_rule() {
        let m = DatasetManifest::new(
            "m",
            vec![
                Sample::text("ok", "q", "A brown horse grazes in a quiet field."),
                Sample::text("ctl", "q", "\u{1}\u{1}\u{1}x"),
                Sample::text("rep", "q", "twenty chars repeat! ".repeat(3)),
                Sample::text("dots", "q", "dots, dots, dots, dots"),
            ],
        );
        let (kept, report) = run_pipeline(&m, &FilterConfig::default()).unwrap();
        assert_eq!(kept.samples.len(), 1);
        assert_eq!(kept.samples[0].id, "ok");
        assert_eq!(
            report.rejections_by_rule,
            BTreeMap::from([
                (RULE_ABNORMAL_CHARS.to_string(), 1),
                (RULE_FREQUENT_PHRASE.to_string(), 1),
                (RULE_REPEATED_SEGMENT.to_string(), 1),
            ])
        );
        let (again, report2) = run_pipeline(&kept, &FilterConfig::default()).unwrap();
        assert_eq!(again, kept);
        assert_eq!(report2.rejected, 0);
    }

    #[test]
    fn config_validation_and_toml() {
        let cfg = FilterConfig::from_toml_str("max_abnormal_char_ratio = 0.2\nphrase_ngram_range = [2, 3]\n").unwrap();
        assert_eq!(cfg.max_abnormal_char_ratio, 0.2);
        assert_eq!(cfg.phrase_ngram_range, (2, 3));
        assert_eq!(cfg.min_repeat_segment_chars, 20);
        assert!(FilterConfig::from_toml_str("phrase_ngram_range = [3, 2]\n").is_err());
        assert!(FilterConfig::from_toml_str("min_repeat_segment_chars = 1\n").is_err());
        assert!(FilterConfig::from_toml_str("bogus = 1\n").is_err());
    }

    fn evidence_in_sample(v: &FilterVerdict, sample: &Sample) -> bool {
        v.reasons
            .iter()
            .all(|r| sample.prompt.contains(&r.evidence) || sample.response.contains(&r.evidence))
    }

    proptest! {
        #[test]
        fn triple_repeat_always_rejected(seg in "[a-zA-Z ,.]{20,40}", pre in "[a-z ]{0,10}", post in "[a-z ]{0,10}") {
            let text = format!("{pre}{seg}{seg}{seg}{post}");
            let (found, count) = find_repeated_segment(&text, 20, 3).expect("must detect");
            prop_assert!(count >= 3);
            prop_assert!(text.contains(&found));
            prop_assert!(found.chars().count() >= 20);
        }

        #[test]
        fn detection_matches_brute_force(text in "[ab]{0,40}", m in 2usize..6, k in 2usize..4) {
            let chars: Vec<char> = text.chars().collect();
            let mut expected = false;
            if chars.len() >= m {
                for i in 0..=chars.len() - m {
                    let w = &chars[i..i + m];
                    let mut count = 0;
                    let mut j = 0;
                    while j + m <= chars.len() {
                        if &chars[j..j + m] == w { count += 1; j += m; } else { j += 1; }
                    }
                    if count >= k { expected = true; }
                }
            }
            prop_assert_eq!(find_repeated_segment(&text, m, k).is_some(), expected);
        }

        #[test]
        fn verdicts_are_per_sample(texts in prop::collection::vec("[a-z ,.\u{1}]{0,60}", 1..12)) {
            let samples: Vec<Sample> = texts.iter().enumerate().map(|(i, t)| Sample::text(format!("s{i}"), "q", t.clone())).collect();
            let m = DatasetManifest::new("m", samples.clone());
            let mut rev = samples.clone();
            rev.reverse();
            let m_rev = DatasetManifest::new("m", rev);
            let (kept, report) = run_pipeline(&m, &FilterConfig::default()).unwrap();
            let (_, report_rev) = run_pipeline(&m_rev, &FilterConfig::default()).unwrap();
            let mut fwd = report.verdicts.clone();
            let mut bwd = report_rev.verdicts.clone();
            fwd.sort_by(|a, b| a.id.cmp(&b.id));
            bwd.sort_by(|a, b| a.id.cmp(&b.id));
            prop_assert_eq!(fwd, bwd);
            for (v, sample) in report.verdicts.iter().zip(&samples) {
                prop_assert!(evidence_in_sample(v, sample));
                prop_assert!(v.is_kept() || !v.reasons.is_empty());
            }
            prop_assert_eq!(kept.len() + report.rejected, samples.len());
            let (again, r2) = run_pipeline(&kept, &FilterConfig::default()).unwrap();
            prop_assert_eq!(r2.rejected, 0);
            prop_assert_eq!(again, kept);
        }
    }
}
