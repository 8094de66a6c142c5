//! Batch normalization, composite complexity scores and per-category weight
//! calibration against human-ranked difficulty subsets.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagestats::{self, ENTROPY_NORMALIZER};
use crate::manifest::{DatasetManifest, TaskCategory};
use crate::oracle::{CountOracle, ObjectAnnotations, OcrAnnotations, PerplexityOracle, UnigramPerplexity};
use crate::taskgap::{self, GapConfig};
use crate::textstats;

pub(crate) fn ensure_unit(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::OutOfUnitRange { name, value })
    }
}

/// How one batch of raw values is mapped into `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BatchNorm {
    /// `(v - min) / (max - min)`; a degenerate range maps every value to 0.5.
    MinMax,
    /// `min(v / cap, 1)`.
    FixedCap(f64),
}

pub fn normalize_batch(values: &[f64], mode: BatchNorm) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InvalidInput("cannot normalize an empty batch".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite value {v} in batch")));
    }
    match mode {
        BatchNorm::MinMax => {
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == min {
                return Ok(vec![0.5; values.len()]);
            }
            let range = max - min;
            Ok(values.iter().map(|v| ((v - min) / range).clamp(0.0, 1.0)).collect())
        }
        BatchNorm::FixedCap(cap) => {
            if !(cap.is_finite() && cap > 0.0) {
                return Err(Error::Config(format!("normalization cap must be > 0, got {cap}")));
            }
            Ok(values.iter().map(|v| (v / cap).clamp(0.0, 1.0)).collect())
        }
    }
}

/// Caps for fixed-cap normalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedCaps {
    pub token_length: f64,
    pub perplexity: f64,
    pub text_density: f64,
    pub object_density: f64,
}

impl Default for FixedCaps {
    fn default() -> Self {
        FixedCaps {
            token_length: 1024.0,
            perplexity: 100.0,
            text_density: 0.01,
            object_density: 0.001,
        }
    }
}

/// Normalization applied across a scoring batch. Entropy always uses the
/// fixed 8-bit maximum; TTR is already in `(0, 1]` and is used as-is under
/// fixed caps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
#[derive(Default)]
pub enum NormalizationMode {
    #[default]
    MinMax,
    FixedCap(FixedCaps),
}


#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightVector {
    pub lambda_text: f64,
    pub lambda_image: f64,
    pub lambda_task: f64,
}

impl WeightVector {
    pub const UNIFORM: WeightVector = WeightVector {
        lambda_text: 1.0 / 3.0,
        lambda_image: 1.0 / 3.0,
        lambda_task: 1.0 / 3.0,
    };

    pub fn new(lambda_text: f64, lambda_image: f64, lambda_task: f64) -> Result<Self> {
        let w = WeightVector {
            lambda_text,
            lambda_image,
            lambda_task,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.lambda_text, self.lambda_image, self.lambda_task];
        if parts.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidWeights(format!("weights must be finite and >= 0: {self:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidWeights(format!("weights sum to {sum}, not 1")));
        }
        Ok(())
    }
}

pub fn composite_score(s_text: f64, s_image: f64, s_task: f64, w: &WeightVector) -> Result<f64> {
    w.validate()?;
    ensure_unit("text score", s_text)?;
    ensure_unit("image score", s_image)?;
    ensure_unit("task score", s_task)?;
    Ok(weighted_sum(s_text, s_image, s_task, w))
}

fn weighted_sum(s_text: f64, s_image: f64, s_task: f64, w: &WeightVector) -> f64 {
    w.lambda_text * s_text + w.lambda_image * s_image + w.lambda_task * s_task
}

/// One row of the weights config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightEntry {
    pub lambda_text: f64,
    pub lambda_image: f64,
    pub lambda_task: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasible: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kendall_tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
}

impl WeightEntry {
    pub fn weights(&self) -> Result<WeightVector> {
        WeightVector::new(self.lambda_text, self.lambda_image, self.lambda_task)
    }

    pub fn from_calibration(result: &CalibrationResult) -> Self {
        WeightEntry {
            lambda_text: result.weights.lambda_text,
            lambda_image: result.weights.lambda_image,
            lambda_task: result.weights.lambda_task,
            feasible: Some(result.feasible),
            min_margin: Some(result.min_margin),
            kendall_tau: Some(result.kendall_tau),
            grid_step: Some(result.grid_step),
        }
    }
}

/// Per-category weights, stored as a TOML file with one table per category.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightsTable {
    pub entries: BTreeMap<TaskCategory, WeightEntry>,
}

impl WeightsTable {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, WeightEntry> =
            toml::from_str(text).map_err(|e| Error::Config(format!("weights file: {e}")))?;
        let mut entries = BTreeMap::new();
        for (key, entry) in raw {
            entry.weights()?;
            entries.insert(key.parse()?, entry);
        }
        Ok(WeightsTable { entries })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        let raw: BTreeMap<&str, &WeightEntry> = self.entries.iter().map(|(k, v)| (k.as_str(), v)).collect();
        toml::to_string(&raw).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    /// Weights for a category, falling back to uniform weights with a warning.
    pub fn weights_for(&self, category: Option<TaskCategory>) -> Result<(WeightVector, Option<String>)> {
        match category.and_then(|c| self.entries.get(&c)) {
            Some(entry) => Ok((entry.weights()?, None)),
            None => Ok((
                WeightVector::UNIFORM,
                Some(format!(
                    "no weights configured for category {}; using uniform weights",
                    category.map_or("<none>", |c| c.as_str())
                )),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerplexityFallback {
    /// Only annotated perplexities are used.
    #[default]
    None,
    /// Samples without an annotation use a unigram model fit on the dataset.
    Unigram,
}

/// Model-derived value providers used during scoring.
#[derive(Clone, Copy)]
pub struct Oracles<'a> {
    pub perplexity: Option<&'a dyn PerplexityOracle>,
    pub ocr: &'a dyn CountOracle,
    pub detector: &'a dyn CountOracle,
}

impl Default for Oracles<'_> {
    fn default() -> Self {
        Oracles {
            perplexity: None,
            ocr: &OcrAnnotations,
            detector: &ObjectAnnotations,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoringOptions {
    pub weights: WeightsTable,
    pub gap: GapConfig,
    pub normalization: NormalizationMode,
    pub perplexity_fallback: PerplexityFallback,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RawMetrics {
    pub token_length: Option<f64>,
    pub ttr: Option<f64>,
    pub perplexity: Option<f64>,
    pub entropy: Option<f64>,
    pub text_density: Option<f64>,
    pub object_density: Option<f64>,
    pub c_small_mid: Option<f64>,
    pub c_mid_large: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalizedMetrics {
    pub token_length: Option<f64>,
    pub ttr: Option<f64>,
    pub perplexity: Option<f64>,
    pub entropy: Option<f64>,
    pub text_density: Option<f64>,
    pub object_density: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AxisScores {
    pub text: Option<f64>,
    pub image: Option<f64>,
    pub task: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Omission {
    pub axis: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoringSnapshot {
    pub beta: f64,
    pub delta: f64,
    pub delta_on_raw_large_loss: bool,
    pub normalization: NormalizationMode,
    pub perplexity_fallback: PerplexityFallback,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub dataset: String,
    pub category: Option<TaskCategory>,
    pub n_samples: usize,
    pub raw: RawMetrics,
    pub normalized: NormalizedMetrics,
    pub axes: AxisScores,
    pub weights: WeightVector,
    pub score: f64,
    pub omissions: Vec<Omission>,
    pub warnings: Vec<String>,
    pub config: ScoringSnapshot,
}

struct RawAxes {
    raw: RawMetrics,
    text_err: Option<String>,
    image_err: Option<String>,
    task_err: Option<String>,
    warnings: Vec<String>,
}

fn first_err(slot: &mut Option<String>, err: Error) {
    if slot.is_none() {
        *slot = Some(err.to_string());
    }
}

fn raw_axes(dataset: &DatasetManifest, oracles: &Oracles<'_>, opts: &ScoringOptions) -> Result<RawAxes> {
    if dataset.is_empty() {
        return Err(Error::EmptyManifest(dataset.name.clone()));
    }
    let mut out = RawAxes {
        raw: RawMetrics::default(),
        text_err: None,
        image_err: None,
        task_err: None,
        warnings: Vec::new(),
    };

    out.raw.token_length = Some(textstats::avg_token_length(dataset)?);
    match textstats::avg_ttr(dataset) {
        Ok(ttr) => {
            for id in &ttr.skipped {
                out.warnings.push(format!("sample {id:?} has no tokens; skipped for TTR"));
            }
            out.raw.ttr = Some(ttr.value);
        }
        Err(e) => first_err(&mut out.text_err, e),
    }
    let fitted;
    let lm: Option<&dyn PerplexityOracle> = match (oracles.perplexity, opts.perplexity_fallback) {
        (Some(lm), _) => Some(lm),
        (None, PerplexityFallback::Unigram) => {
            fitted = UnigramPerplexity::fit(dataset);
            Some(&fitted)
        }
        (None, PerplexityFallback::None) => None,
    };
    match textstats::avg_perplexity(dataset, lm) {
        Ok(p) => out.raw.perplexity = Some(p),
        Err(e) => first_err(&mut out.text_err, e),
    }

    match imagestats::avg_entropy(dataset) {
        Ok(e) => out.raw.entropy = Some(e),
        Err(e) => first_err(&mut out.image_err, e),
    }
    match imagestats::text_density(dataset, oracles.ocr) {
        Ok(d) => out.raw.text_density = Some(d),
        Err(e) => first_err(&mut out.image_err, e),
    }
    match imagestats::object_density(dataset, oracles.detector) {
        Ok(d) => out.raw.object_density = Some(d),
        Err(e) => first_err(&mut out.image_err, e),
    }

    match taskgap::dataset_gap_complexities(dataset, &opts.gap) {
        Ok((lower, upper)) => {
            out.raw.c_small_mid = Some(lower);
            out.raw.c_mid_large = Some(upper);
        }
        Err(e) => first_err(&mut out.task_err, e),
    }
    Ok(out)
}

/// Normalizes one metric across the datasets where it is present.
fn normalize_column(values: &[Option<f64>], mode: BatchNorm) -> Result<Vec<Option<f64>>> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return Ok(vec![None; values.len()]);
    }
    let mut normalized = normalize_batch(&present, mode)?.into_iter();
    Ok(values.iter().map(|v| v.and_then(|_| normalized.next())).collect())
}

fn mean3(a: Option<f64>, b: Option<f64>, c: Option<f64>) -> Option<f64> {
    Some((a? + b? + c?) / 3.0)
}

/// Scores every dataset in one normalization batch.
///
/// An axis that cannot be computed for a dataset is recorded as an omission
/// when that dataset's weight for the axis is zero and is an error otherwise.
pub fn score_batch(
    datasets: &[DatasetManifest],
    oracles: &Oracles<'_>,
    opts: &ScoringOptions,
) -> Result<Vec<ComplexityReport>> {
    if datasets.is_empty() {
        return Err(Error::InvalidInput("no datasets to score".into()));
    }
    opts.gap.validate()?;
    let raws = datasets
        .iter()
        .map(|d| raw_axes(d, oracles, opts))
        .collect::<Result<Vec<_>>>()?;

    let column = |f: fn(&RawMetrics) -> Option<f64>| raws.iter().map(|r| f(&r.raw)).collect::<Vec<_>>();
    let (len_mode, ttr_mode, ppl_mode, td_mode, od_mode) = match opts.normalization {
        NormalizationMode::MinMax => (
            BatchNorm::MinMax,
            BatchNorm::MinMax,
            BatchNorm::MinMax,
            BatchNorm::MinMax,
            BatchNorm::MinMax,
        ),
        NormalizationMode::FixedCap(caps) => (
            BatchNorm::FixedCap(caps.token_length),
            BatchNorm::FixedCap(1.0),
            BatchNorm::FixedCap(caps.perplexity),
            BatchNorm::FixedCap(caps.text_density),
            BatchNorm::FixedCap(caps.object_density),
        ),
    };
    let n_len = normalize_column(&column(|r| r.token_length), len_mode)?;
    let n_ttr = normalize_column(&column(|r| r.ttr), ttr_mode)?;
    let n_ppl = normalize_column(&column(|r| r.perplexity), ppl_mode)?;
    let n_ent = normalize_column(&column(|r| r.entropy), BatchNorm::FixedCap(ENTROPY_NORMALIZER))?;
    let n_td = normalize_column(&column(|r| r.text_density), td_mode)?;
    let n_od = normalize_column(&column(|r| r.object_density), od_mode)?;

    let snapshot = ScoringSnapshot {
        beta: opts.gap.beta,
        delta: opts.gap.delta,
        delta_on_raw_large_loss: opts.gap.delta_on_raw_large_loss,
        normalization: opts.normalization,
        perplexity_fallback: opts.perplexity_fallback,
        batch_size: datasets.len(),
    };

    let mut reports = Vec::with_capacity(datasets.len());
    for (i, (dataset, raw)) in datasets.iter().zip(raws).enumerate() {
        let normalized = NormalizedMetrics {
            token_length: n_len[i],
            ttr: n_ttr[i],
            perplexity: n_ppl[i],
            entropy: n_ent[i],
            text_density: n_td[i],
            object_density: n_od[i],
        };
        let axes = AxisScores {
            text: mean3(normalized.token_length, normalized.ttr, normalized.perplexity),
            image: mean3(normalized.entropy, normalized.text_density, normalized.object_density),
            task: match (raw.raw.c_small_mid, raw.raw.c_mid_large) {
                (Some(a), Some(b)) => Some(taskgap::task_score(a, b)?),
                _ => None,
            },
        };
        let (weights, fallback) = opts.weights.weights_for(dataset.category)?;
        let mut warnings = raw.warnings;
        warnings.extend(fallback);

        let mut omissions = Vec::new();
        for (axis, score, weight, err) in [
            ("text", axes.text, weights.lambda_text, &raw.text_err),
            ("image", axes.image, weights.lambda_image, &raw.image_err),
            ("task", axes.task, weights.lambda_task, &raw.task_err),
        ] {
            if score.is_none() {
                let cause = err.clone().unwrap_or_else(|| "metric unavailable".into());
                if weight > 0.0 {
                    return Err(Error::MissingAxis {
                        dataset: dataset.name.clone(),
                        axis,
                        cause,
                    });
                }
                omissions.push(Omission {
                    axis: axis.to_string(),
                    reason: cause,
                });
            }
        }
        let score = weighted_sum(
            axes.text.unwrap_or(0.0),
            axes.image.unwrap_or(0.0),
            axes.task.unwrap_or(0.0),
            &weights,
        );
        reports.push(ComplexityReport {
            dataset: dataset.name.clone(),
            category: dataset.category,
            n_samples: dataset.len(),
            raw: raw.raw,
            normalized,
            axes,
            weights,
            score,
            omissions,
            warnings,
            config: snapshot.clone(),
        });
    }
    Ok(reports)
}

/// Scores a single dataset as a batch of one.
pub fn score_dataset(
    dataset: &DatasetManifest,
    oracles: &Oracles<'_>,
    opts: &ScoringOptions,
) -> Result<ComplexityReport> {
    Ok(score_batch(std::slice::from_ref(dataset), oracles, opts)?.remove(0))
}

/// Reports ordered by descending composite score, ties by dataset name.
pub fn rank_reports(reports: &[ComplexityReport]) -> Vec<&ComplexityReport> {
    let mut ranked: Vec<_> = reports.iter().collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.dataset.cmp(&b.dataset)));
    ranked
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

/// Markdown table of reports ranked by composite score.
pub fn render_markdown(reports: &[ComplexityReport]) -> String {
    let mut out = String::from("| rank | dataset | category | n | S_text | S_image | S_task | weights | S |\n");
    out.push_str("|---:|---|---|---:|---:|---:|---:|---|---:|\n");
    for (i, r) in rank_reports(reports).into_iter().enumerate() {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | ({:.3}, {:.3}, {:.3}) | {:.4} |",
            i + 1,
            r.dataset,
            r.category.map_or("-", |c| c.as_str()),
            r.n_samples,
            fmt_opt(r.axes.text),
            fmt_opt(r.axes.image),
            fmt_opt(r.axes.task),
            r.weights.lambda_text,
            r.weights.lambda_image,
            r.weights.lambda_task,
            r.score
        );
    }
    out
}

/// Axis scores of one subset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisTriple {
    pub text: f64,
    pub image: f64,
    pub task: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub name: String,
    /// Human difficulty rank, 1 = easiest.
    pub rank: u8,
    pub axes: AxisTriple,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedSubsets {
    pub category: TaskCategory,
    pub entries: Vec<RankedEntry>,
}

impl RankedSubsets {
    pub const SIZE: usize = 5;

    pub fn validate(&self) -> Result<()> {
        if self.entries.len() != Self::SIZE {
            return Err(Error::MalformedRanking(format!(
                "expected {} subsets, got {}",
                Self::SIZE,
                self.entries.len()
            )));
        }
        let mut ranks: Vec<u8> = self.entries.iter().map(|e| e.rank).collect();
        ranks.sort_unstable();
        if ranks != [1, 2, 3, 4, 5] {
            return Err(Error::MalformedRanking(format!("ranks {ranks:?} are not a permutation of 1..5")));
        }
        for e in &self.entries {
            for v in [e.axes.text, e.axes.image, e.axes.task] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::MalformedRanking(format!("axis score {v} of {:?} outside [0, 1]", e.name)));
                }
            }
        }
        Ok(())
    }

    /// Axis scores ordered from rank 1 to rank 5.
    fn by_rank(&self) -> Vec<AxisTriple> {
        let mut entries: Vec<&RankedEntry> = self.entries.iter().collect();
        entries.sort_by_key(|e| e.rank);
        entries.into_iter().map(|e| e.axes).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub weights: WeightVector,
    /// Smallest `S(rank k+1) - S(rank k)`; positive when feasible.
    pub min_margin: f64,
    pub feasible: bool,
    pub kendall_tau: f64,
    pub grid_step: f64,
    pub candidates: usize,
}

/// Margins below this count as zero so rounding noise cannot manufacture
/// strict monotonicity, and margins closer than this count as tied.
const MARGIN_EPS: f64 = 1e-12;

/// Simplex grid points `(i, j, k - i - j) / k` for a step of `1 / k`.
pub fn simplex_grid(step: f64) -> Result<Vec<(usize, usize, usize)>> {
    if !(step.is_finite() && step > 0.0 && step <= 1.0) {
        return Err(Error::Config(format!("grid step must be in (0, 1], got {step}")));
    }
    let k = (1.0 / step).round() as usize;
    if (k as f64 * step - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("grid step {step} does not divide 1 evenly")));
    }
    let mut points = Vec::with_capacity((k + 1) * (k + 2) / 2);
    for i in 0..=k {
        for j in 0..=k - i {
            points.push((i, j, k - i - j));
        }
    }
    Ok(points)
}

/// Kendall's tau-b between scores and ranks 1..n (ranks have no ties).
/// Zero when every score is tied.
pub fn kendall_tau(scores: &[f64]) -> f64 {
    let n = scores.len();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    let mut score_ties = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let d = scores[j] - scores[i];
            if d.abs() <= MARGIN_EPS {
                score_ties += 1;
            } else if d > 0.0 {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let pairs = (n * n.saturating_sub(1) / 2) as i64;
    let untied = pairs - score_ties;
    if untied == 0 {
        return 0.0;
    }
    (concordant - discordant) as f64 / ((untied as f64) * (pairs as f64)).sqrt()
}

struct Candidate {
    point: (usize, usize, usize),
    weights: WeightVector,
    margin: f64,
    feasible: bool,
    tau: f64,
}

fn tie_break(a: &Candidate, b: &Candidate) -> bool {
    // larger lambda_task, then larger lambda_image
    (a.point.2, a.point.1) > (b.point.2, b.point.1)
}

fn better(c: &Candidate, best: &Candidate) -> bool {
    if c.feasible != best.feasible {
        return c.feasible;
    }
    if !c.feasible {
        if c.tau > best.tau + MARGIN_EPS {
            return true;
        }
        if c.tau < best.tau - MARGIN_EPS {
            return false;
        }
    }
    if c.margin > best.margin + MARGIN_EPS {
        return true;
    }
    if c.margin < best.margin - MARGIN_EPS {
        return false;
    }
    tie_break(c, best)
}

/// Exhaustive simplex grid search for weights that order the five subsets
/// strictly by human rank with the largest minimum consecutive margin.
///
/// When no grid point is strictly monotone the point with the highest
/// Kendall tau is returned with `feasible = false` (margin breaks ties).
/// Remaining ties prefer larger `lambda_task`, then larger `lambda_image`.
pub fn calibrate_weights(ranked: &RankedSubsets, grid_step: f64) -> Result<CalibrationResult> {
    ranked.validate()?;
    let ordered = ranked.by_rank();
    let points = simplex_grid(grid_step)?;
    let k = points[0].2 as f64;
    let mut best: Option<Candidate> = None;
    for &point in &points {
        let weights = WeightVector {
            lambda_text: point.0 as f64 / k,
            lambda_image: point.1 as f64 / k,
            lambda_task: point.2 as f64 / k,
        };
        let scores: Vec<f64> = ordered
            .iter()
            .map(|a| weighted_sum(a.text, a.image, a.task, &weights))
            .collect();
        let margin = scores
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        let candidate = Candidate {
            point,
            weights,
            margin,
            feasible: margin > MARGIN_EPS,
            tau: kendall_tau(&scores),
        };
        if best.as_ref().is_none_or(|b| better(&candidate, b)) {
            best = Some(candidate);
        }
    }
    let best = best.expect("simplex grid is never empty");
    Ok(CalibrationResult {
        weights: best.weights,
        min_margin: best.margin,
        feasible: best.feasible,
        kendall_tau: best.tau,
        grid_step,
        candidates: points.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{ImageRef, ModelTier, Sample};
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_batch(&[1.0, 3.0, 5.0], BatchNorm::MinMax).unwrap(), [0.0, 0.5, 1.0]);
        assert_eq!(normalize_batch(&[4.0, 4.0], BatchNorm::MinMax).unwrap(), [0.5, 0.5]);
        assert_eq!(normalize_batch(&[5.0, 20.0], BatchNorm::FixedCap(10.0)).unwrap(), [0.5, 1.0]);
        assert!(normalize_batch(&[], BatchNorm::MinMax).is_err());
        assert!(normalize_batch(&[f64::NAN], BatchNorm::MinMax).is_err());
        assert!(normalize_batch(&[1.0], BatchNorm::FixedCap(0.0)).is_err());
    }

    #[test]
    fn composite_examples() {
        let third = WeightVector::UNIFORM;
        assert!((composite_score(0.3, 0.6, 0.9, &third).unwrap() - 0.6).abs() < 1e-12);
        let text_only = WeightVector::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(composite_score(0.7, 0.1, 0.9, &text_only).unwrap(), 0.7);
        let w = WeightVector::new(0.2, 0.3, 0.5).unwrap();
        assert!((composite_score(1.0, 1.0, 1.0, &w).unwrap() - 1.0).abs() < 1e-12);
        assert!(WeightVector::new(0.5, 0.6, 0.0).is_err());
        assert!(WeightVector::new(-0.1, 0.6, 0.5).is_err());
        let bad = WeightVector {
            lambda_text: 0.9,
            lambda_image: 0.9,
            lambda_task: 0.0,
        };
        assert!(composite_score(0.1, 0.1, 0.1, &bad).is_err());
    }

    fn subsets(axes: [(f64, f64, f64); 5]) -> RankedSubsets {
        RankedSubsets {
            category: TaskCategory::Caption,
            entries: axes
                .iter()
                .enumerate()
                .map(|(i, &(text, image, task))| RankedEntry {
                    name: format!("level{}", i + 1),
                    rank: i as u8 + 1,
                    axes: AxisTriple { text, image, task },
                })
                .collect(),
        }
    }

    #[test]
    fn grid_has_231_points_at_default_step() {
        assert_eq!(simplex_grid(0.05).unwrap().len(), 231);
        assert_eq!(simplex_grid(1.0).unwrap().len(), 3);
        assert!(simplex_grid(0.3).is_err());
        assert!(simplex_grid(0.0).is_err());
    }

    /// Independent oracle: enumerate the grid by brute force and collect the
    /// feasible points with their margins.
    fn brute_force(axes: &[(f64, f64, f64); 5], k: usize) -> Vec<((usize, usize, usize), f64)> {
        let mut out = Vec::new();
        for a in 0..=k {
            for b in 0..=k {
                if a + b > k {
                    continue;
                }
                let c = k - a - b;
                let s: Vec<f64> = axes
                    .iter()
                    .map(|t| (a as f64 * t.0 + b as f64 * t.1 + c as f64 * t.2) / k as f64)
                    .collect();
                let m = (0..4).map(|i| s[i + 1] - s[i]).fold(f64::MAX, f64::min);
                if m > 1e-12 {
                    out.push(((a, b, c), m));
                }
            }
        }
        out
    }

    #[test]
    fn monotone_in_task_selects_pure_task_weight() {
        let axes = [(0.5, 0.5, 0.1), (0.5, 0.5, 0.3), (0.5, 0.5, 0.5), (0.5, 0.5, 0.7), (0.5, 0.5, 0.9)];
        let oracle = brute_force(&axes, 20);
        assert!(oracle.iter().all(|(p, _)| p.2 > 0));
        assert_eq!(oracle.len(), 231 - 21);
        let r = calibrate_weights(&subsets(axes), 0.05).unwrap();
        assert!(r.feasible);
        assert_eq!((r.weights.lambda_text, r.weights.lambda_image, r.weights.lambda_task), (0.0, 0.0, 1.0));
        assert!((r.min_margin - 0.2).abs() < 1e-12);
        assert_eq!(r.kendall_tau, 1.0);
        assert_eq!(r.candidates, 231);
    }

    #[test]
    fn constant_axes_are_infeasible() {
        let r = calibrate_weights(&subsets([(0.4, 0.6, 0.2); 5]), 0.05).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.kendall_tau, 0.0);
    }

    #[test]
    fn rank_proportional_axes_tie_everywhere() {
        let axes: [(f64, f64, f64); 5] = std::array::from_fn(|i| {
            let v = (i + 1) as f64 / 5.0;
            (v, v, v)
        });
        let oracle = brute_force(&axes, 20);
        assert_eq!(oracle.len(), 231);
        assert!(oracle.iter().all(|(_, m)| (m - 0.2).abs() < 1e-12));
        let r = calibrate_weights(&subsets(axes), 0.05).unwrap();
        assert!(r.feasible);
        assert_eq!(r.weights, WeightVector::new(0.0, 0.0, 1.0).unwrap());
    }

    #[test]
    fn calibration_matches_brute_force_optimum() {
        let axes = [(0.1, 0.9, 0.3), (0.2, 0.7, 0.35), (0.35, 0.6, 0.3), (0.5, 0.4, 0.45), (0.6, 0.5, 0.5)];
        let oracle = brute_force(&axes, 20);
        let best = oracle.iter().map(|(_, m)| *m).fold(f64::MIN, f64::max);
        let r = calibrate_weights(&subsets(axes), 0.05).unwrap();
        assert!(r.feasible);
        assert!((r.min_margin - best).abs() < 1e-9);
    }

    #[test]
    fn infeasible_prefers_higher_tau() {
        // rank 3 and 4 swapped on every axis: tau < 1 everywhere, best is 0.8
        let axes = [(0.1, 0.1, 0.1), (0.2, 0.2, 0.2), (0.4, 0.4, 0.4), (0.3, 0.3, 0.3), (0.5, 0.5, 0.5)];
        let r = calibrate_weights(&subsets(axes), 0.05).unwrap();
        assert!(!r.feasible);
        assert!((r.kendall_tau - 0.8).abs() < 1e-12);
        assert!(r.min_margin < 0.0);
    }

    #[test]
    fn malformed_rankings() {
        let mut s = subsets([(0.1, 0.1, 0.1); 5]);
        s.entries.pop();
        assert!(matches!(calibrate_weights(&s, 0.05), Err(Error::MalformedRanking(_))));
        let mut s = subsets([(0.1, 0.1, 0.1); 5]);
        s.entries[0].rank = 2;
        assert!(matches!(calibrate_weights(&s, 0.05), Err(Error::MalformedRanking(_))));
        let mut s = subsets([(0.1, 0.1, 0.1); 5]);
        s.entries[3].axes.task = 1.5;
        assert!(calibrate_weights(&s, 0.05).is_err());
    }

    #[test]
    fn kendall_tau_values() {
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0, 4.0, 5.0]), 1.0);
        assert_eq!(kendall_tau(&[5.0, 4.0, 3.0, 2.0, 1.0]), -1.0);
        assert_eq!(kendall_tau(&[1.0; 5]), 0.0);
    }

    #[test]
    fn weights_table_roundtrip_and_fallback() {
        let mut table = WeightsTable::default();
        table.entries.insert(
            TaskCategory::Ocr,
            WeightEntry {
                lambda_text: 0.25,
                lambda_image: 0.5,
                lambda_task: 0.25,
                feasible: Some(true),
                min_margin: Some(0.01),
                kendall_tau: Some(1.0),
                grid_step: Some(0.05),
            },
        );
        let text = table.to_toml_string().unwrap();
        assert!(text.contains("[ocr]"), "{text}");
        assert_eq!(WeightsTable::from_toml_str(&text).unwrap(), table);
        let (w, warn) = table.weights_for(Some(TaskCategory::Ocr)).unwrap();
        assert_eq!(w.lambda_image, 0.5);
        assert!(warn.is_none());
        let (w, warn) = table.weights_for(Some(TaskCategory::Chart)).unwrap();
        assert_eq!(w, WeightVector::UNIFORM);
        assert!(warn.is_some());
        assert!(WeightsTable::from_toml_str("[diagram]\nlambda_text=1\nlambda_image=0\nlambda_task=0\n").is_err());
        assert!(WeightsTable::from_toml_str("[ocr]\nlambda_text=1\nlambda_image=1\nlambda_task=0\n").is_err());
    }

    fn full_sample(id: &str, response: &str, ppl: f64, fill: u8, losses: [f64; 3]) -> Sample {
        let mut s = Sample::text(id, "describe", response).with_image(ImageRef::Inline {
            width: 10,
            height: 10,
            pixels: (0..100).map(|i| if i % 2 == 0 { fill } else { 0 }).collect(),
        });
        s.annotations.perplexity = Some(ppl);
        s.annotations.ocr_token_count = Some(3);
        s.annotations.object_count = Some(1);
        s.annotations.model_losses = BTreeMap::from([
            (ModelTier::Small, losses[0]),
            (ModelTier::Mid, losses[1]),
            (ModelTier::Large, losses[2]),
        ]);
        s
    }

    fn text_only_weights() -> WeightsTable {
        let mut weights = WeightsTable::default();
        weights.entries.insert(
            TaskCategory::TextOnly,
            WeightEntry {
                lambda_text: 1.0,
                lambda_image: 0.0,
                lambda_task: 0.0,
                feasible: None,
                min_margin: None,
                kendall_tau: None,
                grid_step: None,
            },
        );
        weights
    }

    #[test]
    fn zero_weight_axes_are_omitted() {
        let mut s = Sample::text("a", "q", "plain answer");
        s.annotations.perplexity = Some(3.0);
        let d = DatasetManifest::new("txt", vec![s]).with_category(TaskCategory::TextOnly);
        let opts = ScoringOptions {
            weights: text_only_weights(),
            ..Default::default()
        };
        let r = score_dataset(&d, &Oracles::default(), &opts).unwrap();
        assert_eq!(r.score, r.axes.text.unwrap());
        let omitted: Vec<_> = r.omissions.iter().map(|o| o.axis.as_str()).collect();
        assert_eq!(omitted, ["image", "task"]);
    }

    #[test]
    fn missing_axis_with_weight_is_error() {
        let mut s = Sample::text("a", "q", "plain answer");
        s.annotations.perplexity = Some(3.0);
        let d = DatasetManifest::new("txt", vec![s]);
        match score_dataset(&d, &Oracles::default(), &ScoringOptions::default()) {
            Err(Error::MissingAxis { axis, dataset, .. }) => {
                assert_eq!(axis, "image");
                assert_eq!(dataset, "txt");
            }
            other => panic!("expected missing axis, got {other:?}"),
        }
    }

    #[test]
    fn full_batch_matches_hand_arithmetic() {
        let a = DatasetManifest::new(
            "a",
            vec![full_sample("a1", "one two", 2.0, 255, [2.0, 1.0, 0.5])],
        );
        let b = DatasetManifest::new(
            "b",
            vec![full_sample("b1", "one two three four", 6.0, 255, [1.0, 1.0, 1.0])],
        );
        let opts = ScoringOptions::default();
        let reports = score_batch(&[a, b], &Oracles::default(), &opts).unwrap();
        // text: L 2 vs 4 -> 0, 1; TTR (describe one two) 1.0 both -> 0.5; PPL 2 vs 6 -> 0, 1
        assert_eq!(reports[0].axes.text, Some((0.0 + 0.5 + 0.0) / 3.0));
        assert_eq!(reports[1].axes.text, Some((1.0 + 0.5 + 1.0) / 3.0));
        // image: entropy 1 bit -> 1/8; densities identical -> 0.5
        assert_eq!(reports[0].axes.image, Some((0.125 + 0.5 + 0.5) / 3.0));
        // task (a): 2 > 1.2 > 0.5 yes; 1 > 0.6 > 0.5 yes -> 1; (b): 1 > 1.2 no -> 0
        assert_eq!(reports[0].axes.task, Some(1.0));
        assert_eq!(reports[1].axes.task, Some(0.0));
        for r in &reports {
            let expect = (r.axes.text.unwrap() + r.axes.image.unwrap() + r.axes.task.unwrap()) / 3.0;
            assert!((r.score - expect).abs() < 1e-12);
            assert_eq!(r.warnings.len(), 1, "uniform fallback warning");
        }
    }

    #[test]
    fn unigram_fallback_fills_missing_perplexity() {
        let s = Sample::text("a", "q", "a a a");
        let d = DatasetManifest::new("txt", vec![s]).with_category(TaskCategory::TextOnly);
        let opts = ScoringOptions {
            weights: text_only_weights(),
            perplexity_fallback: PerplexityFallback::Unigram,
            ..Default::default()
        };
        let r = score_dataset(&d, &Oracles::default(), &opts).unwrap();
        assert_eq!(r.raw.perplexity, Some(1.0));
    }

    #[test]
    fn fixed_caps_mode() {
        let a = DatasetManifest::new("a", vec![full_sample("a1", "one two", 50.0, 255, [1.0, 1.0, 1.0])]);
        let opts = ScoringOptions {
            normalization: NormalizationMode::FixedCap(FixedCaps::default()),
            ..Default::default()
        };
        let r = score_dataset(&a, &Oracles::default(), &opts).unwrap();
        assert_eq!(r.normalized.token_length, Some(2.0 / 1024.0));
        assert_eq!(r.normalized.perplexity, Some(0.5));
        assert_eq!(r.normalized.ttr, Some(1.0));
        assert_eq!(r.normalized.text_density, Some(1.0)); // 0.03 capped
        assert_eq!(r.normalized.object_density, Some(1.0)); // 0.01 capped
    }

    proptest! {
        #[test]
        fn minmax_affine_invariant(values in prop::collection::vec(-100.0f64..100.0, 1..20), a in 0.01f64..50.0, b in -100.0f64..100.0) {
            let base = normalize_batch(&values, BatchNorm::MinMax).unwrap();
            let moved: Vec<f64> = values.iter().map(|v| a * v + b).collect();
            let out = normalize_batch(&moved, BatchNorm::MinMax).unwrap();
            for (x, y) in base.iter().zip(&out) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn composite_monotone(t in 0.0f64..1.0, i in 0.0f64..1.0, k in 0.0f64..1.0, bump in 0.0f64..1.0, a in 0usize..=20, b in 0usize..=20) {
            prop_assume!(a + b <= 20);
            let w = WeightVector::new(a as f64 / 20.0, b as f64 / 20.0, (20 - a - b) as f64 / 20.0).unwrap();
            let base = composite_score(t, i, k, &w).unwrap();
            let up = |x: f64| (x + bump).min(1.0);
            prop_assert!(composite_score(up(t), i, k, &w).unwrap() >= base - 1e-15);
            prop_assert!(composite_score(t, up(i), k, &w).unwrap() >= base - 1e-15);
            prop_assert!(composite_score(t, i, up(k), &w).unwrap() >= base - 1e-15);
        }

        #[test]
        fn feasible_calibration_has_reported_margin(raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 5)) {
            let axes: [(f64, f64, f64); 5] = std::array::from_fn(|i| raw[i]);
            let s = subsets(axes);
            let r = calibrate_weights(&s, 0.05).unwrap();
            let again = calibrate_weights(&s, 0.05).unwrap();
            prop_assert_eq!(&r, &again);
            if r.feasible {
                let scores: Vec<f64> = axes.iter().map(|a| composite_score(a.0, a.1, a.2, &r.weights).unwrap()).collect();
                for w in scores.windows(2) {
                    prop_assert!(w[1] - w[0] >= r.min_margin - 1e-12);
                    prop_assert!(w[1] > w[0]);
                }
            }
        }
    }
}
