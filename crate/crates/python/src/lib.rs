use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use vlcurate::curriculum::{self, PackItem, PackLimits, PlanOptions, SplitPolicy};
use vlcurate::filterbank::{self, FilterConfig};
use vlcurate::imagestats::{self, LumaGrid};
use vlcurate::manifest::{self, DatasetManifest, TaskCategory};
use vlcurate::scoring::{
    self, AxisTriple, BatchNorm, ComplexityReport, FixedCaps, NormalizationMode, Oracles, RankedEntry, RankedSubsets,
    ScoringOptions, WeightVector, WeightsTable,
};
use vlcurate::taskgap::{self, GapConfig, LossPair};
use vlcurate::textstats;
use vlcurate::tileplan::{self, ResolutionConfig, Scheme};

fn err(e: vlcurate::Error) -> PyErr {
    match e {
        vlcurate::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn resolution(config: Option<&Bound<'_, PyAny>>) -> PyResult<ResolutionConfig> {
    config.map(from_py).transpose().map(Option::unwrap_or_default)
}

fn category(name: &str) -> PyResult<TaskCategory> {
    name.parse().map_err(err)
}

/// A dataset manifest: named samples with optional category and annotations.
#[pyclass(name = "Manifest", module = "vlcurate", skip_from_py_object)]
#[derive(Clone)]
struct PyManifest {
    inner: DatasetManifest,
}

#[pymethods]
impl PyManifest {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        manifest::load_manifest(path).map(|inner| Self { inner }).map_err(err)
    }

    /// Parses JSONL text; relative image paths resolve against `base_dir`.
    #[staticmethod]
    #[pyo3(signature = (text, name, base_dir = None))]
    fn from_jsonl(text: &str, name: &str, base_dir: Option<PathBuf>) -> PyResult<Self> {
        let base = base_dir.unwrap_or_else(|| PathBuf::from("."));
        manifest::parse_manifest(text, name, Path::new("<memory>"), &base)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    fn to_jsonl(&self) -> PyResult<String> {
        self.inner.to_jsonl().map_err(err)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn category(&self) -> Option<&'static str> {
        self.inner.category.map(TaskCategory::as_str)
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.samples.iter().map(|s| s.id.clone()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Merges sidecar annotations; returns the warnings for unmatched ids.
    fn attach_sidecar(&mut self, path: PathBuf) -> PyResult<Vec<String>> {
        let outcome = manifest::attach_annotations(&self.inner, path).map_err(err)?;
        let warnings = outcome.warnings();
        self.inner = outcome.manifest;
        Ok(warnings)
    }

    /// Runs the filter pipeline; returns the kept manifest and the report.
    #[pyo3(signature = (config = None))]
    fn filter(&self, py: Python<'_>, config: Option<&Bound<'_, PyAny>>) -> PyResult<(Self, Py<PyAny>)> {
        let cfg: FilterConfig = config.map(from_py).transpose()?.unwrap_or_default();
        let (kept, report) = filterbank::run_pipeline(&self.inner, &cfg).map_err(err)?;
        Ok((Self { inner: kept }, to_py(py, &report)?))
    }

    fn __repr__(&self) -> String {
        format!("Manifest(name={:?}, samples={})", self.inner.name, self.inner.len())
    }
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    textstats::tokenize(text).into_iter().map(String::from).collect()
}

#[pyfunction]
fn type_token_ratio(text: &str) -> Option<f64> {
    textstats::type_token_ratio(&textstats::tokenize(text))
}

#[pyfunction]
fn luma(r: u8, g: u8, b: u8) -> u8 {
    imagestats::luma(r, g, b)
}

/// Shannon entropy in bits of a row-major luma buffer.
#[pyfunction]
#[pyo3(signature = (width, height, pixels, levels = 256))]
fn image_entropy(width: u32, height: u32, pixels: Vec<u8>, levels: usize) -> PyResult<f64> {
    let grid = LumaGrid::new(width, height, pixels).map_err(err)?;
    imagestats::image_entropy(&grid, levels).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (width, height, config = None))]
fn snap_dims(width: u32, height: u32, config: Option<&Bound<'_, PyAny>>) -> PyResult<(u32, u32)> {
    tileplan::snap_dims(width, height, &resolution(config)?).map_err(err)
}

/// Tile plan as a dict; `attention_mask` adds the row-major boolean mask.
#[pyfunction]
#[pyo3(signature = (width, height, config = None, attention_mask = false))]
fn plan_tiles(
    py: Python<'_>,
    width: u32,
    height: u32,
    config: Option<&Bound<'_, PyAny>>,
    attention_mask: bool,
) -> PyResult<Py<PyAny>> {
    let plan = tileplan::plan(width, height, &resolution(config)?).map_err(err)?;
    let obj = to_py(py, &plan)?;
    if attention_mask {
        obj.bind(py).set_item("attention_mask", plan.attention_mask())?;
    }
    Ok(obj)
}

#[pyfunction]
#[pyo3(signature = (width, height, scheme = "magicvl", config = None))]
fn compare_schemes(
    py: Python<'_>,
    width: u32,
    height: u32,
    scheme: &str,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<Py<PyAny>> {
    let scheme: Scheme = scheme.parse().map_err(err)?;
    let budget = tileplan::compare_schemes(width, height, &resolution(config)?, scheme).map_err(err)?;
    to_py(py, &budget)
}

#[pyfunction]
fn aspect_distortion(original: (u32, u32), resized: (u32, u32)) -> f64 {
    tileplan::aspect_distortion(original, resized)
}

#[pyfunction]
#[pyo3(signature = (small, large, beta = 1.2, delta = 0.5))]
fn gap_indicator(small: f64, large: f64, beta: f64, delta: f64) -> PyResult<bool> {
    let cfg = GapConfig::new(beta, delta).map_err(err)?;
    Ok(taskgap::gap_indicator(LossPair::new(small, large), &cfg))
}

/// Fraction of `(small, large)` loss pairs showing a capability gap.
#[pyfunction]
#[pyo3(signature = (pairs, beta = 1.2, delta = 0.5))]
fn pair_complexity(pairs: Vec<(f64, f64)>, beta: f64, delta: f64) -> PyResult<f64> {
    let cfg = GapConfig::new(beta, delta).map_err(err)?;
    let pairs: Vec<LossPair> = pairs.into_iter().map(|(s, l)| LossPair::new(s, l)).collect();
    taskgap::pair_complexity(&pairs, &cfg).map_err(err)
}

#[pyfunction]
fn task_score(c_small_mid: f64, c_mid_large: f64) -> PyResult<f64> {
    taskgap::task_score(c_small_mid, c_mid_large).map_err(err)
}

/// Min-max normalization, or `min(v / cap, 1)` when `cap` is given.
#[pyfunction]
#[pyo3(signature = (values, cap = None))]
fn normalize_batch(values: Vec<f64>, cap: Option<f64>) -> PyResult<Vec<f64>> {
    let mode = cap.map_or(BatchNorm::MinMax, BatchNorm::FixedCap);
    scoring::normalize_batch(&values, mode).map_err(err)
}

#[pyfunction]
fn composite_score(s_text: f64, s_image: f64, s_task: f64, weights: (f64, f64, f64)) -> PyResult<f64> {
    let w = WeightVector::new(weights.0, weights.1, weights.2).map_err(err)?;
    scoring::composite_score(s_text, s_image, s_task, &w).map_err(err)
}

/// Grid search for weights that order five subsets; `axes[i]` belongs to rank `i + 1`.
#[pyfunction]
#[pyo3(signature = (category, axes, grid_step = 0.05))]
fn calibrate_weights(py: Python<'_>, category: &str, axes: Vec<(f64, f64, f64)>, grid_step: f64) -> PyResult<Py<PyAny>> {
    let ranked = RankedSubsets {
        category: self::category(category)?,
        entries: axes
            .into_iter()
            .enumerate()
            .map(|(i, (text, image, task))| RankedEntry {
                name: format!("rank{}", i + 1),
                rank: i as u8 + 1,
                axes: AxisTriple { text, image, task },
            })
            .collect(),
    };
    let result = scoring::calibrate_weights(&ranked, grid_step).map_err(err)?;
    to_py(py, &result)
}

/// Scores manifests as one normalization batch; returns one report dict each.
#[pyfunction]
#[pyo3(signature = (manifests, weights = None, beta = 1.2, delta = 0.5, fixed_caps = false))]
fn score_batch(
    py: Python<'_>,
    manifests: Vec<PyRef<'_, PyManifest>>,
    weights: Option<&str>,
    beta: f64,
    delta: f64,
    fixed_caps: bool,
) -> PyResult<Py<PyAny>> {
    let datasets: Vec<DatasetManifest> = manifests.iter().map(|m| m.inner.clone()).collect();
    let opts = ScoringOptions {
        weights: weights.map(WeightsTable::from_toml_str).transpose().map_err(err)?.unwrap_or_default(),
        gap: GapConfig::new(beta, delta).map_err(err)?,
        normalization: if fixed_caps { NormalizationMode::FixedCap(FixedCaps::default()) } else { NormalizationMode::MinMax },
        ..Default::default()
    };
    let reports = scoring::score_batch(&datasets, &Oracles::default(), &opts).map_err(err)?;
    to_py(py, &reports)
}

#[pyfunction]
fn find_repeated_segment(text: &str, min_len: usize, min_count: usize) -> Option<(String, usize)> {
    filterbank::find_repeated_segment(text, min_len, min_count)
}

/// First-fit-decreasing packing of `(id, text_tokens, [image_tokens...])` items.
#[pyfunction]
#[pyo3(signature = (items, max_tokens = 16384, max_images = 48))]
fn pack_batches(py: Python<'_>, items: Vec<(String, u64, Vec<u64>)>, max_tokens: u64, max_images: u32) -> PyResult<Py<PyAny>> {
    let items: Vec<PackItem> = items
        .into_iter()
        .map(|(id, text_tokens, image_tokens)| PackItem { id, text_tokens, image_tokens })
        .collect();
    let packs = curriculum::pack_batches(&items, PackLimits { max_tokens, max_images }).map_err(err)?;
    to_py(py, &packs)
}

/// Four-stage plan from caption-only and all-task score reports.
#[pyfunction]
#[pyo3(signature = (caption_reports, all_reports, scale = 1.0, seed = 0, threshold = None))]
fn build_plan(
    py: Python<'_>,
    caption_reports: &Bound<'_, PyAny>,
    all_reports: &Bound<'_, PyAny>,
    scale: f64,
    seed: u64,
    threshold: Option<f64>,
) -> PyResult<Py<PyAny>> {
    let caption: Vec<ComplexityReport> = from_py(caption_reports)?;
    let all: Vec<ComplexityReport> = from_py(all_reports)?;
    let opts = PlanOptions {
        policy: threshold.map_or(SplitPolicy::Median, SplitPolicy::Threshold),
        seed,
        ..Default::default()
    };
    let plan = curriculum::build_plan(&caption, &all, scale, &opts).map_err(err)?;
    to_py(py, &plan)
}

/// Hashed training-config document for a plan dict.
#[pyfunction]
fn emit_config(plan: &Bound<'_, PyAny>) -> PyResult<String> {
    curriculum::emit_config(&from_py(plan)?).map_err(err)
}

#[pymodule]
#[pyo3(name = "vlcurate")]
fn vlcurate_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyManifest>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(type_token_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(luma, m)?)?;
    m.add_function(wrap_pyfunction!(image_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(snap_dims, m)?)?;
    m.add_function(wrap_pyfunction!(plan_tiles, m)?)?;
    m.add_function(wrap_pyfunction!(compare_schemes, m)?)?;
    m.add_function(wrap_pyfunction!(aspect_distortion, m)?)?;
    m.add_function(wrap_pyfunction!(gap_indicator, m)?)?;
    m.add_function(wrap_pyfunction!(pair_complexity, m)?)?;
    m.add_function(wrap_pyfunction!(task_score, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_batch, m)?)?;
    m.add_function(wrap_pyfunction!(composite_score, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_weights, m)?)?;
    m.add_function(wrap_pyfunction!(score_batch, m)?)?;
    m.add_function(wrap_pyfunction!(find_repeated_segment, m)?)?;
    m.add_function(wrap_pyfunction!(pack_batches, m)?)?;
    m.add_function(wrap_pyfunction!(build_plan, m)?)?;
    m.add_function(wrap_pyfunction!(emit_config, m)?)?;
    Ok(())
}
