//! Command-line pipelines: filter, score, calibrate, plan-tiles, schedule and
//! report. Every command collects its outputs in memory and writes them only
//! once the whole run has succeeded.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::curriculum::{self, PlanOptions, SharedConfig, SplitPolicy, DEFAULT_MATERIALIZE_LIMIT};
use crate::error::{Error, Result};
use crate::filterbank::{load_blocklist, FilterBank, FilterConfig};
use crate::manifest::{self, DatasetManifest, Sidecar, TaskCategory};
use crate::scoring::{
    self, AxisTriple, ComplexityReport, FixedCaps, NormalizationMode, Oracles, PerplexityFallback, RankedEntry,
    RankedSubsets, ScoringOptions, WeightEntry, WeightsTable,
};
use crate::taskgap::GapConfig;
use crate::tileplan::{self, ResolutionConfig, Scheme, TokenBudget};

#[derive(Debug, Parser)]
#[command(name = "vlcurate", version, about = "Curate vision-language training corpora")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the per-sample filters and write kept manifests plus reports.
    Filter(RunArgs),
    /// Score every manifest in one normalization batch.
    Score(RunArgs),
    /// Fit per-category weights from five human-ranked subset reports.
    Calibrate(CalibrateArgs),
    /// Token budgets of image sizes under each resize scheme.
    PlanTiles(PlanTilesArgs),
    /// Score, build the four-stage curriculum and pack stage data.
    Schedule(RunArgs),
    /// Render score reports as a ranked markdown table.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    #[default]
    Minmax,
    Fixed,
}

#[derive(Clone, Debug, Default, Args)]
pub struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "manifest")]
    pub manifests: Vec<PathBuf>,
    #[arg(long = "sidecar")]
    pub sidecars: Vec<PathBuf>,
    #[arg(long)]
    pub filter_config: Option<PathBuf>,
    /// Keyword blocklist, one keyword per line.
    #[arg(long)]
    pub blocklist: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, value_enum)]
    pub norm: Option<NormKind>,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub category: TaskCategory,
    /// `RANK=REPORT` where REPORT is a score report and RANK runs 1 (easiest) to 5.
    #[arg(long = "subset", required = true)]
    pub subsets: Vec<String>,
    #[arg(long, default_value_t = 0.05)]
    pub grid_step: f64,
    /// Refuse to write weights whose smallest consecutive margin is below this.
    #[arg(long)]
    pub min_margin: Option<f64>,
    /// Weights file to update in place (created when missing).
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Args)]
pub struct PlanTilesArgs {
    #[arg(long, requires = "height")]
    pub width: Option<u32>,
    #[arg(long, requires = "width")]
    pub height: Option<u32>,
    /// File of `W H` or `W,H` lines.
    #[arg(long, conflicts_with = "width")]
    pub input: Option<PathBuf>,
    /// Defaults to every scheme.
    #[arg(long = "scheme")]
    pub schemes: Vec<Scheme>,
    /// Take the resolution settings from a run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct ReportArgs {
    /// Score report files or directories containing `*.report.json`.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl clap::ValueEnum for Scheme {
    fn value_variants<'a>() -> &'a [Self] {
        &Scheme::ALL
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.as_str()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifests: Vec<PathBuf>,
    pub sidecars: Vec<PathBuf>,
    pub filter_config: Option<PathBuf>,
    pub blocklist: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub gap: GapConfig,
    pub normalization: NormKind,
    pub fixed_caps: FixedCaps,
    pub perplexity_fallback: PerplexityFallback,
    pub resolution: ResolutionConfig,
    pub split: SplitPolicy,
    pub scale: f64,
    /// Stages with larger budgets get a plan but no sample lists or packs.
    pub materialize_limit: u64,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifests: Vec::new(),
            sidecars: Vec::new(),
            filter_config: None,
            blocklist: None,
            weights: None,
            gap: GapConfig::default(),
            normalization: NormKind::Minmax,
            fixed_caps: FixedCaps::default(),
            perplexity_fallback: PerplexityFallback::None,
            resolution: ResolutionConfig::default(),
            split: SplitPolicy::Median,
            scale: 1.0,
            materialize_limit: DEFAULT_MATERIALIZE_LIMIT,
            out: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Parses a TOML config; relative paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        cfg.manifests.iter_mut().for_each(fix);
        cfg.sidecars.iter_mut().for_each(fix);
        cfg.filter_config.iter_mut().for_each(fix);
        cfg.blocklist.iter_mut().for_each(fix);
        cfg.weights.iter_mut().for_each(fix);
        fix(&mut cfg.out);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Config file values overridden by any flags given.
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(path) => Self::load(path)?,
            None => RunConfig::default(),
        };
        if !args.manifests.is_empty() {
            cfg.manifests = args.manifests.clone();
        }
        if !args.sidecars.is_empty() {
            cfg.sidecars = args.sidecars.clone();
        }
        macro_rules! take {
            ($($field:ident => $target:expr),*) => {
                $(if let Some(v) = &args.$field { $target = v.clone().into(); })*
            };
        }
        take!(
            filter_config => cfg.filter_config,
            blocklist => cfg.blocklist,
            weights => cfg.weights,
            beta => cfg.gap.beta,
            delta => cfg.gap.delta,
            norm => cfg.normalization,
            scale => cfg.scale,
            seed => cfg.seed,
            out => cfg.out
        );
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.gap.validate()?;
        self.resolution.validate()?;
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(Error::Config(format!("scale must be in (0, 1], got {}", self.scale)));
        }
        Ok(())
    }

    pub fn normalization_mode(&self) -> NormalizationMode {
        match self.normalization {
            NormKind::Minmax => NormalizationMode::MinMax,
            NormKind::Fixed => NormalizationMode::FixedCap(self.fixed_caps),
        }
    }

    fn snapshot(&self) -> Value {
        serde_json::to_value(self).expect("run config serializes")
    }
}

/// A failed invocation: usage problems exit with 2, run failures with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Run(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

/// What a command produced: staged files, stdout text and warnings.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<(PathBuf, Vec<u8>)>,
    pub stdout: String,
    pub warnings: Vec<String>,
}

impl Outcome {
    fn add(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    fn add_json(&mut self, path: PathBuf, value: &Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))?;
        text.push('\n');
        self.add(path, text.into_bytes());
        Ok(())
    }

    /// Writes every staged file, removing already-written ones on failure.
    pub fn commit(&self) -> Result<Vec<PathBuf>> {
        let mut written: Vec<PathBuf> = Vec::new();
        for (path, bytes) in &self.files {
            let result = path
                .parent()
                .map_or(Ok(()), fs::create_dir_all)
                .and_then(|_| fs::write(path, bytes));
            if let Err(e) = result {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                return Err(Error::io(path, e));
            }
            written.push(path.clone());
        }
        Ok(written)
    }
}

fn envelope(command: &str, cfg: &RunConfig, result: Value) -> Value {
    json!({
        "command": command,
        "seed": cfg.seed,
        "run_config": cfg.snapshot(),
        "result": result,
    })
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Serde(e.to_string()))
}

fn check_paths(cfg: &RunConfig) -> std::result::Result<(), CliError> {
    if cfg.manifests.is_empty() {
        return Err(CliError::Usage("at least one --manifest is required".into()));
    }
    let optional = [&cfg.filter_config, &cfg.blocklist, &cfg.weights];
    for path in cfg.manifests.iter().chain(&cfg.sidecars).chain(optional.into_iter().flatten()) {
        if !path.exists() {
            return Err(CliError::Usage(format!("path does not exist: {}", path.display())));
        }
    }
    Ok(())
}

/// Loaded manifests with sidecars merged, plus the source path of each.
struct Inputs {
    datasets: Vec<DatasetManifest>,
    sources: BTreeMap<String, PathBuf>,
    warnings: Vec<String>,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let mut sidecar = Sidecar::default();
    for path in &cfg.sidecars {
        sidecar.extend(manifest::load_sidecar(path)?);
    }
    let labels = sidecar.labels();
    let mut inputs = Inputs {
        datasets: Vec::new(),
        sources: BTreeMap::new(),
        warnings: Vec::new(),
    };
    let mut matched: BTreeSet<String> = BTreeSet::new();
    for path in &cfg.manifests {
        let loaded = manifest::load_manifest(path)?;
        matched.extend(loaded.samples.iter().map(|s| s.id.clone()));
        let attached = manifest::attach_sidecar(&loaded, &sidecar).manifest;
        let parts = if attached.category.is_none() && attached.samples.iter().all(|s| labels.contains_key(&s.id)) {
            manifest::categorize(&attached, None, Some(&labels))?
        } else {
            if attached.category.is_none() {
                inputs.warnings.push(format!("dataset {:?} has no task category", attached.name));
            }
            vec![attached]
        };
        for part in parts {
            if inputs.sources.insert(part.name.clone(), path.clone()).is_some() {
                return Err(Error::InvalidInput(format!("dataset name {:?} appears more than once", part.name)));
            }
            inputs.datasets.push(part);
        }
    }
    for id in sidecar.ids() {
        if !matched.contains(id) {
            inputs.warnings.push(format!("sidecar id {id:?} matches no sample in any manifest"));
        }
    }
    Ok(inputs)
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect()
}

pub fn cmd_filter(cfg: &RunConfig) -> std::result::Result<Outcome, CliError> {
    check_paths(cfg)?;
    let mut filter_cfg = match &cfg.filter_config {
        Some(path) => FilterConfig::load(path)?,
        None => FilterConfig::default(),
    };
    if let Some(path) = &cfg.blocklist {
        filter_cfg.keyword_blocklist = load_blocklist(path)?;
    }
    let bank = FilterBank::new(filter_cfg.clone())?;
    let inputs = load_inputs(cfg)?;
    let dir = cfg.out.join("filter");
    let mut out = Outcome {
        warnings: inputs.warnings,
        ..Default::default()
    };
    let mut summary = Vec::new();
    for dataset in &inputs.datasets {
        let (kept, report) = bank.run(dataset)?;
        let stem = file_stem(&dataset.name);
        out.add(dir.join(format!("{stem}.kept.jsonl")), kept.to_jsonl()?.into_bytes());
        let doc = json!({"filter_config": to_value(&filter_cfg)?, "report": to_value(&report)?});
        out.add_json(dir.join(format!("{stem}.report.json")), &envelope("filter", cfg, doc))?;
        let _ = writeln!(
            out.stdout,
            "{}: kept {} of {} ({} rejected)",
            dataset.name, report.kept, report.total, report.rejected
        );
        summary.push(json!({
            "dataset": dataset.name,
            "total": report.total,
            "kept": report.kept,
            "rejected": report.rejected,
            "rejections_by_rule": report.rejections_by_rule,
        }));
    }
    out.add_json(dir.join("summary.json"), &envelope("filter", cfg, Value::Array(summary)))?;
    Ok(out)
}

fn scoring_options(cfg: &RunConfig) -> Result<ScoringOptions> {
    Ok(ScoringOptions {
        weights: match &cfg.weights {
            Some(path) => WeightsTable::load(path)?,
            None => WeightsTable::default(),
        },
        gap: cfg.gap,
        normalization: cfg.normalization_mode(),
        perplexity_fallback: cfg.perplexity_fallback,
    })
}

fn summary_rows(reports: &[ComplexityReport]) -> Value {
    Value::Array(
        scoring::rank_reports(reports)
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                json!({
                    "rank": i + 1,
                    "dataset": r.dataset,
                    "category": r.category,
                    "n_samples": r.n_samples,
                    "axes": r.axes,
                    "score": r.score,
                })
            })
            .collect(),
    )
}

pub fn cmd_score(cfg: &RunConfig) -> std::result::Result<Outcome, CliError> {
    check_paths(cfg)?;
    let opts = scoring_options(cfg)?;
    let inputs = load_inputs(cfg)?;
    let reports = scoring::score_batch(&inputs.datasets, &Oracles::default(), &opts)?;
    let dir = cfg.out.join("score");
    let mut out = Outcome {
        warnings: inputs.warnings,
        ..Default::default()
    };
    for r in &reports {
        out.warnings.extend(r.warnings.iter().map(|w| format!("{}: {w}", r.dataset)));
        out.add_json(
            dir.join(format!("{}.report.json", file_stem(&r.dataset))),
            &envelope("score", cfg, to_value(r)?),
        )?;
    }
    out.add_json(dir.join("summary.json"), &envelope("score", cfg, summary_rows(&reports)))?;
    let markdown = scoring::render_markdown(&reports);
    out.add(dir.join("summary.md"), markdown.clone().into_bytes());
    out.stdout = markdown;
    Ok(out)
}

/// Reads a score report, bare or wrapped in a command envelope.
pub fn read_report(path: &Path) -> Result<(ComplexityReport, Option<Value>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    let (body, run) = match value.get("result") {
        Some(result) => (result.clone(), value.get("run_config").cloned()),
        None => (value, None),
    };
    let report = serde_json::from_value(body).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    Ok((report, run))
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> std::result::Result<Outcome, CliError> {
    let mut entries = Vec::new();
    for spec in &args.subsets {
        let (rank, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--subset expects RANK=REPORT, got {spec:?}")))?;
        let rank: u8 = rank
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("invalid rank in {spec:?}")))?;
        let path = PathBuf::from(path);
        if !path.exists() {
            return Err(CliError::Usage(format!("path does not exist: {}", path.display())));
        }
        let (report, _) = read_report(&path)?;
        let (Some(text), Some(image), Some(task)) = (report.axes.text, report.axes.image, report.axes.task) else {
            return Err(Error::MalformedRanking(format!("report {} lacks an axis score", path.display())).into());
        };
        entries.push(RankedEntry {
            name: report.dataset,
            rank,
            axes: AxisTriple { text, image, task },
        });
    }
    let ranked = RankedSubsets {
        category: args.category,
        entries,
    };
    let result = scoring::calibrate_weights(&ranked, args.grid_step)?;
    if let Some(floor) = args.min_margin {
        if !result.feasible || result.min_margin < floor {
            return Err(Error::InvalidInput(format!(
                "best weights for {} have margin {:.6} (feasible={}), below the required {floor}",
                args.category, result.min_margin, result.feasible
            ))
            .into());
        }
    }
    let mut table = if args.weights.exists() {
        WeightsTable::load(&args.weights)?
    } else {
        WeightsTable::default()
    };
    table.entries.insert(args.category, WeightEntry::from_calibration(&result));
    let mut out = Outcome::default();
    out.add(args.weights.clone(), table.to_toml_string()?.into_bytes());
    if let Some(dir) = &args.out {
        let doc = json!({"ranked": to_value(&ranked)?, "result": to_value(&result)?});
        out.add_json(dir.join(format!("calibrate.{}.json", args.category)), &doc)?;
    }
    if !result.feasible {
        out.warnings.push(format!(
            "no grid point orders the {} subsets strictly; best Kendall tau {:.3}",
            args.category, result.kendall_tau
        ));
    }
    out.stdout = format!(
        "{}: lambda = ({:.2}, {:.2}, {:.2}) feasible={} min_margin={:.6} tau={:.3}\n",
        args.category,
        result.weights.lambda_text,
        result.weights.lambda_image,
        result.weights.lambda_task,
        result.feasible,
        result.min_margin,
        result.kendall_tau
    );
    Ok(out)
}

/// Parses `W H` or `W,H` lines; blank lines and `#` comments are skipped.
pub fn parse_sizes(text: &str) -> Result<Vec<(u32, u32)>> {
    let mut sizes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|p| !p.is_empty()).collect();
        let parsed = match parts.as_slice() {
            [w, h] => w.parse::<u32>().ok().zip(h.parse::<u32>().ok()),
            _ => None,
        };
        match parsed {
            Some((w, h)) if w > 0 && h > 0 => sizes.push((w, h)),
            _ => return Err(Error::InvalidInput(format!("line {}: expected positive `W H`, got {line:?}", i + 1))),
        }
    }
    Ok(sizes)
}

#[derive(Debug, Serialize)]
struct TileRow {
    width: u32,
    height: u32,
    budgets: Vec<TokenBudget>,
}

pub fn cmd_plan_tiles(args: &PlanTilesArgs) -> std::result::Result<Outcome, CliError> {
    let cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.resolution.validate()?;
    let sizes = match (&args.input, args.width.zip(args.height)) {
        (Some(path), _) => {
            if !path.exists() {
                return Err(CliError::Usage(format!("path does not exist: {}", path.display())));
            }
            parse_sizes(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?
        }
        (None, Some((w, h))) => vec![(w, h)],
        (None, None) => return Err(CliError::Usage("give --width and --height or --input".into())),
    };
    let schemes: Vec<Scheme> = if args.schemes.is_empty() {
        Scheme::ALL.to_vec()
    } else {
        args.schemes.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    };
    let mut rows = Vec::with_capacity(sizes.len());
    let mut totals: BTreeMap<&str, u64> = schemes.iter().map(|s| (s.as_str(), 0)).collect();
    for &(w, h) in &sizes {
        let budgets = schemes
            .iter()
            .map(|&s| tileplan::compare_schemes(w, h, &cfg.resolution, s))
            .collect::<Result<Vec<_>>>()?;
        for b in &budgets {
            *totals.get_mut(b.scheme.as_str()).expect("scheme listed") += b.tokens;
        }
        rows.push(TileRow {
            width: w,
            height: h,
            budgets,
        });
    }
    let doc = json!({
        "resolution": to_value(&cfg.resolution)?,
        "images": to_value(&rows)?,
        "totals": totals,
    });
    let mut out = Outcome::default();
    if args.json {
        out.stdout = serde_json::to_string_pretty(&doc).map_err(|e| Error::Serde(e.to_string()))? + "\n";
    } else {
        let mut table = String::from("width\theight\tscheme\tresized\ttiles\ttokens\n");
        for row in &rows {
            for b in &row.budgets {
                let _ = writeln!(
                    table,
                    "{}\t{}\t{}\t{}x{}\t{}\t{}",
                    row.width,
                    row.height,
                    b.scheme.as_str(),
                    b.resized.0,
                    b.resized.1,
                    b.tiles,
                    b.tokens
                );
            }
        }
        for (scheme, total) in &totals {
            let _ = writeln!(table, "total\t\t{scheme}\t\t\t{total}");
        }
        out.stdout = table;
    }
    if let Some(dir) = &args.out {
        out.add_json(dir.join("plan_tiles.json"), &envelope("plan-tiles", &cfg, doc))?;
    }
    Ok(out)
}

pub fn cmd_schedule(cfg: &RunConfig) -> std::result::Result<Outcome, CliError> {
    check_paths(cfg)?;
    let opts = scoring_options(cfg)?;
    let inputs = load_inputs(cfg)?;
    let reports = scoring::score_batch(&inputs.datasets, &Oracles::default(), &opts)?;
    let caption: Vec<ComplexityReport> = reports
        .iter()
        .filter(|r| r.category == Some(TaskCategory::Caption))
        .cloned()
        .collect();
    let plan_opts = PlanOptions {
        policy: cfg.split,
        shared: SharedConfig {
            max_tiles: cfg.resolution.max_tiles,
            ..SharedConfig::default()
        },
        seed: cfg.seed,
    };
    let mut plan = curriculum::build_plan(&caption, &reports, cfg.scale, &plan_opts)?;
    plan.run_config = Some(cfg.snapshot());

    let dir = cfg.out.join("schedule");
    let mut out = Outcome {
        warnings: inputs.warnings,
        ..Default::default()
    };
    let by_name: BTreeMap<String, &DatasetManifest> =
        inputs.datasets.iter().map(|d| (d.name.clone(), d)).collect();
    let mut assignments = Vec::new();
    for stage in &plan.stages {
        let refs: Vec<Value> = stage
            .datasets
            .iter()
            .map(|d| json!({"dataset": d.dataset, "manifest": inputs.sources[&d.dataset], "allocated": d.allocated}))
            .collect();
        let materialized = stage.sample_budget <= cfg.materialize_limit;
        assignments.push(json!({"stage": stage.index, "name": stage.name, "datasets": refs, "materialized": materialized}));
        if materialized {
            let data = curriculum::materialize_stage(stage, &by_name, cfg.seed, &cfg.resolution, plan.shared.limits())?;
            let _ = writeln!(
                out.stdout,
                "stage {} {}: {} samples in {} packs",
                stage.index,
                stage.name,
                data.sample_ids.len(),
                data.packs.len()
            );
            out.add_json(
                dir.join(format!("stage{}.packs.json", stage.index)),
                &envelope("schedule", cfg, to_value(&data)?),
            )?;
        } else {
            out.warnings.push(format!(
                "stage {} budget {} exceeds materialize_limit {}; sample lists not written",
                stage.index, stage.sample_budget, cfg.materialize_limit
            ));
            let _ = writeln!(out.stdout, "stage {} {}: budget {} (plan only)", stage.index, stage.name, stage.sample_budget);
        }
    }
    out.add(dir.join("training_config.json"), curriculum::emit_config(&plan)?.into_bytes());
    out.add_json(dir.join("assignments.json"), &envelope("schedule", cfg, Value::Array(assignments)))?;
    Ok(out)
}

fn collect_report_paths(inputs: &[PathBuf]) -> std::result::Result<Vec<PathBuf>, CliError> {
    let mut paths = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)
                .map_err(|e| Error::io(input, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.to_string_lossy().ends_with(".report.json"))
                .collect();
            found.sort();
            paths.extend(found);
        } else if input.exists() {
            paths.push(input.clone());
        } else {
            return Err(CliError::Usage(format!("path does not exist: {}", input.display())));
        }
    }
    Ok(paths)
}

pub fn cmd_report(args: &ReportArgs) -> std::result::Result<Outcome, CliError> {
    let paths = collect_report_paths(&args.inputs)?;
    let mut reports = Vec::with_capacity(paths.len());
    let mut runs = BTreeSet::new();
    for path in &paths {
        let (report, run) = read_report(path)?;
        if let Some(run) = run {
            runs.insert(serde_json::to_string_pretty(&run).map_err(|e| Error::Serde(e.to_string()))?);
        }
        reports.push(report);
    }
    let mut text = String::from("# Dataset complexity\n\n");
    text.push_str(&scoring::render_markdown(&reports));
    for run in &runs {
        let _ = write!(text, "\n## Run configuration\n\n```json\n{run}\n```\n");
    }
    let mut out = Outcome::default();
    if let Some(dir) = &args.out {
        out.add(dir.join("report.md"), text.clone().into_bytes());
    }
    out.stdout = text;
    Ok(out)
}

/// Runs one command, committing its files. Returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Filter(a) => RunConfig::resolve(a).map_err(CliError::from).and_then(|c| cmd_filter(&c)),
        Command::Score(a) => RunConfig::resolve(a).map_err(CliError::from).and_then(|c| cmd_score(&c)),
        Command::Schedule(a) => RunConfig::resolve(a).map_err(CliError::from).and_then(|c| cmd_schedule(&c)),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::PlanTiles(a) => cmd_plan_tiles(a),
        Command::Report(a) => cmd_report(a),
    };
    let outcome = outcome.and_then(|o| o.commit().map(|_| o).map_err(CliError::from));
    match outcome {
        Ok(o) => {
            for w in &o.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", o.stdout);
            0
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
