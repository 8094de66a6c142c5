//! Complexity tiers, the four-stage training curriculum, budget fulfillment
//! and token/image-bounded sequence packing.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imagestats::image_dimensions;
use crate::manifest::{DatasetManifest, Sample, TaskCategory};
use crate::scoring::ComplexityReport;
use crate::textstats::tokenize;
use crate::tileplan::{self, ResolutionConfig};

pub const CONFIG_VERSION: u32 = 1;
pub const DEFAULT_MATERIALIZE_LIMIT: u64 = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum SplitPolicy {
    /// Per category: `S <= median(S)` is low.
    #[default]
    Median,
    /// `S <= t` is low.
    Threshold(f64),
}


#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Low,
    High,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Low => "low",
            Tier::High => "high",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComplexitySplit {
    /// Indices into the input reports.
    pub low: Vec<usize>,
    pub high: Vec<usize>,
    /// Cut value per category group (`"uncategorized"` for reports without one).
    pub thresholds: BTreeMap<String, f64>,
}

impl ComplexitySplit {
    pub fn tier_of(&self, index: usize) -> Tier {
        if self.low.contains(&index) {
            Tier::Low
        } else {
            Tier::High
        }
    }
}

fn group_key(category: Option<TaskCategory>) -> String {
    category.map_or_else(|| "uncategorized".to_string(), |c| c.as_str().to_string())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

pub fn split_by_complexity(reports: &[ComplexityReport], policy: SplitPolicy) -> Result<ComplexitySplit> {
    if reports.is_empty() {
        return Err(Error::InvalidInput("cannot split an empty set of reports".into()));
    }
    for r in reports {
        if !(0.0..=1.0).contains(&r.score) {
            return Err(Error::OutOfUnitRange {
                name: "composite score",
                value: r.score,
            });
        }
    }
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in reports.iter().enumerate() {
        groups.entry(group_key(r.category)).or_default().push(i);
    }
    let mut split = ComplexitySplit::default();
    for (key, members) in groups {
        let cut = match policy {
            SplitPolicy::Median => median(&mut members.iter().map(|&i| reports[i].score).collect::<Vec<_>>()),
            SplitPolicy::Threshold(t) => t,
        };
        for i in members {
            if reports[i].score <= cut {
                split.low.push(i);
            } else {
                split.high.push(i);
            }
        }
        split.thresholds.insert(key, cut);
    }
    split.low.sort_unstable();
    split.high.sort_unstable();
    Ok(split)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    VisualEncoder,
    Projector,
    Llm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Warmup {
    Steps(u64),
    Ratio(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetAllocation {
    pub dataset: String,
    pub category: Option<TaskCategory>,
    pub score: f64,
    pub available: usize,
    /// Samples drawn from this dataset to fill the stage budget.
    pub allocated: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub index: u8,
    pub name: String,
    pub trainable: BTreeSet<Component>,
    pub tier: Tier,
    pub categories: Vec<TaskCategory>,
    pub datasets: Vec<DatasetAllocation>,
    pub sample_budget: u64,
    pub learning_rate: f64,
    pub warmup: Warmup,
    pub train_steps: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharedConfig {
    pub max_pack_tokens: u64,
    pub max_pack_images: u32,
    pub max_tiles: u32,
    pub optimizer: String,
    pub schedule: String,
    pub reference_hardware: String,
}

impl Default for SharedConfig {
    fn default() -> Self {
        SharedConfig {
            max_pack_tokens: 16_384,
            max_pack_images: 48,
            max_tiles: 24,
            optimizer: "AdamW".into(),
            schedule: "cosine decay".into(),
            reference_hardware: "128 A800 GPUs".into(),
        }
    }
}

impl SharedConfig {
    pub fn limits(&self) -> PackLimits {
        PackLimits {
            max_tokens: self.max_pack_tokens,
            max_images: self.max_pack_images,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumPlan {
    pub stages: Vec<StageSpec>,
    pub shared: SharedConfig,
    pub split_policy: SplitPolicy,
    /// Cut values of the caption split and the all-category split.
    pub caption_thresholds: BTreeMap<String, f64>,
    pub all_thresholds: BTreeMap<String, f64>,
    pub scale_factor: f64,
    pub seed: u64,
    /// Snapshot of the run settings that produced the plan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanOptions {
    pub policy: SplitPolicy,
    pub shared: SharedConfig,
    pub seed: u64,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            policy: SplitPolicy::Median,
            shared: SharedConfig::default(),
            seed: 0,
        }
    }
}

struct StageTemplate {
    name: &'static str,
    trainable: &'static [Component],
    tier: Tier,
    caption_only: bool,
    budget: u64,
    learning_rate: f64,
    warmup: Warmup,
    steps: u64,
}

const STAGES: [StageTemplate; 4] = [
    StageTemplate {
        name: "low_complexity_caption",
        trainable: &[Component::Projector],
        tier: Tier::Low,
        caption_only: true,
        budget: 10_000_000,
        learning_rate: 2e-4,
        warmup: Warmup::Steps(100),
        steps: 65_000,
    },
    StageTemplate {
        name: "high_complexity_caption",
        trainable: &[Component::VisualEncoder, Component::Projector],
        tier: Tier::High,
        caption_only: true,
        budget: 23_000_000,
        learning_rate: 1e-5,
        warmup: Warmup::Steps(100),
        steps: 90_000,
    },
    StageTemplate {
        name: "low_complexity_all",
        trainable: &[Component::VisualEncoder, Component::Projector, Component::Llm],
        tier: Tier::Low,
        caption_only: false,
        budget: 54_000_000,
        learning_rate: 4e-5,
        warmup: Warmup::Ratio(0.03),
        steps: 140_000,
    },
    StageTemplate {
        name: "high_complexity_all",
        trainable: &[Component::VisualEncoder, Component::Projector, Component::Llm],
        tier: Tier::High,
        caption_only: false,
        budget: 66_000_000,
        learning_rate: 4e-5,
        warmup: Warmup::Ratio(0.03),
        steps: 250_000,
    },
];

/// `ceil(base * scale)`, at least 1. Products within 1e-9 of an integer are
/// taken as that integer so float noise does not bump them up.
pub fn scaled_count(base: u64, scale: f64) -> u64 {
    let x = base as f64 * scale;
    let nearest = x.round();
    let v = if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) { nearest } else { x.ceil() };
    (v as u64).max(1)
}

/// Splits `budget` across sizes proportionally, largest remainder first
/// (ties to the earlier entry).
pub fn proportional_allocation(sizes: &[usize], budget: u64) -> Vec<u64> {
    let total: u128 = sizes.iter().map(|&s| s as u128).sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let mut out: Vec<u64> = Vec::with_capacity(sizes.len());
    let mut remainders: Vec<(u128, usize)> = Vec::with_capacity(sizes.len());
    for (i, &s) in sizes.iter().enumerate() {
        let share = budget as u128 * s as u128;
        out.push((share / total) as u64);
        remainders.push((share % total, i));
    }
    let assigned: u64 = out.iter().sum();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().take((budget - assigned) as usize) {
        out[i] += 1;
    }
    out
}

fn stage_from(
    index: usize,
    t: &StageTemplate,
    reports: &[ComplexityReport],
    split: &ComplexitySplit,
    scale: f64,
) -> StageSpec {
    let mut notes = Vec::new();
    let mut tier = t.tier;
    let pick = |tier: Tier| match tier {
        Tier::Low => &split.low,
        Tier::High => &split.high,
    };
    let mut members = pick(tier);
    if members.is_empty() {
        let other = if tier == Tier::Low { Tier::High } else { Tier::Low };
        notes.push(format!(
            "no {}-complexity data available; stage draws from the {} tier",
            tier.as_str(),
            other.as_str()
        ));
        tier = other;
        members = pick(tier);
    }
    let sizes: Vec<usize> = members.iter().map(|&i| reports[i].n_samples).collect();
    let budget = scaled_count(t.budget, scale);
    let allocated = proportional_allocation(&sizes, budget);
    let datasets: Vec<DatasetAllocation> = members
        .iter()
        .zip(allocated)
        .map(|(&i, allocated)| DatasetAllocation {
            dataset: reports[i].dataset.clone(),
            category: reports[i].category,
            score: reports[i].score,
            available: reports[i].n_samples,
            allocated,
        })
        .collect();
    let categories: Vec<TaskCategory> = if t.caption_only {
        vec![TaskCategory::Caption]
    } else {
        datasets.iter().filter_map(|d| d.category).collect::<BTreeSet<_>>().into_iter().collect()
    };
    StageSpec {
        index: index as u8 + 1,
        name: t.name.to_string(),
        trainable: t.trainable.iter().copied().collect(),
        tier,
        categories,
        datasets,
        sample_budget: budget,
        learning_rate: t.learning_rate,
        warmup: match t.warmup {
            Warmup::Steps(s) => Warmup::Steps(scaled_count(s, scale)),
            ratio => ratio,
        },
        train_steps: scaled_count(t.steps, scale),
        notes,
    }
}

/// Four stages: low then high complexity caption data, then low then high
/// complexity data across all categories.
pub fn build_plan(
    caption: &[ComplexityReport],
    all_tasks: &[ComplexityReport],
    scale_factor: f64,
    opts: &PlanOptions,
) -> Result<CurriculumPlan> {
    if !(scale_factor > 0.0 && scale_factor <= 1.0) {
        return Err(Error::Config(format!("scale factor must be in (0, 1], got {scale_factor}")));
    }
    if caption.is_empty() {
        return Err(Error::NoCaptionData);
    }
    if all_tasks.is_empty() {
        return Err(Error::InvalidInput("no datasets for the all-category stages".into()));
    }
    if opts.shared.max_pack_tokens == 0 || opts.shared.max_pack_images == 0 || opts.shared.max_tiles == 0 {
        return Err(Error::Config("shared pack limits must be positive".into()));
    }
    let caption_split = split_by_complexity(caption, opts.policy)?;
    let all_split = split_by_complexity(all_tasks, opts.policy)?;
    let stages = STAGES
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.caption_only {
                stage_from(i, t, caption, &caption_split, scale_factor)
            } else {
                stage_from(i, t, all_tasks, &all_split, scale_factor)
            }
        })
        .collect();
    Ok(CurriculumPlan {
        stages,
        shared: opts.shared.clone(),
        split_policy: opts.policy,
        caption_thresholds: caption_split.thresholds,
        all_thresholds: all_split.thresholds,
        scale_factor,
        seed: opts.seed,
        run_config: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackLimits {
    pub max_tokens: u64,
    pub max_images: u32,
}

impl Default for PackLimits {
    fn default() -> Self {
        SharedConfig::default().limits()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackItem {
    pub id: String,
    pub text_tokens: u64,
    /// Retained visual tokens of each image.
    pub image_tokens: Vec<u64>,
}

impl PackItem {
    pub fn cost(&self) -> u64 {
        self.text_tokens + self.image_tokens.iter().sum::<u64>()
    }

    pub fn images(&self) -> u32 {
        self.image_tokens.len() as u32
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pack {
    pub sample_ids: Vec<String>,
    pub total_tokens: u64,
    pub total_images: u32,
}

/// Max remaining capacity per subtree, used to find the leftmost pack that
/// can take an item.
struct CapacityTree {
    size: usize,
    tokens: Vec<u64>,
    images: Vec<u32>,
}

impl CapacityTree {
    fn new(leaves: usize, limits: PackLimits) -> Self {
        let size = leaves.next_power_of_two().max(1);
        CapacityTree {
            size,
            tokens: vec![limits.max_tokens; 2 * size],
            images: vec![limits.max_images; 2 * size],
        }
    }

    fn first_fit(&self, node: usize, tokens: u64, images: u32) -> Option<usize> {
        if self.tokens[node] < tokens || self.images[node] < images {
            return None;
        }
        if node >= self.size {
            return Some(node - self.size);
        }
        self.first_fit(2 * node, tokens, images)
            .or_else(|| self.first_fit(2 * node + 1, tokens, images))
    }

    fn consume(&mut self, leaf: usize, tokens: u64, images: u32) {
        let mut node = leaf + self.size;
        self.tokens[node] -= tokens;
        self.images[node] -= images;
        while node > 1 {
            node /= 2;
            self.tokens[node] = self.tokens[2 * node].max(self.tokens[2 * node + 1]);
            self.images[node] = self.images[2 * node].max(self.images[2 * node + 1]);
        }
    }
}

/// First-fit-decreasing by token cost (stable for equal costs) under both caps.
pub fn pack_batches(items: &[PackItem], limits: PackLimits) -> Result<Vec<Pack>> {
    if limits.max_tokens == 0 || limits.max_images == 0 {
        return Err(Error::Config("pack limits must be positive".into()));
    }
    for item in items {
        if item.cost() > limits.max_tokens || item.images() > limits.max_images {
            return Err(Error::OversizeSample {
                id: item.id.clone(),
                tokens: item.cost(),
                images: item.images(),
            });
        }
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(items[i].cost()));
    let mut tree = CapacityTree::new(items.len(), limits);
    let mut packs: Vec<Pack> = Vec::new();
    for i in order {
        let item = &items[i];
        let slot = tree
            .first_fit(1, item.cost(), item.images())
            .expect("an unopened pack always fits a valid item");
        tree.consume(slot, item.cost(), item.images());
        if slot == packs.len() {
            packs.push(Pack::default());
        }
        let pack = &mut packs[slot];
        pack.sample_ids.push(item.id.clone());
        pack.total_tokens += item.cost();
        pack.total_images += item.images();
    }
    Ok(packs)
}

/// Text tokens of prompt and response plus the retained tokens of the image's
/// tile plan.
pub fn sample_cost(sample: &Sample, id: String, res: &ResolutionConfig) -> Result<PackItem> {
    let text_tokens = (tokenize(&sample.prompt).len() + tokenize(&sample.response).len()) as u64;
    let image_tokens = match sample.image {
        Some(_) => {
            let (w, h) = image_dimensions(sample)?;
            vec![tileplan::plan(w, h, res)?.retained_tokens]
        }
        None => Vec::new(),
    };
    Ok(PackItem {
        id,
        text_tokens,
        image_tokens,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageData {
    pub stage: u8,
    pub name: String,
    /// `dataset/sample-id` references in training order.
    pub sample_ids: Vec<String>,
    pub packs: Vec<Pack>,
}

/// Draws `count` sample indices by walking seeded permutations of the
/// dataset, reshuffling after each full pass.
fn draw_indices(len: usize, count: u64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(count as usize);
    let mut perm: Vec<usize> = (0..len).collect();
    while (out.len() as u64) < count {
        perm.shuffle(rng);
        let need = (count - out.len() as u64).min(len as u64) as usize;
        out.extend_from_slice(&perm[..need]);
    }
    out
}

/// Fills a stage budget from its allocated datasets and packs the result.
pub fn materialize_stage(
    stage: &StageSpec,
    datasets: &BTreeMap<String, &DatasetManifest>,
    seed: u64,
    res: &ResolutionConfig,
    limits: PackLimits,
) -> Result<StageData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((stage.index as u64) << 56));
    let mut items: Vec<PackItem> = Vec::new();
    for alloc in &stage.datasets {
        let manifest = datasets
            .get(&alloc.dataset)
            .ok_or_else(|| Error::InvalidInput(format!("stage {} references unknown dataset {}", stage.index, alloc.dataset)))?;
        if manifest.is_empty() {
            continue;
        }
        let mut costs: BTreeMap<usize, PackItem> = BTreeMap::new();
        for idx in draw_indices(manifest.len(), alloc.allocated, &mut rng) {
            if let std::collections::btree_map::Entry::Vacant(e) = costs.entry(idx) {
                let sample = &manifest.samples[idx];
                let item = sample_cost(sample, format!("{}/{}", alloc.dataset, sample.id), res)?;
                e.insert(item);
            }
            items.push(costs[&idx].clone());
        }
    }
    items.shuffle(&mut rng);
    let packs = pack_batches(&items, limits)?;
    Ok(StageData {
        stage: stage.index,
        name: stage.name.clone(),
        sample_ids: items.into_iter().map(|i| i.id).collect(),
        packs,
    })
}

#[derive(Serialize, Deserialize)]
struct ConfigDocument {
    version: u32,
    config_hash: String,
    plan: CurriculumPlan,
}

fn plan_hash(plan: &CurriculumPlan) -> Result<String> {
    let canonical = serde_json::to_vec(plan).map_err(|e| Error::Serde(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(&canonical)))
}

/// Versioned training-config document with a content hash.
pub fn emit_config(plan: &CurriculumPlan) -> Result<String> {
    let doc = ConfigDocument {
        version: CONFIG_VERSION,
        config_hash: plan_hash(plan)?,
        plan: plan.clone(),
    };
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Serde(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn load_config(text: &str) -> Result<CurriculumPlan> {
    let doc: ConfigDocument = serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
    if doc.version != CONFIG_VERSION {
        return Err(Error::Config(format!("unsupported training-config version {}", doc.version)));
    }
    let actual = plan_hash(&doc.plan)?;
    if actual != doc.config_hash {
        return Err(Error::Config(format!(
            "training-config hash mismatch: recorded {}, computed {actual}",
            doc.config_hash
        )));
    }
    Ok(doc.plan)
}
