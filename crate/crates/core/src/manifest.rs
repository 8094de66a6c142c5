//! Dataset manifests, sidecar annotations and task categorization.
//!
//! A manifest file is JSON lines: an optional leading header record
//! `{"dataset": {"name": .., "category": .., "source_note": ..}}` followed by
//! one sample record per line. A sidecar file is JSON lines keyed by sample id.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskCategory {
    Reasoning,
    Gui,
    Ocr,
    TextOnly,
    Chart,
    Caption,
    Vqa,
    Grounding,
}

impl TaskCategory {
    pub const ALL: [TaskCategory; 8] = [
        TaskCategory::Reasoning,
        TaskCategory::Gui,
        TaskCategory::Ocr,
        TaskCategory::TextOnly,
        TaskCategory::Chart,
        TaskCategory::Caption,
        TaskCategory::Vqa,
        TaskCategory::Grounding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskCategory::Reasoning => "reasoning",
            TaskCategory::Gui => "gui",
            TaskCategory::Ocr => "ocr",
            TaskCategory::TextOnly => "text_only",
            TaskCategory::Chart => "chart",
            TaskCategory::Caption => "caption",
            TaskCategory::Vqa => "vqa",
            TaskCategory::Grounding => "grounding",
        }
    }
}

impl fmt::Display for TaskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::UnknownCategory(s.to_string()))
    }
}

/// Model size tier for loss annotations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTier {
    Small,
    Mid,
    Large,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub coherent: bool,
    pub hallucination: bool,
}

/// Model-derived per-sample values. Every field is optional; metrics that
/// need a missing value fail only when they are computed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnnotationSet {
    pub perplexity: Option<f64>,
    pub ocr_token_count: Option<u64>,
    pub object_count: Option<u64>,
    pub model_losses: BTreeMap<ModelTier, f64>,
    pub judge_verdict: Option<JudgeVerdict>,
}

impl AnnotationSet {
    pub fn is_empty(&self) -> bool {
        self == &AnnotationSet::default()
    }

    pub fn loss(&self, tier: ModelTier) -> Option<f64> {
        self.model_losses.get(&tier).copied()
    }

    /// Fields present in `other` replace the corresponding fields here.
    pub fn merge(&mut self, other: &AnnotationSet) {
        if other.perplexity.is_some() {
            self.perplexity = other.perplexity;
        }
        if other.ocr_token_count.is_some() {
            self.ocr_token_count = other.ocr_token_count;
        }
        if other.object_count.is_some() {
            self.object_count = other.object_count;
        }
        for (tier, loss) in &other.model_losses {
            self.model_losses.insert(*tier, *loss);
        }
        if other.judge_verdict.is_some() {
            self.judge_verdict = other.judge_verdict;
        }
    }

    fn validate(&self, id: &str) -> Result<()> {
        let bad = |message: String| Error::InvalidAnnotation {
            id: id.to_string(),
            message,
        };
        if let Some(ppl) = self.perplexity {
            if !ppl.is_finite() || ppl < 1.0 {
                return Err(bad(format!("perplexity must be finite and >= 1, got {ppl}")));
            }
        }
        for (tier, loss) in &self.model_losses {
            if !loss.is_finite() || *loss < 0.0 {
                return Err(bad(format!("{tier:?} loss must be finite and >= 0, got {loss}")));
            }
        }
        Ok(())
    }
}

/// Where a sample's pixels come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ImageRef {
    /// PNG or JPEG file.
    File(PathBuf),
    /// Raw row-major bytes on disk: `width*height` grayscale or `3*width*height` RGB.
    Raw {
        width: u32,
        height: u32,
        pixels_path: PathBuf,
    },
    /// Grayscale row-major pixels held in memory.
    Inline {
        width: u32,
        height: u32,
        pixels: Vec<u8>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `None` for text-only samples.
    pub image: Option<ImageRef>,
    pub prompt: String,
    pub response: String,
    pub annotations: AnnotationSet,
}

impl Sample {
    pub fn text(id: impl Into<String>, prompt: impl Into<String>, response: impl Into<String>) -> Self {
        Sample {
            id: id.into(),
            image: None,
            prompt: prompt.into(),
            response: response.into(),
            annotations: AnnotationSet::default(),
        }
    }

    pub fn with_image(mut self, image: ImageRef) -> Self {
        self.image = Some(image);
        self
    }

    pub fn with_annotations(mut self, annotations: AnnotationSet) -> Self {
        self.annotations = annotations;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |message: &str| Error::InvalidSample {
            id: self.id.clone(),
            message: message.to_string(),
        };
        if self.id.is_empty() {
            return Err(bad("id is empty"));
        }
        if self.prompt.is_empty() && self.response.is_empty() {
            return Err(bad("prompt and response are both empty"));
        }
        match &self.image {
            Some(ImageRef::File(p)) if p.as_os_str().is_empty() => return Err(bad("image path is empty")),
            Some(ImageRef::Raw {
                width,
                height,
                pixels_path,
            }) => {
                if *width == 0 || *height == 0 {
                    return Err(bad("image dimensions must be positive"));
                }
                if pixels_path.as_os_str().is_empty() {
                    return Err(bad("pixels path is empty"));
                }
            }
            Some(ImageRef::Inline { width, height, pixels }) => {
                if *width == 0 || *height == 0 {
                    return Err(bad("image dimensions must be positive"));
                }
                if pixels.len() != *width as usize * *height as usize {
                    return Err(bad("inline pixel buffer length does not match width*height"));
                }
            }
            _ => {}
        }
        self.annotations.validate(&self.id)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub category: Option<TaskCategory>,
    pub samples: Vec<Sample>,
    pub source_note: String,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, samples: Vec<Sample>) -> Self {
        DatasetManifest {
            name: name.into(),
            category: None,
            samples,
            source_note: String::new(),
        }
    }

    pub fn with_category(mut self, category: TaskCategory) -> Self {
        self.category = Some(category);
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Checks every sample invariant plus id uniqueness and `n >= 1`.
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::EmptyManifest(self.name.clone()));
        }
        let mut seen = HashSet::with_capacity(self.samples.len());
        for sample in &self.samples {
            sample.validate()?;
            if !seen.insert(sample.id.as_str()) {
                return Err(Error::InvalidSample {
                    id: sample.id.clone(),
                    message: "duplicate id".into(),
                });
            }
        }
        Ok(())
    }

    /// Serializes to the JSON-lines manifest format.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        let header = HeaderRecord {
            dataset: HeaderBody {
                name: self.name.clone(),
                category: self.category,
                source_note: self.source_note.clone(),
            },
        };
        out.push_str(&to_json_line(&header)?);
        for sample in &self.samples {
            out.push_str(&to_json_line(&SampleRecord::from_sample(sample))?);
        }
        Ok(out)
    }
}

fn to_json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut line = serde_json::to_string(value).map_err(|e| Error::Serde(e.to_string()))?;
    line.push('\n');
    Ok(line)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    dataset: HeaderBody,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderBody {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    category: Option<TaskCategory>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    source_note: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<InlineImageRecord>,
    #[serde(default)]
    prompt: String,
    #[serde(default)]
    response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    annotations: Option<AnnotationFields>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InlineImageRecord {
    width: u32,
    height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pixels_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pixels: Option<Vec<u8>>,
}

/// Flat annotation fields shared by sidecar records and embedded manifest
/// annotations. Counts are signed so negative inputs surface as validation
/// errors rather than parse errors.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationFields {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    perplexity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ocr_token_count: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    object_count: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    loss_small: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    loss_mid: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    loss_large: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coherent: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hallucination: Option<bool>,
}

impl AnnotationFields {
    fn from_set(set: &AnnotationSet) -> Self {
        AnnotationFields {
            perplexity: set.perplexity,
            ocr_token_count: set.ocr_token_count.map(|v| v as i64),
            object_count: set.object_count.map(|v| v as i64),
            loss_small: set.loss(ModelTier::Small),
            loss_mid: set.loss(ModelTier::Mid),
            loss_large: set.loss(ModelTier::Large),
            coherent: set.judge_verdict.map(|j| j.coherent),
            hallucination: set.judge_verdict.map(|j| j.hallucination),
        }
    }

    fn into_set(self, id: &str) -> Result<AnnotationSet> {
        let bad = |message: String| Error::InvalidAnnotation {
            id: id.to_string(),
            message,
        };
        let count = |name: &str, v: Option<i64>| -> Result<Option<u64>> {
            match v {
                Some(n) if n < 0 => Err(bad(format!("{name} must be >= 0, got {n}"))),
                Some(n) => Ok(Some(n as u64)),
                None => Ok(None),
            }
        };
        let judge_verdict = match (self.coherent, self.hallucination) {
            (Some(coherent), Some(hallucination)) => Some(JudgeVerdict {
                coherent,
                hallucination,
            }),
            (None, None) => None,
            _ => return Err(bad("coherent and hallucination must be given together".into())),
        };
        let mut model_losses = BTreeMap::new();
        for (tier, loss) in [
            (ModelTier::Small, self.loss_small),
            (ModelTier::Mid, self.loss_mid),
            (ModelTier::Large, self.loss_large),
        ] {
            if let Some(loss) = loss {
                model_losses.insert(tier, loss);
            }
        }
        let set = AnnotationSet {
            perplexity: self.perplexity,
            ocr_token_count: count("ocr_token_count", self.ocr_token_count)?,
            object_count: count("object_count", self.object_count)?,
            model_losses,
            judge_verdict,
        };
        set.validate(id)?;
        Ok(set)
    }
}

impl SampleRecord {
    fn from_sample(sample: &Sample) -> Self {
        let (image_path, image) = match &sample.image {
            None => (None, None),
            Some(ImageRef::File(p)) => (Some(p.clone()), None),
            Some(ImageRef::Raw {
                width,
                height,
                pixels_path,
            }) => (
                None,
                Some(InlineImageRecord {
                    width: *width,
                    height: *height,
                    pixels_path: Some(pixels_path.clone()),
                    pixels: None,
                }),
            ),
            Some(ImageRef::Inline { width, height, pixels }) => (
                None,
                Some(InlineImageRecord {
                    width: *width,
                    height: *height,
                    pixels_path: None,
                    pixels: Some(pixels.clone()),
                }),
            ),
        };
        SampleRecord {
            id: sample.id.clone(),
            image_path,
            image,
            prompt: sample.prompt.clone(),
            response: sample.response.clone(),
            annotations: (!sample.annotations.is_empty())
                .then(|| AnnotationFields::from_set(&sample.annotations)),
        }
    }

    fn into_sample(self, base_dir: &Path) -> std::result::Result<Sample, String> {
        let resolve = |p: PathBuf| -> PathBuf {
            if p.as_os_str().is_empty() || p.is_absolute() {
                p
            } else {
                std::path::absolute(base_dir.join(&p)).unwrap_or_else(|_| base_dir.join(p))
            }
        };
        let image = match (self.image_path, self.image) {
            (Some(_), Some(_)) => return Err("both image_path and image are set".into()),
            (Some(p), None) => Some(ImageRef::File(resolve(p))),
            (None, Some(img)) => match (img.pixels_path, img.pixels) {
                (Some(p), None) => Some(ImageRef::Raw {
                    width: img.width,
                    height: img.height,
                    pixels_path: resolve(p),
                }),
                (None, Some(pixels)) => Some(ImageRef::Inline {
                    width: img.width,
                    height: img.height,
                    pixels,
                }),
                _ => return Err("image needs exactly one of pixels_path or pixels".into()),
            },
            (None, None) => None,
        };
        let annotations = match self.annotations {
            Some(fields) => fields.into_set(&self.id).map_err(|e| e.to_string())?,
            None => AnnotationSet::default(),
        };
        Ok(Sample {
            id: self.id,
            image,
            prompt: self.prompt,
            response: self.response,
            annotations,
        })
    }
}

/// Loads a manifest. Relative image paths are resolved against the
/// manifest's directory and stored as absolute paths.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let base_dir = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&text, &stem, path, base_dir)
}

/// Parses manifest text. `origin` is used only for error messages.
pub fn parse_manifest(text: &str, default_name: &str, origin: &Path, base_dir: &Path) -> Result<DatasetManifest> {
    let malformed = |line: usize, message: String| Error::MalformedRecord {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut manifest = DatasetManifest::new(default_name, Vec::new());
    let mut seen = HashSet::new();
    let mut first_record = true;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(raw).map_err(|e| malformed(line_no, e.to_string()))?;
        if first_record && value.get("dataset").is_some() {
            first_record = false;
            let header: HeaderRecord =
                serde_json::from_value(value).map_err(|e| malformed(line_no, e.to_string()))?;
            manifest.name = header.dataset.name;
            manifest.category = header.dataset.category;
            manifest.source_note = header.dataset.source_note;
            continue;
        }
        first_record = false;
        let record: SampleRecord =
            serde_json::from_value(value).map_err(|e| malformed(line_no, e.to_string()))?;
        let sample = record.into_sample(base_dir).map_err(|m| malformed(line_no, m))?;
        sample.validate().map_err(|e| malformed(line_no, e.to_string()))?;
        if !seen.insert(sample.id.clone()) {
            return Err(Error::DuplicateId {
                path: origin.to_path_buf(),
                line: line_no,
                id: sample.id,
            });
        }
        manifest.samples.push(sample);
    }
    if manifest.samples.is_empty() {
        return Err(Error::EmptyManifest(manifest.name));
    }
    Ok(manifest)
}

pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, manifest.to_jsonl()?).map_err(|e| Error::io(path, e))
}

/// One sidecar line.
#[derive(Clone, Debug)]
pub struct SidecarEntry {
    pub id: String,
    pub annotations: AnnotationSet,
    pub category: Option<String>,
}

#[derive(Clone, Debug, Default)]
pub struct Sidecar {
    pub entries: Vec<SidecarEntry>,
}

#[derive(Deserialize)]
struct SidecarLine {
    id: String,
    #[serde(default)]
    category: Option<String>,
    #[serde(flatten)]
    fields: serde_json::Map<String, serde_json::Value>,
}

impl Sidecar {
    /// Per-sample category labels present in the sidecar, keyed by id.
    pub fn labels(&self) -> BTreeMap<String, String> {
        self.entries
            .iter()
            .filter_map(|e| e.category.clone().map(|c| (e.id.clone(), c)))
            .collect()
    }

    pub fn extend(&mut self, other: Sidecar) {
        self.entries.extend(other.entries);
    }

    pub fn ids(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.id.as_str()).collect()
    }
}

pub fn load_sidecar(path: impl AsRef<Path>) -> Result<Sidecar> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sidecar(&text, path)
}

pub fn parse_sidecar(text: &str, origin: &Path) -> Result<Sidecar> {
    let mut sidecar = Sidecar::default();
    for (idx, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedRecord {
            path: origin.to_path_buf(),
            line: idx + 1,
            message,
        };
        let line: SidecarLine = serde_json::from_str(raw).map_err(|e| malformed(e.to_string()))?;
        let fields: AnnotationFields = serde_json::from_value(serde_json::Value::Object(line.fields))
            .map_err(|e| malformed(e.to_string()))?;
        let annotations = fields.into_set(&line.id)?;
        sidecar.entries.push(SidecarEntry {
            id: line.id,
            annotations,
            category: line.category,
        });
    }
    Ok(sidecar)
}

/// Result of merging a sidecar into a manifest.
#[derive(Clone, Debug)]
pub struct AttachOutcome {
    pub manifest: DatasetManifest,
    /// Sidecar ids with no matching sample.
    pub unmatched: Vec<String>,
}

impl AttachOutcome {
    pub fn warnings(&self) -> Vec<String> {
        self.unmatched
            .iter()
            .map(|id| format!("sidecar id {id:?} does not match any sample in {:?}", self.manifest.name))
            .collect()
    }
}

pub fn attach_sidecar(manifest: &DatasetManifest, sidecar: &Sidecar) -> AttachOutcome {
    let mut manifest = manifest.clone();
    let index: std::collections::HashMap<&str, usize> = manifest
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    let mut updates: Vec<(usize, &AnnotationSet)> = Vec::new();
    let mut unmatched = Vec::new();
    for entry in &sidecar.entries {
        match index.get(entry.id.as_str()) {
            Some(&i) => updates.push((i, &entry.annotations)),
            None => unmatched.push(entry.id.clone()),
        }
    }
    for (i, set) in updates {
        manifest.samples[i].annotations.merge(set);
    }
    AttachOutcome { manifest, unmatched }
}

/// Loads `sidecar` and merges it into `manifest`.
pub fn attach_annotations(manifest: &DatasetManifest, sidecar: impl AsRef<Path>) -> Result<AttachOutcome> {
    let sidecar = load_sidecar(sidecar)?;
    Ok(attach_sidecar(manifest, &sidecar))
}

/// Splits a manifest into category-homogeneous manifests.
///
/// Category sources in priority order: the manifest's own category, a
/// dataset-name label map, then per-sample labels. With per-sample labels
/// the output holds one manifest per category present (in category order),
/// named `<name>.<category>` when more than one category occurs.
pub fn categorize(
    manifest: &DatasetManifest,
    label_map: Option<&BTreeMap<String, String>>,
    per_sample_labels: Option<&BTreeMap<String, String>>,
) -> Result<Vec<DatasetManifest>> {
    if manifest.category.is_some() {
        return Ok(vec![manifest.clone()]);
    }
    if let Some(label) = label_map.and_then(|m| m.get(&manifest.name)) {
        let category: TaskCategory = label.parse()?;
        return Ok(vec![manifest.clone().with_category(category)]);
    }
    let Some(labels) = per_sample_labels else {
        return Err(Error::NoCategorySource(manifest.name.clone()));
    };
    let mut groups: BTreeMap<TaskCategory, Vec<Sample>> = BTreeMap::new();
    for sample in &manifest.samples {
        let label = labels
            .get(&sample.id)
            .ok_or_else(|| Error::NoCategorySource(format!("{}:{}", manifest.name, sample.id)))?;
        let category: TaskCategory = label.parse()?;
        groups.entry(category).or_default().push(sample.clone());
    }
    let split = groups.len() > 1;
    Ok(groups
        .into_iter()
        .map(|(category, samples)| DatasetManifest {
            name: if split {
                format!("{}.{}", manifest.name, category)
            } else {
                manifest.name.clone()
            },
            category: Some(category),
            samples,
            source_note: manifest.source_note.clone(),
        })
        .collect())
}

/// Draws up to `count` samples for manual inspection, returned in manifest
/// order. The subset size is a caller decision; there is no default.
pub fn inspection_sample(manifest: &DatasetManifest, count: usize, seed: u64) -> Vec<&Sample> {
    let n = manifest.samples.len();
    let count = count.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, n, count).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| &manifest.samples[i]).collect()
}
