#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use serde_json::json;

const ADJECTIVES: [&str; 5] = ["red", "small", "wooden", "shiny", "quiet"];
const NOUNS: [&str; 5] = ["bicycle", "boat", "kettle", "lantern", "tractor"];
const SCENES: [&str; 8] = [
    "rests beside an old brick wall near the station",
    "stands under tall pine trees on a foggy morning",
    "sits on a kitchen counter next to fresh bread",
    "floats in calm harbor water at sunset",
    "waits outside a bakery on a busy street corner",
    "appears in the foreground while children play behind it",
    "leans against a fence covered with climbing roses",
    "is parked in front of a blue garage door",
];

/// 200 distinct single-sentence captions.
pub fn clean_sentences() -> Vec<String> {
    let mut out = Vec::with_capacity(200);
    for adj in ADJECTIVES {
        for noun in NOUNS {
            for scene in SCENES {
                out.push(format!("A {adj} {noun} {scene}."));
            }
        }
    }
    out
}

pub const GRAY_RUN: &str = "The background is mostly gray, but there's a lot of text. The background is mostly gray, but there's a lot of text. The background is mostly gray, but there's a lot of text.";

pub const GRAY_ANSWER: &str = "Screenshot that says segment, the, are, cust, product, pricing, docs, company, login, sign up, marketing, product, engineering, connections, protocols, personas, functions, warehouses, privacy, GDPR, catalog, use cases. The background is mostly gray, but there's white in the center. The outer background is like a darker blue. The background is mostly gray, but there's white in the center. The background is mostly gray, but there's a lot of text. The background is mostly gray, but there's a lot of text. The background is mostly gray, but there's a lot of text.";

pub const DOTS_RUN: &str = "dots, dots, dots, dots, dots, dots, dots, dots.";

pub const DOTS_ANSWER: &str = "Crispy, black background, then there are dots, dots, dots, dots, dots, dots, dots, dots. And there is yellow, it says old, parenthesis 6.3.24. The quick brown fox jumps over the lazy dog, I think it's font, so it's some kind of cursive font, gray, then there's a line, it's gray, it says the quick brown fox jumps over the lazy dog, the dot, and new, the text is 6.3.33, and so there are a lot of dots, dots, dots, dots, dots, and yeah, quick brown fox jumps over lazy dog, quick brown fox jumps over lazy dog, slightly updated font, a little thinner, and they're more distinct, the letters. And perhaps this is someone's advertisement for this one?";

fn write_png(path: &Path, width: u32, height: u32, levels: u32) {
    let img = GrayImage::from_fn(width, height, |x, y| Luma([(((x + 3 * y) % levels) * (255 / levels.max(1))) as u8]));
    img.save(path).unwrap();
}

pub struct Corpus {
    pub manifests: Vec<PathBuf>,
    pub sidecar: PathBuf,
}

struct DatasetSpec {
    name: &'static str,
    category: &'static str,
    hardness: f64,
    image: &'static str,
}

/// Four small datasets (two caption, two OCR) with PNG images, one repeated-text
/// sample and one hallucinated sample each, and a single sidecar for all.
pub fn write_corpus(dir: &Path) -> Corpus {
    let img_dir = dir.join("img");
    fs::create_dir_all(&img_dir).unwrap();
    write_png(&img_dir.join("a.png"), 640, 480, 4);
    write_png(&img_dir.join("b.png"), 1200, 300, 32);
    write_png(&img_dir.join("c.png"), 300, 900, 128);
    write_png(&img_dir.join("d.png"), 2000, 1500, 200);

    let specs = [
        DatasetSpec { name: "caption_plain", category: "caption", hardness: 0.1, image: "img/a.png" },
        DatasetSpec { name: "caption_dense", category: "caption", hardness: 0.7, image: "img/b.png" },
        DatasetSpec { name: "docs_receipts", category: "ocr", hardness: 0.4, image: "img/c.png" },
        DatasetSpec { name: "docs_forms", category: "ocr", hardness: 0.9, image: "img/d.png" },
    ];
    let sentences = clean_sentences();
    let mut manifests = Vec::new();
    let mut sidecar = String::new();
    for (d, spec) in specs.iter().enumerate() {
        let mut lines = vec![json!({"dataset": {"name": spec.name, "category": spec.category}}).to_string()];
        for i in 0..12 {
            let id = format!("{}-{i:02}", spec.name);
            let response = match i {
                10 => GRAY_RUN.to_string(),
                _ => {
                    let extra = if spec.hardness > 0.5 { format!(" {}", sentences[(d * 50 + i + 7) % 200]) } else { String::new() };
                    format!("{}{extra}", sentences[(d * 50 + i) % 200])
                }
            };
            lines.push(
                json!({"id": id, "image_path": spec.image, "prompt": "Describe the image.", "response": response}).to_string(),
            );
            let h = spec.hardness;
            let k = i as f64 / 12.0;
            sidecar.push_str(
                &json!({
                    "id": id,
                    "perplexity": 5.0 + 40.0 * h + k,
                    "ocr_token_count": (200.0 * h) as i64 + i as i64,
                    "object_count": 1 + (10.0 * h) as i64,
                    "loss_small": 1.0 + 2.0 * h + 0.1 * k,
                    "loss_mid": 1.0 + h,
                    "loss_large": 0.6 + 0.5 * h,
                    "coherent": true,
                    "hallucination": i == 11,
                })
                .to_string(),
            );
            sidecar.push('\n');
        }
        let path = dir.join(format!("{}.jsonl", spec.name));
        fs::write(&path, lines.join("\n") + "\n").unwrap();
        manifests.push(path);
    }
    let sidecar_path = dir.join("annotations.jsonl");
    fs::write(&sidecar_path, sidecar).unwrap();
    Corpus { manifests, sidecar: sidecar_path }
}

/// Every file under `root` keyed by its relative path.
pub fn snapshot_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    if root.exists() {
        walk(root, root, &mut out);
    }
    out
}
