//! Cross-modal task complexity from paired small/large model losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ModelTier};
use crate::scoring::ensure_unit;

/// Loss-gap thresholds. The defaults are toolkit choices; they are always
/// written into reports.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapConfig {
    pub beta: f64,
    pub delta: f64,
    /// Apply the floor to the raw large-model loss instead of `beta * loss_large`.
    #[serde(default)]
    pub delta_on_raw_large_loss: bool,
}

impl Default for GapConfig {
    fn default() -> Self {
        GapConfig {
            beta: 1.2,
            delta: 0.5,
            delta_on_raw_large_loss: false,
        }
    }
}

impl GapConfig {
    pub fn new(beta: f64, delta: f64) -> Result<Self> {
        let cfg = GapConfig {
            beta,
            delta,
            delta_on_raw_large_loss: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return Err(Error::Config(format!("beta must be finite and > 0, got {}", self.beta)));
        }
        if !self.delta.is_finite() || self.delta < 0.0 {
            return Err(Error::Config(format!("delta must be finite and >= 0, got {}", self.delta)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPair {
    pub small: f64,
    pub large: f64,
}

impl LossPair {
    pub fn new(small: f64, large: f64) -> Self {
        LossPair { small, large }
    }
}

/// `small > beta*large > delta`, both comparisons strict.
pub fn gap_indicator(pair: LossPair, cfg: &GapConfig) -> bool {
    let scaled = cfg.beta * pair.large;
    let floored = if cfg.delta_on_raw_large_loss { pair.large } else { scaled };
    pair.small > scaled && floored > cfg.delta
}

/// Fraction of pairs whose loss gap clears both the ratio and the floor.
pub fn pair_complexity(series: &[LossPair], cfg: &GapConfig) -> Result<f64> {
    cfg.validate()?;
    if series.is_empty() {
        return Err(Error::InvalidInput("empty loss series".into()));
    }
    for p in series {
        if !(p.small.is_finite() && p.large.is_finite() && p.small >= 0.0 && p.large >= 0.0) {
            return Err(Error::InvalidInput(format!("losses must be finite and >= 0, got {p:?}")));
        }
    }
    let hits = series.iter().filter(|p| gap_indicator(**p, cfg)).count();
    Ok(hits as f64 / series.len() as f64)
}

/// Per-sample losses of two tiers, in sample order.
pub fn loss_series(dataset: &DatasetManifest, smaller: ModelTier, larger: ModelTier) -> Result<Vec<LossPair>> {
    dataset
        .samples
        .iter()
        .map(|s| {
            let get = |tier: ModelTier| {
                s.annotations.loss(tier).ok_or_else(|| Error::MissingAnnotation {
                    id: s.id.clone(),
                    what: match tier {
                        ModelTier::Small => "small-model loss",
                        ModelTier::Mid => "mid-model loss",
                        ModelTier::Large => "large-model loss",
                    },
                })
            };
            Ok(LossPair::new(get(smaller)?, get(larger)?))
        })
        .collect()
}

pub fn task_score(c_small_mid: f64, c_mid_large: f64) -> Result<f64> {
    ensure_unit("small/mid loss-gap complexity", c_small_mid)?;
    ensure_unit("mid/large loss-gap complexity", c_mid_large)?;
    Ok((c_small_mid + c_mid_large) / 2.0)
}

/// Both loss-gap complexities of a dataset: (small vs mid, mid vs large).
pub fn dataset_gap_complexities(dataset: &DatasetManifest, cfg: &GapConfig) -> Result<(f64, f64)> {
    let lower = pair_complexity(&loss_series(dataset, ModelTier::Small, ModelTier::Mid)?, cfg)?;
    let upper = pair_complexity(&loss_series(dataset, ModelTier::Mid, ModelTier::Large)?, cfg)?;
    Ok((lower, upper))
}
