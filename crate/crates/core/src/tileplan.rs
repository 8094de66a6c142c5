//! Dynamic-resolution tiling: token-cell snapping, encoder tile grids with
//! zero padding and masking, and token budgets of fixed-resize comparators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResolutionConfig {
    pub patch_size: u32,
    pub pixel_shuffle_ratio: u32,
    pub encoder_input: u32,
    pub max_tiles: u32,
    /// Round each dimension up to the next cell multiple instead of to the
    /// nearest one.
    pub pad_up_only: bool,
    /// Adds a thumbnail tile to the fixed-multiple-grid comparator.
    pub grid_thumbnail: bool,
}

impl Default for ResolutionConfig {
    fn default() -> Self {
        ResolutionConfig {
            patch_size: 16,
            pixel_shuffle_ratio: 2,
            encoder_input: 384,
            max_tiles: 24,
            pad_up_only: false,
            grid_thumbnail: false,
        }
    }
}

impl ResolutionConfig {
    /// Side of the pixel square that becomes one visual token.
    pub fn token_cell(&self) -> u32 {
        self.patch_size * self.pixel_shuffle_ratio
    }

    /// Tokens per side of one encoder tile.
    pub fn tile_side_tokens(&self) -> u32 {
        self.encoder_input / self.token_cell()
    }

    pub fn tokens_per_tile(&self) -> u64 {
        let side = self.tile_side_tokens() as u64;
        side * side
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.pixel_shuffle_ratio == 0 || self.max_tiles == 0 {
            return Err(Error::Config("patch_size, pixel_shuffle_ratio and max_tiles must be >= 1".into()));
        }
        let cell = self.patch_size.checked_mul(self.pixel_shuffle_ratio).ok_or_else(|| Error::Config("token cell overflows".into()))?;
        if self.encoder_input == 0 || !self.encoder_input.is_multiple_of(cell) {
            return Err(Error::Config(format!(
                "encoder_input {} must be a positive multiple of the token cell {cell}",
                self.encoder_input
            )));
        }
        Ok(())
    }
}

fn snap_one(d: u32, cell: u32, up: bool) -> u32 {
    let (d, c) = (d as u64, cell as u64);
    let k = if up { d.div_ceil(c) } else { (2 * d + c) / (2 * c) };
    (k.max(1) * c) as u32
}

/// Rounds each dimension to the nearest token-cell multiple, at least one cell.
pub fn snap_dims(width: u32, height: u32, cfg: &ResolutionConfig) -> Result<(u32, u32)> {
    cfg.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput(format!("image dimensions must be >= 1, got {width}x{height}")));
    }
    let cell = cfg.token_cell();
    Ok((snap_one(width, cell, cfg.pad_up_only), snap_one(height, cell, cfg.pad_up_only)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub original: (u32, u32),
    /// Dimensions after any downscale, before snapping.
    pub resized: (u32, u32),
    pub snapped: (u32, u32),
    /// Retained tokens per row and column.
    pub token_grid: (u32, u32),
    pub tile_grid: (u32, u32),
    pub canvas: (u32, u32),
    pub retained_tokens: u64,
    pub padded_tokens: u64,
    pub downscaled: bool,
    tile_side_tokens: u32,
}

impl TilePlan {
    pub fn tiles(&self) -> u32 {
        self.tile_grid.0 * self.tile_grid.1
    }

    pub fn capacity(&self) -> u64 {
        self.retained_tokens + self.padded_tokens
    }

    /// Token-grid shape of the padded canvas, (columns, rows).
    pub fn mask_shape(&self) -> (u32, u32) {
        (self.tile_grid.0 * self.tile_side_tokens, self.tile_grid.1 * self.tile_side_tokens)
    }

    /// True for token cells covering image content; content sits at the top-left
    /// and padding fills the right and bottom.
    pub fn is_attended(&self, col: u32, row: u32) -> bool {
        col < self.token_grid.0 && row < self.token_grid.1
    }

    /// Row-major attention mask over the padded canvas.
    pub fn attention_mask(&self) -> Vec<Vec<bool>> {
        let (cols, rows) = self.mask_shape();
        (0..rows).map(|r| (0..cols).map(|c| self.is_attended(c, r)).collect()).collect()
    }
}

fn grid_for(snapped: (u32, u32), cfg: &ResolutionConfig) -> (u32, u32) {
    (snapped.0.div_ceil(cfg.encoder_input), snapped.1.div_ceil(cfg.encoder_input))
}

fn scaled_dims(width: u32, height: u32, long_side: u32) -> (u32, u32) {
    let long = width.max(height) as u64;
    let scale = |d: u32| (((2 * d as u64 * long_side as u64 + long) / (2 * long)).max(1)) as u32;
    (scale(width), scale(height))
}

fn tile_count(dims: (u32, u32), cfg: &ResolutionConfig) -> Result<u64> {
    let snapped = snap_dims(dims.0, dims.1, cfg)?;
    let g = grid_for(snapped, cfg);
    Ok(g.0 as u64 * g.1 as u64)
}

/// Tiles an image, downscaling it uniformly when its grid exceeds the tile cap.
pub fn plan(width: u32, height: u32, cfg: &ResolutionConfig) -> Result<TilePlan> {
    let mut dims = (width, height);
    let mut snapped = snap_dims(width, height, cfg)?;
    let mut grid = grid_for(snapped, cfg);
    let downscaled = grid.0 as u64 * grid.1 as u64 > cfg.max_tiles as u64;
    if downscaled {
        // largest long side whose snapped grid fits; tile count is monotone in it
        let (mut lo, mut hi) = (1u32, width.max(height));
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            if tile_count(scaled_dims(width, height, mid), cfg)? <= cfg.max_tiles as u64 {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        dims = scaled_dims(width, height, lo);
        snapped = snap_dims(dims.0, dims.1, cfg)?;
        grid = grid_for(snapped, cfg);
        if grid.0 as u64 * grid.1 as u64 > cfg.max_tiles as u64 {
            return Err(Error::InvalidInput(format!(
                "{width}x{height} cannot fit within {} tiles at any scale",
                cfg.max_tiles
            )));
        }
    }
    let cell = cfg.token_cell();
    let token_grid = (snapped.0 / cell, snapped.1 / cell);
    let retained = token_grid.0 as u64 * token_grid.1 as u64;
    let capacity = grid.0 as u64 * grid.1 as u64 * cfg.tokens_per_tile();
    Ok(TilePlan {
        original: (width, height),
        resized: dims,
        snapped,
        token_grid,
        tile_grid: grid,
        canvas: (grid.0 * cfg.encoder_input, grid.1 * cfg.encoder_input),
        retained_tokens: retained,
        padded_tokens: capacity - retained,
        downscaled,
        tile_side_tokens: cfg.tile_side_tokens(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Magicvl,
    FixedMultipleGrid,
    FixedWidthGrid,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Magicvl, Scheme::FixedMultipleGrid, Scheme::FixedWidthGrid];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Magicvl => "magicvl",
            Scheme::FixedMultipleGrid => "fixed_multiple_grid",
            Scheme::FixedWidthGrid => "fixed_width_grid",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.as_str() == s.replace('-', "_"))
            .ok_or_else(|| Error::InvalidInput(format!("unknown scheme {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub scheme: Scheme,
    pub resized: (u32, u32),
    pub tiles: u32,
    pub tokens: u64,
}

/// Grid whose aspect ratio is closest to the image's. Among equally close
/// grids the smallest one whose canvas covers the image wins, or the largest
/// grid when none covers it.
fn closest_grid(width: u32, height: u32, cfg: &ResolutionConfig) -> (u32, u32) {
    let (w, h) = (width as u128, height as u128);
    let side = cfg.encoder_input as u64;
    let mut best: Option<((u32, u32), u128)> = None;
    let covers = |g: (u32, u32)| g.0 as u64 * side >= width as u64 && g.1 as u64 * side >= height as u64;
    let area = |g: (u32, u32)| g.0 * g.1;
    for gh in 1..=cfg.max_tiles {
        for gw in 1..=cfg.max_tiles / gh {
            // |gw/gh - w/h| compared exactly as |gw*h - w*gh| / (gh*h); h is shared
            let num = (gw as u128 * h).abs_diff(w * gh as u128);
            let g = (gw, gh);
            let take = match best {
                None => true,
                Some((b, bnum)) => {
                    let lhs = num * b.1 as u128;
                    let rhs = bnum * gh as u128;
                    if lhs != rhs {
                        lhs < rhs
                    } else {
                        match (covers(g), covers(b)) {
                            (true, false) => true,
                            (false, true) => false,
                            (true, true) => area(g) < area(b),
                            (false, false) => area(g) > area(b),
                        }
                    }
                }
            };
            if take {
                best = Some((g, num));
            }
        }
    }
    best.expect("max_tiles >= 1").0
}

pub fn compare_schemes(width: u32, height: u32, cfg: &ResolutionConfig, scheme: Scheme) -> Result<TokenBudget> {
    cfg.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput(format!("image dimensions must be >= 1, got {width}x{height}")));
    }
    let side = cfg.encoder_input;
    let per_tile = cfg.tokens_per_tile();
    Ok(match scheme {
        Scheme::Magicvl => {
            let p = plan(width, height, cfg)?;
            TokenBudget {
                scheme,
                resized: p.snapped,
                tiles: p.tiles(),
                tokens: p.retained_tokens,
            }
        }
        Scheme::FixedMultipleGrid => {
            let (gw, gh) = closest_grid(width, height, cfg);
            let tiles = gw * gh + u32::from(cfg.grid_thumbnail);
            TokenBudget {
                scheme,
                resized: (gw * side, gh * side),
                tiles,
                tokens: tiles as u64 * per_tile,
            }
        }
        Scheme::FixedWidthGrid => {
            let gw = width.div_ceil(side).clamp(1, cfg.max_tiles);
            TokenBudget {
                scheme,
                resized: (gw * side, side),
                tiles: gw,
                tokens: gw as u64 * per_tile,
            }
        }
    })
}

/// Per-axis stretch of a resize: `max(a/b, b/a)` on each axis, multiplied.
pub fn aspect_distortion(original: (u32, u32), resized: (u32, u32)) -> f64 {
    let axis = |a: u32, b: u32| {
        let r = a as f64 / b as f64;
        r.max(1.0 / r)
    };
    axis(resized.0, original.0) * axis(resized.1, original.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> ResolutionConfig {
        ResolutionConfig::default()
    }

    #[test]
    fn snap_examples() {
        assert_eq!(snap_dims(940, 479, &cfg()).unwrap(), (928, 480));
        assert_eq!(snap_dims(384, 384, &cfg()).unwrap(), (384, 384));
        assert_eq!(snap_dims(10, 10, &cfg()).unwrap(), (32, 32));
        assert_eq!(snap_dims(16, 48, &cfg()).unwrap(), (32, 64));
        assert!(snap_dims(0, 10, &cfg()).is_err());
        let up = ResolutionConfig {
            pad_up_only: true,
            ..cfg()
        };
        assert_eq!(snap_dims(940, 479, &up).unwrap(), (960, 480));
    }

    #[test]
    fn plan_examples() {
        let p = plan(940, 479, &cfg()).unwrap();
        assert_eq!(p.tile_grid, (3, 2));
        assert_eq!(p.token_grid, (29, 15));
        assert_eq!(p.retained_tokens, 435);
        assert_eq!(p.padded_tokens, 429);
        assert_eq!(p.canvas, (1152, 768));
        assert!(!p.downscaled);
        let mask = p.attention_mask();
        assert_eq!(mask.len(), 24);
        assert_eq!(mask[0].len(), 36);
        assert_eq!(mask.iter().flatten().filter(|&&b| b).count(), 435);

        let p = plan(384, 384, &cfg()).unwrap();
        assert_eq!((p.tiles(), p.retained_tokens, p.padded_tokens), (1, 144, 0));

        let p = plan(10000, 384, &cfg()).unwrap();
        assert!(p.downscaled);
        assert!(p.tiles() <= 24);
        assert_eq!(p.tile_grid.1, 1);
    }

    #[test]
    fn downscale_picks_largest_fitting_size() {
        let c = cfg();
        let p = plan(10000, 384, &c).unwrap();
        let long = p.resized.0;
        assert!(tile_count(scaled_dims(10000, 384, long + 1), &c).unwrap() > 24);
    }

    #[test]
    fn scheme_examples() {
        let c = cfg();
        let grid = compare_schemes(940, 479, &c, Scheme::FixedMultipleGrid).unwrap();
        assert_eq!((grid.resized, grid.tiles, grid.tokens), ((1536, 768), 8, 1152));
        let width = compare_schemes(940, 479, &c, Scheme::FixedWidthGrid).unwrap();
        assert_eq!((width.resized, width.tiles, width.tokens), ((1152, 384), 3, 432));
        let ours = compare_schemes(940, 479, &c, Scheme::Magicvl).unwrap();
        assert_eq!(ours.tokens, 435);
        assert!((ours.tokens as f64 / grid.tokens as f64 - 0.3776).abs() < 1e-3);
        let thumb = ResolutionConfig {
            grid_thumbnail: true,
            ..c
        };
        assert_eq!(compare_schemes(940, 479, &thumb, Scheme::FixedMultipleGrid).unwrap().tokens, 1296);
        assert_eq!(compare_schemes(384, 384, &c, Scheme::FixedMultipleGrid).unwrap().resized, (384, 384));
    }

    #[test]
    fn scheme_names_parse() {
        assert_eq!("fixed-width-grid".parse::<Scheme>().unwrap(), Scheme::FixedWidthGrid);
        assert!("bogus".parse::<Scheme>().is_err());
    }

    #[test]
    fn config_validation() {
        let bad = ResolutionConfig {
            encoder_input: 400,
            ..cfg()
        };
        assert!(bad.validate().is_err());
        assert!(snap_dims(10, 10, &bad).is_err());
    }

    proptest! {
        #[test]
        fn plan_invariants(w in 1u32..20_000, h in 1u32..20_000) {
            let c = cfg();
            let p = plan(w, h, &c).unwrap();
            prop_assert!(p.tiles() <= c.max_tiles);
            prop_assert_eq!(p.retained_tokens + p.padded_tokens, p.tiles() as u64 * 144);
            prop_assert_eq!(p.snapped.0 % 32, 0);
            prop_assert_eq!(p.snapped.1 % 32, 0);
            prop_assert!(p.snapped.0 <= p.canvas.0 && p.snapped.1 <= p.canvas.1);
            let full = p.snapped.0.is_multiple_of(384) && p.snapped.1.is_multiple_of(384);
            prop_assert_eq!(p.padded_tokens == 0, full);
        }

        #[test]
        fn mask_is_top_left_rectangle(w in 1u32..1500, h in 1u32..1500) {
            let p = plan(w, h, &cfg()).unwrap();
            let mask = p.attention_mask();
            let mut count = 0u64;
            for (r, row) in mask.iter().enumerate() {
                for (c, &on) in row.iter().enumerate() {
                    prop_assert_eq!(on, (c as u32) < p.token_grid.0 && (r as u32) < p.token_grid.1);
                    count += on as u64;
                }
            }
            prop_assert_eq!(count, p.retained_tokens);
        }

        #[test]
        fn pad_up_covers_image(w in 1u32..5000, h in 1u32..5000) {
            let c = ResolutionConfig { pad_up_only: true, ..cfg() };
            let (sw, sh) = snap_dims(w, h, &c).unwrap();
            prop_assert!(sw >= w && sw - w < 32);
            prop_assert!(sh >= h && sh - h < 32);
        }

        #[test]
        fn grid_respects_tile_cap(w in 1u32..20_000, h in 1u32..20_000) {
            let b = compare_schemes(w, h, &cfg(), Scheme::FixedMultipleGrid).unwrap();
            prop_assert!(b.tiles <= 24);
            let b = compare_schemes(w, h, &cfg(), Scheme::FixedWidthGrid).unwrap();
            prop_assert!(b.tiles <= 24);
        }
    }
}
