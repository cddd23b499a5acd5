//! Structured sparsity fixed at initialization.
//!
//! Three crossbar-aware schemes are supported:
//!
//! * **C/F** prunes whole filters: a column of layer `l` and the matching
//!   group of unrolled input rows of layer `l + 1`.
//! * **XCS** prunes tile-aligned column segments of `n` rows.
//! * **XRS** prunes tile-aligned row segments of `n` columns.
//!
//! The first layer's inputs and the final classifier's outputs are never
//! pruned, and XCS/XRS leave the classifier layer dense.

mod compact;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tiling::blocks;

pub use compact::{compact_cf, compact_xcs, compact_xrs, compression_rate, tile_count, Compaction};

pub type Mask = Array2<bool>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneMethod {
    Cf,
    Xcs,
    Xrs,
}

impl fmt::Display for PruneMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PruneMethod::Cf => "cf",
            PruneMethod::Xcs => "xcs",
            PruneMethod::Xrs => "xrs",
        })
    }
}

impl FromStr for PruneMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cf" | "c/f" => Ok(PruneMethod::Cf),
            "xcs" => Ok(PruneMethod::Xcs),
            "xrs" => Ok(PruneMethod::Xrs),
            other => Err(Error::InvalidParam(format!(
                "unknown pruning method {other:?} (expected cf, xcs or xrs)"
            ))),
        }
    }
}

/// Shape of one trainable layer's unrolled weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerGeometry {
    pub rows: usize,
    pub cols: usize,
    /// Unrolled rows fed by each input channel (`k*k` for a convolution,
    /// `h*w` for a dense layer reading a flattened feature map).
    pub rows_per_channel: usize,
}

/// A pruning recipe and the masks it produces for a given model.
///
/// Only the recipe is serialized; masks are regenerated from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityPattern {
    pub method: PruneMethod,
    pub s: f64,
    pub seed: u64,
    /// Segment length for XCS/XRS.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile_size: Option<usize>,
    #[serde(skip)]
    pub masks: Vec<Mask>,
}

impl SparsityPattern {
    pub fn generate(
        geoms: &[LayerGeometry],
        method: PruneMethod,
        s: f64,
        seed: u64,
        tile_size: Option<usize>,
    ) -> Result<Self> {
        match method {
            PruneMethod::Cf => gen_mask_cf(geoms, s, seed),
            PruneMethod::Xcs | PruneMethod::Xrs => {
                let n = tile_size.ok_or_else(|| {
                    Error::InvalidParam(format!("{method} pruning needs a tile size"))
                })?;
                if method == PruneMethod::Xcs {
                    gen_mask_xcs(geoms, s, n, seed)
                } else {
                    gen_mask_xrs(geoms, s, n, seed)
                }
            }
        }
    }

    /// Rebuilds the masks, e.g. after deserializing the recipe.
    pub fn regenerate(&mut self, geoms: &[LayerGeometry]) -> Result<()> {
        let fresh = Self::generate(geoms, self.method, self.s, self.seed, self.tile_size)?;
        self.masks = fresh.masks;
        Ok(())
    }

    /// Fraction of weights that are pruned, over all layers.
    pub fn weight_sparsity(&self) -> f64 {
        let total: usize = self.masks.iter().map(|m| m.len()).sum();
        let zeros: usize = self
            .masks
            .iter()
            .map(|m| m.iter().filter(|k| !**k).count())
            .sum();
        if total == 0 {
            0.0
        } else {
            zeros as f64 / total as f64
        }
    }
}

fn check_ratio(s: f64) -> Result<()> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::InvalidParam(format!(
            "sparsity ratio s = {s} outside [0, 1)"
        )));
    }
    Ok(())
}

/// `floor(s * units)`, tolerant of products like `0.29 * 100 = 28.999...`.
pub fn pruned_units(s: f64, units: usize) -> usize {
    ((s * units as f64) + 1e-9).floor() as usize
}

fn sample(seed: u64, layer: usize, units: usize, k: usize) -> Result<Vec<usize>> {
    if units > 0 && k >= units {
        return Err(Error::InvalidParam(format!(
            "sparsity would prune all {units} units of layer {layer}"
        )));
    }
    let mut r = rng::stream(seed, &[rng::tag::MASK, layer as u64]);
    let mut picked = index::sample(&mut r, units, k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

fn ones(geoms: &[LayerGeometry]) -> Vec<Mask> {
    geoms
        .iter()
        .map(|g| Mask::from_elem((g.rows, g.cols), true))
        .collect()
}

pub fn gen_mask_cf(geoms: &[LayerGeometry], s: f64, seed: u64) -> Result<SparsityPattern> {
    check_ratio(s)?;
    let mut masks = ones(geoms);
    for l in 0..geoms.len().saturating_sub(1) {
        let (g, next) = (geoms[l], geoms[l + 1]);
        if next.rows != g.cols * next.rows_per_channel {
            return Err(Error::dims(
                format!(
                    "layer {} with {} x {} rows",
                    l + 1,
                    g.cols,
                    next.rows_per_channel
                ),
                format!("{} rows", next.rows),
            ));
        }
        let k = pruned_units(s, g.cols);
        for f in sample(seed, l, g.cols, k)? {
            masks[l].column_mut(f).fill(false);
            let rpc = next.rows_per_channel;
            for r in f * rpc..(f + 1) * rpc {
                masks[l + 1].row_mut(r).fill(false);
            }
        }
    }
    Ok(SparsityPattern {
        method: PruneMethod::Cf,
        s,
        seed,
        tile_size: None,
        masks,
    })
}

fn check_tile(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParam("segment length n must be >= 1".into()));
    }
    Ok(())
}

pub fn gen_mask_xcs(
    geoms: &[LayerGeometry],
    s: f64,
    n: usize,
    seed: u64,
) -> Result<SparsityPattern> {
    check_ratio(s)?;
    check_tile(n)?;
    let mut masks = ones(geoms);
    for (l, g) in geoms.iter().enumerate().take(geoms.len().saturating_sub(1)) {
        let row_blocks = blocks(g.rows, n);
        let count = row_blocks * g.cols;
        for seg in sample(seed, l, count, pruned_units(s, count))? {
            let (b, c) = (seg / g.cols, seg % g.cols);
            for r in b * n..((b + 1) * n).min(g.rows) {
                masks[l][[r, c]] = false;
            }
        }
    }
    Ok(SparsityPattern {
        method: PruneMethod::Xcs,
        s,
        seed,
        tile_size: Some(n),
        masks,
    })
}

pub fn gen_mask_xrs(
    geoms: &[LayerGeometry],
    s: f64,
    n: usize,
    seed: u64,
) -> Result<SparsityPattern> {
    check_ratio(s)?;
    check_tile(n)?;
    let mut masks = ones(geoms);
    for (l, g) in geoms.iter().enumerate().take(geoms.len().saturating_sub(1)) {
        let col_blocks = blocks(g.cols, n);
        let count = g.rows * col_blocks;
        for seg in sample(seed, l, count, pruned_units(s, count))? {
            let (r, b) = (seg / col_blocks, seg % col_blocks);
            for c in b * n..((b + 1) * n).min(g.cols) {
                masks[l][[r, c]] = false;
            }
        }
    }
    Ok(SparsityPattern {
        method: PruneMethod::Xrs,
        s,
        seed,
        tile_size: Some(n),
        masks,
    })
}

/// Zeroes every pruned entry.
pub fn apply_mask(w: &mut Array2<f64>, mask: &Mask) -> Result<()> {
    if w.dim() != mask.dim() {
        return Err(Error::dims(
            format!("{:?}", mask.dim()),
            format!("{:?}", w.dim()),
        ));
    }
    w.zip_mut_with(mask, |x, &keep| {
        if !keep {
            *x = 0.0;
        }
    });
    Ok(())
}
