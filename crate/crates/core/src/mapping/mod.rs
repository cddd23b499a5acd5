//! Weight matrices to crossbar tiles and back.
//!
//! A layer's unrolled weights go through, in order: optional compaction of
//! pruned structure, optional column rearrangement, partition into padded
//! `n x n` tiles, and magnitude-to-conductance encoding with the sign kept
//! digitally. Decoding runs the same chain backwards.

mod pipeline;
mod rearrange;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::circuit::{ConductanceTile, CrossbarParams};
use crate::error::{Error, Result};
use crate::pruning::Compaction;
use crate::tiling::{self, Placement};

pub use pipeline::{simulate_layer, LayerOptions, LayerResult};
pub use rearrange::{column_metric, rearrange_columns, Arrangement};

pub type WeightMatrix = Array2<f64>;
pub type Signs = Array2<i8>;

fn sign_of(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// `G = g_min + |W| / w_scale * (g_max - g_min)`, sign kept separately.
/// Zero and padded weights land exactly on `g_min`.
pub fn weights_to_conductances(
    w_tile: &Array2<f64>,
    w_scale: f64,
    params: &CrossbarParams,
) -> Result<(ConductanceTile, Signs)> {
    if !(w_scale > 0.0 && w_scale.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "w_scale = {w_scale} must be > 0"
        )));
    }
    let span = params.g_max - params.g_min;
    let mut signs = Signs::zeros(w_tile.dim());
    let mut g = Array2::zeros(w_tile.dim());
    for ((idx, &w), s) in w_tile.indexed_iter().zip(signs.iter_mut()) {
        if !w.is_finite() {
            return Err(Error::NonFinite(format!("weight at {idx:?}")));
        }
        let mag = w.abs();
        if mag > w_scale {
            return Err(Error::InvalidParam(format!(
                "|w| = {mag} at {idx:?} exceeds w_scale = {w_scale}"
            )));
        }
        *s = sign_of(w);
        g[idx] = if mag == w_scale {
            params.g_max
        } else {
            params.g_min + mag / w_scale * span
        };
    }
    Ok((ConductanceTile(g), signs))
}

/// Inverse affine map applied to (possibly non-ideal) conductances. The sign
/// is reapplied afterwards; sign-0 positions decode to exactly 0.
pub fn conductances_to_weights(
    g_eff: &Array2<f64>,
    signs: &Signs,
    w_scale: f64,
    params: &CrossbarParams,
) -> Result<Array2<f64>> {
    if g_eff.dim() != signs.dim() {
        return Err(Error::dims(
            format!("{:?}", signs.dim()),
            format!("{:?}", g_eff.dim()),
        ));
    }
    let span = params.g_max - params.g_min;
    Ok(Array2::from_shape_fn(g_eff.dim(), |idx| match signs[idx] {
        0 => 0.0,
        s => (g_eff[idx] - params.g_min) / span * w_scale * f64::from(s),
    }))
}

/// Everything needed to take a mapped layer back to its original layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingRecord {
    pub rows: usize,
    pub cols: usize,
    pub tile_size: usize,
    pub w_scale: f64,
    /// Padding of the last row/column block when the layer is tiled on a
    /// plain grid; per-tile padding follows from the placements.
    pub row_pad: usize,
    pub col_pad: usize,
    /// Placements in staged (compacted, then rearranged) coordinates.
    pub tile_placements: Vec<Placement>,
    /// `column_permutation[k]` is the staged column placed at position `k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column_permutation: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pruning_compaction: Option<Compaction>,
}

impl MappingRecord {
    pub fn staged_shape(&self) -> (usize, usize) {
        match &self.pruning_compaction {
            Some(c) => c.staged_shape(),
            None => (self.rows, self.cols),
        }
    }

    /// Builds the record for `w`, returning it with the staged-and-arranged
    /// matrix the placements index into.
    pub fn plan(
        w: &WeightMatrix,
        n: usize,
        compaction: Option<&Compaction>,
        arrangement: Option<Arrangement>,
    ) -> Result<(MappingRecord, WeightMatrix)> {
        if n == 0 {
            return Err(Error::InvalidParam("tile size must be >= 1".into()));
        }
        if w.is_empty() {
            return Err(Error::InvalidParam("cannot map an empty matrix".into()));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("weight matrix".into()));
        }
        let staged = match compaction {
            Some(c) => c.stage(w)?,
            None => w.clone(),
        };
        let (arranged, permutation) = match arrangement {
            Some(a) => {
                let (m, p) = rearrange::arrange(&staged, a);
                (m, Some(p))
            }
            None => (staged, None),
        };
        let (sr, sc) = arranged.dim();
        let placements = match compaction {
            Some(c) => c.placements(n, permutation.as_deref())?,
            None => tiling::grid(sr, sc, n),
        };
        let w_scale = w.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let record = MappingRecord {
            rows: w.nrows(),
            cols: w.ncols(),
            tile_size: n,
            w_scale: if w_scale > 0.0 { w_scale } else { 1.0 },
            row_pad: sr.div_ceil(n) * n - sr,
            col_pad: sc.div_ceil(n) * n - sc,
            tile_placements: placements,
            column_permutation: permutation,
            pruning_compaction: compaction.cloned(),
        };
        Ok((record, arranged))
    }

    /// Weight sub-matrix of every tile, zero padded.
    pub fn tiles(&self, arranged: &WeightMatrix) -> Vec<WeightMatrix> {
        self.tile_placements
            .iter()
            .map(|p| tiling::gather(arranged, p, self.tile_size))
            .collect()
    }
}

/// Plain grid partition into zero-padded `n x n` tiles.
pub fn partition(w: &WeightMatrix, n: usize) -> Result<(Vec<WeightMatrix>, MappingRecord)> {
    let (record, arranged) = MappingRecord::plan(w, n, None, None)?;
    Ok((record.tiles(&arranged), record))
}

/// Reassembles per-tile weights into the original layer layout: padding is
/// dropped, the column permutation undone and compacted structure restored
/// as zeros.
pub fn recombine(tiles: &[WeightMatrix], record: &MappingRecord) -> Result<WeightMatrix> {
    if tiles.len() != record.tile_placements.len() {
        return Err(Error::dims(
            format!("{} tiles", record.tile_placements.len()),
            tiles.len().to_string(),
        ));
    }
    let n = record.tile_size;
    let mut arranged = Array2::zeros(record.staged_shape());
    for (t, p) in tiles.iter().zip(&record.tile_placements) {
        if t.dim() != (n, n) {
            return Err(Error::dims(
                format!("{n}x{n} tile"),
                format!("{:?}", t.dim()),
            ));
        }
        if p.rows.iter().any(|&r| r >= arranged.nrows())
            || p.cols.iter().any(|&c| c >= arranged.ncols())
        {
            return Err(Error::InvalidParam(
                "placement outside the staged matrix".into(),
            ));
        }
        tiling::scatter(&mut arranged, p, t);
    }
    let staged = match &record.column_permutation {
        Some(perm) => rearrange::unpermute(&arranged, perm)?,
        None => arranged,
    };
    match &record.pruning_compaction {
        Some(c) => c.unstage(&staged),
        None => Ok(staged),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pruning::{Mask, PruneMethod};
    use crate::rng;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> WeightMatrix {
        let mut r = rng::stream(seed, &[]);
        Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0))
    }

    #[test]
    fn encoding_endpoints() {
        let p = CrossbarParams::default();
        let w = array![[0.0, 2.0, -2.0, 1.0]];
        let (g, s) = weights_to_conductances(&w, 2.0, &p).unwrap();
        assert_eq!(g.0[[0, 0]], p.g_min);
        assert_eq!(g.0[[0, 1]], p.g_max);
        assert_eq!(g.0[[0, 2]], p.g_max);
        assert!((g.0[[0, 3]] - 2.75e-5).abs() < 1e-18);
        assert_eq!(s, array![[0, 1, -1, 1]]);
        assert!(g.is_programmable(&p));
    }

    #[test]
    fn encoding_rejects_bad_scale() {
        let p = CrossbarParams::default();
        let w = array![[0.5]];
        assert!(weights_to_conductances(&w, 0.0, &p).is_err());
        assert!(weights_to_conductances(&w, -1.0, &p).is_err());
        assert!(weights_to_conductances(&w, 0.25, &p).is_err());
    }

    #[test]
    fn decoding_round_trip_and_zero_sign() {
        let p = CrossbarParams::default();
        let w = array![[0.0, 0.3, -0.7], [1.0, -1.0, 0.01]];
        let (g, s) = weights_to_conductances(&w, 1.0, &p).unwrap();
        let back = conductances_to_weights(&g.0, &s, 1.0, &p).unwrap();
        for (a, b) in back.iter().zip(&w) {
            assert!((a - b).abs() <= 1e-15);
        }
        assert_eq!(back[[0, 0]], 0.0);
    }

    #[test]
    fn decoding_below_g_min_flips_magnitude() {
        // the 1x1 series circuit attenuates g_max to 1/(1/g + 2 kOhm)
        let p = CrossbarParams::default();
        let g_eff = 1.0 / (1.0 / p.g_min + 2e3);
        let out = conductances_to_weights(&array![[g_eff]], &array![[-1i8]], 0.5, &p).unwrap();
        let expect = -((g_eff - p.g_min) / (p.g_max - p.g_min) * 0.5);
        assert_eq!(out[[0, 0]], expect);
        assert!(out[[0, 0]] > 0.0);
    }

    #[test]
    fn partition_examples() {
        let (t, r) = partition(&random(4, 6, 1), 2).unwrap();
        assert_eq!(t.len(), 6);
        assert_eq!((r.row_pad, r.col_pad), (0, 0));
        let (t, r) = partition(&random(5, 5, 2), 4).unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!((r.row_pad, r.col_pad), (3, 3));
        assert_eq!(t[3][[1, 0]], 0.0);
        let (t, r) = partition(&random(64, 64, 3), 64).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!((r.row_pad, r.col_pad), (0, 0));
        assert!(partition(&Array2::zeros((0, 3)), 4).is_err());
    }

    #[test]
    fn recombine_rejects_mismatched_tiles() {
        let (mut t, r) = partition(&random(4, 4, 1), 2).unwrap();
        t.pop();
        assert!(recombine(&t, &r).is_err());
    }

    #[test]
    fn cf_compaction_round_trip_restores_zeros() {
        let mut mask = Mask::from_elem((6, 5), true);
        mask.column_mut(2).fill(false);
        mask.row_mut(4).fill(false);
        let mut w = random(6, 5, 4);
        crate::pruning::apply_mask(&mut w, &mask).unwrap();
        let c = Compaction::from_mask(PruneMethod::Cf, &mask, 2).unwrap();
        let (rec, arranged) =
            MappingRecord::plan(&w, 2, Some(&c), Some(Arrangement::Ascending)).unwrap();
        assert_eq!(arranged.dim(), (5, 4));
        let back = recombine(&rec.tiles(&arranged), &rec).unwrap();
        assert_eq!(back, w);
        assert!(back.column(2).iter().all(|x| *x == 0.0));
    }

    proptest! {
        #[test]
        fn round_trip_any_layout(
            rows in 1usize..20,
            cols in 1usize..20,
            n in 1usize..8,
            seed in any::<u64>(),
            compaction_kind in 0usize..3,
            rearrange in any::<bool>(),
        ) {
            let w0 = random(rows, cols, seed);
            let mut r = rng::stream(seed, &[99]);
            let mask = Mask::from_shape_fn((rows, cols), |_| r.random_bool(0.7));
            let method = [PruneMethod::Cf, PruneMethod::Xcs, PruneMethod::Xrs][compaction_kind];
            let mut w = w0.clone();
            crate::pruning::apply_mask(&mut w, &mask).unwrap();
            let c = Compaction::from_mask(method, &mask, n).unwrap();
            let arrangement = (rearrange && method != PruneMethod::Xrs).then_some(Arrangement::Ascending);
            let (rec, arranged) = MappingRecord::plan(&w, n, Some(&c), arrangement).unwrap();
            let back = recombine(&rec.tiles(&arranged), &rec).unwrap();
            prop_assert_eq!(back, w);
        }

        #[test]
        fn encoding_round_trip_is_scale_invariant(scale in 1e-6f64..1e6, seed in any::<u64>()) {
            let p = CrossbarParams::default();
            let w = random(4, 4, seed).mapv(|x| x * scale);
            let ws = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let (g, s) = weights_to_conductances(&w, ws, &p).unwrap();
            let back = conductances_to_weights(&g.0, &s, ws, &p).unwrap();
            for (a, b) in back.iter().zip(&w) {
                prop_assert!((a - b).abs() <= 1e-12 * ws);
            }
        }
    }
}
