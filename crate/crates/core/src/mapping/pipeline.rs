use rayon::prelude::*;

use super::{
    conductances_to_weights, recombine, weights_to_conductances, Arrangement, MappingRecord,
    WeightMatrix,
};
use crate::circuit::{
    self, apply_device_variation, extract_effective_conductance, nonideality_factor,
    CrossbarParams, LayerNf, NfReport, DEFAULT_NF_EPSILON,
};
use crate::error::{Error, Result};
use crate::pruning::Compaction;
use crate::rng;
use crate::tiling::Placement;

#[derive(Debug, Clone, Default)]
pub struct LayerOptions {
    pub arrangement: Option<Arrangement>,
    pub compaction: Option<Compaction>,
    pub master_seed: u64,
    /// Index of the layer in its model; part of every tile's random stream.
    pub layer_index: usize,
}

#[derive(Debug, Clone)]
pub struct LayerResult {
    /// Non-ideal weights `W'` in the original layout.
    pub weights: WeightMatrix,
    pub nf: LayerNf,
    pub record: MappingRecord,
}

/// Maps one layer onto non-ideal crossbars and reads back the weights the
/// hardware would effectively apply.
///
/// Each tile draws its device variation from a stream keyed by
/// `(master_seed, layer_index, row_block, col_block)`, so the result does not
/// depend on the order tiles are processed in. Tile NF uses `v_read` on the
/// rows that carry weights and 0 V on padding rows.
pub fn simulate_layer(
    w: &WeightMatrix,
    params: &CrossbarParams,
    opts: &LayerOptions,
) -> Result<LayerResult> {
    params.validate()?;
    if params.n_rows != params.n_cols {
        return Err(Error::InvalidParam(format!(
            "tiles must be square, got {}x{}",
            params.n_rows, params.n_cols
        )));
    }
    let n = params.n_rows;
    let (record, arranged) = MappingRecord::plan(w, n, opts.compaction.as_ref(), opts.arrangement)?;
    let tiles = record.tiles(&arranged);
    let out: Vec<(WeightMatrix, NfReport)> = tiles
        .par_iter()
        .zip(record.tile_placements.par_iter())
        .map(|(tile, placement)| simulate_tile(tile, placement, record.w_scale, params, opts))
        .collect::<Result<_>>()?;
    let (nonideal, reports): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    Ok(LayerResult {
        weights: recombine(&nonideal, &record)?,
        nf: LayerNf { tiles: reports },
        record,
    })
}

fn simulate_tile(
    tile: &WeightMatrix,
    placement: &Placement,
    w_scale: f64,
    params: &CrossbarParams,
    opts: &LayerOptions,
) -> Result<(WeightMatrix, NfReport)> {
    let (g, signs) = weights_to_conductances(tile, w_scale, params)?;
    let mut stream = rng::stream(
        opts.master_seed,
        &[
            rng::tag::VARIATION,
            opts.layer_index as u64,
            placement.row_block as u64,
            placement.col_block as u64,
        ],
    );
    let g_var = apply_device_variation(&g, params.sigma_dev, &mut stream)?;
    let g_eff = extract_effective_conductance(&g_var, params)?;
    let v: Vec<f64> = (0..params.n_rows)
        .map(|i| {
            if i < placement.rows.len() {
                params.v_read
            } else {
                0.0
            }
        })
        .collect();
    let ideal = circuit::mac(&g.0, &v)?;
    let actual = circuit::mac(&g_eff, &v)?;
    let nf = nonideality_factor(&ideal, &actual, DEFAULT_NF_EPSILON)?;
    Ok((
        conductances_to_weights(&g_eff, &signs, w_scale, params)?,
        nf,
    ))
}
