use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Variant};
use super::report::ReportRow;
use crate::circuit::{CrossbarParams, LayerNf};
use crate::error::{Error, Result};
use crate::mapping::{simulate_layer, Arrangement, LayerOptions, MappingRecord, WeightMatrix};
use crate::nn::{evaluate, inject_nonideal_weights, train, wct_train, Dataset, Model};
use crate::pruning::{compression_rate, Compaction, PruneMethod, SparsityPattern};

/// Per-layer result of mapping a whole model onto crossbars.
#[derive(Debug, Clone)]
pub struct MappedModel {
    pub weights: Vec<WeightMatrix>,
    pub records: Vec<MappingRecord>,
    pub nf: Vec<LayerNf>,
}

impl MappedModel {
    /// Mean per-tile NF over every tile of the model.
    pub fn mean_nf(&self) -> Option<f64> {
        LayerNf::merge(&self.nf).mean_tile_nf()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct MapOptions {
    pub arrangement: Option<Arrangement>,
    pub seed: u64,
}

/// Runs every trainable layer of `model` through the crossbar pipeline at
/// `params.n_rows x params.n_cols` tiles.
pub fn map_model(
    model: &Model,
    pattern: Option<&SparsityPattern>,
    params: &CrossbarParams,
    opts: &MapOptions,
) -> Result<MappedModel> {
    let n = params.n_rows;
    if let Some(p) = pattern {
        if p.masks.len() != model.weights.len() {
            return Err(Error::dims(
                format!("{} layer masks", model.weights.len()),
                p.masks.len().to_string(),
            ));
        }
        if p.method == PruneMethod::Xrs && opts.arrangement.is_some() {
            return Err(Error::InvalidParam(
                "column rearrangement cannot be combined with xrs pruning".into(),
            ));
        }
    }
    let mut out = MappedModel {
        weights: Vec::new(),
        records: Vec::new(),
        nf: Vec::new(),
    };
    for (l, w) in model.weights.iter().enumerate() {
        let compaction = pattern
            .map(|p| Compaction::from_mask(p.method, &p.masks[l], n))
            .transpose()?;
        let layer = simulate_layer(
            w,
            params,
            &LayerOptions {
                arrangement: opts.arrangement,
                compaction,
                master_seed: opts.seed,
                layer_index: l,
            },
        )?;
        out.weights.push(layer.weights);
        out.records.push(layer.record);
        out.nf.push(layer.nf);
    }
    Ok(out)
}

/// Models trained for one seed of a sweep.
#[derive(Debug, Clone)]
pub struct TrainedSet {
    pub seed: u64,
    pub pattern: Option<SparsityPattern>,
    pub dense: Option<Model>,
    pub pruned: Option<Model>,
    pub dense_wct: Option<Model>,
    pub pruned_wct: Option<Model>,
}

impl TrainedSet {
    fn model(&self, v: &Variant) -> &Model {
        let m = match (v.pruned, v.wct) {
            (false, false) => &self.dense,
            (true, false) => &self.pruned,
            (false, true) => &self.dense_wct,
            (true, true) => &self.pruned_wct,
        };
        m.as_ref().expect("trained for every requested variant")
    }
}

/// Trains whatever the configured variants need for one seed.
pub fn train_for_seed(
    cfg: &ExperimentConfig,
    train_set: &Dataset,
    seed: u64,
) -> Result<TrainedSet> {
    let spec = cfg.model_spec(seed);
    let init = Model::init(&spec)?;
    let pattern = if cfg.variants.iter().any(|v| v.pruned) {
        Some(cfg.pattern(&spec, seed)?)
    } else {
        None
    };
    let need = |pruned: bool, wct: bool| {
        cfg.variants
            .iter()
            .any(|v| v.pruned == pruned && v.wct == wct)
    };
    let fit = |p: Option<&SparsityPattern>| -> Result<Model> {
        Ok(train(&init, train_set, &cfg.train_config(seed, p.cloned()))?.model)
    };
    let wct = |m: &Model, p: Option<&SparsityPattern>| -> Result<Model> {
        Ok(wct_train(m, train_set, &cfg.train_config(seed, p.cloned()))?.model)
    };
    let dense = if need(false, false) || need(false, true) {
        Some(fit(None)?)
    } else {
        None
    };
    let pruned = if need(true, false) || need(true, true) {
        Some(fit(pattern.as_ref())?)
    } else {
        None
    };
    let dense_wct = match (&dense, need(false, true)) {
        (Some(m), true) => Some(wct(m, None)?),
        _ => None,
    };
    let pruned_wct = match (&pruned, need(true, true)) {
        (Some(m), true) => Some(wct(m, pattern.as_ref())?),
        _ => None,
    };
    Ok(TrainedSet {
        seed,
        pattern,
        dense,
        pruned,
        dense_wct,
        pruned_wct,
    })
}

/// Maps and evaluates one (seed, size, variant) cell.
pub fn run_cell(
    cfg: &ExperimentConfig,
    trained: &TrainedSet,
    test_set: &Dataset,
    size: usize,
    variant: &Variant,
) -> Result<ReportRow> {
    let start = Instant::now();
    let model = trained.model(variant);
    let pattern = if variant.pruned {
        trained.pattern.as_ref()
    } else {
        None
    };
    let params = cfg.crossbar.clone().with_size(size);
    let opts = MapOptions {
        arrangement: variant.rearrange.then_some(cfg.arrangement),
        seed: trained.seed,
    };
    let mapped = map_model(model, pattern, &params, &opts)?;
    let software = evaluate(model, test_set)?;
    let nonideal = evaluate(&inject_nonideal_weights(model, &mapped.weights)?, test_set)?;
    let rate = match pattern {
        Some(p) => compression_rate(&model.spec.geometries()?, p, size)?,
        None => 1.0,
    };
    Ok(ReportRow {
        seed: trained.seed,
        method: pattern
            .map(|p| p.method.to_string())
            .unwrap_or_else(|| "none".into()),
        s: pattern.map_or(0.0, |p| p.s),
        crossbar_size: size,
        mitigation: variant.mitigation(),
        software_accuracy: software,
        nonideal_accuracy: nonideal,
        mean_nf: mapped.mean_nf().unwrap_or(0.0),
        compression_rate: rate,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Full factorial run over seeds x sizes x variants. Rows come back sorted.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    cfg.validate()?;
    let (train_set, test_set) = cfg.dataset.generate()?;
    let trained: Vec<TrainedSet> = cfg
        .seeds
        .par_iter()
        .map(|&seed| train_for_seed(cfg, &train_set, seed))
        .collect::<Result<_>>()?;
    let cells: Vec<(&TrainedSet, usize, &Variant)> = trained
        .iter()
        .flat_map(|t| {
            cfg.sizes
                .iter()
                .flat_map(move |&n| cfg.variants.iter().map(move |v| (t, n, v)))
        })
        .collect();
    let mut rows: Vec<ReportRow> = cells
        .into_par_iter()
        .map(|(t, n, v)| run_cell(cfg, t, &test_set, n, v))
        .collect::<Result<_>>()?;
    rows.sort_by(ReportRow::order);
    Ok(rows)
}

/// One line of the NF-vs-size table.
#[derive(Debug, Clone, PartialEq)]
pub struct NfRow {
    pub crossbar_size: usize,
    /// Trainable layer index, or `None` for the whole model.
    pub layer: Option<usize>,
    pub tiles: usize,
    pub mean_tile_nf: f64,
    pub mean_column_nf: f64,
}

/// Maps `model` at each size and tabulates NF per layer and overall.
pub fn nf_table(
    model: &Model,
    pattern: Option<&SparsityPattern>,
    params: &CrossbarParams,
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<NfRow>> {
    let mut rows = Vec::new();
    for &n in sizes {
        let mapped = map_model(
            model,
            pattern,
            &params.clone().with_size(n),
            &MapOptions {
                arrangement: None,
                seed,
            },
        )?;
        let row = |layer, nf: &LayerNf| NfRow {
            crossbar_size: n,
            layer,
            tiles: nf.tiles.len(),
            mean_tile_nf: nf.mean_tile_nf().unwrap_or(0.0),
            mean_column_nf: nf.mean_column_nf().unwrap_or(0.0),
        };
        for (l, nf) in mapped.nf.iter().enumerate() {
            rows.push(row(Some(l), nf));
        }
        rows.push(row(None, &LayerNf::merge(&mapped.nf)));
    }
    Ok(rows)
}
