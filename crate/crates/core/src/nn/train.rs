use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::model::Model;
use crate::error::{Error, Result};
use crate::mapping::WeightMatrix;
use crate::pruning::{apply_mask, Mask, SparsityPattern};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WctConfig {
    pub percentile: f64,
    pub epochs: usize,
    /// One cutoff per layer instead of a single pooled cutoff.
    pub per_layer: bool,
}

impl Default for WctConfig {
    fn default() -> Self {
        WctConfig {
            percentile: 90.0,
            epochs: 2,
            per_layer: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pattern: Option<SparsityPattern>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wct: Option<WctConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            batch_size: 32,
            epochs: 15,
            seed: 0,
            pattern: None,
            wct: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidParam(format!("lr = {} must be > 0", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParam("batch_size must be >= 1".into()));
        }
        if let Some(w) = &self.wct {
            check_percentile(w.percentile)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Training-set loss before the first update.
    pub initial_loss: f64,
    /// Mean minibatch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct WctOutcome {
    pub model: Model,
    /// Cutoff applied to each trainable layer.
    pub cutoffs: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

fn masks_for(model: &Model, pattern: Option<&SparsityPattern>) -> Result<Option<Vec<Mask>>> {
    let Some(p) = pattern else { return Ok(None) };
    if !p.masks.is_empty() {
        return Ok(Some(p.masks.clone()));
    }
    let mut p = p.clone();
    p.regenerate(&model.spec.geometries()?)?;
    Ok(Some(p.masks))
}

fn project(model: &mut Model, masks: Option<&[Mask]>, cutoffs: Option<&[f64]>) -> Result<()> {
    for (l, w) in model.weights.iter_mut().enumerate() {
        if let Some(m) = masks {
            apply_mask(w, &m[l])?;
        }
        if let Some(c) = cutoffs {
            *w = wct_clamp(w, c[l]);
        }
    }
    Ok(())
}

fn sgd_epochs(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    epochs: std::ops::Range<usize>,
    masks: Option<&[Mask]>,
    cutoffs: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let mut losses = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in epochs {
        order.shuffle(&mut rng::stream(
            cfg.seed,
            &[rng::tag::SHUFFLE, epoch as u64],
        ));
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let (x, y) = data.subset(idx);
            let (loss, grads) = model.loss_and_grad(x.view(), &y)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("loss {loss} in epoch {epoch}")));
            }
            for (w, g) in model.weights.iter_mut().zip(&grads.weights) {
                w.scaled_add(-cfg.lr, g);
            }
            if model.spec.bias {
                for (b, g) in model.biases.iter_mut().zip(&grads.biases) {
                    b.scaled_add(-cfg.lr, g);
                }
            }
            project(model, masks, cutoffs)?;
            total += loss;
            batches += 1;
        }
        losses.push(total / batches as f64);
    }
    Ok(losses)
}

/// Minibatch SGD on softmax cross-entropy. Pruned weights are zeroed at the
/// start and after every update.
pub fn train(model: &Model, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidParam("empty training set".into()));
    }
    let masks = masks_for(model, cfg.pattern.as_ref())?;
    let mut model = model.clone();
    project(&mut model, masks.as_deref(), None)?;
    let initial_loss = model.loss(data.images.view(), &data.labels)?;
    let epoch_losses = sgd_epochs(&mut model, data, cfg, 0..cfg.epochs, masks.as_deref(), None)?;
    Ok(TrainOutcome {
        model,
        initial_loss,
        epoch_losses,
    })
}

fn check_percentile(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::InvalidParam(format!(
            "percentile {p} outside (0, 100]"
        )));
    }
    Ok(())
}

fn nearest_rank(mut values: Vec<f64>, p: f64) -> Result<f64> {
    check_percentile(p)?;
    if values.is_empty() {
        return Err(Error::InvalidParam(
            "no weights to take a percentile of".into(),
        ));
    }
    values.sort_by(f64::total_cmp);
    let rank = (p * values.len() as f64 / 100.0 - 1e-9).ceil().max(1.0) as usize;
    Ok(values[rank.min(values.len()) - 1])
}

fn magnitudes<'a>(w: &'a WeightMatrix, mask: Option<&'a Mask>) -> impl Iterator<Item = f64> + 'a {
    w.indexed_iter()
        .filter(move |(idx, _)| mask.is_none_or(|m| m[*idx]))
        .map(|(_, v)| v.abs())
}

/// Nearest-rank `p`-th percentile of `|w|` pooled over every trainable layer.
///
/// Weights removed by `pattern` are left out of the pool.
pub fn wct_cutoff(model: &Model, p: f64, pattern: Option<&SparsityPattern>) -> Result<f64> {
    let masks = masks_for(model, pattern)?;
    let pooled = model
        .weights
        .iter()
        .enumerate()
        .flat_map(|(l, w)| magnitudes(w, masks.as_ref().map(|m| &m[l])))
        .collect();
    nearest_rank(pooled, p)
}

/// Per-layer variant of [`wct_cutoff`].
pub fn wct_layer_cutoffs(
    model: &Model,
    p: f64,
    pattern: Option<&SparsityPattern>,
) -> Result<Vec<f64>> {
    let masks = masks_for(model, pattern)?;
    model
        .weights
        .iter()
        .enumerate()
        .map(|(l, w)| nearest_rank(magnitudes(w, masks.as_ref().map(|m| &m[l])).collect(), p))
        .collect()
}

/// `min(|w|, w_cut) * sign(w)` elementwise.
pub fn wct_clamp(w: &WeightMatrix, w_cut: f64) -> WeightMatrix {
    w.mapv(|v| v.clamp(-w_cut, w_cut))
}

/// Clamps a trained model's weights and retrains with the clamp applied after
/// every update.
pub fn wct_train(model: &Model, data: &Dataset, cfg: &TrainConfig) -> Result<WctOutcome> {
    cfg.validate()?;
    model.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidParam("empty training set".into()));
    }
    let wct = cfg.wct.clone().unwrap_or_default();
    let pattern = cfg.pattern.as_ref();
    let cutoffs = if wct.per_layer {
        wct_layer_cutoffs(model, wct.percentile, pattern)?
    } else {
        vec![wct_cutoff(model, wct.percentile, pattern)?; model.weights.len()]
    };
    if let Some(c) = cutoffs.iter().find(|c| **c <= 0.0) {
        return Err(Error::InvalidParam(format!(
            "weight cutoff {c} must be > 0"
        )));
    }
    let masks = masks_for(model, pattern)?;
    let mut model = model.clone();
    project(&mut model, masks.as_deref(), Some(&cutoffs))?;
    // continue the shuffle streams after the main training epochs
    let epochs = cfg.epochs..cfg.epochs + wct.epochs;
    let epoch_losses = sgd_epochs(
        &mut model,
        data,
        cfg,
        epochs,
        masks.as_deref(),
        Some(&cutoffs),
    )?;
    Ok(WctOutcome {
        model,
        cutoffs,
        epoch_losses,
    })
}

/// Fraction of argmax-correct predictions.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidParam(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let correct = idx
        .par_chunks(256)
        .map(|chunk| {
            let (x, y) = data.subset(chunk);
            let pred = model.predict(x.view())?;
            Ok(pred
                .iter()
                .zip(&y)
                .filter(|(p, y)| **p == **y as usize)
                .count())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / data.len() as f64)
}

/// Copy of `model` whose trainable layers use `weights` (unrolled layout).
/// Biases are kept.
pub fn inject_nonideal_weights(model: &Model, weights: &[WeightMatrix]) -> Result<Model> {
    let mut out = model.clone();
    out.weights = weights.to_vec();
    out.validate()?;
    Ok(out)
}
