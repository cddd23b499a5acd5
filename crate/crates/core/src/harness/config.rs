use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::circuit::CrossbarParams;
use crate::error::{Error, Result};
use crate::mapping::Arrangement;
use crate::nn::{gen_synthetic_dataset, Dataset, ModelSpec, TrainConfig, WctConfig};
use crate::pruning::{PruneMethod, SparsityPattern};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            seed: 0,
            n_train: 2000,
            n_test: 1000,
        }
    }
}

impl DatasetSpec {
    pub fn generate(&self) -> Result<(Dataset, Dataset)> {
        gen_synthetic_dataset(self.seed, self.n_train, self.n_test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSettings {
    pub method: PruneMethod,
    pub s: f64,
    /// Segment length XCS/XRS masks are drawn at.
    pub tile_size: usize,
}

impl Default for PruneSettings {
    fn default() -> Self {
        PruneSettings {
            method: PruneMethod::Cf,
            s: 0.8,
            tile_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSettings {
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
        }
    }
}

/// One model/mitigation combination evaluated in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Variant {
    pub pruned: bool,
    pub rearrange: bool,
    pub wct: bool,
}

impl Variant {
    pub fn mitigation(&self) -> String {
        match (self.rearrange, self.wct) {
            (false, false) => "none",
            (true, false) => "rearrange",
            (false, true) => "wct",
            (true, true) => "rearrange+wct",
        }
        .to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sizes: Vec<usize>,
    /// Device and parasitic parameters; the array size is set per run.
    pub crossbar: CrossbarParams,
    pub prune: PruneSettings,
    pub arrangement: Arrangement,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub train: TrainSettings,
    pub wct: WctConfig,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let v = |pruned, rearrange, wct| Variant {
            pruned,
            rearrange,
            wct,
        };
        ExperimentConfig {
            sizes: vec![16, 32, 64],
            crossbar: CrossbarParams::default(),
            prune: PruneSettings::default(),
            arrangement: Arrangement::default(),
            variants: vec![
                v(false, false, false),
                v(true, false, false),
                v(true, true, false),
                v(true, false, true),
            ],
            seeds: vec![0, 1, 2],
            dataset: DatasetSpec::default(),
            model: ModelSpec::reference(0),
            train: TrainSettings::default(),
            wct: WctConfig::default(),
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::Config(format!("{key}: {msg}")));
        if self.sizes.is_empty() {
            return bad("sizes", "must not be empty".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds", "must not be empty".into());
        }
        if self.variants.is_empty() {
            return bad("variants", "must not be empty".into());
        }
        for &n in &self.sizes {
            if let Err(e) = self.crossbar.clone().with_size(n).validate() {
                return bad("sizes", format!("{n}: {e}"));
            }
        }
        if !(0.0..1.0).contains(&self.prune.s) {
            return bad("prune.s", format!("{} outside [0, 1)", self.prune.s));
        }
        if self.prune.tile_size == 0 {
            return bad("prune.tile_size", "must be >= 1".into());
        }
        if self.prune.method == PruneMethod::Xrs
            && self.variants.iter().any(|v| v.pruned && v.rearrange)
        {
            return bad(
                "variants",
                "rearrangement cannot be combined with xrs pruning".into(),
            );
        }
        if self.dataset.n_train == 0 || self.dataset.n_test == 0 {
            return bad("dataset", "n_train and n_test must be >= 1".into());
        }
        if let Err(e) = self.model.shapes() {
            return bad("model", e.to_string());
        }
        if let Err(e) = self.train_config(0, None).validate() {
            return bad("train", e.to_string());
        }
        Ok(())
    }

    /// The model architecture with its init seed set to `seed`.
    pub fn model_spec(&self, seed: u64) -> ModelSpec {
        ModelSpec {
            seed,
            ..self.model.clone()
        }
    }

    pub fn pattern(&self, spec: &ModelSpec, seed: u64) -> Result<SparsityPattern> {
        SparsityPattern::generate(
            &spec.geometries()?,
            self.prune.method,
            self.prune.s,
            seed,
            Some(self.prune.tile_size),
        )
    }

    pub fn train_config(&self, seed: u64, pattern: Option<SparsityPattern>) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            seed,
            pattern,
            wct: Some(self.wct.clone()),
        }
    }
}
