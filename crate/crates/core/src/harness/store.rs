//! Directory formats: a `manifest.json` plus one raw little-endian binary
//! file per tensor, row-major.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array4};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::experiment::MappedModel;
use crate::circuit::CrossbarParams;
use crate::error::{Error, Result};
use crate::mapping::{Arrangement, MappingRecord, WeightMatrix};
use crate::nn::{
    reroll_conv, unroll_conv, Dataset, LayerSpec, Model, ModelSpec, Split, TrainConfig,
};
use crate::pruning::SparsityPattern;

pub const MANIFEST: &str = "manifest.json";
pub const F32_LE: &str = "f32-le";
pub const U8: &str = "u8";

const MODEL_FORMAT: &str = "xbar-model";
const DATASET_FORMAT: &str = "xbar-dataset";
const MAPPED_FORMAT: &str = "xbar-mapped";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub file: String,
}

fn write_manifest<T: Serialize>(dir: &Path, m: &T) -> Result<()> {
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(m).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn read_manifest<T: DeserializeOwned>(dir: &Path) -> Result<T> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path, source: e })
}

fn check_format(dir: &Path, found: &str, version: u32, want: &str) -> Result<()> {
    if found != want || version != VERSION {
        return Err(Error::Config(format!(
            "{}: expected {want} v{VERSION}, found {found} v{version}",
            dir.join(MANIFEST).display()
        )));
    }
    Ok(())
}

fn f32_bytes(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(|v| (v as f32).to_le_bytes()).collect()
}

fn read_bytes(dir: &Path, t: &TensorEntry, elem: usize) -> Result<Vec<u8>> {
    let path = dir.join(&t.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let want = t.shape.iter().product::<usize>() * elem;
    if bytes.len() != want {
        return Err(Error::Config(format!(
            "{}: {} bytes, shape {:?} needs {want}",
            path.display(),
            bytes.len(),
            t.shape
        )));
    }
    Ok(bytes)
}

fn read_f32(dir: &Path, t: &TensorEntry) -> Result<Vec<f64>> {
    if t.dtype != F32_LE {
        return Err(Error::Config(format!(
            "{}: unsupported dtype {:?}",
            t.name, t.dtype
        )));
    }
    Ok(read_bytes(dir, t, 4)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect())
}

fn shaped<D: ndarray::Dimension>(
    t: &TensorEntry,
    v: Vec<f64>,
    dim: D,
) -> Result<ndarray::Array<f64, D>> {
    ndarray::Array::from_shape_vec(dim, v)
        .map_err(|_| Error::Config(format!("{}: shape {:?} does not fit", t.name, t.shape)))
}

struct Hasher(Sha256);

impl Hasher {
    fn new<T: Serialize>(header: &T) -> Self {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(header).expect("serializable"));
        Hasher(h)
    }

    fn add(&mut self, bytes: &[u8]) {
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
    }

    fn hex(self) -> String {
        self.0
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub model: u64,
    pub train: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<u64>,
}

/// Everything about a saved model except the tensor data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub format: String,
    pub version: u32,
    pub spec: ModelSpec,
    /// Conv weights are `[out_ch, in_ch, k, k]`, dense weights
    /// `[inputs, outputs]`, biases `[outputs]`.
    pub tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<SparsityPattern>,
    pub seeds: Seeds,
    pub train: TrainConfig,
    /// Cutoffs applied by weight clamping, one per trainable layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wct_cutoffs: Option<Vec<f64>>,
    /// SHA-256 over the rest of the manifest and the tensor bytes.
    pub config_hash: String,
}

/// A model as loaded from disk.
#[derive(Debug, Clone)]
pub struct StoredModel {
    pub model: Model,
    /// Pattern with masks regenerated for the model.
    pub pattern: Option<SparsityPattern>,
    pub manifest: ModelManifest,
}

impl StoredModel {
    pub fn wct(&self) -> bool {
        self.manifest.wct_cutoffs.is_some()
    }
}

fn model_tensors(model: &Model) -> Result<Vec<(TensorEntry, Vec<u8>)>> {
    let mut out = Vec::new();
    for (t, &i) in model.spec.trainable_indices().iter().enumerate() {
        let w = &model.weights[t];
        let (shape, bytes) = match model.spec.layers[i] {
            LayerSpec::Conv { in_ch, kernel, .. } => {
                let k = reroll_conv(w, in_ch, kernel)?;
                (k.shape().to_vec(), f32_bytes(k.iter().copied()))
            }
            _ => (w.shape().to_vec(), f32_bytes(w.iter().copied())),
        };
        for (suffix, shape, bytes) in [
            ("weight", shape, bytes),
            (
                "bias",
                vec![model.biases[t].len()],
                f32_bytes(model.biases[t].iter().copied()),
            ),
        ] {
            let name = format!("layer{i}.{suffix}");
            out.push((
                TensorEntry {
                    file: format!("{name}.bin"),
                    name,
                    shape,
                    dtype: F32_LE.into(),
                },
                bytes,
            ));
        }
    }
    Ok(out)
}

fn model_hash(m: &ModelManifest, blobs: &[Vec<u8>]) -> String {
    let mut h = Hasher::new(&ModelManifest {
        config_hash: String::new(),
        ..m.clone()
    });
    for b in blobs {
        h.add(b);
    }
    h.hex()
}

/// Writes `model` to `dir`, returning its config hash. Values are stored as
/// 32-bit floats.
pub fn save_model(
    dir: &Path,
    model: &Model,
    pattern: Option<&SparsityPattern>,
    train: &TrainConfig,
    seeds: Seeds,
    wct_cutoffs: Option<Vec<f64>>,
) -> Result<String> {
    model.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tensors = model_tensors(model)?;
    let mut manifest = ModelManifest {
        format: MODEL_FORMAT.into(),
        version: VERSION,
        spec: model.spec.clone(),
        tensors: tensors.iter().map(|(t, _)| t.clone()).collect(),
        pattern: pattern.cloned(),
        seeds,
        train: TrainConfig {
            pattern: None,
            ..train.clone()
        },
        wct_cutoffs,
        config_hash: String::new(),
    };
    let blobs: Vec<Vec<u8>> = tensors.into_iter().map(|(_, b)| b).collect();
    for (t, b) in manifest.tensors.iter().zip(&blobs) {
        let path = dir.join(&t.file);
        fs::write(&path, b).map_err(|e| Error::io(&path, e))?;
    }
    manifest.config_hash = model_hash(&manifest, &blobs);
    write_manifest(dir, &manifest)?;
    Ok(manifest.config_hash)
}

pub fn load_model(dir: &Path) -> Result<StoredModel> {
    let manifest: ModelManifest = read_manifest(dir)?;
    check_format(dir, &manifest.format, manifest.version, MODEL_FORMAT)?;
    let trainable = manifest.spec.trainable_indices();
    if manifest.tensors.len() != 2 * trainable.len() {
        return Err(Error::Config(format!(
            "{}: {} tensors for {} trainable layers",
            dir.join(MANIFEST).display(),
            manifest.tensors.len(),
            trainable.len()
        )));
    }
    let mut blobs = Vec::new();
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for (pair, &i) in manifest.tensors.chunks(2).zip(&trainable) {
        let (wt, bt) = (&pair[0], &pair[1]);
        blobs.push(read_bytes(dir, wt, 4)?);
        blobs.push(read_bytes(dir, bt, 4)?);
        let wv = read_f32(dir, wt)?;
        let w = match manifest.spec.layers[i] {
            LayerSpec::Conv { .. } => {
                let s = &wt.shape;
                if s.len() != 4 {
                    return Err(Error::Config(format!(
                        "{}: conv weight must be 4-d",
                        wt.name
                    )));
                }
                unroll_conv(&shaped::<ndarray::Ix4>(
                    wt,
                    wv,
                    ndarray::Ix4(s[0], s[1], s[2], s[3]),
                )?)
            }
            _ => {
                let s = &wt.shape;
                if s.len() != 2 {
                    return Err(Error::Config(format!(
                        "{}: dense weight must be 2-d",
                        wt.name
                    )));
                }
                shaped::<ndarray::Ix2>(wt, wv, ndarray::Ix2(s[0], s[1]))?
            }
        };
        weights.push(w);
        biases.push(Array1::from(read_f32(dir, bt)?));
    }
    let expected = model_hash(&manifest, &blobs);
    if expected != manifest.config_hash {
        return Err(Error::Config(format!(
            "{}: config_hash does not match the stored tensors",
            dir.join(MANIFEST).display()
        )));
    }
    let model = Model {
        spec: manifest.spec.clone(),
        weights,
        biases,
    };
    model.validate()?;
    let pattern = match &manifest.pattern {
        Some(p) => {
            let mut p = p.clone();
            p.regenerate(&model.spec.geometries()?)?;
            Some(p)
        }
        None => None,
    };
    Ok(StoredModel {
        model,
        pattern,
        manifest,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    pub split: Split,
    pub images: TensorEntry,
    pub labels: TensorEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub splits: Vec<SplitEntry>,
    pub config_hash: String,
}

fn dataset_hash(m: &DatasetManifest, blobs: &[Vec<u8>]) -> String {
    let mut h = Hasher::new(&DatasetManifest {
        config_hash: String::new(),
        ..m.clone()
    });
    for b in blobs {
        h.add(b);
    }
    h.hex()
}

/// Writes both splits to `dir`; images as `[n, c, h, w]` 32-bit floats,
/// labels as bytes.
pub fn save_dataset(dir: &Path, seed: u64, splits: &[&Dataset]) -> Result<String> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    let mut blobs = Vec::new();
    for d in splits {
        let tag = match d.split {
            Split::Train => "train",
            Split::Test => "test",
        };
        let entry = |kind: &str, shape: Vec<usize>, dtype: &str| TensorEntry {
            name: format!("{tag}.{kind}"),
            shape,
            dtype: dtype.into(),
            file: format!("{tag}_{kind}.bin"),
        };
        entries.push(SplitEntry {
            split: d.split,
            images: entry("images", d.images.shape().to_vec(), F32_LE),
            labels: entry("labels", vec![d.len()], U8),
        });
        blobs.push(f32_bytes(d.images.iter().copied()));
        blobs.push(d.labels.clone());
    }
    let files = entries
        .iter()
        .flat_map(|e| [&e.images.file, &e.labels.file]);
    for (file, b) in files.zip(&blobs) {
        let path = dir.join(file);
        fs::write(&path, b).map_err(|e| Error::io(&path, e))?;
    }
    let mut manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: VERSION,
        seed,
        splits: entries,
        config_hash: String::new(),
    };
    manifest.config_hash = dataset_hash(&manifest, &blobs);
    write_manifest(dir, &manifest)?;
    Ok(manifest.config_hash)
}

pub fn load_dataset(dir: &Path, split: Split) -> Result<Dataset> {
    let manifest: DatasetManifest = read_manifest(dir)?;
    check_format(dir, &manifest.format, manifest.version, DATASET_FORMAT)?;
    let entry = manifest
        .splits
        .iter()
        .find(|e| e.split == split)
        .ok_or_else(|| Error::Config(format!("{}: no {split:?} split", dir.display())))?;
    let s = &entry.images.shape;
    if s.len() != 4 {
        return Err(Error::Config(format!(
            "{}: images must be 4-d",
            entry.images.name
        )));
    }
    let images: Array4<f64> = shaped(
        &entry.images,
        read_f32(dir, &entry.images)?,
        ndarray::Ix4(s[0], s[1], s[2], s[3]),
    )?;
    if entry.labels.dtype != U8 {
        return Err(Error::Config(format!(
            "{}: labels must be u8",
            entry.labels.name
        )));
    }
    let labels = read_bytes(dir, &entry.labels, 1)?;
    Dataset::new(images, labels, split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappedLayer {
    pub weights: TensorEntry,
    pub record: MappingRecord,
    pub tiles: usize,
    pub mean_tile_nf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappedManifest {
    pub format: String,
    pub version: u32,
    /// Hash of the model the weights were mapped from.
    pub model_hash: String,
    pub crossbar: CrossbarParams,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrangement: Option<Arrangement>,
    /// Non-ideal weights in unrolled `[fan_in, outputs]` layout.
    pub layers: Vec<MappedLayer>,
    pub mean_nf: Option<f64>,
    pub wall_time_s: f64,
    pub config_hash: String,
}

pub struct MapRun<'a> {
    pub model_hash: &'a str,
    pub crossbar: &'a CrossbarParams,
    pub seed: u64,
    pub arrangement: Option<Arrangement>,
    pub wall_time_s: f64,
}

pub fn save_mapped(dir: &Path, mapped: &MappedModel, run: &MapRun) -> Result<String> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut layers = Vec::new();
    let mut blobs = Vec::new();
    for (l, ((w, record), nf)) in mapped
        .weights
        .iter()
        .zip(&mapped.records)
        .zip(&mapped.nf)
        .enumerate()
    {
        let name = format!("layer{l}.weight");
        let bytes = f32_bytes(w.iter().copied());
        let path = dir.join(format!("{name}.bin"));
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        blobs.push(bytes);
        layers.push(MappedLayer {
            weights: TensorEntry {
                file: format!("{name}.bin"),
                name,
                shape: w.shape().to_vec(),
                dtype: F32_LE.into(),
            },
            record: record.clone(),
            tiles: nf.tiles.len(),
            mean_tile_nf: nf.mean_tile_nf(),
        });
    }
    let mut manifest = MappedManifest {
        format: MAPPED_FORMAT.into(),
        version: VERSION,
        model_hash: run.model_hash.to_string(),
        crossbar: run.crossbar.clone(),
        seed: run.seed,
        arrangement: run.arrangement,
        layers,
        mean_nf: mapped.mean_nf(),
        wall_time_s: run.wall_time_s,
        config_hash: String::new(),
    };
    let mut h = Hasher::new(&manifest);
    for b in &blobs {
        h.add(b);
    }
    manifest.config_hash = h.hex();
    write_manifest(dir, &manifest)?;
    Ok(manifest.config_hash)
}

/// Loads non-ideal weights, refusing a mapping produced from another model.
pub fn load_mapped(dir: &Path, model: &StoredModel) -> Result<(Vec<WeightMatrix>, MappedManifest)> {
    let manifest: MappedManifest = read_manifest(dir)?;
    check_format(dir, &manifest.format, manifest.version, MAPPED_FORMAT)?;
    if manifest.model_hash != model.manifest.config_hash {
        return Err(Error::HashMismatch {
            model: model.manifest.config_hash.clone(),
            mapped: manifest.model_hash.clone(),
        });
    }
    let weights = manifest
        .layers
        .iter()
        .map(|l| {
            let s = &l.weights.shape;
            if s.len() != 2 {
                return Err(Error::Config(format!("{}: must be 2-d", l.weights.name)));
            }
            shaped::<ndarray::Ix2>(
                &l.weights,
                read_f32(dir, &l.weights)?,
                ndarray::Ix2(s[0], s[1]),
            )
        })
        .collect::<Result<Vec<Array2<f64>>>>()?;
    Ok((weights, manifest))
}
