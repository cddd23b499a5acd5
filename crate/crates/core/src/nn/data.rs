use ndarray::{s, Array2, Array4, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const IMAGE_SIZE: usize = 8;
pub const NUM_CLASSES: usize = 4;
pub const PIXEL_NOISE: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Labelled images in NCHW layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Array4<f64>,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Array4<f64>, labels: Vec<u8>, split: Split) -> Result<Self> {
        if images.dim().0 != labels.len() {
            return Err(Error::dims(
                format!("{} labels", images.dim().0),
                labels.len().to_string(),
            ));
        }
        Ok(Dataset {
            images,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> (Array4<f64>, Vec<u8>) {
        (
            self.images.select(Axis(0), idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; NUM_CLASSES];
        for &l in &self.labels {
            if let Some(c) = counts.get_mut(l as usize) {
                *c += 1;
            }
        }
        counts
    }
}

/// Four-class 8x8 images: horizontal bar, vertical bar, diagonal, blob.
///
/// Each image is a randomly placed base pattern plus Gaussian pixel noise,
/// clipped to `[0, 1]`. Labels cycle through the classes before shuffling,
/// so class counts differ by at most one.
pub fn gen_synthetic_dataset(
    seed: u64,
    n_train: usize,
    n_test: usize,
) -> Result<(Dataset, Dataset)> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::InvalidParam("dataset sizes must be >= 1".into()));
    }
    Ok((
        generate(
            n_train,
            Split::Train,
            &mut rng::stream(seed, &[rng::tag::DATA, 0]),
        ),
        generate(
            n_test,
            Split::Test,
            &mut rng::stream(seed, &[rng::tag::DATA, 1]),
        ),
    ))
}

fn generate(n: usize, split: Split, r: &mut ChaCha8Rng) -> Dataset {
    let mut labels: Vec<u8> = (0..n).map(|i| (i % NUM_CLASSES) as u8).collect();
    labels.shuffle(r);
    let noise = Normal::new(0.0, PIXEL_NOISE).expect("valid sigma");
    let mut images = Array4::zeros((n, 1, IMAGE_SIZE, IMAGE_SIZE));
    for (i, &label) in labels.iter().enumerate() {
        let mut img = pattern(label, r);
        img.mapv_inplace(|v| (v + noise.sample(r)).clamp(0.0, 1.0));
        images.slice_mut(s![i, 0, .., ..]).assign(&img);
    }
    Dataset {
        images,
        labels,
        split,
    }
}

fn pattern(label: u8, r: &mut ChaCha8Rng) -> Array2<f64> {
    let n = IMAGE_SIZE;
    let mut img = Array2::zeros((n, n));
    match label {
        0 => {
            let row = r.random_range(1..n - 1);
            img.row_mut(row).fill(1.0);
        }
        1 => {
            let col = r.random_range(1..n - 1);
            img.column_mut(col).fill(1.0);
        }
        2 => {
            let offset = r.random_range(-1i64..=1);
            let anti = r.random_bool(0.5);
            for i in 0..n as i64 {
                let j = i + offset;
                if (0..n as i64).contains(&j) {
                    let col = if anti { n as i64 - 1 - j } else { j };
                    img[[i as usize, col as usize]] = 1.0;
                }
            }
        }
        _ => {
            let cy = r.random_range(2..n - 2);
            let cx = r.random_range(2..n - 2);
            for y in cy - 1..=cy + 1 {
                for x in cx - 1..=cx + 1 {
                    let corner = y != cy && x != cx;
                    img[[y, x]] = if corner { 0.7 } else { 1.0 };
                }
            }
        }
    }
    img
}
