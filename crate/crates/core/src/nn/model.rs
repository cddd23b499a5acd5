use ndarray::{s, Array1, Array2, Array4, ArrayView4, Axis};
use rand_distr::{Distribution, Normal};

use super::conv::{col2im, im2col, ConvGeom};
use super::spec::{LayerSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::mapping::WeightMatrix;
use crate::rng;

/// A network whose conv and dense weights are kept in unrolled
/// `(fan_in, outputs)` form, the layout the crossbar mapping consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub weights: Vec<WeightMatrix>,
    pub biases: Vec<Array1<f64>>,
}

#[derive(Debug, Clone)]
pub struct Grads {
    pub weights: Vec<WeightMatrix>,
    pub biases: Vec<Array1<f64>>,
}

enum Cache {
    Conv {
        cols: Array2<f64>,
        geom: ConvGeom,
        batch: usize,
    },
    Dense {
        x: Array2<f64>,
        shape: (usize, usize, usize, usize),
    },
    Relu {
        active: Array4<bool>,
    },
    Pool {
        argmax: Array4<usize>,
        shape: (usize, usize, usize, usize),
    },
}

impl Model {
    /// He-normal weights and zero biases, seeded from `spec.seed`.
    pub fn init(spec: &ModelSpec) -> Result<Self> {
        let geoms = spec.geometries()?;
        let weights = geoms
            .iter()
            .enumerate()
            .map(|(l, g)| {
                let std = (2.0 / g.rows as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                let mut r = rng::stream(spec.seed, &[rng::tag::INIT, l as u64]);
                Array2::from_shape_simple_fn((g.rows, g.cols), || normal.sample(&mut r))
            })
            .collect();
        let biases = geoms.iter().map(|g| Array1::zeros(g.cols)).collect();
        Ok(Model {
            spec: spec.clone(),
            weights,
            biases,
        })
    }

    /// Checks that weight and bias shapes agree with the spec.
    pub fn validate(&self) -> Result<()> {
        let geoms = self.spec.geometries()?;
        if self.weights.len() != geoms.len() || self.biases.len() != geoms.len() {
            return Err(Error::dims(
                format!("{} trainable layers", geoms.len()),
                format!(
                    "{} weights, {} biases",
                    self.weights.len(),
                    self.biases.len()
                ),
            ));
        }
        for (l, g) in geoms.iter().enumerate() {
            if self.weights[l].dim() != (g.rows, g.cols) || self.biases[l].len() != g.cols {
                return Err(Error::dims(
                    format!("layer {l}: {}x{} weights", g.rows, g.cols),
                    format!("{:?}", self.weights[l].dim()),
                ));
            }
        }
        Ok(())
    }

    /// Logits of shape `(batch, classes)` for an NCHW batch.
    pub fn forward(&self, x: ArrayView4<f64>) -> Result<Array2<f64>> {
        Ok(self.run(x, false)?.0)
    }

    pub fn predict(&self, x: ArrayView4<f64>) -> Result<Vec<usize>> {
        let logits = self.forward(x)?;
        Ok(logits
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (k, &v)| {
                        if v > best.1 {
                            (k, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect())
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn loss(&self, x: ArrayView4<f64>, labels: &[u8]) -> Result<f64> {
        let logits = self.forward(x)?;
        Ok(softmax_xent(&logits, labels)?.0)
    }

    pub fn loss_and_grad(&self, x: ArrayView4<f64>, labels: &[u8]) -> Result<(f64, Grads)> {
        let (logits, caches) = self.run(x, true)?;
        let (loss, dlogits) = softmax_xent(&logits, labels)?;
        Ok((loss, self.backward(caches, dlogits)))
    }

    fn run(&self, x: ArrayView4<f64>, keep: bool) -> Result<(Array2<f64>, Vec<Cache>)> {
        let shapes = self.spec.shapes()?;
        let (c, h, w) = self.spec.input;
        let (n, xc, xh, xw) = x.dim();
        if (xc, xh, xw) != (c, h, w) {
            return Err(Error::dims(
                format!("{c}x{h}x{w} input"),
                format!("{xc}x{xh}x{xw}"),
            ));
        }
        let mut a: Array4<f64> = x
            .permuted_axes([0, 2, 3, 1])
            .as_standard_layout()
            .into_owned();
        let mut caches = Vec::new();
        let mut t = 0;
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let (ic, ih, iw) = shapes[i];
            let (oc, oh, ow) = shapes[i + 1];
            match *layer {
                LayerSpec::Conv {
                    kernel,
                    stride,
                    padding,
                    ..
                } => {
                    let geom = ConvGeom {
                        in_ch: ic,
                        kernel,
                        stride,
                        padding,
                        in_h: ih,
                        in_w: iw,
                    };
                    let cols = im2col(a.view(), &geom);
                    let y = cols.dot(&self.weights[t]) + &self.biases[t];
                    a = y
                        .into_shape_with_order((n, oh, ow, oc))
                        .expect("contiguous");
                    if keep {
                        caches.push(Cache::Conv {
                            cols,
                            geom,
                            batch: n,
                        });
                    }
                    t += 1;
                }
                LayerSpec::Dense { .. } => {
                    let shape = a.dim();
                    let x2 = flatten(a);
                    let y = x2.dot(&self.weights[t]) + &self.biases[t];
                    a = y.into_shape_with_order((n, 1, 1, oc)).expect("contiguous");
                    if keep {
                        caches.push(Cache::Dense { x: x2, shape });
                    }
                    t += 1;
                }
                LayerSpec::Relu => {
                    if keep {
                        caches.push(Cache::Relu {
                            active: a.mapv(|v| v > 0.0),
                        });
                    }
                    a.mapv_inplace(|v| v.max(0.0));
                }
                LayerSpec::Pool => {
                    let shape = a.dim();
                    let mut out = Array4::zeros((n, oh, ow, oc));
                    let mut argmax = Array4::zeros((n, oh, ow, oc));
                    for ((b, y, x, ch), o) in out.indexed_iter_mut() {
                        let window = a.slice(s![b, 2 * y..2 * y + 2, 2 * x..2 * x + 2, ch]);
                        let mut best = (0, f64::NEG_INFINITY);
                        for ((dy, dx), &v) in window.indexed_iter() {
                            if v > best.1 {
                                best = (dy * 2 + dx, v);
                            }
                        }
                        *o = best.1;
                        argmax[[b, y, x, ch]] = best.0;
                    }
                    a = out;
                    if keep {
                        caches.push(Cache::Pool { argmax, shape });
                    }
                }
            }
        }
        let classes = a.len() / n.max(1);
        let logits = a.into_shape_with_order((n, classes)).expect("contiguous");
        Ok((logits, caches))
    }

    fn backward(&self, caches: Vec<Cache>, dlogits: Array2<f64>) -> Grads {
        let nt = self.weights.len();
        let mut gw: Vec<Option<WeightMatrix>> = vec![None; nt];
        let mut gb: Vec<Option<Array1<f64>>> = vec![None; nt];
        let n = dlogits.nrows();
        let k = dlogits.ncols();
        let mut d: Array4<f64> = dlogits
            .into_shape_with_order((n, 1, 1, k))
            .expect("contiguous");
        let mut t = nt;
        let last = caches.len();
        for (depth, cache) in caches.into_iter().rev().enumerate() {
            let first = depth + 1 == last;
            d = match cache {
                Cache::Conv { cols, geom, batch } => {
                    t -= 1;
                    let oc = d.dim().3;
                    let dy = d
                        .into_shape_with_order((cols.nrows(), oc))
                        .expect("contiguous");
                    gw[t] = Some(cols.t().dot(&dy));
                    gb[t] = Some(dy.sum_axis(Axis(0)));
                    if first {
                        break;
                    }
                    col2im(&dy.dot(&self.weights[t].t()), batch, &geom)
                }
                Cache::Dense { x, shape } => {
                    t -= 1;
                    let oc = d.dim().3;
                    let dy = d.into_shape_with_order((n, oc)).expect("contiguous");
                    gw[t] = Some(x.t().dot(&dy));
                    gb[t] = Some(dy.sum_axis(Axis(0)));
                    if first {
                        break;
                    }
                    unflatten(dy.dot(&self.weights[t].t()), shape)
                }
                Cache::Relu { active } => {
                    d.zip_mut_with(&active, |g, &on| {
                        if !on {
                            *g = 0.0;
                        }
                    });
                    d
                }
                Cache::Pool { argmax, shape } => {
                    let mut dx = Array4::zeros(shape);
                    for ((b, y, x, ch), &g) in d.indexed_iter() {
                        let k = argmax[[b, y, x, ch]];
                        dx[[b, 2 * y + k / 2, 2 * x + k % 2, ch]] += g;
                    }
                    dx
                }
            };
        }
        Grads {
            weights: gw
                .into_iter()
                .map(|g| g.expect("every layer visited"))
                .collect(),
            biases: gb
                .into_iter()
                .map(|g| g.expect("every layer visited"))
                .collect(),
        }
    }
}

/// NHWC to `(batch, c*h*w)` with channel-major feature order.
fn flatten(a: Array4<f64>) -> Array2<f64> {
    let (n, h, w, c) = a.dim();
    a.permuted_axes([0, 3, 1, 2])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, c * h * w))
        .expect("contiguous")
}

fn unflatten(d: Array2<f64>, (n, h, w, c): (usize, usize, usize, usize)) -> Array4<f64> {
    d.into_shape_with_order((n, c, h, w))
        .expect("contiguous")
        .permuted_axes([0, 2, 3, 1])
        .as_standard_layout()
        .into_owned()
}

fn softmax_xent(logits: &Array2<f64>, labels: &[u8]) -> Result<(f64, Array2<f64>)> {
    let (n, k) = logits.dim();
    if labels.len() != n {
        return Err(Error::dims(format!("{n} labels"), labels.len().to_string()));
    }
    if n == 0 {
        return Err(Error::InvalidParam("empty batch".into()));
    }
    let mut grad = Array2::zeros((n, k));
    let mut loss = 0.0;
    for (b, (row, &y)) in logits.rows().into_iter().zip(labels).enumerate() {
        let y = y as usize;
        if y >= k {
            return Err(Error::InvalidParam(format!("label {y} outside 0..{k}")));
        }
        let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        loss += z.ln() + m - row[y];
        for j in 0..k {
            grad[[b, j]] = ((row[j] - m).exp() / z - if j == y { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}
