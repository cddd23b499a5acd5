use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pruning::LayerGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    /// 2x2 max pooling with stride 2.
    Pool,
}

fn one() -> usize {
    1
}

impl LayerSpec {
    pub fn is_trainable(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }
}

/// Activation shape `(channels, height, width)`; dense outputs are `(n, 1, 1)`.
pub type Shape = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
    /// Learn per-output biases. Without them every trainable parameter
    /// lives on the crossbars.
    #[serde(default)]
    pub bias: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::reference(0)
    }
}

impl ModelSpec {
    /// The desk-scale CNN used throughout: two 3x3 convolutions with max
    /// pooling down to a 1x1 map, then a 4-way classifier.
    ///
    /// The second convolution is wide enough (288 x 128 unrolled) that tiling
    /// at 32 still separates filter pruning from segment pruning.
    pub fn reference(seed: u64) -> Self {
        let conv = |in_ch, out_ch| LayerSpec::Conv {
            in_ch,
            out_ch,
            kernel: 3,
            stride: 1,
            padding: 1,
        };
        ModelSpec {
            input: (1, 8, 8),
            layers: vec![
                conv(1, 32),
                LayerSpec::Relu,
                LayerSpec::Pool,
                conv(32, 128),
                LayerSpec::Relu,
                LayerSpec::Pool,
                LayerSpec::Pool,
                LayerSpec::Dense {
                    inputs: 128,
                    outputs: 4,
                },
            ],
            bias: false,
            seed,
        }
    }

    /// Input shape of every layer plus the final output shape.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let bad = |i: usize, msg: String| Err(Error::Config(format!("layer {i}: {msg}")));
        let mut shapes = vec![self.input];
        let mut cur = self.input;
        for (i, layer) in self.layers.iter().enumerate() {
            let (c, h, w) = cur;
            cur = match *layer {
                LayerSpec::Conv {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    padding,
                } => {
                    if in_ch != c {
                        return bad(i, format!("expects {in_ch} input channels, got {c}"));
                    }
                    if kernel == 0 || stride == 0 || out_ch == 0 {
                        return bad(i, "kernel, stride and out_ch must be >= 1".into());
                    }
                    if h + 2 * padding < kernel || w + 2 * padding < kernel {
                        return bad(
                            i,
                            format!("kernel {kernel} larger than padded {h}x{w} input"),
                        );
                    }
                    let oh = (h + 2 * padding - kernel) / stride + 1;
                    let ow = (w + 2 * padding - kernel) / stride + 1;
                    (out_ch, oh, ow)
                }
                LayerSpec::Dense { inputs, outputs } => {
                    if inputs != c * h * w {
                        return bad(i, format!("expects {inputs} inputs, got {}", c * h * w));
                    }
                    if outputs == 0 {
                        return bad(i, "outputs must be >= 1".into());
                    }
                    (outputs, 1, 1)
                }
                LayerSpec::Relu => cur,
                LayerSpec::Pool => {
                    if h < 2 || w < 2 {
                        return bad(i, format!("cannot pool a {h}x{w} map"));
                    }
                    (c, h / 2, w / 2)
                }
            };
            shapes.push(cur);
        }
        if !self.layers.iter().any(LayerSpec::is_trainable) {
            return Err(Error::Config("model has no trainable layer".into()));
        }
        Ok(shapes)
    }

    pub fn num_classes(&self) -> Result<usize> {
        let (c, h, w) = *self.shapes()?.last().expect("non-empty");
        Ok(c * h * w)
    }

    /// Indices into `layers` of the conv/dense layers, in order.
    pub fn trainable_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_trainable())
            .map(|(i, _)| i)
            .collect()
    }

    /// Unrolled weight-matrix geometry of each trainable layer.
    pub fn geometries(&self) -> Result<Vec<LayerGeometry>> {
        let shapes = self.shapes()?;
        Ok(self
            .trainable_indices()
            .into_iter()
            .map(|i| match self.layers[i] {
                LayerSpec::Conv {
                    in_ch,
                    out_ch,
                    kernel,
                    ..
                } => LayerGeometry {
                    rows: in_ch * kernel * kernel,
                    cols: out_ch,
                    rows_per_channel: kernel * kernel,
                },
                LayerSpec::Dense { inputs, outputs } => {
                    let (_, h, w) = shapes[i];
                    LayerGeometry {
                        rows: inputs,
                        cols: outputs,
                        rows_per_channel: h * w,
                    }
                }
                _ => unreachable!(),
            })
            .collect())
    }
}
