mod conv;
mod data;
mod model;
mod spec;
mod train;

pub use conv::{col2im, im2col, reroll_conv, unroll_conv, ConvGeom};
pub use data::{gen_synthetic_dataset, Dataset, Split, IMAGE_SIZE, NUM_CLASSES, PIXEL_NOISE};
pub use model::{Grads, Model};
pub use spec::{LayerSpec, ModelSpec, Shape};
pub use train::{
    evaluate, inject_nonideal_weights, train, wct_clamp, wct_cutoff, wct_layer_cutoffs, wct_train,
    TrainConfig, TrainOutcome, WctConfig, WctOutcome,
};
