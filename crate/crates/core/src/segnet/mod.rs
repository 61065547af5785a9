//! Stage-2 segmentation network with a variational shape prior.
//!
//! Everything runs in `f64`. Convolutions go through `matrixmultiply`; the
//! rest are plain loops over `[channels][rows][cols]` buffers.

pub mod io;
pub mod layers;
pub mod loss;
mod infer;
mod model;
pub mod prior;
mod tensor;
mod train;
mod unet;

pub use infer::{argmax_classes, segment_crop, segment_slice, segment_study, shape_prior_terms, softmax, unet_forward};
pub use io::{decode_params, encode_params, load_params, save_params, PARAMS_MAGIC, PARAMS_VERSION};
pub use loss::{cross_entropy, soft_dice, total_loss};
pub use model::{Architecture, Gradients, Hyperparams, NetworkParams, TrainConfig};
pub use prior::{kl_divergence, PriorTerms, ShapePrior};
pub use tensor::Tensor;
pub use train::{backward, image_extent, sample_gradient, standardize, train, train_from, Adam, TrainOutcome};
pub use unet::{InferenceNet, Tape, UNet};
