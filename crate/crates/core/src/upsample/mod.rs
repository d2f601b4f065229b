//! Range-image up-sampling: nearest and bilinear baselines, the SR generator
//! (residual blocks plus vertical subpixel shuffle) and discriminator, the
//! masked L-alpha objective, and adversarial training.

pub mod interp;
pub mod loss;
pub mod model;
pub mod train;

pub use crate::diff::conv::{subpixel_shuffle, subpixel_unshuffle};
pub use interp::{make_lr, upsample_bilinear, upsample_nearest};
pub use loss::sr_l_alpha_loss;
pub use model::{
    sr_discriminator_forward, sr_generator_forward, DiscriminatorParams, GeneratorParams,
    SRParams, UpsampleConfig,
};
pub use train::{train_upsampler, SrHistoryRow, SrTrainMode};
