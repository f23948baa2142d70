//! Network building blocks: the coarse-to-fine block, the U-Net denoiser and
//! receptive-field probing.

pub mod block;
pub mod init;
pub mod probe;
pub mod unet;

pub use block::{c2f_block, BlockSpec, C2fWeights, COARSE_DILATIONS};
pub use probe::{
    expected_ladder, receptive_field_ladder, receptive_field_probe, receptive_field_probe_many,
    Footprint, LadderReport,
};
pub use unet::{timestep_embedding, Conditioning, Denoiser, NetworkSpec};
