//! Event-camera toolkit core: event streams, contrast-threshold simulation,
//! double-integral deblurring, latent-frame interpolation, voxel encoding,
//! blur synthesis and image metrics.

pub mod error;
pub mod event;
pub mod image;
pub mod io;
pub mod physical;
pub mod quality;
pub mod scenes;
pub mod simulator;
pub mod voxel;

pub use error::{Error, Result};
pub use event::{Event, EventStream, Polarity};
pub use image::{ExposedFrame, Frame, FrameSequence};
pub use physical::{
    blurry_interpolate, edi_deblur, fusion_weights, interpolate_latent, latent_frame, LatentQuery,
    LatentSource,
};
pub use quality::{charbonnier, psnr, ssim, synthesize_blur, BlurProtocol, BlurSynthesis};
pub use simulator::{estimate_threshold, simulate, SimConfig, ThresholdMode};
pub use voxel::{
    bidirectional_pair, exposure_voxel, voxelize, SubVoxel, VoxelGrid,
    EXPOSURE_VOXEL_BINS_DEFAULT,
};
