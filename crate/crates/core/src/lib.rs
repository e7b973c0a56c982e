//! Scene-adaptive snapshot hyperspectral imaging toolkit.
//!
//! The crate simulates and reconstructs a snapshot hyperspectral camera that
//! pairs an RGB guide sensor with a dispersive spectral arm behind a
//! programmable mask. The processing chain:
//!
//! 1. Render an RGB/gray guide from a hyperspectral cube (`cube`).
//! 2. Segment the guide into superpixels (`superpixel`).
//! 3. Generate a conflict-free sampling mask adapted to the segmentation
//!    (`maskgen`).
//! 4. Simulate the dispersive sensor with blur, mask-leakage offset, and
//!    photon/read noise (`dispersion`, `sensor`, `offset`).
//! 5. Demultiplex the sampled spectra and fuse them with the guide image
//!    using rank-1 propagation, masked guided filtering, or a small
//!    filter-network (`recon`, `guided`, `filternet`).
//! 6. Score results with PSNR/SSIM/SAM and superpixel homogeneity statistics
//!    (`metrics`).
//!
//! `pipeline` ties the stages into reproducible end-to-end experiments and
//! `video` runs the lock-step multi-frame variant where each frame's mask is
//! derived from the previous frame's guide.

pub mod color;
pub mod cube;
pub mod dispersion;
pub mod error;
pub mod filternet;
pub mod guided;
pub mod io;
pub mod mask;
pub mod maskgen;
pub mod metrics;
pub mod offset;
pub mod pipeline;
pub mod recon;
pub mod rng;
pub mod sensor;
pub mod sparse;
pub mod superpixel;
pub mod synth;
pub mod video;

pub use cube::{GrayImage, GuideImage, HsiCube, SpectralResponse};
pub use dispersion::{DispersionModel, NoiseParams};
pub use error::{Error, Result};
pub use mask::SamplingMask;
pub use maskgen::{MaskGenParams, MaskGenStats};
pub use metrics::EvalReport;
pub use recon::Method;
pub use sensor::SensorImage;
pub use superpixel::{SlicParams, SuperpixelMap};
