//! Pose-annotated synthetic image generation from Gaussian splat objects,
//! with augmentation applied to spherical-harmonic color coefficients
//! before rasterization.

pub mod augment;
pub mod cluster;
pub mod composite;
pub mod error;
pub mod geometry;
pub mod imageio;
pub mod labels;
pub mod noise;
pub mod par;
pub mod pipeline;
pub mod render;
pub mod rng;
pub mod scene;
pub mod sh;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{Camera, Pose};
pub use rng::SplitMix64;
pub use scene::GaussianScene;
