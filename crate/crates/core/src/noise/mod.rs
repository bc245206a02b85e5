//! Corruption models: pose-stream perception noise and 2D image augmentation.

pub mod image;
pub mod pose;

pub use self::image::{augment_image, ImageAugConfig};
pub use self::pose::{corrupt_stream, corrupt_stream_traced, init_episode, EpisodeNoiseState, PoseNoiseConfig};
