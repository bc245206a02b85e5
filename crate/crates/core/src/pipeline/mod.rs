//! Job-level orchestration: dataset generation from a config and a
//! trajectory, timing, and evaluation of pose files.

pub mod bench;
pub mod config;
pub mod eval;
pub mod generate;

pub use bench::{bench, BenchReport};
pub use config::{BackgroundSpec, CameraSpec, JobConfig};
pub use eval::evaluate_files;
pub use generate::{generate, read_trajectory, render_frame, write_trajectory, Manifest, PreparedJob, TrajectoryFrame};
