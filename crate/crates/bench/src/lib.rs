//! Shared fixtures for the pipeline benchmarks.

use sega_core::tensorio::{generate_latent, TrajectoryConfig};
use sega_core::LatentGrid;

/// Final-step latent of the default trajectory at `side x side`.
pub fn latent(side: usize) -> LatentGrid {
    let cfg = TrajectoryConfig {
        height: side,
        width: side,
        ..TrajectoryConfig::default()
    };
    generate_latent(&cfg, cfg.steps - 1).expect("default trajectory is valid")
}
