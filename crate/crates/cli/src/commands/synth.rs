//! Synthetic dataset generation.

use std::path::{Path, PathBuf};

use symdepth_core::data_io::synth::{write_dataset, SynthConfig};

use crate::{CliError, RunConfig};

/// Writes `count` scenes at the model input size; returns the manifest path.
pub fn run(out_dir: &Path, count: usize, teacher_every: usize, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let m = cfg.model.to_config();
    let synth = SynthConfig {
        teacher_every,
        max_depth: m.max_depth,
        ..SynthConfig::indoor(count, m.height, m.width, m.class_count)
    };
    let (lo, hi) = (synth.depth_min, synth.depth_max);
    let synth = SynthConfig {
        depth_min: cfg.augmentation.depth_min.unwrap_or(lo),
        depth_max: cfg.augmentation.depth_max.unwrap_or(hi),
        ..synth
    };
    Ok(write_dataset(out_dir, &synth, cfg.seed)?)
}
