pub mod augment;
pub mod eval;
pub mod gradcheck;
pub mod synth;
pub mod train;

use std::path::Path;

use symdepth_core::augment::Sample;
use symdepth_core::data_io::{load_sample, Manifest};
use symdepth_core::model::ModelConfig;

use crate::CliError;

/// Loads every record of a manifest.
pub fn load_samples(manifest: &Manifest, classes: usize) -> Result<Vec<Sample>, CliError> {
    manifest.records.iter().map(|r| load_sample(r, classes).map_err(CliError::from)).collect()
}

pub fn read_manifest(path: &Path) -> Result<Manifest, CliError> {
    Ok(Manifest::read(path)?)
}

/// Checks that every sample matches the model input size.
pub fn check_input_size(samples: &[Sample], cfg: &ModelConfig) -> Result<(), CliError> {
    for (i, s) in samples.iter().enumerate() {
        if (s.height(), s.width()) != (cfg.height, cfg.width) {
            return Err(CliError::Config(format!(
                "sample {i} is {}x{} but the model expects {}x{}",
                s.height(),
                s.width(),
                cfg.height,
                cfg.width
            )));
        }
    }
    Ok(())
}
