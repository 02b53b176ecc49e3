//! Evaluation of a parameter directory over a manifest.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use symdepth_core::augment::Sample;
use symdepth_core::data_io::load_params_like;
use symdepth_core::metrics::{argmax_last, Confusion, DepthAccumulator, MetricsReport};
use symdepth_core::model::Model;
use symdepth_core::params::ParamStore;
use symdepth_core::tensor::{Tape, Tensor};

use super::{check_input_size, load_samples, read_manifest};
use crate::batch::{unstack, Batch};
use crate::{CliError, RunConfig};

/// Where predictions come from.
pub enum Predictor<'a> {
    Model(&'a Model, &'a ParamStore),
    /// Ground truth used as the prediction (test hook).
    Oracle,
}

fn valid_mask(depth: &Tensor) -> Tensor {
    depth.map(|d| if d > 0.0 { 1.0 } else { 0.0 })
}

/// Pools metrics over all valid pixels of all samples.
pub fn evaluate(samples: &[Sample], classes: usize, predictor: Predictor<'_>, batch_size: usize) -> Result<MetricsReport, CliError> {
    let mut depth_acc = DepthAccumulator::default();
    let mut conf = Confusion::new(classes);
    for chunk in samples.chunks(batch_size.max(1)) {
        let (depths, classes_pred): (Vec<Tensor>, Vec<Vec<usize>>) = match predictor {
            Predictor::Oracle => chunk
                .iter()
                .map(|s| (s.depth.clone(), s.semantics.data().iter().map(|&l| (l as usize).min(classes - 1)).collect()))
                .unzip(),
            Predictor::Model(model, store) => {
                let batch = Batch::from_samples(chunk)?;
                let tape = Tape::new();
                let p = store.bind_frozen(&tape);
                let out = model.forward(&p, tape.constant(batch.images))?;
                let depths = unstack(&out.depth.value())?;
                let sems = unstack(&out.semantics.value())?.iter().map(argmax_last).collect();
                (depths, sems)
            }
        };
        for ((s, d), c) in chunk.iter().zip(&depths).zip(&classes_pred) {
            depth_acc.add(d, &s.depth, &valid_mask(&s.depth))?;
            let gt: Vec<usize> = s.semantics.data().iter().map(|&l| l as usize).collect();
            conf.add(c, &gt)?;
        }
    }
    Ok(MetricsReport { depth: depth_acc.finish()?, miou: conf.miou()? })
}

pub fn run(manifest_path: &Path, params_dir: Option<&Path>, cfg: &RunConfig, oracle: bool) -> Result<MetricsReport, CliError> {
    let manifest = read_manifest(manifest_path)?;
    let classes = cfg.model.class_count;
    let samples = load_samples(&manifest, classes)?;
    if oracle {
        return evaluate(&samples, classes, Predictor::Oracle, cfg.batch_size);
    }
    let params_dir = params_dir.ok_or_else(|| CliError::Usage("eval needs --params unless --oracle is given".into()))?;
    let model_cfg = cfg.model.to_config();
    check_input_size(&samples, &model_cfg)?;
    let (model, template) = Model::new(model_cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let store = load_params_like(params_dir, &template)?;
    evaluate(&samples, classes, Predictor::Model(&model, &store), cfg.batch_size)
}
