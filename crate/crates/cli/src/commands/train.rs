//! Toy training: AdamW on the joint depth + semantics loss with NearFarMix.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use symdepth_core::augment::{nearfarmix_batch, MixConfig, Sample};
use symdepth_core::data_io::{save_params, Manifest};
use symdepth_core::losses::{joint_loss, LossReport};
use symdepth_core::model::Model;
use symdepth_core::optim::AdamW;
use symdepth_core::params::ParamStore;
use symdepth_core::tensor::Tape;
use symdepth_core::Error;

use super::{check_input_size, load_samples, read_manifest};
use crate::batch::Batch;
use crate::{CliError, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub mixed: bool,
    pub loss: LossReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    /// Loss on the unaugmented training set before the first update.
    pub initial_clean: LossReport,
    /// Loss on the unaugmented training set after the last update.
    pub final_clean: LossReport,
    pub steps: Vec<StepLog>,
}

/// Test hooks.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrainHooks {
    /// Replace the loss at this step with NaN.
    pub poison_step: Option<usize>,
}

fn as_divergence(step: usize, e: CliError) -> CliError {
    match e {
        CliError::Core(Error::NonFinite { op, index, value }) => {
            CliError::Diverged { step, reason: format!("{op} produced {value} at index {index}") }
        }
        other => other,
    }
}

fn report_line(tag: &str, r: &LossReport) -> String {
    format!(
        "{tag} depth_loss={:.6} semantic_loss={:.6} total_loss={:.6}",
        r.depth_loss, r.semantic_loss, r.total_loss
    )
}

/// Mean loss over the unaugmented samples, in chunks of `batch_size`.
pub fn clean_loss(model: &Model, store: &ParamStore, samples: &[Sample], cfg: &RunConfig) -> Result<LossReport, CliError> {
    let (mut d, mut s) = (0.0, 0.0);
    let mut n = 0.0;
    for chunk in samples.chunks(cfg.batch_size) {
        let batch = Batch::from_samples(chunk)?;
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let out = model.forward(&p, tape.constant(batch.images))?;
        let (_, r) = joint_loss(out.depth, out.semantics, &batch.targets, &cfg.loss_config())?;
        let w = chunk.len() as f64;
        d += r.depth_loss * w;
        s += r.semantic_loss * w;
        n += w;
    }
    Ok(LossReport::new(d / n, s / n))
}

/// Trains on in-memory samples, logging one line per step to `log`.
pub fn train_samples(
    samples: &[Sample],
    mix: MixConfig,
    cfg: &RunConfig,
    hooks: TrainHooks,
    log: &mut dyn Write,
) -> Result<(ParamStore, TrainSummary), CliError> {
    if samples.len() < 2 {
        return Err(CliError::Config(format!("training needs at least 2 samples, got {}", samples.len())));
    }
    let model_cfg = cfg.model.to_config();
    check_input_size(samples, &model_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (model, mut store) = Model::new(model_cfg, &mut rng)?;
    let mut opt = AdamW::new(cfg.optimizer.to_config())?;
    let loss_cfg = cfg.loss_config();
    let w = |e: std::io::Error| CliError::io("<log>", e);

    let initial_clean = clean_loss(&model, &store, samples, cfg).map_err(|e| as_divergence(0, e))?;
    writeln!(log, "{}", report_line("initial_clean", &initial_clean)).map_err(w)?;

    let batch_size = cfg.batch_size.min(samples.len());
    let mut order: Vec<usize> = Vec::new();
    let mut steps = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut picked = Vec::with_capacity(batch_size);
        while picked.len() < batch_size {
            if order.is_empty() {
                order = (0..samples.len()).collect();
                order.shuffle(&mut rng);
            }
            picked.push(samples[order.pop().unwrap()].clone());
        }
        let mixed = nearfarmix_batch(&picked, &mix, &mut rng)?;
        let batch = Batch::from_samples(&mixed.samples)?;

        let tape = Tape::new();
        let p = store.bind(&tape);
        let (loss, report) = (|| -> Result<_, CliError> {
            let out = model.forward(&p, tape.constant(batch.images))?;
            Ok(joint_loss(out.depth, out.semantics, &batch.targets, &loss_cfg)?)
        })()
        .map_err(|e| as_divergence(step, e))?;
        let total = if hooks.poison_step == Some(step) { f64::NAN } else { report.total_loss };
        if !total.is_finite() {
            return Err(CliError::Diverged { step, reason: format!("total loss is {total}") });
        }
        let grads = tape.backward(loss).map_err(|e| as_divergence(step, e.into()))?;
        opt.step(&mut store, |name| p.get(name).ok().and_then(|v| grads.get(v)))?;

        let entry = StepLog { step, mixed: mixed.thresholds.is_some(), loss: report };
        writeln!(log, "{} mixed={}", report_line(&format!("step={step}"), &report), entry.mixed).map_err(w)?;
        steps.push(entry);
    }

    let final_clean = clean_loss(&model, &store, samples, cfg).map_err(|e| as_divergence(cfg.steps, e))?;
    writeln!(log, "{}", report_line("final_clean", &final_clean)).map_err(w)?;
    Ok((store, TrainSummary { initial_clean, final_clean, steps }))
}

/// Threshold bounds: config overrides, else the manifest's.
pub fn mix_config(cfg: &RunConfig, manifest: &Manifest) -> MixConfig {
    MixConfig {
        p_apply: cfg.augmentation.p_apply,
        depth_min: cfg.augmentation.depth_min.unwrap_or(manifest.depth_min),
        depth_max: cfg.augmentation.depth_max.unwrap_or(manifest.depth_max),
    }
}

pub fn run(
    manifest_path: &Path,
    out_params: &Path,
    cfg: &RunConfig,
    hooks: TrainHooks,
    log: &mut dyn Write,
) -> Result<TrainSummary, CliError> {
    let manifest = read_manifest(manifest_path)?;
    let samples = load_samples(&manifest, cfg.model.class_count)?;
    let (store, summary) = train_samples(&samples, mix_config(cfg, &manifest), cfg, hooks, log)?;
    save_params(out_params, &store)?;
    Ok(summary)
}
