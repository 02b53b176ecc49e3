//! Offline NearFarMix over a manifest.
//!
//! Samples are processed in consecutive batches of `batch_size`. For each
//! output `i` the directory holds `{i}_image.sdt` (f64), `{i}_depth.sdt`
//! (f64 meters), `{i}_semantics.sdt` (u16 labels), previews
//! `{i}_image.ppm` and `{i}_depth.pgm`, a `manifest.tsv` over the outputs and
//! `provenance.tsv` naming the near/far sources and threshold per output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use symdepth_core::augment::nearfarmix_batch;
use symdepth_core::data_io::{write_image_pnm, write_tensor, DType, Manifest, Record};

use super::train::mix_config;
use super::{load_samples, read_manifest};
use crate::{CliError, RunConfig};

pub const PROVENANCE: &str = "provenance.tsv";

#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub index: usize,
    pub near: usize,
    /// Source of the far region and the threshold, when mixed.
    pub far: Option<(usize, f64)>,
}

pub fn parse_provenance(text: &str) -> Result<Vec<Provenance>, CliError> {
    let bad = |l: &str| CliError::Check(format!("malformed provenance line {l:?}"));
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 4 {
                return Err(bad(l));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad(l));
            let far = match (f[2], f[3]) {
                ("-", "-") => None,
                (src, thr) => Some((num(src)?, thr.parse::<f64>().map_err(|_| bad(l))?)),
            };
            Ok(Provenance { index: num(f[0])?, near: num(f[1])?, far })
        })
        .collect()
}

pub fn run(manifest_path: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<Vec<Provenance>, CliError> {
    let manifest = read_manifest(manifest_path)?;
    let classes = cfg.model.class_count;
    let samples = load_samples(&manifest, classes)?;
    let mix = mix_config(cfg, &manifest);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;

    let mut provenance = Vec::with_capacity(samples.len());
    let mut records = Vec::with_capacity(samples.len());
    for (b, chunk) in samples.chunks(cfg.batch_size).enumerate() {
        let base = b * cfg.batch_size;
        let outcome = nearfarmix_batch(chunk, &mix, &mut rng)?;
        for (j, s) in outcome.samples.iter().enumerate() {
            let i = base + j;
            let far = outcome.thresholds.as_ref().map(|t| (base + (j + chunk.len() - 1) % chunk.len(), t[j]));
            provenance.push(Provenance { index: i, near: i, far });
            let file = |suffix: &str| out_dir.join(format!("{i:04}_{suffix}"));
            write_tensor(file("image.sdt"), &s.image, DType::F64)?;
            write_tensor(file("depth.sdt"), &s.depth, DType::F64)?;
            write_tensor(file("semantics.sdt"), &s.semantics, DType::U16)?;
            write_image_pnm(file("image.ppm"), &s.image)?;
            write_image_pnm(file("depth.pgm"), &s.depth.map(|d| d / manifest.max_depth))?;
            records.push(Record {
                image: file("image.ppm"),
                depth: file("depth.sdt"),
                teacher_mask: None,
                gt_mask: Some(file("semantics.sdt")),
            });
        }
    }

    let mut text = String::from("index\tnear_source\tfar_source\tthreshold\n");
    for p in &provenance {
        match p.far {
            // `{:?}` prints the shortest string that parses back to the same f64.
            Some((src, thr)) => writeln!(text, "{}\t{}\t{}\t{:?}", p.index, p.near, src, thr),
            None => writeln!(text, "{}\t{}\t-\t-", p.index, p.near),
        }
        .expect("writing to a String");
    }
    let path = out_dir.join(PROVENANCE);
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Manifest { records, ..manifest }.write(out_dir.join("manifest.tsv"))?;
    Ok(provenance)
}
