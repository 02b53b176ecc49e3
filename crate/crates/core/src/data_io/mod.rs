//! File formats: tensor containers, PNM images, dataset manifests, sample
//! loading, parameter directories and a synthetic scene generator.

mod container;
mod manifest;
mod pnm;
pub mod synth;

pub use container::{
    decode, depth_from_raw, depth_to_u16, encode, read_tensor, write_tensor, DType, MAGIC, U16_DEPTH_SCALE,
};
pub use manifest::{Manifest, Record};
pub use pnm::{decode_pnm, encode_pnm, read_image_pnm, write_image_pnm};

use std::fs;
use std::path::Path;

use crate::augment::Sample;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Name of the index file inside a parameter directory.
pub const PARAMS_INDEX: &str = "manifest.txt";

/// Accepts `[H, W]` or `[H, W, 1]` planes.
fn as_plane(t: Tensor) -> Result<Tensor> {
    match *t.shape() {
        [h, w] => t.reshape([h, w, 1]),
        [_, _, 1] => Ok(t),
        ref s => Err(Error::invalid(format!("expected an [H,W] or [H,W,1] plane, got {s:?}"))),
    }
}

fn read_labels(path: &Path, classes: usize) -> Result<Tensor> {
    let (dtype, raw) = read_tensor(path)?;
    if !matches!(dtype, DType::U8 | DType::U16) {
        return Err(Error::invalid(format!("{}: class masks must be u8 or u16", path.display())));
    }
    Ok(as_plane(raw)?.map(|v| v.min(classes as f64)))
}

/// Loads one triplet. Semantics come from the ground-truth mask, else the
/// teacher mask, else every pixel is the ignore label `classes`. Labels
/// `>= classes` are mapped to `classes`.
pub fn load_sample(record: &Record, classes: usize) -> Result<Sample> {
    let mut image = read_image_pnm(&record.image)?;
    if image.shape()[2] == 1 {
        let [h, w] = [image.shape()[0], image.shape()[1]];
        image = Tensor::from_fn([h, w, 3], |i| image.at(&[i[0], i[1], 0]));
    }
    let (dtype, raw) = read_tensor(&record.depth)?;
    let depth = as_plane(depth_from_raw(dtype, raw)?)?;
    let mask_path = record.gt_mask.as_ref().or(record.teacher_mask.as_ref());
    let semantics = match mask_path {
        Some(p) => read_labels(p, classes)?,
        None => Tensor::full(depth.shape().to_vec(), classes as f64),
    };
    let (hw_i, hw_d, hw_s) = (&image.shape()[..2], &depth.shape()[..2], &semantics.shape()[..2]);
    if hw_i != hw_d || hw_i != hw_s {
        return Err(Error::invalid(format!(
            "triplet dimensions disagree: image {:?}, depth {:?}, semantics {:?} ({})",
            image.shape(),
            depth.shape(),
            semantics.shape(),
            record.image.display()
        )));
    }
    Sample::new(image, depth, semantics)
}

/// Writes every parameter as an f64 container plus a `name<TAB>file` index.
pub fn save_params(dir: impl AsRef<Path>, store: &ParamStore) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = String::new();
    for (i, (name, t)) in store.iter().enumerate() {
        if name.contains(['\t', '\n']) {
            return Err(Error::invalid(format!("parameter name {name:?} has a tab or newline")));
        }
        let file = format!("p{i:05}.sdt");
        write_tensor(dir.join(&file), t, DType::F64)?;
        index.push_str(&format!("{name}\t{file}\n"));
    }
    let path = dir.join(PARAMS_INDEX);
    fs::write(&path, index).map_err(|e| Error::io(&path, e))
}

pub fn load_params(dir: impl AsRef<Path>) -> Result<ParamStore> {
    let dir = dir.as_ref();
    let path = dir.join(PARAMS_INDEX);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut store = ParamStore::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (name, file) = line
            .split_once('\t')
            .ok_or_else(|| Error::invalid(format!("{} line {}: expected name<TAB>file", path.display(), n + 1)))?;
        let (dtype, t) = read_tensor(dir.join(file))?;
        if dtype != DType::F64 {
            return Err(Error::invalid(format!("parameter {name} is stored as {dtype:?}, expected F64")));
        }
        store.insert(name, t)?;
    }
    Ok(store)
}

/// Loads parameters and checks they match `template` name for name and
/// shape for shape.
pub fn load_params_like(dir: impl AsRef<Path>, template: &ParamStore) -> Result<ParamStore> {
    let store = load_params(dir)?;
    let expected: Vec<(&str, &[usize])> = template.iter().map(|(n, t)| (n, t.shape())).collect();
    let found: Vec<(&str, &[usize])> = store.iter().map(|(n, t)| (n, t.shape())).collect();
    if expected != found {
        let diff = expected
            .iter()
            .zip(&found)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("expected {a:?}, found {b:?}"))
            .unwrap_or_else(|| format!("expected {} parameters, found {}", expected.len(), found.len()));
        return Err(Error::invalid(format!("parameter set does not match the model: {diff}")));
    }
    Ok(store)
}
