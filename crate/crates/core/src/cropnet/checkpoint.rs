use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::CropNetConfig;
use super::model::{BlockSpec, CropNet};
use crate::blob::{read_bundle, write_bundle, Tensor};
use crate::error::{Error, Result};

const KIND: &str = "cropnet-checkpoint";

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: CropNetConfig,
    adam: AdamMeta,
}

fn tensors(model: &CropNet<f32>) -> Vec<Tensor> {
    let params = model.param_specs();
    let mut out = Vec::new();
    for (spec, data) in params.iter().zip(model.params()) {
        out.push(Tensor::new(
            spec.name.clone(),
            spec.shape.clone(),
            data.to_vec(),
        ));
    }
    for (spec, data) in model.buffer_specs().iter().zip(model.buffers()) {
        out.push(Tensor::new(
            spec.name.clone(),
            spec.shape.clone(),
            data.to_vec(),
        ));
    }
    for (moment, values) in [("m", &model.adam().m), ("v", &model.adam().v)] {
        for (spec, data) in params.iter().zip(values.iter()) {
            out.push(Tensor::new(
                format!("adam.{moment}.{}", spec.name),
                spec.shape.clone(),
                data.clone(),
            ));
        }
    }
    out
}

/// Writes config, parameters, running statistics and Adam state.
pub fn write_checkpoint<W: Write>(model: &CropNet<f32>, w: W) -> Result<()> {
    let a = model.adam();
    let meta = Meta {
        config: model.config().clone(),
        adam: AdamMeta {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            step: a.step,
        },
    };
    write_bundle(w, KIND, serde_json::to_value(meta)?, &tensors(model))
}

pub fn save_checkpoint(model: &CropNet<f32>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

fn expect_block(
    it: &mut impl Iterator<Item = Tensor>,
    spec: &BlockSpec,
    prefix: &str,
) -> Result<Vec<f32>> {
    let name = format!("{prefix}{}", spec.name);
    let t = it
        .next()
        .ok_or_else(|| Error::Shape(format!("checkpoint is missing block `{name}`")))?;
    if t.name != name || t.shape != spec.shape {
        return Err(Error::Shape(format!(
            "checkpoint block `{}` {:?} where `{name}` {:?} was expected",
            t.name, t.shape, spec.shape
        )));
    }
    Ok(t.data)
}

pub fn read_checkpoint<R: std::io::BufRead>(r: R) -> Result<CropNet<f32>> {
    let (manifest, blocks) = read_bundle(r)?;
    if manifest.kind != KIND {
        return Err(Error::CheckpointManifest(format!(
            "expected a checkpoint, found `{}`",
            manifest.kind
        )));
    }
    let meta: Meta = serde_json::from_value(manifest.meta)
        .map_err(|e| Error::CheckpointManifest(e.to_string()))?;
    let mut model = CropNet::<f32>::zeroed(meta.config)?;
    let params = model.param_specs();
    let buffers = model.buffer_specs();
    let expected = 3 * params.len() + buffers.len();
    if blocks.len() != expected {
        return Err(Error::Shape(format!(
            "checkpoint has {} blocks, model needs {expected}",
            blocks.len()
        )));
    }
    let mut it = blocks.into_iter();
    for (spec, dst) in params.iter().zip(model.params_mut()) {
        dst.copy_from_slice(&expect_block(&mut it, spec, "")?);
    }
    for (spec, dst) in buffers.iter().zip(model.buffers_mut()) {
        dst.copy_from_slice(&expect_block(&mut it, spec, "")?);
    }
    let mut m = Vec::with_capacity(params.len());
    for spec in &params {
        m.push(expect_block(&mut it, spec, "adam.m.")?);
    }
    let mut v = Vec::with_capacity(params.len());
    for spec in &params {
        v.push(expect_block(&mut it, spec, "adam.v.")?);
    }
    let adam = model.adam_mut();
    adam.lr = meta.adam.lr;
    adam.beta1 = meta.adam.beta1;
    adam.beta2 = meta.adam.beta2;
    adam.eps = meta.adam.eps;
    adam.step = meta.adam.step;
    adam.m = m;
    adam.v = v;
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<CropNet<f32>> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
