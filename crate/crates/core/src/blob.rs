//! Tensor bundle file format shared by checkpoints and feature exports.
//!
//! Layout: 6-byte magic `CRPNET`, little-endian `u16` version, one line of
//! JSON (the manifest, terminated by `\n`), then every block's values as
//! contiguous little-endian `f32` in manifest order.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"CRPNET";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub meta: serde_json::Value,
    pub blocks: Vec<BlockInfo>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Tensor {
            name: name.into(),
            shape,
            data,
        }
    }
}

pub fn write_bundle<W: Write>(
    mut w: W,
    kind: &str,
    meta: serde_json::Value,
    tensors: &[Tensor],
) -> Result<()> {
    let mut blocks = Vec::with_capacity(tensors.len());
    for t in tensors {
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::Shape(format!(
                "block `{}` has shape {:?} but {} values",
                t.name,
                t.shape,
                t.data.len()
            )));
        }
        blocks.push(BlockInfo {
            name: t.name.clone(),
            shape: t.shape.clone(),
        });
    }
    let manifest = Manifest {
        kind: kind.to_string(),
        meta,
        blocks,
    };
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(serde_json::to_string(&manifest)?.as_bytes())?;
    w.write_all(b"\n")?;
    let mut buf = Vec::new();
    for t in tensors {
        buf.clear();
        buf.reserve(t.data.len() * 4);
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_bundle<R: BufRead>(mut r: R) -> Result<(Manifest, Vec<Tensor>)> {
    let mut header = [0u8; 8];
    r.read_exact(&mut header)
        .map_err(|_| Error::CheckpointVersion)?;
    if &header[..6] != MAGIC || u16::from_le_bytes([header[6], header[7]]) != VERSION {
        return Err(Error::CheckpointVersion);
    }
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::CheckpointTruncated);
    }
    let manifest: Manifest =
        serde_json::from_slice(&line).map_err(|e| Error::CheckpointManifest(e.to_string()))?;
    let mut tensors = Vec::with_capacity(manifest.blocks.len());
    for b in &manifest.blocks {
        let n: usize = b.shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::CheckpointTruncated,
            _ => Error::Io(e),
        })?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(Tensor::new(b.name.clone(), b.shape.clone(), data));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::CheckpointManifest(
            "trailing bytes after payload".into(),
        ));
    }
    Ok((manifest, tensors))
}
