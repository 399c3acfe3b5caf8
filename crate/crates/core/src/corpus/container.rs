//! Binary container for checkpoints and cached feature matrices.
//!
//! Layout (all integers little-endian):
//!   magic "ENTS" | version u32 = 1 | kind u32 (1 checkpoint, 2 features)
//! Checkpoint body:
//!   spec JSON (u32 length + bytes) | summary JSON (u32 length + bytes) |
//!   tensor count u32 | tensors in parameter storage order, each weight
//!   matrix followed by its bias as a 1 x n tensor.
//! Features body:
//!   utterance id (u32 length + UTF-8) | frame_period f64 | one tensor.
//! Tensors are rows u32, cols u32, then rows*cols f32 values row-major.
//! Values round-trip bit-exactly; no rescaling or re-encoding happens.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::ioutil;
use crate::net::{NetworkSpec, Parameters};

pub const MAGIC: [u8; 4] = *b"ENTS";
pub const VERSION: u32 = 1;
const KIND_CHECKPOINT: u32 = 1;
const KIND_FEATURES: u32 = 2;

/// Provenance carried inside a checkpoint.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSummary {
    /// "initialized", "trained", "adapted-pass0", ...
    pub stage: String,
    /// Epochs actually run by the stage that produced these parameters.
    pub epochs: u32,
    /// CV frame error of the snapshot that was kept.
    pub cv_frame_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: Parameters<f32>,
    pub summary: TrainSummary,
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_blob(out: &mut Vec<u8>, blob: &[u8]) {
    push_u32(out, blob.len() as u32);
    out.extend_from_slice(blob);
}

fn push_tensor(out: &mut Vec<u8>, rows: usize, cols: usize, values: impl Iterator<Item = f32>) {
    push_u32(out, rows as u32);
    push_u32(out, cols as u32);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    data: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.data.len() {
            return Err(Error::input(format!(
                "{}: truncated container (needed {} bytes at offset {}, file has {})",
                self.path.display(),
                n,
                self.at,
                self.data.len()
            )));
        }
        let s = &self.data[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn blob(&mut self) -> Result<&'a [u8]> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    fn tensor(&mut self) -> Result<(usize, usize, Vec<f32>)> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let n = rows.checked_mul(cols).ok_or_else(|| {
            Error::input(format!(
                "{}: tensor dimensions overflow",
                self.path.display()
            ))
        })?;
        let raw = self.take(n * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((rows, cols, values))
    }

    fn finish(&self) -> Result<()> {
        if self.at != self.data.len() {
            return Err(Error::input(format!(
                "{}: {} trailing bytes after container payload",
                self.path.display(),
                self.data.len() - self.at
            )));
        }
        Ok(())
    }
}

fn open_container<'a>(path: &'a Path, data: &'a [u8], kind: u32) -> Result<Reader<'a>> {
    let mut r = Reader { data, at: 0, path };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::input(format!(
            "{}: bad container magic {:?}, expected \"ENTS\"",
            path.display(),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::input(format!(
            "{}: unsupported container version {version}, this build reads version {VERSION}",
            path.display()
        )));
    }
    let found = r.u32()?;
    if found != kind {
        let name = |k| match k {
            KIND_CHECKPOINT => "checkpoint",
            KIND_FEATURES => "features",
            _ => "unknown",
        };
        return Err(Error::input(format!(
            "{}: container holds {} (kind {found}), expected {} (kind {kind})",
            path.display(),
            name(found),
            name(kind)
        )));
    }
    Ok(r)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    ckpt.params.validate_shapes(&ckpt.spec)?;
    let spec_json = serde_json::to_vec(&ckpt.spec)
        .map_err(|e| Error::runtime(format!("serializing network spec: {e}")))?;
    let summary_json = serde_json::to_vec(&ckpt.summary)
        .map_err(|e| Error::runtime(format!("serializing train summary: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    push_u32(&mut out, VERSION);
    push_u32(&mut out, KIND_CHECKPOINT);
    push_blob(&mut out, &spec_json);
    push_blob(&mut out, &summary_json);
    let layers = ckpt.params.layers();
    push_u32(&mut out, 2 * layers.len() as u32);
    for layer in layers {
        push_tensor(
            &mut out,
            layer.w.nrows(),
            layer.w.ncols(),
            layer.w.iter().copied(),
        );
        push_tensor(&mut out, 1, layer.b.len(), layer.b.iter().copied());
    }
    ioutil::write_bytes(path, &out)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let data = ioutil::read_bytes(path)?;
    let mut r = open_container(path, &data, KIND_CHECKPOINT)?;
    let spec: NetworkSpec = serde_json::from_slice(r.blob()?)
        .map_err(|e| Error::input(format!("{}: invalid network spec: {e}", path.display())))?;
    spec.validate()?;
    let summary: TrainSummary = serde_json::from_slice(r.blob()?)
        .map_err(|e| Error::input(format!("{}: invalid train summary: {e}", path.display())))?;
    let count = r.u32()? as usize;
    let mut params: Parameters<f32> = Parameters::zeros_like(&spec)?;
    let layers = params.layers_mut();
    if count != 2 * layers.len() {
        return Err(Error::input(format!(
            "{}: checkpoint has {count} tensors, spec requires {}",
            path.display(),
            2 * layers.len()
        )));
    }
    for (i, layer) in layers.into_iter().enumerate() {
        let (rows, cols, values) = r.tensor()?;
        if rows != layer.w.nrows() || cols != layer.w.ncols() {
            return Err(Error::input(format!(
                "{}: tensor {i} is {rows}x{cols}, spec requires {}x{}",
                path.display(),
                layer.w.nrows(),
                layer.w.ncols()
            )));
        }
        for (dst, src) in layer.w.iter_mut().zip(values) {
            *dst = src;
        }
        let (brows, bcols, bvalues) = r.tensor()?;
        if brows != 1 || bcols != layer.b.len() {
            return Err(Error::input(format!(
                "{}: bias tensor {i} is {brows}x{bcols}, spec requires 1x{}",
                path.display(),
                layer.b.len()
            )));
        }
        for (dst, src) in layer.b.iter_mut().zip(bvalues) {
            *dst = src;
        }
    }
    r.finish()?;
    Ok(Checkpoint {
        spec,
        params,
        summary,
    })
}

pub fn save_features(path: &Path, features: &FeatureMatrix) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    push_u32(&mut out, VERSION);
    push_u32(&mut out, KIND_FEATURES);
    push_blob(&mut out, features.utterance_id.as_bytes());
    out.extend_from_slice(&features.frame_period.to_le_bytes());
    push_tensor(
        &mut out,
        features.frames.nrows(),
        features.frames.ncols(),
        features.frames.iter().copied(),
    );
    ioutil::write_bytes(path, &out)
}

pub fn load_features(path: &Path) -> Result<FeatureMatrix> {
    let data = ioutil::read_bytes(path)?;
    let mut r = open_container(path, &data, KIND_FEATURES)?;
    let id = String::from_utf8(r.blob()?.to_vec())
        .map_err(|_| Error::input(format!("{}: utterance id is not UTF-8", path.display())))?;
    let frame_period = r.f64()?;
    let (rows, cols, values) = r.tensor()?;
    r.finish()?;
    if rows == 0 || cols == 0 {
        return Err(Error::input(format!(
            "{}: empty feature matrix ({rows}x{cols})",
            path.display()
        )));
    }
    let frames = ndarray::Array2::from_shape_vec((rows, cols), values)
        .expect("vector length matches rows*cols by construction");
    Ok(FeatureMatrix {
        utterance_id: id,
        frames,
        frame_period,
    })
}
