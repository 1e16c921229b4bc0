//! Model files: one JSON header line, then each tensor as
//! `u32 name_len, name bytes, u32 count, count × f32` (little endian),
//! then a CRC-32 of everything before it.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layer::LayerSpec;
use super::Model;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    layers: Vec<LayerSpec>,
    metadata: BTreeMap<String, serde_json::Value>,
    tensors: Vec<TensorInfo>,
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

pub fn model_to_bytes(model: &Model) -> Result<Vec<u8>> {
    let all: Vec<_> = model
        .layers
        .iter()
        .flat_map(|l| l.params.iter().chain(&l.buffers))
        .collect();
    let header = Header {
        format_version: FORMAT_VERSION,
        layers: model.specs(),
        metadata: model.metadata.clone(),
        tensors: all
            .iter()
            .map(|p| TensorInfo {
                name: p.name.clone(),
                shape: p.shape.clone(),
            })
            .collect(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    for p in all {
        out.extend((p.name.len() as u32).to_le_bytes());
        out.extend(p.name.as_bytes());
        out.extend((p.value.len() as u32).to_le_bytes());
        for &v in &p.value {
            out.extend((v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend(crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Malformed("model file truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 4 {
        return Err(Error::Malformed("model file truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let nl = body
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Malformed("model header not terminated".into()))?;
    let header: Header = serde_json::from_slice(&body[..nl])?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let mut model = Model::new(header.layers, 0)?;
    model.metadata = header.metadata;

    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut r = Reader {
        buf: body,
        pos: nl + 1,
    };
    for info in &header.tensors {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Malformed("tensor name is not UTF-8".into()))?;
        if name != info.name {
            return Err(Error::Malformed(format!("expected tensor {}, found {name}", info.name)));
        }
        let count = r.u32()? as usize;
        if count != info.shape.iter().product::<usize>() {
            return Err(Error::Malformed(format!("tensor {name} has a wrong element count")));
        }
        let raw = r.take(count * 4)?;
        let vals = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        values.insert(name, vals);
    }
    if r.pos != body.len() {
        return Err(Error::Malformed("trailing bytes after tensors".into()));
    }
    for layer in &mut model.layers {
        for p in layer.params.iter_mut().chain(layer.buffers.iter_mut()) {
            let v = values
                .remove(&p.name)
                .ok_or_else(|| Error::Malformed(format!("missing tensor {}", p.name)))?;
            if v.len() != p.value.len() {
                return Err(Error::Malformed(format!("tensor {} has the wrong size", p.name)));
            }
            p.value = v;
        }
    }
    if let Some(extra) = values.keys().next() {
        return Err(Error::Malformed(format!("unexpected tensor {extra}")));
    }
    Ok(model)
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    let bytes = model_to_bytes(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}
