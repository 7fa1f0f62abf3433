//! Model checkpoint format.
//!
//! Layout (all integers little-endian u32, floats little-endian f32):
//!
//! ```text
//! magic "ICC1"
//! repeated tensor records, in declared model order:
//!     name length, name (UTF-8), rank, dims[rank], data (prod(dims) f32)
//! crc32 (IEEE) of all preceding bytes
//! ```
//!
//! The first record is `config.k` (rank 1, one value): the neighbor count
//! is the only hyperparameter not recoverable from tensor shapes. All
//! remaining records are the model parameters; layer widths and the class
//! count are reconstructed from their dims on load.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{EdgeConvLayer, LinearLayer, Model, ModelConfig};

const MAGIC: &[u8; 4] = b"ICC1";

fn crc32(bytes: &[u8]) -> u32 {
    let mut table = [0u32; 256];
    for (i, slot) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 {
                0xEDB8_8320 ^ (c >> 1)
            } else {
                c >> 1
            };
        }
        *slot = c;
    }
    let mut crc = !0u32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    !crc
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, dims: &[usize], data: &[f32]) {
    put_u32(buf, name.len() as u32);
    buf.extend_from_slice(name.as_bytes());
    put_u32(buf, dims.len() as u32);
    for &d in dims {
        put_u32(buf, d as u32);
    }
    for &v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes a model to checkpoint bytes.
pub fn model_to_bytes(model: &Model) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_tensor(&mut buf, "config.k", &[1], &[model.config.k as f32]);
    for t in model.tensors() {
        put_tensor(&mut buf, &t.name, &t.dims, t.data);
    }
    let crc = crc32(&buf);
    put_u32(&mut buf, crc);
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> Result<u32> {
        if self.pos + 4 > self.bytes.len() {
            return Err(Error::BadCheckpoint("truncated".into()));
        }
        let v = u32::from_le_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.pos + len > self.bytes.len() {
            return Err(Error::BadCheckpoint("truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }
}

struct RawTensor {
    name: String,
    dims: Vec<usize>,
    data: Vec<f32>,
}

/// Deserializes checkpoint bytes into a model, verifying the CRC and the
/// declared tensor order.
pub fn model_from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < MAGIC.len() + 4 {
        return Err(Error::BadCheckpoint("file too short".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadCheckpoint("bad magic".into()));
    }
    let body_end = bytes.len() - 4;
    let stored_crc = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let actual_crc = crc32(&bytes[..body_end]);
    if stored_crc != actual_crc {
        return Err(Error::BadCheckpoint(format!(
            "crc mismatch: stored {stored_crc:08x}, computed {actual_crc:08x}"
        )));
    }

    let mut r = Reader {
        bytes: &bytes[..body_end],
        pos: 4,
    };
    let mut tensors = Vec::new();
    while r.pos < body_end {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::BadCheckpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        if rank > 4 {
            return Err(Error::BadCheckpoint(format!("implausible rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let count: usize = dims.iter().product();
        let raw = r.take(count * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(RawTensor { name, dims, data });
    }

    rebuild(tensors)
}

fn rebuild(tensors: Vec<RawTensor>) -> Result<Model> {
    let mut it = tensors.into_iter();
    let k_tensor = it
        .next()
        .ok_or_else(|| Error::BadCheckpoint("empty checkpoint".into()))?;
    if k_tensor.name != "config.k" || k_tensor.data.len() != 1 {
        return Err(Error::BadCheckpoint("missing config.k record".into()));
    }
    let k = k_tensor.data[0] as usize;

    let rest: Vec<RawTensor> = it.collect();
    let take_matrix = |t: &RawTensor| -> Result<(usize, usize, Vec<f32>)> {
        if t.dims.len() != 2 {
            return Err(Error::BadCheckpoint(format!("{} is not a matrix", t.name)));
        }
        Ok((t.dims[0], t.dims[1], t.data.clone()))
    };
    let take_vector = |t: &RawTensor, expect: usize| -> Result<Vec<f32>> {
        if t.dims.len() != 1 || t.dims[0] != expect {
            return Err(Error::BadCheckpoint(format!("{} has bad shape", t.name)));
        }
        Ok(t.data.clone())
    };

    let mut embed = Vec::new();
    let mut edge = Vec::new();
    let mut head = Vec::new();
    let mut i = 0;
    while i < rest.len() && rest[i].name == format!("embed.{}.weight", embed.len()) {
        let (out_dim, in_dim, weight) = take_matrix(&rest[i])?;
        let bias_name = format!("embed.{}.bias", embed.len());
        let bias_t = rest
            .get(i + 1)
            .filter(|t| t.name == bias_name)
            .ok_or_else(|| Error::BadCheckpoint(format!("missing {bias_name}")))?;
        let bias = take_vector(bias_t, out_dim)?;
        embed.push(LinearLayer {
            weight,
            bias,
            in_dim,
            out_dim,
        });
        i += 2;
    }
    while i < rest.len() && rest[i].name == format!("edge.{}.theta_diff", edge.len()) {
        let (out_dim, in_dim, theta_diff) = take_matrix(&rest[i])?;
        let center_name = format!("edge.{}.theta_center", edge.len());
        let center_t = rest
            .get(i + 1)
            .filter(|t| t.name == center_name)
            .ok_or_else(|| Error::BadCheckpoint(format!("missing {center_name}")))?;
        let (co, ci, theta_center) = take_matrix(center_t)?;
        if (co, ci) != (out_dim, in_dim) {
            return Err(Error::BadCheckpoint(format!("{center_name} shape differs")));
        }
        edge.push(EdgeConvLayer {
            theta_diff,
            theta_center,
            in_dim,
            out_dim,
        });
        i += 2;
    }
    while i < rest.len() && rest[i].name == format!("head.{}.weight", head.len()) {
        let (out_dim, in_dim, weight) = take_matrix(&rest[i])?;
        let bias_name = format!("head.{}.bias", head.len());
        let bias_t = rest
            .get(i + 1)
            .filter(|t| t.name == bias_name)
            .ok_or_else(|| Error::BadCheckpoint(format!("missing {bias_name}")))?;
        let bias = take_vector(bias_t, out_dim)?;
        head.push(LinearLayer {
            weight,
            bias,
            in_dim,
            out_dim,
        });
        i += 2;
    }
    if i != rest.len() {
        return Err(Error::BadCheckpoint(format!(
            "unexpected tensor {}",
            rest[i].name
        )));
    }
    if embed.is_empty() || edge.is_empty() || head.is_empty() {
        return Err(Error::BadCheckpoint("incomplete model".into()));
    }

    let mut embed_widths = vec![embed[0].in_dim];
    embed_widths.extend(embed.iter().map(|l| l.out_dim));
    let edge_widths: Vec<usize> = edge.iter().map(|l| l.out_dim).collect();
    let head_widths: Vec<usize> = head[..head.len() - 1].iter().map(|l| l.out_dim).collect();
    let classes = head.last().unwrap().out_dim;
    let config = ModelConfig::new(k, embed_widths, edge_widths, head_widths, classes)
        .map_err(|e| Error::BadCheckpoint(format!("inconsistent architecture: {e}")))?;

    // Cross-check derived input widths against the stored matrices.
    for (l, layer) in edge.iter().enumerate() {
        if layer.in_dim != config.edge_input_width(l) {
            return Err(Error::BadCheckpoint(format!(
                "edge.{l} input width {} does not match architecture {}",
                layer.in_dim,
                config.edge_input_width(l)
            )));
        }
    }
    if head[0].in_dim != config.pooled_width() {
        return Err(Error::BadCheckpoint("head input width mismatch".into()));
    }

    Ok(Model {
        embed,
        edge,
        head,
        config,
    })
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}
