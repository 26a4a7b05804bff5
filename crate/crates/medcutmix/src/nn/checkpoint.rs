//! Versioned binary checkpoint format.
//!
//! Layout (little-endian):
//!   magic  b"MCMX"
//!   version u32 (currently 1)
//!   meta_len u64, meta: JSON {encoder config, vocab words}
//!   n_params u64, then per parameter:
//!     name_len u64, name utf8, ndim u64, dims u64..., values f64...

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::encoder::{EncoderConfig, Model, Vocab};
use crate::nn::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MCMX";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    encoder: EncoderConfig,
    vocab: Vec<String>,
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let meta = serde_json::to_vec(&Meta {
        encoder: model.cfg.clone(),
        vocab: model.vocab.words.clone(),
    })
    .map_err(|e| Error::Checkpoint(e.to_string()))?;
    buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta);
    buf.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    let names: Vec<String> = model.params.names().map(|s| s.to_string()).collect();
    for name in &names {
        let t = model.params.value(model.params.index(name));
        buf.extend_from_slice(&(name.len() as u64).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape.len() as u64).to_le_bytes());
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_u64(rd: &mut Cursor<&[u8]>) -> Result<u64> {
    let mut b = [0u8; 8];
    rd.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated checkpoint".into()))?;
    Ok(u64::from_le_bytes(b))
}

pub fn load(path: &Path) -> Result<Model> {
    let data = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rd = Cursor::new(data.as_slice());
    let mut magic = [0u8; 4];
    rd.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("truncated checkpoint".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut ver = [0u8; 4];
    rd.read_exact(&mut ver)
        .map_err(|_| Error::Checkpoint("truncated checkpoint".into()))?;
    if u32::from_le_bytes(ver) != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {}",
            u32::from_le_bytes(ver)
        )));
    }
    let meta_len = read_u64(&mut rd)? as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    rd.read_exact(&mut meta_bytes)
        .map_err(|_| Error::Checkpoint("truncated meta".into()))?;
    let meta: Meta =
        serde_json::from_slice(&meta_bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let vocab = Vocab::from_words(meta.vocab);
    let mut model = Model::new(meta.encoder, vocab)?;

    let n_params = read_u64(&mut rd)? as usize;
    for _ in 0..n_params {
        let name_len = read_u64(&mut rd)? as usize;
        let mut name = vec![0u8; name_len];
        rd.read_exact(&mut name)
            .map_err(|_| Error::Checkpoint("truncated name".into()))?;
        let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let ndim = read_u64(&mut rd)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut rd)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 8];
            rd.read_exact(&mut b)
                .map_err(|_| Error::Checkpoint("truncated values".into()))?;
            values.push(f64::from_le_bytes(b));
        }
        let idx = model.params.index(&name);
        let t = Tensor::from_vec(&shape, values)?;
        if t.shape != model.params.value(idx).shape {
            return Err(Error::Checkpoint(format!("shape mismatch for {name}")));
        }
        *model.params.value_mut(idx) = t;
    }
    Ok(model)
}
