//! Single-file binary farm store.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            8 bytes  "MIAFARM\0"
//! version          u32
//! input_dim        u32
//! num_classes      u32
//! activation       u8       0 = relu, 1 = tanh
//! n_hidden         u32
//! hidden_dims      u32 × n_hidden
//! master_seed      u64
//! fingerprint      u64      FNV-1a of the training dataset
//! n_models         u32
//! n_points         u64
//! splits           n_models rows of ceil(n_points / 8) bytes, bit j of
//!                  byte k is index 8k + j (LSB first)
//! per model:
//!   seed           u64
//!   split_id       u32
//!   n_params       u64
//!   params         f64 × n_params
//! ```
//!
//! The file must end exactly after the last model.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, ArchDescriptor, Params};
use crate::training::SplitMatrix;

use super::{ModelRecord, ShadowFarm};

pub const MAGIC: [u8; 8] = *b"MIAFARM\0";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_farm(farm: &ShadowFarm) -> Vec<u8> {
    let arch = &farm.arch;
    let mut out = Vec::with_capacity(64 + farm.len() * (20 + 8 * arch.param_count()));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(arch.input_dim as u32).to_le_bytes());
    out.extend_from_slice(&(arch.num_classes as u32).to_le_bytes());
    out.push(match arch.activation {
        Activation::Relu => 0,
        Activation::Tanh => 1,
    });
    out.extend_from_slice(&(arch.hidden_dims.len() as u32).to_le_bytes());
    for &h in &arch.hidden_dims {
        out.extend_from_slice(&(h as u32).to_le_bytes());
    }
    out.extend_from_slice(&farm.master_seed.to_le_bytes());
    out.extend_from_slice(&farm.fingerprint.to_le_bytes());
    out.extend_from_slice(&(farm.len() as u32).to_le_bytes());
    out.extend_from_slice(&(farm.n_points() as u64).to_le_bytes());
    for m in 0..farm.len() {
        for chunk in farm.splits.row(m).chunks(8) {
            let byte = chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (j, &b)| acc | (u8::from(b) << j));
            out.push(byte);
        }
    }
    for model in &farm.models {
        out.extend_from_slice(&model.seed.to_le_bytes());
        out.extend_from_slice(&(model.split_id as u32).to_le_bytes());
        out.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
        for v in model.params.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format(format!(
                "truncated farm store: need {n} bytes for {what} at offset {}, only {} remain",
                self.pos,
                self.buf.len() - self.pos
            ))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_farm(bytes: &[u8]) -> Result<ShadowFarm> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Format("bad magic: not a farm store".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let input_dim = r.u32("input_dim")? as usize;
    let num_classes = r.u32("num_classes")? as usize;
    let activation = match r.u8("activation")? {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        other => {
            return Err(Error::Format(format!("unknown activation tag {other}")));
        }
    };
    let n_hidden = r.u32("n_hidden")? as usize;
    let hidden_dims = (0..n_hidden)
        .map(|_| r.u32("hidden dim").map(|h| h as usize))
        .collect::<Result<Vec<_>>>()?;
    let arch = ArchDescriptor::new(input_dim, hidden_dims, num_classes, activation)
        .map_err(|e| Error::Format(format!("invalid architecture: {e}")))?;
    let master_seed = r.u64("master_seed")?;
    let fingerprint = r.u64("fingerprint")?;
    let n_models = r.u32("n_models")? as usize;
    let n_points = r.u64("n_points")? as usize;

    let row_bytes = n_points.div_ceil(8);
    let mut rows = Vec::with_capacity(n_models);
    for m in 0..n_models {
        let packed = r.take(row_bytes, "split row")?;
        let row: Vec<bool> = (0..n_points).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
        if n_points % 8 != 0 && packed[row_bytes - 1] >> (n_points % 8) != 0 {
            return Err(Error::Format(format!("split row {m} has padding bits set")));
        }
        rows.push(row);
    }
    let splits = SplitMatrix::from_rows(rows)?;

    let expected_params = arch.param_count();
    let mut models = Vec::with_capacity(n_models);
    for m in 0..n_models {
        let seed = r.u64("model seed")?;
        let split_id = r.u32("split id")? as usize;
        let n_params = r.u64("param count")? as usize;
        if n_params != expected_params {
            return Err(Error::Format(format!(
                "model {m} has {n_params} parameters, architecture needs {expected_params}"
            )));
        }
        let raw = r.take(8 * n_params, "parameters")?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let params = Params::from_vec(&arch, values)
            .map_err(|e| Error::Format(format!("model {m}: {e}")))?;
        models.push(ModelRecord {
            arch: arch.clone(),
            params,
            seed,
            split_id,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last model",
            bytes.len() - r.pos
        )));
    }
    ShadowFarm::new(fingerprint, arch, splits, models, master_seed)
}

pub fn save_farm(farm: &ShadowFarm, path: &Path) -> Result<()> {
    fs::write(path, encode_farm(farm)).map_err(|e| Error::io(path, e))
}

pub fn load_farm(path: &Path) -> Result<ShadowFarm> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_farm(&bytes)
}
