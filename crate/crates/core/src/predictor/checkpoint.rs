use alloc::format;
use alloc::vec::Vec;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MTJRDCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Little-endian container: magic, version, configuration, parameter
/// count, then the parameters as `f64`.
pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let c = model.config();
    let p = model.params();
    let mut out = Vec::with_capacity(64 + 8 * p.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [c.input_size, c.patch_size, c.embed_dim, c.attr_dim, c.trunk_depth, c.branch_depth] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(c.shared_init as u8);
    out.extend_from_slice(&c.seed.to_le_bytes());
    out.extend_from_slice(&(p.len() as u64).to_le_bytes());
    for v in p {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let s = self
            .data
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::decode(self.pos, "checkpoint truncated"))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(data: &[u8]) -> Result<Model> {
    let mut r = Reader { data, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::decode(0, "not a checkpoint"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::decode(8, format!("unsupported checkpoint version {version}")));
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let shared_init = match r.take(1)?[0] {
        0 => false,
        1 => true,
        b => return Err(Error::decode(r.pos - 1, format!("bad flag byte {b}"))),
    };
    let seed = r.u64()?;
    let config = ModelConfig {
        input_size: dims[0],
        patch_size: dims[1],
        embed_dim: dims[2],
        attr_dim: dims[3],
        trunk_depth: dims[4],
        branch_depth: dims[5],
        shared_init,
        seed,
    };
    let n = r.u64()? as usize;
    if n.checked_mul(8) != Some(data.len() - r.pos) {
        return Err(Error::decode(r.pos, "parameter count does not match payload"));
    }
    let params = r.take(8 * n)?.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    Model::from_params(config, params)
}
