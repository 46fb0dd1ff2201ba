//! Binary little-endian checkpoint:
//!
//! ```text
//! magic[8] version:u32 n:u32 d:u32
//! enc_layers:u32 enc_dims:u32×(enc_layers+1)
//! dec_layers:u32 dec_dims:u32×(dec_layers+1)
//! scaling_mean:f64×n scaling_scale:f64×n
//! param_count:u64 params:f64×param_count
//! checksum:u64   (FNV-1a over every preceding byte)
//! ```

use std::path::Path;

use super::{KoopmanError, KoopmanModel, ObsScaling};
use crate::net::Mlp;
use crate::numlin::RealMatrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"KPFLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn to_bytes(model: &KoopmanModel) -> Vec<u8> {
    let params = model.params().values;
    let mut out = Vec::with_capacity(64 + 8 * (params.len() + 2 * model.n()));
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let u32s = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    u32s(&mut out, CHECKPOINT_VERSION as usize);
    u32s(&mut out, model.n());
    u32s(&mut out, model.d());
    for net in [&model.encoder, &model.decoder] {
        let dims = net.dims();
        u32s(&mut out, dims.len() - 1);
        for d in dims {
            u32s(&mut out, d);
        }
    }
    for v in model.scaling.mean.iter().chain(&model.scaling.scale) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in &params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, len: usize) -> Result<&[u8], KoopmanError> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| KoopmanError::Checkpoint("unexpected end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, KoopmanError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64, KoopmanError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>, KoopmanError> {
        let bytes = self.take(
            count
                .checked_mul(8)
                .ok_or_else(|| KoopmanError::Checkpoint("length overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn dims(&mut self) -> Result<Vec<usize>, KoopmanError> {
        let layers = self.u32()?;
        if layers == 0 || layers > 64 {
            return Err(KoopmanError::Checkpoint(format!(
                "implausible layer count {layers}"
            )));
        }
        (0..=layers).map(|_| self.u32()).collect()
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<KoopmanModel, KoopmanError> {
    let bad = |m: &str| KoopmanError::Checkpoint(m.to_string());
    if bytes.len() < CHECKPOINT_MAGIC.len() + 8 {
        return Err(bad("file too short"));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if fnv1a(body) != stored {
        return Err(bad("checksum mismatch (truncated or corrupt)"));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(KoopmanError::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let n = r.u32()?;
    let d = r.u32()?;
    let enc = r.dims()?;
    let dec = r.dims()?;
    if enc.first() != Some(&n)
        || enc.last() != Some(&d)
        || dec.first() != Some(&d)
        || dec.last() != Some(&n)
    {
        return Err(bad("layer dimensions disagree with n and d"));
    }
    let mean = r.f64s(n)?;
    let scale = r.f64s(n)?;
    let count = r.u64()? as usize;
    let params = r.f64s(count)?;
    if r.pos != body.len() {
        return Err(bad("trailing bytes after parameters"));
    }
    let mut model = KoopmanModel::new(
        Mlp::zeros(&enc)?,
        Mlp::zeros(&dec)?,
        RealMatrix::identity(d),
        ObsScaling { mean, scale },
    )?;
    model.set_params(&params)?;
    Ok(model)
}

/// Writes to a temporary sibling first so a crash never leaves a partial file.
pub fn save_checkpoint(model: &KoopmanModel, path: &Path) -> Result<(), KoopmanError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, to_bytes(model))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<KoopmanModel, KoopmanError> {
    from_bytes(&std::fs::read(path)?)
}
