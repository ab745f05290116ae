//! Versioned binary checkpoint container: a JSON header (config, topology,
//! patch groups) followed by named little-endian f64 parameter arrays.
//! Round trips are bit-exact.

use super::{MaskedAutoencoder, ModelConfig, ModelError, PatchScheme};
use crate::kinematics::SkeletonTopology;
use crate::numkit::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MMCP";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    topology: SkeletonTopology,
    scheme_name: String,
    scheme_groups: Vec<Vec<usize>>,
}

fn chk<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> Result<T, ModelError> {
    r.map_err(|e| ModelError::Checkpoint(e.to_string()))
}

/// Serialize the model to `path`. Writes to a temp file in the same
/// directory and renames, so readers never observe a partial file.
pub fn save_checkpoint(model: &MaskedAutoencoder, path: &Path) -> Result<(), ModelError> {
    let meta = Meta {
        model: model.config().clone(),
        topology: model.topology().clone(),
        scheme_name: model.scheme().name().to_string(),
        scheme_groups: model.scheme().groups().to_vec(),
    };
    let meta_json = chk(serde_json::to_vec(&meta))?;

    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta_json);
    buf.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (name, tensor) in model.params().iter() {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.push(tensor.shape().len() as u8);
        for &dim in tensor.shape() {
            buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            chk(fs::create_dir_all(dir))?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = chk(fs::File::create(&tmp))?;
        chk(f.write_all(&buf))?;
        chk(f.sync_all())?;
    }
    chk(fs::rename(&tmp, path))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.buf.len() {
            return Err(ModelError::Checkpoint("unexpected end of file".into()));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }
}

/// Load a model saved by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<MaskedAutoencoder, ModelError> {
    let mut buf = Vec::new();
    chk(chk(fs::File::open(path))?.read_to_end(&mut buf))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(ModelError::Checkpoint("bad magic, not a checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let meta_len = r.u32()? as usize;
    let meta: Meta = chk(serde_json::from_slice(r.take(meta_len)?))?;
    let scheme = PatchScheme::custom(
        meta.scheme_name,
        meta.topology.joint_count(),
        meta.scheme_groups,
    )?;
    let mut model = MaskedAutoencoder::with_scheme(meta.model, meta.topology, scheme, 0)?;

    let count = r.u32()? as usize;
    if count != model.params().len() {
        return Err(ModelError::Checkpoint(format!(
            "checkpoint has {} parameters, model expects {}",
            count,
            model.params().len()
        )));
    }
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = chk(std::str::from_utf8(r.take(name_len)?))?.to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let bytes = r.take(numel * 8)?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let slot = model
            .params_mut()
            .get_mut(&name)
            .ok_or_else(|| ModelError::Checkpoint(format!("unknown parameter {name}")))?;
        if slot.shape() != shape.as_slice() {
            return Err(ModelError::Checkpoint(format!(
                "parameter {name} has shape {:?}, expected {:?}",
                shape,
                slot.shape()
            )));
        }
        *slot = Tensor::new(shape, data)?;
    }
    if r.pos != buf.len() {
        return Err(ModelError::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok(model)
}
