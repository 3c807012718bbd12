//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes  "AVQACKPT"
//! version  u32
//! config   u32 length, then `key = value` UTF-8 text
//! count    u32
//! per tensor:
//!   name   u16 length, then UTF-8
//!   rank   u8, then rank × u32 dims
//!   values product(dims) × f64
//! ```
//!
//! Values are stored bit-exactly, so a save/load round trip reproduces
//! predictions exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::codec::Cursor;
use crate::error::{Error, Result};
use crate::layers::Parameterized;
use crate::numerics::Tensor;

use super::{Model, ModelConfig, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AVQACKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, model: &Model) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let cfg = model.config().to_kv();
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(cfg.as_bytes())?;
    let params = model.params().named_params();
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[t.shape().len() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), model)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor::new(&buf);

    if c.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "not a checkpoint (bad magic)".into(),
        });
    }
    let at = c.offset();
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: at,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let len = c.u32("config length")? as usize;
    let at = c.offset();
    let cfg = ModelConfig::from_kv(c.utf8(len, "config")?).map_err(|e| Error::Format {
        offset: at,
        message: format!("bad config echo: {e}"),
    })?;

    let mut params = ModelParams::zeros(&cfg);
    let expected: Vec<(String, Vec<usize>)> = params
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let at = c.offset();
    let count = c.u32("tensor count")? as usize;
    if count != expected.len() {
        return Err(Error::Format {
            offset: at,
            message: format!("expected {} tensors, found {count}", expected.len()),
        });
    }

    let mut loaded = Vec::with_capacity(count);
    for (want_name, want_shape) in &expected {
        let at = c.offset();
        let name_len = c.u16("tensor name length")? as usize;
        let name = c.utf8(name_len, "tensor name")?;
        if name != want_name {
            return Err(Error::Format {
                offset: at,
                message: format!("expected tensor `{want_name}`, found `{name}`"),
            });
        }
        let at = c.offset();
        let rank = c.u8("rank")? as usize;
        let shape = (0..rank)
            .map(|_| c.u32("dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if &shape != want_shape {
            return Err(Error::Format {
                offset: at,
                message: format!("tensor `{name}` has shape {shape:?}, expected {want_shape:?}"),
            });
        }
        let values = c.f64s(shape.iter().product(), "tensor values")?;
        loaded.push(Tensor::new(shape, values)?.with_requires_grad(true));
    }
    c.finish()?;

    for (slot, t) in params.params_mut().into_iter().zip(loaded) {
        *slot = t;
    }
    Model::from_parts(cfg, params)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
