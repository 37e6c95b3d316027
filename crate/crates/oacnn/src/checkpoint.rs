//! Model checkpoint container, little-endian throughout:
//!
//! ```text
//! magic       b"OACN"
//! version     u32                 (1)
//! config_len  u32, then that many bytes of the model config as compact JSON
//! count       u32 tensors, each:
//!   name_len u32, name (UTF-8)
//!   dtype    u8                   0 = f32
//!   kind     u8                   0 = trainable, 1 = running statistic
//!   ndim     u32, dims u64 x ndim
//!   offset   u64                  byte offset into the payload section
//! payload     f32 values of every tensor, in manifest order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use oacnn_core::network::{Model, ModelConfig};
use oacnn_core::ops::{ModelParams, ParamKind};
use oacnn_core::Matrix;

use crate::error::{IoError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OACN";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Decoded container: the stored config and tensors, not yet matched
/// against the layout that config implies.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
}

impl Checkpoint {
    /// Fails with a compatibility error if tensor names or shapes differ
    /// from what the config builds.
    pub fn into_model(self) -> Result<Model<f32>> {
        Ok(Model::from_params(self.config, self.params)?)
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &Model<f32>) -> Result<()> {
    let config = serde_json::to_vec(&model.config)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(config.len() as u32).to_le_bytes())?;
    w.write_all(&config)?;
    w.write_all(&(model.params.len() as u32).to_le_bytes())?;
    let mut offset = 0u64;
    for t in model.params.iter() {
        w.write_all(&(t.name().len() as u32).to_le_bytes())?;
        w.write_all(t.name().as_bytes())?;
        let kind = match t.kind() {
            ParamKind::Weight => 0u8,
            ParamKind::Buffer => 1,
        };
        w.write_all(&[DTYPE_F32, kind])?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&offset.to_le_bytes())?;
        offset += 4 * t.numel() as u64;
    }
    let mut buf = Vec::new();
    for t in model.params.iter() {
        buf.clear();
        for v in t.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    r: R,
    offset: u64,
}

impl<R: Read> Reader<R> {
    fn fill(&mut self, b: &mut [u8]) -> Result<()> {
        self.r.read_exact(b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => {
                IoError::ParseByte { offset: self.offset, msg: "checkpoint ends early".into() }
            }
            _ => IoError::Io(e),
        })?;
        self.offset += b.len() as u64;
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.fill(&mut b)?;
        Ok(b[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn vec(&mut self, n: usize) -> Result<Vec<u8>> {
        if n > 1 << 30 {
            return Err(self.bad("length field too large"));
        }
        let mut b = vec![0u8; n];
        self.fill(&mut b)?;
        Ok(b)
    }

    fn bad(&self, msg: impl Into<String>) -> IoError {
        IoError::ParseByte { offset: self.offset, msg: msg.into() }
    }
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Checkpoint> {
    let mut r = Reader { r, offset: 0 };
    let mut magic = [0u8; 4];
    r.fill(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(IoError::ParseByte { offset: 0, msg: "not an OACN checkpoint".into() });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.bad(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32()? as usize;
    let text = r.vec(len)?;
    let config: ModelConfig = serde_json::from_slice(&text).map_err(|e| r.bad(format!("config: {e}")))?;
    let count = r.u32()? as usize;
    struct Entry {
        name: String,
        kind: ParamKind,
        shape: Vec<usize>,
    }
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    let mut expected = 0u64;
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = String::from_utf8(r.vec(n)?).map_err(|_| r.bad("tensor name is not UTF-8"))?;
        if r.u8()? != DTYPE_F32 {
            return Err(r.bad(format!("{name}: only f32 tensors are supported")));
        }
        let kind = match r.u8()? {
            0 => ParamKind::Weight,
            1 => ParamKind::Buffer,
            k => return Err(r.bad(format!("{name}: unknown tensor kind {k}"))),
        };
        let ndim = r.u32()? as usize;
        if ndim == 0 || ndim > 8 {
            return Err(r.bad(format!("{name}: unsupported rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(usize::try_from(r.u64()?).map_err(|_| r.bad("dimension too large"))?);
        }
        let offset = r.u64()?;
        if offset != expected {
            return Err(r.bad(format!("{name}: payload offset {offset}, expected {expected}")));
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| r.bad("tensor too large"))?;
        expected += 4 * numel as u64;
        entries.push(Entry { name, kind, shape });
    }
    let mut params = ModelParams::new(config.seed);
    for e in entries {
        let numel: usize = e.shape.iter().product();
        let raw = r.vec(4 * numel)?;
        let vals: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let cols = *e.shape.last().expect("rank checked");
        let rows = if cols == 0 { 0 } else { numel / cols };
        params.register(e.name, &e.shape, e.kind, Matrix::from_vec(rows, cols, vals))?;
    }
    let mut tail = [0u8; 1];
    if r.r.read(&mut tail)? != 0 {
        return Err(r.bad("trailing bytes after payload"));
    }
    Ok(Checkpoint { config, params })
}

pub fn write_checkpoint_file(path: &Path, model: &Model<f32>) -> Result<()> {
    let f = File::create(path).map_err(IoError::file(path))?;
    write_checkpoint(BufWriter::new(f), model)
}

pub fn read_checkpoint_file(path: &Path) -> Result<Checkpoint> {
    let f = File::open(path).map_err(IoError::file(path))?;
    read_checkpoint(BufReader::new(f))
}

/// Reads a checkpoint and checks it against its own config's layout.
pub fn load_model(path: &Path) -> Result<Model<f32>> {
    read_checkpoint_file(path)?.into_model()
}
