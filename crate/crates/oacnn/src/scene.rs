//! Voxelized scene container, all fields little-endian:
//!
//! ```text
//! magic     b"OAVX"
//! version   u32            (1)
//! n         u64            voxel count
//! d         u32            feature channels
//! voxel     f64            voxel size in meters
//! labels    u8             1 if a label block follows the features
//! coords    n x 3 i32      x y z, canonical order
//! features  n x d f32
//! labels    n u16          (optional)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use oacnn_core::{Matrix, SparseTensor, VoxelCoord};
use oacnn_core::geometry::VoxelScene;

use crate::error::{IoError, Result};

pub const SCENE_MAGIC: &[u8; 4] = b"OAVX";
pub const SCENE_VERSION: u32 = 1;

pub fn write_scene<W: Write>(mut w: W, scene: &VoxelScene) -> Result<()> {
    let t = &scene.tensor;
    if t.stride() != 1 || t.coords().iter().any(|c| c.batch != 0) {
        return Err(IoError::Format("scene files hold a single stride-1 scene".into()));
    }
    w.write_all(SCENE_MAGIC)?;
    w.write_all(&SCENE_VERSION.to_le_bytes())?;
    w.write_all(&(t.len() as u64).to_le_bytes())?;
    w.write_all(&(t.channels() as u32).to_le_bytes())?;
    w.write_all(&scene.voxel_size.to_le_bytes())?;
    w.write_all(&[scene.labels.is_some() as u8])?;
    let mut buf = Vec::with_capacity(t.len() * 12);
    for c in t.coords() {
        for v in c.xyz() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    buf.clear();
    for v in t.features().as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    if let Some(l) = &scene.labels {
        buf.clear();
        for v in l {
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
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.r.read_exact(&mut b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => {
                IoError::ParseByte { offset: self.offset, msg: "file ends early".into() }
            }
            _ => IoError::Io(e),
        })?;
        self.offset += N as u64;
        Ok(b)
    }

    fn bad(&self, msg: impl Into<String>) -> IoError {
        IoError::ParseByte { offset: self.offset, msg: msg.into() }
    }
}

pub fn read_scene<R: Read>(r: R) -> Result<VoxelScene> {
    let mut r = Reader { r, offset: 0 };
    if &r.bytes::<4>()? != SCENE_MAGIC {
        return Err(IoError::ParseByte { offset: 0, msg: "not an OAVX scene file".into() });
    }
    let version = u32::from_le_bytes(r.bytes()?);
    if version != SCENE_VERSION {
        return Err(r.bad(format!("unsupported scene version {version}")));
    }
    let n = u64::from_le_bytes(r.bytes()?);
    let d = u32::from_le_bytes(r.bytes()?) as usize;
    let voxel_size = f64::from_le_bytes(r.bytes()?);
    let has_labels = match r.bytes::<1>()?[0] {
        0 => false,
        1 => true,
        b => return Err(r.bad(format!("label flag must be 0 or 1, found {b}"))),
    };
    let n = usize::try_from(n).map_err(|_| r.bad("voxel count too large"))?;
    let mut coords = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        let x = i32::from_le_bytes(r.bytes()?);
        let y = i32::from_le_bytes(r.bytes()?);
        let z = i32::from_le_bytes(r.bytes()?);
        coords.push(VoxelCoord::new(0, x, y, z));
    }
    if coords.windows(2).any(|w| w[0] >= w[1]) {
        return Err(IoError::Format("scene coordinates are not in strictly increasing order".into()));
    }
    let mut feats = Vec::with_capacity((n * d).min(1 << 26));
    for _ in 0..n * d {
        feats.push(f32::from_le_bytes(r.bytes()?));
    }
    let labels = if has_labels {
        let mut l = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            l.push(u16::from_le_bytes(r.bytes()?));
        }
        Some(l)
    } else {
        None
    };
    let mut tail = [0u8; 1];
    if r.r.read(&mut tail)? != 0 {
        return Err(r.bad("trailing bytes after scene data"));
    }
    let tensor = SparseTensor::new(coords, Matrix::from_vec(n, d, feats), 1)?;
    Ok(VoxelScene { tensor, labels, voxel_size })
}

pub fn write_scene_file(path: &Path, scene: &VoxelScene) -> Result<()> {
    let f = File::create(path).map_err(IoError::file(path))?;
    write_scene(BufWriter::new(f), scene)
}

pub fn read_scene_file(path: &Path) -> Result<VoxelScene> {
    let f = File::open(path).map_err(IoError::file(path))?;
    read_scene(BufReader::new(f))
}
