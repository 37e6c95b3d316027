//! PLY point clouds: ASCII and binary (either byte order) reading of the
//! `vertex` element, and a writer for positions, colors and labels.
//!
//! Other elements are parsed and discarded, so files with faces load fine.
//! Recognized vertex properties are `x y z`, `red green blue` (also `r g b`)
//! and `label` (also `class`); anything else is skipped.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use oacnn_core::PointCloud;

use crate::error::{IoError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
    BinaryBigEndian,
}

impl PlyFormat {
    fn keyword(self) -> &'static str {
        match self {
            PlyFormat::Ascii => "ascii",
            PlyFormat::BinaryLittleEndian => "binary_little_endian",
            PlyFormat::BinaryBigEndian => "binary_big_endian",
        }
    }
}

/// How colors are stored on write. Reading accepts either.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColorType {
    /// `uchar`, `round(255 * c)`.
    U8,
    F32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlyWriteOptions {
    pub format: PlyFormat,
    pub color: ColorType,
}

impl Default for PlyWriteOptions {
    fn default() -> Self {
        Self { format: PlyFormat::BinaryLittleEndian, color: ColorType::U8 }
    }
}

/// Vertex data of a PLY file. Colors are in `[0, 1]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlyCloud {
    pub positions: Vec<[f64; 3]>,
    pub colors: Option<Vec<[f32; 3]>>,
    pub labels: Option<Vec<u16>>,
}

impl PlyCloud {
    /// Colors become the three features; without colors the cloud has zero
    /// feature channels.
    pub fn into_point_cloud(self) -> Result<PointCloud> {
        let (features, d) = match self.colors {
            Some(c) => (c.into_iter().flatten().collect(), 3),
            None => (Vec::new(), 0),
        };
        Ok(PointCloud::new(self.positions, features, d, self.labels)?)
    }

    /// Requires three feature channels, which are written as colors.
    pub fn from_point_cloud(pc: &PointCloud) -> Result<Self> {
        let colors = match pc.feature_dim() {
            0 => None,
            3 => Some(pc.features().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()),
            d => return Err(IoError::Format(format!("PLY stores 0 or 3 feature channels, cloud has {d}"))),
        };
        Ok(Self { positions: pc.positions().to_vec(), colors, labels: pc.labels().map(<[u16]>::to_vec) })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn is_float(self) -> bool {
        matches!(self, Scalar::F32 | Scalar::F64)
    }

    /// Full-scale value of integer color channels.
    fn color_scale(self) -> f64 {
        match self {
            Scalar::U16 => 65535.0,
            Scalar::U32 => u32::MAX as f64,
            _ => 255.0,
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar { ty: Scalar, name: String },
    List { count: Scalar, item: Scalar },
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: u64,
    props: Vec<Property>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Pos(usize),
    Color(usize),
    Label,
    Skip,
}

fn role(name: &str) -> Role {
    match name {
        "x" => Role::Pos(0),
        "y" => Role::Pos(1),
        "z" => Role::Pos(2),
        "red" | "r" => Role::Color(0),
        "green" | "g" => Role::Color(1),
        "blue" | "b" => Role::Color(2),
        "label" | "class" => Role::Label,
        _ => Role::Skip,
    }
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    bytes: u64,
    lines: usize,
}

fn read_header<R: BufRead>(r: &mut R) -> Result<Header> {
    let mut consumed = 0u64;
    let mut line_no = 0usize;
    let mut line = String::new();
    let mut next = |r: &mut R, line: &mut String| -> Result<(usize, u64)> {
        line.clear();
        let n = r.read_line(line)?;
        if n == 0 {
            return Err(IoError::ParseLine { line: line_no + 1, msg: "unexpected end of header".into() });
        }
        consumed += n as u64;
        line_no += 1;
        Ok((line_no, consumed))
    };
    let (ln, _) = next(r, &mut line)?;
    if line.trim_end() != "ply" {
        return Err(IoError::ParseLine { line: ln, msg: "missing 'ply' magic".into() });
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let (lines, bytes) = loop {
        let (ln, bytes) = next(r, &mut line)?;
        let bad = |msg: String| IoError::ParseLine { line: ln, msg };
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break (ln, bytes),
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, ver] => {
                if *ver != "1.0" {
                    return Err(bad(format!("unsupported PLY version {ver}")));
                }
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    "binary_big_endian" => PlyFormat::BinaryBigEndian,
                    _ => return Err(bad(format!("unknown format {f:?}"))),
                });
            }
            ["element", name, count] => {
                let count = count.parse().map_err(|_| bad(format!("bad element count {count:?}")))?;
                elements.push(Element { name: (*name).into(), count, props: Vec::new() });
            }
            ["property", "list", c, i, _] => {
                let (Some(count), Some(item)) = (Scalar::parse(c), Scalar::parse(i)) else {
                    return Err(bad(format!("unknown list types {c} {i}")));
                };
                if count.is_float() {
                    return Err(bad("list count type must be an integer".into()));
                }
                let el = elements.last_mut().ok_or_else(|| bad("property before any element".into()))?;
                el.props.push(Property::List { count, item });
            }
            ["property", t, name] => {
                let ty = Scalar::parse(t).ok_or_else(|| bad(format!("unknown property type {t:?}")))?;
                let el = elements.last_mut().ok_or_else(|| bad("property before any element".into()))?;
                el.props.push(Property::Scalar { ty, name: (*name).into() });
            }
            _ => return Err(bad(format!("unrecognized header line {:?}", line.trim_end()))),
        }
    };
    let format = format.ok_or(IoError::ParseLine { line: lines, msg: "header has no format line".into() })?;
    Ok(Header { format, elements, bytes, lines })
}

/// Pulls scalar values from the body in file order.
trait Source {
    fn value(&mut self, ty: Scalar) -> Result<f64>;
    /// Called after each element instance.
    fn end_record(&mut self) -> Result<()>;
}

struct Binary<R> {
    r: R,
    offset: u64,
    big: bool,
}

impl<R: Read> Source for Binary<R> {
    fn value(&mut self, ty: Scalar) -> Result<f64> {
        let mut b = [0u8; 8];
        let n = ty.size();
        self.r.read_exact(&mut b[..n]).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => {
                IoError::ParseByte { offset: self.offset, msg: "unexpected end of data".into() }
            }
            _ => IoError::Io(e),
        })?;
        self.offset += n as u64;
        if self.big {
            b[..n].reverse();
        }
        Ok(match ty {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b),
        })
    }

    fn end_record(&mut self) -> Result<()> {
        Ok(())
    }
}

struct Ascii<R> {
    r: R,
    line_no: usize,
    line: String,
    pos: usize,
}

impl<R: BufRead> Ascii<R> {
    fn bad(&self, msg: String) -> IoError {
        IoError::ParseLine { line: self.line_no, msg }
    }
}

impl<R: BufRead> Source for Ascii<R> {
    fn value(&mut self, ty: Scalar) -> Result<f64> {
        loop {
            let rest = &self.line[self.pos..];
            let trimmed = rest.trim_start();
            if !trimmed.is_empty() {
                let start = self.pos + rest.len() - trimmed.len();
                let end = trimmed.find(char::is_whitespace).map_or(self.line.len(), |e| start + e);
                let tok = &self.line[start..end];
                self.pos = end;
                let v: f64 = tok.parse().map_err(|_| self.bad(format!("bad number {tok:?}")))?;
                if !ty.is_float() && v.fract() != 0.0 {
                    return Err(self.bad(format!("expected an integer, got {tok:?}")));
                }
                return Ok(v);
            }
            self.line.clear();
            self.pos = 0;
            self.line_no += 1;
            if self.r.read_line(&mut self.line)? == 0 {
                return Err(self.bad("unexpected end of data".into()));
            }
        }
    }

    fn end_record(&mut self) -> Result<()> {
        if !self.line[self.pos..].trim().is_empty() {
            return Err(self.bad("extra values at end of record".into()));
        }
        self.pos = self.line.len();
        Ok(())
    }
}

fn read_body<S: Source>(src: &mut S, elements: &[Element]) -> Result<PlyCloud> {
    let mut cloud = PlyCloud::default();
    for el in elements {
        let is_vertex = el.name == "vertex";
        let roles: Vec<(Role, Scalar)> = el
            .props
            .iter()
            .map(|p| match p {
                Property::Scalar { ty, name } if is_vertex => (role(name), *ty),
                Property::Scalar { ty, .. } => (Role::Skip, *ty),
                Property::List { item, .. } => (Role::Skip, *item),
            })
            .collect();
        let mut seen = [false; 3];
        let mut has_color = [false; 3];
        let mut has_label = false;
        for (r, _) in &roles {
            match r {
                Role::Pos(a) => seen[*a] = true,
                Role::Color(c) => has_color[*c] = true,
                Role::Label => has_label = true,
                Role::Skip => {}
            }
        }
        if is_vertex {
            if seen != [true; 3] {
                return Err(IoError::Format("vertex element lacks x, y or z".into()));
            }
            let cap = el.count.min(1 << 24) as usize;
            cloud.positions.reserve(cap);
            if has_color == [true; 3] {
                cloud.colors = Some(Vec::with_capacity(cap));
            }
            if has_label {
                cloud.labels = Some(Vec::with_capacity(cap));
            }
        }
        for _ in 0..el.count {
            let mut pos = [0.0; 3];
            let mut col = [0.0f32; 3];
            let mut label = 0u16;
            for (p, (r, ty)) in el.props.iter().zip(&roles) {
                match p {
                    Property::List { count, item } => {
                        let n = src.value(*count)?;
                        if n < 0.0 {
                            return Err(IoError::Format(format!("negative list length in element {}", el.name)));
                        }
                        for _ in 0..n as u64 {
                            src.value(*item)?;
                        }
                    }
                    Property::Scalar { .. } => {
                        let v = src.value(*ty)?;
                        match r {
                            Role::Pos(a) => pos[*a] = v,
                            Role::Color(c) => {
                                col[*c] = if ty.is_float() { v as f32 } else { (v / ty.color_scale()) as f32 }
                            }
                            Role::Label => {
                                if !(0.0..=u16::MAX as f64).contains(&v) || v.fract() != 0.0 {
                                    return Err(IoError::Format(format!("label {v} is not a 16-bit class id")));
                                }
                                label = v as u16;
                            }
                            Role::Skip => {}
                        }
                    }
                }
            }
            src.end_record()?;
            if is_vertex {
                cloud.positions.push(pos);
                if let Some(c) = cloud.colors.as_mut() {
                    c.push(col);
                }
                if let Some(l) = cloud.labels.as_mut() {
                    l.push(label);
                }
            }
        }
    }
    Ok(cloud)
}

pub fn read_ply<R: BufRead>(mut r: R) -> Result<PlyCloud> {
    let h = read_header(&mut r)?;
    if !h.elements.iter().any(|e| e.name == "vertex") {
        return Err(IoError::Format("no vertex element".into()));
    }
    match h.format {
        PlyFormat::Ascii => {
            read_body(&mut Ascii { r, line_no: h.lines, line: String::new(), pos: 0 }, &h.elements)
        }
        PlyFormat::BinaryLittleEndian | PlyFormat::BinaryBigEndian => read_body(
            &mut Binary { r, offset: h.bytes, big: h.format == PlyFormat::BinaryBigEndian },
            &h.elements,
        ),
    }
}

pub fn read_ply_file(path: &Path) -> Result<PlyCloud> {
    let f = File::open(path).map_err(IoError::file(path))?;
    read_ply(BufReader::new(f))
}

fn put<W: Write>(w: &mut W, fmt: PlyFormat, v: Value) -> std::io::Result<()> {
    match fmt {
        PlyFormat::Ascii => match v {
            Value::F64(x) => write!(w, "{x}"),
            Value::F32(x) => write!(w, "{x}"),
            Value::U8(x) => write!(w, "{x}"),
            Value::U16(x) => write!(w, "{x}"),
        },
        PlyFormat::BinaryLittleEndian => match v {
            Value::F64(x) => w.write_all(&x.to_le_bytes()),
            Value::F32(x) => w.write_all(&x.to_le_bytes()),
            Value::U8(x) => w.write_all(&[x]),
            Value::U16(x) => w.write_all(&x.to_le_bytes()),
        },
        PlyFormat::BinaryBigEndian => match v {
            Value::F64(x) => w.write_all(&x.to_be_bytes()),
            Value::F32(x) => w.write_all(&x.to_be_bytes()),
            Value::U8(x) => w.write_all(&[x]),
            Value::U16(x) => w.write_all(&x.to_be_bytes()),
        },
    }
}

#[derive(Clone, Copy)]
enum Value {
    F64(f64),
    F32(f32),
    U8(u8),
    U16(u16),
}

/// Positions as `double`, colors as configured, labels as `ushort`.
pub fn write_ply<W: Write>(mut w: W, cloud: &PlyCloud, opts: PlyWriteOptions) -> Result<()> {
    let n = cloud.positions.len();
    if cloud.colors.as_ref().is_some_and(|c| c.len() != n) || cloud.labels.as_ref().is_some_and(|l| l.len() != n) {
        return Err(IoError::Format("color or label count differs from point count".into()));
    }
    writeln!(w, "ply\nformat {} 1.0\nelement vertex {n}", opts.format.keyword())?;
    writeln!(w, "property double x\nproperty double y\nproperty double z")?;
    if cloud.colors.is_some() {
        let t = match opts.color {
            ColorType::U8 => "uchar",
            ColorType::F32 => "float",
        };
        writeln!(w, "property {t} red\nproperty {t} green\nproperty {t} blue")?;
    }
    if cloud.labels.is_some() {
        writeln!(w, "property ushort label")?;
    }
    writeln!(w, "end_header")?;
    let ascii = opts.format == PlyFormat::Ascii;
    for i in 0..n {
        let mut vals: Vec<Value> = cloud.positions[i].iter().map(|&v| Value::F64(v)).collect();
        if let Some(c) = &cloud.colors {
            for &v in &c[i] {
                vals.push(match opts.color {
                    ColorType::U8 => Value::U8((v.clamp(0.0, 1.0) * 255.0).round() as u8),
                    ColorType::F32 => Value::F32(v),
                });
            }
        }
        if let Some(l) = &cloud.labels {
            vals.push(Value::U16(l[i]));
        }
        for (k, v) in vals.into_iter().enumerate() {
            if ascii && k > 0 {
                w.write_all(b" ")?;
            }
            put(&mut w, opts.format, v)?;
        }
        if ascii {
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_ply_file(path: &Path, cloud: &PlyCloud, opts: PlyWriteOptions) -> Result<()> {
    let f = File::create(path).map_err(IoError::file(path))?;
    write_ply(BufWriter::new(f), cloud, opts)
}
