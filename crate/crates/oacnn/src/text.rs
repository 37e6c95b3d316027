//! Whitespace-separated points, one per line: `x y z r g b [label]` with
//! colors on a 0-255 scale. Blank lines and `#` comments are ignored. Either
//! every point has a label or none does.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use oacnn_core::PointCloud;

use crate::error::{IoError, Result};

pub fn read_points<R: BufRead>(r: R) -> Result<PointCloud> {
    let mut positions = Vec::new();
    let mut features = Vec::new();
    let mut labels: Option<Vec<u16>> = None;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let ln = i + 1;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let bad = |msg: String| IoError::ParseLine { line: ln, msg };
        let tok: Vec<&str> = body.split_whitespace().collect();
        if tok.len() != 6 && tok.len() != 7 {
            return Err(bad(format!("expected 6 or 7 columns, found {}", tok.len())));
        }
        let num = |k: usize| tok[k].parse::<f64>().map_err(|_| bad(format!("bad number {:?}", tok[k])));
        positions.push([num(0)?, num(1)?, num(2)?]);
        for k in 3..6 {
            features.push((num(k)? / 255.0) as f32);
        }
        let has = tok.len() == 7;
        if positions.len() == 1 {
            labels = has.then(Vec::new);
        } else if has != labels.is_some() {
            return Err(bad("label column present on some lines only".into()));
        }
        if let Some(l) = labels.as_mut() {
            l.push(tok[6].parse::<u16>().map_err(|_| bad(format!("bad label {:?}", tok[6])))?);
        }
    }
    Ok(PointCloud::new(positions, features, 3, labels)?)
}

pub fn read_points_file(path: &Path) -> Result<PointCloud> {
    let f = File::open(path).map_err(IoError::file(path))?;
    read_points(BufReader::new(f))
}

/// Writes three-channel clouds; colors are scaled back to 0-255.
pub fn write_points<W: Write>(mut w: W, pc: &PointCloud) -> Result<()> {
    if pc.feature_dim() != 3 {
        return Err(IoError::Format(format!("text points carry 3 color channels, cloud has {}", pc.feature_dim())));
    }
    for i in 0..pc.len() {
        let p = pc.positions()[i];
        let c = pc.feature(i);
        write!(w, "{} {} {} {} {} {}", p[0], p[1], p[2], c[0] as f64 * 255.0, c[1] as f64 * 255.0, c[2] as f64 * 255.0)?;
        if let Some(l) = pc.labels() {
            write!(w, " {}", l[i])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_points_file(path: &Path, pc: &PointCloud) -> Result<()> {
    let f = File::create(path).map_err(IoError::file(path))?;
    write_points(BufWriter::new(f), pc)
}
