//! Training metrics as JSON lines, one object per epoch.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use oacnn_core::training::EpochMetrics;

use crate::error::{IoError, Result};

pub fn write_metrics_line<W: Write>(mut w: W, m: &EpochMetrics) -> Result<()> {
    serde_json::to_writer(&mut w, m)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self { out: BufWriter::new(File::create(path).map_err(IoError::file(path))?) })
    }

    /// Appends and flushes, so a partial run leaves a readable log.
    pub fn push(&mut self, m: &EpochMetrics) -> Result<()> {
        write_metrics_line(&mut self.out, m)?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let f = File::open(path).map_err(IoError::file(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| IoError::ParseLine { line: i + 1, msg: e.to_string() })?);
    }
    Ok(out)
}
