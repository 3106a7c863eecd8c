use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};

/// One line of the newline-delimited JSON training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRecord {
    pub step: u64,
    pub split: &'static str,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
    /// Mean per-dimension standard deviation of normalized projections; a
    /// value near zero signals representational collapse.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proj_std: Option<f64>,
}

/// Collects log records and optionally streams them to a file.
pub struct TrainLog {
    writer: Option<(BufWriter<File>, std::path::PathBuf)>,
    start: Instant,
    records: Vec<LogRecord>,
}

impl TrainLog {
    /// In-memory log only.
    pub fn memory() -> Self {
        TrainLog {
            writer: None,
            start: Instant::now(),
            records: Vec::new(),
        }
    }

    pub fn to_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(TrainLog {
            writer: Some((BufWriter::new(file), path.to_path_buf())),
            ..TrainLog::memory()
        })
    }

    pub fn record(&mut self, step: u64, split: &'static str, loss: f64, lr: f64, proj_std: Option<f64>) -> Result<()> {
        let rec = LogRecord {
            step,
            split,
            loss,
            lr,
            wall_ms: self.start.elapsed().as_millis() as u64,
            proj_std,
        };
        if let Some((w, path)) = &mut self.writer {
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io(path.as_path(), e))?;
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some((w, path)) = &mut self.writer {
            w.flush().map_err(|e| Error::io(path.as_path(), e))?;
        }
        Ok(())
    }
}
