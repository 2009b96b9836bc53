//! Minimal CSV output. Floats use 17 significant digits so they read back
//! bit-exactly.

use std::fs::File;
use std::io;
use std::path::Path;

pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

/// `csv::Writer` with errors surfaced as `io::Error`.
pub struct CsvWriter {
    out: csv::Writer<File>,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &[&str]) -> io::Result<Self> {
        let mut w = Self {
            out: csv::Writer::from_path(path)?,
        };
        w.row(header)?;
        Ok(w)
    }

    pub fn row<S: AsRef<[u8]>>(&mut self, fields: &[S]) -> io::Result<()> {
        self.out.write_record(fields).map_err(io::Error::from)
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.out.flush()
    }
}
