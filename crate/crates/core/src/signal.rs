//! Real passband sample sequences and their on-disk form.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PassbandSignal {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    /// Time of `samples[0]`, s.
    pub t0: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    sample_rate: f64,
    t0: f64,
    length: usize,
}

impl PassbandSignal {
    pub fn new(samples: Vec<f64>, sample_rate: f64, t0: f64) -> Self {
        Self { samples, sample_rate, t0 }
    }

    pub fn zeros(len: usize, sample_rate: f64, t0: f64) -> Self {
        Self::new(vec![0.0; len], sample_rate, t0)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn time_of(&self, n: usize) -> f64 {
        self.t0 + n as f64 / self.sample_rate
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self::new(self.samples.iter().map(|v| v * gain).collect(), self.sample_rate, self.t0)
    }

    pub fn reversed(&self) -> Self {
        let mut samples = self.samples.clone();
        samples.reverse();
        Self::new(samples, self.sample_rate, self.t0)
    }

    fn sidecar_path(path: &Path) -> PathBuf {
        let mut name = path.as_os_str().to_owned();
        name.push(".hdr");
        PathBuf::from(name)
    }

    /// Raw little-endian f32 samples at `path`, header at `path.hdr`.
    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for &v in &self.samples {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        w.flush()?;
        let header = Sidecar {
            sample_rate: self.sample_rate,
            t0: self.t0,
            length: self.samples.len(),
        };
        let text = toml::to_string(&header).map_err(|e| Error::Validation(e.to_string()))?;
        std::fs::write(Self::sidecar_path(path), text)?;
        Ok(())
    }

    pub fn read_raw(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(Self::sidecar_path(path))?;
        let header: Sidecar = toml::from_str(&text)?;
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        if bytes.len() != header.length * 4 {
            return Err(Error::LengthMismatch {
                left: header.length,
                right: bytes.len() / 4,
            });
        }
        let samples = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Ok(Self::new(samples, header.sample_rate, header.t0))
    }

    /// Two-column CSV `time_s,value` for plotting.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time_s", "value"])?;
        for (n, v) in self.samples.iter().enumerate() {
            w.write_record([self.time_of(n).to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("y.f32");
        let sig = PassbandSignal::new(vec![0.5, -1.25, 3.0, 0.0], 48_000.0, 0.125);
        sig.write_raw(&path).unwrap();
        let back = PassbandSignal::read_raw(&path).unwrap();
        assert_eq!(back, sig);
        let header = std::fs::read_to_string(dir.path().join("y.f32.hdr")).unwrap();
        assert!(header.contains("length = 4"));
    }

    #[test]
    fn truncated_raw_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("y.f32");
        PassbandSignal::new(vec![1.0; 8], 1000.0, 0.0).write_raw(&path).unwrap();
        std::fs::write(&path, [0u8; 12]).unwrap();
        assert!(matches!(
            PassbandSignal::read_raw(&path),
            Err(Error::LengthMismatch { left: 8, right: 3 })
        ));
    }

    #[test]
    fn csv_has_time_axis() {
        let sig = PassbandSignal::new(vec![1.0, 2.0], 2.0, 1.0);
        let mut buf = Vec::new();
        sig.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "time_s,value\n1,1\n1.5,2\n");
    }
}
