//! On-disk formats.
//!
//! A batch file starts with one line of JSON
//! `{k, n, sigma, seed, signal_hash, encoding}`. Small batches embed the
//! samples in the header as base64 (`"encoding": "base64"`, field `data`);
//! larger ones (`"encoding": "raw"`) follow the newline with the raw bytes.
//! Either way the payload is `2·N·K` little-endian `f64` laid out per sample
//! as `Re ỹ_1, Im ỹ_1, …, Re ỹ_K, Im ỹ_K`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{MraError, Result};
use crate::mle::TraceEntry;
use crate::model::SignalSpec;
use crate::sampling::SampleBatch;

/// Batches with at most this many `f64` values are embedded as base64.
pub const EMBED_MAX_VALUES: usize = 1 << 16;

pub fn read_signal(path: &Path) -> Result<SignalSpec> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_signal(path: &Path, s: &SignalSpec) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, s)?;
    writeln!(f)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Encoding {
    Base64,
    Raw,
}

#[derive(Serialize, Deserialize)]
struct BatchHeader {
    k: usize,
    n: usize,
    sigma: f64,
    seed: u64,
    signal_hash: String,
    encoding: Encoding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data: Option<String>,
}

fn to_bytes(data: &[Complex64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 * data.len());
    for z in data {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    out
}

fn from_bytes(bytes: &[u8]) -> Vec<Complex64> {
    bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect()
}

pub fn write_batch<W: Write>(mut w: W, batch: &SampleBatch) -> Result<()> {
    let bytes = to_bytes(batch.data());
    let embed = 2 * batch.data().len() <= EMBED_MAX_VALUES;
    let header = BatchHeader {
        k: batch.k_max(),
        n: batch.n(),
        sigma: batch.sigma(),
        seed: batch.seed(),
        signal_hash: batch.signal_hash().to_string(),
        encoding: if embed { Encoding::Base64 } else { Encoding::Raw },
        data: embed.then(|| STANDARD.encode(&bytes)),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    if !embed {
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_batch<R: Read>(r: R) -> Result<SampleBatch> {
    let mut r = BufReader::new(r);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    let header: BatchHeader = serde_json::from_slice(&line)?;
    let bytes = match (header.encoding, header.data) {
        (Encoding::Base64, Some(d)) => STANDARD
            .decode(d)
            .map_err(|e| MraError::Format(format!("batch payload: {e}")))?,
        (Encoding::Base64, None) => return Err(MraError::Format("base64 batch without data".into())),
        (Encoding::Raw, _) => {
            let mut b = Vec::new();
            r.read_to_end(&mut b)?;
            b
        }
    };
    let expect = 16 * header.n * header.k;
    if bytes.len() != expect {
        return Err(MraError::Format(format!(
            "batch payload has {} bytes, header implies {expect}",
            bytes.len()
        )));
    }
    SampleBatch::from_parts(header.k, header.sigma, header.seed, header.signal_hash, from_bytes(&bytes))
}

pub fn write_batch_file(path: &Path, batch: &SampleBatch) -> Result<()> {
    write_batch(BufWriter::new(File::create(path)?), batch)
}

pub fn read_batch_file(path: &Path) -> Result<SampleBatch> {
    read_batch(File::open(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateDiagnostics {
    pub pilot_objective: Option<f64>,
    pub bispectrum_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateFile {
    pub method: String,
    pub k: usize,
    pub r_hat: Vec<f64>,
    pub phi_hat: Vec<f64>,
    pub diagnostics: EstimateDiagnostics,
    /// Present when the true signal was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
}

impl EstimateFile {
    pub fn signal(&self) -> Result<SignalSpec> {
        crate::error::check_dim(self.k, self.r_hat.len())?;
        SignalSpec::new(self.r_hat.clone(), self.phi_hat.clone())
    }
}

/// Optimizer trace as JSON lines.
pub fn write_trace<W: Write>(mut w: W, trace: &[TraceEntry]) -> Result<()> {
    for t in trace {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
