//! Model archives.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size  content
//! 0       8     magic "FMTMARCH"
//! 8       4     u32 format version
//! 12      8     u64 header length H
//! 20      H     UTF-8 JSON header
//! 20+H    8n    f64 array data
//! ```
//!
//! The header lists every array with its name, shape and element offset into
//! the data section; matrices are stored row-major.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::corpus::ModalityLayout;
use crate::evaluation::ModalityPerplexity;
use crate::generative::{GaussianPrior, ModelParams, StickWeights, TopicDictionary};
use crate::inference::TrainConfig;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FMTMARCH";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 20;

/// Where a model came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub config_hash: String,
    pub corpus_hash: String,
    pub seed: u64,
    pub sweeps: usize,
    pub final_elbo: f64,
    pub converged: bool,
    pub train_perplexity: Vec<ModalityPerplexity>,
    pub config: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArchive {
    pub params: ModelParams,
    pub provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArraySpec {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModalityHeader {
    name: String,
    topics: usize,
    vocabulary: usize,
    alpha: f64,
    beta: f64,
    gamma: f64,
    dirichlet: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    tied_xi: bool,
    modalities: Vec<ModalityHeader>,
    arrays: Vec<ArraySpec>,
    provenance: Provenance,
}

#[derive(Default)]
struct DataWriter {
    arrays: Vec<ArraySpec>,
    data: Vec<f64>,
}

impl DataWriter {
    fn vector(&mut self, name: String, v: &[f64]) {
        self.arrays.push(ArraySpec { name, shape: vec![v.len()], offset: self.data.len() });
        self.data.extend_from_slice(v);
    }

    fn matrix(&mut self, name: String, m: &DMatrix<f64>) {
        self.arrays.push(ArraySpec {
            name,
            shape: vec![m.nrows(), m.ncols()],
            offset: self.data.len(),
        });
        for row in m.row_iter() {
            self.data.extend(row.iter());
        }
    }
}

fn encode(archive: &ModelArchive) -> Result<Vec<u8>> {
    let params = &archive.params;
    let mut w = DataWriter::default();
    let mut modalities = Vec::new();
    for (m, name) in params.layout.names().iter().enumerate() {
        let s = &params.sticks[m];
        let d = &params.dictionaries[m];
        w.vector(format!("sticks/{name}"), s.v());
        w.matrix(format!("topics/{name}"), &d.topics);
        if let Some(l) = &d.dirichlet {
            w.matrix(format!("dirichlet/{name}"), l);
        }
        modalities.push(ModalityHeader {
            name: name.clone(),
            topics: s.len(),
            vocabulary: d.vocab_size(),
            alpha: s.alpha,
            beta: s.beta,
            gamma: d.gamma,
            dirichlet: d.dirichlet.is_some(),
        });
    }
    w.vector("prior/mu".into(), params.prior.mu.as_slice());
    w.matrix("prior/sigma".into(), &params.prior.sigma);
    let header = Header {
        tied_xi: params.tied_xi,
        modalities,
        arrays: w.arrays,
        provenance: archive.provenance.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + 8 * w.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for x in &w.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

/// Writes the archive atomically: a temporary file in the target directory
/// is renamed over `path` once complete.
pub fn save_model(params: &ModelParams, provenance: &Provenance, path: impl AsRef<Path>) -> Result<()> {
    params.validate()?;
    let path = path.as_ref();
    let bytes = encode(&ModelArchive { params: params.clone(), provenance: provenance.clone() })?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(&bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Validation(format!("corrupt archive: {}", msg.into()))
}

struct DataReader<'a> {
    arrays: &'a [ArraySpec],
    data: &'a [u8],
}

impl DataReader<'_> {
    fn get(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let spec = self
            .arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| corrupt(format!("missing array '{name}'")))?;
        if spec.shape != shape {
            return Err(corrupt(format!("array '{name}' has shape {:?}, expected {shape:?}", spec.shape)));
        }
        let len: usize = shape.iter().product();
        let start = spec.offset.checked_mul(8).ok_or_else(|| corrupt("offset overflow"))?;
        let end = start + 8 * len;
        let bytes = self
            .data
            .get(start..end)
            .ok_or_else(|| corrupt(format!("array '{name}' extends past the end of the file")))?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn matrix(&self, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_row_slice(rows, cols, &self.get(name, &[rows, cols])?))
    }
}

fn decode(bytes: &[u8]) -> Result<ModelArchive> {
    if bytes.len() < PREAMBLE || &bytes[..8] != MAGIC {
        return Err(corrupt("not a model archive"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Version { found: version, expected: FORMAT_VERSION });
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let header_end = PREAMBLE
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])?;
    let reader = DataReader { arrays: &header.arrays, data: &bytes[header_end..] };

    let names = header.modalities.iter().map(|m| m.name.clone()).collect();
    let counts = header.modalities.iter().map(|m| m.topics).collect();
    let layout = ModalityLayout::new(names, counts)?;
    let mut sticks = Vec::new();
    let mut dictionaries = Vec::new();
    for mh in &header.modalities {
        let v = reader.get(&format!("sticks/{}", mh.name), &[mh.topics])?;
        sticks.push(StickWeights::from_fractions(v, mh.alpha, mh.beta).map_err(|e| Error::Validation(e.to_string()))?);
        let topics = reader.matrix(&format!("topics/{}", mh.name), mh.topics, mh.vocabulary)?;
        let dirichlet = if mh.dirichlet {
            Some(reader.matrix(&format!("dirichlet/{}", mh.name), mh.topics, mh.vocabulary)?)
        } else {
            None
        };
        dictionaries.push(TopicDictionary { modality: mh.name.clone(), topics, gamma: mh.gamma, dirichlet });
    }
    let dim = if header.tied_xi {
        layout.topic_counts().first().copied().unwrap_or(0)
    } else {
        layout.total_topics()
    };
    let prior = GaussianPrior {
        mu: DVector::from_vec(reader.get("prior/mu", &[dim])?),
        sigma: reader.matrix("prior/sigma", dim, dim)?,
    };
    let params = ModelParams { layout, sticks, dictionaries, prior, tied_xi: header.tied_xi };
    params.validate()?;
    Ok(ModelArchive { params, provenance: header.provenance })
}

/// Reads and validates an archive.
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelArchive> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
