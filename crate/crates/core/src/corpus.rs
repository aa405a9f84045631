//! Multi-modal bag-of-words corpora.
//!
//! On disk a corpus is a JSON manifest naming the modalities, one vocabulary
//! file per modality (one term per line, the 0-based line number is the token
//! index) and a JSON-lines documents file:
//!
//! ```text
//! {"id": "doc-1", "counts": {"text": {"0": 2, "17": 1}, "image": {"4": 3}}}
//! ```
//!
//! A document may omit a modality or leave it empty.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Modality names plus the per-modality truncation levels and their offsets
/// into the concatenated topic axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityLayout {
    names: Vec<String>,
    topic_counts: Vec<usize>,
    offsets: Vec<usize>,
    total_topics: usize,
}

impl ModalityLayout {
    pub fn new(names: Vec<String>, topic_counts: Vec<usize>) -> Result<Self> {
        if names.len() != topic_counts.len() {
            return Err(Error::Dimension(format!(
                "{} modality names but {} topic counts",
                names.len(),
                topic_counts.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if name.is_empty() {
                return Err(Error::Validation("empty modality name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Validation(format!("duplicate modality name '{name}'")));
            }
        }
        if let Some(m) = topic_counts.iter().position(|&t| t == 0) {
            return Err(Error::Validation(format!(
                "modality '{}' has zero topics",
                names[m]
            )));
        }
        let mut offsets = Vec::with_capacity(names.len());
        let mut acc = 0;
        for &t in &topic_counts {
            offsets.push(acc);
            acc += t;
        }
        Ok(ModalityLayout {
            names,
            topic_counts,
            offsets,
            total_topics: acc,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn topic_counts(&self) -> &[usize] {
        &self.topic_counts
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn total_topics(&self) -> usize {
        self.total_topics
    }

    pub fn num_modalities(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownModality(name.to_string()))
    }

    /// Range of modality `m` on the concatenated topic axis.
    pub fn range(&self, m: usize) -> Range<usize> {
        self.offsets[m]..self.offsets[m] + self.topic_counts[m]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pub modality: String,
    pub terms: Vec<String>,
}

impl Vocabulary {
    pub fn new(modality: impl Into<String>, terms: Vec<String>) -> Result<Self> {
        let modality = modality.into();
        if terms.len() < 2 {
            return Err(Error::Validation(format!(
                "vocabulary of '{modality}' has {} terms, need at least 2",
                terms.len()
            )));
        }
        let mut seen = HashSet::new();
        for t in &terms {
            if !seen.insert(t.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate term '{t}' in vocabulary of '{modality}'"
                )));
            }
        }
        Ok(Vocabulary { modality, terms })
    }

    /// Synthetic vocabulary `<modality>_0000`, `<modality>_0001`, ...
    pub fn synthetic(modality: &str, size: usize) -> Result<Self> {
        let width = size.saturating_sub(1).to_string().len().max(4);
        let terms = (0..size).map(|i| format!("{modality}_{i:0width$}")).collect();
        Vocabulary::new(modality, terms)
    }

    pub fn size(&self) -> usize {
        self.terms.len()
    }
}

/// Sparse token counts of one modality: sorted token indices with positive
/// counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BagOfWords {
    entries: Vec<(usize, u32)>,
}

impl BagOfWords {
    /// Builds a bag from `(token, count)` pairs. Repeated tokens are merged;
    /// zero counts are rejected.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, u32)>) -> Result<Self> {
        let mut map: BTreeMap<usize, u32> = BTreeMap::new();
        for (w, c) in pairs {
            if c == 0 {
                return Err(Error::Validation(format!("token {w} has count 0")));
            }
            *map.entry(w).or_insert(0) += c;
        }
        Ok(BagOfWords {
            entries: map.into_iter().collect(),
        })
    }

    pub fn from_tokens(tokens: impl IntoIterator<Item = usize>) -> Self {
        let mut map: BTreeMap<usize, u32> = BTreeMap::new();
        for w in tokens {
            *map.entry(w).or_insert(0) += 1;
        }
        BagOfWords {
            entries: map.into_iter().collect(),
        }
    }

    pub fn entries(&self) -> &[(usize, u32)] {
        &self.entries
    }

    /// Number of distinct tokens.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total token count `N`.
    pub fn total(&self) -> u64 {
        self.entries.iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.entries.last().map(|&(w, _)| w)
    }
}

/// A document: one bag of words per modality, in corpus modality order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub counts: Vec<BagOfWords>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiModalCorpus {
    pub vocabularies: Vec<Vocabulary>,
    pub documents: Vec<Document>,
}

impl MultiModalCorpus {
    pub fn new(vocabularies: Vec<Vocabulary>, documents: Vec<Document>) -> Result<Self> {
        let corpus = MultiModalCorpus {
            vocabularies,
            documents,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn modality_names(&self) -> Vec<String> {
        self.vocabularies.iter().map(|v| v.modality.clone()).collect()
    }

    pub fn num_modalities(&self) -> usize {
        self.vocabularies.len()
    }

    pub fn modality_index(&self, name: &str) -> Result<usize> {
        self.vocabularies
            .iter()
            .position(|v| v.modality == name)
            .ok_or_else(|| Error::UnknownModality(name.to_string()))
    }

    pub fn vocab_sizes(&self) -> Vec<usize> {
        self.vocabularies.iter().map(Vocabulary::size).collect()
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for v in &self.vocabularies {
            if v.modality.is_empty() || !names.insert(v.modality.as_str()) {
                return Err(Error::Validation(format!(
                    "modality name '{}' is empty or duplicated",
                    v.modality
                )));
            }
        }
        let mut ids = HashSet::new();
        for doc in &self.documents {
            if !ids.insert(doc.id.as_str()) {
                return Err(Error::Validation(format!("duplicate document id '{}'", doc.id)));
            }
            if doc.counts.len() != self.vocabularies.len() {
                return Err(Error::Validation(format!(
                    "document '{}' has {} modalities, corpus has {}",
                    doc.id,
                    doc.counts.len(),
                    self.vocabularies.len()
                )));
            }
            for (bag, vocab) in doc.counts.iter().zip(&self.vocabularies) {
                if let Some(w) = bag.max_index() {
                    if w >= vocab.size() {
                        return Err(Error::Validation(format!(
                            "document '{}', modality '{}': token index {w} out of range (vocabulary size {})",
                            doc.id,
                            vocab.modality,
                            vocab.size()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// New corpus holding only the given modalities (in the given order).
    pub fn select_modalities(&self, names: &[&str]) -> Result<Self> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.modality_index(n))
            .collect::<Result<_>>()?;
        Ok(MultiModalCorpus {
            vocabularies: idx.iter().map(|&m| self.vocabularies[m].clone()).collect(),
            documents: self
                .documents
                .iter()
                .map(|d| Document {
                    id: d.id.clone(),
                    counts: idx.iter().map(|&m| d.counts[m].clone()).collect(),
                })
                .collect(),
        })
    }

    /// SHA-256 over a canonical rendering of vocabularies and documents.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.vocabularies {
            h.update(b"V");
            h.update(v.modality.as_bytes());
            h.update([0u8]);
            for t in &v.terms {
                h.update(t.as_bytes());
                h.update([0u8]);
            }
        }
        for d in &self.documents {
            h.update(b"D");
            h.update(d.id.as_bytes());
            h.update([0u8]);
            for bag in &d.counts {
                h.update(b"M");
                for &(w, c) in bag.entries() {
                    h.update((w as u64).to_le_bytes());
                    h.update(c.to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestModality {
    name: String,
    vocabulary: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    modalities: Vec<ManifestModality>,
    documents: String,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_vocabulary(modality: &str, path: &Path) -> Result<Vocabulary> {
    let text = read_to_string(path)?;
    let mut terms = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let term = line.trim_end_matches('\r');
        if term.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "empty term".into(),
            });
        }
        if !seen.insert(term.to_string()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("duplicate term '{term}'"),
            });
        }
        terms.push(term.to_string());
    }
    Vocabulary::new(modality, terms)
}

fn parse_document_line(
    line: &str,
    modalities: &[String],
    path: &Path,
    lineno: usize,
) -> Result<Document> {
    let perr = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: lineno,
        message,
    };
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| perr(format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| perr("expected a JSON object".into()))?;
    let id = obj
        .get("id")
        .and_then(|v| v.as_str())
        .ok_or_else(|| perr("missing string field 'id'".into()))?
        .to_string();
    let mut counts = vec![BagOfWords::default(); modalities.len()];
    if let Some(c) = obj.get("counts") {
        let per_modality = c
            .as_object()
            .ok_or_else(|| perr("'counts' must be an object".into()))?;
        for (name, tokens) in per_modality {
            let m = modalities.iter().position(|n| n == name).ok_or_else(|| {
                Error::Validation(format!(
                    "document '{id}' references unknown modality '{name}'"
                ))
            })?;
            let tokens = tokens
                .as_object()
                .ok_or_else(|| perr(format!("counts of '{name}' must be an object")))?;
            let mut pairs = Vec::with_capacity(tokens.len());
            for (k, v) in tokens {
                let w: usize = k
                    .parse()
                    .map_err(|_| perr(format!("token index '{k}' is not a nonnegative integer")))?;
                let c = v
                    .as_u64()
                    .filter(|&c| c > 0 && c <= u32::MAX as u64)
                    .ok_or_else(|| perr(format!("count of token {k} must be a positive integer")))?;
                pairs.push((w, c as u32));
            }
            counts[m] = BagOfWords::from_pairs(pairs).map_err(|e| perr(e.to_string()))?;
        }
    }
    Ok(Document { id, counts })
}

/// Loads and validates a corpus from its manifest.
pub fn load_corpus(manifest_path: impl AsRef<Path>) -> Result<MultiModalCorpus> {
    let manifest_path = manifest_path.as_ref();
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let text = read_to_string(manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: manifest_path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let mut vocabularies = Vec::with_capacity(manifest.modalities.len());
    for m in &manifest.modalities {
        vocabularies.push(load_vocabulary(&m.name, &resolve(base, &m.vocabulary))?);
    }
    let names: Vec<String> = manifest.modalities.iter().map(|m| m.name.clone()).collect();
    let docs_path = resolve(base, &manifest.documents);
    let docs_text = read_to_string(&docs_path)?;
    let mut documents = Vec::new();
    for (i, line) in docs_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        documents.push(parse_document_line(line, &names, &docs_path, i + 1)?);
    }
    MultiModalCorpus::new(vocabularies, documents)
}

fn document_json(doc: &Document, names: &[String]) -> serde_json::Value {
    let mut counts = serde_json::Map::new();
    for (bag, name) in doc.counts.iter().zip(names) {
        let mut tokens = serde_json::Map::new();
        for &(w, c) in bag.entries() {
            tokens.insert(w.to_string(), serde_json::Value::from(c));
        }
        counts.insert(name.clone(), serde_json::Value::Object(tokens));
    }
    serde_json::json!({ "id": doc.id, "counts": counts })
}

/// Writes `manifest.json`, one `<modality>.vocab` per modality and
/// `documents.jsonl` into `dir`. Returns the manifest path.
pub fn write_corpus(corpus: &MultiModalCorpus, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let names = corpus.modality_names();
    let mut modalities = Vec::new();
    for v in &corpus.vocabularies {
        let file = format!("{}.vocab", v.modality);
        let path = dir.join(&file);
        let mut body = v.terms.join("\n");
        body.push('\n');
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        modalities.push(ManifestModality {
            name: v.modality.clone(),
            vocabulary: file,
        });
    }
    let docs_path = dir.join("documents.jsonl");
    {
        let f = fs::File::create(&docs_path).map_err(|e| Error::io(&docs_path, e))?;
        let mut w = BufWriter::new(f);
        for doc in &corpus.documents {
            serde_json::to_writer(&mut w, &document_json(doc, &names))?;
            w.write_all(b"\n").map_err(|e| Error::io(&docs_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&docs_path, e))?;
    }
    let manifest = Manifest {
        modalities,
        documents: "documents.jsonl".into(),
    };
    let manifest_path = dir.join("manifest.json");
    let mut body = serde_json::to_string_pretty(&manifest)?;
    body.push('\n');
    fs::write(&manifest_path, body).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

/// Random disjoint split; the first corpus receives
/// `floor(train_fraction * D + 0.5)` documents. Document order within each
/// part follows the original corpus.
pub fn split_corpus(
    corpus: &MultiModalCorpus,
    train_fraction: f64,
    seed: u64,
) -> Result<(MultiModalCorpus, MultiModalCorpus)> {
    let d = corpus.len();
    if d < 2 {
        return Err(Error::InvalidArgument(format!(
            "cannot split a corpus of {d} documents"
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} not in (0, 1)"
        )));
    }
    let n_train = ((train_fraction * d as f64 + 0.5).floor() as usize).min(d);
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_train = vec![false; d];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (train, test): (Vec<_>, Vec<_>) = corpus
        .documents
        .iter()
        .cloned()
        .zip(in_train)
        .partition(|(_, t)| *t);
    let part = |docs: Vec<(Document, bool)>| MultiModalCorpus {
        vocabularies: corpus.vocabularies.clone(),
        documents: docs.into_iter().map(|(doc, _)| doc).collect(),
    };
    Ok((part(train), part(test)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityStats {
    pub modality: String,
    pub documents: usize,
    /// Documents with at least one token in this modality.
    pub nonempty_documents: usize,
    pub total_tokens: u64,
    pub vocabulary_size: usize,
    pub mean_document_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub modalities: Vec<ModalityStats>,
}

pub fn corpus_stats(corpus: &MultiModalCorpus) -> CorpusStats {
    let d = corpus.len();
    let modalities = corpus
        .vocabularies
        .iter()
        .enumerate()
        .map(|(m, v)| {
            let total: u64 = corpus.documents.iter().map(|doc| doc.counts[m].total()).sum();
            let nonempty = corpus
                .documents
                .iter()
                .filter(|doc| !doc.counts[m].is_empty())
                .count();
            ModalityStats {
                modality: v.modality.clone(),
                documents: d,
                nonempty_documents: nonempty,
                total_tokens: total,
                vocabulary_size: v.size(),
                mean_document_length: if d == 0 { 0.0 } else { total as f64 / d as f64 },
            }
        })
        .collect();
    CorpusStats {
        documents: d,
        modalities,
    }
}
