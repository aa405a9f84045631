//! Shared and private topics.
//!
//! The learned covariance of `xi` is turned into a correlation matrix. Its
//! block between a source and a target modality, with small entries
//! thresholded away, scores each source topic by its mean (or maximum)
//! absolute correlation with the target topics. A topic whose score is zero
//! is private to the source modality.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::corpus::{ModalityLayout, Vocabulary};
use crate::generative::ModelParams;
use crate::linalg;
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.2;

/// Stick weights above this count as effective topics.
pub const EFFECTIVE_TOPIC: f64 = 1e-3;

/// `Omega_kl = Sigma_kl / sqrt(Sigma_kk Sigma_ll)`.
pub fn correlation_matrix(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !sigma.is_square() {
        return Err(Error::Dimension("covariance must be square".into()));
    }
    let mut omega = linalg::to_correlation(sigma)?;
    for x in omega.iter_mut() {
        *x = x.clamp(-1.0, 1.0);
    }
    Ok(omega)
}

fn threshold(block: DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("threshold {tau} not in [0, 1)")));
    }
    Ok(block.map(|x| if x.abs() >= tau { x } else { 0.0 }))
}

/// Rows of the source modality, columns of the target modality, with entries
/// of absolute value below `tau` set to zero.
pub fn cross_block(
    omega: &DMatrix<f64>,
    layout: &ModalityLayout,
    source: &str,
    target: &str,
    tau: f64,
) -> Result<DMatrix<f64>> {
    let rows: Vec<usize> = layout.range(layout.index_of(source)?).collect();
    let cols: Vec<usize> = layout.range(layout.index_of(target)?).collect();
    if omega.nrows() != layout.total_topics() {
        return Err(Error::Dimension(format!(
            "{}x{} correlation matrix for {} topics",
            omega.nrows(),
            omega.ncols(),
            layout.total_topics()
        )));
    }
    threshold(linalg::select(omega, &rows, &cols), tau)
}

fn check_nonempty(cross: &DMatrix<f64>) -> Result<()> {
    if cross.nrows() == 0 || cross.ncols() == 0 {
        return Err(Error::InvalidArgument("empty cross block".into()));
    }
    Ok(())
}

/// `rho_k = (1/T) sum_l |cross_kl|` with `T` the number of columns.
pub fn visual_relevance(cross: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_nonempty(cross)?;
    let t = cross.ncols() as f64;
    Ok(cross.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>() / t).collect())
}

/// `rho_k = max_l |cross_kl|`.
pub fn alt_relevance_max(cross: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_nonempty(cross)?;
    Ok(cross.row_iter().map(|r| r.iter().fold(0.0, |m: f64, x| m.max(x.abs()))).collect())
}

/// Indices by descending score, ties by ascending index.
pub fn rank_topics(rho: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..rho.len()).collect();
    idx.sort_by(|&a, &b| rho[b].total_cmp(&rho[a]).then(a.cmp(&b)));
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relevance {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicAnalysis {
    pub source: String,
    pub target: String,
    pub omega: DMatrix<f64>,
    pub cross_block: DMatrix<f64>,
    pub rho: Vec<f64>,
    pub ranking: Vec<usize>,
    pub threshold: f64,
    pub relevance: Relevance,
}

impl TopicAnalysis {
    /// Source topics with no surviving cross-modal correlation.
    pub fn is_private(&self, k: usize) -> bool {
        self.rho[k] == 0.0
    }
}

/// Relevance of every source topic to the target modality.
pub fn analyze(params: &ModelParams, source: &str, target: &str, tau: f64, relevance: Relevance) -> Result<TopicAnalysis> {
    let s = params.modality_index(source)?;
    let t = params.modality_index(target)?;
    let omega = correlation_matrix(&params.prior.sigma)?;
    let rows: Vec<usize> = params.xi_range(s).collect();
    let cols: Vec<usize> = params.xi_range(t).collect();
    let cross = threshold(linalg::select(&omega, &rows, &cols), tau)?;
    let rho = match relevance {
        Relevance::Mean => visual_relevance(&cross)?,
        Relevance::Max => alt_relevance_max(&cross)?,
    };
    Ok(TopicAnalysis {
        source: source.to_string(),
        target: target.to_string(),
        ranking: rank_topics(&rho),
        omega,
        cross_block: cross,
        rho,
        threshold: tau,
        relevance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StickReport {
    pub modality: String,
    pub p: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    /// Number of topics with `p_k > 1e-3`.
    pub effective_topics: usize,
}

pub fn stick_report(params: &ModelParams) -> Vec<StickReport> {
    params
        .layout
        .names()
        .iter()
        .zip(&params.sticks)
        .map(|(name, s)| StickReport {
            modality: name.clone(),
            p: s.p().to_vec(),
            alpha: s.alpha,
            beta: s.beta,
            effective_topics: s.p().iter().filter(|&&p| p > EFFECTIVE_TOPIC).count(),
        })
        .collect()
}

/// The `n` largest entries by descending value, ties by ascending index.
pub(crate) fn top_indices(values: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// The `n` most probable terms of topic `k` of a modality.
pub fn top_words(
    params: &ModelParams,
    vocabulary: &Vocabulary,
    modality: &str,
    k: usize,
    n: usize,
) -> Result<Vec<(String, f64)>> {
    let m = params.modality_index(modality)?;
    let topics = &params.dictionaries[m].topics;
    if k >= topics.nrows() {
        return Err(Error::InvalidArgument(format!("topic {k} out of range")));
    }
    if vocabulary.size() != topics.ncols() {
        return Err(Error::Dimension(format!(
            "vocabulary has {} terms, topics have {}",
            vocabulary.size(),
            topics.ncols()
        )));
    }
    if n > topics.ncols() {
        return Err(Error::InvalidArgument(format!("{n} words requested from a {}-term vocabulary", topics.ncols())));
    }
    let row: Vec<f64> = topics.row(k).iter().copied().collect();
    Ok(top_indices(&row, n)
        .into_iter()
        .map(|w| (vocabulary.terms[w].clone(), row[w]))
        .collect())
}

/// `modality,topic,p` with one row per stick weight.
pub fn stick_report_csv(reports: &[StickReport]) -> String {
    let mut out = String::from("modality,topic,p\n");
    for r in reports {
        for (k, p) in r.p.iter().enumerate() {
            out.push_str(&format!("{},{k},{p}\n", r.modality));
        }
    }
    out
}

/// The thresholded cross block with a header row of target topic indices.
pub fn cross_block_csv(analysis: &TopicAnalysis) -> String {
    let c = &analysis.cross_block;
    let mut out = String::from("source_topic");
    for l in 0..c.ncols() {
        out.push_str(&format!(",{}_{l}", analysis.target));
    }
    out.push('\n');
    for k in 0..c.nrows() {
        out.push_str(&format!("{}_{k}", analysis.source));
        for l in 0..c.ncols() {
            out.push_str(&format!(",{}", c[(k, l)]));
        }
        out.push('\n');
    }
    out
}

/// `rank,topic,rho,private,top_words` with the words space-separated.
pub fn ranking_csv(analysis: &TopicAnalysis, params: &ModelParams, vocabulary: &Vocabulary, words: usize) -> Result<String> {
    let mut out = String::from("rank,topic,rho,private,top_words\n");
    let n = words.min(vocabulary.size());
    for (rank, &k) in analysis.ranking.iter().enumerate() {
        let top: Vec<String> = top_words(params, vocabulary, &analysis.source, k, n)?
            .into_iter()
            .map(|(t, _)| t)
            .collect();
        out.push_str(&format!(
            "{},{k},{},{},{}\n",
            rank + 1,
            analysis.rho[k],
            analysis.is_private(k),
            top.join(" ")
        ));
    }
    Ok(out)
}
