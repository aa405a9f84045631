//! Cross-modal prediction.
//!
//! A document's observed modalities are fitted with the local updates of the
//! model restricted to those modalities. The posterior mean of `xi` on the
//! observed coordinates is carried to the target coordinates through the
//! Gaussian conditional mean, turned into proportions with
//! `normalize(beta p .* exp(xi))`, and mixed over the topic means.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::corpus::{BagOfWords, Document, MultiModalCorpus, Vocabulary};
use crate::generative::{expected_theta, ModelParams};
use crate::inference::{update_local, DocVariational, Globals, LocalOptions};
use crate::linalg;
use crate::par::Executor;
use crate::{Error, Result};

/// Posterior of `xi` on the coordinates used by the observed modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedPosterior {
    pub coords: Vec<usize>,
    pub xi_mean: DVector<f64>,
    pub xi_var: DVector<f64>,
    /// Fitted proportions of each observed modality.
    pub theta: Vec<Vec<f64>>,
    pub elbo: f64,
}

/// How the target coordinates of `xi` are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    /// Gaussian conditional mean given the observed coordinates.
    Conditional,
    /// The prior mean, ignoring the observed modality.
    PriorMean,
}

/// Result of predicting one modality of one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub id: String,
    pub target: String,
    /// Posterior mean of `xi` on the observed coordinates (empty for the
    /// prior-mean predictor).
    pub xi_observed: Vec<f64>,
    pub xi_predicted: Vec<f64>,
    pub theta_predicted: Vec<f64>,
    pub word_dist: Vec<f64>,
}

fn check_observed(params: &ModelParams, observed: &[usize], bags: &[&BagOfWords]) -> Result<()> {
    if observed.is_empty() {
        return Err(Error::InvalidArgument("no observed modality".into()));
    }
    if observed.len() != bags.len() {
        return Err(Error::Dimension(format!(
            "{} observed modalities but {} bags",
            observed.len(),
            bags.len()
        )));
    }
    for (&m, bag) in observed.iter().zip(bags) {
        if m >= params.num_modalities() {
            return Err(Error::InvalidArgument(format!("modality index {m} out of range")));
        }
        let w = params.dictionaries[m].vocab_size();
        if let Some(max) = bag.max_index() {
            if max >= w {
                return Err(Error::Dimension(format!(
                    "term {max} outside the {w}-term vocabulary of '{}'",
                    params.layout.names()[m]
                )));
            }
        }
    }
    Ok(())
}

/// Fits `q(xi)` for a document from the bags of its observed modalities,
/// given in the same order as `observed`, with the global parameters frozen.
pub fn infer_observed_xi(
    bags: &[&BagOfWords],
    params: &ModelParams,
    observed: &[usize],
    opts: &LocalOptions,
) -> Result<ObservedPosterior> {
    check_observed(params, observed, bags)?;
    if bags.iter().all(|b| b.is_empty()) {
        return Err(Error::InvalidArgument("observed modalities have no tokens".into()));
    }
    let restricted = params.restrict(observed)?;
    let globals = Globals::new(&restricted)?;
    let doc = Document {
        id: String::new(),
        counts: bags.iter().map(|b| (*b).clone()).collect(),
    };
    let init = DocVariational::initial(
        &doc,
        &restricted,
        &globals,
        restricted.prior.mu.clone(),
        restricted.prior.sigma.diagonal(),
    );
    let out = update_local(&doc, &init, &restricted, &globals, opts);
    if out.var.xi_mean.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite xi posterior".into()));
    }
    let theta = (0..observed.len()).map(|j| out.var.theta(j, &globals)).collect();
    Ok(ObservedPosterior {
        coords: params.xi_coordinates(observed),
        theta,
        xi_mean: out.var.xi_mean,
        xi_var: out.var.xi_var,
        elbo: out.elbo,
    })
}

/// Conditional mean of the target modality's `xi` coordinates given values
/// on the observed coordinates:
/// `mu_t + Sigma_to Sigma_oo^-1 (xi_o - mu_o)`.
///
/// Coordinates shared with the observed set (always the case with a tied
/// `xi`) are returned unchanged.
pub fn conditional_xi(params: &ModelParams, observed: &[usize], xi_obs: &DVector<f64>, target: usize) -> Result<DVector<f64>> {
    let coords = params.xi_coordinates(observed);
    if xi_obs.len() != coords.len() {
        return Err(Error::Dimension(format!(
            "{} observed xi values for {} coordinates",
            xi_obs.len(),
            coords.len()
        )));
    }
    let range: Vec<usize> = params.xi_range(target).collect();
    if range.iter().all(|c| coords.binary_search(c).is_ok()) {
        return Ok(DVector::from_iterator(
            range.len(),
            range.iter().map(|c| xi_obs[coords.binary_search(c).unwrap()]),
        ));
    }
    let mu = &params.prior.mu;
    let sigma = &params.prior.sigma;
    let s_oo = linalg::select(sigma, &coords, &coords);
    let s_to = linalg::select(sigma, &range, &coords);
    let resid = xi_obs - linalg::select_vec(mu, &coords);
    let w = linalg::spd_solve(&s_oo, &resid)?;
    Ok(linalg::select_vec(mu, &range) + s_to * w)
}

/// `normalize(beta p .* exp(xi))` for the target modality.
pub fn predict_theta(params: &ModelParams, target: usize, xi: &DVector<f64>) -> Result<Vec<f64>> {
    expected_theta(xi.as_slice(), &params.sticks[target])
}

/// `sum_k theta_k eta_k`.
pub fn predict_word_dist(params: &ModelParams, target: usize, theta: &[f64]) -> Result<Vec<f64>> {
    let topics: &DMatrix<f64> = &params.dictionaries[target].topics;
    if theta.len() != topics.nrows() {
        return Err(Error::Dimension(format!(
            "{} proportions for {} topics",
            theta.len(),
            topics.nrows()
        )));
    }
    let theta = DVector::from_column_slice(theta);
    Ok((topics.transpose() * theta).as_slice().to_vec())
}

/// Predicts the target modality of one document from its observed bags.
pub fn predict_document(
    id: &str,
    bags: &[&BagOfWords],
    params: &ModelParams,
    observed: &[usize],
    target: usize,
    predictor: Predictor,
    opts: &LocalOptions,
) -> Result<PredictionResult> {
    if target >= params.num_modalities() {
        return Err(Error::InvalidArgument(format!("modality index {target} out of range")));
    }
    let (xi_observed, xi_predicted) = match predictor {
        Predictor::Conditional => {
            let post = infer_observed_xi(bags, params, observed, opts)?;
            let xi = conditional_xi(params, observed, &post.xi_mean, target)?;
            (post.xi_mean.as_slice().to_vec(), xi)
        }
        Predictor::PriorMean => {
            check_observed(params, observed, bags)?;
            let range: Vec<usize> = params.xi_range(target).collect();
            (Vec::new(), linalg::select_vec(&params.prior.mu, &range))
        }
    };
    let theta = predict_theta(params, target, &xi_predicted)?;
    let word_dist = predict_word_dist(params, target, &theta)?;
    Ok(PredictionResult {
        id: id.to_string(),
        target: params.layout.names()[target].clone(),
        xi_observed,
        xi_predicted: xi_predicted.as_slice().to_vec(),
        theta_predicted: theta,
        word_dist,
    })
}

/// Resolves observed and target modality names against the model, and the
/// observed names against the corpus.
pub(crate) fn resolve(
    corpus: &MultiModalCorpus,
    params: &ModelParams,
    observed: &[&str],
    target: &str,
) -> Result<(Vec<usize>, Vec<usize>, usize)> {
    let model_obs = observed
        .iter()
        .map(|n| params.modality_index(n))
        .collect::<Result<Vec<_>>>()?;
    let corpus_obs = observed
        .iter()
        .map(|n| corpus.modality_index(n))
        .collect::<Result<Vec<_>>>()?;
    for (&mm, &cm) in model_obs.iter().zip(&corpus_obs) {
        let (a, b) = (params.dictionaries[mm].vocab_size(), corpus.vocabularies[cm].size());
        if a != b {
            return Err(Error::Dimension(format!(
                "modality '{}' has {b} terms in the corpus but {a} in the model",
                observed[corpus_obs.iter().position(|&c| c == cm).unwrap()]
            )));
        }
    }
    Ok((model_obs, corpus_obs, params.modality_index(target)?))
}

/// Predicts the target modality for every document of a corpus whose
/// observed modalities contain at least one token; other documents are
/// skipped.
pub fn predict_corpus(
    corpus: &MultiModalCorpus,
    params: &ModelParams,
    observed: &[&str],
    target: &str,
    predictor: Predictor,
    opts: &LocalOptions,
    exec: &Executor,
) -> Result<Vec<PredictionResult>> {
    let (model_obs, corpus_obs, target) = resolve(corpus, params, observed, target)?;
    let eligible: Vec<&Document> = corpus
        .documents
        .iter()
        .filter(|d| corpus_obs.iter().any(|&c| !d.counts[c].is_empty()))
        .collect();
    exec.map(&eligible, |_, doc| {
        let bags: Vec<&BagOfWords> = corpus_obs.iter().map(|&c| &doc.counts[c]).collect();
        predict_document(&doc.id, &bags, params, &model_obs, target, predictor, opts)
    })
    .into_iter()
    .collect()
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    id: &'a str,
    target_modality: &'a str,
    theta: &'a [f64],
    top_words: Vec<(&'a str, f64)>,
}

/// Writes one JSON object per prediction with its `top_n` most probable
/// target terms.
pub fn write_predictions_jsonl(
    predictions: &[PredictionResult],
    vocabulary: &Vocabulary,
    top_n: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for p in predictions {
        if p.word_dist.len() != vocabulary.size() {
            return Err(Error::Dimension(format!(
                "prediction over {} terms, vocabulary has {}",
                p.word_dist.len(),
                vocabulary.size()
            )));
        }
        let top_words = crate::analysis::top_indices(&p.word_dist, top_n)
            .into_iter()
            .map(|w| (vocabulary.terms[w].as_str(), p.word_dist[w]))
            .collect();
        let line = PredictionLine {
            id: &p.id,
            target_modality: &p.target,
            theta: &p.theta_predicted,
            top_words,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
