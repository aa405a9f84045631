//! Perplexities and model comparison.
//!
//! Likelihoods are plug-in: a document's tokens are scored under
//! `sum_k theta_k eta_k` with a point estimate of `theta` and the topic
//! means. Perplexity is `exp(-sum log p / tokens)` over a whole corpus.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::corpus::{BagOfWords, MultiModalCorpus};
use crate::generative::ModelParams;
use crate::inference::{DocVariational, Globals, LocalOptions};
use crate::par::{ordered_sum, Executor};
use crate::prediction::{predict_document, resolve, Predictor};
use crate::{Error, Result};

/// `sum_w count_w log p_w` for a bag under a word distribution.
pub fn doc_log_likelihood(bag: &BagOfWords, word_dist: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for &(w, c) in bag.entries() {
        let p = *word_dist
            .get(w)
            .ok_or_else(|| Error::Dimension(format!("term {w} outside a {}-term distribution", word_dist.len())))?;
        if !(p > 0.0) {
            return Err(Error::Numerical(format!("term {w} has probability {p}")));
        }
        total += c as f64 * p.ln();
    }
    Ok(total)
}

/// Like [`doc_log_likelihood`] for the mixture `sum_k theta_k topics[k]`,
/// evaluated only at the document's terms.
pub fn mixture_log_likelihood(bag: &BagOfWords, theta: &[f64], topics: &DMatrix<f64>) -> Result<f64> {
    if theta.len() != topics.nrows() {
        return Err(Error::Dimension(format!(
            "{} proportions for {} topics",
            theta.len(),
            topics.nrows()
        )));
    }
    let mut total = 0.0;
    for &(w, c) in bag.entries() {
        if w >= topics.ncols() {
            return Err(Error::Dimension(format!("term {w} outside a {}-term vocabulary", topics.ncols())));
        }
        let p: f64 = theta.iter().enumerate().map(|(k, t)| t * topics[(k, w)]).sum();
        if !(p > 0.0) {
            return Err(Error::Numerical(format!("term {w} has probability {p}")));
        }
        total += c as f64 * p.ln();
    }
    Ok(total)
}

fn perplexity(log_likelihood: f64, tokens: u64) -> Result<f64> {
    if tokens == 0 {
        return Err(Error::InvalidArgument("no tokens to evaluate".into()));
    }
    Ok((-log_likelihood / tokens as f64).exp())
}

/// Perplexity of modality `m` given one `theta` per document.
pub fn perplexity_with_thetas(
    corpus: &MultiModalCorpus,
    m: usize,
    thetas: &[Vec<f64>],
    topics: &DMatrix<f64>,
) -> Result<f64> {
    if thetas.len() != corpus.len() {
        return Err(Error::Dimension(format!(
            "{} proportion vectors for {} documents",
            thetas.len(),
            corpus.len()
        )));
    }
    let mut lls = Vec::with_capacity(thetas.len());
    let mut tokens = 0;
    for (doc, theta) in corpus.documents.iter().zip(thetas) {
        lls.push(mixture_log_likelihood(&doc.counts[m], theta, topics)?);
        tokens += doc.counts[m].total();
    }
    perplexity(ordered_sum(&lls), tokens)
}

/// Training perplexity of modality `m` with each document's fitted
/// proportions (normalized `E[Y]`).
pub fn train_perplexity(
    corpus: &MultiModalCorpus,
    params: &ModelParams,
    docs: &[DocVariational],
    globals: &Globals,
    m: usize,
) -> Result<f64> {
    let thetas: Vec<Vec<f64>> = docs.iter().map(|d| d.theta(m, globals)).collect();
    perplexity_with_thetas(corpus, m, &thetas, &params.dictionaries[m].topics)
}

/// [`train_perplexity`] for every modality; modalities without any tokens
/// report NaN.
pub fn fitted_perplexity(
    corpus: &MultiModalCorpus,
    params: &ModelParams,
    docs: &[DocVariational],
    globals: &Globals,
) -> Result<Vec<f64>> {
    (0..params.num_modalities())
        .map(|m| {
            if corpus.documents.iter().all(|d| d.counts[m].is_empty()) {
                Ok(f64::NAN)
            } else {
                train_perplexity(corpus, params, docs, globals, m)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalPerplexity {
    pub observed: String,
    pub target: String,
    pub perplexity: f64,
    /// Target tokens in the evaluated documents.
    pub tokens: u64,
    pub documents: usize,
    /// Documents skipped for an empty observed or target modality.
    pub skipped: usize,
}

/// Perplexity of the target modality predicted from the observed one, over
/// documents where both are nonempty.
pub fn conditional_perplexity(
    corpus: &MultiModalCorpus,
    params: &ModelParams,
    observed: &str,
    target: &str,
    predictor: Predictor,
    opts: &LocalOptions,
    exec: &Executor,
) -> Result<ConditionalPerplexity> {
    let (model_obs, corpus_obs, model_target) = resolve(corpus, params, &[observed], target)?;
    let corpus_target = corpus.modality_index(target)?;
    let (mo, co) = (model_obs[0], corpus_obs[0]);
    if corpus.vocabularies[corpus_target].size() != params.dictionaries[model_target].vocab_size() {
        return Err(Error::Dimension(format!("vocabulary of '{target}' differs from the model")));
    }
    let eligible: Vec<_> = corpus
        .documents
        .iter()
        .filter(|d| !d.counts[co].is_empty() && !d.counts[corpus_target].is_empty())
        .collect();
    if eligible.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no document has both '{observed}' and '{target}' tokens"
        )));
    }
    let results = exec.map(&eligible, |_, doc| -> Result<(f64, u64)> {
        let pred = predict_document(&doc.id, &[&doc.counts[co]], params, &[mo], model_target, predictor, opts)?;
        let bag = &doc.counts[corpus_target];
        Ok((doc_log_likelihood(bag, &pred.word_dist)?, bag.total()))
    });
    let mut lls = Vec::with_capacity(results.len());
    let mut tokens = 0;
    for r in results {
        let (ll, n) = r?;
        lls.push(ll);
        tokens += n;
    }
    Ok(ConditionalPerplexity {
        observed: observed.to_string(),
        target: target.to_string(),
        perplexity: perplexity(ordered_sum(&lls), tokens)?,
        tokens,
        documents: eligible.len(),
        skipped: corpus.len() - eligible.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityPerplexity {
    pub modality: String,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub config_hash: String,
    /// Hash of the corpus the conditional perplexities were computed on.
    pub corpus_hash: String,
    pub train_perplexity: Vec<ModalityPerplexity>,
    pub conditional: Vec<ConditionalPerplexity>,
}

/// Conditional perplexity in every direction between the corpus modalities
/// that the model knows.
pub fn evaluate_model(
    model: &str,
    params: &ModelParams,
    config_hash: &str,
    train_perplexity: Vec<ModalityPerplexity>,
    corpus: &MultiModalCorpus,
    predictor: Predictor,
    opts: &LocalOptions,
    exec: &Executor,
) -> Result<EvalReport> {
    let names: Vec<String> = corpus
        .modality_names()
        .into_iter()
        .filter(|n| params.modality_index(n).is_ok())
        .collect();
    let mut conditional = Vec::new();
    for target in &names {
        for observed in &names {
            if observed != target {
                conditional.push(conditional_perplexity(corpus, params, observed, target, predictor, opts, exec)?);
            }
        }
    }
    Ok(EvalReport {
        model: model.to_string(),
        config_hash: config_hash.to_string(),
        corpus_hash: corpus.content_hash(),
        train_perplexity,
        conditional,
    })
}

/// One cell of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub metric: String,
    pub value: f64,
    /// Strictly lower than every other model on this metric.
    pub best: bool,
}

fn report_metrics(r: &EvalReport) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = r
        .train_perplexity
        .iter()
        .map(|t| (format!("train_perplexity:{}", t.modality), t.perplexity))
        .collect();
    out.extend(
        r.conditional
            .iter()
            .map(|c| (format!("conditional_perplexity:{}|{}", c.target, c.observed), c.perplexity)),
    );
    out
}

/// Long-format comparison of at least two reports on the same corpus. Only
/// metrics present in every report are compared.
pub fn compare_models(reports: &[EvalReport]) -> Result<Vec<ComparisonRow>> {
    if reports.len() < 2 {
        return Err(Error::InvalidArgument("need at least two reports to compare".into()));
    }
    if reports.iter().any(|r| r.corpus_hash != reports[0].corpus_hash) {
        return Err(Error::InvalidArgument("reports were computed on different corpora".into()));
    }
    let metrics: Vec<Vec<(String, f64)>> = reports.iter().map(report_metrics).collect();
    let mut rows = Vec::new();
    for (name, _) in &metrics[0] {
        let values: Option<Vec<f64>> = metrics
            .iter()
            .map(|ms| ms.iter().find(|(n, _)| n == name).map(|(_, v)| *v))
            .collect();
        let Some(values) = values else { continue };
        for (i, r) in reports.iter().enumerate() {
            let best = values.iter().enumerate().all(|(j, &v)| j == i || values[i] < v);
            rows.push(ComparisonRow { model: r.model.clone(), metric: name.clone(), value: values[i], best });
        }
    }
    Ok(rows)
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("model,metric,value,best\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.model, r.metric, r.value, r.best));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_topic_single_word() {
        let topics = DMatrix::from_row_slice(2, 3, &[0.5, 0.3, 0.2, 0.1, 0.1, 0.8]);
        let bag = BagOfWords::from_pairs([(2, 3)]).unwrap();
        let ll = mixture_log_likelihood(&bag, &[0.0, 1.0], &topics).unwrap();
        assert!((ll - 3.0 * 0.8f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_probability_word_is_an_error() {
        let bag = BagOfWords::from_pairs([(1, 1)]).unwrap();
        assert!(doc_log_likelihood(&bag, &[1.0, 0.0]).is_err());
    }

    fn report(model: &str, values: [f64; 2]) -> EvalReport {
        EvalReport {
            model: model.into(),
            config_hash: String::new(),
            corpus_hash: "h".into(),
            train_perplexity: vec![ModalityPerplexity { modality: "text".into(), perplexity: values[0] }],
            conditional: vec![ConditionalPerplexity {
                observed: "image".into(),
                target: "text".into(),
                perplexity: values[1],
                tokens: 1,
                documents: 1,
                skipped: 0,
            }],
        }
    }

    #[test]
    fn identical_reports_have_no_winner() {
        let rows = compare_models(&[report("a", [1.0, 2.0]), report("b", [1.0, 2.0])]).unwrap();
        assert!(rows.iter().all(|r| !r.best));
    }

    #[test]
    fn dominating_report_wins_everywhere() {
        let rows = compare_models(&[report("a", [1.0, 2.0]), report("b", [1.5, 3.0])]).unwrap();
        assert_eq!(rows.len(), 4);
        for r in rows {
            assert_eq!(r.best, r.model == "a");
        }
    }

    #[test]
    fn mismatched_corpora_rejected() {
        let mut b = report("b", [1.0, 2.0]);
        b.corpus_hash = "other".into();
        assert!(compare_models(&[report("a", [1.0, 2.0]), b]).is_err());
    }
}
