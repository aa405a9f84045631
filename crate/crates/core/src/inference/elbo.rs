use super::local::doc_elbo;
use super::{DocVariational, Globals};
use crate::corpus::MultiModalCorpus;
use crate::generative::ModelParams;
use crate::par::{ordered_sum, Executor};
use crate::special::ln_gamma;
use crate::{Error, Result};

/// Terms of the bound that involve only global factors: the stick priors and
/// `E[log p(eta)] - E[log q(eta)]`.
pub fn global_elbo(params: &ModelParams) -> f64 {
    let mut total = 0.0;
    for (sticks, dict) in params.sticks.iter().zip(&params.dictionaries) {
        let free = sticks.len().saturating_sub(1);
        for &v in &sticks.v()[..free] {
            total += sticks.alpha.ln() + (sticks.alpha - 1.0) * (-v).ln_1p();
        }
        let Some(lambda) = &dict.dirichlet else {
            continue;
        };
        let elog = dict.expected_log();
        let w = lambda.ncols() as f64;
        let prior_norm = ln_gamma(w * dict.gamma) - w * ln_gamma(dict.gamma);
        for k in 0..lambda.nrows() {
            let row = lambda.row(k);
            let mut s = prior_norm - ln_gamma(row.sum());
            for (j, &l) in row.iter().enumerate() {
                s += (dict.gamma - l) * elog[(k, j)] + ln_gamma(l);
            }
            total += s;
        }
    }
    total
}

/// The full evidence lower bound.
pub fn elbo_total(
    corpus: &MultiModalCorpus,
    docs: &[DocVariational],
    params: &ModelParams,
    globals: &Globals,
    exec: &Executor,
) -> Result<f64> {
    let per_doc = exec.map_zip(&corpus.documents, docs, |_, doc, var| doc_elbo(doc, var, params, globals));
    let total = ordered_sum(&per_doc) + global_elbo(params);
    if !total.is_finite() {
        return Err(Error::Numerical(format!("ELBO is {total}")));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{BagOfWords, Document, ModalityLayout, Vocabulary};
    use crate::generative::{GaussianPrior, StickWeights, TopicDictionary};
    use nalgebra::{DMatrix, DVector};

    fn params(lambda: DMatrix<f64>) -> ModelParams {
        let t = lambda.nrows();
        let mut v = vec![0.5; t];
        v[t - 1] = 1.0;
        ModelParams {
            layout: ModalityLayout::new(vec!["m0".into()], vec![t]).unwrap(),
            sticks: vec![StickWeights::from_fractions(v, 1.0, 2.0).unwrap()],
            dictionaries: vec![TopicDictionary::from_dirichlet("m0", lambda, 0.5)],
            prior: GaussianPrior::standard(t),
            tied_xi: false,
        }
    }

    #[test]
    fn posterior_equal_to_prior_costs_nothing() {
        let p = params(DMatrix::from_element(1, 4, 0.5));
        assert!(global_elbo(&p).abs() < 1e-12);
    }

    #[test]
    fn topic_term_is_a_negative_divergence() {
        let p = params(DMatrix::from_row_slice(2, 4, &[3.0, 0.5, 1.0, 7.0, 0.5, 0.5, 0.5, 2.0]));
        // Stick priors at v = 0.5, alpha = 1 contribute log 1 = 0.
        assert!(global_elbo(&p) < 0.0);
    }

    #[test]
    fn broken_document_state_is_reported() {
        let p = params(DMatrix::from_element(2, 3, 1.0));
        let globals = Globals::new(&p).unwrap();
        let corpus = MultiModalCorpus::new(
            vec![Vocabulary::synthetic("m0", 3).unwrap()],
            vec![Document { id: "d".into(), counts: vec![BagOfWords::from_tokens([0, 1])] }],
        )
        .unwrap();
        let mut var = DocVariational::initial(&corpus.documents[0], &p, &globals, DVector::zeros(2), DVector::from_element(2, 1.0));
        let exec = Executor::new(1);
        assert!(elbo_total(&corpus, std::slice::from_ref(&var), &p, &globals, &exec).unwrap().is_finite());
        var.xi_var[1] = -1.0;
        assert!(matches!(elbo_total(&corpus, &[var], &p, &globals, &exec), Err(Error::Numerical(_))));
    }
}
