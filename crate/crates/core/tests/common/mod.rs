#![allow(dead_code)]

use fmtm::corpus::{BagOfWords, Document, ModalityLayout, MultiModalCorpus, Vocabulary};
use fmtm::generative::{GaussianPrior, ModelParams, StickWeights, TopicDictionary};
use fmtm::inference::{DocVariational, Globals};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| normal(rng));
    &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.5
}

/// Random global parameters with every topic active.
pub fn random_params(counts: &[usize], vocab: &[usize], tied: bool, rng: &mut ChaCha8Rng) -> ModelParams {
    let names: Vec<String> = (0..counts.len()).map(|m| format!("m{m}")).collect();
    let layout = ModalityLayout::new(names.clone(), counts.to_vec()).unwrap();
    let sticks = counts
        .iter()
        .map(|&t| {
            let v = (0..t).map(|_| rng.random_range(0.1..0.9)).collect();
            StickWeights::from_fractions(v, rng.random_range(0.5..3.0), rng.random_range(1.0..20.0)).unwrap()
        })
        .collect();
    let dictionaries = names
        .iter()
        .zip(counts.iter().zip(vocab))
        .map(|(name, (&t, &w))| {
            let lambda = DMatrix::from_fn(t, w, |_, _| rng.random_range(0.1..5.0));
            TopicDictionary::from_dirichlet(name.clone(), lambda, rng.random_range(0.05..1.0))
        })
        .collect();
    let dim = if tied { counts[0] } else { counts.iter().sum() };
    let prior = GaussianPrior {
        mu: DVector::from_fn(dim, |_, _| 0.5 * normal(rng)),
        sigma: random_spd(dim, rng),
    };
    let params = ModelParams { layout, sticks, dictionaries, prior, tied_xi: tied };
    params.validate().unwrap();
    params
}

pub fn random_bag(w: usize, tokens: usize, rng: &mut ChaCha8Rng) -> BagOfWords {
    BagOfWords::from_tokens((0..tokens).map(|_| rng.random_range(0..w)))
}

pub fn random_corpus(vocab: &[usize], docs: usize, max_tokens: usize, rng: &mut ChaCha8Rng) -> MultiModalCorpus {
    let vocabularies = vocab
        .iter()
        .enumerate()
        .map(|(m, &w)| Vocabulary::synthetic(&format!("m{m}"), w).unwrap())
        .collect();
    let documents = (0..docs)
        .map(|d| Document {
            id: format!("d{d}"),
            counts: vocab.iter().map(|&w| random_bag(w, rng.random_range(0..=max_tokens), rng)).collect(),
        })
        .collect();
    MultiModalCorpus::new(vocabularies, documents).unwrap()
}

/// Arbitrary valid variational factors, far from any optimum.
pub fn random_var(doc: &Document, params: &ModelParams, globals: &Globals, rng: &mut ChaCha8Rng) -> DocVariational {
    let dim = params.xi_dim();
    let mut var = DocVariational {
        xi_mean: DVector::from_fn(dim, |_, _| normal(rng)),
        xi_var: DVector::from_fn(dim, |_, _| rng.random_range(0.2..2.0)),
        y_shape: Vec::new(),
        y_rate: Vec::new(),
        resp: Vec::new(),
    };
    for m in 0..params.num_modalities() {
        let active = &globals.active[m];
        let t = active.len();
        var.y_shape.push(DVector::from_fn(t, |_, _| rng.random_range(0.5..5.0)));
        var.y_rate.push(DVector::from_fn(t, |_, _| rng.random_range(0.5..3.0)));
        let mut resp = DMatrix::from_fn(doc.counts[m].len(), t, |_, k| {
            if active[k] {
                rng.random_range(0.01..1.0)
            } else {
                0.0
            }
        });
        for mut row in resp.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        var.resp.push(resp);
    }
    var
}
