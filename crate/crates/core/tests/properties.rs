mod common;

use std::collections::BTreeSet;

use fmtm::analysis::{correlation_matrix, rank_topics, visual_relevance};
use fmtm::corpus::{corpus_stats, load_corpus, split_corpus, write_corpus, MultiModalCorpus};
use fmtm::evaluation::perplexity_with_thetas;
use fmtm::generative::{expected_theta, sample_document, StickWeights};
use fmtm::persistence::{save_model, Provenance};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fractions() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..=1.0f64, 1..12)
}

proptest! {
    #[test]
    fn sticks_form_a_simplex(v in fractions(), alpha in 0.01..10.0f64) {
        let s = StickWeights::from_fractions(v.clone(), alpha, 1.0).unwrap();
        prop_assert!((s.p().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let mut rest = 1.0;
        for (k, &p) in s.p().iter().enumerate() {
            let vk = if k + 1 == v.len() { 1.0 } else { v[k] };
            prop_assert!((p - vk * rest).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&p));
            rest *= 1.0 - vk;
        }
    }

    #[test]
    fn theta_ignores_a_common_shift(v in fractions(), shift in -20.0..20.0f64, seed in any::<u64>()) {
        let s = StickWeights::from_fractions(v, 1.0, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xi: Vec<f64> = (0..s.len()).map(|_| common::normal(&mut rng)).collect();
        let shifted: Vec<f64> = xi.iter().map(|x| x + shift).collect();
        let a = expected_theta(&xi, &s).unwrap();
        let b = expected_theta(&shifted, &s).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn split_is_a_partition(seed in any::<u64>(), docs in 2usize..40, frac in 0.05..0.95f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus = common::random_corpus(&[5, 3], docs, 4, &mut rng);
        let (a, b) = split_corpus(&corpus, frac, seed).unwrap();
        let ids = |c: &MultiModalCorpus| c.documents.iter().map(|d| d.id.clone()).collect::<BTreeSet<_>>();
        prop_assert!(ids(&a).is_disjoint(&ids(&b)));
        prop_assert_eq!(ids(&a).union(&ids(&b)).cloned().collect::<BTreeSet<_>>(), ids(&corpus));
        prop_assert_eq!(a.len(), ((frac * docs as f64 + 0.5).floor() as usize).min(docs));
    }

    #[test]
    fn stats_match_direct_sums(seed in any::<u64>(), docs in 0usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus = common::random_corpus(&[5, 3], docs, 6, &mut rng);
        let stats = corpus_stats(&corpus);
        prop_assert_eq!(stats.documents, docs);
        for m in 0..2 {
            let mut tokens = 0u64;
            let mut nonempty = 0;
            for d in &corpus.documents {
                let n: u64 = d.counts[m].entries().iter().map(|&(_, c)| c as u64).sum();
                tokens += n;
                nonempty += usize::from(n > 0);
            }
            prop_assert_eq!(stats.modalities[m].total_tokens, tokens);
            prop_assert_eq!(stats.modalities[m].nonempty_documents, nonempty);
        }
    }

    #[test]
    fn corpus_survives_the_file_format(seed in any::<u64>(), docs in 0usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus = common::random_corpus(&[7, 4], docs, 9, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_corpus(&corpus, dir.path()).unwrap();
        prop_assert_eq!(load_corpus(manifest).unwrap(), corpus);
    }

    #[test]
    fn correlation_is_scale_free(seed in any::<u64>(), n in 1usize..8, e in -10i32..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = common::random_spd(n, &mut rng);
        // Powers of four keep every square root exact.
        let c = 4f64.powi(e);
        prop_assert_eq!(correlation_matrix(&(&sigma * c)).unwrap(), correlation_matrix(&sigma).unwrap());
        let omega = correlation_matrix(&sigma).unwrap();
        prop_assert!(omega.diagonal().iter().all(|d| (d - 1.0).abs() < 1e-15));
        prop_assert!(omega.iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn ranking_is_a_stable_permutation(rho in prop::collection::vec(0.0..1.0f64, 0..20), extra in 0usize..5) {
        let ranking = rank_topics(&rho);
        let mut sorted = ranking.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..rho.len()).collect::<Vec<_>>());
        for w in ranking.windows(2) {
            prop_assert!(rho[w[0]] > rho[w[1]] || (rho[w[0]] == rho[w[1]] && w[0] < w[1]));
        }
        let mut longer = rho.clone();
        longer.extend(std::iter::repeat_n(0.0, extra));
        let extended = rank_topics(&longer);
        let kept: Vec<usize> = extended.into_iter().filter(|&k| k < rho.len()).collect();
        prop_assert_eq!(kept, ranking);
    }

    #[test]
    fn relevance_grows_with_any_entry(
        entries in prop::collection::vec(-1.0..1.0f64, 12),
        at in 0usize..12,
        bump in 0.0..0.5f64,
    ) {
        let cross = DMatrix::from_row_slice(3, 4, &entries);
        let mut bigger = cross.clone();
        let x = bigger[(at / 4, at % 4)];
        bigger[(at / 4, at % 4)] = x.signum() * (x.abs() + bump).min(1.0);
        let a = visual_relevance(&cross).unwrap();
        let b = visual_relevance(&bigger).unwrap();
        prop_assert!(b[at / 4] >= a[at / 4]);
        let mut silent = cross.clone();
        silent.row_mut(1).fill(0.0);
        prop_assert_eq!(visual_relevance(&silent).unwrap()[1], 0.0);
    }

    #[test]
    fn perplexity_uses_token_denominators(seed in any::<u64>(), docs in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = common::random_params(&[3], &[6], false, &mut rng);
        let corpus = common::random_corpus(&[6], docs, 8, &mut rng);
        prop_assume!(corpus.documents.iter().any(|d| !d.counts[0].is_empty()));
        let thetas: Vec<Vec<f64>> = (0..docs).map(|_| params.sticks[0].p().to_vec()).collect();
        let topics = &params.dictionaries[0].topics;
        let once = perplexity_with_thetas(&corpus, 0, &thetas, topics).unwrap();
        let mut twice = corpus.clone();
        for d in &corpus.documents {
            let mut copy = d.clone();
            copy.id.push_str("-copy");
            twice.documents.push(copy);
        }
        let thetas2: Vec<Vec<f64>> = thetas.iter().chain(&thetas).cloned().collect();
        let doubled = perplexity_with_thetas(&twice, 0, &thetas2, topics).unwrap();
        prop_assert!((once - doubled).abs() <= 1e-12 * once);

        let mut reversed = corpus.clone();
        reversed.documents.reverse();
        let rev_thetas: Vec<Vec<f64>> = thetas.iter().rev().cloned().collect();
        let r = perplexity_with_thetas(&reversed, 0, &rev_thetas, topics).unwrap();
        prop_assert!((once - r).abs() <= 1e-12 * once);
    }
}

#[test]
fn sampling_is_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = common::random_params(&[3, 2], &[10, 8], false, &mut rng);
    let a = sample_document(&params, "d", &[50, 20], &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
    let b = sample_document(&params, "d", &[50, 20], &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
    assert_eq!(a, b);
}

fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[test]
fn assignments_follow_theta() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = common::random_params(&[4], &[12], false, &mut rng);
    let (_, latent) = sample_document(&params, "d", &[10_000], &mut rng).unwrap();
    let mut freq = vec![0.0; 4];
    for &k in &latent.assignments[0] {
        freq[k] += 1.0 / 10_000.0;
    }
    assert!(total_variation(&freq, &latent.theta[0]) <= 0.02);
}

#[test]
fn single_topic_words_follow_the_topic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut params = common::random_params(&[1], &[15], false, &mut rng);
    params.sticks[0] = StickWeights::from_fractions(vec![1.0], 1.0, 2.0).unwrap();
    let (doc, latent) = sample_document(&params, "d", &[10_000], &mut rng).unwrap();
    assert_eq!(latent.theta[0], vec![1.0]);
    let mut freq = vec![0.0; 15];
    for &(w, c) in doc.counts[0].entries() {
        freq[w] = c as f64 / 10_000.0;
    }
    let topic: Vec<f64> = params.dictionaries[0].topics.row(0).iter().copied().collect();
    assert!(total_variation(&freq, &topic) <= 0.02);
}

#[test]
fn invalid_models_are_not_saved() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut params = common::random_params(&[3, 3], &[5, 5], false, &mut rng);
    params.prior.sigma[(0, 1)] += 1e-3;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.fmtm");
    assert!(save_model(&params, &Provenance::default(), &path).is_err());
    assert!(!path.exists());
}
