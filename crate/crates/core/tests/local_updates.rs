mod common;

use fmtm::corpus::{BagOfWords, Document};
use fmtm::generative::{ModelParams, StickWeights};
use fmtm::inference::{
    doc_elbo, elbo_xi, grad_xi, update_local, update_responsibilities, update_xi, update_y, Globals, LocalOptions,
    XiObjective, XiOptions,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64, counts: &[usize], tied: bool) -> (ModelParams, Document, Globals, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = vec![6; counts.len()];
    let params = common::random_params(counts, &vocab, tied, &mut rng);
    let doc = Document {
        id: "d".into(),
        counts: vocab.iter().map(|&w| common::random_bag(w, rng.random_range(0..=8), &mut rng)).collect(),
    };
    let globals = Globals::new(&params).unwrap();
    (params, doc, globals, rng)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn each_local_step_is_monotone(seed in any::<u64>(), t0 in 1usize..=4, t1 in 1usize..=4, tied in any::<bool>()) {
        let counts = if tied { [t0, t0] } else { [t0, t1] };
        let (params, doc, globals, mut rng) = instance(seed, &counts, tied);
        let mut var = common::random_var(&doc, &params, &globals, &mut rng);
        let mut prev = doc_elbo(&doc, &var, &params, &globals);
        let slack = |f: f64| 1e-10 * f.abs().max(1.0);
        for round in 0..3 {
            for m in 0..2 {
                update_responsibilities(&mut var, m, &doc.counts[m], &globals);
                let cur = doc_elbo(&doc, &var, &params, &globals);
                prop_assert!(cur >= prev - slack(prev), "round {round} responsibilities {m}: {prev} -> {cur}");
                prev = cur;
            }
            for m in 0..2 {
                update_y(&mut var, m, &doc.counts[m], &globals, params.xi_range(m));
                let cur = doc_elbo(&doc, &var, &params, &globals);
                prop_assert!(cur >= prev - slack(prev), "round {round} q(Y) {m}: {prev} -> {cur}");
                prev = cur;
            }
        }
        let out = update_local(&doc, &var, &params, &globals, &LocalOptions::default());
        prop_assert!(out.elbo >= prev - slack(prev));
        prop_assert_eq!(out.elbo, doc_elbo(&doc, &out.var, &params, &globals));
        for m in 0..2 {
            for row in out.var.resp[m].row_iter() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-10);
            }
        }
        prop_assert!(out.var.xi_var.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn xi_update_never_decreases_its_objective(seed in any::<u64>(), n in 1usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mu = DVector::from_fn(n, |_, _| common::normal(&mut rng));
        let precision = common::random_spd(n, &mut rng);
        let obj = XiObjective {
            a: DVector::from_fn(n, |_, _| rng.random_range(0.0..10.0)),
            b: DVector::from_fn(n, |_, _| rng.random_range(0.0..10.0)),
            mu: &mu,
            precision: &precision,
        };
        let m = DVector::from_fn(n, |_, _| 3.0 * common::normal(&mut rng));
        let v = DVector::from_fn(n, |_, _| rng.random_range(1e-3..10.0));
        let before = elbo_xi(&obj, &m, &v).unwrap();
        let out = update_xi(&obj, &m, &v, &XiOptions::default());
        prop_assert!(elbo_xi(&obj, &out.xi_mean, &out.xi_var).unwrap() >= before - 1e-12);
        prop_assert!(out.xi_var.iter().all(|x| *x > 0.0));
    }

    #[test]
    fn gradient_matches_central_differences(seed in any::<u64>(), n in 1usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mu = DVector::from_fn(n, |_, _| common::normal(&mut rng));
        let precision = common::random_spd(n, &mut rng);
        let obj = XiObjective {
            a: DVector::from_fn(n, |_, _| rng.random_range(0.1..10.0)),
            b: DVector::from_fn(n, |_, _| rng.random_range(0.1..10.0)),
            mu: &mu,
            precision: &precision,
        };
        let m = DVector::from_fn(n, |_, _| common::normal(&mut rng));
        let v = DVector::from_fn(n, |_, _| rng.random_range(0.2..3.0));
        let (gm, gv) = grad_xi(&obj, &m, &v);
        let h = 1e-5;
        for c in 0..n {
            let shift = |x: &DVector<f64>, d: f64| { let mut y = x.clone(); y[c] += d; y };
            let fd_m = (elbo_xi(&obj, &shift(&m, h), &v).unwrap() - elbo_xi(&obj, &shift(&m, -h), &v).unwrap()) / (2.0 * h);
            let fd_v = (elbo_xi(&obj, &m, &shift(&v, h)).unwrap() - elbo_xi(&obj, &m, &shift(&v, -h)).unwrap()) / (2.0 * h);
            for (g, fd) in [(gm[c], fd_m), (gv[c], fd_v)] {
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
                prop_assert!(rel <= 1e-4, "coordinate {c}: {g} vs {fd}");
            }
        }
    }
}

#[test]
fn single_topic_takes_every_token() {
    let (mut params, doc, _, mut rng) = instance(5, &[1, 2], false);
    params.sticks[0] = StickWeights::from_fractions(vec![1.0], 1.0, 3.0).unwrap();
    let globals = Globals::new(&params).unwrap();
    let var = common::random_var(&doc, &params, &globals, &mut rng);
    let out = update_local(&doc, &var, &params, &globals, &LocalOptions::default());
    assert!(out.var.resp[0].iter().all(|&r| r == 1.0));
    assert_eq!(out.var.topic_counts(0, &doc.counts[0])[0], doc.counts[0].total() as f64);
}

#[test]
fn identical_topics_split_evenly() {
    let (mut params, _, _, mut rng) = instance(6, &[2], false);
    params.sticks[0] = StickWeights::from_fractions(vec![0.5, 1.0], 1.0, 3.0).unwrap();
    let row = DMatrix::from_fn(1, 6, |_, w| 1.0 + w as f64);
    let lambda = DMatrix::from_fn(2, 6, |_, w| row[(0, w)]);
    params.dictionaries[0] = fmtm::generative::TopicDictionary::from_dirichlet("m0", lambda, 0.5);
    params.prior.mu = DVector::from_element(2, 0.1);
    params.prior.sigma = DMatrix::identity(2, 2);
    let globals = Globals::new(&params).unwrap();
    let doc = Document { id: "d".into(), counts: vec![BagOfWords::from_tokens([0, 0, 3, 5])] };
    let mut var = common::random_var(&doc, &params, &globals, &mut rng);
    var.xi_mean = DVector::from_element(2, 0.3);
    var.xi_var = DVector::from_element(2, 0.5);
    var.y_shape[0] = DVector::from_element(2, 2.0);
    var.y_rate[0] = DVector::from_element(2, 1.5);
    update_responsibilities(&mut var, 0, &doc.counts[0], &globals);
    assert!(var.resp[0].iter().all(|&r| r == 0.5));
    let out = update_local(&doc, &var, &params, &globals, &LocalOptions::default());
    for row in out.var.resp[0].row_iter() {
        assert!((row[0] - 0.5).abs() < 1e-12);
    }
}

/// Coordinate ascent where each one-dimensional stationary point is found by
/// bisection on its partial derivative, written out separately from the
/// library gradient.
fn bisection_optimum(obj: &XiObjective) -> (DVector<f64>, DVector<f64>) {
    let n = obj.a.len();
    let mut m = obj.mu.clone();
    let mut v = DVector::from_element(n, 1.0);
    let bisect = |f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64| {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    for _ in 0..2000 {
        for c in 0..n {
            let p = obj.precision;
            let cross: f64 = (0..n).filter(|&j| j != c).map(|j| p[(c, j)] * (m[j] - obj.mu[j])).sum();
            let (vc, b, a) = (v[c], obj.b[c], obj.a[c]);
            let dm = |x: f64| -a + b * (-x + vc / 2.0).exp() - p[(c, c)] * (x - obj.mu[c]) - cross;
            m[c] = bisect(&dm, -50.0, 50.0);
            let mc = m[c];
            let dv = |y: f64| -0.5 * b * (-mc + y / 2.0).exp() - 0.5 * p[(c, c)] + 0.5 / y;
            v[c] = bisect(&dv, 1e-12, 1e3);
        }
    }
    (m, v)
}

#[test]
fn data_free_optimum_matches_bisection() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mu = DVector::from_fn(4, |_, _| common::normal(&mut rng));
    let precision = common::random_spd(4, &mut rng);
    let obj = XiObjective {
        a: DVector::from_vec(vec![0.5, 2.0, 0.1, 1.0]),
        b: DVector::from_vec(vec![0.3, 1.5, 0.2, 2.5]),
        mu: &mu,
        precision: &precision,
    };
    let (m_ref, v_ref) = bisection_optimum(&obj);
    let out = update_xi(&obj, &DVector::zeros(4), &DVector::from_element(4, 1.0), &XiOptions { max_steps: 200, ..XiOptions::default() });
    assert!((&out.xi_mean - &m_ref).amax() < 1e-4, "{} vs {}", out.xi_mean, m_ref);
    assert!((&out.xi_var - &v_ref).amax() < 1e-4, "{} vs {}", out.xi_var, v_ref);
}

#[test]
fn prior_only_gradient_is_the_gaussian_pull() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let mu = DVector::from_fn(5, |_, _| common::normal(&mut rng));
    let precision = common::random_spd(5, &mut rng);
    let obj = XiObjective { a: DVector::zeros(5), b: DVector::zeros(5), mu: &mu, precision: &precision };
    let m = DVector::from_fn(5, |_, _| common::normal(&mut rng));
    let v = DVector::from_element(5, 0.7);
    let (gm, _) = grad_xi(&obj, &m, &v);
    let pull = -(&precision * (&m - &mu));
    assert!((gm - pull).amax() < 1e-14);
}

#[test]
fn identity_covariance_decouples_the_gradient() {
    let mu = DVector::zeros(4);
    let precision = DMatrix::identity(4, 4);
    let obj = XiObjective {
        a: DVector::from_vec(vec![1.0, 2.0, 0.5, 3.0]),
        b: DVector::from_vec(vec![2.0, 0.5, 1.0, 1.0]),
        mu: &mu,
        precision: &precision,
    };
    let m = DVector::from_vec(vec![0.1, -0.3, 0.7, 0.2]);
    let v = DVector::from_vec(vec![0.4, 0.9, 1.3, 0.6]);
    let (gm, gv) = grad_xi(&obj, &m, &v);
    let mut m2 = m.clone();
    let mut v2 = v.clone();
    for c in 2..4 {
        m2[c] += 1.5;
        v2[c] *= 3.0;
    }
    let (gm2, gv2) = grad_xi(&obj, &m2, &v2);
    for c in 0..2 {
        assert_eq!(gm[c], gm2[c]);
        assert_eq!(gv[c], gv2[c]);
    }
}
