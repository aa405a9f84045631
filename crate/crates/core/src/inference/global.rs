//! Updates of the global parameters.

use nalgebra::{DMatrix, DVector};

use super::DocVariational;
use crate::corpus::MultiModalCorpus;
use crate::generative::{GaussianPrior, ModelParams, StickWeights, TopicDictionary, TOPIC_OFF_THRESHOLD};
use crate::linalg;
use crate::special::ln_gamma;
use crate::{Error, Result};

const V_MIN: f64 = 1e-8;
const V_MAX: f64 = 1.0 - 1e-8;
const BETA_MIN: f64 = 1e-3;
const BETA_MAX: f64 = 1e4;
const ALPHA_MIN: f64 = 1e-3;
const ALPHA_MAX: f64 = 1e3;
const STICK_PASSES: usize = 2;
const GOLDEN_ITERATIONS: usize = 48;
/// Expected usage above which a topic may not be switched off.
const USED_TOPIC: f64 = 1e-6;

/// Closed-form `mu` and `Sigma` given every document's `q(xi)`, followed by
/// the jitter floor. Returns the prior and the jitter that was added.
pub fn update_mu_sigma(docs: &[DocVariational], jitter: f64) -> Result<(GaussianPrior, f64)> {
    let Some(first) = docs.first() else {
        return Err(Error::InvalidArgument("no documents".into()));
    };
    let dim = first.xi_mean.len();
    let n = docs.len() as f64;
    let mut mu = DVector::zeros(dim);
    for d in docs {
        mu += &d.xi_mean;
    }
    mu /= n;
    let mut sigma = DMatrix::zeros(dim, dim);
    for d in docs {
        let r = &d.xi_mean - &mu;
        for i in 0..dim {
            for j in i..dim {
                sigma[(i, j)] += r[i] * r[j];
            }
            sigma[(i, i)] += d.xi_var[i];
        }
    }
    for i in 0..dim {
        for j in i..dim {
            sigma[(i, j)] /= n;
            sigma[(j, i)] = sigma[(i, j)];
        }
    }
    let added = linalg::apply_jitter(&mut sigma, jitter);
    Ok((GaussianPrior { mu, sigma }, added))
}

/// `lambda_kw = gamma + sum_d sum_i [w_i = w] c_i phi_dik`.
pub fn update_topics(
    corpus: &MultiModalCorpus,
    docs: &[DocVariational],
    params: &ModelParams,
) -> Result<Vec<TopicDictionary>> {
    let mut out = Vec::with_capacity(params.num_modalities());
    for (m, dict) in params.dictionaries.iter().enumerate() {
        let mut lambda = DMatrix::from_element(dict.num_topics(), dict.vocab_size(), dict.gamma);
        for (doc, var) in corpus.documents.iter().zip(docs) {
            let resp = &var.resp[m];
            for (i, &(w, c)) in doc.counts[m].entries().iter().enumerate() {
                for k in 0..resp.ncols() {
                    lambda[(k, w)] += c as f64 * resp[(i, k)];
                }
            }
        }
        if lambda.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("non-finite topic counts in '{}'", dict.modality)));
        }
        out.push(TopicDictionary::from_dirichlet(dict.modality.clone(), lambda, dict.gamma));
    }
    Ok(out)
}

/// Result of a stick update.
#[derive(Debug, Clone, PartialEq)]
pub struct StickUpdate {
    pub sticks: StickWeights,
    /// Increase of the profiled objective.
    pub gain: f64,
}

/// Sufficient statistics of one topic for the profiled stick objective.
struct TopicStats {
    /// `n_dk` for every document.
    counts: Vec<f64>,
    /// `sum_d (log b*_dk + xi_dk)`.
    offset: f64,
    /// `sum_d n_dk log b*_dk`.
    weighted_log_rate: f64,
    used: f64,
}

struct Profile {
    stats: Vec<TopicStats>,
    docs: f64,
}

impl Profile {
    fn data_term(&self, p: &[f64], beta: f64) -> f64 {
        let mut total = 0.0;
        for (k, st) in self.stats.iter().enumerate() {
            if p[k] < TOPIC_OFF_THRESHOLD {
                if st.used > USED_TOPIC {
                    return f64::NEG_INFINITY;
                }
                continue;
            }
            let a0 = beta * p[k];
            let lg0 = ln_gamma(a0);
            let mut s = -self.docs * lg0 - a0 * st.offset - st.weighted_log_rate;
            for &n in &st.counts {
                if n != 0.0 {
                    s += ln_gamma(a0 + n);
                } else {
                    s += lg0;
                }
            }
            total += s;
        }
        total
    }

    fn objective(&self, v: &[f64], alpha: f64, beta: f64) -> f64 {
        let p = crate::generative::stick_breaking_weights(v);
        let f = stick_prior(v, alpha) + self.data_term(&p, beta);
        if f.is_nan() {
            f64::NEG_INFINITY
        } else {
            f
        }
    }
}

fn stick_prior(v: &[f64], alpha: f64) -> f64 {
    let free = v.len().saturating_sub(1);
    v[..free]
        .iter()
        .map(|&x| alpha.ln() + (alpha - 1.0) * (-x).ln_1p())
        .sum()
}

fn logit(x: f64) -> f64 {
    (x / (1.0 - x)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Maximizer of a unimodal function on `[lo, hi]`.
fn golden_section(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_ITERATIONS {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Updates the stick fractions and `alpha`, `beta` of modality `m` and resets
/// every document's `q(Y)` for that modality to its optimum.
///
/// With `q(Y)` profiled out the bound reduces to a function of the prior
/// shapes alone; each fraction and `beta` are improved by golden-section
/// search in logit and log space, `alpha` in closed form. A move is kept only
/// if it increases that function.
pub fn update_sticks(
    corpus: &MultiModalCorpus,
    docs: &mut [DocVariational],
    params: &ModelParams,
    m: usize,
) -> Result<StickUpdate> {
    let old = &params.sticks[m];
    let t = old.len();
    let start = params.xi_range(m).start;

    let mut counts = vec![Vec::with_capacity(docs.len()); t];
    let mut rates = vec![Vec::with_capacity(docs.len()); t];
    let mut stats: Vec<TopicStats> = (0..t)
        .map(|_| TopicStats { counts: Vec::new(), offset: 0.0, weighted_log_rate: 0.0, used: 0.0 })
        .collect();
    for (doc, var) in corpus.documents.iter().zip(docs.iter()) {
        let bag = &doc.counts[m];
        let n = var.topic_counts(m, bag);
        let ey = var.expected_y(m);
        let zeta: f64 = (0..t).filter(|&k| old.is_active(k)).map(|k| ey[k]).sum();
        let tokens = bag.total() as f64;
        let extra = if tokens > 0.0 { tokens / zeta } else { 0.0 };
        for k in 0..t {
            let c = start + k;
            let e = (-var.xi_mean[c] + 0.5 * var.xi_var[c]).exp();
            let b = e + extra;
            let st = &mut stats[k];
            st.offset += b.ln() + var.xi_mean[c];
            st.weighted_log_rate += n[k] * b.ln();
            st.used += n[k];
            counts[k].push(n[k]);
            rates[k].push((e, b));
        }
    }
    for (st, c) in stats.iter_mut().zip(counts) {
        st.counts = c;
    }
    let profile = Profile { stats, docs: docs.len() as f64 };

    let mut v = old.v().to_vec();
    let mut alpha = old.alpha;
    let mut beta = old.beta;
    let start_value = profile.objective(&v, alpha, beta);
    if !start_value.is_finite() {
        return Err(Error::Numerical(format!(
            "stick objective of modality {m} is not finite at the current point"
        )));
    }
    let mut best = start_value;

    for _ in 0..STICK_PASSES {
        for k in 0..t.saturating_sub(1) {
            let eval = |x: f64| {
                let mut trial = v.clone();
                trial[k] = sigmoid(x);
                profile.objective(&trial, alpha, beta)
            };
            let (x, fx) = golden_section(eval, logit(V_MIN), logit(V_MAX));
            if fx > best {
                v[k] = sigmoid(x);
                best = fx;
            }
        }
        let (x, fx) = golden_section(|x| profile.objective(&v, alpha, x.exp()), BETA_MIN.ln(), BETA_MAX.ln());
        if fx > best {
            beta = x.exp();
            best = fx;
        }
        if t > 1 {
            let log_rest: f64 = v[..t - 1].iter().map(|&x| (-x).ln_1p()).sum();
            let cand = if log_rest < 0.0 {
                (-((t - 1) as f64) / log_rest).clamp(ALPHA_MIN, ALPHA_MAX)
            } else {
                ALPHA_MAX
            };
            let fx = profile.objective(&v, cand, beta);
            if fx > best {
                alpha = cand;
                best = fx;
            }
        }
    }

    let sticks = StickWeights::from_fractions(v, alpha, beta)?;
    let shapes = sticks.prior_shapes();
    for (d, var) in docs.iter_mut().enumerate() {
        for k in 0..t {
            let (e, b) = rates[k][d];
            if sticks.is_active(k) {
                var.y_shape[m][k] = shapes[k] + profile.stats[k].counts[d];
                var.y_rate[m][k] = b;
            } else {
                var.y_shape[m][k] = shapes[k];
                var.y_rate[m][k] = e;
            }
        }
    }
    Ok(StickUpdate { sticks, gain: best - start_value })
}
