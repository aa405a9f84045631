//! Per-document updates of `q(z)`, `q(Y)` and `q(xi)`.

use std::ops::Range;

use nalgebra::DVector;

use super::xi::{update_xi, XiObjective, XiOptions};
use super::{DocVariational, Globals};
use crate::corpus::{BagOfWords, Document};
use crate::generative::ModelParams;
use crate::special::{digamma, ln_gamma};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub xi: XiOptions,
}

impl Default for LocalOptions {
    fn default() -> Self {
        LocalOptions { max_iterations: 20, tolerance: 1e-6, xi: XiOptions::default() }
    }
}

#[derive(Debug, Clone)]
pub struct LocalOutcome {
    pub var: DocVariational,
    pub elbo: f64,
    pub iterations: usize,
    pub xi_stalled: bool,
}

fn xi_scale(var: &DocVariational, c: usize) -> f64 {
    (-var.xi_mean[c] + 0.5 * var.xi_var[c]).exp()
}

/// Sets `phi_ik` proportional to `exp(E[log Y_k] + E[log eta_kw])` over the
/// active topics.
pub fn update_responsibilities(var: &mut DocVariational, m: usize, bag: &BagOfWords, globals: &Globals) {
    let active = &globals.active[m];
    let elog_eta = &globals.elog_eta[m];
    let elog_y = var.expected_log_y(m);
    let t = active.len();
    let resp = &mut var.resp[m];
    let mut logits = vec![0.0; t];
    for (i, &(w, _)) in bag.entries().iter().enumerate() {
        let mut max = f64::NEG_INFINITY;
        for k in 0..t {
            if active[k] {
                logits[k] = elog_y[k] + elog_eta[(k, w)];
                max = max.max(logits[k]);
            }
        }
        let mut total = 0.0;
        for k in 0..t {
            let x = if active[k] { (logits[k] - max).exp() } else { 0.0 };
            resp[(i, k)] = x;
            total += x;
        }
        for k in 0..t {
            resp[(i, k)] /= total;
        }
    }
}

/// Sets `q(Y_k) = Gamma(beta p_k + n_k, E[exp(-xi_k)] + N / zeta)` with
/// `zeta` the current `sum_k E[Y_k]`.
pub fn update_y(var: &mut DocVariational, m: usize, bag: &BagOfWords, globals: &Globals, range: Range<usize>) {
    let active = &globals.active[m];
    let a0 = &globals.prior_shape[m];
    let n = var.topic_counts(m, bag);
    let total = bag.total() as f64;
    let ey = var.expected_y(m);
    let zeta: f64 = (0..active.len()).filter(|&k| active[k]).map(|k| ey[k]).sum();
    let extra = if total > 0.0 { total / zeta } else { 0.0 };
    for k in 0..active.len() {
        let e = xi_scale(var, range.start + k);
        if active[k] {
            var.y_shape[m][k] = a0[k] + n[k];
            var.y_rate[m][k] = e + extra;
        } else {
            var.y_shape[m][k] = a0[k];
            var.y_rate[m][k] = e;
        }
    }
}

pub(crate) fn xi_objective<'a>(var: &DocVariational, params: &'a ModelParams, globals: &'a Globals) -> XiObjective<'a> {
    let dim = params.xi_dim();
    let mut a = DVector::zeros(dim);
    let mut b = DVector::zeros(dim);
    for m in 0..params.num_modalities() {
        let start = params.xi_range(m).start;
        let ey = var.expected_y(m);
        for (k, &on) in globals.active[m].iter().enumerate() {
            if on {
                a[start + k] += globals.prior_shape[m][k];
                b[start + k] += ey[k];
            }
        }
    }
    XiObjective { a, b, mu: &params.prior.mu, precision: &globals.precision }
}

/// The document's contribution to the bound.
pub fn doc_elbo(doc: &Document, var: &DocVariational, params: &ModelParams, globals: &Globals) -> f64 {
    let mut total = 0.0;
    for m in 0..params.num_modalities() {
        let bag = &doc.counts[m];
        let start = params.xi_range(m).start;
        let active = &globals.active[m];
        let a0 = &globals.prior_shape[m];
        let elog_eta = &globals.elog_eta[m];
        let resp = &var.resp[m];
        for (i, &(w, c)) in bag.entries().iter().enumerate() {
            let mut s = 0.0;
            for k in 0..active.len() {
                let phi = resp[(i, k)];
                if active[k] && phi > 0.0 {
                    s += phi * (elog_eta[(k, w)] - phi.ln());
                }
            }
            total += c as f64 * s;
        }
        let n = var.topic_counts(m, bag);
        let mut zeta = 0.0;
        for k in 0..active.len() {
            if !active[k] {
                continue;
            }
            let a = var.y_shape[m][k];
            let b = var.y_rate[m][k];
            let c = start + k;
            total += (n[k] + a0[k] - a) * digamma(a) - (n[k] + a0[k]) * b.ln() + a + ln_gamma(a)
                - a0[k] * var.xi_mean[c]
                - ln_gamma(a0[k])
                - xi_scale(var, c) * a / b;
            zeta += a / b;
        }
        let tokens = bag.total() as f64;
        if tokens > 0.0 {
            total -= tokens * zeta.ln();
        }
    }
    let d = &var.xi_mean - &params.prior.mu;
    total += -0.5 * globals.log_det_sigma - 0.5 * d.dot(&(&globals.precision * &d));
    for c in 0..d.len() {
        total += -0.5 * globals.precision[(c, c)] * var.xi_var[c] + 0.5 * var.xi_var[c].ln() + 0.5;
    }
    total
}

/// Alternates the local updates of one document until its bound settles.
pub fn update_local(
    doc: &Document,
    var: &DocVariational,
    params: &ModelParams,
    globals: &Globals,
    opts: &LocalOptions,
) -> LocalOutcome {
    let mut var = var.clone();
    let mut prev = doc_elbo(doc, &var, params, globals);
    let mut xi_stalled = false;
    let mut iterations = 0;
    let modalities = params.num_modalities();
    for _ in 0..opts.max_iterations {
        iterations += 1;
        for m in 0..modalities {
            update_responsibilities(&mut var, m, &doc.counts[m], globals);
        }
        for m in 0..modalities {
            update_y(&mut var, m, &doc.counts[m], globals, params.xi_range(m));
        }
        let obj = xi_objective(&var, params, globals);
        let out = update_xi(&obj, &var.xi_mean, &var.xi_var, &opts.xi);
        xi_stalled |= out.stalled;
        var.xi_mean = out.xi_mean;
        var.xi_var = out.xi_var;
        for m in 0..modalities {
            update_y(&mut var, m, &doc.counts[m], globals, params.xi_range(m));
        }
        let cur = doc_elbo(doc, &var, params, globals);
        let done = (cur - prev).abs() <= opts.tolerance * cur.abs().max(1.0);
        prev = cur;
        if done {
            break;
        }
    }
    LocalOutcome { var, elbo: prev, iterations, xi_stalled }
}
