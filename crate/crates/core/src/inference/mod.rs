//! Truncated variational inference.
//!
//! The variational family factorizes into per-document responsibilities
//! `q(z)`, Gamma factors `q(Y)`, a diagonal Gaussian `q(xi)`, and global
//! Dirichlet factors `q(eta)`. Stick fractions, the two concentrations, `mu`
//! and `Sigma` are point estimates. The normalizer `sum_k Y_k` of the topic
//! proportions is handled with the usual first-order bound
//! `-N log S >= -N (log zeta + S / zeta - 1)`, whose optimum is
//! `zeta = sum_k E[Y_k]`; the bound is always evaluated at that optimum.
//!
//! One sweep updates every document's local factors, then `mu`/`Sigma`,
//! then the topics, then the sticks of each modality. Every step is an exact
//! coordinate maximization or a monotone line search, so the bound never
//! decreases apart from the covariance jitter.

mod config;
mod elbo;
mod fit;
mod global;
mod local;
mod xi;

pub use config::TrainConfig;
pub use elbo::{elbo_total, global_elbo};
pub use fit::{check_invariants, fit, fit_with_observer, init_state, resume, TraceEntry, TrainState};
pub use global::{update_mu_sigma, update_sticks, update_topics, StickUpdate};
pub use local::{doc_elbo, update_local, update_responsibilities, update_y, LocalOptions, LocalOutcome};
pub use xi::{elbo_xi, grad_xi, update_xi, XiObjective, XiOptions, XiUpdate};

use nalgebra::{DMatrix, DVector};

use crate::corpus::Document;
use crate::generative::ModelParams;
use crate::linalg;
use crate::special::digamma;
use crate::Result;

/// Variational factors of one document.
#[derive(Debug, Clone, PartialEq)]
pub struct DocVariational {
    /// Mean of `q(xi)`.
    pub xi_mean: DVector<f64>,
    /// Diagonal variances of `q(xi)`.
    pub xi_var: DVector<f64>,
    /// Per-modality Gamma shapes of `q(Y)`.
    pub y_shape: Vec<DVector<f64>>,
    /// Per-modality Gamma rates of `q(Y)`.
    pub y_rate: Vec<DVector<f64>>,
    /// Per-modality responsibilities; row `i` belongs to the `i`-th distinct
    /// token of the document's bag for that modality.
    pub resp: Vec<DMatrix<f64>>,
}

impl DocVariational {
    /// Starting point for a document: the given `q(xi)`, uniform
    /// responsibilities over the active topics, and `q(Y)` shaped by an even
    /// split of the tokens.
    pub fn initial(
        doc: &Document,
        params: &ModelParams,
        globals: &Globals,
        xi_mean: DVector<f64>,
        xi_var: DVector<f64>,
    ) -> Self {
        let mut var = DocVariational {
            xi_mean,
            xi_var,
            y_shape: Vec::new(),
            y_rate: Vec::new(),
            resp: Vec::new(),
        };
        for m in 0..params.num_modalities() {
            let active = &globals.active[m];
            let t = active.len();
            let on = active.iter().filter(|&&a| a).count() as f64;
            let bag = &doc.counts[m];
            let resp = DMatrix::from_fn(bag.len(), t, |_, k| if active[k] { 1.0 / on } else { 0.0 });
            let tokens = bag.total() as f64;
            let start = params.xi_range(m).start;
            let e: Vec<f64> = (0..t)
                .map(|k| (-var.xi_mean[start + k] + 0.5 * var.xi_var[start + k]).exp())
                .collect();
            let shape: Vec<f64> = (0..t)
                .map(|k| globals.prior_shape[m][k] + if active[k] { tokens / on } else { 0.0 })
                .collect();
            let zeta: f64 = (0..t).filter(|&k| active[k]).map(|k| shape[k] / e[k]).sum();
            let rate: Vec<f64> = (0..t)
                .map(|k| if active[k] && tokens > 0.0 { e[k] + tokens / zeta } else { e[k] })
                .collect();
            var.resp.push(resp);
            var.y_shape.push(DVector::from_vec(shape));
            var.y_rate.push(DVector::from_vec(rate));
        }
        var
    }

    pub fn expected_y(&self, m: usize) -> DVector<f64> {
        self.y_shape[m].component_div(&self.y_rate[m])
    }

    pub fn expected_log_y(&self, m: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.y_shape[m].len(),
            self.y_shape[m]
                .iter()
                .zip(self.y_rate[m].iter())
                .map(|(&a, &b)| digamma(a) - b.ln()),
        )
    }

    /// Expected token count per topic, `n_k = sum_i c_i phi_ik`.
    pub fn topic_counts(&self, m: usize, bag: &crate::corpus::BagOfWords) -> DVector<f64> {
        let resp = &self.resp[m];
        let mut n = DVector::zeros(resp.ncols());
        for (i, &(_, c)) in bag.entries().iter().enumerate() {
            for k in 0..resp.ncols() {
                n[k] += c as f64 * resp[(i, k)];
            }
        }
        n
    }

    /// Fitted topic proportions of modality `m`: `E[Y]` normalized over the
    /// active topics.
    pub fn theta(&self, m: usize, globals: &Globals) -> Vec<f64> {
        let ey = self.expected_y(m);
        let w: Vec<f64> = (0..ey.len())
            .map(|k| if globals.active[m][k] { ey[k] } else { 0.0 })
            .collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    }
}

/// Quantities derived from the global parameters that stay fixed while the
/// local factors are updated.
#[derive(Debug, Clone)]
pub struct Globals {
    pub precision: DMatrix<f64>,
    pub log_det_sigma: f64,
    pub elog_eta: Vec<DMatrix<f64>>,
    /// Raw Gamma prior shapes `beta p_k`.
    pub prior_shape: Vec<Vec<f64>>,
    pub active: Vec<Vec<bool>>,
}

impl Globals {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let (precision, log_det_sigma) = linalg::spd_inverse(&params.prior.sigma)?;
        Ok(Globals {
            precision,
            log_det_sigma,
            elog_eta: params.dictionaries.iter().map(|d| d.expected_log()).collect(),
            prior_shape: params.sticks.iter().map(|s| s.prior_shapes()).collect(),
            active: params
                .sticks
                .iter()
                .map(|s| (0..s.len()).map(|k| s.is_active(k)).collect())
                .collect(),
        })
    }
}
