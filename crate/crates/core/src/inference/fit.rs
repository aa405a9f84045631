use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::elbo::elbo_total;
use super::global::{update_mu_sigma, update_sticks, update_topics};
use super::local::update_local;
use super::{DocVariational, Globals, TrainConfig};
use crate::corpus::{ModalityLayout, MultiModalCorpus};
use crate::evaluation::fitted_perplexity;
use crate::generative::{GaussianPrior, ModelParams, StickWeights, TopicDictionary};
use crate::linalg;
use crate::par::Executor;
use crate::{Error, Result};

/// One row of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub sweep: usize,
    pub elbo: f64,
    pub relative_change: f64,
    pub wall_seconds: f64,
    /// Per-modality perplexity of the training documents under the fitted
    /// proportions.
    pub train_perplexity: Vec<f64>,
    pub jitter: f64,
    /// Documents whose `q(xi)` line search gave up during the sweep.
    pub xi_stalled: usize,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams,
    pub docs: Vec<DocVariational>,
    pub config: TrainConfig,
    /// ELBO before the first sweep.
    pub initial_elbo: f64,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
}

impl TrainState {
    pub fn final_elbo(&self) -> f64 {
        self.trace.last().map_or(self.initial_elbo, |t| t.elbo)
    }

    pub fn sweeps(&self) -> usize {
        self.trace.len()
    }

    pub fn globals(&self) -> Result<Globals> {
        Globals::new(&self.params)
    }

    /// The trace as CSV with one perplexity column per modality.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("sweep,elbo,relative_change,wall_seconds");
        for name in self.params.layout.names() {
            out.push_str(&format!(",perplexity_{name}"));
        }
        out.push('\n');
        for t in &self.trace {
            out.push_str(&format!("{},{},{},{}", t.sweep, t.elbo, t.relative_change, t.wall_seconds));
            for p in &t.train_perplexity {
                out.push_str(&format!(",{p}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Largest ELBO decrease attributed to round-off and covariance jitter.
pub(crate) fn elbo_slack(elbo: f64) -> f64 {
    1e-9 + 1e-6 * elbo.abs()
}

/// Initial variational state.
///
/// Topics start from the smoothed corpus word frequencies mixed with
/// Dirichlet(1) noise, sticks at their prior mean, `mu = 0`, `Sigma = I`,
/// `q(xi)` means drawn from `N(0, 0.1 I)` with unit variances, and uniform
/// responsibilities.
pub fn init_state(corpus: &MultiModalCorpus, config: &TrainConfig) -> Result<TrainState> {
    config.validate()?;
    corpus.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty corpus".into()));
    }
    let names = corpus.modality_names();
    let counts = config.resolve_topic_counts(names.len())?;
    let layout = ModalityLayout::new(names.clone(), counts.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let unit_gamma = Gamma::new(1.0, 1.0).expect("valid gamma");

    let mut dictionaries = Vec::with_capacity(names.len());
    for (m, name) in names.iter().enumerate() {
        let w = corpus.vocabularies[m].size();
        let t = counts[m];
        let mut freq = vec![1.0; w];
        let mut tokens = 0.0;
        for doc in &corpus.documents {
            for &(word, c) in doc.counts[m].entries() {
                freq[word] += c as f64;
                tokens += c as f64;
            }
        }
        let norm = tokens + w as f64;
        freq.iter_mut().for_each(|f| *f /= norm);
        let scale = (tokens / t as f64).max(1.0);
        let mut lambda = DMatrix::zeros(t, w);
        for k in 0..t {
            let noise: Vec<f64> = (0..w).map(|_| unit_gamma.sample(&mut rng)).collect();
            let total: f64 = noise.iter().sum();
            for j in 0..w {
                let mix = (1.0 - config.init_noise) * freq[j] + config.init_noise * noise[j] / total;
                lambda[(k, j)] = config.gamma + scale * mix;
            }
        }
        dictionaries.push(TopicDictionary::from_dirichlet(name.clone(), lambda, config.gamma));
    }

    let sticks = counts
        .iter()
        .map(|&t| StickWeights::prior_mean(t, config.alpha_init, config.beta_init))
        .collect::<Result<Vec<_>>>()?;
    let mut params = ModelParams {
        layout,
        sticks,
        dictionaries,
        prior: GaussianPrior::standard(0),
        tied_xi: config.tied_xi,
    };
    params.prior = GaussianPrior::standard(params.xi_dim());
    params.validate()?;

    let globals = Globals::new(&params)?;
    let normal = Normal::new(0.0, 0.1f64.sqrt()).expect("valid normal");
    let dim = params.xi_dim();
    let mut docs = Vec::with_capacity(corpus.len());
    for _ in &corpus.documents {
        let xi_mean = DVector::from_fn(dim, |_, _| normal.sample(&mut rng));
        docs.push((xi_mean, DVector::from_element(dim, 1.0)));
    }
    let docs: Vec<DocVariational> = corpus
        .documents
        .iter()
        .zip(docs)
        .map(|(doc, (m, v))| DocVariational::initial(doc, &params, &globals, m, v))
        .collect();

    let exec = Executor::new(config.workers);
    let initial_elbo = elbo_total(corpus, &docs, &params, &globals, &exec)?;
    Ok(TrainState {
        params,
        docs,
        config: config.clone(),
        initial_elbo,
        trace: Vec::new(),
        converged: false,
    })
}

/// Trains the model; see [`fit_with_observer`].
pub fn fit(corpus: &MultiModalCorpus, config: &TrainConfig) -> Result<TrainState> {
    fit_with_observer(corpus, config, |_| Ok(()))
}

/// Trains the model, calling `observer` after every sweep. An error from the
/// observer aborts training. With several restarts the observer sees the
/// sweeps of every run, and the run with the highest final bound is returned.
///
/// Fails with [`Error::ElboDecrease`] if a sweep lowers the bound by more
/// than round-off and jitter can explain.
pub fn fit_with_observer<F>(corpus: &MultiModalCorpus, config: &TrainConfig, observer: F) -> Result<TrainState>
where
    F: FnMut(&TrainState) -> Result<()>,
{
    let mut observer = observer;
    let mut best: Option<TrainState> = None;
    for r in 0..config.restarts {
        let cfg = TrainConfig { seed: config.seed.wrapping_add(r as u64), ..config.clone() };
        let state = resume(corpus, init_state(corpus, &cfg)?, &mut observer)?;
        log::info!("restart {r} (seed {}): final elbo {:.6}", cfg.seed, state.final_elbo());
        if best.as_ref().map_or(true, |b| state.final_elbo() > b.final_elbo()) {
            best = Some(state);
        }
    }
    let mut best = best.expect("at least one restart");
    best.config = config.clone();
    Ok(best)
}

/// Continues training from an existing state for up to
/// `state.config.max_sweeps` further sweeps.
pub fn resume<F>(corpus: &MultiModalCorpus, mut state: TrainState, mut observer: F) -> Result<TrainState>
where
    F: FnMut(&TrainState) -> Result<()>,
{
    let started = Instant::now();
    let config = state.config.clone();
    config.validate()?;
    if state.docs.len() != corpus.len() {
        return Err(Error::Dimension(format!(
            "{} document states for {} documents",
            state.docs.len(),
            corpus.len()
        )));
    }
    let exec = Executor::new(config.workers);
    let opts = config.local_options();
    let mut prev = state.final_elbo();
    let first = state.trace.last().map_or(1, |t| t.sweep + 1);
    state.converged = false;

    for sweep in first..first + config.max_sweeps {
        let globals = Globals::new(&state.params)?;
        let params = &state.params;
        let outcomes = exec.map_zip(&corpus.documents, &state.docs, |_, doc, var| {
            update_local(doc, var, params, &globals, &opts)
        });
        let xi_stalled = outcomes.iter().filter(|o| o.xi_stalled).count();
        state.docs = outcomes.into_iter().map(|o| o.var).collect();

        let (prior, jitter) = update_mu_sigma(&state.docs, config.jitter)?;
        state.params.prior = prior;
        state.params.dictionaries = update_topics(corpus, &state.docs, &state.params)?;
        for m in 0..state.params.num_modalities() {
            let up = update_sticks(corpus, &mut state.docs, &state.params, m)?;
            state.params.sticks[m] = up.sticks;
        }

        let globals = Globals::new(&state.params)?;
        let elbo = elbo_total(corpus, &state.docs, &state.params, &globals, &exec)?;
        if elbo < prev - elbo_slack(prev) {
            return Err(Error::ElboDecrease { sweep, previous: prev, current: elbo });
        }
        let relative_change = (elbo - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
        let train_perplexity = fitted_perplexity(corpus, &state.params, &state.docs, &globals)?;
        log::info!(
            "sweep {sweep}: elbo {elbo:.6} (rel. change {relative_change:.3e}), perplexity {train_perplexity:?}"
        );
        if xi_stalled > 0 {
            log::warn!("sweep {sweep}: q(xi) line search stalled in {xi_stalled} documents");
        }
        state.trace.push(TraceEntry {
            sweep,
            elbo,
            relative_change,
            wall_seconds: started.elapsed().as_secs_f64(),
            train_perplexity,
            jitter,
            xi_stalled,
        });
        prev = elbo;
        state.converged = relative_change < config.tolerance;
        observer(&state)?;
        if state.converged {
            break;
        }
    }
    Ok(state)
}

/// Checks the structural invariants of a training state: valid parameters,
/// normalized responsibilities, positive variational parameters, a
/// non-decreasing trace and fitted proportions on the simplex.
pub fn check_invariants(corpus: &MultiModalCorpus, state: &TrainState) -> Result<()> {
    let params = &state.params;
    params.validate()?;
    let floor = linalg::jitter_floor(&params.prior.sigma, state.config.jitter);
    if linalg::min_eigenvalue(&params.prior.sigma) < floor * (1.0 - 1e-6) {
        return Err(Error::Validation("Sigma below its jitter floor".into()));
    }
    let globals = Globals::new(params)?;
    let fail = |d: usize, what: String| Err(Error::Validation(format!("document {d}: {what}")));
    for (d, (doc, var)) in corpus.documents.iter().zip(&state.docs).enumerate() {
        if var.xi_var.iter().any(|v| !(*v > 0.0 && v.is_finite())) || var.xi_mean.iter().any(|x| !x.is_finite()) {
            return fail(d, "invalid q(xi)".into());
        }
        for m in 0..params.num_modalities() {
            let active = &globals.active[m];
            for k in 0..active.len() {
                let (a, b) = (var.y_shape[m][k], var.y_rate[m][k]);
                if active[k] && !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                    return fail(d, format!("invalid q(Y) for modality {m}, topic {k}"));
                }
            }
            let resp = &var.resp[m];
            if resp.nrows() != doc.counts[m].len() {
                return fail(d, format!("responsibility rows do not match modality {m}"));
            }
            for (i, row) in resp.row_iter().enumerate() {
                let s: f64 = row.sum();
                if row.iter().any(|x| !(*x >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                    return fail(d, format!("responsibilities of token {i} in modality {m} sum to {s}"));
                }
            }
            let theta = var.theta(m, &globals);
            let s: f64 = theta.iter().sum();
            if theta.iter().any(|x| !(*x >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return fail(d, format!("fitted proportions of modality {m} sum to {s}"));
            }
        }
    }
    let mut prev = state.initial_elbo;
    for t in &state.trace {
        if t.elbo < prev - elbo_slack(prev) {
            return Err(Error::ElboDecrease { sweep: t.sweep, previous: prev, current: t.elbo });
        }
        prev = t.elbo;
    }
    Ok(())
}
