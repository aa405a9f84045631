//! Model parameters and the forward sampler.
//!
//! For every document `xi ~ N(mu, Sigma)` is drawn over the concatenated topic
//! axis and split per modality. Within modality `m`, topic weights are
//! `Y_k ~ Gamma(shape = beta p_k, rate = exp(-xi_k))`, so that
//! `E[Y_k] = beta p_k exp(xi_k)`, and the topic proportions are `Y / sum(Y)`.
//! Words are then drawn from the per-modality topic dictionaries.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{BagOfWords, Document, ModalityLayout, MultiModalCorpus, Vocabulary};
use crate::linalg::{self, JITTER_SCALE};
use crate::par::Executor;
use crate::special::digamma;
use crate::{Error, Result};

/// Stick weights below this are treated as switched off.
pub const TOPIC_OFF_THRESHOLD: f64 = 1e-10;

const SIMPLEX_TOL: f64 = 1e-10;

/// `p_k = v_k * prod_{i<k} (1 - v_i)`.
pub fn stick_breaking_weights(v: &[f64]) -> Vec<f64> {
    let mut rest = 1.0;
    v.iter()
        .map(|&vk| {
            let p = vk * rest;
            rest *= 1.0 - vk;
            p
        })
        .collect()
}

/// Truncated stick-breaking weights of one modality together with its two
/// concentration parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StickWeights {
    v: Vec<f64>,
    p: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl StickWeights {
    /// Builds weights from stick fractions; the last fraction is forced to 1.
    pub fn from_fractions(mut v: Vec<f64>, alpha: f64, beta: f64) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::InvalidArgument("stick needs at least one topic".into()));
        }
        if !(alpha > 0.0) || !(beta > 0.0) || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "concentrations must be positive, got alpha={alpha}, beta={beta}"
            )));
        }
        if let Some(bad) = v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::InvalidArgument(format!("stick fraction {bad} not in [0, 1]")));
        }
        *v.last_mut().unwrap() = 1.0;
        let p = stick_breaking_weights(&v);
        Ok(StickWeights { v, p, alpha, beta })
    }

    /// Inverse of the stick-breaking map: fractions reproducing `p`.
    pub fn from_weights(p: &[f64], alpha: f64, beta: f64) -> Result<Self> {
        let total: f64 = p.iter().sum();
        if p.iter().any(|&x| !(x >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("stick weights must form a simplex".into()));
        }
        let mut rest = 1.0;
        let mut v = Vec::with_capacity(p.len());
        for &pk in p {
            let vk = if rest > 1e-300 { (pk / rest).clamp(0.0, 1.0) } else { 1.0 };
            v.push(vk);
            rest -= pk;
            rest = rest.max(0.0);
        }
        StickWeights::from_fractions(v, alpha, beta)
    }

    /// Every fraction at the prior mean `1 / (1 + alpha)`.
    pub fn prior_mean(t: usize, alpha: f64, beta: f64) -> Result<Self> {
        StickWeights::from_fractions(vec![1.0 / (1.0 + alpha); t.max(1)], alpha, beta)
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn set_fractions(&mut self, v: Vec<f64>) -> Result<()> {
        *self = StickWeights::from_fractions(v, self.alpha, self.beta)?;
        Ok(())
    }

    /// Gamma shapes `beta * p_k`.
    pub fn prior_shapes(&self) -> Vec<f64> {
        self.p.iter().map(|p| self.beta * p).collect()
    }

    pub fn is_active(&self, k: usize) -> bool {
        self.p[k] >= TOPIC_OFF_THRESHOLD
    }

    pub fn validate(&self) -> Result<()> {
        if self.v.len() != self.p.len() || self.v.is_empty() {
            return Err(Error::Validation("stick fractions and weights differ in length".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite() && self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Validation(format!(
                "invalid concentrations alpha={}, beta={}",
                self.alpha, self.beta
            )));
        }
        if self.v.iter().any(|x| !(0.0..=1.0).contains(x)) || *self.v.last().unwrap() != 1.0 {
            return Err(Error::Validation("stick fractions must lie in [0,1] with the last equal to 1".into()));
        }
        let recomputed = stick_breaking_weights(&self.v);
        if recomputed.iter().zip(&self.p).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Err(Error::Validation("stored stick weights differ from their fractions".into()));
        }
        let total: f64 = self.p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!("stick weights sum to {total}")));
        }
        Ok(())
    }
}

/// Draws `V_k ~ Beta(1, alpha)` for `k < t - 1` and sets `V_t = 1`.
pub fn sample_sticks<R: Rng + ?Sized>(alpha: f64, beta: f64, t: usize, rng: &mut R) -> Result<StickWeights> {
    if t == 0 {
        return Err(Error::InvalidArgument("truncation level must be at least 1".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    let dist = Beta::new(1.0, alpha).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut v: Vec<f64> = (0..t - 1).map(|_| dist.sample(rng)).collect();
    v.push(1.0);
    StickWeights::from_fractions(v, alpha, beta)
}

/// Topics of one modality: `T x W` row-stochastic matrix plus, after
/// training, the Dirichlet parameters of the variational factor over it.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicDictionary {
    pub modality: String,
    pub topics: DMatrix<f64>,
    pub gamma: f64,
    pub dirichlet: Option<DMatrix<f64>>,
}

impl TopicDictionary {
    pub fn from_topics(modality: impl Into<String>, topics: DMatrix<f64>, gamma: f64) -> Result<Self> {
        let d = TopicDictionary {
            modality: modality.into(),
            topics,
            gamma,
            dirichlet: None,
        };
        d.validate()?;
        Ok(d)
    }

    /// Dictionary whose topics are the means of the given Dirichlet factors.
    pub fn from_dirichlet(modality: impl Into<String>, lambda: DMatrix<f64>, gamma: f64) -> Self {
        let mut topics = lambda.clone();
        for mut row in topics.row_iter_mut() {
            let s: f64 = row.sum();
            row /= s;
        }
        TopicDictionary {
            modality: modality.into(),
            topics,
            gamma,
            dirichlet: Some(lambda),
        }
    }

    pub fn sample<R: Rng + ?Sized>(
        modality: &str,
        t: usize,
        w: usize,
        gamma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let g = Gamma::new(gamma, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut topics = DMatrix::zeros(t, w);
        for k in 0..t {
            loop {
                let draws: Vec<f64> = (0..w).map(|_| g.sample(rng)).collect();
                let s: f64 = draws.iter().sum();
                if s > 0.0 && s.is_finite() {
                    for (j, x) in draws.into_iter().enumerate() {
                        topics[(k, j)] = x / s;
                    }
                    break;
                }
            }
        }
        TopicDictionary::from_topics(modality, topics, gamma)
    }

    pub fn num_topics(&self) -> usize {
        self.topics.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.topics.ncols()
    }

    /// `E[log eta_kw]` under the Dirichlet factor, or `log eta_kw` for point
    /// dictionaries.
    pub fn expected_log(&self) -> DMatrix<f64> {
        match &self.dirichlet {
            Some(lambda) => {
                let mut out = DMatrix::zeros(lambda.nrows(), lambda.ncols());
                for k in 0..lambda.nrows() {
                    let total = digamma(lambda.row(k).sum());
                    for w in 0..lambda.ncols() {
                        out[(k, w)] = digamma(lambda[(k, w)]) - total;
                    }
                }
                out
            }
            None => self.topics.map(|x| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Validation(format!(
                "modality '{}': Dirichlet hyperparameter {} must be positive",
                self.modality, self.gamma
            )));
        }
        for (k, row) in self.topics.row_iter().enumerate() {
            let s: f64 = row.sum();
            if row.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::Validation(format!(
                    "modality '{}', topic {k}: row is not a probability vector (sum {s})",
                    self.modality
                )));
            }
        }
        if let Some(lambda) = &self.dirichlet {
            if lambda.shape() != self.topics.shape() || lambda.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::Validation(format!(
                    "modality '{}': invalid Dirichlet parameters",
                    self.modality
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl GaussianPrior {
    pub fn standard(dim: usize) -> Self {
        GaussianPrior {
            mu: DVector::zeros(dim),
            sigma: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mu.len();
        if self.sigma.shape() != (n, n) {
            return Err(Error::Validation(format!(
                "covariance is {:?}, mean has length {n}",
                self.sigma.shape()
            )));
        }
        if self.mu.iter().chain(self.sigma.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Validation("non-finite entry in the Gaussian prior".into()));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if self.sigma[(i, j)] != self.sigma[(j, i)] {
                    return Err(Error::Validation(format!("covariance not symmetric at ({i},{j})")));
                }
            }
        }
        let floor = linalg::jitter_floor(&self.sigma, JITTER_SCALE);
        let lo = linalg::min_eigenvalue(&self.sigma);
        if lo < floor * (1.0 - 1e-6) {
            return Err(Error::Validation(format!(
                "smallest covariance eigenvalue {lo:e} below the jitter floor {floor:e}"
            )));
        }
        Ok(())
    }
}

/// All global parameters of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layout: ModalityLayout,
    pub sticks: Vec<StickWeights>,
    pub dictionaries: Vec<TopicDictionary>,
    pub prior: GaussianPrior,
    /// One `xi` shared by all modalities (the mmDILN baseline).
    pub tied_xi: bool,
}

impl ModelParams {
    pub fn num_modalities(&self) -> usize {
        self.layout.num_modalities()
    }

    /// Dimension of `xi`.
    pub fn xi_dim(&self) -> usize {
        if self.tied_xi {
            self.layout.topic_counts().first().copied().unwrap_or(0)
        } else {
            self.layout.total_topics()
        }
    }

    /// Coordinates of `xi` that drive modality `m`.
    pub fn xi_range(&self, m: usize) -> std::ops::Range<usize> {
        if self.tied_xi {
            0..self.layout.topic_counts()[m]
        } else {
            self.layout.range(m)
        }
    }

    pub fn vocab_sizes(&self) -> Vec<usize> {
        self.dictionaries.iter().map(|d| d.vocab_size()).collect()
    }

    pub fn modality_index(&self, name: &str) -> Result<usize> {
        self.layout.index_of(name)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.layout.num_modalities();
        if self.sticks.len() != m || self.dictionaries.len() != m {
            return Err(Error::Validation(format!(
                "{m} modalities but {} sticks and {} dictionaries",
                self.sticks.len(),
                self.dictionaries.len()
            )));
        }
        for (i, name) in self.layout.names().iter().enumerate() {
            let t = self.layout.topic_counts()[i];
            self.sticks[i]
                .validate()
                .map_err(|e| Error::Validation(format!("modality '{name}': {e}")))?;
            self.dictionaries[i].validate()?;
            if self.sticks[i].len() != t || self.dictionaries[i].num_topics() != t {
                return Err(Error::Validation(format!(
                    "modality '{name}': expected {t} topics in sticks and dictionary"
                )));
            }
            if &self.dictionaries[i].modality != name {
                return Err(Error::Validation(format!(
                    "dictionary {i} is labelled '{}', expected '{name}'",
                    self.dictionaries[i].modality
                )));
            }
        }
        if self.tied_xi && self.layout.topic_counts().windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Validation("tied xi requires equal topic counts".into()));
        }
        if self.prior.dim() != self.xi_dim() {
            return Err(Error::Validation(format!(
                "prior dimension {} but xi has {} coordinates",
                self.prior.dim(),
                self.xi_dim()
            )));
        }
        self.prior.validate()
    }

    /// The model restricted to a subset of modalities, with the prior
    /// marginalised onto the coordinates those modalities use.
    pub fn restrict(&self, modalities: &[usize]) -> Result<ModelParams> {
        if modalities.is_empty() {
            return Err(Error::InvalidArgument("no modalities selected".into()));
        }
        let coords = self.xi_coordinates(modalities);
        let names = modalities.iter().map(|&m| self.layout.names()[m].clone()).collect();
        let counts = modalities.iter().map(|&m| self.layout.topic_counts()[m]).collect();
        let prior = if self.tied_xi {
            self.prior.clone()
        } else {
            GaussianPrior {
                mu: linalg::select_vec(&self.prior.mu, &coords),
                sigma: linalg::select(&self.prior.sigma, &coords, &coords),
            }
        };
        Ok(ModelParams {
            layout: ModalityLayout::new(names, counts)?,
            sticks: modalities.iter().map(|&m| self.sticks[m].clone()).collect(),
            dictionaries: modalities.iter().map(|&m| self.dictionaries[m].clone()).collect(),
            prior,
            tied_xi: self.tied_xi,
        })
    }

    /// Sorted, de-duplicated `xi` coordinates used by the given modalities.
    pub fn xi_coordinates(&self, modalities: &[usize]) -> Vec<usize> {
        let mut coords: Vec<usize> = modalities.iter().flat_map(|&m| self.xi_range(m)).collect();
        coords.sort_unstable();
        coords.dedup();
        coords
    }
}

/// `normalize(beta * p .* exp(xi))`, with switched-off topics given zero mass.
pub fn expected_theta(xi: &[f64], sticks: &StickWeights) -> Result<Vec<f64>> {
    if xi.len() != sticks.len() {
        return Err(Error::Dimension(format!(
            "xi has {} entries, stick has {}",
            xi.len(),
            sticks.len()
        )));
    }
    let logw: Vec<Option<f64>> = sticks
        .p()
        .iter()
        .zip(xi)
        .map(|(&p, &x)| (p >= TOPIC_OFF_THRESHOLD).then(|| (sticks.beta * p).ln() + x))
        .collect();
    let max = logw
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical("all topics switched off".into()));
    }
    let w: Vec<f64> = logw.iter().map(|l| l.map_or(0.0, |l| (l - max).exp())).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Latent variables behind one sampled document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRecord {
    pub id: String,
    pub xi: Vec<f64>,
    /// Per-modality topic proportions.
    pub theta: Vec<Vec<f64>>,
    /// Per-modality topic of every sampled token, in sampling order.
    pub assignments: Vec<Vec<usize>>,
}

/// Per-topic word samplers, built once per parameter set.
pub struct DocumentSampler<'a> {
    params: &'a ModelParams,
    chol: DMatrix<f64>,
    words: Vec<Vec<WeightedIndex<f64>>>,
}

impl<'a> DocumentSampler<'a> {
    pub fn new(params: &'a ModelParams) -> Result<Self> {
        let chol = Cholesky::new(params.prior.sigma.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("prior covariance".into()))?
            .l();
        let words = params
            .dictionaries
            .iter()
            .map(|d| {
                d.topics
                    .row_iter()
                    .map(|row| {
                        WeightedIndex::new(row.iter().copied())
                            .map_err(|e| Error::Validation(format!("topic of '{}': {e}", d.modality)))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DocumentSampler { params, chol, words })
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        id: &str,
        lengths: &[usize],
        rng: &mut R,
    ) -> Result<(Document, LatentRecord)> {
        let params = self.params;
        let nm = params.num_modalities();
        if lengths.len() != nm {
            return Err(Error::Dimension(format!("{} lengths for {nm} modalities", lengths.len())));
        }
        let z = DVector::from_fn(params.xi_dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let xi = &params.prior.mu + &self.chol * z;
        let mut counts = Vec::with_capacity(nm);
        let mut thetas = Vec::with_capacity(nm);
        let mut assignments = Vec::with_capacity(nm);
        for m in 0..nm {
            let sticks = &params.sticks[m];
            let range = params.xi_range(m);
            let mut y = Vec::with_capacity(sticks.len());
            for (k, shape) in sticks.prior_shapes().into_iter().enumerate() {
                if shape <= 0.0 {
                    y.push(0.0);
                    continue;
                }
                let scale = xi[range.start + k].exp();
                let g = Gamma::new(shape, scale).map_err(|e| Error::Numerical(e.to_string()))?;
                y.push(g.sample(rng));
            }
            let total: f64 = y.iter().sum();
            if !(total > 0.0 && total.is_finite()) {
                return Err(Error::Numerical(format!(
                    "degenerate topic proportions in modality '{}'",
                    params.layout.names()[m]
                )));
            }
            let theta: Vec<f64> = y.iter().map(|v| v / total).collect();
            let mut topic_of_token = Vec::with_capacity(lengths[m]);
            let mut tokens = Vec::with_capacity(lengths[m]);
            if lengths[m] > 0 {
                let pick = WeightedIndex::new(theta.iter().copied())
                    .map_err(|e| Error::Numerical(e.to_string()))?;
                for _ in 0..lengths[m] {
                    let k = pick.sample(rng);
                    topic_of_token.push(k);
                    tokens.push(self.words[m][k].sample(rng));
                }
            }
            counts.push(BagOfWords::from_tokens(tokens));
            thetas.push(theta);
            assignments.push(topic_of_token);
        }
        let latent = LatentRecord {
            id: id.to_string(),
            xi: xi.iter().copied().collect(),
            theta: thetas,
            assignments,
        };
        Ok((
            Document {
                id: id.to_string(),
                counts,
            },
            latent,
        ))
    }
}

pub fn sample_document<R: Rng + ?Sized>(
    params: &ModelParams,
    id: &str,
    lengths: &[usize],
    rng: &mut R,
) -> Result<(Document, LatentRecord)> {
    DocumentSampler::new(params)?.sample(id, lengths, rng)
}

/// Synthetic scenario with planted shared and private topics.
///
/// `shared_pairs` entries `[k0, k1, corr]` correlate topic `k0` of the first
/// modality with topic `k1` of the second. Topics named in a shared pair or in
/// `private_topics[m]` are active in modality `m` with equal stick weight;
/// every other topic of that modality is switched off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub modalities: Vec<String>,
    pub topic_counts: Vec<usize>,
    pub shared_pairs: Vec<(usize, usize, f64)>,
    pub private_topics: Vec<Vec<usize>>,
    pub vocab_sizes: Vec<usize>,
    pub num_docs: usize,
    pub doc_lengths: Vec<usize>,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl ScenarioConfig {
    /// Two modalities with 8 topics each, 3 shared pairs at correlation 0.9
    /// and 2 private topics per modality, 200-word vocabularies, 500
    /// documents of 100 tokens per modality.
    pub fn acceptance() -> Self {
        ScenarioConfig {
            modalities: vec!["text".into(), "image".into()],
            topic_counts: vec![8, 8],
            shared_pairs: vec![(0, 0, 0.9), (1, 1, 0.9), (2, 2, 0.9)],
            private_topics: vec![vec![3, 4], vec![5, 6]],
            vocab_sizes: vec![200, 200],
            num_docs: 500,
            doc_lengths: vec![100, 100],
            seed: 20120501,
            alpha: 1.0,
            beta: 20.0,
            gamma: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.modalities.len();
        let bad = |what: &str| Error::InvalidArgument(format!("scenario: {what}"));
        if m == 0 {
            return Err(bad("no modalities"));
        }
        if [self.topic_counts.len(), self.private_topics.len(), self.vocab_sizes.len(), self.doc_lengths.len()]
            .iter()
            .any(|&l| l != m)
        {
            return Err(bad("per-modality lists must match the number of modalities"));
        }
        if !self.shared_pairs.is_empty() && m < 2 {
            return Err(bad("shared pairs need two modalities"));
        }
        for &(a, b, c) in &self.shared_pairs {
            if a >= self.topic_counts[0] || b >= self.topic_counts[1] {
                return Err(bad(&format!("shared pair ({a},{b}) out of range")));
            }
            if !(-1.0..=1.0).contains(&c) {
                return Err(bad(&format!("correlation {c} not in [-1,1]")));
            }
        }
        for (mi, privs) in self.private_topics.iter().enumerate() {
            if privs.iter().any(|&k| k >= self.topic_counts[mi]) {
                return Err(bad(&format!("private topic out of range in modality {mi}")));
            }
        }
        if self.vocab_sizes.iter().any(|&w| w < 2) {
            return Err(bad("vocabularies need at least 2 terms"));
        }
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.gamma > 0.0) {
            return Err(bad("alpha, beta and gamma must be positive"));
        }
        Ok(())
    }

    fn active_topics(&self, m: usize) -> Vec<usize> {
        let mut active: Vec<usize> = self.private_topics[m].clone();
        for &(a, b, _) in &self.shared_pairs {
            match m {
                0 => active.push(a),
                1 => active.push(b),
                _ => {}
            }
        }
        active.sort_unstable();
        active.dedup();
        active
    }
}

/// The correlation matrix requested by a scenario, projected to a valid
/// covariance when it is not (numerically) positive definite.
pub fn scenario_covariance(spec: &ScenarioConfig) -> Result<DMatrix<f64>> {
    let layout = ModalityLayout::new(spec.modalities.clone(), spec.topic_counts.clone())?;
    let n = layout.total_topics();
    let mut c = DMatrix::identity(n, n);
    for &(a, b, r) in &spec.shared_pairs {
        let i = layout.offsets()[0] + a;
        let j = layout.offsets()[1] + b;
        c[(i, j)] = r;
        c[(j, i)] = r;
    }
    const EPS: f64 = 1e-6;
    if linalg::min_eigenvalue(&c) >= EPS {
        return Ok(c);
    }
    let clipped = linalg::clip_eigenvalues(&c, EPS);
    let mut corr = linalg::to_correlation(&clipped)?;
    linalg::symmetrize(&mut corr);
    let err = (&corr - &c).amax();
    if err > 1e-3 {
        return Err(Error::NotPositiveDefinite(format!(
            "requested correlations are inconsistent (nearest valid matrix differs by {err:.3}); reduce the correlation strengths"
        )));
    }
    Ok(corr)
}

/// Ground-truth parameters for a scenario.
pub fn scenario_params(spec: &ScenarioConfig) -> Result<ModelParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let layout = ModalityLayout::new(spec.modalities.clone(), spec.topic_counts.clone())?;
    let mut sticks = Vec::new();
    let mut dictionaries = Vec::new();
    for m in 0..spec.modalities.len() {
        let t = spec.topic_counts[m];
        let active = spec.active_topics(m);
        if active.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "scenario: modality '{}' has no active topics",
                spec.modalities[m]
            )));
        }
        let mut p = vec![0.0; t];
        for &k in &active {
            p[k] = 1.0 / active.len() as f64;
        }
        sticks.push(StickWeights::from_weights(&p, spec.alpha, spec.beta)?);
        dictionaries.push(TopicDictionary::sample(
            &spec.modalities[m],
            t,
            spec.vocab_sizes[m],
            spec.gamma,
            &mut rng,
        )?);
    }
    let sigma = scenario_covariance(spec)?;
    let params = ModelParams {
        prior: GaussianPrior {
            mu: DVector::zeros(layout.total_topics()),
            sigma,
        },
        layout,
        sticks,
        dictionaries,
        tied_xi: false,
    };
    params.validate()?;
    Ok(params)
}

/// Ground truth plus a corpus sampled from it. Document `d` uses its own
/// random stream derived from the scenario seed, so generation is
/// reproducible for any worker count.
pub fn make_synthetic_scenario(
    spec: &ScenarioConfig,
    executor: &Executor,
) -> Result<(ModelParams, MultiModalCorpus, Vec<LatentRecord>)> {
    let params = scenario_params(spec)?;
    let sampler = DocumentSampler::new(&params)?;
    let ids: Vec<String> = (0..spec.num_docs).map(|d| format!("doc-{d:05}")).collect();
    let sampled = executor.map(&ids, |d, id| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(d as u64 + 1);
        sampler.sample(id, &spec.doc_lengths, &mut rng)
    });
    let mut documents = Vec::with_capacity(spec.num_docs);
    let mut latent = Vec::with_capacity(spec.num_docs);
    for s in sampled {
        let (doc, rec) = s?;
        documents.push(doc);
        latent.push(rec);
    }
    let vocabularies = spec
        .modalities
        .iter()
        .zip(&spec.vocab_sizes)
        .map(|(name, &w)| Vocabulary::synthetic(name, w))
        .collect::<Result<Vec<_>>>()?;
    let corpus = MultiModalCorpus::new(vocabularies, documents)?;
    Ok((params, corpus, latent))
}
