use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::local::LocalOptions;
use super::xi::XiOptions;
use crate::{Error, Result};

/// Training configuration. Every field is optional in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_sweeps: usize,
    /// Stop once the relative ELBO change of a sweep falls below this.
    pub tolerance: f64,
    /// Truncation level used for every modality without an explicit count.
    pub truncation: usize,
    /// Per-modality truncation levels, overriding `truncation`.
    pub topic_counts: Option<Vec<usize>>,
    /// Maximum ascent steps per `q(xi)` update.
    pub max_inner_steps: usize,
    pub backtrack_shrink: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Maximum passes over a document's local factors per sweep.
    pub local_iterations: usize,
    /// Relative change of the document bound that ends the local passes.
    pub local_tolerance: f64,
    /// Relative jitter floor for the covariance.
    pub jitter: f64,
    pub seed: u64,
    pub tied_xi: bool,
    /// Symmetric Dirichlet hyperparameter of the topics.
    pub gamma: f64,
    pub alpha_init: f64,
    pub beta_init: f64,
    /// Weight of the random component in the initial topics; the rest is the
    /// smoothed corpus word frequency.
    pub init_noise: f64,
    /// Independent initializations with seeds `seed, seed + 1, ...`; the run
    /// with the highest final bound is kept.
    pub restarts: usize,
    /// Worker threads for document-parallel phases (0 = all cores).
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_sweeps: 100,
            tolerance: 1e-4,
            truncation: 20,
            topic_counts: None,
            max_inner_steps: 50,
            backtrack_shrink: 0.5,
            armijo: 1e-4,
            max_backtracks: 30,
            local_iterations: 20,
            local_tolerance: 1e-6,
            jitter: crate::linalg::JITTER_SCALE,
            seed: 0,
            tied_xi: false,
            gamma: 0.1,
            alpha_init: 1.0,
            beta_init: 10.0,
            init_noise: 0.9,
            restarts: 1,
            workers: 1,
        }
    }
}

impl TrainConfig {
    /// Settings of the per-document updates.
    pub fn local_options(&self) -> LocalOptions {
        LocalOptions {
            max_iterations: self.local_iterations,
            tolerance: self.local_tolerance,
            xi: XiOptions {
                max_steps: self.max_inner_steps,
                shrink: self.backtrack_shrink,
                armijo: self.armijo,
                max_backtracks: self.max_backtracks,
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(Error::InvalidArgument(s));
        if self.max_sweeps == 0 {
            return bad("max_sweeps must be at least 1".into());
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return bad(format!("tolerance {} not in (0, 1)", self.tolerance));
        }
        if !(self.local_tolerance > 0.0 && self.local_tolerance < 1.0) {
            return bad(format!("local_tolerance {} not in (0, 1)", self.local_tolerance));
        }
        if self.max_inner_steps == 0 || self.max_backtracks == 0 || self.local_iterations == 0 || self.restarts == 0 {
            return bad("iteration limits must be positive".into());
        }
        if !(self.backtrack_shrink > 0.0 && self.backtrack_shrink < 1.0) {
            return bad(format!("backtrack_shrink {} not in (0, 1)", self.backtrack_shrink));
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return bad(format!("armijo {} not in (0, 1)", self.armijo));
        }
        if !(self.jitter > 0.0 && self.jitter < 1.0) {
            return bad(format!("jitter {} not in (0, 1)", self.jitter));
        }
        for (name, v) in [("gamma", self.gamma), ("alpha_init", self.alpha_init), ("beta_init", self.beta_init)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.init_noise) {
            return bad(format!("init_noise {} not in [0, 1]", self.init_noise));
        }
        let counts = self.topic_counts.clone().unwrap_or_default();
        if self.truncation < 2 || counts.iter().any(|&t| t < 2) {
            return bad("truncation levels must be at least 2".into());
        }
        Ok(())
    }

    /// Truncation level per modality.
    pub fn resolve_topic_counts(&self, modalities: usize) -> Result<Vec<usize>> {
        let counts = match &self.topic_counts {
            Some(c) if c.len() != modalities => {
                return Err(Error::InvalidArgument(format!(
                    "{} topic counts for {modalities} modalities",
                    c.len()
                )))
            }
            Some(c) => c.clone(),
            None => vec![self.truncation; modalities],
        };
        if self.tied_xi && counts.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::InvalidArgument(
                "tied xi requires the same truncation level in every modality".into(),
            ));
        }
        Ok(counts)
    }

    /// SHA-256 of the canonical JSON rendering, ignoring the worker count
    /// (which does not affect results).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.workers = 1;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
