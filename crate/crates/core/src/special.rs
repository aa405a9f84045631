//! Thin wrappers over the special functions used by the bound.

pub(crate) fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

pub(crate) fn digamma(x: f64) -> f64 {
    statrs::function::gamma::digamma(x)
}
