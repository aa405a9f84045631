//! The `q(xi)` update.
//!
//! With `q(Y)` fixed, the bound depends on `(xi_mean, xi_var)` through
//!
//! ```text
//! f = -A'm - sum_c B_c exp(-m_c + v_c / 2)
//!     - (m - mu)' P (m - mu) / 2 - diag(P)'v / 2 + sum_c log(v_c) / 2
//! ```
//!
//! where `A_c` is the total prior shape and `B_c` the total `E[Y]` attached to
//! coordinate `c`. `f` is jointly concave in `(m, log v)`, so it is maximized
//! by Newton steps in those coordinates, safeguarded by Armijo backtracking.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::{Error, Result};

/// The coordinate-wise constants of the `q(xi)` objective.
#[derive(Debug, Clone)]
pub struct XiObjective<'a> {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub mu: &'a DVector<f64>,
    pub precision: &'a DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XiOptions {
    pub max_steps: usize,
    pub shrink: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for XiOptions {
    fn default() -> Self {
        XiOptions { max_steps: 50, shrink: 0.5, armijo: 1e-4, max_backtracks: 30 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct XiUpdate {
    pub xi_mean: DVector<f64>,
    pub xi_var: DVector<f64>,
    pub steps: usize,
    /// The line search gave up before the step limit.
    pub stalled: bool,
}

/// Value of the `q(xi)` objective.
pub fn elbo_xi(obj: &XiObjective, xi_mean: &DVector<f64>, xi_var: &DVector<f64>) -> Result<f64> {
    let n = xi_mean.len();
    if [xi_var.len(), obj.a.len(), obj.b.len(), obj.mu.len(), obj.precision.nrows(), obj.precision.ncols()]
        .iter()
        .any(|&l| l != n)
    {
        return Err(Error::Dimension(format!("q(xi) objective over {n} coordinates has inconsistent inputs")));
    }
    if let Some(v) = xi_var.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::InvalidArgument(format!("xi variance {v} is not positive")));
    }
    Ok(unchecked_value(obj, xi_mean, xi_var))
}

/// [`elbo_xi`] without checks; `-inf` outside the domain.
fn unchecked_value(obj: &XiObjective, xi_mean: &DVector<f64>, xi_var: &DVector<f64>) -> f64 {
    let d = xi_mean - obj.mu;
    let pd = obj.precision * &d;
    let mut f = -0.5 * d.dot(&pd);
    for c in 0..xi_mean.len() {
        let v = xi_var[c];
        if !(v > 0.0) {
            return f64::NEG_INFINITY;
        }
        f -= obj.a[c] * xi_mean[c];
        if obj.b[c] != 0.0 {
            f -= obj.b[c] * (-xi_mean[c] + 0.5 * v).exp();
        }
        f += -0.5 * obj.precision[(c, c)] * v + 0.5 * v.ln();
    }
    if f.is_nan() {
        f64::NEG_INFINITY
    } else {
        f
    }
}

/// Gradient of [`elbo_xi`] with respect to `xi_mean` and `xi_var`.
pub fn grad_xi(
    obj: &XiObjective,
    xi_mean: &DVector<f64>,
    xi_var: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let n = xi_mean.len();
    let mut gm = -(obj.precision * (xi_mean - obj.mu));
    let mut gv = DVector::zeros(n);
    for c in 0..n {
        let t = obj.b[c] * (-xi_mean[c] + 0.5 * xi_var[c]).exp();
        gm[c] += -obj.a[c] + t;
        gv[c] = -0.5 * t - 0.5 * obj.precision[(c, c)] + 0.5 / xi_var[c];
    }
    (gm, gv)
}

/// Maximizes [`elbo_xi`] starting from the given point.
pub fn update_xi(
    obj: &XiObjective,
    xi_mean: &DVector<f64>,
    xi_var: &DVector<f64>,
    opts: &XiOptions,
) -> XiUpdate {
    let n = xi_mean.len();
    let mut m = xi_mean.clone();
    let mut s = xi_var.map(f64::ln);
    let mut f = unchecked_value(obj, &m, xi_var);
    let mut steps = 0;
    let mut stalled = false;

    for _ in 0..opts.max_steps {
        let v = s.map(f64::exp);
        let (gm, gv) = grad_xi(obj, &m, &v);
        let gs = gv.component_mul(&v);
        let gnorm = gm.amax().max(gs.amax());
        if !(gnorm > 1e-12) {
            break;
        }

        let mut g = DVector::zeros(2 * n);
        g.rows_mut(0, n).copy_from(&gm);
        g.rows_mut(n, n).copy_from(&gs);
        let dir = newton_direction(obj, &m, &v, &g).unwrap_or_else(|| g.clone());
        let slope = g.dot(&dir);

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let m_new = &m + dir.rows(0, n) * step;
            let s_new = &s + dir.rows(n, n) * step;
            let f_new = unchecked_value(obj, &m_new, &s_new.map(f64::exp));
            if f_new >= f + opts.armijo * step * slope {
                accepted = Some((m_new, s_new, f_new));
                break;
            }
            step *= opts.shrink;
        }
        let Some((m_new, s_new, f_new)) = accepted else {
            stalled = true;
            break;
        };
        let gain = f_new - f;
        m = m_new;
        s = s_new;
        f = f_new;
        steps += 1;
        if gain <= 1e-14 * f.abs().max(1.0) {
            break;
        }
    }

    XiUpdate { xi_mean: m, xi_var: s.map(f64::exp), steps, stalled }
}

/// Solves `(-H) d = g` for the Hessian `H` in `(xi_mean, log xi_var)`.
fn newton_direction(
    obj: &XiObjective,
    m: &DVector<f64>,
    v: &DVector<f64>,
    g: &DVector<f64>,
) -> Option<DVector<f64>> {
    let n = m.len();
    let mut neg_h = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            neg_h[(i, j)] = obj.precision[(i, j)];
        }
    }
    for c in 0..n {
        let t = obj.b[c] * (-m[c] + 0.5 * v[c]).exp();
        let pcc = obj.precision[(c, c)];
        neg_h[(c, c)] += t;
        neg_h[(c, n + c)] = -0.5 * t * v[c];
        neg_h[(n + c, c)] = -0.5 * t * v[c];
        neg_h[(n + c, n + c)] = 0.5 * v[c] * (t + pcc) + 0.25 * t * v[c] * v[c];
    }
    let ridge = 1e-12 * neg_h.diagonal().amax().max(1.0);
    for i in 0..2 * n {
        neg_h[(i, i)] += ridge;
    }
    let dir = Cholesky::new(neg_h)?.solve(g);
    dir.iter().all(|x| x.is_finite()).then_some(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn objective<'a>(mu: &'a DVector<f64>, p: &'a DMatrix<f64>) -> XiObjective<'a> {
        XiObjective {
            a: DVector::from_vec(vec![0.7, 1.3, 0.2]),
            b: DVector::from_vec(vec![2.0, 0.5, 1.1]),
            mu,
            precision: p,
        }
    }

    fn precision() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[2.0, 0.4, -0.3, 0.4, 1.5, 0.2, -0.3, 0.2, 1.0])
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mu = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let p = precision();
        let obj = objective(&mu, &p);
        let m = DVector::from_vec(vec![0.4, -0.1, 0.2]);
        let v = DVector::from_vec(vec![0.3, 0.8, 1.2]);
        let (gm, gv) = grad_xi(&obj, &m, &v);
        let h = 1e-6;
        for c in 0..3 {
            let mut up = m.clone();
            let mut dn = m.clone();
            up[c] += h;
            dn[c] -= h;
            let fd = (elbo_xi(&obj, &up, &v).unwrap() - elbo_xi(&obj, &dn, &v).unwrap()) / (2.0 * h);
            assert!((fd - gm[c]).abs() < 1e-6, "mean {c}: {fd} vs {}", gm[c]);
            let mut up = v.clone();
            let mut dn = v.clone();
            up[c] += h;
            dn[c] -= h;
            let fd = (elbo_xi(&obj, &m, &up).unwrap() - elbo_xi(&obj, &m, &dn).unwrap()) / (2.0 * h);
            assert!((fd - gv[c]).abs() < 1e-6, "var {c}: {fd} vs {}", gv[c]);
        }
    }

    #[test]
    fn update_reaches_stationary_point_and_increases() {
        let mu = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let p = precision();
        let obj = objective(&mu, &p);
        let m0 = DVector::from_vec(vec![2.0, -3.0, 0.0]);
        let v0 = DVector::from_vec(vec![5.0, 0.01, 1.0]);
        let f0 = elbo_xi(&obj, &m0, &v0).unwrap();
        let out = update_xi(&obj, &m0, &v0, &XiOptions::default());
        assert!(!out.stalled);
        assert!(elbo_xi(&obj, &out.xi_mean, &out.xi_var).unwrap() > f0);
        let (gm, gv) = grad_xi(&obj, &out.xi_mean, &out.xi_var);
        assert!(gm.amax() < 1e-8 && gv.amax() < 1e-8);
    }

    #[test]
    fn nonpositive_variance_is_an_error() {
        let mu = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let p = precision();
        let obj = objective(&mu, &p);
        let m = DVector::zeros(3);
        assert!(matches!(elbo_xi(&obj, &m, &DVector::from_vec(vec![1.0, 0.0, 1.0])), Err(Error::InvalidArgument(_))));
        assert!(matches!(elbo_xi(&obj, &m, &DVector::from_vec(vec![1.0, f64::NAN, 1.0])), Err(Error::InvalidArgument(_))));
        assert!(matches!(elbo_xi(&obj, &m, &DVector::from_element(2, 1.0)), Err(Error::Dimension(_))));
    }

    #[test]
    fn stationary_input_is_returned_unchanged() {
        let mu = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let p = precision();
        let obj = objective(&mu, &p);
        let opt = update_xi(
            &obj,
            &DVector::zeros(3),
            &DVector::from_element(3, 1.0),
            &XiOptions { max_steps: 200, ..XiOptions::default() },
        );
        let again = update_xi(&obj, &opt.xi_mean, &opt.xi_var, &XiOptions::default());
        assert!((&again.xi_mean - &opt.xi_mean).amax() < 1e-10);
        assert!((&again.xi_var - &opt.xi_var).amax() < 1e-10);
    }

    #[test]
    fn no_data_gives_prior() {
        let mu = DVector::from_vec(vec![0.5, -1.0]);
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let obj = XiObjective { a: DVector::zeros(2), b: DVector::zeros(2), mu: &mu, precision: &p };
        let out = update_xi(&obj, &DVector::zeros(2), &DVector::from_element(2, 3.0), &XiOptions::default());
        assert!((&out.xi_mean - &mu).amax() < 1e-9);
        assert!((out.xi_var[0] - 0.5).abs() < 1e-9 && (out.xi_var[1] - 1.0).abs() < 1e-9);
    }
}
