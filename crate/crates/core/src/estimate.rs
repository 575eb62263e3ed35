//! Maximum-likelihood estimation.
//!
//! [`fit`] and [`conditional_fit`] run Levenberg–Marquardt on the whitened
//! residuals of a Gaussian model with exact Jacobians. [`maximize_density`]
//! handles arbitrary [`LogDensity`] implementations with a damped Newton
//! iteration on finite-difference Hessians of the gradient.

use nalgebra::{DMatrix, DVector};

use crate::diff::{self, ScalarFn};
use crate::error::{Error, Result};
use crate::model::{DataSet, Embedding, GaussianLogDensity, Model, ParamDomain};
use crate::stats::LogDensity;

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Scaled-gradient tolerance, relative to `1 + |ℓ|`.
    pub gtol: f64,
    /// Relative step tolerance.
    pub xtol: f64,
    pub lambda0: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 500,
            gtol: 1e-8,
            xtol: 1e-12,
            lambda0: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub theta_mle: Vec<f64>,
    pub loglik_at_mle: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Infinity norm of the scaled gradient of ℓ over the free parameters.
    pub gradient_norm: f64,
    /// The optimum sits within `1e-6` (relative) of a finite domain bound.
    pub boundary_constrained: bool,
}

fn near_bound(domain: &ParamDomain, theta: &[f64]) -> bool {
    theta.iter().enumerate().any(|(i, &v)| {
        let tol = 1e-6 * (1.0 + v.abs());
        (domain.lower[i].is_finite() && v - domain.lower[i] < tol)
            || (domain.upper[i].is_finite() && domain.upper[i] - v < tol)
    })
}

fn free_indices(n: usize, fixed: &[(usize, f64)]) -> Result<Vec<usize>> {
    let mut seen = vec![false; n];
    for &(i, _) in fixed {
        if i >= n {
            return Err(Error::Input(format!("fixed index {i} out of range for {n} parameters")));
        }
        if seen[i] {
            return Err(Error::Input(format!("parameter {i} fixed twice")));
        }
        seen[i] = true;
    }
    let free: Vec<usize> = (0..n).filter(|&i| !seen[i]).collect();
    if free.is_empty() {
        return Err(Error::Input("no free parameters left to fit".into()));
    }
    Ok(free)
}

struct LmState {
    ell: f64,
    /// Whitened residuals.
    rw: DVector<f64>,
}

fn lm_eval<M: Model>(ld: &GaussianLogDensity<'_, M>, theta: &[f64]) -> Result<LmState> {
    let h = ld.embedding().eval_f64(theta)?;
    let r: Vec<f64> = ld.data.ys().iter().zip(&h).map(|(y, p)| y - p).collect();
    let cov = ld.data.covariance();
    let rw = DVector::from_vec(cov.whiten(&r));
    let n = r.len() as f64;
    let ell = -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * cov.ln_det() - 0.5 * rw.norm_squared();
    if !ell.is_finite() {
        return Err(Error::NonFinite { what: "log-likelihood", index: 0 });
    }
    Ok(LmState { ell, rw })
}

fn whitened_jacobian<M: Model>(ld: &GaussianLogDensity<'_, M>, theta: &[f64], free: &[usize]) -> Result<DMatrix<f64>> {
    let jac = ld.embedding().jacobian(theta)?;
    let n_obs = jac.len();
    let mut out = DMatrix::zeros(n_obs, free.len());
    for (c, &j) in free.iter().enumerate() {
        let col: Vec<f64> = jac.iter().map(|row| row[j]).collect();
        let w = ld.data.covariance().whiten(&col);
        for r in 0..n_obs {
            out[(r, c)] = w[r];
        }
    }
    Ok(out)
}

/// Maximum-likelihood fit of `model` to `data` from `theta0`.
pub fn fit<M: Model>(model: &M, data: &DataSet, theta0: &[f64], opts: &FitOptions) -> Result<FitResult> {
    conditional_fit(model, data, &[], theta0, opts)
}

/// Fit over the parameters not listed in `fixed`, which stay pinned.
pub fn conditional_fit<M: Model>(
    model: &M,
    data: &DataSet,
    fixed: &[(usize, f64)],
    theta0: &[f64],
    opts: &FitOptions,
) -> Result<FitResult> {
    let n = model.param_dim();
    if theta0.len() != n {
        return Err(Error::Shape(format!("expected {n} starting values, got {}", theta0.len())));
    }
    let free = free_indices(n, fixed)?;
    let mut theta = theta0.to_vec();
    for &(i, v) in fixed {
        theta[i] = v;
    }
    let domain = model.domain();
    domain.check(&theta)?;
    let ld = GaussianLogDensity::new(model, data)?;

    let mut state = lm_eval(&ld, &theta)?;
    let mut lambda = opts.lambda0;
    let mut iterations = 0;
    let mut jw = whitened_jacobian(&ld, &theta, &free)?;

    loop {
        let a = jw.transpose() * &jw;
        let g = jw.transpose() * &state.rw;
        let scale: Vec<f64> = (0..free.len()).map(|i| a[(i, i)].sqrt().max(1e-300)).collect();
        let gnorm = g.iter().zip(&scale).map(|(gi, si)| (gi / si).abs()).fold(0.0, f64::max);
        let result = |theta: &[f64], ell, converged, it| FitResult {
            theta_mle: theta.to_vec(),
            loglik_at_mle: ell,
            converged,
            iterations: it,
            gradient_norm: gnorm,
            boundary_constrained: near_bound(&domain, theta),
        };
        if gnorm < opts.gtol * (1.0 + state.ell.abs()) {
            return Ok(result(&theta, state.ell, true, iterations));
        }
        if iterations >= opts.max_iterations {
            return Err(Error::NonConvergence { best: theta, iterations });
        }
        iterations += 1;

        // Inner loop: raise λ until a step improves ℓ.
        let mut accepted = false;
        while lambda < 1e16 {
            let mut m = a.clone();
            for i in 0..free.len() {
                m[(i, i)] += lambda * a[(i, i)].max(1e-300);
            }
            let delta = match m.cholesky() {
                Some(ch) => ch.solve(&g),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let mut trial = theta.clone();
            for (c, &j) in free.iter().enumerate() {
                trial[j] += delta[c];
            }
            if !domain.contains(&trial) {
                lambda *= 10.0;
                continue;
            }
            match lm_eval(&ld, &trial) {
                Ok(s) if s.ell > state.ell => {
                    let step = delta.norm();
                    let size = free.iter().map(|&j| theta[j] * theta[j]).sum::<f64>().sqrt();
                    theta = trial;
                    state = s;
                    lambda = (lambda / 10.0).max(1e-12);
                    jw = whitened_jacobian(&ld, &theta, &free)?;
                    accepted = true;
                    if step <= opts.xtol * (size + opts.xtol) {
                        let a = jw.transpose() * &jw;
                        let g = jw.transpose() * &state.rw;
                        let gn = (0..free.len())
                            .map(|i| (g[i] / a[(i, i)].sqrt().max(1e-300)).abs())
                            .fold(0.0, f64::max);
                        let mut r = result(&theta, state.ell, true, iterations);
                        r.gradient_norm = gn;
                        return Ok(r);
                    }
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !accepted {
            // No ascent direction at machine precision: stationary up to rounding.
            let converged = gnorm < 1e-6 * (1.0 + state.ell.abs());
            if converged {
                return Ok(result(&theta, state.ell, true, iterations));
            }
            return Err(Error::NonConvergence { best: theta, iterations });
        }
    }
}

/// Hessian of ℓ by central differences of the exact gradient.
pub fn fd_hessian<D: LogDensity>(density: &D, theta: &[f64], free: &[usize]) -> Result<DMatrix<f64>> {
    let k = free.len();
    let mut h = DMatrix::zeros(k, k);
    for (c, &j) in free.iter().enumerate() {
        let step = 1e-5 * (1.0 + theta[j].abs());
        let mut tp = theta.to_vec();
        let mut tm = theta.to_vec();
        tp[j] += step;
        tm[j] -= step;
        let gp = density.gradient(&tp)?;
        let gm = density.gradient(&tm)?;
        for (r, &i) in free.iter().enumerate() {
            h[(r, c)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Maximizes a general log-density over the coordinates not in `fixed`.
pub fn maximize_density<D: LogDensity>(
    density: &D,
    theta0: &[f64],
    fixed: &[(usize, f64)],
    opts: &FitOptions,
) -> Result<FitResult> {
    let n = density.dim();
    let free = free_indices(n, fixed)?;
    let mut theta = theta0.to_vec();
    for &(i, v) in fixed {
        theta[i] = v;
    }
    let domain = density.domain();
    domain.check(&theta)?;
    let mut ell = density.loglik(&theta)?;
    let mut mu = 1e-3;
    for it in 0..opts.max_iterations {
        let grad = density.gradient(&theta)?;
        let g = DVector::from_iterator(free.len(), free.iter().map(|&i| grad[i]));
        let h = fd_hessian(density, &theta, &free)?;
        let neg = -h;
        let diag_scale: Vec<f64> = (0..free.len()).map(|i| neg[(i, i)].abs().max(1e-12)).collect();
        let gnorm = (0..free.len())
            .map(|i| (g[i] / diag_scale[i].sqrt()).abs())
            .fold(0.0, f64::max);
        if gnorm < opts.gtol * (1.0 + ell.abs()) {
            return Ok(FitResult {
                theta_mle: theta.clone(),
                loglik_at_mle: ell,
                converged: true,
                iterations: it,
                gradient_norm: gnorm,
                boundary_constrained: near_bound(&domain, &theta),
            });
        }
        let mut improved = false;
        while mu < 1e16 {
            let mut m = neg.clone();
            for i in 0..free.len() {
                m[(i, i)] += mu * diag_scale[i];
            }
            let Some(ch) = m.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let delta = ch.solve(&g);
            let mut trial = theta.clone();
            for (c, &j) in free.iter().enumerate() {
                trial[j] += delta[c];
            }
            if !domain.contains(&trial) {
                mu *= 10.0;
                continue;
            }
            match density.loglik(&trial) {
                Ok(v) if v >= ell => {
                    let step = delta.norm();
                    let size = free.iter().map(|&j| theta[j] * theta[j]).sum::<f64>().sqrt();
                    theta = trial;
                    let gain = v - ell;
                    ell = v;
                    mu = (mu / 10.0).max(1e-12);
                    improved = true;
                    if step <= opts.xtol * (size + opts.xtol) || (gain == 0.0 && step < 1e-10 * (size + 1.0)) {
                        return Ok(FitResult {
                            theta_mle: theta.clone(),
                            loglik_at_mle: ell,
                            converged: true,
                            iterations: it + 1,
                            gradient_norm: gnorm,
                            boundary_constrained: near_bound(&domain, &theta),
                        });
                    }
                    break;
                }
                _ => mu *= 10.0,
            }
        }
        if !improved {
            if gnorm < 1e-6 * (1.0 + ell.abs()) {
                return Ok(FitResult {
                    theta_mle: theta.clone(),
                    loglik_at_mle: ell,
                    converged: true,
                    iterations: it,
                    gradient_norm: gnorm,
                    boundary_constrained: near_bound(&domain, &theta),
                });
            }
            return Err(Error::NonConvergence { best: theta, iterations: it });
        }
    }
    Err(Error::NonConvergence { best: theta, iterations: opts.max_iterations })
}

/// Exact Hessian of the Gaussian log-likelihood via nested dual numbers.
pub fn loglik_hessian<M: Model>(model: &M, data: &DataSet, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
    let ld = GaussianLogDensity::new(model, data)?;
    diff::hessian(&ld, theta)
}

/// Log-likelihood value at `theta`.
pub fn loglik<M: Model>(model: &M, data: &DataSet, theta: &[f64]) -> Result<f64> {
    let ld = GaussianLogDensity::new(model, data)?;
    ScalarFn::eval(&ld, theta)
}

/// Embedding Jacobian (N × n).
pub fn embedding_jacobian<M: Model>(model: &M, data: &DataSet, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
    Embedding::new(model, data).jacobian(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Scalar;
    use crate::model::{AnyModel, FnDensity};

    #[test]
    fn toy_linear_fit() {
        let m = AnyModel::builtin("toy-linear").unwrap();
        let r = fit(&m, &DataSet::toy(), &m.initial_guess(), &FitOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.theta_mle[0] - 1.23063).abs() < 1e-4);
        assert!((r.theta_mle[1] - 2.68134).abs() < 1e-4);
        assert!(!r.boundary_constrained);
    }

    #[test]
    fn conditional_at_joint_optimum() {
        let m = AnyModel::builtin("toy-linear").unwrap();
        let r = conditional_fit(&m, &DataSet::toy(), &[(1, 2.68134)], &[1.0, 0.0], &FitOptions::default()).unwrap();
        assert!((r.theta_mle[0] - 1.23063).abs() < 1e-4);
        assert_eq!(r.theta_mle[1], 2.68134);
    }

    #[test]
    fn rejects_bad_fixed_sets() {
        let m = AnyModel::builtin("toy-linear").unwrap();
        let d = DataSet::toy();
        let o = FitOptions::default();
        assert!(conditional_fit(&m, &d, &[(0, 1.0), (1, 1.0)], &[1.0, 1.0], &o).is_err());
        assert!(conditional_fit(&m, &d, &[(0, 1.0), (0, 2.0)], &[1.0, 1.0], &o).is_err());
        assert!(conditional_fit(&m, &d, &[(5, 1.0)], &[1.0, 1.0], &o).is_err());
    }

    #[test]
    fn start_outside_domain() {
        let m = AnyModel::builtin("toy-repar-2").unwrap();
        let r = fit(&m, &DataSet::toy(), &[-1.0, 0.0], &FitOptions::default());
        assert!(matches!(r, Err(Error::ParamDomain { .. })));
    }

    #[test]
    fn iteration_budget_reports_best() {
        let m = AnyModel::builtin("toy-repar-1").unwrap();
        let o = FitOptions { max_iterations: 1, ..Default::default() };
        match fit(&m, &DataSet::toy(), &[3.0, -3.0], &o) {
            Err(Error::NonConvergence { best, iterations }) => {
                assert_eq!(best.len(), 2);
                assert_eq!(iterations, 1);
            }
            other => panic!("{other:?}"),
        }
    }

    struct Bowl;
    impl ScalarFn for Bowl {
        fn eval<S: Scalar>(&self, t: &[S]) -> Result<S> {
            let a = t[0] - 1.0;
            let b = t[1] + 2.0;
            Ok(-(a * a * 2.0 + a * b + b * b) - (a * a).powi(2))
        }
    }

    #[test]
    fn generic_maximizer() {
        let d = FnDensity::new(Bowl, 2);
        let r = maximize_density(&d, &[0.0, 0.0], &[], &FitOptions::default()).unwrap();
        assert!((r.theta_mle[0] - 1.0).abs() < 1e-7);
        assert!((r.theta_mle[1] + 2.0).abs() < 1e-7);
        let c = maximize_density(&d, &[0.0, 0.0], &[(0, 1.0)], &FitOptions::default()).unwrap();
        assert!((c.theta_mle[1] + 2.0).abs() < 1e-7);
    }
}
