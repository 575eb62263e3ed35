//! Fisher metric, identifiability, scaled covariance, Christoffel symbols and
//! geodesics of the Gaussian pull-back geometry.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{DataSet, Embedding, Model};
use crate::ode::{integrate, Direction, EventAction, EventSpec, OdeOptions};
use crate::stats::ConfidenceLevel;

/// Metric `g = Jᵀ Σ⁻¹ J` at a parameter point.
#[derive(Clone, Debug)]
pub struct FisherGeometry {
    pub theta: Vec<f64>,
    pub g: DMatrix<f64>,
    pub det_g: f64,
}

impl FisherGeometry {
    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        self.g
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or(Error::NotIdentifiable { det: self.det_g })
    }
}

pub fn fisher_metric<M: Model>(model: &M, data: &DataSet, theta: &[f64]) -> Result<FisherGeometry> {
    let jac = Embedding::new(model, data).jacobian(theta)?;
    let n = theta.len();
    let cov = data.covariance();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| cov.whiten(&jac.iter().map(|row| row[j]).collect::<Vec<_>>()))
        .collect();
    let mut g = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let v: f64 = cols[a].iter().zip(&cols[b]).map(|(x, y)| x * y).sum();
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    let det_g = g.determinant();
    Ok(FisherGeometry { theta: theta.to_vec(), g, det_g })
}

/// Local structural identifiability: `det g > tol · ∏ g_aa`.
///
/// The normalisation by the diagonal makes the test invariant under rescaling
/// of individual parameters. Returns the flag and `det g`.
pub fn is_identifiable<M: Model>(model: &M, data: &DataSet, theta: &[f64], tol: f64) -> Result<(bool, f64)> {
    let fg = fisher_metric(model, data, theta)?;
    let scale: f64 = fg.g.diagonal().iter().product();
    let ok = scale > 0.0 && fg.det_g.abs() > tol * scale;
    Ok((ok, fg.det_g))
}

/// `F_k⁻¹(q) · g⁻¹(θ)`; `k` defaults to the parameter dimension.
pub fn scaled_covariance<M: Model>(
    model: &M,
    data: &DataSet,
    theta_mle: &[f64],
    level: ConfidenceLevel,
    k: Option<usize>,
) -> Result<DMatrix<f64>> {
    let fg = fisher_metric(model, data, theta_mle)?;
    let inv = fg.inverse()?;
    let t = level.threshold(k.unwrap_or(theta_mle.len()))?;
    Ok(inv * t)
}

/// Metric derivatives `∂_k g` by central differences, with steps scaled to
/// the local standard width `g_kk^{-1/2}` of each parameter.
fn metric_derivatives<M: Model>(model: &M, data: &DataSet, theta: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    let g0 = fisher_metric(model, data, theta)?.g;
    (0..theta.len())
        .map(|k| {
            let width = g0[(k, k)].sqrt().recip();
            let h = 1e-4 * if width.is_finite() && width > 0.0 { width.min(1.0 + theta[k].abs()) } else { 1.0 };
            let mut tp = theta.to_vec();
            let mut tm = theta.to_vec();
            tp[k] += h;
            tm[k] -= h;
            let gp = fisher_metric(model, data, &tp)?.g;
            let gm = fisher_metric(model, data, &tm)?.g;
            Ok((gp - gm) / (2.0 * h))
        })
        .collect()
}

/// Levi-Civita coefficients `Γ[a][b][c] = Γ^a_{bc}` of the Fisher metric.
pub fn christoffel<M: Model>(model: &M, data: &DataSet, theta: &[f64]) -> Result<Vec<Vec<Vec<f64>>>> {
    let inv = fisher_metric(model, data, theta)?.inverse()?;
    let dg = metric_derivatives(model, data, theta)?;
    let n = theta.len();
    // Lowered symbols Γ_{d,bc}.
    let mut low = vec![vec![vec![0.0; n]; n]; n];
    for d in 0..n {
        for b in 0..n {
            for c in b..n {
                let v = 0.5 * (dg[b][(d, c)] + dg[c][(d, b)] - dg[d][(b, c)]);
                low[d][b][c] = v;
                low[d][c][b] = v;
            }
        }
    }
    let mut gamma = vec![vec![vec![0.0; n]; n]; n];
    for a in 0..n {
        for b in 0..n {
            for c in b..n {
                let v: f64 = (0..n).map(|d| inv[(a, d)] * low[d][b][c]).sum();
                gamma[a][b][c] = v;
                gamma[a][c][b] = v;
            }
        }
    }
    Ok(gamma)
}

#[derive(Clone, Debug)]
pub struct GeodesicOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Uniformly spaced output samples in the affine parameter.
    pub samples: usize,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        GeodesicOptions { rtol: 1e-8, atol: 1e-10, samples: 101 }
    }
}

#[derive(Clone, Debug)]
pub struct Geodesic {
    pub ts: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    /// The curve stopped early at the edge of the parameter domain.
    pub truncated: bool,
    pub rhs_evaluations: usize,
}

/// Solves `θ̈^a + Γ^a_{bc} θ̇^b θ̇^c = 0` from `theta0` with initial direction
/// `v0` rescaled to unit metric speed, over `t ∈ [0, t_end]`.
pub fn geodesic<M: Model>(
    model: &M,
    data: &DataSet,
    theta0: &[f64],
    v0: &[f64],
    t_end: f64,
    opts: &GeodesicOptions,
) -> Result<Geodesic> {
    let n = theta0.len();
    if v0.len() != n {
        return Err(Error::Shape("direction and point differ in dimension".into()));
    }
    let g0 = fisher_metric(model, data, theta0)?.g;
    let v = nalgebra::DVector::from_column_slice(v0);
    let speed2 = (v.transpose() * &g0 * &v)[(0, 0)];
    if !(speed2 > 0.0) {
        return Err(Error::Input("initial direction has zero metric length".into()));
    }
    let s = speed2.sqrt();
    let mut y0 = theta0.to_vec();
    y0.extend(v0.iter().map(|x| x / s));
    let domain = model.domain();

    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let (th, vel) = y.split_at(n);
        domain.check(th)?;
        let gamma = christoffel(model, data, th)?;
        for a in 0..n {
            dy[a] = vel[a];
            let mut acc = 0.0;
            for b in 0..n {
                for c in 0..n {
                    acc += gamma[a][b][c] * vel[b] * vel[c];
                }
            }
            dy[n + a] = -acc;
        }
        Ok(())
    };
    // Stop shortly before leaving the domain.
    let lower = domain.lower.clone();
    let upper = domain.upper.clone();
    let margin = move |_t: f64, y: &[f64]| {
        (0..n)
            .map(|i| {
                let w = 1e-3 * (1.0 + y[i].abs());
                ((y[i] - lower[i]) / w).min((upper[i] - y[i]) / w)
            })
            .fold(f64::INFINITY, f64::min)
            .min(1e6)
            - 1.0
    };
    let mut events = [EventSpec::new(margin, Direction::Down, EventAction::Terminate)];
    let ode = OdeOptions::with_tol(opts.rtol, opts.atol);
    let sol = integrate(rhs, &y0, (0.0, t_end), &ode, &mut events)?;
    let t_stop = sol.t_end();
    let m = opts.samples.max(2);
    let ts: Vec<f64> = (0..m).map(|i| t_stop * i as f64 / (m - 1) as f64).collect();
    let mut points = Vec::with_capacity(m);
    let mut velocities = Vec::with_capacity(m);
    for &t in &ts {
        let y = sol.eval(t);
        points.push(y[..n].to_vec());
        velocities.push(y[n..].to_vec());
    }
    Ok(Geodesic {
        ts,
        points,
        velocities,
        truncated: sol.terminated_by_event,
        rhs_evaluations: sol.rhs_evaluations,
    })
}

/// `count` geodesics from `theta0` whose initial directions are spread
/// uniformly in angle in the whitened tangent plane (first two axes for
/// `n > 2`), each of metric length `t_end`. Runs in parallel.
pub fn radial_geodesics<M: Model>(
    model: &M,
    data: &DataSet,
    theta0: &[f64],
    count: usize,
    t_end: f64,
    opts: &GeodesicOptions,
) -> Result<Vec<Result<Geodesic>>> {
    let n = theta0.len();
    let g = fisher_metric(model, data, theta0)?;
    let l = g.g.clone().cholesky().ok_or(Error::NotIdentifiable { det: g.det_g })?.l();
    let lt_inv = l
        .transpose()
        .try_inverse()
        .ok_or(Error::NotIdentifiable { det: g.det_g })?;
    let dirs: Vec<Vec<f64>> = (0..count)
        .map(|k| {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            let mut u = nalgebra::DVector::zeros(n);
            u[0] = phi.cos();
            if n > 1 {
                u[1] = phi.sin();
            }
            (&lt_inv * u).iter().cloned().collect()
        })
        .collect();
    Ok(crate::parallel::install(|| {
        dirs.par_iter()
            .map(|v| geodesic(model, data, theta0, v, t_end, opts))
            .collect()
    }))
}
