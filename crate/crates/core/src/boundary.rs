//! Confidence boundaries as integral manifolds of likelihood-annihilating
//! vector fields.
//!
//! In two dimensions the boundary `{θ : 2(ℓ_MLE − ℓ(θ)) = F_k⁻¹(q)}` is traced
//! as a single closed integral curve of the arc-length normalized field
//! `X = (∂₂ℓ, −∂₁ℓ)`. Three-dimensional boundaries are sliced along `θ₃`:
//! a transverse tangent flow carries a seed to each slicing level, each slice
//! is closed with the in-slice field, and neighbouring slices are stitched
//! into a quad mesh with triangular caps.
//!
//! Tracing runs in internal coordinates `u = (θ − θ_MLE)/s`, where `s`
//! approximates the half-extent of the region along each axis, so that the
//! integrator tolerances are relative to the size of the region.

use std::cell::Cell;
use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimate::{fd_hessian, maximize_density, FitOptions, FitResult};
use crate::model::ParamDomain;
use crate::ode::{self, Direction, EventAction, EventSpec, OdeOptions, OdeSolution};
use crate::parallel;
use crate::stats::{ConfidenceLevel, Counted, LogDensity};

/// Wilks statistic `2(ℓ_MLE − ℓ)`, clamped at zero within rounding slack.
pub fn lr_stat(ell_mle: f64, ell: f64) -> Result<f64> {
    let slack = 1e-10 * ell_mle.abs().max(1.0);
    if ell > ell_mle + slack || ell.is_nan() {
        return Err(Error::BetterPointFound { ell, ell_mle });
    }
    Ok((2.0 * (ell_mle - ell)).max(0.0))
}

/// The level set `2(ℓ_MLE − ℓ) = threshold` around `center`.
#[derive(Clone, Debug)]
pub struct RegionSpec {
    pub center: Vec<f64>,
    pub ell_mle: f64,
    pub level: ConfidenceLevel,
    pub dof: usize,
    pub threshold: f64,
}

impl RegionSpec {
    pub fn new(center: Vec<f64>, ell_mle: f64, level: ConfidenceLevel, dof: usize) -> Result<Self> {
        if !ell_mle.is_finite() {
            return Err(Error::NonFinite { what: "log-likelihood at the MLE", index: 0 });
        }
        let threshold = level.threshold(dof)?;
        Ok(RegionSpec { center, ell_mle, level, dof, threshold })
    }

    /// Region of a fit with `k = dim θ`.
    pub fn from_fit(fit: &FitResult, level: ConfidenceLevel) -> Result<Self> {
        RegionSpec::new(fit.theta_mle.clone(), fit.loglik_at_mle, level, fit.theta_mle.len())
    }

    pub fn with_dof(self, dof: usize) -> Result<Self> {
        RegionSpec::new(self.center, self.ell_mle, self.level, dof)
    }

    pub fn stat(&self, ell: f64) -> Result<f64> {
        lr_stat(self.ell_mle, ell)
    }

    /// Log-likelihood value on the boundary.
    pub fn target(&self) -> f64 {
        self.ell_mle - 0.5 * self.threshold
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }
}

/// Coefficients `α` with `Σα = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaVector(Vec<f64>);

impl AlphaVector {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::Input("α needs at least two components".into()));
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::Input("α has non-finite components".into()));
        }
        let sum: f64 = alpha.iter().sum();
        let size: f64 = alpha.iter().map(|a| a.abs()).sum();
        if size == 0.0 || sum.abs() > 1e-14 * size.max(1.0) {
            return Err(Error::Input(format!("α components must sum to zero (sum = {sum:e})")));
        }
        Ok(AlphaVector(alpha))
    }

    /// Orthogonal projection of `v` onto the hyperplane `Σα = 0`.
    pub fn project(v: &[f64]) -> Result<Self> {
        let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let mut a: Vec<f64> = v.iter().map(|x| x - mean).collect();
        // Push the rounding residue into the largest component.
        let rest: f64 = a.iter().sum();
        if let Some(i) = (0..a.len()).max_by(|&i, &j| a[i].abs().total_cmp(&a[j].abs())) {
            a[i] -= rest;
        }
        AlphaVector::new(a)
    }

    /// `e_i − e_j` in `n` dimensions.
    pub fn pair(n: usize, i: usize, j: usize) -> Result<Self> {
        if i >= n || j >= n || i == j {
            return Err(Error::Input(format!("invalid coordinate pair ({i}, {j}) for n = {n}")));
        }
        let mut a = vec![0.0; n];
        a[i] = 1.0;
        a[j] = -1.0;
        AlphaVector::new(a)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Tangent field `X^j = α^j ∏_{i≠j} ∂_iℓ`, which satisfies `⟨∇ℓ, X⟩ = 0`.
///
/// For `n ≥ 3` the product form collapses when a single partial vanishes; if
/// `min |∂_iℓ| < 1e-12 ‖∇ℓ‖` the field is replaced by the projection of a
/// regularized product onto the orthogonal complement of `∇ℓ`.
pub fn orth_vector_field(grad: &[f64], alpha: &AlphaVector) -> Result<Vec<f64>> {
    let n = grad.len();
    let a = alpha.as_slice();
    if a.len() != n {
        return Err(Error::Shape(format!("α has {} components for a {n}-dimensional gradient", a.len())));
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !(norm > 1e-300) || !norm.is_finite() {
        return Err(Error::SingularGradient { theta: Vec::new() });
    }
    let floor = 1e-12 * norm;
    let degenerate = n >= 3 && grad.iter().any(|g| g.abs() < floor);
    let partials: Vec<f64> = if degenerate {
        grad.iter()
            .map(|&g| if g.abs() >= floor { g } else if g < 0.0 { -floor } else { floor })
            .collect()
    } else {
        grad.to_vec()
    };
    let mut x: Vec<f64> = (0..n)
        .map(|j| {
            let prod: f64 = (0..n).filter(|&i| i != j).map(|i| partials[i]).product();
            a[j] * prod
        })
        .collect();
    if degenerate {
        let dot: f64 = x.iter().zip(grad).map(|(xi, gi)| xi * gi).sum();
        for (xi, gi) in x.iter_mut().zip(grad) {
            *xi -= dot / (norm * norm) * gi;
        }
        if x.iter().all(|v| *v == 0.0) {
            let dot: f64 = a.iter().zip(grad).map(|(ai, gi)| ai * gi).sum();
            x = a.iter().zip(grad).map(|(ai, gi)| ai - dot / (norm * norm) * gi).collect();
        }
    }
    Ok(x)
}

/// Lie bracket `[K(α), K(β)]` of two product-form fields at `theta`, by
/// central differences of the field coefficients.
pub fn lie_bracket<D: LogDensity>(
    density: &D,
    alpha: &AlphaVector,
    beta: &AlphaVector,
    theta: &[f64],
) -> Result<Vec<f64>> {
    let field = |a: &AlphaVector, t: &[f64]| -> Result<Vec<f64>> { orth_vector_field(&density.gradient(t)?, a) };
    let x = field(alpha, theta)?;
    let y = field(beta, theta)?;
    let directional = |f: &AlphaVector, v: &[f64]| -> Result<Vec<f64>> {
        let vn = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if vn == 0.0 {
            return Ok(vec![0.0; theta.len()]);
        }
        let scale = theta.iter().map(|t| t * t).sum::<f64>().sqrt() + 1.0;
        let h = 1e-5 * scale / vn;
        let tp: Vec<f64> = theta.iter().zip(v).map(|(t, d)| t + h * d).collect();
        let tm: Vec<f64> = theta.iter().zip(v).map(|(t, d)| t - h * d).collect();
        let fp = field(f, &tp)?;
        let fm = field(f, &tm)?;
        Ok(fp.iter().zip(&fm).map(|(p, m)| (p - m) / (2.0 * h)).collect())
    };
    let dy_x = directional(beta, &x)?;
    let dx_y = directional(alpha, &y)?;
    Ok(dy_x.iter().zip(&dx_y).map(|(a, b)| a - b).collect())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Root of `f` on a sign-changing bracket by the Illinois variant of regula
/// falsi, with bisection whenever the bracket stalls.
fn bracket_root(
    mut f: impl FnMut(f64) -> Result<f64>,
    (mut a, mut fa): (f64, f64),
    (mut b, mut fb): (f64, f64),
    ftol: f64,
    xrel: f64,
) -> Result<(f64, f64)> {
    let mut best = if fa.abs() < fb.abs() { (a, fa) } else { (b, fb) };
    let mut side = 0i8;
    let mut width = (b - a).abs();
    let mut stall = 0;
    for _ in 0..300 {
        if best.1.abs() <= ftol || (b - a).abs() <= xrel * a.abs().max(b.abs()).max(f64::MIN_POSITIVE) {
            break;
        }
        let mut x = if stall >= 2 { 0.5 * (a + b) } else { (a * fb - b * fa) / (fb - fa) };
        if !(x > a.min(b) && x < a.max(b)) {
            x = 0.5 * (a + b);
        }
        let fx = f(x)?;
        if fx.abs() < best.1.abs() {
            best = (x, fx);
        }
        if fx == 0.0 {
            break;
        }
        if (fx < 0.0) == (fa < 0.0) {
            a = x;
            fa = fx;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = x;
            fb = fx;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
        let w = (b - a).abs();
        stall = if w > 0.5 * width { stall + 1 } else { 0 };
        width = w;
    }
    Ok(best)
}

/// Point on the boundary along the ray `center + r·direction`, `r > 0`.
///
/// The radius is bracketed by doubling from `1e-3·scale` and then refined
/// until the statistic matches the threshold to `1e-10` relative.
pub fn find_boundary_point<D: LogDensity>(
    density: &D,
    spec: &RegionSpec,
    direction: &[f64],
    max_radius: f64,
) -> Result<Vec<f64>> {
    let n = spec.dim();
    if direction.len() != n || density.dim() != n {
        return Err(Error::Shape("direction, density and centre dimensions differ".into()));
    }
    let dn = norm(direction);
    if !(dn > 0.0) || !dn.is_finite() {
        return Err(Error::Input("direction must be a non-zero finite vector".into()));
    }
    let dir: Vec<f64> = direction.iter().map(|d| d / dn).collect();
    let point = |r: f64| -> Vec<f64> { spec.center.iter().zip(&dir).map(|(c, d)| c + r * d).collect() };
    let f = |r: f64| -> Result<f64> { Ok(spec.stat(density.loglik(&point(r))?)? - spec.threshold) };

    let domain = density.domain();
    let r_dom = domain.max_step(&spec.center, &dir);
    let scale = norm(&spec.center);
    let mut r = 1e-3 * if scale > 0.0 { scale } else { 1.0 };
    let mut lo = (0.0, -spec.threshold);
    let hi;
    loop {
        if r >= r_dom {
            // Last admissible point before the domain edge.
            let mut edge = r_dom * (1.0 - 1e-9);
            while !domain.contains(&point(edge)) && edge > lo.0 {
                edge = lo.0 + 0.5 * (edge - lo.0);
            }
            let fe = f(edge)?;
            if fe < 0.0 {
                return Err(Error::DomainTruncation {
                    theta: point(edge),
                    stat: fe + spec.threshold,
                    threshold: spec.threshold,
                });
            }
            hi = (edge, fe);
            break;
        }
        if r > max_radius {
            return Err(Error::PracticalNonIdentifiability { direction: dir });
        }
        let fr = f(r)?;
        if fr >= 0.0 {
            hi = (r, fr);
            break;
        }
        lo = (r, fr);
        r *= 2.0;
    }
    let (root, _) = bracket_root(f, lo, hi, 1e-10 * spec.threshold, 1e-15)?;
    Ok(point(root))
}

/// Options for boundary tracing.
#[derive(Clone, Debug)]
pub struct TraceOptions {
    pub rtol: f64,
    /// Absolute tolerance in the internal scaled coordinates; defaults to `rtol`.
    pub atol: Option<f64>,
    /// Rate of the normal correction that pulls drift back onto the level set.
    pub stabilization: f64,
    /// Arc-length cap in units of the initial radius.
    pub max_arc_factor: f64,
    pub max_steps: usize,
    /// Largest arc-length step in internal units, which fixes the sampling
    /// resolution of the curve.
    pub max_step: Option<f64>,
    /// Per-axis scale of the internal coordinates; estimated from the
    /// Hessian at the centre when `None`.
    pub scale: Option<Vec<f64>>,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions {
            rtol: 1e-8,
            atol: None,
            stabilization: 4.0,
            max_arc_factor: 1e3,
            max_steps: 1_000_000,
            max_step: None,
            scale: None,
        }
    }
}

impl TraceOptions {
    pub fn with_rtol(rtol: f64) -> Self {
        TraceOptions { rtol, ..Default::default() }
    }

    fn ode(&self) -> OdeOptions {
        OdeOptions {
            rtol: self.rtol,
            atol: self.atol.unwrap_or(self.rtol),
            max_steps: self.max_steps,
            h0: None,
            max_step: self.max_step,
        }
    }
}

/// Affine map between internal coordinates `u` and parameters `θ`, with an
/// optional pinned internal coordinate for slices.
#[derive(Clone, Debug)]
struct Chart {
    center: Vec<f64>,
    scale: Vec<f64>,
    fixed: Option<(usize, f64)>,
}

impl Chart {
    fn full_u(&self, u: &[f64]) -> Vec<f64> {
        match self.fixed {
            Some((i, c)) => {
                let mut v = u.to_vec();
                v.insert(i, c);
                v
            }
            None => u.to_vec(),
        }
    }

    fn to_theta(&self, u: &[f64]) -> Vec<f64> {
        let full = self.full_u(u);
        full.iter().zip(&self.center).zip(&self.scale).map(|((u, c), s)| c + s * u).collect()
    }

    fn to_u(&self, theta: &[f64]) -> Vec<f64> {
        let mut u: Vec<f64> = theta
            .iter()
            .zip(&self.center)
            .zip(&self.scale)
            .map(|((t, c), s)| (t - c) / s)
            .collect();
        if let Some((i, _)) = self.fixed {
            u.remove(i);
        }
        u
    }
}

/// Density in internal coordinates.
struct Scaled<'a, D> {
    inner: &'a D,
    chart: Chart,
}

impl<D: LogDensity> Scaled<'_, D> {
    fn map_err(&self, e: Error) -> Error {
        match e {
            Error::ParamDomain { .. } => Error::NotClosed(format!("the boundary leaves the parameter domain ({e})")),
            other => other,
        }
    }
}

impl<D: LogDensity> LogDensity for Scaled<'_, D> {
    fn dim(&self) -> usize {
        self.chart.scale.len() - usize::from(self.chart.fixed.is_some())
    }
    fn loglik(&self, u: &[f64]) -> Result<f64> {
        self.inner.loglik(&self.chart.to_theta(u)).map_err(|e| self.map_err(e))
    }
    fn gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_gradient(u)?.1)
    }
    fn value_and_gradient(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, g) = self.inner.value_and_gradient(&self.chart.to_theta(u)).map_err(|e| self.map_err(e))?;
        let mut gu: Vec<f64> = g.iter().zip(&self.chart.scale).map(|(g, s)| g * s).collect();
        if let Some((i, _)) = self.chart.fixed {
            gu.remove(i);
        }
        Ok((v, gu))
    }
    fn domain(&self) -> ParamDomain {
        let d = self.inner.domain();
        let c = &self.chart;
        let mut lower: Vec<f64> = (0..c.scale.len()).map(|i| (d.lower[i] - c.center[i]) / c.scale[i]).collect();
        let mut upper: Vec<f64> = (0..c.scale.len()).map(|i| (d.upper[i] - c.center[i]) / c.scale[i]).collect();
        if let Some((i, _)) = c.fixed {
            lower.remove(i);
            upper.remove(i);
        }
        ParamDomain { lower, upper }
    }
}

/// Per-axis half-extent estimate `sqrt(T·(−H)⁻¹_ii)` at the centre.
fn auto_scale<D: LogDensity>(density: &D, spec: &RegionSpec, seed: &[f64], opts: &TraceOptions) -> Result<Vec<f64>> {
    let n = spec.dim();
    if let Some(s) = &opts.scale {
        if s.len() != n || s.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Input("trace scale must hold one positive value per parameter".into()));
        }
        return Ok(s.clone());
    }
    let free: Vec<usize> = (0..n).collect();
    let fallback = || {
        let r = dist(seed, &spec.center);
        vec![if r > 0.0 { r } else { 1.0 }; n]
    };
    let Ok(h) = fd_hessian(density, &spec.center, &free) else {
        return Ok(fallback());
    };
    let neg: DMatrix<f64> = -h;
    match neg.clone().cholesky() {
        Some(ch) => {
            let inv = ch.inverse();
            let s: Vec<f64> = (0..n).map(|i| (spec.threshold * inv[(i, i)]).sqrt()).collect();
            if s.iter().all(|v| v.is_finite() && *v > 0.0) {
                Ok(s)
            } else {
                Ok(fallback())
            }
        }
        None => Ok(fallback()),
    }
}

/// Closed integral curve of the normalized in-plane field through `u0`.
fn trace_core<D: LogDensity>(dens: &D, target: f64, u0: &[f64], opts: &TraceOptions) -> Result<OdeSolution<f64>> {
    let alpha = AlphaVector::pair(2, 0, 1)?;
    let (_, g0) = dens.value_and_gradient(u0)?;
    let g0n = norm(&g0);
    let x0 = orth_vector_field(&g0, &alpha).map_err(|_| Error::SingularGradient { theta: u0.to_vec() })?;
    let x0n = norm(&x0);
    let tangent: Vec<f64> = x0.iter().map(|v| v / x0n).collect();
    let kappa = opts.stabilization;
    let reach = Cell::new(0.0f64);

    let rhs = |_t: f64, u: &[f64], du: &mut [f64]| -> Result<()> {
        let (ell, g) = dens.value_and_gradient(u)?;
        let gn = norm(&g);
        if !(gn > 1e-8 * g0n) {
            return Err(Error::SingularGradient { theta: u.to_vec() });
        }
        let x = orth_vector_field(&g, &alpha)?;
        let xn = norm(&x);
        let pull = kappa * (target - ell) / (gn * gn);
        for i in 0..2 {
            du[i] = x[i] / xn + pull * g[i];
        }
        reach.set(reach.get().max(dist(u, u0)));
        Ok(())
    };
    let radius = norm(u0).max(1e-300);
    let mut events = [EventSpec::new(
        |_t, u: &[f64]| (u[0] - u0[0]) * tangent[0] + (u[1] - u0[1]) * tangent[1],
        Direction::Up,
        EventAction::Terminate,
    )
    .with_guard(|_t, u: &[f64]| dist(u, u0) < 0.1 * reach.get())];
    let cap = opts.max_arc_factor * radius;
    let sol = ode::integrate(rhs, u0, (0.0, cap), &opts.ode(), &mut events)?;
    if !sol.terminated_by_event {
        return Err(Error::NotClosed(format!(
            "no return to the seed within arc length {cap:e} (internal units)"
        )));
    }
    Ok(sol)
}

/// A traced closed boundary curve.
#[derive(Clone, Debug)]
pub struct BoundaryCurve {
    pub level: ConfidenceLevel,
    pub dof: usize,
    pub threshold: f64,
    pub ell_mle: f64,
    /// Ordered points; the last one is the located return to the seed.
    pub samples: Vec<Vec<f64>>,
    /// Arc-length parameter of each sample in internal units.
    pub arc: Vec<f64>,
    pub closure_defect: f64,
    /// Signed turns around the centre.
    pub winding: f64,
    pub grad_evaluations: usize,
    pub loglik_evaluations: usize,
    solution: OdeSolution<f64>,
    chart: Chart,
}

impl BoundaryCurve {
    fn build(sol: OdeSolution<f64>, chart: Chart, spec: &RegionSpec, center_u: &[f64], counts: (usize, usize)) -> Self {
        let samples: Vec<Vec<f64>> = sol.ys.iter().map(|u| chart.to_theta(u)).collect();
        let mut curve = BoundaryCurve {
            level: spec.level,
            dof: spec.dof,
            threshold: spec.threshold,
            ell_mle: spec.ell_mle,
            arc: sol.ts.clone(),
            samples,
            closure_defect: 0.0,
            winding: 0.0,
            grad_evaluations: counts.0,
            loglik_evaluations: counts.1,
            solution: sol,
            chart,
        };
        curve.closure_defect = closure_defect(&curve);
        let fine = 4 * curve.samples.len().max(16);
        let mut total = 0.0;
        let mut prev: Option<f64> = None;
        for i in 0..=fine {
            let u = curve.solution.eval_values(curve.length() * i as f64 / fine as f64);
            let ang = (u[1] - center_u[1]).atan2(u[0] - center_u[0]);
            if let Some(p) = prev {
                let mut d = ang - p;
                while d > PI {
                    d -= 2.0 * PI;
                }
                while d < -PI {
                    d += 2.0 * PI;
                }
                total += d;
            }
            prev = Some(ang);
        }
        curve.winding = total / (2.0 * PI);
        curve
    }

    /// Total arc length in internal units.
    pub fn length(&self) -> f64 {
        self.solution.t_end()
    }

    /// Point at arc-length parameter `s ∈ [0, length]` from the dense interpolant.
    pub fn eval(&self, s: f64) -> Vec<f64> {
        self.chart.to_theta(&self.solution.eval_values(s))
    }

    /// `m` points equally spaced in arc length, starting at the seed; the
    /// closing point is not repeated.
    pub fn resample(&self, m: usize) -> Vec<Vec<f64>> {
        let l = self.length();
        (0..m).map(|i| self.eval(l * i as f64 / m as f64)).collect()
    }

    /// Largest distance between two samples.
    pub fn diameter(&self) -> f64 {
        diameter(&self.samples)
    }

    /// Number of right-hand-side evaluations of the integrator.
    pub fn rhs_evaluations(&self) -> usize {
        self.solution.rhs_evaluations
    }

    pub fn accepted_steps(&self) -> usize {
        self.solution.accepted_steps
    }

    /// Dense point at arc length `s`, pulled back onto the level set by Newton
    /// steps along the gradient.
    ///
    /// The interpolant between accepted steps is one order lower than the
    /// steps themselves; this removes that gap.
    pub fn eval_on_level<D: LogDensity>(&self, density: &D, s: f64) -> Result<Vec<f64>> {
        let dens = Scaled { inner: density, chart: self.chart.clone() };
        let u = project_level(&dens, self.ell_mle - 0.5 * self.threshold, self.solution.eval_values(s), self.threshold)?;
        Ok(self.chart.to_theta(&u))
    }

    /// Largest `|2(ℓ_MLE − ℓ) − T| / T` over the samples and `refine`
    /// level-projected dense points between consecutive samples.
    pub fn max_level_residual<D: LogDensity>(&self, density: &D, refine: usize) -> Result<f64> {
        self.residual(density, refine, true)
    }

    /// As [`max_level_residual`](Self::max_level_residual), but with the raw
    /// dense interpolant between samples.
    pub fn max_interpolant_residual<D: LogDensity>(&self, density: &D, refine: usize) -> Result<f64> {
        self.residual(density, refine, false)
    }

    fn residual<D: LogDensity>(&self, density: &D, refine: usize, project: bool) -> Result<f64> {
        let mut worst = 0.0f64;
        let ts = &self.arc;
        for w in 0..ts.len() {
            let pts: Vec<f64> = if w + 1 < ts.len() {
                (0..=refine).map(|k| ts[w] + (ts[w + 1] - ts[w]) * k as f64 / (refine + 1) as f64).collect()
            } else {
                vec![ts[w]]
            };
            for (k, s) in pts.into_iter().enumerate() {
                let theta = if project && k > 0 { self.eval_on_level(density, s)? } else { self.eval(s) };
                let stat = lr_stat(self.ell_mle, density.loglik(&theta)?)?;
                worst = worst.max((stat - self.threshold).abs() / self.threshold);
            }
        }
        Ok(worst)
    }

    /// Membership of `theta` in the region enclosed by a planar curve.
    pub fn contains(&self, theta: &[f64]) -> Result<Containment> {
        if self.samples[0].len() != 2 {
            return Err(Error::Input("membership of slice curves is not defined; use the mesh".into()));
        }
        if !(self.closure_defect < 1e-3) {
            return Err(Error::Topology(format!("curve is not closed (defect {:e})", self.closure_defect)));
        }
        polygon_contains(&self.samples, theta)
    }
}

fn diameter(points: &[Vec<f64>]) -> f64 {
    let mut d = 0.0f64;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d = d.max(dist(&points[i], &points[j]));
        }
    }
    d
}

/// Distance between the first and last sample relative to the curve diameter.
pub fn closure_defect(curve: &BoundaryCurve) -> f64 {
    let s = &curve.samples;
    if s.len() < 2 {
        return 0.0;
    }
    let d = diameter(s);
    if d == 0.0 {
        return 0.0;
    }
    dist(&s[0], &s[s.len() - 1]) / d
}

fn check_seed<D: LogDensity>(density: &D, spec: &RegionSpec, seed: &[f64]) -> Result<()> {
    let stat = spec.stat(density.loglik(seed)?)?;
    if (stat - spec.threshold).abs() > 1e-6 * spec.threshold {
        return Err(Error::Input(format!(
            "seed is not on the boundary: statistic {stat} vs threshold {}",
            spec.threshold
        )));
    }
    Ok(())
}

fn map_singular(e: Error, chart: &Chart) -> Error {
    match e {
        Error::SingularGradient { theta } if !theta.is_empty() => Error::SingularGradient { theta: chart.to_theta(&theta) },
        other => other,
    }
}

/// Traces the closed boundary curve of a two-parameter density through `seed`.
pub fn trace_boundary_2d<D: LogDensity>(
    density: &D,
    spec: &RegionSpec,
    seed: &[f64],
    opts: &TraceOptions,
) -> Result<BoundaryCurve> {
    if density.dim() != 2 || spec.dim() != 2 || seed.len() != 2 {
        return Err(Error::Shape("two-dimensional tracing needs a 2-parameter density and seed".into()));
    }
    let counted = Counted::new(density);
    check_seed(&counted, spec, seed)?;
    let scale = auto_scale(&counted, spec, seed, opts)?;
    let chart = Chart { center: spec.center.clone(), scale, fixed: None };
    let dens = Scaled { inner: &counted, chart: chart.clone() };
    let u0 = chart.to_u(seed);
    let sol = trace_core(&dens, spec.target(), &u0, opts).map_err(|e| map_singular(e, &chart))?;
    Ok(BoundaryCurve::build(
        sol,
        chart,
        spec,
        &[0.0, 0.0],
        (counted.gradient_calls(), counted.loglik_calls()),
    ))
}

/// Options for three-dimensional meshing.
#[derive(Clone, Debug)]
pub struct MeshOptions {
    pub trace: TraceOptions,
    /// Number of slicing levels in `θ₃`.
    pub slices: usize,
    /// Vertices per slice ring.
    pub ring_points: usize,
}

impl Default for MeshOptions {
    fn default() -> Self {
        MeshOptions { trace: TraceOptions::default(), slices: 24, ring_points: 64 }
    }
}

/// Triangulated-quad surface of a three-dimensional boundary.
#[derive(Clone, Debug)]
pub struct BoundaryMesh {
    pub level: ConfidenceLevel,
    pub dof: usize,
    pub threshold: f64,
    pub ell_mle: f64,
    pub vertices: Vec<Vec<f64>>,
    /// Quads between rings and triangles at the caps, as vertex indices.
    pub faces: Vec<Vec<usize>>,
    pub slices: Vec<BoundaryCurve>,
    pub slice_axis: usize,
    pub slice_values: Vec<f64>,
    /// Extreme points of the region along the slicing axis (low, high).
    pub caps: [Vec<f64>; 2],
    pub grad_evaluations: usize,
    pub loglik_evaluations: usize,
}

impl BoundaryMesh {
    /// Axis-aligned extent of the vertices, per parameter.
    pub fn extents(&self) -> Vec<(f64, f64)> {
        (0..3)
            .map(|i| {
                self.vertices
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v[i]), hi.max(v[i])))
            })
            .collect()
    }

    /// Largest `|2(ℓ_MLE − ℓ) − T| / T` over the vertices.
    pub fn max_level_residual<D: LogDensity>(&self, density: &D) -> Result<f64> {
        let mut worst = 0.0f64;
        for v in &self.vertices {
            let stat = lr_stat(self.ell_mle, density.loglik(v)?)?;
            worst = worst.max((stat - self.threshold).abs() / self.threshold);
        }
        Ok(worst)
    }

    pub fn triangles(&self) -> Vec<[usize; 3]> {
        triangulate(&self.faces)
    }

    pub fn contains(&self, theta: &[f64]) -> Result<Containment> {
        mesh_contains(&self.vertices, &self.faces, theta)
    }

    /// Outline of the projection onto parameters `(i, j)`, sampled along `rays`
    /// equally spaced directions from the centroid of the projected vertices.
    ///
    /// Directions are spaced in coordinates whitened by the vertex covariance,
    /// and each ray keeps its farthest crossing with a projected face edge.
    pub fn shadow(&self, i: usize, j: usize, rays: usize) -> Result<Vec<[f64; 2]>> {
        if i >= 3 || j >= 3 || i == j || rays < 3 {
            return Err(Error::Input("shadow needs two distinct axes and at least three rays".into()));
        }
        let proj: Vec<[f64; 2]> = self.vertices.iter().map(|v| [v[i], v[j]]).collect();
        let w = Whitening::of(&proj)?;
        let pts: Vec<[f64; 2]> = proj.iter().map(|p| w.forward(*p)).collect();
        let tris = self.triangles();
        let mut out = Vec::with_capacity(rays);
        for k in 0..rays {
            let a = 2.0 * PI * k as f64 / rays as f64;
            let (ux, uy) = (a.cos(), a.sin());
            let mut reach = 0.0f64;
            for t in &tris {
                for e in 0..3 {
                    let (p, q) = (pts[t[e]], pts[t[(e + 1) % 3]]);
                    let (ex, ey) = (q[0] - p[0], q[1] - p[1]);
                    let det = ey * ux - ex * uy;
                    if det.abs() < 1e-300 {
                        continue;
                    }
                    let along = (ey * p[0] - ex * p[1]) / det;
                    let frac = (uy * p[0] - ux * p[1]) / det;
                    if (0.0..=1.0).contains(&frac) && along > reach {
                        reach = along;
                    }
                }
            }
            out.push(w.inverse([reach * ux, reach * uy]));
        }
        Ok(out)
    }
}

struct Whitening {
    mean: [f64; 2],
    l: [f64; 3],
}

impl Whitening {
    fn of(points: &[[f64; 2]]) -> Result<Self> {
        let n = points.len() as f64;
        let mean = [
            points.iter().map(|p| p[0]).sum::<f64>() / n,
            points.iter().map(|p| p[1]).sum::<f64>() / n,
        ];
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for p in points {
            let (a, b) = (p[0] - mean[0], p[1] - mean[1]);
            sxx += a * a;
            sxy += a * b;
            syy += b * b;
        }
        let l11 = (sxx / n).sqrt();
        let l21 = sxy / n / l11;
        let l22 = (syy / n - l21 * l21).sqrt();
        if !(l11 > 0.0 && l22 > 0.0) {
            return Err(Error::Input("points are collinear".into()));
        }
        Ok(Whitening { mean, l: [l11, l21, l22] })
    }

    fn forward(&self, p: [f64; 2]) -> [f64; 2] {
        let a = (p[0] - self.mean[0]) / self.l[0];
        [a, (p[1] - self.mean[1] - self.l[1] * a) / self.l[2]]
    }

    fn inverse(&self, q: [f64; 2]) -> [f64; 2] {
        [self.mean[0] + self.l[0] * q[0], self.mean[1] + self.l[1] * q[0] + self.l[2] * q[1]]
    }
}

/// Largest relative radial gap between a closed outline and its least-squares
/// ellipse, measured from the centroid in whitened coordinates.
///
/// Zero for any outline sampled from an ellipse; invariant under affine maps.
pub fn ellipse_deviation(outline: &[[f64; 2]]) -> Result<f64> {
    if outline.len() < 6 {
        return Err(Error::Input("ellipse fit needs at least six points".into()));
    }
    let w = Whitening::of(outline)?;
    let pts: Vec<[f64; 2]> = outline.iter().map(|p| w.forward(*p)).collect();
    let a = DMatrix::from_fn(pts.len(), 5, |r, c| {
        let [x, y] = pts[r];
        [x * x, x * y, y * y, x, y][c]
    });
    let b = nalgebra::DVector::from_element(pts.len(), 1.0);
    let c = a.svd(true, true).solve(&b, 1e-14).map_err(|e| Error::Input(e.into()))?;
    let mut worst = 0.0f64;
    for [x, y] in pts {
        let r = x.hypot(y);
        if r == 0.0 {
            return Err(Error::Input("outline passes through its centroid".into()));
        }
        let (ux, uy) = (x / r, y / r);
        let qa = c[0] * ux * ux + c[1] * ux * uy + c[2] * uy * uy;
        let qb = c[3] * ux + c[4] * uy;
        let disc = qb * qb + 4.0 * qa;
        if qa <= 0.0 || disc < 0.0 {
            return Ok(f64::INFINITY);
        }
        let fitted = (-qb + disc.sqrt()) / (2.0 * qa);
        worst = worst.max((r - fitted).abs() / fitted);
    }
    Ok(worst)
}

/// Traces a three-parameter boundary as a stack of `θ₃` slices.
///
/// `seed` must lie on the boundary; a point on the positive `θ₁` ray from the
/// centre is used when `None`.
pub fn trace_boundary_3d<D: LogDensity + Sync>(
    density: &D,
    spec: &RegionSpec,
    seed: Option<&[f64]>,
    opts: &MeshOptions,
) -> Result<BoundaryMesh> {
    if density.dim() != 3 || spec.dim() != 3 {
        return Err(Error::Shape("surface meshing needs a 3-parameter density".into()));
    }
    if opts.slices < 2 || opts.ring_points < 3 {
        return Err(Error::Input("need at least 2 slices and 3 points per ring".into()));
    }
    let counted = Counted::new(density);
    let seed = match seed {
        Some(s) => {
            check_seed(&counted, spec, s)?;
            s.to_vec()
        }
        None => find_boundary_point(&counted, spec, &[1.0, 0.0, 0.0], 1e12)?,
    };
    let scale = auto_scale(&counted, spec, &seed, &opts.trace)?;
    let chart = Chart { center: spec.center.clone(), scale, fixed: None };
    let dens = Scaled { inner: &counted, chart: chart.clone() };
    let target = spec.target();
    let fit_opts = FitOptions { gtol: 1e-10, ..Default::default() };

    // Extremes of u₃ over the region from the profile likelihood.
    let profile = |c: f64, warm: &[f64]| -> Result<FitResult> {
        let mut start = warm.to_vec();
        start[2] = c;
        maximize_density(&dens, &start, &[(2, c)], &fit_opts)
    };
    let mut caps: Vec<(f64, Vec<f64>)> = Vec::new();
    for sign in [-1.0, 1.0] {
        let dom = dens.domain();
        let mut warm = vec![0.0; 3];
        let mut inner = (0.0, -spec.threshold);
        let mut c = sign;
        let mut outer = None;
        for _ in 0..80 {
            if c <= dom.lower[2] || c >= dom.upper[2] {
                return Err(Error::DomainTruncation {
                    theta: chart.to_theta(&[warm[0], warm[1], c]),
                    stat: inner.1 + spec.threshold,
                    threshold: spec.threshold,
                });
            }
            let p = profile(c, &warm)?;
            let fc = spec.stat(p.loglik_at_mle)? - spec.threshold;
            if fc >= 0.0 {
                outer = Some((c, fc));
                break;
            }
            inner = (c, fc);
            warm = p.theta_mle;
            c *= 1.5;
        }
        let Some(outer) = outer else {
            let mut d = vec![0.0; 3];
            d[2] = sign;
            return Err(Error::PracticalNonIdentifiability { direction: d });
        };
        let warm_cell = std::cell::RefCell::new(warm);
        let f = |c: f64| -> Result<f64> {
            let p = profile(c, &warm_cell.borrow())?;
            let v = spec.stat(p.loglik_at_mle)? - spec.threshold;
            *warm_cell.borrow_mut() = p.theta_mle;
            Ok(v)
        };
        let (c_ext, _) = bracket_root(f, inner, outer, 1e-11 * spec.threshold, 1e-14)?;
        let p = profile(c_ext, &warm_cell.borrow())?;
        caps.push((c_ext, p.theta_mle));
    }
    let (c_lo, c_hi) = (caps[0].0, caps[1].0);
    let m = opts.slices;
    let mid = 0.5 * (c_lo + c_hi);
    let half = 0.5 * (c_hi - c_lo);
    let levels: Vec<f64> = (0..m).map(|j| mid - half * (PI * (j as f64 + 0.5) / m as f64).cos()).collect();

    // Transverse sweep with dθ₃/dt = 1 along the surface.
    let u_seed = chart.to_u(&seed);
    let sweep_rhs = |_t: f64, u: &[f64], du: &mut [f64]| -> Result<()> {
        let (_, g) = dens.value_and_gradient(u)?;
        let gn = norm(&g);
        if !(gn > 0.0) {
            return Err(Error::SingularGradient { theta: u.to_vec() });
        }
        let n3 = g[2] / gn;
        let denom = 1.0 - n3 * n3;
        if denom < 1e-12 {
            return Err(Error::SingularGradient { theta: u.to_vec() });
        }
        for i in 0..3 {
            let e = if i == 2 { 1.0 } else { 0.0 };
            du[i] = (e - n3 * g[i] / gn) / denom;
        }
        Ok(())
    };
    let ode_opts = opts.trace.ode();
    let sweep_hi = ode::integrate(sweep_rhs, &u_seed, (u_seed[2], levels[m - 1]), &ode_opts, &mut [])
        .map_err(|e| map_singular(e, &chart))?;
    let sweep_lo = ode::integrate(sweep_rhs, &u_seed, (u_seed[2], levels[0]), &ode_opts, &mut [])
        .map_err(|e| map_singular(e, &chart))?;
    let in_range = |c: f64, sol: &OdeSolution<f64>| {
        let (a, b) = (sol.t_start().min(sol.t_end()), sol.t_start().max(sol.t_end()));
        c >= a && c <= b
    };
    let slice_seeds: Vec<Vec<f64>> = levels
        .iter()
        .map(|&c| {
            let sol = if in_range(c, &sweep_hi) { &sweep_hi } else { &sweep_lo };
            let mut u = sol.eval_values(c);
            u[2] = c;
            u
        })
        .collect();

    let sweep_counts = (counted.gradient_calls(), counted.loglik_calls());
    let traced: Vec<Result<(BoundaryCurve, Vec<Vec<f64>>)>> = parallel::install(|| {
        levels
            .par_iter()
            .zip(slice_seeds.par_iter())
            .enumerate()
            .map(|(j, (&c, s))| {
                let level_chart = Chart { fixed: Some((2, c)), ..chart.clone() };
                let local = Counted::new(&density);
                let sl = Scaled { inner: &local, chart: level_chart.clone() };
                let u = project_level(&sl, target, vec![s[0], s[1]], spec.threshold)?;
                let center = maximize_density(&sl, &[0.0, 0.0], &[], &fit_opts)?.theta_mle;
                // Re-centre and rescale so that tolerances are relative to the slice size.
                let r = dist(&u, &center).max(1e-300);
                let slice_chart = Chart {
                    center: level_chart.to_theta(&center),
                    scale: chart.scale.iter().map(|v| v * r).collect(),
                    fixed: Some((2, 0.0)),
                };
                let sd = Scaled { inner: &local, chart: slice_chart.clone() };
                let u0 = slice_chart.to_u(&level_chart.to_theta(&u));
                let sol = trace_core(&sd, target, &u0, &opts.trace)
                    .map_err(|e| map_singular(e, &slice_chart))
                    .map_err(|e| match e {
                        Error::NotClosed(msg) => Error::NotClosed(format!("slice {j} (truncated): {msg}")),
                        other => other,
                    })?;
                let ring_theta = ring_points(&sol, opts.ring_points)
                    .into_iter()
                    .map(|p| Ok(slice_chart.to_theta(&project_level(&sd, target, p, spec.threshold)?)))
                    .collect::<Result<Vec<_>>>()?;
                let curve = BoundaryCurve::build(
                    sol,
                    slice_chart,
                    spec,
                    &[0.0, 0.0],
                    (local.gradient_calls(), local.loglik_calls()),
                );
                Ok((curve, ring_theta))
            })
            .collect()
    });
    let mut slices = Vec::with_capacity(m);
    let mut rings = Vec::with_capacity(m);
    for t in traced {
        let (c, r) = t?;
        slices.push(c);
        rings.push(r);
    }

    let k = opts.ring_points;
    let mut vertices = Vec::with_capacity(m * k + 2);
    let cap_lo = chart.to_theta(&caps[0].1);
    let cap_hi = chart.to_theta(&caps[1].1);
    vertices.push(cap_lo.clone());
    for r in &rings {
        vertices.extend(r.iter().cloned());
    }
    vertices.push(cap_hi.clone());
    let top = vertices.len() - 1;
    let idx = |j: usize, i: usize| 1 + j * k + (i % k);
    let mut faces = Vec::new();
    for i in 0..k {
        faces.push(vec![0, idx(0, i + 1), idx(0, i)]);
    }
    for j in 0..m - 1 {
        for i in 0..k {
            faces.push(vec![idx(j, i), idx(j, i + 1), idx(j + 1, i + 1), idx(j + 1, i)]);
        }
    }
    for i in 0..k {
        faces.push(vec![top, idx(m - 1, i), idx(m - 1, i + 1)]);
    }
    let slice_grads: usize = slices.iter().map(|s| s.grad_evaluations).sum();
    let slice_logliks: usize = slices.iter().map(|s| s.loglik_evaluations).sum();
    Ok(BoundaryMesh {
        level: spec.level,
        dof: spec.dof,
        threshold: spec.threshold,
        ell_mle: spec.ell_mle,
        vertices,
        faces,
        slice_axis: 2,
        slice_values: levels.iter().map(|c| chart.center[2] + chart.scale[2] * c).collect(),
        slices,
        caps: [cap_lo, cap_hi],
        grad_evaluations: sweep_counts.0 + slice_grads,
        loglik_evaluations: sweep_counts.1 + slice_logliks,
    })
}

/// Newton iteration along the gradient onto `ℓ = target`.
fn project_level<D: LogDensity>(dens: &D, target: f64, mut u: Vec<f64>, threshold: f64) -> Result<Vec<f64>> {
    for _ in 0..50 {
        let (ell, g) = dens.value_and_gradient(&u)?;
        let r = ell - target;
        if r.abs() <= 1e-13 * threshold {
            break;
        }
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if !(gg > 0.0) {
            return Err(Error::SingularGradient { theta: Vec::new() });
        }
        for (ui, gi) in u.iter_mut().zip(&g) {
            *ui -= r / gg * gi;
        }
    }
    Ok(u)
}

/// `k` points equally spaced in arc length, starting at the largest first
/// coordinate so that rings of neighbouring slices line up.
fn ring_points(sol: &OdeSolution<f64>, k: usize) -> Vec<Vec<f64>> {
    let l = sol.t_end();
    let fine = 16 * k;
    let start = (0..fine)
        .map(|i| l * i as f64 / fine as f64)
        .max_by(|&a, &b| sol.eval_values(a)[0].total_cmp(&sol.eval_values(b)[0]))
        .unwrap_or(0.0);
    (0..k)
        .map(|i| {
            let s = (start + l * i as f64 / k as f64) % l;
            sol.eval_values(s)
        })
        .collect()
}

/// Confidence interval of a one-parameter density.
#[derive(Clone, Debug)]
pub struct BoundaryInterval {
    pub level: ConfidenceLevel,
    pub dof: usize,
    pub threshold: f64,
    pub lower: f64,
    pub upper: f64,
}

impl BoundaryInterval {
    pub fn contains(&self, theta: &[f64]) -> Result<Containment> {
        let t = theta[0];
        let tol = 1e-9;
        Ok(if (t - self.lower).abs() <= tol || (t - self.upper).abs() <= tol {
            Containment::Boundary
        } else if t > self.lower && t < self.upper {
            Containment::Inside
        } else {
            Containment::Outside
        })
    }
}

pub fn trace_interval<D: LogDensity>(density: &D, spec: &RegionSpec) -> Result<BoundaryInterval> {
    if density.dim() != 1 || spec.dim() != 1 {
        return Err(Error::Shape("interval needs a one-parameter density".into()));
    }
    let lo = find_boundary_point(density, spec, &[-1.0], 1e12)?;
    let hi = find_boundary_point(density, spec, &[1.0], 1e12)?;
    Ok(BoundaryInterval {
        level: spec.level,
        dof: spec.dof,
        threshold: spec.threshold,
        lower: lo[0],
        upper: hi[0],
    })
}

/// A boundary of any supported dimension.
#[derive(Clone, Debug)]
pub enum Boundary {
    Interval(BoundaryInterval),
    Curve(BoundaryCurve),
    Mesh(BoundaryMesh),
}

impl Boundary {
    pub fn level(&self) -> ConfidenceLevel {
        match self {
            Boundary::Interval(b) => b.level,
            Boundary::Curve(b) => b.level,
            Boundary::Mesh(b) => b.level,
        }
    }

    pub fn contains(&self, theta: &[f64]) -> Result<Containment> {
        match self {
            Boundary::Interval(b) => b.contains(theta),
            Boundary::Curve(b) => b.contains(theta),
            Boundary::Mesh(b) => b.contains(theta),
        }
    }

    pub fn grad_evaluations(&self) -> usize {
        match self {
            Boundary::Interval(_) => 0,
            Boundary::Curve(b) => b.grad_evaluations,
            Boundary::Mesh(b) => b.grad_evaluations,
        }
    }

    /// Boundary points in parameter space.
    pub fn points(&self) -> Vec<Vec<f64>> {
        match self {
            Boundary::Interval(b) => vec![vec![b.lower], vec![b.upper]],
            Boundary::Curve(b) => b.samples.clone(),
            Boundary::Mesh(b) => b.vertices.clone(),
        }
    }
}

/// Traces the boundary of a 1-, 2- or 3-parameter density.
pub fn trace_region<D: LogDensity + Sync>(
    density: &D,
    spec: &RegionSpec,
    seed: Option<&[f64]>,
    opts: &MeshOptions,
) -> Result<Boundary> {
    match spec.dim() {
        1 => Ok(Boundary::Interval(trace_interval(density, spec)?)),
        2 => {
            let s = match seed {
                Some(s) => s.to_vec(),
                None => find_boundary_point(density, spec, &[1.0, 0.0], 1e12)?,
            };
            Ok(Boundary::Curve(trace_boundary_2d(density, spec, &s, &opts.trace)?))
        }
        3 => Ok(Boundary::Mesh(trace_boundary_3d(density, spec, seed, opts)?)),
        n => Err(Error::Input(format!(
            "boundaries of {n}-parameter regions are traced per slice; fix parameters to reach 3 or fewer"
        ))),
    }
}

/// Result of a membership test.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Containment {
    Inside,
    Outside,
    /// Within `1e-9` of the boundary.
    Boundary,
}

impl Containment {
    pub fn is_inside(self) -> bool {
        self == Containment::Inside
    }
}

fn segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let ap: Vec<f64> = a.iter().zip(p).map(|(x, y)| y - x).collect();
    let l2: f64 = ab.iter().map(|v| v * v).sum();
    let t = if l2 > 0.0 {
        (ab.iter().zip(&ap).map(|(u, v)| u * v).sum::<f64>() / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q: Vec<f64> = a.iter().zip(&ab).map(|(x, d)| x + t * d).collect();
    dist(p, &q)
}

/// Winding-number membership for a closed polygon (implicitly closed).
pub fn polygon_contains(points: &[Vec<f64>], theta: &[f64]) -> Result<Containment> {
    if points.len() < 3 {
        return Err(Error::Topology("a polygon needs at least three vertices".into()));
    }
    if theta.len() != 2 || points.iter().any(|p| p.len() != 2) {
        return Err(Error::Shape("polygon membership is two-dimensional".into()));
    }
    let n = points.len();
    let mut wn = 0i64;
    for i in 0..n {
        let a = &points[i];
        let b = &points[(i + 1) % n];
        if segment_distance(theta, a, b) <= 1e-9 {
            return Ok(Containment::Boundary);
        }
        let cross = (b[0] - a[0]) * (theta[1] - a[1]) - (theta[0] - a[0]) * (b[1] - a[1]);
        if a[1] <= theta[1] {
            if b[1] > theta[1] && cross > 0.0 {
                wn += 1;
            }
        } else if b[1] <= theta[1] && cross < 0.0 {
            wn -= 1;
        }
    }
    Ok(if wn != 0 { Containment::Inside } else { Containment::Outside })
}

fn triangulate(faces: &[Vec<usize>]) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for f in faces {
        for i in 1..f.len().saturating_sub(1) {
            out.push([f[0], f[i], f[i + 1]]);
        }
    }
    out
}

fn sub(a: &[f64], b: &[f64]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn triangle_distance(p: &[f64], a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let nrm = cross(ab, ac);
    let nn = dot(nrm, nrm);
    if nn > 0.0 {
        let ap = sub(p, a);
        let d = dot(ap, nrm) / nn;
        let q = [p[0] - d * nrm[0], p[1] - d * nrm[1], p[2] - d * nrm[2]];
        let inside = [(a, b), (b, c), (c, a)].iter().all(|(u, v)| dot(cross(sub(v, u), sub(&q, u)), nrm) >= 0.0);
        if inside {
            return dist(p, &q);
        }
    }
    segment_distance(p, a, b).min(segment_distance(p, b, c)).min(segment_distance(p, c, a))
}

/// Ray-parity membership for a closed triangulated or quad surface.
pub fn mesh_contains(vertices: &[Vec<f64>], faces: &[Vec<usize>], theta: &[f64]) -> Result<Containment> {
    if theta.len() != 3 || vertices.iter().any(|v| v.len() != 3) {
        return Err(Error::Shape("mesh membership is three-dimensional".into()));
    }
    if faces.iter().flatten().any(|&i| i >= vertices.len()) {
        return Err(Error::Topology("face references a missing vertex".into()));
    }
    let tris = triangulate(faces);
    let mut edges = std::collections::HashMap::new();
    for t in &tris {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            *edges.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
        }
    }
    if tris.is_empty() || edges.values().any(|&c| c != 2) {
        return Err(Error::Topology("mesh is not watertight".into()));
    }
    for t in &tris {
        if triangle_distance(theta, &vertices[t[0]], &vertices[t[1]], &vertices[t[2]]) <= 1e-9 {
            return Ok(Containment::Boundary);
        }
    }
    let dirs = [
        [0.5773, 0.5774, 0.5776],
        [0.2672, -0.5345, 0.8017],
        [-0.8729, 0.2182, 0.4364],
        [0.1, 0.9, -0.42],
    ];
    'ray: for d in dirs {
        let mut hits = 0usize;
        for t in &tris {
            let (a, b, c) = (&vertices[t[0]], &vertices[t[1]], &vertices[t[2]]);
            let e1 = sub(b, a);
            let e2 = sub(c, a);
            let p = cross(d, e2);
            let det = dot(e1, p);
            let scale = dot(e1, e1).sqrt() * dot(e2, e2).sqrt();
            if det.abs() < 1e-14 * scale {
                continue;
            }
            let s = sub(theta, a);
            let u = dot(s, p) / det;
            let q = cross(s, e1);
            let v = dot(d, q) / det;
            let tt = dot(e2, q) / det;
            let eps = 1e-10;
            if tt > 0.0 && u > -eps && v > -eps && u + v < 1.0 + eps {
                if u.abs() < eps || v.abs() < eps || (u + v - 1.0).abs() < eps {
                    // Grazes an edge; try another direction.
                    continue 'ray;
                }
                hits += 1;
            }
        }
        return Ok(if hits % 2 == 1 { Containment::Inside } else { Containment::Outside });
    }
    Err(Error::Topology("every probe ray grazed a mesh edge".into()))
}

/// Writes points as CSV with the given column names.
pub fn write_points_csv<W: Write>(w: W, names: &[String], points: &[Vec<f64>]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(names)?;
    for p in points {
        if p.len() != names.len() {
            return Err(Error::Shape("point dimension differs from the column count".into()));
        }
        wr.write_record(p.iter().map(|v| format!("{v:.17e}")))?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes mesh faces as CSV rows of vertex indices (`v0,v1,v2,v3`; triangles
/// leave `v3` empty).
pub fn write_faces_csv<W: Write>(w: W, faces: &[Vec<usize>]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["v0", "v1", "v2", "v3"])?;
    for f in faces {
        let mut row: Vec<String> = f.iter().map(|i| i.to_string()).collect();
        row.resize(4, String::new());
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{Scalar, ScalarFn};
    use crate::model::FnDensity;

    struct Sphere(usize);
    impl ScalarFn for Sphere {
        fn eval<S: Scalar>(&self, t: &[S]) -> Result<S> {
            let mut s = S::from_f64(0.0);
            for v in t.iter().take(self.0) {
                s += *v * *v;
            }
            Ok(s * -0.5)
        }
    }

    #[test]
    fn lr_stat_values() {
        assert_eq!(lr_stat(-3.0, -3.0).unwrap(), 0.0);
        assert_eq!(lr_stat(-3.0, -4.0).unwrap(), 2.0);
        assert_eq!(lr_stat(-3.0, -3.0 + 1e-12).unwrap(), 0.0);
        assert!(matches!(lr_stat(-3.0, -2.0), Err(Error::BetterPointFound { .. })));
    }

    #[test]
    fn field_examples() {
        let x = orth_vector_field(&[3.0, 4.0], &AlphaVector::pair(2, 0, 1).unwrap()).unwrap();
        assert_eq!(x, vec![4.0, -3.0]);
        let a = AlphaVector::new(vec![1.0, 0.0, -1.0]).unwrap();
        assert_eq!(orth_vector_field(&[1.0, 2.0, 3.0], &a).unwrap(), vec![6.0, 0.0, -2.0]);
        assert!(AlphaVector::new(vec![1.0, 1.0]).is_err());
        assert!(orth_vector_field(&[0.0, 0.0], &AlphaVector::pair(2, 0, 1).unwrap()).is_err());
    }

    #[test]
    fn degenerate_partial_falls_back() {
        let a = AlphaVector::new(vec![1.0, -2.0, 1.0]).unwrap();
        let g = [0.0, 2.0, 1.0];
        let x = orth_vector_field(&g, &a).unwrap();
        assert!(norm(&x) > 0.0);
        let d: f64 = x.iter().zip(&g).map(|(a, b)| a * b).sum();
        assert!(d.abs() < 1e-12 * norm(&x) * norm(&g));
    }

    #[test]
    fn circle_trace() {
        let d = FnDensity::new(Sphere(2), 2);
        let level = ConfidenceLevel::from_sigma(1.0).unwrap();
        let spec = RegionSpec::new(vec![0.0, 0.0], 0.0, level, 2).unwrap();
        let seed = find_boundary_point(&d, &spec, &[1.0, 1.0], 1e6).unwrap();
        let r = spec.threshold.sqrt();
        assert!((norm(&seed) - r).abs() < 1e-9);
        let c = trace_boundary_2d(&d, &spec, &seed, &TraceOptions::with_rtol(1e-10)).unwrap();
        assert!(c.closure_defect < 1e-8, "{}", c.closure_defect);
        assert!((c.winding - 1.0).abs() < 1e-3);
        for p in &c.samples {
            assert!((norm(p) - r).abs() < 1e-8 * r);
        }
        assert!(c.contains(&[0.0, 0.0]).unwrap().is_inside());
        assert_eq!(c.contains(&[2.0 * seed[0], 2.0 * seed[1]]).unwrap(), Containment::Outside);
    }

    #[test]
    fn sphere_mesh() {
        let d = FnDensity::new(Sphere(3), 3);
        let level = ConfidenceLevel::from_sigma(1.0).unwrap();
        let spec = RegionSpec::new(vec![0.0; 3], 0.0, level, 3).unwrap();
        let opts = MeshOptions { trace: TraceOptions::with_rtol(1e-8), slices: 8, ring_points: 24 };
        let m = trace_boundary_3d(&d, &spec, None, &opts).unwrap();
        let r = spec.threshold.sqrt();
        for v in &m.vertices {
            assert!((norm(v) - r).abs() < 10.0 * 1e-8 * r, "{}", norm(v) - r);
        }
        assert!(m.contains(&[0.0; 3]).unwrap().is_inside());
        assert_eq!(m.contains(&[0.0, 0.0, 2.0 * r]).unwrap(), Containment::Outside);
        assert!(m.faces.iter().flatten().all(|&i| i < m.vertices.len()));
        let outline = m.shadow(0, 1, 180).unwrap();
        assert!(outline.iter().all(|p| p[0].hypot(p[1]) <= r * (1.0 + 1e-6)));
        assert!(ellipse_deviation(&outline).unwrap() < 0.02);
    }

    #[test]
    fn ellipse_deviation_of_ellipse_vanishes() {
        let pts: Vec<[f64; 2]> = (0..50)
            .map(|k| {
                let a = 0.3 + k as f64 * 0.12;
                let (x, y) = (3.0 * a.cos(), 0.5 * a.sin());
                [1.0 + 0.8 * x - 0.6 * y, -2.0 + 0.6 * x + 0.8 * y]
            })
            .collect();
        assert!(ellipse_deviation(&pts).unwrap() < 1e-10);
        let kidney: Vec<[f64; 2]> = (0..90)
            .map(|k| {
                let a = k as f64 * 2.0 * PI / 90.0;
                let r = 1.0 + 0.3 * (2.0 * a).cos().powi(3);
                [r * a.cos(), r * a.sin()]
            })
            .collect();
        assert!(ellipse_deviation(&kidney).unwrap() > 0.05);
    }

    #[test]
    fn unbounded_direction() {
        struct Flat;
        impl ScalarFn for Flat {
            fn eval<S: Scalar>(&self, t: &[S]) -> Result<S> {
                Ok(t[0] * t[0] * -0.5)
            }
        }
        let d = FnDensity::new(Flat, 2);
        let spec = RegionSpec::new(vec![0.0, 0.0], 0.0, ConfidenceLevel::from_sigma(1.0).unwrap(), 2).unwrap();
        assert!(matches!(
            find_boundary_point(&d, &spec, &[0.0, 1.0], 1e6),
            Err(Error::PracticalNonIdentifiability { .. })
        ));
    }

    #[test]
    fn domain_truncation() {
        let d = FnDensity::new(Sphere(2), 2)
            .with_domain(ParamDomain::new(vec![-0.5, f64::NEG_INFINITY], vec![f64::INFINITY; 2]).unwrap());
        let spec = RegionSpec::new(vec![0.0, 0.0], 0.0, ConfidenceLevel::from_sigma(1.0).unwrap(), 2).unwrap();
        assert!(matches!(
            find_boundary_point(&d, &spec, &[-1.0, 0.0], 1e6),
            Err(Error::DomainTruncation { .. })
        ));
    }

    #[test]
    fn polygon_membership() {
        let sq = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]];
        assert_eq!(polygon_contains(&sq, &[0.5, 0.5]).unwrap(), Containment::Inside);
        assert_eq!(polygon_contains(&sq, &[1.5, 0.5]).unwrap(), Containment::Outside);
        assert_eq!(polygon_contains(&sq, &[1.0, 0.5]).unwrap(), Containment::Boundary);
        assert!(polygon_contains(&sq[..2], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn open_mesh_rejected() {
        let v = vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        assert!(matches!(mesh_contains(&v, &[vec![0, 1, 2]], &[0.1, 0.1, 0.1]), Err(Error::Topology(_))));
    }

    #[test]
    fn csv_output() {
        let mut buf = Vec::new();
        write_points_csv(&mut buf, &["a".into(), "b".into()], &[vec![1.0, 2.0]]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("a,b\n1.0"));
        let mut buf = Vec::new();
        write_faces_csv(&mut buf, &[vec![0, 1, 2], vec![0, 1, 2, 3]]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "v0,v1,v2,v3\n0,1,2,\n0,1,2,3\n");
    }
}
