//! Probability utilities: the Gaussian likelihood, χ² quantiles and
//! σ-level conversions, and the log-density contract used by the boundary
//! tracer.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::diff::Scalar;
use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// A log-likelihood ℓ(θ) on a parameter domain, with its gradient.
///
/// Implementations must be deterministic and twice differentiable on the
/// interior of [`LogDensity::domain`].
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    fn loglik(&self, theta: &[f64]) -> Result<f64>;
    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>>;

    /// `(ℓ(θ), ∇ℓ(θ))`; implementations may share one pass.
    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.loglik(theta)?, self.gradient(theta)?))
    }

    fn domain(&self) -> crate::model::ParamDomain {
        crate::model::ParamDomain::unbounded(self.dim())
    }
}

impl<D: LogDensity + ?Sized> LogDensity for &D {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn loglik(&self, theta: &[f64]) -> Result<f64> {
        (**self).loglik(theta)
    }
    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        (**self).gradient(theta)
    }
    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        (**self).value_and_gradient(theta)
    }
    fn domain(&self) -> crate::model::ParamDomain {
        (**self).domain()
    }
}

/// Wraps a density and counts log-likelihood and gradient evaluations.
///
/// A combined value-and-gradient call counts as one gradient evaluation.
pub struct Counted<D> {
    pub inner: D,
    loglik_calls: AtomicUsize,
    gradient_calls: AtomicUsize,
}

impl<D: LogDensity> Counted<D> {
    pub fn new(inner: D) -> Self {
        Counted {
            inner,
            loglik_calls: AtomicUsize::new(0),
            gradient_calls: AtomicUsize::new(0),
        }
    }

    pub fn loglik_calls(&self) -> usize {
        self.loglik_calls.load(Ordering::Relaxed)
    }

    pub fn gradient_calls(&self) -> usize {
        self.gradient_calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.loglik_calls.store(0, Ordering::Relaxed);
        self.gradient_calls.store(0, Ordering::Relaxed);
    }
}

impl<D: LogDensity> LogDensity for Counted<D> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn loglik(&self, theta: &[f64]) -> Result<f64> {
        self.loglik_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.loglik(theta)
    }
    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.gradient_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.gradient(theta)
    }
    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.gradient_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.value_and_gradient(theta)
    }
    fn domain(&self) -> crate::model::ParamDomain {
        self.inner.domain()
    }
}

/// A confidence level `q ∈ (0,1)`, optionally remembered in σ-notation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfidenceLevel {
    q: f64,
    sigma: Option<f64>,
}

impl ConfidenceLevel {
    pub fn new(q: f64) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Domain(format!("confidence level {q} not in (0,1)")));
        }
        Ok(ConfidenceLevel { q, sigma: None })
    }

    pub fn from_sigma(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Domain(format!("σ-level {sigma} must be positive")));
        }
        let q = sigma_to_level(sigma);
        if q >= 1.0 {
            return Err(Error::Domain(format!("σ-level {sigma} rounds to q = 1")));
        }
        Ok(ConfidenceLevel {
            q,
            sigma: Some(sigma),
        })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// σ-equivalent of the level (exact if constructed from σ).
    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or_else(|| level_to_sigma(self.q))
    }

    /// Wilks threshold `F_k^{-1}(q)` for `k` degrees of freedom.
    pub fn threshold(&self, dof: usize) -> Result<f64> {
        chisq_quantile(dof, self.q)
    }
}

impl fmt::Display for ConfidenceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sigma {
            Some(s) => write!(f, "{s}sigma"),
            None => write!(f, "{}", self.q),
        }
    }
}

impl FromStr for ConfidenceLevel {
    type Err = Error;

    /// Accepts `1sigma`, `2.73sigma`, `2σ` or a raw probability like `0.95`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let stripped = t
            .strip_suffix("sigma")
            .or_else(|| t.strip_suffix('σ'))
            .or_else(|| t.strip_suffix("sig"));
        match stripped {
            Some(num) => {
                let v: f64 = num
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad σ-level '{s}'")))?;
                ConfidenceLevel::from_sigma(v)
            }
            None => {
                let v: f64 = t
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad confidence level '{s}'")))?;
                ConfidenceLevel::new(v)
            }
        }
    }
}

/// ln Γ(a) for `a > 0`; exact closed forms for integers and half-integers.
pub fn ln_gamma(a: f64) -> f64 {
    let twice = 2.0 * a;
    if twice.fract() == 0.0 && a <= 170.0 {
        let n = twice as u64;
        if n % 2 == 0 {
            // Γ(m) = (m-1)!
            let m = n / 2;
            return (1..m).map(|i| (i as f64).ln()).sum();
        }
        // Γ(m + 1/2) = √π · (2m)! / (4^m m!)
        let m = (n - 1) / 2;
        let mut acc = 0.5 * std::f64::consts::PI.ln();
        for i in 1..=m {
            acc += ((2 * i - 1) as f64 / 2.0).ln();
        }
        return acc;
    }
    lanczos_ln_gamma(a)
}

fn lanczos_ln_gamma(a: f64) -> f64 {
    const G: f64 = 7.0;
    const P: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if a < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * a).sin()).ln() - lanczos_ln_gamma(1.0 - a);
    }
    let x = a - 1.0;
    let mut s = P[0];
    for (i, p) in P.iter().enumerate().skip(1) {
        s += p / (x + i as f64);
    }
    let t = x + G + 0.5;
    LN_SQRT_2PI + (x + 0.5) * t.ln() - t + s.ln()
}

/// Regularized lower incomplete gamma function P(a, x).
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_p_series(a, x)
    } else {
        1.0 - gamma_q_fraction(a, x)
    }
}

/// Regularized upper incomplete gamma function Q(a, x) = 1 − P(a, x).
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_fraction(a, x)
    }
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..10_000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_q_fraction(a: f64, x: f64) -> f64 {
    // Modified Lentz evaluation of the continued fraction for Q(a, x).
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-17 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

pub fn erf(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let p = gamma_p(0.5, x * x);
    if x > 0.0 {
        p
    } else {
        -p
    }
}

/// Complementary error function, accurate in the tails.
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        1.0 + gamma_p(0.5, x * x)
    } else {
        gamma_q(0.5, x * x)
    }
}

/// χ²_k cumulative distribution function.
pub fn chisq_cdf(k: usize, x: f64) -> f64 {
    gamma_p(k as f64 / 2.0, x / 2.0)
}

fn chisq_pdf(k: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let a = k as f64 / 2.0;
    ((a - 1.0) * (x / 2.0).ln() - x / 2.0 - ln_gamma(a)).exp() / 2.0
}

/// Quantile function `F_k^{-1}(q)` of the χ²_k distribution.
///
/// Newton iteration on the regularized incomplete gamma function, safeguarded
/// by a shrinking bisection bracket.
pub fn chisq_quantile(k: usize, q: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("χ² degrees of freedom must be ≥ 1".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("χ² quantile level {q} not in (0,1)")));
    }
    if k == 2 {
        return Ok(-2.0 * (-q).ln_1p());
    }
    let kf = k as f64;
    // Wilson–Hilferty starting point.
    let z = std::f64::consts::SQRT_2 * inverse_erf(2.0 * q - 1.0);
    let c = 2.0 / (9.0 * kf);
    let mut x = (kf * (1.0 - c + z * c.sqrt()).powi(3)).max(1e-8);
    let mut lo = 0.0;
    let mut hi = f64::INFINITY;
    for _ in 0..200 {
        let f = chisq_cdf(k, x) - q;
        if f.abs() < 1e-15 {
            break;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let pdf = chisq_pdf(k, x);
        let mut next = x - f / pdf;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * x.max(1.0) };
        }
        if (next - x).abs() <= 1e-16 * x.max(1e-300) {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x)
}

/// Inverse error function on (−1, 1) by bracketed Newton.
pub fn inverse_erf(y: f64) -> f64 {
    if y <= -1.0 {
        return f64::NEG_INFINITY;
    }
    if y >= 1.0 {
        return f64::INFINITY;
    }
    if y == 0.0 {
        return 0.0;
    }
    let sign = y.signum();
    let y = y.abs();
    // Giles' single-precision approximation as a starting point.
    let w = -((1.0 - y) * (1.0 + y)).ln();
    let mut x = if w < 5.0 {
        let w = w - 2.5;
        let mut p = 2.810_226_36e-08;
        for c in [
            3.432_739_39e-07,
            -3.523_387_7e-06,
            -4.391_506_54e-06,
            0.000_218_580_87,
            -0.001_253_725_03,
            -0.004_177_681_64,
            0.246_640_727,
            1.501_409_41,
        ] {
            p = c + p * w;
        }
        p * y
    } else {
        let w = w.sqrt() - 3.0;
        let mut p = -0.000_200_214_257;
        for c in [
            0.000_100_950_558,
            0.001_349_343_22,
            -0.003_673_428_44,
            0.005_739_507_73,
            -0.007_622_461_3,
            0.009_438_870_47,
            1.001_674_06,
            2.832_976_82,
        ] {
            p = c + p * w;
        }
        p * y
    };
    let two_over_sqrt_pi = 2.0 / std::f64::consts::PI.sqrt();
    for _ in 0..50 {
        // Work with erfc near 1 to keep relative accuracy.
        let f = if y > 0.5 { (1.0 - y) - erfc(x) } else { erf(x) - y };
        let d = two_over_sqrt_pi * (-x * x).exp();
        let step = f / d;
        x -= step;
        if step.abs() <= 1e-16 * x.abs() {
            break;
        }
    }
    sign * x
}

/// `q = erf(s/√2)`: probability mass within `s` standard deviations.
pub fn sigma_to_level(s: f64) -> f64 {
    erf(s / std::f64::consts::SQRT_2)
}

/// Inverse of [`sigma_to_level`].
pub fn level_to_sigma(q: f64) -> f64 {
    std::f64::consts::SQRT_2 * inverse_erf(q)
}

/// Observation covariance: per-point standard deviations or a full matrix.
#[derive(Clone, Debug)]
pub enum Covariance {
    Diagonal(Vec<f64>),
    Full {
        matrix: DMatrix<f64>,
        /// Lower Cholesky factor, Σ = L Lᵀ.
        chol: DMatrix<f64>,
    },
}

impl Covariance {
    pub fn diagonal(sigmas: Vec<f64>) -> Result<Self> {
        if let Some(i) = sigmas.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Input(format!("σ[{i}] = {} must be positive", sigmas[i])));
        }
        Ok(Covariance::Diagonal(sigmas))
    }

    pub fn full(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Shape("covariance must be square".into()));
        }
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-12 * matrix.amax().max(1e-300) {
            return Err(Error::Covariance);
        }
        let chol = matrix
            .clone()
            .cholesky()
            .ok_or(Error::Covariance)?
            .l();
        Ok(Covariance::Full { matrix, chol })
    }

    pub fn len(&self) -> usize {
        match self {
            Covariance::Diagonal(s) => s.len(),
            Covariance::Full { matrix, .. } => matrix.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ln_det(&self) -> f64 {
        match self {
            Covariance::Diagonal(s) => s.iter().map(|v| 2.0 * v.ln()).sum(),
            Covariance::Full { chol, .. } => chol.diagonal().iter().map(|v| 2.0 * v.ln()).sum(),
        }
    }

    /// `L^{-1} r`, so that `‖L^{-1} r‖² = rᵀ Σ^{-1} r`.
    pub fn whiten<S: Scalar>(&self, r: &[S]) -> Vec<S> {
        match self {
            Covariance::Diagonal(s) => r.iter().zip(s).map(|(&ri, &si)| ri / si).collect(),
            Covariance::Full { chol, .. } => {
                let n = r.len();
                let mut out: Vec<S> = Vec::with_capacity(n);
                for i in 0..n {
                    let mut acc = r[i];
                    for (j, o) in out.iter().enumerate() {
                        acc -= *o * chol[(i, j)];
                    }
                    out.push(acc / chol[(i, i)]);
                }
                out
            }
        }
    }

    /// Σ as a dense matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        match self {
            Covariance::Diagonal(s) => DMatrix::from_diagonal(&DVector::from_iterator(
                s.len(),
                s.iter().map(|v| v * v),
            )),
            Covariance::Full { matrix, .. } => matrix.clone(),
        }
    }

    /// Same covariance with every standard deviation multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        match self {
            Covariance::Diagonal(s) => Covariance::diagonal(s.iter().map(|v| v * factor).collect()),
            Covariance::Full { matrix, .. } => Covariance::full(matrix * (factor * factor)),
        }
    }
}

/// Gaussian log-likelihood
/// `−(N/2) ln 2π − ½ ln det Σ − ½ rᵀ Σ⁻¹ r` with `r = y − prediction`.
pub fn gaussian_loglik<S: Scalar>(y: &[f64], prediction: &[S], cov: &Covariance) -> Result<S> {
    if y.len() != prediction.len() || y.len() != cov.len() {
        return Err(Error::Shape(format!(
            "data length {}, prediction length {}, covariance size {}",
            y.len(),
            prediction.len(),
            cov.len()
        )));
    }
    let r: Vec<S> = prediction.iter().zip(y).map(|(&p, &yi)| -p + yi).collect();
    let w = cov.whiten(&r);
    let quad = w.iter().fold(S::from_f64(0.0), |acc, &v| acc + v * v);
    let n = y.len() as f64;
    Ok(quad * -0.5 + (-n * LN_SQRT_2PI - 0.5 * cov.ln_det()))
}

/// Kullback–Leibler divergence between the Gaussian predictive distributions
/// centred on `h_theta` and `h_psi` with shared covariance:
/// `½ (h(θ) − h(ψ))ᵀ Σ⁻¹ (h(θ) − h(ψ))`.
pub fn kl_gaussian<S: Scalar>(h_theta: &[S], h_psi: &[S], cov: &Covariance) -> Result<S> {
    if h_theta.len() != h_psi.len() || h_theta.len() != cov.len() {
        return Err(Error::Shape("KL divergence arguments differ in length".into()));
    }
    let d: Vec<S> = h_theta.iter().zip(h_psi).map(|(&a, &b)| a - b).collect();
    let w = cov.whiten(&d);
    Ok(w.iter().fold(S::from_f64(0.0), |acc, &v| acc + v * v) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_point_loglik() {
        let cov = Covariance::diagonal(vec![1.0]).unwrap();
        let l = gaussian_loglik(&[0.0], &[0.0], &cov).unwrap();
        assert_abs_diff_eq!(l, -0.918_938_533_204_672_7, epsilon = 1e-15);
    }

    #[test]
    fn doubling_sigma_scales_quadratic_term() {
        let y = [4.0, 5.0, 6.5];
        let p = [3.9, 5.2, 6.3];
        let cov = Covariance::diagonal(vec![0.5, 0.45, 0.6]).unwrap();
        let cov2 = cov.scaled(2.0).unwrap();
        let l1 = gaussian_loglik(&y, &p, &cov).unwrap();
        let l2 = gaussian_loglik(&y, &p, &cov2).unwrap();
        let c1 = -1.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * cov.ln_det();
        let c2 = -1.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * cov2.ln_det();
        assert_abs_diff_eq!(c2 - c1, -3.0 * 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!((l2 - c2) * 4.0, l1 - c1, epsilon = 1e-12);
    }

    #[test]
    fn full_covariance_matches_diagonal() {
        let y = [1.0, -2.0, 0.5];
        let p = [0.7, -1.1, 0.2];
        let d = Covariance::diagonal(vec![0.3, 1.2, 0.8]).unwrap();
        let f = Covariance::full(d.matrix()).unwrap();
        let a = gaussian_loglik(&y, &p, &d).unwrap();
        let b = gaussian_loglik(&y, &p, &f).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_covariance() {
        assert!(Covariance::diagonal(vec![1.0, 0.0]).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(Covariance::full(m), Err(Error::Covariance)));
        let cov = Covariance::diagonal(vec![1.0]).unwrap();
        assert!(matches!(gaussian_loglik(&[1.0, 2.0], &[1.0], &cov), Err(Error::Shape(_))));
    }

    #[test]
    fn sigma_levels() {
        assert_abs_diff_eq!(sigma_to_level(1.0), 0.682_689_492_137_085_9, epsilon = 1e-14);
        assert_abs_diff_eq!(sigma_to_level(2.0), 0.954_499_736_103_641_6, epsilon = 1e-14);
        assert_abs_diff_eq!(sigma_to_level(2.73), 0.9937, epsilon = 5e-5);
        assert_abs_diff_eq!(level_to_sigma(sigma_to_level(2.73)), 2.73, epsilon = 1e-12);
    }

    #[test]
    fn chisq_quantile_examples() {
        assert_abs_diff_eq!(chisq_quantile(1, sigma_to_level(1.0)).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(chisq_quantile(3, 0.682689).unwrap(), 3.53, epsilon = 0.005);
        assert_abs_diff_eq!(chisq_quantile(2, 0.95).unwrap(), 5.991_464_547_107_979, epsilon = 1e-12);
        assert!(chisq_quantile(2, 1.0).is_err());
        assert!(chisq_quantile(0, 0.5).is_err());
    }

    #[test]
    fn chisq_matches_statrs() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        for k in 1..=6 {
            let d = ChiSquared::new(k as f64).unwrap();
            for q in [0.01, 0.3, 0.682_689, 0.9, 0.99] {
                let ours = chisq_quantile(k, q).unwrap();
                assert_abs_diff_eq!(d.cdf(ours), q, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn level_parsing() {
        let l: ConfidenceLevel = "1sigma".parse().unwrap();
        assert_abs_diff_eq!(l.q(), sigma_to_level(1.0));
        assert_eq!(l.to_string(), "1sigma");
        let l: ConfidenceLevel = "0.95".parse().unwrap();
        assert_eq!(l.q(), 0.95);
        assert!("1.5".parse::<ConfidenceLevel>().is_err());
        assert!("xsigma".parse::<ConfidenceLevel>().is_err());
    }

    #[test]
    fn kl_examples() {
        let cov = Covariance::diagonal(vec![1.0]).unwrap();
        assert_eq!(kl_gaussian(&[0.3], &[0.3], &cov).unwrap(), 0.0);
        assert_abs_diff_eq!(kl_gaussian(&[1.5], &[0.25], &cov).unwrap(), 1.25f64.powi(2) / 2.0);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn quantile_round_trip(k in 1usize..=6, q in 0.01f64..0.99) {
                let x = chisq_quantile(k, q).unwrap();
                prop_assert!((chisq_cdf(k, x) - q).abs() < 1e-12);
            }

            #[test]
            fn diagonal_loglik_is_sum_of_scalars(
                pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0.1f64..3.0), 1..12)
            ) {
                let y: Vec<f64> = pts.iter().map(|p| p.0).collect();
                let pred: Vec<f64> = pts.iter().map(|p| p.1).collect();
                let cov = Covariance::diagonal(pts.iter().map(|p| p.2).collect()).unwrap();
                let total = gaussian_loglik(&y, &pred, &cov).unwrap();
                let sum: f64 = pts.iter().map(|&(yi, pi, si)| {
                    -0.5 * (2.0 * std::f64::consts::PI).ln() - si.ln() - 0.5 * ((yi - pi) / si).powi(2)
                }).sum();
                prop_assert!((total - sum).abs() < 1e-12 * (1.0 + sum.abs()));
            }

            #[test]
            fn kl_is_nonnegative(a in prop::collection::vec(-3.0f64..3.0, 3), b in prop::collection::vec(-3.0f64..3.0, 3)) {
                let cov = Covariance::diagonal(vec![0.5, 1.0, 2.0]).unwrap();
                let kl = kl_gaussian(&a, &b, &cov).unwrap();
                prop_assert!(kl >= 0.0);
                if a == b { prop_assert_eq!(kl, 0.0); }
            }
        }
    }
}
