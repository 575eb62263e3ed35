use super::{Model, ParamDomain};
use crate::diff::Scalar;
use crate::error::{Error, Result};
use crate::ode::{integrate, OdeOptions};
use crate::quad;

/// The six parametrisations of the straight-line toy model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToyKind {
    /// `a·x + b`
    Linear,
    /// `exp(a)·x + exp(b)`
    ExpExp,
    /// `sqrt(a)·x + exp(b)`
    SqrtExp,
    /// `ln(a)·x + a·exp(b)`
    LogScaled,
    /// `(a+b)·x + exp(a−b)`
    SumExp,
    /// `(a+b)³·x + (a−b)²`
    CubeSquare,
}

impl ToyKind {
    pub const ALL: [ToyKind; 6] = [
        ToyKind::Linear,
        ToyKind::ExpExp,
        ToyKind::SqrtExp,
        ToyKind::LogScaled,
        ToyKind::SumExp,
        ToyKind::CubeSquare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ToyKind::Linear => "toy-linear",
            ToyKind::ExpExp => "toy-repar-1",
            ToyKind::SqrtExp => "toy-repar-2",
            ToyKind::LogScaled => "toy-repar-3",
            ToyKind::SumExp => "toy-repar-4",
            ToyKind::CubeSquare => "toy-repar-5",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        ToyKind::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn formula(self) -> &'static str {
        match self {
            ToyKind::Linear => "a*x + b",
            ToyKind::ExpExp => "exp(a)*x + exp(b)",
            ToyKind::SqrtExp => "sqrt(a)*x + exp(b)",
            ToyKind::LogScaled => "ln(a)*x + a*exp(b)",
            ToyKind::SumExp => "(a+b)*x + exp(a-b)",
            ToyKind::CubeSquare => "(a+b)^3*x + (a-b)^2",
        }
    }

    /// Slope and intercept `(m, c)` of the line for parameters `(a, b)`.
    pub fn line<S: Scalar>(self, a: S, b: S) -> (S, S) {
        match self {
            ToyKind::Linear => (a, b),
            ToyKind::ExpExp => (a.exp(), b.exp()),
            ToyKind::SqrtExp => (a.sqrt(), b.exp()),
            ToyKind::LogScaled => (a.ln(), a * b.exp()),
            ToyKind::SumExp => ((a + b), (a - b).exp()),
            ToyKind::CubeSquare => ((a + b).powi(3), (a - b).powi(2)),
        }
    }

    /// Parameters `(a, b)` reproducing the line `(m, c)`; for the non-injective
    /// cubic form the branch with `a < b` is returned.
    pub fn from_line(self, m: f64, c: f64) -> Option<(f64, f64)> {
        let r = match self {
            ToyKind::Linear => (m, c),
            ToyKind::ExpExp => (m.ln(), c.ln()),
            ToyKind::SqrtExp => (m * m, c.ln()),
            ToyKind::LogScaled => {
                let a = m.exp();
                (a, (c / a).ln())
            }
            ToyKind::SumExp => {
                let d = c.ln();
                (0.5 * (m + d), 0.5 * (m - d))
            }
            ToyKind::CubeSquare => {
                let s = m.cbrt();
                let d = -c.sqrt();
                (0.5 * (s + d), 0.5 * (s - d))
            }
        };
        (r.0.is_finite() && r.1.is_finite()).then_some(r)
    }
}

#[derive(Clone, Debug)]
pub struct ToyModel {
    pub kind: ToyKind,
}

impl ToyModel {
    pub fn new(kind: ToyKind) -> Self {
        ToyModel { kind }
    }
}

impl Model for ToyModel {
    fn name(&self) -> &str {
        self.kind.name()
    }
    fn param_dim(&self) -> usize {
        2
    }
    fn param_names(&self) -> Vec<String> {
        vec!["a".into(), "b".into()]
    }
    fn domain(&self) -> ParamDomain {
        match self.kind {
            ToyKind::SqrtExp | ToyKind::LogScaled => {
                ParamDomain::new(vec![0.0, f64::NEG_INFINITY], vec![f64::INFINITY; 2]).unwrap()
            }
            _ => ParamDomain::unbounded(2),
        }
    }
    fn injective(&self) -> bool {
        self.kind != ToyKind::CubeSquare
    }
    fn initial_guess(&self) -> Vec<f64> {
        match self.kind {
            ToyKind::Linear => vec![1.0, 1.0],
            ToyKind::ExpExp => vec![0.0, 0.0],
            ToyKind::SqrtExp => vec![1.0, 0.0],
            ToyKind::LogScaled => vec![2.0, 0.0],
            ToyKind::SumExp => vec![1.0, 0.0],
            ToyKind::CubeSquare => vec![0.0, 1.0],
        }
    }
    fn predict_batch<S: Scalar>(&self, xs: &[Vec<f64>], theta: &[S]) -> Result<Vec<S>> {
        let (m, c) = self.kind.line(theta[0], theta[1]);
        Ok(xs.iter().map(|x| m * x[0] + c).collect())
    }
}

const C_KM_S: f64 = 299_792.458;

/// Flat wCDM distance modulus `μ(z; Ωm, w)` with `H0` in km/s/Mpc.
///
/// `μ = 25 + 5 log10((1+z) · d_H · I(z))` with `d_H = c/H0` in Mpc and
/// `I(z) = ∫_0^z dx [Ωm (1+x)³ + (1−Ωm)(1+x)^{3(1+w)}]^{-1/2}`.
#[derive(Clone, Debug)]
pub struct DistanceModulus {
    pub h0: f64,
    pub rtol: f64,
}

impl Default for DistanceModulus {
    fn default() -> Self {
        DistanceModulus { h0: 70.0, rtol: 1e-10 }
    }
}

impl Model for DistanceModulus {
    fn name(&self) -> &str {
        "distance-modulus"
    }
    fn param_dim(&self) -> usize {
        2
    }
    fn param_names(&self) -> Vec<String> {
        vec!["Omega_m".into(), "w".into()]
    }
    fn domain(&self) -> ParamDomain {
        ParamDomain::new(vec![0.0, f64::NEG_INFINITY], vec![1.0, 0.0]).unwrap()
    }
    fn injective(&self) -> bool {
        true
    }
    fn initial_guess(&self) -> Vec<f64> {
        vec![0.3, -1.0]
    }
    fn predict_batch<S: Scalar>(&self, xs: &[Vec<f64>], theta: &[S]) -> Result<Vec<S>> {
        let zs: Vec<f64> = xs.iter().map(|x| x[0]).collect();
        if let Some(z) = zs.iter().find(|z| !(**z > 0.0)) {
            return Err(Error::Domain(format!("redshift {z} must be positive")));
        }
        let (om, w) = (theta[0], theta[1]);
        let integrand = |x: f64| {
            let lu = (1.0 + x).ln();
            let matter = om * (3.0 * lu).exp();
            let dark = (-om + 1.0) * ((w + 1.0) * (3.0 * lu)).exp();
            (matter + dark).powf(-0.5)
        };
        let ints = quad::cumulative(integrand, &zs, self.rtol, 0.0)?;
        let d_h = C_KM_S / self.h0;
        Ok(zs
            .iter()
            .zip(ints)
            .map(|(z, i)| (i * ((1.0 + z) * d_h)).log10() * 5.0 + 25.0)
            .collect())
    }
}

/// Distance modulus at one redshift.
pub fn distance_modulus(z: f64, omega_m: f64, w: f64, h0: f64) -> Result<f64> {
    let m = DistanceModulus { h0, ..Default::default() };
    m.domain().check(&[omega_m, w])?;
    Ok(m.predict_batch(&[vec![z]], &[omega_m, w])?[0])
}

/// SIR model observed through the infected compartment, `θ = (I₀, β, γ)`.
#[derive(Clone, Debug)]
pub struct Sir {
    pub population: f64,
    pub rtol: f64,
}

impl Default for Sir {
    fn default() -> Self {
        Sir { population: 763.0, rtol: 1e-10 }
    }
}

/// `(−βSI, βSI − γI, γI)`.
pub fn sir_rhs<S: Scalar>(state: &[S], beta: S, gamma: S) -> [S; 3] {
    let (s, i) = (state[0], state[1]);
    let infection = beta * s * i;
    let recovery = gamma * i;
    [-infection, infection - recovery, recovery]
}

/// Infected counts `I(t)` from `(N − I₀, I₀, 0)` at `t = 0`.
pub fn sir_predict<S: Scalar>(ts: &[f64], theta: &[S], population: f64, opts: &OdeOptions) -> Result<Vec<S>> {
    if let Some(t) = ts.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::Domain(format!("time {t} must be non-negative")));
    }
    let (i0, beta, gamma) = (theta[0], theta[1], theta[2]);
    let y0 = [-i0 + population, i0, S::from_f64(0.0)];
    let t_end = ts.iter().cloned().fold(0.0, f64::max);
    let sol = integrate(
        |_, y: &[S], dy: &mut [S]| {
            dy.copy_from_slice(&sir_rhs(y, beta, gamma));
            Ok(())
        },
        &y0,
        (0.0, t_end),
        opts,
        &mut [],
    )?;
    Ok(ts.iter().map(|&t| sol.eval(t)[1]).collect())
}

impl Model for Sir {
    fn name(&self) -> &str {
        "sir"
    }
    fn param_dim(&self) -> usize {
        3
    }
    fn param_names(&self) -> Vec<String> {
        vec!["I0".into(), "beta".into(), "gamma".into()]
    }
    fn domain(&self) -> ParamDomain {
        ParamDomain::new(vec![0.0; 3], vec![self.population, f64::INFINITY, f64::INFINITY]).unwrap()
    }
    fn injective(&self) -> bool {
        true
    }
    fn initial_guess(&self) -> Vec<f64> {
        vec![1.0, 0.002, 0.5]
    }
    fn predict_batch<S: Scalar>(&self, xs: &[Vec<f64>], theta: &[S]) -> Result<Vec<S>> {
        let ts: Vec<f64> = xs.iter().map(|x| x[0]).collect();
        sir_predict(&ts, theta, self.population, &OdeOptions::with_tol(self.rtol, self.rtol))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn toy_line_round_trip() {
        for k in ToyKind::ALL {
            let (a, b) = k.from_line(1.23063, 2.68134).unwrap();
            let (m, c) = k.line(a, b);
            assert_abs_diff_eq!(m, 1.23063, epsilon = 1e-12);
            assert_abs_diff_eq!(c, 2.68134, epsilon = 1e-12);
        }
    }

    #[test]
    fn sir_rhs_values() {
        let f = sir_rhs(&[763.0, 1.0, 0.0], 0.00231, 0.458);
        assert_abs_diff_eq!(f[0], -1.76253, epsilon = 1e-5);
        assert_abs_diff_eq!(f[1], 1.30453, epsilon = 1e-5);
        assert_abs_diff_eq!(f[2], 0.458, epsilon = 1e-12);
        assert_eq!(sir_rhs(&[700.0, 0.0, 63.0], 0.1, 0.2), [0.0; 3]);
        let g = sir_rhs(&[500.0, 200.0, 63.0], 0.003, 0.4);
        assert!((g[0] + g[1] + g[2]).abs() < 1e-12);
    }

    #[test]
    fn sir_without_infection_decays() {
        let ts: Vec<f64> = (0..=14).map(|t| t as f64).collect();
        let i = sir_predict(&ts, &[5.0, 0.0, 0.458], 763.0, &OdeOptions::with_tol(1e-10, 1e-10)).unwrap();
        for (t, v) in ts.iter().zip(i) {
            assert!((v - 5.0 * (-0.458 * t).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn distance_modulus_einstein_de_sitter() {
        // Ωm → 1 limit: I(1) = 2(1 − 1/√2).
        let m = DistanceModulus::default();
        let mu = m.predict_batch(&[vec![1.0]], &[1.0, -1.0]).unwrap()[0];
        let exact = 25.0 + 5.0 * (2.0 * C_KM_S / 70.0 * 2.0 * (1.0 - 0.5f64.sqrt())).log10();
        assert_abs_diff_eq!(mu, exact, epsilon = 1e-9);
        assert!((mu - 43.50).abs() < 0.01);
    }

    #[test]
    fn distance_modulus_rejects_bad_input() {
        assert!(distance_modulus(0.5, 1.2, -1.0, 70.0).is_err());
        assert!(distance_modulus(0.5, 0.3, 0.5, 70.0).is_err());
        assert!(distance_modulus(0.0, 0.3, -1.0, 70.0).is_err());
    }
}
