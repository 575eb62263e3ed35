//! Datasets, parametric models and the Gaussian likelihood built from them.
//!
//! A [`Model`] predicts observations from parameters and is generic over the
//! [`Scalar`] type, so the same code yields values, gradients and Hessians.
//! [`Embedding`] binds a model to the x-values of a [`DataSet`] (the map
//! θ ↦ h(θ)), and [`GaussianLogDensity`] turns the pair into a
//! [`LogDensity`].

mod builtin;
mod data;
mod expr;

use std::fmt;

pub use builtin::{distance_modulus, sir_predict, sir_rhs, DistanceModulus, Sir, ToyKind, ToyModel};
pub use data::DataSet;
pub use expr::{Expr, ExprModel};

use crate::diff::{self, Scalar, ScalarFn, VectorFn};
use crate::error::{Error, Result};
use crate::stats::{gaussian_loglik, LogDensity};

/// Product of open intervals `(lower_i, upper_i)`; bounds may be infinite.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Shape("domain bounds differ in length".into()));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] < upper[i])) {
            return Err(Error::Input(format!(
                "empty domain interval ({}, {}) for parameter {i}",
                lower[i], upper[i]
            )));
        }
        Ok(ParamDomain { lower, upper })
    }

    pub fn unbounded(n: usize) -> Self {
        ParamDomain {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        self.check(theta).is_ok()
    }

    /// Error naming the first violated bound, if any.
    pub fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.dim(),
                theta.len()
            )));
        }
        for (i, &v) in theta.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { what: "parameter", index: i });
            }
            if v <= self.lower[i] {
                return Err(Error::ParamDomain { index: i, value: v, bound: self.lower[i] });
            }
            if v >= self.upper[i] {
                return Err(Error::ParamDomain { index: i, value: v, bound: self.upper[i] });
            }
        }
        Ok(())
    }

    /// Largest `t ≥ 0` with `theta + s·dir` inside the domain for all `s < t`.
    pub fn max_step(&self, theta: &[f64], dir: &[f64]) -> f64 {
        let mut t = f64::INFINITY;
        for i in 0..self.dim() {
            if dir[i] > 0.0 && self.upper[i].is_finite() {
                t = t.min((self.upper[i] - theta[i]) / dir[i]);
            } else if dir[i] < 0.0 && self.lower[i].is_finite() {
                t = t.min((self.lower[i] - theta[i]) / dir[i]);
            }
        }
        t.max(0.0)
    }

    /// Domain with coordinate `index` removed.
    pub fn without(&self, index: usize) -> Self {
        let mut d = self.clone();
        d.lower.remove(index);
        d.upper.remove(index);
        d
    }
}

/// A parametric model `y_model(x; θ)`.
pub trait Model: Sync {
    fn name(&self) -> &str;
    fn param_dim(&self) -> usize;
    fn param_names(&self) -> Vec<String>;
    fn domain(&self) -> ParamDomain;

    /// Whether the model is claimed globally injective in θ on its domain.
    fn injective(&self) -> bool;

    /// Output components per x point.
    fn y_dim(&self) -> usize {
        1
    }

    /// Starting point for fits when the caller supplies none.
    fn initial_guess(&self) -> Vec<f64>;

    /// Predictions at every x, concatenated in order (`xs.len() · y_dim` values).
    fn predict_batch<S: Scalar>(&self, xs: &[Vec<f64>], theta: &[S]) -> Result<Vec<S>>;

    fn predict(&self, x: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        self.predict_batch(&[x.to_vec()], theta)
    }
}

fn primal<S: Scalar>(theta: &[S]) -> Vec<f64> {
    theta.iter().map(|v| v.value()).collect()
}

/// The embedding map `h(θ) = (y_model(x_1; θ), …, y_model(x_N; θ))`.
pub struct Embedding<'a, M: ?Sized> {
    pub model: &'a M,
    pub xs: &'a [Vec<f64>],
}

impl<'a, M: Model> Embedding<'a, M> {
    pub fn new(model: &'a M, data: &'a DataSet) -> Self {
        Embedding { model, xs: data.xs() }
    }

    pub fn at(model: &'a M, xs: &'a [Vec<f64>]) -> Self {
        Embedding { model, xs }
    }

    pub fn eval_f64(&self, theta: &[f64]) -> Result<Vec<f64>> {
        VectorFn::eval(self, theta)
    }

    pub fn jacobian(&self, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
        diff::jacobian(self, theta)
    }
}

impl<M: Model> VectorFn for Embedding<'_, M> {
    fn eval<S: Scalar>(&self, theta: &[S]) -> Result<Vec<S>> {
        self.model.domain().check(&primal(theta))?;
        self.model.predict_batch(self.xs, theta)
    }
}

/// `embed(model, dataset, θ)`.
pub fn embed<M: Model>(model: &M, data: &DataSet, theta: &[f64]) -> Result<Vec<f64>> {
    Embedding::new(model, data).eval_f64(theta)
}

/// Gaussian log-likelihood of a model on a dataset.
pub struct GaussianLogDensity<'a, M: ?Sized> {
    pub model: &'a M,
    pub data: &'a DataSet,
}

impl<'a, M: Model> GaussianLogDensity<'a, M> {
    pub fn new(model: &'a M, data: &'a DataSet) -> Result<Self> {
        let expected = data.xs().len() * model.y_dim();
        if expected != data.ys().len() {
            return Err(Error::Shape(format!(
                "model {} predicts {} values but the dataset has {} observations",
                model.name(),
                expected,
                data.ys().len()
            )));
        }
        Ok(GaussianLogDensity { model, data })
    }

    pub fn embedding(&self) -> Embedding<'a, M> {
        Embedding::new(self.model, self.data)
    }
}

impl<M: Model> ScalarFn for GaussianLogDensity<'_, M> {
    fn eval<S: Scalar>(&self, theta: &[S]) -> Result<S> {
        self.model.domain().check(&primal(theta))?;
        let pred = self.model.predict_batch(self.data.xs(), theta)?;
        gaussian_loglik(self.data.ys(), &pred, self.data.covariance())
    }
}

impl<M: Model> LogDensity for GaussianLogDensity<'_, M> {
    fn dim(&self) -> usize {
        self.model.param_dim()
    }
    fn loglik(&self, theta: &[f64]) -> Result<f64> {
        ScalarFn::eval(self, theta)
    }
    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        diff::gradient(self, theta)
    }
    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        diff::value_and_gradient(self, theta)
    }
    fn domain(&self) -> ParamDomain {
        self.model.domain()
    }
}

/// A [`LogDensity`] from any autodiff-capable scalar function.
pub struct FnDensity<F> {
    pub f: F,
    pub dim: usize,
    pub domain: ParamDomain,
}

impl<F: ScalarFn> FnDensity<F> {
    pub fn new(f: F, dim: usize) -> Self {
        FnDensity { f, dim, domain: ParamDomain::unbounded(dim) }
    }

    pub fn with_domain(mut self, domain: ParamDomain) -> Self {
        self.domain = domain;
        self
    }
}

impl<F: ScalarFn> LogDensity for FnDensity<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn loglik(&self, theta: &[f64]) -> Result<f64> {
        self.domain.check(theta)?;
        self.f.eval(theta)
    }
    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.domain.check(theta)?;
        diff::gradient(&self.f, theta)
    }
    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.domain.check(theta)?;
        diff::value_and_gradient(&self.f, theta)
    }
    fn domain(&self) -> ParamDomain {
        self.domain.clone()
    }
}

/// Any built-in or file-defined model behind one concrete type.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Toy(ToyModel),
    DistanceModulus(DistanceModulus),
    Sir(Sir),
    Expr(ExprModel),
}

pub const BUILTIN_MODELS: [&str; 8] = [
    "toy-linear",
    "toy-repar-1",
    "toy-repar-2",
    "toy-repar-3",
    "toy-repar-4",
    "toy-repar-5",
    "distance-modulus",
    "sir",
];

impl AnyModel {
    pub fn builtin(name: &str) -> Result<Self> {
        if let Some(kind) = ToyKind::from_name(name) {
            return Ok(AnyModel::Toy(ToyModel::new(kind)));
        }
        match name {
            "distance-modulus" => Ok(AnyModel::DistanceModulus(DistanceModulus::default())),
            "sir" => Ok(AnyModel::Sir(Sir::default())),
            _ => Err(Error::Input(format!(
                "unknown model '{name}' (built-ins: {})",
                BUILTIN_MODELS.join(", ")
            ))),
        }
    }

    /// A built-in name, or a path to an expression-model file.
    pub fn resolve(spec: &str) -> Result<Self> {
        match AnyModel::builtin(spec) {
            Ok(m) => Ok(m),
            Err(e) => {
                let p = std::path::Path::new(spec);
                if p.exists() {
                    ExprModel::from_file(p).map(AnyModel::Expr)
                } else {
                    Err(e)
                }
            }
        }
    }
}

macro_rules! dispatch {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            AnyModel::Toy($m) => $e,
            AnyModel::DistanceModulus($m) => $e,
            AnyModel::Sir($m) => $e,
            AnyModel::Expr($m) => $e,
        }
    };
}

impl Model for AnyModel {
    fn name(&self) -> &str {
        dispatch!(self, m => m.name())
    }
    fn param_dim(&self) -> usize {
        dispatch!(self, m => m.param_dim())
    }
    fn param_names(&self) -> Vec<String> {
        dispatch!(self, m => m.param_names())
    }
    fn domain(&self) -> ParamDomain {
        dispatch!(self, m => m.domain())
    }
    fn injective(&self) -> bool {
        dispatch!(self, m => m.injective())
    }
    fn y_dim(&self) -> usize {
        dispatch!(self, m => m.y_dim())
    }
    fn initial_guess(&self) -> Vec<f64> {
        dispatch!(self, m => m.initial_guess())
    }
    fn predict_batch<S: Scalar>(&self, xs: &[Vec<f64>], theta: &[S]) -> Result<Vec<S>> {
        dispatch!(self, m => m.predict_batch(xs, theta))
    }
}

impl fmt::Display for AnyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
