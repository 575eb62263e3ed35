//! Fixtures shared by the benchmarks.

use confbound::boundary::find_boundary_point;
use confbound::estimate::{fit, FitOptions, FitResult};
use confbound::{AnyModel, ConfidenceLevel, DataSet, GaussianLogDensity, Model, RegionSpec, Result, Scalar, ScalarFn};

/// A model, its data and the fit.
pub struct Problem {
    pub model: AnyModel,
    pub data: DataSet,
    pub fit: FitResult,
}

impl Problem {
    pub fn builtin(name: &str) -> Result<Self> {
        let model = AnyModel::builtin(name)?;
        let data = match name {
            "sir" => DataSet::boarding_school(),
            "distance-modulus" => DataSet::synthetic_supernova(120, 7)?,
            _ => DataSet::toy(),
        };
        let fit = fit(&model, &data, &model.initial_guess(), &FitOptions::default())?;
        Ok(Problem { model, data, fit })
    }

    pub fn density(&self) -> GaussianLogDensity<'_, AnyModel> {
        GaussianLogDensity::new(&self.model, &self.data).expect("fixture data matches the model")
    }

    pub fn spec(&self, sigma: f64) -> Result<RegionSpec> {
        RegionSpec::from_fit(&self.fit, ConfidenceLevel::from_sigma(sigma)?)
    }

    pub fn seed(&self, spec: &RegionSpec) -> Result<Vec<f64>> {
        find_boundary_point(&self.density(), spec, &[1.0, 0.0], 1e12)
    }
}

/// `ℓ(θ) = −½‖θ‖²` in `n` dimensions.
pub struct Quadratic(pub usize);

impl ScalarFn for Quadratic {
    fn eval<S: Scalar>(&self, t: &[S]) -> Result<S> {
        Ok(t[..self.0].iter().fold(S::from_f64(0.0), |acc, &v| acc + v * v) * -0.5)
    }
}
