#![allow(dead_code)]

use confbound::bands::linear_grid;
use confbound::boundary::{find_boundary_point, trace_boundary_2d, trace_boundary_3d};
use confbound::estimate::{fit, FitOptions, FitResult};
use confbound::model::ToyKind;
use confbound::{
    AnyModel, BoundaryCurve, BoundaryMesh, ConfidenceLevel, DataSet, GaussianLogDensity, MeshOptions, RegionSpec,
    TraceOptions,
};

pub const TOY_MLE: [[f64; 2]; 6] = [
    [1.23063, 2.68134],
    [0.207529, 0.986316],
    [1.51446, 0.986316],
    [3.4234, -0.244318],
    [1.10847, 0.122159],
    [-0.282927, 1.35455],
];

pub const SIR_MLE: [f64; 3] = [0.614, 0.00231, 0.458];

pub const SIR_COV: [[f64; 3]; 3] = [
    [0.23, -1.0e-4, -7.9e-3],
    [-1.0e-4, 4.5e-8, 3.9e-6],
    [-7.9e-3, 3.9e-6, 8.8e-4],
];

pub const SIR_EXTENTS: [(f64, f64); 3] = [(0.253, 1.268), (0.002107, 0.002536), (0.4288, 0.4891)];

pub fn sigma(s: f64) -> ConfidenceLevel {
    ConfidenceLevel::from_sigma(s).unwrap()
}

pub struct Fitted {
    pub model: AnyModel,
    pub data: DataSet,
    pub fit: FitResult,
}

impl Fitted {
    pub fn new(model: AnyModel, data: DataSet, theta0: &[f64]) -> Self {
        let fit = fit(&model, &data, theta0, &FitOptions::default()).unwrap();
        Fitted { model, data, fit }
    }

    pub fn toy(kind: ToyKind) -> Self {
        let model = AnyModel::builtin(kind.name()).unwrap();
        let theta0 = confbound::Model::initial_guess(&model);
        Fitted::new(model, DataSet::toy(), &theta0)
    }

    pub fn sir() -> Self {
        Fitted::new(AnyModel::builtin("sir").unwrap(), DataSet::boarding_school(), &[1.0, 0.002, 0.5])
    }

    pub fn density(&self) -> GaussianLogDensity<'_, AnyModel> {
        GaussianLogDensity::new(&self.model, &self.data).unwrap()
    }

    pub fn spec(&self, s: f64) -> RegionSpec {
        RegionSpec::from_fit(&self.fit, sigma(s)).unwrap()
    }

    pub fn trace(&self, s: f64, rtol: f64) -> BoundaryCurve {
        let d = self.density();
        let spec = self.spec(s);
        let seed = find_boundary_point(&d, &spec, &[1.0, 0.0], 1e9).unwrap();
        trace_boundary_2d(&d, &spec, &seed, &TraceOptions::with_rtol(rtol)).unwrap()
    }

    pub fn mesh(&self, s: f64, opts: &MeshOptions) -> BoundaryMesh {
        trace_boundary_3d(&self.density(), &self.spec(s), None, opts).unwrap()
    }
}

pub fn sir_mesh_options() -> MeshOptions {
    MeshOptions { trace: TraceOptions::with_rtol(1e-7), slices: 24, ring_points: 48 }
}

pub fn sir_grid() -> Vec<Vec<f64>> {
    linear_grid(0.0, 14.0, 141)
}

pub fn toy_grid() -> Vec<Vec<f64>> {
    linear_grid(0.0, 10.0, 101)
}

/// Each extent endpoint within `frac` of the reference span.
pub fn extents_match(got: &[(f64, f64)], want: &[(f64, f64)], frac: f64) -> bool {
    got.iter().zip(want).all(|(g, w)| {
        let span = w.1 - w.0;
        (g.0 - w.0).abs() <= frac * span && (g.1 - w.1).abs() <= frac * span
    })
}

/// Largest envelope gap relative to the local reference width.
pub fn worst_relative_gap(a: &confbound::ConfidenceBand, reference: &confbound::ConfidenceBand) -> f64 {
    let w = reference.width(0);
    (0..w.len())
        .map(|i| {
            let d = (a.lower[i][0] - reference.lower[i][0])
                .abs()
                .max((a.upper[i][0] - reference.upper[i][0]).abs());
            d / w[i].max(1e-300)
        })
        .fold(0.0, f64::max)
}

pub fn scp_data() -> Option<DataSet> {
    let path = std::env::var("CONFBOUND_SCP_DATA")
        .ok()
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/scp.csv"));
    path.exists().then(|| DataSet::from_csv_path(&path).unwrap())
}
