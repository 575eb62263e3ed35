use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::builtin::distance_modulus;
use crate::error::{Error, Result};
use crate::stats::Covariance;

/// Observations with Gaussian uncertainties.
///
/// `ys` is stored row-major: row `i` holds the `y_dim` observed components at
/// `xs[i]`.
#[derive(Clone, Debug)]
pub struct DataSet {
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    y_dim: usize,
    cov: Covariance,
}

const TOY: [(f64, f64, f64); 3] = [(1.0, 4.0, 0.5), (2.0, 5.0, 0.45), (3.0, 6.5, 0.6)];

const BOARDING_SCHOOL: [f64; 14] = [
    3.0, 8.0, 28.0, 75.0, 221.0, 291.0, 255.0, 235.0, 190.0, 126.0, 70.0, 28.0, 12.0, 5.0,
];

impl DataSet {
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<f64>, y_dim: usize, cov: Covariance) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::Input("dataset is empty".into()));
        }
        if y_dim == 0 || ys.len() != xs.len() * y_dim {
            return Err(Error::Shape(format!(
                "{} x rows with {} y components need {} observations, got {}",
                xs.len(),
                y_dim,
                xs.len() * y_dim,
                ys.len()
            )));
        }
        let xd = xs[0].len();
        if xd == 0 || xs.iter().any(|x| x.len() != xd) {
            return Err(Error::Shape("x rows must share a non-zero dimension".into()));
        }
        if cov.len() != ys.len() {
            return Err(Error::Shape(format!(
                "covariance size {} does not match {} observations",
                cov.len(),
                ys.len()
            )));
        }
        if let Some(i) = xs.iter().flatten().chain(&ys).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "data value", index: i });
        }
        Ok(DataSet { xs, ys, y_dim, cov })
    }

    /// Scalar x and y with per-point σ.
    pub fn from_columns(x: Vec<f64>, y: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if sigma.len() != y.len() {
            return Err(Error::Shape("sigma and y differ in length".into()));
        }
        let xs = x.into_iter().map(|v| vec![v]).collect();
        DataSet::new(xs, y, 1, Covariance::diagonal(sigma)?)
    }

    /// The three-point toy dataset.
    pub fn toy() -> Self {
        DataSet::from_columns(
            TOY.iter().map(|r| r.0).collect(),
            TOY.iter().map(|r| r.1).collect(),
            TOY.iter().map(|r| r.2).collect(),
        )
        .expect("built-in data is valid")
    }

    /// Daily infected counts of the boarding-school influenza outbreak, σ = 15.
    pub fn boarding_school() -> Self {
        DataSet::from_columns(
            (1..=14).map(|d| d as f64).collect(),
            BOARDING_SCHOOL.to_vec(),
            vec![15.0; 14],
        )
        .expect("built-in data is valid")
    }

    /// `builtin:toy`, `builtin:boarding-school`, or a CSV path.
    pub fn resolve(spec: &str) -> Result<Self> {
        match spec {
            "builtin:toy" => Ok(DataSet::toy()),
            "builtin:boarding-school" => Ok(DataSet::boarding_school()),
            s if s.starts_with("builtin:") => Err(Error::Input(format!(
                "unknown built-in dataset '{s}' (available: builtin:toy, builtin:boarding-school)"
            ))),
            path => DataSet::from_csv_path(path),
        }
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        DataSet::from_csv_reader(f)
    }

    /// Reads `x[,x2,...],y[,y2,...],sigma[,...]` with a header row.
    ///
    /// Columns are classified by header prefix (`x`, `y`, `sigma`/`s`). A
    /// header that matches none of these with exactly three columns is read
    /// positionally as x, y, sigma.
    pub fn from_csv_reader(r: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.to_ascii_lowercase()).collect();
        let mut kinds: Vec<u8> = headers
            .iter()
            .map(|h| {
                if h.starts_with("sigma") || h == "s" || h.starts_with("err") || h.starts_with("dy") {
                    b's'
                } else if h.starts_with('x') {
                    b'x'
                } else if h.starts_with('y') {
                    b'y'
                } else {
                    b'?'
                }
            })
            .collect();
        if kinds.contains(&b'?') {
            if kinds.len() == 3 {
                kinds = vec![b'x', b'y', b's'];
            } else {
                return Err(Error::Parse(format!("unrecognised CSV header {headers:?}")));
            }
        }
        let nx = kinds.iter().filter(|&&k| k == b'x').count();
        let ny = kinds.iter().filter(|&&k| k == b'y').count();
        let ns = kinds.iter().filter(|&&k| k == b's').count();
        if nx == 0 || ny == 0 || ns != ny {
            return Err(Error::Parse(format!(
                "header needs x, y and one sigma per y column, got {headers:?}"
            )));
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut sig = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != kinds.len() {
                return Err(Error::Parse(format!("row {} has {} fields", line + 2, rec.len())));
            }
            let mut x = Vec::with_capacity(nx);
            for (field, &k) in rec.iter().zip(&kinds) {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {}: '{field}' is not a number", line + 2)))?;
                match k {
                    b'x' => x.push(v),
                    b'y' => ys.push(v),
                    _ => sig.push(v),
                }
            }
            xs.push(x);
        }
        DataSet::new(xs, ys, ny, Covariance::diagonal(sig)?)
    }

    /// Replaces the per-point uncertainties with a full covariance matrix.
    pub fn with_covariance(mut self, matrix: DMatrix<f64>) -> Result<Self> {
        let cov = Covariance::full(matrix)?;
        if cov.len() != self.ys.len() {
            return Err(Error::Shape("covariance size does not match observations".into()));
        }
        self.cov = cov;
        Ok(self)
    }

    /// Deterministic supernova-like distance-modulus data drawn around
    /// `(Ωm, w) = (0.28, −1.0)`, for benchmarks and tests that must run
    /// without the published catalogue.
    pub fn synthetic_supernova(n: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z: Vec<f64> = (0..n).map(|_| rng.random_range(0.015..1.45)).collect();
        z.sort_by(f64::total_cmp);
        let sigma: Vec<f64> = z.iter().map(|_| rng.random_range(0.1..0.4)).collect();
        let mut mu = Vec::with_capacity(n);
        for (zi, si) in z.iter().zip(&sigma) {
            let noise = Normal::new(0.0, *si).map_err(|e| Error::Input(e.to_string()))?;
            mu.push(distance_modulus(*zi, 0.28, -1.0, 70.0)? + noise.sample(&mut rng));
        }
        DataSet::from_columns(z, mu, sigma)
    }

    pub fn xs(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn y_dim(&self) -> usize {
        self.y_dim
    }

    pub fn covariance(&self) -> &Covariance {
        &self.cov
    }

    /// Number of x rows.
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Range of the first x component.
    pub fn x_range(&self) -> (f64, f64) {
        self.xs
            .iter()
            .map(|x| x[0])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_sets() {
        let t = DataSet::toy();
        assert_eq!(t.len(), 3);
        assert_eq!(t.ys(), &[4.0, 5.0, 6.5]);
        let b = DataSet::boarding_school();
        assert_eq!(b.len(), 14);
        assert_eq!(b.ys()[5], 291.0);
        assert_eq!(b.x_range(), (1.0, 14.0));
    }

    #[test]
    fn csv_by_header() {
        let text = "x,y,sigma\n1,4,0.5\n2,5,0.45\n3,6.5,0.6\n";
        let d = DataSet::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.ys(), &[4.0, 5.0, 6.5]);
    }

    #[test]
    fn csv_multi_column() {
        let text = "x,x2,y,y2,sigma,sigma2\n1,2,3,4,0.1,0.2\n5,6,7,8,0.3,0.4\n";
        let d = DataSet::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(d.y_dim(), 2);
        assert_eq!(d.xs()[1], vec![5.0, 6.0]);
        assert_eq!(d.ys(), &[3.0, 4.0, 7.0, 8.0]);
    }

    #[test]
    fn csv_positional_fallback() {
        let text = "z,mu,dmu\n0.1,38.0,0.2\n";
        let d = DataSet::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(d.xs()[0], vec![0.1]);
    }

    #[test]
    fn csv_errors() {
        assert!(DataSet::from_csv_reader("x,y,sigma\n1,2,0\n".as_bytes()).is_err());
        assert!(DataSet::from_csv_reader("x,y,sigma\n1,2\n".as_bytes()).is_err());
        assert!(DataSet::from_csv_reader("x,y,sigma\n1,a,1\n".as_bytes()).is_err());
        assert!(DataSet::from_csv_reader("x,y,y2,sigma\n1,2,3,1\n".as_bytes()).is_err());
        assert!(DataSet::resolve("builtin:nothing").is_err());
    }

    #[test]
    fn full_covariance_replacement() {
        let d = DataSet::toy()
            .with_covariance(DMatrix::from_row_slice(3, 3, &[1.0, 0.1, 0.0, 0.1, 1.0, 0.0, 0.0, 0.0, 1.0]))
            .unwrap();
        assert!(matches!(d.covariance(), Covariance::Full { .. }));
        assert!(DataSet::toy().with_covariance(DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn synthetic_supernova_is_deterministic() {
        let a = DataSet::synthetic_supernova(50, 7).unwrap();
        let b = DataSet::synthetic_supernova(50, 7).unwrap();
        assert_eq!(a.ys(), b.ys());
        assert!(a.xs().windows(2).all(|w| w[0][0] <= w[1][0]));
    }
}
