//! The five subcommands. Each writes plot-ready files into the output
//! directory and returns human-readable summary lines.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use confbound::bands::{linear_grid, write_band_csv, BandOptions};
use confbound::boundary::{trace_region, write_faces_csv, write_points_csv};
use confbound::estimate::{fit, FitOptions, FitResult};
use confbound::gridoracle::{benchmark, write_bench_csv};
use confbound::infogeo::{fisher_metric, radial_geodesics, scaled_covariance, GeodesicOptions};
use confbound::{
    confidence_band, AnyModel, Boundary, DataSet, Error, GaussianLogDensity, MeshOptions, Model, RegionSpec,
    TraceOptions,
};
use serde::Serialize;

use crate::config::{CommandKind, Level, RunConfig, DEFAULT_RING_POINTS, DEFAULT_SLICES};

/// Process exit status for an error: 1 input, 2 non-convergence, 3 method failure.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::NonConvergence { .. }) => 2,
        Some(
            Error::Input(_)
            | Error::Parse(_)
            | Error::Io(_)
            | Error::Shape(_)
            | Error::Covariance
            | Error::ParamDomain { .. }
            | Error::Domain(_),
        )
        | None => 1,
        Some(_) => 3,
    }
}

/// Model and data of a run, loaded and checked against each other.
pub struct Session {
    pub config: RunConfig,
    pub model: AnyModel,
    pub data: DataSet,
}

impl Session {
    pub fn load(config: RunConfig) -> Result<Self> {
        let model = AnyModel::resolve(&config.model).with_context(|| format!("loading model '{}'", config.model))?;
        let spec = config.data.as_deref().unwrap_or_default();
        let data = DataSet::resolve(spec).with_context(|| format!("loading data '{spec}'"))?;
        if data.y_dim() != model.y_dim() {
            return Err(Error::Shape(format!(
                "model '{}' predicts {} outputs per x but the data has {}",
                model.name(),
                model.y_dim(),
                data.y_dim()
            ))
            .into());
        }
        if let Some(t) = &config.theta0 {
            if t.len() != model.param_dim() {
                return Err(Error::Input(format!(
                    "--theta0 has {} values; model '{}' has {} parameters",
                    t.len(),
                    model.name(),
                    model.param_dim()
                ))
                .into());
            }
            model.domain().check(t)?;
        }
        Ok(Session { config, model, data })
    }

    fn density(&self) -> Result<GaussianLogDensity<'_, AnyModel>> {
        Ok(GaussianLogDensity::new(&self.model, &self.data)?)
    }

    fn fit(&self) -> Result<FitResult> {
        let theta0 = self.config.theta0.clone().unwrap_or_else(|| self.model.initial_guess());
        Ok(fit(&self.model, &self.data, &theta0, &FitOptions::default()).context("fitting the model")?)
    }

    fn spec(&self, fit: &FitResult, level: Level) -> Result<RegionSpec> {
        let dof = self.config.dof.unwrap_or(fit.theta_mle.len());
        Ok(RegionSpec::new(fit.theta_mle.clone(), fit.loglik_at_mle, level.confidence()?, dof)?)
    }

    fn mesh_options(&self) -> MeshOptions {
        MeshOptions {
            trace: TraceOptions::with_rtol(self.config.rtol()),
            slices: self.config.slices.unwrap_or(DEFAULT_SLICES),
            ring_points: self.config.ring_points.unwrap_or(DEFAULT_RING_POINTS),
        }
    }

    fn trace(&self, fit: &FitResult, level: Level) -> Result<Boundary> {
        let spec = self.spec(fit, level)?;
        let d = self.density()?;
        Ok(trace_region(&d, &spec, None, &self.mesh_options()).with_context(|| format!("tracing the {level} boundary"))?)
    }

    fn output(&self, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
        let path = self.config.out.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok((path, BufWriter::new(f)))
    }
}

/// Summary lines and written files of one command.
#[derive(Debug, Default)]
pub struct Report {
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
}

pub fn run(config: RunConfig) -> Result<Report> {
    let config = config.normalize()?;
    fs::create_dir_all(&config.out).with_context(|| format!("creating {}", config.out.display()))?;
    write_config(&config, &config.out)?;
    let s = Session::load(config)?;
    match s.config.command {
        CommandKind::Fit => cmd_fit(&s),
        CommandKind::Region => cmd_region(&s),
        CommandKind::Bands => cmd_bands(&s),
        CommandKind::Geodesics => cmd_geodesics(&s),
        CommandKind::Bench => cmd_bench(&s),
    }
}

fn write_config(config: &RunConfig, dir: &Path) -> Result<()> {
    let path = dir.join("config.toml");
    fs::write(&path, config.to_canonical()).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct FitSummary {
    model: String,
    data: String,
    params: Vec<String>,
    converged: bool,
    iterations: usize,
    gradient_norm: f64,
    boundary_constrained: bool,
    theta_mle: Vec<f64>,
    loglik_at_mle: f64,
    fisher_metric: Vec<Vec<f64>>,
    det_g: f64,
    level: Vec<LevelSummary>,
}

#[derive(Serialize)]
struct LevelSummary {
    level: String,
    q: f64,
    dof: usize,
    threshold: f64,
    scaled_covariance: Vec<Vec<f64>>,
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn cmd_fit(s: &Session) -> Result<Report> {
    let f = s.fit()?;
    let g = fisher_metric(&s.model, &s.data, &f.theta_mle)?;
    let mut levels = Vec::new();
    for &l in &s.config.levels {
        let spec = s.spec(&f, l)?;
        let cov = scaled_covariance(&s.model, &s.data, &f.theta_mle, spec.level, Some(spec.dof))?;
        levels.push(LevelSummary {
            level: l.to_string(),
            q: spec.level.q(),
            dof: spec.dof,
            threshold: spec.threshold,
            scaled_covariance: rows(&cov),
        });
    }
    let summary = FitSummary {
        model: s.model.name().to_string(),
        data: s.config.data.clone().unwrap_or_default(),
        params: s.model.param_names(),
        converged: f.converged,
        iterations: f.iterations,
        gradient_norm: f.gradient_norm,
        boundary_constrained: f.boundary_constrained,
        theta_mle: f.theta_mle.clone(),
        loglik_at_mle: f.loglik_at_mle,
        fisher_metric: rows(&g.g),
        det_g: g.det_g,
        level: levels,
    };
    let path = s.config.out.join("fit.toml");
    fs::write(&path, toml::to_string(&summary)?).with_context(|| format!("writing {}", path.display()))?;
    let mut lines = vec![format!(
        "theta_mle = {:?} (loglik {:.6}, {} iterations)",
        f.theta_mle, f.loglik_at_mle, f.iterations
    )];
    if f.boundary_constrained {
        lines.push("warning: the optimum lies on the parameter domain boundary".into());
    }
    if !f.converged {
        return Err(Error::NonConvergence { best: f.theta_mle, iterations: f.iterations }.into());
    }
    Ok(Report { lines, files: vec![path] })
}

pub fn cmd_region(s: &Session) -> Result<Report> {
    let f = s.fit()?;
    let names = s.model.param_names();
    let mut report = Report::default();
    for &l in &s.config.levels {
        let b = s.trace(&f, l)?;
        let label = l.label();
        let (path, w) = s.output(&format!("region_{label}.csv"))?;
        write_points_csv(w, &names, &b.points())?;
        report.files.push(path);
        let line = match &b {
            Boundary::Interval(i) => format!("{l}: interval [{}, {}]", i.lower, i.upper),
            Boundary::Curve(c) => format!(
                "{l}: closed curve with {} points, closure defect {:.3e}, {} gradient evaluations",
                c.samples.len(),
                c.closure_defect,
                c.grad_evaluations
            ),
            Boundary::Mesh(m) => {
                let (path, w) = s.output(&format!("region_{label}_faces.csv"))?;
                write_faces_csv(w, &m.faces)?;
                report.files.push(path);
                format!(
                    "{l}: mesh with {} vertices and {} faces, {} gradient evaluations",
                    m.vertices.len(),
                    m.faces.len(),
                    m.grad_evaluations
                )
            }
        };
        report.lines.push(line);
    }
    Ok(report)
}

pub fn cmd_bands(s: &Session) -> Result<Report> {
    if s.data.xs().first().is_some_and(|x| x.len() != 1) {
        return Err(Error::Input("bands are drawn over a scalar x; the data has vector x".into()).into());
    }
    let f = s.fit()?;
    let (lo, hi) = s.data.x_range();
    let (a, b) = (s.config.xmin.unwrap_or(lo), s.config.xmax.unwrap_or(hi));
    if !(a < b) {
        return Err(Error::Input(format!("empty x range [{a}, {b}]")).into());
    }
    let xs = linear_grid(a, b, s.config.points.unwrap_or(crate::config::DEFAULT_BAND_POINTS));
    let opts = BandOptions { assume_injective: s.config.assume_injective, ..BandOptions::default() };
    let mut report = Report::default();
    for &l in &s.config.levels {
        let boundary = s.trace(&f, l)?;
        let band = confidence_band(&s.model, &boundary, &f.theta_mle, &xs, &opts)
            .with_context(|| format!("computing the {l} band"))?;
        let (path, w) = s.output(&format!("band_{}.csv", l.label()))?;
        write_band_csv(w, &band)?;
        report.files.push(path);
        let width = band.width(0);
        let (k, wmax) = width.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &w)| {
            if w > acc.1 {
                (i, w)
            } else {
                acc
            }
        });
        report.lines.push(format!(
            "{l}: widest at x = {:.4} (width {wmax:.6e}), {} model evaluations",
            band.xs[k][0], band.evaluations
        ));
    }
    Ok(report)
}

pub fn cmd_geodesics(s: &Session) -> Result<Report> {
    let f = s.fit()?;
    let level = s.config.levels[0];
    let length = match s.config.length {
        Some(l) => l,
        None => s.spec(&f, level)?.threshold.sqrt(),
    };
    let count = s.config.count.unwrap_or(crate::config::DEFAULT_GEODESICS);
    let rtol = s.config.rtol();
    let opts = GeodesicOptions { rtol, atol: 1e-2 * rtol, ..GeodesicOptions::default() };
    let geos = radial_geodesics(&s.model, &s.data, &f.theta_mle, count, length, &opts)?;
    let (path, w) = s.output("geodesics.csv")?;
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["direction".to_string(), "t".to_string()];
    header.extend(s.model.param_names());
    wr.write_record(&header)?;
    let mut failures = Vec::new();
    let mut truncated = 0;
    for (k, g) in geos.into_iter().enumerate() {
        match g {
            Ok(g) => {
                truncated += usize::from(g.truncated);
                for (t, p) in g.ts.iter().zip(&g.points) {
                    let mut row = vec![k.to_string(), format!("{t:.17e}")];
                    row.extend(p.iter().map(|v| format!("{v:.17e}")));
                    wr.write_record(&row)?;
                }
            }
            Err(e) => failures.push((k, e)),
        }
    }
    wr.flush()?;
    let done = count - failures.len();
    if let Some((k, e)) = failures.into_iter().next() {
        return Err(anyhow::Error::new(e)
            .context(format!("geodesic {k} failed; {done} of {count} written to {}", path.display())));
    }
    Ok(Report {
        lines: vec![format!(
            "{done} geodesics of metric length {length:.6} from the MLE, {truncated} stopped at the domain edge"
        )],
        files: vec![path],
    })
}

pub fn cmd_bench(s: &Session) -> Result<Report> {
    let f = s.fit()?;
    let spec = s.spec(&f, s.config.levels[0])?;
    let d = s.density()?;
    let rows = benchmark(&d, &spec, &s.config.rtol, &s.config.grids, None)?;
    let (path, w) = s.output("bench.csv")?;
    write_bench_csv(w, &rows)?;
    let lines = rows
        .iter()
        .map(|r| {
            let what = match (r.rtol, r.grid) {
                (Some(t), _) => format!("{} rtol {t:e}", r.method),
                (_, Some(h)) => format!("grid {h}"),
                _ => r.method.clone(),
            };
            let status = r.failure.as_deref().map_or_else(String::new, |e| format!(" (failed: {e})"));
            format!("{what}: {} gradient, {} loglik evaluations{status}", r.ledger.gradient_calls, r.ledger.loglik_calls)
        })
        .collect();
    Ok(Report { lines, files: vec![path] })
}
