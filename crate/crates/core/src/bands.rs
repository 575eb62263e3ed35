//! Pointwise confidence bands from boundary images.
//!
//! For a model that is injective on a compact region, the boundary of the
//! image `y(C_q)` lies in the image of the region boundary, so the band at
//! each `x` is spanned by model predictions on `∂C_q` alone.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::boundary::{lr_stat, Boundary, BoundaryCurve, RegionSpec};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::parallel;
use crate::stats::{ConfidenceLevel, LogDensity};

/// Lower and upper envelopes of model predictions over a grid of `x`.
///
/// `lower[i]`, `upper[i]` and `fit[i]` hold one value per output component.
#[derive(Clone, Debug)]
pub struct ConfidenceBand {
    pub level: ConfidenceLevel,
    pub xs: Vec<Vec<f64>>,
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
    pub fit: Vec<Vec<f64>>,
    /// Number of parameter points at which the model was evaluated.
    pub evaluations: usize,
}

impl ConfidenceBand {
    pub fn y_dim(&self) -> usize {
        self.fit.first().map_or(1, |f| f.len())
    }

    /// `upper − lower` of component `c` at every grid point.
    pub fn width(&self, c: usize) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u[c] - l[c]).collect()
    }

    /// Whether `self` lies inside `other` at every grid point, up to `tol`.
    pub fn is_within(&self, other: &ConfidenceBand, tol: f64) -> bool {
        self.lower.len() == other.lower.len()
            && self.lower.iter().zip(&other.lower).all(|(a, b)| a.iter().zip(b).all(|(a, b)| *a >= b - tol))
            && self.upper.iter().zip(&other.upper).all(|(a, b)| a.iter().zip(b).all(|(a, b)| *a <= b + tol))
    }

    /// Largest difference between the envelopes of two bands on the same grid.
    pub fn max_envelope_difference(&self, other: &ConfidenceBand) -> f64 {
        let mut d = 0.0f64;
        for i in 0..self.lower.len() {
            for c in 0..self.lower[i].len() {
                d = d
                    .max((self.lower[i][c] - other.lower[i][c]).abs())
                    .max((self.upper[i][c] - other.upper[i][c]).abs());
            }
        }
        d
    }
}

#[derive(Clone, Debug)]
pub struct BandOptions {
    /// Proceed for models that do not declare global injectivity.
    pub assume_injective: bool,
    /// Stop refining once every extremum moves by less than this fraction of
    /// the local band width.
    pub refine_tol: f64,
    pub max_rounds: usize,
}

impl Default for BandOptions {
    fn default() -> Self {
        BandOptions { assume_injective: false, refine_tol: 1e-4, max_rounds: 30 }
    }
}

/// One closed boundary loop parametrized by arc length, or a fixed point.
struct Loop<'a> {
    curve: Option<&'a BoundaryCurve>,
    s: Vec<f64>,
    thetas: Vec<Vec<f64>>,
    preds: Vec<Vec<f64>>,
}

fn predict_all<M: Model>(model: &M, xs: &[Vec<f64>], thetas: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    parallel::install(|| thetas.par_iter().map(|t| model.predict_batch::<f64>(xs, t)).collect())
}

/// Global (min, argmin, max, argmax) per flattened output, where arguments
/// are (loop, point) pairs.
type Extremes = Vec<(f64, (usize, usize), f64, (usize, usize))>;

fn extremes(loops: &[Loop<'_>], width: usize) -> Extremes {
    let mut ex = vec![(f64::INFINITY, (0, 0), f64::NEG_INFINITY, (0, 0)); width];
    for (li, l) in loops.iter().enumerate() {
        for (pi, p) in l.preds.iter().enumerate() {
            for (c, &v) in p.iter().enumerate() {
                let e = &mut ex[c];
                if v < e.0 {
                    e.0 = v;
                    e.1 = (li, pi);
                }
                if v > e.2 {
                    e.2 = v;
                    e.3 = (li, pi);
                }
            }
        }
    }
    ex
}

fn insert<M: Model>(l: &mut Loop<'_>, new_s: Vec<f64>, model: &M, xs: &[Vec<f64>]) -> Result<usize> {
    let c = l.curve.expect("refined loops carry a curve");
    let new_t: Vec<Vec<f64>> = new_s.iter().map(|&v| c.eval(v)).collect();
    let new_p = predict_all(model, xs, &new_t)?;
    let added = new_s.len();
    let mut merged: Vec<(f64, Vec<f64>, Vec<f64>)> = l
        .s
        .drain(..)
        .zip(l.thetas.drain(..))
        .zip(l.preds.drain(..))
        .map(|((s, t), p)| (s, t, p))
        .chain(new_s.into_iter().zip(new_t).zip(new_p).map(|((s, t), p)| (s, t, p)))
        .collect();
    merged.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (s, t, p) in merged {
        l.s.push(s);
        l.thetas.push(t);
        l.preds.push(p);
    }
    Ok(added)
}

/// Vertex of the parabola through the neighbours of point `pi` in output
/// component `k`, when it falls strictly between them.
fn parabola_vertex(l: &Loop<'_>, pi: usize, k: usize) -> Option<f64> {
    let c = l.curve?;
    let n = l.s.len();
    let len = c.length();
    let (im, ip) = ((pi + n - 1) % n, (pi + 1) % n);
    let s0 = l.s[pi];
    let sm = if im < pi { l.s[im] } else { l.s[im] - len };
    let sp = if ip > pi { l.s[ip] } else { l.s[ip] + len };
    let (fm, f0, fp) = (l.preds[im][k], l.preds[pi][k], l.preds[ip][k]);
    let (a, b) = (s0 - sm, sp - s0);
    let den = b * (fm - f0) + a * (fp - f0);
    if den == 0.0 || !den.is_finite() {
        return None;
    }
    let v = s0 + 0.5 * (b * b * (fm - f0) - a * a * (fp - f0)) / den;
    (v > sm && v < sp && v != s0).then(|| v.rem_euclid(len))
}

/// Band spanned by model predictions on `boundary`, refined adaptively
/// between boundary samples.
pub fn confidence_band<M: Model>(
    model: &M,
    boundary: &Boundary,
    theta_mle: &[f64],
    xs: &[Vec<f64>],
    opts: &BandOptions,
) -> Result<ConfidenceBand> {
    if xs.is_empty() {
        return Err(Error::Input("band grid is empty".into()));
    }
    if !model.injective() && !opts.assume_injective {
        return Err(Error::BandRefused(format!(
            "model '{}' is not declared globally injective; boundary images only bound the band for \
             injective models (override explicitly if injectivity holds on this region)",
            model.name()
        )));
    }
    let mut loops: Vec<Loop<'_>> = Vec::new();
    let fixed = |t: Vec<f64>| Loop { curve: None, s: vec![0.0], thetas: vec![t], preds: Vec::new() };
    let closed = |c: &BoundaryCurve| -> Result<()> {
        if c.closure_defect > 1e-3 {
            return Err(Error::Topology(format!("boundary is not closed (defect {:e})", c.closure_defect)));
        }
        Ok(())
    };
    fn looped(c: &BoundaryCurve) -> Loop<'_> {
        let m = 4 * c.samples.len().max(8);
        let l = c.length();
        let s: Vec<f64> = (0..m).map(|i| l * i as f64 / m as f64).collect();
        let thetas = s.iter().map(|&v| c.eval(v)).collect();
        Loop { curve: Some(c), s, thetas, preds: Vec::new() }
    }
    match boundary {
        Boundary::Interval(b) => {
            loops.push(fixed(vec![b.lower]));
            loops.push(fixed(vec![b.upper]));
        }
        Boundary::Curve(c) => {
            closed(c)?;
            loops.push(looped(c));
        }
        Boundary::Mesh(m) => {
            loops.push(fixed(m.caps[0].clone()));
            loops.push(fixed(m.caps[1].clone()));
            for c in &m.slices {
                closed(c)?;
                loops.push(looped(c));
            }
        }
    }
    let mut evaluations = 0;
    for l in loops.iter_mut() {
        l.preds = predict_all(model, xs, &l.thetas)?;
        evaluations += l.thetas.len();
    }
    let fit = model.predict_batch::<f64>(xs, theta_mle)?;
    let width = fit.len();
    let mut ex = extremes(&loops, width);

    for _ in 0..opts.max_rounds {
        // Bisect the arcs on either side of every current extremum.
        let mut wanted: Vec<Vec<usize>> = vec![Vec::new(); loops.len()];
        for e in &ex {
            for (li, pi) in [e.1, e.3] {
                if loops[li].curve.is_some() {
                    let n = loops[li].s.len();
                    wanted[li].push((pi + n - 1) % n);
                    wanted[li].push(pi);
                }
            }
        }
        let mut added = 0;
        for (li, mut idx) in wanted.into_iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            idx.sort_unstable();
            idx.dedup();
            let l = &mut loops[li];
            let c = l.curve.expect("refined loops carry a curve");
            let len = c.length();
            let n = l.s.len();
            let new_s: Vec<f64> = idx
                .iter()
                .map(|&i| {
                    let a = l.s[i];
                    let b = if i + 1 < n { l.s[i + 1] } else { len };
                    0.5 * (a + b)
                })
                .filter(|&m| l.s.binary_search_by(|v| v.total_cmp(&m)).is_err())
                .collect();
            if new_s.is_empty() {
                continue;
            }
            added += insert(l, new_s, model, xs)?;
        }
        evaluations += added;
        let next = extremes(&loops, width);
        let moved = ex.iter().zip(&next).all(|(a, b)| {
            let w = (b.2 - b.0).abs();
            (a.0 - b.0).abs() <= opts.refine_tol * w && (a.2 - b.2).abs() <= opts.refine_tol * w
        });
        ex = next;
        if added == 0 || moved {
            break;
        }
    }

    let mut wanted: Vec<Vec<f64>> = vec![Vec::new(); loops.len()];
    for (k, e) in ex.iter().enumerate() {
        for (li, pi) in [e.1, e.3] {
            if let Some(v) = parabola_vertex(&loops[li], pi, k) {
                wanted[li].push(v);
            }
        }
    }
    for (li, mut new_s) in wanted.into_iter().enumerate() {
        new_s.sort_by(f64::total_cmp);
        new_s.dedup();
        new_s.retain(|m| loops[li].s.binary_search_by(|v| v.total_cmp(m)).is_err());
        if !new_s.is_empty() {
            evaluations += insert(&mut loops[li], new_s, model, xs)?;
        }
    }
    ex = extremes(&loops, width);

    let y_dim = model.y_dim();
    let rows = xs.len();
    let mut band = ConfidenceBand {
        level: boundary.level(),
        xs: xs.to_vec(),
        lower: vec![vec![0.0; y_dim]; rows],
        upper: vec![vec![0.0; y_dim]; rows],
        fit: vec![vec![0.0; y_dim]; rows],
        evaluations,
    };
    for i in 0..rows {
        for c in 0..y_dim {
            let k = i * y_dim + c;
            band.lower[i][c] = ex[k].0;
            band.upper[i][c] = ex[k].2;
            band.fit[i][c] = fit[k];
            let slack = 1e-9 * (fit[k].abs() + (ex[k].2 - ex[k].0));
            if fit[k] < ex[k].0 - slack || fit[k] > ex[k].2 + slack {
                return Err(Error::BandRefused(format!(
                    "the best-fit prediction at x = {:?} falls outside the boundary envelope; \
                     the model is not injective on this region",
                    xs[i]
                )));
            }
        }
    }
    Ok(band)
}

/// Band over an explicit cloud of parameter points inside the region.
pub fn band_from_interior<M: Model, D: LogDensity + Sync>(
    model: &M,
    density: &D,
    spec: &RegionSpec,
    cloud: &[Vec<f64>],
    xs: &[Vec<f64>],
) -> Result<ConfidenceBand> {
    if cloud.is_empty() {
        return Err(Error::Input("interior sample cloud is empty".into()));
    }
    if xs.is_empty() {
        return Err(Error::Input("band grid is empty".into()));
    }
    let stats: Vec<f64> =
        parallel::install(|| cloud.par_iter().map(|t| lr_stat(spec.ell_mle, density.loglik(t)?)).collect::<Result<_>>())?;
    if let Some(i) = stats.iter().position(|s| *s > spec.threshold * (1.0 + 1e-12)) {
        return Err(Error::Input(format!("cloud point {i} lies outside the region (statistic {})", stats[i])));
    }
    let preds = predict_all(model, xs, cloud)?;
    let fit = model.predict_batch::<f64>(xs, &spec.center)?;
    let y_dim = model.y_dim();
    let mut band = ConfidenceBand {
        level: spec.level,
        xs: xs.to_vec(),
        lower: vec![vec![f64::INFINITY; y_dim]; xs.len()],
        upper: vec![vec![f64::NEG_INFINITY; y_dim]; xs.len()],
        fit: vec![vec![0.0; y_dim]; xs.len()],
        evaluations: cloud.len(),
    };
    for p in &preds {
        for i in 0..xs.len() {
            for c in 0..y_dim {
                let v = p[i * y_dim + c];
                band.lower[i][c] = band.lower[i][c].min(v);
                band.upper[i][c] = band.upper[i][c].max(v);
            }
        }
    }
    for i in 0..xs.len() {
        for c in 0..y_dim {
            band.fit[i][c] = fit[i * y_dim + c];
        }
    }
    Ok(band)
}

/// Uniform rejection sample of `count` points of the region inside `bbox`.
pub fn sample_interior<D: LogDensity + Sync>(
    density: &D,
    spec: &RegionSpec,
    bbox: &[(f64, f64)],
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    rejection_sample(density, spec, bbox, count, seed, 0.0)
}

/// Uniform rejection sample of the inner shell `T(1 − width) ≤ λ ≤ T` of the
/// region inside `bbox`, where the band extremes are attained.
pub fn sample_level_shell<D: LogDensity + Sync>(
    density: &D,
    spec: &RegionSpec,
    bbox: &[(f64, f64)],
    count: usize,
    seed: u64,
    width: f64,
) -> Result<Vec<Vec<f64>>> {
    if !(width > 0.0 && width <= 1.0) {
        return Err(Error::Input("shell width must lie in (0, 1]".into()));
    }
    rejection_sample(density, spec, bbox, count, seed, spec.threshold * (1.0 - width))
}

fn rejection_sample<D: LogDensity + Sync>(
    density: &D,
    spec: &RegionSpec,
    bbox: &[(f64, f64)],
    count: usize,
    seed: u64,
    floor: f64,
) -> Result<Vec<Vec<f64>>> {
    if bbox.len() != spec.dim() {
        return Err(Error::Shape("bounding box dimension differs from the region".into()));
    }
    let domain = density.domain();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let batch = 4096;
    let mut drawn = 0usize;
    while out.len() < count {
        let cand: Vec<Vec<f64>> = (0..batch)
            .map(|_| bbox.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect())
            .collect();
        drawn += batch;
        let keep: Vec<Option<Vec<f64>>> = parallel::install(|| {
            cand.into_par_iter()
                .map(|t| {
                    if !domain.contains(&t) {
                        return Ok(None);
                    }
                    let s = lr_stat(spec.ell_mle, density.loglik(&t)?)?;
                    Ok((s <= spec.threshold && s >= floor).then_some(t))
                })
                .collect::<Result<_>>()
        })?;
        out.extend(keep.into_iter().flatten());
        if out.is_empty() && drawn >= 10_000_000 {
            return Err(Error::Input("bounding box misses the region".into()));
        }
    }
    out.truncate(count);
    Ok(out)
}

/// Writes `x…,lower,upper,fit` (per output component when `y_dim > 1`).
pub fn write_band_csv<W: Write>(w: W, band: &ConfidenceBand) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let xd = band.xs.first().map_or(1, |x| x.len());
    let yd = band.y_dim();
    let mut header: Vec<String> =
        if xd == 1 { vec!["x".into()] } else { (1..=xd).map(|i| format!("x{i}")).collect() };
    for c in 1..=yd {
        let sfx = if yd == 1 { String::new() } else { format!("_{c}") };
        header.extend([format!("lower{sfx}"), format!("upper{sfx}"), format!("fit{sfx}")]);
    }
    wr.write_record(&header)?;
    for i in 0..band.xs.len() {
        let mut row: Vec<String> = band.xs[i].iter().map(|v| format!("{v:.17e}")).collect();
        for c in 0..yd {
            for v in [band.lower[i][c], band.upper[i][c], band.fit[i][c]] {
                row.push(format!("{v:.17e}"));
            }
        }
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// `n` equally spaced scalar grid points on `[a, b]`.
pub fn linear_grid(a: f64, b: f64, n: usize) -> Vec<Vec<f64>> {
    match n {
        0 => Vec::new(),
        1 => vec![vec![a]],
        _ => (0..n).map(|i| vec![a + (b - a) * i as f64 / (n - 1) as f64]).collect(),
    }
}
