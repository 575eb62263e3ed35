//! Grid-based level-set extraction and evaluation accounting.
//!
//! [`grid_level_set`] is an independent marching-squares oracle for traced
//! boundaries; [`benchmark`] compares the evaluation cost of tracing against
//! grid scans.

use std::collections::HashMap;
use std::io::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::boundary::{find_boundary_point, trace_boundary_2d, RegionSpec, TraceOptions};
use crate::error::{Error, Result};
use crate::estimate::fd_hessian;
use crate::parallel;
use crate::stats::{Counted, LogDensity};

/// Evaluation counts and wall time of one run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalLedger {
    pub loglik_calls: usize,
    pub gradient_calls: usize,
    pub wall_time: f64,
}

impl EvalLedger {
    pub fn snapshot<D: LogDensity>(counted: &Counted<D>, elapsed: Duration) -> Self {
        EvalLedger {
            loglik_calls: counted.loglik_calls(),
            gradient_calls: counted.gradient_calls(),
            wall_time: elapsed.as_secs_f64(),
        }
    }

    /// Total density evaluations of either kind.
    pub fn total(&self) -> usize {
        self.loglik_calls + self.gradient_calls
    }
}

/// Marching-squares contour of `2(ℓ_MLE − ℓ)`.
#[derive(Clone, Debug)]
pub struct GridContour {
    pub polylines: Vec<Vec<[f64; 2]>>,
    pub ledger: EvalLedger,
    /// Extra evaluations at the centres of ambiguous cells (included in the ledger).
    pub saddle_evaluations: usize,
    /// The contour reaches the edge of the box, so parts of the level set
    /// may lie outside it.
    pub touches_bbox: bool,
    pub cell_diagonal: f64,
}

impl GridContour {
    /// All polylines as one point list.
    pub fn points(&self) -> Vec<Vec<f64>> {
        self.polylines.iter().flatten().map(|p| p.to_vec()).collect()
    }
}

/// Statistic on the grid; points outside the domain count as far outside.
fn grid_stat<D: LogDensity>(density: &D, spec: &RegionSpec, theta: &[f64]) -> f64 {
    match density.loglik(theta) {
        Ok(ell) if ell.is_finite() => 2.0 * (spec.ell_mle - ell),
        _ => 1e6 * spec.threshold.max(1.0),
    }
}

/// Grid coordinates `lo + (hi − lo)·i/(H − 1)`.
fn axis(b: (f64, f64), h: usize, i: usize) -> f64 {
    b.0 + (b.1 - b.0) * i as f64 / (h - 1) as f64
}

/// Marching squares on an `H × H` grid over `bbox`, at statistic value `level_value`.
pub fn grid_level_set<D: LogDensity + Sync>(
    density: &D,
    spec: &RegionSpec,
    bbox: [(f64, f64); 2],
    h: usize,
    level_value: f64,
) -> Result<GridContour> {
    if density.dim() != 2 {
        return Err(Error::Shape("marching squares needs a 2-parameter density".into()));
    }
    if h < 2 || !(bbox[0].0 < bbox[0].1 && bbox[1].0 < bbox[1].1) {
        return Err(Error::Input("grid needs H ≥ 2 and a non-empty box".into()));
    }
    let counted = Counted::new(density);
    let start = Instant::now();
    let values: Vec<Vec<f64>> = parallel::install(|| {
        (0..h)
            .into_par_iter()
            .map(|j| {
                let y = axis(bbox[1], h, j);
                (0..h).map(|i| grid_stat(&counted, spec, &[axis(bbox[0], h, i), y])).collect()
            })
            .collect()
    });
    let v = |i: usize, j: usize| values[j][i];
    let above = |i: usize, j: usize| v(i, j) > level_value;

    // Crossing point on the edge between two grid nodes, keyed by the edge.
    type Key = (usize, usize, u8);
    let mut points: HashMap<Key, [f64; 2]> = HashMap::new();
    let mut crossing = |key: Key| -> [f64; 2] {
        *points.entry(key).or_insert_with(|| {
            let (i, j, dir) = key;
            let (i2, j2) = if dir == 0 { (i + 1, j) } else { (i, j + 1) };
            let (a, b) = (v(i, j), v(i2, j2));
            let t = if b != a { ((level_value - a) / (b - a)).clamp(0.0, 1.0) } else { 0.5 };
            let p0 = [axis(bbox[0], h, i), axis(bbox[1], h, j)];
            let p1 = [axis(bbox[0], h, i2), axis(bbox[1], h, j2)];
            [p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1])]
        })
    };
    let mut segments: Vec<(Key, Key)> = Vec::new();
    let mut saddles = 0usize;
    for j in 0..h - 1 {
        for i in 0..h - 1 {
            // Corners: 0 = (i,j), 1 = (i+1,j), 2 = (i+1,j+1), 3 = (i,j+1).
            let case = (above(i, j) as u8)
                | (above(i + 1, j) as u8) << 1
                | (above(i + 1, j + 1) as u8) << 2
                | (above(i, j + 1) as u8) << 3;
            // Edges: bottom, right, top, left.
            let e = [(i, j, 0u8), (i + 1, j, 1u8), (i, j + 1, 0u8), (i, j, 1u8)];
            let pairs: &[(usize, usize)] = match case {
                0 | 15 => &[],
                1 | 14 => &[(3, 0)],
                2 | 13 => &[(0, 1)],
                3 | 12 => &[(3, 1)],
                4 | 11 => &[(1, 2)],
                6 | 9 => &[(0, 2)],
                7 | 8 => &[(3, 2)],
                5 | 10 => {
                    saddles += 1;
                    let c = [0.5 * (axis(bbox[0], h, i) + axis(bbox[0], h, i + 1)), 0.5 * (axis(bbox[1], h, j) + axis(bbox[1], h, j + 1))];
                    let centre_above = grid_stat(&counted, spec, &c) > level_value;
                    // Connect around the corners that share the centre's side.
                    if (case == 5) == centre_above {
                        &[(3, 2), (0, 1)]
                    } else {
                        &[(3, 0), (1, 2)]
                    }
                }
                _ => unreachable!(),
            };
            for &(a, b) in pairs {
                segments.push((e[a], e[b]));
            }
        }
    }
    for (a, b) in &segments {
        crossing(*a);
        crossing(*b);
    }
    let touches = segments.iter().any(|(a, b)| {
        [a, b].iter().any(|&&(i, j, dir)| (dir == 1 && (i == 0 || i == h - 1)) || (dir == 0 && (j == 0 || j == h - 1)))
    }) || (0..h).any(|k| !above(k, 0) || !above(k, h - 1) || !above(0, k) || !above(h - 1, k));

    // Chain segments into polylines through shared edge keys.
    let mut adj: HashMap<Key, Vec<usize>> = HashMap::new();
    for (s, (a, b)) in segments.iter().enumerate() {
        adj.entry(*a).or_default().push(s);
        adj.entry(*b).or_default().push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut polylines = Vec::new();
    let mut order: Vec<usize> = (0..segments.len()).collect();
    // Open chains start at keys with a single segment.
    order.sort_by_key(|&s| {
        let (a, b) = segments[s];
        usize::from(adj[&a].len() != 1 && adj[&b].len() != 1)
    });
    for s0 in order {
        if used[s0] {
            continue;
        }
        used[s0] = true;
        let (a, b) = segments[s0];
        let (mut start_key, mut cur) = (a, b);
        if adj[&b].len() == 1 && adj[&a].len() != 1 {
            start_key = b;
            cur = a;
        }
        let mut line = vec![points[&start_key], points[&cur]];
        loop {
            let next = adj[&cur].iter().copied().find(|&s| !used[s]);
            let Some(s) = next else { break };
            used[s] = true;
            let (a, b) = segments[s];
            cur = if a == cur { b } else { a };
            line.push(points[&cur]);
        }
        polylines.push(line);
    }
    let dx = (bbox[0].1 - bbox[0].0) / (h - 1) as f64;
    let dy = (bbox[1].1 - bbox[1].0) / (h - 1) as f64;
    Ok(GridContour {
        polylines,
        ledger: EvalLedger::snapshot(&counted, start.elapsed()),
        saddle_evaluations: saddles,
        touches_bbox: touches,
        cell_diagonal: (dx * dx + dy * dy).sqrt(),
    })
}

/// Evaluates the log-likelihood on a full `H^n` grid; returns the ledger.
pub fn grid_scan<D: LogDensity + Sync>(density: &D, bbox: &[(f64, f64)], h: usize) -> Result<EvalLedger> {
    let n = density.dim();
    if bbox.len() != n || h < 2 {
        return Err(Error::Input("grid scan needs one interval per parameter and H ≥ 2".into()));
    }
    let total = h.checked_pow(n as u32).ok_or_else(|| Error::Input("grid too large".into()))?;
    let counted = Counted::new(density);
    let start = Instant::now();
    parallel::install(|| {
        (0..total).into_par_iter().for_each(|mut k| {
            let mut theta = vec![0.0; n];
            for (d, t) in theta.iter_mut().enumerate() {
                *t = axis(bbox[d], h, k % h);
                k /= h;
            }
            let _ = counted.loglik(&theta);
        })
    });
    Ok(EvalLedger::snapshot(&counted, start.elapsed()))
}

fn point_segment(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let l2: f64 = ab.iter().map(|v| v * v).sum();
    let t = if l2 > 0.0 {
        (p.iter().zip(a).zip(&ab).map(|((p, a), d)| (p - a) * d).sum::<f64>() / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.iter().zip(a).zip(&ab).map(|((p, a), d)| (p - a - t * d).powi(2)).sum::<f64>().sqrt()
}

fn directed(a: &[Vec<f64>], b: &[Vec<Vec<f64>>]) -> f64 {
    parallel::install(|| {
        a.par_iter()
            .map(|p| {
                b.iter()
                    .flat_map(|line| {
                        let single = (line.len() == 1).then(|| point_segment(p, &line[0], &line[0]));
                        line.windows(2).map(|w| point_segment(p, &w[0], &w[1])).chain(single)
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .reduce(|| 0.0, f64::max)
    })
}

/// Symmetric Hausdorff distance between two sets of polylines, measuring
/// vertex-to-segment distances in both directions.
pub fn hausdorff(a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>]) -> f64 {
    let pa: Vec<Vec<f64>> = a.iter().flatten().cloned().collect();
    let pb: Vec<Vec<f64>> = b.iter().flatten().cloned().collect();
    if pa.is_empty() || pb.is_empty() {
        return f64::INFINITY;
    }
    directed(&pa, b).max(directed(&pb, a))
}

/// Converts a contour to generic polylines.
pub fn polylines_of(contour: &GridContour) -> Vec<Vec<Vec<f64>>> {
    contour.polylines.iter().map(|l| l.iter().map(|p| p.to_vec()).collect()).collect()
}

/// Box around `points`, enlarged `factor` times about its centre.
pub fn bbox_of(points: &[Vec<f64>], factor: f64) -> Vec<(f64, f64)> {
    let n = points.first().map_or(0, |p| p.len());
    (0..n)
        .map(|i| {
            let (lo, hi) = points
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[i]), hi.max(p[i])));
            let mid = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo) * factor;
            (mid - half, mid + half)
        })
        .collect()
}

/// Box from boundary points along `±e_i` and `±H⁻¹e_i`, enlarged 1.5 times,
/// clipped to the parameter domain.
pub fn auto_bbox<D: LogDensity>(density: &D, spec: &RegionSpec) -> Result<Vec<(f64, f64)>> {
    let n = spec.dim();
    let mut dirs: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut d = vec![0.0; n];
            d[i] = 1.0;
            d
        })
        .collect();
    let all: Vec<usize> = (0..n).collect();
    if let Some(inv) = fd_hessian(density, &spec.center, &all).ok().and_then(|h| h.try_inverse()) {
        dirs.extend((0..n).map(|i| inv.column(i).iter().copied().collect::<Vec<f64>>()));
    }
    let mut pts = vec![spec.center.clone()];
    for d in dirs.iter().filter(|d| d.iter().all(|v| v.is_finite()) && d.iter().any(|v| *v != 0.0)) {
        for s in [-1.0, 1.0] {
            let dir: Vec<f64> = d.iter().map(|v| s * v).collect();
            pts.push(find_boundary_point(density, spec, &dir, 1e12)?);
        }
    }
    let domain = density.domain();
    Ok(bbox_of(&pts, 1.5)
        .into_iter()
        .enumerate()
        .map(|(i, (lo, hi))| {
            let eps = 1e-9 * (hi - lo);
            (lo.max(domain.lower[i] + eps), hi.min(domain.upper[i] - eps))
        })
        .collect())
}

/// One row of the benchmark table.
#[derive(Clone, Debug)]
pub struct BenchRow {
    pub method: String,
    pub rtol: Option<f64>,
    pub grid: Option<usize>,
    pub ledger: EvalLedger,
    pub closure_defect: Option<f64>,
    pub failure: Option<String>,
}

/// One trace per tolerance and one grid scan per resolution, each with its
/// own ledger. Failed runs are recorded and the benchmark continues.
pub fn benchmark<D: LogDensity + Sync>(
    density: &D,
    spec: &RegionSpec,
    rtols: &[f64],
    grids: &[usize],
    bbox: Option<[(f64, f64); 2]>,
) -> Result<Vec<BenchRow>> {
    if spec.dim() != 2 {
        return Err(Error::Input("the benchmark compares two-dimensional traces".into()));
    }
    let seed = find_boundary_point(density, spec, &[1.0, 0.0], 1e12)?;
    let mut rows = Vec::new();
    for &rtol in rtols {
        let counted = Counted::new(density);
        let start = Instant::now();
        let r = trace_boundary_2d(&counted, spec, &seed, &TraceOptions::with_rtol(rtol));
        let ledger = EvalLedger::snapshot(&counted, start.elapsed());
        rows.push(BenchRow {
            method: "trace".into(),
            rtol: Some(rtol),
            grid: None,
            ledger,
            closure_defect: r.as_ref().ok().map(|c| c.closure_defect),
            failure: r.err().map(|e| e.to_string()),
        });
    }
    if !grids.is_empty() {
        let bbox = match bbox {
            Some(b) => b,
            None => {
                let b = auto_bbox(density, spec)?;
                [b[0], b[1]]
            }
        };
        for &h in grids {
            let r = grid_level_set(density, spec, bbox, h, spec.threshold);
            let (ledger, failure) = match &r {
                Ok(c) => (c.ledger, c.touches_bbox.then(|| "contour touches the bounding box".to_string())),
                Err(e) => (EvalLedger::default(), Some(e.to_string())),
            };
            rows.push(BenchRow {
                method: format!("grid:{h}"),
                rtol: None,
                grid: Some(h),
                ledger,
                closure_defect: None,
                failure,
            });
        }
    }
    Ok(rows)
}

/// Writes `rtol,gradient_calls,loglik_calls,wall_time_s,method[,status]`.
pub fn write_bench_csv<W: Write>(w: W, rows: &[BenchRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["rtol", "gradient_calls", "loglik_calls", "wall_time_s", "method", "status"])?;
    for r in rows {
        wr.write_record([
            r.rtol.map(|v| format!("{v:e}")).unwrap_or_default(),
            r.ledger.gradient_calls.to_string(),
            r.ledger.loglik_calls.to_string(),
            format!("{:.6}", r.ledger.wall_time),
            r.method.clone(),
            r.failure.clone().map_or_else(|| "ok".to_string(), |f| format!("failed: {f}")),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::Input("slope needs at least two positive pairs".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}
