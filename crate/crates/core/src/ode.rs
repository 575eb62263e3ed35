//! Embedded Dormand–Prince 5(4) integrator with adaptive step control,
//! free fourth-order dense output, event location and evaluation counting.
//!
//! The state type is generic over [`Scalar`], so dual numbers can be pushed
//! through a solve to obtain forward sensitivities. Step-size decisions use
//! every slot of the state (primal and derivatives).

use crate::diff::Scalar;
use crate::error::{Error, Result};

// Butcher tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// Error coefficients (5th minus 4th order weights).
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Dense output.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const BETA: f64 = 0.04;

#[derive(Clone, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Initial step; chosen automatically when `None`.
    pub h0: Option<f64>,
    pub max_step: Option<f64>,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-8,
            atol: 1e-8,
            max_steps: 100_000,
            h0: None,
            max_step: None,
        }
    }
}

impl OdeOptions {
    pub fn with_tol(rtol: f64, atol: f64) -> Self {
        OdeOptions {
            rtol,
            atol,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
    Any,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventAction {
    Terminate,
    Record,
}

/// Scalar event function `g(t, y)`; the primal state is passed.
pub struct EventSpec<'a> {
    pub function: Box<dyn FnMut(f64, &[f64]) -> f64 + 'a>,
    pub direction: Direction,
    pub action: EventAction,
    /// Optional filter evaluated at the located event; rejected crossings are ignored.
    pub guard: Option<Box<dyn FnMut(f64, &[f64]) -> bool + 'a>>,
}

impl<'a> EventSpec<'a> {
    pub fn new(
        function: impl FnMut(f64, &[f64]) -> f64 + 'a,
        direction: Direction,
        action: EventAction,
    ) -> Self {
        EventSpec {
            function: Box::new(function),
            direction,
            action,
            guard: None,
        }
    }

    pub fn with_guard(mut self, guard: impl FnMut(f64, &[f64]) -> bool + 'a) -> Self {
        self.guard = Some(Box::new(guard));
        self
    }
}

#[derive(Clone, Debug)]
pub struct EventRecord {
    pub index: usize,
    pub t: f64,
    pub state: Vec<f64>,
}

#[derive(Clone, Debug)]
struct Segment<S> {
    t0: f64,
    h: f64,
    coeffs: [Vec<S>; 5],
}

/// Step states plus the piecewise dense interpolant.
#[derive(Clone, Debug)]
pub struct OdeSolution<S> {
    pub ts: Vec<f64>,
    pub ys: Vec<Vec<S>>,
    segments: Vec<Segment<S>>,
    pub rhs_evaluations: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub events: Vec<EventRecord>,
    pub terminated_by_event: bool,
}

impl<S: Scalar> OdeSolution<S> {
    pub fn t_start(&self) -> f64 {
        self.ts[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.ts.last().unwrap()
    }

    pub fn y_end(&self) -> &[S] {
        self.ys.last().unwrap()
    }

    /// Dense output at `t`; clamped to the integrated span.
    pub fn eval(&self, t: f64) -> Vec<S> {
        if self.segments.is_empty() {
            return self.ys[0].clone();
        }
        let forward = self.t_end() >= self.t_start();
        // Find the segment containing t.
        let idx = if forward {
            self.segments.partition_point(|s| s.t0 + s.h < t)
        } else {
            self.segments.partition_point(|s| s.t0 + s.h > t)
        }
        .min(self.segments.len() - 1);
        let seg = &self.segments[idx];
        if t == seg.t0 {
            return self.ys[idx].clone();
        }
        let mut th = (t - seg.t0) / seg.h;
        th = th.clamp(0.0, 1.0);
        if th == 1.0 && idx + 1 < self.ys.len() && self.ts[idx + 1] == seg.t0 + seg.h {
            return self.ys[idx + 1].clone();
        }
        interpolate(&seg.coeffs, th)
    }

    /// Primal values of the dense output at `t`.
    pub fn eval_values(&self, t: f64) -> Vec<f64> {
        self.eval(t).iter().map(|v| v.value()).collect()
    }
}

fn interpolate<S: Scalar>(c: &[Vec<S>; 5], th: f64) -> Vec<S> {
    let th1 = 1.0 - th;
    (0..c[0].len())
        .map(|i| c[0][i] + (c[1][i] + (c[2][i] + (c[3][i] + c[4][i] * th1) * th) * th1) * th)
        .collect()
}

fn rms_error<S: Scalar>(err: &[S], a: &[S], b: &[S], atol: f64, rtol: f64) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..err.len() {
        let (s, c) = S::scaled_error_sq(&err[i], &a[i], &b[i], atol, rtol);
        sum += s;
        count += c;
    }
    (sum / count.max(1) as f64).sqrt()
}

fn axpy<S: Scalar>(y: &[S], h: f64, terms: &[(f64, &[S])], out: &mut [S]) {
    for i in 0..y.len() {
        let mut acc = y[i];
        for (c, k) in terms {
            if *c != 0.0 {
                acc += k[i] * (h * c);
            }
        }
        out[i] = acc;
    }
}

/// Integrate `y' = rhs(t, y)` over `t_span` (either direction).
///
/// `rhs(t, y, dy)` writes the derivative into `dy`. Terminal events stop the
/// solve at the located event time.
pub fn integrate<S, F>(
    mut rhs: F,
    y0: &[S],
    t_span: (f64, f64),
    opts: &OdeOptions,
    events: &mut [EventSpec<'_>],
) -> Result<OdeSolution<S>>
where
    S: Scalar,
    F: FnMut(f64, &[S], &mut [S]) -> Result<()>,
{
    if !(opts.rtol >= 1e-14 && opts.rtol <= 1e-2) {
        return Err(Error::Domain(format!("rtol {} outside [1e-14, 1e-2]", opts.rtol)));
    }
    let (t0, t1) = t_span;
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let n = y0.len();
    let zero = S::from_f64(0.0);
    let mut sol = OdeSolution {
        ts: vec![t0],
        ys: vec![y0.to_vec()],
        segments: Vec::new(),
        rhs_evaluations: 0,
        accepted_steps: 0,
        rejected_steps: 0,
        events: Vec::new(),
        terminated_by_event: false,
    };
    if t0 == t1 {
        return Ok(sol);
    }

    let mut y = y0.to_vec();
    let mut k1 = vec![zero; n];
    let mut k2 = vec![zero; n];
    let mut k3 = vec![zero; n];
    let mut k4 = vec![zero; n];
    let mut k5 = vec![zero; n];
    let mut k6 = vec![zero; n];
    let mut k7 = vec![zero; n];
    let mut tmp = vec![zero; n];
    let mut ynew = vec![zero; n];
    let mut err = vec![zero; n];

    let mut evals = 0usize;
    let mut call = |t: f64, y: &[S], dy: &mut [S], evals: &mut usize| -> Result<()> {
        *evals += 1;
        rhs(t, y, dy)
    };

    call(t0, &y, &mut k1, &mut evals)?;

    let span = (t1 - t0).abs();
    let max_step = opts.max_step.unwrap_or(span).min(span);
    let mut h = match opts.h0 {
        Some(h) => h.abs(),
        None => {
            // Automatic initial step from the rhs magnitude.
            let d0 = rms_error(&y, &y, &y, opts.atol, opts.rtol);
            let d1 = rms_error(&k1, &y, &y, opts.atol, opts.rtol);
            let mut h0 = if d0 < 1e-10 || d1 < 1e-10 { 1e-6 } else { 0.01 * d0 / d1 };
            h0 = h0.min(max_step);
            axpy(&y, dir * h0, &[(1.0, &k1)], &mut tmp);
            call(t0 + dir * h0, &tmp, &mut k2, &mut evals)?;
            let diff: Vec<S> = (0..n).map(|i| (k2[i] - k1[i]) / h0).collect();
            let d2 = rms_error(&diff, &y, &y, opts.atol, opts.rtol);
            let dm = d1.max(d2);
            let h1 = if dm <= 1e-15 {
                (h0 * 1e-3).max(1e-6)
            } else {
                (0.01 / dm).powf(0.2)
            };
            (100.0 * h0).min(h1)
        }
    }
    .min(max_step);

    let mut g_prev: Vec<f64> = {
        let yv: Vec<f64> = y.iter().map(|v| v.value()).collect();
        events.iter_mut().map(|e| (e.function)(t0, &yv)).collect()
    };

    let mut t = t0;
    let mut facold = 1e-4f64;
    let mut last_rejected = false;
    let mut steps = 0usize;

    loop {
        if steps >= opts.max_steps {
            return Err(Error::StepBudget {
                max_steps: opts.max_steps,
                t,
            });
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::Integration {
                t,
                reason: "step size underflow".into(),
                state: y.iter().map(|v| v.value()).collect(),
                steps: sol.accepted_steps,
            });
        }
        let mut last = false;
        if (t + dir * h - t1) * dir >= 0.0 || ((t1 - t) * dir - h).abs() < 1e-12 * span {
            h = (t1 - t) * dir;
            last = true;
        }
        let hs = dir * h;
        steps += 1;

        axpy(&y, hs, &[(A21, &k1)], &mut tmp);
        call(t + C2 * hs, &tmp, &mut k2, &mut evals)?;
        axpy(&y, hs, &[(A31, &k1), (A32, &k2)], &mut tmp);
        call(t + C3 * hs, &tmp, &mut k3, &mut evals)?;
        axpy(&y, hs, &[(A41, &k1), (A42, &k2), (A43, &k3)], &mut tmp);
        call(t + C4 * hs, &tmp, &mut k4, &mut evals)?;
        axpy(&y, hs, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], &mut tmp);
        call(t + C5 * hs, &tmp, &mut k5, &mut evals)?;
        axpy(
            &y,
            hs,
            &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            &mut tmp,
        );
        call(t + hs, &tmp, &mut k6, &mut evals)?;
        axpy(
            &y,
            hs,
            &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
            &mut ynew,
        );
        let tnew = if last { t1 } else { t + hs };
        call(tnew, &ynew, &mut k7, &mut evals)?;

        for i in 0..n {
            err[i] = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * hs;
        }
        let finite = ynew.iter().all(|v| v.all_finite()) && k7.iter().all(|v| v.all_finite());
        let e = if finite {
            rms_error(&err, &y, &ynew, opts.atol, opts.rtol)
        } else {
            f64::INFINITY
        };

        if !e.is_finite() {
            sol.rejected_steps += 1;
            last_rejected = true;
            h *= MIN_FACTOR;
            continue;
        }

        let fac11 = e.powf(0.2 - BETA * 0.75);
        let fac = (fac11 / facold.powf(BETA) / SAFETY).clamp(1.0 / MAX_FACTOR, 1.0 / MIN_FACTOR);
        let mut hnew = h / fac;

        if e <= 1.0 {
            facold = e.max(1e-4);
            sol.accepted_steps += 1;

            // Dense output coefficients.
            let mut c0 = Vec::with_capacity(n);
            let mut c1 = Vec::with_capacity(n);
            let mut c2 = Vec::with_capacity(n);
            let mut c3 = Vec::with_capacity(n);
            let mut c4 = Vec::with_capacity(n);
            for i in 0..n {
                let ydiff = ynew[i] - y[i];
                let bspl = k1[i] * hs - ydiff;
                c0.push(y[i]);
                c1.push(ydiff);
                c2.push(bspl);
                c3.push(ydiff - k7[i] * hs - bspl);
                c4.push(
                    (k1[i] * D1 + k3[i] * D3 + k4[i] * D4 + k5[i] * D5 + k6[i] * D6 + k7[i] * D7) * hs,
                );
            }
            let seg = Segment {
                t0: t,
                h: tnew - t,
                coeffs: [c0, c1, c2, c3, c4],
            };

            // Events on the accepted step.
            let ynew_v: Vec<f64> = ynew.iter().map(|v| v.value()).collect();
            let mut stop: Option<(f64, Vec<S>)> = None;
            if !events.is_empty() {
                let mut found: Vec<(f64, usize, Vec<S>)> = Vec::new();
                for (ei, ev) in events.iter_mut().enumerate() {
                    let gn = (ev.function)(tnew, &ynew_v);
                    let gp = g_prev[ei];
                    g_prev[ei] = gn;
                    let crossed = match ev.direction {
                        Direction::Up => gp < 0.0 && gn >= 0.0,
                        Direction::Down => gp > 0.0 && gn <= 0.0,
                        Direction::Any => (gp < 0.0 && gn >= 0.0) || (gp > 0.0 && gn <= 0.0),
                    };
                    if !crossed {
                        continue;
                    }
                    let te = locate_event(&mut ev.function, &seg, gp, gn);
                    let ye = interpolate(&seg.coeffs, ((te - seg.t0) / seg.h).clamp(0.0, 1.0));
                    let ye_v: Vec<f64> = ye.iter().map(|v| v.value()).collect();
                    let accepted = match ev.guard.as_mut() {
                        Some(gd) => gd(te, &ye_v),
                        None => true,
                    };
                    if accepted {
                        found.push((te, ei, ye));
                    }
                }
                found.sort_by(|a, b| ((a.0 - t) * dir).total_cmp(&((b.0 - t) * dir)));
                for (te, ei, ye) in found {
                    sol.events.push(EventRecord {
                        index: ei,
                        t: te,
                        state: ye.iter().map(|v| v.value()).collect(),
                    });
                    if events[ei].action == EventAction::Terminate {
                        stop = Some((te, ye));
                        break;
                    }
                }
            }

            sol.segments.push(seg);
            if let Some((te, ye)) = stop {
                sol.ts.push(te);
                sol.ys.push(ye);
                sol.terminated_by_event = true;
                break;
            }
            sol.ts.push(tnew);
            sol.ys.push(ynew.clone());

            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            t = tnew;
            if last {
                break;
            }
            if last_rejected {
                hnew = hnew.min(h);
            }
            last_rejected = false;
            h = hnew.min(max_step);
        } else {
            sol.rejected_steps += 1;
            last_rejected = true;
            hnew = h / (1.0 / MIN_FACTOR).min(fac11 / SAFETY);
            h = hnew;
        }
    }
    sol.rhs_evaluations = evals;
    Ok(sol)
}

/// Root of `g` along the dense interpolant of one step (Anderson–Björck).
fn locate_event<S: Scalar>(
    g: &mut (dyn FnMut(f64, &[f64]) -> f64 + '_),
    seg: &Segment<S>,
    g0: f64,
    g1: f64,
) -> f64 {
    let eval = |g: &mut (dyn FnMut(f64, &[f64]) -> f64 + '_), th: f64| {
        let y: Vec<f64> = interpolate(&seg.coeffs, th).iter().map(|v| v.value()).collect();
        g(seg.t0 + th * seg.h, &y)
    };
    let scale = g0.abs().max(g1.abs()).max(1e-300);
    let (mut a, mut fa) = (0.0f64, g0);
    let (mut b, mut fb) = (1.0f64, g1);
    if fb == 0.0 {
        return seg.t0 + seg.h;
    }
    let mut side = 0i32;
    for _ in 0..200 {
        let c = (a * fb - b * fa) / (fb - fa);
        let c = if c.is_finite() && c > a && c < b { c } else { 0.5 * (a + b) };
        let fc = eval(g, c);
        if fc.abs() <= 1e-13 * scale || (b - a) < 1e-15 {
            return seg.t0 + c * seg.h;
        }
        if (fc > 0.0) == (fb > 0.0) {
            b = c;
            fb = fc;
            if side == 1 {
                let m = 1.0 - fb / fc;
                fa *= if m > 0.0 { m } else { 0.5 };
            }
            side = 1;
        } else {
            a = c;
            fa = fc;
            if side == -1 {
                let m = 1.0 - fa / fc;
                fb *= if m > 0.0 { m } else { 0.5 };
            }
            side = -1;
        }
    }
    seg.t0 + 0.5 * (a + b) * seg.h
}
