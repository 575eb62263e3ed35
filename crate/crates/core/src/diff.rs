//! Forward-mode automatic differentiation.
//!
//! [`Dual`] carries a value together with a fixed number of directional
//! derivatives. Nesting a dual inside another (`Dual<Dual<f64, N>, N>`) yields
//! exact second derivatives, which is how [`hessian`] works. Model code is
//! written once against the [`Scalar`] trait and evaluated with `f64`, first-
//! or second-order duals as needed.
//!
//! Only smooth elementary operations are offered. There is deliberately no
//! `abs`, `max` or comparison-based branching on [`Scalar`].

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

/// Numeric type usable inside models, integrators and quadrature.
pub trait Scalar:
    Copy
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    fn from_f64(v: f64) -> Self;
    /// Primal value.
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn powf(self, p: f64) -> Self;
    fn powi(self, n: i32) -> Self;

    fn log10(self) -> Self {
        self.ln() * std::f64::consts::LOG10_E
    }

    /// `self^e` for a positive base.
    fn pow(self, e: Self) -> Self {
        (e * self.ln()).exp()
    }

    fn recip(self) -> Self {
        Self::from_f64(1.0) / self
    }

    /// Largest absolute value over the primal and every derivative slot.
    fn magnitude(&self) -> f64;

    /// True when the primal and all derivative slots are finite.
    fn all_finite(&self) -> bool;

    /// Sum of squared scaled errors over all slots, and the slot count.
    ///
    /// Every slot `e` of `err` is divided by `atol + rtol * max(|a|, |b|)`
    /// using the matching slots of `a` and `b`. Integrators use this so that
    /// derivative slots are error-controlled alongside the primal.
    fn scaled_error_sq(err: &Self, a: &Self, b: &Self, atol: f64, rtol: f64) -> (f64, usize);
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    #[inline]
    fn log10(self) -> Self {
        f64::log10(self)
    }
    #[inline]
    fn pow(self, e: Self) -> Self {
        f64::powf(self, e)
    }
    #[inline]
    fn magnitude(&self) -> f64 {
        self.abs()
    }
    #[inline]
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
    #[inline]
    fn scaled_error_sq(err: &Self, a: &Self, b: &Self, atol: f64, rtol: f64) -> (f64, usize) {
        let sc = atol + rtol * a.abs().max(b.abs());
        ((err / sc).powi(2), 1)
    }
}

/// Dual number with `N` derivative directions over the scalar type `T`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T, const N: usize> {
    pub re: T,
    pub eps: [T; N],
}

impl<T: Scalar, const N: usize> Dual<T, N> {
    pub fn constant(re: T) -> Self {
        Dual {
            re,
            eps: [T::from_f64(0.0); N],
        }
    }

    /// Value with unit derivative in direction `dir` (ignored if `dir >= N`).
    pub fn variable(re: T, dir: usize) -> Self {
        let mut d = Self::constant(re);
        if dir < N {
            d.eps[dir] = T::from_f64(1.0);
        }
        d
    }

    #[inline]
    fn chain(self, f: T, df: T) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e = *e * df;
        }
        Dual { re: f, eps }
    }
}

impl<T: Scalar, const N: usize> Add for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (e, r) in eps.iter_mut().zip(rhs.eps.iter()) {
            *e = *e + *r;
        }
        Dual {
            re: self.re + rhs.re,
            eps,
        }
    }
}

impl<T: Scalar, const N: usize> Sub for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (e, r) in eps.iter_mut().zip(rhs.eps.iter()) {
            *e = *e - *r;
        }
        Dual {
            re: self.re - rhs.re,
            eps,
        }
    }
}

impl<T: Scalar, const N: usize> Mul for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (e, r) in eps.iter_mut().zip(rhs.eps.iter()) {
            *e = self.re * *r + *e * rhs.re;
        }
        Dual {
            re: self.re * rhs.re,
            eps,
        }
    }
}

impl<T: Scalar, const N: usize> Div for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = rhs.re.recip();
        let re = self.re * inv;
        let mut eps = self.eps;
        for (e, r) in eps.iter_mut().zip(rhs.eps.iter()) {
            *e = (*e - re * *r) * inv;
        }
        Dual { re, eps }
    }
}

impl<T: Scalar, const N: usize> Neg for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e = -*e;
        }
        Dual { re: -self.re, eps }
    }
}

impl<T: Scalar, const N: usize> Add<f64> for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: f64) -> Self {
        Dual {
            re: self.re + rhs,
            eps: self.eps,
        }
    }
}

impl<T: Scalar, const N: usize> Sub<f64> for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: f64) -> Self {
        Dual {
            re: self.re - rhs,
            eps: self.eps,
        }
    }
}

impl<T: Scalar, const N: usize> Mul<f64> for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: f64) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e = *e * rhs;
        }
        Dual {
            re: self.re * rhs,
            eps,
        }
    }
}

impl<T: Scalar, const N: usize> Div<f64> for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        self * (1.0 / rhs)
    }
}

macro_rules! assign_op {
    ($tr:ident, $m:ident, $op:tt) => {
        impl<T: Scalar, const N: usize> $tr for Dual<T, N> {
            #[inline]
            fn $m(&mut self, rhs: Self) {
                *self = *self $op rhs;
            }
        }
    };
}
assign_op!(AddAssign, add_assign, +);
assign_op!(SubAssign, sub_assign, -);
assign_op!(MulAssign, mul_assign, *);
assign_op!(DivAssign, div_assign, /);

impl<T: Scalar, const N: usize> Scalar for Dual<T, N> {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Self::constant(T::from_f64(v))
    }
    #[inline]
    fn value(&self) -> f64 {
        self.re.value()
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    #[inline]
    fn ln(self) -> Self {
        self.chain(self.re.ln(), self.re.recip())
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, (s * 2.0).recip())
    }
    #[inline]
    fn powf(self, p: f64) -> Self {
        let pm1 = self.re.powf(p - 1.0);
        self.chain(pm1 * self.re, pm1 * p)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::from_f64(1.0);
        }
        let pm1 = self.re.powi(n - 1);
        self.chain(pm1 * self.re, pm1 * n as f64)
    }
    fn magnitude(&self) -> f64 {
        self.eps
            .iter()
            .fold(self.re.magnitude(), |m, e| m.max(e.magnitude()))
    }
    fn all_finite(&self) -> bool {
        self.re.all_finite() && self.eps.iter().all(|e| e.all_finite())
    }
    fn scaled_error_sq(err: &Self, a: &Self, b: &Self, atol: f64, rtol: f64) -> (f64, usize) {
        let (mut s, mut c) = T::scaled_error_sq(&err.re, &a.re, &b.re, atol, rtol);
        for i in 0..N {
            let (si, ci) = T::scaled_error_sq(&err.eps[i], &a.eps[i], &b.eps[i], atol, rtol);
            s += si;
            c += ci;
        }
        (s, c)
    }
}

/// A scalar function of the parameter vector, generic over the number type.
pub trait ScalarFn: Sync {
    fn eval<S: Scalar>(&self, theta: &[S]) -> Result<S>;
}

/// A vector-valued function of the parameter vector.
pub trait VectorFn: Sync {
    fn eval<S: Scalar>(&self, theta: &[S]) -> Result<Vec<S>>;
}

/// Directions per pass for first derivatives with `n` parameters.
const CHUNK: usize = 8;

fn check_finite(v: f64, what: &'static str, index: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { what, index })
    }
}

fn seed<const N: usize>(theta: &[f64], offset: usize) -> Vec<Dual<f64, N>> {
    theta
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            if k >= offset && k < offset + N {
                Dual::variable(t, k - offset)
            } else {
                Dual::constant(t)
            }
        })
        .collect()
}

fn gradient_pass<F: ScalarFn, const N: usize>(
    f: &F,
    theta: &[f64],
    offset: usize,
    out: &mut [f64],
) -> Result<f64> {
    let x = seed::<N>(theta, offset);
    let y = f.eval(&x)?;
    let end = (offset + N).min(theta.len());
    for k in offset..end {
        out[k] = check_finite(y.eps[k - offset], "gradient", k)?;
    }
    check_finite(y.re, "function value", 0)
}

/// Value and gradient of `f` at `theta`.
pub fn value_and_gradient<F: ScalarFn>(f: &F, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = theta.len();
    let mut g = vec![0.0; n];
    let v = match n {
        0 => check_finite(f.eval(theta)?, "function value", 0)?,
        1..=2 => gradient_pass::<F, 2>(f, theta, 0, &mut g)?,
        3..=4 => gradient_pass::<F, 4>(f, theta, 0, &mut g)?,
        _ => {
            let mut v = 0.0;
            for offset in (0..n).step_by(CHUNK) {
                v = gradient_pass::<F, CHUNK>(f, theta, offset, &mut g)?;
            }
            v
        }
    };
    Ok((v, g))
}

/// Gradient `(∂f/∂θ_1, …, ∂f/∂θ_n)` exact to rounding.
pub fn gradient<F: ScalarFn>(f: &F, theta: &[f64]) -> Result<Vec<f64>> {
    value_and_gradient(f, theta).map(|(_, g)| g)
}

fn jacobian_pass<F: VectorFn, const N: usize>(
    f: &F,
    theta: &[f64],
    offset: usize,
    out: &mut Vec<Vec<f64>>,
) -> Result<Vec<f64>> {
    let n = theta.len();
    let x = seed::<N>(theta, offset);
    let y = f.eval(&x)?;
    if out.is_empty() {
        *out = vec![vec![0.0; n]; y.len()];
    }
    let end = (offset + N).min(n);
    let mut values = Vec::with_capacity(y.len());
    for (i, yi) in y.iter().enumerate() {
        for k in offset..end {
            out[i][k] = check_finite(yi.eps[k - offset], "jacobian", i)?;
        }
        values.push(check_finite(yi.re, "function value", i)?);
    }
    Ok(values)
}

/// Value and Jacobian of a vector function; row `i`, column `a` is `∂h^i/∂θ^a`.
pub fn value_and_jacobian<F: VectorFn>(f: &F, theta: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = theta.len();
    let mut jac = Vec::new();
    let values = match n {
        0 => {
            let v = f.eval(theta)?;
            jac = vec![Vec::new(); v.len()];
            v
        }
        1..=2 => jacobian_pass::<F, 2>(f, theta, 0, &mut jac)?,
        3..=4 => jacobian_pass::<F, 4>(f, theta, 0, &mut jac)?,
        _ => {
            let mut v = Vec::new();
            for offset in (0..n).step_by(CHUNK) {
                v = jacobian_pass::<F, CHUNK>(f, theta, offset, &mut jac)?;
            }
            v
        }
    };
    Ok((values, jac))
}

pub fn jacobian<F: VectorFn>(f: &F, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
    value_and_jacobian(f, theta).map(|(_, j)| j)
}

fn hessian_block<F: ScalarFn, const N: usize>(
    f: &F,
    theta: &[f64],
    inner: usize,
    outer: usize,
    out: &mut [Vec<f64>],
) -> Result<()> {
    let n = theta.len();
    let x: Vec<Dual<Dual<f64, N>, N>> = theta
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let re = if k >= inner && k < inner + N {
                Dual::variable(t, k - inner)
            } else {
                Dual::constant(t)
            };
            let mut d = Dual::constant(re);
            if k >= outer && k < outer + N {
                d.eps[k - outer] = Dual::from_f64(1.0);
            }
            d
        })
        .collect();
    let y = f.eval(&x)?;
    for b in outer..(outer + N).min(n) {
        for a in inner..(inner + N).min(n) {
            out[b][a] = check_finite(y.eps[b - outer].eps[a - inner], "hessian", b * n + a)?;
        }
    }
    Ok(())
}

/// Symmetric matrix of second partials by nested forward passes.
pub fn hessian<F: ScalarFn>(f: &F, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = theta.len();
    let mut h = vec![vec![0.0; n]; n];
    match n {
        0 => {}
        1..=2 => hessian_block::<F, 2>(f, theta, 0, 0, &mut h)?,
        3..=4 => hessian_block::<F, 4>(f, theta, 0, 0, &mut h)?,
        _ => {
            for outer in (0..n).step_by(4) {
                for inner in (0..n).step_by(4) {
                    hessian_block::<F, 4>(f, theta, inner, outer, &mut h)?;
                }
            }
        }
    }
    // Mixed partials from the two nesting orders agree to rounding; average them.
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (h[i][j] + h[j][i]);
            h[i][j] = m;
            h[j][i] = m;
        }
    }
    Ok(h)
}

/// Central finite-difference gradient with step `h_i = rel * (1 + |θ_i|)`.
///
/// Used as an independent check on the forward-mode results.
pub fn fd_gradient(f: impl Fn(&[f64]) -> Result<f64>, theta: &[f64], rel: f64) -> Result<Vec<f64>> {
    let mut g = vec![0.0; theta.len()];
    let mut x = theta.to_vec();
    for i in 0..theta.len() {
        let h = rel * (1.0 + theta[i].abs());
        x[i] = theta[i] + h;
        let fp = f(&x)?;
        x[i] = theta[i] - h;
        let fm = f(&x)?;
        x[i] = theta[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}
