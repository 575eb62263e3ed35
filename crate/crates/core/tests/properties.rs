mod common;

use common::*;
use confbound::bands::{confidence_band, BandOptions};
use confbound::boundary::{lie_bracket, orth_vector_field, polygon_contains, AlphaVector, Boundary, Containment};
use confbound::diff::fd_gradient;
use confbound::infogeo::{fisher_metric, geodesic, GeodesicOptions};
use confbound::model::{Embedding, FnDensity, ToyKind, BUILTIN_MODELS};
use confbound::stats::kl_gaussian;
use confbound::{AnyModel, DataSet, LogDensity, Model, Result, Scalar, ScalarFn};
use proptest::prelude::*;
use std::sync::OnceLock;

fn fitted(name: &str) -> &'static Fitted {
    static CACHE: OnceLock<Vec<(String, Fitted)>> = OnceLock::new();
    let all = CACHE.get_or_init(|| {
        BUILTIN_MODELS
            .iter()
            .map(|&n| {
                let f = match n {
                    "sir" => Fitted::sir(),
                    "distance-modulus" => {
                        let m = AnyModel::builtin(n).unwrap();
                        let g = m.initial_guess();
                        Fitted::new(m, DataSet::synthetic_supernova(120, 7).unwrap(), &g)
                    }
                    _ => Fitted::toy(ToyKind::from_name(n).unwrap()),
                };
                (n.to_string(), f)
            })
            .collect()
    });
    &all.iter().find(|(n, _)| n == name).unwrap().1
}

/// A point near the MLE, `θ_i = θ̂_i (1 + 0.5 u_i) + 0.05 v_i`, with the
/// additive part dropped for models whose parameters span decades.
fn perturbed(f: &Fitted, u: &[f64], v: &[f64]) -> Vec<f64> {
    let additive = if f.model.name() == "sir" { 0.0 } else { 0.05 };
    f.fit.theta_mle.iter().enumerate().map(|(i, t)| t * (1.0 + 0.5 * u[i]) + additive * v[i]).collect()
}

fn unit3() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 3)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn field_annihilates_every_builtin_gradient(
        m in 0..BUILTIN_MODELS.len(), u in unit3(), v in unit3(), a in unit3()
    ) {
        let f = fitted(BUILTIN_MODELS[m]);
        let theta = perturbed(f, &u, &v);
        prop_assume!(f.model.domain().contains(&theta));
        let n = theta.len();
        let alpha = AlphaVector::project(&a[..n]).unwrap();
        prop_assume!(norm(alpha.as_slice()) > 1e-3);
        let g = f.density().gradient(&theta).unwrap();
        let x = orth_vector_field(&g, &alpha).unwrap();
        prop_assert!(dot(&g, &x).abs() <= 1e-10 * norm(&g) * norm(&x), "{} at {:?}", BUILTIN_MODELS[m], theta);
    }

    #[test]
    fn alpha_projection_lies_in_the_hyperplane(a in prop::collection::vec(-1e3..1e3f64, 2..8)) {
        let alpha = AlphaVector::project(&a).unwrap();
        let s: f64 = alpha.as_slice().iter().sum();
        prop_assert!(s.abs() <= 1e-14 * alpha.as_slice().iter().map(|x| x.abs()).sum::<f64>().max(1.0));
    }

    #[test]
    fn field_annihilates_arbitrary_gradients(
        g in prop::collection::vec(-1e3..1e3f64, 2..7), a in prop::collection::vec(-1.0..1.0f64, 7)
    ) {
        let alpha = AlphaVector::project(&a[..g.len()]).unwrap();
        prop_assume!(norm(&g) > 1e-6 && norm(alpha.as_slice()) > 1e-6);
        let x = orth_vector_field(&g, &alpha).unwrap();
        prop_assert!(dot(&g, &x).abs() <= 1e-10 * norm(&g) * norm(&x).max(1e-300));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_matches_finite_differences(m in 0..BUILTIN_MODELS.len(), u in unit3(), v in unit3()) {
        let f = fitted(BUILTIN_MODELS[m]);
        let theta = perturbed(f, &u, &v);
        prop_assume!(f.model.domain().contains(&theta));
        let d = f.density();
        let ad = d.gradient(&theta).unwrap();
        let coarse = fd_gradient(|t| d.loglik(t), &theta, 1e-6).unwrap();
        let fine = fd_gradient(|t| d.loglik(t), &theta, 5e-7).unwrap();
        let fd: Vec<f64> = coarse.iter().zip(&fine).map(|(c, f)| (4.0 * f - c) / 3.0).collect();
        for i in 0..theta.len() {
            let rel = (ad[i] - fd[i]).abs() / ad[i].abs();
            prop_assert!(rel < 1e-5, "{} component {i}: ad {} fd {}", BUILTIN_MODELS[m], ad[i], fd[i]);
        }
    }

    #[test]
    fn kl_hessian_is_the_fisher_metric(m in 0..BUILTIN_MODELS.len(), u in unit3(), v in unit3()) {
        let f = fitted(BUILTIN_MODELS[m]);
        let theta = perturbed(f, &u, &v);
        prop_assume!(f.model.domain().contains(&theta));
        let emb = Embedding::new(&f.model, &f.data);
        let h0 = emb.eval_f64(&theta).unwrap();
        let kl = |psi: &[f64]| kl_gaussian(&h0, &emb.eval_f64(psi).unwrap(), f.data.covariance()).unwrap();
        let n = theta.len();
        let step: Vec<f64> = theta.iter().map(|t| 1e-4 * t.abs().max(1e-3)).collect();
        let g = fisher_metric(&f.model, &f.data, &theta).unwrap().g;
        for i in 0..n {
            for j in 0..n {
                let at = |si: f64, sj: f64| {
                    let mut p = theta.clone();
                    p[i] += si * step[i];
                    p[j] += sj * step[j];
                    kl(&p)
                };
                let h = (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * step[i] * step[j]);
                let scale = (g[(i, i)] * g[(j, j)]).sqrt();
                prop_assert!((h - g[(i, j)]).abs() < 1e-5 * scale,
                    "{} ({i},{j}): {} vs {}", BUILTIN_MODELS[m], h, g[(i, j)]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn geodesics_conserve_metric_speed(m in 0..BUILTIN_MODELS.len(), phi in 0.0..std::f64::consts::TAU) {
        let f = fitted(BUILTIN_MODELS[m]);
        let n = f.fit.theta_mle.len();
        let mut v0 = vec![0.0; n];
        v0[0] = phi.cos() * f.fit.theta_mle[0].abs().max(1e-3);
        v0[1] = phi.sin() * f.fit.theta_mle[1].abs().max(1e-3);
        let geo = geodesic(&f.model, &f.data, &f.fit.theta_mle, &v0, 1.0, &GeodesicOptions::default()).unwrap();
        let speed = |k: usize| {
            let g = fisher_metric(&f.model, &f.data, &geo.points[k]).unwrap().g;
            let v = nalgebra::DVector::from_column_slice(&geo.velocities[k]);
            (v.transpose() * g * v)[(0, 0)]
        };
        let s0 = speed(0);
        for k in (0..geo.points.len()).step_by(10) {
            prop_assert!((speed(k) - s0).abs() < 1e-5 * s0, "{} step {k}", BUILTIN_MODELS[m]);
        }
    }
}

struct Warped;

impl ScalarFn for Warped {
    fn eval<S: Scalar>(&self, t: &[S]) -> Result<S> {
        let a = t[0] + t[1] * t[1] * 0.3;
        let b = t[1] + (t[2] * 0.7).exp() * 0.5;
        let c = t[2] + t[0] * t[1] * 0.2;
        Ok(-(a * a + b * b * 2.0 + c * c * 0.5 + (a * b).exp() * 0.1) * 0.5)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lie_bracket_is_tangent(t in unit3(), a in unit3(), b in unit3()) {
        let d = FnDensity::new(Warped, 3);
        let alpha = AlphaVector::project(&a).unwrap();
        let beta = AlphaVector::project(&b).unwrap();
        let g = d.gradient(&t).unwrap();
        prop_assume!(g.iter().all(|c| c.abs() > 1e-2 * norm(&g)));
        let br = lie_bracket(&d, &alpha, &beta, &t).unwrap();
        prop_assume!(norm(&br) > 1e-8);
        prop_assert!(dot(&g, &br).abs() < 1e-6 * norm(&g) * norm(&br), "{}", dot(&g, &br) / (norm(&g) * norm(&br)));
    }
}

#[test]
fn lie_bracket_is_tangent_for_sir() {
    let f = fitted("sir");
    let d = f.density();
    let pairs = [([1.0, -1.0, 0.0], [0.0, 1.0, -1.0]), ([1.0, 0.0, -1.0], [2.0, -1.0, -1.0])];
    for (k, (a, b)) in pairs.iter().enumerate() {
        let theta = perturbed(f, &[0.1 * k as f64, -0.05, 0.08], &[0.0; 3]);
        let br = lie_bracket(&d, &AlphaVector::new(a.to_vec()).unwrap(), &AlphaVector::new(b.to_vec()).unwrap(), &theta)
            .unwrap();
        let g = d.gradient(&theta).unwrap();
        assert!(dot(&g, &br).abs() < 1e-6 * norm(&g) * norm(&br), "{}", dot(&g, &br) / (norm(&g) * norm(&br)));
    }
}

#[test]
fn traced_curves_stay_on_the_level_set_and_close() {
    for kind in ToyKind::ALL {
        let f = Fitted::toy(kind);
        let d = f.density();
        for s in [1.0, 2.0] {
            for rtol in [1e-6, 1e-8] {
                let c = f.trace(s, rtol);
                let res = c.max_level_residual(&d, 4).unwrap();
                assert!(res < 100.0 * rtol, "{} {s}sigma rtol {rtol}: {res}", kind.name());
                let steps = c.max_level_residual(&d, 0).unwrap();
                assert!(steps < 100.0 * rtol, "{} {s}sigma rtol {rtol}: steps {steps}", kind.name());
                let raw = c.max_interpolant_residual(&d, 4).unwrap();
                assert!(raw < 1000.0 * rtol, "{} {s}sigma rtol {rtol}: interpolant {raw}", kind.name());
            }
            let c = f.trace(s, 1e-7);
            assert!(c.closure_defect < 1e-5, "{} {s}sigma: {}", kind.name(), c.closure_defect);
            assert!((c.winding.abs() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn closure_defect_shrinks_with_tolerance() {
    let f = Fitted::toy(ToyKind::SumExp);
    let defects: Vec<f64> = [1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 1e-10].iter().map(|&r| f.trace(1.0, r).closure_defect).collect();
    for w in defects.windows(2) {
        assert!(w[1] <= 2.0 * w[0], "{defects:?}");
    }
    assert!(defects[5] < 1e-3 * defects[0], "{defects:?}");
}

#[test]
fn nonlinear_regions_are_not_similar() {
    for kind in [ToyKind::ExpExp, ToyKind::SqrtExp, ToyKind::LogScaled, ToyKind::SumExp] {
        let f = Fitted::toy(kind);
        let ext = |s: f64| {
            let c = f.trace(s, 1e-8);
            (0..2)
                .map(|i| {
                    let lo = c.samples.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min);
                    let hi = c.samples.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max);
                    hi - lo
                })
                .collect::<Vec<_>>()
        };
        let (e1, e2) = (ext(1.0), ext(2.0));
        let ratio = (e2[0] / e1[0]) / (e2[1] / e1[1]);
        assert!((ratio - 1.0).abs() > 0.01, "{}: {ratio}", kind.name());
    }
    let f = Fitted::toy(ToyKind::Linear);
    let (c1, c2) = (f.trace(1.0, 1e-8), f.trace(2.0, 1e-8));
    let span = |c: &confbound::BoundaryCurve, i: usize| {
        c.samples.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max)
            - c.samples.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min)
    };
    let ratio = (span(&c2, 0) / span(&c1, 0)) / (span(&c2, 1) / span(&c1, 1));
    assert!((ratio - 1.0).abs() < 1e-4, "linear regions are similar: {ratio}");
}

#[test]
fn membership_examples() {
    let square = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]];
    assert_eq!(polygon_contains(&square, &[0.5, 0.5]).unwrap(), Containment::Inside);
    for kind in ToyKind::ALL {
        let f = Fitted::toy(kind);
        for s in [1.0, 2.0] {
            let c = f.trace(s, 1e-8);
            assert!(c.contains(&f.fit.theta_mle).unwrap().is_inside(), "{}", kind.name());
        }
    }
    let f = Fitted::toy(ToyKind::Linear);
    let c = f.trace(1.0, 1e-8);
    let seed = &c.samples[0];
    let beyond: Vec<f64> = (0..2).map(|i| f.fit.theta_mle[i] + 2.0 * (seed[i] - f.fit.theta_mle[i])).collect();
    assert_eq!(c.contains(&beyond).unwrap(), Containment::Outside);
}

fn band_opts(kind: ToyKind) -> BandOptions {
    BandOptions { assume_injective: kind == ToyKind::CubeSquare, ..BandOptions::default() }
}

#[test]
fn bands_nest_and_ignore_reparametrisation() {
    let xs = toy_grid();
    let mut reference: Vec<confbound::ConfidenceBand> = Vec::new();
    for kind in ToyKind::ALL {
        let f = Fitted::toy(kind);
        let bands: Vec<_> = [1.0, 2.0]
            .iter()
            .map(|&s| {
                let c = f.trace(s, 1e-9);
                confidence_band(&f.model, &Boundary::Curve(c), &f.fit.theta_mle, &xs, &band_opts(kind)).unwrap()
            })
            .collect();
        assert!(bands[0].is_within(&bands[1], 1e-12), "{}", kind.name());
        for b in &bands {
            assert!(b.width(0).iter().all(|w| *w > 0.0));
        }
        if reference.is_empty() {
            reference = bands;
        } else {
            for (b, r) in bands.iter().zip(&reference) {
                let d = b.max_envelope_difference(r);
                assert!(d < 1e-3, "{}: {d}", kind.name());
            }
        }
    }
}

#[test]
fn band_width_vanishes_only_where_predictions_coincide() {
    let model = AnyModel::Expr(
        confbound::model::ExprModel::new("pivot", &["a", "b"], "a*(x - 5) + b").unwrap().with_injective(true),
    );
    let f = Fitted::new(model, DataSet::toy(), &[0.0, 0.0]);
    let c = f.trace(1.0, 1e-9);
    let xs: Vec<Vec<f64>> = vec![vec![3.0], vec![5.0], vec![7.0]];
    let band = confidence_band(&f.model, &Boundary::Curve(c), &f.fit.theta_mle, &xs, &BandOptions::default()).unwrap();
    let w = band.width(0);
    assert!(w[0] > 0.0 && w[1] > 0.0 && w[2] > 0.0);
    let rigid = AnyModel::Expr(
        confbound::model::ExprModel::new("rigid", &["a", "b"], "a*(x - 5)^2 + b*(x - 5)").unwrap().with_injective(true),
    );
    let f = Fitted::new(rigid, DataSet::toy(), &[0.0, 0.0]);
    let c = f.trace(1.0, 1e-9);
    let band = confidence_band(&f.model, &Boundary::Curve(c), &f.fit.theta_mle, &xs, &BandOptions::default()).unwrap();
    let w = band.width(0);
    assert!(w[1] < 1e-12 && w[0] > 1e-6 && w[2] > 1e-6, "{w:?}");
}
