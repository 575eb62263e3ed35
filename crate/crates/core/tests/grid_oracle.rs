mod common;

use common::*;
use confbound::boundary::find_boundary_point;
use confbound::gridoracle::{bbox_of, grid_level_set, grid_scan, hausdorff, polylines_of};
use confbound::model::ToyKind;
use confbound::stats::Counted;

fn box2(b: &[(f64, f64)]) -> [(f64, f64); 2] {
    [b[0], b[1]]
}

#[test]
fn traced_boundaries_match_marching_squares() {
    let f = Fitted::toy(ToyKind::SumExp);
    let d = f.density();
    let outer = f.trace(2.0, 1e-10);
    let bbox = box2(&bbox_of(&outer.samples, 1.3));
    for s in [1.0, 2.0] {
        let spec = f.spec(s);
        let curve = f.trace(s, 1e-10);
        let grid = grid_level_set(&d, &spec, bbox, 201, spec.threshold).unwrap();
        assert!(!grid.touches_bbox);
        assert_eq!(grid.polylines.len(), 1);
        let h = hausdorff(&[curve.samples.clone()], &polylines_of(&grid));
        assert!(h < grid.cell_diagonal, "{s}sigma: {h} vs {}", grid.cell_diagonal);
    }
}

#[test]
fn marching_squares_converges_to_the_trace() {
    let f = Fitted::toy(ToyKind::SumExp);
    let d = f.density();
    let spec = f.spec(1.0);
    let curve = f.trace(1.0, 1e-11);
    let dense = curve.resample(4000);
    let bbox = box2(&bbox_of(&curve.samples, 1.4));
    let dist: Vec<f64> = [51, 101, 201, 401]
        .iter()
        .map(|&h| {
            let g = grid_level_set(&d, &spec, bbox, h, spec.threshold).unwrap();
            hausdorff(&[dense.clone()], &polylines_of(&g))
        })
        .collect();
    for w in dist.windows(2) {
        assert!(w[0] / w[1] >= 1.5, "{dist:?}");
    }
}

#[test]
fn grid_cost_dwarfs_trace_cost() {
    let f = Fitted::toy(ToyKind::Linear);
    let d = f.density();
    let spec = f.spec(1.0);
    let counted = Counted::new(&d);
    let seed = find_boundary_point(&d, &spec, &[1.0, 0.0], 1e9).unwrap();
    confbound::boundary::trace_boundary_2d(&counted, &spec, &seed, &confbound::TraceOptions::with_rtol(1e-7)).unwrap();
    let trace_cost = counted.gradient_calls() + counted.loglik_calls();
    let bbox = bbox_of(&[seed.clone(), spec.center.clone()], 4.0);
    let grid = grid_scan(&d, &bbox, 1000).unwrap();
    assert_eq!(grid.loglik_calls, 1_000_000);
    assert_eq!(grid.gradient_calls, 0);
    assert!(grid.loglik_calls > 100 * trace_cost, "trace used {trace_cost}");
}
