mod common;

use common::*;
use confbound::bands::{band_from_interior, confidence_band, sample_interior, BandOptions};
use confbound::boundary::{ellipse_deviation, Boundary, Containment};
use confbound::BoundaryMesh;
use std::sync::OnceLock;

fn sir() -> &'static (Fitted, BoundaryMesh) {
    static CELL: OnceLock<(Fitted, BoundaryMesh)> = OnceLock::new();
    CELL.get_or_init(|| {
        let f = Fitted::sir();
        let m = f.mesh(1.0, &sir_mesh_options());
        (f, m)
    })
}

#[test]
fn mesh_extents_match_the_reference_surface() {
    let (_, mesh) = sir();
    let ext = mesh.extents();
    assert!(extents_match(&ext, &SIR_EXTENTS, 0.05), "{ext:?}");
}

#[test]
fn mesh_vertices_lie_on_the_level_set() {
    let (f, mesh) = sir();
    let res = mesh.max_level_residual(&f.density()).unwrap();
    assert!(res < 10.0 * 1e-7, "{res}");
    assert!(mesh.faces.iter().flatten().all(|&i| i < mesh.vertices.len()));
}

#[test]
fn mesh_encloses_the_mle() {
    let (f, mesh) = sir();
    assert_eq!(mesh.contains(&f.fit.theta_mle).unwrap(), Containment::Inside);
    let far: Vec<f64> = f.fit.theta_mle.iter().map(|t| t * 1.5).collect();
    assert_eq!(mesh.contains(&far).unwrap(), Containment::Outside);
}

#[test]
fn shadow_of_infection_parameters_is_bent() {
    let (_, mesh) = sir();
    let outline = mesh.shadow(0, 1, 360).unwrap();
    let dev = ellipse_deviation(&outline).unwrap();
    assert!(dev > 0.02, "{dev}");
}

#[test]
fn boundary_band_matches_interior_sampling() {
    let (f, mesh) = sir();
    let xs = sir_grid();
    let band = confidence_band(&f.model, &Boundary::Mesh(mesh.clone()), &f.fit.theta_mle, &xs, &BandOptions::default())
        .unwrap();
    let d = f.density();
    let spec = f.spec(1.0);
    let cloud = sample_interior(&d, &spec, &mesh.extents(), 6000, 3).unwrap();
    let inner = band_from_interior(&f.model, &d, &spec, &cloud, &xs).unwrap();
    let gap = worst_relative_gap(&inner, &band);
    assert!(gap < 0.02, "{gap}");
}
