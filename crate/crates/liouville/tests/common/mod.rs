#![allow(dead_code)]

use liouville::diagnostics::Scenario;
use liouville::geometry::{build_annulus_mesh, build_disc_mesh};
use liouville::singular::SingularStructure;

/// Unit disc, K ≡ 1, h ≡ 0, cone of order −1/2 at the center.
pub fn subcritical_disc(level: usize) -> Scenario {
    let mesh = build_disc_mesh(1.0, level).unwrap();
    let center = mesh.nearest_vertex([0.0, 0.0]);
    let sing = SingularStructure { interior: vec![(center, -0.5)], corners: vec![] };
    let k = vec![1.0; mesh.n_vertices()];
    let h = vec![0.0; mesh.n_boundary()];
    Scenario::new(mesh, sing, k, h).unwrap()
}

/// Annulus 1/2 < r < 1, K ≡ −1, h ≡ 1/2, optionally with a cone of order −1/2.
pub fn negative_annulus(level: usize, cone: bool) -> Scenario {
    let mesh = build_annulus_mesh(0.5, 1.0, level).unwrap();
    let interior = if cone { vec![(mesh.nearest_vertex([0.75, 0.0]), -0.5)] } else { vec![] };
    let sing = SingularStructure { interior, corners: vec![] };
    let k = vec![-1.0; mesh.n_vertices()];
    let h = vec![0.5; mesh.n_boundary()];
    Scenario::new(mesh, sing, k, h).unwrap()
}

/// Annulus 1/2 < r < 1 with K ≡ 1, h ≡ 1, graded toward the outer boundary
/// point (1, 0), which is an exact vertex.
pub fn graded_annulus(levels: usize) -> Scenario {
    let mesh = build_annulus_mesh(0.5, 1.0, 2).unwrap();
    let mut mesh = mesh.graded(&[[1.0, 0.0]], levels, 3.0).unwrap();
    mesh.place_points(&[[1.0, 0.0]]).unwrap();
    let k = vec![1.0; mesh.n_vertices()];
    let h = vec![1.0; mesh.n_boundary()];
    Scenario::new(mesh, SingularStructure::none(), k, h).unwrap()
}

/// Unit disc graded toward the given points, K ≡ 1, h ≡ 0, no singularities.
pub fn graded_disc(points: &[[f64; 2]], levels: usize) -> Scenario {
    let mesh = build_disc_mesh(1.0, 3).unwrap();
    let mut mesh = mesh.graded(points, levels, 6.0).unwrap();
    mesh.place_points(points).unwrap();
    let k = vec![1.0; mesh.n_vertices()];
    let h = vec![0.0; mesh.n_boundary()];
    Scenario::new(mesh, SingularStructure::none(), k, h).unwrap()
}

/// Replaces the interior weight by |x|^{2α}. At the origin vertex the weight
/// is the average of |x|^{2α} over a disc with the vertex's lumped area.
pub fn with_power_weight(mut sc: Scenario, alpha: f64) -> Scenario {
    let lumped = sc.ops.lumped.clone();
    for (v, x) in sc.mesh.vertices().iter().enumerate() {
        let r2 = x[0] * x[0] + x[1] * x[1];
        sc.data.k_tilde[v] = if r2 > 0.0 {
            r2.powf(alpha)
        } else {
            let rho = (lumped[v] / std::f64::consts::PI).sqrt();
            rho.powf(2.0 * alpha) / (1.0 + alpha)
        };
    }
    sc.data.k_raw = sc.data.k_tilde.clone();
    sc
}
