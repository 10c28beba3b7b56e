use std::f64::consts::PI;

use liouville::limit::*;

fn polar_grid(r_lo: f64, r_hi: f64, upper_only: bool) -> Vec<[f64; 2]> {
    let mut g = Vec::new();
    for i in 0..12 {
        let r = r_lo * (r_hi / r_lo).powf(i as f64 / 11.0);
        for j in 0..8 {
            let th = if upper_only { PI * (j as f64 + 0.5) / 8.0 } else { 2.0 * PI * j as f64 / 8.0 };
            g.push([r * th.cos(), r * th.sin()]);
        }
    }
    g
}

#[test]
fn plane_solutions_solve_the_equation() {
    let grid = polar_grid(0.1, 10.0, false);
    for alpha in [0.0, -0.5, 0.25] {
        for b in [1.0, 3.0] {
            let sol = PlaneSolution::new(1.0, alpha, b).unwrap();
            let res = plane_residual(&sol, &grid).unwrap();
            assert!(res < 1e-8, "alpha={alpha} b={b} residual={res}");
        }
    }
}

#[test]
fn plane_residual_rejects_origin_for_singular_weight() {
    let sol = PlaneSolution::new(1.0, -0.5, 1.0).unwrap();
    assert!(matches!(plane_residual(&sol, &[[0.0, 0.0]]), Err(LimitError::NearOrigin(..))));
}

#[test]
fn plane_mass_is_quantized() {
    for alpha in [0.0, -0.5, 0.25] {
        let sol = PlaneSolution::new(1.0, alpha, 1.0).unwrap();
        let m = sol.total_mass(1e4);
        assert!((m / (8.0 * PI * (1.0 + alpha)) - 1.0).abs() < 1e-3, "alpha={alpha} mass={m}");
        // Closed form of the truncated mass: 8π(1+α)·bR^{2+2α}/(1+bR^{2+2α}).
        let q = 1e4f64.powf(2.0 + 2.0 * alpha);
        assert!((m - 8.0 * PI * (1.0 + alpha) * q / (1.0 + q)).abs() < 1e-9);
    }
}

#[test]
fn plane_mass_converges_in_radius() {
    let sol = PlaneSolution::new(1.0, 0.0, 1.0).unwrap();
    let (a, b) = (sol.total_mass(1e3), sol.total_mass(1e4));
    assert!((b - a).abs() / b < 1e-6);
}

#[test]
fn halfplane_solutions_solve_the_problem() {
    let grid = polar_grid(0.1, 10.0, true);
    for h0 in [-1.0, 0.0, 1.0] {
        let sol = HalfPlaneSolution::new(1.0, h0).unwrap();
        let (inner, neu) = halfplane_residual(&sol, &grid);
        assert!(inner < 1e-8 && neu < 1e-8, "h0={h0}: {inner} {neu}");
    }
}

#[test]
fn z0_solves_linearized_problem() {
    let grid = polar_grid(0.1, 10.0, true);
    for (k0, h0) in [(1.0, -1.0), (2.0, -0.5)] {
        let (inner, bdry) = z0_residual(k0, h0, &grid).unwrap();
        assert!(inner < 1e-8 && bdry < 1e-8, "{inner} {bdry}");
    }
    assert!(z0_residual(1.0, 0.5, &grid).is_err());
}

#[test]
fn z0_is_positive() {
    let z = Z0::new(1.0, -1.0).unwrap();
    for p in polar_grid(0.01, 100.0, true) {
        assert!(z.value(p) > 0.0);
    }
}

#[test]
fn log_cap_certifies_plane_instability() {
    for alpha in [0.0, -0.5] {
        let sol = PlaneSolution::new(1.0, alpha, 1.0).unwrap();
        let w = instability_witness(&sol, WitnessKind::LogCap).unwrap();
        assert!(w.certified && w.parameter <= 1e6 && w.q_value < 0.0, "{w:?}");
    }
}

#[test]
fn log_cap_certifies_halfplane_instability() {
    for h0 in [-1.0, 0.0, 1.0] {
        let sol = HalfPlaneSolution::new(1.0, h0).unwrap();
        let w = instability_witness(&sol, WitnessKind::LogCap).unwrap();
        assert!(w.certified && w.parameter <= 1e6, "h0={h0}: {w:?}");
    }
}

#[test]
fn annulus_separates_finite_from_heavy_tail() {
    let bubble = PlaneSolution::new(1.0, 0.0, 1.0).unwrap();
    let w = instability_witness(&bubble, WitnessKind::Annulus { m0: 10.0 }).unwrap();
    assert!(!w.certified, "{w:?}");
    assert!(w.trials.len() > 1);
    let heavy = HeavyTail { k0: 1.0 };
    let w = instability_witness(&heavy, WitnessKind::Annulus { m0: 10.0 }).unwrap();
    assert!(w.certified, "{w:?}");
}

#[test]
fn boundary_witness_certifies_negative_curvature() {
    let sol = HalfPlaneSolution::new(1.0, -1.0).unwrap();
    let w = instability_witness(&sol, WitnessKind::BoundaryHz).unwrap();
    assert!(w.certified, "{w:?}");
    let pos = HalfPlaneSolution::new(1.0, 1.0).unwrap();
    assert!(instability_witness(&pos, WitnessKind::BoundaryHz).is_err());
}

#[test]
fn quadratic_form_matches_radial_reduction() {
    // For a radial cap on a radial field, Q reduces to a 1D integral in r.
    let sol = PlaneSolution::new(1.0, 0.0, 1.0).unwrap();
    let cap = LogCap { radius: 50.0 };
    let q = quadratic_form_q(&sol, &cap, 200.0).unwrap();
    let n = 400_000;
    let (lo, hi) = (-20.0f64, 50f64.ln());
    let dt = (hi - lo) / n as f64;
    let mut oracle = 0.0;
    for i in 0..n {
        let t = lo + (i as f64 + 0.5) * dt;
        let r = t.exp();
        let g = cap.grad([r, 0.0])[0];
        let v = cap.value([r, 0.0]);
        oracle += 2.0 * PI * (g * g - sol.weight([r, 0.0]) * v * v) * r * r * dt;
    }
    assert!((q - oracle).abs() < 1e-6 * (1.0 + oracle.abs()), "{q} vs {oracle}");
}

#[test]
fn window_must_contain_support() {
    let sol = HeavyTail { k0: 1.0 };
    let err = quadratic_form_q(&sol, &LogCap { radius: 10.0 }, 5.0).unwrap_err();
    assert!(matches!(err, LimitError::SupportExceedsWindow { .. }));
}
