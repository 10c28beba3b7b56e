mod common;

use std::f64::consts::PI;

use liouville::asymptotics::bubble;
use liouville::asymptotics::Barycenter;
use liouville::diagnostics::*;
use liouville::functional::{normalization_c, EnergyParams};
use liouville::geometry::{build_annulus_mesh, build_disc_mesh};
use liouville::singular::{SingularStructure, SurfaceClass};
use liouville::solver::{lambda_sweep, minimize, SolverOptions, SymmetryGroup};

#[test]
fn gauss_bonnet_on_solution() {
    let sc = common::subcritical_disc(4);
    let p = sc.problem();
    let r = minimize(&p, &EnergyParams::geometric(sc.chi), None, &SolverOptions::default()).unwrap();
    assert!(gauss_bonnet_residual(&r.state.u, &p, sc.chi).unwrap() < 1e-6);
}

#[test]
fn gauss_bonnet_is_root_identity_at_any_state() {
    for sc in [common::subcritical_disc(3), common::negative_annulus(2, true)] {
        let p = sc.problem();
        for s in [1.0, 4.0, 12.0] {
            let u = bubble(&Barycenter::single([0.3, 0.6]), s, &p).unwrap();
            let f = p.functional().unwrap();
            let (a, b) = f.masses(&u);
            let c = normalization_c(a, b, 4.0 * PI * sc.chi).unwrap();
            let direct = (c * c * a + c * b - 2.0 * PI * sc.chi).abs() / (1.0 + 2.0 * PI * sc.chi.abs());
            let g = gauss_bonnet_residual(&u, &p, sc.chi).unwrap();
            assert!(g < 1e-12 && direct < 1e-12, "{g} {direct}");
        }
    }
}

#[test]
fn hypotheses_subcritical_disc() {
    let sc = common::subcritical_disc(3);
    assert!((sc.chi - 0.5).abs() < 1e-15 && sc.tau == 1.0);
    let rep = classify_hypotheses(&sc, None, false).unwrap();
    assert_eq!(rep.class, SurfaceClass::Subcritical);
    assert_eq!(rep.applicable, vec![Hypothesis::PositiveSubcritical]);
    assert!(rep.admissible_nonempty && rep.marginal.is_empty());
}

#[test]
fn hypotheses_zero_chi() {
    let sc = common::negative_annulus(2, false);
    assert_eq!(sc.chi, 0.0);
    let rep = classify_hypotheses(&sc, None, false).unwrap();
    assert_eq!(rep.applicable, vec![Hypothesis::ZeroSmallRatio]);
    assert!(rep.admissible_nonempty);

    let mesh = build_annulus_mesh(0.5, 1.0, 2).unwrap();
    let (n, nb) = (mesh.n_vertices(), mesh.n_boundary());
    let sc = Scenario::new(mesh, SingularStructure::none(), vec![1.0; n], vec![1.0; nb]).unwrap();
    let rep = classify_hypotheses(&sc, None, false).unwrap();
    assert!(rep.applicable.is_empty());
    assert!(!rep.admissible_nonempty);
}

#[test]
fn hypotheses_negative_and_critical() {
    let sc = common::negative_annulus(2, true);
    assert!(sc.chi < 0.0);
    let rep = classify_hypotheses(&sc, None, false).unwrap();
    assert_eq!(rep.applicable, vec![Hypothesis::NegativeSmallRatio]);

    let mesh = build_disc_mesh(1.0, 3).unwrap();
    let (n, nb) = (mesh.n_vertices(), mesh.n_boundary());
    let sc = Scenario::new(mesh, SingularStructure::none(), vec![1.0; n], vec![0.0; nb]).unwrap();
    assert_eq!(sc.class(), SurfaceClass::Critical);
    assert!(classify_hypotheses(&sc, None, false).unwrap().applicable.is_empty());
    let g = SymmetryGroup::rotation(&sc.mesh, 2, [0.0, 0.0]).unwrap();
    let rep = classify_hypotheses(&sc, Some(&g), false).unwrap();
    assert_eq!(rep.applicable, vec![Hypothesis::PositiveCriticalSymmetric]);
}

#[test]
fn marginal_conditions_are_reported() {
    let mesh = build_annulus_mesh(0.5, 1.0, 2).unwrap();
    let (n, nb) = (mesh.n_vertices(), mesh.n_boundary());
    let sc = Scenario::new(mesh, SingularStructure::none(), vec![-1.0; n], vec![1.0 - 1e-12; nb]).unwrap();
    let rep = classify_hypotheses(&sc, None, false).unwrap();
    assert!(rep.applicable.is_empty());
    assert!(rep.marginal.iter().any(|m| m.contains("max D")), "{:?}", rep.marginal);
}

#[test]
fn measured_serialization() {
    let ok = Measured::from_result::<String>(Ok(1.5));
    let bad = Measured::from_result::<String>(Ok(f64::NAN));
    let err = Measured::from_result::<String>(Err("solver stalled".into()));
    assert_eq!(serde_json::to_string(&ok).unwrap(), "1.5");
    assert!(serde_json::to_string(&bad).unwrap().starts_with("\"failed:"));
    assert_eq!(serde_json::to_string(&err).unwrap(), "\"failed: solver stalled\"");
}

#[test]
fn float_format_round_trips() {
    for x in [PI, -1e-300, 12345.678, 0.1 + 0.2] {
        assert_eq!(fmt_float(x).parse::<f64>().unwrap(), x);
    }
}

#[test]
fn sweep_csv_layout() {
    let sc = common::subcritical_disc(2);
    let pts = lambda_sweep(&sc.problem(), &[PI, 2.0 * PI], 1.0, true, None, &SolverOptions::default()).unwrap();
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, "# liouville test", &pts).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "# liouville test");
    assert!(lines[1].starts_with("lambda,status,energy"));
    let cols = lines[1].split(',').count();
    for l in &lines[2..] {
        assert_eq!(l.split(',').count(), cols);
        assert!(l.contains(",converged,"));
    }
    assert_eq!(lines[3].split(',').next().unwrap().parse::<f64>().unwrap(), 2.0 * PI);
}
