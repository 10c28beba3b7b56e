//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use liouville::asymptotics::{
    bubble_slopes, concentration_points, local_mass, morse_index, test_function_slope, tm_probe, Barycenter, HessianKind,
    MorseOptions, TmKind,
};
use liouville::diagnostics::{gauss_bonnet_residual, Scenario};
use liouville::functional::{admissible_chi, normalization_c_chi, EnergyParams};
use liouville::geometry::{build_annulus_mesh, build_disc_mesh};
use liouville::limit::*;
use liouville::singular::{gamma_set, ratio_d, SingularStructure};
use liouville::solver::{lambda_sweep, minimize, SolveStatus, SolverOptions};

type Outcome = Result<String, String>;

/// Converged states kept for the index comparison.
#[derive(Default)]
struct Shared {
    solved: Vec<(String, Scenario, Vec<f64>)>,
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(t: Instant, limit: Duration) -> (bool, String) {
    let e = t.elapsed();
    (e <= limit, format!("{:.1}s/{}s", e.as_secs_f64(), limit.as_secs()))
}

fn c1(_: &mut Shared) -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut nonpositive = 0;
    let mut n = 0;
    while n < 1000 {
        let chi = match n % 3 {
            0 => rng.random_range(0.05..3.0),
            1 => 0.0,
            _ => -rng.random_range(0.05..3.0),
        };
        let a = rng.random_range(-10.0..10.0);
        let b = rng.random_range(-10.0..10.0);
        if !admissible_chi(a, b, chi) {
            continue;
        }
        let c = normalization_c_chi(a, b, chi).map_err(|e| e.to_string())?;
        let scale = (c * c * a).abs().max((c * b).abs()).max(2.0 * PI * chi.abs());
        worst = worst.max((c * c * a + c * b - 2.0 * PI * chi).abs() / scale);
        if !(c > 0.0) {
            nonpositive += 1;
        }
        n += 1;
    }
    let (fast, time) = within(t, Duration::from_secs(1));
    check(worst <= 1e-12 && nonpositive == 0 && fast, format!("max rel {worst:.2e}, C<=0: {nonpositive}, {time}"))
}

fn c2(_: &mut Shared) -> Outcome {
    let t = Instant::now();
    let mesh = build_disc_mesh(1.0, 4).map_err(|e| e.to_string())?;
    let center = mesh.nearest_vertex([0.0, 0.0]);
    let sing = SingularStructure { interior: vec![(center, -0.5)], corners: vec![] };
    let k: Vec<f64> = mesh.vertices().iter().map(|x| 1.0 + 0.5 * x[0]).collect();
    let h: Vec<f64> = mesh.boundary_vertices().iter().map(|&v| 0.5 + 0.3 * mesh.vertices()[v][1]).collect();
    let nv = mesh.n_vertices();
    let sc = Scenario::new(mesh, sing, k, h).map_err(|e| e.to_string())?;
    let p = sc.problem();
    let f = p.functional().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut field = |amp: f64| -> Vec<f64> {
        let modes: Vec<[f64; 4]> = (0..4)
            .map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(0.0..6.3), rng.random_range(-amp..amp)])
            .collect();
        let mut u: Vec<f64> = sc
            .mesh
            .vertices()
            .iter()
            .map(|x| modes.iter().map(|m| m[3] * (m[0] * x[0] + m[1] * x[1] + m[2]).sin()).sum())
            .collect();
        sc.ops.project_mean_zero(&mut u);
        u
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut worst = 0.0f64;
    for i in 0..20 {
        let params = EnergyParams::new(2.0 * PI, 0.9 + 0.01 * i as f64).unwrap();
        let u = field(0.5);
        let dir = field(1.0);
        let s = f.state(u.clone()).map_err(|e| e.to_string())?;
        let su = sc.ops.stiffness.apply(&u);
        let sd = sc.ops.stiffness.apply(&dir);
        let step = 1e-5;
        let (plus, _) = f.energy_change_j(&s, &su, &dir, &sd, step, &params).map_err(|e| e.to_string())?;
        let (minus, _) = f.energy_change_j(&s, &su, &dir, &sd, -step, &params).map_err(|e| e.to_string())?;
        let fd = (plus - minus) / (2.0 * step);
        let g = f.gradient_j(&u, &params).map_err(|e| e.to_string())?;
        let an = dot(&sc.ops.mass.apply(&g), &dir);
        worst = worst.max((fd - an).abs() / an.abs());

        let along = |t: f64| -> Vec<f64> { u.iter().zip(&dir).map(|(a, b)| a + t * b).collect() };
        let fdi = (f.energy_i(&along(step), &params).unwrap() - f.energy_i(&along(-step), &params).unwrap()) / (2.0 * step);
        let gi = f.gradient_i(&u, &params).map_err(|e| e.to_string())?;
        let ani = dot(&sc.ops.mass.apply(&gi), &dir);
        worst = worst.max((fdi - ani).abs() / ani.abs());
    }
    let (fast, time) = within(t, Duration::from_secs(30));
    check(worst < 1e-6 && fast, format!("{nv} vertices, max rel {worst:.2e}, {time}"))
}

fn pipeline(name: &str, sc: Scenario, shared: &mut Shared) -> Outcome {
    let p = sc.problem();
    let params = EnergyParams::geometric(sc.chi);
    let r = minimize(&p, &params, None, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let m = morse_index(&r.state.u, &p, &params, HessianKind::MeanField, None, &MorseOptions::default()).map_err(|e| e.to_string())?;
    let gb = gauss_bonnet_residual(&r.state.u, &p, sc.chi).map_err(|e| e.to_string())?;
    let ok = r.status == SolveStatus::Converged
        && r.pde_residual_interior < 1e-6
        && r.pde_residual_boundary < 1e-6
        && m.index == 0
        && gb < 1e-6;
    let detail = format!(
        "{name}: {} ({} vertices), residuals {:.1e}/{:.1e}, index {}, gauss-bonnet {:.1e}",
        r.status,
        sc.mesh.n_vertices(),
        r.pde_residual_interior,
        r.pde_residual_boundary,
        m.index,
        gb
    );
    if r.status == SolveStatus::Converged {
        shared.solved.push((name.to_string(), sc, r.state.u));
    }
    check(ok, detail)
}

fn c3(shared: &mut Shared) -> Outcome {
    let t = Instant::now();
    let r = pipeline("disc", common::subcritical_disc(6), shared);
    let (fast, time) = within(t, Duration::from_secs(120));
    match r {
        Ok(d) if fast => Ok(format!("{d}, {time}")),
        Ok(d) | Err(d) => Err(format!("{d}, {time}")),
    }
}

fn c4(shared: &mut Shared) -> Outcome {
    let a = pipeline("annulus chi=0", common::negative_annulus(4, false), shared);
    let b = pipeline("annulus chi<0", common::negative_annulus(4, true), shared);
    let ok = a.is_ok() && b.is_ok();
    let detail = format!("{}; {}", a.unwrap_or_else(|e| e), b.unwrap_or_else(|e| e));
    check(ok, detail)
}

const SCALES: [f64; 5] = [1e2, 3e2, 1e3, 3e3, 1e4];

fn c5(_: &mut Shared) -> Outcome {
    let t = Instant::now();
    let sc = common::graded_annulus(14);
    let r = bubble_slopes(&Barycenter::single([1.0, 0.0]), &SCALES, &sc.problem()).map_err(|e| e.to_string())?;
    let d = r.dirichlet_slope / (8.0 * PI);
    let i = r.interior_mass_slope / 2.0;
    let b = r.boundary_mass_slope;
    let (fast, time) = within(t, Duration::from_secs(300));
    let ok = r.excluded.is_empty() && (d - 1.0).abs() < 0.05 && (i - 1.0).abs() < 0.05 && (b - 1.0).abs() < 0.08 && fast;
    check(ok, format!("dirichlet {d:.4}·8π, interior {:.4}, boundary {b:.4}, {time}", r.interior_mass_slope))
}

fn c6(_: &mut Shared) -> Outcome {
    let sc = common::graded_annulus(14);
    let p = sc.problem();
    let sig = Barycenter::single([1.0, 0.0]);
    let high = test_function_slope(&sig, &SCALES, 10.0 * PI, &p).map_err(|e| e.to_string())?;
    let low = test_function_slope(&sig, &SCALES, 4.0 * PI, &p).map_err(|e| e.to_string())?;
    let ok = (high / (-2.0 * PI) - 1.0).abs() < 0.1 && low > 0.0;
    check(ok, format!("slope at 10π = {:.3}π (target -2π), slope at 4π = {:.3}π", high / PI, low / PI))
}

fn c7(_: &mut Shared) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for alpha in [0.0, -0.5, 0.25] {
        let target = 8.0 * PI * (1.0 + alpha);
        let sol = PlaneSolution::new(1.0, alpha, 1.0).map_err(|e| e.to_string())?;
        let total = sol.total_mass(1e4) / target - 1.0;
        let sc = common::with_power_weight(common::graded_disc(&[[0.0, 0.0]], 16), alpha);
        let bub = PlaneSolution::new(1.0, alpha, 1e4f64.powf(2.0 + 2.0 * alpha)).map_err(|e| e.to_string())?;
        let u: Vec<f64> = sc.mesh.vertices().iter().map(|&x| bub.value(x)).collect();
        let (m, _) = local_mass(&u, &sc.problem(), [0.0, 0.0], 0.5).map_err(|e| e.to_string())?;
        let local = m / target - 1.0;
        ok &= total.abs() < 1e-3 && local.abs() < 0.05;
        parts.push(format!("alpha={alpha}: total {total:+.1e}, local {local:+.2e}"));
    }
    check(ok, parts.join("; "))
}

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

fn c8(_: &mut Shared) -> Outcome {
    let full = polar_grid(0.1, 10.0, false);
    let upper = polar_grid(0.1, 10.0, true);
    let mut worst = 0.0f64;
    for alpha in [0.0, -0.5, 0.25] {
        let sol = PlaneSolution::new(1.0, alpha, 1.0).map_err(|e| e.to_string())?;
        worst = worst.max(plane_residual(&sol, &full).map_err(|e| e.to_string())?);
    }
    for h0 in [-1.0, 0.0, 1.0] {
        let sol = HalfPlaneSolution::new(1.0, h0).map_err(|e| e.to_string())?;
        let (a, b) = halfplane_residual(&sol, &upper);
        worst = worst.max(a).max(b);
    }
    let (a, b) = z0_residual(1.0, -1.0, &upper).map_err(|e| e.to_string())?;
    worst = worst.max(a).max(b);
    check(worst < 1e-8, format!("max residual {worst:.2e}"))
}

fn c9(_: &mut Shared) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut cap = |name: String, sol: &dyn LimitField| -> Result<(), String> {
        let w = instability_witness(sol, WitnessKind::LogCap).map_err(|e| e.to_string())?;
        ok &= w.certified && w.q_value < 0.0 && w.parameter <= 1e6;
        parts.push(format!("{name} R*={:e}", w.parameter));
        Ok(())
    };
    for alpha in [0.0, -0.5, 0.25] {
        cap(format!("plane alpha={alpha}"), &PlaneSolution::new(1.0, alpha, 1.0).map_err(|e| e.to_string())?)?;
    }
    for h0 in [-1.0, 0.0, 1.0] {
        cap(format!("half-plane h0={h0}"), &HalfPlaneSolution::new(1.0, h0).map_err(|e| e.to_string())?)?;
    }
    let finite: Vec<Box<dyn LimitField>> = vec![
        Box::new(PlaneSolution::new(1.0, 0.0, 1.0).unwrap()),
        Box::new(PlaneSolution::new(1.0, -0.5, 1.0).unwrap()),
        Box::new(HalfPlaneSolution::new(1.0, 0.0).unwrap()),
    ];
    for sol in &finite {
        let w = instability_witness(sol.as_ref(), WitnessKind::Annulus { m0: 10.0 }).map_err(|e| e.to_string())?;
        ok &= !w.certified;
    }
    let w = instability_witness(&HeavyTail { k0: 1.0 }, WitnessKind::Annulus { m0: 10.0 }).map_err(|e| e.to_string())?;
    ok &= w.certified;
    parts.push(format!("annulus: finite-mass uncertified, heavy tail M*={:e}", w.parameter));
    check(ok, parts.join("; "))
}

fn c10(shared: &mut Shared) -> Outcome {
    if shared.solved.len() < 3 {
        return Err(format!("only {} of 3 solutions from criteria 3-4 available", shared.solved.len()));
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, sc, u) in &shared.solved {
        let p = sc.problem();
        let params = EnergyParams::geometric(sc.chi);
        let opts = MorseOptions::default();
        let i = morse_index(u, &p, &params, HessianKind::MeanField, None, &opts).map_err(|e| e.to_string())?;
        let d = morse_index(u, &p, &params, HessianKind::Direct, None, &opts).map_err(|e| e.to_string())?;
        ok &= i.index.abs_diff(d.index) <= 1;
        parts.push(format!("{name}: {} vs {}", i.index, d.index));
    }
    check(ok, parts.join("; "))
}

fn c11(_: &mut Shared) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();

    // Hand enumeration of {4πk + sums of atoms} for three structures.
    let configs: [(SingularStructure, f64, Vec<f64>); 3] = [
        (SingularStructure::none(), 16.0 * PI, vec![0.0, 4.0, 8.0, 12.0, 16.0]),
        (
            SingularStructure { interior: vec![(0, 0.25)], corners: vec![] },
            20.0 * PI,
            vec![0.0, 4.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0],
        ),
        (
            SingularStructure { interior: vec![(0, -0.25)], corners: vec![(1, -0.5)] },
            12.0 * PI,
            vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0],
        ),
    ];
    for (sing, cap, expect) in &configs {
        let g = gamma_set(sing, *cap).map_err(|e| e.to_string())?;
        let same = g.len() == expect.len() && g.iter().zip(expect).all(|(a, b)| (a - b * PI).abs() < 1e-12);
        ok &= same;
    }
    parts.push(format!("gamma sets {}", if ok { "match" } else { "differ" }));

    let sc = common::subcritical_disc(4);
    let p = sc.problem();
    let opts = SolverOptions::default();
    let avoiding: Vec<f64> = [1.0, 2.0, 3.0, 5.0, 6.0, 7.0].iter().map(|x| x * PI).collect();
    let pts = lambda_sweep(&p, &avoiding, 1.0, true, None, &opts).map_err(|e| e.to_string())?;
    let failed: Vec<String> = pts
        .iter()
        .filter(|q| q.report.status != SolveStatus::Converged)
        .map(|q| format!("{:.2}π {}", q.lambda / PI, q.report.status))
        .collect();
    ok &= failed.is_empty();
    parts.push(if failed.is_empty() { "gamma-avoiding grid all converged".into() } else { format!("not converged: {}", failed.join(", ")) });

    let approach: Vec<f64> = [1.0, 2.0, 3.0, 4.5, 5.5, 6.5, 7.0, 7.5, 7.75, 7.9].iter().map(|x| x * PI).collect();
    let pts = lambda_sweep(&p, &approach, 1.0, true, None, &opts).map_err(|e| e.to_string())?;
    let tail: Vec<f64> = pts[pts.len() - 5..].iter().map(|q| q.report.max_u).collect();
    let rising = tail.windows(2).all(|w| w[1] > w[0]);
    let last = pts.iter().rev().find(|q| q.report.status == SolveStatus::Converged);
    let (at, frac) = match last {
        Some(q) => (q.lambda, concentration_points(&q.report.state.u, &p, 1, 0.2, 0.1).map_err(|e| e.to_string())?.captured_fraction),
        None => (f64::NAN, 0.0),
    };
    ok &= rising && frac >= 0.9;
    parts.push(format!(
        "max u over last 5 {:?} ({}), last converged {:.2}π captures {frac:.3}",
        tail.iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>(),
        if rising { "rising" } else { "not rising" },
        at / PI
    ));
    check(ok, parts.join("; "))
}

fn c12(_: &mut Shared) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();

    let mesh = build_annulus_mesh(0.5, 1.0, 3).map_err(|e| e.to_string())?;
    let cone = mesh.nearest_vertex([0.75, 0.0]);
    let corner = mesh.nearest_vertex([-1.0, 0.0]);
    let sing = SingularStructure { interior: vec![(cone, -0.5)], corners: vec![(corner, 0.5)] };
    let k: Vec<f64> = mesh.vertices().iter().map(|x| -1.0 - 0.3 * x[0]).collect();
    let h: Vec<f64> = mesh.boundary_vertices().iter().map(|&v| 0.5 + 0.2 * mesh.vertices()[v][1]).collect();
    let sc = Scenario::new(mesh, sing, k, h).map_err(|e| e.to_string())?;
    let raw = ratio_d(&sc.data.k_raw, &sc.data.h_raw, &sc.mesh).map_err(|e| e.to_string())?;
    let tilde = ratio_d(&sc.data.k_tilde, &sc.data.h_tilde, &sc.mesh).map_err(|e| e.to_string())?;
    let diff = raw.iter().zip(&tilde).map(|(a, b)| (a - b).abs() / a.abs()).fold(0.0, f64::max);
    ok &= diff <= 1e-12;
    parts.push(format!("ratio invariance {diff:.1e}"));

    let sc = common::graded_annulus(14);
    let rep = tm_probe(&Barycenter::single([1.0, 0.0]), &SCALES, TmKind::Boundary, sc.chi, &sc.problem()).map_err(|e| e.to_string())?;
    ok &= rep.sup_ratio <= 1.1;
    parts.push(format!("boundary bubble ratio {:.4}", rep.sup_ratio));

    let mesh = build_disc_mesh(1.0, 3).map_err(|e| e.to_string())?.graded(&[[0.0, 0.0]], 14, 3.0).map_err(|e| e.to_string())?;
    let center = mesh.nearest_vertex([0.0, 0.0]);
    let sing = SingularStructure { interior: vec![(center, -0.5)], corners: vec![] };
    let k = vec![1.0; mesh.n_vertices()];
    let h = vec![0.0; mesh.n_boundary()];
    let sc = Scenario::new(mesh, sing, k, h).map_err(|e| e.to_string())?;
    let rep = tm_probe(&Barycenter::single([0.0, 0.0]), &SCALES, TmKind::Local { alpha: -0.5 }, sc.chi, &sc.problem())
        .map_err(|e| e.to_string())?;
    ok &= rep.sup_ratio <= 1.1;
    parts.push(format!("conical interior bubble ratio {:.4}", rep.sup_ratio));
    check(ok, parts.join("; "))
}

fn main() {
    let criteria: [fn(&mut Shared) -> Outcome; 12] = [c1, c2, c3, c4, c5, c6, c7, c8, c9, c10, c11, c12];
    let mut shared = Shared::default();
    let mut failed = 0;
    for (i, run) in criteria.iter().enumerate() {
        let t = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(|| run(&mut shared))).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(d) => println!("criterion {}: PASS [{secs:.1}s] {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {}: FAIL [{secs:.1}s] {d}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
