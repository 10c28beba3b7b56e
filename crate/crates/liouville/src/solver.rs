//! Minimization of J_{λ,μ} on mean-zero fields by H¹ gradient descent with
//! Armijo backtracking, optionally restricted to fields invariant under a
//! rotation group, plus λ-sweeps and PDE residual certification.

use std::collections::HashSet;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::asymptotics::{concentration_points, ConcentrationReport};
use crate::elliptic::{dot, Constraint, Operators};
use crate::functional::{normalization_c, CurvatureData, EnergyParams, EnergyState, Functional, FunctionalError};
use crate::geometry::{Point, TriangleMesh, VertexGrid};
use crate::singular::gamma_distance;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("symmetry group invalid: {0}")]
    Symmetry(String),
    #[error("initial state is not admissible: {0}")]
    InadmissibleStart(FunctionalError),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error("invalid solver option: {0}")]
    Options(String),
}

/// Cyclic rotation group acting on the vertices of a symmetric mesh.
#[derive(Clone, Debug)]
pub struct SymmetryGroup {
    pub order: usize,
    /// Image of each vertex under the generator.
    pub action: Vec<usize>,
    /// Vertices whose orbit is shorter than the group order.
    pub fixed_set: Vec<usize>,
    orbits: Vec<Vec<usize>>,
}

impl SymmetryGroup {
    /// Rotation by 2π/order about `center`, matched to mesh vertices.
    pub fn rotation(mesh: &TriangleMesh, order: usize, center: Point) -> Result<Self, SolverError> {
        if order < 2 {
            return Err(SolverError::Symmetry(format!("order {order} < 2")));
        }
        let pts = mesh.vertices();
        let h = mesh.max_edge_length();
        let grid = VertexGrid::new(pts, h);
        let (c, s) = ((2.0 * PI / order as f64).cos(), (2.0 * PI / order as f64).sin());
        let tol = 1e-9 * (1.0 + h);
        let mut action = Vec::with_capacity(pts.len());
        for (v, x) in pts.iter().enumerate() {
            let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
            let y = [center[0] + c * dx - s * dy, center[1] + s * dx + c * dy];
            let w = grid
                .find(pts, y, tol)
                .ok_or_else(|| SolverError::Symmetry(format!("no vertex at the image of vertex {v}")))?;
            action.push(w);
        }
        Self::from_permutation(mesh, order, action)
    }

    /// Validates a vertex permutation as a generator of order `order`.
    pub fn from_permutation(mesh: &TriangleMesh, order: usize, action: Vec<usize>) -> Result<Self, SolverError> {
        let n = mesh.n_vertices();
        if action.len() != n {
            return Err(SolverError::Symmetry("action length differs from vertex count".into()));
        }
        let mut seen = vec![false; n];
        for &w in &action {
            if w >= n || seen[w] {
                return Err(SolverError::Symmetry("action is not a permutation".into()));
            }
            seen[w] = true;
        }
        let key = |t: [usize; 3]| {
            let mut t = t;
            t.sort_unstable();
            t
        };
        let tris: HashSet<[usize; 3]> = mesh.triangles().iter().map(|&t| key(t)).collect();
        for t in mesh.triangles() {
            if !tris.contains(&key([action[t[0]], action[t[1]], action[t[2]]])) {
                return Err(SolverError::Symmetry("action does not preserve triangles".into()));
            }
        }
        for lp in mesh.boundary_loops() {
            let target = mesh.loop_of(action[lp[0]]);
            if target.is_none() || lp.iter().any(|&v| mesh.loop_of(action[v]) != target) {
                return Err(SolverError::Symmetry("action does not preserve boundary loops".into()));
            }
        }
        let mut orbits = Vec::new();
        let mut fixed_set = Vec::new();
        let mut done = vec![false; n];
        for v in 0..n {
            let mut w = v;
            for _ in 0..order {
                w = action[w];
            }
            if w != v {
                return Err(SolverError::Symmetry(format!("generator^{order} moves vertex {v}")));
            }
            if done[v] {
                continue;
            }
            let mut orbit = vec![v];
            done[v] = true;
            let mut w = action[v];
            while w != v {
                orbit.push(w);
                done[w] = true;
                w = action[w];
            }
            if orbit.len() < order {
                fixed_set.extend(&orbit);
            }
            orbits.push(orbit);
        }
        fixed_set.sort_unstable();
        if let Some(&v) = fixed_set.iter().find(|&&v| mesh.is_boundary(v)) {
            return Err(SolverError::Symmetry(format!("boundary vertex {v} has a short orbit")));
        }
        Ok(SymmetryGroup { order, action, fixed_set, orbits })
    }

    pub fn orbits(&self) -> &[Vec<usize>] {
        &self.orbits
    }

    /// Eigen-solver constraint for the invariant subspace.
    pub fn constraint(&self, mean_zero: bool) -> Constraint {
        Constraint { mean_zero, orbits: Some(self.orbits.clone()) }
    }

    /// Smallest orbit length over points outside the fixed set, counted at
    /// the given vertices (1 if one of them is fixed).
    pub fn min_orbit(&self, vertices: &[usize]) -> usize {
        vertices.iter().map(|&v| if self.fixed_set.binary_search(&v).is_ok() { 1 } else { self.order }).min().unwrap_or(self.order)
    }
}

/// Average of u over the group: orbit means.
pub fn group_average(u: &[f64], g: &SymmetryGroup) -> Vec<f64> {
    let mut out = u.to_vec();
    for o in &g.orbits {
        let m = o.iter().map(|&v| u[v]).sum::<f64>() / o.len() as f64;
        for &v in o {
            out[v] = m;
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub tol_grad: f64,
    pub tol_pde: f64,
    pub max_iter: usize,
    pub step0: f64,
    pub armijo_c: f64,
    /// Absolute energy floor; defaults to J(u₀) − 50·max(|λ|, 4π)·log(lambda_max).
    pub divergence_floor: Option<f64>,
    pub lambda_max: f64,
    /// Starting field, used instead of zero.
    pub initial: Option<Vec<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol_grad: 1e-8,
            tol_pde: 1e-6,
            max_iter: 5000,
            step0: 1.0,
            armijo_c: 1e-4,
            divergence_floor: None,
            lambda_max: 1e6,
            initial: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    DivergingEnergy,
    LeftAdmissible,
    IterationCap,
    /// Backtracking found no decrease although the tolerances are not met.
    Stalled,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Converged => "converged",
            SolveStatus::DivergingEnergy => "diverging_energy",
            SolveStatus::LeftAdmissible => "left_admissible",
            SolveStatus::IterationCap => "iteration_cap",
            SolveStatus::Stalled => "stalled",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    #[serde(skip)]
    pub state: EnergyState,
    pub gradient_norm: f64,
    pub pde_residual_interior: f64,
    pub pde_residual_boundary: f64,
    pub c_value: f64,
    pub energy: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub max_u: f64,
}

/// Mesh, operators and curvature data of one scenario.
pub struct Problem<'a> {
    pub mesh: &'a TriangleMesh,
    pub ops: &'a Operators,
    pub data: &'a CurvatureData,
}

impl<'a> Problem<'a> {
    pub fn functional(&self) -> Result<Functional<'a>, FunctionalError> {
        Functional::new(self.ops, self.mesh.boundary_vertices(), self.data)
    }
}

/// Weak-form defects of the interior equation and of the Neumann condition,
/// normalized by the solution scale.
pub fn pde_residual(problem: &Problem, u: &[f64], params: &EnergyParams) -> Result<(f64, f64), FunctionalError> {
    let f = problem.functional()?;
    let d = f.derivative_j(u, params)?;
    let ops = problem.ops;
    let mut h1 = ops.stiffness.apply(u);
    let mu = ops.mass.apply(u);
    h1.iter_mut().zip(&mu).for_each(|(a, b)| *a += b);
    let norm_u = dot(u, &h1).max(0.0).sqrt();
    let interior = ops.interior_dual_norm(&d) / (1.0 + norm_u);
    let (a, b) = f.masses(u);
    let c = normalization_c(a, b, params.lambda)?;
    let mut num = 0.0;
    let mut flux = 0.0;
    for (&v, h) in problem.mesh.boundary_vertices().iter().zip(&problem.data.h_tilde) {
        let l = ops.boundary_lumped[v];
        num += d[v] * d[v] / l;
        flux += l * (2.0 * c * h * (0.5 * u[v]).exp()).powi(2);
    }
    Ok((interior, num.sqrt() / (1.0 + flux.sqrt())))
}

/// Fraction of λ carried by the single heaviest vertex.
fn vertex_concentration(f: &Functional, u: &[f64], c: f64, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    let (wa, wb) = f.mass_weights(u);
    wa.iter().zip(&wb).map(|(a, b)| (2.0 * c * c * a + 4.0 * c * b) / lambda).fold(0.0, f64::max)
}

fn max_of(u: &[f64]) -> f64 {
    u.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Descends J_{λ,μ} from the configured start. Statuses other than
/// `Converged` are outcomes, not errors.
pub fn minimize(
    problem: &Problem,
    params: &EnergyParams,
    group: Option<&SymmetryGroup>,
    options: &SolverOptions,
) -> Result<SolveReport, SolverError> {
    if !(options.armijo_c > 0.0 && options.armijo_c < 1.0) || !(options.step0 > 0.0) || !(options.lambda_max > 1.0) {
        return Err(SolverError::Options("armijo_c in (0,1), step0 > 0 and lambda_max > 1 required".into()));
    }
    let f = problem.functional()?;
    let ops = problem.ops;
    let n = f.dim();
    let mut u0 = options.initial.clone().unwrap_or_else(|| vec![0.0; n]);
    if u0.len() != n {
        return Err(FunctionalError::FieldLength { expected: n, got: u0.len() }.into());
    }
    if let Some(g) = group {
        u0 = group_average(&u0, g);
    }
    let mut state = f.state(u0)?;
    let mut energy = f.energy_j(&state.u, params).map_err(SolverError::InadmissibleStart)?;
    let floor = options
        .divergence_floor
        .unwrap_or(energy - 50.0 * params.lambda.abs().max(4.0 * PI) * options.lambda_max.ln());
    let max_u_cap = 4.0 * options.lambda_max.ln();

    let mut step = options.step0;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut iterations = 0;
    let status;
    let mut d;
    let mut grad_norm;
    loop {
        d = f.derivative_j(&state.u, params)?;
        let mut p = d.clone();
        ops.solve_load(&mut p);
        if let Some(g) = group {
            p = group_average(&p, g);
            ops.project_mean_zero(&mut p);
        }
        p.iter_mut().for_each(|x| *x = -*x);
        let slope = dot(&d, &p);
        grad_norm = (-slope).max(0.0).sqrt();
        if grad_norm < options.tol_grad {
            let (ri, rb) = pde_residual(problem, &state.u, params)?;
            if ri < options.tol_pde && rb < options.tol_pde {
                status = SolveStatus::Converged;
                break;
            }
        }
        if iterations >= options.max_iter {
            status = SolveStatus::IterationCap;
            break;
        }
        if let Some((su_old, d_old)) = &prev {
            // Barzilai-Borwein step in the H¹ metric
            let s: Vec<f64> = state.u.iter().zip(su_old).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = d.iter().zip(d_old).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            let ss = ops.stiffness.form(&s, &s);
            step = if sy > 0.0 && ss > 0.0 { (ss / sy).clamp(1e-8, 1e4) } else { (2.0 * step).min(1e4) };
        }
        let su = ops.stiffness.apply(&state.u);
        let sp = ops.stiffness.apply(&p);
        let mut t = step;
        let mut admissibility_halvings = 0;
        let mut armijo_halvings = 0;
        let accepted = loop {
            match f.energy_change_j(&state, &su, &p, &sp, t, params) {
                Err(FunctionalError::Inadmissible { .. }) => {
                    admissibility_halvings += 1;
                    if admissibility_halvings > 40 {
                        break None;
                    }
                }
                Err(e) => return Err(e.into()),
                Ok((dj, next)) => {
                    if dj <= options.armijo_c * t * slope && dj < 0.0 {
                        break Some((dj, next));
                    }
                    armijo_halvings += 1;
                    if armijo_halvings > 60 {
                        break None;
                    }
                }
            }
            t *= 0.5;
        };
        let Some((dj, mut next)) = accepted else {
            status = if admissibility_halvings > 40 { SolveStatus::LeftAdmissible } else { SolveStatus::Stalled };
            break;
        };
        iterations += 1;
        ops.project_mean_zero(&mut next.u);
        let (a, b) = f.masses(&next.u);
        next.a = a;
        next.b = b;
        prev = Some((std::mem::replace(&mut state, next).u, d.clone()));
        energy += dj;
        if energy < floor || max_of(&state.u) > max_u_cap {
            status = SolveStatus::DivergingEnergy;
            break;
        }
        if let Ok(c) = normalization_c(state.a, state.b, params.lambda) {
            // a bubble narrower than one mesh cell: the discrete energy has
            // stopped tracking the continuous one
            if vertex_concentration(&f, &state.u, c, params.lambda) > 0.5 {
                status = SolveStatus::DivergingEnergy;
                break;
            }
        }
    }
    let energy = f.energy_j(&state.u, params).unwrap_or(energy);
    let c_value = normalization_c(state.a, state.b, params.lambda).unwrap_or(f64::NAN);
    let (ri, rb) = pde_residual(problem, &state.u, params).unwrap_or((f64::NAN, f64::NAN));
    Ok(SolveReport {
        max_u: max_of(&state.u),
        state,
        gradient_norm: grad_norm,
        pde_residual_interior: ri,
        pde_residual_boundary: rb,
        c_value,
        energy,
        iterations,
        status,
    })
}

/// Blow-up annotation of a non-converged sweep point.
#[derive(Clone, Debug, Serialize)]
pub struct BlowUpAnnotation {
    pub gamma_distance: f64,
    pub max_u: f64,
    pub concentration: Option<ConcentrationReport>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub report: SolveReport,
    pub annotation: Option<BlowUpAnnotation>,
}

fn annotate(problem: &Problem, lambda: f64, report: &SolveReport) -> Option<BlowUpAnnotation> {
    if report.status == SolveStatus::Converged {
        return None;
    }
    let r = 0.1 * problem.ops.area.sqrt();
    Some(BlowUpAnnotation {
        gamma_distance: gamma_distance(lambda, &problem.data.sing),
        max_u: report.max_u,
        concentration: concentration_points(&report.state.u, problem, 1, r, 0.05).ok(),
    })
}

/// Solves at each λ of a sorted grid. Cold starts run in parallel; warm
/// starts chain the previous converged state.
pub fn lambda_sweep(
    problem: &Problem,
    grid: &[f64],
    mu: f64,
    warm_start: bool,
    group: Option<&SymmetryGroup>,
    options: &SolverOptions,
) -> Result<Vec<SweepPoint>, SolverError> {
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(SolverError::Options("lambda grid must be sorted".into()));
    }
    let params: Vec<EnergyParams> = grid.iter().map(|&l| EnergyParams::new(l, mu)).collect::<Result<_, _>>()?;
    let solve_one = |p: &EnergyParams, opts: &SolverOptions| -> Result<SweepPoint, SolverError> {
        let report = minimize(problem, p, group, opts)?;
        Ok(SweepPoint { lambda: p.lambda, annotation: annotate(problem, p.lambda, &report), report })
    };
    if !warm_start {
        return params.par_iter().map(|p| solve_one(p, options)).collect();
    }
    let mut out = Vec::with_capacity(grid.len());
    let mut opts = options.clone();
    for p in &params {
        let pt = solve_one(p, &opts)?;
        if pt.report.status == SolveStatus::Converged {
            opts.initial = Some(pt.report.state.u.clone());
        }
        out.push(pt);
    }
    Ok(out)
}

/// Minimizes J_{λ,μ} for each μ.
pub fn solve_perturbed(
    problem: &Problem,
    lambda: f64,
    mu_list: &[f64],
    group: Option<&SymmetryGroup>,
    options: &SolverOptions,
) -> Result<Vec<(f64, SolveReport)>, SolverError> {
    let params: Vec<EnergyParams> = mu_list.iter().map(|&m| EnergyParams::new(lambda, m)).collect::<Result<_, _>>()?;
    params.par_iter().map(|p| Ok((p.mu, minimize(problem, p, group, options)?))).collect()
}
