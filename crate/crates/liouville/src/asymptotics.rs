//! Blow-up diagnostics: bubble test functions and their energy slopes,
//! concentration detection, local masses, a Pohozaev balance on small balls,
//! Morse indices and empirical Trudinger-Moser ratios.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::elliptic::{Constraint, EigenOptions, EllipticError};
use crate::functional::{normalization_c, EnergyParams, FunctionalError};
use crate::geometry::{dist, Point, TriangleMesh, VertexGrid};
use crate::singular::trudinger_tau;
use crate::solver::{Problem, SymmetryGroup};
use crate::fit_slope;

#[derive(Debug, Error)]
pub enum AsymptoticsError {
    #[error("barycenter has no atoms")]
    EmptyBarycenter,
    #[error("barycenter weights must be nonnegative and sum to one")]
    InvalidWeights,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("mesh too coarse: edge length {h:e} near atoms, need < {needed:e}")]
    MeshTooCoarse { h: f64, needed: f64 },
    #[error("total mass {0:e} is not positive")]
    NonPositiveMass(f64),
    #[error("ball of radius {r} about ({x}, {y}) is not interior")]
    BallNotInterior { x: f64, y: f64, r: f64 },
    #[error("degenerate family: {0}")]
    Degenerate(String),
    #[error("Morse count reached the cap of {0} with every eigenvalue negative")]
    CapReached(usize),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error(transparent)]
    Eigen(#[from] EllipticError),
}

/// Weighted atoms σ = Σ t_i δ_{x_i}.
#[derive(Clone, Debug, Serialize)]
pub struct Barycenter {
    pub atoms: Vec<(f64, Point)>,
}

impl Barycenter {
    pub fn new(atoms: Vec<(f64, Point)>) -> Result<Self, AsymptoticsError> {
        if atoms.is_empty() {
            return Err(AsymptoticsError::EmptyBarycenter);
        }
        let s: f64 = atoms.iter().map(|a| a.0).sum();
        if atoms.iter().any(|a| !(a.0 >= 0.0)) || (s - 1.0).abs() > 1e-12 {
            return Err(AsymptoticsError::InvalidWeights);
        }
        Ok(Barycenter { atoms })
    }

    pub fn single(x: Point) -> Self {
        Barycenter { atoms: vec![(1.0, x)] }
    }

    /// Equal weights on the given points.
    pub fn uniform(points: &[Point]) -> Result<Self, AsymptoticsError> {
        let t = 1.0 / points.len().max(1) as f64;
        Self::new(points.iter().map(|&p| (t, p)).collect())
    }
}

/// log Σ t_i Λ²/(1+Λ²d(x,x_i)²)² before the mean is removed.
pub fn bubble_raw(sigma: &Barycenter, scale: f64, x: Point) -> f64 {
    let terms: Vec<f64> = sigma
        .atoms
        .iter()
        .filter(|a| a.0 > 0.0)
        .map(|&(t, p)| t.ln() + 2.0 * scale.ln() - 2.0 * (scale * scale * dist(x, p).powi(2)).ln_1p())
        .collect();
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Standard bubble at scale Λ, mean subtracted.
pub fn bubble(sigma: &Barycenter, scale: f64, problem: &Problem) -> Result<Vec<f64>, AsymptoticsError> {
    if sigma.atoms.is_empty() {
        return Err(AsymptoticsError::EmptyBarycenter);
    }
    if !(scale >= 1.0) {
        return Err(AsymptoticsError::InvalidArgument(format!("bubble scale {scale} < 1")));
    }
    let mut u: Vec<f64> = problem.mesh.vertices().iter().map(|&x| bubble_raw(sigma, scale, x)).collect();
    problem.ops.project_mean_zero(&mut u);
    Ok(u)
}

/// Largest mean incident edge length at the vertices nearest the atoms.
pub fn atom_resolution(sigma: &Barycenter, mesh: &TriangleMesh) -> f64 {
    sigma
        .atoms
        .iter()
        .map(|a| mesh.local_edge_length(mesh.nearest_vertex(a.1)))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct SlopeReport {
    pub dirichlet_slope: f64,
    pub interior_mass_slope: f64,
    pub boundary_mass_slope: f64,
    /// Scales dropped because the mesh does not resolve them.
    pub excluded: Vec<f64>,
}

/// Scales the mesh resolves, and the ones it does not.
fn resolved_scales(sigma: &Barycenter, scales: &[f64], mesh: &TriangleMesh) -> Result<(Vec<f64>, Vec<f64>), AsymptoticsError> {
    if scales.len() < 3 {
        return Err(AsymptoticsError::InvalidArgument("need at least three scales".into()));
    }
    let h = atom_resolution(sigma, mesh);
    let (keep, drop): (Vec<f64>, Vec<f64>) = scales.iter().partition(|&&l| h < 0.2 / l);
    if keep.len() < 3 {
        let lmax = scales.iter().copied().fold(0.0, f64::max);
        return Err(AsymptoticsError::MeshTooCoarse { h, needed: 0.2 / lmax });
    }
    Ok((keep, drop))
}

/// Regression slopes of ½∫|∇φ|², log∫K̃e^φ and log|∮h̃e^{φ/2}| against log Λ.
pub fn bubble_slopes(sigma: &Barycenter, scales: &[f64], problem: &Problem) -> Result<SlopeReport, AsymptoticsError> {
    let (keep, excluded) = resolved_scales(sigma, scales, problem.mesh)?;
    let f = problem.functional()?;
    let rows: Vec<(f64, f64, f64, f64)> = keep
        .par_iter()
        .map(|&l| {
            let u = bubble(sigma, l, problem)?;
            let (a, b) = f.masses(&u);
            Ok((l.ln(), 0.5 * f.dirichlet(&u), a.ln(), b.abs().ln()))
        })
        .collect::<Result<_, AsymptoticsError>>()?;
    let x: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let col = |k: usize| -> Vec<f64> { rows.iter().map(|r| [r.1, r.2, r.3][k]).collect() };
    Ok(SlopeReport {
        dirichlet_slope: fit_slope(&x, &col(0)),
        interior_mass_slope: fit_slope(&x, &col(1)),
        boundary_mass_slope: fit_slope(&x, &col(2)),
        excluded,
    })
}

/// J_λ at the mean-zero bubble.
pub fn test_function_energy(sigma: &Barycenter, scale: f64, lambda: f64, problem: &Problem) -> Result<f64, AsymptoticsError> {
    let u = bubble(sigma, scale, problem)?;
    let f = problem.functional()?;
    Ok(f.energy_j(&u, &EnergyParams { lambda, mu: 1.0 })?)
}

/// Regression slope of J_λ along a bubble family against log Λ.
pub fn test_function_slope(sigma: &Barycenter, scales: &[f64], lambda: f64, problem: &Problem) -> Result<f64, AsymptoticsError> {
    let (keep, _) = resolved_scales(sigma, scales, problem.mesh)?;
    let e: Vec<f64> = keep
        .par_iter()
        .map(|&l| test_function_energy(sigma, l, lambda, problem))
        .collect::<Result<_, _>>()?;
    let x: Vec<f64> = keep.iter().map(|l| l.ln()).collect();
    Ok(fit_slope(&x, &e))
}

#[derive(Clone, Debug, Serialize)]
pub struct ConcentrationReport {
    pub points: Vec<Point>,
    pub captured_fraction: f64,
    pub radius: f64,
    /// captured_fraction ≥ 1 − ε.
    pub captured: bool,
}

/// Greedy covering of the K̃e^u measure by k balls of radius r centered at
/// vertices.
pub fn concentration_points(u: &[f64], problem: &Problem, k: usize, r: f64, eps: f64) -> Result<ConcentrationReport, AsymptoticsError> {
    if k == 0 || !(r > 0.0) {
        return Err(AsymptoticsError::InvalidArgument("k ≥ 1 and r > 0 required".into()));
    }
    let f = problem.functional()?;
    let (w, _) = f.mass_weights(u);
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(AsymptoticsError::NonPositiveMass(total));
    }
    let pts = problem.mesh.vertices();
    let grid = VertexGrid::new(pts, r);
    let mut taken = vec![false; pts.len()];
    let mut points = Vec::with_capacity(k);
    let mut captured = 0.0;
    for _ in 0..k {
        let best = (0..pts.len())
            .into_par_iter()
            .map_init(Vec::new, |buf, c| {
                grid.within(pts, pts[c], r, buf);
                let m: f64 = buf.iter().filter(|&&v| !taken[v]).map(|&v| w[v]).sum();
                (m, c)
            })
            .reduce(|| (f64::NEG_INFINITY, usize::MAX), |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
        let (m, c) = best;
        if c == usize::MAX || !(m > 0.0) {
            break;
        }
        let mut buf = Vec::new();
        grid.within(pts, pts[c], r, &mut buf);
        for v in buf {
            taken[v] = true;
        }
        captured += m;
        points.push(pts[c]);
    }
    let captured_fraction = (captured / total).clamp(0.0, 1.0);
    Ok(ConcentrationReport { points, captured_fraction, radius: r, captured: captured_fraction >= 1.0 - eps })
}

/// ∫_{B_r(p)} 2K̃e^u and ∮_{B_r(p)∩∂Σ} 2h̃e^{u/2} by lumped quadrature.
pub fn local_mass(u: &[f64], problem: &Problem, p: Point, r: f64) -> Result<(f64, f64), AsymptoticsError> {
    if !(r > 0.0) {
        return Err(AsymptoticsError::InvalidArgument("r > 0 required".into()));
    }
    let f = problem.functional()?;
    let (wa, wb) = f.mass_weights(u);
    let mut inner = 0.0;
    let mut bdry = 0.0;
    for (v, &x) in problem.mesh.vertices().iter().enumerate() {
        if dist(x, p) < r {
            inner += 2.0 * wa[v];
            // wb carries a factor ½
            bdry += 4.0 * wb[v];
        }
    }
    Ok((inner, bdry))
}

fn tri_points(mesh: &TriangleMesh, t: usize) -> [Point; 3] {
    let tri = mesh.triangles()[t];
    [mesh.vertices()[tri[0]], mesh.vertices()[tri[1]], mesh.vertices()[tri[2]]]
}

/// Constant gradient of the P1 interpolant on one triangle.
fn tri_gradient(x: &[Point; 3], vals: [f64; 3]) -> [f64; 2] {
    let (e1, e2) = ([x[1][0] - x[0][0], x[1][1] - x[0][1]], [x[2][0] - x[0][0], x[2][1] - x[0][1]]);
    let det = e1[0] * e2[1] - e1[1] * e2[0];
    let (d1, d2) = (vals[1] - vals[0], vals[2] - vals[0]);
    [(d1 * e2[1] - d2 * e1[1]) / det, (e1[0] * d2 - e2[0] * d1) / det]
}

fn barycentric(x: &[Point; 3], p: Point) -> [f64; 3] {
    let det = (x[1][0] - x[0][0]) * (x[2][1] - x[0][1]) - (x[2][0] - x[0][0]) * (x[1][1] - x[0][1]);
    let l1 = ((p[0] - x[0][0]) * (x[2][1] - x[0][1]) - (x[2][0] - x[0][0]) * (p[1] - x[0][1])) / det;
    let l2 = ((x[1][0] - x[0][0]) * (p[1] - x[0][1]) - (p[0] - x[0][0]) * (x[1][1] - x[0][1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

fn seg_dist(p: Point, a: Point, b: Point) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let l2 = d[0] * d[0] + d[1] * d[1];
    let s = if l2 > 0.0 { (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / l2).clamp(0.0, 1.0) } else { 0.0 };
    dist(p, [a[0] + s * d[0], a[1] + s * d[1]])
}

fn tri_dist(x: &[Point; 3], p: Point) -> f64 {
    if barycentric(x, p).iter().all(|&l| l >= 0.0) {
        return 0.0;
    }
    (0..3).map(|i| seg_dist(p, x[i], x[(i + 1) % 3])).fold(f64::INFINITY, f64::min)
}

// Degree-5 seven-point rule on the reference triangle: (weight, λ1, λ2, λ3).
const DUNAVANT5: [(f64, [f64; 3]); 7] = {
    const A1: f64 = 0.059_715_871_789_770;
    const B1: f64 = 0.470_142_064_105_115;
    const A2: f64 = 0.797_426_985_353_087;
    const B2: f64 = 0.101_286_507_323_456;
    const W0: f64 = 0.225;
    const W1: f64 = 0.132_394_152_788_506;
    const W2: f64 = 0.125_939_180_544_827;
    [
        (W0, [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]),
        (W1, [A1, B1, B1]),
        (W1, [B1, A1, B1]),
        (W1, [B1, B1, A1]),
        (W2, [A2, B2, B2]),
        (W2, [B2, A2, B2]),
        (W2, [B2, B2, A2]),
    ]
};

const GAUSS5: [(f64, f64); 5] = [
    (0.568_888_888_888_888_9, 0.0),
    (0.478_628_670_499_366_5, -0.538_469_310_105_683_1),
    (0.478_628_670_499_366_5, 0.538_469_310_105_683_1),
    (0.236_926_885_056_189_1, -0.906_179_845_938_664),
    (0.236_926_885_056_189_1, 0.906_179_845_938_664),
];

/// ∫ over tri ∩ B_r(p) by recursive midpoint subdivision of the cut triangles.
fn ball_integral(tri: [Point; 3], p: Point, r: f64, depth: usize, g: &dyn Fn(Point) -> f64) -> f64 {
    let inside = tri.iter().filter(|&&x| dist(x, p) <= r).count();
    if inside == 0 && tri_dist(&tri, p) >= r {
        return 0.0;
    }
    let area = 0.5 * ((tri[1][0] - tri[0][0]) * (tri[2][1] - tri[0][1]) - (tri[2][0] - tri[0][0]) * (tri[1][1] - tri[0][1])).abs();
    let quad = || {
        DUNAVANT5
            .iter()
            .map(|(w, l)| {
                let x = [
                    l[0] * tri[0][0] + l[1] * tri[1][0] + l[2] * tri[2][0],
                    l[0] * tri[0][1] + l[1] * tri[1][1] + l[2] * tri[2][1],
                ];
                w * g(x)
            })
            .sum::<f64>()
            * area
    };
    if inside == 3 {
        return quad();
    }
    if depth == 0 {
        let c = [(tri[0][0] + tri[1][0] + tri[2][0]) / 3.0, (tri[0][1] + tri[1][1] + tri[2][1]) / 3.0];
        return if dist(c, p) < r { quad() } else { 0.0 };
    }
    let mid = |a: Point, b: Point| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    let (m01, m12, m20) = (mid(tri[0], tri[1]), mid(tri[1], tri[2]), mid(tri[2], tri[0]));
    [[tri[0], m01, m20], [m01, tri[1], m12], [m20, m12, tri[2]], [m01, m12, m20]]
        .into_iter()
        .map(|t| ball_integral(t, p, r, depth - 1, g))
        .sum()
}

/// Area-weighted average of the triangle gradients around each vertex.
fn recovered_gradient(mesh: &TriangleMesh, u: &[f64]) -> Vec<[f64; 2]> {
    let mut g = vec![[0.0; 2]; mesh.n_vertices()];
    let mut w = vec![0.0; mesh.n_vertices()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let x = tri_points(mesh, t);
        let gt = tri_gradient(&x, [u[tri[0]], u[tri[1]], u[tri[2]]]);
        let a = mesh.triangle_area(t);
        for &v in tri {
            g[v][0] += a * gt[0];
            g[v][1] += a * gt[1];
            w[v] += a;
        }
    }
    for (gv, wv) in g.iter_mut().zip(&w) {
        gv[0] /= wv;
        gv[1] /= wv;
    }
    g
}

/// Relative imbalance |LHS − RHS|/|RHS| of the Pohozaev identity for
/// −μΔu + λ/|Σ| = 2C²K̃e^u on B_r(p), tested against the field x − p.
pub fn pohozaev_residual(u: &[f64], problem: &Problem, params: &EnergyParams, p: Point, r: f64) -> Result<f64, AsymptoticsError> {
    let mesh = problem.mesh;
    let not_interior = AsymptoticsError::BallNotInterior { x: p[0], y: p[1], r };
    if !(r > 0.0) {
        return Err(AsymptoticsError::InvalidArgument("r > 0 required".into()));
    }
    if mesh.boundary_vertices().iter().any(|&v| dist(mesh.vertices()[v], p) <= r) {
        return Err(not_interior);
    }
    let f = problem.functional()?;
    let (a, b) = f.masses(u);
    let c = normalization_c(a, b, params.lambda)?;
    let fc = 2.0 * c * c;
    let c0 = params.lambda / problem.ops.area;
    let mu = params.mu;
    let kt = &problem.data.k_tilde;

    let near: Vec<usize> = (0..mesh.n_triangles())
        .filter(|&t| {
            let x = tri_points(mesh, t);
            tri_dist(&x, p) < r
        })
        .collect();

    let lhs: f64 = near
        .par_iter()
        .map(|&t| {
            let tri = mesh.triangles()[t];
            let x = tri_points(mesh, t);
            let gu = tri_gradient(&x, [u[tri[0]], u[tri[1]], u[tri[2]]]);
            let gk = tri_gradient(&x, [kt[tri[0]], kt[tri[1]], kt[tri[2]]]);
            let (u0, k0, x0) = (u[tri[0]], kt[tri[0]], x[0]);
            let g = |q: Point| {
                let d = [q[0] - x0[0], q[1] - x0[1]];
                let y = [q[0] - p[0], q[1] - p[1]];
                let uq = u0 + gu[0] * d[0] + gu[1] * d[1];
                let kq = k0 + gk[0] * d[0] + gk[1] * d[1];
                let fq = fc * kq;
                let gfy = fc * (gk[0] * y[0] + gk[1] * y[1]);
                2.0 * c0 * (gu[0] * y[0] + gu[1] * y[1]) + 2.0 * (2.0 * fq + gfy) * uq.exp()
            };
            ball_integral(x, p, r, 8, &g)
        })
        .sum();

    // split the circle at its crossings with the edges of nearby triangles
    let mut angles = Vec::new();
    for &t in &near {
        let x = tri_points(mesh, t);
        for i in 0..3 {
            let (a0, a1) = (x[i], x[(i + 1) % 3]);
            let d = [a1[0] - a0[0], a1[1] - a0[1]];
            let m = [a0[0] - p[0], a0[1] - p[1]];
            let qa = d[0] * d[0] + d[1] * d[1];
            let qb = 2.0 * (m[0] * d[0] + m[1] * d[1]);
            let qc = m[0] * m[0] + m[1] * m[1] - r * r;
            let disc = qb * qb - 4.0 * qa * qc;
            if disc < 0.0 {
                continue;
            }
            for s in [(-qb - disc.sqrt()) / (2.0 * qa), (-qb + disc.sqrt()) / (2.0 * qa)] {
                if (0.0..=1.0).contains(&s) {
                    let y = [m[0] + s * d[0], m[1] + s * d[1]];
                    angles.push(y[1].atan2(y[0]).rem_euclid(std::f64::consts::TAU));
                }
            }
        }
    }
    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    if angles.is_empty() {
        angles.push(0.0);
    }
    let grad = recovered_gradient(mesh, u);
    let locate = |q: Point| -> Option<(usize, [f64; 3])> {
        near.iter().find_map(|&t| {
            let l = barycentric(&tri_points(mesh, t), q);
            l.iter().all(|&v| v >= -1e-10).then_some((t, l))
        })
    };
    let na = angles.len();
    let mut rhs = 0.0;
    for j in 0..na {
        let th0 = angles[j];
        let th1 = if j + 1 < na { angles[j + 1] } else { angles[0] + std::f64::consts::TAU };
        if th1 - th0 <= 0.0 {
            continue;
        }
        let thm = 0.5 * (th0 + th1);
        let (t, _) = locate([p[0] + r * thm.cos(), p[1] + r * thm.sin()]).ok_or(AsymptoticsError::BallNotInterior { x: p[0], y: p[1], r })?;
        let tri = mesh.triangles()[t];
        let x = tri_points(mesh, t);
        let half = 0.5 * (th1 - th0);
        for (w, s) in GAUSS5 {
            let th = thm + half * s;
            let nu = [th.cos(), th.sin()];
            let q = [p[0] + r * nu[0], p[1] + r * nu[1]];
            let l = barycentric(&x, q);
            let uq: f64 = (0..3).map(|i| l[i] * u[tri[i]]).sum();
            let kq: f64 = (0..3).map(|i| l[i] * kt[tri[i]]).sum();
            let gq = [(0..3).map(|i| l[i] * grad[tri[i]][0]).sum::<f64>(), (0..3).map(|i| l[i] * grad[tri[i]][1]).sum::<f64>()];
            let gn = gq[0] * nu[0] + gq[1] * nu[1];
            let g2 = gq[0] * gq[0] + gq[1] * gq[1];
            let val = 2.0 * fc * kq * uq.exp() * r + 2.0 * mu * (r * gn) * gn - mu * g2 * r;
            rhs += w * half * r * val;
        }
    }
    if rhs == 0.0 {
        return Err(AsymptoticsError::Degenerate("Pohozaev boundary term vanishes".into()));
    }
    Ok((lhs - rhs).abs() / rhs.abs())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianKind {
    MeanField,
    Direct,
}

#[derive(Clone, Debug)]
pub struct MorseOptions {
    pub tol_eig: f64,
    pub cap: usize,
    pub eigen: EigenOptions,
}

impl Default for MorseOptions {
    fn default() -> Self {
        MorseOptions { tol_eig: 1e-8, cap: 20, eigen: EigenOptions::default() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MorseCount {
    pub index: usize,
    /// Smallest eigenvalues computed, ascending.
    pub eigenvalues: Vec<f64>,
}

/// Number of negative eigenvalues of the second variation of J (mean-zero
/// space) or of I at u + 2log C (full space).
pub fn morse_index(
    u: &[f64],
    problem: &Problem,
    params: &EnergyParams,
    kind: HessianKind,
    group: Option<&SymmetryGroup>,
    options: &MorseOptions,
) -> Result<MorseCount, AsymptoticsError> {
    let f = problem.functional()?;
    let mean_zero = kind == HessianKind::MeanField;
    let constraint = match group {
        Some(g) => g.constraint(mean_zero),
        None => Constraint { mean_zero, orbits: None },
    };
    let op = match kind {
        HessianKind::MeanField => f.hessian_j(u, params)?,
        HessianKind::Direct => {
            let (a, b) = f.masses(u);
            let c = normalization_c(a, b, params.lambda)?;
            let w: Vec<f64> = u.iter().map(|x| x + 2.0 * c.ln()).collect();
            f.hessian_i(&w)?
        }
    };
    let space = match &constraint.orbits {
        Some(o) => o.len(),
        None => f.dim(),
    } - usize::from(mean_zero);
    let cap = options.cap.min(space);
    let mut count = cap.min(4);
    loop {
        let pairs = problem.ops.smallest_eigenpairs(&op, count, &constraint, &options.eigen)?;
        let eig: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let scale = eig.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let neg = eig.iter().filter(|&&x| x < -options.tol_eig * scale).count();
        if neg < count {
            return Ok(MorseCount { index: neg, eigenvalues: eig });
        }
        if count >= cap {
            return Err(AsymptoticsError::CapReached(cap));
        }
        count = (2 * count).min(cap);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TmKind {
    /// log∫K̃e^u against ∫|∇u|²/(8τπ).
    Interior,
    /// log∮h̃e^{u/2} against ∫|∇u|²/(16τπ).
    Boundary,
    /// log(√(B² + 8πχA) + B) against ∫|∇u|²/(16τπ).
    Combined,
    /// log∫K̃e^u against ∫|∇u|²/(16π·min{1, 1+α}), away from the boundary.
    Local { alpha: f64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct TmReport {
    pub kind: TmKind,
    pub scales: Vec<f64>,
    /// Increment ratios against the smallest scale, one per larger scale.
    pub ratios: Vec<f64>,
    pub sup_ratio: f64,
    pub within_bound: bool,
}

/// Empirical Trudinger-Moser ratios along a bubble family. Increments
/// relative to the smallest scale remove the additive constant of the
/// inequality.
pub fn tm_probe(sigma: &Barycenter, scales: &[f64], kind: TmKind, chi: f64, problem: &Problem) -> Result<TmReport, AsymptoticsError> {
    if scales.len() < 2 {
        return Err(AsymptoticsError::Degenerate("need at least two scales".into()));
    }
    let mut order: Vec<usize> = (0..scales.len()).collect();
    order.sort_by(|&i, &j| scales[i].total_cmp(&scales[j]));
    let fields: Vec<Vec<f64>> = order.par_iter().map(|&i| bubble(sigma, scales[i], problem)).collect::<Result<_, _>>()?;
    let mut rep = tm_probe_fields(&fields, kind, chi, problem)?;
    rep.scales = order.iter().map(|&i| scales[i]).collect();
    Ok(rep)
}

/// Ratios for an arbitrary family; the first field is the reference.
pub fn tm_probe_fields(fields: &[Vec<f64>], kind: TmKind, chi: f64, problem: &Problem) -> Result<TmReport, AsymptoticsError> {
    if fields.len() < 2 {
        return Err(AsymptoticsError::Degenerate("need at least two fields".into()));
    }
    let tau = trudinger_tau(&problem.data.sing);
    let f = problem.functional()?;
    let lam = 4.0 * std::f64::consts::PI * chi;
    let vals: Vec<(f64, f64)> = fields
        .iter()
        .map(|u| {
            let (a, b) = f.masses(u);
            let lhs = match kind {
                TmKind::Interior | TmKind::Local { .. } => a.ln(),
                TmKind::Boundary => b.abs().ln(),
                TmKind::Combined => ((b * b + 2.0 * lam * a).max(0.0).sqrt() + b).ln(),
            };
            (lhs, f.dirichlet(u))
        })
        .collect();
    let coef = match kind {
        TmKind::Interior => 1.0 / (8.0 * tau * std::f64::consts::PI),
        TmKind::Boundary | TmKind::Combined => 1.0 / (16.0 * tau * std::f64::consts::PI),
        TmKind::Local { alpha } => 1.0 / (16.0 * std::f64::consts::PI * (1.0 + alpha).min(1.0)),
    };
    let (l0, d0) = vals[0];
    let mut ratios = Vec::new();
    for &(l, d) in &vals[1..] {
        let dd = d - d0;
        if !(dd.abs() > 1e-12 * (1.0 + d.abs())) || !l.is_finite() || !l0.is_finite() {
            return Err(AsymptoticsError::Degenerate("Dirichlet energy does not grow along the family".into()));
        }
        ratios.push((l - l0) / (coef * dd));
    }
    let sup_ratio = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(TmReport { kind, scales: vec![], ratios, sup_ratio, within_bound: sup_ratio <= 1.1 })
}
