//! P1 stiffness and mass assembly, compatible Neumann solves, Green's
//! functions with nodal delta sources, and a block eigensolver for the
//! smallest generalized eigenpairs of symmetric forms.

use std::sync::{Once, OnceLock};

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMat, Triplet};
use faer::{MatMut, Side};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{dist, TriangleMesh};

#[derive(Debug, Error)]
pub enum EllipticError {
    #[error("degenerate triangle {0}: area {1:e} below tolerance")]
    DegenerateTriangle(usize, f64),
    #[error("incompatible Neumann data: |∫rhs + ∮flux| = {defect:e} exceeds {tol:e}")]
    Incompatible { defect: f64, tol: f64 },
    #[error("sparse factorization failed: {0}")]
    Factorization(String),
    #[error("vertex {0} is not a mesh vertex")]
    InvalidVertex(usize),
    #[error("field length {got} does not match expected {expected}")]
    FieldLength { expected: usize, got: usize },
    #[error("eigensolver did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("invalid eigenproblem: {0}")]
    InvalidProblem(String),
}

/// Compressed sparse row matrix (square, symmetric pattern in practice).
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut trips: Vec<(usize, usize, f64)>) -> Self {
        trips.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(trips.len());
        let mut vals: Vec<f64> = Vec::with_capacity(trips.len());
        let mut last = (usize::MAX, usize::MAX);
        for (r, c, v) in trips {
            if (r, c) == last {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = (r, c);
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix { n, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.cols[k], self.vals[k]))
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            y[i] = s;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec(x, &mut y);
        y
    }

    /// xᵀ A y.
    pub fn form(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.n)
            .map(|i| x[i] * self.row(i).map(|(j, v)| v * y[j]).sum::<f64>())
            .sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).filter(|&(j, _)| j == i).map(|(_, v)| v).sum()).collect()
    }

    /// αA + βB on the union pattern.
    pub fn combine(&self, alpha: f64, other: &SparseMatrix, beta: f64) -> SparseMatrix {
        let trips = self
            .triplets()
            .map(|(i, j, v)| (i, j, alpha * v))
            .chain(other.triplets().map(|(i, j, v)| (i, j, beta * v)))
            .collect();
        SparseMatrix::from_triplets(self.n, trips)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.triplets() {
            d[(i, j)] += v;
        }
        d
    }

    fn factor(&self, pin: Option<usize>) -> Result<Llt<usize, f64>, EllipticError> {
        static SEQ: Once = Once::new();
        // deterministic, single-threaded factorizations; callers parallelize above this level
        SEQ.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
        let mut trips: Vec<Triplet<usize, usize, f64>> = self
            .triplets()
            .filter(|&(i, j, _)| pin.is_none_or(|p| i != p && j != p))
            .map(|(i, j, v)| Triplet::new(i, j, v))
            .collect();
        if let Some(p) = pin {
            trips.push(Triplet::new(p, p, 1.0));
        }
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(self.n, self.n, &trips)
            .map_err(|e| EllipticError::Factorization(format!("{e:?}")))?;
        a.sp_cholesky(Side::Lower).map_err(|e| EllipticError::Factorization(format!("{e:?}")))
    }
}

/// A symmetric linear operator acting on vertex fields.
pub trait SymmetricOperator: Sync {
    fn dim(&self) -> usize;
    fn apply_to(&self, x: &[f64], y: &mut [f64]);
}

impl SymmetricOperator for SparseMatrix {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply_to(&self, x: &[f64], y: &mut [f64]) {
        self.mul_vec(x, y)
    }
}

fn solve_in_place(llt: &Llt<usize, f64>, x: &mut [f64], n: usize) {
    let k = x.len() / n;
    llt.solve_in_place(MatMut::from_column_major_slice_mut(x, n, k));
}

/// Stiffness, mass and vertex-indexed boundary mass matrices of the P1 space.
pub fn assemble(mesh: &TriangleMesh) -> Result<(SparseMatrix, SparseMatrix, SparseMatrix), EllipticError> {
    let n = mesh.n_vertices();
    let v = mesh.vertices();
    let mut ks = Vec::with_capacity(9 * mesh.n_triangles());
    let mut ms = Vec::with_capacity(9 * mesh.n_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let p = [v[tri[0]], v[tri[1]], v[tri[2]]];
        let area = mesh.triangle_area(t);
        let hmax = (0..3).map(|i| dist(p[i], p[(i + 1) % 3])).fold(0.0, f64::max);
        if !(area > 1e-14 * hmax * hmax) {
            return Err(EllipticError::DegenerateTriangle(t, area));
        }
        // edge opposite vertex i
        let e: Vec<[f64; 2]> = (0..3)
            .map(|i| {
                let (a, b) = (p[(i + 1) % 3], p[(i + 2) % 3]);
                [b[0] - a[0], b[1] - a[1]]
            })
            .collect();
        for i in 0..3 {
            for j in 0..3 {
                ks.push((tri[i], tri[j], (e[i][0] * e[j][0] + e[i][1] * e[j][1]) / (4.0 * area)));
                ms.push((tri[i], tri[j], area / 12.0 * if i == j { 2.0 } else { 1.0 }));
            }
        }
    }
    let mut bs = Vec::new();
    for (a, b) in mesh.boundary_edges() {
        let len = dist(v[a], v[b]);
        bs.extend([(a, a, len / 3.0), (b, b, len / 3.0), (a, b, len / 6.0), (b, a, len / 6.0)]);
    }
    Ok((SparseMatrix::from_triplets(n, ks), SparseMatrix::from_triplets(n, ms), SparseMatrix::from_triplets(n, bs)))
}

/// Assembled operators of one mesh with cached factorizations.
pub struct Operators {
    pub stiffness: SparseMatrix,
    pub mass: SparseMatrix,
    pub boundary_mass: SparseMatrix,
    /// Lumped vertex areas (row sums of the mass matrix).
    pub lumped: Vec<f64>,
    /// Lumped boundary lengths per vertex, zero at interior vertices.
    pub boundary_lumped: Vec<f64>,
    pub area: f64,
    interior: Vec<bool>,
    neumann: Llt<usize, f64>,
    pin: usize,
    mass_llt: OnceLock<Llt<usize, f64>>,
    shifted_llt: OnceLock<Llt<usize, f64>>,
    dirichlet_llt: OnceLock<Result<(Llt<usize, f64>, Vec<usize>), String>>,
}

impl Operators {
    pub fn new(mesh: &TriangleMesh) -> Result<Self, EllipticError> {
        let (stiffness, mass, boundary_mass) = assemble(mesh)?;
        let ones = vec![1.0; mesh.n_vertices()];
        let lumped = mass.apply(&ones);
        let boundary_lumped = boundary_mass.apply(&ones);
        let area = lumped.iter().sum();
        let pin = 0;
        let neumann = stiffness.factor(Some(pin))?;
        Ok(Operators {
            stiffness,
            mass,
            boundary_mass,
            lumped,
            boundary_lumped,
            area,
            interior: (0..mesh.n_vertices()).map(|v| !mesh.is_boundary(v)).collect(),
            neumann,
            pin,
            mass_llt: OnceLock::new(),
            shifted_llt: OnceLock::new(),
            dirichlet_llt: OnceLock::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.lumped.len()
    }

    /// ∫u / |Σ|.
    pub fn mean(&self, u: &[f64]) -> f64 {
        dot(&self.lumped, u) / self.area
    }

    /// Subtracts the mean in place.
    pub fn project_mean_zero(&self, u: &mut [f64]) {
        let m = self.mean(u);
        u.iter_mut().for_each(|x| *x -= m);
    }

    /// Removes the constant-mode component of a load vector so that it sums to zero.
    pub fn deflate_load(&self, load: &mut [f64]) {
        let s: f64 = load.iter().sum();
        for (l, m) in load.iter_mut().zip(&self.lumped) {
            *l -= s * m / self.area;
        }
    }

    /// Mean-zero solution of S u = load after deflating the load. Several
    /// right-hand sides may be stacked column-major.
    pub fn solve_load(&self, load: &mut [f64]) {
        let n = self.dim();
        for col in load.chunks_mut(n) {
            self.deflate_load(col);
            col[self.pin] = 0.0;
        }
        solve_in_place(&self.neumann, load, n);
        for col in load.chunks_mut(n) {
            self.project_mean_zero(col);
        }
    }

    /// Mean-zero weak solution of −Δu = rhs, ∂_ν u = flux, with rhs a vertex
    /// field and flux a vertex field read at boundary vertices.
    pub fn solve_neumann(&self, rhs: &[f64], flux: &[f64]) -> Result<Vec<f64>, EllipticError> {
        let n = self.dim();
        for f in [rhs, flux] {
            if f.len() != n {
                return Err(EllipticError::FieldLength { expected: n, got: f.len() });
            }
        }
        let mut load = self.mass.apply(rhs);
        let fl = self.boundary_mass.apply(flux);
        load.iter_mut().zip(&fl).for_each(|(a, b)| *a += b);
        let defect: f64 = load.iter().sum();
        let scale = dot(&self.lumped, &abs(rhs)) + dot(&self.boundary_lumped, &abs(flux));
        let tol = 1e-10 * scale.max(f64::MIN_POSITIVE);
        if defect.abs() > tol {
            return Err(EllipticError::Incompatible { defect: defect.abs(), tol });
        }
        self.solve_load(&mut load);
        Ok(load)
    }

    /// Zero-mean Neumann Green's function: S G = e_p − m/|Σ|.
    pub fn green_function(&self, p: usize) -> Result<Vec<f64>, EllipticError> {
        if p >= self.dim() {
            return Err(EllipticError::InvalidVertex(p));
        }
        let mut load: Vec<f64> = self.lumped.iter().map(|m| -m / self.area).collect();
        load[p] += 1.0;
        self.solve_load(&mut load);
        Ok(load)
    }

    /// Consistent-mass solve M x = b.
    pub fn mass_solve(&self, b: &mut [f64]) {
        let llt = self.mass_llt.get_or_init(|| self.mass.factor(None).expect("mass matrix is SPD"));
        solve_in_place(llt, b, self.dim());
    }

    /// Applies (S + M)⁻¹, the eigensolver preconditioner.
    pub fn shifted_solve(&self, b: &mut [f64]) {
        let llt = self
            .shifted_llt
            .get_or_init(|| self.stiffness.combine(1.0, &self.mass, 1.0).factor(None).expect("S + M is SPD"));
        solve_in_place(llt, b, self.dim());
    }

    /// √(d_Iᵀ S_II⁻¹ d_I): dual norm of a load restricted to test functions
    /// vanishing on the boundary.
    pub fn interior_dual_norm(&self, load: &[f64]) -> f64 {
        let fact = self.dirichlet_llt.get_or_init(|| {
            let mut map = vec![usize::MAX; self.dim()];
            let mut idx = Vec::new();
            for (v, &i) in self.interior.iter().enumerate() {
                if i {
                    map[v] = idx.len();
                    idx.push(v);
                }
            }
            let trips = self
                .stiffness
                .triplets()
                .filter(|&(i, j, _)| self.interior[i] && self.interior[j])
                .map(|(i, j, v)| (map[i], map[j], v))
                .collect();
            SparseMatrix::from_triplets(idx.len(), trips).factor(None).map(|l| (l, idx)).map_err(|e| e.to_string())
        });
        match fact {
            Ok((llt, idx)) if !idx.is_empty() => {
                let d: Vec<f64> = idx.iter().map(|&v| load[v]).collect();
                let mut x = d.clone();
                solve_in_place(llt, &mut x, idx.len());
                dot(&d, &x).max(0.0).sqrt()
            }
            _ => 0.0,
        }
    }

    /// √(dᵀ S⁺ d) of the deflated load: the H¹ dual norm on mean-zero fields.
    pub fn dual_norm(&self, load: &[f64]) -> f64 {
        let mut d = load.to_vec();
        self.deflate_load(&mut d);
        let mut x = d.clone();
        self.solve_load(&mut x);
        dot(&d, &x).max(0.0).sqrt()
    }

    /// Smallest eigenpairs of `a` against the mass matrix, preconditioned by (S+M)⁻¹.
    pub fn smallest_eigenpairs(
        &self,
        a: &dyn SymmetricOperator,
        count: usize,
        constraint: &Constraint,
        options: &EigenOptions,
    ) -> Result<Vec<(f64, Vec<f64>)>, EllipticError> {
        lobpcg(a, &self.mass, &|x: &mut [f64]| self.shifted_solve(x), count, constraint, &self.lumped, options)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn abs(a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| x.abs()).collect()
}

/// Linear constraints defining the working subspace of the eigensolver.
#[derive(Clone, Debug, Default)]
pub struct Constraint {
    /// Restrict to ∫φ = 0.
    pub mean_zero: bool,
    /// Restrict to fields constant on each listed orbit.
    pub orbits: Option<Vec<Vec<usize>>>,
}

impl Constraint {
    pub fn full() -> Self {
        Constraint::default()
    }
    pub fn mean_zero() -> Self {
        Constraint { mean_zero: true, orbits: None }
    }

    /// Projects onto the subspace; mass-orthogonal when the mass matrix is
    /// invariant under the orbit permutation.
    pub fn project(&self, x: &mut [f64], lumped: &[f64]) {
        if let Some(orbits) = &self.orbits {
            for o in orbits {
                let m = o.iter().map(|&v| x[v]).sum::<f64>() / o.len() as f64;
                for &v in o {
                    x[v] = m;
                }
            }
        }
        if self.mean_zero {
            let area: f64 = lumped.iter().sum();
            let m = dot(lumped, x) / area;
            x.iter_mut().for_each(|v| *v -= m);
        }
    }
}

#[derive(Clone, Debug)]
pub struct EigenOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions { tol: 1e-9, max_iter: 1000, seed: 0x5eed }
    }
}

fn columns_apply(op: &dyn SymmetricOperator, z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(z.nrows(), z.ncols());
    for j in 0..z.ncols() {
        op.apply_to(z.column(j).as_slice(), out.column_mut(j).as_mut_slice());
    }
    out
}

/// Locally optimal block preconditioned conjugate gradient for the smallest
/// eigenpairs of A x = θ B x on a constrained subspace. Rayleigh-Ritz is done
/// on an eigen-decomposed Gram matrix with small directions dropped, which
/// tolerates the near-dependence of the search block late in the iteration.
pub fn lobpcg(
    a: &dyn SymmetricOperator,
    b: &SparseMatrix,
    precond: &dyn Fn(&mut [f64]),
    count: usize,
    constraint: &Constraint,
    lumped: &[f64],
    options: &EigenOptions,
) -> Result<Vec<(f64, Vec<f64>)>, EllipticError> {
    let n = a.dim();
    if count == 0 {
        return Ok(vec![]);
    }
    let mut sub_dim = n - usize::from(constraint.mean_zero);
    if let Some(o) = &constraint.orbits {
        sub_dim = o.len() - usize::from(constraint.mean_zero);
    }
    if count > sub_dim {
        return Err(EllipticError::InvalidProblem(format!("{count} eigenpairs requested in a space of dimension {sub_dim}")));
    }
    let m = (count + count.clamp(2, 6)).min(sub_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut x = DMatrix::from_fn(n, m, |_, _| rng.random::<f64>() - 0.5);
    let project_cols = |z: &mut DMatrix<f64>| {
        for j in 0..z.ncols() {
            constraint.project(z.column_mut(j).as_mut_slice(), lumped);
        }
    };
    project_cols(&mut x);
    let bop: &dyn SymmetricOperator = b;
    let mut p: Option<DMatrix<f64>> = None;
    let mut theta: Vec<f64> = vec![0.0; m];
    let mut worst = f64::INFINITY;
    for it in 0..options.max_iter {
        // assemble search block
        let mut blocks = vec![x.clone()];
        if it > 0 {
            let ax = columns_apply(a, &x);
            let bx = columns_apply(bop, &x);
            let mut r = ax.clone();
            worst = 0.0f64;
            // scale by the block's largest Ritz value so zero eigenvalues converge
            let top = theta.iter().fold(0.0f64, |a: f64, t: &f64| a.max(t.abs()));
            for j in 0..m {
                let mut rj = r.column_mut(j);
                rj.axpy(-theta[j], &bx.column(j), 1.0);
                if j < count {
                    let scale = (theta[j].abs() + top) * bx.column(j).norm();
                    worst = worst.max(rj.norm() / scale.max(f64::MIN_POSITIVE));
                }
            }
            if worst < options.tol {
                let mut out = Vec::with_capacity(count);
                for j in 0..count {
                    out.push((theta[j], x.column(j).iter().copied().collect()));
                }
                return Ok(out);
            }
            let mut w = r;
            precond(w.as_mut_slice());
            project_cols(&mut w);
            blocks.push(w);
            if let Some(pp) = p.take() {
                blocks.push(pp);
            }
        }
        // normalize every column in the B-norm before forming the Gram matrices
        let ncols: usize = blocks.iter().map(|z| z.ncols()).sum();
        let mut z = DMatrix::zeros(n, ncols);
        let mut c0 = 0;
        for blk in &blocks {
            for j in 0..blk.ncols() {
                z.set_column(c0 + j, &blk.column(j));
            }
            c0 += blk.ncols();
        }
        let bz = columns_apply(bop, &z);
        for j in 0..ncols {
            let nrm = z.column(j).dot(&bz.column(j)).max(0.0).sqrt();
            if nrm > 0.0 {
                z.column_mut(j).scale_mut(1.0 / nrm);
            }
        }
        let bz = columns_apply(bop, &z);
        let az = columns_apply(a, &z);
        let gb = z.transpose() * &bz;
        let ga = z.transpose() * &az;
        let gb = (&gb + gb.transpose()) * 0.5;
        let ga = (&ga + ga.transpose()) * 0.5;
        let eb = SymmetricEigen::new(gb);
        let dmax = eb.eigenvalues.iter().copied().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..ncols).filter(|&i| eb.eigenvalues[i] > 1e-12 * dmax).collect();
        if keep.len() < m {
            return Err(EllipticError::InvalidProblem("search space collapsed".into()));
        }
        let mut v = DMatrix::zeros(ncols, keep.len());
        for (k, &i) in keep.iter().enumerate() {
            v.set_column(k, &(eb.eigenvectors.column(i) / eb.eigenvalues[i].sqrt()));
        }
        let ar = v.transpose() * ga * &v;
        let ar = (&ar + ar.transpose()) * 0.5;
        let er = SymmetricEigen::new(ar);
        let mut order: Vec<usize> = (0..keep.len()).collect();
        order.sort_by(|&i, &j| er.eigenvalues[i].total_cmp(&er.eigenvalues[j]));
        let mut coef = DMatrix::zeros(keep.len(), m);
        for (k, &i) in order.iter().take(m).enumerate() {
            coef.set_column(k, &er.eigenvectors.column(i));
            theta[k] = er.eigenvalues[i];
        }
        let c = v * coef;
        let xn = &z * &c;
        if it > 0 {
            // the part of the update outside the current X block
            let mut cp = c.clone();
            cp.rows_mut(0, m).fill(0.0);
            p = Some(&z * cp);
        }
        x = xn;
        project_cols(&mut x);
    }
    Err(EllipticError::NoConvergence { iterations: options.max_iter, residual: worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_disc_mesh, integrate};

    #[test]
    fn stiffness_kernel_and_forms() {
        let mesh = build_disc_mesh(1.0, 4).unwrap();
        let ops = Operators::new(&mesh).unwrap();
        let ones = vec![1.0; mesh.n_vertices()];
        let k1 = ops.stiffness.apply(&ones);
        assert!(k1.iter().all(|x| x.abs() < 1e-12));
        let x: Vec<f64> = mesh.vertices().iter().map(|p| p[0]).collect();
        let e = ops.stiffness.form(&x, &x);
        assert!((e - std::f64::consts::PI).abs() / std::f64::consts::PI < 0.02);
        assert!((ops.mass.form(&ones, &ones) - mesh.area()).abs() < 1e-12);
    }

    #[test]
    fn neumann_manufactured_solution() {
        let mut errs = Vec::new();
        for level in [3, 4] {
            let mesh = build_disc_mesh(1.0, level).unwrap();
            let ops = Operators::new(&mesh).unwrap();
            let exact: Vec<f64> = mesh.vertices().iter().map(|p| p[0] * p[0] - p[1] * p[1]).collect();
            // ∂_ν(x² − y²) = 2(x² − y²) on the unit circle
            let flux: Vec<f64> = exact.iter().map(|e| 2.0 * e).collect();
            let u = ops.solve_neumann(&vec![0.0; mesh.n_vertices()], &flux).unwrap();
            assert!(ops.mean(&u).abs() < 1e-12);
            let mut d: Vec<f64> = u.iter().zip(&exact).map(|(a, b)| a - b).collect();
            ops.project_mean_zero(&mut d);
            errs.push(ops.mass.form(&d, &d).sqrt());
        }
        // O(h²): halving h divides the error by about four
        assert!(errs[1] < errs[0] / 3.0, "{errs:?}");
        assert!(errs[1] < 1e-3);
    }

    #[test]
    fn neumann_zero_and_incompatible() {
        let mesh = build_disc_mesh(1.0, 2).unwrap();
        let ops = Operators::new(&mesh).unwrap();
        let n = mesh.n_vertices();
        let u = ops.solve_neumann(&vec![0.0; n], &vec![0.0; n]).unwrap();
        assert!(u.iter().all(|&x| x == 0.0));
        assert!(matches!(ops.solve_neumann(&vec![1.0; n], &vec![0.0; n]), Err(EllipticError::Incompatible { .. })));
    }

    #[test]
    fn green_function_properties() {
        let mesh = build_disc_mesh(1.0, 5).unwrap();
        let ops = Operators::new(&mesh).unwrap();
        let p = mesh.nearest_vertex([0.0, 0.0]);
        let q = mesh.nearest_vertex([0.3, 0.2]);
        let gp = ops.green_function(p).unwrap();
        let gq = ops.green_function(q).unwrap();
        assert!(integrate(&gp, &mesh).unwrap().abs() < 1e-10);
        assert!((gp[q] - gq[p]).abs() < 1e-8);
        let sg = ops.stiffness.apply(&gp);
        for (v, s) in sg.iter().enumerate() {
            let load = f64::from(u8::from(v == p)) - ops.lumped[v] / ops.area;
            assert!((s - load).abs() < 1e-10);
        }
        // log slope on rings 4h..16h
        let h = mesh.local_edge_length(p);
        let (mut xs, mut ys) = (vec![], vec![]);
        for (v, x) in mesh.vertices().iter().enumerate() {
            let d = dist(*x, [0.0, 0.0]);
            if d >= 4.0 * h && d <= 16.0 * h {
                xs.push((1.0 / d).ln());
                ys.push(gp[v]);
            }
        }
        let slope = crate::fit_slope(&xs, &ys);
        let target = 1.0 / (2.0 * std::f64::consts::PI);
        assert!((slope - target).abs() / target < 0.1, "{slope}");
        assert!(matches!(ops.green_function(mesh.n_vertices()), Err(EllipticError::InvalidVertex(_))));
    }

    fn dense_smallest(a: &SparseMatrix, ops: &Operators, mean_zero: bool) -> Vec<f64> {
        let mut ad = a.to_dense();
        if mean_zero {
            let m = nalgebra::DVector::from_column_slice(&ops.lumped);
            ad += &m * m.transpose() * 1e6;
        }
        let md = ops.mass.to_dense();
        let l = md.cholesky().unwrap().l();
        let li = l.clone().try_inverse().unwrap();
        let c = &li * ad * li.transpose();
        let mut ev: Vec<f64> = SymmetricEigen::new((&c + c.transpose()) * 0.5).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    #[test]
    fn eigenpairs_match_dense_oracle() {
        let mesh = build_disc_mesh(1.0, 2).unwrap();
        let ops = Operators::new(&mesh).unwrap();
        let opts = EigenOptions { tol: 1e-11, ..Default::default() };
        let full = ops.smallest_eigenpairs(&ops.stiffness, 3, &Constraint::full(), &opts).unwrap();
        assert!(full[0].0.abs() < 1e-9);
        let mz = ops.smallest_eigenpairs(&ops.stiffness, 4, &Constraint::mean_zero(), &opts).unwrap();
        assert!(mz[0].0 > 0.1);
        let dense = dense_smallest(&ops.stiffness, &ops, true);
        for k in 0..4 {
            assert!((mz[k].0 - dense[k]).abs() < 1e-8, "{} vs {}", mz[k].0, dense[k]);
        }
        // mass-orthonormal eigenfields
        for i in 0..4 {
            for j in 0..4 {
                let g = ops.mass.form(&mz[i].1, &mz[j].1);
                assert!((g - f64::from(u8::from(i == j))).abs() < 1e-8);
            }
        }
    }
}
