//! Mean-field energy J_{λ,μ}, direct energy I_λ, the normalization constant
//! C, admissibility, gradients and Hessian forms on the P1 space.
//!
//! Everything is in the λ-convention: C solves C²A + CB = λ/2 and
//! F(A, B) = 2λ·log(|λ|/C) + 2BC, which reproduces the three sign cases of
//! the geometric problem at λ = 4πχ. Masses use lumped quadrature, so the
//! Hessians are sparse plus diagonal plus rank two.

use std::f64::consts::PI;

use thiserror::Error;

use crate::elliptic::{dot, Operators, SparseMatrix, SymmetricOperator};
pub use crate::singular::CurvatureData;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FunctionalError {
    #[error("state outside the admissible domain: A = {a:e}, B = {b:e}, lambda = {lambda}")]
    Inadmissible { a: f64, b: f64, lambda: f64 },
    #[error("mu = {0} outside [0.9, 1.1]")]
    MuOutOfRange(f64),
    #[error("field length {got} does not match expected {expected}")]
    FieldLength { expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyParams {
    pub lambda: f64,
    pub mu: f64,
}

impl EnergyParams {
    pub fn new(lambda: f64, mu: f64) -> Result<Self, FunctionalError> {
        if !(0.9 - 1e-12..=1.1 + 1e-12).contains(&mu) {
            return Err(FunctionalError::MuOutOfRange(mu));
        }
        Ok(EnergyParams { lambda, mu })
    }

    /// The geometric problem: λ = 4πχ, μ = 1.
    pub fn geometric(chi: f64) -> Self {
        EnergyParams { lambda: 4.0 * PI * chi, mu: 1.0 }
    }
}

fn margin(a: f64, b: f64, lambda: f64) -> f64 {
    1e-10 * (a.abs() + if lambda != 0.0 { b * b / (2.0 * lambda.abs()) } else { b.abs() }).max(f64::MIN_POSITIVE)
}

/// Membership of (A, B) in the admissible domain for parameter λ.
pub fn admissible(a: f64, b: f64, lambda: f64) -> bool {
    if !(a.is_finite() && b.is_finite()) {
        return false;
    }
    let eps = margin(a, b, lambda);
    if lambda > 0.0 {
        a > -b.max(0.0).powi(2) / (2.0 * lambda) + eps
    } else if lambda < 0.0 {
        a < b.min(0.0).powi(2) / (2.0 * lambda.abs()) - eps
    } else {
        a * b < 0.0 && a.abs() > f64::MIN_POSITIVE && b.abs() > f64::MIN_POSITIVE
    }
}

pub fn admissible_chi(a: f64, b: f64, chi: f64) -> bool {
    admissible(a, b, 4.0 * PI * chi)
}

/// Positive root C of C²A + CB = λ/2, using the displayed closed forms and
/// their cancellation-free rewrites.
pub fn normalization_c(a: f64, b: f64, lambda: f64) -> Result<f64, FunctionalError> {
    if !admissible(a, b, lambda) {
        return Err(FunctionalError::Inadmissible { a, b, lambda });
    }
    let c = if lambda > 0.0 {
        let s = (b * b + 2.0 * lambda * a).sqrt();
        if b >= 0.0 {
            lambda / (s + b)
        } else {
            (s - b) / (2.0 * a)
        }
    } else if lambda < 0.0 {
        let s = (b * b + 2.0 * lambda * a).sqrt();
        if b <= 0.0 {
            -lambda / (s - b)
        } else {
            -(s + b) / (2.0 * a)
        }
    } else {
        -b / a
    };
    Ok(c)
}

pub fn normalization_c_chi(a: f64, b: f64, chi: f64) -> Result<f64, FunctionalError> {
    normalization_c(a, b, 4.0 * PI * chi)
}

/// F(A, B) in the λ-convention.
pub fn f_lambda(a: f64, b: f64, lambda: f64) -> Result<f64, FunctionalError> {
    let c = normalization_c(a, b, lambda)?;
    Ok(f_from_c(b, c, lambda))
}

fn f_from_c(b: f64, c: f64, lambda: f64) -> f64 {
    let log_part = if lambda != 0.0 { 2.0 * lambda * (lambda.abs() / c).ln() } else { 0.0 };
    log_part + 2.0 * b * c
}

/// F_χ(A, B) of the geometric problem (λ = 4πχ).
pub fn f_chi(a: f64, b: f64, chi: f64) -> Result<f64, FunctionalError> {
    f_lambda(a, b, 4.0 * PI * chi)
}

/// F and its first and second partial derivatives.
#[derive(Clone, Copy, Debug)]
pub struct FDerivatives {
    pub c: f64,
    pub f: f64,
    pub fa: f64,
    pub fb: f64,
    pub faa: f64,
    pub fab: f64,
    pub fbb: f64,
}

pub fn f_derivatives(a: f64, b: f64, lambda: f64) -> Result<FDerivatives, FunctionalError> {
    let c = normalization_c(a, b, lambda)?;
    // D = 2CA + B = ∂/∂C of the root equation
    let d = if lambda > 0.0 {
        (b * b + 2.0 * lambda * a).sqrt()
    } else if lambda < 0.0 {
        -(b * b + 2.0 * lambda * a).sqrt()
    } else {
        -b
    };
    Ok(FDerivatives {
        c,
        f: f_from_c(b, c, lambda),
        fa: 2.0 * c * c,
        fb: 4.0 * c,
        faa: -4.0 * c * c * c / d,
        fab: -4.0 * c * c / d,
        fbb: -4.0 * c / d,
    })
}

/// Mean-zero field with cached masses.
#[derive(Clone, Debug)]
pub struct EnergyState {
    pub u: Vec<f64>,
    pub a: f64,
    pub b: f64,
}

/// Evaluation context binding mesh operators and curvature data.
pub struct Functional<'a> {
    pub ops: &'a Operators,
    pub data: &'a CurvatureData,
    /// Lumped interior weights m_v·K̃_v.
    kw: Vec<f64>,
    /// Lumped boundary weights l_v·h̃_v per vertex.
    hw: Vec<f64>,
}

impl<'a> Functional<'a> {
    pub fn new(ops: &'a Operators, boundary_vertices: &[usize], data: &'a CurvatureData) -> Result<Self, FunctionalError> {
        let n = ops.dim();
        if data.k_tilde.len() != n {
            return Err(FunctionalError::FieldLength { expected: n, got: data.k_tilde.len() });
        }
        if data.h_tilde.len() != boundary_vertices.len() {
            return Err(FunctionalError::FieldLength { expected: boundary_vertices.len(), got: data.h_tilde.len() });
        }
        let kw = ops.lumped.iter().zip(&data.k_tilde).map(|(m, k)| m * k).collect();
        let mut hw = vec![0.0; n];
        for (&v, h) in boundary_vertices.iter().zip(&data.h_tilde) {
            hw[v] = ops.boundary_lumped[v] * h;
        }
        Ok(Functional { ops, data, kw, hw })
    }

    pub fn dim(&self) -> usize {
        self.kw.len()
    }

    fn check(&self, u: &[f64]) -> Result<(), FunctionalError> {
        if u.len() != self.dim() {
            return Err(FunctionalError::FieldLength { expected: self.dim(), got: u.len() });
        }
        Ok(())
    }

    /// A = ∫K̃e^u and B = ∮h̃e^{u/2}, evaluated after shifting by max(u).
    pub fn masses(&self, u: &[f64]) -> (f64, f64) {
        let s = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s = if s.is_finite() { s } else { 0.0 };
        let a: f64 = self.kw.iter().zip(u).map(|(w, x)| w * (x - s).exp()).sum();
        let b: f64 = self.hw.iter().zip(u).map(|(w, x)| w * (0.5 * (x - s)).exp()).sum();
        (a * s.exp(), b * (0.5 * s).exp())
    }

    pub fn state(&self, mut u: Vec<f64>) -> Result<EnergyState, FunctionalError> {
        self.check(&u)?;
        self.ops.project_mean_zero(&mut u);
        let (a, b) = self.masses(&u);
        Ok(EnergyState { u, a, b })
    }

    /// Per-vertex mass weights a_v = m_vK̃_ve^{u_v} and b_v = ½l_vh̃_ve^{u_v/2},
    /// the gradients of A and B.
    pub fn mass_weights(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let a = self.kw.iter().zip(u).map(|(w, x)| w * x.exp()).collect();
        let b = self.hw.iter().zip(u).map(|(w, x)| 0.5 * w * (0.5 * x).exp()).collect();
        (a, b)
    }

    pub fn dirichlet(&self, u: &[f64]) -> f64 {
        self.ops.stiffness.form(u, u)
    }

    /// (μ/2)∫|∇u|² − F(A, B).
    pub fn energy_j(&self, u: &[f64], p: &EnergyParams) -> Result<f64, FunctionalError> {
        self.check(u)?;
        let (a, b) = self.masses(u);
        Ok(0.5 * p.mu * self.dirichlet(u) - f_lambda(a, b, p.lambda)?)
    }

    /// Load vector of the weak form φ ↦ μ∫∇u·∇φ − 2C²∫K̃e^uφ − 2C∮h̃e^{u/2}φ + (λ/|Σ|)∫φ.
    pub fn derivative_j(&self, u: &[f64], p: &EnergyParams) -> Result<Vec<f64>, FunctionalError> {
        self.check(u)?;
        let (a, b) = self.masses(u);
        let c = normalization_c(a, b, p.lambda)?;
        let (wa, wb) = self.mass_weights(u);
        let su = self.ops.stiffness.apply(u);
        let sc = p.lambda / self.ops.area;
        Ok((0..self.dim())
            .map(|v| p.mu * su[v] - 2.0 * c * c * wa[v] - 4.0 * c * wb[v] + sc * self.ops.lumped[v])
            .collect())
    }

    /// L² Riesz representative of the derivative, projected to mean zero.
    pub fn gradient_j(&self, u: &[f64], p: &EnergyParams) -> Result<Vec<f64>, FunctionalError> {
        let mut g = self.derivative_j(u, p)?;
        self.ops.mass_solve(&mut g);
        self.ops.project_mean_zero(&mut g);
        Ok(g)
    }

    pub fn hessian_j(&self, u: &[f64], p: &EnergyParams) -> Result<HessianOperator<'a>, FunctionalError> {
        self.check(u)?;
        let (a, b) = self.masses(u);
        let d = f_derivatives(a, b, p.lambda)?;
        let (wa, wb) = self.mass_weights(u);
        // ∂²A = diag(a), ∂²B = diag(b/2)
        let diag = wa.iter().zip(&wb).map(|(x, y)| -d.fa * x - 0.5 * d.fb * y).collect();
        Ok(HessianOperator {
            s: &self.ops.stiffness,
            scale: p.mu,
            diag,
            low: Some((wa, wb, [[-d.faa, -d.fab], [-d.fab, -d.fbb]])),
        })
    }

    pub fn hessian_form_j(&self, u: &[f64], p: &EnergyParams, phi: &[f64], psi: &[f64]) -> Result<f64, FunctionalError> {
        Ok(self.hessian_j(u, p)?.form(phi, psi))
    }

    /// ½∫|∇u|² + (λ/|Σ|)∫u − 2∫K̃e^u − 4∮h̃e^{u/2}.
    pub fn energy_i(&self, u: &[f64], p: &EnergyParams) -> Result<f64, FunctionalError> {
        self.check(u)?;
        let (a, b) = self.masses(u);
        Ok(0.5 * self.dirichlet(u) + p.lambda * self.ops.mean(u) - 2.0 * a - 4.0 * b)
    }

    pub fn derivative_i(&self, u: &[f64], p: &EnergyParams) -> Result<Vec<f64>, FunctionalError> {
        self.check(u)?;
        let (wa, wb) = self.mass_weights(u);
        let su = self.ops.stiffness.apply(u);
        let sc = p.lambda / self.ops.area;
        Ok((0..self.dim()).map(|v| su[v] + sc * self.ops.lumped[v] - 2.0 * wa[v] - 4.0 * wb[v]).collect())
    }

    /// L² Riesz representative of the derivative of I on the full space.
    pub fn gradient_i(&self, u: &[f64], p: &EnergyParams) -> Result<Vec<f64>, FunctionalError> {
        let mut g = self.derivative_i(u, p)?;
        self.ops.mass_solve(&mut g);
        Ok(g)
    }

    pub fn hessian_i(&self, u: &[f64]) -> Result<HessianOperator<'a>, FunctionalError> {
        self.check(u)?;
        let (wa, wb) = self.mass_weights(u);
        let diag = wa.iter().zip(&wb).map(|(x, y)| -2.0 * x - 2.0 * y).collect();
        Ok(HessianOperator { s: &self.ops.stiffness, scale: 1.0, diag, low: None })
    }

    pub fn hessian_form_i(&self, u: &[f64], phi: &[f64], psi: &[f64]) -> Result<f64, FunctionalError> {
        Ok(self.hessian_i(u)?.form(phi, psi))
    }

    /// J(u + t·dir) − J(u) computed without cancellation: the Dirichlet part
    /// is expanded exactly, mass increments use expm1, and the change of C
    /// comes from the difference of the two root equations.
    pub fn energy_change_j(
        &self,
        state: &EnergyState,
        su: &[f64],
        dir: &[f64],
        sdir: &[f64],
        t: f64,
        p: &EnergyParams,
    ) -> Result<(f64, EnergyState), FunctionalError> {
        let dd = p.mu * (t * dot(dir, su) + 0.5 * t * t * dot(dir, sdir));
        let mut da = 0.0;
        let mut db = 0.0;
        let mut u = state.u.clone();
        for v in 0..u.len() {
            let x = state.u[v];
            let step = t * dir[v];
            if self.kw[v] != 0.0 {
                da += self.kw[v] * x.exp() * step.exp_m1();
            }
            if self.hw[v] != 0.0 {
                db += self.hw[v] * (0.5 * x).exp() * (0.5 * step).exp_m1();
            }
            u[v] += step;
        }
        let (a1, b1) = (state.a + da, state.b + db);
        let c0 = normalization_c(state.a, state.b, p.lambda)?;
        let c1 = normalization_c(a1, b1, p.lambda)?;
        let dc = -(da * c1 * c1 + db * c1) / (state.a * (c0 + c1) + state.b);
        let df = if p.lambda != 0.0 { -2.0 * p.lambda * (dc / c0).ln_1p() } else { 0.0 } + 2.0 * (db * c1 + state.b * dc);
        Ok((dd - df, EnergyState { u, a: a1, b: b1 }))
    }
}

/// Second variation μS + diag + low-rank correction, as an operator.
pub struct HessianOperator<'a> {
    s: &'a SparseMatrix,
    scale: f64,
    diag: Vec<f64>,
    low: Option<(Vec<f64>, Vec<f64>, [[f64; 2]; 2])>,
}

impl HessianOperator<'_> {
    pub fn form(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut hy = vec![0.0; y.len()];
        self.apply_to(y, &mut hy);
        dot(x, &hy)
    }
}

impl SymmetricOperator for HessianOperator<'_> {
    fn dim(&self) -> usize {
        self.diag.len()
    }
    fn apply_to(&self, x: &[f64], y: &mut [f64]) {
        self.s.mul_vec(x, y);
        for i in 0..y.len() {
            y[i] = self.scale * y[i] + self.diag[i] * x[i];
        }
        if let Some((wa, wb, m)) = &self.low {
            let (al, be) = (dot(wa, x), dot(wb, x));
            let (ca, cb) = (m[0][0] * al + m[0][1] * be, m[1][0] * al + m[1][1] * be);
            for i in 0..y.len() {
                y[i] += wa[i] * ca + wb[i] * cb;
            }
        }
    }
}
