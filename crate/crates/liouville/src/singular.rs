//! Singularity bookkeeping: singular Euler characteristic, Trudinger
//! constant, the quantization set, Green's-function desingularization of the
//! curvatures and the boundary ratio h/√|K|.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::Serialize;
use thiserror::Error;

use crate::elliptic::{EllipticError, Operators};
use crate::geometry::{euler_characteristic, TriangleMesh};

#[derive(Debug, Error)]
pub enum SingularError {
    #[error("singular order must satisfy {0} > -1, got {1}")]
    InvalidOrder(&'static str, f64),
    #[error("vertex {0} is not an interior vertex")]
    NotInterior(usize),
    #[error("vertex {0} is not a boundary vertex")]
    NotBoundary(usize),
    #[error("vertex {0} carries more than one singularity")]
    Duplicate(usize),
    #[error("no Green's function computed for vertex {0}")]
    MissingGreen(usize),
    #[error("K vanishes at boundary vertex {0}")]
    VanishingK(usize),
    #[error("cap must be positive, got {0}")]
    NonpositiveCap(f64),
    #[error("field length {got} does not match expected {expected}")]
    FieldLength { expected: usize, got: usize },
    #[error(transparent)]
    Elliptic(#[from] EllipticError),
}

/// Conical points (interior vertex, α) and corners (boundary vertex, β).
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SingularStructure {
    pub interior: Vec<(usize, f64)>,
    pub corners: Vec<(usize, f64)>,
}

impl SingularStructure {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self, mesh: &TriangleMesh) -> Result<(), SingularError> {
        let mut seen = std::collections::HashSet::new();
        for &(v, a) in &self.interior {
            if !(a > -1.0) {
                return Err(SingularError::InvalidOrder("alpha", a));
            }
            if v >= mesh.n_vertices() || mesh.is_boundary(v) {
                return Err(SingularError::NotInterior(v));
            }
            if !seen.insert(v) {
                return Err(SingularError::Duplicate(v));
            }
        }
        for &(v, b) in &self.corners {
            if !(b > -1.0) {
                return Err(SingularError::InvalidOrder("beta", b));
            }
            if v >= mesh.n_vertices() || !mesh.is_boundary(v) {
                return Err(SingularError::NotBoundary(v));
            }
            if !seen.insert(v) {
                return Err(SingularError::Duplicate(v));
            }
        }
        Ok(())
    }

    /// Weight of each singular vertex in the desingularizing exponent: α at
    /// conical points, β/2 at corners.
    fn weights(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.interior.iter().copied().chain(self.corners.iter().map(|&(v, b)| (v, 0.5 * b)))
    }

    /// Order of the singularity at a vertex (interior α or corner β), zero elsewhere.
    pub fn order_at(&self, v: usize) -> f64 {
        self.interior.iter().chain(&self.corners).find(|s| s.0 == v).map_or(0.0, |s| s.1)
    }
}

/// χ(Σ) + Σα + ½Σβ.
pub fn singular_chi(mesh: &TriangleMesh, sing: &SingularStructure) -> f64 {
    euler_characteristic(mesh) as f64
        + sing.interior.iter().map(|s| s.1).sum::<f64>()
        + 0.5 * sing.corners.iter().map(|s| s.1).sum::<f64>()
}

/// min{1, 2 + 2 min α, 1 + min β}.
pub fn trudinger_tau(sing: &SingularStructure) -> f64 {
    let mut tau: f64 = 1.0;
    if let Some(a) = sing.interior.iter().map(|s| s.1).reduce(f64::min) {
        tau = tau.min(2.0 + 2.0 * a);
    }
    if let Some(b) = sing.corners.iter().map(|s| s.1).reduce(f64::min) {
        tau = tau.min(1.0 + b);
    }
    tau
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceClass {
    Subcritical,
    Critical,
    Supercritical,
    Nonpositive,
}

impl std::fmt::Display for SurfaceClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SurfaceClass::Subcritical => "subcritical",
            SurfaceClass::Critical => "critical",
            SurfaceClass::Supercritical => "supercritical",
            SurfaceClass::Nonpositive => "nonpositive",
        })
    }
}

/// Classification with a 1e-10 margin on the comparisons.
pub fn classify_surface(chi: f64, tau: f64) -> SurfaceClass {
    const MARGIN: f64 = 1e-10;
    if chi <= MARGIN {
        SurfaceClass::Nonpositive
    } else if chi < tau - MARGIN {
        SurfaceClass::Subcritical
    } else if chi <= tau + MARGIN {
        SurfaceClass::Critical
    } else {
        SurfaceClass::Supercritical
    }
}

/// All values 4πk + 8πΣ_I(1+α_i) + 4πΣ_J(1+β_j) up to `cap`, sorted and deduplicated.
pub fn gamma_set(sing: &SingularStructure, cap: f64) -> Result<Vec<f64>, SingularError> {
    if !(cap > 0.0) {
        return Err(SingularError::NonpositiveCap(cap));
    }
    let tol = 1e-12 * (1.0 + cap);
    let atoms = sing
        .interior
        .iter()
        .map(|s| 8.0 * PI * (1.0 + s.1))
        .chain(sing.corners.iter().map(|s| 4.0 * PI * (1.0 + s.1)));
    let mut sums = vec![0.0];
    for a in atoms {
        let extra: Vec<f64> = sums.iter().map(|s| s + a).filter(|&s| s <= cap + tol).collect();
        sums.extend(extra);
    }
    let mut out = Vec::new();
    for s in sums {
        let mut g = s;
        while g <= cap + tol {
            out.push(g);
            g += 4.0 * PI;
        }
    }
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() <= tol);
    Ok(out)
}

/// min over Γ of |λ − γ|.
pub fn gamma_distance(lambda: f64, sing: &SingularStructure) -> f64 {
    let cap = lambda.max(0.0) + 4.0 * PI;
    gamma_set(sing, cap)
        .expect("cap is positive")
        .iter()
        .map(|g| (lambda - g).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Zero-mean Neumann Green's functions keyed by pole vertex.
#[derive(Clone, Debug, Default)]
pub struct GreenFunctions {
    fields: BTreeMap<usize, Vec<f64>>,
}

impl GreenFunctions {
    pub fn compute(ops: &Operators, sing: &SingularStructure) -> Result<Self, SingularError> {
        let mut fields = BTreeMap::new();
        for (v, _) in sing.weights() {
            fields.insert(v, ops.green_function(v)?);
        }
        Ok(GreenFunctions { fields })
    }

    pub fn insert(&mut self, v: usize, g: Vec<f64>) {
        self.fields.insert(v, g);
    }

    pub fn get(&self, v: usize) -> Option<&Vec<f64>> {
        self.fields.get(&v)
    }
}

/// Raw and desingularized curvature data. `h` fields are boundary fields
/// ordered as `TriangleMesh::boundary_vertices`.
#[derive(Clone, Debug)]
pub struct CurvatureData {
    pub k_raw: Vec<f64>,
    pub h_raw: Vec<f64>,
    pub k_tilde: Vec<f64>,
    pub h_tilde: Vec<f64>,
    pub sing: SingularStructure,
}

impl CurvatureData {
    /// Data without singularities: the tilde fields equal the raw ones.
    pub fn regular(k: Vec<f64>, h: Vec<f64>) -> Self {
        CurvatureData { k_tilde: k.clone(), h_tilde: h.clone(), k_raw: k, h_raw: h, sing: SingularStructure::none() }
    }
}

/// K̃ = K·exp(−4πE), h̃ = h·exp(−2πE) with E = Σα_iG_{p_i} + ½Σβ_jG_{q_j}.
pub fn desingularize(
    k: &[f64],
    h: &[f64],
    sing: &SingularStructure,
    mesh: &TriangleMesh,
    greens: &GreenFunctions,
) -> Result<CurvatureData, SingularError> {
    if k.len() != mesh.n_vertices() {
        return Err(SingularError::FieldLength { expected: mesh.n_vertices(), got: k.len() });
    }
    if h.len() != mesh.n_boundary() {
        return Err(SingularError::FieldLength { expected: mesh.n_boundary(), got: h.len() });
    }
    sing.validate(mesh)?;
    let mut e = vec![0.0; mesh.n_vertices()];
    for (v, w) in sing.weights() {
        let g = greens.get(v).ok_or(SingularError::MissingGreen(v))?;
        for (ei, gi) in e.iter_mut().zip(g) {
            *ei += w * gi;
        }
    }
    let k_tilde = k.iter().zip(&e).map(|(k, e)| k * (-4.0 * PI * e).exp()).collect();
    let h_tilde = h
        .iter()
        .zip(mesh.boundary_vertices())
        .map(|(h, &v)| h * (-2.0 * PI * e[v]).exp())
        .collect();
    Ok(CurvatureData { k_raw: k.to_vec(), h_raw: h.to_vec(), k_tilde, h_tilde, sing: sing.clone() })
}

/// 𝔇 = h/√|K| at each boundary vertex.
pub fn ratio_d(k: &[f64], h: &[f64], mesh: &TriangleMesh) -> Result<Vec<f64>, SingularError> {
    if k.len() != mesh.n_vertices() || h.len() != mesh.n_boundary() {
        return Err(SingularError::FieldLength { expected: mesh.n_boundary(), got: h.len() });
    }
    mesh.boundary_vertices()
        .iter()
        .zip(h)
        .map(|(&v, &h)| if k[v] == 0.0 { Err(SingularError::VanishingK(v)) } else { Ok(h / k[v].abs().sqrt()) })
        .collect()
}
