//! Scenario assembly and scenario-level checks: the Gauss-Bonnet residual of
//! the reconstructed metric, which existence hypotheses hold, and the
//! structured records written by the command line tool.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::asymptotics::ConcentrationReport;
use crate::elliptic::{EllipticError, Operators};
use crate::functional::{normalization_c, CurvatureData, FunctionalError};
use crate::geometry::{boundary_integrate, MeshError, TriangleMesh};
use crate::singular::{
    classify_surface, desingularize, ratio_d, singular_chi, trudinger_tau, GreenFunctions, SingularError, SingularStructure,
    SurfaceClass,
};
use crate::solver::{Problem, SolveReport, SweepPoint, SymmetryGroup};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Elliptic(#[from] EllipticError),
    #[error(transparent)]
    Singular(#[from] SingularError),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Mesh, assembled operators and desingularized data of one run.
pub struct Scenario {
    pub mesh: TriangleMesh,
    pub ops: Operators,
    pub data: CurvatureData,
    pub chi: f64,
    pub tau: f64,
}

impl Scenario {
    pub fn new(mesh: TriangleMesh, sing: SingularStructure, k: Vec<f64>, h: Vec<f64>) -> Result<Self, DiagnosticsError> {
        sing.validate(&mesh)?;
        let ops = Operators::new(&mesh)?;
        let greens = GreenFunctions::compute(&ops, &sing)?;
        let data = desingularize(&k, &h, &sing, &mesh, &greens)?;
        let chi = singular_chi(&mesh, &sing);
        let tau = trudinger_tau(&sing);
        Ok(Scenario { mesh, ops, data, chi, tau })
    }

    pub fn problem(&self) -> Problem<'_> {
        Problem { mesh: &self.mesh, ops: &self.ops, data: &self.data }
    }

    pub fn class(&self) -> SurfaceClass {
        classify_surface(self.chi, self.tau)
    }

    /// λ = 4πχ of the geometric problem.
    pub fn geometric_lambda(&self) -> f64 {
        4.0 * PI * self.chi
    }
}

/// |∫K̃e^w + ∮h̃e^{w/2} − 2πχ| / (1 + 2π|χ|) for the metric w = u + 2log C.
pub fn gauss_bonnet_residual(u: &[f64], problem: &Problem, chi: f64) -> Result<f64, DiagnosticsError> {
    let f = problem.functional()?;
    let (a, b) = f.masses(u);
    let c = normalization_c(a, b, 4.0 * PI * chi)?;
    let w: Vec<f64> = u.iter().map(|x| x + 2.0 * c.ln()).collect();
    let (ag, bg) = f.masses(&w);
    Ok((ag + bg - 2.0 * PI * chi).abs() / (1.0 + 2.0 * PI * chi.abs()))
}

/// Existence statements whose checkable hypotheses may hold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    /// χ > 0, K ≥ 0, K ≢ 0, subcritical.
    PositiveSubcritical,
    /// χ > 0 critical with an admissible symmetry group.
    PositiveCriticalSymmetric,
    /// χ > 0 supercritical with an admissible symmetry group.
    PositiveSupercriticalSymmetric,
    /// χ = 0, K > 0 somewhere, h ≤ 0 and h ≢ 0.
    ZeroPositiveK,
    /// χ = 0, K ≥ 0, K ≢ 0, ∮h < 0.
    ZeroNegativeFlux,
    /// χ = 0, K ≤ 0, K ≢ 0, h ≥ 0, h ≢ 0, 𝔇 < 1.
    ZeroSmallRatio,
    /// χ < 0, K ≤ 0 and nowhere zero, 𝔇 < 1.
    NegativeSmallRatio,
    /// Supercritical, K > 0, several boundary components, one of them corner-free.
    SupercriticalMinMax,
}

#[derive(Clone, Debug, Serialize)]
pub struct HypothesisReport {
    pub class: SurfaceClass,
    pub applicable: Vec<Hypothesis>,
    /// Whether the admissible set of mean-zero fields is non-empty.
    pub admissible_nonempty: bool,
    /// Conditions that held only within the comparison margin.
    pub marginal: Vec<String>,
}

const MARGIN: f64 = 1e-10;

/// Evaluates the checkable hypotheses of the existence statements on the
/// raw data. `group` is a symmetry group the data is invariant under, if any.
pub fn classify_hypotheses(
    scenario: &Scenario,
    group: Option<&SymmetryGroup>,
    gamma_hit: bool,
) -> Result<HypothesisReport, DiagnosticsError> {
    let mesh = &scenario.mesh;
    let data = &scenario.data;
    let (chi, tau) = (scenario.chi, scenario.tau);
    let class = classify_surface(chi, tau);
    let k = &data.k_raw;
    let h = &data.h_raw;
    let mut marginal = Vec::new();
    let kmax = k.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let kmin = k.iter().copied().fold(f64::INFINITY, f64::min);
    let hmax = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let hmin = h.iter().copied().fold(f64::INFINITY, f64::min);
    let k_nonzero = k.iter().any(|x| x.abs() > MARGIN);
    let h_nonzero = h.iter().any(|x| x.abs() > MARGIN);
    let k_nonneg = kmin >= -MARGIN;
    let k_nonpos = kmax <= MARGIN;
    for (v, name) in [(kmin, "min K"), (kmax, "max K"), (hmin, "min h"), (hmax, "max h")] {
        if v != 0.0 && v.abs() <= MARGIN {
            marginal.push(format!("{name} = {v:e}"));
        }
    }
    let flux = boundary_integrate(h, mesh, None)?;
    let d_max = if k.iter().all(|&x| x != 0.0) && !h.is_empty() {
        ratio_d(k, h, mesh)?.into_iter().fold(f64::NEG_INFINITY, f64::max)
    } else {
        f64::INFINITY
    };
    if (d_max - 1.0).abs() <= MARGIN {
        marginal.push(format!("max D = {d_max}"));
    }

    let mut applicable = Vec::new();
    if chi > MARGIN && k_nonneg && k_nonzero {
        match class {
            SurfaceClass::Subcritical => applicable.push(Hypothesis::PositiveSubcritical),
            SurfaceClass::Critical | SurfaceClass::Supercritical => {
                if let Some(g) = group.filter(|g| data_invariant(g, mesh, k, h)) {
                    let fixed_alphas: Vec<f64> = data
                        .sing
                        .interior
                        .iter()
                        .filter(|s| g.fixed_set.binary_search(&s.0).is_ok())
                        .map(|s| s.1)
                        .collect();
                    let amin = fixed_alphas.iter().copied().fold(f64::INFINITY, f64::min);
                    let korb = g.order as f64;
                    if class == SurfaceClass::Critical {
                        if fixed_alphas.is_empty() || tau < 2.0 + 2.0 * amin - MARGIN {
                            applicable.push(Hypothesis::PositiveCriticalSymmetric);
                        }
                    } else {
                        let ok = if g.fixed_set.is_empty() {
                            chi < korb * tau - MARGIN
                        } else {
                            chi < 2f64.min(2.0 + 2.0 * amin).min(korb * tau) - MARGIN
                        };
                        if ok {
                            applicable.push(Hypothesis::PositiveSupercriticalSymmetric);
                        }
                    }
                }
            }
            SurfaceClass::Nonpositive => {}
        }
    }
    if chi.abs() <= MARGIN {
        if kmax > MARGIN && hmax <= MARGIN && h_nonzero {
            applicable.push(Hypothesis::ZeroPositiveK);
        }
        if k_nonneg && k_nonzero && flux < -MARGIN {
            applicable.push(Hypothesis::ZeroNegativeFlux);
        }
        if k_nonpos && k_nonzero && hmin >= -MARGIN && h_nonzero && d_max < 1.0 - MARGIN {
            applicable.push(Hypothesis::ZeroSmallRatio);
        }
    }
    if chi < -MARGIN && k_nonpos && k.iter().all(|&x| x != 0.0) && d_max < 1.0 - MARGIN {
        applicable.push(Hypothesis::NegativeSmallRatio);
    }
    if class == SurfaceClass::Supercritical
        && tau >= 1.0 - MARGIN
        && kmin > MARGIN
        && mesh.boundary_loops().len() >= 2
        && !gamma_hit
        && mesh.boundary_loops().iter().any(|lp| lp.iter().all(|&v| data.sing.corners.iter().all(|c| c.0 != v)))
    {
        applicable.push(Hypothesis::SupercriticalMinMax);
    }

    let kt = &data.k_tilde;
    let ht = &data.h_tilde;
    let admissible_nonempty = if chi > MARGIN {
        kt.iter().any(|&x| x > 0.0) || ht.iter().any(|&x| x > 0.0)
    } else if chi < -MARGIN {
        kt.iter().any(|&x| x < 0.0) || ht.iter().any(|&x| x < 0.0)
    } else {
        let kp = kt.iter().any(|&x| x > 0.0);
        let kn = kt.iter().any(|&x| x < 0.0);
        let hp = ht.iter().any(|&x| x > 0.0);
        let hn = ht.iter().any(|&x| x < 0.0);
        (kp && hn) || (kn && hp)
    };
    Ok(HypothesisReport { class, applicable, admissible_nonempty, marginal })
}

fn data_invariant(g: &SymmetryGroup, mesh: &TriangleMesh, k: &[f64], h: &[f64]) -> bool {
    let tol = |a: f64, b: f64| (a - b).abs() <= 1e-10 * (1.0 + a.abs().max(b.abs()));
    (0..k.len()).all(|v| tol(k[v], k[g.action[v]]))
        && mesh.boundary_vertices().iter().enumerate().all(|(i, &v)| {
            mesh.boundary_ordinal(g.action[v]).is_some_and(|j| tol(h[i], h[j]))
        })
}

/// A numeric entry that is either a finite value or a recorded failure.
#[derive(Clone, Debug, PartialEq)]
pub enum Measured {
    Value(f64),
    Failed(String),
}

impl Measured {
    pub fn from_result<E: std::fmt::Display>(r: Result<f64, E>) -> Self {
        match r {
            Ok(v) if v.is_finite() => Measured::Value(v),
            Ok(v) => Measured::Failed(format!("non-finite value {v}")),
            Err(e) => Measured::Failed(e.to_string()),
        }
    }
}

impl Serialize for Measured {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Measured::Value(v) => s.serialize_f64(*v),
            Measured::Failed(msg) => s.serialize_str(&format!("failed: {msg}")),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveSummary {
    pub status: String,
    pub energy: Measured,
    pub gradient_norm: Measured,
    pub pde_residual_interior: Measured,
    pub pde_residual_boundary: Measured,
    pub c_value: Measured,
    pub iterations: usize,
    pub max_u: Measured,
}

impl From<&SolveReport> for SolveSummary {
    fn from(r: &SolveReport) -> Self {
        let m = |v: f64| Measured::from_result::<String>(Ok(v));
        SolveSummary {
            status: r.status.to_string(),
            energy: m(r.energy),
            gradient_norm: m(r.gradient_norm),
            pde_residual_interior: m(r.pde_residual_interior),
            pde_residual_boundary: m(r.pde_residual_boundary),
            c_value: m(r.c_value),
            iterations: r.iterations,
            max_u: m(r.max_u),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioReport {
    pub chi: f64,
    pub tau: f64,
    pub classification: SurfaceClass,
    pub lambda: f64,
    pub gamma_distance: Measured,
    pub gauss_bonnet_residual: Measured,
    pub solve: Option<SolveSummary>,
    pub concentration: Option<ConcentrationReport>,
    pub morse_mean_field: Measured,
    pub morse_direct: Measured,
    pub hypotheses: Option<HypothesisReport>,
    pub timing_seconds: f64,
}

/// `{:.16e}`: seventeen significant digits, round-trip exact.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes one row per sweep point after the header comment.
pub fn write_sweep_csv<W: Write>(mut w: W, header: &str, points: &[SweepPoint]) -> std::io::Result<()> {
    writeln!(w, "{header}")?;
    writeln!(w, "lambda,status,energy,gradient_norm,pde_residual_interior,pde_residual_boundary,c_value,max_u,iterations,gamma_distance,captured_fraction")?;
    for p in points {
        let r = &p.report;
        let (gd, cf) = match &p.annotation {
            Some(a) => (fmt_float(a.gamma_distance), a.concentration.as_ref().map(|c| fmt_float(c.captured_fraction)).unwrap_or_default()),
            None => (String::new(), String::new()),
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            fmt_float(p.lambda),
            r.status,
            fmt_float(r.energy),
            fmt_float(r.gradient_norm),
            fmt_float(r.pde_residual_interior),
            fmt_float(r.pde_residual_boundary),
            fmt_float(r.c_value),
            fmt_float(r.max_u),
            r.iterations,
            gd,
            cf
        )?;
    }
    Ok(())
}
