//! Command-line front end: INI scenario files, subcommand execution, and
//! report and CSV output.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::asymptotics::{
    bubble, bubble_slopes, concentration_points, morse_index, test_function_energy, tm_probe, AsymptoticsError, Barycenter,
    HessianKind, MorseOptions, SlopeReport, TmKind, TmReport,
};
use crate::diagnostics::{
    classify_hypotheses, fmt_float, gauss_bonnet_residual, write_sweep_csv, DiagnosticsError, HypothesisReport, Measured,
    Scenario, ScenarioReport, SolveSummary,
};
use crate::functional::EnergyParams;
use crate::geometry::{build_annulus_mesh, build_disc_mesh, build_holed_disc_mesh, dist, read_mesh2d, BoundaryCurve, Point, TriangleMesh};
use crate::limit::{
    halfplane_residual, instability_witness, plane_residual, z0_residual, HalfPlaneSolution, HeavyTail, LimitError, PlaneSolution,
    WitnessKind, WitnessResult,
};
use crate::singular::{gamma_distance, gamma_set, SingularStructure};
use crate::solver::{lambda_sweep, minimize, SolveStatus, SolverError, SolverOptions, SymmetryGroup};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("config: {0}")]
    Semantic(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Syntax { .. } | CliError::Semantic(_) => 2,
            CliError::Solver(_) | CliError::Io(_) => 3,
            CliError::Precondition(_) => 4,
        }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::InadmissibleStart(_) | SolverError::Symmetry(_) => CliError::Precondition(e.to_string()),
            SolverError::Options(_) => CliError::Semantic(e.to_string()),
            SolverError::Functional(_) => CliError::Solver(e.to_string()),
        }
    }
}

impl From<AsymptoticsError> for CliError {
    fn from(e: AsymptoticsError) -> Self {
        match e {
            AsymptoticsError::MeshTooCoarse { .. }
            | AsymptoticsError::BallNotInterior { .. }
            | AsymptoticsError::NonPositiveMass(_)
            | AsymptoticsError::Functional(_)
            | AsymptoticsError::EmptyBarycenter
            | AsymptoticsError::InvalidWeights => CliError::Precondition(e.to_string()),
            AsymptoticsError::InvalidArgument(_) => CliError::Semantic(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        CliError::Semantic(e.to_string())
    }
}

impl From<LimitError> for CliError {
    fn from(e: LimitError) -> Self {
        CliError::Semantic(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Disc { radius: f64 },
    Annulus { inner: f64, outer: f64 },
    HoledDisc { radius: f64, holes: Vec<(Point, f64)> },
    Mesh { file: PathBuf },
}

/// Curvature profile evaluated at vertex positions.
#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    Constant(f64),
    /// Polynomial in r².
    RadialPoly(Vec<f64>),
    /// a·cos(mθ) + b.
    Angular { a: f64, m: i64, b: f64 },
    /// One value per line; per vertex for K, per boundary vertex for h.
    Table(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaSpec {
    Geometric,
    Value(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub shape: Shape,
    pub refinement: usize,
    pub grade_points: Vec<Point>,
    pub grade_levels: usize,
    pub grade_ratio: f64,
    pub interior: Vec<(Point, f64)>,
    pub corners: Vec<(Point, f64)>,
    pub k: Family,
    pub h: Family,
    pub tol_grad: f64,
    pub tol_pde: f64,
    pub max_iter: usize,
    pub step0: f64,
    pub armijo_c: f64,
    pub lambda_max: f64,
    pub divergence_floor: Option<f64>,
    pub symmetry: usize,
    pub lambda: LambdaSpec,
    pub lambda_grid: Vec<f64>,
    pub mu: Vec<f64>,
    pub warm_start: bool,
    pub concentration_k: usize,
    pub concentration_radius: f64,
    pub concentration_eps: f64,
    pub atoms: Vec<(f64, Point)>,
    pub scales: Vec<f64>,
    pub probe_kind: TmKind,
    pub limit_k0: f64,
    pub limit_alpha: Vec<f64>,
    pub limit_b: f64,
    pub limit_h0: Vec<f64>,
    pub output: PathBuf,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            shape: Shape::Disc { radius: 1.0 },
            refinement: 4,
            grade_points: vec![],
            grade_levels: 0,
            grade_ratio: 3.0,
            interior: vec![],
            corners: vec![],
            k: Family::Constant(1.0),
            h: Family::Constant(0.0),
            tol_grad: 1e-8,
            tol_pde: 1e-6,
            max_iter: 5000,
            step0: 1.0,
            armijo_c: 1e-4,
            lambda_max: 1e6,
            divergence_floor: None,
            symmetry: 0,
            lambda: LambdaSpec::Geometric,
            lambda_grid: vec![],
            mu: vec![1.0],
            warm_start: true,
            concentration_k: 1,
            concentration_radius: 0.2,
            concentration_eps: 0.05,
            atoms: vec![],
            scales: vec![1e2, 3e2, 1e3, 3e3, 1e4],
            probe_kind: TmKind::Boundary,
            limit_k0: 1.0,
            limit_alpha: vec![0.0, -0.5, 0.25],
            limit_b: 1.0,
            limit_h0: vec![-1.0, 0.0, 1.0],
            output: PathBuf::from("out"),
        }
    }
}

const SECTIONS: [(&str, &[&str]); 5] = [
    ("surface", &["kind", "radius", "inner", "outer", "holes", "file", "refinement", "grade_points", "grade_levels", "grade_ratio"]),
    ("singularities", &["interior", "corners"]),
    ("curvature", &["k", "h"]),
    ("solver", &["tol_grad", "tol_pde", "max_iter", "step0", "armijo_c", "lambda_max", "divergence_floor", "symmetry"]),
    (
        "run",
        &[
            "lambda",
            "lambda_grid",
            "mu",
            "warm_start",
            "concentration_k",
            "concentration_radius",
            "concentration_eps",
            "atoms",
            "scales",
            "probe_kind",
            "limit_k0",
            "limit_alpha",
            "limit_b",
            "limit_h0",
            "output",
        ],
    ),
];

struct Raw {
    values: BTreeMap<(String, String), (usize, String)>,
}

impl Raw {
    fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        let mut section: Option<String> = None;
        let mut seen_sections = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| CliError::Syntax { line: ln, msg: "unterminated section header".into() })?
                    .trim();
                if !SECTIONS.iter().any(|s| s.0 == name) {
                    return Err(CliError::Syntax { line: ln, msg: format!("unknown section [{name}]") });
                }
                if !seen_sections.insert(name.to_string()) {
                    return Err(CliError::Syntax { line: ln, msg: format!("duplicate section [{name}]") });
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Syntax { line: ln, msg: format!("expected `key = value`, got `{line}`") })?;
            let key = key.trim();
            let sec = section.as_ref().ok_or_else(|| CliError::Syntax { line: ln, msg: "key outside any section".into() })?;
            let known = SECTIONS.iter().find(|s| s.0 == sec).map(|s| s.1).unwrap_or(&[]);
            if !known.contains(&key) {
                return Err(CliError::Syntax { line: ln, msg: format!("unknown key `{key}` in [{sec}]") });
            }
            if values.insert((sec.clone(), key.to_string()), (ln, value.trim().to_string())).is_some() {
                return Err(CliError::Syntax { line: ln, msg: format!("duplicate key `{key}` in [{sec}]") });
            }
        }
        Ok(Raw { values })
    }

    fn get<T>(&self, sec: &str, key: &str, default: T, parse: impl Fn(&str) -> Result<T, String>) -> Result<T, CliError> {
        match self.values.get(&(sec.to_string(), key.to_string())) {
            None => Ok(default),
            Some((line, v)) => parse(v).map_err(|msg| CliError::Syntax { line: *line, msg: format!("{key}: {msg}") }),
        }
    }

    fn has(&self, sec: &str, key: &str) -> bool {
        self.values.contains_key(&(sec.to_string(), key.to_string()))
    }
}

fn num<T: FromStr>(s: &str) -> Result<T, String> {
    s.trim().parse::<T>().map_err(|_| format!("cannot parse `{}`", s.trim()))
}

fn list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(num).collect()
}

/// `a,b,c; a,b,c` with each group of length `n`.
fn groups(s: &str, n: usize) -> Result<Vec<Vec<f64>>, String> {
    s.split(';')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|g| {
            let v = list(g)?;
            if v.len() != n {
                return Err(format!("expected {n} numbers in `{g}`"));
            }
            Ok(v)
        })
        .collect()
}

fn weighted_points(s: &str) -> Result<Vec<(Point, f64)>, String> {
    Ok(groups(s, 3)?.into_iter().map(|g| ([g[0], g[1]], g[2])).collect())
}

fn points(s: &str) -> Result<Vec<Point>, String> {
    Ok(groups(s, 2)?.into_iter().map(|g| [g[0], g[1]]).collect())
}

fn boolean(s: &str) -> Result<bool, String> {
    match s.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        o => Err(format!("expected true or false, got `{o}`")),
    }
}

fn family(s: &str) -> Result<Family, String> {
    let (kind, args) = s.split_once(':').ok_or_else(|| format!("expected `kind:args`, got `{s}`"))?;
    match kind.trim() {
        "constant" => Ok(Family::Constant(num(args)?)),
        "radial_poly" => {
            let c = list(args)?;
            if c.is_empty() {
                return Err("radial_poly needs coefficients".into());
            }
            Ok(Family::RadialPoly(c))
        }
        "angular" => {
            let v: Vec<&str> = args.split(',').map(str::trim).collect();
            if v.len() != 3 {
                return Err("angular needs a,m,b".into());
            }
            Ok(Family::Angular { a: num(v[0])?, m: num(v[1])?, b: num(v[2])? })
        }
        "table" => Ok(Family::Table(PathBuf::from(args.trim()))),
        o => Err(format!("unknown curvature family `{o}`")),
    }
}

fn tm_kind(s: &str) -> Result<TmKind, String> {
    match s.trim() {
        "interior" => Ok(TmKind::Interior),
        "boundary" => Ok(TmKind::Boundary),
        "combined" => Ok(TmKind::Combined),
        o => match o.strip_prefix("local:") {
            Some(a) => Ok(TmKind::Local { alpha: num(a)? }),
            None => Err(format!("unknown probe kind `{o}`")),
        },
    }
}

fn resolve(base: &Path, p: &Path) -> Result<PathBuf, CliError> {
    let full = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    full.canonicalize().map_err(|e| CliError::Semantic(format!("file {}: {e}", full.display())))
}

/// Reads and validates a scenario file. Relative paths are resolved against
/// the file's directory.
pub fn parse_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Semantic(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config_str(&text, &base)
}

pub fn parse_config_str(text: &str, base: &Path) -> Result<ScenarioConfig, CliError> {
    let raw = Raw::parse(text)?;
    let d = ScenarioConfig::default();
    let kind = raw.get("surface", "kind", "disc".to_string(), |s| Ok(s.to_string()))?;
    let shape = match kind.as_str() {
        "disc" => Shape::Disc { radius: raw.get("surface", "radius", 1.0, num)? },
        "annulus" => Shape::Annulus { inner: raw.get("surface", "inner", 0.5, num)?, outer: raw.get("surface", "outer", 1.0, num)? },
        "holed_disc" => Shape::HoledDisc { radius: raw.get("surface", "radius", 1.0, num)?, holes: raw.get("surface", "holes", vec![], weighted_points)? },
        "mesh" => {
            if !raw.has("surface", "file") {
                return Err(CliError::Semantic("surface kind = mesh needs `file`".into()));
            }
            let f = raw.get("surface", "file", PathBuf::new(), |s| Ok(PathBuf::from(s)))?;
            Shape::Mesh { file: resolve(base, &f)? }
        }
        o => return Err(CliError::Semantic(format!("unknown surface kind `{o}`"))),
    };
    let table = |f: Family| -> Result<Family, CliError> {
        match f {
            Family::Table(p) => Ok(Family::Table(resolve(base, &p)?)),
            o => Ok(o),
        }
    };
    let cfg = ScenarioConfig {
        shape,
        refinement: raw.get("surface", "refinement", d.refinement, num)?,
        grade_points: raw.get("surface", "grade_points", d.grade_points, points)?,
        grade_levels: raw.get("surface", "grade_levels", d.grade_levels, num)?,
        grade_ratio: raw.get("surface", "grade_ratio", d.grade_ratio, num)?,
        interior: raw.get("singularities", "interior", d.interior, weighted_points)?,
        corners: raw.get("singularities", "corners", d.corners, weighted_points)?,
        k: table(raw.get("curvature", "k", d.k, family)?)?,
        h: table(raw.get("curvature", "h", d.h, family)?)?,
        tol_grad: raw.get("solver", "tol_grad", d.tol_grad, num)?,
        tol_pde: raw.get("solver", "tol_pde", d.tol_pde, num)?,
        max_iter: raw.get("solver", "max_iter", d.max_iter, num)?,
        step0: raw.get("solver", "step0", d.step0, num)?,
        armijo_c: raw.get("solver", "armijo_c", d.armijo_c, num)?,
        lambda_max: raw.get("solver", "lambda_max", d.lambda_max, num)?,
        divergence_floor: raw.get("solver", "divergence_floor", d.divergence_floor, |s| {
            if s.trim().is_empty() || s.trim() == "none" {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        })?,
        symmetry: raw.get("solver", "symmetry", d.symmetry, num)?,
        lambda: raw.get("run", "lambda", d.lambda, |s| {
            if s.trim() == "geometric" {
                Ok(LambdaSpec::Geometric)
            } else {
                num(s).map(LambdaSpec::Value)
            }
        })?,
        lambda_grid: raw.get("run", "lambda_grid", d.lambda_grid, list)?,
        mu: raw.get("run", "mu", d.mu, list)?,
        warm_start: raw.get("run", "warm_start", d.warm_start, boolean)?,
        concentration_k: raw.get("run", "concentration_k", d.concentration_k, num)?,
        concentration_radius: raw.get("run", "concentration_radius", d.concentration_radius, num)?,
        concentration_eps: raw.get("run", "concentration_eps", d.concentration_eps, num)?,
        atoms: raw.get("run", "atoms", d.atoms, |s| Ok(weighted_points(s)?.into_iter().map(|(p, t)| (t, p)).collect()))?,
        scales: raw.get("run", "scales", d.scales, list)?,
        probe_kind: raw.get("run", "probe_kind", d.probe_kind, tm_kind)?,
        limit_k0: raw.get("run", "limit_k0", d.limit_k0, num)?,
        limit_alpha: raw.get("run", "limit_alpha", d.limit_alpha, list)?,
        limit_b: raw.get("run", "limit_b", d.limit_b, num)?,
        limit_h0: raw.get("run", "limit_h0", d.limit_h0, list)?,
        output: raw.get("run", "output", d.output, |s| Ok(PathBuf::from(s.trim())))?,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl ScenarioConfig {
    /// Constraints that do not need the mesh.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Semantic(m));
        match &self.shape {
            Shape::Disc { radius } | Shape::HoledDisc { radius, .. } if !(*radius > 0.0) => return bad(format!("radius {radius} must be positive")),
            Shape::Annulus { inner, outer } if !(*inner > 0.0 && inner < outer) => {
                return bad(format!("annulus needs 0 < inner < outer, got {inner}, {outer}"))
            }
            _ => {}
        }
        if self.refinement > 10 {
            return bad(format!("refinement {} exceeds 10", self.refinement));
        }
        if !(self.grade_ratio > 0.0) {
            return bad("grade_ratio must be positive".into());
        }
        for (p, a) in &self.interior {
            if !(*a > -1.0) {
                return bad(format!("interior singularity at ({}, {}) has alpha = {a}; need alpha > -1", p[0], p[1]));
            }
        }
        for (p, b) in &self.corners {
            if !(*b > -1.0) {
                return bad(format!("corner at ({}, {}) has beta = {b}; need beta > -1", p[0], p[1]));
            }
        }
        if self.mu.is_empty() || self.mu.iter().any(|m| !(0.9..=1.1).contains(m)) {
            return bad(format!("mu values {:?} must lie in [0.9, 1.1]", self.mu));
        }
        if self.lambda_grid.windows(2).any(|w| w[0] > w[1]) {
            return bad("lambda_grid must be sorted".into());
        }
        if self.symmetry == 1 {
            return bad("symmetry order must be 0 (none) or at least 2".into());
        }
        if self.scales.iter().any(|s| !(*s >= 1.0)) {
            return bad("bubble scales must be at least 1".into());
        }
        if !self.atoms.is_empty() {
            let s: f64 = self.atoms.iter().map(|a| a.0).sum();
            if self.atoms.iter().any(|a| !(a.0 >= 0.0)) || (s - 1.0).abs() > 1e-12 {
                return bad("atom weights must be nonnegative and sum to 1".into());
            }
        }
        if !(self.concentration_radius > 0.0) || self.concentration_k == 0 {
            return bad("concentration needs k >= 1 and radius > 0".into());
        }
        if !(self.limit_k0 > 0.0 && self.limit_b > 0.0) || self.limit_alpha.iter().any(|a| !(*a > -1.0)) {
            return bad("limit problems need K0 > 0, b > 0 and alpha > -1".into());
        }
        if let TmKind::Local { alpha } = self.probe_kind {
            if !(alpha > -1.0) {
                return bad(format!("probe alpha = {alpha}; need alpha > -1"));
            }
        }
        Ok(())
    }

    /// Canonical text with every key present.
    pub fn emit(&self) -> String {
        let fl = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let wp = |v: &[(Point, f64)]| v.iter().map(|(p, a)| format!("{},{},{}", p[0], p[1], a)).collect::<Vec<_>>().join("; ");
        let pts = |v: &[Point]| v.iter().map(|p| format!("{},{}", p[0], p[1])).collect::<Vec<_>>().join("; ");
        let fam = |f: &Family| match f {
            Family::Constant(c) => format!("constant:{c}"),
            Family::RadialPoly(c) => format!("radial_poly:{}", fl(c)),
            Family::Angular { a, m, b } => format!("angular:{a},{m},{b}"),
            Family::Table(p) => format!("table:{}", p.display()),
        };
        let mut s = String::new();
        s.push_str("[surface]\n");
        match &self.shape {
            Shape::Disc { radius } => writeln!(s, "kind = disc\nradius = {radius}"),
            Shape::Annulus { inner, outer } => writeln!(s, "kind = annulus\ninner = {inner}\nouter = {outer}"),
            Shape::HoledDisc { radius, holes } => writeln!(s, "kind = holed_disc\nradius = {radius}\nholes = {}", wp(holes)),
            Shape::Mesh { file } => writeln!(s, "kind = mesh\nfile = {}", file.display()),
        }
        .unwrap();
        let _ = writeln!(s, "refinement = {}", self.refinement);
        let _ = writeln!(s, "grade_points = {}", pts(&self.grade_points));
        let _ = writeln!(s, "grade_levels = {}", self.grade_levels);
        let _ = writeln!(s, "grade_ratio = {}", self.grade_ratio);
        let _ = writeln!(s, "\n[singularities]\ninterior = {}\ncorners = {}", wp(&self.interior), wp(&self.corners));
        let _ = writeln!(s, "\n[curvature]\nk = {}\nh = {}", fam(&self.k), fam(&self.h));
        let _ = writeln!(
            s,
            "\n[solver]\ntol_grad = {}\ntol_pde = {}\nmax_iter = {}\nstep0 = {}\narmijo_c = {}\nlambda_max = {}\ndivergence_floor = {}\nsymmetry = {}",
            self.tol_grad,
            self.tol_pde,
            self.max_iter,
            self.step0,
            self.armijo_c,
            self.lambda_max,
            self.divergence_floor.map(|x| x.to_string()).unwrap_or_else(|| "none".into()),
            self.symmetry
        );
        let lambda = match self.lambda {
            LambdaSpec::Geometric => "geometric".to_string(),
            LambdaSpec::Value(v) => v.to_string(),
        };
        let probe = match self.probe_kind {
            TmKind::Interior => "interior".to_string(),
            TmKind::Boundary => "boundary".to_string(),
            TmKind::Combined => "combined".to_string(),
            TmKind::Local { alpha } => format!("local:{alpha}"),
        };
        let atoms: Vec<(Point, f64)> = self.atoms.iter().map(|&(t, p)| (p, t)).collect();
        let _ = writeln!(s, "\n[run]\nlambda = {lambda}\nlambda_grid = {}\nmu = {}\nwarm_start = {}", fl(&self.lambda_grid), fl(&self.mu), self.warm_start);
        let _ = writeln!(
            s,
            "concentration_k = {}\nconcentration_radius = {}\nconcentration_eps = {}",
            self.concentration_k, self.concentration_radius, self.concentration_eps
        );
        let _ = writeln!(s, "atoms = {}\nscales = {}\nprobe_kind = {probe}", wp(&atoms), fl(&self.scales));
        let _ = writeln!(
            s,
            "limit_k0 = {}\nlimit_alpha = {}\nlimit_b = {}\nlimit_h0 = {}\noutput = {}",
            self.limit_k0,
            fl(&self.limit_alpha),
            self.limit_b,
            fl(&self.limit_h0),
            self.output.display()
        );
        s
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.emit().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol_grad: self.tol_grad,
            tol_pde: self.tol_pde,
            max_iter: self.max_iter,
            step0: self.step0,
            armijo_c: self.armijo_c,
            divergence_floor: self.divergence_floor,
            lambda_max: self.lambda_max,
            initial: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Info,
    Solve,
    Sweep,
    Bubbles,
    Limit,
    Probe,
}

impl FromStr for Command {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        Ok(match s {
            "info" => Command::Info,
            "solve" => Command::Solve,
            "sweep" => Command::Sweep,
            "bubbles" => Command::Bubbles,
            "limit" => Command::Limit,
            "probe" => Command::Probe,
            o => return Err(CliError::Semantic(format!("unknown subcommand `{o}`"))),
        })
    }
}

fn eval_family(f: &Family, pts: &[Point], expected: usize, what: &str) -> Result<Vec<f64>, CliError> {
    match f {
        Family::Constant(c) => Ok(vec![*c; pts.len()]),
        Family::RadialPoly(c) => Ok(pts
            .iter()
            .map(|x| {
                let r2 = x[0] * x[0] + x[1] * x[1];
                c.iter().rev().fold(0.0, |acc, ci| acc * r2 + ci)
            })
            .collect()),
        Family::Angular { a, m, b } => Ok(pts.iter().map(|x| a * (*m as f64 * x[1].atan2(x[0])).cos() + b).collect()),
        Family::Table(p) => {
            let text = fs::read_to_string(p)?;
            let v: Vec<f64> = text
                .lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty())
                .map(|l| num::<f64>(l).map_err(CliError::Semantic))
                .collect::<Result<_, _>>()?;
            if v.len() != expected {
                return Err(CliError::Semantic(format!("{what} table {} has {} values, mesh needs {expected}", p.display(), v.len())));
            }
            Ok(v)
        }
    }
}

fn on_circle(mesh: &TriangleMesh, p: Point) -> bool {
    mesh.curves().iter().any(|c| match c {
        BoundaryCurve::Circle { center, radius } => (dist(p, *center) - radius).abs() <= 1e-9 * radius.max(1.0),
        BoundaryCurve::Polyline => false,
    })
}

/// Mesh, singular structure and data of a config. Singular points and
/// bubble atoms are moved onto vertices first.
pub fn build_scenario(cfg: &ScenarioConfig) -> Result<(Scenario, Vec<(f64, Point)>), CliError> {
    let mesh_err = |e: crate::geometry::MeshError| CliError::Semantic(e.to_string());
    let mut mesh = match &cfg.shape {
        Shape::Disc { radius } => build_disc_mesh(*radius, cfg.refinement).map_err(mesh_err)?,
        Shape::Annulus { inner, outer } => build_annulus_mesh(*inner, *outer, cfg.refinement).map_err(mesh_err)?,
        Shape::HoledDisc { radius, holes } => build_holed_disc_mesh(*radius, holes, cfg.refinement).map_err(mesh_err)?,
        Shape::Mesh { file } => read_mesh2d(std::io::BufReader::new(fs::File::open(file)?)).map_err(mesh_err)?,
    };
    if cfg.grade_levels > 0 && !cfg.grade_points.is_empty() {
        mesh = mesh.graded(&cfg.grade_points, cfg.grade_levels, cfg.grade_ratio).map_err(mesh_err)?;
    }
    let mut movable: Vec<Point> = cfg.interior.iter().map(|s| s.0).collect();
    let circle_corners: Vec<Point> = cfg.corners.iter().map(|s| s.0).filter(|&p| on_circle(&mesh, p)).collect();
    movable.extend(&circle_corners);
    movable.extend(cfg.atoms.iter().map(|a| a.1));
    for &p in cfg.interior.iter().map(|s| &s.0) {
        let v = mesh.nearest_vertex(p);
        if on_circle(&mesh, p) || dist(mesh.vertices()[v], p) > mesh.local_edge_length(v) {
            return Err(CliError::Semantic(format!("interior singularity ({}, {}) is not inside the surface", p[0], p[1])));
        }
    }
    mesh.place_points(&movable).map_err(mesh_err)?;

    let mut interior = Vec::new();
    for &(p, a) in &cfg.interior {
        let v = mesh.nearest_vertex(p);
        if mesh.is_boundary(v) {
            return Err(CliError::Semantic(format!("interior singularity ({}, {}) lies on the boundary", p[0], p[1])));
        }
        interior.push((v, a));
    }
    let mut corners = Vec::new();
    for &(p, b) in &cfg.corners {
        let v = mesh
            .boundary_vertices()
            .iter()
            .copied()
            .min_by(|&x, &y| dist(mesh.vertices()[x], p).total_cmp(&dist(mesh.vertices()[y], p)))
            .ok_or_else(|| CliError::Semantic("mesh has no boundary".into()))?;
        if dist(mesh.vertices()[v], p) > 1e-9 * (1.0 + dist(p, [0.0, 0.0])) {
            return Err(CliError::Semantic(format!("corner ({}, {}) is not on the boundary", p[0], p[1])));
        }
        corners.push((v, b));
    }
    let sing = SingularStructure { interior, corners };
    let bpts: Vec<Point> = mesh.boundary_vertices().iter().map(|&v| mesh.vertices()[v]).collect();
    let k = eval_family(&cfg.k, mesh.vertices(), mesh.n_vertices(), "K")?;
    let h = eval_family(&cfg.h, &bpts, mesh.n_boundary(), "h")?;
    let atoms = cfg.atoms.iter().map(|&(t, p)| (t, mesh.vertices()[mesh.nearest_vertex(p)])).collect();
    Ok((Scenario::new(mesh, sing, k, h)?, atoms))
}

/// Exit code and the lines meant for stdout.
#[derive(Debug)]
pub struct Outcome {
    pub code: i32,
    pub stdout: Vec<String>,
}

pub struct RunOptions {
    pub out: PathBuf,
    pub seed: u64,
}

pub fn header(cfg: &ScenarioConfig) -> String {
    format!("# liouville {VERSION} config_hash={}", cfg.hash())
}

fn write_with_header(path: &Path, header: &str, body: &str) -> Result<(), CliError> {
    fs::write(path, format!("{header}\n{body}"))?;
    Ok(())
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn lambda_of(cfg: &ScenarioConfig, sc: &Scenario) -> f64 {
    match cfg.lambda {
        LambdaSpec::Geometric => sc.geometric_lambda(),
        LambdaSpec::Value(v) => v,
    }
}

fn group_of(cfg: &ScenarioConfig, sc: &Scenario) -> Result<Option<SymmetryGroup>, CliError> {
    if cfg.symmetry == 0 {
        return Ok(None);
    }
    Ok(Some(SymmetryGroup::rotation(&sc.mesh, cfg.symmetry, [0.0, 0.0])?))
}

fn barycenter(atoms: &[(f64, Point)], sc: &Scenario) -> Result<Barycenter, CliError> {
    if atoms.is_empty() {
        let v = *sc.mesh.boundary_vertices().first().ok_or_else(|| CliError::Precondition("mesh has no boundary".into()))?;
        return Ok(Barycenter::single(sc.mesh.vertices()[v]));
    }
    Ok(Barycenter::new(atoms.to_vec())?)
}

#[derive(Serialize)]
struct InfoReport {
    chi: f64,
    tau: f64,
    classification: String,
    vertices: usize,
    boundary_vertices: usize,
    gamma: Vec<f64>,
    hypotheses: HypothesisReport,
}

#[derive(Serialize)]
struct SolveReportFile<'a> {
    subcommand: &'static str,
    seed: u64,
    mu: f64,
    report: &'a ScenarioReport,
}

#[derive(Serialize)]
struct BubbleRow {
    scale: f64,
    half_dirichlet: f64,
    log_interior_mass: f64,
    log_boundary_mass: f64,
    energy: f64,
}

#[derive(Serialize)]
struct BubbleReport {
    lambda: f64,
    slopes: SlopeReport,
    energy_slope: f64,
    rows: Vec<BubbleRow>,
}

#[derive(Serialize)]
struct PlaneCheck {
    alpha: f64,
    residual: f64,
    total_mass: f64,
    quantized_mass: f64,
    log_cap: WitnessResult,
    annulus: WitnessResult,
}

#[derive(Serialize)]
struct HalfPlaneCheck {
    h0: f64,
    interior_residual: f64,
    neumann_residual: f64,
    z0_residual: Option<(f64, f64)>,
    log_cap: WitnessResult,
    boundary_hz: Option<WitnessResult>,
}

#[derive(Serialize)]
struct LimitReport {
    k0: f64,
    b: f64,
    plane: Vec<PlaneCheck>,
    half_plane: Vec<HalfPlaneCheck>,
    heavy_tail_annulus: WitnessResult,
}

fn polar_grid(upper: bool) -> Vec<Point> {
    let mut g = Vec::new();
    for i in 0..12 {
        let r = 0.1 * 100f64.powf(i as f64 / 11.0);
        for j in 0..8 {
            let th = if upper { PI * (j as f64 + 0.5) / 8.0 } else { 2.0 * PI * j as f64 / 8.0 };
            g.push([r * th.cos(), r * th.sin()]);
        }
    }
    g
}

/// Runs one subcommand, writing its artifacts under `opts.out`.
pub fn run(cmd: Command, cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Outcome, CliError> {
    fs::create_dir_all(&opts.out)?;
    let head = header(cfg);
    write_with_header(&opts.out.join("config.ini"), &head, &cfg.emit())?;
    let mut stdout = Vec::new();
    if cmd == Command::Limit {
        let report = run_limit(cfg)?;
        for p in &report.plane {
            stdout.push(format!("plane alpha={:?} residual={:e} mass={} log_cap_certified={}", p.alpha, p.residual, p.total_mass, p.log_cap.certified));
        }
        for h in &report.half_plane {
            stdout.push(format!("half_plane h0={:?} residual={:e} log_cap_certified={}", h.h0, h.interior_residual.max(h.neumann_residual), h.log_cap.certified));
        }
        write_with_header(&opts.out.join("limit.json"), &head, &json(&report))?;
        return Ok(Outcome { code: 0, stdout });
    }

    let start = Instant::now();
    let (sc, atoms) = build_scenario(cfg)?;
    let problem = sc.problem();
    let group = group_of(cfg, &sc)?;
    let lambda = lambda_of(cfg, &sc);
    let morse_opts = MorseOptions { eigen: crate::elliptic::EigenOptions { seed: opts.seed, ..Default::default() }, ..Default::default() };
    let mut code = 0;
    match cmd {
        Command::Info => {
            let gamma = gamma_set(&sc.data.sing, 40.0 * PI).map_err(|e| CliError::Semantic(e.to_string()))?;
            let hyp = classify_hypotheses(&sc, group.as_ref(), gamma_distance(lambda, &sc.data.sing) < 1e-10)?;
            stdout.push(format!("classification={} chi={:?} tau={:?}", sc.class(), sc.chi, sc.tau));
            stdout.push(format!("gamma={}", gamma.iter().map(|g| format!("{:.6}", g)).collect::<Vec<_>>().join(",")));
            stdout.push(format!("hypotheses={}", hyp.applicable.iter().map(|h| serde_json::to_string(h).unwrap().trim_matches('"').to_string()).collect::<Vec<_>>().join(",")));
            let rep = InfoReport {
                chi: sc.chi,
                tau: sc.tau,
                classification: sc.class().to_string(),
                vertices: sc.mesh.n_vertices(),
                boundary_vertices: sc.mesh.n_boundary(),
                gamma,
                hypotheses: hyp,
            };
            write_with_header(&opts.out.join("info.json"), &head, &json(&rep))?;
        }
        Command::Solve => {
            let mu = cfg.mu[0];
            let params = EnergyParams::new(lambda, mu).map_err(|e| CliError::Semantic(e.to_string()))?;
            let r = minimize(&problem, &params, group.as_ref(), &cfg.solver_options())?;
            let converged = r.status == SolveStatus::Converged;
            let not_conv = || Measured::Failed(format!("solve ended with status {}", r.status));
            let morse = |kind| {
                if converged {
                    Measured::from_result(morse_index(&r.state.u, &problem, &params, kind, group.as_ref(), &morse_opts).map(|m| m.index as f64))
                } else {
                    not_conv()
                }
            };
            let geometric = (lambda - sc.geometric_lambda()).abs() <= 1e-12 * (1.0 + lambda.abs());
            let gb = if geometric {
                Measured::from_result(gauss_bonnet_residual(&r.state.u, &problem, sc.chi))
            } else {
                Measured::Failed("lambda differs from 4*pi*chi".into())
            };
            let conc = concentration_points(&r.state.u, &problem, cfg.concentration_k, cfg.concentration_radius, cfg.concentration_eps).ok();
            let gd = gamma_distance(lambda, &sc.data.sing);
            let report = ScenarioReport {
                chi: sc.chi,
                tau: sc.tau,
                classification: sc.class(),
                lambda,
                gamma_distance: Measured::from_result::<String>(Ok(gd)),
                gauss_bonnet_residual: gb,
                solve: Some(SolveSummary::from(&r)),
                concentration: conc,
                morse_mean_field: morse(HessianKind::MeanField),
                morse_direct: morse(HessianKind::Direct),
                hypotheses: classify_hypotheses(&sc, group.as_ref(), gd < 1e-10).ok(),
                timing_seconds: start.elapsed().as_secs_f64(),
            };
            stdout.push(format!("status={} energy={} iterations={}", r.status, fmt_float(r.energy), r.iterations));
            let file = SolveReportFile { subcommand: "solve", seed: opts.seed, mu, report: &report };
            write_with_header(&opts.out.join("report.json"), &head, &json(&file))?;
            let mut csv = String::from("x,y,u\n");
            for (x, u) in sc.mesh.vertices().iter().zip(&r.state.u) {
                let _ = writeln!(csv, "{},{},{}", fmt_float(x[0]), fmt_float(x[1]), fmt_float(*u));
            }
            write_with_header(&opts.out.join("solution.csv"), &head, &csv)?;
            if !converged {
                code = 3;
            }
        }
        Command::Sweep => {
            if cfg.lambda_grid.is_empty() {
                return Err(CliError::Semantic("sweep needs a non-empty lambda_grid".into()));
            }
            let pts = lambda_sweep(&problem, &cfg.lambda_grid, cfg.mu[0], cfg.warm_start, group.as_ref(), &cfg.solver_options())?;
            let mut buf = Vec::new();
            write_sweep_csv(&mut buf, &head, &pts)?;
            fs::write(opts.out.join("sweep.csv"), buf)?;
            let ok = pts.iter().filter(|p| p.report.status == SolveStatus::Converged).count();
            stdout.push(format!("points={} converged={}", pts.len(), ok));
        }
        Command::Bubbles => {
            let sigma = barycenter(&atoms, &sc)?;
            let slopes = bubble_slopes(&sigma, &cfg.scales, &problem)?;
            let f = problem.functional().map_err(|e| CliError::Precondition(e.to_string()))?;
            let mut rows = Vec::new();
            for &s in cfg.scales.iter().filter(|s| !slopes.excluded.contains(s)) {
                let u = bubble(&sigma, s, &problem)?;
                let (a, b) = f.masses(&u);
                rows.push(BubbleRow {
                    scale: s,
                    half_dirichlet: 0.5 * f.dirichlet(&u),
                    log_interior_mass: a.ln(),
                    log_boundary_mass: b.abs().ln(),
                    energy: test_function_energy(&sigma, s, lambda, &problem)?,
                });
            }
            let x: Vec<f64> = rows.iter().map(|r| r.scale.ln()).collect();
            let e: Vec<f64> = rows.iter().map(|r| r.energy).collect();
            let rep = BubbleReport { lambda, energy_slope: crate::fit_slope(&x, &e), slopes, rows };
            stdout.push(format!(
                "dirichlet_slope={} interior_mass_slope={} boundary_mass_slope={} energy_slope={}",
                rep.slopes.dirichlet_slope, rep.slopes.interior_mass_slope, rep.slopes.boundary_mass_slope, rep.energy_slope
            ));
            let mut csv = String::from("scale,half_dirichlet,log_interior_mass,log_boundary_mass,energy\n");
            for r in &rep.rows {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{}",
                    fmt_float(r.scale),
                    fmt_float(r.half_dirichlet),
                    fmt_float(r.log_interior_mass),
                    fmt_float(r.log_boundary_mass),
                    fmt_float(r.energy)
                );
            }
            write_with_header(&opts.out.join("bubbles.csv"), &head, &csv)?;
            write_with_header(&opts.out.join("bubbles.json"), &head, &json(&rep))?;
        }
        Command::Probe => {
            let sigma = barycenter(&atoms, &sc)?;
            let rep: TmReport = tm_probe(&sigma, &cfg.scales, cfg.probe_kind, sc.chi, &problem)?;
            stdout.push(format!("sup_ratio={} within_bound={}", rep.sup_ratio, rep.within_bound));
            write_with_header(&opts.out.join("probe.json"), &head, &json(&rep))?;
        }
        Command::Limit => unreachable!("handled above"),
    }
    Ok(Outcome { code, stdout })
}

fn run_limit(cfg: &ScenarioConfig) -> Result<LimitReport, CliError> {
    let plane = cfg
        .limit_alpha
        .iter()
        .map(|&alpha| {
            let sol = PlaneSolution::new(cfg.limit_k0, alpha, cfg.limit_b)?;
            Ok(PlaneCheck {
                alpha,
                residual: plane_residual(&sol, &polar_grid(false))?,
                total_mass: sol.total_mass(1e4),
                quantized_mass: 8.0 * PI * (1.0 + alpha) / cfg.limit_k0,
                log_cap: instability_witness(&sol, WitnessKind::LogCap)?,
                annulus: instability_witness(&sol, WitnessKind::Annulus { m0: 10.0 })?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let half_plane = cfg
        .limit_h0
        .iter()
        .map(|&h0| {
            let sol = HalfPlaneSolution::new(cfg.limit_k0, h0)?;
            let (ir, nr) = halfplane_residual(&sol, &polar_grid(true));
            let neg = h0 < 0.0;
            Ok(HalfPlaneCheck {
                h0,
                interior_residual: ir,
                neumann_residual: nr,
                z0_residual: if neg { Some(z0_residual(cfg.limit_k0, h0, &polar_grid(true))?) } else { None },
                log_cap: instability_witness(&sol, WitnessKind::LogCap)?,
                boundary_hz: if neg { Some(instability_witness(&sol, WitnessKind::BoundaryHz)?) } else { None },
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(LimitReport {
        k0: cfg.limit_k0,
        b: cfg.limit_b,
        plane,
        half_plane,
        heavy_tail_annulus: instability_witness(&HeavyTail { k0: cfg.limit_k0 }, WitnessKind::Annulus { m0: 10.0 })?,
    })
}
