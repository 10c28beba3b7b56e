//! Entire solutions of the plane and half-plane limit problems, their
//! second variations Q, and test functions certifying Q < 0.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::Point;

#[derive(Debug, Error, PartialEq)]
pub enum LimitError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("sample point ({0}, {1}) too close to the origin for a singular weight")]
    NearOrigin(f64, f64),
    #[error("test function support {support} exceeds the quadrature window {window}")]
    SupportExceedsWindow { support: f64, window: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Plane,
    HalfPlane,
}

/// A field v together with the weights of its second variation: the
/// interior potential 2K₀|x|^{2α}e^v and, on the half-plane, the boundary
/// weight h₀e^{v/2} at (s, 0).
pub trait LimitField: Sync {
    fn domain(&self) -> Domain;
    fn weight(&self, x: Point) -> f64;
    fn boundary_weight(&self, _s: f64) -> f64 {
        0.0
    }
    /// Radii where the weight is not smooth or changes scale.
    fn breakpoints(&self) -> Vec<f64> {
        vec![]
    }
    /// Linearized witness field for h₀ < 0 half-plane solutions.
    fn z0(&self) -> Option<Z0> {
        None
    }
}

/// Radial solution log(4b(1+α)²/K₀) − 2log(1 + b|x|^{2(1+α)}) of −Δv = 2K₀|x|^{2α}e^v.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PlaneSolution {
    pub k0: f64,
    pub alpha: f64,
    pub b: f64,
}

impl PlaneSolution {
    pub fn new(k0: f64, alpha: f64, b: f64) -> Result<Self, LimitError> {
        if !(k0 > 0.0 && alpha > -1.0 && b > 0.0) {
            return Err(LimitError::InvalidParameter(format!("need K0 > 0, alpha > -1, b > 0; got {k0}, {alpha}, {b}")));
        }
        Ok(PlaneSolution { k0, alpha, b })
    }

    pub fn value(&self, x: Point) -> f64 {
        let r2 = x[0] * x[0] + x[1] * x[1];
        (4.0 * self.b * (1.0 + self.alpha).powi(2) / self.k0).ln() - 2.0 * (self.b * r2.powf(1.0 + self.alpha)).ln_1p()
    }

    /// ∫_{B_R} 2K₀|x|^{2α}e^v by composite Gauss-Legendre in log r.
    pub fn total_mass(&self, radius: f64) -> f64 {
        let hi = radius.ln();
        let lo = hi.min(0.0) - 60.0 / (1.0 + self.alpha);
        let g = |t: f64| {
            let r = t.exp();
            2.0 * PI * self.weight([r, 0.0]) * r * r
        };
        composite_gauss(lo, hi, &[], 0.25, &g)
    }
}

impl LimitField for PlaneSolution {
    fn domain(&self) -> Domain {
        Domain::Plane
    }
    fn weight(&self, x: Point) -> f64 {
        let r2 = x[0] * x[0] + x[1] * x[1];
        2.0 * self.k0 * r2.powf(self.alpha) * self.value(x).exp()
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![self.b.powf(-0.5 / (1.0 + self.alpha))]
    }
}

/// V₀(s,t) = log 4 − 2log(1 + K₀(s² + (t + h₀/K₀)²)) on t ≥ 0.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct HalfPlaneSolution {
    pub k0: f64,
    pub h0: f64,
}

impl HalfPlaneSolution {
    pub fn new(k0: f64, h0: f64) -> Result<Self, LimitError> {
        if !(k0 > 0.0 && h0.is_finite()) {
            return Err(LimitError::InvalidParameter(format!("need K0 > 0; got {k0}")));
        }
        Ok(HalfPlaneSolution { k0, h0 })
    }

    fn denom(&self, x: Point) -> f64 {
        let t = x[1] + self.h0 / self.k0;
        1.0 + self.k0 * (x[0] * x[0] + t * t)
    }

    pub fn value(&self, x: Point) -> f64 {
        4f64.ln() - 2.0 * self.denom(x).ln()
    }

    /// −∂_t V₀ at (s, 0).
    pub fn normal_derivative(&self, s: f64) -> f64 {
        4.0 * self.h0 / self.denom([s, 0.0])
    }
}

impl LimitField for HalfPlaneSolution {
    fn domain(&self) -> Domain {
        Domain::HalfPlane
    }
    fn weight(&self, x: Point) -> f64 {
        2.0 * self.k0 * self.value(x).exp()
    }
    fn boundary_weight(&self, s: f64) -> f64 {
        self.h0 * (0.5 * self.value([s, 0.0])).exp()
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![(self.h0 / self.k0).abs().max(1.0 / self.k0.sqrt())]
    }
    fn z0(&self) -> Option<Z0> {
        (self.h0 < 0.0).then_some(Z0 { k0: self.k0, h0: self.h0 })
    }
}

/// Z₀(s,t) = 2t/(1 + K₀(s² + (t + h₀/K₀)²)) − 1/h₀ for h₀ < 0, a positive
/// solution of the linearized problem at V₀.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Z0 {
    pub k0: f64,
    pub h0: f64,
}

impl Z0 {
    pub fn new(k0: f64, h0: f64) -> Result<Self, LimitError> {
        if !(k0 > 0.0 && h0 < 0.0) {
            return Err(LimitError::InvalidParameter(format!("need K0 > 0 and h0 < 0; got {k0}, {h0}")));
        }
        Ok(Z0 { k0, h0 })
    }

    fn denom(&self, x: Point) -> f64 {
        let t = x[1] + self.h0 / self.k0;
        1.0 + self.k0 * (x[0] * x[0] + t * t)
    }

    pub fn value(&self, x: Point) -> f64 {
        2.0 * x[1] / self.denom(x) - 1.0 / self.h0
    }

    pub fn grad(&self, x: Point) -> [f64; 2] {
        let d = self.denom(x);
        let tt = x[1] + self.h0 / self.k0;
        [
            -2.0 * x[1] * 2.0 * self.k0 * x[0] / (d * d),
            2.0 / d - 2.0 * x[1] * 2.0 * self.k0 * tt / (d * d),
        ]
    }
}

/// Synthetic field v = −log(1 + |x|²), whose weight 2K₀e^v has a
/// non-integrable |x|^{−2} tail.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct HeavyTail {
    pub k0: f64,
}

impl LimitField for HeavyTail {
    fn domain(&self) -> Domain {
        Domain::Plane
    }
    fn weight(&self, x: Point) -> f64 {
        2.0 * self.k0 / (1.0 + x[0] * x[0] + x[1] * x[1])
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![1.0]
    }
}

const FD8: [f64; 9] = [
    -1.0 / 560.0,
    8.0 / 315.0,
    -1.0 / 5.0,
    8.0 / 5.0,
    -205.0 / 72.0,
    8.0 / 5.0,
    -1.0 / 5.0,
    8.0 / 315.0,
    -1.0 / 560.0,
];

/// Eighth-order central difference Laplacian.
fn laplacian(f: &dyn Fn(Point) -> f64, x: Point, h: f64) -> f64 {
    let mut s = 0.0;
    for (i, c) in FD8.iter().enumerate() {
        let k = i as f64 - 4.0;
        s += c * (f([x[0] + k * h, x[1]]) + f([x[0], x[1] + k * h]));
    }
    s / (h * h)
}

fn fd_step(x: Point) -> f64 {
    (1e-2 * x[0].hypot(x[1])).clamp(1e-3, 5e-2)
}

/// max |Δv + 2K₀|x|^{2α}e^v| over the grid.
pub fn plane_residual(sol: &PlaneSolution, grid: &[Point]) -> Result<f64, LimitError> {
    let v = |x: Point| sol.value(x);
    grid.iter().try_fold(0.0f64, |m, &x| {
        let h = fd_step(x);
        if x[0].hypot(x[1]) <= 5.0 * h && sol.alpha != 0.0 {
            return Err(LimitError::NearOrigin(x[0], x[1]));
        }
        Ok(m.max((laplacian(&v, x, h) + sol.weight(x)).abs()))
    })
}

/// Interior defect on grid points with t > 0 and Neumann defect
/// |∂_ν V₀ − 2h₀e^{V₀/2}| at the boundary projections of the grid.
pub fn halfplane_residual(sol: &HalfPlaneSolution, grid: &[Point]) -> (f64, f64) {
    let v = |x: Point| sol.value(x);
    let mut inner = 0.0f64;
    let mut neu = 0.0f64;
    for &x in grid {
        if x[1] > 0.0 {
            inner = inner.max((laplacian(&v, x, fd_step(x)) + sol.weight(x)).abs());
        }
        let s = x[0];
        neu = neu.max((sol.normal_derivative(s) - 2.0 * sol.h0 * (0.5 * sol.value([s, 0.0])).exp()).abs());
    }
    (inner, neu)
}

/// Defects of −ΔZ₀ = 2K₀e^{V₀}(Z₀ + h₀/K₀ + 1/h₀) on t > 0 and of
/// ∂_νZ₀ = h₀e^{V₀/2}Z₀ at t = 0.
pub fn z0_residual(k0: f64, h0: f64, grid: &[Point]) -> Result<(f64, f64), LimitError> {
    let z = Z0::new(k0, h0)?;
    let v0 = HalfPlaneSolution::new(k0, h0)?;
    let zf = |x: Point| z.value(x);
    let mut inner = 0.0f64;
    let mut bdry = 0.0f64;
    for &x in grid {
        if x[1] > 0.0 {
            let rhs = 2.0 * k0 * v0.value(x).exp() * (z.value(x) + h0 / k0 + 1.0 / h0);
            inner = inner.max((-laplacian(&zf, x, fd_step(x)) - rhs).abs());
        }
        let b = [x[0], 0.0];
        let dn = -z.grad(b)[1];
        bdry = bdry.max((dn - h0 * (0.5 * v0.value(b)).exp() * z.value(b)).abs());
    }
    Ok((inner, bdry))
}

/// A compactly supported test function with analytic gradient.
pub trait TestField: Sync {
    fn value(&self, x: Point) -> f64;
    fn grad(&self, x: Point) -> [f64; 2];
    fn support_radius(&self) -> f64;
    /// Radii where the profile has kinks.
    fn kinks(&self) -> Vec<f64>;
}

/// Cubic smoothstep clamped to [0, 1], and its derivative.
fn smoothstep(s: f64) -> (f64, f64) {
    if s <= 0.0 {
        (0.0, 0.0)
    } else if s >= 1.0 {
        (1.0, 0.0)
    } else {
        (s * s * (3.0 - 2.0 * s), 6.0 * s * (1.0 - s))
    }
}

/// η(1 − log|x|/log R): one on B₁, zero outside B_R.
#[derive(Clone, Copy, Debug)]
pub struct LogCap {
    pub radius: f64,
}

impl TestField for LogCap {
    fn value(&self, x: Point) -> f64 {
        let r = x[0].hypot(x[1]);
        smoothstep(1.0 - r.ln() / self.radius.ln()).0
    }
    fn grad(&self, x: Point) -> [f64; 2] {
        let r = x[0].hypot(x[1]);
        if r == 0.0 {
            return [0.0; 2];
        }
        let d = smoothstep(1.0 - r.ln() / self.radius.ln()).1 * (-1.0 / (r * self.radius.ln()));
        [d * x[0] / r, d * x[1] / r]
    }
    fn support_radius(&self) -> f64 {
        self.radius
    }
    fn kinks(&self) -> Vec<f64> {
        vec![1.0, self.radius]
    }
}

/// Zero on B_{M₀} and outside B_{2M}, one on M₀·2 < |x| < M, with
/// transitions linear in log r.
#[derive(Clone, Copy, Debug)]
pub struct AnnulusCutoff {
    pub m0: f64,
    pub m: f64,
}

impl AnnulusCutoff {
    fn profile(&self, r: f64) -> (f64, f64) {
        let l2 = 2f64.ln();
        if r <= self.m0 || r >= 2.0 * self.m {
            (0.0, 0.0)
        } else if r < 2.0 * self.m0 {
            let (e, de) = smoothstep((r / self.m0).ln() / l2);
            (e, de / (r * l2))
        } else if r <= self.m {
            (1.0, 0.0)
        } else {
            let (e, de) = smoothstep(1.0 - (r / self.m).ln() / l2);
            (e, -de / (r * l2))
        }
    }
}

impl TestField for AnnulusCutoff {
    fn value(&self, x: Point) -> f64 {
        self.profile(x[0].hypot(x[1])).0
    }
    fn grad(&self, x: Point) -> [f64; 2] {
        let r = x[0].hypot(x[1]);
        if r == 0.0 {
            return [0.0; 2];
        }
        let d = self.profile(r).1;
        [d * x[0] / r, d * x[1] / r]
    }
    fn support_radius(&self) -> f64 {
        2.0 * self.m
    }
    fn kinks(&self) -> Vec<f64> {
        vec![self.m0, 2.0 * self.m0, self.m, 2.0 * self.m]
    }
}

/// Product of the log cap with Z₀.
#[derive(Clone, Copy, Debug)]
pub struct CapTimesZ0 {
    pub cap: LogCap,
    pub z: Z0,
}

impl TestField for CapTimesZ0 {
    fn value(&self, x: Point) -> f64 {
        self.cap.value(x) * self.z.value(x)
    }
    fn grad(&self, x: Point) -> [f64; 2] {
        let (c, gc) = (self.cap.value(x), self.cap.grad(x));
        let (z, gz) = (self.z.value(x), self.z.grad(x));
        [gc[0] * z + c * gz[0], gc[1] * z + c * gz[1]]
    }
    fn support_radius(&self) -> f64 {
        self.cap.radius
    }
    fn kinks(&self) -> Vec<f64> {
        let mut k = self.cap.kinks();
        k.push((self.z.h0 / self.z.k0).abs());
        k
    }
}

const GL8: [(f64, f64); 8] = [
    (0.362_683_783_378_362, -0.183_434_642_495_650),
    (0.362_683_783_378_362, 0.183_434_642_495_650),
    (0.313_706_645_877_887, -0.525_532_409_916_329),
    (0.313_706_645_877_887, 0.525_532_409_916_329),
    (0.222_381_034_453_374, -0.796_666_477_413_627),
    (0.222_381_034_453_374, 0.796_666_477_413_627),
    (0.101_228_536_290_376, -0.960_289_856_497_536),
    (0.101_228_536_290_376, 0.960_289_856_497_536),
];

/// Panel edges on [lo, hi] containing the breakpoints, with widths ≤ `max_width`.
fn panels(lo: f64, hi: f64, breaks: &[f64], max_width: f64) -> Vec<f64> {
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|&b| b > lo && b < hi).collect();
    pts.push(lo);
    pts.push(hi);
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() < 1e-14 * (1.0 + a.abs()));
    let mut out = vec![pts[0]];
    for w in pts.windows(2) {
        let n = ((w[1] - w[0]) / max_width).ceil().max(1.0) as usize;
        for i in 1..=n {
            out.push(w[0] + (w[1] - w[0]) * i as f64 / n as f64);
        }
    }
    out
}

/// Composite 8-point Gauss-Legendre over panels split at the breakpoints.
fn composite_gauss(lo: f64, hi: f64, breaks: &[f64], max_width: f64, f: &dyn Fn(f64) -> f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let p = panels(lo, hi, breaks, max_width);
    p.windows(2)
        .map(|w| {
            let (c, h) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
            GL8.iter().map(|(wt, x)| wt * f(c + h * x)).sum::<f64>() * h
        })
        .sum()
}

/// Q[φ,φ] = ∫(|∇φ|² − weight·φ²) minus, on the half-plane, ∫_{t=0} h₀e^{v/2}φ²,
/// by a polar tensor-product Gauss rule in (log r, θ) over the window.
pub fn quadratic_form_q(sol: &dyn LimitField, phi: &dyn TestField, window: f64) -> Result<f64, LimitError> {
    let support = phi.support_radius();
    if support > window {
        return Err(LimitError::SupportExceedsWindow { support, window });
    }
    let mut breaks: Vec<f64> = phi.kinks().into_iter().chain(sol.breakpoints()).filter(|&r| r > 0.0).map(f64::ln).collect();
    breaks.sort_by(f64::total_cmp);
    let hi = support.ln();
    let lo = hi.min(0.0) - 30.0;
    let theta_hi = match sol.domain() {
        Domain::Plane => 2.0 * PI,
        Domain::HalfPlane => PI,
    };
    let radial = panels(lo, hi, &breaks, 0.125);
    let volume: f64 = radial
        .par_windows(2)
        .map(|w| {
            let (c, h) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
            let mut acc = 0.0;
            for (wt, xi) in GL8 {
                let t = c + h * xi;
                let r = t.exp();
                let ring = composite_gauss(0.0, theta_hi, &[0.5 * PI, PI, 1.5 * PI], PI / 16.0, &|th: f64| {
                    let x = [r * th.cos(), r * th.sin()];
                    let g = phi.grad(x);
                    let v = phi.value(x);
                    g[0] * g[0] + g[1] * g[1] - sol.weight(x) * v * v
                });
                acc += wt * ring * r * r;
            }
            acc * h
        })
        .sum();
    let boundary = match sol.domain() {
        Domain::Plane => 0.0,
        Domain::HalfPlane => {
            let side = |sign: f64| {
                composite_gauss(lo, hi, &breaks, 0.125, &|t: f64| {
                    let s = sign * t.exp();
                    let v = phi.value([s, 0.0]);
                    sol.boundary_weight(s) * v * v * t.exp()
                })
            };
            side(1.0) + side(-1.0)
        }
    };
    Ok(volume - boundary)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WitnessKind {
    LogCap,
    Annulus { m0: f64 },
    BoundaryHz,
}

#[derive(Clone, Debug, Serialize)]
pub struct WitnessResult {
    pub kind: WitnessKind,
    /// R for caps, M for annuli: the first certified value, or the last tried.
    pub parameter: f64,
    pub q_value: f64,
    pub certified: bool,
    /// Every (parameter, Q) evaluated during the search.
    pub trials: Vec<(f64, f64)>,
}

/// Largest cap radius or annulus size tried.
pub const WITNESS_CAP: f64 = 1e6;

/// Doubles the witness parameter from its start until Q < 0 or the cap.
pub fn instability_witness(sol: &dyn LimitField, kind: WitnessKind) -> Result<WitnessResult, LimitError> {
    let (mut param, make): (f64, Box<dyn Fn(f64) -> Box<dyn TestField>>) = match kind {
        WitnessKind::LogCap => (2.0, Box::new(|r| Box::new(LogCap { radius: r }))),
        WitnessKind::Annulus { m0 } => {
            if !(m0 > 0.0) {
                return Err(LimitError::InvalidParameter(format!("M0 = {m0} must be positive")));
            }
            (4.0 * m0, Box::new(move |m| Box::new(AnnulusCutoff { m0, m })))
        }
        WitnessKind::BoundaryHz => {
            let z = sol
                .z0()
                .ok_or_else(|| LimitError::InvalidParameter("boundary witness needs a half-plane solution with h0 < 0".into()))?;
            (2.0, Box::new(move |r| Box::new(CapTimesZ0 { cap: LogCap { radius: r }, z })))
        }
    };
    let mut trials = Vec::new();
    loop {
        let phi = make(param);
        let q = quadratic_form_q(sol, phi.as_ref(), 4.0 * phi.support_radius())?;
        trials.push((param, q));
        if q < 0.0 {
            return Ok(WitnessResult { kind, parameter: param, q_value: q, certified: true, trials });
        }
        if 2.0 * param > WITNESS_CAP {
            return Ok(WitnessResult { kind, parameter: param, q_value: q, certified: false, trials });
        }
        param *= 2.0;
    }
}
