//! Melnikov function `M+`, its derivative, the half-integrals of the manifold distance, and
//! sign certification of the derivative, each with an a posteriori error budget.
//!
//! All integrals share the kernel `D(s, phi) = 1 + kappa^2 s^{4/3} - 2 kappa s^{2/3} cos(phi)`
//! with `phi = theta - s`, which vanishes only at `s = kappa^{-3/2} = sqrt(2)/3` and
//! `theta = sqrt(2)/3 (mod 2 pi)`. Evaluations therefore refuse angles within a window around
//! that pole.

use crate::charts::wrap_angle;
use crate::closedform::{kappa, time_to_radius};
use crate::error::{Error, Result};
use crate::quadrature::{integrate_adaptive, integrate_panels, QuadResult};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_4, PI, SQRT_2};

/// `Gamma(2/3)` to double precision.
pub const GAMMA_TWO_THIRDS: f64 = 1.354_117_939_426_400_4;

/// The sets on which the derivative of `M+` is claimed nonzero.
pub const B_PLUS: [(f64, f64); 3] = [(-1.72851, -0.583065), (-0.407155, 0.0578054), (0.921743, 4.15633)];

/// Half-width of the excluded window for which `B_PLUS` lies in the admissible set.
pub const PROOF_WINDOW: f64 = 0.3;

/// Interval overlap used by [`SlackMode::Overlap`].
pub const OVERLAP_EPS: f64 = 1e-5;

/// Angle `sqrt(2)/3` at which the kernel has its pole.
pub fn pole_angle() -> f64 {
    SQRT_2 / 3.0
}

/// Whether `theta` lies outside the window `(sqrt2/3 - window, sqrt2/3 + window)` mod 2 pi.
pub fn admissible(theta: f64, window: f64) -> bool {
    wrap_angle(theta - pole_angle()).abs() >= window
}

/// How the tail `[C, inf)` is accounted for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TailModel {
    /// Drop the tail and add the crude uniform bound on its absolute integrand.
    Uniform,
    /// Integrate the leading asymptotic term `kappa^{-3} s^{-4/3}` exactly and bound the remainder.
    Refined,
}

/// Quadrature cutoffs and tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureBudget {
    /// Inner cutoff `c`; `[0, c]` is bounded, not integrated.
    pub c: f64,
    /// Outer cutoff `C`.
    pub big_c: f64,
    /// Target error per panel of length at most pi/4 on `[c, C]`.
    pub panel_tol: f64,
    /// Half-width of the excluded window around the pole angle.
    pub window: f64,
    pub tails: TailModel,
}

impl Default for QuadratureBudget {
    fn default() -> Self {
        Self { c: 1e-3, big_c: 100.0, panel_tol: 1e-10, window: 0.45, tails: TailModel::Refined }
    }
}

impl QuadratureBudget {
    /// Checks `0 < c < kappa^{-3/2} < C` and positivity of the tolerances.
    pub fn validate(&self) -> Result<()> {
        let pole = kappa().powf(-1.5);
        if !(self.c > 0.0 && self.c < pole && pole < self.big_c) {
            return Err(Error::InvalidParameter(format!(
                "cutoffs must satisfy 0 < c < {pole} < C, got c = {}, C = {}",
                self.c, self.big_c
            )));
        }
        if !(self.panel_tol > 0.0 && self.window > 0.0 && self.window < PI) {
            return Err(Error::InvalidParameter("panel tolerance and window must be positive".into()));
        }
        Ok(())
    }

    fn check(&self, theta: f64) -> Result<()> {
        self.validate()?;
        if !theta.is_finite() || !admissible(theta, self.window) {
            return Err(Error::Domain(format!(
                "theta = {theta} lies in the excluded window of half-width {} around sqrt(2)/3",
                self.window
            )));
        }
        Ok(())
    }
}

/// A value with its error budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelnikovEval {
    pub theta: f64,
    pub value: f64,
    /// Total budget: quadrature estimate plus inner and outer tail bounds.
    pub err: f64,
    pub quad_err: f64,
    pub inner_tail: f64,
    pub outer_tail: f64,
}

impl MelnikovEval {
    /// `[value - err, value + err]`.
    pub fn enclosure(&self) -> (f64, f64) {
        (self.value - self.err, self.value + self.err)
    }

    fn negated(self, theta: f64) -> Self {
        Self { theta, value: -self.value, ..self }
    }
}

#[inline]
fn s23(s: f64) -> f64 {
    let c = s.cbrt();
    c * c
}

#[inline]
fn kernel(s23: f64, phi: f64) -> f64 {
    let k = kappa();
    1.0 + k * k * s23 * s23 - 2.0 * k * s23 * phi.cos()
}

/// Integrand of the first part of `M+`: `s^{2/3} sin(theta - s) / D^{3/2}`.
pub fn value_integrand(s: f64, theta: f64) -> f64 {
    let q = s23(s);
    let phi = theta - s;
    let d = kernel(q, phi);
    q * phi.sin() / (d * d.sqrt())
}

/// Integrand of `I_1 / kappa`: `s^{2/3} cos(phi) / D^{3/2} - 3 kappa s^{4/3} sin^2(phi) / D^{5/2}`.
pub fn derivative_integrand(s: f64, theta: f64) -> f64 {
    let q = s23(s);
    let phi = theta - s;
    let (sp, cp) = phi.sin_cos();
    let d = kernel(q, phi);
    let d32 = d * d.sqrt();
    q * cp / d32 - 3.0 * kappa() * q * q * sp * sp / (d32 * d)
}

/// `|d/dtheta|` of [`derivative_integrand`].
pub fn derivative_integrand_slope(s: f64, theta: f64) -> f64 {
    let k = kappa();
    let q = s23(s);
    let phi = theta - s;
    let (sp, cp) = phi.sin_cos();
    let d = kernel(q, phi);
    let d32 = d * d.sqrt();
    let d52 = d32 * d;
    let d72 = d52 * d;
    (-q * sp / d32 - 9.0 * k * q * q * sp * cp / d52 + 15.0 * k * k * q * q * q * sp * sp * sp / d72).abs()
}

/// Bounds on `|i(0, c)|` and `|i(C, inf)|` of the derivative integrand, before the `kappa` factor.
pub fn uniform_tail_bounds(c: f64, big_c: f64) -> (f64, f64) {
    let k = kappa();
    let a = 1.0 - k * s23(c);
    let inner = 0.6 * c.powf(5.0 / 3.0) / a.powi(3) + 9.0 * k / 7.0 * c.powf(7.0 / 3.0) / a.powi(5);
    let b = k - 1.0 / s23(big_c);
    let outer = 3.0 / (big_c.cbrt() * b.powi(3)) + 3.0 * k / (big_c * b.powi(5));
    (inner, outer)
}

/// Bound on `int_0^c |value_integrand|`.
fn value_inner_bound(c: f64) -> f64 {
    0.6 * c.powf(5.0 / 3.0) / (1.0 - kappa() * s23(c)).powi(3)
}

/// `int_C^inf s^{-a} e^{i(alpha - s)} ds` as `(cos part, sin part, truncation bound)`, by repeated
/// integration by parts: `J(a) = -i C^{-a} e^{-iC} + i a J(a + 1)` with `|J(b)| <= C^{1-b}/(b-1)`.
pub fn oscillatory_tail(a: f64, alpha: f64, big_c: f64) -> (f64, f64, f64) {
    // w = -i e^{i(alpha - C)}
    let (sn, cs) = (alpha - big_c).sin_cos();
    let (mut wr, mut wi) = (sn, -cs);
    let mut coef = big_c.powf(-a);
    let (mut re, mut im) = (0.0, 0.0);
    let mut bound = f64::INFINITY;
    for k in 0..400 {
        let b = a + k as f64;
        if b > 1.0 {
            // Remainder after k terms: (a)_k |J(a + k)|.
            bound = coef * big_c / (b - 1.0);
            if bound < 1e-18 || b >= big_c {
                break;
            }
        }
        re += coef * wr;
        im += coef * wi;
        coef *= b / big_c;
        // w *= i
        let t = wr;
        wr = -wi;
        wi = t;
    }
    (re, im, bound)
}

/// Bounds on the outer remainder of the refined tail, before the `kappa` factor: the first entry
/// bounds the value integrand minus its leading term, the second the derivative integrand's.
fn refined_remainders(big_c: f64) -> (f64, f64) {
    let k = kappa();
    let x = 1.0 / (k * s23(big_c));
    let first = 3.0 / (k.powi(4) * big_c) / (1.0 - x).powi(4);
    let second = 3.0 / (k.powi(4) * big_c) / (1.0 - x).powi(5);
    (first, first + second)
}

fn quad_c_to_big_c<F: Fn(f64) -> f64>(f: &F, b: &QuadratureBudget) -> QuadResult {
    integrate_panels(f, b.c, b.big_c, FRAC_PI_4, b.panel_tol)
}

/// `sqrt(2/kappa) int_0^inf cos(alpha - s) s^{-1/3} ds`.
fn cosine_part(alpha: f64) -> f64 {
    (2.0 / kappa()).sqrt() * GAMMA_TWO_THIRDS * (0.5 * alpha.cos() + 0.5 * 3f64.sqrt() * alpha.sin())
}

/// `I_2(theta) = sqrt(2/kappa) Gamma(2/3) (sin(theta)/2 - sqrt(3)/2 cos(theta))`.
pub fn i2_closed(theta: f64) -> f64 {
    (2.0 / kappa()).sqrt() * GAMMA_TWO_THIRDS * (0.5 * theta.sin() - 0.5 * 3f64.sqrt() * theta.cos())
}

/// `I_2` by direct quadrature: `s = t^3` near the origin, half-periods between consecutive
/// zeros of `sin(theta - s)` up to `s = 2000 pi`, and averaging of the last two partial sums.
pub fn i2_quadrature(theta: f64) -> f64 {
    let mut first = theta - (theta / PI).floor() * PI;
    if first <= 0.0 {
        first += PI;
    }
    let near = integrate_adaptive(&|t: f64| 3.0 * t * (theta - t * t * t).sin(), 0.0, first.cbrt(), 1e-15);
    let f = |s: f64| (theta - s).sin() / s.cbrt();
    let mut sum = near.value;
    let mut prev = sum;
    let mut lo = first;
    while lo + PI <= 2000.0 * PI {
        prev = sum;
        sum += integrate_adaptive(&f, lo, lo + PI, 1e-15).value;
        lo += PI;
    }
    (2.0 / kappa()).sqrt() * 0.5 * (sum + prev)
}

/// `M+(theta)` with its budget.
pub fn melnikov_plus(theta: f64, budget: &QuadratureBudget) -> Result<MelnikovEval> {
    budget.check(theta)?;
    let k = kappa();
    let q = quad_c_to_big_c(&|s| value_integrand(s, theta), budget);
    let inner = value_inner_bound(budget.c);
    let (lead, outer) = match budget.tails {
        TailModel::Uniform => (0.0, 3.0 / (budget.big_c.cbrt() * (k - 1.0 / s23(budget.big_c)).powi(3))),
        TailModel::Refined => {
            let (_, sin_part, trunc) = oscillatory_tail(4.0 / 3.0, theta, budget.big_c);
            let (rem, _) = refined_remainders(budget.big_c);
            (sin_part / k.powi(3), rem + trunc / k.powi(3))
        }
    };
    Ok(MelnikovEval {
        theta,
        value: k * (q.value + lead) + cosine_part(theta),
        err: k * (q.error + inner + outer),
        quad_err: k * q.error,
        inner_tail: k * inner,
        outer_tail: k * outer,
    })
}

/// `M-(theta) = -M+(-theta)`.
pub fn melnikov_minus(theta: f64, budget: &QuadratureBudget) -> Result<MelnikovEval> {
    Ok(melnikov_plus(-theta, budget)?.negated(theta))
}

/// `I_1(theta)` with its budget; the tails follow `budget.tails`.
pub fn i1(theta: f64, budget: &QuadratureBudget) -> Result<MelnikovEval> {
    budget.check(theta)?;
    let k = kappa();
    let q = quad_c_to_big_c(&|s| derivative_integrand(s, theta), budget);
    let (inner, uniform_outer) = uniform_tail_bounds(budget.c, budget.big_c);
    let (lead, outer) = match budget.tails {
        TailModel::Uniform => (0.0, uniform_outer),
        TailModel::Refined => {
            let (cos_part, _, trunc) = oscillatory_tail(4.0 / 3.0, theta, budget.big_c);
            let (_, rem) = refined_remainders(budget.big_c);
            (cos_part / k.powi(3), rem + trunc / k.powi(3))
        }
    };
    Ok(MelnikovEval {
        theta,
        value: k * (q.value + lead),
        err: k * (q.error + inner + outer),
        quad_err: k * q.error,
        inner_tail: k * inner,
        outer_tail: k * outer,
    })
}

/// `M+'(theta) = I_1(theta) - I_2(theta)`; `I_2` is exact.
pub fn melnikov_plus_derivative(theta: f64, budget: &QuadratureBudget) -> Result<MelnikovEval> {
    let mut e = i1(theta, budget)?;
    e.value -= i2_closed(theta);
    Ok(e)
}

/// Bound on `int_0^inf |d/dtheta| (M+' integrand)`, including the `I_2` part, used as a
/// Lipschitz constant of `M+'` in `theta`.
fn derivative_lipschitz(theta: f64, budget: &QuadratureBudget) -> f64 {
    let k = kappa();
    let q = integrate_panels(&|s| derivative_integrand_slope(s, theta), budget.c, budget.big_c, FRAC_PI_4, 1e-7);
    let c = budget.c;
    let a = 1.0 - k * s23(c);
    let inner = 0.6 * c.powf(5.0 / 3.0) / a.powi(3)
        + 27.0 * k / 7.0 * c.powf(7.0 / 3.0) / a.powi(5)
        + 5.0 * k * k * c.powi(3) / a.powi(7);
    let big_c = budget.big_c;
    let b = k - 1.0 / s23(big_c);
    let outer = 3.0 / (big_c.cbrt() * b.powi(3)) + 9.0 * k / (big_c * b.powi(5)) + 9.0 * k * k / (big_c.powf(5.0 / 3.0) * b.powi(7));
    k * (q.value + q.error + inner + outer) + (2.0 / kappa()).sqrt() * GAMMA_TWO_THIRDS
}

/// The two half-integrals whose sum is `-M+(theta + w_Sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfIntegrals {
    pub theta: f64,
    pub w_sigma: f64,
    /// Collision side, integrated over `[0, w_Sigma]`.
    pub splus_u: MelnikovEval,
    /// Infinity side, integrated over `[w_Sigma, inf)`.
    pub inf_s: MelnikovEval,
}

/// `I_{S+}^u(theta)` and `I_inf^s(theta)` at the section `r = r_star`, both evaluated at the
/// shifted argument `theta + w_Sigma`. The infinity side never uses `Gamma(2/3)`, so the
/// identity with `M+` is an independent check.
pub fn half_integrals(theta: f64, r_star: f64, budget: &QuadratureBudget) -> Result<HalfIntegrals> {
    if !(r_star > 0.0 && r_star < 1.0) {
        return Err(Error::InvalidParameter(format!("section radius {r_star} not in (0, 1)")));
    }
    let w = time_to_radius(r_star);
    let alpha = theta + w;
    budget.check(alpha)?;
    let k = kappa();
    let sq = (2.0 / k).sqrt();
    let tol = budget.panel_tol;
    // s = t^3 removes the s^{-1/3} singularity.
    let sub = |t: f64| {
        let s = t * t * t;
        3.0 * t * t * (k * value_integrand(s, alpha) + sq * (alpha - s).cos() / t)
    };
    let sub_at = |t: f64| if t == 0.0 { 0.0 } else { sub(t) };
    let near = integrate_adaptive(&sub_at, 0.0, w.cbrt(), tol);
    let splus_u = MelnikovEval { theta, value: -near.value, err: near.error, quad_err: near.error, inner_tail: 0.0, outer_tail: 0.0 };

    let mid = integrate_adaptive(&sub_at, w.cbrt(), 1.0, tol);
    let far = integrate_panels(&|s: f64| k * value_integrand(s, alpha) + sq * (alpha - s).cos() / s.cbrt(), 1.0, budget.big_c, FRAC_PI_4, tol);
    let (_, sin43, trunc43) = oscillatory_tail(4.0 / 3.0, alpha, budget.big_c);
    let (cos13, _, trunc13) = oscillatory_tail(1.0 / 3.0, alpha, budget.big_c);
    let (rem, _) = refined_remainders(budget.big_c);
    let tail = k * sin43 / k.powi(3) + sq * cos13;
    let outer = k * (rem + trunc43 / k.powi(3)) + sq * trunc13;
    let quad = mid.error + far.error;
    let inf_s = MelnikovEval {
        theta,
        value: -(mid.value + far.value + tail),
        err: quad + outer,
        quad_err: quad,
        inner_tail: 0.0,
        outer_tail: outer,
    };
    Ok(HalfIntegrals { theta, w_sigma: w, splus_u, inf_s })
}

/// How a subinterval's sign is certified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlackMode {
    /// Midpoint value with budget plus half-width times a Lipschitz bound of `M+'`.
    Lipschitz,
    /// Endpoint values of subintervals widened by [`OVERLAP_EPS`], without a Lipschitz term.
    Overlap,
}

/// Result for one subinterval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubintervalCheck {
    pub lo: f64,
    pub hi: f64,
    pub value: f64,
    pub err: f64,
    pub slack: f64,
    /// `|value| - err - slack`; positive means certified.
    pub margin: f64,
    pub sign: i8,
}

/// Result for one connected piece.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieceReport {
    pub lo: f64,
    pub hi: f64,
    pub subintervals: usize,
    pub certified: bool,
    /// Common sign of `M+'` on the piece, if certified.
    pub sign: Option<i8>,
    pub worst_margin: f64,
}

/// Summary of a sign certification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub grid_n: usize,
    pub mode: SlackMode,
    pub budget: QuadratureBudget,
    pub pieces: Vec<PieceReport>,
    /// Subintervals whose sign could not be certified.
    pub failures: Vec<SubintervalCheck>,
    pub all_certified: bool,
    pub worst_margin: f64,
    pub at_zero: MelnikovEval,
    pub zero_negative: bool,
}

fn check_subinterval(lo: f64, hi: f64, budget: &QuadratureBudget, mode: SlackMode) -> Result<SubintervalCheck> {
    match mode {
        SlackMode::Lipschitz => {
            let mid = 0.5 * (lo + hi);
            let e = melnikov_plus_derivative(mid, budget)?;
            let half = 0.5 * (hi - lo);
            let lip = [lo, mid, hi].iter().map(|&t| derivative_lipschitz(t, budget)).fold(0.0, f64::max);
            let slack = half * lip;
            Ok(SubintervalCheck {
                lo,
                hi,
                value: e.value,
                err: e.err,
                slack,
                margin: e.value.abs() - e.err - slack,
                sign: if e.value > 0.0 { 1 } else { -1 },
            })
        }
        SlackMode::Overlap => {
            let a = melnikov_plus_derivative(lo - 0.5 * OVERLAP_EPS, budget)?;
            let b = melnikov_plus_derivative(hi + 0.5 * OVERLAP_EPS, budget)?;
            let same = a.value.signum() == b.value.signum();
            let margin = if same { (a.value.abs() - a.err).min(b.value.abs() - b.err) } else { -1.0 };
            let (value, err) = if a.value.abs() - a.err <= b.value.abs() - b.err { (a.value, a.err) } else { (b.value, b.err) };
            Ok(SubintervalCheck { lo, hi, value, err, slack: 0.0, margin, sign: if value > 0.0 { 1 } else { -1 } })
        }
    }
}

/// Certifies that `M+'` has no zero on each piece, splitting the circle into `grid_n` equal
/// subintervals aligned to multiples of `2 pi / grid_n` and clipped to the pieces.
pub fn certify_sign(pieces: &[(f64, f64)], grid_n: usize, budget: &QuadratureBudget, mode: SlackMode) -> Result<CertificationReport> {
    if grid_n == 0 {
        return Err(Error::InvalidParameter("grid_n must be at least 1".into()));
    }
    budget.validate()?;
    let step = 2.0 * PI / grid_n as f64;
    let mut jobs: Vec<(usize, f64, f64)> = Vec::new();
    for (p, &(lo, hi)) in pieces.iter().enumerate() {
        if !(hi > lo) {
            return Err(Error::InvalidParameter(format!("empty piece [{lo}, {hi}]")));
        }
        let j0 = (lo / step).floor() as i64;
        let j1 = (hi / step).ceil() as i64;
        for j in j0..j1 {
            let a = (j as f64 * step).max(lo);
            let b = ((j + 1) as f64 * step).min(hi);
            if b > a {
                jobs.push((p, a, b));
            }
        }
    }
    let checks: Vec<Result<SubintervalCheck>> =
        jobs.par_iter().map(|&(_, a, b)| check_subinterval(a, b, budget, mode)).collect();
    let mut reports: Vec<PieceReport> = pieces
        .iter()
        .map(|&(lo, hi)| PieceReport { lo, hi, subintervals: 0, certified: true, sign: None, worst_margin: f64::INFINITY })
        .collect();
    let mut failures = Vec::new();
    for (&(p, _, _), c) in jobs.iter().zip(checks) {
        let c = c?;
        let r = &mut reports[p];
        r.subintervals += 1;
        r.worst_margin = r.worst_margin.min(c.margin);
        if c.margin <= 0.0 {
            r.certified = false;
            failures.push(c);
            continue;
        }
        match r.sign {
            None => r.sign = Some(c.sign),
            Some(s) if s != c.sign => r.certified = false,
            _ => {}
        }
    }
    for r in &mut reports {
        if !r.certified {
            r.sign = None;
        }
    }
    let zero_budget = QuadratureBudget { window: budget.window.min(PROOF_WINDOW), ..*budget };
    let at_zero = melnikov_plus_derivative(0.0, &zero_budget)?;
    let worst_margin = reports.iter().map(|r| r.worst_margin).fold(f64::INFINITY, f64::min);
    Ok(CertificationReport {
        grid_n,
        mode,
        budget: *budget,
        all_certified: reports.iter().all(|r| r.certified),
        pieces: reports,
        failures,
        worst_margin,
        zero_negative: at_zero.value + at_zero.err < 0.0,
        at_zero,
    })
}

/// [`certify_sign`] on `B_PLUS`, with the excluded window narrowed to [`PROOF_WINDOW`].
pub fn certify_sign_on_b_plus(grid_n: usize, budget: &QuadratureBudget, mode: SlackMode) -> Result<CertificationReport> {
    let b = QuadratureBudget { window: budget.window.min(PROOF_WINDOW), ..*budget };
    certify_sign(&B_PLUS, grid_n, &b, mode)
}
