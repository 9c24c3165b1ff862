//! The transition map across the collision neighborhood, from the incoming section `s = delta`
//! near `S-` to the outgoing section `s = delta` near `S+`, together with the straightening
//! coordinates in which it is close to the identity.

use crate::charts::{wrap_angle, Reduced};
use crate::closedform::m0;
use crate::error::{Error, Result};
use crate::fields::{Field, FieldId};
use crate::flow::{integrate, Clocked, Direction, EventSpec, IntegratorConfig, Termination, COLLISION_FLOOR};
use crate::manifolds::{trace_collision_manifold, Branch, Circle, FiberSeed, SectionSpec, TraceConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

/// Neighborhood of one of the circles of equilibria.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Neighborhood {
    /// Near `S-`, coordinates `(s, beta_tilde, z)`.
    Minus,
    /// Near `S+`, coordinates `(s, iota_tilde, w)`.
    Plus,
}

/// A point in straightened coordinates: `angle` is `beta_tilde` or `iota_tilde`, `fiber` is
/// `z` or `w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StraightenedPoint {
    pub side: Neighborhood,
    pub s: f64,
    pub angle: f64,
    pub fiber: f64,
}

/// Leading-order straightening: `psi` truncated to zero and
/// `y = z + 8 s^3 / (3 m0)` near `S-`, `x = w - 8 s^3 / (3 m0)` near `S+`.
pub fn truncated_straighten(red: &Reduced, side: Neighborhood, mu: f64) -> StraightenedPoint {
    let c = 8.0 * red.s.powi(3) / (3.0 * m0(mu));
    match side {
        Neighborhood::Minus => {
            let beta = wrap_angle(red.alpha + FRAC_PI_2);
            let y = red.theta - 2.0 * beta;
            StraightenedPoint { side, s: red.s, angle: beta, fiber: wrap_angle(y - c) }
        }
        Neighborhood::Plus => {
            let iota = wrap_angle(red.alpha - FRAC_PI_2);
            let x = red.theta - 2.0 * iota;
            StraightenedPoint { side, s: red.s, angle: iota, fiber: wrap_angle(x + c) }
        }
    }
}

/// Straightening coordinates restricted to the section `s = delta`, built from traced fibers of
/// `W^u(S+)` (and their reflections for `W^s(S-)`), so that the manifolds sit exactly at angle
/// zero and each fiber has constant `w` (or `z`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionStraightening {
    pub mu: f64,
    pub h: f64,
    pub delta: f64,
    pub trace: TraceConfig,
}

impl SectionStraightening {
    pub fn new(mu: f64, h: f64, delta: f64) -> Self {
        Self { mu, h, delta, trace: TraceConfig::default() }
    }

    /// `(x, iota)` where the unstable fiber of `S+` with base `w` meets `s = delta`.
    pub fn fiber_end(&self, w: f64) -> Result<(f64, f64)> {
        let section = SectionSpec::new(self.delta, self.h, Branch::Outgoing);
        let tr = trace_collision_manifold(&FiberSeed::new(Circle::SPlus, w), self.mu, &section, &self.trace)?;
        if tr.trajectory.status != Termination::Event(0) {
            return Err(Error::Numerical(format!("fiber with base {w} did not reach s = {}", self.delta)));
        }
        let y = tr.trajectory.y_end();
        let iota = y[2] - FRAC_PI_2;
        Ok((y[1] - 2.0 * iota, iota))
    }

    /// Base `w` of the fiber whose section point has fiber coordinate `x`.
    fn invert_fiber(&self, x: f64) -> Result<(f64, f64)> {
        let shift = 8.0 * self.delta.powi(3) / (3.0 * m0(self.mu));
        let mut w = x + shift;
        for _ in 0..self.trace.max_iter {
            let (xf, iota) = self.fiber_end(w)?;
            let f = wrap_angle(xf - x);
            if f.abs() < 1e-14 {
                return Ok((w, iota));
            }
            w -= f;
        }
        Err(Error::Numerical(format!("fiber inversion at x = {x} did not converge")))
    }

    /// Plus-side coordinates `(iota_tilde, w)` of a reduced state on `s = delta`.
    pub fn plus_coords(&self, red: &Reduced) -> Result<StraightenedPoint> {
        self.check_on_section(red)?;
        let iota = wrap_angle(red.alpha - FRAC_PI_2);
        let x = red.theta - 2.0 * iota;
        let (w, psi) = self.invert_fiber(x)?;
        Ok(StraightenedPoint { side: Neighborhood::Plus, s: red.s, angle: iota - psi, fiber: wrap_angle(w) })
    }

    /// Minus-side coordinates `(beta_tilde, z)`, through the reversibility involution.
    pub fn minus_coords(&self, red: &Reduced) -> Result<StraightenedPoint> {
        let p = self.plus_coords(&red.reflect())?;
        Ok(StraightenedPoint { side: Neighborhood::Minus, s: p.s, angle: -p.angle, fiber: wrap_angle(-p.fiber) })
    }

    /// Reduced state on `s = delta` with plus-side coordinates `(iota_tilde, w)`.
    pub fn plus_state(&self, iota_tilde: f64, w: f64) -> Result<Reduced> {
        let (x, psi) = self.fiber_end(w)?;
        let iota = psi + iota_tilde;
        Reduced::on_shell(self.delta, x + 2.0 * iota, iota + FRAC_PI_2, self.mu, self.h)
    }

    /// Reduced state on `s = delta` with minus-side coordinates `(beta_tilde, z)`.
    pub fn minus_state(&self, beta_tilde: f64, z: f64) -> Result<Reduced> {
        Ok(self.plus_state(-beta_tilde, -z)?.reflect())
    }

    fn check_on_section(&self, red: &Reduced) -> Result<()> {
        if (red.s - self.delta).abs() > 1e-9 * self.delta {
            return Err(Error::Domain(format!("s = {} is not on the section s = {}", red.s, self.delta)));
        }
        Ok(())
    }
}

/// The transverse input curve `nu -> (delta, nu, z0 + z1 nu)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputCurve {
    pub z0: f64,
    pub z1: f64,
}

impl InputCurve {
    pub fn z(&self, nu: f64) -> f64 {
        self.z0 + self.z1 * nu
    }
}

/// Outcome of one passage through the collision neighborhood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitResult {
    pub nu: f64,
    pub z_in: f64,
    pub iota_out: f64,
    pub w_out: f64,
    pub s_min: f64,
    /// `s` on the first intermediate section `beta_tilde = +-delta`.
    pub s1: Option<f64>,
    /// The intermediate sections were crossed in order before the exit.
    pub ordered: bool,
    /// Regularized time of the passage.
    pub tau: f64,
    /// `H - h` at the exit point.
    pub energy_residual: f64,
}

/// Maps `(delta, nu, z_in)` on the incoming section to the outgoing section by integrating the
/// reduced flow. At `nu = 0` the continuous extension `(delta, 0, z_in)` is returned.
pub fn transit(nu: f64, z_in: f64, st: &SectionStraightening, integrator: &IntegratorConfig) -> Result<TransitResult> {
    let delta = st.delta;
    if !(nu.abs() < delta) {
        return Err(Error::Domain(format!("|nu| = {} must be below delta = {delta}", nu.abs())));
    }
    if nu == 0.0 {
        return Ok(TransitResult {
            nu,
            z_in,
            iota_out: 0.0,
            w_out: z_in,
            s_min: 0.0,
            s1: None,
            ordered: true,
            tau: f64::INFINITY,
            energy_residual: 0.0,
        });
    }
    let start = st.minus_state(nu, z_in)?;
    let alpha0 = -FRAC_PI_2 + wrap_angle(start.alpha + FRAC_PI_2);
    let field = Field::new(FieldId::Reduced, st.mu, st.h);
    let clocked = Clocked(&field);
    let sgn = nu.signum();
    let events = [
        EventSpec::terminal("exit", Direction::Rising, move |_, y: &[f64]| y[0] - delta),
        EventSpec::terminal("capture", Direction::Falling, |_, y: &[f64]| y[0] - COLLISION_FLOOR),
        EventSpec::new("sigma1", Direction::Rising, move |_, y: &[f64]| sgn * (y[2] + FRAC_PI_2) - delta),
        EventSpec::new("sigma2", Direction::Rising, move |_, y: &[f64]| sgn * (y[2] + FRAC_PI_2) - (PI - delta)),
    ];
    let y0 = [delta, start.theta, alpha0, 0.0];
    let traj = integrate(&clocked, 0.0, &y0, 1e4, integrator, &events)?;
    if traj.status != Termination::Event(0) {
        return Err(Error::Numerical(format!("transit at nu = {nu} ended with {:?}", traj.status)));
    }
    let y = traj.y_end();
    let exit = Reduced::on_shell(y[0], y[1], y[2], st.mu, st.h)?;
    let out = st.plus_coords(&exit)?;
    let s_min = traj.states.iter().map(|y| y[0]).fold(f64::INFINITY, f64::min);
    let t1 = traj.hits_of(2).next().map(|e| (e.t, e.y[0]));
    let t2 = traj.hits_of(3).next().map(|e| e.t);
    let ordered = matches!((t1, t2), (Some((a, _)), Some(b)) if a < b && b < traj.t_end());
    let polar = exit.to_regularized(st.mu)?.to_polar(st.mu)?;
    Ok(TransitResult {
        nu,
        z_in,
        iota_out: out.angle,
        w_out: out.fiber,
        s_min,
        s1: t1.map(|(_, s)| s),
        ordered,
        tau: traj.t_end(),
        energy_residual: polar.hamiltonian(st.mu)? - st.h,
    })
}

/// Fitted constants of the transition estimates over a grid of `nu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitReport {
    pub delta: f64,
    pub mu: f64,
    pub h: f64,
    pub curve: InputCurve,
    pub samples: Vec<TransitResult>,
    /// Smallest `C1` with `|iota_out + nu| <= C1 delta nu` on the grid.
    pub c1: f64,
    /// Smallest `C2` with `|w_out - z_in| <= C2 (delta^2 nu + nu^2)` on the grid.
    pub c2: f64,
    /// Least-squares `(a, b)` in `|w_out - z_in| ~ a delta^2 nu + b nu^2`.
    pub c2_lsq: (f64, f64),
    /// Log-log slope of `|w_out - z_in|` against `nu` over the upper half of the grid.
    pub w_loglog_slope: f64,
    /// Linear extrapolation of `(iota_out, w_out)` to `nu = 0`.
    pub limit: (f64, f64),
    /// Distance of the extrapolated limit from `(0, z_in(0))`.
    pub limit_error: f64,
    /// Finite-difference tangent `(d iota_out, d w_out) / d nu` at the smallest `nu`.
    pub tangent: (f64, f64),
}

/// Runs [`transit`] over `nu_grid` (in parallel) and fits the constants of the estimates.
pub fn verify_transition_estimates(
    st: &SectionStraightening,
    nu_grid: &[f64],
    curve: InputCurve,
    integrator: &IntegratorConfig,
) -> Result<TransitReport> {
    let delta = st.delta;
    let floor = 1e-6 * delta;
    if nu_grid.len() < 2 || nu_grid.windows(2).any(|w| w[1] <= w[0]) || nu_grid[0] < floor || nu_grid[nu_grid.len() - 1] >= delta {
        return Err(Error::InvalidParameter(format!("nu grid must be increasing within [{floor}, {delta})")));
    }
    let samples = nu_grid
        .par_iter()
        .map(|&nu| transit(nu, curve.z(nu), st, integrator))
        .collect::<Result<Vec<_>>>()?;
    if samples.windows(2).any(|w| w[1].s_min <= w[0].s_min) {
        return Err(Error::Numerical("fit failed: closest approach is not monotone in nu".into()));
    }
    let dw = |r: &TransitResult| wrap_angle(r.w_out - r.z_in).abs();
    let c1 = samples.iter().map(|r| (r.iota_out + r.nu).abs() / (delta * r.nu)).fold(0.0, f64::max);
    let c2 = samples.iter().map(|r| dw(r) / (delta * delta * r.nu + r.nu * r.nu)).fold(0.0, f64::max);

    // Normal equations for |dw| = a (delta^2 nu) + b nu^2.
    let (mut s11, mut s12, mut s22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for r in &samples {
        let (p, q, y) = (delta * delta * r.nu, r.nu * r.nu, dw(r));
        s11 += p * p;
        s12 += p * q;
        s22 += q * q;
        r1 += p * y;
        r2 += q * y;
    }
    let det = s11 * s22 - s12 * s12;
    let c2_lsq = if det.abs() > 0.0 { ((r1 * s22 - r2 * s12) / det, (s11 * r2 - s12 * r1) / det) } else { (f64::NAN, f64::NAN) };

    let upper = &samples[samples.len() / 2..];
    let w_loglog_slope = loglog_slope(upper.iter().map(|r| (r.nu, dw(r))));

    let small = [
        transit(floor, curve.z(floor), st, integrator)?,
        transit(2.0 * floor, curve.z(2.0 * floor), st, integrator)?,
    ];
    let di = (small[1].iota_out - small[0].iota_out) / floor;
    let dwv = wrap_angle(small[1].w_out - small[0].w_out) / floor;
    let limit = (small[0].iota_out - di * floor, small[0].w_out - dwv * floor);
    let limit_error = limit.0.abs().max(wrap_angle(limit.1 - curve.z0).abs());
    Ok(TransitReport {
        delta,
        mu: st.mu,
        h: st.h,
        curve,
        samples,
        c1,
        c2,
        c2_lsq,
        w_loglog_slope,
        limit,
        limit_error,
        tangent: (di, dwv),
    })
}

fn loglog_slope(points: impl Iterator<Item = (f64, f64)>) -> f64 {
    let pts: Vec<(f64, f64)> = points.filter(|p| p.0 > 0.0 && p.1 > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st() -> SectionStraightening {
        SectionStraightening::new(1e-3, 0.0, 0.1)
    }

    #[test]
    fn section_coordinates_round_trip() {
        let st = st();
        for (a, w) in [(0.003, 0.4), (-0.02, -2.0), (0.0, 1.0)] {
            let red = st.plus_state(a, w).unwrap();
            let p = st.plus_coords(&red).unwrap();
            assert!((p.angle - a).abs() < 1e-12 && wrap_angle(p.fiber - w).abs() < 1e-12);
            let red = st.minus_state(a, w).unwrap();
            let m = st.minus_coords(&red).unwrap();
            assert!((m.angle - a).abs() < 1e-12 && wrap_angle(m.fiber - w).abs() < 1e-12);
        }
    }

    #[test]
    fn truncated_straightening_is_close_on_the_manifold() {
        let st = st();
        let red = st.plus_state(0.0, 0.7).unwrap();
        let t = truncated_straighten(&red, Neighborhood::Plus, st.mu);
        // The truncation error is of the order of delta^3.
        assert!(t.angle.abs() < 2.0 * st.delta.powi(3));
        assert!(wrap_angle(t.fiber - 0.7).abs() < 2.0 * st.delta.powi(3));
    }

    #[test]
    fn transit_reverses_the_angle() {
        let st = st();
        let r = transit(1e-3, 0.0, &st, &IntegratorConfig::default()).unwrap();
        assert!((r.iota_out + 1e-3).abs() < 0.1 * 1e-3 * 3.0, "iota_out = {}", r.iota_out);
        assert!(r.w_out.abs() < 5.0 * (0.01 * 1e-3 + 1e-6));
        assert!(r.ordered);
        let s1 = r.s1.unwrap();
        assert!((s1 / 1e-3 - 1.0).abs() < 3.0 * st.delta);
        assert!(r.energy_residual.abs() < 1e-9);
    }

    #[test]
    fn mirrored_transit_exists() {
        let st = st();
        let r = transit(-1e-3, 0.5, &st, &IntegratorConfig::default()).unwrap();
        assert!((r.iota_out - 1e-3).abs() < 0.3 * 1e-3);
    }

    #[test]
    fn zero_nu_is_continuous_extension() {
        let r = transit(0.0, 0.25, &st(), &IntegratorConfig::default()).unwrap();
        assert_eq!((r.iota_out, r.w_out), (0.0, 0.25));
    }

    #[test]
    fn nu_beyond_delta_is_rejected() {
        assert!(transit(0.2, 0.0, &st(), &IntegratorConfig::default()).is_err());
    }
}
