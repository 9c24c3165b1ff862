//! Coordinate systems of the planar circular restricted three-body problem and the
//! exact transforms between them.
//!
//! The primaries sit at `(-mu, 0)` (mass `1 - mu`) and `(1 - mu, 0)` (mass `mu`) in the
//! rotating frame. Angles are never wrapped by the transforms themselves except where an
//! `atan2` produces them; use [`wrap_angle`] at output boundaries.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Chart conversions refuse radii below this value instead of returning infinities.
pub const SINGULAR_RADIUS: f64 = 1e-14;

/// Default tolerance for the energy-consistency check of [`Regularized::to_reduced`].
pub const ENERGY_TOL: f64 = 1e-9;

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

/// Mass parameter of the smaller primary, validated to lie in `[0, 1/2]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct MassRatio(f64);

impl MassRatio {
    /// Validates `mu` and wraps it.
    pub fn new(mu: f64) -> Result<Self> {
        if (0.0..=0.5).contains(&mu) {
            Ok(Self(mu))
        } else {
            Err(Error::InvalidParameter(format!(
                "mass ratio {mu} outside [0, 1/2]"
            )))
        }
    }

    /// The raw value.
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Origin of a polar chart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Center {
    /// Center of mass of the primaries (the rotating-frame origin).
    Cm,
    /// The large primary at `(-mu, 0)`.
    P1,
}

impl Center {
    /// Abscissa of the center in the rotating frame.
    pub fn abscissa(self, mu: f64) -> f64 {
        match self {
            Center::Cm => 0.0,
            Center::P1 => -mu,
        }
    }
}

/// Synodic Cartesian position and conjugate momenta.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cartesian {
    pub q1: f64,
    pub q2: f64,
    pub p1: f64,
    pub p2: f64,
}

/// Synodic polar coordinates: radius, angle, radial momentum `R` and angular momentum `Theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Polar {
    pub center: Center,
    pub r: f64,
    pub theta: f64,
    /// Radial momentum `R`.
    pub pr: f64,
    /// Angular momentum `Theta`.
    pub ptheta: f64,
}

/// McGehee coordinates at infinity, `r_hat = 2 / xi^2`, about the center of mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Infinity {
    pub xi: f64,
    pub theta: f64,
    pub pr: f64,
    pub ptheta: f64,
}

/// Regularized collision coordinates about the large primary:
/// `R = v r^{-1/2} - mu sin(theta)`, `Theta = u r^{1/2} + r^2 - mu r cos(theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularized {
    pub r: f64,
    pub theta: f64,
    pub v: f64,
    pub u: f64,
}

/// Reduced collision coordinates `r = s^2`, `(v, u) = sqrt(2(1-mu)+rho) (sin alpha, cos alpha)`,
/// with `rho` slaved to the energy level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reduced {
    pub s: f64,
    pub theta: f64,
    pub alpha: f64,
    pub rho: f64,
}

/// A phase-space point tagged with its chart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ChartState {
    Cartesian(Cartesian),
    Polar(Polar),
    Infinity(Infinity),
    Regularized(Regularized),
    Reduced(Reduced),
}

fn guard_radius(r: f64, what: &str) -> Result<()> {
    if r.is_finite() && r >= SINGULAR_RADIUS {
        Ok(())
    } else {
        Err(Error::SingularChart(format!("{what}: radius {r:e} below guard")))
    }
}

/// Rotating-frame potential `(1-mu)/d1 + mu/d2` at a Cartesian position.
fn cartesian_potential(q1: f64, q2: f64, mu: f64) -> Result<f64> {
    let d1 = (q1 + mu).hypot(q2);
    let d2 = (q1 - 1.0 + mu).hypot(q2);
    guard_radius(d1, "distance to P1")?;
    if mu > 0.0 {
        guard_radius(d2, "distance to P2")?;
    }
    let jupiter = if mu > 0.0 { mu / d2 } else { 0.0 };
    Ok((1.0 - mu) / d1 + jupiter)
}

impl Cartesian {
    /// Packs the state as `[q1, q2, p1, p2]`.
    pub fn to_array(self) -> [f64; 4] {
        [self.q1, self.q2, self.p1, self.p2]
    }

    /// Unpacks `[q1, q2, p1, p2]`.
    pub fn from_array(a: &[f64]) -> Self {
        Self { q1: a[0], q2: a[1], p1: a[2], p2: a[3] }
    }

    /// Polar coordinates about `center`.
    pub fn to_polar(self, center: Center, mu: f64) -> Result<Polar> {
        let x = self.q1 - center.abscissa(mu);
        let y = self.q2;
        let r = x.hypot(y);
        guard_radius(r, "to_polar")?;
        let (c, s) = (x / r, y / r);
        Ok(Polar {
            center,
            r,
            theta: y.atan2(x),
            pr: self.p1 * c + self.p2 * s,
            ptheta: x * self.p2 - y * self.p1,
        })
    }

    /// Value of the Hamiltonian.
    pub fn hamiltonian(self, mu: f64) -> Result<f64> {
        let kinetic = 0.5 * (self.p1 * self.p1 + self.p2 * self.p2);
        Ok(kinetic - self.q1 * self.p2 + self.q2 * self.p1
            - cartesian_potential(self.q1, self.q2, mu)?)
    }

    /// Reversibility involution `(q1, q2, p1, p2) -> (q1, -q2, -p1, p2)`.
    pub fn reflect(self) -> Self {
        Self { q1: self.q1, q2: -self.q2, p1: -self.p1, p2: self.p2 }
    }
}

/// Translates a polar state to a new origin displaced by `d` along the primaries' axis,
/// so the new position vector is the old one plus `(d, 0)`.
fn translate_polar(p: Polar, d: f64, center: Center) -> Result<Polar> {
    guard_radius(p.r, "translate_polar source")?;
    let (s, c) = p.theta.sin_cos();
    let x = p.r * c + d;
    let y = p.r * s;
    let r = x.hypot(y);
    guard_radius(r, "translate_polar target")?;
    let theta = y.atan2(x);
    // Momenta are invariant under translation; project on the new polar frame.
    let (st, ct) = theta.sin_cos();
    let rr = r * r - 2.0 * d * r * ct + d * d;
    let old_r = rr.sqrt();
    guard_radius(old_r, "translate_polar denominator")?;
    let pr = p.pr * (r - d * ct) / old_r - d * p.ptheta * st / rr;
    let ptheta = d * p.pr * r * st / old_r + p.ptheta * r * (r - d * ct) / rr;
    Ok(Polar { center, r, theta: p.theta + wrap_angle(theta - p.theta), pr, ptheta })
}

impl Polar {
    /// Packs the state as `[r, theta, R, Theta]`.
    pub fn to_array(self) -> [f64; 4] {
        [self.r, self.theta, self.pr, self.ptheta]
    }

    /// Unpacks `[r, theta, R, Theta]` with the given center.
    pub fn from_array(center: Center, a: &[f64]) -> Self {
        Self { center, r: a[0], theta: a[1], pr: a[2], ptheta: a[3] }
    }

    /// Back to synodic Cartesian coordinates.
    pub fn to_cartesian(self, mu: f64) -> Result<Cartesian> {
        guard_radius(self.r, "from_polar")?;
        let (s, c) = self.theta.sin_cos();
        let w = self.ptheta / self.r;
        Ok(Cartesian {
            q1: self.center.abscissa(mu) + self.r * c,
            q2: self.r * s,
            p1: self.pr * c - w * s,
            p2: self.pr * s + w * c,
        })
    }

    /// Re-centers a center-of-mass polar state at the large primary with the explicit
    /// transformation formulas. The angle keeps the branch of the input angle.
    pub fn cm_to_p1(self, mu: f64) -> Result<Polar> {
        if self.center != Center::Cm {
            return Err(Error::Domain("cm_to_p1 expects a center-of-mass state".into()));
        }
        translate_polar(self, mu, Center::P1)
    }

    /// Inverse of [`Polar::cm_to_p1`].
    pub fn p1_to_cm(self, mu: f64) -> Result<Polar> {
        if self.center != Center::P1 {
            return Err(Error::Domain("p1_to_cm expects a P1-centered state".into()));
        }
        translate_polar(self, -mu, Center::Cm)
    }

    /// Re-centers to the requested center.
    pub fn recenter(self, center: Center, mu: f64) -> Result<Polar> {
        match (self.center, center) {
            (a, b) if a == b => Ok(self),
            (Center::Cm, Center::P1) => self.cm_to_p1(mu),
            _ => self.p1_to_cm(mu),
        }
    }

    /// McGehee coordinates at infinity (center-of-mass states only).
    pub fn to_infinity(self) -> Result<Infinity> {
        if self.center != Center::Cm {
            return Err(Error::Domain("infinity chart is centered at the center of mass".into()));
        }
        guard_radius(self.r, "to_infinity")?;
        Ok(Infinity { xi: (2.0 / self.r).sqrt(), theta: self.theta, pr: self.pr, ptheta: self.ptheta })
    }

    /// Regularized collision coordinates (P1-centered states only).
    pub fn to_regularized(self, mu: f64) -> Result<Regularized> {
        if self.center != Center::P1 {
            return Err(Error::Domain("collision chart is centered at P1".into()));
        }
        guard_radius(self.r, "to_regularized")?;
        let (s, c) = self.theta.sin_cos();
        let sr = self.r.sqrt();
        Ok(Regularized {
            r: self.r,
            theta: self.theta,
            v: (self.pr + mu * s) * sr,
            u: (self.ptheta - self.r * self.r + mu * self.r * c) / sr,
        })
    }

    /// Value of the Hamiltonian in the chart's own formula.
    pub fn hamiltonian(self, mu: f64) -> Result<f64> {
        guard_radius(self.r, "polar hamiltonian")?;
        let r = self.r;
        let kinetic = 0.5 * (self.pr * self.pr + self.ptheta * self.ptheta / (r * r));
        let (s, c) = self.theta.sin_cos();
        match self.center {
            Center::Cm => {
                let d1 = (r * r + 2.0 * r * mu * c + mu * mu).sqrt();
                let d2 = (r * r - 2.0 * r * (1.0 - mu) * c + (1.0 - mu) * (1.0 - mu)).sqrt();
                guard_radius(d1, "distance to P1")?;
                let jupiter = if mu > 0.0 {
                    guard_radius(d2, "distance to P2")?;
                    mu / d2
                } else {
                    0.0
                };
                Ok(kinetic - self.ptheta - (1.0 - mu) / d1 - jupiter)
            }
            Center::P1 => {
                let d = (1.0 + r * r - 2.0 * r * c).sqrt();
                let jupiter = if mu > 0.0 {
                    guard_radius(d, "distance to P2")?;
                    1.0 / d
                } else {
                    0.0
                };
                let v = -mu * (1.0 / r + self.pr * s + self.ptheta * c / r - jupiter);
                Ok(kinetic - 1.0 / r - self.ptheta - v)
            }
        }
    }

    /// Reversibility involution `(r, theta, R, Theta) -> (r, -theta, -R, Theta)`.
    pub fn reflect(self) -> Self {
        Self { theta: -self.theta, pr: -self.pr, ..self }
    }
}

/// Correction `V_hat(xi, theta)` of the potential at infinity beyond the Kepler term.
pub fn infinity_potential(xi: f64, theta: f64, mu: f64) -> f64 {
    let (a, b) = infinity_radicands(xi, theta, mu);
    0.5 * xi * xi * ((1.0 - mu) / a.sqrt() + mu / b.sqrt() - 1.0)
}

/// The two radicands `A, B` of the infinity-chart potential.
pub(crate) fn infinity_radicands(xi: f64, theta: f64, mu: f64) -> (f64, f64) {
    let x2 = xi * xi;
    let x4 = x2 * x2;
    let c = theta.cos();
    let a = 1.0 + x2 * mu * c + 0.25 * x4 * mu * mu;
    let b = 1.0 - x2 * (1.0 - mu) * c + 0.25 * x4 * (1.0 - mu) * (1.0 - mu);
    (a, b)
}

impl Infinity {
    /// Packs the state as `[xi, theta, R, Theta]`.
    pub fn to_array(self) -> [f64; 4] {
        [self.xi, self.theta, self.pr, self.ptheta]
    }

    /// Unpacks `[xi, theta, R, Theta]`.
    pub fn from_array(a: &[f64]) -> Self {
        Self { xi: a[0], theta: a[1], pr: a[2], ptheta: a[3] }
    }

    /// Back to center-of-mass polar coordinates (`xi = 0` is infinity and is refused).
    pub fn to_polar(self) -> Result<Polar> {
        guard_radius(self.xi, "infinity to polar")?;
        Ok(Polar {
            center: Center::Cm,
            r: 2.0 / (self.xi * self.xi),
            theta: self.theta,
            pr: self.pr,
            ptheta: self.ptheta,
        })
    }

    /// First integral `H_hat`, finite at `xi = 0`.
    pub fn hamiltonian(self, mu: f64) -> f64 {
        let x2 = self.xi * self.xi;
        0.5 * (self.pr * self.pr + self.ptheta * self.ptheta * x2 * x2 / 4.0)
            - 0.5 * x2
            - self.ptheta
            - infinity_potential(self.xi, self.theta, mu)
    }

    /// Reversibility involution.
    pub fn reflect(self) -> Self {
        Self { theta: -self.theta, pr: -self.pr, ..self }
    }
}

/// Energy-slaved `rho(s, theta; mu, h)` of the reduced collision chart.
pub fn rho_energy(s: f64, theta: f64, mu: f64, h: f64) -> f64 {
    let s2 = s * s;
    let s4 = s2 * s2;
    let c = theta.cos();
    let bracket = if mu > 0.0 {
        -0.5 * mu + s2 * c - 1.0 / (1.0 + s4 - 2.0 * s2 * c).sqrt()
    } else {
        0.0
    };
    2.0 * s2 * h + s4 * s2 - 2.0 * mu * s2 * bracket
}

/// Regularized energy relation `M_tilde = r (H - h)`, finite at `r = 0`.
pub fn m_tilde(reg: Regularized, mu: f64, h: f64) -> f64 {
    let r = reg.r;
    let c = reg.theta.cos();
    let bracket = if mu > 0.0 {
        -0.5 * mu + r * c - 1.0 / (1.0 + r * r - 2.0 * r * c).sqrt()
    } else {
        0.0
    };
    -r * h + 0.5 * (reg.v * reg.v + reg.u * reg.u) - 0.5 * r * r * r - 1.0 + mu + mu * r * bracket
}

/// Reduced energy relation `M(s, theta, rho; mu, h)`; zero on the energy level.
pub fn m_reduced(red: Reduced, mu: f64, h: f64) -> f64 {
    0.5 * (red.rho - rho_energy(red.s, red.theta, mu, h))
}

impl Regularized {
    /// Packs the state as `[r, theta, v, u]`.
    pub fn to_array(self) -> [f64; 4] {
        [self.r, self.theta, self.v, self.u]
    }

    /// Unpacks `[r, theta, v, u]`.
    pub fn from_array(a: &[f64]) -> Self {
        Self { r: a[0], theta: a[1], v: a[2], u: a[3] }
    }

    /// Back to P1-centered polar coordinates.
    pub fn to_polar(self, mu: f64) -> Result<Polar> {
        guard_radius(self.r, "regularized to polar")?;
        let (s, c) = self.theta.sin_cos();
        let sr = self.r.sqrt();
        Ok(Polar {
            center: Center::P1,
            r: self.r,
            theta: self.theta,
            pr: self.v / sr - mu * s,
            ptheta: self.u * sr + self.r * self.r - mu * self.r * c,
        })
    }

    /// Reduced coordinates, checking that the state lies on the energy level `h`
    /// to within `tol` in `rho`.
    pub fn to_reduced(self, mu: f64, h: f64, tol: f64) -> Result<Reduced> {
        if self.r < 0.0 {
            return Err(Error::Domain("negative radius".into()));
        }
        let m2 = self.v * self.v + self.u * self.u;
        if m2 <= 0.0 {
            return Err(Error::SingularChart("v = u = 0 has no angle alpha".into()));
        }
        let s = self.r.sqrt();
        let rho = m2 - 2.0 * (1.0 - mu);
        let residual = (rho - rho_energy(s, self.theta, mu, h)).abs();
        if residual > tol {
            return Err(Error::EnergyMismatch { residual, tol });
        }
        Ok(Reduced { s, theta: self.theta, alpha: self.v.atan2(self.u), rho })
    }

    /// Regularized energy relation at this state.
    pub fn m_tilde(self, mu: f64, h: f64) -> f64 {
        m_tilde(self, mu, h)
    }

    /// Reversibility involution `(r, theta, v, u) -> (r, -theta, -v, u)`.
    pub fn reflect(self) -> Self {
        Self { theta: -self.theta, v: -self.v, ..self }
    }
}

impl Reduced {
    /// Builds an on-shell reduced state with `rho` taken from the energy relation.
    pub fn on_shell(s: f64, theta: f64, alpha: f64, mu: f64, h: f64) -> Result<Self> {
        if s < 0.0 {
            return Err(Error::Domain("negative s".into()));
        }
        let rho = rho_energy(s, theta, mu, h);
        if 2.0 * (1.0 - mu) + rho <= 0.0 {
            return Err(Error::Domain("energy level not accessible at this (s, theta)".into()));
        }
        Ok(Self { s, theta, alpha, rho })
    }

    /// Packs `[s, theta, alpha]`; `rho` is slaved to the energy level.
    pub fn to_array(self) -> [f64; 3] {
        [self.s, self.theta, self.alpha]
    }

    /// Regularized coordinates using the stored `rho`.
    pub fn to_regularized(self, mu: f64) -> Result<Regularized> {
        if self.s < 0.0 {
            return Err(Error::Domain("negative s".into()));
        }
        let m2 = 2.0 * (1.0 - mu) + self.rho;
        if m2 <= 0.0 {
            return Err(Error::Domain("2(1-mu) + rho must be positive".into()));
        }
        let m = m2.sqrt();
        let (sa, ca) = self.alpha.sin_cos();
        Ok(Regularized { r: self.s * self.s, theta: self.theta, v: m * sa, u: m * ca })
    }

    /// Reversibility involution `(s, theta, alpha) -> (s, -theta, -alpha)`.
    pub fn reflect(self) -> Self {
        Self { theta: -self.theta, alpha: -self.alpha, ..self }
    }
}

impl ChartState {
    /// Value of the Hamiltonian, computed through a nonsingular chart when needed.
    pub fn hamiltonian(self, mu: f64) -> Result<f64> {
        match self {
            ChartState::Cartesian(c) => c.hamiltonian(mu),
            ChartState::Polar(p) => p.hamiltonian(mu),
            ChartState::Infinity(i) => Ok(i.hamiltonian(mu)),
            ChartState::Regularized(g) => g.to_polar(mu)?.hamiltonian(mu),
            ChartState::Reduced(d) => d.to_regularized(mu)?.to_polar(mu)?.hamiltonian(mu),
        }
    }

    /// Synodic Cartesian coordinates of the same physical point.
    pub fn to_cartesian(self, mu: f64) -> Result<Cartesian> {
        match self {
            ChartState::Cartesian(c) => Ok(c),
            ChartState::Polar(p) => p.to_cartesian(mu),
            ChartState::Infinity(i) => i.to_polar()?.to_cartesian(mu),
            ChartState::Regularized(g) => g.to_polar(mu)?.to_cartesian(mu),
            ChartState::Reduced(d) => d.to_regularized(mu)?.to_polar(mu)?.to_cartesian(mu),
        }
    }

    /// Polar coordinates about `center`.
    pub fn to_polar(self, center: Center, mu: f64) -> Result<Polar> {
        match self {
            ChartState::Cartesian(c) => c.to_polar(center, mu),
            ChartState::Polar(p) => p.recenter(center, mu),
            ChartState::Infinity(i) => i.to_polar()?.recenter(center, mu),
            ChartState::Regularized(g) => g.to_polar(mu)?.recenter(center, mu),
            ChartState::Reduced(d) => d.to_regularized(mu)?.to_polar(mu)?.recenter(center, mu),
        }
    }

    /// Reversibility involution applied in the state's own chart.
    pub fn reflect(self) -> Self {
        match self {
            ChartState::Cartesian(c) => ChartState::Cartesian(c.reflect()),
            ChartState::Polar(p) => ChartState::Polar(p.reflect()),
            ChartState::Infinity(i) => ChartState::Infinity(i.reflect()),
            ChartState::Regularized(g) => ChartState::Regularized(g.reflect()),
            ChartState::Reduced(d) => ChartState::Reduced(d.reflect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kappa() -> f64 {
        4.5f64.cbrt()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn axis_point_to_polar_cm() {
        let c = Cartesian { q1: 1.0, q2: 0.0, p1: 0.0, p2: 1.0 };
        let p = c.to_polar(Center::Cm, 0.0).unwrap();
        assert_eq!((p.r, p.theta, p.pr, p.ptheta), (1.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn axis_point_to_polar_p1() {
        let mu = 0.01;
        let c = Cartesian { q1: -mu + 0.5, q2: 0.0, p1: 0.0, p2: 0.0 };
        let p = c.to_polar(Center::P1, mu).unwrap();
        assert!(close(p.r, 0.5, 1e-15));
        assert_eq!((p.theta, p.pr, p.ptheta), (0.0, 0.0, 0.0));
    }

    #[test]
    fn polar_at_center_is_singular() {
        let c = Cartesian { q1: -0.1, q2: 0.0, p1: 1.0, p2: 0.0 };
        assert!(matches!(c.to_polar(Center::P1, 0.1), Err(Error::SingularChart(_))));
    }

    #[test]
    fn cm_to_p1_identity_at_zero_mu() {
        let p = Polar { center: Center::Cm, r: 0.7, theta: 1.3, pr: -0.2, ptheta: 0.4 };
        let q = p.cm_to_p1(0.0).unwrap();
        for (a, b) in q.to_array().iter().zip(p.to_array()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn cm_to_p1_collinear() {
        let p = Polar { center: Center::Cm, r: 2.0, theta: 0.0, pr: 0.3, ptheta: 0.5 };
        let q = p.cm_to_p1(0.1).unwrap();
        assert!(close(q.r, 2.1, 1e-15));
        assert_eq!(q.theta, 0.0);
    }

    #[test]
    fn infinity_examples() {
        let p = |r| Polar { center: Center::Cm, r, theta: 0.0, pr: 0.0, ptheta: 0.0 };
        assert!(close(p(2.0).to_infinity().unwrap().xi, 1.0, 1e-15));
        assert!(close(p(200.0).to_infinity().unwrap().xi, 0.1, 1e-15));
    }

    #[test]
    fn reduced_of_ejection_point() {
        let k = kappa();
        let reg = Regularized { r: k, theta: 0.3, v: 2f64.sqrt(), u: -k.powf(1.5) };
        let red = reg.to_reduced(0.0, 0.0, 1e-12).unwrap();
        assert!(close(red.s, k.sqrt(), 1e-15));
        assert!(close(red.rho, k.powi(3), 1e-14));
        assert!(close(red.rho, rho_energy(red.s, red.theta, 0.0, 0.0), 1e-14));
    }

    #[test]
    fn reduced_at_collision() {
        let reg = Regularized { r: 0.0, theta: 1.0, v: 1.0, u: 1.0 };
        let red = reg.to_reduced(0.0, 0.0, 1e-12).unwrap();
        assert_eq!(red.rho, 0.0);
        assert!(matches!(
            Regularized { v: 2.0, ..reg }.to_reduced(0.0, 0.0, 1e-12),
            Err(Error::EnergyMismatch { .. })
        ));
    }

    #[test]
    fn parabolic_point_has_zero_energy() {
        let k = kappa();
        let p = Polar { center: Center::P1, r: k, theta: 0.7, pr: (2.0 / k).sqrt(), ptheta: 0.0 };
        assert!(p.hamiltonian(0.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn circular_orbit_energy() {
        // Kepler energy -1/2 minus the rotating-frame term Theta = 1.
        let p = Polar { center: Center::Cm, r: 1.0, theta: 0.2, pr: 0.0, ptheta: 1.0 };
        assert!(close(p.hamiltonian(0.0).unwrap(), -1.5, 1e-15));
    }

    #[test]
    fn infinity_hamiltonian_on_periodic_orbit() {
        let i = Infinity { xi: 0.0, theta: 0.4, pr: 0.0, ptheta: 0.37 };
        assert_eq!(i.hamiltonian(0.01), -0.37);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!(close(wrap_angle(-PI), PI, 1e-15));
        assert!(close(wrap_angle(7.0), 7.0 - 2.0 * PI, 1e-15));
    }

    fn state_strategy() -> impl Strategy<Value = (f64, f64, f64, f64, f64)> {
        (0.0..0.5f64, 0.05..5.0f64, -PI..PI, -3.0..3.0f64, -3.0..3.0f64)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn polar_round_trip((mu, r, th, pr, pt) in state_strategy()) {
            for center in [Center::Cm, Center::P1] {
                let p = Polar { center, r, theta: th, pr, ptheta: pt };
                let back = p.to_cartesian(mu).unwrap().to_polar(center, mu).unwrap();
                prop_assert!(close(back.r, r, 1e-12));
                prop_assert!((wrap_angle(back.theta - th)).abs() < 1e-12);
                prop_assert!(close(back.pr, pr, 1e-12));
                prop_assert!(close(back.ptheta, pt, 1e-12));
            }
        }

        #[test]
        fn cm_to_p1_matches_cartesian_route((mu, r, th, pr, pt) in state_strategy()) {
            let p = Polar { center: Center::Cm, r, theta: th, pr, ptheta: pt };
            let d = mu + r;
            prop_assume!(r * r + 2.0 * r * mu * th.cos() + mu * mu > 1e-6 * d * d);
            let direct = p.cm_to_p1(mu).unwrap();
            let via = p.to_cartesian(mu).unwrap().to_polar(Center::P1, mu).unwrap();
            prop_assert!(close(direct.r, via.r, 1e-12));
            prop_assert!(wrap_angle(direct.theta - via.theta).abs() < 1e-12);
            prop_assert!(close(direct.pr, via.pr, 1e-11));
            prop_assert!(close(direct.ptheta, via.ptheta, 1e-11));
            let back = direct.p1_to_cm(mu).unwrap();
            prop_assert!(close(back.r, r, 1e-12) && close(back.pr, pr, 1e-11) && close(back.ptheta, pt, 1e-11));
        }

        #[test]
        fn infinity_round_trip((_mu, r, th, pr, pt) in state_strategy()) {
            let p = Polar { center: Center::Cm, r, theta: th, pr, ptheta: pt };
            let back = p.to_infinity().unwrap().to_polar().unwrap();
            prop_assert!(close(back.r, r, 1e-14));
        }

        #[test]
        fn regularized_and_reduced_round_trip((mu, r, th, pr, pt) in state_strategy(), h in -1.0..1.0f64) {
            let p = Polar { center: Center::P1, r, theta: th, pr, ptheta: pt };
            let g = p.to_regularized(mu).unwrap();
            let back = g.to_polar(mu).unwrap();
            prop_assert!(close(back.pr, pr, 1e-12) && close(back.ptheta, pt, 1e-12));
            // Put the state on its own energy level and round-trip through the reduced chart.
            let energy = p.hamiltonian(mu);
            prop_assume!(energy.is_ok());
            let e = energy.unwrap();
            let red = g.to_reduced(mu, e, 1e-9).unwrap();
            prop_assert!(m_reduced(red, mu, e).abs() < 1e-9);
            let g2 = red.to_regularized(mu).unwrap();
            prop_assert!(close(g2.v, g.v, 1e-12) && close(g2.u, g.u, 1e-12));
            let _ = h;
        }

        #[test]
        fn hamiltonian_is_chart_independent((mu, r, th, pr, pt) in state_strategy()) {
            let p = Polar { center: Center::P1, r, theta: th, pr, ptheta: pt };
            let Ok(h1) = p.hamiltonian(mu) else { return Ok(()); };
            let cart = p.to_cartesian(mu).unwrap();
            let h2 = cart.hamiltonian(mu).unwrap();
            let cm = p.p1_to_cm(mu).unwrap();
            let h3 = cm.hamiltonian(mu).unwrap();
            let h4 = cm.to_infinity().unwrap().hamiltonian(mu);
            let g = p.to_regularized(mu).unwrap();
            let scale = 1.0 + h1.abs() + 1.0 / r + pt.abs() / r;
            prop_assert!((h1 - h2).abs() < 1e-12 * scale * 10.0);
            prop_assert!((h1 - h3).abs() < 1e-12 * scale * 10.0);
            prop_assert!((h1 - h4).abs() < 1e-12 * scale * 10.0);
            // The regularized relation is r (H - h).
            prop_assert!((m_tilde(g, mu, 0.3) - r * (h1 - 0.3)).abs() < 1e-11 * scale * (1.0 + r));
        }

        #[test]
        fn reflection_commutes_with_transforms((mu, r, th, pr, pt) in state_strategy()) {
            let p = Polar { center: Center::P1, r, theta: th, pr, ptheta: pt };
            let a = p.reflect().to_regularized(mu).unwrap();
            let b = p.to_regularized(mu).unwrap().reflect();
            prop_assert!(close(a.v, b.v, 1e-13) && close(a.u, b.u, 1e-13));
            let c1 = p.reflect().to_cartesian(mu).unwrap();
            let c2 = p.to_cartesian(mu).unwrap().reflect();
            prop_assert!(close(c1.q2, c2.q2, 1e-13) && close(c1.p1, c2.p1, 1e-13));
            prop_assume!(r * r - 2.0 * r * mu * th.cos() + mu * mu > 1e-6);
            let d1 = p.reflect().p1_to_cm(mu).unwrap();
            let d2 = p.p1_to_cm(mu).unwrap().reflect();
            prop_assert!(close(d1.pr, d2.pr, 1e-12) && close(d1.ptheta, d2.ptheta, 1e-12));
            prop_assert!(wrap_angle(d1.theta - d2.theta).abs() < 1e-12);
        }
    }
}
