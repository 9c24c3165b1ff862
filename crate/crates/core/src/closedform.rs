//! Exact solutions at `mu = 0` and on the collision manifold, used as oracles.

use crate::charts::{Center, Polar, Reduced, Regularized};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

/// Scale `kappa = 3^{2/3} / 2^{1/3} = (9/2)^{1/3}` of the parabolic family `r = kappa t^{2/3}`.
pub fn kappa() -> f64 {
    4.5f64.cbrt()
}

/// Normal hyperbolicity rate scale `m0 = sqrt(2 (1 - mu))` of the circles `S+-`.
pub fn m0(mu: f64) -> f64 {
    (2.0 * (1.0 - mu)).sqrt()
}

/// Physical time for the `mu = 0` parabolic orbit to travel from the primary to radius `r_star`.
pub fn time_to_radius(r_star: f64) -> f64 {
    (r_star / kappa()).powf(1.5)
}

/// Phase shift `w_Sigma = (sqrt 2 / 3) delta^3` between the section `r = delta^2` and collision.
pub fn w_sigma(delta: f64) -> f64 {
    SQRT_2 / 3.0 * delta.powi(3)
}

/// Branch of the zero-angular-momentum parabolic family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParabolicSign {
    /// Ejection branch, defined for `t > 0`, with `R > 0`.
    Plus,
    /// Collision branch, defined for `t < 0`, with `R < 0`.
    Minus,
}

/// Parabolic orbit `(kappa t^{2/3}, theta_bar - t, +-sqrt(2/kappa) |t|^{-1/3}, 0)`, centered at P1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParabolicOrbit {
    pub sign: ParabolicSign,
    pub theta_bar: f64,
}

impl ParabolicOrbit {
    /// Evaluates the orbit at time `t` on its half-line.
    pub fn eval(&self, t: f64) -> Result<Polar> {
        let s = match self.sign {
            ParabolicSign::Plus => 1.0,
            ParabolicSign::Minus => -1.0,
        };
        if s * t <= 0.0 {
            return Err(Error::Domain(format!("t = {t} outside the orbit's half-line")));
        }
        let k = kappa();
        let at = t.abs();
        Ok(Polar {
            center: Center::P1,
            r: k * at.powf(2.0 / 3.0),
            theta: self.theta_bar - t,
            pr: s * (2.0 / k).sqrt() * at.powf(-1.0 / 3.0),
            ptheta: 0.0,
        })
    }
}

/// Heteroclinic connection inside the collision manifold from `S-` to `S+`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionHeteroclinic {
    pub theta_bar: f64,
}

impl CollisionHeteroclinic {
    /// Evaluates `alpha_h = 2 atan(tanh(m0 tau / 4))`, `theta_h = theta_bar + pi + 2 alpha_h` at `s = 0`.
    pub fn eval(&self, tau: f64, mu: f64) -> Reduced {
        let alpha = 2.0 * (m0(mu) * tau / 4.0).tanh().atan();
        Reduced { s: 0.0, theta: self.theta_bar + PI + 2.0 * alpha, alpha, rho: 0.0 }
    }
}

/// Ejection orbit of `mu = 0` in regularized coordinates, leaving `S+` at angle `theta_bar`.
pub fn regularized_ejection(theta_bar: f64, tau: f64) -> Regularized {
    let k = kappa();
    let e = (1.5 * SQRT_2 * tau).exp();
    Regularized {
        r: k * (SQRT_2 * tau).exp(),
        theta: theta_bar - e,
        v: SQRT_2,
        u: -k.powf(1.5) * e,
    }
}

/// Physical time elapsed along [`regularized_ejection`] since collision, `t = e^{3 tau / sqrt 2}`.
pub fn regularized_ejection_time(tau: f64) -> f64 {
    (1.5 * SQRT_2 * tau).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charts::m_tilde;

    #[test]
    fn kappa_value() {
        assert!((kappa() - 1.650_963_6).abs() < 1e-7);
        assert!((kappa().powf(1.5) - 3.0 / SQRT_2).abs() < 1e-14);
        assert!((3.0 / (kappa() * kappa()) - (2.0 / kappa()).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn parabolic_at_unit_time() {
        let p = ParabolicOrbit { sign: ParabolicSign::Plus, theta_bar: 0.0 }.eval(1.0).unwrap();
        assert!((p.r - 1.650_963_6).abs() < 1e-7);
        assert_eq!(p.theta, -1.0);
        assert!((p.pr - 1.100_642_4).abs() < 1e-7);
        assert_eq!(p.ptheta, 0.0);
        assert!(ParabolicOrbit { sign: ParabolicSign::Plus, theta_bar: 0.0 }.eval(-1.0).is_err());
    }

    #[test]
    fn parabolic_energy_and_v_constancy() {
        let orbit = ParabolicOrbit { sign: ParabolicSign::Plus, theta_bar: 0.4 };
        for i in 1..=1000 {
            let t = i as f64 * 0.013;
            let p = orbit.eval(t).unwrap();
            assert!(p.hamiltonian(0.0).unwrap().abs() < 1e-13);
            assert!((p.pr * p.r.sqrt() - SQRT_2).abs() < 1e-13);
        }
    }

    #[test]
    fn section_time() {
        assert!((time_to_radius(0.04) - 0.003_771_236_166_328_254).abs() < 1e-15);
        assert!((time_to_radius(0.04) - w_sigma(0.2)).abs() < 1e-16);
    }

    #[test]
    fn heteroclinic_limits() {
        let h = CollisionHeteroclinic { theta_bar: 0.3 };
        let p = h.eval(0.0, 0.0);
        assert_eq!(p.alpha, 0.0);
        assert!((p.theta - (0.3 + PI)).abs() < 1e-15);
        assert!((h.eval(50.0, 0.0).alpha - PI / 2.0).abs() < 1e-10);
        assert!((h.eval(-50.0, 0.0).alpha + PI / 2.0).abs() < 1e-10);
    }

    #[test]
    fn heteroclinic_solves_torus_ode() {
        let mu = 0.01;
        let m = m0(mu);
        let h = CollisionHeteroclinic { theta_bar: -1.0 };
        let eps = 1e-4;
        for i in -20..=20 {
            let tau = i as f64 * 0.5;
            let p = h.eval(tau, mu);
            // Exact derivative of alpha_h: (m0/2) sech^2(x)/(1+tanh^2 x) with x = m0 tau / 4.
            let x = m * tau / 4.0;
            let sech2 = 1.0 / x.cosh().powi(2);
            let dalpha = 0.5 * m * sech2 / (1.0 + x.tanh().powi(2));
            assert!((dalpha - 0.5 * m * p.alpha.cos()).abs() < 1e-15);
            let fd = (h.eval(tau + eps, mu).alpha - h.eval(tau - eps, mu).alpha) / (2.0 * eps);
            assert!((fd - 0.5 * m * p.alpha.cos()).abs() < 1e-8);
        }
    }

    #[test]
    fn regularized_ejection_limits() {
        let p = regularized_ejection(0.7, -30.0);
        assert!(p.r.abs() < 1e-12 && (p.theta - 0.7).abs() < 1e-12 && p.u.abs() < 1e-12);
        let q = regularized_ejection(0.7, 0.0);
        assert_eq!(q.r, kappa());
        assert!((q.u + kappa().powf(1.5)).abs() < 1e-15);
    }

    #[test]
    fn regularized_ejection_on_shell_and_on_parabola() {
        let orbit = ParabolicOrbit { sign: ParabolicSign::Plus, theta_bar: 0.7 };
        for i in 0..10 {
            let tau = -5.0 + 0.5 * i as f64;
            let g = regularized_ejection(0.7, tau);
            assert!(m_tilde(g, 0.0, 0.0).abs() < 1e-12);
            // Time change by Simpson quadrature of r^{3/2} from -40.
            let n = 20000;
            let a = -40.0;
            let hstep = (tau - a) / n as f64;
            let f = |x: f64| regularized_ejection(0.7, x).r.powf(1.5);
            let mut acc = f(a) + f(tau);
            for j in 1..n {
                acc += if j % 2 == 1 { 4.0 } else { 2.0 } * f(a + j as f64 * hstep);
            }
            let t = acc * hstep / 3.0;
            assert!((t - regularized_ejection_time(tau)).abs() < 1e-10 * (1.0 + t));
            let polar = g.to_polar(0.0).unwrap();
            let exact = orbit.eval(t).unwrap();
            assert!((polar.r - exact.r).abs() < 1e-10);
            assert!((polar.theta - exact.theta).abs() < 1e-10);
            assert!((polar.pr - exact.pr).abs() < 1e-10 * exact.pr);
            assert!(polar.ptheta.abs() < 1e-10);
        }
    }
}
