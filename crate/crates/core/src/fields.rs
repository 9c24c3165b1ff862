//! Right-hand sides of every differential system used by the crate, their first integrals,
//! and finite-difference cross-chart consistency checks.

use crate::charts::{
    infinity_radicands, m_tilde, rho_energy, Center, Infinity, Polar, Reduced,
    Regularized, ENERGY_TOL,
};
use crate::closedform::m0;
use crate::error::{Error, Result};
use crate::flow::VectorField;
use serde::{Deserialize, Serialize};

/// Polar charts refuse radii below this value; the regularized charts take over there.
pub const POLAR_MIN_RADIUS: f64 = 1e-6;

/// Identifier of a vector field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FieldId {
    /// Synodic Cartesian `(q1, q2, p1, p2)`, time `t`.
    Cartesian,
    /// Polar about the center of mass `(r, theta, R, Theta)`, time `t`.
    PolarCm,
    /// Polar about the large primary `(r, theta, R, Theta)`, time `t`.
    PolarP1,
    /// McGehee chart at infinity `(xi, theta, R, Theta)`, time `t`.
    Infinity,
    /// Regularized collision chart `(r, theta, v, u)`, time `tau`.
    Regularized,
    /// Reduced collision chart `(s, theta, alpha)`, time `tau`, energy-slaved `rho`.
    Reduced,
    /// Flow on the collision torus `(theta, alpha)`, time `tau`.
    CollisionTorus,
    /// Leading-order straightened flow near `S-`, `(s, beta_tilde, z)`, time `tau`.
    StraightenedMinus,
    /// Leading-order straightened flow near `S+`, `(s, iota_tilde, w)`, time `tau`.
    StraightenedPlus,
}

impl FieldId {
    /// Phase-space dimension of the chart.
    pub fn dim(self) -> usize {
        match self {
            FieldId::Reduced | FieldId::StraightenedMinus | FieldId::StraightenedPlus => 3,
            FieldId::CollisionTorus => 2,
            _ => 4,
        }
    }

    /// Whether the field is written in the regularized time `tau` with `dt = r^{3/2} d tau`.
    pub fn uses_tau(self) -> bool {
        !matches!(self, FieldId::Cartesian | FieldId::PolarCm | FieldId::PolarP1 | FieldId::Infinity)
    }

    /// Whether the field needs the energy level `h`.
    pub fn needs_energy(self) -> bool {
        matches!(self, FieldId::Reduced | FieldId::StraightenedMinus | FieldId::StraightenedPlus)
    }
}

/// First integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FirstIntegral {
    /// The Hamiltonian in the Cartesian, polar or infinity charts.
    HHat,
    /// Regularized energy relation `M_tilde = r (H - h)`.
    MTilde,
    /// Reduced energy relation `M(s, theta, rho)`.
    M,
}

/// `lambda(mu, h) = (mu^2 + 2h + 2mu) / (4 m0)` of the straightened normal forms.
pub fn lambda(mu: f64, h: f64) -> f64 {
    (mu * mu + 2.0 * h + 2.0 * mu) / (4.0 * m0(mu))
}

/// A vector field bound to its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub id: FieldId,
    pub mu: f64,
    /// Energy level, used by the energy-slaved charts and by `M_tilde`.
    pub h: f64,
}

impl Field {
    /// Binds `id` to `(mu, h)`.
    pub fn new(id: FieldId, mu: f64, h: f64) -> Self {
        Self { id, mu, h }
    }

    /// Rate `dt / d(own time)`: one for `t`-charts, `r^{3/2}` for `tau`-charts.
    pub fn time_rate(&self, y: &[f64]) -> f64 {
        match self.id {
            FieldId::Regularized => y[0].max(0.0).powf(1.5),
            FieldId::Reduced | FieldId::StraightenedMinus | FieldId::StraightenedPlus => {
                y[0].powi(3).abs()
            }
            FieldId::CollisionTorus => 0.0,
            _ => 1.0,
        }
    }

    /// Radius from the relevant center in the chart's own coordinates.
    pub fn radius(&self, y: &[f64]) -> f64 {
        match self.id {
            FieldId::Cartesian => (y[0] + self.mu).hypot(y[1]),
            FieldId::Infinity => 2.0 / (y[0] * y[0]),
            FieldId::Reduced | FieldId::StraightenedMinus | FieldId::StraightenedPlus => y[0] * y[0],
            FieldId::CollisionTorus => 0.0,
            _ => y[0],
        }
    }

    /// Evaluates the field with domain checks.
    pub fn eval_checked(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.id.dim() {
            return Err(Error::Domain(format!(
                "{:?} expects {} components, got {}",
                self.id,
                self.id.dim(),
                y.len()
            )));
        }
        if !self.in_domain(y) {
            return Err(Error::SingularChart(format!("{:?} state outside its domain", self.id)));
        }
        let mut dy = vec![0.0; y.len()];
        self.eval(0.0, y, &mut dy);
        if dy.iter().all(|x| x.is_finite()) {
            Ok(dy)
        } else {
            Err(Error::SingularChart(format!("{:?} field not finite at state", self.id)))
        }
    }

    /// Value of the chart's first integral, if it has a nontrivial one.
    pub fn integral(&self, y: &[f64]) -> Option<f64> {
        let mu = self.mu;
        match self.id {
            FieldId::Cartesian => crate::charts::Cartesian::from_array(y).hamiltonian(mu).ok(),
            FieldId::PolarCm => Polar::from_array(Center::Cm, y).hamiltonian(mu).ok(),
            FieldId::PolarP1 => Polar::from_array(Center::P1, y).hamiltonian(mu).ok(),
            FieldId::Infinity => Some(Infinity::from_array(y).hamiltonian(mu)),
            FieldId::Regularized => Some(m_tilde(Regularized::from_array(y), mu, self.h)),
            _ => None,
        }
    }
}

/// Evaluates field `id` at `state`.
pub fn eval_field(id: FieldId, state: &[f64], mu: f64, h: f64) -> Result<Vec<f64>> {
    Field::new(id, mu, h).eval_checked(state)
}

/// Evaluates a first integral at a state of the matching chart.
pub fn eval_integral(id: FirstIntegral, field: FieldId, state: &[f64], mu: f64, h: f64) -> Result<f64> {
    match (id, field) {
        (FirstIntegral::HHat, FieldId::Cartesian | FieldId::PolarCm | FieldId::PolarP1 | FieldId::Infinity)
        | (FirstIntegral::MTilde, FieldId::Regularized) => Field::new(field, mu, h)
            .integral(state)
            .ok_or_else(|| Error::SingularChart("integral undefined at state".into())),
        (FirstIntegral::M, FieldId::Reduced) => {
            // The reduced chart slaves rho to the energy; M is the residual of a stored rho.
            if state.len() == 4 {
                Ok(crate::charts::m_reduced(
                    Reduced { s: state[0], theta: state[1], alpha: state[2], rho: state[3] },
                    mu,
                    h,
                ))
            } else {
                Ok(0.0)
            }
        }
        _ => Err(Error::Domain(format!("{id:?} is not an integral of {field:?}"))),
    }
}

fn cartesian_rhs(y: &[f64], mu: f64, dy: &mut [f64]) {
    let (q1, q2, p1, p2) = (y[0], y[1], y[2], y[3]);
    let x1 = q1 + mu;
    let r1sq = x1 * x1 + q2 * q2;
    let a1 = (1.0 - mu) / (r1sq * r1sq.sqrt());
    let (mut ax, mut ay) = (-a1 * x1, -a1 * q2);
    if mu > 0.0 {
        let x2 = q1 - 1.0 + mu;
        let r2sq = x2 * x2 + q2 * q2;
        let a2 = mu / (r2sq * r2sq.sqrt());
        ax -= a2 * x2;
        ay -= a2 * q2;
    }
    dy[0] = p1 + q2;
    dy[1] = p2 - q1;
    dy[2] = p2 + ax;
    dy[3] = -p1 + ay;
}

fn polar_cm_rhs(y: &[f64], mu: f64, dy: &mut [f64]) {
    let (r, th, pr, pt) = (y[0], y[1], y[2], y[3]);
    let (s, c) = th.sin_cos();
    let d1sq = r * r + 2.0 * r * mu * c + mu * mu;
    let d1c = d1sq * d1sq.sqrt();
    let mut dudr = -(1.0 - mu) * (r + mu * c) / d1c;
    let mut dudth = 0.0;
    if mu > 0.0 {
        let d2sq = r * r - 2.0 * r * (1.0 - mu) * c + (1.0 - mu) * (1.0 - mu);
        let d2c = d2sq * d2sq.sqrt();
        dudr -= mu * (r - (1.0 - mu) * c) / d2c;
        dudth = mu * (1.0 - mu) * r * s * (1.0 / d1c - 1.0 / d2c);
    }
    dy[0] = pr;
    dy[1] = pt / (r * r) - 1.0;
    dy[2] = pt * pt / (r * r * r) + dudr;
    dy[3] = dudth;
}

fn polar_p1_rhs(y: &[f64], mu: f64, dy: &mut [f64]) {
    let (r, th, pr, pt) = (y[0], y[1], y[2], y[3]);
    let (s, c) = th.sin_cos();
    let r2 = r * r;
    dy[0] = pr + mu * s;
    dy[1] = pt / r2 - 1.0 + mu * c / r;
    dy[2] = pt * pt / (r2 * r) + mu * pt * c / r2 - (1.0 - mu) / r2;
    dy[3] = -mu * (pr * c - pt * s / r);
    if mu > 0.0 {
        let dsq = 1.0 + r2 - 2.0 * r * c;
        let d3 = dsq * dsq.sqrt();
        dy[2] -= mu * (r - c) / d3;
        dy[3] -= mu * r * s / d3;
    }
}

fn infinity_rhs(y: &[f64], mu: f64, dy: &mut [f64]) {
    let (xi, th, pr, pt) = (y[0], y[1], y[2], y[3]);
    let x2 = xi * xi;
    let x3 = x2 * xi;
    let x4 = x2 * x2;
    let (s, c) = th.sin_cos();
    let (a, b) = infinity_radicands(xi, th, mu);
    let (ia, ib) = (1.0 / a.sqrt(), 1.0 / b.sqrt());
    let (ia3, ib3) = (ia * ia * ia, ib * ib * ib);
    let bracket = (1.0 - mu) * ia + mu * ib - 1.0;
    let a_xi = 2.0 * xi * mu * c + x3 * mu * mu;
    let b_xi = -2.0 * xi * (1.0 - mu) * c + x3 * (1.0 - mu) * (1.0 - mu);
    let dv_dxi = xi * bracket - 0.25 * x2 * ((1.0 - mu) * ia3 * a_xi + mu * ib3 * b_xi);
    let dv_dth = 0.25 * x4 * mu * (1.0 - mu) * s * (ia3 - ib3);
    dy[0] = -pr * x3 / 4.0;
    dy[1] = pt * x4 / 4.0 - 1.0;
    dy[2] = -x4 / 4.0 + pt * pt * x4 * x2 / 8.0 - x3 / 4.0 * dv_dxi;
    dy[3] = dv_dth;
}

/// Regularized `(v', u')` at `(r, theta, v, u)` given `r^{3/2}`.
#[inline]
fn regularized_vu(r: f64, r32: f64, th: f64, v: f64, u: f64, mu: f64) -> (f64, f64) {
    let (s, c) = th.sin_cos();
    let r2 = r * r;
    let mut dv = 0.5 * v * v + u * u + 2.0 * u * r32 + r2 * r - 1.0;
    let mut du = -0.5 * u * v - 2.0 * v * r32;
    if mu > 0.0 {
        let dsq = 1.0 + r2 - 2.0 * r * c;
        let id3 = 1.0 / (dsq * dsq.sqrt());
        dv += mu * (1.0 - r2 * (c + (r - c) * id3));
        du += mu * r2 * s * (1.0 - id3);
    }
    (dv, du)
}

fn regularized_rhs(y: &[f64], mu: f64, dy: &mut [f64]) {
    let (r, th, v, u) = (y[0], y[1], y[2], y[3]);
    let r32 = r.max(0.0).powf(1.5);
    let (dv, du) = regularized_vu(r, r32, th, v, u, mu);
    dy[0] = r * v;
    dy[1] = u;
    dy[2] = dv;
    dy[3] = du;
}

fn reduced_rhs(y: &[f64], mu: f64, h: f64, dy: &mut [f64]) {
    let (s, th, al) = (y[0], y[1], y[2]);
    let rho = rho_energy(s, th, mu, h);
    let m2 = 2.0 * (1.0 - mu) + rho;
    let m = m2.max(0.0).sqrt();
    let (sa, ca) = al.sin_cos();
    let (v, u) = (m * sa, m * ca);
    let r = s * s;
    let (dv, du) = regularized_vu(r, r * s.abs(), th, v, u, mu);
    dy[0] = 0.5 * s * v;
    dy[1] = u;
    dy[2] = (u * dv - v * du) / m2;
}

impl VectorField for Field {
    fn dim(&self) -> usize {
        self.id.dim()
    }

    fn eval(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let mu = self.mu;
        match self.id {
            FieldId::Cartesian => cartesian_rhs(y, mu, dy),
            FieldId::PolarCm => polar_cm_rhs(y, mu, dy),
            FieldId::PolarP1 => polar_p1_rhs(y, mu, dy),
            FieldId::Infinity => infinity_rhs(y, mu, dy),
            FieldId::Regularized => regularized_rhs(y, mu, dy),
            FieldId::Reduced => reduced_rhs(y, mu, self.h, dy),
            FieldId::CollisionTorus => {
                let m = m0(mu);
                let c = y[1].cos();
                dy[0] = m * c;
                dy[1] = 0.5 * m * c;
            }
            FieldId::StraightenedMinus => {
                let m = m0(mu);
                let l = lambda(mu, self.h);
                dy[0] = -0.5 * m * y[0];
                dy[1] = 0.5 * m * y[1];
                dy[2] = 4.0 * l * y[0] * y[0] * y[1];
            }
            FieldId::StraightenedPlus => {
                let m = m0(mu);
                let l = lambda(mu, self.h);
                dy[0] = 0.5 * m * y[0];
                dy[1] = -0.5 * m * y[1];
                dy[2] = -4.0 * l * y[0] * y[0] * y[1];
            }
        }
    }

    fn first_integral(&self, y: &[f64]) -> Option<f64> {
        self.integral(y)
    }

    fn time_rate(&self, y: &[f64]) -> f64 {
        Field::time_rate(self, y)
    }

    fn in_domain(&self, y: &[f64]) -> bool {
        match self.id {
            FieldId::PolarCm | FieldId::PolarP1 => y[0] >= POLAR_MIN_RADIUS,
            FieldId::Cartesian => (y[0] + self.mu).hypot(y[1]) >= POLAR_MIN_RADIUS,
            FieldId::Infinity => y[0] >= 0.0,
            FieldId::Regularized => y[0] >= 0.0,
            FieldId::Reduced => {
                y[0] >= 0.0 && 2.0 * (1.0 - self.mu) + rho_energy(y[0], y[1], self.mu, self.h) > 0.0
            }
            _ => true,
        }
    }
}

/// Maps a state of chart `from` to chart `to` (only the pairs used by the consistency checks).
pub fn map_state(from: FieldId, to: FieldId, y: &[f64], mu: f64, h: f64) -> Result<Vec<f64>> {
    use FieldId::*;
    let out: Vec<f64> = match (from, to) {
        (a, b) if a == b => y.to_vec(),
        (PolarCm, Cartesian) => Polar::from_array(Center::Cm, y).to_cartesian(mu)?.to_array().to_vec(),
        (PolarP1, Cartesian) => Polar::from_array(Center::P1, y).to_cartesian(mu)?.to_array().to_vec(),
        (Cartesian, PolarCm) => crate::charts::Cartesian::from_array(y).to_polar(Center::Cm, mu)?.to_array().to_vec(),
        (Cartesian, PolarP1) => crate::charts::Cartesian::from_array(y).to_polar(Center::P1, mu)?.to_array().to_vec(),
        (PolarCm, PolarP1) => Polar::from_array(Center::Cm, y).cm_to_p1(mu)?.to_array().to_vec(),
        (PolarP1, PolarCm) => Polar::from_array(Center::P1, y).p1_to_cm(mu)?.to_array().to_vec(),
        (Infinity, PolarCm) => crate::charts::Infinity::from_array(y).to_polar()?.to_array().to_vec(),
        (PolarCm, Infinity) => Polar::from_array(Center::Cm, y).to_infinity()?.to_array().to_vec(),
        (Regularized, PolarP1) => crate::charts::Regularized::from_array(y).to_polar(mu)?.to_array().to_vec(),
        (PolarP1, Regularized) => Polar::from_array(Center::P1, y).to_regularized(mu)?.to_array().to_vec(),
        (Reduced, Regularized) => {
            crate::charts::Reduced::on_shell(y[0], y[1], y[2], mu, h)?.to_regularized(mu)?.to_array().to_vec()
        }
        (Regularized, Reduced) => crate::charts::Regularized::from_array(y).to_reduced(mu, h, ENERGY_TOL)?.to_array().to_vec(),
        (Reduced, PolarP1) => crate::charts::Reduced::on_shell(y[0], y[1], y[2], mu, h)?
            .to_regularized(mu)?
            .to_polar(mu)?
            .to_array()
            .to_vec(),
        _ => return Err(Error::Domain(format!("no chart map from {from:?} to {to:?}"))),
    };
    Ok(out)
}

/// Pushes field `a` through the chart map `a -> b` by central differences (step `1e-6`),
/// converts the time variable, and returns the largest component deviation from field `b`.
pub fn consistency_check(a: FieldId, b: FieldId, state: &[f64], mu: f64, h: f64) -> Result<f64> {
    let fa = Field::new(a, mu, h);
    let fb = Field::new(b, mu, h);
    let va = fa.eval_checked(state)?;
    let yb = map_state(a, b, state, mu, h)?;
    let vb = fb.eval_checked(&yb)?;
    let eps = 1e-6;
    let mut pushed = vec![0.0; yb.len()];
    let mut plus = state.to_vec();
    let mut minus = state.to_vec();
    for (k, vk) in va.iter().enumerate() {
        plus[k] = state[k] + eps;
        minus[k] = state[k] - eps;
        let yp = map_state(a, b, &plus, mu, h)
            .map_err(|_| Error::SingularChart("consistency check inconclusive near chart singularity".into()))?;
        let ym = map_state(a, b, &minus, mu, h)
            .map_err(|_| Error::SingularChart("consistency check inconclusive near chart singularity".into()))?;
        for j in 0..yb.len() {
            let mut diff = yp[j] - ym[j];
            if a != b && is_angle(b, j) {
                diff = crate::charts::wrap_angle(diff);
            }
            pushed[j] += diff / (2.0 * eps) * vk;
        }
        plus[k] = state[k];
        minus[k] = state[k];
    }
    // Convert d/d(time of a) into d/d(time of b).
    let factor = fa.time_rate(state) / fb.time_rate(&yb);
    Ok(pushed
        .iter()
        .zip(&vb)
        .map(|(p, q)| (p / factor - q).abs())
        .fold(0.0, f64::max))
}

fn is_angle(id: FieldId, j: usize) -> bool {
    match id {
        FieldId::Cartesian => false,
        FieldId::Reduced => j == 1 || j == 2,
        FieldId::CollisionTorus => true,
        _ => j == 1,
    }
}
