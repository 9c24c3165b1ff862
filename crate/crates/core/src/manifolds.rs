//! Traces of the collision manifolds `W^u(S+)`, `W^s(S-)` and the infinity manifolds
//! `W^{s,u}(Lambda)` on the section `r = delta^2` about the large primary, and the distances
//! `d+-` between them.

use crate::charts::{wrap_angle, Center, Polar, Reduced};
use crate::closedform::{kappa, m0, time_to_radius, w_sigma};
use crate::error::{Error, Result};
use crate::fields::{Field, FieldId};
use crate::flow::{integrate, Clocked, Direction, EventSpec, IntegratorConfig, Termination, Trajectory};
use crate::melnikov::{admissible, melnikov_plus, value_integrand, QuadratureBudget};
use crate::quadrature::integrate_panels;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::io::Write;

/// Default section parameter: the section is `r = delta^2`.
pub const DEFAULT_DELTA: f64 = 0.2;
/// Default offset of the fiber seed from the circle of equilibria.
pub const DEFAULT_SEED_OFFSET: f64 = 1e-4;
/// Default center-of-mass radius where the infinity manifold is initialized.
pub const DEFAULT_R_HAT0: f64 = 50.0;
/// Approaches to the small primary closer than this drop the sample.
pub const P2_EXCLUSION: f64 = 0.05;

/// Which half of the section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// `R > 0`, leaving the primary.
    Outgoing,
    /// `R < 0`, approaching the primary.
    Incoming,
}

/// The section `{r = delta^2, H = h}` about the large primary, restricted to one sign of `R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionSpec {
    pub delta: f64,
    pub h: f64,
    pub branch: Branch,
}

impl SectionSpec {
    pub fn new(delta: f64, h: f64, branch: Branch) -> Self {
        Self { delta, h, branch }
    }

    /// Section radius `r* = delta^2`.
    pub fn r_star(&self) -> f64 {
        self.delta * self.delta
    }

    /// Checks `0 < delta < 1` and `mu < r* < 1 - mu`.
    pub fn validate(&self, mu: f64) -> Result<()> {
        let r = self.r_star();
        if !(self.delta > 0.0 && self.delta < 1.0 && r > mu && r < 1.0 - mu && self.h.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "section needs 0 < delta < 1 and mu < delta^2 < 1 - mu, got delta = {}, mu = {mu}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Invariant manifold a section curve belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManifoldSource {
    UnstableSPlus,
    StableSMinus,
    StableInfinity,
    UnstableInfinity,
}

impl ManifoldSource {
    /// Section branch on which the manifold is a graph over `theta`.
    pub fn branch(self) -> Branch {
        match self {
            ManifoldSource::UnstableSPlus | ManifoldSource::StableInfinity => Branch::Outgoing,
            ManifoldSource::StableSMinus | ManifoldSource::UnstableInfinity => Branch::Incoming,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ManifoldSource::UnstableSPlus => "Wu(S+)",
            ManifoldSource::StableSMinus => "Ws(S-)",
            ManifoldSource::StableInfinity => "Ws(inf)",
            ManifoldSource::UnstableInfinity => "Wu(inf)",
        }
    }
}

/// Diagnostic attached to a section sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointFlag {
    Ok,
    /// The orbit passed within [`P2_EXCLUSION`] of the small primary.
    CloseEncounter,
    /// No crossing of the section within the time budget.
    NoArrival,
}

/// A manifold point on the section, in polar coordinates about the large primary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionPoint {
    pub theta: f64,
    /// Angular momentum `Theta`.
    pub ptheta: f64,
    /// Radial momentum `R`.
    pub pr: f64,
    /// Signed physical time from the seed to the section.
    pub time: f64,
    /// `H - h` at the section point.
    pub energy_residual: f64,
    pub flag: PointFlag,
}

impl SectionPoint {
    /// Image under the reversibility involution, which exchanges stable and unstable manifolds.
    pub fn reflect(self) -> Self {
        Self { theta: -self.theta, pr: -self.pr, time: -self.time, ..self }
    }

    /// Polar state about the large primary at radius `r_star`.
    pub fn to_polar(self, r_star: f64) -> Polar {
        Polar { center: Center::P1, r: r_star, theta: self.theta, pr: self.pr, ptheta: self.ptheta }
    }
}

/// A manifold sampled as a graph `theta -> Theta` on the section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionCurve {
    pub source: ManifoldSource,
    pub section: SectionSpec,
    /// Samples ordered by increasing `theta`.
    pub samples: Vec<SectionPoint>,
}

impl SectionCurve {
    /// Samples usable for interpolation.
    pub fn valid(&self) -> impl Iterator<Item = &SectionPoint> {
        self.samples.iter().filter(|p| p.flag == PointFlag::Ok)
    }

    /// Cubic Hermite interpolation of `Theta` with finite-difference slopes over the valid
    /// samples; errors outside the sampled range.
    pub fn interpolate(&self, theta: f64) -> Result<f64> {
        let pts: Vec<(f64, f64)> = self.valid().map(|p| (p.theta, p.ptheta)).collect();
        let n = pts.len();
        if n < 2 || theta < pts[0].0 || theta > pts[n - 1].0 {
            return Err(Error::Domain(format!("theta = {theta} outside the sampled range of {}", self.source.name())));
        }
        let i = pts.partition_point(|p| p.0 <= theta).clamp(1, n - 1) - 1;
        let slope = |k: usize| {
            let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
            (pts[b].1 - pts[a].1) / (pts[b].0 - pts[a].0)
        };
        let (x0, y0) = pts[i];
        let (x1, y1) = pts[i + 1];
        let hx = x1 - x0;
        let t = (theta - x0) / hx;
        let (t2, t3) = (t * t, t * t * t);
        Ok((2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * hx * slope(i)
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * hx * slope(i + 1))
    }

    /// Writes `theta,Theta,R,flag` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "theta,Theta,R,flag")?;
        for p in &self.samples {
            writeln!(
                w,
                "{},{},{},{:?}",
                crate::flow::format_float(p.theta),
                crate::flow::format_float(p.ptheta),
                crate::flow::format_float(p.pr),
                p.flag
            )?;
        }
        Ok(())
    }
}

/// Circle of equilibria on the collision torus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Circle {
    /// `S+` at `alpha = pi/2`, whose unstable manifold consists of ejection orbits.
    SPlus,
    /// `S-` at `alpha = -pi/2`, whose stable manifold consists of collision orbits.
    SMinus,
}

/// Seed of a one-dimensional fiber of a collision manifold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberSeed {
    pub circle: Circle,
    /// Base point of the fiber on the circle.
    pub theta_bar: f64,
    /// Offset `s0` along the hyperbolic direction.
    pub s0: f64,
}

impl FiberSeed {
    pub fn new(circle: Circle, theta_bar: f64) -> Self {
        Self { circle, theta_bar, s0: DEFAULT_SEED_OFFSET }
    }

    /// Checks `s0 in (0, 1e-2]`.
    pub fn validate(&self) -> Result<()> {
        if !(self.s0 > 0.0 && self.s0 <= 1e-2 && self.theta_bar.is_finite()) {
            return Err(Error::InvalidParameter(format!("seed offset {} not in (0, 1e-2]", self.s0)));
        }
        Ok(())
    }

    /// Reduced state on the unstable fiber of `S+` through `theta_bar`, including the cubic
    /// terms `u = -s^3`, `theta = theta_bar - 2 s^3/(3 m0)` of the fiber's expansion.
    pub fn reduced_plus(&self, mu: f64, h: f64) -> Result<Reduced> {
        let m = m0(mu);
        let s3 = self.s0.powi(3);
        Reduced::on_shell(self.s0, self.theta_bar - 2.0 * s3 / (3.0 * m), FRAC_PI_2 + s3 / m, mu, h)
    }
}

/// Numerical settings shared by the manifold traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub integrator: IntegratorConfig,
    /// Center-of-mass radius at which the infinity manifold is initialized.
    pub r_hat0: f64,
    /// Budget in regularized time for the collision traces.
    pub max_tau: f64,
    pub p2_exclusion: f64,
    /// Tolerance on the section angle when aiming at a prescribed `theta`.
    pub angle_tol: f64,
    pub max_iter: usize,
    /// Half-width of the excluded window around the pole angle.
    pub window: f64,
    pub budget: QuadratureBudget,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            integrator: IntegratorConfig::default(),
            r_hat0: DEFAULT_R_HAT0,
            max_tau: 200.0,
            p2_exclusion: P2_EXCLUSION,
            angle_tol: 1e-11,
            max_iter: 40,
            window: 0.45,
            budget: QuadratureBudget::default(),
        }
    }
}

impl TraceConfig {
    pub fn validate(&self) -> Result<()> {
        self.integrator.validate()?;
        if !(self.r_hat0 > 2.0 && self.max_tau > 0.0 && self.p2_exclusion > 0.0 && self.angle_tol > 0.0 && self.max_iter > 0) {
            return Err(Error::InvalidParameter("trace configuration out of range".into()));
        }
        Ok(())
    }
}

/// A traced fiber of a collision manifold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollisionTrace {
    pub seed: FiberSeed,
    pub point: SectionPoint,
    /// Reduced `(s, theta, alpha)` plus physical time, in regularized time.
    pub trajectory: Trajectory,
}

/// Integrates the fiber of `W^u(S+)` (forward) or `W^s(S-)` (backward, through the
/// reversibility involution) from its seed to the section.
pub fn trace_collision_manifold(seed: &FiberSeed, mu: f64, section: &SectionSpec, cfg: &TraceConfig) -> Result<CollisionTrace> {
    seed.validate()?;
    section.validate(mu)?;
    cfg.validate()?;
    let expected = match seed.circle {
        Circle::SPlus => Branch::Outgoing,
        Circle::SMinus => Branch::Incoming,
    };
    if section.branch != expected {
        return Err(Error::InvalidParameter("collision manifold traced to the wrong section branch".into()));
    }
    if seed.circle == Circle::SMinus {
        let mirror = FiberSeed { circle: Circle::SPlus, theta_bar: -seed.theta_bar, ..*seed };
        let plus = SectionSpec { branch: Branch::Outgoing, ..*section };
        let mut tr = trace_collision_manifold(&mirror, mu, &plus, cfg)?;
        tr.seed = *seed;
        tr.point = tr.point.reflect();
        for (t, y) in tr.trajectory.times.iter_mut().zip(tr.trajectory.states.iter_mut()) {
            *t = -*t;
            y[1] = -y[1];
            y[2] = -y[2];
            y[3] = -y[3];
        }
        return Ok(tr);
    }
    let h = section.h;
    let start = seed.reduced_plus(mu, h)?;
    let field = Field::new(FieldId::Reduced, mu, h);
    let clocked = Clocked(&field);
    let delta = section.delta;
    let events = [EventSpec::terminal("section", Direction::Rising, move |_, y: &[f64]| y[0] - delta)];
    let y0 = [start.s, start.theta, start.alpha, 0.0];
    let traj = integrate(&clocked, 0.0, &y0, cfg.max_tau, &cfg.integrator, &events)?;
    let y = traj.y_end();
    let point = if traj.status == Termination::Event(0) {
        let polar = Reduced::on_shell(y[0], y[1], y[2], mu, h)?.to_regularized(mu)?.to_polar(mu)?;
        SectionPoint {
            theta: polar.theta,
            ptheta: polar.ptheta,
            pr: polar.pr,
            time: y[3],
            energy_residual: polar.hamiltonian(mu)? - h,
            flag: PointFlag::Ok,
        }
    } else {
        SectionPoint { theta: y[1], ptheta: f64::NAN, pr: f64::NAN, time: y[3], energy_residual: f64::NAN, flag: PointFlag::NoArrival }
    };
    Ok(CollisionTrace { seed: *seed, point, trajectory: traj })
}

/// Safeguarded secant iteration for `wrap(phi(x) - target) = 0` where `phi` is close to
/// `x + const`; the first step assumes unit slope.
fn aim<F>(mut x: f64, target: f64, cfg: &TraceConfig, mut phi: F) -> Result<(f64, SectionPoint)>
where
    F: FnMut(f64) -> Result<SectionPoint>,
{
    let mut p = phi(x)?;
    let mut prev: Option<(f64, f64)> = None;
    for _ in 0..cfg.max_iter {
        if p.flag != PointFlag::Ok {
            return Ok((x, p));
        }
        let f = wrap_angle(p.theta - target);
        if f.abs() <= cfg.angle_tol {
            p.theta = target + f;
            return Ok((x, p));
        }
        let slope = match prev {
            Some((xp, fp)) if (x - xp).abs() > 0.0 && ((f - fp) / (x - xp)).is_finite() => {
                let s = (f - fp) / (x - xp);
                if s > 0.25 && s < 4.0 { s } else { 1.0 }
            }
            _ => 1.0,
        };
        let step = (f / slope).clamp(-0.5, 0.5);
        prev = Some((x, f));
        x -= step;
        p = phi(x)?;
    }
    Err(Error::Numerical(format!("section angle {target} not reached within {} iterations", cfg.max_iter)))
}

/// Point of a collision manifold on the section at the prescribed angle `theta`.
pub fn collision_section_point(circle: Circle, theta: f64, mu: f64, section: &SectionSpec, cfg: &TraceConfig) -> Result<SectionPoint> {
    collision_section_fiber(circle, theta, mu, section, cfg).map(|(_, p)| p)
}

/// Fiber base angle and section point of the collision manifold fiber reaching the section at
/// `theta`.
pub fn collision_section_fiber(circle: Circle, theta: f64, mu: f64, section: &SectionSpec, cfg: &TraceConfig) -> Result<(f64, SectionPoint)> {
    if circle == Circle::SMinus {
        let plus = SectionSpec { branch: Branch::Outgoing, ..*section };
        return collision_section_fiber(Circle::SPlus, -theta, mu, &plus, cfg).map(|(tb, p)| (-tb, p.reflect()));
    }
    let w = time_to_radius(section.r_star());
    aim(theta + w, theta, cfg, |tb| {
        trace_collision_manifold(&FiberSeed { circle, theta_bar: tb, s0: DEFAULT_SEED_OFFSET }, mu, section, cfg).map(|t| t.point)
    })
}

/// `Theta_hat` on `W^s(Lambda_{Theta_hat_0})` at center-of-mass radius `r_hat` and angle
/// `theta_hat`, to first order in `mu`.
pub fn infinity_angular_momentum(theta_hat: f64, r_hat: f64, mu: f64, theta_hat_0: f64) -> f64 {
    let k = kappa();
    let w = (r_hat / k).powf(1.5);
    let alpha = theta_hat + w;
    let lead = |s: f64| value_integrand(s, alpha) - (alpha - s).sin() / (k * k * k * s.powf(4.0 / 3.0));
    let upper = w + 200.0 * PI;
    let q = integrate_panels(&lead, w, upper, FRAC_PI_4, 1e-13);
    theta_hat_0 + mu * k * q.value
}

/// Initial condition on `W^s(Lambda_{Theta_hat_0})` at `r_hat`, polar about the center of mass,
/// with `R_hat > 0` from the energy `h = -Theta_hat_0`.
pub fn infinity_start(theta_hat: f64, r_hat: f64, mu: f64, theta_hat_0: f64) -> Result<Polar> {
    let ptheta = infinity_angular_momentum(theta_hat, r_hat, mu, theta_hat_0);
    let c = theta_hat.cos();
    let d1 = (r_hat * r_hat + 2.0 * mu * r_hat * c + mu * mu).sqrt();
    let d2 = (r_hat * r_hat - 2.0 * (1.0 - mu) * r_hat * c + (1.0 - mu) * (1.0 - mu)).sqrt();
    let u = (1.0 - mu) / d1 + if mu > 0.0 { mu / d2 } else { 0.0 };
    let pr2 = 2.0 * (-theta_hat_0 + ptheta + u) - ptheta * ptheta / (r_hat * r_hat);
    if pr2 <= 0.0 {
        return Err(Error::Domain(format!("no real radial momentum at r_hat = {r_hat}")));
    }
    Ok(Polar { center: Center::Cm, r: r_hat, theta: theta_hat, pr: pr2.sqrt(), ptheta })
}

/// A traced orbit of the stable manifold of infinity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InfinityTrace {
    pub start: Polar,
    pub point: SectionPoint,
    /// Closest approach to the small primary along the trace.
    pub p2_distance: f64,
    /// Center-of-mass polar `(r, theta, R, Theta)` in physical time (negative).
    pub trajectory: Trajectory,
}

/// Integrates `W^s(Lambda_{Theta_hat_0})` backward from `(r_hat0, theta_hat)` to the outgoing
/// section at energy `h = -Theta_hat_0`.
pub fn trace_infinity_orbit(theta_hat: f64, mu: f64, theta_hat_0: f64, delta: f64, cfg: &TraceConfig) -> Result<InfinityTrace> {
    cfg.validate()?;
    let section = SectionSpec::new(delta, -theta_hat_0, Branch::Outgoing);
    section.validate(mu)?;
    let start = infinity_start(theta_hat, cfg.r_hat0, mu, theta_hat_0)?;
    let field = Field::new(FieldId::PolarCm, mu, section.h);
    let r_star = section.r_star();
    let p1 = move |y: &[f64]| (y[0] * y[0] + 2.0 * mu * y[0] * y[1].cos() + mu * mu).sqrt();
    let p2 = move |y: &[f64]| (y[0] * y[0] - 2.0 * (1.0 - mu) * y[0] * y[1].cos() + (1.0 - mu) * (1.0 - mu)).sqrt();
    let excl = cfg.p2_exclusion;
    let events = [
        EventSpec::terminal("section", Direction::Falling, move |_, y: &[f64]| p1(y) - r_star),
        EventSpec::terminal("p2", Direction::Falling, move |_, y: &[f64]| p2(y) - excl),
    ];
    let horizon = 2.0 * time_to_radius(cfg.r_hat0) + 100.0;
    let traj = integrate(&field, 0.0, &start.to_array(), -horizon, &cfg.integrator, &events)?;
    let p2_distance = traj.states.iter().map(|y| p2(y)).fold(f64::INFINITY, f64::min);
    let y = traj.y_end();
    let point = match traj.status {
        Termination::Event(0) => {
            let polar = Polar::from_array(Center::Cm, y).cm_to_p1(mu)?;
            SectionPoint {
                theta: polar.theta,
                ptheta: polar.ptheta,
                pr: polar.pr,
                time: traj.t_end(),
                energy_residual: polar.hamiltonian(mu)? - section.h,
                flag: PointFlag::Ok,
            }
        }
        Termination::Event(1) => SectionPoint {
            theta: y[1],
            ptheta: f64::NAN,
            pr: f64::NAN,
            time: traj.t_end(),
            energy_residual: f64::NAN,
            flag: PointFlag::CloseEncounter,
        },
        _ => SectionPoint {
            theta: y[1],
            ptheta: f64::NAN,
            pr: f64::NAN,
            time: traj.t_end(),
            energy_residual: f64::NAN,
            flag: PointFlag::NoArrival,
        },
    };
    Ok(InfinityTrace { start, point, p2_distance, trajectory: traj })
}

/// Point of `W^s(Lambda)` (`stable = true`, outgoing branch) or `W^u(Lambda)` (incoming
/// branch, through the reversibility involution) on the section at angle `theta`.
pub fn infinity_section_point(stable: bool, theta: f64, mu: f64, theta_hat_0: f64, delta: f64, cfg: &TraceConfig) -> Result<SectionPoint> {
    if !stable {
        return infinity_section_point(true, -theta, mu, theta_hat_0, delta, cfg).map(SectionPoint::reflect);
    }
    let flight = time_to_radius(cfg.r_hat0) - time_to_radius(delta * delta);
    let (_, p) = aim(theta - flight, theta, cfg, |th| trace_infinity_orbit(th, mu, theta_hat_0, delta, cfg).map(|t| t.point))?;
    Ok(p)
}

/// Samples a manifold on the section at the given angles, in parallel; the output keeps the
/// order of `thetas`, which must be increasing.
pub fn section_curve(source: ManifoldSource, thetas: &[f64], mu: f64, theta_hat_0: f64, delta: f64, cfg: &TraceConfig) -> Result<SectionCurve> {
    if thetas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("section grid must be strictly increasing".into()));
    }
    let section = SectionSpec::new(delta, -theta_hat_0, source.branch());
    section.validate(mu)?;
    let samples = thetas
        .par_iter()
        .map(|&th| match source {
            ManifoldSource::UnstableSPlus => collision_section_point(Circle::SPlus, th, mu, &section, cfg),
            ManifoldSource::StableSMinus => collision_section_point(Circle::SMinus, th, mu, &section, cfg),
            ManifoldSource::StableInfinity => infinity_section_point(true, th, mu, theta_hat_0, delta, cfg),
            ManifoldSource::UnstableInfinity => infinity_section_point(false, th, mu, theta_hat_0, delta, cfg),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SectionCurve { source, section, samples })
}

/// Which distance function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// `d+ = Theta_inf^s - Theta_{S+}^u` on the outgoing branch.
    Plus,
    /// `d- = Theta_inf^u - Theta_{S-}^s` on the incoming branch.
    Minus,
}

/// Whether `theta` lies in the domain where the manifolds are graphs, i.e. the Melnikov
/// argument `+-theta + w_Sigma` avoids the excluded window.
pub fn in_distance_domain(theta: f64, side: Side, delta: f64, window: f64) -> bool {
    let w = w_sigma(delta);
    match side {
        Side::Plus => admissible(theta + w, window),
        Side::Minus => admissible(-theta + w, window),
    }
}

/// A distance evaluation with both manifold points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceEval {
    pub theta: f64,
    pub side: Side,
    pub value: f64,
    pub infinity: SectionPoint,
    pub collision: SectionPoint,
}

/// `d+-(theta, Theta_hat_0)` at energy `h = -Theta_hat_0`, from direct traces of both manifolds.
pub fn distance(theta: f64, side: Side, mu: f64, theta_hat_0: f64, delta: f64, cfg: &TraceConfig) -> Result<DistanceEval> {
    if !in_distance_domain(theta, side, delta, cfg.window) {
        return Err(Error::Domain(format!("theta = {theta} outside the graph domain of d{side:?}")));
    }
    let (stable, circle, branch) = match side {
        Side::Plus => (true, Circle::SPlus, Branch::Outgoing),
        Side::Minus => (false, Circle::SMinus, Branch::Incoming),
    };
    let section = SectionSpec::new(delta, -theta_hat_0, branch);
    let (infinity, collision) = rayon::join(
        || infinity_section_point(stable, theta, mu, theta_hat_0, delta, cfg),
        || collision_section_point(circle, theta, mu, &section, cfg),
    );
    let (infinity, collision) = (infinity?, collision?);
    if infinity.flag != PointFlag::Ok || collision.flag != PointFlag::Ok {
        return Err(Error::Domain(format!(
            "theta = {theta}: infinity trace {:?}, collision trace {:?}",
            infinity.flag, collision.flag
        )));
    }
    Ok(DistanceEval { theta, side, value: infinity.ptheta - collision.ptheta, infinity, collision })
}

/// First-order prediction `Theta_hat_0 + mu M+(+-theta + w_Sigma)` of `d+-`.
pub fn first_order_distance(theta: f64, side: Side, mu: f64, theta_hat_0: f64, delta: f64, budget: &QuadratureBudget) -> Result<f64> {
    let arg = match side {
        Side::Plus => theta,
        Side::Minus => -theta,
    } + w_sigma(delta);
    Ok(theta_hat_0 + mu * melnikov_plus(arg, budget)?.value)
}

/// A zero of a distance function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub side: Side,
    pub theta: f64,
    /// Central finite-difference slope of `d` at the root.
    pub slope: f64,
    /// Discrepancy between slopes at two step sizes, a proxy for the noise floor.
    pub noise: f64,
    pub transversal: bool,
    pub point: DistanceEval,
}

/// Root of `d+-(., Theta_hat_0)` in `bracket` by bisection safeguarded secant (Illinois),
/// followed by a finite-difference slope and a transversality test.
pub fn find_transverse_intersection(
    side: Side,
    mu: f64,
    theta_hat_0: f64,
    bracket: (f64, f64),
    delta: f64,
    cfg: &TraceConfig,
) -> Result<Intersection> {
    let d = |th: f64| distance(th, side, mu, theta_hat_0, delta, cfg).map(|e| e.value);
    let (mut a, mut b) = bracket;
    let (mut fa, mut fb) = (d(a)?, d(b)?);
    if fa.signum() == fb.signum() {
        return Err(Error::NotFound(format!("d{side:?} does not change sign on [{a}, {b}]")));
    }
    let mut side_kept = 0i8;
    for _ in 0..200 {
        if (b - a).abs() < 1e-13 {
            break;
        }
        let c = (a * fb - b * fa) / (fb - fa);
        let c = if c.is_finite() && c > a.min(b) && c < a.max(b) { c } else { 0.5 * (a + b) };
        let fc = d(c)?;
        if fc == 0.0 {
            a = c;
            b = c;
            break;
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side_kept == -1 {
                fa *= 0.5;
            }
            side_kept = -1;
        } else {
            a = c;
            fa = fc;
            if side_kept == 1 {
                fb *= 0.5;
            }
            side_kept = 1;
        }
    }
    let theta = 0.5 * (a + b);
    let point = distance(theta, side, mu, theta_hat_0, delta, cfg)?;
    let fd = |h: f64| -> Result<f64> { Ok((d(theta + h)? - d(theta - h)?) / (2.0 * h)) };
    let slope = fd(1e-4)?;
    let noise = (slope - fd(2e-4)?).abs() + 1e-12 / 1e-4;
    Ok(Intersection { side, theta, slope, noise, transversal: slope.abs() > 10.0 * noise, point })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::melnikov::half_integrals;

    fn cfg() -> TraceConfig {
        TraceConfig::default()
    }

    #[test]
    fn unperturbed_collision_trace_is_parabolic() {
        let section = SectionSpec::new(0.2, 0.0, Branch::Outgoing);
        for tb in [0.0, 1.0, 4.0] {
            let tr = trace_collision_manifold(&FiberSeed::new(Circle::SPlus, tb), 0.0, &section, &cfg()).unwrap();
            let p = tr.point;
            assert_eq!(p.flag, PointFlag::Ok);
            assert!(p.ptheta.abs() < 1e-10, "Theta = {}", p.ptheta);
            assert!((p.pr - (2.0 / 0.04f64).sqrt()).abs() < 1e-8);
            // theta drifts by minus the flight time from collision.
            assert!(wrap_angle(p.theta - (tb - w_sigma(0.2))).abs() < 1e-8);
        }
    }

    #[test]
    fn unperturbed_infinity_trace_is_parabolic() {
        let p = infinity_section_point(true, 2.0, 0.0, 0.0, 0.2, &cfg()).unwrap();
        assert!(p.ptheta.abs() < 1e-10 && (p.pr - 50f64.sqrt()).abs() < 1e-8);
        assert!((p.theta - 2.0).abs() < 1e-12);
    }

    #[test]
    fn collision_first_order_matches_half_integral() {
        let mu = 1e-3;
        let section = SectionSpec::new(0.2, 0.0, Branch::Outgoing);
        for theta in [1.5, 3.0, 5.0] {
            let p = collision_section_point(Circle::SPlus, theta, mu, &section, &cfg()).unwrap();
            let hi = half_integrals(theta, 0.04, &QuadratureBudget::default()).unwrap();
            let first = mu * hi.splus_u.value;
            assert!(((p.ptheta - first) / first).abs() < 10.0 * mu, "theta {theta}: {} vs {first}", p.ptheta);
            assert!(p.energy_residual.abs() < 1e-9);
        }
    }

    #[test]
    fn stable_collision_point_is_reflection() {
        let mu = 1e-3;
        let out = SectionSpec::new(0.2, 0.0, Branch::Outgoing);
        let inc = SectionSpec::new(0.2, 0.0, Branch::Incoming);
        let u = collision_section_point(Circle::SPlus, -2.0, mu, &out, &cfg()).unwrap();
        let s = collision_section_point(Circle::SMinus, 2.0, mu, &inc, &cfg()).unwrap();
        assert_eq!(s, u.reflect());
        assert!(s.pr < 0.0);
    }

    #[test]
    fn seed_offset_halving_moves_point_little() {
        let mu = 1e-3;
        let section = SectionSpec::new(0.2, 0.0, Branch::Outgoing);
        let a = trace_collision_manifold(&FiberSeed { circle: Circle::SPlus, theta_bar: 2.0, s0: 2e-4 }, mu, &section, &cfg()).unwrap();
        let b = trace_collision_manifold(&FiberSeed { circle: Circle::SPlus, theta_bar: 2.0, s0: 1e-4 }, mu, &section, &cfg()).unwrap();
        assert!((a.point.ptheta - b.point.ptheta).abs() < 1e-4 * 2e-4);
        assert!((a.point.theta - b.point.theta).abs() < 1e-4 * 2e-4);
    }

    #[test]
    fn infinity_first_order_matches_half_integral() {
        let mu = 1e-4;
        let p = infinity_section_point(true, 3.0, mu, 0.0, 0.2, &cfg()).unwrap();
        let hi = half_integrals(3.0, 0.04, &QuadratureBudget::default()).unwrap();
        let first = -mu * hi.inf_s.value;
        assert!((p.ptheta - first).abs() < 10.0 * mu * mu, "{} vs {first}", p.ptheta);
        assert!(p.energy_residual.abs() < 1e-9);
    }

    #[test]
    fn infinity_initialization_converges_in_start_radius() {
        let mu = 1e-3;
        let base = infinity_section_point(true, 2.5, mu, 0.0, 0.2, &cfg()).unwrap();
        let far = TraceConfig { r_hat0: DEFAULT_R_HAT0 * 2f64.powf(2.0 / 3.0), ..cfg() };
        let doubled = infinity_section_point(true, 2.5, mu, 0.0, 0.2, &far).unwrap();
        let w0 = time_to_radius(DEFAULT_R_HAT0);
        assert!((base.ptheta - doubled.ptheta).abs() < 10.0 * mu * w0.powf(-1.0 / 3.0));
    }

    #[test]
    fn distance_reduces_to_theta_hat_0_without_perturbation() {
        let e = distance(2.0, Side::Plus, 0.0, 0.01, 0.2, &cfg()).unwrap();
        assert!((e.value - 0.01).abs() < 1e-10);
    }

    #[test]
    fn minus_distance_is_reflected_plus_distance() {
        let mu = 1e-3;
        let p = distance(-2.0, Side::Plus, mu, 0.0, 0.2, &cfg()).unwrap();
        let m = distance(2.0, Side::Minus, mu, 0.0, 0.2, &cfg()).unwrap();
        assert!((p.value - m.value).abs() < 1e-14);
    }

    #[test]
    fn window_points_are_rejected() {
        let th = crate::melnikov::pole_angle() - w_sigma(0.2);
        assert!(matches!(distance(th, Side::Plus, 1e-3, 0.0, 0.2, &cfg()), Err(Error::Domain(_))));
    }

    #[test]
    fn interpolation_reproduces_smooth_curve() {
        let thetas: Vec<f64> = (0..40).map(|i| 1.0 + 0.05 * i as f64).collect();
        let samples = thetas
            .iter()
            .map(|&t| SectionPoint { theta: t, ptheta: t.sin(), pr: 1.0, time: 0.0, energy_residual: 0.0, flag: PointFlag::Ok })
            .collect();
        let c = SectionCurve { source: ManifoldSource::StableInfinity, section: SectionSpec::new(0.2, 0.0, Branch::Outgoing), samples };
        assert!((c.interpolate(1.5123).unwrap() - 1.5123f64.sin()).abs() < 1e-4);
        assert!(c.interpolate(0.5).is_err());
    }
}
