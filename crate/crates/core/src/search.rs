//! Orbit-level constructions: long flights with automatic chart switching, ejection-collision
//! orbits with large excursions, the triple-intersection energy, and a finite-horizon
//! classification of final motions.

use crate::charts::{Center, ChartState, Polar, Reduced};
use crate::error::{Error, Result};
use crate::fields::{Field, FieldId};
use crate::flow::{integrate, Clocked, Direction, EventSpec, IntegratorConfig, Termination, Trajectory, COLLISION_FLOOR};
use crate::charts::{wrap_angle, MassRatio};
use crate::closedform::w_sigma;
use crate::localmap::{transit, SectionStraightening};
use crate::manifolds::{
    collision_section_fiber, collision_section_point, distance, find_transverse_intersection, in_distance_domain, infinity_section_point,
    trace_collision_manifold, Branch, Circle, FiberSeed, Intersection, PointFlag, SectionPoint, SectionSpec, Side, TraceConfig,
};
use crate::melnikov::{melnikov_plus, melnikov_plus_derivative, QuadratureBudget};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

/// Chart used on a flight segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChartKind {
    /// Reduced collision chart about the large primary, in regularized time.
    Reduced,
    /// Polar coordinates about the center of mass.
    PolarCm,
    /// McGehee chart at infinity.
    Infinity,
}

/// Radii at which a flight changes chart; the gaps between entry and exit radii prevent
/// chattering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchPolicy {
    /// Leave the reduced chart when the distance to the primary exceeds this multiple of `r*`.
    pub reduced_exit: f64,
    /// Enter the reduced chart below this multiple of `r*`.
    pub reduced_entry: f64,
    /// Enter the infinity chart above this center-of-mass radius.
    pub infinity_entry: f64,
    /// Leave the infinity chart below this radius.
    pub infinity_exit: f64,
    /// Stop and classify the motion beyond this radius.
    pub escape_radius: f64,
}

impl Default for SwitchPolicy {
    fn default() -> Self {
        Self { reduced_exit: 2.0, reduced_entry: 1.5, infinity_entry: 60.0, infinity_exit: 40.0, escape_radius: 1e3 }
    }
}

impl SwitchPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(1.0 < self.reduced_entry
            && self.reduced_entry < self.reduced_exit
            && self.infinity_exit < self.infinity_entry
            && self.infinity_entry < self.escape_radius
            && self.infinity_exit > 2.0)
        {
            return Err(Error::InvalidParameter("chart switching radii are not ordered".into()));
        }
        Ok(())
    }
}

/// Settings of a chart-switching flight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlightConfig {
    pub integrator: IntegratorConfig,
    pub policy: SwitchPolicy,
    /// Section parameter: `Sigma` is `r = delta^2` about the large primary.
    pub delta: f64,
    /// Budget in physical time.
    pub max_time: f64,
}

impl Default for FlightConfig {
    fn default() -> Self {
        Self { integrator: IntegratorConfig::default(), policy: SwitchPolicy::default(), delta: 0.2, max_time: 2e5 }
    }
}

/// How a flight ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlightEnd {
    /// Crossed the incoming section `r = delta^2`, `R < 0`, after having left its neighborhood.
    Section,
    /// Fell below the collision floor.
    Collision,
    /// Reached the escape radius.
    Escape,
    /// Ran out of time or steps.
    Timeout,
}

/// One chart's worth of a flight. Reduced segments carry physical time as a fourth column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Segment {
    pub chart: ChartKind,
    pub trajectory: Trajectory,
}

/// A flight across charts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Flight {
    pub segments: Vec<Segment>,
    pub end: FlightEnd,
    /// Physical time at the end.
    pub t_end: f64,
    /// Final state, polar about the large primary, with the angle continued along the flight.
    pub final_p1: Polar,
    /// Largest center-of-mass radius, refined at apocenters.
    pub r_max: f64,
    /// Smallest sampled distance to the small primary.
    pub p2_min: f64,
    /// Largest `|H - h|` over chart switches and the endpoints.
    pub energy_error: f64,
    /// Number of times the flight dropped back below `r = 5` after exceeding `r = 50`.
    pub far_returns: usize,
}

fn p1_distance(r: f64, theta: f64, mu: f64) -> f64 {
    (r * r + 2.0 * mu * r * theta.cos() + mu * mu).sqrt()
}

fn p2_distance(r: f64, theta: f64, mu: f64) -> f64 {
    (r * r - 2.0 * (1.0 - mu) * r * theta.cos() + (1.0 - mu) * (1.0 - mu)).sqrt()
}

/// Integrates forward in time from `start`, switching between the reduced chart near the large
/// primary, center-of-mass polar coordinates, and the chart at infinity. The incoming section
/// is armed once the orbit has been farther than `reduced_exit * r*` from the primary.
pub fn fly(start: ChartState, mu: f64, h: f64, cfg: &FlightConfig) -> Result<Flight> {
    cfg.policy.validate()?;
    cfg.integrator.validate()?;
    let pol = cfg.policy;
    let r_star = cfg.delta * cfg.delta;
    let delta = cfg.delta;
    let mut state = start;
    let mut t = 0.0;
    let mut armed = false;
    let mut segments = Vec::new();
    let mut r_max: f64 = 0.0;
    let mut p2_min = f64::INFINITY;
    let mut energy_error: f64 = 0.0;
    let mut far = false;
    let mut far_returns = 0;
    let energy = |s: ChartState| -> Result<f64> { Ok((s.hamiltonian(mu)? - h).abs()) };
    if !matches!(state, ChartState::Reduced(_)) {
        energy_error = energy_error.max(energy(state)?);
    }
    loop {
        if t >= cfg.max_time || segments.len() > 10_000 {
            let final_p1 = state.to_polar(Center::P1, mu)?;
            return Ok(Flight { segments, end: FlightEnd::Timeout, t_end: t, final_p1, r_max, p2_min, energy_error, far_returns });
        }
        match state {
            ChartState::Reduced(red) => {
                let field = Field::new(FieldId::Reduced, mu, h);
                let clocked = Clocked(&field);
                let s_exit = (pol.reduced_exit * r_star).sqrt();
                let events = [
                    EventSpec::terminal("leave", Direction::Rising, move |_, y: &[f64]| y[0] - s_exit),
                    EventSpec::terminal("capture", Direction::Falling, |_, y: &[f64]| y[0] - COLLISION_FLOOR),
                    EventSpec::terminal("section", Direction::Falling, move |_, y: &[f64]| if armed { y[0] - delta } else { 1.0 }),
                ];
                let y0 = [red.s, red.theta, red.alpha, t];
                let traj = integrate(&clocked, 0.0, &y0, 1e6, &cfg.integrator, &events)?;
                let y = traj.y_end().to_vec();
                t = y[3];
                let status = traj.status.clone();
                segments.push(Segment { chart: ChartKind::Reduced, trajectory: traj });
                let red = Reduced::on_shell(y[0].max(0.0), y[1], y[2], mu, h)?;
                match status {
                    Termination::Event(0) => {
                        let p = red.to_regularized(mu)?.to_polar(mu)?.p1_to_cm(mu)?;
                        state = ChartState::Polar(p);
                        armed = true;
                    }
                    Termination::Event(1) | Termination::Event(2) => {
                        let end = if status == Termination::Event(1) { FlightEnd::Collision } else { FlightEnd::Section };
                        let final_p1 = if end == FlightEnd::Section {
                            let p = red.to_regularized(mu)?.to_polar(mu)?;
                            energy_error = energy_error.max(energy(ChartState::Polar(p))?);
                            p
                        } else {
                            Polar { center: Center::P1, r: y[0] * y[0], theta: y[1], pr: f64::NEG_INFINITY, ptheta: f64::NAN }
                        };
                        return Ok(Flight { segments, end, t_end: t, final_p1, r_max, p2_min, energy_error, far_returns });
                    }
                    _ => {
                        state = ChartState::Reduced(red);
                        if t < cfg.max_time {
                            return Err(Error::Numerical(format!("reduced segment stopped with {status:?}")));
                        }
                    }
                }
            }
            ChartState::Polar(p) => {
                let p = p.recenter(Center::Cm, mu)?;
                let field = Field::new(FieldId::PolarCm, mu, h);
                let r_entry = pol.reduced_entry * r_star;
                let events = [
                    EventSpec::terminal("reduced", Direction::Falling, move |_, y: &[f64]| p1_distance(y[0], y[1], mu) - r_entry),
                    EventSpec::terminal("infinity", Direction::Rising, move |_, y: &[f64]| y[0] - pol.infinity_entry),
                    EventSpec::new("apocenter", Direction::Falling, |_, y: &[f64]| y[2]),
                ];
                let traj = integrate(&field, t, &p.to_array(), cfg.max_time, &cfg.integrator, &events)?;
                for y in &traj.states {
                    r_max = r_max.max(y[0]);
                    p2_min = p2_min.min(p2_distance(y[0], y[1], mu));
                    if y[0] > 50.0 {
                        far = true;
                    } else if far && y[0] < 5.0 {
                        far = false;
                        far_returns += 1;
                    }
                }
                for e in traj.hits_of(2) {
                    r_max = r_max.max(e.y[0]);
                }
                let y = Polar::from_array(Center::Cm, traj.y_end());
                t = traj.t_end();
                let status = traj.status.clone();
                segments.push(Segment { chart: ChartKind::PolarCm, trajectory: traj });
                energy_error = energy_error.max(energy(ChartState::Polar(y))?);
                state = match status {
                    Termination::Event(0) => {
                        let reg = y.cm_to_p1(mu)?.to_regularized(mu)?;
                        ChartState::Reduced(reg.to_reduced(mu, h, 1e-7)?)
                    }
                    Termination::Event(1) => ChartState::Infinity(y.to_infinity()?),
                    _ => ChartState::Polar(y),
                };
            }
            ChartState::Infinity(inf) => {
                let field = Field::new(FieldId::Infinity, mu, h);
                let xi_exit = (2.0 / pol.infinity_exit).sqrt();
                let xi_escape = (2.0 / pol.escape_radius).sqrt();
                let events = [
                    EventSpec::terminal("polar", Direction::Rising, move |_, y: &[f64]| y[0] - xi_exit),
                    EventSpec::terminal("escape", Direction::Falling, move |_, y: &[f64]| y[0] - xi_escape),
                    EventSpec::new("apocenter", Direction::Falling, |_, y: &[f64]| y[2]),
                ];
                let traj = integrate(&field, t, &inf.to_array(), cfg.max_time, &cfg.integrator, &events)?;
                far = true;
                for y in &traj.states {
                    r_max = r_max.max(2.0 / (y[0] * y[0]));
                }
                for e in traj.hits_of(2) {
                    r_max = r_max.max(2.0 / (e.y[0] * e.y[0]));
                }
                let y = crate::charts::Infinity::from_array(traj.y_end());
                t = traj.t_end();
                let status = traj.status.clone();
                segments.push(Segment { chart: ChartKind::Infinity, trajectory: traj });
                energy_error = energy_error.max(energy(ChartState::Infinity(y))?);
                match status {
                    Termination::Event(0) => state = ChartState::Polar(y.to_polar()?),
                    Termination::Event(1) => {
                        let final_p1 = y.to_polar()?.cm_to_p1(mu)?;
                        return Ok(Flight { segments, end: FlightEnd::Escape, t_end: t, final_p1, r_max, p2_min, energy_error, far_returns });
                    }
                    _ => state = ChartState::Infinity(y),
                }
            }
            other => state = ChartState::Polar(other.to_polar(Center::Cm, mu)?),
        }
    }
}

/// Settings of the ejection-collision orbit search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcoConfig {
    pub flight: FlightConfig,
    pub trace: TraceConfig,
    /// Number of ejection fibers in the initial scan over the circle.
    pub seeds: usize,
    /// Maximum radius at which the march along the ejection curve starts.
    pub start_radius: f64,
    /// Largest change of the return angle between consecutive march points.
    pub max_phase_step: f64,
    /// Matching tolerance on the angular momentum at the return section.
    pub tol: f64,
    pub max_iter: usize,
    /// Upper bound on the number of march steps.
    pub max_steps: usize,
}

impl Default for EcoConfig {
    fn default() -> Self {
        Self {
            flight: FlightConfig::default(),
            trace: TraceConfig::default(),
            seeds: 200,
            start_radius: 100.0,
            max_phase_step: 0.5,
            tol: 1e-8,
            max_iter: 80,
            max_steps: 100_000,
        }
    }
}

impl EcoConfig {
    pub fn validate(&self) -> Result<()> {
        self.flight.policy.validate()?;
        self.trace.validate()?;
        if self.seeds < 8 || !(self.start_radius > 2.0) || !(self.max_phase_step > 0.0 && self.max_phase_step < 3.0) || !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("eco search settings out of range".into()));
        }
        Ok(())
    }
}

/// An ejection-collision orbit from `S+` to `S-` with one large excursion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EcoOrbit {
    pub mu: f64,
    pub h: f64,
    /// Base angle of the ejection fiber on `S+`.
    pub theta_bar_plus: f64,
    /// Base angle of the collision fiber on `S-`.
    pub theta_bar_minus: f64,
    /// Position of this orbit in the sequence of intersections along the march, from 1.
    pub k: usize,
    /// Number of full turns of the return angle since the start of the march.
    pub winding: i64,
    pub r_max: f64,
    /// `Theta` mismatch with `W^s(S-)` at the return section.
    pub residual: f64,
    /// Return point on the incoming section, with the angle continued along the flight.
    pub section_theta: f64,
    pub section_ptheta: f64,
    /// Flight from the ejection seed to the collision seed; the last segment is the collision
    /// fiber of `W^s(S-)`.
    pub flight: Flight,
}

impl EcoOrbit {
    /// The orbit under the reversibility involution, traversed in reverse: an ejection-collision
    /// orbit of the mirror fibers.
    pub fn reversed(&self) -> EcoOrbit {
        let t_end = self.flight.t_end;
        let mut segments: Vec<Segment> = self.flight.segments.iter().rev().map(|seg| reverse_segment(seg, t_end)).collect();
        segments.iter_mut().for_each(|s| s.trajectory.hits.clear());
        let last = segments.last().expect("an orbit has segments").trajectory.y_end().to_vec();
        let final_p1 = Polar { center: Center::P1, r: last[0] * last[0], theta: last[1], pr: f64::NEG_INFINITY, ptheta: f64::NAN };
        EcoOrbit {
            theta_bar_plus: -self.theta_bar_minus,
            theta_bar_minus: -self.theta_bar_plus,
            section_theta: -self.section_theta,
            flight: Flight { segments, final_p1, ..self.flight.clone() },
            ..self.clone()
        }
    }
}

fn reverse_segment(seg: &Segment, t_end: f64) -> Segment {
    let tr = &seg.trajectory;
    let tau_end = tr.t_end();
    let mut out = tr.clone();
    out.times = tr.times.iter().rev().map(|t| match seg.chart {
        ChartKind::Reduced => tau_end - t,
        _ => t_end - t,
    }).collect();
    out.states = tr
        .states
        .iter()
        .rev()
        .map(|y| match seg.chart {
            ChartKind::Reduced => vec![y[0], -y[1], -y[2], t_end - y[3]],
            _ => vec![y[0], -y[1], -y[2], y[3]],
        })
        .collect();
    out.drift = tr.drift.iter().rev().copied().collect();
    Segment { chart: seg.chart, trajectory: out }
}

/// Flight of the ejection fiber `theta_bar` of `W^u(S+)` to its first return to the incoming
/// section.
pub fn ejection_flight(theta_bar: f64, mu: f64, h: f64, cfg: &FlightConfig) -> Result<Flight> {
    let red = FiberSeed::new(Circle::SPlus, theta_bar).reduced_plus(mu, h)?;
    fly(ChartState::Reduced(red), mu, h, cfg)
}

#[derive(Debug, Clone)]
struct ReturnSample {
    theta_bar: f64,
    phase: f64,
    residual: f64,
    r_max: f64,
    flight: Flight,
    fiber: f64,
}

fn return_sample(theta_bar: f64, mu: f64, h: f64, cfg: &EcoConfig) -> Result<ReturnSample> {
    let flight = ejection_flight(theta_bar, mu, h, &cfg.flight)?;
    if flight.end != FlightEnd::Section {
        return Err(Error::NotFound(format!("ejection fiber {theta_bar} does not return ({:?})", flight.end)));
    }
    let p = flight.final_p1;
    let section = SectionSpec::new(cfg.flight.delta, h, Branch::Incoming);
    let (fiber, q) = collision_section_fiber(Circle::SMinus, wrap_angle(p.theta), mu, &section, &cfg.trace)?;
    if q.flag != PointFlag::Ok {
        return Err(Error::Domain(format!("collision fiber at theta = {} flagged {:?}", p.theta, q.flag)));
    }
    Ok(ReturnSample { theta_bar, phase: p.theta, residual: p.ptheta - q.ptheta, r_max: flight.r_max, flight, fiber })
}

/// Locates the ejection fiber whose first return reaches `start_radius`, on the side of the
/// returning band that borders escape. Returns the fiber and the direction of the march.
fn march_start(mu: f64, h: f64, cfg: &EcoConfig) -> Result<(f64, f64)> {
    let n = cfg.seeds;
    let grid: Vec<f64> = (0..n).map(|i| -PI + 2.0 * PI * i as f64 / n as f64).collect();
    let flights: Vec<Option<Flight>> = grid.par_iter().map(|&tb| ejection_flight(tb, mu, h, &cfg.flight).ok()).collect();
    let returns = |f: &Option<Flight>| matches!(f, Some(f) if f.end == FlightEnd::Section);
    let escapes = |f: &Option<Flight>| matches!(f, Some(f) if f.end == FlightEnd::Escape);
    let far = 0.5 * cfg.flight.policy.escape_radius;
    for i in 0..n {
        for dir in [1isize, -1] {
            let j = (i as isize + dir).rem_euclid(n as isize) as usize;
            let fi = &flights[i];
            if !(returns(fi) && escapes(&flights[j]) && fi.as_ref().is_some_and(|f| f.r_max > far)) {
                continue;
            }
            let mut a = i;
            loop {
                let b = (a as isize - dir).rem_euclid(n as isize) as usize;
                if b == i || !returns(&flights[b]) {
                    break;
                }
                let (ra, rb) = (flights[a].as_ref().map_or(0.0, |f| f.r_max), flights[b].as_ref().map_or(0.0, |f| f.r_max));
                if rb >= ra {
                    break;
                }
                if rb <= cfg.start_radius {
                    let (mut lo, mut hi) = (grid[b], grid[a]);
                    if (hi - lo).abs() > PI {
                        hi += 2.0 * PI * (lo - hi).signum();
                    }
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        let f = ejection_flight(mid, mu, h, &cfg.flight)?;
                        if f.end != FlightEnd::Escape && f.r_max <= cfg.start_radius {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                        if (hi - lo).abs() < 1e-12 {
                            break;
                        }
                    }
                    return Ok((lo, dir as f64));
                }
                a = b;
            }
        }
    }
    Err(Error::NotFound(format!("no returning band reaching r = {} borders escape", cfg.start_radius)))
}

/// Ejection-collision orbits `S+ -> S-` with successively longer excursions.
///
/// The unstable fibers of `S+` are marched toward the boundary of the band that returns to the
/// section, which is where the ejection curve meets the stable manifold of infinity. Along the
/// march the return angle winds around the circle ever faster. Each sign change of the
/// angular momentum mismatch with `W^s(S-)` on the incoming section is refined to an orbit.
/// Returns the orbits found within the step budget, at most `count`.
pub fn find_ecos(mu: f64, h: f64, count: usize, cfg: &EcoConfig) -> Result<Vec<EcoOrbit>> {
    cfg.validate()?;
    MassRatio::new(mu)?;
    let (start, dir) = march_start(mu, h, cfg)?;
    let mut x = start;
    let mut step = 1e-6 * dir;
    let mut prev: Option<ReturnSample> = None;
    let mut phase0 = None;
    let mut out = Vec::new();
    for _ in 0..cfg.max_steps {
        if out.len() >= count {
            break;
        }
        let next = return_sample(x + step, mu, h, cfg).ok().filter(|s| s.flight.p2_min >= cfg.trace.p2_exclusion);
        let Some(next) = next else {
            x += step;
            prev = None;
            continue;
        };
        let Some(last) = prev.take() else {
            x = next.theta_bar;
            phase0.get_or_insert(next.phase);
            prev = Some(next);
            continue;
        };
        let jump = (next.phase - last.phase).abs();
        if jump > 2.0 * cfg.max_phase_step && step.abs() > 1e-12 {
            step *= 0.5;
            prev = Some(last);
            continue;
        }
        if last.residual.signum() != next.residual.signum() {
            if let Some(mut eco) = refine_eco(&last, &next, mu, h, cfg)? {
                eco.k = out.len() + 1;
                eco.winding = ((phase0.unwrap_or(last.phase) - eco.section_theta) / (2.0 * PI)).floor() as i64;
                out.push(eco);
            }
        }
        step *= (cfg.max_phase_step / jump.max(1e-300)).clamp(0.5, 2.0);
        x = next.theta_bar;
        prev = Some(next);
    }
    Ok(out)
}

fn refine_eco(a: &ReturnSample, b: &ReturnSample, mu: f64, h: f64, cfg: &EcoConfig) -> Result<Option<EcoOrbit>> {
    let (mut lo, mut hi) = (a.clone(), b.clone());
    let mut side = 0i8;
    for _ in 0..cfg.max_iter {
        let best = if lo.residual.abs() < hi.residual.abs() { &lo } else { &hi };
        if best.residual.abs() < cfg.tol {
            return finish_eco(best.clone(), mu, h, cfg).map(Some);
        }
        let x = (lo.theta_bar * hi.residual - hi.theta_bar * lo.residual) / (hi.residual - lo.residual);
        let x = if x.is_finite() && (x - lo.theta_bar) * (x - hi.theta_bar) < 0.0 { x } else { 0.5 * (lo.theta_bar + hi.theta_bar) };
        if x == lo.theta_bar || x == hi.theta_bar {
            break;
        }
        let Some(m) = return_sample(x, mu, h, cfg).ok().filter(|s| s.flight.p2_min >= cfg.trace.p2_exclusion) else {
            return Ok(None);
        };
        if m.residual.signum() == lo.residual.signum() {
            lo = m;
            if side == -1 {
                hi.residual *= 0.5;
            }
            side = -1;
        } else {
            hi = m;
            if side == 1 {
                lo.residual *= 0.5;
            }
            side = 1;
        }
    }
    Ok(None)
}

fn finish_eco(s: ReturnSample, mu: f64, h: f64, cfg: &EcoConfig) -> Result<EcoOrbit> {
    let seed = FiberSeed::new(Circle::SMinus, s.fiber);
    let section = SectionSpec::new(cfg.flight.delta, h, Branch::Incoming);
    let leg = trace_collision_manifold(&seed, mu, &section, &cfg.trace)?;
    let section_ptheta = s.flight.final_p1.ptheta;
    let mut flight = s.flight;
    let t_section = flight.t_end;
    let tr = &leg.trajectory;
    let tau_first = tr.t_end();
    let t_first = tr.y_end()[3];
    let mut seg = tr.clone();
    seg.times = tr.times.iter().rev().map(|t| t - tau_first).collect();
    seg.states = tr.states.iter().rev().map(|y| vec![y[0], y[1], y[2], t_section + y[3] - t_first]).collect();
    seg.drift = tr.drift.iter().rev().copied().collect();
    seg.hits.clear();
    let last = seg.states.last().expect("collision leg holds its seed").clone();
    let lift = s.phase - seg.states[0][1];
    let turns = (lift / (2.0 * PI)).round() * 2.0 * PI;
    for y in &mut seg.states {
        y[1] += turns;
    }
    flight.t_end = t_section + last[3] - t_first;
    flight.final_p1 = Polar { center: Center::P1, r: last[0] * last[0], theta: last[1] + turns, pr: f64::NEG_INFINITY, ptheta: f64::NAN };
    flight.end = FlightEnd::Collision;
    flight.segments.push(Segment { chart: ChartKind::Reduced, trajectory: seg });
    Ok(EcoOrbit {
        mu,
        h,
        theta_bar_plus: s.theta_bar,
        theta_bar_minus: s.fiber,
        k: 0,
        winding: 0,
        r_max: s.r_max,
        residual: s.residual.abs(),
        section_theta: s.phase,
        section_ptheta,
        flight,
    })
}

/// Settings of the triple-intersection solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripleConfig {
    pub trace: TraceConfig,
    pub budget: QuadratureBudget,
    /// The root of `d+` is searched in `theta_guess + [-below, above]`, clipped to the graph
    /// domain.
    pub below: f64,
    pub above: f64,
    /// Step of the central differences for the section slopes.
    pub slope_step: f64,
    /// Tolerance on `theta_>^u - theta_>`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TripleConfig {
    fn default() -> Self {
        Self { trace: TraceConfig::default(), budget: QuadratureBudget::default(), below: 0.04, above: 0.04, slope_step: 1e-3, tol: 1e-12, max_iter: 30 }
    }
}

/// Energy of a triple intersection of `W^u(S+)`, `W^u(Lambda)` and `W^s(Lambda)`, with the
/// section slopes of the three curves at the intersection point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripleIntersectionResult {
    pub mu: f64,
    pub delta: f64,
    pub theta_hat_0: f64,
    pub h_star: f64,
    /// `M+(0)`, for comparison with `h_star / mu`.
    pub melnikov_0: f64,
    pub theta_gt: f64,
    pub theta_lt: f64,
    /// Image of `p_<` under the continuous extension of the transition map.
    pub theta_gt_u: f64,
    pub ptheta_gt: f64,
    /// Slope of `W^s(Lambda)` on the outgoing section.
    pub slope_infinity_stable: f64,
    /// Slope of `W^u(S+)` on the outgoing section.
    pub slope_collision_unstable: f64,
    /// Slope of the transition image of `W^u(Lambda)` on the outgoing section.
    pub slope_infinity_unstable: f64,
    pub angle_a: f64,
    pub angle_b: f64,
    pub d_plus_slope: f64,
    pub d_minus_slope: f64,
    pub iterations: usize,
    pub mismatch: f64,
}

impl TripleIntersectionResult {
    /// `-pi/2 < A < B < 0`.
    pub fn angles_ordered(&self) -> bool {
        -FRAC_PI_2 < self.angle_a && self.angle_a < self.angle_b && self.angle_b < 0.0
    }

    /// `|d+' + d-'| / |d+'|` at `theta_>`.
    pub fn slope_asymmetry(&self) -> f64 {
        (self.d_plus_slope + self.d_minus_slope).abs() / self.d_plus_slope.abs()
    }
}

struct TripleEval {
    plus: Intersection,
    minus: Intersection,
    theta_gt_u: f64,
}

fn domain_bracket(center: f64, side: Side, delta: f64, cfg: &TripleConfig) -> (f64, f64) {
    let (mut a, mut b) = (center - cfg.below, center + cfg.above);
    let inside = |x: f64| in_distance_domain(x, side, delta, cfg.trace.window);
    while !inside(a) && a < center {
        a = 0.5 * (a + center);
    }
    while !inside(b) && b > center {
        b = 0.5 * (b + center);
    }
    (a, b)
}

fn transit_image(p: &SectionPoint, st: &SectionStraightening, cfg: &TripleConfig) -> Result<Polar> {
    let red = p.to_polar(st.delta * st.delta).to_regularized(st.mu)?.to_reduced(st.mu, st.h, 1e-9)?;
    let m = st.minus_coords(&red)?;
    let out = transit(m.angle, m.fiber, st, &cfg.trace.integrator)?;
    st.plus_state(out.iota_out, out.w_out)?.to_regularized(st.mu)?.to_polar(st.mu)
}

fn triple_eval(mu: f64, delta: f64, theta_hat_0: f64, guess: f64, cfg: &TripleConfig) -> Result<TripleEval> {
    let plus = find_transverse_intersection(Side::Plus, mu, theta_hat_0, domain_bracket(guess, Side::Plus, delta, cfg), delta, &cfg.trace)?;
    let minus = find_transverse_intersection(Side::Minus, mu, theta_hat_0, domain_bracket(-guess, Side::Minus, delta, cfg), delta, &cfg.trace)?;
    let st = SectionStraightening { mu, h: -theta_hat_0, delta, trace: cfg.trace };
    let image = transit_image(&minus.point.collision, &st, cfg)?;
    Ok(TripleEval { plus, minus, theta_gt_u: wrap_angle(image.theta) })
}

/// Solves for `Theta_hat_0` such that the transition map sends `p_<` (where `W^u(Lambda)` meets
/// `W^s(S-)`) to `p_>` (where `W^s(Lambda)` meets `W^u(S+)`), by a secant iteration started at
/// the first-order value `-mu M+(0)`.
pub fn find_triple_energy(mu: f64, delta: f64, cfg: &TripleConfig) -> Result<TripleIntersectionResult> {
    MassRatio::new(mu)?;
    if !(delta > 0.0 && delta < 0.5 && mu < delta * delta) {
        return Err(Error::InvalidParameter(format!("need mu << delta^2 < 1/4, got mu = {mu}, delta = {delta}")));
    }
    cfg.trace.validate()?;
    let m_0 = melnikov_plus(0.0, &cfg.budget)?.value;
    let m_1 = melnikov_plus_derivative(0.0, &cfg.budget)?.value;
    let w = w_sigma(delta);
    let mut x0 = -mu * m_0;
    let mut guess = -w;
    let mut e0 = triple_eval(mu, delta, x0, guess, cfg)?;
    let mut f0 = wrap_angle(e0.theta_gt_u - e0.plus.theta);
    let mut x1 = x0 - f0 * mu * m_1 / 2.0;
    let mut iterations = 1;
    while f0.abs() > cfg.tol && iterations < cfg.max_iter {
        guess = e0.plus.theta;
        let e1 = triple_eval(mu, delta, x1, guess, cfg)?;
        let f1 = wrap_angle(e1.theta_gt_u - e1.plus.theta);
        iterations += 1;
        let slope = (f1 - f0) / (x1 - x0);
        let next = if slope.is_finite() && slope != 0.0 { x1 - f1 / slope } else { x1 - f1 * mu * m_1 / 2.0 };
        x0 = x1;
        f0 = f1;
        e0 = e1;
        if next == x1 {
            break;
        }
        x1 = next;
    }
    if f0.abs() > cfg.tol.max(1e-9) {
        return Err(Error::Numerical(format!("triple intersection mismatch {f0:e} after {iterations} iterations")));
    }
    let theta_hat_0 = x0;
    let h = -theta_hat_0;
    let theta_gt = e0.plus.theta;
    let eps = cfg.slope_step;
    let section = SectionSpec::new(delta, h, Branch::Outgoing);
    let central = |f: &dyn Fn(f64) -> Result<f64>| -> Result<f64> { Ok((f(theta_gt + eps)? - f(theta_gt - eps)?) / (2.0 * eps)) };
    let m_s = central(&|t| infinity_section_point(true, t, mu, theta_hat_0, delta, &cfg.trace).map(|p| p.ptheta))?;
    let m_c = central(&|t| collision_section_point(Circle::SPlus, t, mu, &section, &cfg.trace).map(|p| p.ptheta))?;
    let st = SectionStraightening { mu, h, delta, trace: cfg.trace };
    let image = |t: f64| -> Result<Polar> {
        let p = infinity_section_point(false, t, mu, theta_hat_0, delta, &cfg.trace)?;
        transit_image(&p, &st, cfg)
    };
    let theta_lt = e0.minus.theta;
    let (qa, qb) = (image(theta_lt - eps)?, image(theta_lt + eps)?);
    let m_u = (qb.ptheta - qa.ptheta) / wrap_angle(qb.theta - qa.theta);
    let angle = |m: f64| ((m - m_u) / ((1.0 + m * m) * (1.0 + m_u * m_u)).sqrt()).asin();
    let d_minus = |t: f64| distance(t, Side::Minus, mu, theta_hat_0, delta, &cfg.trace).map(|e| e.value);
    let d_minus_slope = central(&d_minus)?;
    Ok(TripleIntersectionResult {
        mu,
        delta,
        theta_hat_0,
        h_star: h,
        melnikov_0: m_0,
        theta_gt,
        theta_lt,
        theta_gt_u: e0.theta_gt_u,
        ptheta_gt: e0.plus.point.collision.ptheta,
        slope_infinity_stable: m_s,
        slope_collision_unstable: m_c,
        slope_infinity_unstable: m_u,
        angle_a: angle(m_s),
        angle_b: angle(m_c),
        d_plus_slope: e0.plus.slope,
        d_minus_slope,
        iterations,
        mismatch: f0,
    })
}

/// Asymptotic class of a motion, decided on a finite horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinalMotion {
    Hyperbolic,
    Parabolic,
    Bounded,
    Oscillatory,
    Collision,
    Undecided,
}

/// Finite-horizon classification of a flight: collision if it ended in the collision floor;
/// hyperbolic or parabolic if it reached the escape radius with two-body asymptotic speed above
/// `0.1` or below `0.02`; bounded if it stayed below `r = 50`; oscillatory if it went beyond
/// `r = 50` and came back below `r = 5` at least twice; otherwise undecided.
pub fn classify_final_motion(flight: &Flight) -> FinalMotion {
    match flight.end {
        FlightEnd::Collision => return FinalMotion::Collision,
        FlightEnd::Escape => {
            let p = flight.final_p1;
            let kepler = 0.5 * (p.pr * p.pr + p.ptheta * p.ptheta / (p.r * p.r)) - 1.0 / p.r;
            let v_inf = (2.0 * kepler).max(0.0).sqrt();
            return if v_inf > 0.1 {
                FinalMotion::Hyperbolic
            } else if v_inf < 0.02 {
                FinalMotion::Parabolic
            } else {
                FinalMotion::Undecided
            };
        }
        _ => {}
    }
    if flight.r_max < 50.0 {
        FinalMotion::Bounded
    } else if flight.far_returns >= 2 {
        FinalMotion::Oscillatory
    } else {
        FinalMotion::Undecided
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parabolic_orbit_is_parabolic() {
        let start = ChartState::Polar(Polar { center: Center::P1, r: 1.0, theta: 0.3, pr: 2f64.sqrt(), ptheta: 0.0 });
        let f = fly(start, 0.0, 0.0, &FlightConfig::default()).unwrap();
        assert_eq!(f.end, FlightEnd::Escape);
        assert!(f.energy_error < 1e-10);
        assert_eq!(classify_final_motion(&f), FinalMotion::Parabolic);
    }

    #[test]
    fn circular_orbit_is_bounded() {
        let start = ChartState::Polar(Polar { center: Center::P1, r: 1.0, theta: 0.0, pr: 0.0, ptheta: 1.0 });
        let h = start.hamiltonian(0.0).unwrap();
        let cfg = FlightConfig { max_time: 200.0, ..FlightConfig::default() };
        let f = fly(start, 0.0, h, &cfg).unwrap();
        assert_eq!(f.end, FlightEnd::Timeout);
        assert!((f.r_max - 1.0).abs() < 1e-9);
        assert_eq!(classify_final_motion(&f), FinalMotion::Bounded);
    }

    #[test]
    fn hyperbolic_orbit_is_hyperbolic() {
        let start = ChartState::Polar(Polar { center: Center::P1, r: 1.0, theta: 0.0, pr: 1.6, ptheta: 0.0 });
        let h = start.hamiltonian(0.0).unwrap();
        let f = fly(start, 0.0, h, &FlightConfig::default()).unwrap();
        assert_eq!(classify_final_motion(&f), FinalMotion::Hyperbolic);
    }

    #[test]
    fn ecos_match_grow_and_reverse() {
        let cfg = EcoConfig::default();
        let ecos = find_ecos(1e-3, 0.0, 3, &cfg).unwrap();
        assert_eq!(ecos.len(), 3);
        for pair in ecos.windows(2) {
            assert!(pair[1].r_max > pair[0].r_max);
            assert!(pair[1].flight.t_end > pair[0].flight.t_end);
        }
        for e in &ecos {
            assert!(e.residual < cfg.tol);
            assert!(e.flight.energy_error < 1e-8);
            assert_eq!(classify_final_motion(&e.flight), FinalMotion::Collision);
            let last = e.flight.segments.last().unwrap().trajectory.y_end();
            assert!((last[0] - 1e-4).abs() < 1e-12 && (last[2] + FRAC_PI_2).abs() < 1e-6);

            let rev = e.reversed();
            assert_eq!(classify_final_motion(&rev.flight), FinalMotion::Collision);
            let first = &rev.flight.segments[0].trajectory.states[0];
            assert!((first[2] - FRAC_PI_2).abs() < 1e-6);
            assert!(wrap_angle(first[1] + e.theta_bar_minus).abs() < 1e-3);
            // The flight amplifies fiber errors by the winding rate, so the mirror orbit is
            // refined from a small bracket around the mirrored fiber.
            let a = return_sample(rev.theta_bar_plus - 1e-7, 1e-3, 0.0, &cfg).unwrap();
            let b = return_sample(rev.theta_bar_plus + 1e-7, 1e-3, 0.0, &cfg).unwrap();
            let mirror = refine_eco(&a, &b, 1e-3, 0.0, &cfg).unwrap().expect("mirror orbit");
            assert!((mirror.theta_bar_plus - rev.theta_bar_plus).abs() < 1e-7);
            assert!((mirror.theta_bar_minus - rev.theta_bar_minus).abs() < 1e-6);
            assert!((mirror.r_max - e.r_max).abs() < 1e-4);
        }
    }

    #[test]
    fn reversed_segments_run_backward_in_time() {
        let ecos = find_ecos(1e-3, 0.0, 1, &EcoConfig::default()).unwrap();
        let rev = ecos[0].reversed();
        let mut t_prev = f64::NEG_INFINITY;
        for seg in &rev.flight.segments {
            let tr = &seg.trajectory;
            let clock: Vec<f64> = match seg.chart {
                ChartKind::Reduced => tr.states.iter().map(|y| y[3]).collect(),
                _ => tr.times.clone(),
            };
            assert!(clock.windows(2).all(|w| w[1] >= w[0]));
            assert!(clock[0] >= t_prev - 1e-9);
            t_prev = *clock.last().unwrap();
        }
        assert!((t_prev - ecos[0].flight.t_end).abs() < 1e-9);
    }

    #[test]
    fn triple_energy_follows_the_melnikov_value() {
        let r = find_triple_energy(1e-4, 0.1, &TripleConfig::default()).unwrap();
        assert!((r.h_star / r.mu - r.melnikov_0).abs() < 0.5);
        assert!(r.angles_ordered(), "A = {}, B = {}", r.angle_a, r.angle_b);
        assert!(r.slope_asymmetry() < 0.1);
        assert!(r.mismatch.abs() < 1e-9);
        // Reversibility makes the two intersection points mirror images.
        assert!((r.theta_gt + r.theta_lt).abs() < 1e-9);
        // First order: the triple point sits on the fiber with base angle zero.
        assert!((r.theta_gt + w_sigma(0.1)).abs() < 10.0 * r.mu);
    }

    #[test]
    fn invalid_settings_are_rejected() {
        assert!(find_triple_energy(1e-4, 0.9, &TripleConfig::default()).is_err());
        let bad = EcoConfig { seeds: 2, ..EcoConfig::default() };
        assert!(find_ecos(1e-3, 0.0, 1, &bad).is_err());
        let policy = SwitchPolicy { reduced_entry: 3.0, ..SwitchPolicy::default() };
        let cfg = FlightConfig { policy, ..FlightConfig::default() };
        let start = ChartState::Polar(Polar { center: Center::P1, r: 1.0, theta: 0.0, pr: 0.0, ptheta: 1.0 });
        assert!(fly(start, 0.0, 0.0, &cfg).is_err());
    }
}
