//! Adaptive integration with dense output, Poincare-section event location, and
//! time-reparameterization bookkeeping.

mod coefficients;
pub mod dop853;

use crate::charts::Reduced;
use crate::error::{Error, Result};
use crate::fields::{Field, FieldId};
use dop853::{DenseStep, StepOutcome, Stepper};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// A system `dy/dt = f(t, y)`.
pub trait VectorField: Sync {
    /// Phase-space dimension.
    fn dim(&self) -> usize;
    /// Writes `f(t, y)` into `dy`.
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]);
    /// Value of a first integral at `y`, if the system has one.
    fn first_integral(&self, _y: &[f64]) -> Option<f64> {
        None
    }
    /// Whether `y` lies in the domain where the field may be evaluated.
    fn in_domain(&self, _y: &[f64]) -> bool {
        true
    }
    /// Rate of physical time with respect to the system's own time variable.
    fn time_rate(&self, _y: &[f64]) -> f64 {
        1.0
    }
}

/// Appends physical time as an extra component, so `tau`-charts track `t` exactly.
pub struct Clocked<'a, F: VectorField + ?Sized>(pub &'a F);

impl<F: VectorField + ?Sized> VectorField for Clocked<'_, F> {
    fn dim(&self) -> usize {
        self.0.dim() + 1
    }
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.0.dim();
        self.0.eval(t, &y[..n], &mut dy[..n]);
        dy[n] = self.0.time_rate(&y[..n]);
    }
    fn first_integral(&self, y: &[f64]) -> Option<f64> {
        self.0.first_integral(&y[..self.0.dim()])
    }
    fn in_domain(&self, y: &[f64]) -> bool {
        self.0.in_domain(&y[..self.0.dim()])
    }
}

/// Tolerances and limits of an integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    /// Upper bound on accepted steps before truncation.
    pub max_steps: usize,
    /// Required accuracy of event function values at located events.
    pub event_tol: f64,
    /// Record every accepted step (otherwise only endpoints and events are kept).
    pub record: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { rel_tol: 1e-12, abs_tol: 1e-12, max_step: f64::INFINITY, max_steps: 5_000_000, event_tol: 1e-12, record: true }
    }
}

impl IntegratorConfig {
    /// Validates the tolerances.
    pub fn validate(&self) -> Result<()> {
        if self.rel_tol > 0.0 && self.abs_tol > 0.0 && self.event_tol > 0.0 && self.max_step > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter("integrator tolerances must be positive".into()))
        }
    }
}

/// Crossing direction selected by an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// `g` crosses from negative to positive.
    Rising,
    /// `g` crosses from positive to negative.
    Falling,
    /// Either direction.
    Any,
}

/// Event function type.
pub type EventFn<'a> = Box<dyn Fn(f64, &[f64]) -> f64 + Sync + 'a>;

/// A scalar event `g(t, y) = 0`.
pub struct EventSpec<'a> {
    pub name: String,
    pub g: EventFn<'a>,
    pub direction: Direction,
    /// Stop the integration once `max_hits` transversal hits are recorded.
    pub terminal: bool,
    /// Counted hits after which the event stops recording (or terminates); `0` means unlimited.
    pub max_hits: usize,
}

impl<'a> EventSpec<'a> {
    /// A non-terminal event.
    pub fn new(name: &str, direction: Direction, g: impl Fn(f64, &[f64]) -> f64 + Sync + 'a) -> Self {
        Self { name: name.to_string(), g: Box::new(g), direction, terminal: false, max_hits: 0 }
    }

    /// A terminal event stopping at the first transversal hit.
    pub fn terminal(name: &str, direction: Direction, g: impl Fn(f64, &[f64]) -> f64 + Sync + 'a) -> Self {
        Self { name: name.to_string(), g: Box::new(g), direction, terminal: true, max_hits: 1 }
    }
}

/// A located event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventHit {
    /// Index of the event in the list passed to [`integrate`].
    pub event: usize,
    pub t: f64,
    pub y: Vec<f64>,
    /// Sign of the crossing (`+1` rising, `-1` falling).
    pub sign: f64,
    /// Near-tangential double crossing inside one step; not counted toward `max_hits`.
    pub grazing: bool,
}

/// Why an integration stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Termination {
    /// Reached the end of the requested span.
    Completed,
    /// A terminal event fired.
    Event(usize),
    /// Maximum number of steps reached.
    MaxSteps,
    /// The step size underflowed (typically near a singularity).
    StepUnderflow,
    /// The next state would leave the field's domain.
    DomainExit,
}

/// Dense time series produced by [`integrate`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// First-integral value minus its initial value at each recorded state.
    pub drift: Vec<f64>,
    /// Largest absolute first-integral drift over all accepted steps.
    pub max_drift: f64,
    pub hits: Vec<EventHit>,
    pub status: Termination,
    pub steps: usize,
    pub rejected: usize,
    pub nfev: usize,
}

impl Trajectory {
    /// Final time.
    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("trajectory holds at least the initial state")
    }

    /// Final state.
    pub fn y_end(&self) -> &[f64] {
        self.states.last().expect("trajectory holds at least the initial state")
    }

    /// Non-grazing hits of event `k`.
    pub fn hits_of(&self, k: usize) -> impl Iterator<Item = &EventHit> {
        self.hits.iter().filter(move |h| h.event == k && !h.grazing)
    }

    /// Writes the trajectory as CSV with columns `time, <columns...>, drift`.
    pub fn write_csv<W: Write>(&self, mut w: W, time_name: &str, columns: &[&str]) -> std::io::Result<()> {
        write!(w, "{time_name}")?;
        for c in columns {
            write!(w, ",{c}")?;
        }
        writeln!(w, ",drift")?;
        for (i, (t, y)) in self.times.iter().zip(&self.states).enumerate() {
            write!(w, "{}", format_float(*t))?;
            for v in y {
                write!(w, ",{}", format_float(*v))?;
            }
            let d = self.drift.get(i).copied().unwrap_or(0.0);
            writeln!(w, ",{}", format_float(d))?;
        }
        Ok(())
    }
}

/// Formats a float with 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn crosses(direction: Direction, a: f64, b: f64) -> bool {
    let rising = a < 0.0 && b >= 0.0;
    let falling = a > 0.0 && b <= 0.0;
    match direction {
        Direction::Rising => rising,
        Direction::Falling => falling,
        Direction::Any => rising || falling,
    }
}

/// Locates a root of `g` on the dense interpolant between `ta` and `tb` (which bracket a sign
/// change), by bisection to `1e-13` in time and one Newton step with a finite-difference slope.
fn refine_root(g: &EventFn<'_>, dense: &DenseStep, mut ta: f64, mut tb: f64, ga: f64) -> (f64, Vec<f64>) {
    let mut buf = vec![0.0; dense.at(ta).len()];
    let mut ga = ga;
    let tol = 1e-13f64.max(4.0 * f64::EPSILON * ta.abs().max(tb.abs()));
    let eval = |t: f64, buf: &mut Vec<f64>| {
        dense.eval(t, buf);
        g(t, buf)
    };
    for _ in 0..200 {
        if (tb - ta).abs() <= tol {
            break;
        }
        let tm = 0.5 * (ta + tb);
        let gm = eval(tm, &mut buf);
        if gm == 0.0 {
            ta = tm;
            tb = tm;
            break;
        }
        if (gm < 0.0) == (ga < 0.0) {
            ta = tm;
            ga = gm;
        } else {
            tb = tm;
        }
    }
    let (lo, hi) = if ta <= tb { (ta, tb) } else { (tb, ta) };
    let mut t = 0.5 * (ta + tb);
    let gt = eval(t, &mut buf);
    let dt = (1e-7 * (dense.t1 - dense.t0).abs()).max(1e-12);
    let slope = (eval(t + dt, &mut buf) - eval(t - dt, &mut buf)) / (2.0 * dt);
    if slope != 0.0 && slope.is_finite() {
        let tn = t - gt / slope;
        if tn >= lo - tol && tn <= hi + tol {
            let gn = eval(tn, &mut buf);
            if gn.abs() <= gt.abs() {
                t = tn;
            }
        }
    }
    (t, dense.at(t))
}

struct Candidate {
    event: usize,
    t: f64,
    y: Vec<f64>,
    sign: f64,
    grazing: bool,
}

/// Integrates `field` from `(t0, y0)` to `t1`, locating `events` on the dense output.
pub fn integrate<F: VectorField + ?Sized>(
    field: &F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    config: &IntegratorConfig,
    events: &[EventSpec<'_>],
) -> Result<Trajectory> {
    config.validate()?;
    if y0.len() != field.dim() {
        return Err(Error::Domain(format!("state has {} components, field expects {}", y0.len(), field.dim())));
    }
    if !field.in_domain(y0) || y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularChart("initial state outside the field's domain".into()));
    }
    let integral0 = field.first_integral(y0);
    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![y0.to_vec()],
        drift: vec![0.0],
        max_drift: 0.0,
        hits: Vec::new(),
        status: Termination::Completed,
        steps: 0,
        rejected: 0,
        nfev: 0,
    };
    if t0 == t1 {
        return Ok(traj);
    }
    let mut stepper = Stepper::new(field, t0, y0, t1, config.rel_tol, config.abs_tol, config.max_step);
    let mut g_old: Vec<f64> = events.iter().map(|e| (e.g)(t0, y0)).collect();
    let mut counted = vec![0usize; events.len()];
    let n = y0.len();
    let mut buf = vec![0.0; n];
    let forward = t1 > t0;
    loop {
        if traj.steps >= config.max_steps {
            traj.status = Termination::MaxSteps;
            break;
        }
        match stepper.step(t1) {
            StepOutcome::Underflow => {
                traj.status = Termination::StepUnderflow;
                break;
            }
            StepOutcome::Accepted => {}
        }
        if !field.in_domain(&stepper.y) {
            traj.status = Termination::DomainExit;
            break;
        }
        traj.steps += 1;
        let (ta, tb) = (stepper.t_old, stepper.t);
        let g_new: Vec<f64> = events.iter().map(|e| (e.g)(tb, &stepper.y)).collect();
        let mut dense: Option<DenseStep> = None;
        let mut candidates: Vec<Candidate> = Vec::new();
        for (k, ev) in events.iter().enumerate() {
            if ev.max_hits > 0 && counted[k] >= ev.max_hits {
                continue;
            }
            let (ga, gb) = (g_old[k], g_new[k]);
            if crosses(Direction::Any, ga, gb) {
                let d = dense.get_or_insert_with(|| stepper.dense());
                let (t, y) = refine_root(&ev.g, d, ta, tb, ga);
                let sign = if gb > ga { 1.0 } else { -1.0 };
                if crosses(ev.direction, ga, gb) {
                    candidates.push(Candidate { event: k, t, y, sign, grazing: false });
                }
                continue;
            }
            // No endpoint sign change: probe for a double crossing with the cheap Hermite
            // interpolant, confirming on the dense output.
            let mut suspicious = false;
            for x in [0.25, 0.5, 0.75] {
                stepper.hermite(x, &mut buf);
                let gx = (ev.g)(ta + x * (tb - ta), &buf);
                if (gx < 0.0) != (ga < 0.0) && gx != 0.0 {
                    suspicious = true;
                }
            }
            if !suspicious {
                continue;
            }
            let d = dense.get_or_insert_with(|| stepper.dense());
            let m = 16;
            let mut prev_t = ta;
            let mut prev_g = ga;
            let mut roots = Vec::new();
            for i in 1..=m {
                let t = ta + (tb - ta) * i as f64 / m as f64;
                d.eval(t, &mut buf);
                let gt = (ev.g)(t, &buf);
                if crosses(Direction::Any, prev_g, gt) {
                    let (tr, yr) = refine_root(&ev.g, d, prev_t, t, prev_g);
                    roots.push((tr, yr, if gt > prev_g { 1.0 } else { -1.0 }));
                }
                prev_t = t;
                prev_g = gt;
            }
            let grazing = roots.len() == 2 && (roots[1].0 - roots[0].0).abs() < 1e-3 * (tb - ta).abs();
            for (t, y, sign) in roots {
                let dir_ok = match ev.direction {
                    Direction::Rising => sign > 0.0,
                    Direction::Falling => sign < 0.0,
                    Direction::Any => true,
                };
                if dir_ok || grazing {
                    candidates.push(Candidate { event: k, t, y, sign, grazing });
                }
            }
        }
        candidates.sort_by(|a, b| {
            let o = a.t.partial_cmp(&b.t).unwrap_or(std::cmp::Ordering::Equal);
            if forward { o } else { o.reverse() }
        });
        let mut stop: Option<(f64, Vec<f64>, usize)> = None;
        for c in candidates {
            if events[c.event].max_hits > 0 && counted[c.event] >= events[c.event].max_hits {
                continue;
            }
            if !c.grazing {
                counted[c.event] += 1;
            }
            let terminal = !c.grazing && events[c.event].terminal && counted[c.event] >= events[c.event].max_hits.max(1);
            traj.hits.push(EventHit { event: c.event, t: c.t, y: c.y.clone(), sign: c.sign, grazing: c.grazing });
            if terminal {
                stop = Some((c.t, c.y, c.event));
                break;
            }
        }
        if let Some((t, y, k)) = stop {
            push_state(&mut traj, field, integral0, t, &y, true);
            traj.status = Termination::Event(k);
            break;
        }
        let done = stepper.t == t1;
        push_state(&mut traj, field, integral0, stepper.t, &stepper.y.clone(), config.record || done);
        g_old = g_new;
        if done {
            break;
        }
    }
    if !matches!(traj.status, Termination::Completed | Termination::Event(_)) && traj.times.last() != Some(&stepper.t) {
        let y = stepper.y.clone();
        if field.in_domain(&y) {
            push_state(&mut traj, field, integral0, stepper.t, &y, true);
        }
    }
    traj.rejected = stepper.rejected;
    traj.nfev = stepper.nfev;
    Ok(traj)
}

fn push_state<F: VectorField + ?Sized>(traj: &mut Trajectory, field: &F, integral0: Option<f64>, t: f64, y: &[f64], record: bool) {
    let drift = match (integral0, field.first_integral(y)) {
        (Some(a), Some(b)) => b - a,
        _ => 0.0,
    };
    traj.max_drift = traj.max_drift.max(drift.abs());
    if record {
        traj.times.push(t);
        traj.states.push(y.to_vec());
        traj.drift.push(drift);
    } else if traj.times.len() >= 2 {
        // Keep the latest state as the provisional endpoint.
        *traj.times.last_mut().expect("nonempty") = t;
        *traj.states.last_mut().expect("nonempty") = y.to_vec();
        *traj.drift.last_mut().expect("nonempty") = drift;
    } else {
        traj.times.push(t);
        traj.states.push(y.to_vec());
        traj.drift.push(drift);
    }
}

/// Floor on `s` below which a passage is treated as captured by the collision.
pub const COLLISION_FLOOR: f64 = 1e-10;

/// How a near-collision passage ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PassageOutcome {
    /// Left the neighborhood through `s = delta` with `s` increasing.
    Exited,
    /// Fell below the collision floor: a collision orbit.
    Collision,
    /// Neither within the time budget.
    Timeout,
}

/// Result of [`integrate_through_collision`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollisionPassage {
    pub outcome: PassageOutcome,
    /// Reduced `(s, theta, alpha)` plus physical time, as a trajectory in `tau`.
    pub trajectory: Trajectory,
    /// Closest approach `s_min` (located at `s' = 0`, i.e. `alpha` crossing `0 mod pi`).
    pub s_min: f64,
    /// Final reduced state.
    pub exit: Reduced,
}

/// Integrates the reduced flow in `tau` across the neighborhood `0 < s < 2 delta` until the
/// orbit leaves through `s = delta` with `s` increasing, or is captured below [`COLLISION_FLOOR`].
pub fn integrate_through_collision(
    start: Reduced,
    mu: f64,
    h: f64,
    delta: f64,
    max_tau: f64,
    config: &IntegratorConfig,
) -> Result<CollisionPassage> {
    if !(start.s > 0.0 && start.s < 2.0 * delta) {
        return Err(Error::Domain(format!("start s = {} not in (0, 2 delta)", start.s)));
    }
    let field = Field::new(FieldId::Reduced, mu, h);
    let clocked = Clocked(&field);
    let y0 = [start.s, start.theta, start.alpha, 0.0];
    let events = [
        EventSpec::terminal("exit", Direction::Rising, move |_, y: &[f64]| y[0] - delta),
        EventSpec::terminal("capture", Direction::Falling, |_, y: &[f64]| y[0] - COLLISION_FLOOR),
        EventSpec::new("closest", Direction::Rising, |_, y: &[f64]| y[2].sin()),
    ];
    let traj = integrate(&clocked, 0.0, &y0, max_tau, config, &events)?;
    let mut s_min = traj.states.iter().map(|y| y[0]).fold(f64::INFINITY, f64::min);
    for hit in traj.hits_of(2) {
        s_min = s_min.min(hit.y[0]);
    }
    let outcome = match traj.status {
        Termination::Event(0) => PassageOutcome::Exited,
        Termination::Event(1) => PassageOutcome::Collision,
        _ => PassageOutcome::Timeout,
    };
    let y = traj.y_end();
    let exit = Reduced::on_shell(y[0].max(0.0), y[1], y[2], mu, h)?;
    Ok(CollisionPassage { outcome, s_min, exit, trajectory: traj })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charts::{Center, Polar};
    use crate::closedform::{kappa, regularized_ejection, time_to_radius, ParabolicOrbit, ParabolicSign};

    struct Harmonic;
    impl VectorField for Harmonic {
        fn dim(&self) -> usize {
            2
        }
        fn eval(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = y[1];
            dy[1] = -y[0];
        }
        fn first_integral(&self, y: &[f64]) -> Option<f64> {
            Some(0.5 * (y[0] * y[0] + y[1] * y[1]))
        }
    }

    #[test]
    fn harmonic_oscillator_endpoint_and_dense_output() {
        let cfg = IntegratorConfig::default();
        let traj = integrate(&Harmonic, 0.0, &[1.0, 0.0], 10.0, &cfg, &[]).unwrap();
        let y = traj.y_end();
        assert!((y[0] - 10f64.cos()).abs() < 1e-11 && (y[1] + 10f64.sin()).abs() < 1e-11);
        assert!(traj.max_drift < 1e-12);
        let mut st = Stepper::new(&Harmonic, 0.0, &[1.0, 0.0], 1.0, 1e-12, 1e-12, 0.5);
        assert!(matches!(st.step(1.0), StepOutcome::Accepted));
        let d = st.dense();
        for i in 0..=10 {
            let t = d.t0 + (d.t1 - d.t0) * i as f64 / 10.0;
            assert!((d.at(t)[0] - t.cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_integration() {
        let cfg = IntegratorConfig::default();
        let traj = integrate(&Harmonic, 0.0, &[1.0, 0.0], -3.0, &cfg, &[]).unwrap();
        assert!((traj.y_end()[0] - 3f64.cos()).abs() < 1e-11);
        assert!(traj.times.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn events_located_on_interpolant() {
        let cfg = IntegratorConfig::default();
        let ev = [EventSpec::new("x=0", Direction::Falling, |_, y: &[f64]| y[0])];
        let traj = integrate(&Harmonic, 0.0, &[1.0, 0.0], 10.0, &cfg, &ev).unwrap();
        let hits: Vec<_> = traj.hits_of(0).collect();
        // cos t falls through zero at pi/2 + 2 pi k.
        assert_eq!(hits.len(), 2);
        assert!((hits[0].t - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!(hits[0].y[0].abs() < cfg.event_tol);
    }

    #[test]
    fn grazing_is_flagged_and_not_counted() {
        struct Drift;
        impl VectorField for Drift {
            fn dim(&self) -> usize {
                1
            }
            fn eval(&self, _t: f64, _y: &[f64], dy: &mut [f64]) {
                dy[0] = 1.0;
            }
        }
        let cfg = IntegratorConfig { max_step: 0.5, ..Default::default() };
        let free = integrate(&Drift, 0.0, &[0.0], 3.0, &cfg, &[]).unwrap();
        let (a, b) = (free.times[2], free.times[3]);
        let c = 0.5 * (a + b);
        let w = 1e-5 * (b - a);
        // g touches zero on a window of width 2w centred inside one step.
        let ev = [EventSpec::terminal("graze", Direction::Any, move |_, y: &[f64]| w * w - (y[0] - c).powi(2))];
        let traj = integrate(&Drift, 0.0, &[0.0], 3.0, &cfg, &ev).unwrap();
        assert_eq!(traj.status, Termination::Completed);
        assert_eq!(traj.hits.len(), 2);
        assert!(traj.hits.iter().all(|h| h.grazing));
        assert!((traj.hits[0].t - (c - w)).abs() < 1e-12);
        assert_eq!(traj.hits_of(0).count(), 0);
    }

    #[test]
    fn parabolic_oracle_and_section_time() {
        let orbit = ParabolicOrbit { sign: ParabolicSign::Plus, theta_bar: 0.0 };
        let field = Field::new(FieldId::PolarCm, 0.0, 0.0);
        let y0 = orbit.eval(0.1).unwrap().to_array();
        let cfg = IntegratorConfig::default();
        let traj = integrate(&field, 0.1, &y0, 10.0, &cfg, &[]).unwrap();
        let mut worst: f64 = 0.0;
        for (t, y) in traj.times.iter().zip(&traj.states) {
            let e = orbit.eval(*t).unwrap().to_array();
            for j in 0..4 {
                worst = worst.max((y[j] - e[j]).abs());
            }
        }
        assert!(worst < 1e-8, "worst {worst}");
        // Section r = delta^2 on the same orbit, started near collision.
        let y0 = orbit.eval(1e-4).unwrap().to_array();
        let r_star = 0.04;
        let ev = [EventSpec::terminal("section", Direction::Rising, move |_, y: &[f64]| y[0] - r_star)];
        let traj = integrate(&field, 1e-4, &y0, 1.0, &cfg, &ev).unwrap();
        assert!((traj.t_end() - time_to_radius(r_star)).abs() < 1e-12);
        assert!((traj.t_end() - 0.003_771_2).abs() < 1e-7);
    }

    #[test]
    fn regularized_oracle() {
        let field = Field::new(FieldId::Regularized, 0.0, 0.0);
        let y0 = regularized_ejection(0.3, -5.0).to_array();
        let traj = integrate(&field, -5.0, &y0, 0.0, &IntegratorConfig::default(), &[]).unwrap();
        let exact = regularized_ejection(0.3, 0.0).to_array();
        for j in 0..4 {
            assert!((traj.y_end()[j] - exact[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn order_check_on_oracle() {
        let orbit = ParabolicOrbit { sign: ParabolicSign::Plus, theta_bar: 0.0 };
        let field = Field::new(FieldId::PolarCm, 0.0, 0.0);
        let y0 = orbit.eval(0.1).unwrap().to_array();
        let exact = orbit.eval(10.0).unwrap().to_array();
        let err = |tol: f64| {
            let cfg = IntegratorConfig { rel_tol: tol, abs_tol: tol, ..Default::default() };
            let t = integrate(&field, 0.1, &y0, 10.0, &cfg, &[]).unwrap();
            (0..4).map(|j| (t.y_end()[j] - exact[j]).abs()).fold(0.0, f64::max)
        };
        assert!(err(1e-6) >= 4.0 * err(0.5e-6 * 1e-1));
    }

    #[test]
    fn clocked_regularized_tracks_physical_time() {
        let field = Field::new(FieldId::Regularized, 0.0, 0.0);
        let c = Clocked(&field);
        let mut y0 = regularized_ejection(0.0, -5.0).to_array().to_vec();
        y0.push(crate::closedform::regularized_ejection_time(-5.0));
        let traj = integrate(&c, -5.0, &y0, 0.0, &IntegratorConfig::default(), &[]).unwrap();
        assert!((traj.y_end()[4] - 1.0).abs() < 1e-9, "t = {}", traj.y_end()[4]);
        let p = Polar::from_array(Center::P1, &regularized_ejection(0.0, 0.0).to_polar(0.0).unwrap().to_array());
        assert!((p.r - kappa()).abs() < 1e-15);
    }

    #[test]
    fn passage_start_validation() {
        let r = Reduced { s: 0.5, theta: 0.0, alpha: 0.0, rho: 0.0 };
        assert!(integrate_through_collision(r, 1e-3, 0.0, 0.1, 100.0, &IntegratorConfig::default()).is_err());
    }
}
