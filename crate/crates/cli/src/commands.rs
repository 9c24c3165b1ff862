//! The subcommands. Each one reads a validated [`RunConfig`], writes its data files and a
//! plotting script into the run directory, and returns a short summary.

use crate::config::RunConfig;
use crate::output::RunDir;
use anyhow::{bail, Result};
use pcrtbp_eco::charts::{wrap_angle, Center, ChartState, Polar};
use pcrtbp_eco::closedform::w_sigma;
use pcrtbp_eco::fields::{Field, FieldId};
use pcrtbp_eco::flow::{integrate, IntegratorConfig, Trajectory};
use pcrtbp_eco::localmap::{verify_transition_estimates, InputCurve, SectionStraightening};
use pcrtbp_eco::manifolds::{distance, Side};
use pcrtbp_eco::melnikov::{admissible, certify_sign_on_b_plus, melnikov_plus, melnikov_plus_derivative, PROOF_WINDOW};
use pcrtbp_eco::search::{classify_final_motion, find_ecos, find_triple_energy, ChartKind, EcoOrbit, FinalMotion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

/// Enclosure of `M+'(0)` obtained by an independent interval-arithmetic computation.
pub const REFERENCE_DERIVATIVE_ENCLOSURE: (f64, f64) = (-5.15341, -4.56572);

const PLOT_MELNIKOV: &str = r#"import csv
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open("melnikov_scan.csv")))
theta = [float(r["theta"]) for r in rows]
fig, axes = plt.subplots(2, 1, sharex=True, figsize=(8, 6))
for ax, key in zip(axes, ["m_plus", "dm_plus"]):
    value = [float(r[key]) for r in rows]
    err = [float(r[key + "_err"]) for r in rows]
    ax.plot(theta, value, ".", markersize=1)
    ax.fill_between(theta, [v - e for v, e in zip(value, err)], [v + e for v, e in zip(value, err)], alpha=0.3)
    ax.axhline(0.0, color="k", linewidth=0.5)
    ax.set_ylabel(key)
axes[-1].set_xlabel("theta")
fig.savefig("melnikov_scan.png", dpi=150)
"#;

const PLOT_DISTANCE: &str = r#"import csv
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open("distance.csv")))
fig, ax = plt.subplots(figsize=(7, 4))
for mu in sorted({r["mu"] for r in rows}, key=float):
    sel = [r for r in rows if r["mu"] == mu]
    ax.plot([float(r["theta"]) for r in sel], [float(r["quotient"]) for r in sel], "o", label="mu = %g" % float(mu))
sel = [r for r in rows if r["mu"] == rows[0]["mu"]]
ax.plot([float(r["theta"]) for r in sel], [float(r["melnikov"]) for r in sel], "k+", label="M+(theta + w)")
ax.set_xlabel("theta")
ax.set_ylabel("(d+ - Theta_hat_0) / mu")
ax.legend()
fig.savefig("distance.png", dpi=150)
"#;

const PLOT_ECO: &str = r#"import csv
import glob
import math
import matplotlib.pyplot as plt

fig, ax = plt.subplots(figsize=(6, 6))
for name in sorted(glob.glob("trajectories/eco_*.csv")):
    rows = list(csv.DictReader(open(name)))
    xs, ys = [], []
    for r in rows:
        chart = int(float(r["chart"]))
        a, b = float(r["x0"]), float(r["x1"])
        if chart == 0:
            rad, center = a * a, 0.0
        elif chart == 1:
            rad, center = a, None
        else:
            rad, center = 2.0 / (a * a), None
        xs.append(rad * math.cos(b))
        ys.append(rad * math.sin(b))
    ax.plot(xs, ys, linewidth=0.5, label=name.split("/")[-1])
ax.set_aspect("equal")
ax.set_title("ejection-collision orbits (synodic frame)")
fig.savefig("eco.png", dpi=150)
"#;

const PLOT_LOCALMAP: &str = r#"import csv
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open("transit.csv")))
nu = [float(r["nu"]) for r in rows]
fig, ax = plt.subplots(figsize=(6, 4))
ax.loglog(nu, [abs(float(r["iota_out"]) + float(r["nu"])) for r in rows], "o-", label="|iota_out + nu|")
ax.loglog(nu, [abs(float(r["w_out"]) - float(r["z_in"])) for r in rows], "s-", label="|w_out - z_in|")
ax.loglog(nu, [float(r["s_min"]) for r in rows], "^-", label="s_min")
ax.set_xlabel("nu")
ax.legend()
fig.savefig("transit.png", dpi=150)
"#;

const PLOT_INTEGRATE: &str = r#"import csv
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open("trajectory.csv")))
t = [float(r["t"]) for r in rows]
fig, axes = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
axes[0].plot(t, [float(r["x0"]) for r in rows])
axes[0].set_ylabel("x0")
axes[1].semilogy(t, [abs(float(r["drift"])) + 1e-18 for r in rows])
axes[1].set_ylabel("|first integral drift|")
axes[1].set_xlabel("t")
fig.savefig("trajectory.png", dpi=150)
"#;

/// Scan of `M+` and `M+'` over a grid, the value at zero against the reference enclosure, and
/// the sign certification of `M+'`.
pub fn melnikov_scan(cfg: &RunConfig, out: &mut RunDir) -> Result<Value> {
    let budget = cfg.budget();
    let s = &cfg.melnikov_scan;
    let step = (s.theta_max - s.theta_min) / s.grid as f64;
    let thetas: Vec<f64> = (0..s.grid).map(|i| s.theta_min + step * i as f64).filter(|&t| admissible(t, budget.window)).collect();
    let rows = thetas
        .par_iter()
        .map(|&t| -> Result<Vec<f64>> {
            let m = melnikov_plus(t, &budget)?;
            let d = melnikov_plus_derivative(t, &budget)?;
            Ok(vec![t, m.value, m.err, d.value, d.err])
        })
        .collect::<Result<Vec<_>>>()?;
    out.write_csv("melnikov_scan.csv", &["theta", "m_plus", "m_plus_err", "dm_plus", "dm_plus_err"], &rows)?;

    let zero_budget = pcrtbp_eco::melnikov::QuadratureBudget { window: budget.window.min(PROOF_WINDOW), ..budget };
    let d0 = melnikov_plus_derivative(0.0, &zero_budget)?;
    let m0 = melnikov_plus(0.0, &zero_budget)?;
    let (lo, hi) = REFERENCE_DERIVATIVE_ENCLOSURE;
    let mut report = json!({
        "rows": rows.len(),
        "grid": s.grid,
        "derivative_at_zero": d0,
        "value_at_zero": m0,
        "reference_enclosure": [lo, hi],
        "estimate_inside_reference": d0.value > lo && d0.value < hi,
        "budget_width": 2.0 * d0.err,
    });
    if s.certify {
        let cert = certify_sign_on_b_plus(s.grid, &budget, s.slack)?;
        report["all_certified"] = json!(cert.all_certified);
        report["zero_negative"] = json!(cert.zero_negative);
        report["worst_margin"] = json!(cert.worst_margin);
        out.write_json("certification.json", &cert)?;
    }
    out.write_json("melnikov_report.json", &report)?;
    out.write("plot_melnikov.py", PLOT_MELNIKOV.as_bytes())?;
    Ok(report)
}

/// Quotient `(d+ - Theta_hat_0)/mu` against `M+(theta + w_Sigma)` for each configured `mu`.
pub fn distance_table(cfg: &RunConfig, out: &mut RunDir) -> Result<Value> {
    let d = &cfg.distance;
    let trace = cfg.trace();
    let budget = cfg.budget();
    let w = w_sigma(d.delta);
    let jobs: Vec<(f64, f64)> = d.mus.iter().flat_map(|&mu| d.thetas.iter().map(move |&t| (mu, t))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(mu, theta)| -> Result<Vec<f64>> {
            let e = distance(theta, Side::Plus, mu, d.theta_hat_0, d.delta, &trace)?;
            let quotient = (e.value - d.theta_hat_0) / mu;
            let m = melnikov_plus(theta + w, &budget)?;
            Ok(vec![mu, theta, e.value, quotient, m.value, (quotient - m.value).abs()])
        })
        .collect::<Result<Vec<_>>>()?;
    out.write_csv("distance.csv", &["mu", "theta", "d_plus", "quotient", "melnikov", "error"], &rows)?;
    let mut table = Vec::new();
    let mut previous: Option<f64> = None;
    for &mu in &d.mus {
        let max_err = rows.iter().filter(|r| r[0] == mu).map(|r| r[5]).fold(0.0, f64::max);
        let ratio = previous.map_or(f64::NAN, |p| p / max_err);
        table.push(vec![mu, max_err, max_err / mu, ratio]);
        previous = Some(max_err);
    }
    out.write_csv("distance_convergence.csv", &["mu", "max_error", "max_error_over_mu", "ratio_to_previous"], &table)?;
    out.write("plot_distance.py", PLOT_DISTANCE.as_bytes())?;
    Ok(json!({ "convergence": table }))
}

#[derive(Serialize)]
struct EcoSummary<'a> {
    k: usize,
    winding: i64,
    theta_bar_plus: f64,
    theta_bar_minus: f64,
    r_max: f64,
    residual: f64,
    section_theta: f64,
    section_ptheta: f64,
    flight_time: f64,
    energy_error: f64,
    p2_min: f64,
    forward: FinalMotion,
    backward: FinalMotion,
    crossing: &'a str,
    trajectory: String,
}

fn chart_code(c: ChartKind) -> f64 {
    match c {
        ChartKind::Reduced => 0.0,
        ChartKind::PolarCm => 1.0,
        ChartKind::Infinity => 2.0,
    }
}

fn eco_rows(e: &EcoOrbit) -> Vec<Vec<f64>> {
    let mut rows = Vec::new();
    for (i, seg) in e.flight.segments.iter().enumerate() {
        let code = chart_code(seg.chart);
        for (t, y) in seg.trajectory.times.iter().zip(&seg.trajectory.states) {
            let row = match seg.chart {
                ChartKind::Reduced => vec![i as f64, code, y[3], y[0], y[1], y[2], *t],
                _ => vec![i as f64, code, *t, y[0], y[1], y[2], y[3]],
            };
            rows.push(row);
        }
    }
    rows
}

/// Ejection-collision orbits with growing excursions.
pub fn eco(cfg: &RunConfig, out: &mut RunDir) -> Result<Value> {
    let e = &cfg.eco;
    let ecos = find_ecos(e.mu, e.h, e.count, &cfg.eco_config())?;
    if ecos.is_empty() {
        bail!("no ejection-collision orbit found within the step budget");
    }
    let mut summaries = Vec::new();
    let mut rows = Vec::new();
    for o in &ecos {
        let name = format!("trajectories/eco_{:03}.csv", o.k);
        out.write_csv(&name, &["segment", "chart", "t", "x0", "x1", "x2", "x3"], &eco_rows(o))?;
        let forward = classify_final_motion(&o.flight);
        let backward = classify_final_motion(&o.reversed().flight);
        rows.push(vec![
            o.k as f64,
            o.winding as f64,
            o.theta_bar_plus,
            o.theta_bar_minus,
            o.r_max,
            o.residual,
            o.section_theta,
            o.section_ptheta,
            o.flight.t_end,
            o.flight.energy_error,
            o.flight.p2_min,
        ]);
        summaries.push(EcoSummary {
            k: o.k,
            winding: o.winding,
            theta_bar_plus: o.theta_bar_plus,
            theta_bar_minus: o.theta_bar_minus,
            r_max: o.r_max,
            residual: o.residual,
            section_theta: o.section_theta,
            section_ptheta: o.section_ptheta,
            flight_time: o.flight.t_end,
            energy_error: o.flight.energy_error,
            p2_min: o.flight.p2_min,
            forward,
            backward,
            crossing: "first incoming crossing after leaving r = 2 r*",
            trajectory: name,
        });
    }
    out.write_csv(
        "eco_orbits.csv",
        &["k", "winding", "theta_bar_plus", "theta_bar_minus", "r_max", "residual", "section_theta", "section_ptheta", "flight_time", "energy_error", "p2_min"],
        &rows,
    )?;
    let increasing = ecos.windows(2).all(|w| w[1].r_max > w[0].r_max);
    let spread = ecos.last().map_or(0.0, |l| l.r_max) - ecos[0].r_max;
    let summary = json!({
        "mu": e.mu,
        "h": e.h,
        "requested": e.count,
        "found": ecos.len(),
        "r_max_increasing": increasing,
        "r_max_spread": spread,
        "max_residual": ecos.iter().map(|o| o.residual).fold(0.0, f64::max),
        "orbits": summaries,
    });
    out.write_json("eco.json", &summary)?;
    out.write("plot_eco.py", PLOT_ECO.as_bytes())?;
    Ok(json!({ "found": ecos.len(), "r_max_spread": spread, "r_max_increasing": increasing }))
}

/// Energy of the triple intersection and its transversality data.
pub fn triple(cfg: &RunConfig, out: &mut RunDir) -> Result<Value> {
    let t = &cfg.triple;
    let r = find_triple_energy(t.mu, t.delta, &cfg.triple_config())?;
    let report = json!({
        "result": r,
        "h_over_mu": r.h_star / r.mu,
        "h_over_mu_minus_melnikov": r.h_star / r.mu - r.melnikov_0,
        "angles_ordered": r.angles_ordered(),
        "slope_asymmetry": r.slope_asymmetry(),
    });
    out.write_json("triple.json", &report)?;
    Ok(report)
}

/// Transition map through the collision neighborhood over a grid of `nu`.
pub fn localmap(cfg: &RunConfig, out: &mut RunDir) -> Result<Value> {
    let l = &cfg.localmap;
    let st = SectionStraightening { mu: l.mu, h: l.h, delta: l.delta, trace: cfg.trace() };
    let report = verify_transition_estimates(&st, &cfg.nu_grid(), InputCurve { z0: l.z0, z1: l.z1 }, &cfg.integrator())?;
    let rows: Vec<Vec<f64>> = report
        .samples
        .iter()
        .map(|s| vec![s.nu, s.z_in, s.iota_out, s.w_out, s.s_min, s.s1.unwrap_or(f64::NAN), f64::from(u8::from(s.ordered)), s.tau, s.energy_residual])
        .collect();
    out.write_csv("transit.csv", &["nu", "z_in", "iota_out", "w_out", "s_min", "s1", "ordered", "tau", "energy_residual"], &rows)?;
    out.write_json("transit_report.json", &report)?;
    out.write("plot_localmap.py", PLOT_LOCALMAP.as_bytes())?;
    Ok(json!({ "c1": report.c1, "c2": report.c2, "limit_error": report.limit_error }))
}

fn reflect_array(field: FieldId, y: &[f64]) -> Option<Vec<f64>> {
    match field {
        FieldId::Cartesian => Some(vec![y[0], -y[1], -y[2], y[3]]),
        FieldId::PolarCm | FieldId::PolarP1 | FieldId::Infinity | FieldId::Regularized => Some(vec![y[0], -y[1], -y[2], y[3]]),
        FieldId::Reduced => Some(vec![y[0], -y[1], -y[2]]),
        FieldId::CollisionTorus => Some(vec![-y[0], -y[1]]),
        FieldId::StraightenedMinus | FieldId::StraightenedPlus => None,
    }
}

/// Largest drift of the first integral over any window of `span` time units starting at a
/// recorded state.
pub fn windowed_drift(traj: &Trajectory, span: f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut j = 0;
    for i in 0..traj.times.len() {
        j = j.max(i);
        while j + 1 < traj.times.len() && (traj.times[j + 1] - traj.times[i]).abs() <= span {
            j += 1;
        }
        for k in i..=j {
            worst = worst.max((traj.drift[k] - traj.drift[i]).abs());
        }
    }
    worst
}

/// Round-trip errors of the chart conversions on random states.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct RoundTrips {
    pub samples: usize,
    pub polar_cartesian: f64,
    pub p1_cm: f64,
    pub cm_infinity: f64,
    pub polar_regularized: f64,
    pub regularized_reduced: f64,
}

impl RoundTrips {
    pub fn max(&self) -> f64 {
        [self.polar_cartesian, self.p1_cm, self.cm_infinity, self.polar_regularized, self.regularized_reduced].into_iter().fold(0.0, f64::max)
    }
}

fn polar_gap(a: Polar, b: Polar) -> f64 {
    let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(1.0);
    rel(a.r, b.r).max(wrap_angle(a.theta - b.theta).abs()).max(rel(a.pr, b.pr)).max(rel(a.ptheta, b.ptheta))
}

/// Draws `n` random states with a seeded generator and measures every chart round trip.
pub fn round_trips(n: usize, seed: u64, mu: f64) -> Result<RoundTrips> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = RoundTrips { samples: n, ..RoundTrips::default() };
    for _ in 0..n {
        let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let pr = rng.random_range(-2.0..2.0);
        let ptheta = rng.random_range(-2.0..2.0);
        let near = Polar { center: Center::P1, r: rng.random_range(0.01..0.5), theta, pr, ptheta };
        let mid = Polar { center: Center::P1, r: rng.random_range(0.05..3.0), theta, pr, ptheta };
        let far = Polar { center: Center::Cm, r: rng.random_range(2.0..500.0), theta, pr, ptheta };

        let back = mid.to_cartesian(mu)?.to_polar(Center::P1, mu)?;
        out.polar_cartesian = out.polar_cartesian.max(polar_gap(mid, back));
        let back = mid.p1_to_cm(mu)?.cm_to_p1(mu)?;
        out.p1_cm = out.p1_cm.max(polar_gap(mid, back));
        let back = far.to_infinity()?.to_polar()?;
        out.cm_infinity = out.cm_infinity.max(polar_gap(far, back));
        let reg = near.to_regularized(mu)?;
        out.polar_regularized = out.polar_regularized.max(polar_gap(near, reg.to_polar(mu)?));
        let h = ChartState::Polar(near).hamiltonian(mu)?;
        if let Ok(red) = reg.to_reduced(mu, h, 1e-8) {
            let back = red.to_regularized(mu)?;
            let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(1.0);
            let gap = rel(reg.r, back.r).max(wrap_angle(reg.theta - back.theta).abs()).max(rel(reg.v, back.v)).max(rel(reg.u, back.u));
            out.regularized_reduced = out.regularized_reduced.max(gap);
        }
    }
    Ok(out)
}

/// Integration of a single orbit with drift, reversibility and chart round-trip checks.
pub fn integrate_orbit(cfg: &RunConfig, out: &mut RunDir) -> Result<Value> {
    let i = &cfg.integrate;
    let field = Field::new(i.field, i.mu, i.h);
    let ic = IntegratorConfig { record: true, ..cfg.integrator() };
    let traj = integrate(&field, 0.0, &i.state, i.t_end, &ic, &[])?;
    let mut bytes = Vec::new();
    let columns: Vec<String> = (0..i.state.len()).map(|k| format!("x{k}")).collect();
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    traj.write_csv(&mut bytes, "t", &cols)?;
    out.write("trajectory.csv", &bytes)?;

    let reversibility = match reflect_array(i.field, traj.y_end()) {
        Some(mirror) => {
            let back = integrate(&field, 0.0, &mirror, traj.t_end(), &ic, &[])?;
            let end = reflect_array(i.field, back.y_end()).expect("reflectable field");
            let gap = end.iter().zip(&i.state).map(|(a, b)| (a - b).abs() / b.abs().max(1.0)).fold(0.0, f64::max);
            Some(gap)
        }
        None => None,
    };
    let trips = round_trips(i.roundtrip_samples, cfg.seed, i.mu)?;
    let report = json!({
        "field": i.field,
        "steps": traj.steps,
        "status": traj.status,
        "t_end": traj.t_end(),
        "max_drift": traj.max_drift,
        "drift_per_10": windowed_drift(&traj, 10.0),
        "reversibility_error": reversibility,
        "round_trips": trips,
        "round_trip_max": trips.max(),
    });
    out.write_json("integrate.json", &report)?;
    out.write("plot_integrate.py", PLOT_INTEGRATE.as_bytes())?;
    Ok(report)
}
