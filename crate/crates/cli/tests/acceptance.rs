//! Acceptance suite: runs every primary criterion at its pinned tolerance and prints one
//! PASS/FAIL line per criterion. Exits non-zero if any criterion fails.

use anyhow::{ensure, Context, Result};
use pcrtbp_eco::charts::Center;
use pcrtbp_eco::closedform::{m0, regularized_ejection, CollisionHeteroclinic, ParabolicOrbit, ParabolicSign};
use pcrtbp_eco::fields::{eval_field, Field, FieldId};
use pcrtbp_eco::flow::{integrate, IntegratorConfig};
use pcrtbp_eco::melnikov::{admissible, i2_closed, i2_quadrature, melnikov_plus, QuadratureBudget};
use pcrtbp_eco_cli::config::RunConfig;
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

const BIN: &str = env!("CARGO_BIN_EXE_pcrtbp-eco");

fn run_cli(dir: &Path, cmd: &str, name: &str, config: Option<&str>, extra: &[&str]) -> Result<(PathBuf, f64)> {
    let out = dir.join(name);
    let mut c = Command::new(BIN);
    c.arg(cmd).arg("--out").arg(&out).args(extra);
    if let Some(text) = config {
        let path = dir.join(format!("{name}.toml"));
        std::fs::write(&path, text)?;
        c.arg("--config").arg(path);
    }
    let start = Instant::now();
    let status = c.output().with_context(|| format!("running {cmd}"))?;
    let elapsed = start.elapsed().as_secs_f64();
    ensure!(status.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&status.stderr));
    Ok((out, elapsed))
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn num(v: &Value, key: &str) -> Result<f64> {
    v.pointer(key).and_then(Value::as_f64).with_context(|| format!("missing number {key}"))
}

fn flag(v: &Value, key: &str) -> Result<bool> {
    v.pointer(key).and_then(Value::as_bool).with_context(|| format!("missing flag {key}"))
}

struct Scan {
    report: Value,
    elapsed: f64,
}

fn melnikov_scan(dir: &Path) -> Result<Scan> {
    let (out, elapsed) = run_cli(dir, "melnikov-scan", "scan", None, &["--threads", "1"])?;
    Ok(Scan { report: read_json(&out.join("melnikov_report.json"))?, elapsed })
}

fn criterion_1(scan: &Scan) -> Result<String> {
    let value = num(&scan.report, "/derivative_at_zero/value")?;
    let width = num(&scan.report, "/budget_width")?;
    ensure!((-5.15341..=-4.56572).contains(&value), "M+'(0) = {value} outside the reference enclosure");
    ensure!(width <= 0.6, "budget width {width} > 0.6");
    ensure!(scan.elapsed < 60.0, "runtime {:.1} s", scan.elapsed);
    Ok(format!("M+'(0) = {value:.6}, budget width {width:.3e}, scan and certification {:.1} s on 1 thread", scan.elapsed))
}

fn criterion_2(scan: &Scan) -> Result<String> {
    ensure!(flag(&scan.report, "/all_certified")?, "some subinterval of B+ not certified");
    ensure!(flag(&scan.report, "/zero_negative")?, "M+'(0) not certified negative");
    ensure!(scan.elapsed < 900.0, "runtime {:.1} s", scan.elapsed);
    let margin = num(&scan.report, "/worst_margin")?;
    Ok(format!("B+ certified with N = 10000, worst margin {margin:.3}, M+'(0) < 0"))
}

fn criterion_3() -> Result<String> {
    let ic = IntegratorConfig { rel_tol: 1e-13, abs_tol: 1e-14, ..IntegratorConfig::default() };

    let orbit = ParabolicOrbit { sign: ParabolicSign::Plus, theta_bar: 0.4 };
    let start = orbit.eval(0.1)?;
    let field = Field::new(FieldId::PolarP1, 0.0, 0.0);
    let traj = integrate(&field, 0.1, &start.to_array(), 10.0, &ic, &[])?;
    let mut polar_err: f64 = 0.0;
    for (t, y) in traj.times.iter().zip(&traj.states) {
        let exact = orbit.eval(*t)?.to_array();
        polar_err = y.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(polar_err, f64::max);
    }
    ensure!(start.center == Center::P1 && traj.t_end() == 10.0, "parabolic integration stopped early");
    ensure!(polar_err < 1e-8, "parabolic error {polar_err:e}");

    let theta_bar = -0.9;
    let field = Field::new(FieldId::Regularized, 0.0, 0.0);
    let traj = integrate(&field, -5.0, &regularized_ejection(theta_bar, -5.0).to_array(), 0.0, &ic, &[])?;
    let mut reg_err: f64 = 0.0;
    for (tau, y) in traj.times.iter().zip(&traj.states) {
        let exact = regularized_ejection(theta_bar, *tau).to_array();
        reg_err = y.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(reg_err, f64::max);
    }
    ensure!(reg_err < 1e-8, "regularized ejection error {reg_err:e}");

    let mu = 1e-3;
    let m = m0(mu);
    let h = CollisionHeteroclinic { theta_bar: 1.3 };
    let mut residual: f64 = 0.0;
    for i in -200..=200 {
        let tau = 0.1 * i as f64;
        let p = h.eval(tau, mu);
        let x = m * tau / 4.0;
        let dalpha = 0.5 * m / x.cosh().powi(2) / (1.0 + x.tanh().powi(2));
        let d = eval_field(FieldId::CollisionTorus, &[p.theta, p.alpha], mu, 0.0)?;
        residual = residual.max((d[0] - 2.0 * dalpha).abs()).max((d[1] - dalpha).abs());
    }
    ensure!(residual < 1e-12, "heteroclinic residual {residual:e}");
    Ok(format!("parabolic {polar_err:.2e}, regularized ejection {reg_err:.2e}, heteroclinic residual {residual:.2e}"))
}

fn criterion_4() -> Result<String> {
    let budget = RunConfig::default().budget();
    let mut angles = Vec::new();
    let mut k = 0;
    while angles.len() < 20 {
        let theta = -3.1 + 0.31 * k as f64;
        k += 1;
        if admissible(theta, budget.window) {
            angles.push(theta);
        }
    }
    let mut i2_err: f64 = 0.0;
    let mut refine: f64 = 0.0;
    let fine = QuadratureBudget { c: budget.c / 10.0, big_c: budget.big_c * 10.0, ..budget };
    for &theta in &angles {
        i2_err = i2_err.max((i2_quadrature(theta) - i2_closed(theta)).abs());
        let coarse = melnikov_plus(theta, &budget)?;
        let refined = melnikov_plus(theta, &fine)?;
        let gap = (coarse.value - refined.value).abs();
        ensure!(gap <= coarse.err, "M+({theta}) moved by {gap:e} under refinement, budget {:e}", coarse.err);
        refine = refine.max(gap / coarse.err);
    }
    ensure!(i2_err < 1e-4, "I2 error {i2_err:e}");
    Ok(format!("I2 max error {i2_err:.2e} at 20 angles, refinement shift at most {refine:.3} of the budget"))
}

fn criterion_5(dir: &Path) -> Result<String> {
    let (out, _) = run_cli(dir, "distance", "distance", None, &[])?;
    let text = std::fs::read_to_string(out.join("distance.csv"))?;
    let mut worst = [0.0f64; 2];
    let mut count = [0usize; 2];
    for line in text.lines().skip(1) {
        let cells: Vec<f64> = line.split(',').map(str::parse).collect::<Result<_, _>>()?;
        let slot = if cells[0] == 1e-3 { 0 } else { 1 };
        worst[slot] = worst[slot].max(cells[5]);
        count[slot] += 1;
    }
    ensure!(count == [10, 10], "expected 10 angles per mu, got {count:?}");
    ensure!(worst[0] < 50.0 * 1e-3, "error {:e} at mu = 1e-3", worst[0]);
    ensure!(worst[1] < 5e-3, "error {:e} at mu = 1e-4", worst[1]);
    let ratio = worst[0] / worst[1];
    ensure!((5.0..20.0).contains(&ratio), "error ratio per decade {ratio}");
    Ok(format!("max error {:.3e} (mu = 1e-3), {:.3e} (mu = 1e-4), ratio {ratio:.2}", worst[0], worst[1]))
}

fn criterion_6(dir: &Path) -> Result<String> {
    let (out, _) = run_cli(dir, "localmap", "localmap", None, &[])?;
    let r = read_json(&out.join("transit_report.json"))?;
    let (c1, c2, lim) = (num(&r, "/c1")?, num(&r, "/c2")?, num(&r, "/limit_error")?);
    ensure!(num(&r, "/delta")? == 0.1 && num(&r, "/mu")? == 1e-3 && num(&r, "/h")? == 0.0, "unexpected parameters");
    ensure!(c1 <= 5.0 && c2 <= 5.0, "constants c1 = {c1}, c2 = {c2}");
    ensure!(lim < 1e-6, "limit error {lim:e}");
    Ok(format!("C1 = {c1:.3e}, C2 = {c2:.3e}, limit error {lim:.2e}"))
}

fn criterion_7(dir: &Path) -> Result<String> {
    let (out, _) = run_cli(dir, "eco", "eco", None, &[])?;
    let r = read_json(&out.join("eco.json"))?;
    let orbits = r["orbits"].as_array().context("orbits")?;
    ensure!(orbits.len() >= 2, "only {} orbits", orbits.len());
    let radii: Vec<f64> = orbits.iter().map(|o| num(o, "/r_max")).collect::<Result<_>>()?;
    let residual = orbits.iter().map(|o| num(o, "/residual")).collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
    ensure!(radii.windows(2).all(|w| w[1] > w[0]), "r_max not increasing: {radii:?}");
    let spread = radii[radii.len() - 1] - radii[0];
    ensure!(spread > 1.0, "r_max spread {spread}");
    ensure!(residual < 1e-8, "residual {residual:e}");
    Ok(format!("{} orbits, r_max {:.2} .. {:.2}, residual < {residual:.1e}", radii.len(), radii[0], radii[radii.len() - 1]))
}

fn criterion_8(dir: &Path) -> Result<String> {
    let (out, _) = run_cli(dir, "triple", "triple", None, &[])?;
    let r = read_json(&out.join("triple.json"))?;
    let gap = num(&r, "/h_over_mu_minus_melnikov")?.abs();
    let (a, b) = (num(&r, "/result/angle_a")?, num(&r, "/result/angle_b")?);
    let asym = num(&r, "/slope_asymmetry")?;
    ensure!(gap < 0.5, "h*/mu - M+(0) = {gap}");
    ensure!(flag(&r, "/angles_ordered")? && -std::f64::consts::FRAC_PI_2 < a && a < b && b < 0.0, "angles A = {a}, B = {b}");
    ensure!(asym < 0.1, "slope asymmetry {asym}");
    Ok(format!("h*/mu = {:.6}, |h*/mu - M+(0)| = {gap:.2e}, A = {a:.3e} < B = {b:.3e}, asymmetry {asym:.2e}", num(&r, "/h_over_mu")?))
}

fn criterion_9(dir: &Path) -> Result<String> {
    let (a, _) = run_cli(dir, "integrate", "integrate_a", None, &["--seed", "11"])?;
    let (b, _) = run_cli(dir, "integrate", "integrate_b", None, &["--seed", "11"])?;
    let r = read_json(&a.join("integrate.json"))?;
    let trips = num(&r, "/round_trip_max")?;
    let samples = num(&r, "/round_trips/samples")?;
    let drift = num(&r, "/drift_per_10")?;
    let rev = num(&r, "/reversibility_error")?;
    ensure!(samples >= 1e4 && trips < 1e-12, "round trip {trips:e} over {samples} states");
    ensure!(drift < 1e-9, "drift {drift:e}");
    ensure!(rev < 1e-10, "reversibility {rev:e}");
    let files_a = read_json(&a.join("manifest.json"))?["files"].clone();
    let files_b = read_json(&b.join("manifest.json"))?["files"].clone();
    ensure!(files_a == files_b, "checksums differ between identical runs");
    Ok(format!("round trips {trips:.2e}, drift {drift:.2e} per 10, reversibility {rev:.2e}, checksums identical"))
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let scan = melnikov_scan(dir.path());
    let results: Vec<(usize, Result<String>)> = vec![
        (1, scan.as_ref().map_err(|e| anyhow::anyhow!("{e:#}")).and_then(criterion_1)),
        (2, scan.as_ref().map_err(|e| anyhow::anyhow!("{e:#}")).and_then(criterion_2)),
        (3, criterion_3()),
        (4, criterion_4()),
        (5, criterion_5(dir.path())),
        (6, criterion_6(dir.path())),
        (7, criterion_7(dir.path())),
        (8, criterion_8(dir.path())),
        (9, criterion_9(dir.path())),
    ];
    let mut failed = 0;
    for (k, r) in &results {
        match r {
            Ok(msg) => println!("PASS criterion {k}: {msg}"),
            Err(e) => {
                failed += 1;
                println!("FAIL criterion {k}: {e:#}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
