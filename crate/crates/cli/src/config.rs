//! Run configuration: a TOML file whose keys may be written flat with dotted namespaces
//! (`eco.mu = 1e-3`) or as tables. Every key is optional and falls back to the defaults below.

use anyhow::{bail, ensure, Context, Result};
use pcrtbp_eco::charts::MassRatio;
use pcrtbp_eco::fields::FieldId;
use pcrtbp_eco::flow::IntegratorConfig;
use pcrtbp_eco::manifolds::{in_distance_domain, Side, TraceConfig};
use pcrtbp_eco::melnikov::{admissible, QuadratureBudget, SlackMode, TailModel};
use pcrtbp_eco::search::{EcoConfig, FlightConfig, SwitchPolicy, TripleConfig};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSection {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
    pub event_tol: f64,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        let d = IntegratorConfig::default();
        Self { rel_tol: d.rel_tol, abs_tol: d.abs_tol, max_steps: d.max_steps, event_tol: d.event_tol }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSection {
    /// Inner cutoff `c` of the Melnikov integrals.
    pub c: f64,
    /// Outer cutoff `C`.
    pub big_c: f64,
    pub panel_tol: f64,
    /// Half-width of the excluded window around `sqrt(2)/3`.
    pub window: f64,
    pub tails: TailModel,
}

impl Default for QuadratureSection {
    fn default() -> Self {
        let d = QuadratureBudget::default();
        Self { c: d.c, big_c: d.big_c, panel_tol: d.panel_tol, window: d.window, tails: d.tails }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSection {
    /// Center-of-mass radius at which the infinity manifolds are initialized.
    pub r_hat0: f64,
    pub angle_tol: f64,
    pub p2_exclusion: f64,
    /// Half-width of the excluded window of the distance functions.
    pub window: f64,
}

impl Default for TraceSection {
    fn default() -> Self {
        let d = TraceConfig::default();
        Self { r_hat0: d.r_hat0, angle_tol: d.angle_tol, p2_exclusion: d.p2_exclusion, window: d.window }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    /// Number of grid points over `[theta_min, theta_max)` and of certification subintervals.
    pub grid: usize,
    pub theta_min: f64,
    pub theta_max: f64,
    pub certify: bool,
    pub slack: SlackMode,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self { grid: 10_000, theta_min: -PI, theta_max: PI, certify: true, slack: SlackMode::Lipschitz }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistanceSection {
    pub mus: Vec<f64>,
    pub theta_hat_0: f64,
    pub delta: f64,
    pub thetas: Vec<f64>,
}

impl Default for DistanceSection {
    fn default() -> Self {
        Self {
            mus: vec![1e-3, 1e-4],
            theta_hat_0: 0.0,
            delta: 0.2,
            thetas: vec![-3.0, -2.4, -1.8, -1.2, -0.6, 0.0, 1.2, 1.8, 2.4, 3.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EcoSection {
    pub mu: f64,
    pub h: f64,
    pub delta: f64,
    pub count: usize,
    pub seeds: usize,
    pub start_radius: f64,
    pub tol: f64,
    pub escape_radius: f64,
    pub max_time: f64,
}

impl Default for EcoSection {
    fn default() -> Self {
        let d = EcoConfig::default();
        Self {
            mu: 1e-3,
            h: 0.0,
            delta: d.flight.delta,
            count: 20,
            seeds: d.seeds,
            start_radius: d.start_radius,
            tol: d.tol,
            escape_radius: d.flight.policy.escape_radius,
            max_time: d.flight.max_time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TripleSection {
    pub mu: f64,
    pub delta: f64,
    pub slope_step: f64,
    pub tol: f64,
}

impl Default for TripleSection {
    fn default() -> Self {
        let d = TripleConfig::default();
        Self { mu: 1e-4, delta: 0.1, slope_step: d.slope_step, tol: d.tol }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalmapSection {
    pub mu: f64,
    pub h: f64,
    pub delta: f64,
    pub nu_min: f64,
    pub nu_max: f64,
    /// Number of logarithmically spaced `nu` values.
    pub points: usize,
    pub z0: f64,
    pub z1: f64,
}

impl Default for LocalmapSection {
    fn default() -> Self {
        Self { mu: 1e-3, h: 0.0, delta: 0.1, nu_min: 1e-5, nu_max: 1e-2, points: 13, z0: 0.3, z1: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrateSection {
    pub field: FieldId,
    pub mu: f64,
    /// Energy level, used only by the energy-slaved collision charts.
    pub h: f64,
    pub state: Vec<f64>,
    pub t_end: f64,
    /// Random states drawn for the chart round-trip check.
    pub roundtrip_samples: usize,
}

impl Default for IntegrateSection {
    fn default() -> Self {
        Self { field: FieldId::PolarCm, mu: 1e-3, h: 0.0, state: vec![1.6, 0.4, 0.1, 1.2], t_end: 100.0, roundtrip_samples: 10_000 }
    }
}

/// The full configuration of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub integrator: IntegratorSection,
    pub quadrature: QuadratureSection,
    pub trace: TraceSection,
    pub melnikov_scan: ScanSection,
    pub distance: DistanceSection,
    pub eco: EcoSection,
    pub triple: TripleSection,
    pub localmap: LocalmapSection,
    pub integrate: IntegrateSection,
    /// Seed of every random draw.
    pub seed: u64,
}

impl RunConfig {
    /// Reads a configuration file; a missing path yields the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn integrator(&self) -> IntegratorConfig {
        let s = &self.integrator;
        IntegratorConfig { rel_tol: s.rel_tol, abs_tol: s.abs_tol, max_steps: s.max_steps, event_tol: s.event_tol, ..IntegratorConfig::default() }
    }

    pub fn budget(&self) -> QuadratureBudget {
        let q = &self.quadrature;
        QuadratureBudget { c: q.c, big_c: q.big_c, panel_tol: q.panel_tol, window: q.window, tails: q.tails }
    }

    pub fn trace(&self) -> TraceConfig {
        let t = &self.trace;
        TraceConfig {
            integrator: self.integrator(),
            r_hat0: t.r_hat0,
            angle_tol: t.angle_tol,
            p2_exclusion: t.p2_exclusion,
            window: t.window,
            budget: self.budget(),
            ..TraceConfig::default()
        }
    }

    pub fn eco_config(&self) -> EcoConfig {
        let e = &self.eco;
        let policy = SwitchPolicy { escape_radius: e.escape_radius, ..SwitchPolicy::default() };
        EcoConfig {
            flight: FlightConfig { integrator: self.integrator(), policy, delta: e.delta, max_time: e.max_time },
            trace: self.trace(),
            seeds: e.seeds,
            start_radius: e.start_radius,
            tol: e.tol,
            ..EcoConfig::default()
        }
    }

    pub fn triple_config(&self) -> TripleConfig {
        TripleConfig { trace: self.trace(), budget: self.budget(), slope_step: self.triple.slope_step, tol: self.triple.tol, ..TripleConfig::default() }
    }

    /// The `nu` grid of the transition-map verification.
    pub fn nu_grid(&self) -> Vec<f64> {
        let l = &self.localmap;
        let n = l.points;
        (0..n).map(|i| l.nu_min * (l.nu_max / l.nu_min).powf(i as f64 / (n - 1) as f64)).collect()
    }

    /// Checks every section against the preconditions of the module it feeds.
    pub fn validate(&self) -> Result<()> {
        self.integrator().validate()?;
        self.budget().validate()?;
        self.trace().validate()?;

        let s = &self.melnikov_scan;
        ensure!(s.grid > 0, "melnikov_scan.grid must be positive");
        ensure!(s.theta_min < s.theta_max && s.theta_max - s.theta_min <= 2.0 * PI + 1e-12, "melnikov_scan theta range must be a nonempty interval of length at most 2 pi");
        let step = (s.theta_max - s.theta_min) / s.grid as f64;
        let window = self.quadrature.window;
        ensure!(
            (0..s.grid).any(|i| admissible(s.theta_min + step * i as f64, window)),
            "melnikov_scan grid has no admissible angle outside the window of half-width {window}"
        );

        let d = &self.distance;
        ensure!(!d.mus.is_empty() && !d.thetas.is_empty(), "distance.mus and distance.thetas must be nonempty");
        for &mu in &d.mus {
            MassRatio::new(mu)?;
        }
        ensure!(d.delta > 0.0 && d.delta < 0.5, "distance.delta must lie in (0, 0.5)");
        for &theta in &d.thetas {
            ensure!(in_distance_domain(theta, Side::Plus, d.delta, self.trace.window), "distance.thetas: {theta} lies in the excluded window");
        }

        let e = &self.eco;
        MassRatio::new(e.mu)?;
        ensure!(e.count > 0, "eco.count must be positive");
        ensure!(e.h.abs() <= 10.0 * e.mu, "eco.h must be of order mu");
        self.eco_config().validate()?;

        let t = &self.triple;
        MassRatio::new(t.mu)?;
        ensure!(t.delta > 0.0 && t.delta < 0.5 && t.mu < t.delta * t.delta, "triple needs mu << delta^2 < 1/4");
        ensure!(t.slope_step > 0.0 && t.tol > 0.0, "triple.slope_step and triple.tol must be positive");

        let l = &self.localmap;
        MassRatio::new(l.mu)?;
        ensure!(l.delta > 0.0 && l.delta < 0.5, "localmap.delta must lie in (0, 0.5)");
        ensure!(l.points >= 2, "localmap.points must be at least 2");
        ensure!(1e-6 * l.delta <= l.nu_min && l.nu_min < l.nu_max && l.nu_max < l.delta, "localmap nu range must satisfy 1e-6 delta <= nu_min < nu_max < delta");

        let i = &self.integrate;
        MassRatio::new(i.mu)?;
        if i.state.len() != i.field.dim() {
            bail!("integrate.state has {} components, field {:?} expects {}", i.state.len(), i.field, i.field.dim());
        }
        ensure!(i.t_end.is_finite() && i.t_end != 0.0, "integrate.t_end must be finite and nonzero");
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn dotted_keys_and_tables_agree() {
        let flat: RunConfig = toml::from_str("eco.mu = 2e-3\nquadrature.c = 1e-4\nseed = 7\n").unwrap();
        let table: RunConfig = toml::from_str("seed = 7\n[eco]\nmu = 2e-3\n[quadrature]\nc = 1e-4\n").unwrap();
        assert_eq!(flat, table);
        assert_eq!(flat.eco.mu, 2e-3);
        assert_eq!(flat.eco.count, EcoSection::default().count);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("eco.mass = 1e-3\n").is_err());
    }

    #[test]
    fn bad_sections_fail_validation() {
        let mut c = RunConfig::default();
        c.quadrature.window = 3.2;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.melnikov_scan.theta_min = 1.0;
        c.melnikov_scan.theta_max = 0.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.integrate.state.pop();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.distance.thetas = vec![0.4];
        assert!(c.validate().is_err());
    }

    #[test]
    fn serialized_defaults_round_trip() {
        let c = RunConfig::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), c);
    }
}
