//! End-to-end orbit searches through the public API.

use pcrtbp_eco::charts::wrap_angle;
use pcrtbp_eco::closedform::w_sigma;
use pcrtbp_eco::manifolds::{distance, Side, TraceConfig};
use pcrtbp_eco::melnikov::{melnikov_plus, QuadratureBudget};
use pcrtbp_eco::search::{find_ecos, EcoConfig, FlightEnd};

#[test]
fn first_ecos_are_symmetric_collisions() {
    let ecos = find_ecos(1e-3, 0.0, 2, &EcoConfig::default()).unwrap();
    assert_eq!(ecos.len(), 2);
    for e in &ecos {
        assert_eq!(e.flight.end, FlightEnd::Collision);
        assert!(e.residual < 1e-8);
        assert!(wrap_angle(e.theta_bar_minus + e.theta_bar_plus).abs() < 1e-6);
        assert!(e.flight.energy_error < 1e-9);
    }
    assert!(ecos[1].r_max > ecos[0].r_max);
}

#[test]
fn distance_tracks_melnikov_at_small_mu() {
    let (mu, delta) = (1e-4, 0.2);
    let trace = TraceConfig::default();
    let budget = QuadratureBudget::default();
    for theta in [-1.2, 0.0, 1.8] {
        let d = distance(theta, Side::Plus, mu, 0.0, delta, &trace).unwrap();
        let m = melnikov_plus(theta + w_sigma(delta), &budget).unwrap();
        assert!((d.value / mu - m.value).abs() < 5e-3, "theta {theta}: {} vs {}", d.value / mu, m.value);
    }
}
