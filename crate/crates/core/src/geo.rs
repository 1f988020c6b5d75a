//! Great-circle geometry.

use crate::model::GeoPoint;

/// Mean Earth radius in metres.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Haversine distance in metres.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    if a == b {
        return 0.0;
    }
    let (lat1, lat2) = (a.lat().to_radians(), b.lat().to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon() - a.lon()).to_radians();
    let h = libm::pow(libm::sin(dlat / 2.0), 2.0)
        + libm::cos(lat1) * libm::cos(lat2) * libm::pow(libm::sin(dlon / 2.0), 2.0);
    2.0 * EARTH_RADIUS_M * libm::asin(libm::sqrt(h.min(1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meridian_arc_matches_closed_form() {
        let a = GeoPoint::from_degrees(10.0, 20.0).unwrap();
        let b = GeoPoint::from_degrees(11.0, 20.0).unwrap();
        let expected = EARTH_RADIUS_M * core::f64::consts::PI / 180.0;
        assert!((haversine_m(a, b) - expected).abs() < 1e-6);
    }

    #[test]
    fn symmetric() {
        let a = GeoPoint::from_degrees(40.7061, -73.9969).unwrap();
        let b = GeoPoint::from_degrees(48.8606, 2.3376).unwrap();
        assert_eq!(haversine_m(a, b), haversine_m(b, a));
    }
}
