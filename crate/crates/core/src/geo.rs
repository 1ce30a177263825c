//! Geographic points and the small-angle local frame used by the kinematics.

use serde::{Deserialize, Serialize};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoPoint {
    /// Degrees, positive north.
    pub lat: f64,
    /// Degrees, positive east.
    pub lon: f64,
    /// Meters above ground.
    pub alt: f64,
}

/// East/north/up displacement in meters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Enu {
    pub east: f64,
    pub north: f64,
    pub up: f64,
}

impl Enu {
    pub fn horizontal(&self) -> f64 {
        self.east.hypot(self.north)
    }

    pub fn norm(&self) -> f64 {
        (self.east * self.east + self.north * self.north + self.up * self.up).sqrt()
    }
}

impl GeoPoint {
    pub const fn new(lat: f64, lon: f64, alt: f64) -> Self {
        Self { lat, lon, alt }
    }

    pub fn is_flyable(&self) -> bool {
        self.lat.abs() <= 90.0 && self.lon.abs() <= 180.0 && self.alt >= 0.0
    }

    pub fn with_alt(self, alt: f64) -> Self {
        Self { alt, ..self }
    }

    /// Point displaced by `d` from `self`; inverse of [`enu_offset`].
    pub fn offset(&self, d: Enu) -> GeoPoint {
        let dlat = d.north / EARTH_RADIUS_M;
        let dlon = d.east / (EARTH_RADIUS_M * self.lat.to_radians().cos());
        GeoPoint {
            lat: self.lat + dlat.to_degrees(),
            lon: self.lon + dlon.to_degrees(),
            alt: self.alt + d.up,
        }
    }

    /// Linear interpolation in coordinate space; `f` in `[0, 1]`.
    pub fn lerp(&self, to: &GeoPoint, f: f64) -> GeoPoint {
        if f >= 1.0 {
            return *to;
        }
        GeoPoint {
            lat: self.lat + (to.lat - self.lat) * f,
            lon: self.lon + (to.lon - self.lon) * f,
            alt: self.alt + (to.alt - self.alt) * f,
        }
    }

    pub fn distance_to(&self, to: &GeoPoint) -> f64 {
        enu_offset(self, to).norm()
    }
}

/// Equirectangular approximation, valid for points a few kilometers apart.
pub fn enu_offset(from: &GeoPoint, to: &GeoPoint) -> Enu {
    let north = (to.lat - from.lat).to_radians() * EARTH_RADIUS_M;
    let east = (to.lon - from.lon).to_radians() * EARTH_RADIUS_M * from.lat.to_radians().cos();
    Enu {
        east,
        north,
        up: to.alt - from.alt,
    }
}

/// Compass heading in degrees `[0, 360)` of a horizontal displacement.
pub fn heading_deg(d: &Enu) -> f64 {
    if d.east == 0.0 && d.north == 0.0 {
        return 0.0;
    }
    let h = d.east.atan2(d.north).to_degrees();
    if h < 0.0 {
        h + 360.0
    } else {
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_points() {
        let p = GeoPoint::new(42.0, -76.0, 10.0);
        assert_eq!(enu_offset(&p, &p), Enu::default());
    }

    #[test]
    fn one_hundred_thousandth_degree() {
        // pi / 180 * 6371000 * 1e-5
        let a = GeoPoint::new(0.0, 0.0, 0.0);
        let north = enu_offset(&a, &GeoPoint::new(1e-5, 0.0, 0.0)).north;
        assert!((north - 1.111949).abs() < 1e-3, "{north}");
        let b = GeoPoint::new(60.0, 10.0, 0.0);
        let east = enu_offset(&b, &GeoPoint::new(60.0, 10.00001, 0.0)).east;
        assert!((east - 0.555975).abs() < 1e-3, "{east}");
    }

    #[test]
    fn offset_inverts_enu() {
        let o = GeoPoint::new(42.44, -76.48, 0.0);
        let d = Enu {
            east: 70.0,
            north: -25.0,
            up: 12.0,
        };
        let back = enu_offset(&o, &o.offset(d));
        assert!((back.east - 70.0).abs() < 1e-6);
        assert!((back.north + 25.0).abs() < 1e-6);
        assert!((back.up - 12.0).abs() < 1e-9);
    }

    #[test]
    fn headings() {
        let h = |east, north| {
            heading_deg(&Enu {
                east,
                north,
                up: 0.0,
            })
        };
        assert_eq!(h(0.0, 1.0), 0.0);
        assert!((h(1.0, 0.0) - 90.0).abs() < 1e-12);
        assert!((h(-1.0, 0.0) - 270.0).abs() < 1e-12);
    }

    #[test]
    fn flyable_bounds() {
        assert!(GeoPoint::new(90.0, 180.0, 0.0).is_flyable());
        assert!(!GeoPoint::new(90.1, 0.0, 0.0).is_flyable());
        assert!(!GeoPoint::new(0.0, 0.0, -1.0).is_flyable());
    }
}
