//! Sun direction from geotag and UTC capture time.
//!
//! Low-precision solar coordinates after Meeus (*Astronomical Algorithms*,
//! ch. 25): mean longitude and anomaly, equation of center, apparent
//! longitude with the nutation/aberration correction, then right ascension
//! and declination converted to local azimuth/elevation through the mean
//! sidereal time. Atmospheric refraction is not applied; the result is the
//! geometric elevation. Typical error against a full ephemeris is around
//! 0.01° for 1950–2050.

use chrono::{DateTime, Datelike, Timelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{CaptureMeta, Vec3};

#[derive(Debug, Error)]
pub enum SolarError {
    #[error("timestamp {0} is outside the supported range (years 1900–2100)")]
    OutOfRange(String),
    #[error("sun is below the horizon (elevation {elevation_deg:.2}°); no direct sunlight to estimate")]
    BelowHorizon { elevation_deg: f64 },
}

/// Unit vector towards the sun in the East/North/Up frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SunDirection {
    pub vector: [f64; 3],
    /// Degrees clockwise from North.
    pub azimuth_deg: f64,
    /// Degrees above the horizon.
    pub elevation_deg: f64,
}

impl SunDirection {
    pub fn from_azimuth_elevation(azimuth_deg: f64, elevation_deg: f64) -> Self {
        let az = azimuth_deg.to_radians();
        let el = elevation_deg.to_radians();
        Self {
            vector: [az.sin() * el.cos(), az.cos() * el.cos(), el.sin()],
            azimuth_deg: azimuth_deg.rem_euclid(360.0),
            elevation_deg,
        }
    }

    pub fn enu(&self) -> Vec3 {
        Vec3::from(self.vector)
    }

    /// Sun vector in the project's world frame.
    pub fn world(&self, meta: &CaptureMeta) -> Vec3 {
        meta.enu_to_world(&self.enu())
    }
}

/// Julian day (UT) of a UTC instant.
pub fn julian_day(t: &DateTime<Utc>) -> f64 {
    let (mut y, mut m) = (t.year() as f64, t.month() as f64);
    let day = t.day() as f64
        + (t.hour() as f64 + (t.minute() as f64 + (t.second() as f64 + t.nanosecond() as f64 * 1e-9) / 60.0) / 60.0)
            / 24.0;
    if m <= 2.0 {
        y -= 1.0;
        m += 12.0;
    }
    let a = (y / 100.0).floor();
    let b = 2.0 - a + (a / 4.0).floor();
    (365.25 * (y + 4716.0)).floor() + (30.6001 * (m + 1.0)).floor() + day + b - 1524.5
}

/// Apparent right ascension and declination (radians) of the sun.
fn equatorial(jd: f64) -> (f64, f64) {
    let t = (jd - 2_451_545.0) / 36_525.0;
    let l0 = 280.46646 + t * (36000.76983 + 0.0003032 * t);
    let m = (357.52911 + t * (35999.05029 - 0.0001537 * t)).to_radians();
    let c = m.sin() * (1.914602 - t * (0.004817 + 0.000014 * t))
        + (2.0 * m).sin() * (0.019993 - 0.000101 * t)
        + (3.0 * m).sin() * 0.000289;
    let true_long = l0 + c;
    let omega = (125.04 - 1934.136 * t).to_radians();
    let lambda = (true_long - 0.00569 - 0.00478 * omega.sin()).to_radians();
    let eps0 = 23.0 + (26.0 + (21.448 - t * (46.815 + t * (0.00059 - t * 0.001813))) / 60.0) / 60.0;
    let eps = (eps0 + 0.00256 * omega.cos()).to_radians();
    let ra = (eps.cos() * lambda.sin()).atan2(lambda.cos());
    let dec = (eps.sin() * lambda.sin()).asin();
    (ra, dec)
}

/// Greenwich mean sidereal time in degrees.
fn gmst_deg(jd: f64) -> f64 {
    let t = (jd - 2_451_545.0) / 36_525.0;
    280.46061837 + 360.98564736629 * (jd - 2_451_545.0) + 0.000387933 * t * t - t * t * t / 38_710_000.0
}

pub fn sun_direction(meta: &CaptureMeta) -> Result<SunDirection, SolarError> {
    let year = meta.timestamp_utc.year();
    if !(1900..=2100).contains(&year) {
        return Err(SolarError::OutOfRange(meta.format_timestamp()));
    }
    let jd = julian_day(&meta.timestamp_utc);
    let (ra, dec) = equatorial(jd);
    let lat = meta.latitude.to_radians();
    let hour_angle = (gmst_deg(jd) + meta.longitude).to_radians() - ra;

    // Local ENU components of the unit vector towards the sun.
    let east = -dec.cos() * hour_angle.sin();
    let north = dec.sin() * lat.cos() - dec.cos() * hour_angle.cos() * lat.sin();
    let up = dec.sin() * lat.sin() + dec.cos() * hour_angle.cos() * lat.cos();
    let v = Vec3::new(east, north, up).normalize();
    Ok(SunDirection {
        vector: [v.x, v.y, v.z],
        azimuth_deg: v.x.atan2(v.y).to_degrees().rem_euclid(360.0),
        elevation_deg: v.z.clamp(-1.0, 1.0).asin().to_degrees(),
    })
}

/// True when the sun is at or below the horizon.
pub fn sun_below_horizon(dir: &SunDirection) -> bool {
    dir.elevation_deg <= 0.0
}
