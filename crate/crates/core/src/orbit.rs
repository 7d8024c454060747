//! Walker shells, circular two-body propagation and ground-station geometry.
//!
//! Satellites and stations share one Earth-centred Earth-fixed frame on a
//! spherical Earth. Angles are radians internally; the serialized shell and
//! station types carry degrees.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::ConfigError;

/// Mean Earth radius used for every geometric computation, km.
pub const EARTH_RADIUS_KM: f64 = 6371.0;
/// Standard gravitational parameter of the Earth, km^3/s^2.
pub const MU_EARTH: f64 = 398_600.441_8;
/// Sidereal rotation rate of the Earth, rad/s.
pub const EARTH_ROTATION_RATE: f64 = 7.292_115_9e-5;

/// A symmetric Walker shell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkerShell {
    pub planes: u32,
    pub sats_per_plane: u32,
    pub inclination_deg: f64,
    pub altitude_km: f64,
    /// Inter-plane phase offset numerator `F`.
    #[serde(default)]
    pub phasing_factor: u32,
    /// 360 for a delta pattern, 180 for a star pattern.
    #[serde(default = "default_raan_span")]
    pub raan_span_deg: f64,
}

fn default_raan_span() -> f64 {
    360.0
}

impl WalkerShell {
    pub fn new(planes: u32, sats_per_plane: u32, inclination_deg: f64, altitude_km: f64) -> Self {
        Self {
            planes,
            sats_per_plane,
            inclination_deg,
            altitude_km,
            phasing_factor: 0,
            raan_span_deg: 360.0,
        }
    }

    pub fn with_phasing(mut self, phasing_factor: u32) -> Self {
        self.phasing_factor = phasing_factor;
        self
    }

    pub fn with_raan_span(mut self, raan_span_deg: f64) -> Self {
        self.raan_span_deg = raan_span_deg;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.planes == 0 {
            return Err(ConfigError::invalid("shell.planes", "must be at least 1"));
        }
        if self.sats_per_plane == 0 {
            return Err(ConfigError::invalid("shell.sats_per_plane", "must be at least 1"));
        }
        if !(0.0..=180.0).contains(&self.inclination_deg) {
            return Err(ConfigError::invalid("shell.inclination_deg", "must lie in [0, 180]"));
        }
        if !(self.altitude_km > 0.0 && self.altitude_km.is_finite()) {
            return Err(ConfigError::invalid("shell.altitude_km", "must be positive"));
        }
        if self.phasing_factor >= self.planes {
            return Err(ConfigError::invalid("shell.phasing_factor", "must be below planes"));
        }
        if !(self.raan_span_deg > 0.0 && self.raan_span_deg <= 360.0) {
            return Err(ConfigError::invalid("shell.raan_span_deg", "must lie in (0, 360]"));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.planes as usize * self.sats_per_plane as usize
    }

    /// Star patterns (RAAN spread over half a circle) have a seam between
    /// the first and last plane that cross-plane links do not span.
    pub fn is_star(&self) -> bool {
        self.raan_span_deg < 360.0 - 1e-9
    }

    pub fn semi_major_axis_km(&self) -> f64 {
        EARTH_RADIUS_KM + self.altitude_km
    }

    pub fn sat_index(&self, id: SatId) -> usize {
        id.plane as usize * self.sats_per_plane as usize + id.slot as usize
    }

    pub fn sat_id(&self, index: usize) -> SatId {
        let spp = self.sats_per_plane as usize;
        SatId {
            plane: (index / spp) as u32,
            slot: (index % spp) as u32,
        }
    }
}

/// Identity of a satellite inside its shell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SatId {
    pub plane: u32,
    pub slot: u32,
}

impl std::fmt::Display for SatId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "P{}S{}", self.plane, self.slot)
    }
}

/// Orbital elements of one satellite on a circular orbit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatelliteElement {
    pub sat_id: SatId,
    pub raan: f64,
    pub initial_phase: f64,
    pub semi_major_axis: f64,
    pub inclination: f64,
}

impl SatelliteElement {
    /// Mean motion, rad/s.
    pub fn mean_motion(&self) -> f64 {
        (MU_EARTH / self.semi_major_axis.powi(3)).sqrt()
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.mean_motion()
    }

    /// Position in the inertial frame at `t` seconds.
    pub fn inertial_position(&self, t: f64) -> EcefPosition {
        let u = self.initial_phase + self.mean_motion() * t;
        let (su, cu) = u.sin_cos();
        let (so, co) = self.raan.sin_cos();
        let (si, ci) = self.inclination.sin_cos();
        let a = self.semi_major_axis;
        EcefPosition::new(
            a * (co * cu - so * su * ci),
            a * (so * cu + co * su * ci),
            a * (su * si),
        )
    }
}

/// Cartesian position in km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcefPosition {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EcefPosition {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::new(self.x - other.x, self.y - other.y, self.z - other.z)
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::new(self.x * k, self.y * k, self.z * k)
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.sub(other).norm()
    }

    /// Rotation about +z by `angle` radians.
    pub fn rotate_z(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y, self.z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundStation {
    #[serde(default)]
    pub gs_id: usize,
    pub name: String,
    pub latitude: f64,
    pub longitude: f64,
    /// Metres above the spherical surface.
    #[serde(default)]
    pub altitude: f64,
}

impl GroundStation {
    pub fn new(gs_id: usize, name: impl Into<String>, latitude: f64, longitude: f64) -> Self {
        Self {
            gs_id,
            name: name.into(),
            latitude,
            longitude,
            altitude: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.latitude.abs() <= 90.0) {
            return Err(ConfigError::invalid(
                format!("stations[{}].latitude", self.gs_id),
                "must lie in [-90, 90]",
            ));
        }
        if !(self.longitude.abs() <= 180.0) {
            return Err(ConfigError::invalid(
                format!("stations[{}].longitude", self.gs_id),
                "must lie in [-180, 180]",
            ));
        }
        Ok(())
    }
}

/// Expands a shell into its satellites, plane-major.
pub fn generate_constellation(shell: &WalkerShell) -> Vec<SatelliteElement> {
    let planes = shell.planes;
    let spp = shell.sats_per_plane;
    let total = f64::from(planes) * f64::from(spp);
    let raan_step = shell.raan_span_deg.to_radians() / f64::from(planes);
    let slot_step = 2.0 * PI / f64::from(spp);
    let phase_offset = f64::from(shell.phasing_factor) * 2.0 * PI / total;
    let a = shell.semi_major_axis_km();
    let inclination = shell.inclination_deg.to_radians();

    let mut out = Vec::with_capacity(shell.total());
    for plane in 0..planes {
        for slot in 0..spp {
            let phase = f64::from(slot) * slot_step + f64::from(plane) * phase_offset;
            out.push(SatelliteElement {
                sat_id: SatId { plane, slot },
                raan: f64::from(plane) * raan_step,
                initial_phase: phase.rem_euclid(2.0 * PI),
                semi_major_axis: a,
                inclination,
            });
        }
    }
    out
}

/// Earth-fixed position of a satellite at `t` seconds.
pub fn propagate(elem: &SatelliteElement, t: f64) -> EcefPosition {
    elem.inertial_position(t).rotate_z(-EARTH_ROTATION_RATE * t)
}

/// Geodetic to Earth-fixed conversion on the spherical Earth.
pub fn station_position(gs: &GroundStation) -> EcefPosition {
    let r = EARTH_RADIUS_KM + gs.altitude / 1000.0;
    let lat = gs.latitude.to_radians();
    let lon = gs.longitude.to_radians();
    EcefPosition::new(
        r * lat.cos() * lon.cos(),
        r * lat.cos() * lon.sin(),
        r * lat.sin(),
    )
}

/// Great-circle surface distance between two stations, km.
pub fn great_circle_km(a: &GroundStation, b: &GroundStation) -> f64 {
    let (lat1, lat2) = (a.latitude.to_radians(), b.latitude.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.longitude - a.longitude).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}
