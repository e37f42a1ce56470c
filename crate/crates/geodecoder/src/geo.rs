//! Coordinates, viewports, and the projection between degrees and pixels.
//!
//! Maps use a local equirectangular projection around the viewport center:
//! one degree of latitude is a fixed 111,320 m and longitude shrinks by
//! cos(center latitude). That keeps projection exactly invertible, which the
//! dataset builders rely on when they convert truth coordinates to pixels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in meters, used for geodesic distance.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
/// Meters per degree of latitude (and of longitude at the equator).
pub const METERS_PER_DEGREE: f64 = 111_320.0;
/// Smallest supported zoom scale (coarsest resolution).
pub const MIN_SCALE: u8 = 3;
/// Largest supported zoom scale (finest resolution).
pub const MAX_SCALE: u8 = 18;

/// Resolution at scale 0 in meters per pixel; scale 11 lands on exactly 100.
const SCALE_ZERO_RESOLUTION: f64 = 204_800.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("scale {0} outside supported range {MIN_SCALE}..={MAX_SCALE}")]
    ScaleOutOfRange(u8),
    #[error("longitude {0} outside [-180, 180]")]
    LongitudeOutOfRange(f64),
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("viewport must have nonzero pixel dimensions, got {0}x{1}")]
    EmptyViewport(u32, u32),
}

/// A WGS-84 style coordinate in degrees, longitude first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lng: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub fn new(lng: f64, lat: f64) -> Result<Self, GeoError> {
        if !(-180.0..=180.0).contains(&lng) || !lng.is_finite() {
            return Err(GeoError::LongitudeOutOfRange(lng));
        }
        if !(-90.0..=90.0).contains(&lat) || !lat.is_finite() {
            return Err(GeoError::LatitudeOutOfRange(lat));
        }
        Ok(Self { lng, lat })
    }
}

/// A rendered view of the world: center, zoom scale, and raster size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewport {
    pub center: GeoPoint,
    pub scale: u8,
    pub width_px: u32,
    pub height_px: u32,
}

impl Viewport {
    pub fn new(center: GeoPoint, scale: u8, width_px: u32, height_px: u32) -> Result<Self, GeoError> {
        if !(MIN_SCALE..=MAX_SCALE).contains(&scale) {
            return Err(GeoError::ScaleOutOfRange(scale));
        }
        if width_px == 0 || height_px == 0 {
            return Err(GeoError::EmptyViewport(width_px, height_px));
        }
        Ok(Self { center, scale, width_px, height_px })
    }

    /// Ground resolution of this viewport in meters per pixel.
    pub fn meters_per_pixel(&self) -> f64 {
        meters_per_pixel(self.scale).expect("scale validated at construction")
    }
}

/// Ground resolution for a zoom scale: halves with each scale step.
pub fn meters_per_pixel(scale: u8) -> Result<f64, GeoError> {
    if !(MIN_SCALE..=MAX_SCALE).contains(&scale) {
        return Err(GeoError::ScaleOutOfRange(scale));
    }
    Ok(SCALE_ZERO_RESOLUTION / f64::powi(2.0, scale as i32))
}

/// Projects a point to fractional pixel coordinates in the viewport.
///
/// x grows east, y grows south; the viewport center maps to the raster
/// center. Points outside the raster project to out-of-range values rather
/// than clamping.
pub fn project(vp: &Viewport, p: GeoPoint) -> (f64, f64) {
    let mpp = vp.meters_per_pixel();
    let east_m = (p.lng - vp.center.lng) * METERS_PER_DEGREE * vp.center.lat.to_radians().cos();
    let north_m = (p.lat - vp.center.lat) * METERS_PER_DEGREE;
    let x = vp.width_px as f64 / 2.0 + east_m / mpp;
    let y = vp.height_px as f64 / 2.0 - north_m / mpp;
    (x, y)
}

/// Inverse of [`project`] for the same viewport.
pub fn unproject(vp: &Viewport, x: f64, y: f64) -> GeoPoint {
    let mpp = vp.meters_per_pixel();
    let east_m = (x - vp.width_px as f64 / 2.0) * mpp;
    let north_m = (vp.height_px as f64 / 2.0 - y) * mpp;
    let lng = vp.center.lng + east_m / (METERS_PER_DEGREE * vp.center.lat.to_radians().cos());
    let lat = vp.center.lat + north_m / METERS_PER_DEGREE;
    GeoPoint { lng, lat }
}

/// Great-circle distance in meters on a spherical Earth.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlng = (b.lng - a.lng).to_radians();
    let s = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlng / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * s.sqrt().min(1.0).asin()
}

/// East/north displacement of `p` from `origin` in meters, in the local
/// equirectangular frame anchored at `origin`.
pub fn local_meters(origin: GeoPoint, p: GeoPoint) -> (f64, f64) {
    let east = (p.lng - origin.lng) * METERS_PER_DEGREE * origin.lat.to_radians().cos();
    let north = (p.lat - origin.lat) * METERS_PER_DEGREE;
    (east, north)
}

/// Point at the given east/north meter displacement from `origin`.
pub fn offset_meters(origin: GeoPoint, east_m: f64, north_m: f64) -> GeoPoint {
    GeoPoint {
        lng: origin.lng + east_m / (METERS_PER_DEGREE * origin.lat.to_radians().cos()),
        lat: origin.lat + north_m / METERS_PER_DEGREE,
    }
}
