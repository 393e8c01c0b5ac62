//! Spherical (Web) Mercator projection, satellite windows assembled from
//! slippy tiles, and street-name annotation.

mod annotate;
mod store;

pub use annotate::{annotate_streets, rank_roads, AnnotationStyle, Annotation, LabelPlacement, RoadCandidate};
pub use store::{assemble_window, assemble_window_at, SatelliteWindow, TileStore, TILE_SIZE};

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Latitude limit of the square Mercator world.
pub const MAX_LAT: f64 = 85.051_128_779_806_59;

pub fn world_size(zoom: u8) -> f64 {
    TILE_SIZE as f64 * (1u64 << zoom) as f64
}

/// Projects WGS84 degrees to real-valued world pixels at `zoom`
/// (origin top-left, y growing south).
pub fn lonlat_to_world_pixel(lon: f64, lat: f64, zoom: u8) -> Result<(f64, f64)> {
    if !(lat.abs() <= MAX_LAT) {
        return Err(Error::OutOfRange(format!("latitude {lat} outside Mercator bounds")));
    }
    if !(lon.abs() <= 180.0) {
        return Err(Error::OutOfRange(format!("longitude {lon}")));
    }
    if zoom > 30 {
        return Err(Error::OutOfRange(format!("zoom {zoom}")));
    }
    let world = world_size(zoom);
    let px = (lon + 180.0) / 360.0 * world;
    let merc = lat.to_radians().tan().asinh();
    let py = (1.0 - merc / PI) / 2.0 * world;
    Ok((px, py))
}

/// Inverse of [`lonlat_to_world_pixel`].
pub fn world_pixel_to_lonlat(px: f64, py: f64, zoom: u8) -> Result<(f64, f64)> {
    if zoom > 30 {
        return Err(Error::OutOfRange(format!("zoom {zoom}")));
    }
    let world = world_size(zoom);
    if !(0.0..=world).contains(&px) || !(0.0..=world).contains(&py) {
        return Err(Error::OutOfRange(format!(
            "world pixel ({px}, {py}) outside [0, {world}] at zoom {zoom}"
        )));
    }
    let lon = px / world * 360.0 - 180.0;
    let lat = (PI * (1.0 - 2.0 * py / world)).sinh().atan().to_degrees();
    Ok((lon, lat))
}
