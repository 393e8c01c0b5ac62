use std::collections::HashMap;
use std::path::PathBuf;

use image::RgbImage;

use super::lonlat_to_world_pixel;
use crate::error::{Error, Result};
use crate::raster::{self, MID_GRAY};

pub const TILE_SIZE: u32 = 256;

/// Read-only slippy tile pyramid laid out as `{root}/{z}/{x}/{y}.png`.
#[derive(Debug, Clone)]
pub struct TileStore {
    pub root: PathBuf,
    pub zoom: u8,
}

impl TileStore {
    pub fn new(root: impl Into<PathBuf>, zoom: u8) -> Self {
        TileStore {
            root: root.into(),
            zoom,
        }
    }

    pub fn tile_path(&self, x: u64, y: u64) -> PathBuf {
        self.root
            .join(self.zoom.to_string())
            .join(x.to_string())
            .join(format!("{y}.png"))
    }

    /// `Ok(None)` for a missing tile; errors for unreadable or mis-sized ones.
    pub fn load(&self, x: u64, y: u64) -> Result<Option<RgbImage>> {
        let path = self.tile_path(x, y);
        if !path.exists() {
            return Ok(None);
        }
        let img = raster::load_rgb(&path)?;
        if img.dimensions() != (TILE_SIZE, TILE_SIZE) {
            return Err(Error::File {
                path,
                msg: format!("tile is {:?}, expected 256x256", img.dimensions()),
            });
        }
        Ok(Some(img))
    }
}

#[derive(Debug, Clone)]
pub struct SatelliteWindow {
    pub image: RgbImage,
    pub center: (f64, f64),
    pub zoom: u8,
    /// World-pixel coordinate of the window's top-left pixel.
    pub origin: (i64, i64),
    pub missing_tiles: usize,
}

impl SatelliteWindow {
    pub fn side(&self) -> u32 {
        self.image.width()
    }

    /// World pixel to window pixel.
    pub fn to_window(&self, world: (f64, f64)) -> (f64, f64) {
        (world.0 - self.origin.0 as f64, world.1 - self.origin.1 as f64)
    }
}

/// Square window of `window_px` centered on `center` (lon, lat).
pub fn assemble_window(
    center: (f64, f64),
    zoom: u8,
    window_px: u32,
    store: &TileStore,
) -> Result<SatelliteWindow> {
    let (px, py) = lonlat_to_world_pixel(center.0, center.1, zoom)?;
    let mut win = assemble_window_at((px, py), window_px, store)?;
    win.center = center;
    Ok(win)
}

/// Window centered on a world-pixel position. The top-left origin is
/// `floor(center) - window_px / 2`, so integer shifts of the center shift the
/// content by the same amount.
pub fn assemble_window_at(
    center_px: (f64, f64),
    window_px: u32,
    store: &TileStore,
) -> Result<SatelliteWindow> {
    if window_px == 0 {
        return Err(Error::invalid("window_px must be positive"));
    }
    let half = (window_px / 2) as i64;
    let ox = center_px.0.floor() as i64 - half;
    let oy = center_px.1.floor() as i64 - half;
    let ts = TILE_SIZE as i64;
    let n_tiles = 1i64 << store.zoom;

    let mut out = RgbImage::from_pixel(window_px, window_px, MID_GRAY);
    let mut missing = 0usize;
    let mut present = 0usize;
    let mut cache: HashMap<(u64, u64), Option<RgbImage>> = HashMap::new();

    let tx0 = ox.div_euclid(ts);
    let tx1 = (ox + window_px as i64 - 1).div_euclid(ts);
    let ty0 = oy.div_euclid(ts);
    let ty1 = (oy + window_px as i64 - 1).div_euclid(ts);
    for ty in ty0..=ty1 {
        for tx in tx0..=tx1 {
            // horizontal wrap across the antimeridian; nothing beyond the poles
            let tile = if (0..n_tiles).contains(&ty) {
                let key = (tx.rem_euclid(n_tiles) as u64, ty as u64);
                if let std::collections::hash_map::Entry::Vacant(e) = cache.entry(key) {
                    let t = store.load(key.0, key.1)?;
                    e.insert(t);
                }
                cache[&key].as_ref()
            } else {
                None
            };
            let Some(tile) = tile else {
                missing += 1;
                continue;
            };
            present += 1;
            // intersection of this tile with the window, in world pixels
            let x0 = (tx * ts).max(ox);
            let x1 = ((tx + 1) * ts).min(ox + window_px as i64);
            let y0 = (ty * ts).max(oy);
            let y1 = ((ty + 1) * ts).min(oy + window_px as i64);
            for wy in y0..y1 {
                for wx in x0..x1 {
                    let p = *tile.get_pixel((wx - tx * ts) as u32, (wy - ty * ts) as u32);
                    out.put_pixel((wx - ox) as u32, (wy - oy) as u32, p);
                }
            }
        }
    }
    if present == 0 {
        return Err(Error::File {
            path: store.root.clone(),
            msg: format!(
                "no tiles available for window at world pixel ({ox}, {oy}) zoom {}",
                store.zoom
            ),
        });
    }
    if missing > 0 {
        log::warn!("window at ({ox}, {oy}): {missing} missing tiles filled with gray");
    }
    let (lon, lat) = super::world_pixel_to_lonlat(
        center_px.0.clamp(0.0, super::world_size(store.zoom)),
        center_px.1.clamp(0.0, super::world_size(store.zoom)),
        store.zoom,
    )?;
    Ok(SatelliteWindow {
        image: out,
        center: (lon, lat),
        zoom: store.zoom,
        origin: (ox, oy),
        missing_tiles: missing,
    })
}
