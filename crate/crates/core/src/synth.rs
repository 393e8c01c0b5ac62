//! Synthetic city fixtures: an in-memory index for counting tests, and a
//! complete on-disk city (tiles, roads, street views, locations) for
//! end-to-end runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::Rng;
use serde_json::json;

use crate::error::{Error, Result};
use crate::geo_model::{AddressLabel, CityIndex, Location, ViewImage};
use crate::seed::rng_for;
use crate::tiling::{lonlat_to_world_pixel, world_pixel_to_lonlat, TILE_SIZE};

pub const STREET_NAMES: [&str; 16] = [
    "Grant Street",
    "Fifth Avenue",
    "Penn Avenue",
    "Liberty Avenue",
    "Forbes Avenue",
    "Smithfield Street",
    "Wood Street",
    "Market Street",
    "Ross Street",
    "Stanwix Street",
    "Boulevard of the Allies",
    "Fort Pitt Boulevard",
    "Bigelow Boulevard",
    "Centre Avenue",
    "Butler Street",
    "Carson Street",
];

pub const DISTRICT_NAMES: [&str; 8] = [
    "Downtown",
    "Strip District",
    "Oakland",
    "Shadyside",
    "Lawrenceville",
    "Bloomfield",
    "Squirrel Hill",
    "South Side",
];

pub fn street_name(i: usize) -> String {
    STREET_NAMES
        .get(i)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("Street {}", i + 1))
}

pub fn district_name(i: usize) -> String {
    DISTRICT_NAMES
        .get(i)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("District {}", i + 1))
}

/// Index with `n_locations × views` images and no backing files. Addresses
/// cycle through the first `n_streets` / `n_districts` names.
pub fn synthetic_index(
    city: &str,
    n_locations: usize,
    views: usize,
    n_streets: usize,
    n_districts: usize,
) -> CityIndex {
    let mut index = CityIndex::empty(city);
    let mut rng = rng_for(n_locations as u64, &["synthetic-index", city]);
    for i in 0..n_locations {
        let loc = Location {
            id: format!("L{i:05}"),
            lat: 40.44 + rng.gen_range(-0.01..0.01),
            lon: -80.0 + rng.gen_range(-0.01..0.01),
            address: AddressLabel {
                street: street_name(i % n_streets.max(1)),
                district: district_name((i / n_streets.max(1)) % n_districts.max(1)),
            },
            views: (0..views)
                .map(|k| ViewImage {
                    path: PathBuf::from(format!("streetview/L{i:05}_{k}.jpg")),
                    heading: 360.0 * k as f64 / views as f64,
                    width: 640,
                    height: 480,
                })
                .collect(),
        };
        index.push_location(loc).expect("synthetic locations are valid");
    }
    index
}

/// Deterministic background texture of the synthetic satellite layer.
pub fn ground_pixel(wx: i64, wy: i64) -> Rgb<u8> {
    Rgb([
        (wx.rem_euclid(256)) as u8,
        (wy.rem_euclid(256)) as u8,
        ((wx / 256 * 37 + wy / 256 * 91).rem_euclid(256)) as u8,
    ])
}

/// Writes every tile `{root}/{zoom}/{x}/{y}.png` for `x in xs`, `y in ys`,
/// painting pixel `(wx, wy)` with `paint`.
pub fn write_tiles(
    root: &Path,
    zoom: u8,
    xs: std::ops::RangeInclusive<u64>,
    ys: std::ops::RangeInclusive<u64>,
    paint: impl Fn(i64, i64) -> Rgb<u8>,
) -> Result<usize> {
    let ts = TILE_SIZE as i64;
    let mut n = 0;
    for x in xs {
        let dir = root.join(zoom.to_string()).join(x.to_string());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for y in ys.clone() {
            let tile = RgbImage::from_fn(TILE_SIZE, TILE_SIZE, |px, py| {
                paint(x as i64 * ts + px as i64, y as i64 * ts + py as i64)
            });
            crate::raster::save_rgb(&tile, &dir.join(format!("{y}.png")))?;
            n += 1;
        }
    }
    Ok(n)
}

#[derive(Debug, Clone)]
pub struct SynthCityConfig {
    pub city_id: String,
    pub n_locations: usize,
    pub views_per_location: usize,
    pub zoom: u8,
    pub center: (f64, f64),
    pub street_view_size: (u32, u32),
    pub seed: u64,
}

impl Default for SynthCityConfig {
    fn default() -> Self {
        SynthCityConfig {
            city_id: "synth".into(),
            n_locations: 20,
            views_per_location: 4,
            zoom: 17,
            center: (-80.0, 40.44),
            street_view_size: (320, 240),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCity {
    pub dir: PathBuf,
    pub locations: PathBuf,
    pub roads: PathBuf,
    pub tiles: PathBuf,
    pub zoom: u8,
    pub tile_count: usize,
}

const GRID: f64 = 300.0;
const HALF_SPAN: f64 = 600.0;
const ROAD_HALF_WIDTH: f64 = 4.0;

/// A 3×3 street grid: three east–west avenues and three north–south streets
/// 300 px apart at the configured zoom, four quadrant districts, and
/// locations spread along the streets.
pub fn write_synthetic_city(dir: &Path, cfg: &SynthCityConfig) -> Result<SynthCity> {
    let (cx, cy) = lonlat_to_world_pixel(cfg.center.0, cfg.center.1, cfg.zoom)?;
    let (cx, cy) = (cx.floor(), cy.floor());
    // (name, horizontal?, offset)
    let streets: Vec<(String, bool, f64)> = (0..6)
        .map(|i| (street_name(i), i < 3, (i % 3) as f64 - 1.0))
        .collect();

    let mut features = Vec::new();
    for (name, horizontal, k) in &streets {
        let (a, b) = if *horizontal {
            ((cx - HALF_SPAN, cy + k * GRID), (cx + HALF_SPAN, cy + k * GRID))
        } else {
            ((cx + k * GRID, cy - HALF_SPAN), (cx + k * GRID, cy + HALF_SPAN))
        };
        let pa = world_pixel_to_lonlat(a.0, a.1, cfg.zoom)?;
        let pb = world_pixel_to_lonlat(b.0, b.1, cfg.zoom)?;
        features.push(json!({
            "type": "Feature",
            "properties": {"name": name},
            "geometry": {"type": "LineString", "coordinates": [[pa.0, pa.1], [pb.0, pb.1]]}
        }));
    }
    let roads_path = dir.join("roads.geojson");
    crate::jsonl::write_json(&roads_path, &json!({"type": "FeatureCollection", "features": features}))?;

    // tiles covering the grid plus a 640 px window margin
    let margin = HALF_SPAN + 320.0 + TILE_SIZE as f64;
    let t = |v: f64| (v / TILE_SIZE as f64).floor() as u64;
    let tiles_root = dir.join("tiles");
    let on_road = |wx: i64, wy: i64| {
        let (x, y) = (wx as f64, wy as f64);
        streets.iter().any(|(_, horizontal, k)| {
            if *horizontal {
                (y - (cy + k * GRID)).abs() <= ROAD_HALF_WIDTH && (x - cx).abs() <= HALF_SPAN
            } else {
                (x - (cx + k * GRID)).abs() <= ROAD_HALF_WIDTH && (y - cy).abs() <= HALF_SPAN
            }
        })
    };
    let tile_count = write_tiles(
        &tiles_root,
        cfg.zoom,
        t(cx - margin)..=t(cx + margin),
        t(cy - margin)..=t(cy + margin),
        |wx, wy| {
            if on_road(wx, wy) {
                Rgb([90, 90, 90])
            } else {
                ground_pixel(wx, wy)
            }
        },
    )?;

    let sv_dir = dir.join("streetview");
    std::fs::create_dir_all(&sv_dir).map_err(|e| Error::io(&sv_dir, e))?;
    let mut rng = rng_for(cfg.seed, &["synthetic-city", &cfg.city_id]);
    let mut lines = String::new();
    for i in 0..cfg.n_locations {
        let (name, horizontal, k) = &streets[i % streets.len()];
        let along = rng.gen_range(-HALF_SPAN + 60.0..HALF_SPAN - 60.0);
        let (wx, wy) = if *horizontal {
            (cx + along, cy + k * GRID)
        } else {
            (cx + k * GRID, cy + along)
        };
        let district = match (wx < cx, wy < cy) {
            (true, true) => district_name(0),
            (false, true) => district_name(1),
            (true, false) => district_name(2),
            (false, false) => district_name(3),
        };
        let (lon, lat) = world_pixel_to_lonlat(wx, wy, cfg.zoom)?;
        let id = format!("L{i:03}");
        let mut views = Vec::new();
        for v in 0..cfg.views_per_location {
            let heading = 360.0 * v as f64 / cfg.views_per_location as f64;
            let rel = format!("streetview/{id}_h{heading}.jpg");
            let base = [rng.gen::<u8>(), rng.gen::<u8>(), rng.gen::<u8>()];
            let (w, h) = cfg.street_view_size;
            let img = RgbImage::from_fn(w, h, |x, y| {
                Rgb([
                    base[0].wrapping_add((x / 8) as u8),
                    base[1].wrapping_add((y / 8) as u8),
                    base[2],
                ])
            });
            crate::raster::save_rgb(&img, &dir.join(&rel))?;
            views.push(json!({"path": rel, "heading": heading}));
        }
        let rec = json!({
            "id": id, "lat": lat, "lon": lon,
            "district": district, "street": name, "views": views
        });
        writeln!(lines, "{rec}").expect("string write");
    }
    let loc_path = dir.join("locations.jsonl");
    std::fs::write(&loc_path, lines).map_err(|e| Error::io(&loc_path, e))?;

    Ok(SynthCity {
        dir: dir.to_path_buf(),
        locations: loc_path,
        roads: roads_path,
        tiles: tiles_root,
        zoom: cfg.zoom,
        tile_count,
    })
}
