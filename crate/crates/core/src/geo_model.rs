//! Core domain types: locations, roads, the per-city gazetteer, and the
//! canonical address form used for every string comparison in the crate.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Address granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Street,
    District,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Street => "street",
            Level::District => "district",
        })
    }
}

/// Street suffix abbreviations, expanded at street level only.
pub const SUFFIX_TABLE: &[(&str, &str)] = &[
    ("st", "street"),
    ("ave", "avenue"),
    ("blvd", "boulevard"),
    ("rd", "road"),
    ("dr", "drive"),
];

/// Canonical comparison form: lowercase, apostrophes dropped, other
/// punctuation turned into spaces, whitespace collapsed. At street level every
/// token found in [`SUFFIX_TABLE`] is expanded.
pub fn normalize_address(text: &str, level: Level) -> Result<String> {
    let out = normalize_lossy(text, level);
    if out.is_empty() {
        return Err(Error::invalid(format!(
            "address {text:?} is empty after normalization"
        )));
    }
    Ok(out)
}

/// Like [`normalize_address`] but returns an empty string instead of failing.
pub fn normalize_lossy(text: &str, level: Level) -> String {
    let mut cleaned = String::with_capacity(text.len());
    for c in text.chars() {
        if c == '\'' || c == '\u{2019}' {
            continue;
        }
        if c.is_alphanumeric() {
            cleaned.extend(c.to_lowercase());
        } else {
            cleaned.push(' ');
        }
    }
    let mut out = String::with_capacity(cleaned.len());
    for tok in cleaned.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        let tok = match level {
            Level::Street => SUFFIX_TABLE
                .iter()
                .find(|(abbr, _)| *abbr == tok)
                .map(|(_, full)| *full)
                .unwrap_or(tok),
            Level::District => tok,
        };
        out.push_str(tok);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AddressLabel {
    pub street: String,
    pub district: String,
}

impl AddressLabel {
    pub fn get(&self, level: Level) -> &str {
        match level {
            Level::Street => &self.street,
            Level::District => &self.district,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewImage {
    pub path: PathBuf,
    pub heading: f64,
    pub width: u32,
    pub height: u32,
}

impl ViewImage {
    /// Heading as used in sample ids, e.g. `90` or `22.5`.
    pub fn heading_tag(&self) -> String {
        format!("{}", self.heading)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub address: AddressLabel,
    pub views: Vec<ViewImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Road {
    pub name: String,
    /// `(lon, lat)` vertices.
    pub polyline: Vec<(f64, f64)>,
}

/// Normalized-name to canonical-name table for one level.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Gazetteer {
    level: Option<Level>,
    entries: BTreeMap<String, String>,
}

impl Gazetteer {
    pub fn new(level: Level) -> Self {
        Gazetteer {
            level: Some(level),
            entries: BTreeMap::new(),
        }
    }

    pub fn level(&self) -> Level {
        self.level.unwrap_or(Level::Street)
    }

    /// Inserts `name` unless an entry with the same normalized form exists.
    /// Returns the canonical spelling now associated with it.
    pub fn insert(&mut self, name: &str) -> Result<String> {
        let key = normalize_address(name, self.level())?;
        Ok(self
            .entries
            .entry(key)
            .or_insert_with(|| name.trim().to_string())
            .clone())
    }

    pub fn lookup(&self, text: &str) -> Option<&str> {
        let key = normalize_lossy(text, self.level());
        self.entries.get(&key).map(String::as_str)
    }

    pub fn contains(&self, canonical: &str) -> bool {
        self.lookup(canonical).is_some()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Canonical names in normalized-key order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.values().map(String::as_str)
    }

    /// Finds the gazetteer entry mentioned in free text, matching whole
    /// normalized tokens. The earliest mention wins; among mentions starting
    /// at the same token, the longest wins.
    pub fn find_mention(&self, text: &str) -> Option<&str> {
        let norm = normalize_lossy(text, self.level());
        let tokens: Vec<&str> = norm.split_whitespace().collect();
        let mut best: Option<(usize, usize, &str)> = None;
        for (key, canonical) in &self.entries {
            let needle: Vec<&str> = key.split(' ').collect();
            if needle.len() > tokens.len() {
                continue;
            }
            let hit = tokens
                .windows(needle.len())
                .position(|w| w == needle.as_slice());
            if let Some(start) = hit {
                let better = match best {
                    None => true,
                    Some((s, l, _)) => start < s || (start == s && needle.len() > l),
                };
                if better {
                    best = Some((start, needle.len(), canonical));
                }
            }
        }
        best.map(|(_, _, c)| c)
    }

    /// Exact normalized lookup, falling back to an in-text mention.
    pub fn resolve(&self, text: &str) -> Option<&str> {
        self.lookup(text).or_else(|| self.find_mention(text))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityIndex {
    pub city_id: String,
    pub locations: Vec<Location>,
    pub roads: Vec<Road>,
    pub streets: Gazetteer,
    pub districts: Gazetteer,
}

impl CityIndex {
    pub fn empty(city_id: &str) -> Self {
        CityIndex {
            city_id: city_id.to_string(),
            locations: Vec::new(),
            roads: Vec::new(),
            streets: Gazetteer::new(Level::Street),
            districts: Gazetteer::new(Level::District),
        }
    }

    pub fn gazetteer(&self, level: Level) -> &Gazetteer {
        match level {
            Level::Street => &self.streets,
            Level::District => &self.districts,
        }
    }

    pub fn image_count(&self) -> usize {
        self.locations.iter().map(|l| l.views.len()).sum()
    }

    pub fn location(&self, id: &str) -> Option<&Location> {
        self.locations.iter().find(|l| l.id == id)
    }

    /// Adds a location, registering its address in the gazetteers and
    /// rewriting it to the canonical spellings.
    pub fn push_location(&mut self, mut loc: Location) -> Result<()> {
        validate_lat_lon(loc.lat, loc.lon)?;
        if loc.views.is_empty() {
            return Err(Error::invalid(format!("location {} has no views", loc.id)));
        }
        let mut headings = HashSet::new();
        for v in &loc.views {
            if !(0.0..360.0).contains(&v.heading) {
                return Err(Error::OutOfRange(format!(
                    "location {}: heading {} not in [0,360)",
                    loc.id, v.heading
                )));
            }
            if !headings.insert(v.heading.to_bits()) {
                return Err(Error::invalid(format!(
                    "location {}: duplicate heading {}",
                    loc.id, v.heading
                )));
            }
        }
        loc.address.street = self.streets.insert(&loc.address.street)?;
        loc.address.district = self.districts.insert(&loc.address.district)?;
        self.locations.push(loc);
        Ok(())
    }
}

/// Looks up the canonical name for `text` at `level`.
pub fn gazetteer_lookup<'a>(text: &str, level: Level, index: &'a CityIndex) -> Option<&'a str> {
    index.gazetteer(level).lookup(text)
}

pub fn validate_lat_lon(lat: f64, lon: f64) -> Result<()> {
    if !(-90.0..=90.0).contains(&lat) || !lat.is_finite() {
        return Err(Error::OutOfRange(format!("latitude {lat}")));
    }
    if !(-180.0..=180.0).contains(&lon) || !lon.is_finite() {
        return Err(Error::OutOfRange(format!("longitude {lon}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocationRecord {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub district: String,
    pub street: String,
    pub views: Vec<ViewRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewRecord {
    pub path: PathBuf,
    pub heading: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
}

#[derive(Debug, Clone, Copy)]
pub struct IngestOptions {
    /// Require every view file to exist and read its dimensions from the
    /// image header when the record omits them.
    pub verify_images: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            verify_images: true,
        }
    }
}

/// Reads a locations JSONL file. View paths are resolved against the file's
/// directory.
pub fn ingest_locations(path: &Path, city_id: &str, opts: IngestOptions) -> Result<CityIndex> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut index = CityIndex::empty(city_id);
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_err = |msg: String| Error::Line {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let rec: LocationRecord =
            serde_json::from_str(line).map_err(|e| line_err(e.to_string()))?;
        if !ids.insert(rec.id.clone()) {
            return Err(line_err(format!("duplicate location id {:?}", rec.id)));
        }
        let mut views = Vec::with_capacity(rec.views.len());
        for v in rec.views {
            let full = if v.path.is_absolute() {
                v.path.clone()
            } else {
                base.join(&v.path)
            };
            let (width, height) = match (v.width, v.height) {
                (Some(w), Some(h)) if !opts.verify_images || full.exists() => (w, h),
                (Some(_), Some(_)) => {
                    return Err(line_err(format!("view image {} not found", full.display())))
                }
                _ if opts.verify_images => image::image_dimensions(&full)
                    .map_err(|e| line_err(format!("view image {}: {e}", full.display())))?,
                _ => {
                    return Err(line_err(format!(
                        "view {} lacks width/height and image verification is off",
                        full.display()
                    )))
                }
            };
            if width == 0 || height == 0 {
                return Err(line_err(format!("view {} has zero size", full.display())));
            }
            views.push(ViewImage {
                path: full,
                heading: v.heading,
                width,
                height,
            });
        }
        let loc = Location {
            id: rec.id,
            lat: rec.lat,
            lon: rec.lon,
            address: AddressLabel {
                street: rec.street,
                district: rec.district,
            },
            views,
        };
        index
            .push_location(loc)
            .map_err(|e| line_err(e.to_string()))?;
    }
    Ok(index)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoadIngest {
    pub roads: Vec<Road>,
    pub skipped_unnamed: usize,
    pub skipped_geometry: usize,
}

impl RoadIngest {
    pub fn warnings(&self) -> usize {
        self.skipped_unnamed + self.skipped_geometry
    }
}

/// Reads named LineString features from a GeoJSON FeatureCollection.
pub fn ingest_roads(path: &Path) -> Result<RoadIngest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_roads(&text).map_err(|msg| Error::File {
        path: path.to_path_buf(),
        msg,
    })
}

pub fn parse_roads(text: &str) -> std::result::Result<RoadIngest, String> {
    let doc: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if doc.get("type").and_then(|t| t.as_str()) != Some("FeatureCollection") {
        return Err("not a GeoJSON FeatureCollection".into());
    }
    let features = doc
        .get("features")
        .and_then(|f| f.as_array())
        .ok_or("FeatureCollection without a features array")?;
    let mut out = RoadIngest::default();
    for feat in features {
        let geom = feat.get("geometry");
        let is_line = geom.and_then(|g| g.get("type")).and_then(|t| t.as_str()) == Some("LineString");
        if !is_line {
            out.skipped_geometry += 1;
            continue;
        }
        let name = feat
            .get("properties")
            .and_then(|p| p.get("name"))
            .and_then(|n| n.as_str())
            .map(str::trim)
            .filter(|n| !n.is_empty());
        let Some(name) = name else {
            out.skipped_unnamed += 1;
            continue;
        };
        match parse_line_coords(geom.unwrap()) {
            Some(polyline) => out.roads.push(Road {
                name: name.to_string(),
                polyline,
            }),
            None => out.skipped_geometry += 1,
        }
    }
    if out.warnings() > 0 {
        log::warn!(
            "roads: skipped {} unnamed and {} non-LineString/invalid features",
            out.skipped_unnamed,
            out.skipped_geometry
        );
    }
    Ok(out)
}

fn parse_line_coords(geom: &serde_json::Value) -> Option<Vec<(f64, f64)>> {
    let coords = geom.get("coordinates")?.as_array()?;
    let mut pts = Vec::with_capacity(coords.len());
    for c in coords {
        let c = c.as_array()?;
        let lon = c.first()?.as_f64()?;
        let lat = c.get(1)?.as_f64()?;
        validate_lat_lon(lat, lon).ok()?;
        pts.push((lon, lat));
    }
    (pts.len() >= 2).then_some(pts)
}
