//! Street frequency analysis over repeated inferences, top-k ranking and
//! GeoJSON overlays.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geo_model::{normalize_lossy, Gazetteer, Level, Location, Road};

pub const RANK_COLORS: [&str; 3] = ["red", "orange", "yellow"];

/// One inference transcript line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub image_id: String,
    #[serde(default)]
    pub run: usize,
    pub response: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyMap {
    pub counts: BTreeMap<String, u64>,
    pub invalid_count: u64,
    pub total: u64,
}

impl FrequencyMap {
    pub fn valid_total(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// Resolves each response to a canonical street; unresolved responses count
/// as invalid.
pub fn tally<S: AsRef<str>>(responses: &[S], streets: &Gazetteer) -> FrequencyMap {
    let mut f = FrequencyMap::default();
    for r in responses {
        f.total += 1;
        match streets.resolve(r.as_ref()) {
            Some(name) => *f.counts.entry(name.to_string()).or_default() += 1,
            None => f.invalid_count += 1,
        }
    }
    f
}

/// The `k` most frequent streets, count descending, name ascending on ties.
pub fn topk(freq: &FrequencyMap, k: usize) -> Vec<(String, u64)> {
    let mut v: Vec<(String, u64)> = freq.counts.iter().map(|(n, c)| (n.clone(), *c)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(k);
    v
}

/// Frequency maps per image id.
pub fn tally_by_image(records: &[ResponseRecord], streets: &Gazetteer) -> BTreeMap<String, FrequencyMap> {
    let mut grouped: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in records {
        grouped.entry(&r.image_id).or_default().push(&r.response);
    }
    grouped
        .into_par_iter()
        .map(|(id, responses)| (id.to_string(), tally(&responses, streets)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    pub doc: Value,
    pub warnings: Vec<String>,
}

fn road_geometry(roads: &[Road], name: &str) -> Option<Value> {
    let key = normalize_lossy(name, Level::Street);
    let lines: Vec<Vec<[f64; 2]>> = roads
        .iter()
        .filter(|r| normalize_lossy(&r.name, Level::Street) == key)
        .map(|r| r.polyline.iter().map(|(lon, lat)| [*lon, *lat]).collect())
        .collect();
    match lines.len() {
        0 => None,
        1 => Some(json!({"type": "LineString", "coordinates": lines[0]})),
        _ => Some(json!({"type": "MultiLineString", "coordinates": lines})),
    }
}

/// FeatureCollection with the truth location as a point and the top-`k`
/// streets as roads carrying `rank`, `count` and `color`. Streets without
/// geometry are emitted with a null geometry and a warning.
pub fn emit_overlay(freq: &FrequencyMap, roads: &[Road], truth: &Location, k: usize) -> Result<Overlay> {
    if k == 0 || k > RANK_COLORS.len() {
        return Err(Error::OutOfRange(format!(
            "overlay k = {k}; colors exist for ranks 1 to {}",
            RANK_COLORS.len()
        )));
    }
    let mut features = vec![json!({
        "type": "Feature",
        "geometry": {"type": "Point", "coordinates": [truth.lon, truth.lat]},
        "properties": {
            "kind": "truth",
            "location_id": truth.id,
            "street": truth.address.street,
            "district": truth.address.district,
        }
    })];
    let mut warnings = Vec::new();
    for (i, (name, count)) in topk(freq, k).into_iter().enumerate() {
        let geometry = road_geometry(roads, &name).unwrap_or_else(|| {
            warnings.push(format!("no road geometry for {name:?}"));
            Value::Null
        });
        features.push(json!({
            "type": "Feature",
            "geometry": geometry,
            "properties": {
                "kind": "prediction",
                "name": name,
                "rank": i + 1,
                "count": count,
                "color": RANK_COLORS[i],
            }
        }));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Overlay {
        doc: json!({"type": "FeatureCollection", "features": features}),
        warnings,
    })
}

/// Structural GeoJSON check for the geometry types used here.
pub fn validate_geojson(doc: &Value) -> std::result::Result<(), String> {
    if doc["type"] != "FeatureCollection" {
        return Err("top level is not a FeatureCollection".into());
    }
    let features = doc["features"].as_array().ok_or("features is not an array")?;
    let position = |p: &Value| {
        p.as_array()
            .is_some_and(|a| a.len() >= 2 && a.iter().all(Value::is_number))
    };
    let line = |l: &Value| l.as_array().is_some_and(|a| a.len() >= 2 && a.iter().all(position));
    for (i, f) in features.iter().enumerate() {
        if f["type"] != "Feature" {
            return Err(format!("feature {i} has type {}", f["type"]));
        }
        if !f["properties"].is_object() && !f["properties"].is_null() {
            return Err(format!("feature {i} properties is not an object"));
        }
        let g = &f["geometry"];
        if g.is_null() {
            continue;
        }
        let c = &g["coordinates"];
        let ok = match g["type"].as_str() {
            Some("Point") => position(c),
            Some("LineString") => line(c),
            Some("MultiLineString") => c.as_array().is_some_and(|a| a.iter().all(line)),
            _ => false,
        };
        if !ok {
            return Err(format!("feature {i} has an invalid geometry"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChoicePrompt {
    pub text: String,
    pub options: Vec<String>,
}

/// List-selection prompt over the given streets, deduplicated by normalized
/// name with first occurrences kept in order.
pub fn build_choice_prompt<S: AsRef<str>>(streets: &[S]) -> Result<ChoicePrompt> {
    let mut seen = HashSet::new();
    let options: Vec<String> = streets
        .iter()
        .map(|s| s.as_ref().trim())
        .filter(|s| !s.is_empty() && seen.insert(normalize_lossy(s, Level::Street)))
        .map(str::to_string)
        .collect();
    if options.is_empty() {
        return Err(Error::invalid("choice prompt needs at least one street"));
    }
    let mut text = String::from("Which of the following streets was this street-view image taken on?\n");
    for (i, o) in options.iter().enumerate() {
        let _ = writeln!(text, "{}. {o}", i + 1);
    }
    text.push_str("Answer with the street name of the correct option.");
    Ok(ChoicePrompt { text, options })
}

/// CSV rows `image_id,street,count,rank`; invalid responses appear as a row
/// with an empty street and no rank.
pub fn write_frequency_csv(path: &Path, maps: &BTreeMap<String, FrequencyMap>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let err = |e: csv::Error| Error::File {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    w.write_record(["image_id", "street", "count", "rank"]).map_err(err)?;
    for (id, f) in maps {
        for (rank, (name, count)) in topk(f, usize::MAX).into_iter().enumerate() {
            w.write_record([id.as_str(), &name, &count.to_string(), &(rank + 1).to_string()])
                .map_err(err)?;
        }
        w.write_record([id.as_str(), "", &f.invalid_count.to_string(), ""])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
