use std::collections::BTreeMap;

use font8x8::legacy::BASIC_LEGACY;
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{lonlat_to_world_pixel, SatelliteWindow};
use crate::error::{Error, Result};
use crate::geo_model::Road;

const GLYPH: u32 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotationStyle {
    pub enabled: bool,
    /// Glyph height; rendered with an 8×8 bitmap font scaled by
    /// `font_size_px / 8`.
    pub font_size_px: u32,
    pub text_color: [u8; 3],
    pub halo_color: [u8; 3],
    pub halo_px: u32,
    pub max_labels: usize,
}

impl Default for AnnotationStyle {
    fn default() -> Self {
        AnnotationStyle {
            enabled: true,
            font_size_px: 16,
            text_color: [20, 20, 20],
            halo_color: [255, 255, 255],
            halo_px: 2,
            max_labels: 8,
        }
    }
}

impl AnnotationStyle {
    pub fn validate(&self) -> Result<()> {
        if self.font_size_px < 8 {
            return Err(Error::invalid(format!(
                "font_size_px {} below the 8 px minimum",
                self.font_size_px
            )));
        }
        Ok(())
    }

    fn scale(&self) -> u32 {
        (self.font_size_px / GLYPH).max(1)
    }
}

/// A road's longest in-window segment.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadCandidate {
    pub name: String,
    pub segment_len: f64,
    pub midpoint: (f64, f64),
    /// Clipped segment end points in window pixels.
    pub segment: ((f64, f64), (f64, f64)),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelPlacement {
    pub name: String,
    /// Half-open text box `[x0, x1) × [y0, y1)` in window pixels, before
    /// clipping to the window.
    pub bbox: (i64, i64, i64, i64),
    pub segment_len: f64,
}

#[derive(Debug, Clone)]
pub struct Annotation {
    pub image: RgbImage,
    pub labels: Vec<LabelPlacement>,
}

/// Liang–Barsky clip of segment `a→b` to `[0, side]²`.
fn clip_segment(a: (f64, f64), b: (f64, f64), side: f64) -> Option<((f64, f64), (f64, f64))> {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for (p, q) in [
        (-dx, a.0),
        (dx, side - a.0),
        (-dy, a.1),
        (dy, side - a.1),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 < t1).then_some({
        (
            (a.0 + t0 * dx, a.1 + t0 * dy),
            (a.0 + t1 * dx, a.1 + t1 * dy),
        )
    })
}

/// Roads intersecting the window, one entry per street name, ordered by
/// longest clipped segment (descending) then name.
pub fn rank_roads(window: &SatelliteWindow, roads: &[Road]) -> Vec<RoadCandidate> {
    let side = window.side() as f64;
    let mut best: BTreeMap<&str, RoadCandidate> = BTreeMap::new();
    for road in roads {
        let pts: Vec<Option<(f64, f64)>> = road
            .polyline
            .iter()
            .map(|&(lon, lat)| {
                lonlat_to_world_pixel(lon, lat, window.zoom)
                    .ok()
                    .map(|w| window.to_window(w))
            })
            .collect();
        for pair in pts.windows(2) {
            let (Some(a), Some(b)) = (pair[0], pair[1]) else {
                continue;
            };
            let Some((p, q)) = clip_segment(a, b, side) else {
                continue;
            };
            let len = ((q.0 - p.0).powi(2) + (q.1 - p.1).powi(2)).sqrt();
            if len <= 0.0 {
                continue;
            }
            let cand = RoadCandidate {
                name: road.name.clone(),
                segment_len: len,
                midpoint: ((p.0 + q.0) / 2.0, (p.1 + q.1) / 2.0),
                segment: (p, q),
            };
            match best.get(road.name.as_str()) {
                Some(cur) if cur.segment_len >= len => {}
                _ => {
                    best.insert(&road.name, cand);
                }
            }
        }
    }
    let mut out: Vec<RoadCandidate> = best.into_values().collect();
    out.sort_by(|a, b| {
        b.segment_len
            .total_cmp(&a.segment_len)
            .then_with(|| a.name.cmp(&b.name))
    });
    out
}

const PLACEMENT_STEPS: [f64; 5] = [0.5, 0.3, 0.7, 0.15, 0.85];

fn glyph_rows(c: char) -> [u8; 8] {
    let idx = if (c as u32) < 128 { c as usize } else { '?' as usize };
    BASIC_LEGACY[idx]
}

/// Renders street names onto the window. With annotation disabled, or no
/// intersecting roads, the output equals the input.
pub fn annotate_streets(window: &SatelliteWindow, roads: &[Road], style: &AnnotationStyle) -> Result<Annotation> {
    style.validate()?;
    let mut image = window.image.clone();
    if !style.enabled {
        return Ok(Annotation {
            image,
            labels: Vec::new(),
        });
    }
    let side = window.side() as i64;
    let scale = style.scale();
    let mut labels = Vec::new();
    for cand in rank_roads(window, roads).into_iter().take(style.max_labels) {
        let chars: Vec<char> = cand.name.chars().collect();
        let tw = (chars.len() as u32 * GLYPH * scale) as i64;
        let th = (GLYPH * scale) as i64;
        let halo = style.halo_px as i64;
        // keep the box (with halo) inside the window when it fits
        let clamp = |v: i64, len: i64| {
            let lo = halo;
            let hi = side - len - halo;
            if hi < lo {
                0
            } else {
                v.clamp(lo, hi)
            }
        };
        // midpoint first, then further along the segment if that box
        // collides with an earlier label,
        let (p, q) = cand.segment;
        // then shifted above or below the road
        let shift = th + 3 * halo;
        let boxes: Vec<(i64, i64)> = [0, -shift, shift]
            .iter()
            .flat_map(|dy| PLACEMENT_STEPS.iter().map(move |t| (*dy, *t)))
            .map(|(dy, t)| {
                let mx = (p.0 + t * (q.0 - p.0)).round() as i64;
                let my = (p.1 + t * (q.1 - p.1)).round() as i64;
                (clamp(mx - tw / 2, tw), clamp(my - th / 2 + dy, th))
            })
            .collect();
        let free = |&(x0, y0): &(i64, i64)| {
            labels.iter().all(|l: &LabelPlacement| {
                let (a0, b0, a1, b1) = l.bbox;
                x0 + tw + halo <= a0 - halo
                    || a1 + halo <= x0 - halo
                    || y0 + th + halo <= b0 - halo
                    || b1 + halo <= y0 - halo
            })
        };
        let (x0, y0) = boxes.iter().copied().find(|b| free(b)).unwrap_or(boxes[0]);

        // glyph mask over the box
        let mut mask = vec![false; (tw * th) as usize];
        for (ci, &c) in chars.iter().enumerate() {
            let rows = glyph_rows(c);
            for (gy, row) in rows.iter().enumerate() {
                for gx in 0..GLYPH {
                    if row & (1 << gx) == 0 {
                        continue;
                    }
                    for sy in 0..scale {
                        for sx in 0..scale {
                            let x = ci as u32 * GLYPH * scale + gx * scale + sx;
                            let y = gy as u32 * scale + sy;
                            mask[(y as i64 * tw + x as i64) as usize] = true;
                        }
                    }
                }
            }
        }
        let mut paint = |x: i64, y: i64, color: [u8; 3]| {
            if (0..side).contains(&x) && (0..side).contains(&y) {
                image.put_pixel(x as u32, y as u32, Rgb(color));
            }
        };
        // halo: chebyshev dilation of the mask
        for y in 0..th {
            for x in 0..tw {
                if !mask[(y * tw + x) as usize] {
                    continue;
                }
                for dy in -halo..=halo {
                    for dx in -halo..=halo {
                        let (hx, hy) = (x + dx, y + dy);
                        let inside = (0..tw).contains(&hx) && (0..th).contains(&hy);
                        if !inside || !mask[(hy * tw + hx) as usize] {
                            paint(x0 + hx, y0 + hy, style.halo_color);
                        }
                    }
                }
            }
        }
        for y in 0..th {
            for x in 0..tw {
                if mask[(y * tw + x) as usize] {
                    paint(x0 + x, y0 + y, style.text_color);
                }
            }
        }
        labels.push(LabelPlacement {
            name: cand.name,
            bbox: (x0, y0, x0 + tw, y0 + th),
            segment_len: cand.segment_len,
        });
    }
    Ok(Annotation { image, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiling::world_pixel_to_lonlat;

    const ZOOM: u8 = 17;
    const ORIGIN: (i64, i64) = (9_320_000, 12_649_000);

    fn window(side: u32) -> SatelliteWindow {
        let mut image = RgbImage::new(side, side);
        for (x, y, p) in image.enumerate_pixels_mut() {
            *p = Rgb([(x % 200) as u8, (y % 200) as u8, 90]);
        }
        SatelliteWindow {
            image,
            center: (0.0, 0.0),
            zoom: ZOOM,
            origin: ORIGIN,
            missing_tiles: 0,
        }
    }

    fn road(name: &str, pts: &[(f64, f64)]) -> Road {
        Road {
            name: name.into(),
            polyline: pts
                .iter()
                .map(|&(x, y)| {
                    world_pixel_to_lonlat(ORIGIN.0 as f64 + x, ORIGIN.1 as f64 + y, ZOOM).unwrap()
                })
                .collect(),
        }
    }

    #[test]
    fn zero_roads_is_identity() {
        let w = window(64);
        let a = annotate_streets(&w, &[], &AnnotationStyle::default()).unwrap();
        assert_eq!(a.image, w.image);
        assert!(a.labels.is_empty());
    }

    #[test]
    fn disabled_is_identity() {
        let w = window(200);
        let roads = [road("Grant Street", &[(0.0, 100.0), (200.0, 100.0)])];
        let style = AnnotationStyle {
            enabled: false,
            ..Default::default()
        };
        assert_eq!(annotate_streets(&w, &roads, &style).unwrap().image, w.image);
    }

    #[test]
    fn single_label_is_local() {
        let w = window(320);
        let roads = [road("Grant Street", &[(-50.0, 160.0), (400.0, 160.0)])];
        let style = AnnotationStyle::default();
        let a = annotate_streets(&w, &roads, &style).unwrap();
        assert_eq!(a.labels.len(), 1);
        let (x0, y0, x1, y1) = a.labels[0].bbox;
        let h = style.halo_px as i64;
        assert_eq!(y1 - y0, 16);
        assert_eq!(x1 - x0, 12 * 16);
        let mut changed = 0;
        for (x, y, p) in a.image.enumerate_pixels() {
            let (x, y) = (x as i64, y as i64);
            let near = x >= x0 - h && x < x1 + h && y >= y0 - h && y < y1 + h;
            if p != w.image.get_pixel(x as u32, y as u32) {
                changed += 1;
                assert!(near, "pixel ({x},{y}) changed outside the label box");
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn roads_outside_are_ignored() {
        let w = window(100);
        let roads = [road("Far Road", &[(500.0, 500.0), (900.0, 520.0)])];
        let a = annotate_streets(&w, &roads, &AnnotationStyle::default()).unwrap();
        assert!(a.labels.is_empty());
        assert_eq!(a.image, w.image);
    }

    #[test]
    fn small_font_rejected() {
        let style = AnnotationStyle {
            font_size_px: 6,
            ..Default::default()
        };
        assert!(annotate_streets(&window(10), &[], &style).is_err());
    }

    #[test]
    fn clip_cases() {
        assert_eq!(clip_segment((-10.0, 5.0), (20.0, 5.0), 10.0), Some(((0.0, 5.0), (10.0, 5.0))));
        assert_eq!(clip_segment((-10.0, -5.0), (20.0, -5.0), 10.0), None);
        assert_eq!(clip_segment((2.0, 2.0), (3.0, 3.0), 10.0), Some(((2.0, 2.0), (3.0, 3.0))));
    }
}
