//! Satellite/street composition.
//!
//! In grafted mode the street view is shrunk so that its longer side spans
//! `delta · target_side` and pasted flush into the upper-right corner of the
//! satellite image:
//!
//! ```text
//! out = M ⊙ satellite + (1 − M) ⊙ street
//! ```
//!
//! where the binary mask `M` is 0 exactly on the placement rectangle. The two
//! alternative layouts (side-by-side stitching and separate inputs) are kept
//! for ablations.

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{pad_to_square, resize_box, MID_GRAY};

pub const DEFAULT_TARGET_SIDE: u32 = 336;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraftMode {
    Grafted,
    Stitched,
    Separate,
}

impl fmt::Display for GraftMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraftMode::Grafted => "grafted",
            GraftMode::Stitched => "stitched",
            GraftMode::Separate => "separate",
        })
    }
}

impl FromStr for GraftMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grafted" => Ok(GraftMode::Grafted),
            "stitched" => Ok(GraftMode::Stitched),
            "separate" => Ok(GraftMode::Separate),
            other => Err(Error::invalid(format!("unknown graft mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraftSpec {
    pub mode: GraftMode,
    /// Longer-side overlap ratio, in `[0, 0.5]`.
    pub delta: f64,
    pub target_side: u32,
    /// Admit `delta` up to 1.0 (the 0.7 ablation point).
    #[serde(default)]
    pub wide_delta: bool,
}

impl Default for GraftSpec {
    fn default() -> Self {
        GraftSpec {
            mode: GraftMode::Grafted,
            delta: 0.5,
            target_side: DEFAULT_TARGET_SIDE,
            wide_delta: false,
        }
    }
}

impl GraftSpec {
    pub fn new(mode: GraftMode, delta: f64, target_side: u32) -> Result<Self> {
        let spec = GraftSpec {
            mode,
            delta,
            target_side,
            wide_delta: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Spec for ablations beyond the standard range, `delta` in `[0, 1]`.
    pub fn wide(mode: GraftMode, delta: f64, target_side: u32) -> Result<Self> {
        let spec = GraftSpec {
            mode,
            delta,
            target_side,
            wide_delta: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn max_delta(&self) -> f64 {
        if self.wide_delta {
            1.0
        } else {
            0.5
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=self.max_delta()).contains(&self.delta) {
            return Err(Error::OutOfRange(format!(
                "delta {} not in [0, {}]",
                self.delta,
                self.max_delta()
            )));
        }
        if self.target_side == 0 {
            return Err(Error::invalid("target_side must be positive"));
        }
        Ok(())
    }
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: u32,
    pub x1: u32,
    pub y0: u32,
    pub y1: u32,
}

impl Rect {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraftGeometry {
    /// Street-image scale factor (scaled longer side / original longer side).
    pub scale: f64,
    pub rect: Rect,
    pub target_side: u32,
}

impl GraftGeometry {
    /// Mask value: 1 keeps the satellite pixel, 0 takes the street pixel.
    pub fn mask(&self, x: u32, y: u32) -> u8 {
        u8::from(!self.rect.contains(x, y))
    }
}

/// Placement of the scaled street view. Both scaled sides are rounded half
/// away from zero; the rectangle is flush with the top-right corner.
pub fn compute_graft_geometry(street_w: u32, street_h: u32, spec: &GraftSpec) -> Result<GraftGeometry> {
    spec.validate()?;
    if street_w == 0 || street_h == 0 {
        return Err(Error::invalid("street image must have positive size"));
    }
    let t = spec.target_side;
    let longer = street_w.max(street_h);
    let shorter = street_w.min(street_h);
    let long_px = (spec.delta * t as f64).round() as u32;
    let scale = long_px as f64 / longer as f64;
    // round(shorter · long_px / longer) in exact integer arithmetic
    let short_px = ((2 * shorter as u64 * long_px as u64 + longer as u64) / (2 * longer as u64)) as u32;
    let (w, h) = if street_w >= street_h {
        (long_px, short_px)
    } else {
        (short_px, long_px)
    };
    let rect = if w == 0 || h == 0 {
        Rect { x0: t, x1: t, y0: 0, y1: 0 }
    } else {
        Rect { x0: t - w, x1: t, y0: 0, y1: h }
    };
    Ok(GraftGeometry {
        scale,
        rect,
        target_side: t,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum GraftOutput {
    Single(RgbImage),
    /// Separate mode: `(satellite, street)`, both `target_side` squares.
    Pair(RgbImage, RgbImage),
}

/// Street view scaled to the graft rectangle with the box filter.
pub fn resample_street(street: &RgbImage, geom: &GraftGeometry) -> RgbImage {
    resize_box(street, geom.rect.width(), geom.rect.height())
}

pub fn graft(satellite: &RgbImage, street: &RgbImage, spec: &GraftSpec) -> Result<GraftOutput> {
    spec.validate()?;
    let t = spec.target_side;
    if satellite.dimensions() != (t, t) {
        return Err(Error::invalid(format!(
            "satellite is {:?}, expected {t}x{t}",
            satellite.dimensions()
        )));
    }
    let (sw, sh) = street.dimensions();
    if sw == 0 || sh == 0 {
        return Err(Error::invalid("street image is empty"));
    }
    match spec.mode {
        GraftMode::Grafted => {
            let geom = compute_graft_geometry(sw, sh, spec)?;
            let mut out = satellite.clone();
            if !geom.rect.is_empty() {
                let small = resample_street(street, &geom);
                image::imageops::replace(&mut out, &small, geom.rect.x0 as i64, geom.rect.y0 as i64);
            }
            Ok(GraftOutput::Single(out))
        }
        GraftMode::Stitched => {
            // street scaled to the satellite height, placed to its right,
            // padded below to a square and brought back to target size
            let scaled_w = ((sw as f64 * t as f64 / sh as f64).round() as u32).max(1);
            let street_scaled = resize_box(street, scaled_w, t);
            let mut row = RgbImage::from_pixel(t + scaled_w, t, MID_GRAY);
            image::imageops::replace(&mut row, satellite, 0, 0);
            image::imageops::replace(&mut row, &street_scaled, t as i64, 0);
            let square = pad_to_square(&row, MID_GRAY);
            Ok(GraftOutput::Single(resize_box(&square, t, t)))
        }
        GraftMode::Separate => {
            let square = pad_to_square(street, MID_GRAY);
            Ok(GraftOutput::Pair(satellite.clone(), resize_box(&square, t, t)))
        }
    }
}
