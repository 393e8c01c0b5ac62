//! Raster helpers: deterministic area-averaging resize, square padding and
//! image IO with path-carrying errors.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

pub const MID_GRAY: Rgb<u8> = Rgb([128, 128, 128]);

/// Per-output-sample list of `(source index, overlap)`. Overlaps are
/// measured on a grid where a source pixel is `dst` units wide and an output
/// pixel `src` units wide, so each list sums to `src`.
fn box_weights(src: u32, dst: u32) -> Vec<Vec<(u32, u64)>> {
    let (s, d) = (src as u64, dst as u64);
    (0..d)
        .map(|i| {
            let (start, end) = (i * s, (i + 1) * s);
            (start / d..end.div_ceil(d).min(s))
                .filter_map(|j| {
                    let o = end.min((j + 1) * d) - start.max(j * d);
                    (o > 0).then_some((j as u32, o))
                })
                .collect()
        })
        .collect()
}

/// Area-averaging (box) resize. Each output pixel is the coverage-weighted
/// mean of the source pixels under its footprint, rounded half up. Computed
/// in exact integer arithmetic.
pub fn resize_box(src: &RgbImage, width: u32, height: u32) -> RgbImage {
    let (sw, sh) = src.dimensions();
    if (sw, sh) == (width, height) {
        return src.clone();
    }
    if width == 0 || height == 0 || sw == 0 || sh == 0 {
        return RgbImage::new(width, height);
    }
    let wx = box_weights(sw, width);
    let wy = box_weights(sh, height);

    // horizontal pass, numerators over sw
    let mut tmp = vec![0u64; width as usize * sh as usize * 3];
    for y in 0..sh {
        for (x, weights) in wx.iter().enumerate() {
            let mut acc = [0u64; 3];
            for &(sx, w) in weights {
                let p = src.get_pixel(sx, y).0;
                for c in 0..3 {
                    acc[c] += p[c] as u64 * w;
                }
            }
            let base = (y as usize * width as usize + x) * 3;
            tmp[base..base + 3].copy_from_slice(&acc);
        }
    }
    let denom = sw as u64 * sh as u64;
    let mut out = RgbImage::new(width, height);
    for (y, weights) in wy.iter().enumerate() {
        for x in 0..width as usize {
            let mut acc = [0u64; 3];
            for &(sy, w) in weights {
                let base = (sy as usize * width as usize + x) * 3;
                for c in 0..3 {
                    acc[c] += tmp[base + c] * w;
                }
            }
            let px = acc.map(|n| ((2 * n + denom) / (2 * denom)).min(255) as u8);
            out.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    out
}

/// Pads `img` to a square by extending right or below with `fill`.
pub fn pad_to_square(img: &RgbImage, fill: Rgb<u8>) -> RgbImage {
    let (w, h) = img.dimensions();
    let side = w.max(h);
    let mut out = RgbImage::from_pixel(side, side, fill);
    image::imageops::replace(&mut out, img, 0, 0);
    out
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}

/// Saves with the format implied by the extension (PNG or JPEG).
pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Encodes as JPEG (quality 90) for inline transport.
pub fn encode_jpeg(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let enc = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut buf, 90);
    img.write_with_encoder(enc).map_err(|source| Error::Image {
        path: "<memory>".into(),
        source,
    })?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_downscale_is_block_mean() {
        let mut src = RgbImage::new(4, 2);
        for (x, y, p) in src.enumerate_pixels_mut() {
            *p = Rgb([(x * 10 + y * 100) as u8, 0, 255]);
        }
        let out = resize_box(&src, 2, 1);
        // block (0..2, 0..2): mean of 0,10,100,110 = 55
        assert_eq!(out.get_pixel(0, 0).0, [55, 0, 255]);
        // block (2..4): 20,30,120,130 -> 75
        assert_eq!(out.get_pixel(1, 0).0, [75, 0, 255]);
    }

    #[test]
    fn constant_image_stays_constant() {
        let src = RgbImage::from_pixel(97, 41, Rgb([7, 200, 33]));
        for (w, h) in [(13, 5), (336, 336), (200, 50), (1, 1)] {
            let out = resize_box(&src, w, h);
            assert!(out.pixels().all(|p| p.0 == [7, 200, 33]), "{w}x{h}");
        }
    }

    #[test]
    fn weights_sum_to_source_span() {
        for (s, d) in [(640u32, 336u32), (672, 168), (3, 7), (5, 5)] {
            for ws in box_weights(s, d) {
                let sum: u64 = ws.iter().map(|(_, w)| w).sum();
                assert_eq!(sum, s as u64);
            }
        }
    }

    #[test]
    fn half_is_rounded_up() {
        let src = RgbImage::from_fn(2, 1, |x, _| Rgb([x as u8, 3 * x as u8, 0]));
        assert_eq!(resize_box(&src, 1, 1).get_pixel(0, 0).0, [1, 2, 0]);
    }

    #[test]
    fn pad_fills_below() {
        let img = RgbImage::from_pixel(4, 2, Rgb([1, 2, 3]));
        let sq = pad_to_square(&img, MID_GRAY);
        assert_eq!(sq.dimensions(), (4, 4));
        assert_eq!(sq.get_pixel(3, 1).0, [1, 2, 3]);
        assert_eq!(sq.get_pixel(0, 2).0, MID_GRAY.0);
    }
}
