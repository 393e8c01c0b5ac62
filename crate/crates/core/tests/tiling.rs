use addrforge::geo_model::Road;
use addrforge::raster::MID_GRAY;
use addrforge::synth::{ground_pixel, write_tiles};
use addrforge::tiling::{
    annotate_streets, assemble_window_at, rank_roads, world_pixel_to_lonlat, AnnotationStyle, TileStore,
};
use proptest::prelude::*;

const Z: u8 = 12;

fn fixture() -> (tempfile::TempDir, TileStore) {
    let dir = tempfile::tempdir().unwrap();
    write_tiles(dir.path(), Z, 100..=104, 200..=204, ground_pixel).unwrap();
    let store = TileStore::new(dir.path(), Z);
    (dir, store)
}

fn road(name: &str, pts: &[(f64, f64)]) -> Road {
    Road {
        name: name.into(),
        polyline: pts.iter().map(|&(x, y)| world_pixel_to_lonlat(x, y, Z).unwrap()).collect(),
    }
}

#[test]
fn missing_tiles_are_mid_gray() {
    let (dir, store) = fixture();
    std::fs::remove_file(store.tile_path(102, 202)).unwrap();
    let c = (102.0 * 256.0 + 128.0, 202.0 * 256.0 + 128.0);
    let win = assemble_window_at(c, 512, &store).unwrap();
    assert_eq!(win.missing_tiles, 1);
    let (ox, oy) = win.origin;
    for (x, y, p) in win.image.enumerate_pixels() {
        let (wx, wy) = (ox + x as i64, oy + y as i64);
        let inside = (102 * 256..103 * 256).contains(&wx) && (202 * 256..203 * 256).contains(&wy);
        let want = if inside { MID_GRAY } else { ground_pixel(wx, wy) };
        assert_eq!(*p, want, "({x},{y})");
    }
    drop(dir);
}

#[test]
fn window_without_any_tile_fails() {
    let (_dir, store) = fixture();
    assert!(assemble_window_at((10.0 * 256.0, 10.0 * 256.0), 64, &store).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn integer_shift_moves_content(dx in -40i64..40, dy in -40i64..40, fx in 0.0f64..1.0, fy in 0.0f64..1.0) {
        let (_dir, store) = fixture();
        let c = (102.0 * 256.0 + fx, 202.0 * 256.0 + fy);
        let a = assemble_window_at(c, 200, &store).unwrap();
        let b = assemble_window_at((c.0 + dx as f64, c.1 + dy as f64), 200, &store).unwrap();
        prop_assert_eq!(b.origin, (a.origin.0 + dx, a.origin.1 + dy));
        for y in 0..200u32 {
            for x in 0..200u32 {
                let (xa, ya) = (x as i64 + dx, y as i64 + dy);
                if (0..200).contains(&xa) && (0..200).contains(&ya) {
                    prop_assert_eq!(b.image.get_pixel(x, y), a.image.get_pixel(xa as u32, ya as u32));
                }
            }
        }
    }
}

#[test]
fn labels_keep_the_longest_roads() {
    let (_dir, store) = fixture();
    let c = (102.0 * 256.0, 202.0 * 256.0);
    let win = assemble_window_at(c, 640, &store).unwrap();
    let (ox, oy) = (win.origin.0 as f64, win.origin.1 as f64);
    // twelve horizontal roads of distinct in-window lengths; some poke out of
    // the window so their clipped length is what counts
    let mut roads = Vec::new();
    let mut expected = Vec::new();
    for i in 0..12 {
        let y = oy + 20.0 + 50.0 * i as f64;
        let len = 60.0 + 37.0 * ((i * 5) % 12) as f64;
        let x0 = ox - 100.0 + 9.0 * i as f64;
        let in_window = (x0 + len).min(ox + 640.0) - x0.max(ox);
        let name = format!("Road {i}");
        roads.push(road(&name, &[(x0, y), (x0 + len, y)]));
        if in_window > 0.0 {
            expected.push((name, in_window));
        }
    }
    expected.sort_by(|a, b| b.1.total_cmp(&a.1));
    let ranked = rank_roads(&win, &roads);
    assert_eq!(ranked.len(), expected.len());
    for (r, (name, len)) in ranked.iter().zip(&expected) {
        assert_eq!(&r.name, name);
        assert!((r.segment_len - len).abs() < 1e-6, "{}: {} vs {len}", r.name, r.segment_len);
    }
    let ann = annotate_streets(&win, &roads, &AnnotationStyle::default()).unwrap();
    let labelled: Vec<&str> = ann.labels.iter().map(|l| l.name.as_str()).collect();
    let want: Vec<&str> = expected.iter().take(8).map(|(n, _)| n.as_str()).collect();
    assert_eq!(labelled, want);
}

#[test]
fn annotation_off_is_identity_and_on_changes_pixels() {
    let (_dir, store) = fixture();
    let win = assemble_window_at((102.0 * 256.0, 202.0 * 256.0), 300, &store).unwrap();
    let (ox, oy) = (win.origin.0 as f64, win.origin.1 as f64);
    let roads = vec![road("Grant Street", &[(ox + 10.0, oy + 150.0), (ox + 290.0, oy + 150.0)])];
    let off = AnnotationStyle { enabled: false, ..Default::default() };
    assert_eq!(annotate_streets(&win, &roads, &off).unwrap().image, win.image);
    let on = annotate_streets(&win, &roads, &AnnotationStyle::default()).unwrap();
    assert_eq!(on.labels.len(), 1);
    assert_ne!(on.image, win.image);
    assert_eq!(annotate_streets(&win, &[], &AnnotationStyle::default()).unwrap().image, win.image);
}

#[test]
fn crossing_roads_get_disjoint_labels() {
    let (_dir, store) = fixture();
    let win = assemble_window_at((102.0 * 256.0, 202.0 * 256.0), 640, &store).unwrap();
    let (ox, oy) = (win.origin.0 as f64, win.origin.1 as f64);
    let roads = vec![
        road("Smithfield Street", &[(ox + 90.0, oy - 50.0), (ox + 90.0, oy + 700.0)]),
        road("Grant Street", &[(ox - 50.0, oy + 320.0), (ox + 390.0, oy + 320.0)]),
        road("Fifth Avenue", &[(ox - 50.0, oy + 620.0), (ox + 390.0, oy + 620.0)]),
    ];
    let ann = annotate_streets(&win, &roads, &AnnotationStyle::default()).unwrap();
    assert_eq!(ann.labels.len(), 3);
    for (i, a) in ann.labels.iter().enumerate() {
        for b in &ann.labels[i + 1..] {
            let (a0, b0, a1, b1) = a.bbox;
            let (c0, d0, c1, d1) = b.bbox;
            let apart = a1 <= c0 || c1 <= a0 || b1 <= d0 || d1 <= b0;
            assert!(apart, "{} and {} overlap", a.name, b.name);
        }
    }
}
