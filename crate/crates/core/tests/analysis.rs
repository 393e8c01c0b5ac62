use std::collections::BTreeMap;

use addrforge::analysis::{
    build_choice_prompt, emit_overlay, tally, tally_by_image, topk, validate_geojson, write_frequency_csv,
    FrequencyMap, ResponseRecord,
};
use addrforge::geo_model::{AddressLabel, Gazetteer, Level, Location, Road};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NAMES: [&str; 6] = ["Penn Avenue", "Fifth Avenue", "Liberty Avenue", "Grant Street", "Wood Street", "Smithfield Street"];

fn gaz() -> Gazetteer {
    let mut g = Gazetteer::new(Level::Street);
    for n in NAMES {
        g.insert(n).unwrap();
    }
    g
}

fn truth() -> Location {
    Location {
        id: "L1".into(),
        lat: 40.44,
        lon: -80.0,
        address: AddressLabel { street: "Penn Avenue".into(), district: "Downtown".into() },
        views: vec![],
    }
}

proptest! {
    #[test]
    fn tally_counts_add_up(picks in proptest::collection::vec(0usize..8, 0..300)) {
        // indices past the name table are junk answers
        let responses: Vec<String> = picks
            .iter()
            .map(|&i| NAMES.get(i).map_or_else(|| format!("unsure {i}"), |n| n.to_lowercase()))
            .collect();
        let f = tally(&responses, &gaz());
        prop_assert_eq!(f.total, picks.len() as u64);
        prop_assert_eq!(f.valid_total() + f.invalid_count, f.total);
        for (i, n) in NAMES.iter().enumerate() {
            let want = picks.iter().filter(|&&p| p == i).count() as u64;
            prop_assert_eq!(f.counts.get(*n).copied().unwrap_or(0), want);
        }
        let top = topk(&f, 3);
        prop_assert!(top.windows(2).all(|w| w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0)));
    }
}

#[test]
fn responses_group_by_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut records = Vec::new();
    let mut want: BTreeMap<String, BTreeMap<&str, u64>> = BTreeMap::new();
    for img in 0..10 {
        for run in 0..100 {
            let name = *NAMES.choose(&mut rng).unwrap();
            records.push(ResponseRecord { image_id: format!("img{img}"), run, response: name.into() });
            *want.entry(format!("img{img}")).or_default().entry(name).or_default() += 1;
        }
    }
    records.shuffle(&mut rng);
    let maps = tally_by_image(&records, &gaz());
    assert_eq!(maps.len(), 10);
    for (id, f) in &maps {
        assert_eq!(f.total, 100);
        let got: BTreeMap<&str, u64> = f.counts.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        assert_eq!(got, want[id]);
    }
}

#[test]
fn csv_lists_ranked_streets_and_invalids() {
    let dir = tempfile::tempdir().unwrap();
    let mut responses = vec!["Penn Avenue"; 3];
    responses.extend(["Grant St", "no idea"]);
    let maps = BTreeMap::from([("img0".to_string(), tally(&responses, &gaz()))]);
    let path = dir.path().join("out/freq.csv");
    write_frequency_csv(&path, &maps).unwrap();
    let mut r = csv::Reader::from_path(&path).unwrap();
    let rows: Vec<Vec<String>> = r.records().map(|x| x.unwrap().iter().map(str::to_string).collect()).collect();
    assert_eq!(
        rows,
        [
            ["img0", "Penn Avenue", "3", "1"],
            ["img0", "Grant Street", "1", "2"],
            ["img0", "", "1", ""],
        ]
    );
}

#[test]
fn choice_prompts_over_random_lists() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let n = rng.gen_range(1..12);
        let list: Vec<String> = (0..n)
            .map(|_| {
                let name = *NAMES.choose(&mut rng).unwrap();
                if rng.gen_bool(0.3) { name.replace("Avenue", "Ave").to_uppercase() } else { name.to_string() }
            })
            .collect();
        let p = build_choice_prompt(&list).unwrap();
        // first spelling of each distinct street, in order of appearance
        let mut want: Vec<&str> = Vec::new();
        let mut keys = Vec::new();
        for s in &list {
            let key = s.to_lowercase().replace("ave", "avenue").replace("avenuenue", "avenue");
            if !keys.contains(&key) {
                keys.push(key);
                want.push(s);
            }
        }
        assert_eq!(p.options, want);
        for (i, o) in p.options.iter().enumerate() {
            assert!(p.text.contains(&format!("\n{}. {o}\n", i + 1)));
        }
    }
}

#[test]
fn overlay_limits_and_missing_geometry() {
    let roads = vec![
        Road { name: "Penn Avenue".into(), polyline: vec![(-80.0, 40.44), (-79.99, 40.441)] },
        Road { name: "Penn Ave".into(), polyline: vec![(-79.99, 40.441), (-79.98, 40.442)] },
    ];
    let f = FrequencyMap {
        counts: [("Penn Avenue".to_string(), 9), ("Grant Street".to_string(), 4)].into(),
        invalid_count: 1,
        total: 14,
    };
    let o = emit_overlay(&f, &roads, &truth(), 2).unwrap();
    validate_geojson(&o.doc).unwrap();
    let feats = o.doc["features"].as_array().unwrap();
    assert_eq!(feats[1]["geometry"]["type"], "MultiLineString");
    assert!(feats[2]["geometry"].is_null());
    assert_eq!(o.warnings.len(), 1);
    assert!(emit_overlay(&f, &roads, &truth(), 4).is_err());
    assert!(emit_overlay(&f, &roads, &truth(), 0).is_err());
    assert!(validate_geojson(&serde_json::json!({"type": "Feature"})).is_err());
}
