//! Test-side oracles, written without calling the code they check.

#![allow(dead_code)]

use addrforge::eval::{AnswerKind, Gazetteers, ParsedAnswer, PredictionRecord};
use addrforge::geo_model::{AddressLabel, Gazetteer, Level};
use addrforge::qa_forge::{
    Message, QType, QaLevel, Role, SampleMeta, SampleRecord, Stage, TurnMeta, YesNo,
};
use image::{Rgb, RgbImage};
use rand::Rng;

pub fn random_image<R: Rng>(rng: &mut R, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| Rgb([rng.gen(), rng.gen(), rng.gen()]))
}

/// Direct 2-D area average: for every output pixel, sum each source pixel
/// weighted by the exact overlap of the two footprints. Units are chosen so
/// all overlaps are integers; ties round up.
pub fn box_resize(src: &RgbImage, w: u32, h: u32) -> RgbImage {
    let (sw, sh) = src.dimensions();
    let overlap = |a0: u128, a1: u128, b0: u128, b1: u128| a1.min(b1).saturating_sub(a0.max(b0));
    RgbImage::from_fn(w, h, |x, y| {
        // output footprint in units of 1/(w·h) of a source pixel
        let (ox0, ox1) = (x as u128 * sw as u128, (x as u128 + 1) * sw as u128);
        let (oy0, oy1) = (y as u128 * sh as u128, (y as u128 + 1) * sh as u128);
        let mut acc = [0u128; 3];
        let rows = (oy0 / h as u128) as u32..(oy1.div_ceil(h as u128) as u32).min(sh);
        let cols = (ox0 / w as u128) as u32..(ox1.div_ceil(w as u128) as u32).min(sw);
        for sy in rows {
            let wy = overlap(oy0, oy1, sy as u128 * h as u128, (sy as u128 + 1) * h as u128);
            if wy == 0 {
                continue;
            }
            for sx in cols.clone() {
                let wx = overlap(ox0, ox1, sx as u128 * w as u128, (sx as u128 + 1) * w as u128);
                if wx == 0 {
                    continue;
                }
                let p = src.get_pixel(sx, sy).0;
                for c in 0..3 {
                    acc[c] += p[c] as u128 * wx * wy;
                }
            }
        }
        let d = sw as u128 * sh as u128;
        Rgb(acc.map(|n| ((2 * n + d) / (2 * d)) as u8))
    })
}

/// Placement rectangle `(x0, x1, y0, y1)` for a street image of `sw × sh`
/// grafted at `delta` onto a `t × t` satellite.
pub fn graft_rect(sw: u32, sh: u32, delta: f64, t: u32) -> (u32, u32, u32, u32) {
    let long = (delta * t as f64).round();
    let short = (sw.min(sh) as f64 * long / sw.max(sh) as f64).round();
    let (w, h) = if sw >= sh { (long, short) } else { (short, long) };
    let (w, h) = (w as u32, h as u32);
    if w == 0 || h == 0 {
        return (t, t, 0, 0);
    }
    (t - w, t, 0, h)
}

/// Per-pixel composition `M·sat + (1−M)·street`.
pub fn graft_oracle(sat: &RgbImage, street: &RgbImage, delta: f64) -> RgbImage {
    let t = sat.width();
    let (x0, x1, y0, y1) = graft_rect(street.width(), street.height(), delta, t);
    let small = box_resize(street, x1 - x0, y1 - y0);
    RgbImage::from_fn(t, t, |x, y| {
        let inside = x >= x0 && x < x1 && y >= y0 && y < y1;
        if inside {
            *small.get_pixel(x - x0, y - y0)
        } else {
            *sat.get_pixel(x, y)
        }
    })
}

pub const STREETS: [&str; 4] = ["Penn Avenue", "Grant Street", "Fifth Avenue", "Liberty Avenue"];
pub const DISTRICTS: [&str; 4] = ["Downtown", "Oakland", "Strip District", "Shadyside"];

pub fn gazetteers() -> Gazetteers {
    let mut streets = Gazetteer::new(Level::Street);
    let mut districts = Gazetteer::new(Level::District);
    for s in STREETS {
        streets.insert(s).unwrap();
    }
    for d in DISTRICTS {
        districts.insert(d).unwrap();
    }
    Gazetteers { streets, districts }
}

pub fn options() -> Vec<String> {
    STREETS.iter().map(|s| s.to_string()).collect()
}

fn pair(street: Option<&str>, district: Option<&str>) -> ParsedAnswer {
    ParsedAnswer::Pair {
        street: street.map(String::from),
        district: district.map(String::from),
    }
}

/// Hand truth table of messy answers; multiple-choice cases use
/// [`options`].
pub fn parser_cases() -> Vec<(&'static str, AnswerKind, ParsedAnswer)> {
    use AnswerKind::*;
    use ParsedAnswer::{Letter, Text, Unparsable};
    vec![
        ("Yes", Judgment, ParsedAnswer::YesNo(YesNo::Yes)),
        ("no.", Judgment, ParsedAnswer::YesNo(YesNo::No)),
        ("  YES, it was taken there.", Judgment, ParsedAnswer::YesNo(YesNo::Yes)),
        ("No, this is Penn Avenue.", Judgment, ParsedAnswer::YesNo(YesNo::No)),
        ("I think yes", Judgment, ParsedAnswer::YesNo(YesNo::Yes)),
        ("Nope", Judgment, Unparsable),
        ("The image is not clear", Judgment, Unparsable),
        ("(C)", MultipleChoice, Letter('C')),
        ("b", MultipleChoice, Unparsable),
        ("Answer: D", MultipleChoice, Letter('D')),
        ("The answer is (a).", MultipleChoice, Letter('A')),
        ("I would choose B because of the bridge.", MultipleChoice, Letter('B')),
        ("grant street", MultipleChoice, Letter('B')),
        ("Penn Ave.", MultipleChoice, Letter('A')),
        ("Grant St.", Generation, Text("Grant St.".into())),
        ("   ", Generation, Unparsable),
        ("Grant Street, Downtown", Combined, pair(Some("Grant Street"), Some("Downtown"))),
        (
            "It was taken on Fifth Ave in the Strip District.",
            Combined,
            pair(Some("Fifth Avenue"), Some("Strip District")),
        ),
        ("Somewhere in Oakland", Combined, pair(None, Some("Oakland"))),
        ("I don't know", Combined, Unparsable),
    ]
}

fn meta(qtype: QType, level: QaLevel) -> TurnMeta {
    TurnMeta {
        qtype,
        level,
        candidate: None,
        judgment_truth: None,
        options: None,
        correct_option: None,
    }
}

pub fn record(id: &str, city: &str, truth: (&str, &str), turns: Vec<TurnMeta>) -> SampleRecord {
    let mut conversations = Vec::new();
    for i in 0..turns.len() {
        let q = if i == 0 { "<image>\nQuestion?" } else { "Question?" };
        conversations.push(Message { from: Role::Human, value: q.into() });
        conversations.push(Message { from: Role::Assistant, value: "Answer".into() });
    }
    SampleRecord {
        id: id.into(),
        image: Some(format!("{id}.png")),
        images: None,
        conversations,
        meta: Some(SampleMeta {
            city: city.into(),
            location_id: id.into(),
            heading: 0.0,
            stage: Stage::Localization,
            truth: AddressLabel { street: truth.0.into(), district: truth.1.into() },
            turns,
        }),
    }
}

/// Four single-level questions of which exactly three are answered
/// correctly.
pub fn four_question_fixture() -> (Vec<SampleRecord>, Vec<PredictionRecord>) {
    let mut judg = meta(QType::Judgment, QaLevel::Street);
    judg.candidate = Some("Grant Street".into());
    judg.judgment_truth = Some(YesNo::Yes);
    let mut mc_s = meta(QType::MultipleChoice, QaLevel::Street);
    mc_s.options = Some(options());
    mc_s.correct_option = Some('B');
    let mut mc_d = meta(QType::MultipleChoice, QaLevel::District);
    mc_d.options = Some(DISTRICTS.iter().map(|s| s.to_string()).collect());
    mc_d.correct_option = Some('A');
    let gt = vec![record(
        "fx/L1_h0",
        "fx",
        ("Grant Street", "Downtown"),
        vec![meta(QType::Generation, QaLevel::District), judg, mc_s, mc_d],
    )];
    let preds = [(0, "Downtown"), (1, "Yes."), (2, "(C)"), (3, "A")]
        .into_iter()
        .map(|(turn, a)| PredictionRecord { id: "fx/L1_h0".into(), turn, answer: a.into() })
        .collect();
    (gt, preds)
}

/// One sample per answer with a single combined question.
pub fn combined_fixture(answers: &[&str]) -> (Vec<SampleRecord>, Vec<PredictionRecord>) {
    let mut gt = Vec::new();
    let mut preds = Vec::new();
    for (i, a) in answers.iter().enumerate() {
        let id = format!("c/L{i}_h0");
        gt.push(record(&id, "c", ("Grant Street", "Downtown"), vec![meta(QType::Generation, QaLevel::Combined)]));
        preds.push(PredictionRecord { id, turn: 0, answer: a.to_string() });
    }
    (gt, preds)
}
