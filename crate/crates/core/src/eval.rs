//! Answer parsing, scoring and the accuracy metric suite.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo_model::{normalize_lossy, AddressLabel, CityIndex, Gazetteer, Level};
use crate::qa_forge::{QType, QaLevel, SampleRecord, Stage, TurnMeta, YesNo, OPTION_LETTERS};

/// One model answer. `turn` is the 0-based question index within the sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub turn: usize,
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerKind {
    Generation,
    Judgment,
    MultipleChoice,
    Combined,
}

impl AnswerKind {
    pub fn of(meta: &TurnMeta) -> Self {
        match (meta.level, meta.qtype) {
            (QaLevel::Combined, _) => AnswerKind::Combined,
            (_, QType::Generation) => AnswerKind::Generation,
            (_, QType::Judgment) => AnswerKind::Judgment,
            (_, QType::MultipleChoice) => AnswerKind::MultipleChoice,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedAnswer {
    Text(String),
    YesNo(YesNo),
    Letter(char),
    /// Canonical gazetteer entries found in a combined answer.
    Pair {
        street: Option<String>,
        district: Option<String>,
    },
    Unparsable,
}

/// Street and district gazetteers used to resolve free-text answers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gazetteers {
    pub streets: Gazetteer,
    pub districts: Gazetteer,
}

impl Default for Gazetteers {
    fn default() -> Self {
        Gazetteers {
            streets: Gazetteer::new(Level::Street),
            districts: Gazetteer::new(Level::District),
        }
    }
}

impl Gazetteers {
    pub fn get(&self, level: Level) -> &Gazetteer {
        match level {
            Level::Street => &self.streets,
            Level::District => &self.districts,
        }
    }

    pub fn from_index(index: &CityIndex) -> Self {
        Gazetteers {
            streets: index.streets.clone(),
            districts: index.districts.clone(),
        }
    }

    /// Collects every name the ground truth mentions: truths, judgment
    /// candidates and choice options.
    pub fn from_samples(samples: &[SampleRecord]) -> Self {
        let mut g = Gazetteers::default();
        let mut add = |level: Level, name: &str| {
            let gaz = match level {
                Level::Street => &mut g.streets,
                Level::District => &mut g.districts,
            };
            // names that normalize to nothing cannot be matched anyway
            let _ = gaz.insert(name);
        };
        for meta in samples.iter().filter_map(|s| s.meta.as_ref()) {
            add(Level::Street, &meta.truth.street);
            add(Level::District, &meta.truth.district);
            for t in &meta.turns {
                let Some(level) = t.level.single() else { continue };
                if let Some(c) = &t.candidate {
                    add(level, c);
                }
                for o in t.options.iter().flatten() {
                    add(level, o);
                }
            }
        }
        g
    }
}

fn yes_no_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(yes|no)\b").unwrap())
}

fn letter_res() -> &'static [Regex; 3] {
    static RE: OnceLock<[Regex; 3]> = OnceLock::new();
    RE.get_or_init(|| {
        [
            Regex::new(r"\(([A-Da-d])\)").unwrap(),
            Regex::new(r"\b(?i:answer)\s*(?:(?i:is)\s*)?[:：]?\s*\(?([A-D])\b").unwrap(),
            Regex::new(r"\b([A-D])\b").unwrap(),
        ]
    })
}

/// Parses a raw answer for a question of the given kind.
///
/// Judgment takes the first standalone yes/no token. Multiple choice looks for
/// `(X)`, then `Answer: X`, then the first standalone capital A to D, and as a
/// last resort an option text mentioned in the answer. Combined answers are
/// resolved against the gazetteers. Anything else is `Unparsable`.
pub fn parse_answer(raw: &str, kind: AnswerKind, options: Option<&[String]>, gaz: &Gazetteers) -> ParsedAnswer {
    let raw = raw.trim();
    if raw.is_empty() {
        return ParsedAnswer::Unparsable;
    }
    match kind {
        AnswerKind::Generation => ParsedAnswer::Text(raw.to_string()),
        AnswerKind::Judgment => match yes_no_re().captures(raw) {
            Some(c) if c[1].eq_ignore_ascii_case("yes") => ParsedAnswer::YesNo(YesNo::Yes),
            Some(_) => ParsedAnswer::YesNo(YesNo::No),
            None => ParsedAnswer::Unparsable,
        },
        AnswerKind::MultipleChoice => {
            for re in letter_res() {
                if let Some(c) = re.captures(raw) {
                    let l = c[1].chars().next().unwrap().to_ascii_uppercase();
                    return ParsedAnswer::Letter(l);
                }
            }
            option_by_text(raw, options).map_or(ParsedAnswer::Unparsable, ParsedAnswer::Letter)
        }
        AnswerKind::Combined => {
            let street = gaz.streets.find_mention(raw).map(str::to_string);
            let district = gaz.districts.find_mention(raw).map(str::to_string);
            if street.is_none() && district.is_none() {
                ParsedAnswer::Unparsable
            } else {
                ParsedAnswer::Pair { street, district }
            }
        }
    }
}

fn option_by_text(raw: &str, options: Option<&[String]>) -> Option<char> {
    let options = options?;
    let text = format!(" {} ", normalize_lossy(raw, Level::Street));
    let hits: Vec<usize> = options
        .iter()
        .enumerate()
        .filter(|(_, o)| {
            let key = normalize_lossy(o, Level::Street);
            !key.is_empty() && text.contains(&format!(" {key} "))
        })
        .map(|(i, _)| i)
        .collect();
    match hits.as_slice() {
        [i] => OPTION_LETTERS.get(*i).copied(),
        _ => None,
    }
}

fn same_name(a: &str, b: &str, level: Level) -> bool {
    normalize_lossy(a, level) == normalize_lossy(b, level)
}

/// Whether a parsed answer is correct for the turn.
pub fn score_question(parsed: &ParsedAnswer, meta: &TurnMeta, truth: &AddressLabel, gaz: &Gazetteers) -> bool {
    match (parsed, meta.level.single()) {
        (ParsedAnswer::Text(text), Some(level)) => {
            let want = truth.get(level);
            same_name(text, want, level)
                || gaz
                    .get(level)
                    .resolve(text)
                    .is_some_and(|c| same_name(c, want, level))
        }
        (ParsedAnswer::YesNo(v), Some(_)) => meta.judgment_truth == Some(*v),
        (ParsedAnswer::Letter(l), Some(_)) => meta.correct_option == Some(*l),
        (ParsedAnswer::Pair { street, district }, None) => {
            street.as_deref().is_some_and(|s| same_name(s, &truth.street, Level::Street))
                && district
                    .as_deref()
                    .is_some_and(|d| same_name(d, &truth.district, Level::District))
        }
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredTurn {
    pub id: String,
    pub city: String,
    pub turn: usize,
    pub level: QaLevel,
    pub qtype: QType,
    pub correct: bool,
    pub unparsable: bool,
    pub missing: bool,
}

/// Scores every localization turn of the ground truth. Turns without a
/// prediction count as wrong and are tallied as missing.
pub fn score_all(gt: &[SampleRecord], preds: &[PredictionRecord], gaz: &Gazetteers) -> Result<Vec<ScoredTurn>> {
    let mut by_key: HashMap<(&str, usize), &str> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_key.insert((p.id.as_str(), p.turn), p.answer.as_str()).is_some() {
            return Err(Error::invalid(format!("duplicate prediction for {} turn {}", p.id, p.turn)));
        }
    }
    let known: HashMap<&str, usize> = gt
        .iter()
        .filter_map(|s| s.meta.as_ref().map(|m| (s.id.as_str(), m.turns.len())))
        .collect();
    let stray = preds
        .iter()
        .filter(|p| known.get(p.id.as_str()).is_none_or(|n| p.turn >= *n))
        .count();
    if stray > 0 {
        log::warn!("{stray} predictions match no ground-truth turn");
    }

    let scored: Vec<ScoredTurn> = gt
        .par_iter()
        .filter_map(|s| s.meta.as_ref().map(|m| (s, m)))
        .filter(|(_, m)| m.stage == Stage::Localization)
        .flat_map_iter(|(s, m)| {
            let by_key = &by_key;
            m.turns.iter().enumerate().map(move |(i, t)| {
                let (correct, unparsable, missing) = match by_key.get(&(s.id.as_str(), i)) {
                    None => (false, false, true),
                    Some(raw) => {
                        let parsed = parse_answer(raw, AnswerKind::of(t), t.options.as_deref(), gaz);
                        let unparsable = parsed == ParsedAnswer::Unparsable;
                        (score_question(&parsed, t, &m.truth, gaz), unparsable, false)
                    }
                };
                ScoredTurn {
                    id: s.id.clone(),
                    city: m.city.clone(),
                    turn: i,
                    level: t.level,
                    qtype: t.qtype,
                    correct,
                    unparsable,
                    missing,
                }
            })
        })
        .collect();
    Ok(scored)
}

/// Source of the joint street-and-district accuracy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AsdMode {
    /// The dedicated combined question.
    #[default]
    CombinedTurn,
    /// A sample counts when all its district and street generation turns are correct.
    PairedGeneration,
}

impl FromStr for AsdMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "combined-turn" | "combined_turn" => Ok(AsdMode::CombinedTurn),
            "paired-generation" | "paired_generation" => Ok(AsdMode::PairedGeneration),
            _ => Err(Error::invalid(format!(
                "unknown A_sd mode {s:?} (combined-turn, paired-generation)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub correct: u64,
    pub total: u64,
    /// Absent when `total` is zero.
    pub percent: Option<f64>,
}

impl Metric {
    pub fn new(correct: u64, total: u64) -> Self {
        Metric {
            correct,
            total,
            percent: (total > 0).then(|| 100.0 * correct as f64 / total as f64),
        }
    }
}

fn mean(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub generation: Metric,
    pub judgment: Metric,
    pub multiple_choice: Metric,
    /// Pooled over the level's questions.
    pub micro: Metric,
    /// Mean of the present category accuracies.
    pub macro_avg: Option<f64>,
}

impl LevelMetrics {
    fn categories(&self) -> [&Metric; 3] {
        [&self.generation, &self.judgment, &self.multiple_choice]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub district: LevelMetrics,
    pub street: LevelMetrics,
    /// Pooled over all single-level questions.
    pub overall_micro: Metric,
    /// Mean of the six single-level category accuracies.
    pub overall_macro: Option<f64>,
    pub asd: Metric,
    pub asd_mode: AsdMode,
    pub questions: u64,
    pub unparsable: u64,
    pub missing: u64,
}

pub const COLUMNS: [&str; 10] = [
    "A_d^G", "A_d^J", "A_d^M", "Ā_d", "A_s^G", "A_s^J", "A_s^M", "Ā_s", "Ā", "A_sd",
];

impl MetricsReport {
    /// Values under [`COLUMNS`]; averages use the micro or macro variant.
    pub fn row(&self, macro_avg: bool) -> [Option<f64>; 10] {
        let level = |l: &LevelMetrics| {
            let avg = if macro_avg { l.macro_avg } else { l.micro.percent };
            [l.generation.percent, l.judgment.percent, l.multiple_choice.percent, avg]
        };
        let [a, b, c, d] = level(&self.district);
        let [e, f, g, h] = level(&self.street);
        let all = if macro_avg { self.overall_macro } else { self.overall_micro.percent };
        [a, b, c, d, e, f, g, h, all, self.asd.percent]
    }

    fn counts_row(&self) -> [(u64, u64); 10] {
        let m = |x: &Metric| (x.correct, x.total);
        let (d, s) = (&self.district, &self.street);
        [
            m(&d.generation),
            m(&d.judgment),
            m(&d.multiple_choice),
            m(&d.micro),
            m(&s.generation),
            m(&s.judgment),
            m(&s.multiple_choice),
            m(&s.micro),
            m(&self.overall_micro),
            m(&self.asd),
        ]
    }
}

#[derive(Default, Clone, Copy)]
struct Tally {
    correct: u64,
    total: u64,
}

impl Tally {
    fn add(&mut self, ok: bool) {
        self.total += 1;
        self.correct += ok as u64;
    }

    fn metric(self) -> Metric {
        Metric::new(self.correct, self.total)
    }
}

fn level_metrics(cells: &HashMap<(QaLevel, QType), Tally>, level: QaLevel) -> LevelMetrics {
    let get = |q| cells.get(&(level, q)).copied().unwrap_or_default();
    let (g, j, m) = (get(QType::Generation), get(QType::Judgment), get(QType::MultipleChoice));
    let out = LevelMetrics {
        generation: g.metric(),
        judgment: j.metric(),
        multiple_choice: m.metric(),
        micro: Metric::new(g.correct + j.correct + m.correct, g.total + j.total + m.total),
        macro_avg: None,
    };
    LevelMetrics {
        macro_avg: mean(out.categories().map(|c| c.percent)),
        ..out
    }
}

/// Folds scored turns into the report. Pure counting, so the order of
/// `scored` never matters.
pub fn aggregate(scored: &[ScoredTurn], mode: AsdMode) -> MetricsReport {
    let mut cells: HashMap<(QaLevel, QType), Tally> = HashMap::new();
    let mut combined = Tally::default();
    // per sample: (all district gens ok, seen, all street gens ok, seen)
    let mut paired: HashMap<&str, [bool; 4]> = HashMap::new();
    for t in scored {
        if t.level == QaLevel::Combined {
            combined.add(t.correct);
            continue;
        }
        cells.entry((t.level, t.qtype)).or_default().add(t.correct);
        if t.qtype == QType::Generation {
            let e = paired.entry(t.id.as_str()).or_insert([true, false, true, false]);
            let k = if t.level == QaLevel::District { 0 } else { 2 };
            e[k] &= t.correct;
            e[k + 1] = true;
        }
    }
    let asd = match mode {
        AsdMode::CombinedTurn => combined.metric(),
        AsdMode::PairedGeneration => {
            let mut tally = Tally::default();
            for [d_ok, d_seen, s_ok, s_seen] in paired.values() {
                if *d_seen && *s_seen {
                    tally.add(*d_ok && *s_ok);
                }
            }
            tally.metric()
        }
    };
    let district = level_metrics(&cells, QaLevel::District);
    let street = level_metrics(&cells, QaLevel::Street);
    let overall_micro = Metric::new(
        district.micro.correct + street.micro.correct,
        district.micro.total + street.micro.total,
    );
    let overall_macro = mean(
        district
            .categories()
            .into_iter()
            .chain(street.categories())
            .map(|c| c.percent),
    );
    MetricsReport {
        district,
        street,
        overall_micro,
        overall_macro,
        asd,
        asd_mode: mode,
        questions: scored.len() as u64,
        unparsable: scored.iter().filter(|t| t.unparsable).count() as u64,
        missing: scored.iter().filter(|t| t.missing).count() as u64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub overall: MetricsReport,
    pub per_city: BTreeMap<String, MetricsReport>,
}

/// Scores and aggregates, overall and per city.
pub fn evaluate(
    gt: &[SampleRecord],
    preds: &[PredictionRecord],
    gaz: &Gazetteers,
    mode: AsdMode,
) -> Result<Evaluation> {
    let scored = score_all(gt, preds, gaz)?;
    let mut cities: BTreeMap<String, Vec<ScoredTurn>> = BTreeMap::new();
    for t in &scored {
        cities.entry(t.city.clone()).or_default().push(t.clone());
    }
    Ok(Evaluation {
        overall: aggregate(&scored, mode),
        per_city: cities
            .into_iter()
            .map(|(c, turns)| (c, aggregate(&turns, mode)))
            .collect(),
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "—".to_string(), |p| format!("{p:.2}"))
}

/// Aligned table in the column order of [`COLUMNS`], with micro, macro and
/// count rows.
pub fn render_report(report: &MetricsReport) -> String {
    let mut rows: Vec<(String, Vec<String>)> = vec![
        ("".into(), COLUMNS.iter().map(|c| c.to_string()).collect()),
        ("micro".into(), report.row(false).iter().map(|v| cell(*v)).collect()),
        ("macro".into(), report.row(true).iter().map(|v| cell(*v)).collect()),
    ];
    rows.push((
        "n".into(),
        report
            .counts_row()
            .iter()
            .map(|(c, t)| format!("{c}/{t}"))
            .collect(),
    ));
    let width = |s: &str| s.chars().count();
    let label_w = rows.iter().map(|(l, _)| width(l)).max().unwrap_or(0);
    let col_w: Vec<usize> = (0..COLUMNS.len())
        .map(|i| rows.iter().map(|(_, r)| width(&r[i])).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (label, cells) in &rows {
        let _ = write!(out, "{label}{}", " ".repeat(label_w - width(label)));
        for (c, w) in cells.iter().zip(&col_w) {
            let _ = write!(out, "  {}{c}", " ".repeat(w - width(c)));
        }
        out.push('\n');
    }
    let _ = writeln!(
        out,
        "questions {}  unparsable {}  missing {}  A_sd from {}",
        report.questions,
        report.unparsable,
        report.missing,
        report.asd_mode
    );
    out
}

impl fmt::Display for AsdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AsdMode::CombinedTurn => "combined-turn",
            AsdMode::PairedGeneration => "paired-generation",
        })
    }
}
