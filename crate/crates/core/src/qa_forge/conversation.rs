use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::templates::{QuestionTemplateBank, GENERATION_SUFFIX, OPTION_LETTERS};
use super::{ConversationSample, QType, QaLevel, QuestionTurn, Stage, TurnMeta, YesNo};
use crate::error::{Error, Result};
use crate::geo_model::{normalize_lossy, AddressLabel, CityIndex, Level};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuestionKind {
    Generation(Level),
    Judgment(Level, YesNo),
    MultipleChoice(Level),
    /// Street and district in one generated answer.
    Combined,
}

/// Candidate answers per level, used to draw distractors.
#[derive(Debug, Clone, Default)]
pub struct Pools {
    pub streets: Vec<String>,
    pub districts: Vec<String>,
}

impl Pools {
    pub fn from_index(index: &CityIndex) -> Self {
        Pools {
            streets: index.streets.names().map(str::to_string).collect(),
            districts: index.districts.names().map(str::to_string).collect(),
        }
    }

    pub fn get(&self, level: Level) -> &[String] {
        match level {
            Level::Street => &self.streets,
            Level::District => &self.districts,
        }
    }

    /// Every pool entry except `truth` (compared in normalized form).
    pub fn distractors(&self, level: Level, truth: &str) -> Vec<&str> {
        let key = normalize_lossy(truth, level);
        self.get(level)
            .iter()
            .filter(|c| normalize_lossy(c, level) != key)
            .map(String::as_str)
            .collect()
    }
}

fn pick_template<'a, R: Rng>(bank: &'a QuestionTemplateBank, level: Level, rng: &mut R) -> &'a str {
    bank.templates(level)
        .choose(rng)
        .map(String::as_str)
        .expect("template bank is never empty")
}

/// Renders one question turn. Templates are drawn uniformly for the level;
/// judgment negatives and choice distractors are drawn uniformly from
/// `distractors`, which must not contain the truth.
pub fn render_question<R: Rng>(
    bank: &QuestionTemplateBank,
    kind: QuestionKind,
    truth: &AddressLabel,
    distractors: &[&str],
    rng: &mut R,
) -> Result<QuestionTurn> {
    if let QuestionKind::Judgment(level, _) | QuestionKind::MultipleChoice(level) = kind {
        let key = normalize_lossy(truth.get(level), level);
        if distractors.iter().any(|d| normalize_lossy(d, level) == key) {
            return Err(Error::invalid(format!(
                "distractor pool contains the truth {:?}",
                truth.get(level)
            )));
        }
    }
    let turn = match kind {
        QuestionKind::Generation(level) => QuestionTurn {
            meta: TurnMeta {
                qtype: QType::Generation,
                level: level.into(),
                candidate: None,
                judgment_truth: None,
                options: None,
                correct_option: None,
            },
            question: format!("{} {GENERATION_SUFFIX}", pick_template(bank, level, rng)),
            answer: truth.get(level).to_string(),
        },
        QuestionKind::Judgment(level, planted) => {
            let candidate = match planted {
                YesNo::Yes => truth.get(level).to_string(),
                YesNo::No => distractors
                    .choose(rng)
                    .ok_or_else(|| {
                        Error::invalid(format!("no {level} distractors for a negative judgment"))
                    })?
                    .to_string(),
            };
            QuestionTurn {
                question: format!(
                    "{} {}",
                    pick_template(bank, level, rng),
                    QuestionTemplateBank::judgment_suffix(level, &candidate)
                ),
                answer: planted.answer().to_string(),
                meta: TurnMeta {
                    qtype: QType::Judgment,
                    level: level.into(),
                    candidate: Some(candidate),
                    judgment_truth: Some(planted),
                    options: None,
                    correct_option: None,
                },
            }
        }
        QuestionKind::MultipleChoice(level) => {
            if distractors.len() < 3 {
                return Err(Error::invalid(format!(
                    "multiple choice needs 3 {level} distractors, have {}",
                    distractors.len()
                )));
            }
            let mut options: Vec<String> = distractors
                .choose_multiple(rng, 3)
                .map(|s| s.to_string())
                .collect();
            options.push(truth.get(level).to_string());
            options.shuffle(rng);
            let idx = options
                .iter()
                .position(|o| o == truth.get(level))
                .expect("truth is among the options");
            let letter = OPTION_LETTERS[idx];
            QuestionTurn {
                question: format!(
                    "{} {}",
                    pick_template(bank, level, rng),
                    QuestionTemplateBank::choice_suffix(level, &options)
                ),
                answer: letter.to_string(),
                meta: TurnMeta {
                    qtype: QType::MultipleChoice,
                    level: level.into(),
                    candidate: None,
                    judgment_truth: None,
                    options: Some(options),
                    correct_option: Some(letter),
                },
            }
        }
        QuestionKind::Combined => QuestionTurn {
            meta: TurnMeta {
                qtype: QType::Generation,
                level: QaLevel::Combined,
                candidate: None,
                judgment_truth: None,
                options: None,
                correct_option: None,
            },
            question: bank.combined.clone(),
            answer: format!("{}, {}", truth.street, truth.district),
        },
    };
    Ok(turn)
}

/// Conversation layout per image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// One generation, one judgment, one multiple-choice turn, each at a
    /// uniformly drawn level.
    Train,
    /// Generation ×2 levels, judgment yes/no ×2 levels, multiple choice ×2
    /// levels, and the combined street + district turn.
    Test,
}

impl Profile {
    pub fn turns_per_image(self) -> usize {
        match self {
            Profile::Train => 3,
            Profile::Test => 9,
        }
    }

    fn plan<R: Rng>(self, rng: &mut R) -> Vec<QuestionKind> {
        let level = |rng: &mut R| {
            if rng.gen_bool(0.5) {
                Level::District
            } else {
                Level::Street
            }
        };
        match self {
            Profile::Train => {
                let g = level(rng);
                let j = level(rng);
                let yn = if rng.gen_bool(0.5) { YesNo::Yes } else { YesNo::No };
                let m = level(rng);
                vec![
                    QuestionKind::Generation(g),
                    QuestionKind::Judgment(j, yn),
                    QuestionKind::MultipleChoice(m),
                ]
            }
            Profile::Test => {
                use Level::{District, Street};
                vec![
                    QuestionKind::Generation(District),
                    QuestionKind::Generation(Street),
                    QuestionKind::Judgment(District, YesNo::Yes),
                    QuestionKind::Judgment(District, YesNo::No),
                    QuestionKind::Judgment(Street, YesNo::Yes),
                    QuestionKind::Judgment(Street, YesNo::No),
                    QuestionKind::MultipleChoice(District),
                    QuestionKind::MultipleChoice(Street),
                    QuestionKind::Combined,
                ]
            }
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Train => "train",
            Profile::Test => "test",
        })
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Profile::Train),
            "test" => Ok(Profile::Test),
            other => Err(Error::invalid(format!("unknown profile {other:?}"))),
        }
    }
}

/// Identity of the image a conversation is built for.
#[derive(Debug, Clone)]
pub struct ImageRef {
    pub id: String,
    pub city: String,
    pub location_id: String,
    pub heading: f64,
    pub images: Vec<PathBuf>,
}

pub fn build_conversation<R: Rng>(
    bank: &QuestionTemplateBank,
    image: ImageRef,
    profile: Profile,
    truth: &AddressLabel,
    pools: &Pools,
    rng: &mut R,
) -> Result<ConversationSample> {
    let mut turns = Vec::with_capacity(profile.turns_per_image());
    for kind in profile.plan(rng) {
        let distractors = match kind {
            QuestionKind::Judgment(level, _) | QuestionKind::MultipleChoice(level) => {
                pools.distractors(level, truth.get(level))
            }
            _ => Vec::new(),
        };
        turns.push(render_question(bank, kind, truth, &distractors, rng)?);
    }
    Ok(ConversationSample {
        id: image.id,
        city: image.city,
        location_id: image.location_id,
        heading: image.heading,
        images: image.images,
        truth: truth.clone(),
        turns,
        stage: Stage::Localization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn truth() -> AddressLabel {
        AddressLabel {
            street: "Grant Street".into(),
            district: "Downtown".into(),
        }
    }

    fn pools() -> Pools {
        Pools {
            streets: ["Grant Street", "Fifth Avenue", "Penn Avenue", "Liberty Avenue", "Wood Street"]
                .map(String::from)
                .to_vec(),
            districts: ["Downtown", "Strip District", "Oakland", "Shadyside"]
                .map(String::from)
                .to_vec(),
        }
    }

    #[test]
    fn generation_district() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bank = QuestionTemplateBank::default();
        let t = render_question(&bank, QuestionKind::Generation(Level::District), &truth(), &[], &mut rng).unwrap();
        assert!(t.question.ends_with(GENERATION_SUFFIX));
        assert!(bank.district.iter().any(|tpl| t.question.starts_with(tpl.as_str())));
        assert_eq!(t.answer, "Downtown");
    }

    #[test]
    fn positive_judgment_names_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bank = QuestionTemplateBank::default();
        let t = render_question(
            &bank,
            QuestionKind::Judgment(Level::Street, YesNo::Yes),
            &truth(),
            &["Fifth Avenue"],
            &mut rng,
        )
        .unwrap();
        assert!(t.question.ends_with("Is this image taken on Grant Street, Yes or No?"));
        assert_eq!(t.answer, "Yes");
        assert_eq!(t.meta.candidate.as_deref(), Some("Grant Street"));
    }

    #[test]
    fn negative_judgment_needs_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bank = QuestionTemplateBank::default();
        let kind = QuestionKind::Judgment(Level::District, YesNo::No);
        assert!(render_question(&bank, kind, &truth(), &[], &mut rng).is_err());
        let t = render_question(&bank, kind, &truth(), &["Oakland"], &mut rng).unwrap();
        assert_eq!(t.answer, "No");
        assert!(t.question.contains("in Oakland, Yes or No?"));
    }

    #[test]
    fn choice_needs_three_distractors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bank = QuestionTemplateBank::default();
        let kind = QuestionKind::MultipleChoice(Level::Street);
        assert!(render_question(&bank, kind, &truth(), &["A", "B"], &mut rng).is_err());
        assert!(render_question(&bank, kind, &truth(), &["A", "B", "grant st"], &mut rng).is_err());
    }

    #[test]
    fn test_profile_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = ImageRef {
            id: "c/L1_h0".into(),
            city: "c".into(),
            location_id: "L1".into(),
            heading: 0.0,
            images: vec!["a.jpg".into()],
        };
        let s = build_conversation(&QuestionTemplateBank::default(), img, Profile::Test, &truth(), &pools(), &mut rng).unwrap();
        assert_eq!(s.turns.len(), 9);
        let count = |q: QType| s.turns.iter().filter(|t| t.qtype() == q).count();
        assert_eq!(count(QType::Generation), 3);
        assert_eq!(count(QType::Judgment), 4);
        assert_eq!(count(QType::MultipleChoice), 2);
        assert_eq!(s.turns.iter().filter(|t| t.level() == QaLevel::Combined).count(), 1);
        let rec = s.to_record();
        rec.validate().unwrap();
        assert!(rec.conversations[0].value.starts_with("<image>\n"));
        assert_eq!(rec.conversations.iter().filter(|m| m.value.contains("<image>")).count(), 1);
    }
}
