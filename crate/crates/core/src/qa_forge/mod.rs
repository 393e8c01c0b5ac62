//! Address-VQA conversation synthesis and dataset assembly.
//!
//! Samples are emitted as JSONL in the common multimodal instruction-tuning
//! layout:
//!
//! ```json
//! {"id": "...", "image": "...", "conversations": [{"from": "human", "value": "<image>\n..."}, ...], "meta": {...}}
//! ```
//!
//! The image placeholder appears only in the first human turn, once per
//! attached image.

mod conversation;
mod dataset;
mod split;
mod templates;

pub use conversation::{build_conversation, render_question, ImageRef, Pools, Profile, QuestionKind};
pub use dataset::{
    forge_dataset, merge_cities, mix_external, parse_ratio, read_dataset, recount, training_config,
    write_dataset, Dataset, DatasetManifest, ForgeOptions, SplitCounts,
};
pub use split::{downsample, split_locations, Split, SplitAssignment};
pub use templates::{
    QuestionTemplateBank, COMBINED_QUESTION, DISTRICT_TEMPLATES, GENERATION_SUFFIX, OPTION_LETTERS,
    STREET_TEMPLATES,
};

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo_model::{AddressLabel, Level};

pub const IMAGE_TOKEN: &str = "<image>\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QType {
    Generation,
    Judgment,
    MultipleChoice,
}

impl fmt::Display for QType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QType::Generation => "generation",
            QType::Judgment => "judgment",
            QType::MultipleChoice => "multiple_choice",
        })
    }
}

/// Question level; `Combined` asks for street and district together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QaLevel {
    District,
    Street,
    Combined,
}

impl From<Level> for QaLevel {
    fn from(l: Level) -> Self {
        match l {
            Level::District => QaLevel::District,
            Level::Street => QaLevel::Street,
        }
    }
}

impl QaLevel {
    pub fn single(self) -> Option<Level> {
        match self {
            QaLevel::District => Some(Level::District),
            QaLevel::Street => Some(Level::Street),
            QaLevel::Combined => None,
        }
    }
}

impl fmt::Display for QaLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QaLevel::District => "district",
            QaLevel::Street => "street",
            QaLevel::Combined => "combined",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YesNo {
    Yes,
    No,
}

impl YesNo {
    pub fn answer(self) -> &'static str {
        match self {
            YesNo::Yes => "Yes",
            YesNo::No => "No",
        }
    }

    pub fn flip(self) -> Self {
        match self {
            YesNo::Yes => YesNo::No,
            YesNo::No => YesNo::Yes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Alignment,
    Localization,
}

/// Scoring metadata for one question/answer turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnMeta {
    pub qtype: QType,
    pub level: QaLevel,
    /// Address named in a judgment question.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judgment_truth: Option<YesNo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct_option: Option<char>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionTurn {
    pub meta: TurnMeta,
    pub question: String,
    pub answer: String,
}

impl QuestionTurn {
    pub fn qtype(&self) -> QType {
        self.meta.qtype
    }

    pub fn level(&self) -> QaLevel {
        self.meta.level
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Human,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub from: Role,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub city: String,
    pub location_id: String,
    pub heading: f64,
    pub stage: Stage,
    pub truth: AddressLabel,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub turns: Vec<TurnMeta>,
}

/// One emitted JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<Vec<String>>,
    pub conversations: Vec<Message>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<SampleMeta>,
}

impl SampleRecord {
    pub fn image_refs(&self) -> Vec<&str> {
        match (&self.image, &self.images) {
            (Some(one), _) => vec![one.as_str()],
            (None, Some(many)) => many.iter().map(String::as_str).collect(),
            (None, None) => Vec::new(),
        }
    }

    pub fn question_count(&self) -> usize {
        self.conversations
            .iter()
            .filter(|m| m.from == Role::Human)
            .count()
    }

    /// Checks the conversation schema: alternating human/assistant turns
    /// starting with human, placeholders only in the first turn and equal in
    /// number to the attached images, and turn metadata aligned with turns.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Error::invalid(format!("sample {}: {msg}", self.id));
        if self.id.is_empty() {
            return Err(Error::invalid("sample with empty id"));
        }
        if self.image.is_some() && self.images.is_some() {
            return Err(bad("both image and images set".into()));
        }
        if self.conversations.is_empty() || !self.conversations.len().is_multiple_of(2) {
            return Err(bad(format!(
                "expected a nonempty even number of messages, got {}",
                self.conversations.len()
            )));
        }
        for (i, m) in self.conversations.iter().enumerate() {
            let expected = if i % 2 == 0 { Role::Human } else { Role::Assistant };
            if m.from != expected {
                return Err(bad(format!("message {i} should be from {expected:?}")));
            }
            let count = m.value.matches("<image>").count();
            if i == 0 {
                if count != self.image_refs().len() {
                    return Err(bad(format!(
                        "{count} image placeholders for {} images",
                        self.image_refs().len()
                    )));
                }
            } else if count != 0 {
                return Err(bad(format!("image placeholder in message {i}")));
            }
        }
        if let Some(meta) = &self.meta {
            if meta.stage == Stage::Localization && meta.turns.len() != self.question_count() {
                return Err(bad(format!(
                    "{} turn tags for {} questions",
                    meta.turns.len(),
                    self.question_count()
                )));
            }
        }
        Ok(())
    }
}

/// Typed form of a localization conversation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversationSample {
    pub id: String,
    pub city: String,
    pub location_id: String,
    pub heading: f64,
    pub images: Vec<PathBuf>,
    pub truth: AddressLabel,
    pub turns: Vec<QuestionTurn>,
    pub stage: Stage,
}

impl ConversationSample {
    pub fn to_record(&self) -> SampleRecord {
        let refs: Vec<String> = self
            .images
            .iter()
            .map(|p| p.to_string_lossy().into_owned())
            .collect();
        let prefix = IMAGE_TOKEN.repeat(refs.len());
        let mut conversations = Vec::with_capacity(self.turns.len() * 2);
        for (i, t) in self.turns.iter().enumerate() {
            let value = if i == 0 {
                format!("{prefix}{}", t.question)
            } else {
                t.question.clone()
            };
            conversations.push(Message {
                from: Role::Human,
                value,
            });
            conversations.push(Message {
                from: Role::Assistant,
                value: t.answer.clone(),
            });
        }
        let (image, images) = match refs.len() {
            0 => (None, None),
            1 => (refs.into_iter().next(), None),
            _ => (None, Some(refs)),
        };
        SampleRecord {
            id: self.id.clone(),
            image,
            images,
            conversations,
            meta: Some(SampleMeta {
                city: self.city.clone(),
                location_id: self.location_id.clone(),
                heading: self.heading,
                stage: self.stage,
                truth: self.truth.clone(),
                turns: self.turns.iter().map(|t| t.meta.clone()).collect(),
            }),
        }
    }
}

/// `"{city}/{location}_h{heading}"`.
pub fn sample_id(city: &str, location_id: &str, heading_tag: &str) -> String {
    format!("{city}/{location_id}_h{heading_tag}")
}
