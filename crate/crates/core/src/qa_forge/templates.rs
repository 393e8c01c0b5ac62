//! Question template bank.

use crate::geo_model::Level;

pub const DISTRICT_TEMPLATES: [&str; 10] = [
    "Tell me the district where this image was captured.",
    "I'm curious about the district, where is this?",
    "In which urban district was this photo taken?",
    "Can you identify which district this is?",
    "What district is shown in this photograph?",
    "What major district does the photo fall under?",
    "I'm looking for the name of the district in this photo, can you help?",
    "Can you specify the district shown in this photo?",
    "Which district is depicted in the photo?",
    "What's the name of the district shown in the photo?",
];

pub const STREET_TEMPLATES: [&str; 10] = [
    "Identify the street in this image, please.",
    "What is the street seen in this picture called?",
    "On which boulevard or street was this taken?",
    "Give me the name of the street that appears in this photograph.",
    "Where was this, can you name the street?",
    "What's the name of the avenue or street captured in this shot?",
    "The street in this image, what is it named?",
    "What's the name of this street shown in the photo?",
    "Can you tell me which road this is?",
    "What thoroughfare is depicted here?",
];

pub const GENERATION_SUFFIX: &str = "Answer the question using a single word or phrase.";

/// Stand-alone question for the street + district turn.
pub const COMBINED_QUESTION: &str =
    "What street and district is shown in this photo? Answer with street and district.";

pub const OPTION_LETTERS: [char; 4] = ['A', 'B', 'C', 'D'];

#[derive(Debug, Clone)]
pub struct QuestionTemplateBank {
    pub district: Vec<String>,
    pub street: Vec<String>,
    pub combined: String,
}

impl Default for QuestionTemplateBank {
    fn default() -> Self {
        QuestionTemplateBank {
            district: DISTRICT_TEMPLATES.iter().map(|s| s.to_string()).collect(),
            street: STREET_TEMPLATES.iter().map(|s| s.to_string()).collect(),
            combined: COMBINED_QUESTION.to_string(),
        }
    }
}

impl QuestionTemplateBank {
    pub fn templates(&self, level: Level) -> &[String] {
        match level {
            Level::District => &self.district,
            Level::Street => &self.street,
        }
    }

    pub fn judgment_suffix(level: Level, candidate: &str) -> String {
        let prep = match level {
            Level::Street => "on",
            Level::District => "in",
        };
        format!("Is this image taken {prep} {candidate}, Yes or No?")
    }

    pub fn choice_suffix(level: Level, options: &[String]) -> String {
        let listed: Vec<String> = options
            .iter()
            .zip(OPTION_LETTERS)
            .map(|(o, l)| format!("({l}) {o}"))
            .collect();
        format!(
            "Which of the following {level} correctly represents the location shown in the image? {}. Please select the correct option (A/B/C/D).",
            listed.join(" ")
        )
    }
}
