use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Expression class reported by a classifier.
///
/// Only the six base emotions are ever scored; `Neutral` and `Contempt` are
/// carried through when a 7/8-class model reports them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Angry,
    Disgust,
    Fear,
    Happy,
    Sad,
    Surprise,
    Neutral,
    Contempt,
}

impl EmotionLabel {
    pub const BASE: [EmotionLabel; 6] = [
        EmotionLabel::Angry,
        EmotionLabel::Disgust,
        EmotionLabel::Fear,
        EmotionLabel::Happy,
        EmotionLabel::Sad,
        EmotionLabel::Surprise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionLabel::Angry => "angry",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Happy => "happy",
            EmotionLabel::Sad => "sad",
            EmotionLabel::Surprise => "surprise",
            EmotionLabel::Neutral => "neutral",
            EmotionLabel::Contempt => "contempt",
        }
    }

    pub fn is_scored(self) -> bool {
        Self::BASE.contains(&self)
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmotionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let label = match s.to_ascii_lowercase().as_str() {
            "angry" | "anger" => EmotionLabel::Angry,
            "disgust" | "disgusted" => EmotionLabel::Disgust,
            "fear" | "fearful" => EmotionLabel::Fear,
            "happy" | "happiness" => EmotionLabel::Happy,
            "sad" | "sadness" => EmotionLabel::Sad,
            "surprise" | "surprised" => EmotionLabel::Surprise,
            "neutral" => EmotionLabel::Neutral,
            "contempt" => EmotionLabel::Contempt,
            other => return Err(Error::UnknownLabel(other.to_string())),
        };
        Ok(label)
    }
}
