//! Frames of the classifier wire protocol.
//!
//! One JSON object per line, UTF-8, `\n` terminated, compact separators.
//! See `protocol/PROTOCOL.md` at the repository root for the full contract.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::Normalization;
use crate::error::{Error, Result};
use crate::render::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Frame {
    Hello {
        model: String,
    },
    Ready {
        labels: Vec<String>,
        input: [u32; 2],
        normalization: Normalization,
    },
    Classify {
        id: u64,
        width: u32,
        height: u32,
        /// Base64 (standard alphabet, padded) of raw RGB8, row-major.
        pixels: String,
    },
    Result {
        id: u64,
        activations: BTreeMap<String, f64>,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        message: String,
    },
}

impl Frame {
    pub fn classify(id: u64, image: &Image) -> Self {
        Frame::Classify { id, width: image.width(), height: image.height(), pixels: B64.encode(image.as_bytes()) }
    }

    pub fn error(id: Option<u64>, message: impl Into<String>) -> Self {
        Frame::Error { id, message: message.into() }
    }

    /// Serialized line including the trailing newline.
    pub fn encode(&self) -> String {
        let mut line = serde_json::to_string(self).expect("frames always serialize");
        line.push('\n');
        line
    }

    pub fn decode(line: &str) -> Result<Self> {
        serde_json::from_str(line.trim_end_matches(['\n', '\r']))
            .map_err(|e| Error::Protocol(format!("malformed frame: {e}")))
    }

    /// Request id carried by the frame, if any.
    pub fn id(&self) -> Option<u64> {
        match self {
            Frame::Classify { id, .. } | Frame::Result { id, .. } => Some(*id),
            Frame::Error { id, .. } => *id,
            _ => None,
        }
    }
}

/// Decode the image carried by a `classify` frame.
pub fn decode_pixels(width: u32, height: u32, pixels: &str) -> Result<Image> {
    let bytes = B64.decode(pixels).map_err(|e| Error::Protocol(format!("bad base64 pixels: {e}")))?;
    Image::new(width, height, bytes).map_err(|e| Error::Protocol(e.to_string()))
}
