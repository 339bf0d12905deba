//! JSON payloads for frames, shared by the command line and the service so
//! that both emit identical bytes for identical inputs.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::image::{DpcFrame, ImageFrame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePayload {
    pub dataset: String,
    pub label: String,
    pub width: usize,
    pub height: usize,
    pub bin: usize,
    pub exposure: f64,
    pub total: u64,
    pub max: u32,
    pub mean: f64,
    /// Base-64 of the 16-bit binary graymap (PGM) of the counts.
    pub pgm_base64: String,
}

impl FramePayload {
    pub fn new(frame: &ImageFrame) -> Self {
        let total = frame.total();
        FramePayload {
            dataset: frame.dataset.clone(),
            label: frame.label.clone(),
            width: frame.width,
            height: frame.height,
            bin: frame.bin,
            exposure: frame.exposure,
            total,
            max: frame.max(),
            mean: total as f64 / frame.counts.len() as f64,
            pgm_base64: STANDARD.encode(frame.to_graymap().to_bytes()),
        }
    }

    pub fn pgm_bytes(&self) -> Result<Vec<u8>, base64::DecodeError> {
        STANDARD.decode(&self.pgm_base64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpcPayload {
    pub label_a: String,
    pub label_b: String,
    pub width: usize,
    pub height: usize,
    pub min_counts: u32,
    pub valid_pixels: usize,
    /// Row-major values; `null` where the pixel had too few counts.
    pub values: Vec<Option<f64>>,
    /// Base-64 of the 8-bit visualisation graymap ([-2, 2] onto [0, 255]).
    pub pgm_base64: String,
}

impl DpcPayload {
    pub fn new(frame: &DpcFrame) -> Self {
        DpcPayload {
            label_a: frame.label_a.clone(),
            label_b: frame.label_b.clone(),
            width: frame.width,
            height: frame.height,
            min_counts: frame.min_counts,
            valid_pixels: frame.valid.iter().filter(|v| **v).count(),
            values: frame.values.iter().zip(&frame.valid).map(|(&v, &ok)| ok.then_some(v)).collect(),
            pgm_base64: STANDARD.encode(frame.to_graymap().to_bytes()),
        }
    }
}

/// Pretty JSON with a trailing newline, the form written to disk and served.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("payloads serialise");
    s.push('\n');
    s
}
