//! Seeded sensor simulators: a UI-object detector and an OCR engine.
//!
//! Both read the renderable facts of an [`Observation`] through a
//! [`NoiseModel`] and emit the two parallel streams the fusion layer
//! consumes. Output order is canonical so identical inputs give
//! byte-identical outputs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::env::{Category, Observation, StyleSignature, WidgetId, STYLE_DIM};
use crate::geom::Rect;
use crate::rng;

/// Upper bound on the confidence of a spurious detection.
pub const FALSE_POSITIVE_CONFIDENCE_CAP: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub bbox: Rect,
    pub category: Category,
    pub confidence: f64,
    /// Appearance sampled from the detected region; what template matching
    /// compares against.
    pub style: StyleSignature,
    /// Ground-truth link for test oracles. Policies never read it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_widget: Option<WidgetId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextBox {
    pub bbox: Rect,
    pub text: String,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_widget: Option<WidgetId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub jitter_sigma: f64,
    pub miss_prob: f64,
    /// Expected spurious detector boxes per frame.
    pub false_positive_rate: f64,
    pub misread_prob: f64,
    pub confidence_floor: f64,
    pub confidence_ceiling: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            jitter_sigma: 2.0,
            miss_prob: 0.02,
            false_positive_rate: 0.1,
            misread_prob: 0.02,
            confidence_floor: 0.85,
            confidence_ceiling: 1.0,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("invalid noise model: {0}")]
pub struct NoiseModelError(&'static str);

impl NoiseModel {
    /// Perfect sensors.
    pub fn zero() -> Self {
        Self {
            jitter_sigma: 0.0,
            miss_prob: 0.0,
            false_positive_rate: 0.0,
            misread_prob: 0.0,
            confidence_floor: 1.0,
            confidence_ceiling: 1.0,
        }
    }

    /// Pixel distance by which a detected edge can plausibly be off.
    pub fn edge_clearance(&self) -> i32 {
        (4.0 * self.jitter_sigma).ceil() as i32
    }

    pub fn validate(&self) -> Result<(), NoiseModelError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(NoiseModelError("jitter_sigma must be >= 0"));
        }
        if !unit(self.miss_prob) || !unit(self.misread_prob) {
            return Err(NoiseModelError("probabilities must lie in [0, 1]"));
        }
        if !(self.false_positive_rate >= 0.0 && self.false_positive_rate.is_finite()) {
            return Err(NoiseModelError("false_positive_rate must be >= 0"));
        }
        if !unit(self.confidence_floor)
            || !unit(self.confidence_ceiling)
            || self.confidence_floor > self.confidence_ceiling
        {
            return Err(NoiseModelError("confidence bounds must satisfy 0 <= floor <= ceiling <= 1"));
        }
        Ok(())
    }
}

fn sample_confidence(rng: &mut ChaCha8Rng, noise: &NoiseModel) -> f64 {
    if noise.confidence_floor >= noise.confidence_ceiling {
        noise.confidence_floor
    } else {
        rng.random_range(noise.confidence_floor..=noise.confidence_ceiling)
    }
}

fn jitter(rng: &mut ChaCha8Rng, noise: &NoiseModel, bbox: Rect, bounds: Rect) -> Rect {
    if noise.jitter_sigma == 0.0 {
        return bbox;
    }
    let normal = Normal::new(0.0, noise.jitter_sigma).expect("sigma validated");
    let mut d = || normal.sample(rng).round() as i32;
    let x1 = (bbox.x + d()).clamp(0, bounds.w - 1);
    let y1 = (bbox.y + d()).clamp(0, bounds.h - 1);
    let x2 = (bbox.right() + d()).clamp(x1 + 1, bounds.w);
    let y2 = (bbox.bottom() + d()).clamp(y1 + 1, bounds.h);
    Rect::new(x1, y1, x2 - x1, y2 - y1)
}

fn sample_false_positives(
    rng: &mut ChaCha8Rng,
    noise: &NoiseModel,
    bounds: Rect,
) -> Vec<DetectionBox> {
    if noise.false_positive_rate <= 0.0 {
        return Vec::new();
    }
    let count = Poisson::new(noise.false_positive_rate).expect("rate validated").sample(rng) as usize;
    const FP_CATEGORIES: [Category; 4] =
        [Category::Button, Category::TextField, Category::Icon, Category::Modal];
    (0..count)
        .map(|_| {
            let w = rng.random_range(20..=160).min(bounds.w);
            let h = rng.random_range(16..=48).min(bounds.h);
            let x = rng.random_range(0..=bounds.w - w);
            let y = rng.random_range(0..=bounds.h - h);
            let category = FP_CATEGORIES[rng.random_range(0..FP_CATEGORIES.len())];
            let confidence = sample_confidence(rng, noise).min(FALSE_POSITIVE_CONFIDENCE_CAP);
            let mut style = [0.0; STYLE_DIM];
            for c in &mut style {
                *c = rng.random_range(0.0..=1.0);
            }
            DetectionBox {
                bbox: Rect::new(x, y, w, h),
                category,
                confidence,
                style: StyleSignature(style),
                source_widget: None,
            }
        })
        .collect()
}

/// Widget detector. Never reports plain text regions; it detects widgets,
/// not words.
pub fn detect_widgets(obs: &Observation, noise: &NoiseModel, rng_seed: u64) -> Vec<DetectionBox> {
    let mut rng = rng::stream(rng_seed, &[], "detector");
    let bounds = obs.bounds();
    let mut out = Vec::new();
    for w in obs.widgets() {
        let category = w.visual_category();
        if category == Category::StaticText {
            continue;
        }
        if noise.miss_prob > 0.0 && rng.random_bool(noise.miss_prob) {
            continue;
        }
        let bbox = jitter(&mut rng, noise, w.bbox, bounds);
        let confidence = sample_confidence(&mut rng, noise);
        out.push(DetectionBox { bbox, category, confidence, style: w.style, source_widget: Some(w.id) });
    }
    out.extend(sample_false_positives(&mut rng, noise, bounds));
    out.sort_by(|a, b| (a.bbox, a.source_widget).cmp(&(b.bbox, b.source_widget)));
    out
}

/// Drops or replaces one character, chosen from `rng`. The result always
/// differs from the input.
pub fn corrupt_text(text: &str, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = text.chars().collect();
    if chars.is_empty() {
        return String::new();
    }
    let pos = rng.random_range(0..chars.len());
    if rng.random_bool(0.5) {
        chars.remove(pos);
    } else {
        let original = chars[pos];
        let alphabet: Vec<char> = ('a'..='z').filter(|c| *c != original).collect();
        chars[pos] = alphabet[rng.random_range(0..alphabet.len())];
    }
    chars.into_iter().collect()
}

/// OCR engine: one text box per labelled widget, whatever its category.
pub fn read_text(obs: &Observation, noise: &NoiseModel, rng_seed: u64) -> Vec<TextBox> {
    let mut rng = rng::stream(rng_seed, &[], "ocr");
    let bounds = obs.bounds();
    let mut out = Vec::new();
    for w in obs.widgets() {
        if w.label.is_empty() {
            continue;
        }
        if noise.miss_prob > 0.0 && rng.random_bool(noise.miss_prob) {
            continue;
        }
        let bbox = jitter(&mut rng, noise, w.bbox, bounds);
        let confidence = sample_confidence(&mut rng, noise);
        let text = if noise.misread_prob > 0.0 && rng.random_bool(noise.misread_prob) {
            corrupt_text(&w.label, &mut rng)
        } else {
            w.label.clone()
        };
        out.push(TextBox { bbox, text, confidence, source_widget: Some(w.id) });
    }
    out.sort_by(|a, b| (a.bbox, a.source_widget).cmp(&(b.bbox, b.source_widget)));
    out
}
