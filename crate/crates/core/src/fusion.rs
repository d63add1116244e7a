//! Hybrid affordance integration.
//!
//! The detector and OCR streams are projected onto one coordinate plane,
//! aligned by greedy maximum-IoU matching (with a containment override for
//! text sitting inside a widget), and each alignment group is arbitrated
//! into a single [`Affordance`]. Cross-modal disagreement lowers confidence
//! and marks the affordance `uncertain`, which the runtime answers with a
//! hover instead of a click.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::env::{Category, StyleSignature, WidgetId};
use crate::geom::Rect;
use crate::perception::{DetectionBox, TextBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    VisionOnly,
    TextOnly,
    Fused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affordance {
    pub id: u32,
    pub bbox: Rect,
    pub category: Category,
    pub text: Option<String>,
    pub confidence: f64,
    pub uncertain: bool,
    pub provenance: Provenance,
    /// Appearance of the detected region; absent for text-only entities.
    pub style: Option<StyleSignature>,
    /// Ground-truth links of the contributing boxes, for oracles only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_source: Option<WidgetId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_source: Option<WidgetId>,
}

impl Affordance {
    pub fn text_or_empty(&self) -> &str {
        self.text.as_deref().unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub iou_threshold: f64,
    pub downgrade_factor: f64,
    /// Words that name an action a widget can perform.
    pub actionable_lexicon: BTreeSet<String>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            downgrade_factor: 0.5,
            actionable_lexicon: ["Submit", "Save", "OK", "Cancel", "Delete"]
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }
}

/// One alignment group: a matched pair or a singleton from either stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentGroup<'a> {
    pub detection: Option<&'a DetectionBox>,
    pub text: Option<&'a TextBox>,
    pub iou: f64,
}

fn cmp_detection(a: &DetectionBox, b: &DetectionBox) -> Ordering {
    a.bbox
        .cmp(&b.bbox)
        .then(a.category.cmp(&b.category))
        .then(a.confidence.total_cmp(&b.confidence))
        .then_with(|| {
            a.style.0.iter().zip(b.style.0.iter()).fold(Ordering::Equal, |acc, (x, y)| acc.then(x.total_cmp(y)))
        })
        .then(a.source_widget.cmp(&b.source_widget))
}

fn cmp_text(a: &TextBox, b: &TextBox) -> Ordering {
    a.bbox
        .cmp(&b.bbox)
        .then_with(|| a.text.cmp(&b.text))
        .then(a.confidence.total_cmp(&b.confidence))
        .then(a.source_widget.cmp(&b.source_widget))
}

/// Greedy one-to-one matching in descending IoU order. A pair is eligible
/// when its IoU reaches `iou_threshold` or the text box lies fully inside
/// the detection box. Unmatched boxes become singletons.
///
/// Groups are returned pairs first (in matching order), then detection
/// singletons, then text singletons, each in input order.
pub fn align<'a>(
    detections: &'a [DetectionBox],
    texts: &'a [TextBox],
    iou_threshold: f64,
) -> Vec<AlignmentGroup<'a>> {
    let mut candidates = Vec::new();
    for (i, d) in detections.iter().enumerate() {
        for (j, t) in texts.iter().enumerate() {
            let iou = d.bbox.iou(&t.bbox);
            if iou >= iou_threshold || d.bbox.contains_rect(&t.bbox) {
                candidates.push((iou, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut det_used = vec![false; detections.len()];
    let mut text_used = vec![false; texts.len()];
    let mut groups = Vec::new();
    for (iou, i, j) in candidates {
        if det_used[i] || text_used[j] {
            continue;
        }
        det_used[i] = true;
        text_used[j] = true;
        groups.push(AlignmentGroup { detection: Some(&detections[i]), text: Some(&texts[j]), iou });
    }
    for (i, d) in detections.iter().enumerate() {
        if !det_used[i] {
            groups.push(AlignmentGroup { detection: Some(d), text: None, iou: 0.0 });
        }
    }
    for (j, t) in texts.iter().enumerate() {
        if !text_used[j] {
            groups.push(AlignmentGroup { detection: None, text: Some(t), iou: 0.0 });
        }
    }
    groups
}

/// Resolves one alignment group into an affordance (with `id` 0; ids are
/// assigned by [`fuse_frame`]).
///
/// Agreement keeps the weakest source confidence. A conflict multiplies it
/// by `downgrade_factor` and sets `uncertain`. Conflicts are: an actionable
/// detection whose paired text is not in the actionable lexicon, a button
/// with no text at all, or actionable text with no widget under it.
pub fn arbitrate(group: &AlignmentGroup<'_>, config: &FusionConfig) -> Affordance {
    let lexical = |t: &str| config.actionable_lexicon.contains(t);
    let (bbox, category, text, confidence, conflict, provenance, style) =
        match (group.detection, group.text) {
            (Some(d), Some(t)) => (
                d.bbox,
                d.category,
                Some(t.text.clone()),
                d.confidence.min(t.confidence),
                d.category.is_actionable() && !lexical(&t.text),
                Provenance::Fused,
                Some(d.style),
            ),
            (Some(d), None) => (
                d.bbox,
                d.category,
                None,
                d.confidence,
                d.category == Category::Button,
                Provenance::VisionOnly,
                Some(d.style),
            ),
            (None, Some(t)) => (
                t.bbox,
                Category::StaticText,
                Some(t.text.clone()),
                t.confidence,
                lexical(&t.text),
                Provenance::TextOnly,
                None,
            ),
            (None, None) => unreachable!("alignment groups are never empty"),
        };
    let confidence = if conflict { confidence * config.downgrade_factor } else { confidence };
    Affordance {
        id: 0,
        bbox,
        category,
        text,
        confidence: confidence.clamp(0.0, 1.0),
        uncertain: conflict,
        provenance,
        style,
        detection_source: group.detection.and_then(|d| d.source_widget),
        text_source: group.text.and_then(|t| t.source_widget),
    }
}

fn cmp_affordance(a: &Affordance, b: &Affordance) -> Ordering {
    a.bbox
        .cmp(&b.bbox)
        .then_with(|| a.text.cmp(&b.text))
        .then(a.category.cmp(&b.category))
        .then(a.provenance.cmp(&b.provenance))
        .then(a.confidence.total_cmp(&b.confidence))
}

/// Aligns and arbitrates one frame. The result does not depend on the order
/// of the input lists.
pub fn fuse_frame(detections: &[DetectionBox], texts: &[TextBox], config: &FusionConfig) -> Vec<Affordance> {
    let mut dets = detections.to_vec();
    dets.sort_by(cmp_detection);
    let mut txts = texts.to_vec();
    txts.sort_by(cmp_text);
    let mut out: Vec<Affordance> =
        align(&dets, &txts, config.iou_threshold).iter().map(|g| arbitrate(g, config)).collect();
    out.sort_by(cmp_affordance);
    for (i, a) in out.iter_mut().enumerate() {
        a.id = i as u32;
    }
    out
}
