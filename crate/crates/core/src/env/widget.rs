use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geom::Rect;

/// Stable widget identifier. Survives every drift that does not remove the
/// widget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WidgetId(pub u32);

impl fmt::Display for WidgetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Button,
    TextField,
    StaticText,
    Icon,
    Modal,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Button,
        Category::TextField,
        Category::StaticText,
        Category::Icon,
        Category::Modal,
    ];

    /// Categories a detector treats as clickable affordances.
    pub fn is_actionable(self) -> bool {
        matches!(self, Category::Button | Category::Icon)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Button => "button",
            Category::TextField => "text_field",
            Category::StaticText => "static_text",
            Category::Icon => "icon",
            Category::Modal => "modal",
        }
    }

    pub fn parse(s: &str) -> Option<Category> {
        Category::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Effect {
    Submit,
    Delete,
    Cancel,
    OpenModal,
    Noop,
}

impl Effect {
    pub fn as_str(self) -> &'static str {
        match self {
            Effect::Submit => "Submit",
            Effect::Delete => "Delete",
            Effect::Cancel => "Cancel",
            Effect::OpenModal => "OpenModal",
            Effect::Noop => "Noop",
        }
    }
}

pub const STYLE_DIM: usize = 8;

/// Abstract visual appearance: eight channels in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StyleSignature(pub [f64; STYLE_DIM]);

impl StyleSignature {
    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|c| (0.0..=1.0).contains(c))
    }

    /// L1 distance divided by the channel count, in `[0, 1]`.
    pub fn normalized_l1(&self, other: &StyleSignature) -> f64 {
        let sum: f64 = self.0.iter().zip(other.0.iter()).map(|(a, b)| (a - b).abs()).sum();
        sum / STYLE_DIM as f64
    }

    pub fn similarity(&self, other: &StyleSignature) -> f64 {
        1.0 - self.normalized_l1(other)
    }
}

fn default_true() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

/// Ground-truth GUI element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Widget {
    pub id: WidgetId,
    pub bbox: Rect,
    #[serde(default)]
    pub label: String,
    pub style: StyleSignature,
    pub category: Category,
    #[serde(default = "default_effect")]
    pub effect: Effect,
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub enabled: bool,
    #[serde(default)]
    pub z_order: i32,
    /// What the widget looks like to an object detector when that differs
    /// from what it is (a coloured panel holding plain text reads as a button).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub looks_like: Option<Category>,
    /// Dialog inserted when an `OpenModal` widget is clicked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opens: Option<Box<Widget>>,
}

fn default_effect() -> Effect {
    Effect::Noop
}

impl Widget {
    pub fn new(id: u32, bbox: Rect, label: &str, category: Category, style: StyleSignature) -> Self {
        Self {
            id: WidgetId(id),
            bbox,
            label: label.to_string(),
            style,
            category,
            effect: Effect::Noop,
            enabled: true,
            z_order: 0,
            looks_like: None,
            opens: None,
        }
    }

    pub fn with_effect(mut self, effect: Effect) -> Self {
        self.effect = effect;
        self
    }

    pub fn with_z(mut self, z: i32) -> Self {
        self.z_order = z;
        self
    }

    /// Category as seen by the detector.
    pub fn visual_category(&self) -> Category {
        self.looks_like.unwrap_or(self.category)
    }
}
