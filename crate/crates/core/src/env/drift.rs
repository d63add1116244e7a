//! UI drift: perturbations applied to a ground-truth screen between records.

use serde::{Deserialize, Serialize};

use super::{EnvError, Screen, StyleSignature, Widget, WidgetId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DriftKind {
    /// Moves the listed widgets (all widgets when `targets` is absent).
    Translate {
        dx: i32,
        dy: i32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        targets: Option<Vec<WidgetId>>,
    },
    Restyle {
        target: WidgetId,
        style: StyleSignature,
    },
    InsertTrap {
        widget: Widget,
    },
    OpenPopup {
        widget: Widget,
    },
    Composite {
        parts: Vec<DriftKind>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftTrigger {
    /// Fires before the record with this zero-based index.
    Episode(u64),
    /// Fires independently before each record with this probability.
    Bernoulli(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftEvent {
    pub kind: DriftKind,
    pub trigger: DriftTrigger,
}

impl DriftKind {
    pub fn translate_all(dx: i32, dy: i32) -> Self {
        DriftKind::Translate { dx, dy, targets: None }
    }

    pub fn translate(dx: i32, dy: i32, targets: &[WidgetId]) -> Self {
        DriftKind::Translate { dx, dy, targets: Some(targets.to_vec()) }
    }
}

/// Applies `kind` to a copy of `screen`. The whole drift is one mutation, so
/// the revision advances by exactly one.
pub fn apply_drift(screen: &Screen, kind: &DriftKind) -> Result<Screen, EnvError> {
    let mut next = screen.clone();
    apply_in_place(&mut next, kind)?;
    next.widgets.sort_by_key(|w| w.id);
    next.validate()?;
    next.revision += 1;
    Ok(next)
}

fn apply_in_place(screen: &mut Screen, kind: &DriftKind) -> Result<(), EnvError> {
    match kind {
        DriftKind::Translate { dx, dy, targets } => {
            if let Some(ids) = targets {
                for id in ids {
                    if screen.widget(*id).is_none() {
                        return Err(EnvError::DriftTargetMissing(*id));
                    }
                }
            }
            for w in &mut screen.widgets {
                let hit = targets.as_ref().is_none_or(|ids| ids.contains(&w.id));
                if hit {
                    w.bbox = w.bbox.translated(*dx, *dy);
                }
            }
        }
        DriftKind::Restyle { target, style } => {
            let w = screen
                .widgets
                .iter_mut()
                .find(|w| w.id == *target)
                .ok_or(EnvError::DriftTargetMissing(*target))?;
            w.style = *style;
        }
        DriftKind::InsertTrap { widget } | DriftKind::OpenPopup { widget } => {
            if screen.widget(widget.id).is_some() {
                return Err(EnvError::IdCollision(widget.id));
            }
            screen.widgets.push(widget.clone());
        }
        DriftKind::Composite { parts } => {
            for p in parts {
                apply_in_place(screen, p)?;
            }
        }
    }
    Ok(())
}
