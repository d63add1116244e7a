#![allow(dead_code)]

use std::path::{Path, PathBuf};

use proptest::prelude::*;
use visagent::env::{Category, Effect, Environment, Screen, StyleSignature, Widget};
use visagent::fusion::{fuse_frame, Affordance, FusionConfig};
use visagent::geom::Rect;
use visagent::hierarchy::{parse_layout, LayoutConfig, UINode};
use visagent::perception::{detect_widgets, read_text, NoiseModel};
use visagent::scenario::Scenario;

pub const PALETTE: [StyleSignature; 5] = [
    StyleSignature([0.1, 0.35, 0.9, 0.8, 0.5, 0.5, 0.2, 0.6]),
    StyleSignature([0.15, 0.8, 0.3, 0.45, 0.5, 0.5, 0.55, 0.6]),
    StyleSignature([0.9, 0.15, 0.1, 0.85, 0.5, 0.5, 0.25, 0.6]),
    StyleSignature([0.6, 0.6, 0.6, 0.5, 0.5, 0.5, 0.5, 0.5]),
    StyleSignature([0.95, 0.95, 0.95, 0.2, 0.9, 0.9, 0.1, 0.9]),
];

pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn fixture(name: &str) -> Scenario {
    Scenario::load(&fixture_path(name)).expect("fixture loads")
}

/// Shape of a generated form screen.
#[derive(Debug, Clone)]
pub struct FormSpec {
    pub origin: (i32, i32),
    pub rows: Vec<(i32, i32)>,
    pub buttons: Vec<(usize, usize)>,
    pub dialog: Option<(i32, usize)>,
    pub styles: Vec<usize>,
}

const BUTTON_WORDS: [&str; 5] = ["Submit", "Cancel", "Save", "OK", "Delete"];

pub fn form_spec() -> impl Strategy<Value = FormSpec> {
    (
        (0..300i32, 0..150i32),
        prop::collection::vec((60..140i32, 120..260i32), 1..5),
        prop::collection::vec((0..BUTTON_WORDS.len(), 0..PALETTE.len()), 0..4),
        prop::option::of((0..200i32, 0..PALETTE.len())),
        prop::collection::vec(0..PALETTE.len(), 8),
    )
        .prop_map(|(origin, rows, buttons, dialog, styles)| FormSpec { origin, rows, buttons, dialog, styles })
}

/// Builds a 2000x1000 screen whose content fits in the left 1400 px, so any
/// horizontal shift up to 500 px stays on screen.
pub fn build_form(spec: &FormSpec) -> Screen {
    let (x0, y0) = spec.origin;
    let style = |i: usize| PALETTE[spec.styles[i % spec.styles.len()]];
    let mut widgets = vec![Widget::new(1, Rect::new(x0, y0, 220, 30), "Heading", Category::StaticText, style(0))];
    let mut id = 2;
    let mut y = y0 + 60;
    for (i, (label_w, field_w)) in spec.rows.iter().enumerate() {
        widgets.push(Widget::new(id, Rect::new(x0, y, *label_w, 30), &format!("Field_{i}"), Category::StaticText, style(1)));
        widgets.push(Widget::new(
            id + 1,
            Rect::new(x0 + label_w + 20, y, *field_w, 30),
            &format!("{}", 100 * (i + 1)),
            Category::TextField,
            style(2),
        ));
        id += 2;
        y += 50;
    }
    let mut x = x0;
    let mut used = Vec::new();
    for (word, s) in &spec.buttons {
        let word = BUTTON_WORDS[*word];
        if used.contains(&word) {
            continue;
        }
        used.push(word);
        let effect = match word {
            "Submit" | "Save" | "OK" => Effect::Submit,
            "Cancel" => Effect::Cancel,
            _ => Effect::Delete,
        };
        widgets.push(Widget::new(id, Rect::new(x, y + 20, 100, 40), word, Category::Button, PALETTE[*s]).with_effect(effect));
        id += 1;
        x += 130;
    }
    if let Some((dx, s)) = spec.dialog {
        let dlg = Rect::new(x0 + 600 + dx, y0 + 40, 360, 200);
        widgets.push(Widget::new(id, dlg, "", Category::Modal, PALETTE[4]).with_z(5));
        widgets.push(
            Widget::new(id + 1, Rect::new(dlg.x + 20, dlg.y + 20, 200, 30), "Confirm_Action", Category::StaticText, style(3))
                .with_z(6),
        );
        widgets.push(
            Widget::new(id + 2, Rect::new(dlg.x + 20, dlg.y + 130, 100, 40), "Proceed", Category::Button, PALETTE[s])
                .with_effect(Effect::Submit)
                .with_z(6),
        );
        widgets.push(
            Widget::new(id + 3, Rect::new(dlg.x + 150, dlg.y + 130, 100, 40), "Abort", Category::Button, PALETTE[3])
                .with_effect(Effect::Cancel)
                .with_z(6),
        );
    }
    Screen::new(2000, 1000, widgets).expect("generated screen is valid")
}

/// Zero-noise perception, fusion, and parse of a screen.
pub fn perceive(screen: &Screen, fusion: &FusionConfig) -> (Vec<Affordance>, UINode) {
    let obs = Environment::new(screen.clone(), 0).observe();
    let noise = NoiseModel::zero();
    let affs = fuse_frame(&detect_widgets(&obs, &noise, 1), &read_text(&obs, &noise, 2), fusion);
    let tree = parse_layout(&affs, &LayoutConfig::for_screen(screen.width, screen.height));
    (affs, tree)
}
