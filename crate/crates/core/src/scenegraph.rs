//! Semantic scene graph: an immutable, queryable world model built from the
//! hierarchy, and precondition verification over it.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Category, Effect};
use crate::fusion::Affordance;
use crate::geom::Rect;
use crate::hierarchy::{resolve, NodeKind, RelativeAddress, UINode};

/// A label binds to a field at most this many label-heights away.
pub const LABEL_DISTANCE_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Contains,
    AlignedRow,
    AlignedColumn,
    Labels,
    LeftOf,
    Above,
}

impl EdgeKind {
    const ALL: [EdgeKind; 6] = [
        EdgeKind::Contains,
        EdgeKind::AlignedRow,
        EdgeKind::AlignedColumn,
        EdgeKind::Labels,
        EdgeKind::LeftOf,
        EdgeKind::Above,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Contains => "contains",
            EdgeKind::AlignedRow => "aligned_row",
            EdgeKind::AlignedColumn => "aligned_column",
            EdgeKind::Labels => "labels",
            EdgeKind::LeftOf => "left_of",
            EdgeKind::Above => "above",
        }
    }

    pub fn parse(s: &str) -> Option<EdgeKind> {
        EdgeKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneNode {
    pub id: u32,
    pub kind: NodeKind,
    pub bbox: Rect,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Effect implied by the visible text, from the plan's intent lexicon.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effect: Option<Effect>,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub uncertain: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: u32,
    pub to: u32,
    pub kind: EdgeKind,
}

/// Built once per frame and never mutated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    nodes: Vec<SceneNode>,
    edges: Vec<Edge>,
    built_at_revision: u64,
}

fn node_for(n: &UINode, affordances: &[Affordance], lexicon: &BTreeMap<String, Effect>) -> SceneNode {
    let source = n.affordance_ref.and_then(|id| affordances.iter().find(|a| a.id == id));
    SceneNode {
        id: n.node_id,
        kind: n.kind,
        bbox: n.bbox,
        category: n.category,
        text: n.text.clone(),
        label: n.label_str().map(String::from),
        effect: n.text.as_ref().and_then(|t| lexicon.get(t)).copied(),
        uncertain: source.is_some_and(|a| a.uncertain),
    }
}

fn nearest_labelled(label: &UINode, leaves: &[&UINode]) -> Option<u32> {
    let bound = LABEL_DISTANCE_FACTOR * f64::from(label.bbox.h);
    let s = label.bbox;
    leaves
        .iter()
        .filter(|t| {
            t.node_id != label.node_id
                && matches!(t.category, Some(Category::TextField | Category::Button | Category::Icon))
        })
        .filter_map(|t| {
            let b = t.bbox;
            let right_gap = (b.x >= s.right() && s.vertical_overlap_ratio(&b) > 0.0).then(|| b.x - s.right());
            let below_gap = (b.y >= s.bottom() && s.x_interval_iou(&b) > 0.0).then(|| b.y - s.bottom());
            let gap = match (right_gap, below_gap) {
                (Some(r), Some(d)) => r.min(d),
                (Some(g), None) | (None, Some(g)) => g,
                (None, None) => return None,
            };
            (f64::from(gap) <= bound).then_some((gap, t.node_id))
        })
        .min()
        .map(|(_, id)| id)
}

/// Builds the graph for one frame. `intent_lexicon` maps visible words to
/// the effect a plan author associates with them.
pub fn build_graph(
    root: &UINode,
    affordances: &[Affordance],
    intent_lexicon: &BTreeMap<String, Effect>,
    revision: u64,
) -> SceneGraph {
    let all = root.walk();
    let mut nodes: Vec<SceneNode> = all.iter().map(|n| node_for(n, affordances, intent_lexicon)).collect();
    nodes.sort_by_key(|n| n.id);

    let mut edges = BTreeSet::new();
    for n in &all {
        for c in &n.children {
            edges.insert(Edge { from: n.node_id, to: c.node_id, kind: EdgeKind::Contains });
        }
        if n.kind == NodeKind::Row {
            for (i, a) in n.children.iter().enumerate() {
                for b in &n.children[i + 1..] {
                    edges.insert(Edge { from: a.node_id, to: b.node_id, kind: EdgeKind::AlignedRow });
                }
            }
        }
        if n.kind == NodeKind::Table {
            for pair in n.children.windows(2) {
                for (a, b) in pair[0].children.iter().zip(&pair[1].children) {
                    edges.insert(Edge { from: a.node_id, to: b.node_id, kind: EdgeKind::AlignedColumn });
                }
            }
        }
        for a in &n.children {
            for b in &n.children {
                if a.node_id == b.node_id {
                    continue;
                }
                if a.bbox.right() <= b.bbox.x {
                    edges.insert(Edge { from: a.node_id, to: b.node_id, kind: EdgeKind::LeftOf });
                }
                if a.bbox.bottom() <= b.bbox.y {
                    edges.insert(Edge { from: a.node_id, to: b.node_id, kind: EdgeKind::Above });
                }
            }
        }
    }
    let leaves: Vec<&UINode> = root.leaves().collect();
    for l in leaves.iter().filter(|l| l.category == Some(Category::StaticText)) {
        if let Some(to) = nearest_labelled(l, &leaves) {
            edges.insert(Edge { from: l.node_id, to, kind: EdgeKind::Labels });
        }
    }
    SceneGraph { nodes, edges: edges.into_iter().collect(), built_at_revision: revision }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("malformed query `{0}`")]
    Malformed(String),
    #[error("unknown node {0}")]
    UnknownNode(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Query {
    FindByText { text: String },
    FindByCategory { category: Category },
    /// Nodes joined to `node` by an edge of `edge` kind, either direction.
    Neighbors { node: u32, edge: EdgeKind },
    /// Directed path along `edge` edges; returns the path, empty when none.
    PathExists { from: u32, to: u32, edge: EdgeKind },
}

impl Query {
    /// `text:<s>`, `category:<c>`, `neighbors:<id>:<edge>`,
    /// `path:<from>:<to>:<edge>`.
    pub fn parse(s: &str) -> Result<Query, QueryError> {
        let bad = || QueryError::Malformed(s.to_string());
        let (op, rest) = s.split_once(':').ok_or_else(bad)?;
        let id = |t: &str| t.parse::<u32>().map_err(|_| bad());
        let edge = |t: &str| EdgeKind::parse(t).ok_or_else(bad);
        match op {
            "text" if !rest.is_empty() => Ok(Query::FindByText { text: rest.to_string() }),
            "category" => Ok(Query::FindByCategory { category: Category::parse(rest).ok_or_else(bad)? }),
            "neighbors" => {
                let (n, e) = rest.split_once(':').ok_or_else(bad)?;
                Ok(Query::Neighbors { node: id(n)?, edge: edge(e)? })
            }
            "path" => {
                let parts: Vec<&str> = rest.split(':').collect();
                let [f, t, e] = parts.as_slice() else { return Err(bad()) };
                Ok(Query::PathExists { from: id(f)?, to: id(t)?, edge: edge(e)? })
            }
            _ => Err(bad()),
        }
    }
}

impl SceneGraph {
    pub fn nodes(&self) -> &[SceneNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn built_at_revision(&self) -> u64 {
        self.built_at_revision
    }

    pub fn node(&self, id: u32) -> Option<&SceneNode> {
        self.nodes.binary_search_by_key(&id, |n| n.id).ok().map(|i| &self.nodes[i])
    }

    pub fn edges_of(&self, kind: EdgeKind) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.kind == kind)
    }

    fn check(&self, id: u32) -> Result<(), QueryError> {
        self.node(id).map(|_| ()).ok_or(QueryError::UnknownNode(id))
    }

    pub fn query(&self, q: &Query) -> Result<Vec<u32>, QueryError> {
        match q {
            Query::FindByText { text } => {
                Ok(self.nodes.iter().filter(|n| n.text.as_deref() == Some(text)).map(|n| n.id).collect())
            }
            Query::FindByCategory { category } => {
                Ok(self.nodes.iter().filter(|n| n.category == Some(*category)).map(|n| n.id).collect())
            }
            Query::Neighbors { node, edge } => {
                self.check(*node)?;
                let mut out: Vec<u32> = self
                    .edges_of(*edge)
                    .filter_map(|e| {
                        if e.from == *node {
                            Some(e.to)
                        } else if e.to == *node {
                            Some(e.from)
                        } else {
                            None
                        }
                    })
                    .collect();
                out.sort_unstable();
                out.dedup();
                Ok(out)
            }
            Query::PathExists { from, to, edge } => {
                self.check(*from)?;
                self.check(*to)?;
                let mut prev: BTreeMap<u32, u32> = BTreeMap::new();
                let mut seen = BTreeSet::from([*from]);
                let mut queue = VecDeque::from([*from]);
                while let Some(cur) = queue.pop_front() {
                    if cur == *to {
                        let mut path = vec![cur];
                        let mut at = cur;
                        while let Some(&p) = prev.get(&at) {
                            path.push(p);
                            at = p;
                        }
                        path.reverse();
                        return Ok(path);
                    }
                    for e in self.edges_of(*edge).filter(|e| e.from == cur) {
                        if seen.insert(e.to) {
                            prev.insert(e.to, cur);
                            queue.push_back(e.to);
                        }
                    }
                }
                Ok(Vec::new())
            }
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Precondition {
    TargetEffectIs { address: RelativeAddress, effect: Effect },
    TargetEffectIsNot { address: RelativeAddress, effect: Effect },
    FieldNonEmpty { address: RelativeAddress },
    Exists { address: RelativeAddress },
    NotExists { label: String },
}

impl fmt::Display for Precondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Precondition::TargetEffectIs { address, effect } => write!(f, "effect({address}) == {}", effect.as_str()),
            Precondition::TargetEffectIsNot { address, effect } => {
                write!(f, "effect({address}) != {}", effect.as_str())
            }
            Precondition::FieldNonEmpty { address } => write!(f, "non_empty({address})"),
            Precondition::Exists { address } => write!(f, "exists({address})"),
            Precondition::NotExists { label } => write!(f, "not_exists(\"{label}\")"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub precondition: Precondition,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VerificationReport {
    pub passed: bool,
    pub violated: Vec<Violation>,
    /// Every node consulted, in order: the audit trail.
    pub queried_nodes: Vec<u32>,
}

fn describe(n: &SceneNode) -> String {
    format!(
        "node {} ({} \"{}\")",
        n.id,
        n.category.map_or(n.kind.as_str(), Category::as_str),
        n.text.as_deref().unwrap_or("")
    )
}

struct Checker<'a> {
    graph: &'a SceneGraph,
    report: VerificationReport,
}

impl Checker<'_> {
    fn violate(&mut self, p: &Precondition, explanation: String) {
        self.report.violated.push(Violation { precondition: p.clone(), explanation });
    }

    /// The field a node refers to: itself if it is a text field, otherwise
    /// the node it labels.
    fn field_of(&mut self, node: &SceneNode) -> Option<SceneNode> {
        if node.category == Some(Category::TextField) {
            return Some(node.clone());
        }
        let target = self
            .graph
            .edges_of(EdgeKind::Labels)
            .find(|e| e.from == node.id)
            .and_then(|e| self.graph.node(e.to))?
            .clone();
        self.report.queried_nodes.push(target.id);
        Some(target)
    }

    /// Evaluates `p` with its address bound to `node`.
    fn check_on(&mut self, p: &Precondition, node: &SceneNode) {
        self.report.queried_nodes.push(node.id);
        match p {
            Precondition::TargetEffectIs { effect, .. } => {
                if node.effect != Some(*effect) {
                    let got = node.effect.map_or("none", Effect::as_str);
                    self.violate(p, format!("{} has effect {got}, expected {}", describe(node), effect.as_str()));
                }
            }
            Precondition::TargetEffectIsNot { effect, .. } => {
                if node.effect == Some(*effect) {
                    self.violate(p, format!("{} has forbidden effect {}", describe(node), effect.as_str()));
                }
            }
            Precondition::FieldNonEmpty { .. } => match self.field_of(node) {
                Some(field) if field.text.as_deref().is_some_and(|t| !t.is_empty()) => {}
                Some(field) => self.violate(p, format!("{} is empty", describe(&field))),
                None => self.violate(p, format!("{} labels no field", describe(node))),
            },
            Precondition::Exists { .. } => {}
            Precondition::NotExists { .. } => unreachable!("not address-bound"),
        }
    }

    fn check_not_exists(&mut self, p: &Precondition, label: &str) {
        let hits = self.graph.query(&Query::FindByText { text: label.to_string() }).expect("total query");
        self.report.queried_nodes.extend(&hits);
        if let Some(&first) = hits.first() {
            let n = self.graph.node(first).expect("hit exists");
            self.violate(p, format!("{} is present", describe(n)));
        }
    }

    fn finish(mut self) -> VerificationReport {
        self.report.passed = self.report.violated.is_empty();
        self.report
    }
}

fn address_of(p: &Precondition) -> Option<&RelativeAddress> {
    match p {
        Precondition::TargetEffectIs { address, .. }
        | Precondition::TargetEffectIsNot { address, .. }
        | Precondition::FieldNonEmpty { address }
        | Precondition::Exists { address } => Some(address),
        Precondition::NotExists { .. } => None,
    }
}

/// Evaluates preconditions by resolving each address in `tree`. Fails
/// closed: an address that does not resolve uniquely is a violation.
pub fn verify(graph: &SceneGraph, preconditions: &[Precondition], tree: &UINode) -> VerificationReport {
    let mut c = Checker { graph, report: VerificationReport::default() };
    for p in preconditions {
        match (p, address_of(p)) {
            (Precondition::NotExists { label }, _) => c.check_not_exists(p, label),
            (_, Some(addr)) => match resolve(tree, addr) {
                Ok(leaf) => match graph.node(leaf.node_id) {
                    Some(n) => c.check_on(p, &n.clone()),
                    None => c.violate(p, format!("node {} missing from graph", leaf.node_id)),
                },
                Err(e) => c.violate(p, e.to_string()),
            },
            (_, None) => unreachable!(),
        }
    }
    c.finish()
}

/// Evaluates preconditions with every address bound to `node_id`: the
/// element a grounding is about to act on. Address-free preconditions are
/// evaluated as in [`verify`].
pub fn verify_target(graph: &SceneGraph, preconditions: &[Precondition], node_id: u32) -> VerificationReport {
    let mut c = Checker { graph, report: VerificationReport::default() };
    let node = graph.node(node_id).cloned();
    for p in preconditions {
        match (p, &node) {
            (Precondition::NotExists { label }, _) => c.check_not_exists(p, label),
            (_, Some(n)) => c.check_on(p, n),
            (_, None) => c.violate(p, format!("node {node_id} missing from graph")),
        }
    }
    c.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::StyleSignature;
    use crate::fusion::Provenance;
    use crate::hierarchy::{parse_layout, LayoutConfig};

    fn aff(id: u32, bbox: Rect, cat: Category, text: &str) -> Affordance {
        Affordance {
            id,
            bbox,
            category: cat,
            text: (!text.is_empty()).then(|| text.to_string()),
            confidence: 1.0,
            uncertain: false,
            provenance: Provenance::Fused,
            style: Some(StyleSignature([0.5; 8])),
            detection_source: None,
            text_source: None,
        }
    }

    fn lexicon() -> BTreeMap<String, Effect> {
        [("Submit", Effect::Submit), ("Delete", Effect::Delete), ("Cancel", Effect::Cancel)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    fn drifted(amount: &str) -> Vec<Affordance> {
        vec![
            aff(0, Rect::new(40, 20, 240, 30), Category::StaticText, "Invoice_Form"),
            aff(1, Rect::new(40, 100, 100, 30), Category::StaticText, "Amount"),
            aff(2, Rect::new(160, 100, 200, 30), Category::TextField, amount),
            aff(3, Rect::new(160, 200, 100, 40), Category::Button, "Delete"),
            aff(4, Rect::new(210, 200, 100, 40), Category::Button, "Submit"),
            aff(5, Rect::new(420, 200, 100, 40), Category::Button, "Cancel"),
        ]
    }

    fn build(affs: &[Affordance]) -> (UINode, SceneGraph) {
        let tree = parse_layout(affs, &LayoutConfig::for_screen(1280, 800));
        let g = build_graph(&tree, affs, &lexicon(), 1);
        (tree, g)
    }

    #[test]
    fn single_button() {
        let affs = [aff(0, Rect::new(10, 10, 50, 20), Category::Button, "OK")];
        let (_, g) = build(&affs);
        assert_eq!(g.nodes().len(), 2);
        assert_eq!(g.edges_of(EdgeKind::Contains).count(), 1);
        assert_eq!(g.edges().len(), 1);
    }

    #[test]
    fn label_binds_to_field_on_right() {
        let (tree, g) = build(&drifted("1250.00"));
        let amount = g.query(&Query::FindByText { text: "Amount".into() }).unwrap()[0];
        let field = g.query(&Query::FindByCategory { category: Category::TextField }).unwrap()[0];
        // Oracle: the only candidate within 1.5 * 30 px is the field 20 px to the right.
        let labels: Vec<_> = g.edges_of(EdgeKind::Labels).collect();
        assert_eq!(labels.len(), 1);
        assert_eq!((labels[0].from, labels[0].to), (amount, field));
        assert_eq!(tree.find(field).unwrap().text.as_deref(), Some("1250.00"));
    }

    #[test]
    fn trap_shares_row_with_submit() {
        let (_, g) = build(&drifted("1250.00"));
        let submit = g.query(&Query::FindByText { text: "Submit".into() }).unwrap();
        let delete = g.query(&Query::FindByText { text: "Delete".into() }).unwrap();
        assert_eq!(submit.len(), 1);
        assert_eq!(delete.len(), 1);
        assert_ne!(submit, delete);
        let row = g.query(&Query::Neighbors { node: submit[0], edge: EdgeKind::AlignedRow }).unwrap();
        assert!(row.contains(&delete[0]));
    }

    #[test]
    fn contains_path_to_field() {
        let (_, g) = build(&drifted("1250.00"));
        let field = g.query(&Query::FindByCategory { category: Category::TextField }).unwrap()[0];
        assert!(!g.query(&Query::PathExists { from: 0, to: field, edge: EdgeKind::Contains }).unwrap().is_empty());
        assert!(g.query(&Query::PathExists { from: field, to: 0, edge: EdgeKind::Contains }).unwrap().is_empty());
    }

    #[test]
    fn contains_edges_match_tree() {
        let (tree, g) = build(&drifted("1250.00"));
        let mut tree_edges = tree.edges();
        tree_edges.sort_unstable();
        let mut graph_edges: Vec<_> = g.edges_of(EdgeKind::Contains).map(|e| (e.from, e.to)).collect();
        graph_edges.sort_unstable();
        assert_eq!(tree_edges, graph_edges);
    }

    #[test]
    fn query_parsing() {
        assert_eq!(Query::parse("text:Submit").unwrap(), Query::FindByText { text: "Submit".into() });
        assert_eq!(
            Query::parse("path:0:4:contains").unwrap(),
            Query::PathExists { from: 0, to: 4, edge: EdgeKind::Contains }
        );
        for bad in ["", "text:", "category:widget", "neighbors:x:contains", "path:1:2", "nope:1"] {
            assert!(Query::parse(bad).is_err(), "{bad}");
        }
        let (_, g) = build(&drifted("1"));
        assert_eq!(g.query(&Query::Neighbors { node: 999, edge: EdgeKind::Labels }), Err(QueryError::UnknownNode(999)));
    }

    #[test]
    fn verification_cases() {
        let (tree, g) = build(&drifted("1250.00"));
        let not_delete = Precondition::TargetEffectIsNot {
            address: RelativeAddress::new("Submit", &["Invoice_Form"]),
            effect: Effect::Delete,
        };
        let report = verify(&g, std::slice::from_ref(&not_delete), &tree);
        assert!(report.passed, "{report:?}");
        assert!(!report.queried_nodes.is_empty());

        let trap = g.query(&Query::FindByText { text: "Delete".into() }).unwrap()[0];
        let report = verify_target(&g, std::slice::from_ref(&not_delete), trap);
        assert!(!report.passed);
        assert!(report.violated[0].explanation.contains("Delete"));

        let (tree, g) = build(&drifted(""));
        let report = verify(&g, &[Precondition::FieldNonEmpty { address: RelativeAddress::new("Amount", &[]) }], &tree);
        assert!(!report.passed);
    }

    #[test]
    fn unresolvable_address_fails_closed() {
        let (tree, g) = build(&drifted("1"));
        let p = Precondition::Exists { address: RelativeAddress::new("Approve", &[]) };
        let r = verify(&g, &[p], &tree);
        assert!(!r.passed);
        let r = verify(&g, &[Precondition::NotExists { label: "Delete".into() }], &tree);
        assert!(!r.passed);
    }

    #[test]
    fn rebuild_is_identical() {
        let affs = drifted("1250.00");
        let (_, a) = build(&affs);
        let (_, b) = build(&affs);
        assert_eq!(a.to_json_pretty(), b.to_json_pretty());
    }
}
