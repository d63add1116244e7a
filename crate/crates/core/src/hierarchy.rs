//! Visual hierarchy synthesis.
//!
//! Turns the flat affordance list into a tree using two grouping rules:
//! containment (a box inside another becomes its child, the smallest
//! container wins) and alignment (vertically overlapping siblings form a
//! row, stacked rows with matching columns form a table). A container that
//! holds both a text field and a button is a form; modal widgets root their
//! own subtree. Containers take their name from the top-left plain-text
//! child, which is what relative addresses refer to.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Category;
use crate::fusion::Affordance;
use crate::geom::{bounding, Rect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Root,
    Form,
    Table,
    Row,
    Modal,
    Group,
    Leaf,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Root => "root",
            NodeKind::Form => "form",
            NodeKind::Table => "table",
            NodeKind::Row => "row",
            NodeKind::Modal => "modal",
            NodeKind::Group => "group",
            NodeKind::Leaf => "leaf",
        }
    }

    /// Rows and tables are layout structure; label search looks through them.
    fn is_layout(self) -> bool {
        matches!(self, NodeKind::Row | NodeKind::Table)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "source", content = "text", rename_all = "snake_case")]
pub enum NodeLabel {
    /// Visible heading text; usable in addresses.
    Heading(String),
    /// Generated name for an unlabelled container; never matched.
    Synthetic(String),
}

impl NodeLabel {
    pub fn heading(&self) -> Option<&str> {
        match self {
            NodeLabel::Heading(s) => Some(s),
            NodeLabel::Synthetic(_) => None,
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            NodeLabel::Heading(s) | NodeLabel::Synthetic(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UINode {
    pub node_id: u32,
    pub kind: NodeKind,
    pub bbox: Rect,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_label: Option<NodeLabel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub affordance_ref: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub children: Vec<UINode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutConfig {
    /// Containment tolerance in pixels.
    pub epsilon: i32,
    /// Minimum vertical overlap (relative to the shorter box) for a row.
    pub alignment_ratio: f64,
    /// Minimum x-interval IoU for two cells to share a column.
    pub column_iou: f64,
    /// Root extent; the tight box of all affordances when absent.
    pub screen: Option<Rect>,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self { epsilon: 3, alignment_ratio: 0.5, column_iou: 0.6, screen: None }
    }
}

impl LayoutConfig {
    pub fn for_screen(width: i32, height: i32) -> Self {
        Self { screen: Some(Rect::new(0, 0, width, height)), ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelativeAddress {
    pub target_label: String,
    #[serde(default)]
    pub container_path: Vec<String>,
}

impl RelativeAddress {
    pub fn new(target: &str, path: &[&str]) -> Self {
        Self { target_label: target.to_string(), container_path: path.iter().map(|s| s.to_string()).collect() }
    }
}

impl fmt::Display for RelativeAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(\"{}\", [{}])", self.target_label, self.container_path.join(", "))
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ResolveError {
    #[error("no element matches {0}")]
    TargetNotFound(RelativeAddress),
    #[error("{address} is ambiguous: nodes {candidates:?} all match")]
    AmbiguousTarget { address: RelativeAddress, candidates: Vec<u32> },
}

impl UINode {
    fn leaf(a: &Affordance) -> Self {
        UINode {
            node_id: 0,
            kind: NodeKind::Leaf,
            bbox: a.bbox,
            group_label: None,
            affordance_ref: Some(a.id),
            category: Some(a.category),
            text: a.text.clone(),
            children: Vec::new(),
        }
    }

    fn group(kind: NodeKind, children: Vec<UINode>) -> Self {
        let bbox = bounding(children.iter().map(|c| c.bbox)).expect("groups have children");
        UINode {
            node_id: 0,
            kind,
            bbox,
            group_label: None,
            affordance_ref: None,
            category: None,
            text: None,
            children,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.kind == NodeKind::Leaf
    }

    /// Preorder traversal.
    pub fn walk(&self) -> Vec<&UINode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(n.children.iter().rev());
        }
        out
    }

    pub fn leaves(&self) -> impl Iterator<Item = &UINode> {
        self.walk().into_iter().filter(|n| n.is_leaf())
    }

    pub fn find(&self, node_id: u32) -> Option<&UINode> {
        self.walk().into_iter().find(|n| n.node_id == node_id)
    }

    pub fn leaf_for_affordance(&self, affordance_id: u32) -> Option<&UINode> {
        self.leaves().find(|n| n.affordance_ref == Some(affordance_id))
    }

    /// `(parent, child)` pairs for every tree edge.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        self.walk()
            .into_iter()
            .flat_map(|n| n.children.iter().map(move |c| (n.node_id, c.node_id)))
            .collect()
    }

    pub fn label_str(&self) -> Option<&str> {
        self.group_label.as_ref().map(NodeLabel::as_str)
    }

    /// Label-and-kind structure with geometry and ids stripped.
    pub fn skeleton(&self) -> Skeleton {
        Skeleton {
            kind: self.kind,
            label: self.group_label.clone(),
            category: self.category,
            text: self.text.clone(),
            children: self.children.iter().map(UINode::skeleton).collect(),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }

    /// Checks single-parent tree shape, leaf/group arity and containment
    /// within `epsilon` along every edge.
    pub fn validate(&self, epsilon: i32) -> Result<(), String> {
        let mut ids: Vec<u32> = self.walk().iter().map(|n| n.node_id).collect();
        ids.sort_unstable();
        let before = ids.len();
        ids.dedup();
        if ids.len() != before {
            return Err("duplicate node ids".into());
        }
        for n in self.walk() {
            match n.kind {
                NodeKind::Leaf if !n.children.is_empty() => return Err(format!("leaf {} has children", n.node_id)),
                NodeKind::Leaf => {}
                NodeKind::Root => {}
                _ if n.children.is_empty() => return Err(format!("group {} is empty", n.node_id)),
                _ => {}
            }
            for c in &n.children {
                if !n.bbox.contains_rect_within(&c.bbox, epsilon) {
                    return Err(format!("node {} escapes parent {}", c.node_id, n.node_id));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Skeleton {
    pub kind: NodeKind,
    pub label: Option<NodeLabel>,
    pub category: Option<Category>,
    pub text: Option<String>,
    pub children: Vec<Skeleton>,
}

fn reading_order(a: &UINode, b: &UINode) -> Ordering {
    (a.bbox.y, a.bbox.x, a.bbox.h, a.bbox.w).cmp(&(b.bbox.y, b.bbox.x, b.bbox.h, b.bbox.w))
}

/// Index of the container each affordance hangs under: the smallest box
/// that holds it within `eps`, restricted to boxes that rank before it by
/// (larger area, earlier index) so the relation is acyclic.
fn containment_parents(affs: &[&Affordance], eps: i32) -> Vec<Option<usize>> {
    let rank = |i: usize| (std::cmp::Reverse(affs[i].bbox.area()), i);
    (0..affs.len())
        .map(|i| {
            (0..affs.len())
                .filter(|&j| j != i && rank(j) < rank(i) && affs[j].bbox.contains_rect_within(&affs[i].bbox, eps))
                .min_by_key(|&j| (affs[j].bbox.area(), j))
        })
        .collect()
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, i: usize) -> usize {
        let p = self.0[i];
        if p == i {
            return i;
        }
        let r = self.find(p);
        self.0[i] = r;
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.0[hi] = lo;
        }
    }
}

fn columns_consistent(a: &UINode, b: &UINode, min_iou: f64) -> bool {
    a.children.len() == b.children.len()
        && a.children.iter().zip(&b.children).all(|(x, y)| x.bbox.x_interval_iou(&y.bbox) >= min_iou)
}

/// Alignment pass over one sibling list.
fn align_siblings(mut items: Vec<UINode>, cfg: &LayoutConfig) -> Vec<UINode> {
    items.sort_by(reading_order);
    let n = items.len();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if items[i].bbox.vertical_overlap_ratio(&items[j].bbox) >= cfg.alignment_ratio {
                uf.union(i, j);
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let r = uf.find(i);
        clusters[r].push(i);
    }
    let mut slots: Vec<Option<UINode>> = items.into_iter().map(Some).collect();
    let mut out = Vec::new();
    for members in clusters.into_iter().filter(|c| !c.is_empty()) {
        let mut nodes: Vec<UINode> = members.iter().map(|&i| slots[i].take().expect("each item once")).collect();
        if nodes.len() == 1 {
            out.extend(nodes);
        } else {
            nodes.sort_by(|a, b| (a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h).cmp(&(b.bbox.x, b.bbox.y, b.bbox.w, b.bbox.h)));
            out.push(UINode::group(NodeKind::Row, nodes));
        }
    }
    out.sort_by(reading_order);

    // Stack consecutive column-consistent rows into tables.
    let mut result: Vec<UINode> = Vec::new();
    let mut run: Vec<UINode> = Vec::new();
    let flush = |run: &mut Vec<UINode>, result: &mut Vec<UINode>| {
        if run.len() >= 2 {
            result.push(UINode::group(NodeKind::Table, std::mem::take(run)));
        } else {
            result.append(run);
        }
    };
    for node in out {
        if node.kind != NodeKind::Row {
            flush(&mut run, &mut result);
            result.push(node);
            continue;
        }
        let extends = run.last().is_some_and(|prev| columns_consistent(prev, &node, cfg.column_iou));
        if !extends {
            flush(&mut run, &mut result);
        }
        run.push(node);
    }
    flush(&mut run, &mut result);
    result.sort_by(reading_order);
    result
}

fn build_subtree(
    i: usize,
    affs: &[&Affordance],
    children_of: &[Vec<usize>],
    cfg: &LayoutConfig,
) -> UINode {
    let own = UINode::leaf(affs[i]);
    if children_of[i].is_empty() {
        return own;
    }
    let inner: Vec<UINode> = children_of[i].iter().map(|&c| build_subtree(c, affs, children_of, cfg)).collect();
    let mut children = vec![own];
    children.extend(align_siblings(inner, cfg));
    let kind = if affs[i].category == Category::Modal { NodeKind::Modal } else { NodeKind::Group };
    UINode::group(kind, children)
}

/// Leaves reachable without crossing a non-layout container.
fn layout_leaves<'a>(node: &'a UINode, out: &mut Vec<&'a UINode>) {
    for c in &node.children {
        if c.is_leaf() {
            out.push(c);
        } else if c.kind.is_layout() {
            layout_leaves(c, out);
        }
    }
}

fn holds_form_widgets(node: &UINode) -> bool {
    let mut leaves = Vec::new();
    layout_leaves(node, &mut leaves);
    let has = |cat| leaves.iter().any(|l| l.category == Some(cat));
    has(Category::TextField) && has(Category::Button)
}

fn classify_forms(node: &mut UINode) {
    for c in &mut node.children {
        classify_forms(c);
    }
    if node.kind == NodeKind::Group && holds_form_widgets(node) {
        node.kind = NodeKind::Form;
    }
}

fn number(node: &mut UINode, next: &mut u32) {
    node.node_id = *next;
    *next += 1;
    for c in &mut node.children {
        number(c, next);
    }
}

fn assign_labels(node: &mut UINode) {
    if !node.is_leaf() && node.kind != NodeKind::Root {
        let mut leaves = Vec::new();
        layout_leaves(node, &mut leaves);
        let heading = leaves
            .iter()
            .filter(|l| l.category == Some(Category::StaticText))
            .filter_map(|l| l.text.as_deref().filter(|t| !t.is_empty()).map(|t| (l.bbox.y, l.bbox.x, t)))
            .min()
            .map(|(_, _, t)| t.to_string())
            .or_else(|| {
                // A labelled container widget (a titled dialog) names itself.
                matches!(node.kind, NodeKind::Modal | NodeKind::Group | NodeKind::Form)
                    .then(|| node.children.first())
                    .flatten()
                    .filter(|c| c.is_leaf())
                    .and_then(|c| c.text.clone())
                    .filter(|t| !t.is_empty())
            });
        node.group_label = Some(match heading {
            Some(t) => NodeLabel::Heading(t),
            None => NodeLabel::Synthetic(format!("group_{}", node.node_id)),
        });
    }
    for c in &mut node.children {
        assign_labels(c);
    }
}

/// Parses affordances into a containment/alignment tree rooted at the
/// screen. Any input yields a valid tree.
pub fn parse_layout(affordances: &[Affordance], cfg: &LayoutConfig) -> UINode {
    let mut affs: Vec<&Affordance> = affordances.iter().collect();
    affs.sort_by(|a, b| {
        a.bbox
            .cmp(&b.bbox)
            .then_with(|| a.text.cmp(&b.text))
            .then(a.category.cmp(&b.category))
            .then(a.id.cmp(&b.id))
    });
    let parents = containment_parents(&affs, cfg.epsilon);
    let mut children_of = vec![Vec::new(); affs.len()];
    let mut top = Vec::new();
    for (i, p) in parents.iter().enumerate() {
        match p {
            Some(p) => children_of[*p].push(i),
            None => top.push(i),
        }
    }
    let items: Vec<UINode> = top.iter().map(|&i| build_subtree(i, &affs, &children_of, cfg)).collect();
    let mut children = align_siblings(items, cfg);
    for c in &mut children {
        classify_forms(c);
    }

    let mut root = UINode {
        node_id: 0,
        kind: NodeKind::Root,
        bbox: cfg.screen.unwrap_or_else(|| bounding(affordances.iter().map(|a| a.bbox)).unwrap_or_default()),
        group_label: None,
        affordance_ref: None,
        category: None,
        text: None,
        children: Vec::new(),
    };
    let probe = UINode { children, ..root.clone() };
    root.children = if holds_form_widgets(&probe) {
        vec![UINode::group(NodeKind::Form, probe.children)]
    } else {
        probe.children
    };
    if cfg.screen.is_none() {
        if let Some(b) = bounding(root.children.iter().map(|c| c.bbox)) {
            root.bbox = b;
        }
    }
    let mut next = 0;
    number(&mut root, &mut next);
    assign_labels(&mut root);
    root
}

fn collect_containers<'a>(node: &'a UINode, label: &str, out: &mut Vec<&'a UINode>) {
    for c in &node.children {
        if !c.is_leaf() {
            if c.group_label.as_ref().and_then(NodeLabel::heading) == Some(label) {
                out.push(c);
            }
            collect_containers(c, label, out);
        }
    }
}

/// Resolves a relative address. Two or more matching leaves is an error,
/// never an arbitrary pick.
pub fn resolve<'a>(root: &'a UINode, addr: &RelativeAddress) -> Result<&'a UINode, ResolveError> {
    let mut scopes: Vec<&UINode> = vec![root];
    for label in &addr.container_path {
        let mut next = Vec::new();
        for s in &scopes {
            collect_containers(s, label, &mut next);
        }
        next.sort_by_key(|n| n.node_id);
        next.dedup_by_key(|n| n.node_id);
        if next.is_empty() {
            return Err(ResolveError::TargetNotFound(addr.clone()));
        }
        // A table borrows its first row's heading; the innermost match wins.
        let innermost: Vec<&UINode> = next
            .iter()
            .filter(|s| !next.iter().any(|t| t.node_id != s.node_id && s.find(t.node_id).is_some()))
            .copied()
            .collect();
        scopes = innermost;
    }
    let mut hits: Vec<&UINode> = scopes
        .iter()
        .flat_map(|s| s.leaves())
        .filter(|l| l.text.as_deref() == Some(addr.target_label.as_str()))
        .collect();
    hits.sort_by_key(|n| n.node_id);
    hits.dedup_by_key(|n| n.node_id);
    match hits.len() {
        0 => Err(ResolveError::TargetNotFound(addr.clone())),
        1 => Ok(hits[0]),
        _ => Err(ResolveError::AmbiguousTarget {
            address: addr.clone(),
            candidates: hits.iter().map(|n| n.node_id).collect(),
        }),
    }
}

/// Affordances referenced by the leaves, in leaf order.
pub fn leaf_affordances(root: &UINode, affordances: &[Affordance]) -> Vec<Affordance> {
    root.leaves()
        .filter_map(|l| l.affordance_ref.and_then(|id| affordances.iter().find(|a| a.id == id)).cloned())
        .collect()
}
