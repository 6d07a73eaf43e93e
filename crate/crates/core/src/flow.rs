//! Conversation graph model.
//!
//! A [`SurveyGraph`] is the executable form of a survey: typed nodes joined by
//! directed edges. Branching happens only at questions, through the distinct
//! answer-option nodes hanging off them; branches rejoin by pointing at a
//! common node. Graphs are acyclic, so every conversation terminates.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a node, unique within one graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Text,
    Image,
    Question,
    #[serde(rename = "answer")]
    AnswerOption,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Text => "text",
            NodeKind::Image => "image",
            NodeKind::Question => "question",
            NodeKind::AnswerOption => "answer",
        }
    }
}

/// How a question collects its answer. Presentation only: the coding lives on
/// the answer options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Widget {
    Options,
    StarRating,
    Emoji,
    Slide,
    Checkbox,
    FreeText,
}

impl Widget {
    pub fn as_str(self) -> &'static str {
        match self {
            Widget::Options => "options",
            Widget::StarRating => "star-rating",
            Widget::Emoji => "emoji",
            Widget::Slide => "slide",
            Widget::Checkbox => "checkbox",
            Widget::FreeText => "free-text",
        }
    }

    /// Parses the names usable in a script `type:` attribute (every widget but
    /// free-text, which is implied by a question without answers).
    pub fn from_script_name(name: &str) -> Option<Widget> {
        match name {
            "options" => Some(Widget::Options),
            "star-rating" => Some(Widget::StarRating),
            "emoji" => Some(Widget::Emoji),
            "slide" => Some(Widget::Slide),
            "checkbox" => Some(Widget::Checkbox),
            _ => None,
        }
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    /// Display text, or the media URL of an image node.
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_variable: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widget: Option<Widget>,
    /// Numerical coding of an answer option.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<i64>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub multi: bool,
}

impl Node {
    fn bare(id: impl Into<String>, kind: NodeKind, content: impl Into<String>) -> Self {
        Node {
            id: NodeId(id.into()),
            kind,
            content: content.into(),
            latent_variable: None,
            widget: None,
            value: None,
            multi: false,
        }
    }

    pub fn text(id: impl Into<String>, content: impl Into<String>) -> Self {
        Node::bare(id, NodeKind::Text, content)
    }

    pub fn image(id: impl Into<String>, url: impl Into<String>) -> Self {
        Node::bare(id, NodeKind::Image, url)
    }

    pub fn question(id: impl Into<String>, prompt: impl Into<String>, widget: Widget) -> Self {
        let mut node = Node::bare(id, NodeKind::Question, prompt);
        node.widget = Some(widget);
        node.multi = widget == Widget::Checkbox;
        node
    }

    pub fn answer(id: impl Into<String>, label: impl Into<String>, value: Option<i64>) -> Self {
        let mut node = Node::bare(id, NodeKind::AnswerOption, label);
        node.value = value;
        node
    }

    pub fn with_latent(mut self, label: impl Into<String>) -> Self {
        self.latent_variable = Some(label.into());
        self
    }

    pub fn is_question(&self) -> bool {
        self.kind == NodeKind::Question
    }

    pub fn is_free_text(&self) -> bool {
        self.is_question() && self.widget == Some(Widget::FreeText)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
}

impl Edge {
    pub fn new(from: impl Into<String>, to: impl Into<String>) -> Self {
        Edge {
            from: NodeId(from.into()),
            to: NodeId(to.into()),
        }
    }
}

/// Inclusive range of admissible answer codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodingRange {
    pub min: i64,
    pub max: i64,
}

impl CodingRange {
    pub fn contains(&self, value: i64) -> bool {
        self.min <= value && value <= self.max
    }
}

impl Default for CodingRange {
    fn default() -> Self {
        CodingRange { min: 1, max: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    #[default]
    Draft,
    Published,
}

/// A conversation flow. Edges are kept stably sorted by the position of their
/// source node, so the out-edges of a question list its options in display
/// order and two graphs built in different edge orders compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyGraph {
    pub id: String,
    pub title: String,
    pub entry: NodeId,
    pub coding_range: CodingRange,
    pub status: Status,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl SurveyGraph {
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        entry: NodeId,
        nodes: Vec<Node>,
        edges: Vec<Edge>,
    ) -> Self {
        let mut graph = SurveyGraph {
            id: id.into(),
            title: title.into(),
            entry,
            coding_range: CodingRange::default(),
            status: Status::Draft,
            nodes,
            edges,
        };
        graph.normalize_edges();
        graph
    }

    pub fn with_coding_range(mut self, range: CodingRange) -> Self {
        self.coding_range = range;
        self
    }

    fn normalize_edges(&mut self) {
        let position: HashMap<&NodeId, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (&n.id, i))
            .collect();
        let mut keyed: Vec<(usize, Edge)> = self
            .edges
            .drain(..)
            .map(|e| (position.get(&e.from).copied().unwrap_or(usize::MAX), e))
            .collect();
        keyed.sort_by_key(|(pos, _)| *pos);
        self.edges = keyed.into_iter().map(|(_, e)| e).collect();
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.iter().find(|n| &n.id == id)
    }

    pub fn is_published(&self) -> bool {
        self.status == Status::Published
    }

    pub fn question_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_question()).count()
    }

    /// Adjacency view for lookups. Tolerates dangling edges and duplicate ids
    /// (the first node with an id wins), so it is usable on unvalidated input.
    pub fn index(&self) -> GraphIndex<'_> {
        GraphIndex::new(self)
    }
}

/// Borrowed adjacency lists over a [`SurveyGraph`].
pub struct GraphIndex<'g> {
    graph: &'g SurveyGraph,
    position: HashMap<&'g NodeId, usize>,
    out: Vec<Vec<usize>>,
    indegree: Vec<usize>,
    parents: Vec<Vec<usize>>,
}

impl<'g> GraphIndex<'g> {
    fn new(graph: &'g SurveyGraph) -> Self {
        let mut position = HashMap::with_capacity(graph.nodes.len());
        for (i, n) in graph.nodes.iter().enumerate() {
            position.entry(&n.id).or_insert(i);
        }
        let mut out = vec![Vec::new(); graph.nodes.len()];
        let mut indegree = vec![0; graph.nodes.len()];
        let mut parents = vec![Vec::new(); graph.nodes.len()];
        for e in &graph.edges {
            if let (Some(&f), Some(&t)) = (position.get(&e.from), position.get(&e.to)) {
                out[f].push(t);
                indegree[t] += 1;
                parents[t].push(f);
            }
        }
        GraphIndex {
            graph,
            position,
            out,
            indegree,
            parents,
        }
    }

    pub fn graph(&self) -> &'g SurveyGraph {
        self.graph
    }

    pub fn position(&self, id: &NodeId) -> Option<usize> {
        self.position.get(id).copied()
    }

    pub fn node_at(&self, pos: usize) -> &'g Node {
        &self.graph.nodes[pos]
    }

    pub fn get(&self, id: &NodeId) -> Option<&'g Node> {
        self.position(id).map(|p| &self.graph.nodes[p])
    }

    pub fn successors_at(&self, pos: usize) -> &[usize] {
        &self.out[pos]
    }

    pub fn parents_at(&self, pos: usize) -> &[usize] {
        &self.parents[pos]
    }

    pub fn successors(&self, id: &NodeId) -> impl Iterator<Item = &'g Node> + '_ {
        let pos = self.position(id);
        pos.into_iter()
            .flat_map(move |p| self.out[p].iter().map(move |&s| &self.graph.nodes[s]))
    }

    /// The single successor of a node with at most one out-edge.
    pub fn next(&self, id: &NodeId) -> Option<&'g Node> {
        self.successors(id).next()
    }

    /// Answer options of a question, in display order.
    pub fn options(&self, question: &NodeId) -> Vec<&'g Node> {
        self.successors(question)
            .filter(|n| n.kind == NodeKind::AnswerOption)
            .collect()
    }

    pub fn indegree_at(&self, pos: usize) -> usize {
        self.indegree[pos]
    }

    /// Topological order (Kahn), breaking ties by node position. `None` when
    /// the graph has a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.graph.nodes.len();
        let mut indegree = self.indegree.clone();
        let mut ready: BinaryHeap<Reverse<usize>> =
            (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(i)) = ready.pop() {
            order.push(i);
            for &s in &self.out[i] {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    ready.push(Reverse(s));
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Positions reachable from `start`, including it.
    pub fn reachable_from(&self, start: usize) -> Vec<bool> {
        let mut seen = vec![false; self.graph.nodes.len()];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for &s in &self.out[i] {
                if !seen[s] {
                    seen[s] = true;
                    stack.push(s);
                }
            }
        }
        seen
    }

    /// Nodes lying on some directed cycle, found by iterative DFS colouring.
    pub fn nodes_on_cycles(&self) -> BTreeSet<usize> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            White,
            Grey,
            Black,
        }
        let n = self.graph.nodes.len();
        let mut mark = vec![Mark::White; n];
        let mut on_cycle = BTreeSet::new();
        for root in 0..n {
            if mark[root] != Mark::White {
                continue;
            }
            // (node, next child index); the stack doubles as the current path.
            let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
            mark[root] = Mark::Grey;
            while let Some(&mut (node, ref mut child)) = stack.last_mut() {
                if let Some(&s) = self.out[node].get(*child) {
                    *child += 1;
                    match mark[s] {
                        Mark::White => {
                            mark[s] = Mark::Grey;
                            stack.push((s, 0));
                        }
                        Mark::Grey => {
                            // back edge: everything on the path from s closes a cycle
                            let start = stack.iter().position(|&(p, _)| p == s).unwrap_or(0);
                            on_cycle.extend(stack[start..].iter().map(|&(p, _)| p));
                        }
                        Mark::Black => {}
                    }
                } else {
                    mark[node] = Mark::Black;
                    stack.pop();
                }
            }
        }
        on_cycle
    }
}

/// Which structural rule a [`Violation`] breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    DuplicateNodeId,
    DanglingEdge,
    SelfLoop,
    DuplicateEdge,
    EntryMissing,
    EntryNotRoot,
    MultipleRoots,
    Unreachable,
    Cycle,
    NoTerminal,
    QuestionNeedsOptions,
    QuestionMixedSuccessors,
    QuestionMissingWidget,
    FreeTextShape,
    MultiChoiceShape,
    AnswerOutDegree,
    AnswerParent,
    FlowOutDegree,
    AttributeNotAllowed,
    ValueOutOfRange,
    InvalidCodingRange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Some(id) => write!(f, "{id}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Outcome of [`validate_graph`]: every violation found, in a stable order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, rule: Rule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    fn push(&mut self, rule: Rule, node: Option<&NodeId>, message: impl Into<String>) {
        self.violations.push(Violation {
            rule,
            node: node.cloned(),
            message: message.into(),
        });
    }
}

/// Checks every structural invariant of a conversation graph and reports all
/// violations rather than stopping at the first.
pub fn validate_graph(graph: &SurveyGraph) -> ValidationReport {
    let mut report = ValidationReport::default();
    let index = graph.index();

    if graph.coding_range.min > graph.coding_range.max {
        report.push(
            Rule::InvalidCodingRange,
            None,
            format!(
                "coding range {}..{} is empty",
                graph.coding_range.min, graph.coding_range.max
            ),
        );
    }

    let mut seen_ids = HashSet::new();
    for node in &graph.nodes {
        if !seen_ids.insert(&node.id) {
            report.push(Rule::DuplicateNodeId, Some(&node.id), "duplicate node id");
        }
    }

    let mut seen_edges = HashSet::new();
    for edge in &graph.edges {
        for end in [&edge.from, &edge.to] {
            if index.position(end).is_none() {
                report.push(
                    Rule::DanglingEdge,
                    Some(end),
                    format!(
                        "edge {} -> {} references an unknown node",
                        edge.from, edge.to
                    ),
                );
            }
        }
        if edge.from == edge.to {
            report.push(Rule::SelfLoop, Some(&edge.from), "self-loop");
        }
        if !seen_edges.insert(edge) {
            report.push(
                Rule::DuplicateEdge,
                Some(&edge.from),
                format!("edge to {} listed twice", edge.to),
            );
        }
    }

    // entry and reachability
    match index.position(&graph.entry) {
        None => report.push(
            Rule::EntryMissing,
            Some(&graph.entry),
            "entry node does not exist",
        ),
        Some(entry) => {
            if index.indegree_at(entry) != 0 {
                report.push(
                    Rule::EntryNotRoot,
                    Some(&graph.entry),
                    "entry node has incoming edges",
                );
            }
            let reachable = index.reachable_from(entry);
            for (pos, node) in graph.nodes.iter().enumerate() {
                if pos == entry || index.position(&node.id) != Some(pos) {
                    continue;
                }
                if index.indegree_at(pos) == 0 {
                    report.push(
                        Rule::MultipleRoots,
                        Some(&node.id),
                        "node other than the entry has no incoming edge",
                    );
                }
                if !reachable[pos] {
                    report.push(
                        Rule::Unreachable,
                        Some(&node.id),
                        "not reachable from entry",
                    );
                }
            }
        }
    }

    for pos in index.nodes_on_cycles() {
        report.push(
            Rule::Cycle,
            Some(&graph.nodes[pos].id),
            "node lies on a cycle",
        );
    }

    if !graph.nodes.is_empty() && (0..graph.nodes.len()).all(|p| !index.successors_at(p).is_empty())
    {
        report.push(Rule::NoTerminal, None, "graph has no terminal node");
    }

    for (pos, node) in graph.nodes.iter().enumerate() {
        if index.position(&node.id) != Some(pos) {
            continue;
        }
        check_node(graph, &index, pos, node, &mut report);
    }

    report
}

fn check_node(
    graph: &SurveyGraph,
    index: &GraphIndex<'_>,
    pos: usize,
    node: &Node,
    report: &mut ValidationReport,
) {
    let id = Some(&node.id);
    let succ: Vec<&Node> = index
        .successors_at(pos)
        .iter()
        .map(|&s| index.node_at(s))
        .collect();

    if node.kind != NodeKind::Question
        && (node.latent_variable.is_some() || node.widget.is_some() || node.multi)
    {
        report.push(
            Rule::AttributeNotAllowed,
            id,
            format!("{} node carries question attributes", node.kind.as_str()),
        );
    }
    if node.kind != NodeKind::AnswerOption && node.value.is_some() {
        report.push(
            Rule::AttributeNotAllowed,
            id,
            format!("{} node carries a value", node.kind.as_str()),
        );
    }

    match node.kind {
        NodeKind::Text | NodeKind::Image => {
            if succ.len() > 1 {
                report.push(
                    Rule::FlowOutDegree,
                    id,
                    "text/image node has more than one successor",
                );
            }
            if succ.iter().any(|s| s.kind == NodeKind::AnswerOption) {
                report.push(
                    Rule::AnswerParent,
                    id,
                    "text/image node points at an answer option",
                );
            }
        }
        NodeKind::AnswerOption => {
            if succ.len() != 1 {
                report.push(
                    Rule::AnswerOutDegree,
                    id,
                    format!(
                        "answer option has {} successors, expected exactly one",
                        succ.len()
                    ),
                );
            }
            let parents = index.parents_at(pos);
            if parents.len() != 1 || index.node_at(parents[0]).kind != NodeKind::Question {
                report.push(
                    Rule::AnswerParent,
                    id,
                    "answer option must hang off exactly one question",
                );
            }
            if let Some(v) = node.value {
                if !graph.coding_range.contains(v) {
                    report.push(
                        Rule::ValueOutOfRange,
                        id,
                        format!(
                            "value {v} outside coding range {}..{}",
                            graph.coding_range.min, graph.coding_range.max
                        ),
                    );
                }
            }
        }
        NodeKind::Question => check_question(index, pos, node, &succ, report),
    }
}

fn check_question(
    index: &GraphIndex<'_>,
    pos: usize,
    node: &Node,
    succ: &[&Node],
    report: &mut ValidationReport,
) {
    let id = Some(&node.id);
    let options: Vec<&Node> = succ
        .iter()
        .copied()
        .filter(|s| s.kind == NodeKind::AnswerOption)
        .collect();
    let Some(widget) = node.widget else {
        report.push(Rule::QuestionMissingWidget, id, "question has no widget");
        return;
    };

    if widget == Widget::FreeText {
        if !options.is_empty() || succ.len() != 1 {
            report.push(
                Rule::FreeTextShape,
                id,
                "free-text question needs exactly one successor and no answer options",
            );
        }
        if node.multi {
            report.push(
                Rule::MultiChoiceShape,
                id,
                "free-text question cannot be multi-choice",
            );
        }
        return;
    }

    if options.len() != succ.len() {
        report.push(
            Rule::QuestionMixedSuccessors,
            id,
            "choice question may only point at answer options",
        );
    }
    // A lone uncoded option is an acknowledgement prompt ("Sure, let's start!");
    // anything coded needs a real choice.
    let coded = options.iter().any(|o| o.value.is_some());
    let min_options = if coded || node.multi { 2 } else { 1 };
    if options.len() < min_options {
        report.push(
            Rule::QuestionNeedsOptions,
            id,
            format!(
                "question needs ≥{min_options} options, has {}",
                options.len()
            ),
        );
    }

    if node.multi != (widget == Widget::Checkbox) {
        report.push(
            Rule::MultiChoiceShape,
            id,
            "multi-choice questions use the checkbox widget and only they do",
        );
    }
    if node.multi {
        if options.iter().any(|o| o.value.is_none()) {
            report.push(
                Rule::MultiChoiceShape,
                id,
                "multi-choice options must be coded",
            );
        }
        let targets: BTreeSet<usize> = options
            .iter()
            .filter_map(|o| index.position(&o.id))
            .flat_map(|p| index.successors_at(p).iter().copied())
            .collect();
        if targets.len() > 1 {
            report.push(
                Rule::MultiChoiceShape,
                id,
                "multi-choice options must all continue to the same node",
            );
        }
    }
    let _ = pos;
}

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid graph: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidGraph(Vec<Violation>),
    #[error("malformed document at `{path}`: {message}")]
    MalformedDocument { path: String, message: String },
}

impl FlowError {
    fn from_report(report: ValidationReport) -> Result<(), FlowError> {
        if report.is_ok() {
            Ok(())
        } else {
            Err(FlowError::InvalidGraph(report.violations))
        }
    }
}

/// Question ids in topological order from the entry (ties broken by node
/// position), each exactly once.
pub fn reachable_questions(graph: &SurveyGraph) -> Result<Vec<NodeId>, FlowError> {
    FlowError::from_report(validate_graph(graph))?;
    let index = graph.index();
    let order = index
        .topological_order()
        .expect("validated graphs are acyclic");
    Ok(order
        .into_iter()
        .map(|p| index.node_at(p))
        .filter(|n| n.is_question())
        .map(|n| n.id.clone())
        .collect())
}

/// Canonical JSON document for a valid graph.
pub fn serialize(graph: &SurveyGraph) -> Result<String, FlowError> {
    FlowError::from_report(validate_graph(graph))?;
    Ok(serde_json::to_string_pretty(graph).expect("graph serialization is infallible"))
}

/// Parses a canonical JSON document. Structural validity is not checked here;
/// run [`validate_graph`] on the result.
pub fn deserialize(doc: &str) -> Result<SurveyGraph, FlowError> {
    let de = &mut serde_json::Deserializer::from_str(doc);
    let mut graph: SurveyGraph = serde_path_to_error::deserialize(de).map_err(|err| {
        let mut path = err.path().to_string();
        let message = err.inner().to_string();
        // serde reports missing fields against the enclosing object
        if let Some(field) = message
            .strip_prefix("missing field `")
            .and_then(|rest| rest.split('`').next())
        {
            path = if path == "." {
                field.to_owned()
            } else {
                format!("{path}.{field}")
            };
        }
        FlowError::MalformedDocument { path, message }
    })?;
    graph.normalize_edges();
    Ok(graph)
}
