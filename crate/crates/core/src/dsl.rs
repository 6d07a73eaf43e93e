//! Survey scripts: the line-based text form of a conversation.
//!
//! A script is a sequence of blocks. Each block starts on a line beginning
//! with `{` and holds a header plus a body:
//!
//! ```text
//! # comments and blank lines are ignored
//! {text} Hi! Thanks for joining me today!
//! {question: Firm reputation (mobile)} Do they have a good reputation?
//! {answer, value: 1} They have a bad reputation
//! {answer, value: 5} Their reputation is outstanding
//! {text, if answer 1} You should think about changing provider then...
//! {text} Thanks!
//! ```
//!
//! The body runs from the closing `}` to the end of the line and continues on
//! following lines until the next line starting with `{` or `#`. Header
//! attributes are `if answer N [or M ...]` (text and image blocks), `type:` and
//! `value:` (answers) and `multi[: label]` (questions).
//!
//! Compilation binds each run of answers to the question before it, hangs
//! guarded blocks on the matching branches of the most recent question, and
//! joins every open branch into the next unguarded block.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{
    validate_graph, CodingRange, Edge, Node, NodeId, NodeKind, Status, SurveyGraph, Violation,
    Widget,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseErrorKind {
    Syntax,
    Attribute,
    Binding,
    Guard,
}

impl ParseErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseErrorKind::Syntax => "syntax",
            ParseErrorKind::Attribute => "attribute",
            ParseErrorKind::Binding => "binding",
            ParseErrorKind::Guard => "guard",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseError {
    /// 1-based line of the offending block's header.
    pub line: usize,
    /// 1-based character column within that line.
    pub column: usize,
    pub message: String,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}: {} error: {}",
            self.line,
            self.column,
            self.kind.as_str(),
            self.message
        )
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Text,
    Image,
    Question,
    Answer,
}

impl BlockKind {
    fn parse(word: &str) -> Option<Self> {
        match word {
            "text" => Some(BlockKind::Text),
            "image" => Some(BlockKind::Image),
            "question" => Some(BlockKind::Question),
            "answer" => Some(BlockKind::Answer),
            _ => None,
        }
    }
}

/// One parsed block, before binding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptBlock {
    pub kind: BlockKind,
    pub latent: Option<String>,
    pub guard: Option<Vec<i64>>,
    pub widget: Option<Widget>,
    pub value: Option<i64>,
    pub multi: bool,
    pub body: String,
    pub line: usize,
    guard_column: usize,
}

/// Metadata a script cannot express, applied to the compiled graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseOptions {
    pub id: String,
    pub title: String,
    pub coding_range: CodingRange,
    pub status: Status,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            id: "survey".to_owned(),
            title: String::new(),
            coding_range: CodingRange::default(),
            status: Status::Draft,
        }
    }
}

impl ParseOptions {
    pub fn from_graph(graph: &SurveyGraph) -> Self {
        ParseOptions {
            id: graph.id.clone(),
            title: graph.title.clone(),
            coding_range: graph.coding_range,
            status: graph.status,
        }
    }
}

/// Parses a script with default metadata (id `survey`, coding range 1..5).
pub fn parse_script(source: &str) -> Result<SurveyGraph, Vec<ParseError>> {
    parse_script_with(source, &ParseOptions::default())
}

/// Parses raw bytes; invalid UTF-8 is reported as a syntax error on the line
/// where it occurs.
pub fn parse_script_bytes(
    source: &[u8],
    options: &ParseOptions,
) -> Result<SurveyGraph, Vec<ParseError>> {
    match std::str::from_utf8(source) {
        Ok(text) => parse_script_with(text, options),
        Err(err) => {
            let valid = &source[..err.valid_up_to()];
            let line = valid.iter().filter(|&&b| b == b'\n').count() + 1;
            let column = valid.iter().rev().take_while(|&&b| b != b'\n').count() + 1;
            Err(vec![ParseError {
                line,
                column,
                message: "script is not valid UTF-8".to_owned(),
                kind: ParseErrorKind::Syntax,
            }])
        }
    }
}

pub fn parse_script_with(
    source: &str,
    options: &ParseOptions,
) -> Result<SurveyGraph, Vec<ParseError>> {
    let (blocks, mut errors) = read_blocks(source, options.coding_range);
    if blocks.is_empty() && errors.is_empty() {
        errors.push(ParseError {
            line: 1,
            column: 1,
            message: "script contains no blocks".to_owned(),
            kind: ParseErrorKind::Syntax,
        });
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    let graph = Compiler::new().compile(&blocks, options)?;
    debug_assert!(
        validate_graph(&graph).is_ok(),
        "{:?}",
        validate_graph(&graph)
    );
    Ok(graph)
}

fn error(
    line: usize,
    column: usize,
    kind: ParseErrorKind,
    message: impl Into<String>,
) -> ParseError {
    ParseError {
        line,
        column,
        message: message.into(),
        kind,
    }
}

fn column_of(line: &str, byte_offset: usize) -> usize {
    line[..byte_offset].chars().count() + 1
}

/// Splits the source into blocks and parses each header.
pub fn read_blocks(source: &str, range: CodingRange) -> (Vec<ScriptBlock>, Vec<ParseError>) {
    let mut blocks: Vec<ScriptBlock> = Vec::new();
    let mut errors = Vec::new();
    // false while skipping the body of a header that failed to parse
    let mut in_block = false;
    let mut seen_header = false;

    for (idx, raw) in source.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = raw.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if trimmed.starts_with('{') {
            seen_header = true;
            let open = raw.len() - trimmed.len();
            match parse_header(raw, open, line_no, range) {
                Ok(block) => {
                    blocks.push(block);
                    in_block = true;
                }
                Err(mut errs) => {
                    errors.append(&mut errs);
                    in_block = false;
                }
            }
            continue;
        }
        if in_block {
            let body = &mut blocks.last_mut().expect("in_block implies a block").body;
            if !body.is_empty() {
                body.push('\n');
            }
            body.push_str(raw.trim_end());
        } else if !seen_header {
            errors.push(error(
                line_no,
                column_of(raw, raw.len() - trimmed.len()),
                ParseErrorKind::Syntax,
                "text outside of a block; blocks start with `{`",
            ));
            // one report is enough for a run of stray lines
            seen_header = true;
        }
    }
    (blocks, errors)
}

fn parse_header(
    raw: &str,
    open: usize,
    line: usize,
    range: CodingRange,
) -> Result<ScriptBlock, Vec<ParseError>> {
    let Some(close_rel) = raw[open..].find('}') else {
        return Err(vec![error(
            line,
            column_of(raw, open),
            ParseErrorKind::Syntax,
            "unclosed `{` in block header",
        )]);
    };
    let close = open + close_rel;
    let inner_start = open + 1;
    let inner = &raw[inner_start..close];
    let body = raw[close + 1..].trim().to_owned();

    // comma-separated items with their byte offsets in `raw`
    let mut items: Vec<(usize, &str)> = Vec::new();
    let mut start = 0;
    for (i, ch) in inner.char_indices() {
        if ch == ',' {
            items.push((inner_start + start, &inner[start..i]));
            start = i + 1;
        }
    }
    items.push((inner_start + start, &inner[start..]));
    let items: Vec<(usize, &str)> = items
        .into_iter()
        .map(|(off, s)| {
            let lead = s.len() - s.trim_start().len();
            (off + lead, s.trim())
        })
        .collect();

    let mut errors = Vec::new();
    let col = |off: usize| column_of(raw, off);

    let (first_off, first) = items[0];
    let (word, label) = match first.split_once(':') {
        Some((w, l)) => (w.trim(), Some(l.trim())),
        None => (first, None),
    };
    let Some(kind) = BlockKind::parse(word) else {
        return Err(vec![error(
            line,
            col(first_off),
            ParseErrorKind::Syntax,
            format!("unknown block kind `{word}`; expected text, image, question or answer"),
        )]);
    };

    let mut block = ScriptBlock {
        kind,
        latent: None,
        guard: None,
        widget: None,
        value: None,
        multi: false,
        body,
        line,
        guard_column: 0,
    };

    if let Some(label) = label {
        if kind != BlockKind::Question {
            errors.push(error(
                line,
                col(first_off),
                ParseErrorKind::Attribute,
                format!("only questions take a latent-variable label, not {word} blocks"),
            ));
        } else if label.is_empty() {
            errors.push(error(
                line,
                col(first_off),
                ParseErrorKind::Attribute,
                "empty latent-variable label",
            ));
        } else {
            block.latent = Some(label.to_owned());
        }
    }

    let mut seen_keys: Vec<&str> = Vec::new();
    for &(off, item) in &items[1..] {
        let c = col(off);
        if item == "if" || item.starts_with("if ") || item.starts_with("if\t") {
            if seen_keys.contains(&"if") {
                errors.push(error(line, c, ParseErrorKind::Attribute, "duplicate guard"));
                continue;
            }
            seen_keys.push("if");
            if !matches!(kind, BlockKind::Text | BlockKind::Image) {
                errors.push(error(
                    line,
                    c,
                    ParseErrorKind::Attribute,
                    "guards are only allowed on text and image blocks",
                ));
                continue;
            }
            match parse_guard(item, range) {
                Ok(values) => {
                    block.guard = Some(values);
                    block.guard_column = c;
                }
                Err(msg) => errors.push(error(line, c, ParseErrorKind::Guard, msg)),
            }
            continue;
        }

        let (key, value) = match item.split_once(':') {
            Some((k, v)) => (k.trim(), Some(v.trim())),
            None => (item, None),
        };
        if seen_keys.contains(&key) {
            errors.push(error(
                line,
                c,
                ParseErrorKind::Attribute,
                format!("duplicate attribute `{key}`"),
            ));
            continue;
        }
        match (key, kind) {
            ("type", BlockKind::Answer) => match value.and_then(Widget::from_script_name) {
                Some(w) => block.widget = Some(w),
                None => errors.push(error(
                    line,
                    c,
                    ParseErrorKind::Attribute,
                    format!(
                        "unknown answer type `{}`; expected options, star-rating, emoji, slide or checkbox",
                        value.unwrap_or("")
                    ),
                )),
            },
            ("value", BlockKind::Answer) => match value.map(str::parse::<i64>) {
                Some(Ok(v)) if range.contains(v) => block.value = Some(v),
                Some(Ok(v)) => errors.push(error(
                    line,
                    c,
                    ParseErrorKind::Attribute,
                    format!("value {v} outside coding range {}..{}", range.min, range.max),
                )),
                _ => errors.push(error(
                    line,
                    c,
                    ParseErrorKind::Attribute,
                    format!("value must be an integer, got `{}`", value.unwrap_or("")),
                )),
            },
            ("multi", BlockKind::Question) => {
                block.multi = true;
                match value {
                    Some("") => errors.push(error(line, c, ParseErrorKind::Attribute, "empty multi-choice label")),
                    Some(l) if block.latent.is_some() => {
                        errors.push(error(
                            line,
                            c,
                            ParseErrorKind::Attribute,
                            format!("latent-variable label given twice (`{l}`)"),
                        ));
                    }
                    Some(l) => block.latent = Some(l.to_owned()),
                    None => {}
                }
            }
            ("type" | "value" | "multi", _) => errors.push(error(
                line,
                c,
                ParseErrorKind::Attribute,
                format!("attribute `{key}` not allowed on {word} blocks"),
            )),
            _ => errors.push(error(line, c, ParseErrorKind::Attribute, format!("unknown attribute `{key}`"))),
        }
        seen_keys.push(key);
    }

    if errors.is_empty() {
        Ok(block)
    } else {
        Err(errors)
    }
}

/// `if answer N [or M ...]` → the listed codes.
fn parse_guard(item: &str, range: CodingRange) -> Result<Vec<i64>, String> {
    const SHAPE: &str = "expected `if answer N [or M ...]`";
    let mut words = item.split_whitespace();
    if words.next() != Some("if") || words.next() != Some("answer") {
        return Err(SHAPE.to_owned());
    }
    let mut values = Vec::new();
    let mut expect_value = true;
    for word in words {
        if expect_value {
            if word.contains('-') && !word.starts_with('-') {
                return Err(format!(
                    "ranges like `{word}` are not supported; list values with `or`"
                ));
            }
            let v: i64 = word
                .parse()
                .map_err(|_| format!("guard value `{word}` is not an integer"))?;
            if !range.contains(v) {
                return Err(format!(
                    "guard value {v} outside coding range {}..{}",
                    range.min, range.max
                ));
            }
            values.push(v);
        } else if word != "or" {
            return Err(format!("unexpected `{word}` in guard; {SHAPE}"));
        }
        expect_value = !expect_value;
    }
    if values.is_empty() || expect_value {
        return Err(SHAPE.to_owned());
    }
    Ok(values)
}

/// A question whose answers are still being read.
struct OpenQuestion {
    node: usize,
    line: usize,
    multi: bool,
    answers: Vec<usize>,
    types: Vec<(Option<Widget>, usize)>,
}

/// The most recent question once its answers are complete; guarded blocks
/// attach to its branches.
struct Governing {
    line: usize,
    free_text: bool,
    multi: bool,
    /// (code, answer node) per option, in display order
    options: Vec<(Option<i64>, usize)>,
    /// current tail of each option's branch
    ends: Vec<usize>,
}

struct Compiler {
    nodes: Vec<Node>,
    node_lines: Vec<usize>,
    edges: Vec<(usize, usize)>,
    errors: Vec<ParseError>,
    frontier: Vec<usize>,
    open: Option<OpenQuestion>,
    governing: Option<Governing>,
}

impl Compiler {
    fn new() -> Self {
        Compiler {
            nodes: Vec::new(),
            node_lines: Vec::new(),
            edges: Vec::new(),
            errors: Vec::new(),
            frontier: Vec::new(),
            open: None,
            governing: None,
        }
    }

    fn compile(
        mut self,
        blocks: &[ScriptBlock],
        options: &ParseOptions,
    ) -> Result<SurveyGraph, Vec<ParseError>> {
        for block in blocks {
            self.block(block);
        }
        self.close_question();
        self.check_ending();
        if !self.errors.is_empty() {
            return Err(self.errors);
        }
        let edges = self
            .edges
            .iter()
            .map(|&(f, t)| Edge {
                from: self.nodes[f].id.clone(),
                to: self.nodes[t].id.clone(),
            })
            .collect();
        let entry = self.nodes[0].id.clone();
        let mut graph = SurveyGraph::new(
            options.id.clone(),
            options.title.clone(),
            entry,
            self.nodes,
            edges,
        )
        .with_coding_range(options.coding_range);
        graph.status = options.status;
        Ok(graph)
    }

    fn push_node(&mut self, block: &ScriptBlock, kind: NodeKind) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(Node {
            id: NodeId(format!("n{}", idx + 1)),
            kind,
            content: block.body.clone(),
            latent_variable: None,
            widget: None,
            value: None,
            multi: false,
        });
        self.node_lines.push(block.line);
        idx
    }

    fn err(
        &mut self,
        line: usize,
        column: usize,
        kind: ParseErrorKind,
        message: impl Into<String>,
    ) {
        self.errors.push(error(line, column, kind, message));
    }

    fn block(&mut self, block: &ScriptBlock) {
        if block.kind == BlockKind::Answer {
            self.answer(block);
            return;
        }
        self.close_question();
        match block.kind {
            BlockKind::Question => {
                let q = self.push_node(block, NodeKind::Question);
                self.nodes[q].latent_variable = block.latent.clone();
                self.join_frontier(q);
                self.open = Some(OpenQuestion {
                    node: q,
                    line: block.line,
                    multi: block.multi,
                    answers: Vec::new(),
                    types: Vec::new(),
                });
            }
            BlockKind::Text | BlockKind::Image => {
                let kind = if block.kind == BlockKind::Text {
                    NodeKind::Text
                } else {
                    NodeKind::Image
                };
                let node = self.push_node(block, kind);
                match &block.guard {
                    Some(values) => self.conditional(node, values, block),
                    None => {
                        self.join_frontier(node);
                        self.frontier = vec![node];
                    }
                }
            }
            BlockKind::Answer => unreachable!(),
        }
    }

    fn answer(&mut self, block: &ScriptBlock) {
        let Some(open) = self.open.as_ref() else {
            let message = if self.governing.is_some() {
                "answer must directly follow its question or another answer"
            } else {
                "answer without a preceding question"
            };
            self.err(block.line, 1, ParseErrorKind::Binding, message);
            return;
        };
        let q = open.node;
        let a = self.push_node(block, NodeKind::AnswerOption);
        self.nodes[a].value = block.value;
        self.edges.push((q, a));
        let open = self.open.as_mut().expect("checked above");
        open.answers.push(a);
        open.types.push((block.widget, block.line));
    }

    /// Connects every open branch end to `node`.
    fn join_frontier(&mut self, node: usize) {
        let ends: Vec<usize> = match self.governing.take() {
            Some(g) if !g.options.is_empty() => {
                let mut seen = BTreeSet::new();
                g.ends.into_iter().filter(|e| seen.insert(*e)).collect()
            }
            _ => std::mem::take(&mut self.frontier),
        };
        for end in ends {
            self.edges.push((end, node));
        }
        self.frontier.clear();
    }

    fn close_question(&mut self) {
        let Some(open) = self.open.take() else { return };
        let q = open.node;
        if open.answers.is_empty() {
            if open.multi {
                self.err(
                    open.line,
                    1,
                    ParseErrorKind::Binding,
                    "multi-choice question has no answers",
                );
            }
            self.nodes[q].widget = Some(Widget::FreeText);
            self.frontier = vec![q];
            self.governing = Some(Governing {
                line: open.line,
                free_text: true,
                multi: false,
                options: Vec::new(),
                ends: Vec::new(),
            });
            return;
        }

        let mut declared: Option<Widget> = None;
        for &(w, line) in &open.types {
            match (declared, w) {
                (_, None) => {}
                (None, Some(w)) => declared = Some(w),
                (Some(d), Some(w)) if d != w => {
                    self.err(
                        line,
                        1,
                        ParseErrorKind::Attribute,
                        format!(
                            "answer type `{}` differs from `{}` used by other answers of the question at line {}",
                            w.as_str(),
                            d.as_str(),
                            open.line
                        ),
                    );
                }
                _ => {}
            }
        }
        let widget = declared.unwrap_or(if open.multi {
            Widget::Checkbox
        } else {
            Widget::Options
        });
        let multi = open.multi || widget == Widget::Checkbox;
        if multi && widget != Widget::Checkbox {
            self.err(
                open.line,
                1,
                ParseErrorKind::Attribute,
                format!(
                    "multi-choice question cannot use the `{}` widget",
                    widget.as_str()
                ),
            );
        }
        let coded = open.answers.iter().any(|&a| self.nodes[a].value.is_some());
        if (coded || multi) && open.answers.len() < 2 {
            self.err(
                open.line,
                1,
                ParseErrorKind::Binding,
                "a coded question needs at least two answers",
            );
        }
        if multi {
            for &a in &open.answers {
                if self.nodes[a].value.is_none() {
                    let line = self.node_lines[a];
                    self.err(
                        line,
                        1,
                        ParseErrorKind::Attribute,
                        "multi-choice answers need a `value`",
                    );
                }
            }
        }
        self.nodes[q].widget = Some(widget);
        self.nodes[q].multi = multi;

        let options: Vec<(Option<i64>, usize)> = open
            .answers
            .iter()
            .map(|&a| (self.nodes[a].value, a))
            .collect();
        let ends = options.iter().map(|&(_, a)| a).collect();
        self.governing = Some(Governing {
            line: open.line,
            free_text: false,
            multi,
            options,
            ends,
        });
    }

    fn conditional(&mut self, node: usize, values: &[i64], block: &ScriptBlock) {
        let column = block.guard_column;
        let Some(gov) = self.governing.as_ref() else {
            self.err(
                block.line,
                column,
                ParseErrorKind::Guard,
                "guarded block must follow a question's answers (branches already rejoined)",
            );
            return;
        };
        if gov.free_text {
            let line = gov.line;
            self.err(
                block.line,
                column,
                ParseErrorKind::Guard,
                format!("question at line {line} takes free text; there is no answer to match"),
            );
            return;
        }
        if gov.multi {
            let line = gov.line;
            self.err(
                block.line,
                column,
                ParseErrorKind::Guard,
                format!("question at line {line} is multi-choice; guards need a single answer"),
            );
            return;
        }

        let mut problems = Vec::new();
        for &v in values {
            if !gov.options.iter().any(|&(code, _)| code == Some(v)) {
                problems.push(format!(
                    "answer {v} matches no option of the question at line {}",
                    gov.line
                ));
            }
        }
        let matched: Vec<usize> = (0..gov.options.len())
            .filter(|&i| gov.options[i].0.is_some_and(|c| values.contains(&c)))
            .collect();
        for &i in &matched {
            let end = gov.ends[i];
            if (0..gov.ends.len()).any(|j| gov.ends[j] == end && !matched.contains(&j)) {
                problems.push(format!(
                    "guard splits branches that share the block at line {}",
                    self.node_lines[end]
                ));
                break;
            }
        }
        if !problems.is_empty() {
            for p in problems {
                self.err(block.line, column, ParseErrorKind::Guard, p);
            }
            return;
        }

        let gov = self.governing.as_mut().expect("checked above");
        let mut joined = BTreeSet::new();
        for &i in &matched {
            let end = gov.ends[i];
            if joined.insert(end) {
                self.edges.push((end, node));
            }
            gov.ends[i] = node;
        }
    }

    /// The flow must end on a text or image block: answers and free-text
    /// questions need somewhere to continue to.
    fn check_ending(&mut self) {
        let dangling: Vec<usize> = match &self.governing {
            Some(g) if !g.options.is_empty() => g.ends.clone(),
            _ => self.frontier.clone(),
        };
        let line = self.governing.as_ref().map(|g| g.line);
        if dangling
            .iter()
            .any(|&n| self.nodes[n].kind != NodeKind::Text && self.nodes[n].kind != NodeKind::Image)
        {
            let line = line.unwrap_or(1);
            self.err(
                line,
                1,
                ParseErrorKind::Binding,
                format!(
                    "question at line {line} is the end of the script; add a closing text block"
                ),
            );
        }
    }
}

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid graph: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidGraph(Vec<Violation>),
    #[error("graph cannot be written as a script at node {node}: {reason}")]
    NotLinearizable { node: NodeId, reason: String },
}

fn not_linear(node: &Node, reason: impl Into<String>) -> RenderError {
    RenderError::NotLinearizable {
        node: node.id.clone(),
        reason: reason.into(),
    }
}

/// Writes a graph as a script. Branches may differ only by guarded text or
/// image blocks before a common rejoin; anything else is `NotLinearizable`.
///
/// Parsing the output yields the input graph with nodes renumbered in script
/// order, which is the identity for graphs produced by the parser.
pub fn render_script(graph: &SurveyGraph) -> Result<String, RenderError> {
    let report = validate_graph(graph);
    if !report.is_ok() {
        return Err(RenderError::InvalidGraph(report.violations));
    }
    let index = graph.index();
    let mut out = String::new();
    let mut order: Vec<usize> = Vec::with_capacity(graph.nodes.len());
    let mut cursor = index.position(&graph.entry);

    while let Some(pos) = cursor {
        let node = index.node_at(pos);
        if order.contains(&pos) {
            return Err(not_linear(node, "node reached twice on the main line"));
        }
        write_block(&mut out, node, None)?;
        order.push(pos);
        cursor = match node.kind {
            NodeKind::Text | NodeKind::Image => index.successors_at(pos).first().copied(),
            NodeKind::AnswerOption => {
                return Err(not_linear(node, "answer option outside a question"))
            }
            NodeKind::Question if node.is_free_text() => index.successors_at(pos).first().copied(),
            NodeKind::Question => Some(render_branches(&index, pos, &mut out, &mut order)?),
        };
    }

    if order.len() != graph.nodes.len() {
        let missing = (0..graph.nodes.len())
            .find(|p| !order.contains(p))
            .unwrap_or(0);
        return Err(not_linear(
            &graph.nodes[missing],
            "node is not on the script line",
        ));
    }

    // The structural checks above cover the branch idiom; confirm the text
    // reproduces the graph (this also catches bodies and labels the block
    // syntax cannot carry).
    let expected = renumbered(graph, &order);
    match parse_script_with(&out, &ParseOptions::from_graph(graph)) {
        Ok(parsed) if parsed == expected => Ok(out),
        Ok(parsed) => {
            let bad = expected
                .nodes
                .iter()
                .zip(&parsed.nodes)
                .position(|(a, b)| a != b)
                .unwrap_or(0);
            Err(not_linear(
                &graph.nodes[order[bad.min(order.len() - 1)]],
                "content or label cannot be expressed in script syntax",
            ))
        }
        Err(errors) => {
            let line = errors[0].line;
            let node = order
                .get(line_to_block(&out, line))
                .map(|&p| &graph.nodes[p])
                .unwrap_or(&graph.nodes[0]);
            Err(not_linear(
                node,
                format!("rendered block does not parse: {}", errors[0].message),
            ))
        }
    }
}

/// Answers, then guarded blocks, of the question at `q`; returns the rejoin.
fn render_branches(
    index: &crate::flow::GraphIndex<'_>,
    q: usize,
    out: &mut String,
    order: &mut Vec<usize>,
) -> Result<usize, RenderError> {
    let question = index.node_at(q);
    let options: Vec<usize> = index.successors_at(q).to_vec();
    for &a in &options {
        write_block(out, index.node_at(a), Some(question))?;
        order.push(a);
    }

    // Each branch: the run of text/image nodes after its answer, plus the
    // first node that stops the run.
    let chains: Vec<Vec<usize>> = options
        .iter()
        .map(|&a| {
            let mut chain = Vec::new();
            let mut cur = index.successors_at(a).first().copied();
            while let Some(p) = cur {
                chain.push(p);
                let n = index.node_at(p);
                cur = match n.kind {
                    NodeKind::Text | NodeKind::Image => index.successors_at(p).first().copied(),
                    _ => None,
                };
            }
            chain
        })
        .collect();
    let rejoin = chains[0]
        .iter()
        .copied()
        .find(|p| chains[1..].iter().all(|c| c.contains(p)))
        .ok_or_else(|| not_linear(question, "branches never rejoin through text blocks alone"))?;

    let mut members: Vec<usize> = Vec::new();
    let mut through: HashMap<usize, Vec<usize>> = HashMap::new();
    for (branch, chain) in chains.iter().enumerate() {
        for &p in chain.iter().take_while(|&&p| p != rejoin) {
            if !members.contains(&p) {
                members.push(p);
            }
            through.entry(p).or_default().push(branch);
        }
    }
    if members.is_empty() {
        return Ok(rejoin);
    }
    if question.multi {
        return Err(not_linear(
            question,
            "multi-choice question with branch-specific blocks",
        ));
    }

    // guard of each conditional node = codes of the branches through it, and
    // it must catch every branch carrying one of those codes
    let mut guards: HashMap<usize, Vec<i64>> = HashMap::new();
    for &m in &members {
        let node = index.node_at(m);
        let branches = &through[&m];
        let mut codes = Vec::new();
        for &b in branches {
            match index.node_at(options[b]).value {
                Some(v) => codes.push(v),
                None => {
                    return Err(not_linear(
                        node,
                        "reached from an uncoded answer, so no guard can select it",
                    ))
                }
            }
        }
        codes.sort_unstable();
        codes.dedup();
        for (b, &a) in options.iter().enumerate() {
            let caught = index.node_at(a).value.is_some_and(|v| codes.contains(&v));
            if caught && !branches.contains(&b) {
                return Err(not_linear(
                    node,
                    "answers sharing a code take different branches",
                ));
            }
        }
        for &parent in index.parents_at(m) {
            if !members.contains(&parent) && !options.contains(&parent) {
                return Err(not_linear(
                    node,
                    "guarded block entered from outside its question",
                ));
            }
        }
        guards.insert(m, codes);
    }

    // topological order within the guarded blocks, ties by node position
    let mut pending = members.clone();
    pending.sort_unstable();
    while !pending.is_empty() {
        let pick = pending
            .iter()
            .position(|&p| {
                index
                    .parents_at(p)
                    .iter()
                    .all(|parent| !pending.contains(parent))
            })
            .ok_or_else(|| not_linear(question, "guarded blocks form no linear order"))?;
        let p = pending.remove(pick);
        write_block(out, index.node_at(p), None)?;
        let guard = &guards[&p];
        insert_guard(out, guard);
        order.push(p);
    }
    Ok(rejoin)
}

/// Rewrites the header just written (`{text}` / `{image}`) to carry a guard.
fn insert_guard(out: &mut String, guard: &[i64]) {
    let start = out[..out.len() - 1]
        .rfind("\n{")
        .map(|i| i + 1)
        .unwrap_or(0);
    let close = start + out[start..].find('}').expect("header just written");
    let list = guard
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" or ");
    out.insert_str(close, &format!(", if answer {list}"));
}

fn write_block(out: &mut String, node: &Node, question: Option<&Node>) -> Result<(), RenderError> {
    let mut header = String::from(node.kind.as_str());
    match node.kind {
        NodeKind::Question => {
            let label = node.latent_variable.as_deref();
            if let Some(l) = label {
                if l.is_empty() || l.contains([',', '}', '\n', ':']) || l != l.trim() {
                    return Err(not_linear(
                        node,
                        "latent-variable label cannot be written in a header",
                    ));
                }
            }
            match (node.multi, label) {
                (true, Some(l)) => header.push_str(&format!(", multi: {l}")),
                (true, None) => header.push_str(", multi"),
                (false, Some(l)) => header.push_str(&format!(": {l}")),
                (false, None) => {}
            }
        }
        NodeKind::AnswerOption => {
            let widget = question.and_then(|q| q.widget).unwrap_or(Widget::Options);
            if !matches!(widget, Widget::Options | Widget::Checkbox) {
                header.push_str(&format!(", type: {}", widget.as_str()));
            }
            if let Some(v) = node.value {
                header.push_str(&format!(", value: {v}"));
            }
        }
        NodeKind::Text | NodeKind::Image => {}
    }
    out.push('{');
    out.push_str(&header);
    out.push('}');
    if !node.content.is_empty() {
        out.push(' ');
        out.push_str(&node.content);
    }
    out.push('\n');
    Ok(())
}

fn renumbered(graph: &SurveyGraph, order: &[usize]) -> SurveyGraph {
    let rename: HashMap<&NodeId, NodeId> = order
        .iter()
        .enumerate()
        .map(|(i, &p)| (&graph.nodes[p].id, NodeId(format!("n{}", i + 1))))
        .collect();
    let nodes = order
        .iter()
        .map(|&p| {
            let mut n = graph.nodes[p].clone();
            n.id = rename[&n.id].clone();
            n
        })
        .collect();
    let edges = graph
        .edges
        .iter()
        .map(|e| Edge {
            from: rename[&e.from].clone(),
            to: rename[&e.to].clone(),
        })
        .collect();
    let mut renamed = SurveyGraph::new(
        graph.id.clone(),
        graph.title.clone(),
        rename[&graph.entry].clone(),
        nodes,
        edges,
    )
    .with_coding_range(graph.coding_range);
    renamed.status = graph.status;
    renamed
}

/// Index of the block whose header is on `line` (1-based) of rendered output.
fn line_to_block(script: &str, line: usize) -> usize {
    script
        .lines()
        .take(line)
        .filter(|l| l.starts_with('{'))
        .count()
        .saturating_sub(1)
}
