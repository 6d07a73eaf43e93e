//! Deterministic execution of a published survey as a chat.
//!
//! The engine never reads a clock: callers pass timestamps in, so a session
//! is a pure function of (graph, selections, timestamps).

use std::fmt;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{
    validate_graph, GraphIndex, Node, NodeId, NodeKind, SurveyGraph, Violation, Widget,
};

/// Milliseconds since the Unix epoch, UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn now() -> Self {
        Timestamp(Utc::now().timestamp_millis())
    }

    pub fn from_secs(secs: i64) -> Self {
        Timestamp(secs * 1000)
    }

    pub fn plus_ms(self, ms: i64) -> Self {
        Timestamp(self.0 + ms)
    }

    /// ISO-8601 with millisecond precision, e.g. `2021-03-01T09:30:00.000Z`.
    pub fn to_rfc3339(self) -> String {
        DateTime::<Utc>::from_timestamp_millis(self.0)
            .unwrap_or_default()
            .to_rfc3339_opts(SecondsFormat::Millis, true)
    }

    pub fn parse_rfc3339(s: &str) -> Option<Self> {
        DateTime::parse_from_rfc3339(s)
            .ok()
            .map(|dt| Timestamp(dt.with_timezone(&Utc).timestamp_millis()))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_rfc3339())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    Text,
    Image,
    QuestionPrompt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub node_id: NodeId,
    pub kind: MessageKind,
    pub content: String,
    pub delay_hint_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub id: NodeId,
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<i64>,
}

/// What the client must send next.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Expects {
    None,
    SingleChoice {
        widget: Widget,
        options: Vec<Choice>,
    },
    MultiChoice {
        options: Vec<Choice>,
    },
    FreeText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRun {
    pub messages: Vec<Message>,
    pub expects: Expects,
}

/// Per-survey message pacing. Text and image messages carry `text_delay_ms`;
/// question prompts are shown immediately.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pacing {
    pub text_delay_ms: u64,
}

impl Default for Pacing {
    fn default() -> Self {
        Pacing { text_delay_ms: 800 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cursor {
    At(NodeId),
    Finished,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerEvent {
    pub question_id: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_variable: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<i64>,
    /// Free text, the chosen label, or for multi-choice the chosen codes
    /// joined with `;` in ascending order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
    /// Answer options picked; empty for free text.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub selected: Vec<NodeId>,
    pub at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatSession {
    pub id: String,
    pub survey_id: String,
    pub cursor: Cursor,
    pub answers: Vec<AnswerEvent>,
    pub started_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<Timestamp>,
}

impl ChatSession {
    pub fn is_finished(&self) -> bool {
        self.cursor == Cursor::Finished
    }
}

/// A respondent's reply to the current question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    /// Coded single choice, by value.
    Value(i64),
    /// Single choice by option id; the only way to pick an uncoded option.
    Option(NodeId),
    /// Multi-choice codes.
    Values(Vec<i64>),
    Text(String),
}

impl Selection {
    fn shape(&self) -> &'static str {
        match self {
            Selection::Value(_) | Selection::Option(_) => "single-choice",
            Selection::Values(_) => "multi-choice",
            Selection::Text(_) => "free-text",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("survey {0} is not published")]
    UnpublishedSurvey(String),
    #[error("invalid survey graph ({} violations)", .0.len())]
    InvalidGraph(Vec<Violation>),
    #[error("session belongs to survey {session}, not {graph}")]
    SurveyMismatch { session: String, graph: String },
    #[error("session is finished")]
    SessionFinished,
    #[error("session is not finished")]
    SessionNotFinished,
    #[error("invalid selection for question {question}: {reason}")]
    InvalidSelection { question: NodeId, reason: String },
    #[error("question {question} expects a {expected} answer, got {got}")]
    ShapeMismatch {
        question: NodeId,
        expected: &'static str,
        got: &'static str,
    },
}

pub fn start_session(
    graph: &SurveyGraph,
    session_id: impl Into<String>,
    now: Timestamp,
) -> Result<(ChatSession, MessageRun), EngineError> {
    start_session_with(graph, session_id, now, Pacing::default())
}

pub fn start_session_with(
    graph: &SurveyGraph,
    session_id: impl Into<String>,
    now: Timestamp,
    pacing: Pacing,
) -> Result<(ChatSession, MessageRun), EngineError> {
    if !graph.is_published() {
        return Err(EngineError::UnpublishedSurvey(graph.id.clone()));
    }
    let report = validate_graph(graph);
    if !report.is_ok() {
        return Err(EngineError::InvalidGraph(report.violations));
    }
    let index = graph.index();
    let (run, cursor) = walk(&index, index.position(&graph.entry), pacing);
    let finished_at = (cursor == Cursor::Finished).then_some(now);
    let session = ChatSession {
        id: session_id.into(),
        survey_id: graph.id.clone(),
        cursor,
        answers: Vec::new(),
        started_at: now,
        finished_at,
    };
    Ok((session, run))
}

pub fn submit_answer(
    session: &mut ChatSession,
    graph: &SurveyGraph,
    selection: &Selection,
    now: Timestamp,
) -> Result<MessageRun, EngineError> {
    submit_answer_with(session, graph, selection, now, Pacing::default())
}

/// Records the answer and advances. A rejected answer leaves the session
/// untouched.
pub fn submit_answer_with(
    session: &mut ChatSession,
    graph: &SurveyGraph,
    selection: &Selection,
    now: Timestamp,
    pacing: Pacing,
) -> Result<MessageRun, EngineError> {
    if session.survey_id != graph.id {
        return Err(EngineError::SurveyMismatch {
            session: session.survey_id.clone(),
            graph: graph.id.clone(),
        });
    }
    let Cursor::At(qid) = &session.cursor else {
        return Err(EngineError::SessionFinished);
    };
    let index = graph.index();
    let qpos = index
        .position(qid)
        .ok_or_else(|| EngineError::InvalidSelection {
            question: qid.clone(),
            reason: "cursor points at a node missing from the graph".to_owned(),
        })?;
    let question = index.node_at(qpos);
    let (event, next) = resolve(&index, qpos, selection, now)?;
    let (run, cursor) = walk(&index, next, pacing);
    debug_assert!(question.is_question());
    session.answers.push(event);
    if cursor == Cursor::Finished {
        session.finished_at = Some(now);
    }
    session.cursor = cursor;
    Ok(run)
}

/// Checks `selection` against the question and returns the answer event plus
/// the node the conversation continues from.
fn resolve(
    index: &GraphIndex<'_>,
    qpos: usize,
    selection: &Selection,
    at: Timestamp,
) -> Result<(AnswerEvent, Option<usize>), EngineError> {
    let question = index.node_at(qpos);
    let invalid = |reason: String| EngineError::InvalidSelection {
        question: question.id.clone(),
        reason,
    };
    let expected = if question.is_free_text() {
        "free-text"
    } else if question.multi {
        "multi-choice"
    } else {
        "single-choice"
    };
    if selection.shape() != expected {
        return Err(EngineError::ShapeMismatch {
            question: question.id.clone(),
            expected,
            got: selection.shape(),
        });
    }
    let mut event = AnswerEvent {
        question_id: question.id.clone(),
        latent_variable: question.latent_variable.clone(),
        value: None,
        raw_text: None,
        selected: Vec::new(),
        at,
    };
    let options: Vec<usize> = index.successors_at(qpos).to_vec();
    let single = |pos: usize| -> Option<usize> { index.successors_at(pos).first().copied() };

    let next = match selection {
        Selection::Text(text) => {
            event.raw_text = Some(text.clone());
            single(qpos)
        }
        Selection::Value(v) => {
            let pos = options
                .iter()
                .copied()
                .find(|&p| index.node_at(p).value == Some(*v))
                .ok_or_else(|| invalid(format!("no option has value {v}")))?;
            pick(&mut event, index.node_at(pos));
            single(pos)
        }
        Selection::Option(id) => {
            let pos = options
                .iter()
                .copied()
                .find(|&p| &index.node_at(p).id == id)
                .ok_or_else(|| invalid(format!("{id} is not an option of this question")))?;
            pick(&mut event, index.node_at(pos));
            single(pos)
        }
        Selection::Values(values) => {
            if values.is_empty() {
                return Err(invalid("select at least one option".to_owned()));
            }
            let mut sorted = values.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(invalid("an option was selected twice".to_owned()));
            }
            let mut chosen = Vec::with_capacity(sorted.len());
            for v in &sorted {
                let pos = options
                    .iter()
                    .copied()
                    .find(|&p| index.node_at(p).value == Some(*v))
                    .ok_or_else(|| invalid(format!("no option has value {v}")))?;
                chosen.push(pos);
            }
            event.selected = chosen
                .iter()
                .map(|&p| index.node_at(p).id.clone())
                .collect();
            event.raw_text = Some(
                sorted
                    .iter()
                    .map(i64::to_string)
                    .collect::<Vec<_>>()
                    .join(";"),
            );
            // all options of a multi-choice question share one successor
            single(chosen[0])
        }
    };
    Ok((event, next))
}

fn pick(event: &mut AnswerEvent, option: &Node) {
    event.value = option.value;
    event.raw_text = Some(option.content.clone());
    event.selected = vec![option.id.clone()];
}

/// Emits consecutive text/image nodes from `start` up to and including the
/// next question prompt.
fn walk(index: &GraphIndex<'_>, start: Option<usize>, pacing: Pacing) -> (MessageRun, Cursor) {
    let mut messages = Vec::new();
    let mut cur = start;
    while let Some(pos) = cur {
        let node = index.node_at(pos);
        match node.kind {
            NodeKind::Text | NodeKind::Image => {
                messages.push(Message {
                    node_id: node.id.clone(),
                    kind: if node.kind == NodeKind::Text {
                        MessageKind::Text
                    } else {
                        MessageKind::Image
                    },
                    content: node.content.clone(),
                    delay_hint_ms: pacing.text_delay_ms,
                });
                cur = index.successors_at(pos).first().copied();
            }
            NodeKind::Question => {
                messages.push(Message {
                    node_id: node.id.clone(),
                    kind: MessageKind::QuestionPrompt,
                    content: node.content.clone(),
                    delay_hint_ms: 0,
                });
                let expects = expects_of(index, pos);
                return (
                    MessageRun { messages, expects },
                    Cursor::At(node.id.clone()),
                );
            }
            // unreachable in a valid graph: answers only follow questions
            NodeKind::AnswerOption => break,
        }
    }
    (
        MessageRun {
            messages,
            expects: Expects::None,
        },
        Cursor::Finished,
    )
}

fn expects_of(index: &GraphIndex<'_>, qpos: usize) -> Expects {
    let question = index.node_at(qpos);
    if question.is_free_text() {
        return Expects::FreeText;
    }
    let options = index
        .successors_at(qpos)
        .iter()
        .map(|&p| {
            let n = index.node_at(p);
            Choice {
                id: n.id.clone(),
                label: n.content.clone(),
                value: n.value,
            }
        })
        .collect();
    if question.multi {
        Expects::MultiChoice { options }
    } else {
        Expects::SingleChoice {
            widget: question.widget.unwrap_or(Widget::Options),
            options,
        }
    }
}

pub fn elapsed_seconds(session: &ChatSession) -> Result<f64, EngineError> {
    let finished = session.finished_at.ok_or(EngineError::SessionNotFinished)?;
    Ok(((finished.0 - session.started_at.0) as f64 / 1000.0).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "from", rename_all = "lowercase")]
pub enum TranscriptEntry {
    Bot(Message),
    Respondent { question_id: NodeId, text: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for entry in &self.entries {
            match entry {
                TranscriptEntry::Bot(m) => {
                    let tag = match m.kind {
                        MessageKind::Text => "bot",
                        MessageKind::Image => "bot[image]",
                        MessageKind::QuestionPrompt => "bot[question]",
                    };
                    writeln!(f, "{tag}: {}", m.content)?;
                }
                TranscriptEntry::Respondent { text, .. } => writeln!(f, "you: {text}")?,
            }
        }
        Ok(())
    }
}

/// Rebuilds everything shown in the session so far by replaying its answers.
/// Depends only on the graph and the recorded selections.
pub fn transcript(session: &ChatSession, graph: &SurveyGraph) -> Transcript {
    transcript_with(session, graph, Pacing::default())
}

pub fn transcript_with(session: &ChatSession, graph: &SurveyGraph, pacing: Pacing) -> Transcript {
    let index = graph.index();
    let mut entries = Vec::new();
    let (run, _) = walk(&index, index.position(&graph.entry), pacing);
    entries.extend(run.messages.into_iter().map(TranscriptEntry::Bot));
    for answer in &session.answers {
        let text = answer.raw_text.clone().unwrap_or_default();
        entries.push(TranscriptEntry::Respondent {
            question_id: answer.question_id.clone(),
            text,
        });
        let next = match answer.selected.first() {
            Some(option) => index.position(option),
            None => index.position(&answer.question_id),
        }
        .and_then(|p| index.successors_at(p).first().copied());
        let (run, _) = walk(&index, next, pacing);
        entries.extend(run.messages.into_iter().map(TranscriptEntry::Bot));
    }
    Transcript { entries }
}

/// Drives a fresh session through `selections`, one second apart.
pub fn replay(
    graph: &SurveyGraph,
    session_id: &str,
    selections: &[Selection],
) -> Result<(ChatSession, Transcript), EngineError> {
    let start = Timestamp(0);
    let (mut session, _) = start_session(graph, session_id, start)?;
    for (i, sel) in selections.iter().enumerate() {
        submit_answer(
            &mut session,
            graph,
            sel,
            start.plus_ms(1000 * (i as i64 + 1)),
        )?;
    }
    let t = transcript(&session, graph);
    Ok((session, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_script;
    use crate::flow::Status;

    fn published(src: &str) -> SurveyGraph {
        let mut g = parse_script(src).unwrap();
        g.status = Status::Published;
        g
    }

    const MOOD: &str = "\
{text} Hello
{image} https://example.org/wave.gif
{question: Mood} How are you?
{answer, value: 1} bad
{answer, value: 3} fine
{answer, value: 5} great
{text, if answer 1} Sorry to hear
{question} Anything else?
{question, multi: Channels} Where do you chat?
{answer, value: 1} web
{answer, value: 2} phone
{text} Bye
";

    #[test]
    fn draft_surveys_cannot_start() {
        let g = parse_script(MOOD).unwrap();
        assert_eq!(
            start_session(&g, "s", Timestamp(0)).unwrap_err(),
            EngineError::UnpublishedSurvey("survey".into())
        );
    }

    #[test]
    fn runs_and_branches() {
        let g = published(MOOD);
        let (mut s, run) = start_session(&g, "s1", Timestamp(0)).unwrap();
        let kinds: Vec<_> = run
            .messages
            .iter()
            .map(|m| (m.kind, m.delay_hint_ms))
            .collect();
        assert_eq!(
            kinds,
            vec![
                (MessageKind::Text, 800),
                (MessageKind::Image, 800),
                (MessageKind::QuestionPrompt, 0)
            ]
        );
        assert!(
            matches!(run.expects, Expects::SingleChoice { widget: Widget::Options, ref options } if options.len() == 3)
        );

        let err = submit_answer(&mut s, &g, &Selection::Value(9), Timestamp(1)).unwrap_err();
        assert!(matches!(err, EngineError::InvalidSelection { .. }));
        let err =
            submit_answer(&mut s, &g, &Selection::Text("meh".into()), Timestamp(1)).unwrap_err();
        assert!(matches!(err, EngineError::ShapeMismatch { .. }));
        assert!(s.answers.is_empty());

        let run = submit_answer(&mut s, &g, &Selection::Value(1), Timestamp(1)).unwrap();
        assert_eq!(run.messages[0].content, "Sorry to hear");
        assert_eq!(run.expects, Expects::FreeText);
        let run = submit_answer(
            &mut s,
            &g,
            &Selection::Text("no, all good".into()),
            Timestamp(2),
        )
        .unwrap();
        assert!(matches!(run.expects, Expects::MultiChoice { .. }));
        let run = submit_answer(
            &mut s,
            &g,
            &Selection::Values(vec![2, 1]),
            Timestamp(93_000),
        )
        .unwrap();
        assert_eq!(run.expects, Expects::None);
        assert_eq!(run.messages[0].content, "Bye");
        assert!(s.is_finished());
        assert_eq!(s.answers[2].raw_text.as_deref(), Some("1;2"));
        assert_eq!(s.answers[2].value, None);
        assert_eq!(elapsed_seconds(&s).unwrap(), 93.0);
        assert_eq!(
            submit_answer(&mut s, &g, &Selection::Value(1), Timestamp(94_000)).unwrap_err(),
            EngineError::SessionFinished
        );
    }

    #[test]
    fn value_three_skips_conditional_text() {
        let g = published(MOOD);
        let (mut s, _) = start_session(&g, "s", Timestamp(0)).unwrap();
        let run = submit_answer(&mut s, &g, &Selection::Value(3), Timestamp(1)).unwrap();
        assert_eq!(run.messages.len(), 1);
        assert_eq!(run.messages[0].kind, MessageKind::QuestionPrompt);
    }

    #[test]
    fn text_only_graph_finishes_immediately() {
        let g = published("{text} a\n{text} b");
        let (s, run) = start_session(&g, "s", Timestamp(5)).unwrap();
        assert!(s.is_finished());
        assert_eq!(run.messages.len(), 2);
        assert_eq!(elapsed_seconds(&s).unwrap(), 0.0);
    }

    #[test]
    fn question_entry_gives_prompt_only() {
        let g = published("{question} Name?\n{text} thanks");
        let (s, run) = start_session(&g, "s", Timestamp(0)).unwrap();
        assert_eq!(run.messages.len(), 1);
        assert_eq!(s.cursor, Cursor::At(NodeId::from("n1")));
        assert_eq!(
            elapsed_seconds(&s).unwrap_err(),
            EngineError::SessionNotFinished
        );
    }

    #[test]
    fn uncoded_options_by_id() {
        let g = published("{question} Ready?\n{answer} Sure\n{text} go");
        let (mut s, _) = start_session(&g, "s", Timestamp(0)).unwrap();
        assert!(matches!(
            submit_answer(&mut s, &g, &Selection::Value(1), Timestamp(1)),
            Err(EngineError::InvalidSelection { .. })
        ));
        submit_answer(&mut s, &g, &Selection::Option("n2".into()), Timestamp(1)).unwrap();
        assert_eq!(s.answers[0].value, None);
        assert_eq!(s.answers[0].raw_text.as_deref(), Some("Sure"));
    }

    #[test]
    fn transcript_replays_identically() {
        let g = published(MOOD);
        let answers = [
            Selection::Value(1),
            Selection::Text("x, y".into()),
            Selection::Values(vec![1]),
        ];
        let (s, t1) = replay(&g, "a", &answers).unwrap();
        let (_, t2) = replay(&g, "b", &answers).unwrap();
        assert_eq!(t1.to_string(), t2.to_string());
        assert_eq!(t1, transcript(&s, &g));
        let empty = start_session(&g, "c", Timestamp(0)).unwrap().0;
        assert_eq!(transcript(&empty, &g).entries.len(), 3);
    }

    #[test]
    fn session_json_round_trip() {
        let g = published(MOOD);
        let (s, _) = replay(&g, "a", &[Selection::Value(5)]).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains(r#""cursor":{"at":"n8"}"#), "{json}");
        assert_eq!(serde_json::from_str::<ChatSession>(&json).unwrap(), s);
        assert_eq!(
            Timestamp(1_614_591_000_000).to_rfc3339(),
            "2021-03-01T09:30:00.000Z"
        );
    }
}
