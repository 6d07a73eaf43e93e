//! Survey, session and response persistence.
//!
//! `FileStore` keeps everything in memory and mirrors each write to disk:
//!
//! ```text
//! <dir>/surveys/<id>.json         canonical graph documents
//! <dir>/records/<survey-id>.log   response records, one JSON object per line
//! <dir>/sessions/<survey-id>.log  session snapshots, last one per id wins
//! ```
//!
//! Logs are append-only. A trailing line cut short by a crash is dropped (and
//! truncated away) when the store is reopened.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{AnswerEvent, ChatSession, Timestamp};
use crate::flow::{
    reachable_questions, validate_graph, CodingRange, NodeId, Status, SurveyGraph, Violation,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub session_id: String,
    pub survey_id: String,
    pub question_id: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_variable: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
    pub at: Timestamp,
}

impl ResponseRecord {
    pub fn from_event(session: &ChatSession, event: &AnswerEvent) -> Self {
        ResponseRecord {
            session_id: session.id.clone(),
            survey_id: session.survey_id.clone(),
            question_id: event.question_id.clone(),
            latent_variable: event.latent_variable.clone(),
            value: event.value,
            raw_text: event.raw_text.clone(),
            at: event.at,
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("survey {0} not found")]
    NotFound(String),
    #[error("unknown survey {0}")]
    UnknownSurvey(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("survey {0} is published and cannot be changed")]
    PublishedImmutable(String),
    #[error("survey {0} is already published")]
    AlreadyPublished(String),
    #[error("invalid survey graph ({} violations)", .0.len())]
    InvalidGraph(Vec<Violation>),
    #[error("record for survey {record} does not match session's survey {session}")]
    Mismatch { record: String, session: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: corrupt entry: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Storage backend. Implementations serialize writes internally; readers see
/// a consistent prefix of the writes.
pub trait Store: Send + Sync {
    /// Stores a draft (or publishes in one step if `graph.status` says so).
    fn save_survey(&self, graph: &SurveyGraph) -> Result<(), StoreError>;
    fn load_survey(&self, id: &str) -> Result<SurveyGraph, StoreError>;
    fn survey_ids(&self) -> Vec<String>;
    /// Freezes a draft; the returned graph is the published version.
    fn publish(&self, id: &str) -> Result<SurveyGraph, StoreError>;
    fn save_session(&self, session: &ChatSession) -> Result<(), StoreError>;
    fn load_session(&self, id: &str) -> Result<ChatSession, StoreError>;
    /// Sessions of a survey in creation order.
    fn sessions(&self, survey_id: &str) -> Result<Vec<ChatSession>, StoreError>;
    fn append_records(&self, records: &[ResponseRecord]) -> Result<usize, StoreError>;
    /// Records of a survey in append order.
    fn records(&self, survey_id: &str) -> Result<Vec<ResponseRecord>, StoreError>;
}

#[derive(Default)]
struct State {
    surveys: BTreeMap<String, SurveyGraph>,
    records: HashMap<String, Vec<ResponseRecord>>,
    sessions: HashMap<String, ChatSession>,
    /// session ids per survey, creation order
    session_order: HashMap<String, Vec<String>>,
}

impl State {
    fn check_save(&self, graph: &SurveyGraph) -> Result<(), StoreError> {
        let report = validate_graph(graph);
        if !report.is_ok() {
            return Err(StoreError::InvalidGraph(report.violations));
        }
        match self.surveys.get(&graph.id) {
            Some(existing) if existing.is_published() => {
                Err(StoreError::PublishedImmutable(graph.id.clone()))
            }
            _ => Ok(()),
        }
    }

    fn check_session(&self, session: &ChatSession) -> Result<(), StoreError> {
        if !self.surveys.contains_key(&session.survey_id) {
            return Err(StoreError::UnknownSurvey(session.survey_id.clone()));
        }
        Ok(())
    }

    fn check_records(&self, records: &[ResponseRecord]) -> Result<(), StoreError> {
        for r in records {
            if !self.surveys.contains_key(&r.survey_id) {
                return Err(StoreError::UnknownSurvey(r.survey_id.clone()));
            }
            let session = self
                .sessions
                .get(&r.session_id)
                .ok_or_else(|| StoreError::UnknownSession(r.session_id.clone()))?;
            if session.survey_id != r.survey_id {
                return Err(StoreError::Mismatch {
                    record: r.survey_id.clone(),
                    session: session.survey_id.clone(),
                });
            }
        }
        Ok(())
    }

    fn put_session(&mut self, session: ChatSession) {
        if !self.sessions.contains_key(&session.id) {
            self.session_order
                .entry(session.survey_id.clone())
                .or_default()
                .push(session.id.clone());
        }
        self.sessions.insert(session.id.clone(), session);
    }

    fn sessions_of(&self, survey_id: &str) -> Result<Vec<ChatSession>, StoreError> {
        if !self.surveys.contains_key(survey_id) {
            return Err(StoreError::UnknownSurvey(survey_id.to_owned()));
        }
        Ok(self
            .session_order
            .get(survey_id)
            .map(|ids| ids.iter().map(|id| self.sessions[id].clone()).collect())
            .unwrap_or_default())
    }

    fn records_of(&self, survey_id: &str) -> Result<Vec<ResponseRecord>, StoreError> {
        if !self.surveys.contains_key(survey_id) {
            return Err(StoreError::UnknownSurvey(survey_id.to_owned()));
        }
        Ok(self.records.get(survey_id).cloned().unwrap_or_default())
    }
}

/// Volatile store for tests and previews.
#[derive(Default)]
pub struct MemoryStore {
    state: RwLock<State>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Store for MemoryStore {
    fn save_survey(&self, graph: &SurveyGraph) -> Result<(), StoreError> {
        let mut st = self.state.write();
        st.check_save(graph)?;
        st.surveys.insert(graph.id.clone(), graph.clone());
        Ok(())
    }

    fn load_survey(&self, id: &str) -> Result<SurveyGraph, StoreError> {
        self.state
            .read()
            .surveys
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(id.to_owned()))
    }

    fn survey_ids(&self) -> Vec<String> {
        self.state.read().surveys.keys().cloned().collect()
    }

    fn publish(&self, id: &str) -> Result<SurveyGraph, StoreError> {
        let mut st = self.state.write();
        let g = st
            .surveys
            .get_mut(id)
            .ok_or_else(|| StoreError::NotFound(id.to_owned()))?;
        if g.is_published() {
            return Err(StoreError::AlreadyPublished(id.to_owned()));
        }
        g.status = Status::Published;
        Ok(g.clone())
    }

    fn save_session(&self, session: &ChatSession) -> Result<(), StoreError> {
        let mut st = self.state.write();
        st.check_session(session)?;
        st.put_session(session.clone());
        Ok(())
    }

    fn load_session(&self, id: &str) -> Result<ChatSession, StoreError> {
        self.state
            .read()
            .sessions
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownSession(id.to_owned()))
    }

    fn sessions(&self, survey_id: &str) -> Result<Vec<ChatSession>, StoreError> {
        self.state.read().sessions_of(survey_id)
    }

    fn append_records(&self, records: &[ResponseRecord]) -> Result<usize, StoreError> {
        let mut st = self.state.write();
        st.check_records(records)?;
        for r in records {
            st.records
                .entry(r.survey_id.clone())
                .or_default()
                .push(r.clone());
        }
        Ok(records.len())
    }

    fn records(&self, survey_id: &str) -> Result<Vec<ResponseRecord>, StoreError> {
        self.state.read().records_of(survey_id)
    }
}

/// Durable store rooted at a directory.
pub struct FileStore {
    root: PathBuf,
    state: RwLock<State>,
    // held while touching the files so appends never interleave
    files: Mutex<()>,
}

impl FileStore {
    /// Opens (creating if needed) the store at `root` and replays its logs.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in ["surveys", "records", "sessions"] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        let mut state = State::default();

        let dir = root.join("surveys");
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let graph = crate::flow::deserialize(&text).map_err(|e| StoreError::Corrupt {
                path: path.clone(),
                line: 1,
                message: e.to_string(),
            })?;
            state.surveys.insert(graph.id.clone(), graph);
        }
        for survey in state.surveys.keys().cloned().collect::<Vec<_>>() {
            let p = session_log(&root, &survey);
            for s in read_log::<ChatSession>(&p)? {
                state.put_session(s);
            }
            let p = record_log(&root, &survey);
            let records = read_log::<ResponseRecord>(&p)?;
            if !records.is_empty() {
                state.records.insert(survey.clone(), records);
            }
        }
        Ok(FileStore {
            root,
            state: RwLock::new(state),
            files: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn write_survey_file(&self, graph: &SurveyGraph) -> Result<(), StoreError> {
        let _guard = self.files.lock();
        let path = self
            .root
            .join("surveys")
            .join(format!("{}.json", file_stem(&graph.id)));
        let tmp = path.with_extension("json.tmp");
        let doc = serde_json::to_string_pretty(graph).expect("graph serializes");
        fs::write(&tmp, doc).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    fn append_lines<T: Serialize>(&self, path: &Path, items: &[T]) -> Result<(), StoreError> {
        let _guard = self.files.lock();
        let mut buf = Vec::new();
        for item in items {
            serde_json::to_writer(&mut buf, item).expect("records serialize");
            buf.push(b'\n');
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        f.write_all(&buf).map_err(io_err(path))?;
        f.flush().map_err(io_err(path))
    }
}

/// Survey ids are used as file names; bytes outside `[A-Za-z0-9_-]` are
/// percent-escaped, which keeps the mapping injective.
fn file_stem(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for b in id.bytes() {
        if b.is_ascii_alphanumeric() || b == b'-' || b == b'_' {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn record_log(root: &Path, survey: &str) -> PathBuf {
    root.join("records")
        .join(format!("{}.log", file_stem(survey)))
}

fn session_log(root: &Path, survey: &str) -> PathBuf {
    root.join("sessions")
        .join(format!("{}.log", file_stem(survey)))
}

/// Reads a JSON-lines log. An unterminated or unparsable final line is a torn
/// write: it is dropped and the file truncated to the last complete entry.
fn read_log<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, StoreError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut items = Vec::new();
    let mut offset = 0;
    let mut line_no = 0;
    while offset < bytes.len() {
        line_no += 1;
        let end = bytes[offset..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| offset + i);
        let line = &bytes[offset..end.unwrap_or(bytes.len())];
        let parsed = serde_json::from_slice::<T>(line);
        match (end, parsed) {
            (Some(end), Ok(item)) => {
                items.push(item);
                offset = end + 1;
            }
            (Some(end), Err(_)) if line.iter().all(u8::is_ascii_whitespace) => offset = end + 1,
            (Some(end), Err(e)) if end + 1 < bytes.len() => {
                return Err(StoreError::Corrupt {
                    path: path.to_owned(),
                    line: line_no,
                    message: e.to_string(),
                });
            }
            _ => {
                let f = OpenOptions::new()
                    .write(true)
                    .open(path)
                    .map_err(io_err(path))?;
                f.set_len(offset as u64).map_err(io_err(path))?;
                break;
            }
        }
    }
    Ok(items)
}

impl Store for FileStore {
    fn save_survey(&self, graph: &SurveyGraph) -> Result<(), StoreError> {
        let mut st = self.state.write();
        st.check_save(graph)?;
        self.write_survey_file(graph)?;
        st.surveys.insert(graph.id.clone(), graph.clone());
        Ok(())
    }

    fn load_survey(&self, id: &str) -> Result<SurveyGraph, StoreError> {
        self.state
            .read()
            .surveys
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(id.to_owned()))
    }

    fn survey_ids(&self) -> Vec<String> {
        self.state.read().surveys.keys().cloned().collect()
    }

    fn publish(&self, id: &str) -> Result<SurveyGraph, StoreError> {
        let mut st = self.state.write();
        let mut g = st
            .surveys
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(id.to_owned()))?;
        if g.is_published() {
            return Err(StoreError::AlreadyPublished(id.to_owned()));
        }
        g.status = Status::Published;
        self.write_survey_file(&g)?;
        st.surveys.insert(id.to_owned(), g.clone());
        Ok(g)
    }

    fn save_session(&self, session: &ChatSession) -> Result<(), StoreError> {
        let mut st = self.state.write();
        st.check_session(session)?;
        self.append_lines(
            &session_log(&self.root, &session.survey_id),
            std::slice::from_ref(session),
        )?;
        st.put_session(session.clone());
        Ok(())
    }

    fn load_session(&self, id: &str) -> Result<ChatSession, StoreError> {
        self.state
            .read()
            .sessions
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownSession(id.to_owned()))
    }

    fn sessions(&self, survey_id: &str) -> Result<Vec<ChatSession>, StoreError> {
        self.state.read().sessions_of(survey_id)
    }

    fn append_records(&self, records: &[ResponseRecord]) -> Result<usize, StoreError> {
        let mut st = self.state.write();
        st.check_records(records)?;
        let mut by_survey: BTreeMap<&str, Vec<&ResponseRecord>> = BTreeMap::new();
        for r in records {
            by_survey.entry(&r.survey_id).or_default().push(r);
        }
        for (survey, rs) in by_survey {
            self.append_lines(&record_log(&self.root, survey), &rs)?;
        }
        for r in records {
            st.records
                .entry(r.survey_id.clone())
                .or_default()
                .push(r.clone());
        }
        Ok(records.len())
    }

    fn records(&self, survey_id: &str) -> Result<Vec<ResponseRecord>, StoreError> {
        self.state.read().records_of(survey_id)
    }
}

/// Missing cells are `None`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseMatrix {
    pub respondents: Vec<String>,
    pub items: Vec<NodeId>,
    pub cells: Vec<Vec<Option<i64>>>,
    pub coding_range: CodingRange,
}

impl ResponseMatrix {
    pub fn new(cells: Vec<Vec<Option<i64>>>, coding_range: CodingRange) -> Self {
        let k = cells.first().map_or(0, Vec::len);
        ResponseMatrix {
            respondents: (1..=cells.len()).map(|i| format!("r{i}")).collect(),
            items: (1..=k).map(|j| NodeId(format!("i{j}"))).collect(),
            cells,
            coding_range,
        }
    }

    /// A complete matrix from plain values.
    pub fn from_rows<R: AsRef<[i64]>>(rows: &[R]) -> Self {
        let cells = rows
            .iter()
            .map(|r| r.as_ref().iter().copied().map(Some).collect())
            .collect();
        Self::new(cells, CodingRange::default())
    }

    pub fn rows(&self) -> usize {
        self.cells.len()
    }

    pub fn cols(&self) -> usize {
        self.items.len()
    }

    pub fn column(&self, j: usize) -> Vec<Option<i64>> {
        self.cells.iter().map(|r| r[j]).collect()
    }

    /// Rows without missing cells.
    pub fn complete_rows(&self) -> Vec<&[Option<i64>]> {
        self.cells
            .iter()
            .filter(|r| r.iter().all(Option::is_some))
            .map(Vec::as_slice)
            .collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        ResponseMatrix {
            respondents: rows.iter().map(|&i| self.respondents[i].clone()).collect(),
            items: self.items.clone(),
            cells: rows.iter().map(|&i| self.cells[i].clone()).collect(),
            coding_range: self.coding_range,
        }
    }
}

/// Questions that feed the matrix: single-choice with at least one coded
/// option, in topological order.
pub fn coded_questions(graph: &SurveyGraph) -> Result<Vec<NodeId>, crate::flow::FlowError> {
    let index = graph.index();
    Ok(reachable_questions(graph)?
        .into_iter()
        .filter(|q| {
            let node = index.get(q).expect("listed question exists");
            !node.multi
                && !node.is_free_text()
                && index.options(q).iter().any(|o| o.value.is_some())
        })
        .collect())
}

/// Respondents × coded questions. Rows are ordered by start time, then id.
pub fn matrix_from(
    graph: &SurveyGraph,
    sessions: &[ChatSession],
    records: &[ResponseRecord],
    completed_only: bool,
) -> ResponseMatrix {
    let items = coded_questions(graph).unwrap_or_default();
    let mut rows: Vec<&ChatSession> = sessions
        .iter()
        .filter(|s| !completed_only || s.finished_at.is_some())
        .collect();
    rows.sort_by(|a, b| {
        a.started_at
            .cmp(&b.started_at)
            .then_with(|| a.id.cmp(&b.id))
    });
    let col: HashMap<&NodeId, usize> = items.iter().enumerate().map(|(j, q)| (q, j)).collect();
    let row: HashMap<&str, usize> = rows
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    let mut cells = vec![vec![None; items.len()]; rows.len()];
    for r in records {
        if let (Some(&i), Some(&j)) = (row.get(r.session_id.as_str()), col.get(&r.question_id)) {
            if r.value.is_some() {
                cells[i][j] = r.value;
            }
        }
    }
    ResponseMatrix {
        respondents: rows.iter().map(|s| s.id.clone()).collect(),
        items,
        cells,
        coding_range: graph.coding_range,
    }
}

pub fn build_matrix(
    store: &dyn Store,
    survey_id: &str,
    completed_only: bool,
) -> Result<ResponseMatrix, StoreError> {
    let graph = store
        .load_survey(survey_id)
        .map_err(|_| StoreError::UnknownSurvey(survey_id.to_owned()))?;
    let sessions = store.sessions(survey_id)?;
    let records = store.records(survey_id)?;
    Ok(matrix_from(&graph, &sessions, &records, completed_only))
}

pub const CSV_HEADER: [&str; 7] = [
    "session_id",
    "question_id",
    "latent_variable",
    "question_text",
    "answer_value",
    "answer_text",
    "timestamp",
];

/// RFC-4180 CSV (CRLF line ends, quoting as needed), one row per record.
pub fn records_to_csv(graph: &SurveyGraph, records: &[ResponseRecord]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in records {
        let question_text = graph
            .node(&r.question_id)
            .map(|n| n.content.as_str())
            .unwrap_or("");
        let value = r.value.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([
            r.session_id.as_str(),
            r.question_id.as_str(),
            r.latent_variable.as_deref().unwrap_or(""),
            question_text,
            value.as_str(),
            r.raw_text.as_deref().unwrap_or(""),
            r.at.to_rfc3339().as_str(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush"))
        .expect("csv of UTF-8 fields is UTF-8")
}

pub fn export_csv(store: &dyn Store, survey_id: &str) -> Result<String, StoreError> {
    let graph = store
        .load_survey(survey_id)
        .map_err(|_| StoreError::UnknownSurvey(survey_id.to_owned()))?;
    Ok(records_to_csv(&graph, &store.records(survey_id)?))
}

/// One row of an exported CSV, read back.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct CsvRow {
    pub session_id: String,
    pub question_id: String,
    pub latent_variable: String,
    pub question_text: String,
    pub answer_value: Option<i64>,
    pub answer_text: String,
    pub timestamp: String,
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("missing column {0}")]
    MissingColumn(&'static str),
}

pub fn read_csv(reader: impl io::Read) -> Result<Vec<CsvRow>, CsvError> {
    let mut r = csv::ReaderBuilder::new().from_reader(reader);
    let headers = r.headers().map_err(|e| CsvError::Malformed {
        line: 1,
        message: e.to_string(),
    })?;
    for col in CSV_HEADER {
        if !headers.iter().any(|h| h == col) {
            return Err(CsvError::MissingColumn(col));
        }
    }
    r.deserialize()
        .map(|row| {
            row.map_err(|e| CsvError::Malformed {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })
        })
        .collect()
}
