//! Per-survey summary: started/completed counts, latent-variable means,
//! completion-time quartiles, per-question answer histograms and any tests
//! the caller adds.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::{quartiles, round_to, Quartiles, TestResult};
use crate::engine::Timestamp;
use crate::flow::{CodingRange, NodeId};
use crate::store::{CsvRow, ResponseMatrix, ResponseRecord, Store, StoreError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionSummary {
    pub id: String,
    pub started_at: Timestamp,
    pub finished_at: Option<Timestamp>,
}

/// What the summary needs to know about one survey's data.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyView {
    pub survey_id: String,
    pub coding_range: CodingRange,
    pub sessions: Vec<SessionSummary>,
    pub records: Vec<ResponseRecord>,
}

impl SurveyView {
    pub fn from_store(store: &dyn Store, survey_id: &str) -> Result<Self, StoreError> {
        let graph = store
            .load_survey(survey_id)
            .map_err(|_| StoreError::UnknownSurvey(survey_id.to_owned()))?;
        let sessions = store
            .sessions(survey_id)?
            .into_iter()
            .map(|s| SessionSummary {
                id: s.id,
                started_at: s.started_at,
                finished_at: s.finished_at,
            })
            .collect();
        Ok(SurveyView {
            survey_id: survey_id.to_owned(),
            coding_range: graph.coding_range,
            sessions,
            records: store.records(survey_id)?,
        })
    }

    /// Rebuilds a view from an exported CSV. The export has no session
    /// table, so each session is taken to span its first to last answer and
    /// to be complete.
    pub fn from_csv(survey_id: &str, rows: &[CsvRow], coding_range: CodingRange) -> Self {
        let mut sessions: Vec<SessionSummary> = Vec::new();
        let mut pos: HashMap<&str, usize> = HashMap::new();
        let mut records = Vec::with_capacity(rows.len());
        for row in rows {
            let at = Timestamp::parse_rfc3339(&row.timestamp).unwrap_or(Timestamp(0));
            match pos.get(row.session_id.as_str()) {
                Some(&i) => {
                    let s = &mut sessions[i];
                    s.started_at = s.started_at.min(at);
                    s.finished_at = Some(s.finished_at.map_or(at, |f| f.max(at)));
                }
                None => {
                    pos.insert(&row.session_id, sessions.len());
                    sessions.push(SessionSummary {
                        id: row.session_id.clone(),
                        started_at: at,
                        finished_at: Some(at),
                    });
                }
            }
            let opt = |s: &str| (!s.is_empty()).then(|| s.to_owned());
            records.push(ResponseRecord {
                session_id: row.session_id.clone(),
                survey_id: survey_id.to_owned(),
                question_id: NodeId(row.question_id.clone()),
                latent_variable: opt(&row.latent_variable),
                value: row.answer_value,
                raw_text: opt(&row.answer_text),
                at,
            });
        }
        SurveyView {
            survey_id: survey_id.to_owned(),
            coding_range,
            sessions,
            records,
        }
    }

    /// Respondents × questions that received at least one coded answer, in
    /// order of first appearance; rows ordered by start time, then id.
    pub fn matrix(&self, completed_only: bool) -> ResponseMatrix {
        let mut items: Vec<NodeId> = Vec::new();
        let mut seen = HashSet::new();
        for r in &self.records {
            if r.value.is_some() && seen.insert(&r.question_id) {
                items.push(r.question_id.clone());
            }
        }
        let mut rows: Vec<&SessionSummary> = self
            .sessions
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
        for r in &self.records {
            if let (Some(&i), Some(&j), Some(v)) = (
                row.get(r.session_id.as_str()),
                col.get(&r.question_id),
                r.value,
            ) {
                cells[i][j] = Some(v);
            }
        }
        ResponseMatrix {
            respondents: rows.iter().map(|s| s.id.clone()).collect(),
            items,
            cells,
            coding_range: self.coding_range,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub survey_id: String,
    pub started: usize,
    pub completed: usize,
    pub per_latent_mean: BTreeMap<String, f64>,
    pub compile_time_quartiles: Option<Quartiles>,
    /// question id → code → number of answers with that code
    pub per_question_histogram: BTreeMap<String, BTreeMap<i64, u64>>,
    pub tests: Vec<TestResult>,
}

pub fn descriptive_summary(view: &SurveyView) -> StatReport {
    let completed: HashSet<&str> = view
        .sessions
        .iter()
        .filter(|s| s.finished_at.is_some())
        .map(|s| s.id.as_str())
        .collect();

    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut histogram: BTreeMap<String, BTreeMap<i64, u64>> = BTreeMap::new();
    for r in &view.records {
        let Some(v) = r.value else { continue };
        let h = histogram
            .entry(r.question_id.to_string())
            .or_insert_with(|| {
                (view.coding_range.min..=view.coding_range.max)
                    .map(|c| (c, 0))
                    .collect()
            });
        *h.entry(v).or_default() += 1;
        if let Some(latent) = &r.latent_variable {
            if completed.contains(r.session_id.as_str()) {
                let e = sums.entry(latent.clone()).or_default();
                e.0 += v as f64;
                e.1 += 1;
            }
        }
    }

    let durations: Vec<f64> = view
        .sessions
        .iter()
        .filter_map(|s| {
            s.finished_at
                .map(|f| (f.0 - s.started_at.0).max(0) as f64 / 1000.0)
        })
        .collect();

    StatReport {
        survey_id: view.survey_id.clone(),
        started: view.sessions.len(),
        completed: completed.len(),
        per_latent_mean: sums
            .into_iter()
            .map(|(k, (s, n))| (k, s / n as f64))
            .collect(),
        compile_time_quartiles: quartiles(&durations),
        per_question_histogram: histogram,
        tests: Vec::new(),
    }
}

impl fmt::Display for StatReport {
    /// Plain-text table; means to 2 decimals, alphas and p-values to 3.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "survey     {}", self.survey_id)?;
        writeln!(f, "started    {}", self.started)?;
        writeln!(f, "completed  {}", self.completed)?;
        if let Some(q) = self.compile_time_quartiles {
            writeln!(
                f,
                "time (s)   q1 {:.1}  median {:.1}  q3 {:.1}",
                q.q1, q.median, q.q3
            )?;
        }
        if !self.per_latent_mean.is_empty() {
            writeln!(f, "\nlatent variable                          mean")?;
            for (k, v) in &self.per_latent_mean {
                writeln!(f, "{k:<40} {:.2}", round_to(*v, 2))?;
            }
        }
        if !self.per_question_histogram.is_empty() {
            let codes: Vec<i64> = self
                .per_question_histogram
                .values()
                .flat_map(|h| h.keys().copied())
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            let mut header = format!("\n{:<12}", "question");
            for c in &codes {
                let _ = write!(header, "{c:>6}");
            }
            writeln!(f, "{header}")?;
            for (q, h) in &self.per_question_histogram {
                let mut line = format!("{q:<12}");
                for c in &codes {
                    let _ = write!(line, "{:>6}", h.get(c).copied().unwrap_or(0));
                }
                writeln!(f, "{line}")?;
            }
        }
        if !self.tests.is_empty() {
            writeln!(f, "\n{:<30} {:>10} {:>8}", "test", "statistic", "p")?;
            for t in &self.tests {
                let p = t
                    .p_value
                    .map_or("-".to_owned(), |p| format!("{:.3}", round_to(p, 3)));
                writeln!(
                    f,
                    "{:<30} {:>10.3} {:>8}",
                    t.name,
                    round_to(t.statistic, 3),
                    p
                )?;
                for (k, v) in &t.extras {
                    writeln!(f, "  {k:<28} {:>10.3}", round_to(*v, 3))?;
                }
            }
        }
        Ok(())
    }
}
