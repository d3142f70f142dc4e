//! Evaluation harness: judge predictions, bucket by reasoning depth and
//! knowledge domain, and report accuracy breakdowns.
//!
//! Rule mode canonicalizes both sides and compares exactly; external mode
//! delegates to a judge client over a fixed request/response schema and marks
//! unreachable items unjudged rather than guessing.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::canonicalize_answer;
use crate::knowledge::KnowledgeHierarchy;

/// Prompt template shipped to the model under evaluation and echoed to the
/// external judge; `<Question>` is the fill-in slot.
pub const EVAL_PROMPT_TEMPLATE: &str = "Now, we require you to solve a math question. Please briefly describe your thought process and provide the final answer.\nFor multiple-choice questions, return the selected option and its content. For direct answer selection, return only the chosen result. For fill-in-the-blank questions, answer directly.\nQuestion: <Question>\nRegarding the format, please answer following the template below, and be sure to include two <> symbols:\n<Thought process>: <<your thought process>>\n<Answer>: <<your answer>>";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("item {item}: reasoning steps {steps} outside [1,10]")]
    StepsOutOfRange { item: String, steps: u32 },
    #[error("item {item}: unknown domain {domain:?}")]
    UnknownDomain { item: String, domain: String },
    #[error("item {item}: subdomain {subdomain:?} does not belong to domain {domain:?}")]
    SubdomainMismatch {
        item: String,
        domain: String,
        subdomain: String,
    },
    #[error("item {item}: empty gold answer")]
    EmptyGold { item: String },
    #[error("judgments length {judgments} != items length {items}")]
    LengthMismatch { items: usize, judgments: usize },
    #[error("no judged items")]
    EmptyJudgedSet,
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{file} line {line}: {source}")]
    ParseLine {
        file: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("prediction file has no entry for item {0}")]
    MissingPrediction(String),
}

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("judge returned malformed response: {0}")]
    BadResponse(String),
}

/// One benchmark item joined with its prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub problem_id: String,
    pub reasoning_steps: u32,
    pub domain: String,
    pub subdomain: String,
    pub prediction: String,
    pub gold: String,
}

/// Valid (domain, subdomain) combinations, checked against the knowledge
/// store's first two levels.
#[derive(Debug, Clone)]
pub struct DomainTable {
    subdomains: BTreeMap<String, Vec<String>>,
}

impl DomainTable {
    pub fn from_hierarchy(store: &KnowledgeHierarchy) -> Self {
        let mut subdomains = BTreeMap::new();
        for root in store.roots() {
            let name = store.point(root).expect("root exists").name.clone();
            let children = store
                .children(root)
                .iter()
                .filter_map(|id| store.point(id))
                .map(|p| p.name.clone())
                .collect();
            subdomains.insert(name, children);
        }
        DomainTable { subdomains }
    }

    pub fn domains(&self) -> Vec<&str> {
        self.subdomains.keys().map(String::as_str).collect()
    }

    pub fn validate_item(&self, item: &EvalItem) -> Result<(), EvalError> {
        if item.reasoning_steps < 1 || item.reasoning_steps > 10 {
            return Err(EvalError::StepsOutOfRange {
                item: item.problem_id.clone(),
                steps: item.reasoning_steps,
            });
        }
        if item.gold.trim().is_empty() {
            return Err(EvalError::EmptyGold {
                item: item.problem_id.clone(),
            });
        }
        let subdomains =
            self.subdomains
                .get(&item.domain)
                .ok_or_else(|| EvalError::UnknownDomain {
                    item: item.problem_id.clone(),
                    domain: item.domain.clone(),
                })?;
        if !subdomains.contains(&item.subdomain) {
            return Err(EvalError::SubdomainMismatch {
                item: item.problem_id.clone(),
                domain: item.domain.clone(),
                subdomain: item.subdomain.clone(),
            });
        }
        Ok(())
    }
}

/// Reasoning-depth level: 1-3, 4-6, or 7-10 steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    Level1,
    Level2,
    Level3,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Level1 => write!(f, "Level1"),
            Level::Level2 => write!(f, "Level2"),
            Level::Level3 => write!(f, "Level3"),
        }
    }
}

/// Map a step count to its level.
pub fn level_of(steps: u32) -> Result<Level, EvalError> {
    match steps {
        1..=3 => Ok(Level::Level1),
        4..=6 => Ok(Level::Level2),
        7..=10 => Ok(Level::Level3),
        _ => Err(EvalError::StepsOutOfRange {
            item: String::new(),
            steps,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeMode {
    Rule,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judgment {
    Correct,
    Incorrect,
    Unjudged,
}

/// Rule-mode judge: canonical exact match.
pub fn judge_rule(prediction: &str, gold: &str) -> bool {
    canonicalize_answer(prediction) == canonicalize_answer(gold)
}

/// Request sent to an external judge. The prompt template rides along
/// verbatim so the service sees the exact evaluation instructions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub template: String,
    pub problem_id: String,
    pub prediction: String,
    pub gold: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeResponse {
    pub correct: bool,
}

/// Contract for external judges; implementations own the transport.
pub trait JudgeClient {
    fn judge(&self, request: &JudgeRequest) -> Result<JudgeResponse, JudgeError>;
}

/// Minimal HTTP/1.1 POST client for judge services. The endpoint is
/// `host:port` plus a path, e.g. `127.0.0.1:9100/judge`.
pub struct HttpJudgeClient {
    pub endpoint: String,
    pub timeout: Duration,
}

impl HttpJudgeClient {
    pub fn new(endpoint: &str) -> Self {
        HttpJudgeClient {
            endpoint: endpoint.to_string(),
            timeout: Duration::from_secs(5),
        }
    }

    fn split_endpoint(&self) -> (String, String) {
        match self.endpoint.find('/') {
            Some(idx) => (
                self.endpoint[..idx].to_string(),
                self.endpoint[idx..].to_string(),
            ),
            None => (self.endpoint.clone(), "/".to_string()),
        }
    }
}

impl JudgeClient for HttpJudgeClient {
    fn judge(&self, request: &JudgeRequest) -> Result<JudgeResponse, JudgeError> {
        let (host, path) = self.split_endpoint();
        let body = serde_json::to_string(request)
            .map_err(|e| JudgeError::BadResponse(e.to_string()))?;
        let mut stream = TcpStream::connect(&host)
            .map_err(|e| JudgeError::Unreachable(format!("{host}: {e}")))?;
        stream
            .set_read_timeout(Some(self.timeout))
            .and_then(|_| stream.set_write_timeout(Some(self.timeout)))
            .map_err(|e| JudgeError::Unreachable(e.to_string()))?;
        let message = format!(
            "POST {path} HTTP/1.1\r\nHost: {host}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        );
        stream
            .write_all(message.as_bytes())
            .map_err(|e| JudgeError::Unreachable(e.to_string()))?;
        let mut raw = String::new();
        stream
            .read_to_string(&mut raw)
            .map_err(|e| JudgeError::Unreachable(e.to_string()))?;
        let payload = raw
            .split("\r\n\r\n")
            .nth(1)
            .ok_or_else(|| JudgeError::BadResponse("missing body".into()))?;
        // tolerate chunked tails by scanning for the first JSON object
        let start = payload
            .find('{')
            .ok_or_else(|| JudgeError::BadResponse("no JSON body".into()))?;
        let end = payload
            .rfind('}')
            .ok_or_else(|| JudgeError::BadResponse("no JSON body".into()))?;
        serde_json::from_str(&payload[start..=end])
            .map_err(|e| JudgeError::BadResponse(e.to_string()))
    }
}

/// Judge every item. External failures retry twice, then the item is marked
/// unjudged; warnings describe each exclusion.
pub fn judge_items(
    items: &[EvalItem],
    mode: JudgeMode,
    client: Option<&dyn JudgeClient>,
) -> (Vec<Judgment>, Vec<String>) {
    let mut judgments = Vec::with_capacity(items.len());
    let mut warnings = Vec::new();
    for item in items {
        let judgment = match mode {
            JudgeMode::Rule => {
                if judge_rule(&item.prediction, &item.gold) {
                    Judgment::Correct
                } else {
                    Judgment::Incorrect
                }
            }
            JudgeMode::External => match client {
                None => {
                    warnings.push(format!(
                        "item {}: no judge client configured, marked unjudged",
                        item.problem_id
                    ));
                    Judgment::Unjudged
                }
                Some(client) => {
                    let request = JudgeRequest {
                        template: EVAL_PROMPT_TEMPLATE.to_string(),
                        problem_id: item.problem_id.clone(),
                        prediction: item.prediction.clone(),
                        gold: item.gold.clone(),
                    };
                    let mut outcome = None;
                    let mut last_error = String::new();
                    for _ in 0..3 {
                        match client.judge(&request) {
                            Ok(response) => {
                                outcome = Some(if response.correct {
                                    Judgment::Correct
                                } else {
                                    Judgment::Incorrect
                                });
                                break;
                            }
                            Err(e) => last_error = e.to_string(),
                        }
                    }
                    outcome.unwrap_or_else(|| {
                        warnings.push(format!(
                            "item {}: external judge failed after 3 tries ({last_error}), marked unjudged",
                            item.problem_id
                        ));
                        Judgment::Unjudged
                    })
                }
            },
        };
        judgments.push(judgment);
    }
    (judgments, warnings)
}

/// Accuracy cell: judged count and correct count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub judged: usize,
    pub correct: usize,
}

impl Cell {
    pub fn accuracy(&self) -> f64 {
        if self.judged == 0 {
            0.0
        } else {
            self.correct as f64 / self.judged as f64
        }
    }
}

/// Two-dimensional accuracy breakdown.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Cell,
    pub unjudged: usize,
    pub levels: BTreeMap<String, Cell>,
    pub domains: BTreeMap<String, Cell>,
}

impl EvalReport {
    pub fn overall_accuracy(&self) -> f64 {
        self.overall.accuracy()
    }
}

/// Aggregate judged items into the level/domain breakdown.
pub fn report(items: &[EvalItem], judgments: &[Judgment]) -> Result<EvalReport, EvalError> {
    if items.len() != judgments.len() {
        return Err(EvalError::LengthMismatch {
            items: items.len(),
            judgments: judgments.len(),
        });
    }
    let mut overall = Cell::default();
    let mut unjudged = 0usize;
    let mut levels: BTreeMap<String, Cell> = BTreeMap::new();
    let mut domains: BTreeMap<String, Cell> = BTreeMap::new();
    for (item, judgment) in items.iter().zip(judgments.iter()) {
        if *judgment == Judgment::Unjudged {
            unjudged += 1;
            continue;
        }
        let level = level_of(item.reasoning_steps).map_err(|_| EvalError::StepsOutOfRange {
            item: item.problem_id.clone(),
            steps: item.reasoning_steps,
        })?;
        let correct = *judgment == Judgment::Correct;
        overall.judged += 1;
        overall.correct += correct as usize;
        let lcell = levels.entry(level.to_string()).or_default();
        lcell.judged += 1;
        lcell.correct += correct as usize;
        let dcell = domains.entry(item.domain.clone()).or_default();
        dcell.judged += 1;
        dcell.correct += correct as usize;
    }
    if overall.judged == 0 {
        return Err(EvalError::EmptyJudgedSet);
    }
    Ok(EvalReport {
        overall,
        unjudged,
        levels,
        domains,
    })
}

/// Plain-text accuracy table: one row per model-free breakdown.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str("                 | Acc.  | Reasoning               | Knowledge\n");
    out.push_str("                 |       |");
    for level in ["Level1", "Level2", "Level3"] {
        out.push_str(&format!(" {level:>7}"));
    }
    out.push_str(" |");
    for domain in report.domains.keys() {
        let short: String = domain
            .split_whitespace()
            .map(|w| w.chars().next().unwrap_or(' '))
            .collect();
        out.push_str(&format!(" {short:>5}"));
    }
    out.push('\n');
    out.push_str(&format!("{:>17}|{:>6.1} |", "accuracy ", report.overall.accuracy() * 100.0));
    for level in ["Level1", "Level2", "Level3"] {
        let acc = report
            .levels
            .get(level)
            .map(|c| c.accuracy() * 100.0)
            .unwrap_or(0.0);
        out.push_str(&format!(" {acc:>7.1}"));
    }
    out.push_str(" |");
    for cell in report.domains.values() {
        out.push_str(&format!(" {:>5.1}", cell.accuracy() * 100.0));
    }
    out.push('\n');
    out.push_str(&format!(
        "judged {} / unjudged {}\n",
        report.overall.judged, report.unjudged
    ));
    out
}

/// JSONL row in a predictions file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRow {
    pub problem_id: String,
    pub prediction: String,
}

/// Benchmark item as stored on disk (prediction joined separately).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemRow {
    pub problem_id: String,
    pub reasoning_steps: u32,
    pub domain: String,
    pub subdomain: String,
    pub gold: String,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rows = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            serde_json::from_str(line).map_err(|source| EvalError::ParseLine {
                file: path.display().to_string(),
                line: index + 1,
                source,
            })?,
        );
    }
    Ok(rows)
}

/// Load items and predictions files and join them on problem id.
pub fn load_items(items_path: &Path, preds_path: &Path) -> Result<Vec<EvalItem>, EvalError> {
    let items: Vec<ItemRow> = read_jsonl(items_path)?;
    let preds: Vec<PredictionRow> = read_jsonl(preds_path)?;
    let by_id: BTreeMap<String, String> = preds
        .into_iter()
        .map(|p| (p.problem_id, p.prediction))
        .collect();
    items
        .into_iter()
        .map(|row| {
            let prediction = by_id
                .get(&row.problem_id)
                .cloned()
                .ok_or_else(|| EvalError::MissingPrediction(row.problem_id.clone()))?;
            Ok(EvalItem {
                problem_id: row.problem_id,
                reasoning_steps: row.reasoning_steps,
                domain: row.domain,
                subdomain: row.subdomain,
                prediction,
                gold: row.gold,
            })
        })
        .collect()
}
