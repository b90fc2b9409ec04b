//! File formats the CLI reads and writes beyond what the core library covers.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use survey_core::data::{QuestionKind, QuestionMeta, ResponseMatrix, ValueScale};
use survey_core::harness::{AdministeredSurvey, OrderLog};

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Real-valued responses keyed by the schema's source columns. Blank or
/// unparseable cells are unobserved.
pub fn load_continuous(path: &Path, schema: &[QuestionMeta]) -> Result<ResponseMatrix> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let columns = schema
        .iter()
        .map(|q| {
            headers
                .iter()
                .position(|h| h.trim() == q.source_column)
                .with_context(|| format!("column {} not in {}", q.source_column, path.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = schema.len();
    let (mut values, mut mask) = (Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record?;
        for &c in &columns {
            match record.get(c).map(str::trim).and_then(|s| s.parse::<f64>().ok()).filter(|v| v.is_finite()) {
                Some(v) => {
                    values.push(v);
                    mask.push(true);
                }
                None => {
                    values.push(0.0);
                    mask.push(false);
                }
            }
        }
    }
    let n = values.len() / k;
    if n == 0 {
        bail!("{} has no rows", path.display());
    }
    Ok(ResponseMatrix::new(
        DMatrix::from_row_slice(n, k, &values),
        DMatrix::from_row_slice(n, k, &mask),
        schema.to_vec(),
        ValueScale::Continuous,
    )?)
}

/// Writes `respondent` plus one column per question; missing cells are blank.
pub fn response_csv(data: &ResponseMatrix) -> String {
    let mut out = String::from("respondent");
    for q in data.questions() {
        out.push(',');
        out.push_str(&q.source_column);
    }
    out.push('\n');
    for i in 0..data.nrows() {
        out.push_str(&data.respondents()[i].to_string());
        for j in 0..data.ncols() {
            out.push(',');
            if let Some(v) = data.get(i, j) {
                out.push_str(&v.to_string());
            }
        }
        out.push('\n');
    }
    out
}

pub fn schema_csv(questions: &[QuestionMeta]) -> String {
    let mut out = String::from("id,num_categories,kind,text,source_column\n");
    for q in questions {
        let kind = match q.kind {
            QuestionKind::Ordinal => "ordinal",
            QuestionKind::Binary => "binary",
            QuestionKind::OneHotDerived => "one-hot-derived",
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            q.id,
            q.num_categories,
            kind,
            q.text.as_deref().unwrap_or(""),
            q.source_column
        ));
    }
    out
}

/// `row,f1,..,fr` for a factor matrix.
pub fn matrix_csv(label: &str, names: &[String], m: &DMatrix<f64>) -> String {
    let mut out = String::from(label);
    for c in 0..m.ncols() {
        out.push_str(&format!(",f{}", c + 1));
    }
    out.push('\n');
    for r in 0..m.nrows() {
        out.push_str(&names[r]);
        for c in 0..m.ncols() {
            out.push_str(&format!(",{}", m[(r, c)]));
        }
        out.push('\n');
    }
    out
}

/// Long format: one row per administered item with columns
/// `respondent,position,question_id,value,completed`. A blank value is a skip.
pub fn order_log_csv(log: &OrderLog) -> String {
    let mut out = String::from("respondent,position,question_id,value,completed\n");
    for s in &log.surveys {
        for (pos, (q, value)) in s.items.iter().enumerate() {
            let v = value.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{v},{}\n", s.respondent, pos + 1, log.questions[*q], s.completed));
        }
    }
    out
}

pub fn load_order_log(path: &Path) -> Result<OrderLog> {
    #[derive(serde::Deserialize)]
    struct Row {
        respondent: usize,
        position: usize,
        question_id: String,
        value: Option<f64>,
        completed: bool,
    }
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut questions: Vec<String> = Vec::new();
    let mut qindex: HashMap<String, usize> = HashMap::new();
    let mut sindex: HashMap<usize, usize> = HashMap::new();
    let mut rows: Vec<(AdministeredSurvey, Vec<(usize, usize, Option<f64>)>)> = Vec::new();
    for (line, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.with_context(|| format!("{}: row {}", path.display(), line + 2))?;
        let q = *qindex.entry(row.question_id.clone()).or_insert_with(|| {
            questions.push(row.question_id.clone());
            questions.len() - 1
        });
        let s = *sindex.entry(row.respondent).or_insert_with(|| {
            rows.push((
                AdministeredSurvey { respondent: row.respondent, items: Vec::new(), completed: true },
                Vec::new(),
            ));
            rows.len() - 1
        });
        rows[s].0.completed &= row.completed;
        rows[s].1.push((row.position, q, row.value));
    }
    let surveys = rows
        .into_iter()
        .map(|(mut survey, mut items)| {
            items.sort_by_key(|&(pos, _, _)| pos);
            survey.items = items.into_iter().map(|(_, q, v)| (q, v)).collect();
            survey
        })
        .collect();
    let log = OrderLog { questions, surveys };
    log.validate()?;
    Ok(log)
}
