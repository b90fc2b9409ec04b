//! Survey response matrices: CSV ingestion, rescaling to `[-1, 1]`, one-hot
//! expansion of categorical columns, and train/simulation splits with holdouts.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuestionKind {
    Ordinal,
    Binary,
    OneHotDerived,
}

impl std::str::FromStr for QuestionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ordinal" => Ok(Self::Ordinal),
            "binary" => Ok(Self::Binary),
            "one-hot-derived" | "one_hot_derived" | "onehot" => Ok(Self::OneHotDerived),
            other => Err(Error::Schema(format!("unknown question kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionMeta {
    pub id: String,
    pub num_categories: u32,
    pub kind: QuestionKind,
    pub source_column: String,
    /// Display text shown to respondents; falls back to the id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl QuestionMeta {
    pub fn new(id: impl Into<String>, num_categories: u32, kind: QuestionKind) -> Self {
        let id = id.into();
        Self { source_column: id.clone(), id, num_categories, kind, text: None }
    }

    pub fn display_text(&self) -> &str {
        self.text.as_deref().unwrap_or(&self.id)
    }

    /// Position of category `m` (1-based) on the `[-1, 1]` scale.
    pub fn scale(&self, m: f64) -> f64 {
        scale_category(m, self.num_categories)
    }

    pub fn unscale(&self, x: f64) -> f64 {
        unscale_value(x, self.num_categories)
    }
}

pub fn scale_category(m: f64, num_categories: u32) -> f64 {
    2.0 * (m - 1.0) / (num_categories as f64 - 1.0) - 1.0
}

pub fn unscale_value(x: f64, num_categories: u32) -> f64 {
    (x + 1.0) * (num_categories as f64 - 1.0) / 2.0 + 1.0
}

/// How the stored values are to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueScale {
    /// Integer categories `1..=M_j`.
    Ordinal,
    /// Ordinal categories mapped linearly onto `[-1, 1]`.
    Scaled,
    /// Unbounded reals (synthetic Gaussian data).
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
    questions: Vec<QuestionMeta>,
    scale: ValueScale,
    respondents: Vec<usize>,
}

impl ResponseMatrix {
    /// Builds a matrix, zeroing values under `mask == false` and checking the
    /// scale's range on observed cells.
    pub fn new(
        mut values: DMatrix<f64>,
        mask: DMatrix<bool>,
        questions: Vec<QuestionMeta>,
        scale: ValueScale,
    ) -> Result<Self> {
        if values.shape() != mask.shape() {
            return Err(Error::Dimension(format!("values {:?} vs mask {:?}", values.shape(), mask.shape())));
        }
        if questions.len() != values.ncols() {
            return Err(Error::Dimension(format!("{} questions for {} columns", questions.len(), values.ncols())));
        }
        let mut seen = HashSet::new();
        for q in &questions {
            if q.num_categories < 2 && scale != ValueScale::Continuous {
                return Err(Error::InvalidArgument(format!("question {} has fewer than 2 categories", q.id)));
            }
            if !seen.insert(q.id.as_str()) {
                return Err(Error::Schema(format!("duplicate question id {}", q.id)));
            }
        }
        for ((v, &m), j) in values.iter_mut().zip(mask.iter()).zip((0..mask.len()).map(|idx| idx / mask.nrows().max(1)))
        {
            if !m {
                *v = 0.0;
                continue;
            }
            if !v.is_finite() {
                return Err(Error::NonFinite("observed response".into()));
            }
            let ok = match scale {
                ValueScale::Ordinal => v.fract() == 0.0 && *v >= 1.0 && *v <= questions[j].num_categories as f64,
                ValueScale::Scaled => (-1.0..=1.0).contains(v),
                ValueScale::Continuous => true,
            };
            if !ok {
                return Err(Error::InvalidArgument(format!(
                    "value {v} out of range for question {} ({scale:?})",
                    questions[j].id
                )));
            }
        }
        let respondents = (0..values.nrows()).collect();
        Ok(Self { values, mask, questions, scale, respondents })
    }

    /// Fully observed matrix.
    pub fn dense(values: DMatrix<f64>, questions: Vec<QuestionMeta>, scale: ValueScale) -> Result<Self> {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::new(values, mask, questions, scale)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn questions(&self) -> &[QuestionMeta] {
        &self.questions
    }

    pub fn scale(&self) -> ValueScale {
        self.scale
    }

    /// Original row index of each respondent in the source dataset.
    pub fn respondents(&self) -> &[usize] {
        &self.respondents
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask[(i, j)]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.mask[(i, j)].then(|| self.values[(i, j)])
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn row_observed(&self, i: usize) -> Vec<usize> {
        (0..self.ncols()).filter(|&j| self.mask[(i, j)]).collect()
    }

    pub fn column_observed_count(&self, j: usize) -> usize {
        self.mask.column(j).iter().filter(|&&m| m).count()
    }

    /// Observed `(i, j, value)` triples in column-major order.
    pub fn observed_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.nrows();
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(move |(idx, _)| {
            let (i, j) = (idx % n, idx / n);
            (i, j, self.values[(i, j)])
        })
    }

    pub fn missing_rate(&self) -> f64 {
        let total = self.mask.len();
        if total == 0 {
            return 0.0;
        }
        1.0 - self.observed_count() as f64 / total as f64
    }

    pub fn question_index(&self, id: &str) -> Option<usize> {
        self.questions.iter().position(|q| q.id == id)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let values = self.values.select_rows(rows);
        let mask = DMatrix::from_fn(rows.len(), self.ncols(), |i, j| self.mask[(rows[i], j)]);
        Self {
            values,
            mask,
            questions: self.questions.clone(),
            scale: self.scale,
            respondents: rows.iter().map(|&i| self.respondents[i]).collect(),
        }
    }

    /// Same values with some observed cells hidden.
    pub fn without(&self, hidden: &DMatrix<bool>) -> Self {
        let mask = self.mask.zip_map(hidden, |m, h| m && !h);
        let values = self.values.zip_map(&mask, |v, m| if m { v } else { 0.0 });
        Self {
            values,
            mask,
            questions: self.questions.clone(),
            scale: self.scale,
            respondents: self.respondents.clone(),
        }
    }

    /// Appends the columns of `other` (same rows) to the right.
    pub fn hstack(&self, other: &ResponseMatrix) -> Result<Self> {
        if other.nrows() != self.nrows() || other.scale != self.scale {
            return Err(Error::Dimension("hstack requires matching rows and scale".into()));
        }
        let (n, k1, k2) = (self.nrows(), self.ncols(), other.ncols());
        let values =
            DMatrix::from_fn(n, k1 + k2, |i, j| if j < k1 { self.values[(i, j)] } else { other.values[(i, j - k1)] });
        let mask =
            DMatrix::from_fn(n, k1 + k2, |i, j| if j < k1 { self.mask[(i, j)] } else { other.mask[(i, j - k1)] });
        let mut questions = self.questions.clone();
        questions.extend(other.questions.iter().cloned());
        let mut out = Self::new(values, mask, questions, self.scale)?;
        out.respondents = self.respondents.clone();
        Ok(out)
    }

    /// Appends the rows of `other` (same questions) below.
    pub fn vstack(&self, other: &ResponseMatrix) -> Result<Self> {
        if other.questions != self.questions || other.scale != self.scale {
            return Err(Error::Dimension("vstack requires matching questions and scale".into()));
        }
        let (n1, n2, k) = (self.nrows(), other.nrows(), self.ncols());
        let values =
            DMatrix::from_fn(n1 + n2, k, |i, j| if i < n1 { self.values[(i, j)] } else { other.values[(i - n1, j)] });
        let mask =
            DMatrix::from_fn(n1 + n2, k, |i, j| if i < n1 { self.mask[(i, j)] } else { other.mask[(i - n1, j)] });
        let mut respondents = self.respondents.clone();
        respondents.extend_from_slice(&other.respondents);
        Ok(Self { values, mask, questions: self.questions.clone(), scale: self.scale, respondents })
    }

    /// Drops column `j`.
    pub fn remove_column(&self, j: usize) -> Self {
        let keep: Vec<usize> = (0..self.ncols()).filter(|&c| c != j).collect();
        Self {
            values: self.values.select_columns(&keep),
            mask: DMatrix::from_fn(self.nrows(), keep.len(), |i, c| self.mask[(i, keep[c])]),
            questions: keep.iter().map(|&c| self.questions[c].clone()).collect(),
            scale: self.scale,
            respondents: self.respondents.clone(),
        }
    }

    /// Replaces categorical column `j` by its one-hot indicator columns.
    pub fn expand_one_hot(&self, j: usize) -> Result<Self> {
        if self.scale != ValueScale::Ordinal {
            return Err(Error::InvalidArgument("one-hot expansion needs raw categories".into()));
        }
        let column: Vec<Option<u32>> = (0..self.nrows()).map(|i| self.get(i, j).map(|v| v as u32)).collect();
        let q = &self.questions[j];
        let encoded = one_hot_encode(&column, q.num_categories, &q.id)?;
        let mut out = self.remove_column(j).hstack(&encoded)?;
        out.respondents = self.respondents.clone();
        Ok(out)
    }
}

/// Maps integer categories onto `[-1, 1]`: category `m` of a question with
/// `M` categories becomes `2(m-1)/(M-1) - 1`.
pub fn rescale_responses(raw: &ResponseMatrix) -> Result<ResponseMatrix> {
    if raw.scale != ValueScale::Ordinal {
        return Err(Error::InvalidArgument("rescaling requires an ordinal matrix".into()));
    }
    if let Some(q) = raw.questions.iter().find(|q| q.num_categories < 2) {
        return Err(Error::InvalidArgument(format!("question {} has no spread", q.id)));
    }
    let n = raw.nrows();
    let values = DMatrix::from_fn(n, raw.ncols(), |i, j| {
        if raw.mask[(i, j)] {
            raw.questions[j].scale(raw.values[(i, j)])
        } else {
            0.0
        }
    });
    Ok(ResponseMatrix {
        values,
        mask: raw.mask.clone(),
        questions: raw.questions.clone(),
        scale: ValueScale::Scaled,
        respondents: raw.respondents.clone(),
    })
}

/// Expands a categorical column with `levels` categories into `levels` binary
/// indicator questions (category 2 = "this level", category 1 = "other").
pub fn one_hot_encode(column: &[Option<u32>], levels: u32, source_id: &str) -> Result<ResponseMatrix> {
    if levels < 2 {
        return Err(Error::InvalidArgument(format!("one-hot encoding needs at least 2 levels, got {levels}")));
    }
    let n = column.len();
    let c = levels as usize;
    let mut values = DMatrix::zeros(n, c);
    let mut mask = DMatrix::from_element(n, c, false);
    for (i, cell) in column.iter().enumerate() {
        let Some(level) = cell.filter(|l| (1..=levels).contains(l)) else {
            continue;
        };
        for l in 0..c {
            mask[(i, l)] = true;
            values[(i, l)] = if l + 1 == level as usize { 2.0 } else { 1.0 };
        }
    }
    let questions = (1..=levels)
        .map(|l| QuestionMeta {
            id: format!("{source_id}={l}"),
            num_categories: 2,
            kind: QuestionKind::OneHotDerived,
            source_column: source_id.to_string(),
            text: None,
        })
        .collect();
    ResponseMatrix::new(values, mask, questions, ValueScale::Ordinal)
}

/// Reads a schema table with columns `id,num_categories,kind` and optional
/// `text` and `source_column`.
pub fn load_schema(path: &Path) -> Result<Vec<QuestionMeta>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    #[derive(Deserialize)]
    struct Row {
        id: String,
        num_categories: u32,
        kind: String,
        #[serde(default)]
        text: Option<String>,
        #[serde(default)]
        source_column: Option<String>,
    }
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize::<Row>() {
        let row = row?;
        if row.num_categories < 2 {
            return Err(Error::Schema(format!("question {} needs at least 2 categories", row.id)));
        }
        out.push(QuestionMeta {
            source_column: row.source_column.filter(|s| !s.is_empty()).unwrap_or_else(|| row.id.clone()),
            kind: row.kind.parse()?,
            num_categories: row.num_categories,
            text: row.text.filter(|s| !s.is_empty()),
            id: row.id,
        });
    }
    if out.is_empty() {
        return Err(Error::Schema("schema lists no questions".into()));
    }
    Ok(out)
}

/// Reads respondent rows from a CSV whose header holds the source column
/// names referenced by `schema`. Blank, unparseable or out-of-range cells
/// become unobserved; rows with no observed cell are dropped.
pub fn load_dataset(path: &Path, schema: &[QuestionMeta]) -> Result<ResponseMatrix> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(_) => return Err(Error::NoUsableRows),
    };
    if headers.is_empty() {
        return Err(Error::NoUsableRows);
    }
    let columns = schema
        .iter()
        .map(|q| {
            headers
                .iter()
                .position(|h| h.trim() == q.source_column)
                .ok_or_else(|| Error::Schema(format!("column {} not in file", q.source_column)))
        })
        .collect::<Result<Vec<_>>>()?;

    let k = schema.len();
    let mut values = Vec::new();
    let mut mask = Vec::new();
    let mut respondents = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let mut row_vals = vec![0.0; k];
        let mut row_mask = vec![false; k];
        for (j, (&col, q)) in columns.iter().zip(schema).enumerate() {
            let parsed = record
                .get(col)
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.fract() == 0.0 && *v >= 1.0 && *v <= q.num_categories as f64);
            if let Some(v) = parsed {
                row_vals[j] = v;
                row_mask[j] = true;
            }
        }
        if row_mask.iter().any(|&m| m) {
            values.extend(row_vals);
            mask.extend(row_mask);
            respondents.push(row_idx);
        }
    }
    if respondents.is_empty() {
        return Err(Error::NoUsableRows);
    }
    let n = respondents.len();
    let mut out = ResponseMatrix::new(
        DMatrix::from_row_slice(n, k, &values),
        DMatrix::from_row_slice(n, k, &mask),
        schema.to_vec(),
        ValueScale::Ordinal,
    )?;
    out.respondents = respondents;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Holdout {
    /// A fraction of each simulation user's observed responses.
    Sparse {
        fraction: f64,
    },
    /// One whole question column.
    Loocv {
        question: usize,
    },
    /// One fold of a seeded partition of the questions.
    KFold {
        folds: usize,
        fold: usize,
    },
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_fraction: f64,
    pub holdout: Holdout,
}

impl SplitSpec {
    pub fn validate(&self, num_questions: usize) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!("train fraction {} outside (0, 1)", self.train_fraction)));
        }
        match self.holdout {
            Holdout::Sparse { fraction } if !(fraction > 0.0 && fraction < 1.0) => {
                Err(Error::InvalidArgument(format!("sparse holdout fraction {fraction} outside (0, 1)")))
            }
            Holdout::Loocv { question } if question >= num_questions => {
                Err(Error::OutOfRange(format!("holdout question {question} of {num_questions}")))
            }
            Holdout::KFold { folds, fold } if folds < 2 || fold >= folds || folds > num_questions => {
                Err(Error::InvalidArgument(format!("fold {fold} of {folds}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: ResponseMatrix,
    pub sim: ResponseMatrix,
    /// Cells of `sim` that are evaluation targets and may never be revealed.
    pub holdout: DMatrix<bool>,
    /// Questions removed wholesale (LOOCV / k-fold); never offered to a strategy.
    pub excluded_questions: Vec<usize>,
}

impl Split {
    /// Whether a strategy asking `(i, j)` of the simulation half gets an answer.
    pub fn available(&self, i: usize, j: usize) -> bool {
        self.sim.is_observed(i, j) && !self.holdout[(i, j)]
    }

    pub fn holdout_count(&self) -> usize {
        self.holdout.iter().filter(|&&h| h).count()
    }
}

/// Hides `ceil(fraction * observed)` uniformly chosen responses per row.
pub fn sparse_holdout<R: rand::Rng>(data: &ResponseMatrix, fraction: f64, rng: &mut R) -> DMatrix<bool> {
    let mut hidden = DMatrix::from_element(data.nrows(), data.ncols(), false);
    for i in 0..data.nrows() {
        let observed = data.row_observed(i);
        if observed.is_empty() {
            continue;
        }
        let count = ((fraction * observed.len() as f64).ceil() as usize).min(observed.len());
        for pick in index::sample(rng, observed.len(), count) {
            hidden[(i, observed[pick])] = true;
        }
    }
    hidden
}

/// Questions in fold `fold` of a seeded `folds`-way partition.
pub fn question_fold(num_questions: usize, folds: usize, fold: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..num_questions).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f01d));
    let mut members: Vec<usize> =
        order.into_iter().enumerate().filter(|(pos, _)| pos % folds == fold).map(|(_, q)| q).collect();
    members.sort_unstable();
    members
}

pub fn split_and_holdout(data: &ResponseMatrix, spec: &SplitSpec) -> Result<Split> {
    spec.validate(data.ncols())?;
    let n = data.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 respondents to split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = ((spec.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut train_rows = order[..n_train].to_vec();
    let mut sim_rows = order[n_train..].to_vec();
    train_rows.sort_unstable();
    sim_rows.sort_unstable();
    let train = data.select_rows(&train_rows);
    let sim = data.select_rows(&sim_rows);

    let (holdout, excluded_questions) = match spec.holdout {
        Holdout::Sparse { fraction } => (sparse_holdout(&sim, fraction, &mut rng), Vec::new()),
        Holdout::Loocv { question } => (column_holdout(&sim, &[question]), vec![question]),
        Holdout::KFold { folds, fold } => {
            let qs = question_fold(data.ncols(), folds, fold, spec.seed);
            (column_holdout(&sim, &qs), qs)
        }
        Holdout::None => (DMatrix::from_element(sim.nrows(), sim.ncols(), false), Vec::new()),
    };
    Ok(Split { train, sim, holdout, excluded_questions })
}

fn column_holdout(sim: &ResponseMatrix, columns: &[usize]) -> DMatrix<bool> {
    DMatrix::from_fn(sim.nrows(), sim.ncols(), |i, j| columns.contains(&j) && sim.is_observed(i, j))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn ordinal(rows: &[&[Option<u32>]], cats: &[u32]) -> ResponseMatrix {
        let n = rows.len();
        let k = cats.len();
        let values = DMatrix::from_fn(n, k, |i, j| rows[i][j].unwrap_or(0) as f64);
        let mask = DMatrix::from_fn(n, k, |i, j| rows[i][j].is_some());
        let questions = cats
            .iter()
            .enumerate()
            .map(|(j, &m)| QuestionMeta::new(format!("q{}", j + 1), m, QuestionKind::Ordinal))
            .collect();
        ResponseMatrix::new(values, mask, questions, ValueScale::Ordinal).unwrap()
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn two_ordinal_schema() -> Vec<QuestionMeta> {
        vec![QuestionMeta::new("a", 5, QuestionKind::Ordinal), QuestionMeta::new("b", 2, QuestionKind::Binary)]
    }

    #[test]
    fn loads_three_rows_fully_observed() {
        let f = write_tmp("a,b\n1,2\n5,1\n3,2\n");
        let m = load_dataset(f.path(), &two_ordinal_schema()).unwrap();
        assert_eq!((m.nrows(), m.ncols()), (3, 2));
        assert_eq!(m.observed_count(), 6);
        assert_eq!(m.get(1, 0), Some(5.0));
    }

    #[test]
    fn out_of_range_and_garbage_cells_become_missing() {
        let f = write_tmp("b,a,extra\n3,1,x\n1,abc,y\n2,,z\n");
        let m = load_dataset(f.path(), &two_ordinal_schema()).unwrap();
        assert_eq!(m.get(0, 1), None, "category 3 exceeds M=2");
        assert_eq!(m.get(0, 0), Some(1.0));
        assert_eq!(m.get(1, 0), None);
        assert_eq!(m.get(2, 0), None);
        assert_eq!(m.get(2, 1), Some(2.0));
    }

    #[test]
    fn empty_file_is_zero_usable_rows() {
        let f = write_tmp("");
        let err = load_dataset(f.path(), &two_ordinal_schema()).unwrap_err();
        assert!(matches!(err, Error::NoUsableRows | Error::Schema(_)), "{err}");
        let f = write_tmp("a,b\n");
        let err = load_dataset(f.path(), &two_ordinal_schema()).unwrap_err();
        assert_eq!(err.to_string(), "zero usable rows");
    }

    #[test]
    fn missing_file_and_missing_column() {
        let err = load_dataset(Path::new("/nonexistent/data.csv"), &two_ordinal_schema()).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
        let f = write_tmp("a,c\n1,1\n");
        assert!(matches!(load_dataset(f.path(), &two_ordinal_schema()), Err(Error::Schema(_))));
    }

    #[test]
    fn schema_file_roundtrip() {
        let f = write_tmp("id,num_categories,kind,text\nq1,4,ordinal,How much?\nq2,2,binary,\n");
        let schema = load_schema(f.path()).unwrap();
        assert_eq!(schema.len(), 2);
        assert_eq!(schema[0].display_text(), "How much?");
        assert_eq!(schema[1].display_text(), "q2");
        assert_eq!(schema[1].kind, QuestionKind::Binary);
    }

    #[test]
    fn rescale_binary_and_five_point() {
        let m = ordinal(
            &[&[Some(1), Some(1)], &[Some(2), Some(2)], &[None, Some(3)], &[None, Some(4)], &[None, Some(5)]],
            &[2, 5],
        );
        let s = rescale_responses(&m).unwrap();
        assert_eq!(s.get(0, 0), Some(-1.0));
        assert_eq!(s.get(1, 0), Some(1.0));
        assert_eq!(s.get(2, 0), None);
        let col: Vec<f64> = (0..5).map(|i| s.get(i, 1).unwrap()).collect();
        assert_eq!(col, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(s.mask(), m.mask());
    }

    #[test]
    fn rescale_rejects_single_category() {
        let q = QuestionMeta::new("q", 1, QuestionKind::Ordinal);
        let err = ResponseMatrix::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, true),
            vec![q],
            ValueScale::Ordinal,
        );
        assert!(err.is_err());
    }

    #[test]
    fn rescale_preserves_missingness_rate() {
        // 1.5% missing, the CCES 2016 rate.
        let (n, k) = (400, 25);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let total = n * k;
        let missing: HashSet<usize> = index::sample(&mut rng, total, total * 15 / 1000).into_iter().collect();
        let values = DMatrix::from_fn(n, k, |i, j| ((i + j) % 4 + 1) as f64);
        let mask = DMatrix::from_fn(n, k, |i, j| !missing.contains(&(j * n + i)));
        let qs = (0..k).map(|j| QuestionMeta::new(format!("q{j}"), 4, QuestionKind::Ordinal)).collect();
        let raw = ResponseMatrix::new(values, mask, qs, ValueScale::Ordinal).unwrap();
        let scaled = rescale_responses(&raw).unwrap();
        assert!((scaled.missing_rate() - 0.015).abs() < 1e-12);
    }

    #[test]
    fn one_hot_three_levels() {
        let enc = one_hot_encode(&[Some(2), None, Some(3)], 3, "race").unwrap();
        let row0: Vec<Option<f64>> = (0..3).map(|j| enc.get(0, j)).collect();
        assert_eq!(row0, vec![Some(1.0), Some(2.0), Some(1.0)]);
        assert!((0..3).all(|j| enc.get(1, j).is_none()));
        assert!(enc.questions().iter().all(|q| q.kind == QuestionKind::OneHotDerived && q.num_categories == 2));
        assert!(one_hot_encode(&[Some(1)], 1, "x").is_err());
    }

    #[test]
    fn one_hot_five_levels_each_row_has_one_indicator() {
        let column: Vec<Option<u32>> = (0..10).map(|i| Some(i % 5 + 1)).collect();
        let base =
            ordinal(&column.iter().map(|c| [*c]).collect::<Vec<_>>().iter().map(|r| &r[..]).collect::<Vec<_>>(), &[5]);
        let expanded = base.hstack(&one_hot_encode(&column, 5, "q1").unwrap()).unwrap();
        assert_eq!(expanded.ncols(), base.ncols() + 5);
        for i in 0..10 {
            let ones = (1..6).filter(|&j| expanded.get(i, j) == Some(2.0)).count();
            assert_eq!(ones, 1);
        }
        let replaced = base.expand_one_hot(0).unwrap();
        assert_eq!(replaced.ncols(), 5);
    }

    fn random_ordinal(n: usize, k: usize, seed: u64, missing: f64) -> ResponseMatrix {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = DMatrix::from_fn(n, k, |_, _| rng.random_range(1..=4) as f64);
        let mask = DMatrix::from_fn(n, k, |_, _| rng.random::<f64>() >= missing);
        let qs = (0..k).map(|j| QuestionMeta::new(format!("q{j}"), 4, QuestionKind::Ordinal)).collect();
        ResponseMatrix::new(values, mask, qs, ValueScale::Ordinal).unwrap()
    }

    #[test]
    fn sparse_holdout_uses_ceiling_per_user() {
        let mut m = random_ordinal(40, 10, 1, 0.0);
        // One user with nothing observed holds out nothing.
        let empty = DMatrix::from_fn(40, 10, |i, _| i != 7);
        m = m.without(&empty.map(|b| !b));
        let spec = SplitSpec { seed: 9, train_fraction: 0.5, holdout: Holdout::Sparse { fraction: 0.2 } };
        let split = split_and_holdout(&m, &spec).unwrap();
        for i in 0..split.sim.nrows() {
            let held = (0..10).filter(|&j| split.holdout[(i, j)]).count();
            let obs = split.sim.row_observed(i).len();
            assert_eq!(held, (0.2 * obs as f64).ceil() as usize);
            if obs == 10 {
                assert_eq!(held, 2);
            }
        }
        let h = split.holdout.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let partial = sparse_holdout(&m.select_rows(&[0]), 0.15, &mut rng);
        assert_eq!(partial.iter().filter(|&&b| b).count(), 2, "ceil(1.5) = 2");
        assert!(h.iter().zip(split.sim.mask().iter()).all(|(&h, &m)| !h || m));
    }

    #[test]
    fn loocv_masks_one_column_and_leaves_train_alone() {
        let m = random_ordinal(30, 5, 2, 0.1);
        let spec = SplitSpec { seed: 4, train_fraction: 0.5, holdout: Holdout::Loocv { question: 2 } };
        let split = split_and_holdout(&m, &spec).unwrap();
        for i in 0..split.sim.nrows() {
            assert_eq!(split.holdout[(i, 2)], split.sim.is_observed(i, 2));
            assert!(!split.available(i, 2));
            for j in [0, 1, 3, 4] {
                assert!(!split.holdout[(i, j)]);
            }
        }
        assert_eq!(split.excluded_questions, vec![2]);
        let train_rows: Vec<usize> = split.train.respondents().to_vec();
        assert_eq!(split.train, m.select_rows(&train_rows));
    }

    #[test]
    fn kfold_partitions_questions() {
        let mut seen = [0; 12];
        for fold in 0..5 {
            for q in question_fold(12, 5, fold, 17) {
                seen[q] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn split_rejects_bad_specs() {
        let m = random_ordinal(10, 3, 0, 0.0);
        for holdout in
            [Holdout::Sparse { fraction: 1.0 }, Holdout::Loocv { question: 3 }, Holdout::KFold { folds: 5, fold: 0 }]
        {
            let spec = SplitSpec { seed: 0, train_fraction: 0.5, holdout };
            assert!(split_and_holdout(&m, &spec).is_err());
        }
        let spec = SplitSpec { seed: 0, train_fraction: 1.0, holdout: Holdout::None };
        assert!(split_and_holdout(&m, &spec).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn unscale_inverts_scale(m in 2u32..12) {
                for c in 1..=m {
                    let x = scale_category(c as f64, m);
                    prop_assert!((-1.0..=1.0).contains(&x));
                    prop_assert!((unscale_value(x, m) - c as f64).abs() < 1e-12);
                }
            }

            #[test]
            fn split_partitions_and_is_deterministic(seed in any::<u64>(), n in 4usize..40, frac in 0.1f64..0.9) {
                let m = random_ordinal(n, 6, seed, 0.2);
                let spec = SplitSpec { seed, train_fraction: frac, holdout: Holdout::Sparse { fraction: 0.3 } };
                let a = split_and_holdout(&m, &spec).unwrap();
                let b = split_and_holdout(&m, &spec).unwrap();
                prop_assert_eq!(&a.train, &b.train);
                prop_assert_eq!(&a.sim, &b.sim);
                prop_assert_eq!(&a.holdout, &b.holdout);
                let mut all: Vec<usize> = a.train.respondents().iter().chain(a.sim.respondents()).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                for i in 0..a.sim.nrows() {
                    for j in 0..6 {
                        prop_assert!(!a.holdout[(i, j)] || a.sim.is_observed(i, j));
                    }
                }
            }
        }
    }
}
