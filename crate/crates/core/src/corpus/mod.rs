//! Bug-report corpus: loading, validation, labeling and the stratified
//! train/test holdout.

mod remote;

pub use remote::{FetchedReport, RemoteClient, RemoteError, RetryPolicy};

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::seed;

/// Column order of the CSV corpus format.
pub const CSV_HEADER: [&str; 6] = ["bug_id", "project", "is_bug", "has_bic", "title", "description"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error at row {row}: missing field `{field}`")]
    MissingField { row: usize, field: String },
    #[error("parse error at row {row}: field `{field}` has non-boolean value {value:?}")]
    BadFlag { row: usize, field: String, value: String },
    #[error("parse error at row {row}: {message}")]
    Malformed { row: usize, message: String },
    #[error("row {row}: empty bug_id")]
    EmptyId { row: usize },
    #[error("duplicate bug_id {bug_id:?} at row {row}")]
    DuplicateId { row: usize, bug_id: String },
    #[error("stratification error: class {0} has no samples")]
    ClassAbsent(Label),
    #[error("holdout ratio must be in (0, 1), got {0}")]
    BadRatio(f64),
    #[error("unknown corpus format {0:?} (expected csv or jsonl)")]
    UnknownFormat(String),
    #[error("write error: {0}")]
    Write(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Csv,
    Jsonl,
}

impl CorpusFormat {
    /// Guesses from the file extension; anything but `.jsonl`/`.json` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => CorpusFormat::Jsonl,
            _ => CorpusFormat::Csv,
        }
    }
}

impl FromStr for CorpusFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(CorpusFormat::Csv),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

/// Class label. `Intrinsic` is the positive class (encoded 1) everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    NonIntrinsic,
    Intrinsic,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::NonIntrinsic => 0,
            Label::Intrinsic => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::NonIntrinsic),
            1 => Some(Label::Intrinsic),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Intrinsic => f.write_str("Intrinsic"),
            Label::NonIntrinsic => f.write_str("NonIntrinsic"),
        }
    }
}

/// A bug is intrinsic only when it is a real bug *and* a bug-inducing
/// commit exists for it; `has_bic` is ignored when `is_bug` is false.
pub fn derive_label(is_bug: bool, has_bic: bool) -> Label {
    if is_bug && has_bic {
        Label::Intrinsic
    } else {
        Label::NonIntrinsic
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugReport {
    pub bug_id: String,
    pub project: String,
    pub is_bug: bool,
    pub has_bic: bool,
    pub title: String,
    pub description: String,
}

impl BugReport {
    pub fn label(&self) -> Label {
        derive_label(self.is_bug, self.has_bic)
    }
}

/// Validated, labeled collection of reports. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    reports: Vec<BugReport>,
    labels: Vec<Label>,
    fingerprint: String,
}

impl Corpus {
    /// Validates ids and derives labels. `row` numbers in errors are 1-based
    /// positions in `reports`.
    pub fn from_reports(reports: Vec<BugReport>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(reports.len());
        for (i, r) in reports.iter().enumerate() {
            if r.bug_id.trim().is_empty() {
                return Err(CorpusError::EmptyId { row: i + 1 });
            }
            if !seen.insert(r.bug_id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    row: i + 1,
                    bug_id: r.bug_id.clone(),
                });
            }
        }
        let labels = reports.iter().map(BugReport::label).collect();
        let fingerprint = fingerprint(&reports);
        Ok(Corpus {
            reports,
            labels,
            fingerprint,
        })
    }

    pub fn reports(&self) -> &[BugReport] {
        &self.reports
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label_bits(&self) -> Vec<u8> {
        self.labels.iter().map(|l| l.as_u8()).collect()
    }

    /// Hex SHA-256 over the length-prefixed record fields.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    /// (NonIntrinsic, Intrinsic) counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|l| **l == Label::Intrinsic).count();
        (self.labels.len() - pos, pos)
    }

    pub fn projects(&self) -> Vec<String> {
        let mut p: Vec<String> = self.reports.iter().map(|r| r.project.clone()).collect();
        p.sort();
        p.dedup();
        p
    }
}

fn fingerprint(reports: &[BugReport]) -> String {
    let mut h = Sha256::new();
    for r in reports {
        for field in [&r.bug_id, &r.project, &r.title, &r.description] {
            h.update((field.len() as u64).to_le_bytes());
            h.update(field.as_bytes());
        }
        h.update([u8::from(r.is_bug), u8::from(r.has_bic)]);
    }
    hex::encode(h.finalize())
}

fn parse_flag(row: usize, field: &str, raw: &str) -> Result<bool, CorpusError> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        _ => Err(CorpusError::BadFlag {
            row,
            field: field.to_string(),
            value: raw.to_string(),
        }),
    }
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let text = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let text = String::from_utf8_lossy(&text);
    match format {
        CorpusFormat::Csv => parse_csv(&text),
        CorpusFormat::Jsonl => parse_jsonl(&text),
    }
}

pub fn parse_csv(text: &str) -> Result<Corpus, CorpusError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::Malformed {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let mut columns = [0usize; 6];
    for (slot, name) in columns.iter_mut().zip(CSV_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CorpusError::MissingField {
                row: 0,
                field: name.to_string(),
            })?;
    }
    let mut reports = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| CorpusError::Malformed {
            row,
            message: e.to_string(),
        })?;
        let get = |k: usize| {
            record.get(columns[k]).ok_or_else(|| CorpusError::MissingField {
                row,
                field: CSV_HEADER[k].to_string(),
            })
        };
        reports.push(BugReport {
            bug_id: get(0)?.to_string(),
            project: get(1)?.to_string(),
            is_bug: parse_flag(row, "is_bug", get(2)?)?,
            has_bic: parse_flag(row, "has_bic", get(3)?)?,
            title: get(4)?.to_string(),
            description: get(5)?.to_string(),
        });
    }
    Corpus::from_reports(reports)
}

pub fn parse_jsonl(text: &str) -> Result<Corpus, CorpusError> {
    let mut reports = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = i + 1;
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            row,
            message: e.to_string(),
        })?;
        let field = |name: &str| {
            value.get(name).ok_or_else(|| CorpusError::MissingField {
                row,
                field: name.to_string(),
            })
        };
        let text_field = |name: &str| -> Result<String, CorpusError> {
            match field(name)? {
                serde_json::Value::String(s) => Ok(s.clone()),
                serde_json::Value::Number(n) if name == "bug_id" => Ok(n.to_string()),
                other => Err(CorpusError::Malformed {
                    row,
                    message: format!("field `{name}` must be a string, got {other}"),
                }),
            }
        };
        let flag = |name: &str| -> Result<bool, CorpusError> {
            match field(name)? {
                serde_json::Value::Bool(b) => Ok(*b),
                serde_json::Value::Number(n) => parse_flag(row, name, &n.to_string()),
                serde_json::Value::String(s) => parse_flag(row, name, s),
                other => parse_flag(row, name, &other.to_string()),
            }
        };
        reports.push(BugReport {
            bug_id: text_field("bug_id")?,
            project: text_field("project")?,
            is_bug: flag("is_bug")?,
            has_bic: flag("has_bic")?,
            title: text_field("title")?,
            description: text_field("description")?,
        });
    }
    Corpus::from_reports(reports)
}

pub fn to_csv(corpus: &Corpus) -> Result<Vec<u8>, CorpusError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let werr = |e: csv::Error| CorpusError::Write(e.to_string());
    w.write_record(CSV_HEADER).map_err(werr)?;
    for r in corpus.reports() {
        w.write_record([
            r.bug_id.as_str(),
            r.project.as_str(),
            if r.is_bug { "1" } else { "0" },
            if r.has_bic { "1" } else { "0" },
            r.title.as_str(),
            r.description.as_str(),
        ])
        .map_err(werr)?;
    }
    w.into_inner().map_err(|e| CorpusError::Write(e.to_string()))
}

pub fn to_jsonl(corpus: &Corpus) -> Vec<u8> {
    let mut out = Vec::new();
    for r in corpus.reports() {
        serde_json::to_writer(&mut out, r).expect("BugReport serializes");
        out.push(b'\n');
    }
    out
}

pub fn save_corpus(corpus: &Corpus, path: &Path, format: CorpusFormat) -> Result<(), CorpusError> {
    let bytes = match format {
        CorpusFormat::Csv => to_csv(corpus)?,
        CorpusFormat::Jsonl => to_jsonl(corpus),
    };
    crate::io::write_atomic(path, &bytes).map_err(|e| CorpusError::Write(e.to_string()))
}

/// Disjoint train/test index sets, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub ratio: f64,
    pub seed: u64,
}

/// Per-class train counts: each is the floor or ceiling of `ratio * n_c`,
/// summing to `round(ratio * n)`. Leftover units go to the classes with a
/// fractional remainder, largest class first (ties favor Intrinsic).
fn stratum_sizes(class_sizes: [usize; 2], ratio: f64) -> [usize; 2] {
    let n: usize = class_sizes.iter().sum();
    let exact = class_sizes.map(|c| ratio * c as f64);
    let mut take = exact.map(|e| e.floor() as usize);
    let target = (ratio * n as f64).round() as usize;
    let mut order = [1usize, 0];
    order.sort_by(|a, b| class_sizes[*b].cmp(&class_sizes[*a]));
    let mut remaining = target.saturating_sub(take.iter().sum());
    for c in order {
        if remaining == 0 {
            break;
        }
        if exact[c] > take[c] as f64 {
            take[c] += 1;
            remaining -= 1;
        }
    }
    take
}

pub fn stratified_holdout(labels: &[Label], ratio: f64, seed: u64) -> Result<SplitPlan, CorpusError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CorpusError::BadRatio(ratio));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, l) in labels.iter().enumerate() {
        by_class[l.as_u8() as usize].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            return Err(CorpusError::ClassAbsent(Label::from_u8(c as u8).unwrap()));
        }
    }
    let take = stratum_sizes([by_class[0].len(), by_class[1].len()], ratio);
    let mut rng = seed::rng(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..take[c]]);
        test.extend_from_slice(&members[take[c]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitPlan {
        train_indices: train,
        test_indices: test,
        ratio,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn report(id: &str, is_bug: bool, has_bic: bool) -> BugReport {
        BugReport {
            bug_id: id.into(),
            project: "nova".into(),
            is_bug,
            has_bic,
            title: format!("title {id}"),
            description: "desc, with \"quotes\"\nand newline".into(),
        }
    }

    #[test]
    fn label_truth_table() {
        assert_eq!(derive_label(true, true), Label::Intrinsic);
        assert_eq!(derive_label(true, false), Label::NonIntrinsic);
        assert_eq!(derive_label(false, true), Label::NonIntrinsic);
        assert_eq!(derive_label(false, false), Label::NonIntrinsic);
        let intrinsic = [false, true]
            .iter()
            .flat_map(|a| [false, true].map(|b| derive_label(*a, b)))
            .filter(|l| *l == Label::Intrinsic)
            .count();
        assert_eq!(intrinsic, 1);
    }

    #[test]
    fn header_only_csv_is_empty_corpus() {
        let c = parse_csv("bug_id,project,is_bug,has_bic,title,description\n").unwrap();
        assert!(c.is_empty());
        assert!(matches!(
            stratified_holdout(c.labels(), 0.8, 1),
            Err(CorpusError::ClassAbsent(_))
        ));
    }

    #[test]
    fn bad_flag_names_row() {
        let text = "bug_id,project,is_bug,has_bic,title,description\n\
                    1,nova,1,1,a,b\n2,nova,1,maybe,c,d\n";
        match parse_csv(text) {
            Err(CorpusError::BadFlag { row, field, value }) => {
                assert_eq!((row, field.as_str(), value.as_str()), (2, "has_bic", "maybe"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_and_short_row() {
        let err = parse_csv("bug_id,project,is_bug,title,description\n1,n,1,a,b\n").unwrap_err();
        assert!(matches!(err, CorpusError::MissingField { ref field, .. } if field == "has_bic"));
        let err = parse_csv("bug_id,project,is_bug,has_bic,title,description\n1,n,1,1,a\n").unwrap_err();
        assert!(matches!(err, CorpusError::MissingField { row: 1, ref field } if field == "description"));
    }

    #[test]
    fn jsonl_missing_field_and_duplicates() {
        let err =
            parse_jsonl(r#"{"bug_id":"1","project":"x","is_bug":true,"title":"t","description":"d"}"#).unwrap_err();
        assert!(matches!(err, CorpusError::MissingField { row: 1, ref field } if field == "has_bic"));
        let line = r#"{"bug_id":"1","project":"x","is_bug":1,"has_bic":0,"title":"t","description":"d"}"#;
        let err = parse_jsonl(&format!("{line}\n{line}\n")).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { row: 2, .. }));
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = Corpus::from_reports(vec![report("1", true, true), report("2", false, true)]).unwrap();
        let mut changed = a.reports().to_vec();
        changed[1].has_bic = false;
        let b = Corpus::from_reports(changed).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        let again = Corpus::from_reports(a.reports().to_vec()).unwrap();
        assert_eq!(a.fingerprint(), again.fingerprint());
    }

    #[test]
    fn holdout_on_full_corpus_counts() {
        let mut labels = vec![Label::Intrinsic; 1120];
        labels.extend(vec![Label::NonIntrinsic; 760]);
        for seed in [0, 1, 99] {
            let plan = stratified_holdout(&labels, 0.8, seed).unwrap();
            let pos_train = plan
                .train_indices
                .iter()
                .filter(|&&i| labels[i] == Label::Intrinsic)
                .count();
            assert_eq!(plan.train_indices.len(), 1504);
            assert_eq!(plan.test_indices.len(), 376);
            assert_eq!(pos_train, 896);
            assert_eq!(plan.train_indices.len() - pos_train, 608);
        }
    }

    #[test]
    fn holdout_small_even_split_and_determinism() {
        let labels: Vec<Label> = (0..10)
            .map(|i| {
                if i % 2 == 0 {
                    Label::Intrinsic
                } else {
                    Label::NonIntrinsic
                }
            })
            .collect();
        let plan = stratified_holdout(&labels, 0.5, 3).unwrap();
        assert_eq!(plan.train_indices.len(), 5);
        let pos = plan
            .train_indices
            .iter()
            .filter(|&&i| labels[i] == Label::Intrinsic)
            .count();
        assert!(pos == 2 || pos == 3);
        assert_eq!(plan, stratified_holdout(&labels, 0.5, 3).unwrap());
        assert!(matches!(
            stratified_holdout(&labels, 1.0, 3),
            Err(CorpusError::BadRatio(_))
        ));
    }

    fn arb_report() -> impl Strategy<Value = BugReport> {
        (
            "[a-z0-9]{1,8}",
            "[a-z]{0,6}",
            any::<bool>(),
            any::<bool>(),
            "\\PC{0,30}",
            "(\\PC|\n|,|\"){0,60}",
        )
            .prop_map(|(bug_id, project, is_bug, has_bic, title, description)| BugReport {
                bug_id,
                project,
                is_bug,
                has_bic,
                title,
                description,
            })
    }

    proptest! {
        #[test]
        fn save_then_load_is_identity(reports in prop::collection::vec(arb_report(), 0..12)) {
            let mut seen = HashSet::new();
            let reports: Vec<_> = reports.into_iter().filter(|r| seen.insert(r.bug_id.clone())).collect();
            let corpus = Corpus::from_reports(reports).unwrap();
            let csv = parse_csv(std::str::from_utf8(&to_csv(&corpus).unwrap()).unwrap()).unwrap();
            prop_assert_eq!(&csv, &corpus);
            let jsonl = parse_jsonl(std::str::from_utf8(&to_jsonl(&corpus)).unwrap()).unwrap();
            prop_assert_eq!(&jsonl, &corpus);
        }

        #[test]
        fn holdout_partitions_and_stratifies(
            n in 2usize..500,
            pos_frac in 0.05f64..0.95,
            ratio in 0.1f64..0.9,
            seed in any::<u64>(),
        ) {
            let n_pos = ((n as f64 * pos_frac).round() as usize).clamp(1, n - 1);
            let labels: Vec<Label> = (0..n)
                .map(|i| if (i * 7919) % n < n_pos { Label::Intrinsic } else { Label::NonIntrinsic })
                .collect();
            let plan = stratified_holdout(&labels, ratio, seed).unwrap();
            let mut all: Vec<usize> = plan.train_indices.iter().chain(&plan.test_indices).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            for class in [Label::Intrinsic, Label::NonIntrinsic] {
                let size = labels.iter().filter(|l| **l == class).count();
                let got = plan.train_indices.iter().filter(|&&i| labels[i] == class).count();
                prop_assert!((got as f64 - ratio * size as f64).abs() <= 1.0);
            }
        }
    }
}
