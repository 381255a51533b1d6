//! Text cleanup and normalization of bug-report titles and descriptions.
//!
//! `clean_text` applies its rules in a fixed order: traceback removal, URL
//! replacement, hex-id deletion, project-name replacement, removal of
//! special characters and numerals, lowercasing. Tokens then go through
//! stopword removal and lemmatization.

mod lemma;

pub use lemma::Lemmatizer;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::BugReport;

pub const URL_SENTINEL: &str = "<url>";
pub const INTERNAL_SENTINEL: &str = "<internal_project>";
pub const EXTERNAL_SENTINEL: &str = "<external_project>";

const DEFAULT_STOPWORDS: &str = include_str!("../../fixtures/stopwords.txt");
const DEFAULT_PROJECTS: &str = include_str!("../../fixtures/projects.txt");
const PYTHON_TRACEBACK: &str = r"Traceback \(most recent call last\):";

static URL_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)(?:https?://|www\.)\S+").unwrap());
static HEX_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b[0-9a-fA-F]{7,40}\b").unwrap());
static SENTINEL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)<url>|<internal[ _]project>|<external[ _]project>").unwrap());

#[derive(Debug, Error)]
pub enum TextError {
    #[error("malformed fixture {name} at line {line}")]
    Fixture { name: String, line: usize },
    #[error("io error reading {path}: {message}")]
    Io { path: String, message: String },
    #[error("project {0:?} is not among the known projects")]
    UnknownProject(String),
    #[error("bad traceback pattern {pattern:?}: {message}")]
    Pattern { pattern: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextField {
    Title,
    Description,
}

impl TextField {
    pub fn of(self, report: &BugReport) -> &str {
        match self {
            TextField::Title => &report.title,
            TextField::Description => &report.description,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TextField::Title => "title",
            TextField::Description => "description",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub bug_id: String,
    pub source_field: TextField,
    pub tokens: Vec<String>,
}

pub fn is_sentinel(token: &str) -> bool {
    matches!(token, URL_SENTINEL | INTERNAL_SENTINEL | EXTERNAL_SENTINEL)
}

fn read_fixture(path: &Path) -> Result<String, TextError> {
    fs::read_to_string(path).map_err(|e| TextError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn word_list(text: &str) -> impl Iterator<Item = String> + '_ {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
}

/// Frozen stopword list.
#[derive(Debug, Clone)]
pub struct Stoplist(BTreeSet<String>);

impl Default for Stoplist {
    fn default() -> Self {
        Stoplist::parse(DEFAULT_STOPWORDS)
    }
}

impl Stoplist {
    pub fn parse(text: &str) -> Self {
        Stoplist(word_list(text).collect())
    }

    pub fn load(path: &Path) -> Result<Self, TextError> {
        Ok(Stoplist::parse(&read_fixture(path)?))
    }

    pub fn contains(&self, token: &str) -> bool {
        !is_sentinel(token) && self.0.contains(token)
    }
}

/// Every project name the replacement rule recognizes, compiled once into a
/// single case-insensitive whole-word matcher (longest names first).
#[derive(Debug, Clone)]
pub struct KnownProjects {
    names: BTreeSet<String>,
    matcher: Option<Regex>,
}

impl Default for KnownProjects {
    fn default() -> Self {
        KnownProjects::new(word_list(DEFAULT_PROJECTS))
    }
}

impl KnownProjects {
    pub fn new<I: IntoIterator<Item = String>>(names: I) -> Self {
        let names: BTreeSet<String> = names
            .into_iter()
            .map(|n| n.trim().to_lowercase())
            .filter(|n| !n.is_empty())
            .collect();
        let mut ordered: Vec<&String> = names.iter().collect();
        ordered.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        let matcher = (!ordered.is_empty()).then(|| {
            let alt: Vec<String> = ordered.iter().map(|n| regex::escape(n)).collect();
            Regex::new(&format!(r"(?i)\b(?:{})\b", alt.join("|"))).expect("escaped alternation")
        });
        KnownProjects { names, matcher }
    }

    pub fn load(path: &Path) -> Result<Self, TextError> {
        Ok(KnownProjects::new(word_list(&read_fixture(path)?)))
    }

    /// Adds names (e.g. every project appearing in a corpus).
    pub fn extended<I: IntoIterator<Item = String>>(&self, extra: I) -> Self {
        KnownProjects::new(self.names.iter().cloned().chain(extra))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.contains(&name.trim().to_lowercase())
    }

    pub fn context<'a>(&'a self, own_project: &str) -> Result<ProjectContext<'a>, TextError> {
        if !self.contains(own_project) {
            return Err(TextError::UnknownProject(own_project.to_string()));
        }
        Ok(ProjectContext {
            own_project: own_project.trim().to_lowercase(),
            known: self,
        })
    }
}

/// The report's own project plus everything else that counts as external.
#[derive(Debug, Clone)]
pub struct ProjectContext<'a> {
    own_project: String,
    known: &'a KnownProjects,
}

impl ProjectContext<'_> {
    pub fn own_project(&self) -> &str {
        &self.own_project
    }
}

/// Cleanup rules. Traceback headers are configurable; the default list is
/// the Python traceback header.
#[derive(Debug, Clone)]
pub struct Cleaner {
    traceback_headers: Vec<Regex>,
}

impl Default for Cleaner {
    fn default() -> Self {
        Cleaner {
            traceback_headers: vec![Regex::new(PYTHON_TRACEBACK).unwrap()],
        }
    }
}

impl Cleaner {
    pub fn with_traceback_patterns(patterns: &[&str]) -> Result<Self, TextError> {
        let traceback_headers = patterns
            .iter()
            .map(|p| {
                Regex::new(p).map_err(|e| TextError::Pattern {
                    pattern: p.to_string(),
                    message: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Cleaner { traceback_headers })
    }

    fn strip_tracebacks(&self, raw: &str) -> String {
        let mut out = Vec::new();
        let mut in_trace = false;
        for line in raw.lines() {
            if self.traceback_headers.iter().any(|re| re.is_match(line)) {
                in_trace = true;
                continue;
            }
            if in_trace && line.starts_with([' ', '\t']) {
                continue;
            }
            in_trace = false;
            out.push(line);
        }
        out.join("\n")
    }

    pub fn clean(&self, raw: &str, ctx: &ProjectContext<'_>) -> String {
        let text = self.strip_tracebacks(raw);
        let text = URL_RE.replace_all(&text, " <URL> ");
        let text = HEX_RE.replace_all(&text, |c: &Captures<'_>| {
            if c[0].bytes().any(|b| b.is_ascii_digit()) {
                String::new()
            } else {
                c[0].to_string()
            }
        });
        let text = match &ctx.known.matcher {
            Some(re) => re.replace_all(&text, |c: &Captures<'_>| {
                if c[0].eq_ignore_ascii_case(&ctx.own_project) {
                    " <internal project> "
                } else {
                    " <external project> "
                }
                .to_string()
            }),
            None => text,
        };
        let mut kept = String::with_capacity(text.len());
        let mut last = 0;
        for m in SENTINEL_RE.find_iter(&text) {
            strip_special(&text[last..m.start()], &mut kept);
            kept.push(' ');
            kept.push_str(m.as_str());
            kept.push(' ');
            last = m.end();
        }
        strip_special(&text[last..], &mut kept);
        kept.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

/// Letters and whitespace survive, digits vanish, everything else becomes a
/// word break.
fn strip_special(segment: &str, out: &mut String) {
    for ch in segment.chars() {
        if ch.is_ascii_alphabetic() || ch.is_whitespace() {
            out.push(ch);
        } else if !ch.is_ascii_digit() {
            out.push(' ');
        }
    }
}

pub fn clean_text(raw: &str, ctx: &ProjectContext<'_>) -> String {
    Cleaner::default().clean(raw, ctx)
}

pub fn tokenize(cleaned: &str) -> Vec<String> {
    let normalized = SENTINEL_RE.replace_all(cleaned, |c: &Captures<'_>| {
        format!(" {} ", c[0].to_lowercase().replace(' ', "_"))
    });
    normalized.split_whitespace().map(str::to_string).collect()
}

pub fn remove_stopwords(tokens: Vec<String>, stoplist: &Stoplist) -> Vec<String> {
    tokens.into_iter().filter(|t| !stoplist.contains(t)).collect()
}

pub fn lemmatize(tokens: Vec<String>, lemmatizer: &Lemmatizer) -> Vec<String> {
    tokens.into_iter().map(|t| lemmatizer.lemma(&t)).collect()
}

/// Bundles the fixtures needed to turn reports into documents.
#[derive(Debug, Clone, Default)]
pub struct Preprocessor {
    pub cleaner: Cleaner,
    pub stoplist: Stoplist,
    pub lemmatizer: Lemmatizer,
    pub projects: KnownProjects,
}

impl Preprocessor {
    pub fn with_projects(projects: KnownProjects) -> Self {
        Preprocessor {
            projects,
            ..Preprocessor::default()
        }
    }

    /// Cleans, tokenizes, drops stopwords and lemmatizes. Lemmas that land on
    /// a stopword (`doing` -> `do`) are dropped as well, so no document ever
    /// carries a stopword.
    pub fn process_text(&self, text: &str, ctx: &ProjectContext<'_>) -> Vec<String> {
        let tokens = tokenize(&self.cleaner.clean(text, ctx));
        let tokens = lemmatize(remove_stopwords(tokens, &self.stoplist), &self.lemmatizer);
        remove_stopwords(tokens, &self.stoplist)
    }

    pub fn preprocess(&self, report: &BugReport, field: TextField) -> Result<Document, TextError> {
        let ctx = self.projects.context(&report.project)?;
        Ok(Document {
            bug_id: report.bug_id.clone(),
            source_field: field,
            tokens: self.process_text(field.of(report), &ctx),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn projects() -> KnownProjects {
        KnownProjects::new(["nova".to_string(), "keystone".to_string()])
    }

    #[test]
    fn url_rule_runs_before_project_rule() {
        let p = projects();
        let ctx = p.context("nova").unwrap();
        assert_eq!(
            clean_text("Fix https://bugs.launchpad.net/nova/+bug/1 now", &ctx),
            "fix <url> now"
        );
        assert_eq!(clean_text("see www.nova.org", &ctx), "see <url>");
    }

    #[test]
    fn hex_ids_deleted_but_words_kept() {
        let p = projects();
        let ctx = p.context("nova").unwrap();
        assert_eq!(
            clean_text("commit a1b2c3d4e5f broke the gate", &ctx),
            "commit broke the gate"
        );
        assert_eq!(clean_text("a decade of deadbeef", &ctx), "a decade of deadbeef");
    }

    #[test]
    fn project_names_become_sentinels() {
        let p = projects();
        let ctx = p.context("nova").unwrap();
        assert_eq!(
            clean_text("nova fails after Keystone upgrade", &ctx),
            "<internal project> fails after <external project> upgrade"
        );
        assert_eq!(clean_text("novaclient is fine", &ctx), "novaclient is fine");
        assert!(matches!(p.context("swift"), Err(TextError::UnknownProject(_))));
    }

    #[test]
    fn traceback_and_numerals_removed() {
        let p = projects();
        let ctx = p.context("nova").unwrap();
        let raw = "Boot fails 3 times:\nTraceback (most recent call last):\n  File \"x.py\", line 12\n    raise Foo\nFooError: bad\nplease fix!";
        assert_eq!(clean_text(raw, &ctx), "boot fails times fooerror bad please fix");
    }

    #[test]
    fn tokenize_cases() {
        assert_eq!(tokenize("fix <url> now"), vec!["fix", "<url>", "now"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("<internal project> down"), vec!["<internal_project>", "down"]);
    }

    #[test]
    fn stopwords_filtered_in_order() {
        let s = Stoplist::parse("the\nis\n");
        let t = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(
            remove_stopwords(t(&["the", "gate", "is", "down"]), &s),
            t(&["gate", "down"])
        );
        assert!(remove_stopwords(vec![], &s).is_empty());
        let with_sentinel = Stoplist::parse("<url>\n");
        assert_eq!(remove_stopwords(t(&["<url>"]), &with_sentinel), t(&["<url>"]));
    }

    #[test]
    fn lemmatize_examples() {
        let l = Lemmatizer::default();
        let t = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(lemmatize(t(&["failures", "failing"]), &l), t(&["failure", "fail"]));
        assert_eq!(lemmatize(t(&["gas"]), &l), t(&["gas"]));
        assert_eq!(lemmatize(t(&["<url>"]), &l), t(&["<url>"]));
    }

    #[test]
    fn preprocess_title_and_empty_description() {
        let pre = Preprocessor::with_projects(projects());
        let report = BugReport {
            bug_id: "1".into(),
            project: "nova".into(),
            is_bug: true,
            has_bic: true,
            title: "Instances are failing to boot after the nova scheduler refactoring".into(),
            description: String::new(),
        };
        let doc = pre.preprocess(&report, TextField::Title).unwrap();
        assert_eq!(
            doc.tokens,
            vec![
                "instance",
                "fail",
                "boot",
                "<internal_project>",
                "scheduler",
                "refactor"
            ]
        );
        assert_eq!(doc, pre.preprocess(&report, TextField::Title).unwrap());
        assert!(pre
            .preprocess(&report, TextField::Description)
            .unwrap()
            .tokens
            .is_empty());
    }

    const WORDS: &[&str] = &[
        "The",
        "instances",
        "failed",
        "booting",
        "nova",
        "Keystone",
        "scheduler",
        "is",
        "broken",
        "after",
        "patches",
        "settings",
        "updating",
        "logs",
        "running",
        "v2.0",
        "1234",
        "a1b2c3d",
        "(error)",
        "don't",
        "https://x.org/nova",
        "www.example.com",
        "dependencies",
        "classes",
        "<url>",
        "caches",
        "#42",
        "mis-configured",
        "Émigré",
        "gate;",
        "timing",
    ];

    proptest! {
        #[test]
        fn pipeline_is_idempotent(idx in prop::collection::vec(0..WORDS.len(), 0..25)) {
            let pre = Preprocessor::with_projects(projects());
            let ctx = pre.projects.context("nova").unwrap();
            let text: Vec<&str> = idx.iter().map(|&i| WORDS[i]).collect();
            let once = pre.process_text(&text.join(" "), &ctx);
            let twice = pre.process_text(&once.join(" "), &ctx);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn no_url_hex_or_numeral_survives(raw in "(\\PC|\n| |https?://[a-z./]{1,10}|[0-9a-f]{7,12}|[0-9]{1,4}){0,40}") {
            let pre = Preprocessor::with_projects(projects());
            let ctx = pre.projects.context("nova").unwrap();
            let token_ok = Regex::new(r"^(?:[a-z]+|<url>|<internal_project>|<external_project>)$").unwrap();
            for tok in pre.process_text(&raw, &ctx) {
                prop_assert!(token_ok.is_match(&tok), "bad token {:?}", tok);
                prop_assert!(!pre.stoplist.contains(&tok));
            }
        }
    }
}
