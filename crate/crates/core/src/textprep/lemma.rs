//! Deterministic rule-based English lemmatizer: exception dictionary first,
//! then an ordered suffix rule table, iterated to a fixed point.

use std::collections::BTreeMap;

use super::{is_sentinel, TextError};

const DEFAULT_EXCEPTIONS: &str = include_str!("../../fixtures/lemma_exceptions.tsv");
const DEFAULT_RULES: &str = include_str!("../../fixtures/lemma_rules.tsv");

/// Upper bound on rule rounds per word. Every rule shortens the word, so
/// this is never reached on real input.
const MAX_ROUNDS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Repair {
    None,
    Verb,
}

#[derive(Debug, Clone)]
struct SuffixRule {
    suffix: String,
    replacement: String,
    min_len: usize,
    repair: Repair,
}

impl SuffixRule {
    fn is_guard(&self) -> bool {
        self.suffix == self.replacement && self.repair == Repair::None
    }
}

#[derive(Debug, Clone)]
pub struct Lemmatizer {
    exceptions: BTreeMap<String, String>,
    rules: Vec<SuffixRule>,
    restore_e: Vec<String>,
}

impl Default for Lemmatizer {
    fn default() -> Self {
        Lemmatizer::from_tables(DEFAULT_EXCEPTIONS, DEFAULT_RULES).expect("bundled lemma tables parse")
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn is_vowel(word: &[u8], i: usize) -> bool {
    match word[i] {
        b'a' | b'e' | b'i' | b'o' | b'u' => true,
        b'y' => i > 0 && !is_vowel(word, i - 1),
        _ => false,
    }
}

/// Number of vowel-consonant sequences in the stem.
fn measure(word: &[u8]) -> usize {
    let mut m = 0;
    let mut prev_vowel = false;
    for i in 0..word.len() {
        let v = is_vowel(word, i);
        if prev_vowel && !v {
            m += 1;
        }
        prev_vowel = v;
    }
    m
}

fn ends_cvc(word: &[u8]) -> bool {
    let n = word.len();
    n >= 3
        && !is_vowel(word, n - 3)
        && is_vowel(word, n - 2)
        && !is_vowel(word, n - 1)
        && !matches!(word[n - 1], b'w' | b'x' | b'y')
}

impl Lemmatizer {
    pub fn from_tables(exceptions: &str, rules: &str) -> Result<Self, TextError> {
        let mut exc = BTreeMap::new();
        for (line, l) in data_lines(exceptions) {
            let mut parts = l.split('\t');
            match (parts.next(), parts.next()) {
                (Some(w), Some(lemma)) if !w.is_empty() && !lemma.is_empty() => {
                    exc.insert(w.trim().to_string(), lemma.trim().to_string());
                }
                _ => {
                    return Err(TextError::Fixture {
                        name: "lemma_exceptions.tsv".into(),
                        line,
                    })
                }
            }
        }
        let mut suffix_rules = Vec::new();
        let mut restore_e = Vec::new();
        for (line, l) in data_lines(rules) {
            let cols: Vec<&str> = l.split('\t').map(str::trim).collect();
            let bad = || TextError::Fixture {
                name: "lemma_rules.tsv".into(),
                line,
            };
            match cols.as_slice() {
                ["strip", suffix, replacement, min_len, repair] => {
                    suffix_rules.push(SuffixRule {
                        suffix: suffix.to_string(),
                        replacement: if *replacement == "-" {
                            String::new()
                        } else {
                            replacement.to_string()
                        },
                        min_len: min_len.parse().map_err(|_| bad())?,
                        repair: match *repair {
                            "none" => Repair::None,
                            "verb" => Repair::Verb,
                            _ => return Err(bad()),
                        },
                    });
                }
                ["restore_e", ending] => restore_e.push(ending.to_string()),
                _ => return Err(bad()),
            }
        }
        Ok(Lemmatizer {
            exceptions: exc,
            rules: suffix_rules,
            restore_e,
        })
    }

    fn repair_verb_stem(&self, stem: &str) -> Option<String> {
        let b = stem.as_bytes();
        if !(0..b.len()).any(|i| is_vowel(b, i)) {
            return None;
        }
        let n = b.len();
        if n >= 2 && b[n - 1] == b[n - 2] && !is_vowel(b, n - 1) && !matches!(b[n - 1], b'l' | b's' | b'z') {
            return Some(stem[..n - 1].to_string());
        }
        if self.restore_e.iter().any(|e| stem.ends_with(e.as_str())) {
            return Some(format!("{stem}e"));
        }
        if measure(b) == 1 && ends_cvc(b) {
            return Some(format!("{stem}e"));
        }
        Some(stem.to_string())
    }

    /// One round: `Some(next)` if a rule rewrote the word.
    fn step(&self, word: &str) -> Option<String> {
        let rule = self
            .rules
            .iter()
            .find(|r| word.len() >= r.min_len && word.ends_with(r.suffix.as_str()))?;
        if rule.is_guard() {
            return None;
        }
        let stem = &word[..word.len() - rule.suffix.len()];
        let next = match rule.repair {
            Repair::None => format!("{stem}{}", rule.replacement),
            Repair::Verb => self.repair_verb_stem(stem)?,
        };
        (next != word && !next.is_empty()).then_some(next)
    }

    pub fn lemma(&self, word: &str) -> String {
        if is_sentinel(word) {
            return word.to_string();
        }
        let mut current = word.to_string();
        for _ in 0..MAX_ROUNDS {
            if let Some(l) = self.exceptions.get(&current) {
                return l.clone();
            }
            match self.step(&current) {
                Some(next) => current = next,
                None => break,
            }
        }
        current
    }

    pub fn exception_lemmas(&self) -> impl Iterator<Item = &str> {
        self.exceptions.values().map(String::as_str)
    }
}
