//! Generator for a small labeled corpus that is separable by construction:
//! every Intrinsic title carries the marker `regression`, every NonIntrinsic
//! title carries `upgrade`, and neither marker appears in the other class.
//! Descriptions mix in URLs, hex ids, numbers, project names and tracebacks
//! so the whole cleanup path is exercised.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::corpus::{BugReport, Corpus};
use crate::seed;

pub const INTRINSIC_MARKER: &str = "regression";
pub const NON_INTRINSIC_MARKER: &str = "upgrade";

const INTRINSIC_WORDS: &[&str] = &["deadlock", "overflow", "segfault", "typo", "leak", "race"];
const NON_INTRINSIC_WORDS: &[&str] = &["dependency", "vendor", "kernel", "distro", "firewall", "proxy"];
const FILLER: &[&str] = &[
    "instance",
    "volume",
    "scheduler",
    "network",
    "port",
    "image",
    "quota",
    "token",
    "api",
    "server",
    "agent",
    "database",
    "node",
    "driver",
    "router",
    "console",
    "flavor",
    "metadata",
    "policy",
    "service",
];
const PROJECTS: &[&str] = &["nova", "neutron", "keystone", "glance", "cinder", "swift"];
const TRACEBACK: &str = "Traceback (most recent call last):\n  File \"/usr/lib/python3/dist-packages/app.py\", line 42, in run\n    self.start()\n";

fn pick<'a, R: Rng>(rng: &mut R, words: &[&'a str], n: usize) -> Vec<&'a str> {
    (0..n)
        .map(|_| *words.choose(rng).expect("non-empty word list"))
        .collect()
}

/// `n` reports, `round(n * intrinsic_fraction)` of them Intrinsic, in a
/// seeded shuffled order.
pub fn synthetic_reports(n: usize, intrinsic_fraction: f64, seed_value: u64) -> Vec<BugReport> {
    let mut rng = seed::rng(seed::derive_seed(seed_value, "synth"));
    let n_pos = (n as f64 * intrinsic_fraction).round() as usize;
    let mut intrinsic: Vec<bool> = (0..n).map(|i| i < n_pos).collect();
    rand::seq::SliceRandom::shuffle(intrinsic.as_mut_slice(), &mut rng);
    intrinsic
        .into_iter()
        .enumerate()
        .map(|(i, pos)| {
            let project = *PROJECTS.choose(&mut rng).expect("projects");
            let other = *PROJECTS.choose(&mut rng).expect("projects");
            let (marker, words) = if pos {
                (INTRINSIC_MARKER, INTRINSIC_WORDS)
            } else {
                (NON_INTRINSIC_MARKER, NON_INTRINSIC_WORDS)
            };
            let n_filler = rng.random_range(1..=3);
            let mut title = pick(&mut rng, FILLER, n_filler);
            title.push(marker);
            let n_extra = rng.random_range(0..=2);
            title.extend(pick(&mut rng, words, n_extra));
            let at = rng.random_range(0..=title.len());
            title.insert(at, project);
            let mut description = format!(
                "{} after {} {} in {} build {:x}{} see https://bugs.example.org/{}",
                title.join(" "),
                pick(&mut rng, FILLER, 1)[0],
                pick(&mut rng, words, 1)[0],
                other,
                rng.random_range(0x1000_0000u64..0xffff_ffff),
                rng.random_range(1..10),
                100 + i,
            );
            if rng.random_bool(0.3) {
                description.push('\n');
                description.push_str(TRACEBACK);
            }
            // Labels: Intrinsic needs both flags; the other three
            // combinations are NonIntrinsic.
            let (is_bug, has_bic) = if pos {
                (true, true)
            } else {
                *[(true, false), (false, true), (false, false)]
                    .choose(&mut rng)
                    .expect("flags")
            };
            BugReport {
                bug_id: format!("SYN-{:04}", i + 1),
                project: project.to_string(),
                is_bug,
                has_bic,
                title: title.join(" "),
                description,
            }
        })
        .collect()
}

pub fn synthetic_corpus(n: usize, intrinsic_fraction: f64, seed_value: u64) -> Corpus {
    Corpus::from_reports(synthetic_reports(n, intrinsic_fraction, seed_value)).expect("generated ids are unique")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use crate::textprep::{Preprocessor, TextField};

    #[test]
    fn markers_separate_the_classes_after_preprocessing() {
        let corpus = synthetic_corpus(200, 0.6, 7);
        assert_eq!(corpus.class_counts(), (80, 120));
        let pre = Preprocessor::default();
        for (r, label) in corpus.reports().iter().zip(corpus.labels()) {
            let doc = pre.preprocess(r, TextField::Title).unwrap();
            let has = |m: &str| doc.tokens.iter().any(|t| t == m);
            match label {
                Label::Intrinsic => assert!(has(INTRINSIC_MARKER) && !has(NON_INTRINSIC_MARKER), "{doc:?}"),
                Label::NonIntrinsic => assert!(has(NON_INTRINSIC_MARKER) && !has(INTRINSIC_MARKER), "{doc:?}"),
            }
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(synthetic_reports(30, 0.5, 1), synthetic_reports(30, 0.5, 1));
        assert_ne!(synthetic_reports(30, 0.5, 1), synthetic_reports(30, 0.5, 2));
    }
}
