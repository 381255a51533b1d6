//! Regenerates `data/synthetic_corpus.csv`:
//! `cargo run -p buggin-core --example gen_synthetic -- data/synthetic_corpus.csv`

use std::path::PathBuf;

use buggin_core::corpus::{save_corpus, CorpusFormat};
use buggin_core::synth::synthetic_corpus;

pub const SIZE: usize = 200;
pub const INTRINSIC_FRACTION: f64 = 0.6;
pub const SEED: u64 = 2024;

fn main() {
    let out: PathBuf = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| "data/synthetic_corpus.csv".into());
    let corpus = synthetic_corpus(SIZE, INTRINSIC_FRACTION, SEED);
    save_corpus(&corpus, &out, CorpusFormat::Csv).expect("write corpus");
    println!("wrote {} reports to {}", corpus.len(), out.display());
}
