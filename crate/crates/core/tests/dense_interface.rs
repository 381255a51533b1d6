//! The manifest + JSONL contract shared with the external embedding exporter.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use buggin_core::corpus::{save_corpus, CorpusFormat};
use buggin_core::features::{
    assemble_matrix, import_dense, write_dense, EmbeddingManifest, EmbeddingRow, FeatureError, FeatureSource,
};
use buggin_core::learners::Family;
use buggin_core::pipeline::{run_experiment, EmbeddingSource, PipelineError, RunConfig};
use buggin_core::synth::{synthetic_corpus, INTRINSIC_MARKER};
use buggin_core::textprep::{Document, TextField};

/// Written the way the exporter writes it: extra keys for pooling,
/// truncation and per-run stats, and a zero vector for an empty text.
const EXPORTER_MANIFEST: &str = r#"{
  "model_name": "se-encoder-base",
  "dimension": 4,
  "count": 3,
  "pooling": "mean",
  "max_len": 128,
  "text_field": "description",
  "stats": {"zero_vectors": ["B-3"]}
}"#;

const EXPORTER_VECTORS: &str = "{\"id\":\"B-1\",\"v\":[0.25,-1.5,3.0,0.0]}\n\
{\"id\":\"B-2\",\"v\":[1e-3,2.5e2,-0.125,7.0]}\n\
{\"id\":\"B-3\",\"v\":[0.0,0.0,0.0,0.0]}\n";

#[test]
fn exporter_output_imports_unmodified() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.json");
    fs::write(&path, EXPORTER_MANIFEST).unwrap();
    fs::write(dir.path().join("vectors.jsonl"), EXPORTER_VECTORS).unwrap();
    let table = import_dense(&path).unwrap();
    assert_eq!(table.len(), 3);
    assert_eq!(table.dimension(), 4);
    assert_eq!(table.model_name(), "se-encoder-base");
    assert_eq!(table.get("B-2").unwrap(), &[1e-3, 250.0, -0.125, 7.0]);
    assert_eq!(table.get("B-3").unwrap(), &[0.0; 4]);
    let meta = &table.manifest().metadata;
    assert_eq!(meta["pooling"], "mean");
    assert_eq!(meta["max_len"], 128);
    assert_eq!(meta["stats"]["zero_vectors"][0], "B-3");
}

#[test]
fn write_then_import_round_trips_with_a_custom_vector_path() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("vecs")).unwrap();
    let path = dir.path().join("m.json");
    let manifest = EmbeddingManifest {
        model_name: "m".into(),
        dimension: 3,
        count: 2,
        vectors: Some("vecs/out.jsonl".into()),
        metadata: BTreeMap::from([("pooling".to_string(), serde_json::json!("cls"))]),
    };
    let rows = vec![
        EmbeddingRow {
            id: "x".into(),
            v: vec![0.1, 0.2, 0.30000000000000004],
        },
        EmbeddingRow {
            id: "y".into(),
            v: vec![-1e300, 5e-324, 1.0],
        },
    ];
    write_dense(&path, &manifest, &rows).unwrap();
    assert!(dir.path().join("vecs/out.jsonl").is_file());
    let table = import_dense(&path).unwrap();
    assert_eq!(table.manifest(), &manifest);
    for r in &rows {
        assert_eq!(table.get(&r.id).unwrap(), r.v.as_slice());
    }
}

fn write_raw(dir: &Path, manifest: &str, vectors: &str) -> std::path::PathBuf {
    let path = dir.join("manifest.json");
    fs::write(&path, manifest).unwrap();
    fs::write(dir.join("vectors.jsonl"), vectors).unwrap();
    path
}

#[test]
fn contract_violations_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let header = r#"{"model_name":"m","dimension":2,"count":2}"#;
    type Case = (&'static str, &'static str, fn(&FeatureError) -> bool);
    let cases: [Case; 5] = [
        (header, "{\"id\":\"a\",\"v\":[1,2]}\n", |e| {
            matches!(e, FeatureError::Format(_))
        }),
        (header, "{\"id\":\"a\",\"v\":[1,2]}\n{\"id\":\"b\",\"v\":[1]}\n", |e| {
            matches!(e, FeatureError::Dimension { got: 1, .. })
        }),
        (
            header,
            "{\"id\":\"a\",\"v\":[1,2]}\n{\"id\":\"a\",\"v\":[3,4]}\n",
            |e| matches!(e, FeatureError::Duplicate(_)),
        ),
        (
            header,
            "{\"id\":\"a\",\"v\":[1,2]}\n{\"id\":\"b\",\"v\":[Infinity,4]}\n",
            |e| matches!(e, FeatureError::NonFinite(_)),
        ),
        (r#"{"model_name":"m","count":2}"#, "", |e| {
            matches!(e, FeatureError::Format(_))
        }),
    ];
    for (i, (manifest, vectors, expected)) in cases.iter().enumerate() {
        let err = import_dense(&write_raw(d, manifest, vectors)).unwrap_err();
        assert!(expected(&err), "case {i}: {err}");
    }
    let path = write_raw(d, header, "");
    fs::remove_file(d.join("vectors.jsonl")).unwrap();
    assert!(matches!(import_dense(&path), Err(FeatureError::Io { .. })));
}

fn doc(id: &str) -> Document {
    Document {
        bug_id: id.into(),
        source_field: TextField::Title,
        tokens: Vec::new(),
    }
}

#[test]
fn permuting_documents_permutes_rows_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_raw(dir.path(), EXPORTER_MANIFEST, EXPORTER_VECTORS);
    let table = import_dense(&path).unwrap();
    let docs = [doc("B-1"), doc("B-2"), doc("B-3")];
    let forward = assemble_matrix(
        FeatureSource::Dense(&table),
        &docs.iter().collect::<Vec<_>>(),
        &[1, 0, 1],
    )
    .unwrap();
    let order = [2, 0, 1];
    let permuted: Vec<&Document> = order.iter().map(|&i| &docs[i]).collect();
    let back = assemble_matrix(FeatureSource::Dense(&table), &permuted, &[1, 1, 0]).unwrap();
    for (new, &old) in order.iter().enumerate() {
        assert_eq!(back.row_ids()[new], forward.row_ids()[old]);
        assert_eq!(back.to_dense_rows()[new], forward.to_dense_rows()[old]);
    }
}

#[test]
fn unknown_ids_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let table = import_dense(&write_raw(dir.path(), EXPORTER_MANIFEST, EXPORTER_VECTORS)).unwrap();
    let docs = [doc("B-1"), doc("B-9")];
    let err = assemble_matrix(FeatureSource::Dense(&table), &docs.iter().collect::<Vec<_>>(), &[0, 1]).unwrap_err();
    assert!(matches!(err, FeatureError::Lookup(ref ids) if ids == &["B-9"]), "{err}");
}

/// A stand-in encoder: one informative coordinate (does the title carry the
/// intrinsic marker) plus two id-derived nuisance coordinates.
fn fake_vectors(corpus: &buggin_core::Corpus) -> Vec<EmbeddingRow> {
    corpus
        .reports()
        .iter()
        .enumerate()
        .map(|(i, r)| EmbeddingRow {
            id: r.bug_id.clone(),
            v: vec![
                f64::from(u8::from(r.title.contains(INTRINSIC_MARKER))),
                (i % 7) as f64 / 7.0,
                (i % 3) as f64 / 3.0,
            ],
        })
        .collect()
}

#[test]
fn dense_run_uses_exporter_output() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synthetic_corpus(120, 0.5, 11);
    let corpus_path = dir.path().join("corpus.csv");
    save_corpus(&corpus, &corpus_path, CorpusFormat::Csv).unwrap();
    let manifest_path = dir.path().join("emb/manifest.json");
    fs::create_dir_all(manifest_path.parent().unwrap()).unwrap();
    let manifest = EmbeddingManifest {
        model_name: "fake-encoder".into(),
        dimension: 3,
        count: corpus.len(),
        vectors: None,
        metadata: BTreeMap::from([("pooling".to_string(), serde_json::json!("mean"))]),
    };
    write_dense(&manifest_path, &manifest, &fake_vectors(&corpus)).unwrap();

    let mut config = RunConfig::new(&corpus_path, dir.path().join("out"));
    config.embedding = EmbeddingSource::Dense {
        manifest: manifest_path.clone(),
    };
    config.families = vec![Family::Dtree, Family::Logreg];
    let out = run_experiment(&config).unwrap();
    let r = &out.report;
    assert_eq!(r.embedding.kind, "dense");
    assert_eq!(r.embedding.model_name.as_deref(), Some("fake-encoder"));
    assert_eq!(r.embedding.n_features, 3);
    assert_eq!(r.families.len(), 2);
    for f in &r.families {
        assert!(f.holdout.f1 >= 0.9, "{}: {}", f.family, f.holdout.f1);
    }

    // a table that misses some reports fails in the embed stage
    let mut short = fake_vectors(&corpus);
    short.truncate(10);
    let manifest = EmbeddingManifest { count: 10, ..manifest };
    write_dense(&manifest_path, &manifest, &short).unwrap();
    let err = run_experiment(&config).err().expect("missing ids must fail");
    assert!(matches!(err, PipelineError::Stage { stage: "embed", .. }), "{err}");
}
