use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{FeatureError, SparseRow};
use crate::textprep::Document;

/// Smoothed inverse document frequency: ln((1 + N) / (1 + df)) + 1.
pub fn smoothed_idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

/// Fitted vocabulary and idf weights. Columns are assigned in order of
/// first occurrence across the fitted documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    terms: Vec<String>,
    #[serde(skip)]
    vocabulary: HashMap<String, u32>,
    idf: Vec<f64>,
    n_docs_fitted: usize,
    fitted_ids: Vec<String>,
}

impl TfidfModel {
    pub fn n_features(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn n_docs_fitted(&self) -> usize {
        self.n_docs_fitted
    }

    pub fn fitted_ids(&self) -> &[String] {
        &self.fitted_ids
    }

    pub fn column(&self, term: &str) -> Option<usize> {
        self.vocabulary.get(term).map(|&c| c as usize)
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.vocabulary = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }
}

pub fn fit_tfidf(docs: &[&Document]) -> Result<TfidfModel, FeatureError> {
    if docs.is_empty() {
        return Err(FeatureError::NoDocuments);
    }
    let mut vocabulary: HashMap<String, u32> = HashMap::new();
    let mut terms = Vec::new();
    let mut df: Vec<usize> = Vec::new();
    let mut last_doc: Vec<usize> = Vec::new();
    for (d, doc) in docs.iter().enumerate() {
        for tok in &doc.tokens {
            let col = *vocabulary.entry(tok.clone()).or_insert_with(|| {
                terms.push(tok.clone());
                df.push(0);
                last_doc.push(usize::MAX);
                (terms.len() - 1) as u32
            }) as usize;
            if last_doc[col] != d {
                last_doc[col] = d;
                df[col] += 1;
            }
        }
    }
    if terms.is_empty() {
        return Err(FeatureError::EmptyVocabulary);
    }
    let n = docs.len();
    Ok(TfidfModel {
        idf: df.iter().map(|&f| smoothed_idf(n, f)).collect(),
        terms,
        vocabulary,
        n_docs_fitted: n,
        fitted_ids: docs.iter().map(|d| d.bug_id.clone()).collect(),
    })
}

/// Raw counts times idf, L2-normalized. Out-of-vocabulary tokens are
/// ignored; a document with no known tokens maps to the zero row.
pub fn transform_tfidf(model: &TfidfModel, doc: &Document) -> SparseRow {
    let mut counts: HashMap<u32, f64> = HashMap::new();
    for tok in &doc.tokens {
        if let Some(&c) = model.vocabulary.get(tok) {
            *counts.entry(c).or_insert(0.0) += 1.0;
        }
    }
    let mut row = SparseRow::from_pairs(
        counts
            .into_iter()
            .map(|(c, tf)| (c, tf * model.idf[c as usize]))
            .collect(),
    );
    let norm = row.norm();
    if norm > 0.0 {
        row.values.iter_mut().for_each(|v| *v /= norm);
    }
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textprep::TextField;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn doc(id: &str, toks: &[&str]) -> Document {
        Document {
            bug_id: id.into(),
            source_field: TextField::Title,
            tokens: toks.iter().map(|t| t.to_string()).collect(),
        }
    }

    #[test]
    fn idf_closed_form() {
        let d = [doc("1", &["a", "b"]), doc("2", &["a"])];
        let m = fit_tfidf(&d.iter().collect::<Vec<_>>()).unwrap();
        assert_eq!(m.terms(), &["a", "b"]);
        assert_abs_diff_eq!(m.idf()[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.idf()[1], 1.405465108108164, epsilon = 1e-12);

        let row = transform_tfidf(&m, &doc("q", &["a", "b", "b"]));
        assert_eq!(row.indices, vec![0, 1]);
        // raw (1, 2 idf_b), then unit length
        let b: f64 = 2.0 * 1.405465108108164;
        let norm = (1.0 + b * b).sqrt();
        assert_abs_diff_eq!(row.values[0], 1.0 / norm, epsilon = 1e-12);
        assert_abs_diff_eq!(row.values[1], b / norm, epsilon = 1e-12);
        assert_abs_diff_eq!(row.values[0], 0.335176, epsilon = 1e-6);

        assert!(transform_tfidf(&m, &doc("z", &["z"])).values.is_empty());
        let a = transform_tfidf(&m, &doc("a", &["a"]));
        assert_eq!((a.indices.as_slice(), a.values.as_slice()), (&[0u32][..], &[1.0][..]));
    }

    #[test]
    fn single_doc_and_duplicates() {
        let m = fit_tfidf(&[&doc("1", &["x"])]).unwrap();
        assert_eq!(m.idf(), &[1.0]);
        let d = [doc("1", &["a", "a", "a"]), doc("2", &["b"])];
        let m = fit_tfidf(&d.iter().collect::<Vec<_>>()).unwrap();
        assert_eq!(m.idf()[0], smoothed_idf(2, 1));
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(matches!(fit_tfidf(&[]), Err(FeatureError::NoDocuments)));
        assert!(matches!(
            fit_tfidf(&[&doc("1", &[]), &doc("2", &[])]),
            Err(FeatureError::EmptyVocabulary)
        ));
    }

    /// Recounts everything from scratch; shares no code with the fitter.
    fn brute_force(docs: &[Document], query: &Document) -> HashMap<String, f64> {
        let n = docs.len() as f64;
        let mut out = HashMap::new();
        let mut norm = 0.0;
        let mut distinct: Vec<&String> = query.tokens.iter().collect();
        distinct.sort();
        distinct.dedup();
        for t in distinct {
            let df = docs.iter().filter(|d| d.tokens.contains(t)).count() as f64;
            if df == 0.0 {
                continue;
            }
            let tf = query.tokens.iter().filter(|q| *q == t).count() as f64;
            let w = tf * (((1.0 + n) / (1.0 + df)).ln() + 1.0);
            norm += w * w;
            out.insert(t.clone(), w);
        }
        for v in out.values_mut() {
            *v /= norm.sqrt();
        }
        out
    }

    fn corpus() -> impl Strategy<Value = Vec<Document>> {
        prop::collection::vec(prop::collection::vec(0u8..15, 0..8), 1..20).prop_map(|docs| {
            docs.into_iter()
                .enumerate()
                .map(|(i, toks)| Document {
                    bug_id: i.to_string(),
                    source_field: TextField::Title,
                    tokens: toks.iter().map(|t| format!("t{t}")).collect(),
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force_oracle(docs in corpus()) {
            prop_assume!(docs.iter().any(|d| !d.tokens.is_empty()));
            let refs: Vec<&Document> = docs.iter().collect();
            let m = fit_tfidf(&refs).unwrap();
            for d in &docs {
                let row = transform_tfidf(&m, d);
                let oracle = brute_force(&docs, d);
                prop_assert_eq!(row.indices.len(), oracle.len());
                for (c, v) in row.indices.iter().zip(&row.values) {
                    let want = oracle[&m.terms()[*c as usize]];
                    prop_assert!((v - want).abs() <= 1e-12);
                }
                let norm = row.norm();
                prop_assert!(norm == 0.0 || (norm - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn fit_is_order_stable(docs in corpus(), rot in 0usize..20) {
            prop_assume!(docs.iter().any(|d| !d.tokens.is_empty()));
            let mut permuted = docs.clone();
            let k = rot % permuted.len();
            permuted.rotate_left(k);
            let a = fit_tfidf(&docs.iter().collect::<Vec<_>>()).unwrap();
            let b = fit_tfidf(&permuted.iter().collect::<Vec<_>>()).unwrap();
            for d in &docs {
                let ra = transform_tfidf(&a, d);
                let rb = transform_tfidf(&b, d);
                let by_term = |m: &TfidfModel, r: &SparseRow| {
                    let mut v: Vec<(String, f64)> = r.indices.iter().zip(&r.values)
                        .map(|(c, x)| (m.terms()[*c as usize].clone(), *x)).collect();
                    v.sort_by(|x, y| x.0.cmp(&y.0));
                    v
                };
                let (va, vb) = (by_term(&a, &ra), by_term(&b, &rb));
                prop_assert_eq!(va.len(), vb.len());
                for (x, y) in va.iter().zip(&vb) {
                    prop_assert_eq!(&x.0, &y.0);
                    prop_assert!((x.1 - y.1).abs() <= 1e-12);
                }
            }
        }
    }
}
