use std::collections::{BTreeMap, HashMap};

/// Lower-cased alphanumeric tokens of at least two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
        .collect()
}

/// Term-frequency / smoothed inverse-document-frequency vectorizer with
/// L2-normalized rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Tfidf {
    vocabulary: Vec<String>,
    index: HashMap<String, usize>,
    idf: Vec<f64>,
}

impl Tfidf {
    /// Keeps the `max_features` terms with the highest document frequency
    /// (ties broken alphabetically).
    pub fn fit(docs: &[String], max_features: usize) -> Self {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for d in docs {
            let mut seen: Vec<String> = tokenize(d);
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut terms: Vec<(String, usize)> = df.into_iter().collect();
        terms.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        terms.truncate(max_features);
        terms.sort_by(|a, b| a.0.cmp(&b.0));
        let n = docs.len() as f64;
        let idf = terms.iter().map(|(_, d)| ((1.0 + n) / (1.0 + *d as f64)).ln() + 1.0).collect();
        let vocabulary: Vec<String> = terms.into_iter().map(|(t, _)| t).collect();
        let index = vocabulary.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Tfidf { vocabulary, index, idf }
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn len(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocabulary.is_empty()
    }

    pub fn transform_one(&self, doc: &str) -> Vec<f64> {
        let mut row = vec![0.0; self.len()];
        for t in tokenize(doc) {
            if let Some(&i) = self.index.get(&t) {
                row[i] += 1.0;
            }
        }
        for (v, w) in row.iter_mut().zip(&self.idf) {
            *v *= w;
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
        row
    }
}
