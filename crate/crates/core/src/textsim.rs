//! Train/test caption similarity with a character n-gram TF-IDF encoder.
//!
//! Preprocessing lowercases and collapses whitespace runs to one space;
//! n-grams span word boundaries. Weights are raw counts times the smoothed
//! idf `ln((1 + N) / (1 + df)) + 1`, then L2-normalized.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Query, QueryId};
use crate::stats::{kendall, spearman, StatsError};

pub const DEFAULT_NGRAM: usize = 5;
pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum TextSimError {
    #[error("n-gram size must be at least 1")]
    InvalidN,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("{0} corpus is empty")]
    EmptyCorpus(&'static str),
}

pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

pub fn word_length(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Characters after whitespace normalization.
pub fn char_length(text: &str) -> usize {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .chars()
        .count()
}

/// Every length-`n` character window of the normalized text.
pub fn char_ngrams(text: &str, n: usize) -> Vec<String> {
    let chars: Vec<char> = normalize(text).chars().collect();
    if n == 0 || chars.len() < n {
        return Vec::new();
    }
    chars.windows(n).map(|w| w.iter().collect()).collect()
}

/// Sparse unit vector; entries sorted by vocabulary index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NgramVector {
    entries: Vec<(u32, f64)>,
}

impl NgramVector {
    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    /// Dot product accumulated in vocabulary order.
    pub fn dot(&self, other: &NgramVector) -> f64 {
        let (mut i, mut j, mut sum) = (0, 0, 0.0);
        while i < self.entries.len() && j < other.entries.len() {
            let (a, b) = (self.entries[i], other.entries[j]);
            match a.0.cmp(&b.0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    sum += a.1 * b.1;
                    i += 1;
                    j += 1;
                }
            }
        }
        sum
    }
}

/// Cosine of two encoded captions; exactly 1 for identical vectors and 0
/// when either is the zero vector.
pub fn cosine(a: &NgramVector, b: &NgramVector) -> f64 {
    if a.is_zero() || b.is_zero() {
        return 0.0;
    }
    if a == b {
        return 1.0;
    }
    a.dot(b).clamp(0.0, 1.0)
}

#[derive(Debug, Clone)]
pub struct Encoder {
    n: usize,
    num_docs: usize,
    /// Term -> index; indices follow sorted term order.
    vocabulary: BTreeMap<String, u32>,
    idf: Vec<f64>,
    df: Vec<usize>,
}

pub fn fit_encoder<S: AsRef<str>>(corpus: &[S], n: usize) -> Result<Encoder, TextSimError> {
    if n == 0 {
        return Err(TextSimError::InvalidN);
    }
    if corpus.is_empty() {
        return Err(TextSimError::EmptyCorpus("fit"));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    let mut short = 0;
    for doc in corpus {
        let mut grams = char_ngrams(doc.as_ref(), n);
        if grams.is_empty() {
            short += 1;
        }
        grams.sort_unstable();
        grams.dedup();
        for g in grams {
            *df.entry(g).or_default() += 1;
        }
    }
    if short > 0 {
        log::warn!("{short} caption(s) shorter than {n} characters contribute no n-grams");
    }
    let num_docs = corpus.len();
    let vocabulary = df
        .keys()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();
    let df: Vec<usize> = df.into_values().collect();
    let idf = df
        .iter()
        .map(|&d| ((1.0 + num_docs as f64) / (1.0 + d as f64)).ln() + 1.0)
        .collect();
    Ok(Encoder {
        n,
        num_docs,
        vocabulary,
        idf,
        df,
    })
}

impl Encoder {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn vocabulary_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.vocabulary.keys().map(String::as_str)
    }

    pub fn df(&self, term: &str) -> Option<usize> {
        self.vocabulary.get(term).map(|&i| self.df[i as usize])
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.vocabulary.get(term).map(|&i| self.idf[i as usize])
    }

    /// Out-of-vocabulary n-grams are dropped.
    pub fn transform(&self, text: &str) -> NgramVector {
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        for g in char_ngrams(text, self.n) {
            if let Some(&i) = self.vocabulary.get(&g) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let mut entries: Vec<(u32, f64)> = counts
            .into_iter()
            .map(|(i, c)| (i, c * self.idf[i as usize]))
            .collect();
        let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for e in &mut entries {
                e.1 /= norm;
            }
        }
        NgramVector { entries }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityProfile {
    pub k: usize,
    pub n: usize,
    /// Mean of the k highest train similarities per test caption.
    pub values: BTreeMap<QueryId, f64>,
}

/// Top-`k` mean train similarity for every test caption. Uses an inverted
/// index over the train vectors; each score is accumulated in vocabulary
/// order so results match a pairwise dot product bit for bit.
pub fn similarity_profile<S: AsRef<str> + Sync>(
    encoder: &Encoder,
    test: &[(QueryId, S)],
    train: &[S],
    k: usize,
) -> Result<SimilarityProfile, TextSimError> {
    if k == 0 {
        return Err(TextSimError::InvalidK);
    }
    if train.is_empty() {
        return Err(TextSimError::EmptyCorpus("train"));
    }
    let train_vecs: Vec<NgramVector> = train
        .par_iter()
        .map(|t| encoder.transform(t.as_ref()))
        .collect();
    let mut postings: HashMap<u32, Vec<(usize, f64)>> = HashMap::new();
    for (doc, v) in train_vecs.iter().enumerate() {
        for &(t, w) in v.entries() {
            postings.entry(t).or_default().push((doc, w));
        }
    }

    let values = test
        .par_iter()
        .map(|(q, text)| {
            let v = encoder.transform(text.as_ref());
            let mut scores: HashMap<usize, f64> = HashMap::new();
            for &(t, w) in v.entries() {
                if let Some(list) = postings.get(&t) {
                    for &(doc, dw) in list {
                        *scores.entry(doc).or_default() += w * dw;
                    }
                }
            }
            let mut sims: Vec<f64> = scores
                .into_iter()
                .map(|(doc, s)| {
                    if v == train_vecs[doc] {
                        1.0
                    } else {
                        s.clamp(0.0, 1.0)
                    }
                })
                .collect();
            sims.sort_unstable_by(|a, b| b.total_cmp(a));
            // docs with no shared n-gram score 0 and only pad the divisor
            let take = k.min(train.len());
            let sum: f64 = sims.iter().take(take).sum();
            (q.clone(), sum / take as f64)
        })
        .collect();
    Ok(SimilarityProfile {
        k,
        n: encoder.n(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthCorrelation {
    pub queries: usize,
    /// `None` when a correlation is undefined (zero variance).
    pub spearman_word: Option<f64>,
    pub kendall_word: Option<f64>,
    pub spearman_char: Option<f64>,
    pub kendall_char: Option<f64>,
}

fn defined(r: Result<f64, StatsError>) -> Option<f64> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            log::warn!("correlation undefined: {e}");
            None
        }
    }
}

/// Rank correlations between profile similarity and caption length, over
/// the queries present in both.
pub fn length_similarity_correlation(
    profile: &SimilarityProfile,
    queries: &[Query],
) -> LengthCorrelation {
    let mut sims = Vec::new();
    let mut words = Vec::new();
    let mut chars = Vec::new();
    for q in queries {
        if let Some(&s) = profile.values.get(&q.id) {
            sims.push(s);
            words.push(word_length(&q.text) as f64);
            chars.push(char_length(&q.text) as f64);
        }
    }
    LengthCorrelation {
        queries: sims.len(),
        spearman_word: defined(spearman(&sims, &words)),
        kendall_word: defined(kendall(&sims, &words)),
        spearman_char: defined(spearman(&sims, &chars)),
        kendall_char: defined(kendall(&sims, &chars)),
    }
}

impl SimilarityProfile {
    /// `query_id,mean_top_k_sim,word_len,char_len`, in profile order.
    pub fn to_csv(&self, queries: &[Query]) -> String {
        let by_id: HashMap<&QueryId, &Query> = queries.iter().map(|q| (&q.id, q)).collect();
        let mut out = String::from("query_id,mean_top_k_sim,word_len,char_len\n");
        for (q, v) in &self.values {
            let (w, c) = by_id
                .get(q)
                .map(|q| (word_length(&q.text), char_length(&q.text)))
                .unwrap_or((0, 0));
            out.push_str(&format!("{q},{v},{w},{c}\n"));
        }
        out
    }
}

impl LengthCorrelation {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "length,statistic,value\nword,spearman,{}\nword,kendall,{}\nchar,spearman,{}\nchar,kendall,{}\n",
            opt(self.spearman_word),
            opt(self.kendall_word),
            opt(self.spearman_char),
            opt(self.kendall_char)
        )
    }

    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>| {
            v.map(|x| format!("{x:+.3}"))
                .unwrap_or_else(|| "undefined".into())
        };
        format!(
            "queries: {}\n{:<6} {:>10} {:>10}\n{:<6} {:>10} {:>10}\n{:<6} {:>10} {:>10}\n",
            self.queries,
            "",
            "spearman",
            "kendall",
            "words",
            fmt(self.spearman_word),
            fmt(self.kendall_word),
            "chars",
            fmt(self.spearman_char),
            fmt(self.kendall_char)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;

    fn qid(s: &str) -> QueryId {
        QueryId::new(s).unwrap()
    }

    #[test]
    fn preprocessing_and_ngrams() {
        assert_eq!(normalize("  A  Man\tRuns "), "a man runs");
        assert_eq!(char_ngrams("abcde", 5), vec!["abcde"]);
        assert_eq!(char_ngrams("ab  CD", 3), vec!["ab ", "b c", " cd"]);
        assert!(char_ngrams("abcd", 5).is_empty());
        assert_eq!(char_length(" a   b "), 3);
        assert_eq!(word_length(" a   b "), 2);
    }

    #[test]
    fn single_doc_vocabulary() {
        let enc = fit_encoder(&["abcde"], 5).unwrap();
        assert_eq!(enc.terms().collect::<Vec<_>>(), vec!["abcde"]);
        assert_eq!(enc.df("abcde"), Some(1));
        assert_eq!(enc.idf("abcde"), Some(1.0));
    }

    #[test]
    fn hand_enumerated_idf() {
        // "abcdef" -> abcde, bcdef; "bcdefg" -> bcdef, cdefg
        let enc = fit_encoder(&["abcdef", "bcdefg"], 5).unwrap();
        assert_eq!(enc.vocabulary_size(), 3);
        let rare = (3.0f64 / 2.0).ln() + 1.0;
        assert_eq!(enc.idf("abcde"), Some(rare));
        assert_eq!(enc.idf("cdefg"), Some(rare));
        assert_eq!(enc.idf("bcdef"), Some(1.0));
        assert!(enc.idf("bcdef").unwrap() < rare);
        let v = enc.transform("abcdef");
        assert!((v.norm() - 1.0).abs() < 1e-15);
        let expected = rare / (rare * rare + 1.0).sqrt();
        assert_eq!(v.entries()[0], (0, expected));
    }

    #[test]
    fn errors() {
        assert_eq!(
            fit_encoder(&["abc"], 0).unwrap_err(),
            TextSimError::InvalidN
        );
        assert_eq!(
            fit_encoder::<&str>(&[], 5).unwrap_err(),
            TextSimError::EmptyCorpus("fit")
        );
    }

    #[test]
    fn verbatim_and_disjoint_profiles() {
        let test = vec![
            (qid("t1"), "a dog runs on the beach"),
            (qid("t2"), "zzzzzzzzz"),
        ];
        let fit: Vec<&str> = test.iter().map(|(_, t)| *t).collect();
        let enc = fit_encoder(&fit, 5).unwrap();
        let train = vec!["A dog runs  on the beach", "cooking pasta in a pan"];
        let profile = similarity_profile(&enc, &test, &train, 1).unwrap();
        assert_eq!(profile.values[&qid("t1")], 1.0);
        assert_eq!(profile.values[&qid("t2")], 0.0);
    }

    #[test]
    fn dense_oracle_on_toy_corpus() {
        let test = vec![
            (qid("a"), "a man is singing on stage"),
            (qid("b"), "a woman is cooking pasta"),
            (qid("c"), "two men are singing"),
        ];
        let train = vec![
            "a man sings on a stage",
            "someone cooking pasta in a kitchen",
            "men are singing together",
            "a cat",
        ];
        let fit: Vec<&str> = test.iter().map(|(_, t)| *t).collect();
        let enc = fit_encoder(&fit, 5).unwrap();
        let k = 2;
        let profile = similarity_profile(&enc, &test, &train, k).unwrap();

        // dense recomputation straight from the definitions
        let vocab: Vec<String> = enc.terms().map(String::from).collect();
        let n_docs = fit.len() as f64;
        let idf: Vec<f64> = vocab
            .iter()
            .map(|t| {
                let df = fit.iter().filter(|d| char_ngrams(d, 5).contains(t)).count() as f64;
                ((1.0 + n_docs) / (1.0 + df)).ln() + 1.0
            })
            .collect();
        let dense = |text: &str| -> Vec<f64> {
            let grams = char_ngrams(text, 5);
            let mut v: Vec<f64> = vocab
                .iter()
                .zip(&idf)
                .map(|(t, w)| grams.iter().filter(|g| *g == t).count() as f64 * w)
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x /= norm);
            }
            v
        };
        for (q, text) in &test {
            let tv = dense(text);
            let mut sims: Vec<f64> = train
                .iter()
                .map(|t| tv.iter().zip(dense(t)).map(|(a, b)| a * b).sum())
                .collect();
            sims.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let expected = sims[..k].iter().sum::<f64>() / k as f64;
            assert!((profile.values[q] - expected).abs() < 1e-12, "{q}");
        }
    }

    #[test]
    fn profile_ignores_train_order() {
        let test = vec![(qid("a"), "people dancing at a party")];
        let mut train = vec![
            "dancing people",
            "a party at night",
            "a quiet party",
            "dance",
        ];
        let enc = fit_encoder(&["people dancing at a party"], 5).unwrap();
        let p1 = similarity_profile(&enc, &test, &train, 3).unwrap();
        train.reverse();
        let p2 = similarity_profile(&enc, &test, &train, 3).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn correlation_sentinels_and_sign() {
        let q = |id: &str, text: &str| Query {
            id: qid(id),
            text: text.into(),
            split: Split::Test,
        };
        let same_len = vec![q("a", "one two"), q("b", "six ten")];
        let profile = SimilarityProfile {
            k: 1,
            n: 5,
            values: [(qid("a"), 0.2), (qid("b"), 0.8)].into_iter().collect(),
        };
        let corr = length_similarity_correlation(&profile, &same_len);
        assert_eq!(corr.spearman_word, None);
        assert_eq!(corr.kendall_char, None);

        // shorter captions repeat train text verbatim, longer ones do not
        let queries = vec![
            q("s1", "a dog"),
            q("s2", "a red car"),
            q(
                "l1",
                "a group of friends playing volleyball on a sunny beach",
            ),
            q(
                "l2",
                "an old man slowly explains how to repair a broken bicycle chain",
            ),
        ];
        let train = vec!["a dog", "a red car", "volleyball", "bicycle"];
        let test: Vec<(QueryId, &str)> = queries
            .iter()
            .map(|q| (q.id.clone(), q.text.as_str()))
            .collect();
        let fit: Vec<&str> = test.iter().map(|(_, t)| *t).collect();
        let enc = fit_encoder(&fit, 5).unwrap();
        let profile = similarity_profile(&enc, &test, &train, 1).unwrap();
        let corr = length_similarity_correlation(&profile, &queries);
        assert!(corr.spearman_word.unwrap() < 0.0);
        assert!(corr.kendall_word.unwrap() < 0.0);
        assert!(corr.spearman_char.unwrap() < 0.0);
        assert!(corr.kendall_char.unwrap() < 0.0);
        assert!(profile.to_csv(&queries).contains("\ns1,1,2,5\n"));
    }
}
