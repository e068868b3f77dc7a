//! Brute-force reference implementations and random corpus generators
//! shared by the property tests and the acceptance suite.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use pooljudge_core::corpus::{
    ItemId, Judgment, JudgmentSet, QueryId, RankedRun, Relevance, Source,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn qid(s: impl Into<String>) -> QueryId {
    QueryId::new(s).unwrap()
}

pub fn iid(s: impl Into<String>) -> ItemId {
    ItemId::new(s).unwrap()
}

/// Naive per-query metric values straight from the definitions.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleQuery {
    pub correct: Vec<f64>,
    pub recall: Vec<f64>,
    pub ap: f64,
    pub first: Option<usize>,
}

pub fn oracle_query(list: &[String], relevant: &BTreeSet<String>, ks: &[usize]) -> OracleQuery {
    let is_rel = |pos: usize| relevant.contains(&list[pos]);
    let hits_in = |k: usize| (0..k.min(list.len())).filter(|&p| is_rel(p)).count();
    let correct = ks
        .iter()
        .map(|&k| if hits_in(k) > 0 { 1.0 } else { 0.0 })
        .collect();
    let recall = ks
        .iter()
        .map(|&k| hits_in(k) as f64 / relevant.len() as f64)
        .collect();
    let mut ap = 0.0;
    for k in 1..=list.len() {
        if is_rel(k - 1) {
            ap += hits_in(k) as f64 / k as f64;
        }
    }
    ap /= relevant.len() as f64;
    let first = (0..list.len()).find(|&p| is_rel(p)).map(|p| p + 1);
    OracleQuery {
        correct,
        recall,
        ap,
        first,
    }
}

/// Mean metrics over queries that appear in both the run and the labels and
/// have at least one positive.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleAggregate {
    pub queries: usize,
    pub correct: Vec<f64>,
    pub recall: Vec<f64>,
    pub map: f64,
}

pub fn oracle_aggregate(corpus: &Corpus, ks: &[usize]) -> OracleAggregate {
    let mut per = Vec::new();
    for (q, list) in &corpus.lists {
        let Some(labels) = corpus.labels.get(q) else {
            continue;
        };
        let relevant: BTreeSet<String> = labels
            .iter()
            .filter(|(_, &r)| r)
            .map(|(i, _)| i.clone())
            .collect();
        if relevant.is_empty() {
            continue;
        }
        per.push(oracle_query(list, &relevant, ks));
    }
    let n = per.len() as f64;
    let mean_of = |f: &dyn Fn(&OracleQuery) -> f64| per.iter().map(f).sum::<f64>() / n;
    OracleAggregate {
        queries: per.len(),
        correct: (0..ks.len()).map(|j| mean_of(&|o| o.correct[j])).collect(),
        recall: (0..ks.len()).map(|j| mean_of(&|o| o.recall[j])).collect(),
        map: mean_of(&|o| o.ap),
    }
}

/// A random corpus as plain strings, convertible to library types.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub lists: BTreeMap<String, Vec<String>>,
    /// query -> item -> relevant?; absent items are unjudged.
    pub labels: BTreeMap<String, BTreeMap<String, bool>>,
}

impl Corpus {
    pub fn run(&self, system: &str) -> RankedRun {
        RankedRun::from_lists(
            system,
            self.lists.iter().map(|(q, items)| {
                (
                    qid(q.clone()),
                    items
                        .iter()
                        .enumerate()
                        .map(|(r, i)| (iid(i.clone()), -(r as f64)))
                        .collect::<Vec<_>>(),
                )
            }),
        )
        .unwrap()
    }

    pub fn judgments(&self) -> JudgmentSet {
        let mut set = JudgmentSet::new();
        for (q, labels) in &self.labels {
            for (i, &rel) in labels {
                let relevance = if rel {
                    Relevance::Relevant
                } else {
                    Relevance::Irrelevant
                };
                set.insert(
                    qid(q.clone()),
                    iid(i.clone()),
                    Judgment::new(relevance, Source::Original),
                )
                .unwrap();
            }
        }
        set
    }
}

/// Up to `max_queries` queries over `max_items` items; each query ranks a
/// random subset, and every item gets relevant / irrelevant / unjudged at
/// random. At least one query has a positive in its ranked list.
pub fn random_corpus(seed: u64, max_queries: usize, max_items: usize) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let nq = rng.random_range(1..=max_queries);
        let ni = rng.random_range(1..=max_items);
        let items: Vec<String> = (0..ni).map(|i| format!("v{i}")).collect();
        let mut lists = BTreeMap::new();
        let mut labels = BTreeMap::new();
        for q in 0..nq {
            let q = format!("q{q}");
            let mut ranked = items.clone();
            ranked.shuffle(&mut rng);
            ranked.truncate(rng.random_range(1..=ni));
            let mut lab = BTreeMap::new();
            for i in &items {
                match rng.random_range(0..3) {
                    0 => {}
                    1 => {
                        lab.insert(i.clone(), true);
                    }
                    _ => {
                        lab.insert(i.clone(), false);
                    }
                }
            }
            // some queries are unjudged entirely
            if rng.random_bool(0.9) {
                labels.insert(q.clone(), lab);
            }
            lists.insert(q, ranked);
        }
        let has_positive = lists.iter().any(|(q, l)| {
            labels.get(q).is_some_and(|lab: &BTreeMap<String, bool>| {
                l.iter().any(|i| lab.get(i) == Some(&true))
            })
        });
        if has_positive {
            return Corpus { lists, labels };
        }
    }
}

/// Same lists, exactly one relevant item per query (possibly unranked).
pub fn single_positive_corpus(seed: u64, max_queries: usize, max_items: usize) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut c = random_corpus(seed, max_queries, max_items);
    for (q, list) in &c.lists {
        let mut lab = BTreeMap::new();
        let pos = if rng.random_bool(0.8) {
            list[rng.random_range(0..list.len())].clone()
        } else {
            "unranked".to_string()
        };
        lab.insert(pos, true);
        for i in list {
            if !lab.contains_key(i) && rng.random_bool(0.3) {
                lab.insert(i.clone(), false);
            }
        }
        c.labels.insert(q.clone(), lab);
    }
    c
}
