//! Queries, items, ranked runs and relevance judgments, with their text formats.
//!
//! All formats are whitespace-delimited, one record per line, UTF-8:
//!
//! * run file: `query_id item_id rank score run_tag`
//! * judgment file: `query_id item_id label source` (label is `0` or `1`)
//! * query file: `query_id<TAB>split<TAB>caption text`
//!
//! Lines starting with `#` and blank lines are ignored everywhere.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("invalid identifier {0:?}: ids must be non-empty and contain no whitespace")]
    InvalidId(String),
    #[error("line {line}: duplicate entry for query {query} item {item}")]
    DuplicateEntry {
        line: usize,
        query: String,
        item: String,
    },
    #[error("query {query}: rank gap, expected rank {expected} but found {found}")]
    RankGap {
        query: String,
        expected: u32,
        found: u32,
    },
    #[error("line {line}: run tag {found:?} differs from {expected:?}; one run per file")]
    MixedRunTags {
        line: usize,
        expected: String,
        found: String,
    },
    #[error("line {line}: label {value:?} is not 0 or 1")]
    InvalidLabel { line: usize, value: String },
    #[error("line {line}: conflicting labels for query {query} item {item}")]
    ConflictingLabel {
        line: usize,
        query: String,
        item: String,
    },
    #[error("merge conflict for query {query} item {item}")]
    MergeConflict { query: String, item: String },
    #[error("{kind} {id} is not part of the collection")]
    NotInCollection { kind: &'static str, id: String },
    #[error("run file contains no entries")]
    EmptyRun,
}

impl CorpusError {
    pub fn is_io(&self) -> bool {
        matches!(self, CorpusError::Io { .. })
    }
}

fn valid_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Result<Self, CorpusError> {
                let id = id.into();
                if valid_token(&id) {
                    Ok(Self(id))
                } else {
                    Err(CorpusError::InvalidId(id))
                }
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = CorpusError;
            fn try_from(value: String) -> Result<Self, Self::Error> {
                Self::new(value)
            }
        }

        impl From<$name> for String {
            fn from(value: $name) -> String {
                value.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl AsRef<str> for $name {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }
    };
}

id_type!(
    /// Identifies a query (a caption used as a search query).
    QueryId
);
id_type!(
    /// Identifies a retrievable item (a video).
    ItemId
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: QueryId,
    pub text: String,
    pub split: Split,
}

/// A non-fatal problem noticed while loading a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

fn read_file(path: &Path) -> Result<String, CorpusError> {
    std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Yields `(1-based line number, line)` for every non-blank, non-comment line.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| {
            let t = l.trim_start();
            !t.is_empty() && !t.starts_with('#')
        })
}

fn parse_id<T>(
    line: usize,
    raw: &str,
    make: impl FnOnce(String) -> Result<T, CorpusError>,
) -> Result<T, CorpusError> {
    make(raw.to_string()).map_err(|_| CorpusError::Malformed {
        line,
        reason: format!("invalid identifier {raw:?}"),
    })
}

// ---------------------------------------------------------------------------
// Collection
// ---------------------------------------------------------------------------

/// The retrievable items and the queries issued against them.
#[derive(Debug, Clone, Default)]
pub struct Collection {
    items: BTreeSet<ItemId>,
    queries: BTreeMap<QueryId, Query>,
}

impl Collection {
    pub fn new(
        items: impl IntoIterator<Item = ItemId>,
        queries: impl IntoIterator<Item = Query>,
    ) -> Self {
        Self {
            items: items.into_iter().collect(),
            queries: queries.into_iter().map(|q| (q.id.clone(), q)).collect(),
        }
    }

    pub fn items(&self) -> &BTreeSet<ItemId> {
        &self.items
    }

    pub fn queries(&self) -> impl Iterator<Item = &Query> {
        self.queries.values()
    }

    pub fn query(&self, id: &QueryId) -> Option<&Query> {
        self.queries.get(id)
    }

    pub fn test_queries(&self) -> impl Iterator<Item = &Query> {
        self.queries.values().filter(|q| q.split == Split::Test)
    }

    fn check_query(&self, q: &QueryId) -> Result<(), CorpusError> {
        if self.queries.is_empty() || self.queries.contains_key(q) {
            Ok(())
        } else {
            Err(CorpusError::NotInCollection {
                kind: "query",
                id: q.to_string(),
            })
        }
    }

    fn check_item(&self, i: &ItemId) -> Result<(), CorpusError> {
        if self.items.contains(i) {
            Ok(())
        } else {
            Err(CorpusError::NotInCollection {
                kind: "item",
                id: i.to_string(),
            })
        }
    }

    /// Strict-mode membership check. Query ids are only checked when the
    /// collection knows any queries.
    pub fn check_run(&self, run: &RankedRun) -> Result<(), CorpusError> {
        for (q, list) in run.lists() {
            self.check_query(q)?;
            for item in list.items() {
                self.check_item(item)?;
            }
        }
        Ok(())
    }

    pub fn check_judgments(&self, judgments: &JudgmentSet) -> Result<(), CorpusError> {
        for (q, i, _) in judgments.iter() {
            self.check_query(q)?;
            self.check_item(i)?;
        }
        Ok(())
    }
}

/// Parses a query file: `query_id<TAB>split<TAB>caption`.
pub fn parse_queries_str(text: &str) -> Result<Vec<Query>, CorpusError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, raw) in content_lines(text) {
        let mut fields = raw.splitn(3, '\t');
        let id = fields.next().unwrap_or_default();
        let split = fields.next().ok_or_else(|| CorpusError::Malformed {
            line,
            reason: "expected query_id<TAB>split<TAB>caption".into(),
        })?;
        let caption = fields.next().unwrap_or_default();
        let id = parse_id(line, id, QueryId::new)?;
        let split = match split.trim() {
            "train" => Split::Train,
            "test" => Split::Test,
            other => {
                return Err(CorpusError::Malformed {
                    line,
                    reason: format!("split must be train or test, got {other:?}"),
                })
            }
        };
        if !seen.insert(id.clone()) {
            return Err(CorpusError::Malformed {
                line,
                reason: format!("duplicate query id {id}"),
            });
        }
        out.push(Query {
            id,
            text: caption.to_string(),
            split,
        });
    }
    Ok(out)
}

pub fn parse_queries(path: impl AsRef<Path>) -> Result<Vec<Query>, CorpusError> {
    parse_queries_str(&read_file(path.as_ref())?)
}

pub fn write_queries(queries: &[Query]) -> String {
    let mut out = String::new();
    for q in queries {
        out.push_str(&format!("{}\t{}\t{}\n", q.id, q.split.as_str(), q.text));
    }
    out
}

/// Parses an item list: one item id per line.
pub fn parse_items_str(text: &str) -> Result<Vec<ItemId>, CorpusError> {
    content_lines(text)
        .map(|(line, raw)| parse_id(line, raw.trim(), ItemId::new))
        .collect()
}

// ---------------------------------------------------------------------------
// Ranked runs
// ---------------------------------------------------------------------------

/// One query's ranked results; position `i` holds rank `i + 1`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedList {
    items: Vec<ItemId>,
    scores: Vec<f64>,
}

impl RankedList {
    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn top(&self, depth: usize) -> &[ItemId] {
        &self.items[..depth.min(self.items.len())]
    }
}

/// A system's ranked output for every query it answered.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedRun {
    system: String,
    lists: BTreeMap<QueryId, RankedList>,
}

impl RankedRun {
    /// Builds a run from per-query lists already in rank order.
    pub fn from_lists<I, L>(system: impl Into<String>, lists: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = (QueryId, L)>,
        L: IntoIterator<Item = (ItemId, f64)>,
    {
        let system = system.into();
        if !valid_token(&system) {
            return Err(CorpusError::InvalidId(system));
        }
        let mut out = BTreeMap::new();
        for (q, list) in lists {
            let mut ranked = RankedList::default();
            let mut seen = BTreeSet::new();
            for (item, score) in list {
                if !seen.insert(item.clone()) {
                    return Err(CorpusError::DuplicateEntry {
                        line: 0,
                        query: q.to_string(),
                        item: item.to_string(),
                    });
                }
                ranked.items.push(item);
                ranked.scores.push(score);
            }
            out.insert(q, ranked);
        }
        Ok(Self { system, lists: out })
    }

    pub fn system(&self) -> &str {
        &self.system
    }

    pub fn queries(&self) -> impl Iterator<Item = &QueryId> {
        self.lists.keys()
    }

    pub fn list(&self, q: &QueryId) -> Option<&RankedList> {
        self.lists.get(q)
    }

    pub fn lists(&self) -> impl Iterator<Item = (&QueryId, &RankedList)> {
        self.lists.iter()
    }

    pub fn num_queries(&self) -> usize {
        self.lists.len()
    }

    pub fn num_entries(&self) -> usize {
        self.lists.values().map(RankedList::len).sum()
    }

    /// Same lists under a different run tag.
    pub fn retagged(&self, system: impl Into<String>) -> Result<Self, CorpusError> {
        let system = system.into();
        if !valid_token(&system) {
            return Err(CorpusError::InvalidId(system));
        }
        Ok(Self {
            system,
            lists: self.lists.clone(),
        })
    }
}

struct RawEntry {
    line: usize,
    item: ItemId,
    rank: u32,
    score: f64,
}

/// Parses run-file text. In strict mode rank gaps and repeated ranks are
/// errors; otherwise they are reported as warnings and the entries are
/// renumbered `1..n` in rank-column order (ties keep file order).
pub fn parse_run_str(
    text: &str,
    strict: bool,
) -> Result<(RankedRun, Vec<ParseWarning>), CorpusError> {
    let mut warnings = Vec::new();
    let mut system: Option<String> = None;
    let mut raw: BTreeMap<QueryId, Vec<RawEntry>> = BTreeMap::new();
    let mut seen: BTreeSet<(QueryId, ItemId)> = BTreeSet::new();

    for (line, content) in content_lines(text) {
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(CorpusError::Malformed {
                line,
                reason: format!(
                    "expected 5 fields `query_id item_id rank score run_tag`, found {}",
                    fields.len()
                ),
            });
        }
        let query = parse_id(line, fields[0], QueryId::new)?;
        let item = parse_id(line, fields[1], ItemId::new)?;
        let rank: u32 = fields[2].parse().map_err(|_| CorpusError::Malformed {
            line,
            reason: format!("rank {:?} is not a positive integer", fields[2]),
        })?;
        if rank == 0 {
            return Err(CorpusError::Malformed {
                line,
                reason: "ranks are 1-based".into(),
            });
        }
        let score: f64 = fields[3]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| CorpusError::Malformed {
                line,
                reason: format!("score {:?} is not a finite number", fields[3]),
            })?;
        match &system {
            None => system = Some(fields[4].to_string()),
            Some(tag) if tag != fields[4] => {
                return Err(CorpusError::MixedRunTags {
                    line,
                    expected: tag.clone(),
                    found: fields[4].to_string(),
                })
            }
            Some(_) => {}
        }
        if !seen.insert((query.clone(), item.clone())) {
            return Err(CorpusError::DuplicateEntry {
                line,
                query: query.to_string(),
                item: item.to_string(),
            });
        }
        raw.entry(query).or_default().push(RawEntry {
            line,
            item,
            rank,
            score,
        });
    }

    let system = system.ok_or(CorpusError::EmptyRun)?;
    let mut lists = BTreeMap::new();
    for (query, mut entries) in raw {
        entries.sort_by_key(|e| e.rank);
        for (pos, entry) in entries.iter().enumerate() {
            let expected = pos as u32 + 1;
            if entry.rank != expected {
                if strict {
                    return Err(CorpusError::RankGap {
                        query: query.to_string(),
                        expected,
                        found: entry.rank,
                    });
                }
                warnings.push(ParseWarning {
                    line: Some(entry.line),
                    message: format!(
                        "query {query}: rank {} renumbered to {expected}",
                        entry.rank
                    ),
                });
            }
        }
        for pair in entries.windows(2) {
            if pair[1].score > pair[0].score {
                warnings.push(ParseWarning {
                    line: Some(pair[1].line),
                    message: format!(
                        "query {query}: score increases from rank {} to rank {}",
                        pair[0].rank, pair[1].rank
                    ),
                });
            }
        }
        let list = RankedList {
            scores: entries.iter().map(|e| e.score).collect(),
            items: entries.into_iter().map(|e| e.item).collect(),
        };
        lists.insert(query, list);
    }
    Ok((RankedRun { system, lists }, warnings))
}

/// Reads a run file, logging any warnings.
pub fn parse_run(path: impl AsRef<Path>, strict: bool) -> Result<RankedRun, CorpusError> {
    let path = path.as_ref();
    let (run, warnings) = parse_run_str(&read_file(path)?, strict)?;
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(run)
}

/// Canonical run-file text: queries in id order, entries in rank order.
pub fn write_run(run: &RankedRun) -> String {
    let mut out = String::new();
    for (q, list) in &run.lists {
        for (pos, (item, score)) in list.items.iter().zip(&list.scores).enumerate() {
            out.push_str(&format!("{q} {item} {} {score} {}\n", pos + 1, run.system));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Judgments
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relevance {
    Relevant,
    Irrelevant,
}

impl Relevance {
    pub fn is_relevant(self) -> bool {
        self == Relevance::Relevant
    }

    fn as_digit(self) -> char {
        match self {
            Relevance::Relevant => '1',
            Relevance::Irrelevant => '0',
        }
    }
}

/// Where a resolved label came from.
///
/// Sources form a join-semilattice: pooled sets join by union of systems,
/// anything else that differs joins to `Merged`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Original,
    /// Pooled from the named systems' top-ranked predictions.
    Pooled(BTreeSet<String>),
    Merged,
}

impl Source {
    pub fn pooled<I, S>(systems: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Source::Pooled(systems.into_iter().map(Into::into).collect())
    }

    pub fn join(&self, other: &Source) -> Source {
        match (self, other) {
            (a, b) if a == b => a.clone(),
            (Source::Pooled(a), Source::Pooled(b)) => Source::Pooled(a.union(b).cloned().collect()),
            _ => Source::Merged,
        }
    }

    fn parse(raw: &str) -> Option<Source> {
        match raw {
            "original" => Some(Source::Original),
            "merged" => Some(Source::Merged),
            "pooled" => Some(Source::Pooled(BTreeSet::new())),
            _ => {
                let systems = raw.strip_prefix("pooled:")?;
                let set: BTreeSet<String> = systems.split(',').map(str::to_string).collect();
                if set.iter().any(|s| s.is_empty()) {
                    return None;
                }
                Some(Source::Pooled(set))
            }
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Original => f.write_str("original"),
            Source::Merged => f.write_str("merged"),
            Source::Pooled(s) if s.is_empty() => f.write_str("pooled"),
            Source::Pooled(s) => {
                f.write_str("pooled:")?;
                f.write_str(&s.iter().map(String::as_str).collect::<Vec<_>>().join(","))
            }
        }
    }
}

impl Serialize for Source {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Source {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Source::parse(&raw).ok_or_else(|| serde::de::Error::custom(format!("bad source {raw:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub relevance: Relevance,
    pub source: Source,
}

impl Judgment {
    pub fn new(relevance: Relevance, source: Source) -> Self {
        Self { relevance, source }
    }
}

/// Resolved binary labels keyed by (query, item). Absent pairs are unjudged.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JudgmentSet {
    labels: BTreeMap<QueryId, BTreeMap<ItemId, Judgment>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergePolicy {
    RelevantWins,
    ErrorOnConflict,
}

impl JudgmentSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a label. A second label for the same pair is accepted only when
    /// it agrees; the sources are then joined.
    pub fn insert(
        &mut self,
        query: QueryId,
        item: ItemId,
        judgment: Judgment,
    ) -> Result<(), CorpusError> {
        let per_query = self.labels.entry(query.clone()).or_default();
        match per_query.get_mut(&item) {
            Some(existing) if existing.relevance != judgment.relevance => {
                Err(CorpusError::ConflictingLabel {
                    line: 0,
                    query: query.to_string(),
                    item: item.to_string(),
                })
            }
            Some(existing) => {
                existing.source = existing.source.join(&judgment.source);
                Ok(())
            }
            None => {
                per_query.insert(item, judgment);
                Ok(())
            }
        }
    }

    pub fn get(&self, query: &QueryId, item: &ItemId) -> Option<&Judgment> {
        self.labels.get(query)?.get(item)
    }

    /// `Some(true)` if relevant, `Some(false)` if judged irrelevant, `None` if unjudged.
    pub fn rel(&self, query: &QueryId, item: &ItemId) -> Option<bool> {
        self.get(query, item).map(|j| j.relevance.is_relevant())
    }

    pub fn contains(&self, query: &QueryId, item: &ItemId) -> bool {
        self.get(query, item).is_some()
    }

    pub fn relevant_items<'a>(&'a self, query: &QueryId) -> impl Iterator<Item = &'a ItemId> + 'a {
        self.labels
            .get(query)
            .into_iter()
            .flat_map(|m| m.iter())
            .filter(|(_, j)| j.relevance.is_relevant())
            .map(|(i, _)| i)
    }

    pub fn num_relevant(&self, query: &QueryId) -> usize {
        self.relevant_items(query).count()
    }

    pub fn judged(&self, query: &QueryId) -> Option<&BTreeMap<ItemId, Judgment>> {
        self.labels.get(query)
    }

    pub fn has_query(&self, query: &QueryId) -> bool {
        self.labels.get(query).is_some_and(|m| !m.is_empty())
    }

    pub fn queries(&self) -> impl Iterator<Item = &QueryId> {
        self.labels
            .iter()
            .filter(|(_, m)| !m.is_empty())
            .map(|(q, _)| q)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&QueryId, &ItemId, &Judgment)> {
        self.labels
            .iter()
            .flat_map(|(q, m)| m.iter().map(move |(i, j)| (q, i, j)))
    }

    pub fn len(&self) -> usize {
        self.labels.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_relevant_total(&self) -> usize {
        self.iter()
            .filter(|(_, _, j)| j.relevance.is_relevant())
            .count()
    }

    /// Keeps the labels for which `keep` returns true.
    pub fn filtered(&self, mut keep: impl FnMut(&QueryId, &ItemId, &Judgment) -> bool) -> Self {
        let mut labels: BTreeMap<QueryId, BTreeMap<ItemId, Judgment>> = BTreeMap::new();
        for (q, i, j) in self.iter() {
            if keep(q, i, j) {
                labels
                    .entry(q.clone())
                    .or_default()
                    .insert(i.clone(), j.clone());
            }
        }
        Self { labels }
    }

    /// True when every pair relevant in `other` is also relevant here.
    pub fn relevant_superset_of(&self, other: &JudgmentSet) -> bool {
        other
            .iter()
            .filter(|(_, _, j)| j.relevance.is_relevant())
            .all(|(q, i, _)| self.rel(q, i) == Some(true))
    }
}

/// Union of two judgment sets.
///
/// Pairs present in both get the joined source (see [`Source::join`]); a
/// relevant/irrelevant conflict resolves to relevant or fails, per `policy`.
pub fn merge_judgments(
    a: &JudgmentSet,
    b: &JudgmentSet,
    policy: MergePolicy,
) -> Result<JudgmentSet, CorpusError> {
    let mut out = a.clone();
    for (q, i, jb) in b.iter() {
        let slot = out.labels.entry(q.clone()).or_default().entry(i.clone());
        match slot {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(jb.clone());
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let ja = o.get_mut();
                if ja.relevance != jb.relevance && policy == MergePolicy::ErrorOnConflict {
                    return Err(CorpusError::MergeConflict {
                        query: q.to_string(),
                        item: i.to_string(),
                    });
                }
                if jb.relevance.is_relevant() {
                    ja.relevance = Relevance::Relevant;
                }
                ja.source = ja.source.join(&jb.source);
            }
        }
    }
    Ok(out)
}

/// Parses judgment text: `query_id item_id label [source]`; a missing source
/// means `original`.
pub fn parse_judgments_str(text: &str) -> Result<JudgmentSet, CorpusError> {
    let mut set = JudgmentSet::new();
    for (line, content) in content_lines(text) {
        let fields: Vec<&str> = content.split_whitespace().collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(CorpusError::Malformed {
                line,
                reason: format!(
                    "expected `query_id item_id label source`, found {} fields",
                    fields.len()
                ),
            });
        }
        let query = parse_id(line, fields[0], QueryId::new)?;
        let item = parse_id(line, fields[1], ItemId::new)?;
        let relevance = match fields[2] {
            "1" => Relevance::Relevant,
            "0" => Relevance::Irrelevant,
            other => {
                return Err(CorpusError::InvalidLabel {
                    line,
                    value: other.to_string(),
                })
            }
        };
        let source = match fields.get(3) {
            None => Source::Original,
            Some(raw) => Source::parse(raw).ok_or_else(|| CorpusError::Malformed {
                line,
                reason: format!("unknown source {raw:?}"),
            })?,
        };
        set.insert(query, item, Judgment::new(relevance, source))
            .map_err(|e| match e {
                CorpusError::ConflictingLabel { query, item, .. } => {
                    CorpusError::ConflictingLabel { line, query, item }
                }
                other => other,
            })?;
    }
    Ok(set)
}

pub fn parse_judgments(path: impl AsRef<Path>) -> Result<JudgmentSet, CorpusError> {
    parse_judgments_str(&read_file(path.as_ref())?)
}

/// Canonical judgment-file text, sorted by query then item.
pub fn write_judgments(set: &JudgmentSet) -> String {
    let mut out = String::new();
    for (q, i, j) in set.iter() {
        out.push_str(&format!(
            "{q} {i} {} {}\n",
            j.relevance.as_digit(),
            j.source
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qid(s: &str) -> QueryId {
        QueryId::new(s).unwrap()
    }

    fn iid(s: &str) -> ItemId {
        ItemId::new(s).unwrap()
    }

    #[test]
    fn ids_reject_whitespace_and_empty() {
        assert!(QueryId::new("").is_err());
        assert!(QueryId::new("a b").is_err());
        assert!(ItemId::new("v\t1").is_err());
        assert_eq!(ItemId::new("video7").unwrap().as_str(), "video7");
    }

    #[test]
    fn parses_minimal_run() {
        let (run, warnings) = parse_run_str("q1 v1 1 0.9 sysA\nq1 v2 2 0.5 sysA\n", true).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(run.system(), "sysA");
        assert_eq!(run.num_queries(), 1);
        let list = run.list(&qid("q1")).unwrap();
        assert_eq!(list.items(), &[iid("v1"), iid("v2")]);
        assert_eq!(list.scores(), &[0.9, 0.5]);
    }

    #[test]
    fn duplicate_entry_is_error() {
        let err = parse_run_str("q1 v1 1 0.9 s\nq1 v1 2 0.5 s\n", false).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateEntry { line: 2, .. }));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_run_str("# header\nq1 v1 1 0.9 s\nq1 v2 x 0.5 s\n", true).unwrap_err();
        assert!(
            matches!(err, CorpusError::Malformed { line: 3, .. }),
            "{err}"
        );
        let err = parse_run_str("q1 v1 1 s\n", true).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 1, .. }));
        let err = parse_run_str("q1 v1 0 1.0 s\n", true).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 1, .. }));
        let err = parse_run_str("q1 v1 1 NaN s\n", true).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 1, .. }));
    }

    #[test]
    fn rank_gap_strict_vs_lenient() {
        let text = "q1 v1 1 0.9 s\nq1 v3 4 0.1 s\nq1 v2 2 0.5 s\n";
        let err = parse_run_str(text, true).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::RankGap {
                expected: 3,
                found: 4,
                ..
            }
        ));
        let (run, warnings) = parse_run_str(text, false).unwrap();
        assert_eq!(warnings.len(), 1);
        // ordered by the rank column, not by file order
        assert_eq!(
            run.list(&qid("q1")).unwrap().items(),
            &[iid("v1"), iid("v2"), iid("v3")]
        );
    }

    #[test]
    fn increasing_score_warns_but_keeps_rank_order() {
        let (run, warnings) = parse_run_str("q1 a 1 0.1 s\nq1 b 2 0.9 s\n", true).unwrap();
        assert_eq!(warnings.len(), 1);
        assert_eq!(run.list(&qid("q1")).unwrap().items()[0], iid("a"));
    }

    #[test]
    fn mixed_tags_and_empty_runs_rejected() {
        assert!(matches!(
            parse_run_str("q1 a 1 1 s\nq1 b 2 0 t\n", true),
            Err(CorpusError::MixedRunTags { line: 2, .. })
        ));
        assert!(matches!(
            parse_run_str("# nothing\n\n", true),
            Err(CorpusError::EmptyRun)
        ));
    }

    #[test]
    fn thousand_by_ten_run() {
        let mut text = String::new();
        for q in 0..1000 {
            for r in 1..=10 {
                text.push_str(&format!(
                    "q{q} v{} {r} {} sys\n",
                    (q + r) % 1000,
                    1.0 / r as f64
                ));
            }
        }
        let (run, _) = parse_run_str(&text, true).unwrap();
        assert_eq!(run.num_queries(), 1000);
        assert_eq!(run.num_entries(), 10_000);
    }

    #[test]
    fn run_round_trip_is_byte_identical() {
        let text = "q1 v1 1 0.9 s\nq1 v2 2 0.5 s\nq2 v9 1 3 s\n";
        let (run, _) = parse_run_str(text, true).unwrap();
        assert_eq!(write_run(&run), text);
    }

    #[test]
    fn parses_judgments_with_sources() {
        let set =
            parse_judgments_str("q1 v1 1 original\nq1 v2 0 pooled:a,b\nq2 v3 1 merged\nq2 v4 1\n")
                .unwrap();
        assert_eq!(set.len(), 4);
        assert_eq!(set.rel(&qid("q1"), &iid("v1")), Some(true));
        assert_eq!(set.rel(&qid("q1"), &iid("v2")), Some(false));
        assert_eq!(set.rel(&qid("q1"), &iid("v9")), None);
        assert_eq!(
            set.get(&qid("q1"), &iid("v2")).unwrap().source,
            Source::pooled(["a", "b"])
        );
        assert_eq!(
            set.get(&qid("q2"), &iid("v4")).unwrap().source,
            Source::Original
        );
    }

    #[test]
    fn judgment_errors() {
        assert!(matches!(
            parse_judgments_str("q1 v1 2 original\n"),
            Err(CorpusError::InvalidLabel { line: 1, .. })
        ));
        assert!(matches!(
            parse_judgments_str("q1 v1 1 original\nq1 v1 0 original\n"),
            Err(CorpusError::ConflictingLabel { line: 2, .. })
        ));
        assert!(matches!(
            parse_judgments_str("q1 v1 1 pooled:\n"),
            Err(CorpusError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn repeated_agreeing_judgment_joins_sources() {
        let set = parse_judgments_str("q1 v1 1 pooled:a\nq1 v1 1 pooled:b\n").unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(
            set.get(&qid("q1"), &iid("v1")).unwrap().source,
            Source::pooled(["a", "b"])
        );
    }

    #[test]
    fn merge_union_and_relevant_wins() {
        let original = parse_judgments_str("q1 v1 1 original\n").unwrap();
        let fire = parse_judgments_str("q1 v2 1 pooled:s\n").unwrap();
        let merged = merge_judgments(&original, &fire, MergePolicy::RelevantWins).unwrap();
        assert_eq!(merged.rel(&qid("q1"), &iid("v1")), Some(true));
        assert_eq!(merged.rel(&qid("q1"), &iid("v2")), Some(true));

        let negative = parse_judgments_str("q1 v1 0 pooled:s\n").unwrap();
        let merged = merge_judgments(&original, &negative, MergePolicy::RelevantWins).unwrap();
        let j = merged.get(&qid("q1"), &iid("v1")).unwrap();
        assert_eq!(j.relevance, Relevance::Relevant);
        assert_eq!(j.source, Source::Merged);
        assert!(matches!(
            merge_judgments(&original, &negative, MergePolicy::ErrorOnConflict),
            Err(CorpusError::MergeConflict { .. })
        ));
    }

    #[test]
    fn queries_file() {
        let qs = parse_queries_str("q1\ttest\ta man  is singing\nq2\ttrain\t\nq3\ttest\n").unwrap();
        assert_eq!(qs.len(), 3);
        assert_eq!(qs[0].text, "a man  is singing");
        assert_eq!(qs[1].split, Split::Train);
        assert_eq!(qs[2].text, "");
        assert!(parse_queries_str("q1\tdev\tx\n").is_err());
        assert!(parse_queries_str("q1\ttest\tx\nq1\ttest\ty\n").is_err());
        assert_eq!(write_queries(&qs[..1]), "q1\ttest\ta man  is singing\n");
    }

    #[test]
    fn collection_strict_membership() {
        let coll = Collection::new(
            [iid("v1"), iid("v2")],
            [Query {
                id: qid("q1"),
                text: "x".into(),
                split: Split::Test,
            }],
        );
        let (run, _) = parse_run_str("q1 v1 1 1 s\n", true).unwrap();
        coll.check_run(&run).unwrap();
        let (bad, _) = parse_run_str("q1 v3 1 1 s\n", true).unwrap();
        assert!(matches!(
            coll.check_run(&bad),
            Err(CorpusError::NotInCollection { kind: "item", .. })
        ));
        let judg = parse_judgments_str("q2 v1 1 original\n").unwrap();
        assert!(matches!(
            coll.check_judgments(&judg),
            Err(CorpusError::NotInCollection { kind: "query", .. })
        ));
    }
}
