//! System pooling: collect the top-ranked predictions of several runs into a
//! deduplicated annotation pool, plan single and double labeling passes, and
//! resolve raw rater labels into judgments by majority.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ItemId, Judgment, JudgmentSet, QueryId, RankedRun, Relevance, Source};

pub const DEFAULT_POOL_DEPTH: usize = 10;
pub const DEFAULT_DOUBLE_LABEL_FRACTION: f64 = 0.10;
pub const POOL_RUN_TAG: &str = "POOL";

#[derive(Debug, Error)]
pub enum PoolingError {
    #[error("pool depth must be at least 1")]
    InvalidDepth,
    #[error("at least one run is required to build a pool")]
    NoRuns,
    #[error("double-label fraction {0} is outside [0, 1]")]
    InvalidFraction(f64),
    #[error("label log line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
}

/// Stable textual key for a (query, item) pair.
pub fn pair_id(query: &QueryId, item: &ItemId) -> String {
    format!("{query}::{item}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolPair {
    pub query: QueryId,
    pub item: ItemId,
    /// Runs that ranked this pair within the pool depth.
    pub systems: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pool {
    pub depth: usize,
    pub contributing_systems: BTreeSet<String>,
    /// Distinct candidate pairs skipped because the seed already judged them.
    pub excluded: usize,
    pairs: Vec<PoolPair>,
}

impl Pool {
    pub fn pairs(&self) -> &[PoolPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn find(&self, query: &QueryId, item: &ItemId) -> Option<&PoolPair> {
        self.pairs
            .binary_search_by(|p| (&p.query, &p.item).cmp(&(query, item)))
            .ok()
            .map(|idx| &self.pairs[idx])
    }

    pub fn contains(&self, query: &QueryId, item: &ItemId) -> bool {
        self.find(query, item).is_some()
    }

    /// Run-file view of the pool (tag `POOL`), items in lexicographic order
    /// so that no system ordering leaks through.
    pub fn to_run(&self) -> RankedRun {
        let mut lists: BTreeMap<QueryId, Vec<(ItemId, f64)>> = BTreeMap::new();
        for p in &self.pairs {
            lists
                .entry(p.query.clone())
                .or_default()
                .push((p.item.clone(), 0.0));
        }
        RankedRun::from_lists(POOL_RUN_TAG, lists).expect("pool pairs are unique")
    }

    /// Rebuilds a pool from its run-file view. Attribution is not part of
    /// that format, so `systems` come back empty.
    pub fn from_run(run: &RankedRun) -> Self {
        let mut pairs: Vec<PoolPair> = run
            .lists()
            .flat_map(|(q, list)| {
                list.items().iter().map(move |i| PoolPair {
                    query: q.clone(),
                    item: i.clone(),
                    systems: BTreeSet::new(),
                })
            })
            .collect();
        pairs.sort_by(|a, b| (&a.query, &a.item).cmp(&(&b.query, &b.item)));
        Self {
            depth: run.lists().map(|(_, l)| l.len()).max().unwrap_or(0),
            contributing_systems: BTreeSet::new(),
            excluded: 0,
            pairs,
        }
    }

    /// Replaces the source of pooled labels with this pool's per-system
    /// attribution.
    pub fn attribute(&self, judgments: &JudgmentSet) -> JudgmentSet {
        let mut out = JudgmentSet::new();
        for (q, i, j) in judgments.iter() {
            let source = match (&j.source, self.find(q, i)) {
                (Source::Pooled(_), Some(p)) => Source::Pooled(p.systems.clone()),
                (s, _) => s.clone(),
            };
            out.insert(q.clone(), i.clone(), Judgment::new(j.relevance, source))
                .expect("input has one label per pair");
        }
        out
    }
}

/// Union of every run's top-`depth` pairs minus those already judged in
/// `seed`. Returns the pool and warnings about runs that miss seed queries.
pub fn build_pool(
    runs: &[RankedRun],
    seed: &JudgmentSet,
    depth: usize,
) -> Result<(Pool, Vec<String>), PoolingError> {
    if depth == 0 {
        return Err(PoolingError::InvalidDepth);
    }
    if runs.is_empty() {
        return Err(PoolingError::NoRuns);
    }
    let mut warnings = Vec::new();
    let mut candidates: BTreeMap<(QueryId, ItemId), BTreeSet<String>> = BTreeMap::new();
    for run in runs {
        let missing = seed.queries().filter(|q| run.list(q).is_none()).count();
        if missing > 0 {
            warnings.push(format!(
                "run {} has no ranking for {missing} judged quer(ies)",
                run.system()
            ));
        }
        for (q, list) in run.lists() {
            for item in list.top(depth) {
                candidates
                    .entry((q.clone(), item.clone()))
                    .or_default()
                    .insert(run.system().to_string());
            }
        }
    }
    let total = candidates.len();
    let pairs: Vec<PoolPair> = candidates
        .into_iter()
        .filter(|((q, i), _)| !seed.contains(q, i))
        .map(|((query, item), systems)| PoolPair {
            query,
            item,
            systems,
        })
        .collect();
    let pool = Pool {
        depth,
        contributing_systems: runs.iter().map(|r| r.system().to_string()).collect(),
        excluded: total - pairs.len(),
        pairs,
    };
    Ok((pool, warnings))
}

// ---------------------------------------------------------------------------
// Annotation jobs
// ---------------------------------------------------------------------------

/// One request for a label on one pair. Raters in `excluded_raters` have
/// already labeled the pair and may not take the job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: String,
    pub query_id: QueryId,
    pub item_id: ItemId,
    pub pass: u8,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub excluded_raters: BTreeSet<String>,
}

impl Job {
    pub fn new(query: QueryId, item: ItemId, pass: u8) -> Self {
        Self {
            job_id: format!("{}#{pass}", pair_id(&query, &item)),
            query_id: query,
            item_id: item,
            pass,
            excluded_raters: BTreeSet::new(),
        }
    }
}

/// Number of pairs receiving a second label: `floor(fraction * n)`, with a
/// small tolerance so that e.g. `0.29 * 100` counts as 29.
pub fn double_label_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) + 1e-9).floor() as usize
}

/// Pass-1 jobs for every pool pair followed by pass-2 jobs for a seeded
/// random subset of `floor(fraction * |pool|)` pairs. Third passes are
/// created later by [`resolve_labels`] when the first two disagree.
pub fn assignment_plan(
    pool: &Pool,
    fraction: f64,
    rng_seed: u64,
) -> Result<Vec<Job>, PoolingError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(PoolingError::InvalidFraction(fraction));
    }
    let n = pool.len();
    let mut jobs: Vec<Job> = pool
        .pairs
        .iter()
        .map(|p| Job::new(p.query.clone(), p.item.clone(), 1))
        .collect();
    let count = double_label_count(fraction, n).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut chosen = rand::seq::index::sample(&mut rng, n, count).into_vec();
    chosen.sort_unstable();
    jobs.extend(chosen.into_iter().map(|idx| {
        let p = &pool.pairs[idx];
        Job::new(p.query.clone(), p.item.clone(), 2)
    }));
    Ok(jobs)
}

// ---------------------------------------------------------------------------
// Label records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Relevant,
    Irrelevant,
    /// The rater declined to judge the pair as too ambiguous.
    Escalated,
}

impl Label {
    pub fn relevance(self) -> Option<Relevance> {
        match self {
            Label::Relevant => Some(Relevance::Relevant),
            Label::Irrelevant => Some(Relevance::Irrelevant),
            Label::Escalated => None,
        }
    }

    pub fn parse(raw: &str) -> Option<Label> {
        match raw {
            "relevant" => Some(Label::Relevant),
            "irrelevant" => Some(Label::Irrelevant),
            "escalated" => Some(Label::Escalated),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Relevant => "relevant",
            Label::Irrelevant => "irrelevant",
            Label::Escalated => "escalated",
        })
    }
}

/// One rater's raw judgment of one pair.
///
/// On the wire this is a JSON object
/// `{pair_id, query_id, item_id, rater_id, label, ts}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RecordWire", into = "RecordWire")]
pub struct LabelRecord {
    pub query: QueryId,
    pub item: ItemId,
    pub rater_id: String,
    pub label: Label,
    pub timestamp: DateTime<Utc>,
}

#[derive(Serialize, Deserialize)]
struct RecordWire {
    pair_id: String,
    query_id: QueryId,
    item_id: ItemId,
    rater_id: String,
    label: Label,
    ts: DateTime<Utc>,
}

impl TryFrom<RecordWire> for LabelRecord {
    type Error = String;
    fn try_from(w: RecordWire) -> Result<Self, Self::Error> {
        if w.rater_id.trim().is_empty() {
            return Err("rater_id must be non-empty".into());
        }
        if w.pair_id != pair_id(&w.query_id, &w.item_id) {
            return Err(format!(
                "pair_id {:?} does not match query_id/item_id",
                w.pair_id
            ));
        }
        Ok(Self {
            query: w.query_id,
            item: w.item_id,
            rater_id: w.rater_id,
            label: w.label,
            timestamp: w.ts,
        })
    }
}

impl From<LabelRecord> for RecordWire {
    fn from(r: LabelRecord) -> Self {
        Self {
            pair_id: pair_id(&r.query, &r.item),
            query_id: r.query,
            item_id: r.item,
            rater_id: r.rater_id,
            label: r.label,
            ts: r.timestamp,
        }
    }
}

impl LabelRecord {
    pub fn new(
        query: QueryId,
        item: ItemId,
        rater_id: impl Into<String>,
        label: Label,
        timestamp: DateTime<Utc>,
    ) -> Self {
        Self {
            query,
            item,
            rater_id: rater_id.into(),
            label,
            timestamp,
        }
    }

    pub fn pair_id(&self) -> String {
        pair_id(&self.query, &self.item)
    }

    pub fn to_json_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("records always serialize");
        line.push('\n');
        line
    }
}

/// Parses a line-delimited JSON label log. Blank lines are skipped.
pub fn parse_label_log_str(text: &str) -> Result<Vec<LabelRecord>, PoolingError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(idx, l)| {
            serde_json::from_str(l).map_err(|e| PoolingError::BadRecord {
                line: idx + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Resolution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "label", rename_all = "lowercase")]
pub enum ResolutionStatus {
    Resolved(Relevance),
    /// No strict majority yet (or ever, for even ties).
    Unresolved,
    /// Only escalations were collected.
    Escalated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionOutcome {
    pub query: QueryId,
    pub item: ItemId,
    pub status: ResolutionStatus,
    /// Non-escalated labels counted for the outcome.
    pub labels_used: usize,
    /// Two disagreeing labels; a third is needed.
    pub awaiting_third: bool,
}

/// Outcome of a single pair from its labels, ignoring order.
pub fn resolve_pair(labels: &[Label]) -> (ResolutionStatus, usize, bool) {
    let relevant = labels.iter().filter(|l| **l == Label::Relevant).count();
    let irrelevant = labels.iter().filter(|l| **l == Label::Irrelevant).count();
    let used = relevant + irrelevant;
    if used == 0 {
        return (ResolutionStatus::Escalated, 0, false);
    }
    let status = if relevant * 2 > used {
        ResolutionStatus::Resolved(Relevance::Relevant)
    } else if irrelevant * 2 > used {
        ResolutionStatus::Resolved(Relevance::Irrelevant)
    } else {
        ResolutionStatus::Unresolved
    };
    (status, used, used == 2 && relevant == 1)
}

#[derive(Debug, Clone, Default)]
pub struct Resolution {
    /// Resolved labels, sourced `pooled` without attribution (see
    /// [`Pool::attribute`]).
    pub judgments: JudgmentSet,
    pub outcomes: Vec<ResolutionOutcome>,
    /// Third-pass jobs for pairs whose two labels disagree.
    pub pending: Vec<Job>,
    pub warnings: Vec<String>,
}

impl Resolution {
    pub fn count(&self, pred: impl Fn(&ResolutionOutcome) -> bool) -> usize {
        self.outcomes.iter().filter(|o| pred(o)).count()
    }

    pub fn resolved(&self) -> usize {
        self.count(|o| matches!(o.status, ResolutionStatus::Resolved(_)))
    }

    pub fn unresolved(&self) -> usize {
        self.count(|o| o.status == ResolutionStatus::Unresolved)
    }

    pub fn escalated(&self) -> usize {
        self.count(|o| o.status == ResolutionStatus::Escalated)
    }

    /// Fraction of labeled pairs that resolved to a label.
    pub fn resolution_rate(&self) -> Option<f64> {
        (!self.outcomes.is_empty()).then(|| self.resolved() as f64 / self.outcomes.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("query_id,item_id,status,label,labels_used\n");
        for o in &self.outcomes {
            let (status, label) = match o.status {
                ResolutionStatus::Resolved(Relevance::Relevant) => ("resolved", "relevant"),
                ResolutionStatus::Resolved(Relevance::Irrelevant) => ("resolved", "irrelevant"),
                ResolutionStatus::Unresolved if o.awaiting_third => ("pending", ""),
                ResolutionStatus::Unresolved => ("unresolved", ""),
                ResolutionStatus::Escalated => ("escalated", ""),
            };
            out.push_str(&format!(
                "{},{},{status},{label},{}\n",
                o.query, o.item, o.labels_used
            ));
        }
        out
    }
}

/// Groups records by pair and resolves each by strict majority over its
/// non-escalated labels. The result does not depend on record order.
pub fn resolve_labels(records: &[LabelRecord]) -> Resolution {
    let mut by_pair: BTreeMap<(&QueryId, &ItemId), Vec<&LabelRecord>> = BTreeMap::new();
    for r in records {
        by_pair.entry((&r.query, &r.item)).or_default().push(r);
    }
    let mut resolution = Resolution::default();
    for ((query, item), recs) in by_pair {
        let labels: Vec<Label> = recs.iter().map(|r| r.label).collect();
        let (status, used, awaiting_third) = resolve_pair(&labels);
        if used > 3 {
            resolution.warnings.push(format!(
                "pair {} has {used} labels; resolved by majority",
                pair_id(query, item)
            ));
        }
        if let ResolutionStatus::Resolved(relevance) = status {
            resolution
                .judgments
                .insert(
                    query.clone(),
                    item.clone(),
                    Judgment::new(relevance, Source::Pooled(BTreeSet::new())),
                )
                .expect("one outcome per pair");
        }
        if awaiting_third {
            let mut job = Job::new(query.clone(), item.clone(), 3);
            job.excluded_raters = recs.iter().map(|r| r.rater_id.clone()).collect();
            resolution.pending.push(job);
        }
        resolution.outcomes.push(ResolutionOutcome {
            query: query.clone(),
            item: item.clone(),
            status,
            labels_used: used,
            awaiting_third,
        });
    }
    resolution
}
