//! Retrieval metrics under a judgment set: Correct@K, textbook Recall@K,
//! average precision and first-positive rank, plus original-vs-corrected
//! delta reports.
//!
//! Unjudged items count as non-relevant when scoring, as in any pooled
//! evaluation. Queries without a single known positive have undefined
//! recall and AP; by default they are dropped from aggregates and listed in
//! the report.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ItemId, JudgmentSet, QueryId, RankedRun};

pub const DEFAULT_KS: [usize; 4] = [1, 5, 10, 50];
pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("query {0} has no known positive")]
    NoKnownPositive(QueryId),
    #[error("cutoff K must be at least 1")]
    InvalidK,
    #[error("at least one cutoff K is required")]
    NoCutoffs,
    #[error("run {0} shares no judged query with the judgment set")]
    EmptyIntersection(String),
}

/// 1-based ranks at which relevant items occur, plus the total number of
/// known positives for the query.
#[derive(Debug, Clone)]
struct Hits {
    positions: Vec<usize>,
    total: usize,
}

impl Hits {
    fn collect(list: &[ItemId], relevant: &BTreeSet<&ItemId>) -> Self {
        let positions = list
            .iter()
            .enumerate()
            .filter(|(_, item)| relevant.contains(item))
            .map(|(pos, _)| pos + 1)
            .collect();
        Self {
            positions,
            total: relevant.len(),
        }
    }

    fn correct_at(&self, k: usize) -> bool {
        self.positions.first().is_some_and(|&p| p <= k)
    }

    fn recall_at(&self, k: usize) -> f64 {
        let found = self.positions.iter().take_while(|&&p| p <= k).count();
        found as f64 / self.total as f64
    }

    fn average_precision(&self) -> f64 {
        let mut sum = 0.0;
        for (seen, &pos) in self.positions.iter().enumerate() {
            sum += (seen + 1) as f64 / pos as f64;
        }
        sum / self.total as f64
    }

    fn first(&self) -> Option<usize> {
        self.positions.first().copied()
    }
}

fn relevant_set<'a>(judgments: &'a JudgmentSet, q: &QueryId) -> BTreeSet<&'a ItemId> {
    judgments.relevant_items(q).collect()
}

fn hits_for(list: &[ItemId], judgments: &JudgmentSet, q: &QueryId) -> Result<Hits, MetricError> {
    let relevant = relevant_set(judgments, q);
    if relevant.is_empty() {
        return Err(MetricError::NoKnownPositive(q.clone()));
    }
    Ok(Hits::collect(list, &relevant))
}

/// True iff one of the first `k` items is relevant.
pub fn correct_at_k(
    list: &[ItemId],
    judgments: &JudgmentSet,
    q: &QueryId,
    k: usize,
) -> Result<bool, MetricError> {
    if k == 0 {
        return Err(MetricError::InvalidK);
    }
    Ok(hits_for(list, judgments, q)?.correct_at(k))
}

/// Relevant items in the top `k` over all known positives of the query.
pub fn recall_at_k(
    list: &[ItemId],
    judgments: &JudgmentSet,
    q: &QueryId,
    k: usize,
) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::InvalidK);
    }
    Ok(hits_for(list, judgments, q)?.recall_at(k))
}

/// Sum of precision at each relevant position divided by the number of
/// known positives. Positives absent from `list` add nothing to the sum but
/// stay in the denominator.
pub fn average_precision(
    list: &[ItemId],
    judgments: &JudgmentSet,
    q: &QueryId,
) -> Result<f64, MetricError> {
    let hits = hits_for(list, judgments, q)?;
    let missing = hits.total - hits.positions.len();
    if missing > 0 {
        log::warn!("query {q}: {missing} judged positive(s) missing from ranked list");
    }
    Ok(hits.average_precision())
}

/// 1-based rank of the first relevant item, if any.
pub fn first_positive_rank(list: &[ItemId], judgments: &JudgmentSet, q: &QueryId) -> Option<usize> {
    list.iter()
        .position(|item| judgments.rel(q, item) == Some(true))
        .map(|p| p + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ZeroPositivePolicy {
    /// Leave the query out of every aggregate.
    #[default]
    Exclude,
    /// Keep the query with every metric at zero.
    ScoreZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub correct_at: BTreeMap<usize, u8>,
    pub recall_at: BTreeMap<usize, f64>,
    pub avg_prec: f64,
    pub first_pos_rank: Option<usize>,
    pub num_relevant: usize,
    /// Known positives that the ranked list does not contain.
    pub positives_missing_from_run: usize,
}

impl QueryMetrics {
    fn from_hits(hits: &Hits, ks: &[usize]) -> Self {
        Self {
            correct_at: ks.iter().map(|&k| (k, hits.correct_at(k) as u8)).collect(),
            recall_at: ks.iter().map(|&k| (k, hits.recall_at(k))).collect(),
            avg_prec: hits.average_precision(),
            first_pos_rank: hits.first(),
            num_relevant: hits.total,
            positives_missing_from_run: hits.total - hits.positions.len(),
        }
    }

    fn zero(ks: &[usize]) -> Self {
        Self {
            correct_at: ks.iter().map(|&k| (k, 0)).collect(),
            recall_at: ks.iter().map(|&k| (k, 0.0)).collect(),
            avg_prec: 0.0,
            first_pos_rank: None,
            num_relevant: 0,
            positives_missing_from_run: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub num_queries: usize,
    pub correct_at: BTreeMap<usize, f64>,
    pub recall_at: BTreeMap<usize, f64>,
    pub mean_avg_prec: f64,
    /// Over queries whose list contains a positive.
    pub mean_first_pos_rank: Option<f64>,
    pub median_first_pos_rank: Option<f64>,
    pub queries_without_retrieved_positive: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub format_version: u32,
    pub system: String,
    pub judgment_tag: String,
    pub ks: Vec<usize>,
    pub zero_positive_policy: ZeroPositivePolicy,
    pub aggregate: AggregateMetrics,
    /// Run queries with judgments but no known positive.
    pub no_known_positive: Vec<QueryId>,
    /// Run queries absent from the judgment set; never scored.
    pub unjudged_queries: Vec<QueryId>,
    pub per_query: BTreeMap<QueryId, QueryMetrics>,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub zero_positive: ZeroPositivePolicy,
    pub judgment_tag: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ks: DEFAULT_KS.to_vec(),
            zero_positive: ZeroPositivePolicy::Exclude,
            judgment_tag: "judgments".into(),
        }
    }
}

impl EvalOptions {
    pub fn with_ks(ks: &[usize]) -> Self {
        Self {
            ks: ks.to_vec(),
            ..Self::default()
        }
    }

    pub fn tagged(mut self, tag: impl Into<String>) -> Self {
        self.judgment_tag = tag.into();
        self
    }

    fn normalized_ks(&self) -> Result<Vec<usize>, MetricError> {
        if self.ks.is_empty() {
            return Err(MetricError::NoCutoffs);
        }
        if self.ks.contains(&0) {
            return Err(MetricError::InvalidK);
        }
        let mut ks = self.ks.clone();
        ks.sort_unstable();
        ks.dedup();
        Ok(ks)
    }
}

fn median(sorted: &[usize]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2] as f64),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0),
    }
}

fn aggregate(per_query: &BTreeMap<QueryId, QueryMetrics>, ks: &[usize]) -> AggregateMetrics {
    let n = per_query.len();
    let denom = n.max(1) as f64;
    let mut correct: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    let mut recall: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    let mut ap = 0.0;
    let mut ranks = Vec::new();
    // fixed summation order: query id order
    for m in per_query.values() {
        for (k, v) in &m.correct_at {
            *correct.get_mut(k).unwrap() += f64::from(*v);
        }
        for (k, v) in &m.recall_at {
            *recall.get_mut(k).unwrap() += v;
        }
        ap += m.avg_prec;
        ranks.extend(m.first_pos_rank);
    }
    correct.values_mut().for_each(|v| *v /= denom);
    recall.values_mut().for_each(|v| *v /= denom);
    let mean_rank = (!ranks.is_empty())
        .then(|| ranks.iter().map(|&r| r as f64).sum::<f64>() / ranks.len() as f64);
    ranks.sort_unstable();
    AggregateMetrics {
        num_queries: n,
        correct_at: correct,
        recall_at: recall,
        mean_avg_prec: ap / denom,
        mean_first_pos_rank: mean_rank,
        median_first_pos_rank: median(&ranks),
        queries_without_retrieved_positive: n - ranks.len(),
    }
}

/// Scores every run query that has judgments and aggregates the results.
pub fn evaluate(
    run: &RankedRun,
    judgments: &JudgmentSet,
    options: &EvalOptions,
) -> Result<MetricReport, MetricError> {
    let ks = options.normalized_ks()?;
    let mut unjudged = Vec::new();
    let mut judged = Vec::new();
    for (q, list) in run.lists() {
        if judgments.has_query(q) {
            judged.push((q, list));
        } else {
            unjudged.push(q.clone());
        }
    }
    if judged.is_empty() {
        return Err(MetricError::EmptyIntersection(run.system().to_string()));
    }

    let scored: Vec<(QueryId, Option<QueryMetrics>)> = judged
        .par_iter()
        .map(|(q, list)| {
            let relevant = relevant_set(judgments, q);
            let metrics = (!relevant.is_empty())
                .then(|| QueryMetrics::from_hits(&Hits::collect(list.items(), &relevant), &ks));
            ((*q).clone(), metrics)
        })
        .collect();

    let mut per_query = BTreeMap::new();
    let mut no_positive = Vec::new();
    for (q, metrics) in scored {
        match metrics {
            Some(m) => {
                per_query.insert(q, m);
            }
            None => {
                if options.zero_positive == ZeroPositivePolicy::ScoreZero {
                    per_query.insert(q.clone(), QueryMetrics::zero(&ks));
                }
                no_positive.push(q);
            }
        }
    }
    if !no_positive.is_empty() {
        log::warn!(
            "{}: {} quer(ies) without a known positive",
            run.system(),
            no_positive.len()
        );
    }

    Ok(MetricReport {
        format_version: REPORT_FORMAT_VERSION,
        system: run.system().to_string(),
        judgment_tag: options.judgment_tag.clone(),
        aggregate: aggregate(&per_query, &ks),
        ks,
        zero_positive_policy: options.zero_positive,
        no_known_positive: no_positive,
        unjudged_queries: unjudged,
        per_query,
    })
}

impl MetricReport {
    /// `(metric name, value)` rows in a fixed order.
    pub fn aggregate_rows(&self) -> Vec<(String, Option<f64>)> {
        let agg = &self.aggregate;
        let mut rows = Vec::new();
        for (k, v) in &agg.correct_at {
            rows.push((format!("C@{k}"), Some(*v)));
        }
        for (k, v) in &agg.recall_at {
            rows.push((format!("R@{k}"), Some(*v)));
        }
        rows.push(("AP".into(), Some(agg.mean_avg_prec)));
        rows.push(("mean_first_rank".into(), agg.mean_first_pos_rank));
        rows.push(("median_first_rank".into(), agg.median_first_pos_rank));
        rows.push(("num_queries".into(), Some(agg.num_queries as f64)));
        rows
    }

    /// One row per aggregate metric: `system,judgments,metric,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("system,judgments,metric,value\n");
        for (name, value) in self.aggregate_rows() {
            let value = value.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{name},{value}\n",
                self.system, self.judgment_tag
            ));
        }
        out
    }

    /// One row per evaluated query.
    pub fn per_query_csv(&self) -> String {
        let mut out = String::from("query_id,num_relevant");
        for k in &self.ks {
            out.push_str(&format!(",C@{k}"));
        }
        for k in &self.ks {
            out.push_str(&format!(",R@{k}"));
        }
        out.push_str(",AP,first_rank\n");
        for (q, m) in &self.per_query {
            out.push_str(&format!("{q},{}", m.num_relevant));
            for v in m.correct_at.values() {
                out.push_str(&format!(",{v}"));
            }
            for v in m.recall_at.values() {
                out.push_str(&format!(",{v}"));
            }
            let rank = m.first_pos_rank.map(|r| r.to_string()).unwrap_or_default();
            out.push_str(&format!(",{},{rank}\n", m.avg_prec));
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "system {} | judgments {} | {} queries",
            self.system, self.judgment_tag, self.aggregate.num_queries
        );
        if !self.no_known_positive.is_empty() {
            out.push_str(&format!(
                " | {} without known positive",
                self.no_known_positive.len()
            ));
        }
        if !self.unjudged_queries.is_empty() {
            out.push_str(&format!(" | {} unjudged", self.unjudged_queries.len()));
        }
        out.push('\n');
        for (name, value) in self.aggregate_rows() {
            let rendered = match value {
                None => "-".to_string(),
                Some(v) if name.contains('@') || name == "AP" => format!("{:.1}%", v * 100.0),
                Some(v) => format!("{v}"),
            };
            out.push_str(&format!("  {name:<18} {rendered}\n"));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Delta reports
// ---------------------------------------------------------------------------

/// A `delta` such that `original + delta == corrected` holds exactly in
/// floating point whenever such a value exists within a few ulps of
/// `corrected - original`. Otherwise (round-half-even can make `corrected`
/// unreachable) the candidate whose sum lands closest is returned.
pub fn exact_delta(corrected: f64, original: f64) -> f64 {
    let base = corrected - original;
    let miss = |c: f64| (original + c - corrected).abs();
    let mut best = base;
    if miss(best) == 0.0 {
        return best;
    }
    let mut down = base;
    let mut up = base;
    for _ in 0..8 {
        down = down.next_down();
        up = up.next_up();
        for c in [up, down] {
            if miss(c) < miss(best) {
                best = c;
            }
        }
        if miss(best) == 0.0 {
            break;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub metric: String,
    /// Score under the corrected judgments (A).
    pub corrected: f64,
    /// Score under the original judgments (B).
    pub original: f64,
    /// `corrected - original` (C).
    pub delta: f64,
}

impl DeltaRow {
    fn new(metric: String, corrected: f64, original: f64) -> Self {
        Self {
            metric,
            corrected,
            original,
            delta: exact_delta(corrected, original),
        }
    }

    /// Percent rendering in the style `67.4 (42.4 + 25.0)%`, three
    /// significant figures each.
    pub fn table_cell(&self) -> String {
        let sign = if self.delta < 0.0 { '-' } else { '+' };
        format!(
            "{} ({} {sign} {})%",
            sig_figs(self.corrected * 100.0, 3),
            sig_figs(self.original * 100.0, 3),
            sig_figs(self.delta.abs() * 100.0, 3)
        )
    }
}

/// Formats `x` with `digits` significant figures, keeping trailing zeros.
pub fn sig_figs(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{:.*}", digits.saturating_sub(1), x);
    }
    let magnitude = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    let rendered = format!("{x:.decimals$}");
    // rounding may carry into the next power of ten (99.96 -> 100.0)
    let rounded: f64 = rendered.parse().unwrap_or(x);
    let new_magnitude = rounded.abs().log10().floor() as i64;
    if new_magnitude > magnitude {
        let decimals = (digits as i64 - 1 - new_magnitude).max(0) as usize;
        return format!("{rounded:.decimals$}");
    }
    rendered
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub format_version: u32,
    pub system: String,
    pub ks: Vec<usize>,
    pub rows: Vec<DeltaRow>,
    /// Whether every original positive is also a corrected positive.
    pub corrected_is_superset: bool,
    /// Metrics whose delta is negative; flagged, not rejected.
    pub negative_deltas: Vec<String>,
}

/// Scores `run` under both judgment sets and reports `A (B + C)` per metric.
pub fn delta_report(
    run: &RankedRun,
    original: &JudgmentSet,
    corrected: &JudgmentSet,
    ks: &[usize],
) -> Result<DeltaReport, MetricError> {
    let superset = corrected.relevant_superset_of(original);
    if !superset {
        log::warn!("corrected judgments drop some original positives");
    }
    let opts = EvalOptions::with_ks(ks);
    let a = evaluate(run, corrected, &opts.clone().tagged("corrected"))?;
    let b = evaluate(run, original, &opts.tagged("original"))?;

    let mut rows = Vec::new();
    for k in &a.ks {
        rows.push(DeltaRow::new(
            format!("C@{k}"),
            a.aggregate.correct_at[k],
            b.aggregate.correct_at[k],
        ));
    }
    for k in &a.ks {
        rows.push(DeltaRow::new(
            format!("R@{k}"),
            a.aggregate.recall_at[k],
            b.aggregate.recall_at[k],
        ));
    }
    rows.push(DeltaRow::new(
        "AP".into(),
        a.aggregate.mean_avg_prec,
        b.aggregate.mean_avg_prec,
    ));
    let negative_deltas = rows
        .iter()
        .filter(|r| r.delta < 0.0)
        .map(|r| r.metric.clone())
        .collect();
    Ok(DeltaReport {
        format_version: REPORT_FORMAT_VERSION,
        system: run.system().to_string(),
        ks: a.ks.clone(),
        rows,
        corrected_is_superset: superset,
        negative_deltas,
    })
}

impl DeltaReport {
    pub fn row(&self, metric: &str) -> Option<&DeltaRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("system,metric,corrected,original,delta\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.system, r.metric, r.corrected, r.original, r.delta
            ));
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = format!("system {}: A (B + C)\n", self.system);
        for r in &self.rows {
            out.push_str(&format!("  {:<6} {}\n", r.metric, r.table_cell()));
        }
        if !self.negative_deltas.is_empty() {
            out.push_str(&format!(
                "  note: negative delta for {}\n",
                self.negative_deltas.join(", ")
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_judgments_str, parse_run_str};

    fn items(ids: &[&str]) -> Vec<ItemId> {
        ids.iter().map(|s| ItemId::new(*s).unwrap()).collect()
    }

    fn positives(q: &str, ids: &[&str]) -> JudgmentSet {
        let text: String = ids
            .iter()
            .map(|i| format!("{q} {i} 1 original\n"))
            .collect();
        parse_judgments_str(&text).unwrap()
    }

    fn q(s: &str) -> QueryId {
        QueryId::new(s).unwrap()
    }

    #[test]
    fn correct_at_k_definition() {
        let j = positives("q", &["v1"]);
        let list = items(&["v2", "v1", "v3"]);
        assert!(!correct_at_k(&list, &j, &q("q"), 1).unwrap());
        assert!(correct_at_k(&list, &j, &q("q"), 2).unwrap());
        let top = items(&["v1", "v2"]);
        for k in 1..5 {
            assert!(correct_at_k(&top, &j, &q("q"), k).unwrap());
        }
        assert_eq!(
            correct_at_k(&list, &j, &q("q"), 0),
            Err(MetricError::InvalidK)
        );
    }

    #[test]
    fn no_known_positive_is_reported() {
        let j = parse_judgments_str("q v1 0 original\n").unwrap();
        let list = items(&["v1"]);
        assert_eq!(
            correct_at_k(&list, &j, &q("q"), 1),
            Err(MetricError::NoKnownPositive(q("q")))
        );
        assert!(average_precision(&list, &j, &q("q")).is_err());
        assert_eq!(first_positive_rank(&list, &j, &q("q")), None);
    }

    #[test]
    fn recall_examples() {
        let j = positives("q", &["a", "c"]);
        assert_eq!(
            recall_at_k(&items(&["a", "b", "c", "d"]), &j, &q("q"), 2).unwrap(),
            0.5
        );
        assert_eq!(
            recall_at_k(&items(&["a", "c", "b"]), &j, &q("q"), 2).unwrap(),
            1.0
        );
    }

    #[test]
    fn average_precision_examples() {
        let j = positives("q", &["a", "c"]);
        let ap = average_precision(&items(&["a", "b", "c", "d"]), &j, &q("q")).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        let j = positives("q", &["a", "c", "d"]);
        let ap = average_precision(&items(&["b", "a", "c", "d"]), &j, &q("q")).unwrap();
        assert!((ap - 23.0 / 36.0).abs() < 1e-15);
        let ap = average_precision(&items(&["a", "c", "d", "b"]), &j, &q("q")).unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn missing_positive_stays_in_denominator() {
        let j = positives("q", &["a", "z"]);
        let ap = average_precision(&items(&["a", "b"]), &j, &q("q")).unwrap();
        assert_eq!(ap, 0.5);
    }

    #[test]
    fn first_positive_rank_examples() {
        let j = positives("q", &["p"]);
        assert_eq!(
            first_positive_rank(&items(&["n", "p", "x"]), &j, &q("q")),
            Some(2)
        );
        assert_eq!(first_positive_rank(&items(&["n", "x"]), &j, &q("q")), None);
    }

    #[test]
    fn evaluate_means_and_lists_excluded_queries() {
        let (run, _) = parse_run_str(
            "q1 a 1 1 s\nq1 b 2 0 s\nq2 c 1 1 s\nq2 d 2 0 s\nq3 e 1 1 s\nq4 f 1 1 s\n",
            true,
        )
        .unwrap();
        let j = parse_judgments_str("q1 a 1 original\nq2 d 1 original\nq3 e 0 original\n").unwrap();
        let report = evaluate(&run, &j, &EvalOptions::with_ks(&[1, 2])).unwrap();
        assert_eq!(report.aggregate.num_queries, 2);
        assert_eq!(report.aggregate.correct_at[&1], 0.5);
        assert_eq!(report.aggregate.correct_at[&2], 1.0);
        assert_eq!(report.aggregate.median_first_pos_rank, Some(1.5));
        assert_eq!(report.no_known_positive, vec![q("q3")]);
        assert_eq!(report.unjudged_queries, vec![q("q4")]);

        let mut opts = EvalOptions::with_ks(&[1]);
        opts.zero_positive = ZeroPositivePolicy::ScoreZero;
        let report = evaluate(&run, &j, &opts).unwrap();
        assert_eq!(report.aggregate.num_queries, 3);
        assert!((report.aggregate.correct_at[&1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn evaluate_rejects_disjoint_inputs() {
        let (run, _) = parse_run_str("q1 a 1 1 s\n", true).unwrap();
        let j = positives("q9", &["a"]);
        assert!(matches!(
            evaluate(&run, &j, &EvalOptions::default()),
            Err(MetricError::EmptyIntersection(_))
        ));
        assert!(matches!(
            evaluate(&run, &positives("q1", &["a"]), &EvalOptions::with_ks(&[])),
            Err(MetricError::NoCutoffs)
        ));
    }

    #[test]
    fn delta_of_identical_judgments_is_zero() {
        let (run, _) = parse_run_str("q1 a 1 1 s\nq1 b 2 0 s\n", true).unwrap();
        let j = positives("q1", &["b"]);
        let report = delta_report(&run, &j, &j, &[1, 2]).unwrap();
        assert!(report.rows.iter().all(|r| r.delta == 0.0));
        assert!(report.corrected_is_superset);
    }

    #[test]
    fn delta_half_the_queries_gain_rank_one() {
        let mut run_text = String::new();
        let mut original = String::new();
        let mut corrected = String::new();
        for i in 0..10 {
            run_text.push_str(&format!("q{i} top{i} 1 2 s\nq{i} orig{i} 2 1 s\n"));
            original.push_str(&format!("q{i} orig{i} 1 original\n"));
            corrected.push_str(&format!("q{i} orig{i} 1 original\n"));
            if i % 2 == 0 {
                corrected.push_str(&format!("q{i} top{i} 1 pooled:s\n"));
            }
        }
        let (run, _) = parse_run_str(&run_text, true).unwrap();
        let report = delta_report(
            &run,
            &parse_judgments_str(&original).unwrap(),
            &parse_judgments_str(&corrected).unwrap(),
            &[1],
        )
        .unwrap();
        let c1 = report.row("C@1").unwrap();
        assert_eq!((c1.corrected, c1.original, c1.delta), (0.5, 0.0, 0.5));
        assert_eq!(c1.original + c1.delta, c1.corrected);
    }

    #[test]
    fn exact_delta_reconstructs() {
        for (a, b) in [(0.674, 0.424), (0.241, 0.233), (0.2, 0.3), (1.0, 1e-17)] {
            let c = exact_delta(a, b);
            assert_eq!(b + c, a, "{a} {b}");
        }
        // aggregate metrics are ratios over the query count; binary64 cannot
        // always hit A exactly (round-half-even can skip it), but the miss is
        // within one ulp of the larger operand
        for n in [3usize, 7, 10, 97, 670, 1000] {
            for j in 0..=n {
                for i in (0..=n).step_by(n / 50 + 1) {
                    let (a, b) = (j as f64 / n as f64, i as f64 / n as f64);
                    let sum = b + exact_delta(a, b);
                    let ulp = a.max(b).next_up() - a.max(b);
                    assert!((sum - a).abs() <= ulp, "{j}/{n} vs {i}/{n}");
                }
            }
        }
    }

    #[test]
    fn table_cells_use_three_significant_figures() {
        let row = DeltaRow::new("C@1".into(), 0.674, 0.424);
        assert_eq!(row.table_cell(), "67.4 (42.4 + 25.0)%");
        let row = DeltaRow::new("C@1".into(), 0.241, 0.233);
        assert_eq!(row.table_cell(), "24.1 (23.3 + 0.800)%");
        let row = DeltaRow::new("AP".into(), 0.393, 0.392626);
        assert_eq!(row.table_cell(), "39.3 (39.3 + 0.0374)%");
        assert_eq!(sig_figs(99.96, 3), "100");
        assert_eq!(sig_figs(8.614, 3), "8.61");
        let row = DeltaRow::new("R@5".into(), 0.2, 0.3);
        assert_eq!(row.table_cell(), "20.0 (30.0 - 10.0)%");
    }
}
