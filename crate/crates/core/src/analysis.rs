//! Diagnostics over runs and judgments: prediction overlap between systems,
//! leave-one-system-out pooling bias, and count/rank/length distributions.

use std::collections::HashSet;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    merge_judgments, CorpusError, JudgmentSet, MergePolicy, Query, QueryId, RankedRun, Source,
    Split,
};
use crate::metrics::{evaluate, EvalOptions, MetricError, MetricReport};
use crate::textsim::{char_length, word_length};

pub const DEFAULT_RBO_PERSISTENCE: f64 = 0.9;
pub const DEFAULT_OVERLAP_DEPTH: usize = 10;
pub const CHAR_LENGTH_BIN: u64 = 20;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("depth must be at least 1")]
    InvalidDepth,
    #[error("persistence p = {0} must lie strictly between 0 and 1")]
    InvalidPersistence(f64),
    #[error("no run tagged {0}")]
    UnknownSystem(String),
    #[error("pooled label for query {query} item {item} carries no system attribution")]
    MissingProvenance { query: String, item: String },
    #[error("overlap needs at least two runs")]
    TooFewRuns,
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

// ---------------------------------------------------------------------------
// Overlap
// ---------------------------------------------------------------------------

/// `|top-d(a) ∩ top-d(b)|` for `d = 1..=depth`, using whatever prefix each
/// list has when it is shorter than `d`.
fn overlap_profile<T: Eq + Hash>(a: &[T], b: &[T], depth: usize) -> Vec<usize> {
    let mut seen_a = HashSet::with_capacity(depth);
    let mut seen_b = HashSet::with_capacity(depth);
    let mut shared = 0;
    let mut out = Vec::with_capacity(depth);
    for d in 0..depth {
        let x = a.get(d);
        let y = b.get(d);
        match (x, y) {
            (Some(x), Some(y)) if x == y => shared += 1,
            _ => {
                if let Some(x) = x {
                    if seen_b.contains(x) {
                        shared += 1;
                    }
                }
                if let Some(y) = y {
                    if seen_a.contains(y) {
                        shared += 1;
                    }
                }
            }
        }
        if let Some(x) = x {
            seen_a.insert(x);
        }
        if let Some(y) = y {
            seen_b.insert(y);
        }
        out.push(shared);
    }
    out
}

fn check_depth(a_len: usize, b_len: usize, depth: usize) -> Result<(), AnalysisError> {
    if depth == 0 {
        return Err(AnalysisError::InvalidDepth);
    }
    if a_len < depth || b_len < depth {
        log::warn!("list shorter than depth {depth}; scoring the available prefix");
    }
    Ok(())
}

/// `|top-D(a) ∩ top-D(b)| / D`.
pub fn plain_overlap<T: Eq + Hash>(a: &[T], b: &[T], depth: usize) -> Result<f64, AnalysisError> {
    check_depth(a.len(), b.len(), depth)?;
    let shared = *overlap_profile(a, b, depth).last().expect("depth >= 1");
    Ok(shared as f64 / depth as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RboVariant {
    /// Prefix sum plus the depth-D agreement carried to infinity.
    #[default]
    Extrapolated,
    /// Prefix sum only; a lower bound on the full measure.
    Truncated,
}

/// Rank-biased overlap of two prefixes at `depth` with persistence `p`.
pub fn rbo_with<T: Eq + Hash>(
    a: &[T],
    b: &[T],
    p: f64,
    depth: usize,
    variant: RboVariant,
) -> Result<f64, AnalysisError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(AnalysisError::InvalidPersistence(p));
    }
    check_depth(a.len(), b.len(), depth)?;
    let agreement: Vec<f64> = overlap_profile(a, b, depth)
        .into_iter()
        .enumerate()
        .map(|(d, x)| x as f64 / (d + 1) as f64)
        .collect();
    let last = agreement[depth - 1];
    let value = match variant {
        // (1-p) Σ p^{d-1} A_d + p^D A_D, rewritten as
        // A_D + (1-p) Σ p^{d-1} (A_d - A_D) so that constant agreement
        // evaluates to exactly that constant
        RboVariant::Extrapolated => {
            let mut weight = 1.0;
            let mut sum = 0.0;
            for &ad in &agreement {
                sum += weight * (ad - last);
                weight *= p;
            }
            last + (1.0 - p) * sum
        }
        RboVariant::Truncated => {
            let mut weight = 1.0;
            let mut sum = 0.0;
            for &ad in &agreement {
                sum += weight * ad;
                weight *= p;
            }
            (1.0 - p) * sum
        }
    };
    Ok(value.clamp(0.0, 1.0))
}

/// Extrapolated rank-biased overlap.
pub fn rbo<T: Eq + Hash>(a: &[T], b: &[T], p: f64, depth: usize) -> Result<f64, AnalysisError> {
    rbo_with(a, b, p, depth, RboVariant::Extrapolated)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOverlap {
    pub query: QueryId,
    pub overlap: f64,
    pub rbo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemPairOverlap {
    pub system_a: String,
    pub system_b: String,
    pub num_queries: usize,
    pub mean_overlap: f64,
    pub mean_rbo: f64,
    /// Queries where either list was shorter than the depth.
    pub short_lists: usize,
    pub per_query: Vec<QueryOverlap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub depth: usize,
    pub persistence: f64,
    pub variant: RboVariant,
    pub pairs: Vec<SystemPairOverlap>,
}

/// Per-query overlap and RBO for every pair of runs, averaged over the
/// queries both runs answer.
pub fn overlap_report(
    runs: &[RankedRun],
    depth: usize,
    p: f64,
    variant: RboVariant,
) -> Result<OverlapReport, AnalysisError> {
    if runs.len() < 2 {
        return Err(AnalysisError::TooFewRuns);
    }
    if depth == 0 {
        return Err(AnalysisError::InvalidDepth);
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(AnalysisError::InvalidPersistence(p));
    }
    let mut pairs = Vec::new();
    for (ia, a) in runs.iter().enumerate() {
        for b in &runs[ia + 1..] {
            let mut per_query = Vec::new();
            let mut short = 0;
            for (q, la) in a.lists() {
                let Some(lb) = b.list(q) else { continue };
                let (xa, xb) = (la.items(), lb.items());
                if xa.len() < depth || xb.len() < depth {
                    short += 1;
                }
                let shared = *overlap_profile(xa, xb, depth).last().unwrap();
                per_query.push(QueryOverlap {
                    query: q.clone(),
                    overlap: shared as f64 / depth as f64,
                    rbo: rbo_with(xa, xb, p, depth, variant)?,
                });
            }
            let n = per_query.len();
            let mean = |f: fn(&QueryOverlap) -> f64| {
                if n == 0 {
                    0.0
                } else {
                    per_query.iter().map(f).sum::<f64>() / n as f64
                }
            };
            pairs.push(SystemPairOverlap {
                system_a: a.system().to_string(),
                system_b: b.system().to_string(),
                num_queries: n,
                mean_overlap: mean(|o| o.overlap),
                mean_rbo: mean(|o| o.rbo),
                short_lists: short,
                per_query,
            });
        }
    }
    Ok(OverlapReport {
        depth,
        persistence: p,
        variant,
        pairs,
    })
}

impl OverlapReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("system_a,system_b,queries,overlap,rbo\n");
        for p in &self.pairs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.system_a, p.system_b, p.num_queries, p.mean_overlap, p.mean_rbo
            ));
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "depth {} p {} ({:?})\n{:<28} {:>8} {:>8}\n",
            self.depth, self.persistence, self.variant, "systems", "overlap", "rbo"
        );
        for p in &self.pairs {
            out.push_str(&format!(
                "{:<28} {:>8.4} {:>8.4}\n",
                format!("{} & {}", p.system_a, p.system_b),
                p.mean_overlap,
                p.mean_rbo
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Leave-one-system-out
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub system: String,
    /// Original plus every pooled label.
    pub all: MetricReport,
    /// Original plus pooled labels some other system also surfaced.
    pub new: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub ks: Vec<usize>,
    pub entries: Vec<AblationEntry>,
}

fn check_provenance(pooled: &JudgmentSet) -> Result<(), AnalysisError> {
    for (q, i, j) in pooled.iter() {
        match &j.source {
            Source::Pooled(systems) if !systems.is_empty() => {}
            _ => {
                return Err(AnalysisError::MissingProvenance {
                    query: q.to_string(),
                    item: i.to_string(),
                })
            }
        }
    }
    Ok(())
}

/// Judgments as they would look had `target` never been pooled.
pub fn judgments_without(
    original: &JudgmentSet,
    pooled: &JudgmentSet,
    target: &str,
) -> Result<JudgmentSet, AnalysisError> {
    check_provenance(pooled)?;
    let others = pooled.filtered(|_, _, j| match &j.source {
        Source::Pooled(systems) => systems.iter().any(|s| s != target),
        _ => false,
    });
    Ok(merge_judgments(
        original,
        &others,
        MergePolicy::RelevantWins,
    )?)
}

/// Scores `target` with all pooled labels and with only those attributable
/// to other systems.
pub fn leave_one_out(
    runs: &[RankedRun],
    original: &JudgmentSet,
    pooled: &JudgmentSet,
    target: &str,
    ks: &[usize],
) -> Result<AblationEntry, AnalysisError> {
    let run = runs
        .iter()
        .find(|r| r.system() == target)
        .ok_or_else(|| AnalysisError::UnknownSystem(target.to_string()))?;
    check_provenance(pooled)?;
    let all = merge_judgments(original, pooled, MergePolicy::RelevantWins)?;
    let new = judgments_without(original, pooled, target)?;
    let opts = EvalOptions::with_ks(ks);
    Ok(AblationEntry {
        system: target.to_string(),
        all: evaluate(run, &all, &opts.clone().tagged("all"))?,
        new: evaluate(run, &new, &opts.tagged("new"))?,
    })
}

/// [`leave_one_out`] for every run in order.
pub fn ablation_report(
    runs: &[RankedRun],
    original: &JudgmentSet,
    pooled: &JudgmentSet,
    ks: &[usize],
) -> Result<AblationReport, AnalysisError> {
    let entries = runs
        .iter()
        .map(|r| leave_one_out(runs, original, pooled, r.system(), ks))
        .collect::<Result<Vec<_>, _>>()?;
    let ks = entries
        .first()
        .map(|e| e.all.ks.clone())
        .unwrap_or_else(|| ks.to_vec());
    Ok(AblationReport { ks, entries })
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("system,data,metric,value\n");
        for e in &self.entries {
            for (data, report) in [("all", &e.all), ("new", &e.new)] {
                for (name, value) in report.aggregate_rows() {
                    let value = value.map(|v| v.to_string()).unwrap_or_default();
                    out.push_str(&format!("{},{data},{name},{value}\n", e.system));
                }
            }
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<16} {:<5}", "system", "data");
        for k in &self.ks {
            out.push_str(&format!(" {:>7}", format!("C@{k}")));
        }
        out.push('\n');
        for e in &self.entries {
            for (data, report) in [("All", &e.all), ("New", &e.new)] {
                out.push_str(&format!("{:<16} {data:<5}", e.system));
                for v in report.aggregate.correct_at.values() {
                    out.push_str(&format!(" {v:>7.3}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Distributions
// ---------------------------------------------------------------------------

/// Contiguous equal-width bins; bin `i` covers `[start + i*width, start + (i+1)*width)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub start: u64,
    pub width: u64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Bins starting at the smallest value rounded down to a multiple of
    /// `width`, ending at the bin holding the largest value.
    pub fn from_values(values: &[u64], width: u64) -> Self {
        assert!(width > 0, "bin width must be positive");
        let (Some(&min), Some(&max)) = (values.iter().min(), values.iter().max()) else {
            return Self {
                start: 0,
                width,
                counts: Vec::new(),
            };
        };
        Self::with_range(values, width, min / width * width, max)
    }

    fn with_range(values: &[u64], width: u64, start: u64, max: u64) -> Self {
        let bins = if max < start {
            0
        } else {
            ((max - start) / width + 1) as usize
        };
        let mut counts = vec![0; bins];
        for &v in values {
            counts[((v - start) / width) as usize] += 1;
        }
        Self {
            start,
            width,
            counts,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_of(&self, value: u64) -> Option<usize> {
        let idx = (value.checked_sub(self.start)? / self.width) as usize;
        (idx < self.counts.len()).then_some(idx)
    }

    pub fn count_at(&self, value: u64) -> u64 {
        self.bin_of(value).map_or(0, |i| self.counts[i])
    }

    pub fn bins(&self) -> impl Iterator<Item = (u64, u64, u64)> + '_ {
        self.counts.iter().enumerate().map(move |(i, &c)| {
            let lo = self.start + i as u64 * self.width;
            (lo, lo + self.width, c)
        })
    }
}

/// Caption length (words) against number of known positives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointHistogram {
    pub rows: Histogram,
    pub cols: Histogram,
    pub counts: Vec<Vec<u64>>,
    /// `log10(count / population)` per cell; `None` for empty cells.
    pub log10_density: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankHistograms {
    pub system: String,
    /// Positives labeled by the original benchmark (or merged with it).
    pub original: Histogram,
    /// Positives found only through pooling.
    pub pooled: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    /// Number of queries in the population.
    pub population: usize,
    pub positives_per_query: Histogram,
    pub positive_ranks: Vec<RankHistograms>,
    pub word_length: Option<Histogram>,
    pub char_length: Option<Histogram>,
    pub length_vs_positives: Option<JointHistogram>,
}

fn word_count(text: &str) -> u64 {
    word_length(text) as u64
}

fn char_count(text: &str) -> u64 {
    char_length(text) as u64
}

/// Population: the test-split queries when `queries` is given, otherwise
/// every judged query. Length histograms need `queries`.
pub fn distributions(
    runs: &[RankedRun],
    judgments: &JudgmentSet,
    queries: Option<&[Query]>,
) -> DistributionReport {
    let population: Vec<(&QueryId, Option<&str>)> = match queries {
        Some(qs) => qs
            .iter()
            .filter(|q| q.split == Split::Test)
            .map(|q| (&q.id, Some(q.text.as_str())))
            .collect(),
        None => judgments.queries().map(|q| (q, None)).collect(),
    };
    let positives: Vec<u64> = population
        .iter()
        .map(|(q, _)| judgments.num_relevant(q) as u64)
        .collect();
    let positives_hist = Histogram::from_values(&positives, 1);

    let positive_ranks = runs
        .iter()
        .map(|run| {
            let mut original = Vec::new();
            let mut pooled = Vec::new();
            for (q, list) in run.lists() {
                for (pos, item) in list.items().iter().enumerate() {
                    let Some(j) = judgments.get(q, item) else {
                        continue;
                    };
                    if !j.relevance.is_relevant() {
                        continue;
                    }
                    match j.source {
                        Source::Pooled(_) => pooled.push(pos as u64 + 1),
                        _ => original.push(pos as u64 + 1),
                    }
                }
            }
            let max = original.iter().chain(&pooled).copied().max().unwrap_or(0);
            RankHistograms {
                system: run.system().to_string(),
                original: Histogram::with_range(&original, 1, 1, max),
                pooled: Histogram::with_range(&pooled, 1, 1, max),
            }
        })
        .collect();

    let (word_length, char_length, joint) = if queries.is_some() {
        let words: Vec<u64> = population
            .iter()
            .map(|(_, t)| word_count(t.unwrap_or_default()))
            .collect();
        let chars: Vec<u64> = population
            .iter()
            .map(|(_, t)| char_count(t.unwrap_or_default()))
            .collect();
        let word_hist = Histogram::from_values(&words, 1);
        let joint = joint_histogram(&word_hist, &positives_hist, &words, &positives);
        (
            Some(word_hist),
            Some(Histogram::from_values(&chars, CHAR_LENGTH_BIN)),
            Some(joint),
        )
    } else {
        (None, None, None)
    };

    DistributionReport {
        population: population.len(),
        positives_per_query: positives_hist,
        positive_ranks,
        word_length,
        char_length,
        length_vs_positives: joint,
    }
}

fn joint_histogram(rows: &Histogram, cols: &Histogram, rv: &[u64], cv: &[u64]) -> JointHistogram {
    let mut counts = vec![vec![0u64; cols.counts.len()]; rows.counts.len()];
    for (&r, &c) in rv.iter().zip(cv) {
        let (Some(ri), Some(ci)) = (rows.bin_of(r), cols.bin_of(c)) else {
            continue;
        };
        counts[ri][ci] += 1;
    }
    let total = rv.len() as f64;
    let log10_density = counts
        .iter()
        .map(|row| {
            row.iter()
                .map(|&c| (c > 0).then(|| (c as f64 / total).log10()))
                .collect()
        })
        .collect();
    JointHistogram {
        rows: rows.clone(),
        cols: cols.clone(),
        counts,
        log10_density,
    }
}

impl DistributionReport {
    /// Plot data: `histogram,bin_lo,bin_hi,count` for every 1-D histogram.
    pub fn to_plot_csv(&self) -> String {
        let mut out = String::from("histogram,bin_lo,bin_hi,count\n");
        let mut emit = |name: &str, h: &Histogram| {
            for (lo, hi, c) in h.bins() {
                out.push_str(&format!("{name},{lo},{hi},{c}\n"));
            }
        };
        emit("positives_per_query", &self.positives_per_query);
        for r in &self.positive_ranks {
            emit(&format!("positive_rank:{}:original", r.system), &r.original);
            emit(&format!("positive_rank:{}:pooled", r.system), &r.pooled);
        }
        if let Some(h) = &self.word_length {
            emit("word_length", h);
        }
        if let Some(h) = &self.char_length {
            emit("char_length", h);
        }
        out
    }

    /// `words_lo,positives,count,log10_density` for non-empty joint cells.
    pub fn joint_csv(&self) -> Option<String> {
        let joint = self.length_vs_positives.as_ref()?;
        let mut out = String::from("words,positives,count,log10_density\n");
        for (ri, row) in joint.counts.iter().enumerate() {
            for (ci, &c) in row.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                let words = joint.rows.start + ri as u64 * joint.rows.width;
                let pos = joint.cols.start + ci as u64 * joint.cols.width;
                let density = joint.log10_density[ri][ci].unwrap_or(f64::NEG_INFINITY);
                out.push_str(&format!("{words},{pos},{c},{density}\n"));
            }
        }
        Some(out)
    }

    pub fn table(&self) -> String {
        let mut out = format!("queries: {}\npositives per query:\n", self.population);
        for (lo, _, c) in self.positives_per_query.bins() {
            if c > 0 {
                out.push_str(&format!("  {lo:>4}: {c}\n"));
            }
        }
        for r in &self.positive_ranks {
            out.push_str(&format!(
                "positive ranks for {}: {} original, {} pooled\n",
                r.system,
                r.original.total(),
                r.pooled.total()
            ));
        }
        out
    }
}
