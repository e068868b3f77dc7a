//! Queue, lease and label bookkeeping behind the HTTP layer.
//!
//! The append-only label log is the source of truth: on startup every
//! record is replayed through the same path a live submission takes, so
//! in-memory state is always a fold of the log.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, TimeDelta, Utc};
use pooljudge_core::agreement::agreement_rate;
use pooljudge_core::corpus::{
    merge_judgments, ItemId, JudgmentSet, MergePolicy, QueryId, RankedRun,
};
use pooljudge_core::metrics::{evaluate, EvalOptions, MetricError, MetricReport};
use pooljudge_core::pooling::{
    assignment_plan, pair_id, parse_label_log_str, resolve_labels, resolve_pair, Job, Label,
    LabelRecord, Pool, PoolingError, ResolutionStatus,
};
use serde::Serialize;
use thiserror::Error;

pub const DEFAULT_LEASE_SECS: i64 = 600;

pub const DEFAULT_GUIDELINES: &str = "\
Relevance
  Mark a video relevant only if every element mentioned in the query is \
reasonably present in it: the people, objects, actions and setting the \
caption names. Details the caption leaves out do not matter. If one named \
element is missing or contradicted, mark the video irrelevant.

People
  When the caption states a person's gender, take the caption's wording as \
given and do not second-guess it from appearance. Judge other personal \
attributes only when the caption names them.

Escalate
  Use escalate when the video does not play, or when the caption is too \
ambiguous to apply the rule above. Escalated pairs get no relevance label.
";

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Test clock that only moves when told to.
#[derive(Clone)]
pub struct ManualClock(Arc<Mutex<DateTime<Utc>>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(Arc::new(Mutex::new(start)))
    }

    pub fn advance(&self, by: TimeDelta) {
        *self.0.lock().unwrap() += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().unwrap()
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("rater_id must be non-empty")]
    MissingRater,
    #[error("no job {0}")]
    UnknownJob(String),
    #[error("job {0} is already closed")]
    JobClosed(String),
    #[error("job {0} is not leased to this rater")]
    LeaseMismatch(String),
    #[error("lease on job {0} has expired")]
    LeaseExpired(String),
    #[error("no run tagged {0}")]
    UnknownRun(String),
    #[error("no pair {0}")]
    UnknownPair(String),
    #[error("label log {path}: {source}")]
    Log {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Pooling(#[from] PoolingError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Corpus(#[from] pooljudge_core::corpus::CorpusError),
}

pub struct ServiceConfig {
    pub pool: Pool,
    pub double_label_fraction: f64,
    pub plan_seed: u64,
    pub captions: BTreeMap<QueryId, String>,
    /// `{item}` is replaced by the item id.
    pub media_uri_template: String,
    pub runs: Vec<RankedRun>,
    pub original: JudgmentSet,
    pub log_path: PathBuf,
    pub lease: TimeDelta,
    pub guidelines: String,
}

#[derive(Debug, Clone)]
enum JobStatus {
    Open,
    Leased { rater: String, until: DateTime<Utc> },
    Closed,
}

#[derive(Debug, Clone)]
struct JobSlot {
    job: Job,
    status: JobStatus,
}

#[derive(Debug, Default)]
struct PairState {
    labels: Vec<(String, Label)>,
    has_third: bool,
}

/// What a rater sees: no system attribution.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AnnotationJob {
    pub job_id: String,
    pub pair_id: String,
    pub query_id: QueryId,
    pub item_id: ItemId,
    pub caption: String,
    pub media_uri: String,
    pub pass: u8,
    pub lease_expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Progress {
    pub total_pairs: usize,
    pub resolved: usize,
    pub unresolved_pending: usize,
    pub escalated: usize,
    pub unlabeled: usize,
    pub open_jobs: usize,
    pub labels: usize,
    /// Unanimity among multiply-labeled pairs; `null` before any exist.
    pub agreement_so_far: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairLabel {
    pub rater_id: String,
    pub label: Label,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairJob {
    pub job_id: String,
    pub pass: u8,
    pub state: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairView {
    pub pair_id: String,
    pub query_id: QueryId,
    pub item_id: ItemId,
    pub caption: String,
    pub media_uri: String,
    pub status: &'static str,
    pub labels: Vec<PairLabel>,
    pub jobs: Vec<PairJob>,
}

struct Inner {
    /// Queue order: pass, then pool order within a pass.
    jobs: Vec<JobSlot>,
    by_id: BTreeMap<String, usize>,
    pairs: BTreeMap<String, PairState>,
    records: Vec<LabelRecord>,
    log: File,
}

pub struct AppState {
    config: ServiceConfig,
    clock: Box<dyn Clock>,
    inner: Mutex<Inner>,
}

fn status_name(labels: &[Label]) -> &'static str {
    if labels.is_empty() {
        return "unlabeled";
    }
    match resolve_pair(labels) {
        (ResolutionStatus::Resolved(_), _, _) => "resolved",
        (ResolutionStatus::Escalated, _, _) => "escalated",
        (ResolutionStatus::Unresolved, _, _) => "pending",
    }
}

impl Inner {
    fn push_job(&mut self, job: Job) {
        let at = self.jobs.partition_point(|s| s.job.pass <= job.pass);
        self.jobs.insert(
            at,
            JobSlot {
                job,
                status: JobStatus::Open,
            },
        );
        self.by_id = self
            .jobs
            .iter()
            .enumerate()
            .map(|(i, s)| (s.job.job_id.clone(), i))
            .collect();
    }

    /// Records a label against its pair and opens a third pass when the
    /// first two disagree.
    fn apply(&mut self, record: &LabelRecord) {
        let pid = record.pair_id();
        let pair = self.pairs.entry(pid).or_default();
        pair.labels.push((record.rater_id.clone(), record.label));
        let labels: Vec<Label> = pair.labels.iter().map(|(_, l)| *l).collect();
        let (_, _, awaiting_third) = resolve_pair(&labels);
        if awaiting_third && !pair.has_third {
            pair.has_third = true;
            let mut job = Job::new(record.query.clone(), record.item.clone(), 3);
            job.excluded_raters = pair.labels.iter().map(|(r, _)| r.clone()).collect();
            self.push_job(job);
        }
        self.records.push(record.clone());
    }

    fn raters_of(&self, pid: &str) -> BTreeSet<&str> {
        self.pairs
            .get(pid)
            .map(|p| p.labels.iter().map(|(r, _)| r.as_str()).collect())
            .unwrap_or_default()
    }
}

impl AppState {
    /// Builds the job plan, opens (or creates) the label log and replays it.
    pub fn open(config: ServiceConfig, clock: Box<dyn Clock>) -> Result<Self, ServiceError> {
        let plan = assignment_plan(&config.pool, config.double_label_fraction, config.plan_seed)?;
        let log_err = |source| ServiceError::Log {
            path: config.log_path.clone(),
            source,
        };
        let existing = match std::fs::read_to_string(&config.log_path) {
            Ok(text) => parse_label_log_str(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(log_err(e)),
        };
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&config.log_path)
            .map_err(log_err)?;
        let mut inner = Inner {
            jobs: Vec::new(),
            by_id: BTreeMap::new(),
            pairs: config
                .pool
                .pairs()
                .iter()
                .map(|p| (pair_id(&p.query, &p.item), PairState::default()))
                .collect(),
            records: Vec::new(),
            log,
        };
        inner.jobs = plan
            .into_iter()
            .map(|job| JobSlot {
                job,
                status: JobStatus::Open,
            })
            .collect();
        inner.jobs.sort_by_key(|s| s.job.pass);
        inner.by_id = inner
            .jobs
            .iter()
            .enumerate()
            .map(|(i, s)| (s.job.job_id.clone(), i))
            .collect();

        let mut foreign = 0;
        for record in &existing {
            let pid = record.pair_id();
            if !inner.pairs.contains_key(&pid) {
                foreign += 1;
            }
            // close the lowest-pass open job of this pair
            if let Some(slot) = inner.jobs.iter_mut().find(|s| {
                matches!(s.status, JobStatus::Open)
                    && s.job.query_id == record.query
                    && s.job.item_id == record.item
            }) {
                slot.status = JobStatus::Closed;
            }
            inner.apply(record);
        }
        if foreign > 0 {
            log::warn!("{foreign} logged record(s) reference pairs outside the pool");
        }
        log::info!(
            "replayed {} label record(s) from {}",
            existing.len(),
            config.log_path.display()
        );
        Ok(Self {
            config,
            clock,
            inner: Mutex::new(inner),
        })
    }

    pub fn guidelines(&self) -> &str {
        &self.config.guidelines
    }

    pub fn log_path(&self) -> &Path {
        &self.config.log_path
    }

    fn media_uri(&self, item: &ItemId) -> String {
        self.config
            .media_uri_template
            .replace("{item}", item.as_str())
    }

    fn caption(&self, q: &QueryId) -> String {
        self.config.captions.get(q).cloned().unwrap_or_default()
    }

    fn view(&self, job: &Job, until: DateTime<Utc>) -> AnnotationJob {
        AnnotationJob {
            job_id: job.job_id.clone(),
            pair_id: pair_id(&job.query_id, &job.item_id),
            query_id: job.query_id.clone(),
            item_id: job.item_id.clone(),
            caption: self.caption(&job.query_id),
            media_uri: self.media_uri(&job.item_id),
            pass: job.pass,
            lease_expires_at: until,
        }
    }

    /// Leases the lowest-pass job this rater may take. A rater who already
    /// holds a live lease gets that job back.
    pub fn next_job(&self, rater: &str) -> Result<Option<AnnotationJob>, ServiceError> {
        if rater.trim().is_empty() {
            return Err(ServiceError::MissingRater);
        }
        let now = self.clock.now();
        let mut inner = self.inner.lock().unwrap();
        for slot in &inner.jobs {
            if let JobStatus::Leased { rater: r, until } = &slot.status {
                if r == rater && *until > now {
                    return Ok(Some(self.view(&slot.job, *until)));
                }
            }
        }
        let pick = inner.jobs.iter().position(|slot| {
            let free = match &slot.status {
                JobStatus::Open => true,
                JobStatus::Leased { until, .. } => *until <= now,
                JobStatus::Closed => false,
            };
            free && !slot.job.excluded_raters.contains(rater)
                && !inner
                    .raters_of(&pair_id(&slot.job.query_id, &slot.job.item_id))
                    .contains(rater)
        });
        let Some(idx) = pick else { return Ok(None) };
        let until = now + self.config.lease;
        inner.jobs[idx].status = JobStatus::Leased {
            rater: rater.to_string(),
            until,
        };
        Ok(Some(self.view(&inner.jobs[idx].job, until)))
    }

    /// Appends the label durably, then closes the job.
    pub fn submit(
        &self,
        job_id: &str,
        rater: &str,
        label: Label,
    ) -> Result<LabelRecord, ServiceError> {
        if rater.trim().is_empty() {
            return Err(ServiceError::MissingRater);
        }
        let now = self.clock.now();
        let mut inner = self.inner.lock().unwrap();
        let idx = *inner
            .by_id
            .get(job_id)
            .ok_or_else(|| ServiceError::UnknownJob(job_id.to_string()))?;
        match &inner.jobs[idx].status {
            JobStatus::Closed => return Err(ServiceError::JobClosed(job_id.to_string())),
            JobStatus::Open => return Err(ServiceError::LeaseMismatch(job_id.to_string())),
            JobStatus::Leased { rater: r, until } => {
                if r != rater {
                    return Err(ServiceError::LeaseMismatch(job_id.to_string()));
                }
                if *until <= now {
                    inner.jobs[idx].status = JobStatus::Open;
                    return Err(ServiceError::LeaseExpired(job_id.to_string()));
                }
            }
        }
        let job = inner.jobs[idx].job.clone();
        let record = LabelRecord::new(job.query_id, job.item_id, rater, label, now);
        let line = record.to_json_line();
        let log_err = |source| ServiceError::Log {
            path: self.config.log_path.clone(),
            source,
        };
        inner.log.write_all(line.as_bytes()).map_err(log_err)?;
        inner.log.flush().map_err(log_err)?;
        inner.log.sync_data().map_err(log_err)?;
        inner.jobs[idx].status = JobStatus::Closed;
        inner.apply(&record);
        Ok(record)
    }

    pub fn progress(&self) -> Progress {
        let inner = self.inner.lock().unwrap();
        let mut p = Progress {
            total_pairs: self.config.pool.len(),
            resolved: 0,
            unresolved_pending: 0,
            escalated: 0,
            unlabeled: 0,
            open_jobs: inner
                .jobs
                .iter()
                .filter(|s| !matches!(s.status, JobStatus::Closed))
                .count(),
            labels: inner.records.len(),
            agreement_so_far: agreement_rate(&inner.records).agreement_rate,
        };
        for pp in self.config.pool.pairs() {
            let labels: Vec<Label> = inner
                .pairs
                .get(&pair_id(&pp.query, &pp.item))
                .map(|s| s.labels.iter().map(|(_, l)| *l).collect())
                .unwrap_or_default();
            match status_name(&labels) {
                "resolved" => p.resolved += 1,
                "escalated" => p.escalated += 1,
                "pending" => p.unresolved_pending += 1,
                _ => p.unlabeled += 1,
            }
        }
        p
    }

    /// Original labels plus every pooled label resolved so far.
    pub fn current_judgments(&self) -> Result<JudgmentSet, ServiceError> {
        let records = self.inner.lock().unwrap().records.clone();
        let resolved = self
            .config
            .pool
            .attribute(&resolve_labels(&records).judgments);
        Ok(merge_judgments(
            &self.config.original,
            &resolved,
            MergePolicy::RelevantWins,
        )?)
    }

    pub fn metrics(&self, run: &str, ks: &[usize]) -> Result<MetricReport, ServiceError> {
        let run = self
            .config
            .runs
            .iter()
            .find(|r| r.system() == run)
            .ok_or_else(|| ServiceError::UnknownRun(run.to_string()))?;
        let judgments = self.current_judgments()?;
        Ok(evaluate(
            run,
            &judgments,
            &EvalOptions::with_ks(ks).tagged("live"),
        )?)
    }

    pub fn pair(&self, pid: &str) -> Result<PairView, ServiceError> {
        let pp = self
            .config
            .pool
            .pairs()
            .iter()
            .find(|p| pair_id(&p.query, &p.item) == pid)
            .ok_or_else(|| ServiceError::UnknownPair(pid.to_string()))?;
        let inner = self.inner.lock().unwrap();
        let labels: Vec<(String, Label)> = inner
            .pairs
            .get(pid)
            .map(|s| s.labels.clone())
            .unwrap_or_default();
        let plain: Vec<Label> = labels.iter().map(|(_, l)| *l).collect();
        let jobs = inner
            .jobs
            .iter()
            .filter(|s| s.job.query_id == pp.query && s.job.item_id == pp.item)
            .map(|s| PairJob {
                job_id: s.job.job_id.clone(),
                pass: s.job.pass,
                state: match s.status {
                    JobStatus::Open => "open",
                    JobStatus::Leased { .. } => "leased",
                    JobStatus::Closed => "closed",
                },
            })
            .collect();
        Ok(PairView {
            pair_id: pid.to_string(),
            query_id: pp.query.clone(),
            item_id: pp.item.clone(),
            caption: self.caption(&pp.query),
            media_uri: self.media_uri(&pp.item),
            status: status_name(&plain),
            labels: labels
                .into_iter()
                .map(|(rater_id, label)| PairLabel { rater_id, label })
                .collect(),
            jobs,
        })
    }

    /// The label log exactly as persisted.
    pub fn export_log(&self) -> Result<String, ServiceError> {
        let _guard = self.inner.lock().unwrap();
        std::fs::read_to_string(&self.config.log_path).map_err(|source| ServiceError::Log {
            path: self.config.log_path.clone(),
            source,
        })
    }
}
