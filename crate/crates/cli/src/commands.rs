use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use pooljudge_core::agreement::agreement_report;
use pooljudge_core::analysis::{
    ablation_report, distributions, leave_one_out, overlap_report, AblationReport, RboVariant,
};
use pooljudge_core::corpus::{
    merge_judgments, parse_items_str, parse_judgments, parse_queries, parse_run_str,
    write_judgments, write_run, Collection, JudgmentSet, MergePolicy, Query, RankedRun, Split,
};
use pooljudge_core::metrics::{delta_report, evaluate, EvalOptions, MetricReport, QueryMetrics};
use pooljudge_core::pooling::{
    assignment_plan, build_pool, parse_label_log_str, resolve_labels, Pool,
};
use pooljudge_core::stats::{bootstrap_deviation, RNG_ALGORITHM};
use pooljudge_core::textsim::{fit_encoder, length_similarity_correlation, similarity_profile};
use pooljudge_service::{AppState, ServiceConfig, SystemClock, DEFAULT_GUIDELINES};
use serde_json::json;

use crate::output::{
    concat_csv, default_prefix, emit, read, to_json, with_suffix, write, CliError, OutputArgs,
    Report,
};
use crate::{
    AblateArgs, AgreementArgs, BootstrapArgs, DeltaArgs, DistArgs, EvalArgs, OverlapArgs, PlanArgs,
    PoolArgs, ResolveArgs, ServeArgs, TextsimArgs,
};

type Result<T> = std::result::Result<T, CliError>;

fn load_run(path: &Path, lenient: bool) -> Result<RankedRun> {
    let text = read(path)?;
    let (run, warnings) = parse_run_str(&text, !lenient)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(run)
}

fn load_runs(paths: &[PathBuf], lenient: bool) -> Result<Vec<RankedRun>> {
    let runs: Vec<RankedRun> = paths
        .iter()
        .map(|p| load_run(p, lenient))
        .collect::<Result<_>>()?;
    let mut seen = std::collections::BTreeSet::new();
    for r in &runs {
        if !seen.insert(r.system()) {
            return Err(CliError::Validation(format!(
                "two runs share the tag {:?}",
                r.system()
            )));
        }
    }
    Ok(runs)
}

fn load_judgments(path: &Path) -> Result<JudgmentSet> {
    parse_judgments(path).map_err(|e| {
        if e.is_io() {
            e.into()
        } else {
            CliError::Validation(format!("{}: {e}", path.display()))
        }
    })
}

/// Loads and merges relevance files, relevant labels winning conflicts.
fn load_merged(paths: &[PathBuf]) -> Result<JudgmentSet> {
    let mut merged = JudgmentSet::new();
    for p in paths {
        merged = merge_judgments(&merged, &load_judgments(p)?, MergePolicy::RelevantWins)?;
    }
    Ok(merged)
}

fn load_queries(path: &Path) -> Result<Vec<Query>> {
    parse_queries(path).map_err(|e| {
        if e.is_io() {
            e.into()
        } else {
            CliError::Validation(format!("{}: {e}", path.display()))
        }
    })
}

fn file_tag(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| {
            p.file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned()
        })
        .collect::<Vec<_>>()
        .join("+")
}

fn load_pool(path: &Path) -> Result<Pool> {
    serde_json::from_str(&read(path)?)
        .map_err(|e| CliError::Validation(format!("{}: not a pool file: {e}", path.display())))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let runs = load_runs(&a.run, a.lenient)?;
    let judgments = load_merged(&a.qrels)?;
    if let Some(items_path) = &a.items {
        let items = parse_items_str(&read(items_path)?)?;
        let queries = match &a.queries {
            Some(p) => load_queries(p)?,
            None => Vec::new(),
        };
        let collection = Collection::new(items, queries);
        collection.check_judgments(&judgments)?;
        for r in &runs {
            collection.check_run(r)?;
        }
    }
    let mut opts = EvalOptions::with_ks(&a.k).tagged(file_tag(&a.qrels));
    opts.zero_positive = a.zero_positive.into();
    let reports: Vec<MetricReport> = runs
        .iter()
        .map(|r| evaluate(r, &judgments, &opts))
        .collect::<std::result::Result<_, _>>()?;

    let prefix_for = |idx: usize, report: &MetricReport| match (&a.out.out, reports.len()) {
        (Some(p), 1) => p.clone(),
        (Some(p), _) => with_suffix(p, &format!(".{}", report.system)),
        (None, _) => default_prefix(&a.run[idx], "metrics"),
    };
    if !a.out.no_files {
        for (idx, report) in reports.iter().enumerate() {
            let prefix = prefix_for(idx, report);
            write(&with_suffix(&prefix, ".csv"), &report.to_csv())?;
            write(&with_suffix(&prefix, ".json"), &to_json(report))?;
            if a.per_query {
                write(
                    &with_suffix(&prefix, ".per_query.csv"),
                    &report.per_query_csv(),
                )?;
            }
        }
    }
    let combined = Report {
        csv: concat_csv(&reports.iter().map(|r| r.to_csv()).collect::<Vec<_>>()),
        json: if reports.len() == 1 {
            to_json(&reports[0])
        } else {
            to_json(&reports)
        },
        table: reports
            .iter()
            .map(|r| r.table())
            .collect::<Vec<_>>()
            .join("\n"),
    };
    let print_only = OutputArgs {
        no_files: true,
        ..a.out
    };
    emit(&print_only, PathBuf::new(), &combined)
}

pub fn delta(a: DeltaArgs) -> Result<()> {
    let run = load_run(&a.run, a.lenient)?;
    let original = load_merged(&a.original)?;
    let corrected = load_merged(&a.corrected)?;
    let report = delta_report(&run, &original, &corrected, &a.k)?;
    emit(
        &a.out,
        default_prefix(&a.run, "delta"),
        &Report::new(report.to_csv(), &report, report.table()),
    )
}

pub fn pool(a: PoolArgs) -> Result<()> {
    let runs = load_runs(&a.run, a.lenient)?;
    let seed = load_merged(&a.seed_qrels)?;
    let (pool, warnings) = build_pool(&runs, &seed, a.depth)?;
    for w in warnings {
        log::warn!("{w}");
    }
    let prefix = a
        .out
        .out
        .clone()
        .unwrap_or_else(|| default_prefix(&a.run[0], "pool"));
    let mut csv = String::from("query_id,item_id,systems\n");
    for p in pool.pairs() {
        let systems: Vec<&str> = p.systems.iter().map(String::as_str).collect();
        csv.push_str(&format!("{},{},{}\n", p.query, p.item, systems.join(" ")));
    }
    let queries = pool
        .pairs()
        .iter()
        .map(|p| &p.query)
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    let table = format!(
        "pool of {} pairs over {queries} queries from {} runs at depth {} ({} already judged)\n",
        pool.len(),
        runs.len(),
        pool.depth,
        pool.excluded
    );
    if !a.out.no_files {
        write(&with_suffix(&prefix, ".run"), &write_run(&pool.to_run()))?;
    }
    emit(&a.out, prefix, &Report::new(csv, &pool, table))
}

pub fn plan(a: PlanArgs) -> Result<()> {
    let pool = load_pool(&a.pool)?;
    let jobs = assignment_plan(&pool, a.fraction, a.seed)?;
    let mut csv = String::from("job_id,query_id,item_id,pass\n");
    for j in &jobs {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            j.job_id, j.query_id, j.item_id, j.pass
        ));
    }
    let second = jobs.iter().filter(|j| j.pass == 2).count();
    let table = format!(
        "{} jobs: {} first labels, {second} second labels (seed {})\n",
        jobs.len(),
        jobs.len() - second,
        a.seed
    );
    emit(
        &a.out,
        default_prefix(&a.pool, "plan"),
        &Report::new(csv, &jobs, table),
    )
}

fn load_log(path: &Path) -> Result<Vec<pooljudge_core::pooling::LabelRecord>> {
    parse_label_log_str(&read(path)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn resolve(a: ResolveArgs) -> Result<()> {
    let records = load_log(&a.log)?;
    let resolution = resolve_labels(&records);
    for w in &resolution.warnings {
        log::warn!("{w}");
    }
    let judgments = match &a.pool {
        Some(p) => load_pool(p)?.attribute(&resolution.judgments),
        None => resolution.judgments.clone(),
    };
    let prefix = a
        .out
        .out
        .clone()
        .unwrap_or_else(|| default_prefix(&a.log, "resolved"));
    let summary = json!({
        "labels": records.len(),
        "pairs": resolution.outcomes.len(),
        "resolved": resolution.resolved(),
        "unresolved": resolution.unresolved(),
        "pending_third_label": resolution.pending.len(),
        "escalated": resolution.escalated(),
        "relevant": judgments.num_relevant_total(),
        "pending": resolution.pending,
    });
    let table = format!(
        "{} labels on {} pairs: {} resolved ({} relevant), {} unresolved ({} awaiting a third label), {} escalated\n",
        records.len(),
        resolution.outcomes.len(),
        resolution.resolved(),
        judgments.num_relevant_total(),
        resolution.unresolved(),
        resolution.pending.len(),
        resolution.escalated()
    );
    if !a.out.no_files {
        write(
            &with_suffix(&prefix, ".qrels"),
            &write_judgments(&judgments),
        )?;
    }
    emit(
        &a.out,
        prefix,
        &Report::new(resolution.to_csv(), &summary, table),
    )
}

pub fn agreement(a: AgreementArgs) -> Result<()> {
    let records = load_log(&a.log)?;
    let report = agreement_report(&records);
    emit(
        &a.out,
        default_prefix(&a.log, "agreement"),
        &Report::new(report.to_csv(), &report, report.table()),
    )
}

pub fn overlap(a: OverlapArgs) -> Result<()> {
    let runs = load_runs(&a.run, a.lenient)?;
    let variant = if a.truncated {
        RboVariant::Truncated
    } else {
        RboVariant::Extrapolated
    };
    let report = overlap_report(&runs, a.depth, a.p, variant)?;
    emit(
        &a.out,
        default_prefix(&a.run[0], "overlap"),
        &Report::new(report.to_csv(), &report, report.table()),
    )
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let runs = load_runs(&a.run, a.lenient)?;
    let original = load_merged(&a.original)?;
    let pooled = load_merged(&a.pooled)?;
    let report = match &a.system {
        Some(s) => {
            let entry = leave_one_out(&runs, &original, &pooled, s, &a.k)?;
            AblationReport {
                ks: entry.all.ks.clone(),
                entries: vec![entry],
            }
        }
        None => ablation_report(&runs, &original, &pooled, &a.k)?,
    };
    emit(
        &a.out,
        default_prefix(&a.pooled[0], "ablation"),
        &Report::new(report.to_csv(), &report, report.table()),
    )
}

pub fn dist(a: DistArgs) -> Result<()> {
    let judgments = load_merged(&a.qrels)?;
    let runs = load_runs(&a.run, a.lenient)?;
    let queries = a.queries.as_deref().map(load_queries).transpose()?;
    let report = distributions(&runs, &judgments, queries.as_deref());
    let prefix = a
        .out
        .out
        .clone()
        .unwrap_or_else(|| default_prefix(&a.qrels[0], "dist"));
    if !a.out.no_files {
        if let Some(joint) = report.joint_csv() {
            write(&with_suffix(&prefix, ".joint.csv"), &joint)?;
        }
    }
    emit(
        &a.out,
        prefix,
        &Report::new(report.to_plot_csv(), &report, report.table()),
    )
}

/// One score per line (optionally `query_id score`), or the named column of
/// a CSV file with a header.
fn read_scores(path: &Path, column: Option<&str>) -> Result<Vec<f64>> {
    let text = read(path)?;
    let parse = |line: usize, raw: &str| {
        raw.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| {
                CliError::Validation(format!(
                    "{}: line {line}: {raw:?} is not a finite number",
                    path.display()
                ))
            })
    };
    match column {
        None => text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .map(|(i, l)| parse(i + 1, l.split_whitespace().last().unwrap_or("")))
            .collect(),
        Some(name) => {
            let mut reader = csv::Reader::from_reader(text.as_bytes());
            let headers = reader.headers().map_err(CliError::invalid)?.clone();
            let idx = headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| {
                    CliError::Validation(format!("{}: no column {name:?}", path.display()))
                })?;
            reader
                .records()
                .enumerate()
                .map(|(i, rec)| {
                    let rec = rec.map_err(CliError::invalid)?;
                    parse(i + 2, rec.get(idx).unwrap_or(""))
                })
                .collect()
        }
    }
}

type Picker = dyn Fn(&QueryMetrics) -> Option<f64>;

/// Per-query values of `metric` (`C@K`, `R@K` or `AP`) in query order.
fn metric_scores(report: &MetricReport, metric: &str) -> Result<Vec<f64>> {
    let bad = || {
        CliError::Validation(format!(
            "unknown metric {metric:?}; use C@K, R@K or AP with K among {:?}",
            report.ks
        ))
    };
    let upper = metric.to_ascii_uppercase();
    let pick: Box<Picker> = if upper == "AP" {
        Box::new(|m| Some(m.avg_prec))
    } else if let Some(k) = upper.strip_prefix("C@") {
        let k: usize = k.parse().map_err(|_| bad())?;
        Box::new(move |m| m.correct_at.get(&k).map(|&v| v as f64))
    } else if let Some(k) = upper.strip_prefix("R@") {
        let k: usize = k.parse().map_err(|_| bad())?;
        Box::new(move |m| m.recall_at.get(&k).copied())
    } else {
        return Err(bad());
    };
    report
        .per_query
        .values()
        .map(|m| pick(m).ok_or_else(bad))
        .collect()
}

fn metric_k(metric: &str) -> Option<usize> {
    metric.split_once('@').and_then(|(_, k)| k.parse().ok())
}

pub fn bootstrap(a: BootstrapArgs) -> Result<()> {
    let (scores, input) = match (&a.scores, &a.run) {
        (Some(path), _) => (read_scores(path, a.column.as_deref())?, path.clone()),
        (None, Some(run_path)) => {
            let run = load_run(run_path, false)?;
            let judgments = load_merged(&a.qrels)?;
            let ks = metric_k(&a.metric).map_or_else(|| vec![1], |k| vec![k]);
            let report = evaluate(&run, &judgments, &EvalOptions::with_ks(&ks))?;
            (metric_scores(&report, &a.metric)?, run_path.clone())
        }
        (None, None) => unreachable!("clap requires --scores or --run"),
    };
    let results =
        a.n.iter()
            .map(|&n| bootstrap_deviation(&scores, n, a.b, a.seed))
            .collect::<std::result::Result<Vec<_>, _>>()?;

    let mut csv = String::from("sample_size,resamples,seed,full_mean,percentile_95\n");
    let mut deviations = String::from("sample_size,resample,deviation\n");
    let mut table = format!(
        "{} scores, mean {}, {} resamples per size, seed {}\n",
        scores.len(),
        results[0].full_mean,
        a.b,
        a.seed
    );
    for r in &results {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.sample_size, r.resamples, r.rng_seed, r.full_mean, r.percentile_95
        ));
        for (i, d) in r.deviations.iter().enumerate() {
            deviations.push_str(&format!("{},{i},{d}\n", r.sample_size));
        }
        table.push_str(&format!(
            "  N={:<6} 95th percentile deviation {:.4}\n",
            r.sample_size, r.percentile_95
        ));
    }
    let summary = json!({
        "scores": scores.len(),
        "full_mean": results[0].full_mean,
        "resamples": a.b,
        "seed": a.seed,
        "rng": RNG_ALGORITHM,
        "percentile_95": results
            .iter()
            .map(|r| (r.sample_size.to_string(), r.percentile_95))
            .collect::<BTreeMap<_, _>>(),
    });
    let prefix = a
        .out
        .out
        .clone()
        .unwrap_or_else(|| default_prefix(&input, "bootstrap"));
    if !a.out.no_files {
        write(&with_suffix(&prefix, ".deviations.csv"), &deviations)?;
    }
    emit(&a.out, prefix, &Report::new(csv, &summary, table))
}

pub fn textsim(a: TextsimArgs) -> Result<()> {
    let queries = load_queries(&a.queries)?;
    let train: Vec<&str> = queries
        .iter()
        .filter(|q| q.split == Split::Train)
        .map(|q| q.text.as_str())
        .collect();
    let test: Vec<(_, &str)> = queries
        .iter()
        .filter(|q| q.split == Split::Test)
        .map(|q| (q.id.clone(), q.text.as_str()))
        .collect();
    let encoder = fit_encoder(&train, a.n)?;
    let profile = similarity_profile(&encoder, &test, &train, a.k)?;
    let correlation = length_similarity_correlation(&profile, &queries);
    let mut table = format!(
        "{} test captions against {} train captions ({}-grams, top {}; vocabulary {})\n",
        test.len(),
        train.len(),
        a.n,
        a.k,
        encoder.vocabulary_size()
    );
    table.push_str(&correlation.table());
    emit(
        &a.out,
        default_prefix(&a.queries, "textsim"),
        &Report::new(
            profile.to_csv(&queries),
            &json!({ "profile": profile, "correlation": correlation }),
            table,
        ),
    )
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let pool = load_pool(&a.pool)?;
    let captions = load_queries(&a.queries)?
        .into_iter()
        .map(|q| (q.id, q.text))
        .collect();
    let guidelines = match &a.guidelines {
        Some(p) => read(p)?,
        None => DEFAULT_GUIDELINES.to_string(),
    };
    if a.lease_secs <= 0 {
        return Err(CliError::Validation("--lease-secs must be positive".into()));
    }
    let config = ServiceConfig {
        pool,
        double_label_fraction: a.fraction,
        plan_seed: a.seed,
        captions,
        media_uri_template: a.media_uri,
        runs: load_runs(&a.run, a.lenient)?,
        original: load_merged(&a.original)?,
        log_path: a.log,
        lease: chrono::TimeDelta::seconds(a.lease_secs),
        guidelines,
    };
    let state = Arc::new(AppState::open(config, Box::new(SystemClock))?);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    runtime
        .block_on(pooljudge_service::serve(state, a.bind))
        .map_err(|e| CliError::Io(format!("{}: {e}", a.bind)))
}
