//! Inter-annotator agreement over pairs that received two or more labels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ItemId, QueryId};
use crate::pooling::{Label, LabelRecord};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AgreementError {
    #[error("need at least two units with two or more values, found {0}")]
    InsufficientData(usize),
    #[error("only one value observed; expected disagreement is zero and alpha is undefined")]
    DegenerateData,
}

/// Nominal Krippendorff's alpha via the coincidence matrix.
///
/// Each unit holds the values assigned to it; units with fewer than two
/// values are not pairable and are skipped.
pub fn nominal_alpha<V: Ord + Clone>(units: &[Vec<V>]) -> Result<f64, AgreementError> {
    let pairable: Vec<&Vec<V>> = units.iter().filter(|u| u.len() >= 2).collect();
    if pairable.len() < 2 {
        return Err(AgreementError::InsufficientData(pairable.len()));
    }
    let mut marginals: BTreeMap<V, f64> = BTreeMap::new();
    let mut observed_disagreement = 0.0;
    let mut n = 0.0;
    for unit in &pairable {
        let m = unit.len() as f64;
        let mut counts: BTreeMap<&V, f64> = BTreeMap::new();
        for v in unit.iter() {
            *counts.entry(v).or_default() += 1.0;
        }
        // off-diagonal mass of this unit's coincidence contribution:
        // sum over c != k of n_c * n_k / (m - 1)
        let same: f64 = counts.values().map(|c| c * (c - 1.0)).sum();
        observed_disagreement += (m * (m - 1.0) - same) / (m - 1.0);
        for (v, c) in counts {
            *marginals.entry(v.clone()).or_default() += c;
        }
        n += m;
    }
    let expected_disagreement = n * n - marginals.values().map(|c| c * c).sum::<f64>();
    if expected_disagreement == 0.0 {
        return Err(AgreementError::DegenerateData);
    }
    Ok(1.0 - (n - 1.0) * observed_disagreement / expected_disagreement)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountBucket {
    pub pairs: usize,
    pub agreement_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    /// Pairs with at least two non-escalated labels.
    pub n_multi: usize,
    /// Share of multi-labeled pairs whose labels are unanimous.
    pub agreement_rate: Option<f64>,
    /// Share of multi-labeled pairs with a strict majority label.
    pub majority_rate: Option<f64>,
    /// `None` when alpha is undefined for the data.
    pub alpha: Option<f64>,
    /// Labels per pair -> pair count and unanimity rate.
    pub by_label_count: BTreeMap<usize, CountBucket>,
}

/// Non-escalated labels grouped by pair, in pair order.
fn labels_by_pair(records: &[LabelRecord]) -> BTreeMap<(&QueryId, &ItemId), Vec<Label>> {
    let mut map: BTreeMap<(&QueryId, &ItemId), Vec<Label>> = BTreeMap::new();
    for r in records {
        if r.label != Label::Escalated {
            map.entry((&r.query, &r.item)).or_default().push(r.label);
        }
    }
    map
}

/// Raw agreement statistics; `alpha` is left `None`.
pub fn agreement_rate(records: &[LabelRecord]) -> AgreementReport {
    let by_pair = labels_by_pair(records);
    let mut n_multi = 0;
    let mut unanimous = 0;
    let mut majority = 0;
    let mut buckets: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for labels in by_pair.values().filter(|l| l.len() >= 2) {
        n_multi += 1;
        let relevant = labels.iter().filter(|l| **l == Label::Relevant).count();
        let agree = relevant == 0 || relevant == labels.len();
        if agree {
            unanimous += 1;
        }
        if relevant * 2 != labels.len() {
            majority += 1;
        }
        let bucket = buckets.entry(labels.len()).or_default();
        bucket.0 += 1;
        bucket.1 += agree as usize;
    }
    let rate = |num: usize| (n_multi > 0).then(|| num as f64 / n_multi as f64);
    AgreementReport {
        n_multi,
        agreement_rate: rate(unanimous),
        majority_rate: rate(majority),
        alpha: None,
        by_label_count: buckets
            .into_iter()
            .map(|(k, (pairs, agree))| {
                (
                    k,
                    CountBucket {
                        pairs,
                        agreement_rate: agree as f64 / pairs as f64,
                    },
                )
            })
            .collect(),
    }
}

/// Nominal alpha over the multi-labeled pairs, escalations dropped.
pub fn krippendorff_alpha(records: &[LabelRecord]) -> Result<f64, AgreementError> {
    let units: Vec<Vec<Label>> = labels_by_pair(records).into_values().collect();
    nominal_alpha(&units)
}

/// Agreement rates plus alpha (when defined).
pub fn agreement_report(records: &[LabelRecord]) -> AgreementReport {
    let mut report = agreement_rate(records);
    report.alpha = krippendorff_alpha(records).ok();
    report
}

impl AgreementReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("statistic,labels_per_pair,pairs,value\n");
        out.push_str(&format!(
            "agreement,,{},{}\n",
            self.n_multi,
            opt(self.agreement_rate)
        ));
        out.push_str(&format!(
            "majority,,{},{}\n",
            self.n_multi,
            opt(self.majority_rate)
        ));
        out.push_str(&format!("alpha,,{},{}\n", self.n_multi, opt(self.alpha)));
        for (k, b) in &self.by_label_count {
            out.push_str(&format!("agreement,{k},{},{}\n", b.pairs, b.agreement_rate));
        }
        out
    }

    pub fn table(&self) -> String {
        let fmt3 = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into());
        let mut out = format!(
            "multiply-labeled pairs: {}\nagreement: {}  alpha: {}  (majority: {})\n",
            self.n_multi,
            fmt3(self.agreement_rate),
            fmt3(self.alpha),
            fmt3(self.majority_rate)
        );
        for (k, b) in &self.by_label_count {
            out.push_str(&format!(
                "  {k} labels: {:>8} pairs, agreement {:.3}\n",
                b.pairs, b.agreement_rate
            ));
        }
        out
    }
}
