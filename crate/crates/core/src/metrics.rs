//! Binary-classification metrics: confusion counts, precision/recall/F1, and
//! rank-based (Mann–Whitney) AUC with exact tie handling, plus per-group
//! report assembly with balanced real subsets.

use crate::error::{Error, Result};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::Serialize;

/// Confusion counts with positive class 1 (AI-generated).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(preds: &[u8], labels: &[u8]) -> Result<Confusion> {
    if preds.len() != labels.len() {
        return Err(Error::contract(format!(
            "preds ({}) and labels ({}) differ in length",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::contract("confusion on empty input".to_string()));
    }
    let mut c = Confusion::default();
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 0) => c.tn += 1,
            (0, 1) => c.fn_ += 1,
            _ => return Err(Error::contract("preds/labels must be 0 or 1".to_string())),
        }
    }
    Ok(c)
}

/// Derived rates. Degenerate 0/0 denominators yield 0 by convention.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Rates {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn prf1(c: &Confusion) -> Rates {
    let n = c.total() as f64;
    let precision = if c.tp + c.fp == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fp) as f64 };
    let recall = if c.tp + c.fn_ == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Rates { accuracy: (c.tp + c.tn) as f64 / n, precision, recall, f1 }
}

/// Rank-based AUC as an exact integer ratio: `(2*favorable, 2*pairs)`.
///
/// Computed from average ranks over the pooled sample; ties contribute one
/// half. Equals pair counting exactly because both numerators are integers.
pub fn auc_num_den(scores: &[f64], labels: &[u8]) -> Result<(u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::contract(format!(
            "scores ({}) and labels ({}) differ in length",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let n_neg = labels.iter().filter(|&&l| l == 0).count() as u64;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC requires both classes; got {n_pos} positive, {n_neg} negative"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::contract("AUC scores must not be NaN".to_string()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("no NaN"));

    // Sum of 2*rank (1-based) over positives, ties averaged: each member of
    // a tie run [i..j] gets rank (i+1 + j+1)/2, i.e. 2*rank = i + j + 2.
    let mut rank2_pos: u64 = 0;
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank2 = (i + j + 2) as u64;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank2_pos += rank2;
            }
        }
        i = j + 1;
    }
    let num = rank2_pos - n_pos * (n_pos + 1);
    Ok((num, 2 * n_pos * n_neg))
}

/// Probability a random positive outscores a random negative, ties half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (num, den) = auc_num_den(scores, labels)?;
    Ok(num as f64 / den as f64)
}

/// One row of a benchmark table.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub group: String,
    pub n: u64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
}

impl EvalReport {
    fn from_parts(group: &str, scores: &[f64], labels: &[u8]) -> Result<Self> {
        let preds: Vec<u8> = scores.iter().map(|&p| u8::from(p >= 0.5)).collect();
        let c = confusion(&preds, labels)?;
        let r = prf1(&c);
        Ok(EvalReport {
            group: group.to_string(),
            n: c.total(),
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
            accuracy: r.accuracy,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            auc: auc(scores, labels)?,
        })
    }
}

/// Metrics over an entire split, probability scores in [0,1].
pub fn evaluate_all(scores: &[f64], labels: &[u8]) -> Result<EvalReport> {
    EvalReport::from_parts("all", scores, labels)
}

/// Per-generator rows plus an unweighted "Avg" row. Each generator's fakes
/// are paired with an equally sized real subset sampled without replacement
/// (seeded), mirroring a generator-balanced benchmark table.
pub fn evaluate_grouped(
    scores: &[f64],
    labels: &[u8],
    groups: &[String],
    seed: u64,
) -> Result<Vec<EvalReport>> {
    if scores.len() != labels.len() || scores.len() != groups.len() {
        return Err(Error::contract("scores/labels/groups must align".to_string()));
    }
    let real_idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    let mut gen_names: Vec<String> = Vec::new();
    for (i, g) in groups.iter().enumerate() {
        if labels[i] == 1 && !gen_names.contains(g) {
            gen_names.push(g.clone());
        }
    }
    if gen_names.is_empty() {
        return Err(Error::UndefinedMetric("no positive group present".to_string()));
    }

    let mut rng = StdRng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for name in &gen_names {
        let fake_idx: Vec<usize> = (0..labels.len())
            .filter(|&i| labels[i] == 1 && &groups[i] == name)
            .collect();
        let take = fake_idx.len().min(real_idx.len());
        if take == 0 || real_idx.is_empty() {
            return Err(Error::UndefinedMetric(format!(
                "group {name} cannot be balanced: {} fakes, {} reals",
                fake_idx.len(),
                real_idx.len()
            )));
        }
        let mut reals = real_idx.clone();
        reals.shuffle(&mut rng);
        reals.truncate(take);
        let mut s = Vec::with_capacity(2 * take);
        let mut l = Vec::with_capacity(2 * take);
        for &i in fake_idx.iter().chain(&reals) {
            s.push(scores[i]);
            l.push(labels[i]);
        }
        rows.push(EvalReport::from_parts(name, &s, &l)?);
    }

    // Unweighted mean over generator rows.
    let k = rows.len() as f64;
    let mean = |f: fn(&EvalReport) -> f64| rows.iter().map(f).sum::<f64>() / k;
    rows.push(EvalReport {
        group: "Avg".to_string(),
        n: rows.iter().map(|r| r.n).sum(),
        tp: rows.iter().map(|r| r.tp).sum(),
        fp: rows.iter().map(|r| r.fp).sum(),
        tn: rows.iter().map(|r| r.tn).sum(),
        fn_: rows.iter().map(|r| r.fn_).sum(),
        accuracy: mean(|r| r.accuracy),
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        f1: mean(|r| r.f1),
        auc: mean(|r| r.auc),
    });
    Ok(rows)
}
