//! Error metrics, cross-validation, transfer evaluation, and label audits.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::Comment;
use crate::features::{select_features, Namespace, SelectOptions, UserFeatures};
use crate::geo::{haversine_miles, GeoPoint};
use crate::label::UserLabel;
use crate::model::{feature_key, join_users, predict, train_model, DensityOptions, Modalities, TemporalOptions, TrainConfig};

pub const ACC_THRESHOLD_MILES: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub aed: f64,
    pub med: f64,
    pub acc_at_100: f64,
    pub n_users: usize,
    pub n_fallback: usize,
}

/// Metrics over per-user error distances in miles.
pub fn metrics_from_errors(errors: &[f64], n_fallback: usize) -> Result<MetricReport> {
    if errors.is_empty() {
        return Err(Error::EmptyInput("error list"));
    }
    let n = errors.len();
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let med = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    Ok(MetricReport {
        aed: errors.iter().sum::<f64>() / n as f64,
        med,
        acc_at_100: errors.iter().filter(|e| **e < ACC_THRESHOLD_MILES).count() as f64 / n as f64,
        n_users: n,
        n_fallback,
    })
}

pub fn metrics(pred: &[GeoPoint], truth: &[GeoPoint]) -> Result<MetricReport> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: pred.len(),
        });
    }
    let errors: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| haversine_miles(*p, *t)).collect();
    metrics_from_errors(&errors, 0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n` split into `k` contiguous folds whose sizes differ by at most one.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("cannot split {n} users into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        let mut test = order[start..start + len].to_vec();
        let mut train: Vec<usize> = order[..start].iter().chain(&order[start + len..]).copied().collect();
        test.sort_unstable();
        train.sort_unstable();
        folds.push(Fold { train, test });
        start += len;
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub modalities: Modalities,
    pub folds: usize,
    pub seed: u64,
    pub k_words: usize,
    pub k_subreddits: usize,
    pub min_cell_users: usize,
    pub density: DensityOptions,
    pub temporal: TemporalOptions,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            modalities: Modalities::default(),
            folds: 5,
            seed: 0,
            k_words: 40_000,
            k_subreddits: 650,
            min_cell_users: crate::features::DEFAULT_MIN_CELL_USERS,
            density: DensityOptions::default(),
            temporal: TemporalOptions::default(),
        }
    }
}

impl ExperimentSpec {
    fn select_options(&self) -> SelectOptions {
        SelectOptions {
            k_words: self.k_words,
            k_subreddits: self.k_subreddits,
            min_cell_users: self.min_cell_users,
            min_support: self.density.min_support,
            ..Default::default()
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            modalities: self.modalities,
            density: self.density,
            temporal: self.temporal.clone(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserError {
    pub user: String,
    pub fold: usize,
    pub error_miles: f64,
    pub fallback: bool,
    pub pred_lat: f64,
    pub pred_lon: f64,
    pub true_lat: f64,
    pub true_lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub modalities: String,
    pub folds: Vec<MetricReport>,
    pub aggregate: MetricReport,
    pub errors: Vec<UserError>,
}

/// Trains on `train` (selection, densities, temporal model) and scores `test`.
fn train_and_score(
    spec: &ExperimentSpec,
    train: &[(&UserFeatures, &UserLabel)],
    test: &[(&UserFeatures, &UserLabel)],
    stop_words: &[String],
    fold: usize,
) -> Result<Vec<UserError>> {
    let sel = select_features(train, stop_words, &spec.select_options())?;
    let vocab = sel.vocabulary(spec.k_words, spec.k_subreddits);
    let model = train_model(train, &vocab, &spec.train_config())?;
    Ok(test
        .iter()
        .map(|(f, l)| {
            let p = predict(&model, f, spec.modalities.temporal);
            UserError {
                user: f.user.clone(),
                fold,
                error_miles: haversine_miles(p.point, l.coords),
                fallback: p.fallback,
                pred_lat: p.point.lat,
                pred_lon: p.point.lon,
                true_lat: l.coords.lat,
                true_lon: l.coords.lon,
            }
        })
        .collect())
}

fn report_of(errors: &[UserError]) -> Result<MetricReport> {
    let e: Vec<f64> = errors.iter().map(|u| u.error_miles).collect();
    metrics_from_errors(&e, errors.iter().filter(|u| u.fallback).count())
}

/// K-fold evaluation. Everything is fit on the training split of each fold;
/// the aggregate pools all held-out user errors.
pub fn run_cv(spec: &ExperimentSpec, features: &[UserFeatures], labels: &[UserLabel], stop_words: &[String]) -> Result<CvReport> {
    if spec.folds < 2 {
        return Err(Error::InvalidArgument("cross-validation needs at least 2 folds".into()));
    }
    let users = join_users(features, labels);
    let folds = kfold(users.len(), spec.folds, spec.seed)?;
    let mut reports = Vec::new();
    let mut all = Vec::new();
    for (i, f) in folds.iter().enumerate() {
        let train: Vec<_> = f.train.iter().map(|&j| users[j]).collect();
        let test: Vec<_> = f.test.iter().map(|&j| users[j]).collect();
        let errs = train_and_score(spec, &train, &test, stop_words, i).map_err(|e| Error::Fold {
            fold: i,
            source: Box::new(e),
        })?;
        reports.push(report_of(&errs)?);
        all.extend(errs);
    }
    Ok(CvReport {
        modalities: spec.modalities.to_string(),
        aggregate: report_of(&all)?,
        folds: reports,
        errors: all,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Us,
    Global,
}

impl std::str::FromStr for Scope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "us" => Ok(Scope::Us),
            "global" => Ok(Scope::Global),
            _ => Err(Error::InvalidArgument(format!("unknown scope {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub modalities: String,
    pub report: MetricReport,
    /// Share of the source vocabulary that occurs anywhere in the target corpus.
    pub overlap_fraction: f64,
    pub source_vocab_size: usize,
    pub n_source_users: usize,
    pub map_point: GeoPoint,
    pub errors: Vec<UserError>,
}

/// Trains on the whole source corpus and scores every labeled target user.
pub fn run_transfer(
    spec: &ExperimentSpec,
    source: (&[UserFeatures], &[UserLabel]),
    target: (&[UserFeatures], &[UserLabel]),
    stop_words: &[String],
    scope: Scope,
) -> Result<TransferReport> {
    let scoped: Vec<UserLabel> = match scope {
        Scope::Global => source.1.to_vec(),
        Scope::Us => source.1.iter().filter(|l| l.hierarchy.country == "united states").cloned().collect(),
    };
    let train = join_users(source.0, &scoped);
    if train.is_empty() {
        return Err(Error::EmptyInput("source users in scope"));
    }
    let sel = select_features(&train, stop_words, &spec.select_options())?;
    let vocab = sel.vocabulary(spec.k_words, spec.k_subreddits);
    let model = train_model(&train, &vocab, &spec.train_config())?;

    let mut target_feats: BTreeSet<String> = BTreeSet::new();
    for f in target.0 {
        for ns in [Namespace::Word, Namespace::Subreddit] {
            target_feats.extend(ns.counts(f).keys().map(|k| feature_key(ns, k)));
        }
    }
    let source_keys: Vec<String> = [Namespace::Word, Namespace::Subreddit]
        .iter()
        .filter(|ns| spec.modalities.uses(**ns))
        .flat_map(|&ns| vocab.get(ns).iter().map(move |(f, _)| feature_key(ns, f)))
        .collect();
    let shared = source_keys.iter().filter(|k| target_feats.contains(*k)).count();
    let overlap_fraction = if source_keys.is_empty() { 0.0 } else { shared as f64 / source_keys.len() as f64 };

    let test = join_users(target.0, target.1);
    let errors: Vec<UserError> = test
        .iter()
        .map(|(f, l)| {
            let p = predict(&model, f, spec.modalities.temporal);
            UserError {
                user: f.user.clone(),
                fold: 0,
                error_miles: haversine_miles(p.point, l.coords),
                fallback: p.fallback,
                pred_lat: p.point.lat,
                pred_lon: p.point.lon,
                true_lat: l.coords.lat,
                true_lon: l.coords.lon,
            }
        })
        .collect();
    Ok(TransferReport {
        modalities: spec.modalities.to_string(),
        report: report_of(&errors)?,
        overlap_fraction,
        source_vocab_size: source_keys.len(),
        n_source_users: train.len(),
        map_point: model.fallback,
        errors,
    })
}

/// Aligned text table of metric rows.
pub fn render_table(rows: &[(String, &MetricReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>10}  {:>10}  {:>8}  {:>7}  {:>8}", "split", "AED (mi)", "MED (mi)", "Acc@100", "users", "fallback");
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>10.1}  {:>10.1}  {:>8.3}  {:>7}  {:>8}",
            name, r.aed, r.med, r.acc_at_100, r.n_users, r.n_fallback
        );
    }
    out
}

pub fn write_errors_csv<W: Write>(w: W, errors: &[UserError]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for e in errors {
        wtr.serialize(e)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub user: String,
    pub comment_id: String,
    pub comment: String,
    pub mention: String,
    pub hierarchy: String,
    pub resolution: String,
    /// Reviewer verdict: was the location extracted and geocoded correctly?
    pub correct: String,
    /// Reviewer verdict: is the label at the right resolution?
    pub correct_resolution: String,
}

/// Seeded sample of `n` labeled users (all of them when fewer) with their
/// first evidence comment, ready for manual review.
pub fn audit_sample(labels: &[UserLabel], comments: &HashMap<String, Comment>, n: usize, seed: u64) -> Vec<AuditRow> {
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n);
    idx.sort_unstable();
    idx.into_iter()
        .map(|i| {
            let l = &labels[i];
            let ev = l.evidence.first();
            let comment_id = ev.map(|e| e.comment_id.clone()).unwrap_or_default();
            AuditRow {
                user: l.user.clone(),
                comment: comments.get(&comment_id).map(|c| c.body.clone()).unwrap_or_default(),
                comment_id,
                mention: ev.map(|e| e.mention.clone()).unwrap_or_default(),
                hierarchy: l.hierarchy.to_string(),
                resolution: l.resolution.to_string(),
                correct: String::new(),
                correct_resolution: String::new(),
            }
        })
        .collect()
}

pub fn write_audit<W: Write>(w: W, rows: &[AuditRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditScore {
    pub reviewed: usize,
    pub correct: usize,
    pub correct_resolution: usize,
    /// correct / reviewed
    pub precision: f64,
    /// correct_resolution / correct
    pub resolution_accuracy: f64,
}

fn verdict(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "y" | "yes" | "1" | "true" | "t" => Some(true),
        "n" | "no" | "0" | "false" | "f" => Some(false),
        _ => None,
    }
}

pub fn score_verdicts(rows: &[AuditRow]) -> AuditScore {
    let mut s = AuditScore {
        reviewed: 0,
        correct: 0,
        correct_resolution: 0,
        precision: 0.0,
        resolution_accuracy: 0.0,
    };
    for r in rows {
        let Some(ok) = verdict(&r.correct) else { continue };
        s.reviewed += 1;
        if ok {
            s.correct += 1;
            if verdict(&r.correct_resolution) == Some(true) {
                s.correct_resolution += 1;
            }
        }
    }
    if s.reviewed > 0 {
        s.precision = s.correct as f64 / s.reviewed as f64;
    }
    if s.correct > 0 {
        s.resolution_accuracy = s.correct_resolution as f64 / s.correct as f64;
    }
    s
}

pub fn read_audit<R: Read>(r: R) -> Result<Vec<AuditRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
