//! Per-user feature vectors and non-localness feature selection.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::{tokenize_words, Comment};
use crate::gazetteer::LocationHierarchy;
use crate::label::UserLabel;

pub const HOURS: usize = 24;
pub const DEFAULT_MAX_COMMENTS: usize = 1000;
pub const DEFAULT_CUTOFF_DAYS: i64 = 31;
pub const DEFAULT_MIN_CELL_USERS: usize = 50;
pub const SKL_EPSILON: f64 = 1e-9;
pub const DEFAULT_STOP_SUBREDDITS: usize = 30;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UserFeatures {
    pub user: String,
    pub w: BTreeMap<String, u64>,
    pub s: BTreeMap<String, u64>,
    pub tau: [u64; HOURS],
}

impl UserFeatures {
    pub fn n_comments(&self) -> u64 {
        self.tau.iter().sum()
    }

    /// No comment survived filtering.
    pub fn is_empty(&self) -> bool {
        self.n_comments() == 0
    }

    /// Posting-hour histogram as relative frequencies; uniform when empty.
    pub fn tau_normalized(&self) -> [f64; HOURS] {
        let total = self.n_comments();
        if total == 0 {
            return [1.0 / HOURS as f64; HOURS];
        }
        self.tau.map(|c| c as f64 / total as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturizeOptions {
    pub max_comments: usize,
    pub cutoff_days: i64,
}

impl Default for FeaturizeOptions {
    fn default() -> Self {
        FeaturizeOptions {
            max_comments: DEFAULT_MAX_COMMENTS,
            cutoff_days: DEFAULT_CUTOFF_DAYS,
        }
    }
}

pub fn utc_hour(ts: i64) -> usize {
    (ts.rem_euclid(86_400) / 3_600) as usize
}

/// Builds one user's features. Comments in `exclude` and comments later than
/// `label_time + cutoff_days` are dropped; the earliest `max_comments` of the
/// rest are counted.
pub fn featurize_user(
    user: &str,
    comments: &[Comment],
    label_time: Option<i64>,
    exclude: &HashSet<String>,
    opts: &FeaturizeOptions,
) -> UserFeatures {
    let cutoff = label_time.map(|t| t + opts.cutoff_days * 86_400);
    let mut kept: Vec<&Comment> = comments
        .iter()
        .filter(|c| !exclude.contains(&c.id))
        .filter(|c| cutoff.is_none_or(|t| c.created_utc <= t))
        .collect();
    kept.sort_by(|a, b| (a.created_utc, &a.id).cmp(&(b.created_utc, &b.id)));
    kept.truncate(opts.max_comments);

    let mut f = UserFeatures {
        user: user.to_string(),
        ..Default::default()
    };
    for c in kept {
        for t in tokenize_words(&c.body) {
            *f.w.entry(t).or_default() += 1;
        }
        *f.s.entry(c.subreddit.to_lowercase()).or_default() += 1;
        f.tau[utc_hour(c.created_utc)] += 1;
    }
    if f.is_empty() {
        log::debug!("user {user} has no comments after filtering");
    }
    f
}

/// Groups `comments` by user and featurizes each labeled user. Users without a
/// label are featurized without a date cutoff when `include_unlabeled` is set.
pub fn featurize_corpus(
    comments: Vec<Comment>,
    labels: &[UserLabel],
    exclude: &HashSet<String>,
    opts: &FeaturizeOptions,
    include_unlabeled: bool,
) -> Vec<UserFeatures> {
    let label_time: HashMap<&str, i64> = labels.iter().map(|l| (l.user.as_str(), l.label_time)).collect();
    let mut by_user: BTreeMap<String, Vec<Comment>> = BTreeMap::new();
    for c in comments {
        if include_unlabeled || label_time.contains_key(c.user.as_str()) {
            by_user.entry(c.user.clone()).or_default().push(c);
        }
    }
    by_user
        .into_par_iter()
        .map(|(user, cs)| {
            let t = label_time.get(user.as_str()).copied();
            featurize_user(&user, &cs, t, exclude, opts)
        })
        .collect()
}

/// Training users grouped into geographic cells, rolling small cells up
/// state → country → continent until each has at least `min_users`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationPartition {
    pub cells: Vec<String>,
    pub min_users: usize,
    cell_sizes: Vec<usize>,
}

fn cell_key(h: &LocationHierarchy, depth: usize) -> String {
    let mut parts = vec![h.continent.as_str()];
    if depth >= 1 {
        parts.push(&h.country);
    }
    if depth >= 2 {
        if let Some(s) = &h.state {
            parts.push(s);
        }
    }
    parts.join(" / ")
}

impl LocationPartition {
    pub fn build(hierarchies: &[&LocationHierarchy], min_users: usize) -> LocationPartition {
        let mut depth: Vec<usize> = hierarchies
            .iter()
            .map(|h| if h.state.is_some() { 2 } else { 1 })
            .collect();
        // State cells roll up first, then country cells, which have absorbed them.
        for level in [2, 1] {
            let mut counts: HashMap<String, usize> = HashMap::new();
            for (h, &d) in hierarchies.iter().zip(&depth) {
                *counts.entry(cell_key(h, d)).or_default() += 1;
            }
            for (h, d) in hierarchies.iter().zip(depth.iter_mut()) {
                if *d == level && counts[&cell_key(h, *d)] < min_users {
                    *d = level - 1;
                }
            }
        }
        let mut sizes: BTreeMap<String, usize> = BTreeMap::new();
        for (h, &d) in hierarchies.iter().zip(&depth) {
            *sizes.entry(cell_key(h, d)).or_default() += 1;
        }
        LocationPartition {
            cells: sizes.keys().cloned().collect(),
            cell_sizes: sizes.values().copied().collect(),
            min_users,
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell_size(&self, cell: usize) -> usize {
        self.cell_sizes[cell]
    }

    /// Finest emitted cell containing `h`.
    pub fn cell_of(&self, h: &LocationHierarchy) -> Option<usize> {
        (0..=2)
            .rev()
            .filter(|&d| d < 2 || h.state.is_some())
            .find_map(|d| self.cells.binary_search(&cell_key(h, d)).ok())
    }

    /// True for cells at continent level.
    pub fn is_top_level(&self, cell: usize) -> bool {
        !self.cells[cell].contains(" / ")
    }
}

fn smoothed(p: &[f64], eps: f64) -> Vec<f64> {
    let total: f64 = p.iter().sum();
    let n = p.len() as f64;
    let base: Vec<f64> = if total > 0.0 {
        p.iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / n; p.len()]
    };
    let z = 1.0 + eps * n;
    base.iter().map(|x| (x + eps) / z).collect()
}

/// KL(p‖q) + KL(q‖p) after normalizing both inputs and smoothing every cell by `epsilon`.
pub fn symmetric_kl(p: &[f64], q: &[f64], epsilon: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    if p.is_empty() {
        return Ok(0.0);
    }
    if p.iter().chain(q).any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument("distributions must be finite and non-negative".into()));
    }
    let (ps, qs) = (smoothed(p, epsilon), smoothed(q, epsilon));
    Ok(ps
        .iter()
        .zip(&qs)
        .map(|(a, b)| (a - b) * (a / b).ln())
        .sum::<f64>()
        .max(0.0))
}

/// Count-weighted mean symmetric KL between `f` and each stopword distribution.
pub fn non_localness(f: &[f64], stopwords: &[(&[f64], f64)]) -> Result<f64> {
    let total: f64 = stopwords.iter().map(|(_, w)| w).sum();
    if stopwords.is_empty() || total <= 0.0 {
        return Err(Error::EmptyInput("stopword set"));
    }
    let mut acc = 0.0;
    for (s, w) in stopwords {
        acc += w * symmetric_kl(f, s, SKL_EPSILON)?;
    }
    Ok(acc / total)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NLRanking {
    /// Features by descending NL score.
    pub scores: Vec<(String, f64)>,
    pub stopwords: Vec<String>,
}

impl NLRanking {
    pub fn top(&self, k: usize) -> Vec<String> {
        self.scores.iter().take(k).map(|(f, _)| f.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Namespace {
    Word,
    Subreddit,
}

impl Namespace {
    pub fn prefix(self) -> &'static str {
        match self {
            Namespace::Word => "w",
            Namespace::Subreddit => "s",
        }
    }

    pub fn counts(self, f: &UserFeatures) -> &BTreeMap<String, u64> {
        match self {
            Namespace::Word => &f.w,
            Namespace::Subreddit => &f.s,
        }
    }
}

/// Selected word and subreddit vocabularies with their NL scores.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub words: Vec<(String, f64)>,
    pub subreddits: Vec<(String, f64)>,
}

impl Vocabulary {
    pub fn get(&self, ns: Namespace) -> &[(String, f64)] {
        match ns {
            Namespace::Word => &self.words,
            Namespace::Subreddit => &self.subreddits,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len() + self.subreddits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for ns in [Namespace::Word, Namespace::Subreddit] {
            for (f, score) in self.get(ns) {
                writeln!(w, "{}:{}\t{}", ns.prefix(), f, score)?;
            }
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Vocabulary> {
        let mut v = Vocabulary::default();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (feat, score) = line.rsplit_once('\t').unwrap_or((line.as_str(), "0"));
            let score: f64 = score
                .trim()
                .parse()
                .map_err(|_| Error::parse(i + 1, format!("bad score {score:?}")))?;
            match feat.split_once(':') {
                Some(("w", f)) => v.words.push((f.to_string(), score)),
                Some(("s", f)) => v.subreddits.push((f.to_string(), score)),
                _ => return Err(Error::parse(i + 1, format!("feature {feat:?} lacks a w:/s: prefix"))),
            }
        }
        Ok(v)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Vocabulary> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Vocabulary::read(std::io::BufReader::new(f))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectOptions {
    pub k_words: usize,
    pub k_subreddits: usize,
    pub min_cell_users: usize,
    /// Features used by fewer users are not ranked.
    pub min_support: usize,
    /// Explicit subreddit stop set; the most active subreddits otherwise.
    pub stop_subreddits: Option<Vec<String>>,
    pub n_stop_subreddits: usize,
}

impl Default for SelectOptions {
    fn default() -> Self {
        SelectOptions {
            k_words: 40_000,
            k_subreddits: 650,
            min_cell_users: DEFAULT_MIN_CELL_USERS,
            min_support: 3,
            stop_subreddits: None,
            n_stop_subreddits: DEFAULT_STOP_SUBREDDITS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub words: NLRanking,
    pub subreddits: NLRanking,
    pub partition: LocationPartition,
}

impl Selection {
    pub fn vocabulary(&self, k_words: usize, k_subreddits: usize) -> Vocabulary {
        Vocabulary {
            words: self.words.scores.iter().take(k_words).cloned().collect(),
            subreddits: self.subreddits.scores.iter().take(k_subreddits).cloned().collect(),
        }
    }
}

struct CellCounts {
    counts: BTreeMap<String, Vec<f64>>,
    totals: BTreeMap<String, u64>,
    support: BTreeMap<String, usize>,
}

fn cell_counts(train: &[(&UserFeatures, usize)], ns: Namespace, n_cells: usize) -> CellCounts {
    let mut out = CellCounts {
        counts: BTreeMap::new(),
        totals: BTreeMap::new(),
        support: BTreeMap::new(),
    };
    for (f, cell) in train {
        for (feat, &c) in ns.counts(f) {
            out.counts.entry(feat.clone()).or_insert_with(|| vec![0.0; n_cells])[*cell] += c as f64;
            *out.totals.entry(feat.clone()).or_default() += c;
            *out.support.entry(feat.clone()).or_default() += 1;
        }
    }
    out
}

fn rank(cc: &CellCounts, stop: &[String], min_support: usize) -> Result<NLRanking> {
    let stop_present: Vec<&String> = stop.iter().filter(|s| cc.counts.contains_key(*s)).collect();
    let stop_dists: Vec<(&[f64], f64)> = stop_present
        .iter()
        .map(|s| (cc.counts[*s].as_slice(), cc.totals[*s] as f64))
        .collect();
    if stop_dists.is_empty() {
        return Err(Error::EmptyInput("stopword set (none occur in training data)"));
    }
    let feats: Vec<&String> = cc
        .counts
        .keys()
        .filter(|f| cc.support[*f] >= min_support)
        .collect();
    let mut scores: Vec<(String, f64)> = feats
        .par_iter()
        .map(|f| non_localness(&cc.counts[*f], &stop_dists).map(|s| ((*f).clone(), s)))
        .collect::<Result<_>>()?;
    scores.sort_by(|(fa, sa), (fb, sb)| {
        sb.total_cmp(sa)
            .then_with(|| cc.totals[fb].cmp(&cc.totals[fa]))
            .then_with(|| fa.cmp(fb))
    });
    Ok(NLRanking {
        scores,
        stopwords: stop_present.into_iter().cloned().collect(),
    })
}

/// Ranks words and subreddits separately by non-localness over the training
/// partition. The full rankings are returned; take the top-k via
/// [`Selection::vocabulary`].
pub fn select_features(
    train: &[(&UserFeatures, &UserLabel)],
    stop_words: &[String],
    opts: &SelectOptions,
) -> Result<Selection> {
    if opts.k_words == 0 || opts.k_subreddits == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if train.is_empty() {
        return Err(Error::EmptyInput("training users"));
    }
    let hierarchies: Vec<&LocationHierarchy> = train.iter().map(|(_, l)| &l.hierarchy).collect();
    let partition = LocationPartition::build(&hierarchies, opts.min_cell_users);
    let assigned: Vec<(&UserFeatures, usize)> = train
        .iter()
        .map(|(f, l)| (*f, partition.cell_of(&l.hierarchy).expect("every training user has a cell")))
        .collect();

    let words = cell_counts(&assigned, Namespace::Word, partition.len());
    let subs = cell_counts(&assigned, Namespace::Subreddit, partition.len());

    let stop_subs = match &opts.stop_subreddits {
        Some(s) => s.clone(),
        None => {
            let mut active: Vec<(&String, u64)> = subs.totals.iter().map(|(s, &c)| (s, c)).collect();
            active.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            active.into_iter().take(opts.n_stop_subreddits).map(|(s, _)| s.clone()).collect()
        }
    };

    let words = rank(&words, stop_words, opts.min_support)?;
    let subreddits = rank(&subs, &stop_subs, opts.min_support)?;
    for (ns, r, k) in [("words", &words, opts.k_words), ("subreddits", &subreddits, opts.k_subreddits)] {
        if k > r.scores.len() {
            log::info!("requested {k} {ns} but only {} are eligible; keeping all", r.scores.len());
        }
    }
    Ok(Selection {
        words,
        subreddits,
        partition,
    })
}

pub fn write_features<W: Write>(mut w: W, feats: &[UserFeatures]) -> Result<()> {
    for f in feats {
        serde_json::to_writer(&mut w, f)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_features<R: BufRead>(r: R) -> Result<Vec<UserFeatures>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn save_features(path: impl AsRef<Path>, feats: &[UserFeatures]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_features(&mut w, feats)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<Vec<UserFeatures>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_features(std::io::BufReader::new(f))
}
