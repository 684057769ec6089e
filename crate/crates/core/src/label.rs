//! Mention resolution, per-user aggregation, and label coordinates.

use std::cmp::Reverse;
use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::{extract_all, filter_comment, tokenize, Comment, LocationMention};
use crate::gazetteer::{AbbreviationTable, Gazetteer, LocationHierarchy, Resolution};
use crate::geo::{geodesic_median, GeoPoint};

/// Subreddit → geographic scope used to disambiguate shared place names.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionBias {
    scopes: BTreeMap<String, LocationHierarchy>,
}

impl RegionBias {
    /// Parses `subreddit,scope` lines, where scope is a `state/country` or
    /// `country` fragment. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<RegionBias> {
        let mut scopes = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (sub, scope) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(i + 1, "expected `subreddit,scope`"))?;
            let h = LocationHierarchy::parse_fragment(scope)
                .ok_or_else(|| Error::parse(i + 1, format!("bad scope {scope:?}")))?;
            scopes.insert(sub.trim().to_lowercase(), h);
        }
        Ok(RegionBias { scopes })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RegionBias> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RegionBias::parse(&text)
    }

    pub fn bundled() -> RegionBias {
        RegionBias::parse(crate::data::REGION_BIAS).expect("bundled region bias parses")
    }

    pub fn insert(&mut self, subreddit: &str, scope: LocationHierarchy) {
        self.scopes.insert(subreddit.to_lowercase(), scope);
    }

    pub fn scope_for(&self, subreddit: &str) -> Option<&LocationHierarchy> {
        self.scopes.get(&subreddit.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.scopes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scopes.is_empty()
    }

    /// Drops scopes that have no node in `g`, returning the dropped subreddits.
    pub fn retain_known(&mut self, g: &Gazetteer) -> Vec<String> {
        let unknown: Vec<String> = self
            .scopes
            .iter()
            .filter(|(_, h)| g.node(h).is_none())
            .map(|(s, _)| s.clone())
            .collect();
        for s in &unknown {
            log::warn!("region bias scope for r/{s} is not in the gazetteer; ignored");
            self.scopes.remove(s);
        }
        unknown
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedLocation {
    pub hierarchy: LocationHierarchy,
    pub coords: GeoPoint,
    /// Position of the chosen entry in the unbiased candidate ordering (1 = best).
    pub confidence_rank: usize,
    /// Surface text of the mention that produced this location.
    pub mention: String,
}

/// Pluggable geocoding backend.
pub trait Geocoder: Sync {
    fn geocode(&self, m: &LocationMention, bias: Option<&LocationHierarchy>) -> Result<ResolvedLocation>;
}

/// Deterministic gazetteer-backed geocoder: bias filter, then population prior.
pub struct OfflineGeocoder<'a> {
    pub gazetteer: &'a Gazetteer,
}

impl Geocoder for OfflineGeocoder<'_> {
    fn geocode(&self, m: &LocationMention, bias: Option<&LocationHierarchy>) -> Result<ResolvedLocation> {
        resolve(m, bias, self.gazetteer)
    }
}

pub fn resolve(m: &LocationMention, bias: Option<&LocationHierarchy>, g: &Gazetteer) -> Result<ResolvedLocation> {
    if m.candidates.is_empty() {
        return Err(Error::UnresolvableMention(m.text()));
    }
    let mut ranked = m.candidates.clone();
    ranked.sort_by(|&a, &b| {
        let (ea, eb) = (g.entry(a), g.entry(b));
        (Reverse(ea.population), &ea.country_code).cmp(&(Reverse(eb.population), &eb.country_code))
    });
    let chosen = bias
        .and_then(|scope| ranked.iter().copied().find(|&i| scope.contains(&g.entry(i).hierarchy)))
        .unwrap_or(ranked[0]);
    let rank = ranked.iter().position(|&i| i == chosen).unwrap_or(0) + 1;
    let entry = g.entry(chosen);
    let hierarchy = if m.unverified_city {
        let mut h = entry.hierarchy.clone();
        h.city = m.hierarchy.city.clone();
        h
    } else {
        entry.hierarchy.clone()
    };
    Ok(ResolvedLocation {
        hierarchy,
        coords: entry.coords,
        confidence_rank: rank,
        mention: m.text(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub comment_id: String,
    pub mention: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserLabel {
    pub user: String,
    pub hierarchy: LocationHierarchy,
    pub resolution: Resolution,
    pub coords: GeoPoint,
    pub evidence: Vec<Evidence>,
    /// Latest evidence timestamp (UTC seconds); anchors the feature cutoff.
    pub label_time: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    InconsistentEvidence,
    Unresolvable,
}

impl std::fmt::Display for DropReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DropReason::InconsistentEvidence => "inconsistent evidence",
            DropReason::Unresolvable => "unresolvable",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Aggregate {
    Labeled(UserLabel),
    Dropped { user: String, reason: DropReason },
}

/// Deepest hierarchy shared by all of one user's resolved locations.
pub fn aggregate_user(extractions: &[(Comment, ResolvedLocation)]) -> Result<Aggregate> {
    let (first_comment, first) = extractions.first().ok_or(Error::EmptyInput("user extractions"))?;
    let user = first_comment.user.clone();
    let mut prefix = Some(first.hierarchy.clone());
    for (_, r) in &extractions[1..] {
        prefix = prefix.and_then(|p| p.shared_prefix(&r.hierarchy));
    }
    let Some(hierarchy) = prefix else {
        return Ok(Aggregate::Dropped {
            user,
            reason: DropReason::InconsistentEvidence,
        });
    };
    let coords = extractions
        .iter()
        .find(|(_, r)| r.hierarchy == hierarchy)
        .map_or(first.coords, |(_, r)| r.coords);
    let mut evidence: Vec<Evidence> = Vec::new();
    for (c, r) in extractions {
        let e = Evidence {
            comment_id: c.id.clone(),
            mention: r.mention.clone(),
        };
        if !evidence.contains(&e) {
            evidence.push(e);
        }
    }
    Ok(Aggregate::Labeled(UserLabel {
        user,
        resolution: hierarchy.resolution(),
        hierarchy,
        coords,
        evidence,
        label_time: extractions.iter().map(|(c, _)| c.created_utc).max().unwrap_or(0),
    }))
}

/// City labels keep their coordinates; coarser labels take the geodesic
/// median of the city-level users beneath them, or the gazetteer node point.
pub fn assign_coordinates(mut labels: Vec<UserLabel>, g: &Gazetteer) -> Vec<UserLabel> {
    let city_points: Vec<(LocationHierarchy, GeoPoint)> = labels
        .iter()
        .filter(|l| l.resolution == Resolution::City)
        .map(|l| (l.hierarchy.clone(), l.coords))
        .collect();
    let mut cache: BTreeMap<LocationHierarchy, Option<GeoPoint>> = BTreeMap::new();
    for label in labels.iter_mut().filter(|l| l.resolution != Resolution::City) {
        let point = *cache.entry(label.hierarchy.clone()).or_insert_with(|| {
            let members: Vec<GeoPoint> = city_points
                .iter()
                .filter(|(h, _)| label.hierarchy.contains(h))
                .map(|(_, p)| *p)
                .collect();
            if members.is_empty() {
                g.node(&label.hierarchy).map(|n| n.coords)
            } else {
                geodesic_median(&members).ok()
            }
        });
        if let Some(p) = point {
            label.coords = p;
        }
    }
    labels
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub comments_read: usize,
    pub comments_in_seeds: usize,
    pub comments_kept: usize,
    pub mentions_found: usize,
    pub mentions_unresolved: usize,
    pub users_labeled: usize,
    pub users_dropped: BTreeMap<String, usize>,
    pub labels_by_resolution: BTreeMap<String, usize>,
}

/// End-to-end labeling with the offline geocoder.
pub fn label_corpus<I>(
    comments: I,
    seeds: &HashSet<String>,
    g: &Gazetteer,
    a: &AbbreviationTable,
    bias: &RegionBias,
) -> Result<(Vec<UserLabel>, LabelStats)>
where
    I: IntoIterator<Item = Result<Comment>>,
{
    label_corpus_with(comments, seeds, g, a, bias, &OfflineGeocoder { gazetteer: g })
}

pub fn label_corpus_with<I>(
    comments: I,
    seeds: &HashSet<String>,
    g: &Gazetteer,
    a: &AbbreviationTable,
    bias: &RegionBias,
    geocoder: &dyn Geocoder,
) -> Result<(Vec<UserLabel>, LabelStats)>
where
    I: IntoIterator<Item = Result<Comment>>,
{
    let mut stats = LabelStats::default();
    let mut kept = Vec::new();
    for (offset, c) in comments.into_iter().enumerate() {
        let c = c.map_err(|e| Error::StreamAt {
            offset,
            source: Box::new(e),
        })?;
        stats.comments_read += 1;
        if !seeds.contains(&c.submission_id) {
            continue;
        }
        stats.comments_in_seeds += 1;
        if filter_comment(&c) {
            kept.push(c);
        }
    }
    stats.comments_kept = kept.len();

    let resolved: Vec<(Comment, Vec<Result<ResolvedLocation>>)> = kept
        .into_par_iter()
        .map(|c| {
            let tokens = tokenize(&c.body);
            let scope = bias.scope_for(&c.subreddit);
            let locs = extract_all(&tokens, g, a)
                .iter()
                .map(|m| geocoder.geocode(m, scope))
                .collect();
            (c, locs)
        })
        .collect();

    let mut by_user: BTreeMap<String, Vec<(Comment, ResolvedLocation)>> = BTreeMap::new();
    let mut unresolved_only: BTreeMap<String, bool> = BTreeMap::new();
    for (c, locs) in resolved {
        for r in locs {
            stats.mentions_found += 1;
            match r {
                Ok(loc) => {
                    unresolved_only.insert(c.user.clone(), false);
                    by_user.entry(c.user.clone()).or_default().push((c.clone(), loc));
                }
                Err(Error::UnresolvableMention(_)) => {
                    stats.mentions_unresolved += 1;
                    unresolved_only.entry(c.user.clone()).or_insert(true);
                }
                Err(e) => return Err(e),
            }
        }
    }
    let unresolvable = unresolved_only.values().filter(|&&only| only).count();
    if unresolvable > 0 {
        stats.users_dropped.insert(DropReason::Unresolvable.to_string(), unresolvable);
    }

    let mut labels = Vec::new();
    for (_, mut ex) in by_user {
        ex.sort_by(|(a, _), (b, _)| (a.created_utc, &a.id).cmp(&(b.created_utc, &b.id)));
        match aggregate_user(&ex)? {
            Aggregate::Labeled(l) => labels.push(l),
            Aggregate::Dropped { reason, .. } => {
                *stats.users_dropped.entry(reason.to_string()).or_default() += 1;
            }
        }
    }
    let labels = assign_coordinates(labels, g);
    stats.users_labeled = labels.len();
    for l in &labels {
        *stats.labels_by_resolution.entry(l.resolution.to_string()).or_default() += 1;
    }
    Ok((labels, stats))
}

/// Flat JSONL form of a label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LabelRecord {
    user: String,
    city: Option<String>,
    county: Option<String>,
    state: Option<String>,
    country: String,
    continent: String,
    resolution: Resolution,
    lat: f64,
    lon: f64,
    #[serde(default)]
    label_time: i64,
    #[serde(default)]
    evidence: Vec<Evidence>,
}

impl From<&UserLabel> for LabelRecord {
    fn from(l: &UserLabel) -> Self {
        let h = l.hierarchy.clone();
        LabelRecord {
            user: l.user.clone(),
            city: h.city,
            county: h.county,
            state: h.state,
            country: h.country,
            continent: h.continent,
            resolution: l.resolution,
            lat: l.coords.lat,
            lon: l.coords.lon,
            label_time: l.label_time,
            evidence: l.evidence.clone(),
        }
    }
}

impl LabelRecord {
    fn into_label(self) -> Result<UserLabel> {
        let hierarchy = LocationHierarchy {
            city: self.city,
            county: self.county,
            state: self.state,
            country: self.country,
            continent: self.continent,
        };
        Ok(UserLabel {
            user: self.user,
            resolution: hierarchy.resolution(),
            hierarchy,
            coords: GeoPoint::new(self.lat, self.lon)?,
            evidence: self.evidence,
            label_time: self.label_time,
        })
    }
}

pub fn write_labels<W: Write>(mut w: W, labels: &[UserLabel]) -> Result<()> {
    for l in labels {
        serde_json::to_writer(&mut w, &LabelRecord::from(l))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_labels<R: BufRead>(r: R) -> Result<Vec<UserLabel>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        out.push(rec.into_label()?);
    }
    Ok(out)
}

pub fn save_labels(path: impl AsRef<Path>, labels: &[UserLabel]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_labels(&mut w, labels)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<UserLabel>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_labels(std::io::BufReader::new(f))
}

/// One submission id per line.
pub fn parse_seeds(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}
