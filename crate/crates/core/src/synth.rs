//! Seeded synthetic corpora with known home locations.
//!
//! Each user lives in one city. Some answer a seed submission with a
//! self-identifying comment; everyone writes history comments drawn from
//! city-specific pseudo-words, city subreddits, and a posting-hour profile
//! shifted by longitude group.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::write_corpus;
use crate::error::{Error, Result};
use crate::extract::{name_key, Comment};
use crate::gazetteer::{AbbreviationTable, Gazetteer, GazetteerEntry, LocationHierarchy, Resolution};
use crate::geo::GeoPoint;

pub const DEFAULT_CITIES: &[&str] = &[
    "new york city/new york/united states",
    "los angeles/california/united states",
    "chicago/illinois/united states",
    "houston/texas/united states",
    "seattle/washington/united states",
    "london/england/united kingdom",
    "paris/île-de-france/france",
    "berlin/berlin/germany",
    "madrid/madrid/spain",
    "rome/lazio/italy",
    "denver/colorado/united states",
    "miami/florida/united states",
    "toronto/ontario/canada",
    "stockholm/stockholm/sweden",
    "warsaw/masovia/poland",
    "tokyo/tokyo/japan",
    "sydney/new south wales/australia",
    "mexico city/mexico city/mexico",
    "atlanta/georgia/united states",
    "moscow/moscow/russia",
];

const GENERIC_SUBREDDITS: &[&str] = &[
    "askreddit", "pics", "funny", "gaming", "worldnews", "movies", "music", "todayilearned",
    "science", "aww", "news", "videos", "books", "sports", "technology", "food", "diy", "art",
    "fitness", "travel", "history", "space", "gadgets", "television", "photography", "cooking",
    "games", "dataisbeautiful", "explainlikeimfive", "showerthoughts", "nottheonion", "jokes",
    "lifeprotips", "personalfinance", "programming", "askscience", "earthporn", "mildlyinteresting",
    "documentaries", "futurology",
];

const NEUTRAL_REPLIES: &[&str] = &[
    "Great question honestly",
    "Nowhere interesting to be honest",
    "This thread is fun to read",
    "Somewhere quiet and boring",
    "Good question but I would rather not say",
];

const SYLLABLES: &[&str] = &[
    "ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du", "fa", "fe", "fi", "fo", "fu", "ga", "ge",
    "gi", "go", "gu", "ka", "ke", "ki", "ko", "ku", "la", "le", "li", "lo", "lu", "ma", "me", "mi", "mo",
    "mu", "na", "ne", "ni", "no", "nu", "pa", "pe", "pi", "po", "pu", "ra", "re", "ri", "ro", "ru", "sa",
    "se", "si", "so", "su", "ta", "te", "ti", "to", "tu", "va", "ve", "vi", "vo", "vu", "za", "ze", "zi",
    "zo", "zu",
];

const BASE_TIME: i64 = 1_500_000_000;
const DAY: i64 = 86_400;

fn default_generic_vocab() -> usize {
    300
}
fn default_comments() -> usize {
    20
}
fn default_support() -> usize {
    1
}
fn default_local_rate() -> f64 {
    0.3
}
fn default_hour_spread() -> f64 {
    2.0
}

/// Generator parameters. Only the first seven fields are required in a spec
/// file; the rest default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_cities: usize,
    pub users_per_city: usize,
    /// Number of location-bearing pseudo-words.
    pub vocab_size: usize,
    /// Probability that a user self-identifies in a seed submission.
    pub toponym_rate: f64,
    /// UTC peak-hour offset between the westernmost and easternmost longitude groups.
    pub tau_shift_hours: f64,
    /// Probability that a history comment is posted in the home city's subreddit.
    pub group_predictiveness: f64,
    pub seed: u64,
    #[serde(default = "default_generic_vocab")]
    pub generic_vocab_size: usize,
    #[serde(default = "default_comments")]
    pub comments_per_user: usize,
    /// Each local word is used in 1..=max_word_support cities.
    #[serde(default = "default_support")]
    pub max_word_support: usize,
    /// Share of history tokens drawn from the home city's local words.
    #[serde(default = "default_local_rate")]
    pub local_word_rate: f64,
    #[serde(default = "default_hour_spread")]
    pub hour_spread: f64,
    /// Uniform jitter (degrees) of true user coordinates around the city.
    #[serde(default)]
    pub location_jitter_deg: f64,
    /// Share of self-identifications made at state level.
    #[serde(default)]
    pub state_level_rate: f64,
    /// Share made at country level.
    #[serde(default)]
    pub country_level_rate: f64,
    /// Probability of an extra noise comment in a seed submission.
    #[serde(default)]
    pub noise_rate: f64,
    /// Probability that a self-identifying user also names a different city.
    #[serde(default)]
    pub conflict_rate: f64,
    /// Shifts pseudo-word names; corpora with different offsets share fewer words.
    #[serde(default)]
    pub vocab_offset: usize,
    /// `city/state/country` fragments; defaults to the first `n_cities` of [`DEFAULT_CITIES`].
    #[serde(default)]
    pub cities: Vec<String>,
}

impl SyntheticSpec {
    pub fn new(n_cities: usize, users_per_city: usize, seed: u64) -> Self {
        SyntheticSpec {
            n_cities,
            users_per_city,
            vocab_size: 20 * n_cities,
            toponym_rate: 1.0,
            tau_shift_hours: 0.0,
            group_predictiveness: 0.3,
            seed,
            generic_vocab_size: default_generic_vocab(),
            comments_per_user: default_comments(),
            max_word_support: default_support(),
            local_word_rate: default_local_rate(),
            hour_spread: default_hour_spread(),
            location_jitter_deg: 0.0,
            state_level_rate: 0.0,
            country_level_rate: 0.0,
            noise_rate: 0.0,
            conflict_rate: 0.0,
            vocab_offset: 0,
            cities: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("synthetic spec: {m}")));
        if self.n_cities == 0 || self.users_per_city == 0 || self.vocab_size == 0 {
            return bad("n_cities, users_per_city and vocab_size must be positive");
        }
        if self.comments_per_user == 0 || self.generic_vocab_size == 0 {
            return bad("comments_per_user and generic_vocab_size must be positive");
        }
        if self.max_word_support == 0 {
            return bad("max_word_support must be positive");
        }
        let rates = [
            ("toponym_rate", self.toponym_rate),
            ("group_predictiveness", self.group_predictiveness),
            ("local_word_rate", self.local_word_rate),
            ("state_level_rate", self.state_level_rate),
            ("country_level_rate", self.country_level_rate),
            ("noise_rate", self.noise_rate),
            ("conflict_rate", self.conflict_rate),
        ];
        for (name, r) in rates {
            if !(0.0..=1.0).contains(&r) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.state_level_rate + self.country_level_rate > 1.0 {
            return bad("state_level_rate + country_level_rate exceeds 1");
        }
        for (name, v) in [
            ("tau_shift_hours", self.tau_shift_hours),
            ("hour_spread", self.hour_spread),
            ("location_jitter_deg", self.location_jitter_deg),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(&format!("{name} must be finite and non-negative"));
            }
        }
        let n_available = if self.cities.is_empty() { DEFAULT_CITIES.len() } else { self.cities.len() };
        if self.n_cities > n_available {
            return bad(&format!("n_cities = {} but only {n_available} cities listed", self.n_cities));
        }
        Ok(())
    }
}

/// Ground truth for one synthetic user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub user: String,
    pub lat: f64,
    pub lon: f64,
    pub home: LocationHierarchy,
    /// What labeling should produce; `None` when the user never self-identifies
    /// consistently.
    pub expected: Option<LocationHierarchy>,
    pub expected_resolution: Option<Resolution>,
}

impl TruthRecord {
    pub fn point(&self) -> GeoPoint {
        GeoPoint { lat: self.lat, lon: self.lon }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub comments: Vec<Comment>,
    pub truth: Vec<TruthRecord>,
    pub seeds: Vec<String>,
    /// Local words per city, by city index.
    pub local_words: Vec<Vec<String>>,
}

/// Pseudo-word for index `i`: three syllables, so names never collide across indices.
pub fn pseudo_word(i: usize) -> String {
    let n = SYLLABLES.len();
    let mut s = String::new();
    let mut k = i;
    for _ in 0..3 {
        s.push_str(SYLLABLES[k % n]);
        k /= n;
    }
    if k > 0 {
        s.push_str(&pseudo_word(k - 1));
    }
    s
}

struct City<'a> {
    entry: &'a GazetteerEntry,
    slug: String,
    group: usize,
}

fn title(s: &str) -> String {
    s.split(' ')
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(f) => f.to_uppercase().chain(c).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Longitude groups: cities sorted by longitude split wherever consecutive
/// longitudes are more than 30 degrees apart.
fn longitude_groups(lons: &[f64]) -> (Vec<usize>, usize) {
    let mut order: Vec<usize> = (0..lons.len()).collect();
    order.sort_by(|&a, &b| lons[a].total_cmp(&lons[b]));
    let mut groups = vec![0; lons.len()];
    let mut g = 0;
    for w in order.windows(2) {
        if lons[w[1]] - lons[w[0]] > 30.0 {
            g += 1;
        }
        groups[w[1]] = g;
    }
    (groups, g + 1)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn pick_word_names(spec: &SyntheticSpec, g: &Gazetteer, a: &AbbreviationTable) -> (Vec<String>, Vec<String>) {
    let reserved: HashSet<String> = crate::data::default_stopwords()
        .into_iter()
        .chain(crate::gazetteer::parse_word_list(crate::data::COMMON_WORDS))
        .collect();
    let usable = |w: &String| {
        !reserved.contains(w) && g.ids_for_key(w).is_empty() && a.get(w).is_none() && !crate::extract::FILTER_TERMS.contains(&w.as_str())
    };
    let mut local = Vec::with_capacity(spec.vocab_size);
    let mut i = spec.vocab_offset;
    while local.len() < spec.vocab_size {
        let w = pseudo_word(i);
        if usable(&w) {
            local.push(w);
        }
        i += 1;
    }
    // Generic words live in a disjoint index range shared by every corpus.
    let mut generic = Vec::with_capacity(spec.generic_vocab_size);
    let mut j = 10_000_000;
    while generic.len() < spec.generic_vocab_size {
        let w = pseudo_word(j);
        if usable(&w) {
            generic.push(w);
        }
        j += 1;
    }
    (local, generic)
}

fn self_id_text(rng: &mut ChaCha8Rng, city: &City, level: Resolution, g: &Gazetteer, state_abbr: &BTreeMap<LocationHierarchy, String>) -> String {
    let h = &city.entry.hierarchy;
    let country = if h.country == "united states" { "USA".to_string() } else { title(&h.country) };
    match level {
        Resolution::Country => match rng.random_range(0..2) {
            0 => format!("I'm from {}.", title(&h.country)),
            _ => format!("Somewhere in {}", title(&h.country)),
        },
        Resolution::State | Resolution::County => {
            let state = title(h.state.as_deref().unwrap_or(&h.country));
            match rng.random_range(0..2) {
                0 => format!("Somewhere in {state}!"),
                _ => format!("I grew up and still live in {state}"),
            }
        }
        Resolution::City => {
            let name = title(&city.entry.name);
            let unique = g.ids_for_key(&name_key(&name)).len() == 1;
            let state = h.truncated(Resolution::State);
            let qualifier = state_abbr
                .get(&state)
                .map(|s| s.to_uppercase())
                .unwrap_or_else(|| title(h.state.as_deref().unwrap_or(&h.country)));
            let n_templates = if unique { 4 } else { 2 };
            match rng.random_range(0..n_templates) {
                // "Berlin, Berlin" reads as two mentions, not a qualified one.
                0 if qualifier != name => format!("{name}, {qualifier}"),
                0 => format!("I live in {name}, {country} these days"),
                1 => format!("I live in {name}, {country} these days"),
                2 => format!("{name} here!"),
                _ => format!("Greetings from {name}"),
            }
        }
    }
}

/// Builds the corpus in memory. Output depends only on `spec`, `g`, and `a`.
pub fn generate(spec: &SyntheticSpec, g: &Gazetteer, a: &AbbreviationTable) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let fragments: Vec<&str> = if spec.cities.is_empty() {
        DEFAULT_CITIES.to_vec()
    } else {
        spec.cities.iter().map(String::as_str).collect()
    };
    let mut entries = Vec::new();
    for f in &fragments[..spec.n_cities] {
        let h = LocationHierarchy::parse_fragment(f)
            .filter(|h| h.resolution() == Resolution::City)
            .ok_or_else(|| Error::InvalidArgument(format!("city fragment {f:?} is not city/state/country")))?;
        let e = g
            .cities()
            .iter()
            .find(|e| e.hierarchy == h)
            .ok_or_else(|| Error::InvalidArgument(format!("city {f:?} not in gazetteer")))?;
        entries.push(e);
    }
    let lons: Vec<f64> = entries.iter().map(|e| e.coords.lon).collect();
    let (groups, n_groups) = longitude_groups(&lons);
    let cities: Vec<City> = entries
        .iter()
        .zip(&groups)
        .map(|(e, &group)| City {
            entry: e,
            slug: e.name.to_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect(),
            group,
        })
        .collect();
    let state_abbr: BTreeMap<LocationHierarchy, String> = {
        let mut m = BTreeMap::new();
        for (abbr, h) in a.iter() {
            if h.resolution() == Resolution::State && abbr.len() == 2 {
                m.entry(h.clone()).or_insert_with(|| abbr.clone());
            }
        }
        m
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (local_names, generic) = pick_word_names(spec, g, a);
    let stopwords = crate::data::default_stopwords();

    let n_cities = cities.len();
    let mut local_words: Vec<Vec<String>> = vec![Vec::new(); n_cities];
    let mut city_ids: Vec<usize> = (0..n_cities).collect();
    for (i, w) in local_names.iter().enumerate() {
        let support = rng.random_range(1..=spec.max_word_support.min(n_cities));
        city_ids.shuffle(&mut rng);
        // Round-robin on the first slot keeps every city supplied with words.
        let first = i % n_cities;
        local_words[first].push(w.clone());
        for &c in city_ids.iter().filter(|&&c| c != first).take(support - 1) {
            local_words[c].push(w.clone());
        }
    }

    let n_seeds = 3;
    let seeds: Vec<String> = (0..n_seeds).map(|k| format!("seed{k}")).collect();
    let mut comments = Vec::new();
    let mut truth = Vec::new();
    let mut next_id = 0usize;
    let mut new_id = || {
        next_id += 1;
        format!("c{next_id:07}")
    };

    let n_users = n_cities * spec.users_per_city;
    for u in 0..n_users {
        let c = u % n_cities;
        let city = &cities[c];
        let user = format!("user{u:05}");
        let seed_sub = seeds[rng.random_range(0..n_seeds)].clone();
        let label_time = BASE_TIME + rng.random_range(0..30 * DAY);
        let mut expected = None;

        if rng.random::<f64>() < spec.toponym_rate {
            let r: f64 = rng.random();
            let level = if r < spec.country_level_rate {
                Resolution::Country
            } else if r < spec.country_level_rate + spec.state_level_rate {
                Resolution::State
            } else {
                Resolution::City
            };
            let text = self_id_text(&mut rng, city, level, g, &state_abbr);
            comments.push(Comment {
                id: new_id(),
                user: user.clone(),
                body: text,
                subreddit: "askreddit".into(),
                created_utc: label_time,
                is_reply: false,
                submission_id: seed_sub.clone(),
            });
            expected = Some(city.entry.hierarchy.truncated(level));
            if rng.random::<f64>() < spec.conflict_rate && n_cities > 1 {
                let other = &cities[(c + 1 + rng.random_range(0..n_cities - 1)) % n_cities];
                let body = self_id_text(&mut rng, other, Resolution::City, g, &state_abbr);
                comments.push(Comment {
                    id: new_id(),
                    user: user.clone(),
                    body,
                    subreddit: "askreddit".into(),
                    created_utc: label_time - rng.random_range(1..DAY),
                    is_reply: false,
                    submission_id: seeds[rng.random_range(0..n_seeds)].clone(),
                });
                // Disagreeing evidence keeps only the shared part, or nothing across countries.
                expected = expected.and_then(|h: LocationHierarchy| h.shared_prefix(&other.entry.hierarchy));
            }
        }
        if rng.random::<f64>() < spec.noise_rate {
            let other = &cities[rng.random_range(0..n_cities)];
            let (body, is_reply) = match rng.random_range(0..3) {
                0 => (format!("{} is great this time of year", title(&other.entry.name)), true),
                1 => (format!("I was born in {} but left long ago", title(&other.entry.name)), false),
                _ => (NEUTRAL_REPLIES.choose(&mut rng).unwrap().to_string(), false),
            };
            comments.push(Comment {
                id: new_id(),
                user: user.clone(),
                body,
                subreddit: "askreddit".into(),
                created_utc: label_time - rng.random_range(1..DAY),
                is_reply,
                submission_id: seeds[rng.random_range(0..n_seeds)].clone(),
            });
        }

        let shift = if n_groups > 1 {
            spec.tau_shift_hours * city.group as f64 / (n_groups - 1) as f64
        } else {
            0.0
        };
        let user_peak = 20.0 - shift + 0.5 * normal(&mut rng);
        for k in 0..spec.comments_per_user {
            // Roughly one comment in ten falls after the feature cutoff.
            let day = if k % 10 == 9 {
                label_time / DAY + rng.random_range(35..60)
            } else {
                label_time / DAY - rng.random_range(0..90)
            };
            let hour = (user_peak + spec.hour_spread * normal(&mut rng)).round().rem_euclid(24.0) as i64;
            let created_utc = day * DAY + hour * 3_600 + rng.random_range(0..3_600);
            let n_tokens = rng.random_range(6..=14);
            let mut words = Vec::with_capacity(n_tokens);
            for _ in 0..n_tokens {
                let r: f64 = rng.random();
                let w = if r < spec.local_word_rate {
                    local_words[c].choose(&mut rng).unwrap()
                } else if r < spec.local_word_rate + (1.0 - spec.local_word_rate) * 0.5 {
                    stopwords.choose(&mut rng).unwrap()
                } else {
                    // Zipf-like skew keeps a few generic words very frequent.
                    let i = ((generic.len() as f64).powf(rng.random::<f64>()) as usize).saturating_sub(1);
                    &generic[i.min(generic.len() - 1)]
                };
                words.push(w.as_str());
            }
            let subreddit = if rng.random::<f64>() < spec.group_predictiveness {
                city.slug.clone()
            } else {
                let i = ((GENERIC_SUBREDDITS.len() as f64).powf(rng.random::<f64>()) as usize).saturating_sub(1);
                GENERIC_SUBREDDITS[i.min(GENERIC_SUBREDDITS.len() - 1)].to_string()
            };
            comments.push(Comment {
                id: new_id(),
                user: user.clone(),
                body: words.join(" "),
                subreddit,
                created_utc,
                is_reply: rng.random::<f64>() < 0.5,
                submission_id: format!("t{}", rng.random_range(0..100_000)),
            });
        }

        let jitter = spec.location_jitter_deg;
        let (dlat, dlon) = if jitter > 0.0 {
            (rng.random_range(-jitter..=jitter), rng.random_range(-jitter..=jitter))
        } else {
            (0.0, 0.0)
        };
        let p = city.entry.coords;
        truth.push(TruthRecord {
            user,
            lat: (p.lat + dlat).clamp(-90.0, 90.0),
            lon: ((p.lon + dlon + 180.0).rem_euclid(360.0)) - 180.0,
            home: city.entry.hierarchy.clone(),
            expected_resolution: expected.as_ref().map(LocationHierarchy::resolution),
            expected,
        });
    }
    comments.sort_by(|x, y| (x.created_utc, &x.id).cmp(&(y.created_utc, &y.id)));
    Ok(SyntheticCorpus {
        comments,
        truth,
        seeds,
        local_words,
    })
}

pub fn write_truth<W: Write>(mut w: W, truth: &[TruthRecord]) -> Result<()> {
    for t in truth {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<Vec<TruthRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(i + 1, e.to_string())))
        .collect()
}

/// Paths written by [`generate_synthetic`].
pub struct SyntheticFiles {
    pub corpus: std::path::PathBuf,
    pub truth: std::path::PathBuf,
    pub seeds: std::path::PathBuf,
}

/// Writes `corpus.jsonl`, `truth.jsonl` and `seeds.txt` into `out_dir`.
pub fn generate_synthetic(spec: &SyntheticSpec, g: &Gazetteer, a: &AbbreviationTable, out_dir: impl AsRef<Path>) -> Result<SyntheticFiles> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let corpus = generate(spec, g, a)?;
    let files = SyntheticFiles {
        corpus: dir.join("corpus.jsonl"),
        truth: dir.join("truth.jsonl"),
        seeds: dir.join("seeds.txt"),
    };
    let mut buf = Vec::new();
    write_corpus(&mut buf, &corpus.comments)?;
    std::fs::write(&files.corpus, &buf).map_err(|e| Error::io(&files.corpus, e))?;
    buf.clear();
    write_truth(&mut buf, &corpus.truth)?;
    std::fs::write(&files.truth, &buf).map_err(|e| Error::io(&files.truth, e))?;
    let seeds = corpus.seeds.join("\n") + "\n";
    std::fs::write(&files.seeds, seeds).map_err(|e| Error::io(&files.seeds, e))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::default_gazetteer;

    #[test]
    fn pseudo_words_are_distinct() {
        let words: HashSet<String> = (0..5000).map(pseudo_word).collect();
        assert_eq!(words.len(), 5000);
    }

    #[test]
    fn default_cities_resolve() {
        let (g, _) = default_gazetteer();
        for f in DEFAULT_CITIES {
            let h = LocationHierarchy::parse_fragment(f).unwrap();
            assert!(g.cities().iter().any(|e| e.hierarchy == h), "{f}");
        }
    }

    #[test]
    fn longitude_groups_split_on_gaps() {
        let (groups, n) = longitude_groups(&[-122.0, 13.0, -74.0, -0.1, -95.0]);
        assert_eq!(n, 2);
        assert_eq!(groups, vec![0, 1, 0, 1, 0]);
        assert_eq!(longitude_groups(&[-122.0, -95.0, -74.0]).1, 1);
    }

    #[test]
    fn same_seed_same_corpus() {
        let (g, a) = default_gazetteer();
        let mut spec = SyntheticSpec::new(4, 5, 7);
        spec.noise_rate = 0.3;
        let x = generate(&spec, &g, &a).unwrap();
        let y = generate(&spec, &g, &a).unwrap();
        assert_eq!(x, y);
        spec.seed = 8;
        assert_ne!(generate(&spec, &g, &a).unwrap().comments, x.comments);
    }

    #[test]
    fn invalid_specs_rejected() {
        let (g, a) = default_gazetteer();
        let mut spec = SyntheticSpec::new(0, 5, 1);
        assert!(generate(&spec, &g, &a).is_err());
        spec.n_cities = 2;
        spec.toponym_rate = 1.5;
        assert!(generate(&spec, &g, &a).is_err());
        spec.toponym_rate = 0.5;
        spec.n_cities = DEFAULT_CITIES.len() + 1;
        assert!(generate(&spec, &g, &a).is_err());
    }

    #[test]
    fn words_avoid_gazetteer_and_stopwords() {
        let (g, a) = default_gazetteer();
        let spec = SyntheticSpec::new(5, 2, 3);
        let corpus = generate(&spec, &g, &a).unwrap();
        let stop: HashSet<String> = crate::data::default_stopwords().into_iter().collect();
        for words in &corpus.local_words {
            assert!(!words.is_empty());
            for w in words {
                assert!(g.ids_for_key(w).is_empty() && !stop.contains(w));
            }
        }
    }
}
