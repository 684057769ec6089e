//! Place-name knowledge base: GeoNames-style city rows, the derived
//! state/country nodes, and the abbreviation table.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::sync::OnceLock;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::name_key;
use crate::geo::{weighted_geodesic_median, GeoPoint};

pub const DEFAULT_MIN_POPULATION: u64 = 15_000;
pub const UNKNOWN_CONTINENT: &str = "unknown";

/// Granularity of a location, finest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    City,
    County,
    State,
    Country,
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Resolution::City => "city",
            Resolution::County => "county",
            Resolution::State => "state",
            Resolution::Country => "country",
        };
        f.write_str(s)
    }
}

/// Nominal city → county → state → country → continent chain. All names lowercase.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LocationHierarchy {
    pub city: Option<String>,
    pub county: Option<String>,
    pub state: Option<String>,
    pub country: String,
    pub continent: String,
}

impl LocationHierarchy {
    pub fn country(country: &str) -> Self {
        let country = country.trim().to_lowercase();
        LocationHierarchy {
            continent: countries().continent_of(&country).to_string(),
            country,
            ..Default::default()
        }
    }

    pub fn resolution(&self) -> Resolution {
        if self.city.is_some() {
            Resolution::City
        } else if self.county.is_some() {
            Resolution::County
        } else if self.state.is_some() {
            Resolution::State
        } else {
            Resolution::Country
        }
    }

    /// Levels from coarsest (continent) to finest (city).
    pub fn levels(&self) -> [Option<&str>; 5] {
        [
            Some(self.continent.as_str()),
            Some(self.country.as_str()),
            self.state.as_deref(),
            self.county.as_deref(),
            self.city.as_deref(),
        ]
    }

    /// True when every level set in `self` matches `other`, i.e. `other` lies
    /// at or below this node.
    pub fn contains(&self, other: &LocationHierarchy) -> bool {
        self.levels()
            .iter()
            .zip(other.levels().iter())
            .all(|(a, b)| a.is_none() || a == b)
    }

    /// Strict ancestor: contains `other` and is coarser than it.
    pub fn is_ancestor_of(&self, other: &LocationHierarchy) -> bool {
        self.resolution() > other.resolution() && self.contains(other)
    }

    /// Deepest chain shared by both, compared from the continent downward.
    /// `None` when the two disagree at country level or above.
    pub fn shared_prefix(&self, other: &LocationHierarchy) -> Option<LocationHierarchy> {
        if self.continent != other.continent || self.country != other.country {
            return None;
        }
        let mut out = LocationHierarchy {
            continent: self.continent.clone(),
            country: self.country.clone(),
            ..Default::default()
        };
        if self.state != other.state {
            return Some(out);
        }
        out.state = self.state.clone();
        if self.county != other.county {
            return Some(out);
        }
        out.county = self.county.clone();
        if self.city == other.city {
            out.city = self.city.clone();
        }
        Some(out)
    }

    /// Copy with every level finer than `res` cleared.
    pub fn truncated(&self, res: Resolution) -> LocationHierarchy {
        let mut h = self.clone();
        if res > Resolution::City {
            h.city = None;
        }
        if res > Resolution::County {
            h.county = None;
        }
        if res > Resolution::State {
            h.state = None;
        }
        h
    }

    /// Parses `city/state/country` style fragments, read right to left; a
    /// fourth slot is `city/county/state/country`. Empty slots are allowed.
    pub fn parse_fragment(s: &str) -> Option<LocationHierarchy> {
        let parts: Vec<String> = s.split('/').map(|p| p.trim().to_lowercase()).collect();
        let mut it = parts.iter().rev();
        let country = it.next().filter(|c| !c.is_empty())?.clone();
        let opt = |v: Option<&String>| v.filter(|x| !x.is_empty()).cloned();
        let state = opt(it.next());
        let (county, city) = match parts.len() {
            0..=2 => (None, None),
            3 => (None, opt(it.next())),
            _ => {
                let county = opt(it.next());
                (county, opt(it.next()))
            }
        };
        let mut h = LocationHierarchy::country(&country);
        h.state = state;
        h.county = county;
        h.city = city;
        Some(h)
    }
}

impl fmt::Display for LocationHierarchy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [
            self.city.as_deref(),
            self.county.as_deref(),
            self.state.as_deref(),
            Some(self.country.as_str()),
        ]
        .into_iter()
        .flatten()
        .collect();
        f.write_str(&parts.join(", "))
    }
}

/// ISO country codes with names and continents (bundled table).
pub struct CountryTable {
    by_code: HashMap<String, (String, String)>,
    by_name: HashMap<String, (String, String)>,
}

impl CountryTable {
    fn parse(text: &str) -> Self {
        let mut by_code = HashMap::new();
        let mut by_name = HashMap::new();
        for line in text.lines() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 3 {
                continue;
            }
            let code = cols[0].trim().to_uppercase();
            let name = cols[1].trim().to_lowercase();
            let continent = cols[2].trim().to_lowercase();
            by_code.insert(code.clone(), (name.clone(), continent.clone()));
            by_name.insert(name, (code, continent));
        }
        CountryTable { by_code, by_name }
    }

    pub fn name_of(&self, code: &str) -> Option<&str> {
        self.by_code
            .get(&code.trim().to_uppercase())
            .map(|(n, _)| n.as_str())
    }

    pub fn code_of(&self, name: &str) -> Option<&str> {
        self.by_name.get(name).map(|(c, _)| c.as_str())
    }

    pub fn continent_of(&self, name: &str) -> &str {
        self.by_name
            .get(name)
            .map(|(_, c)| c.as_str())
            .unwrap_or(UNKNOWN_CONTINENT)
    }
}

pub fn countries() -> &'static CountryTable {
    static TABLE: OnceLock<CountryTable> = OnceLock::new();
    TABLE.get_or_init(|| CountryTable::parse(crate::data::COUNTRIES))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazetteerEntry {
    /// Source row id (GeoNames id); 0 for derived state/country nodes.
    pub id: u64,
    pub name: String,
    pub alt_names: Vec<String>,
    pub hierarchy: LocationHierarchy,
    pub population: u64,
    pub coords: GeoPoint,
    pub country_code: String,
}

impl GazetteerEntry {
    pub fn resolution(&self) -> Resolution {
        self.hierarchy.resolution()
    }

    fn priority_key(&self) -> impl Ord + '_ {
        (
            Reverse(self.population),
            self.country_code.as_str(),
            &self.hierarchy,
            self.id,
        )
    }
}

/// Counters from reading a place file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows: usize,
    pub kept: usize,
    pub below_population: usize,
    pub malformed: Vec<(usize, String)>,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub min_population: u64,
    pub alt_names: bool,
    /// `CC.code → name` map for the full GeoNames layout, whose admin1 column is a code.
    pub admin1_names: Option<HashMap<String, String>>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            min_population: DEFAULT_MIN_POPULATION,
            alt_names: true,
            admin1_names: None,
        }
    }
}

/// Immutable place index.
#[derive(Debug, Clone)]
pub struct Gazetteer {
    entries: Vec<GazetteerEntry>,
    n_cities: usize,
    name_index: HashMap<String, Vec<usize>>,
    hierarchy_index: HashMap<String, BTreeSet<String>>,
    node_index: HashMap<LocationHierarchy, usize>,
    excluded: BTreeSet<String>,
}

pub fn load_gazetteer(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<(Gazetteer, LoadReport)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Gazetteer::from_reader(file, opts)
}

/// Reads `CC.code<TAB>name...` lines (GeoNames admin1CodesASCII layout).
pub fn load_admin1_names(path: impl AsRef<Path>) -> Result<HashMap<String, String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter_map(|l| {
            let mut cols = l.split('\t');
            Some((cols.next()?.to_string(), cols.next()?.to_lowercase()))
        })
        .collect())
}

impl Gazetteer {
    pub fn from_reader<R: Read>(reader: R, opts: &LoadOptions) -> Result<(Gazetteer, LoadReport)> {
        let mut report = LoadReport::default();
        let mut cities = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let line_no = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            report.rows += 1;
            match parse_row(&line, line_no, opts) {
                Ok(entry) if entry.population < opts.min_population => report.below_population += 1,
                Ok(entry) => cities.push(entry),
                Err(e) => {
                    warn!("skipping gazetteer row: {e}");
                    report.malformed.push((line_no, e.to_string()));
                }
            }
        }
        report.kept = cities.len();
        Ok((Gazetteer::from_cities(cities, BTreeSet::new()), report))
    }

    /// Builds all indices from city rows. Derived state and country nodes get
    /// the population-weighted geodesic median of their cities as coordinates.
    pub fn from_cities(mut cities: Vec<GazetteerEntry>, excluded: BTreeSet<String>) -> Gazetteer {
        cities.sort_by(|a, b| {
            (a.id, &a.hierarchy, &a.name)
                .cmp(&(b.id, &b.hierarchy, &b.name))
                .then(a.coords.total_cmp(&b.coords))
        });
        let n_cities = cities.len();

        let mut groups: BTreeMap<LocationHierarchy, Vec<usize>> = BTreeMap::new();
        for (i, c) in cities.iter().enumerate() {
            let h = &c.hierarchy;
            for res in [Resolution::County, Resolution::State, Resolution::Country] {
                let node = h.truncated(res);
                if node.resolution() == res {
                    groups.entry(node).or_default().push(i);
                }
            }
        }
        let mut entries = cities;
        let mut node_index = HashMap::new();
        for (node, members) in groups {
            let weighted: Vec<(GeoPoint, f64)> = members
                .iter()
                .map(|&i| (entries[i].coords, entries[i].population.max(1) as f64))
                .collect();
            let coords = match weighted_geodesic_median(&weighted) {
                Ok(t) => t.point,
                Err(_) => continue,
            };
            let population = members.iter().map(|&i| entries[i].population).sum();
            let name = match node.resolution() {
                Resolution::County => node.county.clone().unwrap_or_default(),
                Resolution::State => node.state.clone().unwrap_or_default(),
                _ => node.country.clone(),
            };
            let country_code = entries[members[0]].country_code.clone();
            node_index.insert(node.clone(), entries.len());
            entries.push(GazetteerEntry {
                id: 0,
                name,
                alt_names: Vec::new(),
                hierarchy: node,
                population,
                coords,
                country_code,
            });
        }

        let mut name_index: HashMap<String, Vec<usize>> = HashMap::new();
        let mut hierarchy_index: HashMap<String, BTreeSet<String>> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            let mut keys: BTreeSet<String> = BTreeSet::new();
            keys.insert(name_key(&e.name));
            for alt in &e.alt_names {
                keys.insert(name_key(alt));
            }
            for k in keys {
                if !k.is_empty() && !excluded.contains(&k) {
                    name_index.entry(k).or_default().push(i);
                }
            }
            let levels = e.hierarchy.levels();
            let chain: Vec<&str> = levels.iter().flatten().copied().collect();
            for (depth, child) in chain.iter().enumerate().skip(1) {
                for parent in &chain[..depth] {
                    hierarchy_index
                        .entry(parent.to_string())
                        .or_default()
                        .insert(child.to_string());
                }
            }
        }
        for ids in name_index.values_mut() {
            ids.sort_by(|&a, &b| entries[a].priority_key().cmp(&entries[b].priority_key()));
        }

        Gazetteer {
            entries,
            n_cities,
            name_index,
            hierarchy_index,
            node_index,
            excluded,
        }
    }

    pub fn entries(&self) -> &[GazetteerEntry] {
        &self.entries
    }

    pub fn entry(&self, id: usize) -> &GazetteerEntry {
        &self.entries[id]
    }

    pub fn cities(&self) -> &[GazetteerEntry] {
        &self.entries[..self.n_cities]
    }

    pub fn city_count(&self) -> usize {
        self.n_cities
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn excluded_names(&self) -> &BTreeSet<String> {
        &self.excluded
    }

    /// Entry ids for an exact (already-joined) name key, best prior first.
    pub fn ids_for_key(&self, key: &str) -> &[usize] {
        self.name_index.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn lookup_ids(&self, tokens: &[String]) -> &[usize] {
        self.ids_for_key(&tokens.join(" "))
    }

    /// All entries whose name or alternate name equals the joined tokens,
    /// ordered by descending population.
    pub fn lookup(&self, tokens: &[String]) -> Vec<&GazetteerEntry> {
        self.lookup_ids(tokens).iter().map(|&i| &self.entries[i]).collect()
    }

    pub fn contains_key(&self, tokens: &[String]) -> bool {
        !self.lookup_ids(tokens).is_empty()
    }

    /// Derived state/county/country node for a city-free hierarchy.
    pub fn node(&self, h: &LocationHierarchy) -> Option<&GazetteerEntry> {
        self.node_index.get(h).map(|&i| &self.entries[i])
    }

    pub fn node_id(&self, h: &LocationHierarchy) -> Option<usize> {
        self.node_index.get(h).copied()
    }

    /// Names known to sit somewhere below `parent` in a GeoNames chain.
    pub fn children_of(&self, parent: &str) -> Option<&BTreeSet<String>> {
        self.hierarchy_index.get(parent)
    }

    pub fn is_known_child(&self, parent: &str, child: &str) -> bool {
        self.hierarchy_index
            .get(parent)
            .is_some_and(|c| c.contains(child))
    }

    /// Removes every indexed name that exactly equals a common word. Returns
    /// the reduced gazetteer and the sorted list of names removed.
    pub fn filter_common_words<S: AsRef<str>>(&self, common_words: &[S]) -> (Gazetteer, Vec<String>) {
        let removed: BTreeSet<String> = common_words
            .iter()
            .map(|w| w.as_ref().trim().to_lowercase())
            .filter(|w| self.name_index.contains_key(w))
            .collect();
        if removed.is_empty() {
            return (self.clone(), Vec::new());
        }
        let mut g = self.clone();
        for w in &removed {
            g.name_index.remove(w);
            g.excluded.insert(w.clone());
        }
        (g, removed.into_iter().collect())
    }

    pub fn to_bundle(&self, abbreviations: &AbbreviationTable, min_population: u64) -> GazetteerBundle {
        GazetteerBundle {
            format_version: BUNDLE_VERSION,
            min_population,
            cities: self.cities().to_vec(),
            excluded_names: self.excluded.iter().cloned().collect(),
            abbreviations: abbreviations.clone(),
        }
    }
}

fn parse_row(line: &str, line_no: usize, opts: &LoadOptions) -> Result<GazetteerEntry> {
    let cols: Vec<&str> = line.split('\t').collect();
    // Full GeoNames dump rows have 19 columns; the compact layout has 9 (+ optional admin2 name).
    let (id, name, alts, lat, lon, cc, admin1, pop, admin2) = if cols.len() >= 19 {
        let a1 = match &opts.admin1_names {
            Some(m) => m
                .get(&format!("{}.{}", cols[8], cols[10]))
                .cloned()
                .unwrap_or_else(|| cols[10].to_lowercase()),
            None => cols[10].to_lowercase(),
        };
        (cols[0], cols[1], cols[3], cols[4], cols[5], cols[8], a1, cols[14], None)
    } else if cols.len() >= 9 {
        let a2 = cols.get(9).map(|s| s.trim()).filter(|s| !s.is_empty());
        (
            cols[0],
            cols[1],
            cols[2],
            cols[3],
            cols[4],
            cols[5],
            cols[6].to_lowercase(),
            cols[7],
            a2.map(str::to_lowercase),
        )
    } else {
        return Err(Error::parse(line_no, format!("expected 9 or 19 columns, found {}", cols.len())));
    };

    let name = name.trim().to_lowercase();
    if name.is_empty() {
        return Err(Error::parse(line_no, "empty name"));
    }
    let id: u64 = id
        .trim()
        .parse()
        .map_err(|_| Error::parse(line_no, format!("bad id {id:?}")))?;
    let lat: f64 = lat
        .trim()
        .parse()
        .map_err(|_| Error::parse(line_no, format!("bad latitude {lat:?}")))?;
    let lon: f64 = lon
        .trim()
        .parse()
        .map_err(|_| Error::parse(line_no, format!("bad longitude {lon:?}")))?;
    let coords = GeoPoint::new(lat, lon).map_err(|e| Error::parse(line_no, e.to_string()))?;
    let population: u64 = if pop.trim().is_empty() {
        0
    } else {
        pop.trim()
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad population {pop:?}")))?
    };
    let cc = cc.trim().to_uppercase();
    if cc.is_empty() {
        return Err(Error::parse(line_no, "empty country"));
    }
    let country = countries()
        .name_of(&cc)
        .map(str::to_string)
        .unwrap_or_else(|| cc.to_lowercase());
    let mut hierarchy = LocationHierarchy::country(&country);
    hierarchy.state = Some(admin1.trim().to_string()).filter(|s| !s.is_empty());
    hierarchy.county = admin2;
    hierarchy.city = Some(name.clone());

    let alt_names = if opts.alt_names {
        let mut v: Vec<String> = alts
            .split(',')
            .map(|a| a.trim().to_lowercase())
            .filter(|a| a.chars().count() >= 3 && a.chars().any(char::is_alphabetic) && *a != name)
            .collect();
        v.sort();
        v.dedup();
        v
    } else {
        Vec::new()
    };

    Ok(GazetteerEntry {
        id,
        name,
        alt_names,
        hierarchy,
        population,
        coords,
        country_code: cc,
    })
}

pub const BUNDLE_VERSION: u32 = 1;

/// Serialized output of `gazetteer build`: filtered cities, the common-word
/// exclusions, and the abbreviation table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GazetteerBundle {
    pub format_version: u32,
    pub min_population: u64,
    pub cities: Vec<GazetteerEntry>,
    pub excluded_names: Vec<String>,
    pub abbreviations: AbbreviationTable,
}

impl GazetteerBundle {
    pub fn into_parts(self) -> Result<(Gazetteer, AbbreviationTable)> {
        if self.format_version != BUNDLE_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported gazetteer bundle version {}",
                self.format_version
            )));
        }
        let g = Gazetteer::from_cities(self.cities, self.excluded_names.into_iter().collect());
        Ok((g, self.abbreviations))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<GazetteerBundle> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }
}

/// Lowercase abbreviation → hierarchy fragment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AbbreviationTable {
    entries: BTreeMap<String, LocationHierarchy>,
}

impl AbbreviationTable {
    pub fn parse(text: &str) -> Result<(AbbreviationTable, LoadReport)> {
        let mut report = LoadReport::default();
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            report.rows += 1;
            let Some((abbr, expansion)) = line.split_once(',') else {
                report.malformed.push((line_no, "expected `abbrev,expansion`".into()));
                continue;
            };
            let abbr = abbr.trim().to_lowercase();
            let len = abbr.chars().count();
            if !(2..=4).contains(&len) {
                report
                    .malformed
                    .push((line_no, format!("abbreviation {abbr:?} must be 2-4 characters")));
                continue;
            }
            let Some(h) = LocationHierarchy::parse_fragment(expansion) else {
                report.malformed.push((line_no, format!("bad expansion {expansion:?}")));
                continue;
            };
            if entries.insert(abbr.clone(), h).is_some() {
                warn!("line {line_no}: duplicate abbreviation {abbr:?}, keeping the last");
            }
        }
        report.kept = entries.len();
        Ok((AbbreviationTable { entries }, report))
    }

    pub fn get(&self, abbr: &str) -> Option<&LocationHierarchy> {
        self.entries.get(abbr)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &LocationHierarchy)> {
        self.entries.iter()
    }
}

pub fn load_abbreviations(path: impl AsRef<Path>) -> Result<(AbbreviationTable, LoadReport)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    AbbreviationTable::parse(&text)
}

pub fn load_word_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_word_list(&text))
}

pub fn parse_word_list(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}
