mod common;

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;

use geoloc::corpus::ingest;
use geoloc::data::default_gazetteer;
use geoloc::gazetteer::Resolution;
use geoloc::label::{label_corpus, parse_seeds, RegionBias};
use geoloc::synth::{generate, generate_synthetic, load_truth, SyntheticSpec};

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/synthetic").join(name)
}

#[test]
fn bundled_corpus_labels_match_truth() {
    let (g, a) = default_gazetteer();
    let (comments, skipped) = ingest(bundled("corpus.jsonl")).unwrap();
    assert_eq!((comments.len(), skipped.len()), (200, 0));
    let seeds = parse_seeds(&std::fs::read_to_string(bundled("seeds.txt")).unwrap());
    let truth: HashMap<String, _> = load_truth(bundled("truth.jsonl"))
        .unwrap()
        .into_iter()
        .map(|t| (t.user.clone(), t))
        .collect();
    let (labels, stats) = label_corpus(comments.into_iter().map(Ok), &seeds, &g, &a, &RegionBias::bundled()).unwrap();
    assert!(labels.len() >= 30, "{stats:?}");
    for l in &labels {
        let t = &truth[&l.user];
        assert!(t.home.contains(&l.hierarchy) || l.hierarchy.contains(&t.home), "{} labeled {}", l.user, l.hierarchy);
        assert_eq!(Some(l.resolution), t.expected_resolution, "{}", l.user);
    }
    let resolutions: HashSet<Resolution> = labels.iter().map(|l| l.resolution).collect();
    assert!(resolutions.contains(&Resolution::City) && resolutions.contains(&Resolution::State));
}

#[test]
fn bundled_corpus_regenerates_byte_for_byte() {
    let text = std::fs::read_to_string(bundled("spec.toml")).unwrap();
    let spec: SyntheticSpec = toml_like(&text);
    let (g, a) = default_gazetteer();
    let dir = tempfile::tempdir().unwrap();
    let files = generate_synthetic(&spec, &g, &a, dir.path()).unwrap();
    for (got, name) in [(&files.corpus, "corpus.jsonl"), (&files.truth, "truth.jsonl"), (&files.seeds, "seeds.txt")] {
        assert_eq!(std::fs::read(got).unwrap(), std::fs::read(bundled(name)).unwrap(), "{name}");
    }
}

/// Minimal `key = value` reader for the flat spec file, so this crate needs no TOML parser.
fn toml_like(text: &str) -> SyntheticSpec {
    let mut map = serde_json::Map::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line.split_once('=').unwrap();
        map.insert(k.trim().to_string(), serde_json::from_str(v.trim()).unwrap());
    }
    serde_json::from_value(serde_json::Value::Object(map)).unwrap()
}

#[test]
fn same_seed_gives_identical_files() {
    let (g, a) = default_gazetteer();
    let mut spec = SyntheticSpec::new(4, 10, 7);
    spec.noise_rate = 0.5;
    spec.tau_shift_hours = 4.0;
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let f1 = generate_synthetic(&spec, &g, &a, d1.path()).unwrap();
    let f2 = generate_synthetic(&spec, &g, &a, d2.path()).unwrap();
    for (x, y) in [(&f1.corpus, &f2.corpus), (&f1.truth, &f2.truth), (&f1.seeds, &f2.seeds)] {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
}

#[test]
fn zero_toponym_rate_labels_nobody() {
    let (g, a) = default_gazetteer();
    let mut spec = SyntheticSpec::new(5, 20, 3);
    spec.toponym_rate = 0.0;
    spec.noise_rate = 1.0;
    let corpus = generate(&spec, &g, &a).unwrap();
    let seeds: HashSet<String> = corpus.seeds.iter().cloned().collect();
    let (labels, stats) = label_corpus(corpus.comments.into_iter().map(Ok), &seeds, &g, &a, &RegionBias::bundled()).unwrap();
    assert!(stats.comments_in_seeds > 0);
    assert!(labels.is_empty());
}

#[test]
fn conflicting_countries_drop_users() {
    let (g, a) = default_gazetteer();
    let mut spec = SyntheticSpec::new(10, 10, 5);
    spec.cities = common::TWO_CONTINENTS.iter().map(|s| s.to_string()).collect();
    spec.conflict_rate = 0.5;
    let corpus = generate(&spec, &g, &a).unwrap();
    let seeds: HashSet<String> = corpus.seeds.iter().cloned().collect();
    let (labels, stats) = label_corpus(corpus.comments.into_iter().map(Ok), &seeds, &g, &a, &RegionBias::bundled()).unwrap();
    let labeled: HashSet<&str> = labels.iter().map(|l| l.user.as_str()).collect();
    for t in &corpus.truth {
        assert_eq!(t.expected.is_some(), labeled.contains(t.user.as_str()), "{}", t.user);
    }
    assert!(stats.users_dropped.values().sum::<usize>() > 0);
}

#[test]
fn history_comments_carry_city_signal() {
    let p = common::prepare(&SyntheticSpec::new(3, 10, 11));
    let truth: HashMap<&str, usize> = p
        .corpus
        .truth
        .iter()
        .map(|t| (t.user.as_str(), geoloc::synth::DEFAULT_CITIES.iter().position(|c| geoloc::gazetteer::LocationHierarchy::parse_fragment(c).unwrap() == t.home).unwrap()))
        .collect();
    for f in &p.features {
        let city = truth[f.user.as_str()];
        let local: HashSet<&String> = p.corpus.local_words[city].iter().collect();
        assert!(f.w.keys().any(|w| local.contains(w)), "{} has no local words", f.user);
        for (other, words) in p.corpus.local_words.iter().enumerate().filter(|(i, _)| *i != city) {
            // Support 1 by default: other cities' words never appear.
            assert!(!words.iter().any(|w| f.w.contains_key(w)), "{} uses words of city {other}", f.user);
        }
    }
}
