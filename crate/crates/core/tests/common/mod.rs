#![allow(dead_code)]

use std::collections::HashSet;

use geoloc::data::default_gazetteer;
use geoloc::features::{featurize_corpus, FeaturizeOptions, UserFeatures};
use geoloc::label::{label_corpus, RegionBias, UserLabel};
use geoloc::synth::{generate, SyntheticCorpus, SyntheticSpec};

pub const TWO_CONTINENTS: [&str; 10] = [
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
];

pub struct Prepared {
    pub corpus: SyntheticCorpus,
    pub labels: Vec<UserLabel>,
    pub features: Vec<UserFeatures>,
}

/// Generates, labels and featurizes a corpus, excluding the evidence comments.
pub fn prepare(spec: &SyntheticSpec) -> Prepared {
    let (g, a) = default_gazetteer();
    let corpus = generate(spec, &g, &a).unwrap();
    let seeds: HashSet<String> = corpus.seeds.iter().cloned().collect();
    let (labels, _) = label_corpus(corpus.comments.iter().cloned().map(Ok), &seeds, &g, &a, &RegionBias::bundled()).unwrap();
    let exclude: HashSet<String> = labels
        .iter()
        .flat_map(|l| l.evidence.iter().map(|e| e.comment_id.clone()))
        .collect();
    let features = featurize_corpus(corpus.comments.clone(), &labels, &exclude, &FeaturizeOptions::default(), false);
    Prepared { corpus, labels, features }
}
