//! Bundled default data files. The common-word list, stopwords, and
//! abbreviation table are reconstructions and can be replaced by user files.

use crate::gazetteer::{AbbreviationTable, Gazetteer, LoadOptions};

pub const COUNTRIES: &str = include_str!("../data/countries.tsv");
pub const GAZETTEER: &str = include_str!("../data/gazetteer.tsv");
pub const ABBREVIATIONS: &str = include_str!("../data/abbreviations.csv");
pub const COMMON_WORDS: &str = include_str!("../data/common_words.txt");
pub const STOPWORDS: &str = include_str!("../data/stopwords.txt");
pub const REGION_BIAS: &str = include_str!("../data/region_bias.csv");

/// The bundled sample gazetteer, population-filtered and common-word filtered.
pub fn default_gazetteer() -> (Gazetteer, AbbreviationTable) {
    let (g, _) = Gazetteer::from_reader(GAZETTEER.as_bytes(), &LoadOptions::default())
        .expect("bundled gazetteer parses");
    let common = crate::gazetteer::parse_word_list(COMMON_WORDS);
    let (g, _) = g.filter_common_words(&common);
    let (a, _) = AbbreviationTable::parse(ABBREVIATIONS).expect("bundled abbreviations parse");
    (g, a)
}

pub fn default_stopwords() -> Vec<String> {
    crate::gazetteer::parse_word_list(STOPWORDS)
}
