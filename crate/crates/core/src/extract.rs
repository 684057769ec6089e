//! Comment tokenization and location-mention extraction.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::gazetteer::{AbbreviationTable, Gazetteer, LocationHierarchy, Resolution};

pub const COMMA: &str = ",";
pub const DEFAULT_MAX_NGRAM: usize = 4;

/// One comment from the platform corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comment {
    pub id: String,
    pub user: String,
    pub body: String,
    pub subreddit: String,
    pub created_utc: i64,
    pub is_reply: bool,
    pub submission_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceRule {
    Gazetteer,
    AbbreviationMerge,
    Pattern,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationMention {
    pub tokens: Vec<String>,
    /// Half-open token range `[start, end)`.
    pub span: (usize, usize),
    /// Hierarchy of the best-prior candidate (or the pattern-composed chain).
    pub hierarchy: LocationHierarchy,
    /// Gazetteer entry ids consistent with the mention, best prior first.
    pub candidates: Vec<usize>,
    pub source_rule: SourceRule,
    /// Set when the city level came from the pattern rule and is not in the gazetteer.
    pub unverified_city: bool,
}

impl LocationMention {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    fn strictly_inside(&self, other: &LocationMention) -> bool {
        other.span.0 <= self.span.0 && self.span.1 <= other.span.1 && other.span != self.span
    }
}

const CONTRACTIONS: [(&str, &str); 40] = [
    ("i'm", "i am"),
    ("you're", "you are"),
    ("he's", "he is"),
    ("she's", "she is"),
    ("it's", "it is"),
    ("we're", "we are"),
    ("they're", "they are"),
    ("i've", "i have"),
    ("you've", "you have"),
    ("we've", "we have"),
    ("they've", "they have"),
    ("i'd", "i would"),
    ("you'd", "you would"),
    ("he'd", "he would"),
    ("she'd", "she would"),
    ("we'd", "we would"),
    ("they'd", "they would"),
    ("i'll", "i will"),
    ("you'll", "you will"),
    ("he'll", "he will"),
    ("she'll", "she will"),
    ("we'll", "we will"),
    ("they'll", "they will"),
    ("isn't", "is not"),
    ("aren't", "are not"),
    ("wasn't", "was not"),
    ("weren't", "were not"),
    ("don't", "do not"),
    ("doesn't", "does not"),
    ("didn't", "did not"),
    ("can't", "can not"),
    ("couldn't", "could not"),
    ("won't", "will not"),
    ("wouldn't", "would not"),
    ("shouldn't", "should not"),
    ("haven't", "have not"),
    ("hasn't", "has not"),
    ("that's", "that is"),
    ("there's", "there is"),
    ("let's", "let us"),
];

fn expand_contraction(tok: &str) -> Option<&'static str> {
    CONTRACTIONS.iter().find(|(c, _)| *c == tok).map(|(_, e)| *e)
}

fn is_url(tok: &str) -> bool {
    tok.contains("://") || tok.starts_with("www.")
}

fn is_number(tok: &str) -> bool {
    tok.chars().any(|c| c.is_ascii_digit())
        && tok
            .chars()
            .all(|c| c.is_ascii_digit() || matches!(c, '.' | ',' | ':' | '-' | '+'))
}

fn strip_punct(tok: &str) -> &str {
    tok.trim_matches(|c: char| !c.is_alphanumeric())
}

/// Lowercases, expands contractions, drops URLs and pure numbers, strips
/// edge punctuation, and splits on whitespace. Commas become standalone tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let lower = raw.to_lowercase().replace(['\u{2019}', '\u{2018}'], "'");
        if is_url(&lower) || is_number(&lower) {
            continue;
        }
        for (i, piece) in lower.split(',').enumerate() {
            if i > 0 {
                out.push(COMMA.to_string());
            }
            let t = strip_punct(piece);
            if t.is_empty() || is_url(t) || is_number(t) {
                continue;
            }
            match expand_contraction(t) {
                Some(exp) => out.extend(exp.split(' ').map(String::from)),
                None => out.push(t.to_string()),
            }
        }
    }
    out
}

/// Tokens with commas removed, as used for feature construction.
pub fn tokenize_words(text: &str) -> Vec<String> {
    tokenize(text).into_iter().filter(|t| t != COMMA).collect()
}

/// Canonical index key for a place name.
pub fn name_key(name: &str) -> String {
    tokenize_words(name).join(" ")
}

/// Every contiguous n-gram with `1 <= n <= max_n`, by start position then length.
pub fn candidate_ngrams(tokens: &[String], max_n: usize) -> Vec<((usize, usize), &[String])> {
    let mut out = Vec::new();
    for start in 0..tokens.len() {
        for n in 1..=max_n.max(1) {
            let end = start + n;
            if end > tokens.len() {
                break;
            }
            out.push(((start, end), &tokens[start..end]));
        }
    }
    out
}

#[derive(Debug, Clone)]
enum MatchKind {
    Gazetteer(Vec<usize>),
    Abbreviation(LocationHierarchy),
}

#[derive(Debug, Clone)]
struct Match {
    start: usize,
    end: usize,
    kind: MatchKind,
}

// A hierarchy candidate carried through a merge chain.
#[derive(Debug, Clone)]
struct Cand {
    hierarchy: LocationHierarchy,
    entry: usize,
}

fn follows(tokens: &[String], prev_end: usize, next_start: usize) -> bool {
    next_start == prev_end || (next_start == prev_end + 1 && tokens[prev_end] == COMMA)
}

/// Gazetteer and abbreviation matching, hierarchy-ordered merging, and
/// containment pruning.
pub fn extract_mentions(tokens: &[String], g: &Gazetteer, a: &AbbreviationTable) -> Vec<LocationMention> {
    let mut matches: Vec<Match> = candidate_ngrams(tokens, DEFAULT_MAX_NGRAM)
        .into_iter()
        .filter(|(_, gram)| !gram.iter().any(|t| t == COMMA))
        .filter_map(|((start, end), gram)| {
            let ids = g.lookup_ids(gram);
            (!ids.is_empty()).then(|| Match {
                start,
                end,
                kind: MatchKind::Gazetteer(ids.to_vec()),
            })
        })
        .collect();

    // Abbreviations only count right after an accepted match.
    let mut accepted_ends: HashSet<usize> = matches.iter().map(|m| m.end).collect();
    for (j, tok) in tokens.iter().enumerate() {
        let Some(frag) = a.get(tok) else { continue };
        let after_match = accepted_ends
            .iter()
            .any(|&e| e <= j && follows(tokens, e, j));
        if after_match {
            matches.push(Match {
                start: j,
                end: j + 1,
                kind: MatchKind::Abbreviation(frag.clone()),
            });
            accepted_ends.insert(j + 1);
        }
    }
    matches.sort_by_key(|m| (m.start, m.end));

    let mut mentions = Vec::new();
    for m in &matches {
        let MatchKind::Gazetteer(ids) = &m.kind else { continue };
        let mut cands: Vec<Cand> = ids
            .iter()
            .map(|&i| Cand {
                hierarchy: g.entry(i).hierarchy.clone(),
                entry: i,
            })
            .collect();
        mentions.push(make_mention(tokens, m.start, m.end, &cands, SourceRule::Gazetteer));

        let mut end = m.end;
        let mut parts = 1;
        let mut used_abbrev = false;
        loop {
            let mut next: Vec<&Match> = matches
                .iter()
                .filter(|n| n.start >= end && follows(tokens, end, n.start))
                .collect();
            next.sort_by_key(|n| std::cmp::Reverse(n.end - n.start));
            let mut extended = false;
            for n in next {
                let parents: Vec<LocationHierarchy> = match &n.kind {
                    MatchKind::Gazetteer(ids) => ids.iter().map(|&i| g.entry(i).hierarchy.clone()).collect(),
                    MatchKind::Abbreviation(h) => vec![h.clone()],
                };
                let merged: Vec<Cand> = cands
                    .iter()
                    .filter(|c| parents.iter().any(|p| p.is_ancestor_of(&c.hierarchy)))
                    .cloned()
                    .collect();
                if !merged.is_empty() {
                    cands = merged;
                    end = n.end;
                    parts += 1;
                    used_abbrev |= matches!(n.kind, MatchKind::Abbreviation(_));
                    extended = true;
                    break;
                }
            }
            if !extended {
                break;
            }
        }
        if parts > 1 {
            let rule = if used_abbrev {
                SourceRule::AbbreviationMerge
            } else {
                SourceRule::Gazetteer
            };
            mentions.push(make_mention(tokens, m.start, end, &cands, rule));
        }
    }
    prune_contained(mentions)
}

fn make_mention(tokens: &[String], start: usize, end: usize, cands: &[Cand], rule: SourceRule) -> LocationMention {
    LocationMention {
        tokens: tokens[start..end].to_vec(),
        span: (start, end),
        hierarchy: cands[0].hierarchy.clone(),
        candidates: cands.iter().map(|c| c.entry).collect(),
        source_rule: rule,
        unverified_city: false,
    }
}

fn prune_contained(mut mentions: Vec<LocationMention>) -> Vec<LocationMention> {
    mentions.sort_by_key(|m| (m.span.0, m.span.1));
    mentions.dedup_by(|a, b| a.span == b.span);
    let keep: Vec<bool> = mentions
        .iter()
        .map(|m| !mentions.iter().any(|o| m.strictly_inside(o)))
        .collect();
    mentions
        .into_iter()
        .zip(keep)
        .filter_map(|(m, k)| k.then_some(m))
        .collect()
}

// Words that end a leading city-name run in the `X , Y` pattern.
const PATTERN_BREAKERS: &[&str] = &[
    "i", "am", "is", "are", "was", "were", "be", "in", "from", "near", "at", "to", "of", "on",
    "live", "lives", "living", "based", "currently", "now", "here", "there", "the", "a", "an",
    "and", "or", "my", "me", "we", "our", "us", "you", "just", "outside", "around", "by",
    "originally", "hello", "hi", "hey", "greetings", "yes", "no", "so", "well", "it", "this",
    "that", "its", "town", "called", "little", "small", "tiny", "city",
];

fn region_candidates(span: &[String], g: &Gazetteer, a: &AbbreviationTable) -> Vec<(LocationHierarchy, usize)> {
    let mut out: Vec<(LocationHierarchy, usize)> = g
        .lookup_ids(span)
        .iter()
        .map(|&i| (g.entry(i).hierarchy.clone(), i))
        .filter(|(h, _)| h.resolution() != Resolution::City)
        .collect();
    if span.len() == 1 {
        if let Some(h) = a.get(&span[0]) {
            if let Some(id) = g.node_id(h) {
                out.push((h.clone(), id));
            }
        }
    }
    out
}

// Longest prefix (up to three tokens) of `tokens[from..]` that resolves as a region.
fn longest_region(
    tokens: &[String],
    from: usize,
    g: &Gazetteer,
    a: &AbbreviationTable,
) -> Option<(usize, Vec<(LocationHierarchy, usize)>)> {
    (1..=3).rev().find_map(|n| {
        let end = from + n;
        if end > tokens.len() || tokens[from..end].iter().any(|t| t == COMMA) {
            return None;
        }
        let c = region_candidates(&tokens[from..end], g, a);
        (!c.is_empty()).then_some((end, c))
    })
}

/// `X , Y` and `X , Y , Z` self-identification shapes where the trailing
/// components resolve as regions and `X` is taken as an unverified city.
/// Spans where `X` itself resolves consistently are left to [`extract_mentions`].
pub fn pattern_rule(tokens: &[String], g: &Gazetteer, a: &AbbreviationTable) -> Vec<LocationMention> {
    let mut out = Vec::new();
    for (c1, tok) in tokens.iter().enumerate() {
        if tok != COMMA || c1 == 0 {
            continue;
        }
        let mut x_start = c1;
        while x_start > 0 && c1 - x_start < 3 {
            let t = &tokens[x_start - 1];
            if t == COMMA || PATTERN_BREAKERS.contains(&t.as_str()) || !t.chars().any(char::is_alphabetic) {
                break;
            }
            x_start -= 1;
        }
        if x_start == c1 {
            continue;
        }

        // Prefer the three-part shape.
        let mut resolved: Option<(usize, Vec<(LocationHierarchy, usize)>)> = None;
        if let Some((y_end, y_cands)) = longest_region(tokens, c1 + 1, g, a) {
            if y_end < tokens.len() && tokens[y_end] == COMMA {
                if let Some((z_end, z_cands)) = longest_region(tokens, y_end + 1, g, a) {
                    let both: Vec<(LocationHierarchy, usize)> = y_cands
                        .iter()
                        .filter(|(y, _)| z_cands.iter().any(|(z, _)| z.is_ancestor_of(y)))
                        .cloned()
                        .collect();
                    if !both.is_empty() {
                        resolved = Some((z_end, both));
                    }
                }
            }
            if resolved.is_none() {
                resolved = Some((y_end, y_cands));
            }
        }
        let Some((end, parents)) = resolved else { continue };

        let x = &tokens[x_start..c1];
        if !region_candidates(x, g, a).is_empty() {
            continue;
        }
        let x_consistent = g
            .lookup_ids(x)
            .iter()
            .any(|&i| parents.iter().any(|(p, _)| p.is_ancestor_of(&g.entry(i).hierarchy)));
        if x_consistent {
            continue;
        }
        let (parent, _) = &parents[0];
        let mut hierarchy = parent.clone();
        hierarchy.city = Some(x.join(" "));
        let mut candidates: Vec<usize> = parents
            .iter()
            .filter(|(p, _)| p == parent)
            .map(|(_, id)| *id)
            .collect();
        candidates.dedup();
        out.push(LocationMention {
            tokens: tokens[x_start..end].to_vec(),
            span: (x_start, end),
            hierarchy,
            candidates,
            source_rule: SourceRule::Pattern,
            unverified_city: true,
        });
    }
    out
}

/// Full extraction: gazetteer mentions plus pattern-rule mentions, with
/// containment pruning applied over the union.
pub fn extract_all(tokens: &[String], g: &Gazetteer, a: &AbbreviationTable) -> Vec<LocationMention> {
    let mut all = extract_mentions(tokens, g, a);
    let pattern: Vec<LocationMention> = pattern_rule(tokens, g, a)
        .into_iter()
        .filter(|p| !all.iter().any(|m| m.span == p.span || p.strictly_inside(m)))
        .collect();
    all.extend(pattern);
    prune_contained(all)
}

pub const FILTER_TERMS: [&str; 4] = ["move", "moving", "born", "raised"];

/// False for replies and for comments mentioning relocation or origin terms.
pub fn filter_comment(c: &Comment) -> bool {
    if c.is_reply {
        return false;
    }
    !tokenize_words(&c.body)
        .iter()
        .any(|t| FILTER_TERMS.contains(&t.as_str()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::default_gazetteer;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    fn comment(body: &str, reply: bool) -> Comment {
        Comment {
            id: "c1".into(),
            user: "u".into(),
            body: body.into(),
            subreddit: "askreddit".into(),
            created_utc: 1_500_000_000,
            is_reply: reply,
            submission_id: "s".into(),
        }
    }

    #[test]
    fn tokenize_examples() {
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("I'm from Boston, MA!"), vec!["i", "am", "from", "boston", ",", "ma"]);
        assert_eq!(tokenize("see https://x.co in 2019"), vec!["see", "in"]);
        assert_eq!(tokenize("(www.example.com) 1,000 people"), vec!["people"]);
        assert_eq!(tokenize("It\u{2019}s fine"), vec!["it", "is", "fine"]);
    }

    #[test]
    fn contraction_table_has_forty_entries() {
        assert_eq!(CONTRACTIONS.len(), 40);
        let keys: HashSet<&str> = CONTRACTIONS.iter().map(|c| c.0).collect();
        assert_eq!(keys.len(), 40);
    }

    #[test]
    fn ngram_counts() {
        let t: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(candidate_ngrams(&t, 4).len(), 6);
        assert!(candidate_ngrams(&[], 4).is_empty());
        let ten: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
        // closed form: sum over n of (len - n + 1)
        let expected: usize = (1..=4).map(|n| 10 - n + 1).sum();
        assert_eq!(candidate_ngrams(&ten, 4).len(), expected);
        assert_eq!(expected, 34);
        let grams = candidate_ngrams(&t, 2);
        assert_eq!(grams[0].0, (0, 1));
        assert_eq!(grams[1].0, (0, 2));
        assert_eq!(grams[2].0, (1, 2));
    }

    #[test]
    fn boston_ma_merges() {
        let (g, a) = default_gazetteer();
        let m = extract_all(&toks("I live in Boston, MA"), &g, &a);
        assert_eq!(m.len(), 1, "{m:?}");
        assert_eq!(m[0].source_rule, SourceRule::AbbreviationMerge);
        assert_eq!(m[0].hierarchy.city.as_deref(), Some("boston"));
        assert_eq!(m[0].hierarchy.state.as_deref(), Some("massachusetts"));
        assert_eq!(m[0].hierarchy.country, "united states");
    }

    #[test]
    fn kansas_city_substring_pruned() {
        let (g, a) = default_gazetteer();
        assert!(g.contains_key(&toks("kansas")));
        let m = extract_mentions(&toks("kansas city"), &g, &a);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].text(), "kansas city");
        let mo = extract_mentions(&toks("kansas city, mo"), &g, &a);
        assert_eq!(mo.len(), 1);
        assert_eq!(mo[0].hierarchy.state.as_deref(), Some("missouri"));
        assert_eq!(mo[0].candidates.len(), 1);
    }

    #[test]
    fn liverpool_is_english_city() {
        let (g, a) = default_gazetteer();
        let m = extract_mentions(&toks("Liverpool"), &g, &a);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].hierarchy.resolution(), Resolution::City);
        assert_eq!(m[0].hierarchy.state.as_deref(), Some("england"));
    }

    #[test]
    fn gazetteer_chain_without_abbreviation() {
        let (g, a) = default_gazetteer();
        let m = extract_mentions(&toks("paris, texas"), &g, &a);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].source_rule, SourceRule::Gazetteer);
        assert_eq!(m[0].hierarchy.state.as_deref(), Some("texas"));
        assert!(pattern_rule(&toks("paris, texas"), &g, &a).is_empty());
        let uk = extract_mentions(&toks("london, england, uk"), &g, &a);
        assert_eq!(uk.len(), 1);
        assert_eq!(uk[0].hierarchy.country, "united kingdom");
    }

    #[test]
    fn abbreviation_alone_is_not_extracted() {
        let (g, a) = default_gazetteer();
        assert!(extract_mentions(&toks("ok so ma said hi"), &g, &a).is_empty());
        // abbreviation that does not fit the preceding city is dropped
        let m = extract_mentions(&toks("boston in the summer"), &g, &a);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].text(), "boston");
    }

    #[test]
    fn pattern_rule_unverified_city() {
        let (g, a) = default_gazetteer();
        let t = toks("I live in smalltownville, KS, USA");
        let p = pattern_rule(&t, &g, &a);
        assert_eq!(p.len(), 1, "{p:?}");
        assert_eq!(p[0].hierarchy.city.as_deref(), Some("smalltownville"));
        assert_eq!(p[0].hierarchy.state.as_deref(), Some("kansas"));
        assert_eq!(p[0].hierarchy.country, "united states");
        assert!(p[0].unverified_city);
        assert!(pattern_rule(&toks("yes, no"), &g, &a).is_empty());
        let all = extract_all(&t, &g, &a);
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].source_rule, SourceRule::Pattern);
    }

    #[test]
    fn filter_comment_rules() {
        assert!(!filter_comment(&comment("Toronto here", true)));
        assert!(!filter_comment(&comment("I was born in Texas", false)));
        assert!(!filter_comment(&comment("Moving to Denver", false)));
        assert!(filter_comment(&comment("Toronto here", false)));
        assert!(filter_comment(&comment("I removed it, Denver", false)));
    }

    #[test]
    fn mentions_never_nest() {
        let (g, a) = default_gazetteer();
        for s in [
            "new york city, ny",
            "kansas city kansas",
            "from london, ontario, canada and paris",
            "springfield, il or springfield, mo",
        ] {
            let m = extract_all(&toks(s), &g, &a);
            for x in &m {
                for y in &m {
                    assert!(!x.strictly_inside(y), "{s}: {x:?} in {y:?}");
                }
            }
        }
    }

    #[test]
    fn merged_hierarchy_matches_hierarchy_index() {
        let (g, a) = default_gazetteer();
        for s in ["boston, ma", "london, ontario", "toronto, canada", "paris, texas"] {
            for m in extract_mentions(&toks(s), &g, &a) {
                let h = &m.hierarchy;
                let city = h.city.as_deref().unwrap();
                if let Some(state) = &h.state {
                    assert!(g.is_known_child(state, city));
                }
                assert!(g.is_known_child(&h.country, city));
            }
        }
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent(s in "[a-zA-Z0-9,.!?' :/]{0,60}") {
            let once = tokenize(&s);
            let twice = tokenize(&once.join(" "));
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn extraction_is_deterministic(words in proptest::collection::vec(
            prop_oneof![
                Just("boston"), Just(","), Just("ma"), Just("kansas"), Just("city"),
                Just("london"), Just("the"), Just("usa"), Just("springfield"), Just("ks"),
            ], 0..12)) {
            let (g, a) = default_gazetteer();
            let t: Vec<String> = words.iter().map(|s| s.to_string()).collect();
            prop_assert_eq!(extract_all(&t, &g, &a), extract_all(&t, &g, &a));
        }
    }
}
