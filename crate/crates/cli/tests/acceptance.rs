//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use geoloc::data::{default_gazetteer, default_stopwords};
use geoloc::eval::{metrics_from_errors, run_cv, run_transfer, ExperimentSpec, Scope};
use geoloc::features::{featurize_corpus, select_features, FeaturizeOptions, SelectOptions, UserFeatures, Vocabulary};
use geoloc::gazetteer::{LocationHierarchy, Resolution};
use geoloc::geo::{haversine_miles, weighted_geodesic_median};
use geoloc::label::{label_corpus, load_labels, Evidence, RegionBias, UserLabel};
use geoloc::model::{
    baseline_map, build_candidates, predict, predict_all, Candidate, CandidateSet, CovarianceKind, DensityOptions,
    FeatureDensities, FeatureDensity, GeoModel, MixtureDensity, MixtureKind, Modalities, TemporalModel,
};
use geoloc::persist::{load_model, save_model};
use geoloc::synth::{generate, load_truth, SyntheticSpec};
use geoloc::GeoPoint;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("1 labeling precision on bundled corpus", c1_labeling),
        ("2 prediction matches brute-force scoring", c2_scoring_oracle),
        ("3 DPMM vs 5-component GMM", c3_dpmm_vs_gmm),
        ("4 temporal modality", c4_temporal),
        ("5 non-localness ranking", c5_non_localness),
        ("6 geodesic median vs grid search", c6_median),
        ("7 disjoint-vocabulary transfer fallback", c7_transfer_fallback),
        ("8 CLI end-to-end pipeline", c8_pipeline),
        ("9 metric arithmetic", c9_metrics),
        ("10 model persistence round trip", c10_persistence),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.starts_with(&format!("{p} "))) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{name}] {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{name}] {detail} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let took = start.elapsed();
    if took > limit {
        return Err(format!("{what} took {:.1}s, limit {:.0}s", took.as_secs_f64(), limit.as_secs_f64()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared helpers

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/data/synthetic").join(name)
}

fn geoloc(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_geoloc"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("geoloc {} failed: {}", args[0], String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Prepared {
    labels: Vec<UserLabel>,
    features: Vec<UserFeatures>,
}

fn prepare(spec: &SyntheticSpec) -> Prepared {
    let (g, a) = default_gazetteer();
    let corpus = generate(spec, &g, &a).unwrap();
    let seeds: HashSet<String> = corpus.seeds.iter().cloned().collect();
    let (labels, _) = label_corpus(corpus.comments.iter().cloned().map(Ok), &seeds, &g, &a, &RegionBias::bundled()).unwrap();
    let exclude: HashSet<String> = labels
        .iter()
        .flat_map(|l| l.evidence.iter().map(|e| e.comment_id.clone()))
        .collect();
    let features = featurize_corpus(corpus.comments, &labels, &exclude, &FeaturizeOptions::default(), false);
    Prepared { labels, features }
}

const TWO_CONTINENTS: [&str; 10] = [
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

// ---------------------------------------------------------------------------
// 1

fn c1_labeling() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("labels.jsonl");
    let start = Instant::now();
    geoloc(&[
        "label",
        "--comments",
        p(&bundled("corpus.jsonl")),
        "--seeds",
        p(&bundled("seeds.txt")),
        "--out",
        p(&out),
    ])?;
    within(start, Duration::from_secs(10), "labeling")?;
    let labels = load_labels(&out).map_err(|e| e.to_string())?;
    let truth: HashMap<String, _> = load_truth(bundled("truth.jsonl"))
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|t| (t.user.clone(), t))
        .collect();
    if labels.is_empty() {
        return Err("no users labeled".into());
    }
    let n = labels.len() as f64;
    let correct = labels.iter().filter(|l| l.hierarchy.contains(&truth[&l.user].home)).count() as f64;
    let resolved = labels
        .iter()
        .filter(|l| truth[&l.user].expected_resolution == Some(l.resolution))
        .count() as f64;
    let (precision, res_acc) = (correct / n, resolved / n);
    check(
        precision >= 0.95 && res_acc >= 0.90,
        format!("{} labeled, precision {precision:.3} (>= 0.95), resolution accuracy {res_acc:.3} (>= 0.90)", labels.len()),
    )
}

// ---------------------------------------------------------------------------
// 2

fn gaussian_pdf(x: [f64; 2], mean: [f64; 2], var: [f64; 2]) -> f64 {
    let mut p = 1.0;
    for d in 0..2 {
        let z = x[d] - mean[d];
        p *= (-z * z / (2.0 * var[d])).exp() / (2.0 * std::f64::consts::PI * var[d]).sqrt();
    }
    p
}

fn random_mixture(rng: &mut ChaCha8Rng, center: [f64; 2]) -> MixtureDensity {
    let k = rng.random_range(1..=3);
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    MixtureDensity {
        weights: raw.iter().map(|w| w / total).collect(),
        means: (0..k)
            .map(|_| [center[0] + rng.random_range(-8.0..8.0), center[1] + rng.random_range(-8.0..8.0)])
            .collect(),
        variances: (0..k).map(|_| [rng.random_range(2.0..30.0), rng.random_range(2.0..30.0)]).collect(),
        kind: MixtureKind::Dpmm,
        covariance_kind: CovarianceKind::Diagonal,
    }
}

struct Instance {
    model: GeoModel,
    user: UserFeatures,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let center = [rng.random_range(-40.0..40.0), rng.random_range(-120.0..120.0)];
    let n_cand = rng.random_range(1..=10);
    let mut candidates = CandidateSet {
        candidates: (0..n_cand)
            .map(|_| Candidate {
                point: GeoPoint {
                    lat: center[0] + rng.random_range(-10.0..10.0),
                    lon: center[1] + rng.random_range(-10.0..10.0),
                },
                bin: 0,
                weight: rng.random_range(1..5) as f64,
            })
            .collect(),
    };
    let mut features = BTreeMap::new();
    let mut user = UserFeatures {
        user: "u".into(),
        ..Default::default()
    };
    for h in 0..24 {
        user.tau[h] = rng.random_range(0..6);
    }
    let n_feat = rng.random_range(0..=5);
    for i in 0..n_feat {
        let sub = rng.random_bool(0.3);
        let name = format!("f{i}");
        let key = if sub { format!("s:{name}") } else { format!("w:{name}") };
        // Some features are unscored fallbacks or unknown to the model.
        let roll: f64 = rng.random();
        if roll > 0.1 {
            features.insert(
                key,
                FeatureDensity {
                    density: (roll > 0.2).then(|| random_mixture(rng, center)),
                    prior: rng.random_range(0.001..0.2),
                    support: 5,
                },
            );
        }
        let count = rng.random_range(1..20);
        if sub {
            user.s.insert(name, count);
        } else {
            user.w.insert(name, count);
        }
    }
    let temporal = rng.random_bool(0.5).then(|| {
        let n_bins = rng.random_range(2..=4);
        let mut edges: Vec<f64> = (1..n_bins).map(|_| center[1] + rng.random_range(-10.0..10.0)).collect();
        edges.sort_by(f64::total_cmp);
        TemporalModel {
            bin_edges: edges,
            coefficients: (0..n_bins).map(|_| (0..25).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
            l2_strength: 0.01,
            feature_mean: (0..24).map(|_| rng.random_range(0.0..0.1)).collect(),
            feature_scale: (0..24).map(|_| rng.random_range(0.02..0.2)).collect(),
        }
    });
    if let Some(tm) = &temporal {
        candidates.assign_bins(tm);
    }
    let modalities = Modalities {
        words: true,
        subreddits: rng.random_bool(0.7),
        temporal: temporal.is_some(),
    };
    Instance {
        model: GeoModel {
            densities: FeatureDensities {
                features,
                vocab: Vocabulary::default(),
            },
            temporal,
            candidates,
            fallback: GeoPoint { lat: 1.5, lon: 2.5 },
            modalities,
        },
        user,
    }
}

/// Linear-space enumeration: sum over features of count * prior * pdf, times the bin probability.
fn brute_force(inst: &Instance) -> Option<(usize, f64)> {
    let m = &inst.model;
    let mut terms = Vec::new();
    for (prefix, counts, on) in [("w", &inst.user.w, m.modalities.words), ("s", &inst.user.s, m.modalities.subreddits)] {
        if !on {
            continue;
        }
        for (f, &c) in counts {
            if let Some(FeatureDensity { density: Some(d), prior, .. }) = m.densities.features.get(&format!("{prefix}:{f}")) {
                terms.push((c as f64 * prior, d));
            }
        }
    }
    if terms.is_empty() {
        return None;
    }
    let bin_probs = m.temporal.as_ref().map(|tm| {
        let total: u64 = inst.user.tau.iter().sum();
        let logits: Vec<f64> = tm
            .coefficients
            .iter()
            .map(|row| {
                let mut z = row[0];
                for h in 0..24 {
                    let frac = if total == 0 { 1.0 / 24.0 } else { inst.user.tau[h] as f64 / total as f64 };
                    z += row[h + 1] * (frac - tm.feature_mean[h]) / tm.feature_scale[h];
                }
                z
            })
            .collect();
        let exps: Vec<f64> = logits.iter().map(|z| z.exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect::<Vec<f64>>()
    });
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in m.candidates.candidates.iter().enumerate() {
        let x = [c.point.lat, c.point.lon];
        let mut s: f64 = terms
            .iter()
            .map(|(w, d)| {
                w * d
                    .weights
                    .iter()
                    .zip(&d.means)
                    .zip(&d.variances)
                    .map(|((pi, mu), v)| pi * gaussian_pdf(x, *mu, *v))
                    .sum::<f64>()
            })
            .sum();
        if let Some(probs) = &bin_probs {
            let bin = m.temporal.as_ref().unwrap().bin_edges.iter().filter(|e| **e <= c.point.lon).count();
            s *= probs[bin];
        }
        let better = match best {
            None => true,
            Some((b, bs)) => s > bs || (s == bs && c.weight > m.candidates.candidates[b].weight),
        };
        if better {
            best = Some((i, s));
        }
    }
    best
}

fn c2_scoring_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut scored, mut fallbacks, mut worst) = (0, 0, 0.0f64);
    for trial in 0..1000 {
        let inst = random_instance(&mut rng);
        let pred = predict(&inst.model, &inst.user, true);
        match brute_force(&inst) {
            None => {
                if !pred.fallback || pred.point != inst.model.fallback {
                    return Err(format!("instance {trial}: expected fallback, got {pred:?}"));
                }
                fallbacks += 1;
            }
            Some((i, s)) => {
                let want = inst.model.candidates.candidates[i].point;
                if pred.fallback || pred.point != want {
                    return Err(format!("instance {trial}: argmax {:?}, expected candidate {i} {want:?}", pred.point));
                }
                let rel = (pred.score.unwrap().exp() - s).abs() / s;
                worst = worst.max(rel);
                if !(rel <= 1e-9) {
                    return Err(format!("instance {trial}: score rel error {rel:e}"));
                }
                scored += 1;
            }
        }
    }
    within(start, Duration::from_secs(30), "1000 instances")?;
    Ok(format!("{scored} scored + {fallbacks} fallback instances agree, worst rel error {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 3

fn c3_dpmm_vs_gmm() -> Outcome {
    let start = Instant::now();
    let stop = default_stopwords();
    let (mut wins, mut sum_dpmm, mut sum_gmm) = (0, 0.0, 0.0);
    let trials = 50;
    for t in 0..trials {
        let mut spec = SyntheticSpec::new(10, 12, 300 + t);
        spec.cities = TWO_CONTINENTS.iter().map(|s| s.to_string()).collect();
        spec.max_word_support = 4;
        spec.location_jitter_deg = 0.3;
        spec.local_word_rate = 0.15;
        spec.group_predictiveness = 0.0;
        spec.comments_per_user = 10;
        let data = prepare(&spec);
        let run = |kind: MixtureKind| {
            let es = ExperimentSpec {
                modalities: "words".parse().unwrap(),
                seed: t,
                min_cell_users: 10,
                density: DensityOptions {
                    kind,
                    max_components: 5,
                    ..Default::default()
                },
                ..Default::default()
            };
            run_cv(&es, &data.features, &data.labels, &stop).unwrap().aggregate.aed
        };
        let (d, g) = (run(MixtureKind::Dpmm), run(MixtureKind::Gmm));
        if d <= g {
            wins += 1;
        }
        sum_dpmm += d;
        sum_gmm += g;
    }
    within(start, Duration::from_secs(300), "50 trials")?;
    let share = wins as f64 / trials as f64;
    let ratio = sum_dpmm / sum_gmm;
    check(
        share >= 0.6 && ratio <= 1.1,
        format!(
            "DPMM <= GMM in {wins}/{trials} trials (>= 60%), mean AED {:.1} vs {:.1} mi, ratio {ratio:.3} (<= 1.1)",
            sum_dpmm / trials as f64,
            sum_gmm / trials as f64
        ),
    )
}

// ---------------------------------------------------------------------------
// 4

fn cv_metrics(data: &Prepared, modalities: &str) -> geoloc::eval::MetricReport {
    let es = ExperimentSpec {
        modalities: modalities.parse().unwrap(),
        seed: 1,
        min_cell_users: 10,
        ..Default::default()
    };
    run_cv(&es, &data.features, &data.labels, &default_stopwords()).unwrap().aggregate
}

fn c4_temporal() -> Outcome {
    let mut two = SyntheticSpec::new(10, 30, 41);
    two.cities = TWO_CONTINENTS.iter().map(|s| s.to_string()).collect();
    two.tau_shift_hours = 8.0;
    two.max_word_support = 4;
    two.local_word_rate = 0.15;
    two.group_predictiveness = 0.0;
    two.comments_per_user = 10;
    let data = prepare(&two);
    let (without, with) = (cv_metrics(&data, "words"), cv_metrics(&data, "words,temporal"));

    let mut single = SyntheticSpec::new(5, 100, 42);
    single.comments_per_user = 10;
    single.noise_rate = 0.1;
    let data = prepare(&single);
    let (flat_without, flat_with) = (cv_metrics(&data, "words,subreddits"), cv_metrics(&data, "words,subreddits,temporal"));
    let delta = (flat_with.acc_at_100 - flat_without.acc_at_100).abs();
    check(
        with.aed < without.aed && delta < 0.02,
        format!(
            "two-continent AED {:.1} -> {:.1} mi with temporal; single-timezone Acc@100 {:.3} -> {:.3} (|delta| {delta:.3} < 0.02)",
            without.aed, with.aed, flat_without.acc_at_100, flat_with.acc_at_100
        ),
    )
}

// ---------------------------------------------------------------------------
// 5

fn nl_fixture(rng: &mut ChaCha8Rng) -> Vec<(UserFeatures, UserLabel)> {
    let mut out = Vec::new();
    for (cell, frag) in TWO_CONTINENTS.iter().enumerate() {
        let h = LocationHierarchy::parse_fragment(frag).unwrap();
        for u in 0..20 {
            let mut f = UserFeatures {
                user: format!("u{cell:02}_{u:02}"),
                ..Default::default()
            };
            f.tau[0] = 1;
            for sw in ["the", "and", "of", "to"] {
                f.w.insert(sw.into(), rng.random_range(20..30));
            }
            // Background words with random geographic skew.
            for b in 0..80 {
                let skew = (b % 10) as f64 / 10.0;
                let home = b % TWO_CONTINENTS.len();
                if rng.random::<f64>() < if home == cell { 0.3 + 0.6 * skew } else { 0.3 * (1.0 - skew) + 0.05 } {
                    f.w.insert(format!("bg{b:02}"), rng.random_range(1..4));
                }
            }
            // Injected: local to one cell, or spread evenly everywhere.
            f.w.insert(format!("local{cell}"), 3);
            f.w.insert("uniform_a".into(), 5);
            f.w.insert("uniform_b".into(), 5);
            // Two features with identical counts everywhere tie exactly.
            f.w.insert("tie_x".into(), 2);
            f.w.insert("tie_y".into(), 2);
            f.s.insert("all".into(), 1);
            f.s.insert(format!("r{cell}"), 1);
            let label = UserLabel {
                user: f.user.clone(),
                hierarchy: h.clone(),
                resolution: Resolution::City,
                coords: GeoPoint { lat: 0.0, lon: 0.0 },
                evidence: vec![Evidence {
                    comment_id: "c".into(),
                    mention: "m".into(),
                }],
                label_time: 0,
            };
            out.push((f, label));
        }
    }
    out
}

fn c5_non_localness() -> Outcome {
    let stop: Vec<String> = ["the", "and", "of", "to"].iter().map(|s| s.to_string()).collect();
    let opts = SelectOptions {
        min_cell_users: 10,
        stop_subreddits: Some(vec!["all".into()]),
        ..Default::default()
    };
    let rank = |seed: u64| {
        let data = nl_fixture(&mut ChaCha8Rng::seed_from_u64(seed));
        let train: Vec<(&UserFeatures, &UserLabel)> = data.iter().map(|(f, l)| (f, l)).collect();
        select_features(&train, &stop, &opts).unwrap().words.scores
    };
    let scores = rank(5);
    let n = scores.len();
    let position = |f: &str| scores.iter().position(|(k, _)| k == f).unwrap();
    let decile = n / 10;
    let local_worst = (0..TWO_CONTINENTS.len()).map(|c| position(&format!("local{c}"))).max().unwrap();
    let uniform_best = ["uniform_a", "uniform_b"].iter().map(|f| position(f)).min().unwrap();
    let (x, y) = (position("tie_x"), position("tie_y"));
    let tie_exact = scores[x].1 == scores[y].1;
    let deterministic = rank(5) == scores;
    check(
        local_worst < decile.max(TWO_CONTINENTS.len()) && uniform_best >= n - decile && tie_exact && x < y && deterministic,
        format!(
            "{n} features: single-cell ranks <= {local_worst}, uniform ranks >= {uniform_best} (bottom decile starts at {}), exact tie ordered {x}<{y}, reruns identical: {deterministic}",
            n - decile
        ),
    )
}

// ---------------------------------------------------------------------------
// 6

fn objective(c: GeoPoint, pts: &[GeoPoint]) -> f64 {
    pts.iter().map(|&q| haversine_miles(c, q)).sum()
}

/// Exhaustive search on a 0.01 degree lattice: a 0.05 degree sweep of the
/// bounding box, refined at 0.01 degrees around the best cell.
fn grid_median(pts: &[GeoPoint]) -> GeoPoint {
    let (lat0, lat1) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), q| (a.min(q.lat), b.max(q.lat)));
    let (lon0, lon1) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), q| (a.min(q.lon), b.max(q.lon)));
    let sweep = |la0: f64, la1: f64, lo0: f64, lo1: f64, step: f64| {
        let mut best = (f64::MAX, GeoPoint { lat: la0, lon: lo0 });
        let (nla, nlo) = (((la1 - la0) / step).ceil() as i64, ((lo1 - lo0) / step).ceil() as i64);
        for i in 0..=nla {
            for j in 0..=nlo {
                let c = GeoPoint {
                    lat: la0 + i as f64 * step,
                    lon: lo0 + j as f64 * step,
                };
                let v = objective(c, pts);
                if v < best.0 {
                    best = (v, c);
                }
            }
        }
        best.1
    };
    let coarse = sweep(lat0, lat1, lon0, lon1, 0.05);
    sweep(coarse.lat - 0.1, coarse.lat + 0.1, coarse.lon - 0.1, coarse.lon + 0.1, 0.01)
}

fn c6_median() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let (mut worst, mut steps) = (0.0f64, 0);
    for set in 0..100 {
        let center = (rng.random_range(-60.0..60.0), rng.random_range(-170.0..170.0));
        let n_clusters = rng.random_range(1..=3);
        let offsets: Vec<(f64, f64)> = (0..n_clusters).map(|_| (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5))).collect();
        let pts: Vec<GeoPoint> = (0..rng.random_range(5..30))
            .map(|_| {
                let (dl, dn) = offsets[rng.random_range(0..n_clusters)];
                GeoPoint {
                    lat: center.0 + dl + rng.random_range(-0.3..0.3),
                    lon: center.1 + dn + rng.random_range(-0.3..0.3),
                }
            })
            .collect();
        let weighted: Vec<(GeoPoint, f64)> = pts.iter().map(|&q| (q, 1.0)).collect();
        let trace = weighted_geodesic_median(&weighted).map_err(|e| e.to_string())?;
        if trace.objective.windows(2).any(|w| w[1] > w[0]) {
            return Err(format!("set {set}: objective increased: {:?}", trace.objective));
        }
        steps += trace.objective.len();
        let d = haversine_miles(trace.point, grid_median(&pts));
        worst = worst.max(d);
    }
    check(worst <= 5.0, format!("max distance to grid optimum {worst:.3} mi (<= 5), {steps} monotone objective steps"))
}

// ---------------------------------------------------------------------------
// 7

fn c7_transfer_fallback() -> Outcome {
    let source = prepare(&SyntheticSpec::new(5, 30, 71));
    let target = prepare(&SyntheticSpec::new(5, 20, 72));
    let renamed: Vec<UserFeatures> = target
        .features
        .iter()
        .map(|f| UserFeatures {
            user: f.user.clone(),
            w: f.w.iter().map(|(k, v)| (format!("x{k}"), *v)).collect(),
            s: f.s.iter().map(|(k, v)| (format!("x{k}"), *v)).collect(),
            tau: f.tau,
        })
        .collect();
    let es = ExperimentSpec {
        modalities: "words,subreddits".parse().unwrap(),
        seed: 7,
        min_cell_users: 10,
        ..Default::default()
    };
    let r = run_transfer(&es, (&source.features, &source.labels), (&renamed, &target.labels), &default_stopwords(), Scope::Global)
        .map_err(|e| e.to_string())?;
    let coords: Vec<GeoPoint> = source.labels.iter().map(|l| l.coords).collect();
    let map = baseline_map(&coords, &build_candidates(&coords).unwrap(), es.seed).map_err(|e| e.to_string())?;
    let at_map = r.errors.iter().filter(|e| e.pred_lat == map.lat && e.pred_lon == map.lon).count();
    check(
        r.report.n_fallback == r.report.n_users && at_map == r.report.n_users,
        format!("n_fallback {} of {} users, {at_map} predictions at the MAP point", r.report.n_fallback, r.report.n_users),
    )
}

// ---------------------------------------------------------------------------
// 8 and 10

const PIPELINE_SPEC: &str = "\
n_cities = 5
users_per_city = 200
vocab_size = 100
toponym_rate = 0.9
tau_shift_hours = 0.0
group_predictiveness = 0.3
seed = 1
noise_rate = 0.1
location_jitter_deg = 0.05
";

fn run_pipeline(dir: &Path) -> Result<(), String> {
    let f = |n: &str| dir.join(n);
    std::fs::write(f("spec.toml"), PIPELINE_SPEC).map_err(|e| e.to_string())?;
    geoloc(&["synth", "--spec", p(&f("spec.toml")), "--out-dir", p(dir)])?;
    geoloc(&["label", "--comments", p(&f("corpus.jsonl")), "--seeds", p(&f("seeds.txt")), "--out", p(&f("labels.jsonl"))])?;
    geoloc(&[
        "featurize",
        "--comments",
        p(&f("corpus.jsonl")),
        "--labels",
        p(&f("labels.jsonl")),
        "--exclude-seed-comments",
        "--out",
        p(&f("features.jsonl")),
    ])?;
    geoloc(&[
        "select-features",
        "--features",
        p(&f("features.jsonl")),
        "--labels",
        p(&f("labels.jsonl")),
        "--k-words",
        "1000",
        "--k-subreddits",
        "50",
        "--out",
        p(&f("vocab.tsv")),
    ])?;
    geoloc(&[
        "train",
        "--features",
        p(&f("features.jsonl")),
        "--labels",
        p(&f("labels.jsonl")),
        "--vocab",
        p(&f("vocab.tsv")),
        "--seed",
        "3",
        "--out",
        p(&f("model.json")),
    ])?;
    geoloc(&["predict", "--model", p(&f("model.json")), "--features", p(&f("features.jsonl")), "--out", p(&f("pred.jsonl"))])?;
    geoloc(&["evaluate", "--pred", p(&f("pred.jsonl")), "--truth", p(&f("truth.jsonl")), "--out", p(&f("eval.json"))])
}

const PIPELINE_OUTPUTS: [&str; 7] = [
    "corpus.jsonl",
    "labels.jsonl",
    "features.jsonl",
    "vocab.tsv",
    "model.json",
    "pred.jsonl",
    "eval.json",
];

fn c8_pipeline() -> Outcome {
    let start = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(a.path())?;
    run_pipeline(b.path())?;
    within(start, Duration::from_secs(600), "two pipeline runs")?;
    let differing: Vec<&str> = PIPELINE_OUTPUTS
        .iter()
        .copied()
        .filter(|n| std::fs::read(a.path().join(n)).ok() != std::fs::read(b.path().join(n)).ok())
        .collect();
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.path().join("eval.json")).unwrap()).unwrap();
    let acc = report["metrics"]["acc_at_100"].as_f64().ok_or("no acc_at_100 in report")?;
    let n = report["metrics"]["n_users"].as_u64().unwrap_or(0);
    check(
        acc >= 0.9 && differing.is_empty(),
        format!("Acc@100 {acc:.3} over {n} users (>= 0.9), rerun differs in {differing:?}"),
    )
}

fn c10_persistence() -> Outcome {
    // Fixtures: a CLI-trained model with temporal features, plus one trained in-process without.
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path())?;
    let feats = geoloc::features::load_features(dir.path().join("features.jsonl")).map_err(|e| e.to_string())?;
    let cli_model = load_model(dir.path().join("model.json")).map_err(|e| e.to_string())?;

    let data = prepare(&SyntheticSpec::new(4, 20, 10));
    let es = ExperimentSpec {
        modalities: "words,subreddits".parse().unwrap(),
        min_cell_users: 10,
        ..Default::default()
    };
    let words_model = {
        let users = geoloc::model::join_users(&data.features, &data.labels);
        let vocab = select_features(&users, &default_stopwords(), &SelectOptions { min_cell_users: 10, ..Default::default() })
            .unwrap()
            .vocabulary(200, 20);
        geoloc::model::train_model(&users, &vocab, &geoloc::model::TrainConfig {
            modalities: es.modalities,
            ..Default::default()
        })
        .map_err(|e| e.to_string())?
    };

    let mut checked = 0;
    for (model, users) in [(&cli_model, &feats), (&words_model, &data.features)] {
        let path = dir.path().join("copy.json");
        save_model(model, &path).map_err(|e| e.to_string())?;
        let back = load_model(&path).map_err(|e| e.to_string())?;
        for temporal in [false, true] {
            if predict_all(model, users, temporal) != predict_all(&back, users, temporal) {
                return Err("predictions changed after reload".into());
            }
            checked += users.len();
        }
    }
    Ok(format!("{checked} predictions identical after save/load"))
}

// ---------------------------------------------------------------------------
// 9

fn c9_metrics() -> Outcome {
    let m = metrics_from_errors(&[0.0, 50.0, 150.0, 400.0], 0).map_err(|e| e.to_string())?;
    check(
        m.aed == 150.0 && m.med == 100.0 && m.acc_at_100 == 0.5,
        format!("AED {} MED {} Acc@100 {}", m.aed, m.med, m.acc_at_100),
    )
}
