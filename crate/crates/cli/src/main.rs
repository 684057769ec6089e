use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use geoloc::corpus::ingest;
use geoloc::eval::{self, ExperimentSpec, MetricReport, Scope};
use geoloc::features::{self, FeaturizeOptions, SelectOptions, Vocabulary};
use geoloc::gazetteer::{self, AbbreviationTable, Gazetteer, GazetteerBundle, LoadOptions};
use geoloc::label::{self, RegionBias};
use geoloc::model::{self, CovarianceKind, DensityOptions, MixtureKind, Modalities, TemporalOptions, TrainConfig};
use geoloc::synth::{self, SyntheticSpec};
use geoloc::{persist, GeoPoint};

#[derive(Parser)]
#[command(name = "geoloc", version, about = "Label, featurize, train and evaluate user geolocation models")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Gazetteer utilities.
    Gazetteer {
        #[command(subcommand)]
        command: GazetteerCommand,
    },
    /// Label users from self-identifying comments in seed submissions.
    Label(LabelArgs),
    /// Count words, subreddits and posting hours per user.
    Featurize(FeaturizeArgs),
    /// Rank features by non-localness and keep the top k per namespace.
    SelectFeatures(SelectArgs),
    /// Fit feature densities (and the temporal model) on labeled users.
    Train(TrainArgs),
    /// Predict a location for every featurized user.
    Predict(PredictArgs),
    /// Score predictions against true coordinates.
    Evaluate(EvaluateArgs),
    /// K-fold cross-validation driven by a TOML config.
    Crossval(CrossvalArgs),
    /// Train on one corpus and evaluate on another.
    Transfer(TransferArgs),
    /// Generate a synthetic corpus with ground truth.
    Synth(SynthArgs),
}

#[derive(Subcommand)]
enum GazetteerCommand {
    /// Filter a GeoNames-style dump into a gazetteer bundle.
    Build(GazetteerBuildArgs),
}

#[derive(Args)]
struct GazetteerBuildArgs {
    /// City rows: full GeoNames layout (19 columns) or the compact 9-column layout.
    #[arg(long)]
    geonames: PathBuf,
    /// admin1CodesASCII-style file naming the admin1 codes of the full layout.
    #[arg(long)]
    admin1: Option<PathBuf>,
    #[arg(long)]
    common_words: PathBuf,
    #[arg(long)]
    abbrevs: PathBuf,
    #[arg(long, default_value_t = gazetteer::DEFAULT_MIN_POPULATION)]
    min_pop: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long)]
    comments: PathBuf,
    /// Seed submission ids, one per line.
    #[arg(long)]
    seeds: PathBuf,
    /// Bundle from `gazetteer build`; the bundled sample gazetteer when omitted.
    #[arg(long)]
    gazetteer: Option<PathBuf>,
    /// `subreddit,Fragment` lines; the bundled table when omitted.
    #[arg(long)]
    region_bias: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write a review worksheet for this many labeled users.
    #[arg(long)]
    audit_sample: Option<usize>,
    /// Worksheet path; defaults to `<out>.audit.csv`.
    #[arg(long)]
    audit_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FeaturizeArgs {
    #[arg(long)]
    comments: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = features::DEFAULT_MAX_COMMENTS)]
    max_comments: usize,
    #[arg(long, default_value_t = features::DEFAULT_CUTOFF_DAYS)]
    cutoff_days: i64,
    /// Drop the comments a label was derived from (all comments in the seed
    /// submissions when `--seeds` is given).
    #[arg(long)]
    exclude_seed_comments: bool,
    #[arg(long)]
    seeds: Option<PathBuf>,
    /// Also featurize users without a label (no date cutoff).
    #[arg(long)]
    include_unlabeled: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 40_000)]
    k_words: usize,
    #[arg(long, default_value_t = 650)]
    k_subreddits: usize,
    /// Stopword list; the bundled list when omitted.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long, default_value_t = features::DEFAULT_MIN_CELL_USERS)]
    min_cell_users: usize,
    #[arg(long, default_value_t = model::MIN_FEATURE_SUPPORT)]
    min_support: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DensityArgs {
    #[arg(long, default_value = "dpmm")]
    density: MixtureKind,
    #[arg(long, default_value = "diagonal")]
    covariance: CovarianceKind,
    #[arg(long, default_value_t = model::DEFAULT_COMPONENTS)]
    components: usize,
    #[arg(long, default_value_t = model::MIN_FEATURE_SUPPORT)]
    min_support: usize,
}

impl DensityArgs {
    fn options(&self) -> DensityOptions {
        DensityOptions {
            kind: self.density,
            covariance_kind: self.covariance,
            max_components: self.components,
            min_support: self.min_support,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value = "words,subreddits,temporal")]
    modalities: Modalities,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    density: DensityArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    /// JSONL with `user`, `lat`, `lon` (labels or synthetic truth).
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CrossvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TransferArgs {
    /// Directory holding `features.jsonl` and `labels.jsonl`.
    #[arg(long)]
    train_corpus: PathBuf,
    #[arg(long)]
    test_corpus: PathBuf,
    #[arg(long, default_value = "words,subreddits,temporal")]
    modalities: Modalities,
    #[arg(long, default_value = "global")]
    scope: Scope,
    #[arg(long, default_value_t = 40_000)]
    k_words: usize,
    #[arg(long, default_value_t = 650)]
    k_subreddits: usize,
    #[arg(long, default_value_t = features::DEFAULT_MIN_CELL_USERS)]
    min_cell_users: usize,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    density: DensityArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// TOML (or JSON, by extension) synthetic spec.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Input that is well-formed but unusable; exits with status 2.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn is_validation_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<Invalid>()
            || matches!(
                c.downcast_ref::<geoloc::Error>(),
                Some(
                    geoloc::Error::InvalidArgument(_)
                        | geoloc::Error::Parse { .. }
                        | geoloc::Error::InvalidCoordinate { .. }
                        | geoloc::Error::EmptyInput(_)
                        | geoloc::Error::DimensionMismatch { .. }
                )
            )
            || c.is::<toml::de::Error>()
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("GEOLOC_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render_error(&e));
            if is_validation_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

/// Error chain joined with ": ", skipping causes already quoted by their parent.
fn render_error(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Gazetteer {
            command: GazetteerCommand::Build(a),
        } => gazetteer_build(a),
        Command::Label(a) => label(a),
        Command::Featurize(a) => featurize(a),
        Command::SelectFeatures(a) => select(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Crossval(a) => crossval(a),
        Command::Transfer(a) => transfer(a),
        Command::Synth(a) => synth(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_gazetteer_arg(path: Option<&Path>) -> Result<(Gazetteer, AbbreviationTable)> {
    match path {
        Some(p) => Ok(GazetteerBundle::read(p)?.into_parts()?),
        None => Ok(geoloc::data::default_gazetteer()),
    }
}

fn load_stopwords(path: Option<&Path>) -> Result<Vec<String>> {
    match path {
        Some(p) => Ok(gazetteer::load_word_list(p)?),
        None => Ok(geoloc::data::default_stopwords()),
    }
}

fn gazetteer_build(a: GazetteerBuildArgs) -> Result<()> {
    let opts = LoadOptions {
        min_population: a.min_pop,
        admin1_names: a.admin1.as_deref().map(gazetteer::load_admin1_names).transpose()?,
        ..Default::default()
    };
    let (g, report) = gazetteer::load_gazetteer(&a.geonames, &opts)?;
    if g.is_empty() {
        return Err(invalid(format!("{}: no rows at or above population {}", a.geonames.display(), a.min_pop)));
    }
    let common = gazetteer::load_word_list(&a.common_words)?;
    let (g, removed) = g.filter_common_words(&common);
    let (abbrevs, abbrev_report) = gazetteer::load_abbreviations(&a.abbrevs)?;
    let bundle = g.to_bundle(&abbrevs, a.min_pop);
    let mut w = create(&a.out)?;
    serde_json::to_writer(&mut w, &bundle)?;
    w.flush()?;
    eprintln!(
        "{} rows read, {} cities kept ({} below population, {} malformed), {} names removed as common words, {} abbreviations",
        report.rows,
        g.city_count(),
        report.below_population,
        report.malformed.len(),
        removed.len(),
        abbrevs.len(),
    );
    if !abbrev_report.malformed.is_empty() {
        log::warn!("{} malformed abbreviation lines", abbrev_report.malformed.len());
    }
    Ok(())
}

fn label(a: LabelArgs) -> Result<()> {
    let (g, abbrevs) = load_gazetteer_arg(a.gazetteer.as_deref())?;
    let mut bias = match &a.region_bias {
        Some(p) => RegionBias::load(p)?,
        None => RegionBias::bundled(),
    };
    let unknown = bias.retain_known(&g);
    if !unknown.is_empty() {
        log::warn!("region bias entries outside the gazetteer ignored: {}", unknown.join(", "));
    }
    let seeds = label::parse_seeds(&read_text(&a.seeds)?);
    if seeds.is_empty() {
        return Err(invalid(format!("{}: no seed submission ids", a.seeds.display())));
    }
    let (comments, skipped) = ingest(&a.comments)?;
    let (labels, stats) = label::label_corpus(comments.iter().cloned().map(Ok), &seeds, &g, &abbrevs, &bias)?;
    label::save_labels(&a.out, &labels)?;
    eprintln!(
        "{} comments ({} malformed lines skipped), {} in seed submissions, {} users labeled",
        stats.comments_read,
        skipped.len(),
        stats.comments_in_seeds,
        stats.users_labeled
    );
    eval::write_json(with_suffix(&a.out, ".stats.json"), &stats)?;
    if let Some(n) = a.audit_sample {
        let by_id: HashMap<String, _> = comments.into_iter().map(|c| (c.id.clone(), c)).collect();
        let rows = eval::audit_sample(&labels, &by_id, n, a.seed);
        let path = a.audit_out.unwrap_or_else(|| with_suffix(&a.out, ".audit.csv"));
        eval::write_audit(create(&path)?, &rows)?;
        eprintln!("audit worksheet with {} rows written to {}", rows.len(), path.display());
    }
    Ok(())
}

fn featurize(a: FeaturizeArgs) -> Result<()> {
    let labels = label::load_labels(&a.labels)?;
    let (comments, _) = ingest(&a.comments)?;
    let exclude: HashSet<String> = if !a.exclude_seed_comments {
        HashSet::new()
    } else if let Some(seeds) = &a.seeds {
        let seeds = label::parse_seeds(&read_text(seeds)?);
        comments.iter().filter(|c| seeds.contains(&c.submission_id)).map(|c| c.id.clone()).collect()
    } else {
        labels.iter().flat_map(|l| l.evidence.iter().map(|e| e.comment_id.clone())).collect()
    };
    if a.max_comments == 0 {
        return Err(invalid("--max-comments must be positive"));
    }
    let opts = FeaturizeOptions {
        max_comments: a.max_comments,
        cutoff_days: a.cutoff_days,
    };
    let feats = features::featurize_corpus(comments, &labels, &exclude, &opts, a.include_unlabeled);
    features::save_features(&a.out, &feats)?;
    eprintln!("{} users featurized", feats.len());
    Ok(())
}

fn select(a: SelectArgs) -> Result<()> {
    let feats = features::load_features(&a.features)?;
    let labels = label::load_labels(&a.labels)?;
    let stop = load_stopwords(a.stopwords.as_deref())?;
    let train = model::join_users(&feats, &labels);
    let opts = SelectOptions {
        k_words: a.k_words,
        k_subreddits: a.k_subreddits,
        min_cell_users: a.min_cell_users,
        min_support: a.min_support,
        ..Default::default()
    };
    let sel = features::select_features(&train, &stop, &opts)?;
    let vocab = sel.vocabulary(a.k_words, a.k_subreddits);
    vocab.save(&a.out)?;
    eprintln!(
        "{} cells, {} words and {} subreddits kept",
        sel.partition.len(),
        vocab.words.len(),
        vocab.subreddits.len()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let feats = features::load_features(&a.features)?;
    let labels = label::load_labels(&a.labels)?;
    let vocab = Vocabulary::load(&a.vocab)?;
    let users = model::join_users(&feats, &labels);
    let config = TrainConfig {
        modalities: a.modalities,
        density: a.density.options(),
        temporal: TemporalOptions::default(),
        seed: a.seed,
    };
    let m = model::train_model(&users, &vocab, &config)?;
    persist::save_model(&m, &a.out)?;
    eprintln!(
        "trained on {} users: {} feature densities, {} candidates, temporal {}",
        users.len(),
        m.densities.features.len(),
        m.candidates.len(),
        m.temporal.as_ref().map_or("off".to_string(), |t| format!("{} bins", t.n_bins()))
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRecord {
    user: String,
    lat: f64,
    lon: f64,
    score: Option<f64>,
    fallback: bool,
}

fn predict(a: PredictArgs) -> Result<()> {
    let m = persist::load_model(&a.model)?;
    let feats = features::load_features(&a.features)?;
    let preds = model::predict_all(&m, &feats, m.modalities.temporal);
    let mut w = create(&a.out)?;
    for p in &preds {
        let rec = PredictionRecord {
            user: p.user.clone(),
            lat: p.point.lat,
            lon: p.point.lon,
            score: p.score,
            fallback: p.fallback,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    eprintln!(
        "{} predictions ({} fallback)",
        preds.len(),
        preds.iter().filter(|p| p.fallback).count()
    );
    Ok(())
}

#[derive(Deserialize)]
struct PointRecord {
    user: String,
    lat: f64,
    lon: f64,
    #[serde(default)]
    fallback: bool,
}

fn read_points(path: &Path) -> Result<Vec<PointRecord>> {
    let f = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PointRecord = serde_json::from_str(&line)
            .map_err(|e| invalid(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Serialize)]
struct EvaluateReport {
    metrics: MetricReport,
    n_missing_predictions: usize,
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let preds = read_points(&a.pred)?;
    let truth: HashMap<String, GeoPoint> = read_points(&a.truth)?
        .into_iter()
        .map(|t| Ok((t.user, GeoPoint::new(t.lat, t.lon)?)))
        .collect::<Result<_>>()?;
    let mut p = Vec::new();
    let mut t = Vec::new();
    let mut n_fallback = 0;
    let seen: HashSet<&str> = preds.iter().map(|r| r.user.as_str()).collect();
    for r in &preds {
        if let Some(&tp) = truth.get(&r.user) {
            p.push(GeoPoint::new(r.lat, r.lon)?);
            t.push(tp);
            n_fallback += usize::from(r.fallback);
        }
    }
    if p.is_empty() {
        return Err(invalid("no predicted user appears in the truth file"));
    }
    let mut metrics = eval::metrics(&p, &t)?;
    metrics.n_fallback = n_fallback;
    let report = EvaluateReport {
        metrics,
        n_missing_predictions: truth.keys().filter(|u| !seen.contains(u.as_str())).count(),
    };
    eval::write_json(&a.out, &report)?;
    print!("{}", eval::render_table(&[("predictions".to_string(), &report.metrics)]));
    Ok(())
}

/// `crossval` configuration. Relative paths resolve against the config file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CrossvalConfig {
    features: PathBuf,
    labels: PathBuf,
    stopwords: Option<PathBuf>,
    /// One cross-validation run per modality string.
    #[serde(default = "default_runs")]
    runs: Vec<String>,
    folds: Option<usize>,
    seed: Option<u64>,
    k_words: Option<usize>,
    k_subreddits: Option<usize>,
    min_cell_users: Option<usize>,
    #[serde(default)]
    density: DensityConfig,
    #[serde(default)]
    temporal: TemporalConfig,
    errors_csv: Option<PathBuf>,
}

fn default_runs() -> Vec<String> {
    vec!["words,subreddits,temporal".into()]
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DensityConfig {
    kind: Option<String>,
    covariance: Option<String>,
    max_components: Option<usize>,
    min_support: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemporalConfig {
    n_bins_grid: Option<Vec<usize>>,
    l2_grid: Option<Vec<f64>>,
    cv_folds: Option<usize>,
    max_iterations: Option<usize>,
}

impl CrossvalConfig {
    fn experiment(&self, modalities: Modalities) -> Result<ExperimentSpec> {
        let d = ExperimentSpec::default();
        let mut density = d.density;
        if let Some(k) = &self.density.kind {
            density.kind = k.parse()?;
        }
        if let Some(c) = &self.density.covariance {
            density.covariance_kind = c.parse()?;
        }
        density.max_components = self.density.max_components.unwrap_or(density.max_components);
        density.min_support = self.density.min_support.unwrap_or(density.min_support);
        let t = &self.temporal;
        let temporal = TemporalOptions {
            n_bins_grid: t.n_bins_grid.clone().unwrap_or(d.temporal.n_bins_grid),
            l2_grid: t.l2_grid.clone().unwrap_or(d.temporal.l2_grid),
            cv_folds: t.cv_folds.unwrap_or(d.temporal.cv_folds),
            max_iterations: t.max_iterations.unwrap_or(d.temporal.max_iterations),
        };
        Ok(ExperimentSpec {
            modalities,
            folds: self.folds.unwrap_or(d.folds),
            seed: self.seed.unwrap_or(d.seed),
            k_words: self.k_words.unwrap_or(d.k_words),
            k_subreddits: self.k_subreddits.unwrap_or(d.k_subreddits),
            min_cell_users: self.min_cell_users.unwrap_or(d.min_cell_users),
            density,
            temporal,
        })
    }
}

#[derive(Serialize)]
struct CrossvalOutput {
    folds: usize,
    seed: u64,
    runs: Vec<CrossvalRun>,
}

#[derive(Serialize)]
struct CrossvalRun {
    modalities: String,
    folds: Vec<MetricReport>,
    aggregate: MetricReport,
}

fn crossval(a: CrossvalArgs) -> Result<()> {
    let text = read_text(&a.config)?;
    let mut config: CrossvalConfig =
        toml::from_str(&text).with_context(|| format!("parsing {}", a.config.display()))?;
    if a.folds.is_some() {
        config.folds = a.folds;
    }
    if a.seed.is_some() {
        config.seed = a.seed;
    }
    if config.runs.is_empty() {
        return Err(invalid("config lists no runs"));
    }
    let base = a.config.parent().unwrap_or(Path::new("."));
    let feats = features::load_features(base.join(&config.features))?;
    let labels = label::load_labels(base.join(&config.labels))?;
    let stop = load_stopwords(config.stopwords.as_ref().map(|p| base.join(p)).as_deref())?;

    let mut runs = Vec::new();
    let mut all_errors = Vec::new();
    let mut folds = 0;
    let mut seed = 0;
    for r in &config.runs {
        let spec = config.experiment(r.parse()?)?;
        folds = spec.folds;
        seed = spec.seed;
        let report = eval::run_cv(&spec, &feats, &labels, &stop)?;
        log::info!("{}: AED {:.1}", report.modalities, report.aggregate.aed);
        all_errors.extend(report.errors.iter().map(|e| (report.modalities.clone(), e.clone())));
        runs.push(CrossvalRun {
            modalities: report.modalities,
            folds: report.folds,
            aggregate: report.aggregate,
        });
    }
    let out = CrossvalOutput { folds, seed, runs };
    eval::write_json(&a.out, &out)?;
    if let Some(p) = &config.errors_csv {
        write_run_errors(&base.join(p), &all_errors)?;
    }
    let rows: Vec<(String, &MetricReport)> = out.runs.iter().map(|r| (r.modalities.clone(), &r.aggregate)).collect();
    print!("{}", eval::render_table(&rows));
    Ok(())
}

fn write_run_errors(path: &Path, errors: &[(String, eval::UserError)]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "modalities,user,fold,error_miles,fallback,pred_lat,pred_lon,true_lat,true_lon")?;
    for (m, e) in errors {
        writeln!(
            w,
            "\"{m}\",{},{},{},{},{},{},{},{}",
            e.user, e.fold, e.error_miles, e.fallback, e.pred_lat, e.pred_lon, e.true_lat, e.true_lon
        )?;
    }
    w.flush()?;
    Ok(())
}

fn transfer(a: TransferArgs) -> Result<()> {
    let load = |dir: &Path| -> Result<_> {
        let f = features::load_features(dir.join("features.jsonl"))?;
        let l = label::load_labels(dir.join("labels.jsonl"))?;
        Ok((f, l))
    };
    let (sf, sl) = load(&a.train_corpus)?;
    let (tf, tl) = load(&a.test_corpus)?;
    let stop = load_stopwords(a.stopwords.as_deref())?;
    let spec = ExperimentSpec {
        modalities: a.modalities,
        folds: 1,
        seed: a.seed,
        k_words: a.k_words,
        k_subreddits: a.k_subreddits,
        min_cell_users: a.min_cell_users,
        density: a.density.options(),
        temporal: TemporalOptions::default(),
    };
    let report = eval::run_transfer(&spec, (&sf, &sl), (&tf, &tl), &stop, a.scope)?;
    eval::write_json(&a.out, &report)?;
    print!("{}", eval::render_table(&[(report.modalities.clone(), &report.report)]));
    eprintln!(
        "feature overlap {:.3} of {} source features; {} of {} target users used the fallback",
        report.overlap_fraction, report.source_vocab_size, report.report.n_fallback, report.report.n_users
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let text = read_text(&a.spec)?;
    let spec: SyntheticSpec = if a.spec.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", a.spec.display())))?
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", a.spec.display()))?
    };
    let (g, abbrevs) = geoloc::data::default_gazetteer();
    let files = synth::generate_synthetic(&spec, &g, &abbrevs, &a.out_dir)?;
    eprintln!(
        "wrote {}, {} and {}",
        files.corpus.display(),
        files.truth.display(),
        files.seeds.display()
    );
    Ok(())
}
