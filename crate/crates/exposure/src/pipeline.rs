//! End-to-end orchestration: one TOML config drives corpus preparation,
//! vocabulary extraction, mock-engager construction, matrix assembly, the
//! estimator grid, and report rendering.
//!
//! Each stage writes its artifacts under the output directory and records a
//! content hash of everything it consumed in `.cache/<stage>.hash`; a rerun
//! whose inputs hash identically (and whose outputs still exist) skips the
//! stage. Deleting an artifact therefore rebuilds exactly that stage, and
//! a changed upstream artifact invalidates every stage that reads it.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    assemble_users, ingest_tweets, ingest_users, make_mock_engagers, write_roles_csv,
    ContributorRecords, MockEngagerPair, ParticipationThresholds, Role, TweetRecord, UserRecord,
};
use crate::error::{Error, Result};
use crate::eval::{
    cell_name, estimate_grid, score_grid, write_report, EvalReport, ExperimentData,
    ExperimentSettings, GridCell,
};
use crate::matrices::{
    activity_matrix, concat_user_matrix, default_profile_schema, frequency_matrix, profile_matrix,
    read_matrix_csv, write_matrix_csv, UserMatrix,
};
use crate::synth::{write_output, SynthConfig};
use crate::topics::{
    build_vocabulary, read_vocab_csv, topic_fractions, user_documents, write_vocab_csv,
    TopicExtractorSpec, Vocabulary,
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    pub users: PathBuf,
    pub tweets: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActivitySection {
    /// Frequency threshold above which a topic counts as engaged.
    pub threshold: f64,
}

impl Default for ActivitySection {
    fn default() -> Self {
        Self { threshold: 0.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    label: Option<String>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    #[serde(default)]
    strict: bool,
    synth: Option<SynthConfig>,
    input: Option<InputSection>,
    #[serde(default)]
    thresholds: ParticipationThresholds,
    #[serde(default)]
    topics: TopicExtractorSpec,
    #[serde(default)]
    activity: ActivitySection,
    #[serde(default)]
    experiment: ExperimentSettings,
}

/// Where the corpus comes from: generated, or existing files.
#[derive(Debug, Clone)]
pub enum CorpusSource {
    Synth(SynthConfig),
    Files { users: PathBuf, tweets: PathBuf },
}

/// A fully validated experiment description.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub label: String,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub strict: bool,
    pub source: CorpusSource,
    pub thresholds: ParticipationThresholds,
    pub topics: TopicExtractorSpec,
    pub activity: ActivitySection,
    pub experiment: ExperimentSettings,
}

impl PipelineConfig {
    /// Parse and validate a config file. `seed_override` (the `--seed` flag)
    /// wins over the file's seed; one of the two must be present. All
    /// validation happens here, before any stage runs.
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: RawConfig = toml::from_str(&text).map_err(|e| {
            Error::Config(format!("{}: {e}", path.display()))
        })?;

        let Some(seed) = seed_override.or(raw.seed) else {
            return Err(Error::Config(format!(
                "{}: no seed given; set `seed` in the config or pass --seed",
                path.display()
            )));
        };

        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };

        let source = match (raw.synth, raw.input) {
            (Some(mut synth), None) => {
                synth.seed = seed;
                synth.validate()?;
                CorpusSource::Synth(synth)
            }
            (None, Some(input)) => CorpusSource::Files {
                users: resolve(&input.users),
                tweets: resolve(&input.tweets),
            },
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "config declares both [synth] and [input]; pick one corpus source".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "config declares neither [synth] nor [input]; one corpus source is required"
                        .into(),
                ))
            }
        };

        raw.thresholds.validate()?;
        if raw.topics.n_topics == 0 {
            return Err(Error::Config("topics.n_topics must be positive".into()));
        }
        if !(0.0..1.0).contains(&raw.activity.threshold) {
            return Err(Error::Config(format!(
                "activity.threshold must be in [0, 1), got {}",
                raw.activity.threshold
            )));
        }
        let mut experiment = raw.experiment;
        experiment.seed = seed;
        experiment.label = raw.label.clone().unwrap_or_else(|| "experiment".into());
        for (name, f) in [
            ("experiment.val_fraction", experiment.val_fraction),
            ("experiment.test_fraction", experiment.test_fraction),
        ] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {f}")));
            }
        }
        experiment.pf.validate()?;
        experiment.encdec.train.validate()?;

        Ok(Self {
            label: experiment.label.clone(),
            seed,
            out_dir: raw.out_dir.map(|p| resolve(&p)),
            strict: raw.strict,
            source,
            thresholds: raw.thresholds,
            topics: raw.topics,
            activity: raw.activity,
            experiment,
        })
    }

    /// The output directory: the CLI flag wins, then the config entry.
    pub fn resolve_out_dir(&self, cli: Option<PathBuf>) -> Result<PathBuf> {
        cli.or_else(|| self.out_dir.clone()).ok_or_else(|| {
            Error::Config("no output directory; set `out_dir` in the config or pass --out".into())
        })
    }
}

// ---------------------------------------------------------------------------
// Stage bookkeeping
// ---------------------------------------------------------------------------

/// The pipeline's stages, in execution order. The corpus stage only exists
/// for synthetic sources; every other stage always runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Corpus,
    Classify,
    Topics,
    Mock,
    Matrices,
    Estimate,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Corpus => "corpus",
            Stage::Classify => "classify",
            Stage::Topics => "topics",
            Stage::Mock => "mock",
            Stage::Matrices => "matrices",
            Stage::Estimate => "estimate",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Built,
    Cached,
}

impl std::fmt::Display for StageOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StageOutcome::Built => "built",
            StageOutcome::Cached => "cached",
        })
    }
}

#[derive(Debug, Clone)]
pub struct StageReport {
    pub name: &'static str,
    pub outcome: StageOutcome,
}

/// Content fingerprint of one stage's inputs: every byte that can change
/// the stage's output goes in, length-prefixed so part boundaries can't
/// alias each other.
struct Fingerprint {
    hasher: Sha256,
}

impl Fingerprint {
    fn new(stage: &str) -> Self {
        let mut f = Self {
            hasher: Sha256::new(),
        };
        f.add(stage.as_bytes());
        f
    }

    fn add(&mut self, part: &[u8]) -> &mut Self {
        self.hasher.update(u64::try_from(part.len()).unwrap().to_le_bytes());
        self.hasher.update(part);
        self
    }

    fn add_str(&mut self, part: &str) -> &mut Self {
        self.add(part.as_bytes())
    }

    fn add_file(&mut self, path: &Path) -> Result<&mut Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(self.add(&bytes))
    }

    fn add_config<T: Serialize>(&mut self, value: &T) -> &mut Self {
        let text = toml::to_string(value).expect("config section serializes");
        self.add_str(&text)
    }

    fn digest(self) -> String {
        let bytes = self.hasher.finalize();
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }
}

struct Stager {
    cache_dir: PathBuf,
    reports: Vec<StageReport>,
}

impl Stager {
    fn new(out_dir: &Path) -> Result<Self> {
        let cache_dir = out_dir.join(".cache");
        std::fs::create_dir_all(&cache_dir).map_err(|e| Error::io(&cache_dir, e))?;
        Ok(Self {
            cache_dir,
            reports: Vec::new(),
        })
    }

    /// Skip `build` when the recorded input digest matches and all outputs
    /// exist; otherwise run it and record the new digest.
    fn run(
        &mut self,
        stage: Stage,
        fingerprint: Fingerprint,
        outputs: &[PathBuf],
        build: impl FnOnce() -> Result<()>,
    ) -> Result<StageOutcome> {
        let name = stage.name();
        let digest = fingerprint.digest();
        let marker = self.cache_dir.join(format!("{name}.hash"));
        let unchanged = std::fs::read_to_string(&marker)
            .is_ok_and(|recorded| recorded.trim() == digest)
            && outputs.iter().all(|p| p.exists());
        let outcome = if unchanged {
            StageOutcome::Cached
        } else {
            build()?;
            std::fs::write(&marker, &digest).map_err(|e| Error::io(&marker, e))?;
            StageOutcome::Built
        };
        self.reports.push(StageReport { name, outcome });
        Ok(outcome)
    }
}

// ---------------------------------------------------------------------------
// Artifact layout
// ---------------------------------------------------------------------------

/// Resolved locations of every artifact a run produces or consumes.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub users: PathBuf,
    pub tweets: PathBuf,
    pub roles: PathBuf,
    pub vocab: PathBuf,
    pub mocks: PathBuf,
    pub matrices_dir: PathBuf,
    pub estimates_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Artifacts {
    pub fn resolve(config: &PipelineConfig, out_dir: &Path) -> Self {
        let (users, tweets) = match &config.source {
            CorpusSource::Synth(_) => (
                out_dir.join("corpus/users.jsonl"),
                out_dir.join("corpus/tweets.jsonl"),
            ),
            CorpusSource::Files { users, tweets } => (users.clone(), tweets.clone()),
        };
        Self {
            users,
            tweets,
            roles: out_dir.join("roles.csv"),
            vocab: out_dir.join("vocab.csv"),
            mocks: out_dir.join("mocks.json"),
            matrices_dir: out_dir.join("matrices"),
            estimates_dir: out_dir.join("estimates"),
            report_dir: out_dir.join("report"),
        }
    }

    pub fn matrix(&self, name: &str) -> PathBuf {
        self.matrices_dir.join(format!("{name}.csv"))
    }

    pub fn estimate(&self, name: &str) -> PathBuf {
        self.estimates_dir.join(format!("{name}.csv"))
    }
}

const MATRIX_FILES: [&str; 7] = [
    "activity",
    "profile",
    "features",
    "labels",
    "mock_features",
    "mock_truth",
    "pf_activity",
];

// ---------------------------------------------------------------------------
// Shared loading helpers
// ---------------------------------------------------------------------------

struct Corpus {
    users: Vec<UserRecord>,
    tweets: Vec<TweetRecord>,
}

fn load_corpus(config: &PipelineConfig, art: &Artifacts) -> Result<Corpus> {
    let profiles = ingest_users(&art.users)?;
    let known: BTreeSet<String> = profiles.iter().map(|p| p.user_id.clone()).collect();
    let ingest = ingest_tweets(&art.tweets, &known, config.strict)?;
    let users = assemble_users(&profiles, &ingest.tweets, &config.thresholds)?;
    Ok(Corpus {
        users,
        tweets: ingest.tweets,
    })
}

/// Binary activity rows over the vocabulary for the given users.
fn activity_rows(
    users: &[&UserRecord],
    tweets: &std::collections::BTreeMap<String, Vec<TweetRecord>>,
    vocab: &Vocabulary,
    threshold: f64,
) -> Result<UserMatrix> {
    let owned: Vec<UserRecord> = users.iter().map(|&u| u.clone()).collect();
    let freq = frequency_matrix(&owned, tweets, vocab)?;
    activity_matrix(&freq, threshold)
}

fn load_mocks(path: &Path) -> Result<Vec<MockEngagerPair>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: e.to_string(),
    })
}

/// Assemble the experiment inputs from the matrices stage's files.
pub fn load_experiment_data(art: &Artifacts) -> Result<ExperimentData> {
    let missing = |name: &str, path: &Path| Error::MissingArtifact {
        stage: "matrices".into(),
        path: path.to_path_buf(),
        hint: format!("run `pipeline` or `matrices build` to produce {name}.csv"),
    };
    for name in MATRIX_FILES {
        let path = art.matrix(name);
        if !path.exists() {
            return Err(missing(name, &path));
        }
    }
    let features = read_matrix_csv(&art.matrix("features"))?;
    let labels = read_matrix_csv(&art.matrix("labels"))?;
    let mock_features = read_matrix_csv(&art.matrix("mock_features"))?;
    let mock_truth = read_matrix_csv(&art.matrix("mock_truth"))?;
    let pf_activity = read_matrix_csv(&art.matrix("pf_activity"))?;
    let activity = read_matrix_csv(&art.matrix("activity"))?;

    if labels.user_ids != features.user_ids {
        return Err(Error::IdMismatch {
            context: "features and labels".into(),
        });
    }
    let contributor_rows: Vec<usize> = labels
        .data
        .column(0)
        .iter()
        .enumerate()
        .filter(|(_, &y)| y == 1.0)
        .map(|(i, _)| i)
        .collect();
    let contributor_features = features.select_rows(&contributor_rows)?;

    Ok(ExperimentData {
        mock_features,
        mock_truth,
        contributor_features,
        pf_activity,
        activity_width: activity.n_columns(),
    })
}

// ---------------------------------------------------------------------------
// The pipeline
// ---------------------------------------------------------------------------

/// Run every stage, reusing cached artifacts where inputs are unchanged.
/// Returns the per-stage outcomes and the final report.
pub fn run_pipeline(
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<(Vec<StageReport>, EvalReport)> {
    let (stages, report) = run_stages(config, out_dir, Stage::Report)?;
    Ok((stages, report.expect("a full run produces a report")))
}

/// Run the pipeline up to and including `upto`. The report is `Some` only
/// when the report stage ran.
pub fn run_stages(
    config: &PipelineConfig,
    out_dir: &Path,
    upto: Stage,
) -> Result<(Vec<StageReport>, Option<EvalReport>)> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let art = Artifacts::resolve(config, out_dir);
    let mut stager = Stager::new(out_dir)?;

    // corpus: generate only when the config asks for synthetic data
    if let CorpusSource::Synth(synth) = &config.source {
        let mut fp = Fingerprint::new("corpus");
        fp.add_config(synth);
        let corpus_dir = out_dir.join("corpus");
        stager.run(
            Stage::Corpus,
            fp,
            &[
                art.users.clone(),
                art.tweets.clone(),
                corpus_dir.join("exposure_truth.csv"),
            ],
            || {
                let generated = crate::synth::generate(synth)?;
                write_output(&generated, &corpus_dir)
            },
        )?;
    }
    if upto == Stage::Corpus {
        return Ok((stager.reports, None));
    }

    // classify: derive roles from the corpus
    let mut fp = Fingerprint::new("classify");
    fp.add_file(&art.users)?;
    fp.add_file(&art.tweets)?;
    fp.add_config(&config.thresholds);
    fp.add_str(&format!("strict={}", config.strict));
    stager.run(Stage::Classify, fp, &[art.roles.clone()], || {
        let corpus = load_corpus(config, &art)?;
        write_roles_csv(&art.roles, &corpus.users)
    })?;
    if upto == Stage::Classify {
        return Ok((stager.reports, None));
    }

    // topics: extract the vocabulary from all tweet text
    let mut fp = Fingerprint::new("topics");
    fp.add_file(&art.users)?;
    fp.add_file(&art.tweets)?;
    fp.add_config(&config.topics);
    fp.add_str(&format!("strict={}", config.strict));
    stager.run(Stage::Topics, fp, &[art.vocab.clone()], || {
        let corpus = load_corpus(config, &art)?;
        let docs = user_documents(&corpus.tweets);
        let vocab = build_vocabulary(&docs, &config.topics)?;
        write_vocab_csv(&art.vocab, &vocab)
    })?;
    if upto == Stage::Topics {
        return Ok((stager.reports, None));
    }

    // mock: thin every contributor into a mock engager
    let mut fp = Fingerprint::new("mock");
    fp.add_file(&art.users)?;
    fp.add_file(&art.tweets)?;
    fp.add_file(&art.vocab)?;
    fp.add_config(&config.thresholds);
    fp.add_str(&format!(
        "seed={} activity_threshold={} strict={}",
        config.seed, config.activity.threshold, config.strict
    ));
    stager.run(Stage::Mock, fp, &[art.mocks.clone()], || {
        let corpus = load_corpus(config, &art)?;
        let vocab = read_vocab_csv(&art.vocab)?;
        let contributors = contributor_records(
            &corpus.users,
            &corpus.tweets,
            &vocab,
            config.activity.threshold,
        );
        let pairs = make_mock_engagers(&contributors, &config.thresholds, config.seed)?;
        let json = serde_json::to_string_pretty(&pairs).expect("mock pairs serialize");
        std::fs::write(&art.mocks, json).map_err(|e| Error::io(&art.mocks, e))
    })?;
    if upto == Stage::Mock {
        return Ok((stager.reports, None));
    }

    // matrices: frequency/activity/profile blocks plus the mock matrices
    let mut fp = Fingerprint::new("matrices");
    fp.add_file(&art.users)?;
    fp.add_file(&art.tweets)?;
    fp.add_file(&art.vocab)?;
    fp.add_file(&art.mocks)?;
    fp.add_config(&config.thresholds);
    fp.add_config(&config.activity);
    fp.add_str(&format!("strict={}", config.strict));
    let matrix_outputs: Vec<PathBuf> = MATRIX_FILES.iter().map(|n| art.matrix(n)).collect();
    stager.run(Stage::Matrices, fp, &matrix_outputs, || {
        build_matrices(config, &art)
    })?;
    if upto == Stage::Matrices {
        return Ok((stager.reports, None));
    }

    // estimate: the full method × profile grid over every mock
    let mut fp = Fingerprint::new("estimate");
    for name in MATRIX_FILES {
        fp.add_file(&art.matrix(name))?;
    }
    fp.add_config(&config.experiment);
    let estimate_outputs: Vec<PathBuf> = grid_cell_names()
        .iter()
        .map(|n| art.estimate(n))
        .collect();
    stager.run(Stage::Estimate, fp, &estimate_outputs, || {
        let data = load_experiment_data(&art)?;
        std::fs::create_dir_all(&art.estimates_dir)
            .map_err(|e| Error::io(&art.estimates_dir, e))?;
        for cell in estimate_grid(&data, &config.experiment)? {
            if let Some(est) = &cell.estimates {
                write_matrix_csv(&art.estimate(&cell.name()), est)?;
            }
        }
        Ok(())
    })?;
    if upto == Stage::Estimate {
        return Ok((stager.reports, None));
    }

    // report: score the grid on the test fold and render
    let mut fp = Fingerprint::new("report");
    for name in grid_cell_names() {
        let path = art.estimate(&name);
        if path.exists() {
            fp.add_file(&path)?;
        }
    }
    fp.add_file(&art.matrix("mock_truth"))?;
    fp.add_config(&config.experiment);
    let report = score_pipeline(config, out_dir)?;
    let report_outputs = vec![
        art.report_dir.join("report.csv"),
        art.report_dir.join("report.md"),
    ];
    stager.run(Stage::Report, fp, &report_outputs, || {
        write_report(&report, &art.report_dir)
    })?;

    Ok((stager.reports, Some(report)))
}

/// Names of the populated grid cells, in render order.
fn grid_cell_names() -> Vec<String> {
    use crate::estimators::Method;
    let mut names = Vec::new();
    for with_profile in [false, true] {
        for method in Method::ALL {
            if method == Method::Pf && with_profile {
                continue;
            }
            names.push(cell_name(method, with_profile));
        }
    }
    names
}

/// Every matrix one corpus produces, with aligned rows and columns.
#[derive(Debug, Clone)]
pub struct MatrixBundle {
    /// Binary activity per posting user (engagers and contributors).
    pub activity: UserMatrix,
    /// One-hot profile blocks per posting user.
    pub profile: UserMatrix,
    /// Activity then profile, concatenated.
    pub features: UserMatrix,
    /// 1 for contributors, 0 for engagers.
    pub labels: UserMatrix,
    /// Thinned activity plus source profile, one row per mock engager.
    pub mock_features: UserMatrix,
    /// The source contributor's full activity, one row per mock engager.
    pub mock_truth: UserMatrix,
    /// Posting activity with mock activity stacked under it, for the
    /// factorization fit.
    pub pf_activity: UserMatrix,
}

impl MatrixBundle {
    /// The slice of the bundle the estimator grid consumes.
    pub fn experiment_data(&self) -> ExperimentData {
        let contributor_rows: Vec<usize> = self
            .labels
            .data
            .column(0)
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == 1.0)
            .map(|(i, _)| i)
            .collect();
        ExperimentData {
            mock_features: self.mock_features.clone(),
            mock_truth: self.mock_truth.clone(),
            contributor_features: self
                .features
                .select_rows(&contributor_rows)
                .expect("label rows align with feature rows"),
            pf_activity: self.pf_activity.clone(),
            activity_width: self.activity.n_columns(),
        }
    }
}

/// Contributor records (user, tweets, binary activity) ready for thinning.
pub fn contributor_records(
    users: &[UserRecord],
    tweets: &[TweetRecord],
    vocab: &Vocabulary,
    activity_threshold: f64,
) -> Vec<ContributorRecords> {
    let by_user = crate::corpus::tweets_by_user(tweets);
    users
        .iter()
        .filter(|u| u.role == Role::Contributor)
        .map(|u| {
            let tweets = by_user.get(&u.user_id).cloned().unwrap_or_default();
            let fractions = topic_fractions(&tweets, vocab);
            let activity: Vec<u8> = fractions
                .iter()
                .map(|&f| u8::from(f > activity_threshold))
                .collect();
            ContributorRecords {
                user: u.clone(),
                tweets,
                activity,
            }
        })
        .collect()
}

/// Assemble every matrix from a classified corpus, its vocabulary and its
/// mock engagers. The profile schema derives from the whole population so
/// bin edges do not depend on which users post.
pub fn assemble_matrices(
    users: &[UserRecord],
    tweets: &[TweetRecord],
    vocab: &Vocabulary,
    pairs: &[MockEngagerPair],
    activity_threshold: f64,
) -> Result<MatrixBundle> {
    let by_user = crate::corpus::tweets_by_user(tweets);

    // lurkers have no tweets, hence no defined topic frequencies
    let posting: Vec<&UserRecord> = users.iter().filter(|u| u.role != Role::Lurker).collect();
    if posting.is_empty() {
        return Err(Error::validation("corpus", "no engagers or contributors"));
    }
    let activity = activity_rows(&posting, &by_user, vocab, activity_threshold)?;

    let schema = default_profile_schema(users);
    let posting_owned: Vec<UserRecord> = posting.iter().map(|&u| u.clone()).collect();
    let profile = profile_matrix(&posting_owned, &schema)?;
    let features = concat_user_matrix(&activity, &profile)?;

    let labels = UserMatrix::new(
        features.user_ids.clone(),
        vec!["label".into()],
        ndarray::Array2::from_shape_fn((posting.len(), 1), |(i, _)| {
            f64::from(u8::from(posting[i].role == Role::Contributor))
        }),
    )?;

    // mock block: thinned activity plus the source contributor's profile
    let mock_users: Vec<UserRecord> = pairs.iter().map(|p| p.mock_user.clone()).collect();
    let mock_tweets: std::collections::BTreeMap<String, Vec<TweetRecord>> = pairs
        .iter()
        .map(|p| (p.mock_user.user_id.clone(), p.retained_tweets.clone()))
        .collect();
    let mock_refs: Vec<&UserRecord> = mock_users.iter().collect();
    let mock_activity = activity_rows(&mock_refs, &mock_tweets, vocab, activity_threshold)?;
    let mock_profile = profile_matrix(&mock_users, &schema)?;
    let mock_features = concat_user_matrix(&mock_activity, &mock_profile)?;
    let mock_truth = UserMatrix::new(
        mock_features.user_ids.clone(),
        vocab.terms.clone(),
        ndarray::Array2::from_shape_fn((pairs.len(), vocab.len()), |(i, j)| {
            f64::from(pairs[i].ground_truth_activity[j])
        }),
    )?;
    let pf_activity = activity.stack_rows(&mock_activity)?;

    Ok(MatrixBundle {
        activity,
        profile,
        features,
        labels,
        mock_features,
        mock_truth,
        pf_activity,
    })
}

fn build_matrices(config: &PipelineConfig, art: &Artifacts) -> Result<()> {
    let corpus = load_corpus(config, art)?;
    let vocab = read_vocab_csv(&art.vocab)?;
    let pairs = load_mocks(&art.mocks)?;
    let bundle = assemble_matrices(
        &corpus.users,
        &corpus.tweets,
        &vocab,
        &pairs,
        config.activity.threshold,
    )?;

    std::fs::create_dir_all(&art.matrices_dir).map_err(|e| Error::io(&art.matrices_dir, e))?;
    write_matrix_csv(&art.matrix("activity"), &bundle.activity)?;
    write_matrix_csv(&art.matrix("profile"), &bundle.profile)?;
    write_matrix_csv(&art.matrix("features"), &bundle.features)?;
    write_matrix_csv(&art.matrix("labels"), &bundle.labels)?;
    write_matrix_csv(&art.matrix("mock_features"), &bundle.mock_features)?;
    write_matrix_csv(&art.matrix("mock_truth"), &bundle.mock_truth)?;
    write_matrix_csv(&art.matrix("pf_activity"), &bundle.pf_activity)
}

/// Rebuild the report from the estimate files (cheap, deterministic), so a
/// cached run returns the same report object the original run produced.
pub fn score_pipeline(config: &PipelineConfig, out_dir: &Path) -> Result<EvalReport> {
    use crate::estimators::Method;
    let art = Artifacts::resolve(config, out_dir);
    let mock_truth = read_matrix_csv(&art.matrix("mock_truth"))?;
    let mut cells = Vec::new();
    for with_profile in [false, true] {
        for method in Method::ALL {
            let estimates = if method == Method::Pf && with_profile {
                None
            } else {
                let path = art.estimate(&cell_name(method, with_profile));
                if !path.exists() {
                    return Err(Error::MissingArtifact {
                        stage: "estimate".into(),
                        path,
                        hint: "run `pipeline` to rebuild the estimate grid".into(),
                    });
                }
                Some(read_matrix_csv(&path)?)
            };
            cells.push(GridCell {
                method,
                with_profile,
                estimates,
            });
        }
    }
    score_grid(&mock_truth, &cells, &config.experiment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::Method;

    fn demo_toml(dir: &Path, extra: &str) -> PathBuf {
        let path = dir.join("config.toml");
        let base = r#"
label = "tiny"
seed = 11
out_dir = "run"

[synth]
n_users = 300
role_mix = [0.55, 0.30, 0.15]
t_topics = 12
exposure_density = 0.25
observed_days = 60

[topics]
n_topics = 12

[experiment]
val_fraction = 0.2
test_fraction = 0.2

[experiment.pf]
n_factors = 3
max_iters = 40

[experiment.encdec.mlp]
hidden = [10]

[experiment.encdec.train]
epochs = 25
batch_size = 8
learning_rate = 0.01
"#;
        std::fs::write(&path, format!("{base}\n{extra}")).unwrap();
        path
    }

    #[test]
    fn config_requires_a_seed_before_any_work() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("no_seed.toml");
        std::fs::write(&path, "label = \"x\"\n[synth]\nn_users = 100\n").unwrap();
        let err = PipelineConfig::load(&path, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(err.to_string().contains("seed"), "{err}");
        // the CLI flag satisfies the requirement
        PipelineConfig::load(&path, Some(3)).unwrap();
    }

    #[test]
    fn config_rejects_zero_or_two_corpus_sources() {
        let dir = tempfile::tempdir().unwrap();
        let neither = dir.path().join("neither.toml");
        std::fs::write(&neither, "seed = 1\n").unwrap();
        assert!(PipelineConfig::load(&neither, None).is_err());

        let both = dir.path().join("both.toml");
        std::fs::write(
            &both,
            "seed = 1\n[synth]\nn_users = 100\n[input]\nusers = \"u.jsonl\"\ntweets = \"t.jsonl\"\n",
        )
        .unwrap();
        assert!(PipelineConfig::load(&both, None).is_err());
    }

    #[test]
    fn config_seed_flag_overrides_file_seed() {
        let dir = tempfile::tempdir().unwrap();
        let path = demo_toml(dir.path(), "");
        let config = PipelineConfig::load(&path, Some(99)).unwrap();
        assert_eq!(config.seed, 99);
        assert_eq!(config.experiment.seed, 99);
        match &config.source {
            CorpusSource::Synth(s) => assert_eq!(s.seed, 99),
            CorpusSource::Files { .. } => panic!("expected synth source"),
        }
    }

    #[test]
    fn pipeline_runs_end_to_end_and_caches() {
        let dir = tempfile::tempdir().unwrap();
        let path = demo_toml(dir.path(), "");
        let config = PipelineConfig::load(&path, None).unwrap();
        let out = config.resolve_out_dir(None).unwrap();

        let (stages, report) = run_pipeline(&config, &out).unwrap();
        assert_eq!(stages.len(), 7);
        assert!(stages.iter().all(|s| s.outcome == StageOutcome::Built));
        assert_eq!(report.cells.len(), 8);
        assert!(report.cell(Method::Pf, true).unwrap().result.is_none());

        // second run: identical inputs, everything cached, same report bytes
        let first = std::fs::read_to_string(out.join("report/report.csv")).unwrap();
        let (stages, _) = run_pipeline(&config, &out).unwrap();
        assert!(
            stages.iter().all(|s| s.outcome == StageOutcome::Cached),
            "{stages:?}"
        );
        let second = std::fs::read_to_string(out.join("report/report.csv")).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn deleting_an_artifact_rebuilds_only_downstream_stages() {
        let dir = tempfile::tempdir().unwrap();
        let path = demo_toml(dir.path(), "");
        let config = PipelineConfig::load(&path, None).unwrap();
        let out = config.resolve_out_dir(None).unwrap();
        run_pipeline(&config, &out).unwrap();

        std::fs::remove_file(out.join("vocab.csv")).unwrap();
        let (stages, _) = run_pipeline(&config, &out).unwrap();
        let outcome = |name: &str| {
            stages
                .iter()
                .find(|s| s.name == name)
                .map(|s| s.outcome)
                .unwrap()
        };
        assert_eq!(outcome("corpus"), StageOutcome::Cached);
        assert_eq!(outcome("classify"), StageOutcome::Cached);
        assert_eq!(outcome("topics"), StageOutcome::Built);
        // vocabulary reconstruction is deterministic, so the byte-identical
        // artifact leaves downstream fingerprints untouched
        assert_eq!(outcome("mock"), StageOutcome::Cached);
        assert_eq!(outcome("matrices"), StageOutcome::Cached);
    }

    #[test]
    fn changed_seed_invalidates_the_run() {
        let dir = tempfile::tempdir().unwrap();
        let path = demo_toml(dir.path(), "");
        let config = PipelineConfig::load(&path, None).unwrap();
        let out = config.resolve_out_dir(None).unwrap();
        run_pipeline(&config, &out).unwrap();

        let reseeded = PipelineConfig::load(&path, Some(12)).unwrap();
        let (stages, _) = run_pipeline(&reseeded, &out).unwrap();
        assert!(
            stages.iter().all(|s| s.outcome == StageOutcome::Built),
            "{stages:?}"
        );
    }

    #[test]
    fn report_matches_in_memory_experiment() {
        // the disk round trip (estimates written as CSV, reloaded, scored)
        // must agree with scoring the grid in memory
        let dir = tempfile::tempdir().unwrap();
        let path = demo_toml(dir.path(), "");
        let config = PipelineConfig::load(&path, None).unwrap();
        let out = config.resolve_out_dir(None).unwrap();
        let (_, report) = run_pipeline(&config, &out).unwrap();

        let art = Artifacts::resolve(&config, &out);
        let data = load_experiment_data(&art).unwrap();
        let direct = crate::eval::run_experiment(&data, &config.experiment).unwrap();
        for (a, b) in report.cells.iter().zip(&direct.cells) {
            assert_eq!(a.name(), b.name());
            match (&a.result, &b.result) {
                (Some(x), Some(y)) => {
                    assert_eq!(x.mean_l1, y.mean_l1, "{}", a.name());
                    assert_eq!(x.std_l1, y.std_l1, "{}", a.name());
                }
                (None, None) => {}
                _ => panic!("population mismatch in {}", a.name()),
            }
        }
    }

    #[test]
    fn file_source_pipeline_consumes_existing_corpus() {
        // generate a corpus with one config, then run a second config that
        // ingests those files instead of synthesizing
        let dir = tempfile::tempdir().unwrap();
        let gen_path = demo_toml(dir.path(), "");
        let gen_config = PipelineConfig::load(&gen_path, None).unwrap();
        let gen_out = gen_config.resolve_out_dir(None).unwrap();
        run_pipeline(&gen_config, &gen_out).unwrap();

        let ingest_toml = format!(
            r#"
label = "ingested"
seed = 11
out_dir = "run2"

[input]
users = "run/corpus/users.jsonl"
tweets = "run/corpus/tweets.jsonl"

[topics]
n_topics = 12

[experiment]
val_fraction = 0.2
test_fraction = 0.2

[experiment.pf]
n_factors = 3
max_iters = 40

[experiment.encdec.mlp]
hidden = [10]

[experiment.encdec.train]
epochs = 25
batch_size = 8
learning_rate = 0.01
"#
        );
        let ingest_path = dir.path().join("ingest.toml");
        std::fs::write(&ingest_path, ingest_toml).unwrap();
        let config = PipelineConfig::load(&ingest_path, None).unwrap();
        let out = config.resolve_out_dir(None).unwrap();
        let (stages, report) = run_pipeline(&config, &out).unwrap();
        // no corpus stage when the corpus comes from files
        assert!(stages.iter().all(|s| s.name != "corpus"));
        assert_eq!(stages.len(), 6);
        report.verify().unwrap();
    }
}
