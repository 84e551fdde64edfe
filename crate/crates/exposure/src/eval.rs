//! Normalized L1 scoring and the full estimator-comparison experiment:
//! every method with and without profile columns, scored against ground
//! truth on a held-out mock-engager test fold.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    conditional_nn_match, encdec_estimate, encdec_fit, nn_match, pf_exposure, pf_fit,
    validate_estimates, EncDecConfig, Method, Metric, PfConfig, RateMap,
};
use crate::matrices::UserMatrix;

// ---------------------------------------------------------------------------
// The dissimilarity measure
// ---------------------------------------------------------------------------

fn check_shapes(truth: &Array2<f64>, estimate: &Array2<f64>) -> Result<()> {
    if truth.dim() != estimate.dim() {
        return Err(Error::shape(
            "dissimilarity operands",
            format!("{} x {}", truth.nrows(), truth.ncols()),
            format!("{} x {}", estimate.nrows(), estimate.ncols()),
        ));
    }
    if truth.nrows() == 0 || truth.ncols() == 0 {
        return Err(Error::validation("dissimilarity operands", "empty matrix"));
    }
    Ok(())
}

/// Per-user mean absolute difference: row i maps to (1/t)·Σ_j |e_ij − ê_ij|.
pub fn per_user_l1(truth: &Array2<f64>, estimate: &Array2<f64>) -> Result<Vec<f64>> {
    check_shapes(truth, estimate)?;
    let t = truth.ncols() as f64;
    Ok(truth
        .axis_iter(Axis(0))
        .zip(estimate.axis_iter(Axis(0)))
        .map(|(e, e_hat)| {
            e.iter()
                .zip(e_hat.iter())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / t
        })
        .collect())
}

/// Normalized L1 dissimilarity: mean absolute difference over all cells,
/// computed as the mean of the per-user values so the two agree exactly.
pub fn l1_norm(truth: &Array2<f64>, estimate: &Array2<f64>) -> Result<f64> {
    let rows = per_user_l1(truth, estimate)?;
    Ok(rows.iter().sum::<f64>() / rows.len() as f64)
}

/// Population standard deviation (divide by n, not n-1).
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

// ---------------------------------------------------------------------------
// Fold assignment
// ---------------------------------------------------------------------------

/// Index split of the mock-engager pool. Train feeds the encoder-decoder,
/// validation steers its early stopping, and every estimator is scored on
/// the same test fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockFolds {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Split `n` mocks into train/val/test by seeded shuffle. Validation and
/// test each get at least one user (rounded share otherwise).
pub fn mock_folds(n: usize, val_fraction: f64, test_fraction: f64, seed: u64) -> Result<MockFolds> {
    for (name, f) in [("val_fraction", val_fraction), ("test_fraction", test_fraction)] {
        if !(0.0..1.0).contains(&f) {
            return Err(Error::Config(format!("{name} must be in [0, 1), got {f}")));
        }
    }
    if n < 3 {
        return Err(Error::validation(
            "mock-engager pool",
            format!("{n} mocks cannot fill train, validation, and test folds"),
        ));
    }
    let n_val = ((n as f64 * val_fraction).round() as usize).max(1);
    let n_test = ((n as f64 * test_fraction).round() as usize).max(1);
    if n_val + n_test >= n {
        return Err(Error::Config(format!(
            "fold fractions {val_fraction}/{test_fraction} leave no training \
             mocks out of {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let (test, rest) = order.split_at(n_test);
    let (val, train) = rest.split_at(n_val);
    let mut folds = MockFolds {
        train: train.to_vec(),
        val: val.to_vec(),
        test: test.to_vec(),
    };
    folds.train.sort_unstable();
    folds.val.sort_unstable();
    folds.test.sort_unstable();
    Ok(folds)
}

// ---------------------------------------------------------------------------
// Experiment grid
// ---------------------------------------------------------------------------

/// Everything the grid needs, prepared by the pipeline. Feature matrices put
/// the activity block in the leading `activity_width` columns with profile
/// columns after it.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    /// One row per mock engager: thinned activity, then profile.
    pub mock_features: UserMatrix,
    /// Ground truth per mock: the source contributor's full activity vector.
    pub mock_truth: UserMatrix,
    /// One row per contributor: full activity, then profile.
    pub contributor_features: UserMatrix,
    /// Activity-only rows for the factorization fit; must cover all mocks.
    pub pf_activity: UserMatrix,
    /// Width of the leading activity block (t).
    pub activity_width: usize,
}

impl ExperimentData {
    pub fn validate(&self) -> Result<()> {
        if self.mock_features.user_ids != self.mock_truth.user_ids {
            return Err(Error::IdMismatch {
                context: "mock features and mock truth".into(),
            });
        }
        if self.mock_features.columns != self.contributor_features.columns {
            return Err(Error::shape(
                "contributor features",
                format!("columns {:?}", self.mock_features.columns.len()),
                format!("columns {:?}", self.contributor_features.columns.len()),
            ));
        }
        let t = self.activity_width;
        if t == 0 || t > self.mock_features.n_columns() {
            return Err(Error::validation(
                "activity width",
                format!(
                    "{t} does not fit the {}-column feature matrix",
                    self.mock_features.n_columns()
                ),
            ));
        }
        if self.mock_truth.n_columns() != t {
            return Err(Error::shape(
                "mock truth",
                format!("{t} columns"),
                format!("{} columns", self.mock_truth.n_columns()),
            ));
        }
        if self.pf_activity.n_columns() != t {
            return Err(Error::shape(
                "factorization activity",
                format!("{t} columns"),
                format!("{} columns", self.pf_activity.n_columns()),
            ));
        }
        let fitted: std::collections::BTreeSet<&str> =
            self.pf_activity.user_ids.iter().map(String::as_str).collect();
        for id in &self.mock_features.user_ids {
            if !fitted.contains(id.as_str()) {
                return Err(Error::UnknownUser {
                    user_id: id.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Grid-wide knobs; everything that influences the result and nothing that
/// names a file, so the snapshot stays portable.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub label: String,
    pub seed: u64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub metric: Metric,
    pub rate_map: RateMap,
    pub pf: PfConfig,
    pub encdec: EncDecConfig,
    /// Also feed contributors to the encoder-decoder as self-reconstruction
    /// pairs (their own features mapping to their own activity).
    pub contributor_pairs: bool,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            label: "experiment".into(),
            seed: 0,
            val_fraction: 0.1,
            test_fraction: 0.1,
            metric: Metric::Hamming,
            rate_map: RateMap::OneMinusExpNeg,
            pf: PfConfig::default(),
            encdec: EncDecConfig::default(),
            contributor_pairs: false,
        }
    }
}

impl ExperimentSettings {
    /// Settings paired with [`crate::synth::SynthConfig::benchmark`]: the
    /// default encoder-decoder shape with a learning rate and epoch budget
    /// sized for a few thousand training rows rather than a full corpus.
    pub fn benchmark(seed: u64) -> Self {
        let mut s = Self {
            label: format!("benchmark-{seed}"),
            seed,
            ..Self::default()
        };
        s.encdec.mlp.seed = seed;
        s.encdec.train = crate::neuralnet::TrainConfig {
            epochs: 400,
            batch_size: 32,
            learning_rate: 5e-3,
            patience: Some(40),
            seed,
            ..s.encdec.train
        };
        s.pf.seed = seed;
        s
    }
}

/// Scores for one populated grid cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub mean_l1: f64,
    pub std_l1: f64,
    pub per_user: Vec<f64>,
}

/// One cell of the method × profile grid; `result` is `None` exactly for
/// the factorization-with-profile combination, which is not defined.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalCell {
    pub method: Method,
    pub with_profile: bool,
    pub result: Option<CellResult>,
}

impl EvalCell {
    pub fn name(&self) -> String {
        cell_name(self.method, self.with_profile)
    }
}

/// The full experiment outcome: all grid cells scored on one test fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub seed: u64,
    /// Users in the test fold, in score order.
    pub test_user_ids: Vec<String>,
    /// Cells in render order: the profile-off block, then profile-on.
    pub cells: Vec<EvalCell>,
    /// Settings the report was produced under, serialized for provenance.
    pub config_snapshot: String,
}

impl EvalReport {
    pub fn cell(&self, method: Method, with_profile: bool) -> Option<&EvalCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.with_profile == with_profile)
    }

    /// Check the stored aggregates against the per-user vectors.
    pub fn verify(&self) -> Result<()> {
        for cell in &self.cells {
            let Some(r) = &cell.result else { continue };
            if r.per_user.len() != self.test_user_ids.len() {
                return Err(Error::shape(
                    format!("cell {} per-user scores", cell.name()),
                    format!("{} users", self.test_user_ids.len()),
                    format!("{} scores", r.per_user.len()),
                ));
            }
            let mean = r.per_user.iter().sum::<f64>() / r.per_user.len() as f64;
            let std = population_std(&r.per_user);
            if (mean - r.mean_l1).abs() > 1e-12 || (std - r.std_l1).abs() > 1e-12 {
                return Err(Error::validation(
                    format!("cell {}", cell.name()),
                    format!(
                        "stored mean/std {}/{} disagree with per-user vector \
                         {mean}/{std}",
                        r.mean_l1, r.std_l1
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Grid-cell naming used for estimate files and per-user score files.
pub fn cell_name(method: Method, with_profile: bool) -> String {
    format!(
        "{}_{}",
        method.as_str(),
        if with_profile { "on" } else { "off" }
    )
}

/// Full-pool estimates for one grid cell: one row per mock engager.
#[derive(Debug, Clone)]
pub struct GridCell {
    pub method: Method,
    pub with_profile: bool,
    /// `None` exactly for the factorization-with-profile combination.
    pub estimates: Option<UserMatrix>,
}

impl GridCell {
    pub fn name(&self) -> String {
        cell_name(self.method, self.with_profile)
    }
}

/// Estimates for every mock from one method, or `None` where the
/// method × profile combination is undefined. The encoder-decoder trains
/// only on the train/val folds; all other methods need no training targets.
fn estimate_cell(
    method: Method,
    with_profile: bool,
    data: &ExperimentData,
    settings: &ExperimentSettings,
    folds: &MockFolds,
) -> Result<Option<UserMatrix>> {
    let t = data.activity_width;
    let width = if with_profile {
        data.mock_features.n_columns()
    } else {
        t
    };
    let queries = data.mock_features.select_columns(0..width)?;
    let contributors = data.contributor_features.select_columns(0..width)?;
    let contributor_activity = data.contributor_features.select_columns(0..t)?;

    match method {
        Method::Nn => {
            let m = nn_match(&queries, &contributors, &contributor_activity, settings.metric)?;
            Ok(Some(m.estimates))
        }
        Method::Cnn => {
            let m = conditional_nn_match(&queries, &contributors, &contributor_activity)?;
            Ok(Some(m.estimates))
        }
        Method::Pf => {
            if with_profile {
                return Ok(None);
            }
            let model = pf_fit(&data.pf_activity, &settings.pf)?;
            let est = pf_exposure(&model, &data.mock_features.user_ids, settings.rate_map)?;
            Ok(Some(est))
        }
        Method::Encdec => {
            let mut train_features = data.mock_features.select_rows(&folds.train)?;
            let mut train_targets = data.mock_truth.select_rows(&folds.train)?;
            if settings.contributor_pairs {
                train_features = train_features.stack_rows(&data.contributor_features)?;
                train_targets = train_targets.stack_rows(&contributor_activity)?;
            }
            let train_features = train_features.select_columns(0..width)?;
            let val_features = data
                .mock_features
                .select_rows(&folds.val)?
                .select_columns(0..width)?;
            let val_targets = data.mock_truth.select_rows(&folds.val)?;
            let (model, _) = encdec_fit(
                &train_features,
                &train_targets,
                &settings.encdec,
                Some((&val_features, &val_targets)),
            )?;
            let est = encdec_estimate(&model, &queries, &data.mock_truth.columns)?;
            validate_estimates(&est)?;
            Ok(Some(est))
        }
    }
}

/// Run every estimator over the whole mock pool. Cells come back in render
/// order: the profile-off block, then profile-on.
pub fn estimate_grid(data: &ExperimentData, settings: &ExperimentSettings) -> Result<Vec<GridCell>> {
    data.validate()?;
    let folds = mock_folds(
        data.mock_features.n_users(),
        settings.val_fraction,
        settings.test_fraction,
        settings.seed,
    )?;
    let mut cells = Vec::with_capacity(2 * Method::ALL.len());
    for with_profile in [false, true] {
        for method in Method::ALL {
            cells.push(GridCell {
                method,
                with_profile,
                estimates: estimate_cell(method, with_profile, data, settings, &folds)?,
            });
        }
    }
    Ok(cells)
}

/// Estimates for a single method × profile combination; errors (rather than
/// returning an empty cell) when the combination is undefined.
pub fn estimate_single(
    data: &ExperimentData,
    settings: &ExperimentSettings,
    method: Method,
    with_profile: bool,
) -> Result<UserMatrix> {
    data.validate()?;
    let folds = mock_folds(
        data.mock_features.n_users(),
        settings.val_fraction,
        settings.test_fraction,
        settings.seed,
    )?;
    estimate_cell(method, with_profile, data, settings, &folds)?.ok_or_else(|| {
        Error::Config(format!(
            "the {} estimator has no profile-aware variant",
            method.as_str()
        ))
    })
}

/// Score full-pool grid estimates on the seeded test fold.
///
/// `mock_truth` must carry one row per mock, aligned with each cell's
/// estimate rows; the fold split re-derives from the settings, so scoring
/// estimates loaded back from disk gives the same report as scoring them
/// in memory.
pub fn score_grid(
    mock_truth: &UserMatrix,
    cells: &[GridCell],
    settings: &ExperimentSettings,
) -> Result<EvalReport> {
    let folds = mock_folds(
        mock_truth.n_users(),
        settings.val_fraction,
        settings.test_fraction,
        settings.seed,
    )?;
    let test_truth = mock_truth.select_rows(&folds.test)?;

    let mut scored = Vec::with_capacity(cells.len());
    for cell in cells {
        let result = match &cell.estimates {
            None => None,
            Some(est) => {
                if est.user_ids != mock_truth.user_ids {
                    return Err(Error::IdMismatch {
                        context: format!("cell {} estimates", cell.name()),
                    });
                }
                let test_est = est.select_rows(&folds.test)?;
                let per_user = per_user_l1(&test_truth.data, &test_est.data)?;
                Some(CellResult {
                    mean_l1: per_user.iter().sum::<f64>() / per_user.len() as f64,
                    std_l1: population_std(&per_user),
                    per_user,
                })
            }
        };
        scored.push(EvalCell {
            method: cell.method,
            with_profile: cell.with_profile,
            result,
        });
    }

    let report = EvalReport {
        label: settings.label.clone(),
        seed: settings.seed,
        test_user_ids: test_truth.user_ids,
        cells: scored,
        config_snapshot: toml::to_string(settings)
            .map_err(|e| Error::Config(format!("settings not serializable: {e}")))?,
    };
    report.verify()?;
    Ok(report)
}

/// Estimate the whole grid and score it on the held-out test fold.
pub fn run_experiment(
    data: &ExperimentData,
    settings: &ExperimentSettings,
) -> Result<EvalReport> {
    let cells = estimate_grid(data, settings)?;
    score_grid(&data.mock_truth, &cells, settings)
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

/// Render the grid; CSV keeps full precision, markdown rounds to two
/// decimals. Both orderings are fixed, so rerendering is byte-identical.
pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Markdown => render_markdown(report),
    }
}

pub fn render_csv(report: &EvalReport) -> String {
    let mut out = String::from("method,profile,status,mean_l1,std_l1,n_users\n");
    for cell in &report.cells {
        let profile = if cell.with_profile { "on" } else { "off" };
        match &cell.result {
            Some(r) => {
                let _ = writeln!(
                    out,
                    "{},{profile},ok,{},{},{}",
                    cell.method.as_str(),
                    r.mean_l1,
                    r.std_l1,
                    r.per_user.len()
                );
            }
            None => {
                let _ = writeln!(out, "{},{profile},n/a,,,", cell.method.as_str());
            }
        }
    }
    out
}

pub fn render_markdown(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# Exposure estimation: {} (seed {})\n",
        report.label, report.seed
    );
    let _ = writeln!(
        out,
        "L1 dissimilarity to ground truth on {} held-out mock engagers; \
         lower is better.\n",
        report.test_user_ids.len()
    );
    for with_profile in [false, true] {
        let heading = if with_profile {
            "With profile information"
        } else {
            "Without profile information"
        };
        let _ = writeln!(out, "## {heading}\n");
        let _ = writeln!(out, "| method | L1 (mean ± std) |");
        let _ = writeln!(out, "|--------|-----------------|");
        for cell in report.cells.iter().filter(|c| c.with_profile == with_profile) {
            match &cell.result {
                Some(r) => {
                    let _ = writeln!(
                        out,
                        "| {} | {:.2} ± {:.2} |",
                        cell.method.as_str(),
                        r.mean_l1,
                        r.std_l1
                    );
                }
                None => {
                    let _ = writeln!(out, "| {} | n/a |", cell.method.as_str());
                }
            }
        }
        let _ = writeln!(out);
    }
    out
}

/// Write `report.csv`, `report.md`, and `per_user/<cell>.csv` under `dir`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    std::fs::write(dir.join("report.csv"), render_csv(report))
        .map_err(|e| Error::io(dir.join("report.csv"), e))?;
    std::fs::write(dir.join("report.md"), render_markdown(report))
        .map_err(|e| Error::io(dir.join("report.md"), e))?;
    let per_user_dir = dir.join("per_user");
    std::fs::create_dir_all(&per_user_dir).map_err(|e| Error::io(&per_user_dir, e))?;
    for cell in &report.cells {
        let Some(r) = &cell.result else { continue };
        let mut out = String::from("user_id,l1\n");
        for (id, v) in report.test_user_ids.iter().zip(&r.per_user) {
            let _ = writeln!(out, "{id},{v}");
        }
        let path = per_user_dir.join(format!("{}.csv", cell.name()));
        std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::{MlpConfig, TrainConfig};
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn l1_identity_and_flip() {
        let e = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(l1_norm(&e, &e).unwrap(), 0.0);
        let flipped = e.mapv(|v| 1.0 - v);
        assert_eq!(l1_norm(&e, &flipped).unwrap(), 1.0);
    }

    #[test]
    fn l1_hand_computed() {
        let e = array![[1.0, 0.0], [0.0, 1.0]];
        let e_hat = array![[0.5, 0.0], [0.0, 1.0]];
        assert_relative_eq!(l1_norm(&e, &e_hat).unwrap(), 0.125, epsilon = 1e-15);
    }

    #[test]
    fn per_user_one_bad_row() {
        let e = Array2::ones((5, 7));
        let mut e_hat = Array2::ones((5, 7));
        e_hat.row_mut(2).fill(0.0);
        let rows = per_user_l1(&e, &e_hat).unwrap();
        assert_eq!(rows, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_relative_eq!(l1_norm(&e, &e_hat).unwrap(), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn mean_of_per_user_is_l1_exactly() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..20 {
            let e = Array2::from_shape_fn((9, 13), |_| f64::from(rng.random::<bool>()));
            let e_hat = Array2::from_shape_fn((9, 13), |_| rng.random::<f64>());
            let rows = per_user_l1(&e, &e_hat).unwrap();
            let mean = rows.iter().sum::<f64>() / rows.len() as f64;
            assert!((mean - l1_norm(&e, &e_hat).unwrap()).abs() <= 1e-15);
        }
    }

    #[test]
    fn l1_matches_direct_summation() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..200 {
            let m = rng.random_range(1..8);
            let t = rng.random_range(1..8);
            let e = Array2::from_shape_fn((m, t), |_| f64::from(rng.random::<bool>()));
            let e_hat = Array2::from_shape_fn((m, t), |_| rng.random::<f64>());
            let direct: f64 =
                e.iter().zip(e_hat.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>()
                    / (m * t) as f64;
            assert!((direct - l1_norm(&e, &e_hat).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn l1_rejects_shape_mismatch_and_empty() {
        let a = Array2::<f64>::zeros((2, 2));
        let b = Array2::<f64>::zeros((2, 3));
        assert!(l1_norm(&a, &b).is_err());
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(l1_norm(&empty, &empty).is_err());
    }

    proptest! {
        #[test]
        fn l1_is_a_bounded_metric(
            rows in proptest::collection::vec(
                proptest::collection::vec(0.0f64..=1.0, 6),
                3,
            ),
            other in proptest::collection::vec(
                proptest::collection::vec(0.0f64..=1.0, 6),
                3,
            ),
            third in proptest::collection::vec(
                proptest::collection::vec(0.0f64..=1.0, 6),
                3,
            ),
        ) {
            let build = |v: &Vec<Vec<f64>>| {
                Array2::from_shape_fn((3, 6), |(i, j)| v[i][j])
            };
            let a = build(&rows);
            let b = build(&other);
            let c = build(&third);
            let ab = l1_norm(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, l1_norm(&b, &a).unwrap());
            let ac = l1_norm(&a, &c).unwrap();
            let cb = l1_norm(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }
    }

    #[test]
    fn population_std_known_value() {
        let vals = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        assert_relative_eq!(population_std(&vals), 2.0, epsilon = 1e-15);
        assert_eq!(population_std(&[]), 0.0);
        assert_eq!(population_std(&[3.0]), 0.0);
    }

    #[test]
    fn folds_partition_the_mocks() {
        let folds = mock_folds(50, 0.1, 0.1, 9).unwrap();
        assert_eq!(folds.val.len(), 5);
        assert_eq!(folds.test.len(), 5);
        assert_eq!(folds.train.len(), 40);
        let mut all: Vec<usize> = folds
            .train
            .iter()
            .chain(&folds.val)
            .chain(&folds.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(folds, mock_folds(50, 0.1, 0.1, 9).unwrap());
        assert_ne!(folds, mock_folds(50, 0.1, 0.1, 10).unwrap());
    }

    #[test]
    fn folds_guarantee_nonempty_val_and_test() {
        let folds = mock_folds(4, 0.01, 0.01, 0).unwrap();
        assert_eq!(folds.val.len(), 1);
        assert_eq!(folds.test.len(), 1);
        assert_eq!(folds.train.len(), 2);
        assert!(mock_folds(2, 0.1, 0.1, 0).is_err());
        assert!(mock_folds(10, 0.5, 0.5, 0).is_err());
    }

    // -- grid fixture ------------------------------------------------------

    /// Small deterministic world: 4 activity topics + 3 profile columns.
    /// Mock truth rows equal a contributor's activity; mock features are a
    /// thinned copy.
    fn fixture() -> ExperimentData {
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let t = 4;
        let p = 3;
        let n_contrib = 6;
        let n_mock = 12;

        let contrib_activity =
            Array2::from_shape_fn((n_contrib, t), |_| f64::from(rng.random::<f64>() < 0.5));
        let contrib_profile =
            Array2::from_shape_fn((n_contrib, p), |_| f64::from(rng.random::<f64>() < 0.5));

        let mut mock_features = Array2::zeros((n_mock, t + p));
        let mut mock_truth = Array2::zeros((n_mock, t));
        for i in 0..n_mock {
            let source = i % n_contrib;
            for j in 0..t {
                let v = contrib_activity[[source, j]];
                mock_truth[[i, j]] = v;
                // thin: drop each active topic with probability 1/2
                mock_features[[i, j]] = if v == 1.0 && rng.random::<f64>() < 0.5 {
                    0.0
                } else {
                    v
                };
            }
            for j in 0..p {
                mock_features[[i, t + j]] = contrib_profile[[source, j]];
            }
        }

        let mut contributor_features = Array2::zeros((n_contrib, t + p));
        for i in 0..n_contrib {
            for j in 0..t {
                contributor_features[[i, j]] = contrib_activity[[i, j]];
            }
            for j in 0..p {
                contributor_features[[i, t + j]] = contrib_profile[[i, j]];
            }
        }

        let mock_ids: Vec<String> = (0..n_mock).map(|i| format!("m{i}")).collect();
        let contrib_ids: Vec<String> = (0..n_contrib).map(|i| format!("c{i}")).collect();
        let feature_cols: Vec<String> = (0..t)
            .map(|j| format!("topic{j}"))
            .chain((0..p).map(|j| format!("prof{j}")))
            .collect();
        let topic_cols: Vec<String> = (0..t).map(|j| format!("topic{j}")).collect();

        // factorization pool: mocks plus contributors (activity block only)
        let mut pf_ids = mock_ids.clone();
        pf_ids.extend(contrib_ids.clone());
        let mut pf_data = Array2::zeros((n_mock + n_contrib, t));
        for i in 0..n_mock {
            for j in 0..t {
                pf_data[[i, j]] = mock_features[[i, j]];
            }
        }
        for i in 0..n_contrib {
            for j in 0..t {
                pf_data[[n_mock + i, j]] = contrib_activity[[i, j]];
            }
        }

        ExperimentData {
            mock_features: UserMatrix::new(mock_ids.clone(), feature_cols.clone(), mock_features)
                .unwrap(),
            mock_truth: UserMatrix::new(mock_ids, topic_cols.clone(), mock_truth).unwrap(),
            contributor_features: UserMatrix::new(contrib_ids, feature_cols, contributor_features)
                .unwrap(),
            pf_activity: UserMatrix::new(pf_ids, topic_cols, pf_data).unwrap(),
            activity_width: t,
        }
    }

    fn fast_settings() -> ExperimentSettings {
        ExperimentSettings {
            val_fraction: 0.2,
            test_fraction: 0.2,
            pf: PfConfig {
                n_factors: 2,
                max_iters: 50,
                ..PfConfig::default()
            },
            encdec: EncDecConfig {
                mlp: MlpConfig {
                    hidden: vec![6],
                    seed: 0,
                },
                train: TrainConfig {
                    epochs: 30,
                    batch_size: 4,
                    learning_rate: 1e-2,
                    ..TrainConfig::default()
                },
            },
            ..ExperimentSettings::default()
        }
    }

    #[test]
    fn grid_has_seven_populated_cells_and_one_na() {
        let report = run_experiment(&fixture(), &fast_settings()).unwrap();
        assert_eq!(report.cells.len(), 8);
        let populated = report.cells.iter().filter(|c| c.result.is_some()).count();
        assert_eq!(populated, 7);
        let na = report.cell(Method::Pf, true).unwrap();
        assert!(na.result.is_none());
        report.verify().unwrap();
        // every cell appears exactly once
        for with_profile in [false, true] {
            for method in Method::ALL {
                let n = report
                    .cells
                    .iter()
                    .filter(|c| c.method == method && c.with_profile == with_profile)
                    .count();
                assert_eq!(n, 1, "{method} profile={with_profile}");
            }
        }
    }

    #[test]
    fn experiment_is_deterministic() {
        let a = run_experiment(&fixture(), &fast_settings()).unwrap();
        let b = run_experiment(&fixture(), &fast_settings()).unwrap();
        assert_eq!(render_csv(&a), render_csv(&b));
        assert_eq!(render_markdown(&a), render_markdown(&b));
    }

    #[test]
    fn contributor_pairs_flag_changes_the_encdec_cell_only() {
        let with = ExperimentSettings {
            contributor_pairs: true,
            ..fast_settings()
        };
        let a = run_experiment(&fixture(), &fast_settings()).unwrap();
        let b = run_experiment(&fixture(), &with).unwrap();
        for method in [Method::Nn, Method::Cnn, Method::Pf] {
            assert_eq!(
                a.cell(method, false).unwrap().result.as_ref().unwrap().mean_l1,
                b.cell(method, false).unwrap().result.as_ref().unwrap().mean_l1,
            );
        }
        let ea = a.cell(Method::Encdec, true).unwrap().result.as_ref().unwrap();
        let eb = b.cell(Method::Encdec, true).unwrap().result.as_ref().unwrap();
        assert_ne!(ea.mean_l1, eb.mean_l1);
    }

    #[test]
    fn rendering_rounds_markdown_but_not_csv() {
        let report = EvalReport {
            label: "demo".into(),
            seed: 1,
            test_user_ids: vec!["m0".into(), "m1".into()],
            cells: vec![
                EvalCell {
                    method: Method::Nn,
                    with_profile: false,
                    result: Some(CellResult {
                        mean_l1: 0.256999,
                        std_l1: 0.094999,
                        per_user: vec![0.161999, 0.351999],
                    }),
                },
                EvalCell {
                    method: Method::Pf,
                    with_profile: true,
                    result: None,
                },
            ],
            config_snapshot: String::new(),
        };
        let md = render_report(&report, ReportFormat::Markdown);
        assert!(md.contains("| nn | 0.26 ± 0.09 |"), "{md}");
        assert!(md.contains("| pf | n/a |"), "{md}");
        assert!(md.contains("## Without profile information"));
        assert!(md.contains("## With profile information"));
        let csv = render_report(&report, ReportFormat::Csv);
        assert!(csv.contains("nn,off,ok,0.256999,0.094999,2"), "{csv}");
        assert!(csv.contains("pf,on,n/a,,,"), "{csv}");
        // rerender is byte-identical
        assert_eq!(md, render_report(&report, ReportFormat::Markdown));
        assert_eq!(csv, render_report(&report, ReportFormat::Csv));
    }

    #[test]
    fn report_files_are_written() {
        let report = run_experiment(&fixture(), &fast_settings()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_report(&report, dir.path()).unwrap();
        assert!(dir.path().join("report.csv").exists());
        assert!(dir.path().join("report.md").exists());
        for cell in &report.cells {
            let path = dir.path().join("per_user").join(format!("{}.csv", cell.name()));
            assert_eq!(path.exists(), cell.result.is_some(), "{}", cell.name());
        }
        let body = std::fs::read_to_string(dir.path().join("per_user/nn_off.csv")).unwrap();
        assert!(body.starts_with("user_id,l1\n"));
        assert_eq!(body.lines().count(), 1 + report.test_user_ids.len());
    }

    #[test]
    fn format_parsing() {
        assert_eq!(ReportFormat::from_str("csv").unwrap(), ReportFormat::Csv);
        assert_eq!(
            ReportFormat::from_str("markdown").unwrap(),
            ReportFormat::Markdown
        );
        assert!(matches!(
            ReportFormat::from_str("pdf"),
            Err(Error::UnknownFormat(_))
        ));
    }

    #[test]
    fn experiment_rejects_inconsistent_data() {
        let good = fixture();
        let mut bad = good.clone();
        bad.activity_width = 99;
        assert!(run_experiment(&bad, &fast_settings()).is_err());
        let mut bad = good.clone();
        bad.mock_truth.user_ids.reverse();
        assert!(run_experiment(&bad, &fast_settings()).is_err());
        let mut bad = good;
        bad.pf_activity.user_ids[0] = "stranger".into();
        assert!(run_experiment(&bad, &fast_settings()).is_err());
    }
}
