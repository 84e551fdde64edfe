//! Gamma-Poisson matrix factorization fitted by coordinate-ascent
//! variational inference.
//!
//! Activity counts are modelled as `a_ut ~ Poisson(sum_k pi_uk * lambda_tk)`
//! with independent Gamma priors on the user and item factors. The
//! variational posterior keeps every factor Gamma-distributed; an auxiliary
//! multinomial per nonzero cell splits each count across factors, which
//! makes every block update closed-form and the evidence lower bound
//! monotone over sweeps.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::matrices::UserMatrix;

/// Factorization hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PfConfig {
    /// Latent dimension `K`.
    pub n_factors: usize,
    /// Gamma prior shape on user factors.
    pub user_shape: f64,
    /// Gamma prior rate on user factors.
    pub user_rate: f64,
    /// Gamma prior shape on item factors.
    pub item_shape: f64,
    /// Gamma prior rate on item factors.
    pub item_rate: f64,
    pub max_iters: usize,
    /// Relative ELBO change below which the fit counts as converged.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for PfConfig {
    fn default() -> Self {
        Self {
            n_factors: 20,
            user_shape: 0.3,
            user_rate: 0.3,
            item_shape: 0.3,
            item_rate: 0.3,
            max_iters: 300,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

impl PfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_factors == 0 || self.max_iters == 0 {
            return Err(Error::Config(
                "n_factors and max_iters must be positive".into(),
            ));
        }
        for (name, v) in [
            ("user_shape", self.user_shape),
            ("user_rate", self.user_rate),
            ("item_shape", self.item_shape),
            ("item_rate", self.item_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Fitted variational posterior: independent Gamma(shape, rate) over every
/// user and item factor.
#[derive(Debug, Clone)]
pub struct PfModel {
    pub user_ids: Vec<String>,
    pub item_labels: Vec<String>,
    pub user_shape: Array2<f64>,
    pub user_rate: Array2<f64>,
    pub item_shape: Array2<f64>,
    pub item_rate: Array2<f64>,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
}

impl PfModel {
    pub fn expected_user_factors(&self) -> Array2<f64> {
        &self.user_shape / &self.user_rate
    }

    pub fn expected_item_factors(&self) -> Array2<f64> {
        &self.item_shape / &self.item_rate
    }

    /// Posterior-mean Poisson rate for every (user, item) pair.
    pub fn expected_rates(&self) -> Array2<f64> {
        self.expected_user_factors()
            .dot(&self.expected_item_factors().t())
    }
}

/// How a nonnegative Poisson rate becomes an exposure probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMap {
    /// `1 - exp(-rate)`: probability of at least one event.
    OneMinusExpNeg,
    /// `min(rate, 1)`.
    ClampUnit,
}

pub fn map_rate(rate: f64, map: RateMap) -> f64 {
    match map {
        RateMap::OneMinusExpNeg => 1.0 - (-rate).exp(),
        RateMap::ClampUnit => rate.min(1.0),
    }
}

fn expected_log(shape: &Array2<f64>, rate: &Array2<f64>) -> Array2<f64> {
    let mut out = shape.mapv(digamma);
    out.zip_mut_with(rate, |e, &r| *e -= r.ln());
    out
}

/// `E[ln p(x)] - E[ln q(x)]` for one Gamma coordinate with prior
/// (shape `c`, rate `d`) and variational posterior Gamma(`s`, `r`).
fn gamma_elbo_term(c: f64, d: f64, s: f64, r: f64) -> f64 {
    let e_ln_x = digamma(s) - r.ln();
    let e_x = s / r;
    let log_prior = c * d.ln() - ln_gamma(c) + (c - 1.0) * e_ln_x - d * e_x;
    let entropy = s - r.ln() + ln_gamma(s) + (1.0 - s) * digamma(s);
    log_prior + entropy
}

fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Fit the factorization to a nonnegative integer count matrix (binary
/// activity being the common case).
pub fn pf_fit(counts: &UserMatrix, config: &PfConfig) -> Result<PfModel> {
    config.validate()?;
    let (n_users, n_items) = counts.data.dim();
    if n_users == 0 || n_items == 0 {
        return Err(Error::validation("factorization input", "empty matrix"));
    }

    let mut nonzeros: Vec<(usize, usize, f64)> = Vec::new();
    for ((u, t), &a) in counts.data.indexed_iter() {
        if !a.is_finite() || a < 0.0 || a.fract() != 0.0 {
            return Err(Error::validation(
                format!("count matrix cell ({u}, {t})"),
                format!("{a} is not a nonnegative integer"),
            ));
        }
        if a > 0.0 {
            nonzeros.push((u, t, a));
        }
    }

    let k = config.n_factors;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut jittered = |base: f64, rows: usize| {
        Array2::from_shape_fn((rows, k), |_| base + 0.1 * rng.random::<f64>())
    };
    let mut user_shape = jittered(config.user_shape, n_users);
    let mut user_rate = jittered(config.user_rate, n_users);
    let mut item_shape = jittered(config.item_shape, n_items);
    let mut item_rate = jittered(config.item_rate, n_items);

    // constant over iterations: sum of ln(a!) across nonzero cells
    let ln_factorials: f64 = nonzeros.iter().map(|&(_, _, a)| ln_gamma(a + 1.0)).sum();

    let mut elbo_trace: Vec<f64> = Vec::with_capacity(config.max_iters);
    let mut converged = false;
    let mut scores = vec![0.0; k];

    for iteration in 0..config.max_iters {
        // auxiliary block: split each count across factors by softmax of
        // expected log factors, accumulating the per-factor allocations
        let e_log_user = expected_log(&user_shape, &user_rate);
        let e_log_item = expected_log(&item_shape, &item_rate);
        let mut user_alloc = Array2::<f64>::zeros((n_users, k));
        let mut item_alloc = Array2::<f64>::zeros((n_items, k));
        for &(u, t, a) in &nonzeros {
            for (kk, s) in scores.iter_mut().enumerate() {
                *s = e_log_user[[u, kk]] + e_log_item[[t, kk]];
            }
            let lse = log_sum_exp(&scores);
            for (kk, s) in scores.iter().enumerate() {
                let phi = (s - lse).exp();
                user_alloc[[u, kk]] += a * phi;
                item_alloc[[t, kk]] += a * phi;
            }
        }

        // user block, given allocations and current item expectations
        let new_user_rate = expected(&item_shape, &item_rate).sum_axis(Axis(0)) + config.user_rate;
        user_shape = &user_alloc + config.user_shape;
        for mut row in user_rate.rows_mut() {
            row.assign(&new_user_rate);
        }

        // item block, given allocations and updated user expectations
        let new_item_rate = expected(&user_shape, &user_rate).sum_axis(Axis(0)) + config.item_rate;
        item_shape = &item_alloc + config.item_shape;
        for mut row in item_rate.rows_mut() {
            row.assign(&new_item_rate);
        }

        let elbo = compute_elbo(
            &nonzeros,
            ln_factorials,
            config,
            &user_shape,
            &user_rate,
            &item_shape,
            &item_rate,
            &mut scores,
        );
        if !elbo.is_finite() {
            return Err(Error::NonFiniteElbo { iteration });
        }
        let done = match elbo_trace.last() {
            Some(&prev) => {
                let rel = (elbo - prev).abs() / f64::max(prev.abs(), 1e-12);
                rel < config.tolerance
            }
            None => false,
        };
        elbo_trace.push(elbo);
        if done {
            converged = true;
            break;
        }
    }

    Ok(PfModel {
        user_ids: counts.user_ids.clone(),
        item_labels: counts.columns.clone(),
        user_shape,
        user_rate,
        item_shape,
        item_rate,
        elbo_trace,
        converged,
    })
}

fn expected(shape: &Array2<f64>, rate: &Array2<f64>) -> Array2<f64> {
    shape / rate
}

/// Evidence lower bound with the auxiliary multinomials set to their
/// optimum for the current factors, so the value is comparable (and
/// non-decreasing) across sweeps.
#[allow(clippy::too_many_arguments)]
fn compute_elbo(
    nonzeros: &[(usize, usize, f64)],
    ln_factorials: f64,
    config: &PfConfig,
    user_shape: &Array2<f64>,
    user_rate: &Array2<f64>,
    item_shape: &Array2<f64>,
    item_rate: &Array2<f64>,
    scores: &mut [f64],
) -> f64 {
    let e_log_user = expected_log(user_shape, user_rate);
    let e_log_item = expected_log(item_shape, item_rate);
    let k = scores.len();

    let mut elbo = -ln_factorials;
    for &(u, t, a) in nonzeros {
        for (kk, s) in scores.iter_mut().enumerate().take(k) {
            *s = e_log_user[[u, kk]] + e_log_item[[t, kk]];
        }
        elbo += a * log_sum_exp(scores);
    }

    let user_expect_sum = expected(user_shape, user_rate).sum_axis(Axis(0));
    let item_expect_sum = expected(item_shape, item_rate).sum_axis(Axis(0));
    elbo -= user_expect_sum.dot(&item_expect_sum);

    for (s, r) in user_shape.iter().zip(user_rate.iter()) {
        elbo += gamma_elbo_term(config.user_shape, config.user_rate, *s, *r);
    }
    for (s, r) in item_shape.iter().zip(item_rate.iter()) {
        elbo += gamma_elbo_term(config.item_shape, config.item_rate, *s, *r);
    }
    elbo
}

/// Exposure probabilities for the given users: expected Poisson rate per
/// topic pushed through `map`. Every id must belong to a fitted user.
pub fn pf_exposure(model: &PfModel, user_ids: &[String], map: RateMap) -> Result<UserMatrix> {
    let index: BTreeMap<&str, usize> = model
        .user_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut rows = Vec::with_capacity(user_ids.len());
    for id in user_ids {
        match index.get(id.as_str()) {
            Some(&r) => rows.push(r),
            None => {
                return Err(Error::UnknownUser {
                    user_id: id.clone(),
                })
            }
        }
    }
    let user_factors = model.expected_user_factors();
    let item_factors = model.expected_item_factors();
    let selected = user_factors.select(Axis(0), &rows);
    let mut rates = selected.dot(&item_factors.t());
    rates.mapv_inplace(|r| map_rate(r, map));
    UserMatrix::new(user_ids.to_vec(), model.item_labels.clone(), rates)
}

/// Gamma prior contribution to the rate for users with no observed
/// activity: useful as a reference point when judging estimates.
pub fn prior_rate(config: &PfConfig) -> f64 {
    config.n_factors as f64 * (config.user_shape / config.user_rate)
        * (config.item_shape / config.item_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn single_cell(count: f64) -> UserMatrix {
        UserMatrix::new(vec!["u0".into()], vec!["t0".into()], array![[count]]).unwrap()
    }

    fn config(k: usize, seed: u64) -> PfConfig {
        PfConfig {
            n_factors: k,
            seed,
            ..PfConfig::default()
        }
    }

    #[test]
    fn single_cell_fixed_point_is_analytic() {
        // One user, one topic, one factor, count 3, priors (0.3, 0.3):
        // both shapes settle at 0.3 + 3 and both rates at the positive root
        // of x^2 - 0.3x - 3.3 = 0. The objective is quadratically flat
        // around that point, so even a near-machine-precision tolerance on
        // the relative objective change leaves ~1e-7 parameter error; the
        // assertions allow for that.
        let cfg = PfConfig {
            max_iters: 500,
            tolerance: 1e-15,
            ..config(1, 7)
        };
        let model = pf_fit(&single_cell(3.0), &cfg).unwrap();
        let expected_rate = (0.3 + (0.09f64 + 13.2).sqrt()) / 2.0;
        assert_relative_eq!(model.user_shape[[0, 0]], 3.3, epsilon = 1e-12);
        assert_relative_eq!(model.item_shape[[0, 0]], 3.3, epsilon = 1e-12);
        assert_relative_eq!(model.user_rate[[0, 0]], expected_rate, max_relative = 1e-6);
        assert_relative_eq!(model.item_rate[[0, 0]], expected_rate, max_relative = 1e-6);
        let product = model.expected_rates()[[0, 0]];
        assert_relative_eq!(
            product,
            (3.3 / expected_rate) * (3.3 / expected_rate),
            max_relative = 1e-6
        );
        assert!(model.converged);
    }

    fn random_binary(n: usize, t: usize, seed: u64, density: f64) -> UserMatrix {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let data = Array2::from_shape_fn((n, t), |_| {
            if rng.random::<f64>() < density {
                1.0
            } else {
                0.0
            }
        });
        UserMatrix::new(
            (0..n).map(|i| format!("u{i}")).collect(),
            (0..t).map(|j| format!("t{j}")).collect(),
            data,
        )
        .unwrap()
    }

    #[test]
    fn elbo_is_monotone_nondecreasing() {
        let counts = random_binary(20, 10, 3, 0.3);
        let model = pf_fit(
            &counts,
            &PfConfig {
                n_factors: 3,
                max_iters: 60,
                tolerance: 1e-12,
                seed: 5,
                ..PfConfig::default()
            },
        )
        .unwrap();
        assert!(model.elbo_trace.len() > 2);
        for w in model.elbo_trace.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0),
                "ELBO decreased: {} -> {}",
                w[0],
                w[1]
            );
        }
        assert!(model.elbo_trace.last().unwrap() > model.elbo_trace.first().unwrap());
    }

    #[test]
    fn fit_is_deterministic_per_seed() {
        let counts = random_binary(15, 8, 11, 0.25);
        let cfg = config(4, 99);
        let a = pf_fit(&counts, &cfg).unwrap();
        let b = pf_fit(&counts, &cfg).unwrap();
        assert_eq!(a.elbo_trace, b.elbo_trace);
        assert_eq!(a.user_shape, b.user_shape);
        let c = pf_fit(&counts, &config(4, 100)).unwrap();
        assert_ne!(a.user_shape, c.user_shape);
    }

    #[test]
    fn all_zero_matrix_stays_near_prior() {
        let counts = UserMatrix::new(
            (0..5).map(|i| format!("u{i}")).collect(),
            (0..4).map(|j| format!("t{j}")).collect(),
            Array2::zeros((5, 4)),
        )
        .unwrap();
        let cfg = config(2, 1);
        let model = pf_fit(&counts, &cfg).unwrap();
        // with no observations the shapes collapse to the prior shape
        assert_relative_eq!(model.user_shape[[2, 1]], 0.3, epsilon = 1e-12);
        let est = pf_exposure(&model, &counts.user_ids, RateMap::OneMinusExpNeg).unwrap();
        for &v in est.data.iter() {
            assert!(
                (0.0..0.2).contains(&v),
                "no-evidence estimate {v} should sit near the prior"
            );
        }
    }

    #[test]
    fn block_structure_is_recovered() {
        // users 0-4 live on topics 0-2, users 5-9 on topics 3-5
        let mut data = Array2::zeros((10, 6));
        for u in 0..5 {
            for t in 0..3 {
                data[[u, t]] = 1.0;
            }
        }
        for u in 5..10 {
            for t in 3..6 {
                data[[u, t]] = 1.0;
            }
        }
        let counts = UserMatrix::new(
            (0..10).map(|i| format!("u{i}")).collect(),
            (0..6).map(|j| format!("t{j}")).collect(),
            data,
        )
        .unwrap();
        let model = pf_fit(&counts, &config(2, 42)).unwrap();
        let rates = model.expected_rates();
        let mut inside = 0.0;
        let mut outside = 0.0;
        for u in 0..10 {
            for t in 0..6 {
                let in_block = (u < 5) == (t < 3);
                if in_block {
                    inside += rates[[u, t]];
                } else {
                    outside += rates[[u, t]];
                }
            }
        }
        assert!(
            inside / 30.0 > 2.0 * (outside / 30.0),
            "in-block mean {} should dominate out-block mean {}",
            inside / 30.0,
            outside / 30.0
        );
    }

    #[test]
    fn rate_map_values() {
        assert_relative_eq!(map_rate(0.0, RateMap::OneMinusExpNeg), 0.0);
        assert_relative_eq!(
            map_rate(std::f64::consts::LN_2, RateMap::OneMinusExpNeg),
            0.5,
            epsilon = 1e-12
        );
        // saturates: within 1e-8 of certainty for rates past ~20, and the
        // f64 result never exceeds 1
        for r in [20.0, 50.0, 1e6] {
            let p = map_rate(r, RateMap::OneMinusExpNeg);
            assert!((1.0 - 1e-8..=1.0).contains(&p), "rate {r} mapped to {p}");
        }
        assert_relative_eq!(map_rate(0.5, RateMap::ClampUnit), 0.5);
        assert_relative_eq!(map_rate(3.0, RateMap::ClampUnit), 1.0);
    }

    #[test]
    fn rejects_non_count_input() {
        let bad = UserMatrix::new(vec!["u0".into()], vec!["t0".into()], array![[0.5]]).unwrap();
        assert!(pf_fit(&bad, &config(1, 0)).is_err());
        let neg = UserMatrix::new(vec!["u0".into()], vec!["t0".into()], array![[-1.0]]).unwrap();
        assert!(pf_fit(&neg, &config(1, 0)).is_err());
    }

    #[test]
    fn exposure_row_selection_and_bounds() {
        let counts = random_binary(6, 5, 2, 0.4);
        let model = pf_fit(&counts, &config(2, 2)).unwrap();
        let picked = vec!["u4".to_string(), "u0".to_string()];
        let est = pf_exposure(&model, &picked, RateMap::OneMinusExpNeg).unwrap();
        assert_eq!(est.user_ids, picked);
        for &v in est.data.iter() {
            assert!((0.0..1.0).contains(&v));
        }
        let missing = vec!["u17".to_string()];
        assert!(matches!(
            pf_exposure(&model, &missing, RateMap::ClampUnit),
            Err(Error::UnknownUser { .. })
        ));
    }

    #[test]
    fn prior_rate_reference() {
        let cfg = config(20, 0);
        assert_relative_eq!(prior_rate(&cfg), 20.0, epsilon = 1e-12);
    }
}
