//! Nearest-neighbor exposure estimation.
//!
//! A low-activity user is matched to the most similar contributor and
//! inherits that contributor's full activity vector as the exposure
//! estimate. The conditional variant only accepts contributors whose
//! activity covers everything the user demonstrably engaged with.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrices::UserMatrix;

/// Row similarity used for plain nearest-neighbor matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Count of disagreeing coordinates; rows must be strictly 0/1.
    Hamming,
    /// `1 - cosine similarity`; all-zero rows count as maximally distant.
    Cosine,
}

/// Estimates plus which candidate each query row matched.
#[derive(Debug, Clone)]
pub struct MatchResult {
    pub estimates: UserMatrix,
    /// `(query user, matched candidate user)` per query row.
    pub matched: Vec<(String, String)>,
}

fn require_binary(m: &UserMatrix, what: &str) -> Result<()> {
    for ((i, j), &v) in m.data.indexed_iter() {
        if v != 0.0 && v != 1.0 {
            return Err(Error::validation(
                format!("{what} cell ({i}, {j})"),
                format!("{v} is not binary"),
            ));
        }
    }
    Ok(())
}

fn hamming(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> u32 {
    a.iter().zip(b.iter()).filter(|(x, y)| x != y).count() as u32
}

fn cosine_distance(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    let dot = a.dot(&b);
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - dot / (na * nb)
}

fn check_alignment(
    queries: &UserMatrix,
    candidates: &UserMatrix,
    candidate_activity: &UserMatrix,
) -> Result<()> {
    if queries.columns != candidates.columns {
        return Err(Error::IdMismatch {
            context: "query and candidate feature columns".into(),
        });
    }
    if candidates.user_ids != candidate_activity.user_ids {
        return Err(Error::IdMismatch {
            context: "candidate features and candidate activity rows".into(),
        });
    }
    if candidates.n_users() == 0 {
        return Err(Error::validation("candidate set", "no candidates"));
    }
    Ok(())
}

/// Match every query row to its nearest candidate and return the matched
/// candidate's activity vector. Distance ties pick the earliest candidate.
pub fn nn_match(
    queries: &UserMatrix,
    candidates: &UserMatrix,
    candidate_activity: &UserMatrix,
    metric: Metric,
) -> Result<MatchResult> {
    check_alignment(queries, candidates, candidate_activity)?;
    if metric == Metric::Hamming {
        require_binary(queries, "query features")?;
        require_binary(candidates, "candidate features")?;
    }
    let mut data = ndarray::Array2::zeros((queries.n_users(), candidate_activity.n_columns()));
    let mut matched = Vec::with_capacity(queries.n_users());
    for (qi, q) in queries.data.rows().into_iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (ci, c) in candidates.data.rows().into_iter().enumerate() {
            let d = match metric {
                Metric::Hamming => f64::from(hamming(q, c)),
                Metric::Cosine => cosine_distance(q, c),
            };
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((ci, d));
            }
        }
        let (ci, _) = best.expect("candidate set is nonempty");
        data.row_mut(qi).assign(&candidate_activity.row(ci));
        matched.push((
            queries.user_ids[qi].clone(),
            candidate_activity.user_ids[ci].clone(),
        ));
    }
    let estimates = UserMatrix::new(
        queries.user_ids.clone(),
        candidate_activity.columns.clone(),
        data,
    )?;
    Ok(MatchResult { estimates, matched })
}

/// Nearest-neighbor matching that respects observed activity.
///
/// Query features must start with the activity block (the first
/// `candidate_activity.n_columns()` feature columns). A candidate *covers* a
/// query when it is active on every topic the query is active on. Matching
/// prefers the nearest covering candidate (Hamming over the full feature
/// row); when nothing covers, the candidate minimizing
/// `distance + (t + 1) * contradictions` wins, where a contradiction is a
/// query-active topic the candidate lacks. The returned estimate is the
/// matched activity vector with every query-active topic forced on.
pub fn conditional_nn_match(
    queries: &UserMatrix,
    candidates: &UserMatrix,
    candidate_activity: &UserMatrix,
) -> Result<MatchResult> {
    check_alignment(queries, candidates, candidate_activity)?;
    require_binary(queries, "query features")?;
    require_binary(candidates, "candidate features")?;
    require_binary(candidate_activity, "candidate activity")?;
    let t = candidate_activity.n_columns();
    if queries.n_columns() < t {
        return Err(Error::shape(
            "conditional matching features",
            format!("at least {t} columns"),
            format!("{} columns", queries.n_columns()),
        ));
    }

    let contradictions = |q: ndarray::ArrayView1<'_, f64>, ci: usize| -> u32 {
        let cand = candidate_activity.row(ci);
        (0..t)
            .filter(|&j| q[j] == 1.0 && cand[j] == 0.0)
            .count() as u32
    };

    let mut data = ndarray::Array2::zeros((queries.n_users(), t));
    let mut matched = Vec::with_capacity(queries.n_users());
    for (qi, q) in queries.data.rows().into_iter().enumerate() {
        let mut best_covering: Option<(usize, u32)> = None;
        let mut best_any: Option<(usize, u32)> = None;
        for (ci, c) in candidates.data.rows().into_iter().enumerate() {
            let d = hamming(q, c);
            let contra = contradictions(q, ci);
            if contra == 0 && best_covering.is_none_or(|(_, bd)| d < bd) {
                best_covering = Some((ci, d));
            }
            let penalized = d + (t as u32 + 1) * contra;
            if best_any.is_none_or(|(_, bd)| penalized < bd) {
                best_any = Some((ci, penalized));
            }
        }
        let (ci, _) = best_covering.or(best_any).expect("candidates nonempty");
        let mut row = candidate_activity.row(ci).to_owned();
        for j in 0..t {
            if q[j] == 1.0 {
                row[j] = 1.0;
            }
        }
        data.row_mut(qi).assign(&row);
        matched.push((
            queries.user_ids[qi].clone(),
            candidate_activity.user_ids[ci].clone(),
        ));
    }
    let estimates = UserMatrix::new(
        queries.user_ids.clone(),
        candidate_activity.columns.clone(),
        data,
    )?;
    Ok(MatchResult { estimates, matched })
}
