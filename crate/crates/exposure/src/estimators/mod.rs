//! Exposure estimators: given what low-activity users demonstrably engaged
//! with, recover what they were probably exposed to.
//!
//! Four methods share one output shape (users x topics, probabilities in
//! [0, 1]): nearest-neighbor matching, conditional nearest-neighbor
//! matching, Poisson matrix factorization, and a neural encoder-decoder.

pub mod encdec;
pub mod matching;
pub mod pf;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrices::UserMatrix;

pub use encdec::{encdec_estimate, encdec_fit, EncDecConfig};
pub use matching::{conditional_nn_match, nn_match, MatchResult, Metric};
pub use pf::{pf_exposure, pf_fit, PfConfig, PfModel, RateMap};

/// Estimator selector, as spelled on the command line and in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Nearest neighbor over contributors.
    Nn,
    /// Nearest neighbor restricted to candidates covering observed activity.
    Cnn,
    /// Gamma-Poisson matrix factorization.
    Pf,
    /// Feed-forward encoder-decoder network.
    Encdec,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Nn, Method::Cnn, Method::Pf, Method::Encdec];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Nn => "nn",
            Method::Cnn => "cnn",
            Method::Pf => "pf",
            Method::Encdec => "encdec",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nn" => Ok(Method::Nn),
            "cnn" => Ok(Method::Cnn),
            "pf" => Ok(Method::Pf),
            "encdec" => Ok(Method::Encdec),
            other => Err(Error::Config(format!(
                "unknown estimator {other}; expected nn, cnn, pf, or encdec"
            ))),
        }
    }
}

/// Check that every estimate is a finite probability.
pub fn validate_estimates(estimates: &UserMatrix) -> Result<()> {
    for ((i, j), &v) in estimates.data.indexed_iter() {
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(Error::validation(
                format!(
                    "estimate for user {} topic {}",
                    estimates.user_ids[i], estimates.columns[j]
                ),
                format!("{v} is not a probability"),
            ));
        }
    }
    Ok(())
}
