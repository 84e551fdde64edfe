//! Feature matrices: topic frequencies, binarized activity, binned profile
//! features, and their column-wise concatenation.
//!
//! Every matrix carries its row identity (user ids) and column labels so
//! downstream stages can verify alignment instead of trusting positional
//! conventions.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{s, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::{TweetRecord, UserId, UserRecord};
use crate::error::{Error, Result};
use crate::topics::{topic_fractions, Vocabulary};

/// A dense matrix with one row per user and labelled columns.
#[derive(Debug, Clone, PartialEq)]
pub struct UserMatrix {
    pub user_ids: Vec<UserId>,
    pub columns: Vec<String>,
    pub data: Array2<f64>,
}

impl UserMatrix {
    pub fn new(user_ids: Vec<UserId>, columns: Vec<String>, data: Array2<f64>) -> Result<Self> {
        if data.nrows() != user_ids.len() || data.ncols() != columns.len() {
            return Err(Error::shape(
                "user matrix",
                format!("{} x {}", user_ids.len(), columns.len()),
                format!("{} x {}", data.nrows(), data.ncols()),
            ));
        }
        Ok(Self {
            user_ids,
            columns,
            data,
        })
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn user_index(&self, user_id: &str) -> Option<usize> {
        self.user_ids.iter().position(|u| u == user_id)
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        for &i in indices {
            if i >= self.n_users() {
                return Err(Error::shape(
                    "row selection",
                    format!("index < {}", self.n_users()),
                    format!("index {i}"),
                ));
            }
        }
        let user_ids = indices.iter().map(|&i| self.user_ids[i].clone()).collect();
        let data = self.data.select(Axis(0), indices);
        Ok(Self {
            user_ids,
            columns: self.columns.clone(),
            data,
        })
    }

    /// New matrix holding a contiguous column range.
    pub fn select_columns(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.n_columns() {
            return Err(Error::shape(
                "column selection",
                format!("nonempty range within 0..{}", self.n_columns()),
                format!("{range:?}"),
            ));
        }
        Ok(Self {
            user_ids: self.user_ids.clone(),
            columns: self.columns[range.clone()].to_vec(),
            data: self.data.slice(s![.., range]).to_owned(),
        })
    }

    /// New matrix with `other`'s rows appended below this one's; the column
    /// labels must agree.
    pub fn stack_rows(&self, other: &Self) -> Result<Self> {
        if self.columns != other.columns {
            return Err(Error::shape(
                "row stacking",
                format!("columns {:?}", self.columns),
                format!("columns {:?}", other.columns),
            ));
        }
        let mut user_ids = self.user_ids.clone();
        user_ids.extend(other.user_ids.iter().cloned());
        let data = ndarray::concatenate(Axis(0), &[self.data.view(), other.data.view()])
            .expect("matching column counts");
        Ok(Self {
            user_ids,
            columns: self.columns.clone(),
            data,
        })
    }
}

// ---------------------------------------------------------------------------
// Frequency and activity
// ---------------------------------------------------------------------------

/// Per-user fraction of tweets mentioning each topic (each entry in [0, 1]).
///
/// Every user must have at least one tweet — the frequency fraction is
/// undefined otherwise — so lurkers must be filtered out beforehand.
pub fn frequency_matrix(
    users: &[UserRecord],
    tweets_by_user: &BTreeMap<UserId, Vec<TweetRecord>>,
    vocab: &Vocabulary,
) -> Result<UserMatrix> {
    let missing: Vec<UserId> = users
        .iter()
        .filter(|u| tweets_by_user.get(&u.user_id).map_or(true, Vec::is_empty))
        .map(|u| u.user_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::UsersWithoutTweets { user_ids: missing });
    }
    let mut data = Array2::zeros((users.len(), vocab.len()));
    for (i, u) in users.iter().enumerate() {
        let f = topic_fractions(&tweets_by_user[&u.user_id], vocab);
        for (j, v) in f.into_iter().enumerate() {
            data[[i, j]] = v;
        }
    }
    Ok(UserMatrix {
        user_ids: users.iter().map(|u| u.user_id.clone()).collect(),
        columns: vocab.terms.clone(),
        data,
    })
}

/// Binarize a frequency matrix: 1 where the frequency strictly exceeds
/// `threshold`, 0 otherwise. Frequencies must be finite and in [0, 1].
pub fn activity_matrix(freq: &UserMatrix, threshold: f64) -> Result<UserMatrix> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::Config(format!(
            "activity threshold must be in [0, 1), got {threshold}"
        )));
    }
    let mut data = Array2::zeros(freq.data.dim());
    for ((i, j), &f) in freq.data.indexed_iter() {
        if !f.is_finite() || !(0.0..=1.0).contains(&f) {
            return Err(Error::validation(
                format!("frequency matrix cell ({i}, {j})"),
                format!("{f} is not a fraction in [0, 1]"),
            ));
        }
        data[[i, j]] = if f > threshold { 1.0 } else { 0.0 };
    }
    Ok(UserMatrix {
        user_ids: freq.user_ids.clone(),
        columns: freq.columns.clone(),
        data,
    })
}

// ---------------------------------------------------------------------------
// Profile binning
// ---------------------------------------------------------------------------

/// How one profile feature expands into matrix columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureBinning {
    /// Two one-hot columns, `false` then `true`.
    Boolean,
    /// One column per category plus a trailing `unknown` column for missing
    /// or unlisted values.
    Categorical { categories: Vec<String> },
    /// `n_bins` equal-width bins over [min, max], clamped at both ends;
    /// optionally a trailing `unknown` column for missing values.
    Uniform {
        min: f64,
        max: f64,
        n_bins: usize,
        unknown_bin: bool,
    },
    /// A dedicated bin for zero, then one bin per integer power of `base`,
    /// clamped to `n_bins` powers.
    Logarithmic { base: f64, n_bins: usize },
}

/// Equal-width bin index: `floor((x - min) / (max - min) * n_bins)`, clamped
/// to [0, n_bins - 1].
pub fn uniform_bin(x: f64, min: f64, max: f64, n_bins: usize) -> usize {
    let raw = ((x - min) / (max - min) * n_bins as f64).floor();
    if raw < 0.0 {
        0
    } else {
        (raw as usize).min(n_bins - 1)
    }
}

/// Logarithmic bin index over `n_bins + 1` columns: zero maps to column 0,
/// positive x to `1 + clamp(floor(log_base(x)), 0, n_bins - 1)`.
pub fn log_bin(x: f64, base: f64, n_bins: usize) -> usize {
    if x <= 0.0 {
        return 0;
    }
    let raw = x.log(base).floor();
    let idx = if raw < 0.0 { 0 } else { (raw as usize).min(n_bins - 1) };
    1 + idx
}

impl FeatureBinning {
    pub fn n_columns(&self) -> usize {
        match self {
            FeatureBinning::Boolean => 2,
            FeatureBinning::Categorical { categories } => categories.len() + 1,
            FeatureBinning::Uniform {
                n_bins, unknown_bin, ..
            } => n_bins + usize::from(*unknown_bin),
            FeatureBinning::Logarithmic { n_bins, .. } => n_bins + 1,
        }
    }

    pub fn column_labels(&self, feature: &str) -> Vec<String> {
        match self {
            FeatureBinning::Boolean => {
                vec![format!("{feature}=false"), format!("{feature}=true")]
            }
            FeatureBinning::Categorical { categories } => categories
                .iter()
                .map(|c| format!("{feature}={c}"))
                .chain(std::iter::once(format!("{feature}=unknown")))
                .collect(),
            FeatureBinning::Uniform {
                n_bins, unknown_bin, ..
            } => {
                let mut labels: Vec<String> =
                    (0..*n_bins).map(|b| format!("{feature}_bin{b}")).collect();
                if *unknown_bin {
                    labels.push(format!("{feature}_unknown"));
                }
                labels
            }
            FeatureBinning::Logarithmic { n_bins, .. } => {
                std::iter::once(format!("{feature}_zero"))
                    .chain((0..*n_bins).map(|b| format!("{feature}_pow{b}")))
                    .collect()
            }
        }
    }

    fn validate(&self, feature: &str) -> Result<()> {
        match self {
            FeatureBinning::Boolean => Ok(()),
            FeatureBinning::Categorical { categories } => {
                let mut seen = std::collections::BTreeSet::new();
                for c in categories {
                    if !seen.insert(c) {
                        return Err(Error::Config(format!(
                            "feature {feature}: duplicate category {c}"
                        )));
                    }
                }
                Ok(())
            }
            FeatureBinning::Uniform {
                min, max, n_bins, ..
            } => {
                if !(max > min) || *n_bins < 2 {
                    return Err(Error::Config(format!(
                        "feature {feature}: uniform binning needs max > min and n_bins >= 2"
                    )));
                }
                Ok(())
            }
            FeatureBinning::Logarithmic { base, n_bins } => {
                if !(*base > 1.0) || *n_bins < 2 {
                    return Err(Error::Config(format!(
                        "feature {feature}: logarithmic binning needs base > 1 and n_bins >= 2"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// One named profile feature and its binning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileFeature {
    pub name: String,
    pub binning: FeatureBinning,
}

/// Ordered list of profile features; the profile matrix concatenates their
/// column blocks in this order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSchema {
    pub features: Vec<ProfileFeature>,
}

impl ProfileSchema {
    pub fn validate(&self) -> Result<()> {
        for f in &self.features {
            f.binning.validate(&f.name)?;
        }
        Ok(())
    }

    pub fn n_columns(&self) -> usize {
        self.features.iter().map(|f| f.binning.n_columns()).sum()
    }

    pub fn column_labels(&self) -> Vec<String> {
        self.features
            .iter()
            .flat_map(|f| f.binning.column_labels(&f.name))
            .collect()
    }
}

/// Default schema: age in 8 uniform bins over [13, 90] with an unknown
/// column, gender over the categories present in the corpus, boolean
/// verified/is_org, registration age in 10 uniform bins over the corpus
/// range, and follower/friend counts in base-10 logarithmic bins (8 powers
/// plus a zero bin).
pub fn default_profile_schema(users: &[UserRecord]) -> ProfileSchema {
    let mut genders: Vec<String> = users
        .iter()
        .filter_map(|u| u.gender.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    genders.sort();
    let max_registered = users
        .iter()
        .map(|u| u.registered_days)
        .max()
        .unwrap_or(0)
        .max(1);
    ProfileSchema {
        features: vec![
            ProfileFeature {
                name: "age".into(),
                binning: FeatureBinning::Uniform {
                    min: 13.0,
                    max: 90.0,
                    n_bins: 8,
                    unknown_bin: true,
                },
            },
            ProfileFeature {
                name: "gender".into(),
                binning: FeatureBinning::Categorical { categories: genders },
            },
            ProfileFeature {
                name: "verified".into(),
                binning: FeatureBinning::Boolean,
            },
            ProfileFeature {
                name: "is_org".into(),
                binning: FeatureBinning::Boolean,
            },
            ProfileFeature {
                name: "registered_days".into(),
                binning: FeatureBinning::Uniform {
                    min: 0.0,
                    max: f64::from(max_registered),
                    n_bins: 10,
                    unknown_bin: false,
                },
            },
            ProfileFeature {
                name: "followers".into(),
                binning: FeatureBinning::Logarithmic {
                    base: 10.0,
                    n_bins: 8,
                },
            },
            ProfileFeature {
                name: "friends".into(),
                binning: FeatureBinning::Logarithmic {
                    base: 10.0,
                    n_bins: 8,
                },
            },
        ],
    }
}

enum FeatureValue {
    Number(Option<f64>),
    Category(Option<String>),
    Flag(bool),
}

fn feature_value(user: &UserRecord, name: &str) -> Result<FeatureValue> {
    Ok(match name {
        "age" => FeatureValue::Number(user.age.map(f64::from)),
        "gender" => FeatureValue::Category(user.gender.clone()),
        "verified" => FeatureValue::Flag(user.verified),
        "is_org" => FeatureValue::Flag(user.is_org),
        "registered_days" => FeatureValue::Number(Some(f64::from(user.registered_days))),
        "followers" => FeatureValue::Number(Some(user.followers as f64)),
        "friends" => FeatureValue::Number(Some(user.friends as f64)),
        other => {
            return Err(Error::Config(format!(
                "profile schema references unknown feature {other}"
            )))
        }
    })
}

/// Expand each user's profile into one-hot/boolean columns per the schema.
pub fn profile_matrix(users: &[UserRecord], schema: &ProfileSchema) -> Result<UserMatrix> {
    schema.validate()?;
    let n_cols = schema.n_columns();
    let mut data = Array2::zeros((users.len(), n_cols));
    for (i, user) in users.iter().enumerate() {
        let mut offset = 0;
        for feature in &schema.features {
            let width = feature.binning.n_columns();
            let value = feature_value(user, &feature.name)?;
            match (&feature.binning, value) {
                (FeatureBinning::Boolean, FeatureValue::Flag(b)) => {
                    data[[i, offset + usize::from(b)]] = 1.0;
                }
                (FeatureBinning::Categorical { categories }, FeatureValue::Category(v)) => {
                    let idx = v
                        .and_then(|g| categories.iter().position(|c| *c == g))
                        .unwrap_or(categories.len());
                    data[[i, offset + idx]] = 1.0;
                }
                (
                    FeatureBinning::Uniform {
                        min,
                        max,
                        n_bins,
                        unknown_bin,
                    },
                    FeatureValue::Number(v),
                ) => match v {
                    Some(x) => {
                        data[[i, offset + uniform_bin(x, *min, *max, *n_bins)]] = 1.0;
                    }
                    None => {
                        if !unknown_bin {
                            return Err(Error::validation(
                                format!("user {}", user.user_id),
                                format!(
                                    "feature {} is missing but has no unknown bin",
                                    feature.name
                                ),
                            ));
                        }
                        data[[i, offset + n_bins]] = 1.0;
                    }
                },
                (FeatureBinning::Logarithmic { base, n_bins }, FeatureValue::Number(v)) => {
                    let x = v.ok_or_else(|| {
                        Error::validation(
                            format!("user {}", user.user_id),
                            format!("feature {} is missing", feature.name),
                        )
                    })?;
                    data[[i, offset + log_bin(x, *base, *n_bins)]] = 1.0;
                }
                _ => {
                    return Err(Error::Config(format!(
                        "feature {} has a binning incompatible with its value type",
                        feature.name
                    )))
                }
            }
            offset += width;
        }
    }
    UserMatrix::new(
        users.iter().map(|u| u.user_id.clone()).collect(),
        schema.column_labels(),
        data,
    )
}

/// Concatenate activity and profile blocks column-wise; rows must describe
/// the same users in the same order.
pub fn concat_user_matrix(activity: &UserMatrix, profile: &UserMatrix) -> Result<UserMatrix> {
    if activity.user_ids != profile.user_ids {
        return Err(Error::IdMismatch {
            context: "activity/profile concatenation".into(),
        });
    }
    let data = ndarray::concatenate(Axis(1), &[activity.data.view(), profile.data.view()])
        .map_err(|e| Error::shape("concatenation", "matching row counts", e.to_string()))?;
    let mut columns = activity.columns.clone();
    columns.extend(profile.columns.iter().cloned());
    UserMatrix::new(activity.user_ids.clone(), columns, data)
}

// ---------------------------------------------------------------------------
// CSV I/O
// ---------------------------------------------------------------------------

/// Write `user_id,<col...>` rows; floats use shortest round-trip formatting.
pub fn write_matrix_csv(path: &Path, m: &UserMatrix) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "user_id").map_err(|e| Error::io(path, e))?;
    for c in &m.columns {
        write!(w, ",{c}").map_err(|e| Error::io(path, e))?;
    }
    writeln!(w).map_err(|e| Error::io(path, e))?;
    for (i, uid) in m.user_ids.iter().enumerate() {
        write!(w, "{uid}").map_err(|e| Error::io(path, e))?;
        for v in m.row(i) {
            write!(w, ",{v}").map_err(|e| Error::io(path, e))?;
        }
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<UserMatrix> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: e.to_string(),
    })?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    if headers.get(0) != Some("user_id") {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "first column must be user_id".into(),
        });
    }
    let columns: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut user_ids = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg: e.to_string(),
        })?;
        if rec.len() != columns.len() + 1 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: format!("expected {} fields, found {}", columns.len() + 1, rec.len()),
            });
        }
        user_ids.push(rec[0].to_string());
        for f in rec.iter().skip(1) {
            values.push(f.parse().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: format!("bad number {f}: {e}"),
            })?);
        }
    }
    let data = Array2::from_shape_vec((user_ids.len(), columns.len()), values)
        .map_err(|e| Error::shape("matrix csv", "rectangular data", e.to_string()))?;
    UserMatrix::new(user_ids, columns, data)
}
