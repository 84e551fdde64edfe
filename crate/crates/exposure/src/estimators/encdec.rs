//! Neural encoder-decoder estimation: learn contributors' feature-to-activity
//! mapping, then read exposure estimates off the network for thinner users.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrices::UserMatrix;
use crate::neuralnet::{train, MlpConfig, MlpModel, TrainConfig, TrainReport};

/// Network shape plus training schedule for the encoder-decoder estimator.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncDecConfig {
    pub mlp: MlpConfig,
    pub train: TrainConfig,
}

fn check_pair(features: &UserMatrix, targets: &UserMatrix, what: &str) -> Result<()> {
    if features.user_ids != targets.user_ids {
        return Err(Error::IdMismatch {
            context: format!("encoder-decoder {what} features and targets"),
        });
    }
    for ((i, j), &v) in targets.data.indexed_iter() {
        if v != 0.0 && v != 1.0 {
            return Err(Error::validation(
                format!("{what} target cell ({i}, {j})"),
                format!("{v} is not binary"),
            ));
        }
    }
    Ok(())
}

/// Fit the network on feature rows (activity plus profile) against binary
/// activity targets; rows of both matrices must describe the same users.
/// An explicit `validation` pair, when given, drives early stopping instead
/// of an internal holdout.
pub fn encdec_fit(
    features: &UserMatrix,
    targets: &UserMatrix,
    config: &EncDecConfig,
    validation: Option<(&UserMatrix, &UserMatrix)>,
) -> Result<(MlpModel, TrainReport)> {
    check_pair(features, targets, "training")?;
    if let Some((vf, vt)) = validation {
        check_pair(vf, vt, "validation")?;
    }
    let mut model = MlpModel::new(features.n_columns(), targets.n_columns(), &config.mlp)?;
    let val = validation.map(|(vf, vt)| (&vf.data, &vt.data));
    let report = train(&mut model, &features.data, &targets.data, &config.train, val)?;
    Ok((model, report))
}

/// Exposure probabilities for new feature rows; `topic_terms` labels the
/// output columns and must match the network's output width.
pub fn encdec_estimate(
    model: &MlpModel,
    features: &UserMatrix,
    topic_terms: &[String],
) -> Result<UserMatrix> {
    if topic_terms.len() != model.n_outputs {
        return Err(Error::shape(
            "estimate columns",
            format!("{} topic terms", model.n_outputs),
            format!("{} topic terms", topic_terms.len()),
        ));
    }
    let predictions = model.forward_batch(&features.data)?;
    UserMatrix::new(
        features.user_ids.clone(),
        topic_terms.to_vec(),
        predictions,
    )
}
