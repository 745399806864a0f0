//! Multinomial logistic regression trained by full-batch gradient descent
//! on standardized inputs.

use serde::{Deserialize, Serialize};

use super::{sample_weights, Dataset, Standardizer, TrainConfig};
use crate::error::{KgdgError, Result};
use crate::model::{DRGrade, ProbabilityVector, N_GRADES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub feature_schema: Vec<String>,
    pub standardizer: Standardizer,
    /// `weights[k]` holds the coefficients of grade `k`.
    pub weights: Vec<Vec<f64>>,
    pub bias: [f64; N_GRADES],
}

/// Weighted mean cross-entropy and its gradient.
///
/// `params` is laid out as `[W_0 (d values), …, W_4, b_0, …, b_4]`; rows are
/// used as given (standardize beforehand if needed).
pub fn logistic_loss_and_gradient(
    params: &[f64],
    rows: &[Vec<f64>],
    grades: &[DRGrade],
    weights: &[f64],
) -> (f64, Vec<f64>) {
    let d = rows.first().map_or(0, |r| r.len());
    debug_assert_eq!(params.len(), N_GRADES * (d + 1));
    let (w, b) = params.split_at(N_GRADES * d);
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    let wsum: f64 = weights.iter().sum();
    for ((x, y), &wi) in rows.iter().zip(grades).zip(weights) {
        let mut z = [0.0; N_GRADES];
        for k in 0..N_GRADES {
            z[k] = b[k] + w[k * d..(k + 1) * d].iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
        }
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += wi * (lse - z[y.index()]);
        for k in 0..N_GRADES {
            let resid = wi * ((z[k] - lse).exp() - (y.index() == k) as u8 as f64) / wsum;
            for (g, v) in grad[k * d..(k + 1) * d].iter_mut().zip(x) {
                *g += resid * v;
            }
            grad[N_GRADES * d + k] += resid;
        }
    }
    (loss / wsum, grad)
}

impl LogisticModel {
    /// Rejects single-grade training data, like the other learners.
    pub fn fit(train: &Dataset, cfg: &TrainConfig) -> Result<LogisticModel> {
        train.check_trainable()?;
        Self::fit_unchecked(train, cfg)
    }

    /// Same as [`LogisticModel::fit`] but accepts degenerate label sets; with a
    /// single grade the fit simply drives that grade's probability up.
    pub fn fit_unchecked(train: &Dataset, cfg: &TrainConfig) -> Result<LogisticModel> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(KgdgError::EmptyEvaluation);
        }
        let d = train.n_features();
        let standardizer = Standardizer::fit(&train.rows);
        let rows: Vec<Vec<f64>> = train.rows.iter().map(|r| standardizer.apply(r)).collect();
        let sw = sample_weights(&train.grades, cfg.class_weighting);
        let mut params = vec![0.0; N_GRADES * (d + 1)];
        for _ in 0..cfg.logistic_steps {
            let (_, grad) = logistic_loss_and_gradient(&params, &rows, &train.grades, &sw);
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= cfg.logistic_lr * g;
            }
        }
        let weights = (0..N_GRADES).map(|k| params[k * d..(k + 1) * d].to_vec()).collect();
        let mut bias = [0.0; N_GRADES];
        bias.copy_from_slice(&params[N_GRADES * d..]);
        Ok(LogisticModel { feature_schema: train.schema.clone(), standardizer, weights, bias })
    }

    pub fn predict_row(&self, row: &[f64]) -> ProbabilityVector {
        let x = self.standardizer.apply(row);
        let mut z = self.bias;
        for (zk, wk) in z.iter_mut().zip(&self.weights) {
            *zk += wk.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>();
        }
        ProbabilityVector::softmax(&z)
    }

    pub(crate) fn check_consistency(&self) -> Result<()> {
        let d = self.feature_schema.len();
        let ok = self.weights.len() == N_GRADES
            && self.weights.iter().all(|w| w.len() == d)
            && self.standardizer.mean.len() == d
            && self.standardizer.scale.len() == d;
        if ok {
            Ok(())
        } else {
            Err(KgdgError::SchemaMismatch("logistic parameters disagree with schema arity".into()))
        }
    }
}
