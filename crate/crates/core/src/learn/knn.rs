//! k-nearest neighbours on standardized features.

use serde::{Deserialize, Serialize};

use super::{Dataset, Standardizer, TrainConfig};
use crate::error::{KgdgError, Result};
use crate::model::{DRGrade, ProbabilityVector, N_GRADES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub feature_schema: Vec<String>,
    pub standardizer: Standardizer,
    pub rows: Vec<Vec<f64>>,
    pub grades: Vec<DRGrade>,
    pub k: usize,
}

impl KnnModel {
    pub fn fit(train: &Dataset, cfg: &TrainConfig) -> Result<KnnModel> {
        cfg.validate()?;
        train.check_trainable()?;
        let standardizer = Standardizer::fit(&train.rows);
        Ok(KnnModel {
            feature_schema: train.schema.clone(),
            rows: train.rows.iter().map(|r| standardizer.apply(r)).collect(),
            grades: train.grades.clone(),
            standardizer,
            k: cfg.k_neighbors,
        })
    }

    /// Neighbour grade frequencies. Equal distances keep training order.
    pub fn predict_row(&self, row: &[f64]) -> ProbabilityVector {
        let q = self.standardizer.apply(row);
        let mut dist: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let k = self.k.min(dist.len());
        let mut counts = [0.0; N_GRADES];
        for &(_, i) in &dist[..k] {
            counts[self.grades[i].index()] += 1.0;
        }
        ProbabilityVector::from_weights(counts)
    }

    pub(crate) fn check_consistency(&self) -> Result<()> {
        let d = self.feature_schema.len();
        if self.rows.len() != self.grades.len() || self.rows.iter().any(|r| r.len() != d) || self.k == 0 {
            return Err(KgdgError::SchemaMismatch("knn parameters disagree with schema arity".into()));
        }
        Ok(())
    }
}

/// One-shot kNN prediction against a training set.
pub fn predict_knn(train: &Dataset, row: &[f64], cfg: &TrainConfig) -> Result<ProbabilityVector> {
    if row.len() != train.n_features() {
        return Err(KgdgError::SchemaMismatch("query arity differs from training schema".into()));
    }
    Ok(KnnModel::fit(train, cfg)?.predict_row(row))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: Vec<Vec<f64>>, grades: &[i64]) -> Dataset {
        Dataset::new(
            (0..rows[0].len()).map(|i| format!("f{i}")).collect(),
            rows,
            grades.iter().map(|&g| DRGrade::new(g).unwrap()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn k1_on_training_point_is_one_hot() {
        let d = ds(vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![5.0, 2.0]], &[0, 3, 1]);
        let cfg = TrainConfig { k_neighbors: 1, ..Default::default() };
        let p = predict_knn(&d, &[1.0, 1.0], &cfg).unwrap();
        assert_eq!(p, ProbabilityVector::one_hot(DRGrade::SEVERE));
    }

    #[test]
    fn k_equals_n_gives_class_prior() {
        let d = ds(vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]], &[0, 0, 0, 4]);
        let cfg = TrainConfig { k_neighbors: 4, ..Default::default() };
        let p = predict_knn(&d, &[10.0], &cfg).unwrap();
        assert_eq!(p.as_array(), &[0.75, 0.0, 0.0, 0.0, 0.25]);
    }

    #[test]
    fn five_neighbour_frequencies() {
        let d = ds(
            vec![vec![0.0], vec![0.1], vec![0.2], vec![0.3], vec![0.4], vec![9.0], vec![9.5]],
            &[2, 2, 2, 1, 1, 4, 4],
        );
        let cfg = TrainConfig { k_neighbors: 5, ..Default::default() };
        let p = predict_knn(&d, &[0.2], &cfg).unwrap();
        assert_eq!(p.as_array(), &[0.0, 0.4, 0.6, 0.0, 0.0]);
    }
}
