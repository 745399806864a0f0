//! Random forest: bagged Gini trees with a random feature subset per split.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, GiniCriterion, Presorted, Tree, TreeParams, N_CLASSES};
use super::{rng_for, sample_weights, Dataset, TrainConfig};
use crate::error::{KgdgError, Result};
use crate::model::ProbabilityVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub feature_schema: Vec<String>,
    pub trees: Vec<Tree<[f64; N_CLASSES]>>,
}

impl ForestModel {
    pub fn fit(train: &Dataset, cfg: &TrainConfig) -> Result<ForestModel> {
        cfg.validate()?;
        train.check_trainable()?;
        let n = train.len();
        let d = train.n_features();
        let labels: Vec<usize> = train.grades.iter().map(|g| g.index()).collect();
        let base_w = sample_weights(&train.grades, cfg.class_weighting);
        let data = Presorted::new(&train.rows).ranked_by(&train.schema);
        let max_features = cfg.forest_max_features.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize).min(d);
        let params = TreeParams { max_depth: cfg.max_depth, min_leaf: cfg.min_leaf, max_features: Some(max_features) };
        let trees = (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng_for(cfg.seed, 0x666f_0000 + t as u64);
                let mut w = base_w.clone();
                let mut in_sample = vec![true; n];
                if cfg.forest_bootstrap {
                    let mut counts = vec![0u32; n];
                    for _ in 0..n {
                        counts[rng.gen_range(0..n)] += 1;
                    }
                    for i in 0..n {
                        w[i] *= counts[i] as f64;
                        in_sample[i] = counts[i] > 0;
                    }
                }
                let crit = GiniCriterion { labels: &labels, weights: &w };
                grow(&data, &in_sample, &crit, &params, &mut rng)
            })
            .collect();
        Ok(ForestModel { feature_schema: train.schema.clone(), trees })
    }

    /// A single unrandomized tree over all rows and all features.
    pub fn decision_tree(train: &Dataset, cfg: &TrainConfig) -> Result<Tree<[f64; N_CLASSES]>> {
        cfg.validate()?;
        train.check_trainable()?;
        let labels: Vec<usize> = train.grades.iter().map(|g| g.index()).collect();
        let w = sample_weights(&train.grades, cfg.class_weighting);
        let crit = GiniCriterion { labels: &labels, weights: &w };
        let params = TreeParams { max_depth: cfg.max_depth, min_leaf: cfg.min_leaf, max_features: None };
        Ok(grow(
            &Presorted::new(&train.rows).ranked_by(&train.schema),
            &vec![true; train.len()],
            &crit,
            &params,
            &mut rng_for(cfg.seed, 0),
        ))
    }

    pub fn predict_row(&self, row: &[f64]) -> ProbabilityVector {
        let mut acc = [0.0; N_CLASSES];
        for t in &self.trees {
            for (a, v) in acc.iter_mut().zip(t.leaf_for(row)) {
                *a += v;
            }
        }
        ProbabilityVector::from_weights(acc)
    }

    pub(crate) fn check_consistency(&self) -> Result<()> {
        let d = self.feature_schema.len();
        if self.trees.is_empty() {
            return Err(KgdgError::CorruptArtifact("forest without trees".into()));
        }
        if self.trees.iter().any(|t| t.max_feature().is_some_and(|f| f >= d)) {
            return Err(KgdgError::SchemaMismatch("tree references a feature beyond the schema".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DRGrade;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_ds(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..60).map(|_| (0..4).map(|_| rng.gen_range(0.0..10.0)).collect()).collect();
        let grades = rows.iter().map(|r| DRGrade::new(((r[0] + r[1]) / 4.0).min(4.0) as i64).unwrap()).collect();
        Dataset::new((0..4).map(|i| format!("f{i}")).collect(), rows, grades).unwrap()
    }

    #[test]
    fn degenerate_forest_equals_single_tree() {
        let d = random_ds(1);
        let cfg = TrainConfig {
            n_trees: 1,
            forest_bootstrap: false,
            forest_max_features: Some(4),
            max_depth: 4,
            min_leaf: 2,
            ..Default::default()
        };
        let forest = ForestModel::fit(&d, &cfg).unwrap();
        let tree = ForestModel::decision_tree(&d, &cfg).unwrap();
        assert_eq!(forest.trees[0], tree);
        for r in &d.rows {
            assert_eq!(forest.predict_row(r).as_array(), tree.leaf_for(r));
        }
    }

    #[test]
    fn outputs_are_valid_distributions() {
        let d = random_ds(2);
        let cfg = TrainConfig { n_trees: 15, max_depth: 4, min_leaf: 1, ..Default::default() };
        let m = ForestModel::fit(&d, &cfg).unwrap();
        for r in &d.rows {
            let p = m.predict_row(r);
            assert!(ProbabilityVector::new(p.as_array()).is_ok());
        }
        assert!(ProbabilityVector::new(m.predict_row(&[100.0, -5.0, 3.0, 1e9]).as_array()).is_ok());
    }
}
