//! Stratified k-fold cross-validation of a symbolic learner.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{fit_symbolic, rng_for, Dataset, TrainConfig};
use crate::error::{KgdgError, Result};
use crate::metrics::{accuracy, macro_f1, seeded_summary};
use crate::model::{DRGrade, N_GRADES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub folds: Vec<FoldScore>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
}

/// Fold index per sample: each grade is shuffled and dealt round-robin.
pub(crate) fn stratified_folds(grades: &[DRGrade], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_for(seed, 0x6376);
    let mut assignment = vec![0; grades.len()];
    for g in 0..N_GRADES {
        let mut idx: Vec<usize> = (0..grades.len()).filter(|&i| grades[i].index() == g).collect();
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            assignment[i] = j % folds;
        }
    }
    assignment
}

/// Trains on k−1 folds and scores the held-out fold, for every fold.
/// Boosting runs without early stopping here.
pub fn cross_validate(data: &Dataset, cfg: &TrainConfig, folds: usize) -> Result<CvSummary> {
    if folds < 2 {
        return Err(KgdgError::InvalidConfig("cross-validation needs at least 2 folds".into()));
    }
    for (g, &c) in data.grade_counts().iter().enumerate() {
        if c > 0 && c < folds {
            return Err(KgdgError::TooFewPerClass { grade: g as u8, count: c, folds });
        }
    }
    let assignment = stratified_folds(&data.grades, folds, cfg.seed);
    let empty = data.subset(&[]);
    let mut scores = Vec::with_capacity(folds);
    for k in 0..folds {
        let train_idx: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] != k).collect();
        let test_idx: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] == k).collect();
        let train = data.subset(&train_idx);
        let test = data.subset(&test_idx);
        let model = fit_symbolic(&train, &empty, cfg)?;
        let pred: Vec<DRGrade> = model.predict_dataset(&test)?.iter().map(|p| p.argmax()).collect();
        scores.push(FoldScore { accuracy: accuracy(&test.grades, &pred)?, macro_f1: macro_f1(&test.grades, &pred)? });
    }
    let (accuracy_mean, accuracy_std) = seeded_summary(&scores.iter().map(|s| s.accuracy).collect::<Vec<_>>())?;
    let (macro_f1_mean, macro_f1_std) = seeded_summary(&scores.iter().map(|s| s.macro_f1).collect::<Vec<_>>())?;
    Ok(CvSummary { folds: scores, accuracy_mean, accuracy_std, macro_f1_mean, macro_f1_std })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_few_per_class() {
        let grades: Vec<DRGrade> = [0, 0, 0, 1, 1].iter().map(|&g| DRGrade::new(g).unwrap()).collect();
        let rows = (0..5).map(|i| vec![i as f64]).collect();
        let d = Dataset::new(vec!["x".into()], rows, grades).unwrap();
        let err = cross_validate(&d, &TrainConfig::default(), 3).unwrap_err();
        assert!(matches!(err, KgdgError::TooFewPerClass { grade: 1, count: 2, folds: 3 }));
    }

    #[test]
    fn folds_are_stratified() {
        let grades: Vec<DRGrade> = (0..30).map(|i| DRGrade::new(i % 3).unwrap()).collect();
        let a = stratified_folds(&grades, 5, 7);
        for k in 0..5 {
            for g in 0..3 {
                let c = (0..30).filter(|&i| a[i] == k && grades[i].index() == g).count();
                assert_eq!(c, 2);
            }
        }
    }

    #[test]
    fn summary_over_folds() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 4) as f64 * 10.0 + (i / 4) as f64 * 0.1]).collect();
        let grades: Vec<DRGrade> = (0..40).map(|i| DRGrade::new((i % 4) as i64).unwrap()).collect();
        let d = Dataset::new(vec!["x".into()], rows, grades).unwrap();
        let cfg = TrainConfig { n_trees: 20, min_leaf: 1, ..Default::default() };
        let s = cross_validate(&d, &cfg, 4).unwrap();
        assert_eq!(s.folds.len(), 4);
        assert!(s.accuracy_mean > 0.99);
    }
}
