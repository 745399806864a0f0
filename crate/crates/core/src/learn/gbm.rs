//! Multiclass gradient boosting on the multinomial log-loss.
//!
//! Each round fits one regression tree per grade to the per-sample gradient
//! and hessian of the softmax cross-entropy; leaf values are Newton steps
//! `-G / (H + λ)` shrunk by the learning rate.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, NewtonCriterion, Node, Presorted, Tree, TreeParams};
use super::{rng_for, sample_weights, Dataset, TrainConfig};
use crate::error::{KgdgError, Result};
use crate::model::{ProbabilityVector, N_GRADES};

/// Prior probabilities are floored here before taking logs so that grades
/// absent from training keep a finite base score.
const PRIOR_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub feature_schema: Vec<String>,
    pub base_scores: [f64; N_GRADES],
    /// `trees[round][grade]`, leaf values already include the learning rate.
    pub trees: Vec<Vec<Tree<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    /// Weighted training log-loss after 0, 1, 2, … rounds.
    pub train_loss: Vec<f64>,
    /// Validation accuracy after 0, 1, 2, … rounds (empty without validation data).
    pub valid_accuracy: Vec<f64>,
    /// Rounds trained, all of which are kept in the returned model.
    pub rounds_run: usize,
    /// Round with the highest validation accuracy (earliest on ties).
    pub best_round: usize,
}

fn softmax_row(scores: &[f64; N_GRADES]) -> [f64; N_GRADES] {
    *ProbabilityVector::softmax(scores).as_array()
}

fn weighted_log_loss(scores: &[[f64; N_GRADES]], grades: &[usize], w: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((s, &y), &wi) in scores.iter().zip(grades).zip(w) {
        let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        num += wi * (lse - s[y]);
        den += wi;
    }
    num / den
}

fn argmax(s: &[f64; N_GRADES]) -> usize {
    let mut best = 0;
    for k in 1..N_GRADES {
        if s[k] > s[best] {
            best = k;
        }
    }
    best
}

fn accuracy_of(scores: &[[f64; N_GRADES]], grades: &[usize]) -> f64 {
    let hits = scores.iter().zip(grades).filter(|(s, &y)| argmax(s) == y).count();
    hits as f64 / grades.len() as f64
}

fn scale_leaves(tree: Tree<f64>, lr: f64) -> Tree<f64> {
    Tree {
        nodes: tree
            .nodes
            .into_iter()
            .map(|n| match n {
                Node::Leaf { value } => Node::Leaf { value: value * lr },
                split => split,
            })
            .collect(),
    }
}

impl GbmModel {
    pub fn fit(train: &Dataset, valid: &Dataset, cfg: &TrainConfig) -> Result<GbmModel> {
        Self::fit_with_history(train, valid, cfg).map(|(m, _)| m)
    }

    /// Trains and also returns per-round diagnostics. An empty `valid`
    /// disables early stopping.
    pub fn fit_with_history(train: &Dataset, valid: &Dataset, cfg: &TrainConfig) -> Result<(GbmModel, TrainHistory)> {
        cfg.validate()?;
        train.check_trainable()?;
        if !valid.is_empty() && valid.schema != train.schema {
            return Err(KgdgError::SchemaMismatch("validation schema differs from training schema".into()));
        }
        let n = train.len();
        let labels: Vec<usize> = train.grades.iter().map(|g| g.index()).collect();
        let valid_labels: Vec<usize> = valid.grades.iter().map(|g| g.index()).collect();
        let w = sample_weights(&train.grades, cfg.class_weighting);

        let mut freq = [0.0; N_GRADES];
        for (&y, &wi) in labels.iter().zip(&w) {
            freq[y] += wi;
        }
        let total: f64 = freq.iter().sum();
        let base_scores = freq.map(|f| (f / total).max(PRIOR_FLOOR).ln());

        let data = Presorted::new(&train.rows).ranked_by(&train.schema);
        let params = TreeParams { max_depth: cfg.max_depth, min_leaf: cfg.min_leaf, max_features: None };
        let mut rng = rng_for(cfg.seed, 0x6762_6d00);

        let mut scores = vec![base_scores; n];
        let mut valid_scores = vec![base_scores; valid.len()];
        let mut history = TrainHistory::default();
        history.train_loss.push(weighted_log_loss(&scores, &labels, &w));
        let early_stop = !valid.is_empty();
        let mut best_acc = f64::NEG_INFINITY;
        if early_stop {
            best_acc = accuracy_of(&valid_scores, &valid_labels);
            history.valid_accuracy.push(best_acc);
        }

        let mut rounds: Vec<Vec<Tree<f64>>> = Vec::new();
        for round in 0..cfg.n_trees {
            let probs: Vec<[f64; N_GRADES]> = scores.iter().map(softmax_row).collect();
            let in_sample = if cfg.subsample < 1.0 {
                let m = ((cfg.subsample * n as f64).ceil() as usize).clamp(1, n);
                let mut mask = vec![false; n];
                for i in sample(&mut rng, n, m) {
                    mask[i] = true;
                }
                mask
            } else {
                vec![true; n]
            };
            let round_trees: Vec<Tree<f64>> = (0..N_GRADES)
                .into_par_iter()
                .map(|k| {
                    let grad: Vec<f64> = (0..n).map(|i| w[i] * (probs[i][k] - (labels[i] == k) as u8 as f64)).collect();
                    let hess: Vec<f64> = (0..n).map(|i| w[i] * probs[i][k] * (1.0 - probs[i][k])).collect();
                    let crit = NewtonCriterion { grad: &grad, hess: &hess, l2: cfg.l2_leaf };
                    // no per-node feature sampling, so this stream is never drawn from
                    let mut tree_rng = rng_for(cfg.seed, k as u64);
                    scale_leaves(grow(&data, &in_sample, &crit, &params, &mut tree_rng), cfg.learning_rate)
                })
                .collect();

            for (s, row) in scores.iter_mut().zip(&train.rows) {
                for (k, t) in round_trees.iter().enumerate() {
                    s[k] += t.leaf_for(row);
                }
            }
            for (s, row) in valid_scores.iter_mut().zip(&valid.rows) {
                for (k, t) in round_trees.iter().enumerate() {
                    s[k] += t.leaf_for(row);
                }
            }
            rounds.push(round_trees);
            history.rounds_run = round + 1;
            history.train_loss.push(weighted_log_loss(&scores, &labels, &w));

            if early_stop {
                let acc = accuracy_of(&valid_scores, &valid_labels);
                history.valid_accuracy.push(acc);
                if acc > best_acc {
                    best_acc = acc;
                    history.best_round = round + 1;
                } else if round + 1 - history.best_round >= cfg.early_stop_patience {
                    break;
                }
            }
        }
        if !early_stop {
            history.best_round = rounds.len();
        }

        Ok((GbmModel { feature_schema: train.schema.clone(), base_scores, trees: rounds }, history))
    }

    pub fn n_rounds(&self) -> usize {
        self.trees.len()
    }

    pub fn raw_scores(&self, row: &[f64]) -> [f64; N_GRADES] {
        let mut s = self.base_scores;
        for round in &self.trees {
            for (k, t) in round.iter().enumerate() {
                s[k] += t.leaf_for(row);
            }
        }
        s
    }

    pub fn predict_row(&self, row: &[f64]) -> ProbabilityVector {
        ProbabilityVector::softmax(&self.raw_scores(row))
    }

    pub(crate) fn check_consistency(&self) -> Result<()> {
        let d = self.feature_schema.len();
        for round in &self.trees {
            if round.len() != N_GRADES {
                return Err(KgdgError::SchemaMismatch("boosting round without one tree per grade".into()));
            }
            if round.iter().any(|t| t.max_feature().is_some_and(|f| f >= d)) {
                return Err(KgdgError::SchemaMismatch("tree references a feature beyond the schema".into()));
            }
        }
        Ok(())
    }
}
