//! Knowledge-driven branch: learners that map the structured feature vector
//! to a grade distribution.
//!
//! Learners operate on a plain numeric [`Dataset`]; the helpers at the
//! bottom of this module build datasets from labeled examples for one of the
//! two fixed feature schemas.

mod cv;
mod forest;
mod gbm;
mod knn;
mod logistic;
pub(crate) mod tree;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cv::{cross_validate, CvSummary, FoldScore};
pub use forest::ForestModel;
pub use gbm::{GbmModel, TrainHistory};
pub use knn::{predict_knn, KnnModel};
pub use logistic::{logistic_loss_and_gradient, LogisticModel};

use crate::error::{KgdgError, Result};
use crate::model::{DRGrade, FeatureSet, FeatureVector, LabeledExample, ProbabilityVector, N_GRADES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Gbm,
    Logistic,
    Forest,
    Knn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Gbm => "gbm",
            ModelKind::Logistic => "logistic",
            ModelKind::Forest => "forest",
            ModelKind::Knn => "knn",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Gbm => "Gradient Boosting",
            ModelKind::Logistic => "Logistic Regression",
            ModelKind::Forest => "Random Forest",
            ModelKind::Knn => "K-Nearest Neighbors",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = KgdgError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gbm" => Ok(ModelKind::Gbm),
            "logistic" => Ok(ModelKind::Logistic),
            "forest" => Ok(ModelKind::Forest),
            "knn" => Ok(ModelKind::Knn),
            other => Err(KgdgError::InvalidConfig(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Hyperparameters for every symbolic learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model_kind: ModelKind,
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub subsample: f64,
    pub l2_leaf: f64,
    pub logistic_steps: usize,
    pub logistic_lr: f64,
    pub k_neighbors: usize,
    pub class_weighting: bool,
    pub seed: u64,
    pub early_stop_patience: usize,
    /// Forest only: draw a bootstrap sample per tree.
    pub forest_bootstrap: bool,
    /// Forest only: features tried per split; default ⌈√d⌉.
    pub forest_max_features: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model_kind: ModelKind::Gbm,
            n_trees: 200,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 5,
            subsample: 1.0,
            l2_leaf: 1.0,
            logistic_steps: 2000,
            logistic_lr: 0.1,
            k_neighbors: 5,
            class_weighting: true,
            seed: 0,
            early_stop_patience: 10,
            forest_bootstrap: true,
            forest_max_features: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(KgdgError::InvalidConfig(m.to_string()));
        if self.n_trees == 0 || self.max_depth == 0 || self.min_leaf == 0 {
            return bad("n_trees, max_depth and min_leaf must be positive");
        }
        if self.k_neighbors == 0 || self.logistic_steps == 0 || self.early_stop_patience == 0 {
            return bad("k_neighbors, logistic_steps and early_stop_patience must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        if self.l2_leaf.is_nan() || self.l2_leaf < 0.0 {
            return bad("l2_leaf must be nonnegative");
        }
        if self.logistic_lr.is_nan() || self.logistic_lr <= 0.0 {
            return bad("logistic_lr must be positive");
        }
        if self.forest_max_features == Some(0) {
            return bad("forest_max_features must be positive");
        }
        Ok(())
    }
}

/// Row-major feature matrix with grades and column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub grades: Vec<DRGrade>,
    pub ids: Vec<String>,
}

impl Dataset {
    pub fn new(schema: Vec<String>, rows: Vec<Vec<f64>>, grades: Vec<DRGrade>) -> Result<Self> {
        let ids = (0..rows.len()).map(|i| format!("row{i}")).collect();
        Dataset::with_ids(schema, rows, grades, ids)
    }

    pub fn with_ids(schema: Vec<String>, rows: Vec<Vec<f64>>, grades: Vec<DRGrade>, ids: Vec<String>) -> Result<Self> {
        if rows.len() != grades.len() || rows.len() != ids.len() {
            return Err(KgdgError::WrongArity { expected: rows.len(), got: grades.len() });
        }
        if let Some(r) = rows.iter().find(|r| r.len() != schema.len()) {
            return Err(KgdgError::SchemaMismatch(format!("row has {} values, schema has {}", r.len(), schema.len())));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(KgdgError::Malformed("non-finite feature value".into()));
        }
        Ok(Dataset { schema, rows, grades, ids })
    }

    pub fn from_examples(examples: &[LabeledExample], set: FeatureSet) -> Result<Self> {
        let rows = examples.iter().map(|e| e.features.to_row(set)).collect::<Result<Vec<_>>>()?;
        Dataset::with_ids(
            set.columns(),
            rows,
            examples.iter().map(|e| e.grade).collect(),
            examples.iter().map(|e| e.image_id.clone()).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            grades: idx.iter().map(|&i| self.grades[i]).collect(),
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
        }
    }

    /// Concatenates datasets sharing a schema.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or(KgdgError::EmptyEvaluation)?;
        let mut out = Dataset { schema: first.schema.clone(), rows: vec![], grades: vec![], ids: vec![] };
        for p in parts {
            if p.schema != out.schema {
                return Err(KgdgError::SchemaMismatch("concatenating mismatched schemas".into()));
            }
            out.rows.extend(p.rows.iter().cloned());
            out.grades.extend(&p.grades);
            out.ids.extend(p.ids.iter().cloned());
        }
        Ok(out)
    }

    /// Reorders columns: new column `j` is old column `perm[j]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Dataset {
        Dataset {
            schema: perm.iter().map(|&j| self.schema[j].clone()).collect(),
            rows: self.rows.iter().map(|r| perm.iter().map(|&j| r[j]).collect()).collect(),
            grades: self.grades.clone(),
            ids: self.ids.clone(),
        }
    }

    pub fn grade_counts(&self) -> [usize; N_GRADES] {
        let mut c = [0; N_GRADES];
        for g in &self.grades {
            c[g.index()] += 1;
        }
        c
    }

    fn check_trainable(&self) -> Result<()> {
        let counts = self.grade_counts();
        match counts.iter().filter(|&&c| c > 0).count() {
            0 => Err(KgdgError::EmptyEvaluation),
            1 => Err(KgdgError::SingleClassTrain(self.grades[0].value())),
            _ => Ok(()),
        }
    }
}

/// Per-sample weights N / (5·N_c), or all ones when weighting is off.
pub(crate) fn sample_weights(grades: &[DRGrade], class_weighting: bool) -> Vec<f64> {
    if !class_weighting {
        return vec![1.0; grades.len()];
    }
    let mut counts = [0usize; N_GRADES];
    for g in grades {
        counts[g.index()] += 1;
    }
    let n = grades.len() as f64;
    grades.iter().map(|g| n / (N_GRADES as f64 * counts[g.index()] as f64)).collect()
}

/// Z-scoring fitted on training rows. Constant columns keep unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Standardizer {
        let d = rows.first().map_or(0, |r| r.len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.scale).map(|((x, m), s)| (x - m) / s).collect()
    }
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Any fitted symbolic learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_kind", rename_all = "snake_case")]
pub enum SymbolicModel {
    Gbm(GbmModel),
    Logistic(LogisticModel),
    Forest(ForestModel),
    Knn(KnnModel),
}

impl SymbolicModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            SymbolicModel::Gbm(_) => ModelKind::Gbm,
            SymbolicModel::Logistic(_) => ModelKind::Logistic,
            SymbolicModel::Forest(_) => ModelKind::Forest,
            SymbolicModel::Knn(_) => ModelKind::Knn,
        }
    }

    pub fn schema(&self) -> &[String] {
        match self {
            SymbolicModel::Gbm(m) => &m.feature_schema,
            SymbolicModel::Logistic(m) => &m.feature_schema,
            SymbolicModel::Forest(m) => &m.feature_schema,
            SymbolicModel::Knn(m) => &m.feature_schema,
        }
    }

    /// Checks that every internal parameter agrees with the schema arity.
    pub fn check_consistency(&self) -> Result<()> {
        match self {
            SymbolicModel::Gbm(m) => m.check_consistency(),
            SymbolicModel::Logistic(m) => m.check_consistency(),
            SymbolicModel::Forest(m) => m.check_consistency(),
            SymbolicModel::Knn(m) => m.check_consistency(),
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<ProbabilityVector> {
        if row.len() != self.schema().len() {
            return Err(KgdgError::SchemaMismatch(format!(
                "input has {} features, model expects {}",
                row.len(),
                self.schema().len()
            )));
        }
        Ok(match self {
            SymbolicModel::Gbm(m) => m.predict_row(row),
            SymbolicModel::Logistic(m) => m.predict_row(row),
            SymbolicModel::Forest(m) => m.predict_row(row),
            SymbolicModel::Knn(m) => m.predict_row(row),
        })
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<ProbabilityVector>> {
        if data.schema != self.schema() {
            return Err(KgdgError::SchemaMismatch("dataset schema differs from model schema".into()));
        }
        data.rows.iter().map(|r| self.predict_row(r)).collect()
    }

    /// The fixed feature schema this model was trained on, if it is one.
    pub fn feature_set(&self) -> Option<FeatureSet> {
        [FeatureSet::LesionsOnly, FeatureSet::LesionsVein].into_iter().find(|s| s.columns() == self.schema())
    }
}

/// Trains the learner selected by `cfg.model_kind`. `valid` drives early
/// stopping for boosting and is ignored by the other learners.
pub fn fit_symbolic(train: &Dataset, valid: &Dataset, cfg: &TrainConfig) -> Result<SymbolicModel> {
    Ok(match cfg.model_kind {
        ModelKind::Gbm => SymbolicModel::Gbm(GbmModel::fit(train, valid, cfg)?),
        ModelKind::Logistic => SymbolicModel::Logistic(LogisticModel::fit(train, cfg)?),
        ModelKind::Forest => SymbolicModel::Forest(ForestModel::fit(train, cfg)?),
        ModelKind::Knn => SymbolicModel::Knn(KnnModel::fit(train, cfg)?),
    })
}

/// Boosting on labeled examples under one of the fixed feature schemas.
pub fn fit_gbm(
    train: &[LabeledExample],
    valid: &[LabeledExample],
    set: FeatureSet,
    cfg: &TrainConfig,
) -> Result<GbmModel> {
    GbmModel::fit(&Dataset::from_examples(train, set)?, &Dataset::from_examples(valid, set)?, cfg)
}

pub fn fit_logistic(train: &[LabeledExample], set: FeatureSet, cfg: &TrainConfig) -> Result<LogisticModel> {
    LogisticModel::fit(&Dataset::from_examples(train, set)?, cfg)
}

pub fn fit_forest(train: &[LabeledExample], set: FeatureSet, cfg: &TrainConfig) -> Result<ForestModel> {
    ForestModel::fit(&Dataset::from_examples(train, set)?, cfg)
}

/// Grade distribution for one feature vector.
pub fn predict_proba(model: &SymbolicModel, f: &FeatureVector) -> Result<ProbabilityVector> {
    let set = model
        .feature_set()
        .ok_or_else(|| KgdgError::SchemaMismatch("model schema is not a known feature set".into()))?;
    model.predict_row(&f.to_row(set)?)
}
