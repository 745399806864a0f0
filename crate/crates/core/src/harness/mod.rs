//! Leave-domain-out experiments. SDG trains on one source domain and
//! evaluates on every other domain; MDG holds out each domain in turn and
//! trains on the rest pooled.

mod align;
mod reference;
mod report;

use std::collections::HashSet;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KgdgError, Result};
use crate::fusion::{fuse, FusedPrediction, FusionSource, FusionStrategy};
use crate::io::{format_feature_table, format_probability_table, load_domain, sha256_hex, Manifest};
use crate::learn::{fit_symbolic, rng_for, Dataset, TrainConfig};
use crate::metrics::{accuracy, DomainStats, MetricReport};
use crate::model::{DRGrade, DomainDataset, DomainId, FeatureSet, FusionWeights, ProbabilityVector, N_GRADES};
use crate::rules::{grade_by_rules, rule_grade_as_probability, RuleConfig};
use crate::synth::stream_for;

pub use align::{align_domains, align_to_stats, pairwise_kl};
pub use reference::{
    accuracy_table, compare_tables, compare_to_reference, reference_ids, reference_table, DiffEntry, DiffSummary,
    ReferenceTable, NOT_COMPARABLE,
};
pub use report::{
    emit_report, parse_report, render_csv, render_markdown, render_report, Cell, ExperimentReport, MethodRow,
    ReportBlock, ReportFormat, Summary, WeightChoice,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Sdg,
    Mdg,
}

impl std::str::FromStr for Mode {
    type Err = KgdgError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sdg" => Ok(Mode::Sdg),
            "mdg" => Ok(Mode::Mdg),
            other => Err(KgdgError::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.6, validation: 0.2, test: 0.2 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(KgdgError::InvalidConfig("split fractions must be ≥ 0 and sum to 1".into()));
        }
        if self.train <= 0.0 {
            return Err(KgdgError::InvalidConfig("train fraction must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainSelection {
    /// Manifest path, used by the CLI when `--manifest` is not given.
    pub manifest: Option<PathBuf>,
    /// SDG source domains, one results table each; empty means every domain.
    pub sources: Vec<DomainId>,
    /// SDG evaluation targets; empty means every domain except the source.
    pub targets: Vec<DomainId>,
    pub feature_set: FeatureSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    pub alpha_dl: f64,
    pub alpha_kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub strategies: Vec<FusionStrategy>,
    /// Fixed weights for weighted fusion; grid-searched when absent.
    pub weights: Option<WeightSpec>,
    /// Candidate α_KL values; α_DL = 1 − α_KL.
    pub grid: Vec<f64>,
    pub neural_row: bool,
    pub rules_row: bool,
}

impl Default for FusionSection {
    fn default() -> Self {
        FusionSection {
            strategies: vec![FusionStrategy::Max, FusionStrategy::Weighted],
            weights: None,
            grid: default_grid(),
            neural_row: true,
            rules_row: false,
        }
    }
}

pub fn default_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default)]
    pub domains: DomainSelection,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default)]
    pub symbolic: TrainConfig,
    #[serde(default)]
    pub fusion: FusionSection,
    #[serde(default)]
    pub rules: RuleConfig,
    #[serde(default)]
    pub alignment: bool,
}

impl ExperimentConfig {
    pub fn new(mode: Mode) -> Self {
        ExperimentConfig {
            mode,
            domains: DomainSelection::default(),
            seeds: default_seeds(),
            split: SplitFractions::default(),
            symbolic: TrainConfig::default(),
            fusion: FusionSection::default(),
            rules: RuleConfig::default(),
            alignment: false,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| KgdgError::InvalidConfig(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(KgdgError::InvalidConfig("seeds must be nonempty".into()));
        }
        self.split.validate()?;
        self.symbolic.validate()?;
        self.rules.validate()?;
        if let Some(w) = self.fusion.weights {
            FusionWeights::new(w.alpha_dl, w.alpha_kl)?;
        }
        if self.fusion.grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(KgdgError::InvalidConfig("fusion grid values must lie in [0,1]".into()));
        }
        if self.fusion.strategies.contains(&FusionStrategy::Weighted)
            && self.fusion.weights.is_none()
            && self.fusion.grid.is_empty()
        {
            return Err(KgdgError::InvalidConfig("weighted fusion needs weights or a grid".into()));
        }
        if self.mode == Mode::Mdg && !(self.domains.sources.is_empty() && self.domains.targets.is_empty()) {
            return Err(KgdgError::InvalidConfig(
                "mdg holds out every domain in turn; sources/targets must be empty".into(),
            ));
        }
        if let Some(s) = self.domains.sources.iter().find(|s| self.domains.targets.contains(s)) {
            return Err(KgdgError::InvalidConfig(format!("domain `{s}` is both source and target")));
        }
        Ok(())
    }

    /// Hash of the configuration (without the manifest path) and the
    /// serialized data, so identical inputs give identical fingerprints
    /// wherever the files live.
    pub fn fingerprint(&self, domains: &[DomainDataset]) -> Result<String> {
        let mut cfg = self.clone();
        cfg.domains.manifest = None;
        let mut bytes = serde_json::to_vec(&cfg).map_err(|e| KgdgError::Malformed(e.to_string()))?;
        for d in domains {
            bytes.extend(d.domain.as_str().as_bytes());
            bytes.extend(format_feature_table(&d.examples)?.as_bytes());
            let probs: Vec<(&str, &ProbabilityVector)> =
                d.examples.iter().filter_map(|e| e.neural_probs.as_ref().map(|p| (e.image_id.as_str(), p))).collect();
            bytes.extend(format_probability_table(probs).as_bytes());
        }
        Ok(sha256_hex(&bytes))
    }
}

/// Per-grade apportionment of `n` items by largest remainder. Ties favour
/// the earlier partition, so a single item lands in train.
fn apportion(n: usize, fractions: &SplitFractions) -> [usize; 3] {
    let quotas = [fractions.train, fractions.validation, fractions.test].map(|f| f * n as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    for &k in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[k] += 1;
        rest -= 1;
    }
    counts
}

/// Stratified index split; indices within each part keep input order.
pub(crate) fn split_indices(grades: &[DRGrade], fractions: &SplitFractions, seed: u64, stream: u64) -> [Vec<usize>; 3] {
    let mut rng = rng_for(seed, stream);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for g in 0..N_GRADES {
        let mut idx: Vec<usize> = (0..grades.len()).filter(|&i| grades[i].index() == g).collect();
        idx.shuffle(&mut rng);
        let [a, b, _] = apportion(idx.len(), fractions);
        parts[0].extend(&idx[..a]);
        parts[1].extend(&idx[a..a + b]);
        parts[2].extend(&idx[a + b..]);
    }
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    parts
}

/// Stratified train/validation/test split of one domain.
pub fn split_dataset(
    d: &DomainDataset,
    fractions: &SplitFractions,
    seed: u64,
) -> Result<(DomainDataset, DomainDataset, DomainDataset)> {
    fractions.validate()?;
    let grades: Vec<DRGrade> = d.examples.iter().map(|e| e.grade).collect();
    let [a, b, c] = split_indices(&grades, fractions, seed, stream_for(d.domain.as_str(), 0x73706c));
    let pick = |idx: &[usize]| DomainDataset {
        domain: d.domain.clone(),
        examples: idx.iter().map(|&i| d.examples[i].clone()).collect(),
    };
    Ok((pick(&a), pick(&b), pick(&c)))
}

/// Grid search of α_KL by validation accuracy of weighted fusion. Ties go
/// to the smallest α_KL.
pub fn select_weights(
    p_dl: &[ProbabilityVector],
    p_kd: &[ProbabilityVector],
    truth: &[DRGrade],
    grid: &[f64],
) -> Result<FusionWeights> {
    if p_dl.len() != truth.len() || p_kd.len() != truth.len() {
        return Err(KgdgError::WrongArity { expected: truth.len(), got: p_dl.len().min(p_kd.len()) });
    }
    if truth.is_empty() {
        return Err(KgdgError::EmptyEvaluation);
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut best: Option<(f64, FusionWeights)> = None;
    for a in grid {
        let w = FusionWeights::new(1.0 - a, a)?;
        let pred: Vec<DRGrade> = p_dl
            .iter()
            .zip(p_kd)
            .map(|(d, k)| fuse(FusionStrategy::Weighted, d, k, Some(&w)).map(|f| f.grade))
            .collect::<Result<_>>()?;
        let acc = accuracy(truth, &pred)?;
        if best.as_ref().is_none_or(|(b, _)| acc > *b) {
            best = Some((acc, w));
        }
    }
    best.map(|(_, w)| w).ok_or_else(|| KgdgError::InvalidConfig("empty weight grid".into()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Method {
    Neural,
    Symbolic,
    Rules,
    Fusion(FusionStrategy),
}

impl Method {
    fn label(self) -> &'static str {
        match self {
            Method::Neural => "VIT (DL)",
            Method::Symbolic => "Knowledge (KL)",
            Method::Rules => "Rules (KL)",
            Method::Fusion(FusionStrategy::Max) => "Non Weighted (DL + KL)",
            Method::Fusion(FusionStrategy::Weighted) => "Weighted (DL + KL)",
            Method::Fusion(FusionStrategy::Selective) => "Selective (DL + KL)",
            Method::Fusion(FusionStrategy::Classwise) => "Class-wise (DL + KL)",
        }
    }

    fn needs_neural(self) -> bool {
        matches!(self, Method::Neural | Method::Fusion(_))
    }
}

fn methods(cfg: &ExperimentConfig) -> Vec<Method> {
    let mut m = vec![];
    if cfg.fusion.neural_row {
        m.push(Method::Neural);
    }
    m.push(Method::Symbolic);
    if cfg.fusion.rules_row {
        m.push(Method::Rules);
    }
    let mut seen = HashSet::new();
    for s in &cfg.fusion.strategies {
        if seen.insert(*s) {
            m.push(Method::Fusion(*s));
        }
    }
    m
}

/// The distribution a fused decision reports, used for AUC.
fn fused_distribution(
    strategy: FusionStrategy,
    dl: &ProbabilityVector,
    kd: &ProbabilityVector,
    w: Option<&FusionWeights>,
    fused: &FusedPrediction,
) -> ProbabilityVector {
    match (strategy, fused.source) {
        (FusionStrategy::Classwise, _) => {
            let mut m = [0.0; N_GRADES];
            for (k, v) in m.iter_mut().enumerate() {
                *v = dl.as_array()[k].max(kd.as_array()[k]);
            }
            ProbabilityVector::from_weights(m)
        }
        (FusionStrategy::Weighted, _) => {
            let w = w.expect("weighted fusion has weights");
            let mut m = [0.0; N_GRADES];
            for (k, v) in m.iter_mut().enumerate() {
                *v = w.alpha_dl() * dl.as_array()[k] + w.alpha_kl() * kd.as_array()[k];
            }
            ProbabilityVector::from_weights(m)
        }
        (_, FusionSource::Symbolic) => *kd,
        _ => *dl,
    }
}

/// A domain prepared for one feature set.
struct Prepared {
    domain: DomainDataset,
    rows: Dataset,
    neural: Option<Vec<ProbabilityVector>>,
}

fn prepare(domains: &[DomainDataset], set: FeatureSet) -> Result<Vec<Prepared>> {
    domains
        .iter()
        .map(|d| {
            if d.examples.is_empty() {
                return Err(KgdgError::EmptyEvaluation);
            }
            let neural = d.examples.iter().map(|e| e.neural_probs).collect::<Option<Vec<_>>>();
            Ok(Prepared { domain: d.clone(), rows: Dataset::from_examples(&d.examples, set)?, neural })
        })
        .collect()
}

/// One trained-and-evaluated (sources, targets, seed) combination.
struct Job {
    block: usize,
    sources: Vec<usize>,
    targets: Vec<usize>,
    seed: u64,
}

struct JobOutcome {
    /// `[method][target]`
    metrics: Vec<Vec<MetricReport>>,
    weights: Option<FusionWeights>,
}

/// Feature rows per domain for one source set: raw, or aligned onto the
/// pooled source statistics.
fn block_rows(cfg: &ExperimentConfig, data: &[Prepared], sources: &[usize]) -> Result<(Vec<Dataset>, Option<f64>)> {
    let raw: Vec<Dataset> = data.iter().map(|p| p.rows.clone()).collect();
    if !cfg.alignment {
        return Ok((raw, None));
    }
    let pooled = Dataset::concat(&sources.iter().map(|&i| &raw[i]).collect::<Vec<_>>())?;
    let reference = DomainStats::from_rows(&pooled.rows)?;
    let aligned = align_to_stats(&raw, &reference)?;
    let after = pairwise_kl(&aligned.iter().map(|d| DomainStats::from_rows(&d.rows)).collect::<Result<Vec<_>>>()?)?;
    Ok((aligned, Some(after)))
}

fn run_job(
    cfg: &ExperimentConfig,
    data: &[Prepared],
    rows: &[Dataset],
    job: &Job,
    methods: &[Method],
) -> Result<JobOutcome> {
    let mut train_parts = vec![];
    let mut valid_parts = vec![];
    let mut valid_neural = vec![];
    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    for &s in &job.sources {
        let p = &data[s];
        let [tr, va, _] =
            split_indices(&p.rows.grades, &cfg.split, job.seed, stream_for(p.domain.domain.as_str(), 0x73706c));
        for &i in tr.iter().chain(&va) {
            seen.insert((p.domain.domain.as_str(), p.domain.examples[i].image_id.as_str()));
        }
        train_parts.push(rows[s].subset(&tr));
        valid_parts.push(rows[s].subset(&va));
        if let Some(n) = &p.neural {
            valid_neural.extend(va.iter().map(|&i| n[i]));
        }
    }
    // leakage guard: nothing used for fitting may be evaluated
    for &t in &job.targets {
        let p = &data[t];
        if let Some(e) =
            p.domain.examples.iter().find(|e| seen.contains(&(p.domain.domain.as_str(), e.image_id.as_str())))
        {
            return Err(KgdgError::LeakageDetected(format!("{}/{}", p.domain.domain, e.image_id)));
        }
    }
    let train = Dataset::concat(&train_parts.iter().collect::<Vec<_>>())?;
    let valid = Dataset::concat(&valid_parts.iter().collect::<Vec<_>>())?;
    let tcfg = TrainConfig { seed: job.seed, ..cfg.symbolic.clone() };
    let model = fit_symbolic(&train, &valid, &tcfg)?;

    let weights = if methods.contains(&Method::Fusion(FusionStrategy::Weighted)) {
        Some(match cfg.fusion.weights {
            Some(w) => FusionWeights::new(w.alpha_dl, w.alpha_kl)?,
            None => {
                let kd = model.predict_dataset(&valid)?;
                select_weights(&valid_neural, &kd, &valid.grades, &cfg.fusion.grid)?
            }
        })
    } else {
        None
    };

    let mut metrics = vec![Vec::with_capacity(job.targets.len()); methods.len()];
    for &t in &job.targets {
        let p = &data[t];
        let truth = &p.rows.grades;
        let kd = model.predict_dataset(&rows[t])?;
        for (mi, &m) in methods.iter().enumerate() {
            let probs: Vec<ProbabilityVector> = match m {
                Method::Symbolic => kd.clone(),
                Method::Neural => p.neural.clone().expect("neural presence checked"),
                Method::Rules => p
                    .domain
                    .examples
                    .iter()
                    .map(|e| rule_grade_as_probability(&grade_by_rules(&e.features, &cfg.rules), cfg.rules.smoothing))
                    .collect::<Result<_>>()?,
                Method::Fusion(_) => vec![],
            };
            let (pred, probs): (Vec<DRGrade>, Vec<ProbabilityVector>) = match m {
                Method::Fusion(s) => {
                    let dl = p.neural.as_ref().expect("neural presence checked");
                    let mut pred = Vec::with_capacity(dl.len());
                    let mut dist = Vec::with_capacity(dl.len());
                    for (d, k) in dl.iter().zip(&kd) {
                        let f = fuse(s, d, k, weights.as_ref())?;
                        dist.push(fused_distribution(s, d, k, weights.as_ref(), &f));
                        pred.push(f.grade);
                    }
                    (pred, dist)
                }
                Method::Rules => {
                    let pred =
                        p.domain.examples.iter().map(|e| grade_by_rules(&e.features, &cfg.rules).grade()).collect();
                    (pred, probs)
                }
                _ => (probs.iter().map(|v| v.argmax()).collect(), probs),
            };
            metrics[mi].push(MetricReport::compute(truth, &pred, Some(&probs))?);
        }
    }
    Ok(JobOutcome { metrics, weights })
}

struct BlockPlan {
    title: String,
    sources: Vec<String>,
    /// (sources, targets) per fold; SDG has a single fold.
    folds: Vec<(Vec<usize>, Vec<usize>)>,
    columns: Vec<String>,
}

fn average_cells(cells: &[Cell]) -> Result<Cell> {
    let n_seeds = cells[0].accuracy.per_seed.len();
    let avg = |f: &dyn Fn(&Cell) -> Option<&Summary>| -> Result<Option<Summary>> {
        let mut per_seed = vec![0.0; n_seeds];
        for c in cells {
            let Some(s) = f(c) else { return Ok(None) };
            for (a, v) in per_seed.iter_mut().zip(&s.per_seed) {
                *a += v / cells.len() as f64;
            }
        }
        Summary::from_values(per_seed).map(Some)
    };
    Ok(Cell {
        accuracy: avg(&|c| Some(&c.accuracy))?.expect("accuracy always present"),
        macro_f1: avg(&|c| Some(&c.macro_f1))?.expect("macro-F1 always present"),
        auc: avg(&|c| c.auc.as_ref())?,
    })
}

fn run_plans(
    cfg: &ExperimentConfig,
    domains: &[DomainDataset],
    plans: Vec<BlockPlan>,
    synthetic: bool,
) -> Result<ExperimentReport> {
    let set = cfg.domains.feature_set;
    let data = prepare(domains, set)?;
    let methods = methods(cfg);
    if methods.iter().any(|m| m.needs_neural()) {
        if let Some(p) = data.iter().find(|p| p.neural.is_none()) {
            return Err(KgdgError::MissingProbabilityTable(p.domain.domain.to_string()));
        }
    }
    let raw_stats = data.iter().map(|p| DomainStats::from_rows(&p.rows.rows)).collect::<Result<Vec<_>>>()?;

    // rows per (block, fold), then every (block, fold, seed) job in parallel
    let mut fold_rows = vec![];
    let mut jobs = vec![];
    for (b, plan) in plans.iter().enumerate() {
        let mut per_fold = vec![];
        for (f, (sources, targets)) in plan.folds.iter().enumerate() {
            per_fold.push(block_rows(cfg, &data, sources)?);
            for &seed in &cfg.seeds {
                jobs.push((Job { block: b, sources: sources.clone(), targets: targets.clone(), seed }, f));
            }
        }
        fold_rows.push(per_fold);
    }
    let outcomes: Vec<JobOutcome> = jobs
        .par_iter()
        .map(|(job, f)| run_job(cfg, &data, &fold_rows[job.block][*f].0, job, &methods))
        .collect::<Result<_>>()?;

    let n_seeds = cfg.seeds.len();
    let mut blocks = vec![];
    let mut cursor = 0;
    for (b, plan) in plans.iter().enumerate() {
        // per fold: outcomes of each seed
        let fold_outcomes: Vec<&[JobOutcome]> =
            (0..plan.folds.len()).map(|f| &outcomes[cursor + f * n_seeds..cursor + (f + 1) * n_seeds]).collect();
        cursor += plan.folds.len() * n_seeds;
        let mut rows = vec![];
        for (mi, m) in methods.iter().enumerate() {
            let mut cells = vec![];
            for (f, (_, targets)) in plan.folds.iter().enumerate() {
                for ti in 0..targets.len() {
                    let per_seed = |g: &dyn Fn(&MetricReport) -> Option<f64>| -> Result<Option<Summary>> {
                        let v: Option<Vec<f64>> = fold_outcomes[f].iter().map(|o| g(&o.metrics[mi][ti])).collect();
                        v.map(Summary::from_values).transpose()
                    };
                    cells.push(Cell {
                        accuracy: per_seed(&|r| Some(r.accuracy))?.expect("accuracy present"),
                        macro_f1: per_seed(&|r| Some(r.macro_f1))?.expect("macro-F1 present"),
                        auc: per_seed(&|r| r.auc_ovr_macro)?,
                    });
                }
            }
            let avg = average_cells(&cells)?;
            cells.push(avg);
            rows.push(MethodRow { method: m.label().to_string(), cells });
        }
        let mut weights = vec![];
        for (f, (_, targets)) in plan.folds.iter().enumerate() {
            for (o, &seed) in fold_outcomes[f].iter().zip(&cfg.seeds) {
                if let Some(w) = o.weights {
                    let target = if plan.folds.len() == 1 {
                        "all".to_string()
                    } else {
                        data[targets[0]].domain.domain.to_string()
                    };
                    weights.push(WeightChoice { target, seed, alpha_dl: w.alpha_dl(), alpha_kl: w.alpha_kl() });
                }
            }
        }
        let involved: Vec<usize> = {
            let mut v: Vec<usize> = plan.folds.iter().flat_map(|(s, t)| s.iter().chain(t).copied()).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        let kl_before = pairwise_kl(&involved.iter().map(|&i| raw_stats[i].clone()).collect::<Vec<_>>())?;
        let kl_after = if cfg.alignment {
            let afters: Vec<f64> = fold_rows[b].iter().filter_map(|(_, a)| *a).collect();
            Some(afters.iter().sum::<f64>() / afters.len() as f64)
        } else {
            None
        };
        blocks.push(ReportBlock {
            title: plan.title.clone(),
            sources: plan.sources.clone(),
            columns: plan.columns.clone(),
            rows,
            kl_before,
            kl_after,
            weights,
        });
    }

    let mut notes = vec![
        "Fusion mapping: \"Non Weighted (DL + KL)\" is max-confidence fusion; \"Weighted (DL + KL)\" is the weighted argmax with α_KL chosen on source validation accuracy (ties to the smallest α_KL) unless fixed in the config.".to_string(),
        "Ties: the lower grade wins within a vector; the deep branch wins across vectors.".to_string(),
        "Targets are evaluated on their full data; sources are split train/validation/test by seed.".to_string(),
    ];
    if cfg.alignment {
        notes.push("Alignment: each domain standardized with its own feature statistics and mapped onto the pooled source statistics; KL after alignment is averaged over folds.".to_string());
    }
    Ok(ExperimentReport {
        mode: cfg.mode,
        model_kind: cfg.symbolic.model_kind,
        feature_set: set,
        seeds: cfg.seeds.clone(),
        blocks,
        config_fingerprint: cfg.fingerprint(domains)?,
        synthetic,
        notes,
    })
}

fn index_of(domains: &[DomainDataset], id: &DomainId) -> Result<usize> {
    domains
        .iter()
        .position(|d| &d.domain == id)
        .ok_or_else(|| KgdgError::InvalidConfig(format!("domain `{id}` not in the manifest")))
}

fn check_unique(domains: &[DomainDataset]) -> Result<()> {
    let mut seen = HashSet::new();
    for d in domains {
        if !seen.insert(&d.domain) {
            return Err(KgdgError::InvalidConfig(format!("domain `{}` given twice", d.domain)));
        }
    }
    Ok(())
}

/// Single-source generalization over in-memory domains.
pub fn run_sdg_on(cfg: &ExperimentConfig, domains: &[DomainDataset], synthetic: bool) -> Result<ExperimentReport> {
    cfg.validate()?;
    check_unique(domains)?;
    let sources: Vec<usize> = if cfg.domains.sources.is_empty() {
        (0..domains.len()).collect()
    } else {
        cfg.domains.sources.iter().map(|s| index_of(domains, s)).collect::<Result<_>>()?
    };
    let mut plans = vec![];
    for s in sources {
        let targets: Vec<usize> = if cfg.domains.targets.is_empty() {
            (0..domains.len()).filter(|&t| t != s).collect()
        } else {
            cfg.domains.targets.iter().map(|t| index_of(domains, t)).collect::<Result<_>>()?
        };
        if targets.is_empty() {
            return Err(KgdgError::InvalidConfig("sdg needs at least one target domain".into()));
        }
        let mut columns: Vec<String> = targets.iter().map(|&t| domains[t].domain.to_string()).collect();
        columns.push("Average".into());
        plans.push(BlockPlan {
            title: format!("SDG trained on {}", domains[s].domain),
            sources: vec![domains[s].domain.to_string()],
            folds: vec![(vec![s], targets)],
            columns,
        });
    }
    run_plans(cfg, domains, plans, synthetic)
}

/// Leave-one-domain-out over in-memory domains: exactly one fold per domain.
pub fn run_mdg_on(cfg: &ExperimentConfig, domains: &[DomainDataset], synthetic: bool) -> Result<ExperimentReport> {
    cfg.validate()?;
    check_unique(domains)?;
    if domains.len() < 2 {
        return Err(KgdgError::InvalidConfig("mdg needs at least two domains".into()));
    }
    let folds = (0..domains.len()).map(|t| ((0..domains.len()).filter(|&s| s != t).collect(), vec![t])).collect();
    let mut columns: Vec<String> = domains.iter().map(|d| d.domain.to_string()).collect();
    columns.push("Average".into());
    let plan = BlockPlan {
        title: "MDG leave-one-domain-out".into(),
        sources: domains.iter().map(|d| d.domain.to_string()).collect(),
        folds,
        columns,
    };
    run_plans(cfg, domains, vec![plan], synthetic)
}

pub fn load_manifest_domains(manifest: &Manifest) -> Result<Vec<DomainDataset>> {
    manifest.domains.iter().map(load_domain).collect()
}

pub fn run_sdg(cfg: &ExperimentConfig, manifest: &Manifest) -> Result<ExperimentReport> {
    run_sdg_on(cfg, &load_manifest_domains(manifest)?, manifest.synthetic)
}

pub fn run_mdg(cfg: &ExperimentConfig, manifest: &Manifest) -> Result<ExperimentReport> {
    run_mdg_on(cfg, &load_manifest_domains(manifest)?, manifest.synthetic)
}

/// Dispatches on `cfg.mode`.
pub fn run_experiment(cfg: &ExperimentConfig, manifest: &Manifest) -> Result<ExperimentReport> {
    match cfg.mode {
        Mode::Sdg => run_sdg(cfg, manifest),
        Mode::Mdg => run_mdg(cfg, manifest),
    }
}
