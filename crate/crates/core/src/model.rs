//! Domain types shared across the crate: grades, lesions, structured feature
//! vectors, probability vectors, boxes and labeled examples.
//!
//! Every type validates on construction and is immutable afterwards.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{KgdgError, Result};

/// Number of severity grades. Fixed; every formula in the crate assumes it.
pub const N_GRADES: usize = 5;

/// Sum deviation accepted without touching the vector.
pub const PROB_EXACT_TOL: f64 = 1e-6;
/// Sum deviation that is silently absorbed by renormalization.
pub const PROB_RENORM_TOL: f64 = 1e-4;

/// Diabetic retinopathy severity grade (ICDR staging).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct DRGrade(u8);

impl DRGrade {
    pub const NO_DR: DRGrade = DRGrade(0);
    pub const MILD: DRGrade = DRGrade(1);
    pub const MODERATE: DRGrade = DRGrade(2);
    pub const SEVERE: DRGrade = DRGrade(3);
    pub const PDR: DRGrade = DRGrade(4);

    pub fn new(value: i64) -> Result<Self> {
        if (0..N_GRADES as i64).contains(&value) {
            Ok(DRGrade(value as u8))
        } else {
            Err(KgdgError::InvalidGrade(value))
        }
    }

    pub fn all() -> impl Iterator<Item = DRGrade> {
        (0..N_GRADES as u8).map(DRGrade)
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        match self.0 {
            0 => "No DR",
            1 => "Mild NPDR",
            2 => "Moderate NPDR",
            3 => "Severe NPDR",
            _ => "PDR",
        }
    }
}

impl TryFrom<u8> for DRGrade {
    type Error = KgdgError;
    fn try_from(v: u8) -> Result<Self> {
        DRGrade::new(v as i64)
    }
}

impl From<DRGrade> for u8 {
    fn from(g: DRGrade) -> u8 {
        g.0
    }
}

impl fmt::Display for DRGrade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Lesion categories recognised by the detector and the rule ontology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LesionType {
    Microaneurysm,
    HardExudate,
    HardHemorrhage,
    SoftHemorrhage,
    CottonWoolSpot,
    SubhyaloidHemorrhage,
    Neovascularization,
}

impl LesionType {
    pub const ALL: [LesionType; 7] = [
        LesionType::Microaneurysm,
        LesionType::HardExudate,
        LesionType::HardHemorrhage,
        LesionType::SoftHemorrhage,
        LesionType::CottonWoolSpot,
        LesionType::SubhyaloidHemorrhage,
        LesionType::Neovascularization,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LesionType::Microaneurysm => "microaneurysm",
            LesionType::HardExudate => "hard_exudate",
            LesionType::HardHemorrhage => "hard_hemorrhage",
            LesionType::SoftHemorrhage => "soft_hemorrhage",
            LesionType::CottonWoolSpot => "cotton_wool_spot",
            LesionType::SubhyaloidHemorrhage => "subhyaloid_hemorrhage",
            LesionType::Neovascularization => "neovascularization",
        }
    }

    pub fn is_hemorrhage(self) -> bool {
        matches!(self, LesionType::HardHemorrhage | LesionType::SoftHemorrhage)
    }
}

impl std::str::FromStr for LesionType {
    type Err = KgdgError;
    fn from_str(s: &str) -> Result<Self> {
        LesionType::ALL.into_iter().find(|l| l.as_str() == s).ok_or_else(|| KgdgError::UnknownLesionKind(s.to_string()))
    }
}

/// Retinal vein morphology summary from the vessel segmentation stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VeinFeatures {
    pub tortuosity: f64,
    pub caliber_mean: f64,
    pub branch_angle_mean: f64,
}

impl VeinFeatures {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(KgdgError::InvalidFeatures(format!("{what} = {v} out of range")));
        if !(self.tortuosity.is_finite() && self.tortuosity >= 0.0) {
            return bad("vein_tortuosity", self.tortuosity);
        }
        if !(self.caliber_mean.is_finite() && self.caliber_mean >= 0.0) {
            return bad("vein_caliber_mean", self.caliber_mean);
        }
        if !(0.0..=180.0).contains(&self.branch_angle_mean) {
            return bad("vein_branch_angle_mean", self.branch_angle_mean);
        }
        Ok(())
    }
}

/// The structured symbolic vector fed to the knowledge-driven branch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub microaneurysm_count: u32,
    pub exudate_count: u32,
    pub hard_hemorrhage_count: u32,
    pub soft_hemorrhage_count: u32,
    pub cotton_wool_count: u32,
    pub subhyaloid_present: bool,
    pub neovascularization_present: bool,
    pub hemorrhage_quadrants: u8,
    pub vein: Option<VeinFeatures>,
}

impl FeatureVector {
    pub fn validate(&self) -> Result<()> {
        if self.hemorrhage_quadrants > 4 {
            return Err(KgdgError::InvalidFeatures(format!(
                "hemorrhage_quadrants = {} exceeds 4",
                self.hemorrhage_quadrants
            )));
        }
        if let Some(v) = &self.vein {
            v.validate()?;
        }
        Ok(())
    }

    pub fn hemorrhage_total(&self) -> u32 {
        self.hard_hemorrhage_count + self.soft_hemorrhage_count
    }

    /// Numeric row in the column order of `set`.
    pub fn to_row(&self, set: FeatureSet) -> Result<Vec<f64>> {
        let mut row = vec![
            self.microaneurysm_count as f64,
            self.exudate_count as f64,
            self.hard_hemorrhage_count as f64,
            self.soft_hemorrhage_count as f64,
            self.cotton_wool_count as f64,
            self.subhyaloid_present as u8 as f64,
            self.neovascularization_present as u8 as f64,
            self.hemorrhage_quadrants as f64,
        ];
        if set == FeatureSet::LesionsVein {
            let v = self
                .vein
                .ok_or_else(|| KgdgError::SchemaMismatch("lesions+vein requested but vein features absent".into()))?;
            row.extend([v.tortuosity, v.caliber_mean, v.branch_angle_mean]);
        }
        Ok(row)
    }
}

pub const LESION_COLUMNS: [&str; 8] = [
    "microaneurysm_count",
    "exudate_count",
    "hard_hemorrhage_count",
    "soft_hemorrhage_count",
    "cotton_wool_count",
    "subhyaloid_present",
    "neovascularization_present",
    "hemorrhage_quadrants",
];

pub const VEIN_COLUMNS: [&str; 3] = ["vein_tortuosity", "vein_caliber_mean", "vein_branch_angle_mean"];

/// The two supported symbolic feature schemas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    #[default]
    LesionsOnly,
    LesionsVein,
}

impl FeatureSet {
    pub fn columns(self) -> Vec<String> {
        let mut cols: Vec<String> = LESION_COLUMNS.iter().map(|s| s.to_string()).collect();
        if self == FeatureSet::LesionsVein {
            cols.extend(VEIN_COLUMNS.iter().map(|s| s.to_string()));
        }
        cols
    }

    pub fn arity(self) -> usize {
        match self {
            FeatureSet::LesionsOnly => LESION_COLUMNS.len(),
            FeatureSet::LesionsVein => LESION_COLUMNS.len() + VEIN_COLUMNS.len(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FeatureSet::LesionsOnly => "Lesions Only",
            FeatureSet::LesionsVein => "Lesions + Vein",
        }
    }
}

impl std::str::FromStr for FeatureSet {
    type Err = KgdgError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lesions_only" | "lesions" => Ok(FeatureSet::LesionsOnly),
            "lesions_vein" | "lesions+vein" => Ok(FeatureSet::LesionsVein),
            other => Err(KgdgError::InvalidConfig(format!("unknown feature set `{other}`"))),
        }
    }
}

/// Confidence vector over the five grades.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbabilityVector([f64; N_GRADES]);

/// Emitted when a vector was accepted after renormalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Renormalized {
    pub original_sum: f64,
}

/// Validate raw confidences. Sums within 1e-6 of one pass unchanged, sums
/// within 1e-4 are renormalized (and reported), anything else is rejected.
pub fn validate_probability(values: &[f64]) -> Result<(ProbabilityVector, Option<Renormalized>)> {
    if values.len() != N_GRADES {
        return Err(KgdgError::WrongArity { expected: N_GRADES, got: values.len() });
    }
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            return Err(KgdgError::Malformed(format!("NaN probability at grade {i}")));
        }
        if v < 0.0 {
            return Err(KgdgError::NegativeProbability { index: i, value: v });
        }
    }
    let sum: f64 = values.iter().sum();
    let dev = (sum - 1.0).abs();
    let mut probs = [0.0; N_GRADES];
    probs.copy_from_slice(values);
    if dev <= PROB_EXACT_TOL && probs.iter().all(|&p| p <= 1.0) {
        return Ok((ProbabilityVector(probs), None));
    }
    if dev <= PROB_RENORM_TOL {
        for p in probs.iter_mut() {
            *p = (*p / sum).min(1.0);
        }
        return Ok((ProbabilityVector(probs), Some(Renormalized { original_sum: sum })));
    }
    Err(KgdgError::SumOutOfTolerance { sum })
}

impl ProbabilityVector {
    /// Validates and drops any renormalization notice.
    pub fn new(values: &[f64]) -> Result<Self> {
        validate_probability(values).map(|(p, _)| p)
    }

    pub fn uniform() -> Self {
        ProbabilityVector([1.0 / N_GRADES as f64; N_GRADES])
    }

    pub fn one_hot(grade: DRGrade) -> Self {
        let mut p = [0.0; N_GRADES];
        p[grade.index()] = 1.0;
        ProbabilityVector(p)
    }

    /// Exponential normalization of raw scores.
    pub fn softmax(scores: &[f64; N_GRADES]) -> Self {
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut p = [0.0; N_GRADES];
        let mut z = 0.0;
        for (pi, &s) in p.iter_mut().zip(scores) {
            *pi = (s - m).exp();
            z += *pi;
        }
        for pi in p.iter_mut() {
            *pi /= z;
        }
        ProbabilityVector(p)
    }

    /// Normalizes nonnegative weights that are known to have a positive sum.
    pub(crate) fn from_weights(w: [f64; N_GRADES]) -> Self {
        let s: f64 = w.iter().sum();
        debug_assert!(s > 0.0);
        ProbabilityVector(w.map(|x| x / s))
    }

    pub fn as_array(&self) -> &[f64; N_GRADES] {
        &self.0
    }

    pub fn get(&self, grade: DRGrade) -> f64 {
        self.0[grade.index()]
    }

    /// Highest-probability grade; ties go to the lower grade.
    pub fn argmax(&self) -> DRGrade {
        argmax_lowest(&self.0)
    }

    pub fn max(&self) -> f64 {
        self.0[self.argmax().index()]
    }
}

/// Index of the largest value, preferring the lowest index on ties.
pub(crate) fn argmax_lowest(values: &[f64; N_GRADES]) -> DRGrade {
    let mut best = 0;
    for i in 1..N_GRADES {
        if values[i] > values[best] {
            best = i;
        }
    }
    DRGrade(best as u8)
}

impl TryFrom<Vec<f64>> for ProbabilityVector {
    type Error = KgdgError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ProbabilityVector::new(&v)
    }
}

impl From<ProbabilityVector> for Vec<f64> {
    fn from(p: ProbabilityVector) -> Vec<f64> {
        p.0.to_vec()
    }
}

/// Axis-aligned box in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundingBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

const BOX_EPS: f64 = 1e-9;

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let ok = (0.0..=1.0).contains(&x)
            && (0.0..=1.0).contains(&y)
            && w > 0.0
            && w <= 1.0
            && h > 0.0
            && h <= 1.0
            && x + w <= 1.0 + BOX_EPS
            && y + h <= 1.0 + BOX_EPS;
        if ok {
            Ok(BoundingBox { x, y, w, h })
        } else {
            Err(KgdgError::BoxOutOfBounds(format!("({x}, {y}, {w}, {h})")))
        }
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// One localized lesion finding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Detection {
    pub lesion: LesionType,
    pub bbox: BoundingBox,
    score: f64,
}

impl Detection {
    pub fn new(lesion: LesionType, bbox: BoundingBox, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(KgdgError::Malformed(format!("detection score {score} outside [0,1]")));
        }
        Ok(Detection { lesion, bbox, score })
    }

    pub fn score(&self) -> f64 {
        self.score
    }
}

/// Lowercase domain token.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DomainId(String);

impl DomainId {
    pub fn new(name: &str) -> Result<Self> {
        let norm = name.trim().to_ascii_lowercase();
        let valid = !norm.is_empty() && norm.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
        if valid {
            Ok(DomainId(norm))
        } else {
            Err(KgdgError::InvalidDomain(name.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for DomainId {
    type Error = KgdgError;
    fn try_from(s: String) -> Result<Self> {
        DomainId::new(&s)
    }
}

impl From<DomainId> for String {
    fn from(d: DomainId) -> String {
        d.0
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub image_id: String,
    pub domain: DomainId,
    pub grade: DRGrade,
    pub features: FeatureVector,
    pub neural_probs: Option<ProbabilityVector>,
}

/// All labeled examples of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub domain: DomainId,
    pub examples: Vec<LabeledExample>,
}

impl DomainDataset {
    pub fn has_neural(&self) -> bool {
        !self.examples.is_empty() && self.examples.iter().all(|e| e.neural_probs.is_some())
    }
}

/// Relative weights of the deep and knowledge branches in weighted fusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    alpha_dl: f64,
    alpha_kl: f64,
}

impl FusionWeights {
    pub fn new(alpha_dl: f64, alpha_kl: f64) -> Result<Self> {
        if !(alpha_dl.is_finite() && alpha_kl.is_finite())
            || alpha_dl < 0.0
            || alpha_kl < 0.0
            || alpha_dl + alpha_kl <= 0.0
        {
            return Err(KgdgError::InvalidConfig(format!(
                "fusion weights ({alpha_dl}, {alpha_kl}) must be nonnegative with a positive sum"
            )));
        }
        Ok(FusionWeights { alpha_dl, alpha_kl })
    }

    pub fn alpha_dl(&self) -> f64 {
        self.alpha_dl
    }

    pub fn alpha_kl(&self) -> f64 {
        self.alpha_kl
    }
}
