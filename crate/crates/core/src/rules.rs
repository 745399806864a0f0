//! Clinical rule engine.
//!
//! Detections are first aggregated into a [`FeatureVector`]; the vector is
//! then graded by an ordered list of ontology rules. Rule grades are
//! non-increasing in priority order, so the first match is also the most
//! severe match and adding findings can never lower the grade.

use serde::{Deserialize, Serialize};

use crate::error::{KgdgError, Result};
use crate::model::{BoundingBox, DRGrade, Detection, FeatureVector, LesionType, ProbabilityVector, N_GRADES};

/// Tunable thresholds for the rule engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleConfig {
    /// Hemorrhage total that must be exceeded (with all quadrants involved) for R3.
    pub hemorrhage_severe_count: u32,
    /// Cotton-wool spot count at which R4 marks severe NPDR.
    pub cws_severe_threshold: u32,
    /// Detections below this score are ignored during aggregation.
    pub min_score: f64,
    /// Probability mass spread off the rule grade when it enters fusion.
    pub smoothing: f64,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig { hemorrhage_severe_count: 20, cws_severe_threshold: 5, min_score: 0.25, smoothing: 0.1 }
    }
}

impl RuleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.min_score) {
            return Err(KgdgError::InvalidConfig(format!("rules.min_score {} outside [0,1]", self.min_score)));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(KgdgError::InvalidConfig(format!("rules.smoothing {} outside [0,1)", self.smoothing)));
        }
        if self.cws_severe_threshold == 0 {
            return Err(KgdgError::InvalidConfig("rules.cws_severe_threshold must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleId {
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
    R7,
    R8,
}

impl RuleId {
    pub fn description(self) -> &'static str {
        match self {
            RuleId::R1 => "neovascularization present",
            RuleId::R2 => "subhyaloid hemorrhage present",
            RuleId::R3 => "hemorrhages above threshold in all four quadrants",
            RuleId::R4 => "cotton-wool spots at severe threshold",
            RuleId::R5 => "cotton-wool spots present",
            RuleId::R6 => "hard exudates or hemorrhages present",
            RuleId::R7 => "microaneurysms present",
            RuleId::R8 => "no findings",
        }
    }

    pub fn grade(self) -> DRGrade {
        match self {
            RuleId::R1 | RuleId::R2 => DRGrade::PDR,
            RuleId::R3 | RuleId::R4 => DRGrade::SEVERE,
            RuleId::R5 | RuleId::R6 => DRGrade::MODERATE,
            RuleId::R7 => DRGrade::MILD,
            RuleId::R8 => DRGrade::NO_DR,
        }
    }
}

/// Grade produced by the rule engine together with the rules that fired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleTrace {
    fired_rules: Vec<RuleId>,
    grade: DRGrade,
}

impl RuleTrace {
    pub fn fired_rules(&self) -> &[RuleId] {
        &self.fired_rules
    }

    pub fn grade(&self) -> DRGrade {
        self.grade
    }
}

/// Quadrant of the box center: 1 top-left, 2 top-right, 3 bottom-left,
/// 4 bottom-right. Centers on an axis fall into the lower-numbered quadrant.
pub fn assign_quadrant(bbox: &BoundingBox) -> u8 {
    let (cx, cy) = bbox.center();
    let right = cx > 0.5;
    let bottom = cy > 0.5;
    match (bottom, right) {
        (false, false) => 1,
        (false, true) => 2,
        (true, false) => 3,
        (true, true) => 4,
    }
}

/// Counts qualifying detections into a lesions-only feature vector.
pub fn aggregate_detections(dets: &[Detection], min_score: f64) -> FeatureVector {
    let mut f = FeatureVector::default();
    let mut quadrants = [false; 4];
    for d in dets.iter().filter(|d| d.score() >= min_score) {
        match d.lesion {
            LesionType::Microaneurysm => f.microaneurysm_count += 1,
            LesionType::HardExudate => f.exudate_count += 1,
            LesionType::HardHemorrhage => f.hard_hemorrhage_count += 1,
            LesionType::SoftHemorrhage => f.soft_hemorrhage_count += 1,
            LesionType::CottonWoolSpot => f.cotton_wool_count += 1,
            LesionType::SubhyaloidHemorrhage => f.subhyaloid_present = true,
            LesionType::Neovascularization => f.neovascularization_present = true,
        }
        if d.lesion.is_hemorrhage() {
            quadrants[(assign_quadrant(&d.bbox) - 1) as usize] = true;
        }
    }
    f.hemorrhage_quadrants = quadrants.iter().filter(|&&q| q).count() as u8;
    f
}

/// Grades a feature vector with the first matching ontology rule.
pub fn grade_by_rules(f: &FeatureVector, cfg: &RuleConfig) -> RuleTrace {
    let hem = f.hemorrhage_total();
    let rule = if f.neovascularization_present {
        RuleId::R1
    } else if f.subhyaloid_present {
        RuleId::R2
    } else if hem > cfg.hemorrhage_severe_count && f.hemorrhage_quadrants == 4 {
        RuleId::R3
    } else if f.cotton_wool_count >= cfg.cws_severe_threshold {
        RuleId::R4
    } else if f.cotton_wool_count >= 1 {
        RuleId::R5
    } else if f.exudate_count >= 1 || hem >= 1 {
        RuleId::R6
    } else if f.microaneurysm_count >= 1 {
        RuleId::R7
    } else {
        RuleId::R8
    };
    RuleTrace { fired_rules: vec![rule], grade: rule.grade() }
}

/// Spreads `smoothing` evenly over the four other grades.
pub fn rule_grade_as_probability(trace: &RuleTrace, smoothing: f64) -> Result<ProbabilityVector> {
    if !(0.0..1.0).contains(&smoothing) {
        return Err(KgdgError::InvalidConfig(format!("smoothing {smoothing} outside [0,1)")));
    }
    let off = smoothing / (N_GRADES - 1) as f64;
    let mut p = [off; N_GRADES];
    p[trace.grade.index()] = 1.0 - smoothing;
    ProbabilityVector::new(&p)
}
