//! Confidence-based fusion of the deep and knowledge-driven branches.
//!
//! Tie policy, applied everywhere: within one vector the lower grade wins;
//! across vectors the deep branch wins.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{KgdgError, Result};
use crate::model::{argmax_lowest, DRGrade, FusionWeights, ProbabilityVector, N_GRADES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionSource {
    Deep,
    Symbolic,
    Blended,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedPrediction {
    pub grade: DRGrade,
    pub source: FusionSource,
    pub winning_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    Selective,
    #[serde(alias = "max_confidence")]
    Max,
    Classwise,
    Weighted,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 4] =
        [FusionStrategy::Selective, FusionStrategy::Max, FusionStrategy::Classwise, FusionStrategy::Weighted];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionStrategy::Selective => "selective",
            FusionStrategy::Max => "max",
            FusionStrategy::Classwise => "classwise",
            FusionStrategy::Weighted => "weighted",
        }
    }
}

impl std::str::FromStr for FusionStrategy {
    type Err = KgdgError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "selective" => Ok(FusionStrategy::Selective),
            "max" | "max_confidence" => Ok(FusionStrategy::Max),
            "classwise" => Ok(FusionStrategy::Classwise),
            "weighted" => Ok(FusionStrategy::Weighted),
            other => Err(KgdgError::InvalidConfig(format!("unknown fusion strategy `{other}`"))),
        }
    }
}

/// Takes the deep prediction when its top confidence is at least the
/// symbolic one, otherwise the symbolic prediction.
pub fn fuse_selective(p_dl: &ProbabilityVector, p_kd: &ProbabilityVector) -> FusedPrediction {
    let (s_dl, s_kd) = (p_dl.max(), p_kd.max());
    if s_dl >= s_kd {
        FusedPrediction { grade: p_dl.argmax(), source: FusionSource::Deep, winning_score: s_dl }
    } else {
        FusedPrediction { grade: p_kd.argmax(), source: FusionSource::Symbolic, winning_score: s_kd }
    }
}

/// Class of the single largest entry across both vectors.
pub fn fuse_max_confidence(p_dl: &ProbabilityVector, p_kd: &ProbabilityVector) -> FusedPrediction {
    // scan deep cells before symbolic ones, strict improvement only
    let mut best =
        FusedPrediction { grade: DRGrade::NO_DR, source: FusionSource::Deep, winning_score: f64::NEG_INFINITY };
    for (source, p) in [(FusionSource::Deep, p_dl), (FusionSource::Symbolic, p_kd)] {
        for g in DRGrade::all() {
            if p.get(g) > best.winning_score {
                best = FusedPrediction { grade: g, source, winning_score: p.get(g) };
            }
        }
    }
    best
}

/// Per-grade maximum of the two vectors, then argmax.
pub fn fuse_classwise_max(p_dl: &ProbabilityVector, p_kd: &ProbabilityVector) -> FusedPrediction {
    let mut m = [0.0; N_GRADES];
    for g in DRGrade::all() {
        m[g.index()] = p_dl.get(g).max(p_kd.get(g));
    }
    let grade = argmax_lowest(&m);
    let source = if p_dl.get(grade) >= p_kd.get(grade) { FusionSource::Deep } else { FusionSource::Symbolic };
    FusedPrediction { grade, source, winning_score: m[grade.index()] }
}

/// Argmax of the weighted sum of the two vectors.
pub fn fuse_weighted(p_dl: &ProbabilityVector, p_kd: &ProbabilityVector, w: &FusionWeights) -> FusedPrediction {
    let mut blended = [0.0; N_GRADES];
    for g in DRGrade::all() {
        blended[g.index()] = w.alpha_dl() * p_dl.get(g) + w.alpha_kl() * p_kd.get(g);
    }
    let grade = argmax_lowest(&blended);
    FusedPrediction { grade, source: FusionSource::Blended, winning_score: blended[grade.index()] }
}

pub fn fuse(
    strategy: FusionStrategy,
    p_dl: &ProbabilityVector,
    p_kd: &ProbabilityVector,
    weights: Option<&FusionWeights>,
) -> Result<FusedPrediction> {
    Ok(match strategy {
        FusionStrategy::Selective => fuse_selective(p_dl, p_kd),
        FusionStrategy::Max => fuse_max_confidence(p_dl, p_kd),
        FusionStrategy::Classwise => fuse_classwise_max(p_dl, p_kd),
        FusionStrategy::Weighted => {
            let w = weights.ok_or_else(|| KgdgError::InvalidConfig("weighted fusion requires weights".into()))?;
            fuse_weighted(p_dl, p_kd, w)
        }
    })
}

/// Fuses two per-image tables. Both must cover exactly the same images.
pub fn batch_fuse(
    strategy: FusionStrategy,
    dl_table: &BTreeMap<String, ProbabilityVector>,
    kd_table: &BTreeMap<String, ProbabilityVector>,
    weights: Option<&FusionWeights>,
) -> Result<BTreeMap<String, FusedPrediction>> {
    if let Some(id) = kd_table.keys().find(|k| !dl_table.contains_key(*k)) {
        return Err(KgdgError::UnknownImageId(id.clone()));
    }
    dl_table
        .iter()
        .map(|(id, p_dl)| {
            let p_kd = kd_table.get(id).ok_or_else(|| KgdgError::UnknownImageId(id.clone()))?;
            Ok((id.clone(), fuse(strategy, p_dl, p_kd, weights)?))
        })
        .collect()
}
