//! Synthetic multi-domain data with controllable shift.
//!
//! Each domain draws a grade from its prior, Poisson lesion counts from a
//! grade-indexed rate matrix scaled by a per-domain bias, random detection
//! boxes consistent with those counts, vein morphology from a grade-dependent
//! base plus a domain offset and noise, and a simulated deep-branch
//! probability row with a configured accuracy.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, WeightedIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KgdgError, Result};
use crate::io::{
    format_detections, format_feature_table, format_probability_table, sha256_hex, write_atomic, Manifest,
    ManifestDomain,
};
use crate::learn::rng_for;
use crate::model::{
    BoundingBox, DRGrade, Detection, DomainDataset, DomainId, LabeledExample, LesionType, ProbabilityVector,
    VeinFeatures, N_GRADES,
};
use crate::rules::aggregate_detections;

/// Lesion columns of the rate matrix.
pub const RATE_LESIONS: [LesionType; 5] = [
    LesionType::Microaneurysm,
    LesionType::HardExudate,
    LesionType::HardHemorrhage,
    LesionType::SoftHemorrhage,
    LesionType::CottonWoolSpot,
];

/// Vein base values at grade 0 and their per-grade increments, in the order
/// tortuosity, caliber, branch angle.
const VEIN_BASE: [f64; 3] = [1.05, 5.0, 75.0];
const VEIN_STEP: [f64; 3] = [0.04, 0.3, 3.0];

/// Softmax margins of the simulated deep branch: right answers tend to be
/// more confident than wrong ones.
const MARGIN_CORRECT: (f64, f64) = (0.5, 3.0);
const MARGIN_WRONG: (f64, f64) = (0.0, 1.5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub name: String,
    pub n_samples: usize,
    pub grade_prior: [f64; N_GRADES],
    /// `count_rate_matrix[grade][j]` is the Poisson rate of `RATE_LESIONS[j]`.
    pub count_rate_matrix: [[f64; 5]; N_GRADES],
    pub count_bias: f64,
    /// Probability that a grade-4 image shows neovascularization.
    pub nv_probability: f64,
    /// Probability that a grade-4 image shows a subhyaloid hemorrhage.
    pub subhyaloid_probability: f64,
    /// Domain offset of the vein features, in grade steps.
    pub vein_offset: [f64; 3],
    /// Per-image vein noise, in grade steps.
    pub vein_noise_sigma: f64,
    pub neural_in_domain_accuracy: f64,
    pub neural_ood_accuracy: f64,
    pub neural_temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub domains: Vec<DomainSpec>,
    /// Domains the simulated deep model was trained on; their probability
    /// tables use the in-domain accuracy, all others the out-of-domain one.
    pub neural_source_domains: Vec<String>,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(KgdgError::InvalidConfig(m));
        if self.domains.is_empty() {
            return bad("synthetic config needs at least one domain".into());
        }
        let mut names = std::collections::HashSet::new();
        for d in &self.domains {
            let id = DomainId::new(&d.name)?;
            if !names.insert(id) {
                return bad(format!("domain `{}` repeated", d.name));
            }
            if ProbabilityVector::new(&d.grade_prior).is_err() {
                return bad(format!("{}: grade_prior is not a probability vector", d.name));
            }
            for row in &d.count_rate_matrix {
                if row.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
                    return bad(format!("{}: rates must be nonnegative", d.name));
                }
            }
            for j in 0..RATE_LESIONS.len() {
                if (1..N_GRADES).any(|g| d.count_rate_matrix[g][j] < d.count_rate_matrix[g - 1][j]) {
                    return bad(format!("{}: rates must be non-decreasing in grade", d.name));
                }
            }
            let unit = |v: f64| (0.0..=1.0).contains(&v);
            if !(d.count_bias.is_finite() && d.count_bias >= 0.0) {
                return bad(format!("{}: count_bias must be ≥ 0", d.name));
            }
            if !(d.vein_noise_sigma.is_finite() && d.vein_noise_sigma >= 0.0) {
                return bad(format!("{}: vein_noise_sigma must be ≥ 0", d.name));
            }
            if !(unit(d.nv_probability) && unit(d.subhyaloid_probability)) {
                return bad(format!("{}: flag probabilities must lie in [0,1]", d.name));
            }
            if !(unit(d.neural_in_domain_accuracy) && unit(d.neural_ood_accuracy)) {
                return bad(format!("{}: neural accuracies must lie in [0,1]", d.name));
            }
            if !(d.neural_temperature > 0.0 && d.neural_temperature.is_finite()) {
                return bad(format!("{}: neural_temperature must be > 0", d.name));
            }
            if d.vein_offset.iter().any(|v| !v.is_finite()) {
                return bad(format!("{}: vein_offset must be finite", d.name));
            }
        }
        Ok(())
    }
}

/// Generated data for one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDomain {
    pub dataset: DomainDataset,
    pub detections: BTreeMap<String, Vec<Detection>>,
}

pub(crate) fn stream_for(name: &str, salt: u64) -> u64 {
    let h = sha256_hex(name.as_bytes());
    u64::from_str_radix(&h[..16], 16).expect("hex digest") ^ salt
}

fn random_box<R: Rng>(rng: &mut R) -> BoundingBox {
    let w = rng.gen_range(0.01..0.06);
    let h = rng.gen_range(0.01..0.06);
    let x = rng.gen_range(0.0..1.0 - w);
    let y = rng.gen_range(0.0..1.0 - h);
    BoundingBox::new(x, y, w, h).expect("box drawn inside the image")
}

/// A simulated deep-branch confidence row whose argmax is `pred`.
fn neural_row<R: Rng>(rng: &mut R, pred: usize, correct: bool, temperature: f64) -> ProbabilityVector {
    let noise = Normal::new(0.0, 0.5).expect("valid normal");
    let mut z = [0.0; N_GRADES];
    for v in z.iter_mut() {
        *v = noise.sample(rng);
    }
    let (lo, hi) = if correct { MARGIN_CORRECT } else { MARGIN_WRONG };
    let others = (0..N_GRADES).filter(|&k| k != pred).map(|k| z[k]).fold(f64::NEG_INFINITY, f64::max);
    // strictly positive margin keeps the argmax on `pred`
    z[pred] = others + rng.gen_range(lo..hi).max(1e-6);
    ProbabilityVector::softmax(&z.map(|v| v / temperature))
}

fn generate_domain(spec: &DomainSpec, neural_accuracy: f64, seed: u64) -> Result<SynthDomain> {
    let domain = DomainId::new(&spec.name)?;
    let mut rng: ChaCha8Rng = rng_for(seed, stream_for(domain.as_str(), 0));
    let mut nrng: ChaCha8Rng = rng_for(seed, stream_for(domain.as_str(), 0x6e6e));
    let prior = WeightedIndex::new(spec.grade_prior).map_err(|e| KgdgError::InvalidConfig(e.to_string()))?;
    let noise = Normal::new(0.0, 1.0).expect("valid normal");

    let mut examples = Vec::with_capacity(spec.n_samples);
    let mut detections = BTreeMap::new();
    for i in 0..spec.n_samples {
        let image_id = format!("{}-{:05}", domain, i);
        let g = prior.sample(&mut rng);
        let mut dets = Vec::new();
        for (j, lesion) in RATE_LESIONS.into_iter().enumerate() {
            let rate = spec.count_rate_matrix[g][j] * spec.count_bias;
            let n = if rate > 0.0 { Poisson::new(rate).expect("positive rate").sample(&mut rng) as usize } else { 0 };
            for _ in 0..n {
                let score = rng.gen_range(0.5..1.0);
                dets.push(Detection::new(lesion, random_box(&mut rng), score)?);
            }
        }
        if g == N_GRADES - 1 {
            for (p, lesion) in [
                (spec.nv_probability, LesionType::Neovascularization),
                (spec.subhyaloid_probability, LesionType::SubhyaloidHemorrhage),
            ] {
                if rng.gen_bool(p) {
                    let score = rng.gen_range(0.5..1.0);
                    dets.push(Detection::new(lesion, random_box(&mut rng), score)?);
                }
            }
        }
        let mut features = aggregate_detections(&dets, 0.0);
        let mut vein = [0.0; 3];
        for k in 0..3 {
            let steps = g as f64 + spec.vein_offset[k] + spec.vein_noise_sigma * noise.sample(&mut rng);
            vein[k] = VEIN_BASE[k] + VEIN_STEP[k] * steps;
        }
        features.vein = Some(VeinFeatures {
            tortuosity: vein[0].max(0.0),
            caliber_mean: vein[1].max(0.0),
            branch_angle_mean: vein[2].clamp(0.0, 180.0),
        });

        let correct = nrng.gen_bool(neural_accuracy);
        let pred = if correct {
            g
        } else {
            let k = nrng.gen_range(0..N_GRADES - 1);
            if k >= g {
                k + 1
            } else {
                k
            }
        };
        let probs = neural_row(&mut nrng, pred, correct, spec.neural_temperature);

        examples.push(LabeledExample {
            image_id: image_id.clone(),
            domain: domain.clone(),
            grade: DRGrade::new(g as i64)?,
            features,
            neural_probs: Some(probs),
        });
        detections.insert(image_id, dets);
    }
    Ok(SynthDomain { dataset: DomainDataset { domain, examples }, detections })
}

/// Generates every configured domain. Domains are independent of each other
/// and of their order in the config.
pub fn gen_dataset(cfg: &SynthConfig) -> Result<Vec<SynthDomain>> {
    cfg.validate()?;
    let sources: Vec<DomainId> = cfg.neural_source_domains.iter().map(|s| DomainId::new(s)).collect::<Result<_>>()?;
    cfg.domains
        .par_iter()
        .map(|spec| {
            let id = DomainId::new(&spec.name)?;
            let acc = if sources.contains(&id) { spec.neural_in_domain_accuracy } else { spec.neural_ood_accuracy };
            generate_domain(spec, acc, cfg.seed)
        })
        .collect()
}

/// Writes per-domain feature, probability and detection files plus a
/// manifest into `dir`.
pub fn write_synth(domains: &[SynthDomain], dir: &Path, seed_list: &[u64]) -> Result<Manifest> {
    let mut manifest = Manifest { domains: vec![], seed_list: seed_list.to_vec(), synthetic: true };
    for d in domains {
        let name = d.dataset.domain.as_str();
        let features = format!("features_{name}.csv");
        let probs = format!("probs_{name}.csv");
        let dets = format!("detections_{name}.json");
        write_atomic(&dir.join(&features), format_feature_table(&d.dataset.examples)?.as_bytes())?;
        let rows: Vec<(&str, &ProbabilityVector)> = d
            .dataset
            .examples
            .iter()
            .filter_map(|e| e.neural_probs.as_ref().map(|p| (e.image_id.as_str(), p)))
            .collect();
        write_atomic(&dir.join(&probs), format_probability_table(rows).as_bytes())?;
        let mut det_json = format_detections(&d.detections)?;
        det_json.push('\n');
        write_atomic(&dir.join(&dets), det_json.as_bytes())?;
        manifest.domains.push(ManifestDomain {
            name: d.dataset.domain.clone(),
            features: features.into(),
            probabilities: Some(probs.into()),
            detections: Some(dets.into()),
        });
    }
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| KgdgError::Malformed(e.to_string()))?;
    text.push('\n');
    write_atomic(&dir.join("manifest.json"), text.as_bytes())?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftProfile {
    Mild,
    Severe,
    VeinHostile,
}

impl std::str::FromStr for ShiftProfile {
    type Err = KgdgError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mild" => Ok(ShiftProfile::Mild),
            "severe" => Ok(ShiftProfile::Severe),
            "vein_hostile" => Ok(ShiftProfile::VeinHostile),
            other => Err(KgdgError::InvalidConfig(format!("unknown shift profile `{other}`"))),
        }
    }
}

/// Default Poisson rates: microaneurysms, exudates, hard and soft
/// hemorrhages, cotton-wool spots, per grade.
pub const DEFAULT_RATES: [[f64; 5]; N_GRADES] = [
    [0.3, 0.1, 0.1, 0.05, 0.0],
    [3.0, 0.3, 0.3, 0.1, 0.05],
    [6.0, 3.0, 3.0, 1.5, 0.6],
    [8.0, 5.0, 9.0, 5.0, 3.0],
    [9.0, 6.0, 10.0, 6.0, 3.5],
];

pub const DEFAULT_PRIOR: [f64; N_GRADES] = [0.35, 0.15, 0.25, 0.1, 0.15];

fn spec(name: &str, n: usize, bias: f64, offset: f64, sigma: f64) -> DomainSpec {
    DomainSpec {
        name: name.to_string(),
        n_samples: n,
        grade_prior: DEFAULT_PRIOR,
        count_rate_matrix: DEFAULT_RATES,
        count_bias: bias,
        nv_probability: 0.7,
        subhyaloid_probability: 0.3,
        vein_offset: [offset; 3],
        vein_noise_sigma: sigma,
        neural_in_domain_accuracy: 0.8,
        neural_ood_accuracy: 0.6,
        neural_temperature: 1.0,
    }
}

/// Named presets. `vein_hostile` keeps lesion statistics close across
/// domains while vein features drift strongly, so vein-based models
/// transfer poorly.
pub fn shift_profile(profile: ShiftProfile, seed: u64) -> SynthConfig {
    let domains = match profile {
        ShiftProfile::Mild => vec![
            spec("site_a", 1000, 1.0, 0.0, 0.6),
            spec("site_b", 1000, 0.9, 0.2, 0.6),
            spec("site_c", 1000, 1.1, -0.2, 0.7),
            spec("site_d", 1000, 0.85, 0.3, 0.6),
        ],
        ShiftProfile::Severe => vec![
            spec("site_a", 1000, 1.0, 0.0, 0.8),
            spec("site_b", 1000, 0.6, 1.0, 1.0),
            spec("site_c", 1000, 1.5, -1.0, 1.2),
            spec("site_d", 1000, 0.75, 1.5, 0.9),
        ],
        ShiftProfile::VeinHostile => vec![
            spec("site_a", 2000, 1.0, 0.0, 0.3),
            spec("site_b", 2000, 0.95, 2.0, 1.5),
            spec("site_c", 2000, 1.05, -2.0, 2.5),
        ],
    };
    SynthConfig { domains, neural_source_domains: vec!["site_a".into()], seed }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neural_row_argmax_is_prediction() {
        let mut rng = rng_for(3, 0);
        for pred in 0..N_GRADES {
            for correct in [true, false] {
                let p = neural_row(&mut rng, pred, correct, 0.7);
                assert_eq!(p.argmax().index(), pred);
            }
        }
    }

    #[test]
    fn rejects_decreasing_rates() {
        let mut cfg = shift_profile(ShiftProfile::Mild, 0);
        cfg.domains[0].count_rate_matrix[3][0] = 0.1;
        assert!(matches!(cfg.validate().unwrap_err(), KgdgError::InvalidConfig(_)));
    }

    #[test]
    fn rejects_bad_prior() {
        let mut cfg = shift_profile(ShiftProfile::Mild, 0);
        cfg.domains[1].grade_prior = [0.5; 5];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn features_match_detections() {
        let mut cfg = shift_profile(ShiftProfile::Mild, 5);
        cfg.domains.truncate(1);
        cfg.domains[0].n_samples = 50;
        let out = gen_dataset(&cfg).unwrap();
        for e in &out[0].dataset.examples {
            let mut f = aggregate_detections(&out[0].detections[&e.image_id], 0.0);
            f.vein = e.features.vein;
            assert_eq!(f, e.features);
            assert!(e.features.validate().is_ok());
        }
    }

    #[test]
    fn domain_output_independent_of_config_order() {
        let mut cfg = shift_profile(ShiftProfile::Mild, 9);
        for d in cfg.domains.iter_mut() {
            d.n_samples = 30;
        }
        let a = gen_dataset(&cfg).unwrap();
        cfg.domains.reverse();
        let b = gen_dataset(&cfg).unwrap();
        assert_eq!(a[0], b[3]);
    }
}
