//! Evaluation metrics and the domain-shift diagnostic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{KgdgError, Result};
use crate::model::{BoundingBox, DRGrade, Detection, LesionType, ProbabilityVector, N_GRADES};

pub const VARIANCE_FLOOR: f64 = 1e-6;

fn check_pair(y_true: &[DRGrade], n_pred: usize) -> Result<()> {
    if y_true.is_empty() {
        return Err(KgdgError::EmptyEvaluation);
    }
    if y_true.len() != n_pred {
        return Err(KgdgError::WrongArity { expected: y_true.len(), got: n_pred });
    }
    Ok(())
}

pub fn accuracy(y_true: &[DRGrade], y_pred: &[DRGrade]) -> Result<f64> {
    check_pair(y_true, y_pred.len())?;
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y_true.len() as f64)
}

/// `confusion[t][p]` counts examples of true grade `t` predicted as `p`.
pub fn confusion_matrix(y_true: &[DRGrade], y_pred: &[DRGrade]) -> Result<[[usize; N_GRADES]; N_GRADES]> {
    check_pair(y_true, y_pred.len())?;
    let mut m = [[0usize; N_GRADES]; N_GRADES];
    for (t, p) in y_true.iter().zip(y_pred) {
        m[t.index()][p.index()] += 1;
    }
    Ok(m)
}

/// Mean F1 over the grades present in `y_true`. Undefined precision or
/// recall counts as zero.
pub fn macro_f1(y_true: &[DRGrade], y_pred: &[DRGrade]) -> Result<f64> {
    let m = confusion_matrix(y_true, y_pred)?;
    let mut total = 0.0;
    let mut n = 0;
    for g in 0..N_GRADES {
        let support: usize = m[g].iter().sum();
        if support == 0 {
            continue;
        }
        n += 1;
        let tp = m[g][g] as f64;
        let predicted: usize = (0..N_GRADES).map(|t| m[t][g]).sum();
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = tp / support as f64;
        if precision + recall > 0.0 {
            total += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(total / n as f64)
}

/// Binary AUC via the Mann-Whitney rank statistic with averaged tie ranks.
/// `None` when either class is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based: positions i..=j share the average rank
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if positive[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// One-vs-rest AUC macro-averaged over grades that have both positives and
/// negatives in `y_true`.
pub fn auc_ovr_macro(y_true: &[DRGrade], probs: &[ProbabilityVector]) -> Result<f64> {
    check_pair(y_true, probs.len())?;
    let mut total = 0.0;
    let mut n = 0;
    for g in DRGrade::all() {
        let scores: Vec<f64> = probs.iter().map(|p| p.get(g)).collect();
        let pos: Vec<bool> = y_true.iter().map(|&t| t == g).collect();
        if let Some(auc) = binary_auc(&scores, &pos) {
            total += auc;
            n += 1;
        }
    }
    if n == 0 {
        return Err(KgdgError::NoQualifyingClass);
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// `None` when no grade qualifies for one-vs-rest AUC.
    pub auc_ovr_macro: Option<f64>,
    pub confusion: [[usize; N_GRADES]; N_GRADES],
    pub support: [usize; N_GRADES],
}

impl MetricReport {
    pub fn compute(y_true: &[DRGrade], y_pred: &[DRGrade], probs: Option<&[ProbabilityVector]>) -> Result<Self> {
        let confusion = confusion_matrix(y_true, y_pred)?;
        let mut support = [0; N_GRADES];
        for (s, row) in support.iter_mut().zip(&confusion) {
            *s = row.iter().sum();
        }
        let auc = match probs {
            Some(p) => match auc_ovr_macro(y_true, p) {
                Ok(a) => Some(a),
                Err(KgdgError::NoQualifyingClass) => None,
                Err(e) => return Err(e),
            },
            None => None,
        };
        Ok(MetricReport {
            accuracy: accuracy(y_true, y_pred)?,
            macro_f1: macro_f1(y_true, y_pred)?,
            auc_ovr_macro: auc,
            confusion,
            support,
        })
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = ((a.x() + a.w()).min(b.x() + b.w()) - a.x().max(b.x())).max(0.0);
    let iy = ((a.y() + a.h()).min(b.y() + b.h()) - a.y().max(b.y())).max(0.0);
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LesionMatchStats {
    pub predicted: usize,
    pub truth: usize,
    pub matched: usize,
    pub mean_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMatchReport {
    pub per_lesion: BTreeMap<LesionType, LesionMatchStats>,
    pub matched: usize,
    /// Mean IoU over matched pairs; 0 when nothing matched.
    pub mean_iou: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Greedy per-lesion-type matching. Predictions are visited in descending
/// score; each takes the unmatched truth box of highest IoU, provided it
/// reaches `iou_threshold`.
pub fn detection_set_iou(pred: &[Detection], truth: &[Detection], iou_threshold: f64) -> DetectionMatchReport {
    let mut per_lesion = BTreeMap::new();
    let mut matched_total = 0;
    let mut iou_total = 0.0;
    for lesion in LesionType::ALL {
        let mut preds: Vec<&Detection> = pred.iter().filter(|d| d.lesion == lesion).collect();
        let truths: Vec<&Detection> = truth.iter().filter(|d| d.lesion == lesion).collect();
        if preds.is_empty() && truths.is_empty() {
            continue;
        }
        preds.sort_by(|a, b| b.score().total_cmp(&a.score()));
        let mut taken = vec![false; truths.len()];
        let mut stats = LesionMatchStats { predicted: preds.len(), truth: truths.len(), ..Default::default() };
        let mut iou_sum = 0.0;
        for p in preds {
            let mut best: Option<(usize, f64)> = None;
            for (j, t) in truths.iter().enumerate() {
                if taken[j] {
                    continue;
                }
                let v = iou(&p.bbox, &t.bbox);
                if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            if let Some((j, v)) = best {
                taken[j] = true;
                stats.matched += 1;
                iou_sum += v;
            }
        }
        if stats.matched > 0 {
            stats.mean_iou = iou_sum / stats.matched as f64;
        }
        matched_total += stats.matched;
        iou_total += iou_sum;
        per_lesion.insert(lesion, stats);
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    DetectionMatchReport {
        per_lesion,
        matched: matched_total,
        mean_iou: if matched_total == 0 { 0.0 } else { iou_total / matched_total as f64 },
        precision: ratio(matched_total, pred.len()),
        recall: ratio(matched_total, truth.len()),
    }
}

/// Per-feature Gaussian summary of one domain's symbolic features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub n: usize,
}

impl DomainStats {
    /// Mean and floored population variance of each column.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(KgdgError::EmptyEvaluation)?;
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            if r.len() != d {
                return Err(KgdgError::SchemaMismatch(format!("row arity {} != {d}", r.len())));
            }
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut variance = vec![0.0; d];
        for r in rows {
            for ((v, x), m) in variance.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        variance.iter_mut().for_each(|v| *v = (*v / n).max(VARIANCE_FLOOR));
        Ok(DomainStats { mean, variance, n: rows.len() })
    }

    pub fn arity(&self) -> usize {
        self.mean.len()
    }

    /// Keeps only the listed feature columns.
    pub fn restrict(&self, columns: &[usize]) -> DomainStats {
        DomainStats {
            mean: columns.iter().map(|&c| self.mean[c]).collect(),
            variance: columns.iter().map(|&c| self.variance[c]).collect(),
            n: self.n,
        }
    }
}

/// KL(p ‖ q) between diagonal Gaussian summaries.
pub fn domain_kl(p: &DomainStats, q: &DomainStats) -> Result<f64> {
    if p.arity() != q.arity() {
        return Err(KgdgError::SchemaMismatch(format!("domain stats arity {} vs {}", p.arity(), q.arity())));
    }
    let mut kl = 0.0;
    for i in 0..p.arity() {
        let (vp, vq) = (p.variance[i], q.variance[i]);
        let dm = q.mean[i] - p.mean[i];
        kl += 0.5 * (vp / vq + dm * dm / vq - 1.0 + (vq / vp).ln());
    }
    Ok(kl.max(0.0))
}

/// Mean and population standard deviation of per-seed values.
pub fn seeded_summary(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(KgdgError::EmptyEvaluation);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// `mean±std` of fractional values, printed in percent to one decimal.
pub fn format_percent(mean: f64, std: f64) -> String {
    format!("{:.1}±{:.1}", mean * 100.0, std * 100.0)
}
