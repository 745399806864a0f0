//! Domain KL diagnostics and the label-free alignment transform.

use crate::error::{KgdgError, Result};
use crate::learn::Dataset;
use crate::metrics::{domain_kl, DomainStats};
use crate::model::DomainId;

/// Sum of `domain_kl` over all ordered pairs of distinct domains.
pub fn pairwise_kl(stats: &[DomainStats]) -> Result<f64> {
    let mut total = 0.0;
    for (i, p) in stats.iter().enumerate() {
        for (j, q) in stats.iter().enumerate() {
            if i != j {
                total += domain_kl(p, q)?;
            }
        }
    }
    Ok(total)
}

/// Standardizes each dataset with its own column statistics, then maps it
/// onto the reference mean and variance. Grades and ids are untouched.
pub fn align_to_stats(data: &[Dataset], reference: &DomainStats) -> Result<Vec<Dataset>> {
    data.iter()
        .map(|d| {
            if d.n_features() != reference.arity() {
                return Err(KgdgError::SchemaMismatch("alignment reference arity differs".into()));
            }
            let own = DomainStats::from_rows(&d.rows)?;
            let rows = d
                .rows
                .iter()
                .map(|r| {
                    r.iter()
                        .enumerate()
                        .map(|(k, x)| {
                            let z = (x - own.mean[k]) / own.variance[k].sqrt();
                            reference.mean[k] + reference.variance[k].sqrt() * z
                        })
                        .collect()
                })
                .collect();
            Ok(Dataset { rows, ..d.clone() })
        })
        .collect()
}

/// Aligns every domain onto `reference` and reports the summed pairwise KL
/// before and after.
pub fn align_domains(datasets: &[(DomainId, Dataset)], reference: &DomainId) -> Result<(Vec<Dataset>, f64, f64)> {
    let ref_data =
        datasets.iter().find(|(id, _)| id == reference).map(|(_, d)| d).ok_or_else(|| {
            KgdgError::InvalidConfig(format!("alignment reference `{reference}` not among the domains"))
        })?;
    let ref_stats = DomainStats::from_rows(&ref_data.rows)?;
    let data: Vec<Dataset> = datasets.iter().map(|(_, d)| d.clone()).collect();
    let before = pairwise_kl(&data.iter().map(|d| DomainStats::from_rows(&d.rows)).collect::<Result<Vec<_>>>()?)?;
    let aligned = align_to_stats(&data, &ref_stats)?;
    let after = pairwise_kl(&aligned.iter().map(|d| DomainStats::from_rows(&d.rows)).collect::<Result<Vec<_>>>()?)?;
    Ok((aligned, before, after))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DRGrade;

    fn ds(rows: Vec<Vec<f64>>) -> Dataset {
        let n = rows.len();
        let d = rows[0].len();
        Dataset::new(
            (0..d).map(|i| format!("f{i}")).collect(),
            rows,
            (0..n).map(|i| DRGrade::new((i % 5) as i64).unwrap()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_domain_is_zero() {
        let a = ds(vec![vec![1.0, 2.0], vec![3.0, 5.0], vec![0.0, 1.0]]);
        let id = DomainId::new("a").unwrap();
        let (_, before, after) = align_domains(&[(id.clone(), a)], &id).unwrap();
        assert_eq!((before, after), (0.0, 0.0));
    }

    #[test]
    fn mean_shift_is_cancelled() {
        let a = ds(vec![vec![1.0, 2.0], vec![3.0, 5.0], vec![0.0, 1.0], vec![4.0, 4.0]]);
        let mut b = a.clone();
        for r in b.rows.iter_mut() {
            r[0] += 7.0;
            r[1] -= 2.5;
        }
        let ia = DomainId::new("a").unwrap();
        let ib = DomainId::new("b").unwrap();
        let (aligned, before, after) = align_domains(&[(ia.clone(), a.clone()), (ib, b)], &ia).unwrap();
        assert!(before > 1.0);
        assert!(after < 1e-9, "{after}");
        assert_eq!(aligned[1].grades, a.grades);
    }
}
