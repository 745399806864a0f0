//! Published result tables, stored verbatim, and a cell-by-cell diff
//! against them. Informational only: the real datasets are not available,
//! so a diff never fails a run.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{KgdgError, Result};
use crate::metrics::format_percent;

use super::report::ExperimentReport;

pub const NOT_COMPARABLE: &str = "not comparable: synthetic data";

struct Fixture {
    id: &'static str,
    caption: &'static str,
    /// Training domain, when the table is a single-source one.
    source: Option<&'static str>,
    key_columns: usize,
    text: &'static str,
}

const FIXTURES: &[Fixture] = &[
    Fixture {
        id: "sdg_aptos",
        caption: "SDG trained on APTOS - cross-domain accuracy (%)",
        source: Some("aptos"),
        key_columns: 1,
        text: "\
Method|Eyepacs|Messidor|Messidor2|Average
DRGen|67.5±1.8|46.7±0.1|61.0±0.1|58.4±0.57
ERM-ViT|67.8±1.4|45.5±0.2|58.8±0.4|57.3±0.76
SD-ViT|72.0±0.8|45.4±0.1|58.5±0.2|58.6±0.22
SPSD-ViT|71.4±0.8|45.6±0.1|58.8±0.2|58.6±0.42
VIT (DL)|66.6±0.4|46.4±0.3|48.9±0.2|53.9±0.5
Knowledge (KL)|66.4±0.8|49.6±0.2|53.9±0.7|56.6±0.3
Non Weighted (DL + KL)|72.8±0.5|50.6±0.4|54.3±0.4|59.9±0.2
Weighted (DL + KL)|67.4±0.3|49.6±0.3|53.9±0.6|57.0±0.2",
    },
    Fixture {
        id: "sdg_messidor",
        caption: "SDG trained on MESSIDOR - cross-domain accuracy (%)",
        source: Some("messidor"),
        key_columns: 1,
        text: "\
Method|Aptos|Eyepacs|Messidor2|Average
DRGen|41.7±4.3|43.1±7.9|44.8±0.9|43.2±0.65
ERM-ViT|45.3±1.3|52.4±3.2|58.2±3.2|51.9±0.71
SD-ViT|44.3±0.9|53.2±1.6|57.8±2.4|51.7±0.35
SPSD-ViT|48.3±1.1|57.4±2.1|62.2±1.6|55.9±0.88
VIT (DL)|49.8±0.4|62.1±0.3|59.1±0.3|57.0±0.5
Knowledge (KL)|74.0±0.5|63.6±0.4|63.8±0.3|67.1±0.2
Non Weighted (DL + KL)|52.7±0.7|63.4±0.4|61.4±0.5|59.2±0.4
Weighted (DL + KL)|74.1±0.5|63.3±0.2|63.8±0.6|67.1±0.7",
    },
    Fixture {
        id: "sdg_messidor2",
        caption: "SDG trained on MESSIDOR2 - cross-domain accuracy (%)",
        source: Some("messidor2"),
        key_columns: 1,
        text: "\
Method|Aptos|Eyepacs|Messidor|Average
DRGen|40.9±3.9|69.3±1.0|61.3±0.8|57.7±0.67
ERM-ViT|47.9±2.1|67.4±0.9|59.6±3.9|58.3±0.33
SD-ViT|51.8±0.9|68.7±0.6|62.0±1.7|60.8±0.58
SPSD-ViT|52.8±2.0|72.5±0.3|61.0±0.8|62.1±0.85
VIT (DL)|29.2±0.4|44.7±0.5|49.4±0.7|41.1±0.7
Knowledge (KL)|69.1±0.3|71.1±0.4|55.3±0.9|65.2±0.5
Non Weighted (DL + KL)|63.6±0.6|71.1±0.8|56.4±0.2|63.7±0.6
Weighted (DL + KL)|69.5±0.4|71.0±0.2|55.9±0.6|65.5±0.3",
    },
    Fixture {
        id: "sdg_eyepacs",
        caption: "SDG trained on EYEPACS - cross-domain accuracy (%)",
        source: Some("eyepacs"),
        key_columns: 1,
        text: "\
Method|Aptos|Messidor|Messidor2|Average
DRGen|61.3±1.9|54.6±1.5|65.4±0.1|60.4±0.25
ERM-ViT|69.1±1.4|50.4±0.3|62.8±0.2|60.8±0.58
SD-ViT|69.3±0.3|50.0±0.5|62.9±0.2|60.7±0.41
SPSD-ViT|75.1±0.5|50.5±0.8|62.2±0.4|62.5±0.62
VIT (DL)|49.7±0.9|52.9±0.2|49.1±0.9|50.6±0.4
Knowledge (KL)|60.2±0.2|53.7±0.6|66.5±0.4|60.13±0.5
Non Weighted (DL + KL)|63.9±0.2|53.8±0.3|67.2±0.6|61.7±0.4
Weighted (DL + KL)|60.2±0.3|48.7±0.2|66.4±0.7|58.4±0.9",
    },
    Fixture {
        id: "mdg",
        caption: "MDG leave-one-domain-out accuracy (%) by method and backbone",
        source: None,
        key_columns: 2,
        text: "\
Method|Backbone|Aptos|Eyepacs|Messidor|Messidor 2|Avg.
ERM|ResNet50 (23.5M)|47.6±1.7|71.3±0.3|63.0±0.4|69.0±1.5|62.7
IRM|ResNet50|52.1±1.7|73.2±0.3|51.3±3.8|57.2±1.7|58.4
ARM|ResNet50|45.6±1.5|71.7±0.5|62.4±1.0|60.0±3.4|59.9
Fish|ResNet50|44.6±2.2|72.7±0.7|62.1±0.7|66.4±1.7|61.4
Fishr|ResNet50|47.0±1.8|71.9±0.6|63.3±0.5|66.4±0.2|62.2
GroupDRO|ResNet50|44.9±3.8|72.0±0.3|63.1±0.9|67.8±1.9|62.0
MLDG|ResNet50|44.1±1.6|72.7±0.6|62.7±0.6|64.4±0.4|61.0
Mixup|ResNet50|47.3±1.7|72.0±0.3|59.8±2.8|65.8±1.4|61.2
Coral|ResNet50|49.8±1.0|71.7±0.9|58.6±2.8|68.2±0.6|62.1
MMD|ResNet50|49.3±1.0|69.3±1.1|64.1±4.8|69.6±0.6|63.1
DANN|ResNet50|54.4±0.8|72.9±1.4|57.0±1.1|58.6±1.7|60.7
CDANN|ResNet50|48.1±0.7|73.1±0.3|55.8±1.8|61.2±1.3|59.5
ERM-ViT|DeiT-Small (22M)|48.5±0.9|70.7±1.7|62.7±1.6|69.5±2.5|62.9
ERM-ViT|T2T-14 (21.5M)|54.0±3.0|73.2±0.4|60.8±1.7|72.0±0.2|62.5
ERM-ViT|CvT-13 (20M)|51.3±1.7|73.3±0.2|64.8±0.6|72.4±0.6|65.5
SD-ViT|DeiT-Small (22M)|48.2±2.5|69.6±1.5|63.9±1.3|65.0±1.7|61.8
SD-ViT|T2T-14 (21.5M)|46.5±0.8|71.1±0.7|63.9±0.9|71.4±0.2|63.2
SPSD-ViT|DeiT-Small (22M)|51.6±1.1|73.3±0.4|64.0±1.4|72.9±0.1|65.5
SPSD-ViT|T2T-14 (21.5M)|50.0±2.8|73.6±0.3|65.2±0.3|73.3±0.2|65.5
SPSD-ViT|CvT-13 (20M)|51.7±1.2|73.3±0.2|64.8±0.6|72.4±0.6|65.5
ViT (Ours)|Vit (22M)|50.1±1.7|69.4±0.3|58.13±3.8|67.1±1.7|61.18
ViT +KL (Ours)|Vit (21.5M)|53.1±1.7|72.2±0.3|51.3±3.8|56.2±1.7|58.4
KL (Ours)|Knowledge (20M)|60.70±1.2|68.45±0.2|58.67±0.6|67.66±0.6|63.67",
    },
    Fixture {
        id: "ablation_fusion_aptos",
        caption: "Neural-only vs symbolic-only vs fused, trained on APTOS (accuracy %)",
        source: Some("aptos"),
        key_columns: 1,
        text: "\
Setting|Eyepacs|Messidor|Messidor2
Neural Only (ViT)|66.6|46.4|48.9
Symbolic Only (KL)|66.4|49.6|53.9
Neural + Symbolic (Non-Weighted)|72.8|50.6|54.3
Neural + Symbolic (Weighted)|67.4|49.6|53.9",
    },
    Fixture {
        id: "ablation_feature_sets",
        caption: "Symbolic learners on lesions only vs lesions + vein features (APTOS)",
        source: Some("aptos"),
        key_columns: 2,
        text: "\
Model|Feature Set|Accuracy|F1-Score|Precision|Recall|AUC
Logistic Regression|Lesions Only|0.7732|0.7322|0.59|0.49|0.74
Random Forest|Lesions Only|0.8169|0.8115|0.82|0.80|0.81
SVM|Lesions Only|0.7814|0.7432|0.59|0.50|0.76
Gradient Boosting|Lesions Only|0.8465|0.8412|0.82|0.76|0.84
K-Nearest Neighbors|Lesions Only|0.7814|0.7896|0.63|0.56|0.77
Logistic Regression|Lesions + Vein|0.6424|0.6019|0.25|0.33|0.58
Random Forest|Lesions + Vein|0.7384|0.7038|0.55|0.47|0.70
SVM|Lesions + Vein|0.6556|0.6083|0.26|0.34|0.58
Gradient Boosting|Lesions + Vein|0.7252|0.7389|0.51|0.44|0.69
K-Nearest Neighbors|Lesions + Vein|0.6987|0.6369|0.43|0.44|0.66",
    },
    Fixture {
        id: "in_domain_aptos",
        caption: "In-domain APTOS test accuracy (%), 60/20/20 split",
        source: Some("aptos"),
        key_columns: 1,
        text: "\
Model|Accuracy
Gradient Boosting (KL)|84.65
ViT (DL)|78.40",
    },
];

/// A table of verbatim cell strings. The first `key_columns` cells of each
/// row identify it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTable {
    pub id: String,
    pub caption: String,
    pub source: Option<String>,
    pub key_columns: usize,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl ReferenceTable {
    fn row_key(&self, row: &[String]) -> String {
        row[..self.key_columns].join(" / ")
    }

    /// Cell under `column` in the row keyed `key`, matched case-insensitively.
    pub fn lookup(&self, key: &str, column: &str) -> Option<&str> {
        let col = self.header.iter().position(|h| h.eq_ignore_ascii_case(column))?;
        self.rows.iter().find(|r| self.row_key(r).eq_ignore_ascii_case(key)).map(|r| r[col].as_str())
    }
}

pub fn reference_ids() -> Vec<&'static str> {
    FIXTURES.iter().map(|f| f.id).collect()
}

pub fn reference_table(id: &str) -> Result<ReferenceTable> {
    let f = FIXTURES.iter().find(|f| f.id == id).ok_or_else(|| KgdgError::UnknownReference(id.to_string()))?;
    let mut lines = f.text.lines();
    let split = |l: &str| l.split('|').map(str::to_string).collect::<Vec<_>>();
    let header = split(lines.next().expect("fixture header"));
    let rows = lines.map(split).collect();
    Ok(ReferenceTable {
        id: f.id.to_string(),
        caption: f.caption.to_string(),
        source: f.source.map(str::to_string),
        key_columns: f.key_columns,
        header,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffEntry {
    pub row: String,
    pub column: String,
    pub reference: String,
    pub observed: Option<String>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffSummary {
    pub reference_id: String,
    pub cells_compared: usize,
    pub diffs: Vec<DiffEntry>,
}

impl DiffSummary {
    pub fn render(&self) -> String {
        let mut out = format!(
            "reference {}: {} cells compared, {} differ\n",
            self.reference_id,
            self.cells_compared,
            self.diffs.len()
        );
        for d in &self.diffs {
            let _ = writeln!(
                out,
                "{} | {}: reference {} observed {} ({})",
                d.row,
                d.column,
                d.reference,
                d.observed.as_deref().unwrap_or("-"),
                d.note
            );
        }
        out
    }
}

/// Compares every reference cell with the observed table's cell at the
/// same row key and column name.
pub fn compare_tables(observed: &ReferenceTable, reference: &ReferenceTable, synthetic: bool) -> DiffSummary {
    let mut diffs = vec![];
    let mut compared = 0;
    for row in &reference.rows {
        let key = reference.row_key(row);
        for (col, expected) in reference.header.iter().zip(row).skip(reference.key_columns) {
            compared += 1;
            let got = observed.lookup(&key, col);
            if got == Some(expected.as_str()) && !synthetic {
                continue;
            }
            let note = if synthetic {
                NOT_COMPARABLE
            } else if got.is_none() {
                "missing"
            } else {
                "differs"
            };
            diffs.push(DiffEntry {
                row: key.clone(),
                column: col.clone(),
                reference: expected.clone(),
                observed: got.map(str::to_string),
                note: note.to_string(),
            });
        }
    }
    DiffSummary { reference_id: reference.id.clone(), cells_compared: compared, diffs }
}

/// The accuracy table of one report block, in the fixture shape.
pub fn accuracy_table(report: &ExperimentReport, block: usize) -> Option<ReferenceTable> {
    let b = report.blocks.get(block)?;
    let mut header = vec!["Method".to_string()];
    header.extend(b.columns.iter().cloned());
    let rows = b
        .rows
        .iter()
        .map(|r| {
            let mut cells = vec![r.method.clone()];
            cells.extend(r.cells.iter().map(|c| format_percent(c.accuracy.mean, c.accuracy.std)));
            cells
        })
        .collect();
    Some(ReferenceTable {
        id: b.title.clone(),
        caption: b.title.clone(),
        source: (b.sources.len() == 1).then(|| b.sources[0].clone()),
        key_columns: 1,
        header,
        rows,
    })
}

/// Diffs a report against a fixture. Single-source fixtures pick the block
/// trained on the same domain when there is one, otherwise the first block.
pub fn compare_to_reference(report: &ExperimentReport, reference_id: &str) -> Result<DiffSummary> {
    let reference = reference_table(reference_id)?;
    let idx = reference
        .source
        .as_ref()
        .and_then(|s| report.blocks.iter().position(|b| b.sources.len() == 1 && b.sources[0].eq_ignore_ascii_case(s)))
        .unwrap_or(0);
    let observed = accuracy_table(report, idx).unwrap_or(ReferenceTable {
        id: String::new(),
        caption: String::new(),
        source: None,
        key_columns: 1,
        header: vec![],
        rows: vec![],
    });
    Ok(compare_tables(&observed, &reference, report.synthetic))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_fixture_is_rectangular() {
        for id in reference_ids() {
            let t = reference_table(id).unwrap();
            assert!(t.rows.iter().all(|r| r.len() == t.header.len()), "{id}");
        }
    }

    #[test]
    fn self_comparison_has_no_diffs() {
        for id in reference_ids() {
            let t = reference_table(id).unwrap();
            let d = compare_tables(&t, &t, false);
            assert!(d.diffs.is_empty(), "{id}");
            assert!(d.cells_compared > 0);
        }
    }

    #[test]
    fn unknown_id() {
        assert!(matches!(reference_table("nope"), Err(KgdgError::UnknownReference(_))));
    }
}
