//! Level-wise decision tree growth over presorted columns.
//!
//! One pass per depth level walks every feature's presorted index list once
//! and feeds each sample to the accumulator of the node it currently sits
//! in, so a level costs O(n·d) regardless of how many nodes it has.
//! Candidate thresholds are midpoints between consecutive distinct values;
//! features are scanned in a canonical order and a split must strictly beat
//! the best gain found so far, so ties keep the first feature in that order
//! and then the lowest threshold. Ranking features by name makes the grown
//! tree independent of column order.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Column-major copy of the training matrix plus per-feature sort orders.
pub(crate) struct Presorted {
    pub cols: Vec<Vec<f64>>,
    pub order: Vec<Vec<u32>>,
    /// Column indices in scan (and tie-break) order.
    pub scan: Vec<usize>,
}

impl Presorted {
    pub fn new(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, |r| r.len());
        let cols: Vec<Vec<f64>> = (0..d).map(|f| rows.iter().map(|r| r[f]).collect()).collect();
        let order = cols
            .iter()
            .map(|c| {
                let mut idx: Vec<u32> = (0..c.len() as u32).collect();
                idx.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        let scan = (0..d).collect();
        Presorted { cols, order, scan }
    }

    /// Scans features in lexicographic order of their names.
    pub fn ranked_by(mut self, names: &[String]) -> Self {
        self.scan.sort_by(|&a, &b| names[a].cmp(&names[b]).then(a.cmp(&b)));
        self
    }

    pub fn n_features(&self) -> usize {
        self.cols.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node<L> {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: L },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<L> {
    pub nodes: Vec<Node<L>>,
}

impl<L> Tree<L> {
    pub fn leaf_for(&self, row: &[f64]) -> &L {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split { feature, threshold, left, right } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { value } => return value,
            }
        }
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }

    pub fn depth(&self) -> usize {
        fn walk<L>(t: &Tree<L>, at: usize) -> usize {
            match &t.nodes[at] {
                Node::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(self, 0)
    }
}

/// Split objective: how samples accumulate and how a split is scored.
pub(crate) trait Criterion: Sync {
    type Acc: Clone;
    type Leaf;
    fn empty(&self) -> Self::Acc;
    fn add(&self, acc: &mut Self::Acc, sample: usize);
    fn minus(&self, total: &Self::Acc, part: &Self::Acc) -> Self::Acc;
    fn gain(&self, left: &Self::Acc, right: &Self::Acc, parent: &Self::Acc) -> f64;
    fn leaf(&self, acc: &Self::Acc) -> Self::Leaf;
}

pub(crate) struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Number of features examined per node; `None` means all.
    pub max_features: Option<usize>,
}

const MIN_GAIN: f64 = 1e-12;

struct Active<A> {
    node: usize,
    depth: usize,
    count: usize,
    total: A,
    features: Option<Vec<bool>>,
}

struct ScanState<A> {
    left: A,
    count: usize,
    last: Option<f64>,
    best: Option<(f64, usize, f64)>,
}

/// Grows one tree. `in_sample[i]` marks rows participating in this tree
/// (weights, if any, live inside the criterion).
pub(crate) fn grow<C: Criterion, R: Rng>(
    data: &Presorted,
    in_sample: &[bool],
    crit: &C,
    params: &TreeParams,
    rng: &mut R,
) -> Tree<C::Leaf> {
    let n = in_sample.len();
    let d = data.n_features();
    let mut assign: Vec<Option<usize>> = vec![None; n];
    let mut total = crit.empty();
    let mut count = 0;
    for i in 0..n {
        if in_sample[i] {
            assign[i] = Some(0);
            crit.add(&mut total, i);
            count += 1;
        }
    }
    let mut nodes: Vec<Option<Node<C::Leaf>>> = vec![None];
    let pick = |rng: &mut R| {
        params.max_features.filter(|&m| m < d).map(|m| {
            let mut mask = vec![false; d];
            for k in sample(rng, d, m.max(1)) {
                mask[data.scan[k]] = true;
            }
            mask
        })
    };
    let mut active = vec![Active { node: 0, depth: 0, count, total, features: pick(rng) }];

    while !active.is_empty() {
        let splittable: Vec<bool> =
            active.iter().map(|a| a.depth < params.max_depth && a.count >= 2 * params.min_leaf.max(1)).collect();
        let mut scan: Vec<ScanState<C::Acc>> =
            active.iter().map(|_| ScanState { left: crit.empty(), count: 0, last: None, best: None }).collect();

        if splittable.iter().any(|&s| s) {
            for &f in &data.scan {
                for s in scan.iter_mut() {
                    s.left = crit.empty();
                    s.count = 0;
                    s.last = None;
                }
                let col = &data.cols[f];
                for &i in &data.order[f] {
                    let i = i as usize;
                    let Some(a) = assign[i] else { continue };
                    if !splittable[a] {
                        continue;
                    }
                    if let Some(mask) = &active[a].features {
                        if !mask[f] {
                            continue;
                        }
                    }
                    let v = col[i];
                    let st = &mut scan[a];
                    if let Some(lv) = st.last {
                        let right_count = active[a].count - st.count;
                        if v > lv && st.count >= params.min_leaf && right_count >= params.min_leaf {
                            let right = crit.minus(&active[a].total, &st.left);
                            let g = crit.gain(&st.left, &right, &active[a].total);
                            if g > MIN_GAIN && st.best.is_none_or(|(bg, _, _)| g > bg) {
                                let mut thr = lv + (v - lv) / 2.0;
                                if thr >= v {
                                    thr = lv;
                                }
                                st.best = Some((g, f, thr));
                            }
                        }
                    }
                    crit.add(&mut st.left, i);
                    st.count += 1;
                    st.last = Some(v);
                }
            }
        }

        let mut next = Vec::new();
        let mut child_slot: Vec<Option<(usize, usize)>> = vec![None; active.len()];
        for (a, st) in scan.iter().enumerate() {
            match st.best {
                Some((_, feature, threshold)) => {
                    let left = nodes.len();
                    let right = left + 1;
                    nodes.push(None);
                    nodes.push(None);
                    nodes[active[a].node] = Some(Node::Split { feature, threshold, left, right });
                    let l_slot = next.len();
                    for (node, _) in [(left, 0), (right, 1)] {
                        next.push(Active {
                            node,
                            depth: active[a].depth + 1,
                            count: 0,
                            total: crit.empty(),
                            features: None,
                        });
                    }
                    child_slot[a] = Some((l_slot, l_slot + 1));
                }
                None => {
                    nodes[active[a].node] = Some(Node::Leaf { value: crit.leaf(&active[a].total) });
                }
            }
        }
        for i in 0..n {
            let Some(a) = assign[i] else { continue };
            assign[i] = match (&nodes[active[a].node], child_slot[a]) {
                (Some(Node::Split { feature, threshold, .. }), Some((l, r))) => {
                    let slot = if data.cols[*feature][i] <= *threshold { l } else { r };
                    crit.add(&mut next[slot].total, i);
                    next[slot].count += 1;
                    Some(slot)
                }
                _ => None,
            };
        }
        for a in next.iter_mut() {
            a.features = pick(rng);
        }
        active = next;
    }

    Tree { nodes: nodes.into_iter().map(|n| n.expect("every node resolved")).collect() }
}

/// Second-order boosting objective for one class column.
pub(crate) struct NewtonCriterion<'a> {
    pub grad: &'a [f64],
    pub hess: &'a [f64],
    pub l2: f64,
}

impl Criterion for NewtonCriterion<'_> {
    type Acc = (f64, f64);
    type Leaf = f64;

    fn empty(&self) -> (f64, f64) {
        (0.0, 0.0)
    }

    fn add(&self, acc: &mut (f64, f64), i: usize) {
        acc.0 += self.grad[i];
        acc.1 += self.hess[i];
    }

    fn minus(&self, total: &(f64, f64), part: &(f64, f64)) -> (f64, f64) {
        (total.0 - part.0, total.1 - part.1)
    }

    fn gain(&self, l: &(f64, f64), r: &(f64, f64), p: &(f64, f64)) -> f64 {
        let score = |(g, h): &(f64, f64)| {
            let den = h + self.l2;
            if den <= 0.0 {
                0.0
            } else {
                g * g / den
            }
        };
        score(l) + score(r) - score(p)
    }

    fn leaf(&self, (g, h): &(f64, f64)) -> f64 {
        let den = h + self.l2;
        if den <= 0.0 {
            0.0
        } else {
            -g / den
        }
    }
}

/// Weighted Gini impurity for classification trees.
pub(crate) struct GiniCriterion<'a> {
    pub labels: &'a [usize],
    pub weights: &'a [f64],
}

pub(crate) const N_CLASSES: usize = crate::model::N_GRADES;

fn gini_mass(acc: &[f64; N_CLASSES]) -> f64 {
    let total: f64 = acc.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    // total · gini = total − Σ c² / total
    total - acc.iter().map(|c| c * c).sum::<f64>() / total
}

impl Criterion for GiniCriterion<'_> {
    type Acc = [f64; N_CLASSES];
    type Leaf = [f64; N_CLASSES];

    fn empty(&self) -> [f64; N_CLASSES] {
        [0.0; N_CLASSES]
    }

    fn add(&self, acc: &mut [f64; N_CLASSES], i: usize) {
        acc[self.labels[i]] += self.weights[i];
    }

    fn minus(&self, total: &[f64; N_CLASSES], part: &[f64; N_CLASSES]) -> [f64; N_CLASSES] {
        let mut out = *total;
        for (o, p) in out.iter_mut().zip(part) {
            *o -= p;
        }
        out
    }

    fn gain(&self, l: &[f64; N_CLASSES], r: &[f64; N_CLASSES], p: &[f64; N_CLASSES]) -> f64 {
        gini_mass(p) - gini_mass(l) - gini_mass(r)
    }

    fn leaf(&self, acc: &[f64; N_CLASSES]) -> [f64; N_CLASSES] {
        let total: f64 = acc.iter().sum();
        if total <= 0.0 {
            return [1.0 / N_CLASSES as f64; N_CLASSES];
        }
        acc.map(|c| c / total)
    }
}
