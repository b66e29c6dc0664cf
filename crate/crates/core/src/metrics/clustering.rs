//! Clustering accuracy, semantic accuracy and best-granularity selection.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{assignment::max_weight_assignment, clamped_cosine, Embedder, MetricError};
use crate::types::{is_sentinel, name_key, Granularity, Substructure};

/// Co-occurrence counts of predicted clusters (rows) and ground-truth labels
/// (columns) over the images both sides cover.
///
/// Images assigned to the sentinel are not placed in any row; they are
/// counted in `unassigned` so that `sum(counts) + unassigned == images`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub unassigned: u64,
    pub images: u64,
}

impl ConfusionTable {
    pub fn build(pred: &Substructure, gt: &BTreeMap<String, String>) -> Result<Self, MetricError> {
        let mut row_ix: HashMap<String, usize> = HashMap::new();
        let mut col_ix: HashMap<String, usize> = HashMap::new();
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        let mut cells: Vec<(usize, usize)> = Vec::new();
        let mut unassigned = 0;
        let mut images = 0;
        for (image, label) in gt {
            let Some(name) = pred.assignments.get(image) else { continue };
            images += 1;
            let c = *col_ix.entry(name_key(label)).or_insert_with(|| {
                cols.push(label.clone());
                cols.len() - 1
            });
            if is_sentinel(name) {
                unassigned += 1;
                continue;
            }
            let r = *row_ix.entry(name_key(name)).or_insert_with(|| {
                rows.push(name.clone());
                rows.len() - 1
            });
            cells.push((r, c));
        }
        if images == 0 {
            return Err(MetricError::NoOverlap);
        }
        let mut counts = vec![vec![0u64; cols.len()]; rows.len()];
        for (r, c) in cells {
            counts[r][c] += 1;
        }
        Ok(Self { rows, cols, counts, unassigned, images })
    }

    /// Images on the best one-to-one cluster alignment.
    pub fn matched(&self) -> u64 {
        max_weight_assignment(&self.counts).0
    }
}

/// Fraction of images on the best one-to-one alignment of predicted clusters
/// with ground-truth labels; sentinel images always count as wrong.
pub fn clustering_accuracy(pred: &Substructure, gt: &BTreeMap<String, String>) -> Result<f64, MetricError> {
    let table = ConfusionTable::build(pred, gt)?;
    Ok(table.matched() as f64 / table.images as f64)
}

/// Mean over images of the clamped cosine between predicted name and label.
pub fn semantic_accuracy(
    pred: &Substructure,
    gt: &BTreeMap<String, String>,
    embedder: &dyn Embedder,
) -> Result<f64, MetricError> {
    let pairs: Vec<(&str, &str)> = gt
        .iter()
        .filter_map(|(img, label)| pred.assignments.get(img).map(|n| (n.as_str(), label.as_str())))
        .collect();
    if pairs.is_empty() {
        return Err(MetricError::NoOverlap);
    }
    let mut texts: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (name, label) in &pairs {
        for t in [*name, *label] {
            if !is_sentinel(t) && !index.contains_key(t) {
                index.insert(t.to_string(), texts.len());
                texts.push(t.to_string());
            }
        }
    }
    let vectors = if texts.is_empty() { Vec::new() } else { embedder.embed_texts(&texts)? };
    let total: f64 = pairs
        .iter()
        .map(|(name, label)| {
            if is_sentinel(name) {
                return 0.0;
            }
            if name_key(name) == name_key(label) {
                return 1.0;
            }
            clamped_cosine(&vectors[index[*name]], &vectors[index[*label]])
        })
        .sum();
    Ok(total / pairs.len() as f64)
}

/// `2ab / (a + b)`, or 0 when both are 0.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// The substructure with the highest CAcc; ties prefer mid, then coarse.
pub fn select_best_granularity<'a>(
    subs: &[&'a Substructure],
    gt: &BTreeMap<String, String>,
) -> Result<(&'a Substructure, f64), MetricError> {
    let rank = |g: Granularity| match g {
        Granularity::Mid => 0,
        Granularity::Coarse => 1,
        Granularity::Fine => 2,
    };
    let mut ordered: Vec<&Substructure> = subs.to_vec();
    ordered.sort_by_key(|s| rank(s.granularity));
    let mut best: Option<(&Substructure, f64)> = None;
    for s in ordered {
        let cacc = clustering_accuracy(s, gt)?;
        if best.is_none_or(|(_, b)| cacc > b) {
            best = Some((s, cacc));
        }
    }
    best.ok_or(MetricError::NoSubstructures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::UNASSIGNED;

    fn sub(g: Granularity, names: &[&str]) -> Substructure {
        let ids: Vec<String> = (0..names.len()).map(|i| format!("i{i}")).collect();
        Substructure::from_assignments("c", g, ids.iter().map(String::as_str).zip(names.iter().copied()))
    }

    fn labels(names: &[&str]) -> BTreeMap<String, String> {
        names.iter().enumerate().map(|(i, n)| (format!("i{i}"), n.to_string())).collect()
    }

    #[test]
    fn cacc_examples() {
        let p = sub(Granularity::Mid, &["A", "A", "B", "B"]);
        assert_eq!(clustering_accuracy(&p, &labels(&["x", "y", "y", "x"])).unwrap(), 0.5);
        let p = sub(Granularity::Mid, &["A", "A", "A"]);
        assert!((clustering_accuracy(&p, &labels(&["x", "x", "y"])).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let p = sub(Granularity::Mid, &["q", "r", "q"]);
        assert_eq!(clustering_accuracy(&p, &labels(&["x", "y", "x"])).unwrap(), 1.0);
    }

    #[test]
    fn sentinel_counts_as_wrong() {
        let p = sub(Granularity::Mid, &["A", UNASSIGNED]);
        let t = ConfusionTable::build(&p, &labels(&["x", "x"])).unwrap();
        assert_eq!((t.unassigned, t.images), (1, 2));
        assert_eq!(clustering_accuracy(&p, &labels(&["x", "x"])).unwrap(), 0.5);
    }

    #[test]
    fn no_overlap_is_an_error() {
        let p = sub(Granularity::Mid, &["A"]);
        let gt: BTreeMap<String, String> = [("zz".to_string(), "x".to_string())].into();
        assert_eq!(clustering_accuracy(&p, &gt), Err(MetricError::NoOverlap));
    }

    #[test]
    fn hm_values() {
        assert_eq!(harmonic_mean(1.0, 1.0), 1.0);
        assert_eq!(harmonic_mean(0.0, 0.9), 0.0);
        assert!((harmonic_mean(0.5, 1.0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn best_granularity_tie_prefers_mid() {
        let gt = labels(&["x", "x", "y", "y"]);
        let coarse = sub(Granularity::Coarse, &["a", "a", "b", "b"]);
        let mid = sub(Granularity::Mid, &["c", "c", "d", "d"]);
        let fine = sub(Granularity::Fine, &["e", "f", "g", "h"]);
        let (s, c) = select_best_granularity(&[&coarse, &mid, &fine], &gt).unwrap();
        assert_eq!((s.granularity, c), (Granularity::Mid, 1.0));
        let (s, _) = select_best_granularity(&[&fine, &coarse], &gt).unwrap();
        assert_eq!(s.granularity, Granularity::Coarse);
    }
}
