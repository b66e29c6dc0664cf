//! Normalized mutual information between an attribute grouping and a target
//! grouping of the same images.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use crate::types::{is_sentinel, Substructure};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointCell {
    pub attribute: String,
    pub target: String,
    pub count: u64,
}

/// Co-occurrence counts of attribute and target clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointDistribution {
    pub cells: Vec<JointCell>,
}

impl JointDistribution {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, AnalyticsError> {
        let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (a, y) in pairs {
            *counts.entry((a.trim().to_string(), y.trim().to_string())).or_default() += 1;
        }
        Self::from_counts(counts)
    }

    pub fn from_counts(counts: BTreeMap<(String, String), u64>) -> Result<Self, AnalyticsError> {
        let cells: Vec<JointCell> = counts
            .into_iter()
            .filter(|(_, c)| *c > 0)
            .map(|((attribute, target), count)| JointCell { attribute, target, count })
            .collect();
        if cells.is_empty() {
            return Err(AnalyticsError::EmptyDistribution);
        }
        Ok(Self { cells })
    }

    /// Images present in both substructures; images assigned to the
    /// sentinel on either side are dropped unless `include_sentinel`.
    pub fn from_substructures(
        attribute: &Substructure,
        target: &Substructure,
        include_sentinel: bool,
    ) -> Result<Self, AnalyticsError> {
        Self::from_pairs(attribute.assignments.iter().filter_map(|(img, a)| {
            let y = target.assignments.get(img)?;
            (include_sentinel || !(is_sentinel(a) || is_sentinel(y))).then_some((a.as_str(), y.as_str()))
        }))
    }

    /// Two columns per line (attribute, target) separated by a tab or a
    /// comma. Blank lines and lines starting with `#` are skipped.
    pub fn from_label_file(text: &str) -> Result<Self, AnalyticsError> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let sep = if t.contains('\t') { '\t' } else { ',' };
            let fields: Vec<&str> = t.split(sep).map(str::trim).collect();
            if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
                return Err(AnalyticsError::LabelFile {
                    line: i + 1,
                    message: format!("expected two non-empty columns, found {}", fields.len()),
                });
            }
            pairs.push((fields[0].to_string(), fields[1].to_string()));
        }
        Self::from_pairs(pairs.iter().map(|(a, y)| (a.as_str(), y.as_str())))
    }

    /// The same joint with the roles of attribute and target exchanged.
    pub fn transposed(&self) -> Self {
        let mut cells: Vec<JointCell> = self
            .cells
            .iter()
            .map(|c| JointCell { attribute: c.target.clone(), target: c.attribute.clone(), count: c.count })
            .collect();
        cells.sort_by(|a, b| (&a.attribute, &a.target).cmp(&(&b.attribute, &b.target)));
        Self { cells }
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().map(|c| c.count).sum()
    }

    fn marginal(&self, attribute: bool) -> BTreeMap<&str, u64> {
        let mut m = BTreeMap::new();
        for c in &self.cells {
            let k = if attribute { c.attribute.as_str() } else { c.target.as_str() };
            *m.entry(k).or_default() += c.count;
        }
        m
    }
}

fn entropy(marginal: &BTreeMap<&str, u64>, n: f64) -> f64 {
    marginal
        .values()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `2 I(A;Y) / (H(A) + H(Y))` from empirical probabilities.
pub fn spurious_correlation(joint: &JointDistribution) -> Result<f64, AnalyticsError> {
    let n = joint.total();
    if n == 0 {
        return Err(AnalyticsError::EmptyDistribution);
    }
    let ma = joint.marginal(true);
    let my = joint.marginal(false);
    if ma.values().filter(|&&c| c > 0).count() < 2 {
        return Err(AnalyticsError::DegenerateMarginal("attribute"));
    }
    if my.values().filter(|&&c| c > 0).count() < 2 {
        return Err(AnalyticsError::DegenerateMarginal("target"));
    }
    let n = n as f64;
    // Terms are summed in sorted order so the result does not depend on
    // which side is called the attribute.
    let mut terms: Vec<f64> = joint
        .cells
        .iter()
        .map(|c| {
            let p = c.count as f64 / n;
            let pa = ma[c.attribute.as_str()] as f64 / n;
            let py = my[c.target.as_str()] as f64 / n;
            p * (p / (pa * py)).ln()
        })
        .collect();
    terms.sort_by(f64::total_cmp);
    let mi: f64 = terms.iter().sum();
    let ha = entropy(&ma, n);
    let hy = entropy(&my, n);
    Ok((2.0 * mi / (ha + hy)).clamp(0.0, 1.0))
}
