//! Bias, spurious-correlation and popularity analyses over substructures.

pub mod bias;
pub mod correlation;
pub mod popularity;

use thiserror::Error;

use crate::types::TypeError;

pub use bias::{bias_intensity, bias_report, bias_tsv, dominant_cluster, BiasFinding, BiasScore, Dominant};
pub use correlation::{spurious_correlation, JointCell, JointDistribution};
pub use popularity::{popularity_analysis, popularity_tsv, ClusterPopularity, PopularityFinding};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("distribution is empty")]
    EmptyDistribution,
    #[error("marginal `{0}` has fewer than two outcomes with mass")]
    DegenerateMarginal(&'static str),
    #[error("{missing} of {total} images lack a popularity value (allowed fraction {allowed})")]
    MissingPopularity { missing: usize, total: usize, allowed: f64 },
    #[error("line {line}: {message}")]
    LabelFile { line: usize, message: String },
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// Index of the maximum, ties broken toward the lexicographically smallest
/// name; the flag reports whether another entry shared the maximum.
pub(crate) fn argmax_by_name<'a>(items: impl IntoIterator<Item = (&'a str, f64)>) -> Option<(&'a str, bool)> {
    let mut best: Option<(&str, f64)> = None;
    let mut tied = false;
    for (name, v) in items {
        match best {
            None => best = Some((name, v)),
            Some((bn, bv)) => {
                if v > bv {
                    best = Some((name, v));
                    tied = false;
                } else if v == bv {
                    tied = true;
                    if name < bn {
                        best = Some((name, v));
                    }
                }
            }
        }
    }
    best.map(|(n, _)| (n, tied))
}
