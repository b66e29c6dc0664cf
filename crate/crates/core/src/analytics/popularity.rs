//! Per-cluster popularity: mean popularity and size-weighted popularity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{argmax_by_name, AnalyticsError};
use crate::types::{is_sentinel, Collection, Granularity, Substructure};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPopularity {
    pub name: String,
    pub size: usize,
    /// Mean popularity of the cluster's images.
    pub mean: f64,
    /// `mean * size / N`; these sum to the overall mean.
    pub weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopularityFinding {
    pub criterion_id: String,
    pub granularity: Granularity,
    pub clusters: Vec<ClusterPopularity>,
    /// Highest mean popularity.
    pub viral: String,
    pub viral_tied: bool,
    /// Highest weighted popularity.
    pub major: String,
    pub major_tied: bool,
    /// Images that entered the scores.
    pub evaluated: usize,
    /// Non-sentinel images without a popularity value (excluded).
    pub missing: usize,
}

/// Popularity per cluster of `sub`, over non-sentinel images that carry a
/// popularity value. Fails if more than `max_missing_fraction` of the
/// non-sentinel images lack one.
pub fn popularity_analysis(
    sub: &Substructure,
    collection: &Collection,
    max_missing_fraction: f64,
) -> Result<PopularityFinding, AnalyticsError> {
    let mut members: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut missing = 0;
    let mut considered = 0;
    for (img, name) in &sub.assignments {
        if is_sentinel(name) {
            continue;
        }
        considered += 1;
        match collection.get(img).and_then(|r| r.popularity) {
            Some(p) => members.entry(name.as_str()).or_default().push(p),
            None => missing += 1,
        }
    }
    if considered == 0 {
        return Err(AnalyticsError::EmptyDistribution);
    }
    if missing as f64 > max_missing_fraction * considered as f64 || missing == considered {
        return Err(AnalyticsError::MissingPopularity { missing, total: considered, allowed: max_missing_fraction });
    }
    let n: usize = members.values().map(Vec::len).sum();
    let clusters: Vec<ClusterPopularity> = members
        .iter()
        .map(|(name, vals)| {
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            ClusterPopularity {
                name: name.to_string(),
                size: vals.len(),
                mean,
                weighted: mean * vals.len() as f64 / n as f64,
            }
        })
        .collect();
    let (viral, viral_tied) = argmax_by_name(clusters.iter().map(|c| (c.name.as_str(), c.mean))).expect("non-empty");
    let (major, major_tied) =
        argmax_by_name(clusters.iter().map(|c| (c.name.as_str(), c.weighted))).expect("non-empty");
    Ok(PopularityFinding {
        criterion_id: sub.criterion_id.clone(),
        granularity: sub.granularity,
        viral: viral.to_string(),
        viral_tied,
        major: major.to_string(),
        major_tied,
        clusters,
        evaluated: n,
        missing,
    })
}

pub fn popularity_tsv(findings: &[PopularityFinding]) -> String {
    let mut out = String::from("criterion\tgranularity\tcluster\tsize\tmean\tweighted\tlabel\n");
    for f in findings {
        for c in &f.clusters {
            let mut labels = Vec::new();
            if c.name == f.viral {
                labels.push(if f.viral_tied { "viral(tie)" } else { "viral" });
            }
            if c.name == f.major {
                labels.push(if f.major_tied { "major(tie)" } else { "major" });
            }
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{}\n",
                f.criterion_id,
                f.granularity,
                c.name,
                c.size,
                c.mean,
                c.weighted,
                labels.join(",")
            ));
        }
    }
    out
}
