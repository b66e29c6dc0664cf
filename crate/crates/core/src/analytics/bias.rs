//! Concentration of a cluster distribution and its dominant cluster.

use serde::{Deserialize, Serialize};

use super::{argmax_by_name, AnalyticsError};
use crate::types::{Distribution, Granularity, Substructure};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasScore {
    /// `1 - H(p) / ln K`: 0 for uniform, 1 for all mass on one cluster.
    pub value: f64,
    /// Set when K = 1 and the score is 1 by convention.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dominant {
    pub name: String,
    pub count: u64,
    pub tied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasFinding {
    pub criterion_id: String,
    pub granularity: Granularity,
    pub intensity: f64,
    pub degenerate: bool,
    pub dominant: Dominant,
    pub distribution: Distribution,
}

/// Normalized-entropy bias over the K clusters listed in `dist` (zero-count
/// clusters included).
pub fn bias_intensity(dist: &Distribution) -> Result<BiasScore, AnalyticsError> {
    let total = dist.total();
    if total == 0 || dist.counts.is_empty() {
        return Err(AnalyticsError::EmptyDistribution);
    }
    let k = dist.counts.len();
    if k == 1 {
        return Ok(BiasScore { value: 1.0, degenerate: true });
    }
    let n = total as f64;
    let h: f64 = dist
        .counts
        .values()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    let value = (1.0 - h / (k as f64).ln()).clamp(0.0, 1.0);
    Ok(BiasScore { value, degenerate: false })
}

/// The cluster holding the most images.
pub fn dominant_cluster(dist: &Distribution) -> Result<Dominant, AnalyticsError> {
    let (name, tied) = argmax_by_name(dist.counts.iter().map(|(k, &c)| (k.as_str(), c as f64)))
        .ok_or(AnalyticsError::EmptyDistribution)?;
    if dist.total() == 0 {
        return Err(AnalyticsError::EmptyDistribution);
    }
    Ok(Dominant { name: name.to_string(), count: dist.counts[name], tied })
}

/// One finding per substructure, most biased first (ties by criterion id).
pub fn bias_report(subs: &[&Substructure], include_sentinel: bool) -> Result<Vec<BiasFinding>, AnalyticsError> {
    let mut out = Vec::with_capacity(subs.len());
    for s in subs {
        let distribution = s.distribution(include_sentinel)?;
        let score = bias_intensity(&distribution)?;
        let dominant = dominant_cluster(&distribution)?;
        out.push(BiasFinding {
            criterion_id: s.criterion_id.clone(),
            granularity: s.granularity,
            intensity: score.value,
            degenerate: score.degenerate,
            dominant,
            distribution,
        });
    }
    out.sort_by(|a, b| b.intensity.total_cmp(&a.intensity).then_with(|| a.criterion_id.cmp(&b.criterion_id)));
    Ok(out)
}

pub fn bias_tsv(findings: &[BiasFinding]) -> String {
    let mut out = String::from("criterion\tgranularity\tintensity\tdominant\tdominant_share\tclusters\tflags\n");
    for f in findings {
        let share = f.dominant.count as f64 / f.distribution.total() as f64;
        let mut flags = Vec::new();
        if f.degenerate {
            flags.push("single_cluster");
        }
        if f.dominant.tied {
            flags.push("dominant_tie");
        }
        out.push_str(&format!(
            "{}\t{}\t{:.4}\t{}\t{:.4}\t{}\t{}\n",
            f.criterion_id,
            f.granularity,
            f.intensity,
            f.dominant.name,
            share,
            f.distribution.counts.len(),
            flags.join(",")
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn dist(counts: &[(&str, u64)]) -> Distribution {
        let m: BTreeMap<String, u64> = counts.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        Distribution::from_counts("c", Granularity::Mid, m).unwrap()
    }

    #[test]
    fn bounds_and_known_value() {
        assert!(bias_intensity(&dist(&[("a", 3), ("b", 3), ("c", 3)])).unwrap().value.abs() < 1e-12);
        assert_eq!(bias_intensity(&dist(&[("a", 5), ("b", 0)])).unwrap().value, 1.0);
        let h2 = -(0.75f64 * 0.75f64.log2() + 0.25 * 0.25f64.log2());
        let v = bias_intensity(&dist(&[("a", 3), ("b", 1)])).unwrap().value;
        assert!((v - (1.0 - h2)).abs() < 1e-12);
        assert!((v - 0.1887).abs() < 1e-4);
        let s = bias_intensity(&dist(&[("z", 4)])).unwrap();
        assert!(s.degenerate && s.value == 1.0);
    }

    #[test]
    fn dominant_ties() {
        assert_eq!(dominant_cluster(&dist(&[("A", 7), ("B", 3)])).unwrap().name, "A");
        let d = dominant_cluster(&dist(&[("B", 5), ("A", 5)])).unwrap();
        assert_eq!((d.name.as_str(), d.tied), ("A", true));
        assert_eq!(dominant_cluster(&dist(&[("Z", 1)])).unwrap().name, "Z");
    }

    #[test]
    fn report_orders_by_intensity() {
        let uniform = Substructure::from_assignments("u", Granularity::Mid, [("1", "a"), ("2", "b")]);
        let single = Substructure::from_assignments("s", Granularity::Mid, [("1", "a"), ("2", "a")]);
        let r = bias_report(&[&uniform, &single], false).unwrap();
        assert_eq!(r[0].criterion_id, "s");
        assert_eq!(r[0].intensity, 1.0);
        assert_eq!(r[1].criterion_id, "u");
        assert!(bias_tsv(&r).lines().count() == 3);
    }
}
