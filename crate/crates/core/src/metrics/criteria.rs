//! Criterion-level metrics: coverage of the ground-truth criteria (TPR) and
//! diversity of the predicted set.

use serde::{Deserialize, Serialize};

use super::{clamped_cosine, Embedder, MetricError};
use crate::backends::{BackendError, Backends};
use crate::parse::extract_asterisk_span;
use crate::types::name_key;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionMatch {
    pub predicted: String,
    pub gt: String,
    pub similarity: f64,
    pub matched: bool,
}

/// Scores how well each predicted criterion name matches each ground-truth name.
pub trait CriterionMatcher: Sync {
    /// Recorded in the metric report.
    fn mode(&self) -> String;
    /// `sim[p][g]` in `[0, 1]`.
    fn similarity(&self, predicted: &[String], gt: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;
}

/// Clamped cosine between name embeddings.
pub struct EmbeddingMatcher<'a> {
    pub embedder: &'a dyn Embedder,
}

impl CriterionMatcher for EmbeddingMatcher<'_> {
    fn mode(&self) -> String {
        "embedding".into()
    }

    fn similarity(&self, predicted: &[String], gt: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        if predicted.is_empty() || gt.is_empty() {
            return Ok(vec![vec![0.0; gt.len()]; predicted.len()]);
        }
        let p = self.embedder.embed_texts(predicted)?;
        let g = self.embedder.embed_texts(gt)?;
        Ok(p.iter().map(|pv| g.iter().map(|gv| clamped_cosine(pv, gv)).collect()).collect())
    }
}

/// Asks the chat model whether two criteria name the same grouping; a yes
/// scores 1, anything else 0.
pub struct LlmJudgeMatcher<'a> {
    pub backends: &'a Backends,
}

impl LlmJudgeMatcher<'_> {
    const SYSTEM: &'static str = "You are a helpful assistant.";

    fn judge(&self, a: &str, b: &str) -> Result<f64, BackendError> {
        let user = format!(
            "Two ways of grouping a set of images are given below.\nGrouping A: \"{a}\"\nGrouping B: \"{b}\"\nDo A and B describe the same grouping criterion (possibly phrased differently)? Respond with \"*yes*\" or \"*no*\". Your response:"
        );
        let req = self.backends.chat_request(Self::SYSTEM, &user)?.max_tokens(16);
        let text = self.backends.chat_complete(&req)?;
        let verdict = extract_asterisk_span(&text).unwrap_or_else(|_| text.clone());
        Ok(if name_key(&verdict).starts_with("yes") { 1.0 } else { 0.0 })
    }
}

impl CriterionMatcher for LlmJudgeMatcher<'_> {
    fn mode(&self) -> String {
        "llm_judge".into()
    }

    fn similarity(&self, predicted: &[String], gt: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        predicted
            .iter()
            .map(|p| {
                gt.iter()
                    .map(|g| if name_key(p) == name_key(g) { Ok(1.0) } else { self.judge(p, g) })
                    .collect()
            })
            .collect()
    }
}

/// Greedy one-to-one matching: pairs in descending similarity order are
/// accepted while both sides are free and the similarity reaches `threshold`.
///
/// Returns one entry per ground-truth criterion, in ground-truth order.
pub fn match_criteria(
    predicted: &[String],
    gt: &[String],
    matcher: &dyn CriterionMatcher,
    threshold: f64,
) -> Result<Vec<CriterionMatch>, MetricError> {
    if gt.is_empty() {
        return Err(MetricError::EmptyGroundTruth);
    }
    let sim = matcher.similarity(predicted, gt)?;
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for (p, row) in sim.iter().enumerate() {
        for (g, &s) in row.iter().enumerate() {
            pairs.push((p, g, s));
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0)));
    let mut p_used = vec![false; predicted.len()];
    let mut out: Vec<Option<CriterionMatch>> = vec![None; gt.len()];
    for (p, g, s) in pairs {
        if s < threshold {
            break;
        }
        if p_used[p] || out[g].is_some() {
            continue;
        }
        p_used[p] = true;
        out[g] = Some(CriterionMatch { predicted: predicted[p].clone(), gt: gt[g].clone(), similarity: s, matched: true });
    }
    Ok(out
        .into_iter()
        .enumerate()
        .map(|(g, m)| {
            m.unwrap_or_else(|| {
                let best = sim
                    .iter()
                    .enumerate()
                    .map(|(p, row)| (p, row[g]))
                    .max_by(|a, b| a.1.total_cmp(&b.1));
                CriterionMatch {
                    predicted: best.map(|(p, _)| predicted[p].clone()).unwrap_or_default(),
                    gt: gt[g].clone(),
                    similarity: best.map_or(0.0, |(_, s)| s),
                    matched: false,
                }
            })
        })
        .collect())
}

/// Fraction of ground-truth criteria covered by a greedy semantic match.
pub fn criteria_tpr(
    predicted: &[String],
    gt: &[String],
    matcher: &dyn CriterionMatcher,
    threshold: f64,
) -> Result<f64, MetricError> {
    let matches = match_criteria(predicted, gt, matcher, threshold)?;
    Ok(matches.iter().filter(|m| m.matched).count() as f64 / gt.len() as f64)
}

/// Mean over unordered pairs of `1 - clamped cosine`.
pub fn criteria_diversity(names: &[String], embedder: &dyn Embedder) -> Result<f64, MetricError> {
    if names.len() < 2 {
        return Err(MetricError::TooFewCriteria(names.len()));
    }
    let v = embedder.embed_texts(names)?;
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            sum += 1.0 - clamped_cosine(&v[i], &v[j]);
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    /// Unit vectors looked up by name.
    pub(crate) struct Table(pub BTreeMap<&'static str, Vec<f64>>);

    impl Embedder for Table {
        fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
            Ok(texts.iter().map(|t| self.0[t.as_str()].clone()).collect())
        }
    }

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn one_match_example() {
        let b = (1.0f64 - 0.81).sqrt();
        let t = Table(BTreeMap::from([
            ("Place", vec![0.9, b, 0.0]),
            ("Location", vec![1.0, 0.0, 0.0]),
            ("Mood", vec![0.1, 0.0, (1.0f64 - 0.01).sqrt()]),
        ]));
        let m = EmbeddingMatcher { embedder: &t };
        let tpr = criteria_tpr(&s(&["Place"]), &s(&["Location", "Mood"]), &m, 0.7).unwrap();
        assert_eq!(tpr, 0.5);
    }

    #[test]
    fn each_prediction_matches_once() {
        let t = Table(BTreeMap::from([("A", vec![1.0, 0.0]), ("B", vec![1.0, 0.0]), ("C", vec![1.0, 0.0])]));
        let m = EmbeddingMatcher { embedder: &t };
        assert_eq!(criteria_tpr(&s(&["A"]), &s(&["B", "C"]), &m, 0.7).unwrap(), 0.5);
        assert!(criteria_tpr(&s(&["A"]), &[], &m, 0.7).is_err());
    }

    #[test]
    fn diversity_from_pair_values() {
        // Pairwise cosines 0.2, 0.4, 0.6 realized by explicit unit vectors.
        let a = vec![1.0, 0.0, 0.0];
        let b = vec![0.2, (1.0f64 - 0.04).sqrt(), 0.0];
        let c2 = (0.6 - 0.4 * 0.2) / b[1];
        let c = vec![0.4, c2, (1.0 - 0.16 - c2 * c2).sqrt()];
        let t = Table(BTreeMap::from([("a", a), ("b", b), ("c", c)]));
        let d = criteria_diversity(&s(&["a", "b", "c"]), &t).unwrap();
        assert!((d - 0.6).abs() < 1e-12);
        assert!(matches!(criteria_diversity(&s(&["a"]), &t), Err(MetricError::TooFewCriteria(1))));
    }
}
