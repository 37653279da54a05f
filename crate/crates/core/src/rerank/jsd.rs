use super::RecommendationList;
use crate::error::{Error, Result};
use crate::popularity::{PopularityDistribution, PopularityPartition};

/// Jensen-Shannon divergence with base-2 logarithms, so the value lies in
/// `[0, 1]`. Zero-probability terms contribute nothing.
pub fn js_divergence(p: &PopularityDistribution, q: &PopularityDistribution) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in p.0.iter().zip(&q.0) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            total += 0.5 * b * (b / m).log2();
        }
    }
    total.clamp(0.0, 1.0)
}

/// Unweighted share of each popularity group in the list.
pub fn list_distribution(list: &RecommendationList, part: &PopularityPartition) -> Result<PopularityDistribution> {
    let mut counts = [0.0; 3];
    for &i in &list.items {
        let g = part
            .group(i)
            .ok_or_else(|| Error::data(format!("recommended item {i} is outside the training catalog")))?;
        counts[g.index()] += 1.0;
    }
    PopularityDistribution::from_mass(counts).ok_or_else(|| Error::data(format!("empty list for user {}", list.user)))
}
