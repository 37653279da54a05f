use serde::{Deserialize, Serialize};

use super::{normalized_scores, RecommendationList, RerankConfig};
use crate::error::{Error, Result};
use crate::popularity::{PopularityDistribution, PopularityPartition};
use crate::recommenders::ScoredCandidates;

/// Coverage term of the diversification gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XqVariant {
    /// 1 while the list has no item of the category yet, else 0.
    Binary,
    /// Share of the list not yet taken by the category.
    Smooth,
}

/// xQuAD-style re-ranking over two categories: the head and everything
/// else. Category weights come from the user's unweighted profile shares.
pub fn rerank_xq(
    cands: &ScoredCandidates,
    profile: &PopularityDistribution,
    part: &PopularityPartition,
    cfg: &RerankConfig,
) -> Result<RecommendationList> {
    cfg.check_len(cands)?;
    let lambda = cfg.lambda;
    let weight = [profile.0[0], profile.0[1] + profile.0[2]];
    let norm = normalized_scores(cands);
    let cats: Vec<usize> = cands
        .items
        .iter()
        .map(|c| {
            part.group(c.item)
                .map(|g| g.is_long_tail() as usize)
                .ok_or_else(|| Error::data(format!("candidate item {} is outside the training catalog", c.item)))
        })
        .collect::<Result<_>>()?;
    let m = cats.len();
    let advance = |c: usize, from: usize| (from..m).find(|&p| cats[p] == c).unwrap_or(m);
    let mut next = [advance(0, 0), advance(1, 0)];
    let mut taken = [0usize; 2];
    let mut items = Vec::with_capacity(cfg.n);
    for t in 0..cfg.n {
        let mut best: Option<(f64, usize)> = None;
        for c in 0..2 {
            let pos = next[c];
            if pos == m {
                continue;
            }
            let coverage = match cfg.xq_variant {
                XqVariant::Binary => (taken[c] == 0) as u8 as f64,
                XqVariant::Smooth if t == 0 => 1.0,
                XqVariant::Smooth => 1.0 - taken[c] as f64 / t as f64,
            };
            let gain = (1.0 - lambda) * norm[pos] + lambda * weight[c] * coverage;
            if best.is_none_or(|(bg, bp)| gain > bg || (gain == bg && pos < bp)) {
                best = Some((gain, pos));
            }
        }
        let (_, pos) = best.expect("n <= m leaves a candidate");
        let c = cats[pos];
        taken[c] += 1;
        next[c] = advance(c, pos + 1);
        items.push(cands.items[pos].item);
    }
    Ok(RecommendationList::new(cands.user, items))
}
