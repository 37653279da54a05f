use super::{js_divergence, normalized_scores, RecommendationList, RerankConfig};
use crate::error::{Error, Result};
use crate::popularity::{PopularityDistribution, PopularityPartition};
use crate::recommenders::ScoredCandidates;

/// One greedy selection and the objective of the list after it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpStep {
    pub item: u32,
    pub objective: f64,
}

fn candidate_groups(cands: &ScoredCandidates, part: &PopularityPartition) -> Result<Vec<usize>> {
    cands
        .items
        .iter()
        .map(|c| {
            part.group(c.item)
                .map(|g| g.index())
                .ok_or_else(|| Error::data(format!("candidate item {} is outside the training catalog", c.item)))
        })
        .collect()
}

fn share(counts: [f64; 3], len: f64) -> PopularityDistribution {
    PopularityDistribution([counts[0] / len, counts[1] / len, counts[2] / len])
}

/// `(1 - lambda) * sum of normalised scores - lambda * JSD(profile, list)`,
/// evaluated from scratch. Every item must be a candidate.
pub fn cp_objective(
    items: &[u32],
    cands: &ScoredCandidates,
    profile: &PopularityDistribution,
    part: &PopularityPartition,
    lambda: f64,
) -> Result<f64> {
    let norm = normalized_scores(cands);
    let mut rel = 0.0;
    let mut counts = [0.0; 3];
    for &i in items {
        let pos = cands
            .items
            .iter()
            .position(|c| c.item == i)
            .ok_or_else(|| Error::data(format!("item {i} is not a candidate")))?;
        rel += norm[pos];
        let g = part
            .group(i)
            .ok_or_else(|| Error::data(format!("item {i} has no group")))?;
        counts[g.index()] += 1.0;
    }
    let div = if items.is_empty() {
        0.0
    } else {
        js_divergence(profile, &share(counts, items.len() as f64))
    };
    Ok((1.0 - lambda) * rel - lambda * div)
}

/// Greedy calibration towards the user's (rating-weighted) profile
/// distribution.
pub fn rerank_cp(
    cands: &ScoredCandidates,
    profile: &PopularityDistribution,
    part: &PopularityPartition,
    cfg: &RerankConfig,
) -> Result<RecommendationList> {
    rerank_cp_traced(cands, profile, part, cfg).map(|(l, _)| l)
}

/// As [`rerank_cp`], also returning the incrementally tracked objective.
pub fn rerank_cp_traced(
    cands: &ScoredCandidates,
    profile: &PopularityDistribution,
    part: &PopularityPartition,
    cfg: &RerankConfig,
) -> Result<(RecommendationList, Vec<CpStep>)> {
    cfg.check_len(cands)?;
    let lambda = cfg.lambda;
    let norm = normalized_scores(cands);
    let groups = candidate_groups(cands, part)?;
    let m = groups.len();

    // Scores fall with rank, so the best unused candidate of a group is
    // always its first unused one.
    let mut next = [0usize; 3];
    let advance = |g: usize, from: usize| (from..m).find(|&p| groups[p] == g).unwrap_or(m);
    for (g, slot) in next.iter_mut().enumerate() {
        *slot = advance(g, 0);
    }

    let mut counts = [0.0; 3];
    let mut div = 0.0;
    let mut objective = 0.0;
    let mut items = Vec::with_capacity(cfg.n);
    let mut trace = Vec::with_capacity(cfg.n);
    for t in 0..cfg.n {
        let mut best: Option<(f64, usize, f64)> = None;
        for g in 0..3 {
            let pos = next[g];
            if pos == m {
                continue;
            }
            let mut c = counts;
            c[g] += 1.0;
            let d = js_divergence(profile, &share(c, (t + 1) as f64));
            let gain = (1.0 - lambda) * norm[pos] - lambda * d;
            let better = match best {
                None => true,
                Some((bg, bp, _)) => gain > bg || (gain == bg && pos < bp),
            };
            if better {
                best = Some((gain, pos, d));
            }
        }
        let (_, pos, d) = best.expect("n <= m leaves a candidate");
        let g = groups[pos];
        counts[g] += 1.0;
        objective += (1.0 - lambda) * norm[pos] - lambda * (d - div);
        div = d;
        next[g] = advance(g, pos + 1);
        items.push(cands.items[pos].item);
        trace.push(CpStep {
            item: cands.items[pos].item,
            objective,
        });
    }
    Ok((RecommendationList::new(cands.user, items), trace))
}
