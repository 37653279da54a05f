use super::{RecommendationList, RerankConfig};
use crate::error::{Error, Result};
use crate::popularity::PopularityPartition;
use crate::recommenders::ScoredCandidates;

/// Minimum protected count for every prefix length `1..=n`: the smallest
/// `x` with `BinomCDF(x; k, p) > alpha`.
pub fn min_protected_counts(n: usize, p: f64, alpha: f64) -> Vec<usize> {
    (1..=n).map(|k| inverse_cdf(k, p, alpha)).collect()
}

fn inverse_cdf(k: usize, p: f64, alpha: f64) -> usize {
    if p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return k;
    }
    let ratio = p / (1.0 - p);
    let mut pmf = (1.0 - p).powi(k as i32);
    let mut cdf = pmf;
    let mut x = 0;
    while cdf <= alpha && x < k {
        pmf *= (k - x) as f64 / (x + 1) as f64 * ratio;
        x += 1;
        cdf += pmf;
    }
    x
}

/// Ranked group fairness over protected items (mid and tail). The effective
/// protected share is `lambda * fs_target`. When protected candidates run
/// out the list is completed from the rest and flagged.
pub fn rerank_fair(
    cands: &ScoredCandidates,
    part: &PopularityPartition,
    cfg: &RerankConfig,
) -> Result<RecommendationList> {
    cfg.check_len(cands)?;
    let need = min_protected_counts(cfg.n, cfg.lambda * cfg.fs_target, cfg.fs_alpha);
    let mut protected = Vec::new();
    let mut other = Vec::new();
    for c in &cands.items {
        let g = part
            .group(c.item)
            .ok_or_else(|| Error::data(format!("candidate item {} is outside the training catalog", c.item)))?;
        if g.is_long_tail() {
            protected.push(c.item);
        } else {
            other.push(c.item);
        }
    }
    // both queues keep candidate order, so comparing heads by rank is
    // comparing them by score
    let rank = |i: u32| cands.items.iter().position(|c| c.item == i).unwrap();
    let (mut pi, mut oi) = (0, 0);
    let mut items = Vec::with_capacity(cfg.n);
    let mut violated = false;
    for &min in &need {
        let have = items.len() - oi;
        let take_protected = if have < min {
            if pi == protected.len() {
                violated = true;
                false
            } else {
                true
            }
        } else {
            match (protected.get(pi), other.get(oi)) {
                (Some(&a), Some(&b)) => rank(a) < rank(b),
                (Some(_), None) => true,
                _ => false,
            }
        };
        if take_protected {
            items.push(protected[pi]);
            pi += 1;
        } else {
            items.push(other[oi]);
            oi += 1;
        }
    }
    Ok(RecommendationList {
        user: cands.user,
        items,
        constraint_violated: violated,
    })
}
