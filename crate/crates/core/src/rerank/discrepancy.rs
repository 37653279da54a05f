use super::mcf::MinCostFlow;
use super::{RecommendationList, RerankConfig};
use crate::error::{Error, Result};
use crate::popularity::ItemPopularity;
use crate::recommenders::ScoredCandidates;

/// Integer cost scale; relevance and discrepancy costs are rounded at this
/// resolution.
const SCALE: f64 = 1e6;

/// Result of a joint exposure-targeting re-rank.
#[derive(Debug, Clone, PartialEq)]
pub struct DmOutcome {
    pub lists: Vec<RecommendationList>,
    /// Some item received more exposure than its target.
    pub relaxed: bool,
    /// Total units above target, summed over items.
    pub overflow: u64,
    pub cost: i64,
}

/// Uniform exposure targets over the training catalog summing to `total`;
/// remainders go to the lowest item indices. Items outside the catalog get 0.
pub fn uniform_targets(pop: &ItemPopularity, total: u64) -> Vec<u64> {
    let catalog: Vec<usize> = (0..pop.n_items()).filter(|&i| pop.in_catalog(i as u32)).collect();
    let mut t = vec![0; pop.n_items()];
    if catalog.is_empty() {
        return t;
    }
    let base = total / catalog.len() as u64;
    let extra = (total % catalog.len() as u64) as usize;
    for (k, &i) in catalog.iter().enumerate() {
        t[i] = base + (k < extra) as u64;
    }
    t
}

/// Picks `n` items per user so that item exposure approaches `targets`.
/// Each unit of exposure above an item's target costs `lambda`; taking the
/// candidate at 0-based rank r of an m-long list costs `(1 - lambda) * r / m`.
pub fn rerank_dm(all: &[ScoredCandidates], targets: &[u64], cfg: &RerankConfig) -> Result<DmOutcome> {
    cfg.validate()?;
    let n = cfg.n;
    for c in all {
        if c.len() < n {
            return Err(Error::NotEnoughCandidates { n, available: c.len() });
        }
    }
    let total = (all.len() * n) as i64;

    // compact item nodes
    let mut node_of = vec![usize::MAX; targets.len()];
    let mut items = Vec::new();
    for c in all {
        for cand in &c.items {
            let i = cand.item as usize;
            if i >= targets.len() {
                return Err(Error::data(format!("candidate item {i} has no exposure target")));
            }
            if node_of[i] == usize::MAX {
                node_of[i] = items.len();
                items.push(cand.item);
            }
        }
    }
    let source = 0;
    let user_node = |u: usize| 1 + u;
    let item_node = |k: usize| 1 + all.len() + k;
    let sink = 1 + all.len() + items.len();
    let mut g = MinCostFlow::new(sink + 1);
    g.set_supply(source, total);
    g.set_supply(sink, -total);

    let mut pick_arcs = Vec::with_capacity(all.len());
    for (u, c) in all.iter().enumerate() {
        g.add_arc(source, user_node(u), n as i64, 0);
        let m = c.len() as f64;
        let arcs: Vec<usize> = c
            .items
            .iter()
            .enumerate()
            .map(|(r, cand)| {
                let cost = (SCALE * (1.0 - cfg.lambda) * r as f64 / m).round() as i64;
                g.add_arc(user_node(u), item_node(node_of[cand.item as usize]), 1, cost)
            })
            .collect();
        pick_arcs.push(arcs);
    }
    let penalty = (SCALE * cfg.lambda).round() as i64;
    let mut overflow_arcs = Vec::with_capacity(items.len());
    for (k, &i) in items.iter().enumerate() {
        g.add_arc(item_node(k), sink, targets[i as usize].min(total as u64) as i64, 0);
        overflow_arcs.push(g.add_arc(item_node(k), sink, total, penalty));
    }

    let sol = g
        .solve()
        .ok_or_else(|| Error::numeric("exposure flow has no feasible solution"))?;
    let over: Vec<bool> = overflow_arcs.iter().map(|&a| sol.flow[a] > 0).collect();
    let overflow: i64 = overflow_arcs.iter().map(|&a| sol.flow[a]).sum();
    let lists = all
        .iter()
        .zip(&pick_arcs)
        .map(|(c, arcs)| {
            let picked: Vec<u32> = c
                .items
                .iter()
                .zip(arcs)
                .filter(|&(_, &a)| sol.flow[a] == 1)
                .map(|(cand, _)| cand.item)
                .collect();
            let violated = picked.iter().any(|&i| over[node_of[i as usize]]);
            RecommendationList {
                user: c.user,
                items: picked,
                constraint_violated: violated,
            }
        })
        .collect();
    Ok(DmOutcome {
        lists,
        relaxed: overflow > 0,
        overflow: overflow as u64,
        cost: sol.cost,
    })
}
