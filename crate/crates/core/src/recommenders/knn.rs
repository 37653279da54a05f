//! Item-based collaborative filtering with cosine similarity.

use rayon::prelude::*;

use super::{item_raters, Scorer};
use crate::error::{Error, Result};
use crate::ingest::RatingDataset;

/// Top-k cosine neighbours per item plus the training profiles used to score.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemKnn {
    pub k: usize,
    neighbors: Vec<Vec<(u32, f64)>>,
    profiles: Vec<Vec<(u32, f64)>>,
}

impl ItemKnn {
    pub(crate) fn from_parts(k: usize, neighbors: Vec<Vec<(u32, f64)>>, profiles: Vec<Vec<(u32, f64)>>) -> Self {
        ItemKnn { k, neighbors, profiles }
    }

    /// Neighbours of `item`, most similar first (ties by index).
    pub fn neighbors(&self, item: u32) -> &[(u32, f64)] {
        &self.neighbors[item as usize]
    }

    pub(crate) fn profiles(&self) -> &[Vec<(u32, f64)>] {
        &self.profiles
    }
}

/// Cosine similarity over item rating vectors; keeps the `k` most similar
/// items with positive similarity. Items with a zero vector get no neighbours.
pub fn fit_item_knn(train: &RatingDataset, k: usize) -> Result<ItemKnn> {
    if k == 0 {
        return Err(Error::config("neighbourhood size k must be at least 1"));
    }
    let n_items = train.n_items();
    let raters = item_raters(train);
    let norms: Vec<f64> = raters
        .iter()
        .map(|r| r.iter().map(|&(_, x)| x * x).sum::<f64>().sqrt())
        .collect();
    let neighbors: Vec<Vec<(u32, f64)>> = (0..n_items)
        .into_par_iter()
        .map_init(
            || vec![0.0f64; n_items],
            |acc, i| {
                if norms[i] == 0.0 {
                    return Vec::new();
                }
                let mut touched = Vec::new();
                for &(u, ru) in &raters[i] {
                    for y in train.profile(u) {
                        let j = y.item as usize;
                        if j == i {
                            continue;
                        }
                        if acc[j] == 0.0 {
                            touched.push(j);
                        }
                        acc[j] += ru * y.rating;
                    }
                }
                let mut sims: Vec<(u32, f64)> = touched
                    .iter()
                    .filter_map(|&j| {
                        let dotp = std::mem::take(&mut acc[j]);
                        let s = dotp / (norms[i] * norms[j]);
                        (s > 0.0).then_some((j as u32, s))
                    })
                    .collect();
                sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                sims.truncate(k);
                sims
            },
        )
        .collect();
    let profiles = (0..train.n_users() as u32)
        .map(|u| train.profile(u).iter().map(|x| (x.item, x.rating)).collect())
        .collect();
    Ok(ItemKnn { k, neighbors, profiles })
}

impl Scorer for ItemKnn {
    fn n_users(&self) -> usize {
        self.profiles.len()
    }

    fn n_items(&self) -> usize {
        self.neighbors.len()
    }

    /// `score(u, i) = sum of sim(i, j) * r_uj over neighbours j the user rated`.
    fn score_into(&self, user: u32, scores: &mut [f64]) -> Result<()> {
        let profile = self.profiles.get(user as usize).ok_or(Error::UnknownUser(user))?;
        let mut rated = vec![0.0; self.neighbors.len()];
        for &(j, r) in profile {
            rated[j as usize] = r;
        }
        for (i, s) in scores.iter_mut().enumerate() {
            *s = self.neighbors[i].iter().map(|&(j, sim)| sim * rated[j as usize]).sum();
        }
        Ok(())
    }
}
