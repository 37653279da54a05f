//! Base recommenders and top-m candidate generation.
//!
//! Every model implements [`Scorer`]; [`top_m_candidates`] turns a scorer into
//! a canonical candidate list (score descending, ties by item index) over the
//! training catalog minus the user's profile.

mod biased_mf;
mod checkpoint;
mod implicit_als;
mod knn;
mod popular;
mod rank_als;

use std::cmp::Ordering;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{IdIndex, RatingDataset};
use crate::linalg::dot;
use crate::popularity::ItemPopularity;

pub use biased_mf::fit_biased_mf;
pub use checkpoint::{read_checkpoint, write_checkpoint, BaseModel};
pub use implicit_als::{fit_implicit_als, ImplicitConfig};
pub use knn::{fit_item_knn, ItemKnn};
pub use popular::{most_popular, MostPopular};
pub use rank_als::{fit_ranking_mf, RankAlsConfig};

/// Per-user item scoring.
pub trait Scorer: Sync {
    fn n_users(&self) -> usize;
    fn n_items(&self) -> usize;
    /// Fills `scores` (length `n_items`) with the user's predicted scores.
    fn score_into(&self, user: u32, scores: &mut [f64]) -> Result<()>;
}

/// Hyperparameters shared by the factor models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfConfig {
    pub factors: usize,
    pub reg: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Standard deviation of the initial item factors.
    pub init_scale: f64,
}

impl Default for MfConfig {
    fn default() -> Self {
        MfConfig {
            factors: 50,
            reg: 0.01,
            iterations: 20,
            seed: 42,
            init_scale: 0.1,
        }
    }
}

impl MfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factors == 0 {
            return Err(Error::config("factor dimension must be at least 1"));
        }
        if !(self.reg >= 0.0 && self.reg.is_finite()) {
            return Err(Error::config(format!(
                "regularization must be finite and non-negative, got {}",
                self.reg
            )));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::config("initial factor scale must be positive"));
        }
        Ok(())
    }
}

/// Which training scheme produced a factor model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorAlgorithm {
    RankAls,
    ImplicitAls,
    BiasedMf,
}

impl FactorAlgorithm {
    pub fn name(&self) -> &'static str {
        match self {
            FactorAlgorithm::RankAls => "rank-als",
            FactorAlgorithm::ImplicitAls => "implicit-als",
            FactorAlgorithm::BiasedMf => "biased-mf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rank-als" => Some(FactorAlgorithm::RankAls),
            "implicit-als" => Some(FactorAlgorithm::ImplicitAls),
            "biased-mf" => Some(FactorAlgorithm::BiasedMf),
            _ => None,
        }
    }
}

/// Latent factor model; `score(u, i) = global + b_u + b_i + p_u . q_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub algorithm: FactorAlgorithm,
    pub config: MfConfig,
    n_users: usize,
    n_items: usize,
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
    user_bias: Option<Vec<f64>>,
    item_bias: Option<Vec<f64>>,
    global_bias: f64,
}

impl FactorModel {
    pub(crate) fn new(
        algorithm: FactorAlgorithm,
        config: MfConfig,
        n_users: usize,
        n_items: usize,
        user_factors: Vec<f64>,
        item_factors: Vec<f64>,
    ) -> Self {
        FactorModel {
            algorithm,
            config,
            n_users,
            n_items,
            user_factors,
            item_factors,
            user_bias: None,
            item_bias: None,
            global_bias: 0.0,
        }
    }

    pub(crate) fn with_biases(mut self, global: f64, user_bias: Vec<f64>, item_bias: Vec<f64>) -> Self {
        self.global_bias = global;
        self.user_bias = Some(user_bias);
        self.item_bias = Some(item_bias);
        self
    }

    pub fn factors(&self) -> usize {
        self.config.factors
    }

    pub fn user_factors(&self, user: u32) -> &[f64] {
        let k = self.config.factors;
        &self.user_factors[user as usize * k..(user as usize + 1) * k]
    }

    pub fn item_factors(&self, item: u32) -> &[f64] {
        let k = self.config.factors;
        &self.item_factors[item as usize * k..(item as usize + 1) * k]
    }

    pub fn user_bias(&self) -> Option<&[f64]> {
        self.user_bias.as_deref()
    }

    pub fn item_bias(&self) -> Option<&[f64]> {
        self.item_bias.as_deref()
    }

    pub fn global_bias(&self) -> f64 {
        self.global_bias
    }

    pub fn score(&self, user: u32, item: u32) -> f64 {
        let mut s = self.global_bias + dot(self.user_factors(user), self.item_factors(item));
        if let Some(b) = &self.user_bias {
            s += b[user as usize];
        }
        if let Some(b) = &self.item_bias {
            s += b[item as usize];
        }
        s
    }

    pub fn is_finite(&self) -> bool {
        self.user_factors
            .iter()
            .chain(&self.item_factors)
            .all(|x| x.is_finite())
            && self.global_bias.is_finite()
            && self
                .user_bias
                .iter()
                .chain(&self.item_bias)
                .flatten()
                .all(|x| x.is_finite())
    }
}

impl Scorer for FactorModel {
    fn n_users(&self) -> usize {
        self.n_users
    }

    fn n_items(&self) -> usize {
        self.n_items
    }

    fn score_into(&self, user: u32, scores: &mut [f64]) -> Result<()> {
        if user as usize >= self.n_users {
            return Err(Error::UnknownUser(user));
        }
        for (i, s) in scores.iter_mut().enumerate() {
            *s = self.score(user, i as u32);
        }
        Ok(())
    }
}

/// Loss after initialisation and after each sweep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitTrace {
    pub losses: Vec<f64>,
}

impl FitTrace {
    /// True when no sweep increased the loss beyond rounding noise.
    pub fn is_non_increasing(&self) -> bool {
        self.losses
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0))
    }
}

pub(crate) fn random_factors(n: usize, k: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, scale).expect("positive scale");
    (0..n * k).map(|_| normal.sample(rng)).collect()
}

pub(crate) fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn check_finite<'a>(
    algorithm: FactorAlgorithm,
    sweep: usize,
    loss: f64,
    mut values: impl Iterator<Item = &'a f64>,
) -> Result<()> {
    if !loss.is_finite() || values.any(|x| !x.is_finite()) {
        return Err(Error::numeric(format!(
            "{} produced non-finite values at sweep {sweep} (loss {loss})",
            algorithm.name()
        )));
    }
    Ok(())
}

/// Raters of each item as `(user, rating)`, in user order.
pub(crate) fn item_raters(train: &RatingDataset) -> Vec<Vec<(u32, f64)>> {
    let mut raters = vec![Vec::new(); train.n_items()];
    for x in train.interactions() {
        raters[x.item as usize].push((x.user, x.rating));
    }
    raters
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub item: u32,
    pub score: f64,
}

/// A user's top-m unseen items in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidates {
    pub user: u32,
    pub items: Vec<Candidate>,
    /// Fewer than `m` eligible items existed.
    pub short: bool,
}

impl ScoredCandidates {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item_ids(&self) -> Vec<u32> {
        self.items.iter().map(|c| c.item).collect()
    }
}

/// Canonical candidate order: higher score first, then lower item index.
pub fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score.total_cmp(&a.score).then(a.item.cmp(&b.item))
}

/// The `m` best-scoring training-catalog items outside the user's profile.
pub fn top_m_candidates(
    model: &dyn Scorer,
    user: u32,
    m: usize,
    train: &RatingDataset,
    pop: &ItemPopularity,
) -> Result<ScoredCandidates> {
    if m == 0 {
        return Err(Error::config("candidate list size m must be at least 1"));
    }
    if user as usize >= model.n_users() || user as usize >= train.n_users() {
        return Err(Error::UnknownUser(user));
    }
    let mut scores = vec![0.0; model.n_items()];
    model.score_into(user, &mut scores)?;
    let mut seen = vec![false; scores.len()];
    for x in train.profile(user) {
        seen[x.item as usize] = true;
    }
    let mut pool = Vec::with_capacity(scores.len());
    for (i, &score) in scores.iter().enumerate() {
        if seen[i] || !pop.in_catalog(i as u32) {
            continue;
        }
        if !score.is_finite() {
            return Err(Error::numeric(format!("non-finite score for user {user} item {i}")));
        }
        pool.push(Candidate { item: i as u32, score });
    }
    let short = pool.len() < m;
    if pool.len() > m {
        pool.select_nth_unstable_by(m - 1, candidate_order);
        pool.truncate(m);
    }
    pool.sort_by(candidate_order);
    Ok(ScoredCandidates {
        user,
        items: pool,
        short,
    })
}

/// Candidate lists for every user, in user index order.
pub fn generate_candidates(
    model: &dyn Scorer,
    train: &RatingDataset,
    pop: &ItemPopularity,
    m: usize,
) -> Result<Vec<ScoredCandidates>> {
    (0..train.n_users() as u32)
        .into_par_iter()
        .map(|u| top_m_candidates(model, u, m, train, pop))
        .collect()
}

/// Writes `user_id,item_id,rank,score` with 1-based ranks.
pub fn write_candidates_csv<W: Write>(
    cands: &[ScoredCandidates],
    users: &IdIndex,
    items: &IdIndex,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "item_id", "rank", "score"])?;
    for c in cands {
        for (rank, cand) in c.items.iter().enumerate() {
            w.write_record([
                users.id(c.user),
                items.id(cand.item),
                &(rank + 1).to_string(),
                &cand.score.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a candidate dump back into per-user lists (every user gets an entry,
/// possibly empty). Rows are re-sorted by rank.
pub fn read_candidates_csv<R: Read>(
    input: R,
    users: &IdIndex,
    items: &IdIndex,
    m: usize,
) -> Result<Vec<ScoredCandidates>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows: Vec<Vec<(usize, Candidate)>> = vec![Vec::new(); users.len()];
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 4 {
            return Err(Error::data(format!(
                "candidate row has {} fields, expected 4",
                rec.len()
            )));
        }
        let u = users
            .get(&rec[0])
            .ok_or_else(|| Error::data(format!("candidates name unknown user {:?}", &rec[0])))?;
        let item = items
            .get(&rec[1])
            .ok_or_else(|| Error::data(format!("candidates name unknown item {:?}", &rec[1])))?;
        let rank: usize = rec[2]
            .parse()
            .map_err(|_| Error::data(format!("bad rank {:?}", &rec[2])))?;
        let score: f64 = rec[3]
            .parse()
            .map_err(|_| Error::data(format!("bad score {:?}", &rec[3])))?;
        rows[u as usize].push((rank, Candidate { item, score }));
    }
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(u, mut list)| {
            list.sort_by_key(|&(rank, _)| rank);
            let items: Vec<Candidate> = list.into_iter().map(|(_, c)| c).collect();
            ScoredCandidates {
                user: u as u32,
                short: items.len() < m,
                items,
            }
        })
        .collect())
}
