use super::Scorer;
use crate::error::{Error, Result};
use crate::ingest::RatingDataset;
use crate::popularity::ItemPopularity;

/// Scores every item by its training rating count, identically for all users.
#[derive(Debug, Clone, PartialEq)]
pub struct MostPopular {
    n_users: usize,
    phi: Vec<f64>,
}

impl MostPopular {
    pub(crate) fn from_parts(n_users: usize, phi: Vec<f64>) -> Self {
        MostPopular { n_users, phi }
    }

    pub(crate) fn phi(&self) -> &[f64] {
        &self.phi
    }
}

pub fn most_popular(train: &RatingDataset, pop: &ItemPopularity) -> MostPopular {
    MostPopular {
        n_users: train.n_users(),
        phi: pop.counts().iter().map(|&c| c as f64).collect(),
    }
}

impl Scorer for MostPopular {
    fn n_users(&self) -> usize {
        self.n_users
    }

    fn n_items(&self) -> usize {
        self.phi.len()
    }

    fn score_into(&self, user: u32, scores: &mut [f64]) -> Result<()> {
        if user as usize >= self.n_users {
            return Err(Error::UnknownUser(user));
        }
        scores.copy_from_slice(&self.phi);
        Ok(())
    }
}
