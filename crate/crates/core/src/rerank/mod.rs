//! Re-rankers that turn a size-m candidate list into a size-n final list.
//!
//! All per-user strategies work on min-max normalised candidate scores and
//! break ties by candidate rank (higher base score, then lower item index).

mod calibrated;
mod discrepancy;
mod fair;
mod jsd;
pub mod mcf;
mod xquad;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::IdIndex;
use crate::recommenders::ScoredCandidates;

pub use calibrated::{cp_objective, rerank_cp, rerank_cp_traced, CpStep};
pub use discrepancy::{rerank_dm, uniform_targets, DmOutcome};
pub use fair::{min_protected_counts, rerank_fair};
pub use jsd::{js_divergence, list_distribution};
pub use xquad::{rerank_xq, XqVariant};

/// A final recommendation list; items in presentation order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecommendationList {
    pub user: u32,
    pub items: Vec<u32>,
    /// The method could not honour its constraint for this list (FS prefix
    /// minimums, DM exposure targets).
    pub constraint_violated: bool,
}

impl RecommendationList {
    pub fn new(user: u32, items: Vec<u32>) -> Self {
        RecommendationList {
            user,
            items,
            constraint_violated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Mitigation strategy; `Base` is the plain top-n of the candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Base,
    Cp,
    Xq,
    Fs,
    Dm,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Base, Method::Cp, Method::Xq, Method::Fs, Method::Dm];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Base => "base",
            Method::Cp => "cp",
            Method::Xq => "xq",
            Method::Fs => "fs",
            Method::Dm => "dm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::config(format!("unknown method {s:?}; expected one of base, cp, xq, fs, dm")))
    }
}

/// Trade-off weight and method parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankConfig {
    pub lambda: f64,
    pub n: usize,
    /// FS protected share at `lambda = 1`; the effective share is `lambda * fs_target`.
    pub fs_target: f64,
    pub fs_alpha: f64,
    pub xq_variant: XqVariant,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            lambda: 0.0,
            n: 10,
            fs_target: 0.8,
            fs_alpha: 0.1,
            xq_variant: XqVariant::Smooth,
        }
    }
}

impl RerankConfig {
    pub fn with_lambda(self, lambda: f64) -> Self {
        RerankConfig { lambda, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if self.n == 0 {
            return Err(Error::config("list size n must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.fs_target) {
            return Err(Error::config(format!(
                "FS target share must lie in [0, 1], got {}",
                self.fs_target
            )));
        }
        if !(self.fs_alpha > 0.0 && self.fs_alpha < 1.0) {
            return Err(Error::config(format!(
                "FS significance must lie in (0, 1), got {}",
                self.fs_alpha
            )));
        }
        Ok(())
    }

    fn check_len(&self, cands: &ScoredCandidates) -> Result<()> {
        self.validate()?;
        if self.n > cands.len() {
            return Err(Error::NotEnoughCandidates {
                n: self.n,
                available: cands.len(),
            });
        }
        Ok(())
    }
}

/// Min-max normalised candidate scores, in candidate order. A constant list
/// maps to all ones.
pub fn normalized_scores(cands: &ScoredCandidates) -> Vec<f64> {
    let (lo, hi) = cands
        .items
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            (lo.min(c.score), hi.max(c.score))
        });
    let span = hi - lo;
    cands
        .items
        .iter()
        .map(|c| if span > 0.0 { (c.score - lo) / span } else { 1.0 })
        .collect()
}

/// The first `n` candidates.
pub fn top_n(cands: &ScoredCandidates, n: usize) -> Result<RecommendationList> {
    if n > cands.len() {
        return Err(Error::NotEnoughCandidates {
            n,
            available: cands.len(),
        });
    }
    Ok(RecommendationList::new(
        cands.user,
        cands.items[..n].iter().map(|c| c.item).collect(),
    ))
}

/// Writes `user_id,item_id,rank,method,lambda`; `lambda` is empty for Base.
pub fn write_lists_csv<W: Write>(
    lists: &[RecommendationList],
    method: Method,
    lambda: Option<f64>,
    users: &IdIndex,
    items: &IdIndex,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "item_id", "rank", "method", "lambda", "flagged"])?;
    let lambda = lambda.map(|l| l.to_string()).unwrap_or_default();
    for list in lists {
        for (rank, &item) in list.items.iter().enumerate() {
            w.write_record([
                users.id(list.user),
                items.id(item),
                &(rank + 1).to_string(),
                method.name(),
                &lambda,
                if list.constraint_violated { "1" } else { "0" },
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a lists CSV into per-user lists (only users present in the file).
/// A list is flagged when any of its rows is.
pub fn read_lists_csv<R: std::io::Read>(input: R, users: &IdIndex, items: &IdIndex) -> Result<Vec<RecommendationList>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows: Vec<Vec<(usize, u32)>> = vec![Vec::new(); users.len()];
    let mut flagged = vec![false; users.len()];
    for rec in r.records() {
        let rec = rec?;
        if rec.len() < 3 {
            return Err(Error::data(format!(
                "list row has {} fields, expected at least 3",
                rec.len()
            )));
        }
        let u = users
            .get(&rec[0])
            .ok_or_else(|| Error::data(format!("lists name unknown user {:?}", &rec[0])))?;
        let i = items
            .get(&rec[1])
            .ok_or_else(|| Error::data(format!("lists name unknown item {:?}", &rec[1])))?;
        let rank: usize = rec[2]
            .parse()
            .map_err(|_| Error::data(format!("bad rank {:?}", &rec[2])))?;
        rows[u as usize].push((rank, i));
        flagged[u as usize] |= rec.get(5) == Some("1");
    }
    Ok(rows
        .into_iter()
        .enumerate()
        .filter(|(_, r)| !r.is_empty())
        .map(|(u, mut r)| {
            r.sort_unstable();
            RecommendationList {
                user: u as u32,
                items: r.into_iter().map(|(_, i)| i).collect(),
                constraint_violated: flagged[u],
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recommenders::Candidate;

    #[test]
    fn normalisation_bounds() {
        let c = ScoredCandidates {
            user: 0,
            items: vec![
                Candidate { item: 3, score: 4.0 },
                Candidate { item: 1, score: 2.0 },
                Candidate { item: 2, score: 0.0 },
            ],
            short: false,
        };
        assert_eq!(normalized_scores(&c), vec![1.0, 0.5, 0.0]);
        let flat = ScoredCandidates {
            user: 0,
            items: vec![Candidate { item: 3, score: 4.0 }, Candidate { item: 1, score: 4.0 }],
            short: false,
        };
        assert_eq!(normalized_scores(&flat), vec![1.0, 1.0]);
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("rg".parse::<Method>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(RerankConfig::default().with_lambda(1.5).validate().is_err());
        assert!(RerankConfig {
            n: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RerankConfig::default().with_lambda(1.0).validate().is_ok());
    }
}
