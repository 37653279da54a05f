//! Plain-text model checkpoints.
//!
//! Layout: a `popcal-model 1` magic line, `key value` header lines, a blank
//! line, then one data row per line. Floats use Rust's shortest round-trip
//! formatting, so a reload reproduces the model bit for bit.

use std::io::{BufRead, Write};

use super::{FactorAlgorithm, FactorModel, ItemKnn, MfConfig, MostPopular, Scorer};
use crate::error::{Error, Result};

const MAGIC: &str = "popcal-model 1";

/// Any trained base recommender.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseModel {
    Factor(FactorModel),
    Knn(ItemKnn),
    Popular(MostPopular),
}

impl BaseModel {
    pub fn kind(&self) -> &'static str {
        match self {
            BaseModel::Factor(m) => m.algorithm.name(),
            BaseModel::Knn(_) => "item-knn",
            BaseModel::Popular(_) => "most-popular",
        }
    }
}

impl Scorer for BaseModel {
    fn n_users(&self) -> usize {
        match self {
            BaseModel::Factor(m) => m.n_users(),
            BaseModel::Knn(m) => m.n_users(),
            BaseModel::Popular(m) => m.n_users(),
        }
    }

    fn n_items(&self) -> usize {
        match self {
            BaseModel::Factor(m) => m.n_items(),
            BaseModel::Knn(m) => m.n_items(),
            BaseModel::Popular(m) => m.n_items(),
        }
    }

    fn score_into(&self, user: u32, scores: &mut [f64]) -> Result<()> {
        match self {
            BaseModel::Factor(m) => m.score_into(user, scores),
            BaseModel::Knn(m) => m.score_into(user, scores),
            BaseModel::Popular(m) => m.score_into(user, scores),
        }
    }
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn join_pairs(pairs: &[(u32, f64)]) -> String {
    pairs
        .iter()
        .map(|(j, v)| format!("{j}:{v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_checkpoint<W: Write>(model: &BaseModel, mut out: W) -> Result<()> {
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "kind {}", model.kind())?;
    writeln!(out, "users {}", model.n_users())?;
    writeln!(out, "items {}", model.n_items())?;
    match model {
        BaseModel::Factor(m) => {
            let c = &m.config;
            writeln!(out, "factors {}", c.factors)?;
            writeln!(out, "seed {}", c.seed)?;
            writeln!(out, "reg {}", c.reg)?;
            writeln!(out, "iterations {}", c.iterations)?;
            writeln!(out, "init_scale {}", c.init_scale)?;
            writeln!(out, "global {}", m.global_bias())?;
            writeln!(out, "biases {}", m.item_bias().is_some() as u8)?;
            writeln!(out)?;
            for u in 0..m.n_users() as u32 {
                let bias = m.user_bias().map(|b| b[u as usize]);
                writeln!(out, "{}", join(m.user_factors(u).iter().copied().chain(bias)))?;
            }
            for i in 0..m.n_items() as u32 {
                let bias = m.item_bias().map(|b| b[i as usize]);
                writeln!(out, "{}", join(m.item_factors(i).iter().copied().chain(bias)))?;
            }
        }
        BaseModel::Knn(m) => {
            writeln!(out, "k {}", m.k)?;
            writeln!(out)?;
            for i in 0..m.n_items() as u32 {
                writeln!(out, "{}", join_pairs(m.neighbors(i)))?;
            }
            for p in m.profiles() {
                writeln!(out, "{}", join_pairs(p))?;
            }
        }
        BaseModel::Popular(m) => {
            writeln!(out)?;
            writeln!(out, "{}", join(m.phi().iter().copied()))?;
        }
    }
    Ok(())
}

struct Header(Vec<(String, String)>);

impl Header {
    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .0
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::data(format!("checkpoint header lacks {key:?}")))?;
        raw.parse()
            .map_err(|_| Error::data(format!("checkpoint header {key:?} has bad value {raw:?}")))
    }
}

fn parse_floats(line: &str, expect: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = line
        .split_ascii_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::data(format!("bad number {t:?} in checkpoint")))
        })
        .collect::<Result<_>>()?;
    if v.len() != expect {
        return Err(Error::data(format!(
            "checkpoint row has {} values, expected {expect}",
            v.len()
        )));
    }
    Ok(v)
}

fn parse_pairs(line: &str) -> Result<Vec<(u32, f64)>> {
    line.split_ascii_whitespace()
        .map(|t| {
            let (j, v) = t
                .split_once(':')
                .ok_or_else(|| Error::data(format!("bad pair {t:?} in checkpoint")))?;
            Ok((
                j.parse().map_err(|_| Error::data(format!("bad index {j:?}")))?,
                v.parse().map_err(|_| Error::data(format!("bad value {v:?}")))?,
            ))
        })
        .collect()
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<BaseModel> {
    let mut lines = input.lines();
    let mut next = || -> Result<Option<String>> { Ok(lines.next().transpose()?) };
    if next()?.as_deref() != Some(MAGIC) {
        return Err(Error::data("not a popcal model checkpoint"));
    }
    let mut header = Vec::new();
    loop {
        let line = next()?.ok_or_else(|| Error::data("truncated checkpoint header"))?;
        if line.is_empty() {
            break;
        }
        let (k, v) = line
            .split_once(' ')
            .ok_or_else(|| Error::data(format!("bad checkpoint header line {line:?}")))?;
        header.push((k.to_owned(), v.to_owned()));
    }
    let header = Header(header);
    let kind: String = header.get("kind")?;
    let n_users: usize = header.get("users")?;
    let n_items: usize = header.get("items")?;
    let mut row = || -> Result<String> { next()?.ok_or_else(|| Error::data("truncated checkpoint body")) };

    if let Some(algorithm) = FactorAlgorithm::parse(&kind) {
        let config = MfConfig {
            factors: header.get("factors")?,
            seed: header.get("seed")?,
            reg: header.get("reg")?,
            iterations: header.get("iterations")?,
            init_scale: header.get("init_scale")?,
        };
        config.validate()?;
        let k = config.factors;
        let biased = header.get::<u8>("biases")? == 1;
        let width = k + biased as usize;
        let mut read_side = |n: usize| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut f = Vec::with_capacity(n * k);
            let mut b = Vec::with_capacity(if biased { n } else { 0 });
            for _ in 0..n {
                let v = parse_floats(&row()?, width)?;
                f.extend_from_slice(&v[..k]);
                if biased {
                    b.push(v[k]);
                }
            }
            Ok((f, b))
        };
        let (uf, ub) = read_side(n_users)?;
        let (itf, ib) = read_side(n_items)?;
        let mut model = FactorModel::new(algorithm, config, n_users, n_items, uf, itf);
        if biased {
            model = model.with_biases(header.get("global")?, ub, ib);
        }
        return Ok(BaseModel::Factor(model));
    }
    match kind.as_str() {
        "item-knn" => {
            let k: usize = header.get("k")?;
            let neighbors = (0..n_items).map(|_| parse_pairs(&row()?)).collect::<Result<_>>()?;
            let profiles = (0..n_users).map(|_| parse_pairs(&row()?)).collect::<Result<_>>()?;
            Ok(BaseModel::Knn(ItemKnn::from_parts(k, neighbors, profiles)))
        }
        "most-popular" => {
            let phi = parse_floats(&row()?, n_items)?;
            Ok(BaseModel::Popular(MostPopular::from_parts(n_users, phi)))
        }
        other => Err(Error::data(format!("unknown model kind {other:?}"))),
    }
}
