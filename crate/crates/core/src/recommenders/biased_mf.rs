//! Explicit-rating matrix factorisation with user and item biases, fitted by
//! ALS over observed ratings only: `r ~ mu + b_u + b_i + p_u . q_i`.

use rayon::prelude::*;

use super::{check_finite, item_raters, random_factors, seeded_rng, FactorAlgorithm, FactorModel, FitTrace, MfConfig};
use crate::error::{Error, Result};
use crate::ingest::RatingDataset;
use crate::linalg::{axpy, dot, solve_spd, syr};

/// One half-step: rows of `(factors, bias)` against the other side's
/// `(factors, bias)`. Each row solves a ridge system over `[factors; 1]`.
#[allow(clippy::too_many_arguments)]
fn half_step(
    this_f: &mut [f64],
    this_b: &mut [f64],
    other_f: &[f64],
    other_b: &[f64],
    rows: &[Vec<(u32, f64)>],
    mu: f64,
    k: usize,
    reg: f64,
) -> Result<()> {
    let dim = k + 1;
    let solved: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|obs| {
            if obs.is_empty() {
                return Ok(vec![0.0; dim]);
            }
            let mut a = vec![0.0; dim * dim];
            let mut b = vec![0.0; dim];
            let mut z = vec![1.0; dim];
            for &(j, r) in obs {
                z[..k].copy_from_slice(&other_f[j as usize * k..(j as usize + 1) * k]);
                syr(&mut a, 1.0, &z);
                axpy(&mut b, r - mu - other_b[j as usize], &z);
            }
            for d in 0..dim {
                a[d * dim + d] += reg;
            }
            solve_spd(&a, &b).ok_or_else(|| Error::numeric("biased MF system is not positive definite"))
        })
        .collect::<Result<_>>()?;
    for (idx, row) in solved.into_iter().enumerate() {
        this_f[idx * k..(idx + 1) * k].copy_from_slice(&row[..k]);
        this_b[idx] = row[k];
    }
    Ok(())
}

fn loss(train: &RatingDataset, p: &[f64], bu: &[f64], q: &[f64], bi: &[f64], mu: f64, k: usize, reg: f64) -> f64 {
    let data: f64 = train
        .interactions()
        .iter()
        .map(|x| {
            let (u, i) = (x.user as usize, x.item as usize);
            let e = x.rating - mu - bu[u] - bi[i] - dot(&p[u * k..(u + 1) * k], &q[i * k..(i + 1) * k]);
            e * e
        })
        .sum();
    data + reg * p.iter().chain(q).chain(bu).chain(bi).map(|v| v * v).sum::<f64>()
}

pub fn fit_biased_mf(train: &RatingDataset, cfg: &MfConfig) -> Result<(FactorModel, FitTrace)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::NoInteractions);
    }
    let k = cfg.factors;
    let mu = train.interactions().iter().map(|x| x.rating).sum::<f64>() / train.len() as f64;
    let user_rows: Vec<Vec<(u32, f64)>> = (0..train.n_users() as u32)
        .map(|u| train.profile(u).iter().map(|x| (x.item, x.rating)).collect())
        .collect();
    let item_rows = item_raters(train);
    let mut rng = seeded_rng(cfg.seed);
    let mut q = random_factors(train.n_items(), k, cfg.init_scale, &mut rng);
    let mut p = random_factors(train.n_users(), k, cfg.init_scale, &mut rng);
    let mut bu = vec![0.0; train.n_users()];
    let mut bi = vec![0.0; train.n_items()];
    let mut trace = FitTrace::default();
    trace.losses.push(loss(train, &p, &bu, &q, &bi, mu, k, cfg.reg));
    for sweep in 1..=cfg.iterations {
        half_step(&mut p, &mut bu, &q, &bi, &user_rows, mu, k, cfg.reg)?;
        half_step(&mut q, &mut bi, &p, &bu, &item_rows, mu, k, cfg.reg)?;
        let l = loss(train, &p, &bu, &q, &bi, mu, k, cfg.reg);
        check_finite(
            FactorAlgorithm::BiasedMf,
            sweep,
            l,
            p.iter().chain(&q).chain(&bu).chain(&bi),
        )?;
        trace.losses.push(l);
    }
    let model = FactorModel::new(FactorAlgorithm::BiasedMf, *cfg, train.n_users(), train.n_items(), p, q)
        .with_biases(mu, bu, bi);
    Ok((model, trace))
}
