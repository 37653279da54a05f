//! Confidence-weighted implicit-feedback ALS, the fallback base ranker.
//!
//! Every observed pair has preference 1 and confidence `1 + alpha * r`;
//! unobserved pairs have preference 0 and confidence 1.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_finite, item_raters, random_factors, seeded_rng, FactorAlgorithm, FactorModel, FitTrace, MfConfig};
use crate::error::{Error, Result};
use crate::ingest::RatingDataset;
use crate::linalg::{axpy, dot, quad_form, solve_spd, syr};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImplicitConfig {
    pub mf: MfConfig,
    pub alpha: f64,
}

impl Default for ImplicitConfig {
    fn default() -> Self {
        ImplicitConfig {
            mf: MfConfig::default(),
            alpha: 1.0,
        }
    }
}

fn gram(x: &[f64], k: usize) -> Vec<f64> {
    let mut g = vec![0.0; k * k];
    for row in x.chunks_exact(k) {
        syr(&mut g, 1.0, row);
    }
    g
}

/// Solves every row of `this` against the fixed `other` side.
fn half_step(this: &mut [f64], other: &[f64], rows: &[Vec<(u32, f64)>], k: usize, reg: f64, alpha: f64) -> Result<()> {
    let g = gram(other, k);
    let solved: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|obs| {
            if obs.is_empty() {
                return Ok(vec![0.0; k]);
            }
            let mut a = g.clone();
            let mut b = vec![0.0; k];
            for &(j, r) in obs {
                let y = &other[j as usize * k..(j as usize + 1) * k];
                let c = 1.0 + alpha * r;
                syr(&mut a, c - 1.0, y);
                axpy(&mut b, c, y);
            }
            for d in 0..k {
                a[d * k + d] += reg;
            }
            solve_spd(&a, &b).ok_or_else(|| Error::numeric("implicit ALS system is not positive definite"))
        })
        .collect::<Result<_>>()?;
    for (idx, row) in solved.into_iter().enumerate() {
        this[idx * k..(idx + 1) * k].copy_from_slice(&row);
    }
    Ok(())
}

fn loss(x: &[f64], y: &[f64], rows: &[Vec<(u32, f64)>], k: usize, reg: f64, alpha: f64) -> f64 {
    let gy = gram(y, k);
    let mut total = 0.0;
    for (u, obs) in rows.iter().enumerate() {
        let xu = &x[u * k..(u + 1) * k];
        total += quad_form(&gy, xu);
        for &(i, r) in obs {
            let s = dot(xu, &y[i as usize * k..(i as usize + 1) * k]);
            let c = 1.0 + alpha * r;
            total += c * (1.0 - s) * (1.0 - s) - s * s;
        }
    }
    total + reg * x.iter().chain(y).map(|v| v * v).sum::<f64>()
}

pub fn fit_implicit_als(train: &RatingDataset, cfg: &ImplicitConfig) -> Result<(FactorModel, FitTrace)> {
    cfg.mf.validate()?;
    if !(cfg.alpha >= 0.0 && cfg.alpha.is_finite()) {
        return Err(Error::config("confidence alpha must be finite and non-negative"));
    }
    if train.is_empty() {
        return Err(Error::NoInteractions);
    }
    let k = cfg.mf.factors;
    let user_rows: Vec<Vec<(u32, f64)>> = (0..train.n_users() as u32)
        .map(|u| train.profile(u).iter().map(|x| (x.item, x.rating)).collect())
        .collect();
    let item_rows = item_raters(train);
    let mut rng = seeded_rng(cfg.mf.seed);
    let mut y = random_factors(train.n_items(), k, cfg.mf.init_scale, &mut rng);
    let mut x = random_factors(train.n_users(), k, cfg.mf.init_scale, &mut rng);
    let mut trace = FitTrace::default();
    trace.losses.push(loss(&x, &y, &user_rows, k, cfg.mf.reg, cfg.alpha));
    for sweep in 1..=cfg.mf.iterations {
        half_step(&mut x, &y, &user_rows, k, cfg.mf.reg, cfg.alpha)?;
        half_step(&mut y, &x, &item_rows, k, cfg.mf.reg, cfg.alpha)?;
        let l = loss(&x, &y, &user_rows, k, cfg.mf.reg, cfg.alpha);
        check_finite(FactorAlgorithm::ImplicitAls, sweep, l, x.iter().chain(&y))?;
        trace.losses.push(l);
    }
    let model = FactorModel::new(
        FactorAlgorithm::ImplicitAls,
        cfg.mf,
        train.n_users(),
        train.n_items(),
        x,
        y,
    );
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::dataset;

    #[test]
    fn loss_decreases_and_is_deterministic() {
        let train = dataset(
            3,
            4,
            &[
                (0, 0, 5.0),
                (0, 1, 3.0),
                (1, 1, 4.0),
                (1, 2, 2.0),
                (2, 3, 5.0),
                (2, 0, 1.0),
            ],
        );
        let cfg = ImplicitConfig {
            mf: MfConfig {
                factors: 2,
                iterations: 6,
                ..MfConfig::default()
            },
            alpha: 2.0,
        };
        let (a, trace) = fit_implicit_als(&train, &cfg).unwrap();
        assert!(trace.is_non_increasing(), "{:?}", trace.losses);
        let (b, _) = fit_implicit_als(&train, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
