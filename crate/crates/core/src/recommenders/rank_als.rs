//! Ranking-oriented alternating least squares.
//!
//! Minimises, over user factors `p` and item factors `q`,
//!
//! ```text
//! sum_u sum_{i in profile(u)} sum_j s_j ((p_u.q_i - p_u.q_j) - (r_ui - r_uj))^2
//!     + reg (|P|^2 + |Q|^2)
//! ```
//!
//! where `j` runs over the whole training catalog and `r_uj = 0` for unrated
//! items. The user half-step is a closed-form solve per user built from
//! catalog-level aggregates. The item half-step visits items in index order and
//! solves for each `q_i` exactly given every other factor, updating the shared
//! aggregates after each solve, so both half-steps are exact block minimisers
//! and the objective never increases.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_finite, item_raters, random_factors, seeded_rng, FactorAlgorithm, FactorModel, FitTrace, MfConfig};
use crate::error::{Error, Result};
use crate::ingest::RatingDataset;
use crate::linalg::{axpy, dot, mat_vec, quad_form, solve_spd, syr};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankAlsConfig {
    pub mf: MfConfig,
    /// Weight each contrast item by its training popularity instead of uniformly.
    pub support_weighting: bool,
}

impl Default for RankAlsConfig {
    fn default() -> Self {
        RankAlsConfig {
            mf: MfConfig::default(),
            support_weighting: false,
        }
    }
}

struct Problem<'a> {
    train: &'a RatingDataset,
    k: usize,
    reg: f64,
    /// Contrast-item weights `s_j`; zero outside the training catalog.
    s: Vec<f64>,
    s_total: f64,
    raters: Vec<Vec<(u32, f64)>>,
    /// Per-user `sum_j s_j r_uj`, `sum_i r_ui` and `sum_j s_j r_uj^2`, `sum_i r_ui^2`.
    r_s: Vec<f64>,
    r_sum: Vec<f64>,
    r2_s: Vec<f64>,
    r2_sum: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(train: &'a RatingDataset, cfg: &RankAlsConfig) -> Self {
        let n_items = train.n_items();
        let mut support = vec![0.0; n_items];
        for x in train.interactions() {
            support[x.item as usize] += 1.0;
        }
        let s: Vec<f64> = if cfg.support_weighting {
            let total: f64 = support.iter().sum();
            let n_catalog = support.iter().filter(|&&c| c > 0.0).count() as f64;
            // mean weight 1 over the catalog
            support.iter().map(|&c| c * n_catalog / total).collect()
        } else {
            support.iter().map(|&c| if c > 0.0 { 1.0 } else { 0.0 }).collect()
        };
        let s_total = s.iter().sum();
        let n_users = train.n_users();
        let (mut r_s, mut r_sum, mut r2_s, mut r2_sum) = (
            vec![0.0; n_users],
            vec![0.0; n_users],
            vec![0.0; n_users],
            vec![0.0; n_users],
        );
        for x in train.interactions() {
            let u = x.user as usize;
            let sj = s[x.item as usize];
            r_s[u] += sj * x.rating;
            r_sum[u] += x.rating;
            r2_s[u] += sj * x.rating * x.rating;
            r2_sum[u] += x.rating * x.rating;
        }
        Problem {
            train,
            k: cfg.mf.factors,
            reg: cfg.mf.reg,
            s,
            s_total,
            raters: item_raters(train),
            r_s,
            r_sum,
            r2_s,
            r2_sum,
        }
    }

    /// `sum_j s_j q_j` and `sum_j s_j q_j q_j^T`.
    fn item_aggregates(&self, q: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = self.k;
        let mut q_bar = vec![0.0; k];
        let mut a_bar = vec![0.0; k * k];
        for (j, &sj) in self.s.iter().enumerate() {
            if sj != 0.0 {
                let qj = &q[j * k..(j + 1) * k];
                axpy(&mut q_bar, sj, qj);
                syr(&mut a_bar, sj, qj);
            }
        }
        (q_bar, a_bar)
    }

    fn solve_user(&self, u: u32, q: &[f64], q_bar: &[f64], a_bar: &[f64]) -> Result<Vec<f64>> {
        let k = self.k;
        let profile = self.train.profile(u);
        let c = profile.len() as f64;
        let ui = u as usize;
        let mut q_sum = vec![0.0; k];
        let mut a_sum = vec![0.0; k * k];
        let mut b_sum = vec![0.0; k];
        let mut b_s = vec![0.0; k];
        for x in profile {
            let qi = &q[x.item as usize * k..(x.item as usize + 1) * k];
            axpy(&mut q_sum, 1.0, qi);
            syr(&mut a_sum, 1.0, qi);
            axpy(&mut b_sum, x.rating, qi);
            axpy(&mut b_s, self.s[x.item as usize] * x.rating, qi);
        }
        let mut m = vec![0.0; k * k];
        for r in 0..k {
            for col in 0..k {
                m[r * k + col] = self.s_total * a_sum[r * k + col] - q_sum[r] * q_bar[col] - q_bar[r] * q_sum[col]
                    + c * a_bar[r * k + col];
            }
            m[r * k + r] += self.reg;
        }
        let y: Vec<f64> = (0..k)
            .map(|r| self.s_total * b_sum[r] - q_sum[r] * self.r_s[ui] - q_bar[r] * self.r_sum[ui] + c * b_s[r])
            .collect();
        if profile.is_empty() {
            return Ok(vec![0.0; k]);
        }
        solve_spd(&m, &y).ok_or_else(|| Error::numeric(format!("user system for {u} is not positive definite")))
    }

    /// Full objective including regularisation.
    fn loss(&self, p: &[f64], q: &[f64]) -> f64 {
        let k = self.k;
        let (q_bar, a_bar) = self.item_aggregates(q);
        let data: f64 = (0..self.train.n_users())
            .into_par_iter()
            .map(|u| {
                let profile = self.train.profile(u as u32);
                if profile.is_empty() {
                    return 0.0;
                }
                let pu = &p[u * k..(u + 1) * k];
                let c = profile.len() as f64;
                let (mut sq, mut pq_sum, mut rpq, mut srpq) = (0.0, 0.0, 0.0, 0.0);
                for x in profile {
                    let e = dot(pu, &q[x.item as usize * k..(x.item as usize + 1) * k]);
                    sq += e * e;
                    pq_sum += e;
                    rpq += x.rating * e;
                    srpq += self.s[x.item as usize] * x.rating * e;
                }
                let pq_bar = dot(pu, &q_bar);
                let quad = self.s_total * sq - 2.0 * pq_sum * pq_bar + c * quad_form(&a_bar, pu);
                let lin = self.s_total * rpq - pq_sum * self.r_s[u] - pq_bar * self.r_sum[u] + c * srpq;
                let konst = self.s_total * self.r2_sum[u] - 2.0 * self.r_sum[u] * self.r_s[u] + c * self.r2_s[u];
                quad - 2.0 * lin + konst
            })
            .collect::<Vec<f64>>()
            .into_iter()
            .sum();
        let norm: f64 = p.iter().chain(q).map(|x| x * x).sum();
        data + self.reg * norm
    }

    fn user_step(&self, p: &mut [f64], q: &[f64]) -> Result<()> {
        let k = self.k;
        let (q_bar, a_bar) = self.item_aggregates(q);
        let rows: Vec<Vec<f64>> = (0..self.train.n_users() as u32)
            .into_par_iter()
            .map(|u| self.solve_user(u, q, &q_bar, &a_bar))
            .collect::<Result<_>>()?;
        for (u, row) in rows.into_iter().enumerate() {
            p[u * k..(u + 1) * k].copy_from_slice(&row);
        }
        Ok(())
    }

    fn item_step(&self, p: &[f64], q: &mut [f64]) -> Result<()> {
        let k = self.k;
        let n_users = self.train.n_users();
        let (mut q_bar, _) = self.item_aggregates(q);
        // t_u = sum_{i in profile} p_u.q_i, kept current as items move
        let mut t = vec![0.0; n_users];
        let mut g = vec![0.0; k * k];
        let mut h = vec![0.0; k];
        for u in 0..n_users {
            let profile = self.train.profile(u as u32);
            if profile.is_empty() {
                continue;
            }
            let pu = &p[u * k..(u + 1) * k];
            t[u] = profile
                .iter()
                .map(|x| dot(pu, &q[x.item as usize * k..(x.item as usize + 1) * k]))
                .sum();
            syr(&mut g, profile.len() as f64, pu);
            axpy(&mut h, t[u] - self.r_sum[u], pu);
        }

        let mut s_i_mat = vec![0.0; k * k];
        for i in 0..self.train.n_items() {
            let si = self.s[i];
            let raters = &self.raters[i];
            s_i_mat.iter_mut().for_each(|x| *x = 0.0);
            let qi_old: Vec<f64> = q[i * k..(i + 1) * k].to_vec();
            let mut b: Vec<f64> = h.iter().map(|x| si * x).collect();
            for &(u, r) in raters {
                let ui = u as usize;
                let pu = &p[ui * k..(ui + 1) * k];
                syr(&mut s_i_mat, 1.0, pu);
                let c = self.train.profile(u).len() as f64;
                let coef = dot(pu, &q_bar) - 2.0 * si * dot(pu, &qi_old) + r * self.s_total - self.r_s[ui] + si * r * c;
                axpy(&mut b, coef, pu);
            }
            let mut a: Vec<f64> = g.iter().map(|x| si * x).collect();
            axpy(&mut a, self.s_total - 2.0 * si, &s_i_mat);
            for r in 0..k {
                a[r * k + r] += self.reg;
            }
            let qi_new = if raters.is_empty() && si == 0.0 {
                vec![0.0; k]
            } else {
                solve_spd(&a, &b)
                    .ok_or_else(|| Error::numeric(format!("item system for {i} is not positive definite")))?
            };
            let delta: Vec<f64> = qi_new.iter().zip(&qi_old).map(|(n, o)| n - o).collect();
            axpy(&mut q_bar, si, &delta);
            for &(u, _) in raters {
                let ui = u as usize;
                t[ui] += dot(&p[ui * k..(ui + 1) * k], &delta);
            }
            let dh = mat_vec(&s_i_mat, &delta);
            axpy(&mut h, 1.0, &dh);
            q[i * k..(i + 1) * k].copy_from_slice(&qi_new);
        }
        Ok(())
    }
}

/// Fits the ranking model; returns the model and its per-sweep loss trace.
pub fn fit_ranking_mf(train: &RatingDataset, cfg: &RankAlsConfig) -> Result<(FactorModel, FitTrace)> {
    cfg.mf.validate()?;
    if train.is_empty() {
        return Err(Error::NoInteractions);
    }
    let k = cfg.mf.factors;
    let problem = Problem::new(train, cfg);
    let mut rng = seeded_rng(cfg.mf.seed);
    let mut q = random_factors(train.n_items(), k, cfg.mf.init_scale, &mut rng);
    for (i, &si) in problem.s.iter().enumerate() {
        if si == 0.0 && problem.raters[i].is_empty() {
            q[i * k..(i + 1) * k].iter_mut().for_each(|x| *x = 0.0);
        }
    }
    let mut p = random_factors(train.n_users(), k, cfg.mf.init_scale, &mut rng);
    let mut trace = FitTrace::default();
    trace.losses.push(problem.loss(&p, &q));
    for sweep in 1..=cfg.mf.iterations {
        problem.user_step(&mut p, &q)?;
        problem.item_step(&p, &mut q)?;
        let loss = problem.loss(&p, &q);
        check_finite(FactorAlgorithm::RankAls, sweep, loss, p.iter().chain(&q))?;
        log::debug!("rank-als sweep {sweep}: loss {loss:.6e}");
        trace.losses.push(loss);
    }
    let model = FactorModel::new(FactorAlgorithm::RankAls, cfg.mf, train.n_users(), train.n_items(), p, q);
    Ok((model, trace))
}
