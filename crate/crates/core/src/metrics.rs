//! Accuracy and popularity-bias metrics over a set of final lists.
//!
//! Per-user terms are reduced with [`stable_mean`], so results do not depend
//! on list order or on how the work was split across threads.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{IdIndex, RatingDataset};
use crate::linalg::{stable_mean, stable_sum};
use crate::popularity::{ItemPopularity, PopularityDistribution, PopularityPartition, UserGroup, UserGroupAssignment};
use crate::rerank::{js_divergence, list_distribution, Method, RecommendationList};

/// Share of the list found in the user's test items; `None` when the user has
/// no relevant test item. Items rated below `threshold` do not count.
pub fn user_precision(
    list: &RecommendationList,
    test: &RatingDataset,
    n: usize,
    threshold: Option<f64>,
) -> Option<f64> {
    if list.user as usize >= test.n_users() {
        return None;
    }
    let relevant: Vec<u32> = test
        .profile(list.user)
        .iter()
        .filter(|x| threshold.is_none_or(|t| x.rating >= t))
        .map(|x| x.item)
        .collect();
    if relevant.is_empty() {
        return None;
    }
    let hits = list.items.iter().filter(|i| relevant.binary_search(i).is_ok()).count();
    Some(hits as f64 / n as f64)
}

/// Mean precision over users that have relevant test items.
pub fn precision_at_n(
    lists: &[RecommendationList],
    test: &RatingDataset,
    n: usize,
    threshold: Option<f64>,
) -> Result<f64> {
    let per_user: Vec<f64> = lists
        .par_iter()
        .filter_map(|l| user_precision(l, test, n, threshold))
        .collect();
    stable_mean(per_user).ok_or_else(|| Error::data("no evaluated user has test items"))
}

/// Mean over users of the mean item popularity in their list. With
/// `normalize`, popularity is divided by the number of training users.
pub fn arp(lists: &[RecommendationList], pop: &ItemPopularity, normalize: bool) -> Result<f64> {
    let scale = if normalize { pop.n_users() as f64 } else { 1.0 };
    let per_user = lists
        .iter()
        .filter(|l| !l.is_empty())
        .map(|l| stable_sum(l.items.iter().map(|&i| pop.phi(i) as f64 / scale)) / l.len() as f64);
    stable_mean(per_user).ok_or_else(|| Error::data("no non-empty list to evaluate"))
}

/// Distinct recommended items over the catalog size.
pub fn agg_div(lists: &[RecommendationList], catalog_size: usize) -> Result<f64> {
    if catalog_size == 0 {
        return Err(Error::data("empty catalog"));
    }
    let mut seen: Vec<u32> = lists.iter().flat_map(|l| l.items.iter().copied()).collect();
    seen.sort_unstable();
    seen.dedup();
    Ok(seen.len() as f64 / catalog_size as f64)
}

/// Recommendation count per item index.
pub fn exposure_counts(lists: &[RecommendationList], n_items: usize) -> Vec<u64> {
    let mut c = vec![0u64; n_items];
    for l in lists {
        for &i in &l.items {
            c[i as usize] += 1;
        }
    }
    c
}

/// Gini index of a frequency vector: with values sorted ascending and
/// normalised to probabilities, `sum_k (2k - N - 1) p_k / (N - 1)`.
/// Uniform gives 0, all mass on one item gives 1.
pub fn gini_of_counts(counts: &[u64]) -> f64 {
    let n = counts.len();
    let total: u64 = counts.iter().sum();
    if n < 2 || total == 0 {
        return 0.0;
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let terms = sorted
        .iter()
        .enumerate()
        .map(|(k, &c)| (2.0 * (k + 1) as f64 - n as f64 - 1.0) * c as f64 / total as f64);
    (stable_sum(terms) / (n - 1) as f64).clamp(0.0, 1.0)
}

/// Gini over every catalog item, never-recommended ones included.
pub fn gini(lists: &[RecommendationList], pop: &ItemPopularity) -> f64 {
    let counts = exposure_counts(lists, pop.n_items());
    let catalog: Vec<u64> = (0..pop.n_items())
        .filter(|&i| pop.in_catalog(i as u32))
        .map(|i| counts[i])
        .collect();
    gini_of_counts(&catalog)
}

/// Calibration gap of every list against the user's profile distribution.
pub fn user_divergences(
    lists: &[RecommendationList],
    profiles: &[PopularityDistribution],
    part: &PopularityPartition,
) -> Result<Vec<f64>> {
    lists
        .par_iter()
        .map(|l| {
            let p = profiles
                .get(l.user as usize)
                .ok_or_else(|| Error::data(format!("no profile distribution for user {}", l.user)))?;
            Ok(js_divergence(p, &list_distribution(l, part)?))
        })
        .collect()
}

/// Popularity deviation, overall and per user group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Upd {
    /// Mean of the three group values.
    pub overall: f64,
    pub per_group: [f64; 3],
    /// Plain mean over users, for sensitivity checks.
    pub user_mean: f64,
}

/// Group-first averaging of per-user divergences (aligned with `lists`).
pub fn upd_from_divergences(lists: &[RecommendationList], jsd: &[f64], groups: &UserGroupAssignment) -> Result<Upd> {
    let mut by_group: [Vec<f64>; 3] = Default::default();
    for (l, &d) in lists.iter().zip(jsd) {
        by_group[groups.group(l.user).index()].push(d);
    }
    let mut per_group = [0.0; 3];
    for (g, vals) in UserGroup::ALL.iter().zip(by_group) {
        per_group[g.index()] =
            stable_mean(vals).ok_or_else(|| Error::data(format!("user group {g} has no evaluated user")))?;
    }
    Ok(Upd {
        overall: stable_mean(per_group).expect("three groups"),
        per_group,
        user_mean: stable_mean(jsd.iter().copied()).expect("non-empty"),
    })
}

pub fn upd(
    lists: &[RecommendationList],
    profiles: &[PopularityDistribution],
    part: &PopularityPartition,
    groups: &UserGroupAssignment,
) -> Result<Upd> {
    let jsd = user_divergences(lists, profiles, part)?;
    upd_from_divergences(lists, &jsd, groups)
}

/// Per-item exposure and the descending counts of recommended items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExposureHistogram {
    pub counts: Vec<u64>,
    pub sorted: Vec<u64>,
}

impl ExposureHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// The most common exposure value among recommended items and the share
    /// of recommended items that have it (larger value wins ties).
    pub fn plateau(&self) -> Option<(u64, f64)> {
        let mut best: Option<(u64, usize)> = None;
        let mut k = 0;
        while k < self.sorted.len() {
            let v = self.sorted[k];
            let run = self.sorted[k..].iter().take_while(|&&x| x == v).count();
            if best.is_none_or(|(_, r)| run > r) {
                best = Some((v, run));
            }
            k += run;
        }
        best.map(|(v, r)| (v, r as f64 / self.sorted.len() as f64))
    }
}

pub fn exposure_histogram(lists: &[RecommendationList], n_items: usize) -> ExposureHistogram {
    let counts = exposure_counts(lists, n_items);
    let mut sorted: Vec<u64> = counts.iter().copied().filter(|&c| c > 0).collect();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    ExposureHistogram { counts, sorted }
}

/// Mean (H, M, T) share per user group; rows indexed by group. Item sets are
/// `(user, items)` pairs, e.g. final lists or training profiles. Groups
/// without members get a zero row.
pub fn group_composition<'a>(
    sets: impl IntoIterator<Item = (u32, &'a [u32])>,
    part: &PopularityPartition,
    groups: &UserGroupAssignment,
) -> Result<[[f64; 3]; 3]> {
    let mut shares: [[Vec<f64>; 3]; 3] = Default::default();
    for (u, items) in sets {
        let mut c = [0.0; 3];
        for &i in items {
            let g = part
                .group(i)
                .ok_or_else(|| Error::data(format!("item {i} is outside the training catalog")))?;
            c[g.index()] += 1.0;
        }
        let Some(d) = PopularityDistribution::from_mass(c) else {
            continue;
        };
        let row = &mut shares[groups.group(u).index()];
        for k in 0..3 {
            row[k].push(d.0[k]);
        }
    }
    Ok(shares.map(|row| row.map(|v| stable_mean(v).unwrap_or(0.0))))
}

pub fn list_composition(
    lists: &[RecommendationList],
    part: &PopularityPartition,
    groups: &UserGroupAssignment,
) -> Result<[[f64; 3]; 3]> {
    group_composition(lists.iter().map(|l| (l.user, l.items.as_slice())), part, groups)
}

/// Unweighted profile composition of each user group.
pub fn profile_composition(
    train: &RatingDataset,
    part: &PopularityPartition,
    groups: &UserGroupAssignment,
) -> Result<[[f64; 3]; 3]> {
    let profiles: Vec<Vec<u32>> = (0..train.n_users() as u32)
        .map(|u| {
            train
                .profile(u)
                .iter()
                .map(|x| x.item)
                .filter(|&i| part.group(i).is_some())
                .collect()
        })
        .collect();
    group_composition(
        profiles.iter().enumerate().map(|(u, p)| (u as u32, p.as_slice())),
        part,
        groups,
    )
}

/// Everything needed to score a set of lists.
pub struct EvalContext<'a> {
    pub test: &'a RatingDataset,
    pub pop: &'a ItemPopularity,
    pub part: &'a PopularityPartition,
    /// Rating-weighted profile distributions, by user.
    pub profiles: &'a [PopularityDistribution],
    pub groups: &'a UserGroupAssignment,
    pub n: usize,
    pub relevance_threshold: Option<f64>,
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: Method,
    pub lambda: Option<f64>,
    pub precision: f64,
    pub agg_div: f64,
    pub gini: f64,
    /// Popularity normalised by the number of training users.
    pub arp: f64,
    pub arp_raw: f64,
    pub upd: f64,
    pub upd_per_group: [f64; 3],
    pub upd_user_mean: f64,
    /// Lists whose method constraint could not be met.
    pub violations: usize,
}

/// Per-user detail behind a report.
#[derive(Debug, Clone, PartialEq)]
pub struct UserDetail {
    pub user: u32,
    pub group: UserGroup,
    pub jsd: f64,
    pub precision: Option<f64>,
}

pub fn evaluate(
    lists: &[RecommendationList],
    ctx: &EvalContext<'_>,
    method: Method,
    lambda: Option<f64>,
) -> Result<(MetricReport, Vec<UserDetail>)> {
    let jsd = user_divergences(lists, ctx.profiles, ctx.part)?;
    let upd = upd_from_divergences(lists, &jsd, ctx.groups)?;
    let report = MetricReport {
        method,
        lambda,
        precision: precision_at_n(lists, ctx.test, ctx.n, ctx.relevance_threshold)?,
        agg_div: agg_div(lists, ctx.pop.catalog_size())?,
        gini: gini(lists, ctx.pop),
        arp: arp(lists, ctx.pop, true)?,
        arp_raw: arp(lists, ctx.pop, false)?,
        upd: upd.overall,
        upd_per_group: upd.per_group,
        upd_user_mean: upd.user_mean,
        violations: lists.iter().filter(|l| l.constraint_violated).count(),
    };
    let detail = lists
        .iter()
        .zip(&jsd)
        .map(|(l, &d)| UserDetail {
            user: l.user,
            group: ctx.groups.group(l.user),
            jsd: d,
            precision: user_precision(l, ctx.test, ctx.n, ctx.relevance_threshold),
        })
        .collect();
    Ok((report, detail))
}

const REPORT_HEADER: [&str; 13] = [
    "method",
    "lambda",
    "precision",
    "agg_div",
    "gini",
    "arp",
    "arp_raw",
    "upd",
    "upd_g1",
    "upd_g2",
    "upd_g3",
    "upd_user_mean",
    "violations",
];

pub fn write_report_csv<W: Write>(rows: &[MetricReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.name().to_owned(),
            r.lambda.map(|l| l.to_string()).unwrap_or_default(),
            r.precision.to_string(),
            r.agg_div.to_string(),
            r.gini.to_string(),
            r.arp.to_string(),
            r.arp_raw.to_string(),
            r.upd.to_string(),
            r.upd_per_group[0].to_string(),
            r.upd_per_group[1].to_string(),
            r.upd_per_group[2].to_string(),
            r.upd_user_mean.to_string(),
            r.violations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricReport>> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(REPORT_HEADER) {
        return Err(Error::data("report CSV has an unexpected header"));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::data(format!("bad number {s:?} in report")))
    };
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(MetricReport {
                method: rec[0].parse()?,
                lambda: if rec[1].is_empty() { None } else { Some(num(&rec[1])?) },
                precision: num(&rec[2])?,
                agg_div: num(&rec[3])?,
                gini: num(&rec[4])?,
                arp: num(&rec[5])?,
                arp_raw: num(&rec[6])?,
                upd: num(&rec[7])?,
                upd_per_group: [num(&rec[8])?, num(&rec[9])?, num(&rec[10])?],
                upd_user_mean: num(&rec[11])?,
                violations: rec[12]
                    .parse()
                    .map_err(|_| Error::data("bad violation count in report"))?,
            })
        })
        .collect()
}

/// `user_id,group,jsd,precision`; precision is empty for users without test items.
pub fn write_user_detail_csv<W: Write>(rows: &[UserDetail], users: &IdIndex, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "group", "jsd", "precision"])?;
    for d in rows {
        w.write_record([
            users.id(d.user),
            d.group.code(),
            &d.jsd.to_string(),
            &d.precision.map(|p| p.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `rank,count` over recommended items, most exposed first.
pub fn write_histogram_csv<W: Write>(hist: &ExposureHistogram, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "count"])?;
    for (k, c) in hist.sorted.iter().enumerate() {
        w.write_record([(k + 1).to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `user_group,H,M,T`.
pub fn write_composition_csv<W: Write>(table: &[[f64; 3]; 3], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_group", "H", "M", "T"])?;
    for g in UserGroup::ALL {
        let row = table[g.index()];
        w.write_record([
            g.code().to_owned(),
            row[0].to_string(),
            row[1].to_string(),
            row[2].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
