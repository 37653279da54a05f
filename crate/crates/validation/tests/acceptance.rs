//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Criteria 3 to 8 need the real corpora:
//! `POPCAL_ML1M` points at the MovieLens 1M `ratings.dat` and
//! `POPCAL_LASTFM` at a tab-separated `user item plays` file. Without them
//! those criteria fail as blocked; a synthetic corpus is run through the same
//! checks and its outcome is shown for information only.
//! Run with `--release` when the corpora are present.

use std::cell::RefCell;
use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::rc::Rc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use popcal::ingest::RatingDataset;
use popcal::metrics::{
    agg_div, arp, evaluate, exposure_histogram, gini, list_composition, upd, EvalContext, MetricReport,
};
use popcal::popularity::{
    profile_distributions, ItemGroup, ItemPopularity, PopularityDistribution, PopularityPartition, UserGroup,
    UserGroupAssignment,
};
use popcal::recommenders::{Candidate, ScoredCandidates};
use popcal::rerank::{cp_objective, rerank_cp, rerank_dm, top_n, Method, RecommendationList, RerankConfig};
use popcal::runner::{
    self, checksum_tree, partition, recommend, run_experiment, split, train, DataConfig, DataFormat, ExperimentConfig,
    ModelConfig, ModelKind, PartitionConfig, Partitioned, RerankInputs, SplitConfig,
};
use popcal::synthetic::{movielens_text, playcount_text, SyntheticConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- oracles

fn oracle_arp(lists: &[Vec<u32>], phi: &[u32], n_users: usize) -> f64 {
    let per_user: Vec<f64> = lists
        .iter()
        .map(|l| l.iter().map(|&i| phi[i as usize] as f64 / n_users as f64).sum::<f64>() / l.len() as f64)
        .collect();
    per_user.iter().sum::<f64>() / per_user.len() as f64
}

fn oracle_agg_div(lists: &[Vec<u32>], catalog: usize) -> f64 {
    let mask = lists.iter().flatten().fold(0u64, |m, &i| m | (1 << i));
    mask.count_ones() as f64 / catalog as f64
}

/// Mean-absolute-difference form over the catalog, rescaled so that full
/// concentration gives 1.
fn oracle_gini(lists: &[Vec<u32>], catalog: &[u32]) -> f64 {
    let total = lists.iter().map(Vec::len).sum::<usize>() as f64;
    let p: Vec<f64> = catalog
        .iter()
        .map(|&c| lists.iter().flatten().filter(|&&i| i == c).count() as f64 / total)
        .collect();
    let n = p.len() as f64;
    let mut sum = 0.0;
    for a in &p {
        for b in &p {
            sum += (a - b).abs();
        }
    }
    sum / (2.0 * (n - 1.0))
}

/// Entropy form of the divergence, in bits.
fn oracle_jsd(p: [f64; 3], q: [f64; 3]) -> f64 {
    let h = |d: [f64; 3]| -d.iter().filter(|&&x| x > 0.0).map(|&x| x * x.log2()).sum::<f64>();
    let m = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1]), 0.5 * (p[2] + q[2])];
    h(m) - 0.5 * (h(p) + h(q))
}

fn oracle_upd(lists: &[Vec<u32>], groups_of_item: &[usize], profiles: &[[f64; 3]], user_group: &[usize]) -> [f64; 4] {
    let mut sums = [0.0; 3];
    let mut sizes = [0usize; 3];
    for (u, l) in lists.iter().enumerate() {
        let mut q = [0.0; 3];
        for &i in l {
            q[groups_of_item[i as usize]] += 1.0 / l.len() as f64;
        }
        sums[user_group[u]] += oracle_jsd(profiles[u], q);
        sizes[user_group[u]] += 1;
    }
    let g = [0, 1, 2].map(|k| sums[k] / sizes[k] as f64);
    [(g[0] + g[1] + g[2]) / 3.0, g[0], g[1], g[2]]
}

// ---------------------------------------------------------------- 1

fn c1_metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let instances = 500;
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n_items = rng.random_range(3..=10usize);
        let n_users = rng.random_range(3..=5usize);
        let mut phi: Vec<u32> = (0..n_items).map(|_| rng.random_range(0..40)).collect();
        for k in 0..3 {
            phi[k] = phi[k].max(1);
        }
        let catalog: Vec<u32> = (0..n_items as u32).filter(|&i| phi[i as usize] > 0).collect();
        let item_group: Vec<usize> = (0..n_items).map(|_| rng.random_range(0..3)).collect();
        let lists: Vec<Vec<u32>> = (0..n_users)
            .map(|_| {
                let len = rng.random_range(1..=4usize.min(catalog.len()));
                let mut pool = catalog.clone();
                (0..len)
                    .map(|_| pool.swap_remove(rng.random_range(0..pool.len())))
                    .collect()
            })
            .collect();
        let profiles: Vec<[f64; 3]> = (0..n_users)
            .map(|_| {
                let m = [0, 1, 2].map(|_| rng.random_range(0..10) as f64);
                let m = if m.iter().sum::<f64>() == 0.0 {
                    [1.0, 0.0, 0.0]
                } else {
                    m
                };
                let t: f64 = m.iter().sum();
                m.map(|x| x / t)
            })
            .collect();
        // every user group needs a member
        let mut user_group: Vec<usize> = (0..n_users).map(|u| u % 3).collect();
        for u in 3..n_users {
            user_group[u] = rng.random_range(0..3);
        }
        let pop_users = rng.random_range(n_users..100);

        let pop = ItemPopularity::from_counts(phi.clone(), pop_users);
        let part = PopularityPartition::from_groups(
            (0..n_items)
                .map(|i| (phi[i] > 0).then(|| ItemGroup::ALL[item_group[i]]))
                .collect(),
            &phi,
        )
        .map_err(|e| e.to_string())?;
        let groups = UserGroupAssignment::from_parts(
            user_group.iter().map(|&g| UserGroup::ALL[g]).collect(),
            vec![0.0; n_users],
        )
        .map_err(|e| e.to_string())?;
        let recs: Vec<RecommendationList> = lists
            .iter()
            .enumerate()
            .map(|(u, l)| RecommendationList::new(u as u32, l.clone()))
            .collect();
        let dists: Vec<PopularityDistribution> = profiles
            .iter()
            .map(|&p| PopularityDistribution::from_mass(p).unwrap())
            .collect();

        let got_upd = upd(&recs, &dists, &part, &groups).map_err(|e| e.to_string())?;
        let want_upd = oracle_upd(&lists, &item_group, &profiles, &user_group);
        let pairs = [
            (
                arp(&recs, &pop, true).map_err(|e| e.to_string())?,
                oracle_arp(&lists, &phi, pop_users),
            ),
            (
                agg_div(&recs, catalog.len()).map_err(|e| e.to_string())?,
                oracle_agg_div(&lists, catalog.len()),
            ),
            (gini(&recs, &pop), oracle_gini(&lists, &catalog)),
            (got_upd.overall, want_upd[0]),
            (got_upd.per_group[0], want_upd[1]),
            (got_upd.per_group[1], want_upd[2]),
            (got_upd.per_group[2], want_upd[3]),
        ];
        for (got, want) in pairs {
            worst = worst.max((got - want).abs());
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= 1e-12 && elapsed < Duration::from_secs(10),
        format!(
            "{instances} instances, max deviation {worst:.1e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 2

fn c2_blindness() -> Outcome {
    // items 0-3 head, 4-6 mid, 7-10 tail, 11-19 never recommended
    let groups: Vec<Option<ItemGroup>> = (0..20)
        .map(|i| {
            Some(match i {
                0..=3 => ItemGroup::Head,
                4..=6 | 11..=13 => ItemGroup::Mid,
                _ => ItemGroup::Tail,
            })
        })
        .collect();
    let phi: Vec<u32> = (0..20).map(|i| 60 - 2 * i).collect();
    let part = PopularityPartition::from_groups(groups, &phi).map_err(|e| e.to_string())?;
    let pop = ItemPopularity::from_counts(phi, 100);
    let head_list = vec![0, 1, 2, 3, 4];
    let mixed_list = vec![0, 1, 5, 7, 4];
    let niche_list = vec![8, 9, 10, 6, 2];
    let unique: HashSet<u32> = [&head_list, &mixed_list, &niche_list]
        .into_iter()
        .flatten()
        .copied()
        .collect();
    if unique.len() != 11 {
        return Err(format!("fixture has {} unique items", unique.len()));
    }
    let lists = |a: &Vec<u32>, b: &Vec<u32>, c: &Vec<u32>| {
        vec![
            RecommendationList::new(0, a.clone()),
            RecommendationList::new(1, b.clone()),
            RecommendationList::new(2, c.clone()),
        ]
    };
    // algorithm 1 hands the niche list to the blockbuster fan and vice versa
    let alg1 = lists(&niche_list, &mixed_list, &head_list);
    let alg2 = lists(&head_list, &mixed_list, &niche_list);
    let profiles =
        [[0.8, 0.15, 0.05], [0.4, 0.35, 0.25], [0.1, 0.2, 0.7]].map(|p| PopularityDistribution::from_mass(p).unwrap());
    let user_groups =
        UserGroupAssignment::from_parts(vec![UserGroup::G1, UserGroup::G2, UserGroup::G3], vec![0.9, 0.5, 0.1])
            .map_err(|e| e.to_string())?;
    let catalog = pop.catalog_size();
    let m = |l: &[RecommendationList]| -> Result<[f64; 4], String> {
        Ok([
            arp(l, &pop, true).map_err(|e| e.to_string())?,
            agg_div(l, catalog).map_err(|e| e.to_string())?,
            gini(l, &pop),
            upd(l, &profiles, &part, &user_groups)
                .map_err(|e| e.to_string())?
                .overall,
        ])
    };
    let (a, b) = (m(&alg1)?, m(&alg2)?);
    check(
        a[0] == b[0] && a[1] == b[1] && a[2] == b[2] && b[3] < a[3],
        format!(
            "ARP {} / {}, Agg-Div {} / {}, Gini {} / {}, UPD {:.4} > {:.4}",
            a[0], b[0], a[1], b[1], a[2], b[2], a[3], b[3]
        ),
    )
}

// ---------------------------------------------------------------- shared pipeline

struct Prepared {
    test: RatingDataset,
    parts: Partitioned,
    weighted: Vec<PopularityDistribution>,
    plain: Vec<PopularityDistribution>,
    cands: Vec<ScoredCandidates>,
    split_partition_time: Duration,
    started: Instant,
}

const N: usize = 10;
const M: usize = 100;

impl Prepared {
    fn build(data: &DataConfig, model: ModelKind) -> Result<Self, String> {
        let started = Instant::now();
        let (ds, _) = runner::ingest(data).map_err(|e| e.to_string())?;
        let t = Instant::now();
        let sp = split(&ds, &SplitConfig::default()).map_err(|e| e.to_string())?;
        let parts = partition(&sp.train, &PartitionConfig::default()).map_err(|e| e.to_string())?;
        let split_partition_time = t.elapsed();
        let cfg = ModelConfig {
            algorithm: model,
            ..Default::default()
        };
        let (base, _) = train(&sp.train, &parts.pop, &cfg).map_err(|e| e.to_string())?;
        let cands = recommend(&base, &sp.train, &parts.pop, M).map_err(|e| e.to_string())?;
        let weighted = profile_distributions(&sp.train, &parts.part, true).map_err(|e| e.to_string())?;
        let plain = profile_distributions(&sp.train, &parts.part, false).map_err(|e| e.to_string())?;
        Ok(Prepared {
            test: sp.test,
            parts,
            weighted,
            plain,
            cands,
            split_partition_time,
            started,
        })
    }

    fn lists(&self, method: Method, lambda: f64) -> Result<Vec<RecommendationList>, String> {
        let inputs = RerankInputs {
            pop: &self.parts.pop,
            part: &self.parts.part,
            weighted: &self.weighted,
            plain: &self.plain,
        };
        let cfg = RerankConfig {
            n: N,
            ..RerankConfig::default().with_lambda(lambda)
        };
        runner::rerank(&self.cands, method, &cfg, &inputs)
            .map(|o| o.lists)
            .map_err(|e| e.to_string())
    }

    fn report(
        &self,
        lists: &[RecommendationList],
        method: Method,
        lambda: Option<f64>,
    ) -> Result<MetricReport, String> {
        let ctx = EvalContext {
            test: &self.test,
            pop: &self.parts.pop,
            part: &self.parts.part,
            profiles: &self.weighted,
            groups: &self.parts.groups,
            n: N,
            relevance_threshold: None,
        };
        evaluate(lists, &ctx, method, lambda)
            .map(|(r, _)| r)
            .map_err(|e| e.to_string())
    }

    fn cell(&self, method: Method, lambda: f64) -> Result<MetricReport, String> {
        let l = self.lists(method, lambda)?;
        self.report(&l, method, (method != Method::Base).then_some(lambda))
    }
}

fn synthetic_dir() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("popcal-acceptance-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn synthetic_corpus() -> SyntheticConfig {
    SyntheticConfig {
        users: 900,
        items: 1200,
        profile: (20, 150),
        genres: 10,
        ..Default::default()
    }
}

enum Source {
    Real(DataConfig),
    StandIn(DataConfig),
}

fn movielens_source() -> Source {
    match std::env::var_os("POPCAL_ML1M") {
        Some(p) => Source::Real(DataConfig {
            path: p.into(),
            ..Default::default()
        }),
        None => {
            let path = synthetic_dir().join("ratings.dat");
            fs::write(&path, movielens_text(&synthetic_corpus())).unwrap();
            Source::StandIn(DataConfig {
                path,
                ..Default::default()
            })
        }
    }
}

fn lastfm_source() -> Source {
    match std::env::var_os("POPCAL_LASTFM") {
        Some(p) => {
            let path = PathBuf::from(p);
            let first = fs::read_to_string(&path)
                .ok()
                .and_then(|t| t.lines().next().map(str::to_owned));
            let header = first.is_some_and(|l| l.split('\t').nth(2).is_none_or(|c| c.trim().parse::<u64>().is_err()));
            Source::Real(DataConfig {
                path,
                format: DataFormat::Playcounts,
                min_profile: Some(20),
                header,
                ..Default::default()
            })
        }
        None => {
            let path = synthetic_dir().join("plays.tsv");
            fs::write(&path, playcount_text(&synthetic_corpus())).unwrap();
            Source::StandIn(DataConfig {
                path,
                format: DataFormat::Playcounts,
                min_profile: Some(20),
                header: true,
                ..Default::default()
            })
        }
    }
}

thread_local! {
    static PREPARED: RefCell<Vec<(String, ModelKind, Rc<Prepared>)>> = const { RefCell::new(Vec::new()) };
}

/// Builds the pipeline once per corpus and model.
fn prepared(var: &str, cfg: &DataConfig, model: ModelKind) -> Result<Rc<Prepared>, String> {
    let hit = PREPARED.with_borrow(|c| c.iter().find(|(v, m, _)| v == var && *m == model).map(|e| e.2.clone()));
    if let Some(p) = hit {
        return Ok(p);
    }
    let p = Rc::new(Prepared::build(cfg, model)?);
    PREPARED.with_borrow_mut(|c| c.push((var.to_owned(), model, p.clone())));
    Ok(p)
}

/// Runs `body` on the real corpus, or on the stand-in and reports blocked.
fn on_corpus(source: &Source, var: &str, model: ModelKind, body: impl Fn(&Prepared) -> Outcome) -> Outcome {
    match source {
        Source::Real(cfg) => body(&*prepared(var, cfg, model)?),
        Source::StandIn(cfg) => {
            let info = match prepared(var, cfg, model).and_then(|p| body(&p).map_err(|e| format!("would fail: {e}"))) {
                Ok(d) => format!("would pass: {d}"),
                Err(e) => e,
            };
            Err(format!("blocked, {var} is not set; synthetic stand-in {info}"))
        }
    }
}

// ---------------------------------------------------------------- 3-8

fn c3_partition(p: &Prepared) -> Outcome {
    let head = p.parts.part.sizes()[0];
    let share = p.parts.part.shares()[0];
    let t = p.split_partition_time;
    check(
        head.abs_diff(111) <= 2 && share >= 0.2 && t < Duration::from_secs(30),
        format!(
            "|H| = {head}, head share {share:.4}, split + partition {:.2}s",
            t.as_secs_f64()
        ),
    )
}

fn c4_most_popular(p: &Prepared) -> Outcome {
    let lists = p.lists(Method::Base, 0.0)?;
    let comp = list_composition(&lists, &p.parts.part, &p.parts.groups).map_err(|e| e.to_string())?;
    let heads = comp.map(|row| row[0]);
    check(
        heads.iter().all(|&h| h >= 0.99),
        format!(
            "head share per user group {:.4} {:.4} {:.4}",
            heads[0], heads[1], heads[2]
        ),
    )
}

fn c5_cp_direction(p: &Prepared) -> Outcome {
    let base = p.cell(Method::Base, 0.0)?;
    let cp = p.cell(Method::Cp, 0.9)?;
    let elapsed = p.started.elapsed();
    let drop = 1.0 - cp.upd / base.upd;
    check(
        drop >= 0.4 && cp.gini < base.gini && cp.agg_div > base.agg_div && cp.arp < base.arp
            && elapsed < Duration::from_secs(1800),
        format!(
            "UPD {:.4} -> {:.4} ({:.0}% drop), Gini {:.4} -> {:.4}, Agg-Div {:.4} -> {:.4}, ARP {:.4} -> {:.4}, pipeline {:.0}s",
            base.upd,
            cp.upd,
            100.0 * drop,
            base.gini,
            cp.gini,
            base.agg_div,
            cp.agg_div,
            base.arp,
            cp.arp,
            elapsed.as_secs_f64()
        ),
    )
}

fn c6_lastfm(p: &Prepared) -> Outcome {
    let base = p.cell(Method::Base, 0.0)?;
    let cp = p.cell(Method::Cp, 0.9)?;
    check(
        cp.upd < base.upd && cp.gini < base.gini && cp.agg_div > base.agg_div && cp.arp < base.arp,
        format!(
            "UPD {:.4} -> {:.4}, Gini {:.4} -> {:.4}, Agg-Div {:.4} -> {:.4}, ARP {:.4} -> {:.4}",
            base.upd, cp.upd, base.gini, cp.gini, base.agg_div, cp.agg_div, base.arp, cp.arp
        ),
    )
}

fn spread(g: [f64; 3]) -> f64 {
    g.iter().copied().fold(f64::MIN, f64::max) - g.iter().copied().fold(f64::MAX, f64::min)
}

fn c7_group_order(p: &Prepared) -> Outcome {
    let base = p.cell(Method::Base, 0.0)?;
    let cp = p.cell(Method::Cp, 0.9)?;
    let [g1, g2, g3] = base.upd_per_group;
    let (sb, sc) = (spread(base.upd_per_group), spread(cp.upd_per_group));
    check(
        g3 > g2 && g2 > g1 && sc <= 0.5 * sb,
        format!("Base G1 {g1:.4} G2 {g2:.4} G3 {g3:.4}; spread {sb:.4} -> {sc:.4} under CP"),
    )
}

fn c8_dm_plateau(p: &Prepared) -> Outcome {
    let lists = p.lists(Method::Dm, 0.9)?;
    let h = exposure_histogram(&lists, p.parts.pop.n_items());
    // low means at most the uniform per-item share of all recommendation slots
    let low = (lists.len() * N).div_ceil(p.parts.pop.catalog_size()) as u64;
    let mut best = (0u64, 0.0f64);
    let values: BTreeSet<u64> = h.sorted.iter().copied().filter(|&v| v <= low).collect();
    for v in values {
        let share = h.sorted.iter().filter(|&&x| x == v).count() as f64 / h.sorted.len() as f64;
        if share > best.1 {
            best = (v, share);
        }
    }
    check(
        best.1 >= 0.3,
        format!(
            "{:.1}% of {} recommended items at count {} (uniform share {low}, max count {})",
            100.0 * best.1,
            h.sorted.len(),
            best.0,
            h.sorted.first().copied().unwrap_or(0)
        ),
    )
}

// ---------------------------------------------------------------- 9

fn c9_lambda_zero() -> Outcome {
    let dir = synthetic_dir();
    let path = dir.join("small.dat");
    let corpus = SyntheticConfig {
        users: 200,
        items: 300,
        ..Default::default()
    };
    fs::write(&path, movielens_text(&corpus)).unwrap();
    let p = Prepared::build(
        &DataConfig {
            path,
            ..Default::default()
        },
        ModelKind::RankAls,
    )?;
    let base: Vec<RecommendationList> = p
        .cands
        .iter()
        .map(|c| top_n(c, N))
        .collect::<popcal::Result<_>>()
        .map_err(|e| e.to_string())?;
    let items = |ls: &[RecommendationList]| ls.iter().map(|l| l.items.clone()).collect::<Vec<_>>();
    let mut mismatched = Vec::new();
    for method in Method::ALL {
        if items(&p.lists(method, 0.0)?) != items(&base) {
            mismatched.push(method.to_string());
        }
    }
    // with targets equal to the top-n exposure the lists match including
    // their flags, since no item exceeds its target
    let mut exposure = vec![0u64; p.parts.pop.n_items()];
    for &i in base.iter().flat_map(|l| &l.items) {
        exposure[i as usize] += 1;
    }
    let cfg = RerankConfig {
        n: N,
        ..RerankConfig::default().with_lambda(0.0)
    };
    let dm = rerank_dm(&p.cands, &exposure, &cfg).map_err(|e| e.to_string())?;
    if dm.lists != base || dm.relaxed {
        mismatched.push("dm with top-n targets".into());
    }
    check(
        mismatched.is_empty(),
        if mismatched.is_empty() {
            format!(
                "all 5 methods equal top-{N} for {} users, DM also with top-n targets",
                base.len()
            )
        } else {
            format!("differs from top-{N}: {}", mismatched.join(", "))
        },
    )
}

// ---------------------------------------------------------------- 10

fn c10_cp_greedy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let instances = 300;
    let mut worst_ratio = f64::INFINITY;
    let mut worst_gap = 0.0f64;
    for _ in 0..instances {
        let m = rng.random_range(2..=8usize);
        let n = rng.random_range(1..=4usize.min(m));
        let groups: Vec<Option<ItemGroup>> = (0..m).map(|_| Some(ItemGroup::ALL[rng.random_range(0..3)])).collect();
        let part = PopularityPartition::from_groups(groups, &vec![1; m]).map_err(|e| e.to_string())?;
        let mut scores: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..5.0)).collect();
        scores.sort_by(|a, b| b.total_cmp(a));
        let cands = ScoredCandidates {
            user: 0,
            items: (0..m as u32)
                .map(|i| Candidate {
                    item: i,
                    score: scores[i as usize],
                })
                .collect(),
            short: false,
        };
        let mass = [0, 1, 2].map(|_| rng.random_range(0..10) as f64);
        let profile = PopularityDistribution::from_mass(if mass.iter().sum::<f64>() > 0.0 {
            mass
        } else {
            [1.0, 1.0, 1.0]
        })
        .unwrap();
        let lambda = rng.random_range(0.0..=1.0);
        let cfg = RerankConfig {
            n,
            ..RerankConfig::default().with_lambda(lambda)
        };
        let greedy = rerank_cp(&cands, &profile, &part, &cfg).map_err(|e| e.to_string())?;
        let g = cp_objective(&greedy.items, &cands, &profile, &part, lambda).map_err(|e| e.to_string())?;
        let mut opt = f64::NEG_INFINITY;
        for mask in 0u32..(1 << m) {
            if mask.count_ones() as usize == n {
                let set: Vec<u32> = (0..m as u32).filter(|i| mask & (1 << i) != 0).collect();
                opt = opt.max(cp_objective(&set, &cands, &profile, &part, lambda).map_err(|e| e.to_string())?);
            }
        }
        // 0.95 of the optimum, measured as a 5% margin of its magnitude so
        // that negative optima are not judged against a larger target
        if g < opt - 0.05 * opt.abs() - 1e-12 {
            return Err(format!(
                "greedy {g} against optimum {opt} (m {m}, n {n}, lambda {lambda:.3})"
            ));
        }
        if opt > 0.0 {
            worst_ratio = worst_ratio.min(g / opt);
        }
        worst_gap = worst_gap.max(opt - g);
    }
    Ok(format!(
        "{instances} instances, worst greedy/optimum {worst_ratio:.4}, largest shortfall {worst_gap:.2e}"
    ))
}

// ---------------------------------------------------------------- 11

fn c11_determinism() -> Outcome {
    let dir = synthetic_dir();
    let path = dir.join("determinism.dat");
    let corpus = SyntheticConfig {
        users: 150,
        items: 250,
        ..Default::default()
    };
    fs::write(&path, movielens_text(&corpus)).unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.data.path = path;
    cfg.model.factors = 16;
    cfg.model.iterations = 8;
    cfg.output.dir = dir.join("first");
    let first = run_experiment(&cfg).map_err(|e| e.to_string())?;
    cfg.output.dir = dir.join("second");
    // second run on a single worker thread
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    let second = pool.install(|| run_experiment(&cfg)).map_err(|e| e.to_string())?;
    let a = checksum_tree(&first.dir).map_err(|e| e.to_string())?;
    let mut b = checksum_tree(&second.dir).map_err(|e| e.to_string())?;
    // the manifests record their own output directory
    let csv = |t: &std::collections::BTreeMap<String, String>| {
        t.iter()
            .filter(|(k, _)| k.ends_with(".csv"))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect::<Vec<_>>()
    };
    let same_csv = csv(&a) == csv(&b);
    b.remove("manifest.toml");
    let mut a_rest = a.clone();
    a_rest.remove("manifest.toml");
    check(
        same_csv && a_rest == b,
        format!("{} files compared, {} CSV", a_rest.len(), csv(&a).len()),
    )
}

// ---------------------------------------------------------------- harness

fn main() {
    let ml = movielens_source();
    let lf = lastfm_source();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("metric oracle suite", Box::new(c1_metric_oracle)),
        ("blindness of item-side metrics", Box::new(c2_blindness)),
        (
            "ML-1M head partition",
            Box::new(|| on_corpus(&ml, "POPCAL_ML1M", ModelKind::RankAls, c3_partition)),
        ),
        (
            "ML-1M Most-Popular composition",
            Box::new(|| on_corpus(&ml, "POPCAL_ML1M", ModelKind::MostPopular, c4_most_popular)),
        ),
        (
            "ML-1M CP direction",
            Box::new(|| on_corpus(&ml, "POPCAL_ML1M", ModelKind::RankAls, c5_cp_direction)),
        ),
        (
            "Last.fm CP wins all bias metrics",
            Box::new(|| on_corpus(&lf, "POPCAL_LASTFM", ModelKind::RankAls, c6_lastfm)),
        ),
        (
            "ML-1M per-group UPD ordering",
            Box::new(|| on_corpus(&ml, "POPCAL_ML1M", ModelKind::RankAls, c7_group_order)),
        ),
        (
            "ML-1M DM exposure plateau",
            Box::new(|| on_corpus(&ml, "POPCAL_ML1M", ModelKind::RankAls, c8_dm_plateau)),
        ),
        ("lambda = 0 identities", Box::new(c9_lambda_zero)),
        ("CP greedy quality", Box::new(c10_cp_greedy)),
        ("sweep determinism", Box::new(c11_determinism)),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {:>2}  {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {:>2}  {name}: {detail}", k + 1);
            }
        }
    }
    let _ = fs::remove_dir_all(synthetic_dir());
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
