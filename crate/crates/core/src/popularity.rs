//! Item popularity, the head/mid/tail item partition, per-user popularity
//! distributions and the three popularity-affinity user groups.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{IdIndex, RatingDataset};

/// Item popularity group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ItemGroup {
    Head,
    Mid,
    Tail,
}

impl ItemGroup {
    pub const ALL: [ItemGroup; 3] = [ItemGroup::Head, ItemGroup::Mid, ItemGroup::Tail];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> &'static str {
        match self {
            ItemGroup::Head => "H",
            ItemGroup::Mid => "M",
            ItemGroup::Tail => "T",
        }
    }

    pub fn is_long_tail(self) -> bool {
        self != ItemGroup::Head
    }
}

impl fmt::Display for ItemGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ItemGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "H" => Ok(ItemGroup::Head),
            "M" => Ok(ItemGroup::Mid),
            "T" => Ok(ItemGroup::Tail),
            _ => Err(Error::data(format!("unknown item group {s:?}"))),
        }
    }
}

/// User popularity-affinity group: G1 blockbuster-focused, G2 diverse, G3 niche.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UserGroup {
    G1,
    G2,
    G3,
}

impl UserGroup {
    pub const ALL: [UserGroup; 3] = [UserGroup::G1, UserGroup::G2, UserGroup::G3];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> &'static str {
        match self {
            UserGroup::G1 => "G1",
            UserGroup::G2 => "G2",
            UserGroup::G3 => "G3",
        }
    }
}

impl fmt::Display for UserGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for UserGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "G1" => Ok(UserGroup::G1),
            "G2" => Ok(UserGroup::G2),
            "G3" => Ok(UserGroup::G3),
            _ => Err(Error::data(format!("unknown user group {s:?}"))),
        }
    }
}

/// Per-item training rating counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemPopularity {
    phi: Vec<u32>,
    total: u64,
    n_users: usize,
}

impl ItemPopularity {
    pub fn from_counts(phi: Vec<u32>, n_users: usize) -> Self {
        let total = phi.iter().map(|&c| c as u64).sum();
        ItemPopularity { phi, total, n_users }
    }

    pub fn phi(&self, item: u32) -> u32 {
        self.phi[item as usize]
    }

    pub fn counts(&self) -> &[u32] {
        &self.phi
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Number of users in the training set, the normaliser for ARP.
    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.phi.len()
    }

    /// Items with at least one training rating.
    pub fn in_catalog(&self, item: u32) -> bool {
        self.phi[item as usize] > 0
    }

    pub fn catalog_size(&self) -> usize {
        self.phi.iter().filter(|&&c| c > 0).count()
    }
}

pub fn compute_popularity(train: &RatingDataset) -> Result<ItemPopularity> {
    if train.is_empty() {
        return Err(Error::NoInteractions);
    }
    let mut phi = vec![0u32; train.n_items()];
    for x in train.interactions() {
        phi[x.item as usize] += 1;
    }
    Ok(ItemPopularity::from_counts(phi, train.n_users()))
}

/// Head/mid/tail assignment over the training catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct PopularityPartition {
    group_of: Vec<Option<ItemGroup>>,
    /// Catalog items sorted by `(phi desc, index asc)`.
    ranking: Vec<u32>,
    head_len: usize,
    mid_len: usize,
    shares: [f64; 3],
}

impl PopularityPartition {
    /// Group of a training-catalog item; `None` for items never rated in train.
    pub fn group(&self, item: u32) -> Option<ItemGroup> {
        self.group_of.get(item as usize).copied().flatten()
    }

    pub fn ranking(&self) -> &[u32] {
        &self.ranking
    }

    /// Ranks (1-based) of the last head item and the last mid item.
    pub fn boundaries(&self) -> (usize, usize) {
        (self.head_len, self.head_len + self.mid_len)
    }

    pub fn sizes(&self) -> [usize; 3] {
        [
            self.head_len,
            self.mid_len,
            self.ranking.len() - self.head_len - self.mid_len,
        ]
    }

    /// Realised rating-mass shares of H, M and T.
    pub fn shares(&self) -> [f64; 3] {
        self.shares
    }

    pub fn n_items(&self) -> usize {
        self.group_of.len()
    }

    pub fn catalog_size(&self) -> usize {
        self.ranking.len()
    }

    /// Rebuilds a partition from explicit labels (e.g. a partition CSV).
    pub fn from_groups(group_of: Vec<Option<ItemGroup>>, phi: &[u32]) -> Result<Self> {
        if group_of.len() != phi.len() {
            return Err(Error::data("partition and popularity cover different item sets"));
        }
        let mut ranking: Vec<u32> = (0..phi.len() as u32)
            .filter(|&i| group_of[i as usize].is_some())
            .collect();
        ranking.sort_by_key(|&i| (std::cmp::Reverse(phi[i as usize]), i));
        let mut sizes = [0usize; 3];
        let mut mass = [0u64; 3];
        for &i in &ranking {
            let g = group_of[i as usize].unwrap().index();
            sizes[g] += 1;
            mass[g] += phi[i as usize] as u64;
        }
        let total: u64 = mass.iter().sum();
        let total = total.max(1) as f64;
        Ok(PopularityPartition {
            group_of,
            ranking,
            head_len: sizes[0],
            mid_len: sizes[1],
            shares: mass.map(|m| m as f64 / total),
        })
    }
}

/// Pareto partition: H is the shortest prefix of the popularity ranking whose
/// rating share reaches `head_share`; T is the longest suffix whose share stays
/// within `tail_share`; M is everything between.
pub fn partition_items(pop: &ItemPopularity, head_share: f64, tail_share: f64) -> Result<PopularityPartition> {
    if !(head_share > 0.0 && tail_share > 0.0 && head_share + tail_share < 1.0) {
        return Err(Error::config(format!(
            "partition shares must be positive with sum below 1, got {head_share} and {tail_share}"
        )));
    }
    let phi = pop.counts();
    let mut ranking: Vec<u32> = (0..phi.len() as u32).filter(|&i| phi[i as usize] > 0).collect();
    if ranking.len() < 3 {
        return Err(Error::data(format!(
            "cannot partition a catalog of {} items",
            ranking.len()
        )));
    }
    ranking.sort_by_key(|&i| (std::cmp::Reverse(phi[i as usize]), i));
    let total = pop.total() as f64;
    let eps = 1e-12;

    let mut cum = 0u64;
    let mut head_len = 0;
    for &i in &ranking {
        cum += phi[i as usize] as u64;
        head_len += 1;
        if cum as f64 / total >= head_share - eps {
            break;
        }
    }

    let mut tail_len = 0;
    let mut cum = 0u64;
    for &i in ranking[head_len..].iter().rev() {
        let next = cum + phi[i as usize] as u64;
        if next as f64 / total > tail_share + eps {
            break;
        }
        cum = next;
        tail_len += 1;
    }
    let mid_len = ranking.len() - head_len - tail_len;

    let mut group_of = vec![None; phi.len()];
    let mut mass = [0u64; 3];
    for (rank, &i) in ranking.iter().enumerate() {
        let g = if rank < head_len {
            ItemGroup::Head
        } else if rank < head_len + mid_len {
            ItemGroup::Mid
        } else {
            ItemGroup::Tail
        };
        group_of[i as usize] = Some(g);
        mass[g.index()] += phi[i as usize] as u64;
    }
    Ok(PopularityPartition {
        group_of,
        ranking,
        head_len,
        mid_len,
        shares: mass.map(|m| m as f64 / total),
    })
}

/// Distribution over (H, M, T).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopularityDistribution(pub [f64; 3]);

impl PopularityDistribution {
    /// Normalises non-negative masses; `None` if the total mass is zero.
    pub fn from_mass(mass: [f64; 3]) -> Option<Self> {
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) || mass.iter().any(|&m| m < 0.0) {
            return None;
        }
        Some(PopularityDistribution(mass.map(|m| m / total)))
    }

    pub fn probs(&self) -> &[f64; 3] {
        &self.0
    }

    pub fn get(&self, group: ItemGroup) -> f64 {
        self.0[group.index()]
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|&p| p >= 0.0 && p.is_finite()) && (self.0.iter().sum::<f64>() - 1.0).abs() <= 1e-9
    }
}

/// The user's propensity over (H, M, T). With `weighted`, each profile item
/// contributes its rating; otherwise each contributes one.
pub fn profile_distribution(
    user: u32,
    train: &RatingDataset,
    part: &PopularityPartition,
    weighted: bool,
) -> Result<PopularityDistribution> {
    let mut mass = [0.0f64; 3];
    for x in train.profile(user) {
        if let Some(g) = part.group(x.item) {
            mass[g.index()] += if weighted { x.rating } else { 1.0 };
        }
    }
    PopularityDistribution::from_mass(mass)
        .ok_or_else(|| Error::data(format!("user {} has no training profile", train.user_id(user))))
}

/// Profile distributions for every user, indexed by user.
pub fn profile_distributions(
    train: &RatingDataset,
    part: &PopularityPartition,
    weighted: bool,
) -> Result<Vec<PopularityDistribution>> {
    (0..train.n_users() as u32)
        .map(|u| profile_distribution(u, train, part, weighted))
        .collect()
}

/// Users ranked by affinity for head items and cut into thirds.
#[derive(Debug, Clone, PartialEq)]
pub struct UserGroupAssignment {
    group_of: Vec<UserGroup>,
    affinity: Vec<f64>,
}

impl UserGroupAssignment {
    pub fn group(&self, user: u32) -> UserGroup {
        self.group_of[user as usize]
    }

    pub fn affinity(&self, user: u32) -> f64 {
        self.affinity[user as usize]
    }

    pub fn groups(&self) -> &[UserGroup] {
        &self.group_of
    }

    pub fn n_users(&self) -> usize {
        self.group_of.len()
    }

    pub fn members(&self, group: UserGroup) -> Vec<u32> {
        (0..self.group_of.len() as u32)
            .filter(|&u| self.group_of[u as usize] == group)
            .collect()
    }

    pub fn sizes(&self) -> [usize; 3] {
        let mut s = [0; 3];
        for g in &self.group_of {
            s[g.index()] += 1;
        }
        s
    }

    pub fn from_parts(group_of: Vec<UserGroup>, affinity: Vec<f64>) -> Result<Self> {
        if group_of.len() != affinity.len() {
            return Err(Error::data("group and affinity vectors differ in length"));
        }
        Ok(UserGroupAssignment { group_of, affinity })
    }
}

/// Share of head items in each user's profile; rating-weighted with `weighted`.
pub fn head_affinity(train: &RatingDataset, part: &PopularityPartition, weighted: bool) -> Vec<f64> {
    (0..train.n_users() as u32)
        .map(|u| {
            let (mut head, mut all) = (0.0, 0.0);
            for x in train.profile(u) {
                if let Some(g) = part.group(x.item) {
                    let w = if weighted { x.rating } else { 1.0 };
                    all += w;
                    if g == ItemGroup::Head {
                        head += w;
                    }
                }
            }
            if all > 0.0 {
                head / all
            } else {
                0.0
            }
        })
        .collect()
}

/// Cuts users, sorted by descending head affinity (ties by index), into
/// thirds; the first `n % 3` groups take one extra member.
pub fn group_users(train: &RatingDataset, part: &PopularityPartition, weighted: bool) -> UserGroupAssignment {
    let affinity = head_affinity(train, part, weighted);
    let n = affinity.len();
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| affinity[b as usize].total_cmp(&affinity[a as usize]).then(a.cmp(&b)));
    let base = n / 3;
    let rem = n % 3;
    let sizes = [base + (rem > 0) as usize, base + (rem > 1) as usize, base];
    let mut group_of = vec![UserGroup::G1; n];
    let mut pos = 0;
    for (g, &size) in UserGroup::ALL.iter().zip(&sizes) {
        for &u in &order[pos..pos + size] {
            group_of[u as usize] = *g;
        }
        pos += size;
    }
    UserGroupAssignment { group_of, affinity }
}

/// Writes `item_id,phi,group` for catalog items in popularity order.
pub fn write_partition_csv<W: Write>(
    part: &PopularityPartition,
    pop: &ItemPopularity,
    items: &IdIndex,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["item_id", "phi", "group"])?;
    for &i in part.ranking() {
        let g = part.group(i).expect("ranked items are grouped");
        w.write_record([items.id(i), &pop.phi(i).to_string(), g.code()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a partition CSV against an existing item index; items missing from
/// the file are outside the catalog. Returns the partition and the phi table.
pub fn read_partition_csv<R: Read>(
    input: R,
    items: &IdIndex,
    n_users: usize,
) -> Result<(PopularityPartition, ItemPopularity)> {
    let mut r = csv::Reader::from_reader(input);
    let mut group_of = vec![None; items.len()];
    let mut phi = vec![0u32; items.len()];
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::data(format!(
                "partition row has {} fields, expected 3",
                rec.len()
            )));
        }
        let i = items
            .get(&rec[0])
            .ok_or_else(|| Error::data(format!("partition names unknown item {:?}", &rec[0])))?;
        phi[i as usize] = rec[1]
            .parse()
            .map_err(|_| Error::data(format!("bad phi {:?}", &rec[1])))?;
        group_of[i as usize] = Some(rec[2].parse()?);
    }
    let part = PopularityPartition::from_groups(group_of, &phi)?;
    Ok((part, ItemPopularity::from_counts(phi, n_users)))
}

/// Writes `user_id,affinity,group` in user index order.
pub fn write_user_groups_csv<W: Write>(groups: &UserGroupAssignment, users: &IdIndex, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "affinity", "group"])?;
    for u in 0..groups.n_users() as u32 {
        w.write_record([users.id(u), &groups.affinity(u).to_string(), groups.group(u).code()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_user_groups_csv<R: Read>(input: R, users: &IdIndex) -> Result<UserGroupAssignment> {
    let mut r = csv::Reader::from_reader(input);
    let mut group_of = vec![None; users.len()];
    let mut affinity = vec![0.0; users.len()];
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::data(format!(
                "user-group row has {} fields, expected 3",
                rec.len()
            )));
        }
        let u = users
            .get(&rec[0])
            .ok_or_else(|| Error::data(format!("user-group file names unknown user {:?}", &rec[0])))?;
        affinity[u as usize] = rec[1]
            .parse()
            .map_err(|_| Error::data(format!("bad affinity {:?}", &rec[1])))?;
        group_of[u as usize] = Some(rec[2].parse()?);
    }
    let group_of = group_of
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::data("user-group file does not cover every user"))?;
    UserGroupAssignment::from_parts(group_of, affinity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::read_movielens;
    use crate::test_support::dataset;

    fn pop(phi: &[u32]) -> ItemPopularity {
        ItemPopularity::from_counts(phi.to_vec(), 10)
    }

    #[test]
    fn popularity_counts_fixture() {
        let mut triples = Vec::new();
        for u in 0..5 {
            triples.push((u, 0, 4.0));
        }
        for u in 0..3 {
            triples.push((u, 1, 4.0));
        }
        for u in 0..2 {
            triples.push((u, 2, 4.0));
        }
        let ds = dataset(5, 3, &triples);
        let p = compute_popularity(&ds).unwrap();
        assert_eq!(p.counts(), &[5, 3, 2]);
        assert_eq!(p.total(), ds.len() as u64);
    }

    #[test]
    fn item_rated_by_everyone() {
        let triples: Vec<_> = (0..100).map(|u| (u, 0, 3.0)).collect();
        let p = compute_popularity(&dataset(100, 1, &triples)).unwrap();
        assert_eq!(p.phi(0), 100);
    }

    #[test]
    fn uniform_ten_items() {
        let part = partition_items(&pop(&[7; 10]), 0.2, 0.2).unwrap();
        assert_eq!(part.sizes(), [2, 6, 2]);
    }

    #[test]
    fn skewed_fixture() {
        // total 100: head needs 0.5 >= 0.2 -> item0; tail from bottom: 2,3,5 = 10, +10 = 20 <= 20
        let part = partition_items(&pop(&[50, 30, 10, 5, 3, 2]), 0.2, 0.2).unwrap();
        assert_eq!(part.group(0), Some(ItemGroup::Head));
        assert_eq!(part.sizes(), [1, 1, 4]);
        assert_eq!(part.group(1), Some(ItemGroup::Mid));
    }

    #[test]
    fn zero_phi_items_are_outside_catalog() {
        let part = partition_items(&pop(&[5, 0, 3, 2, 1]), 0.2, 0.2).unwrap();
        assert_eq!(part.group(1), None);
        assert_eq!(part.catalog_size(), 4);
    }

    #[test]
    fn degenerate_catalog_is_error() {
        assert!(partition_items(&pop(&[5, 3]), 0.2, 0.2).is_err());
        assert!(partition_items(&pop(&[5, 3, 1]), 0.6, 0.5).is_err());
    }

    #[test]
    fn paper_profile_example() {
        // equal rating mass 3/2/5 across H/M/T
        let ds = dataset(1, 10, &[(0, 0, 3.0), (0, 1, 2.0), (0, 2, 5.0)]);
        let part = PopularityPartition::from_groups(
            vec![
                Some(ItemGroup::Head),
                Some(ItemGroup::Mid),
                Some(ItemGroup::Tail),
                None,
                None,
                None,
                None,
                None,
                None,
                None,
            ],
            &[3, 2, 1, 0, 0, 0, 0, 0, 0, 0],
        )
        .unwrap();
        let p = profile_distribution(0, &ds, &part, true).unwrap();
        assert!((p.0[0] - 0.3).abs() < 1e-12 && (p.0[1] - 0.2).abs() < 1e-12 && (p.0[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn weighted_profile() {
        let ds = dataset(1, 3, &[(0, 0, 5.0), (0, 2, 1.0)]);
        let part = PopularityPartition::from_groups(
            vec![Some(ItemGroup::Head), Some(ItemGroup::Mid), Some(ItemGroup::Tail)],
            &[3, 2, 1],
        )
        .unwrap();
        let p = profile_distribution(0, &ds, &part, true).unwrap();
        assert_eq!(p.0, [5.0 / 6.0, 0.0, 1.0 / 6.0]);
        let q = profile_distribution(0, &ds, &part, false).unwrap();
        assert_eq!(q.0, [0.5, 0.0, 0.5]);
        let ds = dataset(1, 3, &[(0, 0, 5.0), (0, 1, 1.0)]);
        let only_head = dataset(1, 3, &[(0, 0, 2.0)]);
        assert_eq!(
            profile_distribution(0, &only_head, &part, true).unwrap().0,
            [1.0, 0.0, 0.0]
        );
        assert!(profile_distribution(0, &ds, &part, true).unwrap().is_valid());
    }

    #[test]
    fn three_users_three_groups() {
        // affinities 0.9 / 0.5 / 0.1 over 10-item profiles
        let mut triples = Vec::new();
        for (u, heads) in [(0u32, 9u32), (1, 5), (2, 1)] {
            for i in 0..10u32 {
                let item = if i < heads { i } else { 10 + i };
                triples.push((u, item, 4.0));
            }
        }
        let ds = dataset(3, 20, &triples);
        let mut groups = vec![None; 20];
        for i in 0..20 {
            groups[i] = Some(if i < 10 { ItemGroup::Head } else { ItemGroup::Tail });
        }
        let part = PopularityPartition::from_groups(groups, &[1; 20]).unwrap();
        let g = group_users(&ds, &part, false);
        assert_eq!(g.groups(), &[UserGroup::G1, UserGroup::G2, UserGroup::G3]);
        assert!((g.affinity(0) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn thirds_with_remainder() {
        let text: String = (0..6040).map(|u| format!("{u}::1::4::0\n{u}::2::4::0\n")).collect();
        let (ds, _) = read_movielens(text.as_bytes()).unwrap();
        let part = PopularityPartition::from_groups(vec![Some(ItemGroup::Head), Some(ItemGroup::Tail)], &[6040, 6040])
            .unwrap();
        let g = group_users(&ds, &part, false);
        let sizes = g.sizes();
        assert!(sizes.iter().all(|s| *s == 2013 || *s == 2014));
        assert_eq!(sizes.iter().sum::<usize>(), 6040);
        // identical affinity: split by index
        assert_eq!(g.group(0), UserGroup::G1);
        assert_eq!(g.group(6039), UserGroup::G3);
    }
}
