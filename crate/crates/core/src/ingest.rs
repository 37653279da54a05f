//! Dataset ingestion: MovieLens and play-count parsing, play-count to rating
//! conversion, sparse-user filtering and the per-user train/test split.
//!
//! Every dataset produced here uses dense `u32` indices for users and items.
//! External identifiers are kept in an [`IdIndex`] shared between the train
//! and test halves of a split, so an index means the same entity in both.

use std::collections::hash_map::Entry;
use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive bounds of the rating scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    pub min: f64,
    pub max: f64,
}

impl Default for RatingScale {
    fn default() -> Self {
        RatingScale { min: 1.0, max: 5.0 }
    }
}

impl RatingScale {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && max > min) {
            return Err(Error::config(format!(
                "rating scale requires max > min, got ({min}, {max})"
            )));
        }
        Ok(RatingScale { min, max })
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.min && r <= self.max
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }
}

/// Bijection between opaque external ids and dense indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdIndex {
    ids: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl IdIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the index of `id`, assigning the next free one if unseen.
    pub fn intern(&mut self, id: &str) -> u32 {
        match self.lookup.entry(id.to_owned()) {
            Entry::Occupied(e) => *e.get(),
            Entry::Vacant(e) => {
                let idx = self.ids.len() as u32;
                self.ids.push(id.to_owned());
                e.insert(idx);
                idx
            }
        }
    }

    pub fn get(&self, id: &str) -> Option<u32> {
        self.lookup.get(id).copied()
    }

    pub fn id(&self, idx: u32) -> &str {
        &self.ids[idx as usize]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

impl<S: AsRef<str>> FromIterator<S> for IdIndex {
    fn from_iter<T: IntoIterator<Item = S>>(iter: T) -> Self {
        let mut index = IdIndex::new();
        for id in iter {
            index.intern(id.as_ref());
        }
        index
    }
}

/// One rating event in dense index space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub rating: f64,
    pub timestamp: Option<i64>,
}

/// Deduplicated interactions, sorted by `(user, item)`, with CSR offsets per user.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingDataset {
    interactions: Vec<Interaction>,
    offsets: Vec<usize>,
    users: Arc<IdIndex>,
    items: Arc<IdIndex>,
    scale: RatingScale,
}

impl RatingDataset {
    /// Builds a dataset, validating indices, rating bounds and pair uniqueness.
    pub fn new(
        mut interactions: Vec<Interaction>,
        users: Arc<IdIndex>,
        items: Arc<IdIndex>,
        scale: RatingScale,
    ) -> Result<Self> {
        let n_users = users.len();
        let n_items = items.len();
        for x in &interactions {
            if x.user as usize >= n_users || x.item as usize >= n_items {
                return Err(Error::data(format!(
                    "interaction ({}, {}) outside index bounds ({n_users}, {n_items})",
                    x.user, x.item
                )));
            }
            if !scale.contains(x.rating) {
                return Err(Error::data(format!(
                    "rating {} outside scale [{}, {}]",
                    x.rating, scale.min, scale.max
                )));
            }
        }
        interactions.sort_by_key(|x| (x.user, x.item));
        if let Some(w) = interactions
            .windows(2)
            .find(|w| w[0].user == w[1].user && w[0].item == w[1].item)
        {
            return Err(Error::data(format!(
                "duplicate interaction for user {} item {}",
                users.id(w[0].user),
                items.id(w[0].item)
            )));
        }
        let mut offsets = vec![0usize; n_users + 1];
        for x in &interactions {
            offsets[x.user as usize + 1] += 1;
        }
        for u in 0..n_users {
            offsets[u + 1] += offsets[u];
        }
        Ok(RatingDataset {
            interactions,
            offsets,
            users,
            items,
            scale,
        })
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    /// The user's interactions, sorted by item index.
    pub fn profile(&self, user: u32) -> &[Interaction] {
        let u = user as usize;
        &self.interactions[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn users(&self) -> &Arc<IdIndex> {
        &self.users
    }

    pub fn items(&self) -> &Arc<IdIndex> {
        &self.items
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    pub fn user_id(&self, user: u32) -> &str {
        self.users.id(user)
    }

    pub fn item_id(&self, item: u32) -> &str {
        self.items.id(item)
    }

    pub fn contains(&self, user: u32, item: u32) -> bool {
        self.profile(user).binary_search_by_key(&item, |x| x.item).is_ok()
    }
}

/// Line accounting for a parse pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub lines: usize,
    pub malformed: usize,
    pub duplicates: usize,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| Error::Read {
        path: path.to_owned(),
        source,
    })
}

pub fn parse_movielens(path: impl AsRef<Path>) -> Result<(RatingDataset, ParseReport)> {
    read_movielens(open(path.as_ref())?)
}

/// Parses `UserID::MovieID::Rating::Timestamp` lines.
///
/// Duplicate `(user, item)` pairs keep the record with the latest timestamp,
/// falling back to the later line on equal timestamps.
pub fn read_movielens<R: BufRead>(reader: R) -> Result<(RatingDataset, ParseReport)> {
    struct Kept {
        rating: f64,
        timestamp: i64,
        line: usize,
    }

    let mut report = ParseReport::default();
    let mut users = IdIndex::new();
    let mut items = IdIndex::new();
    let mut kept: HashMap<(u32, u32), Kept> = HashMap::new();

    for line in reader.lines() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        let Some((user, item, rating, ts)) = parse_movielens_line(line) else {
            report.malformed += 1;
            continue;
        };
        let key = (users.intern(user), items.intern(item));
        let rec = Kept {
            rating,
            timestamp: ts,
            line: report.lines,
        };
        match kept.entry(key) {
            Entry::Vacant(e) => {
                e.insert(rec);
            }
            Entry::Occupied(mut e) => {
                report.duplicates += 1;
                let cur = e.get();
                if (rec.timestamp, rec.line) > (cur.timestamp, cur.line) {
                    e.insert(rec);
                }
            }
        }
    }

    check_malformed(&report)?;
    if kept.is_empty() {
        return Err(Error::NoInteractions);
    }
    let interactions = kept
        .into_iter()
        .map(|((user, item), k)| Interaction {
            user,
            item,
            rating: k.rating,
            timestamp: Some(k.timestamp),
        })
        .collect();
    let ds = RatingDataset::new(interactions, Arc::new(users), Arc::new(items), RatingScale::default())?;
    Ok((ds, report))
}

fn parse_movielens_line(line: &str) -> Option<(&str, &str, f64, i64)> {
    let mut parts = line.split("::");
    let user = parts.next()?;
    let item = parts.next()?;
    let rating = parts.next()?;
    let ts = parts.next()?;
    if parts.next().is_some() || user.is_empty() || item.is_empty() {
        return None;
    }
    let rating: i64 = rating.parse().ok()?;
    if !(1..=5).contains(&rating) {
        return None;
    }
    let ts: i64 = ts.parse().ok()?;
    Some((user, item, rating as f64, ts))
}

fn check_malformed(report: &ParseReport) -> Result<()> {
    // strictly more than 1% of lines
    if report.malformed * 100 > report.lines {
        return Err(Error::TooManyMalformed {
            malformed: report.malformed,
            lines: report.lines,
        });
    }
    Ok(())
}

/// Aggregated play count for one `(user, item)` pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlayCount {
    pub user: String,
    pub item: String,
    pub count: u64,
}

/// Play counts summed per pair, in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlayCountTable {
    pub entries: Vec<PlayCount>,
    pub report: ParseReport,
}

pub fn parse_playcounts(path: impl AsRef<Path>, header: bool) -> Result<PlayCountTable> {
    read_playcounts(open(path.as_ref())?, header)
}

/// Reads `user \t item \t count` rows. Non-positive or unparsable counts are
/// rejected and counted in `report.malformed`.
pub fn read_playcounts<R: BufRead>(reader: R, header: bool) -> Result<PlayCountTable> {
    let mut report = ParseReport::default();
    let mut slot: HashMap<(String, String), usize> = HashMap::new();
    let mut entries: Vec<PlayCount> = Vec::new();
    let mut skip_header = header;

    for line in reader.lines() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if skip_header {
            skip_header = false;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        let fields: Vec<&str> = line.split('\t').collect();
        let parsed = match fields.as_slice() {
            [u, i, c] if !u.is_empty() && !i.is_empty() => c
                .trim()
                .parse::<i64>()
                .ok()
                .filter(|&c| c >= 1)
                .map(|c| (*u, *i, c as u64)),
            _ => None,
        };
        let Some((user, item, count)) = parsed else {
            report.malformed += 1;
            continue;
        };
        match slot.entry((user.to_owned(), item.to_owned())) {
            Entry::Occupied(e) => {
                report.duplicates += 1;
                entries[*e.get()].count += count;
            }
            Entry::Vacant(e) => {
                e.insert(entries.len());
                entries.push(PlayCount {
                    user: user.to_owned(),
                    item: item.to_owned(),
                    count,
                });
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::NoInteractions);
    }
    Ok(PlayCountTable { entries, report })
}

/// How play counts become ratings within one user's profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum CountMapping {
    /// Per-user quantile bins spread evenly over the scale. A count's bin is
    /// `floor(K * share of the user's counts strictly below it)`.
    Quantile { levels: usize },
    /// Per-user min-max scaling of `ln(count)`.
    LogLinear,
}

impl CountMapping {
    /// Quantile binning with one level per integer step of the scale.
    pub fn quantile_for(scale: RatingScale) -> Self {
        let levels = ((scale.max - scale.min).round() as usize + 1).max(2);
        CountMapping::Quantile { levels }
    }

    pub fn name(&self) -> String {
        match self {
            CountMapping::Quantile { levels } => format!("quantile-{levels}"),
            CountMapping::LogLinear => "log-linear".to_owned(),
        }
    }
}

/// Maps one user's counts to ratings. Monotone non-decreasing in count; a
/// profile with a single distinct count maps entirely to the scale midpoint.
pub fn map_user_counts(counts: &[u64], scale: RatingScale, mapping: CountMapping) -> Vec<f64> {
    let lo = counts.iter().copied().min().unwrap_or(0);
    let hi = counts.iter().copied().max().unwrap_or(0);
    if lo == hi {
        return vec![scale.midpoint(); counts.len()];
    }
    let span = scale.max - scale.min;
    match mapping {
        CountMapping::Quantile { levels } => {
            let levels = levels.max(2);
            let mut sorted = counts.to_vec();
            sorted.sort_unstable();
            let n = counts.len();
            counts
                .iter()
                .map(|&c| {
                    let below = sorted.partition_point(|&x| x < c);
                    let bin = ((below * levels) / n).min(levels - 1);
                    scale.min + span * bin as f64 / (levels - 1) as f64
                })
                .collect()
        }
        CountMapping::LogLinear => {
            let (llo, lhi) = ((lo as f64).ln(), (hi as f64).ln());
            counts
                .iter()
                .map(|&c| {
                    let t = ((c as f64).ln() - llo) / (lhi - llo);
                    (scale.min + span * t).clamp(scale.min, scale.max)
                })
                .collect()
        }
    }
}

pub fn counts_to_ratings(table: &PlayCountTable, scale: RatingScale, mapping: CountMapping) -> Result<RatingDataset> {
    if table.entries.is_empty() {
        return Err(Error::NoInteractions);
    }
    let mut users = IdIndex::new();
    let mut items = IdIndex::new();
    let mut by_user: Vec<Vec<(u32, u64)>> = Vec::new();
    for e in &table.entries {
        let u = users.intern(&e.user) as usize;
        let i = items.intern(&e.item);
        if u == by_user.len() {
            by_user.push(Vec::new());
        }
        by_user[u].push((i, e.count));
    }
    let mut interactions = Vec::with_capacity(table.entries.len());
    for (u, profile) in by_user.iter().enumerate() {
        let counts: Vec<u64> = profile.iter().map(|&(_, c)| c).collect();
        let ratings = map_user_counts(&counts, scale, mapping);
        interactions.extend(profile.iter().zip(ratings).map(|(&(item, _), rating)| Interaction {
            user: u as u32,
            item,
            rating,
            timestamp: None,
        }));
    }
    RatingDataset::new(interactions, Arc::new(users), Arc::new(items), scale)
}

/// Drops users with fewer than `k` interactions, then drops orphaned items and
/// re-densifies both index spaces (preserving relative order). Applied once.
pub fn filter_min_profile(ds: &RatingDataset, k: usize) -> Result<RatingDataset> {
    if k == 0 {
        return Err(Error::config("min profile size must be at least 1"));
    }
    let mut user_map = vec![None; ds.n_users()];
    let mut users = IdIndex::new();
    for u in 0..ds.n_users() as u32 {
        if ds.profile(u).len() >= k {
            user_map[u as usize] = Some(users.intern(ds.user_id(u)));
        }
    }
    if users.is_empty() {
        return Err(Error::EmptyAfterFilter);
    }
    let mut item_used = vec![false; ds.n_items()];
    for x in ds.interactions() {
        if user_map[x.user as usize].is_some() {
            item_used[x.item as usize] = true;
        }
    }
    let mut items = IdIndex::new();
    let item_map: Vec<Option<u32>> = item_used
        .iter()
        .enumerate()
        .map(|(i, &used)| used.then(|| items.intern(ds.item_id(i as u32))))
        .collect();
    let interactions = ds
        .interactions()
        .iter()
        .filter_map(|x| {
            Some(Interaction {
                user: user_map[x.user as usize]?,
                item: item_map[x.item as usize]?,
                ..*x
            })
        })
        .collect();
    RatingDataset::new(interactions, Arc::new(users), Arc::new(items), ds.scale())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fold {
    Train,
    Test,
}

impl Fold {
    pub fn as_str(&self) -> &'static str {
        match self {
            Fold::Train => "train",
            Fold::Test => "test",
        }
    }
}

/// Train/test halves over the same user and item index spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: RatingDataset,
    pub test: RatingDataset,
    pub seed: u64,
}

impl SplitDataset {
    /// Rebuilds a split from an explicit set of test pairs.
    pub fn from_test_pairs(ds: &RatingDataset, test_pairs: &HashSet<(u32, u32)>, seed: u64) -> Result<Self> {
        let (test, train): (Vec<Interaction>, Vec<Interaction>) = ds
            .interactions()
            .iter()
            .partition(|x| test_pairs.contains(&(x.user, x.item)));
        if test.len() != test_pairs.len() {
            return Err(Error::data("split references interactions absent from the dataset"));
        }
        Ok(SplitDataset {
            train: RatingDataset::new(train, ds.users().clone(), ds.items().clone(), ds.scale())?,
            test: RatingDataset::new(test, ds.users().clone(), ds.items().clone(), ds.scale())?,
            seed,
        })
    }

    /// Users with at least one test interaction; the rest are not evaluated.
    pub fn test_users(&self) -> Vec<u32> {
        (0..self.test.n_users() as u32)
            .filter(|&u| !self.test.profile(u).is_empty())
            .collect()
    }
}

/// Number of a profile's interactions that go to train.
pub fn train_quota(profile_len: usize, train_ratio: f64) -> usize {
    if profile_len < 2 {
        return profile_len;
    }
    // guard against 0.8 * 15 = 12.000000000000002 style round-up
    let q = (train_ratio * profile_len as f64 - 1e-9).ceil() as usize;
    q.clamp(1, profile_len)
}

/// Per-user stratified random split: each user keeps `ceil(ratio * |profile|)`
/// interactions in train. Users are visited in index order from one seeded
/// stream, so the split is a pure function of `(ds, ratio, seed)`.
pub fn split_train_test(ds: &RatingDataset, train_ratio: f64, seed: u64) -> Result<SplitDataset> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::config(format!(
            "train ratio must lie in (0, 1), got {train_ratio}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(ds.len());
    let mut test = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    for u in 0..ds.n_users() as u32 {
        let profile = ds.profile(u);
        let quota = train_quota(profile.len(), train_ratio);
        order.clear();
        order.extend(0..profile.len());
        order.shuffle(&mut rng);
        for (k, &pos) in order.iter().enumerate() {
            if k < quota {
                train.push(profile[pos]);
            } else {
                test.push(profile[pos]);
            }
        }
    }
    Ok(SplitDataset {
        train: RatingDataset::new(train, ds.users().clone(), ds.items().clone(), ds.scale())?,
        test: RatingDataset::new(test, ds.users().clone(), ds.items().clone(), ds.scale())?,
        seed,
    })
}

/// Writes `user_id,item_id,rating` rows in `(user, item)` index order.
pub fn write_ratings_csv<W: Write>(ds: &RatingDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "item_id", "rating"])?;
    for x in ds.interactions() {
        w.write_record([ds.user_id(x.user), ds.item_id(x.item), &x.rating.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a ratings CSV written by [`write_ratings_csv`]; ids are indexed in
/// order of first appearance.
pub fn read_ratings_csv<R: Read>(input: R, scale: RatingScale) -> Result<RatingDataset> {
    let mut r = csv::Reader::from_reader(input);
    let mut users = IdIndex::new();
    let mut items = IdIndex::new();
    let mut interactions = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::data(format!("ratings row has {} fields, expected 3", rec.len())));
        }
        let rating: f64 = rec[2]
            .parse()
            .map_err(|_| Error::data(format!("bad rating {:?}", &rec[2])))?;
        interactions.push(Interaction {
            user: users.intern(&rec[0]),
            item: items.intern(&rec[1]),
            rating,
            timestamp: None,
        });
    }
    if interactions.is_empty() {
        return Err(Error::NoInteractions);
    }
    RatingDataset::new(interactions, Arc::new(users), Arc::new(items), scale)
}

/// Writes the split manifest `user_id,item_id,fold`, train rows before test
/// rows within each user, both in item index order.
pub fn write_split_csv<W: Write>(split: &SplitDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "item_id", "fold"])?;
    let ds = &split.train;
    for u in 0..ds.n_users() as u32 {
        for (part, fold) in [(&split.train, Fold::Train), (&split.test, Fold::Test)] {
            for x in part.profile(u) {
                w.write_record([ds.user_id(u), ds.item_id(x.item), fold.as_str()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Applies a split manifest to the dataset it was produced from.
pub fn read_split_csv<R: Read>(input: R, ds: &RatingDataset, seed: u64) -> Result<SplitDataset> {
    let mut r = csv::Reader::from_reader(input);
    let mut test_pairs = HashSet::new();
    let mut rows = 0usize;
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::data(format!("split row has {} fields, expected 3", rec.len())));
        }
        rows += 1;
        let user = ds
            .users()
            .get(&rec[0])
            .ok_or_else(|| Error::data(format!("split names unknown user {:?}", &rec[0])))?;
        let item = ds
            .items()
            .get(&rec[1])
            .ok_or_else(|| Error::data(format!("split names unknown item {:?}", &rec[1])))?;
        match &rec[2] {
            "test" => {
                test_pairs.insert((user, item));
            }
            "train" => {}
            other => return Err(Error::data(format!("unknown fold {other:?}"))),
        }
    }
    if rows != ds.len() {
        return Err(Error::data(format!(
            "split manifest covers {rows} rows but the dataset has {}",
            ds.len()
        )));
    }
    SplitDataset::from_test_pairs(ds, &test_pairs, seed)
}
