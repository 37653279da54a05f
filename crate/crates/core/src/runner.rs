//! Experiment configuration, pipeline stages and the full sweep.
//!
//! Every stage is a plain function over in-memory values, and every stage
//! output has a CSV (or checkpoint) form. The sweep writes those files and
//! the standalone CLI stages read them back, so both paths see the same data.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::{
    counts_to_ratings, filter_min_profile, read_movielens, read_playcounts, read_ratings_csv, read_split_csv,
    split_train_test, write_ratings_csv, write_split_csv, CountMapping, ParseReport, RatingDataset, RatingScale,
    SplitDataset,
};
use crate::metrics::{
    evaluate, exposure_histogram, list_composition, profile_composition, read_report_csv, write_composition_csv,
    write_histogram_csv, write_report_csv, write_user_detail_csv, EvalContext, ExposureHistogram, MetricReport,
    UserDetail,
};
use crate::popularity::{
    compute_popularity, group_users, partition_items, profile_distributions, read_partition_csv, read_user_groups_csv,
    write_partition_csv, write_user_groups_csv, ItemPopularity, PopularityDistribution, PopularityPartition,
    UserGroupAssignment,
};
use crate::recommenders::{
    fit_biased_mf, fit_implicit_als, fit_item_knn, fit_ranking_mf, generate_candidates, most_popular,
    read_candidates_csv, read_checkpoint, write_candidates_csv, write_checkpoint, BaseModel, FitTrace, ImplicitConfig,
    MfConfig, RankAlsConfig, ScoredCandidates,
};
use crate::rerank::{
    read_lists_csv, rerank_cp, rerank_dm, rerank_fair, rerank_xq, top_n, uniform_targets, write_lists_csv, Method,
    RecommendationList, RerankConfig, XqVariant,
};

pub const RATINGS_FILE: &str = "ratings.csv";
pub const SPLIT_FILE: &str = "split.csv";
pub const PARTITION_FILE: &str = "partition.csv";
pub const USER_GROUPS_FILE: &str = "user_groups.csv";
pub const MODEL_FILE: &str = "model.txt";
pub const CANDIDATES_FILE: &str = "candidates.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    /// `UserID::MovieID::Rating::Timestamp`
    Movielens,
    /// Tab-separated `user item count`.
    Playcounts,
    /// `user_id,item_id,rating` with a header row.
    RatingsCsv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MappingKind {
    Quantile,
    LogLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    pub format: DataFormat,
    /// Skip one header line (play counts).
    pub header: bool,
    pub min_profile: Option<usize>,
    pub count_mapping: MappingKind,
    pub rating_min: f64,
    pub rating_max: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: PathBuf::new(),
            format: DataFormat::Movielens,
            header: false,
            min_profile: None,
            count_mapping: MappingKind::Quantile,
            rating_min: 1.0,
            rating_max: 5.0,
        }
    }
}

impl DataConfig {
    pub fn scale(&self) -> Result<RatingScale> {
        RatingScale::new(self.rating_min, self.rating_max)
    }

    pub fn mapping(&self) -> Result<CountMapping> {
        Ok(match self.count_mapping {
            MappingKind::Quantile => CountMapping::quantile_for(self.scale()?),
            MappingKind::LogLinear => CountMapping::LogLinear,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_ratio: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_ratio: 0.8,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub head_share: f64,
    pub tail_share: f64,
    /// Rank users by rating-weighted head share instead of head count share.
    pub weighted_affinity: bool,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            head_share: 0.2,
            tail_share: 0.2,
            weighted_affinity: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    RankAls,
    ImplicitAls,
    BiasedMf,
    ItemKnn,
    MostPopular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub algorithm: ModelKind,
    pub factors: usize,
    pub reg: f64,
    pub iterations: usize,
    pub seed: u64,
    pub init_scale: f64,
    /// Confidence slope of the implicit model.
    pub alpha: f64,
    /// Neighbourhood size of item-knn.
    pub neighbors: usize,
    pub support_weighting: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let mf = MfConfig::default();
        ModelConfig {
            algorithm: ModelKind::RankAls,
            factors: mf.factors,
            reg: mf.reg,
            iterations: mf.iterations,
            seed: mf.seed,
            init_scale: mf.init_scale,
            alpha: 1.0,
            neighbors: 50,
            support_weighting: false,
        }
    }
}

impl ModelConfig {
    pub fn mf(&self) -> MfConfig {
        MfConfig {
            factors: self.factors,
            reg: self.reg,
            iterations: self.iterations,
            seed: self.seed,
            init_scale: self.init_scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecommendConfig {
    pub m: usize,
}

impl Default for RecommendConfig {
    fn default() -> Self {
        RecommendConfig { m: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub methods: Vec<Method>,
    pub lambdas: Vec<f64>,
    pub n: usize,
    pub fs_target: f64,
    pub fs_alpha: f64,
    pub xq_variant: XqVariant,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let r = RerankConfig::default();
        SweepConfig {
            methods: Method::ALL.to_vec(),
            lambdas: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            n: r.n,
            fs_target: r.fs_target,
            fs_alpha: r.fs_alpha,
            xq_variant: r.xq_variant,
        }
    }
}

impl SweepConfig {
    pub fn rerank_config(&self, lambda: f64) -> RerankConfig {
        RerankConfig {
            lambda,
            n: self.n,
            fs_target: self.fs_target,
            fs_alpha: self.fs_alpha,
            xq_variant: self.xq_variant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Minimum test rating that counts as relevant; any rating when unset.
    pub relevance_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("popcal-run"),
        }
    }
}

/// Full experiment description; every section has defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub split: SplitConfig,
    pub partition: PartitionConfig,
    pub model: ModelConfig,
    pub recommend: RecommendConfig,
    pub rerank: SweepConfig,
    pub evaluate: EvaluateConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Read {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.path.as_os_str().is_empty() {
            return Err(Error::config("data.path is required"));
        }
        self.validate_stages()
    }

    /// Checks everything except the data path, which only ingest reads.
    pub fn validate_stages(&self) -> Result<()> {
        self.data.scale()?;
        if let Some(0) = self.data.min_profile {
            return Err(Error::config("data.min_profile must be at least 1"));
        }
        if !(self.split.train_ratio > 0.0 && self.split.train_ratio < 1.0) {
            return Err(Error::config("split.train_ratio must lie in (0, 1)"));
        }
        self.model.mf().validate()?;
        if self.model.algorithm == ModelKind::ItemKnn && self.model.neighbors == 0 {
            return Err(Error::config("model.neighbors must be at least 1"));
        }
        let r = &self.rerank;
        if r.methods.is_empty() {
            return Err(Error::config("rerank.methods is empty"));
        }
        if !(self.recommend.m >= r.n && r.n >= 1) {
            return Err(Error::config(format!(
                "need m >= n >= 1, got m = {} and n = {}",
                self.recommend.m, r.n
            )));
        }
        if r.lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::config("rerank.lambdas must lie in [0, 1]"));
        }
        if r.lambdas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("rerank.lambdas must be strictly increasing"));
        }
        if r.methods.iter().any(|&m| m != Method::Base) && r.lambdas.is_empty() {
            return Err(Error::config("rerank.lambdas is empty"));
        }
        r.rerank_config(0.0).validate()
    }
}

/// Caps the global thread pool at `POPCAL_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("POPCAL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::config(format!("POPCAL_THREADS must be a positive integer, got {raw:?}")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub path: String,
    pub sha256: String,
    pub format: DataFormat,
    pub lines: usize,
    pub malformed: usize,
    pub duplicates: usize,
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
}

/// Reads, maps and filters the source data. The result is re-indexed exactly
/// as a reader of its ratings CSV would index it.
pub fn ingest(cfg: &DataConfig) -> Result<(RatingDataset, DatasetInfo)> {
    let bytes = fs::read(&cfg.path).map_err(|source| Error::Read {
        path: cfg.path.clone(),
        source,
    })?;
    let scale = cfg.scale()?;
    let (ds, report) = match cfg.format {
        DataFormat::Movielens => read_movielens(bytes.as_slice())?,
        DataFormat::Playcounts => {
            let table = read_playcounts(bytes.as_slice(), cfg.header)?;
            (counts_to_ratings(&table, scale, cfg.mapping()?)?, table.report)
        }
        DataFormat::RatingsCsv => {
            let ds = read_ratings_csv(bytes.as_slice(), scale)?;
            let lines = ds.len();
            (
                ds,
                ParseReport {
                    lines,
                    ..Default::default()
                },
            )
        }
    };
    let ds = match cfg.min_profile {
        Some(k) => filter_min_profile(&ds, k)?,
        None => ds,
    };
    let mut buf = Vec::new();
    write_ratings_csv(&ds, &mut buf)?;
    let ds = read_ratings_csv(buf.as_slice(), ds.scale())?;
    let info = DatasetInfo {
        path: cfg.path.display().to_string(),
        sha256: sha256_hex(&bytes),
        format: cfg.format,
        lines: report.lines,
        malformed: report.malformed,
        duplicates: report.duplicates,
        users: ds.n_users(),
        items: ds.n_items(),
        interactions: ds.len(),
    };
    Ok((ds, info))
}

pub fn split(ds: &RatingDataset, cfg: &SplitConfig) -> Result<SplitDataset> {
    split_train_test(ds, cfg.train_ratio, cfg.seed)
}

/// Item popularity, its head/mid/tail partition and the user groups.
#[derive(Debug, Clone)]
pub struct Partitioned {
    pub pop: ItemPopularity,
    pub part: PopularityPartition,
    pub groups: UserGroupAssignment,
}

pub fn partition(train: &RatingDataset, cfg: &PartitionConfig) -> Result<Partitioned> {
    let pop = compute_popularity(train)?;
    let part = partition_items(&pop, cfg.head_share, cfg.tail_share)?;
    let groups = group_users(train, &part, cfg.weighted_affinity);
    Ok(Partitioned { pop, part, groups })
}

pub fn train(train: &RatingDataset, pop: &ItemPopularity, cfg: &ModelConfig) -> Result<(BaseModel, Option<FitTrace>)> {
    let mf = cfg.mf();
    Ok(match cfg.algorithm {
        ModelKind::RankAls => {
            let (m, t) = fit_ranking_mf(
                train,
                &RankAlsConfig {
                    mf,
                    support_weighting: cfg.support_weighting,
                },
            )?;
            (BaseModel::Factor(m), Some(t))
        }
        ModelKind::ImplicitAls => {
            let (m, t) = fit_implicit_als(train, &ImplicitConfig { mf, alpha: cfg.alpha })?;
            (BaseModel::Factor(m), Some(t))
        }
        ModelKind::BiasedMf => {
            let (m, t) = fit_biased_mf(train, &mf)?;
            (BaseModel::Factor(m), Some(t))
        }
        ModelKind::ItemKnn => (BaseModel::Knn(fit_item_knn(train, cfg.neighbors)?), None),
        ModelKind::MostPopular => (BaseModel::Popular(most_popular(train, pop)), None),
    })
}

pub fn recommend(
    model: &BaseModel,
    train: &RatingDataset,
    pop: &ItemPopularity,
    m: usize,
) -> Result<Vec<ScoredCandidates>> {
    generate_candidates(model, train, pop, m)
}

/// Inputs shared by every re-ranking cell.
pub struct RerankInputs<'a> {
    pub pop: &'a ItemPopularity,
    pub part: &'a PopularityPartition,
    /// Rating-weighted profile distributions, by user.
    pub weighted: &'a [PopularityDistribution],
    /// Count-based profile distributions, by user.
    pub plain: &'a [PopularityDistribution],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankOutput {
    pub lists: Vec<RecommendationList>,
    /// DM had to exceed some exposure target.
    pub relaxed: bool,
}

pub fn rerank(
    cands: &[ScoredCandidates],
    method: Method,
    cfg: &RerankConfig,
    inp: &RerankInputs<'_>,
) -> Result<RerankOutput> {
    cfg.validate()?;
    let profile = |ps: &[PopularityDistribution], u: u32| {
        ps.get(u as usize)
            .copied()
            .ok_or_else(|| Error::data(format!("no profile distribution for user {u}")))
    };
    let lists: Vec<RecommendationList> = match method {
        Method::Base => cands.par_iter().map(|c| top_n(c, cfg.n)).collect::<Result<_>>()?,
        Method::Cp => cands
            .par_iter()
            .map(|c| rerank_cp(c, &profile(inp.weighted, c.user)?, inp.part, cfg))
            .collect::<Result<_>>()?,
        Method::Xq => cands
            .par_iter()
            .map(|c| rerank_xq(c, &profile(inp.plain, c.user)?, inp.part, cfg))
            .collect::<Result<_>>()?,
        Method::Fs => cands
            .par_iter()
            .map(|c| rerank_fair(c, inp.part, cfg))
            .collect::<Result<_>>()?,
        Method::Dm => {
            let targets = uniform_targets(inp.pop, (cands.len() * cfg.n) as u64);
            let out = rerank_dm(cands, &targets, cfg)?;
            return Ok(RerankOutput {
                lists: out.lists,
                relaxed: out.relaxed,
            });
        }
    };
    Ok(RerankOutput { lists, relaxed: false })
}

/// Everything computed for one (method, lambda) cell.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricReport,
    pub detail: Vec<UserDetail>,
    pub histogram: ExposureHistogram,
    pub composition: [[f64; 3]; 3],
}

pub fn evaluate_lists(
    lists: &[RecommendationList],
    ctx: &EvalContext<'_>,
    method: Method,
    lambda: Option<f64>,
) -> Result<Evaluation> {
    let (report, detail) = evaluate(lists, ctx, method, lambda)?;
    Ok(Evaluation {
        report,
        detail,
        histogram: exposure_histogram(lists, ctx.pop.n_items()),
        composition: list_composition(lists, ctx.part, ctx.groups)?,
    })
}

/// File stem of a cell: `base`, or method and lambda such as `cp_0.3`.
pub fn cell_name(method: Method, lambda: Option<f64>) -> String {
    match lambda {
        Some(l) => format!("{method}_{l}"),
        None => method.to_string(),
    }
}

/// The cells a sweep visits: Base once, every other method at every lambda.
pub fn sweep_cells(cfg: &SweepConfig) -> Vec<(Method, Option<f64>)> {
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    let mut cells = Vec::new();
    for m in methods {
        if m == Method::Base {
            cells.push((m, None));
        } else {
            cells.extend(cfg.lambdas.iter().map(|&l| (m, Some(l))));
        }
    }
    cells
}

pub fn write_file(dir: &Path, rel: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(&path)?);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn open_file(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| Error::Read {
        path: path.to_owned(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub split: u64,
    pub model: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub train: usize,
    pub test: usize,
    pub test_users: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionInfo {
    pub catalog: usize,
    pub head: usize,
    pub mid: usize,
    pub tail: usize,
    pub head_share: f64,
    pub mid_share: f64,
    pub tail_share: f64,
    pub users_g1: usize,
    pub users_g2: usize,
    pub users_g3: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub kind: String,
    pub sweeps: usize,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellInfo {
    pub method: Method,
    pub lambda: Option<f64>,
    pub relaxed: bool,
    pub violations: usize,
}

/// What a run did and with which settings; output checksums included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit: String,
    pub seeds: Seeds,
    pub switches: BTreeMap<String, String>,
    pub dataset: DatasetInfo,
    pub split: SplitInfo,
    pub partition: PartitionInfo,
    pub model: ModelInfo,
    pub cells: Vec<CellInfo>,
    pub files: BTreeMap<String, String>,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Read {
            path: path.to_owned(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| Error::data(format!("bad manifest {}: {e}", path.display())))
    }
}

/// Settings the metrics and re-rankers apply that a reader might otherwise
/// have to guess.
pub fn switches(cfg: &ExperimentConfig) -> Result<BTreeMap<String, String>> {
    let mut s = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        s.insert(k.to_owned(), v);
    };
    put(
        "arp_scale",
        "phi divided by training users (raw value also reported)".into(),
    );
    put("upd_average", "per group first, then over the three groups".into());
    put(
        "gini_form",
        "items sorted ascending, sum (2k - N - 1) p / (N - 1)".into(),
    );
    put(
        "user_affinity",
        if cfg.partition.weighted_affinity {
            "rating-weighted head share"
        } else {
            "head count share"
        }
        .into(),
    );
    put("calibration_profile", "rating-weighted group shares".into());
    put("xq_profile", "count-based head vs mid+tail shares".into());
    put("xq_coverage", format!("{:?}", cfg.rerank.xq_variant).to_lowercase());
    put("fs_protected", "mid and tail items".into());
    put("fs_share", format!("lambda * {}", cfg.rerank.fs_target));
    put(
        "fs_alpha",
        format!("{} (no multiple-test adjustment)", cfg.rerank.fs_alpha),
    );
    put(
        "dm_targets",
        "uniform over the training catalog, largest remainder".into(),
    );
    put("score_normalisation", "per-list min-max".into());
    put(
        "relevance",
        match cfg.evaluate.relevance_threshold {
            Some(t) => format!("test rating >= {t}"),
            None => "any test rating".into(),
        },
    );
    if cfg.data.format == DataFormat::Playcounts {
        put("count_mapping", cfg.data.mapping()?.name());
    }
    Ok(s)
}

/// Locations of the persisted artifacts. [`RunPaths::in_dir`] gives the
/// layout a sweep writes; individual paths can be pointed elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPaths {
    pub dir: PathBuf,
    pub ratings: PathBuf,
    pub split: PathBuf,
    pub partition: PathBuf,
    pub user_groups: PathBuf,
    pub model: PathBuf,
    pub candidates: PathBuf,
    pub report: PathBuf,
}

impl RunPaths {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        let dir = dir.into();
        RunPaths {
            ratings: dir.join(RATINGS_FILE),
            split: dir.join(SPLIT_FILE),
            partition: dir.join(PARTITION_FILE),
            user_groups: dir.join(USER_GROUPS_FILE),
            model: dir.join(MODEL_FILE),
            candidates: dir.join(CANDIDATES_FILE),
            report: dir.join(REPORT_FILE),
            dir,
        }
    }

    pub fn lists(&self, method: Method, lambda: Option<f64>) -> PathBuf {
        self.dir
            .join("lists")
            .join(format!("{}.csv", cell_name(method, lambda)))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_path(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create(path)?;
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Ratings, split, partition and user groups read back from disk.
pub struct Workspace {
    pub dataset: RatingDataset,
    pub split: SplitDataset,
    pub partitioned: Partitioned,
}

impl Workspace {
    pub fn load(paths: &RunPaths, cfg: &ExperimentConfig) -> Result<Self> {
        let dataset = read_ratings_csv(open_file(&paths.ratings)?, cfg.data.scale()?)?;
        let split = read_split_csv(open_file(&paths.split)?, &dataset, cfg.split.seed)?;
        let (part, pop) = read_partition_csv(open_file(&paths.partition)?, dataset.items(), dataset.n_users())?;
        if compute_popularity(&split.train)?.counts() != pop.counts() {
            return Err(Error::data("partition popularity does not match the training split"));
        }
        let groups = read_user_groups_csv(open_file(&paths.user_groups)?, dataset.users())?;
        Ok(Workspace {
            dataset,
            split,
            partitioned: Partitioned { pop, part, groups },
        })
    }

    pub fn candidates(&self, path: &Path, m: usize) -> Result<Vec<ScoredCandidates>> {
        read_candidates_csv(open_file(path)?, self.dataset.users(), self.dataset.items(), m)
    }

    pub fn lists(&self, path: &Path) -> Result<Vec<RecommendationList>> {
        read_lists_csv(open_file(path)?, self.dataset.users(), self.dataset.items())
    }
}

/// Method and lambda recorded in a lists CSV.
pub fn read_list_cell(path: &Path) -> Result<(Method, Option<f64>)> {
    let mut r = csv::Reader::from_reader(open_file(path)?);
    let rec = r
        .records()
        .next()
        .ok_or_else(|| Error::data(format!("{} holds no lists", path.display())))??;
    let method: Method = rec
        .get(3)
        .ok_or_else(|| Error::data(format!("{} has no method column", path.display())))?
        .parse()?;
    let lambda = match rec.get(4) {
        None | Some("") => None,
        Some(s) => Some(s.parse().map_err(|_| Error::data(format!("bad lambda {s:?}")))?),
    };
    Ok((method, lambda))
}

/// Stage 1: writes the canonical ratings CSV.
pub fn ingest_stage(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<DatasetInfo> {
    let (ds, info) = ingest(&cfg.data)?;
    write_path(&paths.ratings, |w| write_ratings_csv(&ds, w))?;
    Ok(info)
}

/// Stage 2: writes the split, the item partition and the user groups.
pub fn split_stage(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<(SplitInfo, PartitionInfo)> {
    let ds = read_ratings_csv(open_file(&paths.ratings)?, cfg.data.scale()?)?;
    let sp = split(&ds, &cfg.split)?;
    write_path(&paths.split, |w| write_split_csv(&sp, w))?;
    let p = partition(&sp.train, &cfg.partition)?;
    write_path(&paths.partition, |w| {
        write_partition_csv(&p.part, &p.pop, ds.items(), w)
    })?;
    write_path(&paths.user_groups, |w| write_user_groups_csv(&p.groups, ds.users(), w))?;
    let sizes = p.part.sizes();
    let shares = p.part.shares();
    let users = p.groups.sizes();
    Ok((
        SplitInfo {
            train: sp.train.len(),
            test: sp.test.len(),
            test_users: sp.test_users().len(),
        },
        PartitionInfo {
            catalog: p.pop.catalog_size(),
            head: sizes[0],
            mid: sizes[1],
            tail: sizes[2],
            head_share: shares[0],
            mid_share: shares[1],
            tail_share: shares[2],
            users_g1: users[0],
            users_g2: users[1],
            users_g3: users[2],
        },
    ))
}

/// Stage 3: fits the base model and writes its checkpoint.
pub fn train_stage(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<ModelInfo> {
    let ws = Workspace::load(paths, cfg)?;
    let (model, trace) = train(&ws.split.train, &ws.partitioned.pop, &cfg.model)?;
    write_path(&paths.model, |w| write_checkpoint(&model, w))?;
    Ok(ModelInfo {
        kind: model.kind().to_owned(),
        sweeps: trace.as_ref().map_or(0, |t| t.losses.len()),
        final_loss: trace.as_ref().and_then(|t| t.losses.last().copied()),
    })
}

/// Stage 4: writes the top-m candidates of every training user.
pub fn recommend_stage(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<()> {
    let ws = Workspace::load(paths, cfg)?;
    let model = read_checkpoint(open_file(&paths.model)?)?;
    let cands = recommend(&model, &ws.split.train, &ws.partitioned.pop, cfg.recommend.m)?;
    write_path(&paths.candidates, |w| {
        write_candidates_csv(&cands, ws.dataset.users(), ws.dataset.items(), w)
    })
}

/// Stage 5: re-ranks the candidates for every requested cell and writes
/// one lists CSV per cell.
pub fn rerank_stage(
    cfg: &ExperimentConfig,
    paths: &RunPaths,
    cells: &[(Method, Option<f64>)],
) -> Result<Vec<CellInfo>> {
    let ws = Workspace::load(paths, cfg)?;
    let cands = ws.candidates(&paths.candidates, cfg.recommend.m)?;
    let p = &ws.partitioned;
    let weighted = profile_distributions(&ws.split.train, &p.part, true)?;
    let plain = profile_distributions(&ws.split.train, &p.part, false)?;
    let inputs = RerankInputs {
        pop: &p.pop,
        part: &p.part,
        weighted: &weighted,
        plain: &plain,
    };
    let mut out = Vec::with_capacity(cells.len());
    for &(method, lambda) in cells {
        let rc = cfg.rerank.rerank_config(lambda.unwrap_or(0.0));
        let r = rerank(&cands, method, &rc, &inputs)?;
        write_path(&paths.lists(method, lambda), |w| {
            write_lists_csv(&r.lists, method, lambda, ws.dataset.users(), ws.dataset.items(), w)
        })?;
        out.push(CellInfo {
            method,
            lambda,
            relaxed: r.relaxed,
            violations: r.lists.iter().filter(|l| l.constraint_violated).count(),
        });
    }
    Ok(out)
}

/// Stage 6: scores lists files. Per-cell user details, histograms and
/// composition tables go under the run directory; the report rows, in the
/// given order, go to `paths.report`.
pub fn evaluate_stage(cfg: &ExperimentConfig, paths: &RunPaths, lists: &[PathBuf]) -> Result<Vec<MetricReport>> {
    let ws = Workspace::load(paths, cfg)?;
    let p = &ws.partitioned;
    let weighted = profile_distributions(&ws.split.train, &p.part, true)?;
    let profiles = profile_composition(&ws.split.train, &p.part, &p.groups)?;
    write_file(&paths.dir, "composition/profiles.csv", |w| {
        write_composition_csv(&profiles, w)
    })?;
    let ctx = EvalContext {
        test: &ws.split.test,
        pop: &p.pop,
        part: &p.part,
        profiles: &weighted,
        groups: &p.groups,
        n: cfg.rerank.n,
        relevance_threshold: cfg.evaluate.relevance_threshold,
    };
    let mut reports = Vec::with_capacity(lists.len());
    for path in lists {
        let (method, lambda) = read_list_cell(path)?;
        let ls = ws.lists(path)?;
        let eval = evaluate_lists(&ls, &ctx, method, lambda)?;
        let name = cell_name(method, lambda);
        let users = ws.dataset.users();
        write_file(&paths.dir, &format!("per_user/{name}.csv"), |w| {
            write_user_detail_csv(&eval.detail, users, w)
        })?;
        write_file(&paths.dir, &format!("histograms/{name}.csv"), |w| {
            write_histogram_csv(&eval.histogram, w)
        })?;
        write_file(&paths.dir, &format!("composition/{name}.csv"), |w| {
            write_composition_csv(&eval.composition, w)
        })?;
        log::info!(
            "{name}: precision {:.4} upd {:.4} gini {:.4}",
            eval.report.precision,
            eval.report.upd,
            eval.report.gini
        );
        reports.push(eval.report);
    }
    write_path(&paths.report, |w| write_report_csv(&reports, w))?;
    Ok(reports)
}

/// Lists files under `dir/lists`, in sweep order.
pub fn find_lists(dir: &Path) -> Result<Vec<PathBuf>> {
    let lists_dir = dir.join("lists");
    let mut found = Vec::new();
    for e in fs::read_dir(&lists_dir).map_err(|source| Error::Read {
        path: lists_dir.clone(),
        source,
    })? {
        let path = e?.path();
        if path.extension().is_some_and(|x| x == "csv") {
            let (method, lambda) = read_list_cell(&path)?;
            found.push(((method, lambda.unwrap_or(-1.0)), path));
        }
    }
    found.sort_by(|a, b| a.0 .0.cmp(&b.0 .0).then(a.0 .1.total_cmp(&b.0 .1)));
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// Results of a sweep.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub reports: Vec<MetricReport>,
    pub manifest: RunManifest,
}

fn is_previous_run(dir: &Path) -> bool {
    dir.join(MANIFEST_FILE).is_file()
}

/// Runs every stage and writes the full output tree to `cfg.output.dir`.
/// Work happens in a sibling scratch directory that replaces the target only
/// on success; on failure nothing is left behind.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let target = cfg.output.dir.clone();
    if target.exists() && !is_previous_run(&target) {
        return Err(Error::config(format!(
            "output directory {} exists and does not hold a previous run",
            target.display()
        )));
    }
    let name = target
        .file_name()
        .ok_or_else(|| Error::config("output.dir has no final component"))?
        .to_string_lossy()
        .into_owned();
    let scratch = target.with_file_name(format!(".{name}.partial"));
    if scratch.exists() {
        fs::remove_dir_all(&scratch)?;
    }
    fs::create_dir_all(&scratch)?;
    match run_into(cfg, &scratch) {
        Ok((reports, manifest)) => {
            if target.exists() {
                fs::remove_dir_all(&target)?;
            }
            fs::rename(&scratch, &target)?;
            Ok(RunSummary {
                dir: target,
                reports,
                manifest,
            })
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&scratch);
            Err(e)
        }
    }
}

fn run_into(cfg: &ExperimentConfig, dir: &Path) -> Result<(Vec<MetricReport>, RunManifest)> {
    let paths = RunPaths::in_dir(dir);
    let dataset = ingest_stage(cfg, &paths).map_err(|e| e.in_stage("ingest"))?;
    let (split, partition) = split_stage(cfg, &paths).map_err(|e| e.in_stage("split"))?;
    let model = train_stage(cfg, &paths).map_err(|e| e.in_stage("train"))?;
    recommend_stage(cfg, &paths).map_err(|e| e.in_stage("recommend"))?;
    let cells = sweep_cells(&cfg.rerank);
    let cells = rerank_stage(cfg, &paths, &cells).map_err(|e| e.in_stage("rerank"))?;
    let lists: Vec<PathBuf> = cells.iter().map(|c| paths.lists(c.method, c.lambda)).collect();
    let reports = evaluate_stage(cfg, &paths, &lists).map_err(|e| e.in_stage("evaluate"))?;

    let manifest = RunManifest {
        toolkit: format!("popcal {}", env!("CARGO_PKG_VERSION")),
        seeds: Seeds {
            split: cfg.split.seed,
            model: cfg.model.seed,
        },
        switches: switches(cfg)?,
        dataset,
        split,
        partition,
        model,
        cells,
        files: checksum_tree(dir)?,
        config: cfg.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::data(format!("cannot encode manifest: {e}")))?;
    write_file(dir, MANIFEST_FILE, |w| Ok(w.write_all(text.as_bytes())?))?;
    Ok((reports, manifest))
}

/// SHA-256 of every file under `dir`, keyed by `/`-separated relative path.
pub fn checksum_tree(dir: &Path) -> Result<BTreeMap<String, String>> {
    fn walk(root: &Path, at: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
        let mut entries: Vec<_> = fs::read_dir(at)?.collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let path = e.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path
                    .strip_prefix(root)
                    .expect("walk stays below its root")
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .collect::<Vec<_>>()
                    .join("/");
                out.insert(rel, sha256_hex(&fs::read(&path)?));
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

/// A report row tagged with the run it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedRow {
    pub run: String,
    pub report: MetricReport,
}

/// Picks, from each run's report, Base plus every method at its chosen
/// lambda. Methods without a pick are left out.
pub fn merge_reports(runs: &[PathBuf], picks: &BTreeMap<Method, f64>) -> Result<Vec<MergedRow>> {
    let mut out = Vec::new();
    for run in runs {
        let rows = read_report_csv(open_file(&run.join(REPORT_FILE))?)?;
        let name = run
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| run.display().to_string());
        for method in Method::ALL {
            let wanted = if method == Method::Base {
                None
            } else {
                match picks.get(&method) {
                    Some(&l) => Some(l),
                    None => continue,
                }
            };
            let row = rows.iter().find(|r| {
                r.method == method
                    && match (r.lambda, wanted) {
                        (None, None) => true,
                        (Some(a), Some(b)) => (a - b).abs() < 1e-9,
                        _ => false,
                    }
            });
            match row {
                Some(r) => out.push(MergedRow {
                    run: name.clone(),
                    report: r.clone(),
                }),
                None if method == Method::Base => {}
                None => {
                    return Err(Error::data(format!(
                        "run {} has no {method} row at lambda {}",
                        run.display(),
                        wanted.unwrap_or_default()
                    )))
                }
            }
        }
    }
    Ok(out)
}

/// `run,` followed by the report columns.
pub fn write_merged_csv<W: Write>(rows: &[MergedRow], mut out: W) -> Result<()> {
    let mut buf = Vec::new();
    write_report_csv(&rows.iter().map(|r| r.report.clone()).collect::<Vec<_>>(), &mut buf)?;
    let text = String::from_utf8(buf).expect("csv output is utf-8");
    let mut lines = text.lines();
    writeln!(out, "run,{}", lines.next().unwrap_or_default())?;
    for (row, line) in rows.iter().zip(lines) {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record([row.run.as_str()])?;
        let run = String::from_utf8(w.into_inner().map_err(|e| Error::data(e.to_string()))?).expect("utf-8");
        writeln!(out, "{},{line}", run.trim_end())?;
    }
    Ok(())
}
