use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::{DeserializeOwned, IntoDeserializer};

use popcal::rerank::{Method, XqVariant};
use popcal::runner::{
    self, configure_threads, evaluate_stage, find_lists, ingest_stage, merge_reports, recommend_stage, rerank_stage,
    run_experiment, split_stage, sweep_cells, train_stage, write_merged_csv, DataFormat, ExperimentConfig, MappingKind,
    ModelKind, RunPaths,
};
use popcal::{Error, ErrorKind, Result};

/// Popularity-bias evaluation for top-n recommenders.
#[derive(Parser, Debug)]
#[command(name = "popcal", version)]
struct Cli {
    /// TOML experiment config; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory holding the intermediate files (output.dir).
    #[arg(long, global = true)]
    dir: Option<PathBuf>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse raw data into the canonical ratings CSV.
    Ingest {
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        files: FileFlags,
    },
    /// Split ratings, partition items and group users.
    Split {
        #[command(flatten)]
        split: SplitFlags,
        #[command(flatten)]
        partition: PartitionFlags,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        files: FileFlags,
    },
    /// Fit the base recommender and write its checkpoint.
    Train {
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        files: FileFlags,
    },
    /// Write the top-m candidates of every user.
    Recommend {
        #[command(flatten)]
        recommend: RecommendFlags,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        files: FileFlags,
    },
    /// Re-rank candidates for each method and lambda.
    Rerank {
        #[command(flatten)]
        rerank: RerankFlags,
        #[command(flatten)]
        recommend: RecommendFlags,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        files: FileFlags,
    },
    /// Score lists files.
    Evaluate {
        /// Lists CSVs to score; defaults to every file in <dir>/lists.
        #[arg(long, num_args = 1..)]
        lists: Vec<PathBuf>,
        #[command(flatten)]
        evaluate: EvaluateFlags,
        #[command(flatten)]
        rerank: RerankFlags,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        files: FileFlags,
    },
    /// Run every stage and write a complete run directory.
    Sweep {
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        split: SplitFlags,
        #[command(flatten)]
        partition: PartitionFlags,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        recommend: RecommendFlags,
        #[command(flatten)]
        rerank: RerankFlags,
        #[command(flatten)]
        evaluate: EvaluateFlags,
    },
    /// Merge run reports, one lambda per method.
    Report {
        /// Run directories.
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Lambda to keep for a method, as METHOD=LAMBDA.
        #[arg(long, value_parser = parse_pick)]
        pick: Vec<(Method, f64)>,
        /// Output CSV; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Default)]
struct DataFlags {
    /// Source data file.
    #[arg(long, alias = "input")]
    path: Option<PathBuf>,
    #[arg(long, value_parser = kebab::<DataFormat>)]
    format: Option<DataFormat>,
    /// Source has a header line.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    header: Option<bool>,
    #[arg(long)]
    min_profile: Option<usize>,
    #[arg(long, value_parser = kebab::<MappingKind>)]
    count_mapping: Option<MappingKind>,
    #[arg(long)]
    rating_min: Option<f64>,
    #[arg(long)]
    rating_max: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct SplitFlags {
    #[arg(long)]
    train_ratio: Option<f64>,
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
struct PartitionFlags {
    #[arg(long)]
    head_share: Option<f64>,
    #[arg(long)]
    tail_share: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    weighted_affinity: Option<bool>,
}

#[derive(Args, Debug, Default)]
struct ModelFlags {
    #[arg(long, value_parser = kebab::<ModelKind>)]
    algorithm: Option<ModelKind>,
    #[arg(long)]
    factors: Option<usize>,
    #[arg(long)]
    reg: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    model_seed: Option<u64>,
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    neighbors: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    support_weighting: Option<bool>,
}

#[derive(Args, Debug, Default)]
struct RecommendFlags {
    /// Candidates per user.
    #[arg(long)]
    m: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct RerankFlags {
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    /// Final list length.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    fs_target: Option<f64>,
    #[arg(long)]
    fs_alpha: Option<f64>,
    #[arg(long, value_parser = kebab::<XqVariant>)]
    xq_variant: Option<XqVariant>,
}

#[derive(Args, Debug, Default)]
struct EvaluateFlags {
    #[arg(long)]
    relevance_threshold: Option<f64>,
}

/// Overrides for individual intermediate files.
#[derive(Args, Debug, Default)]
struct FileFlags {
    #[arg(long)]
    ratings: Option<PathBuf>,
    #[arg(long, alias = "test")]
    split: Option<PathBuf>,
    #[arg(long)]
    partition: Option<PathBuf>,
    #[arg(long)]
    user_groups: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    candidates: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn kebab<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    T::deserialize(s.into_deserializer()).map_err(|e: serde::de::value::Error| e.to_string())
}

fn parse_pick(s: &str) -> std::result::Result<(Method, f64), String> {
    let (m, l) = s.split_once('=').ok_or("expected METHOD=LAMBDA")?;
    let method: Method = m.parse().map_err(|e: Error| e.to_string())?;
    let lambda: f64 = l.parse().map_err(|_| format!("bad lambda {l:?}"))?;
    Ok((method, lambda))
}

macro_rules! set {
    ($flag:expr => $slot:expr) => {
        if let Some(v) = $flag {
            $slot = v;
        }
    };
}

impl DataFlags {
    fn apply(self, cfg: &mut ExperimentConfig) {
        let d = &mut cfg.data;
        set!(self.path => d.path);
        set!(self.format => d.format);
        set!(self.header => d.header);
        if self.min_profile.is_some() {
            d.min_profile = self.min_profile;
        }
        set!(self.count_mapping => d.count_mapping);
        set!(self.rating_min => d.rating_min);
        set!(self.rating_max => d.rating_max);
    }
}

impl SplitFlags {
    fn apply(self, cfg: &mut ExperimentConfig) {
        set!(self.train_ratio => cfg.split.train_ratio);
        set!(self.split_seed => cfg.split.seed);
    }
}

impl PartitionFlags {
    fn apply(self, cfg: &mut ExperimentConfig) {
        let p = &mut cfg.partition;
        set!(self.head_share => p.head_share);
        set!(self.tail_share => p.tail_share);
        set!(self.weighted_affinity => p.weighted_affinity);
    }
}

impl ModelFlags {
    fn apply(self, cfg: &mut ExperimentConfig) {
        let m = &mut cfg.model;
        set!(self.algorithm => m.algorithm);
        set!(self.factors => m.factors);
        set!(self.reg => m.reg);
        set!(self.iterations => m.iterations);
        set!(self.model_seed => m.seed);
        set!(self.init_scale => m.init_scale);
        set!(self.alpha => m.alpha);
        set!(self.neighbors => m.neighbors);
        set!(self.support_weighting => m.support_weighting);
    }
}

impl RecommendFlags {
    fn apply(self, cfg: &mut ExperimentConfig) {
        set!(self.m => cfg.recommend.m);
    }
}

impl RerankFlags {
    fn apply(self, cfg: &mut ExperimentConfig) {
        let r = &mut cfg.rerank;
        set!(self.methods => r.methods);
        set!(self.lambdas => r.lambdas);
        set!(self.n => r.n);
        set!(self.fs_target => r.fs_target);
        set!(self.fs_alpha => r.fs_alpha);
        set!(self.xq_variant => r.xq_variant);
    }
}

impl EvaluateFlags {
    fn apply(self, cfg: &mut ExperimentConfig) {
        if self.relevance_threshold.is_some() {
            cfg.evaluate.relevance_threshold = self.relevance_threshold;
        }
    }
}

impl FileFlags {
    fn paths(self, dir: &Path) -> RunPaths {
        let mut p = RunPaths::in_dir(dir);
        set!(self.ratings => p.ratings);
        set!(self.split => p.split);
        set!(self.partition => p.partition);
        set!(self.user_groups => p.user_groups);
        set!(self.model => p.model);
        set!(self.candidates => p.candidates);
        set!(self.report => p.report);
        p
    }
}

/// Missing inputs are usage errors, not data errors.
fn require(files: &[&Path]) -> Result<()> {
    for f in files {
        if !f.is_file() {
            return Err(Error::Config(format!("input file {} does not exist", f.display())));
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let mut cfg = match &cli.config {
        Some(path) => {
            require(&[path])?;
            ExperimentConfig::load(path)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = cli.dir {
        cfg.output.dir = dir;
    }
    let dir = cfg.output.dir.clone();
    match cli.command {
        Command::Ingest { data, files } => {
            data.apply(&mut cfg);
            cfg.validate()?;
            require(&[&cfg.data.path])?;
            let info = ingest_stage(&cfg, &files.paths(&dir))?;
            println!(
                "{} users, {} items, {} ratings",
                info.users, info.items, info.interactions
            );
        }
        Command::Split {
            split,
            partition,
            data,
            files,
        } => {
            split.apply(&mut cfg);
            partition.apply(&mut cfg);
            data.apply(&mut cfg);
            cfg.validate_stages()?;
            let paths = files.paths(&dir);
            require(&[&paths.ratings])?;
            let (s, p) = split_stage(&cfg, &paths)?;
            println!(
                "train {} test {}; head {} mid {} tail {} items",
                s.train, s.test, p.head, p.mid, p.tail
            );
        }
        Command::Train { model, data, files } => {
            model.apply(&mut cfg);
            data.apply(&mut cfg);
            cfg.validate_stages()?;
            let paths = files.paths(&dir);
            require(&[&paths.ratings, &paths.split, &paths.partition, &paths.user_groups])?;
            let info = train_stage(&cfg, &paths)?;
            println!("trained {} ({} sweeps)", info.kind, info.sweeps);
        }
        Command::Recommend { recommend, data, files } => {
            recommend.apply(&mut cfg);
            data.apply(&mut cfg);
            cfg.validate_stages()?;
            let paths = files.paths(&dir);
            require(&[
                &paths.ratings,
                &paths.split,
                &paths.partition,
                &paths.user_groups,
                &paths.model,
            ])?;
            recommend_stage(&cfg, &paths)?;
        }
        Command::Rerank {
            rerank,
            recommend,
            data,
            files,
        } => {
            rerank.apply(&mut cfg);
            recommend.apply(&mut cfg);
            data.apply(&mut cfg);
            cfg.validate_stages()?;
            let paths = files.paths(&dir);
            require(&[
                &paths.ratings,
                &paths.split,
                &paths.partition,
                &paths.user_groups,
                &paths.candidates,
            ])?;
            for cell in rerank_stage(&cfg, &paths, &sweep_cells(&cfg.rerank))? {
                println!(
                    "{}{}",
                    runner::cell_name(cell.method, cell.lambda),
                    if cell.relaxed { " (targets relaxed)" } else { "" }
                );
            }
        }
        Command::Evaluate {
            lists,
            evaluate,
            rerank,
            data,
            files,
        } => {
            evaluate.apply(&mut cfg);
            rerank.apply(&mut cfg);
            data.apply(&mut cfg);
            cfg.validate_stages()?;
            let paths = files.paths(&dir);
            require(&[&paths.ratings, &paths.split, &paths.partition, &paths.user_groups])?;
            let lists = if lists.is_empty() {
                find_lists(&paths.dir)?
            } else {
                lists
            };
            require(&lists.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
            let reports = evaluate_stage(&cfg, &paths, &lists)?;
            println!("{} report rows written to {}", reports.len(), paths.report.display());
        }
        Command::Sweep {
            data,
            split,
            partition,
            model,
            recommend,
            rerank,
            evaluate,
        } => {
            data.apply(&mut cfg);
            split.apply(&mut cfg);
            partition.apply(&mut cfg);
            model.apply(&mut cfg);
            recommend.apply(&mut cfg);
            rerank.apply(&mut cfg);
            evaluate.apply(&mut cfg);
            cfg.validate()?;
            require(&[&cfg.data.path])?;
            let summary = run_experiment(&cfg)?;
            println!("{} cells written to {}", summary.reports.len(), summary.dir.display());
        }
        Command::Report { runs, pick, out } => {
            let picks: BTreeMap<Method, f64> = pick.into_iter().collect();
            let rows = merge_reports(&runs, &picks)?;
            match out {
                Some(path) => {
                    let mut buf = Vec::new();
                    write_merged_csv(&rows, &mut buf)?;
                    std::fs::write(path, buf)?;
                }
                None => write_merged_csv(&rows, io::stdout().lock())?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => {
            let _ = io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numeric => 3,
            })
        }
    }
}
