//! The `warpalign` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde::Serialize;

use crate::baselines::{dba_average, medoid};
use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
use crate::data::{
    equalize_lengths, equalize_to, group_by_label, mean_series, parse_ucr_tsv, ClassGroup, Label,
};
use crate::data::{LabeledDataset, Series};
use crate::error::Error;
use crate::losses::{mean_pairwise_loss_of, LossConfig};
use crate::net::NetConfig;
use crate::par;
use crate::pipeline::classify::{DBA_MAX_ITER, DBA_TOL};
use crate::pipeline::{
    classify_dba_nn, classify_dtw_nn, classify_nn, classify_ours, infer_warp, timing_bench,
    train_class_warper, ClassWarper, TimingRow, TrainConfig,
};
use crate::report::{
    mpce_row, series_points, write_atomic, write_rows, AccuracyRow, Format, Method, SeriesPoint,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_MISSING_INPUT: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "WARPALIGN_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Train,
    Align,
    Average,
    Classify,
    Bench,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Nn,
    Dtw,
    Dba,
    Ours,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "warpalign",
    version,
    about = "Align, average and classify time series with a learned warper"
)]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    /// Directory holding `<Name>_TRAIN.tsv` and `<Name>_TEST.tsv`, either
    /// directly or under `<Name>/`.
    #[arg(long)]
    pub data: PathBuf,
    /// Dataset name; several may be given, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub name: Vec<String>,
    /// Restrict to one class label.
    #[arg(long)]
    pub label: Option<Label>,
    #[arg(long, value_enum, default_value = "all")]
    pub method: MethodArg,
    #[arg(long, default_value_t = 25)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lambda2: f64,
    /// Number of warp segments.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Restart seeds; the first also drives length equalization.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seed: Vec<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
    /// Timing repetitions; medians are reported.
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
}

/// Validated settings echoed into every report.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub data: PathBuf,
    pub names: Vec<String>,
    pub label: Option<Label>,
    pub methods: Vec<Method>,
    pub k: usize,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub out: PathBuf,
    pub format: Format,
    pub seeds: Vec<u64>,
    pub repeat: usize,
}

#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Missing(String),
    Lib(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_VALIDATION,
            CliError::Missing(_) => EXIT_MISSING_INPUT,
            CliError::Lib(e) => match e {
                Error::Training { .. } | Error::NonFinite(_) => EXIT_TRAINING,
                Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING_INPUT,
                _ => EXIT_VALIDATION,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "invalid arguments: {m}"),
            CliError::Missing(m) => write!(f, "missing input: {m}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

impl RunConfig {
    pub fn from_args(args: &Args) -> CliResult<Self> {
        let train = TrainConfig {
            epochs: args.epochs,
            checkpoint_every: args
                .epochs
                .min(TrainConfig::default().checkpoint_every)
                .max(1),
            lr: args.lr,
            seeds: args.seed.clone(),
            ..TrainConfig::default()
        };
        train.validate()?;
        let loss = LossConfig {
            lambda1: args.lambda1,
            lambda2: args.lambda2,
            ..LossConfig::default()
        };
        loss.validate()?;
        if args.k == 0 {
            return Err(CliError::Invalid("--k must be at least 1".into()));
        }
        if args.repeat == 0 {
            return Err(CliError::Invalid("--repeat must be at least 1".into()));
        }
        if args.name.iter().any(|n| n.is_empty()) {
            return Err(CliError::Invalid("--name must not be empty".into()));
        }
        let methods = match args.method {
            MethodArg::Nn => vec![Method::Nn],
            MethodArg::Dtw => vec![Method::Dtw],
            MethodArg::Dba => vec![Method::Dba],
            MethodArg::Ours => vec![Method::Ours],
            MethodArg::All => Method::ALL.to_vec(),
        };
        Ok(Self {
            command: args.command,
            data: args.data.clone(),
            names: args.name.clone(),
            label: args.label,
            methods,
            k: args.k,
            train,
            loss,
            out: args.out.clone(),
            format: match args.format {
                FormatArg::Csv => Format::Csv,
                FormatArg::Json => Format::Json,
            },
            seeds: args.seed.clone(),
            repeat: args.repeat,
        })
    }

    fn data_seed(&self) -> u64 {
        self.seeds[0]
    }

    fn net_config(&self, len: usize, dim: usize) -> CliResult<NetConfig> {
        let cfg = NetConfig::new(len, dim).with_k(self.k);
        cfg.validate()?;
        Ok(cfg)
    }

    fn checkpoint_path(&self, name: &str, label: Label) -> PathBuf {
        self.out.join(format!("{name}.{label}.wrpn"))
    }

    fn output_path(&self, stem: &str) -> PathBuf {
        self.out.join(format!("{stem}.{}", self.format.extension()))
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run_from<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_VALIDATION
            } else {
                EXIT_OK
            };
            let _ = e.print();
            return code;
        }
    };
    match run(&args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("warpalign: {e}");
            e.exit_code()
        }
    }
}

pub fn run(args: &Args) -> CliResult<()> {
    let cfg = RunConfig::from_args(args)?;
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        par::init_threads(n);
    }
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Invalid(format!("cannot create {}: {e}", cfg.out.display())))?;
    match cfg.command {
        Command::Train => cmd_train(&cfg),
        Command::Align => cmd_align(&cfg),
        Command::Average => cmd_average(&cfg),
        Command::Classify => cmd_classify(&cfg),
        Command::Bench => cmd_bench(&cfg),
    }
}

fn split_path(data: &Path, name: &str, split: &str) -> CliResult<PathBuf> {
    let file = format!("{name}_{split}.tsv");
    for p in [data.join(&file), data.join(name).join(&file)] {
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(CliError::Missing(format!(
        "{file} not found under {}",
        data.display()
    )))
}

/// Equalized train and test splits; the test split takes the training length.
pub struct LoadedDataset {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

fn load(cfg: &RunConfig, name: &str, with_test: bool) -> CliResult<LoadedDataset> {
    let train = parse_ucr_tsv(split_path(&cfg.data, name, "TRAIN")?)?;
    let train = equalize_lengths(&train, cfg.data_seed())?;
    let len = train.items[0].series.len();
    let test = if with_test {
        let test = parse_ucr_tsv(split_path(&cfg.data, name, "TEST")?)?;
        equalize_to(&test, len, cfg.data_seed())?
    } else {
        train.clone()
    };
    Ok(LoadedDataset { train, test })
}

fn selected_groups(cfg: &RunConfig, train: &LabeledDataset) -> CliResult<Vec<ClassGroup>> {
    let groups = group_by_label(train)?;
    match cfg.label {
        None => Ok(groups),
        Some(l) => {
            let picked: Vec<ClassGroup> = groups.into_iter().filter(|g| g.label == l).collect();
            if picked.is_empty() {
                return Err(CliError::Invalid(format!(
                    "label {l} does not occur in {}",
                    train.name
                )));
            }
            Ok(picked)
        }
    }
}

/// Rebuilds a class warper from its checkpoint and the training group.
fn warper_from_checkpoint(cp: Checkpoint, group: &ClassGroup) -> CliResult<ClassWarper> {
    let net_cfg = cp.network.config();
    if let Some((d, t)) = group.shape() {
        if d != net_cfg.input_dim || t != net_cfg.input_len {
            return Err(CliError::Invalid(format!(
                "checkpoint for class {} expects {}x{} series, data has {d}x{t}",
                group.label, net_cfg.input_dim, net_cfg.input_len
            )));
        }
    }
    let mut warper = ClassWarper {
        label: group.label,
        network: cp.network,
        warped_group: Vec::with_capacity(group.len()),
        history: Vec::new(),
        seed: cp.header.seed,
        epoch: cp.header.epoch,
        validation_loss: cp.header.loss,
    };
    for s in &group.series {
        let w = infer_warp(&warper, s)?;
        warper.warped_group.push(w);
    }
    Ok(warper)
}

fn load_warper(cfg: &RunConfig, name: &str, group: &ClassGroup) -> CliResult<ClassWarper> {
    let path = cfg.checkpoint_path(name, group.label);
    if !path.is_file() {
        return Err(CliError::Missing(format!(
            "checkpoint {} not found; run `warpalign train` first",
            path.display()
        )));
    }
    warper_from_checkpoint(load_checkpoint(&path)?, group)
}

#[derive(Debug, Serialize)]
struct TrainClassReport {
    label: Label,
    n_train: usize,
    seed: u64,
    epoch: usize,
    validation_loss: f64,
    pre_loss: f64,
    post_loss: f64,
    train_s: f64,
    history: Vec<f64>,
    checkpoint: PathBuf,
}

fn cmd_train(cfg: &RunConfig) -> CliResult<()> {
    for name in &cfg.names {
        let ds = load(cfg, name, false)?;
        let groups = selected_groups(cfg, &ds.train)?;
        let mut classes = Vec::with_capacity(groups.len());
        for g in &groups {
            let (d, t) = g.shape().expect("groups are nonempty");
            let net_cfg = cfg.net_config(t, d)?;
            let start = Instant::now();
            let w = train_class_warper(g, &net_cfg, &cfg.train, &cfg.loss)?;
            let train_s = start.elapsed().as_secs_f64();
            let avg = mean_series(&w.warped_group)?;
            let meta = CheckpointMeta {
                dataset: name.clone(),
                label: g.label,
                epoch: w.epoch,
                loss: w.validation_loss,
            };
            let path = cfg.checkpoint_path(name, g.label);
            save_checkpoint(&w.network, &meta, Some(&avg), &path)?;
            classes.push(TrainClassReport {
                label: g.label,
                n_train: g.len(),
                seed: w.seed,
                epoch: w.epoch,
                validation_loss: w.validation_loss,
                pre_loss: mean_pairwise_loss_of(&g.series, cfg.loss.epsilon)?,
                post_loss: mean_pairwise_loss_of(&w.warped_group, cfg.loss.epsilon)?,
                train_s,
                history: w.history,
                checkpoint: path,
            });
        }
        let doc = serde_json::json!({ "config": cfg, "dataset": name, "classes": classes });
        write_atomic(
            &cfg.out.join(format!("{name}.train.json")),
            &serde_json::to_vec_pretty(&doc).map_err(Error::from)?,
        )?;
    }
    Ok(())
}

fn cmd_align(cfg: &RunConfig) -> CliResult<()> {
    for name in &cfg.names {
        let ds = load(cfg, name, true)?;
        for g in selected_groups(cfg, &ds.train)? {
            let warper = load_warper(cfg, name, &g)?;
            let mut rows: Vec<SeriesPoint> = Vec::new();
            for (i, it) in ds
                .test
                .items
                .iter()
                .enumerate()
                .filter(|(_, it)| it.label == g.label)
            {
                let warped = infer_warp(&warper, &it.series)?;
                push_series(&mut rows, &format!("test{i}"), "original", &it.series);
                push_series(&mut rows, &format!("test{i}"), "warped", &warped);
            }
            write_rows(
                &cfg.output_path(&format!("{name}.{}.align", g.label)),
                cfg.format,
                cfg,
                &rows,
            )?;
        }
    }
    Ok(())
}

/// Appends one row block per channel; multichannel series get `:c<r>`
/// suffixed ids.
fn push_series(rows: &mut Vec<SeriesPoint>, id: &str, role: &str, s: &Series) {
    for (r, row) in s.rows().enumerate() {
        let id = if s.dim() == 1 {
            id.to_string()
        } else {
            format!("{id}:c{r}")
        };
        rows.extend(series_points(&id, role, row));
    }
}

fn cmd_average(cfg: &RunConfig) -> CliResult<()> {
    for name in &cfg.names {
        let ds = load(cfg, name, false)?;
        for g in selected_groups(cfg, &ds.train)? {
            let warper = load_warper(cfg, name, &g)?;
            let mut rows = Vec::new();
            for (i, (s, w)) in g.series.iter().zip(&warper.warped_group).enumerate() {
                push_series(&mut rows, &format!("member{i}"), "member", s);
                push_series(&mut rows, &format!("member{i}"), "warped_member", w);
            }
            let simple = mean_series(&g.series)?;
            let dba = dba_average(&g, &medoid(&g)?, DBA_MAX_ITER, DBA_TOL)?.barycenter;
            let ours = mean_series(&warper.warped_group)?;
            push_series(&mut rows, "simple_average", "simple_average", &simple);
            push_series(&mut rows, "dba_average", "dba_average", &dba);
            push_series(&mut rows, "warped_average", "warped_average", &ours);
            write_rows(
                &cfg.output_path(&format!("{name}.{}.average", g.label)),
                cfg.format,
                cfg,
                &rows,
            )?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
struct MethodRow {
    dataset: String,
    method: String,
    accuracy: f64,
    seconds: f64,
}

fn cmd_classify(cfg: &RunConfig) -> CliResult<()> {
    let mut table = Vec::new();
    let mut method_rows = Vec::new();
    for name in &cfg.names {
        let ds = load(cfg, name, true)?;
        let groups = group_by_label(&ds.train)?;
        let mut row = AccuracyRow {
            dataset: name.clone(),
            classes: groups.len(),
            ..Default::default()
        };
        for &m in &cfg.methods {
            let start = Instant::now();
            let acc = match m {
                Method::Nn => classify_nn(&ds.train, &ds.test)?,
                Method::Dtw => classify_dtw_nn(&ds.train, &ds.test)?,
                Method::Dba => classify_dba_nn(&ds.train, &ds.test)?,
                Method::Ours => {
                    let warpers: Vec<ClassWarper> = groups
                        .iter()
                        .map(|g| load_warper(cfg, name, g))
                        .collect::<CliResult<_>>()?;
                    let acc = classify_ours(&warpers, &ds.test, &cfg.loss)?;
                    let eps = cfg.loss.epsilon;
                    let (mut pre, mut post) = (0.0, 0.0);
                    for (g, w) in groups.iter().zip(&warpers) {
                        pre += mean_pairwise_loss_of(&g.series, eps)?;
                        post += mean_pairwise_loss_of(&w.warped_group, eps)?;
                    }
                    row.cs_org = Some(pre / groups.len() as f64);
                    row.cs_warp = Some(post / groups.len() as f64);
                    acc
                }
            };
            row.set(m, acc);
            method_rows.push(MethodRow {
                dataset: name.clone(),
                method: m.column().to_string(),
                accuracy: acc,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
        table.push(row);
    }
    if table.len() > 1 {
        let summary = mpce_row(&table)?;
        table.push(summary);
    }
    write_rows(&cfg.output_path("classify"), cfg.format, cfg, &table)?;
    write_rows(
        &cfg.output_path("classify_methods"),
        cfg.format,
        cfg,
        &method_rows,
    )?;
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Column-wise medians of repeated timing rows.
pub fn median_row(rows: &[TimingRow]) -> TimingRow {
    let col = |f: fn(&TimingRow) -> f64| median(rows.iter().map(f).collect());
    TimingRow {
        name: rows[0].name.clone(),
        label: rows[0].label,
        n_train: rows[0].n_train,
        our_train_s: col(|r| r.our_train_s),
        our_test_s: col(|r| r.our_test_s),
        our_whole_s: col(|r| r.our_whole_s),
        dba_whole_s: col(|r| r.dba_whole_s),
    }
}

fn cmd_bench(cfg: &RunConfig) -> CliResult<()> {
    let mut rows = Vec::new();
    for name in &cfg.names {
        let ds = load(cfg, name, true)?;
        for g in selected_groups(cfg, &ds.train)? {
            let (d, t) = g.shape().expect("groups are nonempty");
            let net_cfg = cfg.net_config(t, d)?;
            let runs: Vec<TimingRow> = (0..cfg.repeat)
                .map(|_| timing_bench(name, &g, &ds.test, &net_cfg, &cfg.train, &cfg.loss))
                .collect::<crate::Result<_>>()?;
            rows.push(median_row(&runs));
        }
    }
    write_rows(&cfg.output_path("bench"), cfg.format, cfg, &rows)?;
    Ok(())
}
