//! Command-line front end: `gen-data`, `train`, `eval`, `sweep`, `report`.
//!
//! Every command writes `config_echo.json` into its `--out` directory.
//! Exit codes: 0 success, 1 usage, 2 I/O or format, 3 numeric failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::data::{generate_synthetic, load_dataset, save_dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::selector::SamplingStrategy;
use crate::trainkit::{
    csv_error, evaluate, load_checkpoint, save_checkpoint, train, write_loss_log, Task, TrainConfig, Trainer,
};

pub const CONFIG_ECHO: &str = "config_echo.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.fckp";
pub const LOSS_LOG: &str = "loss_log.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const TABLE_FILE: &str = "table.txt";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CHART_FILE: &str = "r1_vs_k.svg";

pub const SWEEP_COLUMNS: [&str; 9] = [
    "strategy",
    "k_or_rho",
    "seed",
    "r1",
    "r5",
    "r10",
    "medr",
    "selector_precision",
    "selector_recall",
];

#[derive(Debug, Parser)]
#[command(
    name = "frame-contrast",
    version,
    about = "Frame-level contrastive video-text training"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic planted-relevance dataset.
    GenData(GenDataArgs),
    /// Train a model and write its checkpoint and loss log.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write a metrics CSV.
    Eval(EvalArgs),
    /// Train and evaluate every strategy in a grid for every seed.
    Sweep(SweepArgs),
    /// Render a sweep CSV as a text table and an R@1-vs-k chart.
    Report(ReportArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 200)]
    pub num_pairs: usize,
    #[arg(long, default_value_t = 16)]
    pub num_topics: usize,
    #[arg(long, default_value_t = 32)]
    pub frames_per_video: usize,
    #[arg(long, default_value_t = 0.2)]
    pub relevant_fraction: f64,
    #[arg(long, default_value_t = 32)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 8)]
    pub tokens_per_text: usize,
    #[arg(long, default_value_t = 256)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 0)]
    pub num_answers: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep only pairs `[skip, skip + num_pairs)` of a longer draw, so train
    /// and test sets can share topic prototypes.
    #[arg(long, default_value_t = 0)]
    pub skip: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ConfigArgs {
    /// TOML file with training keys; defaults apply to omitted keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` overrides applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<TrainConfig> {
        let mut config = match &self.config {
            Some(p) => TrainConfig::from_toml(&fs::read_to_string(p)?)?,
            None => TrainConfig::default(),
        };
        for o in &self.overrides {
            config.set(o)?;
        }
        Ok(config)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Validation set for `select_on_validation`.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub dual_softmax: bool,
    /// Defaults to the checkpoint's task.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Comma-separated strategies, e.g. `fixed-k:1,fixed-k:7,fixed-k:32`;
    /// `baseline` trains with the fine-grained loss switched off.
    #[arg(long, value_delimiter = ',', required = true)]
    pub strategy_grid: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub dual_softmax: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Sweep CSV.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Format(_) | Error::Truncated { .. } | Error::UnknownVersion { .. } => 2,
        Error::NonFiniteLoss { .. } | Error::NonFinite(_) => 3,
        _ => 1,
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Report(a) => report(&a),
    }
}

fn echo(out: &Path, command: &str, args: &impl Serialize, config: Option<&TrainConfig>) -> Result<()> {
    fs::create_dir_all(out)?;
    let value = serde_json::json!({
        "command": command,
        "args": args,
        "config": config,
    });
    let text = serde_json::to_string_pretty(&value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(out.join(CONFIG_ECHO), text + "\n")?;
    Ok(())
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let spec = SyntheticSpec {
        num_pairs: a.skip + a.num_pairs,
        num_topics: a.num_topics,
        frames_per_video: a.frames_per_video,
        relevant_fraction: a.relevant_fraction,
        feature_dim: a.feature_dim,
        noise_std: a.noise_std,
        tokens_per_text: a.tokens_per_text,
        vocab_size: a.vocab_size,
        num_answers: a.num_answers,
        seed: a.seed,
    };
    let mut data = generate_synthetic(&spec)?;
    data.examples.drain(..a.skip);
    echo(&a.out, "gen-data", a, None)?;
    save_dataset(&data, &a.out)
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let config = a.config.load()?;
    echo(&a.out, "train", a, Some(&config))?;
    let data = load_dataset(&a.data)?;
    let val = a.val.as_deref().map(load_dataset).transpose()?;
    let mut trainer = Trainer::new(config, &data)?;
    if let Some(v) = &val {
        trainer = trainer.with_validation(v);
    }
    let outcome = trainer.run()?;
    save_checkpoint(&outcome.checkpoint, &a.out.join(CHECKPOINT_FILE))?;
    write_loss_log(&outcome.log, fs::File::create(a.out.join(LOSS_LOG))?)
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let task = match &a.task {
        Some(t) => t.parse::<Task>()?,
        None => ckpt.model.task(),
    };
    echo(&a.out, "eval", a, Some(&ckpt.model.config))?;
    let data = load_dataset(&a.data)?;
    let report = evaluate(&ckpt.model, &data, task, a.dual_softmax)?;
    let mut w = csv::Writer::from_path(a.out.join(METRICS_FILE)).map_err(csv_error)?;
    w.write_record([
        "r1",
        "r5",
        "r10",
        "medr",
        "accuracy",
        "selector_precision",
        "selector_recall",
    ])
    .map_err(csv_error)?;
    let mut row: Vec<String> = report.metrics.values().iter().map(|v| fmt_opt(*v)).collect();
    row.push(report.selector_precision.to_string());
    row.push(report.selector_recall.to_string());
    w.write_record(&row).map_err(csv_error)?;
    w.flush()?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One cell of a sweep grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GridEntry {
    /// Fine-grained loss switched off.
    Baseline,
    Strategy(SamplingStrategy),
}

impl std::str::FromStr for GridEntry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "baseline" => Ok(GridEntry::Baseline),
            other => other.parse().map(GridEntry::Strategy),
        }
    }
}

/// Trains and evaluates `entry` under `seed`; returns one sweep row.
pub fn sweep_cell(
    base: &TrainConfig,
    entry: GridEntry,
    seed: u64,
    train_set: &crate::data::Dataset,
    test_set: &crate::data::Dataset,
    dual_softmax: bool,
) -> Result<Vec<String>> {
    let mut config = base.clone();
    config.seed = seed;
    let (name, param) = match entry {
        GridEntry::Baseline => {
            config.l1_weight = 0.0;
            ("baseline".to_string(), String::new())
        }
        GridEntry::Strategy(s) => {
            config.strategy = s;
            (s.name().to_string(), s.parameter())
        }
    };
    config.validate()?;
    let outcome = train(config, train_set)?;
    let r = evaluate(&outcome.checkpoint.model, test_set, Task::Retrieval, dual_softmax)?;
    let m = &r.metrics;
    Ok(vec![
        name,
        param,
        seed.to_string(),
        fmt_opt(m.r1),
        fmt_opt(m.r5),
        fmt_opt(m.r10),
        fmt_opt(m.medr),
        r.selector_precision.to_string(),
        r.selector_recall.to_string(),
    ])
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let config = a.config.load()?;
    if config.task != Task::Retrieval {
        return Err(Error::invalid("sweep evaluates retrieval only"));
    }
    let grid = a
        .strategy_grid
        .iter()
        .map(|s| s.parse::<GridEntry>())
        .collect::<Result<Vec<_>>>()?;
    echo(&a.out, "sweep", a, Some(&config))?;
    let train_set = load_dataset(&a.data)?;
    let test_set = load_dataset(&a.test)?;
    let mut w = csv::Writer::from_path(a.out.join(SWEEP_FILE)).map_err(csv_error)?;
    w.write_record(SWEEP_COLUMNS).map_err(csv_error)?;
    for &entry in &grid {
        for &seed in &a.seeds {
            let row = sweep_cell(&config, entry, seed, &train_set, &test_set, a.dual_softmax)?;
            w.write_record(&row).map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Mean of each metric per `(strategy, k_or_rho)` in first-seen order.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub strategy: String,
    pub k_or_rho: String,
    pub seeds: usize,
    /// Means of `r1, r5, r10, medr, selector_precision, selector_recall`.
    pub means: [f64; 6],
}

pub fn summarize(csv_text: &str) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = reader.headers().map_err(csv_error)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("sweep CSV lacks column {name}")))
    };
    let idx: Vec<usize> = SWEEP_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let mut order: Vec<(String, String)> = Vec::new();
    let mut acc: BTreeMap<(String, String), (usize, [f64; 6])> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let key = (record[idx[0]].to_string(), record[idx[1]].to_string());
        let mut vals = [0.0; 6];
        for (v, &i) in vals.iter_mut().zip(&idx[3..]) {
            *v = record[i]
                .parse()
                .map_err(|_| Error::Format(format!("non-numeric value {:?}", &record[i])))?;
        }
        let entry = acc.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (0, [0.0; 6])
        });
        entry.0 += 1;
        for (s, v) in entry.1.iter_mut().zip(vals) {
            *s += v;
        }
    }
    Ok(order
        .into_iter()
        .map(|key| {
            let (n, sums) = acc[&key];
            SummaryRow {
                strategy: key.0,
                k_or_rho: key.1,
                seeds: n,
                means: sums.map(|s| s / n as f64),
            }
        })
        .collect())
}

pub fn render_table(rows: &[SummaryRow]) -> String {
    let header = [
        "strategy", "k_or_rho", "seeds", "r1", "r5", "r10", "medr", "sel_prec", "sel_rec",
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut cells = vec![r.strategy.clone(), r.k_or_rho.clone(), r.seeds.to_string()];
            cells.extend(r.means[..4].iter().map(|v| format!("{v:.2}")));
            cells.extend(r.means[4..].iter().map(|v| format!("{v:.3}")));
            cells
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            body.iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &header.map(String::from));
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for r in &body {
        line(&mut out, r);
    }
    out
}

/// Line chart of mean R@1 against k, one series per strategy with an
/// integer parameter.
pub fn render_chart(rows: &[SummaryRow]) -> String {
    let mut series: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        if let Ok(k) = r.k_or_rho.parse::<usize>() {
            series.entry(&r.strategy).or_default().push((k as f64, r.means[0]));
        }
    }
    for pts in series.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let (w, h, pad) = (480.0, 320.0, 48.0);
    let all: Vec<(f64, f64)> = series.values().flatten().copied().collect();
    let (xmin, xmax) = bounds(all.iter().map(|p| p.0));
    let (ymin, ymax) = bounds(all.iter().map(|p| p.1));
    let sx = |x: f64| pad + (x - xmin) / (xmax - xmin) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - ymin) / (ymax - ymin) * (h - 2.0 * pad);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let (x0, y0, x1, y1) = (pad, h - pad, w - pad, pad);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">k</text>"#,
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">R@1</text>"#,
        h / 2.0,
        h / 2.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{x0}" y="{}" text-anchor="middle">{xmin}</text>"#,
        y0 + 16.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{x1}" y="{}" text-anchor="middle">{xmax}</text>"#,
        y0 + 16.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end">{ymin:.1}</text>"#,
        x0 - 4.0,
        y0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end">{ymax:.1}</text>"#,
        x0 - 4.0,
        y1 + 4.0
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = colors[i % colors.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sx(x),
                sy(y)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#,
            x1 - 70.0,
            y1 + 14.0 * (i as f64 + 1.0)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn report(a: &ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&a.input)?;
    let rows = summarize(&text)?;
    echo(&a.out, "report", a, None)?;
    fs::write(a.out.join(TABLE_FILE), render_table(&rows))?;
    fs::write(a.out.join(CHART_FILE), render_chart(&rows))?;
    let mut w = csv::Writer::from_path(a.out.join(SUMMARY_FILE)).map_err(csv_error)?;
    w.write_record([
        "strategy",
        "k_or_rho",
        "seeds",
        "r1",
        "r5",
        "r10",
        "medr",
        "selector_precision",
        "selector_recall",
    ])
    .map_err(csv_error)?;
    for r in &rows {
        let mut rec = vec![r.strategy.clone(), r.k_or_rho.clone(), r.seeds.to_string()];
        rec.extend(r.means.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}
