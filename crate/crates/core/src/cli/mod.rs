//! Command-line front end: `train`, `sweep`, `compare`, `lipaudit` and
//! `report`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

pub mod config;
pub mod manifest;
pub mod render;
pub mod svg;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{load_train_test, SplitData};
use crate::error::{Error, Result};
use crate::lipschitz::lip_report;
use crate::model::{build_network, PartitionedParams};
use crate::trainer::{evaluate_params, pareto_sweep, run_once, Mode, RunSummary, SeedRun, Trainer};

pub use config::{Preset, RunConfig};
use manifest::{
    read_json, write_json, CompareDoc, DataStats, LipDoc, ModeRuns, RunManifest, SweepDoc, TrainResult,
    MANIFEST_FILE,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "FAIRBINN_OUT";

#[derive(Debug, Parser)]
#[command(name = "fairbinn", version, about = "Bilevel accuracy/fairness training on tabular data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write its trace, evaluation and parameters.
    Train(Common),
    /// Train every (eta, seed) cell and extract the accuracy/DP front.
    Sweep(Common),
    /// Run bilevel, Lagrangian and unconstrained training at matched settings.
    Compare(Common),
    /// Report Lipschitz constants and bounds of a network.
    Lipaudit(LipArgs),
    /// Re-render CSV and SVG outputs of an existing run directory.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config file (or a manifest.json from an earlier run).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in defaults; overrides a `preset` key in the config.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Output directory [default: $FAIRBINN_OUT/<command> or fairbinn_out/<command>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated seed list for sweep and compare.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Comma-separated eta list for sweep.
    #[arg(long)]
    pub etas: Option<String>,
    /// Worker threads for sweep and compare cells.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Override the number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Override eta for train and compare.
    #[arg(long)]
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct LipArgs {
    #[command(flatten)]
    pub common: Common,
    /// Trained parameters (params.json); freshly initialized weights otherwise.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Run directory containing manifest.json.
    pub dir: PathBuf,
}

/// Parses `args` (including the program name) and runs the command;
/// returns the process exit code.
pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

pub fn main() -> std::process::ExitCode {
    let code = run_with_args(std::env::args_os());
    std::process::ExitCode::from(code as u8)
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Train(c) => cmd_train(&c),
        Command::Sweep(c) => cmd_sweep(&c),
        Command::Compare(c) => cmd_compare(&c),
        Command::Lipaudit(a) => cmd_lipaudit(&a),
        Command::Report(a) => cmd_report(&a.dir),
    }
}

/// Config from `--config` / `--preset` with command-line overrides applied.
pub fn resolve_config(c: &Common) -> Result<RunConfig> {
    let mut rc = match (&c.config, c.preset) {
        (Some(path), preset) => RunConfig::load(path, preset)?,
        (None, Some(p)) => RunConfig::preset(p),
        (None, None) => return Err(Error::Config("pass --config or --preset".into())),
    };
    if let Some(s) = c.seed {
        rc.train.seed = s;
        rc.seeds = vec![s];
    }
    if let Some(s) = &c.seeds {
        rc.seeds = config::parse_u64_list(s)?;
    }
    if let Some(e) = &c.etas {
        rc.etas = config::parse_f64_list(e)?;
    }
    if let Some(j) = c.jobs {
        rc.jobs = j;
    }
    if let Some(e) = c.epochs {
        rc.train.epochs = e;
    }
    if let Some(e) = c.eta {
        rc.train.eta = e;
    }
    if rc.seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    rc.validate()?;
    Ok(rc)
}

fn out_dir(c: &Common, command: &str) -> Result<PathBuf> {
    let dir = match (&c.out, std::env::var_os(OUT_ENV)) {
        (Some(d), _) => d.clone(),
        (None, Some(root)) => PathBuf::from(root).join(command),
        (None, None) => PathBuf::from("fairbinn_out").join(command),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

pub fn load_data(rc: &RunConfig) -> Result<SplitData> {
    let data = load_train_test(
        &rc.train_path,
        rc.test_path.as_deref(),
        rc.test_fraction,
        rc.split_seed,
        &rc.schema,
    )?;
    eprintln!(
        "data: {} train rows, {} test rows, {} features, groups {:?}",
        data.train.len(),
        data.test.len(),
        data.train.width(),
        data.manifest.sensitive_groups
    );
    Ok(data)
}

fn base_manifest(command: &str, rc: &RunConfig, result: &str, data: &SplitData, dir: &Path) -> Result<RunManifest> {
    let mut m = RunManifest::new(command, rc, result);
    m.spec = Some(rc.architecture.into_spec(data.train.width())?);
    m.data = Some(DataStats::of(data));
    write_json(&dir.join("encoding.json"), &data.manifest)?;
    m.encoding = Some("encoding.json".into());
    Ok(m)
}

fn finish(dir: &Path, mut m: RunManifest, outputs: render::Outputs) -> Result<()> {
    m.outputs.insert("result".into(), m.result.clone());
    m.outputs.extend(outputs);
    write_json(&dir.join(MANIFEST_FILE), &m)?;
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn cmd_train(c: &Common) -> Result<i32> {
    let rc = resolve_config(c)?;
    let dir = out_dir(c, "train")?;
    let data = load_data(&rc)?;
    let spec = rc.architecture.into_spec(data.train.width())?;
    let cfg = &rc.train;
    let mut trainer = Trainer::new(&spec, cfg)?;
    let mut trace = crate::trainer::TrainTrace::default();
    for _ in 0..cfg.epochs {
        let r = trainer.epoch_record(&data.train, &data.test)?;
        eprintln!(
            "epoch {:>3}  bce_train {:.4}  acc_test {:.4}  dp_test {:.4}  {:.2}s",
            r.epoch, r.bce_train, r.acc_test, r.dp_test, r.epoch_seconds
        );
        trace.records.push(r);
    }
    let params = trainer.into_params();
    let report = evaluate_params(&params, &data.test)?;
    println!("accuracy {:.4}  dp {:.4}", report.accuracy, report.dp_diff);
    let doc = TrainResult {
        seed: cfg.seed,
        summary: RunSummary { report, trace },
    };

    let mut m = base_manifest("train", &rc, "run.json", &data, &dir)?;
    m.seeds = vec![cfg.seed];
    write_json(&dir.join("run.json"), &doc)?;
    write_json(&dir.join("params.json"), &params)?;
    m.outputs.insert("params".into(), "params.json".into());
    m.aggregation = vec!["single run; eval.json is the final test-set evaluation".into()];
    let outputs = render::render_train(&dir, &doc)?;
    finish(&dir, m, outputs)?;
    Ok(EXIT_OK)
}

fn cmd_sweep(c: &Common) -> Result<i32> {
    let rc = resolve_config(c)?;
    let dir = out_dir(c, "sweep")?;
    let data = load_data(&rc)?;
    let spec = rc.architecture.into_spec(data.train.width())?;
    eprintln!("sweep: etas {:?} x seeds {:?} on {} threads", rc.etas, rc.seeds, rc.jobs);
    let sweep = pareto_sweep(&spec, &data.train, &data.test, &rc.train, &rc.etas, &rc.seeds, rc.jobs)?;
    for (eta, seed, err) in sweep.failures() {
        eprintln!("cell eta={eta} seed={seed} failed: {err}");
    }
    let doc = SweepDoc {
        etas: rc.etas.clone(),
        seeds: rc.seeds.clone(),
        sweep,
    };
    print!("{}", doc.sweep.to_csv());

    let mut m = base_manifest("sweep", &rc, "sweep.json", &data, &dir)?;
    m.seeds = rc.seeds.clone();
    write_json(&dir.join("sweep.json"), &doc)?;
    m.aggregation = vec![
        "mean_acc: mean test accuracy over successful seeds".into(),
        "max_dp: largest test DP difference over successful seeds".into(),
        "front: rows not dominated in (higher mean_acc, lower max_dp)".into(),
    ];
    let outputs = render::render_sweep(&dir, &doc)?;
    finish(&dir, m, outputs)?;
    if doc.sweep.succeeded() == 0 {
        eprintln!("error: every sweep cell failed");
        return Ok(EXIT_RUNTIME);
    }
    Ok(EXIT_OK)
}

/// Runs the three modes at matched settings for every seed, on `jobs`
/// threads; results are ordered by (mode, seed) regardless of scheduling.
pub fn compare_runs(
    spec: &crate::model::NetworkSpec,
    data: &SplitData,
    base: &crate::trainer::TrainConfig,
    seeds: &[u64],
    jobs: usize,
) -> Result<CompareDoc> {
    let modes = [Mode::Bilevel, Mode::Lagrangian, Mode::None];
    let cells: Vec<(Mode, u64)> = modes
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let run = |&(mode, seed): &(Mode, u64)| {
        let mut cfg = base.matched(mode);
        cfg.seed = seed;
        SeedRun {
            seed,
            outcome: run_once(spec, &data.train, &data.test, &cfg).map_err(|e| e.to_string()),
        }
    };
    let runs: Vec<SeedRun> = if jobs <= 1 {
        cells.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| cells.par_iter().map(run).collect())
    };
    let mut runs = runs.into_iter();
    let modes = modes
        .iter()
        .map(|&mode| ModeRuns {
            mode,
            lambda: base.matched(mode).lambda,
            runs: runs.by_ref().take(seeds.len()).collect(),
        })
        .collect();
    let warmup = if base.epochs > 10 { 10 } else { 0 };
    Ok(CompareDoc {
        seeds: seeds.to_vec(),
        warmup,
        modes,
    })
}

fn cmd_compare(c: &Common) -> Result<i32> {
    let rc = resolve_config(c)?;
    let dir = out_dir(c, "compare")?;
    let data = load_data(&rc)?;
    let spec = rc.architecture.into_spec(data.train.width())?;
    eprintln!(
        "compare: eta {} (fairness rate {}), matched lambda {}, seeds {:?}",
        rc.train.eta,
        rc.train.fairness_rate(),
        rc.train.matched_lambda(),
        rc.seeds
    );
    let doc = compare_runs(&spec, &data, &rc.train, &rc.seeds, rc.jobs)?;
    let failed: usize = doc
        .modes
        .iter()
        .map(|m| m.runs.iter().filter(|r| r.outcome.is_err()).count())
        .sum();
    print!("{}", render::summary_csv(&doc));

    let mut m = base_manifest("compare", &rc, "compare.json", &data, &dir)?;
    m.seeds = rc.seeds.clone();
    write_json(&dir.join("compare.json"), &doc)?;
    m.aggregation = vec![
        "curves: mean training BCE per epoch over successful seeds".into(),
        "summary: means over successful seeds of final training BCE, test accuracy, test DP".into(),
        format!(
            "mean_epoch_seconds: per-seed mean over epochs above {}, then mean over seeds",
            doc.warmup
        ),
        "lagrangian lambda = lr_fairness * eta".into(),
    ];
    let outputs = render::render_compare(&dir, &doc)?;
    finish(&dir, m, outputs)?;
    if failed > 0 {
        eprintln!("error: {failed} run(s) failed");
        return Ok(EXIT_RUNTIME);
    }
    Ok(EXIT_OK)
}

fn cmd_lipaudit(a: &LipArgs) -> Result<i32> {
    let rc = resolve_config(&a.common)?;
    let dir = out_dir(&a.common, "lipaudit")?;
    let (width, data) = match rc.input_width {
        Some(w) => (w, None),
        None => {
            let d = load_data(&rc)?;
            (d.train.width(), Some(d))
        }
    };
    let spec = rc.architecture.into_spec(width)?;
    let (params, source): (PartitionedParams, String) = match &a.params {
        Some(p) => (read_json(p)?, p.display().to_string()),
        None => (
            build_network(&spec, rc.train.seed)?,
            format!("initialization, seed {}", rc.train.seed),
        ),
    };
    params
        .check_against(&spec)
        .map_err(|e| Error::Config(format!("params do not fit the configured network: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(rc.train.seed);
    let report = lip_report(&spec, &params, rc.lip_samples, &mut rng)?;
    match report.network_bound {
        Some(l) => println!("certified L = {l:.6}  dp bound = {:.6}", 2.0 * l),
        None => println!("unbounded layers {:?}: no certified bound", report.unbounded_layers),
    }
    if let Some(e) = &report.empirical {
        println!("empirical max ratio = {:.6} over {} samples", e.max_ratio, e.samples);
    }
    let doc = LipDoc {
        params_source: source,
        report,
    };
    let mut m = RunManifest::new("lipaudit", &rc, "lipreport.json");
    m.spec = Some(spec);
    m.seeds = vec![rc.train.seed];
    if let Some(d) = &data {
        m.data = Some(DataStats::of(d));
    }
    write_json(&dir.join("lipreport.json"), &doc)?;
    finish(&dir, m, render::Outputs::new())?;
    Ok(EXIT_OK)
}

fn cmd_report(dir: &Path) -> Result<i32> {
    let m = RunManifest::read(dir)?;
    let result = dir.join(&m.result);
    let outputs = match m.command.as_str() {
        "train" => render::render_train(dir, &read_json(&result)?)?,
        "sweep" => {
            let doc: SweepDoc = read_json(&result)?;
            print!("{}", doc.sweep.to_csv());
            render::render_sweep(dir, &doc)?
        }
        "compare" => {
            let doc: CompareDoc = read_json(&result)?;
            print!("{}", render::summary_csv(&doc));
            render::render_compare(dir, &doc)?
        }
        "lipaudit" => {
            let doc: LipDoc = read_json(&result)?;
            println!("{}", serde_json::to_string_pretty(&doc.report)?);
            render::Outputs::new()
        }
        other => return Err(Error::Config(format!("unknown command `{other}` in manifest"))),
    };
    for (k, f) in &outputs {
        eprintln!("{k}: {}", dir.join(f).display());
    }
    Ok(EXIT_OK)
}
