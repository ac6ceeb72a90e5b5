//! The four subcommands: train, props, prop1, report.

use crate::manifest::RunManifest;
use crate::plot::scatter_svg;
use fargan_core::data::points_to_csv;
use fargan_core::theory::{
    build_constructed, constructed_objective, construction_deviations, run_sweep, sweep_to_csv,
    unit_circle_dataset, SweepGrid, TheoryError,
};
use fargan_core::trainer::{trace_to_csv, TrainConfig};
use fargan_core::{generate_real, train, DatasetSpec, MetricSnapshot};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

/// Errors mapped to process exit codes: 1 config, 2 divergence,
/// 3 proposition fail, 4 degenerate input.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Divergence { seeds: Vec<u64> },
    PropositionFail(String),
    Degenerate(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Divergence { seeds } => {
                write!(f, "training diverged for seed(s) {seeds:?}; partial artifacts written")
            }
            CliError::PropositionFail(msg) => write!(f, "proposition check failed: {msg}"),
            CliError::Degenerate(msg) => write!(f, "degenerate input: {msg}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Divergence { .. } => 2,
            CliError::PropositionFail(_) => 3,
            CliError::Degenerate(_) => 4,
        }
    }
}

fn io_err(context: &str, e: std::io::Error) -> CliError {
    CliError::Config(format!("{context}: {e}"))
}

/// Top-level run configuration: the dataset and the training settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SeedSummary {
    seed: u64,
    diverged_at: Option<usize>,
    final_snapshot: Option<MetricSnapshot>,
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<u64>()
                .map_err(|e| CliError::Config(format!("bad seed {t:?}: {e}")))
        })
        .collect()
}

/// Runs one seed end to end and writes its artifact directory.
fn run_seed(config: &RunConfig, seed: u64, dir: &Path) -> Result<Option<usize>, CliError> {
    let mut train_cfg = config.train.clone();
    train_cfg.seed = seed;
    let dataset =
        generate_real(&config.dataset).map_err(|e| CliError::Config(e.to_string()))?;
    let out = train(&train_cfg, &dataset).map_err(|e| CliError::Config(e.to_string()))?;

    fs::create_dir_all(dir.join("metrics")).map_err(|e| io_err("creating metrics dir", e))?;
    fs::write(dir.join("trace.csv"), trace_to_csv(&out.state.trace))
        .map_err(|e| io_err("writing trace.csv", e))?;
    fs::write(dir.join("samples.csv"), points_to_csv(&out.report.final_samples))
        .map_err(|e| io_err("writing samples.csv", e))?;
    fs::write(dir.join("real.csv"), points_to_csv(dataset.points()))
        .map_err(|e| io_err("writing real.csv", e))?;
    fs::write(
        dir.join("scatter.svg"),
        scatter_svg(dataset.points(), &out.report.final_samples),
    )
    .map_err(|e| io_err("writing scatter.svg", e))?;
    for snapshot in &out.report.snapshots {
        let path = dir.join("metrics").join(format!("iter_{:08}.json", snapshot.iter));
        let json = serde_json::to_string_pretty(snapshot)
            .map_err(|e| CliError::Config(e.to_string()))?;
        fs::write(path, json).map_err(|e| io_err("writing metric snapshot", e))?;
    }
    let gen_ck = out.state.generator.to_checkpoint(seed);
    let disc_ck = out.state.discriminator.to_checkpoint(seed);
    fs::write(
        dir.join("generator.json"),
        serde_json::to_string(&gen_ck).map_err(|e| CliError::Config(e.to_string()))?,
    )
    .map_err(|e| io_err("writing generator.json", e))?;
    fs::write(
        dir.join("discriminator.json"),
        serde_json::to_string(&disc_ck).map_err(|e| CliError::Config(e.to_string()))?,
    )
    .map_err(|e| io_err("writing discriminator.json", e))?;
    let summary = SeedSummary {
        seed,
        diverged_at: out.report.diverged_at,
        final_snapshot: out.report.snapshots.last().cloned(),
    };
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| CliError::Config(e.to_string()))?,
    )
    .map_err(|e| io_err("writing report.json", e))?;
    Ok(out.report.diverged_at)
}

pub fn cmd_train(config_path: &Path, out_dir: &Path, seeds: Option<&str>) -> Result<(), CliError> {
    let bytes = fs::read(config_path).map_err(|e| io_err("reading config", e))?;
    let config: RunConfig = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Config(format!("parsing {}: {e}", config_path.display())))?;
    config
        .train
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let seeds = match seeds {
        Some(s) => parse_seeds(s)?,
        None => vec![config.train.seed],
    };
    if seeds.is_empty() {
        return Err(CliError::Config("seed list is empty".into()));
    }

    if out_dir.join("manifest.json").exists() {
        return Err(CliError::Config(format!(
            "output directory {} already holds a run manifest; each run needs its own directory",
            out_dir.display()
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| io_err("creating output dir", e))?;
    let manifest = RunManifest::new("train", config_path, out_dir, &bytes, seeds.clone());
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Config(e.to_string()))?,
    )
    .map_err(|e| io_err("writing manifest", e))?;

    // Seeds fan out to a bounded pool; each worker owns its own subdirectory.
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(seeds.len());
    let jobs = Mutex::new(seeds.clone());
    let results: Mutex<Vec<(u64, Result<Option<usize>, CliError>)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let seed = match jobs.lock().unwrap().pop() {
                    Some(s) => s,
                    None => break,
                };
                let dir = out_dir.join(format!("seed-{seed}"));
                let result = fs::create_dir_all(&dir)
                    .map_err(|e| io_err("creating seed dir", e))
                    .and_then(|_| run_seed(&config, seed, &dir));
                results.lock().unwrap().push((seed, result));
            });
        }
    });

    let mut diverged = Vec::new();
    for (seed, result) in results.into_inner().unwrap() {
        match result {
            Ok(None) => {}
            Ok(Some(_)) => diverged.push(seed),
            Err(e) => return Err(e),
        }
    }
    if diverged.is_empty() {
        Ok(())
    } else {
        diverged.sort_unstable();
        Err(CliError::Divergence { seeds: diverged })
    }
}

/// Grid spec format: "m0=1,2,4;k=0.1,1;lambda=0,1e6;n=64;m=64". Missing keys
/// keep their defaults.
pub fn parse_grid(s: &str) -> Result<SweepGrid, CliError> {
    let mut grid = SweepGrid::default();
    for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, values) = part
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("grid entry {part:?} is not key=v1,v2")))?;
        let parse_usize = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|e| CliError::Config(format!("grid value {v:?}: {e}")))
        };
        let parse_f64 = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Config(format!("grid value {v:?}: {e}")))
        };
        match key.trim() {
            "n" => grid.n = values.split(',').map(parse_usize).collect::<Result<_, _>>()?,
            "m" => grid.m = values.split(',').map(parse_usize).collect::<Result<_, _>>()?,
            "m0" => grid.m0 = values.split(',').map(parse_usize).collect::<Result<_, _>>()?,
            "k" => grid.k = values.split(',').map(parse_f64).collect::<Result<_, _>>()?,
            "lambda" => {
                grid.lambda = values.split(',').map(parse_f64).collect::<Result<_, _>>()?
            }
            other => {
                return Err(CliError::Config(format!("unknown grid axis {other:?}")));
            }
        }
    }
    Ok(grid)
}

pub fn cmd_props(grid: Option<&str>, out_dir: &Path) -> Result<(), CliError> {
    let grid = match grid {
        Some(s) => parse_grid(s)?,
        None => SweepGrid::default(),
    };
    fs::create_dir_all(out_dir).map_err(|e| io_err("creating output dir", e))?;
    let report = run_sweep(&grid, true);
    fs::write(out_dir.join("sweep.csv"), sweep_to_csv(&report))
        .map_err(|e| io_err("writing sweep.csv", e))?;

    let mut verdict_text = String::new();
    let mut failed = 0usize;
    for v in &report.verdicts {
        let status = if v.pass { "PASS" } else { "FAIL" };
        if !v.pass {
            failed += 1;
        }
        writeln!(verdict_text, "[{status}] {}: {}", v.claim, v.detail).unwrap();
    }
    let bad_cells: Vec<String> = report
        .rows
        .iter()
        .filter_map(|r| match &r.status {
            fargan_core::theory::CellStatus::Ok => None,
            fargan_core::theory::CellStatus::Failed(msg) => Some(format!(
                "cell n={} m={} m0={} k={} lambda={}: {msg}",
                r.n, r.m, r.m0, r.k, r.lambda
            )),
        })
        .collect();
    for cell in &bad_cells {
        writeln!(verdict_text, "[FAIL] {cell}").unwrap();
    }
    let summary = format!(
        "{} cells, {} verdicts, {} verdict failures, {} cell failures => {}",
        report.rows.len(),
        report.verdicts.len(),
        failed,
        bad_cells.len(),
        if report.all_pass() { "PASS" } else { "FAIL" }
    );
    writeln!(verdict_text, "{summary}").unwrap();
    fs::write(out_dir.join("verdicts.txt"), &verdict_text)
        .map_err(|e| io_err("writing verdicts.txt", e))?;
    println!("{summary}");
    if report.all_pass() {
        Ok(())
    } else {
        Err(CliError::PropositionFail(summary))
    }
}

/// Dataset spec format for prop1: "n=32,m=32,seed=7".
pub fn parse_prop1_dataset(s: &str) -> Result<(usize, usize, u64), CliError> {
    let (mut n, mut m, mut seed) = (32usize, 32usize, 7u64);
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("dataset entry {part:?} is not key=value")))?;
        let parse = |v: &str| -> Result<u64, CliError> {
            v.trim()
                .parse::<u64>()
                .map_err(|e| CliError::Config(format!("dataset value {v:?}: {e}")))
        };
        match key.trim() {
            "n" => n = parse(value)? as usize,
            "m" => m = parse(value)? as usize,
            "seed" => seed = parse(value)?,
            other => return Err(CliError::Config(format!("unknown dataset key {other:?}"))),
        }
    }
    if n == 0 || m == 0 {
        return Err(CliError::Config("n and m must be positive".into()));
    }
    Ok((n, m, seed))
}

#[derive(Serialize)]
struct Prop1Report {
    eps: f64,
    sharpness: f64,
    n: usize,
    m: usize,
    seed: u64,
    dev_x0: f64,
    dev_y0: f64,
    max_dev_elsewhere: f64,
    objective: f64,
    theoretical_equilibrium: f64,
    status: String,
}

pub fn cmd_prop1(
    eps: f64,
    sharpness: f64,
    dataset: Option<&str>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let (n, m, seed) = match dataset {
        Some(s) => parse_prop1_dataset(s)?,
        None => (32, 32, 7),
    };
    let ds = unit_circle_dataset(n, m, seed);
    let built = build_constructed(ds.reals[0], ds.fakes[0], &ds.others(), eps, sharpness, sharpness);
    let disc = match built {
        Ok(d) => d,
        Err(e @ (TheoryError::Degenerate { .. } | TheoryError::NotUnitNorm { .. })) => {
            return Err(CliError::Degenerate(e.to_string()));
        }
        Err(e) => return Err(CliError::Config(e.to_string())),
    };
    let dev = construction_deviations(&disc, &ds);
    let objective = constructed_objective(&disc, &ds);
    let equilibrium = 2.0 * 0.5f64.ln();

    let tol = 1e-3;
    let status = if dev.max_abs() <= tol && objective > equilibrium && eps > 0.0 {
        "PASS"
    } else if eps == 0.0 && dev.max_abs() <= tol {
        // At eps = 0 the objective equals the equilibrium value exactly;
        // the strict inequality cannot hold.
        "BOUNDARY"
    } else {
        "FAIL"
    };
    let report = Prop1Report {
        eps,
        sharpness,
        n,
        m,
        seed,
        dev_x0: dev.at_x0,
        dev_y0: dev.at_y0,
        max_dev_elsewhere: dev.max_elsewhere,
        objective,
        theoretical_equilibrium: equilibrium,
        status: status.to_string(),
    };
    let json =
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(path) = out {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err("creating output dir", e))?;
        }
        fs::write(path, &json).map_err(|e| io_err("writing prop1 report", e))?;
    }
    println!("{json}");
    if status == "PASS" {
        Ok(())
    } else {
        Err(CliError::PropositionFail(format!(
            "{status}: max deviation {:.3e} (tol {tol:.0e}), objective {objective:.6} vs {equilibrium:.6}",
            dev.max_abs()
        )))
    }
}

fn collect_metric_files(dir: &Path, found: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let entries = fs::read_dir(dir).map_err(|e| io_err("reading runs dir", e))?;
    for entry in entries {
        let entry = entry.map_err(|e| io_err("reading runs dir", e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_metric_files(&path, found)?;
        } else if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
            if name.starts_with("iter_") && name.ends_with(".json") {
                found.push(path);
            }
        }
    }
    Ok(())
}

/// Aggregates every metric snapshot under a directory tree into one CSV.
pub fn cmd_report(runs: &Path, out: &Path) -> Result<(), CliError> {
    let mut files = Vec::new();
    collect_metric_files(runs, &mut files)?;
    files.sort();
    let mut csv = String::from(
        "run,iter,modes_covered,hq_ratio,pairs,sources,max_fakes_per_source,surrogate_max,d_loss,g_loss,collapse_flag\n",
    );
    for path in files {
        let bytes = fs::read(&path).map_err(|e| io_err("reading metric file", e))?;
        let snap: MetricSnapshot = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Config(format!("parsing {}: {e}", path.display())))?;
        let run = path
            .parent()
            .and_then(|metrics| metrics.parent())
            .and_then(|seed_dir| seed_dir.strip_prefix(runs).ok())
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        writeln!(
            csv,
            "{run},{},{},{},{},{},{},{},{},{},{}",
            snap.iter,
            snap.modes_covered,
            snap.hq_ratio,
            snap.pairs,
            snap.sources,
            snap.max_fakes_per_source,
            snap.surrogate_max,
            snap.d_loss,
            snap.g_loss,
            snap.collapse_flag
        )
        .unwrap();
    }
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err("creating output dir", e))?;
    }
    fs::write(out, csv).map_err(|e| io_err("writing report CSV", e))?;
    Ok(())
}
