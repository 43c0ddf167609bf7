//! Subcommand implementations over the run registry
//! `{output_dir}/{algorithms}/{mode}/{seed}/`:
//!
//! ```text
//! config.toml          resolved single-seed config
//! meta.json            schema hash, code version, λ used, status
//! calibration.json     gated runs: λ pilot summary
//! pilot_log.jsonl      gated runs: the pilot's run log
//! run_log.jsonl        one record per optimizer step
//! checkpoints/latest.ckpt
//! reports/{algorithm}_{split}_n{n}.json      EvalReport
//! reports/{algorithm}_{split}_n{n}.raw.json  raw output logits
//! plots/               CSV curves and SVG figures
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use nar_core::checkpoint::Checkpoint;
use nar_core::dataset::Dataset;
use nar_core::eval::{
    evaluate, gate_norm_curve, per_step_loss_curves, rescore, write_curve_csv, EvalReport, RawPredictions, Split,
};
use nar_core::model::{HistoryMode, Model};
use nar_core::objective::{calibrate_lambda, Calibration, RunLog, TaskData, Trainer};
use nar_core::traces::{AlgorithmId, Trajectory};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SPLITS};
use crate::error::{CliError, CliResult};
use crate::svg;

pub const CODE_VERSION: &str = concat!("nar ", env!("CARGO_PKG_VERSION"));

pub fn dataset_path(cfg: &ExperimentConfig, algo: AlgorithmId, split: &str) -> PathBuf {
    cfg.data_dir().join(algo.name()).join(format!("{split}.nar"))
}

/// Writes every split of every configured algorithm. Existing identical
/// files are left alone; differing ones are replaced only with `force`.
pub fn gen_data(cfg: &ExperimentConfig, force: bool) -> CliResult<Vec<PathBuf>> {
    let mut written = Vec::new();
    for &algo in &cfg.algorithms {
        for split in SPLITS {
            let (sizes, count, base) = cfg.data.split(split)?;
            let bytes = Dataset::generate(algo, split, sizes, count, base)?.to_bytes()?;
            let path = dataset_path(cfg, algo, split);
            match fs::read(&path) {
                Ok(old) if old == bytes => {}
                Ok(_) if !force => return Err(CliError::RefusesOverwrite(path.display().to_string())),
                _ => {
                    fs::create_dir_all(path.parent().unwrap())?;
                    fs::write(&path, &bytes)?;
                }
            }
            written.push(path);
        }
    }
    Ok(written)
}

fn load_split(cfg: &ExperimentConfig, algo: AlgorithmId, split: &str) -> CliResult<Vec<Trajectory>> {
    let ds = Dataset::read(&dataset_path(cfg, algo, split))?;
    if ds.header.algorithm != algo {
        return Err(nar_core::Error::SchemaMismatch(format!("{split} file holds {} data", ds.header.algorithm)).into());
    }
    Ok(ds.trajectories)
}

fn task_data(cfg: &ExperimentConfig) -> CliResult<Vec<TaskData>> {
    cfg.algorithms
        .iter()
        .map(|&a| Ok(TaskData { algorithm: a, train: load_split(cfg, a, "train")?, val: load_split(cfg, a, "val")? }))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub code_version: String,
    pub schema_hash: String,
    pub algorithms: Vec<AlgorithmId>,
    pub history_mode: HistoryMode,
    pub seed: u64,
    pub lambda: f64,
    pub steps_done: usize,
    pub complete: bool,
}

fn write_json(path: &Path, v: &impl Serialize) -> CliResult<()> {
    fs::create_dir_all(path.parent().unwrap())?;
    fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| nar_core::Error::MissingTelemetry(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn read_log(path: &Path) -> CliResult<RunLog> {
    let f = fs::File::open(path).map_err(|e| nar_core::Error::MissingTelemetry(format!("{}: {e}", path.display())))?;
    Ok(RunLog::read_jsonl(BufReader::new(f))?)
}

fn write_log(path: &Path, log: &RunLog) -> CliResult<()> {
    let mut f = fs::File::create(path)?;
    log.write_jsonl(&mut f)?;
    Ok(())
}

/// Runs (or reuses) the λ pilot of one gated run and persists its outputs.
pub fn calibrate(cfg: &ExperimentConfig, seed: u64, data: &[TaskData]) -> CliResult<Calibration> {
    let dir = cfg.run_dir(seed);
    let path = dir.join("calibration.json");
    if let Ok(c) = read_json::<Calibration>(&path) {
        return Ok(c);
    }
    let c = calibrate_lambda(data, &cfg.model_config(seed, 0.0), &cfg.train_config(seed))?;
    fs::create_dir_all(&dir)?;
    write_log(&dir.join("pilot_log.jsonl"), &c.pilot_log)?;
    write_json(&path, &c)?;
    log::info!("{}: lambda = {} (L = {}, P = {})", dir.display(), c.lambda, c.l_hat, c.p_hat);
    Ok(c)
}

/// `calibrate-lambda`: pilots for every seed of a gated config.
pub fn calibrate_all(cfg: &ExperimentConfig) -> CliResult<Vec<Calibration>> {
    if cfg.history_mode != HistoryMode::Gated {
        return Err(CliError::Config("calibrate-lambda needs history_mode = gated".into()));
    }
    let data = task_data(cfg)?;
    cfg.seeds.iter().map(|&s| calibrate(cfg, s, &data)).collect()
}

#[derive(Default)]
pub struct TrainOptions {
    /// Discard any existing run state instead of resuming from it.
    pub fresh: bool,
    /// Stop after this many steps (the schedule still spans the full run).
    pub stop_at: Option<usize>,
}

/// Trains every seed; returns the run directories.
pub fn train(cfg: &ExperimentConfig, opts: &TrainOptions) -> CliResult<Vec<PathBuf>> {
    let data = task_data(cfg)?;
    cfg.seeds.iter().map(|&seed| train_seed(cfg, seed, &data, opts)).collect()
}

fn train_seed(cfg: &ExperimentConfig, seed: u64, data: &[TaskData], opts: &TrainOptions) -> CliResult<PathBuf> {
    let dir = cfg.run_dir(seed);
    let ckpt_path = dir.join("checkpoints").join("latest.ckpt");
    let log_path = dir.join("run_log.jsonl");
    if opts.fresh {
        for p in [&ckpt_path, &log_path] {
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
    }
    let lambda = match (cfg.history_mode, cfg.model.lambda) {
        (HistoryMode::Gated, Some(l)) => l,
        (HistoryMode::Gated, None) => calibrate(cfg, seed, data)?.lambda,
        _ => 0.0,
    };
    let mc = cfg.model_config(seed, lambda);
    let tc = cfg.train_config(seed);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), cfg.for_seed(seed).to_toml()?)?;

    let (mut trainer, mut log) = if ckpt_path.exists() {
        let ckpt = Checkpoint::read(&ckpt_path)?;
        if ckpt.header.model_config != mc {
            return Err(CliError::ConfigMismatch(format!("{} was trained with a different model config", dir.display())));
        }
        let trainer = ckpt.resume(tc.clone(), data)?;
        let mut log = if log_path.exists() { read_log(&log_path)? } else { RunLog::default() };
        log.truncate_to(trainer.step);
        if log.len() != trainer.step {
            return Err(nar_core::Error::MissingTelemetry(format!("{} lacks records before step {}", log_path.display(), trainer.step)).into());
        }
        log::info!("{}: resuming at step {}", dir.display(), trainer.step);
        (trainer, log)
    } else {
        let algos: Vec<AlgorithmId> = data.iter().map(|d| d.algorithm).collect();
        (Trainer::new(Model::new(mc.clone(), &algos)?, tc.clone(), data)?, RunLog::default())
    };
    write_log(&log_path, &log)?;

    let mut meta = RunMeta {
        code_version: CODE_VERSION.into(),
        schema_hash: trainer.model.schema_hash(),
        algorithms: cfg.algorithms.clone(),
        history_mode: cfg.history_mode,
        seed,
        lambda,
        steps_done: trainer.step,
        complete: false,
    };
    write_json(&dir.join("meta.json"), &meta)?;

    let mut file = fs::OpenOptions::new().append(true).open(&log_path)?;
    let until = opts.stop_at.unwrap_or(tc.steps).min(tc.steps);
    let every = tc.eval_every;
    let result = trainer.run_until(until, |tr, rec| {
        writeln!(file, "{}", RunLog::record_line(rec)?)?;
        log.push(rec.clone());
        if tr.step % every == 0 || tr.step == until {
            file.flush()?;
            Checkpoint::from_trainer(tr).write(&ckpt_path)?;
        }
        Ok(())
    });
    file.flush()?;
    result?;
    meta.steps_done = trainer.step;
    meta.complete = trainer.step == tc.steps;
    write_json(&dir.join("meta.json"), &meta)?;
    Ok(dir)
}

/// Loads the resolved config and latest parameters of a run directory.
pub fn open_run(run_dir: &Path) -> CliResult<(ExperimentConfig, Model, RunMeta)> {
    let cfg = ExperimentConfig::load(&run_dir.join("config.toml"), &[])?;
    let meta: RunMeta = read_json(&run_dir.join("meta.json"))?;
    let ckpt = Checkpoint::read(&run_dir.join("checkpoints").join("latest.ckpt"))?;
    let model = ckpt.model(Some(&cfg.model_config(meta.seed, meta.lambda)))?;
    Ok((cfg, model, meta))
}

fn report_stem(algo: AlgorithmId, split: Split, n: usize) -> String {
    format!("{}_{}_n{n}", algo.name(), split.name())
}

/// Scores the val and test splits, plus freshly sampled test sets at each
/// of `sizes`, and stores reports and raw predictions under `reports/`.
pub fn eval(run_dir: &Path, sizes: &[usize]) -> CliResult<Vec<EvalReport>> {
    let (cfg, model, _) = open_run(run_dir)?;
    let mut out = Vec::new();
    for &algo in &cfg.algorithms {
        let train_max = cfg.data.train_sizes.iter().copied().max().unwrap_or(0);
        let mut sets: Vec<(Split, Vec<Trajectory>)> =
            vec![(Split::Val, load_split(&cfg, algo, "val")?), (Split::Test, load_split(&cfg, algo, "test")?)];
        let (_, count, base) = cfg.data.split("test")?;
        for &n in sizes {
            sets.push((Split::Test, Dataset::generate(algo, "test", &[n], count, base)?.trajectories));
        }
        for (split, trajs) in sets {
            if trajs.is_empty() {
                continue;
            }
            let ev = evaluate(&model, algo, split, &trajs)?;
            if split == Split::Test && ev.report.n_eval <= train_max {
                log::warn!("{algo} test size {} is not larger than the training size {train_max}", ev.report.n_eval);
            }
            let stem = report_stem(algo, split, ev.report.n_eval);
            write_json(&run_dir.join("reports").join(format!("{stem}.json")), &ev.report)?;
            write_json(&run_dir.join("reports").join(format!("{stem}.raw.json")), &ev.raw)?;
            out.push(ev.report);
        }
    }
    Ok(out)
}

/// Rescores stored raw predictions against the run's dataset files.
pub fn rescore_report(run_dir: &Path, algo: AlgorithmId, split: Split, n: usize) -> CliResult<EvalReport> {
    let (cfg, _, _) = open_run(run_dir)?;
    let raw: RawPredictions = read_json(&run_dir.join("reports").join(format!("{}.raw.json", report_stem(algo, split, n))))?;
    let file_split = if split == Split::Val { "val" } else { "test" };
    let ds = load_split(&cfg, algo, file_split)?;
    let trajs = if ds.iter().all(|t| t.n() == n) {
        ds
    } else {
        let (_, count, base) = cfg.data.split("test")?;
        Dataset::generate(algo, "test", &[n], count, base)?.trajectories
    };
    Ok(rescore(&raw, &trajs)?)
}

/// Collects run directories under each path (a run directory is one that
/// holds `config.toml` and `meta.json`).
pub fn find_runs(paths: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    fn walk(p: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        if p.join("config.toml").is_file() && p.join("meta.json").is_file() {
            out.push(p.to_path_buf());
            return Ok(());
        }
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
            entries.sort();
            for e in entries {
                walk(&e, out)?;
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    for p in paths {
        walk(p, &mut out)?;
    }
    if out.is_empty() {
        return Err(nar_core::Error::MissingTelemetry("no run directories found".into()).into());
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub sd: f64,
    pub seeds: usize,
    /// `mean` minus the baseline mean of the same algorithm, when present.
    pub delta: Option<f64>,
}

/// Mode × algorithm summary of test micro-F1 at the largest test size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub n_eval: usize,
    pub cells: BTreeMap<String, BTreeMap<HistoryMode, Cell>>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

pub fn compare(run_dirs: &[PathBuf]) -> CliResult<Comparison> {
    let runs = find_runs(run_dirs)?;
    let mut key: Option<(String, PathBuf)> = None;
    let mut scores: BTreeMap<(String, HistoryMode), Vec<f64>> = BTreeMap::new();
    let mut n_eval = 0;
    for dir in &runs {
        let cfg = ExperimentConfig::load(&dir.join("config.toml"), &[])?;
        let k = cfg.comparison_key()?;
        match &key {
            None => key = Some((k, dir.clone())),
            Some((k0, d0)) if *k0 != k => {
                return Err(CliError::ConfigMismatch(format!("{} and {} differ beyond mode and seed", d0.display(), dir.display())))
            }
            _ => {}
        }
        let meta: RunMeta = read_json(&dir.join("meta.json"))?;
        let n = cfg.data.test_sizes.iter().copied().max().unwrap_or(0);
        n_eval = n;
        for &algo in &cfg.algorithms {
            let report: EvalReport = read_json(&dir.join("reports").join(format!("{}.json", report_stem(algo, Split::Test, n))))?;
            scores.entry((algo.name().to_string(), meta.history_mode)).or_default().push(report.micro_f1);
        }
    }
    let mut cells: BTreeMap<String, BTreeMap<HistoryMode, Cell>> = BTreeMap::new();
    for ((algo, mode), v) in &scores {
        let (mean, sd) = mean_sd(v);
        cells.entry(algo.clone()).or_default().insert(*mode, Cell { mean, sd, seeds: v.len(), delta: None });
    }
    for row in cells.values_mut() {
        if let Some(base) = row.get(&HistoryMode::Baseline).map(|c| c.mean) {
            row.values_mut().for_each(|c| c.delta = Some(c.mean - base));
        }
    }
    Ok(Comparison { n_eval, cells })
}

impl Comparison {
    /// Markdown table with columns in the fixed order baseline, forget,
    /// gated. Cells better than the baseline are bold.
    pub fn to_markdown(&self) -> String {
        let mut s = format!("test micro-F1 at n = {} (mean ± sd over seeds)\n\n", self.n_eval);
        s += "| algorithm |";
        for m in HistoryMode::ALL {
            s += &format!(" {m} |");
        }
        s += "\n|---|---|---|---|\n";
        for (algo, row) in &self.cells {
            s += &format!("| {algo} |");
            for m in HistoryMode::ALL {
                match row.get(&m) {
                    None => s += " - |",
                    Some(c) => {
                        let body = format!("{:.2} ± {:.2}", 100.0 * c.mean, 100.0 * c.sd);
                        match c.delta {
                            Some(d) if m != HistoryMode::Baseline && d > 0.0 => s += &format!(" **{body}** ({:+.2}) |", 100.0 * d),
                            Some(d) if m != HistoryMode::Baseline => s += &format!(" {body} ({:+.2}) |", 100.0 * d),
                            _ => s += &format!(" {body} |"),
                        }
                    }
                }
            }
            s += "\n";
        }
        s
    }
}

/// Writes CSV curves and SVG figures for one run into `plots/`.
pub fn plots(run_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let log = read_log(&run_dir.join("run_log.jsonl"))?;
    let dir = run_dir.join("plots");
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    let mut csv = |name: &str, pts: &[(usize, f64)]| -> CliResult<PathBuf> {
        let p = dir.join(name);
        write_curve_csv(fs::File::create(&p)?, pts.iter().copied())?;
        written.push(p.clone());
        Ok(p)
    };
    let loss: Vec<(usize, f64)> = log.records.iter().map(|r| (r.step, r.total)).collect();
    csv("loss.csv", &loss)?;
    let val: Vec<(usize, f64)> = log.records.iter().filter_map(|r| r.val_micro_f1.map(|v| (r.step, v))).collect();
    csv("val_micro_f1.csv", &val)?;
    let mut figures = vec![("loss.svg", "training loss", vec![("total".to_string(), loss)])];
    if let Ok(g) = gate_norm_curve(&log) {
        let pts: Vec<(usize, f64)> = g.steps.iter().copied().zip(g.norm.iter().copied()).collect();
        csv("gate_norm.csv", &pts)?;
        figures.push(("gate_norm.svg", "normalised carried-state norm", vec![("gate norm".into(), pts)]));
    }
    if let Ok(c) = per_step_loss_curves(&log) {
        let mut series = Vec::new();
        for (q, pts) in &c.buckets {
            csv(&format!("per_step_q{q}.csv"), pts)?;
            series.push((format!("quartile {q}"), pts.clone()));
        }
        figures.push(("per_step.svg", "hint loss by execution-step quartile", series));
    }
    for (name, title, series) in figures {
        let p = dir.join(name);
        fs::write(&p, svg::line_chart(title, &series))?;
        written.push(p);
    }
    Ok(written)
}
