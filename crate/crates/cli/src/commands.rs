//! The four CLI verbs as library functions.
//!
//! Every command validates its inputs before doing work, refuses to
//! overwrite existing outputs unless forced, and never writes to a path it
//! reads from.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mialab_core::attacks::{run_attack, AttackConfig, AttackStats, ScoreTable, Target};
use mialab_core::data::Dataset;
use mialab_core::eval::{self, ReportRow};
use mialab_core::farm::{build_farm, hold_out_target, load_farm, save_farm, ShadowFarm};
use mialab_core::rng::{self, tag};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const FARM_FILE: &str = "farm.bin";
pub const TRAIN_MANIFEST: &str = "train_manifest.json";
pub const ATTACK_MANIFEST: &str = "attack_manifest.json";
pub const REPORT_FILE: &str = "report.csv";
pub const COMPARE_FILE: &str = "compare.csv";

pub const METRIC_AUC: &str = "auc";
pub const METRIC_TPR: &str = "tpr_at_1pct_fpr";
const LOW_FPR: f64 = 0.01;

pub fn scores_file(seed: u64) -> String {
    format!("scores_seed{seed}.csv")
}

fn hex(v: u64) -> String {
    format!("{v:016x}")
}

/// Fails if `path` exists and `force` is off.
fn claim_output(path: &Path, force: bool, inputs: &[&Path]) -> Result<()> {
    let same = |a: &Path, b: &Path| match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if inputs.iter().any(|i| same(i, path)) {
        return Err(CliError::Usage(format!("refusing to overwrite input file {}", path.display())));
    }
    if path.exists() && !force {
        return Err(CliError::OutputExists(path.to_path_buf()));
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> mialab_core::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: usize,
    pub seed: u64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainManifest {
    pub command: String,
    pub config: ExperimentConfig,
    pub dataset_fingerprint: String,
    pub farm_file: PathBuf,
    pub models: Vec<ModelSummary>,
    pub wall_time_secs: f64,
}

/// Builds the shadow farm and writes `farm.bin` plus a manifest into `out`.
pub fn train_shadows(cfg: &ExperimentConfig, out: &Path, force: bool, inputs: &[&Path]) -> Result<TrainManifest> {
    let farm_path = out.join(FARM_FILE);
    let manifest_path = out.join(TRAIN_MANIFEST);
    claim_output(&farm_path, force, inputs)?;
    claim_output(&manifest_path, force, inputs)?;
    let dataset = cfg.dataset.load()?;
    let arch = cfg.arch_for(&dataset)?;

    let start = Instant::now();
    let farm = build_farm(&dataset, cfg.n_models, &arch, &cfg.train, cfg.master_seed)?;
    let wall_time_secs = start.elapsed().as_secs_f64();
    let models = (0..farm.len())
        .map(|m| {
            let (train_accuracy, test_accuracy) = farm.model_accuracy(&dataset, m)?;
            Ok(ModelSummary {
                model: m,
                seed: farm.models()[m].seed,
                train_accuracy,
                test_accuracy,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    create_dir(out)?;
    save_farm(&farm, &farm_path)?;
    let manifest = TrainManifest {
        command: "train-shadows".into(),
        config: cfg.clone(),
        dataset_fingerprint: hex(dataset.fingerprint()),
        farm_file: farm_path,
        models,
        wall_time_secs,
    };
    write_json(&manifest_path, &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub target_model: usize,
    pub members: usize,
    pub non_members: usize,
    pub stats: AttackStats,
    pub scores_file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackManifest {
    pub command: String,
    pub config: ExperimentConfig,
    pub farm: PathBuf,
    pub dataset_fingerprint: String,
    pub runs: Vec<SeedRun>,
    pub wall_time_secs: f64,
}

/// Balanced draw of `count` targets from the target model's own mask:
/// `ceil(count / 2)` members and `floor(count / 2)` non-members, each
/// group in ascending index order.
pub fn sample_targets(membership: &[bool], count: usize, sample_seed: u64, seed: u64) -> Result<Vec<Target>> {
    let mut r = rng::stream(sample_seed, &[tag::TARGET_SAMPLE, seed]);
    let mut out = Vec::with_capacity(count);
    for (want, n) in [(true, count - count / 2), (false, count / 2)] {
        let pool: Vec<usize> = (0..membership.len()).filter(|&i| membership[i] == want).collect();
        if pool.len() < n {
            return Err(CliError::Config(format!(
                "need {n} {} targets but the target model has only {}",
                if want { "member" } else { "non-member" },
                pool.len()
            )));
        }
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut r, pool.len(), n)
            .into_iter()
            .map(|k| pool[k])
            .collect();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|index| Target { index, is_member: want }));
    }
    Ok(out)
}

/// One attack run: pick the target model for `seed`, hold it out of the
/// farm, draw targets and score them.
pub fn attack_seed(
    cfg: &ExperimentConfig,
    farm: &ShadowFarm,
    dataset: &Dataset,
    seed: u64,
) -> Result<(ScoreTable, SeedRun)> {
    let target_model = rng::stream(seed, &[tag::TARGET_MODEL]).random_range(0..farm.len());
    let (oracle, shadows) = hold_out_target(farm, target_model)?;
    let targets = sample_targets(oracle.membership(), cfg.targets.count, cfg.targets.seed, seed)?;
    let a = &cfg.attack;
    let attack_cfg = AttackConfig {
        confidence_clamp: a.confidence_clamp,
        sigma_floor: a.sigma_floor,
        offline_score: a.offline_score,
        ..AttackConfig::new(a.method, a.mode, a.canary.clone(), seed)
    };
    let (table, stats) = run_attack(&oracle, &shadows, dataset, &targets, &attack_cfg)?;
    let members = targets.iter().filter(|t| t.is_member).count();
    let run = SeedRun {
        seed,
        target_model,
        members,
        non_members: targets.len() - members,
        stats,
        scores_file: PathBuf::from(scores_file(seed)),
    };
    Ok((table, run))
}

/// Runs the configured attack for every seed against a stored farm.
pub fn attack(cfg: &ExperimentConfig, farm_path: &Path, out: &Path, force: bool, inputs: &[&Path]) -> Result<AttackManifest> {
    let manifest_path = out.join(ATTACK_MANIFEST);
    claim_output(&manifest_path, force, inputs)?;
    for &s in &cfg.seeds {
        claim_output(&out.join(scores_file(s)), force, inputs)?;
    }
    let dataset = cfg.dataset.load()?;
    let farm = load_farm(farm_path)?;
    farm.verify_dataset(&dataset)?;

    let start = Instant::now();
    let mut results = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        results.push(attack_seed(cfg, &farm, &dataset, seed)?);
    }
    let wall_time_secs = start.elapsed().as_secs_f64();

    create_dir(out)?;
    let mut runs = Vec::with_capacity(results.len());
    for (table, mut run) in results {
        run.scores_file = out.join(&run.scores_file);
        write_with(&run.scores_file, |w| table.write_csv(w))?;
        runs.push(run);
    }
    let manifest = AttackManifest {
        command: "attack".into(),
        config: cfg.clone(),
        farm: farm_path.to_path_buf(),
        dataset_fingerprint: hex(dataset.fingerprint()),
        runs,
        wall_time_secs,
    };
    write_json(&manifest_path, &manifest)?;
    Ok(manifest)
}

/// Seed label of a score table: the `N` in `scores_seedN.csv`, otherwise
/// the file stem.
pub fn seed_label(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match stem.strip_prefix("scores_seed") {
        Some(n) if !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()) => n.to_string(),
        _ => stem,
    }
}

/// Per-table AUC and TPR@1%FPR, their mean and std, and one ROC file per table.
pub fn eval(score_files: &[PathBuf], out: &Path, force: bool) -> Result<Vec<ReportRow>> {
    if score_files.is_empty() {
        return Err(CliError::Usage("eval needs at least one score table".into()));
    }
    let inputs: Vec<&Path> = score_files.iter().map(PathBuf::as_path).collect();
    let labels: Vec<String> = score_files.iter().map(|p| seed_label(p)).collect();
    if labels.iter().collect::<BTreeSet<_>>().len() != labels.len() {
        return Err(CliError::Usage(format!("score tables have duplicate seed labels: {labels:?}")));
    }
    let report_path = out.join(REPORT_FILE);
    claim_output(&report_path, force, &inputs)?;
    let roc_paths: Vec<PathBuf> = labels.iter().map(|l| out.join(format!("roc_seed{l}.csv"))).collect();
    for p in &roc_paths {
        claim_output(p, force, &inputs)?;
    }

    let mut summaries = Vec::with_capacity(score_files.len());
    for path in score_files {
        let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        let table = ScoreTable::read_csv(file)
            .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
        summaries.push(eval::summarize(&table.scores(), &table.labels(), &[LOW_FPR])?);
    }

    let mut rows = Vec::new();
    for (metric, pick) in [
        (METRIC_AUC, (|s: &eval::RocSummary| s.auc) as fn(&eval::RocSummary) -> f64),
        (METRIC_TPR, |s: &eval::RocSummary| s.tpr_at[0].1),
    ] {
        let values: Vec<f64> = summaries.iter().map(pick).collect();
        for (label, &value) in labels.iter().zip(&values) {
            rows.push(ReportRow { metric: metric.into(), seed: label.clone(), value });
        }
        let agg = eval::aggregate_runs(&values)?;
        rows.push(ReportRow { metric: metric.into(), seed: "mean".into(), value: agg.mean });
        rows.push(ReportRow { metric: metric.into(), seed: "std".into(), value: agg.std });
    }

    create_dir(out)?;
    write_with(&report_path, |w| eval::write_report_csv(&rows, w))?;
    for (summary, path) in summaries.iter().zip(&roc_paths) {
        write_with(path, |w| eval::write_roc_csv(&summary.points, w))?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub metric: String,
    pub seed: String,
    pub lira: f64,
    pub canary: Option<f64>,
    pub canary_minus_lira: Option<f64>,
    pub noise: Option<f64>,
    pub noise_minus_lira: Option<f64>,
}

fn read_report(path: &Path) -> Result<BTreeMap<(String, String), f64>> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let rows = eval::read_report_csv(file).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for r in rows {
        if r.seed != "std" && map.insert((r.metric.clone(), r.seed.clone()), r.value).is_some() {
            return Err(CliError::Format(format!(
                "{}: duplicate row for {} seed {}",
                path.display(),
                r.metric,
                r.seed
            )));
        }
    }
    Ok(map)
}

/// Per-metric deltas of the canary and noise reports against the LiRA
/// baseline, over per-seed rows and their means.
pub fn compare(
    lira: &Path,
    canary: Option<&Path>,
    noise: Option<&Path>,
    out: &Path,
    force: bool,
) -> Result<Vec<DeltaRow>> {
    if canary.is_none() && noise.is_none() {
        return Err(CliError::Usage("compare needs --canary and/or --noise".into()));
    }
    let mut inputs = vec![lira];
    inputs.extend(canary);
    inputs.extend(noise);
    let out_path = out.join(COMPARE_FILE);
    claim_output(&out_path, force, &inputs)?;

    let base = read_report(lira)?;
    let others = [canary, noise]
        .map(|p| p.map(|p| read_report(p).map(|m| (p, m))).transpose());
    let [canary, noise] = others;
    let (canary, noise) = (canary?, noise?);
    let keys: BTreeSet<_> = base.keys().cloned().collect();
    for (path, map) in canary.iter().chain(noise.iter()) {
        let other: BTreeSet<_> = map.keys().cloned().collect();
        if other != keys {
            let seeds = |k: &BTreeSet<(String, String)>| k.iter().map(|(_, s)| s.clone()).collect::<BTreeSet<_>>();
            return Err(CliError::Mismatch(format!(
                "{} covers seeds {:?}, {} covers {:?}",
                lira.display(),
                seeds(&keys),
                path.display(),
                seeds(&other)
            )));
        }
    }

    let rows: Vec<DeltaRow> = base
        .iter()
        .map(|(key, &l)| {
            let get = |m: &Option<(&Path, BTreeMap<(String, String), f64>)>| m.as_ref().map(|(_, m)| m[key]);
            let (c, n) = (get(&canary), get(&noise));
            DeltaRow {
                metric: key.0.clone(),
                seed: key.1.clone(),
                lira: l,
                canary: c,
                canary_minus_lira: c.map(|c| c - l),
                noise: n,
                noise_minus_lira: n.map(|n| n - l),
            }
        })
        .collect();

    create_dir(out)?;
    let mut w = csv::Writer::from_path(&out_path).map_err(|e| CliError::Format(e.to_string()))?;
    for r in &rows {
        w.serialize(r).map_err(|e| CliError::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(&out_path, e))?;
    Ok(rows)
}
