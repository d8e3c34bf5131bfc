//! Subcommand implementations. Each writes its files under
//! `<output_dir>/<config hash>/` and reports per-run failures without
//! stopping the remaining runs.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use fairglite_core::fair::Variant;
use fairglite_core::graph::{synthesize_biased_graph, write_graph, GraphFiles, SyntheticParams};
use fairglite_core::metrics::evaluate;
use fairglite_core::{FairnessReport, Graph};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{DatasetSource, ExperimentConfig};
use crate::persist::{self, ModelInfo, SUMMARY_COLUMNS};
use crate::pipeline::{prepare, prepare_data, run_fair, SeedRecord, SeedRun};
use crate::stats::{mean_std, spearman_trend, Trend};
use crate::{CliError, CliResult};

fn guarded<T>(f: impl FnOnce() -> CliResult<T>) -> CliResult<T> {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        Err(CliError::Panic(msg))
    })
}

/// Runs `job` for every seed on a pool of `workers` threads; results come
/// back in seed order.
fn for_seeds<T: Send>(cfg: &ExperimentConfig, job: impl Fn(u64) -> CliResult<T> + Sync) -> CliResult<Vec<(u64, CliResult<T>)>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| cfg.seeds.par_iter().map(|&s| (s, guarded(|| job(s)))).collect()))
}

#[derive(Debug, Serialize)]
struct Failure {
    run: String,
    exit_code: i32,
    error: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    seeds: &'a [u64],
    completed: usize,
    failures: Vec<Failure>,
    wall_clock_seconds: f64,
    crate_version: &'a str,
    config: &'a ExperimentConfig,
}

/// Outcome of a multi-run command.
#[derive(Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub completed: usize,
    pub errors: Vec<(String, CliError)>,
}

impl RunSummary {
    /// `Ok` when every run succeeded; the lone error class when all failed;
    /// a partial failure otherwise.
    pub fn into_result(mut self) -> CliResult<PathBuf> {
        match (self.errors.len(), self.completed) {
            (0, _) => Ok(self.dir),
            (_, 0) => Err(self.errors.swap_remove(0).1),
            (failed, done) => Err(CliError::Partial { failed, total: failed + done }),
        }
    }
}

fn finish(
    cfg: &ExperimentConfig,
    command: &str,
    dir: PathBuf,
    completed: usize,
    errors: Vec<(String, CliError)>,
    started: Instant,
) -> CliResult<RunSummary> {
    let manifest = Manifest {
        command,
        config_hash: cfg.hash(),
        seeds: &cfg.seeds,
        completed,
        failures: errors
            .iter()
            .map(|(run, e)| Failure { run: run.clone(), exit_code: e.exit_code(), error: e.to_string() })
            .collect(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        crate_version: env!("CARGO_PKG_VERSION"),
        config: cfg,
    };
    persist::write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(RunSummary { dir, completed, errors })
}

fn save_run(dir: &Path, run: &SeedRun, hash: &str) -> CliResult<()> {
    let seed = run.record.seed;
    persist::write_json(&dir.join(format!("seed{seed}.json")), &run.record)?;
    let info = ModelInfo { config_hash: hash.to_string(), variant: run.record.variant.clone() };
    persist::save_model(&dir.join(format!("seed{seed}.model")), &run.model, &info)
}

/// Trains the configured variant for every seed.
pub fn train(cfg: &ExperimentConfig) -> CliResult<RunSummary> {
    let started = Instant::now();
    let hash = cfg.hash();
    let dir = persist::run_dir(&cfg.output_dir, &hash);
    persist::create_dir(&dir)?;
    let results = for_seeds(cfg, |seed| {
        let p = prepare(cfg, seed)?;
        run_fair(&p, &cfg.fair_for(seed, cfg.ablation), cfg.ablation, &hash)
    })?;
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(run) => {
                save_run(&dir, &run, &hash)?;
                records.push(run.record);
            }
            Err(e) => errors.push((format!("seed{seed}"), e)),
        }
    }
    let refs: Vec<&SeedRecord> = records.iter().collect();
    persist::write_csv(&dir.join("summary.csv"), &SUMMARY_COLUMNS, &persist::summary_rows(&refs, false))?;
    finish(cfg, "train", dir, records.len(), errors, started)
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantSummary {
    pub variant: String,
    pub runs: usize,
    pub accuracy: (f64, f64),
    pub delta_dp: (f64, f64),
    pub delta_eo: (f64, f64),
}

/// Trains every configured variant on the same seeds, splits and proxies.
pub fn ablate(cfg: &ExperimentConfig) -> CliResult<(RunSummary, Vec<VariantSummary>)> {
    let started = Instant::now();
    let hash = cfg.hash();
    let dir = persist::run_dir(&cfg.output_dir, &hash);
    persist::create_dir(&dir)?;
    let results = for_seeds(cfg, |seed| {
        let p = prepare(cfg, seed)?;
        Ok(cfg
            .variants
            .iter()
            .map(|&v| (v, guarded(|| run_fair(&p, &cfg.fair_for(seed, v), v, &hash))))
            .collect::<Vec<_>>())
    })?;
    let mut records: Vec<SeedRecord> = Vec::new();
    let mut errors = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(per_variant) => {
                for (v, r) in per_variant {
                    match r {
                        Ok(run) => {
                            save_run(&dir.join(v.name()), &run, &hash)?;
                            records.push(run.record);
                        }
                        Err(e) => errors.push((format!("{v}/seed{seed}"), e)),
                    }
                }
            }
            Err(e) => errors.push((format!("seed{seed}"), e)),
        }
    }
    let mut rows = Vec::new();
    let mut table = Vec::new();
    for v in &cfg.variants {
        let of: Vec<&SeedRecord> = records.iter().filter(|r| r.variant == v.name()).collect();
        rows.extend(persist::summary_rows(&of, true));
        let col = |f: &dyn Fn(&SeedRecord) -> Option<f64>| -> Vec<f64> { of.iter().filter_map(|r| f(r)).collect() };
        table.push(VariantSummary {
            variant: v.name().to_string(),
            runs: of.len(),
            accuracy: mean_std(&col(&|r| Some(r.report.accuracy))),
            delta_dp: mean_std(&col(&|r| Some(r.report.delta_dp))),
            delta_eo: mean_std(&col(&|r| r.report.delta_eo)),
        });
    }
    let mut header = vec!["variant"];
    header.extend(SUMMARY_COLUMNS);
    persist::write_csv(&dir.join("ablation.csv"), &header, &rows)?;
    persist::write_json(&dir.join("ablation.json"), &table)?;
    let summary = finish(cfg, "ablate", dir, records.len(), errors, started)?;
    Ok((summary, table))
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTrend {
    pub a: f64,
    pub b: Vec<f64>,
    pub mean_dp: Vec<f64>,
    pub trend: Trend,
}

/// Full `(a, b)` grid over every seed with the full objective.
pub fn sweep(cfg: &ExperimentConfig) -> CliResult<(RunSummary, Vec<SweepTrend>)> {
    let started = Instant::now();
    let hash = cfg.hash();
    let dir = persist::run_dir(&cfg.output_dir, &hash);
    persist::create_dir(&dir)?;
    let grid: Vec<(f64, f64)> = cfg
        .sweep_a
        .iter()
        .flat_map(|&a| cfg.sweep_b.iter().map(move |&b| (a, b)))
        .collect();
    let results = for_seeds(cfg, |seed| {
        let p = prepare(cfg, seed)?;
        Ok(grid
            .iter()
            .map(|&(a, b)| {
                let fair = fairglite_core::FairConfig { a, b, ..cfg.fair_for(seed, Variant::Full) };
                ((a, b), guarded(|| run_fair(&p, &fair, Variant::Full, &hash).map(|r| r.record)))
            })
            .collect::<Vec<_>>())
    })?;
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(cells) => {
                for ((a, b), r) in cells {
                    match r {
                        Ok(rec) => records.push(rec),
                        Err(e) => errors.push((format!("a={a}/b={b}/seed{seed}"), e)),
                    }
                }
            }
            Err(e) => errors.push((format!("seed{seed}"), e)),
        }
    }
    let mut header = vec!["a", "b", "seed"];
    header.extend(&SUMMARY_COLUMNS[4..]);
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            let rep = &r.report;
            vec![
                r.a.to_string(),
                r.b.to_string(),
                r.seed.to_string(),
                rep.accuracy.to_string(),
                rep.f1.to_string(),
                rep.delta_dp.to_string(),
                rep.delta_eo.map(|v| v.to_string()).unwrap_or_default(),
                rep.bound_rhs.to_string(),
                rep.bound_holds.to_string(),
            ]
        })
        .collect();
    persist::write_csv(&dir.join("sweep.csv"), &header, &rows)?;
    let trends: Vec<SweepTrend> = cfg
        .sweep_a
        .iter()
        .map(|&a| {
            let mean_dp: Vec<f64> = cfg
                .sweep_b
                .iter()
                .map(|&b| {
                    let dps: Vec<f64> = records
                        .iter()
                        .filter(|r| r.a == a && r.b == b)
                        .map(|r| r.report.delta_dp)
                        .collect();
                    mean_std(&dps).0
                })
                .collect();
            SweepTrend { a, b: cfg.sweep_b.clone(), trend: spearman_trend(&cfg.sweep_b, &mean_dp), mean_dp }
        })
        .collect();
    persist::write_json(&dir.join("trend.json"), &trends)?;
    let summary = finish(cfg, "sweep", dir, records.len(), errors, started)?;
    Ok((summary, trends))
}

/// SHA-256 of the edge list in original node ids.
pub fn edge_hash(g: &Graph) -> String {
    let ids = g.node_ids();
    let mut edges: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .map(|&(i, j)| (ids[i].min(ids[j]), ids[i].max(ids[j])))
        .collect();
    edges.sort_unstable();
    let mut h = Sha256::new();
    for (i, j) in edges {
        h.update(format!("{i}\t{j}\n").as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Serialize)]
pub struct DataManifest {
    pub generator: SyntheticParams,
    pub nodes: usize,
    pub edges: usize,
    pub edge_hash: String,
}

/// Writes the synthetic graph for `seed` plus a manifest into `out`.
pub fn gen_data(cfg: &ExperimentConfig, seed: u64, out: &Path) -> CliResult<DataManifest> {
    let DatasetSource::Synthetic { params, data_seed } = &cfg.dataset else {
        return Err(CliError::Config("gen-data needs dataset = synthetic".into()));
    };
    let params = SyntheticParams { seed: data_seed.unwrap_or(seed), ..*params };
    let g = synthesize_biased_graph(&params)?;
    persist::create_dir(out)?;
    write_graph(&g, &GraphFiles::in_dir(out))?;
    let manifest = DataManifest { generator: params, nodes: g.num_nodes(), edges: g.num_edges(), edge_hash: edge_hash(&g) };
    persist::write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Re-scores a saved model on the dataset and split given by `cfg` and
/// `seed`.
pub fn evaluate_model(cfg: &ExperimentConfig, seed: u64, model_path: &Path) -> CliResult<FairnessReport> {
    let (model, info) = persist::load_model(model_path)?;
    let (g, split, x) = prepare_data(cfg, seed)?;
    let mut report = evaluate(&g, &split, &x, &model)?;
    report.metadata.seed = seed;
    report.metadata.config_hash = info.config_hash;
    report.metadata.variant = info.variant;
    Ok(report)
}
