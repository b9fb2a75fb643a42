//! Experiment orchestration: Monte-Carlo replication runs over a T-grid and
//! long-form parameter sweeps.
//!
//! Seed discipline: every random draw descends from the single base seed.
//! Replication `i` of a plain run uses `base_seed ^ i`; sweep cell `j` first
//! derives `cell_seed = base_seed ^ (j * 0x9E3779B97F4A7C15)` and its
//! replication `i` uses `cell_seed ^ i`, so cell 0 reproduces a plain run
//! verbatim. Replications execute in parallel but are collected in index
//! order, so aggregate artifacts are byte-identical regardless of the
//! worker-pool size.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use tdforge_core::{
    estimate_mixing, hessian_min_eigenvalue, min_t_condition, omega_c, run_td0, solve_fixed_point,
    FeatureMap, InducedChain, InstanceDoc, MixingFit, RunRecord, StartState, TdConfig, TdOracle,
};

use crate::generator::{generate_instance, GeneratorSpec};

/// Horizon used when fitting the mixing envelope of an experiment instance.
pub const MIXING_HORIZON: usize = 64;

/// Either `{"path": "..."}` or `{"generator": {...}}` in config JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InstanceSource {
    Path { path: PathBuf },
    Generator { generator: GeneratorSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmConfig {
    pub c: f64,
    /// One entry for a single run, several for a rate table.
    pub t_grid: Vec<usize>,
    pub replications: usize,
    pub base_seed: u64,
    pub record_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    #[serde(default = "default_true")]
    pub write_replication_csv: bool,
}

fn default_true() -> bool {
    true
}

/// Axes for `sweep`; omitted axes collapse to the base configuration value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepAxes {
    #[serde(default)]
    pub c: Option<Vec<f64>>,
    #[serde(default)]
    pub t: Option<Vec<usize>>,
    #[serde(default)]
    pub gamma: Option<Vec<f64>>,
    #[serde(default)]
    pub eps: Option<Vec<f64>>,
    #[serde(default)]
    pub mix: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: InstanceSource,
    pub algorithm: AlgorithmConfig,
    pub output: OutputConfig,
    #[serde(default)]
    pub sweep: Option<SweepAxes>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: ExperimentConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithm.replications == 0 {
            bail!("replications must be >= 1");
        }
        if self.algorithm.t_grid.is_empty() {
            bail!("t_grid must not be empty");
        }
        if let InstanceSource::Path { path } = &self.instance {
            if !path.exists() {
                bail!("instance file {} does not exist", path.display());
            }
        }
        Ok(())
    }
}

/// A fully materialized instance ready to run.
pub struct PreparedInstance {
    pub chain: InducedChain,
    pub features: FeatureMap,
    pub oracle: TdOracle,
    pub mixing: MixingFit,
}

pub fn prepare(doc: &InstanceDoc) -> Result<PreparedInstance> {
    let (chain, features) = doc.build_chain(tdforge_core::mdp::STATIONARY_TOL)?;
    let oracle = solve_fixed_point(&chain, &features)?;
    let mixing = estimate_mixing(&chain, MIXING_HORIZON)?;
    Ok(PreparedInstance {
        chain,
        features,
        oracle,
        mixing,
    })
}

pub fn resolve_instance(source: &InstanceSource) -> Result<InstanceDoc> {
    match source {
        InstanceSource::Path { path } => Ok(InstanceDoc::load(path)?),
        InstanceSource::Generator { generator } => generate_instance(generator),
    }
}

/// Sweep-cell seed derivation: `base ^ (cell_index * golden_ratio_odd)`.
/// Cell 0 keeps the base seed, so a degenerate sweep replays a plain run.
pub fn cell_seed(base_seed: u64, cell_index: u64) -> u64 {
    base_seed ^ cell_index.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Per-horizon aggregate of a replication batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TAggregate {
    pub total_steps: usize,
    pub f_bar_mean: f64,
    pub f_bar_stderr: f64,
    /// Largest across-replication mean of `||theta_t||^2` over recorded t.
    pub max_mean_theta_sq: f64,
    /// `omega_c^2 max{r_inf^2 / phi_inf^2, ||theta*||^2}`.
    pub omega_bound: f64,
    /// `max_mean_theta_sq / omega_bound` (0 when both vanish).
    pub ratio: f64,
    pub min_t_ok: bool,
    pub min_t_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub c: f64,
    pub replications: usize,
    pub base_seed: u64,
    pub record_stride: usize,
    pub theta_star: Vec<f64>,
    pub mixing: MixingFit,
    pub per_t: Vec<TAggregate>,
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let stderr = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
        (var / m).sqrt()
    } else {
        0.0
    };
    (mean, stderr)
}

/// Run one replication batch at a fixed horizon; records come back in
/// replication order.
pub fn run_batch(
    prepared: &PreparedInstance,
    c: f64,
    total_steps: usize,
    replications: usize,
    base_seed: u64,
    record_stride: usize,
) -> Result<(TdConfig, Vec<RunRecord>)> {
    let config = TdConfig::new(
        c,
        total_steps,
        base_seed,
        StartState::StationaryDraw,
        record_stride,
    )?;
    let records: Vec<tdforge_core::Result<RunRecord>> = (0..replications)
        .into_par_iter()
        .map(|i| {
            let rep_config = config.with_seed(base_seed ^ i as u64);
            run_td0(
                &prepared.chain,
                &prepared.features,
                Some(&prepared.oracle),
                &rep_config,
            )
        })
        .collect();
    let mut out = Vec::with_capacity(replications);
    for rec in records {
        out.push(rec?);
    }
    Ok((config, out))
}

pub fn aggregate_batch(
    prepared: &PreparedInstance,
    config: &TdConfig,
    records: &[RunRecord],
) -> Result<TAggregate> {
    let f_values: Vec<f64> = records
        .iter()
        .map(|r| r.f_bar.expect("oracle-backed runs always carry f_bar"))
        .collect();
    let (f_mean, f_stderr) = mean_stderr(&f_values);

    let rows = records[0].rows.len();
    let mut max_mean_theta_sq = 0.0_f64;
    for i in 0..rows {
        let mean = records
            .iter()
            .map(|r| r.rows[i].theta_norm * r.rows[i].theta_norm)
            .sum::<f64>()
            / records.len() as f64;
        max_mean_theta_sq = max_mean_theta_sq.max(mean);
    }

    let omega = omega_c(config.c_const())?;
    let phi_inf = prepared.features.phi_inf();
    let r_ratio = prepared.chain.r_inf() * prepared.chain.r_inf() / (phi_inf * phi_inf);
    let omega_bound = omega * omega * r_ratio.max(prepared.oracle.theta_star().norm_squared());
    let ratio = if omega_bound > 0.0 {
        max_mean_theta_sq / omega_bound
    } else {
        0.0
    };

    let min_t = min_t_condition(
        prepared.mixing.c_const,
        prepared.mixing.alpha,
        config.total_steps(),
    )?;

    Ok(TAggregate {
        total_steps: config.total_steps(),
        f_bar_mean: f_mean,
        f_bar_stderr: f_stderr,
        max_mean_theta_sq,
        omega_bound,
        ratio,
        min_t_ok: min_t.ok,
        min_t_margin: min_t.margin,
    })
}

/// Execute a full run configuration: every horizon in the grid, with
/// per-replication CSVs and a deterministic `aggregate.json`.
pub fn run_experiment(config: &ExperimentConfig, threads: Option<usize>) -> Result<RunAggregate> {
    config.validate()?;
    let doc = resolve_instance(&config.instance)?;
    let prepared = prepare(&doc)?;
    let algo = &config.algorithm;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .context("worker pool construction failed")?;

    let out_dir = &config.output.dir;
    fs::create_dir_all(out_dir)?;

    let mut per_t = Vec::new();
    for &t in &algo.t_grid {
        let (td_config, records) = pool.install(|| {
            run_batch(
                &prepared,
                algo.c,
                t,
                algo.replications,
                algo.base_seed,
                algo.record_stride.min(t.max(1)),
            )
        })?;
        if config.output.write_replication_csv {
            for (i, rec) in records.iter().enumerate() {
                let path = out_dir.join(format!("rep_T{t}_r{i:04}.csv"));
                fs::write(&path, rec.to_csv())?;
            }
        }
        per_t.push(aggregate_batch(&prepared, &td_config, &records)?);
    }

    let aggregate = RunAggregate {
        c: algo.c,
        replications: algo.replications,
        base_seed: algo.base_seed,
        record_stride: algo.record_stride,
        theta_star: prepared.oracle.theta_star().iter().copied().collect(),
        mixing: prepared.mixing.clone(),
        per_t,
    };
    fs::write(
        out_dir.join("aggregate.json"),
        serde_json::to_string_pretty(&aggregate)?,
    )?;
    fs::write(
        out_dir.join("oracle.json"),
        serde_json::to_string_pretty(&prepared.oracle.summary_json())?,
    )?;
    Ok(aggregate)
}

/// One row of the long-form sweep CSV.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub c: f64,
    pub total_steps: usize,
    pub gamma: f64,
    pub eps: Option<f64>,
    pub mix: Option<f64>,
    pub lambda_min: Option<f64>,
    pub aggregate: Option<TAggregate>,
    pub status: &'static str,
}

impl SweepRow {
    pub fn csv_header() -> &'static str {
        "c,T,gamma,eps,mix,lambda_min,f_bar_mean,f_bar_stderr,max_mean_theta_sq,omega_bound,ratio,minT_ok,status"
    }

    pub fn csv_line(&self) -> String {
        let opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        match &self.aggregate {
            Some(a) => format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                self.c,
                self.total_steps,
                self.gamma,
                opt(&self.eps),
                opt(&self.mix),
                opt(&self.lambda_min),
                a.f_bar_mean,
                a.f_bar_stderr,
                a.max_mean_theta_sq,
                a.omega_bound,
                a.ratio,
                a.min_t_ok,
                self.status
            ),
            None => format!(
                "{},{},{},{},{},{},,,,,,,{}",
                self.c,
                self.total_steps,
                self.gamma,
                opt(&self.eps),
                opt(&self.mix),
                opt(&self.lambda_min),
                self.status
            ),
        }
    }
}

/// Cross-product sweep over the configured axes. Cells with an inadmissible
/// `c` are flagged and skipped rather than failing the sweep.
pub fn sweep_experiment(
    config: &ExperimentConfig,
    threads: Option<usize>,
) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let axes = config.sweep.clone().unwrap_or_default();
    let algo = &config.algorithm;

    let base_generator = match &config.instance {
        InstanceSource::Generator { generator } => Some(generator.clone()),
        InstanceSource::Path { .. } => None,
    };
    if base_generator.is_none()
        && (axes.gamma.is_some() || axes.eps.is_some() || axes.mix.is_some())
    {
        bail!("gamma/eps/mix axes require a generator-based instance");
    }

    let c_axis = axes.c.unwrap_or_else(|| vec![algo.c]);
    let t_axis = axes.t.unwrap_or_else(|| algo.t_grid.clone());
    let gamma_axis: Vec<Option<f64>> = match axes.gamma {
        Some(v) => v.into_iter().map(Some).collect(),
        None => vec![None],
    };
    let eps_axis: Vec<Option<f64>> = match axes.eps {
        Some(v) => v.into_iter().map(Some).collect(),
        None => vec![None],
    };
    let mix_axis: Vec<Option<f64>> = match axes.mix {
        Some(v) => v.into_iter().map(Some).collect(),
        None => vec![None],
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .context("worker pool construction failed")?;

    let mut rows = Vec::new();
    let mut cell_index: u64 = 0;
    for &c in &c_axis {
        for &t in &t_axis {
            for &gamma in &gamma_axis {
                for &eps in &eps_axis {
                    for &mix in &mix_axis {
                        let seed = cell_seed(algo.base_seed, cell_index);
                        cell_index += 1;

                        // Materialize the cell's instance.
                        let doc = match &base_generator {
                            None => resolve_instance(&config.instance)?,
                            Some(g) => {
                                let mut spec = g.clone();
                                if let Some(gm) = gamma {
                                    spec = spec.with_gamma(gm);
                                }
                                if let Some(e) = eps {
                                    spec = spec.with_eps(e)?;
                                }
                                if let Some(m) = mix {
                                    spec = spec.with_mix(m)?;
                                }
                                generate_instance(&spec)?
                            }
                        };
                        let prepared = prepare(&doc)?;
                        let lambda_min = Some(hessian_min_eigenvalue(&prepared.oracle));
                        let gamma_value = doc.gamma;

                        if omega_c(c).is_err() {
                            rows.push(SweepRow {
                                c,
                                total_steps: t,
                                gamma: gamma_value,
                                eps,
                                mix,
                                lambda_min,
                                aggregate: None,
                                status: "skipped_invalid_c",
                            });
                            continue;
                        }

                        let (td_config, records) = pool.install(|| {
                            run_batch(
                                &prepared,
                                c,
                                t,
                                algo.replications,
                                seed,
                                algo.record_stride.min(t.max(1)),
                            )
                        })?;
                        let aggregate = aggregate_batch(&prepared, &td_config, &records)?;
                        rows.push(SweepRow {
                            c,
                            total_steps: t,
                            gamma: gamma_value,
                            eps,
                            mix,
                            lambda_min,
                            aggregate: Some(aggregate),
                            status: "ok",
                        });
                    }
                }
            }
        }
    }

    fs::create_dir_all(&config.output.dir)?;
    let mut csv = String::from(SweepRow::csv_header());
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.csv_line());
        csv.push('\n');
    }
    fs::write(config.output.dir.join("sweep.csv"), csv)?;
    Ok(rows)
}
