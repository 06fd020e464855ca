//! End-to-end experiment pipeline: a single deployment through density
//! estimation, topology, thresholding and reporting, plus deterministic
//! multi-trial sweeps with confidence intervals.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Deserialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::domain::{BinaryMap, DomainSpec};
use crate::error::{Error, Result};
use crate::grid::{self, DensityGrid, ProbabilityGrid};
use crate::io::{self, fmt_sig};
use crate::sim::{run_swarm, RunOutput, SimConfig};
use crate::tda::{self, Barcode, ThresholdSelection};

/// The applied cutoff sits this far below the selected one, so cells at
/// exactly the classification value classify as free.
pub const TIE_EPSILON: f64 = 1e-9;

/// Cutoff actually applied to the map for a selected `gamma_est`.
pub fn effective_gamma(gamma_est: f64) -> f64 {
    (gamma_est - TIE_EPSILON).max(0.0)
}

/// Workspace reference in an experiment config: a path (relative paths are
/// resolved against the config file's directory) or an inline description.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum DomainRef {
    Path(String),
    Inline(serde_json::Value),
}

/// Sweepable quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    Robots,
    Duration,
    SignalNoise,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::Robots => "robots",
            SweepVariable::Duration => "duration",
            SweepVariable::SignalNoise => "signal_noise",
        }
    }
}

/// Batch description: which variable to sweep and over which values.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

impl SweepSpec {
    /// Simulation settings for one sweep value.
    ///
    /// Sweeping the injected signal noise pins the filter's assumed noise to
    /// the base setting, so the filter model mismatches the world on purpose.
    pub fn apply(&self, base: &SimConfig, value: f64) -> Result<SimConfig> {
        let mut cfg = base.clone();
        match self.variable {
            SweepVariable::Robots => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::Config(format!(
                        "robot counts must be positive integers, got {value}"
                    )));
                }
                cfg.robots = value as usize;
            }
            SweepVariable::Duration => {
                if !(value > 0.0) {
                    return Err(Error::Config(format!(
                        "durations must be positive, got {value}"
                    )));
                }
                cfg.duration = value;
            }
            SweepVariable::SignalNoise => {
                if !(value >= 0.0) {
                    return Err(Error::Config(format!(
                        "noise levels must be nonnegative, got {value}"
                    )));
                }
                cfg.signal_noise = value;
                cfg.filter_signal_noise =
                    Some(base.filter_signal_noise.unwrap_or(base.signal_noise));
            }
        }
        Ok(cfg)
    }
}

fn default_trials() -> usize {
    1
}

/// A full experiment: workspace, simulation settings, batch shape.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: DomainRef,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::Config("sweep values must be nonempty".into()));
            }
        }
        self.sim.validate()
    }
}

/// Load and validate an experiment config plus the workspace it references.
pub fn load_experiment(path: &Path) -> Result<(ExperimentConfig, DomainSpec)> {
    let text = fs::read_to_string(path)?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    let domain = match &cfg.domain {
        DomainRef::Inline(value) => DomainSpec::from_json_str(&value.to_string())?,
        DomainRef::Path(rel) => {
            let p = PathBuf::from(rel);
            let full = if p.is_absolute() {
                p
            } else {
                path.parent().unwrap_or(Path::new(".")).join(p)
            };
            DomainSpec::from_json_file(&full)?
        }
    };
    Ok((cfg, domain))
}

/// Wall-clock seconds per stage.  Not deterministic; kept out of report.txt
/// so reruns stay byte-identical, and written to timings.txt instead.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageTimings {
    pub simulate: f64,
    pub density: f64,
    pub topology: f64,
    pub threshold: f64,
    pub report: f64,
}

/// Deterministic per-trial outcome summary.
#[derive(Debug, Clone)]
pub struct TrialReport {
    pub seed: u64,
    pub gamma_est: f64,
    pub delta_cls: f64,
    pub arrows0: usize,
    pub arrows1: usize,
    pub betti0: usize,
    pub betti1: usize,
    pub obstacles: usize,
    pub success: bool,
    pub covered: bool,
    pub mae: f64,
    pub pao: f64,
    pub tuples: usize,
    pub filter_faults: usize,
    pub saturated_terms: usize,
}

/// Everything one trial produces, kept in memory.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub run: RunOutput,
    pub density: DensityGrid,
    pub raw: ProbabilityGrid,
    pub smoothed: ProbabilityGrid,
    pub barcode: Barcode,
    pub selection: ThresholdSelection,
    pub map: BinaryMap,
    pub truth: BinaryMap,
    pub report: TrialReport,
    pub timings: StageTimings,
}

/// Fraction of cells where two maps on the same grid disagree.
pub fn mae(est: &BinaryMap, truth: &BinaryMap) -> Result<f64> {
    if est.grid != truth.grid {
        return Err(Error::Geometry("maps live on different grids".into()));
    }
    let mismatched =
        est.occupied.iter().zip(&truth.occupied).filter(|(a, b)| a != b).count();
    Ok(mismatched as f64 / est.occupied.len() as f64)
}

/// One deployment, fused, thresholded and scored.  Fully determined by
/// (domain, cfg, seed).
pub fn run_trial(domain: &DomainSpec, cfg: &SimConfig, seed: u64) -> Result<TrialData> {
    let t0 = Instant::now();
    let run = run_swarm(domain, cfg, seed)?;
    let t1 = Instant::now();
    let mut density = DensityGrid::new(domain.grid);
    density.accumulate(&run.tuples);
    let raw = density.probability();
    let smoothed = grid::smooth(&raw);
    let t2 = Instant::now();
    let complex = tda::occupancy_filtration(&smoothed);
    let barcode = tda::persistence(&complex);
    let t3 = Instant::now();
    let selection = tda::select_threshold(&barcode)?;
    let map = tda::threshold_map(&smoothed, effective_gamma(selection.gamma));
    let t4 = Instant::now();
    let truth = domain.ground_truth();
    let err = mae(&map, &truth)?;
    let betti = tda::mask_betti(&map);
    let coverage = grid::coverage_check(domain, &run.tuples);
    let report = TrialReport {
        seed,
        gamma_est: selection.gamma,
        delta_cls: selection.delta_cls,
        arrows0: selection.arrows0,
        arrows1: selection.arrows1,
        betti0: betti.b0,
        betti1: betti.b1,
        obstacles: domain.obstacles.len(),
        success: betti.b0 == 1 && betti.b1 == domain.obstacles.len(),
        covered: coverage.covered,
        mae: err,
        pao: domain.pao(),
        tuples: run.tuples.len(),
        filter_faults: run.filter_faults,
        saturated_terms: density.saturated_terms(),
    };
    let t5 = Instant::now();
    let timings = StageTimings {
        simulate: (t1 - t0).as_secs_f64(),
        density: (t2 - t1).as_secs_f64(),
        topology: (t3 - t2).as_secs_f64(),
        threshold: (t4 - t3).as_secs_f64(),
        report: (t5 - t4).as_secs_f64(),
    };
    Ok(TrialData {
        run,
        density,
        raw,
        smoothed,
        barcode,
        selection,
        map,
        truth,
        report,
        timings,
    })
}

/// Report keys shared by the full run and the artifact-replay path.
/// Deliberately excludes seed, filter faults and saturation diagnostics so a
/// replay from saved artifacts can reproduce the file exactly.
fn report_pairs(r: &TrialReport) -> Vec<(&'static str, String)> {
    vec![
        ("gamma_est", fmt_sig(r.gamma_est)),
        ("delta_cls", fmt_sig(r.delta_cls)),
        ("arrows0", r.arrows0.to_string()),
        ("arrows1", r.arrows1.to_string()),
        ("betti0", r.betti0.to_string()),
        ("betti1", r.betti1.to_string()),
        ("obstacles", r.obstacles.to_string()),
        ("success", r.success.to_string()),
        ("covered", r.covered.to_string()),
        ("mae", fmt_sig(r.mae)),
        ("pao", fmt_sig(r.pao)),
        ("tuples", r.tuples.to_string()),
    ]
}

fn timing_pairs(t: &StageTimings) -> Vec<(&'static str, String)> {
    vec![
        ("simulate_s", format!("{:.3}", t.simulate)),
        ("density_s", format!("{:.3}", t.density)),
        ("topology_s", format!("{:.3}", t.topology)),
        ("threshold_s", format!("{:.3}", t.threshold)),
        ("report_s", format!("{:.3}", t.report)),
    ]
}

/// Betti counts along the reporting sweep of the filtration parameter.
pub fn write_betti_curve(path: &Path, barcode: &Barcode) -> Result<()> {
    let mut out = String::from("delta,b0,b1\n");
    for k in 1..=19 {
        let delta = k as f64 * 0.05;
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_sig(delta),
            barcode.alive_at(0, delta),
            barcode.alive_at(1, delta)
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Write the outcome summary as flat `key=value` lines.
pub fn write_report_file(path: &Path, report: &TrialReport) -> Result<()> {
    io::write_kv(path, &report_pairs(report))
}

/// Write per-stage wall-clock seconds as flat `key=value` lines.
pub fn write_timings_file(path: &Path, timings: &StageTimings) -> Result<()> {
    io::write_kv(path, &timing_pairs(timings))
}

/// 0/1 grid of cells where the estimate disagrees with ground truth.
pub fn write_error_map(path: &Path, est: &BinaryMap, truth: &BinaryMap) -> Result<()> {
    let diff: Vec<u32> = est
        .occupied
        .iter()
        .zip(&truth.occupied)
        .map(|(a, b)| u32::from(a != b))
        .collect();
    io::write_counts_csv(path, est.grid, &diff)
}

/// Write the full artifact set for one trial into `out`.
pub fn write_artifacts(data: &TrialData, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    io::write_tuples(&out.join("tuples.csv"), &data.run.tuples)?;
    io::write_trajectories(&out.join("trajectories.csv"), &data.run.records)?;
    io::write_probability_csv(&out.join("density.csv"), &data.raw)?;
    io::write_counts_csv(&out.join("counts.csv"), data.density.spec, data.density.counts())?;
    io::write_probability_csv(&out.join("smoothed.csv"), &data.smoothed)?;
    io::write_barcode(&out.join("barcode.csv"), &data.barcode)?;
    write_betti_curve(&out.join("betti_curve.csv"), &data.barcode)?;
    io::write_pgm(&out.join("map.pgm"), &data.map)?;
    io::write_pgm(&out.join("truth.pgm"), &data.truth)?;
    write_error_map(&out.join("error_map.csv"), &data.map, &data.truth)?;
    write_report_file(&out.join("report.txt"), &data.report)?;
    write_timings_file(&out.join("timings.txt"), &data.timings)?;
    Ok(())
}

/// One trial plus its artifact set under `out`.
pub fn run_pipeline(
    domain: &DomainSpec,
    cfg: &SimConfig,
    seed: u64,
    out: &Path,
) -> Result<TrialData> {
    let data = run_trial(domain, cfg, seed)?;
    write_artifacts(&data, out)?;
    Ok(data)
}

/// Sample mean and 95% confidence half-width (Student t, n-1 dof).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    pub mean: f64,
    pub half_width: f64,
}

/// Mean and 95% CI half-width of a sample; needs at least two values.
pub fn batch_stats(values: &[f64]) -> Result<BatchStats> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "confidence interval needs at least two values, got {n}"
        )));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::Numerical(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(BatchStats { mean, half_width: t * var.sqrt() / (n as f64).sqrt() })
}

/// Mean/half-width helper tolerating tiny samples: a single value has zero
/// half-width, an empty sample reports NaN.
fn aggregate(values: &[f64]) -> (f64, f64) {
    match values.len() {
        0 => (f64::NAN, f64::NAN),
        1 => (values[0], 0.0),
        _ => {
            let s = batch_stats(values).expect("two or more values cannot fail");
            (s.mean, s.half_width)
        }
    }
}

/// FNV-1a over the sweep coordinates; a stable, platform-independent way to
/// give every (variable, value, trial) its own seed.
pub fn derive_seed(master: u64, variable: &str, value: f64, trial: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut bytes: Vec<u8> = Vec::with_capacity(variable.len() + 16);
    bytes.extend_from_slice(variable.as_bytes());
    bytes.extend_from_slice(&value.to_bits().to_le_bytes());
    bytes.extend_from_slice(&(trial as u64).to_le_bytes());
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    master ^ h
}

/// Aggregated outcome for one sweep value.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub trials: usize,
    pub failures: usize,
    pub mean_gamma: f64,
    pub gamma_hw: f64,
    pub mean_mae: f64,
    pub mae_hw: f64,
    pub success_pct: f64,
}

/// Outcome of a whole sweep: one row per value, failures recorded apart.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// (value, trial index, error message) for trials that failed.
    pub failures: Vec<(f64, usize, String)>,
}

/// Run `trials` deployments per sweep value in parallel, write per-trial
/// artifact directories plus an aggregate `sweep.csv`, and return the table.
/// Trial seeds derive from the master seed and the sweep coordinates, so the
/// outcome does not depend on scheduling or worker count.
pub fn sweep(
    domain: &DomainSpec,
    cfg: &ExperimentConfig,
    out: &Path,
    jobs: Option<usize>,
) -> Result<SweepOutcome> {
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("config has no sweep section".into()))?;
    fs::create_dir_all(out)?;
    let mut work = Vec::new();
    for (vi, &value) in spec.values.iter().enumerate() {
        for trial in 0..cfg.trials {
            work.push((vi, value, trial));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let mut results: Vec<(usize, usize, std::result::Result<TrialReport, String>)> =
        pool.install(|| {
            work.par_iter()
                .map(|&(vi, value, trial)| {
                    let outcome = spec.apply(&cfg.sim, value).and_then(|sim| {
                        let seed = derive_seed(cfg.seed, spec.variable.name(), value, trial);
                        let dir = out
                            .join(format!("{}_{}", spec.variable.name(), value))
                            .join(format!("trial_{trial:02}"));
                        run_pipeline(domain, &sim, seed, &dir).map(|d| d.report)
                    });
                    (vi, trial, outcome.map_err(|e| e.to_string()))
                })
                .collect()
        });
    results.sort_by_key(|&(vi, trial, _)| (vi, trial));

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (vi, &value) in spec.values.iter().enumerate() {
        let mut gammas = Vec::new();
        let mut maes = Vec::new();
        let mut successes = 0usize;
        let mut failed = 0usize;
        for (_, trial, res) in results.iter().filter(|&&(i, _, _)| i == vi) {
            match res {
                Ok(rep) => {
                    gammas.push(rep.gamma_est);
                    maes.push(rep.mae);
                    successes += usize::from(rep.success);
                }
                Err(msg) => {
                    failed += 1;
                    failures.push((value, *trial, msg.clone()));
                }
            }
        }
        let (mean_gamma, gamma_hw) = aggregate(&gammas);
        let (mean_mae, mae_hw) = aggregate(&maes);
        let ok = cfg.trials - failed;
        rows.push(SweepRow {
            value,
            trials: cfg.trials,
            failures: failed,
            mean_gamma,
            gamma_hw,
            mean_mae,
            mae_hw,
            success_pct: if ok > 0 {
                100.0 * successes as f64 / ok as f64
            } else {
                f64::NAN
            },
        });
    }

    let mut table =
        String::from("value,trials,failures,mean_gamma,gamma_ci,mean_mae,mae_ci,success_pct\n");
    for r in &rows {
        table.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.value,
            r.trials,
            r.failures,
            fmt_sig(r.mean_gamma),
            fmt_sig(r.gamma_hw),
            fmt_sig(r.mean_mae),
            fmt_sig(r.mae_hw),
            fmt_sig(r.success_pct)
        ));
    }
    fs::write(out.join("sweep.csv"), table)?;
    if !failures.is_empty() {
        let mut log = String::new();
        for (value, trial, msg) in &failures {
            log.push_str(&format!("{value},trial {trial}: {msg}\n"));
        }
        fs::write(out.join("sweep_errors.txt"), log)?;
    }
    Ok(SweepOutcome { rows, failures })
}
