use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    generate_synthetic, ExperimentManifest, InitKind, DATA_STREAM, INIT_STREAM, TEST_STREAM, WARMUP_STREAM,
};
use crate::analysis::{
    count_crossings, crossing_time_stats, global_error_order_multi, local_error_order, CrossingTimeConfig, CrossingTimeTable,
    ErrorOrderFit, LocalRegime,
};
use crate::bnn::{Activation, MlpArchitecture, PosteriorSpec, RegressionDataset};
use crate::error::{Error, Result};
use crate::proxy::{
    efficiency_curve, estimate_sigma, scaling_experiment, EfficiencyCurve, IidProduct, PiecewiseAffinePotential,
    ScalingConfig, ScalingRow, SigmaEstimate,
};
use crate::sampler::{hmc_chain, mse, posterior_predict, HmcConfig};
use crate::stats::{derive_seed, rng_from_seed};
use crate::symplectic::PhasePoint;

/// One row of a chain-grid CSV. Columns, in order: `cell, repeat, seed,
/// activation, hidden, d, epsilon, n_steps, travel_time, acceptance_rate,
/// n_divergent, mean_abs_delta_h, test_mse, efficiency, status`.
///
/// Wall-clock durations go to the JSON summary so that the CSV is
/// reproducible byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub cell: usize,
    pub repeat: usize,
    pub seed: u64,
    pub activation: Activation,
    /// Hidden widths joined by `x`, e.g. `20x20`.
    pub hidden: String,
    pub d: usize,
    pub epsilon: f64,
    pub n_steps: usize,
    pub travel_time: f64,
    pub acceptance_rate: Option<f64>,
    pub n_divergent: Option<usize>,
    pub mean_abs_delta_h: Option<f64>,
    pub test_mse: Option<f64>,
    /// `ε·acceptance_rate`.
    pub efficiency: Option<f64>,
    /// `ok`, or the error that stopped the cell.
    pub status: String,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// A (activation, architecture, ε, L) combination; repeats share the cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainCell {
    pub index: usize,
    pub activation: Activation,
    pub hidden: Vec<usize>,
    pub epsilon: f64,
    pub n_steps: usize,
}

/// Cells in row-major order over activations, architectures, step counts
/// (or the single travel time) and step sizes.
pub fn chain_cells(m: &ExperimentManifest) -> Vec<ChainCell> {
    let mut cells = Vec::new();
    let eps = m.epsilons();
    let steps: Vec<Option<usize>> = match m.travel_time() {
        Some(_) => vec![None],
        None => m.steps().into_iter().map(Some).collect(),
    };
    for activation in m.activations() {
        for hidden in m.architectures() {
            for l in &steps {
                for &e in &eps {
                    let n_steps = l.unwrap_or_else(|| {
                        let t = m.travel_time().expect("travel time set");
                        ((t / e).round() as usize).max(1)
                    });
                    cells.push(ChainCell {
                        index: cells.len(),
                        activation,
                        hidden: hidden.clone(),
                        epsilon: e,
                        n_steps,
                    });
                }
            }
        }
    }
    cells
}

pub fn hidden_label(hidden: &[usize]) -> String {
    hidden.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("x")
}

/// Training and test data of a manifest.
pub fn manifest_data(m: &ExperimentManifest) -> Result<(RegressionDataset, RegressionDataset)> {
    Ok((
        generate_synthetic(m.n_data(), derive_seed(m.seed, &[DATA_STREAM]))?,
        generate_synthetic(m.n_test().max(1), derive_seed(m.seed, &[TEST_STREAM]))?,
    ))
}

pub fn build_spec(m: &ExperimentManifest, activation: Activation, hidden: &[usize], data: RegressionDataset) -> Result<PosteriorSpec> {
    let mut arch = MlpArchitecture::with_hidden(1, hidden, 1, activation)?;
    if let Some(s) = m.leaky_slope {
        arch = arch.with_leaky_slope(s)?;
    }
    if let Some(z) = m.zero_subderivative {
        arch = arch.with_zero_subderivative(z)?;
    }
    PosteriorSpec::new(arch, data, m.prior_scale(), m.noise_scale())
}

/// Starting position of the chain seeded with `seed`.
pub fn chain_start(m: &ExperimentManifest, spec: &PosteriorSpec, seed: u64) -> Result<Vec<f64>> {
    let draw = spec.sample_prior(&mut rng_from_seed(derive_seed(seed, &[INIT_STREAM])));
    match m.init() {
        InitKind::Prior => Ok(draw),
        InitKind::Warm => warm_start(
            spec,
            draw,
            m.warmup_step_size(),
            m.warmup_steps(),
            m.warmup_iterations(),
            derive_seed(seed, &[WARMUP_STREAM]),
        ),
    }
}

/// Last state of a short HMC run from `q`.
pub fn warm_start(
    spec: &PosteriorSpec,
    q: Vec<f64>,
    step_size: f64,
    n_steps: usize,
    iterations: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if iterations == 0 {
        return Ok(q);
    }
    let cfg = HmcConfig::with_steps(step_size, n_steps, 1, iterations - 1, seed);
    let mut chain = hmc_chain(spec, &q, &cfg)?;
    Ok(chain.samples.pop().expect("one sample"))
}

/// Output of a chain grid: rows sorted by `(cell, repeat)` and each row's
/// wall-clock duration.
#[derive(Clone, Debug, Serialize)]
pub struct GridOutput {
    pub rows: Vec<ResultRow>,
    pub durations_secs: Vec<f64>,
}

impl GridOutput {
    pub fn n_failed(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_ok()).count()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary_json(&self, manifest: &ExperimentManifest) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            manifest: &'a ExperimentManifest,
            n_rows: usize,
            n_failed: usize,
            total_duration_secs: f64,
            durations_secs: &'a [f64],
            optima: Vec<EmpiricalOptimum>,
        }
        Ok(serde_json::to_string_pretty(&Summary {
            manifest,
            n_rows: self.rows.len(),
            n_failed: self.n_failed(),
            total_duration_secs: self.durations_secs.iter().sum(),
            durations_secs: &self.durations_secs,
            optima: empirical_optima(&self.rows),
        })?)
    }
}

fn run_cell(
    m: &ExperimentManifest,
    cell: &ChainCell,
    repeat: usize,
    train: &RegressionDataset,
    test: &RegressionDataset,
) -> Result<ResultRow> {
    let spec = build_spec(m, cell.activation, &cell.hidden, train.clone())?;
    let seed = m.cell_seed(cell.index, repeat);
    let init = chain_start(m, &spec, seed)?;
    let config = HmcConfig {
        divergence_cap: m.divergence_cap(),
        ..HmcConfig::with_steps(cell.epsilon, cell.n_steps, m.n_samples(), m.burn_in(), seed)
    };
    let chain = hmc_chain(&spec, &init, &config)?;
    let test_mse = if m.n_test() > 0 {
        let mut preds = Vec::with_capacity(test.len());
        let mut targets = Vec::with_capacity(test.len());
        for i in 0..test.len() {
            preds.extend(posterior_predict(&spec, &chain.samples, test.input(i))?.0);
            targets.extend_from_slice(test.target(i));
        }
        Some(mse(&preds, &targets)?)
    } else {
        None
    };
    Ok(ResultRow {
        cell: cell.index,
        repeat,
        seed,
        activation: cell.activation,
        hidden: hidden_label(&cell.hidden),
        d: spec.dim(),
        epsilon: cell.epsilon,
        n_steps: cell.n_steps,
        travel_time: cell.epsilon * cell.n_steps as f64,
        acceptance_rate: Some(chain.acceptance_rate),
        n_divergent: Some(chain.n_divergent),
        mean_abs_delta_h: chain.mean_abs_delta_h(),
        test_mse,
        efficiency: Some(cell.epsilon * chain.acceptance_rate),
        status: "ok".into(),
    })
}

fn failed_row(m: &ExperimentManifest, cell: &ChainCell, repeat: usize, status: String) -> ResultRow {
    let d = MlpArchitecture::with_hidden(1, &cell.hidden, 1, cell.activation)
        .map(|a| a.param_dim())
        .unwrap_or(0);
    ResultRow {
        cell: cell.index,
        repeat,
        seed: m.cell_seed(cell.index, repeat),
        activation: cell.activation,
        hidden: hidden_label(&cell.hidden),
        d,
        epsilon: cell.epsilon,
        n_steps: cell.n_steps,
        travel_time: cell.epsilon * cell.n_steps as f64,
        acceptance_rate: None,
        n_divergent: None,
        mean_abs_delta_h: None,
        test_mse: None,
        efficiency: None,
        status: format!("error: {}", status.replace(['\n', '\r'], " ")),
    }
}

/// Runs one HMC chain per (cell, repeat) on the current rayon pool. A cell
/// that fails or panics is recorded in its row; the grid carries on.
pub fn run_grid(m: &ExperimentManifest) -> Result<GridOutput> {
    m.validate()?;
    let (train, test) = manifest_data(m)?;
    let cells = chain_cells(m);
    let tasks: Vec<(&ChainCell, usize)> = cells
        .iter()
        .flat_map(|c| (0..m.repeats()).map(move |r| (c, r)))
        .collect();
    let mut results: Vec<(ResultRow, f64)> = tasks
        .par_iter()
        .map(|&(cell, repeat)| {
            let started = Instant::now();
            let row = match catch_unwind(AssertUnwindSafe(|| run_cell(m, cell, repeat, &train, &test))) {
                Ok(Ok(row)) => row,
                Ok(Err(e)) => failed_row(m, cell, repeat, e.to_string()),
                Err(panic) => {
                    let msg = panic
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_else(|| "panic".into());
                    failed_row(m, cell, repeat, msg)
                }
            };
            (row, started.elapsed().as_secs_f64())
        })
        .collect();
    results.sort_by_key(|(r, _)| (r.cell, r.repeat));
    let (rows, durations_secs) = results.into_iter().unzip();
    Ok(GridOutput { rows, durations_secs })
}

/// Fixed-`T` sweep over step sizes; rows carry `efficiency = ε·acceptance`.
pub fn efficiency_sweep(m: &ExperimentManifest) -> Result<GridOutput> {
    if m.travel_time().is_none() {
        return Err(Error::InvalidConfig("efficiency sweep needs a travel time".into()));
    }
    run_grid(m)
}

/// Sweep over architectures at fixed `(ε, L)`.
pub fn dim_sweep(m: &ExperimentManifest) -> Result<GridOutput> {
    run_grid(m)
}

/// Repeat-averaged acceptance and efficiency of one (activation, ε) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub activation: Activation,
    pub epsilon: f64,
    pub acceptance: f64,
    pub efficiency: f64,
}

/// Averages successful rows over repeats, per activation and step size, in
/// increasing step size.
pub fn sweep_points(rows: &[ResultRow]) -> Vec<SweepPoint> {
    let mut acc: BTreeMap<(String, u64), (Activation, f64, f64, usize)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.is_ok()) {
        let key = (r.activation.name().to_string(), r.epsilon.to_bits());
        let e = acc.entry(key).or_insert((r.activation, 0.0, 0.0, 0));
        e.1 += r.acceptance_rate.unwrap_or(0.0);
        e.2 += r.efficiency.unwrap_or(0.0);
        e.3 += 1;
    }
    let mut pts: Vec<SweepPoint> = acc
        .into_iter()
        .map(|((_, bits), (activation, a, e, n))| SweepPoint {
            activation,
            epsilon: f64::from_bits(bits),
            acceptance: a / n as f64,
            efficiency: e / n as f64,
        })
        .collect();
    pts.sort_by(|a, b| {
        a.activation
            .name()
            .cmp(b.activation.name())
            .then(a.epsilon.total_cmp(&b.epsilon))
    });
    pts
}

/// Peak of the empirical efficiency curve of one activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalOptimum {
    pub activation: Activation,
    pub epsilon: f64,
    pub acceptance: f64,
    pub efficiency: f64,
}

pub fn empirical_optima(rows: &[ResultRow]) -> Vec<EmpiricalOptimum> {
    let mut best: BTreeMap<String, SweepPoint> = BTreeMap::new();
    for p in sweep_points(rows) {
        let slot = best.entry(p.activation.name().to_string()).or_insert_with(|| p.clone());
        if p.efficiency > slot.efficiency {
            *slot = p;
        }
    }
    best.into_values()
        .map(|p| EmpiricalOptimum {
            activation: p.activation,
            epsilon: p.epsilon,
            acceptance: p.acceptance,
            efficiency: p.efficiency,
        })
        .collect()
}

/// Per-step-size error used by an order fit, as a CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorPoint {
    pub activation: Activation,
    pub hidden: String,
    /// `local`, `local_residual` or `global`.
    pub measure: String,
    pub epsilon: f64,
    pub abs_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorFitRow {
    pub activation: Activation,
    pub hidden: String,
    pub measure: String,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
    pub n_divergent: usize,
    /// Mean number of surface crossings per trajectory at the smallest kept
    /// step size (global fits of piecewise-affine nets only).
    pub mean_crossings: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorOrderOutput {
    pub points: Vec<ErrorPoint>,
    pub fits: Vec<ErrorFitRow>,
}

/// A reproducible anchor: a prior draw for `q` and a standard-normal `p`,
/// both from `seed`.
pub fn random_anchor(spec: &PosteriorSpec, seed: u64) -> PhasePoint {
    let mut rng = rng_from_seed(seed);
    let q = spec.sample_prior(&mut rng);
    let p = (0..spec.dim()).map(|_| rng.sample(StandardNormal)).collect();
    PhasePoint::new(q, p)
}

/// A typical posterior state: the prior-draw anchor of `seed` moved by 100
/// HMC proposals of 100 steps of size `5·10⁻⁴`, with a fresh momentum.
///
/// Prior draws sit far out in the tails where gradients are large, and the
/// asymptotic error orders only show at very small step sizes there.
pub fn equilibrated_anchor(spec: &PosteriorSpec, seed: u64) -> Result<PhasePoint> {
    let a = random_anchor(spec, seed);
    let q = warm_start(spec, a.q, 5e-4, 100, 100, derive_seed(seed, &[WARMUP_STREAM]))?;
    let mut rng = rng_from_seed(derive_seed(seed, &[INIT_STREAM]));
    let p = (0..spec.dim()).map(|_| rng.sample(StandardNormal)).collect();
    Ok(PhasePoint::new(q, p))
}

/// Local and global energy-error orders per (activation, architecture).
/// Piecewise-affine activations use forced crossings for the local fit,
/// which uses the first of `repeats` equilibrated anchors; the global fit
/// averages `|ΔH|` over all of them.
pub fn error_order_experiment(m: &ExperimentManifest) -> Result<ErrorOrderOutput> {
    let (train, _) = manifest_data(m)?;
    let eps = m.epsilons();
    let t = m.travel_time().unwrap_or(0.1);
    let mut out = ErrorOrderOutput::default();
    let mut cell = 0u64;
    for activation in m.activations() {
        for hidden in m.architectures() {
            let spec = build_spec(m, activation, &hidden, train.clone())?;
            let anchors = (0..m.repeats().max(1) as u64)
                .map(|r| equilibrated_anchor(&spec, derive_seed(m.seed, &[cell, r])))
                .collect::<Result<Vec<_>>>()?;
            cell += 1;
            let regime = if activation.is_piecewise_affine() {
                LocalRegime::forced(m.crossing_fraction())
            } else {
                LocalRegime::Smooth
            };
            let local = local_error_order(&spec, &anchors[0], regime, &eps)?;
            let global = global_error_order_multi(&spec, &anchors, t, &eps)?;
            let crossings = match (activation.is_piecewise_affine(), global.epsilons.first()) {
                (true, Some(&e0)) => {
                    let n_steps = ((t / e0).round() as usize).max(1);
                    let total: usize = anchors.iter().map(|a| count_crossings(&spec, a, e0, n_steps)).sum();
                    Some(total as f64 / anchors.len() as f64)
                }
                _ => None,
            };
            let label = hidden_label(&hidden);
            let mut push = |measure: &str, fit: &ErrorOrderFit, mean_crossings: Option<f64>| {
                for (e, a) in fit.epsilons.iter().zip(&fit.abs_errors) {
                    out.points.push(ErrorPoint {
                        activation,
                        hidden: label.clone(),
                        measure: measure.into(),
                        epsilon: *e,
                        abs_error: *a,
                    });
                }
                out.fits.push(ErrorFitRow {
                    activation,
                    hidden: label.clone(),
                    measure: measure.into(),
                    slope: fit.slope,
                    intercept: fit.intercept,
                    r_squared: fit.r_squared,
                    n_points: fit.epsilons.len(),
                    n_divergent: fit.divergent.len(),
                    mean_crossings,
                });
            };
            push("local", &local.measured, None);
            if let (true, Some(res)) = (activation.is_piecewise_affine(), &local.residual) {
                push("local_residual", res, None);
            }
            push("global", &global, crossings);
        }
    }
    Ok(out)
}

pub fn write_rows_csv<T: Serialize, W: std::io::Write>(rows: &[T], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Scaling rows for each exponent plus the `Σ` estimate at the step size
/// of the largest dimension under `d^{−1/2}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyScalingOutput {
    pub rows: Vec<ScalingRow>,
    pub sigma: SigmaEstimate,
    /// `2Φ(−l√Σ̂/2)`.
    pub predicted_plateau: f64,
}

/// Laplace product target. Exponents: the manifest's `dim_exponent` if
/// set, otherwise both 1/2 and the 1/4 control.
pub fn proxy_scaling_experiment(m: &ExperimentManifest) -> Result<ProxyScalingOutput> {
    let target = PiecewiseAffinePotential::laplace();
    let t = m.travel_time().unwrap_or(1.0);
    let dims = m.dims();
    let d_max = *dims.iter().max().ok_or_else(|| Error::InvalidConfig("no dimensions".into()))?;
    let exponents = match m.dim_exponent {
        Some(e) => vec![e],
        None => vec![0.5, 0.25],
    };
    let mut rows = Vec::new();
    for (k, &dim_exponent) in exponents.iter().enumerate() {
        rows.extend(scaling_experiment(
            &target,
            &ScalingConfig {
                l: m.l(),
                dims: dims.clone(),
                samples_per_dim: m.n_samples(),
                travel_time: t,
                dim_exponent,
                seed: derive_seed(m.seed, &[k as u64]),
            },
        )?);
    }
    let eps = m.l() / (d_max as f64).sqrt();
    let sigma = estimate_sigma(&target, eps, 100_000, t, derive_seed(m.seed, &[u64::MAX]))?;
    let predicted_plateau = crate::proxy::acceptance_limit(1, m.l(), sigma.sigma())?;
    Ok(ProxyScalingOutput {
        rows,
        sigma,
        predicted_plateau,
    })
}

/// Limiting curves for each (order, Σ) of the manifest.
pub fn tuning_curves(m: &ExperimentManifest) -> Result<Vec<EfficiencyCurve>> {
    let mut curves = Vec::new();
    for &order in &m.orders() {
        for &sigma in &m.sigmas() {
            curves.push(efficiency_curve(order, sigma)?);
        }
    }
    Ok(curves)
}

/// Crossing-time probe on the one-dimensional Laplace target with unit
/// momentum and starts uniform on `(−w, w)`, `w = 2ε(1 + ε)`, wide enough
/// that every start left of the kink within one drift is covered.
pub fn crossing_stats_experiment(m: &ExperimentManifest) -> Result<CrossingTimeTable> {
    let eps = *m
        .epsilons()
        .first()
        .ok_or_else(|| Error::InvalidConfig("crossing stats needs a step size".into()))?;
    let target = IidProduct::new(PiecewiseAffinePotential::laplace(), 1);
    let width = 2.0 * eps * (1.0 + eps);
    let sampler = move |rng: &mut rand_chacha::ChaCha8Rng| {
        let u: f64 = rng.random();
        PhasePoint::new(vec![width * (2.0 * u - 1.0)], vec![1.0])
    };
    Ok(crossing_time_stats(
        &target,
        sampler,
        &CrossingTimeConfig {
            step_size: eps,
            n_samples: m.n_samples(),
            a_grid: m.a_grid(),
            max_momentum: m.max_momentum(),
            seed: m.seed,
        },
    ))
}
