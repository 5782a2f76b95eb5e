//! Energy-error analysis across non-differentiability surfaces.
//!
//! For a leapfrog step whose drift crosses surfaces at times `ε_i` with
//! gradient jumps `J_i = ∇U⁺(z_i) − ∇U⁻(z_i)`, the first-order energy error is
//!
//! ```text
//! ΔH ≈ p½ · Σ_i (ε/2 − ε_i) · J_i
//! ```
//!
//! which is `Θ(ε)` unless the crossings happen near mid-step, in contrast to
//! the `O(ε³)` local error of smooth potentials.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::Potential;
use crate::stats::{derive_seed, dot, linear_fit, rng_from_seed};
use crate::symplectic::{
    leapfrog_step, simulate, trajectory_with, IntegratorOptions, PhasePoint, StepRecord,
    DEFAULT_DIVERGENCE_CAP,
};

pub use crate::potential::CrossingEvent;

/// Errors at or below this are treated as floating-point noise and left out
/// of order fits.
pub const NOISE_FLOOR: f64 = 1e-14;

/// Default crossing fraction `ε_1/ε` for forced-crossing fits. Any value
/// other than 1/2 works; 1/2 makes the leading term vanish.
pub const DEFAULT_CROSSING_FRACTION: f64 = 0.25;

/// First-order prediction of a step's energy error from its crossings.
pub fn predict_local_error(record: &StepRecord) -> f64 {
    let half = 0.5 * record.step_size;
    record
        .crossings
        .iter()
        .map(|c| (half - c.epsilon_i) * dot(&record.p_half, &c.jump))
        .sum()
}

/// Least-squares fit of `log|error|` against `log ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorOrderFit {
    /// Step sizes that entered the fit.
    pub epsilons: Vec<f64>,
    pub abs_errors: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Step sizes dropped because the run diverged.
    pub divergent: Vec<f64>,
    /// Step sizes dropped because the error was below [`NOISE_FLOOR`].
    pub below_noise: Vec<f64>,
}

impl ErrorOrderFit {
    pub fn fit(epsilons: &[f64], errors: &[f64], divergent: Vec<f64>) -> Result<Self> {
        let mut kept_eps = Vec::new();
        let mut kept_err = Vec::new();
        let mut below_noise = Vec::new();
        for (&e, &err) in epsilons.iter().zip(errors) {
            if err.abs() > NOISE_FLOOR && err.is_finite() {
                kept_eps.push(e);
                kept_err.push(err.abs());
            } else {
                below_noise.push(e);
            }
        }
        let lx: Vec<f64> = kept_eps.iter().map(|e| e.ln()).collect();
        let ly: Vec<f64> = kept_err.iter().map(|e| e.ln()).collect();
        let line = linear_fit(&lx, &ly).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "need at least two usable step sizes for an order fit, have {}",
                kept_eps.len()
            ))
        })?;
        Ok(ErrorOrderFit {
            epsilons: kept_eps,
            abs_errors: kept_err,
            slope: line.slope,
            intercept: line.intercept,
            r_squared: line.r_squared,
            divergent,
            below_noise,
        })
    }

    /// CSV rows `epsilon,abs_error`, then a `# slope=…` trailer comment.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().flexible(true).from_writer(w);
        out.write_record(["epsilon", "abs_error"])?;
        for (e, a) in self.epsilons.iter().zip(&self.abs_errors) {
            out.write_record([e.to_string(), a.to_string()])?;
        }
        out.write_record([format!(
            "# slope={} intercept={} r_squared={}",
            self.slope, self.intercept, self.r_squared
        )])?;
        out.flush()?;
        Ok(())
    }
}

/// Step sizes `10⁻⁴·2^k` for `k = k_start, …, k_start + count − 1`.
pub fn epsilon_ladder(k_start: i32, count: usize) -> Vec<f64> {
    (0..count as i32).map(|k| 1e-4 * f64::powi(2.0, k_start + k)).collect()
}

/// First exponent of the default ladder. Network posteriors with
/// `noise_scale = 0.1` are stiff enough that the smooth `O(ε³)` term
/// overtakes the kink term above `ε ≈ 2·10⁻³`, so the ladder starts below
/// `10⁻⁴`.
pub const DEFAULT_LADDER_START: i32 = -3;

/// `epsilon_ladder(DEFAULT_LADDER_START, count)`.
pub fn default_epsilons(count: usize) -> Vec<f64> {
    epsilon_ladder(DEFAULT_LADDER_START, count)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum LocalRegime {
    /// One step from the anchor as given.
    Smooth,
    /// For each `ε` the start is moved back along the anchor momentum so the
    /// drift crosses the first surface ahead of the anchor at time
    /// `fraction·ε`. `search_horizon` bounds the drift time searched for that
    /// surface.
    ForcedCrossing { fraction: f64, search_horizon: f64 },
}

impl LocalRegime {
    pub fn forced(fraction: f64) -> Self {
        LocalRegime::ForcedCrossing {
            fraction,
            search_horizon: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalErrorSample {
    pub step_size: f64,
    pub measured: f64,
    pub predicted: f64,
    pub n_crossings: usize,
    /// `ε_1/ε` of the first crossing, if any.
    pub crossing_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalErrorStudy {
    pub samples: Vec<LocalErrorSample>,
    /// Order of `|ΔH|`.
    pub measured: ErrorOrderFit,
    /// Order of `|ΔH − prediction|`; `None` when fewer than two residuals
    /// clear [`NOISE_FLOOR`], i.e. the prediction is exact.
    pub residual: Option<ErrorOrderFit>,
}

/// Measures single-step energy errors over `epsilons` and fits their order.
pub fn local_error_order<P: Potential + ?Sized>(
    potential: &P,
    anchor: &PhasePoint,
    regime: LocalRegime,
    epsilons: &[f64],
) -> Result<LocalErrorStudy> {
    let mut samples = Vec::with_capacity(epsilons.len());
    let mut divergent = Vec::new();
    for &eps in epsilons {
        let start = match regime {
            LocalRegime::Smooth => anchor.clone(),
            LocalRegime::ForcedCrossing {
                fraction,
                search_horizon,
            } => forced_start(potential, anchor, eps, fraction, search_horizon)?,
        };
        let (_, rec) = leapfrog_step(potential, &start, eps);
        if rec.divergent {
            divergent.push(eps);
            continue;
        }
        samples.push(LocalErrorSample {
            step_size: eps,
            measured: rec.delta_h,
            predicted: predict_local_error(&rec),
            n_crossings: rec.crossings.len(),
            crossing_fraction: rec.crossings.first().map(|c| c.epsilon_i / eps),
        });
    }
    let eps: Vec<f64> = samples.iter().map(|s| s.step_size).collect();
    let measured: Vec<f64> = samples.iter().map(|s| s.measured).collect();
    let residual: Vec<f64> = samples.iter().map(|s| s.measured - s.predicted).collect();
    Ok(LocalErrorStudy {
        measured: ErrorOrderFit::fit(&eps, &measured, divergent.clone())?,
        residual: ErrorOrderFit::fit(&eps, &residual, divergent).ok(),
        samples,
    })
}

/// Places a start `q0 = z − s·p` behind the surface point `z` found ahead of
/// the anchor, with `s` solved so that `q0 + fraction·ε·p½(q0)` lies on the
/// surface.
fn forced_start<P: Potential + ?Sized>(
    potential: &P,
    anchor: &PhasePoint,
    eps: f64,
    fraction: f64,
    horizon: f64,
) -> Result<PhasePoint> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "crossing fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let hit = *potential
        .locate_crossings(&anchor.q, &anchor.p, horizon)
        .first()
        .ok_or(Error::NoCrossing)?;
    let z: Vec<f64> = anchor
        .q
        .iter()
        .zip(&anchor.p)
        .map(|(q, p)| q + hit.time * p)
        .collect();
    let before = hit.before;
    let probe = |s: f64| -> (f64, Vec<f64>) {
        let q0: Vec<f64> = z.iter().zip(&anchor.p).map(|(a, p)| a - s * p).collect();
        let g = potential.gradient(&q0);
        let at: Vec<f64> = q0
            .iter()
            .zip(anchor.p.iter().zip(&g))
            .map(|(q, (p, g))| q + fraction * eps * (p - 0.5 * eps * g))
            .collect();
        let f = potential
            .surface_value(&hit.surface, &at)
            .expect("surface reported by locate_crossings");
        (f, q0)
    };
    let on_before = |f: f64| crate::potential::Sign::of(f) == before;

    // bracket: `lo` on the far side (or on the surface), `hi` on the near side
    let mut hi = 2.0 * fraction * eps;
    let mut tries = 0;
    while !on_before(probe(hi).0) {
        hi *= 2.0;
        tries += 1;
        if tries > 60 {
            return Err(Error::NoCrossing);
        }
    }
    let mut lo = 0.0;
    tries = 0;
    while on_before(probe(lo).0) {
        lo -= hi;
        tries += 1;
        if tries > 60 {
            return Err(Error::NoCrossing);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if on_before(probe(mid).0) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(PhasePoint::new(probe(hi).1, anchor.p.clone()))
}

/// Fits the order of the total energy error of fixed-travel-time
/// trajectories (`L = round(T/ε)`) from one start. Divergent runs are
/// excluded and listed in the fit.
pub fn global_error_order<P: Potential + ?Sized>(
    potential: &P,
    start: &PhasePoint,
    travel_time: f64,
    epsilons: &[f64],
) -> Result<ErrorOrderFit> {
    global_error_order_multi(potential, std::slice::from_ref(start), travel_time, epsilons)
}

/// As [`global_error_order`], averaging `|ΔH|` over several starts at each
/// step size. A step size is excluded if any start diverges.
pub fn global_error_order_multi<P: Potential + ?Sized>(
    potential: &P,
    starts: &[PhasePoint],
    travel_time: f64,
    epsilons: &[f64],
) -> Result<ErrorOrderFit> {
    let mut kept = Vec::new();
    let mut errors = Vec::new();
    let mut divergent = Vec::new();
    for &eps in epsilons {
        let n_steps = ((travel_time / eps).round() as usize).max(1);
        let mut total = 0.0;
        let mut diverged = false;
        for s in starts {
            let prop = simulate(potential, s, eps, n_steps, DEFAULT_DIVERGENCE_CAP);
            if prop.divergent {
                diverged = true;
                break;
            }
            total += prop.delta_h.abs();
        }
        if diverged {
            divergent.push(eps);
        } else {
            kept.push(eps);
            errors.push(total / starts.len() as f64);
        }
    }
    ErrorOrderFit::fit(&kept, &errors, divergent)
}

/// Number of surface crossings along a trajectory.
pub fn count_crossings<P: Potential + ?Sized>(
    potential: &P,
    start: &PhasePoint,
    step_size: f64,
    n_steps: usize,
) -> usize {
    let opts = IntegratorOptions {
        track_crossings: true,
        ..IntegratorOptions::default()
    };
    trajectory_with(potential, start, step_size, n_steps, &opts).n_crossings()
}

/// Distribution of the crossing time of single-crossing leapfrog steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingTimeTable {
    pub step_size: f64,
    pub a_grid: Vec<f64>,
    /// Fraction of single-crossing steps with `ε_1/ε ∈ ((1−a)/2, (1+a)/2)`.
    pub fractions: Vec<f64>,
    pub n_states: usize,
    pub n_single: usize,
    pub n_multiple: usize,
    /// States discarded because `‖p‖` exceeded the momentum bound.
    pub n_discarded: usize,
}

impl CrossingTimeTable {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["a", "fraction"])?;
        for (a, f) in self.a_grid.iter().zip(&self.fractions) {
            out.write_record([a.to_string(), f.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingTimeConfig {
    pub step_size: f64,
    pub n_samples: usize,
    pub a_grid: Vec<f64>,
    /// `M`: states with `‖p‖ > M` are discarded.
    pub max_momentum: f64,
    pub seed: u64,
}

/// Independent RNG streams the sample loop is split into. Fixed so results
/// do not depend on the worker count.
const STREAMS: usize = 16;

/// Draws `n_samples` states from `sampler`, takes one leapfrog half-kick and
/// locates the drift crossings, and tabulates where single crossings fall.
pub fn crossing_time_stats<P, S>(potential: &P, sampler: S, config: &CrossingTimeConfig) -> CrossingTimeTable
where
    P: Potential + ?Sized,
    S: Fn(&mut ChaCha8Rng) -> PhasePoint + Sync,
{
    let eps = config.step_size;
    let n = config.n_samples;
    let per_stream: Vec<(Vec<f64>, usize, usize)> = (0..STREAMS)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from_seed(derive_seed(config.seed, &[c as u64]));
            let count = n / STREAMS + usize::from(c < n % STREAMS);
            let mut ratios = Vec::new();
            let (mut multiple, mut discarded) = (0, 0);
            for _ in 0..count {
                let s = sampler(&mut rng);
                if crate::stats::norm(&s.p) > config.max_momentum {
                    discarded += 1;
                    continue;
                }
                let g = potential.gradient(&s.q);
                let p_half: Vec<f64> = s.p.iter().zip(&g).map(|(p, g)| p - 0.5 * eps * g).collect();
                let hits = potential.locate_crossings(&s.q, &p_half, eps);
                match hits.len() {
                    0 => {}
                    1 => ratios.push(hits[0].time / eps),
                    _ => multiple += 1,
                }
            }
            (ratios, multiple, discarded)
        })
        .collect();

    let mut ratios = Vec::new();
    let (mut n_multiple, mut n_discarded) = (0, 0);
    for (r, m, d) in per_stream {
        ratios.extend(r);
        n_multiple += m;
        n_discarded += d;
    }
    let fractions = config
        .a_grid
        .iter()
        .map(|&a| {
            if ratios.is_empty() {
                return 0.0;
            }
            let (lo, hi) = ((1.0 - a) / 2.0, (1.0 + a) / 2.0);
            ratios.iter().filter(|&&r| r > lo && r < hi).count() as f64 / ratios.len() as f64
        })
        .collect();
    CrossingTimeTable {
        step_size: eps,
        a_grid: config.a_grid.clone(),
        fractions,
        n_states: n,
        n_single: ratios.len(),
        n_multiple,
        n_discarded,
    }
}
