//! Metropolis-adjusted HMC chains.
//!
//! RNG stream order per iteration, fixed: `d` standard-normal momentum draws,
//! then exactly one uniform for the accept test (drawn even when the
//! proposal diverged). Momentum negation at the end of the trajectory is
//! omitted since the kinetic energy is even in `p`.

use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bnn::{forward, write_params_binary, PosteriorSpec};
use crate::error::{check_len, Error, Result};
use crate::potential::Potential;
use crate::stats::rng_from_seed;
use crate::symplectic::{simulate, PhasePoint, DEFAULT_DIVERGENCE_CAP};

/// Trajectory length, as a step count or a travel time `T` with
/// `L = round(T/ε)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryLength {
    Steps(usize),
    TravelTime(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmcConfig {
    pub step_size: f64,
    pub length: TrajectoryLength,
    pub n_samples: usize,
    pub burn_in: usize,
    pub seed: u64,
    #[serde(default = "default_cap")]
    pub divergence_cap: f64,
}

fn default_cap() -> f64 {
    DEFAULT_DIVERGENCE_CAP
}

impl HmcConfig {
    pub fn with_steps(step_size: f64, n_steps: usize, n_samples: usize, burn_in: usize, seed: u64) -> Self {
        HmcConfig {
            step_size,
            length: TrajectoryLength::Steps(n_steps),
            n_samples,
            burn_in,
            seed,
            divergence_cap: DEFAULT_DIVERGENCE_CAP,
        }
    }

    pub fn with_travel_time(step_size: f64, travel_time: f64, n_samples: usize, burn_in: usize, seed: u64) -> Self {
        HmcConfig {
            length: TrajectoryLength::TravelTime(travel_time),
            ..Self::with_steps(step_size, 1, n_samples, burn_in, seed)
        }
    }

    pub fn n_steps(&self) -> usize {
        match self.length {
            TrajectoryLength::Steps(l) => l,
            TrajectoryLength::TravelTime(t) => (t / self.step_size).round() as usize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig(format!("step size must be positive, got {}", self.step_size)));
        }
        if let TrajectoryLength::TravelTime(t) = self.length {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidConfig(format!("travel time must be positive, got {t}")));
            }
        }
        if self.n_steps() == 0 {
            return Err(Error::InvalidConfig("trajectory must have at least one step".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
        }
        if !(self.divergence_cap > 0.0) {
            return Err(Error::InvalidConfig("divergence cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    /// Post burn-in positions, one per iteration (repeats on rejection).
    pub samples: Vec<Vec<f64>>,
    /// Accepted proposals over all iterations, burn-in included.
    pub acceptance_rate: f64,
    pub n_accepted: usize,
    pub n_divergent: usize,
    /// ΔH of every proposal; `+∞` marks a divergent one.
    pub delta_h: Vec<f64>,
    pub duration: Duration,
}

/// Compact JSON summary of a chain, without the samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub n_samples: usize,
    pub n_proposals: usize,
    pub acceptance_rate: f64,
    pub n_accepted: usize,
    pub n_divergent: usize,
    /// Mean `|ΔH|` over non-divergent proposals.
    pub mean_abs_delta_h: Option<f64>,
    pub duration_secs: f64,
}

impl ChainResult {
    pub fn n_proposals(&self) -> usize {
        self.delta_h.len()
    }

    pub fn mean_abs_delta_h(&self) -> Option<f64> {
        let finite: Vec<f64> = self.delta_h.iter().filter(|d| d.is_finite()).map(|d| d.abs()).collect();
        (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64)
    }

    pub fn summary(&self) -> ChainSummary {
        ChainSummary {
            n_samples: self.samples.len(),
            n_proposals: self.n_proposals(),
            acceptance_rate: self.acceptance_rate,
            n_accepted: self.n_accepted,
            n_divergent: self.n_divergent,
            mean_abs_delta_h: self.mean_abs_delta_h(),
            duration_secs: self.duration.as_secs_f64(),
        }
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary())?)
    }

    /// Concatenated binary parameter vectors, one per sample.
    pub fn write_samples<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for s in &self.samples {
            write_params_binary(&mut w, s)?;
        }
        Ok(())
    }
}

/// `min(1, e^{−ΔH})`; zero for non-finite `ΔH`.
pub fn accept_probability(delta_h: f64) -> f64 {
    if !delta_h.is_finite() {
        0.0
    } else if delta_h <= 0.0 {
        1.0
    } else {
        (-delta_h).exp()
    }
}

pub fn hmc_chain<P: Potential + ?Sized>(potential: &P, init: &[f64], config: &HmcConfig) -> Result<ChainResult> {
    config.validate()?;
    let d = potential.dim();
    check_len("initial position", d, init.len())?;
    if init.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("initial position is not finite".into()));
    }
    let started = Instant::now();
    let mut rng = rng_from_seed(config.seed);
    let n_steps = config.n_steps();
    let total = config.n_samples + config.burn_in;

    let mut q = init.to_vec();
    let mut samples = Vec::with_capacity(config.n_samples);
    let mut delta_h = Vec::with_capacity(total);
    let (mut n_accepted, mut n_divergent) = (0, 0);
    for it in 0..total {
        let p: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let prop = simulate(potential, &PhasePoint::new(q.clone(), p), config.step_size, n_steps, config.divergence_cap);
        let u: f64 = rng.random();
        if prop.divergent {
            n_divergent += 1;
            delta_h.push(f64::INFINITY);
        } else {
            delta_h.push(prop.delta_h);
            if u < accept_probability(prop.delta_h) {
                n_accepted += 1;
                q = prop.state.q;
            }
        }
        if it >= config.burn_in {
            samples.push(q.clone());
        }
    }
    Ok(ChainResult {
        samples,
        acceptance_rate: n_accepted as f64 / total as f64,
        n_accepted,
        n_divergent,
        delta_h,
        duration: started.elapsed(),
    })
}

/// Predictive mean over samples, plus each sample's output.
pub fn posterior_predict(spec: &PosteriorSpec, samples: &[Vec<f64>], x: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("posterior_predict needs at least one sample".into()));
    }
    let outputs = samples
        .iter()
        .map(|q| forward(spec.arch(), q, x))
        .collect::<Result<Vec<_>>>()?;
    let mut mean = vec![0.0; spec.arch().output_dim()];
    for o in &outputs {
        for (m, v) in mean.iter_mut().zip(o) {
            *m += v;
        }
    }
    let n = outputs.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok((mean, outputs))
}

/// Mean squared error over all coordinates.
pub fn mse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_len("targets", predictions.len(), targets.len())?;
    if predictions.is_empty() {
        return Err(Error::InvalidConfig("mse of empty vectors".into()));
    }
    let s: f64 = predictions.iter().zip(targets).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / predictions.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{Flat, Harmonic};

    #[test]
    fn accept_probability_cases() {
        assert_eq!(accept_probability(0.0), 1.0);
        assert_eq!(accept_probability(-5.0), 1.0);
        assert!((accept_probability(0.9) - 0.40657).abs() < 1e-5);
        assert_eq!(accept_probability(f64::NAN), 0.0);
        assert_eq!(accept_probability(f64::INFINITY), 0.0);
    }

    #[test]
    fn flat_target_accepts_everything() {
        let cfg = HmcConfig::with_steps(0.1, 10, 50, 10, 3);
        let r = hmc_chain(&Flat { dim: 3 }, &[0.0; 3], &cfg).unwrap();
        assert_eq!(r.acceptance_rate, 1.0);
        assert!(r.delta_h.iter().all(|&d| d == 0.0));
        assert_eq!(r.samples.len(), 50);
    }

    #[test]
    fn rejected_proposals_repeat_position() {
        let cfg = HmcConfig::with_steps(1.9, 5, 200, 0, 11);
        let r = hmc_chain(&Harmonic { dim: 4 }, &[1.0; 4], &cfg).unwrap();
        assert!(r.n_accepted < 200);
        let repeats = r.samples.windows(2).filter(|w| w[0] == w[1]).count();
        assert_eq!(repeats, 200 - r.n_accepted - usize::from(r.samples[0] == vec![1.0; 4]));
    }

    #[test]
    fn config_validation() {
        assert!(HmcConfig::with_steps(0.0, 1, 1, 0, 0).validate().is_err());
        assert!(HmcConfig::with_steps(0.1, 0, 1, 0, 0).validate().is_err());
        assert!(HmcConfig::with_steps(0.1, 1, 0, 0, 0).validate().is_err());
        assert_eq!(HmcConfig::with_travel_time(0.001, 0.1, 1, 0, 0).n_steps(), 100);
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((mse(&[1.1, 2.1], &[1.0, 2.0]).unwrap() - 0.01).abs() < 1e-15);
        assert!((mse(&[0.0, 1.0, 3.0], &[1.0, 1.0, 1.0]).unwrap() - 5.0 / 3.0).abs() < 1e-15);
    }
}
