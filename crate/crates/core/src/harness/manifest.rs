use serde::{Deserialize, Serialize};

use crate::bnn::Activation;
use crate::error::{Error, Result};
use crate::stats::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Grid,
    EfficiencySweep,
    DimSweep,
    ErrorOrder,
    ProxyScaling,
    TuningCurves,
    CrossingStats,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Grid => "grid",
            ExperimentKind::EfficiencySweep => "efficiency-sweep",
            ExperimentKind::DimSweep => "dim-sweep",
            ExperimentKind::ErrorOrder => "error-order",
            ExperimentKind::ProxyScaling => "proxy-scaling",
            ExperimentKind::TuningCurves => "tuning-curves",
            ExperimentKind::CrossingStats => "crossing-stats",
        }
    }
}

/// How a chain's starting position is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    /// A draw from the prior.
    #[default]
    Prior,
    /// A prior draw moved by a short warm-up chain (`warmup_iterations`
    /// proposals of `warmup_steps` steps of size `warmup_step_size`),
    /// whose last state becomes the start.
    Warm,
}

/// A JSON experiment description. Every field except `kind` is optional;
/// unset fields take the defaults of the kind (see the accessor methods).
///
/// ```json
/// { "kind": "grid", "activations": ["sigmoid", "relu"],
///   "epsilons": [0.0005, 0.0025], "steps": [200, 1000],
///   "n_samples": 300, "burn_in": 50, "repeats": 3, "seed": 7 }
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    pub activations: Option<Vec<Activation>>,
    pub epsilons: Option<Vec<f64>>,
    /// Leapfrog step counts `L`. Ignored when `travel_time` is set.
    pub steps: Option<Vec<usize>>,
    /// Fixed `T`, with `L = round(T/ε)` per step size.
    pub travel_time: Option<f64>,
    /// Hidden-layer widths of each architecture (input and output are 1).
    pub architectures: Option<Vec<Vec<usize>>>,
    pub n_samples: Option<usize>,
    pub burn_in: Option<usize>,
    pub repeats: Option<usize>,
    pub n_data: Option<usize>,
    pub n_test: Option<usize>,
    pub prior_scale: Option<f64>,
    pub noise_scale: Option<f64>,
    pub leaky_slope: Option<f64>,
    pub zero_subderivative: Option<f64>,
    pub divergence_cap: Option<f64>,
    pub init: Option<InitKind>,
    pub warmup_step_size: Option<f64>,
    pub warmup_steps: Option<usize>,
    pub warmup_iterations: Option<usize>,
    /// Crossing fraction `ε_1/ε` for forced-crossing error fits.
    pub crossing_fraction: Option<f64>,
    pub l: Option<f64>,
    pub dims: Option<Vec<usize>>,
    pub dim_exponent: Option<f64>,
    pub orders: Option<Vec<u32>>,
    pub sigmas: Option<Vec<f64>>,
    pub a_grid: Option<Vec<f64>>,
    pub max_momentum: Option<f64>,
    /// Output file name, relative to the output directory.
    pub output: Option<String>,
}

impl ExperimentManifest {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentManifest {
            kind,
            seed: 0,
            activations: None,
            epsilons: None,
            steps: None,
            travel_time: None,
            architectures: None,
            n_samples: None,
            burn_in: None,
            repeats: None,
            n_data: None,
            n_test: None,
            prior_scale: None,
            noise_scale: None,
            leaky_slope: None,
            zero_subderivative: None,
            divergence_cap: None,
            init: None,
            warmup_step_size: None,
            warmup_steps: None,
            warmup_iterations: None,
            crossing_fraction: None,
            l: None,
            dims: None,
            dim_exponent: None,
            orders: None,
            sigmas: None,
            a_grid: None,
            max_momentum: None,
            output: None,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: Option<f64>| match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => {
                Err(Error::InvalidConfig(format!("{name} must be positive, got {x}")))
            }
            _ => Ok(()),
        };
        positive("travel_time", self.travel_time)?;
        positive("prior_scale", self.prior_scale)?;
        positive("noise_scale", self.noise_scale)?;
        positive("l", self.l)?;
        positive("warmup_step_size", self.warmup_step_size)?;
        if self.epsilons().iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidConfig("step sizes must be positive".into()));
        }
        if self.travel_time.is_none() && self.steps().contains(&0) {
            return Err(Error::InvalidConfig("step counts must be at least 1".into()));
        }
        if self.architectures().iter().any(|a| a.is_empty() || a.contains(&0)) {
            return Err(Error::InvalidConfig("architectures need nonzero hidden widths".into()));
        }
        if self.n_samples() == 0 || self.repeats() == 0 {
            return Err(Error::InvalidConfig("n_samples and repeats must be at least 1".into()));
        }
        Ok(())
    }

    /// Seed of one (cell, repeat) chain.
    pub fn cell_seed(&self, cell: usize, repeat: usize) -> u64 {
        derive_seed(self.seed, &[cell as u64, repeat as u64])
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.activations.clone().unwrap_or_else(|| match self.kind {
            ExperimentKind::ErrorOrder => vec![Activation::Sigmoid, Activation::Relu],
            _ => vec![Activation::Sigmoid, Activation::Relu, Activation::LeakyRelu],
        })
    }

    pub fn epsilons(&self) -> Vec<f64> {
        self.epsilons.clone().unwrap_or_else(|| match self.kind {
            ExperimentKind::EfficiencySweep => (1..=8).map(|k| 0.0005 * k as f64).collect(),
            ExperimentKind::DimSweep => vec![0.001],
            ExperimentKind::ErrorOrder => crate::analysis::default_epsilons(8),
            ExperimentKind::CrossingStats => vec![0.1],
            _ => (1..=5).map(|k| 0.0005 * k as f64).collect(),
        })
    }

    pub fn steps(&self) -> Vec<usize> {
        self.steps.clone().unwrap_or_else(|| match self.kind {
            ExperimentKind::DimSweep => vec![200],
            _ => (1..=5).map(|k| 200 * k).collect(),
        })
    }

    /// `T`: set explicitly, or 0.1 for efficiency sweeps and error-order
    /// runs.
    pub fn travel_time(&self) -> Option<f64> {
        self.travel_time.or(match self.kind {
            ExperimentKind::EfficiencySweep | ExperimentKind::ErrorOrder => Some(0.1),
            ExperimentKind::ProxyScaling => Some(1.0),
            _ => None,
        })
    }

    pub fn architectures(&self) -> Vec<Vec<usize>> {
        self.architectures.clone().unwrap_or_else(|| match self.kind {
            ExperimentKind::DimSweep => {
                let mut v: Vec<Vec<usize>> = [10, 50, 100, 200, 400].iter().map(|&w| vec![w]).collect();
                v.extend((2..=4).map(|depth| vec![20; depth]));
                v
            }
            ExperimentKind::ErrorOrder => vec![vec![5]],
            _ => vec![vec![50]],
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples.unwrap_or(match self.kind {
            ExperimentKind::CrossingStats => 100_000,
            _ => 2000,
        })
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(100)
    }

    pub fn repeats(&self) -> usize {
        self.repeats.unwrap_or(5)
    }

    pub fn n_data(&self) -> usize {
        self.n_data.unwrap_or(match self.kind {
            ExperimentKind::ErrorOrder => 5,
            _ => 100,
        })
    }

    pub fn n_test(&self) -> usize {
        self.n_test.unwrap_or(100)
    }

    pub fn prior_scale(&self) -> f64 {
        self.prior_scale.unwrap_or(crate::bnn::DEFAULT_PRIOR_SCALE)
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale.unwrap_or(crate::bnn::DEFAULT_NOISE_SCALE)
    }

    pub fn divergence_cap(&self) -> f64 {
        self.divergence_cap.unwrap_or(crate::symplectic::DEFAULT_DIVERGENCE_CAP)
    }

    pub fn init(&self) -> InitKind {
        self.init.unwrap_or_default()
    }

    pub fn warmup_step_size(&self) -> f64 {
        self.warmup_step_size.unwrap_or(0.0005)
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup_steps.unwrap_or(100)
    }

    pub fn warmup_iterations(&self) -> usize {
        self.warmup_iterations.unwrap_or(50)
    }

    pub fn crossing_fraction(&self) -> f64 {
        self.crossing_fraction.unwrap_or(crate::analysis::DEFAULT_CROSSING_FRACTION)
    }

    pub fn l(&self) -> f64 {
        self.l.unwrap_or(1.0)
    }

    pub fn dims(&self) -> Vec<usize> {
        self.dims.clone().unwrap_or_else(|| vec![16, 64, 256, 1024])
    }

    pub fn dim_exponent(&self) -> f64 {
        self.dim_exponent.unwrap_or(0.5)
    }

    pub fn orders(&self) -> Vec<u32> {
        self.orders.clone().unwrap_or_else(|| vec![1, 2])
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.sigmas.clone().unwrap_or_else(|| vec![1.0])
    }

    pub fn a_grid(&self) -> Vec<f64> {
        self.a_grid
            .clone()
            .unwrap_or_else(|| (0..=10).map(|k| k as f64 / 10.0).collect())
    }

    pub fn max_momentum(&self) -> f64 {
        self.max_momentum.unwrap_or(f64::INFINITY)
    }

    pub fn output(&self) -> String {
        self.output
            .clone()
            .unwrap_or_else(|| format!("{}.csv", self.kind.name()))
    }
}
