//! The potential-energy abstraction driven by the integrator.
//!
//! A potential exposes `U(q)` and `∂U/∂q`, plus, when it is only piecewise
//! smooth, the surfaces on which the gradient jumps. The integrator asks for
//! surface hits along each drift segment and for the one-sided gradients at
//! every hit.

use serde::{Deserialize, Serialize};

/// Sign of a surface function (or of a neuron's pre-activation).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(i8)]
pub enum Sign {
    Neg = -1,
    Zero = 0,
    Pos = 1,
}

impl Sign {
    pub fn of(v: f64) -> Sign {
        if v > 0.0 {
            Sign::Pos
        } else if v < 0.0 {
            Sign::Neg
        } else {
            Sign::Zero
        }
    }

    pub fn flipped(self) -> Sign {
        match self {
            Sign::Neg => Sign::Pos,
            Sign::Pos => Sign::Neg,
            Sign::Zero => Sign::Zero,
        }
    }
}

/// Identifies one non-differentiability surface.
///
/// The derived ordering is the tie-break for crossings that happen at the
/// same drift time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurfaceId {
    /// Zero set of the pre-activation of hidden `neuron` in hidden layer
    /// `layer` (1-based) evaluated on data point `point`.
    Neuron {
        layer: usize,
        neuron: usize,
        point: usize,
    },
    /// `q[coord] = breakpoints[breakpoint]` for a separable proxy target.
    Breakpoint { coord: usize, breakpoint: usize },
}

/// A surface incidence along a drift segment `q0 + t·v`, before gradients
/// are attached.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceHit {
    pub time: f64,
    pub surface: SurfaceId,
    /// Sign of the surface function just before the hit.
    pub before: Sign,
    /// Sign just after.
    pub after: Sign,
}

/// One crossing of a drift segment with a surface, with the gradients of the
/// two adjacent smooth pieces evaluated at the crossing point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingEvent {
    /// Drift time of the crossing, in `(0, ε)`.
    pub epsilon_i: f64,
    pub z: Vec<f64>,
    pub surface: SurfaceId,
    pub grad_before: Vec<f64>,
    pub grad_after: Vec<f64>,
    /// `grad_after − grad_before`, componentwise.
    pub jump: Vec<f64>,
}

impl CrossingEvent {
    pub fn new(
        epsilon_i: f64,
        z: Vec<f64>,
        surface: SurfaceId,
        grad_before: Vec<f64>,
        grad_after: Vec<f64>,
    ) -> Self {
        let jump = grad_after
            .iter()
            .zip(&grad_before)
            .map(|(a, b)| a - b)
            .collect();
        CrossingEvent {
            epsilon_i,
            z,
            surface,
            grad_before,
            grad_after,
            jump,
        }
    }
}

pub fn sort_hits(hits: &mut [SurfaceHit]) {
    hits.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then_with(|| a.surface.cmp(&b.surface))
    });
}

/// A potential energy `U` on `R^d`.
///
/// Implementations must be deterministic: the same `q` always yields the same
/// value and gradient, bit for bit, including on non-differentiability
/// surfaces. Reversibility of the leapfrog map relies on it.
pub trait Potential: Sync {
    fn dim(&self) -> usize;

    /// Writes `∂U/∂q` into `grad` and returns `U(q)`.
    fn value_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> f64;

    fn value(&self, q: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.value_and_gradient(q, &mut g)
    }

    fn gradient(&self, q: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.value_and_gradient(q, &mut g);
        g
    }

    /// `U(to) − U(from)`. Implementations may override this with a
    /// cancellation-free formula.
    fn value_difference(&self, from: &[f64], to: &[f64]) -> f64 {
        self.value(to) - self.value(from)
    }

    /// Surface hits of the segment `q0 + t·direction`, `t ∈ (0, horizon)`,
    /// sorted by time then by surface. Smooth potentials have none.
    fn locate_crossings(&self, _q0: &[f64], _direction: &[f64], _horizon: f64) -> Vec<SurfaceHit> {
        Vec::new()
    }

    /// Gradients of the smooth pieces before and after `hit`, evaluated at
    /// the crossing point `z`.
    fn one_sided_gradients(&self, z: &[f64], _hit: &SurfaceHit) -> (Vec<f64>, Vec<f64>) {
        let g = self.gradient(z);
        (g.clone(), g)
    }

    /// Value of the function whose zero set is `surface`, if this potential
    /// owns such a surface.
    fn surface_value(&self, _surface: &SurfaceId, _q: &[f64]) -> Option<f64> {
        None
    }
}

impl<P: Potential + ?Sized> Potential for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        (**self).value_and_gradient(q, grad)
    }
    fn value(&self, q: &[f64]) -> f64 {
        (**self).value(q)
    }
    fn value_difference(&self, from: &[f64], to: &[f64]) -> f64 {
        (**self).value_difference(from, to)
    }
    fn locate_crossings(&self, q0: &[f64], direction: &[f64], horizon: f64) -> Vec<SurfaceHit> {
        (**self).locate_crossings(q0, direction, horizon)
    }
    fn one_sided_gradients(&self, z: &[f64], hit: &SurfaceHit) -> (Vec<f64>, Vec<f64>) {
        (**self).one_sided_gradients(z, hit)
    }
    fn surface_value(&self, surface: &SurfaceId, q: &[f64]) -> Option<f64> {
        (**self).surface_value(surface, q)
    }
}

/// `U ≡ 0`: the free particle.
#[derive(Clone, Copy, Debug)]
pub struct Flat {
    pub dim: usize,
}

impl Potential for Flat {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value_and_gradient(&self, _q: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        0.0
    }
}

/// `U(q) = ‖q‖²/2`: the isotropic harmonic oscillator / standard normal target.
#[derive(Clone, Copy, Debug)]
pub struct Harmonic {
    pub dim: usize,
}

impl Potential for Harmonic {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        grad.copy_from_slice(q);
        0.5 * q.iter().map(|x| x * x).sum::<f64>()
    }
    fn value_difference(&self, from: &[f64], to: &[f64]) -> f64 {
        0.5 * from
            .iter()
            .zip(to)
            .map(|(a, b)| (b - a) * (b + a))
            .sum::<f64>()
    }
}
