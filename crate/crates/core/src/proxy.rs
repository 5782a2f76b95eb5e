//! The i.i.d. proxy model: a product of `d` one-dimensional components,
//! with its limiting acceptance and efficiency curves.
//!
//! Under step size `ε = l·d^{−1/2}` and fixed travel time, the total energy
//! error of a proposal on a piecewise-affine product target tends to
//! `N(−Σl²/2·…, l²Σ)` and the acceptance to `2Φ(−l√Σ/2)`. For a smooth
//! target the step size must scale as `d^{−1/4}` instead and the limit is
//! `2Φ(−l²√Σ/2)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::{Potential, Sign, SurfaceHit, SurfaceId};
use crate::sampler::accept_probability;
use crate::stats::{derive_seed, rng_from_seed};
use crate::symplectic::{simulate, PhasePoint, DEFAULT_DIVERGENCE_CAP};

/// One coordinate of a product target, with density `∝ exp(−V)`.
pub trait Component: Sync {
    fn value(&self, x: f64) -> f64;
    /// `V'(x)`, with the configured subgradient on breakpoints.
    fn derivative(&self, x: f64) -> f64;

    fn value_difference(&self, from: f64, to: f64) -> f64 {
        self.value(to) - self.value(from)
    }

    fn breakpoints(&self) -> &[f64] {
        &[]
    }

    /// Derivative on the piece left (`Neg`) or right (`Pos`) of breakpoint
    /// `k`.
    fn side_derivative(&self, k: usize, side: Sign) -> f64 {
        let _ = side;
        self.derivative(self.breakpoints()[k])
    }

    /// Exact draw from `exp(−V)/Z`.
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64;

    fn cdf(&self, x: f64) -> f64;
}

/// `V(x) = x²/2`, the smooth control.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent;

impl Component for GaussianComponent {
    fn value(&self, x: f64) -> f64 {
        0.5 * x * x
    }
    fn derivative(&self, x: f64) -> f64 {
        x
    }
    fn value_difference(&self, from: f64, to: f64) -> f64 {
        0.5 * (to - from) * (to + from)
    }
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        rng.sample(StandardNormal)
    }
    fn cdf(&self, x: f64) -> f64 {
        crate::stats::normal_cdf(x)
    }
}

/// Continuous piecewise-affine `V` with `V(0) = 0`.
///
/// `slopes[k]` applies left of `breakpoints[k]`; the last slope applies
/// right of the last breakpoint. At a breakpoint the derivative is the
/// subgradient 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PiecewiseDoc", into = "PiecewiseDoc")]
pub struct PiecewiseAffinePotential {
    breakpoints: Vec<f64>,
    slopes: Vec<f64>,
    /// `V(breakpoints[k])`.
    knot_values: Vec<f64>,
    /// Unnormalised mass of each piece, when `exp(−V)` is integrable.
    masses: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct PiecewiseDoc {
    breakpoints: Vec<f64>,
    slopes: Vec<f64>,
}

impl TryFrom<PiecewiseDoc> for PiecewiseAffinePotential {
    type Error = Error;
    fn try_from(d: PiecewiseDoc) -> Result<Self> {
        Self::new(d.breakpoints, d.slopes)
    }
}

impl From<PiecewiseAffinePotential> for PiecewiseDoc {
    fn from(p: PiecewiseAffinePotential) -> Self {
        PiecewiseDoc {
            breakpoints: p.breakpoints,
            slopes: p.slopes,
        }
    }
}

impl Default for PiecewiseAffinePotential {
    fn default() -> Self {
        Self::laplace()
    }
}

impl PiecewiseAffinePotential {
    pub fn new(breakpoints: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        if slopes.len() != breakpoints.len() + 1 {
            return Err(Error::InvalidConfig(format!(
                "{} breakpoints need {} slopes, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                slopes.len()
            )));
        }
        if breakpoints.iter().chain(&slopes).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("breakpoints and slopes must be finite".into()));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("breakpoints must be strictly increasing".into()));
        }
        let mut p = PiecewiseAffinePotential {
            knot_values: Vec::new(),
            masses: None,
            breakpoints,
            slopes,
        };
        p.knot_values = p.breakpoints.iter().map(|&b| p.integrate(0.0, b)).collect();
        p.masses = p.piece_masses();
        Ok(p)
    }

    /// `V(x) = |x|`.
    pub fn laplace() -> Self {
        Self::new(vec![0.0], vec![-1.0, 1.0]).expect("valid Laplace target")
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn is_normalizable(&self) -> bool {
        self.masses.is_some()
    }

    fn piece_of(&self, x: f64) -> usize {
        self.breakpoints.partition_point(|&b| b < x)
    }

    /// `∫_a^b V'`, summed piece by piece.
    fn integrate(&self, a: f64, b: f64) -> f64 {
        let (lo, hi, sign) = if a <= b { (a, b, 1.0) } else { (b, a, -1.0) };
        let mut total = 0.0;
        let mut left = lo;
        for k in self.piece_of(lo)..self.slopes.len() {
            let right = self.breakpoints.get(k).copied().unwrap_or(f64::INFINITY).min(hi);
            if right > left {
                total += self.slopes[k] * (right - left);
            }
            left = right;
            if left >= hi {
                break;
            }
        }
        sign * total
    }

    fn piece_masses(&self) -> Option<Vec<f64>> {
        let n = self.slopes.len();
        if self.slopes[0] >= 0.0 || self.slopes[n - 1] <= 0.0 {
            return None;
        }
        let mut m = Vec::with_capacity(n);
        for k in 0..n {
            let s = self.slopes[k];
            let mass = if k == 0 {
                (-self.knot_values[0]).exp() / -s
            } else if k == n - 1 {
                (-self.knot_values[k - 1]).exp() / s
            } else {
                let (a, b) = (self.breakpoints[k - 1], self.breakpoints[k]);
                let scale = (-self.knot_values[k - 1]).exp();
                if s == 0.0 {
                    scale * (b - a)
                } else {
                    scale * -(-s * (b - a)).exp_m1() / s
                }
            };
            m.push(mass);
        }
        Some(m)
    }

    fn masses(&self) -> &[f64] {
        self.masses
            .as_deref()
            .expect("exp(-V) is not integrable for this target")
    }

    /// Draws from piece `k` given `w ∈ (0, 1)`.
    fn invert_piece(&self, k: usize, w: f64) -> f64 {
        let n = self.slopes.len();
        let s = self.slopes[k];
        if k == 0 {
            self.breakpoints[0] + w.ln() / -s
        } else if k == n - 1 {
            self.breakpoints[k - 1] - (-w).ln_1p() / s
        } else {
            let (a, b) = (self.breakpoints[k - 1], self.breakpoints[k]);
            if s == 0.0 {
                a + w * (b - a)
            } else {
                a - (w * (-s * (b - a)).exp_m1()).ln_1p() / s
            }
        }
    }

    /// Within-piece CDF at `x`, which must lie in piece `k`.
    fn piece_cdf(&self, k: usize, x: f64) -> f64 {
        let n = self.slopes.len();
        let s = self.slopes[k];
        if k == 0 {
            (-s * (x - self.breakpoints[0])).exp()
        } else if k == n - 1 {
            -(-s * (x - self.breakpoints[k - 1])).exp_m1()
        } else {
            let (a, b) = (self.breakpoints[k - 1], self.breakpoints[k]);
            if s == 0.0 {
                (x - a) / (b - a)
            } else {
                (-s * (x - a)).exp_m1() / (-s * (b - a)).exp_m1()
            }
        }
    }
}

impl Component for PiecewiseAffinePotential {
    fn value(&self, x: f64) -> f64 {
        self.integrate(0.0, x)
    }

    fn derivative(&self, x: f64) -> f64 {
        let k = self.piece_of(x);
        if self.breakpoints.get(k) == Some(&x) {
            0.0
        } else {
            self.slopes[k]
        }
    }

    fn value_difference(&self, from: f64, to: f64) -> f64 {
        self.integrate(from, to)
    }

    fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    fn side_derivative(&self, k: usize, side: Sign) -> f64 {
        match side {
            Sign::Neg => self.slopes[k],
            Sign::Pos => self.slopes[k + 1],
            Sign::Zero => 0.0,
        }
    }

    /// # Panics
    /// If `exp(−V)` is not integrable.
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let masses = self.masses();
        let total: f64 = masses.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut k = 0;
        while k + 1 < masses.len() && u >= masses[k] {
            u -= masses[k];
            k += 1;
        }
        let w = (u / masses[k]).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
        self.invert_piece(k, w)
    }

    fn cdf(&self, x: f64) -> f64 {
        let masses = self.masses();
        let total: f64 = masses.iter().sum();
        let k = self.piece_of(x);
        let below: f64 = masses[..k].iter().sum();
        (below + masses[k] * self.piece_cdf(k, x)) / total
    }
}

/// Product target `U(q) = Σ_i V(q_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IidProduct<C> {
    pub component: C,
    pub dim: usize,
}

impl<C: Component> IidProduct<C> {
    pub fn new(component: C, dim: usize) -> Self {
        IidProduct { component, dim }
    }

    /// Stationary position and standard-normal momentum.
    pub fn sample_state(&self, rng: &mut ChaCha8Rng) -> PhasePoint {
        let q = (0..self.dim).map(|_| self.component.sample(rng)).collect();
        let p = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        PhasePoint::new(q, p)
    }
}

impl<C: Component> Potential for IidProduct<C> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        let mut u = 0.0;
        for (g, &x) in grad.iter_mut().zip(q) {
            u += self.component.value(x);
            *g = self.component.derivative(x);
        }
        u
    }

    fn value(&self, q: &[f64]) -> f64 {
        q.iter().map(|&x| self.component.value(x)).sum()
    }

    fn value_difference(&self, from: &[f64], to: &[f64]) -> f64 {
        from.iter()
            .zip(to)
            .map(|(&a, &b)| self.component.value_difference(a, b))
            .sum()
    }

    fn locate_crossings(&self, q0: &[f64], direction: &[f64], horizon: f64) -> Vec<SurfaceHit> {
        let bps = self.component.breakpoints();
        let mut hits = Vec::new();
        if bps.is_empty() {
            return hits;
        }
        for (coord, (&x, &v)) in q0.iter().zip(direction).enumerate() {
            if v == 0.0 {
                continue;
            }
            for (breakpoint, &b) in bps.iter().enumerate() {
                let t = (b - x) / v;
                if t > 0.0 && t < horizon {
                    let before = if v > 0.0 { Sign::Neg } else { Sign::Pos };
                    hits.push(SurfaceHit {
                        time: t,
                        surface: SurfaceId::Breakpoint { coord, breakpoint },
                        before,
                        after: before.flipped(),
                    });
                }
            }
        }
        crate::potential::sort_hits(&mut hits);
        hits
    }

    fn one_sided_gradients(&self, z: &[f64], hit: &SurfaceHit) -> (Vec<f64>, Vec<f64>) {
        let mut before = self.gradient(z);
        let mut after = before.clone();
        if let SurfaceId::Breakpoint { coord, breakpoint } = hit.surface {
            before[coord] = self.component.side_derivative(breakpoint, hit.before);
            after[coord] = self.component.side_derivative(breakpoint, hit.after);
        }
        (before, after)
    }

    fn surface_value(&self, surface: &SurfaceId, q: &[f64]) -> Option<f64> {
        match *surface {
            SurfaceId::Breakpoint { coord, breakpoint } => {
                Some(q.get(coord)? - self.component.breakpoints().get(breakpoint)?)
            }
            SurfaceId::Neuron { .. } => None,
        }
    }
}

/// Limiting acceptance `2Φ(−l^order·√Σ/2)` of an order-1 (piecewise
/// affine) or order-2 (smooth) integrator error.
pub fn acceptance_limit(order: u32, l: f64, sigma: f64) -> Result<f64> {
    if order != 1 && order != 2 {
        return Err(Error::UnsupportedOrder(order));
    }
    if !(l > 0.0 && sigma > 0.0) {
        return Err(Error::InvalidConfig(format!("need l > 0 and sigma > 0, got l={l}, sigma={sigma}")));
    }
    let x = l.powi(order as i32) * sigma.sqrt() / 2.0;
    // 2Φ(−x) = erfc(x/√2)
    Ok(libm::erfc(x / std::f64::consts::SQRT_2))
}

pub const CURVE_L_MIN: f64 = 1e-3;
pub const CURVE_L_MAX: f64 = 10.0;
pub const CURVE_POINTS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyCurve {
    pub order: u32,
    pub sigma: f64,
    pub l: Vec<f64>,
    pub acceptance: Vec<f64>,
    pub efficiency: Vec<f64>,
    pub l_opt: f64,
    pub a_opt: f64,
    pub efficiency_opt: f64,
}

/// `l·a(l)` on a log grid over `[10⁻³, 10]`, with the maximiser refined by
/// golden-section search.
pub fn efficiency_curve(order: u32, sigma: f64) -> Result<EfficiencyCurve> {
    let eff = |l: f64| acceptance_limit(order, l, sigma).map(|a| l * a);
    let (lo, hi) = (CURVE_L_MIN.ln(), CURVE_L_MAX.ln());
    let l: Vec<f64> = (0..CURVE_POINTS)
        .map(|k| (lo + (hi - lo) * k as f64 / (CURVE_POINTS - 1) as f64).exp())
        .collect();
    let acceptance = l
        .iter()
        .map(|&x| acceptance_limit(order, x, sigma))
        .collect::<Result<Vec<_>>>()?;
    let efficiency: Vec<f64> = l.iter().zip(&acceptance).map(|(l, a)| l * a).collect();
    let best = efficiency
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .expect("non-empty grid");
    let mut a = l[best.saturating_sub(1)];
    let mut b = l[(best + 1).min(CURVE_POINTS - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (eff(c)?, eff(d)?);
    while b - a > 1e-12 * b {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eff(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eff(d)?;
        }
    }
    let l_opt = 0.5 * (a + b);
    let a_opt = acceptance_limit(order, l_opt, sigma)?;
    Ok(EfficiencyCurve {
        order,
        sigma,
        l,
        acceptance,
        efficiency,
        l_opt,
        a_opt,
        efficiency_opt: l_opt * a_opt,
    })
}

impl EfficiencyCurve {
    /// Acceptance interval `[a_lo, a_hi]` on which efficiency is at least
    /// `fraction` of the optimum.
    pub fn band(&self, fraction: f64) -> Result<(f64, f64)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::InvalidConfig(format!("band fraction must lie in (0, 1), got {fraction}")));
        }
        let target = fraction * self.efficiency_opt;
        let eff = |l: f64| acceptance_limit(self.order, l, self.sigma).map(|a| l * a);
        // efficiency is unimodal: bisect each flank
        let solve = |mut inside: f64, mut outside: f64| -> Result<f64> {
            for _ in 0..200 {
                let mid = 0.5 * (inside + outside);
                if eff(mid)? >= target {
                    inside = mid;
                } else {
                    outside = mid;
                }
            }
            Ok(inside)
        };
        let l_small = solve(self.l_opt, 0.0)?;
        let mut far = 2.0 * self.l_opt;
        while eff(far)? >= target {
            far *= 2.0;
        }
        let l_large = solve(self.l_opt, far)?;
        Ok((
            acceptance_limit(self.order, l_large, self.sigma)?,
            acceptance_limit(self.order, l_small, self.sigma)?,
        ))
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["order", "sigma", "l", "a", "efficiency"])?;
        for k in 0..self.l.len() {
            out.write_record([
                self.order.to_string(),
                self.sigma.to_string(),
                self.l[k].to_string(),
                self.acceptance[k].to_string(),
                self.efficiency[k].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Independent RNG streams for the Monte Carlo loops; fixed so that results
/// do not depend on the thread count.
const STREAMS: usize = 16;

fn stream_counts(n: usize) -> impl ParallelIterator<Item = (usize, usize)> {
    (0..STREAMS)
        .into_par_iter()
        .map(move |c| (c, n / STREAMS + usize::from(c < n % STREAMS)))
}

/// Moments of the one-dimensional energy error of full proposals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaEstimate {
    pub step_size: f64,
    pub travel_time: f64,
    pub n: usize,
    pub n_divergent: usize,
    /// `E[Δ]`.
    pub mean_delta: f64,
    /// `E[Δ²]`.
    pub mean_sq_delta: f64,
}

impl SigmaEstimate {
    /// `E[Δ²]/ε²`.
    pub fn sigma(&self) -> f64 {
        self.mean_sq_delta / (self.step_size * self.step_size)
    }

    /// `E[Δ]/ε²`.
    pub fn mu(&self) -> f64 {
        self.mean_delta / (self.step_size * self.step_size)
    }

    /// `E[Δ²]/ε^power`, for checking the error order of a smooth control.
    pub fn scaled_second_moment(&self, power: i32) -> f64 {
        self.mean_sq_delta / self.step_size.powi(power)
    }
}

/// Monte Carlo moments of the energy error `Δ` of one-dimensional proposals
/// of travel time `T` (`L = round(T/ε)` steps) from stationary starts.
///
/// Each coordinate of a product target evolves independently, so `Δ` is the
/// per-dimension contribution to a high-dimensional proposal's energy error.
pub fn estimate_sigma<C: Component>(
    component: &C,
    step_size: f64,
    n: usize,
    travel_time: f64,
    seed: u64,
) -> Result<SigmaEstimate> {
    if !(step_size > 0.0 && travel_time > 0.0) || n == 0 {
        return Err(Error::InvalidConfig("estimate_sigma needs ε > 0, T > 0, n ≥ 1".into()));
    }
    let target = IidProduct::new(component, 1);
    let n_steps = ((travel_time / step_size).round() as usize).max(1);
    let parts: Vec<(f64, f64, usize)> = stream_counts(n)
        .map(|(c, count)| {
            let mut rng = rng_from_seed(derive_seed(seed, &[c as u64]));
            let (mut s1, mut s2, mut div) = (0.0, 0.0, 0);
            for _ in 0..count {
                let start = target.sample_state(&mut rng);
                let prop = simulate(&target, &start, step_size, n_steps, DEFAULT_DIVERGENCE_CAP);
                if prop.divergent {
                    div += 1;
                } else {
                    s1 += prop.delta_h;
                    s2 += prop.delta_h * prop.delta_h;
                }
            }
            (s1, s2, div)
        })
        .collect();
    let (s1, s2, n_divergent) = parts
        .iter()
        .fold((0.0, 0.0, 0), |acc, p| (acc.0 + p.0, acc.1 + p.1, acc.2 + p.2));
    let used = (n - n_divergent).max(1) as f64;
    Ok(SigmaEstimate {
        step_size,
        travel_time,
        n,
        n_divergent,
        mean_delta: s1 / used,
        mean_sq_delta: s2 / used,
    })
}

impl<C: Component> Component for &C {
    fn value(&self, x: f64) -> f64 {
        (**self).value(x)
    }
    fn derivative(&self, x: f64) -> f64 {
        (**self).derivative(x)
    }
    fn value_difference(&self, from: f64, to: f64) -> f64 {
        (**self).value_difference(from, to)
    }
    fn breakpoints(&self) -> &[f64] {
        (**self).breakpoints()
    }
    fn side_derivative(&self, k: usize, side: Sign) -> f64 {
        (**self).side_derivative(k, side)
    }
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        (**self).sample(rng)
    }
    fn cdf(&self, x: f64) -> f64 {
        (**self).cdf(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub l: f64,
    pub dims: Vec<usize>,
    pub samples_per_dim: usize,
    pub travel_time: f64,
    /// `ε = l·d^{−dim_exponent}`; 0.5 is the natural scaling for
    /// piecewise-affine targets.
    #[serde(default = "default_exponent")]
    pub dim_exponent: f64,
    pub seed: u64,
}

fn default_exponent() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub dim_exponent: f64,
    pub d: usize,
    pub epsilon: f64,
    pub n_steps: usize,
    /// Mean Metropolis acceptance probability of the proposals.
    pub acceptance: f64,
    pub n_divergent: usize,
}

pub fn write_scaling_csv<W: std::io::Write>(rows: &[ScalingRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["dim_exponent", "d", "epsilon", "n_steps", "acceptance", "n_divergent"])?;
    for r in rows {
        out.write_record([
            r.dim_exponent.to_string(),
            r.d.to_string(),
            r.epsilon.to_string(),
            r.n_steps.to_string(),
            r.acceptance.to_string(),
            r.n_divergent.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Average acceptance of full HMC proposals from stationary starts on the
/// `d`-dimensional product target, for each `d`.
pub fn scaling_experiment<C: Component>(component: &C, config: &ScalingConfig) -> Result<Vec<ScalingRow>> {
    if !(config.l > 0.0 && config.travel_time > 0.0) || config.samples_per_dim == 0 {
        return Err(Error::InvalidConfig("scaling experiment needs l > 0, T > 0 and samples".into()));
    }
    config
        .dims
        .iter()
        .enumerate()
        .map(|(idx, &d)| {
            if d == 0 {
                return Err(Error::InvalidConfig("dimension must be at least 1".into()));
            }
            let eps = config.l * (d as f64).powf(-config.dim_exponent);
            let n_steps = ((config.travel_time / eps).round() as usize).max(1);
            let target = IidProduct::new(component, d);
            let cell_seed = derive_seed(config.seed, &[idx as u64]);
            let parts: Vec<(f64, usize)> = stream_counts(config.samples_per_dim)
                .map(|(c, count)| {
                    let mut rng = rng_from_seed(derive_seed(cell_seed, &[c as u64]));
                    let (mut acc, mut div) = (0.0, 0);
                    for _ in 0..count {
                        let start = target.sample_state(&mut rng);
                        let prop = simulate(&target, &start, eps, n_steps, DEFAULT_DIVERGENCE_CAP);
                        if prop.divergent {
                            div += 1;
                        } else {
                            acc += accept_probability(prop.delta_h);
                        }
                    }
                    (acc, div)
                })
                .collect();
            let total: f64 = parts.iter().map(|p| p.0).sum();
            Ok(ScalingRow {
                dim_exponent: config.dim_exponent,
                d,
                epsilon: eps,
                n_steps,
                acceptance: total / config.samples_per_dim as f64,
                n_divergent: parts.iter().map(|p| p.1).sum(),
            })
        })
        .collect()
}
