//! Leapfrog integration with Hamiltonian bookkeeping.
//!
//! One step from `(q0, p0)` with step size `ε`:
//!
//! ```text
//! p½ = p0 − (ε/2)·∇U(q0)
//! q1 = q0 + ε·p½
//! p1 = p½ − (ε/2)·∇U(q1)
//! ```
//!
//! The position only moves during the drift `q0 + t·p½, t ∈ (0, ε)`, so that
//! is where surface crossings are looked for.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::{CrossingEvent, Potential};
use crate::stats::norm;

/// A step is divergent if `|ΔH|` exceeds this (or anything is non-finite).
pub const DEFAULT_DIVERGENCE_CAP: f64 = 1e6;
/// Perturbation used by [`volume_check`].
pub const JACOBIAN_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhasePoint {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Self {
        debug_assert_eq!(q.len(), p.len());
        PhasePoint { q, p }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.p).all(|v| v.is_finite())
    }

    /// The same position with the momentum negated.
    pub fn flipped(&self) -> PhasePoint {
        PhasePoint {
            q: self.q.clone(),
            p: self.p.iter().map(|v| -v).collect(),
        }
    }
}

/// Everything that happened during one leapfrog step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_size: f64,
    pub q0: Vec<f64>,
    pub p0: Vec<f64>,
    pub p_half: Vec<f64>,
    pub q1: Vec<f64>,
    pub p1: Vec<f64>,
    pub h0: f64,
    pub h1: f64,
    /// `H1 − H0`, evaluated as `[U(q1) − U(q0)] + [K(p1) − K(p0)]` with
    /// cancellation-free differences. Agrees with `h1 − h0` up to rounding.
    pub delta_h: f64,
    /// Ordered by drift time, ties by surface.
    pub crossings: Vec<CrossingEvent>,
    pub divergent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTrace {
    pub initial: PhasePoint,
    pub step_size: f64,
    pub n_steps: usize,
    pub steps: Vec<StepRecord>,
    pub final_state: PhasePoint,
    pub total_delta_h: f64,
    pub divergent: bool,
}

impl TrajectoryTrace {
    pub fn travel_time(&self) -> f64 {
        self.step_size * self.n_steps as f64
    }

    pub fn n_crossings(&self) -> usize {
        self.steps.iter().map(|s| s.crossings.len()).sum()
    }

    /// CSV with columns `step,H0,H1,deltaH,n_crossings,divergent`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "H0", "H1", "deltaH", "n_crossings", "divergent"])?;
        for (k, s) in self.steps.iter().enumerate() {
            out.write_record([
                k.to_string(),
                s.h0.to_string(),
                s.h1.to_string(),
                s.delta_h.to_string(),
                s.crossings.len().to_string(),
                s.divergent.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorOptions {
    pub divergence_cap: f64,
    /// Populate [`StepRecord::crossings`]. Costs two extra gradient
    /// evaluations per crossing.
    pub track_crossings: bool,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            divergence_cap: DEFAULT_DIVERGENCE_CAP,
            track_crossings: true,
        }
    }
}

pub fn kinetic(p: &[f64]) -> f64 {
    0.5 * p.iter().map(|v| v * v).sum::<f64>()
}

fn kinetic_difference(p0: &[f64], p1: &[f64]) -> f64 {
    0.5 * p0
        .iter()
        .zip(p1)
        .map(|(a, b)| (b - a) * (b + a))
        .sum::<f64>()
}

/// `H(q, p) = U(q) + ½‖p‖²`.
pub fn hamiltonian<P: Potential + ?Sized>(potential: &P, state: &PhasePoint) -> f64 {
    potential.value(&state.q) + kinetic(&state.p)
}

/// `H(end) − H(start)` via cancellation-free differences.
pub fn energy_change<P: Potential + ?Sized>(potential: &P, start: &PhasePoint, end: &PhasePoint) -> f64 {
    potential.value_difference(&start.q, &end.q) + kinetic_difference(&start.p, &end.p)
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Crossings of the drift `q0 + t·p_half`, `t ∈ (0, ε)`, with one-sided
/// gradients attached.
pub fn detect_crossings<P: Potential + ?Sized>(
    potential: &P,
    q0: &[f64],
    p_half: &[f64],
    step_size: f64,
) -> Vec<CrossingEvent> {
    potential
        .locate_crossings(q0, p_half, step_size)
        .into_iter()
        .map(|hit| {
            let z: Vec<f64> = q0
                .iter()
                .zip(p_half)
                .map(|(a, v)| a + hit.time * v)
                .collect();
            let (before, after) = potential.one_sided_gradients(&z, &hit);
            CrossingEvent::new(hit.time, z, hit.surface, before, after)
        })
        .collect()
}

pub fn leapfrog_step<P: Potential + ?Sized>(
    potential: &P,
    state: &PhasePoint,
    step_size: f64,
) -> (PhasePoint, StepRecord) {
    leapfrog_step_with(potential, state, step_size, &IntegratorOptions::default())
}

pub fn leapfrog_step_with<P: Potential + ?Sized>(
    potential: &P,
    state: &PhasePoint,
    step_size: f64,
    opts: &IntegratorOptions,
) -> (PhasePoint, StepRecord) {
    let mut g0 = vec![0.0; state.dim()];
    let u0 = potential.value_and_gradient(&state.q, &mut g0);
    step_from(potential, state, &g0, u0, step_size, opts).0
}

/// One step given the gradient and value at the start. Also returns the
/// gradient and value at the end for reuse by the next step.
fn step_from<P: Potential + ?Sized>(
    potential: &P,
    state: &PhasePoint,
    g0: &[f64],
    u0: f64,
    eps: f64,
    opts: &IntegratorOptions,
) -> ((PhasePoint, StepRecord), Vec<f64>, f64) {
    let half = 0.5 * eps;
    let p_half: Vec<f64> = state.p.iter().zip(g0).map(|(p, g)| p - half * g).collect();
    let q1: Vec<f64> = state.q.iter().zip(&p_half).map(|(q, v)| q + eps * v).collect();
    let crossings = if opts.track_crossings && all_finite(&q1) && all_finite(&p_half) {
        detect_crossings(potential, &state.q, &p_half, eps)
    } else {
        Vec::new()
    };
    let mut g1 = vec![0.0; state.dim()];
    let u1 = potential.value_and_gradient(&q1, &mut g1);
    let p1: Vec<f64> = p_half.iter().zip(&g1).map(|(p, g)| p - half * g).collect();

    let h0 = u0 + kinetic(&state.p);
    let h1 = u1 + kinetic(&p1);
    let delta_h = potential.value_difference(&state.q, &q1) + kinetic_difference(&state.p, &p1);
    let divergent = !(all_finite(g0)
        && all_finite(&g1)
        && all_finite(&q1)
        && all_finite(&p1)
        && u1.is_finite()
        && delta_h.is_finite()
        && delta_h.abs() <= opts.divergence_cap);

    let next = PhasePoint {
        q: q1.clone(),
        p: p1.clone(),
    };
    let record = StepRecord {
        step_size: eps,
        q0: state.q.clone(),
        p0: state.p.clone(),
        p_half,
        q1,
        p1,
        h0,
        h1,
        delta_h,
        crossings,
        divergent,
    };
    ((next, record), g1, u1)
}

pub fn trajectory<P: Potential + ?Sized>(
    potential: &P,
    state: &PhasePoint,
    step_size: f64,
    n_steps: usize,
) -> TrajectoryTrace {
    trajectory_with(potential, state, step_size, n_steps, &IntegratorOptions::default())
}

/// `n_steps` chained leapfrog steps; stops at the first divergent step.
pub fn trajectory_with<P: Potential + ?Sized>(
    potential: &P,
    state: &PhasePoint,
    step_size: f64,
    n_steps: usize,
    opts: &IntegratorOptions,
) -> TrajectoryTrace {
    let mut g = vec![0.0; state.dim()];
    let mut u = potential.value_and_gradient(&state.q, &mut g);
    let mut current = state.clone();
    let mut steps = Vec::with_capacity(n_steps);
    let mut divergent = false;
    for _ in 0..n_steps {
        let ((next, record), g1, u1) = step_from(potential, &current, &g, u, step_size, opts);
        divergent = record.divergent;
        steps.push(record);
        current = next;
        g = g1;
        u = u1;
        if divergent {
            break;
        }
    }
    let total_delta_h = if divergent {
        f64::INFINITY
    } else {
        energy_change(potential, state, &current)
    };
    TrajectoryTrace {
        initial: state.clone(),
        step_size,
        n_steps,
        steps,
        final_state: current,
        total_delta_h,
        divergent,
    }
}

/// End point of an uninstrumented trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub state: PhasePoint,
    /// Total energy error; `+∞` when divergent.
    pub delta_h: f64,
    pub divergent: bool,
}

/// Fast path of [`trajectory`] for samplers: no records, no crossing
/// detection, in-place updates.
pub fn simulate<P: Potential + ?Sized>(
    potential: &P,
    state: &PhasePoint,
    step_size: f64,
    n_steps: usize,
    divergence_cap: f64,
) -> Proposal {
    let d = state.dim();
    let half = 0.5 * step_size;
    let mut q = state.q.clone();
    let mut p = state.p.clone();
    let mut g = vec![0.0; d];
    let mut p_prev = vec![0.0; d];
    let mut u = potential.value_and_gradient(&q, &mut g);
    let mut divergent = !(u.is_finite() && all_finite(&g));
    for _ in 0..n_steps {
        if divergent {
            break;
        }
        p_prev.copy_from_slice(&p);
        for k in 0..d {
            p[k] -= half * g[k];
            q[k] += step_size * p[k];
        }
        let u1 = potential.value_and_gradient(&q, &mut g);
        for k in 0..d {
            p[k] -= half * g[k];
        }
        if !(u1.is_finite() && all_finite(&g) && all_finite(&q) && all_finite(&p)) {
            divergent = true;
            break;
        }
        // the cap is coarse, plain differences are accurate enough here
        let step_dh = (u1 - u) + kinetic_difference(&p_prev, &p);
        u = u1;
        if !step_dh.is_finite() || step_dh.abs() > divergence_cap {
            divergent = true;
        }
    }
    let end = PhasePoint { q, p };
    let delta_h = if divergent {
        f64::INFINITY
    } else {
        energy_change(potential, state, &end)
    };
    Proposal {
        state: end,
        delta_h,
        divergent,
    }
}

/// Runs `n_steps` forward, negates the momentum, runs `n_steps` again and
/// returns `‖q_rec − q0‖ + ‖p_rec + p0‖`. Infinite if either leg diverges.
pub fn reverse_check<P: Potential + ?Sized>(
    potential: &P,
    state: &PhasePoint,
    step_size: f64,
    n_steps: usize,
) -> f64 {
    if n_steps == 0 {
        return 0.0;
    }
    let fwd = simulate(potential, state, step_size, n_steps, f64::INFINITY);
    if fwd.divergent {
        return f64::INFINITY;
    }
    let back = simulate(potential, &fwd.state.flipped(), step_size, n_steps, f64::INFINITY);
    if back.divergent {
        return f64::INFINITY;
    }
    let dq: Vec<f64> = back.state.q.iter().zip(&state.q).map(|(a, b)| a - b).collect();
    let dp: Vec<f64> = back.state.p.iter().zip(&state.p).map(|(a, b)| a + b).collect();
    norm(&dq) + norm(&dp)
}

fn step_map<P: Potential + ?Sized>(potential: &P, q: &[f64], p: &[f64], eps: f64) -> Vec<f64> {
    let s = simulate(potential, &PhasePoint::new(q.to_vec(), p.to_vec()), eps, 1, f64::INFINITY);
    let mut out = s.state.q;
    out.extend(s.state.p);
    out
}

/// `|det J − 1|` for the Jacobian of one leapfrog step at `(q, p)`, by
/// central finite differences with perturbation [`JACOBIAN_STEP`].
///
/// Fails with [`Error::StencilCrossesKink`] if any stencil point lies in a
/// different smooth region than the base point, or its drift crosses a
/// surface.
pub fn volume_check<P: Potential + ?Sized>(potential: &P, q: &[f64], p: &[f64], step_size: f64) -> Result<f64> {
    let d = q.len();
    let h = JACOBIAN_STEP;
    let base_end = step_map(potential, q, p, step_size);
    let g0 = potential.gradient(q);
    let p_half: Vec<f64> = p.iter().zip(&g0).map(|(v, g)| v - 0.5 * step_size * g).collect();
    if !potential.locate_crossings(q, &p_half, step_size).is_empty() {
        return Err(Error::StencilCrossesKink);
    }

    let n = 2 * d;
    let mut jac = vec![0.0; n * n];
    for k in 0..n {
        let mut ends = [Vec::new(), Vec::new()];
        for (side, sign) in [1.0, -1.0].into_iter().enumerate() {
            let mut qs = q.to_vec();
            let mut ps = p.to_vec();
            if k < d {
                qs[k] += sign * h;
            } else {
                ps[k - d] += sign * h;
            }
            let gs = potential.gradient(&qs);
            let ph: Vec<f64> = ps.iter().zip(&gs).map(|(v, g)| v - 0.5 * step_size * g).collect();
            let dq0: Vec<f64> = qs.iter().zip(q).map(|(a, b)| a - b).collect();
            if !potential.locate_crossings(&qs, &ph, step_size).is_empty()
                || !potential.locate_crossings(q, &dq0, 1.0).is_empty()
            {
                return Err(Error::StencilCrossesKink);
            }
            let end = step_map(potential, &qs, &ps, step_size);
            let dq1: Vec<f64> = end[..d].iter().zip(&base_end[..d]).map(|(a, b)| a - b).collect();
            if !potential.locate_crossings(&base_end[..d], &dq1, 1.0).is_empty() {
                return Err(Error::StencilCrossesKink);
            }
            ends[side] = end;
        }
        for r in 0..n {
            jac[r * n + k] = (ends[0][r] - ends[1][r]) / (2.0 * h);
        }
    }
    Ok((determinant(&mut jac, n) - 1.0).abs())
}

/// Determinant by LU with partial pivoting; destroys `a`.
fn determinant(a: &mut [f64], n: usize) -> f64 {
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        if a[pivot * n + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for c in 0..n {
                a.swap(pivot * n + c, col * n + c);
            }
            det = -det;
        }
        let diag = a[col * n + col];
        det *= diag;
        for r in col + 1..n {
            let f = a[r * n + col] / diag;
            if f != 0.0 {
                for c in col..n {
                    a[r * n + c] -= f * a[col * n + c];
                }
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{Flat, Harmonic};

    #[test]
    fn hamiltonian_examples() {
        let s = PhasePoint::new(vec![0.3], vec![0.0]);
        assert_eq!(hamiltonian(&Flat { dim: 1 }, &s), 0.0);
        let s = PhasePoint::new(vec![1.0], vec![0.0]);
        assert_eq!(hamiltonian(&Harmonic { dim: 1 }, &s), 0.5);
    }

    #[test]
    fn free_particle_step() {
        let s = PhasePoint::new(vec![0.5, -1.0], vec![2.0, 0.25]);
        let (next, rec) = leapfrog_step(&Flat { dim: 2 }, &s, 0.1);
        assert_eq!(next.q, vec![0.5 + 0.1 * 2.0, -1.0 + 0.1 * 0.25]);
        assert_eq!(next.p, s.p);
        assert_eq!(rec.delta_h, 0.0);
        assert!(rec.crossings.is_empty());
    }

    #[test]
    fn harmonic_step_by_hand() {
        let s = PhasePoint::new(vec![1.0], vec![0.0]);
        let (next, rec) = leapfrog_step(&Harmonic { dim: 1 }, &s, 0.1);
        assert!((rec.p_half[0] + 0.05).abs() < 1e-15);
        assert!((next.q[0] - 0.995).abs() < 1e-15);
        assert!((next.p[0] + 0.09975).abs() < 1e-15);
        assert!((rec.delta_h - (rec.h1 - rec.h0)).abs() < 1e-15);
    }

    #[test]
    fn one_step_trajectory_equals_step() {
        let h = Harmonic { dim: 2 };
        let s = PhasePoint::new(vec![0.3, -0.7], vec![1.1, 0.4]);
        let (next, rec) = leapfrog_step(&h, &s, 0.05);
        let t = trajectory(&h, &s, 0.05, 1);
        assert_eq!(t.final_state, next);
        assert_eq!(t.steps[0], rec);
    }

    #[test]
    fn divergence_is_flagged() {
        struct Steep;
        impl Potential for Steep {
            fn dim(&self) -> usize {
                1
            }
            fn value_and_gradient(&self, q: &[f64], g: &mut [f64]) -> f64 {
                g[0] = 4.0 * q[0].powi(3);
                q[0].powi(4)
            }
        }
        let s = PhasePoint::new(vec![30.0], vec![0.0]);
        let t = trajectory(&Steep, &s, 0.5, 50);
        assert!(t.divergent);
        assert!(t.steps.len() < 50);
        assert!(t.steps.last().unwrap().divergent);
        assert_eq!(t.total_delta_h, f64::INFINITY);
        assert!(simulate(&Steep, &s, 0.5, 50, DEFAULT_DIVERGENCE_CAP).divergent);
    }

    #[test]
    fn simulate_matches_trajectory() {
        let h = Harmonic { dim: 3 };
        let s = PhasePoint::new(vec![0.3, -0.7, 1.0], vec![1.1, 0.4, -0.2]);
        let t = trajectory(&h, &s, 0.03, 40);
        let f = simulate(&h, &s, 0.03, 40, DEFAULT_DIVERGENCE_CAP);
        assert_eq!(t.final_state, f.state);
        assert_eq!(t.total_delta_h, f.delta_h);
    }

    #[test]
    fn determinant_small() {
        let mut a = vec![0.0, 2.0, 3.0, 1.0];
        assert!((determinant(&mut a, 2) + 6.0).abs() < 1e-15);
        let mut i3 = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(determinant(&mut i3, 3), 1.0);
    }

    #[test]
    fn csv_export_columns() {
        let h = Harmonic { dim: 1 };
        let t = trajectory(&h, &PhasePoint::new(vec![1.0], vec![0.0]), 0.1, 3);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "step,H0,H1,deltaH,n_crossings,divergent");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].ends_with(",0,false"));
        let back: TrajectoryTrace = serde_json::from_str(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
    }
}
