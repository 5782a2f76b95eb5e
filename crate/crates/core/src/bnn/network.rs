use super::{ActivationPattern, MlpArchitecture, PosteriorSpec};
use crate::error::{check_len, Error, Result};
use crate::potential::{sort_hits, Potential, Sign, SurfaceHit, SurfaceId};

/// Sub-intervals scanned for sign changes of non-affine surface functions.
pub const SCAN_INTERVALS: usize = 64;
/// Bisection stops once the bracket is below this fraction of the horizon.
pub const BISECTION_TOL: f64 = 1e-12;

/// Forward pass for one input, filling `pre` with the pre-activations of all
/// units of layers `1..=M` and `act` with the hidden activations.
fn forward_point(arch: &MlpArchitecture, q: &[f64], x: &[f64], pre: &mut [f64], act: &mut [f64]) {
    let m = arch.num_layers();
    for j in 1..=m {
        let rows = arch.layer_dims[j];
        let cols = arch.layer_dims[j - 1];
        let w = &q[arch.weight_offset(j)..arch.bias_offset(j)];
        let b = &q[arch.bias_offset(j)..arch.bias_offset(j) + rows];
        let uo = arch.unit_offset(j);
        let (lower, upper) = act.split_at_mut(uo);
        let input: &[f64] = if j == 1 {
            x
        } else {
            &lower[arch.unit_offset(j - 1)..uo]
        };
        let out = &mut pre[uo..uo + rows];
        if cols == 1 {
            let x0 = input[0];
            for ((z, wr), br) in out.iter_mut().zip(w).zip(b) {
                *z = br + wr * x0;
            }
        } else {
            for ((z, row), br) in out.iter_mut().zip(w.chunks_exact(cols)).zip(b) {
                let mut acc = *br;
                for (wi, xi) in row.iter().zip(input) {
                    acc += wi * xi;
                }
                *z = acc;
            }
        }
        if j < m {
            arch.activate_slice(out, &mut upper[..rows]);
        }
    }
}

/// Scratch buffers for one forward/backward sweep.
struct Scratch {
    pre: Vec<f64>,
    act: Vec<f64>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl Scratch {
    fn new(arch: &MlpArchitecture) -> Self {
        let units = arch.total_units();
        let widest = *arch.layer_dims.iter().max().unwrap();
        Scratch {
            pre: vec![0.0; units],
            act: vec![0.0; units],
            delta: vec![0.0; widest],
            delta_next: vec![0.0; widest],
        }
    }
}

fn output_slice<'a>(arch: &MlpArchitecture, pre: &'a [f64]) -> &'a [f64] {
    let m = arch.num_layers();
    &pre[arch.unit_offset(m)..arch.unit_offset(m) + arch.output_dim()]
}

/// Network output `f_q(x)`.
pub fn forward(arch: &MlpArchitecture, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_len("parameter vector", arch.param_dim(), params.len())?;
    check_len("input", arch.input_dim(), x.len())?;
    let mut s = Scratch::new(arch);
    forward_point(arch, params, x, &mut s.pre, &mut s.act);
    Ok(output_slice(arch, &s.pre).to_vec())
}

/// Pre-activations of every hidden neuron, layer by layer.
pub fn preactivations(arch: &MlpArchitecture, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_len("parameter vector", arch.param_dim(), params.len())?;
    check_len("input", arch.input_dim(), x.len())?;
    let mut s = Scratch::new(arch);
    forward_point(arch, params, x, &mut s.pre, &mut s.act);
    s.pre.truncate(arch.hidden_units());
    Ok(s.pre)
}

/// Sign pattern of the hidden pre-activations at `q` for every data point.
pub fn activation_pattern(spec: &PosteriorSpec, q: &[f64]) -> Result<ActivationPattern> {
    check_len("parameter vector", spec.dim(), q.len())?;
    let arch = spec.arch();
    let hidden = arch.hidden_units();
    let mut s = Scratch::new(arch);
    let mut signs = Vec::with_capacity(spec.data().len() * hidden);
    for i in 0..spec.data().len() {
        forward_point(arch, q, spec.data().input(i), &mut s.pre, &mut s.act);
        signs.extend(s.pre[..hidden].iter().map(|&z| Sign::of(z)));
    }
    ActivationPattern::new(spec.data().len(), hidden, signs)
}

/// Potential `U(q)`.
pub fn potential(spec: &PosteriorSpec, q: &[f64]) -> Result<f64> {
    check_len("parameter vector", spec.dim(), q.len())?;
    Ok(evaluate(spec, q, None, None))
}

/// `∂U/∂q` by backpropagation.
pub fn grad_potential(spec: &PosteriorSpec, q: &[f64]) -> Result<Vec<f64>> {
    check_len("parameter vector", spec.dim(), q.len())?;
    let mut g = vec![0.0; q.len()];
    evaluate(spec, q, Some(&mut g), None);
    Ok(g)
}

/// Backpropagation with each hidden neuron's derivative taken from
/// `pattern` instead of from the sign of its actual pre-activation.
///
/// Forward values are unaffected; only the local slopes used on the way back
/// are forced. This yields the gradient of the smooth piece selected by
/// `pattern` whenever the network output is continuous across the forced
/// surfaces, which holds on the surfaces themselves.
pub fn grad_potential_forced(
    spec: &PosteriorSpec,
    q: &[f64],
    pattern: &ActivationPattern,
) -> Result<Vec<f64>> {
    if !spec.arch().activation().is_piecewise_affine() {
        return Err(Error::UnsupportedActivation(spec.arch().activation()));
    }
    check_len("parameter vector", spec.dim(), q.len())?;
    let (n, h) = pattern.shape();
    check_len("activation pattern points", spec.data().len(), n)?;
    check_len("activation pattern units", spec.arch().hidden_units(), h)?;
    let mut g = vec![0.0; q.len()];
    evaluate(spec, q, Some(&mut g), Some(pattern));
    Ok(g)
}

/// `U(q1) − U(q0)` without subtracting two large totals.
pub fn potential_difference(spec: &PosteriorSpec, q0: &[f64], q1: &[f64]) -> Result<f64> {
    check_len("parameter vector", spec.dim(), q0.len())?;
    check_len("parameter vector", spec.dim(), q1.len())?;
    Ok(difference(spec, q0, q1))
}

fn difference(spec: &PosteriorSpec, q0: &[f64], q1: &[f64]) -> f64 {
    let arch = spec.arch();
    let prior: f64 = q0
        .iter()
        .zip(q1)
        .map(|(a, b)| (b - a) * (b + a))
        .sum::<f64>()
        / (2.0 * spec.prior_scale() * spec.prior_scale());
    let mut s0 = Scratch::new(arch);
    let mut s1 = Scratch::new(arch);
    let mut data = 0.0;
    for i in 0..spec.data().len() {
        let x = spec.data().input(i);
        forward_point(arch, q0, x, &mut s0.pre, &mut s0.act);
        forward_point(arch, q1, x, &mut s1.pre, &mut s1.act);
        let o0 = output_slice(arch, &s0.pre);
        let o1 = output_slice(arch, &s1.pre);
        for ((a, b), y) in o0.iter().zip(o1).zip(spec.data().target(i)) {
            data += (b - a) * (b + a - 2.0 * y);
        }
    }
    prior + data / (2.0 * spec.noise_scale() * spec.noise_scale())
}

/// Shared forward/backward sweep. Returns `U(q)`; accumulates the gradient
/// into `grad` when given.
fn evaluate(
    spec: &PosteriorSpec,
    q: &[f64],
    mut grad: Option<&mut [f64]>,
    forced: Option<&ActivationPattern>,
) -> f64 {
    let arch = spec.arch();
    let m = arch.num_layers();
    let inv_prior = 1.0 / (spec.prior_scale() * spec.prior_scale());
    let inv_noise = 1.0 / (spec.noise_scale() * spec.noise_scale());

    let mut prior = 0.0;
    for (k, &v) in q.iter().enumerate() {
        prior += v * v;
        if let Some(g) = grad.as_deref_mut() {
            g[k] = v * inv_prior;
        }
    }
    let mut u = 0.5 * prior * inv_prior;

    let mut s = Scratch::new(arch);
    let mut sq = 0.0;
    for i in 0..spec.data().len() {
        let x = spec.data().input(i);
        let y = spec.data().target(i);
        forward_point(arch, q, x, &mut s.pre, &mut s.act);
        let out = output_slice(arch, &s.pre);
        for (k, (o, t)) in out.iter().zip(y).enumerate() {
            let r = o - t;
            sq += r * r;
            s.delta[k] = r * inv_noise;
        }
        let Some(g) = grad.as_deref_mut() else {
            continue;
        };
        for j in (1..=m).rev() {
            let rows = arch.layer_dims[j];
            let cols = arch.layer_dims[j - 1];
            let w0 = arch.weight_offset(j);
            let b0 = arch.bias_offset(j);
            let input: &[f64] = if j == 1 {
                x
            } else {
                &s.act[arch.unit_offset(j - 1)..arch.unit_offset(j)]
            };
            let delta = &s.delta[..rows];
            for (gb, d) in g[b0..b0 + rows].iter_mut().zip(delta) {
                *gb += d;
            }
            if cols == 1 {
                let x0 = input[0];
                for (gw, d) in g[w0..b0].iter_mut().zip(delta) {
                    *gw += d * x0;
                }
            } else {
                for (gw, d) in g[w0..b0].chunks_exact_mut(cols).zip(delta) {
                    for (gc, xc) in gw.iter_mut().zip(input) {
                        *gc += d * xc;
                    }
                }
            }
            if j == 1 {
                break;
            }
            let w = &q[w0..b0];
            let below = arch.unit_offset(j - 1);
            let next = &mut s.delta_next[..cols];
            next.fill(0.0);
            for (row, d) in w.chunks_exact(cols).zip(delta) {
                for (nc, wc) in next.iter_mut().zip(row) {
                    *nc += wc * d;
                }
            }
            match forced {
                Some(p) => {
                    for (c, nc) in next.iter_mut().enumerate() {
                        *nc *= arch.slope_for(p.get(i, below + c));
                    }
                }
                None => {
                    let pre = &s.pre[below..below + cols];
                    let act = &s.act[below..below + cols];
                    for ((nc, z), a) in next.iter_mut().zip(pre).zip(act) {
                        *nc *= arch.derivative_at(*z, *a);
                    }
                }
            }
            std::mem::swap(&mut s.delta, &mut s.delta_next);
        }
    }
    u += 0.5 * sq * inv_noise;
    u
}

impl Potential for PosteriorSpec {
    fn dim(&self) -> usize {
        self.arch().param_dim()
    }

    fn value_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        evaluate(self, q, Some(grad), None)
    }

    fn value(&self, q: &[f64]) -> f64 {
        evaluate(self, q, None, None)
    }

    fn value_difference(&self, from: &[f64], to: &[f64]) -> f64 {
        difference(self, from, to)
    }

    fn locate_crossings(&self, q0: &[f64], direction: &[f64], horizon: f64) -> Vec<SurfaceHit> {
        if !self.arch().activation().is_piecewise_affine() {
            return Vec::new();
        }
        let mut hits = first_layer_hits(self, q0, direction, horizon);
        if self.arch().num_layers() > 2 {
            hits.extend(deep_layer_hits(self, q0, direction, horizon));
        }
        sort_hits(&mut hits);
        hits
    }

    fn one_sided_gradients(&self, z: &[f64], hit: &SurfaceHit) -> (Vec<f64>, Vec<f64>) {
        let SurfaceId::Neuron {
            layer,
            neuron,
            point,
        } = hit.surface
        else {
            let g = self.gradient(z);
            return (g.clone(), g);
        };
        let unit = self.arch().unit_offset(layer) + neuron;
        let mut pattern = activation_pattern(self, z).expect("crossing point has model dimension");
        pattern.set(point, unit, hit.before);
        let before = grad_potential_forced(self, z, &pattern).expect("pattern shape");
        pattern.set(point, unit, hit.after);
        let after = grad_potential_forced(self, z, &pattern).expect("pattern shape");
        (before, after)
    }

    fn surface_value(&self, surface: &SurfaceId, q: &[f64]) -> Option<f64> {
        let SurfaceId::Neuron {
            layer,
            neuron,
            point,
        } = *surface
        else {
            return None;
        };
        if layer == 0 || layer >= self.arch().num_layers() || point >= self.data().len() {
            return None;
        }
        let arch = self.arch();
        let mut s = Scratch::new(arch);
        forward_point(arch, q, self.data().input(point), &mut s.pre, &mut s.act);
        Some(s.pre[arch.unit_offset(layer) + neuron])
    }
}

/// First-layer pre-activations are affine in `q`, hence affine in `t`
/// along the drift: the root is solved in closed form.
fn first_layer_hits(
    spec: &PosteriorSpec,
    q0: &[f64],
    v: &[f64],
    horizon: f64,
) -> Vec<SurfaceHit> {
    let arch = spec.arch();
    let rows = arch.layer_dims[1];
    let cols = arch.layer_dims[0];
    let w0 = arch.weight_offset(1);
    let b0 = arch.bias_offset(1);
    let mut hits = Vec::new();
    for i in 0..spec.data().len() {
        let x = spec.data().input(i);
        for r in 0..rows {
            let mut f0 = q0[b0 + r];
            let mut slope = v[b0 + r];
            for c in 0..cols {
                f0 += q0[w0 + r * cols + c] * x[c];
                slope += v[w0 + r * cols + c] * x[c];
            }
            let f1 = f0 + horizon * slope;
            let (before, after) = (Sign::of(f0), Sign::of(f1));
            if before == Sign::Zero || after == Sign::Zero || before == after {
                continue;
            }
            hits.push(SurfaceHit {
                time: -f0 / slope,
                surface: SurfaceId::Neuron {
                    layer: 1,
                    neuron: r,
                    point: i,
                },
                before,
                after,
            });
        }
    }
    hits
}

fn unit_preactivation(
    spec: &PosteriorSpec,
    scratch: &mut Scratch,
    q0: &[f64],
    v: &[f64],
    t: f64,
    point: usize,
    unit: usize,
    buf: &mut [f64],
) -> f64 {
    for ((b, a), d) in buf.iter_mut().zip(q0).zip(v) {
        *b = a + t * d;
    }
    forward_point(
        spec.arch(),
        buf,
        spec.data().input(point),
        &mut scratch.pre,
        &mut scratch.act,
    );
    scratch.pre[unit]
}

/// Deeper pre-activations are piecewise polynomial along the drift: scan
/// `SCAN_INTERVALS` equal sub-intervals for sign changes, then bisect.
/// Tangential (even-multiplicity) roots inside one sub-interval are missed.
fn deep_layer_hits(spec: &PosteriorSpec, q0: &[f64], v: &[f64], horizon: f64) -> Vec<SurfaceHit> {
    let arch = spec.arch();
    let first_deep = arch.unit_offset(2);
    let hidden = arch.hidden_units();
    let n = spec.data().len();
    let width = hidden - first_deep;
    let k = SCAN_INTERVALS;

    let mut s = Scratch::new(arch);
    let mut buf = vec![0.0; q0.len()];
    // samples[(step·n + point)·width + unit]
    let mut samples = vec![0.0; (k + 1) * n * width];
    for step in 0..=k {
        let t = horizon * step as f64 / k as f64;
        for ((b, a), d) in buf.iter_mut().zip(q0).zip(v) {
            *b = a + t * d;
        }
        for i in 0..n {
            forward_point(arch, &buf, spec.data().input(i), &mut s.pre, &mut s.act);
            let row = (step * n + i) * width;
            samples[row..row + width].copy_from_slice(&s.pre[first_deep..hidden]);
        }
    }

    let mut hits = Vec::new();
    for i in 0..n {
        for u in 0..width {
            let at = |step: usize| samples[(step * n + i) * width + u];
            let unit = first_deep + u;
            let (layer, neuron) = arch.locate_unit(unit);
            let surface = SurfaceId::Neuron {
                layer,
                neuron,
                point: i,
            };
            let mut last: Option<(usize, Sign)> = None;
            for step in 0..=k {
                let sign = Sign::of(at(step));
                if sign == Sign::Zero {
                    continue;
                }
                if let Some((prev_step, prev_sign)) = last {
                    if prev_sign != sign {
                        let time = if prev_step + 1 == step {
                            let mut lo = horizon * prev_step as f64 / k as f64;
                            let mut hi = horizon * step as f64 / k as f64;
                            while hi - lo > BISECTION_TOL * horizon {
                                let mid = 0.5 * (lo + hi);
                                let f = unit_preactivation(spec, &mut s, q0, v, mid, i, unit, &mut buf);
                                if Sign::of(f) == prev_sign {
                                    lo = mid;
                                } else {
                                    hi = mid;
                                }
                            }
                            0.5 * (lo + hi)
                        } else {
                            // exact zero on an interior sample
                            horizon * (prev_step + 1) as f64 / k as f64
                        };
                        hits.push(SurfaceHit {
                            time,
                            surface,
                            before: prev_sign,
                            after: sign,
                        });
                    }
                }
                last = Some((step, sign));
            }
        }
    }
    hits
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::{Activation, RegressionDataset};

    fn tiny(activation: Activation) -> PosteriorSpec {
        let arch = MlpArchitecture::new(vec![1, 1, 1], activation).unwrap();
        let data = RegressionDataset::new(1, 1, vec![0.5], vec![0.5]).unwrap();
        PosteriorSpec::with_defaults(arch, data).unwrap()
    }

    #[test]
    fn relu_identity_net() {
        let arch = MlpArchitecture::new(vec![1, 1, 1], Activation::Relu).unwrap();
        // A_1, b_1, A_2, b_2
        let q = [1.0, 0.0, 1.0, 0.0];
        assert_eq!(forward(&arch, &q, &[-2.0]).unwrap(), vec![0.0]);
        assert_eq!(forward(&arch, &q, &[3.0]).unwrap(), vec![3.0]);
        assert_eq!(forward(&arch, &[0.0; 4], &[7.5]).unwrap(), vec![0.0]);
    }

    #[test]
    fn forward_rejects_bad_shapes() {
        let arch = MlpArchitecture::new(vec![2, 1, 1], Activation::Relu).unwrap();
        assert!(forward(&arch, &[0.0; 5], &[1.0]).is_err());
        assert!(forward(&arch, &[0.0; 4], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn affine_root_preactivation() {
        let arch = MlpArchitecture::new(vec![1, 1, 1], Activation::Relu).unwrap();
        let q = [2.0, -1.0, 0.3, 0.1];
        assert_eq!(preactivations(&arch, &q, &[0.5]).unwrap(), vec![0.0]);
        assert_eq!(preactivations(&arch, &[0.0; 4], &[0.5]).unwrap(), vec![0.0]);
    }

    #[test]
    fn potential_of_prior_only() {
        let arch = MlpArchitecture::new(vec![1, 1, 1], Activation::Relu).unwrap();
        let spec = PosteriorSpec::with_defaults(arch, RegressionDataset::empty(1, 1)).unwrap();
        assert_eq!(potential(&spec, &[0.0; 4]).unwrap(), 0.0);
        let q = [1.0, 1.0, 0.0, 0.0];
        assert_eq!(potential(&spec, &q).unwrap(), 1.0);
        assert_eq!(grad_potential(&spec, &[0.3, -0.2, 1.5, 2.0]).unwrap(), vec![0.3, -0.2, 1.5, 2.0]);
    }

    #[test]
    fn residual_term_with_zero_output() {
        let spec = tiny(Activation::Sigmoid);
        // zero last layer: output is exactly 0, residual 0.5
        let q = [0.7, -0.4, 0.0, 0.0];
        let prior = (0.49 + 0.16) / 2.0;
        let u = potential(&spec, &q).unwrap();
        assert!((u - (prior + 12.5)).abs() < 1e-12, "{u}");
    }

    #[test]
    fn forced_gradient_requires_kinks() {
        let spec = tiny(Activation::Tanh);
        let pat = ActivationPattern::filled(1, 1, Sign::Pos);
        assert!(matches!(
            grad_potential_forced(&spec, &[0.0; 4], &pat),
            Err(Error::UnsupportedActivation(Activation::Tanh))
        ));
        let spec = tiny(Activation::Relu);
        let wrong = ActivationPattern::filled(2, 1, Sign::Pos);
        assert!(grad_potential_forced(&spec, &[0.0; 4], &wrong).is_err());
    }

    #[test]
    fn difference_matches_direct() {
        let spec = tiny(Activation::Relu);
        let a = [0.3, 0.2, -0.5, 0.1];
        let b = [0.31, 0.19, -0.45, 0.12];
        let direct = potential(&spec, &b).unwrap() - potential(&spec, &a).unwrap();
        assert!((potential_difference(&spec, &a, &b).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn surface_value_is_preactivation() {
        let spec = tiny(Activation::Relu);
        let q = [2.0, -0.3, 1.0, 0.0];
        let id = SurfaceId::Neuron {
            layer: 1,
            neuron: 0,
            point: 0,
        };
        assert!((spec.surface_value(&id, &q).unwrap() - 0.7).abs() < 1e-15);
        let out_layer = SurfaceId::Neuron {
            layer: 2,
            neuron: 0,
            point: 0,
        };
        assert_eq!(spec.surface_value(&out_layer, &q), None);
    }
}
