//! Bayesian feed-forward regression networks.
//!
//! Parameters are flattened layer-major: for each layer `j = 1..=M` the
//! weight matrix `A_j` (shape `d_j × d_{j−1}`, row-major) followed by the
//! bias `b_j`. Hidden layers apply the activation; the output layer is affine.
//!
//! The posterior potential is
//! `U(q) = ‖q‖²/(2·prior_scale²) + Σ_i ‖f_q(x_i) − y_i‖²/(2·noise_scale²)`.

mod io;
mod network;

pub use io::{read_params_binary, read_params_csv, write_params_binary, write_params_csv};
pub use network::{
    activation_pattern, forward, grad_potential, grad_potential_forced, potential,
    potential_difference, preactivations,
};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::potential::Sign;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
pub const DEFAULT_PRIOR_SCALE: f64 = 1.0;
pub const DEFAULT_NOISE_SCALE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Relu,
    LeakyRelu,
    Tanh,
}

impl Activation {
    /// ReLU and leaky ReLU: affine on each side of a single kink at 0.
    pub fn is_piecewise_affine(self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu)
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Tanh => "tanh",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            "leaky_relu" | "leaky-relu" | "leaky" => Ok(Activation::LeakyRelu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidConfig(format!("unknown activation {other:?}"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn default_leaky_slope() -> f64 {
    DEFAULT_LEAKY_SLOPE
}

#[derive(Serialize, Deserialize)]
struct ArchitectureDoc {
    layer_dims: Vec<usize>,
    activation: Activation,
    #[serde(default = "default_leaky_slope")]
    leaky_slope: f64,
    #[serde(default)]
    zero_subderivative: f64,
}

/// Layer widths `[d_0, …, d_M]`, the hidden activation, and the value used
/// for the activation derivative exactly at 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArchitectureDoc", into = "ArchitectureDoc")]
pub struct MlpArchitecture {
    layer_dims: Vec<usize>,
    activation: Activation,
    leaky_slope: f64,
    zero_subderivative: f64,
    // layer_offsets[j-1] = start of A_j; last entry = d
    layer_offsets: Vec<usize>,
    // unit_offsets[j-1] = first unit of layer j in the concatenation of layers 1..=M
    unit_offsets: Vec<usize>,
}

impl TryFrom<ArchitectureDoc> for MlpArchitecture {
    type Error = Error;

    fn try_from(doc: ArchitectureDoc) -> Result<Self> {
        MlpArchitecture::build(
            doc.layer_dims,
            doc.activation,
            doc.leaky_slope,
            doc.zero_subderivative,
        )
    }
}

impl From<MlpArchitecture> for ArchitectureDoc {
    fn from(a: MlpArchitecture) -> Self {
        ArchitectureDoc {
            layer_dims: a.layer_dims,
            activation: a.activation,
            leaky_slope: a.leaky_slope,
            zero_subderivative: a.zero_subderivative,
        }
    }
}

impl MlpArchitecture {
    /// Architecture with the default leaky slope (0.01) and `σ'(0) = 0`.
    pub fn new(layer_dims: Vec<usize>, activation: Activation) -> Result<Self> {
        Self::build(layer_dims, activation, DEFAULT_LEAKY_SLOPE, 0.0)
    }

    /// Architecture `[d_in, hidden.., d_out]`.
    pub fn with_hidden(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        Self::new(dims, activation)
    }

    pub fn with_leaky_slope(self, slope: f64) -> Result<Self> {
        let zero = if self.zero_subderivative == self.leaky_slope && self.zero_subderivative != 0.0
        {
            slope
        } else {
            self.zero_subderivative
        };
        Self::build(self.layer_dims, self.activation, slope, zero)
    }

    /// Sets `σ'(0)`; must be 0, 1 or the leaky slope.
    pub fn with_zero_subderivative(self, value: f64) -> Result<Self> {
        Self::build(self.layer_dims, self.activation, self.leaky_slope, value)
    }

    fn build(
        layer_dims: Vec<usize>,
        activation: Activation,
        leaky_slope: f64,
        zero_subderivative: f64,
    ) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidArchitecture(format!(
                "need at least input and output widths, got {layer_dims:?}"
            )));
        }
        if layer_dims.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArchitecture(format!(
                "all layer widths must be ≥ 1, got {layer_dims:?}"
            )));
        }
        if !leaky_slope.is_finite() {
            return Err(Error::InvalidArchitecture("leaky_slope must be finite".into()));
        }
        if !(zero_subderivative == 0.0
            || zero_subderivative == 1.0
            || zero_subderivative == leaky_slope)
        {
            return Err(Error::InvalidArchitecture(format!(
                "zero_subderivative must be 0, 1 or leaky_slope ({leaky_slope}), got {zero_subderivative}"
            )));
        }
        let mut layer_offsets = Vec::with_capacity(layer_dims.len());
        let mut unit_offsets = Vec::with_capacity(layer_dims.len());
        let (mut p, mut u) = (0, 0);
        for w in layer_dims.windows(2) {
            layer_offsets.push(p);
            unit_offsets.push(u);
            p += w[1] * (w[0] + 1);
            u += w[1];
        }
        layer_offsets.push(p);
        unit_offsets.push(u);
        Ok(MlpArchitecture {
            layer_dims,
            activation,
            leaky_slope,
            zero_subderivative,
            layer_offsets,
            unit_offsets,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }
    pub fn activation(&self) -> Activation {
        self.activation
    }
    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }
    pub fn zero_subderivative(&self) -> f64 {
        self.zero_subderivative
    }

    /// Number of affine layers `M`.
    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }
    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }
    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// `d = Σ_j d_j·(d_{j−1} + 1)`.
    pub fn param_dim(&self) -> usize {
        *self.layer_offsets.last().unwrap()
    }

    /// Total number of hidden neurons, `Σ_{j<M} d_j`.
    pub fn hidden_units(&self) -> usize {
        self.unit_offsets[self.num_layers() - 1]
    }

    pub(crate) fn total_units(&self) -> usize {
        *self.unit_offsets.last().unwrap()
    }

    /// Offset of `A_j` in the flat vector, `j` 1-based.
    pub fn weight_offset(&self, layer: usize) -> usize {
        self.layer_offsets[layer - 1]
    }

    /// Offset of `b_j` in the flat vector, `j` 1-based.
    pub fn bias_offset(&self, layer: usize) -> usize {
        self.layer_offsets[layer - 1] + self.layer_dims[layer] * self.layer_dims[layer - 1]
    }

    /// Index of the first unit of layer `j` (1-based) among the
    /// concatenated units of layers `1..=M`. Hidden units come first, so for
    /// `j < M` this is also the offset into an [`ActivationPattern`] row.
    pub fn unit_offset(&self, layer: usize) -> usize {
        self.unit_offsets[layer - 1]
    }

    /// Maps a hidden-unit index back to `(layer, neuron)`.
    pub fn locate_unit(&self, unit: usize) -> (usize, usize) {
        let layer = self.unit_offsets.partition_point(|&o| o <= unit);
        (layer, unit - self.unit_offsets[layer - 1])
    }

    /// Describes flat index `k`: `(layer, is_bias, row, col)`.
    pub fn describe_index(&self, k: usize) -> Option<(usize, bool, usize, usize)> {
        if k >= self.param_dim() {
            return None;
        }
        let layer = self.layer_offsets.partition_point(|&o| o <= k);
        let local = k - self.layer_offsets[layer - 1];
        let cols = self.layer_dims[layer - 1];
        let rows = self.layer_dims[layer];
        if local < rows * cols {
            Some((layer, false, local / cols, local % cols))
        } else {
            Some((layer, true, local - rows * cols, 0))
        }
    }

    #[inline]
    pub fn activate(&self, z: f64) -> f64 {
        match self.activation {
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    self.leaky_slope * z
                }
            }
        }
    }

    /// `σ'(z)`, with the configured value at exactly `z = 0` for the
    /// piecewise-affine activations.
    #[inline]
    pub fn derivative(&self, z: f64) -> f64 {
        match self.activation {
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu | Activation::LeakyRelu => self.slope_for(Sign::of(z)),
        }
    }

    pub(crate) fn activate_slice(&self, pre: &[f64], out: &mut [f64]) {
        match self.activation {
            Activation::Sigmoid => {
                for (o, z) in out.iter_mut().zip(pre) {
                    *o = 1.0 / (1.0 + (-z).exp());
                }
            }
            Activation::Tanh => {
                for (o, z) in out.iter_mut().zip(pre) {
                    *o = z.tanh();
                }
            }
            Activation::Relu => {
                for (o, z) in out.iter_mut().zip(pre) {
                    *o = z.max(0.0);
                }
            }
            Activation::LeakyRelu => {
                let a = self.leaky_slope;
                for (o, z) in out.iter_mut().zip(pre) {
                    *o = if *z > 0.0 { *z } else { a * z };
                }
            }
        }
    }

    /// `σ'(z)` given the already computed `a = σ(z)`.
    #[inline]
    pub(crate) fn derivative_at(&self, z: f64, a: f64) -> f64 {
        match self.activation {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu | Activation::LeakyRelu => self.slope_for(Sign::of(z)),
        }
    }

    /// Derivative flag for a piecewise-affine activation on the given side.
    #[inline]
    pub fn slope_for(&self, sign: Sign) -> f64 {
        match sign {
            Sign::Pos => 1.0,
            Sign::Zero => self.zero_subderivative,
            Sign::Neg => match self.activation {
                Activation::LeakyRelu => self.leaky_slope,
                _ => 0.0,
            },
        }
    }
}

/// Parameters of one affine layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows × cols`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// A flat parameter vector `q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlatParams {
    values: Vec<f64>,
}

impl FlatParams {
    pub fn new(arch: &MlpArchitecture, values: Vec<f64>) -> Result<Self> {
        check_len("parameter vector", arch.param_dim(), values.len())?;
        Ok(FlatParams { values })
    }

    pub fn zeros(arch: &MlpArchitecture) -> Self {
        FlatParams {
            values: vec![0.0; arch.param_dim()],
        }
    }

    pub fn flatten(arch: &MlpArchitecture, layers: &[LayerParams]) -> Result<Self> {
        check_len("layer list", arch.num_layers(), layers.len())?;
        let mut values = Vec::with_capacity(arch.param_dim());
        for (j, layer) in layers.iter().enumerate() {
            let (rows, cols) = (arch.layer_dims[j + 1], arch.layer_dims[j]);
            if layer.rows != rows || layer.cols != cols {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {} is {}×{}, expected {rows}×{cols}",
                    j + 1,
                    layer.rows,
                    layer.cols
                )));
            }
            check_len("weight matrix", rows * cols, layer.weights.len())?;
            check_len("bias vector", rows, layer.bias.len())?;
            values.extend_from_slice(&layer.weights);
            values.extend_from_slice(&layer.bias);
        }
        Ok(FlatParams { values })
    }

    pub fn unflatten(&self, arch: &MlpArchitecture) -> Result<Vec<LayerParams>> {
        check_len("parameter vector", arch.param_dim(), self.values.len())?;
        Ok((1..=arch.num_layers())
            .map(|j| {
                let (rows, cols) = (arch.layer_dims[j], arch.layer_dims[j - 1]);
                let w0 = arch.weight_offset(j);
                let b0 = arch.bias_offset(j);
                LayerParams {
                    rows,
                    cols,
                    weights: self.values[w0..b0].to_vec(),
                    bias: self.values[b0..b0 + rows].to_vec(),
                }
            })
            .collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetDoc {
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

/// `n` input/target pairs stored row-major.
///
/// An empty dataset (`n = 0`) is allowed and turns the posterior into the
/// prior; generated and loaded experiment datasets always have `n ≥ 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatasetDoc", into = "DatasetDoc")]
pub struct RegressionDataset {
    input_dim: usize,
    output_dim: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl TryFrom<DatasetDoc> for RegressionDataset {
    type Error = Error;
    fn try_from(doc: DatasetDoc) -> Result<Self> {
        let input_dim = doc.inputs.first().map_or(0, Vec::len);
        let output_dim = doc.targets.first().map_or(0, Vec::len);
        RegressionDataset::from_rows(input_dim, output_dim, &doc.inputs, &doc.targets)
    }
}

impl From<RegressionDataset> for DatasetDoc {
    fn from(d: RegressionDataset) -> Self {
        DatasetDoc {
            inputs: (0..d.len()).map(|i| d.input(i).to_vec()).collect(),
            targets: (0..d.len()).map(|i| d.target(i).to_vec()).collect(),
        }
    }
}

impl RegressionDataset {
    pub fn new(
        input_dim: usize,
        output_dim: usize,
        inputs: Vec<f64>,
        targets: Vec<f64>,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidDataset("widths must be ≥ 1".into()));
        }
        if inputs.len() % input_dim != 0 || targets.len() % output_dim != 0 {
            return Err(Error::InvalidDataset("ragged input or target buffer".into()));
        }
        if inputs.len() / input_dim != targets.len() / output_dim {
            return Err(Error::InvalidDataset(format!(
                "{} inputs but {} targets",
                inputs.len() / input_dim,
                targets.len() / output_dim
            )));
        }
        if inputs.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite entry".into()));
        }
        Ok(RegressionDataset {
            input_dim,
            output_dim,
            inputs,
            targets,
        })
    }

    pub fn from_rows(
        input_dim: usize,
        output_dim: usize,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
    ) -> Result<Self> {
        if inputs.iter().any(|r| r.len() != input_dim)
            || targets.iter().any(|r| r.len() != output_dim)
        {
            return Err(Error::InvalidDataset("rows of unequal width".into()));
        }
        Self::new(
            input_dim,
            output_dim,
            inputs.concat(),
            targets.concat(),
        )
    }

    /// Empty dataset with the given widths.
    pub fn empty(input_dim: usize, output_dim: usize) -> Self {
        RegressionDataset {
            input_dim,
            output_dim,
            inputs: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        if self.input_dim == 0 {
            0
        } else {
            self.inputs.len() / self.input_dim
        }
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }
    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }
    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.output_dim..(i + 1) * self.output_dim]
    }
}

fn default_prior_scale() -> f64 {
    DEFAULT_PRIOR_SCALE
}
fn default_noise_scale() -> f64 {
    DEFAULT_NOISE_SCALE
}

#[derive(Serialize, Deserialize)]
struct PosteriorDoc {
    arch: MlpArchitecture,
    data: RegressionDataset,
    #[serde(default = "default_prior_scale")]
    prior_scale: f64,
    #[serde(default = "default_noise_scale")]
    noise_scale: f64,
}

/// Network posterior: isotropic normal prior and Gaussian likelihood.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PosteriorDoc", into = "PosteriorDoc")]
pub struct PosteriorSpec {
    arch: MlpArchitecture,
    data: RegressionDataset,
    prior_scale: f64,
    noise_scale: f64,
}

impl TryFrom<PosteriorDoc> for PosteriorSpec {
    type Error = Error;
    fn try_from(d: PosteriorDoc) -> Result<Self> {
        PosteriorSpec::new(d.arch, d.data, d.prior_scale, d.noise_scale)
    }
}

impl From<PosteriorSpec> for PosteriorDoc {
    fn from(s: PosteriorSpec) -> Self {
        PosteriorDoc {
            arch: s.arch,
            data: s.data,
            prior_scale: s.prior_scale,
            noise_scale: s.noise_scale,
        }
    }
}

impl PosteriorSpec {
    pub fn new(
        arch: MlpArchitecture,
        data: RegressionDataset,
        prior_scale: f64,
        noise_scale: f64,
    ) -> Result<Self> {
        if !(prior_scale > 0.0 && prior_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "prior_scale must be > 0, got {prior_scale}"
            )));
        }
        if !(noise_scale > 0.0 && noise_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise_scale must be > 0, got {noise_scale}"
            )));
        }
        // an empty dataset carries no widths worth checking
        if !data.is_empty() {
            check_len("dataset input width", arch.input_dim(), data.input_dim())?;
            check_len("dataset target width", arch.output_dim(), data.output_dim())?;
        }
        Ok(PosteriorSpec {
            arch,
            data,
            prior_scale,
            noise_scale,
        })
    }

    /// Default scales: `prior_scale = 1`, `noise_scale = 0.1`.
    pub fn with_defaults(arch: MlpArchitecture, data: RegressionDataset) -> Result<Self> {
        Self::new(arch, data, DEFAULT_PRIOR_SCALE, DEFAULT_NOISE_SCALE)
    }

    pub fn arch(&self) -> &MlpArchitecture {
        &self.arch
    }
    pub fn data(&self) -> &RegressionDataset {
        &self.data
    }
    pub fn prior_scale(&self) -> f64 {
        self.prior_scale
    }
    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }
    pub fn dim(&self) -> usize {
        self.arch.param_dim()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// A draw from the prior `N(0, prior_scale²·I)`.
    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim())
            .map(|_| self.prior_scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

/// Per data point, per hidden neuron: the sign of the pre-activation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivationPattern {
    n_points: usize,
    n_hidden: usize,
    signs: Vec<Sign>,
}

impl ActivationPattern {
    pub fn new(n_points: usize, n_hidden: usize, signs: Vec<Sign>) -> Result<Self> {
        check_len("activation pattern", n_points * n_hidden, signs.len())?;
        Ok(ActivationPattern {
            n_points,
            n_hidden,
            signs,
        })
    }

    pub fn filled(n_points: usize, n_hidden: usize, sign: Sign) -> Self {
        ActivationPattern {
            n_points,
            n_hidden,
            signs: vec![sign; n_points * n_hidden],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_points, self.n_hidden)
    }

    pub fn get(&self, point: usize, unit: usize) -> Sign {
        self.signs[point * self.n_hidden + unit]
    }

    pub fn set(&mut self, point: usize, unit: usize, sign: Sign) {
        self.signs[point * self.n_hidden + unit] = sign;
    }

    pub fn row(&self, point: usize) -> &[Sign] {
        &self.signs[point * self.n_hidden..(point + 1) * self.n_hidden]
    }
}
