//! Time-conditioned MLP denoiser.
//!
//! Layout: `[z, embed(t)] -> (Linear -> SiLU) x hidden -> Linear`. Weights are
//! stored `out x in`, row-major. The post-activation output of hidden layer
//! `feature_tap` is exposed as the intermediate feature used by feature-based
//! distillation.

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::Parameters;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x / (1.0 + (-x).exp()),
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
        }
    }
}

/// Shape description of a [`DenoiserNet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub time_embed_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub feature_tap: usize,
    pub activation: Activation,
}

impl Architecture {
    /// Architecture with the given hidden widths and the feature tap on the
    /// middle hidden layer.
    pub fn new(input_dim: usize, time_embed_dim: usize, hidden_dims: Vec<usize>) -> Self {
        let feature_tap = hidden_dims.len() / 2;
        Self {
            input_dim,
            time_embed_dim,
            hidden_dims,
            feature_tap,
            activation: Activation::Silu,
        }
    }

    pub fn teacher() -> Self {
        Self::new(2, 32, vec![128, 128, 128])
    }

    pub fn student() -> Self {
        Self::new(2, 32, vec![64, 64, 64])
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be positive".into()));
        }
        if self.time_embed_dim == 0 || !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "time_embed_dim must be positive and even, got {}",
                self.time_embed_dim
            )));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "hidden_dims must be a non-empty list of positive widths, got {:?}",
                self.hidden_dims
            )));
        }
        if self.feature_tap >= self.hidden_dims.len() {
            return Err(Error::InvalidArgument(format!(
                "feature_tap {} out of range for {} hidden layers",
                self.feature_tap,
                self.hidden_dims.len()
            )));
        }
        Ok(())
    }

    /// `(in, out)` width of every affine layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut width = self.input_dim + self.time_embed_dim;
        for &h in &self.hidden_dims {
            shapes.push((width, h));
            width = h;
        }
        shapes.push((width, self.input_dim));
        shapes
    }

    pub fn feature_width(&self) -> usize {
        self.hidden_dims[self.feature_tap]
    }

    /// Copy with every hidden width divided by `factor` (at least 1).
    pub fn scaled_width(&self, factor: usize) -> Self {
        let mut arch = self.clone();
        arch.hidden_dims = self.hidden_dims.iter().map(|h| (h / factor).max(1)).collect();
        arch
    }
}

/// Sinusoidal timestep embedding: entry `2k` is `sin(t / 10000^(2k/dim))`,
/// entry `2k+1` the matching cosine.
pub fn time_embedding(t: usize, total_steps: usize, dim: usize) -> Result<Vec<f64>> {
    if !dim.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("embedding width must be even, got {dim}")));
    }
    if t >= total_steps {
        return Err(Error::InvalidArgument(format!(
            "timestep {t} out of range [0, {total_steps})"
        )));
    }
    let mut out = vec![0.0; dim];
    write_embedding(t, &mut out);
    Ok(out)
}

fn write_embedding(t: usize, out: &mut [f64]) {
    let dim = out.len();
    let t = t as f64;
    for (k, pair) in out.chunks_exact_mut(2).enumerate() {
        let freq = 10000f64.powf((2 * k) as f64 / dim as f64);
        let arg = t / freq;
        pair[0] = arg.sin();
        pair[1] = arg.cos();
    }
}

/// One affine layer, `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn mac_count(&self) -> usize {
        self.weight.len()
    }

    fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }
}

/// Activation record of one [`DenoiserNet::forward`] call.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to every affine layer; `inputs[l + 1]` is the post-activation of hidden layer `l`.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of every hidden layer.
    pre: Vec<Array2<f64>>,
    shapes: Vec<(usize, usize)>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].nrows()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub eps: Array2<f64>,
    pub feature: Array2<f64>,
    pub cache: ForwardCache,
}

/// Per-parameter gradients mirroring a [`DenoiserNet`]'s layers.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub layers: Vec<Linear>,
    /// Cotangent that was injected at the tapped feature, if any.
    pub feature: Option<Array2<f64>>,
}

impl GradBundle {
    pub fn zeros_like(net: &DenoiserNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Linear::zeros(l.input_dim(), l.output_dim()))
                .collect(),
            feature: None,
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            layer.weight *= factor;
            layer.bias *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNet {
    arch: Architecture,
    layers: Vec<Linear>,
}

impl DenoiserNet {
    /// All-zero parameters.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| Linear::zeros(i, o))
            .collect();
        Ok(Self { arch, layers })
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization for weights and biases.
    pub fn new(arch: Architecture, rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.input_dim() as f64).sqrt();
            layer
                .weight
                .mapv_inplace(|_| rng.random_range(-bound..bound));
            layer.bias.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        Ok(net)
    }

    /// Rebuild from raw layers, checking them against `arch`.
    pub fn from_layers(arch: Architecture, layers: Vec<Linear>) -> Result<Self> {
        arch.validate()?;
        let layers: Vec<Linear> = layers
            .into_iter()
            .map(|l| Linear {
                weight: l.weight.as_standard_layout().into_owned(),
                bias: l.bias.as_standard_layout().into_owned(),
            })
            .collect();
        let shapes = arch.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::shape("DenoiserNet::from_layers", shapes.len(), layers.len()));
        }
        for (&(i, o), layer) in shapes.iter().zip(&layers) {
            if layer.weight.dim() != (o, i) || layer.bias.len() != o {
                return Err(Error::shape(
                    "DenoiserNet::from_layers",
                    format!("{o}x{i}"),
                    format!("{:?}", layer.weight.dim()),
                ));
            }
        }
        Ok(Self { arch, layers })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn count_params(&self) -> usize {
        self.layers.iter().map(Linear::param_count).sum()
    }

    pub fn count_macs(&self) -> usize {
        self.layers.iter().map(Linear::mac_count).sum()
    }

    fn check_same_architecture(&self, other: &DenoiserNet) -> Result<()> {
        if self.arch != other.arch {
            return Err(Error::ArchitectureMismatch(format!(
                "{:?} vs {:?}",
                self.arch.hidden_dims, other.arch.hidden_dims
            )));
        }
        Ok(())
    }

    fn network_input(&self, z: &ArrayView2<f64>, t: &[usize], total_steps: usize) -> Result<Array2<f64>> {
        let d = self.arch.input_dim;
        if z.ncols() != d {
            return Err(Error::shape("DenoiserNet input width", d, z.ncols()));
        }
        if z.nrows() != t.len() {
            return Err(Error::shape("DenoiserNet timestep batch", z.nrows(), t.len()));
        }
        let e = self.arch.time_embed_dim;
        let mut x = Array2::zeros((z.nrows(), d + e));
        for (row, (zr, &ti)) in x.rows_mut().into_iter().zip(z.rows().into_iter().zip(t)) {
            if ti >= total_steps {
                return Err(Error::InvalidArgument(format!(
                    "timestep {ti} out of range [0, {total_steps})"
                )));
            }
            let row = row.into_slice().expect("fresh array is contiguous");
            for (dst, src) in row[..d].iter_mut().zip(zr.iter()) {
                *dst = *src;
            }
            write_embedding(ti, &mut row[d..]);
        }
        Ok(x)
    }

    /// Forward pass keeping the activation record needed by [`Self::backward`].
    pub fn forward(&self, z: ArrayView2<f64>, t: &[usize], total_steps: usize) -> Result<ForwardOutput> {
        let act = self.arch.activation;
        let hidden = self.arch.hidden_dims.len();
        let mut inputs = Vec::with_capacity(hidden + 1);
        let mut pre = Vec::with_capacity(hidden);
        inputs.push(self.network_input(&z, t, total_steps)?);
        for layer in &self.layers[..hidden] {
            let p = layer.apply(&inputs.last().expect("non-empty").view());
            inputs.push(p.mapv(|v| act.apply(v)));
            pre.push(p);
        }
        let eps = self.layers[hidden].apply(&inputs[hidden].view());
        let feature = inputs[self.arch.feature_tap + 1].clone();
        Ok(ForwardOutput {
            eps,
            feature,
            cache: ForwardCache {
                inputs,
                pre,
                shapes: self.arch.layer_shapes(),
            },
        })
    }

    /// Forward pass returning the noise prediction and the tapped feature, without a cache.
    pub fn predict_with_feature(
        &self,
        z: ArrayView2<f64>,
        t: &[usize],
        total_steps: usize,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let act = self.arch.activation;
        let hidden = self.arch.hidden_dims.len();
        let mut h = self.network_input(&z, t, total_steps)?;
        let mut feature = None;
        for (l, layer) in self.layers[..hidden].iter().enumerate() {
            h = layer.apply(&h.view());
            h.mapv_inplace(|v| act.apply(v));
            if l == self.arch.feature_tap {
                feature = Some(h.clone());
            }
        }
        let eps = self.layers[hidden].apply(&h.view());
        Ok((eps, feature.expect("feature_tap validated")))
    }

    /// Noise prediction only.
    pub fn predict(&self, z: ArrayView2<f64>, t: &[usize], total_steps: usize) -> Result<Array2<f64>> {
        let act = self.arch.activation;
        let hidden = self.arch.hidden_dims.len();
        let mut h = self.network_input(&z, t, total_steps)?;
        for layer in &self.layers[..hidden] {
            h = layer.apply(&h.view());
            h.mapv_inplace(|v| act.apply(v));
        }
        Ok(self.layers[hidden].apply(&h.view()))
    }

    /// Exact gradients of `<d_eps, eps> + <d_feature, feature>` with respect to every parameter.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_eps: ArrayView2<f64>,
        d_feature: Option<ArrayView2<f64>>,
    ) -> Result<GradBundle> {
        if cache.shapes != self.arch.layer_shapes() {
            return Err(Error::ArchitectureMismatch(
                "activation record was produced by a different architecture".into(),
            ));
        }
        let batch = cache.batch_size();
        if d_eps.dim() != (batch, self.arch.input_dim) {
            return Err(Error::shape(
                "backward d_eps",
                format!("{batch}x{}", self.arch.input_dim),
                format!("{:?}", d_eps.dim()),
            ));
        }
        let tap = self.arch.feature_tap;
        if let Some(df) = &d_feature {
            let expected = (batch, self.arch.feature_width());
            if df.dim() != expected {
                return Err(Error::shape("backward d_feature", format!("{expected:?}"), format!("{:?}", df.dim())));
            }
        }

        let act = self.arch.activation;
        let hidden = self.arch.hidden_dims.len();
        let mut grads = Vec::with_capacity(hidden + 1);

        // Cotangent of the current layer's output.
        let mut d_out = d_eps.to_owned();
        for l in (0..=hidden).rev() {
            if l < hidden {
                // d_out is the cotangent of hidden layer l's post-activation.
                if l == tap {
                    if let Some(df) = &d_feature {
                        d_out += df;
                    }
                }
                ndarray::Zip::from(&mut d_out)
                    .and(&cache.pre[l])
                    .for_each(|g, &p| *g *= act.derivative(p));
            }
            let input = &cache.inputs[l];
            let weight = d_out.t().dot(input);
            let bias = d_out.sum_axis(Axis(0));
            if l > 0 {
                let next = d_out.dot(&self.layers[l].weight);
                grads.push(Linear { weight, bias });
                d_out = next;
            } else {
                grads.push(Linear { weight, bias });
            }
        }
        grads.reverse();
        Ok(GradBundle {
            layers: grads,
            feature: d_feature.map(|f| f.to_owned()),
        })
    }

    /// `ema <- decay * ema + (1 - decay) * net`, parameter-wise.
    pub fn ema_update(&mut self, net: &DenoiserNet, decay: f64) -> Result<()> {
        self.check_same_architecture(net)?;
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::InvalidArgument(format!("ema decay {decay} outside [0, 1]")));
        }
        let keep = 1.0 - decay;
        for (dst, src) in self.tensors_mut().into_iter().zip(net.tensors()) {
            for (e, &c) in dst.iter_mut().zip(src) {
                *e = decay * *e + keep * c;
            }
        }
        Ok(())
    }

    /// Parameter-wise convex combination of `nets` with `weights`.
    ///
    /// Evaluated as `theta_a + sum_i w_i (theta_i - theta_a)` around the
    /// heaviest net `a`, so one-hot weights and identical nets reproduce their
    /// input bit for bit.
    pub fn weighted_average(nets: &[&DenoiserNet], weights: &[f64]) -> Result<DenoiserNet> {
        let first = nets
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot average an empty set of networks".into()))?;
        if nets.len() != weights.len() {
            return Err(Error::shape("weighted_average weights", nets.len(), weights.len()));
        }
        for net in nets {
            first.check_same_architecture(net)?;
        }
        let anchor = weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .expect("non-empty");
        let mut out = nets[anchor].clone();
        let base = nets[anchor].tensors();
        for (i, (net, &w)) in nets.iter().zip(weights).enumerate() {
            if i == anchor || w == 0.0 {
                continue;
            }
            for ((dst, src), b) in out.tensors_mut().into_iter().zip(net.tensors()).zip(&base) {
                for ((o, &v), &a) in dst.iter_mut().zip(src).zip(b.iter()) {
                    *o += w * (v - a);
                }
            }
        }
        Ok(out)
    }

    /// Structured pruning down to `arch`: each hidden layer keeps the units
    /// whose incoming weights have the largest L2 norm, in their original
    /// order, and the following layer drops the matching input columns.
    pub fn prune_to(&self, arch: Architecture) -> Result<DenoiserNet> {
        arch.validate()?;
        let src = &self.arch;
        if arch.input_dim != src.input_dim
            || arch.time_embed_dim != src.time_embed_dim
            || arch.activation != src.activation
            || arch.hidden_dims.len() != src.hidden_dims.len()
            || arch.hidden_dims.iter().zip(&src.hidden_dims).any(|(a, b)| a > b)
        {
            return Err(Error::ArchitectureMismatch(format!(
                "cannot prune {:?} down to {:?}",
                src.hidden_dims, arch.hidden_dims
            )));
        }
        let mut kept_inputs: Vec<usize> = (0..src.input_dim + src.time_embed_dim).collect();
        let mut layers = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let kept_outputs: Vec<usize> = match arch.hidden_dims.get(k) {
                Some(&width) => {
                    let mut order: Vec<usize> = (0..layer.output_dim()).collect();
                    let norm = |r: usize| layer.weight.row(r).dot(&layer.weight.row(r));
                    order.sort_by(|&a, &b| norm(b).total_cmp(&norm(a)).then(a.cmp(&b)));
                    order.truncate(width);
                    order.sort_unstable();
                    order
                }
                None => (0..layer.output_dim()).collect(),
            };
            let weight = layer
                .weight
                .select(Axis(0), &kept_outputs)
                .select(Axis(1), &kept_inputs);
            let bias = layer.bias.select(Axis(0), &kept_outputs);
            layers.push(Linear { weight, bias });
            kept_inputs = kept_outputs;
        }
        Self::from_layers(arch, layers)
    }

    pub fn concat_batches(parts: &[Array2<f64>]) -> Array2<f64> {
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        concatenate(Axis(0), &views).expect("row batches share a width")
    }
}

fn linear_tensors(layers: &[Linear]) -> Vec<&[f64]> {
    layers
        .iter()
        .flat_map(|l| {
            [
                l.weight.as_slice().expect("standard layout"),
                l.bias.as_slice().expect("standard layout"),
            ]
        })
        .collect()
}

fn linear_tensors_mut(layers: &mut [Linear]) -> Vec<&mut [f64]> {
    layers
        .iter_mut()
        .flat_map(|l| {
            [
                l.weight.as_slice_mut().expect("standard layout"),
                l.bias.as_slice_mut().expect("standard layout"),
            ]
        })
        .collect()
}

impl Parameters for DenoiserNet {
    fn tensors(&self) -> Vec<&[f64]> {
        linear_tensors(&self.layers)
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        linear_tensors_mut(&mut self.layers)
    }
}

impl Parameters for GradBundle {
    fn tensors(&self) -> Vec<&[f64]> {
        linear_tensors(&self.layers)
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        linear_tensors_mut(&mut self.layers)
    }
}
