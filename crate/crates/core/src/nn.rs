//! Minimal dense-network engine: explicit forward/backward passes over
//! row-major `f32` tensors, Adam updates, and Polyak target averaging.
//!
//! All batches are `(rows = samples, cols = features)`. Weight matrices are
//! stored `(in, out)` so a layer computes `y = act(x @ W + b)`.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
}

/// Output-layer nonlinearity. Actors use `Tanh` to bound actions; critics and
/// statistics networks use `Linear`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Linear,
    Tanh,
}

/// Architecture of a dense network: layer widths plus activations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(
        layer_sizes: Vec<usize>,
        hidden_activation: Activation,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Usage(format!(
                "spec needs at least an input and an output size, got {:?}",
                layer_sizes
            )));
        }
        if layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::Usage("layer sizes must be positive".into()));
        }
        Ok(Self {
            layer_sizes,
            hidden_activation,
            output_activation,
        })
    }

    /// Convenience constructor: `input -> hidden... -> output` with ReLU hidden units.
    pub fn with_relu_hidden(
        input: usize,
        hidden: &[usize],
        output: usize,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self::new(sizes, Activation::Relu, output_activation)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }
}

/// A shaped block of 32-bit parameters, flattened row-major. The unit of
/// checkpoint serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl ParamTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} implies {} values, got {}",
                shape,
                expected,
                values.len()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            shape: vec![1],
            values: vec![value],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Dense feed-forward network with explicit parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    weights: Vec<Array2<f32>>,
    biases: Vec<Array1<f32>>,
}

/// Post-activation values of every layer for one forward pass, input included.
/// Required by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    activations: Vec<Array2<f32>>,
}

impl MlpCache {
    pub fn batch_rows(&self) -> usize {
        self.activations[0].nrows()
    }

    pub fn output(&self) -> &Array2<f32> {
        self.activations.last().unwrap()
    }
}

/// Gradients matching an [`Mlp`]'s parameters, plus the gradient with respect
/// to the network input (used to chain critics into actors).
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f32>>,
    pub biases: Vec<Array1<f32>>,
    pub input: Array2<f32>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp, batch_rows: usize) -> Self {
        Self {
            weights: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.dim())).collect(),
            input: Array2::zeros((batch_rows, net.input_dim())),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Elementwise sum of parameter gradients. Input gradients are dropped.
    pub fn add(&mut self, other: &MlpGrads) -> Result<()> {
        if self.weights.len() != other.weights.len() {
            return Err(Error::Dimension("gradient layer counts differ".into()));
        }
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            if a.dim() != b.dim() {
                return Err(Error::Dimension("gradient shapes differ".into()));
            }
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f32) {
        for w in &mut self.weights {
            w.mapv_inplace(|v| v * factor);
        }
        for b in &mut self.biases {
            b.mapv_inplace(|v| v * factor);
        }
    }
}

fn apply_hidden(a: Activation, z: &mut Array2<f32>) {
    match a {
        Activation::Relu => z.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 }),
        Activation::Tanh => z.mapv_inplace(f32::tanh),
    }
}

fn apply_output(a: OutputActivation, z: &mut Array2<f32>) {
    match a {
        OutputActivation::Linear => {}
        OutputActivation::Tanh => z.mapv_inplace(f32::tanh),
    }
}

/// Derivative of the activation expressed through its post-activation value.
fn hidden_derivative(a: Activation, post: f32) -> f32 {
    match a {
        Activation::Relu => {
            if post > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => 1.0 - post * post,
    }
}

fn output_derivative(a: OutputActivation, post: f32) -> f32 {
    match a {
        OutputActivation::Linear => 1.0,
        OutputActivation::Tanh => 1.0 - post * post,
    }
}

impl Mlp {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(spec: MlpSpec, rng: &mut impl Rng) -> Self {
        let mut weights = Vec::with_capacity(spec.num_layers());
        let mut biases = Vec::with_capacity(spec.num_layers());
        for l in 0..spec.num_layers() {
            let fan_in = spec.layer_sizes[l];
            let fan_out = spec.layer_sizes[l + 1];
            let bound = 1.0 / (fan_in as f32).sqrt();
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-bound..bound));
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Self {
            spec,
            weights,
            biases,
        }
    }

    pub fn zeros(spec: MlpSpec) -> Self {
        let weights = (0..spec.num_layers())
            .map(|l| Array2::zeros((spec.layer_sizes[l], spec.layer_sizes[l + 1])))
            .collect();
        let biases = (0..spec.num_layers())
            .map(|l| Array1::zeros(spec.layer_sizes[l + 1]))
            .collect();
        Self {
            spec,
            weights,
            biases,
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn forward(&self, batch: &Array2<f32>) -> Result<Array2<f32>> {
        Ok(self.forward_cached(batch)?.0)
    }

    pub fn forward_cached(&self, batch: &Array2<f32>) -> Result<(Array2<f32>, MlpCache)> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "batch has {} columns, network expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        let n_layers = self.spec.num_layers();
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(batch.clone());
        for l in 0..n_layers {
            let mut z = activations[l].dot(&self.weights[l]);
            z += &self.biases[l];
            if l + 1 < n_layers {
                apply_hidden(self.spec.hidden_activation, &mut z);
            } else {
                apply_output(self.spec.output_activation, &mut z);
            }
            activations.push(z);
        }
        let output = activations.last().unwrap().clone();
        Ok((output, MlpCache { activations }))
    }

    /// Backpropagate `upstream = dL/d(output)` through the cached pass.
    ///
    /// The cache must come from a `forward_cached` call on this network with
    /// the same batch; a cache of the wrong shape is rejected as a usage error.
    pub fn backward(&self, cache: &MlpCache, upstream: &Array2<f32>) -> Result<MlpGrads> {
        let n_layers = self.spec.num_layers();
        if cache.activations.len() != n_layers + 1
            || cache
                .activations
                .iter()
                .zip(&self.spec.layer_sizes)
                .any(|(a, &w)| a.ncols() != w)
        {
            return Err(Error::Usage(
                "cached activations do not match this network; run forward_cached first".into(),
            ));
        }
        if upstream.nrows() != cache.batch_rows() {
            return Err(Error::Usage(
                "upstream gradient rows do not match the cached batch".into(),
            ));
        }
        if upstream.ncols() != self.output_dim() {
            return Err(Error::Dimension(format!(
                "upstream gradient has {} columns, output has {}",
                upstream.ncols(),
                self.output_dim()
            )));
        }

        let mut weight_grads = vec![Array2::zeros((0, 0)); n_layers];
        let mut bias_grads = vec![Array1::zeros(0); n_layers];
        let mut grad = upstream.clone();
        for l in (0..n_layers).rev() {
            let post = &cache.activations[l + 1];
            let mut dz = grad;
            if l + 1 < n_layers {
                let act = self.spec.hidden_activation;
                dz.zip_mut_with(post, |g, &p| *g *= hidden_derivative(act, p));
            } else {
                let act = self.spec.output_activation;
                dz.zip_mut_with(post, |g, &p| *g *= output_derivative(act, p));
            }
            weight_grads[l] = cache.activations[l].t().dot(&dz);
            bias_grads[l] = dz.sum_axis(Axis(0));
            grad = dz.dot(&self.weights[l].t());
        }
        Ok(MlpGrads {
            weights: weight_grads,
            biases: bias_grads,
            input: grad,
        })
    }

    /// Flatten parameters to tensors in layer order: `w0, b0, w1, b1, ...`.
    pub fn to_tensors(&self) -> Vec<ParamTensor> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(ParamTensor {
                shape: vec![w.nrows(), w.ncols()],
                values: w.iter().copied().collect(),
            });
            out.push(ParamTensor {
                shape: vec![b.len()],
                values: b.to_vec(),
            });
        }
        out
    }

    pub fn from_tensors(spec: MlpSpec, tensors: &[ParamTensor]) -> Result<Self> {
        if tensors.len() != 2 * spec.num_layers() {
            return Err(Error::Dimension(format!(
                "expected {} tensors for spec, got {}",
                2 * spec.num_layers(),
                tensors.len()
            )));
        }
        let mut net = Mlp::zeros(spec);
        for l in 0..net.spec.num_layers() {
            let w = &tensors[2 * l];
            let b = &tensors[2 * l + 1];
            let expect_w = [net.spec.layer_sizes[l], net.spec.layer_sizes[l + 1]];
            if w.shape != expect_w {
                return Err(Error::Dimension(format!(
                    "weight tensor {} has shape {:?}, expected {:?}",
                    l, w.shape, expect_w
                )));
            }
            if b.shape != [net.spec.layer_sizes[l + 1]] {
                return Err(Error::Dimension(format!(
                    "bias tensor {} has shape {:?}, expected [{}]",
                    l,
                    b.shape,
                    net.spec.layer_sizes[l + 1]
                )));
            }
            net.weights[l] =
                Array2::from_shape_vec((expect_w[0], expect_w[1]), w.values.clone()).unwrap();
            net.biases[l] = Array1::from_vec(b.values.clone());
        }
        Ok(net)
    }

    /// Mutable access for optimizers; visits parameters in the fixed
    /// `w0, b0, w1, b1, ...` order.
    fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f32)) {
        for l in 0..self.weights.len() {
            for v in self.weights[l].iter_mut() {
                f(v);
            }
            for v in self.biases[l].iter_mut() {
                f(v);
            }
        }
    }

    fn shapes_match(&self, other: &Mlp) -> bool {
        self.spec.layer_sizes == other.spec.layer_sizes
    }
}

/// Adam optimizer state for one network's parameter set.
#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: Vec<f32>,
    second_moment: Vec<f32>,
    step_count: u64,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl AdamState {
    pub fn new(param_count: usize, learning_rate: f32) -> Self {
        Self {
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn for_net(net: &Mlp, learning_rate: f32) -> Self {
        Self::new(net.param_count(), learning_rate)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn param_count(&self) -> usize {
        self.first_moment.len()
    }
}

/// One Adam update with bias-corrected moments. Rejects non-finite gradients
/// without touching parameters or state.
pub fn adam_step(params: &mut Mlp, grads: &MlpGrads, state: &mut AdamState) -> Result<()> {
    if grads.weights.len() != params.weights.len()
        || grads
            .weights
            .iter()
            .zip(&params.weights)
            .any(|(g, w)| g.dim() != w.dim())
        || grads
            .biases
            .iter()
            .zip(&params.biases)
            .any(|(g, b)| g.dim() != b.dim())
    {
        return Err(Error::Dimension(
            "gradient shapes do not match parameters".into(),
        ));
    }
    if state.param_count() != params.param_count() {
        return Err(Error::Dimension(
            "optimizer state sized for a different parameter count".into(),
        ));
    }
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient; update rejected".into()));
    }

    state.step_count += 1;
    let t = state.step_count as f64;
    let bc1 = 1.0 - (state.beta1 as f64).powi(t as i32) as f32;
    let bc2 = 1.0 - (state.beta2 as f64).powi(t as i32) as f32;
    let (lr, b1, b2, eps) = (
        state.learning_rate,
        state.beta1,
        state.beta2,
        state.epsilon,
    );

    let mut idx = 0usize;
    let m = &mut state.first_moment;
    let v = &mut state.second_moment;
    let mut grad_iter = grads
        .weights
        .iter()
        .zip(&grads.biases)
        .flat_map(|(w, b)| w.iter().chain(b.iter()))
        .copied();
    params.for_each_param_mut(|p| {
        let g = grad_iter.next().expect("gradient/parameter count mismatch");
        m[idx] = b1 * m[idx] + (1.0 - b1) * g;
        v[idx] = b2 * v[idx] + (1.0 - b2) * g * g;
        let m_hat = m[idx] / bc1;
        let v_hat = v[idx] / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
        idx += 1;
    });
    debug_assert!(params.is_finite());
    Ok(())
}

/// Double-precision re-implementation of the forward pass, independent of
/// the f32 path. Backs the finite-difference gradient checks: perturbations
/// and arithmetic stay in f64 so the oracle is not limited by f32 rounding.
pub mod reference {
    use super::{Activation, Mlp, OutputActivation};

    pub struct ReferenceNet {
        layer_sizes: Vec<usize>,
        hidden_activation: Activation,
        output_activation: OutputActivation,
        /// Flat parameters in `w0, b0, w1, b1, ...` order, weights row-major.
        params: Vec<f64>,
    }

    impl ReferenceNet {
        pub fn from_mlp(net: &Mlp) -> Self {
            let params = net
                .to_tensors()
                .iter()
                .flat_map(|t| t.values.iter().map(|&v| v as f64))
                .collect();
            Self {
                layer_sizes: net.spec.layer_sizes.clone(),
                hidden_activation: net.spec.hidden_activation,
                output_activation: net.spec.output_activation,
                params,
            }
        }

        pub fn param_count(&self) -> usize {
            self.params.len()
        }

        pub fn nudge(&mut self, index: usize, delta: f64) {
            self.params[index] += delta;
        }

        pub fn forward(&self, input: &[f64]) -> Vec<f64> {
            let mut a = input.to_vec();
            let n_layers = self.layer_sizes.len() - 1;
            let mut offset = 0;
            for l in 0..n_layers {
                let n_in = self.layer_sizes[l];
                let n_out = self.layer_sizes[l + 1];
                let w = &self.params[offset..offset + n_in * n_out];
                let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
                offset += n_in * n_out + n_out;
                let mut z = vec![0.0; n_out];
                for (j, zj) in z.iter_mut().enumerate() {
                    let mut acc = b[j];
                    for (i, &ai) in a.iter().enumerate() {
                        acc += ai * w[i * n_out + j];
                    }
                    *zj = acc;
                }
                let last = l + 1 == n_layers;
                for v in &mut z {
                    *v = if last {
                        match self.output_activation {
                            OutputActivation::Linear => *v,
                            OutputActivation::Tanh => v.tanh(),
                        }
                    } else {
                        match self.hidden_activation {
                            Activation::Relu => v.max(0.0),
                            Activation::Tanh => v.tanh(),
                        }
                    };
                }
                a = z;
            }
            a
        }
    }

    /// Central finite difference of `loss` over every parameter of `net`.
    pub fn finite_difference_grads(
        net: &Mlp,
        step: f64,
        loss: impl Fn(&ReferenceNet) -> f64,
    ) -> Vec<f64> {
        let reference = ReferenceNet::from_mlp(net);
        let mut grads = Vec::with_capacity(reference.param_count());
        for i in 0..reference.param_count() {
            let mut plus = ReferenceNet::from_mlp(net);
            plus.nudge(i, step);
            let mut minus = ReferenceNet::from_mlp(net);
            minus.nudge(i, -step);
            grads.push((loss(&plus) - loss(&minus)) / (2.0 * step));
        }
        let _ = reference;
        grads
    }

    /// Flatten analytic gradients in the same `w0, b0, ...` order.
    pub fn flatten_grads(grads: &super::MlpGrads) -> Vec<f64> {
        grads
            .weights
            .iter()
            .zip(&grads.biases)
            .flat_map(|(w, b)| {
                w.iter()
                    .copied()
                    .chain(b.iter().copied())
                    .collect::<Vec<f32>>()
            })
            .map(|v| v as f64)
            .collect()
    }

    /// Largest deviation `|a - n| / (atol + max(|a|, |n|))`. The absolute
    /// floor keeps exactly-zero gradients (dead ReLU units) from tripping on
    /// O(step) finite-difference noise at the kink.
    pub fn max_relative_error(analytic: &[f64], numeric: &[f64], atol: f64) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &n)| (a - n).abs() / (atol + a.abs().max(n.abs())))
            .fold(0.0, f64::max)
    }
}

/// `target <- coefficient * target + (1 - coefficient) * online`, elementwise.
pub fn polyak_update(target: &mut Mlp, online: &Mlp, coefficient: f32) -> Result<()> {
    if !target.shapes_match(online) {
        return Err(Error::Dimension(
            "target and online networks have different shapes".into(),
        ));
    }
    for (tw, ow) in target.weights.iter_mut().zip(&online.weights) {
        tw.zip_mut_with(ow, |t, &o| *t = coefficient * *t + (1.0 - coefficient) * o);
    }
    for (tb, ob) in target.biases.iter_mut().zip(&online.biases) {
        tb.zip_mut_with(ob, |t, &o| *t = coefficient * *t + (1.0 - coefficient) * o);
    }
    Ok(())
}
