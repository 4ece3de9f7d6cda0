use rand::Rng;

use crate::error::{Error, Result};

/// Pointwise nonlinearity applied after a layer's affine map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => tanh(x),
            Activation::Relu => x.max(0.0),
            Activation::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative expressed through the pre-activation and the activated value.
    #[inline]
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - post * post,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => 1.0 / (1.0 + (-pre).exp()),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Softplus => "softplus",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "identity" => Some(Activation::Identity),
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            "softplus" => Some(Activation::Softplus),
            _ => None,
        }
    }
}

/// Dense layer `y = act(W x + b)` with `W` stored row-major as `outputs × inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Layer {
    pub fn new(
        outputs: usize,
        inputs: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.len() != outputs * inputs {
            return Err(Error::dim("layer weights", outputs * inputs, weights.len()));
        }
        if bias.len() != outputs {
            return Err(Error::dim("layer bias", outputs, bias.len()));
        }
        if weights.iter().chain(&bias).any(|w| !w.is_finite()) {
            return Err(Error::NonFinite {
                term: "layer parameters".into(),
            });
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
            activation,
        })
    }

    /// Uniform initialization in `±1/√fan_in`.
    pub fn random<R: Rng + ?Sized>(
        outputs: usize,
        inputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let weights = (0..outputs * inputs)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let bias = (0..outputs)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            bias,
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    #[inline]
    fn affine_into(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.inputs).zip(&self.bias) {
            out.push(b + dot(row, input));
        }
    }
}

/// `tanh` through a single `exp`; within 3e-16 of `f64::tanh` and about
/// twice as fast, which matters in the sampling loops.
#[inline]
pub fn tanh(x: f64) -> f64 {
    if x.abs() > 20.0 {
        return x.signum();
    }
    let e = (2.0 * x).exp();
    (e - 1.0) / (e + 1.0)
}

/// Four independent partial sums so the loop vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

/// Gradients shaped like an [`Mlp`]: one (weights, bias) pair per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.iter_mut() {
            *g *= factor;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn flat(&self) -> Vec<f64> {
        self.iter().collect()
    }

    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Intermediate values retained by [`Mlp::forward_trace`] for backpropagation.
#[derive(Clone, Debug)]
pub struct Trace {
    /// `activations[0]` is the input; `activations[i + 1]` is layer `i`'s output.
    activations: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has an input")
    }
}

/// Reusable buffers for allocation-free forward passes.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    a: Vec<f64>,
    b: Vec<f64>,
}

/// Feed-forward multilayer perceptron.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("an MLP needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::dim(
                    format!("layer {} input", i + 1),
                    pair[0].outputs,
                    pair[1].inputs,
                ));
            }
        }
        Ok(Self { layers })
    }

    /// Randomly initialized network with widths `dims[0] → … → dims[n]`.
    pub fn random<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument(
                "at least input and output widths are required".into(),
            ));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                Layer::random(dims[i + 1], dims[i], act, rng)
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::dim("layer 0 input", self.input_dim(), len));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input.len())?;
        let mut ws = Workspace::default();
        Ok(self.forward_with(input, &mut ws).to_vec())
    }

    /// Forward pass into reusable buffers. The caller must supply an input of
    /// the right width.
    pub fn forward_with<'a>(&self, input: &[f64], ws: &'a mut Workspace) -> &'a [f64] {
        debug_assert_eq!(input.len(), self.input_dim());
        let Workspace { a, b } = ws;
        self.layers[0].affine_into(input, a);
        let act = self.layers[0].activation;
        a.iter_mut().for_each(|v| *v = act.apply(*v));
        for layer in &self.layers[1..] {
            layer.affine_into(a, b);
            let act = layer.activation;
            b.iter_mut().for_each(|v| *v = act.apply(*v));
            std::mem::swap(a, b);
        }
        a
    }

    /// Pre-activation contribution of the leading `prefix.len()` inputs and the
    /// bias of the first layer. Pairs with [`Mlp::forward_from_partial`] when
    /// many inputs share the same prefix.
    pub fn first_layer_partial(&self, prefix: &[f64]) -> Result<Vec<f64>> {
        let first = &self.layers[0];
        if prefix.len() > first.inputs {
            return Err(Error::dim("input prefix", first.inputs, prefix.len()));
        }
        Ok(first
            .weights
            .chunks_exact(first.inputs)
            .zip(&first.bias)
            .map(|(row, b)| b + dot(&row[..prefix.len()], prefix))
            .collect())
    }

    /// Finishes a forward pass whose first-layer prefix was precomputed.
    pub fn forward_from_partial<'a>(
        &self,
        partial: &[f64],
        suffix: &[f64],
        ws: &'a mut Workspace,
    ) -> &'a [f64] {
        let first = &self.layers[0];
        let offset = first.inputs - suffix.len();
        let Workspace { a, b } = ws;
        a.clear();
        let act = first.activation;
        for (row, p) in first.weights.chunks_exact(first.inputs).zip(partial) {
            a.push(act.apply(p + dot(&row[offset..], suffix)));
        }
        for layer in &self.layers[1..] {
            layer.affine_into(a, b);
            let act = layer.activation;
            b.iter_mut().for_each(|v| *v = act.apply(*v));
            std::mem::swap(a, b);
        }
        a
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        self.check_input(input.len())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        activations.push(input.to_vec());
        for layer in &self.layers {
            let mut pre = Vec::with_capacity(layer.outputs);
            layer.affine_into(activations.last().unwrap(), &mut pre);
            let post = pre.iter().map(|&v| layer.activation.apply(v)).collect();
            pre_activations.push(pre);
            activations.push(post);
        }
        Ok(Trace {
            activations,
            pre_activations,
        })
    }

    /// Reverse-mode pass for the scalar `⟨output, upstream⟩`. Gradients are
    /// accumulated into `grads`; the gradient with respect to the input is
    /// returned.
    pub fn backward_into(
        &self,
        trace: &Trace,
        upstream: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>> {
        if upstream.len() != self.output_dim() {
            return Err(Error::dim("upstream gradient", self.output_dim(), upstream.len()));
        }
        let mut delta: Vec<f64> = upstream.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let pre = &trace.pre_activations[i];
            let post = &trace.activations[i + 1];
            for (d, (&p, &q)) in delta.iter_mut().zip(pre.iter().zip(post)) {
                *d *= layer.activation.derivative(p, q);
            }
            let input = &trace.activations[i];
            let g = &mut grads.layers[i];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] += d;
                if d != 0.0 {
                    let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (w, &x) in row.iter_mut().zip(input) {
                        *w += d * x;
                    }
                }
            }
            let mut next = vec![0.0; layer.inputs];
            for (row, &d) in layer.weights.chunks_exact(layer.inputs).zip(&delta) {
                if d != 0.0 {
                    for (n, &w) in next.iter_mut().zip(row) {
                        *n += d * w;
                    }
                }
            }
            delta = next;
        }
        Ok(delta)
    }

    /// Exact gradient of `⟨mlp(input), upstream⟩` with respect to every weight and bias.
    pub fn gradient(&self, input: &[f64], upstream: &[f64]) -> Result<Gradients> {
        let trace = self.forward_trace(input)?;
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(&trace, upstream, &mut grads)?;
        Ok(grads)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params().collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::dim("flat parameters", self.param_count(), values.len()));
        }
        for (p, &v) in self.params_mut().zip(values) {
            *p = v;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(f64::is_finite)
    }
}
