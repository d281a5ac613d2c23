//! A small fully connected encoder with hand-written forward and backward
//! passes, plain SGD, and a central-difference gradient checker.
//!
//! Hidden layers share one activation; the output layer is always linear so
//! embeddings are unconstrained reals.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{config_err, shape_err, CirError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    /// Code stored in checkpoint files.
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Identity),
            other => Err(CirError::Format(format!("unknown activation code {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(config_err(format!("unknown activation `{other}`"))),
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the pre-activation and the activation output.
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
            Activation::Identity => 1.0,
        }
    }
}

/// Weights and biases of the encoder. Layer `l` maps `layer_dims[l]` to
/// `layer_dims[l + 1]`; its weight matrix is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub activation: Activation,
}

impl ModelParams {
    /// Assemble parameters from explicit matrices, checking every shape.
    pub fn from_parts(
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.is_empty() {
            return Err(config_err("a model needs at least one layer"));
        }
        let mut layer_dims = vec![weights[0].ncols()];
        for w in &weights {
            layer_dims.push(w.nrows());
        }
        let params = Self {
            layer_dims,
            weights,
            biases,
            activation,
        };
        params.validate()?;
        Ok(params)
    }

    /// An identity network on `dim` features: one layer, `W = I`, `b = 0`.
    pub fn identity(dim: usize) -> Self {
        Self {
            layer_dims: vec![dim, dim],
            weights: vec![Array2::eye(dim)],
            biases: vec![Array1::zeros(dim)],
            activation: Activation::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let layers = self.num_layers();
        if self.layer_dims.len() < 2 || self.layer_dims.contains(&0) {
            return Err(config_err(format!("invalid layer dims {:?}", self.layer_dims)));
        }
        if self.weights.len() != layers || self.biases.len() != layers {
            return Err(shape_err("weight/bias count does not match layer dims"));
        }
        for l in 0..layers {
            let (out, inp) = (self.layer_dims[l + 1], self.layer_dims[l]);
            if self.weights[l].dim() != (out, inp) || self.biases[l].len() != out {
                return Err(shape_err(format!(
                    "layer {l}: expected {out}x{inp} weights and {out} biases"
                )));
            }
        }
        if !self.is_finite() {
            return Err(CirError::Numeric("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len().saturating_sub(1)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated layer dims")
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Flat view over every parameter, weights first (row-major) then biases,
    /// layer by layer.
    pub(crate) fn get_flat(&self, mut idx: usize) -> f64 {
        for l in 0..self.num_layers() {
            let w = &self.weights[l];
            if idx < w.len() {
                return w.as_slice().expect("standard layout")[idx];
            }
            idx -= w.len();
            let b = &self.biases[l];
            if idx < b.len() {
                return b[idx];
            }
            idx -= b.len();
        }
        panic!("flat parameter index out of range");
    }

    pub(crate) fn set_flat(&mut self, mut idx: usize, value: f64) {
        for l in 0..self.num_layers() {
            let len = self.weights[l].len();
            if idx < len {
                self.weights[l].as_slice_mut().expect("standard layout")[idx] = value;
                return;
            }
            idx -= len;
            let len = self.biases[l].len();
            if idx < len {
                self.biases[l][idx] = value;
                return;
            }
            idx -= len;
        }
        panic!("flat parameter index out of range");
    }
}

/// Per-layer intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input batch, `activations[l + 1]` the output of layer `l`.
    pub activations: Vec<Array2<f64>>,
    pub pre_activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds the input at least")
    }
}

/// Gradients of a scalar loss with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            weights: params.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: params.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            weights: self.weights.iter().map(|w| w * factor).collect(),
            biases: self.biases.iter().map(|b| b * factor).collect(),
        }
    }

    pub fn add(&self, other: &ParamGrads) -> Result<Self> {
        self.check_congruent(other)?;
        Ok(Self {
            weights: self.weights.iter().zip(&other.weights).map(|(a, b)| a + b).collect(),
            biases: self.biases.iter().zip(&other.biases).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    fn check_congruent(&self, other: &ParamGrads) -> Result<()> {
        let same = self.weights.len() == other.weights.len()
            && self.biases.len() == other.biases.len()
            && self.weights.iter().zip(&other.weights).all(|(a, b)| a.dim() == b.dim())
            && self.biases.iter().zip(&other.biases).all(|(a, b)| a.len() == b.len());
        if same {
            Ok(())
        } else {
            Err(shape_err("gradient blocks are not shape-congruent"))
        }
    }

    fn check_matches(&self, params: &ModelParams) -> Result<()> {
        let same = self.weights.len() == params.weights.len()
            && self.biases.len() == params.biases.len()
            && self.weights.iter().zip(&params.weights).all(|(a, b)| a.dim() == b.dim())
            && self.biases.iter().zip(&params.biases).all(|(a, b)| a.len() == b.len());
        if same {
            Ok(())
        } else {
            Err(shape_err("gradients do not match the model's parameter shapes"))
        }
    }

    pub(crate) fn get_flat(&self, mut idx: usize) -> f64 {
        for l in 0..self.weights.len() {
            let w = &self.weights[l];
            if idx < w.len() {
                return w.as_slice().expect("standard layout")[idx];
            }
            idx -= w.len();
            let b = &self.biases[l];
            if idx < b.len() {
                return b[idx];
            }
            idx -= b.len();
        }
        panic!("flat gradient index out of range");
    }
}

/// Exponential learning-rate decay: `rate(e) = initial * factor^max(0, e - start)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub initial_rate: f64,
    pub decay_start_epoch: usize,
    pub decay_factor_per_epoch: f64,
    pub total_epochs: usize,
}

impl LrSchedule {
    pub fn constant(rate: f64, total_epochs: usize) -> Self {
        Self {
            initial_rate: rate,
            decay_start_epoch: total_epochs,
            decay_factor_per_epoch: 1.0,
            total_epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_rate > 0.0 && self.initial_rate.is_finite()) {
            return Err(config_err("learning rate must be positive"));
        }
        if !(self.decay_factor_per_epoch > 0.0 && self.decay_factor_per_epoch <= 1.0) {
            return Err(config_err("decay factor must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn rate(&self, epoch: usize) -> f64 {
        let decayed = epoch.saturating_sub(self.decay_start_epoch);
        self.initial_rate * self.decay_factor_per_epoch.powi(decayed as i32)
    }
}

/// Fresh parameters with weights `N(0, 1) / sqrt(fan_in)` and zero biases.
pub fn init_params(layer_dims: &[usize], activation: Activation, seed: u64) -> Result<ModelParams> {
    if layer_dims.len() < 2 || layer_dims.contains(&0) {
        return Err(config_err(format!(
            "layer dims need at least two positive entries, got {layer_dims:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(layer_dims.len() - 1);
    let mut biases = Vec::with_capacity(layer_dims.len() - 1);
    for pair in layer_dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let scale = 1.0 / (fan_in as f64).sqrt();
        let w = Array2::from_shape_simple_fn((fan_out, fan_in), || {
            let v: f64 = StandardNormal.sample(&mut rng);
            v * scale
        });
        weights.push(w);
        biases.push(Array1::zeros(fan_out));
    }
    Ok(ModelParams {
        layer_dims: layer_dims.to_vec(),
        weights,
        biases,
        activation,
    })
}

/// Run the encoder over a `B x d_in` batch.
pub fn forward(params: &ModelParams, x: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
    if x.ncols() != params.input_dim() {
        return Err(shape_err(format!(
            "input has {} columns, model expects {}",
            x.ncols(),
            params.input_dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CirError::Numeric("non-finite input".into()));
    }
    let layers = params.num_layers();
    let mut activations = Vec::with_capacity(layers + 1);
    let mut pre_activations = Vec::with_capacity(layers);
    activations.push(x.clone());
    for l in 0..layers {
        let input = &activations[l];
        let pre = input.dot(&params.weights[l].t()) + &params.biases[l];
        let post = if l + 1 < layers {
            let act = params.activation;
            pre.mapv(|v| act.apply(v))
        } else {
            pre.clone()
        };
        pre_activations.push(pre);
        activations.push(post);
    }
    let out = activations[layers].clone();
    Ok((
        out,
        ForwardCache {
            activations,
            pre_activations,
        },
    ))
}

/// Reverse-mode accumulation of `dL/dθ` given `dL/d(output)`.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    grad_output: &Array2<f64>,
) -> Result<ParamGrads> {
    Ok(backward_with_input(params, cache, grad_output)?.0)
}

/// As [`backward`], also returning `dL/d(input)`.
pub fn backward_with_input(
    params: &ModelParams,
    cache: &ForwardCache,
    grad_output: &Array2<f64>,
) -> Result<(ParamGrads, Array2<f64>)> {
    let layers = params.num_layers();
    if cache.pre_activations.len() != layers || cache.activations.len() != layers + 1 {
        return Err(shape_err("forward cache does not belong to this model"));
    }
    if grad_output.dim() != cache.output().dim() {
        return Err(shape_err(format!(
            "grad_output is {:?}, forward output was {:?}",
            grad_output.dim(),
            cache.output().dim()
        )));
    }
    let mut weights = vec![Array2::zeros((0, 0)); layers];
    let mut biases = vec![Array1::zeros(0); layers];
    let mut grad = grad_output.clone();
    for l in (0..layers).rev() {
        if l + 1 < layers {
            let act = params.activation;
            ndarray::Zip::from(&mut grad)
                .and(&cache.pre_activations[l])
                .and(&cache.activations[l + 1])
                .for_each(|g, &pre, &post| *g *= act.derivative(pre, post));
        }
        weights[l] = grad.t().dot(&cache.activations[l]);
        biases[l] = grad.sum_axis(Axis(0));
        grad = grad.dot(&params.weights[l]);
    }
    Ok((ParamGrads { weights, biases }, grad))
}

/// One descent step: `new = old - rate * grad`.
pub fn sgd_step(params: &ModelParams, grads: &ParamGrads, rate: f64) -> Result<ModelParams> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(config_err(format!("learning rate must be positive, got {rate}")));
    }
    grads.check_matches(params)?;
    if !grads.is_finite() {
        return Err(CirError::Numeric("non-finite gradient".into()));
    }
    let mut next = params.clone();
    for (w, g) in next.weights.iter_mut().zip(&grads.weights) {
        w.scaled_add(-rate, g);
    }
    for (b, g) in next.biases.iter_mut().zip(&grads.biases) {
        b.scaled_add(-rate, g);
    }
    Ok(next)
}

/// Compare the analytic gradient returned by `loss_and_grads` at `params`
/// against central finite differences over every parameter.
///
/// Returns the largest relative discrepancy `|a - n| / max(|a|, |n|)`.
/// Entries where both sides are below `1e-10` in magnitude count as agreeing.
pub fn grad_check<F>(params: &ModelParams, mut loss_and_grads: F, epsilon: f64) -> Result<f64>
where
    F: FnMut(&ModelParams) -> Result<(f64, ParamGrads)>,
{
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(config_err(format!("epsilon must be positive, got {epsilon}")));
    }
    let (_, analytic) = loss_and_grads(params)?;
    analytic.check_matches(params)?;
    let mut probe = params.clone();
    let mut worst = 0.0_f64;
    for idx in 0..params.param_count() {
        let orig = params.get_flat(idx);
        probe.set_flat(idx, orig + epsilon);
        let (plus, _) = loss_and_grads(&probe)?;
        probe.set_flat(idx, orig - epsilon);
        let (minus, _) = loss_and_grads(&probe)?;
        probe.set_flat(idx, orig);
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic.get_flat(idx);
        let scale = a.abs().max(numeric.abs());
        if scale > 1e-10 {
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn init_is_deterministic() {
        let a = init_params(&[2, 2], Activation::Relu, 7).unwrap();
        let b = init_params(&[2, 2], Activation::Relu, 7).unwrap();
        assert_eq!(a, b);
        let c = init_params(&[2, 2], Activation::Relu, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_shapes() {
        let p = init_params(&[4, 8, 3], Activation::Relu, 0).unwrap();
        assert_eq!(p.weights[0].dim(), (8, 4));
        assert_eq!(p.weights[1].dim(), (3, 8));
        assert_eq!(p.biases[0].len(), 8);
        assert_eq!(p.biases[1].len(), 3);
        assert!(p.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn init_rejects_degenerate_dims() {
        assert!(matches!(
            init_params(&[4], Activation::Relu, 0),
            Err(CirError::Config(_))
        ));
        assert!(matches!(
            init_params(&[], Activation::Relu, 0),
            Err(CirError::Config(_))
        ));
        assert!(matches!(
            init_params(&[4, 0, 2], Activation::Relu, 0),
            Err(CirError::Config(_))
        ));
    }

    #[test]
    fn identity_network_passes_input_through() {
        let p = ModelParams::identity(3);
        let x = array![[1.0, -2.0, 3.5], [0.0, 0.25, -7.0]];
        let (z, _) = forward(&p, &x).unwrap();
        assert_eq!(z, x);
    }

    #[test]
    fn single_affine_layer() {
        let p = ModelParams::from_parts(
            vec![array![[2.0, 0.0], [0.0, 3.0]]],
            vec![array![1.0, -1.0]],
            Activation::Relu,
        )
        .unwrap();
        let (z, _) = forward(&p, &array![[1.0, 1.0]]).unwrap();
        assert_eq!(z, array![[3.0, 2.0]]);
    }

    #[test]
    fn empty_batch_is_fine() {
        let p = init_params(&[3, 4, 2], Activation::Relu, 1).unwrap();
        let (z, cache) = forward(&p, &Array2::zeros((0, 3))).unwrap();
        assert_eq!(z.dim(), (0, 2));
        let g = backward(&p, &cache, &z).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let p = init_params(&[3, 2], Activation::Relu, 1).unwrap();
        assert!(matches!(
            forward(&p, &Array2::zeros((2, 4))),
            Err(CirError::Shape(_))
        ));
        let mut x = Array2::zeros((1, 3));
        x[[0, 1]] = f64::NAN;
        assert!(matches!(forward(&p, &x), Err(CirError::Numeric(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let p = init_params(&[3, 5, 2], Activation::Tanh, 3).unwrap();
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64 * 0.1);
        let (z, cache) = forward(&p, &x).unwrap();
        let g = backward(&p, &cache, &Array2::zeros(z.raw_dim())).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn least_squares_gradient_closed_form() {
        // L = 1/2 |Wx - y|^2  =>  dL/dW = (Wx - y) x^T, dL/db = Wx + b - y
        let w = array![[0.5, -1.0, 2.0], [1.5, 0.25, -0.75]];
        let p = ModelParams::from_parts(vec![w.clone()], vec![Array1::zeros(2)], Activation::Identity)
            .unwrap();
        let x = array![[1.0, 2.0, -1.0]];
        let y = array![[0.3, -0.2]];
        let (z, cache) = forward(&p, &x).unwrap();
        let resid = &z - &y;
        let g = backward(&p, &cache, &resid).unwrap();
        let expected = resid.t().dot(&x);
        for (a, b) in g.weights[0].iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(g.biases[0], resid.row(0).to_owned());
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let p = init_params(&[3, 4, 2], Activation::Relu, 5).unwrap();
        let x = Array2::from_shape_fn((3, 3), |(i, j)| ((i + 2 * j) as f64).sin());
        let (_, cache) = forward(&p, &x).unwrap();
        let up = Array2::from_shape_fn((3, 2), |(i, j)| (i as f64 - j as f64) * 0.3 + 0.1);
        let g1 = backward(&p, &cache, &up).unwrap();
        let g2 = backward(&p, &cache, &(&up * 2.0)).unwrap();
        assert_eq!(g1.scaled(2.0), g2);
    }

    #[test]
    fn backward_rejects_mismatched_upstream() {
        let p = init_params(&[3, 2], Activation::Relu, 5).unwrap();
        let (_, cache) = forward(&p, &Array2::zeros((2, 3))).unwrap();
        assert!(matches!(
            backward(&p, &cache, &Array2::zeros((2, 3))),
            Err(CirError::Shape(_))
        ));
    }

    #[test]
    fn sgd_descends() {
        let p = ModelParams::from_parts(vec![array![[1.0]]], vec![array![0.0]], Activation::Identity)
            .unwrap();
        let g = ParamGrads {
            weights: vec![array![[2.0]]],
            biases: vec![array![0.0]],
        };
        let next = sgd_step(&p, &g, 0.5).unwrap();
        assert_eq!(next.weights[0][[0, 0]], 0.0);
    }

    #[test]
    fn sgd_zero_grads_leave_params() {
        let p = init_params(&[4, 3], Activation::Relu, 2).unwrap();
        let next = sgd_step(&p, &ParamGrads::zeros_like(&p), 0.0002).unwrap();
        assert_eq!(next, p);
    }

    #[test]
    fn sgd_two_steps_equal_one_summed() {
        let p = ModelParams::from_parts(
            vec![array![[0.5, 0.25]]],
            vec![array![0.125]],
            Activation::Identity,
        )
        .unwrap();
        let g = ParamGrads {
            weights: vec![array![[0.5, -0.25]]],
            biases: vec![array![1.0]],
        };
        let twice = sgd_step(&sgd_step(&p, &g, 0.25).unwrap(), &g, 0.25).unwrap();
        let once = sgd_step(&p, &g.add(&g).unwrap(), 0.25).unwrap();
        assert_eq!(twice, once);
    }

    #[test]
    fn sgd_rejects_bad_grads() {
        let p = init_params(&[2, 2], Activation::Relu, 2).unwrap();
        let mut g = ParamGrads::zeros_like(&p);
        g.biases[0][0] = f64::INFINITY;
        assert!(matches!(sgd_step(&p, &g, 0.1), Err(CirError::Numeric(_))));
        assert!(matches!(
            sgd_step(&p, &ParamGrads::zeros_like(&p), 0.0),
            Err(CirError::Config(_))
        ));
    }

    #[test]
    fn quadratic_loss_grad_check() {
        let p = init_params(&[3, 2], Activation::Identity, 11).unwrap();
        let x = array![[0.3, -1.2, 0.8], [1.0, 0.5, -0.4]];
        let y = array![[0.1, 0.2], [-0.3, 0.7]];
        let err = grad_check(
            &p,
            |m| {
                let (z, cache) = forward(m, &x)?;
                let r = &z - &y;
                let loss = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
                Ok((loss, backward(m, &cache, &r)?))
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "max rel error {err}");
    }

    #[test]
    fn constant_loss_grad_check_is_zero() {
        let p = init_params(&[3, 4, 2], Activation::Relu, 11).unwrap();
        let err = grad_check(&p, |m| Ok((1.5, ParamGrads::zeros_like(m))), 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn grad_check_rejects_bad_epsilon() {
        let p = init_params(&[2, 2], Activation::Relu, 0).unwrap();
        let r = grad_check(&p, |m| Ok((0.0, ParamGrads::zeros_like(m))), 0.0);
        assert!(matches!(r, Err(CirError::Config(_))));
    }

    #[test]
    fn lr_schedule_shape() {
        let s = LrSchedule {
            initial_rate: 0.0002,
            decay_start_epoch: 200,
            decay_factor_per_epoch: 0.99,
            total_epochs: 300,
        };
        assert_eq!(s.rate(0), 0.0002);
        assert_eq!(s.rate(199), 0.0002);
        assert_eq!(s.rate(200), 0.0002);
        let mut prev = s.rate(0);
        for e in 1..300 {
            let r = s.rate(e);
            assert!(r <= prev);
            prev = r;
        }
        assert!(s.rate(250) < 0.0002);
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let p = init_params(&[5, 7, 3], Activation::Tanh, 9).unwrap();
        let x = Array2::from_shape_fn((6, 5), |(i, j)| ((i * 5 + j) as f64 * 0.37).cos());
        let (a, _) = forward(&p, &x).unwrap();
        let (b, _) = forward(&p, &x).unwrap();
        assert_eq!(a, b);
    }
}
