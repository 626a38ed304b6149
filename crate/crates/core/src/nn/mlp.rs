//! Dense feed-forward network with a two-way softmax head.
//!
//! Weights are stored per layer as `out × in` matrices, so layer `k` maps a
//! batch `X` (rows are samples) to `act(X · Wₖᵀ + bₖ)`. Hidden layers use the
//! configured activation; the last layer produces logits that go through a
//! softmax.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Probability clamp used by [`cross_entropy`].
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_at_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidArgument(format!("unknown activation `{other}`"))),
        }
    }
}

/// Cross-entropy of a probability vector against a class index, with the
/// probability clamped to `[PROB_EPS, 1 - PROB_EPS]`.
#[inline]
pub fn cross_entropy(p: &[f64], y: u8) -> f64 {
    let py = p[y as usize].clamp(PROB_EPS, 1.0 - PROB_EPS);
    -py.ln()
}

/// Index of the larger entry; ties resolve to 0.
#[inline]
pub fn argmax2(p: &[f64]) -> u8 {
    if p[1] > p[0] {
        1
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    activation: Activation,
}

/// Intermediate activations kept for a backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input batch, `activations[k]` the output of
    /// hidden layer `k`.
    pub activations: Vec<Array2<f64>>,
    pub probs: Array2<f64>,
}

impl ForwardCache {
    /// Output of the last hidden layer (the input itself for a single-layer model).
    pub fn latent(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds the input")
    }
}

fn validate_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 || layer_dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidDims(layer_dims.to_vec()));
    }
    Ok(())
}

impl MlpModel {
    /// Rectifier network initialized from `seed`.
    pub fn new(layer_dims: &[usize], seed: u64) -> Result<Self> {
        Self::with_activation(layer_dims, Activation::Relu, seed)
    }

    /// Weights are drawn uniformly from `[-l, l]` with `l = sqrt(6 / fan_in)`
    /// for rectifier networks and `l = sqrt(6 / (fan_in + fan_out))` for tanh,
    /// using a ChaCha8 stream seeded with `seed`, layer by layer in row-major
    /// order. Biases start at zero.
    pub fn with_activation(layer_dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        validate_dims(layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = match activation {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                Activation::Tanh => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let w = Array2::from_shape_simple_fn((fan_out, fan_in), || {
                rng.random_range(-limit..=limit)
            });
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(MlpModel {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    /// All parameters zero.
    pub fn zeros(layer_dims: &[usize], activation: Activation) -> Result<Self> {
        validate_dims(layer_dims)?;
        let weights = layer_dims
            .windows(2)
            .map(|p| Array2::zeros((p[1], p[0])))
            .collect();
        let biases = layer_dims[1..].iter().map(|&d| Array1::zeros(d)).collect();
        Ok(MlpModel {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    pub fn from_parts(
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::InvalidArgument(
                "weights and biases must be non-empty and of equal count".into(),
            ));
        }
        let mut layer_dims = vec![weights[0].ncols()];
        for (k, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != layer_dims[k] {
                return Err(Error::DimensionMismatch {
                    context: "layer input width",
                    expected: layer_dims[k],
                    actual: w.ncols(),
                });
            }
            if b.len() != w.nrows() {
                return Err(Error::DimensionMismatch {
                    context: "bias length",
                    expected: w.nrows(),
                    actual: b.len(),
                });
            }
            layer_dims.push(w.nrows());
        }
        validate_dims(&layer_dims)?;
        Ok(MlpModel {
            layer_dims,
            weights,
            biases,
            activation,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Width of the last hidden layer, or the input width without hidden layers.
    pub fn latent_dim(&self) -> usize {
        self.layer_dims[self.layer_dims.len() - 2]
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    /// Mutable access to one layer's `(weights, bias)`.
    pub fn layer_mut(&mut self, k: usize) -> (&mut Array2<f64>, &mut Array1<f64>) {
        (&mut self.weights[k], &mut self.biases[k])
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "model input",
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    fn affine(&self, k: usize, a: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = a.dot(&self.weights[k].t());
        z += &self.biases[k];
        z
    }

    /// Row-wise class probabilities.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let last = self.num_layers() - 1;
        let mut a = self.affine(0, &x);
        for k in 1..=last {
            let act = self.activation;
            a.mapv_inplace(|v| act.apply(v));
            a = self.affine(k, &a.view());
        }
        softmax_rows(&mut a);
        Ok(a)
    }

    /// Output of the last hidden layer for each row.
    pub fn latent(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut a = x.to_owned();
        for k in 0..self.num_layers() - 1 {
            let act = self.activation;
            a = self.affine(k, &a.view());
            a.mapv_inplace(|v| act.apply(v));
        }
        Ok(a)
    }

    /// Classification head applied on top of precomputed latents.
    pub fn forward_from_latent(&self, latent: ArrayView2<f64>) -> Result<Array2<f64>> {
        let last = self.num_layers() - 1;
        if latent.ncols() != self.layer_dims[last] {
            return Err(Error::DimensionMismatch {
                context: "latent input",
                expected: self.layer_dims[last],
                actual: latent.ncols(),
            });
        }
        let mut z = self.affine(last, &latent);
        softmax_rows(&mut z);
        Ok(z)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&x)?;
        let last = self.num_layers() - 1;
        let mut activations = Vec::with_capacity(self.num_layers());
        activations.push(x.to_owned());
        for k in 0..last {
            let act = self.activation;
            let mut a = self.affine(k, &activations[k].view());
            a.mapv_inplace(|v| act.apply(v));
            activations.push(a);
        }
        let mut probs = self.affine(last, &activations[last].view());
        softmax_rows(&mut probs);
        Ok(ForwardCache { activations, probs })
    }

    /// Gradients of the mean cross-entropy over the batch.
    pub fn backward(&self, x: ArrayView2<f64>, y: &[u8]) -> Result<Gradients> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::EmptyInput("backward batch"));
        }
        let w = vec![1.0 / n as f64; n];
        Ok(self.backward_weighted(x, y, &w)?.0)
    }

    /// Gradients of `Σᵢ wᵢ · CE(pᵢ, yᵢ)`; also returns that loss.
    pub fn backward_weighted(
        &self,
        x: ArrayView2<f64>,
        y: &[u8],
        sample_weights: &[f64],
    ) -> Result<(Gradients, f64)> {
        if y.len() != x.nrows() || sample_weights.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                context: "labels/weights per row",
                expected: x.nrows(),
                actual: y.len().min(sample_weights.len()),
            });
        }
        let cache = self.forward_cached(x)?;
        let mut dlogits = cache.probs.clone();
        let mut loss = 0.0;
        for (i, mut row) in dlogits.axis_iter_mut(Axis(0)).enumerate() {
            let yi = y[i] as usize;
            if yi >= row.len() {
                return Err(Error::InvalidArgument(format!("label {yi} out of range")));
            }
            let wi = sample_weights[i];
            loss += wi * cross_entropy(cache.probs.row(i).as_slice().unwrap(), y[i]);
            row[yi] -= 1.0;
            row *= wi;
        }
        let (grads, _) = self.backward_from_logit_grad(&cache, dlogits.view());
        Ok((grads, loss))
    }

    /// Back-propagates a gradient on the logits through the network; returns
    /// parameter gradients and the gradient with respect to the input batch.
    pub fn backward_from_logit_grad(
        &self,
        cache: &ForwardCache,
        dlogits: ArrayView2<f64>,
    ) -> (Gradients, Array2<f64>) {
        let layers = self.num_layers();
        let mut gw = vec![Array2::zeros((0, 0)); layers];
        let mut gb = vec![Array1::zeros(0); layers];
        let mut delta = dlogits.to_owned();
        for k in (0..layers).rev() {
            let a_in = &cache.activations[k];
            gw[k] = delta.t().dot(a_in);
            gb[k] = delta.sum_axis(Axis(0));
            let mut da = delta.dot(&self.weights[k]);
            if k > 0 {
                let act = self.activation;
                Zip::from(&mut da)
                    .and(a_in)
                    .for_each(|d, &a| *d *= act.derivative_at_output(a));
            }
            delta = da;
        }
        (
            Gradients {
                weights: gw,
                biases: gb,
            },
            delta,
        )
    }

    /// Gradient of `Σᵢ wᵢ · CE` with respect to the latent rows fed to the
    /// last layer, plus the last layer's own gradients.
    pub fn backward_head(
        &self,
        latent: ArrayView2<f64>,
        y: &[u8],
        sample_weights: &[f64],
    ) -> Result<(Gradients, Array2<f64>, f64)> {
        let probs = self.forward_from_latent(latent)?;
        let last = self.num_layers() - 1;
        let mut dlogits = probs.clone();
        let mut loss = 0.0;
        for (i, mut row) in dlogits.axis_iter_mut(Axis(0)).enumerate() {
            loss += sample_weights[i] * cross_entropy(probs.row(i).as_slice().unwrap(), y[i]);
            row[y[i] as usize] -= 1.0;
            row *= sample_weights[i];
        }
        let mut grads = Gradients::zeros_like(self);
        grads.weights[last] = dlogits.t().dot(&latent);
        grads.biases[last] = dlogits.sum_axis(Axis(0));
        let dlatent = dlogits.dot(&self.weights[last]);
        Ok((grads, dlatent, loss))
    }

    /// Mean cross-entropy of the batch.
    pub fn loss(&self, x: ArrayView2<f64>, y: &[u8]) -> Result<f64> {
        let probs = self.forward(x)?;
        let n = probs.nrows().max(1) as f64;
        Ok(probs
            .axis_iter(Axis(0))
            .zip(y)
            .map(|(p, &yi)| cross_entropy(p.as_slice().unwrap(), yi))
            .sum::<f64>()
            / n)
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [Array2<f64>], &mut [Array1<f64>]) {
        (&mut self.weights, &mut self.biases)
    }
}

/// In-place numerically stable softmax per row.
pub fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Per-parameter gradients with the same layout as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            weights: model.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: model.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights.iter_mut().for_each(|w| *w *= factor);
        self.biases.iter_mut().for_each(|b| *b *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn matches(&self, model: &MlpModel) -> bool {
        self.weights.len() == model.weights.len()
            && self
                .weights
                .iter()
                .zip(&model.weights)
                .all(|(g, w)| g.raw_dim() == w.raw_dim())
            && self
                .biases
                .iter()
                .zip(&model.biases)
                .all(|(g, b)| g.raw_dim() == b.raw_dim())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn init_shapes_and_zero_biases() {
        let m = MlpModel::new(&[4, 2], 7).unwrap();
        assert_eq!(m.weights().len(), 1);
        assert_eq!(m.weights()[0].dim(), (2, 4));
        assert!(m.biases()[0].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn init_is_deterministic() {
        let a = MlpModel::new(&[4, 8, 2], 7).unwrap();
        let b = MlpModel::new(&[4, 8, 2], 7).unwrap();
        assert_eq!(a, b);
        let c = MlpModel::new(&[4, 8, 2], 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_rejects_bad_dims() {
        assert!(matches!(MlpModel::new(&[4], 1), Err(Error::InvalidDims(_))));
        assert!(matches!(MlpModel::new(&[], 1), Err(Error::InvalidDims(_))));
        assert!(matches!(MlpModel::new(&[4, 0, 2], 1), Err(Error::InvalidDims(_))));
    }

    #[test]
    fn zero_model_gives_uniform_probabilities() {
        let m = MlpModel::zeros(&[3, 5, 2], Activation::Relu).unwrap();
        let x = array![[1.0, -2.0, 3.0], [0.0, 0.0, 0.0], [100.0, 5.0, -7.0]];
        let p = m.forward(x.view()).unwrap();
        assert_eq!(p.nrows(), 3);
        for row in p.rows() {
            assert_eq!(row[0], 0.5);
            assert_eq!(row[1], 0.5);
        }
    }

    #[test]
    fn hand_set_single_layer_softmax() {
        let w = array![[0.5, -1.0], [2.0, 0.25]];
        let b = array![0.1, -0.3];
        let m = MlpModel::from_parts(vec![w], vec![b], Activation::Relu).unwrap();
        let p = m.forward(array![[1.0, 0.0]].view()).unwrap();
        // logits (0.6, 1.7)
        let e0 = 0.6f64.exp();
        let e1 = 1.7f64.exp();
        assert_abs_diff_eq!(p[[0, 0]], e0 / (e0 + e1), epsilon = 1e-12);
        assert_abs_diff_eq!(p[[0, 1]], e1 / (e0 + e1), epsilon = 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let m = MlpModel::new(&[4, 2], 1).unwrap();
        let err = m.forward(Array2::zeros((2, 3)).view()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 4, actual: 3, .. }));
    }

    #[test]
    fn cross_entropy_values() {
        assert_abs_diff_eq!(cross_entropy(&[0.5, 0.5], 1), std::f64::consts::LN_2, epsilon = 1e-12);
        assert!(cross_entropy(&[1.0, 0.0], 0) < 1e-11);
        assert_abs_diff_eq!(cross_entropy(&[0.9, 0.1], 1), 2.302585092994046, epsilon = 1e-9);
        // clamped, not infinite
        assert!(cross_entropy(&[1.0, 0.0], 1).is_finite());
    }

    #[test]
    fn duplicated_rows_give_same_gradient() {
        let m = MlpModel::new(&[3, 6, 2], 11).unwrap();
        let x1 = array![[0.3, -1.2, 0.8]];
        let x2 = array![[0.3, -1.2, 0.8], [0.3, -1.2, 0.8], [0.3, -1.2, 0.8]];
        let g1 = m.backward(x1.view(), &[1]).unwrap();
        let g2 = m.backward(x2.view(), &[1, 1, 1]).unwrap();
        for (a, b) in g1.weights.iter().zip(&g2.weights) {
            for (u, v) in a.iter().zip(b) {
                assert_abs_diff_eq!(u, v, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn latent_feeds_head() {
        let m = MlpModel::new(&[5, 7, 3, 2], 4).unwrap();
        let x = Array2::from_shape_fn((4, 5), |(i, j)| (i as f64 - j as f64) * 0.3);
        let z = m.latent(x.view()).unwrap();
        assert_eq!(z.ncols(), 3);
        let p1 = m.forward_from_latent(z.view()).unwrap();
        let p2 = m.forward(x.view()).unwrap();
        assert_eq!(p1, p2);
    }
}
