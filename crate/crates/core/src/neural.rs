//! Small fully connected networks with hand-written reverse-mode gradients
//! and an Adam optimizer.
//!
//! Inputs are batched row-wise (`batch × width`). Hidden layers use ReLU; the
//! output is either linear or squashed into `(0, 1)` by a logistic sigmoid.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    /// Logistic sigmoid, clamped away from the endpoints.
    Sigmoid,
}

impl OutputActivation {
    pub fn name(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Sigmoid => "sigmoid",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(Self::Identity),
            "sigmoid" => Some(Self::Sigmoid),
            _ => None,
        }
    }
}

/// Layer widths from input to output, ReLU hidden layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub widths: Vec<usize>,
    pub output: OutputActivation,
}

impl NetworkSpec {
    pub fn new(widths: Vec<usize>, output: OutputActivation) -> Result<Self> {
        if widths.len() < 3 {
            return Err(HedgeError::InvalidInput(format!(
                "network needs input, at least one hidden layer and output; got widths {widths:?}"
            )));
        }
        if widths.contains(&0) {
            return Err(HedgeError::InvalidInput(format!("zero layer width in {widths:?}")));
        }
        Ok(Self { widths, output })
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }
}

/// Weights stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }
}

/// Parameters of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: NetworkSpec,
    pub layers: Vec<Layer>,
}

/// Gradients share the parameter layout.
pub type Gradients = Vec<Layer>;

/// Activations retained by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (the network input first).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}

impl Mlp {
    /// Fan-in scaled normal weights (He scaling for ReLU layers), zero biases.
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Self {
        let n = spec.layer_count();
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (spec.widths[i], spec.widths[i + 1]);
                let gain = if i + 1 < n { 2.0 } else { 1.0 };
                let scale = (gain / fan_in as f64).sqrt();
                let weights = Array2::from_shape_simple_fn((fan_out, fan_in), || {
                    scale * rng.sample::<f64, _>(StandardNormal)
                });
                Layer {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self { spec, layers }
    }

    pub fn zeros(spec: NetworkSpec) -> Self {
        let layers = zero_gradients(&spec);
        Self { spec, layers }
    }

    /// Rebuilds a network from explicit layers, checking every shape.
    pub fn from_layers(spec: NetworkSpec, layers: Vec<Layer>) -> Result<Self> {
        if layers.len() != spec.layer_count() {
            return Err(HedgeError::ShapeMismatch {
                what: "layer count".into(),
                expected: spec.layer_count(),
                got: layers.len(),
            });
        }
        for (i, layer) in layers.iter().enumerate() {
            let (fan_in, fan_out) = (spec.widths[i], spec.widths[i + 1]);
            check_shape(&format!("layer {i} rows"), fan_out, layer.weights.nrows())?;
            check_shape(&format!("layer {i} cols"), fan_in, layer.weights.ncols())?;
            check_shape(&format!("layer {i} bias"), fan_out, layer.bias.len())?;
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    /// Batched forward pass.
    pub fn forward(&self, input: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        check_shape("network input", self.spec.input_width(), input.ncols())?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut x = input.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = x.dot(&layer.weights.t());
            z += &layer.bias;
            let act = if i + 1 < n {
                z.mapv(|v| v.max(0.0))
            } else {
                match self.spec.output {
                    OutputActivation::Identity => z.clone(),
                    OutputActivation::Sigmoid => z.mapv(sigmoid),
                }
            };
            inputs.push(x);
            pre.push(z);
            x = act;
        }
        Ok(ForwardCache {
            inputs,
            pre,
            output: x,
        })
    }

    /// Forward pass for one input vector.
    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| HedgeError::InvalidInput(e.to_string()))?;
        Ok(self.forward(view)?.output.row(0).to_vec())
    }

    /// Reverse pass. `grad_output` is dLoss/dOutput per batch row; returns the
    /// parameter gradients (summed over the batch) and dLoss/dInput.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: ArrayView2<'_, f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        check_shape("cached layers", self.layers.len(), cache.pre.len())?;
        check_shape("output gradient width", self.spec.output_width(), grad_output.ncols())?;
        check_shape("output gradient batch", cache.output.nrows(), grad_output.nrows())?;

        let n = self.layers.len();
        let mut delta = match self.spec.output {
            OutputActivation::Identity => grad_output.to_owned(),
            OutputActivation::Sigmoid => {
                let mut d = grad_output.to_owned();
                Zip::from(&mut d)
                    .and(&cache.pre[n - 1])
                    .for_each(|g, &z| {
                        let s = if z >= 0.0 {
                            1.0 / (1.0 + (-z).exp())
                        } else {
                            let e = z.exp();
                            e / (1.0 + e)
                        };
                        *g *= s * (1.0 - s);
                    });
                d
            }
        };

        let mut grads: Gradients = Vec::with_capacity(n);
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let weights = delta.t().dot(&cache.inputs[i]);
            let bias = delta.sum_axis(Axis(0));
            let mut upstream = delta.dot(&layer.weights);
            if i > 0 {
                Zip::from(&mut upstream)
                    .and(&cache.pre[i - 1])
                    .for_each(|g, &z| {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    });
            }
            grads.push(Layer { weights, bias });
            delta = upstream;
        }
        grads.reverse();
        Ok((grads, delta))
    }

    /// `self ← coef·online + (1 − coef)·self`.
    pub fn soft_update_from(&mut self, online: &Mlp, coef: f64) -> Result<()> {
        if self.spec != online.spec {
            return Err(HedgeError::ShapeMismatch {
                what: "soft update widths".into(),
                expected: self.param_count(),
                got: online.param_count(),
            });
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            Zip::from(&mut t.weights)
                .and(&o.weights)
                .for_each(|t, &o| *t = coef * o + (1.0 - coef) * *t);
            Zip::from(&mut t.bias)
                .and(&o.bias)
                .for_each(|t, &o| *t = coef * o + (1.0 - coef) * *t);
        }
        Ok(())
    }
}

fn check_shape(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(HedgeError::ShapeMismatch {
            what: what.to_string(),
            expected,
            got,
        })
    }
}

pub fn zero_gradients(spec: &NetworkSpec) -> Gradients {
    (0..spec.layer_count())
        .map(|i| Layer::zeros(spec.widths[i], spec.widths[i + 1]))
        .collect()
}

/// Multiplies every gradient entry by `factor`.
pub fn scale_gradients(grads: &mut Gradients, factor: f64) {
    for g in grads.iter_mut() {
        g.weights *= factor;
        g.bias *= factor;
    }
}

fn gradients_finite(grads: &Gradients) -> bool {
    grads
        .iter()
        .all(|g| g.weights.iter().chain(g.bias.iter()).all(|x| x.is_finite()))
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub first_moment: Gradients,
    pub second_moment: Gradients,
    pub steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Applied,
    /// Gradient contained NaN/inf; nothing changed.
    SkippedNonFinite,
}

impl Adam {
    pub fn new(spec: &NetworkSpec, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first_moment: zero_gradients(spec),
            second_moment: zero_gradients(spec),
            steps: 0,
        }
    }

    /// One descent step along `grads`.
    pub fn step(&mut self, params: &mut Mlp, grads: &Gradients) -> Result<StepStatus> {
        if grads.len() != params.layers.len() {
            return Err(HedgeError::ShapeMismatch {
                what: "gradient layers".into(),
                expected: params.layers.len(),
                got: grads.len(),
            });
        }
        for (g, p) in grads.iter().zip(&params.layers) {
            if g.weights.dim() != p.weights.dim() || g.bias.len() != p.bias.len() {
                return Err(HedgeError::ShapeMismatch {
                    what: "gradient layer".into(),
                    expected: p.weights.len() + p.bias.len(),
                    got: g.weights.len() + g.bias.len(),
                });
            }
        }
        if !gradients_finite(grads) {
            return Ok(StepStatus::SkippedNonFinite);
        }
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let lr_t = self.learning_rate * (1.0 - b2.powi(t)).sqrt() / (1.0 - b1.powi(t));
        // bias correction folded into the step size, epsilon scaled to match
        let eps_t = eps * (1.0 - b2.powi(t)).sqrt();

        for (((p, g), m), v) in params
            .layers
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            Zip::from(&mut p.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr_t * *m / (v.sqrt() + eps_t);
                });
            Zip::from(&mut p.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr_t * *m / (v.sqrt() + eps_t);
                });
        }
        Ok(StepStatus::Applied)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(widths: &[usize], output: OutputActivation) -> NetworkSpec {
        NetworkSpec::new(widths.to_vec(), output).unwrap()
    }

    #[test]
    fn zero_network_outputs() {
        let net = Mlp::zeros(spec(&[3, 4, 2], OutputActivation::Identity));
        assert_eq!(net.forward_one(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        let net = Mlp::zeros(spec(&[3, 4, 2], OutputActivation::Sigmoid));
        assert_eq!(net.forward_one(&[1.0, -2.0, 3.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(NetworkSpec::new(vec![3, 2], OutputActivation::Identity).is_err());
        assert!(NetworkSpec::new(vec![3, 0, 2], OutputActivation::Identity).is_err());
        let net = Mlp::zeros(spec(&[3, 4, 2], OutputActivation::Identity));
        assert!(net.forward_one(&[1.0]).is_err());
        let cache = net.forward(array![[1.0, 2.0, 3.0]].view()).unwrap();
        assert!(net.backward(&cache, array![[1.0, 2.0, 3.0]].view()).is_err());
    }

    #[test]
    fn sigmoid_output_stays_open() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::new(spec(&[2, 3, 1], OutputActivation::Sigmoid), &mut rng);
        net.layers[1].bias[0] = 1e3;
        let y = net.forward_one(&[0.0, 0.0]).unwrap()[0];
        assert!(y > 0.0 && y < 1.0);
        net.layers[1].bias[0] = -1e3;
        let y = net.forward_one(&[0.0, 0.0]).unwrap()[0];
        assert!(y > 0.0 && y < 1.0);
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(spec(&[3, 5, 2], OutputActivation::Identity), &mut rng);
        let cache = net.forward(array![[0.3, -0.1, 2.0], [1.0, 1.0, 1.0]].view()).unwrap();
        let (grads, input_grad) = net.backward(&cache, Array2::zeros((2, 2)).view()).unwrap();
        assert!(grads.iter().all(|g| g.weights.iter().chain(g.bias.iter()).all(|&x| x == 0.0)));
        assert!(input_grad.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = spec(&[2, 3, 1], OutputActivation::Identity);
        let mut net = Mlp::new(s.clone(), &mut rng);
        let before = net.clone();
        let mut adam = Adam::new(&s, 1e-2);
        adam.second_moment[0].weights.fill(1.0);
        adam.step(&mut net, &zero_gradients(&s)).unwrap();
        assert_eq!(net, before);
        assert!((adam.second_moment[0].weights[[0, 0]] - 0.999).abs() < 1e-15);
    }

    #[test]
    fn adam_skips_non_finite() {
        let s = spec(&[1, 1, 1], OutputActivation::Identity);
        let mut net = Mlp::zeros(s.clone());
        let mut adam = Adam::new(&s, 1e-2);
        let mut g = zero_gradients(&s);
        g[0].weights[[0, 0]] = f64::NAN;
        assert_eq!(adam.step(&mut net, &g).unwrap(), StepStatus::SkippedNonFinite);
        assert_eq!(adam.steps, 0);
    }

    #[test]
    fn adam_first_step_is_learning_rate() {
        let s = spec(&[1, 1, 1], OutputActivation::Identity);
        let mut net = Mlp::zeros(s.clone());
        let mut adam = Adam::new(&s, 0.01);
        let mut g = zero_gradients(&s);
        g[1].bias[0] = 3.7;
        adam.step(&mut net, &g).unwrap();
        assert!((net.layers[1].bias[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn soft_update_arithmetic() {
        let s = spec(&[1, 1, 1], OutputActivation::Identity);
        let mut online = Mlp::zeros(s.clone());
        online.layers[0].weights[[0, 0]] = 8.0;
        let mut target = Mlp::zeros(s.clone());
        target.soft_update_from(&online, 0.5).unwrap();
        target.soft_update_from(&online, 0.5).unwrap();
        assert_eq!(target.layers[0].weights[[0, 0]], 6.0);

        let mut t2 = target.clone();
        t2.soft_update_from(&online, 0.0).unwrap();
        assert_eq!(t2, target);
        t2.soft_update_from(&online, 1.0).unwrap();
        assert_eq!(t2, online);

        let other = Mlp::zeros(spec(&[2, 1, 1], OutputActivation::Identity));
        assert!(t2.soft_update_from(&other, 0.5).is_err());
    }
}
