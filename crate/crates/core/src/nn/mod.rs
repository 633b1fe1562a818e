//! Multilayer perceptrons over flat feature vectors.
//!
//! Parameters are stored as one flat `Vec<f64>`: for each layer, the
//! `out x in` weight matrix in row-major order followed by the `out` bias
//! vector. Hidden layers apply the activation; the last layer emits logits.

mod adam;
mod objective;

pub use adam::{adam_step, AdamState};
pub use objective::{
    cw_margin, log_softmax, objective_value, softmax, softmax_conf, Direction, ObjectiveFamily,
    ObjectiveKind,
};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
}

/// Offsets of one layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct LayerLayout {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    bias: usize,
}

impl ArchDescriptor {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        num_classes: usize,
        activation: Activation,
    ) -> Result<Self> {
        let arch = ArchDescriptor {
            input_dim,
            hidden_dims,
            num_classes,
            activation,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidArgument(
                "layer widths must be positive".into(),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    fn layers(&self) -> Vec<LayerLayout> {
        let mut widths = Vec::with_capacity(self.hidden_dims.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden_dims);
        widths.push(self.num_classes);
        let mut offset = 0;
        widths
            .windows(2)
            .map(|w| {
                let layout = LayerLayout {
                    fan_in: w[0],
                    fan_out: w[1],
                    weights: offset,
                    bias: offset + w[0] * w[1],
                };
                offset += w[0] * w[1] + w[1];
                layout
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.fan_out * (l.fan_in + 1)).sum()
    }
}

/// Trained (or initial) weights for an [`ArchDescriptor`].
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    values: Vec<f64>,
}

impl Params {
    pub fn zeros(arch: &ArchDescriptor) -> Self {
        Params {
            values: vec![0.0; arch.param_count()],
        }
    }

    pub fn from_vec(arch: &ArchDescriptor, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                arch.param_count(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("parameter {i} is not finite")));
        }
        Ok(Params { values })
    }

    /// He initialization for ReLU, Xavier (1/fan_in) for tanh; zero biases.
    pub fn init<R: Rng + ?Sized>(arch: &ArchDescriptor, rng: &mut R) -> Self {
        let mut values = vec![0.0; arch.param_count()];
        let gain = match arch.activation {
            Activation::Relu => 2.0,
            Activation::Tanh => 1.0,
        };
        for layer in arch.layers() {
            let normal = Normal::new(0.0, (gain / layer.fan_in as f64).sqrt())
                .expect("positive std");
            for w in &mut values[layer.weights..layer.bias] {
                *w = normal.sample(rng);
            }
        }
        Params { values }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

fn check_shapes(arch: &ArchDescriptor, params: &Params, x: &[f64]) -> Result<()> {
    if params.len() != arch.param_count() {
        return Err(Error::Shape(format!(
            "params have {} entries, architecture needs {}",
            params.len(),
            arch.param_count()
        )));
    }
    if x.len() != arch.input_dim {
        return Err(Error::Shape(format!(
            "input has length {}, architecture expects {}",
            x.len(),
            arch.input_dim
        )));
    }
    Ok(())
}

/// Intermediate values of one forward pass, kept for backpropagation.
struct Trace {
    /// `inputs[k]` is the input to layer k (post-activation of layer k-1).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn affine(layer: &LayerLayout, p: &[f64], input: &[f64]) -> Vec<f64> {
    let w = &p[layer.weights..layer.bias];
    let b = &p[layer.bias..layer.bias + layer.fan_out];
    w.chunks_exact(layer.fan_in)
        .zip(b)
        .map(|(row, &bias)| row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + bias)
        .collect()
}

fn forward_trace(arch: &ArchDescriptor, params: &Params, x: &[f64]) -> Trace {
    let layers = arch.layers();
    let p = params.as_slice();
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len() - 1);
    let mut current = x.to_vec();
    for (k, layer) in layers.iter().enumerate() {
        let z = affine(layer, p, &current);
        inputs.push(current);
        if k + 1 == layers.len() {
            return Trace {
                inputs,
                pre,
                logits: z,
            };
        }
        current = z.iter().map(|&v| arch.activation.apply(v)).collect();
        pre.push(z);
    }
    unreachable!("architecture has at least one layer")
}

/// Backpropagates `dlogits` through a recorded forward pass.
///
/// Adds `scale * dL/dparams` into `param_grad` when given, and returns
/// `dL/dx` when `want_input` is set.
fn backward(
    arch: &ArchDescriptor,
    params: &Params,
    trace: &Trace,
    dlogits: &[f64],
    mut param_grad: Option<(&mut [f64], f64)>,
    want_input: bool,
) -> Option<Vec<f64>> {
    let layers = arch.layers();
    let p = params.as_slice();
    let mut delta = dlogits.to_vec();
    for (k, layer) in layers.iter().enumerate().rev() {
        let input = &trace.inputs[k];
        if let Some((grad, scale)) = param_grad.as_mut() {
            for (o, &d) in delta.iter().enumerate() {
                let sd = *scale * d;
                if sd == 0.0 {
                    continue;
                }
                let row = &mut grad[layer.weights + o * layer.fan_in..][..layer.fan_in];
                for (g, &a) in row.iter_mut().zip(input) {
                    *g += sd * a;
                }
                grad[layer.bias + o] += sd;
            }
        }
        if k == 0 && !want_input {
            return None;
        }
        let w = &p[layer.weights..layer.bias];
        let mut upstream = vec![0.0; layer.fan_in];
        for (row, &d) in w.chunks_exact(layer.fan_in).zip(&delta) {
            if d == 0.0 {
                continue;
            }
            for (u, &wv) in upstream.iter_mut().zip(row) {
                *u += wv * d;
            }
        }
        if k == 0 {
            return Some(upstream);
        }
        delta = upstream
            .iter()
            .zip(&trace.pre[k - 1])
            .map(|(&u, &z)| u * arch.activation.derivative(z))
            .collect();
    }
    unreachable!("architecture has at least one layer")
}

/// Logits `f_θ(x)` before the softmax.
pub fn forward_logits(arch: &ArchDescriptor, params: &Params, x: &[f64]) -> Result<Vec<f64>> {
    check_shapes(arch, params, x)?;
    Ok(forward_trace(arch, params, x).logits)
}

/// Exact gradient of `objective_value(forward_logits(x), ...)` with respect to `x`.
pub fn input_gradient(
    arch: &ArchDescriptor,
    params: &Params,
    x: &[f64],
    y: usize,
    alt_label: Option<usize>,
    kind: ObjectiveKind,
) -> Result<Vec<f64>> {
    Ok(value_and_input_gradient(arch, params, x, y, alt_label, kind)?.1)
}

/// Objective value together with its input gradient, from one forward pass.
pub fn value_and_input_gradient(
    arch: &ArchDescriptor,
    params: &Params,
    x: &[f64],
    y: usize,
    alt_label: Option<usize>,
    kind: ObjectiveKind,
) -> Result<(f64, Vec<f64>)> {
    check_shapes(arch, params, x)?;
    let trace = forward_trace(arch, params, x);
    let (value, dlogits) = objective::value_and_grad(&trace.logits, y, alt_label, kind)?;
    let grad = backward(arch, params, &trace, &dlogits, None, true).expect("input gradient");
    Ok((value, grad))
}

/// Mean cross-entropy gradient over `batch`, shaped like [`Params`].
pub fn param_gradient(
    arch: &ArchDescriptor,
    params: &Params,
    batch: &[(&[f64], usize)],
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Empty("parameter gradient over an empty batch"));
    }
    let mut grad = vec![0.0; params.len()];
    let scale = 1.0 / batch.len() as f64;
    for &(x, y) in batch {
        accumulate_ce_gradient(arch, params, x, y, scale, &mut grad)?;
    }
    Ok(grad)
}

/// Adds `scale * dCE(x, y)/dparams` into `grad` and returns the example's loss.
pub(crate) fn accumulate_ce_gradient(
    arch: &ArchDescriptor,
    params: &Params,
    x: &[f64],
    y: usize,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    check_shapes(arch, params, x)?;
    let trace = forward_trace(arch, params, x);
    let kind = ObjectiveKind::new(ObjectiveFamily::CrossEntropy, Direction::In);
    let (loss, dlogits) = objective::value_and_grad(&trace.logits, y, None, kind)?;
    backward(arch, params, &trace, &dlogits, Some((grad, scale)), false);
    Ok(loss)
}

impl std::fmt::Display for ArchDescriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.input_dim)?;
        for h in &self.hidden_dims {
            write!(f, "-{h}")?;
        }
        write!(f, "-{} ({:?})", self.num_classes, self.activation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn arch(input: usize, hidden: &[usize], classes: usize, act: Activation) -> ArchDescriptor {
        ArchDescriptor::new(input, hidden.to_vec(), classes, act).unwrap()
    }

    #[test]
    fn param_count_is_a_function_of_arch() {
        let a = arch(3, &[4, 5], 2, Activation::Relu);
        assert_eq!(a.param_count(), 4 * 3 + 4 + 5 * 4 + 5 + 2 * 5 + 2);
        assert_eq!(Params::zeros(&a).len(), a.param_count());
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let a = arch(4, &[3], 5, Activation::Tanh);
        let logits = forward_logits(&a, &Params::zeros(&a), &[0.3, -1.0, 2.0, 0.5]).unwrap();
        assert_eq!(logits, vec![0.0; 5]);
    }

    #[test]
    fn identity_linear_layer() {
        let a = arch(2, &[], 2, Activation::Relu);
        let p = Params::from_vec(&a, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(forward_logits(&a, &p, &[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn small_net_matches_hand_computed_forward_pass() {
        let a = arch(2, &[3], 2, Activation::Relu);
        let p = Params::init(&a, &mut rng::stream(11, &[]));
        let v = p.as_slice();
        // layer 1: W1 (3x2) at 0..6, b1 at 6..9; layer 2: W2 (2x3) at 9..15, b2 at 15..17
        let x = [1.0, 0.0];
        let h: Vec<f64> = (0..3)
            .map(|i| (v[2 * i] * x[0] + v[2 * i + 1] * x[1] + v[6 + i]).max(0.0))
            .collect();
        let expected: Vec<f64> = (0..2)
            .map(|o| (0..3).map(|i| v[9 + 3 * o + i] * h[i]).sum::<f64>() + v[15 + o])
            .collect();
        let logits = forward_logits(&a, &p, &x).unwrap();
        for (l, e) in logits.iter().zip(&expected) {
            assert!((l - e).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_errors() {
        let a = arch(2, &[3], 2, Activation::Relu);
        let p = Params::zeros(&a);
        assert!(matches!(forward_logits(&a, &p, &[1.0]), Err(Error::Shape(_))));
        let other = arch(3, &[3], 2, Activation::Relu);
        assert!(matches!(
            forward_logits(&other, &p, &[1.0, 2.0, 3.0]),
            Err(Error::Shape(_))
        ));
        assert!(Params::from_vec(&a, vec![0.0; 3]).is_err());
        let mut bad = vec![0.0; a.param_count()];
        bad[0] = f64::NAN;
        assert!(Params::from_vec(&a, bad).is_err());
    }

    #[test]
    fn constant_network_has_zero_input_gradient() {
        let a = arch(3, &[4], 3, Activation::Tanh);
        let p = Params::zeros(&a);
        for family in ObjectiveFamily::ALL {
            for direction in [Direction::In, Direction::Out] {
                let g = input_gradient(
                    &a,
                    &p,
                    &[0.2, 0.4, 0.6],
                    0,
                    Some(1),
                    ObjectiveKind::new(family, direction),
                )
                .unwrap();
                assert!(g.iter().all(|&v| v == 0.0), "{family:?} {direction:?}");
            }
        }
    }

    #[test]
    fn linear_raw_logit_gradient_is_weight_row() {
        let a = arch(3, &[], 2, Activation::Relu);
        let p = Params::from_vec(&a, vec![1.0, 2.0, 3.0, -4.0, 5.0, -6.0, 0.5, 0.25]).unwrap();
        let kind = ObjectiveKind::new(ObjectiveFamily::RawLogit, Direction::Out);
        let g = input_gradient(&a, &p, &[0.1, 0.2, 0.3], 1, None, kind).unwrap();
        assert_eq!(g, vec![-4.0, 5.0, -6.0]);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let a = arch(2, &[], 2, Activation::Relu);
        assert!(matches!(
            param_gradient(&a, &Params::zeros(&a), &[]),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn single_sample_equals_batch_of_one() {
        let a = arch(3, &[4], 3, Activation::Relu);
        let p = Params::init(&a, &mut rng::stream(5, &[]));
        let x = [0.3, 0.9, 0.1];
        let mut direct = vec![0.0; p.len()];
        accumulate_ce_gradient(&a, &p, &x, 2, 1.0, &mut direct).unwrap();
        assert_eq!(param_gradient(&a, &p, &[(&x, 2)]).unwrap(), direct);
    }

    #[test]
    fn saturated_separable_point_has_vanishing_gradient() {
        // logit of the true class exceeds the other by 60 → softmax residual ~e^-60
        let a = arch(2, &[], 2, Activation::Relu);
        let p = Params::from_vec(&a, vec![30.0, 0.0, -30.0, 0.0, 0.0, 0.0]).unwrap();
        let g = param_gradient(&a, &p, &[(&[1.0, 0.0], 0)]).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "norm {norm}");
    }
}
