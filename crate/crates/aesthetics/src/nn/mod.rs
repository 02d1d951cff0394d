//! Minimal deterministic CNN engine on f32 ndarray storage.
//!
//! Layers cache what they need during a training-mode forward pass and
//! accumulate parameter gradients on backward. Every batched operation
//! loops per sample, so outputs are exactly permutation-equivariant and
//! independent of batch composition. Gradient and velocity buffers are
//! allocated lazily; frozen parameters never allocate either, which makes
//! "zero gradient" literal.

pub mod conv;
pub mod dense;

pub use conv::{Conv2d, MaxPool2d};
pub use dense::{Dense, DenseStack, Relu};

use ndarray::{Array2, ArrayD, ArrayViewD};
use rand::Rng;

/// One learnable tensor with its optional gradient and momentum state.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f32>,
    pub grad: Option<ArrayD<f32>>,
    pub velocity: Option<ArrayD<f32>>,
    pub trainable: bool,
}

impl Param {
    pub fn new(value: ArrayD<f32>) -> Param {
        Param {
            value,
            grad: None,
            velocity: None,
            trainable: true,
        }
    }

    /// Add to the gradient buffer. Frozen parameters skip accumulation
    /// entirely: their gradient stays exactly zero (absent).
    pub fn accumulate(&mut self, contribution: ArrayViewD<'_, f32>) {
        if !self.trainable {
            return;
        }
        match &mut self.grad {
            Some(g) => *g += &contribution,
            None => self.grad = Some(contribution.to_owned()),
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// He-uniform initialization: U(-b, b) with b = sqrt(6 / fan_in).
pub fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> ArrayD<f32> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n)
        .map(|_| ((rng.gen::<f64>() * 2.0 - 1.0) * bound) as f32)
        .collect();
    ArrayD::from_shape_vec(shape, data).expect("shape matches data length")
}

/// Gaussian initialization via the Box-Muller transform.
pub fn normal_init(shape: &[usize], std: f64, rng: &mut impl Rng) -> ArrayD<f32> {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| (box_muller(rng) * std) as f32).collect();
    ArrayD::from_shape_vec(shape, data).expect("shape matches data length")
}

fn box_muller(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]: keeps the log finite
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn zeros(shape: &[usize]) -> ArrayD<f32> {
    ArrayD::zeros(shape.to_vec())
}

/// Softmax over one row of logits.
pub fn softmax_row(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

#[derive(Debug)]
pub struct LossOutput {
    pub loss: f32,
    /// Gradient with respect to the logits, already averaged.
    pub grad: Array2<f32>,
}

/// Mean softmax cross-entropy over the batch. With `class_weights`, each
/// sample's term is weighted by its class and the mean is taken over the
/// total weight.
pub fn softmax_cross_entropy(
    logits: &Array2<f32>,
    labels: &[usize],
    class_weights: Option<&[f32]>,
) -> LossOutput {
    let batch = logits.nrows();
    assert_eq!(batch, labels.len(), "one label per logits row");
    let classes = logits.ncols();
    let mut grad = Array2::<f32>::zeros(logits.raw_dim());
    let mut loss_sum = 0f64;
    let mut weight_sum = 0f64;
    for (r, row) in logits.outer_iter().enumerate() {
        let label = labels[r];
        assert!(label < classes, "label {label} out of range");
        let weight = class_weights.map_or(1.0, |w| w[label]);
        let probs = softmax_row(row.as_slice().expect("contiguous row"));
        loss_sum += f64::from(weight) * -f64::ln(f64::from(probs[label]));
        for c in 0..classes {
            let indicator = if c == label { 1.0 } else { 0.0 };
            grad[[r, c]] = weight * (probs[c] - indicator);
        }
        weight_sum += f64::from(weight);
    }
    let scale = 1.0 / weight_sum as f32;
    grad.mapv_inplace(|g| g * scale);
    LossOutput {
        loss: (loss_sum / weight_sum) as f32,
        grad,
    }
}

/// One SGD-with-momentum step: v = mu * v + g; w -= lr * v. Consumes the
/// gradients. Parameters without a gradient (frozen, or unused this step)
/// are untouched bit for bit.
pub fn sgd_step(params: &mut [&mut Param], lr: f32, momentum: f32) {
    for param in params.iter_mut() {
        if !param.trainable {
            param.grad = None;
            continue;
        }
        let Some(grad) = param.grad.take() else {
            continue;
        };
        let velocity = param
            .velocity
            .get_or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
        velocity.zip_mut_with(&grad, |v, &g| *v = momentum * *v + g);
        param.value.zip_mut_with(velocity, |w, &v| *w -= lr * v);
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn he_uniform_respects_bound_and_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = he_uniform(&[16, 3, 3, 3], 27, &mut rng);
        let bound = (6.0f64 / 27.0).sqrt() as f32;
        assert!(w.iter().all(|v| v.abs() <= bound));
        let mut rng2 = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(w, he_uniform(&[16, 3, 3, 3], 27, &mut rng2));
    }

    #[test]
    fn normal_init_moments_are_plausible() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = normal_init(&[10000], 0.01, &mut rng);
        let mean: f64 = w.iter().map(|&v| v as f64).sum::<f64>() / w.len() as f64;
        let var: f64 =
            w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < 5e-4, "mean {mean}");
        assert!((var.sqrt() - 0.01).abs() < 1e-3, "std {}", var.sqrt());
    }

    #[test]
    fn softmax_is_symmetric_on_equal_logits() {
        let p = softmax_row(&[3.0, 3.0]);
        assert_eq!(p[0], 0.5);
        assert_eq!(p[1], 0.5);
    }

    #[test]
    fn cross_entropy_matches_hand_computation() {
        // Two samples with logits (1, 0) and labels 0, 1.
        let logits = Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let out = softmax_cross_entropy(&logits, &[0, 1], None);
        let p0 = 1.0f64 / (1.0 + (-1.0f64).exp());
        let want = (-(p0.ln()) - (1.0 - p0).ln()) / 2.0;
        assert!((out.loss as f64 - want).abs() < 1e-6);
        // Gradient rows: (p - onehot) / batch.
        assert!((out.grad[[0, 0]] as f64 - (p0 - 1.0) / 2.0).abs() < 1e-6);
        assert!((out.grad[[1, 1]] as f64 - ((1.0 - p0) - 1.0) / 2.0).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = Array2::from_shape_fn((4, 2), |_| rng.gen::<f32>() * 2.0 - 1.0);
        let labels = [0usize, 1, 1, 0];
        let out = softmax_cross_entropy(&logits, &labels, None);
        let h = 1e-3f32;
        for r in 0..4 {
            for c in 0..2 {
                let mut plus = logits.clone();
                plus[[r, c]] += h;
                let mut minus = logits.clone();
                minus[[r, c]] -= h;
                let numeric = (softmax_cross_entropy(&plus, &labels, None).loss
                    - softmax_cross_entropy(&minus, &labels, None).loss)
                    / (2.0 * h);
                testutil::assert_close(out.grad[[r, c]], numeric, &format!("logit ({r},{c})"));
            }
        }
    }

    #[test]
    fn class_weights_rebalance_the_mean() {
        let logits = Array2::from_shape_vec((2, 2), vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let unweighted = softmax_cross_entropy(&logits, &[0, 1], None);
        let weighted = softmax_cross_entropy(&logits, &[0, 1], Some(&[3.0, 1.0]));
        // Same per-sample loss ln(2) regardless of weighting when logits tie.
        assert!((unweighted.loss - weighted.loss).abs() < 1e-6);
        // But the gradient mass shifts toward the upweighted class's sample.
        assert!(weighted.grad[[0, 0]].abs() > weighted.grad[[1, 1]].abs());
    }

    #[test]
    fn sgd_momentum_two_steps_match_hand_oracle() {
        let mut p = Param::new(ArrayD::from_elem(vec![1], 1.0f32));
        for _ in 0..2 {
            p.grad = Some(ArrayD::from_elem(vec![1], 0.5f32));
            sgd_step(&mut [&mut p], 0.1, 0.9);
        }
        // v1 = 0.5, w1 = 1 - 0.05 = 0.95; v2 = 0.95, w2 = 0.95 - 0.095 = 0.855.
        assert!((p.value[[0]] - 0.855).abs() < 1e-6);
        assert!(p.grad.is_none(), "step consumes the gradient");
    }

    #[test]
    fn frozen_params_never_move_or_allocate() {
        let mut p = Param::new(ArrayD::from_elem(vec![2], 1.5f32));
        p.trainable = false;
        p.accumulate(ArrayD::from_elem(vec![2], 9.0f32).view());
        assert!(p.grad.is_none(), "frozen params skip accumulation");
        sgd_step(&mut [&mut p], 0.1, 0.9);
        assert_eq!(p.value[[0]], 1.5);
        assert!(p.velocity.is_none());
    }
}
