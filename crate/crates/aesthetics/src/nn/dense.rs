//! Fully connected layers and activation.
//!
//! `Dense` computes each output row with its own gemv over that row alone,
//! so a sample's activations are bitwise identical no matter which batch it
//! rides in or where. The classifier heads depend on that property.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, Dimension, ShapeBuilder};
use rand::Rng;

use super::{he_uniform, zeros, Param};

/// Affine layer, weight stored (out, in) row-major.
#[derive(Debug)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    pub in_features: usize,
    pub out_features: usize,
    cached_input: Option<Array2<f32>>,
}

impl Dense {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Dense {
        Dense {
            weight: Param::new(he_uniform(&[out_features, in_features], in_features, rng)),
            bias: Param::new(zeros(&[out_features])),
            in_features,
            out_features,
            cached_input: None,
        }
    }

    fn weight_view(&self) -> ArrayView2<'_, f32> {
        ArrayView2::from_shape(
            (self.out_features, self.in_features).strides((self.in_features, 1)),
            self.weight.value.as_slice().expect("contiguous weight"),
        )
        .expect("weight view")
    }

    fn row_forward(&self, input: ArrayView1<'_, f32>, mut out: ArrayViewMut1<'_, f32>) {
        let w = self.weight_view();
        let bias = self.bias.value.as_slice().expect("contiguous bias");
        let y = w.dot(&input);
        for (o, (&v, &b)) in out.iter_mut().zip(y.iter().zip(bias.iter())) {
            *o = v + b;
        }
    }

    pub fn forward(&mut self, input: &Array2<f32>, train: bool) -> Array2<f32> {
        let (batch, features) = input.dim();
        assert_eq!(features, self.in_features, "feature mismatch");
        let mut output = Array2::<f32>::zeros((batch, self.out_features));
        for b in 0..batch {
            self.row_forward(input.row(b), output.row_mut(b));
        }
        self.cached_input = if train { Some(input.clone()) } else { None };
        output
    }

    pub fn backward(&mut self, grad_output: &Array2<f32>) -> Array2<f32> {
        let input = self
            .cached_input
            .take()
            .expect("backward without training forward");
        let batch = input.nrows();
        assert_eq!(grad_output.dim(), (batch, self.out_features));
        let w = self.weight_view();
        let mut grad_input = Array2::<f32>::zeros((batch, self.in_features));
        let mut grad_weight = Array2::<f32>::zeros((self.out_features, self.in_features));
        let mut grad_bias = Array1::<f32>::zeros(self.out_features);
        for b in 0..batch {
            let go = grad_output.row(b);
            let x = input.row(b);
            // Rank-one update per sample keeps the math row-local.
            for (oc, &g) in go.iter().enumerate() {
                grad_bias[oc] += g;
                let mut wrow = grad_weight.row_mut(oc);
                wrow.zip_mut_with(&x, |acc, &xv| *acc += g * xv);
            }
            let gi = w.t().dot(&go);
            grad_input.row_mut(b).assign(&gi);
        }
        self.weight.accumulate(
            grad_weight
                .into_shape_with_order(self.weight.value.raw_dim())
                .expect("weight gradient shape")
                .view(),
        );
        self.bias
            .accumulate(grad_bias.into_dyn().view());
        grad_input
    }
}

/// Elementwise max(0, x) over any dimensionality, mask cached while training.
#[derive(Debug)]
pub struct Relu<D: Dimension> {
    mask: Option<ndarray::Array<f32, D>>,
}

impl<D: Dimension> Relu<D> {
    pub fn new() -> Relu<D> {
        Relu { mask: None }
    }

    pub fn forward(
        &mut self,
        input: &ndarray::Array<f32, D>,
        train: bool,
    ) -> ndarray::Array<f32, D> {
        let out = input.mapv(|v| v.max(0.0));
        if train {
            self.mask = Some(input.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        }
        out
    }

    pub fn backward(&mut self, grad_output: &ndarray::Array<f32, D>) -> ndarray::Array<f32, D> {
        let mask = self.mask.take().expect("backward without training forward");
        grad_output * &mask
    }
}

impl<D: Dimension> Default for Relu<D> {
    fn default() -> Self {
        Relu::new()
    }
}

/// A chain of Dense layers with ReLU between all but the last pair.
#[derive(Debug)]
pub struct DenseStack {
    pub layers: Vec<Dense>,
    relus: Vec<Relu<ndarray::Ix2>>,
}

impl DenseStack {
    /// `widths` lists every layer width starting from the input features:
    /// [in, h1, ..., out].
    pub fn new(widths: &[usize], rng: &mut impl Rng) -> DenseStack {
        assert!(widths.len() >= 2, "need at least input and output widths");
        let layers: Vec<Dense> = widths
            .windows(2)
            .map(|pair| Dense::new(pair[0], pair[1], rng))
            .collect();
        DenseStack::from_layers(layers)
    }

    /// Assemble from individually constructed layers; widths must chain.
    pub fn from_layers(layers: Vec<Dense>) -> DenseStack {
        assert!(!layers.is_empty(), "need at least one layer");
        for pair in layers.windows(2) {
            assert_eq!(
                pair[0].out_features, pair[1].in_features,
                "layer widths must chain"
            );
        }
        let relus = (0..layers.len().saturating_sub(1))
            .map(|_| Relu::new())
            .collect();
        DenseStack { layers, relus }
    }

    pub fn forward(&mut self, input: &Array2<f32>, train: bool) -> Array2<f32> {
        let mut x = input.clone();
        let last = self.layers.len() - 1;
        for i in 0..self.layers.len() {
            x = self.layers[i].forward(&x, train);
            if i < last {
                x = self.relus[i].forward(&x, train);
            }
        }
        x
    }

    pub fn backward(&mut self, grad_output: &Array2<f32>) -> Array2<f32> {
        let mut g = grad_output.clone();
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            if i < last {
                g = self.relus[i].backward(&g);
            }
            g = self.layers[i].backward(&g);
        }
        g
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}
