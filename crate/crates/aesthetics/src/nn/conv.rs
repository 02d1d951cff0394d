//! Convolution and max-pooling with explicit im2col lowering.
//!
//! Forward and backward both process one sample at a time: the GEMM sees a
//! (C*kh*kw, oh*ow) patch matrix per image, never the whole batch. That keeps
//! peak memory flat in the batch dimension and makes per-sample outputs
//! independent of batch composition.

use ndarray::{Array2, Array4, ArrayView2, ArrayView3, ArrayViewMut3, ShapeBuilder};
use rand::Rng;

use super::{he_uniform, zeros, Param};

/// 2-D convolution, square kernel, symmetric zero padding.
#[derive(Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    cached_input: Option<Array4<f32>>,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Conv2d {
        let fan_in = in_channels * kernel * kernel;
        Conv2d {
            weight: Param::new(he_uniform(
                &[out_channels, in_channels, kernel, kernel],
                fan_in,
                rng,
            )),
            bias: Param::new(zeros(&[out_channels])),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            cached_input: None,
        }
    }

    pub fn output_size(&self, input: usize) -> usize {
        (input + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn col_shape(&self, oh: usize, ow: usize) -> (usize, usize) {
        (self.in_channels * self.kernel * self.kernel, oh * ow)
    }

    /// Lower one padded input sample into the (C*k*k, oh*ow) patch matrix.
    fn im2col(&self, sample: ArrayView3<'_, f32>, col: &mut Array2<f32>) {
        let (c_in, h, w) = sample.dim();
        let oh = self.output_size(h);
        let ow = self.output_size(w);
        let k = self.kernel;
        let pad = self.padding as isize;
        for c in 0..c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    for oy in 0..oh {
                        let sy = (oy * self.stride) as isize + ky as isize - pad;
                        for ox in 0..ow {
                            let sx = (ox * self.stride) as isize + kx as isize - pad;
                            let v = if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w
                            {
                                sample[[c, sy as usize, sx as usize]]
                            } else {
                                0.0
                            };
                            col[[row, oy * ow + ox]] = v;
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of `im2col`: scatter-add patch-matrix gradients back onto the
    /// input sample.
    fn col2im(&self, col: &Array2<f32>, mut sample: ArrayViewMut3<'_, f32>) {
        let (c_in, h, w) = sample.dim();
        let oh = self.output_size(h);
        let ow = self.output_size(w);
        let k = self.kernel;
        let pad = self.padding as isize;
        for c in 0..c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    for oy in 0..oh {
                        let sy = (oy * self.stride) as isize + ky as isize - pad;
                        if sy < 0 || sy as usize >= h {
                            continue;
                        }
                        for ox in 0..ow {
                            let sx = (ox * self.stride) as isize + kx as isize - pad;
                            if sx < 0 || sx as usize >= w {
                                continue;
                            }
                            sample[[c, sy as usize, sx as usize]] += col[[row, oy * ow + ox]];
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&mut self, input: &Array4<f32>, train: bool) -> Array4<f32> {
        let (batch, c_in, h, w) = input.dim();
        assert_eq!(c_in, self.in_channels, "channel mismatch");
        let oh = self.output_size(h);
        let ow = self.output_size(w);
        let weight2 = self.weight_matrix();
        let mut output = Array4::<f32>::zeros((batch, self.out_channels, oh, ow));
        let mut col = Array2::<f32>::zeros(self.col_shape(oh, ow));
        let bias = self.bias.value.as_slice().expect("contiguous bias");
        for b in 0..batch {
            self.im2col(input.index_axis(ndarray::Axis(0), b), &mut col);
            let out = weight2.dot(&col); // (out_channels, oh*ow)
            let mut sample = output.index_axis_mut(ndarray::Axis(0), b);
            for oc in 0..self.out_channels {
                let b_oc = bias[oc];
                for oy in 0..oh {
                    for ox in 0..ow {
                        sample[[oc, oy, ox]] = out[[oc, oy * ow + ox]] + b_oc;
                    }
                }
            }
        }
        self.cached_input = if train { Some(input.clone()) } else { None };
        output
    }

    /// Backward pass. Recomputes each sample's patch matrix from the cached
    /// input instead of caching per-sample columns, trading FLOPs for memory.
    pub fn backward(&mut self, grad_output: &Array4<f32>) -> Array4<f32> {
        let input = self
            .cached_input
            .take()
            .expect("backward without training forward");
        let (batch, _, h, w) = input.dim();
        let oh = self.output_size(h);
        let ow = self.output_size(w);
        assert_eq!(grad_output.dim(), (batch, self.out_channels, oh, ow));
        let weight2 = self.weight_matrix().to_owned();
        let mut grad_input = Array4::<f32>::zeros(input.raw_dim());
        let mut grad_weight = Array2::<f32>::zeros((self.out_channels, weight2.ncols()));
        let mut grad_bias = vec![0f32; self.out_channels];
        let mut col = Array2::<f32>::zeros(self.col_shape(oh, ow));
        for b in 0..batch {
            self.im2col(input.index_axis(ndarray::Axis(0), b), &mut col);
            let go = grad_output.index_axis(ndarray::Axis(0), b);
            let go2 = ArrayView2::from_shape(
                (self.out_channels, oh * ow),
                go.as_slice().expect("contiguous grad"),
            )
            .expect("reshape grad");
            grad_weight += &go2.dot(&col.t());
            for oc in 0..self.out_channels {
                grad_bias[oc] += go2.row(oc).sum();
            }
            let grad_col = weight2.t().dot(&go2);
            self.col2im(&grad_col, grad_input.index_axis_mut(ndarray::Axis(0), b));
        }
        let weight_shape = self.weight.value.raw_dim();
        self.weight.accumulate(
            grad_weight
                .into_shape_with_order(weight_shape)
                .expect("weight gradient shape")
                .view(),
        );
        self.bias.accumulate(
            ndarray::ArrayD::from_shape_vec(vec![self.out_channels], grad_bias)
                .expect("bias gradient shape")
                .view(),
        );
        grad_input
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f32> {
        let cols = self.in_channels * self.kernel * self.kernel;
        ArrayView2::from_shape(
            (self.out_channels, cols).strides((cols, 1)),
            self.weight.value.as_slice().expect("contiguous weight"),
        )
        .expect("weight matrix view")
    }
}

/// Max pooling over square windows. Ties resolve to the first maximum in
/// row-major window order.
#[derive(Debug)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    /// Flat input index (within the sample's channel plane) of each output's
    /// argmax, kept from the training forward pass.
    argmax: Option<Array4<u32>>,
    input_dim: (usize, usize, usize, usize),
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize) -> MaxPool2d {
        MaxPool2d {
            kernel,
            stride,
            argmax: None,
            input_dim: (0, 0, 0, 0),
        }
    }

    pub fn output_size(&self, input: usize) -> usize {
        (input - self.kernel) / self.stride + 1
    }

    pub fn forward(&mut self, input: &Array4<f32>, train: bool) -> Array4<f32> {
        let (batch, channels, h, w) = input.dim();
        let oh = self.output_size(h);
        let ow = self.output_size(w);
        let mut output = Array4::<f32>::zeros((batch, channels, oh, ow));
        let mut argmax = Array4::<u32>::zeros((batch, channels, oh, ow));
        for b in 0..batch {
            for c in 0..channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let y0 = oy * self.stride;
                        let x0 = ox * self.stride;
                        let mut best = f32::NEG_INFINITY;
                        let mut best_idx = 0u32;
                        for ky in 0..self.kernel {
                            for kx in 0..self.kernel {
                                let v = input[[b, c, y0 + ky, x0 + kx]];
                                if v > best {
                                    best = v;
                                    best_idx = ((y0 + ky) * w + x0 + kx) as u32;
                                }
                            }
                        }
                        output[[b, c, oy, ox]] = best;
                        argmax[[b, c, oy, ox]] = best_idx;
                    }
                }
            }
        }
        if train {
            self.argmax = Some(argmax);
            self.input_dim = (batch, channels, h, w);
        }
        output
    }

    pub fn backward(&mut self, grad_output: &Array4<f32>) -> Array4<f32> {
        let argmax = self.argmax.take().expect("backward without training forward");
        let (batch, channels, h, w) = self.input_dim;
        let mut grad_input = Array4::<f32>::zeros((batch, channels, h, w));
        let (_, _, oh, ow) = grad_output.dim();
        for b in 0..batch {
            for c in 0..channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let flat = argmax[[b, c, oy, ox]] as usize;
                        grad_input[[b, c, flat / w, flat % w]] += grad_output[[b, c, oy, ox]];
                    }
                }
            }
        }
        grad_input
    }
}
