use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::Tensor;
use crate::error::{Error, Result};

/// Fully connected layer `y = W x + b` with gradient accumulators.
///
/// Weights are row-major `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    grad_weights: Vec<f64>,
    grad_bias: Vec<f64>,
}

impl AffineLayer {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot bounds");
        let weights = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        Self::from_parts(in_dim, out_dim, weights, vec![0.0; out_dim])
            .expect("glorot shapes are consistent")
    }

    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Contract(format!(
                "layer dims must be positive, got {out_dim}x{in_dim}"
            )));
        }
        if weights.len() != in_dim * out_dim {
            return Err(Error::dims(
                "AffineLayer weights",
                &[out_dim, in_dim],
                &[weights.len()],
            ));
        }
        if bias.len() != out_dim {
            return Err(Error::dims("AffineLayer bias", &[out_dim], &[bias.len()]));
        }
        Ok(Self {
            in_dim,
            out_dim,
            grad_weights: vec![0.0; weights.len()],
            grad_bias: vec![0.0; out_dim],
            weights,
            bias,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn grad_weights(&self) -> &[f64] {
        &self.grad_weights
    }

    pub fn grad_bias(&self) -> &[f64] {
        &self.grad_bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn zero_grad(&mut self) {
        self.grad_weights.fill(0.0);
        self.grad_bias.fill(0.0);
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// `(weights, grad_weights)` and `(bias, grad_bias)` pairs.
    pub fn params_and_grads(&mut self) -> [(&mut [f64], &[f64]); 2] {
        [
            (&mut self.weights, &self.grad_weights),
            (&mut self.bias, &self.grad_bias),
        ]
    }

    /// Batched forward pass over the rows of `input`.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        if input.cols() != self.in_dim {
            return Err(Error::dims(
                "forward_affine",
                input.shape(),
                &[self.out_dim, self.in_dim],
            ));
        }
        let m = input.rows();
        let mut out = Vec::with_capacity(m * self.out_dim);
        for _ in 0..m {
            out.extend_from_slice(&self.bias);
        }
        if m > 0 {
            // out (m x out) += X (m x in) . W^T (in x out)
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    self.in_dim,
                    self.out_dim,
                    1.0,
                    input.values().as_ptr(),
                    self.in_dim as isize,
                    1,
                    self.weights.as_ptr(),
                    1,
                    self.in_dim as isize,
                    1.0,
                    out.as_mut_ptr(),
                    self.out_dim as isize,
                    1,
                );
            }
        }
        let mut shape = input.shape().to_vec();
        match shape.last_mut() {
            Some(last) => *last = self.out_dim,
            None => shape.push(self.out_dim),
        }
        Tensor::new(shape, out)
    }

    /// Accumulates parameter gradients for `grad_output = dL/dy` and returns `dL/dx`.
    pub fn backward(&mut self, input: &Tensor, grad_output: &Tensor) -> Result<Tensor> {
        if input.cols() != self.in_dim
            || grad_output.cols() != self.out_dim
            || input.rows() != grad_output.rows()
        {
            return Err(Error::dims(
                "backward_affine",
                input.shape(),
                grad_output.shape(),
            ));
        }
        let m = input.rows();
        let mut grad_input = vec![0.0; m * self.in_dim];
        if m > 0 {
            unsafe {
                // grad_W (out x in) += G^T (out x m) . X (m x in)
                matrixmultiply::dgemm(
                    self.out_dim,
                    m,
                    self.in_dim,
                    1.0,
                    grad_output.values().as_ptr(),
                    1,
                    self.out_dim as isize,
                    input.values().as_ptr(),
                    self.in_dim as isize,
                    1,
                    1.0,
                    self.grad_weights.as_mut_ptr(),
                    self.in_dim as isize,
                    1,
                );
                // dX (m x in) = G (m x out) . W (out x in)
                matrixmultiply::dgemm(
                    m,
                    self.out_dim,
                    self.in_dim,
                    1.0,
                    grad_output.values().as_ptr(),
                    self.out_dim as isize,
                    1,
                    self.weights.as_ptr(),
                    self.in_dim as isize,
                    1,
                    0.0,
                    grad_input.as_mut_ptr(),
                    self.in_dim as isize,
                    1,
                );
            }
            for r in 0..m {
                for (gb, g) in self.grad_bias.iter_mut().zip(grad_output.row(r)) {
                    *gb += g;
                }
            }
        }
        Tensor::new(input.shape().to_vec(), grad_input)
    }
}
