use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Matrix2D, Parameterized};
use crate::error::{Error, Result};

/// Row-wise affine map `y = x·Wᵀ + b`: a 1×1 convolution over whatever the
/// rows index (snippets or proposal cells). `weights` is `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    in_features: usize,
    out_features: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    pub fn new(in_features: usize, out_features: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            return Err(Error::config("dense layer needs positive widths"));
        }
        if weights.len() != in_features * out_features || bias.len() != out_features {
            return Err(Error::config(format!(
                "dense [{out_features}x{in_features}] got {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_features,
            out_features,
            weights,
            bias,
        })
    }

    pub fn zeros(in_features: usize, out_features: usize) -> Result<Self> {
        Self::new(
            in_features,
            out_features,
            vec![0.0; in_features * out_features],
            vec![0.0; out_features],
        )
    }

    pub fn identity(features: usize) -> Result<Self> {
        let mut d = Self::zeros(features, features)?;
        for i in 0..features {
            d.weights[i * features + i] = 1.0;
        }
        Ok(d)
    }

    pub fn random<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Result<Self> {
        let mut d = Self::zeros(in_features, out_features)?;
        let bound = (3.0 / in_features as f64).sqrt();
        for w in &mut d.weights {
            *w = rng.random_range(-bound..bound);
        }
        Ok(d)
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    #[inline]
    pub fn apply_row(&self, x: &[f64], out: &mut [f64]) {
        for (o, y) in out.iter_mut().enumerate() {
            let w = &self.weights[o * self.in_features..(o + 1) * self.in_features];
            *y = self.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn forward(&self, x: &Matrix2D) -> Result<Matrix2D> {
        if x.cols() != self.in_features {
            return Err(Error::config(format!(
                "dense layer expects {} features, got {}",
                self.in_features,
                x.cols()
            )));
        }
        let mut out = Matrix2D::zeros(x.rows(), self.out_features);
        for r in 0..x.rows() {
            self.apply_row(x.row(r), out.row_mut(r));
        }
        Ok(out)
    }

    /// Gradient on the input; parameter gradients are added into `grad`.
    pub fn backward(&self, x: &Matrix2D, grad_out: &Matrix2D, grad: &mut Dense) -> Matrix2D {
        let mut dx = Matrix2D::zeros(x.rows(), self.in_features);
        for r in 0..x.rows() {
            let xr = x.row(r);
            let gr = grad_out.row(r);
            let dxr = dx.row_mut(r);
            for (o, &g) in gr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad.bias[o] += g;
                let w = &self.weights[o * self.in_features..(o + 1) * self.in_features];
                let gw = &mut grad.weights[o * self.in_features..(o + 1) * self.in_features];
                for k in 0..self.in_features {
                    gw[k] += g * xr[k];
                    dxr[k] += g * w[k];
                }
            }
        }
        dx
    }
}

impl Parameterized for Dense {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(&self.weights);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(&mut self.weights);
        f(&mut self.bias);
    }
}
