use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix2D;
use crate::error::{Error, Result};

/// Anything holding trainable reals. Visiting order must be stable so flat
/// vectors from two instances of the same shape line up.
pub trait Parameterized {
    fn visit(&self, f: &mut dyn FnMut(&[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |s| n += s.len());
        n
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit(&mut |s| out.extend_from_slice(s));
        out
    }

    fn load_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_mut(&mut |s| {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        });
        debug_assert_eq!(offset, flat.len());
    }

    /// Sum of squared parameters (the L2 regulariser).
    fn sum_squares(&self) -> f64 {
        let mut acc = 0.0;
        self.visit(&mut |s| acc += s.iter().map(|v| v * v).sum::<f64>());
        acc
    }

    fn zero_all(&mut self) {
        self.visit_mut(&mut |s| s.fill(0.0));
    }
}

/// Weights of a same-length, stride-1, zero-padded 1-D convolution.
///
/// `weights` is laid out `[out][in][k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1DParams {
    in_channels: usize,
    out_channels: usize,
    kernel_size: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Conv1DParams {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if kernel_size % 2 == 0 {
            return Err(Error::config(format!(
                "kernel size must be odd, got {kernel_size}"
            )));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::config("convolution needs at least one channel"));
        }
        if weights.len() != out_channels * in_channels * kernel_size {
            return Err(Error::config(format!(
                "expected {} weights for [{out_channels},{in_channels},{kernel_size}], got {}",
                out_channels * in_channels * kernel_size,
                weights.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::config(format!(
                "expected {out_channels} biases, got {}",
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite convolution parameter"));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel_size,
            weights,
            bias,
        })
    }

    pub fn zeros(in_channels: usize, out_channels: usize, kernel_size: usize) -> Result<Self> {
        Self::new(
            in_channels,
            out_channels,
            kernel_size,
            vec![0.0; in_channels * out_channels * kernel_size],
            vec![0.0; out_channels],
        )
    }

    /// Uniform init in `±sqrt(3 / fan_in)`, zero bias.
    pub fn random<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::zeros(in_channels, out_channels, kernel_size)?;
        let bound = (3.0 / (in_channels * kernel_size) as f64).sqrt();
        for w in &mut p.weights {
            *w = rng.random_range(-bound..bound);
        }
        Ok(p)
    }

    /// `k = 1` identity map between equal channel counts.
    pub fn identity(channels: usize) -> Result<Self> {
        let mut p = Self::zeros(channels, channels, 1)?;
        for c in 0..channels {
            p.weights[c * channels + c] = 1.0;
        }
        Ok(p)
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    #[inline]
    pub fn weight(&self, out: usize, inp: usize, tap: usize) -> f64 {
        self.weights[(out * self.in_channels + inp) * self.kernel_size + tap]
    }

    pub fn set_weight(&mut self, out: usize, inp: usize, tap: usize, v: f64) {
        self.weights[(out * self.in_channels + inp) * self.kernel_size + tap] = v;
    }
}

impl Parameterized for Conv1DParams {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(&self.weights);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(&mut self.weights);
        f(&mut self.bias);
    }
}

fn check_input(input: &Matrix2D, params: &Conv1DParams) -> Result<()> {
    if input.cols() != params.in_channels {
        return Err(Error::config(format!(
            "conv1d expects {} input channels, got {}",
            params.in_channels,
            input.cols()
        )));
    }
    Ok(())
}

/// Same-length convolution: `y[p][o] = b[o] + Σ_c Σ_t w[o][c][t] · x[p + t − k/2][c]`
/// with zeros outside the sequence.
pub fn conv1d(input: &Matrix2D, params: &Conv1DParams) -> Result<Matrix2D> {
    check_input(input, params)?;
    let len = input.rows();
    let half = params.kernel_size / 2;
    let mut out = Matrix2D::zeros(len, params.out_channels);
    for p in 0..len {
        for o in 0..params.out_channels {
            let mut acc = params.bias[o];
            for t in 0..params.kernel_size {
                let Some(src) = (p + t).checked_sub(half).filter(|&s| s < len) else {
                    continue;
                };
                let x = input.row(src);
                let base = o * params.in_channels * params.kernel_size + t;
                for (c, &xv) in x.iter().enumerate() {
                    acc += params.weights[base + c * params.kernel_size] * xv;
                }
            }
            out.set(p, o, acc);
        }
    }
    Ok(out)
}

/// Gradients of [`conv1d`] with respect to its input and parameters.
pub fn conv1d_backward(
    input: &Matrix2D,
    params: &Conv1DParams,
    grad_out: &Matrix2D,
) -> Result<(Matrix2D, Conv1DParams)> {
    check_input(input, params)?;
    if grad_out.rows() != input.rows() || grad_out.cols() != params.out_channels {
        return Err(Error::config("conv1d_backward: gradient shape mismatch"));
    }
    let len = input.rows();
    let k = params.kernel_size;
    let half = k / 2;
    let mut grad_input = Matrix2D::zeros(len, params.in_channels);
    let mut grad_params = Conv1DParams::zeros(params.in_channels, params.out_channels, k)?;
    for p in 0..len {
        for o in 0..params.out_channels {
            let g = grad_out.get(p, o);
            if g == 0.0 {
                continue;
            }
            grad_params.bias[o] += g;
            for t in 0..k {
                let Some(src) = (p + t).checked_sub(half).filter(|&s| s < len) else {
                    continue;
                };
                let base = o * params.in_channels * k + t;
                for c in 0..params.in_channels {
                    grad_params.weights[base + c * k] += g * input.get(src, c);
                    grad_input.add_at(src, c, g * params.weights[base + c * k]);
                }
            }
        }
    }
    Ok((grad_input, grad_params))
}

/// Per-channel scale and shift, standing in for batch normalisation at
/// single-sample inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelAffine {
    scale: Vec<f64>,
    shift: Vec<f64>,
}

impl ChannelAffine {
    pub fn identity(channels: usize) -> Self {
        Self {
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
        }
    }

    pub fn new(scale: Vec<f64>, shift: Vec<f64>) -> Result<Self> {
        if scale.len() != shift.len() {
            return Err(Error::config("affine scale/shift lengths differ"));
        }
        Ok(Self { scale, shift })
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn forward(&self, x: &Matrix2D) -> Matrix2D {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = *v * self.scale[c] + self.shift[c];
            }
        }
        out
    }

    /// Returns (grad wrt input, grad wrt parameters).
    pub fn backward(&self, x: &Matrix2D, grad_out: &Matrix2D) -> (Matrix2D, ChannelAffine) {
        let mut grad = ChannelAffine {
            scale: vec![0.0; self.scale.len()],
            shift: vec![0.0; self.shift.len()],
        };
        let mut gx = grad_out.clone();
        for r in 0..x.rows() {
            for c in 0..x.cols() {
                let g = grad_out.get(r, c);
                grad.scale[c] += g * x.get(r, c);
                grad.shift[c] += g;
                gx.set(r, c, g * self.scale[c]);
            }
        }
        (gx, grad)
    }
}

impl Parameterized for ChannelAffine {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(&self.scale);
        f(&self.shift);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(&mut self.scale);
        f(&mut self.shift);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_kernel_passes_input_through() {
        let x = Matrix2D::column(&[0.3, -1.0, 2.5, 7.0]).unwrap();
        let p = Conv1DParams::identity(1).unwrap();
        assert_eq!(conv1d(&x, &p).unwrap(), x);
    }

    #[test]
    fn zero_input_yields_bias() {
        let x = Matrix2D::zeros(5, 2);
        let p = Conv1DParams::new(2, 1, 3, vec![0.7; 6], vec![1.25]).unwrap();
        let y = conv1d(&x, &p).unwrap();
        assert!(y.values().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn box_kernel_matches_padded_sum() {
        // padded sums: [0+1+2, 1+2+3, 2+3+0]
        let x = Matrix2D::column(&[1.0, 2.0, 3.0]).unwrap();
        let p = Conv1DParams::new(1, 1, 3, vec![1.0, 1.0, 1.0], vec![0.0]).unwrap();
        assert_eq!(conv1d(&x, &p).unwrap().values(), &[3.0, 6.0, 5.0]);
    }

    #[test]
    fn rejects_channel_mismatch_and_even_kernel() {
        let x = Matrix2D::zeros(4, 3);
        let p = Conv1DParams::zeros(2, 1, 3).unwrap();
        assert!(matches!(conv1d(&x, &p), Err(Error::Config(_))));
        assert!(matches!(Conv1DParams::zeros(1, 1, 2), Err(Error::Config(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix2D::new(6, 2, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let p = Conv1DParams::random(2, 3, 3, &mut rng).unwrap();
        let g = Matrix2D::new(6, 3, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let objective = |x: &Matrix2D, p: &Conv1DParams| -> f64 {
            let y = conv1d(x, p).unwrap();
            y.values().iter().zip(g.values()).map(|(a, b)| a * b).sum()
        };
        let (gx, gp) = conv1d_backward(&x, &p, &g).unwrap();
        let h = 1e-6;
        for i in 0..x.values().len() {
            let mut xp = x.clone();
            xp.values_mut()[i] += h;
            let mut xm = x.clone();
            xm.values_mut()[i] -= h;
            let fd = (objective(&xp, &p) - objective(&xm, &p)) / (2.0 * h);
            assert!((fd - gx.values()[i]).abs() < 1e-7);
        }
        let flat = p.to_flat();
        let gflat = gp.to_flat();
        for i in 0..flat.len() {
            let mut pp = p.clone();
            let mut f = flat.clone();
            f[i] += h;
            pp.load_flat(&f);
            let up = objective(&x, &pp);
            f[i] -= 2.0 * h;
            pp.load_flat(&f);
            let down = objective(&x, &pp);
            assert!(((up - down) / (2.0 * h) - gflat[i]).abs() < 1e-7);
        }
    }
}
