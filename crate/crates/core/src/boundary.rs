//! Complementary boundary generator.
//!
//! A two-level nested U-network over the base features predicts per-cell
//! start/end probabilities. At inference the same weights also run on the
//! time-reversed sequence; the reversed pass's start head becomes an end
//! detector and vice versa, and both passes are fused by a geometric mean.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ProposalGrid;
use crate::kernels::{
    conv1d, conv1d_backward, downsample_half_indexed, downsample_half_backward, linear_resize,
    linear_resize_backward, relu, relu_backward, sigmoid, ChannelAffine, Conv1DParams, Matrix2D,
    Parameterized,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbgConfig {
    pub input_dim: usize,
    /// Width of both base-module convolutions.
    pub base_width: usize,
    /// Width of every U-network node.
    pub node_width: usize,
    pub kernel_size: usize,
}

impl CbgConfig {
    pub fn full_scale(input_dim: usize) -> Self {
        Self {
            input_dim,
            base_width: 256,
            node_width: 512,
            kernel_size: 3,
        }
    }
}

/// Convolution, per-channel affine, ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub conv: Conv1DParams,
    pub affine: ChannelAffine,
}

#[derive(Debug, Clone)]
pub struct ConvBlockTrace {
    input: Matrix2D,
    conv_out: Matrix2D,
    affine_out: Matrix2D,
}

impl ConvBlock {
    pub fn random(cin: usize, cout: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            conv: Conv1DParams::random(cin, cout, k, rng)?,
            affine: ChannelAffine::identity(cout),
        })
    }

    pub fn forward(&self, x: &Matrix2D) -> Result<Matrix2D> {
        Ok(relu(&self.affine.forward(&conv1d(x, &self.conv)?)))
    }

    pub fn forward_traced(&self, x: &Matrix2D) -> Result<(Matrix2D, ConvBlockTrace)> {
        let conv_out = conv1d(x, &self.conv)?;
        let affine_out = self.affine.forward(&conv_out);
        let y = relu(&affine_out);
        Ok((
            y,
            ConvBlockTrace {
                input: x.clone(),
                conv_out,
                affine_out,
            },
        ))
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient.
    pub fn backward(
        &self,
        trace: &ConvBlockTrace,
        grad_out: &Matrix2D,
        grad: &mut ConvBlock,
    ) -> Result<Matrix2D> {
        let d_affine = relu_backward(&trace.affine_out, grad_out);
        let (d_conv, g_aff) = self.affine.backward(&trace.conv_out, &d_affine);
        let (d_in, g_conv) = conv1d_backward(&trace.input, &self.conv, &d_conv)?;
        accumulate(grad, &g_conv, &g_aff);
        Ok(d_in)
    }
}

fn accumulate(grad: &mut ConvBlock, conv: &Conv1DParams, affine: &ChannelAffine) {
    for (a, b) in grad.conv.weights_mut().iter_mut().zip(conv.weights()) {
        *a += b;
    }
    for (a, b) in grad.conv.bias_mut().iter_mut().zip(conv.bias()) {
        *a += b;
    }
    let mut flat = grad.affine.to_flat();
    for (a, b) in flat.iter_mut().zip(affine.to_flat()) {
        *a += b;
    }
    grad.affine.load_flat(&flat);
}

impl Parameterized for ConvBlock {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.conv.visit(f);
        self.affine.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.conv.visit_mut(f);
        self.affine.visit_mut(f);
    }
}

/// Two stacked convolutions with ReLU; output is shared by both generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseModule {
    pub conv1: Conv1DParams,
    pub conv2: Conv1DParams,
}

#[derive(Debug, Clone)]
pub struct BaseTrace {
    input: Matrix2D,
    pre1: Matrix2D,
    act1: Matrix2D,
    pre2: Matrix2D,
}

impl BaseModule {
    pub fn forward(&self, x: &Matrix2D) -> Result<Matrix2D> {
        Ok(self.forward_traced(x)?.0)
    }

    pub fn forward_traced(&self, x: &Matrix2D) -> Result<(Matrix2D, BaseTrace)> {
        let pre1 = conv1d(x, &self.conv1)?;
        let act1 = relu(&pre1);
        let pre2 = conv1d(&act1, &self.conv2)?;
        let out = relu(&pre2);
        Ok((
            out,
            BaseTrace {
                input: x.clone(),
                pre1,
                act1,
                pre2,
            },
        ))
    }

    pub fn backward(&self, trace: &BaseTrace, grad_out: &Matrix2D, grad: &mut BaseModule) -> Result<()> {
        let d2 = relu_backward(&trace.pre2, grad_out);
        let (d_act1, g2) = conv1d_backward(&trace.act1, &self.conv2, &d2)?;
        let d1 = relu_backward(&trace.pre1, &d_act1);
        let (_, g1) = conv1d_backward(&trace.input, &self.conv1, &d1)?;
        add_conv(&mut grad.conv1, &g1);
        add_conv(&mut grad.conv2, &g2);
        Ok(())
    }
}

pub(crate) fn add_conv(dst: &mut Conv1DParams, src: &Conv1DParams) {
    for (a, b) in dst.weights_mut().iter_mut().zip(src.weights()) {
        *a += b;
    }
    for (a, b) in dst.bias_mut().iter_mut().zip(src.bias()) {
        *a += b;
    }
}

impl Parameterized for BaseModule {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.conv1.visit(f);
        self.conv2.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.conv1.visit_mut(f);
        self.conv2.visit_mut(f);
    }
}

/// Weights of the boundary generator including the shared base module.
///
/// Node `x{d}{k}` sits at depth `d` (0 = full resolution) and column `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbgParams {
    pub config: CbgConfig,
    pub base: BaseModule,
    pub x00: ConvBlock,
    pub x10: ConvBlock,
    pub x20: ConvBlock,
    pub x01: ConvBlock,
    pub x11: ConvBlock,
    pub x02: ConvBlock,
    /// Deep-supervision heads on `x01` and `x02`; channel 0 = start, 1 = end.
    pub head_mid: Conv1DParams,
    pub head_top: Conv1DParams,
}

impl CbgParams {
    pub fn new(config: CbgConfig, seed: u64) -> Result<Self> {
        if config.input_dim == 0 || config.base_width == 0 || config.node_width == 0 {
            return Err(Error::config("boundary generator widths must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, b, w, k) = (
            config.input_dim,
            config.base_width,
            config.node_width,
            config.kernel_size,
        );
        Ok(Self {
            base: BaseModule {
                conv1: Conv1DParams::random(c, b, k, &mut rng)?,
                conv2: Conv1DParams::random(b, b, k, &mut rng)?,
            },
            x00: ConvBlock::random(b, w, k, &mut rng)?,
            x10: ConvBlock::random(w, w, k, &mut rng)?,
            x20: ConvBlock::random(w, w, k, &mut rng)?,
            x01: ConvBlock::random(2 * w, w, k, &mut rng)?,
            x11: ConvBlock::random(2 * w, w, k, &mut rng)?,
            x02: ConvBlock::random(3 * w, w, k, &mut rng)?,
            head_mid: Conv1DParams::random(w, 2, k, &mut rng)?,
            head_top: Conv1DParams::random(w, 2, k, &mut rng)?,
            config,
        })
    }

    /// Same shapes, every parameter zero (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero_all();
        z
    }
}

impl Parameterized for CbgParams {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.base.visit(f);
        for block in [&self.x00, &self.x10, &self.x20, &self.x01, &self.x11, &self.x02] {
            block.visit(f);
        }
        self.head_mid.visit(f);
        self.head_top.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.base.visit_mut(f);
        for block in [
            &mut self.x00,
            &mut self.x10,
            &mut self.x20,
            &mut self.x01,
            &mut self.x11,
            &mut self.x02,
        ] {
            block.visit_mut(f);
        }
        self.head_mid.visit_mut(f);
        self.head_top.visit_mut(f);
    }
}

/// Start/end probability per window cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryHeatmaps {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl BoundaryHeatmaps {
    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }

    fn from_probs(m: &Matrix2D) -> Self {
        Self {
            start: m.col(0),
            end: m.col(1),
        }
    }

    fn mean(maps: &[BoundaryHeatmaps]) -> Self {
        let n = maps.len() as f64;
        let len = maps[0].len();
        let avg = |pick: fn(&BoundaryHeatmaps) -> &Vec<f64>| -> Vec<f64> {
            (0..len)
                .map(|i| maps.iter().map(|m| pick(m)[i]).sum::<f64>() / n)
                .collect()
        };
        Self {
            start: avg(|m| &m.start),
            end: avg(|m| &m.end),
        }
    }
}

/// Output of one forward pass.
#[derive(Debug, Clone)]
pub struct CbgOutput {
    /// One entry per supervision head (`x01`, `x02`).
    pub heads: Vec<BoundaryHeatmaps>,
    /// Elementwise mean of the heads.
    pub heatmaps: BoundaryHeatmaps,
    /// Base-module features, `l_w × base_width`.
    pub base: Matrix2D,
}

/// Activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct CbgTrace {
    pub base_trace: BaseTrace,
    len0: usize,
    len1: usize,
    b00: ConvBlockTrace,
    idx1: Vec<usize>,
    b10: ConvBlockTrace,
    idx2: Vec<usize>,
    b20: ConvBlockTrace,
    b01: ConvBlockTrace,
    b11: ConvBlockTrace,
    b02: ConvBlockTrace,
    x01: Matrix2D,
    x02: Matrix2D,
    /// Sigmoid outputs of each head, `l_w × 2`.
    pub head_probs: Vec<Matrix2D>,
}

fn check_window(params: &CbgParams, window: &Matrix2D) -> Result<()> {
    if window.cols() != params.config.input_dim {
        return Err(Error::config(format!(
            "window has {} channels, generator expects {}",
            window.cols(),
            params.config.input_dim
        )));
    }
    if window.rows() < 3 {
        return Err(Error::config(
            "boundary generator needs windows of at least 3 cells for two pooling levels",
        ));
    }
    Ok(())
}

fn head_forward(head: &Conv1DParams, x: &Matrix2D) -> Result<Matrix2D> {
    Ok(conv1d(x, head)?.map(sigmoid))
}

/// Full forward pass with activations retained.
pub fn cbg_forward_traced(params: &CbgParams, window: &Matrix2D) -> Result<(CbgOutput, CbgTrace)> {
    check_window(params, window)?;
    let (base, base_trace) = params.base.forward_traced(window)?;
    let len0 = base.rows();

    let (x00, b00) = params.x00.forward_traced(&base)?;
    let (d1, idx1) = downsample_half_indexed(&x00)?;
    let len1 = d1.rows();
    let (x10, b10) = params.x10.forward_traced(&d1)?;
    let (d2, idx2) = downsample_half_indexed(&x10)?;
    let (x20, b20) = params.x20.forward_traced(&d2)?;

    let up10 = linear_resize(&x10, len0)?;
    let (x01, b01) = params.x01.forward_traced(&Matrix2D::concat_cols(&[&x00, &up10])?)?;
    let up20 = linear_resize(&x20, len1)?;
    let (x11, b11) = params.x11.forward_traced(&Matrix2D::concat_cols(&[&x10, &up20])?)?;
    let up11 = linear_resize(&x11, len0)?;
    let (x02, b02) = params.x02.forward_traced(&Matrix2D::concat_cols(&[&x00, &x01, &up11])?)?;

    let head_probs = vec![
        head_forward(&params.head_mid, &x01)?,
        head_forward(&params.head_top, &x02)?,
    ];
    let heads: Vec<BoundaryHeatmaps> = head_probs.iter().map(BoundaryHeatmaps::from_probs).collect();
    let heatmaps = BoundaryHeatmaps::mean(&heads);
    Ok((
        CbgOutput {
            heads,
            heatmaps,
            base,
        },
        CbgTrace {
            base_trace,
            len0,
            len1,
            b00,
            idx1,
            b10,
            idx2,
            b20,
            b01,
            b11,
            b02,
            x01,
            x02,
            head_probs,
        },
    ))
}

pub fn cbg_forward(params: &CbgParams, window: &Matrix2D) -> Result<CbgOutput> {
    cbg_forward_traced(params, window).map(|(out, _)| out)
}

/// Backpropagates gradients on the head probabilities (one `l_w × 2` matrix
/// per head) through the U-network. Parameter gradients accumulate into
/// `grad`; the gradient on the base features is returned so the caller can
/// add other consumers' contributions before running the base backward.
pub fn cbg_backward_heads(
    params: &CbgParams,
    trace: &CbgTrace,
    head_grads: &[Matrix2D],
    grad: &mut CbgParams,
) -> Result<Matrix2D> {
    if head_grads.len() != 2 {
        return Err(Error::config("expected one gradient per supervision head"));
    }
    let w = params.config.node_width;

    let head_input_grad = |head: &Conv1DParams,
                           g_head: &mut Conv1DParams,
                           probs: &Matrix2D,
                           input: &Matrix2D,
                           d_probs: &Matrix2D|
     -> Result<Matrix2D> {
        let mut d_logits = d_probs.clone();
        for (d, &p) in d_logits.values_mut().iter_mut().zip(probs.values()) {
            *d *= p * (1.0 - p);
        }
        let (d_in, g) = conv1d_backward(input, head, &d_logits)?;
        add_conv(g_head, &g);
        Ok(d_in)
    };
    let mut d_x01 = head_input_grad(
        &params.head_mid,
        &mut grad.head_mid,
        &trace.head_probs[0],
        &trace.x01,
        &head_grads[0],
    )?;
    let d_x02 = head_input_grad(
        &params.head_top,
        &mut grad.head_top,
        &trace.head_probs[1],
        &trace.x02,
        &head_grads[1],
    )?;

    // x02 <- [x00, x01, up(x11)]
    let d_cat02 = params.x02.backward(&trace.b02, &d_x02, &mut grad.x02)?;
    let parts = d_cat02.split_cols(&[w, w, w]);
    let mut d_x00 = parts[0].clone();
    d_x01.add_assign(&parts[1]);
    let d_x11 = linear_resize_backward(&parts[2], trace.len1);

    // x11 <- [x10, up(x20)]
    let d_cat11 = params.x11.backward(&trace.b11, &d_x11, &mut grad.x11)?;
    let parts = d_cat11.split_cols(&[w, w]);
    let mut d_x10 = parts[0].clone();
    let mut d_x20 = linear_resize_backward(&parts[1], trace.idx2.len() / w);

    // x01 <- [x00, up(x10)]
    let d_cat01 = params.x01.backward(&trace.b01, &d_x01, &mut grad.x01)?;
    let parts = d_cat01.split_cols(&[w, w]);
    d_x00.add_assign(&parts[0]);
    d_x10.add_assign(&linear_resize_backward(&parts[1], trace.len1));

    // encoder chain
    let d_pool2 = params.x20.backward(&trace.b20, &d_x20, &mut grad.x20)?;
    d_x20 = d_pool2;
    d_x10.add_assign(&downsample_half_backward(&trace.idx2, &d_x20, trace.len1));
    let d_pool1 = params.x10.backward(&trace.b10, &d_x10, &mut grad.x10)?;
    d_x00.add_assign(&downsample_half_backward(&trace.idx1, &d_pool1, trace.len0));
    params.x00.backward(&trace.b00, &d_x00, &mut grad.x00)
}

/// Backward through the base module given the total gradient on its output.
pub fn base_backward(params: &CbgParams, trace: &CbgTrace, grad_base: &Matrix2D, grad: &mut CbgParams) -> Result<()> {
    params.base.backward(&trace.base_trace, grad_base, &mut grad.base)
}

/// Geometric-mean fusion of forward and (re-aligned) backward heatmaps.
pub fn fuse_heatmaps(forward: &BoundaryHeatmaps, backward: &BoundaryHeatmaps) -> Result<BoundaryHeatmaps> {
    if forward.len() != backward.len() {
        return Err(Error::input("heatmap lengths differ"));
    }
    let fuse = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x * y).sqrt()).collect();
    Ok(BoundaryHeatmaps {
        start: fuse(&forward.start, &backward.start),
        end: fuse(&forward.end, &backward.end),
    })
}

#[derive(Debug, Clone)]
pub struct BidirectionalOutput {
    pub fused: BoundaryHeatmaps,
    pub forward: BoundaryHeatmaps,
    /// Reversed-pass heatmaps mapped back to forward time and role.
    pub backward: BoundaryHeatmaps,
    /// Base features of the forward pass.
    pub base: Matrix2D,
}

/// Runs the generator on the window and on its time reversal with shared weights.
pub fn bidirectional_infer(params: &CbgParams, window: &Matrix2D) -> Result<BidirectionalOutput> {
    let fwd = cbg_forward(params, window)?;
    let rev = cbg_forward(params, &window.reversed_rows())?;
    let reversed = |v: &[f64]| v.iter().rev().copied().collect::<Vec<f64>>();
    // a start seen backwards in time marks an end
    let backward = BoundaryHeatmaps {
        start: reversed(&rev.heatmaps.end),
        end: reversed(&rev.heatmaps.start),
    };
    let fused = fuse_heatmaps(&fwd.heatmaps, &backward)?;
    Ok(BidirectionalOutput {
        fused,
        forward: fwd.heatmaps,
        backward,
        base: fwd.base,
    })
}

/// Dense `D × T` boundary scores `h^s_i · h^e_{i+j}`, zero where `i + j ≥ T`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMap {
    pub grid: ProposalGrid,
    pub values: Matrix2D,
}

impl BoundaryMap {
    pub fn valid_mask(&self) -> Vec<bool> {
        self.grid.mask()
    }
}

pub fn build_boundary_map(h: &BoundaryHeatmaps, max_duration: usize) -> Result<BoundaryMap> {
    if h.start.len() != h.end.len() {
        return Err(Error::input("start and end heatmaps differ in length"));
    }
    let grid = ProposalGrid::new(max_duration, h.len())?;
    if max_duration > h.len() {
        return Err(Error::config(format!(
            "maximum duration {max_duration} exceeds window length {}",
            h.len()
        )));
    }
    let mut values = grid.zeros();
    for (j, i) in grid.cells() {
        values.set(j, i, h.start[i] * h.end[i + j]);
    }
    Ok(BoundaryMap { grid, values })
}

/// Inspection dump of one window's fused heatmaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapDump {
    pub video_id: String,
    pub window_start: usize,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}
