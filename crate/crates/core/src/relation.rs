//! Proposal relation block.
//!
//! Base features are reduced in width, sampled at `N` points inside every
//! dense proposal, contracted to one vector per proposal and then passed
//! through three branches: position attention across proposals, channel
//! attention across feature channels, and a plain convolution. Each branch
//! predicts a classification and a regression confidence; the block output is
//! their mean.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ProposalGrid;
use crate::kernels::{
    conv1d, conv1d_backward, exact_sum, relu, relu_backward, sigmoid, softmax_into,
    softmax_rows_backward, Conv1DParams, Dense, Matrix2D, Parameterized,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrbConfig {
    /// Width of the incoming base features.
    pub base_width: usize,
    /// Channels kept before proposal sampling.
    pub proposal_channels: usize,
    /// Sample points per proposal.
    pub samples: usize,
    /// Width after the sampling contraction.
    pub reduced_width: usize,
    /// Width of the query/key projections in position attention.
    pub attention_width: usize,
    /// Fraction of the proposal length added on each side before sampling.
    #[serde(default)]
    pub boundary_extension: f64,
    /// When false both attention branches pass features through unchanged.
    #[serde(default = "default_true")]
    pub attention: bool,
}

fn default_true() -> bool {
    true
}

impl PrbConfig {
    pub fn full_scale() -> Self {
        Self {
            base_width: 256,
            proposal_channels: 128,
            samples: 32,
            reduced_width: 512,
            attention_width: 512,
            boundary_extension: 0.0,
            attention: true,
        }
    }
}

/// Query, key and value projections of position attention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
}

impl AttentionParams {
    pub fn identity(width: usize) -> Result<Self> {
        Ok(Self {
            query: Dense::identity(width)?,
            key: Dense::identity(width)?,
            value: Dense::identity(width)?,
        })
    }
}

impl Parameterized for AttentionParams {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.query.visit(f);
        self.key.visit(f);
        self.value.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.query.visit_mut(f);
        self.key.visit_mut(f);
        self.value.visit_mut(f);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrbParams {
    pub config: PrbConfig,
    /// `base_width → proposal_channels`, kernel 1, followed by ReLU.
    pub channel_reduce: Conv1DParams,
    /// Contraction of the `proposal_channels × samples` block of each proposal.
    /// Input index is `c · samples + n`.
    pub sample_reduce: Dense,
    pub position: AttentionParams,
    /// Plain branch transform, followed by ReLU.
    pub plain: Dense,
    /// Heads for the position, channel and plain branches; column 0 is
    /// classification, column 1 regression.
    pub heads: [Dense; 3],
}

impl PrbParams {
    pub fn new(config: PrbConfig, seed: u64) -> Result<Self> {
        if config.samples < 2 {
            return Err(Error::config("proposal sampling needs at least 2 points"));
        }
        if config.base_width == 0
            || config.proposal_channels == 0
            || config.reduced_width == 0
            || config.attention_width == 0
        {
            return Err(Error::config("relation block widths must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = config.reduced_width;
        Ok(Self {
            channel_reduce: Conv1DParams::random(config.base_width, config.proposal_channels, 1, &mut rng)?,
            sample_reduce: Dense::random(config.proposal_channels * config.samples, r, &mut rng)?,
            position: AttentionParams {
                query: Dense::random(r, config.attention_width, &mut rng)?,
                key: Dense::random(r, config.attention_width, &mut rng)?,
                value: Dense::random(r, r, &mut rng)?,
            },
            plain: Dense::random(r, r, &mut rng)?,
            heads: [
                Dense::random(r, 2, &mut rng)?,
                Dense::random(r, 2, &mut rng)?,
                Dense::random(r, 2, &mut rng)?,
            ],
            config,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero_all();
        z
    }
}

impl Parameterized for PrbParams {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.channel_reduce.visit(f);
        self.sample_reduce.visit(f);
        self.position.visit(f);
        self.plain.visit(f);
        for h in &self.heads {
            h.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.channel_reduce.visit_mut(f);
        self.sample_reduce.visit_mut(f);
        self.position.visit_mut(f);
        self.plain.visit_mut(f);
        for h in &mut self.heads {
            h.visit_mut(f);
        }
    }
}

/// Per-proposal sampled features, dense over the `D × T` grid.
///
/// Layout is `[j][i][c][n]`; invalid cells are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalFeatureMap {
    pub grid: ProposalGrid,
    pub channels: usize,
    pub samples: usize,
    pub values: Vec<f64>,
}

impl ProposalFeatureMap {
    /// The `channels × samples` block of one cell.
    pub fn cell(&self, duration: usize, start: usize) -> &[f64] {
        let block = self.channels * self.samples;
        let offset = (duration * self.grid.length + start) * block;
        &self.values[offset..offset + block]
    }

    pub fn sample(&self, duration: usize, start: usize, channel: usize, n: usize) -> f64 {
        self.cell(duration, start)[channel * self.samples + n]
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.grid.mask()
    }
}

/// Interpolation taps of the `samples` points inside each valid proposal.
#[derive(Debug, Clone)]
struct SamplingPlan {
    /// Per valid cell (grid order), per sample: `(lo, hi, frac)`.
    taps: Vec<Vec<(usize, usize, f64)>>,
}

fn sampling_plan(grid: &ProposalGrid, samples: usize, extension: f64) -> SamplingPlan {
    let last = (grid.length - 1) as f64;
    let taps = grid
        .cells()
        .map(|(j, i)| {
            let span = j as f64;
            let lo_pos = i as f64 - extension * span;
            let hi_pos = (i + j) as f64 + extension * span;
            (0..samples)
                .map(|n| {
                    let pos = if j == 0 {
                        i as f64
                    } else {
                        (lo_pos + (hi_pos - lo_pos) * n as f64 / (samples - 1) as f64).clamp(0.0, last)
                    };
                    let lo = pos.floor() as usize;
                    let hi = (lo + 1).min(grid.length - 1);
                    (lo, hi, pos - lo as f64)
                })
                .collect()
        })
        .collect();
    SamplingPlan { taps }
}

#[inline]
fn interpolate(base: &Matrix2D, (lo, hi, frac): (usize, usize, f64), c: usize) -> f64 {
    let a = base.get(lo, c);
    if frac == 0.0 {
        a
    } else {
        a + frac * (base.get(hi, c) - a)
    }
}

/// Samples `samples` evenly spaced points (endpoints included) over every
/// valid proposal `[i, i + j]` by linear interpolation of `base` (`T × C`).
pub fn sample_proposal_features(
    base: &Matrix2D,
    max_duration: usize,
    samples: usize,
) -> Result<ProposalFeatureMap> {
    sample_with_extension(base, max_duration, samples, 0.0)
}

fn sample_with_extension(
    base: &Matrix2D,
    max_duration: usize,
    samples: usize,
    extension: f64,
) -> Result<ProposalFeatureMap> {
    if samples < 2 {
        return Err(Error::config("proposal sampling needs at least 2 points"));
    }
    let grid = ProposalGrid::new(max_duration, base.rows())?;
    if max_duration > base.rows() {
        return Err(Error::config(format!(
            "maximum duration {max_duration} exceeds sequence length {}",
            base.rows()
        )));
    }
    let channels = base.cols();
    let block = channels * samples;
    let plan = sampling_plan(&grid, samples, extension);
    let mut values = vec![0.0; grid.max_duration * grid.length * block];
    for ((j, i), taps) in grid.cells().zip(&plan.taps) {
        let offset = (j * grid.length + i) * block;
        for c in 0..channels {
            for (n, &tap) in taps.iter().enumerate() {
                values[offset + c * samples + n] = interpolate(base, tap, c);
            }
        }
    }
    Ok(ProposalFeatureMap {
        grid,
        channels,
        samples,
        values,
    })
}

/// One feature vector per valid proposal, rows in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFeatures {
    pub grid: ProposalGrid,
    /// `L × C` with `L` = number of valid cells.
    pub values: Matrix2D,
}

impl CellFeatures {
    /// Dense `[j][i][c]` layout with zeros on invalid cells.
    pub fn to_dense(&self) -> Vec<f64> {
        let c = self.values.cols();
        let mut out = vec![0.0; self.grid.max_duration * self.grid.length * c];
        for (row, (j, i)) in self.grid.cells().enumerate() {
            let offset = (j * self.grid.length + i) * c;
            out[offset..offset + c].copy_from_slice(self.values.row(row));
        }
        out
    }
}

/// Contracts each proposal's `C_p × N` block to `reduced_width` channels, then ReLU.
pub fn reduce_features(fp: &ProposalFeatureMap, params: &PrbParams) -> Result<CellFeatures> {
    Ok(reduce_traced(fp, &params.sample_reduce)?.0)
}

/// Returns reduced features plus the pre-activation and the flat sampled inputs.
fn reduce_traced(fp: &ProposalFeatureMap, layer: &Dense) -> Result<(CellFeatures, Matrix2D, Matrix2D)> {
    let block = fp.channels * fp.samples;
    if layer.in_features() != block {
        return Err(Error::config(format!(
            "sampling contraction expects {} inputs, proposal map provides {block}",
            layer.in_features()
        )));
    }
    let cells: Vec<(usize, usize)> = fp.grid.cells().collect();
    let mut inputs = Matrix2D::zeros(cells.len(), block);
    for (row, &(j, i)) in cells.iter().enumerate() {
        inputs.row_mut(row).copy_from_slice(fp.cell(j, i));
    }
    let pre = layer.forward(&inputs)?;
    let values = relu(&pre);
    Ok((CellFeatures { grid: fp.grid, values }, pre, inputs))
}

fn check_attention_input(x: &Matrix2D) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::input("attention needs at least one position"));
    }
    if !x.is_finite() {
        return Err(Error::numeric("attention input contains non-finite values"));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PositionTrace {
    input: Matrix2D,
    query: Matrix2D,
    key: Matrix2D,
    value: Matrix2D,
    /// Row `j` holds the weights position `j` puts on every position `i`.
    pub attention: Matrix2D,
}

/// Non-local attention across positions: `P[j][i] = softmax_i(A_i · B_j)`,
/// output `x_j + Σ_i P[j][i] · V_i`.
///
/// Sums over positions are correctly rounded, so permuting the rows of `x`
/// permutes the output rows bit for bit.
pub fn position_attention(x: &Matrix2D, params: &AttentionParams) -> Result<Matrix2D> {
    position_attention_traced(x, params).map(|(y, _)| y)
}

pub fn position_attention_traced(x: &Matrix2D, params: &AttentionParams) -> Result<(Matrix2D, PositionTrace)> {
    check_attention_input(x)?;
    let query = params.query.forward(x)?;
    let key = params.key.forward(x)?;
    let value = params.value.forward(x)?;
    if query.cols() != key.cols() {
        return Err(Error::config("query and key widths differ"));
    }
    if value.cols() != x.cols() {
        return Err(Error::config("value transform must preserve width for the residual"));
    }
    let len = x.rows();
    let mut attention = Matrix2D::zeros(len, len);
    let mut energies = vec![0.0; len];
    for j in 0..len {
        let b = key.row(j);
        for (i, e) in energies.iter_mut().enumerate() {
            *e = query.row(i).iter().zip(b).map(|(p, q)| p * q).sum();
        }
        softmax_into(&energies, attention.row_mut(j));
    }
    let mut out = x.clone();
    let mut terms = vec![0.0; len];
    for j in 0..len {
        let weights = attention.row(j);
        for c in 0..x.cols() {
            for (i, t) in terms.iter_mut().enumerate() {
                *t = weights[i] * value.get(i, c);
            }
            out.add_at(j, c, exact_sum(terms.iter().copied()));
        }
    }
    Ok((
        out,
        PositionTrace {
            input: x.clone(),
            query,
            key,
            value,
            attention,
        },
    ))
}

fn position_backward(
    params: &AttentionParams,
    trace: &PositionTrace,
    grad_out: &Matrix2D,
    grad: &mut AttentionParams,
) -> Result<Matrix2D> {
    let p = &trace.attention;
    let d_value = p.transpose().matmul(grad_out)?;
    let d_attention = grad_out.matmul(&trace.value.transpose())?;
    let d_energy = softmax_rows_backward(p, &d_attention);
    let d_query = d_energy.transpose().matmul(&trace.key)?;
    let d_key = d_energy.matmul(&trace.query)?;
    let mut dx = grad_out.clone();
    dx.add_assign(&params.query.backward(&trace.input, &d_query, &mut grad.query));
    dx.add_assign(&params.key.backward(&trace.input, &d_key, &mut grad.key));
    dx.add_assign(&params.value.backward(&trace.input, &d_value, &mut grad.value));
    Ok(dx)
}

#[derive(Debug, Clone)]
pub struct ChannelTrace {
    input: Matrix2D,
    /// `C × C`, row `c` holds weights over source channels.
    pub attention: Matrix2D,
}

/// Attention across channels from the Gram matrix `xᵀx`, no learned
/// projections: `y[l][c] = x[l][c] + Σ_c' softmax_c'(G[c][c']) · x[l][c']`.
pub fn channel_attention(x: &Matrix2D) -> Result<Matrix2D> {
    channel_attention_traced(x).map(|(y, _)| y)
}

pub fn channel_attention_traced(x: &Matrix2D) -> Result<(Matrix2D, ChannelTrace)> {
    check_attention_input(x)?;
    let c = x.cols();
    let mut gram = Matrix2D::zeros(c, c);
    for a in 0..c {
        for b in a..c {
            let g = exact_sum((0..x.rows()).map(|l| x.get(l, a) * x.get(l, b)));
            gram.set(a, b, g);
            gram.set(b, a, g);
        }
    }
    let mut attention = Matrix2D::zeros(c, c);
    for a in 0..c {
        softmax_into(gram.row(a), attention.row_mut(a));
    }
    let mut out = x.clone();
    out.add_assign(&x.matmul(&attention.transpose())?);
    Ok((
        out,
        ChannelTrace {
            input: x.clone(),
            attention,
        },
    ))
}

fn channel_backward(trace: &ChannelTrace, grad_out: &Matrix2D) -> Result<Matrix2D> {
    let x = &trace.input;
    let s = &trace.attention;
    let mut dx = grad_out.clone();
    dx.add_assign(&grad_out.matmul(s)?);
    let d_attention = grad_out.transpose().matmul(x)?;
    let d_gram = softmax_rows_backward(s, &d_attention);
    let mut sym = d_gram.clone();
    sym.add_assign(&d_gram.transpose());
    dx.add_assign(&x.matmul(&sym)?);
    Ok(dx)
}

/// Classification and regression confidences for every proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMaps {
    pub grid: ProposalGrid,
    /// `D × T` classification confidence.
    pub cc: Matrix2D,
    /// `D × T` regression confidence.
    pub cr: Matrix2D,
}

impl ConfidenceMaps {
    pub fn valid_mask(&self) -> Vec<bool> {
        self.grid.mask()
    }
}

/// Serialised confidence maps of one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceMapDump {
    pub video_id: String,
    pub cc: Vec<Vec<f64>>,
    pub cr: Vec<Vec<f64>>,
}

impl ConfidenceMapDump {
    pub fn new(video_id: impl Into<String>, maps: &ConfidenceMaps) -> Self {
        let rows = |m: &Matrix2D| (0..m.rows()).map(|r| m.row(r).to_vec()).collect();
        Self {
            video_id: video_id.into(),
            cc: rows(&maps.cc),
            cr: rows(&maps.cr),
        }
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct PrbTrace {
    base: Matrix2D,
    reduce_pre: Matrix2D,
    reduce_in: Matrix2D,
    sample_inputs: Matrix2D,
    sample_pre: Matrix2D,
    reduced: Matrix2D,
    position: Option<PositionTrace>,
    channel: Option<ChannelTrace>,
    plain_pre: Matrix2D,
    branch_features: [Matrix2D; 3],
    /// Sigmoid outputs per branch, `L × 2`.
    branch_probs: [Matrix2D; 3],
    plan: SamplingPlan,
}

impl PrbTrace {

    pub fn grid(&self, max_duration: usize) -> ProposalGrid {
        ProposalGrid {
            max_duration,
            length: self.base.rows(),
        }
    }
}

fn maps_from_cells(grid: ProposalGrid, cc: &[f64], cr: &[f64]) -> ConfidenceMaps {
    let mut cc_map = grid.zeros();
    let mut cr_map = grid.zeros();
    for (row, (j, i)) in grid.cells().enumerate() {
        cc_map.set(j, i, cc[row]);
        cr_map.set(j, i, cr[row]);
    }
    ConfidenceMaps {
        grid,
        cc: cc_map,
        cr: cr_map,
    }
}

pub fn prb_forward(params: &PrbParams, base: &Matrix2D, max_duration: usize) -> Result<ConfidenceMaps> {
    prb_forward_traced(params, base, max_duration).map(|(m, _)| m)
}

pub fn prb_forward_traced(
    params: &PrbParams,
    base: &Matrix2D,
    max_duration: usize,
) -> Result<(ConfidenceMaps, PrbTrace)> {
    let cfg = &params.config;
    if base.cols() != cfg.base_width {
        return Err(Error::config(format!(
            "relation block expects {} base channels, got {}",
            cfg.base_width,
            base.cols()
        )));
    }
    let reduce_pre = conv1d(base, &params.channel_reduce)?;
    let reduce_in = relu(&reduce_pre);
    let fp = sample_with_extension(&reduce_in, max_duration, cfg.samples, cfg.boundary_extension)?;
    let plan = sampling_plan(&fp.grid, cfg.samples, cfg.boundary_extension);
    let (cells, sample_pre, sample_inputs) = reduce_traced(&fp, &params.sample_reduce)?;
    let reduced = cells.values;

    let (pos_feat, position) = if cfg.attention {
        let (y, t) = position_attention_traced(&reduced, &params.position)?;
        (y, Some(t))
    } else {
        (reduced.clone(), None)
    };
    let (ch_feat, channel) = if cfg.attention {
        let (y, t) = channel_attention_traced(&reduced)?;
        (y, Some(t))
    } else {
        (reduced.clone(), None)
    };
    let plain_pre = params.plain.forward(&reduced)?;
    let plain_feat = relu(&plain_pre);

    let branch_features = [pos_feat, ch_feat, plain_feat];
    let mut branch_probs: Vec<Matrix2D> = Vec::with_capacity(3);
    for (head, feat) in params.heads.iter().zip(&branch_features) {
        branch_probs.push(head.forward(feat)?.map(sigmoid));
    }
    let branch_probs: [Matrix2D; 3] = branch_probs.try_into().expect("three branches");

    let l = reduced.rows();
    let mean_col = |col: usize| -> Vec<f64> {
        (0..l)
            .map(|r| branch_probs.iter().map(|p| p.get(r, col)).sum::<f64>() / 3.0)
            .collect()
    };
    let maps = maps_from_cells(fp.grid, &mean_col(0), &mean_col(1));
    Ok((
        maps,
        PrbTrace {
            base: base.clone(),
            reduce_pre,
            reduce_in,
            sample_inputs,
            sample_pre,
            reduced,
            position,
            channel,
            plain_pre,
            branch_features,
            branch_probs,
            plan,
        },
    ))
}

/// Backpropagates gradients on the fused per-cell confidences (grid order)
/// to the parameters (accumulated into `grad`) and returns the base-feature gradient.
pub fn prb_backward(
    params: &PrbParams,
    trace: &PrbTrace,
    d_cc: &[f64],
    d_cr: &[f64],
    grad: &mut PrbParams,
) -> Result<Matrix2D> {
    let l = trace.reduced.rows();
    if d_cc.len() != l || d_cr.len() != l {
        return Err(Error::config("confidence gradient length does not match valid cells"));
    }
    let mut d_reduced = Matrix2D::zeros(l, trace.reduced.cols());
    let mut d_branch: Vec<Matrix2D> = Vec::with_capacity(3);
    for ((head, g_head), (feat, probs)) in params
        .heads
        .iter()
        .zip(grad.heads.iter_mut())
        .zip(trace.branch_features.iter().zip(&trace.branch_probs))
    {
        let mut d_logits = Matrix2D::zeros(l, 2);
        for r in 0..l {
            for (col, d) in [(0, d_cc[r]), (1, d_cr[r])] {
                let p = probs.get(r, col);
                d_logits.set(r, col, d / 3.0 * p * (1.0 - p));
            }
        }
        d_branch.push(head.backward(feat, &d_logits, g_head));
    }

    match &trace.position {
        Some(t) => d_reduced.add_assign(&position_backward(&params.position, t, &d_branch[0], &mut grad.position)?),
        None => d_reduced.add_assign(&d_branch[0]),
    }
    match &trace.channel {
        Some(t) => d_reduced.add_assign(&channel_backward(t, &d_branch[1])?),
        None => d_reduced.add_assign(&d_branch[1]),
    }
    let d_plain = relu_backward(&trace.plain_pre, &d_branch[2]);
    d_reduced.add_assign(&params.plain.backward(&trace.reduced, &d_plain, &mut grad.plain));

    let d_sample_pre = relu_backward(&trace.sample_pre, &d_reduced);
    let d_samples = params
        .sample_reduce
        .backward(&trace.sample_inputs, &d_sample_pre, &mut grad.sample_reduce);

    // adjoint of the interpolation taps
    let samples = params.config.samples;
    let mut d_reduce_in = Matrix2D::zeros(trace.reduce_in.rows(), trace.reduce_in.cols());
    for (row, taps) in trace.plan.taps.iter().enumerate() {
        let g = d_samples.row(row);
        for c in 0..trace.reduce_in.cols() {
            for (n, &(lo, hi, frac)) in taps.iter().enumerate() {
                let v = g[c * samples + n];
                d_reduce_in.add_at(lo, c, (1.0 - frac) * v);
                if frac != 0.0 {
                    d_reduce_in.add_at(hi, c, frac * v);
                }
            }
        }
    }
    let d_reduce_pre = relu_backward(&trace.reduce_pre, &d_reduce_in);
    let (d_base, g_conv) = conv1d_backward(&trace.base, &params.channel_reduce, &d_reduce_pre)?;
    crate::boundary::add_conv(&mut grad.channel_reduce, &g_conv);
    Ok(d_base)
}

/// Per-cell confidences in grid order from a traced forward pass.
pub fn trace_cell_confidences(trace: &PrbTrace) -> (Vec<f64>, Vec<f64>) {
    let l = trace.reduced.rows();
    let mean = |col: usize| -> Vec<f64> {
        (0..l)
            .map(|r| trace.branch_probs.iter().map(|p| p.get(r, col)).sum::<f64>() / 3.0)
            .collect()
    };
    (mean(0), mean(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix2D::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn toy_config() -> PrbConfig {
        PrbConfig {
            base_width: 4,
            proposal_channels: 3,
            samples: 4,
            reduced_width: 5,
            attention_width: 3,
            boundary_extension: 0.0,
            attention: true,
        }
    }

    #[test]
    fn constant_base_samples_constant() {
        let base = Matrix2D::filled(6, 2, 0.7);
        let fp = sample_proposal_features(&base, 6, 5).unwrap();
        let mask = fp.valid_mask();
        for j in 0..6 {
            for i in 0..6 {
                let expect = if mask[j * 6 + i] { 0.7 } else { 0.0 };
                assert!(fp.cell(j, i).iter().all(|&v| v == expect));
            }
        }
    }

    #[test]
    fn zero_length_proposal_repeats_its_snippet() {
        let base = random_matrix(5, 2, 1);
        let fp = sample_proposal_features(&base, 3, 4).unwrap();
        for i in 0..5 {
            for c in 0..2 {
                for n in 0..4 {
                    assert_eq!(fp.sample(0, i, c, n), base.get(i, c));
                }
            }
        }
    }

    #[test]
    fn ramp_samples_follow_positions() {
        // channel c is the ramp (c + 1) * t
        let base = Matrix2D::new(8, 2, (0..8).flat_map(|t| [t as f64, 2.0 * t as f64]).collect()).unwrap();
        let fp = sample_proposal_features(&base, 8, 3).unwrap();
        // proposal [1, 6]: points 1, 3.5, 6
        for (n, pos) in [1.0, 3.5, 6.0].into_iter().enumerate() {
            assert_eq!(fp.sample(5, 1, 0, n), pos);
            assert_eq!(fp.sample(5, 1, 1, n), 2.0 * pos);
        }
    }

    #[test]
    fn reduce_zero_weights_gives_bias() {
        let mut params = PrbParams::new(toy_config(), 0).unwrap();
        params.sample_reduce = Dense::new(12, 5, vec![0.0; 60], vec![0.3; 5]).unwrap();
        let fp = sample_proposal_features(&random_matrix(6, 3, 4), 4, 4).unwrap();
        let cells = reduce_features(&fp, &params).unwrap();
        assert!(cells.values.values().iter().all(|&v| v == 0.3));
        let dense = cells.to_dense();
        let mask = fp.valid_mask();
        for (k, valid) in mask.iter().enumerate() {
            assert!(dense[k * 5..(k + 1) * 5].iter().all(|&v| v == if *valid { 0.3 } else { 0.0 }));
        }
    }

    #[test]
    fn reduce_scalar_contraction() {
        // one channel, two samples, one output: relu(w0 * s0 + w1 * s1 + b)
        let cfg = PrbConfig {
            base_width: 1,
            proposal_channels: 1,
            samples: 2,
            reduced_width: 1,
            attention_width: 1,
            boundary_extension: 0.0,
            attention: true,
        };
        let mut params = PrbParams::new(cfg, 0).unwrap();
        params.sample_reduce = Dense::new(2, 1, vec![0.5, -2.0], vec![1.0]).unwrap();
        let base = Matrix2D::column(&[3.0, -1.0]).unwrap();
        let fp = sample_proposal_features(&base, 2, 2).unwrap();
        let cells = reduce_features(&fp, &params).unwrap();
        // grid order: (0,0), (0,1), (1,0)
        assert_eq!(cells.values.values(), &[0.0, 0.5 * -1.0 - 2.0 * -1.0 + 1.0, 0.5 * 3.0 - 2.0 * -1.0 + 1.0]);
    }

    #[test]
    fn position_attention_singleton_and_symmetry() {
        let params = AttentionParams {
            query: Dense::random(2, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap(),
            key: Dense::random(2, 2, &mut ChaCha8Rng::seed_from_u64(2)).unwrap(),
            value: Dense::random(2, 2, &mut ChaCha8Rng::seed_from_u64(3)).unwrap(),
        };
        let x = Matrix2D::from_rows(&[[0.4, -0.2]]).unwrap();
        let (y, t) = position_attention_traced(&x, &params).unwrap();
        assert_eq!(t.attention.values(), &[1.0]);
        let v = params.value.forward(&x).unwrap();
        assert_eq!(y.values(), &[0.4 + v.get(0, 0), -0.2 + v.get(0, 1)]);

        let twin = Matrix2D::from_rows(&[[0.4, -0.2], [0.4, -0.2]]).unwrap();
        let (_, t) = position_attention_traced(&twin, &params).unwrap();
        assert!(t.attention.values().iter().all(|&w| w == 0.5));
    }

    #[test]
    fn position_attention_closed_form() {
        // keys fixed at 1 so energies are the query values themselves
        let params = AttentionParams {
            query: Dense::identity(1).unwrap(),
            key: Dense::new(1, 1, vec![0.0], vec![1.0]).unwrap(),
            value: Dense::identity(1).unwrap(),
        };
        let ln3 = 3f64.ln();
        let x = Matrix2D::column(&[0.0, ln3]).unwrap();
        let (y, t) = position_attention_traced(&x, &params).unwrap();
        for j in 0..2 {
            assert!((t.attention.get(j, 0) - 0.25).abs() < 1e-15);
            assert!((t.attention.get(j, 1) - 0.75).abs() < 1e-15);
        }
        assert!((y.get(0, 0) - 0.75 * ln3).abs() < 1e-15);
        assert!((y.get(1, 0) - 1.75 * ln3).abs() < 1e-15);
    }

    #[test]
    fn channel_attention_examples() {
        let x = Matrix2D::column(&[0.5, -1.5, 2.0]).unwrap();
        assert_eq!(channel_attention(&x).unwrap(), x.scale(2.0));

        let twin = Matrix2D::from_rows(&[[0.3, 0.3], [1.2, 1.2]]).unwrap();
        let y = channel_attention(&twin).unwrap();
        assert_eq!(y, twin.scale(2.0));

        // L = 1, x = [0, ln 3]: G = [[0, 0], [0, ln²3]]
        let ln3 = 3f64.ln();
        let x = Matrix2D::from_rows(&[[0.0, ln3]]).unwrap();
        let y = channel_attention(&x).unwrap();
        let e = (ln3 * ln3).exp();
        assert!((y.get(0, 0) - 0.5 * ln3).abs() < 1e-15);
        assert!((y.get(0, 1) - (ln3 + ln3 * e / (1.0 + e))).abs() < 1e-15);
    }

    #[test]
    fn forward_contracts() {
        let params = PrbParams::new(toy_config(), 7).unwrap();
        let base = random_matrix(8, 4, 3).map(|v| v.abs());
        let maps = prb_forward(&params, &base, 6).unwrap();
        for (k, valid) in maps.valid_mask().iter().enumerate() {
            for m in [&maps.cc, &maps.cr] {
                let v = m.values()[k];
                if *valid {
                    assert!(v > 0.0 && v < 1.0);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
        assert_eq!(prb_forward(&params, &base, 6).unwrap(), maps);
    }

    #[test]
    fn identical_branches_fuse_to_each_branch() {
        let mut cfg = toy_config();
        cfg.attention = false;
        let mut params = PrbParams::new(cfg, 2).unwrap();
        params.plain = Dense::identity(5).unwrap();
        params.heads[1] = params.heads[0].clone();
        params.heads[2] = params.heads[0].clone();
        let base = random_matrix(7, 4, 9);
        let (maps, trace) = prb_forward_traced(&params, &base, 7).unwrap();
        for (row, (j, i)) in maps.grid.cells().enumerate() {
            let p = &trace.branch_probs[0];
            assert!((maps.cc.get(j, i) - p.get(row, 0)).abs() < 1e-15);
            assert!((maps.cr.get(j, i) - p.get(row, 1)).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let params = PrbParams::new(toy_config(), 5).unwrap();
        let base = random_matrix(6, 4, 10).map(|v| v + 0.5);
        let d = 5;
        let grid = ProposalGrid::new(d, 6).unwrap();
        let l = grid.valid_count();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let w_cc: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w_cr: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = |p: &PrbParams, b: &Matrix2D| -> f64 {
            let (_, t) = prb_forward_traced(p, b, d).unwrap();
            let (cc, cr) = trace_cell_confidences(&t);
            cc.iter().zip(&w_cc).map(|(a, b)| a * b).sum::<f64>()
                + cr.iter().zip(&w_cr).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, trace) = prb_forward_traced(&params, &base, d).unwrap();
        let mut grad = params.zeros_like();
        let d_base = prb_backward(&params, &trace, &w_cc, &w_cr, &mut grad).unwrap();
        let h = 1e-6;
        let flat = params.to_flat();
        let gflat = grad.to_flat();
        let mut probe = params.clone();
        for i in 0..flat.len() {
            let mut f = flat.clone();
            f[i] += h;
            probe.load_flat(&f);
            let up = objective(&probe, &base);
            f[i] -= 2.0 * h;
            probe.load_flat(&f);
            let down = objective(&probe, &base);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - gflat[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: fd {fd} vs {}", gflat[i]);
        }
        for k in 0..base.values().len() {
            let mut b = base.clone();
            b.values_mut()[k] += h;
            let up = objective(&params, &b);
            b.values_mut()[k] -= 2.0 * h;
            let down = objective(&params, &b);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - d_base.values()[k]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    fn attention_params(width: usize, seed: u64) -> AttentionParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AttentionParams {
            query: Dense::random(width, 3, &mut rng).unwrap(),
            key: Dense::random(width, 3, &mut rng).unwrap(),
            value: Dense::random(width, width, &mut rng).unwrap(),
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let x = random_matrix(9, 4, 21);
        let (_, pt) = position_attention_traced(&x, &attention_params(4, 3)).unwrap();
        let (_, ct) = channel_attention_traced(&x).unwrap();
        for m in [&pt.attention, &ct.attention] {
            for r in 0..m.rows() {
                assert!((m.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn attention_rejects_non_finite() {
        let x = Matrix2D::from_rows(&[[0.0, f64::NAN]]);
        // Matrix2D refuses non-finite values at construction
        assert!(x.is_err());
        let empty = Matrix2D::zeros(0, 2);
        assert!(position_attention(&empty, &attention_params(2, 0)).is_err());
        assert!(channel_attention(&empty).is_err());
    }

    proptest::proptest! {
        #[test]
        fn position_attention_commutes_with_permutation(
            seed in 0u64..1000,
            len in 1usize..10,
        ) {
            let x = random_matrix(len, 3, seed);
            let params = attention_params(3, seed + 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let mut perm: Vec<usize> = (0..len).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let permuted = Matrix2D::from_rows(&perm.iter().map(|&p| x.row(p).to_vec()).collect::<Vec<_>>()).unwrap();
            let y = position_attention(&x, &params).unwrap();
            let yp = position_attention(&permuted, &params).unwrap();
            for (k, &p) in perm.iter().enumerate() {
                proptest::prop_assert_eq!(yp.row(k), y.row(p));
            }
        }

        #[test]
        fn sampling_matches_brute_force(
            seed in 0u64..1000,
            len in 1usize..9,
            samples in 2usize..6,
            d_frac in 0.0f64..1.0,
        ) {
            let d = 1 + ((len - 1) as f64 * d_frac) as usize;
            let base = random_matrix(len, 2, seed);
            let fp = sample_proposal_features(&base, d, samples).unwrap();
            for (j, i) in fp.grid.cells() {
                for n in 0..samples {
                    let pos = i as f64 + j as f64 * n as f64 / (samples - 1) as f64;
                    let lo = pos.floor() as usize;
                    let hi = (lo + 1).min(len - 1);
                    let w = pos - lo as f64;
                    for c in 0..2 {
                        let expect = if w == 0.0 {
                            base.get(lo, c)
                        } else {
                            base.get(lo, c) + w * (base.get(hi, c) - base.get(lo, c))
                        };
                        proptest::prop_assert_eq!(fp.sample(j, i, c, n), expect);
                    }
                }
            }
        }
    }
}
