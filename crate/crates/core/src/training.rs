//! Balanced proposal sampling, losses and a small Adam fitting loop.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boundary::BoundaryHeatmaps;
use crate::data::{label_boundaries, label_confidence_map, BoundaryLabels, LabelConfidenceMap, ObservationWindow};
use crate::error::{Error, Result};
use crate::kernels::{Matrix2D, Parameterized};
use crate::model::ProposalModel;
use crate::relation::ConfidenceMaps;

/// Weight of the relation-block loss in the total objective.
pub const BETA: f64 = 10.0;
/// Weight of the squared-parameter penalty.
pub const GAMMA: f64 = 1e-4;
const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub lambda: f64,
    /// Normalised-duration intervals `[lo, hi)`; the last one is closed.
    pub scale_regions: Vec<(f64, f64)>,
    pub pos_threshold: f64,
    pub neg_threshold: f64,
    pub target_pos_neg_ratio: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            lambda: 0.15,
            scale_regions: vec![(0.0, 0.3), (0.3, 0.7), (0.7, 1.0)],
            pos_threshold: 0.7,
            neg_threshold: 0.3,
            target_pos_neg_ratio: 1.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::config(format!("lambda must lie in (0, 1], got {}", self.lambda)));
        }
        if self.neg_threshold > self.pos_threshold {
            return Err(Error::config("negative threshold exceeds positive threshold"));
        }
        if !(self.target_pos_neg_ratio > 0.0 && self.target_pos_neg_ratio.is_finite()) {
            return Err(Error::config("positive:negative ratio must be positive"));
        }
        let regions = &self.scale_regions;
        let partitions = !regions.is_empty()
            && regions[0].0 == 0.0
            && regions[regions.len() - 1].1 == 1.0
            && regions.iter().all(|(lo, hi)| lo < hi)
            && regions.windows(2).all(|w| w[0].1 == w[1].0);
        if !partitions {
            return Err(Error::config("scale regions must partition [0, 1] in order"));
        }
        Ok(())
    }

    /// Region holding normalised duration `duration / length`.
    pub fn region_of(&self, duration: usize, length: usize) -> usize {
        let x = duration as f64 / length as f64;
        let last = self.scale_regions.len() - 1;
        self.scale_regions
            .iter()
            .position(|&(lo, hi)| lo <= x && x < hi)
            .unwrap_or(last)
    }

    fn class_targets(&self, count: usize) -> (usize, usize) {
        let r = self.target_pos_neg_ratio;
        let pos = (count as f64 * r / (1.0 + r)).round() as usize;
        (pos.min(count), count - pos.min(count))
    }
}

/// Proposal cells `(j, i)` chosen for one window.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SampledBatch {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
    /// Requested cells that could not be drawn for lack of candidates.
    pub shortfall: usize,
}

impl SampledBatch {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Boosts small region ratios: `λ·exp(r/λ − 1)` on `(0, λ]`, identity above.
pub fn scale_balanced_ratio(r: f64, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::input(format!("ratio must lie in [0, 1], got {r}")));
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::input(format!("lambda must lie in (0, 1], got {lambda}")));
    }
    Ok(if r == 0.0 {
        0.0
    } else if r <= lambda {
        lambda * (r / lambda - 1.0).exp()
    } else {
        r
    })
}

fn candidates(labels: &LabelConfidenceMap, cfg: &SamplerConfig) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (j, i) in labels.grid.cells() {
        let g = labels.get(j, i);
        if g > cfg.pos_threshold {
            pos.push((j, i));
        } else if g < cfg.neg_threshold {
            neg.push((j, i));
        }
    }
    (pos, neg)
}

fn check_request(pos: &[(usize, usize)], neg: &[(usize, usize)], count: usize) -> Result<()> {
    if count == 0 {
        return Err(Error::input("sample count must be positive"));
    }
    if pos.is_empty() && neg.is_empty() {
        return Err(Error::input("label map has neither positive nor negative candidates"));
    }
    Ok(())
}

/// Uniform draw without replacement of up to half the count from each class.
pub fn iou_balanced_sample(labels: &LabelConfidenceMap, cfg: &SamplerConfig, count: usize) -> Result<SampledBatch> {
    cfg.validate()?;
    let (pos, neg) = candidates(labels, cfg);
    check_request(&pos, &neg, count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (want_pos, want_neg) = cfg.class_targets(count);
    let mut draw = |pool: &[(usize, usize)], want: usize| -> Vec<(usize, usize)> {
        let k = want.min(pool.len());
        index::sample(&mut rng, pool.len(), k).into_iter().map(|p| pool[p]).collect()
    };
    let positives = draw(&pos, want_pos);
    let negatives = draw(&neg, want_neg);
    let shortfall = count - positives.len() - negatives.len();
    Ok(SampledBatch {
        positives,
        negatives,
        shortfall,
    })
}

/// Sampling probability of each scale region for a candidate pool.
///
/// Empirical region ratios are mapped through [`scale_balanced_ratio`] and
/// renormalised; empty regions get zero.
pub fn region_probabilities(cells: &[(usize, usize)], length: usize, cfg: &SamplerConfig) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; cfg.scale_regions.len()];
    for &(j, _) in cells {
        counts[cfg.region_of(j, length)] += 1;
    }
    let total = cells.len() as f64;
    if cells.is_empty() {
        return Ok(vec![0.0; counts.len()]);
    }
    let ratios: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    normalized_region_weights(&ratios, cfg.lambda)
}

/// Maps region ratios through the boost function and renormalises to sum 1.
pub fn normalized_region_weights(ratios: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let mapped = ratios
        .iter()
        .map(|&r| scale_balanced_ratio(r, lambda))
        .collect::<Result<Vec<f64>>>()?;
    let sum: f64 = mapped.iter().sum();
    if sum <= 0.0 {
        return Err(Error::input("region ratios are all zero"));
    }
    Ok(mapped.into_iter().map(|m| m / sum).collect())
}

/// Keeps the class counts of [`iou_balanced_sample`] but draws each class by
/// region (with boosted probabilities) and then uniformly inside the region.
/// Draws are with replacement.
pub fn scale_balanced_sample(labels: &LabelConfidenceMap, cfg: &SamplerConfig, count: usize) -> Result<SampledBatch> {
    cfg.validate()?;
    let (pos, neg) = candidates(labels, cfg);
    check_request(&pos, &neg, count)?;
    let length = labels.grid.length;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (want_pos, want_neg) = cfg.class_targets(count);
    let mut draw = |pool: &[(usize, usize)], want: usize| -> Result<Vec<(usize, usize)>> {
        let k = want.min(pool.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut by_region = vec![Vec::new(); cfg.scale_regions.len()];
        for &cell in pool {
            by_region[cfg.region_of(cell.0, length)].push(cell);
        }
        let probs = region_probabilities(pool, length, cfg)?;
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            // fall back to the last non-empty region against round-off
            let mut region = probs.iter().rposition(|&p| p > 0.0).expect("non-empty pool");
            for (r, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc && p > 0.0 {
                    region = r;
                    break;
                }
            }
            let members = &by_region[region];
            out.push(members[rng.random_range(0..members.len())]);
        }
        Ok(out)
    };
    let positives = draw(&pos, want_pos)?;
    let negatives = draw(&neg, want_neg)?;
    let shortfall = count - positives.len() - negatives.len();
    Ok(SampledBatch {
        positives,
        negatives,
        shortfall,
    })
}

struct ClassWeights {
    pos: f64,
    neg: f64,
}

fn class_weights(p: &[f64], g: &[f64]) -> Result<ClassWeights> {
    if p.len() != g.len() {
        return Err(Error::input(format!(
            "{} predictions but {} labels",
            p.len(),
            g.len()
        )));
    }
    if p.is_empty() {
        return Err(Error::input("logistic loss over an empty set"));
    }
    let l = p.len() as f64;
    let n_pos = g.iter().filter(|&&v| v > 0.5).count() as f64;
    let n_neg = l - n_pos;
    Ok(ClassWeights {
        pos: if n_pos > 0.0 { l / n_pos } else { 0.0 },
        neg: if n_neg > 0.0 { l / n_neg } else { 0.0 },
    })
}

/// Class-balanced binary logistic loss.
///
/// Labels are binarised at 0.5. Each class is weighted by `l / l_class`; a
/// class absent from `g` contributes nothing.
pub fn weighted_logistic_loss(p: &[f64], g: &[f64]) -> Result<f64> {
    let w = class_weights(p, g)?;
    let l = p.len() as f64;
    let sum: f64 = p
        .iter()
        .zip(g)
        .map(|(&p, &g)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            if g > 0.5 {
                w.pos * p.ln()
            } else {
                w.neg * (1.0 - p).ln()
            }
        })
        .sum();
    Ok(-sum / l)
}

/// Derivative of [`weighted_logistic_loss`] with respect to each prediction
/// (zero where the clamp is active).
pub fn weighted_logistic_grad(p: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    let w = class_weights(p, g)?;
    let l = p.len() as f64;
    Ok(p.iter()
        .zip(g)
        .map(|(&p, &g)| {
            if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
                0.0
            } else if g > 0.5 {
                -w.pos / (l * p)
            } else {
                w.neg / (l * (1.0 - p))
            }
        })
        .collect())
}

/// Start plus end logistic loss, averaged over supervision heads.
pub fn cbg_loss(heads: &[BoundaryHeatmaps], labels: &BoundaryLabels) -> Result<f64> {
    if heads.is_empty() {
        return Err(Error::input("no boundary heads to score"));
    }
    let mut total = 0.0;
    for h in heads {
        total += weighted_logistic_loss(&h.start, &labels.g_start)?;
        total += weighted_logistic_loss(&h.end, &labels.g_end)?;
    }
    Ok(total / heads.len() as f64)
}

/// Gradient of [`cbg_loss`] as one `l_w × 2` matrix per head.
pub fn cbg_loss_grad(heads: &[BoundaryHeatmaps], labels: &BoundaryLabels) -> Result<Vec<Matrix2D>> {
    let n = heads.len() as f64;
    heads
        .iter()
        .map(|h| {
            let ds = weighted_logistic_grad(&h.start, &labels.g_start)?;
            let de = weighted_logistic_grad(&h.end, &labels.g_end)?;
            let values = ds.iter().zip(&de).flat_map(|(s, e)| [s / n, e / n]).collect();
            Matrix2D::new(h.len(), 2, values)
        })
        .collect()
}

pub fn smooth_l1(pred: f64, target: f64) -> f64 {
    let x = pred - target;
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

fn smooth_l1_grad(pred: f64, target: f64) -> f64 {
    let x = pred - target;
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

fn regression_support(labels: &LabelConfidenceMap, batch: &SampledBatch) -> BTreeSet<(usize, usize)> {
    let mut cells: BTreeSet<(usize, usize)> = labels.grid.cells().filter(|&(j, i)| labels.get(j, i) > 0.0).collect();
    cells.extend(batch.negatives.iter().copied());
    cells
}

fn batch_cells(batch: &SampledBatch) -> impl Iterator<Item = &(usize, usize)> {
    batch.positives.iter().chain(&batch.negatives)
}

fn check_batch(maps: &ConfidenceMaps, labels: &LabelConfidenceMap, batch: &SampledBatch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::input("empty proposal batch"));
    }
    if maps.grid != labels.grid {
        return Err(Error::input("confidence maps and labels cover different grids"));
    }
    if let Some(&(j, i)) = batch_cells(batch).find(|&&(j, i)| !labels.grid.is_valid(j, i)) {
        return Err(Error::input(format!("batch cell ({j}, {i}) lies outside the grid")));
    }
    Ok(())
}

/// Regression and classification losses of the confidence maps.
///
/// Regression covers every cell with positive overlap plus the sampled
/// negatives; classification covers the sampled cells with targets
/// `1(g > 0.7)`.
pub fn prb_loss(maps: &ConfidenceMaps, labels: &LabelConfidenceMap, batch: &SampledBatch) -> Result<(f64, f64)> {
    check_batch(maps, labels, batch)?;
    let support = regression_support(labels, batch);
    let l_reg = if support.is_empty() {
        0.0
    } else {
        support
            .iter()
            .map(|&(j, i)| smooth_l1(maps.cr.get(j, i), labels.get(j, i)))
            .sum::<f64>()
            / support.len() as f64
    };
    let (p, g) = classification_pairs(maps, labels, batch);
    Ok((l_reg, weighted_logistic_loss(&p, &g)?))
}

fn classification_pairs(maps: &ConfidenceMaps, labels: &LabelConfidenceMap, batch: &SampledBatch) -> (Vec<f64>, Vec<f64>) {
    batch_cells(batch)
        .map(|&(j, i)| {
            let target = if labels.get(j, i) > 0.7 { 1.0 } else { 0.0 };
            (maps.cc.get(j, i), target)
        })
        .unzip()
}

/// Gradients of `(l_reg, l_cls)` on `(cr, cc)`, per valid cell in grid order.
fn prb_loss_grad(
    maps: &ConfidenceMaps,
    labels: &LabelConfidenceMap,
    batch: &SampledBatch,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_batch(maps, labels, batch)?;
    let grid = maps.grid;
    let mut d_cc = vec![0.0; grid.valid_count()];
    let mut d_cr = vec![0.0; grid.valid_count()];
    let support = regression_support(labels, batch);
    let n = support.len() as f64;
    for &(j, i) in &support {
        d_cr[grid.cell_index(j, i)] = smooth_l1_grad(maps.cr.get(j, i), labels.get(j, i)) / n;
    }
    let (p, g) = classification_pairs(maps, labels, batch);
    let dp = weighted_logistic_grad(&p, &g)?;
    for (&(j, i), d) in batch_cells(batch).zip(dp) {
        d_cc[grid.cell_index(j, i)] += d;
    }
    Ok((d_cc, d_cr))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_cbg: f64,
    pub l_prb: f64,
    pub l_reg: f64,
    pub l_cls: f64,
    pub l2: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(l_cbg: f64, l_reg: f64, l_cls: f64, l2: f64) -> Self {
        Self::weighted(l_cbg, l_reg, l_cls, l2, BETA, GAMMA)
    }

    pub fn weighted(l_cbg: f64, l_reg: f64, l_cls: f64, l2: f64, beta: f64, gamma: f64) -> Self {
        let l_prb = l_reg + l_cls;
        Self {
            l_cbg,
            l_prb,
            l_reg,
            l_cls,
            l2,
            total: l_cbg + beta * l_prb + gamma * l2,
        }
    }
}

pub fn total_loss(l_cbg: f64, l_reg: f64, l_cls: f64, params: &impl Parameterized) -> LossReport {
    LossReport::new(l_cbg, l_reg, l_cls, params.sum_squares())
}

/// Writes `step,total,l_cbg,l_reg,l_cls,l2`, one row per trace entry.
pub fn write_loss_trace(path: impl AsRef<Path>, trace: &[LossReport]) -> Result<()> {
    let path = path.as_ref();
    let mut out = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    out.write_record(["step", "total", "l_cbg", "l_reg", "l_cls", "l2"]).map_err(io)?;
    for (step, r) in trace.iter().enumerate() {
        out.write_record([
            step.to_string(),
            r.total.to_string(),
            r.l_cbg.to_string(),
            r.l_reg.to_string(),
            r.l_cls.to_string(),
            r.l2.to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = out.into_inner().map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// A window with its training targets.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub features: Matrix2D,
    pub boundaries: BoundaryLabels,
    pub confidence: LabelConfidenceMap,
}

impl TrainingExample {
    pub fn from_window(window: &ObservationWindow, max_duration: usize) -> Result<Self> {
        Ok(Self {
            features: window.features.clone(),
            boundaries: label_boundaries(window),
            confidence: label_confidence_map(window, max_duration)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub steps: usize,
    /// Adam learning rate.
    pub step_size: f64,
    pub seed: u64,
    /// Windows in the fixed batch.
    pub batch_windows: usize,
    /// Proposal cells sampled per window.
    pub samples_per_window: usize,
    /// Apply the scale-balanced second stage after IoU balancing.
    pub scale_balanced: bool,
    pub sampler: SamplerConfig,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            step_size: 0.01,
            seed: 0,
            batch_windows: 16,
            samples_per_window: 32,
            scale_balanced: true,
            sampler: SamplerConfig::default(),
            beta: BETA,
            gamma: GAMMA,
        }
    }
}

struct BatchItem<'a> {
    example: &'a TrainingExample,
    cells: SampledBatch,
}

fn fixed_batch<'a>(examples: &'a [TrainingExample], cfg: &FitConfig) -> Result<Vec<BatchItem<'a>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.batch_windows.min(examples.len());
    let mut picks = index::sample(&mut rng, examples.len(), k).into_vec();
    picks.sort_unstable();
    picks
        .into_iter()
        .map(|w| {
            let example = &examples[w];
            let sampler = SamplerConfig {
                seed: cfg.sampler.seed ^ rng.random::<u64>(),
                ..cfg.sampler.clone()
            };
            let cells = if cfg.scale_balanced {
                scale_balanced_sample(&example.confidence, &sampler, cfg.samples_per_window)?
            } else {
                iou_balanced_sample(&example.confidence, &sampler, cfg.samples_per_window)?
            };
            Ok(BatchItem { example, cells })
        })
        .collect()
}

/// Loss and flat gradient over the batch; windows are averaged.
fn batch_objective(model: &ProposalModel, batch: &[BatchItem<'_>], cfg: &FitConfig) -> Result<(LossReport, Vec<f64>)> {
    let n = batch.len() as f64;
    let mut grad = model.zeros_like();
    let (mut l_cbg, mut l_reg, mut l_cls) = (0.0, 0.0, 0.0);
    for item in batch {
        let (out, maps, trace) = model.forward_traced(&item.example.features)?;
        l_cbg += cbg_loss(&out.heads, &item.example.boundaries)? / n;
        let (reg, cls) = prb_loss(&maps, &item.example.confidence, &item.cells)?;
        l_reg += reg / n;
        l_cls += cls / n;

        let mut head_grads = cbg_loss_grad(&out.heads, &item.example.boundaries)?;
        for g in &mut head_grads {
            *g = g.scale(1.0 / n);
        }
        let (d_cc, d_cr) = prb_loss_grad(&maps, &item.example.confidence, &item.cells)?;
        let scale = cfg.beta / n;
        let d_cc: Vec<f64> = d_cc.iter().map(|d| d * scale).collect();
        let d_cr: Vec<f64> = d_cr.iter().map(|d| d * scale).collect();
        model.backward(&trace, &head_grads, &d_cc, &d_cr, &mut grad)?;
    }
    let report = LossReport::weighted(l_cbg, l_reg, l_cls, model.sum_squares(), cfg.beta, cfg.gamma);
    if !report.total.is_finite() {
        return Err(Error::numeric(format!(
            "non-finite loss (l_cbg {}, l_reg {}, l_cls {}, l2 {})",
            report.l_cbg, report.l_reg, report.l_cls, report.l2
        )));
    }
    let mut flat = grad.to_flat();
    for (g, p) in flat.iter_mut().zip(model.to_flat()) {
        *g += 2.0 * cfg.gamma * p;
    }
    Ok((report, flat))
}

/// Loss of `model` on the batch `fit_toy` would build from `cfg`.
pub fn evaluate_batch_loss(model: &ProposalModel, examples: &[TrainingExample], cfg: &FitConfig) -> Result<LossReport> {
    let batch = fixed_batch(examples, cfg)?;
    batch_objective(model, &batch, cfg).map(|(r, _)| r)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for ((p, &g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: ProposalModel,
    /// Loss before every step plus after the last one (`steps + 1` entries).
    pub trace: Vec<LossReport>,
}

/// Adam on a batch of windows and proposal cells fixed up front from the seed.
pub fn fit_toy(model: ProposalModel, examples: &[TrainingExample], cfg: &FitConfig) -> Result<FitOutcome> {
    if examples.is_empty() {
        return Err(Error::input("no training windows"));
    }
    if !(cfg.beta >= 0.0 && cfg.gamma >= 0.0) {
        return Err(Error::config("loss weights must be non-negative"));
    }
    if !(cfg.step_size >= 0.0 && cfg.step_size.is_finite()) {
        return Err(Error::config("step size must be a non-negative number"));
    }
    let batch = fixed_batch(examples, cfg)?;
    let mut model = model;
    let mut flat = model.to_flat();
    let mut adam = Adam::new(flat.len());
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    for _ in 0..cfg.steps {
        let (report, grad) = batch_objective(&model, &batch, cfg)?;
        trace.push(report);
        adam.step(&mut flat, &grad, cfg.step_size);
        model.load_flat(&flat);
    }
    trace.push(batch_objective(&model, &batch, cfg)?.0);
    Ok(FitOutcome { model, trace })
}
