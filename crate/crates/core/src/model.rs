//! Boundary generator and relation block sharing one base module.

use serde::{Deserialize, Serialize};

use crate::boundary::{
    base_backward, bidirectional_infer, cbg_backward_heads, cbg_forward_traced, BidirectionalOutput,
    CbgConfig, CbgOutput, CbgParams, CbgTrace,
};
use crate::error::{Error, Result};
use crate::kernels::{Matrix2D, Parameterized};
use crate::relation::{prb_backward, prb_forward, prb_forward_traced, ConfidenceMaps, PrbConfig, PrbParams, PrbTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub cbg: CbgConfig,
    pub prb: PrbConfig,
    /// Maximum proposal duration `D` in cells.
    pub max_duration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalModel {
    pub max_duration: usize,
    pub cbg: CbgParams,
    pub prb: PrbParams,
}

#[derive(Debug, Clone)]
pub struct ModelTrace {
    pub cbg: CbgTrace,
    pub prb: PrbTrace,
}

impl ProposalModel {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        if config.prb.base_width != config.cbg.base_width {
            return Err(Error::config(format!(
                "relation block expects base width {}, base module produces {}",
                config.prb.base_width, config.cbg.base_width
            )));
        }
        if config.max_duration == 0 {
            return Err(Error::config("maximum duration D must be at least 1"));
        }
        Ok(Self {
            max_duration: config.max_duration,
            cbg: CbgParams::new(config.cbg.clone(), seed)?,
            prb: PrbParams::new(config.prb.clone(), seed.wrapping_add(1))?,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero_all();
        z
    }

    /// Single-direction pass used for training.
    pub fn forward_traced(&self, window: &Matrix2D) -> Result<(CbgOutput, ConfidenceMaps, ModelTrace)> {
        let (cbg_out, cbg_trace) = cbg_forward_traced(&self.cbg, window)?;
        let (maps, prb_trace) = prb_forward_traced(&self.prb, &cbg_out.base, self.max_duration)?;
        Ok((
            cbg_out,
            maps,
            ModelTrace {
                cbg: cbg_trace,
                prb: prb_trace,
            },
        ))
    }

    /// Accumulates parameter gradients into `grad`.
    ///
    /// `head_grads` holds one `l_w × 2` gradient per supervision head;
    /// `d_cc`/`d_cr` are per valid cell in grid order.
    pub fn backward(
        &self,
        trace: &ModelTrace,
        head_grads: &[Matrix2D],
        d_cc: &[f64],
        d_cr: &[f64],
        grad: &mut ProposalModel,
    ) -> Result<()> {
        let mut d_base = cbg_backward_heads(&self.cbg, &trace.cbg, head_grads, &mut grad.cbg)?;
        d_base.add_assign(&prb_backward(&self.prb, &trace.prb, d_cc, d_cr, &mut grad.prb)?);
        base_backward(&self.cbg, &trace.cbg, &d_base, &mut grad.cbg)
    }

    /// Inference: bidirectional boundary heatmaps plus confidence maps from
    /// the forward-pass base features.
    pub fn infer(&self, window: &Matrix2D) -> Result<(BidirectionalOutput, ConfidenceMaps)> {
        let bi = bidirectional_infer(&self.cbg, window)?;
        let maps = prb_forward(&self.prb, &bi.base, self.max_duration)?;
        Ok((bi, maps))
    }
}

impl Parameterized for ProposalModel {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.cbg.visit(f);
        self.prb.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.cbg.visit_mut(f);
        self.prb.visit_mut(f);
    }
}
