//! Dual matching attention networks: a small convolutional backbone with a
//! spatial attention network (SAN) over image pairs and a bidirectional-LSTM
//! temporal attention network (TAN) over tracklets.

pub mod data;
mod params;
mod san;
mod tan;
mod train;

pub use params::{Block, ConvLayer, DmanConfig, Lstm, ParamBlocks, SanParams, TanParams};
pub use san::{
    embed, masked_pool, prepare_input, san_forward, san_loss, san_loss_and_grad, similarity_matrix, spatial_attention,
    EmbeddingTensor, NetInput, PairExample, SanMode, SanOutput,
};
pub use tan::{tan_forward, tan_loss, tan_loss_and_grad, TanMode, TanOutput, TrackletExample};
pub use train::{
    batch_san_loss_and_grad, batch_tan_loss_and_grad, san_verification_accuracy, train_san, train_tan, Adam,
    TrainConfig,
};

use crate::checkpoint::{Checkpoint, NamedTensor};
use crate::error::{invalid, Error, Result};

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(z)` against `target`, computed from the
/// logit.
pub(crate) fn bce_with_logit(z: f64, target: bool) -> f64 {
    let softplus = if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    };
    softplus - if target { z } else { 0.0 }
}

/// Cross-entropy of softmax(logits) against class `label`.
pub(crate) fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Which attention components run; the ablations switch one off each.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DmanMode {
    pub san: SanMode,
    pub tan: TanMode,
}

/// Trained SAN and TAN used for association.
#[derive(Debug, Clone, PartialEq)]
pub struct Dman {
    pub san: SanParams,
    pub tan: TanParams,
    pub mode: DmanMode,
}

impl Dman {
    /// Affinity of a detection with a tracklet of 1 to T observations.
    pub fn affinity(&self, detection: &NetInput, tracklet: &[NetInput]) -> Result<f64> {
        Ok(self.score(detection, tracklet)?.similarity)
    }

    pub fn score(&self, detection: &NetInput, tracklet: &[NetInput]) -> Result<TanOutput> {
        if tracklet.is_empty() {
            return Err(invalid("affinity needs at least one tracklet observation"));
        }
        let det = embed(&self.san, detection)?;
        let mut feats = Vec::with_capacity(tracklet.len());
        for obs in tracklet {
            let e = embed(&self.san, obs)?;
            feats.push(san::forward_embedded(&self.san, &e, &det, self.mode.san)?.combined);
        }
        tan_forward(&self.tan, &feats, self.mode.tan)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.header.push(("kind".into(), "dman".into()));
        self.san.config().write_header(&mut ck.header);
        for b in self.san.blocks() {
            ck.tensors
                .push(NamedTensor::new(format!("san.{}", b.name), b.shape, b.data.to_vec()));
        }
        for b in self.tan.blocks() {
            ck.tensors
                .push(NamedTensor::new(format!("tan.{}", b.name), b.shape, b.data.to_vec()));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.header_value("kind") != Some("dman") {
            return Err(Error::Checkpoint("not a DMAN checkpoint".into()));
        }
        let cfg = DmanConfig::read_header(&ck.header)?;
        let mut san = SanParams::zeros(&cfg)?;
        let mut tan = TanParams::zeros(cfg.combined_dim, cfg.hidden_dim);
        load_blocks(ck, "san.", &mut san)?;
        load_blocks(ck, "tan.", &mut tan)?;
        Ok(Self {
            san,
            tan,
            mode: DmanMode::default(),
        })
    }
}

/// Spatial network alone, as written after the first training stage.
pub fn san_to_checkpoint(san: &SanParams) -> Checkpoint {
    let mut ck = Checkpoint::new();
    ck.header.push(("kind".into(), "san".into()));
    san.config().write_header(&mut ck.header);
    for b in san.blocks() {
        ck.tensors
            .push(NamedTensor::new(format!("san.{}", b.name), b.shape, b.data.to_vec()));
    }
    ck
}

/// Reads the spatial network from a `san` or `dman` checkpoint.
pub fn san_from_checkpoint(ck: &Checkpoint) -> Result<SanParams> {
    match ck.header_value("kind") {
        Some("san") | Some("dman") => {}
        _ => return Err(Error::Checkpoint("not a SAN or DMAN checkpoint".into())),
    }
    let cfg = DmanConfig::read_header(&ck.header)?;
    let mut san = SanParams::zeros(&cfg)?;
    load_blocks(ck, "san.", &mut san)?;
    Ok(san)
}

/// Copies tensors named `prefix + block name` into `params`, checking shapes.
pub fn load_blocks(ck: &Checkpoint, prefix: &str, params: &mut impl ParamBlocks) -> Result<()> {
    let shapes: Vec<(String, Vec<usize>)> = params.blocks().into_iter().map(|b| (b.name, b.shape)).collect();
    for ((name, shape), slot) in shapes.into_iter().zip(params.blocks_mut()) {
        let full = format!("{prefix}{name}");
        let t = ck
            .tensor(&full)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {full}")))?;
        if t.shape != shape {
            return Err(Error::Checkpoint(format!(
                "tensor {full} has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        slot.copy_from_slice(&t.data);
    }
    Ok(())
}
