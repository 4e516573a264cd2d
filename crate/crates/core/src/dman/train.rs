use std::sync::mpsc;
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{make_pairs, make_tracklets, tracklet_features, IdentityDataset, TrackletSpec};
use super::params::{ParamBlocks, SanParams, TanParams};
use super::san::{san_forward, san_loss_and_grad, PairExample, SanMode};
use super::tan::{tan_loss_and_grad, TanMode, TrackletExample};
use crate::config::Config;
use crate::error::{invalid, Error, Result};

/// Batches generated ahead of the optimizer.
const QUEUE_DEPTH: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub positive_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 16,
            steps: 2000,
            positive_ratio: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        Ok(Self {
            learning_rate: cfg.positive("train.learning_rate")?,
            batch_size: cfg.usize("train.batch_size")?.max(1),
            steps: cfg.usize("train.steps")?,
            positive_ratio: cfg.f64("train.positive_ratio")?,
            seed: cfg.u64("run.seed")?,
        })
    }
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone)]
pub struct Adam<P> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: P,
    v: P,
    t: i32,
}

impl<P: ParamBlocks> Adam<P> {
    pub fn new(params: &P, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut P, grad: &P) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let g: Vec<Vec<f64>> = grad.blocks().into_iter().map(|b| b.data.to_vec()).collect();
        let blocks = params
            .blocks_mut()
            .into_iter()
            .zip(self.m.blocks_mut())
            .zip(self.v.blocks_mut())
            .zip(g);
        for (((p, m), v), g) in blocks {
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                p[k] -= self.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
            }
        }
    }
}

fn mean_grad<P: ParamBlocks, E>(params: &P, batch: &[E], f: impl Fn(&E) -> Result<(f64, P)>) -> Result<(f64, P)> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for ex in batch {
        let (l, g) = f(ex)?;
        loss += l;
        total.add_scaled(&g, 1.0);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut mean = params.zeros_like();
    mean.add_scaled(&total, scale);
    Ok((loss * scale, mean))
}

/// Mean loss and gradient over a batch of pairs.
pub fn batch_san_loss_and_grad(p: &SanParams, batch: &[PairExample], mode: SanMode) -> Result<(f64, SanParams)> {
    mean_grad(p, batch, |ex| san_loss_and_grad(p, ex, mode))
}

pub fn batch_tan_loss_and_grad(p: &TanParams, batch: &[TrackletExample], mode: TanMode) -> Result<(f64, TanParams)> {
    mean_grad(p, batch, |ex| tan_loss_and_grad(p, ex, mode))
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::NumericFailure { context, .. } => Error::NumericFailure {
            iteration: step,
            context,
        },
        other => other,
    }
}

/// Runs `steps` optimizer steps on batches produced by `make` on a separate
/// thread; returns the loss of every step.
fn run_training<P, E, M, G>(params: &mut P, cfg: &TrainConfig, make: M, grad: G) -> Result<Vec<f64>>
where
    P: ParamBlocks,
    E: Send,
    M: FnMut(&mut ChaCha8Rng) -> Result<Vec<E>> + Send,
    G: Fn(&P, &[E]) -> Result<(f64, P)>,
{
    let mut adam = Adam::new(params, cfg.learning_rate);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut make = make;
    thread::scope(|s| {
        let (tx, rx) = mpsc::sync_channel::<Result<Vec<E>>>(QUEUE_DEPTH);
        let steps = cfg.steps;
        let seed = cfg.seed;
        s.spawn(move || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..steps {
                let batch = make(&mut rng);
                let failed = batch.is_err();
                if tx.send(batch).is_err() || failed {
                    break;
                }
            }
        });
        for step in 0..cfg.steps {
            let batch = rx.recv().map_err(|_| invalid("batch producer stopped"))??;
            let (loss, g) = grad(params, &batch).map_err(|e| at_step(e, step))?;
            if !g.is_finite() {
                return Err(Error::NumericFailure {
                    iteration: step,
                    context: "non-finite gradient".into(),
                });
            }
            adam.step(params, &g);
            losses.push(loss);
            if step % 100 == 0 {
                log::debug!("step {step}: loss {loss:.5}");
            }
        }
        // dropping the receiver ends the producer
        drop(rx);
        Ok(())
    })?;
    Ok(losses)
}

/// Joint identification and verification training of the spatial network.
pub fn train_san(p: &mut SanParams, ds: &IdentityDataset, cfg: &TrainConfig, mode: SanMode) -> Result<Vec<f64>> {
    let size = p.config().input_size;
    let n_ids = p.config().num_identities;
    if n_ids != 0 && n_ids != ds.len() {
        return Err(invalid(format!(
            "identification head has {n_ids} classes but the dataset has {} identities",
            ds.len()
        )));
    }
    let (batch, ratio) = (cfg.batch_size, cfg.positive_ratio);
    run_training(
        p,
        cfg,
        move |rng| make_pairs(ds, batch, ratio, size, rng),
        |p, b| batch_san_loss_and_grad(p, b, mode),
    )
}

/// Trains the temporal network on pair features of a frozen spatial network.
pub fn train_tan(
    tan: &mut TanParams,
    san: &SanParams,
    ds: &IdentityDataset,
    cfg: &TrainConfig,
    spec: &TrackletSpec,
    mode: (SanMode, TanMode),
) -> Result<Vec<f64>> {
    if tan.input_dim() != san.config().combined_dim {
        return Err(invalid(
            "temporal network input does not match the combined feature size",
        ));
    }
    let size = san.config().input_size;
    let batch = cfg.batch_size;
    let spec = TrackletSpec {
        positive_ratio: cfg.positive_ratio,
        ..*spec
    };
    run_training(
        tan,
        cfg,
        move |rng| {
            make_tracklets(ds, batch, &spec, size, rng)?
                .iter()
                .map(|t| tracklet_features(san, t, mode.0))
                .collect()
        },
        |p, b| batch_tan_loss_and_grad(p, b, mode.1),
    )
}

/// Fraction of pairs whose verification probability falls on the correct
/// side of one half.
pub fn san_verification_accuracy(p: &SanParams, pairs: &[PairExample], mode: SanMode) -> Result<f64> {
    if pairs.is_empty() {
        return Err(invalid("no pairs to evaluate"));
    }
    let mut correct = 0usize;
    for ex in pairs {
        let out = san_forward(p, &ex.a, &ex.b, mode)?;
        correct += usize::from((out.p_verify > 0.5) == ex.same());
    }
    Ok(correct as f64 / pairs.len() as f64)
}
