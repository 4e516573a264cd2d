use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::config::Config;
use crate::error::{invalid, Error, Result};

/// Network sizes shared by SAN and TAN.
#[derive(Debug, Clone, PartialEq)]
pub struct DmanConfig {
    /// Side of the square RGB input.
    pub input_size: usize,
    /// Output channels of the stride-2 conv layers; the last one is C.
    pub channels: Vec<usize>,
    /// d_c, size of the combined pair feature.
    pub combined_dim: usize,
    /// d_h, LSTM hidden size per direction.
    pub hidden_dim: usize,
    /// Classes of the identification head (0 disables it).
    pub num_identities: usize,
}

impl Default for DmanConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            channels: vec![16, 32, 32],
            combined_dim: 64,
            hidden_dim: 32,
            num_identities: 0,
        }
    }
}

impl DmanConfig {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let channels = cfg
            .f64_list("dman.channels")?
            .into_iter()
            .map(|c| {
                if c >= 1.0 && c.fract() == 0.0 {
                    Ok(c as usize)
                } else {
                    Err(Error::Config(format!(
                        "dman.channels entry {c} is not a positive integer"
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let out = Self {
            input_size: cfg.usize("dman.input_size")?,
            channels,
            combined_dim: cfg.usize("dman.combined_dim")?,
            hidden_dim: cfg.usize("dman.hidden_dim")?,
            num_identities: 0,
        };
        out.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size < 2 || self.channels.is_empty() || self.channels.contains(&0) {
            return Err(invalid(
                "network needs an input of at least 2 pixels and nonzero channels",
            ));
        }
        if self.combined_dim == 0 || self.hidden_dim == 0 {
            return Err(invalid("combined and hidden sizes must be positive"));
        }
        Ok(())
    }

    /// Side of the embedding grid after the stride-2 layers.
    pub fn grid_side(&self) -> usize {
        self.channels.iter().fold(self.input_size, |s, _| (s - 1) / 2 + 1)
    }

    pub fn embed_dim(&self) -> usize {
        *self.channels.last().expect("validated")
    }

    pub(crate) fn write_header(&self, header: &mut Vec<(String, String)>) {
        let ch: Vec<String> = self.channels.iter().map(usize::to_string).collect();
        header.push(("dman.input_size".into(), self.input_size.to_string()));
        header.push(("dman.channels".into(), ch.join(" ")));
        header.push(("dman.combined_dim".into(), self.combined_dim.to_string()));
        header.push(("dman.hidden_dim".into(), self.hidden_dim.to_string()));
        header.push(("dman.num_identities".into(), self.num_identities.to_string()));
    }

    pub(crate) fn read_header(header: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| {
            header
                .iter()
                .find(|(hk, _)| hk == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("header lacks {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("header {k} is not an integer")))
        };
        let channels = get("dman.channels")?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Checkpoint("bad dman.channels".into())))
            .collect::<Result<Vec<usize>>>()?;
        let cfg = Self {
            input_size: num("dman.input_size")?,
            channels,
            combined_dim: num("dman.combined_dim")?,
            hidden_dim: num("dman.hidden_dim")?,
            num_identities: num("dman.num_identities")?,
        };
        cfg.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(cfg)
    }
}

/// One named parameter tensor, row-major.
#[derive(Debug)]
pub struct Block<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// Uniform access to parameter tensors for optimizers, gradient checks and
/// checkpoints. `blocks` and `blocks_mut` list tensors in the same order.
pub trait ParamBlocks: Clone {
    fn blocks(&self) -> Vec<Block<'_>>;
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for b in z.blocks_mut() {
            b.fill(0.0);
        }
        z
    }

    fn add_scaled(&mut self, other: &Self, scale: f64) {
        let src: Vec<Vec<f64>> = other.blocks().into_iter().map(|b| b.data.to_vec()).collect();
        for (dst, src) in self.blocks_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.data.iter().all(|v| v.is_finite()))
    }
}

/// 3x3 convolution with stride 2 and padding 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub cin: usize,
    pub cout: usize,
    /// `[cout][cin][3][3]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    fn zeros(cin: usize, cout: usize) -> Self {
        Self {
            cin,
            cout,
            weight: vec![0.0; cout * cin * 9],
            bias: vec![0.0; cout],
        }
    }
}

/// Backbone, shared attention vector, combine layer and both classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct SanParams {
    cfg: DmanConfig,
    pub conv: Vec<ConvLayer>,
    /// Shared 1x1 attention weights over the N similarity entries.
    pub theta_s: Vec<f64>,
    /// `[d_c][2C]`
    pub combine_w: Vec<f64>,
    pub combine_b: Vec<f64>,
    pub verify_w: Vec<f64>,
    pub verify_b: Vec<f64>,
    /// `[num_identities][C]`
    pub ident_w: Vec<f64>,
    pub ident_b: Vec<f64>,
}

impl SanParams {
    pub fn zeros(cfg: &DmanConfig) -> Result<Self> {
        cfg.validate()?;
        let mut conv = Vec::new();
        let mut cin = 3;
        for &c in &cfg.channels {
            conv.push(ConvLayer::zeros(cin, c));
            cin = c;
        }
        let n = cfg.grid_side().pow(2);
        let c = cfg.embed_dim();
        let dc = cfg.combined_dim;
        Ok(Self {
            cfg: cfg.clone(),
            conv,
            theta_s: vec![0.0; n],
            combine_w: vec![0.0; dc * 2 * c],
            combine_b: vec![0.0; dc],
            verify_w: vec![0.0; dc],
            verify_b: vec![0.0],
            ident_w: vec![0.0; cfg.num_identities * c],
            ident_b: vec![0.0; cfg.num_identities],
        })
    }

    /// He-style Gaussian initialisation; biases start at zero.
    pub fn init(cfg: &DmanConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut p = Self::zeros(cfg)?;
        let mut fill = |v: &mut [f64], std: f64| {
            let d = Normal::new(0.0, std).expect("positive std");
            for x in v.iter_mut() {
                *x = d.sample(rng);
            }
        };
        for l in p.conv.iter_mut() {
            fill(&mut l.weight, (2.0 / (l.cin * 9) as f64).sqrt());
        }
        let c = cfg.embed_dim();
        fill(&mut p.theta_s, 0.1);
        fill(&mut p.combine_w, (2.0 / (2 * c) as f64).sqrt());
        fill(&mut p.verify_w, (1.0 / cfg.combined_dim as f64).sqrt());
        fill(&mut p.ident_w, (1.0 / c as f64).sqrt());
        Ok(p)
    }

    pub fn config(&self) -> &DmanConfig {
        &self.cfg
    }

    /// Copies the first half of every combine row onto the second, making
    /// the pair feature symmetric in its two inputs.
    pub fn tie_combine_halves(&mut self) {
        let c = self.cfg.embed_dim();
        for row in self.combine_w.chunks_mut(2 * c) {
            let (a, b) = row.split_at_mut(c);
            b.copy_from_slice(a);
        }
    }
}

impl ParamBlocks for SanParams {
    fn blocks(&self) -> Vec<Block<'_>> {
        let c = self.cfg.embed_dim();
        let dc = self.cfg.combined_dim;
        let mut out = Vec::new();
        for (i, l) in self.conv.iter().enumerate() {
            out.push(block(
                &format!("conv{}.weight", i + 1),
                vec![l.cout, l.cin, 3, 3],
                &l.weight,
            ));
            out.push(block(&format!("conv{}.bias", i + 1), vec![l.cout], &l.bias));
        }
        let n = self.theta_s.len();
        let k = self.cfg.num_identities;
        out.push(block("theta_s", vec![n], &self.theta_s));
        out.push(block("combine.weight", vec![dc, 2 * c], &self.combine_w));
        out.push(block("combine.bias", vec![dc], &self.combine_b));
        out.push(block("verify.weight", vec![dc], &self.verify_w));
        out.push(block("verify.bias", vec![1], &self.verify_b));
        out.push(block("ident.weight", vec![k, c], &self.ident_w));
        out.push(block("ident.bias", vec![k], &self.ident_b));
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in self.conv.iter_mut() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.theta_s);
        out.push(&mut self.combine_w);
        out.push(&mut self.combine_b);
        out.push(&mut self.verify_w);
        out.push(&mut self.verify_b);
        out.push(&mut self.ident_w);
        out.push(&mut self.ident_b);
        out
    }
}

fn block<'a>(name: &str, shape: Vec<usize>, data: &'a [f64]) -> Block<'a> {
    Block {
        name: name.to_string(),
        shape,
        data,
    }
}

/// Initial forget-gate bias of both LSTM directions.
pub const FORGET_BIAS: f64 = -10.0;

/// One direction of an LSTM with gates ordered input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `[4 d_h][input_dim + d_h]`
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Lstm {
    fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            w: vec![0.0; 4 * hidden_dim * (input_dim + hidden_dim)],
            b: vec![0.0; 4 * hidden_dim],
        }
    }
}

/// Bidirectional LSTM, temporal attention vector and similarity classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct TanParams {
    pub forward: Lstm,
    pub backward: Lstm,
    /// Attention weights over the concatenated hidden state (2 d_h).
    pub theta_h: Vec<f64>,
    pub cls_w: Vec<f64>,
    pub cls_b: Vec<f64>,
}

impl TanParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            forward: Lstm::zeros(input_dim, hidden_dim),
            backward: Lstm::zeros(input_dim, hidden_dim),
            theta_h: vec![0.0; 2 * hidden_dim],
            cls_w: vec![0.0; 2 * hidden_dim],
            cls_b: vec![0.0],
        }
    }

    /// Uniform LSTM weights in +-1/sqrt(d_h). The forget gate starts nearly
    /// closed, so each hidden state initially depends mostly on its own
    /// input and the attention can tell observations apart.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let u = Uniform::new(-bound, bound).expect("valid range");
        for l in [&mut p.forward, &mut p.backward] {
            for w in l.w.iter_mut() {
                *w = u.sample(rng);
            }
            for b in &mut l.b[hidden_dim..2 * hidden_dim] {
                *b = FORGET_BIAS;
            }
        }
        let n = Normal::new(0.0, 0.1).expect("positive std");
        for t in p.theta_h.iter_mut() {
            *t = n.sample(rng);
        }
        let n = Normal::new(0.0, (1.0 / (2 * hidden_dim) as f64).sqrt()).expect("positive std");
        for w in p.cls_w.iter_mut() {
            *w = n.sample(rng);
        }
        p
    }

    pub fn hidden_dim(&self) -> usize {
        self.forward.hidden_dim
    }

    pub fn input_dim(&self) -> usize {
        self.forward.input_dim
    }
}

impl ParamBlocks for TanParams {
    fn blocks(&self) -> Vec<Block<'_>> {
        let dh = self.hidden_dim();
        let cols = self.input_dim() + dh;
        vec![
            block("lstm_fwd.weight", vec![4 * dh, cols], &self.forward.w),
            block("lstm_fwd.bias", vec![4 * dh], &self.forward.b),
            block("lstm_bwd.weight", vec![4 * dh, cols], &self.backward.w),
            block("lstm_bwd.bias", vec![4 * dh], &self.backward.b),
            block("theta_h", vec![2 * dh], &self.theta_h),
            block("cls.weight", vec![2 * dh], &self.cls_w),
            block("cls.bias", vec![1], &self.cls_b),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.forward.w,
            &mut self.forward.b,
            &mut self.backward.w,
            &mut self.backward.b,
            &mut self.theta_h,
            &mut self.cls_w,
            &mut self.cls_b,
        ]
    }
}
