use super::params::{Lstm, ParamBlocks, TanParams};
use super::{bce_with_logit, sigmoid, softmax};
use crate::error::{invalid, mismatch, Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TanMode {
    /// Pool hidden states with uniform weights instead of learned attention.
    pub average: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TanOutput {
    /// Temporal attention a_t.
    pub weights: Vec<f64>,
    pub similarity: f64,
    pub logit: f64,
    /// `[h_t^fwd; h_t^bwd]` for each step.
    pub hidden: Vec<Vec<f64>>,
    pub pooled: Vec<f64>,
}

/// Per-step values of one LSTM direction, in processing order.
struct StepCache {
    z: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn lstm_run(l: &Lstm, inputs: &[&[f64]]) -> (Vec<Vec<f64>>, Vec<StepCache>) {
    let (din, dh) = (l.input_dim, l.hidden_dim);
    let cols = din + dh;
    let mut h = vec![0.0; dh];
    let mut c = vec![0.0; dh];
    let mut hs = Vec::with_capacity(inputs.len());
    let mut caches = Vec::with_capacity(inputs.len());
    for x in inputs {
        let mut z = Vec::with_capacity(cols);
        z.extend_from_slice(x);
        z.extend_from_slice(&h);
        let pre: Vec<f64> = (0..4 * dh)
            .map(|r| {
                l.b[r]
                    + l.w[r * cols..(r + 1) * cols]
                        .iter()
                        .zip(&z)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect();
        let i: Vec<f64> = pre[..dh].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = pre[dh..2 * dh].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = pre[2 * dh..3 * dh].iter().map(|v| v.tanh()).collect();
        let o: Vec<f64> = pre[3 * dh..].iter().map(|&v| sigmoid(v)).collect();
        let c_prev = c.clone();
        for k in 0..dh {
            c[k] = f[k] * c_prev[k] + i[k] * g[k];
        }
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        for k in 0..dh {
            h[k] = o[k] * tanh_c[k];
        }
        hs.push(h.clone());
        caches.push(StepCache {
            z,
            i,
            f,
            g,
            o,
            c_prev,
            tanh_c,
        });
    }
    (hs, caches)
}

/// Backpropagation through time; `dh_ext[t]` is the loss gradient of the
/// hidden state at processing step `t`.
fn lstm_backward(l: &Lstm, caches: &[StepCache], dh_ext: &[Vec<f64>], g: &mut Lstm) {
    let (din, dh) = (l.input_dim, l.hidden_dim);
    let cols = din + dh;
    let mut dh_next = vec![0.0; dh];
    let mut dc_next = vec![0.0; dh];
    let mut da = vec![0.0; 4 * dh];
    for (s, dext) in caches.iter().zip(dh_ext).rev() {
        for k in 0..dh {
            let dhk = dext[k] + dh_next[k];
            let dc = dc_next[k] + dhk * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
            da[k] = dc * s.g[k] * s.i[k] * (1.0 - s.i[k]);
            da[dh + k] = dc * s.c_prev[k] * s.f[k] * (1.0 - s.f[k]);
            da[2 * dh + k] = dc * s.i[k] * (1.0 - s.g[k] * s.g[k]);
            da[3 * dh + k] = dhk * s.tanh_c[k] * s.o[k] * (1.0 - s.o[k]);
            dc_next[k] = dc * s.f[k];
        }
        dh_next.fill(0.0);
        for (r, &d) in da.iter().enumerate() {
            g.b[r] += d;
            let row = &l.w[r * cols..(r + 1) * cols];
            let grow = &mut g.w[r * cols..(r + 1) * cols];
            for (gw, zv) in grow.iter_mut().zip(&s.z) {
                *gw += d * zv;
            }
            for (dn, wv) in dh_next.iter_mut().zip(&row[din..]) {
                *dn += d * wv;
            }
        }
    }
}

struct TanCache {
    fwd: Vec<StepCache>,
    bwd: Vec<StepCache>,
    out: TanOutput,
}

fn forward_cached(p: &TanParams, features: &[Vec<f64>], mode: TanMode) -> Result<TanCache> {
    if features.is_empty() {
        return Err(invalid("tracklet needs at least one observation"));
    }
    if let Some(x) = features.iter().find(|x| x.len() != p.input_dim()) {
        return Err(mismatch(format!(
            "temporal network expects {}-dim features, got {}",
            p.input_dim(),
            x.len()
        )));
    }
    let t_len = features.len();
    let fwd_in: Vec<&[f64]> = features.iter().map(Vec::as_slice).collect();
    let bwd_in: Vec<&[f64]> = features.iter().rev().map(Vec::as_slice).collect();
    let (hf, fwd) = lstm_run(&p.forward, &fwd_in);
    let (hb, bwd) = lstm_run(&p.backward, &bwd_in);
    let hidden: Vec<Vec<f64>> = (0..t_len)
        .map(|t| [hf[t].as_slice(), hb[t_len - 1 - t].as_slice()].concat())
        .collect();
    let logits: Vec<f64> = if mode.average {
        vec![0.0; t_len]
    } else {
        hidden
            .iter()
            .map(|h| p.theta_h.iter().zip(h).map(|(a, b)| a * b).sum())
            .collect()
    };
    let weights = softmax(&logits);
    let mut pooled = vec![0.0; hidden[0].len()];
    for (a, h) in weights.iter().zip(&hidden) {
        for (o, v) in pooled.iter_mut().zip(h) {
            *o += a * v;
        }
    }
    let logit = p.cls_b[0] + p.cls_w.iter().zip(&pooled).map(|(a, b)| a * b).sum::<f64>();
    Ok(TanCache {
        fwd,
        bwd,
        out: TanOutput {
            weights,
            similarity: sigmoid(logit),
            logit,
            hidden,
            pooled,
        },
    })
}

/// Temporal attention over the per-observation pair features of a tracklet.
pub fn tan_forward(p: &TanParams, features: &[Vec<f64>], mode: TanMode) -> Result<TanOutput> {
    Ok(forward_cached(p, features, mode)?.out)
}

/// Pair features of a tracklet against one candidate, with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackletExample {
    pub features: Vec<Vec<f64>>,
    pub same: bool,
    /// Positions holding images of another identity.
    pub foreign: Vec<usize>,
}

pub fn tan_loss(p: &TanParams, ex: &TrackletExample, mode: TanMode) -> Result<f64> {
    let out = tan_forward(p, &ex.features, mode)?;
    Ok(bce_with_logit(out.logit, ex.same))
}

pub fn tan_loss_and_grad(p: &TanParams, ex: &TrackletExample, mode: TanMode) -> Result<(f64, TanParams)> {
    let cache = forward_cached(p, &ex.features, mode)?;
    let out = &cache.out;
    let loss = bce_with_logit(out.logit, ex.same);
    if !loss.is_finite() {
        return Err(Error::NumericFailure {
            iteration: 0,
            context: "TAN loss".into(),
        });
    }
    let mut g = p.zeros_like();
    let dz = out.similarity - if ex.same { 1.0 } else { 0.0 };
    g.cls_b[0] = dz;
    let dpooled: Vec<f64> = p.cls_w.iter().map(|w| dz * w).collect();
    for (gw, h) in g.cls_w.iter_mut().zip(&out.pooled) {
        *gw = dz * h;
    }
    let t_len = out.hidden.len();
    let mut dhidden: Vec<Vec<f64>> = out
        .weights
        .iter()
        .map(|a| dpooled.iter().map(|d| a * d).collect())
        .collect();
    if !mode.average {
        let da: Vec<f64> = out
            .hidden
            .iter()
            .map(|h| h.iter().zip(&dpooled).map(|(a, b)| a * b).sum())
            .collect();
        let dot: f64 = out.weights.iter().zip(&da).map(|(a, d)| a * d).sum();
        for t in 0..t_len {
            let de = out.weights[t] * (da[t] - dot);
            for (k, gt) in g.theta_h.iter_mut().enumerate() {
                *gt += de * out.hidden[t][k];
                dhidden[t][k] += de * p.theta_h[k];
            }
        }
    }
    let dh = p.hidden_dim();
    let d_fwd: Vec<Vec<f64>> = dhidden.iter().map(|d| d[..dh].to_vec()).collect();
    let d_bwd: Vec<Vec<f64>> = dhidden.iter().rev().map(|d| d[dh..].to_vec()).collect();
    lstm_backward(&p.forward, &cache.fwd, &d_fwd, &mut g.forward);
    lstm_backward(&p.backward, &cache.bwd, &d_bwd, &mut g.backward);
    Ok((loss, g))
}
