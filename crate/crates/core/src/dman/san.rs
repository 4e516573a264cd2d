use super::params::{ConvLayer, ParamBlocks, SanParams};
use super::{bce_with_logit, cross_entropy, sigmoid, softmax};
use crate::error::{mismatch, Error, Result};
use crate::imaging::{resize, ImageBuffer};

const ZERO_FIBER: f64 = 1e-12;

/// Network input: a `[3][S][S]` RGB tensor centered at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NetInput {
    pub size: usize,
    pub data: Vec<f64>,
}

pub fn prepare_input(img: &ImageBuffer, size: usize) -> Result<NetInput> {
    let rgb = resize(&img.to_rgb(), size, size)?;
    let mut data = vec![0.0; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            for c in 0..3 {
                data[c * size * size + y * size + x] = rgb.get(x, y, c) - 0.5;
            }
        }
    }
    Ok(NetInput { size, data })
}

/// `H x W` grid of channel-normalized `C`-vectors; fiber `i` is location
/// `i = y W + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTensor {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub fibers: Vec<f64>,
}

impl EmbeddingTensor {
    pub fn n(&self) -> usize {
        self.h * self.w
    }

    pub fn fiber(&self, i: usize) -> &[f64] {
        &self.fibers[i * self.c..(i + 1) * self.c]
    }
}

fn conv_forward(x: &[f64], h: usize, w: usize, l: &ConvLayer) -> (Vec<f64>, usize, usize) {
    let (ho, wo) = ((h - 1) / 2 + 1, (w - 1) / 2 + 1);
    let mut out = vec![0.0; l.cout * ho * wo];
    for co in 0..l.cout {
        let plane = &mut out[co * ho * wo..(co + 1) * ho * wo];
        plane.fill(l.bias[co]);
        for ci in 0..l.cin {
            let src = &x[ci * h * w..(ci + 1) * h * w];
            let k = &l.weight[(co * l.cin + ci) * 9..(co * l.cin + ci + 1) * 9];
            for oy in 0..ho {
                for ky in 0..3 {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let row = &src[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for kx in 0..3 {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                acc += k[ky * 3 + kx] * row[ix as usize];
                            }
                        }
                        plane[oy * wo + ox] += acc;
                    }
                }
            }
        }
    }
    (out, ho, wo)
}

/// Accumulates weight and bias gradients into `g`; returns the input
/// gradient when `need_input` is set.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    h: usize,
    w: usize,
    l: &ConvLayer,
    dout: &[f64],
    g: &mut ConvLayer,
    need_input: bool,
) -> Option<Vec<f64>> {
    let (ho, wo) = ((h - 1) / 2 + 1, (w - 1) / 2 + 1);
    let mut dx = if need_input {
        vec![0.0; l.cin * h * w]
    } else {
        Vec::new()
    };
    for co in 0..l.cout {
        let dplane = &dout[co * ho * wo..(co + 1) * ho * wo];
        g.bias[co] += dplane.iter().sum::<f64>();
        for ci in 0..l.cin {
            let src = &x[ci * h * w..(ci + 1) * h * w];
            let base = (co * l.cin + ci) * 9;
            for oy in 0..ho {
                for ky in 0..3 {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for ox in 0..wo {
                        let d = dplane[oy * wo + ox];
                        if d == 0.0 {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let ix = ix as usize;
                            g.weight[base + ky * 3 + kx] += d * src[iy * w + ix];
                            if need_input {
                                dx[ci * h * w + iy * w + ix] += d * l.weight[base + ky * 3 + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    need_input.then_some(dx)
}

/// Forward intermediates of the backbone kept for backpropagation.
struct EmbedCache {
    /// Input of each layer with its (height, width).
    inputs: Vec<(Vec<f64>, usize, usize)>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
    norms: Vec<f64>,
    out: EmbeddingTensor,
}

fn embed_cached(p: &SanParams, input: &NetInput) -> Result<EmbedCache> {
    let cfg = p.config();
    if input.size != cfg.input_size || input.data.len() != 3 * input.size * input.size {
        return Err(mismatch(format!(
            "network expects {0}x{0} inputs, got {1}x{1}",
            cfg.input_size, input.size
        )));
    }
    let mut cur = input.data.clone();
    let (mut h, mut w) = (input.size, input.size);
    let mut inputs = Vec::with_capacity(p.conv.len());
    let mut pre = Vec::with_capacity(p.conv.len());
    let last = p.conv.len() - 1;
    for (li, l) in p.conv.iter().enumerate() {
        let (mut out, ho, wo) = conv_forward(&cur, h, w, l);
        inputs.push((std::mem::take(&mut cur), h, w));
        pre.push(out.clone());
        if li < last {
            for v in out.iter_mut() {
                *v = v.max(0.0);
            }
        }
        cur = out;
        h = ho;
        w = wo;
    }
    let c = cfg.embed_dim();
    let n = h * w;
    let mut fibers = vec![0.0; n * c];
    let mut norms = vec![0.0; n];
    for i in 0..n {
        let norm = (0..c).map(|k| cur[k * n + i].powi(2)).sum::<f64>().sqrt();
        norms[i] = norm;
        if norm >= ZERO_FIBER {
            for k in 0..c {
                fibers[i * c + k] = cur[k * n + i] / norm;
            }
        }
    }
    Ok(EmbedCache {
        inputs,
        pre,
        norms,
        out: EmbeddingTensor { h, w, c, fibers },
    })
}

fn embed_backward(p: &SanParams, cache: &EmbedCache, dfib: &[f64], g: &mut SanParams) {
    let e = &cache.out;
    let (n, c) = (e.n(), e.c);
    let mut dcur = vec![0.0; n * c];
    for i in 0..n {
        if cache.norms[i] < ZERO_FIBER {
            continue;
        }
        let x = e.fiber(i);
        let d = &dfib[i * c..(i + 1) * c];
        let dot: f64 = x.iter().zip(d).map(|(a, b)| a * b).sum();
        for k in 0..c {
            dcur[k * n + i] = (d[k] - x[k] * dot) / cache.norms[i];
        }
    }
    let last = p.conv.len() - 1;
    for li in (0..p.conv.len()).rev() {
        if li < last {
            for (d, &z) in dcur.iter_mut().zip(&cache.pre[li]) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let (x, h, w) = &cache.inputs[li];
        match conv_backward(x, *h, *w, &p.conv[li], &dcur, &mut g.conv[li], li > 0) {
            Some(dx) => dcur = dx,
            None => break,
        }
    }
}

/// Backbone features with every spatial fiber scaled to unit length
/// (all-zero fibers stay zero).
pub fn embed(p: &SanParams, input: &NetInput) -> Result<EmbeddingTensor> {
    Ok(embed_cached(p, input)?.out)
}

/// `S[i][j] = x_i^a . x_j^b`, row-major `N x N`.
pub fn similarity_matrix(a: &EmbeddingTensor, b: &EmbeddingTensor) -> Result<Vec<f64>> {
    if a.n() != b.n() || a.c != b.c {
        return Err(mismatch("embedding shapes differ"));
    }
    let n = a.n();
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        let xa = a.fiber(i);
        for j in 0..n {
            s[i * n + j] = xa.iter().zip(b.fiber(j)).map(|(u, v)| u * v).sum();
        }
    }
    Ok(s)
}

/// Softmax over `theta . s_i` for each row `s_i` of the `N x N` matrix.
pub fn spatial_attention(s: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
    let n = theta.len();
    if s.len() != n * n {
        return Err(mismatch(format!(
            "similarity has {} entries, expected {n}x{n}",
            s.len()
        )));
    }
    let logits: Vec<f64> = (0..n)
        .map(|i| s[i * n..(i + 1) * n].iter().zip(theta).map(|(a, b)| a * b).sum())
        .collect();
    Ok(softmax(&logits))
}

/// `sum_i a_i x_i`.
pub fn masked_pool(x: &EmbeddingTensor, attention: &[f64]) -> Result<Vec<f64>> {
    if attention.len() != x.n() {
        return Err(mismatch("attention map and embedding sizes differ"));
    }
    let mut out = vec![0.0; x.c];
    for (i, &a) in attention.iter().enumerate() {
        for (o, v) in out.iter_mut().zip(x.fiber(i)) {
            *o += a * v;
        }
    }
    Ok(out)
}

fn transpose(s: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = s[i * n + j];
        }
    }
    t
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SanMode {
    /// Replace both attention maps by the uniform map.
    pub uniform_attention: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SanOutput {
    pub combined: Vec<f64>,
    pub p_verify: f64,
    pub verify_logit: f64,
    /// Identity logits of each image; empty without an identification head.
    pub id_logits_a: Vec<f64>,
    pub id_logits_b: Vec<f64>,
    pub attention_a: Vec<f64>,
    pub attention_b: Vec<f64>,
    pub pooled_a: Vec<f64>,
    pub pooled_b: Vec<f64>,
    pub similarity: Vec<f64>,
    /// Pre-activation of the combine layer.
    hidden: Vec<f64>,
}

pub(crate) fn forward_embedded(
    p: &SanParams,
    a: &EmbeddingTensor,
    b: &EmbeddingTensor,
    mode: SanMode,
) -> Result<SanOutput> {
    let n = a.n();
    if p.theta_s.len() != n {
        return Err(mismatch("embedding grid does not match the attention vector"));
    }
    let s = similarity_matrix(a, b)?;
    let (attention_a, attention_b) = if mode.uniform_attention {
        (vec![1.0 / n as f64; n], vec![1.0 / n as f64; n])
    } else {
        (
            spatial_attention(&s, &p.theta_s)?,
            spatial_attention(&transpose(&s, n), &p.theta_s)?,
        )
    };
    let pooled_a = masked_pool(a, &attention_a)?;
    let pooled_b = masked_pool(b, &attention_b)?;
    let c = a.c;
    let dc = p.combine_b.len();
    let mut hidden = p.combine_b.clone();
    for (r, hv) in hidden.iter_mut().enumerate() {
        let row = &p.combine_w[r * 2 * c..(r + 1) * 2 * c];
        let (wa, wb) = row.split_at(c);
        *hv += wa.iter().zip(&pooled_a).map(|(x, y)| x * y).sum::<f64>()
            + wb.iter().zip(&pooled_b).map(|(x, y)| x * y).sum::<f64>();
    }
    let combined: Vec<f64> = hidden.iter().map(|v| v.max(0.0)).collect();
    debug_assert_eq!(combined.len(), dc);
    let verify_logit = p.verify_b[0] + p.verify_w.iter().zip(&combined).map(|(x, y)| x * y).sum::<f64>();
    let ids = p.ident_b.len();
    let id_logits = |pooled: &[f64]| -> Vec<f64> {
        (0..ids)
            .map(|k| {
                p.ident_b[k]
                    + p.ident_w[k * c..(k + 1) * c]
                        .iter()
                        .zip(pooled)
                        .map(|(x, y)| x * y)
                        .sum::<f64>()
            })
            .collect()
    };
    Ok(SanOutput {
        p_verify: sigmoid(verify_logit),
        verify_logit,
        id_logits_a: id_logits(&pooled_a),
        id_logits_b: id_logits(&pooled_b),
        combined,
        attention_a,
        attention_b,
        pooled_a,
        pooled_b,
        similarity: s,
        hidden,
    })
}

pub fn san_forward(p: &SanParams, a: &NetInput, b: &NetInput, mode: SanMode) -> Result<SanOutput> {
    forward_embedded(p, &embed(p, a)?, &embed(p, b)?, mode)
}

/// A labelled image pair: identities index the identification head.
#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub a: NetInput,
    pub b: NetInput,
    pub id_a: usize,
    pub id_b: usize,
}

impl PairExample {
    pub fn same(&self) -> bool {
        self.id_a == self.id_b
    }
}

fn pair_loss(p: &SanParams, out: &SanOutput, ex: &PairExample) -> Result<f64> {
    let mut loss = bce_with_logit(out.verify_logit, ex.same());
    if !p.ident_b.is_empty() {
        if ex.id_a >= p.ident_b.len() || ex.id_b >= p.ident_b.len() {
            return Err(mismatch("identity label outside the identification head"));
        }
        loss += cross_entropy(&out.id_logits_a, ex.id_a) + cross_entropy(&out.id_logits_b, ex.id_b);
    }
    Ok(loss)
}

/// Identification (both images) plus verification loss of one pair.
pub fn san_loss(p: &SanParams, ex: &PairExample, mode: SanMode) -> Result<f64> {
    let out = san_forward(p, &ex.a, &ex.b, mode)?;
    pair_loss(p, &out, ex)
}

/// Loss and gradient with respect to every SAN parameter block.
pub fn san_loss_and_grad(p: &SanParams, ex: &PairExample, mode: SanMode) -> Result<(f64, SanParams)> {
    let ca = embed_cached(p, &ex.a)?;
    let cb = embed_cached(p, &ex.b)?;
    let (ea, eb) = (&ca.out, &cb.out);
    let out = forward_embedded(p, ea, eb, mode)?;
    let loss = pair_loss(p, &out, ex)?;
    if !loss.is_finite() {
        return Err(Error::NumericFailure {
            iteration: 0,
            context: "SAN loss".into(),
        });
    }
    let mut g = p.zeros_like();
    let (n, c) = (ea.n(), ea.c);
    let target = if ex.same() { 1.0 } else { 0.0 };
    let dz = out.p_verify - target;
    g.verify_b[0] += dz;
    let mut dhidden = vec![0.0; out.combined.len()];
    for (r, dh) in dhidden.iter_mut().enumerate() {
        g.verify_w[r] += dz * out.combined[r];
        if out.hidden[r] > 0.0 {
            *dh = dz * p.verify_w[r];
        }
    }
    let mut dpa = vec![0.0; c];
    let mut dpb = vec![0.0; c];
    for (r, &dh) in dhidden.iter().enumerate() {
        if dh == 0.0 {
            continue;
        }
        g.combine_b[r] += dh;
        let row = &p.combine_w[r * 2 * c..(r + 1) * 2 * c];
        let grow = &mut g.combine_w[r * 2 * c..(r + 1) * 2 * c];
        for k in 0..c {
            grow[k] += dh * out.pooled_a[k];
            grow[c + k] += dh * out.pooled_b[k];
            dpa[k] += dh * row[k];
            dpb[k] += dh * row[c + k];
        }
    }
    if !p.ident_b.is_empty() {
        for (logits, label, pooled, dp) in [
            (&out.id_logits_a, ex.id_a, &out.pooled_a, &mut dpa),
            (&out.id_logits_b, ex.id_b, &out.pooled_b, &mut dpb),
        ] {
            let mut q = softmax(logits);
            q[label] -= 1.0;
            for (k, &qk) in q.iter().enumerate() {
                g.ident_b[k] += qk;
                for j in 0..c {
                    g.ident_w[k * c + j] += qk * pooled[j];
                    dp[j] += qk * p.ident_w[k * c + j];
                }
            }
        }
    }
    let mut dxa = vec![0.0; n * c];
    let mut dxb = vec![0.0; n * c];
    let mut datt_a = vec![0.0; n];
    let mut datt_b = vec![0.0; n];
    for i in 0..n {
        let (fa, fb) = (ea.fiber(i), eb.fiber(i));
        datt_a[i] = fa.iter().zip(&dpa).map(|(x, y)| x * y).sum();
        datt_b[i] = fb.iter().zip(&dpb).map(|(x, y)| x * y).sum();
        for k in 0..c {
            dxa[i * c + k] += out.attention_a[i] * dpa[k];
            dxb[i * c + k] += out.attention_b[i] * dpb[k];
        }
    }
    if !mode.uniform_attention {
        let softmax_back = |att: &[f64], datt: &[f64]| -> Vec<f64> {
            let dot: f64 = att.iter().zip(datt).map(|(a, d)| a * d).sum();
            att.iter().zip(datt).map(|(a, d)| a * (d - dot)).collect()
        };
        let dla = softmax_back(&out.attention_a, &datt_a);
        let dlb = softmax_back(&out.attention_b, &datt_b);
        let s = &out.similarity;
        let mut ds = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let sij = s[i * n + j];
                // row logits of image a: la_i = sum_j theta_j S_ij
                g.theta_s[j] += dla[i] * sij;
                // column logits of image b: lb_j = sum_i theta_i S_ij
                g.theta_s[i] += dlb[j] * sij;
                ds[i * n + j] = dla[i] * p.theta_s[j] + p.theta_s[i] * dlb[j];
            }
        }
        for i in 0..n {
            for j in 0..n {
                let d = ds[i * n + j];
                if d == 0.0 {
                    continue;
                }
                let (fa, fb) = (ea.fiber(i), eb.fiber(j));
                for k in 0..c {
                    dxa[i * c + k] += d * fb[k];
                    dxb[j * c + k] += d * fa[k];
                }
            }
        }
    }
    embed_backward(p, &ca, &dxa, &mut g);
    embed_backward(p, &cb, &dxb, &mut g);
    Ok((loss, g))
}
