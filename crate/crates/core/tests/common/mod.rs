//! Dense reference implementations shared by the integration tests.
#![allow(dead_code)]

use dualtrack::filter::{
    FourierFilter, GridFft, LabelFunction, ModulatingFactor, NormalSystem, RegularizationWindow, SampleMemory,
};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::collections::BTreeMap;

use dualtrack::imaging::{iou, BoundingBox};
use dualtrack::metrics::ClearMot;
use dualtrack::motio::FrameRecord;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub fft: GridFft,
    pub memory: SampleMemory,
    pub label: LabelFunction,
    pub reg: RegularizationWindow,
}

impl Instance {
    pub fn system(&self, cost_sensitive: bool) -> NormalSystem<'_> {
        NormalSystem::new(&self.fft, &self.memory, &self.label, &self.reg, cost_sensitive).unwrap()
    }
}

/// Random small system; every sample gets a random non-degenerate
/// modulating factor.
pub fn random_instance(rng: &mut impl Rng, rows: usize, cols: usize, d: usize, m: usize) -> Instance {
    let fft = GridFft::new(rows, cols);
    let n = rows * cols;
    let label = LabelFunction::gaussian(&fft, rng.random_range(0.5..1.5)).unwrap();
    let reg = RegularizationWindow::quadratic(rows, cols, 1e-3, 10.0).unwrap();
    let mut memory = SampleMemory::new(rows, cols, d, m, 0.3).unwrap();
    for _ in 0..m {
        let hat = (0..d)
            .map(|_| {
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                fft.forward_real(&x)
            })
            .collect();
        memory.push(hat).unwrap();
    }
    let weights: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
    memory.set_weights(&weights).unwrap();
    for s in memory.samples_mut() {
        let residual: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        s.factor = Some(ModulatingFactor::from_residual(&residual));
    }
    Instance {
        fft,
        memory,
        label,
        reg,
    }
}

pub fn dft_matrix(rows: usize, cols: usize) -> DMatrix<Complex64> {
    let n = rows * cols;
    DMatrix::from_fn(n, n, |k, t| {
        let (kr, kc) = (k / cols, k % cols);
        let (r, c) = (t / cols, t % cols);
        let phase = -2.0 * std::f64::consts::PI * ((kr * r) as f64 / rows as f64 + (kc * c) as f64 / cols as f64);
        Complex64::from_polar(1.0, phase)
    })
}

/// Explicit `(QA)^H G (QA) + W^H W` and `(QA)^H G Q y` built from dense
/// DFT, diagonal and block matrices.
pub fn dense_system(sys: &NormalSystem<'_>) -> (DMatrix<Complex64>, DVector<Complex64>) {
    let (rows, cols) = (sys.fft.rows(), sys.fft.cols());
    let n = rows * cols;
    let d = sys.memory.num_channels();
    let f = dft_matrix(rows, cols);
    let finv = f.adjoint() / Complex64::new(n as f64, 0.0);
    let spatial_op = |weights: &[f64]| {
        let diag = DMatrix::from_diagonal(&DVector::from_iterator(
            n,
            weights.iter().map(|&v| Complex64::new(v, 0.0)),
        ));
        &f * diag * &finv
    };
    let mut op = DMatrix::<Complex64>::zeros(d * n, d * n);
    let mut rhs = DVector::<Complex64>::zeros(d * n);
    let y_hat = DVector::from_column_slice(sys.label.hat());
    for s in sys.memory.samples() {
        let mut a = DMatrix::<Complex64>::zeros(n, d * n);
        for (ch, xd) in s.hat.iter().enumerate() {
            for t in 0..n {
                a[(t, ch * n + t)] = xd[t];
            }
        }
        let q = match (&s.factor, sys.cost_sensitive) {
            (Some(q), true) => spatial_op(q.values()),
            _ => DMatrix::identity(n, n),
        };
        let qa = &q * &a;
        let alpha = Complex64::new(s.weight, 0.0);
        op += qa.adjoint() * &qa * alpha;
        rhs += qa.adjoint() * (&q * &y_hat) * alpha;
    }
    let w = spatial_op(sys.reg.values());
    let ww = w.adjoint() * &w;
    for ch in 0..d {
        let mut block = op.view_mut((ch * n, ch * n), (n, n));
        block += &ww;
    }
    (op, rhs)
}

pub fn flatten(f: &FourierFilter) -> DVector<Complex64> {
    DVector::from_iterator(
        f.channels().iter().map(Vec::len).sum(),
        f.channels().iter().flatten().copied(),
    )
}

pub fn unflatten(v: &DVector<Complex64>, rows: usize, cols: usize, d: usize) -> FourierFilter {
    let n = rows * cols;
    let channels = (0..d).map(|ch| v.as_slice()[ch * n..(ch + 1) * n].to_vec()).collect();
    FourierFilter::from_channels(rows, cols, channels).unwrap()
}

pub fn dense_solve(sys: &NormalSystem<'_>) -> FourierFilter {
    let (op, rhs) = dense_system(sys);
    let sol = op.lu().solve(&rhs).expect("dense normal system is singular");
    unflatten(&sol, sys.fft.rows(), sys.fft.cols(), sys.memory.num_channels())
}

pub fn relative_error(a: &FourierFilter, b: &FourierFilter) -> f64 {
    let mut diff = a.clone();
    diff.axpy(Complex64::new(-1.0, 0.0), b);
    diff.norm_sqr().sqrt() / b.norm_sqr().sqrt().max(1e-300)
}

pub fn random_filter(rng: &mut impl Rng, rows: usize, cols: usize, d: usize) -> FourierFilter {
    let channels = (0..d)
        .map(|_| {
            (0..rows * cols)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect()
        })
        .collect();
    FourierFilter::from_channels(rows, cols, channels).unwrap()
}

/// Largest block-wise relative error between `analytic` and central
/// differences of `loss`, with the block name where it occurs.
pub fn max_block_error<P: dualtrack::dman::ParamBlocks>(
    params: &P,
    analytic: &P,
    loss: impl Fn(&P) -> f64,
    h: f64,
) -> (f64, String) {
    let names: Vec<String> = params.blocks().into_iter().map(|b| b.name).collect();
    let grads: Vec<Vec<f64>> = analytic.blocks().into_iter().map(|b| b.data.to_vec()).collect();
    let mut worst = (0.0, String::new());
    for (bi, name) in names.iter().enumerate() {
        let len = grads[bi].len();
        if len == 0 {
            continue;
        }
        let numeric: Vec<f64> = (0..len)
            .map(|k| {
                let mut plus = params.clone();
                plus.blocks_mut()[bi][k] += h;
                let mut minus = params.clone();
                minus.blocks_mut()[bi][k] -= h;
                (loss(&plus) - loss(&minus)) / (2.0 * h)
            })
            .collect();
        let diff: f64 = numeric
            .iter()
            .zip(&grads[bi])
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let na: f64 = grads[bi].iter().map(|v| v * v).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel = if na.max(nn) < 1e-10 { diff } else { diff / na.max(nn) };
        if rel >= worst.0 {
            worst = (rel, name.clone());
        }
    }
    worst
}

/// Toy network sizes: 32x32 input, three stride-2 layers, 4x4x8 embedding.
pub fn toy_dman_config(num_identities: usize) -> dualtrack::dman::DmanConfig {
    dualtrack::dman::DmanConfig {
        input_size: 32,
        channels: vec![4, 6, 8],
        combined_dim: 6,
        hidden_dim: 8,
        num_identities,
    }
}

pub fn random_input(rng: &mut impl Rng, size: usize) -> dualtrack::dman::NetInput {
    dualtrack::dman::NetInput {
        size,
        data: (0..3 * size * size).map(|_| rng.random_range(-0.5..0.5)).collect(),
    }
}

pub fn rec(frame: u32, id: i64, x: f64, y: f64) -> FrameRecord {
    FrameRecord::track(frame, id, BoundingBox::new(x, y, 10.0, 10.0).unwrap())
}

/// Enumerates every partial matching of gt rows to hypotheses with IoU at
/// or above the threshold; keeps the largest, then the cheapest.
pub fn brute_force(g: &[FrameRecord], h: &[FrameRecord], thr: f64) -> Vec<(usize, usize)> {
    fn rec_search(
        i: usize,
        g: &[FrameRecord],
        h: &[FrameRecord],
        thr: f64,
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        best: &mut (usize, f64, Vec<(usize, usize)>),
    ) {
        if i == g.len() {
            let cost: f64 = cur.iter().map(|&(a, b)| 1.0 - iou(&g[a].bbox, &h[b].bbox)).sum();
            if cur.len() > best.0 || (cur.len() == best.0 && cost < best.1 - 1e-12) {
                *best = (cur.len(), cost, cur.clone());
            }
            return;
        }
        rec_search(i + 1, g, h, thr, used, cur, best);
        for j in 0..h.len() {
            if !used[j] && iou(&g[i].bbox, &h[j].bbox) >= thr {
                used[j] = true;
                cur.push((i, j));
                rec_search(i + 1, g, h, thr, used, cur, best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (0, f64::INFINITY, Vec::new());
    rec_search(0, g, h, thr, &mut vec![false; h.len()], &mut Vec::new(), &mut best);
    best.2
}

/// Independent CLEAR-MOT loop around the brute-force matcher.
pub fn oracle_clear_mot(gt: &[FrameRecord], res: &[FrameRecord], thr: f64) -> ClearMot {
    let last_frame = gt.iter().chain(res).map(|r| r.frame).max().unwrap_or(0);
    let mut out = ClearMot::default();
    let mut prev: BTreeMap<i64, i64> = BTreeMap::new();
    let mut last: BTreeMap<i64, i64> = BTreeMap::new();
    let mut tracked_before: BTreeMap<i64, bool> = BTreeMap::new();
    for f in 1..=last_frame {
        let g: Vec<FrameRecord> = gt.iter().filter(|r| r.frame == f).copied().collect();
        let h: Vec<FrameRecord> = res.iter().filter(|r| r.frame == f).copied().collect();
        out.gt_total += g.len();
        let mut pairs = Vec::new();
        for (i, gr) in g.iter().enumerate() {
            if let Some(&hid) = prev.get(&gr.id) {
                if let Some(j) = h.iter().position(|r| r.id == hid) {
                    if iou(&gr.bbox, &h[j].bbox) >= thr {
                        pairs.push((i, j));
                    }
                }
            }
        }
        let gi: Vec<usize> = (0..g.len()).filter(|i| !pairs.iter().any(|p| p.0 == *i)).collect();
        let hj: Vec<usize> = (0..h.len()).filter(|j| !pairs.iter().any(|p| p.1 == *j)).collect();
        let gs: Vec<FrameRecord> = gi.iter().map(|&i| g[i]).collect();
        let hs: Vec<FrameRecord> = hj.iter().map(|&j| h[j]).collect();
        pairs.extend(brute_force(&gs, &hs, thr).into_iter().map(|(a, b)| (gi[a], hj[b])));
        prev.clear();
        for &(i, j) in &pairs {
            let (gid, hid) = (g[i].id, h[j].id);
            out.matches += 1;
            out.iou_sum += iou(&g[i].bbox, &h[j].bbox);
            if let Some(&p) = last.get(&gid) {
                if p != hid {
                    out.ids += 1;
                }
                if tracked_before.get(&gid) == Some(&false) {
                    out.frag += 1;
                }
            }
            last.insert(gid, hid);
            prev.insert(gid, hid);
        }
        for (i, gr) in g.iter().enumerate() {
            let hit = pairs.iter().any(|p| p.0 == i);
            let c = out.coverage.entry(gr.id).or_insert((0, 0));
            c.1 += 1;
            c.0 += usize::from(hit);
            tracked_before.insert(gr.id, hit);
        }
        out.fn_ += g.len() - pairs.len();
        out.fp += h.len() - pairs.len();
    }
    out
}

pub fn random_scene(rng: &mut ChaCha8Rng, frames: u32) -> (Vec<FrameRecord>, Vec<FrameRecord>) {
    let n_gt = rng.random_range(1..=4);
    let mut gt = Vec::new();
    let mut res = Vec::new();
    for f in 1..=frames {
        for id in 1..=n_gt {
            if rng.random::<f64>() < 0.9 {
                // clustered positions so that matches compete
                let (x, y) = (id as f64 * 6.0 + f as f64, 5.0 + rng.random_range(-1.0..1.0));
                gt.push(rec(f, id, x, y));
            }
        }
        let n_h = rng.random_range(0..=4);
        for k in 0..n_h {
            let id = 100 + rng.random_range(1..=n_gt + 1);
            if res.iter().any(|r: &FrameRecord| r.frame == f && r.id == id) {
                continue;
            }
            let base = (k as f64 + 1.0) * 6.0 + f as f64;
            res.push(rec(
                f,
                id,
                base + rng.random_range(-3.0..3.0),
                5.0 + rng.random_range(-3.0..3.0),
            ));
        }
    }
    (gt, res)
}
