//! Cost-sensitive discriminative correlation filter.
//!
//! The filter is learned on a discrete periodic grid. For `M` stored samples
//! with weights `alpha_j`, label `y`, per-sample modulating factors `q_j` and
//! regularization window `w`, the objective is
//!
//! ```text
//! E(f) = sum_j alpha_j || q_j (S_f{x_j} - y) ||^2 + sum_d || w f^d ||^2
//! ```
//!
//! with `S_f{x} = sum_d x^d (*) f^d` (circular convolution). In the Fourier
//! domain the minimizer solves
//!
//! ```text
//! ((QA)^H G (QA) + W^H W) f = (QA)^H G Q y
//! ```
//!
//! where `Q` and `W` are spatial multiplications by `q` and `w` seen through
//! the DFT. Both are applied matrix-free by transform round-trips, and the
//! system is solved with conjugate gradients. With `q == 1` this reduces to
//! the plain correlation-filter normal equations.

mod fft;
mod solver;

pub use fft::GridFft;
pub use solver::{solve_filter, solve_filter_traced, CgConfig, CgOutcome};

use num_complex::Complex64;

use crate::error::{invalid, mismatch, Result};
use crate::features::FeatureStack;

pub type Spectrum = Vec<Complex64>;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Residual magnitudes below this make the modulating factor uniform.
pub const DEGENERATE_RESIDUAL: f64 = 1e-12;

/// Per-channel Fourier coefficients of a real-valued multi-channel filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierFilter {
    rows: usize,
    cols: usize,
    channels: Vec<Spectrum>,
}

impl FourierFilter {
    pub fn zeros(rows: usize, cols: usize, num_channels: usize) -> Self {
        Self {
            rows,
            cols,
            channels: vec![vec![ZERO; rows * cols]; num_channels],
        }
    }

    pub fn from_channels(rows: usize, cols: usize, channels: Vec<Spectrum>) -> Result<Self> {
        if channels.iter().any(|c| c.len() != rows * cols) {
            return Err(mismatch(format!("filter channel length vs {rows}x{cols} grid")));
        }
        Ok(Self { rows, cols, channels })
    }

    /// Transforms real spatial channels into a filter.
    pub fn from_spatial(fft: &GridFft, spatial: &[Vec<f64>]) -> Result<Self> {
        let channels = spatial
            .iter()
            .map(|c| {
                if c.len() != fft.len() {
                    return Err(mismatch("spatial filter channel length"));
                }
                Ok(fft.forward_real(c))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_channels(fft.rows(), fft.cols(), channels)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, d: usize) -> &[Complex64] {
        &self.channels[d]
    }

    pub fn channels(&self) -> &[Spectrum] {
        &self.channels
    }

    pub fn channels_mut(&mut self) -> &mut [Spectrum] {
        &mut self.channels
    }

    pub fn same_shape(&self, other: &FourierFilter) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.channels.len() == other.channels.len()
    }

    /// `<self, other> = sum conj(self) * other`.
    pub fn inner(&self, other: &FourierFilter) -> Complex64 {
        self.channels
            .iter()
            .flatten()
            .zip(other.channels.iter().flatten())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.channels.iter().flatten().map(|c| c.norm_sqr()).sum()
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: Complex64, other: &FourierFilter) {
        for (a, b) in self.channels.iter_mut().flatten().zip(other.channels.iter().flatten()) {
            *a += scale * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.channels
            .iter()
            .flatten()
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Spatial filter channels (real parts of the inverse transform).
    pub fn spatial(&self, fft: &GridFft) -> Vec<Vec<f64>> {
        self.channels.iter().map(|c| fft.inverse_real(c)).collect()
    }

    /// Largest imaginary magnitude of the spatial filter; zero for an exactly
    /// conjugate-symmetric spectrum.
    pub fn max_spatial_imag(&self, fft: &GridFft) -> f64 {
        self.channels
            .iter()
            .map(|c| {
                let mut buf = c.clone();
                fft.inverse(&mut buf);
                buf.iter().map(|v| v.im.abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

/// Real grid of correlation responses.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ConfidenceMap {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    /// Returns `(row, col, value)` of the maximum; first occurrence wins.
    pub fn peak(&self) -> (usize, usize, f64) {
        let (idx, v) =
            self.values.iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                },
            );
        (idx / self.cols, idx % self.cols, v)
    }

    pub fn max(&self) -> f64 {
        self.peak().2
    }

    /// Plain-text grid, one row per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows {
            let line: Vec<String> = (0..self.cols).map(|c| format!("{:.6}", self.at(r, c))).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Desired response: a periodic Gaussian peaked at the grid center.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelFunction {
    rows: usize,
    cols: usize,
    spatial: Vec<f64>,
    hat: Spectrum,
}

impl LabelFunction {
    pub fn gaussian(fft: &GridFft, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(invalid(format!("label sigma must be positive, got {sigma}")));
        }
        let (rows, cols) = (fft.rows(), fft.cols());
        let (r0, c0) = (rows / 2, cols / 2);
        let periodic = |a: usize, b: usize, n: usize| {
            let d = a.abs_diff(b);
            d.min(n - d) as f64
        };
        let mut spatial = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let dr = periodic(r, r0, rows);
                let dc = periodic(c, c0, cols);
                spatial.push((-(dr * dr + dc * dc) / (2.0 * sigma * sigma)).exp());
            }
        }
        Self::from_spatial(fft, spatial)
    }

    pub fn from_spatial(fft: &GridFft, spatial: Vec<f64>) -> Result<Self> {
        if spatial.len() != fft.len() {
            return Err(mismatch("label length vs grid"));
        }
        let hat = fft.forward_real(&spatial);
        Ok(Self {
            rows: fft.rows(),
            cols: fft.cols(),
            spatial,
            hat,
        })
    }

    /// Gaussian width for a target covering `target_cells` grid cells.
    pub fn sigma_for_area(target_cells: f64) -> f64 {
        target_cells.max(1e-12).sqrt() / 10.0
    }

    pub fn spatial(&self) -> &[f64] {
        &self.spatial
    }

    pub fn hat(&self) -> &[Complex64] {
        &self.hat
    }

    pub fn center(&self) -> (usize, usize) {
        (self.rows / 2, self.cols / 2)
    }
}

/// Spatial regularization weights; large away from the target center.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizationWindow {
    values: Vec<f64>,
}

impl RegularizationWindow {
    /// `w(t) = w_min + eta * (normalized distance from center)^2`, distance
    /// measured per axis relative to half the grid extent.
    pub fn quadratic(rows: usize, cols: usize, w_min: f64, eta: f64) -> Result<Self> {
        if !(w_min > 0.0) || eta < 0.0 {
            return Err(invalid(format!(
                "regularization needs w_min > 0 and eta >= 0 (got {w_min}, {eta})"
            )));
        }
        let (r0, c0) = ((rows / 2) as f64, (cols / 2) as f64);
        let hr = (rows as f64 / 2.0).max(1.0);
        let hc = (cols as f64 / 2.0).max(1.0);
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let dr = (r as f64 - r0) / hr;
                let dc = (c as f64 - c0) / hc;
                values.push(w_min + eta * (dr * dr + dc * dc));
            }
        }
        Ok(Self { values })
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(invalid("regularization weights must be positive and finite"));
        }
        Ok(Self { values })
    }

    /// `w == 0` everywhere. The normal system is then only positive
    /// semi-definite; meant for reduction checks.
    pub fn disabled(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Per-location loss weights `q(t) = |r(t) / max|r||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulatingFactor {
    values: Vec<f64>,
}

impl ModulatingFactor {
    pub fn uniform(len: usize) -> Self {
        Self { values: vec![1.0; len] }
    }

    /// Builds the factor from a residual grid; uniform when the residual is
    /// (numerically) zero everywhere.
    pub fn from_residual(residual: &[f64]) -> Self {
        let max = residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        if !(max >= DEGENERATE_RESIDUAL) {
            return Self::uniform(residual.len());
        }
        Self {
            values: residual
                .iter()
                .map(|r| {
                    let n = r / max;
                    (n * n).min(1.0)
                })
                .collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// One stored training sample: the transformed feature channels.
#[derive(Debug, Clone)]
pub struct Sample {
    pub hat: Vec<Spectrum>,
    pub weight: f64,
    pub factor: Option<ModulatingFactor>,
}

/// Bounded set of weighted training samples.
#[derive(Debug, Clone)]
pub struct SampleMemory {
    rows: usize,
    cols: usize,
    num_channels: usize,
    capacity: usize,
    learning_rate: f64,
    samples: Vec<Sample>,
}

impl SampleMemory {
    pub fn new(rows: usize, cols: usize, num_channels: usize, capacity: usize, learning_rate: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(invalid("sample memory capacity must be positive"));
        }
        if !(learning_rate > 0.0 && learning_rate <= 1.0) {
            return Err(invalid(format!(
                "sample learning rate must be in (0, 1], got {learning_rate}"
            )));
        }
        Ok(Self {
            rows,
            cols,
            num_channels,
            capacity,
            learning_rate,
            samples: Vec::with_capacity(capacity),
        })
    }

    /// Inserts a sample with weight `learning_rate`, decaying the others by
    /// `1 - learning_rate`. When full, the lowest-weight sample is evicted
    /// first (oldest among ties). Returns the evicted slot, if any.
    pub fn push(&mut self, hat: Vec<Spectrum>) -> Result<Option<usize>> {
        if hat.len() != self.num_channels || hat.iter().any(|c| c.len() != self.rows * self.cols) {
            return Err(mismatch("sample shape vs memory"));
        }
        let mut evicted = None;
        if self.samples.len() == self.capacity {
            let idx = self
                .samples
                .iter()
                .enumerate()
                .fold(
                    (0, f64::INFINITY),
                    |(bi, bw), (i, s)| {
                        if s.weight < bw {
                            (i, s.weight)
                        } else {
                            (bi, bw)
                        }
                    },
                )
                .0;
            self.samples.remove(idx);
            evicted = Some(idx);
        }
        let weight = if self.samples.is_empty() {
            1.0
        } else {
            for s in &mut self.samples {
                s.weight *= 1.0 - self.learning_rate;
            }
            self.learning_rate
        };
        self.samples.push(Sample {
            hat,
            weight,
            factor: None,
        });
        let total: f64 = self.samples.iter().map(|s| s.weight).sum();
        for s in &mut self.samples {
            s.weight /= total;
        }
        Ok(evicted)
    }

    pub fn push_features(&mut self, fft: &GridFft, x: &FeatureStack) -> Result<Option<usize>> {
        self.push(transform_features(fft, x)?)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [Sample] {
        &mut self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Overrides the sample weights (renormalized to sum to one).
    pub fn set_weights(&mut self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.samples.len() || weights.iter().any(|&a| !(a >= 0.0)) {
            return Err(invalid("one nonnegative weight per sample required"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(invalid("sample weights sum to zero"));
        }
        for (s, w) in self.samples.iter_mut().zip(weights) {
            s.weight = w / total;
        }
        Ok(())
    }

    /// Recomputes every sample's modulating factor against `prev` (or makes
    /// them uniform when no previous filter exists).
    pub fn refresh_factors(
        &mut self,
        fft: &GridFft,
        prev: Option<&FourierFilter>,
        label: &LabelFunction,
    ) -> Result<()> {
        for s in &mut self.samples {
            s.factor = Some(modulating_factor(fft, prev, &s.hat, label)?);
        }
        Ok(())
    }
}

pub fn transform_features(fft: &GridFft, x: &FeatureStack) -> Result<Vec<Spectrum>> {
    if x.rows() != fft.rows() || x.cols() != fft.cols() {
        return Err(mismatch(format!(
            "features {}x{} vs grid {}x{}",
            x.rows(),
            x.cols(),
            fft.rows(),
            fft.cols()
        )));
    }
    Ok(x.channels().iter().map(|c| fft.forward_real(c)).collect())
}

fn check_filter_shape(f: &FourierFilter, fft: &GridFft, channels: usize) -> Result<()> {
    if f.rows != fft.rows() || f.cols != fft.cols() || f.channels.len() != channels {
        return Err(mismatch(format!(
            "filter {}x{}x{} vs grid {}x{} with {channels} channels",
            f.rows,
            f.cols,
            f.channels.len(),
            fft.rows(),
            fft.cols()
        )));
    }
    Ok(())
}

/// `sum_d x_hat^d * f_hat^d`, still in the Fourier domain.
fn response_hat(f: &FourierFilter, x_hat: &[Spectrum]) -> Spectrum {
    let n = f.rows * f.cols;
    let mut acc = vec![ZERO; n];
    for (xd, fd) in x_hat.iter().zip(&f.channels) {
        for ((a, x), w) in acc.iter_mut().zip(xd).zip(fd) {
            *a += x * w;
        }
    }
    acc
}

/// Confidence map `S_f{x}` for already transformed features.
pub fn apply_filter_hat(fft: &GridFft, f: &FourierFilter, x_hat: &[Spectrum]) -> Result<ConfidenceMap> {
    check_filter_shape(f, fft, x_hat.len())?;
    if x_hat.iter().any(|c| c.len() != fft.len()) {
        return Err(mismatch("feature spectrum length vs grid"));
    }
    Ok(ConfidenceMap {
        rows: fft.rows(),
        cols: fft.cols(),
        values: fft.inverse_real(&response_hat(f, x_hat)),
    })
}

/// Confidence map `S_f{x}(t) = sum_d (x^d (*) f^d)(t)`.
pub fn apply_filter(fft: &GridFft, f: &FourierFilter, x: &FeatureStack) -> Result<ConfidenceMap> {
    let x_hat = transform_features(fft, x)?;
    apply_filter_hat(fft, f, &x_hat)
}

/// Modulating factor of one sample under the previous filter. Uniform when
/// there is no previous filter or the residual vanishes.
pub fn modulating_factor(
    fft: &GridFft,
    prev: Option<&FourierFilter>,
    x_hat: &[Spectrum],
    label: &LabelFunction,
) -> Result<ModulatingFactor> {
    let Some(prev) = prev else {
        return Ok(ModulatingFactor::uniform(fft.len()));
    };
    let score = apply_filter_hat(fft, prev, x_hat)?;
    let residual: Vec<f64> = score.values.iter().zip(label.spatial()).map(|(s, y)| s - y).collect();
    Ok(ModulatingFactor::from_residual(&residual))
}

/// The left-hand operator and right-hand side of the filter normal equations.
#[derive(Debug, Clone, Copy)]
pub struct NormalSystem<'a> {
    pub fft: &'a GridFft,
    pub memory: &'a SampleMemory,
    pub label: &'a LabelFunction,
    pub reg: &'a RegularizationWindow,
    pub cost_sensitive: bool,
}

impl<'a> NormalSystem<'a> {
    pub fn new(
        fft: &'a GridFft,
        memory: &'a SampleMemory,
        label: &'a LabelFunction,
        reg: &'a RegularizationWindow,
        cost_sensitive: bool,
    ) -> Result<Self> {
        let n = fft.len();
        if memory.dims() != (fft.rows(), fft.cols()) {
            return Err(mismatch("sample memory grid vs transform grid"));
        }
        if label.spatial().len() != n || reg.values().len() != n {
            return Err(mismatch("label / regularization length vs grid"));
        }
        if cost_sensitive
            && memory
                .samples()
                .iter()
                .any(|s| s.factor.as_ref().is_some_and(|q| q.values().len() != n))
        {
            return Err(mismatch("modulating factor length vs grid"));
        }
        Ok(Self {
            fft,
            memory,
            label,
            reg,
            cost_sensitive,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.memory.num_channels()
    }

    pub fn zero_filter(&self) -> FourierFilter {
        FourierFilter::zeros(self.fft.rows(), self.fft.cols(), self.num_channels())
    }

    fn factor(&self, s: &'a Sample) -> Option<&'a [f64]> {
        if self.cost_sensitive {
            s.factor.as_ref().map(|q| q.values())
        } else {
            None
        }
    }

    /// Applies `(QA)^H G (QA) + W^H W` to `v`.
    pub fn apply(&self, v: &FourierFilter) -> Result<FourierFilter> {
        check_filter_shape(v, self.fft, self.num_channels())?;
        let mut out = self.zero_filter();
        for s in self.memory.samples() {
            let mut proj = response_hat(v, &s.hat);
            if let Some(q) = self.factor(s) {
                self.fft.inverse(&mut proj);
                for (p, qt) in proj.iter_mut().zip(q) {
                    *p *= qt * qt;
                }
                self.fft.forward(&mut proj);
            }
            for (od, xd) in out.channels.iter_mut().zip(&s.hat) {
                for ((o, x), p) in od.iter_mut().zip(xd).zip(&proj) {
                    *o += s.weight * x.conj() * p;
                }
            }
        }
        let w = self.reg.values();
        for (od, vd) in out.channels.iter_mut().zip(&v.channels) {
            let mut buf = vd.clone();
            self.fft.inverse(&mut buf);
            for (b, wt) in buf.iter_mut().zip(w) {
                *b *= wt * wt;
            }
            self.fft.forward(&mut buf);
            for (o, b) in od.iter_mut().zip(&buf) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Right-hand side `(QA)^H G Q y`.
    pub fn rhs(&self) -> FourierFilter {
        let mut out = self.zero_filter();
        for s in self.memory.samples() {
            let target: Spectrum = match self.factor(s) {
                Some(q) => {
                    let weighted: Vec<f64> = self.label.spatial().iter().zip(q).map(|(y, qt)| y * qt * qt).collect();
                    self.fft.forward_real(&weighted)
                }
                None => self.label.hat().to_vec(),
            };
            for (od, xd) in out.channels.iter_mut().zip(&s.hat) {
                for ((o, x), t) in od.iter_mut().zip(xd).zip(&target) {
                    *o += s.weight * x.conj() * t;
                }
            }
        }
        out
    }

    /// Spatial-domain value of the weighted objective for filter `f`.
    pub fn objective(&self, f: &FourierFilter) -> Result<f64> {
        check_filter_shape(f, self.fft, self.num_channels())?;
        let mut data = 0.0;
        for s in self.memory.samples() {
            let mut score = response_hat(f, &s.hat);
            self.fft.inverse(&mut score);
            let q = self.factor(s);
            let mut acc = 0.0;
            for (t, (sc, y)) in score.iter().zip(self.label.spatial()).enumerate() {
                let r = sc - y;
                let qt = q.map_or(1.0, |q| q[t]);
                acc += (r * qt).norm_sqr();
            }
            data += s.weight * acc;
        }
        let w = self.reg.values();
        let mut reg = 0.0;
        for fd in &f.channels {
            let mut buf = fd.clone();
            self.fft.inverse(&mut buf);
            reg += buf.iter().zip(w).map(|(b, wt)| (b * wt).norm_sqr()).sum::<f64>();
        }
        Ok(data + reg)
    }
}

/// Operation-style alias for [`NormalSystem::apply`].
pub fn normal_apply(system: &NormalSystem<'_>, v: &FourierFilter) -> Result<FourierFilter> {
    system.apply(v)
}

/// Operation-style alias for [`NormalSystem::objective`].
pub fn objective_value(system: &NormalSystem<'_>, f: &FourierFilter) -> Result<f64> {
    system.objective(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_features(rng: &mut ChaCha8Rng, rows: usize, cols: usize, d: usize) -> FeatureStack {
        let channels = (0..d)
            .map(|_| (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        FeatureStack::new(rows, cols, 1, channels).unwrap()
    }

    fn circular_convolution(x: &[f64], f: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let mut acc = 0.0;
                for a in 0..rows {
                    for b in 0..cols {
                        let rr = (r + rows - a) % rows;
                        let cc = (c + cols - b) % cols;
                        acc += x[a * cols + b] * f[rr * cols + cc];
                    }
                }
                out[r * cols + c] = acc;
            }
        }
        out
    }

    #[test]
    fn delta_filter_reproduces_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fft = GridFft::new(4, 6);
        let x = random_features(&mut rng, 4, 6, 3);
        let mut spatial = vec![vec![0.0; 24]; 3];
        spatial[1][0] = 1.0;
        let f = FourierFilter::from_spatial(&fft, &spatial).unwrap();
        let map = apply_filter(&fft, &f, &x).unwrap();
        for (a, b) in map.values.iter().zip(x.channel(1)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_filter_gives_zero_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fft = GridFft::new(3, 3);
        let x = random_features(&mut rng, 3, 3, 2);
        let map = apply_filter(&fft, &FourierFilter::zeros(3, 3, 2), &x).unwrap();
        assert!(map.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fourier_response_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (rows, cols) = (1, 8);
        let fft = GridFft::new(rows, cols);
        let x = random_features(&mut rng, rows, cols, 2);
        let fs: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let f = FourierFilter::from_spatial(&fft, &fs).unwrap();
        let map = apply_filter(&fft, &f, &x).unwrap();
        let mut oracle = vec![0.0; 8];
        for (d, fd) in fs.iter().enumerate() {
            for (o, v) in oracle
                .iter_mut()
                .zip(circular_convolution(x.channel(d), fd, rows, cols))
            {
                *o += v;
            }
        }
        for (a, b) in map.values.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10);
        }
        // and on a proper 2-D grid
        let fft = GridFft::new(4, 4);
        let x = random_features(&mut rng, 4, 4, 2);
        let fs: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let f = FourierFilter::from_spatial(&fft, &fs).unwrap();
        let map = apply_filter(&fft, &f, &x).unwrap();
        for t in 0..16 {
            let direct: f64 = (0..2)
                .map(|d| circular_convolution(x.channel(d), &fs[d], 4, 4)[t])
                .sum();
            assert!((map.values[t] - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn apply_filter_rejects_mismatch() {
        let fft = GridFft::new(4, 4);
        let x = FeatureStack::new(4, 4, 1, vec![vec![0.0; 16]; 2]).unwrap();
        assert!(apply_filter(&fft, &FourierFilter::zeros(4, 4, 3), &x).is_err());
        let y = FeatureStack::new(2, 8, 1, vec![vec![0.0; 16]; 3]).unwrap();
        assert!(apply_filter(&fft, &FourierFilter::zeros(4, 4, 3), &y).is_err());
    }

    #[test]
    fn modulating_factor_examples() {
        let q = ModulatingFactor::from_residual(&[0.0, 0.5, -1.0, 0.25]);
        assert_eq!(q.values(), &[0.0, 0.25, 1.0, 0.0625]);
        let q = ModulatingFactor::from_residual(&[0.0; 5]);
        assert!(q.values().iter().all(|&v| v == 1.0));
        let fft = GridFft::new(2, 2);
        let label = LabelFunction::gaussian(&fft, 1.0).unwrap();
        let x_hat = vec![vec![Complex64::new(1.0, 0.0); 4]];
        let q = modulating_factor(&fft, None, &x_hat, &label).unwrap();
        assert_eq!(q, ModulatingFactor::uniform(4));
    }

    #[test]
    fn perfect_fit_gives_uniform_factor() {
        // delta sample, filter == label: residual is exactly zero
        let fft = GridFft::new(1, 8);
        let label = LabelFunction::gaussian(&fft, 1.0).unwrap();
        let x_hat = vec![vec![Complex64::new(1.0, 0.0); 8]];
        let f = FourierFilter::from_channels(1, 8, vec![label.hat().to_vec()]).unwrap();
        let q = modulating_factor(&fft, Some(&f), &x_hat, &label).unwrap();
        assert!(q.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn label_peaks_at_center() {
        let fft = GridFft::new(6, 8);
        let label = LabelFunction::gaussian(&fft, 1.2).unwrap();
        let map = ConfidenceMap {
            rows: 6,
            cols: 8,
            values: label.spatial().to_vec(),
        };
        assert_eq!(map.peak(), (3, 4, 1.0));
        assert!(label.spatial().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn memory_evicts_lowest_weight() {
        let mut mem = SampleMemory::new(1, 2, 1, 3, 0.5).unwrap();
        let s = || vec![vec![Complex64::new(1.0, 0.0); 2]];
        mem.push(s()).unwrap();
        mem.push(s()).unwrap();
        mem.push(s()).unwrap();
        // weights: 0.25, 0.25, 0.5 after two decays of the first sample
        let w: Vec<f64> = mem.samples().iter().map(|s| s.weight).collect();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(mem.push(s()).unwrap(), Some(0));
        assert_eq!(mem.len(), 3);
        let w: Vec<f64> = mem.samples().iter().map(|s| s.weight).collect();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn regularization_window_floor() {
        let w = RegularizationWindow::quadratic(8, 8, 1e-3, 10.0).unwrap();
        let min = w.values().iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(min, 1e-3);
        assert!(RegularizationWindow::quadratic(8, 8, 0.0, 10.0).is_err());
        assert!(RegularizationWindow::from_values(vec![1.0, 0.0]).is_err());
    }
}
