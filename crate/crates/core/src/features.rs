//! Hand-crafted features for the correlation filter: HOG orientation
//! histograms and Color Names probabilities on a common cell grid.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::imaging::ImageBuffer;

pub const COLOR_NAMES: [&str; 11] = [
    "black", "blue", "brown", "grey", "green", "orange", "pink", "purple", "red", "white", "yellow",
];

const CN_BINS: usize = 32;
const CN_ROWS: usize = CN_BINS * CN_BINS * CN_BINS;

/// Multi-channel real feature map on a `rows x cols` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    rows: usize,
    cols: usize,
    cell_size: usize,
    channels: Vec<Vec<f64>>,
    pub meta: FeatureMeta,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FeatureMeta {
    /// Color channels are mean RGB because no color-name table was given.
    pub color_fallback: bool,
}

impl FeatureStack {
    pub fn new(rows: usize, cols: usize, cell_size: usize, channels: Vec<Vec<f64>>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid("feature grid must be nonempty"));
        }
        if let Some(c) = channels.iter().find(|c| c.len() != rows * cols) {
            return Err(invalid(format!(
                "channel of length {} on a {rows}x{cols} grid",
                c.len()
            )));
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite feature value"));
        }
        Ok(Self {
            rows,
            cols,
            cell_size,
            channels,
            meta: FeatureMeta::default(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell_size(&self) -> usize {
        self.cell_size
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, d: usize) -> &[f64] {
        &self.channels[d]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    #[inline]
    pub fn at(&self, d: usize, r: usize, c: usize) -> f64 {
        self.channels[d][r * self.cols + c]
    }

    /// Gain that brings the mean squared element to one; 1 for an all-zero stack.
    pub fn unit_gain(&self) -> f64 {
        let count = (self.channels.len() * self.rows * self.cols) as f64;
        let energy: f64 = self.channels.iter().flatten().map(|v| v * v).sum();
        if energy > 1e-12 {
            (count / energy).sqrt()
        } else {
            1.0
        }
    }

    pub fn scale(&mut self, gain: f64) {
        for v in self.channels.iter_mut().flatten() {
            *v *= gain;
        }
    }

    /// Bilinear resample of every channel onto a `rows x cols` grid.
    pub fn resampled(&self, rows: usize, cols: usize) -> FeatureStack {
        if rows == self.rows && cols == self.cols {
            return self.clone();
        }
        let sy = self.rows as f64 / rows as f64;
        let sx = self.cols as f64 / cols as f64;
        let channels = self
            .channels
            .iter()
            .map(|ch| {
                let mut out = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    let y = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.rows - 1) as f64);
                    let y0 = y.floor() as usize;
                    let y1 = (y0 + 1).min(self.rows - 1);
                    let fy = y - y0 as f64;
                    for c in 0..cols {
                        let x = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.cols - 1) as f64);
                        let x0 = x.floor() as usize;
                        let x1 = (x0 + 1).min(self.cols - 1);
                        let fx = x - x0 as f64;
                        let g = |rr: usize, cc: usize| ch[rr * self.cols + cc];
                        let top = g(y0, x0) * (1.0 - fx) + g(y0, x1) * fx;
                        let bot = g(y1, x0) * (1.0 - fx) + g(y1, x1) * fx;
                        out.push(top * (1.0 - fy) + bot * fy);
                    }
                }
                out
            })
            .collect();
        FeatureStack {
            rows,
            cols,
            cell_size: self.cell_size,
            channels,
            meta: self.meta,
        }
    }
}

/// Histogram-of-oriented-gradients with `bins` unsigned orientations per cell.
pub fn hog(img: &ImageBuffer, cell: usize) -> Result<FeatureStack> {
    hog_with_bins(img, cell, 9)
}

pub fn hog_with_bins(img: &ImageBuffer, cell: usize, bins: usize) -> Result<FeatureStack> {
    if cell == 0 || bins == 0 {
        return Err(invalid("HOG cell size and bin count must be positive"));
    }
    let (w, h) = (img.width(), img.height());
    if w < cell || h < cell {
        return Err(invalid(format!("image {w}x{h} is smaller than one {cell}px cell")));
    }
    if w % cell != 0 || h % cell != 0 {
        return Err(invalid(format!("image {w}x{h} is not divisible by cell size {cell}")));
    }
    let gray = img.to_gray();
    let (rows, cols) = (h / cell, w / cell);
    let mut hist = vec![vec![0.0; rows * cols]; bins];
    let bin_width = PI / bins as f64;
    for y in 0..h {
        let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let gx = gray.get(xr, y, 0) - gray.get(xl, y, 0);
            let gy = gray.get(x, yd, 0) - gray.get(x, yu, 0);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let mut theta = gy.atan2(gx);
            if theta < 0.0 {
                theta += PI;
            }
            if theta >= PI {
                theta -= PI;
            }
            // bin b is centered at b * bin_width; split linearly between neighbours
            let pos = theta / bin_width;
            let b0 = pos.floor() as usize % bins;
            let frac = pos - pos.floor();
            let b1 = (b0 + 1) % bins;
            let idx = (y / cell) * cols + x / cell;
            hist[b0][idx] += mag * (1.0 - frac);
            if frac > 0.0 {
                hist[b1][idx] += mag * frac;
            }
        }
    }
    for idx in 0..rows * cols {
        normalize_clip(&mut hist, idx, 0.2);
    }
    FeatureStack::new(rows, cols, cell, hist)
}

fn normalize_clip(hist: &mut [Vec<f64>], idx: usize, clip: f64) {
    let norm = hist.iter().map(|b| b[idx] * b[idx]).sum::<f64>().sqrt();
    if norm < 1e-12 {
        for b in hist.iter_mut() {
            b[idx] = 0.0;
        }
        return;
    }
    for b in hist.iter_mut() {
        b[idx] = (b[idx] / norm).min(clip);
    }
    let norm = hist.iter().map(|b| b[idx] * b[idx]).sum::<f64>().sqrt();
    for b in hist.iter_mut() {
        b[idx] /= norm;
    }
}

/// Lookup from 32x32x32 quantized RGB to 11 color-name probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorNameTable {
    rows: Vec<[f64; 11]>,
}

impl ColorNameTable {
    pub fn from_rows(rows: Vec<[f64; 11]>) -> Result<Self> {
        if rows.len() != CN_ROWS {
            return Err(invalid(format!(
                "color-name table needs {CN_ROWS} rows, got {}",
                rows.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
                return Err(invalid(format!(
                    "color-name row {i} is not a probability vector (sum {sum})"
                )));
            }
        }
        Ok(Self { rows })
    }

    /// Plain-text table: one row per quantized color, 11 whitespace-separated reals.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut rows = Vec::with_capacity(CN_ROWS);
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut row = [0.0; 11];
            let mut n = 0;
            for tok in line.split_whitespace() {
                if n == 11 {
                    n += 1;
                    break;
                }
                row[n] = tok.parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("bad probability {tok:?}"),
                })?;
                n += 1;
            }
            if n != 11 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: "expected 11 values".into(),
                });
            }
            rows.push(row);
        }
        Self::from_rows(rows)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(CN_ROWS * 11 * 10);
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|p| format!("{p:.8}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// A table generated from one prototype RGB per color name, with a soft
    /// assignment by squared distance. Stands in for a learned table when none
    /// is supplied on disk.
    pub fn prototype() -> Self {
        const PROTOS: [[f64; 3]; 11] = [
            [0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.55, 0.27, 0.07],
            [0.5, 0.5, 0.5],
            [0.0, 0.8, 0.0],
            [1.0, 0.55, 0.0],
            [1.0, 0.6, 0.8],
            [0.5, 0.0, 0.5],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 1.0],
            [1.0, 1.0, 0.0],
        ];
        const TEMPERATURE: f64 = 0.02;
        let mut rows = Vec::with_capacity(CN_ROWS);
        for idx in 0..CN_ROWS {
            let rgb = Self::bin_center(idx);
            let logits: Vec<f64> = PROTOS
                .iter()
                .map(|p| {
                    let d2: f64 = p.iter().zip(&rgb).map(|(a, b)| (a - b) * (a - b)).sum();
                    -d2 / TEMPERATURE
                })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let mut row = [0.0; 11];
            for (r, e) in row.iter_mut().zip(&exps) {
                *r = e / sum;
            }
            rows.push(row);
        }
        Self { rows }
    }

    fn bin_center(idx: usize) -> [f64; 3] {
        let r = idx % CN_BINS;
        let g = (idx / CN_BINS) % CN_BINS;
        let b = idx / (CN_BINS * CN_BINS);
        [r, g, b].map(|q| ((q * 8) as f64 + 3.5) / 255.0)
    }

    /// Row index for an RGB color in `[0, 1]`.
    pub fn index_of(rgb: [f64; 3]) -> usize {
        let q = rgb.map(|v| ((v.clamp(0.0, 1.0) * 255.0).round() as usize) >> 3);
        q[0] + CN_BINS * q[1] + CN_BINS * CN_BINS * q[2]
    }

    pub fn lookup(&self, rgb: [f64; 3]) -> &[f64; 11] {
        &self.rows[Self::index_of(rgb)]
    }
}

/// Per-cell averaged color-name probabilities, or mean RGB when `table` is
/// absent (reported through [`FeatureMeta::color_fallback`]).
pub fn color_names(img: &ImageBuffer, table: Option<&ColorNameTable>, cell: usize) -> Result<FeatureStack> {
    if cell == 0 {
        return Err(invalid("cell size must be positive"));
    }
    let (w, h) = (img.width(), img.height());
    if w < cell || h < cell || w % cell != 0 || h % cell != 0 {
        return Err(invalid(format!("image {w}x{h} incompatible with cell size {cell}")));
    }
    let rgb = img.to_rgb();
    let (rows, cols) = (h / cell, w / cell);
    let nch = if table.is_some() { 11 } else { 3 };
    let mut out = vec![vec![0.0; rows * cols]; nch];
    let norm = 1.0 / (cell * cell) as f64;
    for y in 0..h {
        for x in 0..w {
            let px = [rgb.get(x, y, 0), rgb.get(x, y, 1), rgb.get(x, y, 2)];
            let idx = (y / cell) * cols + x / cell;
            match table {
                Some(t) => {
                    for (ch, p) in out.iter_mut().zip(t.lookup(px)) {
                        ch[idx] += p * norm;
                    }
                }
                None => {
                    for (ch, p) in out.iter_mut().zip(px) {
                        ch[idx] += p * norm;
                    }
                }
            }
        }
    }
    let mut stack = FeatureStack::new(rows, cols, cell, out)?;
    stack.meta.color_fallback = table.is_none();
    Ok(stack)
}

#[derive(Debug, Clone)]
pub struct FeatureConfig {
    pub cell_size: usize,
    pub hog_bins: usize,
    pub color_table: Option<Arc<ColorNameTable>>,
    pub hann_window: bool,
    pub color_centering: ColorCentering,
}

/// Offset removed from every color channel before windowing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorCentering {
    None,
    /// Subtract each color channel's mean over the patch.
    PatchMean,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            cell_size: 4,
            hog_bins: 9,
            color_table: Some(Arc::new(ColorNameTable::prototype())),
            hann_window: true,
            color_centering: ColorCentering::PatchMean,
        }
    }
}

impl FeatureConfig {
    pub fn num_channels(&self) -> usize {
        self.hog_bins + if self.color_table.is_some() { 11 } else { 3 }
    }
}

/// Symmetric Hann window of length `n` (endpoints zero).
pub fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / (n - 1) as f64).cos()))
        .collect()
}

/// Concatenates HOG and color channels on the finer of the two grids and
/// applies the Hann pre-window.
pub fn assemble_features(patch: &ImageBuffer, cfg: &FeatureConfig) -> Result<FeatureStack> {
    let hog = hog_with_bins(patch, cfg.cell_size, cfg.hog_bins)?;
    let color = color_names(patch, cfg.color_table.as_deref(), cfg.cell_size)?;
    let rows = hog.rows().max(color.rows());
    let cols = hog.cols().max(color.cols());
    let hog = hog.resampled(rows, cols);
    let color = color.resampled(rows, cols);
    let mut channels = hog.channels;
    channels.extend(color.channels.into_iter().map(|ch| match cfg.color_centering {
        ColorCentering::None => ch,
        ColorCentering::PatchMean => {
            let mean = ch.iter().sum::<f64>() / ch.len() as f64;
            ch.into_iter().map(|v| v - mean).collect()
        }
    }));
    if cfg.hann_window {
        let wr = hann(rows);
        let wc = hann(cols);
        for ch in channels.iter_mut() {
            for r in 0..rows {
                for c in 0..cols {
                    ch[r * cols + c] *= wr[r] * wc[c];
                }
            }
        }
    }
    let mut stack = FeatureStack::new(rows, cols, cfg.cell_size, channels)?;
    stack.meta.color_fallback = color.meta.color_fallback;
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_edge(w: usize, h: usize, vertical: bool) -> ImageBuffer {
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let on = if vertical { x >= w / 2 } else { y >= h / 2 };
                data.push(if on { 1.0 } else { 0.0 });
            }
        }
        ImageBuffer::new(w, h, 1, data).unwrap()
    }

    #[test]
    fn constant_image_has_zero_hog() {
        let img = ImageBuffer::filled(16, 12, 3, 0.4);
        let f = hog(&img, 4).unwrap();
        assert_eq!((f.rows(), f.cols(), f.num_channels()), (3, 4, 9));
        assert!(f.channels().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_edge_fills_horizontal_gradient_bin() {
        // edge between columns 7 and 8: gx = 1 at x = 7 and x = 8 (cells 1 and 2)
        let f = hog(&step_edge(16, 8, true), 4).unwrap();
        for r in 0..2 {
            for c in 0..4 {
                let straddles = c == 1 || c == 2;
                assert_eq!(f.at(0, r, c), if straddles { 1.0 } else { 0.0 });
                for b in 1..9 {
                    assert_eq!(f.at(b, r, c), 0.0);
                }
            }
        }
    }

    #[test]
    fn horizontal_edge_moves_energy_to_orthogonal_orientation() {
        // theta = pi/2 sits midway between bins 4 and 5 with 9 bins
        let f = hog(&step_edge(8, 16, false), 4).unwrap();
        let half = 1.0 / 2f64.sqrt();
        for r in 0..4 {
            for c in 0..2 {
                let straddles = r == 1 || r == 2;
                for b in 0..9 {
                    let expect = if straddles && (b == 4 || b == 5) { half } else { 0.0 };
                    assert!((f.at(b, r, c) - expect).abs() < 1e-12, "bin {b} cell {r},{c}");
                }
            }
        }
    }

    #[test]
    fn hog_rejects_small_images() {
        let img = ImageBuffer::filled(3, 3, 1, 0.0);
        assert!(hog(&img, 4).is_err());
    }

    #[test]
    fn hog_invariant_to_intensity_shift() {
        let mut data = Vec::new();
        for i in 0..16 * 16 {
            data.push(((i * 37) % 23) as f64 / 46.0);
        }
        let a = ImageBuffer::new(16, 16, 1, data.clone()).unwrap();
        let b = ImageBuffer::new(16, 16, 1, data.iter().map(|v| v + 0.3).collect()).unwrap();
        let (fa, fb) = (hog(&a, 4).unwrap(), hog(&b, 4).unwrap());
        for (x, y) in fa.channels().iter().flatten().zip(fb.channels().iter().flatten()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn pure_red_maps_to_red_name() {
        let table = ColorNameTable::prototype();
        let red = ImageBuffer::new(8, 8, 3, [1.0, 0.0, 0.0].repeat(64)).unwrap();
        let f = color_names(&red, Some(&table), 4).unwrap();
        let oracle = table.lookup([1.0, 0.0, 0.0]);
        let expect = oracle.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(COLOR_NAMES[expect], "red");
        for idx in 0..4 {
            let best = (0..11)
                .max_by(|&a, &b| f.channel(a)[idx].total_cmp(&f.channel(b)[idx]))
                .unwrap();
            assert_eq!(best, expect);
        }
        assert!(!f.meta.color_fallback);
    }

    #[test]
    fn fallback_reports_mean_rgb() {
        let red = ImageBuffer::new(8, 8, 3, [1.0, 0.0, 0.0].repeat(64)).unwrap();
        let f = color_names(&red, None, 4).unwrap();
        assert!(f.meta.color_fallback);
        assert_eq!(f.num_channels(), 3);
        for idx in 0..4 {
            assert!((f.channel(0)[idx] - 1.0).abs() < 1e-12);
            assert_eq!(f.channel(1)[idx], 0.0);
            assert_eq!(f.channel(2)[idx], 0.0);
        }
    }

    #[test]
    fn color_name_cells_are_probability_vectors() {
        let table = ColorNameTable::prototype();
        let mut data = Vec::new();
        for i in 0..12 * 8 * 3 {
            data.push(((i * 53) % 97) as f64 / 96.0);
        }
        let img = ImageBuffer::new(12, 8, 3, data).unwrap();
        let f = color_names(&img, Some(&table), 4).unwrap();
        for idx in 0..f.rows() * f.cols() {
            let s: f64 = (0..11).map(|d| f.channel(d)[idx]).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn table_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cn.txt");
        let table = ColorNameTable::prototype();
        table.save(&path).unwrap();
        let loaded = ColorNameTable::load(&path).unwrap();
        for (a, b) in loaded.rows.iter().zip(&table.rows) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn assembled_constant_patch_with_fallback() {
        let cfg = FeatureConfig {
            color_table: None,
            color_centering: ColorCentering::None,
            ..FeatureConfig::default()
        };
        let patch = ImageBuffer::filled(32, 24, 3, 0.5);
        let f = assemble_features(&patch, &cfg).unwrap();
        assert_eq!(f.num_channels(), 12);
        assert_eq!((f.rows(), f.cols()), (6, 8));
        assert!(f.meta.color_fallback);
        let (wr, wc) = (hann(6), hann(8));
        for d in 0..9 {
            assert!(f.channel(d).iter().all(|&v| v == 0.0));
        }
        for d in 9..12 {
            for (r, wr) in wr.iter().enumerate() {
                for (c, wc) in wc.iter().enumerate() {
                    assert!((f.at(d, r, c) - 0.5 * wr * wc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn patch_mean_centering_zeroes_constant_color() {
        let patch = ImageBuffer::filled(16, 16, 3, 0.3);
        let f = assemble_features(&patch, &FeatureConfig::default()).unwrap();
        assert!(f.channels().iter().flatten().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn assembled_border_is_windowed_to_zero() {
        let mut data = Vec::new();
        for i in 0..32 * 32 * 3 {
            data.push(((i * 31) % 41) as f64 / 40.0);
        }
        let patch = ImageBuffer::new(32, 32, 3, data).unwrap();
        let cfg = FeatureConfig::default();
        let f = assemble_features(&patch, &cfg).unwrap();
        assert_eq!(f.num_channels(), 20);
        for d in 0..f.num_channels() {
            for i in 0..f.cols() {
                assert!(f.at(d, 0, i).abs() < 1e-12);
                assert!(f.at(d, f.rows() - 1, i).abs() < 1e-12);
            }
        }
        assert_eq!(f, assemble_features(&patch, &cfg).unwrap());
    }

    #[test]
    fn resampling_to_common_grid_takes_the_max() {
        let coarse = FeatureStack::new(2, 2, 8, vec![vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let fine = coarse.resampled(4, 4);
        assert_eq!((fine.rows(), fine.cols()), (4, 4));
        assert_eq!(fine.at(0, 0, 0), 1.0);
        assert_eq!(fine.at(0, 3, 3), 4.0);
    }
}
