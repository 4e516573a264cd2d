//! Two-dimensional DFT on a periodic `rows x cols` grid.
//!
//! Forward transforms are unnormalized; inverse transforms divide by the grid
//! size, so `inverse(forward(x)) == x`.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct GridFft {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for GridFft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GridFft({}x{})", self.rows, self.cols)
    }
}

impl GridFft {
    pub fn new(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty grid");
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.row_fwd, &self.col_fwd);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.row_inv, &self.col_inv);
        let scale = 1.0 / self.len() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Inverse transform keeping only the real part.
    pub fn inverse_real(&self, data: &[Complex64]) -> Vec<f64> {
        let mut buf = data.to_vec();
        self.inverse(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    fn transform(&self, data: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.len(), "grid size mismatch");
        if self.cols > 1 {
            row.process(data);
        }
        if self.rows > 1 {
            let mut t = vec![Complex64::new(0.0, 0.0); self.len()];
            for r in 0..self.rows {
                for c in 0..self.cols {
                    t[c * self.rows + r] = data[r * self.cols + c];
                }
            }
            col.process(&mut t);
            for r in 0..self.rows {
                for c in 0..self.cols {
                    data[r * self.cols + c] = t[c * self.rows + r];
                }
            }
        }
    }

    /// Index of the frequency paired with `idx` under conjugate symmetry.
    pub fn mirror(&self, idx: usize) -> usize {
        let (r, c) = (idx / self.cols, idx % self.cols);
        ((self.rows - r) % self.rows) * self.cols + (self.cols - c) % self.cols
    }
}
