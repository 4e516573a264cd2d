use num_complex::Complex64;

use super::{FourierFilter, NormalSystem};
use crate::error::{invalid, mismatch, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgConfig {
    pub max_iter: usize,
    /// Stop once `||b - A f|| <= tol * ||b||`.
    pub tol: f64,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub filter: FourierFilter,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Conjugate-gradient solve of the normal equations, optionally warm-started.
pub fn solve_filter(system: &NormalSystem<'_>, cfg: CgConfig, warm_start: Option<&FourierFilter>) -> Result<CgOutcome> {
    solve_filter_traced(system, cfg, warm_start, |_, _| {})
}

/// Like [`solve_filter`], calling `observe(k, f_k)` with the starting point
/// (`k = 0`) and after every iteration.
pub fn solve_filter_traced(
    system: &NormalSystem<'_>,
    cfg: CgConfig,
    warm_start: Option<&FourierFilter>,
    mut observe: impl FnMut(usize, &FourierFilter),
) -> Result<CgOutcome> {
    if !(cfg.tol > 0.0) {
        return Err(invalid(format!("CG tolerance must be positive, got {}", cfg.tol)));
    }
    let b = system.rhs();
    let mut x = match warm_start {
        Some(f) => {
            if !f.same_shape(&b) {
                return Err(mismatch("warm-start filter shape"));
            }
            f.clone()
        }
        None => system.zero_filter(),
    };
    observe(0, &x);
    let b_norm = b.norm_sqr().sqrt();
    if b_norm == 0.0 {
        let filter = system.zero_filter();
        return Ok(CgOutcome {
            filter,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = b.clone();
    if warm_start.is_some() {
        let ax = system.apply(&x)?;
        r.axpy(Complex64::new(-1.0, 0.0), &ax);
    }
    let mut rs = r.norm_sqr();
    let mut rel = rs.sqrt() / b_norm;
    let mut p = r.clone();
    let mut iterations = 0;
    while iterations < cfg.max_iter && rel > cfg.tol {
        let ap = system.apply(&p)?;
        let curvature = p.inner(&ap).re;
        if !curvature.is_finite() || !rs.is_finite() {
            return Err(Error::NumericFailure {
                iteration: iterations,
                context: "conjugate gradient curvature".into(),
            });
        }
        if curvature <= 0.0 {
            // numerically exhausted search direction
            break;
        }
        let alpha = rs / curvature;
        x.axpy(Complex64::new(alpha, 0.0), &p);
        r.axpy(Complex64::new(-alpha, 0.0), &ap);
        iterations += 1;
        if !x.is_finite() {
            return Err(Error::NumericFailure {
                iteration: iterations,
                context: "conjugate gradient iterate".into(),
            });
        }
        observe(iterations, &x);
        let rs_new = r.norm_sqr();
        rel = rs_new.sqrt() / b_norm;
        let beta = rs_new / rs;
        rs = rs_new;
        for (pv, rv) in p.channels_mut().iter_mut().flatten().zip(r.channels().iter().flatten()) {
            *pv = rv + *pv * beta;
        }
    }
    Ok(CgOutcome {
        filter: x,
        iterations,
        relative_residual: rel,
    })
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;

    #[test]
    fn delta_sample_without_regularization_recovers_label() {
        let fft = GridFft::new(2, 4);
        let label = LabelFunction::gaussian(&fft, 0.8).unwrap();
        let mut mem = SampleMemory::new(2, 4, 1, 4, 0.1).unwrap();
        let mut delta = vec![0.0; 8];
        delta[0] = 1.0;
        mem.push(vec![fft.forward_real(&delta)]).unwrap();
        mem.refresh_factors(&fft, None, &label).unwrap();
        let reg = RegularizationWindow::disabled(8);
        let sys = NormalSystem::new(&fft, &mem, &label, &reg, true).unwrap();
        let out = solve_filter(
            &sys,
            CgConfig {
                max_iter: 10,
                tol: 1e-12,
            },
            None,
        )
        .unwrap();
        assert_eq!(out.iterations, 1);
        for (a, b) in out.filter.channel(0).iter().zip(label.hat()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_nonpositive_tolerance() {
        let fft = GridFft::new(1, 4);
        let label = LabelFunction::gaussian(&fft, 0.8).unwrap();
        let mem = SampleMemory::new(1, 4, 1, 4, 0.1).unwrap();
        let reg = RegularizationWindow::quadratic(1, 4, 1e-3, 1.0).unwrap();
        let sys = NormalSystem::new(&fft, &mem, &label, &reg, false).unwrap();
        assert!(solve_filter(&sys, CgConfig { max_iter: 5, tol: 0.0 }, None).is_err());
    }

    #[test]
    fn empty_memory_solves_to_zero() {
        let fft = GridFft::new(2, 2);
        let label = LabelFunction::gaussian(&fft, 0.8).unwrap();
        let mem = SampleMemory::new(2, 2, 2, 4, 0.1).unwrap();
        let reg = RegularizationWindow::quadratic(2, 2, 1e-3, 1.0).unwrap();
        let sys = NormalSystem::new(&fft, &mem, &label, &reg, false).unwrap();
        let out = solve_filter(&sys, CgConfig::default(), None).unwrap();
        assert_eq!(out.filter.norm_sqr(), 0.0);
    }
}
