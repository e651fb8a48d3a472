//! Packed real-to-physical transforms on a uniform `m x m` grid.
//!
//! Two real fields `f, g` travel through one complex FFT as `f + i g`.
//! Grid point `(i1, i2)` sits at `x = (2 pi i1 / m, 2 pi i2 / m)` and is
//! stored at `i1 * m + i2`.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::BasisSet;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(m: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(m)
        } else {
            p.plan_fft_forward(m)
        }
    })
}

fn fft2(buf: &mut [Complex64], m: usize, inverse: bool) {
    let fft = plan(m, inverse);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    // rows (contiguous along i2)
    fft.process_with_scratch(buf, &mut scratch);
    // columns
    let mut col = vec![Complex64::default(); m];
    for i2 in 0..m {
        for i1 in 0..m {
            col[i1] = buf[i1 * m + i2];
        }
        fft.process_with_scratch(&mut col, &mut scratch);
        for i1 in 0..m {
            buf[i1 * m + i2] = col[i1];
        }
    }
}

#[inline]
fn wrap(k: i32, m: usize) -> usize {
    k.rem_euclid(m as i32) as usize
}

/// A real two-component vector field sampled on an `m x m` grid.
#[derive(Clone, Debug)]
pub struct PhysicalVector {
    pub m: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl PhysicalVector {
    pub fn zeros(m: usize) -> Self {
        Self {
            m,
            x: vec![0.0; m * m],
            y: vec![0.0; m * m],
        }
    }

    /// Area element of the uniform quadrature on the 2 pi torus.
    pub fn cell_area(&self) -> f64 {
        let h = 2.0 * std::f64::consts::PI / self.m as f64;
        h * h
    }

    /// Pointwise Euclidean magnitude.
    pub fn magnitude(&self) -> Vec<f64> {
        self.x
            .iter()
            .zip(&self.y)
            .map(|(a, b)| a.hypot(*b))
            .collect()
    }

    /// Trapezoid (uniform) quadrature of the pointwise dot product.
    pub fn dot_integral(&self, other: &PhysicalVector) -> f64 {
        debug_assert_eq!(self.m, other.m);
        let s: f64 = self
            .x
            .iter()
            .zip(&self.y)
            .zip(other.x.iter().zip(&other.y))
            .map(|((a, b), (c, d))| a * c + b * d)
            .sum();
        s * self.cell_area()
    }

    /// `(integral |v|^p)^(1/p)` by uniform quadrature.
    pub fn lp_norm(&self, p: f64) -> f64 {
        let s: f64 = self.magnitude().iter().map(|v| v.powf(p)).sum();
        (s * self.cell_area()).powf(1.0 / p)
    }
}

/// Samples a field given per-mode vector coefficients (representative
/// half-lattice, conjugate symmetry implied).
pub fn synthesize(basis: &BasisSet, m: usize, coeffs: &[[Complex64; 2]]) -> PhysicalVector {
    assert!(m > 2 * basis.max_wavenumber(), "grid too coarse for basis");
    let mut buf = vec![Complex64::default(); m * m];
    for (k, c) in basis.modes().iter().zip(coeffs) {
        let z = c[0] + Complex64::i() * c[1];
        let zc = c[0].conj() + Complex64::i() * c[1].conj();
        buf[wrap(k[0], m) * m + wrap(k[1], m)] += z;
        buf[wrap(-k[0], m) * m + wrap(-k[1], m)] += zc;
    }
    fft2(&mut buf, m, true);
    PhysicalVector {
        m,
        x: buf.iter().map(|z| z.re).collect(),
        y: buf.iter().map(|z| z.im).collect(),
    }
}

/// Discrete Fourier coefficients of a physical vector field at the basis
/// modes (everything outside the basis is discarded).
pub fn analyze(basis: &BasisSet, field: &PhysicalVector) -> Vec<[Complex64; 2]> {
    let m = field.m;
    assert!(m > 2 * basis.max_wavenumber(), "grid too coarse for basis");
    let mut buf: Vec<Complex64> = field
        .x
        .iter()
        .zip(&field.y)
        .map(|(a, b)| Complex64::new(*a, *b))
        .collect();
    fft2(&mut buf, m, false);
    let norm = 1.0 / (m * m) as f64;
    basis
        .modes()
        .iter()
        .map(|k| {
            let zp = buf[wrap(k[0], m) * m + wrap(k[1], m)] * norm;
            let zm = buf[wrap(-k[0], m) * m + wrap(-k[1], m)].conj() * norm;
            [(zp + zm) * 0.5, (zp - zm) / Complex64::new(0.0, 2.0)]
        })
        .collect()
}
