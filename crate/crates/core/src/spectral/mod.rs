//! Divergence-free Fourier basis on the 2 pi periodic torus.
//!
//! Fields are stored as stream-function coefficients `psi_k` on a
//! representative half-lattice (`k1 > 0`, or `k1 == 0 && k2 > 0`), so the
//! velocity `u_k = i (k2, -k1) psi_k` satisfies `k . u_k = 0` for every mode.
//!
//! Besides `psi`, every field has orthonormal H-coordinates: the complex
//! number `c_k = 2 pi sqrt(2) |k| psi_k` whose real and imaginary parts are
//! coefficients against an orthonormal basis of H. Noise, controls and the
//! time integrators all act on those coordinates.

mod transform;

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub use transform::{analyze, synthesize, PhysicalVector};

/// Immutable basis description, shared between fields via `Arc`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    max_wavenumber: usize,
    dealias_factor: f64,
    modes: Vec<[i32; 2]>,
    eigenvalues: Vec<f64>,
    grid_size: usize,
}

/// Smallest even integer `>= factor * (2n + 1)`.
pub fn padded_grid_size(n: usize, factor: f64) -> usize {
    let target = factor * (2 * n + 1) as f64;
    let mut g = (target - 1e-9).ceil().max(1.0) as usize;
    if g % 2 == 1 {
        g += 1;
    }
    g
}

impl BasisSet {
    /// All representative modes with `0 < |k| <= n`, sorted by eigenvalue.
    pub fn new(n: usize, dealias_factor: f64) -> Result<Arc<Self>> {
        if n == 0 {
            return Err(Error::invalid("max wavenumber must be >= 1"));
        }
        if !(dealias_factor >= 1.5) {
            return Err(Error::invalid(format!(
                "dealias factor must be >= 3/2, got {dealias_factor}"
            )));
        }
        let ni = n as i32;
        let mut modes = Vec::new();
        for k1 in 0..=ni {
            for k2 in -ni..=ni {
                let rep = k1 > 0 || (k1 == 0 && k2 > 0);
                if rep && k1 * k1 + k2 * k2 <= ni * ni {
                    modes.push([k1, k2]);
                }
            }
        }
        modes.sort_by_key(|k| (k[0] * k[0] + k[1] * k[1], k[0], k[1]));
        let eigenvalues = modes
            .iter()
            .map(|k| f64::from(k[0] * k[0] + k[1] * k[1]))
            .collect();
        Ok(Arc::new(Self {
            max_wavenumber: n,
            dealias_factor,
            modes,
            eigenvalues,
            grid_size: padded_grid_size(n, dealias_factor),
        }))
    }

    pub fn max_wavenumber(&self) -> usize {
        self.max_wavenumber
    }

    pub fn dealias_factor(&self) -> f64 {
        self.dealias_factor
    }

    pub fn modes(&self) -> &[[i32; 2]] {
        &self.modes
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Number of real H-coordinates (two per mode).
    pub fn dim(&self) -> usize {
        2 * self.modes.len()
    }

    /// Physical grid points per axis used for the quadratic term.
    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    /// Grid for the degree-`r` pointwise map `|u|^(r-1) u`.
    pub fn grid_for_power(&self, r: f64) -> usize {
        padded_grid_size(self.max_wavenumber, self.dealias_factor.max((r + 1.0) / 2.0))
    }

    pub fn lambda_1(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues.last().expect("non-empty basis")
    }

    /// Scale taking `psi_k` to the orthonormal H-coordinate `c_k`.
    #[inline]
    pub fn coord_scale(&self, mode: usize) -> f64 {
        2.0 * PI * (2.0 * self.eigenvalues[mode]).sqrt()
    }

    pub fn compatible(self: &Arc<Self>, other: &Arc<Self>) -> bool {
        Arc::ptr_eq(self, other)
            || (self.max_wavenumber == other.max_wavenumber
                && self.dealias_factor == other.dealias_factor)
    }
}

/// Stream-function coefficients of a divergence-free, zero-mean field.
#[derive(Debug, Clone)]
pub struct SpectralField {
    basis: Arc<BasisSet>,
    psi: Vec<Complex64>,
}

/// H, V and L^{r+1} norms of a field.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Norms {
    pub h: f64,
    pub v: f64,
    pub lr1: f64,
}

impl SpectralField {
    pub fn zeros(basis: &Arc<BasisSet>) -> Self {
        Self {
            basis: basis.clone(),
            psi: vec![Complex64::default(); basis.len()],
        }
    }

    pub fn from_psi(basis: &Arc<BasisSet>, psi: Vec<Complex64>) -> Result<Self> {
        if psi.len() != basis.len() {
            return Err(Error::invalid(format!(
                "expected {} coefficients, got {}",
                basis.len(),
                psi.len()
            )));
        }
        Ok(Self {
            basis: basis.clone(),
            psi,
        })
    }

    /// Builds a field from orthonormal H-coordinates `[re c_0, im c_0, ...]`.
    pub fn from_coords(basis: &Arc<BasisSet>, coords: &[f64]) -> Result<Self> {
        if coords.len() != basis.dim() {
            return Err(Error::invalid(format!(
                "expected {} coordinates, got {}",
                basis.dim(),
                coords.len()
            )));
        }
        let psi = (0..basis.len())
            .map(|i| Complex64::new(coords[2 * i], coords[2 * i + 1]) / basis.coord_scale(i))
            .collect();
        Ok(Self {
            basis: basis.clone(),
            psi,
        })
    }

    /// Field with i.i.d. complex Gaussian H-coordinates of size
    /// `amplitude * |k|^-slope`.
    pub fn random<R: Rng + ?Sized>(
        basis: &Arc<BasisSet>,
        rng: &mut R,
        amplitude: f64,
        slope: f64,
    ) -> Self {
        let coords: Vec<f64> = (0..basis.dim())
            .map(|j| {
                let z: f64 = rng.sample(StandardNormal);
                z * amplitude * basis.eigenvalues()[j / 2].powf(-slope / 2.0)
            })
            .collect();
        Self::from_coords(basis, &coords).expect("dimension matches")
    }

    pub fn basis(&self) -> &Arc<BasisSet> {
        &self.basis
    }

    pub fn psi(&self) -> &[Complex64] {
        &self.psi
    }

    pub fn psi_mut(&mut self) -> &mut [Complex64] {
        &mut self.psi
    }

    pub fn coords(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.basis.dim());
        for (i, p) in self.psi.iter().enumerate() {
            let c = p * self.basis.coord_scale(i);
            out.push(c.re);
            out.push(c.im);
        }
        out
    }

    /// Complex H-coordinate of mode `i`.
    #[inline]
    pub fn coord(&self, i: usize) -> Complex64 {
        self.psi[i] * self.basis.coord_scale(i)
    }

    /// Velocity coefficients `u_k = i (k2, -k1) psi_k`.
    pub fn velocity_coeffs(&self) -> Vec<[Complex64; 2]> {
        self.basis
            .modes()
            .iter()
            .zip(&self.psi)
            .map(|(k, p)| {
                let ip = Complex64::i() * p;
                [ip * f64::from(k[1]), -ip * f64::from(k[0])]
            })
            .collect()
    }

    /// Velocity derivative `d/dx_axis` coefficients.
    pub fn gradient_coeffs(&self, axis: usize) -> Vec<[Complex64; 2]> {
        self.basis
            .modes()
            .iter()
            .zip(self.velocity_coeffs())
            .map(|(k, u)| {
                let f = Complex64::i() * f64::from(k[axis]);
                [u[0] * f, u[1] * f]
            })
            .collect()
    }

    pub fn to_physical(&self, m: usize) -> PhysicalVector {
        synthesize(&self.basis, m, &self.velocity_coeffs())
    }

    pub fn check_compatible(&self, other: &SpectralField) -> Result<()> {
        if self.basis.compatible(&other.basis) {
            Ok(())
        } else {
            Err(Error::invalid("fields live on different bases"))
        }
    }

    /// H inner product `(u, v) = integral u . v dx`, exact via Parseval.
    pub fn inner(&self, other: &SpectralField) -> f64 {
        self.psi
            .iter()
            .zip(&other.psi)
            .zip(self.basis.eigenvalues())
            .map(|((a, b), lam)| lam * (a * b.conj()).re)
            .sum::<f64>()
            * 8.0
            * PI
            * PI
    }

    pub fn norm_h_sq(&self) -> f64 {
        self.inner(self)
    }

    pub fn norm_h(&self) -> f64 {
        self.norm_h_sq().sqrt()
    }

    /// `||grad u||^2 = sum lambda_k |u_k|^2`.
    pub fn norm_v_sq(&self) -> f64 {
        self.psi
            .iter()
            .zip(self.basis.eigenvalues())
            .map(|(a, lam)| lam * lam * a.norm_sqr())
            .sum::<f64>()
            * 8.0
            * PI
            * PI
    }

    pub fn norm_v(&self) -> f64 {
        self.norm_v_sq().sqrt()
    }

    /// `||u||_{L^p}` by quadrature on a grid padded for the power `p`.
    pub fn lp_norm(&self, p: f64) -> f64 {
        if self.psi.iter().all(|c| *c == Complex64::default()) {
            return 0.0;
        }
        let m = self.basis.grid_for_power(p - 1.0);
        self.to_physical(m).lp_norm(p)
    }

    pub fn norms(&self, r: f64) -> Norms {
        norms(self, r)
    }

    pub fn is_finite(&self) -> bool {
        self.psi.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            basis: self.basis.clone(),
            psi: self.psi.iter().map(|c| c * s).collect(),
        }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &SpectralField) {
        for (x, y) in self.psi.iter_mut().zip(&other.psi) {
            *x += y * a;
        }
    }

    /// Applies a real per-mode multiplier.
    pub fn map_modes(&self, f: impl Fn(usize) -> f64) -> Self {
        Self {
            basis: self.basis.clone(),
            psi: self.psi.iter().enumerate().map(|(i, c)| c * f(i)).collect(),
        }
    }

    /// Maximum absolute coefficient difference relative to `self`'s largest.
    pub fn max_rel_diff(&self, other: &SpectralField) -> f64 {
        let scale = self.psi.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let diff = self
            .psi
            .iter()
            .zip(&other.psi)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        if scale == 0.0 {
            diff
        } else {
            diff / scale
        }
    }
}

impl Add for &SpectralField {
    type Output = SpectralField;
    fn add(self, rhs: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.axpy(1.0, rhs);
        out
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;
    fn sub(self, rhs: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.axpy(-1.0, rhs);
        out
    }
}

impl Mul<f64> for &SpectralField {
    type Output = SpectralField;
    fn mul(self, rhs: f64) -> SpectralField {
        self.scale(rhs)
    }
}

impl Neg for &SpectralField {
    type Output = SpectralField;
    fn neg(self) -> SpectralField {
        self.scale(-1.0)
    }
}

/// Helmholtz-Hodge projection of per-mode vector coefficients.
///
/// The normal component `k (k . v) / |k|^2` is removed and the remainder is
/// re-expressed as a stream function `psi_k = -i (k2 v1 - k1 v2) / |k|^2`.
pub fn leray_project(basis: &Arc<BasisSet>, raw: &[[Complex64; 2]]) -> Result<SpectralField> {
    if raw.len() != basis.len() {
        return Err(Error::invalid(format!(
            "expected {} vector coefficients, got {}",
            basis.len(),
            raw.len()
        )));
    }
    let psi = basis
        .modes()
        .iter()
        .zip(raw)
        .zip(basis.eigenvalues())
        .map(|((k, v), lam)| {
            let tangential = v[0] * f64::from(k[1]) - v[1] * f64::from(k[0]);
            -Complex64::i() * tangential / *lam
        })
        .collect();
    Ok(SpectralField {
        basis: basis.clone(),
        psi,
    })
}

/// H and V norms from Parseval, L^{r+1} norm from grid quadrature.
pub fn norms(u: &SpectralField, r: f64) -> Norms {
    Norms {
        h: u.norm_h(),
        v: u.norm_v(),
        lr1: u.lp_norm(r + 1.0),
    }
}

/// Stokes operator: multiplication by `lambda_k`.
pub fn apply_a(u: &SpectralField) -> SpectralField {
    let lam = u.basis.eigenvalues().to_vec();
    u.map_modes(|i| lam[i])
}

/// Spectral -> physical -> spectral round trip of the velocity field.
pub fn transform_roundtrip(u: &SpectralField) -> SpectralField {
    let phys = u.to_physical(u.basis.grid_size());
    let back = analyze(&u.basis, &phys);
    leray_project(&u.basis, &back).expect("basis-shaped coefficients")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn basis_n1_has_two_unit_modes() {
        let b = BasisSet::new(1, 1.5).unwrap();
        assert_eq!(b.modes(), &[[0, 1], [1, 0]]);
        assert_eq!(b.eigenvalues(), &[1.0, 1.0]);
        assert_eq!(b.grid_size(), 6);
    }

    #[test]
    fn basis_n2_enumeration() {
        // lattice points 0 < |k|^2 <= 4, halved by conjugacy
        let mut count = 0;
        let mut eig = Vec::new();
        for k1 in -2i32..=2 {
            for k2 in -2i32..=2 {
                let s = k1 * k1 + k2 * k2;
                if s > 0 && s <= 4 {
                    count += 1;
                    eig.push(s as f64);
                }
            }
        }
        eig.sort_by(f64::total_cmp);
        let half: Vec<f64> = eig.iter().step_by(2).copied().collect();
        let b = BasisSet::new(2, 1.5).unwrap();
        assert_eq!(b.len(), count / 2);
        assert_eq!(b.eigenvalues(), half.as_slice());
        assert_eq!(b.eigenvalues(), &[1.0, 1.0, 2.0, 2.0, 4.0, 4.0]);
    }

    #[test]
    fn zero_wavenumber_is_rejected() {
        assert!(matches!(BasisSet::new(0, 1.5), Err(Error::InvalidArgument(_))));
        assert!(BasisSet::new(2, 1.2).is_err());
    }

    #[test]
    fn grid_sizes_are_even_and_padded() {
        assert_eq!(padded_grid_size(1, 1.5), 6);
        assert_eq!(padded_grid_size(6, 1.5), 20);
        assert_eq!(padded_grid_size(6, 3.0), 40);
        assert_eq!(padded_grid_size(2, 1.5), 8);
    }

    #[test]
    fn leray_removes_gradients_and_keeps_solenoidal() {
        let b = BasisSet::new(3, 1.5).unwrap();
        // pure gradient: raw_k = k (times a complex scalar)
        let pure: Vec<[Complex64; 2]> = b
            .modes()
            .iter()
            .map(|k| {
                let s = Complex64::new(0.7, -1.1);
                [s * k[0] as f64, s * k[1] as f64]
            })
            .collect();
        let p = leray_project(&b, &pure).unwrap();
        assert!(p.norm_h() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = SpectralField::random(&b, &mut rng, 1.0, 1.0);
        let again = leray_project(&b, &u.velocity_coeffs()).unwrap();
        assert!(u.max_rel_diff(&again) < 1e-14);
    }

    #[test]
    fn leray_single_mode_example() {
        let b = BasisSet::new(1, 1.5).unwrap();
        let idx = b.modes().iter().position(|k| *k == [1, 0]).unwrap();
        let mut raw = vec![[Complex64::default(); 2]; b.len()];
        raw[idx] = [Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)];
        let p = leray_project(&b, &raw).unwrap();
        let v = p.velocity_coeffs()[idx];
        assert!((v[0] - Complex64::new(0.0, 0.0)).norm() < 1e-15);
        assert!((v[1] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn leray_rejects_wrong_shape() {
        let b = BasisSet::new(2, 1.5).unwrap();
        assert!(leray_project(&b, &[[Complex64::default(); 2]]).is_err());
    }

    #[test]
    fn norms_of_zero_and_single_mode() {
        let b = BasisSet::new(3, 1.5).unwrap();
        let z = SpectralField::zeros(&b);
        assert_eq!(norms(&z, 3.0), Norms { h: 0.0, v: 0.0, lr1: 0.0 });

        let mut coords = vec![0.0; b.dim()];
        coords[0] = 2.5;
        let u = SpectralField::from_coords(&b, &coords).unwrap();
        let n = norms(&u, 1.0);
        assert!((n.h - 2.5).abs() < 1e-14);
        assert!((n.v - 2.5).abs() < 1e-14);
        assert!((n.lr1 - n.h).abs() < 1e-10);
    }

    #[test]
    fn stokes_operator_pairs_to_v_norm() {
        let b = BasisSet::new(2, 1.5).unwrap();
        let mut coords = vec![0.0; b.dim()];
        coords[0] = 1.0; // lambda = 1
        coords[9] = -0.5; // lambda = 4
        let u = SpectralField::from_coords(&b, &coords).unwrap();
        let au = apply_a(&u);
        assert!((au.inner(&u) - u.norm_v_sq()).abs() < 1e-12);

        let mut single = vec![0.0; b.dim()];
        single[1] = 0.3;
        let s = SpectralField::from_coords(&b, &single).unwrap();
        assert!(apply_a(&s).max_rel_diff(&s) < 1e-15);
        assert_eq!(apply_a(&SpectralField::zeros(&b)).norm_h(), 0.0);
    }

    #[test]
    fn roundtrip_is_exact_to_rounding() {
        let b = BasisSet::new(4, 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = SpectralField::random(&b, &mut rng, 1.0, 0.5);
        assert!(u.max_rel_diff(&transform_roundtrip(&u)) <= 1e-12);
        let z = SpectralField::zeros(&b);
        assert_eq!(transform_roundtrip(&z).norm_h(), 0.0);
    }

    #[test]
    fn coords_roundtrip() {
        let b = BasisSet::new(3, 1.5).unwrap();
        let c: Vec<f64> = (0..b.dim()).map(|i| (i as f64).sin()).collect();
        let u = SpectralField::from_coords(&b, &c).unwrap();
        let back = u.coords();
        for (a, b) in c.iter().zip(&back) {
            assert!((a - b).abs() < 1e-14);
        }
        let nh: f64 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((u.norm_h() - nh).abs() < 1e-12);
    }
}
