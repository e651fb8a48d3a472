//! Convective term `B`, damping term `C`, the composite operator
//! `G(u) = mu A u + B(u) + beta C(u)`, and executable monotonicity checks.
//!
//! Inner products entering the inequality checks are evaluated by
//! quadrature on the padded physical grid, on the pointwise images before
//! truncation. For odd integer `r` the padded grid integrates every
//! polynomial integrand exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{analyze, leray_project, PhysicalVector, SpectralField};

/// Relative slack applied by the certificates.
pub const CHECK_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorParams {
    pub mu: f64,
    pub beta: f64,
    pub r: f64,
}

impl OperatorParams {
    pub fn new(mu: f64, beta: f64, r: f64) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::invalid("mu must be > 0"));
        }
        if !(beta >= 0.0) {
            return Err(Error::invalid("beta must be >= 0"));
        }
        if !(r >= 1.0) {
            return Err(Error::invalid("r must be >= 1"));
        }
        Ok(Self { mu, beta, r })
    }
}

/// `(u . grad) v` sampled on an `m x m` grid.
fn advection_physical(u: &SpectralField, v: &SpectralField, m: usize) -> PhysicalVector {
    let basis = u.basis();
    let uu = u.to_physical(m);
    let d1 = crate::spectral::synthesize(basis, m, &v.gradient_coeffs(0));
    let d2 = crate::spectral::synthesize(basis, m, &v.gradient_coeffs(1));
    let mut out = PhysicalVector::zeros(m);
    for i in 0..m * m {
        out.x[i] = uu.x[i] * d1.x[i] + uu.y[i] * d2.x[i];
        out.y[i] = uu.x[i] * d1.y[i] + uu.y[i] * d2.y[i];
    }
    out
}

/// `|u|^(r-1) u` pointwise. Zero where `u` vanishes.
pub fn damping_physical(u: &PhysicalVector, r: f64) -> PhysicalVector {
    let mut out = PhysicalVector::zeros(u.m);
    let e = r - 1.0;
    for i in 0..u.m * u.m {
        let mag = u.x[i].hypot(u.y[i]);
        let w = if mag == 0.0 { 0.0 } else { mag.powf(e) };
        out.x[i] = w * u.x[i];
        out.y[i] = w * u.y[i];
    }
    out
}

/// `B(u, v) = P_H (u . grad) v`, dealiased with the basis padding and
/// truncated to the basis.
pub fn bilinear_b(u: &SpectralField, v: &SpectralField) -> Result<SpectralField> {
    u.check_compatible(v)?;
    let m = u.basis().grid_size();
    let adv = advection_physical(u, v, m);
    leray_project(u.basis(), &analyze(u.basis(), &adv))
}

/// `b(u, v, w) = integral (u . grad) v . w dx` by grid quadrature.
pub fn trilinear_b(u: &SpectralField, v: &SpectralField, w: &SpectralField) -> Result<f64> {
    u.check_compatible(v)?;
    u.check_compatible(w)?;
    let m = u.basis().grid_size();
    let adv = advection_physical(u, v, m);
    Ok(adv.dot_integral(&w.to_physical(m)))
}

/// `C(u) = P_H (|u|^(r-1) u)` on the grid padded for degree `r`.
pub fn nonlinear_c(u: &SpectralField, r: f64) -> Result<SpectralField> {
    if !(r >= 1.0) {
        return Err(Error::invalid("r must be >= 1"));
    }
    let basis = u.basis();
    let m = basis.grid_for_power(r);
    let phys = damping_physical(&u.to_physical(m), r);
    leray_project(basis, &analyze(basis, &phys))
}

/// Outcome of a certificate: the two sides and whether the inequality held
/// within slack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub lhs: f64,
    pub rhs: f64,
    pub scale: f64,
    pub holds: bool,
}

/// Strong monotonicity of `C`:
/// `<C(u) - C(v), u - v> >= 2^(1-r) ||u - v||^{r+1}_{L^{r+1}}`.
pub fn check_c_strong_monotone(u: &SpectralField, v: &SpectralField, r: f64) -> Result<Certificate> {
    u.check_compatible(v)?;
    if !(r >= 1.0) {
        return Err(Error::invalid("r must be >= 1"));
    }
    let m = u.basis().grid_for_power(r);
    let pu = u.to_physical(m);
    let pv = v.to_physical(m);
    let cu = damping_physical(&pu, r);
    let cv = damping_physical(&pv, r);
    let mut lhs = 0.0;
    let mut diff_pow = 0.0;
    let mut u_pow = 0.0;
    let mut v_pow = 0.0;
    for i in 0..m * m {
        let dx = pu.x[i] - pv.x[i];
        let dy = pu.y[i] - pv.y[i];
        lhs += (cu.x[i] - cv.x[i]) * dx + (cu.y[i] - cv.y[i]) * dy;
        diff_pow += dx.hypot(dy).powf(r + 1.0);
        u_pow += pu.x[i].hypot(pu.y[i]).powf(r + 1.0);
        v_pow += pv.x[i].hypot(pv.y[i]).powf(r + 1.0);
    }
    let da = pu.cell_area();
    lhs *= da;
    let diff_norm = (diff_pow * da).powf(1.0 / (r + 1.0));
    let rhs = 2f64.powf(1.0 - r) * diff_pow * da;
    let un = (u_pow * da).powf(1.0 / (r + 1.0));
    let vn = (v_pow * da).powf(1.0 / (r + 1.0));
    let scale = (un.powf(r) + vn.powf(r)) * diff_norm + rhs;
    Ok(Certificate {
        lhs,
        rhs,
        scale,
        holds: lhs >= rhs - CHECK_SLACK * scale,
    })
}

/// Splitting bound:
/// `<C(u) - C(v), u - v> >= 1/2 || |u|^((r-1)/2) (u-v) ||^2 + 1/2 || |v|^((r-1)/2) (u-v) ||^2`.
pub fn check_c_splitting(u: &SpectralField, v: &SpectralField, r: f64) -> Result<Certificate> {
    u.check_compatible(v)?;
    let m = u.basis().grid_for_power(r);
    let pu = u.to_physical(m);
    let pv = v.to_physical(m);
    let cu = damping_physical(&pu, r);
    let cv = damping_physical(&pv, r);
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for i in 0..m * m {
        let dx = pu.x[i] - pv.x[i];
        let dy = pu.y[i] - pv.y[i];
        lhs += (cu.x[i] - cv.x[i]) * dx + (cu.y[i] - cv.y[i]) * dy;
        let mu_ = pu.x[i].hypot(pu.y[i]);
        let mv = pv.x[i].hypot(pv.y[i]);
        let d2 = dx * dx + dy * dy;
        let wu = if mu_ == 0.0 { 0.0 } else { mu_.powf(r - 1.0) };
        let wv = if mv == 0.0 { 0.0 } else { mv.powf(r - 1.0) };
        rhs += 0.5 * (wu + wv) * d2;
    }
    let da = pu.cell_area();
    lhs *= da;
    rhs *= da;
    let scale = lhs.abs() + rhs.abs();
    Ok(Certificate {
        lhs,
        rhs,
        scale,
        holds: lhs >= rhs - CHECK_SLACK * scale,
    })
}

/// Shift `eta` making `G + eta I` monotone for `r > 3`.
pub fn monotonicity_shift(params: &OperatorParams) -> Result<f64> {
    let OperatorParams { mu, beta, r } = *params;
    if r > 3.0 {
        if !(beta > 0.0) {
            return Err(Error::UnsupportedRegime(
                "r > 3 shift requires beta > 0".into(),
            ));
        }
        Ok((r - 3.0) / (2.0 * mu * (r - 1.0)) * (2.0 / (beta * mu * (r - 1.0))).powf(2.0 / (r - 3.0)))
    } else if r == 3.0 {
        if 2.0 * beta * mu >= 1.0 {
            Ok(0.0)
        } else {
            Err(Error::UnsupportedRegime(format!(
                "r = 3 requires 2 beta mu >= 1, got {}",
                2.0 * beta * mu
            )))
        }
    } else {
        Err(Error::UnsupportedRegime(format!(
            "monotonicity certificate needs r >= 3, got {r}"
        )))
    }
}

/// `<G(u) - G(v), w> ` split into its three contributions, with `w = u - v`.
#[derive(Debug, Clone, Copy)]
pub struct GPairing {
    pub viscous: f64,
    pub convective: f64,
    pub damping: f64,
}

pub fn g_pairing(u: &SpectralField, v: &SpectralField, params: &OperatorParams) -> Result<GPairing> {
    u.check_compatible(v)?;
    let w = u - v;
    let viscous = params.mu * w.norm_v_sq();
    let convective = trilinear_b(u, u, &w)? - trilinear_b(v, v, &w)?;
    let damping = if params.beta == 0.0 {
        0.0
    } else {
        params.beta * check_c_strong_monotone(u, v, params.r)?.lhs
    };
    Ok(GPairing {
        viscous,
        convective,
        damping,
    })
}

/// Local monotonicity certificate for `G = mu A + B + beta C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotoneReport {
    pub value: f64,
    pub eta: f64,
    pub scale: f64,
    pub holds: bool,
}

pub fn check_g_local_monotone(
    u: &SpectralField,
    v: &SpectralField,
    params: &OperatorParams,
) -> Result<MonotoneReport> {
    let eta = monotonicity_shift(params)?;
    let p = g_pairing(u, v, params)?;
    let shift = eta * (u - v).norm_h_sq();
    let value = p.viscous + p.convective + p.damping + shift;
    let scale = p.viscous.abs() + p.convective.abs() + p.damping.abs() + shift.abs();
    Ok(MonotoneReport {
        value,
        eta,
        scale,
        holds: value >= -CHECK_SLACK * scale,
    })
}

/// Two-dimensional local monotonicity on an L^4 ball of radius `radius`
/// around the origin containing `v`:
/// `<G(u) - G(v), u - v> + 27/(32 mu^3) radius^4 ||u - v||^2 >= 0`.
pub fn check_g_ball_monotone(
    u: &SpectralField,
    v: &SpectralField,
    params: &OperatorParams,
    radius: f64,
) -> Result<MonotoneReport> {
    let eta = 27.0 / (32.0 * params.mu.powi(3)) * radius.powi(4);
    let p = g_pairing(u, v, params)?;
    let shift = eta * (u - v).norm_h_sq();
    let value = p.viscous + p.convective + p.damping + shift;
    let scale = p.viscous.abs() + p.convective.abs() + p.damping.abs() + shift.abs();
    Ok(MonotoneReport {
        value,
        eta,
        scale,
        holds: value >= -CHECK_SLACK * scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::BasisSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shift_matches_closed_form_at_r5() {
        let p = OperatorParams::new(1.0, 1.0, 5.0).unwrap();
        // (r-3)/(2 mu (r-1)) = 2/8, (2/(beta mu (r-1)))^(2/(r-3)) = (2/4)^1
        assert!((monotonicity_shift(&p).unwrap() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn shift_regimes() {
        assert_eq!(
            monotonicity_shift(&OperatorParams::new(1.0, 0.5, 3.0).unwrap()).unwrap(),
            0.0
        );
        assert!(matches!(
            monotonicity_shift(&OperatorParams::new(1.0, 0.4, 3.0).unwrap()),
            Err(Error::UnsupportedRegime(_))
        ));
        assert!(matches!(
            monotonicity_shift(&OperatorParams::new(1.0, 1.0, 2.0).unwrap()),
            Err(Error::UnsupportedRegime(_))
        ));
    }

    #[test]
    fn zero_inputs() {
        let b = BasisSet::new(3, 1.5).unwrap();
        let z = SpectralField::zeros(&b);
        assert_eq!(bilinear_b(&z, &z).unwrap().norm_h(), 0.0);
        assert_eq!(trilinear_b(&z, &z, &z).unwrap(), 0.0);
        assert_eq!(nonlinear_c(&z, 3.5).unwrap().norm_h(), 0.0);
    }

    #[test]
    fn c_is_identity_at_r1() {
        let b = BasisSet::new(4, 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = SpectralField::random(&b, &mut rng, 1.0, 1.0);
        assert!(u.max_rel_diff(&nonlinear_c(&u, 1.0).unwrap()) < 1e-12);
    }

    #[test]
    fn monotone_certificates_trivial_cases() {
        let b = BasisSet::new(3, 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = SpectralField::random(&b, &mut rng, 1.0, 1.0);
        let c = check_c_strong_monotone(&u, &u, 3.0).unwrap();
        assert_eq!((c.lhs, c.rhs), (0.0, 0.0));
        assert!(c.holds);
        let p = OperatorParams::new(1.0, 1.0, 5.0).unwrap();
        let g = check_g_local_monotone(&u, &u, &p).unwrap();
        assert_eq!(g.value, 0.0);
        assert!(g.holds);

        let v = SpectralField::random(&b, &mut rng, 1.0, 1.0);
        let c1 = check_c_strong_monotone(&u, &v, 1.0).unwrap();
        let d = (&u - &v).norm_h_sq();
        assert!((c1.lhs - d).abs() < 1e-10 * d);
        assert!((c1.rhs - d).abs() < 1e-10 * d);
    }

    #[test]
    fn mismatched_bases_are_rejected() {
        let a = BasisSet::new(2, 1.5).unwrap();
        let b = BasisSet::new(3, 1.5).unwrap();
        let u = SpectralField::zeros(&a);
        let v = SpectralField::zeros(&b);
        assert!(bilinear_b(&u, &v).is_err());
        assert!(trilinear_b(&u, &u, &v).is_err());
    }
}
