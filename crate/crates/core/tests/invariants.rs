use std::sync::Arc;

use proptest::prelude::*;

use scbf::operators::{check_c_strong_monotone, nonlinear_c, trilinear_b};
use scbf::spectral::{apply_a, transform_roundtrip};
use scbf::{BasisSet, SpectralField};

fn basis() -> Arc<BasisSet> {
    BasisSet::new(3, 1.5).unwrap()
}

fn coords() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, basis().dim())
}

fn field(b: &Arc<BasisSet>) -> impl Strategy<Value = SpectralField> {
    let b = b.clone();
    coords().prop_map(move |c| SpectralField::from_coords(&b, &c).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn coords_are_orthonormal(c in coords()) {
        let b = basis();
        let u = SpectralField::from_coords(&b, &c).unwrap();
        let back = u.coords();
        for (x, y) in c.iter().zip(&back) {
            prop_assert!((x - y).abs() < 1e-13);
        }
        let sq: f64 = c.iter().map(|x| x * x).sum();
        prop_assert!((u.norm_h_sq() - sq).abs() <= 1e-12 * sq.max(1.0));
    }

    #[test]
    fn physical_grid_is_lossless(u in field(&basis())) {
        prop_assert!(transform_roundtrip(&u).max_rel_diff(&u) < 1e-12);
    }

    #[test]
    fn poincare_and_stokes_pairing(u in field(&basis())) {
        let b = u.basis().clone();
        let v2 = u.norm_v_sq();
        prop_assert!(v2 >= b.lambda_1() * u.norm_h_sq() * (1.0 - 1e-12));
        prop_assert!((u.inner(&apply_a(&u)) - v2).abs() <= 1e-10 * v2.max(1.0));
    }

    #[test]
    fn convection_is_skew(u in field(&basis()), v in field(&basis()), w in field(&basis())) {
        let bvv = trilinear_b(&u, &v, &v).unwrap();
        let bvw = trilinear_b(&u, &v, &w).unwrap();
        let bwv = trilinear_b(&u, &w, &v).unwrap();
        let scale = u.norm_v() * v.norm_v() * w.norm_v() + 1.0;
        prop_assert!(bvv.abs() <= 1e-10 * scale);
        prop_assert!((bvw + bwv).abs() <= 1e-10 * scale);
    }

    #[test]
    fn damping_is_monotone(u in field(&basis()), v in field(&basis()), r in prop::sample::select(vec![1.0, 2.0, 3.0, 5.0])) {
        let cert = check_c_strong_monotone(&u, &v, r).unwrap();
        prop_assert!(cert.holds, "{cert:?}");
        let cu = nonlinear_c(&u, r).unwrap();
        prop_assert!(u.inner(&cu) >= -1e-12);
    }

    #[test]
    fn scaling_is_linear(u in field(&basis()), s in -3.0f64..3.0) {
        let w = u.scale(s);
        prop_assert!((w.norm_h() - s.abs() * u.norm_h()).abs() <= 1e-12 * (1.0 + u.norm_h()));
        let mut z = u.clone();
        z.axpy(-1.0, &u);
        prop_assert_eq!(z.norm_h(), 0.0);
    }
}

#[test]
fn mismatched_bases_are_rejected() {
    let a = SpectralField::zeros(&BasisSet::new(2, 1.5).unwrap());
    let b = SpectralField::zeros(&BasisSet::new(3, 1.5).unwrap());
    assert!(a.check_compatible(&b).is_err());
    assert!(trilinear_b(&a, &a, &b).is_err());
    assert!(BasisSet::new(0, 1.5).is_err());
}
