use pseudoherm::lie_models::{
    build_model, build_model_scaled, c0_prime, commutant, kappa, model_curvature, Family,
};
use pseudoherm::pseudo_hermitian::{invariants, scalar_curvature};
use pseudoherm::tensor_space::{Curv4, Real};

fn curvature(f: Family, p: &[usize]) -> Curv4 {
    model_curvature(&build_model(f, p).unwrap()).unwrap()
}

fn families() -> Vec<(Family, Vec<usize>)> {
    vec![
        (Family::SuPq, vec![1, 1]),
        (Family::SuPq, vec![2, 1]),
        (Family::SuPq, vec![1, 2]),
        (Family::SuPq, vec![2, 2]),
        (Family::SuPq, vec![3, 1]),
        (Family::SpPR, vec![1]),
        (Family::SpPR, vec![2]),
        (Family::SpPR, vec![3]),
        (Family::SoP2, vec![3]),
        (Family::SoP2, vec![4]),
        (Family::SoStar2p, vec![3]),
        (Family::SoStar2p, vec![4]),
    ]
}

#[test]
fn rigidity_gap_positive_off_space_forms() {
    for (f, p) in families() {
        let rw = curvature(f, &p);
        let gap = c0_prime(&rw).unwrap() + kappa(&rw).unwrap();
        if f.is_space_form(&p) {
            assert!(gap.abs() <= 1e-10, "{f}{p:?}: {gap}");
        } else {
            assert!(gap > 1e-3, "{f}{p:?}: {gap}");
        }
    }
}

#[test]
fn constants_scale_inversely_with_metric() {
    for (f, p) in [(Family::SuPq, vec![2, 2]), (Family::SoP2, vec![3]), (Family::SpPR, vec![2])] {
        let base = curvature(f, &p);
        let (c0, k, s) = (c0_prime(&base).unwrap(), kappa(&base).unwrap(), scalar_curvature(&base));
        for lambda in [0.25, 3.0] {
            let rw = model_curvature(&build_model_scaled(f, &p, lambda).unwrap()).unwrap();
            let rel = |a: Real, b: Real| (a - b).abs() / b.abs();
            assert!(rel(c0_prime(&rw).unwrap() * lambda, c0) <= 1e-10);
            assert!(rel(kappa(&rw).unwrap() * lambda, k) <= 1e-10);
            assert!(rel(scalar_curvature(&rw) * lambda, s) <= 1e-10);
            assert!(rel(c0_prime(&rw).unwrap() / kappa(&rw).unwrap(), c0 / k) <= 1e-10);
        }
    }
}

#[test]
fn holonomy_commutant_is_spanned_by_identity_and_j() {
    for (f, p) in families() {
        let r = commutant(&curvature(f, &p), 3);
        assert_eq!(r.dimension, 2, "{f}{p:?}");
        assert!(r.contains_identity && r.contains_j, "{f}{p:?}");
    }
}

#[test]
fn models_are_negatively_curved_pseudo_einstein() {
    for (f, p) in families() {
        let inv = invariants(&curvature(f, &p)).unwrap();
        assert!(inv.pseudo_einstein, "{f}{p:?}");
        assert!(inv.scalar < 0.0, "{f}{p:?}");
    }
}

#[test]
fn heisenberg_is_flat() {
    let rw = curvature(Family::Heisenberg, &[2]);
    assert_eq!(rw.max_abs(), 0.0);
    let inv = invariants(&rw).unwrap();
    assert!(inv.pseudo_einstein);
    assert_eq!(inv.cm_norm2, 0.0);
}

#[test]
fn exceptional_families_are_out_of_scope() {
    for f in [Family::E6, Family::E7] {
        assert!(matches!(build_model(f, &[]), Err(pseudoherm::Error::OutOfScope(_))));
        assert!(f.table_values(&[]).unwrap().is_some());
    }
}
