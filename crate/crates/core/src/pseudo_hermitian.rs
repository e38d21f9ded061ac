//! Ricci data, Chern-Moser split, sectional curvatures and the closed-form models.

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::curvature_algebra::{
    bianchi_map, canonical_tensors, hat_apply, kulkarni, ricci_contraction, scalar_product,
    sym_product, sym_product_forms, traceless_part, wedge_adjoint,
};
use crate::error::{Error, Result};
use crate::tensor_space::{
    ensure_same, make_space, rng_from_seed, Bil2, Curv4, Real, Space, Symmetry, Tags, Tensor4, C64,
    DEFAULT_TOL,
};

pub const DEFAULT_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: Real,
    pub max: Real,
}

impl Range {
    fn empty() -> Self {
        Range { min: Real::INFINITY, max: Real::NEG_INFINITY }
    }

    fn push(&mut self, v: Real) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureRanges {
    pub samples: usize,
    pub seed: u64,
    pub sectional: Range,
    pub holomorphic: Range,
    pub complex_sectional: Range,
}

#[derive(Debug, Clone)]
pub struct InvariantReport {
    pub ric: Bil2,
    pub scalar: Real,
    pub rho: Bil2,
    pub ric0: Bil2,
    pub rho0: Bil2,
    pub cm: Curv4,
    pub cm_norm2: Real,
    pub pseudo_einstein: bool,
    pub ranges: Option<CurvatureRanges>,
}

/// The three summands of the Chern-Moser decomposition.
#[derive(Debug, Clone)]
pub struct ChernMoserSplit {
    pub scalar_part: Curv4,
    pub ricci_part: Curv4,
    pub cm: Curv4,
}

const KAHLER: Tags = Tags::PAIR_SYMMETRIC.union(Tags::BIANCHI_CLOSED).union(Tags::J_PLUS);

fn require_tags(q: &Curv4, tags: Tags) -> Result<()> {
    let missing = tags - q.tags();
    if missing.is_empty() {
        return Ok(());
    }
    q.clone().with_tags(missing).map(|_| ())
}

fn ricci_data(rw: &Curv4) -> Result<(Bil2, Real, Bil2, Bil2, Bil2)> {
    let space = rw.space();
    let d = space.d() as Real;
    let ric = ricci_contraction(rw);
    let ric = Bil2::new(space, ric.matrix().clone(), Symmetry::Symmetric)?;
    let scalar = ric.trace();
    let om = Bil2::omega(space);
    let rho = hat_apply(rw, &om)?.scaled(-1.0);
    let rho = Bil2::new(space, rho.matrix().clone(), Symmetry::Antisymmetric)?;
    let ric0 = traceless_part(&ric);
    let lam = wedge_adjoint(&rho)?;
    let rho0 = Bil2::combine(&[(1.0, &rho), (-lam / d, &om)])?;
    Ok((ric, scalar, rho, ric0, rho0))
}

pub fn chern_moser_split(rw: &Curv4) -> Result<ChernMoserSplit> {
    require_tags(rw, KAHLER)?;
    let space = rw.space();
    let dd = space.d() as Real;
    let (_, scalar, _, ric0, rho0) = ricci_data(rw)?;
    let canon = canonical_tensors(space)?;
    let g = Bil2::metric(space);
    let om = Bil2::omega(space);
    let scalar_part = canon.ic.scaled(scalar / (dd * (dd + 1.0)));
    let rg = kulkarni(&ric0, &g)?;
    let rw_ = kulkarni(&rho0, &om)?;
    let rs = sym_product_forms(&rho0, &om)?;
    let k = 1.0 / (dd + 2.0);
    let ricci_part = Curv4::combine(&[(0.5 * k, &rg), (-0.5 * k, &rw_), (-k, &rs)])?;
    let cm = Curv4::combine(&[(1.0, rw), (-1.0, &scalar_part), (-1.0, &ricci_part)])?;
    let cm = Curv4::new(cm.into_tensor(), KAHLER | Tags::PRIMITIVE)?;
    Ok(ChernMoserSplit { scalar_part, ricci_part, cm })
}

pub fn invariants(rw: &Curv4) -> Result<InvariantReport> {
    require_tags(rw, KAHLER)?;
    let space = rw.space();
    let d = space.d() as Real;
    let (ric, scalar, rho, ric0, rho0) = ricci_data(rw)?;
    let split = chern_moser_split(rw)?;
    let cm_norm2 = scalar_product(&split.cm, &split.cm)?;
    let om = Bil2::omega(space);
    let target = om.scaled(-scalar / (2.0 * d));
    let defect = (rho.matrix() - target.matrix()).iter().fold(0.0, |a: Real, v| a.max(v.abs()));
    let pseudo_einstein = defect <= DEFAULT_TOL * scalar.abs().max(1.0);
    Ok(InvariantReport { ric, scalar, rho, ric0, rho0, cm: split.cm, cm_norm2, pseudo_einstein, ranges: None })
}

pub fn invariants_sampled(rw: &Curv4, samples: usize, seed: u64) -> Result<InvariantReport> {
    let mut r = invariants(rw)?;
    r.ranges = Some(sample_curvatures(rw, samples, seed)?);
    Ok(r)
}

/// Scalar curvature `tr c(R)`.
pub fn scalar_curvature(rw: &Tensor4) -> Real {
    ricci_contraction(rw).trace()
}

/// Constant holomorphic curvature model `(s / d(d+1)) I`.
pub fn space_form(d: usize, s: Real) -> Result<Curv4> {
    space_form_on(&make_space(d, false)?, s)
}

pub fn space_form_on(space: &Space, s: Real) -> Result<Curv4> {
    let d = space.d() as Real;
    Ok(canonical_tensors(space)?.ic.scaled(s / (d * (d + 1.0))))
}

/// Curvature and Chern-Moser tensor of the model with parallel torsion,
/// normalized to `|tau|^2 = 2d`.
pub fn torsion_curvature(space: &Space, s: Real) -> Result<(Curv4, Curv4)> {
    space.require_tau()?;
    let d = space.d();
    if d < 2 {
        return Err(Error::DimensionTooSmall { required: 2, got: d });
    }
    let dd = d as Real;
    let c = canonical_tensors(space)?;
    let t = c.t.as_ref().ok_or(Error::MissingTorsion)?;
    let t0 = c.t0.as_ref().ok_or(Error::MissingTorsion)?;
    let k = s / (dd * dd);
    let rw = Curv4::combine(&[(k, &c.ic), (k, t)])?;
    let cm = Curv4::combine(&[(k / (dd + 1.0), &c.ic0), (k, t0)])?;
    Ok((rw, cm))
}

/// Torsion contribution `-1/2 (omega ^ A - g ^ B)` to the full curvature.
pub fn torsion_minus_part(space: &Space) -> Result<Curv4> {
    let g = Bil2::metric(space);
    let om = Bil2::omega(space);
    let a = Bil2::torsion_a(space)?;
    let b = Bil2::torsion_b(space)?;
    Curv4::combine(&[(-0.5, &kulkarni(&om, &a)?), (0.5, &kulkarni(&g, &b)?)])
}

/// Full horizontal curvature assembled from its J-invariant part and the torsion.
pub fn full_curvature(rw: &Curv4) -> Result<Curv4> {
    if !rw.space().has_torsion() {
        return Ok(rw.clone());
    }
    let rm = torsion_minus_part(rw.space())?;
    Curv4::combine(&[(1.0, rw), (1.0, &rm)])
}

/// Max over frame slots of `b(R) - (w(X,Y)A(Z,W) + w(Z,X)A(Y,W) + w(Y,Z)A(X,W))`.
pub fn first_bianchi_residual(rh: &Tensor4, space: &Space) -> Result<Real> {
    ensure_same(rh.space(), space)?;
    let b = bianchi_map(rh);
    let Ok(a) = space.torsion_a() else {
        return Ok(b.max_abs());
    };
    let om = space.omega();
    let expected = Tensor4::from_fn(space, |x, y, z, w| {
        om[(x, y)] * a[(z, w)] + om[(z, x)] * a[(y, w)] + om[(y, z)] * a[(x, w)]
    });
    b.max_diff(&expected)
}

/// Residual of `R(tX,tY,Z,W) - R(X,Y,Z,W) = -(s |t|^2 / 4d^3) (w . w)`.
pub fn tau_conjugation_residual(rw: &Curv4, s: Real) -> Result<Real> {
    let space = rw.space();
    let tau = space.require_tau()?;
    let d = space.d() as Real;
    let t2 = space.tau_norm2().ok_or(Error::MissingTorsion)?;
    let om = Bil2::omega(space);
    let lhs = Tensor4::combine(&[(1.0, &rw.pull_slots(tau, &[0, 1])), (-1.0, rw.tensor())])?;
    let rhs = sym_product(&om, &om)?.scaled(-s * t2 / (4.0 * d * d * d));
    lhs.max_diff(&rhs)
}

fn as_slice(v: &DVector<Real>) -> &[Real] {
    v.as_slice()
}

/// `R(X,Y,X,Y) / (|X|^2 |Y|^2 - <X,Y>^2)`.
pub fn sectional(rw: &Tensor4, x: &DVector<Real>, y: &DVector<Real>) -> Result<Real> {
    let den = x.norm_squared() * y.norm_squared() - x.dot(y).powi(2);
    if den <= 1e-12 * x.norm_squared() * y.norm_squared() || den == 0.0 {
        return Err(Error::DegeneratePlane);
    }
    Ok(rw.eval(as_slice(x), as_slice(y), as_slice(x), as_slice(y)) / den)
}

pub fn holomorphic_sectional(rw: &Tensor4, x: &DVector<Real>) -> Result<Real> {
    let jx = rw.space().j() * x;
    sectional(rw, x, &jx)
}

/// `R(Z,W,conj Z,conj W) / (|Z|^2 |W|^2 - |(Z, conj W)|^2)`.
pub fn complex_sectional(rw: &Tensor4, z: &DVector<C64>, w: &DVector<C64>) -> Result<Real> {
    let zz = z.iter().map(|c| c.norm_sqr()).sum::<Real>();
    let ww = w.iter().map(|c| c.norm_sqr()).sum::<Real>();
    let zw: C64 = z.iter().zip(w.iter()).map(|(a, b)| a * b.conj()).sum();
    let den = zz * ww - zw.norm_sqr();
    if den <= 1e-12 * zz * ww || den == 0.0 {
        return Err(Error::DegeneratePlane);
    }
    let zc: Vec<C64> = z.iter().map(|c| c.conj()).collect();
    let wc: Vec<C64> = w.iter().map(|c| c.conj()).collect();
    let num = rw.eval_complex(z.as_slice(), w.as_slice(), &zc, &wc);
    Ok(num.re / den)
}

/// Gaussian sampling of real, holomorphic and complex planes.
pub fn sample_curvatures(rw: &Tensor4, n: usize, seed: u64) -> Result<CurvatureRanges> {
    if n == 0 {
        return Err(Error::Config("sample count must be positive".into()));
    }
    let dim = rw.n();
    let mut rng = rng_from_seed(seed);
    let mut real = || DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
    let mut sec = Range::empty();
    let mut hol = Range::empty();
    let mut cpx = Range::empty();
    let mut taken = 0;
    while taken < n {
        let (x, y, xi, yi, h) = (real(), real(), real(), real(), real());
        let z = DVector::from_fn(dim, |a, _| C64::new(x[a], xi[a]));
        let w = DVector::from_fn(dim, |a, _| C64::new(y[a], yi[a]));
        match (sectional(rw, &x, &y), holomorphic_sectional(rw, &h), complex_sectional(rw, &z, &w)) {
            (Ok(a), Ok(b), Ok(c)) => {
                sec.push(a);
                hol.push(b);
                cpx.push(c);
                taken += 1;
            }
            _ => continue,
        }
    }
    Ok(CurvatureRanges { samples: n, seed, sectional: sec, holomorphic: hol, complex_sectional: cpx })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature_algebra::{j_split, primitive_part};
    use crate::tensor_space::{random_curv4, EXACT_TOL};

    #[test]
    fn space_form_invariants() {
        let rw = space_form(2, -6.0).unwrap();
        let inv = invariants(&rw).unwrap();
        assert!(inv.cm.max_abs() < 1e-12);
        let g = Bil2::metric(rw.space());
        assert!((inv.ric.matrix() - g.matrix() * -1.5).amax() < 1e-12);
        let om = Bil2::omega(rw.space());
        assert!((inv.rho.matrix() - om.matrix() * 1.5).amax() < 1e-12);
        assert!(inv.pseudo_einstein);
        assert!((inv.scalar + 6.0).abs() < 1e-12);
    }

    #[test]
    fn zero_curvature() {
        let rw = space_form(3, 0.0).unwrap();
        assert_eq!(rw.max_abs(), 0.0);
        let inv = invariants(&rw).unwrap();
        assert_eq!(inv.scalar, 0.0);
        assert_eq!(inv.cm_norm2, 0.0);
        assert!(inv.pseudo_einstein);
        let r = sample_curvatures(&rw, 10, 1).unwrap();
        assert_eq!(r.complex_sectional.max, 0.0);
    }

    #[test]
    fn holomorphic_curvature_is_constant_on_space_form() {
        let rw = space_form(2, -6.0).unwrap();
        let r = sample_curvatures(&rw, 200, 3).unwrap();
        assert!((r.holomorphic.min + 1.0).abs() < 1e-12);
        assert!((r.holomorphic.max + 1.0).abs() < 1e-12);
    }

    #[test]
    fn d1_chern_moser_vanishes() {
        let s = make_space(1, false).unwrap();
        let q = random_curv4(&s, KAHLER, 4).unwrap();
        let inv = invariants(&q).unwrap();
        assert!(inv.cm.max_abs() < 1e-12);
        assert!(inv.pseudo_einstein);
    }

    #[test]
    fn split_of_random_kahler_tensor() {
        for d in 2..=3 {
            let s = make_space(d, false).unwrap();
            let q = random_curv4(&s, KAHLER, d as u64).unwrap();
            let sp = chern_moser_split(&q).unwrap();
            let cm = &sp.cm;
            assert!(ricci_contraction(cm).max_abs() < 1e-12);
            assert!(bianchi_map(cm).max_abs() < 1e-12);
            assert!(cm.max_diff(&primitive_part(cm).unwrap()).unwrap() < 1e-12);
            assert!(cm.max_diff(&j_split(cm).0).unwrap() < 1e-12);
            let inv = invariants(&q).unwrap();
            assert!((wedge_adjoint(&inv.rho).unwrap() + inv.scalar / 2.0).abs() < 1e-12);
            assert!((inv.ric.trace() - inv.scalar).abs() < 1e-12);
            let ic = canonical_tensors(&s).unwrap().ic;
            assert!(scalar_product(cm, &ic).unwrap().abs() < 1e-12);
            assert!(scalar_product(cm, &sp.ricci_part).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn torsion_model() {
        for d in 2..=3 {
            let s = make_space(d, true).unwrap();
            let (rw, cm) = torsion_curvature(&s, -4.0).unwrap();
            let inv = invariants(&rw).unwrap();
            assert!(inv.cm.max_diff(&cm).unwrap() < 1e-9);
            assert!(inv.pseudo_einstein);
            assert!(tau_conjugation_residual(&rw, -4.0).unwrap() < 1e-9);
            let rh = full_curvature(&rw).unwrap();
            assert!(first_bianchi_residual(&rh, &s).unwrap() < 1e-9);
        }
        let s = make_space(2, true).unwrap();
        let (rw, _) = torsion_curvature(&s, -4.0).unwrap();
        let inv = invariants(&rw).unwrap();
        assert!((inv.rho.matrix() - s.omega()).amax() < 1e-12);
        let (z, _) = torsion_curvature(&s, 0.0).unwrap();
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn torsion_needs_tau() {
        let s = make_space(2, false).unwrap();
        assert!(matches!(torsion_curvature(&s, -4.0), Err(Error::MissingTorsion)));
    }

    #[test]
    fn torsion_minus_part_tau_antisymmetry() {
        let s = make_space(3, true).unwrap();
        let rm = torsion_minus_part(&s).unwrap();
        let tau = s.require_tau().unwrap();
        let a = rm.pull_slots(tau, &[0]);
        let b = rm.pull_slots(tau, &[1]);
        let sum = Tensor4::combine(&[(1.0, &a), (1.0, &b)]).unwrap();
        assert!(sum.max_abs() < EXACT_TOL);
        let j = s.j();
        let jj = rm.pull_slots(j, &[0, 1]);
        let sum = Tensor4::combine(&[(1.0, &jj), (1.0, rm.tensor())]).unwrap();
        assert!(sum.max_abs() < EXACT_TOL);
    }

    #[test]
    fn bianchi_residual_detects_failure() {
        let s = make_space(2, false).unwrap();
        let q = random_curv4(&s, Tags::PAIR_SYMMETRIC, 9).unwrap();
        assert!(first_bianchi_residual(&q, &s).unwrap() > 1e-3);
        let k = random_curv4(&s, Tags::PAIR_SYMMETRIC | Tags::BIANCHI_CLOSED, 9).unwrap();
        assert!(first_bianchi_residual(&k, &s).unwrap() < 1e-12);
    }

    #[test]
    fn degenerate_planes() {
        let rw = space_form(2, -6.0).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(sectional(&rw, &x, &(&x * 2.0)), Err(Error::DegeneratePlane)));
        let z = x.map(|v| C64::new(v, 0.0));
        let w = &z * C64::new(0.0, 3.0);
        assert!(matches!(complex_sectional(&rw, &z, &w), Err(Error::DegeneratePlane)));
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::curvature_algebra::split_sym2;
    use crate::tensor_space::{gaussian_vector, random_bil2, random_curv4, EXACT_TOL};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn chern_moser_split_reconstructs(d in 1usize..=4, seed: u64) {
            let s = make_space(d, false).unwrap();
            let rw = random_curv4(&s, KAHLER, seed).unwrap();
            let split = chern_moser_split(&rw).unwrap();
            let sum = Tensor4::combine(&[(1.0, &split.scalar_part), (1.0, &split.ricci_part), (1.0, &split.cm)]).unwrap();
            prop_assert!(sum.max_diff(&rw).unwrap() <= DEFAULT_TOL);
            prop_assert!(ricci_contraction(&split.cm).matrix().amax() <= DEFAULT_TOL);
        }

        #[test]
        fn chern_moser_orthogonal_to_trace_terms(d in 2usize..=4, seed: u64) {
            let s = make_space(d, false).unwrap();
            let rw = random_curv4(&s, KAHLER, seed).unwrap();
            let cm = invariants(&rw).unwrap().cm;
            let ic = canonical_tensors(&s).unwrap().ic;
            prop_assert!(scalar_product(&cm, &ic).unwrap().abs() <= DEFAULT_TOL);
            let h = traceless_part(&split_sym2(&random_bil2(&s, Symmetry::Symmetric, seed ^ 7)).0);
            let hg = kulkarni(&h, &Bil2::metric(&s)).unwrap();
            prop_assert!(scalar_product(&cm, &hg).unwrap().abs() <= DEFAULT_TOL);
        }

        #[test]
        fn space_form_has_constant_holomorphic_curvature(d in 1usize..=4, s in -10.0f64..-0.1, seed: u64) {
            let rw = space_form(d, s).unwrap();
            let inv = invariants(&rw).unwrap();
            prop_assert!(inv.cm_norm2.abs() <= DEFAULT_TOL);
            prop_assert!((inv.scalar - s).abs() <= DEFAULT_TOL * s.abs());
            let r = sample_curvatures(&rw, 20, seed).unwrap();
            prop_assert!(r.holomorphic.max - r.holomorphic.min <= DEFAULT_TOL * s.abs());
            prop_assert!(r.complex_sectional.max <= DEFAULT_TOL);
        }

        #[test]
        fn torsion_minus_part_anticommutes_with_tau(d in 2usize..=4, seed: u64) {
            let s = make_space(d, true).unwrap();
            let rm = torsion_minus_part(&s).unwrap();
            let tau = s.require_tau().unwrap();
            let lhs = rm.pull_slots(tau, &[0]);
            let rhs = rm.pull_slots(tau, &[1]).scaled(-1.0);
            prop_assert!(lhs.max_diff(&rhs).unwrap() <= EXACT_TOL);
            let mut rng = rng_from_seed(seed);
            let x = gaussian_vector(&mut rng, 2 * d);
            let y = gaussian_vector(&mut rng, 2 * d);
            let tx = tau * &x;
            let ty = tau * &y;
            let a = rm.eval(tx.as_slice(), y.as_slice(), x.as_slice(), y.as_slice());
            let b = rm.eval(x.as_slice(), ty.as_slice(), x.as_slice(), y.as_slice());
            prop_assert!((a + b).abs() <= 1e-10 * (1.0 + a.abs()));
        }

        #[test]
        fn torsion_model_is_pseudo_einstein(d in 2usize..=3, s in -10.0f64..-0.1) {
            let sp = make_space(d, true).unwrap();
            let (rw, cm) = torsion_curvature(&sp, s).unwrap();
            let inv = invariants(&rw).unwrap();
            prop_assert!(inv.pseudo_einstein);
            prop_assert!(inv.cm.max_diff(&cm).unwrap() <= DEFAULT_TOL);
            prop_assert!(tau_conjugation_residual(&rw, s).unwrap() <= DEFAULT_TOL);
            prop_assert!(first_bianchi_residual(&full_curvature(&rw).unwrap(), &sp).unwrap() <= DEFAULT_TOL);
        }
    }
}
