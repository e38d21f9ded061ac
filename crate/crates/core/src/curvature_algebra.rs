//! Products, contractions, hat operators, splittings and canonical tensors.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor_space::{
    ensure_same, Bil2, Curv4, Endo2Forms, Real, Space, Symmetry, Tags, Tensor4, EXACT_TOL,
};

const PROJECTION_SWEEPS: usize = 5_000;

/// `(h . k)(X,Y,Z,W) = h(X,Y) k(Z,W) + h(Z,W) k(X,Y)`.
pub fn sym_product(h: &Bil2, k: &Bil2) -> Result<Tensor4> {
    ensure_same(h.space(), k.space())?;
    let (hm, km) = (h.matrix(), k.matrix());
    Ok(Tensor4::from_fn(h.space(), |a, b, c, d| hm[(a, b)] * km[(c, d)] + hm[(c, d)] * km[(a, b)]))
}

/// Kulkarni product.
pub fn kulkarni(h: &Bil2, k: &Bil2) -> Result<Curv4> {
    ensure_same(h.space(), k.space())?;
    let (hm, km) = (h.matrix(), k.matrix());
    let s = |a: usize, b: usize, c: usize, d: usize| hm[(a, b)] * km[(c, d)] + hm[(c, d)] * km[(a, b)];
    let t = Tensor4::from_fn(h.space(), |x, y, z, w| s(x, z, y, w) - s(x, w, y, z));
    let mut tags = Tags::empty();
    match (h.symmetry(), k.symmetry()) {
        (Symmetry::Symmetric, Symmetry::Symmetric) => tags |= Tags::PAIR_SYMMETRIC | Tags::BIANCHI_CLOSED,
        (Symmetry::Antisymmetric, Symmetry::Antisymmetric) => tags |= Tags::PAIR_SYMMETRIC,
        _ => {}
    }
    Ok(Curv4::new_unchecked(t, tags))
}

/// Symmetric product of two 2-forms, as a curvature-type tensor.
pub fn sym_product_forms(h: &Bil2, k: &Bil2) -> Result<Curv4> {
    if h.symmetry() != Symmetry::Antisymmetric || k.symmetry() != Symmetry::Antisymmetric {
        return Err(Error::SymmetryViolation(Real::NAN));
    }
    Ok(Curv4::new_unchecked(sym_product(h, k)?, Tags::PAIR_SYMMETRIC))
}

/// `b(Q)(X,Y,Z,W) = Q(X,Y,Z,W) + Q(Z,X,Y,W) + Q(Y,Z,X,W)`.
pub fn bianchi_map(q: &Tensor4) -> Tensor4 {
    Tensor4::from_fn(q.space(), |x, y, z, w| q.get(x, y, z, w) + q.get(z, x, y, w) + q.get(y, z, x, w))
}

/// `c(Q)(X,Y) = sum_i Q(e_i, X, e_i, Y)`.
pub fn ricci_contraction(q: &Tensor4) -> Bil2 {
    let n = q.n();
    let m = DMatrix::from_fn(n, n, |x, y| (0..n).map(|i| q.get(i, x, i, y)).sum());
    Bil2::detect(q.space(), m).unwrap_or_else(|_| unreachable!("shape is fixed by the space"))
}

pub fn hat(q: &Tensor4) -> Endo2Forms {
    Endo2Forms::from_tensor(q)
}

pub fn unhat(e: &Endo2Forms) -> Curv4 {
    e.to_curv4()
}

/// `tr Q^ = sum_{i<j} Q(e_i, e_j, e_i, e_j)`.
pub fn hat_trace(q: &Tensor4) -> Real {
    let n = q.n();
    let mut acc = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            acc += q.get(i, j, i, j);
        }
    }
    acc
}

fn require_pair_symmetric(q: &Curv4) -> Result<()> {
    if q.tags().contains(Tags::PAIR_SYMMETRIC) {
        return Ok(());
    }
    let r = q.tag_residual(Tags::PAIR_SYMMETRIC)?;
    if r > 1e-9 * q.max_abs().max(1.0) {
        return Err(Error::TagViolation { tag: "pair_symmetric", residual: r });
    }
    Ok(())
}

/// `<P, Q> = 1/2 tr(P^ o Q^)`.
pub fn scalar_product(p: &Curv4, q: &Curv4) -> Result<Real> {
    ensure_same(p.space(), q.space())?;
    require_pair_symmetric(p)?;
    require_pair_symmetric(q)?;
    let (hp, hq) = (hat(p), hat(q));
    let (gp, gq) = (hp.grid(), hq.grid());
    let m = gp.nrows();
    let mut acc = 0.0;
    for r in 0..m {
        for c in 0..m {
            acc += gp[(r, c)] * gq[(c, r)];
        }
    }
    Ok(0.5 * acc)
}

fn quarter_split(q: &Tensor4, m: &DMatrix<Real>) -> (Tensor4, Tensor4) {
    let a = q.pull_slots(m, &[0, 1]);
    let b = q.pull_slots(m, &[2, 3]);
    let c = a.pull_slots(m, &[2, 3]);
    let plus = Tensor4::combine(&[(0.25, q), (0.25, &a), (0.25, &b), (0.25, &c)]).expect("same space");
    let minus = Tensor4::combine(&[(0.25, q), (-0.25, &a), (-0.25, &b), (0.25, &c)]).expect("same space");
    (plus, minus)
}

pub fn j_split_tensor(q: &Tensor4) -> (Tensor4, Tensor4) {
    let j = q.space().j().clone();
    quarter_split(q, &j)
}

pub fn tau_split_tensor(q: &Tensor4) -> Result<(Tensor4, Tensor4)> {
    let tau = q.space().require_tau()?.clone();
    Ok(quarter_split(q, &tau))
}

fn inherited(q: &Curv4) -> Tags {
    q.tags() & (Tags::PAIR_SYMMETRIC | Tags::PRIMITIVE)
}

/// J-invariant and J-anti-invariant parts.
pub fn j_split(q: &Curv4) -> (Curv4, Curv4) {
    let (p, m) = j_split_tensor(q);
    let keep = inherited(q) | (q.tags() & (Tags::TAU_PLUS | Tags::TAU_MINUS));
    (Curv4::new_unchecked(p, keep | Tags::J_PLUS), Curv4::new_unchecked(m, keep | Tags::J_MINUS))
}

/// tau-invariant and tau-anti-invariant parts.
pub fn tau_split(q: &Curv4) -> Result<(Curv4, Curv4)> {
    let (p, m) = tau_split_tensor(q)?;
    let keep = inherited(q) | (q.tags() & (Tags::J_PLUS | Tags::J_MINUS));
    Ok((Curv4::new_unchecked(p, keep | Tags::TAU_PLUS), Curv4::new_unchecked(m, keep | Tags::TAU_MINUS)))
}

/// Lefschetz adjoint `1/2 sum_{a,b} gamma_ab omega_ab` of a 2-form.
pub fn wedge_adjoint(gamma: &Bil2) -> Result<Real> {
    if gamma.symmetry() == Symmetry::Symmetric {
        return Err(Error::SymmetryViolation(Real::NAN));
    }
    Ok(0.5 * gamma.matrix().dot(gamma.space().omega()))
}

/// `(Q^ gamma)(X,Y) = 1/2 sum_ij Q(e_i, e_j, X, Y) gamma_ij`.
pub fn hat_apply(q: &Tensor4, gamma: &Bil2) -> Result<Bil2> {
    ensure_same(q.space(), gamma.space())?;
    let n = q.n();
    let gm = gamma.matrix();
    let m = DMatrix::from_fn(n, n, |x, y| {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += q.get(i, j, x, y) * gm[(i, j)];
            }
        }
        0.5 * acc
    });
    Bil2::detect(q.space(), m)
}

/// `(Q o s)(X,Y) = sum_ij Q(e_i, X, Y, e_j) s_ij`.
pub fn ring_action(q: &Tensor4, s: &Bil2) -> Result<Bil2> {
    ensure_same(q.space(), s.space())?;
    let n = q.n();
    let sm = s.matrix();
    let m = DMatrix::from_fn(n, n, |x, y| {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += q.get(i, x, y, j) * sm[(i, j)];
            }
        }
        acc
    });
    Bil2::detect(q.space(), m)
}

/// `Q - (1/d)(Q^ w) . w + (1/2d^2) wedge(Q^ w) w . w` for pair-symmetric `Q`.
pub fn primitive_part(q: &Curv4) -> Result<Curv4> {
    require_pair_symmetric(q)?;
    let space = q.space();
    let d = space.d() as Real;
    let om = Bil2::omega(space);
    let p = hat_apply(q, &om)?;
    let p = Bil2::new(space, p.matrix().clone(), Symmetry::Antisymmetric)?;
    let lam = wedge_adjoint(&p)?;
    let pw = sym_product(&p, &om)?;
    let ww = sym_product(&om, &om)?;
    let t = Tensor4::combine(&[(1.0, q.tensor()), (-1.0 / d, &pw), (lam / (2.0 * d * d), &ww)])?;
    let keep = q.tags() & (Tags::PAIR_SYMMETRIC | Tags::J_PLUS | Tags::J_MINUS | Tags::TAU_PLUS | Tags::TAU_MINUS);
    Ok(Curv4::new_unchecked(t, keep | Tags::PRIMITIVE))
}

/// Orthogonal removal of the `omega` component from both pairs.
pub fn primitive_projection(t: &Tensor4) -> Tensor4 {
    let space = t.space();
    let n = t.n();
    let d = space.d() as Real;
    let om = space.omega();
    let mut first = t.clone();
    for c in 0..n {
        for dd in 0..n {
            let mut lam = 0.0;
            for a in 0..n {
                for b in 0..n {
                    lam += om[(a, b)] * t.get(a, b, c, dd);
                }
            }
            lam *= 0.5 / d;
            for a in 0..n {
                for b in 0..n {
                    let i = first.idx(a, b, c, dd);
                    first.data_mut()[i] -= lam * om[(a, b)];
                }
            }
        }
    }
    let mut out = first.clone();
    for a in 0..n {
        for b in 0..n {
            let mut lam = 0.0;
            for c in 0..n {
                for dd in 0..n {
                    lam += om[(c, dd)] * first.get(a, b, c, dd);
                }
            }
            lam *= 0.5 / d;
            for c in 0..n {
                for dd in 0..n {
                    let i = out.idx(a, b, c, dd);
                    out.data_mut()[i] -= lam * om[(c, dd)];
                }
            }
        }
    }
    out
}

/// `s - (tr s / 2d) g`.
pub fn traceless_part(s: &Bil2) -> Bil2 {
    let n = s.space().dim() as Real;
    let g = Bil2::metric(s.space());
    Bil2::combine(&[(1.0, s), (-s.trace() / n, &g)]).expect("same space")
}

/// `(J* s)(X,Y) = s(JX, JY)`.
pub fn j_pullback(s: &Bil2) -> Bil2 {
    s.pulled_by(s.space().j())
}

/// `s^+- = 1/2 (s +- J* s)`.
pub fn split_sym2(s: &Bil2) -> (Bil2, Bil2) {
    let js = j_pullback(s);
    (
        Bil2::combine(&[(0.5, s), (0.5, &js)]).expect("same space"),
        Bil2::combine(&[(0.5, s), (-0.5, &js)]).expect("same space"),
    )
}

/// Antisymmetrizes in slots (1,2) and (3,4).
pub fn antisymmetrize(t: &Tensor4) -> Tensor4 {
    Tensor4::from_fn(t.space(), |a, b, c, d| {
        0.25 * ((t.get(a, b, c, d) - t.get(b, a, c, d)) - (t.get(a, b, d, c) - t.get(b, a, d, c)))
    })
}

fn pair_symmetrize(t: &Tensor4) -> Tensor4 {
    Tensor4::from_fn(t.space(), |a, b, c, d| 0.5 * (t.get(a, b, c, d) + t.get(c, d, a, b)))
}

/// Projects an arbitrary 4-tensor onto the subspace cut out by `tags`
/// (alternating projections when the Bianchi constraint is involved).
pub fn project_onto_tags(t: &Tensor4, tags: Tags) -> Result<Tensor4> {
    tags.check_consistent()?;
    let mut tags = tags;
    if tags.intersects(Tags::BIANCHI_CLOSED | Tags::PRIMITIVE) {
        tags |= Tags::PAIR_SYMMETRIC;
    }
    let sweep = |q: &Tensor4| -> Result<Tensor4> {
        let mut q = q.clone();
        if tags.contains(Tags::PAIR_SYMMETRIC) {
            q = pair_symmetrize(&q);
        }
        if tags.contains(Tags::BIANCHI_CLOSED) {
            let b = bianchi_map(&q);
            q = Tensor4::combine(&[(1.0, &q), (-1.0 / 3.0, &b)])?;
        }
        if tags.intersects(Tags::J_PLUS | Tags::J_MINUS) {
            let (p, m) = j_split_tensor(&q);
            q = if tags.contains(Tags::J_PLUS) { p } else { m };
        }
        if tags.intersects(Tags::TAU_PLUS | Tags::TAU_MINUS) {
            let (p, m) = tau_split_tensor(&q)?;
            q = if tags.contains(Tags::TAU_PLUS) { p } else { m };
        }
        if tags.contains(Tags::PRIMITIVE) {
            q = primitive_projection(&q);
        }
        Ok(q)
    };
    let mut q = sweep(&antisymmetrize(t))?;
    if !tags.contains(Tags::BIANCHI_CLOSED) {
        return Ok(q);
    }
    for _ in 0..PROJECTION_SWEEPS {
        let next = sweep(&q)?;
        let change = next.max_diff(&q)?;
        q = next;
        if change <= 1e-15 * q.max_abs().max(1e-300) {
            break;
        }
    }
    Ok(q)
}

/// Fixed tensors built from the metric, the symplectic form and the torsion.
#[derive(Debug, Clone)]
pub struct CanonicalTensors {
    pub gkg: Curv4,
    pub wkw: Curv4,
    pub wsw: Curv4,
    pub ic: Curv4,
    pub ic0: Curv4,
    pub t: Option<Curv4>,
    pub t0: Option<Curv4>,
}

pub fn canonical_tensors(space: &Space) -> Result<CanonicalTensors> {
    let g = Bil2::metric(space);
    let om = Bil2::omega(space);
    let gkg = kulkarni(&g, &g)?;
    let wkw = kulkarni(&om, &om)?;
    let wsw = sym_product_forms(&om, &om)?;
    let ic = Curv4::combine(&[(0.125, &gkg), (0.125, &wkw), (0.25, &wsw)])?
        .with_tags(Tags::PAIR_SYMMETRIC | Tags::BIANCHI_CLOSED | Tags::J_PLUS)?;
    let ic0 = primitive_part(&ic)?.with_tags(Tags::J_PLUS)?;
    let (t, t0) = if space.has_torsion() {
        let a = Bil2::torsion_a(space)?;
        let b = Bil2::torsion_b(space)?;
        let t = Curv4::combine(&[(0.125, &kulkarni(&a, &a)?), (0.125, &kulkarni(&b, &b)?)])?
            .with_tags(Tags::PAIR_SYMMETRIC | Tags::BIANCHI_CLOSED | Tags::J_PLUS)?;
        let t0 = primitive_part(&t)?.with_tags(Tags::J_PLUS)?;
        (Some(t), Some(t0))
    } else {
        (None, None)
    };
    Ok(CanonicalTensors { gkg, wkw, wsw, ic, ic0, t, t0 })
}

/// Fiberwise `Q o s` on an E-valued symmetric tensor.
pub fn ring_action_e(q: &Tensor4, s: &[Bil2]) -> Result<Vec<Bil2>> {
    s.iter().map(|c| ring_action(q, c)).collect()
}

/// Fiberwise `Q^` on an E-valued 2-form.
pub fn hat_apply_e(q: &Tensor4, gamma: &[Bil2]) -> Result<Vec<Bil2>> {
    gamma.iter().map(|c| hat_apply(q, c)).collect()
}

/// `<a, b>` summed over the fiber.
pub fn inner_e(a: &[Bil2], b: &[Bil2]) -> Result<Real> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch("fiber dimensions differ".into()));
    }
    a.iter().zip(b).map(|(x, y)| x.inner(y)).sum()
}

/// `s -> sum_i s(tau e_i, e_i)`-type trace `tr(M^T s)` for an endomorphism `M`.
pub fn twisted_trace(s: &Bil2, endo: &DMatrix<Real>) -> Real {
    (endo.transpose() * s.matrix()).trace()
}

/// Max residual helper for symmetric 2-tensors.
pub fn bil2_diff(a: &Bil2, b: &Bil2) -> Real {
    (a.matrix() - b.matrix()).iter().fold(0.0, |acc, v: &Real| acc.max(v.abs()))
}

pub fn is_exact(r: Real) -> bool {
    r <= EXACT_TOL
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::tensor_space::{make_space, random_bil2, random_curv4};
    use proptest::prelude::*;

    fn endo_diff(a: &Endo2Forms, b: &Endo2Forms) -> Real {
        (a.grid() - b.grid()).amax()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn kulkarni_of_symmetric_is_bianchi_closed(d in 1usize..=4, seed: u64) {
            let s = make_space(d, false).unwrap();
            let h = random_bil2(&s, Symmetry::Symmetric, seed);
            let k = random_bil2(&s, Symmetry::Symmetric, seed ^ 1);
            let hk = kulkarni(&h, &k).unwrap();
            prop_assert!(bianchi_map(&hk).max_abs() <= EXACT_TOL);
            prop_assert!(hk.max_diff(&kulkarni(&k, &h).unwrap()).unwrap() <= EXACT_TOL);
        }

        #[test]
        fn forms_bianchi_relation(d in 1usize..=4, seed: u64) {
            let s = make_space(d, false).unwrap();
            let h = random_bil2(&s, Symmetry::Antisymmetric, seed);
            let k = random_bil2(&s, Symmetry::Antisymmetric, seed ^ 1);
            let lhs = Tensor4::combine(&[
                (1.0, &bianchi_map(&kulkarni(&h, &k).unwrap())),
                (2.0, &bianchi_map(&sym_product_forms(&h, &k).unwrap())),
            ])
            .unwrap();
            prop_assert!(lhs.max_abs() <= EXACT_TOL);
        }

        #[test]
        fn scalar_product_symmetric_and_positive(d in 1usize..=4, seed: u64) {
            let s = make_space(d, false).unwrap();
            let p = random_curv4(&s, Tags::PAIR_SYMMETRIC, seed).unwrap();
            let q = random_curv4(&s, Tags::PAIR_SYMMETRIC, seed ^ 1).unwrap();
            let pq = scalar_product(&p, &q).unwrap();
            prop_assert!((pq - scalar_product(&q, &p).unwrap()).abs() <= EXACT_TOL * pq.abs().max(1.0));
            prop_assert!(scalar_product(&q, &q).unwrap() >= 0.0);
            prop_assert!(unhat(&hat(&q)).max_diff(&q).unwrap() == 0.0);
        }

        #[test]
        fn metric_ring_relations(d in 1usize..=4, seed: u64, fiber in prop::sample::select(vec![1usize, 3])) {
            let sp = make_space(d, false).unwrap();
            let c = canonical_tensors(&sp).unwrap();
            let g = Bil2::metric(&sp);
            let s: Vec<Bil2> = (0..fiber).map(|k| random_bil2(&sp, Symmetry::Symmetric, seed.wrapping_add(k as u64))).collect();
            for (x, gg) in s.iter().zip(ring_action_e(&c.gkg, &s).unwrap()) {
                let expected = Bil2::combine(&[(2.0, x), (-2.0 * x.trace(), &g)]).unwrap();
                prop_assert!(bil2_diff(&gg, &expected) <= EXACT_TOL);
                let (plus, minus) = split_sym2(x);
                let jj = Bil2::combine(&[(-2.0, &plus), (2.0, &minus)]).unwrap();
                prop_assert!(bil2_diff(&ring_action(&c.wkw, x).unwrap(), &jj) <= EXACT_TOL);
                prop_assert!(bil2_diff(&ring_action(&c.wsw, x).unwrap(), &jj) <= EXACT_TOL);
            }
        }

        #[test]
        fn torsion_ring_relations(d in 2usize..=4, seed: u64) {
            let sp = make_space(d, true).unwrap();
            let g = Bil2::metric(&sp);
            let a = Bil2::torsion_a(&sp).unwrap();
            let b = Bil2::torsion_b(&sp).unwrap();
            let tau = sp.require_tau().unwrap().clone();
            let jtau = sp.j() * &tau;
            let x = random_bil2(&sp, Symmetry::Symmetric, seed);
            let t2 = sp.tau_norm2().unwrap();
            for (m, endo) in [(&a, &tau), (&b, &jtau)] {
                let mm = kulkarni(m, m).unwrap();
                let expected = Bil2::combine(&[(2.0, &x.pulled_by(endo)), (-2.0 * twisted_trace(&x, endo), m)]).unwrap();
                prop_assert!(bil2_diff(&ring_action(&mm, &x).unwrap(), &expected) <= EXACT_TOL);
                prop_assert!(bil2_diff(&ricci_contraction(&mm), &g.scaled(-t2 / d as Real)) <= EXACT_TOL);
            }
        }

        #[test]
        fn opposite_j_types_compose_to_zero(d in 1usize..=3, seed: u64) {
            let s = make_space(d, false).unwrap();
            let tp = random_curv4(&s, Tags::PAIR_SYMMETRIC | Tags::J_PLUS, seed).unwrap();
            let qm = random_curv4(&s, Tags::PAIR_SYMMETRIC | Tags::J_MINUS, seed ^ 1).unwrap();
            prop_assert!(hat(&tp).compose(&hat(&qm)).unwrap().grid().amax() <= EXACT_TOL);
            prop_assert!(hat(&qm).compose(&hat(&tp)).unwrap().grid().amax() <= EXACT_TOL);
        }

        #[test]
        fn j_split_is_a_projection(d in 1usize..=3, seed: u64) {
            let s = make_space(d, false).unwrap();
            let q = random_curv4(&s, Tags::PAIR_SYMMETRIC, seed).unwrap();
            let (p, m) = j_split(&q);
            let averaged = Tensor4::combine(&[(0.5, &q), (0.5, &q.pull_slots(s.j(), &[0, 1, 2, 3]))]).unwrap();
            prop_assert!(Tensor4::combine(&[(1.0, &p), (1.0, &m)]).unwrap().max_diff(&averaged).unwrap() <= EXACT_TOL);
            prop_assert!(j_split(&p).0.max_diff(&p).unwrap() <= EXACT_TOL);
            prop_assert!(j_split(&m).1.max_diff(&m).unwrap() <= EXACT_TOL);
            prop_assert!(primitive_part(&primitive_part(&q).unwrap()).unwrap().max_diff(&primitive_part(&q).unwrap()).unwrap() <= EXACT_TOL);
        }
    }

    #[test]
    fn hat_composition_relations() {
        for d in 2..=4 {
            let s = make_space(d, true).unwrap();
            let g = Bil2::metric(&s);
            let om = Bil2::omega(&s);
            let a = Bil2::torsion_a(&s).unwrap();
            let b = Bil2::torsion_b(&s).unwrap();
            let gb = hat(&kulkarni(&g, &b).unwrap());
            let lhs = gb.compose(&hat(&kulkarni(&om, &om).unwrap())).unwrap();
            let rhs = Endo2Forms::from_tensor(&kulkarni(&om, &a).unwrap().scaled(2.0));
            assert!(endo_diff(&lhs, &rhs) <= EXACT_TOL, "d={d}");
            let lhs = gb.compose(&hat(&kulkarni(&g, &g).unwrap())).unwrap();
            let rhs = Endo2Forms::from_tensor(&kulkarni(&g, &b).unwrap().scaled(2.0));
            assert!(endo_diff(&lhs, &rhs) <= EXACT_TOL, "d={d}");
        }
    }
}
