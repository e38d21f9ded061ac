//! Q-tensors, synthetic horizontal/CR map data and the pointwise identity
//! suite behind the Bochner-type formulas for maps.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curvature_algebra::{
    bianchi_map, canonical_tensors, hat, hat_apply, hat_trace, j_split, kulkarni, project_onto_tags,
    ricci_contraction, ring_action, scalar_product, split_sym2, sym_product, twisted_trace,
    wedge_adjoint,
};
use crate::error::{Error, Result};
use crate::lie_models::{cm_corrected_tensor, traceless_symmetric_basis};
use crate::pseudo_hermitian::{chern_moser_split, full_curvature, space_form_on};
use crate::tensor_space::{
    complexify, ensure_same, gaussian_matrix, gaussian_vector, make_space, random_bil2_with,
    random_curv4_with, rng_from_seed, Bil2, Curv4, Real, Space, Symmetry, Tags, Tensor4, C64,
};

/// A negative control counts as detected when its residual reaches this floor.
pub const NEGATIVE_CONTROL_FLOOR: Real = 1e-3;
pub const DEFAULT_FIBER_DIM: usize = 3;

const KAHLER: Tags = Tags::PAIR_SYMMETRIC.union(Tags::BIANCHI_CLOSED).union(Tags::J_PLUS);
const MAP_TOL: Real = 1e-9;

/// Admissibility class of a Q-tensor: J-anti-invariant, or J-invariant and primitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QClass {
    Minus,
    Plus0,
}

impl QClass {
    pub fn tags(self) -> Tags {
        match self {
            QClass::Minus => Tags::PAIR_SYMMETRIC | Tags::J_MINUS,
            QClass::Plus0 => Tags::PAIR_SYMMETRIC | Tags::J_PLUS | Tags::PRIMITIVE,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            QClass::Minus => "minus",
            QClass::Plus0 => "plus0",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QVariant {
    /// `(g ^ g)^-`.
    MetricMinus,
    /// `(g ^ g)_0^+`.
    MetricPlus0,
    /// `c0 I_0 + C^M` built from a curvature tensor.
    CmCorrected,
    /// `(g ^ g)^-` restricted to the tau-invariant part.
    TorsionMinus,
    /// tau-anti-invariant part of `I_0`.
    TorsionPlus0,
}

impl QVariant {
    pub const ALL: [QVariant; 5] = [
        QVariant::MetricMinus,
        QVariant::MetricPlus0,
        QVariant::CmCorrected,
        QVariant::TorsionMinus,
        QVariant::TorsionPlus0,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            QVariant::MetricMinus => "metric_minus",
            QVariant::MetricPlus0 => "metric_plus0",
            QVariant::CmCorrected => "cm_corrected",
            QVariant::TorsionMinus => "torsion_minus",
            QVariant::TorsionPlus0 => "torsion_plus0",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        QVariant::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown Q variant '{s}'")))
    }

    pub fn class(self) -> QClass {
        match self {
            QVariant::MetricMinus | QVariant::TorsionMinus => QClass::Minus,
            _ => QClass::Plus0,
        }
    }

    pub fn needs_torsion(self) -> bool {
        matches!(self, QVariant::TorsionMinus | QVariant::TorsionPlus0)
    }

    /// Closed-form `tr Q^`, when it does not depend on a curvature argument.
    pub fn expected_trace(self, d: usize) -> Option<Real> {
        let d = d as Real;
        match self {
            QVariant::MetricMinus => Some(2.0 * d * (d - 1.0)),
            QVariant::MetricPlus0 => Some(2.0 * (d * d - 1.0)),
            QVariant::CmCorrected => None,
            QVariant::TorsionMinus => Some(d * (d - 1.0)),
            QVariant::TorsionPlus0 => Some((d - 1.0) * (d + 2.0) / 4.0),
        }
    }

    /// Closed-form multiple `c` with `c_H(Q) = c g`.
    pub fn expected_ricci_factor(self, d: usize) -> Option<Real> {
        let d = d as Real;
        match self {
            QVariant::MetricMinus => Some(2.0 * (d - 1.0)),
            QVariant::MetricPlus0 => Some(2.0 * d * (1.0 - 1.0 / (d * d))),
            QVariant::CmCorrected => None,
            QVariant::TorsionMinus => Some(d - 1.0),
            QVariant::TorsionPlus0 => Some((d - 1.0) * (d + 2.0) / (4.0 * d)),
        }
    }
}

/// Builds one of the fixed Q-tensors. `curvature` is required by `CmCorrected` only.
pub fn canonical_q(space: &Space, variant: QVariant, curvature: Option<&Curv4>) -> Result<Curv4> {
    let d = space.d();
    if variant.class() == QClass::Plus0 && d < 2 {
        return Err(Error::DimensionTooSmall { required: 2, got: d });
    }
    if variant.needs_torsion() {
        space.require_tau()?;
    }
    let c = canonical_tensors(space)?;
    let dd = d as Real;
    let q = match variant {
        QVariant::MetricMinus => {
            Curv4::combine(&[(0.5, &c.gkg), (-0.5, &c.wkw)])?.with_tags(Tags::J_MINUS)?
        }
        QVariant::MetricPlus0 => Curv4::combine(&[(0.5, &c.gkg), (0.5, &c.wkw), (-1.0 / dd, &c.wsw)])?
            .with_tags(Tags::PAIR_SYMMETRIC | Tags::J_PLUS | Tags::PRIMITIVE)?,
        QVariant::CmCorrected => {
            let rw = curvature.ok_or(Error::MissingArgument("cm_corrected needs a curvature tensor"))?;
            ensure_same(rw.space(), space)?;
            cm_corrected_tensor(rw)?.with_tags(Tags::PAIR_SYMMETRIC | Tags::J_PLUS | Tags::PRIMITIVE)?
        }
        QVariant::TorsionMinus => {
            let a = Bil2::torsion_a(space)?;
            let b = Bil2::torsion_b(space)?;
            let aa = kulkarni(&a, &a)?;
            let bb = kulkarni(&b, &b)?;
            Curv4::combine(&[(0.25, &c.gkg), (-0.25, &c.wkw), (0.25, &aa), (-0.25, &bb)])?
                .with_tags(Tags::J_MINUS | Tags::TAU_PLUS)?
        }
        QVariant::TorsionPlus0 => {
            let t0 = c.t0.as_ref().ok_or(Error::MissingTorsion)?;
            Curv4::combine(&[(0.5, &c.ic0), (-0.5, t0)])?
                .with_tags(Tags::PAIR_SYMMETRIC | Tags::J_PLUS | Tags::PRIMITIVE | Tags::TAU_MINUS)?
        }
    };
    Ok(q)
}

/// Draws random Q-tensors of a class subject to `(c_H Q)_0 = 0`.
///
/// A projected Gaussian tensor is corrected by `Pi(g ^ s)` for the traceless `s`
/// that cancels the traceless Ricci contraction (least squares through a pseudo-inverse).
#[derive(Debug, Clone)]
pub struct AdmissibleSampler {
    space: Space,
    class: QClass,
    images: Vec<Tensor4>,
    basis: Vec<DMatrix<Real>>,
    solve: DMatrix<Real>,
}

impl AdmissibleSampler {
    pub fn new(space: &Space, class: QClass) -> Result<Self> {
        if class == QClass::Plus0 && space.d() < 2 {
            return Err(Error::DimensionTooSmall { required: 2, got: space.d() });
        }
        let g = Bil2::metric(space);
        let basis = traceless_symmetric_basis(space.dim());
        let images = basis
            .iter()
            .map(|m| {
                let s = Bil2::new(space, m.clone(), Symmetry::Symmetric)?;
                project_onto_tags(kulkarni(&g, &s)?.tensor(), class.tags())
            })
            .collect::<Result<Vec<_>>>()?;
        let m = basis.len();
        let mut l = DMatrix::zeros(m, m);
        for (col, img) in images.iter().enumerate() {
            let c = traceless_coords(&ricci_contraction(img), &basis);
            l.set_column(col, &c);
        }
        let solve = l.pseudo_inverse(1e-10).map_err(|e| Error::Numerical(e.to_string()))?;
        Ok(AdmissibleSampler { space: space.clone(), class, images, basis, solve })
    }

    pub fn class(&self) -> QClass {
        self.class
    }

    /// Projected Gaussian tensor without the Ricci correction.
    pub fn sample_unconstrained(&self, rng: &mut ChaCha8Rng) -> Result<Curv4> {
        random_curv4_with(&self.space, self.class.tags(), rng)
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Curv4> {
        let raw = self.sample_unconstrained(rng)?;
        self.correct(&raw)
    }

    /// Removes the traceless Ricci contraction of a tensor of this class.
    pub fn correct(&self, raw: &Curv4) -> Result<Curv4> {
        ensure_same(raw.space(), &self.space)?;
        let rhs = traceless_coords(&ricci_contraction(raw), &self.basis);
        let x = &self.solve * rhs;
        let mut terms: Vec<(Real, &Tensor4)> = vec![(1.0, raw.tensor())];
        for (c, img) in x.iter().zip(&self.images) {
            terms.push((-c, img));
        }
        let q = Tensor4::combine(&terms)?;
        let out = Curv4::new(q, self.class.tags())?;
        let resid = ricci_traceless_residual(&out);
        if resid > 1e-9 * out.max_abs().max(1.0) {
            return Err(Error::Numerical(format!("Ricci correction left residual {resid:e}")));
        }
        Ok(out)
    }
}

fn traceless_coords(s: &Bil2, basis: &[DMatrix<Real>]) -> DVector<Real> {
    DVector::from_iterator(basis.len(), basis.iter().map(|b| b.dot(s.matrix())))
}

/// `max |(c_H Q)_0|`.
pub fn ricci_traceless_residual(q: &Tensor4) -> Real {
    let c = ricci_contraction(q);
    let n = q.n() as Real;
    let shift = c.trace() / n;
    let m = c.matrix() - DMatrix::identity(q.n(), q.n()) * shift;
    m.amax()
}

/// Pointwise data of a horizontal map at one point.
///
/// `nabla_sym[k]` is the `k`-th target component of the symmetrized covariant
/// derivative, `dphi_xi` the horizontal part of the image of the Reeb field.
#[derive(Debug, Clone)]
pub struct MapDatum {
    source: Space,
    target: Space,
    f: Real,
    dphi: DMatrix<Real>,
    dphi_xi: DVector<Real>,
    nabla_sym: Vec<DMatrix<Real>>,
    is_cr: bool,
}

impl MapDatum {
    pub fn new(
        source: &Space,
        target: &Space,
        f: Real,
        dphi: DMatrix<Real>,
        dphi_xi: DVector<Real>,
        nabla_sym: Vec<DMatrix<Real>>,
        is_cr: bool,
    ) -> Result<Self> {
        let (n, np) = (source.dim(), target.dim());
        if dphi.shape() != (np, n) {
            return Err(Error::ShapeMismatch(format!("dphi must be {np}x{n}, got {:?}", dphi.shape())));
        }
        if dphi_xi.len() != np || nabla_sym.len() != np {
            return Err(Error::ShapeMismatch("fiber data must have one entry per target frame vector".into()));
        }
        for s in &nabla_sym {
            if s.shape() != (n, n) {
                return Err(Error::ShapeMismatch("nabla_sym components must be square on the source".into()));
            }
            let r = (s - s.transpose()).amax();
            if r > MAP_TOL * s.amax().max(1.0) {
                return Err(Error::SymmetryViolation(r));
            }
        }
        if !f.is_finite() {
            return Err(Error::Config("f must be finite".into()));
        }
        let m = MapDatum { source: source.clone(), target: target.clone(), f, dphi, dphi_xi, nabla_sym, is_cr };
        if is_cr {
            let r = m.cr_residual();
            if r > MAP_TOL {
                return Err(Error::ModelInvariant { what: "CR compatibility".into(), residual: r });
            }
        }
        Ok(m)
    }

    /// Generic horizontal datum: Gaussian differential and derivatives, `f = 1`.
    pub fn random(source: &Space, target: &Space, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (n, np) = (source.dim(), target.dim());
        let dphi = gaussian_matrix(rng, np, n);
        let dphi_xi = gaussian_vector(rng, np);
        let nabla_sym = (0..np).map(|_| random_bil2_with(source, Symmetry::Symmetric, rng).into_matrix()).collect();
        MapDatum::new(source, target, 1.0, dphi, dphi_xi, nabla_sym, false)
    }

    /// CR datum with `phi* g' = f g`: the differential is `sqrt f` times a
    /// complex isometry, and the derivative satisfies `nabla(dphi)(X, JY) = J' nabla(dphi)(X, Y)`.
    pub fn random_cr(source: &Space, target: &Space, f: Real, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (d, dp) = (source.d(), target.d());
        if d > dp {
            return Err(Error::DimensionTooSmall { required: d, got: dp });
        }
        if !(f.is_finite() && f > 0.0) {
            return Err(Error::Config("CR factor f must be positive".into()));
        }
        let re = gaussian_matrix(rng, dp, d);
        let im = gaussian_matrix(rng, dp, d);
        let z = DMatrix::from_fn(dp, d, |i, j| C64::new(re[(i, j)], im[(i, j)]));
        let u = z.qr().q();
        let sf = f.sqrt();
        let mut dphi = DMatrix::zeros(2 * dp, 2 * d);
        for i in 0..dp {
            for j in 0..d {
                let c = u[(i, j)] * sf;
                dphi[(i, j)] = c.re;
                dphi[(i, j + d)] = -c.im;
                dphi[(i + dp, j)] = c.im;
                dphi[(i + dp, j + d)] = c.re;
            }
        }
        let v = gaussian_vector(rng, 2 * dp);
        let jv = target.j() * &v;
        let raw: Vec<DMatrix<Real>> =
            (0..2 * dp).map(|_| random_bil2_with(source, Symmetry::Symmetric, rng).into_matrix()).collect();
        let p = cr_project(&raw, source.j(), target.j());
        let g = source.metric();
        let nabla_sym = p.into_iter().enumerate().map(|(k, s)| s + g * jv[k]).collect();
        MapDatum::new(source, target, f, dphi, v, nabla_sym, true)
    }

    /// The identity of a space as a CR map with vanishing derivatives.
    pub fn identity(space: &Space) -> Result<Self> {
        let n = space.dim();
        MapDatum::new(
            space,
            space,
            1.0,
            DMatrix::identity(n, n),
            DVector::zeros(n),
            vec![DMatrix::zeros(n, n); n],
            true,
        )
    }

    pub fn source(&self) -> &Space {
        &self.source
    }

    pub fn target(&self) -> &Space {
        &self.target
    }

    pub fn f(&self) -> Real {
        self.f
    }

    pub fn dphi(&self) -> &DMatrix<Real> {
        &self.dphi
    }

    pub fn dphi_xi(&self) -> &DVector<Real> {
        &self.dphi_xi
    }

    pub fn nabla_sym(&self) -> &[DMatrix<Real>] {
        &self.nabla_sym
    }

    pub fn is_cr(&self) -> bool {
        self.is_cr
    }

    /// Symmetrized derivative as fiber components on the source.
    pub fn nabla_sym_forms(&self) -> Vec<Bil2> {
        self.nabla_sym.iter().map(|m| Bil2::new_unchecked(&self.source, m.clone(), Symmetry::Symmetric)).collect()
    }

    /// Antisymmetric part `-omega (x) dphi(xi)` of the covariant derivative.
    pub fn antisymmetric_part(&self) -> Vec<Bil2> {
        let om = self.source.omega();
        self.dphi_xi
            .iter()
            .map(|&v| Bil2::new_unchecked(&self.source, om * (-v), Symmetry::Antisymmetric))
            .collect()
    }

    /// `nabla(dphi) = 1/2 (sym part + antisymmetric part)` per fiber component.
    pub fn covariant_derivative(&self) -> Vec<DMatrix<Real>> {
        let om = self.source.omega();
        self.nabla_sym.iter().zip(self.dphi_xi.iter()).map(|(s, &v)| (s - om * v) * 0.5).collect()
    }

    /// `delta(dphi) = -sum_a nabla(dphi)(e_a, e_a)`.
    pub fn codifferential(&self) -> DVector<Real> {
        let nd = self.covariant_derivative();
        DVector::from_iterator(nd.len(), nd.iter().map(|m| -m.trace()))
    }

    /// `delta(dphi o J) = -sum_a nabla(dphi)(e_a, J e_a)`.
    pub fn codifferential_j(&self) -> DVector<Real> {
        let j = self.source.j();
        let nd = self.covariant_derivative();
        DVector::from_iterator(nd.len(), nd.iter().map(|m| -(m * j).trace()))
    }

    /// Max of the CR defects: `J' dphi - dphi J`, `dphi^T dphi - f g` and the
    /// J-linearity of the covariant derivative in its second slot.
    pub fn cr_residual(&self) -> Real {
        let jt = self.target.j();
        let js = self.source.j();
        let r1 = (jt * &self.dphi - &self.dphi * js).amax();
        let n = self.source.dim();
        let r2 = (self.dphi.transpose() * &self.dphi - DMatrix::identity(n, n) * self.f).amax();
        let nd = self.covariant_derivative();
        let mut r3: Real = 0.0;
        for k in 0..nd.len() {
            let mut rhs = DMatrix::zeros(n, n);
            for (l, m) in nd.iter().enumerate() {
                if jt[(k, l)] != 0.0 {
                    rhs += m * jt[(k, l)];
                }
            }
            r3 = r3.max((&nd[k] * js - rhs).amax());
        }
        r1.max(r2).max(r3)
    }
}

/// `P(S)(X,Y) = 1/4 (S - J'S(X,JY) - J'S(JX,Y) - S(JX,JY))`.
fn cr_project(s: &[DMatrix<Real>], js: &DMatrix<Real>, jt: &DMatrix<Real>) -> Vec<DMatrix<Real>> {
    let sxj: Vec<DMatrix<Real>> = s.iter().map(|m| m * js).collect();
    let sjx: Vec<DMatrix<Real>> = s.iter().map(|m| js.transpose() * m).collect();
    (0..s.len())
        .map(|k| {
            let mut acc = &s[k] - js.transpose() * &s[k] * js;
            for l in 0..s.len() {
                let c = jt[(k, l)];
                if c != 0.0 {
                    acc -= (&sxj[l] + &sjx[l]) * c;
                }
            }
            acc * 0.25
        })
        .collect()
}

/// `(phi* t)(X,Y) = t(dphi X, dphi Y)`.
pub fn pullback2(t: &Bil2, m: &MapDatum) -> Result<Bil2> {
    ensure_same(t.space(), &m.target)?;
    let out = m.dphi.transpose() * t.matrix() * &m.dphi;
    match t.symmetry() {
        Symmetry::General => Ok(Bil2::new_unchecked(&m.source, out, Symmetry::General)),
        s => Bil2::new(&m.source, out, s),
    }
}

/// Pullback of a 4-tensor on all four slots.
pub fn pullback4(q: &Curv4, m: &MapDatum) -> Result<Curv4> {
    ensure_same(q.space(), &m.target)?;
    let np = m.target.dim();
    let n = m.source.dim();
    let f = &m.dphi;
    // Contract the leading slot and rotate it to the back, four times.
    let mut dims = [np; 4];
    let mut cur: Vec<Real> = q.data().to_vec();
    for _ in 0..4 {
        let [d0, d1, d2, d3] = dims;
        let rest = d1 * d2 * d3;
        let mut next = vec![0.0; rest * n];
        for a in 0..d0 {
            let row = &cur[a * rest..(a + 1) * rest];
            for x in 0..n {
                let c = f[(a, x)];
                if c == 0.0 {
                    continue;
                }
                for (r, &v) in row.iter().enumerate() {
                    next[r * n + x] += c * v;
                }
            }
        }
        cur = next;
        dims = [d1, d2, d3, n];
    }
    let t = Tensor4::from_vec(&m.source, cur)?;
    let mut keep = Tags::PAIR_SYMMETRIC | Tags::BIANCHI_CLOSED;
    if m.is_cr {
        keep |= Tags::J_PLUS | Tags::J_MINUS;
    }
    Ok(Curv4::new_unchecked(t, q.tags() & keep))
}

/// Named pointwise terms of the Bochner-type integrands for one map datum.
#[derive(Debug, Clone, Serialize)]
pub struct MsyTermReport {
    /// `<Q o S_0, S_0>` for `Q = (g ^ g)^-`.
    pub ring_minus: Real,
    /// `<Q o S_0, S_0>` for `Q = (g ^ g)_0^+` (needs d >= 2).
    pub ring_plus0: Option<Real>,
    pub trace_minus: Real,
    pub trace_plus0: Option<Real>,
    /// `|delta(dphi)|^2` with `delta = -1/2 tr S`.
    pub delta_norm2: Real,
    /// `|dphi(xi)|^2`.
    pub vertical_norm2: Real,
    /// `<Q, phi* R'>` for the two metric Q-tensors.
    pub curvature_minus: Real,
    pub curvature_plus0: Option<Real>,
    pub r20: Real,
    pub r11: Real,
    pub hbk: Real,
    pub k: Real,
}

impl MsyTermReport {
    fn values(&self) -> Vec<Real> {
        let mut v = vec![
            self.ring_minus,
            self.trace_minus,
            self.delta_norm2,
            self.vertical_norm2,
            self.curvature_minus,
            self.r20,
            self.r11,
            self.hbk,
            self.k,
        ];
        v.extend([self.ring_plus0, self.trace_plus0, self.curvature_plus0].into_iter().flatten());
        v
    }
}

/// Traceless shift `S_0 = S + (1/d) g delta` with `delta = -1/2 tr S`.
pub fn traceless_shift(s: &[Bil2]) -> Result<(Vec<Bil2>, DVector<Real>)> {
    let Some(first) = s.first() else {
        return Ok((Vec::new(), DVector::zeros(0)));
    };
    let space = first.space().clone();
    let g = Bil2::metric(&space);
    let d = space.d() as Real;
    let delta = DVector::from_iterator(s.len(), s.iter().map(|c| -0.5 * c.trace()));
    let shifted = s
        .iter()
        .zip(delta.iter())
        .map(|(c, &dl)| Bil2::combine(&[(1.0, c), (dl / d, &g)]))
        .collect::<Result<Vec<_>>>()?;
    Ok((shifted, delta))
}

fn ring_pairing(q: &Tensor4, s: &[Bil2]) -> Result<Real> {
    let mut acc = 0.0;
    for c in s {
        acc += ring_action(q, c)?.inner(c)?;
    }
    Ok(acc)
}

pub fn curvature_terms(q_target: &Curv4, m: &MapDatum) -> Result<MsyTermReport> {
    let space = &m.source;
    let d = space.d();
    let pulled = pullback4(q_target, m)?;
    let (s0, delta) = traceless_shift(&m.nabla_sym_forms())?;
    let qm = canonical_q(space, QVariant::MetricMinus, None)?;
    let qp = if d >= 2 { Some(canonical_q(space, QVariant::MetricPlus0, None)?) } else { None };
    let pair = |q: &Curv4| scalar_product(q, &pulled);
    let ring_plus0 = qp.as_ref().map(|q| ring_pairing(q, &s0)).transpose()?;
    let curvature_plus0 = qp.as_ref().map(pair).transpose()?;

    let frame = complexify(space);
    let z = frame.vectors();
    let zc: Vec<DVector<C64>> = z.iter().map(|v| v.map(|c| c.conj())).collect();
    let (mut r20, mut r11) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
    for i in 0..d {
        for j in 0..d {
            r20 += pulled.eval_complex(z[i].as_slice(), z[j].as_slice(), zc[i].as_slice(), zc[j].as_slice());
            r11 += pulled.eval_complex(z[i].as_slice(), zc[j].as_slice(), zc[i].as_slice(), z[j].as_slice());
        }
    }

    let jt = m.target.j();
    let cols: Vec<DVector<Real>> = (0..d).map(|i| m.dphi.column(i).into_owned()).collect();
    let jcols: Vec<DVector<Real>> = cols.iter().map(|c| jt * c).collect();
    let (mut hbk, mut k) = (0.0, 0.0);
    for i in 0..d {
        for j in 0..d {
            hbk += q_target.eval(cols[i].as_slice(), jcols[i].as_slice(), cols[j].as_slice(), jcols[j].as_slice());
            k += q_target.eval(cols[i].as_slice(), cols[j].as_slice(), cols[i].as_slice(), cols[j].as_slice());
        }
    }

    let report = MsyTermReport {
        ring_minus: ring_pairing(&qm, &s0)?,
        ring_plus0,
        trace_minus: hat_trace(&qm),
        trace_plus0: qp.as_ref().map(|q| hat_trace(q)),
        delta_norm2: delta.norm_squared(),
        vertical_norm2: m.dphi_xi.norm_squared(),
        curvature_minus: pair(&qm)?,
        curvature_plus0,
        r20: r20.re,
        r11: r11.re,
        hbk,
        k,
    };
    if report.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite term in map report".into()));
    }
    Ok(report)
}

/// One evaluated identity: `residual = |lhs - rhs|` (max over components).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub residual: Real,
    /// Negative controls must break: they pass when the residual is large.
    pub control: bool,
}

impl IdentityCheck {
    fn exact(name: impl Into<String>, residual: Real) -> Self {
        IdentityCheck { name: name.into(), residual, control: false }
    }

    fn control(name: impl Into<String>, residual: Real) -> Self {
        IdentityCheck { name: name.into(), residual, control: true }
    }

    pub fn passes(&self, tol: Real) -> bool {
        if self.control {
            self.residual >= NEGATIVE_CONTROL_FLOOR
        } else {
            self.residual <= tol
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialReport {
    pub d: usize,
    pub d_prime: usize,
    pub fiber_dim: usize,
    pub seed: u64,
    pub checks: Vec<IdentityCheck>,
}

impl TrialReport {
    pub fn failures(&self, tol: Real) -> Vec<&IdentityCheck> {
        self.checks.iter().filter(|c| !c.passes(tol)).collect()
    }
}

fn max_abs_vec(v: &DVector<Real>) -> Real {
    v.amax()
}

fn bil2_residual(a: &Bil2, b: &Bil2) -> Real {
    (a.matrix() - b.matrix()).amax()
}

/// Symmetrized Ricci contraction of `R^ o Q^`.
fn composition_ricci(r: &Tensor4, q: &Tensor4) -> Result<DMatrix<Real>> {
    let t = hat(r).compose(&hat(q))?.to_tensor();
    let mu = ricci_contraction(&t).into_matrix();
    Ok(&mu + mu.transpose())
}

/// `<(b(Q) - Q)^ d_H, d_H>` for `d_H = -omega (x) v`.
fn vertical_lhs(q: &Tensor4, v: &DVector<Real>) -> Result<Real> {
    let space = q.space();
    let defect = Tensor4::combine(&[(1.0, &bianchi_map(q)), (-1.0, q)])?;
    let om = Bil2::omega(space);
    let mut acc = 0.0;
    for &vk in v.iter() {
        let dh = om.scaled(-vk);
        acc += hat_apply(&defect, &dh)?.inner(&dh)?;
    }
    Ok(acc)
}

/// Both sides of an identity, flattened.
struct Sides {
    lhs: Vec<Real>,
    rhs: Vec<Real>,
}

impl Sides {
    fn scalar(lhs: Real, rhs: Real) -> Self {
        Sides { lhs: vec![lhs], rhs: vec![rhs] }
    }

    fn matrix(lhs: &DMatrix<Real>, rhs: &DMatrix<Real>) -> Self {
        Sides { lhs: lhs.as_slice().to_vec(), rhs: rhs.as_slice().to_vec() }
    }

    fn vector(lhs: &DVector<Real>, rhs: &DVector<Real>) -> Self {
        Sides { lhs: lhs.as_slice().to_vec(), rhs: rhs.as_slice().to_vec() }
    }

    fn abs(&self) -> Real {
        self.lhs.iter().zip(&self.rhs).fold(0.0, |a, (x, y)| a.max((x - y).abs()))
    }

    /// Deviation relative to the larger side, so controls do not depend on the data scale.
    fn relative(&self) -> Real {
        let amax = |v: &[Real]| v.iter().fold(0.0, |a: Real, x| a.max(x.abs()));
        let scale = amax(&self.lhs).max(amax(&self.rhs));
        if scale == 0.0 {
            0.0
        } else {
            self.abs() / scale
        }
    }
}

fn sigma_trace_sides(q: &Curv4, s: &[Bil2]) -> Result<Sides> {
    let d = q.space().d() as Real;
    let (s0, delta) = traceless_shift(s)?;
    let lhs = ring_pairing(q, s)?;
    let rhs = ring_pairing(q, &s0)? - hat_trace(q) / (d * d) * delta.norm_squared();
    Ok(Sides::scalar(lhs, rhs))
}

/// `1/2 sum Q . phi* R'_H` against `4 <Q, phi* R'> - 2 <Q o phi* B', phi* g'>`.
fn curvature_pairing_sides(q: &Curv4, m: &MapDatum, rw_target: &Curv4, drop_torsion: bool) -> Result<Sides> {
    let rh = if drop_torsion { rw_target.clone() } else { full_curvature(rw_target)? };
    let lhs = 0.5 * q.contract(pullback4(&rh, m)?.tensor())?;
    let pw = pullback4(rw_target, m)?;
    let pb = pullback2(&Bil2::torsion_b(&m.target)?, m)?;
    let pg = pullback2(&Bil2::metric(&m.target), m)?;
    let rhs = 4.0 * scalar_product(q, &pw)? - 2.0 * ring_action(q, &pb)?.inner(&pg)?;
    Ok(Sides::scalar(lhs, rhs))
}

fn composition_minus_sides(q: &Curv4, rh: &Tensor4) -> Result<Sides> {
    let space = q.space();
    let d = space.d() as Real;
    let b = Bil2::torsion_b(space)?;
    let lhs = composition_ricci(rh, q)?;
    let rb = ring_action(q, &b)?;
    let rhs = (b.matrix() * (hat_trace(q) / d) - rb.matrix()) * 2.0;
    Ok(Sides::matrix(&lhs, &rhs))
}

/// Runs every identity and negative control for one seeded trial.
pub fn identity_suite(d: usize, d_prime: usize, fiber_dim: usize, seed: u64) -> Result<TrialReport> {
    let minus = AdmissibleSampler::new(&make_space(d, true)?, QClass::Minus)?;
    let plus0 = AdmissibleSampler::new(minus.space(), QClass::Plus0)?;
    identity_suite_with(&minus, &plus0, d_prime, fiber_dim, seed)
}

impl AdmissibleSampler {
    pub fn space(&self) -> &Space {
        &self.space
    }
}

fn identity_suite_with(
    minus: &AdmissibleSampler,
    plus0: &AdmissibleSampler,
    d_prime: usize,
    fiber_dim: usize,
    seed: u64,
) -> Result<TrialReport> {
    let src = minus.space().clone();
    let d = src.d();
    if d < 2 {
        return Err(Error::DimensionTooSmall { required: 2, got: d });
    }
    if d_prime < d {
        return Err(Error::DimensionTooSmall { required: d, got: d_prime });
    }
    if fiber_dim == 0 {
        return Err(Error::Config("fiber dimension must be positive".into()));
    }
    let tgt = make_space(d_prime, true)?;
    let mut rng = rng_from_seed(seed);
    let dd = d as Real;

    let rw_src = random_curv4_with(&src, KAHLER, &mut rng)?;
    let rw_tgt = random_curv4_with(&tgt, KAHLER, &mut rng)?;
    let rh_src = full_curvature(&rw_src)?;

    let mut qs: Vec<(String, Curv4)> = Vec::new();
    for v in QVariant::ALL {
        qs.push((v.tag().to_string(), canonical_q(&src, v, Some(&rw_src))?));
    }
    qs.push(("random_minus".into(), minus.sample(&mut rng)?));
    qs.push(("random_plus0".into(), plus0.sample(&mut rng)?));
    let class_of = |name: &str| -> QClass {
        match name {
            "random_minus" => QClass::Minus,
            "random_plus0" => QClass::Plus0,
            other => QVariant::parse(other).map(|v| v.class()).unwrap_or(QClass::Minus),
        }
    };

    let s_e: Vec<Bil2> = (0..fiber_dim).map(|_| random_bil2_with(&src, Symmetry::Symmetric, &mut rng)).collect();
    let v_e = gaussian_vector(&mut rng, fiber_dim);
    let datum = MapDatum::random(&src, &tgt, &mut rng)?;
    let f = rng.gen_range(0.5..2.0);
    let cr = MapDatum::random_cr(&src, &tgt, f, &mut rng)?;
    let s_prime = rng.gen_range(-3.0..3.0);

    let mut checks = Vec::new();

    for (name, q) in &qs {
        checks.push(IdentityCheck::exact(format!("sigma_trace_split/{name}"), sigma_trace_sides(q, &s_e)?.abs()));
    }
    for (name, q) in &qs {
        let lhs = vertical_lhs(q, &v_e)?;
        let tr = hat_trace(q) * v_e.norm_squared();
        let rhs = match class_of(name) {
            QClass::Minus => tr,
            QClass::Plus0 => -tr,
        };
        let id = format!("vertical_term_{}/{name}", class_of(name).tag());
        checks.push(IdentityCheck::exact(id, (lhs - rhs).abs()));
    }
    {
        let q = random_curv4_with(&src, Tags::PAIR_SYMMETRIC, &mut rng)?;
        let defect = Curv4::new(Tensor4::combine(&[(1.0, &bianchi_map(&q)), (-1.0, &q)])?, Tags::PAIR_SYMMETRIC)?;
        let wsw = sym_product(&Bil2::omega(&src), &Bil2::omega(&src))?;
        let wsw = Curv4::new(wsw, Tags::PAIR_SYMMETRIC)?;
        let (qp, qm) = j_split(&q);
        let lhs = scalar_product(&defect, &wsw)?;
        let rhs = hat_trace(&qm) - hat_trace(&qp);
        checks.push(IdentityCheck::exact("bianchi_defect_pairing", (lhs - rhs).abs()));
    }
    for (name, q) in &qs {
        checks.push(IdentityCheck::exact(
            format!("curvature_pairing/{name}"),
            curvature_pairing_sides(q, &datum, &rw_tgt, false)?.abs(),
        ));
    }
    for (name, q) in &qs {
        match class_of(name) {
            QClass::Plus0 => {
                let lhs = composition_ricci(&rh_src, q)?;
                let rhs = composition_ricci(&rw_src, q)?;
                checks.push(IdentityCheck::exact(format!("composition_plus0/{name}"), (lhs - rhs).amax()));
            }
            QClass::Minus => {
                checks.push(IdentityCheck::exact(
                    format!("composition_minus/{name}"),
                    composition_minus_sides(q, &rh_src)?.abs(),
                ));
            }
        }
    }

    let terms = curvature_terms(&rw_tgt, &datum)?;
    let pulled = pullback4(&rw_tgt, &datum)?;
    let qm = canonical_q(&src, QVariant::MetricMinus, None)?;
    let qp = canonical_q(&src, QVariant::MetricPlus0, None)?;
    checks.push(IdentityCheck::exact("complex_terms_minus", (scalar_product(&qm, &pulled)? - terms.r20).abs()));
    checks.push(IdentityCheck::exact(
        "complex_terms_plus0",
        (scalar_product(&qp, &pulled)? - (terms.r20 / dd + (1.0 - 1.0 / dd) * terms.r11)).abs(),
    ));
    checks.push(IdentityCheck::exact(
        "curvature_terms_consistent",
        (terms.curvature_minus - scalar_product(&qm, &pulled)?)
            .abs()
            .max((terms.curvature_plus0.unwrap_or(0.0) - scalar_product(&qp, &pulled)?).abs()),
    ));

    {
        let nd = datum.covariant_derivative();
        let om = src.omega();
        let mut r: Real = 0.0;
        for (k, m) in nd.iter().enumerate() {
            let dh = m - m.transpose();
            r = r.max((&dh + om * datum.dphi_xi[k]).amax());
            let lam = wedge_adjoint(&Bil2::new_unchecked(&src, dh, Symmetry::Antisymmetric))?;
            r = r.max((lam + dd * datum.dphi_xi[k]).abs());
        }
        checks.push(IdentityCheck::exact("antisymmetric_part", r));
    }
    {
        let v = cr.dphi_xi();
        let jd = tgt.j() * cr.codifferential();
        let r = max_abs_vec(&(jd - v * dd)).max(max_abs_vec(&(cr.codifferential_j() - v * dd)));
        checks.push(IdentityCheck::exact("cr_codifferential", r));
    }
    {
        let pg = pullback2(&Bil2::metric(&tgt), &cr)?;
        checks.push(IdentityCheck::exact("cr_pullback_metric", bil2_residual(&pg, &Bil2::metric(&src).scaled(f))));
        let pb = pullback2(&Bil2::torsion_b(&tgt)?, &cr)?;
        checks.push(IdentityCheck::exact("cr_pullback_torsion_plus", split_sym2(&pb).0.max_abs()));
    }
    {
        let dpp = d_prime as Real;
        let sf = space_form_on(&tgt, s_prime)?;
        let pulled_sf = pullback4(&sf, &cr)?;
        let ic = canonical_tensors(&src)?.ic;
        let expected = ic.scaled(f * f * s_prime / (dpp * (dpp + 1.0)));
        checks.push(IdentityCheck::exact("space_form_pullback", pulled_sf.max_diff(&expected)?));
        let cm = chern_moser_split(&rw_src)?.cm;
        let pulled_sf = Curv4::new(pulled_sf.into_tensor(), Tags::PAIR_SYMMETRIC)?;
        checks.push(IdentityCheck::exact(
            "chern_moser_pullback_orthogonal",
            scalar_product(&cm, &pulled_sf)?.abs(),
        ));
        let t = curvature_terms(&sf, &cr)?;
        let (hbk, k) = space_form_constants(d, d_prime, f, s_prime);
        checks.push(IdentityCheck::exact("space_form_hbk", (t.hbk - hbk).abs()));
        checks.push(IdentityCheck::exact("space_form_k_combination", ((1.0 - 1.0 / dd) * t.hbk - t.k - k).abs()));
    }

    // Negative controls: each drops one hypothesis of an identity above.
    // Their residuals are relative to the size of the two sides.
    {
        let base = minus.sample(&mut rng)?;
        let raw = ricci_perturbed(&base, &mut rng)?;
        checks.push(IdentityCheck::control(
            "control/sigma_trace_split_ricci_perturbed",
            sigma_trace_sides(&raw, &s_e)?.relative(),
        ));
        checks.push(IdentityCheck::control(
            "control/composition_minus_ricci_perturbed",
            composition_minus_sides(&raw, &rh_src)?.relative(),
        ));
        let qp = plus0.sample(&mut rng)?;
        let wrong = Sides::scalar(vertical_lhs(&qp, &v_e)?, hat_trace(&qp) * v_e.norm_squared());
        checks.push(IdentityCheck::control("control/vertical_term_wrong_class", wrong.relative()));
        let q = &qs[0].1;
        checks.push(IdentityCheck::control(
            "control/curvature_pairing_torsion_dropped",
            curvature_pairing_sides(q, &datum, &rw_tgt, true)?.relative(),
        ));
        let jd = tgt.j() * datum.codifferential();
        checks.push(IdentityCheck::control(
            "control/cr_codifferential_non_cr",
            Sides::vector(&jd, &(datum.dphi_xi() * dd)).relative(),
        ));
    }

    Ok(TrialReport { d, d_prime, fiber_dim, seed, checks })
}

/// Adds `g ^ s_0` for a random traceless `s_0`, which breaks `(c_H Q)_0 = 0`.
fn ricci_perturbed(q: &Curv4, rng: &mut ChaCha8Rng) -> Result<Curv4> {
    let space = q.space();
    let s = random_bil2_with(space, Symmetry::Symmetric, rng);
    let s0 = crate::curvature_algebra::traceless_part(&s);
    let gs = kulkarni(&Bil2::metric(space), &s0)?;
    Curv4::combine(&[(1.0, q), (1.0, &gs)])
}

/// Closed forms `(HBK, (1 - 1/d) HBK - K)` for a CR map into a space form.
pub fn space_form_constants(d: usize, d_prime: usize, f: Real, s_prime: Real) -> (Real, Real) {
    let (dd, dp) = (d as Real, d_prime as Real);
    let denom = dp * (dp + 1.0);
    (
        0.5 * f * f * dd * (dd + 1.0) / denom * s_prime,
        0.25 * f * f * (dd - 1.0) * (dd + 2.0) / denom * s_prime,
    )
}

/// Runs the suite for every `(d, d')` pair and seed, ordered by pair then seed.
pub fn run_identity_suite(dims: &[(usize, usize)], fiber_dim: usize, seeds: &[u64]) -> Result<Vec<TrialReport>> {
    let mut out = Vec::with_capacity(dims.len() * seeds.len());
    for &(d, dp) in dims {
        let minus = AdmissibleSampler::new(&make_space(d, true)?, QClass::Minus)?;
        let plus0 = AdmissibleSampler::new(minus.space(), QClass::Plus0)?;
        let mut sorted = seeds.to_vec();
        sorted.sort_unstable();
        for seed in sorted {
            out.push(identity_suite_with(&minus, &plus0, dp, fiber_dim, seed)?);
        }
    }
    Ok(out)
}

/// Per-identity aggregate over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub name: String,
    pub control: bool,
    pub trials: usize,
    pub max_residual: Real,
    pub min_residual: Real,
    /// Seed and dimensions of the trial closest to failing.
    pub worst_seed: u64,
    pub worst_dims: (usize, usize),
    pub pass: bool,
}

/// Aggregates trials by identity name (sorted by name). With `as_identities`,
/// negative controls are judged like ordinary identities and therefore fail.
pub fn summarize(trials: &[TrialReport], tol: Real, as_identities: bool) -> Vec<SuiteSummary> {
    let mut map: BTreeMap<String, SuiteSummary> = BTreeMap::new();
    for t in trials {
        for c in &t.checks {
            let control = c.control && !as_identities;
            let e = map.entry(c.name.clone()).or_insert_with(|| SuiteSummary {
                name: c.name.clone(),
                control,
                trials: 0,
                max_residual: Real::NEG_INFINITY,
                min_residual: Real::INFINITY,
                worst_seed: t.seed,
                worst_dims: (t.d, t.d_prime),
                pass: true,
            });
            e.trials += 1;
            let worse = if control { c.residual < e.min_residual } else { c.residual > e.max_residual };
            if worse {
                e.worst_seed = t.seed;
                e.worst_dims = (t.d, t.d_prime);
            }
            e.max_residual = e.max_residual.max(c.residual);
            e.min_residual = e.min_residual.min(c.residual);
            let ok = if control { c.residual >= NEGATIVE_CONTROL_FLOOR } else { c.residual <= tol };
            e.pass &= ok && c.residual.is_finite();
        }
    }
    map.into_values().collect()
}

fn closed_form_checks(
    prefix: &str,
    q: &Curv4,
    s: &Bil2,
    gamma: &Bil2,
    ring: &Bil2,
    hat_img: &Bil2,
    ricci_factor: Real,
    trace: Real,
) -> Result<Vec<IdentityCheck>> {
    let g = Bil2::metric(q.space());
    Ok(vec![
        IdentityCheck::exact(format!("{prefix}/ring"), bil2_residual(&ring_action(q, s)?, ring)),
        IdentityCheck::exact(format!("{prefix}/hat"), bil2_residual(&hat_apply(q, gamma)?, hat_img)),
        IdentityCheck::exact(format!("{prefix}/ricci"), bil2_residual(&ricci_contraction(q), &g.scaled(ricci_factor))),
        IdentityCheck::exact(format!("{prefix}/trace"), (hat_trace(q) - trace).abs()),
    ])
}

/// Action of the metric tensors `g^g`, `w^w`, `w.w` on random symmetric
/// tensors and 2-forms against closed forms.
pub fn metric_operator_relations(d: usize, seed: u64) -> Result<Vec<IdentityCheck>> {
    let space = make_space(d, false)?;
    let mut rng = rng_from_seed(seed);
    let s = random_bil2_with(&space, Symmetry::Symmetric, &mut rng);
    let gamma = random_bil2_with(&space, Symmetry::Antisymmetric, &mut rng);
    let c = canonical_tensors(&space)?;
    let g = Bil2::metric(&space);
    let om = Bil2::omega(&space);
    let dd = d as Real;
    let js = s.pulled_by(space.j());
    let jg = gamma.pulled_by(space.j());
    let lam = wedge_adjoint(&gamma)?;

    let mut out = closed_form_checks(
        "metric_operator_relations/g_kulkarni_g",
        &c.gkg,
        &s,
        &gamma,
        &Bil2::combine(&[(2.0, &s), (-2.0 * s.trace(), &g)])?,
        &gamma.scaled(2.0),
        2.0 * (2.0 * dd - 1.0),
        2.0 * dd * (2.0 * dd - 1.0),
    )?;
    out.extend(closed_form_checks(
        "metric_operator_relations/omega_kulkarni_omega",
        &c.wkw,
        &s,
        &gamma,
        &js.scaled(-2.0),
        &jg.scaled(2.0),
        2.0,
        2.0 * dd,
    )?);
    out.extend(closed_form_checks(
        "metric_operator_relations/omega_sym_omega",
        &c.wsw,
        &s,
        &gamma,
        &js.scaled(-2.0),
        &om.scaled(2.0 * lam),
        2.0,
        2.0 * dd,
    )?);
    Ok(out)
}

/// Same checks for the torsion tensors `A^A` and `B^B`.
pub fn torsion_operator_relations(d: usize, seed: u64) -> Result<Vec<IdentityCheck>> {
    let space = make_space(d, true)?;
    let mut rng = rng_from_seed(seed);
    let s = random_bil2_with(&space, Symmetry::Symmetric, &mut rng);
    let gamma = random_bil2_with(&space, Symmetry::Antisymmetric, &mut rng);
    let dd = d as Real;
    let tau = space.require_tau()?.clone();
    let jtau = space.j() * &tau;
    let mut out = Vec::new();
    for (label, endo, form) in [
        ("a_kulkarni_a", &tau, Bil2::torsion_a(&space)?),
        ("b_kulkarni_b", &jtau, Bil2::torsion_b(&space)?),
    ] {
        let q = kulkarni(&form, &form)?;
        let ring = Bil2::combine(&[(2.0, &s.pulled_by(endo)), (-2.0 * twisted_trace(&s, endo), &form)])?;
        out.extend(closed_form_checks(
            &format!("torsion_operator_relations/{label}"),
            &q,
            &s,
            &gamma,
            &ring,
            &gamma.pulled_by(endo).scaled(2.0),
            -2.0,
            -2.0 * dd,
        )?);
    }
    Ok(out)
}
