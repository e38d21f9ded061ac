//! Frame geometry of the horizontal space and the tensor containers built on it.
//!
//! Everything is stored in the adapted frame `e_1..e_d, Je_1..Je_d` where the
//! metric is the identity.

use std::ops::Deref;
use std::sync::Arc;

use bitflags::bitflags;
use nalgebra::{Complex, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::curvature_algebra as ca;
use crate::error::{Error, Result};

pub type Real = f64;
pub type C64 = Complex<Real>;

/// Tolerance for identities that only involve short sums of products.
pub const EXACT_TOL: Real = 1e-12;
/// Global comparison tolerance.
pub const DEFAULT_TOL: Real = 1e-9;
const TAG_TOL: Real = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct HorizontalSpace {
    d: usize,
    g: DMatrix<Real>,
    j: DMatrix<Real>,
    omega: DMatrix<Real>,
    tau: Option<DMatrix<Real>>,
    a: Option<DMatrix<Real>>,
    b: Option<DMatrix<Real>>,
}

pub type Space = Arc<HorizontalSpace>;

/// Builds the adapted frame of half-dimension `d`, optionally with the
/// paracomplex torsion `+1` on `span{e_i}` and `-1` on `span{Je_i}`.
pub fn make_space(d: usize, with_torsion: bool) -> Result<Space> {
    if d == 0 {
        return Err(Error::InvalidDimension(d));
    }
    let n = 2 * d;
    let mut j = DMatrix::zeros(n, n);
    for i in 0..d {
        j[(i + d, i)] = 1.0;
        j[(i, i + d)] = -1.0;
    }
    let g = DMatrix::identity(n, n);
    let omega = j.transpose();
    let (tau, a, b) = if with_torsion {
        let tau = DMatrix::from_fn(n, n, |r, c| {
            if r != c {
                0.0
            } else if r < d {
                1.0
            } else {
                -1.0
            }
        });
        let a = tau.clone();
        let b = (&j * &tau).transpose();
        (Some(tau), Some(a), Some(b))
    } else {
        (None, None, None)
    };
    Ok(Arc::new(HorizontalSpace { d, g, j, omega, tau, a, b }))
}

/// Residuals of the structural identities of a space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StructureResiduals {
    pub j_square: Real,
    pub metric_j_invariance: Real,
    pub omega_antisymmetry: Real,
    pub omega_compatibility: Real,
    pub tau_square: Option<Real>,
    pub tau_symmetry: Option<Real>,
    pub tau_anticommutes: Option<Real>,
    pub tau_trace: Option<Real>,
    pub tau_norm_defect: Option<Real>,
}

impl StructureResiduals {
    pub fn max(&self) -> Real {
        [
            Some(self.j_square),
            Some(self.metric_j_invariance),
            Some(self.omega_antisymmetry),
            Some(self.omega_compatibility),
            self.tau_square,
            self.tau_symmetry,
            self.tau_anticommutes,
            self.tau_trace,
            self.tau_norm_defect,
        ]
        .into_iter()
        .flatten()
        .fold(0.0, Real::max)
    }
}

fn max_abs(m: &DMatrix<Real>) -> Real {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

impl HorizontalSpace {
    pub fn d(&self) -> usize {
        self.d
    }

    /// Real dimension `2d`.
    pub fn dim(&self) -> usize {
        2 * self.d
    }

    pub fn metric(&self) -> &DMatrix<Real> {
        &self.g
    }

    pub fn j(&self) -> &DMatrix<Real> {
        &self.j
    }

    /// Component grid `omega[(a, b)] = g(J e_a, e_b)`.
    pub fn omega(&self) -> &DMatrix<Real> {
        &self.omega
    }

    pub fn tau(&self) -> Option<&DMatrix<Real>> {
        self.tau.as_ref()
    }

    pub fn has_torsion(&self) -> bool {
        self.tau.is_some()
    }

    pub fn require_tau(&self) -> Result<&DMatrix<Real>> {
        self.tau.as_ref().ok_or(Error::MissingTorsion)
    }

    pub fn torsion_a(&self) -> Result<&DMatrix<Real>> {
        self.a.as_ref().ok_or(Error::MissingTorsion)
    }

    pub fn torsion_b(&self) -> Result<&DMatrix<Real>> {
        self.b.as_ref().ok_or(Error::MissingTorsion)
    }

    /// `|tau|^2 = sum_a g(tau e_a, tau e_a)`.
    pub fn tau_norm2(&self) -> Option<Real> {
        self.tau.as_ref().map(|t| t.iter().map(|v| v * v).sum())
    }

    pub fn structure_residuals(&self) -> StructureResiduals {
        let n = self.dim();
        let id = DMatrix::<Real>::identity(n, n);
        let j = &self.j;
        let jt = j.transpose();
        let mut r = StructureResiduals {
            j_square: max_abs(&(j * j + &id)),
            metric_j_invariance: max_abs(&(&jt * &self.g * j - &self.g)),
            omega_antisymmetry: max_abs(&(&self.omega + self.omega.transpose())),
            omega_compatibility: max_abs(&(&self.omega - (&self.g * j).transpose())),
            tau_square: None,
            tau_symmetry: None,
            tau_anticommutes: None,
            tau_trace: None,
            tau_norm_defect: None,
        };
        if let Some(t) = &self.tau {
            r.tau_square = Some(max_abs(&(t * t - &id)));
            r.tau_symmetry = Some(max_abs(&(&self.g * t - (&self.g * t).transpose())));
            r.tau_anticommutes = Some(max_abs(&(t * j + j * t)));
            r.tau_trace = Some(t.trace().abs());
            r.tau_norm_defect = Some((self.tau_norm2().unwrap_or(0.0) - n as Real).abs());
        }
        r
    }
}

pub fn ensure_same(a: &Space, b: &Space) -> Result<()> {
    if Arc::ptr_eq(a, b) || **a == **b {
        Ok(())
    } else {
        Err(Error::SpaceMismatch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    Symmetric,
    Antisymmetric,
    General,
}

/// Bilinear form on the horizontal space.
#[derive(Debug, Clone)]
pub struct Bil2 {
    space: Space,
    m: DMatrix<Real>,
    symmetry: Symmetry,
}

fn symmetry_residual(m: &DMatrix<Real>, symmetry: Symmetry) -> Real {
    match symmetry {
        Symmetry::Symmetric => max_abs(&(m - m.transpose())),
        Symmetry::Antisymmetric => max_abs(&(m + m.transpose())),
        Symmetry::General => 0.0,
    }
}

impl Bil2 {
    pub fn new(space: &Space, m: DMatrix<Real>, symmetry: Symmetry) -> Result<Self> {
        let n = space.dim();
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::ShapeMismatch(format!(
                "expected {n}x{n} grid, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let res = symmetry_residual(&m, symmetry);
        if res > TAG_TOL * max_abs(&m).max(1.0) {
            return Err(Error::SymmetryViolation(res));
        }
        Ok(Bil2 { space: space.clone(), m, symmetry })
    }

    pub(crate) fn new_unchecked(space: &Space, m: DMatrix<Real>, symmetry: Symmetry) -> Self {
        Bil2 { space: space.clone(), m, symmetry }
    }

    /// Wraps a grid, tagging it with whatever symmetry it satisfies exactly enough.
    pub fn detect(space: &Space, m: DMatrix<Real>) -> Result<Self> {
        let scale = max_abs(&m).max(1.0) * EXACT_TOL;
        let symmetry = if symmetry_residual(&m, Symmetry::Symmetric) <= scale {
            Symmetry::Symmetric
        } else if symmetry_residual(&m, Symmetry::Antisymmetric) <= scale {
            Symmetry::Antisymmetric
        } else {
            Symmetry::General
        };
        Bil2::new(space, m, symmetry)
    }

    pub fn zeros(space: &Space, symmetry: Symmetry) -> Self {
        let n = space.dim();
        Bil2::new_unchecked(space, DMatrix::zeros(n, n), symmetry)
    }

    pub fn metric(space: &Space) -> Self {
        Bil2::new_unchecked(space, space.metric().clone(), Symmetry::Symmetric)
    }

    pub fn omega(space: &Space) -> Self {
        Bil2::new_unchecked(space, space.omega().clone(), Symmetry::Antisymmetric)
    }

    pub fn torsion_a(space: &Space) -> Result<Self> {
        Ok(Bil2::new_unchecked(space, space.torsion_a()?.clone(), Symmetry::Symmetric))
    }

    pub fn torsion_b(space: &Space) -> Result<Self> {
        Ok(Bil2::new_unchecked(space, space.torsion_b()?.clone(), Symmetry::Symmetric))
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn matrix(&self) -> &DMatrix<Real> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<Real> {
        self.m
    }

    pub fn symmetry(&self) -> Symmetry {
        self.symmetry
    }

    pub fn get(&self, i: usize, j: usize) -> Real {
        self.m[(i, j)]
    }

    pub fn eval(&self, x: &DVector<Real>, y: &DVector<Real>) -> Real {
        (x.transpose() * &self.m * y)[(0, 0)]
    }

    pub fn trace(&self) -> Real {
        self.m.trace()
    }

    pub fn max_abs(&self) -> Real {
        max_abs(&self.m)
    }

    pub fn scaled(&self, c: Real) -> Self {
        Bil2::new_unchecked(&self.space, &self.m * c, self.symmetry)
    }

    /// Linear combination; the symmetry tag survives only if all terms share it.
    pub fn combine(terms: &[(Real, &Bil2)]) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::ShapeMismatch("empty combination".into()))?
            .1;
        let n = first.space.dim();
        let mut m = DMatrix::zeros(n, n);
        let mut sym = first.symmetry;
        for (c, t) in terms {
            ensure_same(&first.space, &t.space)?;
            if t.symmetry != sym {
                sym = Symmetry::General;
            }
            m += &t.m * *c;
        }
        Ok(Bil2::new_unchecked(&first.space, m, sym))
    }

    /// `<a, b> = 1/2 sum a_ij b_ij`.
    pub fn inner(&self, other: &Bil2) -> Result<Real> {
        ensure_same(&self.space, &other.space)?;
        Ok(0.5 * self.m.dot(&other.m))
    }

    pub fn norm2(&self) -> Real {
        0.5 * self.m.dot(&self.m)
    }

    /// `(X, Y) -> t(M X, M Y)` for an endomorphism `M` of the frame.
    pub fn pulled_by(&self, endo: &DMatrix<Real>) -> Self {
        Bil2::new_unchecked(&self.space, endo.transpose() * &self.m * endo, self.symmetry)
    }
}

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
    pub struct Tags: u8 {
        const PAIR_SYMMETRIC = 1;
        const BIANCHI_CLOSED = 1 << 1;
        const J_PLUS = 1 << 2;
        const J_MINUS = 1 << 3;
        const TAU_PLUS = 1 << 4;
        const TAU_MINUS = 1 << 5;
        const PRIMITIVE = 1 << 6;
    }
}

impl Tags {
    pub fn check_consistent(self) -> Result<()> {
        if self.contains(Tags::J_PLUS | Tags::J_MINUS) {
            return Err(Error::ContradictoryTags("j_plus and j_minus".into()));
        }
        if self.contains(Tags::TAU_PLUS | Tags::TAU_MINUS) {
            return Err(Error::ContradictoryTags("tau_plus and tau_minus".into()));
        }
        Ok(())
    }

    pub fn label(self) -> &'static str {
        match self {
            t if t == Tags::PAIR_SYMMETRIC => "pair_symmetric",
            t if t == Tags::BIANCHI_CLOSED => "bianchi_closed",
            t if t == Tags::J_PLUS => "j_plus",
            t if t == Tags::J_MINUS => "j_minus",
            t if t == Tags::TAU_PLUS => "tau_plus",
            t if t == Tags::TAU_MINUS => "tau_minus",
            t if t == Tags::PRIMITIVE => "primitive",
            _ => "compound",
        }
    }
}

/// Dense 4-tensor on the horizontal space, no symmetry assumed.
#[derive(Debug, Clone)]
pub struct Tensor4 {
    space: Space,
    n: usize,
    data: Vec<Real>,
}

impl Tensor4 {
    pub fn zeros(space: &Space) -> Self {
        let n = space.dim();
        Tensor4 { space: space.clone(), n, data: vec![0.0; n * n * n * n] }
    }

    pub fn from_fn(space: &Space, mut f: impl FnMut(usize, usize, usize, usize) -> Real) -> Self {
        let mut t = Tensor4::zeros(space);
        let n = t.n;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        t.data[((a * n + b) * n + c) * n + d] = f(a, b, c, d);
                    }
                }
            }
        }
        t
    }

    pub fn from_vec(space: &Space, data: Vec<Real>) -> Result<Self> {
        let n = space.dim();
        if data.len() != n * n * n * n {
            return Err(Error::ShapeMismatch(format!("expected {} entries", n * n * n * n)));
        }
        Ok(Tensor4 { space: space.clone(), n, data })
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn idx(&self, a: usize, b: usize, c: usize, d: usize) -> usize {
        ((a * self.n + b) * self.n + c) * self.n + d
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> Real {
        self.data[self.idx(a, b, c, d)]
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn max_abs(&self) -> Real {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn scaled(&self, c: Real) -> Self {
        Tensor4 { space: self.space.clone(), n: self.n, data: self.data.iter().map(|v| v * c).collect() }
    }

    pub fn combine(terms: &[(Real, &Tensor4)]) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::ShapeMismatch("empty combination".into()))?
            .1;
        let mut out = Tensor4::zeros(&first.space);
        for (c, t) in terms {
            ensure_same(&first.space, &t.space)?;
            for (o, v) in out.data.iter_mut().zip(&t.data) {
                *o += c * v;
            }
        }
        Ok(out)
    }

    /// Full contraction `sum_{abcd} self_abcd other_abcd`.
    pub fn contract(&self, other: &Tensor4) -> Result<Real> {
        ensure_same(&self.space, &other.space)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_diff(&self, other: &Tensor4) -> Result<Real> {
        ensure_same(&self.space, &other.space)?;
        Ok(self.data.iter().zip(&other.data).fold(0.0, |acc, (a, b)| acc.max((a - b).abs())))
    }

    /// `out(x0, x1, x2, x3) = self(x[p0], x[p1], x[p2], x[p3])`.
    pub fn permuted(&self, p: [usize; 4]) -> Self {
        Tensor4::from_fn(&self.space, |a, b, c, d| {
            let x = [a, b, c, d];
            self.get(x[p[0]], x[p[1]], x[p[2]], x[p[3]])
        })
    }

    /// Pulls the listed slots back through `endo`, where `endo e_a = sum_b endo[(b, a)] e_b`.
    pub fn pull_slots(&self, endo: &DMatrix<Real>, slots: &[usize]) -> Self {
        let n = self.n;
        let mut cur = self.clone();
        for &s in slots {
            let mut next = Tensor4::zeros(&self.space);
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        for d in 0..n {
                            let x = [a, b, c, d];
                            let mut acc = 0.0;
                            for k in 0..n {
                                let m = endo[(k, x[s])];
                                if m != 0.0 {
                                    let mut y = x;
                                    y[s] = k;
                                    acc += m * cur.get(y[0], y[1], y[2], y[3]);
                                }
                            }
                            next.data[((a * n + b) * n + c) * n + d] = acc;
                        }
                    }
                }
            }
            cur = next;
        }
        cur
    }

    pub fn eval(&self, x: &[Real], y: &[Real], z: &[Real], w: &[Real]) -> Real {
        let n = self.n;
        let mut acc = 0.0;
        for a in 0..n {
            if x[a] == 0.0 {
                continue;
            }
            for b in 0..n {
                let xy = x[a] * y[b];
                if xy == 0.0 {
                    continue;
                }
                for c in 0..n {
                    let xyz = xy * z[c];
                    if xyz == 0.0 {
                        continue;
                    }
                    let base = ((a * n + b) * n + c) * n;
                    for d in 0..n {
                        acc += xyz * w[d] * self.data[base + d];
                    }
                }
            }
        }
        acc
    }

    pub fn eval_complex(&self, x: &[C64], y: &[C64], z: &[C64], w: &[C64]) -> C64 {
        let n = self.n;
        let mut acc = C64::new(0.0, 0.0);
        for a in 0..n {
            for b in 0..n {
                let xy = x[a] * y[b];
                for c in 0..n {
                    let xyz = xy * z[c];
                    let base = ((a * n + b) * n + c) * n;
                    for d in 0..n {
                        acc += xyz * w[d] * self.data[base + d];
                    }
                }
            }
        }
        acc
    }

    /// Largest violation of antisymmetry in slots (1,2) and (3,4).
    pub fn antisymmetry_residual(&self) -> Real {
        let n = self.n;
        let mut r: Real = 0.0;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let v = self.get(a, b, c, d);
                        r = r.max((v + self.get(b, a, c, d)).abs());
                        r = r.max((v + self.get(a, b, d, c)).abs());
                    }
                }
            }
        }
        r
    }
}

/// Algebraic curvature-type tensor: antisymmetric in (1,2) and (3,4), with
/// verified symmetry tags.
#[derive(Debug, Clone)]
pub struct Curv4 {
    t: Tensor4,
    tags: Tags,
}

impl Deref for Curv4 {
    type Target = Tensor4;
    fn deref(&self) -> &Tensor4 {
        &self.t
    }
}

impl Curv4 {
    /// Checks the slot antisymmetry and every declared tag.
    pub fn new(t: Tensor4, tags: Tags) -> Result<Self> {
        tags.check_consistent()?;
        let scale = t.max_abs().max(1.0);
        let r = t.antisymmetry_residual();
        if r > TAG_TOL * scale {
            return Err(Error::TagViolation { tag: "slot_antisymmetry", residual: r });
        }
        let c = Curv4 { t, tags };
        c.verify_tags(TAG_TOL)?;
        Ok(c)
    }

    pub(crate) fn new_unchecked(t: Tensor4, tags: Tags) -> Self {
        Curv4 { t, tags }
    }

    pub fn zeros(space: &Space) -> Self {
        Curv4 { t: Tensor4::zeros(space), tags: Tags::PAIR_SYMMETRIC | Tags::BIANCHI_CLOSED }
    }

    pub fn tags(&self) -> Tags {
        self.tags
    }

    pub fn tensor(&self) -> &Tensor4 {
        &self.t
    }

    pub fn into_tensor(self) -> Tensor4 {
        self.t
    }

    /// Adds tags after verifying them.
    pub fn with_tags(self, extra: Tags) -> Result<Self> {
        let tags = self.tags | extra;
        Curv4::new(self.t, tags)
    }

    pub fn without_tags(mut self, drop: Tags) -> Self {
        self.tags.remove(drop);
        self
    }

    /// Residual of a single tag's defining projector (`Q - P(Q)`).
    pub fn tag_residual(&self, tag: Tags) -> Result<Real> {
        let t = &self.t;
        Ok(match tag {
            x if x == Tags::PAIR_SYMMETRIC => t.max_diff(&t.permuted([2, 3, 0, 1]))?,
            x if x == Tags::BIANCHI_CLOSED => ca::bianchi_map(t).max_abs(),
            x if x == Tags::J_PLUS => t.max_diff(&ca::j_split_tensor(t).0)?,
            x if x == Tags::J_MINUS => t.max_diff(&ca::j_split_tensor(t).1)?,
            x if x == Tags::TAU_PLUS => t.max_diff(&ca::tau_split_tensor(t)?.0)?,
            x if x == Tags::TAU_MINUS => t.max_diff(&ca::tau_split_tensor(t)?.1)?,
            x if x == Tags::PRIMITIVE => t.max_diff(&ca::primitive_projection(t))?,
            _ => return Err(Error::ContradictoryTags("tag_residual takes a single tag".into())),
        })
    }

    pub fn verify_tags(&self, tol: Real) -> Result<()> {
        let scale = self.t.max_abs().max(1.0);
        for tag in self.tags.iter() {
            let r = self.tag_residual(tag)?;
            if r > tol * scale {
                return Err(Error::TagViolation { tag: tag.label(), residual: r });
            }
        }
        Ok(())
    }

    /// Tags that hold numerically, whether declared or not.
    pub fn detect_tags(&self, tol: Real) -> Tags {
        let scale = self.t.max_abs().max(1.0);
        let mut out = Tags::empty();
        for tag in Tags::all().iter() {
            if let Ok(r) = self.tag_residual(tag) {
                if r <= tol * scale {
                    out |= tag;
                }
            }
        }
        out
    }

    pub fn scaled(&self, c: Real) -> Self {
        Curv4 { t: self.t.scaled(c), tags: self.tags }
    }

    /// Linear combination; tags of the result are the tags shared by all terms.
    pub fn combine(terms: &[(Real, &Curv4)]) -> Result<Self> {
        let mut tags = Tags::all();
        let raw: Vec<(Real, &Tensor4)> = terms
            .iter()
            .map(|(c, q)| {
                tags &= q.tags;
                (*c, &q.t)
            })
            .collect();
        Ok(Curv4 { t: Tensor4::combine(&raw)?, tags })
    }
}

/// Ordered wedge basis `{e_i ^ e_j : i < j}`.
pub fn wedge_basis(n: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
    for i in 0..n {
        for j in i + 1..n {
            v.push((i, j));
        }
    }
    v
}

/// Endomorphism of 2-forms induced by a 4-tensor, as a grid over the wedge basis.
///
/// Column `(ij)` holds the image of `e_i ^ e_j`: `grid[(kl, ij)] = Q(e_i, e_j, e_k, e_l)`.
#[derive(Debug, Clone)]
pub struct Endo2Forms {
    space: Space,
    pairs: Vec<(usize, usize)>,
    grid: DMatrix<Real>,
}

impl Endo2Forms {
    pub fn from_tensor(t: &Tensor4) -> Self {
        let pairs = wedge_basis(t.n());
        let m = pairs.len();
        let grid = DMatrix::from_fn(m, m, |r, c| {
            let (k, l) = pairs[r];
            let (i, j) = pairs[c];
            t.get(i, j, k, l)
        });
        Endo2Forms { space: t.space().clone(), pairs, grid }
    }

    pub fn from_grid(space: &Space, grid: DMatrix<Real>) -> Result<Self> {
        let pairs = wedge_basis(space.dim());
        if grid.nrows() != pairs.len() || grid.ncols() != pairs.len() {
            return Err(Error::ShapeMismatch("wedge grid size".into()));
        }
        Ok(Endo2Forms { space: space.clone(), pairs, grid })
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn grid(&self) -> &DMatrix<Real> {
        &self.grid
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn trace(&self) -> Real {
        self.grid.trace()
    }

    pub fn is_symmetric(&self, tol: Real) -> bool {
        max_abs(&(&self.grid - self.grid.transpose())) <= tol * max_abs(&self.grid).max(1.0)
    }

    /// `self o other`.
    pub fn compose(&self, other: &Endo2Forms) -> Result<Self> {
        ensure_same(&self.space, &other.space)?;
        Ok(Endo2Forms { space: self.space.clone(), pairs: self.pairs.clone(), grid: &self.grid * &other.grid })
    }

    /// Rebuilds the 4-tensor, extending antisymmetrically in both pairs.
    pub fn to_tensor(&self) -> Tensor4 {
        let mut t = Tensor4::zeros(&self.space);
        let n = t.n();
        for (c, &(i, j)) in self.pairs.iter().enumerate() {
            for (r, &(k, l)) in self.pairs.iter().enumerate() {
                let v = self.grid[(r, c)];
                let data = t.data_mut();
                data[((i * n + j) * n + k) * n + l] = v;
                data[((j * n + i) * n + k) * n + l] = -v;
                data[((i * n + j) * n + l) * n + k] = -v;
                data[((j * n + i) * n + l) * n + k] = v;
            }
        }
        t
    }

    pub fn to_curv4(&self) -> Curv4 {
        let tags = if self.is_symmetric(EXACT_TOL) { Tags::PAIR_SYMMETRIC } else { Tags::empty() };
        Curv4::new_unchecked(self.to_tensor(), tags)
    }

    /// Image of a 2-form.
    pub fn apply(&self, gamma: &Bil2) -> Result<Bil2> {
        ensure_same(&self.space, gamma.space())?;
        let v = DVector::from_iterator(self.pairs.len(), self.pairs.iter().map(|&(i, j)| gamma.get(i, j)));
        let w = &self.grid * v;
        let n = self.space.dim();
        let mut m = DMatrix::zeros(n, n);
        for (r, &(k, l)) in self.pairs.iter().enumerate() {
            m[(k, l)] = w[r];
            m[(l, k)] = -w[r];
        }
        Ok(Bil2::new_unchecked(&self.space, m, Symmetry::Antisymmetric))
    }
}

/// Unitary frame `Z_i = (e_i - i J e_i) / sqrt 2` of the (1,0) vectors.
#[derive(Debug, Clone)]
pub struct ComplexFrame {
    space: Space,
    z: Vec<DVector<C64>>,
}

pub fn complexify(space: &Space) -> ComplexFrame {
    let n = space.dim();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let z = (0..space.d())
        .map(|i| {
            DVector::from_fn(n, |a, _| {
                let e = if a == i { 1.0 } else { 0.0 };
                C64::new(e * s, -space.j()[(a, i)] * s)
            })
        })
        .collect();
    ComplexFrame { space: space.clone(), z }
}

impl ComplexFrame {
    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn vectors(&self) -> &[DVector<C64>] {
        &self.z
    }

    /// Complex-bilinear extension of the metric.
    pub fn bilinear(u: &DVector<C64>, v: &DVector<C64>) -> C64 {
        u.iter().zip(v.iter()).map(|(a, b)| a * b).sum()
    }

    /// `(u, conj v)`.
    pub fn hermitian(u: &DVector<C64>, v: &DVector<C64>) -> C64 {
        u.iter().zip(v.iter()).map(|(a, b)| a * b.conj()).sum()
    }

    pub fn apply_j(&self, u: &DVector<C64>) -> DVector<C64> {
        self.space.j().map(|x| C64::new(x, 0.0)) * u
    }
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<Real> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<Real> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

pub fn random_bil2(space: &Space, symmetry: Symmetry, seed: u64) -> Bil2 {
    let mut rng = rng_from_seed(seed);
    random_bil2_with(space, symmetry, &mut rng)
}

pub fn random_bil2_with(space: &Space, symmetry: Symmetry, rng: &mut ChaCha8Rng) -> Bil2 {
    let n = space.dim();
    let g = gaussian_matrix(rng, n, n);
    let m = match symmetry {
        Symmetry::Symmetric => (&g + g.transpose()) * 0.5,
        Symmetry::Antisymmetric => (&g - g.transpose()) * 0.5,
        Symmetry::General => g,
    };
    Bil2::new_unchecked(space, m, symmetry)
}

pub fn random_curv4(space: &Space, tags: Tags, seed: u64) -> Result<Curv4> {
    let mut rng = rng_from_seed(seed);
    random_curv4_with(space, tags, &mut rng)
}

/// Gaussian tensor projected onto the subspace cut out by `tags`.
pub fn random_curv4_with(space: &Space, tags: Tags, rng: &mut ChaCha8Rng) -> Result<Curv4> {
    tags.check_consistent()?;
    if tags.intersects(Tags::TAU_PLUS | Tags::TAU_MINUS) {
        space.require_tau()?;
    }
    let n = space.dim();
    let raw: Vec<Real> = (0..n * n * n * n).map(|_| StandardNormal.sample(rng)).collect();
    let t = Tensor4::from_vec(space, raw)?;
    let t = ca::project_onto_tags(&t, tags)?;
    Curv4::new(t, tags)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn d_zero_rejected() {
        assert!(matches!(make_space(0, false), Err(Error::InvalidDimension(0))));
    }

    #[test]
    fn d1_frame() {
        let s = make_space(1, false).unwrap();
        assert_eq!(s.j()[(0, 0)], 0.0);
        assert_eq!(s.j()[(0, 1)], -1.0);
        assert_eq!(s.j()[(1, 0)], 1.0);
        assert_eq!(s.omega()[(0, 1)], 1.0);
        assert!(s.tau().is_none());
    }

    #[test]
    fn torsion_normalization() {
        for d in 1..=5 {
            let s = make_space(d, true).unwrap();
            assert!(s.structure_residuals().max() <= EXACT_TOL);
            assert!((s.tau_norm2().unwrap() - 2.0 * d as Real).abs() < EXACT_TOL);
            assert_eq!(s.require_tau().unwrap().trace(), 0.0);
        }
    }

    #[test]
    fn complex_frame_pairings() {
        let s = make_space(2, false).unwrap();
        let f = complexify(&s);
        let z = f.vectors();
        for i in 0..2 {
            for j in 0..2 {
                let h = ComplexFrame::hermitian(&z[i], &z[j]);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((h - C64::new(want, 0.0)).norm() < EXACT_TOL);
                assert!(ComplexFrame::bilinear(&z[i], &z[j]).norm() < EXACT_TOL);
            }
            let jz = f.apply_j(&z[i]);
            let iz = z[i].map(|c| c * C64::new(0.0, 1.0));
            assert!((jz - iz).norm() < EXACT_TOL);
        }
    }

    #[test]
    fn bil2_rejects_wrong_symmetry() {
        let s = make_space(2, false).unwrap();
        let m = s.omega().clone();
        assert!(Bil2::new(&s, m.clone(), Symmetry::Symmetric).is_err());
        assert!(Bil2::new(&s, m, Symmetry::Antisymmetric).is_ok());
        assert!(Bil2::new(&s, DMatrix::zeros(3, 3), Symmetry::General).is_err());
    }

    #[test]
    fn random_is_deterministic() {
        let s = make_space(2, false).unwrap();
        let a = random_curv4(&s, Tags::PAIR_SYMMETRIC, 7).unwrap();
        let b = random_curv4(&s, Tags::PAIR_SYMMETRIC, 7).unwrap();
        assert_eq!(a.data(), b.data());
        let c = random_curv4(&s, Tags::PAIR_SYMMETRIC, 8).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn random_tags_hold() {
        let s = make_space(2, true).unwrap();
        let q = random_curv4(&s, Tags::PAIR_SYMMETRIC | Tags::BIANCHI_CLOSED, 1).unwrap();
        assert!(ca::bianchi_map(&q).max_abs() <= EXACT_TOL);
        let q = random_curv4(&s, Tags::PAIR_SYMMETRIC | Tags::J_PLUS, 3).unwrap();
        let j = s.j();
        let n = s.dim();
        let mut r: Real = 0.0;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let mut v = 0.0;
                        for x in 0..n {
                            for y in 0..n {
                                v += j[(x, a)] * j[(y, b)] * q.get(x, y, c, d);
                            }
                        }
                        r = r.max((v - q.get(a, b, c, d)).abs());
                    }
                }
            }
        }
        assert!(r <= EXACT_TOL);
        let q = random_curv4(
            &s,
            Tags::PAIR_SYMMETRIC | Tags::BIANCHI_CLOSED | Tags::J_PLUS | Tags::PRIMITIVE,
            5,
        )
        .unwrap();
        assert!(q.max_abs() > 1e-3);
    }

    #[test]
    fn contradictory_tags_rejected() {
        let s = make_space(2, true).unwrap();
        assert!(matches!(
            random_curv4(&s, Tags::J_PLUS | Tags::J_MINUS, 0),
            Err(Error::ContradictoryTags(_))
        ));
        assert!(random_curv4(&s, Tags::TAU_PLUS | Tags::TAU_MINUS, 0).is_err());
        let plain = make_space(2, false).unwrap();
        assert!(matches!(random_curv4(&plain, Tags::TAU_PLUS, 0), Err(Error::MissingTorsion)));
    }

    #[test]
    fn hat_round_trip() {
        let s = make_space(3, false).unwrap();
        let q = random_curv4(&s, Tags::PAIR_SYMMETRIC, 11).unwrap();
        let h = Endo2Forms::from_tensor(&q);
        assert!(h.is_symmetric(EXACT_TOL));
        assert_eq!(h.grid().nrows(), 3 * 5);
        let back = h.to_curv4();
        assert_eq!(back.max_diff(&q).unwrap(), 0.0);
        assert!(back.tags().contains(Tags::PAIR_SYMMETRIC));
    }

    #[test]
    fn declared_tag_is_checked() {
        let s = make_space(2, false).unwrap();
        let q = random_curv4(&s, Tags::PAIR_SYMMETRIC, 2).unwrap();
        assert!(matches!(
            q.clone().with_tags(Tags::BIANCHI_CLOSED),
            Err(Error::TagViolation { tag: "bianchi_closed", .. })
        ));
        let raw = Tensor4::from_fn(&s, |a, b, c, d| (a + 2 * b + 3 * c + 5 * d) as Real);
        assert!(Curv4::new(raw, Tags::empty()).is_err());
    }
}
