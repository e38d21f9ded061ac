//! Hermitian-type sub-symmetric models from matrix Lie algebras, and the
//! rigidity constants computed from their curvature.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::curvature_algebra::{canonical_tensors, hat_trace, primitive_part, scalar_product};
use crate::error::{Error, Result};
use crate::pseudo_hermitian::{chern_moser_split, scalar_curvature};
use crate::tensor_space::{
    gaussian_vector, make_space, rng_from_seed, Curv4, Real, Space, Tags, Tensor4,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "heisenberg")]
    Heisenberg,
    #[serde(rename = "su_pq")]
    SuPq,
    #[serde(rename = "sp_p_R")]
    SpPR,
    #[serde(rename = "so_p_2")]
    SoP2,
    #[serde(rename = "so_star_2p")]
    SoStar2p,
    #[serde(rename = "e6_14")]
    E6,
    #[serde(rename = "e7_25")]
    E7,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Closed-form constants of a family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableValues {
    pub d: usize,
    pub c0_prime: Real,
    pub kappa: Real,
}

impl Family {
    pub const ALL: [Family; 7] =
        [Family::Heisenberg, Family::SuPq, Family::SpPR, Family::SoP2, Family::SoStar2p, Family::E6, Family::E7];

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "heisenberg" => Family::Heisenberg,
            "su_pq" | "su" => Family::SuPq,
            "sp_p_r" | "sp" => Family::SpPR,
            "so_p_2" | "so2" => Family::SoP2,
            "so_star_2p" | "sostar" => Family::SoStar2p,
            "e6_14" | "e6" => Family::E6,
            "e7_25" | "e7" => Family::E7,
            _ => return Err(Error::UnknownFamily(s.to_string())),
        })
    }

    pub fn tag(self) -> &'static str {
        match self {
            Family::Heisenberg => "heisenberg",
            Family::SuPq => "su_pq",
            Family::SpPR => "sp_p_R",
            Family::SoP2 => "so_p_2",
            Family::SoStar2p => "so_star_2p",
            Family::E6 => "e6_14",
            Family::E7 => "e7_25",
        }
    }

    pub fn is_supported(self) -> bool {
        !matches!(self, Family::E6 | Family::E7)
    }

    pub fn smallest_params(self) -> Vec<usize> {
        match self {
            Family::Heisenberg => vec![1],
            Family::SuPq => vec![1, 1],
            Family::SpPR => vec![1],
            Family::SoP2 => vec![3],
            Family::SoStar2p => vec![3],
            Family::E6 | Family::E7 => vec![],
        }
    }

    fn invalid(self, reason: &str) -> Error {
        Error::InvalidParams { family: self.tag().into(), reason: reason.into() }
    }

    pub fn validate(self, params: &[usize]) -> Result<()> {
        let ok = match (self, params) {
            (Family::Heisenberg, [d]) => *d >= 1,
            (Family::SuPq, [p, q]) => *p >= 1 && *q >= 1,
            (Family::SpPR, [p]) => *p >= 1,
            (Family::SoP2, [p]) => *p >= 3,
            (Family::SoStar2p, [p]) => *p >= 3,
            (Family::E6 | Family::E7, []) => true,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(self.invalid(match self {
                Family::Heisenberg => "expects one parameter d >= 1",
                Family::SuPq => "expects p,q >= 1",
                Family::SpPR => "expects p >= 1",
                Family::SoP2 => "expects p >= 3",
                Family::SoStar2p => "expects p >= 3",
                Family::E6 | Family::E7 => "takes no parameters",
            }))
        }
    }

    /// Half-dimension of the horizontal space.
    pub fn half_dim(self, params: &[usize]) -> Result<usize> {
        self.validate(params)?;
        Ok(match (self, params) {
            (Family::Heisenberg, [d]) => *d,
            (Family::SuPq, [p, q]) => p * q,
            (Family::SpPR, [p]) => p * (p + 1) / 2,
            (Family::SoP2, [p]) => *p,
            (Family::SoStar2p, [p]) => p * (p - 1) / 2,
            (Family::E6, _) => 16,
            (Family::E7, _) => 27,
            _ => unreachable!(),
        })
    }

    /// Tabulated constants; `None` for the flat family.
    pub fn table_values(self, params: &[usize]) -> Result<Option<TableValues>> {
        let d = self.half_dim(params)?;
        let v = |c0: Real, k: Real| Some(TableValues { d, c0_prime: c0, kappa: k });
        Ok(match (self, params) {
            (Family::Heisenberg, _) => None,
            (Family::SuPq, [p, q]) => {
                let (p, q) = (*p as Real, *q as Real);
                v((p * q + 1.0) / (p + q).powi(2), -1.0 / (p + q))
            }
            (Family::SpPR, [p]) => {
                let p = *p as Real;
                v(0.25 + (3.0 + p) / (4.0 * (p + 1.0).powi(2)), -1.0 / (p + 1.0))
            }
            (Family::SoP2, [p]) => {
                let p = *p as Real;
                v(3.0 / (2.0 * p) - 1.0 / (p * p), -1.0 / p)
            }
            (Family::SoStar2p, [p]) => {
                let p = *p as Real;
                v(0.25 + (3.0 - p) / (4.0 * (p - 1.0).powi(2)), -1.0 / (2.0 * (p - 1.0)))
            }
            (Family::E6, _) => v(3.0 / 16.0, -1.0 / 12.0),
            (Family::E7, _) => v(29.0 / 162.0, -1.0 / 18.0),
            _ => unreachable!(),
        })
    }

    /// Whether the model is the complex hyperbolic space form (up to isomorphism).
    pub fn is_space_form(self, params: &[usize]) -> bool {
        match (self, params) {
            (Family::SuPq, [p, q]) => *p == 1 || *q == 1,
            (Family::SpPR, [1]) => true,
            (Family::SoStar2p, [3]) => true,
            _ => false,
        }
    }
}

/// Structure of a Hermitian symmetric pair `g = l + p` in a matrix realization.
#[derive(Debug, Clone)]
pub struct SymmetricPair {
    pub basis: Vec<DMatrix<Real>>,
    pub dim_l: usize,
    pub dim_p: usize,
    /// `ad[a]` has column `b` equal to the coordinates of `[B_a, B_b]`.
    pub ad: Vec<DMatrix<Real>>,
    pub killing: DMatrix<Real>,
    /// Coordinates of the central element of `l` with `(ad xi)^2 = -Id` on `p`.
    pub xi_star: DVector<Real>,
    /// `ad xi` on `p`, in the `p` coordinates.
    pub j_star: DMatrix<Real>,
    /// Rows are the frame vectors `e_1..e_d, J e_1..J e_d` in `p` coordinates.
    pub p_frame: DMatrix<Real>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ModelDiagnostics {
    pub span_residual: Real,
    pub bracket_pp_in_l: Real,
    pub bracket_lp_in_p: Real,
    pub bracket_ll_in_l: Real,
    pub j_square: Real,
    pub killing_p_min: Real,
    pub killing_l_max: Real,
    pub frame_orthonormality: Real,
}

#[derive(Debug, Clone)]
pub struct LieModel {
    pub family: Family,
    pub params: Vec<usize>,
    pub d: usize,
    /// Metric on `p` is `scale * killing`.
    pub scale: Real,
    pub pair: Option<SymmetricPair>,
    pub diagnostics: ModelDiagnostics,
    space: Space,
}

impl LieModel {
    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn is_flat(&self) -> bool {
        self.pair.is_none()
    }
}

fn c2r(re: &DMatrix<Real>, im: &DMatrix<Real>) -> DMatrix<Real> {
    let n = re.nrows();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(re);
    m.view_mut((0, n), (n, n)).copy_from(&(-im));
    m.view_mut((n, 0), (n, n)).copy_from(im);
    m.view_mut((n, n), (n, n)).copy_from(re);
    m
}

fn unit(n: usize, i: usize, j: usize) -> DMatrix<Real> {
    let mut m = DMatrix::zeros(n, n);
    m[(i, j)] = 1.0;
    m
}

fn su_pq(p: usize, q: usize) -> (Vec<DMatrix<Real>>, Vec<DMatrix<Real>>) {
    let n = p + q;
    let z = DMatrix::zeros(n, n);
    let mut l = Vec::new();
    let mut pp = Vec::new();
    for (lo, hi) in [(0, p), (p, n)] {
        for i in lo..hi {
            for j in i + 1..hi {
                l.push(c2r(&(unit(n, i, j) - unit(n, j, i)), &z));
                l.push(c2r(&z, &(unit(n, i, j) + unit(n, j, i))));
            }
        }
    }
    for i in 0..n - 1 {
        l.push(c2r(&z, &(unit(n, i, i) - unit(n, i + 1, i + 1))));
    }
    for i in 0..p {
        for j in p..n {
            pp.push(c2r(&(unit(n, i, j) + unit(n, j, i)), &z));
            pp.push(c2r(&z, &(unit(n, i, j) - unit(n, j, i))));
        }
    }
    (l, pp)
}

fn sp_pr(p: usize) -> (Vec<DMatrix<Real>>, Vec<DMatrix<Real>>) {
    let n = 2 * p;
    let block = |a: &DMatrix<Real>, b: &DMatrix<Real>, c: &DMatrix<Real>, d: &DMatrix<Real>| {
        let mut m = DMatrix::zeros(n, n);
        m.view_mut((0, 0), (p, p)).copy_from(a);
        m.view_mut((0, p), (p, p)).copy_from(b);
        m.view_mut((p, 0), (p, p)).copy_from(c);
        m.view_mut((p, p), (p, p)).copy_from(d);
        m
    };
    let z = DMatrix::zeros(p, p);
    let mut skew = Vec::new();
    let mut sym = Vec::new();
    for i in 0..p {
        for j in i..p {
            if i < j {
                skew.push(unit(p, i, j) - unit(p, j, i));
                sym.push(unit(p, i, j) + unit(p, j, i));
            } else {
                sym.push(unit(p, i, i));
            }
        }
    }
    let mut l = Vec::new();
    let mut pp = Vec::new();
    for a in &skew {
        l.push(block(a, &z, &z, a));
    }
    for b in &sym {
        l.push(block(&z, b, &(-b), &z));
    }
    for c in &sym {
        pp.push(block(c, &z, &z, &(-c)));
    }
    for d in &sym {
        pp.push(block(&z, d, d, &z));
    }
    (l, pp)
}

fn so_p2(p: usize) -> (Vec<DMatrix<Real>>, Vec<DMatrix<Real>>) {
    let n = p + 2;
    let mut l = Vec::new();
    let mut pp = Vec::new();
    for (lo, hi) in [(0, p), (p, n)] {
        for i in lo..hi {
            for j in i + 1..hi {
                l.push(unit(n, i, j) - unit(n, j, i));
            }
        }
    }
    for i in 0..p {
        for j in p..n {
            pp.push(unit(n, i, j) + unit(n, j, i));
        }
    }
    (l, pp)
}

fn so_star(p: usize) -> (Vec<DMatrix<Real>>, Vec<DMatrix<Real>>) {
    // [[A, B], [-conj B, conj A]] with A skew-hermitian, B complex skew
    let n = 2 * p;
    let z = DMatrix::zeros(p, p);
    let block = |are: &DMatrix<Real>, aim: &DMatrix<Real>, bre: &DMatrix<Real>, bim: &DMatrix<Real>| {
        let mut re = DMatrix::zeros(n, n);
        let mut im = DMatrix::zeros(n, n);
        re.view_mut((0, 0), (p, p)).copy_from(are);
        im.view_mut((0, 0), (p, p)).copy_from(aim);
        re.view_mut((0, p), (p, p)).copy_from(bre);
        im.view_mut((0, p), (p, p)).copy_from(bim);
        re.view_mut((p, 0), (p, p)).copy_from(&(-bre));
        im.view_mut((p, 0), (p, p)).copy_from(bim);
        re.view_mut((p, p), (p, p)).copy_from(are);
        im.view_mut((p, p), (p, p)).copy_from(&(-aim));
        c2r(&re, &im)
    };
    let mut l = Vec::new();
    let mut pp = Vec::new();
    for i in 0..p {
        for j in i + 1..p {
            let s = unit(p, i, j) - unit(p, j, i);
            let h = unit(p, i, j) + unit(p, j, i);
            l.push(block(&s, &z, &z, &z));
            l.push(block(&z, &h, &z, &z));
            pp.push(block(&z, &z, &s, &z));
            pp.push(block(&z, &z, &z, &s));
        }
    }
    for i in 0..p {
        l.push(block(&z, &unit(p, i, i), &z, &z));
    }
    (l, pp)
}

/// Bases of the isotropy algebra and of its complement.
type Realization = (Vec<DMatrix<Real>>, Vec<DMatrix<Real>>);

fn realization(family: Family, params: &[usize]) -> Result<Realization> {
    Ok(match (family, params) {
        (Family::SuPq, [p, q]) => su_pq(*p, *q),
        (Family::SpPR, [p]) => sp_pr(*p),
        (Family::SoP2, [p]) => so_p2(*p),
        (Family::SoStar2p, [p]) => so_star(*p),
        _ => return Err(Error::OutOfScope(family.tag().into())),
    })
}

fn max_abs_slice<'a>(it: impl IntoIterator<Item = &'a Real>) -> Real {
    it.into_iter().fold(0.0, |a, v| a.max(v.abs()))
}

pub fn build_model(family: Family, params: &[usize]) -> Result<LieModel> {
    build_model_scaled(family, params, 1.0)
}

/// Builds the model with metric `scale * killing` on `p`.
pub fn build_model_scaled(family: Family, params: &[usize], scale: Real) -> Result<LieModel> {
    if !family.is_supported() {
        return Err(Error::OutOfScope(family.tag().into()));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Config(format!("metric scale must be positive, got {scale}")));
    }
    let d = family.half_dim(params)?;
    let space = make_space(d, false)?;
    if family == Family::Heisenberg {
        return Ok(LieModel {
            family,
            params: params.to_vec(),
            d,
            scale,
            pair: None,
            diagnostics: ModelDiagnostics::default(),
            space,
        });
    }
    let (l, p) = realization(family, params)?;
    let (pair, diagnostics) = symmetric_pair(l, p, scale)?;
    if pair.dim_p != 2 * d {
        return Err(Error::ModelInvariant { what: "dim p differs from 2d".into(), residual: pair.dim_p as Real });
    }
    Ok(LieModel { family, params: params.to_vec(), d, scale, pair: Some(pair), diagnostics, space })
}

fn symmetric_pair(
    l: Vec<DMatrix<Real>>,
    p: Vec<DMatrix<Real>>,
    scale: Real,
) -> Result<(SymmetricPair, ModelDiagnostics)> {
    let dim_l = l.len();
    let dim_p = p.len();
    let basis: Vec<DMatrix<Real>> = l.into_iter().chain(p).collect();
    let nb = basis.len();
    let flat = DMatrix::from_fn(basis[0].len(), nb, |r, c| basis[c].as_slice()[r]);
    let gram = flat.transpose() * &flat;
    let chol = Cholesky::new(gram).ok_or_else(|| Error::Numerical("basis is linearly dependent".into()))?;
    let mut diag = ModelDiagnostics::default();

    let mut ad = vec![DMatrix::zeros(nb, nb); nb];
    for a in 0..nb {
        for b in 0..nb {
            let br = &basis[a] * &basis[b] - &basis[b] * &basis[a];
            let v = DVector::from_column_slice(br.as_slice());
            let c = chol.solve(&(flat.transpose() * &v));
            let back = &flat * &c;
            diag.span_residual = diag.span_residual.max(max_abs_slice((back - v).iter()));
            ad[a].set_column(b, &c);
        }
    }
    for a in 0..nb {
        for b in 0..nb {
            let col = ad[a].column(b);
            match (a < dim_l, b < dim_l) {
                (false, false) => diag.bracket_pp_in_l = diag.bracket_pp_in_l.max(max_abs_slice(col.rows(dim_l, dim_p).iter())),
                (true, true) => diag.bracket_ll_in_l = diag.bracket_ll_in_l.max(max_abs_slice(col.rows(dim_l, dim_p).iter())),
                _ => diag.bracket_lp_in_p = diag.bracket_lp_in_p.max(max_abs_slice(col.rows(0, dim_l).iter())),
            }
        }
    }
    let killing = DMatrix::from_fn(nb, nb, |a, b| (&ad[a] * &ad[b]).trace());

    // centre of l: z with [L_i, z] = 0 for all i
    let mut stacked = DMatrix::zeros(dim_l * nb, dim_l);
    for i in 0..dim_l {
        stacked.view_mut((i * nb, 0), (nb, dim_l)).copy_from(&ad[i].columns(0, dim_l));
    }
    let normal = stacked.transpose() * &stacked;
    let eig = SymmetricEigen::new(normal);
    let top = eig.eigenvalues.iter().fold(0.0, |a: Real, v| a.max(v.abs())).max(1.0);
    let null: Vec<usize> = (0..dim_l).filter(|&k| eig.eigenvalues[k].abs() <= 1e-10 * top).collect();
    if null.len() != 1 {
        return Err(Error::CenterDimension(null.len()));
    }
    let mut z = eig.eigenvectors.column(null[0]).into_owned();
    let lead = (0..dim_l).fold(0, |best, k| if z[k].abs() > z[best].abs() + 1e-12 { k } else { best });
    if z[lead] < 0.0 {
        z = -z;
    }
    let mut adz = DMatrix::zeros(nb, nb);
    for a in 0..dim_l {
        adz += &ad[a] * z[a];
    }
    let adz_p = adz.view((dim_l, dim_l), (dim_p, dim_p)).into_owned();
    let lam = -(&adz_p * &adz_p).trace() / dim_p as Real;
    if lam <= 0.0 {
        return Err(Error::ModelInvariant { what: "ad of the centre is not a complex structure".into(), residual: lam });
    }
    let j_star = adz_p / lam.sqrt();
    let mut xi_star = DVector::zeros(nb);
    xi_star.rows_mut(0, dim_l).copy_from(&(z / lam.sqrt()));
    diag.j_square = max_abs_slice((&j_star * &j_star + DMatrix::identity(dim_p, dim_p)).iter());

    let bp = killing.view((dim_l, dim_l), (dim_p, dim_p)).into_owned() * scale;
    let bl = killing.view((0, 0), (dim_l, dim_l)).into_owned();
    diag.killing_p_min = SymmetricEigen::new(bp.clone()).eigenvalues.min();
    diag.killing_l_max = SymmetricEigen::new(bl).eigenvalues.max();

    // J-adapted Gram-Schmidt under the metric bp
    let ip = |x: &DVector<Real>, y: &DVector<Real>| (x.transpose() * &bp * y)[(0, 0)];
    let half = dim_p / 2;
    let mut es: Vec<DVector<Real>> = Vec::with_capacity(half);
    for k in 0..dim_p {
        if es.len() == half {
            break;
        }
        let mut w = DVector::from_fn(dim_p, |r, _| if r == k { 1.0 } else { 0.0 });
        for _ in 0..2 {
            for e in &es {
                let je = &j_star * e;
                w -= e * (ip(&w, e) / ip(e, e));
                w -= &je * (ip(&w, &je) / ip(&je, &je));
            }
        }
        let nrm = ip(&w, &w);
        if nrm > 1e-8 {
            es.push(w / nrm.sqrt());
        }
    }
    if es.len() != half {
        return Err(Error::ModelInvariant { what: "J-adapted frame incomplete".into(), residual: es.len() as Real });
    }
    let mut p_frame = DMatrix::zeros(dim_p, dim_p);
    for (i, e) in es.iter().enumerate() {
        p_frame.set_row(i, &e.transpose());
        p_frame.set_row(i + half, &(&j_star * e).transpose());
    }
    diag.frame_orthonormality =
        max_abs_slice((&p_frame * &bp * p_frame.transpose() - DMatrix::identity(dim_p, dim_p)).iter());

    let tol = 1e-9;
    let checks = [
        ("basis does not span the brackets", diag.span_residual),
        ("[p,p] leaves l", diag.bracket_pp_in_l),
        ("[l,p] leaves p", diag.bracket_lp_in_p),
        ("[l,l] leaves l", diag.bracket_ll_in_l),
        ("(ad xi)^2 + Id", diag.j_square),
        ("frame orthonormality", diag.frame_orthonormality),
    ];
    for (what, r) in checks {
        if r > tol {
            return Err(Error::ModelInvariant { what: what.into(), residual: r });
        }
    }
    if diag.killing_p_min <= 0.0 {
        return Err(Error::ModelInvariant { what: "killing form not positive on p".into(), residual: diag.killing_p_min });
    }
    if diag.killing_l_max >= 0.0 {
        return Err(Error::ModelInvariant { what: "killing form not negative on l".into(), residual: diag.killing_l_max });
    }
    Ok((SymmetricPair { basis, dim_l, dim_p, ad, killing, xi_star, j_star, p_frame }, diag))
}

/// `R(e_1, e_2, e_3, e_4) = scale * killing([e_1, e_2], [e_3, e_4])` on the frame of `p`.
pub fn model_curvature(m: &LieModel) -> Result<Curv4> {
    let space = m.space().clone();
    let Some(pair) = &m.pair else {
        return Curv4::new(Tensor4::zeros(&space), Tags::PAIR_SYMMETRIC | Tags::BIANCHI_CLOSED | Tags::J_PLUS);
    };
    let n = pair.dim_p;
    let nb = pair.basis.len();
    let mut frame = DMatrix::zeros(n, nb);
    frame.view_mut((0, pair.dim_l), (n, n)).copy_from(&pair.p_frame);
    let ads: Vec<DMatrix<Real>> = (0..n)
        .map(|i| {
            let mut a = DMatrix::zeros(nb, nb);
            for k in 0..nb {
                let c = frame[(i, k)];
                if c != 0.0 {
                    a += &pair.ad[k] * c;
                }
            }
            a
        })
        .collect();
    let mut br = DMatrix::zeros(n * n, nb);
    for i in 0..n {
        for j in 0..n {
            let v = &ads[i] * frame.row(j).transpose();
            br.set_row(i * n + j, &v.transpose());
        }
    }
    let r = &br * &pair.killing * br.transpose() * m.scale;
    let t = Tensor4::from_fn(&space, |a, b, c, d| r[(a * n + b, c * n + d)]);
    Curv4::new(t, Tags::PAIR_SYMMETRIC | Tags::BIANCHI_CLOSED | Tags::J_PLUS)
}

fn nonzero_scalar(rw: &Tensor4) -> Result<Real> {
    let s = scalar_curvature(rw);
    if s.abs() <= 1e-12 * rw.max_abs().max(1.0) {
        return Err(Error::ZeroScalarCurvature);
    }
    Ok(s)
}

/// `-4 |R|^2 / s`.
pub fn c0_prime(rw: &Curv4) -> Result<Real> {
    let s = nonzero_scalar(rw)?;
    Ok(-4.0 * scalar_product(rw, rw)? / s)
}

/// Frobenius-orthonormal basis of traceless symmetric `n x n` matrices.
pub fn traceless_symmetric_basis(n: usize) -> Vec<DMatrix<Real>> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2 - 1);
    for k in 1..n {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..k {
            m[(i, i)] = 1.0;
        }
        m[(k, k)] = -(k as Real);
        let nrm = m.norm();
        out.push(m / nrm);
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..n {
        for j in i + 1..n {
            let mut m = DMatrix::zeros(n, n);
            m[(i, j)] = s;
            m[(j, i)] = s;
            out.push(m);
        }
    }
    out
}

/// Grid of `s -> <R o s, s>` on traceless symmetric tensors, in an orthonormal basis.
pub fn kappa_operator(rw: &Curv4) -> Result<DMatrix<Real>> {
    if !rw.tags().contains(Tags::PAIR_SYMMETRIC) {
        rw.clone().with_tags(Tags::PAIR_SYMMETRIC)?;
    }
    let n = rw.n();
    let basis = traceless_symmetric_basis(n);
    let m = basis.len();
    let k = DMatrix::from_fn(n * n, n * n, |xy, ij| {
        let (x, y) = (xy / n, xy % n);
        let (i, j) = (ij / n, ij % n);
        rw.get(i, x, y, j)
    });
    let b = DMatrix::from_fn(n * n, m, |ij, c| basis[c][(ij / n, ij % n)]);
    let op = b.transpose() * k * &b;
    Ok((&op + op.transpose()) * 0.5)
}

/// Lowest eigenvalue of the curvature quadratic form on traceless symmetric tensors.
pub fn kappa(rw: &Curv4) -> Result<Real> {
    let op = kappa_operator(rw)?;
    Ok(SymmetricEigen::new(op).eigenvalues.min())
}

/// `-(8d/(d-1)) |C^M|^2 / s`.
pub fn c0_constant(rw: &Curv4) -> Result<Real> {
    let d = rw.space().d();
    if d < 2 {
        return Err(Error::DimensionTooSmall { required: 2, got: d });
    }
    let s = nonzero_scalar(rw)?;
    let cm = chern_moser_split(rw)?.cm;
    let dd = d as Real;
    Ok(-(8.0 * dd / (dd - 1.0)) * scalar_product(&cm, &cm)? / s)
}

/// `c_0 I_0 + C^M`.
pub fn cm_corrected_tensor(rw: &Curv4) -> Result<Curv4> {
    let c0 = c0_constant(rw)?;
    let cm = chern_moser_split(rw)?.cm;
    let ic0 = canonical_tensors(rw.space())?.ic0;
    Curv4::combine(&[(c0, &ic0), (1.0, &cm)])
}

/// `tr` of the primitive part of `R`, expected `((d-1)/2d) s`.
pub fn primitive_trace(rw: &Curv4) -> Result<Real> {
    Ok(hat_trace(primitive_part(rw)?.tensor()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CommutantReport {
    pub dimension: usize,
    pub contains_identity: bool,
    pub contains_j: bool,
}

fn curvature_endomorphisms(rw: &Tensor4) -> Vec<DMatrix<Real>> {
    let n = rw.n();
    let mut out = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            out.push(DMatrix::from_fn(n, n, |c, d| rw.get(a, b, c, d)));
        }
    }
    out
}

fn commutant_of(mats: &[DMatrix<Real>], n: usize) -> (usize, DMatrix<Real>) {
    let id = DMatrix::<Real>::identity(n, n);
    let mut k = DMatrix::zeros(n * n, n * n);
    for m in mats {
        let l = m.transpose().kronecker(&id) - id.kronecker(m);
        k += l.transpose() * &l;
    }
    let top = k.amax().max(1e-300);
    let eig = SymmetricEigen::new(k);
    let dim = eig.eigenvalues.iter().filter(|v| v.abs() <= 1e-10 * top).count();
    (dim, eig.eigenvectors)
}

/// Dimension of the commutant of the curvature endomorphisms `R(e_a, e_b)` on `H`.
///
/// Random combinations are tried first; their commutant contains the full one,
/// so a two-dimensional answer there is conclusive.
pub fn commutant(rw: &Curv4, seed: u64) -> CommutantReport {
    let n = rw.n();
    let mats = curvature_endomorphisms(rw);
    let mut rng = rng_from_seed(seed);
    let combos: Vec<DMatrix<Real>> = (0..4)
        .map(|_| {
            let w = gaussian_vector(&mut rng, mats.len());
            mats.iter().zip(w.iter()).fold(DMatrix::zeros(n, n), |acc, (m, c)| acc + m * *c)
        })
        .collect();
    let (mut dim, _) = commutant_of(&combos, n);
    if dim > 2 {
        dim = commutant_of(&mats, n).0;
    }
    let j = rw.space().j();
    let commutes = |c: &DMatrix<Real>| mats.iter().all(|m| (c * m - m * c).amax() <= 1e-9 * m.amax().max(1.0));
    CommutantReport {
        dimension: dim,
        contains_identity: commutes(&DMatrix::identity(n, n)),
        contains_j: commutes(j),
    }
}

/// Fractional difference helper used by table checks.
pub fn relative_error(computed: Real, expected: Real) -> Real {
    (computed - expected).abs() / expected.abs().max(1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pseudo_hermitian::{invariants, space_form};
    use crate::tensor_space::make_space;

    #[test]
    fn parse_and_tags() {
        for f in Family::ALL {
            assert_eq!(Family::parse(f.tag()).unwrap(), f);
        }
        assert!(matches!(Family::parse("g2"), Err(Error::UnknownFamily(_))));
    }

    #[test]
    fn params_are_validated() {
        assert!(build_model(Family::SuPq, &[0, 1]).is_err());
        assert!(build_model(Family::SoP2, &[2]).is_err());
        assert!(build_model(Family::SoStar2p, &[2]).is_err());
        assert!(build_model(Family::SpPR, &[]).is_err());
        assert!(matches!(build_model(Family::E6, &[]), Err(Error::OutOfScope(_))));
    }

    #[test]
    fn su21_structure() {
        let m = build_model(Family::SuPq, &[2, 1]).unwrap();
        assert_eq!(m.d, 2);
        let pair = m.pair.as_ref().unwrap();
        assert_eq!(pair.basis.len(), 8);
        assert_eq!(pair.dim_p, 4);
        assert!(m.diagnostics.j_square < 1e-12);
        let rw = model_curvature(&m).unwrap();
        let inv = invariants(&rw).unwrap();
        assert!(inv.cm_norm2.abs() < 1e-12);
        assert!((c0_prime(&rw).unwrap() - 1.0 / 3.0).abs() < 1e-10);
        assert!((kappa(&rw).unwrap() + 1.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn sp2_half_dim() {
        let m = build_model(Family::SpPR, &[2]).unwrap();
        assert_eq!(m.d, 3);
        let rw = model_curvature(&m).unwrap();
        assert!((kappa(&rw).unwrap() + 1.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn heisenberg_is_flat() {
        let m = build_model(Family::Heisenberg, &[3]).unwrap();
        assert!(m.is_flat());
        let rw = model_curvature(&m).unwrap();
        assert_eq!(rw.max_abs(), 0.0);
        assert!(matches!(c0_prime(&rw), Err(Error::ZeroScalarCurvature)));
    }

    #[test]
    fn cm_norm_for_pseudo_einstein() {
        let m = build_model(Family::SuPq, &[2, 2]).unwrap();
        let rw = model_curvature(&m).unwrap();
        let inv = invariants(&rw).unwrap();
        let d = m.d as Real;
        let want = scalar_product(&rw, &rw).unwrap() - inv.scalar.powi(2) / (4.0 * d * (d + 1.0));
        assert!((inv.cm_norm2 - want).abs() < 1e-12);
        assert!(inv.cm_norm2 > 1e-3);
    }

    #[test]
    fn cm_corrected_on_space_form() {
        let rw = space_form(3, -3.0).unwrap();
        assert!(c0_constant(&rw).unwrap().abs() < 1e-12);
        assert!(cm_corrected_tensor(&rw).unwrap().max_abs() < 1e-12);
        let d = 3.0;
        assert!((primitive_trace(&rw).unwrap() - (d - 1.0) / (2.0 * d) * -3.0).abs() < 1e-12);
    }

    #[test]
    fn commutant_of_models() {
        let m = build_model(Family::SoP2, &[3]).unwrap();
        let rw = model_curvature(&m).unwrap();
        let c = commutant(&rw, 1);
        assert_eq!(c.dimension, 2);
        assert!(c.contains_identity && c.contains_j);
        let flat = Curv4::zeros(&make_space(2, false).unwrap());
        assert_eq!(commutant(&flat, 1).dimension, 16);
    }

    #[test]
    fn traceless_basis_is_orthonormal() {
        let b = traceless_symmetric_basis(4);
        assert_eq!(b.len(), 9);
        for (i, x) in b.iter().enumerate() {
            assert!(x.trace().abs() < 1e-14);
            for (j, y) in b.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((x.dot(y) - want).abs() < 1e-14);
            }
        }
    }
}
