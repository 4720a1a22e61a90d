//! Covariant tensor fields on the disk and the pointwise/differential
//! algebra on them: evaluation maps, symmetrization, mixings by
//! automorphism fields, covariant derivatives, divergence, curl, and
//! fiberwise inner products.
//!
//! Components are stored in the Cartesian coordinate basis, flat index
//! i1*2^{m-1} + ... + im (first slot most significant).

use std::sync::Arc;

use itertools::Itertools;
use nalgebra::Matrix2;

use crate::error::{MixrayError, Result};
use crate::geometry::{hodge_star_matrix, MetricField, Point, Tangent};
use crate::poly::Poly2;

pub const MAX_RANK: usize = 4;
/// Determinant floor below which an automorphism field is rejected.
pub const DET_FLOOR: f64 = 1e-10;

pub fn comp_count(m: usize) -> usize {
    1 << m
}

/// Flat component index of a multi-index (first slot most significant).
pub fn flat_index(idx: &[usize]) -> usize {
    idx.iter().fold(0, |acc, &i| (acc << 1) | (i & 1))
}

/// Inverse of `flat_index`; only the first `m` entries are meaningful.
pub fn unflatten(flat: usize, m: usize) -> [usize; MAX_RANK] {
    let mut out = [0usize; MAX_RANK];
    for s in 0..m {
        out[s] = (flat >> (m - 1 - s)) & 1;
    }
    out
}

/// f(v_1, ..., v_m) for component vector `comps` of rank m.
pub fn eval_on_vectors(comps: &[f64], m: usize, vs: &[Tangent]) -> f64 {
    debug_assert_eq!(comps.len(), comp_count(m));
    debug_assert!(vs.len() >= m);
    let mut acc = 0.0;
    for (flat, &c) in comps.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let mut prod = c;
        for s in 0..m {
            prod *= vs[s][(flat >> (m - 1 - s)) & 1];
        }
        acc += prod;
    }
    acc
}

/// Pointwise symmetrization of a component vector.
pub fn symmetrize_comps(comps: &[f64], m: usize) -> Vec<f64> {
    if m <= 1 {
        return comps.to_vec();
    }
    let perms: Vec<Vec<usize>> = (0..m).permutations(m).collect();
    let norm = 1.0 / perms.len() as f64;
    let cc = comp_count(m);
    let mut out = vec![0.0; cc];
    for (flat, slot) in out.iter_mut().enumerate() {
        let idx = unflatten(flat, m);
        let mut acc = 0.0;
        for tau in &perms {
            let mut src = [0usize; MAX_RANK];
            for s in 0..m {
                src[s] = idx[tau[s]];
            }
            acc += comps[flat_index(&src[..m])];
        }
        *slot = acc * norm;
    }
    out
}

type CompsFn = Arc<dyn Fn(Point) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
enum Rep {
    /// Polynomial components: exact values and exact partial derivatives.
    Analytic(Vec<Poly2>),
    /// Closure components with an optional exact-derivative closure
    /// (layout: j * 2^m + comp for partial in direction j).
    Func { f: CompsFn, df: Option<CompsFn> },
    /// Cartesian grid samples over [-R, R]^2, bilinear interpolation,
    /// zero outside the disk at sampling time.
    Grid(Arc<GridTensor>),
}

/// Covariant tensor field of rank 0..=4 (rank 0 is used for potentials
/// and test functions only).
#[derive(Clone)]
pub struct TensorField {
    pub rank: usize,
    rep: Rep,
}

pub struct GridTensor {
    pub n: usize,
    pub radius: f64,
    pub rank: usize,
    /// (iy * n + ix) * 2^m + comp
    pub values: Vec<f64>,
}

impl GridTensor {
    pub fn step(&self) -> f64 {
        2.0 * self.radius / (self.n - 1) as f64
    }

    pub fn node(&self, ix: usize, iy: usize) -> Point {
        let s = self.step();
        Point::new(-self.radius + s * ix as f64, -self.radius + s * iy as f64)
    }

    fn eval(&self, x: Point) -> Vec<f64> {
        let cc = comp_count(self.rank);
        let r = self.radius;
        if x.x.abs() > r || x.y.abs() > r {
            return vec![0.0; cc];
        }
        let s = self.step();
        let u = ((x.x + r) / s).clamp(0.0, (self.n - 1) as f64);
        let v = ((x.y + r) / s).clamp(0.0, (self.n - 1) as f64);
        let ix = (u.floor() as usize).min(self.n - 2);
        let iy = (v.floor() as usize).min(self.n - 2);
        let fx = u - ix as f64;
        let fy = v - iy as f64;
        let at = |jx: usize, jy: usize, c: usize| self.values[(jy * self.n + jx) * cc + c];
        (0..cc)
            .map(|c| {
                (1.0 - fx) * (1.0 - fy) * at(ix, iy, c)
                    + fx * (1.0 - fy) * at(ix + 1, iy, c)
                    + (1.0 - fx) * fy * at(ix, iy + 1, c)
                    + fx * fy * at(ix + 1, iy + 1, c)
            })
            .collect()
    }

    fn partials(&self, x: Point) -> Result<Vec<f64>> {
        let s = self.step();
        let r = self.radius;
        if x.x - s < -r || x.x + s > r || x.y - s < -r || x.y + s > r {
            return Err(MixrayError::Stencil(x.x, x.y));
        }
        let cc = comp_count(self.rank);
        let mut out = vec![0.0; 2 * cc];
        for j in 0..2 {
            let mut e = Point::zeros();
            e[j] = s;
            let plus = self.eval(x + e);
            let minus = self.eval(x - e);
            for c in 0..cc {
                out[j * cc + c] = (plus[c] - minus[c]) / (2.0 * s);
            }
        }
        Ok(out)
    }
}

impl TensorField {
    pub fn from_polys(rank: usize, comps: Vec<Poly2>) -> Self {
        assert!(rank <= MAX_RANK);
        assert_eq!(comps.len(), comp_count(rank));
        Self {
            rank,
            rep: Rep::Analytic(comps),
        }
    }

    pub fn scalar(p: Poly2) -> Self {
        Self::from_polys(0, vec![p])
    }

    pub fn one_form(fx: Poly2, fy: Poly2) -> Self {
        Self::from_polys(1, vec![fx, fy])
    }

    pub fn constant(rank: usize, comps: Vec<f64>) -> Self {
        Self::from_polys(rank, comps.into_iter().map(Poly2::constant).collect())
    }

    pub fn zero(rank: usize) -> Self {
        Self::constant(rank, vec![0.0; comp_count(rank)])
    }

    pub fn from_closure<F>(rank: usize, f: F) -> Self
    where
        F: Fn(Point) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            rank,
            rep: Rep::Func {
                f: Arc::new(f),
                df: None,
            },
        }
    }

    pub fn from_closure_with_grad<F, G>(rank: usize, f: F, df: G) -> Self
    where
        F: Fn(Point) -> Vec<f64> + Send + Sync + 'static,
        G: Fn(Point) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            rank,
            rep: Rep::Func {
                f: Arc::new(f),
                df: Some(Arc::new(df)),
            },
        }
    }

    pub fn from_grid(grid: GridTensor) -> Self {
        Self {
            rank: grid.rank,
            rep: Rep::Grid(Arc::new(grid)),
        }
    }

    /// The underlying grid samples, when this field is grid-backed.
    pub fn rep_grid(&self) -> Option<Arc<GridTensor>> {
        match &self.rep {
            Rep::Grid(g) => Some(g.clone()),
            _ => None,
        }
    }

    /// Samples `self` on an n x n grid over [-radius, radius]^2, zeroing
    /// nodes outside the closed disk.
    pub fn grid_sampled(&self, n: usize, radius: f64) -> Self {
        assert!(n >= 2);
        let cc = comp_count(self.rank);
        let mut values = vec![0.0; n * n * cc];
        let s = 2.0 * radius / (n - 1) as f64;
        for iy in 0..n {
            for ix in 0..n {
                let p = Point::new(-radius + s * ix as f64, -radius + s * iy as f64);
                if p.norm() <= radius {
                    let vals = self.eval(p);
                    values[(iy * n + ix) * cc..(iy * n + ix + 1) * cc].copy_from_slice(&vals);
                }
            }
        }
        Self::from_grid(GridTensor {
            n,
            radius,
            rank: self.rank,
            values,
        })
    }

    pub fn eval(&self, x: Point) -> Vec<f64> {
        match &self.rep {
            Rep::Analytic(ps) => ps.iter().map(|p| p.eval(x)).collect(),
            Rep::Func { f, .. } => f(x),
            Rep::Grid(gr) => gr.eval(x),
        }
    }

    pub fn has_derivatives(&self) -> bool {
        !matches!(&self.rep, Rep::Func { df: None, .. })
    }

    /// Partial derivatives of all components: layout j * 2^m + comp.
    pub fn partials(&self, x: Point) -> Result<Vec<f64>> {
        match &self.rep {
            Rep::Analytic(ps) => {
                let cc = ps.len();
                let mut out = vec![0.0; 2 * cc];
                for (c, p) in ps.iter().enumerate() {
                    let grad = p.grad(x);
                    out[c] = grad.x;
                    out[cc + c] = grad.y;
                }
                Ok(out)
            }
            Rep::Func { df: Some(d), .. } => Ok(d(x)),
            Rep::Func { df: None, .. } => Err(MixrayError::NoDerivative(
                "field defined by a value-only closure".into(),
            )),
            Rep::Grid(gr) => gr.partials(x),
        }
    }

    pub fn lambda_eval(&self, x: Point, v: Tangent) -> f64 {
        let comps = self.eval(x);
        eval_on_vectors(&comps, self.rank, &[v; MAX_RANK][..self.rank.max(1)])
    }

    pub fn scale(&self, a: f64) -> Self {
        match &self.rep {
            Rep::Analytic(ps) => Self::from_polys(self.rank, ps.iter().map(|p| p.scale(a)).collect()),
            _ => {
                let base = self.clone();
                Self::from_closure(self.rank, move |x| {
                    base.eval(x).into_iter().map(|v| v * a).collect()
                })
            }
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.rank, other.rank);
        match (&self.rep, &other.rep) {
            (Rep::Analytic(a), Rep::Analytic(b)) => Self::from_polys(
                self.rank,
                a.iter().zip(b).map(|(p, q)| p.add(q)).collect(),
            ),
            _ => {
                let (f, g) = (self.clone(), other.clone());
                Self::from_closure(self.rank, move |x| {
                    f.eval(x)
                        .into_iter()
                        .zip(g.eval(x))
                        .map(|(a, b)| a + b)
                        .collect()
                })
            }
        }
    }
}

/// Evaluation of a tensor on the repeated direction vector.
pub fn lambda_eval(f: &TensorField, x: Point, v: Tangent) -> f64 {
    f.lambda_eval(x, v)
}

/// Full symmetrization sigma; exact on polynomial fields.
pub fn symmetrize(f: &TensorField) -> TensorField {
    if f.rank <= 1 {
        return f.clone();
    }
    let m = f.rank;
    if let Rep::Analytic(ps) = &f.rep {
        let perms: Vec<Vec<usize>> = (0..m).permutations(m).collect();
        let norm = 1.0 / perms.len() as f64;
        let cc = comp_count(m);
        let mut out = vec![Poly2::zero(); cc];
        for (flat, slot) in out.iter_mut().enumerate() {
            let idx = unflatten(flat, m);
            let mut acc = Poly2::zero();
            for tau in &perms {
                let mut src = [0usize; MAX_RANK];
                for s in 0..m {
                    src[s] = idx[tau[s]];
                }
                acc = acc.add(&ps[flat_index(&src[..m])]);
            }
            *slot = acc.scale(norm);
        }
        return TensorField::from_polys(m, out);
    }
    let base = f.clone();
    TensorField::from_closure(m, move |x| symmetrize_comps(&base.eval(x), m))
}

/// Pointwise automorphism of the tangent bundle.
#[derive(Clone)]
pub enum AutomorphismField {
    Identity,
    /// The 90 degree rotation; constant in Cartesian components on
    /// conformal metrics.
    Star,
    Constant(Matrix2<f64>),
    Custom {
        name: String,
        f: Arc<dyn Fn(Point) -> Matrix2<f64> + Send + Sync>,
    },
}

impl AutomorphismField {
    pub fn custom<F>(name: &str, f: F) -> Self
    where
        F: Fn(Point) -> Matrix2<f64> + Send + Sync + 'static,
    {
        Self::Custom {
            name: name.to_string(),
            f: Arc::new(f),
        }
    }

    pub fn matrix_at(&self, x: Point) -> Matrix2<f64> {
        match self {
            Self::Identity => Matrix2::identity(),
            Self::Star => hodge_star_matrix(),
            Self::Constant(m) => *m,
            Self::Custom { f, .. } => f(x),
        }
    }

    pub fn constant_matrix(&self) -> Option<Matrix2<f64>> {
        match self {
            Self::Identity => Some(Matrix2::identity()),
            Self::Star => Some(hodge_star_matrix()),
            Self::Constant(m) => Some(*m),
            Self::Custom { .. } => None,
        }
    }

    pub fn inverse(&self) -> Result<Self> {
        match self {
            Self::Identity => Ok(Self::Identity),
            Self::Star => Ok(Self::Constant(-hodge_star_matrix())),
            Self::Constant(m) => {
                let det = m.determinant();
                if det.abs() < DET_FLOOR {
                    return Err(MixrayError::Conditioning(det.abs(), DET_FLOOR));
                }
                Ok(Self::Constant(m.try_inverse().unwrap()))
            }
            Self::Custom { name, f } => {
                let f = f.clone();
                Ok(Self::custom(&format!("{name}^-1"), move |x| {
                    f(x).try_inverse()
                        .expect("automorphism field singular at evaluation point")
                }))
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Self::Identity => "id".into(),
            Self::Star => "star".into(),
            Self::Constant(_) => "const".into(),
            Self::Custom { name, .. } => name.clone(),
        }
    }
}

/// Ordered list of automorphism fields, one per tensor slot.
#[derive(Clone)]
pub struct Mixing {
    pub slots: Vec<AutomorphismField>,
}

impl Mixing {
    pub fn new(slots: Vec<AutomorphismField>) -> Self {
        assert!(slots.len() <= MAX_RANK);
        Self { slots }
    }

    pub fn identity(m: usize) -> Self {
        Self::new(vec![AutomorphismField::Identity; m])
    }

    pub fn degree(&self) -> usize {
        self.slots.len()
    }

    pub fn matrices_at(&self, x: Point) -> Vec<Matrix2<f64>> {
        self.slots.iter().map(|a| a.matrix_at(x)).collect()
    }

    pub fn constant_matrices(&self) -> Option<Vec<Matrix2<f64>>> {
        self.slots.iter().map(|a| a.constant_matrix()).collect()
    }

    pub fn inverse(&self) -> Result<Self> {
        Ok(Self::new(
            self.slots
                .iter()
                .map(|a| a.inverse())
                .collect::<Result<Vec<_>>>()?,
        ))
    }

    /// Composite field operator "apply `self`, then apply `next`":
    /// (next ∘ self)f evaluates f on self_i(x)·next_i(x)·v_i, so the
    /// composite slot matrices are the products self_i(x)·next_i(x).
    pub fn then(&self, next: &Mixing) -> Result<Self> {
        if self.degree() != next.degree() {
            return Err(MixrayError::RankMismatch {
                expected: self.degree(),
                got: next.degree(),
            });
        }
        let slots = self
            .slots
            .iter()
            .zip(&next.slots)
            .map(|(a, b)| match (a.constant_matrix(), b.constant_matrix()) {
                (Some(ma), Some(mb)) => AutomorphismField::Constant(ma * mb),
                _ => {
                    let (a, b) = (a.clone(), b.clone());
                    AutomorphismField::custom("composite", move |x| {
                        a.matrix_at(x) * b.matrix_at(x)
                    })
                }
            })
            .collect();
        Ok(Self::new(slots))
    }

    pub fn describe(&self) -> String {
        self.slots.iter().map(|a| a.describe()).join(",")
    }
}

fn check_rank(a: &Mixing, f: &TensorField) -> Result<()> {
    if a.degree() != f.rank {
        return Err(MixrayError::RankMismatch {
            expected: a.degree(),
            got: f.rank,
        });
    }
    Ok(())
}

fn check_conditioning(a: &Mixing) -> Result<()> {
    let probes = [
        Point::new(0.0, 0.0),
        Point::new(0.5, 0.0),
        Point::new(-0.3, 0.4),
        Point::new(0.1, -0.6),
        Point::new(-0.5, -0.5),
        Point::new(0.7, 0.2),
    ];
    for slot in &a.slots {
        for p in probes {
            let det = slot.matrix_at(p).determinant();
            if det.abs() < DET_FLOOR {
                return Err(MixrayError::Conditioning(det.abs(), DET_FLOOR));
            }
        }
    }
    Ok(())
}

/// Component vector of Af: (Af)_{i1..im} = prod_s (A_s)^{j_s}_{i_s} f_{j1..jm}.
pub fn apply_mixing_comps(mats: &[Matrix2<f64>], comps: &[f64], m: usize) -> Vec<f64> {
    let cc = comp_count(m);
    let mut out = vec![0.0; cc];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &c) in comps.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let mut prod = c;
            for s in 0..m {
                let is = (i >> (m - 1 - s)) & 1;
                let js = (j >> (m - 1 - s)) & 1;
                prod *= mats[s][(js, is)];
            }
            acc += prod;
        }
        *slot = acc;
    }
    out
}

/// (Af)(v1,..,vm) = f(A_1 v1, .., A_m vm), on components.
pub fn apply_mixing(a: &Mixing, f: &TensorField) -> Result<TensorField> {
    check_rank(a, f)?;
    check_conditioning(a)?;
    let m = f.rank;
    if m == 0 {
        return Ok(f.clone());
    }
    // constant mixings of polynomial fields stay polynomial (exact)
    if let (Some(mats), Rep::Analytic(ps)) = (a.constant_matrices(), &f.rep) {
        let cc = comp_count(m);
        let mut out = vec![Poly2::zero(); cc];
        for (i, slot) in out.iter_mut().enumerate() {
            let mut acc = Poly2::zero();
            for (j, p) in ps.iter().enumerate() {
                let mut w = 1.0;
                for s in 0..m {
                    let is = (i >> (m - 1 - s)) & 1;
                    let js = (j >> (m - 1 - s)) & 1;
                    w *= mats[s][(js, is)];
                }
                if w != 0.0 {
                    acc = acc.add(&p.scale(w));
                }
            }
            *slot = acc;
        }
        return Ok(TensorField::from_polys(m, out));
    }
    let a = a.clone();
    let f = f.clone();
    Ok(TensorField::from_closure(m, move |x| {
        apply_mixing_comps(&a.matrices_at(x), &f.eval(x), m)
    }))
}

/// The mixing A_{k,l}: first k slots rotated, last l slots identity.
pub fn mixing_for_mixed(k: usize, l: usize, _g: &MetricField) -> Result<Mixing> {
    if k + l == 0 {
        return Err(MixrayError::Contract("mixed mixing needs k + l >= 1".into()));
    }
    let mut slots = vec![AutomorphismField::Star; k];
    slots.extend(vec![AutomorphismField::Identity; l]);
    Ok(Mixing::new(slots))
}

/// sigma_hat_A = A^{-1} sigma A: idempotent projection onto the fields
/// that are symmetric after mixing.
pub fn sigma_hat_a(a: &Mixing, f: &TensorField) -> Result<TensorField> {
    check_rank(a, f)?;
    let af = apply_mixing(a, f)?;
    apply_mixing(&a.inverse()?, &symmetrize(&af))
}

/// Covariant derivative; the derivative index comes first:
/// (∇f)_{j i1..im} = ∂_j f_{i1..im} - Σ_s Γ^r_{j i_s} f_{..r..}.
pub fn covariant_derivative(g: &MetricField, f: &TensorField) -> Result<TensorField> {
    if f.rank >= MAX_RANK {
        return Err(MixrayError::Contract("derivative would exceed max rank".into()));
    }
    if !f.has_derivatives() {
        return Err(MixrayError::NoDerivative(
            "covariant derivative needs component derivatives".into(),
        ));
    }
    let m = f.rank;
    // flat metric + polynomial components: the result is again polynomial
    if let (crate::geometry::MetricKind::Euclidean, Rep::Analytic(ps)) = (&g.kind, &f.rep) {
        let cc = comp_count(m);
        let mut out = Vec::with_capacity(2 * cc);
        for j in 0..2 {
            for p in ps {
                out.push(if j == 0 { p.dx() } else { p.dy() });
            }
        }
        return Ok(TensorField::from_polys(m + 1, out));
    }
    let g = g.clone();
    let f = f.clone();
    Ok(TensorField::from_closure(m + 1, move |x| {
        covariant_derivative_at(&g, &f, x).expect("derivative stencil left the grid")
    }))
}

/// Pointwise covariant derivative; surfaces stencil errors for grid fields.
pub fn covariant_derivative_at(g: &MetricField, f: &TensorField, x: Point) -> Result<Vec<f64>> {
    let m = f.rank;
    let cc = comp_count(m);
    let pd = f.partials(x)?;
    let comps = f.eval(x);
    let gamma = g.christoffel(x)?;
    let mut out = vec![0.0; 2 * cc];
    for j in 0..2 {
        for i in 0..cc {
            let mut v = pd[j * cc + i];
            let idx = unflatten(i, m);
            for s in 0..m {
                for r in 0..2 {
                    let mut src = idx;
                    src[s] = r;
                    v -= gamma[r][j][idx[s]] * comps[flat_index(&src[..m])];
                }
            }
            out[j * cc + i] = v;
        }
    }
    Ok(out)
}

/// ∇^A u = A^{-1}(∇u), rank(u) + 1 = degree(A).
pub fn nabla_a(a: &Mixing, g: &MetricField, u: &TensorField) -> Result<TensorField> {
    if a.degree() != u.rank + 1 {
        return Err(MixrayError::RankMismatch {
            expected: u.rank + 1,
            got: a.degree(),
        });
    }
    apply_mixing(&a.inverse()?, &covariant_derivative(g, u)?)
}

/// div_g f♯ = c^{-1}(∂_1 f_1 + ∂_2 f_2) for conformal g = c δ.
pub fn divergence(g: &MetricField, f: &TensorField) -> Result<TensorField> {
    if f.rank != 1 {
        return Err(MixrayError::RankMismatch {
            expected: 1,
            got: f.rank,
        });
    }
    if !f.has_derivatives() {
        return Err(MixrayError::NoDerivative("divergence needs derivatives".into()));
    }
    let g = g.clone();
    let f = f.clone();
    Ok(TensorField::from_closure(0, move |x| {
        let pd = f.partials(x).expect("derivative stencil left the grid");
        vec![(pd[0] + pd[3]) / g.conformal_factor(x)]
    }))
}

/// curl(φ) = ∂_2 φ dx - ∂_1 φ dy in Cartesian components (conformal
/// orthonormal frame e_i = c^{-1/2} ∂_i; the factors cancel).
pub fn curl_scalar(_g: &MetricField, phi: &TensorField) -> Result<TensorField> {
    if phi.rank != 0 {
        return Err(MixrayError::RankMismatch {
            expected: 0,
            got: phi.rank,
        });
    }
    if let Rep::Analytic(ps) = &phi.rep {
        return Ok(TensorField::one_form(ps[0].dy(), ps[0].dx().scale(-1.0)));
    }
    if !phi.has_derivatives() {
        return Err(MixrayError::NoDerivative("curl needs derivatives".into()));
    }
    let phi = phi.clone();
    Ok(TensorField::from_closure(1, move |x| {
        let pd = phi.partials(x).expect("derivative stencil left the grid");
        vec![pd[1], -pd[0]]
    }))
}

/// Fiberwise inner product with an arbitrary inverse metric matrix.
pub fn fiber_inner_spd(ginv: &Matrix2<f64>, f: &[f64], h: &[f64], m: usize) -> f64 {
    let cc = comp_count(m);
    debug_assert_eq!(f.len(), cc);
    debug_assert_eq!(h.len(), cc);
    let mut acc = 0.0;
    for i in 0..cc {
        if f[i] == 0.0 {
            continue;
        }
        for j in 0..cc {
            if h[j] == 0.0 {
                continue;
            }
            let mut w = 1.0;
            for s in 0..m {
                let is = (i >> (m - 1 - s)) & 1;
                let js = (j >> (m - 1 - s)) & 1;
                w *= ginv[(is, js)];
            }
            acc += w * f[i] * h[j];
        }
    }
    acc
}

/// Fiberwise inner product under the conformal metric: c^{-m} Σ f_i h_i.
pub fn fiber_inner(g: &MetricField, x: Point, f: &TensorField, h: &TensorField) -> Result<f64> {
    if f.rank != h.rank {
        return Err(MixrayError::RankMismatch {
            expected: f.rank,
            got: h.rank,
        });
    }
    let fc = f.eval(x);
    let hc = h.eval(x);
    let scale = g.conformal_factor(x).powi(-(f.rank as i32));
    Ok(scale * fc.iter().zip(&hc).map(|(a, b)| a * b).sum::<f64>())
}

pub fn fiber_norm(g: &MetricField, x: Point, f: &TensorField) -> f64 {
    fiber_inner(g, x, f, f).expect("equal ranks").max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dx() -> TensorField {
        TensorField::constant(1, vec![1.0, 0.0])
    }

    fn dy() -> TensorField {
        TensorField::constant(1, vec![0.0, 1.0])
    }

    fn rand_comps(rng: &mut impl Rng, m: usize) -> Vec<f64> {
        (0..comp_count(m)).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn lambda_examples() {
        // dx⊗dy − dy⊗dx annihilates repeated vectors
        let f = TensorField::constant(2, vec![0.0, 1.0, -1.0, 0.0]);
        let v = Vector2::new(0.7, -0.25);
        assert_eq!(f.lambda_eval(Point::new(0.1, 0.2), v), 0.0);

        // y dx at x=(0.2, 0.5), v=(1,0) → 0.5
        let f = TensorField::one_form(Poly2::y(), Poly2::zero());
        assert!((f.lambda_eval(Point::new(0.2, 0.5), Vector2::new(1.0, 0.0)) - 0.5).abs() < 1e-15);

        // dx⊗dx → v1^2
        let f = TensorField::constant(2, vec![1.0, 0.0, 0.0, 0.0]);
        assert!((f.lambda_eval(Point::zeros(), v) - v.x * v.x).abs() < 1e-15);
    }

    #[test]
    fn symmetrize_examples() {
        // dx⊗dy → (dx⊗dy + dy⊗dx)/2
        let f = TensorField::constant(2, vec![0.0, 1.0, 0.0, 0.0]);
        let s = symmetrize(&f).eval(Point::zeros());
        assert_eq!(s, vec![0.0, 0.5, 0.5, 0.0]);

        // symmetric input unchanged
        let sym = TensorField::constant(2, vec![1.0, 0.3, 0.3, -2.0]);
        let twice = symmetrize(&symmetrize(&sym)).eval(Point::zeros());
        assert_eq!(twice, vec![1.0, 0.3, 0.3, -2.0]);
    }

    #[test]
    fn lambda_of_sigma_matches_lambda_grid_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let comps: Vec<Poly2> = (0..8)
            .map(|_| {
                Poly2::constant(rng.gen_range(-1.0..1.0))
                    .add(&Poly2::x().scale(rng.gen_range(-1.0..1.0)))
                    .add(&Poly2::y().scale(rng.gen_range(-1.0..1.0)))
            })
            .collect();
        let f = TensorField::from_polys(3, comps).grid_sampled(41, 1.0);
        let sf = symmetrize(&f);
        for _ in 0..100 {
            let x = Point::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let v = Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            assert!((sf.lambda_eval(x, v) - f.lambda_eval(x, v)).abs() < 1e-12);
        }
    }

    #[test]
    fn apply_mixing_examples() {
        // identity leaves f unchanged
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = TensorField::constant(2, rand_comps(&mut rng, 2));
        let out = apply_mixing(&Mixing::identity(2), &f).unwrap();
        assert_eq!(out.eval(Point::zeros()), f.eval(Point::zeros()));

        // star on dx: (Af)(v) = f(★v) = -v2, i.e. Af = -dy
        let a = Mixing::new(vec![AutomorphismField::Star]);
        let out = apply_mixing(&a, &dx()).unwrap();
        assert_eq!(out.eval(Point::zeros()), vec![0.0, -1.0]);

        // round trip through the inverse
        let m = Mixing::new(vec![
            AutomorphismField::Star,
            AutomorphismField::Constant(Matrix2::new(1.0, 0.4, -0.2, 2.0)),
        ]);
        let f = TensorField::constant(2, rand_comps(&mut rng, 2));
        let back = apply_mixing(&m.inverse().unwrap(), &apply_mixing(&m, &f).unwrap()).unwrap();
        let (a, b) = (back.eval(Point::zeros()), f.eval(Point::zeros()));
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn mixing_rank_and_conditioning_errors() {
        let f = dx();
        assert!(matches!(
            apply_mixing(&Mixing::identity(2), &f),
            Err(MixrayError::RankMismatch { .. })
        ));
        let sing = Mixing::new(vec![AutomorphismField::Constant(Matrix2::new(
            1.0, 1.0, 1.0, 1.0,
        ))]);
        assert!(matches!(
            apply_mixing(&sing, &f),
            Err(MixrayError::Conditioning(..))
        ));
    }

    #[test]
    fn mixed_mixing_slots() {
        let g = MetricField::euclidean(1.0);
        assert!(mixing_for_mixed(0, 0, &g).is_err());
        let a = mixing_for_mixed(1, 1, &g).unwrap();
        assert_eq!(a.describe(), "star,id");
        let a = mixing_for_mixed(0, 2, &g).unwrap();
        assert_eq!(a.describe(), "id,id");
    }

    #[test]
    fn mixing_isometry_mixed() {
        // |A_{k,l} f|_g = |f|_g pointwise, all k+l <= 3
        let g = MetricField::constant_curvature(-0.5, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in 0..=3usize {
            for l in 0..=(3 - k) {
                if k + l == 0 {
                    continue;
                }
                let a = mixing_for_mixed(k, l, &g).unwrap();
                for _ in 0..20 {
                    let f = TensorField::constant(k + l, rand_comps(&mut rng, k + l));
                    let af = apply_mixing(&a, &f).unwrap();
                    let x = Point::new(rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6));
                    let d = (fiber_norm(&g, x, &af) - fiber_norm(&g, x, &f)).abs();
                    assert!(d < 1e-12, "k={k} l={l}: {d}");
                }
            }
        }
    }

    #[test]
    fn mixing_pointwise_bound() {
        // |Af|_g <= 2^m C_1..C_m |f|_g with C_i the slot operator norms
        let g = MetricField::euclidean(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let m1 = Matrix2::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ) + Matrix2::identity() * 2.5;
            let m2 = Matrix2::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ) + Matrix2::identity() * 2.5;
            let a = Mixing::new(vec![
                AutomorphismField::Constant(m1),
                AutomorphismField::Constant(m2),
            ]);
            let f = TensorField::constant(2, rand_comps(&mut rng, 2));
            let af = apply_mixing(&a, &f).unwrap();
            let x = Point::zeros();
            let c1 = m1.svd(false, false).singular_values[0];
            let c2 = m2.svd(false, false).singular_values[0];
            let bound = 4.0 * c1 * c2 * fiber_norm(&g, x, &f);
            assert!(fiber_norm(&g, x, &af) <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn sigma_hat_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = MetricField::euclidean(1.0);

        // identity mixing reduces to sigma
        let f = TensorField::constant(2, rand_comps(&mut rng, 2));
        let a = symmetrize(&f).eval(Point::zeros());
        let b = sigma_hat_a(&Mixing::identity(2), &f).unwrap().eval(Point::zeros());
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-14);
        }

        // idempotence for the (star, id) mixing
        let a11 = mixing_for_mixed(1, 1, &g).unwrap();
        let f = TensorField::constant(2, rand_comps(&mut rng, 2));
        let once = sigma_hat_a(&a11, &f).unwrap();
        let twice = sigma_hat_a(&a11, &once).unwrap();
        let (u, v) = (once.eval(Point::zeros()), twice.eval(Point::zeros()));
        for (a, b) in u.iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }

        // fields symmetric after mixing are fixed
        let sym = TensorField::constant(2, vec![1.0, 0.2, 0.2, -0.7]);
        let pre = apply_mixing(&a11.inverse().unwrap(), &sym).unwrap();
        let fixed = sigma_hat_a(&a11, &pre).unwrap();
        let (u, v) = (fixed.eval(Point::zeros()), pre.eval(Point::zeros()));
        for (a, b) in u.iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sigma_hat_kills_lambda_a_complement() {
        // lambda(A (f - sigma_hat_A f)) = 0 for all (x, v)
        let g = MetricField::euclidean(1.0);
        let a = mixing_for_mixed(2, 0, &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = TensorField::constant(2, rand_comps(&mut rng, 2));
        let proj = sigma_hat_a(&a, &f).unwrap();
        let diff = f.add(&proj.scale(-1.0));
        let adiff = apply_mixing(&a, &diff).unwrap();
        for _ in 0..100 {
            let x = Point::new(rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7));
            let v = Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            assert!(adiff.lambda_eval(x, v).abs() < 1e-12);
        }
    }

    #[test]
    fn covariant_derivative_examples() {
        let g = MetricField::euclidean(1.0);
        // constant components, flat metric → zero
        let f = TensorField::constant(1, vec![0.3, -0.8]);
        let d = covariant_derivative(&g, &f).unwrap();
        assert_eq!(d.rank, 2);
        for v in d.eval(Point::new(0.2, -0.4)) {
            assert_eq!(v, 0.0);
        }

        // gradient of p = 1 - x^2 - y^2
        let p = TensorField::scalar(Poly2::disk_bump(1.0));
        let dp = covariant_derivative(&g, &p).unwrap();
        let x = Point::new(0.3, -0.2);
        let vals = dp.eval(x);
        assert!((vals[0] + 2.0 * x.x).abs() < 1e-14);
        assert!((vals[1] + 2.0 * x.y).abs() < 1e-14);
    }

    #[test]
    fn metric_compatibility() {
        // ∇g = 0 when g is fed as a rank-2 field with exact derivatives
        let g = MetricField::constant_curvature(-0.5, 1.0).unwrap();
        let g2 = g.clone();
        let g3 = g.clone();
        let gfield = TensorField::from_closure_with_grad(
            2,
            move |x| {
                let c = g2.conformal_factor(x);
                vec![c, 0.0, 0.0, c]
            },
            move |x| {
                let dc = g3.conformal_grad(x);
                vec![dc.x, 0.0, 0.0, dc.x, dc.y, 0.0, 0.0, dc.y]
            },
        );
        let ng = covariant_derivative(&g, &gfield).unwrap();
        for x in [Point::new(0.0, 0.0), Point::new(0.4, -0.3), Point::new(-0.7, 0.1)] {
            for v in ng.eval(x) {
                assert!(v.abs() < 1e-10, "{v}");
            }
        }
    }

    #[test]
    fn nabla_a_star_is_negative_curl() {
        // A = star on one-forms: A^{-1} dp = -curl(p) in euclidean comps
        let g = MetricField::euclidean(1.0);
        let a = Mixing::new(vec![AutomorphismField::Star]);
        let p = TensorField::scalar(Poly2::disk_bump(1.0).mul(&Poly2::x()));
        let na = nabla_a(&a, &g, &p).unwrap();
        let curl = curl_scalar(&g, &p).unwrap();
        for x in [Point::new(0.2, 0.3), Point::new(-0.5, 0.1)] {
            let u = na.eval(x);
            let c = curl.eval(x);
            assert!((u[0] + c[0]).abs() < 1e-13);
            assert!((u[1] + c[1]).abs() < 1e-13);
        }
        // identity mixing gives the plain derivative
        let nid = nabla_a(&Mixing::identity(1), &g, &p).unwrap();
        let dp = covariant_derivative(&g, &p).unwrap();
        let x = Point::new(0.1, -0.4);
        assert_eq!(nid.eval(x), dp.eval(x));
    }

    #[test]
    fn divergence_examples() {
        let g = MetricField::euclidean(1.0);
        let p = TensorField::scalar(Poly2::disk_bump(1.0));
        let dp = covariant_derivative(&g, &p).unwrap();
        let div = divergence(&g, &dp).unwrap();
        assert!((div.eval(Point::new(0.3, 0.1))[0] + 4.0).abs() < 1e-10);

        // div curl = 0
        let phi = TensorField::scalar(Poly2::disk_bump(1.0).mul(&Poly2::disk_bump(1.0)));
        let c = curl_scalar(&g, &phi).unwrap();
        let divc = divergence(&g, &c).unwrap();
        assert!(divc.eval(Point::new(-0.2, 0.5))[0].abs() < 1e-12);

        // x dy is divergence free
        let f = TensorField::one_form(Poly2::zero(), Poly2::x());
        let d = divergence(&g, &f).unwrap();
        assert_eq!(d.eval(Point::new(0.4, 0.4))[0], 0.0);
    }

    #[test]
    fn curl_examples() {
        let g = MetricField::euclidean(1.0);
        // constant φ → 0
        let c = curl_scalar(&g, &TensorField::scalar(Poly2::constant(3.0))).unwrap();
        assert_eq!(c.eval(Point::new(0.1, 0.1)), vec![0.0, 0.0]);

        // φ = xy → x dx − y dy
        let c = curl_scalar(&g, &TensorField::scalar(Poly2::x().mul(&Poly2::y()))).unwrap();
        let x = Point::new(0.3, -0.6);
        assert_eq!(c.eval(x), vec![x.x, -x.y]);

        // g(curl φ, dφ) = 0 pointwise
        let gk = MetricField::constant_curvature(-0.5, 1.0).unwrap();
        let phi = TensorField::scalar(Poly2::disk_bump(1.0).mul(&Poly2::x()));
        let c = curl_scalar(&gk, &phi).unwrap();
        let dphi = covariant_derivative(&MetricField::euclidean(1.0), &phi).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let x = Point::new(rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6));
            assert!(fiber_inner(&gk, x, &c, &dphi).unwrap().abs() < 1e-13);
        }
    }

    #[test]
    fn fiber_inner_examples() {
        let g = MetricField::euclidean(1.0);
        let x = Point::new(0.2, 0.2);
        assert!((fiber_inner(&g, x, &dx(), &dx()).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(fiber_inner(&g, x, &dx(), &dy()).unwrap(), 0.0);

        let gk = MetricField::constant_curvature(-0.5, 1.0).unwrap();
        let v = fiber_inner(&gk, Point::new(1.0, 0.0), &dx(), &dx()).unwrap();
        assert!((v - 0.0625).abs() < 1e-14);
    }

    #[test]
    fn prop31_orthogonality_and_kernel() {
        // fiber_inner(f - sigma f, sigma h) = 0 under any SPD fiber metric
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for m in [2usize, 3] {
            for _ in 0..20 {
                let f = rand_comps(&mut rng, m);
                let h = rand_comps(&mut rng, m);
                let fs = symmetrize_comps(&f, m);
                let hs = symmetrize_comps(&h, m);
                let anti: Vec<f64> = f.iter().zip(&fs).map(|(a, b)| a - b).collect();
                // two different random SPD matrices at the same point
                for _ in 0..2 {
                    let b = Matrix2::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    );
                    let spd = b.transpose() * b + Matrix2::identity() * 0.5;
                    let ginv = spd.try_inverse().unwrap();
                    let v = fiber_inner_spd(&ginv, &anti, &hs, m);
                    assert!(v.abs() < 1e-12, "m={m}: {v}");
                }
            }
        }
        // ker(sigma) = ker(lambda)
        for _ in 0..20 {
            let f = rand_comps(&mut rng, 3);
            let fs = symmetrize_comps(&f, 3);
            let anti: Vec<f64> = f.iter().zip(&fs).map(|(a, b)| a - b).collect();
            for _ in 0..100 {
                let v = Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                assert!(eval_on_vectors(&anti, 3, &[v, v, v]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grid_field_exact_at_nodes() {
        let f = TensorField::one_form(Poly2::x().mul(&Poly2::y()), Poly2::y());
        let gf = f.grid_sampled(17, 1.0);
        if let Rep::Grid(gr) = &gf.rep {
            for iy in 0..17 {
                for ix in 0..17 {
                    let p = gr.node(ix, iy);
                    let want = if p.norm() <= 1.0 { f.eval(p) } else { vec![0.0, 0.0] };
                    let got = gf.eval(p);
                    for (a, b) in want.iter().zip(&got) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        } else {
            panic!("expected grid rep");
        }
    }

    #[test]
    fn grid_stencil_error_near_edge() {
        let f = dx().grid_sampled(17, 1.0);
        assert!(matches!(
            f.partials(Point::new(0.99, 0.0)),
            Err(MixrayError::Stencil(..))
        ));
    }

    proptest! {
        #[test]
        fn symmetrize_idempotent(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = rng.gen_range(2usize..=4);
            let f = rand_comps(&mut rng, m);
            let s1 = symmetrize_comps(&f, m);
            let s2 = symmetrize_comps(&s1, m);
            for (a, b) in s1.iter().zip(&s2) {
                prop_assert!((a - b).abs() < 1e-14);
            }
        }

        #[test]
        fn lambda_of_sigma_matches_lambda(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = rng.gen_range(1usize..=4);
            let f = rand_comps(&mut rng, m);
            let s = symmetrize_comps(&f, m);
            for _ in 0..20 {
                let v = Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let vs = [v; MAX_RANK];
                prop_assert!(
                    (eval_on_vectors(&f, m, &vs) - eval_on_vectors(&s, m, &vs)).abs() < 1e-12
                );
            }
        }

        #[test]
        fn star_star_is_minus_identity(a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let v = Vector2::new(a, b);
            let s = crate::geometry::hodge_star(crate::geometry::hodge_star(v));
            prop_assert!((s + v).norm() < 1e-15);
        }
    }
}
