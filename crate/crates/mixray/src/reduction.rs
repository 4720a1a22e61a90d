//! Algebraic reduction between mixing ray transforms: the connecting
//! mixing D with I_A f = I_Ã(D⁻¹ f), kernel splitting, reconstruction and
//! normal-operator transfer, pointwise metric adjoints, and singular
//! value diagnostics of the discretized transforms.

use nalgebra::DMatrix;

use crate::error::{MixrayError, Result};
use crate::geometry::{MetricField, Point};
use crate::grid::GridModel;
use crate::inversion::DiscreteOperator;
use crate::tensor::{
    apply_mixing, apply_mixing_comps, comp_count, sigma_hat_a, AutomorphismField, Mixing,
    TensorField,
};
use crate::transforms::Sinogram;

/// A pair of mixings of equal degree together with the connecting mixing
/// D = A⁻¹ ∘ Ã (as field operators, i.e. slot matrices Ã_i(x)·A_i(x)⁻¹)
/// and its inverse.
#[derive(Clone)]
pub struct MixingPair {
    pub a: Mixing,
    pub a_tilde: Mixing,
    pub d: Mixing,
    pub d_inv: Mixing,
}

/// Builds the connecting mixing and verifies the operator identity
/// D f = A⁻¹(Ã f) on random fields before handing the pair out.
pub fn build_pair(a: &Mixing, a_tilde: &Mixing) -> Result<MixingPair> {
    if a.degree() != a_tilde.degree() {
        return Err(MixrayError::RankMismatch {
            expected: a.degree(),
            got: a_tilde.degree(),
        });
    }
    let a_inv = a.inverse()?;
    // field operators compose through reversed slot-matrix products:
    // (A⁻¹(Ã f))(v..) = f(Ã_s A_s⁻¹ v..), so D_i(x) = Ã_i(x) · A_i(x)⁻¹
    let d = a_tilde.then(&a_inv)?;
    let d_inv = d.inverse()?;
    let m = a.degree();
    let probe_points = [
        Point::new(0.0, 0.0),
        Point::new(0.45, -0.2),
        Point::new(-0.3, 0.55),
    ];
    let mut comps = vec![0.0; comp_count(m)];
    for (i, c) in comps.iter_mut().enumerate() {
        *c = 0.3 + 0.7 * (i as f64 + 1.0) / comp_count(m) as f64;
    }
    let f = TensorField::constant(m, comps);
    let lhs = apply_mixing(&d, &f)?;
    let rhs = apply_mixing(&a_inv, &apply_mixing(a_tilde, &f)?)?;
    for x in probe_points {
        for (u, v) in lhs.eval(x).iter().zip(rhs.eval(x)) {
            if (u - v).abs() > 1e-12 * (1.0 + v.abs()) {
                return Err(MixrayError::Contract(format!(
                    "connecting mixing failed its composition check: {u} vs {v}"
                )));
            }
        }
    }
    Ok(MixingPair {
        a: a.clone(),
        a_tilde: a_tilde.clone(),
        d,
        d_inv,
    })
}

/// Theorem-style split f = h + Dw with h = (Id − σ̂_A)f annihilated by
/// λ∘A and w = σ̂_Ã(D⁻¹ f) symmetric after mixing by Ã.
pub fn kernel_split(pair: &MixingPair, f: &TensorField) -> Result<(TensorField, TensorField)> {
    let proj = sigma_hat_a(&pair.a, f)?;
    let h = f.add(&proj.scale(-1.0));
    let w = sigma_hat_a(&pair.a_tilde, &apply_mixing(&pair.d_inv, f)?)?;
    Ok((h, w))
}

/// Wraps a left inverse of I_Ã into a left inverse of I_A: data ↦ D·R̃(data).
pub fn transfer_reconstruction<'a, R>(
    pair: &'a MixingPair,
    r_tilde: R,
) -> impl Fn(&Sinogram) -> Result<TensorField> + 'a
where
    R: Fn(&Sinogram) -> Result<TensorField> + 'a,
{
    move |data| apply_mixing(&pair.d, &r_tilde(data)?)
}

/// Slot-wise metric adjoint A* with (A_i*)(x) = g(x)⁻¹ A_i(x)ᵀ g(x); on
/// conformal metrics the factors cancel and this is the plain transpose.
pub fn adjoint_mixing(a: &Mixing, _g: &MetricField) -> Mixing {
    let slots = a
        .slots
        .iter()
        .map(|s| match s {
            AutomorphismField::Identity => AutomorphismField::Identity,
            other => match other.constant_matrix() {
                Some(m) => AutomorphismField::Constant(m.transpose()),
                None => {
                    let inner = other.clone();
                    AutomorphismField::custom("adjoint", move |x| inner.matrix_at(x).transpose())
                }
            },
        })
        .collect();
    Mixing::new(slots)
}

/// Applies a mixing node-wise to a DOF coefficient vector.
pub fn apply_mixing_coeffs(a: &Mixing, grid: &GridModel, u: &[f64]) -> Vec<f64> {
    let m = a.degree();
    let cc = comp_count(m);
    assert_eq!(u.len(), grid.dof_count(m));
    let mut out = vec![0.0; u.len()];
    for (ai, &node) in grid.active_nodes().iter().enumerate() {
        let mats = a.matrices_at(grid.node_point(node));
        let mixed = apply_mixing_comps(&mats, &u[ai * cc..(ai + 1) * cc], m);
        out[ai * cc..(ai + 1) * cc].copy_from_slice(&mixed);
    }
    out
}

/// Normal-operator transfer N_A = (D⁻¹)* N_Ã D⁻¹ on coefficient vectors.
pub fn transfer_normal<N>(
    pair: &MixingPair,
    g: &MetricField,
    grid: &GridModel,
    n_tilde: N,
    f: &[f64],
) -> Result<Vec<f64>>
where
    N: Fn(&[f64]) -> Vec<f64>,
{
    let pre = apply_mixing_coeffs(&pair.d_inv, grid, f);
    let mid = n_tilde(&pre);
    if mid.len() != f.len() {
        return Err(MixrayError::Contract("normal operator changed the DOF count".into()));
    }
    let adj = adjoint_mixing(&pair.d_inv, g);
    Ok(apply_mixing_coeffs(&adj, grid, &mid))
}

/// Dense B = W^{1/2} F V^{-1/2}: singular values of B are the singular
/// values of F between the weighted data and coefficient inner products.
pub fn dense_b(op: &DiscreteOperator) -> DMatrix<f64> {
    let (nr, nc) = (op.nrows(), op.ncols());
    let mut b = DMatrix::zeros(nr, nc);
    for r in 0..nr {
        let sw = op.ray_weights[r].sqrt();
        let (cols, vals) = op.matrix.row(r);
        for (c, v) in cols.iter().zip(vals) {
            b[(r, *c as usize)] = sw * v / op.vol_weights[*c as usize].sqrt();
        }
    }
    b
}

#[derive(Clone, Debug)]
pub struct StabilityReport {
    /// Smallest singular value of the restriction; None for a trivial
    /// subspace.
    pub sigma_min: Option<f64>,
    pub sigma_max: f64,
    pub c_emp: Option<f64>,
}

/// Smallest singular value of F restricted to a subspace. The subspace is
/// given as a matrix of orthonormal columns in the V-weighted coordinates
/// z = V^{1/2} u; pass None for the full coefficient space.
pub fn stability_probe(
    op: &DiscreteOperator,
    subspace: Option<&DMatrix<f64>>,
) -> Result<StabilityReport> {
    let b = dense_b(op);
    let restricted = match subspace {
        Some(q) => {
            if q.ncols() == 0 {
                let sigma_max = (b.transpose() * &b)
                    .symmetric_eigen()
                    .eigenvalues
                    .iter()
                    .fold(0.0f64, |m, &v| m.max(v))
                    .sqrt();
                return Ok(StabilityReport {
                    sigma_min: None,
                    sigma_max,
                    c_emp: None,
                });
            }
            if q.nrows() != op.ncols() {
                return Err(MixrayError::Contract("subspace dimension mismatch".into()));
            }
            &b * q
        }
        None => b,
    };
    let k = restricted.transpose() * &restricted;
    let eig = k.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v.max(0.0));
        hi = hi.max(v);
    }
    let sigma_min = lo.sqrt();
    Ok(StabilityReport {
        sigma_min: Some(sigma_min),
        sigma_max: hi.sqrt(),
        c_emp: (sigma_min > 0.0).then(|| 1.0 / sigma_min),
    })
}

/// Orthonormal basis (in z-coordinates) of the discrete potential
/// subspace: the span of V^{1/2}·(gradient columns), potentials vanishing
/// on and outside the boundary.
pub fn potential_subspace_basis(grid: &GridModel, op: &DiscreteOperator) -> DMatrix<f64> {
    let grad = crate::inversion::gradient_operator(grid);
    let mut m = DMatrix::zeros(op.ncols(), grad.ncols);
    for p in 0..grad.ncols {
        let mut e = vec![0.0; grad.ncols];
        e[p] = 1.0;
        let col = grad.apply(&e);
        for (r, v) in col.iter().enumerate() {
            m[(r, p)] = v * op.vol_weights[r].sqrt();
        }
    }
    orthonormal_columns(&m, 1e-10)
}

/// Thin orthonormal basis of the column span, dropping directions below
/// `tol` times the largest column norm.
pub fn orthonormal_columns(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let qr = m.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let scale = (0..r.nrows().min(r.ncols()))
        .map(|i| r[(i, i)].abs())
        .fold(0.0f64, f64::max);
    let keep: Vec<usize> = (0..r.nrows().min(r.ncols()))
        .filter(|&i| r[(i, i)].abs() > tol * scale)
        .collect();
    let mut out = DMatrix::zeros(q.nrows(), keep.len());
    for (j, &i) in keep.iter().enumerate() {
        out.set_column(j, &q.column(i));
    }
    out
}

/// Orthonormal basis (z-coordinates) of the numerical kernel of F: the
/// singular directions with σ ≤ rel_tol · σ_max. Returned together with
/// σ_max.
pub fn kernel_basis(op: &DiscreteOperator, rel_tol: f64) -> (DMatrix<f64>, f64) {
    let b = dense_b(op);
    let k = b.transpose() * &b;
    let eig = k.symmetric_eigen();
    let sigma_max = eig
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, &v| m.max(v))
        .sqrt();
    let thresh = (rel_tol * sigma_max) * (rel_tol * sigma_max);
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i].max(0.0) <= thresh)
        .collect();
    let mut out = DMatrix::zeros(op.ncols(), keep.len());
    for (j, &i) in keep.iter().enumerate() {
        out.set_column(j, &eig.eigenvectors.column(i));
    }
    (out, sigma_max)
}

/// Converts a z-coordinate vector back to coefficient space: u = V^{-1/2} z.
pub fn z_to_coeffs(op: &DiscreteOperator, z: &[f64]) -> Vec<f64> {
    z.iter()
        .zip(&op.vol_weights)
        .map(|(a, v)| a / v.sqrt())
        .collect()
}
