//! Discretized forward operators and inversion: sparse assembly of the
//! ray transforms over a disk grid, weighted adjoints, conjugate-gradient
//! least squares, solenoidal decomposition of one-forms, and the combined
//! (I, I_⊥) one-form reconstruction.

use rayon::prelude::*;

use crate::error::{MixrayError, Result};
use crate::geometry::{shoot_geodesic, MetricField, RayCoordinate, Tangent};
use crate::grid::GridModel;
use crate::tensor::{comp_count, Mixing, TensorField, MAX_RANK};
use crate::transforms::{quadrature_weights, Sinogram};

/// Plain CSR matrix with a precomputed transpose.
#[derive(Clone)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    data: Vec<f64>,
    t_indptr: Vec<usize>,
    t_indices: Vec<u32>,
    t_data: Vec<f64>,
}

impl Csr {
    /// Builds from per-row (column, value) lists; each row must be sorted
    /// by column with unique columns.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(u32, f64)>>) -> Self {
        let nrows = rows.len();
        let mut indptr = Vec::with_capacity(nrows + 1);
        indptr.push(0);
        let nnz: usize = rows.iter().map(|r| r.len()).sum();
        let mut indices = Vec::with_capacity(nnz);
        let mut data = Vec::with_capacity(nnz);
        for row in &rows {
            for &(c, v) in row {
                indices.push(c);
                data.push(v);
            }
            indptr.push(indices.len());
        }
        // deterministic CSC transpose by counting sort over columns
        let mut counts = vec![0usize; ncols + 1];
        for &c in &indices {
            counts[c as usize + 1] += 1;
        }
        for i in 0..ncols {
            counts[i + 1] += counts[i];
        }
        let t_indptr = counts.clone();
        let mut cursor = counts;
        let mut t_indices = vec![0u32; nnz];
        let mut t_data = vec![0.0; nnz];
        for r in 0..nrows {
            for k in indptr[r]..indptr[r + 1] {
                let c = indices[k] as usize;
                let pos = cursor[c];
                cursor[c] += 1;
                t_indices[pos] = r as u32;
                t_data[pos] = data[k];
            }
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            data,
            t_indptr,
            t_indices,
            t_data,
        }
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        debug_assert_eq!(u.len(), self.ncols);
        (0..self.nrows)
            .into_par_iter()
            .map(|r| {
                let mut acc = 0.0;
                for k in self.indptr[r]..self.indptr[r + 1] {
                    acc += self.data[k] * u[self.indices[k] as usize];
                }
                acc
            })
            .collect()
    }

    pub fn apply_transpose(&self, d: &[f64]) -> Vec<f64> {
        debug_assert_eq!(d.len(), self.nrows);
        (0..self.ncols)
            .into_par_iter()
            .map(|c| {
                let mut acc = 0.0;
                for k in self.t_indptr[c]..self.t_indptr[c + 1] {
                    acc += self.t_data[k] * d[self.t_indices[k] as usize];
                }
                acc
            })
            .collect()
    }

    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[a..b], &self.data[a..b])
    }
}

/// Sparse forward map from grid DOFs to per-ray transform values, with
/// the ray-measure weights W and volume weights V that define the
/// discrete inner products on data and coefficient space.
pub struct DiscreteOperator {
    pub matrix: Csr,
    pub rank: usize,
    /// per-ray measure weights (diagonal W)
    pub ray_weights: Vec<f64>,
    /// per-DOF volume weights (diagonal V)
    pub vol_weights: Vec<f64>,
    pub mixing: String,
}

impl DiscreteOperator {
    pub fn nrows(&self) -> usize {
        self.matrix.nrows
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.matrix.apply(u)
    }

    /// Discrete adjoint F* = V^{-1} Fᵀ W, so that ⟨Fu, d⟩_W = ⟨u, F*d⟩_V.
    pub fn adjoint_apply(&self, d: &[f64]) -> Vec<f64> {
        let weighted: Vec<f64> = d.iter().zip(&self.ray_weights).map(|(a, w)| a * w).collect();
        let mut out = self.matrix.apply_transpose(&weighted);
        for (o, v) in out.iter_mut().zip(&self.vol_weights) {
            *o /= v;
        }
        out
    }

    /// Normal operator N = F* F.
    pub fn normal_apply(&self, u: &[f64]) -> Vec<f64> {
        self.adjoint_apply(&self.apply(u))
    }

    /// diag(Fᵀ W F), used for Jacobi preconditioning.
    pub fn normal_diagonal(&self) -> Vec<f64> {
        let mut diag = vec![0.0; self.ncols()];
        for r in 0..self.nrows() {
            let w = self.ray_weights[r];
            let (cols, vals) = self.matrix.row(r);
            for (c, v) in cols.iter().zip(vals) {
                diag[*c as usize] += w * v * v;
            }
        }
        diag
    }

    /// Row-wise stacking of operators over the same DOF space; data
    /// weights concatenate, volume weights must agree.
    pub fn stack(ops: &[&DiscreteOperator]) -> Result<DiscreteOperator> {
        let first = ops.first().ok_or_else(|| MixrayError::Contract("empty stack".into()))?;
        let ncols = first.ncols();
        let mut rows = Vec::new();
        let mut w = Vec::new();
        for op in ops {
            if op.ncols() != ncols {
                return Err(MixrayError::Contract("stacked operators differ in DOFs".into()));
            }
            for r in 0..op.nrows() {
                let (cols, vals) = op.matrix.row(r);
                rows.push(cols.iter().copied().zip(vals.iter().copied()).collect());
            }
            w.extend_from_slice(&op.ray_weights);
        }
        Ok(DiscreteOperator {
            matrix: Csr::from_rows(ncols, rows),
            rank: first.rank,
            ray_weights: w,
            vol_weights: first.vol_weights.clone(),
            mixing: ops.iter().map(|o| o.mixing.clone()).collect::<Vec<_>>().join("+"),
        })
    }
}

/// Assembles the discrete mixing ray transform: row r applied to grid
/// coefficients reproduces mixing_xray of the bilinear interpolant.
pub fn assemble_forward(
    g: &MetricField,
    a: &Mixing,
    grid: &GridModel,
    rays: &[RayCoordinate],
    ray_weights: &[f64],
    h: f64,
) -> Result<DiscreteOperator> {
    if rays.is_empty() {
        return Err(MixrayError::Contract("empty ray list".into()));
    }
    if ray_weights.len() != rays.len() {
        return Err(MixrayError::Contract("ray weight length mismatch".into()));
    }
    let m = a.degree();
    if m == 0 {
        return Err(MixrayError::Contract("scalar fields are not transform inputs".into()));
    }
    let cc = comp_count(m);
    let ncols = grid.dof_count(m);
    let rows: Vec<Vec<(u32, f64)>> = rays
        .par_iter()
        .map(|&rc| -> Result<Vec<(u32, f64)>> {
            let ray = shoot_geodesic(g, rc, h)?;
            let times: Vec<f64> = ray.samples.iter().map(|s| s.t).collect();
            let qw = quadrature_weights(&times);
            let mut scratch = vec![0.0; ncols];
            let mut touched: Vec<u32> = Vec::new();
            let mut stencil = Vec::with_capacity(4);
            let mut vs = [Tangent::zeros(); MAX_RANK];
            for (s, wq) in ray.samples.iter().zip(&qw) {
                if *wq == 0.0 {
                    continue;
                }
                let mats = a.matrices_at(s.x);
                for (slot, mat) in vs.iter_mut().zip(&mats) {
                    *slot = mat * s.v;
                }
                grid.interp_stencil(s.x, &mut stencil);
                for j in 0..cc {
                    let mut factor = 1.0;
                    for s2 in 0..m {
                        factor *= vs[s2][(j >> (m - 1 - s2)) & 1];
                    }
                    if factor == 0.0 {
                        continue;
                    }
                    let wf = wq * factor;
                    for &(ai, wb) in &stencil {
                        let col = ai * cc + j;
                        if scratch[col] == 0.0 {
                            touched.push(col as u32);
                        }
                        scratch[col] += wf * wb;
                    }
                }
            }
            touched.sort_unstable();
            Ok(touched
                .into_iter()
                .map(|c| (c, scratch[c as usize]))
                .filter(|&(_, v)| v != 0.0)
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DiscreteOperator {
        matrix: Csr::from_rows(ncols, rows),
        rank: m,
        ray_weights: ray_weights.to_vec(),
        vol_weights: grid.volume_weights(g, m),
        mixing: a.describe(),
    })
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub coeffs: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Preconditioned conjugate gradients on a symmetric positive
/// (semi-)definite system given by `apply`, with Jacobi preconditioner
/// `precond` (reciprocal diagonal applied multiplicatively).
fn pcg(
    apply: &dyn Fn(&[f64]) -> Vec<f64>,
    precond: &[f64],
    rhs: &[f64],
    tol: f64,
    maxiter: usize,
) -> SolveReport {
    let n = rhs.len();
    let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    if rhs_norm == 0.0 {
        return SolveReport {
            coeffs: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
            converged: true,
        };
    }
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(precond).map(|(a, m)| a * m).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut res = rhs_norm;
    for it in 0..maxiter {
        if res / rhs_norm <= tol {
            return SolveReport {
                coeffs: x,
                iterations: it,
                residual: res / rhs_norm,
                converged: true,
            };
        }
        let ap = apply(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break; // numerically null direction; stop with current iterate
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        z = r.iter().zip(precond).map(|(a, m)| a * m).collect();
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    SolveReport {
        coeffs: x,
        iterations: maxiter,
        residual: res / rhs_norm,
        converged: res / rhs_norm <= tol,
    }
}

/// Solves the regularized normal equations (FᵀWF + λ_reg V) u = FᵀW d by
/// preconditioned CG. Non-convergence is flagged, not silent.
pub fn solve_least_squares(
    op: &DiscreteOperator,
    data: &[f64],
    reg: f64,
    tol: f64,
    maxiter: usize,
) -> Result<SolveReport> {
    if data.len() != op.nrows() {
        return Err(MixrayError::Contract("data length mismatch".into()));
    }
    let weighted: Vec<f64> = data.iter().zip(&op.ray_weights).map(|(d, w)| d * w).collect();
    let rhs = op.matrix.apply_transpose(&weighted);
    let vol = op.vol_weights.clone();
    let apply = move |u: &[f64]| -> Vec<f64> {
        let fu = op.apply(u);
        let wfu: Vec<f64> = fu.iter().zip(&op.ray_weights).map(|(a, w)| a * w).collect();
        let mut out = op.matrix.apply_transpose(&wfu);
        for i in 0..out.len() {
            out[i] += reg * vol[i] * u[i];
        }
        out
    };
    let mut diag = op.normal_diagonal();
    for (d, v) in diag.iter_mut().zip(&op.vol_weights) {
        *d += reg * v;
        *d = if *d > 0.0 { 1.0 / *d } else { 1.0 };
    }
    Ok(pcg(&apply, &diag, &rhs, tol, maxiter))
}

/// Central-difference gradient matrix from scalar node values (active
/// DOFs) to one-form DOFs, with homogeneous Dirichlet data on the true
/// circle: where a stencil neighbor falls outside the disk, its value is
/// linearly extrapolated through the zero crossing on the circle
/// (Shortley–Weller), which keeps the gradient second-order consistent
/// for potentials vanishing on the boundary. Its negative transpose is
/// the matching discrete divergence.
pub fn gradient_operator(grid: &GridModel) -> Csr {
    let n = grid.n;
    let s = grid.cell();
    let inv2s = 1.0 / (2.0 * s);
    let r = grid.radius;
    let na = grid.active_count();
    // distance along +-e_j from an interior point to the circle, in (0, s]
    let crossing = |x: crate::geometry::Point, dir: f64, comp: usize| -> f64 {
        let (a, b) = if comp == 0 { (x.x, x.y) } else { (x.y, x.x) };
        let t = -dir * a + (r * r - b * b).max(0.0).sqrt();
        t.clamp(0.05 * s, s)
    };
    let mut rows: Vec<Vec<(u32, f64)>> = Vec::with_capacity(2 * na);
    for &node in grid.active_nodes() {
        let (ix, iy) = (node % n, node / n);
        let x = grid.node_point(node);
        for comp in 0..2 {
            let (plus, minus) = if comp == 0 {
                (
                    if ix + 1 < n { grid.active_index_at(ix + 1, iy) } else { None },
                    if ix > 0 { grid.active_index_at(ix - 1, iy) } else { None },
                )
            } else {
                (
                    if iy + 1 < n { grid.active_index_at(ix, iy + 1) } else { None },
                    if iy > 0 { grid.active_index_at(ix, iy - 1) } else { None },
                )
            };
            let self_ai = grid.active_index(node).expect("active node") as u32;
            let mut row: Vec<(u32, f64)> = Vec::with_capacity(3);
            let mut self_coef = 0.0;
            match plus {
                Some(ai) => row.push((ai as u32, inv2s)),
                None => {
                    let t = crossing(x, 1.0, comp);
                    self_coef += (1.0 - s / t) * inv2s;
                }
            }
            match minus {
                Some(ai) => row.push((ai as u32, -inv2s)),
                None => {
                    let t = crossing(x, -1.0, comp);
                    self_coef -= (1.0 - s / t) * inv2s;
                }
            }
            if self_coef != 0.0 {
                row.push((self_ai, self_coef));
            }
            row.sort_unstable_by_key(|e| e.0);
            rows.push(row);
        }
    }
    Csr::from_rows(na, rows)
}

#[derive(Clone, Debug)]
pub struct DecompositionReport {
    pub iterations: usize,
    pub div_residual: f64,
    pub orthogonality: f64,
}

/// Solenoidal decomposition of a one-form: f = f_s + dp with p = 0 on and
/// outside the boundary. p is the least-squares potential, i.e. the
/// discrete Poisson solution GᵀG p = Gᵀ f for the central-difference
/// gradient G; this makes f_s orthogonal to every discrete potential
/// field and divergence-free in the matching discrete sense.
pub fn solenoidal_decompose(
    g: &MetricField,
    grid: &GridModel,
    f: &TensorField,
) -> Result<(TensorField, TensorField, DecompositionReport)> {
    if f.rank != 1 {
        return Err(MixrayError::RankMismatch {
            expected: 1,
            got: f.rank,
        });
    }
    let _ = g; // the conformal factor cancels for one-forms (c^{-1} fiber, c volume)
    let grad = gradient_operator(grid);
    let fc = grid.field_to_coeffs(f);
    let rhs = grad.apply_transpose(&fc);
    let apply = |p: &[f64]| grad.apply_transpose(&grad.apply(p));
    // Jacobi diagonal of GᵀG
    let mut diag = vec![0.0; grad.ncols];
    for r in 0..grad.nrows {
        let (cols, vals) = grad.row(r);
        for (c, v) in cols.iter().zip(vals) {
            diag[*c as usize] += v * v;
        }
    }
    for d in diag.iter_mut() {
        *d = if *d > 0.0 { 1.0 / *d } else { 1.0 };
    }
    let report = pcg(&apply, &diag, &rhs, 1e-13, 40 * grid.n * grid.n);
    if !report.converged {
        return Err(MixrayError::NonConvergence(format!(
            "poisson solve stalled at relative residual {:.3e}",
            report.residual
        )));
    }
    let dp = grad.apply(&report.coeffs);
    let fs: Vec<f64> = fc.iter().zip(&dp).map(|(a, b)| a - b).collect();
    let div: Vec<f64> = grad.apply_transpose(&fs);
    let area = grid.cell() * grid.cell();
    let div_residual = div.iter().map(|v| v * v).sum::<f64>().sqrt() * area.sqrt();
    let orth: f64 = fs.iter().zip(&dp).map(|(a, b)| a * b).sum::<f64>() * area;
    let f_s = grid.coeffs_to_field(1, &fs);
    let p = grid.coeffs_to_field(0, &report.coeffs);
    Ok((
        f_s,
        p,
        DecompositionReport {
            iterations: report.iterations,
            div_residual,
            orthogonality: orth,
        },
    ))
}

/// Combined (I, I_⊥) reconstruction of a one-form from two sinograms over
/// the same ray set: stacks the identity-mixing and star-mixing forward
/// operators and solves the regularized least-squares problem.
pub fn reconstruct_oneform_combined(
    g: &MetricField,
    grid: &GridModel,
    data_i: &Sinogram,
    data_perp: &Sinogram,
    ray_weights: &[f64],
    h: f64,
    reg: f64,
    tol: f64,
    maxiter: usize,
) -> Result<(TensorField, SolveReport)> {
    if data_i.rays.len() != data_perp.rays.len()
        || data_i
            .rays
            .iter()
            .zip(&data_perp.rays)
            .any(|(a, b)| a != b)
    {
        return Err(MixrayError::Contract(
            "combined reconstruction needs identical ray sets".into(),
        ));
    }
    let f_id = assemble_forward(g, &Mixing::identity(1), grid, &data_i.rays, ray_weights, h)?;
    let star = crate::tensor::mixing_for_mixed(1, 0, g)?;
    let f_star = assemble_forward(g, &star, grid, &data_i.rays, ray_weights, h)?;
    let stacked = DiscreteOperator::stack(&[&f_id, &f_star])?;
    let mut data = data_i.scalar_values();
    data.extend(data_perp.scalar_values());
    let report = solve_least_squares(&stacked, &data, reg, tol, maxiter)?;
    Ok((grid.coeffs_to_field(1, &report.coeffs), report))
}

/// l² norm of the five-point discrete Laplacian of p over interior grid
/// nodes; certifies the harmonic-vanishing mechanism of the combined
/// uniqueness argument.
pub fn harmonic_residual(grid: &GridModel, p: &TensorField) -> f64 {
    let n = grid.n;
    let s2 = grid.cell() * grid.cell();
    let at = |ix: usize, iy: usize| p.eval(grid.node_point(iy * n + ix))[0];
    let mut acc = 0.0;
    for iy in 1..n - 1 {
        for ix in 1..n - 1 {
            if grid.active_index_at(ix, iy).is_none() {
                continue;
            }
            let lap = (at(ix + 1, iy) + at(ix - 1, iy) + at(ix, iy + 1) + at(ix, iy - 1)
                - 4.0 * at(ix, iy))
                / s2;
            acc += lap * lap;
        }
    }
    acc.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{boundary_grid, ray_measure_weights};
    use crate::grid::{l2_inner, l2_norm};
    use crate::poly::Poly2;
    use crate::tensor::{apply_mixing, AutomorphismField};
    use crate::transforms::geodesic_xray;
    use nalgebra::Matrix2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_setup() -> (MetricField, GridModel, Vec<RayCoordinate>, Vec<f64>) {
        let g = MetricField::euclidean(1.0);
        let grid = GridModel::new(24, 1.0).unwrap();
        let rays = boundary_grid(12, 12);
        let w = ray_measure_weights(&rays, 12, 12);
        (g, grid, rays, w)
    }

    #[test]
    fn forward_matches_chord_integrals() {
        // constant dx: row integrals equal v1 * tau
        let g = MetricField::euclidean(1.0);
        let grid = GridModel::new(64, 1.0).unwrap();
        let rays = boundary_grid(8, 4);
        let w = ray_measure_weights(&rays, 8, 4);
        let op = assemble_forward(&g, &Mixing::identity(1), &grid, &rays, &w, 1e-3).unwrap();
        let f = TensorField::constant(1, vec![1.0, 0.0]);
        let data = op.apply(&grid.field_to_coeffs(&f));
        for (rc, got) in rays.iter().zip(&data) {
            let ray = shoot_geodesic(&g, *rc, 1e-3).unwrap();
            let want = ray.samples[0].v.x * ray.tau;
            assert!((got - want).abs() < 1e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_coefficients_zero_data() {
        let (g, grid, rays, w) = small_setup();
        let op = assemble_forward(&g, &Mixing::identity(1), &grid, &rays, &w, 1e-2).unwrap();
        let data = op.apply(&vec![0.0; op.ncols()]);
        assert!(data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mixing_assembly_consistent() {
        // F_A u = F_Id (coeffs of A applied to u's field) for constant A
        let (g, grid, rays, w) = small_setup();
        let a = Mixing::new(vec![AutomorphismField::Constant(Matrix2::new(
            1.2, -0.3, 0.4, 0.9,
        ))]);
        let op_a = assemble_forward(&g, &a, &grid, &rays, &w, 1e-2).unwrap();
        let op_id = assemble_forward(&g, &Mixing::identity(1), &grid, &rays, &w, 1e-2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u: Vec<f64> = (0..op_a.ncols()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let field = grid.coeffs_to_field(1, &u);
        let au = grid.field_to_coeffs(&apply_mixing(&a, &field).unwrap());
        let lhs = op_a.apply(&u);
        let rhs = op_id.apply(&au);
        for (x, y) in lhs.iter().zip(&rhs) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn adjoint_pairing_identity() {
        let (g, grid, rays, w) = small_setup();
        let op = assemble_forward(&g, &Mixing::identity(1), &grid, &rays, &w, 1e-2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u: Vec<f64> = (0..op.ncols()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d: Vec<f64> = (0..op.nrows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fu = op.apply(&u);
        let fstar_d = op.adjoint_apply(&d);
        let lhs: f64 = fu.iter().zip(&d).zip(&op.ray_weights).map(|((a, b), w)| a * b * w).sum();
        let rhs: f64 = u
            .iter()
            .zip(&fstar_d)
            .zip(&op.vol_weights)
            .map(|((a, b), v)| a * b * v)
            .sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn zero_data_zero_solution() {
        let (g, grid, rays, w) = small_setup();
        let op = assemble_forward(&g, &Mixing::identity(1), &grid, &rays, &w, 1e-2).unwrap();
        let rep = solve_least_squares(&op, &vec![0.0; op.nrows()], 1e-8, 1e-10, 100).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 0);
        assert!(rep.coeffs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decompose_pure_potential() {
        let g = MetricField::euclidean(1.0);
        let grid = GridModel::new(64, 1.0).unwrap();
        let p0 = TensorField::scalar(Poly2::disk_bump(1.0).mul(&Poly2::x()));
        let f = crate::tensor::covariant_derivative(&g, &p0).unwrap();
        let (f_s, _p, rep) = solenoidal_decompose(&g, &grid, &f).unwrap();
        let ratio = l2_norm(&g, &grid, &f_s) / l2_norm(&g, &grid, &f);
        assert!(ratio < 1e-2, "solenoidal residual ratio {ratio}");
        assert!(rep.orthogonality.abs() < 1e-10);
    }

    #[test]
    fn decompose_divergence_free() {
        let g = MetricField::euclidean(1.0);
        let grid = GridModel::new(64, 1.0).unwrap();
        let phi = TensorField::scalar(Poly2::disk_bump(1.0).mul(&Poly2::disk_bump(1.0)));
        let f = crate::tensor::curl_scalar(&g, &phi).unwrap();
        let (f_s, p, _rep) = solenoidal_decompose(&g, &grid, &f).unwrap();
        let diff = f.add(&f_s.scale(-1.0));
        assert!(l2_norm(&g, &grid, &diff) < 2e-2 * l2_norm(&g, &grid, &f));
        let pn = l2_norm(&g, &grid, &p);
        assert!(pn < 2e-2, "potential norm {pn}");
    }

    #[test]
    fn decompose_reconstitutes_exactly() {
        let g = MetricField::euclidean(1.0);
        let grid = GridModel::new(32, 1.0).unwrap();
        let f = TensorField::one_form(Poly2::y(), Poly2::x().add(&Poly2::constant(0.2)));
        let (f_s, p, _ ) = solenoidal_decompose(&g, &grid, &f).unwrap();
        // f_s + dp = f at interior nodes by construction
        let grad = gradient_operator(&grid);
        let dp = grad.apply(&grid.field_to_coeffs(&p));
        let fs = grid.field_to_coeffs(&f_s);
        let fc = grid.field_to_coeffs(&f);
        for i in 0..fc.len() {
            assert!((fs[i] + dp[i] - fc[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn decompose_orthogonality_l2() {
        let g = MetricField::constant_curvature(-0.5, 1.0).unwrap();
        let grid = GridModel::new(48, 1.0).unwrap();
        let f = TensorField::one_form(
            Poly2::y().add(&Poly2::x().mul(&Poly2::x())),
            Poly2::x().scale(0.5).add(&Poly2::constant(-0.3)),
        );
        let (f_s, p, _) = solenoidal_decompose(&g, &grid, &f).unwrap();
        let grad = gradient_operator(&grid);
        let dp = grid.coeffs_to_field(1, &grad.apply(&grid.field_to_coeffs(&p)));
        let ip = l2_inner(&g, &grid, &f_s, &dp).unwrap();
        let bound = 1e-6 * l2_norm(&g, &grid, &f_s) * l2_norm(&g, &grid, &dp).max(1e-30);
        assert!(ip.abs() <= bound, "{ip} vs {bound}");
    }

    #[test]
    fn harmonic_residual_examples() {
        let grid = GridModel::new(33, 1.0).unwrap();
        let zero = TensorField::scalar(Poly2::zero());
        assert_eq!(harmonic_residual(&grid, &zero), 0.0);

        // x^2 - y^2 is stencil-exactly harmonic
        let harm = TensorField::scalar(Poly2::term(2, 0, 1.0).add(&Poly2::term(0, 2, -1.0)));
        assert!(harmonic_residual(&grid, &harm) < 1e-10);

        // 1 - x^2 - y^2 has discrete Laplacian exactly -4 per node
        let bump = TensorField::scalar(Poly2::disk_bump(1.0));
        let r = harmonic_residual(&grid, &bump);
        let mut count = 0usize;
        for iy in 1..grid.n - 1 {
            for ix in 1..grid.n - 1 {
                if grid.active_index_at(ix, iy).is_some() {
                    count += 1;
                }
            }
        }
        assert!((r - 4.0 * (count as f64).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn combined_reconstruction_small() {
        // potential one-form recovered from (I, I_perp) at coarse scale
        let g = MetricField::euclidean(1.0);
        let grid = GridModel::new(24, 1.0).unwrap();
        let rays = boundary_grid(32, 32);
        let w = ray_measure_weights(&rays, 32, 32);
        let p0 = TensorField::scalar(Poly2::disk_bump(1.0));
        let f = crate::tensor::covariant_derivative(&g, &p0).unwrap();
        let data_i = geodesic_xray(&g, &f, &rays, 1e-3).unwrap();
        let data_perp = crate::transforms::transverse_xray(&g, &f, &rays, 1e-3).unwrap();
        let (rec, rep) =
            reconstruct_oneform_combined(&g, &grid, &data_i, &data_perp, &w, 2e-3, 1e-10, 1e-10, 2000)
                .unwrap();
        assert!(rep.converged);
        let diff = rec.add(&f.scale(-1.0));
        let rel = l2_norm(&g, &grid, &diff) / l2_norm(&g, &grid, &f);
        assert!(rel < 0.05, "relative error {rel}");
    }
}
