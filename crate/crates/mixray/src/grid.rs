//! Cartesian grid discretization of the disk: active-node bookkeeping,
//! coefficient/field round trips, volume weights, and the discrete L²
//! inner product.

use crate::error::{MixrayError, Result};
use crate::geometry::{MetricField, Point};
use crate::tensor::{comp_count, GridTensor, TensorField};

/// N x N node grid over [-R, R]^2; degrees of freedom live on the nodes
/// strictly inside the disk, (node, component) lexicographic.
#[derive(Clone)]
pub struct GridModel {
    pub n: usize,
    pub radius: f64,
    /// node id (iy * n + ix) of each active node, ascending
    active: Vec<usize>,
    /// node id -> active index
    lookup: Vec<Option<usize>>,
}

impl GridModel {
    pub fn new(n: usize, radius: f64) -> Result<Self> {
        if n < 3 {
            return Err(MixrayError::Config("grid needs at least 3 nodes per axis".into()));
        }
        let step = 2.0 * radius / (n - 1) as f64;
        let mut active = Vec::new();
        let mut lookup = vec![None; n * n];
        for iy in 0..n {
            for ix in 0..n {
                let x = -radius + step * ix as f64;
                let y = -radius + step * iy as f64;
                if (x * x + y * y).sqrt() < radius - 1e-12 {
                    lookup[iy * n + ix] = Some(active.len());
                    active.push(iy * n + ix);
                }
            }
        }
        if active.is_empty() {
            return Err(MixrayError::Config("no grid nodes inside the disk".into()));
        }
        Ok(Self {
            n,
            radius,
            active,
            lookup,
        })
    }

    pub fn cell(&self) -> f64 {
        2.0 * self.radius / (self.n - 1) as f64
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    pub fn dof_count(&self, rank: usize) -> usize {
        self.active.len() * comp_count(rank)
    }

    pub fn node_point(&self, node: usize) -> Point {
        let s = self.cell();
        Point::new(
            -self.radius + s * (node % self.n) as f64,
            -self.radius + s * (node / self.n) as f64,
        )
    }

    pub fn active_nodes(&self) -> &[usize] {
        &self.active
    }

    /// Active index of a node id, None for inactive nodes.
    pub fn active_index(&self, node: usize) -> Option<usize> {
        self.lookup.get(node).copied().flatten()
    }

    pub fn active_index_at(&self, ix: usize, iy: usize) -> Option<usize> {
        if ix >= self.n || iy >= self.n {
            return None;
        }
        self.lookup[iy * self.n + ix]
    }

    /// Samples a field into the DOF coefficient vector.
    pub fn field_to_coeffs(&self, f: &TensorField) -> Vec<f64> {
        let cc = comp_count(f.rank);
        let mut out = vec![0.0; self.active.len() * cc];
        for (ai, &node) in self.active.iter().enumerate() {
            let vals = f.eval(self.node_point(node));
            out[ai * cc..(ai + 1) * cc].copy_from_slice(&vals);
        }
        out
    }

    /// Wraps a DOF coefficient vector as a bilinear grid field (zero at
    /// inactive nodes).
    pub fn coeffs_to_field(&self, rank: usize, coeffs: &[f64]) -> TensorField {
        let cc = comp_count(rank);
        assert_eq!(coeffs.len(), self.active.len() * cc);
        let mut values = vec![0.0; self.n * self.n * cc];
        for (ai, &node) in self.active.iter().enumerate() {
            values[node * cc..(node + 1) * cc].copy_from_slice(&coeffs[ai * cc..(ai + 1) * cc]);
        }
        TensorField::from_grid(GridTensor {
            n: self.n,
            radius: self.radius,
            rank,
            values,
        })
    }

    /// Per-DOF volume weights making the weighted dot product of
    /// coefficient vectors equal l2_inner: fiberwise the conformal metric
    /// contributes c^{-m} per component and the volume form contributes
    /// c · cell², so each DOF carries c^{1-m} · cell².
    pub fn volume_weights(&self, g: &MetricField, rank: usize) -> Vec<f64> {
        let cc = comp_count(rank);
        let area = self.cell() * self.cell();
        let mut out = vec![0.0; self.active.len() * cc];
        for (ai, &node) in self.active.iter().enumerate() {
            let c = g.conformal_factor(self.node_point(node));
            let w = c.powi(1 - rank as i32) * area;
            for k in 0..cc {
                out[ai * cc + k] = w;
            }
        }
        out
    }

    /// Bilinear interpolation stencil at a point: up to four
    /// (active index, weight) pairs. In boundary cells the weights of the
    /// active corners are renormalized to sum to one, so constant fields
    /// are represented exactly up to the boundary; points whose cell has
    /// no active corner get an empty stencil.
    pub fn interp_stencil(&self, x: Point, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let r = self.radius;
        if x.x.abs() > r || x.y.abs() > r {
            return;
        }
        let s = self.cell();
        let u = ((x.x + r) / s).clamp(0.0, (self.n - 1) as f64);
        let v = ((x.y + r) / s).clamp(0.0, (self.n - 1) as f64);
        let ix = (u.floor() as usize).min(self.n - 2);
        let iy = (v.floor() as usize).min(self.n - 2);
        let fx = u - ix as f64;
        let fy = v - iy as f64;
        let corners = [
            (ix, iy, (1.0 - fx) * (1.0 - fy)),
            (ix + 1, iy, fx * (1.0 - fy)),
            (ix, iy + 1, (1.0 - fx) * fy),
            (ix + 1, iy + 1, fx * fy),
        ];
        let mut covered = 0.0;
        for (cx, cy, w) in corners {
            if w == 0.0 {
                continue;
            }
            if let Some(ai) = self.active_index_at(cx, cy) {
                out.push((ai, w));
                covered += w;
            }
        }
        if covered > 0.0 && covered < 1.0 {
            for e in out.iter_mut() {
                e.1 /= covered;
            }
        }
    }
}

/// Discrete L² inner product: Σ over active nodes of the fiberwise inner
/// product times c(x) · cell area (dV_g = c dx on conformal disks).
pub fn l2_inner(
    g: &MetricField,
    grid: &GridModel,
    f: &TensorField,
    h: &TensorField,
) -> Result<f64> {
    if f.rank != h.rank {
        return Err(MixrayError::RankMismatch {
            expected: f.rank,
            got: h.rank,
        });
    }
    let area = grid.cell() * grid.cell();
    let mut acc = 0.0;
    for &node in grid.active_nodes() {
        let x = grid.node_point(node);
        acc += crate::tensor::fiber_inner(g, x, f, h)? * g.conformal_factor(x) * area;
    }
    Ok(acc)
}

pub fn l2_norm(g: &MetricField, grid: &GridModel, f: &TensorField) -> f64 {
    l2_inner(g, grid, f, f).expect("equal ranks").max(0.0).sqrt()
}
