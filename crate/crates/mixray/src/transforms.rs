//! Forward ray transforms: geodesic I, mixing I_A = I ∘ A, mixed L_{k,l},
//! transverse I_⊥ = L_{k,0}, and the intrinsic (transport-based)
//! formulation of the mixed transform used as a cross-formulation oracle.

use rayon::prelude::*;

use crate::error::{MixrayError, Result};
use crate::geometry::{
    hodge_star, shoot_geodesic, shoot_geodesic_transported, MetricField, RayCoordinate, Tangent,
};
use crate::tensor::{apply_mixing_comps, comp_count, eval_on_vectors, mixing_for_mixed, Mixing,
    TensorField, MAX_RANK};

#[derive(Clone, Debug)]
pub struct SinogramMeta {
    pub metric: String,
    pub rank: usize,
    pub mixing: String,
    pub h: f64,
}

/// Transform data over a ray set: one value per ray for scalar-valued
/// transforms, 2^k values for the intrinsic mixed transform.
#[derive(Clone, Debug)]
pub struct Sinogram {
    pub rays: Vec<RayCoordinate>,
    pub taus: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub meta: SinogramMeta,
}

impl Sinogram {
    pub fn scalar_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v[0]).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Quadrature weights aligned with ray samples: composite Simpson on the
/// uniform part (odd interval counts finished with a 3/8 block, a single
/// interval by trapezoid) plus a trapezoid on the short exit segment.
pub fn quadrature_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    if n < 2 {
        return w;
    }
    // uniform intervals cover times[0..n-1]; the last interval ends at tau
    let uniform = n - 2;
    let h = if uniform > 0 { times[1] - times[0] } else { 0.0 };
    match uniform {
        0 => {}
        1 => {
            w[0] += h / 2.0;
            w[1] += h / 2.0;
        }
        k if k % 2 == 0 => {
            for i in 0..=k {
                let c = if i == 0 || i == k {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w[i] += c * h / 3.0;
            }
        }
        k => {
            let head = k - 3;
            if head > 0 {
                for i in 0..=head {
                    let c = if i == 0 || i == head {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    w[i] += c * h / 3.0;
                }
            }
            for (j, c) in [1.0, 3.0, 3.0, 1.0].iter().enumerate() {
                w[head + j] += c * 3.0 * h / 8.0;
            }
        }
    }
    let dt = times[n - 1] - times[n - 2];
    if dt > 1e-14 {
        w[n - 2] += dt / 2.0;
        w[n - 1] += dt / 2.0;
    }
    w
}

fn check_transform_input(a: &Mixing, f: &TensorField) -> Result<()> {
    if f.rank == 0 {
        return Err(MixrayError::Contract(
            "scalar fields are not transform inputs".into(),
        ));
    }
    if a.degree() != f.rank {
        return Err(MixrayError::RankMismatch {
            expected: a.degree(),
            got: f.rank,
        });
    }
    Ok(())
}

/// I_A f: per ray, quadrature of λ(Af)(γ(t), γ̇(t)) = f(A_1 γ̇, …, A_m γ̇).
pub fn mixing_xray(
    g: &MetricField,
    a: &Mixing,
    f: &TensorField,
    rays: &[RayCoordinate],
    h: f64,
) -> Result<Sinogram> {
    check_transform_input(a, f)?;
    let m = f.rank;
    let per_ray: Vec<(f64, f64)> = rays
        .par_iter()
        .map(|&rc| -> Result<(f64, f64)> {
            let ray = shoot_geodesic(g, rc, h)?;
            let times: Vec<f64> = ray.samples.iter().map(|s| s.t).collect();
            let w = quadrature_weights(&times);
            let mut acc = 0.0;
            let mut vs = [Tangent::zeros(); MAX_RANK];
            for (s, wi) in ray.samples.iter().zip(&w) {
                if *wi == 0.0 {
                    continue;
                }
                let mats = a.matrices_at(s.x);
                for (slot, mat) in vs.iter_mut().zip(&mats) {
                    *slot = mat * s.v;
                }
                let comps = f.eval(s.x);
                acc += wi * eval_on_vectors(&comps, m, &vs);
            }
            Ok((acc, ray.tau))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Sinogram {
        rays: rays.to_vec(),
        taus: per_ray.iter().map(|p| p.1).collect(),
        values: per_ray.iter().map(|p| vec![p.0]).collect(),
        meta: SinogramMeta {
            metric: g.kind_name(),
            rank: m,
            mixing: a.describe(),
            h,
        },
    })
}

/// The geodesic ray transform I = I_Id.
pub fn geodesic_xray(
    g: &MetricField,
    f: &TensorField,
    rays: &[RayCoordinate],
    h: f64,
) -> Result<Sinogram> {
    mixing_xray(g, &Mixing::identity(f.rank), f, rays, h)
}

/// L_{k,l} = I ∘ A_{k,l}.
pub fn mixed_xray(
    g: &MetricField,
    k: usize,
    l: usize,
    f: &TensorField,
    rays: &[RayCoordinate],
    h: f64,
) -> Result<Sinogram> {
    if k + l != f.rank {
        return Err(MixrayError::RankMismatch {
            expected: k + l,
            got: f.rank,
        });
    }
    mixing_xray(g, &mixing_for_mixed(k, l, g)?, f, rays, h)
}

/// I_⊥ = L_{m,0}: every slot rotated.
pub fn transverse_xray(
    g: &MetricField,
    f: &TensorField,
    rays: &[RayCoordinate],
    h: f64,
) -> Result<Sinogram> {
    mixed_xray(g, f.rank, 0, f, rays, h)
}

/// Intrinsic mixed transform on a single ray: contracts the last l slots
/// with γ̇, projects the first k slots onto γ̇^⊥, pulls the k-tensor back
/// to the entry point by parallel transport, and integrates. Returns the
/// k-tensor components at the entry point and their pairing with
/// (★γ̇(0))^{⊗k}.
pub fn mixed_xray_intrinsic(
    g: &MetricField,
    k: usize,
    l: usize,
    f: &TensorField,
    rc: RayCoordinate,
    h: f64,
) -> Result<(Vec<f64>, f64)> {
    if k + l != f.rank {
        return Err(MixrayError::RankMismatch {
            expected: k + l,
            got: f.rank,
        });
    }
    if f.rank == 0 {
        return Err(MixrayError::Contract(
            "scalar fields are not transform inputs".into(),
        ));
    }
    let m = f.rank;
    let tray = shoot_geodesic_transported(g, rc, h)?;
    let ray = &tray.ray;
    let times: Vec<f64> = ray.samples.iter().map(|s| s.t).collect();
    let w = quadrature_weights(&times);
    let cck = comp_count(k);
    let mut acc = vec![0.0; cck];
    for ((s, trans), wi) in ray.samples.iter().zip(&tray.transports).zip(&w) {
        if *wi == 0.0 {
            continue;
        }
        let comps = f.eval(s.x);
        // contract the last l slots with the velocity
        let mut kcomps = vec![0.0; cck];
        for (i, slot) in kcomps.iter_mut().enumerate() {
            let mut v = 0.0;
            for jl in 0..comp_count(l) {
                let mut prod = comps[(i << l) | jl];
                for s2 in 0..l {
                    prod *= s.v[(jl >> (l - 1 - s2)) & 1];
                }
                v += prod;
            }
            *slot = v;
        }
        if k > 0 {
            // project onto the orthocomplement of the velocity, then pull
            // back to t = 0: per-slot matrix Q = P(t) · M(t)
            let c = g.conformal_factor(s.x);
            let p = nalgebra::Matrix2::identity() - (s.v * s.v.transpose()) * c;
            let q = p * trans;
            let mats = vec![q; k];
            kcomps = apply_mixing_comps(&mats, &kcomps, k);
        }
        for (a, b) in acc.iter_mut().zip(&kcomps) {
            *a += wi * b;
        }
    }
    let v0 = ray.samples[0].v;
    let star0 = hodge_star(v0);
    let pairing = eval_on_vectors(&acc, k, &[star0; MAX_RANK][..k.max(1)]);
    let _ = m;
    Ok((acc, pairing))
}
