//! Conformal metrics on a disk, geodesic shooting with boundary exit
//! detection, parallel transport, and the rotation operator.
//!
//! The metric is always g = c(x) * delta on the closed disk of a given
//! radius, with c > 0. Geodesics are integrated with fixed-step RK4 and the
//! exit time is refined by bisection on the final step.

use std::sync::Arc;

use nalgebra::{Matrix2, Vector2};

use crate::error::{MixrayError, Result};

pub type Point = Vector2<f64>;
pub type Tangent = Vector2<f64>;

/// Tolerance on | |x(tau)| - radius | after exit refinement.
pub const EXIT_TOL: f64 = 1e-12;
/// Christoffel symbols are evaluable on a slightly enlarged disk so that
/// integrator stages may overshoot the boundary.
const DOMAIN_SLACK: f64 = 1.05;
/// Tangential-ray exclusion used by the boundary grid (radians).
pub const ALPHA_MARGIN: f64 = 0.01;

type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(Point) -> Vector2<f64> + Send + Sync>;

#[derive(Clone)]
pub enum MetricKind {
    Euclidean,
    /// c(x) = 4 / (1 + kappa |x|^2)^2 with kappa <= 0.
    ConstantCurvature { kappa: f64 },
    Custom {
        name: String,
        c: ScalarFn,
        grad_c: Option<GradFn>,
    },
}

/// Conformal Riemannian metric g = c(x) * identity on the closed disk.
#[derive(Clone)]
pub struct MetricField {
    pub kind: MetricKind,
    pub radius: f64,
}

impl MetricField {
    pub fn euclidean(radius: f64) -> Self {
        assert!(radius > 0.0);
        Self {
            kind: MetricKind::Euclidean,
            radius,
        }
    }

    pub fn constant_curvature(kappa: f64, radius: f64) -> Result<Self> {
        if kappa > 0.0 {
            return Err(MixrayError::Config(
        "constant_curvature supports kappa <= 0 only".into(),
            ));
        }
        let edge = 1.0 + kappa * (DOMAIN_SLACK * radius).powi(2);
        if edge <= 0.05 {
            return Err(MixrayError::Config(format!(
                "kappa = {kappa} makes the conformal factor degenerate on the disk of radius {radius}"
            )));
        }
        Ok(Self {
            kind: MetricKind::ConstantCurvature { kappa },
            radius,
        })
    }

    pub fn custom(name: &str, c: ScalarFn, grad_c: Option<GradFn>, radius: f64) -> Self {
        Self {
            kind: MetricKind::Custom {
                name: name.to_string(),
                c,
                grad_c,
            },
            radius,
        }
    }

    pub fn kind_name(&self) -> String {
        match &self.kind {
            MetricKind::Euclidean => "euclidean".into(),
            MetricKind::ConstantCurvature { kappa } => format!("constant_curvature(kappa={kappa})"),
            MetricKind::Custom { name, .. } => format!("custom({name})"),
        }
    }

    pub fn conformal_factor(&self, x: Point) -> f64 {
        match &self.kind {
            MetricKind::Euclidean => 1.0,
            MetricKind::ConstantCurvature { kappa } => {
                let d = 1.0 + kappa * x.norm_squared();
                4.0 / (d * d)
            }
            MetricKind::Custom { c, .. } => c(x),
        }
    }

    pub fn conformal_grad(&self, x: Point) -> Vector2<f64> {
        match &self.kind {
            MetricKind::Euclidean => Vector2::zeros(),
            MetricKind::ConstantCurvature { kappa } => {
                let d = 1.0 + kappa * x.norm_squared();
                x * (-16.0 * kappa / (d * d * d))
            }
            MetricKind::Custom { c, grad_c, .. } => match grad_c {
                Some(g) => g(x),
                None => {
                    // central differences; custom factors are assumed smooth
                    // slightly beyond the disk
                    let h = 1e-6 * self.radius.max(1.0);
                    let ex = Vector2::new(h, 0.0);
                    let ey = Vector2::new(0.0, h);
                    Vector2::new(
                        (c(x + ex) - c(x - ex)) / (2.0 * h),
                        (c(x + ey) - c(x - ey)) / (2.0 * h),
                    )
                }
            },
        }
    }

    /// g(x) = c(x) * identity, for x in the closed disk.
    pub fn metric_eval(&self, x: Point) -> Result<Matrix2<f64>> {
        if x.norm() > self.radius * (1.0 + 1e-12) {
            return Err(MixrayError::Domain(x.x, x.y, self.radius));
        }
        Ok(Matrix2::identity() * self.conformal_factor(x))
    }

    pub fn metric_inverse(&self, x: Point) -> Matrix2<f64> {
        Matrix2::identity() / self.conformal_factor(x)
    }

    /// Christoffel symbols Gamma^i_{jk} of the conformal metric,
    /// symmetric in (j, k). Indexed [i][j][k].
    pub fn christoffel(&self, x: Point) -> Result<[[[f64; 2]; 2]; 2]> {
        if x.norm() > self.radius * DOMAIN_SLACK {
            return Err(MixrayError::Domain(x.x, x.y, self.radius));
        }
        Ok(self.christoffel_unchecked(x))
    }

    #[inline]
    fn christoffel_unchecked(&self, x: Point) -> [[[f64; 2]; 2]; 2] {
        let c = self.conformal_factor(x);
        let dc = self.conformal_grad(x);
        let half_inv = 0.5 / c;
        let mut gamma = [[[0.0; 2]; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let mut v = 0.0;
                    if i == j {
                        v += dc[k];
                    }
                    if i == k {
                        v += dc[j];
                    }
                    if j == k {
                        v -= dc[i];
                    }
                    gamma[i][j][k] = half_inv * v;
                }
            }
        }
        gamma
    }

    pub fn g_inner(&self, x: Point, u: Tangent, v: Tangent) -> f64 {
        self.conformal_factor(x) * u.dot(&v)
    }

    pub fn g_norm(&self, x: Point, v: Tangent) -> f64 {
        self.g_inner(x, v, v).sqrt()
    }
}

/// Positively oriented 90 degree rotation of a tangent vector. For
/// conformal metrics this is exactly (v1, v2) -> (-v2, v1) in Cartesian
/// components, independent of the conformal factor.
pub fn hodge_star(v: Tangent) -> Tangent {
    Vector2::new(-v.y, v.x)
}

/// Matrix of the rotation as a vector map, (star)^j_i.
pub fn hodge_star_matrix() -> Matrix2<f64> {
    Matrix2::new(0.0, -1.0, 1.0, 0.0)
}

/// Fan-beam boundary coordinate: entry point angle beta and direction
/// angle alpha measured from the inward unit normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayCoordinate {
    pub beta: f64,
    pub alpha: f64,
}

impl RayCoordinate {
    pub fn new(beta: f64, alpha: f64) -> Self {
        Self { beta, alpha }
    }

    pub fn entry_point(&self, radius: f64) -> Point {
        Vector2::new(radius * self.beta.cos(), radius * self.beta.sin())
    }

    /// Initial velocity: inward normal rotated counterclockwise by alpha,
    /// normalized to g-unit length at the entry point.
    pub fn initial_velocity(&self, g: &MetricField) -> Tangent {
        let p = self.entry_point(g.radius);
        let nu = -p / g.radius;
        let (s, c) = self.alpha.sin_cos();
        let d = Vector2::new(c * nu.x - s * nu.y, s * nu.x + c * nu.y);
        d / g.conformal_factor(p).sqrt()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RaySample {
    pub t: f64,
    pub x: Point,
    pub v: Tangent,
}

/// A maximal unit-speed geodesic chord through the disk, sampled at the
/// integrator step plus a refined exit sample at t = tau.
#[derive(Clone, Debug)]
pub struct GeodesicRay {
    pub entry: RayCoordinate,
    pub h: f64,
    pub samples: Vec<RaySample>,
    pub tau: f64,
}

impl GeodesicRay {
    pub fn exit(&self) -> &RaySample {
        self.samples.last().expect("ray has samples")
    }
}

#[derive(Clone, Copy)]
struct State {
    x: Point,
    v: Tangent,
    /// Parallel-transport matrix from t = 0 to the current time
    /// (columns are transported basis vectors).
    w: Matrix2<f64>,
}

fn rhs(g: &MetricField, s: &State) -> State {
    let gamma = g.christoffel_unchecked(s.x);
    let v = s.v;
    let mut a = Vector2::zeros();
    for i in 0..2 {
        let mut acc = 0.0;
        for j in 0..2 {
            for k in 0..2 {
                acc += gamma[i][j][k] * v[j] * v[k];
            }
        }
        a[i] = -acc;
    }
    // transport: (W')^i_c = -Gamma^i_{jk} v^j W^k_c
    let mut dw = Matrix2::zeros();
    for c in 0..2 {
        for i in 0..2 {
            let mut acc = 0.0;
            for j in 0..2 {
                for k in 0..2 {
                    acc += gamma[i][j][k] * v[j] * s.w[(k, c)];
                }
            }
            dw[(i, c)] = -acc;
        }
    }
    State {
        x: v,
        v: a,
        w: dw,
    }
}

fn rk4_step(g: &MetricField, s: &State, h: f64) -> State {
    let add = |a: &State, b: &State, f: f64| State {
        x: a.x + b.x * f,
        v: a.v + b.v * f,
        w: a.w + b.w * f,
    };
    let k1 = rhs(g, s);
    let k2 = rhs(g, &add(s, &k1, h / 2.0));
    let k3 = rhs(g, &add(s, &k2, h / 2.0));
    let k4 = rhs(g, &add(s, &k3, h));
    State {
        x: s.x + (k1.x + k2.x * 2.0 + k3.x * 2.0 + k4.x) * (h / 6.0),
        v: s.v + (k1.v + k2.v * 2.0 + k3.v * 2.0 + k4.v) * (h / 6.0),
        w: s.w + (k1.w + k2.w * 2.0 + k3.w * 2.0 + k4.w) * (h / 6.0),
    }
}

/// Result of shooting with the transport matrix recorded at every sample.
pub struct TransportedRay {
    pub ray: GeodesicRay,
    /// Transport matrix from t = 0 to the sample time, one per sample.
    pub transports: Vec<Matrix2<f64>>,
}

fn shoot_impl(
    g: &MetricField,
    entry: RayCoordinate,
    x0: Point,
    v0: Tangent,
    h: f64,
    max_length: f64,
) -> Result<TransportedRay> {
    assert!(h > 0.0, "step must be positive");
    let r = g.radius;
    let mut state = State {
        x: x0,
        v: v0,
        w: Matrix2::identity(),
    };
    let mut t = 0.0;
    let mut samples = vec![RaySample { t, x: x0, v: v0 }];
    let mut transports = vec![Matrix2::identity()];
    loop {
        let next = rk4_step(g, &state, h);
        if next.x.norm() >= r {
            // refine the crossing inside (t, t + h] by bisection on the
            // partial step length
            let mut lo = 0.0;
            let mut hi = h;
            let mut exit = next;
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let trial = rk4_step(g, &state, mid);
                if trial.x.norm() >= r {
                    hi = mid;
                    exit = trial;
                } else {
                    lo = mid;
                }
                if (exit.x.norm() - r).abs() <= EXIT_TOL * 0.5 {
                    break;
                }
            }
            let tau = t + hi;
            samples.push(RaySample {
                t: tau,
                x: exit.x,
                v: exit.v,
            });
            transports.push(exit.w);
            return Ok(TransportedRay {
                ray: GeodesicRay {
                    entry,
                    h,
                    samples,
                    tau,
                },
                transports,
            });
        }
        state = next;
        t += h;
        samples.push(RaySample {
            t,
            x: state.x,
            v: state.v,
        });
        transports.push(state.w);
        if t > max_length {
            return Err(MixrayError::NonTerminatingRay(max_length));
        }
    }
}

/// Shoots the geodesic from a fan-beam entry coordinate until it exits
/// the disk. The trapping guard defaults to 100 * radius.
pub fn shoot_geodesic(g: &MetricField, entry: RayCoordinate, h: f64) -> Result<GeodesicRay> {
    Ok(shoot_geodesic_transported(g, entry, h)?.ray)
}

pub fn shoot_geodesic_transported(
    g: &MetricField,
    entry: RayCoordinate,
    h: f64,
) -> Result<TransportedRay> {
    if !(entry.alpha > -std::f64::consts::FRAC_PI_2 && entry.alpha < std::f64::consts::FRAC_PI_2) {
        return Err(MixrayError::TangentialEntry(entry.alpha));
    }
    let x0 = entry.entry_point(g.radius);
    let v0 = entry.initial_velocity(g);
    shoot_impl(g, entry, x0, v0, h, 100.0 * g.radius)
}

/// Shoots from an arbitrary interior state until exit; the entry field
/// of the result carries no fan-beam meaning.
pub fn shoot_from_state(g: &MetricField, x0: Point, v0: Tangent, h: f64) -> Result<GeodesicRay> {
    // refined exit points sit on the boundary up to the exit tolerance
    if x0.norm() > g.radius * (1.0 + 1e-9) {
        return Err(MixrayError::Domain(x0.x, x0.y, g.radius));
    }
    let entry = RayCoordinate::new(0.0, 0.0);
    Ok(shoot_impl(g, entry, x0, v0, h, 100.0 * g.radius)?.ray)
}

/// Parallel transport of w0 from the ray entry to time t, by integrating
/// the transport equation along a fresh integration of the same chord.
pub fn parallel_transport(
    g: &MetricField,
    ray: &GeodesicRay,
    w0: Tangent,
    t: f64,
) -> Result<Tangent> {
    if t < 0.0 || t > ray.tau + ray.h {
        return Err(MixrayError::RayParameter(t, ray.tau));
    }
    let first = &ray.samples[0];
    let mut state = State {
        x: first.x,
        v: first.v,
        w: Matrix2::identity(),
    };
    let full = (t / ray.h).floor() as usize;
    let mut elapsed = 0.0;
    for _ in 0..full {
        state = rk4_step(g, &state, ray.h);
        elapsed += ray.h;
    }
    let rest = t - elapsed;
    if rest > 1e-15 {
        state = rk4_step(g, &state, rest);
    }
    Ok(state.w * w0)
}

/// Uniform fan-beam grid over the inflow boundary, beta-major ordering.
/// Alpha samples are midpoints of a grid excluding a margin of 0.01 rad
/// at the tangential ends.
pub fn boundary_grid(n_beta: usize, n_alpha: usize) -> Vec<RayCoordinate> {
    assert!(n_beta >= 1 && n_alpha >= 1);
    let two_pi = 2.0 * std::f64::consts::PI;
    let span = std::f64::consts::PI - 2.0 * ALPHA_MARGIN;
    let mut rays = Vec::with_capacity(n_beta * n_alpha);
    for i in 0..n_beta {
        let beta = two_pi * i as f64 / n_beta as f64;
        for j in 0..n_alpha {
            let alpha =
                -std::f64::consts::FRAC_PI_2 + ALPHA_MARGIN + span * (j as f64 + 0.5) / n_alpha as f64;
            rays.push(RayCoordinate::new(beta, alpha));
        }
    }
    rays
}

/// Per-ray fan-beam measure weight cos(alpha) * dbeta * dalpha.
pub fn ray_measure_weights(rays: &[RayCoordinate], n_beta: usize, n_alpha: usize) -> Vec<f64> {
    let dbeta = 2.0 * std::f64::consts::PI / n_beta as f64;
    let dalpha = (std::f64::consts::PI - 2.0 * ALPHA_MARGIN) / n_alpha as f64;
    rays.iter()
        .map(|r| r.alpha.cos() * dbeta * dalpha)
        .collect()
}
