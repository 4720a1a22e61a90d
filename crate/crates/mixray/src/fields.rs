//! Named analytic test fields, seeded random field/mixing generators, and
//! the grid tensor field CSV format.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MixrayError, Result};
use crate::poly::Poly2;
use crate::tensor::{comp_count, AutomorphismField, GridTensor, Mixing, TensorField};

fn param(params: &HashMap<String, f64>, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

/// Resolves a named analytic field. Supported names: `zero`, `y_dx`, `dx`,
/// `smooth_oneform`, `potential_grad`, `curl_bump`, `bump_oneform`,
/// `harmonic_saddle`, `random_poly`. Parameters: `rank` (zero,
/// random_poly), `radius` (bump-based fields), `seed` (random_poly).
pub fn named_field(name: &str, params: &HashMap<String, f64>) -> Result<TensorField> {
    let radius = param(params, "radius", 1.0);
    match name {
        "zero" => {
            let rank = param(params, "rank", 1.0) as usize;
            Ok(TensorField::zero(rank))
        }
        "y_dx" => Ok(TensorField::one_form(Poly2::y(), Poly2::zero())),
        "dx" => Ok(TensorField::one_form(Poly2::constant(1.0), Poly2::zero())),
        "smooth_oneform" => Ok(TensorField::one_form(
            Poly2::y(),
            Poly2::x().add(&Poly2::term(0, 2, 0.3)),
        )),
        // d[(R²−x²−y²)(1 + 0.3x)], exact gradient of a boundary-vanishing
        // potential
        "potential_grad" => {
            let p = Poly2::disk_bump(radius).mul(&Poly2::constant(1.0).add(&Poly2::x().scale(0.3)));
            Ok(TensorField::one_form(p.dx(), p.dy()))
        }
        // curl[(R²−x²−y²)²] = ∂₂φ dx − ∂₁φ dy, in the kernel of I_⊥
        "curl_bump" => {
            let b = Poly2::disk_bump(radius);
            let phi = b.mul(&b);
            Ok(TensorField::one_form(phi.dy(), phi.dx().scale(-1.0)))
        }
        "bump_oneform" => {
            let b = Poly2::disk_bump(radius);
            Ok(TensorField::one_form(b.clone(), b.scale(0.5)))
        }
        // gradient of the harmonic polynomial x²−y²
        "harmonic_saddle" => Ok(TensorField::one_form(
            Poly2::x().scale(2.0),
            Poly2::y().scale(-2.0),
        )),
        "random_poly" => {
            let rank = param(params, "rank", 1.0) as usize;
            let seed = param(params, "seed", 0.0) as u64;
            Ok(random_poly_field(&mut ChaCha8Rng::seed_from_u64(seed), rank, 2))
        }
        other => Err(MixrayError::Config(format!("unknown field name '{other}'"))),
    }
}

/// Random rank-m field with polynomial components of total degree ≤ deg.
pub fn random_poly_field(rng: &mut impl Rng, rank: usize, deg: u32) -> TensorField {
    let comps = (0..comp_count(rank))
        .map(|_| {
            let mut p = Poly2::zero();
            for a in 0..=deg {
                for b in 0..=(deg - a) {
                    p = p.add(&Poly2::term(a, b, rng.gen_range(-1.0..1.0)));
                }
            }
            p
        })
        .collect();
    TensorField::from_polys(rank, comps)
}

/// Random well-conditioned constant mixing of the given degree.
pub fn random_constant_mixing(rng: &mut impl Rng, degree: usize) -> Mixing {
    Mixing::new(
        (0..degree)
            .map(|_| {
                AutomorphismField::Constant(
                    Matrix2::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ) + Matrix2::identity() * 1.5,
                )
            })
            .collect(),
    )
}

/// Parses one mixing slot: `identity` | `star` | `constant:a,b,c,d`
/// (row-major) | `near_singular` (deliberately ill-conditioned).
pub fn parse_slot(spec: &str) -> Result<AutomorphismField> {
    match spec {
        "identity" | "id" => Ok(AutomorphismField::Identity),
        "star" => Ok(AutomorphismField::Star),
        "near_singular" => Ok(AutomorphismField::Constant(Matrix2::new(
            1.0, 1.0, 1.0, 1.0 + 1e-13,
        ))),
        other => {
            if let Some(rest) = other.strip_prefix("constant:") {
                let vals: Vec<f64> = rest
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|_| MixrayError::Config(format!("bad matrix entry '{s}'")))
                    })
                    .collect::<Result<_>>()?;
                if vals.len() != 4 {
                    return Err(MixrayError::Config(
                        "constant mixing slot needs 4 entries".into(),
                    ));
                }
                Ok(AutomorphismField::Constant(Matrix2::new(
                    vals[0], vals[1], vals[2], vals[3],
                )))
            } else {
                Err(MixrayError::Config(format!("unknown mixing slot '{other}'")))
            }
        }
    }
}

/// Parses a full mixing from slot specs.
pub fn parse_mixing(slots: &[String]) -> Result<Mixing> {
    if slots.is_empty() {
        return Err(MixrayError::Config("mixing needs at least one slot".into()));
    }
    Ok(Mixing::new(
        slots.iter().map(|s| parse_slot(s)).collect::<Result<_>>()?,
    ))
}

/// Writes a grid-sampled tensor field in the interchange CSV format:
/// a metadata header line `rank,<m>,N,<n>,radius,<R>` followed by one row
/// `x,y,f_0,…,f_{2^m−1}` per node (component order lexicographic).
pub fn write_grid_csv(path: &Path, gt: &GridTensor) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "rank,{},N,{},radius,{:.17e}", gt.rank, gt.n, gt.radius)?;
    let cc = comp_count(gt.rank);
    for iy in 0..gt.n {
        for ix in 0..gt.n {
            let p = gt.node(ix, iy);
            write!(out, "{:.17e},{:.17e}", p.x, p.y)?;
            let base = (iy * gt.n + ix) * cc;
            for c in 0..cc {
                write!(out, ",{:.17e}", gt.values[base + c])?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Reads a grid tensor field CSV written by [`write_grid_csv`].
pub fn read_grid_csv(path: &Path) -> Result<TensorField> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| MixrayError::Config("empty grid field file".into()))??;
    let toks: Vec<&str> = header.split(',').collect();
    if toks.len() != 6 || toks[0] != "rank" || toks[2] != "N" || toks[4] != "radius" {
        return Err(MixrayError::Config("bad grid field header".into()));
    }
    let parse = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| MixrayError::Config(format!("bad number '{s}'")))
    };
    let rank = parse(toks[1])? as usize;
    let n = parse(toks[3])? as usize;
    let radius = parse(toks[5])?;
    let cc = comp_count(rank);
    let mut values = vec![0.0; n * n * cc];
    let mut row = 0usize;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if row >= n * n {
            return Err(MixrayError::Config("too many grid field rows".into()));
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 2 + cc {
            return Err(MixrayError::Config(format!(
                "grid field row has {} columns, expected {}",
                cols.len(),
                2 + cc
            )));
        }
        for c in 0..cc {
            values[row * cc + c] = parse(cols[2 + c])?;
        }
        row += 1;
    }
    if row != n * n {
        return Err(MixrayError::Config(format!(
            "grid field has {row} rows, expected {}",
            n * n
        )));
    }
    Ok(TensorField::from_grid(GridTensor {
        n,
        radius,
        rank,
        values,
    }))
}
