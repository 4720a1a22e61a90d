//! Bivariate polynomials with exact derivatives, used for analytic test
//! fields and potentials.

use nalgebra::Vector2;

/// Sparse bivariate polynomial sum c * x^a * y^b.
#[derive(Clone, Debug, Default)]
pub struct Poly2 {
    pub terms: Vec<(u32, u32, f64)>,
}

impl Poly2 {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: vec![(0, 0, c)],
        }
    }

    pub fn term(a: u32, b: u32, c: f64) -> Self {
        Self {
            terms: vec![(a, b, c)],
        }
    }

    pub fn x() -> Self {
        Self::term(1, 0, 1.0)
    }

    pub fn y() -> Self {
        Self::term(0, 1, 1.0)
    }

    pub fn eval(&self, p: Vector2<f64>) -> f64 {
        self.terms
            .iter()
            .map(|&(a, b, c)| c * p.x.powi(a as i32) * p.y.powi(b as i32))
            .sum()
    }

    pub fn grad(&self, p: Vector2<f64>) -> Vector2<f64> {
        let mut g = Vector2::zeros();
        for &(a, b, c) in &self.terms {
            if a > 0 {
                g.x += c * a as f64 * p.x.powi(a as i32 - 1) * p.y.powi(b as i32);
            }
            if b > 0 {
                g.y += c * b as f64 * p.x.powi(a as i32) * p.y.powi(b as i32 - 1);
            }
        }
        g
    }

    pub fn dx(&self) -> Poly2 {
        let terms = self
            .terms
            .iter()
            .filter(|&&(a, _, _)| a > 0)
            .map(|&(a, b, c)| (a - 1, b, c * a as f64))
            .collect();
        Poly2 { terms }
    }

    pub fn dy(&self) -> Poly2 {
        let terms = self
            .terms
            .iter()
            .filter(|&&(_, b, _)| b > 0)
            .map(|&(a, b, c)| (a, b - 1, c * b as f64))
            .collect();
        Poly2 { terms }
    }

    pub fn add(&self, other: &Poly2) -> Poly2 {
        let mut out = self.clone();
        out.terms.extend_from_slice(&other.terms);
        out.compress()
    }

    pub fn scale(&self, s: f64) -> Poly2 {
        Poly2 {
            terms: self.terms.iter().map(|&(a, b, c)| (a, b, c * s)).collect(),
        }
    }

    pub fn mul(&self, other: &Poly2) -> Poly2 {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for &(a1, b1, c1) in &self.terms {
            for &(a2, b2, c2) in &other.terms {
                terms.push((a1 + a2, b1 + b2, c1 * c2));
            }
        }
        Poly2 { terms }.compress()
    }

    fn compress(mut self) -> Poly2 {
        self.terms.sort_by_key(|&(a, b, _)| (a, b));
        let mut out: Vec<(u32, u32, f64)> = Vec::with_capacity(self.terms.len());
        for (a, b, c) in self.terms {
            match out.last_mut() {
                Some(last) if last.0 == a && last.1 == b => last.2 += c,
                _ => out.push((a, b, c)),
            }
        }
        out.retain(|&(_, _, c)| c != 0.0);
        Poly2 { terms: out }
    }

    /// (R^2 - x^2 - y^2), vanishing on the circle of the given radius.
    pub fn disk_bump(radius: f64) -> Poly2 {
        Poly2 {
            terms: vec![(0, 0, radius * radius), (2, 0, -1.0), (0, 2, -1.0)],
        }
    }
}
