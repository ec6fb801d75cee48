//! Independent checks for the pairwise ellipsoid test.
//!
//! Two sublevel sets `{x : f_i(x) ≤ c}` and `{x : f_j(x) ≤ c}` with
//! `f(x) = (x - center)ᵀ P (x - center)` meet iff `min_x max(f_i, f_j) ≤ c`.
//! For every `λ ∈ [0, 1]` the convex combination `λ f_i + (1 - λ) f_j` has a
//! closed-form minimizer `x(λ)`; its minimum is a lower bound on the min-max and
//! `max(f_i, f_j)` at `x(λ)` is an upper bound. Searching `λ` brackets the
//! min-max from both sides without using the closed-form intersection rule.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

const GRID: usize = 1000;
const GOLDEN_ITERS: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMaxBracket {
    pub lower: f64,
    pub upper: f64,
}

impl MinMaxBracket {
    pub fn mid(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleVerdict {
    Intersect,
    Disjoint,
    /// Within the relative boundary band around the level.
    Band,
    /// Outside the band but the bracket straddles the level.
    Unresolved,
}

fn quad(p: &DMatrix<f64>, x: &DVector<f64>, c: &DVector<f64>) -> f64 {
    let d = x - c;
    d.dot(&(p * &d))
}

struct Pair<'a> {
    pi: &'a DMatrix<f64>,
    ci: &'a DVector<f64>,
    pj: &'a DMatrix<f64>,
    cj: &'a DVector<f64>,
}

impl Pair<'_> {
    /// `(λ f_i + (1-λ) f_j, max(f_i, f_j))` at the minimizer `x(λ)`.
    fn eval(&self, lambda: f64) -> (f64, f64) {
        let m = self.pi * lambda + self.pj * (1.0 - lambda);
        let b = self.pi * self.ci * lambda + self.pj * self.cj * (1.0 - lambda);
        let x = match m.clone().cholesky() {
            Some(ch) => ch.solve(&b),
            None => m.lu().solve(&b).unwrap_or_else(|| self.ci.clone()),
        };
        let fi = quad(self.pi, &x, self.ci);
        let fj = quad(self.pj, &x, self.cj);
        (lambda * fi + (1.0 - lambda) * fj, fi.max(fj))
    }
}

pub fn minmax_bracket(
    pi: &DMatrix<f64>,
    ci: &DVector<f64>,
    pj: &DMatrix<f64>,
    cj: &DVector<f64>,
) -> MinMaxBracket {
    let pair = Pair { pi, ci, pj, cj };
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    let mut best = 0;
    for k in 0..=GRID {
        let (g, f) = pair.eval(k as f64 / GRID as f64);
        if g > lower {
            lower = g;
            best = k;
        }
        upper = upper.min(f);
    }
    // The dual function is concave in λ: refine around the best grid point.
    let mut a = best.saturating_sub(1) as f64 / GRID as f64;
    let mut b = (best + 1).min(GRID) as f64 / GRID as f64;
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..GOLDEN_ITERS {
        let x1 = b - phi * (b - a);
        let x2 = a + phi * (b - a);
        let (g1, f1) = pair.eval(x1);
        let (g2, f2) = pair.eval(x2);
        lower = lower.max(g1).max(g2);
        upper = upper.min(f1).min(f2);
        if g1 < g2 {
            a = x1;
        } else {
            b = x2;
        }
    }
    MinMaxBracket { lower, upper }
}

pub fn classify(bracket: MinMaxBracket, level: f64, band: f64) -> OracleVerdict {
    if ((bracket.mid() - level) / level).abs() <= band {
        OracleVerdict::Band
    } else if bracket.upper <= level {
        OracleVerdict::Intersect
    } else if bracket.lower > level {
        OracleVerdict::Disjoint
    } else {
        OracleVerdict::Unresolved
    }
}

/// Searches for a point inside both sets by sampling the first one uniformly.
pub fn sample_common_point<R: Rng + ?Sized>(
    p: &DMatrix<f64>,
    level: f64,
    ci: &DVector<f64>,
    cj: &DVector<f64>,
    samples: usize,
    rng: &mut R,
) -> Option<DVector<f64>> {
    let n = ci.len();
    let l = p.clone().cholesky()?.l();
    let lt = l.transpose();
    for _ in 0..samples {
        let g = DVector::<f64>::from_fn(n, |_, _| rng.sample(StandardNormal));
        let norm = g.norm();
        if norm == 0.0 {
            continue;
        }
        let radius = rng.random::<f64>().powf(1.0 / n as f64) * level.sqrt();
        let u = g * (radius / norm);
        // x = ci + L⁻ᵀ u gives (x - ci)ᵀ P (x - ci) = |u|².
        let x = ci + lt.solve_upper_triangular(&u)?;
        if quad(p, &x, ci) <= level && quad(p, &x, cj) <= level {
            return Some(x);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bracket_brackets_the_unit_disk_case() {
        let p = DMatrix::<f64>::identity(2, 2);
        let ci = DVector::from_vec(vec![0.0, 0.0]);
        for d in [0.5, 1.9, 2.0, 2.1, 5.0] {
            let cj = DVector::from_vec(vec![d, 0.0]);
            let b = minmax_bracket(&p, &ci, &p, &cj);
            // The min-max of two unit-weight distances is (d/2)².
            let exact = d * d / 4.0;
            assert!(b.lower <= exact + 1e-12 && b.upper >= exact - 1e-12);
            assert!(b.upper - b.lower < 1e-9 * (1.0 + exact));
        }
    }

    #[test]
    fn different_shapes_are_supported() {
        // Disk of radius 1 at 0 and a thin ellipse reaching x = 1.5 - 1 = 0.5.
        let pi = DMatrix::<f64>::identity(2, 2);
        let pj = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 25.0]));
        let ci = DVector::from_vec(vec![0.0, 0.0]);
        let cj = DVector::from_vec(vec![1.5, 0.0]);
        let b = minmax_bracket(&pi, &ci, &pj, &cj);
        assert_eq!(classify(b, 1.0, 1e-6), OracleVerdict::Intersect);
        let far = DVector::from_vec(vec![2.5, 0.0]);
        let b = minmax_bracket(&pi, &ci, &pj, &far);
        assert_eq!(classify(b, 1.0, 1e-6), OracleVerdict::Disjoint);
    }

    #[test]
    fn sampler_finds_overlap_and_respects_gaps() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = DMatrix::<f64>::identity(3, 3);
        let ci = DVector::zeros(3);
        let near = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let far = DVector::from_vec(vec![2.2, 0.0, 0.0]);
        assert!(sample_common_point(&p, 1.0, &ci, &near, 500, &mut rng).is_some());
        assert!(sample_common_point(&p, 1.0, &ci, &far, 500, &mut rng).is_none());
    }
}
