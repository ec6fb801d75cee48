//! Lyapunov certificates and the ellipsoid geometry built on them.
//!
//! Every safety quantity in the crate is measured in the P-norm
//! `‖x‖_P = sqrt(xᵀ P x)` of a symmetric positive definite `P` solving
//! `Aᵀ P + P A = -Q`. The sublevel set `{x : ‖x - x_sp‖²_P ≤ c}` is positively
//! invariant for the closed loop `ẋ = A (x - x_sp)`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum entrywise asymmetry accepted for a shape matrix.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues of an accepted SPD matrix must exceed this fraction of the largest one.
pub const EIGEN_FLOOR: f64 = 1e-12;
/// Eigenvalue real parts must lie below `-HURWITZ_MARGIN`.
pub const HURWITZ_MARGIN: f64 = 1e-9;
/// Largest admissible 1-norm condition estimate of the Kronecker system.
pub const MAX_CONDITION: f64 = 1e12;
/// Largest state dimension accepted by the vectorized Lyapunov solve.
pub const MAX_LYAPUNOV_DIM: usize = 16;

/// State coordinates holding the planar position `(p_x, p_y)`.
pub const POSITION_AXES: (usize, usize) = (0, 1);

/// Symmetric positive definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PositiveDefiniteMatrix {
    entries: DMatrix<f64>,
}

impl PositiveDefiniteMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "expected a non-empty square matrix, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let asym = (&entries - entries.transpose()).amax();
        if !asym.is_finite() || asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        // Remove the residual asymmetry so later quadratic forms are exact.
        let entries = (&entries + entries.transpose()) * 0.5;
        let eig = entries.clone().symmetric_eigen().eigenvalues;
        let max = eig.max();
        let min = eig.min();
        if !(min > 0.0) || min < EIGEN_FLOOR * max {
            return Err(Error::NotPositiveDefinite(min));
        }
        Ok(Self { entries })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: DMatrix::identity(n, n),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    /// `k · P` for `k > 0`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::InvalidParameter(format!("scale must be positive, got {k}")));
        }
        Ok(Self {
            entries: &self.entries * k,
        })
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        self.entries
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or(Error::SingularShape)
    }

    /// Quadratic form `vᵀ P v`.
    pub fn quad_form(&self, v: &DVector<f64>) -> Result<f64> {
        if v.len() != self.dim() {
            return Err(Error::dim(self.dim(), v.len()));
        }
        Ok(quad_form_unchecked(&self.entries, v))
    }

    /// `‖v‖_P`.
    pub fn norm(&self, v: &DVector<f64>) -> Result<f64> {
        self.quad_form(v).map(f64::sqrt)
    }
}

fn quad_form_unchecked(p: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for j in 0..n {
        let mut col = 0.0;
        for i in 0..n {
            col += p[(i, j)] * v[i];
        }
        acc += col * v[j];
    }
    acc.max(0.0)
}

/// `𝓔_c(center) = {x : ‖x - center‖²_P ≤ c}`.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantEllipsoid {
    pub center: DVector<f64>,
    pub shape: PositiveDefiniteMatrix,
    pub level: f64,
}

impl InvariantEllipsoid {
    pub fn new(center: DVector<f64>, shape: PositiveDefiniteMatrix, level: f64) -> Result<Self> {
        if center.len() != shape.dim() {
            return Err(Error::dim(shape.dim(), center.len()));
        }
        if !(level > 0.0) || !level.is_finite() {
            return Err(Error::InvalidParameter(format!("level must be positive, got {level}")));
        }
        Ok(Self { center, shape, level })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }
}

/// Solution of `Aᵀ P + P A = -Q` together with its residual.
#[derive(Debug, Clone)]
pub struct LyapunovCertificate {
    pub a: DMatrix<f64>,
    pub q: PositiveDefiniteMatrix,
    pub p: PositiveDefiniteMatrix,
    /// Frobenius norm of `Aᵀ P + P A + Q`.
    pub residual: f64,
}

impl LyapunovCertificate {
    /// Residual bound every accepted certificate satisfies.
    pub fn residual_bound(q: &PositiveDefiniteMatrix) -> f64 {
        1e-8 * (1.0 + q.matrix().norm())
    }

    pub fn is_valid(&self) -> bool {
        self.residual <= Self::residual_bound(&self.q)
    }
}

/// Largest real part over the eigenvalues of `a`.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    a.is_square() && a.nrows() > 0 && spectral_abscissa(a) < -HURWITZ_MARGIN
}

pub fn lyapunov_residual(a: &DMatrix<f64>, p: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    (a.transpose() * p + p * a + q).norm()
}

/// Solves the continuous Lyapunov equation through its Kronecker vectorization
/// `(I ⊗ Aᵀ + Aᵀ ⊗ I) vec(P) = -vec(Q)`.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &PositiveDefiniteMatrix) -> Result<LyapunovCertificate> {
    let n = q.dim();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::dim(n, a.nrows().max(a.ncols())));
    }
    if n > MAX_LYAPUNOV_DIM {
        return Err(Error::InvalidParameter(format!(
            "vectorized Lyapunov solve supports n <= {MAX_LYAPUNOV_DIM}, got {n}"
        )));
    }
    let abscissa = spectral_abscissa(a);
    if !(abscissa < -HURWITZ_MARGIN) {
        return Err(Error::NotHurwitz(abscissa));
    }

    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let k = eye.kronecker(&at) + at.kronecker(&eye);
    let lu = k.clone().lu();
    let k_inv = lu.try_inverse().ok_or(Error::IllConditioned(f64::INFINITY))?;
    let cond = one_norm(&k) * one_norm(&k_inv);
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(Error::IllConditioned(cond));
    }
    let rhs = -DVector::from_column_slice(q.matrix().as_slice());
    let vec_p = &k_inv * rhs;
    let raw = DMatrix::from_column_slice(n, n, vec_p.as_slice());
    let p = PositiveDefiniteMatrix::new((&raw + raw.transpose()) * 0.5)?;
    let residual = lyapunov_residual(a, p.matrix(), q.matrix());
    let cert = LyapunovCertificate {
        a: a.clone(),
        q: q.clone(),
        p,
        residual,
    };
    if !cert.is_valid() {
        return Err(Error::IllConditioned(cond));
    }
    Ok(cert)
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `(x - center)ᵀ P (x - center)`.
pub fn p_norm_sq(p: &PositiveDefiniteMatrix, x: &DVector<f64>, center: &DVector<f64>) -> Result<f64> {
    if x.len() != p.dim() {
        return Err(Error::dim(p.dim(), x.len()));
    }
    if center.len() != p.dim() {
        return Err(Error::dim(p.dim(), center.len()));
    }
    Ok(quad_form_unchecked(p.matrix(), &(x - center)))
}

/// Closed membership test.
pub fn contains(e: &InvariantEllipsoid, x: &DVector<f64>) -> Result<bool> {
    Ok(p_norm_sq(&e.shape, x, &e.center)? <= e.level)
}

/// Two level-`c` ellipsoids sharing `P` meet iff `‖center_j - center_i‖²_P ≤ 4c`.
/// Tangency counts as intersecting.
pub fn ellipsoids_intersect(
    p: &PositiveDefiniteMatrix,
    c: f64,
    center_i: &DVector<f64>,
    center_j: &DVector<f64>,
) -> Result<bool> {
    Ok(p_norm_sq(p, center_j, center_i)? <= 4.0 * c)
}

/// Center `m_λ` and level `K_λ` of the pencil set between two shared-shape ellipsoids.
pub fn intersection_ellipsoid(
    p: &PositiveDefiniteMatrix,
    center_i: &DVector<f64>,
    center_j: &DVector<f64>,
    lambda: f64,
) -> Result<(DVector<f64>, f64)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::LambdaOutOfRange(lambda));
    }
    let d_sq = p_norm_sq(p, center_j, center_i)?;
    if center_i == center_j {
        return Err(Error::CoincidentCenters);
    }
    let m = center_i * lambda + center_j * (1.0 - lambda);
    let k = 1.0 - lambda * (1.0 - lambda) * d_sq;
    Ok((m, k))
}

/// Planar ellipse `{y : (y - center)ᵀ shape (y - center) ≤ level}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse2 {
    pub center: Vector2<f64>,
    pub shape: Matrix2<f64>,
    pub level: f64,
}

impl Ellipse2 {
    pub fn value(&self, y: &Vector2<f64>) -> f64 {
        let d = y - self.center;
        (d.transpose() * self.shape * d)[(0, 0)]
    }

    pub fn contains(&self, y: &Vector2<f64>) -> bool {
        self.value(y) <= self.level
    }

    /// Semi-axis lengths, largest first.
    pub fn semi_axes(&self) -> (f64, f64) {
        let eig = self.shape.symmetric_eigen().eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        ((self.level / lo).sqrt(), (self.level / hi).sqrt())
    }
}

/// Exact shadow of `e` on the coordinates `axes`: with `Σ = P⁻¹` the planar shape
/// is `(Σ_SS)⁻¹` and the level is unchanged.
pub fn project_to_plane(e: &InvariantEllipsoid, axes: (usize, usize)) -> Result<Ellipse2> {
    let n = e.dim();
    let (i, j) = axes;
    if i == j || i >= n || j >= n {
        return Err(Error::BadIndices(i, j, n));
    }
    let sigma = e.shape.inverse()?;
    let sigma_ss = Matrix2::new(sigma[(i, i)], sigma[(i, j)], sigma[(j, i)], sigma[(j, j)]);
    let shape = sigma_ss.try_inverse().ok_or(Error::SingularShape)?;
    if !shape.iter().all(|v| v.is_finite()) || shape.determinant() <= 0.0 {
        return Err(Error::SingularShape);
    }
    Ok(Ellipse2 {
        center: Vector2::new(e.center[i], e.center[j]),
        shape: (shape + shape.transpose()) * 0.5,
        level: e.level,
    })
}

/// Largest semi-axis of the position shadow, `sqrt(level · λ_max(Σ_SS))`.
pub fn projected_semi_major(e: &InvariantEllipsoid) -> Result<f64> {
    Ok(project_to_plane(e, POSITION_AXES)?.semi_axes().0)
}

/// Sufficient test that the position shadow of `e` lies in the ball of radius
/// `ball_radius` about `agent_pos`: center offset plus semi-major axis.
pub fn shadow_in_ball(e: &InvariantEllipsoid, agent_pos: [f64; 2], ball_radius: f64) -> Result<bool> {
    let shadow = project_to_plane(e, POSITION_AXES)?;
    let offset = (Vector2::new(agent_pos[0], agent_pos[1]) - shadow.center).norm();
    Ok(offset + shadow.semi_axes().0 <= ball_radius)
}

/// Points on the boundary `‖x - center‖²_P = level`, directions uniform on the
/// unit sphere before the `P^{-1/2}` shaping.
pub fn sample_boundary(e: &InvariantEllipsoid, seed: u64, count: usize) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = e.dim();
    let chol = e
        .shape
        .matrix()
        .clone()
        .cholesky()
        .expect("shape matrix is positive definite");
    let lt = chol.l().transpose();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let norm = u.norm();
        if norm < 1e-12 {
            continue;
        }
        let Some(mut y) = lt.solve_upper_triangular(&(u / norm)) else {
            continue;
        };
        let q = quad_form_unchecked(e.shape.matrix(), &y);
        y *= (e.level / q).sqrt();
        out.push(&e.center + y);
    }
    out
}

/// Serializable dense matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowMajor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for RowMajor {
    fn from(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)]);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl RowMajor {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} matrix with {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}
