//! Small dense symmetric and orthogonal kernels.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative eigenvalue floor separating "numerically zero" from negative.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// A dense symmetric matrix. Construction symmetrizes the input, so
/// `m[(i, j)] == m[(j, i)]` holds bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                context: "SymMatrix::new",
                expected: m.nrows(),
                actual: m.ncols(),
            });
        }
        Ok(Self::symmetrize(m))
    }

    fn symmetrize(m: Matrix) -> Self {
        let n = m.nrows();
        let mut out = m;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (out[(i, j)] + out[(j, i)]);
                out[(i, j)] = avg;
                out[(j, i)] = avg;
            }
        }
        SymMatrix(out)
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(Matrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(Matrix::zeros(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(Matrix::from_diagonal(&Vector::from_row_slice(diag)))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn scaled(&self, c: f64) -> Self {
        SymMatrix(&self.0 * c)
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix::symmetrize(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix::symmetrize(&self.0 - &other.0)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// `xᵀ M x`.
    pub fn quad_form(&self, x: &Vector) -> f64 {
        x.dot(&(&self.0 * x))
    }

    pub fn eigenvalues(&self) -> Vector {
        SymmetricEigen::new(self.0.clone()).eigenvalues
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().min()
    }

    /// Largest absolute eigenvalue; equals the spectral norm for symmetric input.
    pub fn spectral_norm(&self) -> f64 {
        self.eigenvalues().amax()
    }

    /// `λ_max / λ_min`; infinite when the matrix is singular.
    pub fn condition_number(&self) -> f64 {
        let ev = self.eigenvalues();
        let (lo, hi) = (ev.min(), ev.max());
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        matrix_rows(&self.0)
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        SymMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

pub fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch {
            context: "matrix rows",
            expected: ncols,
            actual: bad.len(),
        });
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Row-major nested-list serde adapter for general matrices.
pub mod serde_rows {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> std::result::Result<S::Ok, S::Error> {
        matrix_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Matrix, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        matrix_from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Eigendecomposition of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct SpdFactorization {
    eigenvalues: Vector,
    eigenvectors: Matrix,
}

impl SpdFactorization {
    pub fn new(m: &SymMatrix) -> Result<Self> {
        let eig = SymmetricEigen::new(m.matrix().clone());
        let norm = eig.eigenvalues.amax();
        let min = eig.eigenvalues.min();
        if !min.is_finite() || min <= EIGEN_FLOOR * norm || norm == 0.0 {
            return Err(Error::NotSpd { min_eigenvalue: min });
        }
        Ok(Self {
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
        })
    }

    pub fn eigenvalues(&self) -> &Vector {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &Matrix {
        &self.eigenvectors
    }

    /// `V · diag(h(λ)) · Vᵀ`.
    pub fn map_spectrum(&self, h: impl Fn(f64) -> f64) -> SymMatrix {
        spectral_map(&self.eigenvalues, &self.eigenvectors, h)
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.map_spectrum(|l| l)
    }

    pub fn inverse(&self) -> SymMatrix {
        self.map_spectrum(|l| 1.0 / l)
    }

    pub fn sqrt(&self) -> SymMatrix {
        self.map_spectrum(f64::sqrt)
    }

    pub fn inv_sqrt(&self) -> SymMatrix {
        self.map_spectrum(|l| 1.0 / l.sqrt())
    }
}

fn spectral_map(values: &Vector, vectors: &Matrix, h: impl Fn(f64) -> f64) -> SymMatrix {
    let mapped = Vector::from_iterator(values.len(), values.iter().map(|&l| h(l)));
    let scaled = vectors * Matrix::from_diagonal(&mapped);
    SymMatrix::symmetrize(scaled * vectors.transpose())
}

/// Principal symmetric square root of a PSD matrix. Eigenvalues down to
/// `-1e-12·‖M‖` are clamped to zero.
pub fn spd_sqrt(m: &SymMatrix) -> Result<SymMatrix> {
    let eig = SymmetricEigen::new(m.matrix().clone());
    let norm = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    if !min.is_finite() {
        return Err(Error::NonFinite("spd_sqrt"));
    }
    if min < -EIGEN_FLOOR * norm {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    Ok(spectral_map(&eig.eigenvalues, &eig.eigenvectors, |l| l.max(0.0).sqrt()))
}

/// `M^{-1/2}` for symmetric positive definite `M`.
pub fn spd_inv_sqrt(m: &SymMatrix) -> Result<SymMatrix> {
    Ok(SpdFactorization::new(m)?.inv_sqrt())
}

/// Plane rotation by `angle` in the `(axis_i, axis_j)` coordinate plane:
/// `e_i ↦ cos·e_i + sin·e_j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GivensRotation {
    pub axis_i: usize,
    pub axis_j: usize,
    pub angle: f64,
}

impl GivensRotation {
    pub fn new(axis_i: usize, axis_j: usize, angle: f64) -> Self {
        Self { axis_i, axis_j, angle }
    }

    fn check(&self, dim: usize) -> Result<()> {
        for index in [self.axis_i, self.axis_j] {
            if index >= dim {
                return Err(Error::IndexOutOfRange { index, dim });
            }
        }
        if self.axis_i == self.axis_j {
            return Err(Error::InvalidParameter(format!(
                "rotation plane needs distinct axes, got ({0}, {0})",
                self.axis_i
            )));
        }
        Ok(())
    }

    pub fn matrix(&self, dim: usize) -> Result<Matrix> {
        self.check(dim)?;
        let mut m = Matrix::identity(dim, dim);
        let (s, c) = self.angle.sin_cos();
        let (i, j) = (self.axis_i, self.axis_j);
        m[(i, i)] = c;
        m[(j, j)] = c;
        m[(i, j)] = -s;
        m[(j, i)] = s;
        Ok(m)
    }

    /// `v ← G v` in place. Indices must already be valid.
    pub(crate) fn rotate_vector(&self, v: &mut Vector) {
        let (s, c) = self.angle.sin_cos();
        let (i, j) = (self.axis_i, self.axis_j);
        let (vi, vj) = (v[i], v[j]);
        v[i] = c * vi - s * vj;
        v[j] = s * vi + c * vj;
    }

    /// `m ← m G` in place. Indices must already be valid.
    pub(crate) fn right_multiply(&self, m: &mut Matrix) {
        let (s, c) = self.angle.sin_cos();
        let (i, j) = (self.axis_i, self.axis_j);
        for r in 0..m.nrows() {
            let (a, b) = (m[(r, i)], m[(r, j)]);
            m[(r, i)] = c * a + s * b;
            m[(r, j)] = -s * a + c * b;
        }
    }
}

/// `G₁ G₂ ⋯ G_k` for the rotations in listed order (the last one acts first
/// on a vector).
pub fn apply_givens_product(rotations: &[GivensRotation], dim: usize) -> Result<Matrix> {
    let mut m = Matrix::identity(dim, dim);
    for r in rotations {
        r.check(dim)?;
        r.right_multiply(&mut m);
    }
    Ok(m)
}

/// `(G₁ G₂ ⋯ G_k) v` without forming the matrix.
pub fn apply_givens_product_to(rotations: &[GivensRotation], v: &Vector) -> Result<Vector> {
    let mut out = v.clone();
    for r in rotations.iter().rev() {
        r.check(v.len())?;
        r.rotate_vector(&mut out);
    }
    Ok(out)
}

/// Largest eigenvalue modulus over the complex spectrum.
pub fn spectral_radius(a: &Matrix) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            context: "spectral_radius",
            expected: a.nrows(),
            actual: a.ncols(),
        });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("spectral_radius"));
    }
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    // Nalgebra's QR iteration stalls on tightly clustered spectra (these
    // radii are typically computed for matrices close to c·I), so the
    // spectrum is centred first; a fixed orthogonal similarity is the
    // fallback for structured inputs.
    let n = a.nrows();
    let shift = a.trace() / n as f64;
    let centred = a - Matrix::identity(n, n) * shift;
    let max_iter = 200 * n.max(4);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    for attempt in 0..4 {
        let m = if attempt == 0 {
            centred.clone()
        } else {
            let q = Matrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5).qr().q();
            q.transpose() * &centred * &q
        };
        if let Some(schur) = Schur::try_new(m, f64::EPSILON, max_iter) {
            let ev = schur.complex_eigenvalues();
            return Ok(ev.iter().map(|z| (z + shift).norm()).fold(0.0, f64::max));
        }
    }
    Err(Error::NoConvergence("spectral_radius"))
}

/// Random SPD matrix with spectrum in `[1, condition_number]` (both ends
/// attained, interior eigenvalues log-uniform), conjugated by a product of
/// `dim·(dim−1)/2` Givens rotations with uniform angles.
pub fn random_spd<R: Rng + ?Sized>(dim: usize, condition_number: f64, rng: &mut R) -> SymMatrix {
    assert!(dim >= 1, "random_spd needs dim >= 1");
    assert!(condition_number >= 1.0, "condition number must be >= 1");
    let log_max = condition_number.ln();
    let eigenvalues: Vec<f64> = (0..dim)
        .map(|k| match k {
            0 => 1.0,
            k if k == dim - 1 => condition_number,
            _ => (rng.random::<f64>() * log_max).exp(),
        })
        .collect();
    let mut rotations = Vec::with_capacity(dim * (dim - 1) / 2);
    for i in 0..dim {
        for j in (i + 1)..dim {
            let angle = rng.random::<f64>() * std::f64::consts::TAU;
            rotations.push(GivensRotation::new(i, j, angle));
        }
    }
    let q = apply_givens_product(&rotations, dim).expect("indices in range by construction");
    let d = Matrix::from_diagonal(&Vector::from_vec(eigenvalues));
    SymMatrix::symmetrize(&q * d * q.transpose())
}

pub fn frobenius_rel(a: &Matrix, b: &Matrix) -> f64 {
    let scale = b.norm().max(f64::MIN_POSITIVE);
    (a - b).norm() / scale
}
