//! Dense complex linear algebra for the small Hilbert spaces of the protocol.
//!
//! All matrices are row-major. When a space is a tensor product of several
//! subsystems, the leftmost factor is the slowest-varying index: for
//! `A ⊗ B` the composite index is `i_a * dim_b + i_b`.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;
use thiserror::Error;

/// Maximum number of cyclic Jacobi sweeps before giving up.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Relative off-diagonal Frobenius norm at which Jacobi iteration stops.
pub const JACOBI_TOLERANCE: f64 = 1e-13;
/// Absolute tolerance used for Hermiticity, trace and positivity checks.
pub const HERMITIAN_TOLERANCE: f64 = 1e-10;
/// Eigenvalues above `-PSD_TOLERANCE` are treated as round-off and clipped.
pub const PSD_TOLERANCE: f64 = 1e-10;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("matrix is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },
    #[error("Jacobi iteration did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("trace {trace:e} too small to normalize")]
    NonNormalizable { trace: f64 },
}

/// Dense complex matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:+.6}{:+.6}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl ComplexMatrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self, NumError> {
        if data.len() != rows * cols {
            return Err(NumError::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(NumError::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_diagonal(diag: &[Complex64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let diag: Vec<Complex64> = diag.iter().map(|&d| Complex64::new(d, 0.0)).collect();
        Self::from_diagonal(&diag)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Projector `|v⟩⟨v|`.
    pub fn outer(v: &[Complex64], w: &[Complex64]) -> Self {
        Self::from_fn(v.len(), w.len(), |i, j| v[i] * w[j].conj())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn conj(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| z * factor).collect(),
        }
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entry modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Largest `|M_ij - conj(M_ji)|`.
    pub fn hermiticity_deviation(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut dev: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                dev = dev.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        dev
    }

    /// `(M + M†) / 2`.
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| {
            (self[(i, j)] + self[(j, i)].conj()) * 0.5
        })
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == ZERO {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `[A, B] = AB - BA`.
    pub fn commutator(&self, rhs: &Self) -> Self {
        &self.matmul(rhs) - &rhs.matmul(self)
    }

    fn check_finite(&self) -> Result<(), NumError> {
        if self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            Ok(())
        } else {
            Err(NumError::NonFinite)
        }
    }

    fn check_hermitian(&self) -> Result<(), NumError> {
        if !self.is_square() {
            return Err(NumError::DimensionMismatch(format!(
                "expected a square matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        self.check_finite()?;
        let deviation = self.hermiticity_deviation();
        if deviation > HERMITIAN_TOLERANCE * self.max_abs().max(1.0) {
            return Err(NumError::NotHermitian { deviation });
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs)
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Hermitian, positive semidefinite, unit-trace matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
}

impl DensityMatrix {
    /// Validates an already normalized density matrix.
    pub fn new(matrix: ComplexMatrix) -> Result<Self, NumError> {
        matrix.check_hermitian()?;
        let trace = matrix.trace().re;
        if (trace - 1.0).abs() > HERMITIAN_TOLERANCE {
            return Err(NumError::DimensionMismatch(format!(
                "density matrix trace {trace} differs from 1"
            )));
        }
        let eig = hermitian_eigensystem(&matrix)?;
        if eig.values[0] < -PSD_TOLERANCE {
            return Err(NumError::NotPsd {
                min_eigenvalue: eig.values[0],
            });
        }
        Ok(Self { matrix })
    }

    /// Hermitizes `matrix` and rescales it to unit trace.
    ///
    /// Used for matrices assembled from quadrature sums, whose normalization
    /// is fixed numerically.
    pub fn from_unnormalized(matrix: ComplexMatrix) -> Result<Self, NumError> {
        matrix.check_finite()?;
        if !matrix.is_square() {
            return Err(NumError::DimensionMismatch("non-square density matrix".into()));
        }
        let herm = matrix.hermitian_part();
        let trace = herm.trace().re;
        if !(trace > 1e-12) {
            return Err(NumError::NonNormalizable { trace });
        }
        Self::new(herm.scale(Complex64::new(1.0 / trace, 0.0)))
    }

    /// `|ψ⟩⟨ψ|` for a state vector, normalized.
    pub fn from_pure(state: &[Complex64]) -> Result<Self, NumError> {
        let norm = state.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(NumError::NonNormalizable { trace: norm });
        }
        let v: Vec<Complex64> = state.iter().map(|z| z / norm).collect();
        Ok(Self {
            matrix: ComplexMatrix::outer(&v, &v),
        })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            matrix: ComplexMatrix::identity(dim).scale(Complex64::new(1.0 / dim as f64, 0.0)),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    /// `Tr ρ²`.
    pub fn purity(&self) -> f64 {
        self.matrix.as_slice().iter().map(|z| z.norm_sqr()).sum()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Result<Vec<f64>, NumError> {
        Ok(hermitian_eigensystem(&self.matrix)?.values)
    }

    pub fn tensor(&self, other: &DensityMatrix) -> DensityMatrix {
        DensityMatrix {
            matrix: tensor_product(&self.matrix, &other.matrix),
        }
    }

    /// `U ρ U†`; `u` must be unitary.
    pub fn conjugate_by(&self, u: &ComplexMatrix) -> DensityMatrix {
        let m = u.matmul(&self.matrix).matmul(&u.adjoint());
        DensityMatrix {
            matrix: m.hermitian_part(),
        }
    }
}

/// Eigen-decomposition `M = V diag(values) V†` with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Eigenvectors stored as columns.
    pub vectors: ComplexMatrix,
}

impl HermitianEigen {
    /// `V f(Λ) V†` for a complex-valued spectral function.
    pub fn spectral_map(&self, mut f: impl FnMut(f64) -> Complex64) -> ComplexMatrix {
        let n = self.values.len();
        let fv: Vec<Complex64> = self.values.iter().map(|&l| f(l)).collect();
        let v = &self.vectors;
        ComplexMatrix::from_fn(n, n, |i, j| {
            (0..n).map(|k| v[(i, k)] * fv[k] * v[(j, k)].conj()).sum()
        })
    }
}

/// Unitary 2x2 block acting on coordinates `(p, q)`.
#[derive(Debug, Clone, Copy)]
struct PlaneRotation {
    pp: Complex64,
    pq: Complex64,
    qp: Complex64,
    qq: Complex64,
}

impl PlaneRotation {
    /// Rotation `V` with `(V† A V)_pq = 0` for the Hermitian block
    /// `[[app, apq], [conj(apq), aqq]]`. Returns `None` when `apq == 0`.
    fn annihilating(app: f64, aqq: f64, apq: Complex64) -> Option<Self> {
        let g = apq.norm();
        if g == 0.0 {
            return None;
        }
        let phase = apq / g;
        let theta = (aqq - app) / (2.0 * g);
        let t = if theta.abs() > 1e150 {
            0.5 / theta
        } else {
            theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
        };
        let t = if theta == 0.0 { 1.0 } else { t };
        let c = 1.0 / (t * t + 1.0).sqrt();
        let s = t * c;
        let back = phase.conj();
        Some(Self {
            pp: Complex64::new(c, 0.0),
            pq: Complex64::new(s, 0.0),
            qp: back * (-s),
            qq: back * c,
        })
    }

    /// `M <- M V` restricted to columns `p`, `q`.
    fn apply_right(&self, m: &mut ComplexMatrix, p: usize, q: usize) {
        for r in 0..m.rows {
            let x = m[(r, p)];
            let y = m[(r, q)];
            m[(r, p)] = x * self.pp + y * self.qp;
            m[(r, q)] = x * self.pq + y * self.qq;
        }
    }

    /// `M <- V† M` restricted to rows `p`, `q`.
    fn apply_left_adjoint(&self, m: &mut ComplexMatrix, p: usize, q: usize) {
        for c in 0..m.cols {
            let x = m[(p, c)];
            let y = m[(q, c)];
            m[(p, c)] = self.pp.conj() * x + self.qp.conj() * y;
            m[(q, c)] = self.pq.conj() * x + self.qq.conj() * y;
        }
    }
}

fn off_diagonal_norm(a: &ComplexMatrix) -> f64 {
    let n = a.rows;
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[(i, j)].norm_sqr();
            }
        }
    }
    acc.sqrt()
}

/// Cyclic Jacobi eigensolver for Hermitian matrices.
pub fn hermitian_eigensystem(m: &ComplexMatrix) -> Result<HermitianEigen, NumError> {
    m.check_hermitian()?;
    let n = m.rows;
    let mut a = m.hermitian_part();
    for i in 0..n {
        a[(i, i)].im = 0.0;
    }
    let mut v = ComplexMatrix::identity(n);
    let scale = a.frobenius_norm();

    if scale > 0.0 {
        let mut converged = false;
        for _ in 0..JACOBI_MAX_SWEEPS {
            if off_diagonal_norm(&a) <= JACOBI_TOLERANCE * scale {
                converged = true;
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    // Rotations on negligible pivots only churn round-off.
                    if apq.norm() <= 1e-18 * scale {
                        a[(p, q)] = ZERO;
                        a[(q, p)] = ZERO;
                        continue;
                    }
                    let Some(rot) = PlaneRotation::annihilating(a[(p, p)].re, a[(q, q)].re, apq)
                    else {
                        continue;
                    };
                    rot.apply_right(&mut a, p, q);
                    rot.apply_left_adjoint(&mut a, p, q);
                    a[(p, q)] = ZERO;
                    a[(q, p)] = ZERO;
                    a[(p, p)].im = 0.0;
                    a[(q, q)].im = 0.0;
                    rot.apply_right(&mut v, p, q);
                }
            }
        }
        if !converged && off_diagonal_norm(&a) > JACOBI_TOLERANCE * scale {
            return Err(NumError::NoConvergence {
                sweeps: JACOBI_MAX_SWEEPS,
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = ComplexMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(HermitianEigen { values, vectors })
}

/// `exp(-i H t)` via the eigen-decomposition of `H`.
pub fn evolve_unitary(h: &ComplexMatrix, t: f64) -> Result<ComplexMatrix, NumError> {
    Ok(Propagator::new(h)?.at(t))
}

/// Caches the spectrum of a Hamiltonian so that `exp(-iHt)` can be
/// evaluated cheaply at many times.
#[derive(Debug, Clone)]
pub struct Propagator {
    eigen: HermitianEigen,
}

impl Propagator {
    pub fn new(h: &ComplexMatrix) -> Result<Self, NumError> {
        Ok(Self {
            eigen: hermitian_eigensystem(h)?,
        })
    }

    pub fn eigen(&self) -> &HermitianEigen {
        &self.eigen
    }

    pub fn at(&self, t: f64) -> ComplexMatrix {
        self.eigen
            .spectral_map(|l| Complex64::from_polar(1.0, -l * t))
    }

    /// `exp(-iHt) ψ` without forming the full propagator.
    pub fn apply(&self, t: f64, psi: &[Complex64]) -> Vec<Complex64> {
        let v = &self.eigen.vectors;
        let n = self.eigen.values.len();
        assert_eq!(psi.len(), n);
        let coeffs: Vec<Complex64> = (0..n)
            .map(|k| {
                let overlap: Complex64 = (0..n).map(|i| v[(i, k)].conj() * psi[i]).sum();
                overlap * Complex64::from_polar(1.0, -self.eigen.values[k] * t)
            })
            .collect();
        (0..n)
            .map(|i| (0..n).map(|k| v[(i, k)] * coeffs[k]).sum())
            .collect()
    }
}

/// Hermitian square root of a density matrix.
///
/// Eigenvalues in `[-PSD_TOLERANCE, 0)` are clipped to zero, as are positive
/// eigenvalues indistinguishable from round-off relative to the largest one.
pub fn psd_sqrt(rho: &DensityMatrix) -> Result<ComplexMatrix, NumError> {
    let eig = hermitian_eigensystem(rho.matrix())?;
    let min = eig.values[0];
    if min < -PSD_TOLERANCE {
        return Err(NumError::NotPsd { min_eigenvalue: min });
    }
    let largest = eig.values.last().copied().unwrap_or(0.0).max(0.0);
    let floor = 64.0 * f64::EPSILON * largest;
    Ok(eig.spectral_map(|l| {
        if l <= floor {
            ZERO
        } else {
            Complex64::new(l.sqrt(), 0.0)
        }
    }))
}

/// Kronecker product `A ⊗ B`.
pub fn tensor_product(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (ra, ca, rb, cb) = (a.rows, a.cols, b.rows, b.cols);
    let mut out = ComplexMatrix::zeros(ra * rb, ca * cb);
    for i in 0..ra {
        for j in 0..ca {
            let aij = a[(i, j)];
            for k in 0..rb {
                for l in 0..cb {
                    out[(i * rb + k, j * cb + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Kronecker product of state vectors.
pub fn tensor_vec(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    a.iter()
        .flat_map(|&x| b.iter().map(move |&y| x * y))
        .collect()
}

/// Partial trace of a square matrix over all subsystems not listed in `keep`.
///
/// `dims` lists the subsystem dimensions, leftmost slowest. Kept subsystems
/// retain their relative order.
pub fn partial_trace_matrix(
    m: &ComplexMatrix,
    dims: &[usize],
    keep: &[usize],
) -> Result<ComplexMatrix, NumError> {
    let total: usize = dims.iter().product();
    if !m.is_square() || m.rows != total {
        return Err(NumError::DimensionMismatch(format!(
            "subsystem dimensions {dims:?} do not match a {}x{} matrix",
            m.rows, m.cols
        )));
    }
    if keep.is_empty() {
        return Err(NumError::DimensionMismatch("no subsystem kept".into()));
    }
    for w in keep.windows(2) {
        if w[0] >= w[1] {
            return Err(NumError::DimensionMismatch(format!(
                "kept subsystems {keep:?} must be strictly increasing"
            )));
        }
    }
    if keep.iter().any(|&k| k >= dims.len()) {
        return Err(NumError::DimensionMismatch(format!(
            "kept subsystem index out of range in {keep:?}"
        )));
    }

    let kept_dims: Vec<usize> = keep.iter().map(|&k| dims[k]).collect();
    let traced: Vec<usize> = (0..dims.len()).filter(|i| !keep.contains(i)).collect();
    let traced_dims: Vec<usize> = traced.iter().map(|&k| dims[k]).collect();
    let out_dim: usize = kept_dims.iter().product();
    let traced_dim: usize = traced_dims.iter().product();

    // Strides of each subsystem in the full index.
    let mut strides = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    let offset = |local: usize, which: &[usize], which_dims: &[usize]| -> usize {
        let mut rem = local;
        let mut idx = 0;
        for (pos, &sub) in which.iter().enumerate().rev() {
            let d = which_dims[pos];
            idx += (rem % d) * strides[sub];
            rem /= d;
        }
        idx
    };
    let kept_offsets: Vec<usize> = (0..out_dim).map(|i| offset(i, keep, &kept_dims)).collect();
    let traced_offsets: Vec<usize> = (0..traced_dim)
        .map(|i| offset(i, &traced, &traced_dims))
        .collect();

    let mut out = ComplexMatrix::zeros(out_dim, out_dim);
    for (i, &oi) in kept_offsets.iter().enumerate() {
        for (j, &oj) in kept_offsets.iter().enumerate() {
            out[(i, j)] = traced_offsets.iter().map(|&t| m[(oi + t, oj + t)]).sum();
        }
    }
    Ok(out)
}

/// Reduced density matrix on the subsystems in `keep`.
pub fn partial_trace(
    rho: &DensityMatrix,
    dims: &[usize],
    keep: &[usize],
) -> Result<DensityMatrix, NumError> {
    let m = partial_trace_matrix(rho.matrix(), dims, keep)?;
    Ok(DensityMatrix {
        matrix: m.hermitian_part(),
    })
}

/// Singular values in descending order, by one-sided (Hestenes) Jacobi.
///
/// Small singular values are resolved to absolute accuracy `~ε‖M‖`, unlike
/// square roots of eigenvalues of `M M†`.
pub fn singular_values(m: &ComplexMatrix) -> Result<Vec<f64>, NumError> {
    m.check_finite()?;
    // Work on columns of M† when M is wide so that columns >= rows.
    let mut a = if m.rows >= m.cols { m.clone() } else { m.adjoint() };
    let n = a.cols;
    let scale = a.frobenius_norm();
    if scale == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let col_dot = |a: &ComplexMatrix, p: usize, q: usize| -> Complex64 {
        (0..a.rows).map(|r| a[(r, p)].conj() * a[(r, q)]).sum()
    };
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = col_dot(&a, p, p).re;
                let beta = col_dot(&a, q, q).re;
                let gamma = col_dot(&a, p, q);
                if gamma.norm() <= JACOBI_TOLERANCE * (alpha * beta).sqrt()
                    || gamma.norm() <= 1e-300
                {
                    continue;
                }
                if let Some(rot) = PlaneRotation::annihilating(alpha, beta, gamma) {
                    rot.apply_right(&mut a, p, q);
                    rotated = true;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(NumError::NoConvergence {
            sweeps: JACOBI_MAX_SWEEPS,
        });
    }
    let mut sv: Vec<f64> = (0..n).map(|j| col_dot(&a, j, j).re.max(0.0).sqrt()).collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    Ok(sv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    pub(crate) fn random_hermitian(n: usize, rng: &mut impl Rng) -> ComplexMatrix {
        let m = ComplexMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        m.hermitian_part()
    }

    fn random_density(n: usize, rng: &mut impl Rng) -> DensityMatrix {
        let g = ComplexMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        DensityMatrix::from_unnormalized(g.matmul(&g.adjoint())).unwrap()
    }

    #[test]
    fn identity_eigenvalues() {
        let eig = hermitian_eigensystem(&ComplexMatrix::identity(4)).unwrap();
        assert_eq!(eig.values, vec![1.0; 4]);
        let vv = eig.vectors.adjoint().matmul(&eig.vectors);
        assert!(vv.max_abs_diff(&ComplexMatrix::identity(4)) < 1e-14);
    }

    #[test]
    fn diagonal_input_is_sorted() {
        let eig = hermitian_eigensystem(&ComplexMatrix::from_real_diagonal(&[3.0, -1.0])).unwrap();
        assert_eq!(eig.values, vec![-1.0, 3.0]);
    }

    #[test]
    fn pauli_x_hand_diagonalization() {
        let x = ComplexMatrix::from_vec(2, 2, vec![c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)]).unwrap();
        let eig = hermitian_eigensystem(&x).unwrap();
        assert!((eig.values[0] + 1.0).abs() < 1e-15);
        assert!((eig.values[1] - 1.0).abs() < 1e-15);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        // Eigenvectors are fixed only up to a phase.
        let v0 = eig.vectors.column(0);
        let overlap: Complex64 = v0[0] * r - v0[1] * r;
        assert!((overlap.norm() - 1.0).abs() < 1e-14);
        let v1 = eig.vectors.column(1);
        let overlap: Complex64 = v1[0] * r + v1[1] * r;
        assert!((overlap.norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = ComplexMatrix::from_vec(2, 2, vec![c(0., 0.), c(1., 0.), c(2., 0.), c(0., 0.)]).unwrap();
        assert!(matches!(
            hermitian_eigensystem(&m),
            Err(NumError::NotHermitian { .. })
        ));
    }

    #[test]
    fn random_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &n in &[1, 2, 5, 11, 22, 44, 64] {
            let m = random_hermitian(n, &mut rng);
            let eig = hermitian_eigensystem(&m).unwrap();
            let rec = eig.spectral_map(|l| c(l, 0.0));
            assert!(rec.max_abs_diff(&m) <= 1e-9 * m.max_abs(), "n={n}");
            let vv = eig.vectors.adjoint().matmul(&eig.vectors);
            assert!(vv.max_abs_diff(&ComplexMatrix::identity(n)) <= 1e-10);
            assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn zero_hamiltonian_gives_identity() {
        let u = evolve_unitary(&ComplexMatrix::zeros(3, 3), 1.7).unwrap();
        assert_eq!(u, ComplexMatrix::identity(3));
    }

    #[test]
    fn diagonal_evolution_at_pi() {
        let u = evolve_unitary(&ComplexMatrix::from_real_diagonal(&[1.0, -1.0]), std::f64::consts::PI).unwrap();
        let minus_i = ComplexMatrix::identity(2).scale(c(-1.0, 0.0));
        assert!(u.max_abs_diff(&minus_i) < 1e-15);
    }

    /// Truncated Taylor series of exp(-iHt), summed in small substeps.
    fn series_exponential(h: &ComplexMatrix, t: f64, substeps: usize) -> ComplexMatrix {
        let n = h.rows();
        let dt = t / substeps as f64;
        let a = h.scale(c(0.0, -dt));
        let mut step = ComplexMatrix::identity(n);
        let mut term = ComplexMatrix::identity(n);
        for k in 1..=8 {
            term = term.matmul(&a).scale(c(1.0 / k as f64, 0.0));
            step = &step + &term;
        }
        let mut u = ComplexMatrix::identity(n);
        for _ in 0..substeps {
            u = step.matmul(&u);
        }
        u
    }

    #[test]
    fn evolution_matches_series_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = random_hermitian(6, &mut rng);
        let u = evolve_unitary(&h, 0.37).unwrap();
        let oracle = series_exponential(&h, 0.37, 4);
        assert!(u.max_abs_diff(&oracle) < 1e-9);
        let uu = u.adjoint().matmul(&u);
        assert!(uu.max_abs_diff(&ComplexMatrix::identity(6)) < 1e-10);
    }

    #[test]
    fn evolution_group_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = random_hermitian(8, &mut rng);
        let p = Propagator::new(&h).unwrap();
        let lhs = p.at(0.4).matmul(&p.at(1.3));
        assert!(lhs.max_abs_diff(&p.at(1.7)) < 1e-9);
        let psi: Vec<Complex64> = (0..8).map(|i| c(i as f64, 1.0)).collect();
        let direct = p.at(2.1).mul_vec(&psi);
        let applied = p.apply(2.1, &psi);
        for (a, b) in direct.iter().zip(&applied) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn sqrt_of_mixed_and_pure_states() {
        let mixed = DensityMatrix::maximally_mixed(2);
        let r = psd_sqrt(&mixed).unwrap();
        let expected = ComplexMatrix::from_real_diagonal(&[0.5f64.sqrt(), 0.5f64.sqrt()]);
        assert!(r.max_abs_diff(&expected) < 1e-15);

        let psi = [c(0.6, 0.0), c(0.0, 0.8)];
        let pure = DensityMatrix::from_pure(&psi).unwrap();
        let r = psd_sqrt(&pure).unwrap();
        assert!(r.max_abs_diff(pure.matrix()) < 1e-14);

        let d = DensityMatrix::new(ComplexMatrix::from_real_diagonal(&[0.64, 0.36])).unwrap();
        let r = psd_sqrt(&d).unwrap();
        assert!(r.max_abs_diff(&ComplexMatrix::from_real_diagonal(&[0.8, 0.6])) < 1e-15);
    }

    #[test]
    fn sqrt_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [2, 4, 11] {
            let rho = random_density(n, &mut rng);
            let r = psd_sqrt(&rho).unwrap();
            assert!(r.matmul(&r).max_abs_diff(rho.matrix()) < 1e-9);
            assert!(r.hermiticity_deviation() < 1e-12);
        }
    }

    #[test]
    fn density_rejects_negative_spectrum() {
        let m = ComplexMatrix::from_real_diagonal(&[1.2, -0.2]);
        assert!(matches!(DensityMatrix::new(m), Err(NumError::NotPsd { .. })));
    }

    #[test]
    fn partial_trace_of_product_and_bell() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_density(2, &mut rng);
        let b = random_density(3, &mut rng);
        let ab = a.tensor(&b);
        let ra = partial_trace(&ab, &[2, 3], &[0]).unwrap();
        assert!(ra.matrix().max_abs_diff(a.matrix()) < 1e-12);
        let rb = partial_trace(&ab, &[2, 3], &[1]).unwrap();
        assert!(rb.matrix().max_abs_diff(b.matrix()) < 1e-12);
        let all = partial_trace(&ab, &[2, 3], &[0, 1]).unwrap();
        assert_eq!(all.matrix(), ab.matrix());

        let r = std::f64::consts::FRAC_1_SQRT_2;
        let bell = DensityMatrix::from_pure(&[c(r, 0.), c(0., 0.), c(0., 0.), c(r, 0.)]).unwrap();
        let first = partial_trace(&bell, &[2, 2], &[0]).unwrap();
        assert!(first
            .matrix()
            .max_abs_diff(&ComplexMatrix::from_real_diagonal(&[0.5, 0.5]))
            < 1e-15);
    }

    #[test]
    fn partial_trace_middle_subsystem() {
        // Brute-force index summation for a three-party state.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rho = random_density(12, &mut rng);
        let dims = [2, 3, 2];
        let out = partial_trace(&rho, &dims, &[0, 2]).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                for a2 in 0..2 {
                    for b2 in 0..2 {
                        let mut acc = ZERO;
                        for s in 0..3 {
                            acc += rho.matrix()[(a * 6 + s * 2 + b, a2 * 6 + s * 2 + b2)];
                        }
                        assert!((out.matrix()[(a * 2 + b, a2 * 2 + b2)] - acc).norm() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn partial_trace_errors() {
        let rho = DensityMatrix::maximally_mixed(4);
        assert!(partial_trace(&rho, &[2, 3], &[0]).is_err());
        assert!(partial_trace(&rho, &[2, 2], &[]).is_err());
        assert!(partial_trace(&rho, &[2, 2], &[1, 0]).is_err());
    }

    #[test]
    fn kronecker_examples() {
        let i6 = tensor_product(&ComplexMatrix::identity(2), &ComplexMatrix::identity(3));
        assert_eq!(i6, ComplexMatrix::identity(6));
        let d = tensor_product(
            &ComplexMatrix::from_real_diagonal(&[1.0, 2.0]),
            &ComplexMatrix::from_real_diagonal(&[3.0, 4.0]),
        );
        assert_eq!(d, ComplexMatrix::from_real_diagonal(&[3.0, 4.0, 6.0, 8.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_hermitian(3, &mut rng);
        let one = ComplexMatrix::identity(1);
        assert_eq!(tensor_product(&a, &one), a);
    }

    #[test]
    fn singular_values_match_eigenvalues_of_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = ComplexMatrix::from_fn(4, 4, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let sv = singular_values(&m).unwrap();
        let gram = hermitian_eigensystem(&m.matmul(&m.adjoint())).unwrap();
        let mut from_gram: Vec<f64> = gram.values.iter().map(|l| l.max(0.0).sqrt()).collect();
        from_gram.reverse();
        for (a, b) in sv.iter().zip(&from_gram) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_values_resolve_rank_deficiency() {
        let v = [c(0.5, 0.1), c(-0.2, 0.3), c(0.7, 0.0), c(0.1, -0.4)];
        let m = ComplexMatrix::outer(&v, &v);
        let sv = singular_values(&m).unwrap();
        assert!(sv[1] < 1e-15 && sv[2] < 1e-15 && sv[3] < 1e-15);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn hermitian(n: usize) -> impl Strategy<Value = ComplexMatrix> {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n * n).prop_map(move |v| {
            let data = v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect();
            ComplexMatrix::from_vec(n, n, data).unwrap().hermitian_part()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn reconstruction_holds(m in (1usize..16).prop_flat_map(hermitian)) {
            let eig = hermitian_eigensystem(&m).unwrap();
            let rec = eig.spectral_map(|l| Complex64::new(l, 0.0));
            prop_assert!(rec.max_abs_diff(&m) <= 1e-9 * m.max_abs().max(1e-300));
        }

        #[test]
        fn partial_trace_preserves_trace(m in hermitian(6)) {
            let g = m.matmul(&m.adjoint());
            let rho = DensityMatrix::from_unnormalized(&g + &ComplexMatrix::identity(6)).unwrap();
            for keep in [&[0usize][..], &[1]] {
                let r = partial_trace(&rho, &[2, 3], keep).unwrap();
                prop_assert!((r.matrix().trace().re - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn partial_trace_of_kron_scales_by_traced_trace(a in hermitian(2), b in hermitian(3)) {
            let ab = tensor_product(&a, &b);
            let ra = partial_trace_matrix(&ab, &[2, 3], &[0]).unwrap();
            prop_assert!(ra.max_abs_diff(&a.scale(b.trace())) < 1e-12);
            let rb = partial_trace_matrix(&ab, &[2, 3], &[1]).unwrap();
            prop_assert!(rb.max_abs_diff(&b.scale(a.trace())) < 1e-12);
        }
    }
}
