//! Dense complex operators on a finite-dimensional Hilbert space.
//!
//! [`Operator`] is the single carrier for Hamiltonians, coupling operators,
//! observables and (unnormalized) density matrices. Matrix functions are
//! evaluated through the Hermitian eigendecomposition, which is the only
//! eigenproblem the library needs.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Relative Hermiticity tolerance, `|X - X^dag| <= tol * |X|`.
pub const HERMITICITY_TOL: f64 = 1e-12;
/// Smallest eigenvalue accepted as positive semidefinite (relative to the norm).
pub const POSITIVITY_TOL: f64 = -1e-10;

pub(crate) const I: C64 = Complex { re: 0.0, im: 1.0 };

#[inline]
pub(crate) fn c(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

/// Square complex matrix acting on `C^dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator(DMatrix<C64>);

impl Operator {
    /// Wraps a matrix, rejecting non-square or non-finite input.
    pub fn from_matrix(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch { left: m.nrows(), right: m.ncols() });
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidDimension { dim: 0, reason: "operators need dim >= 1" });
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Domain("operator has non-finite entries".into()));
        }
        Ok(Self(m))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize, usize) -> C64) -> Self {
        Self(DMatrix::from_fn(dim, dim, f))
    }

    /// Row-major construction, mostly for tests and configuration input.
    pub fn from_rows(dim: usize, entries: &[C64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch { left: entries.len(), right: dim * dim });
        }
        Self::from_matrix(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self::from_fn(n, |i, j| if i == j { c(diag[i], 0.0) } else { C64::default() })
    }

    /// Projector `|i><i|`.
    pub fn unit(dim: usize, i: usize, j: usize) -> Self {
        let mut m = DMatrix::zeros(dim, dim);
        m[(i, j)] = c(1.0, 0.0);
        Self(m)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn matrix_mut(&mut self) -> &mut DMatrix<C64> {
        &mut self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.0[(i, j)]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn dagger(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn conj(&self) -> Self {
        Self(self.0.map(|z| z.conj()))
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self(&self.0 * s)
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self(self.0.map(|z| z * s))
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: C64, other: &Operator) {
        self.0.zip_apply(&other.0, |a, b| *a += s * b);
    }

    pub fn axpy_real(&mut self, s: f64, other: &Operator) {
        self.0.zip_apply(&other.0, |a, b| *a += b * s);
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Spectral norm (largest singular value).
    pub fn op_norm(&self) -> f64 {
        let gram = Self(self.0.adjoint() * &self.0);
        let (vals, _) = gram.eigh();
        vals.last().copied().unwrap_or(0.0).max(0.0).sqrt()
    }

    /// `|X - X^dag| / |X|`, zero for the zero operator.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.norm();
        if n == 0.0 {
            return 0.0;
        }
        (&self.0 - self.0.adjoint()).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() / n
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermiticity_defect() <= HERMITICITY_TOL
    }

    pub fn hermitian_part(&self) -> Self {
        Self((&self.0 + self.0.adjoint()) * c(0.5, 0.0))
    }

    /// In-place `(X + X^dag) / 2`.
    pub fn symmetrize(&mut self) {
        let n = self.dim();
        for j in 0..n {
            for i in 0..=j {
                let avg = (self.0[(i, j)] + self.0[(j, i)].conj()) * 0.5;
                self.0[(i, j)] = avg;
                self.0[(j, i)] = avg.conj();
            }
        }
    }

    /// Eigendecomposition of the Hermitian part: ascending eigenvalues and the
    /// matching unitary eigenvector matrix.
    pub fn eigh(&self) -> (Vec<f64>, DMatrix<C64>) {
        let herm = self.hermitian_part().0;
        let eig = herm.symmetric_eigen();
        let n = self.dim();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vecs = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
        (vals, vecs)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigh().0.first().copied().unwrap_or(0.0)
    }

    /// `V f(Lambda) V^dag` for the Hermitian part of `self`.
    pub fn map_hermitian(&self, f: impl Fn(f64) -> C64) -> Self {
        let (vals, v) = self.eigh();
        Self::from_spectrum(&vals, &v, f)
    }

    pub(crate) fn from_spectrum(vals: &[f64], v: &DMatrix<C64>, f: impl Fn(f64) -> C64) -> Self {
        let n = vals.len();
        let mut scaled = v.clone();
        for (j, &lam) in vals.iter().enumerate() {
            let fj = f(lam);
            for i in 0..n {
                scaled[(i, j)] *= fj;
            }
        }
        Self(scaled * v.adjoint())
    }

    /// Principal square root of a positive semidefinite operator; eigenvalues
    /// below `floor` are clamped to zero.
    pub fn sqrt_psd(&self, floor: f64) -> Self {
        self.map_hermitian(|l| c(if l > floor { l.sqrt() } else { 0.0 }, 0.0))
    }

    /// `exp(G)` for anti-Hermitian `G`, through the spectrum of the Hermitian `iG`.
    pub fn expm_anti_hermitian(&self) -> Self {
        let m = self.scale(I);
        m.map_hermitian(|l| Complex::from_polar(1.0, -l))
    }

    pub fn inverse(&self) -> Result<Self> {
        self.0
            .clone()
            .try_inverse()
            .map(Self)
            .ok_or(Error::SingularSolve { min_eigenvalue: 0.0 })
    }

    /// Sum of absolute eigenvalues of the Hermitian part.
    pub fn trace_norm(&self) -> f64 {
        self.eigh().0.iter().map(|l| l.abs()).sum()
    }

    /// Kronecker product `self (x) other`, with `self` as the major index.
    pub fn kron(&self, other: &Operator) -> Self {
        Self(self.0.kronecker(&other.0))
    }

    /// Bilinear pairing `Tr(self * other)` without forming the product.
    pub fn pair(&self, other: &Operator) -> C64 {
        let n = self.dim();
        let mut acc = C64::default();
        for i in 0..n {
            for k in 0..n {
                acc += self.0[(i, k)] * other.0[(k, i)];
            }
        }
        acc
    }

    fn check_dim(&self, other: &Operator) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { left: self.dim(), right: other.dim() });
        }
        Ok(())
    }
}

impl<'a> Add<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        Operator(&self.0 + &rhs.0)
    }
}

impl<'a> Sub<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        Operator(&self.0 - &rhs.0)
    }
}

impl<'a> Mul<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        Operator(&self.0 * &rhs.0)
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        Operator(-&self.0)
    }
}

impl Mul<C64> for &Operator {
    type Output = Operator;
    fn mul(self, rhs: C64) -> Operator {
        Operator(&self.0 * rhs)
    }
}

impl AddAssign<&Operator> for Operator {
    fn add_assign(&mut self, rhs: &Operator) {
        self.0 += &rhs.0;
    }
}

impl SubAssign<&Operator> for Operator {
    fn sub_assign(&mut self, rhs: &Operator) {
        self.0 -= &rhs.0;
    }
}

/// `XY - YX`.
pub fn commutator(x: &Operator, y: &Operator) -> Result<Operator> {
    x.check_dim(y)?;
    Ok(Operator(&x.0 * &y.0 - &y.0 * &x.0))
}

/// `XY + YX`.
pub fn anticommutator(x: &Operator, y: &Operator) -> Result<Operator> {
    x.check_dim(y)?;
    Ok(Operator(&x.0 * &y.0 + &y.0 * &x.0))
}

/// Solves `XP + PX = 2C` for positive definite `P`.
///
/// In the eigenbasis of `P` the equation decouples into
/// `X_ij = 2 C_ij / (lambda_i + lambda_j)`; the solution is Hermitian whenever
/// `C` is.
pub fn jordan_solve(p: &Operator, rhs: &Operator) -> Result<Operator> {
    p.check_dim(rhs)?;
    let (vals, v) = p.eigh();
    let min = vals[0];
    let scale = vals.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    if min <= 1e-14 * scale.max(f64::MIN_POSITIVE) || min <= 0.0 {
        return Err(Error::SingularSolve { min_eigenvalue: min });
    }
    let rotated = v.adjoint() * &rhs.0 * &v;
    let n = vals.len();
    let solved = DMatrix::from_fn(n, n, |i, j| rotated[(i, j)] * (2.0 / (vals[i] + vals[j])));
    Ok(Operator(&v * solved * v.adjoint()))
}

/// Truncated-Fock harmonic oscillator.
#[derive(Clone, Debug)]
pub struct Oscillator {
    /// Position `Q = sqrt(hbar / 2 omega) (a + a^dag)`.
    pub q: Operator,
    /// Momentum `P = i sqrt(hbar omega / 2) (a^dag - a)`.
    pub p: Operator,
    /// Complex amplitude `A = iP + omega Q`.
    pub a: Operator,
    /// `H = A^dag A / 2`.
    pub h: Operator,
    /// Ladder operator `a` with `a|n> = sqrt(n)|n-1>`.
    pub ladder: Operator,
    pub hbar: f64,
    pub omega: f64,
}

/// Builds `Q, P, A, H` on the lowest `dim` number states.
///
/// Truncation makes `[Q, P] = i hbar (I - dim E_{dim-1,dim-1})`; the canonical
/// relation holds exactly on the top-left `dim - 1` block.
pub fn build_oscillator(dim: usize, hbar: f64, omega: f64) -> Result<Oscillator> {
    if dim < 2 {
        return Err(Error::InvalidDimension { dim, reason: "oscillator needs dim >= 2" });
    }
    if !(hbar > 0.0 && hbar.is_finite()) || !(omega > 0.0 && omega.is_finite()) {
        return Err(Error::Domain(format!("hbar and omega must be positive, got {hbar}, {omega}")));
    }
    let ladder = Operator::from_fn(dim, |i, j| {
        if j == i + 1 {
            c((j as f64).sqrt(), 0.0)
        } else {
            C64::default()
        }
    });
    let raise = ladder.dagger();
    let q = (&ladder + &raise).scale_real((hbar / (2.0 * omega)).sqrt());
    let p = (&raise - &ladder).scale(c(0.0, (hbar * omega / 2.0).sqrt()));
    let a = &p.scale(I) + &q.scale_real(omega);
    let h = (&a.dagger() * &a).scale_real(0.5);
    Ok(Oscillator { q, p, a, h, ladder, hbar, omega })
}

/// Validated density operator: Hermitian and positive semidefinite.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator(Operator);

impl DensityOperator {
    pub fn new(op: Operator) -> Result<Self> {
        let defect = op.hermiticity_defect();
        if defect > HERMITICITY_TOL {
            return Err(Error::Domain(format!("density is not Hermitian (defect {defect:e})")));
        }
        let scale = op.norm().max(f64::MIN_POSITIVE);
        let min = op.min_eigenvalue();
        if min < POSITIVITY_TOL * scale {
            return Err(Error::Domain(format!("density has negative eigenvalue {min:e}")));
        }
        let mut op = op;
        op.symmetrize();
        Ok(Self(op))
    }

    /// Pure state `|psi><psi|` (normalized).
    pub fn pure(psi: &[C64]) -> Result<Self> {
        let n2: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if n2 <= 0.0 || !n2.is_finite() {
            return Err(Error::Domain("state vector has zero norm".into()));
        }
        let d = psi.len();
        Self::new(Operator::from_fn(d, |i, j| psi[i] * psi[j].conj() / n2))
    }

    /// Rescaled to unit trace.
    pub fn normalized(&self) -> Result<Self> {
        let tr = self.0.trace().re;
        if tr <= 0.0 {
            return Err(Error::NonPositiveWeight { weight: tr });
        }
        Ok(Self(self.0.scale_real(1.0 / tr)))
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn as_operator(&self) -> &Operator {
        &self.0
    }

    pub fn into_operator(self) -> Operator {
        self.0
    }
}

/// Coordinate-list sparse operator used on the hot path of the grid filter,
/// where `Q`, `H` and the coupling operators are banded in the Fock basis.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    dim: usize,
    entries: Vec<(usize, usize, C64)>,
}

impl SparseOperator {
    pub fn from_operator(op: &Operator) -> Self {
        let n = op.dim();
        let mut entries = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let z = op.get(i, j);
                if z != C64::default() {
                    entries.push((i, j, z));
                }
            }
        }
        Self { dim: n, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// `out += s * (S x)`
    pub fn left_mul_add(&self, s: C64, x: &Operator, out: &mut Operator) {
        let n = self.dim;
        let xs = x.0.as_slice();
        let os = out.0.as_mut_slice();
        for &(i, k, v) in &self.entries {
            let f = s * v;
            for col in 0..n {
                os[col * n + i] += f * xs[col * n + k];
            }
        }
    }

    /// `out += s * (x S)`
    pub fn right_mul_add(&self, s: C64, x: &Operator, out: &mut Operator) {
        let n = self.dim;
        let xs = x.0.as_slice();
        let os = out.0.as_mut_slice();
        for &(k, j, v) in &self.entries {
            let f = s * v;
            let (src, dst) = (k * n, j * n);
            for i in 0..n {
                os[dst + i] += f * xs[src + i];
            }
        }
    }

    /// `out += s * [x, S]`
    pub fn commutator_add(&self, s: C64, x: &Operator, out: &mut Operator) {
        self.right_mul_add(s, x, out);
        self.left_mul_add(-s, x, out);
    }

    pub fn to_operator(&self) -> Operator {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        Operator(m)
    }
}
