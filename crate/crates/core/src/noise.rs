//! Quantum noise covariance algebra and the classical increments that drive
//! the filter in the commutative output representation.
//!
//! Index conventions: `kappa` holds the covariant input intensities
//! `<v_i v_k> = kappa_ik`, the output noise has the transposed intensities
//! `kappa_tilde = kappa^T`, and the contravariant input increments `dv^j`
//! that drive the linear filter have covariance `(kappa_tilde^{-1})_{jk} dt`.
//! The observed output increments `de_j` have covariance `kappa_tilde_{jk} dt`
//! and `dv^j de_k = delta_jk dt`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::operator::{c, Operator, C64};

/// Covariance data for `m` noise channels, of which the first `n` are observed.
#[derive(Clone, Debug)]
pub struct NoiseSpec {
    m: usize,
    n: usize,
    kappa: Operator,
    kappa_tilde: Operator,
    kappa_contra: Operator,
    kappa_tilde_contra: Operator,
    gamma: DMatrix<f64>,
    theta: DMatrix<f64>,
}

impl NoiseSpec {
    /// Builds the derived matrices for a Hermitian positive definite `kappa`
    /// with `observed` measured channels.
    pub fn new(kappa: Operator, observed: usize) -> Result<Self> {
        let m = kappa.dim();
        if observed == 0 || observed > m {
            return Err(Error::Model(format!(
                "observed channel count {observed} must lie in 1..={m}"
            )));
        }
        check_hermitian_positive(&kappa)?;
        let kappa_tilde = kappa.transpose();
        let scale = kappa.norm();
        for i in 0..observed {
            for j in 0..observed {
                if kappa_tilde.get(i, j).im.abs() > 1e-12 * scale {
                    return Err(Error::Model(format!(
                        "observed outputs do not commute: Im kappa_tilde[{i}][{j}] = {:e}",
                        kappa_tilde.get(i, j).im
                    )));
                }
            }
        }
        let kappa_contra = kappa.inverse()?;
        let kappa_tilde_contra = kappa_tilde.inverse()?;
        let gamma = geometric_mean(&kappa)?;
        let sub = Operator::from_fn(observed, |i, j| kappa.get(i, j));
        let theta = standard_theta(&sub)?;
        Ok(Self { m, n: observed, kappa, kappa_tilde, kappa_contra, kappa_tilde_contra, gamma, theta })
    }

    /// Single real channel with intensity `gamma`.
    pub fn scalar(gamma: f64) -> Result<Self> {
        Self::new(Operator::from_real_diagonal(&[gamma]), 1)
    }

    pub fn channels(&self) -> usize {
        self.m
    }

    pub fn observed(&self) -> usize {
        self.n
    }

    pub fn kappa(&self) -> &Operator {
        &self.kappa
    }

    pub fn kappa_tilde(&self) -> &Operator {
        &self.kappa_tilde
    }

    /// `kappa^{-1}`, the intensities in the dissipator.
    pub fn kappa_contra(&self) -> &Operator {
        &self.kappa_contra
    }

    /// `kappa_tilde^{-1}`, the covariance of the contravariant increments.
    pub fn kappa_tilde_contra(&self) -> &Operator {
        &self.kappa_tilde_contra
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    /// Real observed block of `kappa` (equal to that of `kappa_tilde`).
    pub fn observed_kappa(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.kappa.get(i, j).re)
    }

    /// Inverse of the observed output covariance; maps an observed record
    /// increment `dy` to the contravariant input increment `dv`.
    pub fn record_to_input(&self) -> DMatrix<f64> {
        self.observed_kappa()
            .try_inverse()
            .expect("observed block of a positive definite matrix is invertible")
    }

    /// `|gamma kappa^{-1} gamma - kappa_tilde|` (Frobenius).
    pub fn gamma_residual(&self) -> f64 {
        let g = real_to_complex(&self.gamma);
        let lhs = &(&g * &self.kappa_contra) * &g;
        (&lhs - &self.kappa_tilde).norm()
    }

    /// `|theta kappa_sub^{-1} theta^T - conj(kappa_sub)|` (Frobenius).
    pub fn theta_residual(&self) -> f64 {
        let sub = Operator::from_fn(self.n, |i, j| self.kappa.get(i, j));
        theta_relation_residual(&sub, &self.theta)
    }

    pub fn sampler(&self) -> Result<IncrementSampler> {
        IncrementSampler::new(self)
    }
}

fn real_to_complex(m: &DMatrix<f64>) -> Operator {
    Operator::from_fn(m.nrows(), |i, j| c(m[(i, j)], 0.0))
}

fn check_hermitian_positive(kappa: &Operator) -> Result<f64> {
    if kappa.hermiticity_defect() > 1e-12 {
        return Err(Error::Domain("kappa is not Hermitian".into()));
    }
    let (vals, _) = kappa.eigh();
    let floor = 1e-14 * kappa.norm();
    if vals[0] <= floor {
        return Err(Error::Domain(format!(
            "kappa must be strictly positive, smallest eigenvalue {:e}",
            vals[0]
        )));
    }
    Ok(vals[0])
}

/// Matrix geometric mean of `kappa` and its transpose: the positive `gamma`
/// with `gamma kappa^{-1} gamma = kappa^T`, returned as a real symmetric matrix.
pub fn geometric_mean(kappa: &Operator) -> Result<DMatrix<f64>> {
    check_hermitian_positive(kappa)?;
    let floor = 1e-14 * kappa.norm();
    let (vals, v) = kappa.eigh();
    let half = Operator::from_spectrum(&vals, &v, |l| c(l.max(floor).sqrt(), 0.0));
    let inv_half = Operator::from_spectrum(&vals, &v, |l| c(1.0 / l.max(floor).sqrt(), 0.0));
    let inner = &(&inv_half * &kappa.transpose()) * &inv_half;
    let inner_root = inner.sqrt_psd(floor);
    let g = &(&half * &inner_root) * &half;
    let scale = g.norm().max(f64::MIN_POSITIVE);
    if g.matrix().iter().any(|z| z.im.abs() > 1e-8 * scale) {
        return Err(Error::Domain("geometric mean is not real".into()));
    }
    let n = g.dim();
    Ok(DMatrix::from_fn(n, n, |i, j| 0.5 * (g.get(i, j).re + g.get(j, i).re)))
}

/// The observed-block normalizer `theta` with `theta kappa^{-1} theta^T = conj(kappa)`.
///
/// For a Hermitian block `conj(kappa) = kappa^T`, so this is the geometric
/// mean of the block and its conjugate.
pub fn standard_theta(kappa_sub: &Operator) -> Result<DMatrix<f64>> {
    geometric_mean(kappa_sub)
}

pub fn theta_relation_residual(kappa_sub: &Operator, theta: &DMatrix<f64>) -> f64 {
    let t = real_to_complex(theta);
    let inv = match kappa_sub.inverse() {
        Ok(x) => x,
        Err(_) => return f64::INFINITY,
    };
    let lhs = &(&t * &inv) * &t.transpose();
    (&lhs - &kappa_sub.conj()).norm()
}

/// Stochastic differentials appearing in the multiplication table. Channel
/// numbers start at 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IncrementLabel {
    /// Contravariant input noise `dv^j`.
    Dv(usize),
    /// Covariant output noise `de_j`.
    De(usize),
    /// Langevin force `df^k`.
    Df(usize),
    /// Signal driving Wiener increment `dw`.
    Dw,
    /// Signal increment `d theta`.
    Dtheta,
}

impl fmt::Display for IncrementLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Dv(j) => write!(f, "dv^{j}"),
            Self::De(j) => write!(f, "de_{j}"),
            Self::Df(k) => write!(f, "df^{k}"),
            Self::Dw => write!(f, "dw"),
            Self::Dtheta => write!(f, "dtheta"),
        }
    }
}

/// Ordered products of stochastic differentials, in units of `dt`.
#[derive(Clone, Debug)]
pub struct ItoTable {
    spec: NoiseSpec,
    hbar: f64,
    sigma: f64,
}

impl ItoTable {
    pub fn new(spec: &NoiseSpec, hbar: f64, sigma: f64) -> Self {
        Self { spec: spec.clone(), hbar, sigma }
    }

    fn channel(&self, label: IncrementLabel, j: usize) -> Result<usize> {
        if j == 0 || j > self.spec.m {
            return Err(Error::UnknownLabel(label.to_string()));
        }
        Ok(j - 1)
    }

    /// Intensity of `a * b`; products not listed in the table vanish.
    pub fn product(&self, a: IncrementLabel, b: IncrementLabel) -> Result<C64> {
        use IncrementLabel::*;
        let zero = C64::default();
        let one = c(1.0, 0.0);
        let delta = |i: usize, k: usize| if i == k { one } else { zero };
        // validate both labels first so unknown channels always error
        for l in [a, b] {
            if let Dv(j) | De(j) | Df(j) = l {
                self.channel(l, j)?;
            }
        }
        Ok(match (a, b) {
            (Dv(i), Dv(k)) => self.spec.kappa_tilde_contra.get(i - 1, k - 1),
            (Dv(i), De(k)) | (De(k), Dv(i)) => delta(i, k),
            (De(i), De(k)) => self.spec.kappa_tilde.get(i - 1, k - 1),
            (Df(i), Df(k)) => {
                self.spec.kappa_tilde_contra.get(i - 1, k - 1) * (0.25 * self.hbar * self.hbar)
            }
            (De(j), Df(k)) => delta(j, k) * c(0.0, self.hbar),
            (Dw, Dw) => one,
            (Dtheta, Dtheta) => c(self.sigma * self.sigma, 0.0),
            (Dw, Dtheta) | (Dtheta, Dw) => c(self.sigma, 0.0),
            _ => zero,
        })
    }
}

/// `ito_product(table, a, b)`.
pub fn ito_product(table: &ItoTable, a: IncrementLabel, b: IncrementLabel) -> Result<C64> {
    table.product(a, b)
}

/// One time step of jointly Gaussian increments.
#[derive(Clone, Debug, PartialEq)]
pub struct Increments {
    /// Contravariant input increments `dv^1..dv^n`.
    pub dv: Vec<f64>,
    /// Observed output increments `de_1..de_n`.
    pub de: Vec<f64>,
    /// Signal Wiener increment.
    pub dw: f64,
}

/// Precomputed square roots for drawing [`Increments`].
///
/// `de` is drawn with covariance `kappa_tilde_obs dt`; `dv` is its image under
/// `kappa_tilde_obs^{-1}` plus an independent remainder carrying the
/// unobserved-channel part of `(kappa_tilde^{-1})_obs`, which vanishes when
/// every channel is observed.
#[derive(Clone, Debug)]
pub struct IncrementSampler {
    n: usize,
    de_root: DMatrix<f64>,
    to_input: DMatrix<f64>,
    remainder_root: Option<DMatrix<f64>>,
}

impl IncrementSampler {
    fn new(spec: &NoiseSpec) -> Result<Self> {
        let n = spec.n;
        let scale = spec.kappa_tilde_contra.norm();
        let contra = DMatrix::from_fn(n, n, |i, j| spec.kappa_tilde_contra.get(i, j));
        if contra.iter().any(|z| z.im.abs() > 1e-12 * scale) {
            return Err(Error::Model(
                "observed contravariant covariance is not real; the record is not classical".into(),
            ));
        }
        let contra = contra.map(|z| z.re);
        let cov_de = spec.observed_kappa();
        let to_input = spec.record_to_input();
        let remainder = &contra - &to_input;
        let remainder = (&remainder + remainder.transpose()) * 0.5;
        let rem_norm = remainder.norm();
        let remainder_root = if rem_norm > 1e-13 * contra.norm() {
            Some(real_psd_sqrt(&remainder))
        } else {
            None
        };
        Ok(Self { n, de_root: real_psd_sqrt(&cov_de), to_input, remainder_root })
    }

    pub fn observed(&self) -> usize {
        self.n
    }

    pub fn sample<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> Increments {
        let sdt = dt.sqrt();
        let z = DVector::from_fn(self.n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let de = &self.de_root * z * sdt;
        let mut dv = &self.to_input * &de;
        if let Some(root) = &self.remainder_root {
            let r = DVector::from_fn(self.n, |_, _| rng.sample::<f64, _>(StandardNormal));
            dv += root * r * sdt;
        }
        let dw = rng.sample::<f64, _>(StandardNormal) * sdt;
        Increments { dv: dv.iter().copied().collect(), de: de.iter().copied().collect(), dw }
    }
}

/// Draws `(dv^1, .., dv^n, dw)` for one step of length `dt`.
pub fn sample_increments<R: Rng + ?Sized>(spec: &NoiseSpec, dt: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let inc = spec.sampler()?.sample(dt, rng);
    let mut out = inc.dv;
    out.push(inc.dw);
    Ok(out)
}

pub(crate) fn real_psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}
