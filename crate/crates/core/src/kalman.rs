//! Kalman-Bucy reference for the linearly coupled oscillator driven by an
//! Ornstein-Uhlenbeck force.
//!
//! State `x = (q, p, theta)` as a column vector:
//!
//! ```text
//! dq     = p dt
//! dp     = -omega^2 q dt + d theta + df,      <df df> = sigma_gamma^2 dt
//! dtheta = -upsilon theta dt + sigma dw
//! dy     = q dt + sqrt(gamma) dW
//! ```
//!
//! so `dx = F x dt + noise` with
//! `F = [[0, 1, 0], [-omega^2, 0, -upsilon], [0, 0, -upsilon]]` and noise
//! covariance `Upsilon = [[0,0,0],[0, sigma^2 + sigma_gamma^2, sigma^2],[0, sigma^2, sigma^2]]`.
//! In row-vector form (`dx + x Lambda dt = ...`) the drift is `Lambda = -F^T`.
//!
//! `sigma_gamma^2 = hbar^2 / (4 gamma)` is the back-action force of a position
//! measurement with intensity `gamma`.

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KalmanParams {
    pub omega: f64,
    pub upsilon: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub hbar: f64,
    pub sigma_gamma_sq: f64,
    /// Use the sign `+upsilon` in the `(p, theta)` drift entry.
    pub printed_drift: bool,
}

impl KalmanParams {
    pub fn new(omega: f64, upsilon: f64, sigma: f64, gamma: f64, hbar: f64) -> Result<Self> {
        for (name, v) in [("omega", omega), ("gamma", gamma), ("hbar", hbar)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("upsilon", upsilon), ("sigma", sigma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(Self { omega, upsilon, sigma, gamma, hbar, sigma_gamma_sq: hbar * hbar / (4.0 * gamma), printed_drift: false })
    }

    pub fn with_printed_drift(mut self, printed: bool) -> Self {
        self.printed_drift = printed;
        self
    }

    /// Column-convention drift `F`.
    pub fn drift_matrix(&self) -> Matrix3<f64> {
        let s = if self.printed_drift { 1.0 } else { -1.0 };
        Matrix3::new(
            0.0, 1.0, 0.0,
            -self.omega * self.omega, 0.0, s * self.upsilon,
            0.0, 0.0, -self.upsilon,
        )
    }

    pub fn noise_matrix(&self) -> Matrix3<f64> {
        let s2 = self.sigma * self.sigma;
        Matrix3::new(
            0.0, 0.0, 0.0,
            0.0, s2 + self.sigma_gamma_sq, s2,
            0.0, s2, s2,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KalmanState {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

impl KalmanState {
    /// Oscillator ground state times a Gaussian prior on the signal.
    pub fn ground(params: &KalmanParams, theta_mean: f64, theta_var: f64) -> Self {
        Self {
            mean: Vector3::new(0.0, 0.0, theta_mean),
            cov: Matrix3::from_diagonal(&Vector3::new(
                params.hbar / (2.0 * params.omega),
                params.hbar * params.omega / 2.0,
                theta_var,
            )),
        }
    }
}

/// `dK/dt = Upsilon + F K + K F^T - K e1 e1^T K / gamma`
pub fn riccati_rhs(k: &Matrix3<f64>, params: &KalmanParams) -> Matrix3<f64> {
    let f = params.drift_matrix();
    let col = k.column(0);
    let gain = col * col.transpose() / params.gamma;
    let r = params.noise_matrix() + f * k + k * f.transpose() - gain;
    (r + r.transpose()) * 0.5
}

pub fn riccati_rk4(k: &Matrix3<f64>, dt: f64, params: &KalmanParams) -> Matrix3<f64> {
    let k1 = riccati_rhs(k, params);
    let k2 = riccati_rhs(&(k + k1 * (0.5 * dt)), params);
    let k3 = riccati_rhs(&(k + k2 * (0.5 * dt)), params);
    let k4 = riccati_rhs(&(k + k3 * dt), params);
    let out = k + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    (out + out.transpose()) * 0.5
}

/// Innovation `(dy - q_hat dt) / gamma`.
pub fn innovation(state: &KalmanState, dy: f64, dt: f64, params: &KalmanParams) -> f64 {
    (dy - state.mean[0] * dt) / params.gamma
}

/// Mean update with gain `K e1` and covariance advanced by RK4.
pub fn kalman_step(state: &KalmanState, dy: f64, dt: f64, params: &KalmanParams) -> KalmanState {
    let innov = innovation(state, dy, dt, params);
    let f = params.drift_matrix();
    let mean = state.mean + f * state.mean * dt + state.cov.column(0) * innov;
    KalmanState { mean, cov: riccati_rk4(&state.cov, dt, params) }
}

/// Fixed point of the Riccati flow, integrated from zero until
/// `|dK/dt| <= 1e-12`.
pub fn stationary_riccati(params: &KalmanParams, horizon: f64) -> Result<Matrix3<f64>> {
    let dt = 1e-2;
    let mut k = Matrix3::zeros();
    let mut t = 0.0;
    loop {
        let r = riccati_rhs(&k, params).norm();
        if r <= 1e-12 {
            return Ok(k);
        }
        if t >= horizon || !r.is_finite() {
            return Err(Error::NonConvergence { horizon, residual: r });
        }
        k = riccati_rk4(&k, dt, params);
        t += dt;
    }
}
