//! Ground-truth generators for estimation experiments.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::filter::{FilterMode, FilterRun};
use crate::generator::{FieldState, SystemModel};
use crate::kalman::KalmanParams;
use crate::operator::{c, Operator};

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Sampled path of the linear-Gaussian oscillator model and its record.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPath {
    /// `(q, p, theta)` at each of the `steps + 1` times.
    pub states: Vec<[f64; 3]>,
    /// Record increments `dy = q dt + sqrt(gamma) dW`.
    pub dy: Vec<f64>,
}

/// Euler-Maruyama path of the classical model equivalent to a position
/// measurement of the oscillator started in its ground state, with the
/// signal drawn from `N(theta_mean, theta_var)`.
pub fn gaussian_path<R: Rng + ?Sized>(
    params: &KalmanParams,
    theta_mean: f64,
    theta_var: f64,
    dt: f64,
    steps: usize,
    rng: &mut R,
) -> GaussianPath {
    let mut q = normal(rng) * (params.hbar / (2.0 * params.omega)).sqrt();
    let mut p = normal(rng) * (params.hbar * params.omega / 2.0).sqrt();
    let mut th = theta_mean + normal(rng) * theta_var.sqrt();
    let sdt = dt.sqrt();
    let sg = params.sigma_gamma_sq.sqrt();
    let mut states = Vec::with_capacity(steps + 1);
    let mut dy = Vec::with_capacity(steps);
    states.push([q, p, th]);
    for _ in 0..steps {
        let dw = normal(rng) * sdt;
        let df = normal(rng) * sdt * sg;
        let dn = normal(rng) * sdt * params.gamma.sqrt();
        dy.push(q * dt + dn);
        let dth = -params.upsilon * th * dt + params.sigma * dw;
        let q_next = q + p * dt;
        p += -params.omega * params.omega * q * dt + dth + df;
        q = q_next;
        th += dth;
        states.push([q, p, th]);
    }
    GaussianPath { states, dy }
}

/// Path of the full quantum model: Euler-Maruyama signal, exact momentum kicks
/// `exp(i df Q / hbar)` and a conditioned system state measured by the
/// observed channels.
#[derive(Clone, Debug)]
pub struct QuantumPath {
    pub theta: Vec<f64>,
    pub dw: Vec<f64>,
    pub dy: Vec<Vec<f64>>,
    /// Expected `<Q_j>` before each step.
    pub observed_means: Vec<Vec<f64>>,
    pub final_state: Operator,
}

pub fn quantum_path<R: Rng + ?Sized>(
    model: &SystemModel,
    rho0: &Operator,
    theta0: f64,
    dt: f64,
    steps: usize,
    rng: &mut R,
) -> Result<QuantumPath> {
    let bare = SystemModel::without_signal(
        model.hbar(),
        model.hamiltonian().clone(),
        model.couplings().to_vec(),
        model.noise().clone(),
    )?;
    let sampler = model.noise().sampler()?;
    let signal = model.signal();
    let n = model.noise().observed();
    let quads: Vec<Operator> = (0..n).map(|j| model.observed_quadrature(j)).collect();
    let init = FieldState::uniform(bare.signal(), rho0)?;
    let mut run = FilterRun::new(&bare, FilterMode::Normalized, dt, dt * steps.max(1) as f64, init)?;
    let mut th = theta0;
    let mut path = QuantumPath {
        theta: vec![th],
        dw: Vec::with_capacity(steps),
        dy: Vec::with_capacity(steps),
        observed_means: Vec::with_capacity(steps),
        final_state: rho0.clone(),
    };
    let kick_gen = model.coupling_coordinate().scale(c(0.0, 1.0 / model.hbar()));
    for _ in 0..steps {
        let inc = sampler.sample(dt, rng);
        let rho = run.state().reduced();
        let means: Vec<f64> = quads.iter().map(|qj| qj.pair(&rho).re / rho.trace().re).collect();
        let dy: Vec<f64> = means.iter().zip(&inc.de).map(|(m, e)| m * dt + e).collect();
        run.step_normalized(&dy)?;
        let next = th + signal.drift_at(th) * dt + signal.sigma() * inc.dw;
        let df = signal.f_at(next) - signal.f_at(th);
        if df != 0.0 {
            let w = kick_gen.scale_real(df).expm_anti_hermitian();
            for phi in run.state_mut().phi_mut() {
                *phi = &(&w * &*phi) * &w.dagger();
            }
        }
        th = next;
        if !th.is_finite() {
            return Err(Error::BlowUp { step: path.dw.len(), time: path.dw.len() as f64 * dt, suggested_dt: dt / 4.0 });
        }
        path.theta.push(th);
        path.dw.push(inc.dw);
        path.dy.push(dy);
        path.observed_means.push(means);
    }
    path.final_state = run.state().reduced();
    Ok(path)
}
