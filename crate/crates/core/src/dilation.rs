//! Repeated-interaction dilation: the system meets a fresh ancilla in its
//! ground state at every step, the pair evolves under
//! `U = exp(sqrt(dt) (L (x) b^dag - L^dag (x) b) - i dt (H / hbar) (x) I)` and
//! the ancilla quadrature `b + b^dag` is then measured projectively.
//!
//! Only the vacuum, single-channel case without a classical signal is
//! modelled (`kappa = 1`). Tensor products put the system on the major index.

use rand::Rng;

use crate::error::{Error, Result};
use crate::filter::{FilterMode, FilterRun};
use crate::generator::{FieldState, SystemModel};
use crate::operator::{c, Operator, C64};

/// Largest total chain dimension handled by [`check_nondemolition`].
pub const MAX_CHAIN_DIM: usize = 4096;
const UNITARITY_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct ChainModel {
    system_dim: usize,
    ancilla_dim: usize,
    steps: usize,
    dt: f64,
    step_unitary: Operator,
    quadrature: Operator,
    outcomes: Vec<f64>,
    /// Kraus operator for each outcome, `<e_k| U |0>`.
    kraus: Vec<Operator>,
}

fn ladder(dim: usize) -> Operator {
    Operator::from_fn(dim, |i, j| if j == i + 1 { c((j as f64).sqrt(), 0.0) } else { C64::default() })
}

fn check_vacuum_model(model: &SystemModel) -> Result<()> {
    let noise = model.noise();
    if noise.channels() != 1 || noise.observed() != 1 {
        return Err(Error::Model("dilation needs a single observed channel".into()));
    }
    if (noise.kappa().get(0, 0) - c(1.0, 0.0)).norm() > 1e-12 {
        return Err(Error::Model("dilation needs the vacuum intensity kappa = 1".into()));
    }
    if !model.signal().is_inert() {
        return Err(Error::Model("dilation does not model the classical signal".into()));
    }
    Ok(())
}

/// Step unitary on system (x) ancilla.
pub fn build_step_unitary(model: &SystemModel, dt: f64, ancilla_dim: usize) -> Result<Operator> {
    check_vacuum_model(model)?;
    if ancilla_dim < 2 {
        return Err(Error::InvalidDimension { dim: ancilla_dim, reason: "ancilla needs dim >= 2" });
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let l = &model.couplings()[0];
    let b = ladder(ancilla_dim);
    let ia = Operator::identity(ancilla_dim);
    let exchange = &l.kron(&b.dagger()) - &l.dagger().kron(&b);
    let mut gen = exchange.scale_real(dt.sqrt());
    gen.axpy(c(0.0, -dt / model.hbar()), &model.hamiltonian().kron(&ia));
    let u = gen.expm_anti_hermitian();
    let dev = (&(&u.dagger() * &u) - &Operator::identity(u.dim())).norm();
    if dev > UNITARITY_TOL {
        return Err(Error::NonUnitary { deviation: dev });
    }
    Ok(u)
}

impl ChainModel {
    pub fn new(model: &SystemModel, dt: f64, ancilla_dim: usize, steps: usize) -> Result<Self> {
        if steps == 0 || steps > 6 {
            return Err(Error::InvalidArgument(format!("chain steps must lie in 1..=6, got {steps}")));
        }
        let step_unitary = build_step_unitary(model, dt, ancilla_dim)?;
        let b = ladder(ancilla_dim);
        let quadrature = &b + &b.dagger();
        let (outcomes, vecs) = quadrature.eigh();
        let d = model.dim();
        let kraus = (0..ancilla_dim)
            .map(|k| {
                Operator::from_fn(d, |i, j| {
                    (0..ancilla_dim)
                        .map(|a| vecs[(a, k)].conj() * step_unitary.get(i * ancilla_dim + a, j * ancilla_dim))
                        .sum()
                })
            })
            .collect();
        Ok(Self { system_dim: d, ancilla_dim, steps, dt, step_unitary, quadrature, outcomes, kraus })
    }

    pub fn system_dim(&self) -> usize {
        self.system_dim
    }

    pub fn ancilla_dim(&self) -> usize {
        self.ancilla_dim
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step_unitary(&self) -> &Operator {
        &self.step_unitary
    }

    /// Quadrature eigenvalues, one per measurement outcome.
    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn kraus(&self) -> &[Operator] {
        &self.kraus
    }

    pub fn chain_dim(&self) -> Option<usize> {
        (0..self.steps).try_fold(self.system_dim, |acc, _| acc.checked_mul(self.ancilla_dim))
    }

    /// `|sum_k K_k^dag K_k - I|`
    pub fn kraus_completeness(&self) -> f64 {
        let mut acc = Operator::zeros(self.system_dim);
        for k in &self.kraus {
            acc += &(&k.dagger() * k);
        }
        (&acc - &Operator::identity(self.system_dim)).norm()
    }

    /// Step unitary acting on the system and ancilla `k` (0-based) of the chain.
    fn embed_step(&self, k: usize) -> Operator {
        let (d, a, n) = (self.system_dim, self.ancilla_dim, self.steps);
        let total = d * a.pow(n as u32);
        let stride = a.pow((n - 1 - k) as u32);
        let block = a.pow(n as u32);
        let mut m = nalgebra::DMatrix::<C64>::zeros(total, total);
        for col in 0..total {
            let s = col / block;
            let rest = col % block;
            let ak = (rest / stride) % a;
            let others = rest - ak * stride;
            for s2 in 0..d {
                for a2 in 0..a {
                    let v = self.step_unitary.get(s2 * a + a2, s * a + ak);
                    if v != C64::default() {
                        m[(s2 * block + others + a2 * stride, col)] = v;
                    }
                }
            }
        }
        Operator::from_matrix(m).expect("finite embedding")
    }

    /// Ancilla quadrature of ancilla `k` on the chain.
    fn embed_quadrature(&self, k: usize) -> Operator {
        let mut op = Operator::identity(self.system_dim);
        for j in 0..self.steps {
            let f = if j == k { self.quadrature.clone() } else { Operator::identity(self.ancilla_dim) };
            op = op.kron(&f);
        }
        op
    }

    fn embed_system(&self, x: &Operator) -> Operator {
        x.kron(&Operator::identity(self.ancilla_dim.pow(self.steps as u32)))
    }
}

/// Hermitian basis of system operators, each with unit Frobenius norm.
fn hermitian_basis(d: usize) -> Vec<Operator> {
    let mut out = Vec::with_capacity(d * d);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..d {
        for j in i..d {
            if i == j {
                out.push(Operator::unit(d, i, i));
            } else {
                out.push((&Operator::unit(d, i, j) + &Operator::unit(d, j, i)).scale_real(r));
                out.push((&Operator::unit(d, i, j) - &Operator::unit(d, j, i)).scale(c(0.0, r)));
            }
        }
    }
    out
}

/// Largest spectral norm of `[Y(s), X(t)]` over a Hermitian basis of system
/// observables `X`, where `Y(s)` is the summed quadrature of the first `s`
/// ancillas in the Heisenberg picture and `X(t)` the system observable after
/// `t` steps.
pub fn check_nondemolition(chain: &ChainModel, s_step: usize, t_step: usize) -> Result<f64> {
    let total = chain.chain_dim().unwrap_or(usize::MAX);
    if total > MAX_CHAIN_DIM {
        return Err(Error::ChainTooLarge { dim: total, limit: MAX_CHAIN_DIM });
    }
    if s_step > chain.steps || t_step > chain.steps {
        return Err(Error::InvalidArgument(format!(
            "steps ({s_step}, {t_step}) exceed chain length {}",
            chain.steps
        )));
    }
    let mut evol = vec![Operator::identity(total)];
    for k in 0..chain.steps {
        let next = &chain.embed_step(k) * evol.last().expect("non-empty");
        evol.push(next);
    }
    let mut y = Operator::zeros(total);
    for k in 0..s_step {
        y += &chain.embed_quadrature(k);
    }
    let vs = &evol[s_step];
    let y = &(&vs.dagger() * &y) * vs;
    let vt = &evol[t_step];
    let mut worst: f64 = 0.0;
    for x in hermitian_basis(chain.system_dim) {
        let xt = &(&vt.dagger() * &chain.embed_system(&x)) * vt;
        let comm = &(&y * &xt) - &(&xt * &y);
        worst = worst.max(comm.op_norm());
    }
    Ok(worst)
}

#[derive(Clone, Debug)]
pub struct ExactStep {
    pub outcome: f64,
    /// Record increment `outcome * sqrt(dt)`.
    pub dy: f64,
    pub probability: f64,
    /// `|sum_k p_k - 1|` for this step.
    pub completeness_error: f64,
    pub posterior: Operator,
}

fn branch(chain: &ChainModel, rho: &Operator, k: usize) -> (Operator, f64) {
    let kr = &chain.kraus[k];
    let un = &(kr * rho) * &kr.dagger();
    let p = un.trace().re;
    (un, p)
}

/// Samples outcomes by the Born rule and applies the Kraus update.
pub fn run_exact_conditioning<R: Rng + ?Sized>(
    chain: &ChainModel,
    initial: &Operator,
    steps: usize,
    rng: &mut R,
) -> Result<Vec<ExactStep>> {
    let mut rho = initial.clone();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let branches: Vec<(Operator, f64)> = (0..chain.ancilla_dim).map(|k| branch(chain, &rho, k)).collect();
        let total: f64 = branches.iter().map(|b| b.1).sum();
        let completeness_error = (total - rho.trace().re).abs();
        let mut pick = None;
        for _ in 0..8 {
            let u: f64 = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut k = branches.len() - 1;
            for (i, b) in branches.iter().enumerate() {
                acc += b.1;
                if u < acc {
                    k = i;
                    break;
                }
            }
            if branches[k].1 > 1e-300 {
                pick = Some(k);
                break;
            }
        }
        let k = pick.ok_or(Error::ZeroProbabilityBranch { probability: 0.0 })?;
        let (un, p) = &branches[k];
        let mut post = un.scale_real(1.0 / p);
        post.symmetrize();
        out.push(ExactStep {
            outcome: chain.outcomes[k],
            dy: chain.outcomes[k] * chain.dt.sqrt(),
            probability: *p,
            completeness_error,
            posterior: post.clone(),
        });
        rho = post;
    }
    Ok(out)
}

/// Largest trace-norm gap, over all outcomes, between the exact conditional
/// state and one normalized Euler filter step from `rho` driven by the
/// matching increment.
pub fn branch_gap(chain: &ChainModel, model: &SystemModel, rho: &Operator) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for k in 0..chain.ancilla_dim {
        let (un, p) = branch(chain, rho, k);
        if p <= 1e-300 {
            continue;
        }
        let exact = un.scale_real(1.0 / p);
        let init = FieldState::uniform(model.signal(), rho)?;
        let mut run = FilterRun::new(model, FilterMode::Normalized, chain.dt, chain.dt, init)?;
        run.step_normalized(&[chain.outcomes[k] * chain.dt.sqrt()])?;
        let approx = run.state().reduced();
        worst = worst.max((&exact - &approx).trace_norm());
    }
    Ok(worst)
}

/// Sup over a sampled exact trajectory of [`branch_gap`].
pub fn trajectory_gap<R: Rng + ?Sized>(
    chain: &ChainModel,
    model: &SystemModel,
    initial: &Operator,
    steps: usize,
    rng: &mut R,
) -> Result<f64> {
    let path = run_exact_conditioning(chain, initial, steps, rng)?;
    let mut worst = branch_gap(chain, model, initial)?;
    for s in &path[..path.len().saturating_sub(1)] {
        worst = worst.max(branch_gap(chain, model, &s.posterior)?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseSpec;
    use crate::rng::trajectory_stream;

    fn qubit(decay: f64) -> SystemModel {
        let sm = Operator::from_rows(2, &[c(0.0, 0.0), c(decay.sqrt(), 0.0), c(0.0, 0.0), c(0.0, 0.0)]).unwrap();
        let h = Operator::from_real_diagonal(&[0.5, -0.5]);
        SystemModel::without_signal(1.0, h, vec![sm], NoiseSpec::scalar(1.0).unwrap()).unwrap()
    }

    #[test]
    fn decoupled_unitary_factorizes() {
        let m = qubit(0.0);
        let u = build_step_unitary(&m, 0.1, 2).unwrap();
        let hs = m.hamiltonian().scale(c(0.0, -0.1)).expm_anti_hermitian();
        let want = hs.kron(&Operator::identity(2));
        assert!((&u - &want).norm() < 1e-13);
    }

    #[test]
    fn kraus_are_complete() {
        let chain = ChainModel::new(&qubit(1.0), 0.01, 2, 3).unwrap();
        assert!(chain.kraus_completeness() < 1e-12);
    }

    #[test]
    fn no_coupling_means_unitary_posterior() {
        let m = qubit(0.0);
        let chain = ChainModel::new(&m, 0.05, 2, 3).unwrap();
        let rho = Operator::from_real_diagonal(&[0.5, 0.5]);
        let rho = &(&rho + &Operator::unit(2, 0, 1).scale_real(0.3)) + &Operator::unit(2, 1, 0).scale_real(0.3);
        let steps = run_exact_conditioning(&chain, &rho, 4, &mut trajectory_stream(1, 0)).unwrap();
        let u = m.hamiltonian().scale(c(0.0, -0.05)).expm_anti_hermitian();
        let mut want = rho.clone();
        for s in steps {
            want = &(&u * &want) * &u.dagger();
            assert!((&s.posterior - &want).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_signal_and_thermal_models() {
        let sm = Operator::unit(2, 0, 1);
        let m = SystemModel::without_signal(1.0, Operator::zeros(2), vec![sm], NoiseSpec::scalar(2.0).unwrap()).unwrap();
        assert!(matches!(build_step_unitary(&m, 0.1, 2), Err(Error::Model(_))));
    }

    #[test]
    fn chain_size_guard() {
        let chain = ChainModel::new(&qubit(1.0), 0.1, 5, 6).unwrap();
        assert!(matches!(check_nondemolition(&chain, 1, 2), Err(Error::ChainTooLarge { .. })));
    }
}
