//! Time stepping of the linear and normalized filters on the signal grid.
//!
//! Both integrators are Euler-Maruyama. The linear filter is driven by the
//! contravariant input increments `dv`; the normalized filter is driven by
//! the observed record increments `dy` in output units (`dy = kappa_obs dv`
//! when every channel is observed).
//!
//! Normalized step, with `theta` the observed-block normalizer,
//! `q_i = <L_i + L_i^dag>` and `L^j = sum_i L_i theta^{ij}`:
//!
//! ```text
//! Xi^j  = L^j rho + rho L^j^dag - q^j rho,     q^j = sum_i theta^{ij} q_i
//! Gamma = Lambda[rho] - sum_j (kappa_obs theta^{-1} q)_j Xi^j
//! rho  <- rho + Gamma dt + sum_j Xi^j dy_j,    then renormalize
//! ```
//!
//! For `kappa` real this is `rho + Lambda rho dt + (M rho - q rho)^T kappa^{-1} (dy - q dt)`,
//! which is what Ito's rule gives when the linear step is divided by its weight.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::generator::{FieldState, SystemModel};
use crate::noise::Increments;
use crate::operator::{c, Operator};
use crate::rng::SeedProvenance;

/// Beyond this the linear-filter weight is folded into a log scale.
const LOG_RESCALE: f64 = 200.0;
/// Smallest weight the normalized filter renormalizes.
const MIN_WEIGHT: f64 = 1e-300;
/// Flag threshold for the smallest eigenvalue of the reduced state, relative
/// to the weight.
const POSITIVITY_FLAG: f64 = -1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    Linear,
    Normalized,
}

/// Operator-valued function whose posterior mean is requested.
#[derive(Clone, Debug)]
pub enum Observable {
    /// `X(theta) = theta I`
    Signal,
    /// `X(theta) = X` for every node.
    System(Operator),
    Field(FieldState),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub time: f64,
    pub log_weight: f64,
    pub means: Vec<f64>,
    pub leakage: f64,
    pub min_eigenvalue: f64,
}

pub struct FilterRun<'a> {
    model: &'a SystemModel,
    mode: FilterMode,
    dt: f64,
    t_final: f64,
    state: FieldState,
    log_scale: f64,
    step: usize,
    scratch: FieldState,
    theta_inv: DMatrix<f64>,
    kappa_obs: DMatrix<f64>,
    history: Vec<Sample>,
    positivity_flags: usize,
}

impl<'a> FilterRun<'a> {
    pub fn new(
        model: &'a SystemModel,
        mode: FilterMode,
        dt: f64,
        t_final: f64,
        initial: FieldState,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if !(t_final >= dt) {
            return Err(Error::InvalidArgument(format!("t_final {t_final} must be at least dt {dt}")));
        }
        if initial.points() != model.points() || initial.dim() != model.dim() {
            return Err(Error::DimensionMismatch { left: initial.dim(), right: model.dim() });
        }
        let mut state = initial;
        if mode == FilterMode::Normalized {
            let p = state.weight();
            if !(p > 0.0) {
                return Err(Error::NonPositiveWeight { weight: p });
            }
            state.scale_real(1.0 / p);
        }
        let noise = model.noise();
        let theta_inv = noise
            .theta()
            .clone()
            .try_inverse()
            .ok_or(Error::SingularSolve { min_eigenvalue: 0.0 })?;
        let scratch = FieldState::zeros(model.signal(), model.dim());
        Ok(Self {
            model,
            mode,
            dt,
            t_final,
            state,
            log_scale: 0.0,
            step: 0,
            scratch,
            theta_inv,
            kappa_obs: noise.observed_kappa(),
            history: Vec::new(),
            positivity_flags: 0,
        })
    }

    pub fn model(&self) -> &SystemModel {
        self.model
    }

    pub fn mode(&self) -> FilterMode {
        self.mode
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn steps_total(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn state(&self) -> &FieldState {
        &self.state
    }

    pub(crate) fn state_mut(&mut self) -> &mut FieldState {
        &mut self.state
    }

    /// Weight including the folded log scale.
    pub fn weight(&self) -> f64 {
        self.state.weight() * self.log_scale.exp()
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn log_weight(&self) -> f64 {
        self.state.weight().ln() + self.log_scale
    }

    pub fn history(&self) -> &[Sample] {
        &self.history
    }

    pub fn positivity_flags(&self) -> usize {
        self.positivity_flags
    }

    fn blow_up(&self) -> Error {
        Error::BlowUp { step: self.step, time: self.time(), suggested_dt: self.dt / 4.0 }
    }

    /// `phi <- phi + Lambda[phi] dt + sum_j (L_j phi + phi L_j^dag) dv^j`
    pub fn step_linear(&mut self, dv: &[f64]) -> Result<()> {
        if self.mode != FilterMode::Linear {
            return Err(Error::InvalidArgument("step_linear on a normalized run".into()));
        }
        let n = self.model.noise().observed();
        if dv.len() != n {
            return Err(Error::DimensionMismatch { left: dv.len(), right: n });
        }
        self.model.apply_generator_into(&self.state, &mut self.scratch);
        let dt = self.dt;
        for (x, g) in self.state.phi_mut().iter_mut().zip(self.scratch.phi_mut().iter_mut()) {
            g.matrix_mut().scale_mut(dt);
            for (j, &v) in dv.iter().enumerate() {
                if v != 0.0 {
                    self.model.measurement_add(j, c(v, 0.0), x, g);
                }
            }
            *x += &*g;
        }
        self.state.symmetrize();
        self.step += 1;
        if !self.state.is_finite() {
            return Err(self.blow_up());
        }
        let p = self.state.weight();
        if p > 0.0 && p.ln().abs() > LOG_RESCALE {
            self.state.scale_real(1.0 / p);
            self.log_scale += p.ln();
        }
        Ok(())
    }

    /// One normalized step driven by observed record increments `dy`.
    pub fn step_normalized(&mut self, dy: &[f64]) -> Result<()> {
        if self.mode != FilterMode::Normalized {
            return Err(Error::InvalidArgument("step_normalized on a linear run".into()));
        }
        let n = self.model.noise().observed();
        if dy.len() != n {
            return Err(Error::DimensionMismatch { left: dy.len(), right: n });
        }
        let q = DVector::from_fn(n, |i, _| self.channel_mean(i));
        let q_hat = self.theta_inv.transpose() * &q;
        let drift = &self.kappa_obs * (&self.theta_inv * &q);
        let a = DVector::from_fn(n, |j, _| dy[j] - drift[j] * self.dt);
        let b = &self.theta_inv * &a;
        let s = a.dot(&q_hat);
        self.model.apply_generator_into(&self.state, &mut self.scratch);
        let dt = self.dt;
        for (x, g) in self.state.phi_mut().iter_mut().zip(self.scratch.phi_mut().iter_mut()) {
            g.matrix_mut().scale_mut(dt);
            for j in 0..n {
                if b[j] != 0.0 {
                    self.model.measurement_add(j, c(b[j], 0.0), x, g);
                }
            }
            g.axpy_real(-s, x);
            *x += &*g;
        }
        self.state.symmetrize();
        self.step += 1;
        if !self.state.is_finite() {
            return Err(self.blow_up());
        }
        let p = self.state.weight();
        if !(p >= MIN_WEIGHT) {
            return Err(Error::DegenerateTrajectory { weight: p });
        }
        self.state.scale_real(1.0 / p);
        Ok(())
    }

    /// Unnormalized `sum_k w_k Tr((L_i + L_i^dag) phi_k)`, divided by the weight.
    fn channel_mean(&self, i: usize) -> f64 {
        let l = &self.model.couplings()[i];
        let r = self.state.reduced();
        let v = l.pair(&r);
        2.0 * v.re / self.state.weight()
    }

    /// `sum_i w_i Tr(X_i phi_i) / p`.
    pub fn posterior_mean(&self, x: &Observable) -> Result<f64> {
        posterior_mean(&self.state, x)
    }

    /// Weight-normalized copy of the state.
    pub fn normalized_state(&self) -> Result<FieldState> {
        let p = self.state.weight();
        if !(p > 0.0) {
            return Err(Error::NonPositiveWeight { weight: p });
        }
        let mut s = self.state.clone();
        s.scale_real(1.0 / p);
        Ok(s)
    }

    /// Population of the two highest basis states in the reduced state.
    pub fn leakage(&self) -> f64 {
        leakage(&self.state)
    }

    /// Appends a history sample with the requested posterior means.
    pub fn record(&mut self, observables: &[Observable]) -> Result<()> {
        let p = self.state.weight();
        let reduced = self.state.reduced();
        let min_eig = reduced.min_eigenvalue() / p;
        if min_eig < POSITIVITY_FLAG {
            self.positivity_flags += 1;
        }
        let means = observables.iter().map(|x| posterior_mean(&self.state, x)).collect::<Result<Vec<_>>>()?;
        self.history.push(Sample {
            time: self.time(),
            log_weight: self.log_weight(),
            means,
            leakage: self.leakage(),
            min_eigenvalue: min_eig,
        });
        Ok(())
    }
}

pub fn posterior_mean(state: &FieldState, x: &Observable) -> Result<f64> {
    let p = state.weight();
    if !(p > 0.0) {
        return Err(Error::NonPositiveWeight { weight: p });
    }
    let v = match x {
        Observable::Signal => {
            let s: f64 = state
                .phi()
                .iter()
                .zip(state.weights())
                .zip(state.nodes())
                .map(|((phi, w), t)| w * t * phi.trace().re)
                .sum();
            c(s, 0.0)
        }
        Observable::System(op) => {
            if op.dim() != state.dim() {
                return Err(Error::DimensionMismatch { left: op.dim(), right: state.dim() });
            }
            op.pair(&state.reduced())
        }
        Observable::Field(f) => {
            if f.points() != state.points() || f.dim() != state.dim() {
                return Err(Error::DimensionMismatch { left: f.dim(), right: state.dim() });
            }
            state.pairing(f)
        }
    };
    let scale = v.re.abs().max(p);
    if v.im.abs() > 1e-10 * scale {
        return Err(Error::Domain(format!("posterior mean has imaginary part {:e}", v.im)));
    }
    Ok(v.re / p)
}

pub fn leakage(state: &FieldState) -> f64 {
    let r = state.reduced();
    let d = r.dim();
    let tr = r.trace().re;
    if d < 3 || tr <= 0.0 {
        return 0.0;
    }
    (r.get(d - 1, d - 1).re + r.get(d - 2, d - 2).re) / tr
}

/// Increments and record for one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub provenance: SeedProvenance,
    pub dt: f64,
    /// Contravariant input increments, one vector per step.
    pub dv: Vec<Vec<f64>>,
    /// Signal Wiener increments.
    pub dw: Vec<f64>,
    /// Observed record increments in output units.
    pub dy: Vec<Vec<f64>>,
}

impl TrajectoryRecord {
    pub fn steps(&self) -> usize {
        self.dy.len()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps()).map(|k| k as f64 * self.dt).collect()
    }

    /// Reference-measure record: the output is pure noise, `dy = de`.
    pub fn reference(model: &SystemModel, dt: f64, steps: usize, provenance: SeedProvenance) -> Result<Self> {
        let sampler = model.noise().sampler()?;
        let mut rng = provenance.stream();
        let mut rec = Self { provenance, dt, dv: Vec::with_capacity(steps), dw: Vec::with_capacity(steps), dy: Vec::with_capacity(steps) };
        for _ in 0..steps {
            let Increments { dv, de, dw } = sampler.sample(dt, &mut rng);
            rec.dv.push(dv);
            rec.dy.push(de);
            rec.dw.push(dw);
        }
        Ok(rec)
    }
}

/// Runs a linear filter over a reference-measure record.
pub fn run_linear(
    model: &SystemModel,
    initial: &FieldState,
    record: &TrajectoryRecord,
    observables: &[Observable],
    record_every: usize,
) -> Result<Vec<Sample>> {
    let t = record.steps() as f64 * record.dt;
    let mut run = FilterRun::new(model, FilterMode::Linear, record.dt, t, initial.clone())?;
    run.record(observables)?;
    for (k, dv) in record.dv.iter().enumerate() {
        run.step_linear(dv)?;
        if (k + 1) % record_every.max(1) == 0 {
            run.record(observables)?;
        }
    }
    Ok(run.history)
}

/// Runs a normalized filter over a record of observed increments.
pub fn run_normalized(
    model: &SystemModel,
    initial: &FieldState,
    dt: f64,
    dy: &[Vec<f64>],
    observables: &[Observable],
    record_every: usize,
) -> Result<Vec<Sample>> {
    let t = dy.len() as f64 * dt;
    let mut run = FilterRun::new(model, FilterMode::Normalized, dt, t, initial.clone())?;
    run.record(observables)?;
    for (k, d) in dy.iter().enumerate() {
        run.step_normalized(d)?;
        if (k + 1) % record_every.max(1) == 0 {
            run.record(observables)?;
        }
    }
    Ok(run.history)
}

/// Maps `f` over trajectory indices in parallel; results come back in index order.
pub fn ensemble<T, F>(trajectories: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..trajectories as u64).into_par_iter().map(f).collect()
}

/// Piecewise-constant exponent `beta(t)` for the moment-generating check.
#[derive(Clone, Debug, PartialEq)]
pub struct BetaSchedule {
    /// `(start time, beta vector)`, sorted by start time, first start 0.
    pieces: Vec<(f64, Vec<f64>)>,
}

impl BetaSchedule {
    pub fn new(mut pieces: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::InvalidArgument("beta schedule is empty".into()));
        }
        pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pieces[0].0 != 0.0 {
            return Err(Error::InvalidArgument("beta schedule must start at t = 0".into()));
        }
        let n = pieces[0].1.len();
        if pieces.iter().any(|(t, b)| b.len() != n || !t.is_finite() || b.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidArgument("beta pieces must be finite with equal lengths".into()));
        }
        Ok(Self { pieces })
    }

    pub fn constant(beta: Vec<f64>) -> Self {
        Self { pieces: vec![(0.0, beta)] }
    }

    pub fn channels(&self) -> usize {
        self.pieces[0].1.len()
    }

    pub fn at(&self, t: f64) -> &[f64] {
        let k = self.pieces.partition_point(|(s, _)| *s <= t).max(1) - 1;
        &self.pieces[k].1
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        self.pieces.iter().map(|(t, _)| *t).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct MgfReport {
    pub mc_estimate: f64,
    pub stderr: f64,
    pub ode_solution: f64,
    pub trajectories: usize,
}

impl MgfReport {
    /// `|mc - ode|` in units of the standard error.
    pub fn z_score(&self) -> f64 {
        (self.mc_estimate - self.ode_solution).abs() / self.stderr
    }
}

/// Compares the exponential-martingale weighted linear-filter functional with
/// the backward Heisenberg ODE
/// `-dY/ds = Lambda^*[Y] + sum_j beta_j (L_j^dag Y + Y L_j)`, `Y(T) = X`.
#[allow(clippy::too_many_arguments)]
pub fn mgf_check(
    model: &SystemModel,
    x: &FieldState,
    beta: &BetaSchedule,
    initial: &FieldState,
    trajectories: usize,
    dt: f64,
    t_final: f64,
    seed: u64,
) -> Result<MgfReport> {
    if trajectories < 100 {
        return Err(Error::InvalidArgument(format!("mgf check needs at least 100 trajectories, got {trajectories}")));
    }
    let n = model.noise().observed();
    if beta.channels() != n {
        return Err(Error::DimensionMismatch { left: beta.channels(), right: n });
    }
    let steps = (t_final / dt).round() as usize;
    let sampler = model.noise().sampler()?;
    let cov = model.noise().observed_kappa();
    let samples = ensemble(trajectories, |k| {
        let prov = SeedProvenance { seed, trajectory: k };
        let mut rng = prov.stream();
        let mut run = FilterRun::new(model, FilterMode::Linear, dt, steps as f64 * dt, initial.clone())?;
        let mut log_z = 0.0;
        for s in 0..steps {
            let b = DVector::from_column_slice(beta.at(s as f64 * dt));
            let inc = sampler.sample(dt, &mut rng);
            let de = DVector::from_column_slice(&inc.de);
            log_z += b.dot(&de) - 0.5 * b.dot(&(&cov * &b)) * dt;
            run.step_linear(&inc.dv)?;
        }
        let pair = run.state.pairing(x).re;
        Ok(pair * (log_z + run.log_scale).exp())
    })?;
    let (mean, stderr) = crate::stats::mean_stderr(&samples);
    let ode = mgf_ode(model, x, beta, initial, t_final, steps.max(1))?;
    Ok(MgfReport { mc_estimate: mean, stderr, ode_solution: ode, trajectories })
}

/// RK4 solution of the backward moment-generating ODE paired with `initial`.
pub fn mgf_ode(
    model: &SystemModel,
    x: &FieldState,
    beta: &BetaSchedule,
    initial: &FieldState,
    t_final: f64,
    steps: usize,
) -> Result<f64> {
    let n = model.noise().observed();
    let rhs = |y: &FieldState, b: &[f64], out: &mut FieldState| {
        model.apply_heisenberg_into(y, out);
        for (yi, oi) in y.phi().iter().zip(out.phi_mut().iter_mut()) {
            for j in 0..n {
                if b[j] != 0.0 {
                    model.measurement_adjoint_add(j, c(b[j], 0.0), yi, oi);
                }
            }
        }
    };
    // integrate in reversed time tau = T - s, splitting at beta breakpoints
    let mut cuts: Vec<f64> = beta.breakpoints().into_iter().filter(|&t| t > 0.0 && t < t_final).collect();
    cuts.push(t_final);
    cuts.insert(0, 0.0);
    let h_target = t_final / steps as f64;
    let mut y = x.clone();
    for w in cuts.windows(2).rev() {
        let (s0, s1) = (w[0], w[1]);
        let b = beta.at(0.5 * (s0 + s1)).to_vec();
        let m = ((s1 - s0) / h_target).ceil().max(1.0) as usize;
        let h = (s1 - s0) / m as f64;
        for _ in 0..m {
            y = rk4_step(&y, h, |a, o| rhs(a, &b, o));
        }
    }
    Ok(initial.pairing(&y).re)
}

/// Classical RK4 step for `dy/dt = f(y)` on fields.
pub fn rk4_step(y: &FieldState, h: f64, f: impl Fn(&FieldState, &mut FieldState)) -> FieldState {
    let mut k1 = y.clone();
    let mut k2 = y.clone();
    let mut k3 = y.clone();
    let mut k4 = y.clone();
    f(y, &mut k1);
    let mut tmp = y.clone();
    tmp.axpy_real(0.5 * h, &k1);
    f(&tmp, &mut k2);
    let mut tmp = y.clone();
    tmp.axpy_real(0.5 * h, &k2);
    f(&tmp, &mut k3);
    let mut tmp = y.clone();
    tmp.axpy_real(h, &k3);
    f(&tmp, &mut k4);
    let mut out = y.clone();
    out.axpy_real(h / 6.0, &k1);
    out.axpy_real(h / 3.0, &k2);
    out.axpy_real(h / 3.0, &k3);
    out.axpy_real(h / 6.0, &k4);
    out
}

/// Deterministic mean dynamics `d phi / dt = Lambda[phi]` by RK4.
pub fn integrate_mean(model: &SystemModel, initial: &FieldState, t_final: f64, steps: usize) -> FieldState {
    let h = t_final / steps as f64;
    let mut y = initial.clone();
    for _ in 0..steps {
        y = rk4_step(&y, h, |a, o| model.apply_generator_into(a, o));
    }
    y
}
