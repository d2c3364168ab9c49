//! Assembles the model described by a [`RunConfig`] and runs one experiment mode.

use qfilter_core::dilation::{check_nondemolition, run_exact_conditioning, ChainModel, MAX_CHAIN_DIM};
use qfilter_core::filter::{mgf_check, run_linear, run_normalized, BetaSchedule, Sample};
use qfilter_core::kalman::{kalman_step, stationary_riccati};
use qfilter_core::stats::{mean_stderr, product_mean_stderr};
use qfilter_core::truth::{gaussian_path, quantum_path};
use qfilter_core::{
    build_oscillator, Coupling, DensityOperator, Drift, Error, FieldState, FilterMode, FilterRun, Grid,
    IncrementLabel, ItoTable, KalmanParams, KalmanState, NoiseSpec, Observable, Operator, SeedProvenance,
    SignalModel, SystemModel, TrajectoryRecord, C64,
};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{ConfigError, CouplingKind, Mode, RecordSource, RunConfig, SignalCoupling, SystemKind};
use crate::output::Table;
use crate::RunError;

pub struct Assembly {
    pub model: SystemModel,
    pub rho0: Operator,
    pub init: FieldState,
    /// Operator the signal couples to.
    pub coordinate: Operator,
    pub momentum: Option<Operator>,
}

/// Result of one mode: an optional time series, the summary and the
/// trajectories that failed.
pub struct ModeOutput {
    pub table: Option<Table>,
    pub summary: Value,
    pub failures: Vec<(u64, Error)>,
}

fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Second-order finite differences, one-sided at the ends.
fn derivative(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| match i {
            0 => (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h),
            _ if i == n - 1 => (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h),
            _ => (v[i + 1] - v[i - 1]) / (2.0 * h),
        })
        .collect()
}

pub fn assemble(cfg: &RunConfig) -> qfilter_core::Result<Assembly> {
    let (h, q, p, lower, rho0) = match cfg.system_kind {
        SystemKind::Oscillator => {
            let osc = build_oscillator(cfg.dim, cfg.hbar, cfg.omega)?;
            let mut psi = vec![C64::default(); cfg.dim];
            psi[0] = real(1.0);
            let rho = DensityOperator::pure(&psi)?.into_operator();
            (osc.h, osc.q, Some(osc.p), osc.ladder, rho)
        }
        SystemKind::Qubit => {
            let e = 0.5 * cfg.hbar * cfg.omega;
            let h = Operator::from_real_diagonal(&[-e, e]);
            let lower = Operator::unit(2, 0, 1);
            let sx = &lower + &lower.dagger();
            let plus = DensityOperator::pure(&[real(1.0), real(1.0)])?.into_operator();
            (h, sx, None, lower, plus)
        }
    };
    let l = cfg
        .coupling
        .iter()
        .zip(&cfg.coupling_scale)
        .map(|(k, &s)| match k {
            CouplingKind::Position => q.scale_real(s),
            CouplingKind::Lowering => lower.scale_real(s),
        })
        .collect();
    let m = cfg.channels();
    let noise = NoiseSpec::new(Operator::from_rows(m, &cfg.kappa)?, cfg.observed)?;
    let model = if cfg.has_signal() {
        let grid = Grid::new(cfg.grid_min, cfg.grid_max, cfg.grid_points)?;
        let coupling = match &cfg.f {
            SignalCoupling::None => Coupling::None,
            SignalCoupling::Identity => Coupling::Identity,
            SignalCoupling::Table(f) => {
                let df = derivative(f, grid.spacing());
                let d2f = derivative(&df, grid.spacing());
                Coupling::Table { f: f.clone(), df, d2f }
            }
        };
        let signal = SignalModel::new(grid, Drift::Linear(cfg.upsilon), cfg.sigma, coupling)?;
        SystemModel::new(cfg.hbar, h, q.clone(), l, noise, signal)?
    } else {
        SystemModel::without_signal(cfg.hbar, h, l, noise)?
    };
    let init = if cfg.has_signal() {
        let prior = model.signal().gaussian_prior(cfg.prior_mean, cfg.prior_var)?;
        FieldState::product(model.signal(), &prior, &rho0)?
    } else {
        FieldState::uniform(model.signal(), &rho0)?
    };
    Ok(Assembly { model, rho0, init, coordinate: q, momentum: p })
}

/// Derived noise quantities echoed into the manifest.
pub fn derived(cfg: &RunConfig, a: &Assembly) -> Value {
    let noise = a.model.noise();
    let mat = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
    };
    let sigma_gamma_sq = (noise.channels() == 1).then(|| cfg.hbar * cfg.hbar / (4.0 * cfg.kappa[0].re));
    json!({
        "channels": noise.channels(),
        "observed": noise.observed(),
        "gamma": mat(noise.gamma()),
        "theta": mat(noise.theta()),
        "gamma_residual": noise.gamma_residual(),
        "theta_residual": noise.theta_residual(),
        "sigma_gamma_sq": sigma_gamma_sq,
        "grid_points": a.model.points(),
        "system_dim": a.model.dim(),
    })
}

fn pool(cfg: &RunConfig) -> Result<rayon::ThreadPool, RunError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| RunError::Io(format!("worker pool: {e}")))
}

/// Runs `f` for every trajectory; results come back in index order.
fn fan_out<T: Send>(
    cfg: &RunConfig,
    f: impl Fn(u64) -> qfilter_core::Result<T> + Sync + Send,
) -> Result<Vec<qfilter_core::Result<T>>, RunError> {
    let n = cfg.trajectories as u64;
    Ok(pool(cfg)?.install(|| (0..n).into_par_iter().map(f).collect()))
}

fn split<T>(results: Vec<qfilter_core::Result<T>>) -> (Vec<(u64, T)>, Vec<(u64, Error)>) {
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push((k as u64, v)),
            Err(e) => bad.push((k as u64, e)),
        }
    }
    (ok, bad)
}

fn stat(x: &[f64]) -> Value {
    let (m, se) = mean_stderr(x);
    json!({ "mean": m, "stderr": se, "n": x.len() })
}

fn observables(a: &Assembly) -> (Vec<Observable>, Vec<String>) {
    let mut obs = Vec::new();
    let mut names = Vec::new();
    if !a.model.signal().is_inert() {
        obs.push(Observable::Signal);
        names.push("theta_mean".to_string());
    }
    for j in 0..a.model.noise().observed() {
        obs.push(Observable::System(a.model.observed_quadrature(j)));
        names.push(format!("y{}_mean", j + 1));
    }
    (obs, names)
}

fn sample_row(k: u64, s: &Sample) -> Vec<f64> {
    let mut row = vec![k as f64, s.time, s.log_weight];
    row.extend(&s.means);
    row.push(s.leakage);
    row.push(s.min_eigenvalue);
    row
}

fn series_header(names: &[String], extra: &[&str]) -> Vec<String> {
    let mut h: Vec<String> = ["trajectory", "t", "log_weight"].iter().map(|s| s.to_string()).collect();
    h.extend(names.iter().cloned());
    h.push("leakage".into());
    h.push("min_eigenvalue".into());
    h.extend(extra.iter().map(|s| s.to_string()));
    h
}

fn final_means(runs: &[(u64, Vec<Sample>)], names: &[String]) -> Value {
    let mut out = serde_json::Map::new();
    for (c, name) in names.iter().enumerate() {
        let x: Vec<f64> = runs.iter().filter_map(|(_, h)| h.last()).map(|s| s.means[c]).collect();
        out.insert(name.clone(), stat(&x));
    }
    Value::Object(out)
}

pub fn run_mode(cfg: &RunConfig, a: &Assembly) -> Result<ModeOutput, RunError> {
    match cfg.mode {
        Mode::Linear => linear(cfg, a),
        Mode::Normalized => normalized(cfg, a),
        Mode::Kalman => kalman(cfg),
        Mode::Compare => compare(cfg, a),
        Mode::Dilation => dilation(cfg, a),
        Mode::MgfCheck => mgf(cfg, a),
        Mode::NoiseSelftest => noise_selftest(cfg, a),
    }
}

fn linear(cfg: &RunConfig, a: &Assembly) -> Result<ModeOutput, RunError> {
    let (obs, names) = observables(a);
    let steps = cfg.steps();
    let results = fan_out(cfg, |k| {
        let prov = SeedProvenance { seed: cfg.seed, trajectory: k };
        let rec = TrajectoryRecord::reference(&a.model, cfg.dt, steps, prov)?;
        run_linear(&a.model, &a.init, &rec, &obs, cfg.record_every)
    })?;
    let (runs, failures) = split(results);
    let mut table = Table::new(series_header(&names, &[]));
    for (k, hist) in &runs {
        for s in hist {
            table.push(sample_row(*k, s));
        }
    }
    let weights: Vec<f64> = runs.iter().filter_map(|(_, h)| h.last()).map(|s| s.log_weight.exp()).collect();
    let summary = json!({
        "final_weight": stat(&weights),
        "final_means": final_means(&runs, &names),
    });
    Ok(ModeOutput { table: Some(table), summary, failures })
}

fn normalized(cfg: &RunConfig, a: &Assembly) -> Result<ModeOutput, RunError> {
    let (obs, names) = observables(a);
    let steps = cfg.steps();
    let with_truth = cfg.source == RecordSource::Model && !a.model.signal().is_inert();
    let results = fan_out(cfg, |k| {
        let prov = SeedProvenance { seed: cfg.seed, trajectory: k };
        let (dy, theta) = match cfg.source {
            RecordSource::Reference => (TrajectoryRecord::reference(&a.model, cfg.dt, steps, prov)?.dy, None),
            RecordSource::Model => {
                let mut rng = prov.stream();
                let theta0 = if a.model.signal().is_inert() {
                    0.0
                } else {
                    cfg.prior_mean + cfg.prior_var.sqrt() * rng.sample::<f64, _>(StandardNormal)
                };
                let path = quantum_path(&a.model, &a.rho0, theta0, cfg.dt, steps, &mut rng)?;
                (path.dy, Some(path.theta))
            }
        };
        let hist = run_normalized(&a.model, &a.init, cfg.dt, &dy, &obs, cfg.record_every)?;
        Ok((hist, theta))
    })?;
    let (runs, failures) = split(results);
    let extra: &[&str] = if with_truth { &["theta_true"] } else { &[] };
    let mut table = Table::new(series_header(&names, extra));
    let mut sq_err = Vec::new();
    for (k, (hist, theta)) in &runs {
        for (i, s) in hist.iter().enumerate() {
            let mut row = sample_row(*k, s);
            if let (true, Some(th)) = (with_truth, theta) {
                row.push(th[i * cfg.record_every]);
            }
            table.push(row);
        }
        if let (true, Some(th), Some(last)) = (with_truth, theta, hist.last()) {
            sq_err.push((last.means[0] - th[th.len() - 1]).powi(2));
        }
    }
    let hists: Vec<(u64, Vec<Sample>)> = runs.iter().map(|(k, (h, _))| (*k, h.clone())).collect();
    let mut summary = json!({ "final_means": final_means(&hists, &names) });
    if with_truth {
        summary["final_theta_mse"] = stat(&sq_err);
    }
    Ok(ModeOutput { table: Some(table), summary, failures })
}

/// Kalman parameters for the linear-Gaussian oscillator; other systems are rejected.
pub fn kalman_params(cfg: &RunConfig) -> Result<KalmanParams, RunError> {
    let ok = cfg.system_kind == SystemKind::Oscillator
        && cfg.channels() == 1
        && cfg.coupling[0] == CouplingKind::Position
        && cfg.coupling_scale[0] == 0.5
        && cfg.f == SignalCoupling::Identity
        && cfg.kappa[0].im == 0.0;
    if !ok {
        return Err(RunError::Config(ConfigError::Inconsistent(
            "kalman and compare modes need an oscillator with one channel, \
             system.coupling = position, system.coupling_scale = 0.5, real noise.kappa and signal.f = identity"
                .into(),
        )));
    }
    let p = KalmanParams::new(cfg.omega, cfg.upsilon, cfg.sigma, cfg.kappa[0].re, cfg.hbar)?;
    Ok(p.with_printed_drift(cfg.printed_drift))
}

fn cov_row(s: &KalmanState) -> [f64; 6] {
    let c = &s.cov;
    [c[(0, 0)], c[(0, 1)], c[(0, 2)], c[(1, 1)], c[(1, 2)], c[(2, 2)]]
}

fn kalman(cfg: &RunConfig) -> Result<ModeOutput, RunError> {
    let params = kalman_params(cfg)?;
    let steps = cfg.steps();
    let results = fan_out(cfg, |k| {
        let mut rng = SeedProvenance { seed: cfg.seed, trajectory: k }.stream();
        let path = gaussian_path(&params, cfg.prior_mean, cfg.prior_var, cfg.dt, steps, &mut rng);
        let mut s = KalmanState::ground(&params, cfg.prior_mean, cfg.prior_var);
        let mut rows = Vec::new();
        for i in 0..=steps {
            if i > 0 {
                s = kalman_step(&s, path.dy[i - 1], cfg.dt, &params);
            }
            if i % cfg.record_every == 0 || i == steps {
                let mut row = vec![k as f64, i as f64 * cfg.dt, s.mean[0], s.mean[1], s.mean[2]];
                row.extend(cov_row(&s));
                row.push(path.states[i][2]);
                rows.push(row);
            }
        }
        Ok((rows, (s.mean[2] - path.states[steps][2]).powi(2), s.cov[(2, 2)]))
    })?;
    let (runs, failures) = split(results);
    let mut table = Table::new([
        "trajectory", "t", "q_mean", "p_mean", "theta_mean", "k11", "k12", "k13", "k22", "k23", "k33", "theta_true",
    ]);
    for (_, (rows, _, _)) in &runs {
        for r in rows {
            table.push(r.clone());
        }
    }
    let err: Vec<f64> = runs.iter().map(|(_, r)| r.1).collect();
    let k33 = runs.first().map(|(_, r)| r.2).unwrap_or(f64::NAN);
    let (mse, se) = mean_stderr(&err);
    let kinf = stationary_riccati(&params, 1e4)?;
    let summary = json!({
        "final_k33": k33,
        "final_theta_mse": stat(&err),
        "mse_z_score": (mse - k33).abs() / se,
        "stationary_k": (0..3).map(|i| (0..3).map(|j| kinf[(i, j)]).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "printed_drift": cfg.printed_drift,
    });
    Ok(ModeOutput { table: Some(table), summary, failures })
}

fn compare(cfg: &RunConfig, a: &Assembly) -> Result<ModeOutput, RunError> {
    let params = kalman_params(cfg)?;
    let steps = cfg.steps();
    let q_obs = Observable::System(a.coordinate.clone());
    let p_obs = a.momentum.clone().map(Observable::System);
    struct Traj {
        rows: Vec<Vec<f64>>,
        gap2: f64,
        k33_sum: f64,
        err_grid: f64,
        err_kalman: f64,
        leak: f64,
    }
    let results = fan_out(cfg, |k| {
        let mut rng = SeedProvenance { seed: cfg.seed, trajectory: k }.stream();
        let path = gaussian_path(&params, cfg.prior_mean, cfg.prior_var, cfg.dt, steps, &mut rng);
        let mut run = FilterRun::new(&a.model, FilterMode::Normalized, cfg.dt, cfg.t_final, a.init.clone())?;
        let mut s = KalmanState::ground(&params, cfg.prior_mean, cfg.prior_var);
        let mut t = Traj { rows: Vec::new(), gap2: 0.0, k33_sum: 0.0, err_grid: 0.0, err_kalman: 0.0, leak: 0.0 };
        for i in 0..=steps {
            if i > 0 {
                run.step_normalized(&[path.dy[i - 1]])?;
                s = kalman_step(&s, path.dy[i - 1], cfg.dt, &params);
            }
            let th = run.posterior_mean(&Observable::Signal)?;
            t.gap2 += (th - s.mean[2]).powi(2);
            t.k33_sum += s.cov[(2, 2)];
            if i % cfg.record_every == 0 || i == steps {
                let qg = run.posterior_mean(&q_obs)?;
                let pg = match &p_obs {
                    Some(o) => run.posterior_mean(o)?,
                    None => f64::NAN,
                };
                let leak = run.leakage();
                t.leak = t.leak.max(leak);
                t.rows.push(vec![
                    k as f64,
                    i as f64 * cfg.dt,
                    th,
                    s.mean[2],
                    qg,
                    s.mean[0],
                    pg,
                    s.mean[1],
                    s.cov[(2, 2)],
                    path.states[i][2],
                    leak,
                ]);
            }
            if i == steps {
                t.err_grid = (th - path.states[i][2]).powi(2);
                t.err_kalman = (s.mean[2] - path.states[i][2]).powi(2);
            }
        }
        Ok((t, s.cov[(2, 2)]))
    })?;
    let (runs, failures) = split(results);
    let mut table = Table::new([
        "trajectory",
        "t",
        "theta_grid",
        "theta_kalman",
        "q_grid",
        "q_kalman",
        "p_grid",
        "p_kalman",
        "k33",
        "theta_true",
        "leakage",
    ]);
    for (_, (t, _)) in &runs {
        for r in &t.rows {
            table.push(r.clone());
        }
    }
    let gap2: f64 = runs.iter().map(|(_, (t, _))| t.gap2).sum();
    let k33_sum: f64 = runs.iter().map(|(_, (t, _))| t.k33_sum).sum();
    let k33 = runs.first().map(|(_, r)| r.1).unwrap_or(f64::NAN);
    let eg: Vec<f64> = runs.iter().map(|(_, (t, _))| t.err_grid).collect();
    let ek: Vec<f64> = runs.iter().map(|(_, (t, _))| t.err_kalman).collect();
    let z = |e: &[f64]| {
        let (m, se) = mean_stderr(e);
        (m - k33).abs() / se
    };
    let summary = json!({
        "rms_theta_gap_over_sqrt_k33": (gap2 / k33_sum).sqrt(),
        "final_k33": k33,
        "final_theta_mse_grid": stat(&eg),
        "final_theta_mse_kalman": stat(&ek),
        "mse_z_score_grid": z(&eg),
        "mse_z_score_kalman": z(&ek),
        "max_leakage": runs.iter().map(|(_, (t, _))| t.leak).fold(0.0, f64::max),
    });
    Ok(ModeOutput { table: Some(table), summary, failures })
}

fn dilation(cfg: &RunConfig, a: &Assembly) -> Result<ModeOutput, RunError> {
    let chain = ChainModel::new(&a.model, cfg.dt, cfg.ancilla_dim, cfg.dilation_steps)?;
    let steps = cfg.steps();
    let quad = a.model.observed_quadrature(0);
    let results = fan_out(cfg, |k| {
        let mut rng = SeedProvenance { seed: cfg.seed, trajectory: k }.stream();
        let exact = run_exact_conditioning(&chain, &a.rho0, steps, &mut rng)?;
        let mut run = FilterRun::new(&a.model, FilterMode::Normalized, cfg.dt, cfg.t_final, a.init.clone())?;
        let mut rows = Vec::with_capacity(steps);
        let mut worst: f64 = 0.0;
        for (i, e) in exact.iter().enumerate() {
            run.step_normalized(&[e.dy])?;
            let approx = run.state().reduced();
            let gap = (&e.posterior - &approx).trace_norm();
            worst = worst.max(gap);
            if (i + 1) % cfg.record_every == 0 || i + 1 == steps {
                rows.push(vec![
                    k as f64,
                    (i + 1) as f64 * cfg.dt,
                    e.dy,
                    e.probability,
                    quad.pair(&e.posterior).re,
                    quad.pair(&approx).re,
                    gap,
                ]);
            }
        }
        Ok((rows, worst))
    })?;
    let (runs, failures) = split(results);
    let mut table = Table::new(["trajectory", "t", "dy", "probability", "exact_y1", "filter_y1", "trace_gap"]);
    for (_, (rows, _)) in &runs {
        for r in rows {
            table.push(r.clone());
        }
    }
    let worst: Vec<f64> = runs.iter().map(|(_, r)| r.1).collect();
    let n = chain.steps();
    let nondemolition = if chain.chain_dim().is_some_and(|d| d <= MAX_CHAIN_DIM) {
        let (mut causal, mut acausal): (f64, f64) = (0.0, f64::INFINITY);
        for s in 1..=n {
            for t in 1..=n {
                let v = check_nondemolition(&chain, s, t)?;
                if s <= t {
                    causal = causal.max(v);
                } else {
                    acausal = acausal.min(v);
                }
            }
        }
        json!({ "max_causal": causal, "min_acausal": if n > 1 { Value::from(acausal) } else { Value::Null } })
    } else {
        Value::Null
    };
    let summary = json!({
        "kraus_completeness": chain.kraus_completeness(),
        "sup_trace_gap": stat(&worst),
        "nondemolition": nondemolition,
        "chain_steps": n,
    });
    Ok(ModeOutput { table: Some(table), summary, failures })
}

fn mgf(cfg: &RunConfig, a: &Assembly) -> Result<ModeOutput, RunError> {
    let x = FieldState::new(vec![a.model.observed_quadrature(0); a.model.points()], a.model.signal())?;
    let beta = BetaSchedule::constant(cfg.beta.clone());
    let r = pool(cfg)?.install(|| mgf_check(&a.model, &x, &beta, &a.init, cfg.trajectories, cfg.dt, cfg.t_final, cfg.seed))?;
    let summary = json!({
        "observable": "y1 quadrature",
        "beta": cfg.beta,
        "mc_estimate": r.mc_estimate,
        "stderr": r.stderr,
        "ode_solution": r.ode_solution,
        "z_score": r.z_score(),
        "trajectories": r.trajectories,
    });
    Ok(ModeOutput { table: None, summary, failures: Vec::new() })
}

/// Sampled second moments of the increments against the multiplication table.
fn noise_selftest(cfg: &RunConfig, a: &Assembly) -> Result<ModeOutput, RunError> {
    const SAMPLES: usize = 100_000;
    let spec = a.model.noise();
    let table = ItoTable::new(spec, cfg.hbar, 1.0);
    let sampler = spec.sampler()?;
    let n = spec.observed();
    let mut labels = Vec::new();
    for j in 1..=n {
        labels.push(IncrementLabel::Dv(j));
        labels.push(IncrementLabel::De(j));
    }
    labels.push(IncrementLabel::Dw);
    let mut series = vec![Vec::with_capacity(SAMPLES); labels.len()];
    let mut rng = SeedProvenance { seed: cfg.seed, trajectory: 0 }.stream();
    for _ in 0..SAMPLES {
        let inc = sampler.sample(cfg.dt, &mut rng);
        for (l, s) in labels.iter().zip(series.iter_mut()) {
            s.push(match l {
                IncrementLabel::Dv(j) => inc.dv[j - 1],
                IncrementLabel::De(j) => inc.de[j - 1],
                _ => inc.dw,
            });
        }
    }
    let mut entries = Vec::new();
    let mut worst: f64 = 0.0;
    for i in 0..labels.len() {
        for j in i..labels.len() {
            let want = table.product(labels[i], labels[j])?.re * cfg.dt;
            let (m, se) = product_mean_stderr(&series[i], &series[j]);
            let z = (m - want).abs() / se;
            worst = worst.max(z);
            entries.push(json!({
                "pair": format!("{} {}", labels[i], labels[j]),
                "table": want,
                "sampled": m,
                "stderr": se,
                "z": z,
            }));
        }
    }
    let (g, t) = (spec.gamma_residual(), spec.theta_residual());
    let summary = json!({
        "gamma_residual": g,
        "theta_residual": t,
        "residuals_ok": g <= 1e-10 && t <= 1e-10,
        "samples": SAMPLES,
        "worst_z": worst,
        "moments": entries,
    });
    Ok(ModeOutput { table: None, summary, failures: Vec::new() })
}
