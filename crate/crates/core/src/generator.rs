//! Reduced generator on operator-valued functions of the signal.
//!
//! A field is a list of operators `phi_i = phi(theta_i)` on the signal grid.
//! The predual generator is assembled as
//!
//! ```text
//! Lambda[phi] = delta(upsilon phi) + (i/hbar)[phi, H] + (sigma^2 delta^2 phi + Lambda_1[phi]) / 2
//! delta phi   = phi' + f' [phi, K],   K = (i/hbar) Q
//! delta^2     = delta o delta
//!             = phi'' + 2 f' [phi', K] + f'' [phi, K] + f'^2 [[phi, K], K]
//! ```
//!
//! The trace-carrying part `(upsilon phi)' + sigma^2 phi'' / 2` is discretized
//! in conservative finite-volume form with zero flux through both ends, so the
//! total weight `sum_i w_i Tr phi_i` is conserved exactly; every other term is
//! a commutator or traceless. The Heisenberg generator is the exact transpose
//! under the pairing `<X, phi> = sum_i w_i Tr(X_i phi_i)`.

use crate::error::{Error, Result};
use crate::noise::NoiseSpec;
use crate::operator::{c, Operator, SparseOperator, C64, I};
use crate::signal::SignalModel;

/// Difference operator stored by rows: `(D u)_i = sum_(j, a) a * u_j`.
type Stencil = Vec<Vec<(usize, f64)>>;

#[derive(Clone, Debug)]
pub struct SystemModel {
    hbar: f64,
    h: Operator,
    q: Operator,
    l: Vec<Operator>,
    noise: NoiseSpec,
    signal: SignalModel,
    k: Kernels,
}

#[derive(Clone, Debug)]
struct Kernels {
    q: SparseOperator,
    h: SparseOperator,
    l: Vec<SparseOperator>,
    l_dag: Vec<SparseOperator>,
    jumps: Vec<(SparseOperator, SparseOperator)>,
    g: SparseOperator,
    /// sum of `|c|^2` over jumps `J = c Q`, applied as `-|c|^2 [[phi, Q], Q] / 2`
    fold: f64,
    transport: Stencil,
    d1: Stencil,
    d2: Stencil,
    /// coefficient of `[phi, K]`: `f' upsilon + sigma^2 f'' / 2`
    single: Vec<f64>,
    /// coefficient of `[[phi, K], K]`: `sigma^2 f'^2 / 2`
    double: Vec<f64>,
    /// coefficient of `[phi', K]`: `sigma^2 f'`
    cross: Vec<f64>,
}

impl SystemModel {
    /// `h`: Hamiltonian, `q`: coordinate the signal couples to, `l`: one
    /// coupling operator per noise channel (observed channels first).
    pub fn new(
        hbar: f64,
        h: Operator,
        q: Operator,
        l: Vec<Operator>,
        noise: NoiseSpec,
        signal: SignalModel,
    ) -> Result<Self> {
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::Domain(format!("hbar must be positive, got {hbar}")));
        }
        let d = h.dim();
        if q.dim() != d {
            return Err(Error::DimensionMismatch { left: q.dim(), right: d });
        }
        if l.len() != noise.channels() {
            return Err(Error::DimensionMismatch { left: l.len(), right: noise.channels() });
        }
        for op in &l {
            if op.dim() != d {
                return Err(Error::DimensionMismatch { left: op.dim(), right: d });
            }
        }
        if !h.is_hermitian() {
            return Err(Error::Domain("Hamiltonian is not Hermitian".into()));
        }
        if !q.is_hermitian() {
            return Err(Error::Domain("coupling coordinate is not Hermitian".into()));
        }
        let k = Kernels::build(&h, &q, &l, &noise, &signal)?;
        Ok(Self { hbar, h, q, l, noise, signal, k })
    }

    /// Open system without a classical signal.
    pub fn without_signal(hbar: f64, h: Operator, l: Vec<Operator>, noise: NoiseSpec) -> Result<Self> {
        let d = h.dim();
        Self::new(hbar, h, Operator::zeros(d), l, noise, SignalModel::inert())
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.h
    }

    pub fn coupling_coordinate(&self) -> &Operator {
        &self.q
    }

    pub fn couplings(&self) -> &[Operator] {
        &self.l
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn signal(&self) -> &SignalModel {
        &self.signal
    }

    pub fn points(&self) -> usize {
        self.signal.grid().points()
    }

    /// Observed quadrature `Q_j = L_j + L_j^dag`.
    pub fn observed_quadrature(&self, j: usize) -> Operator {
        &self.l[j] + &self.l[j].dagger()
    }

    /// `out += s (L_j x + x L_j^dag)`
    pub(crate) fn measurement_add(&self, j: usize, s: C64, x: &Operator, out: &mut Operator) {
        self.k.l[j].left_mul_add(s, x, out);
        self.k.l_dag[j].right_mul_add(s, x, out);
    }

    /// `out += s (L_j^dag x + x L_j)`
    pub(crate) fn measurement_adjoint_add(&self, j: usize, s: C64, x: &Operator, out: &mut Operator) {
        self.k.l_dag[j].left_mul_add(s, x, out);
        self.k.l[j].right_mul_add(s, x, out);
    }

    /// `out += s * Lambda_1[x] / 2`
    /// `with_fold` adds the jumps proportional to `Q`, which the generator
    /// merges into its own commutators.
    fn dissipator_add(&self, s: f64, with_fold: bool, x: &Operator, tmp: &mut Operator, out: &mut Operator) {
        let one = c(s, 0.0);
        if with_fold && self.k.fold != 0.0 {
            zero(tmp);
            self.k.q.commutator_add(one, x, tmp);
            self.k.q.commutator_add(c(-0.5 * self.k.fold, 0.0), tmp, out);
        }
        for (j, jd) in &self.k.jumps {
            zero(tmp);
            j.left_mul_add(one, x, tmp);
            jd.right_mul_add(c(1.0, 0.0), tmp, out);
        }
        self.k.g.left_mul_add(c(-0.5 * s, 0.0), x, out);
        self.k.g.right_mul_add(c(-0.5 * s, 0.0), x, out);
    }

    /// `out += s * Lambda_1^*[x] / 2`
    /// `with_fold` adds the jumps proportional to `Q`, which the generator
    /// merges into its own commutators.
    fn dissipator_adjoint_add(&self, s: f64, with_fold: bool, x: &Operator, tmp: &mut Operator, out: &mut Operator) {
        let one = c(s, 0.0);
        if with_fold && self.k.fold != 0.0 {
            zero(tmp);
            self.k.q.commutator_add(one, x, tmp);
            self.k.q.commutator_add(c(-0.5 * self.k.fold, 0.0), tmp, out);
        }
        for (j, jd) in &self.k.jumps {
            zero(tmp);
            jd.left_mul_add(one, x, tmp);
            j.right_mul_add(c(1.0, 0.0), tmp, out);
        }
        self.k.g.left_mul_add(c(-0.5 * s, 0.0), x, out);
        self.k.g.right_mul_add(c(-0.5 * s, 0.0), x, out);
    }

    /// Writes `Lambda[phi]` into `out`.
    pub fn apply_generator_into(&self, field: &FieldState, out: &mut FieldState) {
        debug_assert_eq!(field.points(), self.points());
        let d = self.dim();
        let kk = &self.k;
        let ik = I * (1.0 / self.hbar);
        let mut tmp = Operator::zeros(d);
        let mut tmp2 = Operator::zeros(d);
        for i in 0..self.points() {
            let o = &mut out.phi[i];
            zero(o);
            for &(j, a) in &kk.transport[i] {
                o.axpy_real(a, &field.phi[j]);
            }
            let x = &field.phi[i];
            // all commutators with Q merged into o += [y, Q]
            let dq = -kk.double[i] / (self.hbar * self.hbar) - 0.5 * kk.fold;
            if kk.cross[i] != 0.0 || kk.single[i] != 0.0 || dq != 0.0 {
                zero(&mut tmp);
                if kk.cross[i] != 0.0 {
                    for &(j, a) in &kk.d1[i] {
                        tmp.axpy(ik * (a * kk.cross[i]), &field.phi[j]);
                    }
                }
                if kk.single[i] != 0.0 {
                    tmp.axpy(ik * kk.single[i], x);
                }
                if dq != 0.0 {
                    kk.q.commutator_add(c(dq, 0.0), x, &mut tmp);
                }
                kk.q.commutator_add(c(1.0, 0.0), &tmp, o);
            }
            kk.h.commutator_add(ik, x, o);
            self.dissipator_add(1.0, false, x, &mut tmp2, o);
        }
    }

    /// Writes `Lambda^*[x]` into `out`.
    pub fn apply_heisenberg_into(&self, field: &FieldState, out: &mut FieldState) {
        let d = self.dim();
        let n = self.points();
        let kk = &self.k;
        let w = self.signal.grid().weights();
        let ik = I * (1.0 / self.hbar);
        let mut tmp = Operator::zeros(d);
        let mut tmp2 = Operator::zeros(d);
        for o in out.phi.iter_mut() {
            zero(o);
        }
        // transposed stencils scatter from row i into column j
        for i in 0..n {
            for &(j, a) in &kk.transport[i] {
                out.phi[j].axpy_real(a * w[i] / w[j], &field.phi[i]);
            }
        }
        if kk.cross.iter().any(|&x| x != 0.0) {
            for i in 0..n {
                if kk.cross[i] == 0.0 {
                    continue;
                }
                // Y_i = sigma^2 f'_i [K, X_i]
                zero(&mut tmp);
                kk.q.commutator_add(-ik * kk.cross[i], &field.phi[i], &mut tmp);
                for &(j, a) in &kk.d1[i] {
                    out.phi[j].axpy_real(a * w[i] / w[j], &tmp);
                }
            }
        }
        for i in 0..n {
            let o = &mut out.phi[i];
            let x = &field.phi[i];
            let dq = -kk.double[i] / (self.hbar * self.hbar) - 0.5 * kk.fold;
            if kk.single[i] != 0.0 || dq != 0.0 {
                zero(&mut tmp);
                if kk.single[i] != 0.0 {
                    tmp.axpy(-ik * kk.single[i], x);
                }
                if dq != 0.0 {
                    kk.q.commutator_add(c(dq, 0.0), x, &mut tmp);
                }
                kk.q.commutator_add(c(1.0, 0.0), &tmp, o);
            }
            kk.h.commutator_add(-ik, x, o);
            self.dissipator_adjoint_add(1.0, false, x, &mut tmp2, o);
        }
    }
}

#[inline]
fn zero(x: &mut Operator) {
    x.matrix_mut().fill(C64::default());
}

impl Kernels {
    fn build(
        h: &Operator,
        q: &Operator,
        l: &[Operator],
        noise: &NoiseSpec,
        signal: &SignalModel,
    ) -> Result<Self> {
        let d = h.dim();
        // kappa^{-1} = V diag(lambda) V^dag, J_r = sqrt(lambda_r) sum_i V_ir L_i
        let (lams, v) = noise.kappa_contra().eigh();
        let mut jumps = Vec::with_capacity(lams.len());
        let mut g = Operator::zeros(d);
        let mut fold = 0.0;
        let qq = q.pair(q).re;
        for (r, &lam) in lams.iter().enumerate() {
            if lam <= 0.0 {
                return Err(Error::Domain("inverse intensity matrix is not positive".into()));
            }
            let mut jr = Operator::zeros(d);
            for (i, li) in l.iter().enumerate() {
                jr.axpy(v[(i, r)] * lam.sqrt(), li);
            }
            if qq > 0.0 {
                let cr = q.pair(&jr) * (1.0 / qq);
                if (&jr - &q.scale(cr)).norm() <= 1e-12 * jr.norm().max(1.0) {
                    fold += cr.norm_sqr();
                    continue;
                }
            }
            let jd = jr.dagger();
            g += &(&jd * &jr);
            jumps.push((SparseOperator::from_operator(&jr), SparseOperator::from_operator(&jd)));
        }
        let grid = signal.grid();
        let n = grid.points();
        let hs = grid.spacing();
        let w = grid.weights();
        let sig2 = signal.sigma() * signal.sigma();
        let diff = 0.5 * sig2 / hs;
        let mut transport: Stencil = vec![Vec::new(); n];
        for (i, &u) in signal.upsilon_faces().iter().enumerate() {
            // flux through face i+1/2 leaves cell i and enters cell i+1
            let (a_l, a_r) = (0.5 * u - diff, 0.5 * u + diff);
            if a_l != 0.0 || a_r != 0.0 {
                transport[i].push((i, a_l / w[i]));
                transport[i].push((i + 1, a_r / w[i]));
                transport[i + 1].push((i, -a_l / w[i + 1]));
                transport[i + 1].push((i + 1, -a_r / w[i + 1]));
            }
        }
        let df = signal.f_prime();
        let d2f = signal.f_double_prime();
        let ups = signal.upsilon_nodes();
        let single = (0..n).map(|i| df[i] * ups[i] + 0.5 * sig2 * d2f[i]).collect();
        let double = (0..n).map(|i| 0.5 * sig2 * df[i] * df[i]).collect();
        let cross = (0..n).map(|i| sig2 * df[i]).collect();
        Ok(Self {
            q: SparseOperator::from_operator(q),
            h: SparseOperator::from_operator(h),
            l: l.iter().map(SparseOperator::from_operator).collect(),
            l_dag: l.iter().map(|x| SparseOperator::from_operator(&x.dagger())).collect(),
            jumps,
            g: SparseOperator::from_operator(&g),
            fold,
            transport,
            d1: first_difference(n, hs),
            d2: second_difference(n, hs),
            single,
            double,
            cross,
        })
    }
}

/// Central differences inside, one-sided second order at both ends.
fn first_difference(n: usize, h: f64) -> Stencil {
    let s = 1.0 / (2.0 * h);
    let mut rows: Stencil = Vec::with_capacity(n);
    rows.push(vec![(0, -3.0 * s), (1, 4.0 * s), (2, -s)]);
    for i in 1..n - 1 {
        rows.push(vec![(i - 1, -s), (i + 1, s)]);
    }
    rows.push(vec![(n - 3, s), (n - 2, -4.0 * s), (n - 1, 3.0 * s)]);
    rows
}

fn second_difference(n: usize, h: f64) -> Stencil {
    let s = 1.0 / (h * h);
    let mut rows: Stencil = Vec::with_capacity(n);
    if n >= 4 {
        rows.push(vec![(0, 2.0 * s), (1, -5.0 * s), (2, 4.0 * s), (3, -s)]);
    } else {
        rows.push(vec![(0, s), (1, -2.0 * s), (2, s)]);
    }
    for i in 1..n - 1 {
        rows.push(vec![(i - 1, s), (i, -2.0 * s), (i + 1, s)]);
    }
    if n >= 4 {
        rows.push(vec![(n - 4, -s), (n - 3, 4.0 * s), (n - 2, -5.0 * s), (n - 1, 2.0 * s)]);
    } else {
        rows.push(vec![(n - 3, s), (n - 2, -2.0 * s), (n - 1, s)]);
    }
    rows
}

/// Operator-valued function on the signal grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldState {
    phi: Vec<Operator>,
    weights: Vec<f64>,
    nodes: Vec<f64>,
}

impl FieldState {
    pub fn new(phi: Vec<Operator>, signal: &SignalModel) -> Result<Self> {
        let n = signal.grid().points();
        if phi.len() != n {
            return Err(Error::DimensionMismatch { left: phi.len(), right: n });
        }
        let d = phi[0].dim();
        for x in &phi {
            if x.dim() != d {
                return Err(Error::DimensionMismatch { left: x.dim(), right: d });
            }
            if !x.is_finite() {
                return Err(Error::Domain("field has non-finite entries".into()));
            }
        }
        Ok(Self { phi, weights: signal.grid().weights().to_vec(), nodes: signal.grid().nodes().to_vec() })
    }

    /// `phi_i = g_i rho` for a density `g` on the grid.
    pub fn product(signal: &SignalModel, density: &[f64], rho: &Operator) -> Result<Self> {
        Self::new(density.iter().map(|&g| rho.scale_real(g)).collect(), signal)
    }

    /// `rho` spread evenly over the grid so that the total weight is `Tr rho`.
    pub fn uniform(signal: &SignalModel, rho: &Operator) -> Result<Self> {
        let total: f64 = signal.grid().weights().iter().sum();
        Self::new(vec![rho.scale_real(1.0 / total); signal.grid().points()], signal)
    }

    pub fn zeros(signal: &SignalModel, dim: usize) -> Self {
        Self {
            phi: vec![Operator::zeros(dim); signal.grid().points()],
            weights: signal.grid().weights().to_vec(),
            nodes: signal.grid().nodes().to_vec(),
        }
    }

    pub fn points(&self) -> usize {
        self.phi.len()
    }

    pub fn dim(&self) -> usize {
        self.phi[0].dim()
    }

    pub fn phi(&self) -> &[Operator] {
        &self.phi
    }

    pub fn phi_mut(&mut self) -> &mut [Operator] {
        &mut self.phi
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Total weight `p = sum_i w_i Re Tr phi_i`.
    pub fn weight(&self) -> f64 {
        self.phi.iter().zip(&self.weights).map(|(x, w)| w * x.trace().re).sum()
    }

    /// `sum_i w_i Tr(X_i phi_i)`
    pub fn pairing(&self, x: &FieldState) -> C64 {
        self.phi.iter().zip(&x.phi).zip(&self.weights).map(|((a, b), w)| b.pair(a) * *w).sum()
    }

    /// Signal-marginalized system operator `sum_i w_i phi_i`.
    pub fn reduced(&self) -> Operator {
        let mut acc = Operator::zeros(self.dim());
        for (x, w) in self.phi.iter().zip(&self.weights) {
            acc.axpy_real(*w, x);
        }
        acc
    }

    /// `Tr phi_i` at each node.
    pub fn marginal(&self) -> Vec<f64> {
        self.phi.iter().map(|x| x.trace().re).collect()
    }

    pub fn symmetrize(&mut self) {
        for x in &mut self.phi {
            x.symmetrize();
        }
    }

    pub fn scale_real(&mut self, s: f64) {
        for x in &mut self.phi {
            *x.matrix_mut() *= c(s, 0.0);
        }
    }

    /// `self += s * other`
    pub fn axpy_real(&mut self, s: f64, other: &FieldState) {
        for (a, b) in self.phi.iter_mut().zip(&other.phi) {
            a.axpy_real(s, b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.phi.iter().all(Operator::is_finite)
    }

    /// Largest pointwise relative Hermiticity defect.
    pub fn hermiticity_defect(&self) -> f64 {
        self.phi.iter().map(Operator::hermiticity_defect).fold(0.0, f64::max)
    }

    /// Largest pointwise Frobenius distance to `other`.
    pub fn max_distance(&self, other: &FieldState) -> f64 {
        self.phi.iter().zip(&other.phi).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    fn map_stencil(&self, rows: &Stencil) -> Vec<Operator> {
        rows.iter()
            .map(|row| {
                let mut acc = Operator::zeros(self.dim());
                for &(j, a) in row {
                    acc.axpy_real(a, &self.phi[j]);
                }
                acc
            })
            .collect()
    }
}

fn check_field(model: &SystemModel, field: &FieldState) -> Result<()> {
    if field.points() != model.points() {
        return Err(Error::DimensionMismatch { left: field.points(), right: model.points() });
    }
    if field.dim() != model.dim() {
        return Err(Error::DimensionMismatch { left: field.dim(), right: model.dim() });
    }
    Ok(())
}

/// `delta phi = phi' + f' [phi, K]`
pub fn delta(model: &SystemModel, field: &FieldState) -> Result<FieldState> {
    check_field(model, field)?;
    let ik = I * (1.0 / model.hbar);
    let df = model.signal.f_prime();
    let mut phi = field.map_stencil(&model.k.d1);
    for (i, o) in phi.iter_mut().enumerate() {
        if df[i] != 0.0 {
            model.k.q.commutator_add(ik * df[i], &field.phi[i], o);
        }
    }
    Ok(FieldState { phi, weights: field.weights.clone(), nodes: field.nodes.clone() })
}

/// `delta^2 phi = phi'' + 2 f' [phi', K] + f'' [phi, K] + f'^2 [[phi, K], K]`
pub fn delta2(model: &SystemModel, field: &FieldState) -> Result<FieldState> {
    check_field(model, field)?;
    let ik = I * (1.0 / model.hbar);
    let df = model.signal.f_prime();
    let d2f = model.signal.f_double_prime();
    let first = field.map_stencil(&model.k.d1);
    let mut phi = field.map_stencil(&model.k.d2);
    let mut tmp = Operator::zeros(field.dim());
    for (i, o) in phi.iter_mut().enumerate() {
        let x = &field.phi[i];
        if df[i] != 0.0 {
            model.k.q.commutator_add(ik * (2.0 * df[i]), &first[i], o);
            zero(&mut tmp);
            model.k.q.commutator_add(c(1.0, 0.0), x, &mut tmp);
            model.k.q.commutator_add(c(-df[i] * df[i] / (model.hbar * model.hbar), 0.0), &tmp, o);
        }
        if d2f[i] != 0.0 {
            model.k.q.commutator_add(ik * d2f[i], x, o);
        }
    }
    Ok(FieldState { phi, weights: field.weights.clone(), nodes: field.nodes.clone() })
}

/// `Lambda_1[phi] = sum_ik kappa^{ik} ([L_i, phi L_k^dag] + [L_i phi, L_k^dag])`
/// with `kappa^{ik} = (kappa^{-1})_{ik}`.
pub fn lindblad(model: &SystemModel, phi: &Operator) -> Result<Operator> {
    if phi.dim() != model.dim() {
        return Err(Error::DimensionMismatch { left: phi.dim(), right: model.dim() });
    }
    let mut out = Operator::zeros(phi.dim());
    let mut tmp = Operator::zeros(phi.dim());
    model.dissipator_add(2.0, true, phi, &mut tmp, &mut out);
    Ok(out)
}

/// Transpose of [`lindblad`] under `Tr(X phi)`.
pub fn lindblad_adjoint(model: &SystemModel, x: &Operator) -> Result<Operator> {
    if x.dim() != model.dim() {
        return Err(Error::DimensionMismatch { left: x.dim(), right: model.dim() });
    }
    let mut out = Operator::zeros(x.dim());
    let mut tmp = Operator::zeros(x.dim());
    model.dissipator_adjoint_add(2.0, true, x, &mut tmp, &mut out);
    Ok(out)
}

pub fn apply_generator(model: &SystemModel, field: &FieldState) -> Result<FieldState> {
    check_field(model, field)?;
    let mut out = FieldState::zeros(&model.signal, model.dim());
    model.apply_generator_into(field, &mut out);
    Ok(out)
}

pub fn apply_heisenberg(model: &SystemModel, x: &FieldState) -> Result<FieldState> {
    check_field(model, x)?;
    let mut out = FieldState::zeros(&model.signal, model.dim());
    model.apply_heisenberg_into(x, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::build_oscillator;
    use crate::signal::Grid;

    fn model(points: usize) -> SystemModel {
        let osc = build_oscillator(6, 2.0, 1.0).unwrap();
        let l = vec![osc.q.scale_real(0.5)];
        let noise = NoiseSpec::scalar(1.0).unwrap();
        let signal = SignalModel::ornstein_uhlenbeck(0.5, 0.5, Grid::new(-2.0, 2.0, points).unwrap()).unwrap();
        SystemModel::new(2.0, osc.h.clone(), osc.q.clone(), l, noise, signal).unwrap()
    }

    fn pseudo_field(m: &SystemModel, seed: u64) -> FieldState {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let d = m.dim();
        let phi = (0..m.points())
            .map(|_| Operator::from_fn(d, |_, _| c(next(), next())).hermitian_part())
            .collect();
        FieldState::new(phi, m.signal()).unwrap()
    }

    #[test]
    fn weight_is_conserved() {
        let m = model(17);
        let f = pseudo_field(&m, 1);
        let g = apply_generator(&m, &f).unwrap();
        assert!(g.weight().abs() < 1e-12);
    }

    #[test]
    fn duality_holds() {
        let m = model(9);
        let phi = pseudo_field(&m, 2);
        let x = pseudo_field(&m, 3);
        let lhs = apply_heisenberg(&m, &x).unwrap().pairing(&phi);
        let rhs = x.pairing(&apply_generator(&m, &phi).unwrap());
        assert!((lhs - rhs).norm() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn identity_is_stationary_for_heisenberg() {
        let m = model(9);
        let id = FieldState::new(vec![Operator::identity(6); 9], m.signal()).unwrap();
        let out = apply_heisenberg(&m, &id).unwrap();
        assert!(out.phi().iter().all(|x| x.norm() < 1e-12));
    }

    #[test]
    fn lindblad_of_identity_vanishes_for_hermitian_coupling() {
        let m = model(5);
        let out = lindblad(&m, &Operator::identity(6)).unwrap();
        assert!(out.norm() < 1e-13);
    }

    #[test]
    fn folded_jumps_match_dense_dissipator() {
        let m = model(5);
        let x = pseudo_field(&m, 4).phi()[0].clone();
        let j = m.couplings()[0].clone();
        let g = &j.dagger() * &j;
        let want = &(&(&(&j * &x) * &j.dagger()).scale_real(2.0) - &(&g * &x)) - &(&x * &g);
        assert!((&lindblad(&m, &x).unwrap() - &want).norm() < 1e-12);
        let adj = lindblad_adjoint(&m, &x).unwrap();
        assert!((&adj - &want).norm() < 1e-12);
    }

    #[test]
    fn delta_of_constant_without_coupling() {
        let osc = build_oscillator(3, 1.0, 1.0).unwrap();
        let noise = NoiseSpec::scalar(1.0).unwrap();
        let signal = SignalModel::new(
            Grid::new(0.0, 1.0, 6).unwrap(),
            crate::signal::Drift::Linear(0.0),
            0.0,
            crate::signal::Coupling::None,
        )
        .unwrap();
        let m = SystemModel::new(1.0, osc.h.clone(), osc.q.clone(), vec![osc.ladder.clone()], noise, signal).unwrap();
        let f = FieldState::new(vec![osc.h.clone(); 6], m.signal()).unwrap();
        let d = delta(&m, &f).unwrap();
        assert!(d.phi().iter().all(|x| x.norm() < 1e-12));
        let d2 = delta2(&m, &f).unwrap();
        assert!(d2.phi().iter().all(|x| x.norm() < 1e-9));
    }
}
