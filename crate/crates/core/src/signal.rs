//! Scalar diffusive signal `d theta = -upsilon(theta) dt + sigma dw` and its
//! uniform discretization grid.

use crate::error::{Error, Result};

/// Uniform grid with trapezoid quadrature weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    min: f64,
    max: f64,
    points: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    pub fn new(min: f64, max: f64, points: usize) -> Result<Self> {
        if points < 3 {
            return Err(Error::GridTooSmall { points });
        }
        if !(min.is_finite() && max.is_finite() && max > min) {
            return Err(Error::Domain(format!("grid bounds must satisfy min < max, got [{min}, {max}]")));
        }
        let h = (max - min) / (points - 1) as f64;
        let nodes = (0..points).map(|i| min + h * i as f64).collect();
        let mut weights = vec![h; points];
        weights[0] = 0.5 * h;
        weights[points - 1] = 0.5 * h;
        Ok(Self { min, max, points, nodes, weights })
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.points - 1) as f64
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Drift coefficient `upsilon(theta)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Drift {
    /// `upsilon(theta) = coef * theta`
    Linear(f64),
    /// Values at the grid nodes.
    Table(Vec<f64>),
}

/// Coupling `f(theta)` through which the signal drives the system.
#[derive(Clone, Debug, PartialEq)]
pub enum Coupling {
    /// `f = 0`
    None,
    /// `f(theta) = theta`
    Identity,
    /// Values of `f, f', f''` at the grid nodes.
    Table { f: Vec<f64>, df: Vec<f64>, d2f: Vec<f64> },
}

#[derive(Clone, Debug)]
pub struct SignalModel {
    grid: Grid,
    drift: Drift,
    sigma: f64,
    coupling: Coupling,
    upsilon_nodes: Vec<f64>,
    upsilon_faces: Vec<f64>,
    f: Vec<f64>,
    df: Vec<f64>,
    d2f: Vec<f64>,
}

impl SignalModel {
    pub fn new(grid: Grid, drift: Drift, sigma: f64, coupling: Coupling) -> Result<Self> {
        let n = grid.points();
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!("sigma must be finite and non-negative, got {sigma}")));
        }
        let nodes = grid.nodes();
        let (upsilon_nodes, upsilon_faces) = match &drift {
            Drift::Linear(k) => {
                if !k.is_finite() {
                    return Err(Error::Domain("drift coefficient is not finite".into()));
                }
                let faces = nodes.windows(2).map(|w| k * 0.5 * (w[0] + w[1])).collect();
                (nodes.iter().map(|x| k * x).collect(), faces)
            }
            Drift::Table(v) => {
                check_table("drift", v, n)?;
                (v.clone(), v.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect())
            }
        };
        let (f, df, d2f) = match &coupling {
            Coupling::None => (vec![0.0; n], vec![0.0; n], vec![0.0; n]),
            Coupling::Identity => (nodes.to_vec(), vec![1.0; n], vec![0.0; n]),
            Coupling::Table { f, df, d2f } => {
                check_table("f", f, n)?;
                check_table("f'", df, n)?;
                check_table("f''", d2f, n)?;
                (f.clone(), df.clone(), d2f.clone())
            }
        };
        Ok(Self { grid, drift, sigma, coupling, upsilon_nodes, upsilon_faces, f, df, d2f })
    }

    /// Signal switched off: three nodes on `[-1, 1]`, no drift, no diffusion,
    /// no coupling. Used for plain open-system runs.
    pub fn inert() -> Self {
        Self::new(Grid::new(-1.0, 1.0, 3).expect("valid grid"), Drift::Linear(0.0), 0.0, Coupling::None)
            .expect("valid inert signal")
    }

    /// Ornstein-Uhlenbeck signal `f(theta) = theta` on a grid.
    pub fn ornstein_uhlenbeck(upsilon: f64, sigma: f64, grid: Grid) -> Result<Self> {
        Self::new(grid, Drift::Linear(upsilon), sigma, Coupling::Identity)
    }

    pub fn is_inert(&self) -> bool {
        self.sigma == 0.0
            && self.upsilon_nodes.iter().all(|&u| u == 0.0)
            && self.df.iter().all(|&d| d == 0.0)
            && self.d2f.iter().all(|&d| d == 0.0)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn drift(&self) -> &Drift {
        &self.drift
    }

    pub fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Linear drift coefficient, if the drift is linear.
    pub fn linear_upsilon(&self) -> Option<f64> {
        match self.drift {
            Drift::Linear(k) => Some(k),
            Drift::Table(_) => None,
        }
    }

    pub fn upsilon_nodes(&self) -> &[f64] {
        &self.upsilon_nodes
    }

    /// Drift at the cell faces `i + 1/2`.
    pub fn upsilon_faces(&self) -> &[f64] {
        &self.upsilon_faces
    }

    pub fn f(&self) -> &[f64] {
        &self.f
    }

    pub fn f_prime(&self) -> &[f64] {
        &self.df
    }

    pub fn f_double_prime(&self) -> &[f64] {
        &self.d2f
    }

    /// Drift `-upsilon(theta)` of the signal SDE, evaluated off-grid.
    pub fn drift_at(&self, theta: f64) -> f64 {
        match &self.drift {
            Drift::Linear(k) => -k * theta,
            Drift::Table(v) => -interpolate(self.grid.nodes(), v, theta),
        }
    }

    /// `f(theta)` evaluated off-grid.
    pub fn f_at(&self, theta: f64) -> f64 {
        match &self.coupling {
            Coupling::None => 0.0,
            Coupling::Identity => theta,
            Coupling::Table { f, .. } => interpolate(self.grid.nodes(), f, theta),
        }
    }

    /// Gaussian density sampled on the grid and normalized under the
    /// trapezoid weights; `var = 0` gives a uniform density.
    pub fn gaussian_prior(&self, mean: f64, var: f64) -> Result<Vec<f64>> {
        if !(var >= 0.0 && var.is_finite() && mean.is_finite()) {
            return Err(Error::Domain(format!("invalid prior N({mean}, {var})")));
        }
        let g: Vec<f64> = if var == 0.0 {
            vec![1.0; self.grid.points()]
        } else {
            self.grid.nodes().iter().map(|x| (-(x - mean).powi(2) / (2.0 * var)).exp()).collect()
        };
        let z: f64 = g.iter().zip(self.grid.weights()).map(|(a, w)| a * w).sum();
        if !(z > 0.0) {
            return Err(Error::Domain("prior has no mass on the grid".into()));
        }
        Ok(g.into_iter().map(|a| a / z).collect())
    }
}

fn check_table(name: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::DimensionMismatch { left: v.len(), right: n });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("{name} table has non-finite values")));
    }
    Ok(())
}

fn interpolate(nodes: &[f64], v: &[f64], x: f64) -> f64 {
    let n = nodes.len();
    if x <= nodes[0] {
        return v[0];
    }
    if x >= nodes[n - 1] {
        return v[n - 1];
    }
    let h = nodes[1] - nodes[0];
    let k = (((x - nodes[0]) / h) as usize).min(n - 2);
    let s = (x - nodes[k]) / h;
    v[k] * (1.0 - s) + v[k + 1] * s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_weights_integrate_constants() {
        let g = Grid::new(-2.0, 3.0, 11).unwrap();
        let s: f64 = g.weights().iter().sum();
        assert!((s - 5.0).abs() < 1e-14);
        assert!((g.spacing() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn grid_too_small() {
        assert_eq!(Grid::new(0.0, 1.0, 2), Err(Error::GridTooSmall { points: 2 }));
        assert!(Grid::new(1.0, 1.0, 5).is_err());
    }

    #[test]
    fn prior_is_normalized() {
        let s = SignalModel::ornstein_uhlenbeck(0.5, 0.5, Grid::new(-3.0, 3.0, 61).unwrap()).unwrap();
        let p = s.gaussian_prior(0.2, 0.1).unwrap();
        let z: f64 = p.iter().zip(s.grid().weights()).map(|(a, w)| a * w).sum();
        assert!((z - 1.0).abs() < 1e-14);
    }

    #[test]
    fn table_length_checked() {
        let g = Grid::new(0.0, 1.0, 4).unwrap();
        assert!(SignalModel::new(g, Drift::Table(vec![0.0; 3]), 0.1, Coupling::None).is_err());
    }

    #[test]
    fn inert_signal() {
        assert!(SignalModel::inert().is_inert());
        let g = Grid::new(-1.0, 1.0, 5).unwrap();
        assert!(!SignalModel::ornstein_uhlenbeck(0.0, 0.0, g).unwrap().is_inert());
    }
}
