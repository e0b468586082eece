//! Market model, market price of risk and seeded path simulation.
//!
//! The market holds `d <= m` stocks driven by an `m`-dimensional Brownian
//! motion, with predictable bounded drift `b` and volatility `σ` whose Gram
//! matrix `σσᵀ` is uniformly elliptic: `εI ≤ σσᵀ ≤ KI`. The market price of
//! risk `θ = σᵀ(σσᵀ)⁻¹ b` is then bounded as well.
//!
//! Coefficients are deterministic functions of `(t, W_t)`; the fully general
//! predictable case has no canonical simulation scheme and is out of scope.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::paths::{check_shape, dot, norm_sq, ScalarPaths, VectorPaths};
use crate::{Error, Result};

pub type DriftFn = dyn Fn(f64, &[f64]) -> DVector<f64> + Send + Sync;
pub type VolFn = dyn Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync;

/// Drift/volatility model with declared ellipticity constants.
pub struct MarketModel {
    d: usize,
    m: usize,
    drift: Box<DriftFn>,
    vol: Box<VolFn>,
    /// Lower ellipticity constant: `σσᵀ ≥ εI`.
    pub epsilon: f64,
    /// Upper ellipticity constant: `σσᵀ ≤ KI`.
    pub k_upper: f64,
    /// Uniform bound on `|b_t|`.
    pub drift_bound: f64,
}

impl MarketModel {
    pub fn new(
        d: usize,
        m: usize,
        drift: Box<DriftFn>,
        vol: Box<VolFn>,
        epsilon: f64,
        k_upper: f64,
        drift_bound: f64,
    ) -> Result<Self> {
        if d == 0 || m == 0 || d > m {
            return Err(Error::invalid(format!(
                "need 1 <= d <= m, got d={d}, m={m}"
            )));
        }
        if !(epsilon > 0.0 && k_upper > epsilon) {
            return Err(Error::invalid("ellipticity constants need K > epsilon > 0"));
        }
        if !(drift_bound >= 0.0 && drift_bound.is_finite()) {
            return Err(Error::invalid("drift bound must be finite and nonnegative"));
        }
        Ok(Self {
            d,
            m,
            drift,
            vol,
            epsilon,
            k_upper,
            drift_bound,
        })
    }

    /// Model with constant coefficients.
    pub fn constant(
        b: DVector<f64>,
        sigma: DMatrix<f64>,
        epsilon: f64,
        k_upper: f64,
    ) -> Result<Self> {
        let d = sigma.nrows();
        let m = sigma.ncols();
        if b.len() != d {
            return Err(Error::invalid("drift length must match sigma rows"));
        }
        let bound = b.norm();
        let b2 = b.clone();
        let s2 = sigma.clone();
        Self::new(
            d,
            m,
            Box::new(move |_, _| b2.clone()),
            Box::new(move |_, _| s2.clone()),
            epsilon,
            k_upper,
            bound,
        )
    }

    pub fn stock_count(&self) -> usize {
        self.d
    }

    pub fn noise_dim(&self) -> usize {
        self.m
    }

    pub fn drift_at(&self, t: f64, state: &[f64]) -> DVector<f64> {
        (self.drift)(t, state)
    }

    pub fn vol_at(&self, t: f64, state: &[f64]) -> DMatrix<f64> {
        (self.vol)(t, state)
    }

    /// A priori bound on `|θ|` implied by the declared constants.
    pub fn theta_max(&self) -> f64 {
        self.k_upper.sqrt() * self.drift_bound / self.epsilon
    }

    /// Market price of risk `θ = σᵀ(σσᵀ)⁻¹ b` at `(t, state)`.
    ///
    /// Fails with an ellipticity violation when `σσᵀ` drops below the
    /// declared floor `ε` at the evaluation point.
    pub fn market_price_of_risk(&self, t: f64, state: &[f64]) -> Result<DVector<f64>> {
        let b = self.drift_at(t, state);
        let sigma = self.vol_at(t, state);
        let gram = &sigma * sigma.transpose();
        let min_eig = gram
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |acc, &x| acc.min(x));
        if !(min_eig >= self.epsilon * (1.0 - 1e-9)) {
            return Err(Error::EllipticityViolation(format!(
                "min eigenvalue of sigma sigma^T is {min_eig:.3e} at t={t}, below epsilon={}",
                self.epsilon
            )));
        }
        let chol = Cholesky::new(gram).ok_or_else(|| {
            Error::EllipticityViolation(format!("sigma sigma^T not positive definite at t={t}"))
        })?;
        let theta = sigma.transpose() * chol.solve(&b);
        let resid = (&sigma * &theta - &b).norm();
        if resid > 1e-12 * (1.0 + b.norm()) {
            return Err(Error::EllipticityViolation(format!(
                "normal equations residual {resid:.3e} exceeds tolerance at t={t}"
            )));
        }
        Ok(theta)
    }

    /// Checks the ellipticity sandwich and drift bound on sampled points.
    pub fn validate(&self, sample_points: &[(f64, Vec<f64>)]) -> ValidationReport {
        let mut report = ValidationReport {
            passed: true,
            min_eigenvalue: f64::INFINITY,
            max_eigenvalue: f64::NEG_INFINITY,
            max_drift_norm: 0.0,
            failures: Vec::new(),
        };
        for (t, state) in sample_points {
            let sigma = self.vol_at(*t, state);
            let eig = (&sigma * sigma.transpose()).symmetric_eigen().eigenvalues;
            let lo = eig.iter().fold(f64::INFINITY, |a, &x| a.min(x));
            let hi = eig.iter().fold(f64::NEG_INFINITY, |a, &x| a.max(x));
            report.min_eigenvalue = report.min_eigenvalue.min(lo);
            report.max_eigenvalue = report.max_eigenvalue.max(hi);
            let bn = self.drift_at(*t, state).norm();
            report.max_drift_norm = report.max_drift_norm.max(bn);
            if lo < self.epsilon * (1.0 - 1e-9) {
                report.passed = false;
                report.failures.push(format!(
                    "eigenvalue {lo:.6e} below epsilon={} at t={t}",
                    self.epsilon
                ));
            }
            if hi > self.k_upper * (1.0 + 1e-9) {
                report.passed = false;
                report.failures.push(format!(
                    "eigenvalue {hi:.6e} above K={} at t={t}",
                    self.k_upper
                ));
            }
            if bn > self.drift_bound * (1.0 + 1e-9) {
                report.passed = false;
                report
                    .failures
                    .push(format!("drift norm {bn:.6e} above bound at t={t}"));
            }
        }
        report
    }

    /// Simulates a seeded Brownian ensemble on the given grid.
    ///
    /// The generator is keyed by `(seed, path, step)`, so the ensemble does
    /// not depend on fill order and two runs with the same seed are
    /// bit-identical.
    pub fn simulate_brownian(
        &self,
        grid: &[f64],
        n_paths: usize,
        seed: u64,
    ) -> Result<PathEnsemble> {
        PathEnsemble::simulate(self.m, grid, n_paths, seed)
    }

    /// Evaluates `θ` on every `(t_i, W_i)` of the ensemble.
    pub fn theta_on(&self, ens: &PathEnsemble) -> Result<VectorPaths> {
        let n = ens.n_steps();
        let mut out = VectorPaths::zeros(ens.n_paths(), n, self.m);
        for p in 0..ens.n_paths() {
            for i in 0..n {
                let theta = self
                    .market_price_of_risk(ens.times()[i], ens.w(p, i))
                    .map_err(|e| e.at(p, i))?;
                out.set(p, i, theta.as_slice());
            }
        }
        Ok(out)
    }
}

/// Ellipticity/boundedness check outcome with the worst observed values.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub passed: bool,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub max_drift_norm: f64,
    pub failures: Vec<String>,
}

/// Seeded Brownian increments and cumulative paths on a time grid.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    times: Vec<f64>,
    n_paths: usize,
    m: usize,
    dw: VectorPaths,
    w: VectorPaths,
    seed: u64,
}

impl PathEnsemble {
    pub fn simulate(m: usize, grid: &[f64], n_paths: usize, seed: u64) -> Result<Self> {
        if grid.len() < 2 {
            return Err(Error::invalid("grid needs at least two times"));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("grid must be strictly increasing"));
        }
        if n_paths == 0 {
            return Err(Error::invalid("need at least one path"));
        }
        let n = grid.len() - 1;
        let mut dw = VectorPaths::zeros(n_paths, n, m);
        let mut w = VectorPaths::zeros(n_paths, n + 1, m);
        let sqrt_dt: Vec<f64> = grid.windows(2).map(|t| (t[1] - t[0]).sqrt()).collect();
        for p in 0..n_paths {
            for i in 0..n {
                let mut rng = step_rng(seed, p as u64, i as u64);
                let slot = dw.get_mut(p, i);
                for x in slot.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *x = sqrt_dt[i] * z;
                }
            }
            for i in 0..n {
                let prev: Vec<f64> = w.get(p, i).to_vec();
                let inc: Vec<f64> = dw.get(p, i).to_vec();
                let next = w.get_mut(p, i + 1);
                for j in 0..m {
                    next[j] = prev[j] + inc[j];
                }
            }
        }
        Ok(Self {
            times: grid.to_vec(),
            n_paths,
            m,
            dw,
            w,
            seed,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn noise_dim(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dt(&self, step: usize) -> f64 {
        self.times[step + 1] - self.times[step]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Increment over step `i` on path `p`.
    pub fn dw(&self, path: usize, step: usize) -> &[f64] {
        self.dw.get(path, step)
    }

    /// Brownian value at grid time `i` on path `p`.
    pub fn w(&self, path: usize, index: usize) -> &[f64] {
        self.w.get(path, index)
    }

    pub fn increments(&self) -> &VectorPaths {
        &self.dw
    }

    pub fn values(&self) -> &VectorPaths {
        &self.w
    }

    /// Stock paths under the model, log-Euler discretized so prices stay
    /// positive.
    pub fn stock_paths(&self, model: &MarketModel, s0: &[f64]) -> Result<VectorPaths> {
        let d = model.stock_count();
        check_shape(s0.len() == d, "initial prices must have length d")?;
        if s0.iter().any(|&x| x <= 0.0) {
            return Err(Error::invalid("initial prices must be positive"));
        }
        let mut out = VectorPaths::zeros(self.n_paths, self.times.len(), d);
        for p in 0..self.n_paths {
            out.set(p, 0, s0);
            for i in 0..self.n_steps() {
                let t = self.times[i];
                let dt = self.dt(i);
                let state = self.w(p, i);
                let b = model.drift_at(t, state);
                let sigma = model.vol_at(t, state);
                let dwv = self.dw(p, i);
                let prev: Vec<f64> = out.get(p, i).to_vec();
                let next = out.get_mut(p, i + 1);
                for k in 0..d {
                    let row = sigma.row(k);
                    let vol_dot: f64 = row.iter().zip(dwv).map(|(s, x)| s * x).sum();
                    let row_sq: f64 = row.iter().map(|s| s * s).sum();
                    next[k] = prev[k] * ((b[k] - 0.5 * row_sq) * dt + vol_dot).exp();
                }
            }
        }
        Ok(out)
    }
}

/// Counter-based generator: a fresh ChaCha stream per `(seed, path, step)`.
fn step_rng(seed: u64, path: u64, step: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&path.to_le_bytes());
    key[16..24].copy_from_slice(&step.to_le_bytes());
    key[24..32].copy_from_slice(&0x9e37_79b9_7f4a_7c15_u64.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Wealth in currency amounts: `X_{i+1} = X_i + p_i · (dW_i + θ_i dt_i)`.
pub fn wealth_amount(
    x0: f64,
    strategy: &VectorPaths,
    ens: &PathEnsemble,
    theta: &VectorPaths,
) -> Result<ScalarPaths> {
    check_shape(
        strategy.n_paths() == ens.n_paths()
            && strategy.n_cols() == ens.n_steps()
            && strategy.dim() == ens.noise_dim(),
        "strategy must be (paths, steps, m)",
    )?;
    check_shape(strategy.same_shape(theta), "theta must match strategy")?;
    let n = ens.n_steps();
    let mut x = ScalarPaths::zeros(ens.n_paths(), n + 1);
    for p in 0..ens.n_paths() {
        x.set(p, 0, x0);
        for i in 0..n {
            let dt = ens.dt(i);
            let pv = strategy.get(p, i);
            let gain = dot(pv, ens.dw(p, i)) + dot(pv, theta.get(p, i)) * dt;
            x.set(p, i + 1, x.get(p, i) + gain);
        }
    }
    Ok(x)
}

/// Wealth as a stochastic exponential of the fraction-of-wealth strategy:
/// `X_{i+1} = X_i exp(ρ_i·dW_i + ρ_i·θ_i dt_i − ½|ρ_i|² dt_i)`, strictly
/// positive by construction.
pub fn wealth_fraction(
    x0: f64,
    strategy: &VectorPaths,
    ens: &PathEnsemble,
    theta: &VectorPaths,
) -> Result<ScalarPaths> {
    if !(x0 > 0.0) {
        return Err(Error::invalid("fractional wealth needs x0 > 0"));
    }
    check_shape(
        strategy.n_paths() == ens.n_paths()
            && strategy.n_cols() == ens.n_steps()
            && strategy.dim() == ens.noise_dim(),
        "strategy must be (paths, steps, m)",
    )?;
    check_shape(strategy.same_shape(theta), "theta must match strategy")?;
    let n = ens.n_steps();
    let mut x = ScalarPaths::zeros(ens.n_paths(), n + 1);
    for p in 0..ens.n_paths() {
        x.set(p, 0, x0);
        for i in 0..n {
            let dt = ens.dt(i);
            let rho = strategy.get(p, i);
            let log_inc =
                dot(rho, ens.dw(p, i)) + (dot(rho, theta.get(p, i)) - 0.5 * norm_sq(rho)) * dt;
            x.set(p, i + 1, x.get(p, i) * log_inc.exp());
        }
    }
    Ok(x)
}

/// Uniform grid `0 = t_0 < ... < t_N = T`.
pub fn uniform_grid(horizon: f64, steps: usize) -> Result<Vec<f64>> {
    if !(horizon > 0.0) || steps == 0 {
        return Err(Error::invalid("horizon and step count must be positive"));
    }
    Ok((0..=steps)
        .map(|i| horizon * i as f64 / steps as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_model(b: f64, sigma: f64) -> MarketModel {
        MarketModel::constant(
            DVector::from_vec(vec![b]),
            DMatrix::from_row_slice(1, 1, &[sigma]),
            0.5 * sigma * sigma,
            2.0 * sigma * sigma,
        )
        .unwrap()
    }

    #[test]
    fn theta_scalar_division() {
        let model = scalar_model(0.1, 0.5);
        let theta = model.market_price_of_risk(0.0, &[0.0]).unwrap();
        assert!((theta[0] - 0.2).abs() < 1e-14);
    }

    #[test]
    fn theta_zero_drift() {
        let model = scalar_model(0.0, 0.5);
        let theta = model.market_price_of_risk(0.3, &[1.0]).unwrap();
        assert_eq!(theta[0], 0.0);
    }

    #[test]
    fn theta_underdetermined_market() {
        // d = 1, m = 2, sigma = (0.5, 0): normal equation 0.25 c = 0.05
        // gives c = 0.2 and theta = (0.1, 0) scaled: sigma^T c = (0.2, 0) ...
        let model = MarketModel::constant(
            DVector::from_vec(vec![0.1]),
            DMatrix::from_row_slice(1, 2, &[0.5, 0.0]),
            0.2,
            0.3,
        )
        .unwrap();
        let theta = model.market_price_of_risk(0.0, &[0.0, 0.0]).unwrap();
        assert!((theta[0] - 0.2).abs() < 1e-14);
        assert!(theta[1].abs() < 1e-14);
        // residual check: sigma theta = b
        assert!((0.5 * theta[0] - 0.1).abs() < 1e-14);
    }

    #[test]
    fn validate_passes_identity() {
        let model = MarketModel::constant(
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            0.5,
            2.0,
        )
        .unwrap();
        let report = model.validate(&[(0.0, vec![0.0, 0.0]), (0.5, vec![1.0, -1.0])]);
        assert!(report.passed);
        assert!((report.min_eigenvalue - 1.0).abs() < 1e-12);
        assert!((report.max_eigenvalue - 1.0).abs() < 1e-12);
    }

    #[test]
    fn validate_fails_degenerate_sigma() {
        let model = MarketModel::constant(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-9]),
            0.5,
            2.0,
        )
        .unwrap();
        let report = model.validate(&[(0.0, vec![0.0, 0.0])]);
        assert!(!report.passed);
        assert!(report.min_eigenvalue < 0.5);
    }

    #[test]
    fn validate_random_well_conditioned() {
        // eigenvalues of sigma sigma^T computed independently below
        let sigma = DMatrix::from_row_slice(2, 2, &[1.1, 0.2, -0.1, 0.9]);
        let gram = &sigma * sigma.transpose();
        let eig = gram.symmetric_eigen().eigenvalues;
        let lo = eig.iter().fold(f64::INFINITY, |a, &x| a.min(x));
        let hi = eig.iter().fold(0.0_f64, |a, &x| a.max(x));
        let model = MarketModel::constant(DVector::zeros(2), sigma, 0.9 * lo, 1.1 * hi).unwrap();
        assert!(model.validate(&[(0.0, vec![0.0, 0.0])]).passed);
    }

    #[test]
    fn ellipticity_violation_detected_in_theta() {
        let model = MarketModel::constant(
            DVector::from_vec(vec![0.1, 0.1]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-9]),
            0.5,
            2.0,
        )
        .unwrap();
        assert!(matches!(
            model.market_price_of_risk(0.0, &[0.0, 0.0]),
            Err(Error::EllipticityViolation(_))
        ));
    }

    #[test]
    fn simulation_is_deterministic() {
        let grid = uniform_grid(1.0, 8).unwrap();
        let a = PathEnsemble::simulate(2, &grid, 50, 7).unwrap();
        let b = PathEnsemble::simulate(2, &grid, 50, 7).unwrap();
        for p in 0..50 {
            for i in 0..8 {
                assert_eq!(a.dw(p, i), b.dw(p, i));
            }
        }
        let c = PathEnsemble::simulate(2, &grid, 50, 8).unwrap();
        assert_ne!(a.dw(0, 0), c.dw(0, 0));
    }

    #[test]
    fn increment_moments() {
        let grid = vec![0.0, 1.0];
        let ens = PathEnsemble::simulate(1, &grid, 100_000, 11).unwrap();
        let mut mean = 0.0;
        let mut var = 0.0;
        for p in 0..ens.n_paths() {
            mean += ens.dw(p, 0)[0];
        }
        mean /= ens.n_paths() as f64;
        for p in 0..ens.n_paths() {
            let d = ens.dw(p, 0)[0] - mean;
            var += d * d;
        }
        var /= (ens.n_paths() - 1) as f64;
        // 4 sigma bounds for n = 1e5 samples of N(0, 1)
        assert!(mean.abs() < 4.0 / (ens.n_paths() as f64).sqrt());
        assert!((0.98..1.02).contains(&var), "var = {var}");
    }

    #[test]
    fn terminal_variance_matches_horizon() {
        let grid = uniform_grid(2.0, 16).unwrap();
        let ens = PathEnsemble::simulate(1, &grid, 40_000, 3).unwrap();
        let n = ens.n_steps();
        let mut var = 0.0;
        let mut mean = 0.0;
        for p in 0..ens.n_paths() {
            mean += ens.w(p, n)[0];
        }
        mean /= ens.n_paths() as f64;
        for p in 0..ens.n_paths() {
            let d = ens.w(p, n)[0] - mean;
            var += d * d;
        }
        var /= (ens.n_paths() - 1) as f64;
        let tol = 4.0 * 2.0 * (2.0 / ens.n_paths() as f64).sqrt();
        assert!((var - 2.0).abs() < tol, "var = {var}");
    }

    #[test]
    fn reconstruction_is_exact() {
        let grid = uniform_grid(1.0, 5).unwrap();
        let ens = PathEnsemble::simulate(3, &grid, 10, 5).unwrap();
        for p in 0..10 {
            for i in 0..5 {
                for j in 0..3 {
                    assert_eq!(ens.w(p, i + 1)[j], ens.w(p, i)[j] + ens.dw(p, i)[j]);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_grid() {
        assert!(PathEnsemble::simulate(1, &[0.0, 0.5, 0.5], 10, 1).is_err());
        assert!(PathEnsemble::simulate(1, &[0.0], 10, 1).is_err());
    }

    #[test]
    fn zero_strategy_keeps_wealth_constant() {
        let grid = uniform_grid(1.0, 4).unwrap();
        let ens = PathEnsemble::simulate(1, &grid, 20, 2).unwrap();
        let p = VectorPaths::zeros(20, 4, 1);
        let theta = VectorPaths::zeros(20, 4, 1);
        let x = wealth_amount(1.5, &p, &ens, &theta).unwrap();
        let xf = wealth_fraction(1.5, &p, &ens, &theta).unwrap();
        for path in 0..20 {
            assert_eq!(x.get(path, 4), 1.5);
            assert_eq!(xf.get(path, 4), 1.5);
        }
    }

    #[test]
    fn constant_strategy_telescopes_without_drift() {
        let grid = uniform_grid(1.0, 16).unwrap();
        let ens = PathEnsemble::simulate(1, &grid, 100, 9).unwrap();
        let mut p = VectorPaths::zeros(100, 16, 1);
        for path in 0..100 {
            for i in 0..16 {
                p.set(path, i, &[0.7]);
            }
        }
        let theta = VectorPaths::zeros(100, 16, 1);
        let x = wealth_amount(0.0, &p, &ens, &theta).unwrap();
        for path in 0..100 {
            let expect = 0.7 * ens.w(path, 16)[0];
            assert!((x.get(path, 16) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn amount_wealth_mc_mean() {
        // E[X_T] = x0 + p theta T for constant p, theta
        let grid = uniform_grid(1.0, 8).unwrap();
        let n_paths = 50_000;
        let ens = PathEnsemble::simulate(1, &grid, n_paths, 17).unwrap();
        let mut p = VectorPaths::zeros(n_paths, 8, 1);
        let mut theta = VectorPaths::zeros(n_paths, 8, 1);
        for path in 0..n_paths {
            for i in 0..8 {
                p.set(path, i, &[0.5]);
                theta.set(path, i, &[0.2]);
            }
        }
        let x = wealth_amount(1.0, &p, &ens, &theta).unwrap();
        let (mean, se) = x.column_mean_se(8);
        assert!((mean - 1.1).abs() < 4.0 * se, "mean = {mean}, se = {se}");
    }

    #[test]
    fn fraction_wealth_log_mean_and_positivity() {
        let grid = uniform_grid(1.0, 8).unwrap();
        let n_paths = 50_000;
        let ens = PathEnsemble::simulate(1, &grid, n_paths, 23).unwrap();
        let mut rho = VectorPaths::zeros(n_paths, 8, 1);
        let mut theta = VectorPaths::zeros(n_paths, 8, 1);
        for path in 0..n_paths {
            for i in 0..8 {
                rho.set(path, i, &[0.4]);
                theta.set(path, i, &[0.2]);
            }
        }
        let x = wealth_fraction(2.0, &rho, &ens, &theta).unwrap();
        let mut log_mean = 0.0;
        let mut min_x = f64::INFINITY;
        for path in 0..n_paths {
            let xt = x.get(path, 8);
            min_x = min_x.min(xt);
            log_mean += (xt / 2.0).ln();
        }
        log_mean /= n_paths as f64;
        // drift = rho theta - rho^2/2 = 0.08 - 0.08 = 0
        let se = 0.4 / (n_paths as f64).sqrt();
        assert!(log_mean.abs() < 4.0 * se, "log mean = {log_mean}");
        assert!(min_x > 0.0);
    }

    #[test]
    fn wealth_rejects_shape_mismatch() {
        let grid = uniform_grid(1.0, 4).unwrap();
        let ens = PathEnsemble::simulate(1, &grid, 10, 2).unwrap();
        let p = VectorPaths::zeros(10, 3, 1);
        let theta = VectorPaths::zeros(10, 3, 1);
        assert!(wealth_amount(1.0, &p, &ens, &theta).is_err());
        assert!(wealth_fraction(0.0, &p, &ens, &theta).is_err());
    }

    #[test]
    fn stock_paths_positive_and_growing() {
        let model = scalar_model(0.05, 0.2);
        let grid = uniform_grid(1.0, 16).unwrap();
        let ens = model.simulate_brownian(&grid, 20_000, 31).unwrap();
        let s = ens.stock_paths(&model, &[100.0]).unwrap();
        let mut mean = 0.0;
        for p in 0..20_000 {
            let v = s.get(p, 16)[0];
            assert!(v > 0.0);
            mean += v;
        }
        mean /= 20_000.0;
        let expect = 100.0 * (0.05_f64).exp();
        assert!((mean - expect).abs() < 1.0, "mean = {mean}");
    }
}
