//! Regression Monte Carlo solver for the quadratic BSDEs.
//!
//! The backward recursion on a simulated ensemble estimates conditional
//! expectations by least-squares regression on functions of the Brownian
//! state (the Markovian restriction makes `W_t` a sufficient regressor):
//!
//! ```text
//! Z_i = Reg[ Y_{i+1} ΔW_i | basis(W_i) ] / Δt_i
//! Y_i = Reg[ Y_{i+1}      | basis(W_i) ] − f(t_i, Z_i) Δt_i
//! ```
//!
//! The driver is evaluated at the regressed `Z` (explicit scheme). Regression
//! uses normal equations with an eigenvalue-thresholded pseudo-inverse, so a
//! rank-deficient design (all paths share the state at `t_0`) degrades
//! gracefully to the projection onto the spanned columns.

use nalgebra::{DMatrix, DVector};

use crate::constraint::InducedSet;
use crate::drivers::{growth_constants, Generator, Liability};
use crate::market::PathEnsemble;
use crate::paths::{check_shape, norm_sq, ScalarPaths, VectorPaths};
use crate::{Error, Result};

/// Conditional-expectation estimator on the path ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionBasis {
    pub kind: BasisKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BasisKind {
    /// All monomials in the state coordinates up to the given total degree.
    Polynomial { degree: usize },
    /// Piecewise-constant estimate on per-coordinate quantile bins.
    Bins { per_dim: usize },
}

impl RegressionBasis {
    pub fn polynomial(degree: usize) -> Self {
        Self {
            kind: BasisKind::Polynomial { degree },
        }
    }

    pub fn bins(per_dim: usize) -> Self {
        Self {
            kind: BasisKind::Bins { per_dim },
        }
    }

    /// Degree-2 polynomials for low-dimensional noise, bins beyond.
    pub fn default_for_dim(m: usize) -> Self {
        if m <= 2 {
            Self::polynomial(2)
        } else {
            Self::bins(6)
        }
    }

    fn feature_count(&self, m: usize) -> usize {
        match self.kind {
            BasisKind::Polynomial { degree } => monomial_exponents(m, degree).len(),
            BasisKind::Bins { per_dim } => per_dim.pow(m as u32),
        }
    }

    pub fn validate(&self, m: usize, n_paths: usize) -> Result<()> {
        match self.kind {
            BasisKind::Polynomial { degree } => {
                if degree > 8 {
                    return Err(Error::BasisDegeneracy(
                        "polynomial degree above 8 is not supported".into(),
                    ));
                }
            }
            BasisKind::Bins { per_dim } => {
                if per_dim == 0 {
                    return Err(Error::BasisDegeneracy("need at least one bin".into()));
                }
            }
        }
        let k = self.feature_count(m);
        if n_paths < k {
            return Err(Error::BasisDegeneracy(format!(
                "{k} basis functions but only {n_paths} paths"
            )));
        }
        Ok(())
    }
}

/// Exponent vectors of all monomials in `m` variables with total degree at
/// most `degree`, in a fixed deterministic order.
fn monomial_exponents(m: usize, degree: usize) -> Vec<Vec<usize>> {
    fn rec(j: usize, budget: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if j == current.len() {
            out.push(current.clone());
            return;
        }
        for e in 0..=budget {
            current[j] = e;
            rec(j + 1, budget - e, current, out);
        }
        current[j] = 0;
    }
    let mut out = Vec::new();
    let mut current = vec![0usize; m];
    rec(0, degree, &mut current, &mut out);
    out
}

/// Per-step regression output: one prediction vector per target.
struct StepFit {
    predictions: Vec<Vec<f64>>,
    residual_rms: f64,
    condition: f64,
    rank: usize,
}

fn fit_step(
    basis: &RegressionBasis,
    states: &VectorPaths,
    col: usize,
    targets: &[Vec<f64>],
) -> Result<StepFit> {
    let n = states.n_paths();
    match basis.kind {
        BasisKind::Polynomial { degree } => {
            let m = states.dim();
            let expos = monomial_exponents(m, degree);
            let k = expos.len();
            let mut x = DMatrix::zeros(n, k);
            for p in 0..n {
                let w = states.get(p, col);
                for (j, e) in expos.iter().enumerate() {
                    let mut v = 1.0;
                    for (c, &ec) in e.iter().enumerate() {
                        for _ in 0..ec {
                            v *= w[c];
                        }
                    }
                    x[(p, j)] = v;
                }
            }
            let gram = x.transpose() * &x;
            let eig = gram.symmetric_eigen();
            let lam_max = eig.eigenvalues.iter().fold(0.0_f64, |a, &l| a.max(l));
            let thresh = lam_max * 1e-12 * k as f64;
            let kept: Vec<usize> = (0..k).filter(|&j| eig.eigenvalues[j] > thresh).collect();
            if kept.is_empty() {
                return Err(Error::BasisDegeneracy(
                    "design matrix has no usable directions".into(),
                ));
            }
            let lam_min_kept = kept
                .iter()
                .map(|&j| eig.eigenvalues[j])
                .fold(f64::INFINITY, f64::min);
            let mut predictions = Vec::with_capacity(targets.len());
            let mut residual_rms = 0.0;
            for (ti, target) in targets.iter().enumerate() {
                let yv = DVector::from_column_slice(target);
                let rhs = x.transpose() * &yv;
                let mut beta = DVector::zeros(k);
                for &j in &kept {
                    let v = eig.eigenvectors.column(j);
                    beta += v * (v.dot(&rhs) / eig.eigenvalues[j]);
                }
                let pred = &x * beta;
                if ti == 0 {
                    let mut ss = 0.0;
                    for p in 0..n {
                        let r = target[p] - pred[p];
                        ss += r * r;
                    }
                    residual_rms = (ss / n as f64).sqrt();
                }
                predictions.push(pred.iter().copied().collect());
            }
            Ok(StepFit {
                predictions,
                residual_rms,
                condition: lam_max / lam_min_kept,
                rank: kept.len(),
            })
        }
        BasisKind::Bins { per_dim } => {
            let m = states.dim();
            // per-coordinate quantile edges
            let mut edges = Vec::with_capacity(m);
            for c in 0..m {
                let mut vals: Vec<f64> = (0..n).map(|p| states.get(p, col)[c]).collect();
                vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let e: Vec<f64> = (1..per_dim)
                    .map(|q| vals[(q * n / per_dim).min(n - 1)])
                    .collect();
                edges.push(e);
            }
            let cell_of = |w: &[f64]| -> usize {
                let mut id = 0;
                for c in 0..m {
                    let digit = edges[c].partition_point(|&e| e <= w[c]);
                    id = id * per_dim + digit;
                }
                id
            };
            let n_cells = per_dim.pow(m as u32);
            let mut counts = vec![0usize; n_cells];
            let mut cells = vec![0usize; n];
            for p in 0..n {
                let id = cell_of(states.get(p, col));
                cells[p] = id;
                counts[id] += 1;
            }
            let mut predictions = Vec::with_capacity(targets.len());
            let mut residual_rms = 0.0;
            for (ti, target) in targets.iter().enumerate() {
                let mut sums = vec![0.0; n_cells];
                for p in 0..n {
                    sums[cells[p]] += target[p];
                }
                let global = target.iter().sum::<f64>() / n as f64;
                let means: Vec<f64> = (0..n_cells)
                    .map(|c| {
                        if counts[c] > 0 {
                            sums[c] / counts[c] as f64
                        } else {
                            global
                        }
                    })
                    .collect();
                let pred: Vec<f64> = (0..n).map(|p| means[cells[p]]).collect();
                if ti == 0 {
                    let mut ss = 0.0;
                    for p in 0..n {
                        let r = target[p] - pred[p];
                        ss += r * r;
                    }
                    residual_rms = (ss / n as f64).sqrt();
                }
                predictions.push(pred);
            }
            Ok(StepFit {
                predictions,
                residual_rms,
                condition: 1.0,
                rank: counts.iter().filter(|&&c| c > 0).count(),
            })
        }
    }
}

/// Solver knobs.
#[derive(Debug, Clone, Default)]
pub struct LsmcOptions {
    /// Driver evaluations clamp `|z|` to this cap; `None` derives
    /// `50 θ_max + 10` from the observed `θ` field.
    pub z_cap: Option<f64>,
}

/// Backward solution on the ensemble.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub times: Vec<f64>,
    /// Per path and grid time; the terminal column equals the liability
    /// payoff exactly.
    pub y: ScalarPaths,
    /// Per path and step.
    pub z: VectorPaths,
    /// Cross-path mean of the first column.
    pub y0: f64,
    pub diagnostics: SolveDiagnostics,
}

#[derive(Debug, Clone, Default)]
pub struct SolveDiagnostics {
    /// Y-regression residual RMS per step, in forward time order.
    pub regression_rms: Vec<f64>,
    pub condition_numbers: Vec<f64>,
    pub effective_ranks: Vec<usize>,
    pub clamp_activations: usize,
    pub driver_evaluations: usize,
    pub z_cap: f64,
    /// Crude sup-norm envelope `bound(F) + (c0 + c1 cap²) T`.
    pub envelope_bound: f64,
    pub max_abs_y: f64,
    pub warnings: Vec<String>,
}

/// Solves the BSDE backward on the ensemble. Deterministic given the
/// ensemble seed.
pub fn solve_bsde_lsmc(
    ens: &PathEnsemble,
    terminal: &Liability,
    gen: &Generator,
    basis: &RegressionBasis,
    theta: &VectorPaths,
    set: &InducedSet,
    opts: &LsmcOptions,
) -> Result<BsdeSolution> {
    let n = ens.n_steps();
    let n_paths = ens.n_paths();
    let m = ens.noise_dim();
    check_shape(
        theta.n_paths() == n_paths && theta.n_cols() == n && theta.dim() == m,
        "theta must be evaluated per path and step on the ensemble grid",
    )?;
    check_shape(
        set.dim_image() == m,
        "constraint image dimension must equal the noise dimension",
    )?;
    basis.validate(m, n_paths)?;

    let mut y = ScalarPaths::zeros(n_paths, n + 1);
    let mut z = VectorPaths::zeros(n_paths, n, m);
    for p in 0..n_paths {
        y.set(p, n, terminal.evaluate(ens.w(p, n))?);
    }

    let mut theta_max_obs: f64 = 0.0;
    for p in 0..n_paths {
        for i in 0..n {
            theta_max_obs = theta_max_obs.max(norm_sq(theta.get(p, i)).sqrt());
        }
    }
    let cap = opts.z_cap.unwrap_or(50.0 * theta_max_obs + 10.0);

    let mut diag = SolveDiagnostics {
        z_cap: cap,
        ..Default::default()
    };

    for i in (0..n).rev() {
        let dt = ens.dt(i);
        let y_next: Vec<f64> = (0..n_paths).map(|p| y.get(p, i + 1)).collect();
        let mut targets = vec![y_next];
        if gen.z_dependent() {
            for j in 0..m {
                let t: Vec<f64> = (0..n_paths)
                    .map(|p| y.get(p, i + 1) * ens.dw(p, i)[j])
                    .collect();
                targets.push(t);
            }
        }
        let fit = fit_step(basis, ens.values(), i, &targets)?;
        diag.regression_rms.push(fit.residual_rms);
        diag.condition_numbers.push(fit.condition);
        diag.effective_ranks.push(fit.rank);

        let mut zp = vec![0.0; m];
        for p in 0..n_paths {
            if gen.z_dependent() {
                for (j, zj) in zp.iter_mut().enumerate() {
                    *zj = fit.predictions[1 + j][p] / dt;
                }
            }
            z.set(p, i, &zp);
            let (fv, clamped) = gen
                .eval_capped(&zp, theta.get(p, i), set, cap)
                .map_err(|e| e.at(p, i))?;
            if clamped {
                diag.clamp_activations += 1;
            }
            diag.driver_evaluations += 1;
            if !fv.is_finite() {
                return Err(Error::Divergence {
                    step: i,
                    detail: format!("driver produced {fv} on path {p}"),
                });
            }
            y.set(p, i, fit.predictions[0][p] - fv * dt);
        }
    }
    diag.regression_rms.reverse();
    diag.condition_numbers.reverse();
    diag.effective_ranks.reverse();

    let (c0, c1) = growth_constants(gen, theta_max_obs, set.k1_bound())?;
    diag.envelope_bound = terminal.bound() + (c0 + c1 * cap * cap) * ens.horizon();
    for p in 0..n_paths {
        for i in 0..=n {
            diag.max_abs_y = diag.max_abs_y.max(y.get(p, i).abs());
        }
    }
    if diag.max_abs_y > diag.envelope_bound {
        diag.warnings.push(format!(
            "solution magnitude {:.3e} exceeds the crude envelope {:.3e}",
            diag.max_abs_y, diag.envelope_bound
        ));
    }
    if diag.clamp_activations * 100 > diag.driver_evaluations {
        diag.warnings.push(format!(
            "driver clamp active on {} of {} evaluations (> 1%)",
            diag.clamp_activations, diag.driver_evaluations
        ));
    }

    let y0 = y.column_mean(0);
    Ok(BsdeSolution {
        times: ens.times().to_vec(),
        y,
        z,
        y0,
        diagnostics: diag,
    })
}

/// Initial value of the log-utility BSDE: `Y_0 = −E[Σ_i f(t_i) Δt_i]`.
/// Exact quadrature when `θ` is deterministic.
pub fn solve_log_quadrature(times: &[f64], theta: &VectorPaths, set: &InducedSet) -> Result<f64> {
    let n = times.len().saturating_sub(1);
    check_shape(
        theta.n_cols() == n && theta.n_paths() >= 1,
        "theta must carry one value per step",
    )?;
    let mut acc = 0.0;
    for p in 0..theta.n_paths() {
        let mut path_sum = 0.0;
        for i in 0..n {
            let dt = times[i + 1] - times[i];
            let f = crate::drivers::driver_log(theta.get(p, i), set).map_err(|e| e.at(p, i))?;
            path_sum += f * dt;
        }
        acc += path_sum;
    }
    Ok(-acc / theta.n_paths() as f64)
}

/// Grid-time approximation of the BMO norm of `∫ ξ dW`:
/// `max_i sup_cells Reg[ Σ_{j≥i} |ξ_j|² Δt_j | basis(W_i) ]^{1/2}`.
///
/// The supremum runs over grid times and regression cells only, so this is a
/// lower approximation of the supremum over stopping times.
pub fn bmo_norm_estimate(
    xi: &VectorPaths,
    ens: &PathEnsemble,
    basis: &RegressionBasis,
) -> Result<f64> {
    let n = ens.n_steps();
    let n_paths = ens.n_paths();
    check_shape(
        xi.n_paths() == n_paths && xi.n_cols() == n,
        "integrand must be sampled per path and step",
    )?;
    basis.validate(ens.noise_dim(), n_paths)?;
    let mut tail = vec![0.0; n_paths];
    let mut tails: Vec<Vec<f64>> = vec![Vec::new(); n];
    for i in (0..n).rev() {
        let dt = ens.dt(i);
        for (p, t) in tail.iter_mut().enumerate() {
            *t += norm_sq(xi.get(p, i)) * dt;
        }
        tails[i] = tail.clone();
    }
    let mut worst: f64 = 0.0;
    for (i, tail_i) in tails.iter().enumerate() {
        let fit = fit_step(basis, ens.values(), i, std::slice::from_ref(tail_i))?;
        let sup = fit.predictions[0].iter().fold(0.0_f64, |a, &v| a.max(v));
        worst = worst.max(sup);
    }
    Ok(worst.sqrt())
}
