//! Strategy assembly, value functions and optimality verification.
//!
//! The optimality certificate is a process `R^{(p)}` built from wealth and
//! the BSDE solution: it is a supermartingale for every admissible strategy
//! and a martingale for the selected strategy, with a strategy-independent
//! initial value. Solving the problem therefore splits into assembling the
//! candidate strategy by projection and probing the certificate numerically:
//! per-step drift statistics, terminal dominance against an adversarial
//! family, the dynamic-programming identity at intermediate times, and
//! admissibility proxies (constraint membership, square integrability, BMO
//! estimates).

use nalgebra::DVector;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::constraint::InducedSet;
use crate::drivers::{driver_log, UtilitySpec};
use crate::lsmc::{bmo_norm_estimate, BsdeSolution, RegressionBasis};
use crate::market::{wealth_amount, wealth_fraction, PathEnsemble};
use crate::paths::{check_shape, dot, norm_sq, ScalarPaths, VectorPaths};
use crate::{Error, Result};

/// Whether strategy values are currency amounts or fractions of wealth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    Amount,
    Fraction,
}

/// A feasible strategy sampled per path and step, together with the
/// strategy-space pullback selected by the projection.
#[derive(Debug, Clone)]
pub struct Strategy {
    /// Values in noise coordinates, elements of `C_t` up to the projection
    /// tolerance.
    pub values: VectorPaths,
    /// The `c` with `σᵀc` equal to the value.
    pub pullback: VectorPaths,
    pub kind: StrategyKind,
}

fn project_field<F>(
    set: &InducedSet,
    kind: StrategyKind,
    n_paths: usize,
    n_steps: usize,
    mut target: F,
) -> Result<Strategy>
where
    F: FnMut(usize, usize) -> DVector<f64>,
{
    let m = set.dim_image();
    let d = set.dim_strategy();
    let mut values = VectorPaths::zeros(n_paths, n_steps, m);
    let mut pullback = VectorPaths::zeros(n_paths, n_steps, d);
    for p in 0..n_paths {
        for i in 0..n_steps {
            let proj = set.project(&target(p, i)).map_err(|e| e.at(p, i))?;
            values.set(p, i, proj.point.as_slice());
            pullback.set(p, i, proj.pullback.as_slice());
        }
    }
    Ok(Strategy {
        values,
        pullback,
        kind,
    })
}

/// `p* ∈ Π_C(Z + θ/α)` per path and step.
pub fn optimal_strategy_exp(
    sol: &BsdeSolution,
    theta: &VectorPaths,
    set: &InducedSet,
    alpha: f64,
) -> Result<Strategy> {
    if !(alpha > 0.0) {
        return Err(Error::invalid("alpha must be positive"));
    }
    check_shape(sol.z.same_shape(theta), "solution and theta grids differ")?;
    let m = theta.dim();
    project_field(
        set,
        StrategyKind::Amount,
        theta.n_paths(),
        theta.n_cols(),
        |p, i| {
            let z = sol.z.get(p, i);
            let th = theta.get(p, i);
            DVector::from_iterator(m, (0..m).map(|j| z[j] + th[j] / alpha))
        },
    )
}

/// `ρ* ∈ Π_C((Z + θ)/(1−γ))` per path and step.
pub fn optimal_strategy_pow(
    sol: &BsdeSolution,
    theta: &VectorPaths,
    set: &InducedSet,
    gamma: f64,
) -> Result<Strategy> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid("gamma must lie in (0, 1)"));
    }
    check_shape(sol.z.same_shape(theta), "solution and theta grids differ")?;
    let m = theta.dim();
    let s = 1.0 / (1.0 - gamma);
    project_field(
        set,
        StrategyKind::Fraction,
        theta.n_paths(),
        theta.n_cols(),
        |p, i| {
            let z = sol.z.get(p, i);
            let th = theta.get(p, i);
            DVector::from_iterator(m, (0..m).map(|j| s * (z[j] + th[j])))
        },
    )
}

/// `ρ* ∈ Π_C(θ)` per step; no BSDE needed.
pub fn optimal_strategy_log(theta: &VectorPaths, set: &InducedSet) -> Result<Strategy> {
    project_field(
        set,
        StrategyKind::Fraction,
        theta.n_paths(),
        theta.n_cols(),
        |p, i| DVector::from_column_slice(theta.get(p, i)),
    )
}

/// `V(x) = −exp(−α(x − y0))`.
pub fn value_exp(x: f64, y0: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::invalid("alpha must be positive"));
    }
    Ok(-(-alpha * (x - y0)).exp())
}

/// `V(x) = x^γ exp(y0)` for `x > 0`.
pub fn value_pow(x: f64, y0: f64, gamma: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::invalid("power utility needs x > 0"));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid("gamma must lie in (0, 1)"));
    }
    Ok(x.powf(gamma) * y0.exp())
}

/// `V(x) = log x + y0` for `x > 0`.
pub fn value_log(x: f64, y0: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::invalid("log utility needs x > 0"));
    }
    Ok(x.ln() + y0)
}

/// The certificate process `R^{(p)}` on the grid.
///
/// * exponential: `R_i = −exp(−α(X_i − Y_i))` with amount wealth;
/// * power: `R_i = x^γ exp(Σ_{j<i} γ(ρ_j·ΔW_j + ρ_j·θ_j Δt_j − ½|ρ_j|²Δt_j) + Y_i)`;
/// * log: `R_i = log x + Y_0 + Σ_{j<i} ((ρ_j+Z_j)·ΔW_j + (−½|ρ_j−θ_j|² + ½|θ_j|² + f_j) Δt_j)`.
///
/// The terminal column reproduces the utility of terminal wealth (net of the
/// liability in the exponential case) path by path.
pub fn r_process(
    utility: &UtilitySpec,
    x: f64,
    strategy: &Strategy,
    sol: &BsdeSolution,
    ens: &PathEnsemble,
    theta: &VectorPaths,
    set: &InducedSet,
) -> Result<ScalarPaths> {
    utility.validate()?;
    let n = ens.n_steps();
    let n_paths = ens.n_paths();
    check_shape(
        strategy.values.n_paths() == n_paths && strategy.values.n_cols() == n,
        "strategy grid differs from the ensemble",
    )?;
    check_shape(
        sol.y.n_paths() == n_paths && sol.y.n_cols() == n + 1,
        "solution grid differs from the ensemble",
    )?;
    let mut r = ScalarPaths::zeros(n_paths, n + 1);
    match *utility {
        UtilitySpec::Exponential { alpha } => {
            if strategy.kind != StrategyKind::Amount {
                return Err(Error::invalid("exponential utility uses amount strategies"));
            }
            let x_paths = wealth_amount(x, &strategy.values, ens, theta)?;
            for p in 0..n_paths {
                for i in 0..=n {
                    r.set(
                        p,
                        i,
                        -(-alpha * (x_paths.get(p, i) - sol.y.get(p, i))).exp(),
                    );
                }
            }
        }
        UtilitySpec::Power { gamma } => {
            if strategy.kind != StrategyKind::Fraction {
                return Err(Error::invalid("power utility uses fraction strategies"));
            }
            if !(x > 0.0) {
                return Err(Error::invalid("power utility needs x > 0"));
            }
            let xg = x.powf(gamma);
            for p in 0..n_paths {
                let mut acc = 0.0;
                r.set(p, 0, xg * (acc + sol.y.get(p, 0)).exp());
                for i in 0..n {
                    let rho = strategy.values.get(p, i);
                    let dt = ens.dt(i);
                    acc += gamma
                        * (dot(rho, ens.dw(p, i)) + dot(rho, theta.get(p, i)) * dt
                            - 0.5 * norm_sq(rho) * dt);
                    r.set(p, i + 1, xg * (acc + sol.y.get(p, i + 1)).exp());
                }
            }
        }
        UtilitySpec::Logarithmic => {
            if strategy.kind != StrategyKind::Fraction {
                return Err(Error::invalid("log utility uses fraction strategies"));
            }
            if !(x > 0.0) {
                return Err(Error::invalid("log utility needs x > 0"));
            }
            let lx = x.ln();
            for p in 0..n_paths {
                let mut acc = lx + sol.y.get(p, 0);
                r.set(p, 0, acc);
                for i in 0..n {
                    let rho = strategy.values.get(p, i);
                    let th = theta.get(p, i);
                    let z = sol.z.get(p, i);
                    let dt = ens.dt(i);
                    let f = driver_log(th, set).map_err(|e| e.at(p, i))?;
                    let mut drift = 0.5 * norm_sq(th) + f;
                    let mut mart = 0.0;
                    for j in 0..rho.len() {
                        let diff = rho[j] - th[j];
                        drift -= 0.5 * diff * diff;
                        mart += (rho[j] + z[j]) * ens.dw(p, i)[j];
                    }
                    acc += mart + drift * dt;
                    r.set(p, i + 1, acc);
                }
            }
        }
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MartingaleVerdict {
    Martingale,
    Supermartingale,
    Violated,
}

/// Per-step drift statistics of a certificate process.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SupermartingaleReport {
    pub times: Vec<f64>,
    /// Cross-path mean of `R_{i+1} − R_i`, one entry per step.
    pub increment_mean: Vec<f64>,
    pub increment_se: Vec<f64>,
    /// Cross-path mean and standard error of `R_i` per grid time.
    pub mean_r: Vec<f64>,
    pub se_r: Vec<f64>,
    pub verdict: MartingaleVerdict,
    /// Some increment is below `−3` standard errors: genuine downward drift.
    pub strict_drift: bool,
    /// `|mean R_i − mean R_0| ≤ 3 se(R_i)` at every grid time.
    pub flat_within_3se: bool,
}

/// Classifies a certificate process from its per-step increments:
/// supermartingale if no mean increment exceeds `+3` standard errors,
/// martingale if in addition every increment is within `±3` standard errors.
pub fn supermartingale_test(r: &ScalarPaths, times: &[f64]) -> Result<SupermartingaleReport> {
    let n = r.n_cols() - 1;
    check_shape(times.len() == n + 1, "times must match the grid")?;
    let n_paths = r.n_paths();
    let mut increment_mean = Vec::with_capacity(n);
    let mut increment_se = Vec::with_capacity(n);
    for i in 0..n {
        let mut mean = 0.0;
        for p in 0..n_paths {
            mean += r.get(p, i + 1) - r.get(p, i);
        }
        mean /= n_paths as f64;
        let mut ss = 0.0;
        for p in 0..n_paths {
            let d = r.get(p, i + 1) - r.get(p, i) - mean;
            ss += d * d;
        }
        let var = if n_paths > 1 {
            ss / (n_paths - 1) as f64
        } else {
            0.0
        };
        increment_mean.push(mean);
        increment_se.push((var / n_paths as f64).sqrt());
    }
    let mut mean_r = Vec::with_capacity(n + 1);
    let mut se_r = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let (m, s) = r.column_mean_se(i);
        mean_r.push(m);
        se_r.push(s);
    }
    // tiny absolute slack so exactly-flat processes classify as martingales
    let slack = 1e-12;
    let mut super_ok = true;
    let mut mart_ok = true;
    let mut strict_drift = false;
    for i in 0..n {
        let lim = 3.0 * increment_se[i] + slack;
        if increment_mean[i] > lim {
            super_ok = false;
        }
        if increment_mean[i].abs() > lim {
            mart_ok = false;
        }
        if increment_mean[i] < -lim {
            strict_drift = true;
        }
    }
    let verdict = if !super_ok {
        MartingaleVerdict::Violated
    } else if mart_ok {
        MartingaleVerdict::Martingale
    } else {
        MartingaleVerdict::Supermartingale
    };
    let flat_within_3se = (0..=n).all(|i| (mean_r[i] - mean_r[0]).abs() <= 3.0 * se_r[i] + slack);
    Ok(SupermartingaleReport {
        times: times.to_vec(),
        increment_mean,
        increment_se,
        mean_r,
        se_r,
        verdict,
        strict_drift,
        flat_within_3se,
    })
}

/// Per-cell statistic of the dynamic-programming residual.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BinStat {
    pub count: usize,
    pub mean_diff: f64,
    pub se: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DynamicCheck {
    pub tau_index: usize,
    pub bins: Vec<BinStat>,
    pub max_abs_mean_diff: f64,
    /// Every cell satisfies `|mean| ≤ 5 se + allowance`.
    pub passed: bool,
    pub allowance: f64,
}

/// Probes the dynamic-programming identity at a grid index: the conditional
/// expectation of terminal utility given the state at `t_τ` must match the
/// value `−exp(−α(X_τ − Y_τ))` (exponential) or `X_τ^γ exp(Y_τ)` (power).
///
/// Conditioning is approximated by quantile cells of the first Brownian
/// coordinate at `t_τ`; the allowance absorbs regression bias of the solved
/// `Y`.
pub fn dynamic_principle_check(
    utility: &UtilitySpec,
    x: f64,
    strategy: &Strategy,
    sol: &BsdeSolution,
    ens: &PathEnsemble,
    theta: &VectorPaths,
    tau_index: usize,
    n_bins: usize,
    allowance: f64,
) -> Result<DynamicCheck> {
    let n = ens.n_steps();
    if tau_index > n {
        return Err(Error::invalid("tau index beyond the grid"));
    }
    let n_paths = ens.n_paths();
    let (g, h): (Vec<f64>, Vec<f64>) = match *utility {
        UtilitySpec::Exponential { alpha } => {
            let xp = wealth_amount(x, &strategy.values, ens, theta)?;
            let g = (0..n_paths)
                .map(|p| -(-alpha * (xp.get(p, n) - sol.y.get(p, n))).exp())
                .collect();
            let h = (0..n_paths)
                .map(|p| -(-alpha * (xp.get(p, tau_index) - sol.y.get(p, tau_index))).exp())
                .collect();
            (g, h)
        }
        UtilitySpec::Power { gamma } => {
            let xp = wealth_fraction(x, &strategy.values, ens, theta)?;
            let g = (0..n_paths)
                .map(|p| xp.get(p, n).powf(gamma) * sol.y.get(p, n).exp())
                .collect();
            let h = (0..n_paths)
                .map(|p| xp.get(p, tau_index).powf(gamma) * sol.y.get(p, tau_index).exp())
                .collect();
            (g, h)
        }
        UtilitySpec::Logarithmic => {
            return Err(Error::invalid(
                "the dynamic principle check covers exponential and power utilities",
            ));
        }
    };
    // quantile cells on the first Brownian coordinate at tau
    let bins = if tau_index == 0 { 1 } else { n_bins.max(1) };
    let mut order: Vec<usize> = (0..n_paths).collect();
    order.sort_by(|&a, &b| {
        ens.w(a, tau_index)[0]
            .partial_cmp(&ens.w(b, tau_index)[0])
            .unwrap()
    });
    let mut stats = Vec::with_capacity(bins);
    let mut max_abs: f64 = 0.0;
    let mut passed = true;
    for c in 0..bins {
        let lo = c * n_paths / bins;
        let hi = ((c + 1) * n_paths / bins).max(lo + 1);
        let members = &order[lo..hi.min(n_paths)];
        let count = members.len();
        let mean: f64 = members.iter().map(|&p| g[p] - h[p]).sum::<f64>() / count as f64;
        let var: f64 = members
            .iter()
            .map(|&p| {
                let d = g[p] - h[p] - mean;
                d * d
            })
            .sum::<f64>()
            / (count.max(2) - 1) as f64;
        let se = (var / count as f64).sqrt();
        max_abs = max_abs.max(mean.abs());
        if mean.abs() > 5.0 * se + allowance {
            passed = false;
        }
        stats.push(BinStat {
            count,
            mean_diff: mean,
            se,
        });
    }
    Ok(DynamicCheck {
        tau_index,
        bins: stats,
        max_abs_mean_diff: max_abs,
        passed,
        allowance,
    })
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MembershipViolation {
    pub path: usize,
    pub step: usize,
    pub distance: f64,
}

/// Numeric admissibility probes for a strategy.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AdmissibilityReport {
    pub membership_ok: bool,
    pub membership_tolerance: f64,
    pub first_violation: Option<MembershipViolation>,
    /// Monte Carlo estimate of `E[∫ |p|² dt]`.
    pub expected_integral_sq: f64,
    pub integral_finite: bool,
    /// Grid estimate of the BMO norm of `∫ p dW`.
    pub bmo_estimate: f64,
    pub bmo_finite: bool,
    pub notes: Vec<String>,
}

/// Checks constraint membership at every path/step, the square-integrability
/// estimate and the BMO proxy.
///
/// The BMO bound is a sufficient condition for admissibility, not the
/// uniform-integrability clause itself; the report says so explicitly.
pub fn admissibility_proxy(
    strategy: &Strategy,
    ens: &PathEnsemble,
    set: &InducedSet,
    basis: &RegressionBasis,
) -> Result<AdmissibilityReport> {
    let n = ens.n_steps();
    let n_paths = ens.n_paths();
    let tol = (10.0 * set.tau_proj()).max(1e-8);
    let mut first_violation = None;
    'outer: for p in 0..n_paths {
        for i in 0..n {
            let v = DVector::from_column_slice(strategy.values.get(p, i));
            let d = set.distance(&v).map_err(|e| e.at(p, i))?;
            if d > tol {
                first_violation = Some(MembershipViolation {
                    path: p,
                    step: i,
                    distance: d,
                });
                break 'outer;
            }
        }
    }
    let mut integral = 0.0;
    for p in 0..n_paths {
        for i in 0..n {
            integral += norm_sq(strategy.values.get(p, i)) * ens.dt(i);
        }
    }
    integral /= n_paths as f64;
    let bmo = bmo_norm_estimate(&strategy.values, ens, basis)?;
    Ok(AdmissibilityReport {
        membership_ok: first_violation.is_none(),
        membership_tolerance: tol,
        first_violation,
        expected_integral_sq: integral,
        integral_finite: integral.is_finite(),
        bmo_estimate: bmo,
        bmo_finite: bmo.is_finite(),
        notes: vec![
            "the BMO estimate is a sufficient-condition proxy for the uniform-integrability \
             clause of admissibility, not that clause itself"
                .to_string(),
            "suprema over stopping times are approximated over grid times only (a lower \
             approximation)"
                .to_string(),
        ],
    })
}

/// Terminal utility samples of a strategy: `−exp(−α(X_T − F))` (amounts),
/// `X_T^γ` (fractions) or `log X_T`. The liability is read from the terminal
/// column of the solved `Y`.
pub fn terminal_utility_samples(
    utility: &UtilitySpec,
    x: f64,
    strategy: &Strategy,
    sol: &BsdeSolution,
    ens: &PathEnsemble,
    theta: &VectorPaths,
) -> Result<Vec<f64>> {
    let n = ens.n_steps();
    match *utility {
        UtilitySpec::Exponential { alpha } => {
            let xp = wealth_amount(x, &strategy.values, ens, theta)?;
            Ok((0..ens.n_paths())
                .map(|p| -(-alpha * (xp.get(p, n) - sol.y.get(p, n))).exp())
                .collect())
        }
        UtilitySpec::Power { gamma } => {
            let xp = wealth_fraction(x, &strategy.values, ens, theta)?;
            Ok((0..ens.n_paths())
                .map(|p| xp.get(p, n).powf(gamma))
                .collect())
        }
        UtilitySpec::Logarithmic => {
            let xp = wealth_fraction(x, &strategy.values, ens, theta)?;
            Ok((0..ens.n_paths()).map(|p| xp.get(p, n).ln()).collect())
        }
    }
}

pub fn mean_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// A named feasible comparison strategy and its terminal utility statistics.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DominanceEntry {
    pub name: String,
    pub mean_utility: f64,
    pub se: f64,
    /// `mean ≤ value + 3 se`.
    pub dominated: bool,
}

/// Builds the adversarial comparison family: the minimal-norm constant, the
/// unconstrained target projected per step, seeded random feasible constants
/// and a feasibility-preserving jitter of the optimal strategy.
pub fn adversarial_family(
    utility: &UtilitySpec,
    sol: &BsdeSolution,
    theta: &VectorPaths,
    set: &InducedSet,
    seed: u64,
) -> Result<Vec<(String, Strategy)>> {
    let n_paths = theta.n_paths();
    let n = theta.n_cols();
    let m = theta.dim();
    let kind = match utility {
        UtilitySpec::Exponential { .. } => StrategyKind::Amount,
        _ => StrategyKind::Fraction,
    };
    let mut family = Vec::new();

    // minimal-norm feasible constant (the zero strategy whenever 0 ∈ C)
    let origin = set.project(&DVector::zeros(m))?;
    family.push((
        if origin.distance <= set.tau_proj() {
            "zero".to_string()
        } else {
            "min_norm".to_string()
        },
        broadcast_constant(&origin.point, &origin.pullback, kind, n_paths, n),
    ));

    // unconstrained one-step target projected pointwise, ignoring Z
    let scale = match *utility {
        UtilitySpec::Exponential { alpha } => 1.0 / alpha,
        UtilitySpec::Power { gamma } => 1.0 / (1.0 - gamma),
        UtilitySpec::Logarithmic => 1.0,
    };
    family.push((
        "projected_merton".to_string(),
        project_field(set, kind, n_paths, n, |p, i| {
            DVector::from_iterator(m, theta.get(p, i).iter().map(|t| t * scale))
        })?,
    ));

    // seeded random feasible constants
    let mut rng = StdRng::seed_from_u64(seed);
    for k in 0..3 {
        let target = DVector::from_iterator(m, (0..m).map(|_| rng.gen_range(-1.0..1.0)));
        let proj = set.project(&target)?;
        family.push((
            format!("feasible_constant_{k}"),
            broadcast_constant(&proj.point, &proj.pullback, kind, n_paths, n),
        ));
    }

    // optimal target plus feasible jitter
    let jitter = 0.25;
    let mut rng = StdRng::seed_from_u64(seed ^ 0xabcd_1234);
    let mut noise = VectorPaths::zeros(n_paths, n, m);
    for p in 0..n_paths {
        for i in 0..n {
            let slot = noise.get_mut(p, i);
            for v in slot.iter_mut() {
                *v = rng.gen_range(-jitter..jitter);
            }
        }
    }
    family.push((
        "jittered_optimal".to_string(),
        project_field(set, kind, n_paths, n, |p, i| {
            let z = sol.z.get(p, i);
            let th = theta.get(p, i);
            let nv = noise.get(p, i);
            DVector::from_iterator(m, (0..m).map(|j| scale.mul_add(th[j], z[j]) + nv[j]))
        })?,
    ));

    Ok(family)
}

fn broadcast_constant(
    point: &DVector<f64>,
    pullback: &DVector<f64>,
    kind: StrategyKind,
    n_paths: usize,
    n_steps: usize,
) -> Strategy {
    let mut values = VectorPaths::zeros(n_paths, n_steps, point.len());
    let mut pb = VectorPaths::zeros(n_paths, n_steps, pullback.len());
    for p in 0..n_paths {
        for i in 0..n_steps {
            values.set(p, i, point.as_slice());
            pb.set(p, i, pullback.as_slice());
        }
    }
    Strategy {
        values,
        pullback: pb,
        kind,
    }
}
