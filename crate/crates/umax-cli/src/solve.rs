//! The `solve` verb: run a scenario end to end and write report files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use umax::drivers::UtilitySpec;
use umax::lsmc::{solve_bsde_lsmc, solve_log_quadrature, BsdeSolution, LsmcOptions};
use umax::market::uniform_grid;
use umax::paths::VectorPaths;
use umax::pde::solve_bsde_pde;
use umax::portfolio::{
    admissibility_proxy, adversarial_family, dynamic_principle_check, mean_se,
    optimal_strategy_exp, optimal_strategy_log, optimal_strategy_pow, r_process,
    supermartingale_test, terminal_utility_samples, value_exp, value_log, value_pow,
    AdmissibilityReport, DominanceEntry, DynamicCheck, Strategy, SupermartingaleReport,
};

use crate::canonical::to_canonical_json;
use crate::scenario::{Resolved, Scenario};

/// Solver-stage failure; the CLI maps it to exit code 3.
#[derive(Debug)]
pub struct SolveError(pub String);

impl std::fmt::Display for SolveError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "solver failure: {}", self.0)
    }
}

impl std::error::Error for SolveError {}

fn fail<T>(e: impl std::fmt::Display) -> Result<T, SolveError> {
    Err(SolveError(e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportFile {
    pub version: String,
    pub config: Scenario,
    pub y0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y0_lsmc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y0_pde: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y0_log_quadrature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_solver_delta: Option<f64>,
    pub value_at_x: f64,
    pub times: Vec<f64>,
    /// Cross-path mean of the solved Y per grid time.
    pub mean_y: Vec<f64>,
    /// Cross-path mean strategy value per step and component.
    pub strategy_mean: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationSection>,
    pub clamp_fraction: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerificationSection {
    pub supermartingale: SupermartingaleReport,
    pub optimal_utility_mean: f64,
    pub optimal_utility_se: f64,
    /// The optimal strategy attains the value within 3 standard errors.
    pub optimal_attains_value: bool,
    pub dominance: Vec<DominanceEntry>,
    pub dynamic: Vec<DynamicCheck>,
    pub admissibility: AdmissibilityReport,
    pub bmo_z: f64,
    pub bmo_strategy: f64,
    pub notes: Vec<String>,
}

pub struct SolveOutcome {
    pub report: ReportFile,
    pub report_path: std::path::PathBuf,
}

pub fn run_solve(resolved: Resolved, out_dir: &Path) -> Result<SolveOutcome, SolveError> {
    let Resolved {
        scenario,
        model,
        set,
        utility,
        liability,
        basis,
        pde_grid,
        run_lsmc,
        run_pde,
    } = resolved;

    let horizon = scenario.grid.horizon;
    let grid = uniform_grid(horizon, scenario.grid.steps).map_err(|e| SolveError(e.to_string()))?;
    let ens = model
        .simulate_brownian(&grid, scenario.mc.paths, scenario.mc.seed)
        .map_err(|e| SolveError(e.to_string()))?;
    let theta = model.theta_on(&ens).map_err(|e| SolveError(e.to_string()))?;

    let gen = utility.generator().map_err(|e| SolveError(e.to_string()))?;
    let opts = LsmcOptions {
        z_cap: scenario.solver.z_cap,
    };

    let mut y0_lsmc = None;
    let mut y0_pde = None;
    let mut lsmc_sol: Option<BsdeSolution> = None;
    let mut pde_backed: Option<BsdeSolution> = None;

    if run_lsmc {
        let sol = match solve_bsde_lsmc(&ens, &liability, &gen, &basis, &theta, &set, &opts) {
            Ok(s) => s,
            Err(e) => return fail(e),
        };
        y0_lsmc = Some(sol.y0);
        lsmc_sol = Some(sol);
    }
    if run_pde {
        let pgrid = pde_grid.expect("validated in resolve");
        let field = match solve_bsde_pde(&model, &liability, &gen, &set, &pgrid, horizon) {
            Ok(f) => f,
            Err(e) => return fail(e),
        };
        y0_pde = Some(field.y0);
        if lsmc_sol.is_none() {
            pde_backed = Some(
                field
                    .sample_on_ensemble(&ens, &liability)
                    .map_err(|e| SolveError(e.to_string()))?,
            );
        }
    }
    let sol = lsmc_sol
        .or(pde_backed)
        .expect("at least one solver runs by validation");

    // for the log utility the value comes from the deterministic quadrature
    let y0_log_quadrature = if matches!(utility, UtilitySpec::Logarithmic) {
        Some(
            solve_log_quadrature(ens.times(), &theta, &set)
                .map_err(|e| SolveError(e.to_string()))?,
        )
    } else {
        None
    };

    let y0 = y0_log_quadrature.or(y0_lsmc).or(y0_pde).unwrap();
    let cross_solver_delta = match (y0_lsmc, y0_pde) {
        (Some(a), Some(b)) => Some((a - b).abs()),
        _ => None,
    };

    let x = scenario.utility.x;
    let value_at_x = match utility {
        UtilitySpec::Exponential { alpha } => value_exp(x, y0, alpha),
        UtilitySpec::Power { gamma } => value_pow(x, y0, gamma),
        UtilitySpec::Logarithmic => value_log(x, y0),
    }
    .map_err(|e| SolveError(e.to_string()))?;

    let strategy = match utility {
        UtilitySpec::Exponential { alpha } => optimal_strategy_exp(&sol, &theta, &set, alpha),
        UtilitySpec::Power { gamma } => optimal_strategy_pow(&sol, &theta, &set, gamma),
        UtilitySpec::Logarithmic => optimal_strategy_log(&theta, &set),
    }
    .map_err(|e| SolveError(e.to_string()))?;

    let mean_y: Vec<f64> = (0..=ens.n_steps()).map(|i| sol.y.column_mean(i)).collect();
    let strategy_mean: Vec<Vec<f64>> = (0..ens.n_steps())
        .map(|i| strategy.values.column_mean(i))
        .collect();

    let verification = if scenario.output.verify {
        Some(
            run_verification(
                &utility,
                x,
                value_at_x,
                &strategy,
                &sol,
                &ens,
                &theta,
                &set,
                &basis,
                scenario.mc.seed,
            )
            .map_err(|e| SolveError(e.to_string()))?,
        )
    } else {
        None
    };

    let clamp_fraction = if sol.diagnostics.driver_evaluations > 0 {
        sol.diagnostics.clamp_activations as f64 / sol.diagnostics.driver_evaluations as f64
    } else {
        0.0
    };

    let report = ReportFile {
        version: env!("CARGO_PKG_VERSION").to_string(),
        y0,
        y0_lsmc,
        y0_pde,
        y0_log_quadrature,
        cross_solver_delta,
        value_at_x,
        times: ens.times().to_vec(),
        mean_y,
        strategy_mean,
        verification,
        clamp_fraction,
        warnings: sol.diagnostics.warnings.clone(),
        config: scenario,
    };

    write_outputs(&report, &sol, &strategy, out_dir).map_err(|e| SolveError(e.to_string()))?;
    let report_path = out_dir.join(format!("{}_report.json", report.config.output.prefix));
    Ok(SolveOutcome {
        report,
        report_path,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_verification(
    utility: &UtilitySpec,
    x: f64,
    value_at_x: f64,
    strategy: &Strategy,
    sol: &BsdeSolution,
    ens: &umax::market::PathEnsemble,
    theta: &VectorPaths,
    set: &umax::constraint::InducedSet,
    basis: &umax::lsmc::RegressionBasis,
    seed: u64,
) -> umax::Result<VerificationSection> {
    let r = r_process(utility, x, strategy, sol, ens, theta, set)?;
    let supermartingale = supermartingale_test(&r, ens.times())?;

    let samples = terminal_utility_samples(utility, x, strategy, sol, ens, theta)?;
    let (optimal_utility_mean, optimal_utility_se) = mean_se(&samples);
    let optimal_attains_value =
        (optimal_utility_mean - value_at_x).abs() <= 3.0 * optimal_utility_se + 1e-12;

    let mut dominance = Vec::new();
    for (name, adversary) in adversarial_family(utility, sol, theta, set, seed)? {
        let s = terminal_utility_samples(utility, x, &adversary, sol, ens, theta)?;
        let (mean, se) = mean_se(&s);
        dominance.push(DominanceEntry {
            name,
            mean_utility: mean,
            se,
            dominated: mean <= value_at_x + 3.0 * se + 1e-12,
        });
    }

    let mut dynamic = Vec::new();
    if !matches!(utility, UtilitySpec::Logarithmic) {
        let n = ens.n_steps();
        let allowance = 5e-3 * (1.0 + value_at_x.abs());
        for tau in [0, n / 4, n / 2, 3 * n / 4, n] {
            dynamic.push(dynamic_principle_check(
                utility, x, strategy, sol, ens, theta, tau, 8, allowance,
            )?);
        }
    }

    let admissibility = admissibility_proxy(strategy, ens, set, basis)?;
    let bmo_z = umax::lsmc::bmo_norm_estimate(&sol.z, ens, basis)?;
    let bmo_strategy = umax::lsmc::bmo_norm_estimate(&strategy.values, ens, basis)?;

    Ok(VerificationSection {
        supermartingale,
        optimal_utility_mean,
        optimal_utility_se,
        optimal_attains_value,
        dominance,
        dynamic,
        admissibility,
        bmo_z,
        bmo_strategy,
        notes: vec![
            "admissibility is probed through sufficient conditions (BMO estimate), not the \
             uniform-integrability definition itself"
                .to_string(),
            "stopping times are restricted to grid indices in all suprema".to_string(),
        ],
    })
}

fn write_outputs(
    report: &ReportFile,
    sol: &BsdeSolution,
    strategy: &Strategy,
    out_dir: &Path,
) -> std::io::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let prefix = &report.config.output.prefix;

    let value = serde_json::to_value(report).expect("report serializes");
    std::fs::write(
        out_dir.join(format!("{prefix}_report.json")),
        to_canonical_json(&value),
    )?;

    std::fs::write(
        out_dir.join(format!("{prefix}_series.csv")),
        crate::plotdata::series_csv(report),
    )?;

    let diag = serde_json::json!({
        "regression_rms": sol.diagnostics.regression_rms,
        "condition_numbers": sol.diagnostics.condition_numbers,
        "effective_ranks": sol.diagnostics.effective_ranks,
        "clamp_activations": sol.diagnostics.clamp_activations,
        "driver_evaluations": sol.diagnostics.driver_evaluations,
        "z_cap": sol.diagnostics.z_cap,
        "envelope_bound": sol.diagnostics.envelope_bound,
        "max_abs_y": sol.diagnostics.max_abs_y,
        "warnings": sol.diagnostics.warnings,
    });
    std::fs::write(
        out_dir.join(format!("{prefix}_diagnostics.json")),
        to_canonical_json(&diag),
    )?;

    if report.config.output.export_solution {
        let mut csv = String::from("# BSDE solution: one row per (time, path)\n");
        csv.push_str("t,path,y");
        for j in 0..sol.z.dim() {
            csv.push_str(&format!(",z{j}"));
        }
        csv.push('\n');
        for i in 0..sol.y.n_cols() {
            for p in 0..sol.y.n_paths() {
                csv.push_str(&format!("{},{},{}", sol.times[i], p, sol.y.get(p, i)));
                for j in 0..sol.z.dim() {
                    let z = if i < sol.z.n_cols() {
                        sol.z.get(p, i)[j]
                    } else {
                        f64::NAN
                    };
                    csv.push_str(&format!(",{z}"));
                }
                csv.push('\n');
            }
        }
        std::fs::write(out_dir.join(format!("{prefix}_solution.csv")), csv)?;
    }

    if report.config.output.export_strategy {
        let mut csv = String::from("# strategy values and pullbacks: one row per (time, path)\n");
        csv.push_str("t,path");
        for j in 0..strategy.values.dim() {
            csv.push_str(&format!(",p{j}"));
        }
        for j in 0..strategy.pullback.dim() {
            csv.push_str(&format!(",c{j}"));
        }
        csv.push('\n');
        for i in 0..strategy.values.n_cols() {
            for p in 0..strategy.values.n_paths() {
                csv.push_str(&format!("{},{}", sol.times[i], p));
                for v in strategy.values.get(p, i) {
                    csv.push_str(&format!(",{v}"));
                }
                for v in strategy.pullback.get(p, i) {
                    csv.push_str(&format!(",{v}"));
                }
                csv.push('\n');
            }
        }
        std::fs::write(out_dir.join(format!("{prefix}_strategy.csv")), csv)?;
    }
    Ok(())
}
