//! Scenario configuration: JSON schema, validation and construction of the
//! library objects a run needs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use umax::constraint::{ConstraintSpec, InducedSet};
use umax::drivers::{Liability, UtilitySpec};
use umax::lsmc::RegressionBasis;
use umax::market::MarketModel;
use umax::pde::PdeGrid;

/// A validation failure; the CLI maps it to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid scenario: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub market: MarketBlock,
    pub grid: GridBlock,
    pub mc: McBlock,
    pub utility: UtilityBlock,
    #[serde(default)]
    pub liability: LiabilityBlock,
    pub constraint: ConstraintBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketBlock {
    pub d: usize,
    pub m: usize,
    pub b: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub epsilon: f64,
    #[serde(rename = "K")]
    pub k_upper: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McBlock {
    pub paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityBlock {
    /// "exponential", "power" or "log".
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Initial wealth the value function is reported at.
    pub x: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiabilityBlock {
    /// "zero" or "clip_w" (clipped terminal Brownian coordinate).
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    #[serde(default)]
    pub coord: usize,
}

impl Default for LiabilityBlock {
    fn default() -> Self {
        Self {
            id: "zero".to_string(),
            lo: None,
            hi: None,
            coord: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintBlock {
    /// "full_space", "finite_set", "box", "orthant", "generated_cone" or
    /// "custom_grid".
    pub kind: String,
    /// Box bounds; `null` entries mean unbounded on that side.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generators: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    /// "lsmc", "pde" or "both".
    pub method: String,
    pub basis: BasisBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_cap: Option<f64>,
    pub tau_proj: f64,
    /// Reserved for an iterated scheme; must be 0.
    #[serde(default)]
    pub picard: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pde: Option<PdeBlock>,
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self {
            method: "lsmc".to_string(),
            basis: BasisBlock::default(),
            z_cap: None,
            tau_proj: 1e-10,
            picard: 0,
            pde: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisBlock {
    /// "polynomial" or "bins".
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_dim: Option<usize>,
}

impl Default for BasisBlock {
    fn default() -> Self {
        Self {
            kind: "polynomial".to_string(),
            degree: Some(2),
            per_dim: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeBlock {
    pub w_min: f64,
    pub w_max: f64,
    pub space_nodes: usize,
    pub time_steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub prefix: String,
    #[serde(default)]
    pub export_solution: bool,
    #[serde(default)]
    pub export_strategy: bool,
    /// Run the verification battery and embed it in the report.
    pub verify: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            prefix: "scenario".to_string(),
            export_solution: false,
            export_strategy: false,
            verify: true,
        }
    }
}

/// Everything a solve run needs, constructed from a validated scenario.
pub struct Resolved {
    pub scenario: Scenario,
    pub model: MarketModel,
    pub set: InducedSet,
    pub utility: UtilitySpec,
    pub liability: Liability,
    pub basis: RegressionBasis,
    pub pde_grid: Option<PdeGrid>,
    pub run_lsmc: bool,
    pub run_pde: bool,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))
    }

    /// Cross-field validation and construction of the library objects.
    pub fn resolve(mut self, seed_override: Option<u64>) -> Result<Resolved, ConfigError> {
        if let Some(seed) = seed_override {
            self.mc.seed = seed;
        }
        let mk = &self.market;
        if mk.d == 0 || mk.m == 0 || mk.d > mk.m {
            return err(format!("market needs 1 <= d <= m, got d={}, m={}", mk.d, mk.m));
        }
        if mk.b.len() != mk.d {
            return err("market.b must have length d");
        }
        if mk.sigma.len() != mk.d || mk.sigma.iter().any(|row| row.len() != mk.m) {
            return err("market.sigma must be a d x m matrix");
        }
        if !(self.grid.horizon > 0.0) || self.grid.steps == 0 {
            return err("grid needs T > 0 and steps >= 1");
        }
        if self.mc.paths == 0 {
            return err("mc.paths must be >= 1");
        }

        let utility = match self.utility.kind.as_str() {
            "exponential" => {
                let alpha = self
                    .utility
                    .alpha
                    .ok_or_else(|| ConfigError("exponential utility needs alpha".into()))?;
                UtilitySpec::Exponential { alpha }
            }
            "power" => {
                let gamma = self
                    .utility
                    .gamma
                    .ok_or_else(|| ConfigError("power utility needs gamma".into()))?;
                UtilitySpec::Power { gamma }
            }
            "log" => UtilitySpec::Logarithmic,
            other => return err(format!("unknown utility kind '{other}'")),
        };
        utility.validate().map_err(|e| ConfigError(e.to_string()))?;
        match utility {
            UtilitySpec::Exponential { .. } => {
                if self.utility.gamma.is_some() {
                    return err("exponential utility does not take gamma");
                }
            }
            UtilitySpec::Power { .. } | UtilitySpec::Logarithmic => {
                if self.utility.alpha.is_some() {
                    return err("only exponential utility takes alpha");
                }
                if matches!(utility, UtilitySpec::Logarithmic) && self.utility.gamma.is_some() {
                    return err("log utility takes no exponent");
                }
                if !(self.utility.x > 0.0) {
                    return err("power and log utilities need initial wealth x > 0");
                }
                if self.liability.id != "zero" {
                    return err(
                        "power and log utilities are defined without a terminal liability; \
                         use \"liability\": {\"id\": \"zero\"}",
                    );
                }
            }
        }

        let liability = match self.liability.id.as_str() {
            "zero" => Liability::zero(),
            "clip_w" => {
                let lo = self
                    .liability
                    .lo
                    .ok_or_else(|| ConfigError("clip_w liability needs lo".into()))?;
                let hi = self
                    .liability
                    .hi
                    .ok_or_else(|| ConfigError("clip_w liability needs hi".into()))?;
                if self.liability.coord >= mk.m {
                    return err("clip_w coordinate outside the Brownian dimension");
                }
                Liability::clipped_coordinate(self.liability.coord, lo, hi)
                    .map_err(|e| ConfigError(e.to_string()))?
            }
            other => return err(format!("unknown liability id '{other}'")),
        };

        let spec = self.constraint_spec()?;
        let sigma = DMatrix::from_fn(mk.d, mk.m, |i, j| mk.sigma[i][j]);
        if self.solver.tau_proj <= 0.0 || self.solver.tau_proj > 1e-2 {
            return err("solver.tau_proj must lie in (0, 1e-2]");
        }
        if self.solver.picard != 0 {
            return err("solver.picard is reserved and must be 0");
        }
        let set = InducedSet::new(spec, sigma.clone())
            .map_err(|e| ConfigError(e.to_string()))?
            .with_tolerance(self.solver.tau_proj, 10_000);

        let model = MarketModel::constant(
            DVector::from_vec(mk.b.clone()),
            sigma,
            mk.epsilon,
            mk.k_upper,
        )
        .map_err(|e| ConfigError(e.to_string()))?;
        let sample: Vec<(f64, Vec<f64>)> = vec![
            (0.0, vec![0.0; mk.m]),
            (self.grid.horizon, vec![1.0; mk.m]),
        ];
        let report = model.validate(&sample);
        if !report.passed {
            return err(format!(
                "declared ellipticity constants fail on the model: {}",
                report.failures.join("; ")
            ));
        }

        let basis = match self.solver.basis.kind.as_str() {
            "polynomial" => RegressionBasis::polynomial(self.solver.basis.degree.unwrap_or(2)),
            "bins" => RegressionBasis::bins(self.solver.basis.per_dim.unwrap_or(6)),
            other => return err(format!("unknown basis kind '{other}'")),
        };

        let (run_lsmc, run_pde) = match self.solver.method.as_str() {
            "lsmc" => (true, false),
            "pde" => (false, true),
            "both" => (true, true),
            other => return err(format!("unknown solver method '{other}'")),
        };
        let pde_grid = if run_pde {
            if mk.m != 1 {
                return err("the pde solver requires m = 1");
            }
            let grid = match &self.solver.pde {
                Some(p) => PdeGrid {
                    w_min: p.w_min,
                    w_max: p.w_max,
                    space_nodes: p.space_nodes,
                    time_steps: p.time_steps,
                },
                None => PdeGrid::for_horizon(self.grid.horizon, 400)
                    .map_err(|e| ConfigError(e.to_string()))?,
            };
            grid.validate(self.grid.horizon)
                .map_err(|e| ConfigError(e.to_string()))?;
            Some(grid)
        } else {
            None
        };

        Ok(Resolved {
            model,
            set,
            utility,
            liability,
            basis,
            pde_grid,
            run_lsmc,
            run_pde,
            scenario: self,
        })
    }

    fn constraint_spec(&self) -> Result<ConstraintSpec, ConfigError> {
        let c = &self.constraint;
        let d = self.market.d;
        let to_points = |points: &Option<Vec<Vec<f64>>>, what: &str| {
            points
                .as_ref()
                .ok_or_else(|| ConfigError(format!("constraint '{what}' needs points")))
                .map(|ps| {
                    ps.iter()
                        .map(|p| DVector::from_vec(p.clone()))
                        .collect::<Vec<_>>()
                })
        };
        let spec = match c.kind.as_str() {
            "full_space" => ConstraintSpec::FullSpace { dim: d },
            "orthant" => ConstraintSpec::NonnegativeOrthant { dim: d },
            "finite_set" => ConstraintSpec::FiniteSet {
                points: to_points(&c.points, "finite_set")?,
            },
            "custom_grid" => ConstraintSpec::CustomGrid {
                points: to_points(&c.points, "custom_grid")?,
                resolution: c.resolution.unwrap_or(1.0),
            },
            "box" => {
                let lower = c
                    .lower
                    .as_ref()
                    .ok_or_else(|| ConfigError("box constraint needs lower".into()))?;
                let upper = c
                    .upper
                    .as_ref()
                    .ok_or_else(|| ConfigError("box constraint needs upper".into()))?;
                let lo = DVector::from_iterator(
                    lower.len(),
                    lower.iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)),
                );
                let hi = DVector::from_iterator(
                    upper.len(),
                    upper.iter().map(|v| v.unwrap_or(f64::INFINITY)),
                );
                ConstraintSpec::Box {
                    lower: lo,
                    upper: hi,
                }
            }
            "generated_cone" => {
                let gens = c
                    .generators
                    .as_ref()
                    .ok_or_else(|| ConfigError("generated_cone needs generators".into()))?;
                ConstraintSpec::GeneratedCone {
                    generators: gens.iter().map(|g| DVector::from_vec(g.clone())).collect(),
                }
            }
            other => return err(format!("unknown constraint kind '{other}'")),
        };
        if spec.dim() != d {
            return err(format!(
                "constraint dimension {} does not match market d = {d}",
                spec.dim()
            ));
        }
        spec.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(spec)
    }
}
