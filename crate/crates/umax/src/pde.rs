//! Finite-difference oracle for one-dimensional Markovian cases.
//!
//! When `m = 1` and `θ` depends on time only, the BSDE solution is
//! `Y_t = u(t, W_t)`, `Z_t = u_w(t, W_t)` for the semilinear backward
//! equation
//!
//! ```text
//! u_t + ½ u_ww − f(t, u_w) = 0,    u(T, w) = F(w),
//! ```
//!
//! the sign of `f` matching the backward equation `Y_t = F − ∫ Z dW − ∫ f ds`
//! (forward drift `+f`).
//!
//! The solver below is an explicit backward sweep with a stability guard
//! (`Δt ≤ Δw²`), one-sided second-order differences for `u_w` at the domain
//! edges and `u_ww = 0` there. It is deliberately simple: its role is to be
//! an independently auditable cross-check for the regression Monte Carlo
//! solver, not a production PDE engine.

use crate::constraint::InducedSet;
use crate::drivers::{Generator, Liability};
use crate::lsmc::{BsdeSolution, SolveDiagnostics};
use crate::market::{MarketModel, PathEnsemble};
use crate::paths::{ScalarPaths, VectorPaths};
use crate::{Error, Result};

/// Space/time grid for the backward sweep.
#[derive(Debug, Clone, Copy)]
pub struct PdeGrid {
    pub w_min: f64,
    pub w_max: f64,
    pub space_nodes: usize,
    pub time_steps: usize,
}

impl PdeGrid {
    /// Grid covering `±6.5 √T` with the time step chosen from the stability
    /// bound.
    pub fn for_horizon(horizon: f64, space_nodes: usize) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::invalid("horizon must be positive"));
        }
        let half = 6.5 * horizon.sqrt();
        let dw = 2.0 * half / (space_nodes.max(3) - 1) as f64;
        let time_steps = (horizon / (dw * dw) * 1.05).ceil() as usize;
        let grid = Self {
            w_min: -half,
            w_max: half,
            space_nodes: space_nodes.max(3),
            time_steps: time_steps.max(1),
        };
        grid.validate(horizon)?;
        Ok(grid)
    }

    pub fn dw(&self) -> f64 {
        (self.w_max - self.w_min) / (self.space_nodes - 1) as f64
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        if self.space_nodes < 3 {
            return Err(Error::invalid("need at least three spatial nodes"));
        }
        if !(self.w_min < 0.0 && self.w_max > 0.0) {
            return Err(Error::invalid("the spatial range must contain 0"));
        }
        let reach = 6.0 * horizon.sqrt();
        if self.w_max < reach || self.w_min > -reach {
            return Err(Error::invalid(format!(
                "spatial range must cover +-{reach:.3} around 0"
            )));
        }
        if self.time_steps == 0 {
            return Err(Error::invalid("need at least one time step"));
        }
        let dt = horizon / self.time_steps as f64;
        let dw = self.dw();
        if dt > dw * dw * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "explicit scheme unstable: dt = {dt:.3e} exceeds dw^2 = {:.3e}",
                dw * dw
            )));
        }
        Ok(())
    }
}

/// Dense solution field of the backward sweep.
#[derive(Debug, Clone)]
pub struct PdeSolution {
    pub grid: PdeGrid,
    /// `time_steps + 1` grid times.
    pub times: Vec<f64>,
    /// `space_nodes` node positions.
    pub nodes: Vec<f64>,
    /// `u` values, row-major `(time level, node)`.
    pub u: Vec<f64>,
    /// `u_w` values, same layout.
    pub uw: Vec<f64>,
    /// `u(0, 0)`.
    pub y0: f64,
}

impl PdeSolution {
    fn level(&self, l: usize) -> &[f64] {
        let m = self.grid.space_nodes;
        &self.u[l * m..(l + 1) * m]
    }

    fn level_uw(&self, l: usize) -> &[f64] {
        let m = self.grid.space_nodes;
        &self.uw[l * m..(l + 1) * m]
    }

    /// Bilinear interpolation of `(Y, Z) = (u, u_w)` at `(t, w)`.
    pub fn evaluate(&self, t: f64, w: f64) -> Result<(f64, f64)> {
        let t_max = *self.times.last().unwrap();
        if !(0.0..=t_max + 1e-12).contains(&t) {
            return Err(Error::invalid(format!("time {t} outside [0, {t_max}]")));
        }
        if w < self.grid.w_min - 1e-12 || w > self.grid.w_max + 1e-12 {
            return Err(Error::invalid(format!(
                "state {w} outside [{}, {}]",
                self.grid.w_min, self.grid.w_max
            )));
        }
        let nt = self.times.len() - 1;
        let dt = t_max / nt as f64;
        let li = ((t / dt).floor() as usize).min(nt - 1);
        let lt = (t - self.times[li]) / dt;
        let dw = self.grid.dw();
        let ji = (((w - self.grid.w_min) / dw).floor() as usize).min(self.grid.space_nodes - 2);
        let lw = (w - self.nodes[ji]) / dw;
        let blend = |a: &[f64], b: &[f64]| {
            let lower = a[ji] * (1.0 - lw) + a[ji + 1] * lw;
            let upper = b[ji] * (1.0 - lw) + b[ji + 1] * lw;
            lower * (1.0 - lt) + upper * lt
        };
        let y = blend(self.level(li), self.level(li + 1));
        let z = blend(self.level_uw(li), self.level_uw(li + 1));
        Ok((y, z))
    }

    /// Samples the field along the paths of an ensemble, yielding a
    /// path-indexed solution the verification layer can consume. States
    /// beyond the spatial range are clamped to the boundary; the terminal
    /// column is taken from the liability directly so the terminal identity
    /// is exact.
    pub fn sample_on_ensemble(
        &self,
        ens: &PathEnsemble,
        terminal: &Liability,
    ) -> Result<BsdeSolution> {
        if ens.noise_dim() != 1 {
            return Err(Error::invalid("the oracle field is one-dimensional"));
        }
        let n = ens.n_steps();
        let n_paths = ens.n_paths();
        let mut y = ScalarPaths::zeros(n_paths, n + 1);
        let mut z = VectorPaths::zeros(n_paths, n, 1);
        let t_max = *self.times.last().unwrap();
        for p in 0..n_paths {
            for i in 0..n {
                let t = ens.times()[i].min(t_max);
                let w = ens.w(p, i)[0].clamp(self.grid.w_min, self.grid.w_max);
                let (yv, zv) = self.evaluate(t, w)?;
                y.set(p, i, yv);
                z.set(p, i, &[zv]);
            }
            y.set(p, n, terminal.evaluate(ens.w(p, n))?);
        }
        let y0 = y.column_mean(0);
        Ok(BsdeSolution {
            times: ens.times().to_vec(),
            y,
            z,
            y0,
            diagnostics: SolveDiagnostics::default(),
        })
    }
}

fn slope_field(u: &[f64], dw: f64, out: &mut [f64]) {
    let m = u.len();
    out[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * dw);
    for j in 1..m - 1 {
        out[j] = (u[j + 1] - u[j - 1]) / (2.0 * dw);
    }
    out[m - 1] = (3.0 * u[m - 1] - 4.0 * u[m - 2] + u[m - 3]) / (2.0 * dw);
}

/// Explicit backward sweep. Requires `m = 1` and `θ` a function of time only.
pub fn solve_bsde_pde(
    model: &MarketModel,
    terminal: &Liability,
    gen: &Generator,
    set: &InducedSet,
    grid: &PdeGrid,
    horizon: f64,
) -> Result<PdeSolution> {
    if model.noise_dim() != 1 || set.dim_image() != 1 {
        return Err(Error::invalid("the oracle handles m = 1 only"));
    }
    grid.validate(horizon)?;
    // theta must not depend on the state
    let probe = model.market_price_of_risk(0.0, &[0.0])?;
    let probe_far = model.market_price_of_risk(0.0, &[grid.w_max])?;
    if (probe[0] - probe_far[0]).abs() > 1e-12 * (1.0 + probe[0].abs()) {
        return Err(Error::invalid(
            "the oracle requires theta independent of the Brownian state",
        ));
    }

    let mn = grid.space_nodes;
    let nt = grid.time_steps;
    let dw = grid.dw();
    let dt = horizon / nt as f64;
    let times: Vec<f64> = (0..=nt).map(|l| horizon * l as f64 / nt as f64).collect();
    let nodes: Vec<f64> = (0..mn).map(|j| grid.w_min + j as f64 * dw).collect();

    let mut u = vec![0.0; (nt + 1) * mn];
    let mut uw = vec![0.0; (nt + 1) * mn];

    for (j, &w) in nodes.iter().enumerate() {
        u[nt * mn + j] = terminal.evaluate(&[w])?;
    }
    slope_field(&u[nt * mn..], dw, &mut uw[nt * mn..]);

    let mut slopes = vec![0.0; mn];
    let mut known = vec![0.0; mn];
    for l in (0..nt).rev() {
        let t_known = times[l + 1];
        let theta = model.market_price_of_risk(t_known, &[0.0])?;
        known.copy_from_slice(&u[(l + 1) * mn..(l + 2) * mn]);
        slope_field(&known, dw, &mut slopes);
        for j in 0..mn {
            let diffusion = if j == 0 || j == mn - 1 {
                0.0
            } else {
                0.5 * (known[j + 1] - 2.0 * known[j] + known[j - 1]) / (dw * dw)
            };
            let f = gen
                .eval(&slopes[j..j + 1], theta.as_slice(), set)
                .map_err(|e| e.at(j, l))?;
            let v = known[j] + dt * (diffusion - f);
            if !v.is_finite() {
                return Err(Error::Divergence {
                    step: l,
                    detail: format!("non-finite value at node {j}"),
                });
            }
            u[l * mn + j] = v;
        }
        slope_field(&u[l * mn..(l + 1) * mn], dw, &mut uw[l * mn..(l + 1) * mn]);
    }

    let mut sol = PdeSolution {
        grid: *grid,
        times,
        nodes,
        u,
        uw,
        y0: 0.0,
    };
    sol.y0 = sol.evaluate(0.0, 0.0)?.0;
    Ok(sol)
}
