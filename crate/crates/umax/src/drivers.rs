//! Generators of the quadratic BSDEs behind the three utility problems.
//!
//! Each generator is a pure function of `(z, θ_t, C_t)`; time enters only
//! through `θ_t` and the induced set, which are passed explicitly so the
//! regression Monte Carlo solver and the finite-difference oracle share one
//! implementation.
//!
//! * exponential: `f(z) = −(α/2) dist²(z + θ/α, C) + z·θ + |θ|²/(2α)`
//! * power:       `f(z) = (γ(1−γ)/2) dist²((z+θ)/(1−γ), C) − γ|z+θ|²/(2(1−γ)) − ½|z|²`
//! * logarithmic: `f    = ½ dist²(θ, C) − ½|θ|²` (independent of `z`)

use nalgebra::DVector;

use crate::constraint::InducedSet;
use crate::paths::{dot, norm_sq};
use crate::{Error, Result};

/// Which utility the investor maximizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UtilitySpec {
    /// `U(x) = −exp(−αx)`, `α > 0`. Admits a terminal liability.
    Exponential { alpha: f64 },
    /// `U(x) = x^γ / γ`, `0 < γ < 1`.
    Power { gamma: f64 },
    /// `U(x) = log x`.
    Logarithmic,
}

impl UtilitySpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            UtilitySpec::Exponential { alpha } => {
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return Err(Error::invalid("exponential risk aversion must be positive"));
                }
            }
            UtilitySpec::Power { gamma } => {
                if !(gamma.is_finite() && *gamma > 0.0 && *gamma < 1.0) {
                    return Err(Error::invalid("power exponent must lie in (0, 1)"));
                }
            }
            UtilitySpec::Logarithmic => {}
        }
        Ok(())
    }

    pub fn generator(&self) -> Result<Generator> {
        self.validate()?;
        Ok(match *self {
            UtilitySpec::Exponential { alpha } => Generator::Exponential { alpha },
            UtilitySpec::Power { gamma } => Generator::Power { gamma },
            UtilitySpec::Logarithmic => Generator::Logarithmic,
        })
    }
}

/// Bounded terminal liability, evaluated on the terminal Brownian state.
pub struct Liability {
    payoff: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    bound: f64,
}

impl Liability {
    pub fn new(payoff: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>, bound: f64) -> Result<Self> {
        if !(bound.is_finite() && bound >= 0.0) {
            return Err(Error::invalid("liability bound must be finite"));
        }
        Ok(Self { payoff, bound })
    }

    pub fn zero() -> Self {
        Self {
            payoff: Box::new(|_| 0.0),
            bound: 0.0,
        }
    }

    /// `F = clamp(w_j, lo, hi)` on the terminal Brownian coordinate `j`.
    pub fn clipped_coordinate(coord: usize, lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::invalid("clip bounds must be finite with lo <= hi"));
        }
        Self::new(
            Box::new(move |w: &[f64]| w[coord].clamp(lo, hi)),
            lo.abs().max(hi.abs()),
        )
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Evaluates the payoff, rejecting values that violate the declared bound.
    pub fn evaluate(&self, terminal_state: &[f64]) -> Result<f64> {
        let v = (self.payoff)(terminal_state);
        if !v.is_finite() || v.abs() > self.bound * (1.0 + 1e-12) + 1e-300 {
            return Err(Error::invalid(format!(
                "liability value {v} violates declared bound {}",
                self.bound
            )));
        }
        Ok(v)
    }
}

fn target(z: &[f64], theta: &[f64], z_scale: f64, theta_scale: f64) -> DVector<f64> {
    DVector::from_iterator(
        z.len(),
        z.iter()
            .zip(theta)
            .map(|(zi, ti)| z_scale * zi + theta_scale * ti),
    )
}

/// Exponential-utility generator.
pub fn driver_exp(z: &[f64], theta: &[f64], set: &InducedSet, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::invalid("alpha must be positive"));
    }
    let dist = set.distance(&target(z, theta, 1.0, 1.0 / alpha))?;
    Ok(-0.5 * alpha * dist * dist + dot(z, theta) + norm_sq(theta) / (2.0 * alpha))
}

/// Power-utility generator.
pub fn driver_pow(z: &[f64], theta: &[f64], set: &InducedSet, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid("gamma must lie in (0, 1)"));
    }
    let s = 1.0 / (1.0 - gamma);
    let dist = set.distance(&target(z, theta, s, s))?;
    let zt = target(z, theta, 1.0, 1.0);
    Ok(0.5 * gamma * (1.0 - gamma) * dist * dist
        - 0.5 * gamma * s * zt.norm_squared()
        - 0.5 * norm_sq(z))
}

/// Logarithmic-utility generator; does not depend on `z`.
pub fn driver_log(theta: &[f64], set: &InducedSet) -> Result<f64> {
    let dist = set.distance(&DVector::from_column_slice(theta))?;
    Ok(0.5 * dist * dist - 0.5 * norm_sq(theta))
}

/// A driver closed over its utility parameters, dispatched by the solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Generator {
    Exponential { alpha: f64 },
    Power { gamma: f64 },
    Logarithmic,
}

impl Generator {
    pub fn eval(&self, z: &[f64], theta: &[f64], set: &InducedSet) -> Result<f64> {
        match *self {
            Generator::Exponential { alpha } => driver_exp(z, theta, set, alpha),
            Generator::Power { gamma } => driver_pow(z, theta, set, gamma),
            Generator::Logarithmic => driver_log(theta, set),
        }
    }

    /// Evaluates with `z` clamped to the ball `|z| ≤ cap`; the flag reports
    /// whether the clamp was active. The cap guards the backward recursion
    /// against stray regression estimates; the solution itself stays bounded.
    pub fn eval_capped(
        &self,
        z: &[f64],
        theta: &[f64],
        set: &InducedSet,
        cap: f64,
    ) -> Result<(f64, bool)> {
        let nz = norm_sq(z).sqrt();
        if nz <= cap || !self.z_dependent() {
            return Ok((self.eval(z, theta, set)?, false));
        }
        let scale = cap / nz;
        let clamped: Vec<f64> = z.iter().map(|x| x * scale).collect();
        Ok((self.eval(&clamped, theta, set)?, true))
    }

    /// `false` for the logarithmic driver, whose BSDE has `Z ≡ 0`.
    pub fn z_dependent(&self) -> bool {
        !matches!(self, Generator::Logarithmic)
    }

    pub fn utility(&self) -> UtilitySpec {
        match *self {
            Generator::Exponential { alpha } => UtilitySpec::Exponential { alpha },
            Generator::Power { gamma } => UtilitySpec::Power { gamma },
            Generator::Logarithmic => UtilitySpec::Logarithmic,
        }
    }
}

/// Constants `(c0, c1)` with `|f(z)| ≤ c0 + c1|z|²` for all `z`, from the
/// bound `dist²(a, C) ≤ (|a| + k1)²` and the declared `θ` bound.
pub fn growth_constants(gen: &Generator, theta_max: f64, k1: f64) -> Result<(f64, f64)> {
    if !(theta_max.is_finite() && theta_max >= 0.0 && k1.is_finite() && k1 >= 0.0) {
        return Err(Error::invalid("bounds must be finite and nonnegative"));
    }
    Ok(match *gen {
        Generator::Exponential { alpha } => {
            let shift = theta_max / alpha + k1;
            (
                alpha * shift * shift
                    + 0.5 * theta_max * theta_max
                    + theta_max * theta_max / (2.0 * alpha),
                alpha + 0.5,
            )
        }
        Generator::Power { gamma } => {
            let s = gamma / (1.0 - gamma);
            (
                3.0 * s * theta_max * theta_max + gamma * (1.0 - gamma) * k1 * k1,
                3.0 * s + 0.5,
            )
        }
        Generator::Logarithmic => {
            let shift = theta_max + k1;
            (0.5 * shift * shift + 0.5 * theta_max * theta_max, 0.0)
        }
    })
}

/// Difference between the exponential generator and the convex-cone
/// comparison generator `f̄(z) = θ·Π_C(z+θ) − ½|z − Π_C(z+θ)|²` (after the
/// `α`-rescaling that aligns the two conventions). Vanishes on convex cones.
pub fn sekine_exp_residual(
    z: &[f64],
    theta: &[f64],
    cone: &InducedSet,
    alpha: f64,
) -> Result<f64> {
    require_cone(cone)?;
    let z_scaled: Vec<f64> = z.iter().map(|x| x / alpha).collect();
    let lhs = alpha * driver_exp(&z_scaled, theta, cone, alpha)?;
    let pi = cone.project(&target(z, theta, 1.0, 1.0))?.point;
    let z_minus_pi = DVector::from_column_slice(z) - &pi;
    let rhs = dot(theta, pi.as_slice()) - 0.5 * z_minus_pi.norm_squared();
    Ok(lhs - rhs)
}

/// Difference between `(1−γ) g(z/(1−γ))` — with `g` the convex-cone
/// comparison generator — and the power generator. Vanishes on convex cones.
pub fn sekine_pow_residual(
    z: &[f64],
    theta: &[f64],
    cone: &InducedSet,
    gamma: f64,
) -> Result<f64> {
    require_cone(cone)?;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid("gamma must lie in (0, 1)"));
    }
    let om = 1.0 - gamma;
    // g evaluated at z~ = z/(1-γ); its projection argument is z~ + θ/(1-γ).
    let pi = cone.project(&target(z, theta, 1.0 / om, 1.0 / om))?.point;
    let theta_v = DVector::from_column_slice(theta);
    let z_scaled = DVector::from_column_slice(z) / om;
    let g = 0.5 * norm_sq(theta) - 0.5 * (&theta_v - &pi).norm_squared()
        - 0.5 * om * (&z_scaled - &pi).norm_squared();
    let lhs = om * g;
    Ok(lhs - driver_pow(z, theta, cone, gamma)?)
}

fn require_cone(set: &InducedSet) -> Result<()> {
    if set.base().is_convex_cone() {
        Ok(())
    } else {
        Err(Error::invalid("this identity requires a convex cone"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::ConstraintSpec;
    use nalgebra::DVector;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn full_line() -> InducedSet {
        InducedSet::identity(ConstraintSpec::FullSpace { dim: 1 }).unwrap()
    }

    fn point_zero() -> InducedSet {
        InducedSet::identity(ConstraintSpec::FiniteSet {
            points: vec![DVector::zeros(1)],
        })
        .unwrap()
    }

    #[test]
    fn exp_driver_unconstrained() {
        let f = driver_exp(&[0.1], &[0.2], &full_line(), 1.0).unwrap();
        assert!((f - 0.04).abs() < 1e-14);
    }

    #[test]
    fn exp_driver_no_trading() {
        // dist(0.1 + 0.3/2, {0}) = 0.25
        let f = driver_exp(&[0.1], &[0.3], &point_zero(), 2.0).unwrap();
        assert!((f + 0.01).abs() < 1e-14, "f = {f}");
    }

    #[test]
    fn exp_driver_on_the_set() {
        // z = -theta/alpha + c with c in C: distance term vanishes
        let s = InducedSet::identity(ConstraintSpec::FiniteSet {
            points: vec![DVector::from_vec(vec![0.4])],
        })
        .unwrap();
        let alpha = 2.0;
        let theta = [0.3];
        let z = [-(theta[0] / alpha) + 0.4];
        let f = driver_exp(&z, &theta, &s, alpha).unwrap();
        let expect = z[0] * theta[0] + theta[0] * theta[0] / (2.0 * alpha);
        assert!((f - expect).abs() < 1e-14);
    }

    #[test]
    fn pow_driver_unconstrained() {
        let f = driver_pow(&[0.0], &[0.2], &full_line(), 0.5).unwrap();
        assert!((f + 0.02).abs() < 1e-14);
    }

    #[test]
    fn pow_driver_no_trading_vanishes_at_zero() {
        let f = driver_pow(&[0.0], &[0.2], &point_zero(), 0.5).unwrap();
        assert!(f.abs() < 1e-14, "f = {f}");
    }

    #[test]
    fn pow_driver_cone_closed_form() {
        // On a convex cone: f = -γ/(2(1-γ)) |Π(z+θ)|² - ½|z|²
        let cone = InducedSet::identity(ConstraintSpec::NonnegativeOrthant { dim: 2 }).unwrap();
        let gamma = 0.3;
        let z = [0.4, -0.5];
        let theta = [0.1, 0.2];
        let f = driver_pow(&z, &theta, &cone, gamma).unwrap();
        let pi = cone
            .project(&DVector::from_vec(vec![0.5, -0.3]))
            .unwrap()
            .point;
        let expect = -gamma / (2.0 * (1.0 - gamma)) * pi.norm_squared()
            - 0.5 * (z[0] * z[0] + z[1] * z[1]);
        assert!((f - expect).abs() < 1e-12);
    }

    #[test]
    fn log_driver_values() {
        let f = driver_log(&[0.3], &full_line()).unwrap();
        assert!((f + 0.045).abs() < 1e-14);

        let boxed = InducedSet::identity(ConstraintSpec::Box {
            lower: DVector::from_vec(vec![0.0]),
            upper: DVector::from_vec(vec![0.1]),
        })
        .unwrap();
        let f = driver_log(&[0.3], &boxed).unwrap();
        assert!((f + 0.025).abs() < 1e-14);

        // theta inside the set: plain -|theta|^2/2
        let f = driver_log(&[0.05], &boxed).unwrap();
        assert!((f + 0.5 * 0.05 * 0.05).abs() < 1e-14);
    }

    #[test]
    fn exp_driver_upper_bound() {
        let s = point_zero();
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..200 {
            let z = [rng.gen_range(-5.0..5.0)];
            let theta = [rng.gen_range(-1.0..1.0)];
            let alpha = rng.gen_range(0.2..3.0);
            let f = driver_exp(&z, &theta, &s, alpha).unwrap();
            let bound = z[0] * theta[0] + theta[0] * theta[0] / (2.0 * alpha);
            assert!(f <= bound + 1e-12);
        }
    }

    #[test]
    fn driver_monotone_in_set() {
        // C = {0} ⊂ [0, 0.1] ⊂ R enlarges; exp driver must not decrease,
        // log driver must not increase.
        let small = point_zero();
        let mid = InducedSet::identity(ConstraintSpec::Box {
            lower: DVector::from_vec(vec![0.0]),
            upper: DVector::from_vec(vec![0.1]),
        })
        .unwrap();
        let big = full_line();
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..200 {
            let z = [rng.gen_range(-2.0..2.0)];
            let theta = [rng.gen_range(-1.0..1.0)];
            let fe: Vec<f64> = [&small, &mid, &big]
                .iter()
                .map(|s| driver_exp(&z, &theta, s, 1.0).unwrap())
                .collect();
            assert!(fe[0] <= fe[1] + 1e-12 && fe[1] <= fe[2] + 1e-12);
            let fl: Vec<f64> = [&small, &mid, &big]
                .iter()
                .map(|s| driver_log(&theta, s).unwrap())
                .collect();
            assert!(fl[0] >= fl[1] - 1e-12 && fl[1] >= fl[2] - 1e-12);
        }
    }

    #[test]
    fn local_lipschitz_growth_sampled() {
        let s = InducedSet::identity(ConstraintSpec::FiniteSet {
            points: vec![DVector::from_vec(vec![-1.0]), DVector::from_vec(vec![1.0])],
        })
        .unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        let alpha = 1.3;
        let theta = [0.4_f64];
        // c from the triangle-inequality expansion of the squared distance
        let c: f64 = 3.0 * alpha + theta[0].abs() + 2.0;
        for _ in 0..500 {
            let z1 = [rng.gen_range(-3.0..3.0)];
            let z2 = [rng.gen_range(-3.0..3.0)];
            let f1 = driver_exp(&z1, &theta, &s, alpha).unwrap();
            let f2 = driver_exp(&z2, &theta, &s, alpha).unwrap();
            let rhs = c * (1.0 + z1[0].abs() + z2[0].abs()) * (z1[0] - z2[0]).abs();
            assert!((f1 - f2).abs() <= rhs + 1e-12);
        }
    }

    #[test]
    fn growth_constants_dominate_random_search() {
        let sets = [full_line(), point_zero()];
        let mut rng = StdRng::seed_from_u64(4);
        let theta_max = 0.2;
        for set in &sets {
            let k1 = set.k1_bound();
            for gen in [
                Generator::Exponential { alpha: 1.0 },
                Generator::Power { gamma: 0.5 },
                Generator::Logarithmic,
            ] {
                let (c0, c1) = growth_constants(&gen, theta_max, k1).unwrap();
                for _ in 0..2_000 {
                    let scale = 10f64.powf(rng.gen_range(-2.0..3.0));
                    let z = [rng.gen_range(-1.0..1.0) * scale];
                    let theta = [rng.gen_range(-1.0..1.0) * theta_max];
                    let f = gen.eval(&z, &theta, set).unwrap();
                    assert!(
                        f.abs() <= c0 + c1 * z[0] * z[0] + 1e-9,
                        "violation: f = {f}, z = {}, gen = {gen:?}",
                        z[0]
                    );
                }
            }
        }
    }

    #[test]
    fn power_growth_constant_exceeds_term_bounds() {
        let gamma: f64 = 0.5;
        let (_, c1) = growth_constants(&Generator::Power { gamma }, 0.2, 0.0).unwrap();
        let floor = 0.5 + gamma / (2.0 * (1.0 - gamma)) + gamma * (1.0 - gamma);
        assert!(c1 >= floor);
    }

    #[test]
    fn log_growth_constant_is_z_free() {
        let (_, c1) = growth_constants(&Generator::Logarithmic, 0.5, 1.0).unwrap();
        assert_eq!(c1, 0.0);
    }

    #[test]
    fn sekine_exp_residual_vanishes_on_cones() {
        let cone = InducedSet::identity(ConstraintSpec::NonnegativeOrthant { dim: 2 }).unwrap();
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..500 {
            let z = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let theta = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let alpha = rng.gen_range(0.3..3.0);
            let r = sekine_exp_residual(&z, &theta, &cone, alpha).unwrap();
            let scale = 1.0 + norm_sq(&z) + norm_sq(&theta);
            assert!(r.abs() <= 1e-10 * scale, "residual {r}");
        }
    }

    #[test]
    fn sekine_exp_residual_full_space() {
        let s = full_line();
        let r = sekine_exp_residual(&[0.7], &[0.3], &s, 2.0).unwrap();
        assert!(r.abs() < 1e-12);
    }

    #[test]
    fn sekine_exp_residual_z_opposite_theta() {
        let cone = InducedSet::identity(ConstraintSpec::NonnegativeOrthant { dim: 1 }).unwrap();
        let theta = [0.4];
        let z = [-theta[0]];
        let r = sekine_exp_residual(&z, &theta, &cone, 1.5).unwrap();
        assert!(r.abs() < 1e-12);
    }

    #[test]
    fn sekine_pow_residual_vanishes_on_cones() {
        let cone = InducedSet::identity(ConstraintSpec::NonnegativeOrthant { dim: 2 }).unwrap();
        let mut rng = StdRng::seed_from_u64(6);
        for _ in 0..500 {
            let z = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let theta = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let gamma = rng.gen_range(0.05..0.95);
            let r = sekine_pow_residual(&z, &theta, &cone, gamma).unwrap();
            let scale = 1.0 + norm_sq(&z) + norm_sq(&theta);
            assert!(r.abs() <= 1e-10 * scale, "residual {r}");
        }
    }

    #[test]
    fn sekine_pow_residual_interior_and_origin_branches() {
        let cone = InducedSet::identity(ConstraintSpec::NonnegativeOrthant { dim: 1 }).unwrap();
        // z + theta in the cone: projection is the identity
        let r = sekine_pow_residual(&[0.3], &[0.2], &cone, 0.5).unwrap();
        assert!(r.abs() < 1e-12);
        // z + theta strictly negative: projection hits the origin
        let r = sekine_pow_residual(&[-0.5], &[-0.2], &cone, 0.5).unwrap();
        assert!(r.abs() < 1e-12);
    }

    #[test]
    fn residuals_reject_non_cones() {
        let s = InducedSet::identity(ConstraintSpec::FiniteSet {
            points: vec![DVector::from_vec(vec![-1.0]), DVector::from_vec(vec![1.0])],
        })
        .unwrap();
        assert!(sekine_exp_residual(&[0.1], &[0.1], &s, 1.0).is_err());
        assert!(sekine_pow_residual(&[0.1], &[0.1], &s, 0.5).is_err());
    }

    #[test]
    fn capped_evaluation_flags_activation() {
        let s = full_line();
        let gen = Generator::Exponential { alpha: 1.0 };
        let (_, active) = gen.eval_capped(&[100.0], &[0.2], &s, 5.0).unwrap();
        assert!(active);
        let (v_raw, active) = gen.eval_capped(&[0.1], &[0.2], &s, 5.0).unwrap();
        assert!(!active);
        assert!((v_raw - driver_exp(&[0.1], &[0.2], &s, 1.0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn utility_spec_validation() {
        assert!(UtilitySpec::Exponential { alpha: 0.0 }.validate().is_err());
        assert!(UtilitySpec::Power { gamma: 1.0 }.validate().is_err());
        assert!(UtilitySpec::Power { gamma: 0.5 }.validate().is_ok());
        assert!(UtilitySpec::Logarithmic.validate().is_ok());
    }

    #[test]
    fn liability_bound_enforced() {
        let l = Liability::clipped_coordinate(0, -1.0, 1.0).unwrap();
        assert_eq!(l.evaluate(&[3.0]).unwrap(), 1.0);
        assert_eq!(l.bound(), 1.0);
        let bad = Liability::new(Box::new(|w: &[f64]| w[0]), 0.5).unwrap();
        assert!(bad.evaluate(&[2.0]).is_err());
    }
}
