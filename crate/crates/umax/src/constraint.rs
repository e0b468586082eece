//! Closed constraint sets and projections onto their volatility images.
//!
//! A constraint confines strategies to a closed set `C` in strategy space
//! `R^d`. What solvers actually need is the image `C σ = {σᵀc : c ∈ C}` in
//! noise space `R^m`, together with distances to it and a deterministic
//! selection from the (possibly multi-valued, for non-convex `C`) projection.
//!
//! Projection is solved in strategy space: minimizing `|σᵀc − a|²` over
//! `c ∈ C` is a quadratic with Gram matrix `σσᵀ`. Exact routes exist for the
//! full space (least squares), finite sets (enumeration), boxes and orthants
//! with diagonal Gram (componentwise clamp) and finitely generated cones
//! (active-set nonnegative least squares). A projected gradient fallback
//! covers boxes with non-diagonal Gram.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result};

/// Closed subset of strategy space `R^d`.
#[derive(Debug, Clone)]
pub enum ConstraintSpec {
    /// All of `R^d` (unconstrained trading).
    FullSpace { dim: usize },
    /// A finite list of admissible strategy vectors.
    FiniteSet { points: Vec<DVector<f64>> },
    /// Componentwise bounds; entries may be `±inf`.
    Box {
        lower: DVector<f64>,
        upper: DVector<f64>,
    },
    /// `{c : c ≥ 0}` (no short selling).
    NonnegativeOrthant { dim: usize },
    /// `{Σ λ_i g_i : λ_i ≥ 0}` for nonzero generators `g_i`.
    GeneratedCone { generators: Vec<DVector<f64>> },
    /// A finite point list tagged with the spacing it was sampled at.
    CustomGrid {
        points: Vec<DVector<f64>>,
        resolution: f64,
    },
}

impl ConstraintSpec {
    pub fn dim(&self) -> usize {
        match self {
            ConstraintSpec::FullSpace { dim } | ConstraintSpec::NonnegativeOrthant { dim } => *dim,
            ConstraintSpec::FiniteSet { points } | ConstraintSpec::CustomGrid { points, .. } => {
                points.first().map_or(0, |p| p.len())
            }
            ConstraintSpec::Box { lower, .. } => lower.len(),
            ConstraintSpec::GeneratedCone { generators } => {
                generators.first().map_or(0, |g| g.len())
            }
        }
    }

    /// Checks that the variant denotes a nonempty closed set.
    pub fn validate(&self) -> Result<()> {
        match self {
            ConstraintSpec::FullSpace { dim } | ConstraintSpec::NonnegativeOrthant { dim } => {
                if *dim == 0 {
                    return Err(Error::invalid("constraint dimension must be positive"));
                }
            }
            ConstraintSpec::FiniteSet { points } | ConstraintSpec::CustomGrid { points, .. } => {
                if points.is_empty() {
                    return Err(Error::invalid("point list must be nonempty"));
                }
                let d = points[0].len();
                for p in points {
                    if p.len() != d {
                        return Err(Error::invalid("point dimensions differ"));
                    }
                    if !p.iter().all(|x| x.is_finite()) {
                        return Err(Error::invalid("points must be finite"));
                    }
                }
            }
            ConstraintSpec::Box { lower, upper } => {
                if lower.len() != upper.len() || lower.is_empty() {
                    return Err(Error::invalid("box bounds must share a positive dimension"));
                }
                for (l, u) in lower.iter().zip(upper.iter()) {
                    if l.is_nan() || u.is_nan() || l > u {
                        return Err(Error::invalid("box requires lower <= upper componentwise"));
                    }
                }
            }
            ConstraintSpec::GeneratedCone { generators } => {
                if generators.is_empty() {
                    return Err(Error::invalid("cone needs at least one generator"));
                }
                let d = generators[0].len();
                for g in generators {
                    if g.len() != d {
                        return Err(Error::invalid("generator dimensions differ"));
                    }
                    if g.norm() == 0.0 || !g.iter().all(|x| x.is_finite()) {
                        return Err(Error::invalid("generators must be nonzero and finite"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Whether the set is a convex cone (so that positive homogeneity of the
    /// projection applies).
    pub fn is_convex_cone(&self) -> bool {
        match self {
            ConstraintSpec::FullSpace { .. }
            | ConstraintSpec::NonnegativeOrthant { .. }
            | ConstraintSpec::GeneratedCone { .. } => true,
            ConstraintSpec::FiniteSet { points } | ConstraintSpec::CustomGrid { points, .. } => {
                points.iter().all(|p| p.norm() == 0.0)
            }
            ConstraintSpec::Box { lower, upper } => lower.iter().zip(upper.iter()).all(|(&l, &u)| {
                (l == 0.0 || l == f64::NEG_INFINITY) && (u == 0.0 || u == f64::INFINITY)
            }),
        }
    }

    /// Whether the set is bounded (no truncation needed in `grid_select`).
    pub fn is_bounded(&self) -> bool {
        match self {
            ConstraintSpec::FullSpace { .. }
            | ConstraintSpec::NonnegativeOrthant { .. }
            | ConstraintSpec::GeneratedCone { .. } => false,
            ConstraintSpec::FiniteSet { .. } | ConstraintSpec::CustomGrid { .. } => true,
            ConstraintSpec::Box { lower, upper } => {
                lower.iter().all(|x| x.is_finite()) && upper.iter().all(|x| x.is_finite())
            }
        }
    }
}

/// One selected point of the projection set, reported both as the image point
/// in `R^m` and as the strategy-space pullback achieving it.
#[derive(Debug, Clone)]
pub struct Projection {
    /// The projected point `σᵀc* ∈ R^m`.
    pub point: DVector<f64>,
    /// The selected `c* ∈ C ⊆ R^d`.
    pub pullback: DVector<f64>,
    /// `|a − point|`.
    pub distance: f64,
}

/// The image `C σ_t` of a closed constraint set under a volatility matrix,
/// with cached Gram factorization and projection tolerances.
#[derive(Debug, Clone)]
pub struct InducedSet {
    base: ConstraintSpec,
    /// `d × m`, full row rank.
    sigma: DMatrix<f64>,
    /// `σσᵀ`, `d × d`, positive definite.
    gram: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    /// `Some(diag)` when the Gram matrix is numerically diagonal.
    gram_diag: Option<DVector<f64>>,
    lambda_max: f64,
    /// Bound on `min{|a| : a ∈ Cσ}`; equals the distance from the origin.
    k1_bound: f64,
    tau_proj: f64,
    max_iterations: usize,
}

impl InducedSet {
    pub fn new(base: ConstraintSpec, sigma: DMatrix<f64>) -> Result<Self> {
        base.validate()?;
        let d = base.dim();
        let m = sigma.ncols();
        if sigma.nrows() != d {
            return Err(Error::invalid(format!(
                "sigma has {} rows but the constraint lives in R^{d}",
                sigma.nrows()
            )));
        }
        if d > m {
            return Err(Error::invalid(format!(
                "need d <= m for full row rank, got d={d}, m={m}"
            )));
        }
        if !sigma.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("sigma entries must be finite"));
        }
        let gram = &sigma * sigma.transpose();
        let chol = Cholesky::new(gram.clone())
            .ok_or_else(|| Error::invalid("sigma is not of full row rank"))?;
        let max_diag = (0..d).map(|i| gram[(i, i)].abs()).fold(0.0_f64, f64::max);
        let max_off = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| gram[(i, j)].abs())
            .fold(0.0_f64, f64::max);
        let gram_diag = if max_off <= 1e-13 * max_diag.max(1.0) {
            Some(DVector::from_iterator(d, (0..d).map(|i| gram[(i, i)])))
        } else {
            None
        };
        let lambda_max = gram
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(0.0_f64, |acc, &x| acc.max(x));
        let mut set = Self {
            base,
            sigma,
            gram,
            chol,
            gram_diag,
            lambda_max,
            k1_bound: f64::NAN,
            tau_proj: 1e-10,
            max_iterations: 10_000,
        };
        set.k1_bound = set.distance(&DVector::zeros(m))?;
        Ok(set)
    }

    /// Builds the image under the identity volatility (`C` itself).
    pub fn identity(base: ConstraintSpec) -> Result<Self> {
        let d = base.dim();
        Self::new(base, DMatrix::identity(d, d))
    }

    pub fn with_tolerance(mut self, tau_proj: f64, max_iterations: usize) -> Self {
        self.tau_proj = tau_proj;
        self.max_iterations = max_iterations;
        self
    }

    pub fn base(&self) -> &ConstraintSpec {
        &self.base
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn k1_bound(&self) -> f64 {
        self.k1_bound
    }

    pub fn tau_proj(&self) -> f64 {
        self.tau_proj
    }

    /// Strategy dimension `d`.
    pub fn dim_strategy(&self) -> usize {
        self.sigma.nrows()
    }

    /// Noise dimension `m`.
    pub fn dim_image(&self) -> usize {
        self.sigma.ncols()
    }

    fn image_of(&self, c: &DVector<f64>) -> DVector<f64> {
        self.sigma.transpose() * c
    }

    fn check_input(&self, a: &DVector<f64>) -> Result<()> {
        if a.len() != self.dim_image() {
            return Err(Error::invalid(format!(
                "point has dimension {}, expected {}",
                a.len(),
                self.dim_image()
            )));
        }
        if !a.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("point must be finite"));
        }
        Ok(())
    }

    /// Distance from `a` to the image set.
    pub fn distance(&self, a: &DVector<f64>) -> Result<f64> {
        Ok(self.project(a)?.distance)
    }

    /// Deterministic selection from the projection of `a` onto the image set.
    ///
    /// Ties between equally close candidates of non-convex variants are broken
    /// toward the lexicographically smallest pullback (finite sets) or the
    /// smallest enumeration index (custom grids), so the selection is a pure
    /// function of its inputs.
    pub fn project(&self, a: &DVector<f64>) -> Result<Projection> {
        self.check_input(a)?;
        let c = match &self.base {
            ConstraintSpec::FullSpace { .. } => self.chol.solve(&(&self.sigma * a)),
            ConstraintSpec::FiniteSet { points } => {
                self.enumerate_points(a, points, TieBreak::Lexicographic)?
            }
            ConstraintSpec::CustomGrid { points, .. } => {
                self.enumerate_points(a, points, TieBreak::FirstIndex)?
            }
            ConstraintSpec::Box { lower, upper } => self.project_box(a, lower, upper)?,
            ConstraintSpec::NonnegativeOrthant { dim } => {
                let lower = DVector::zeros(*dim);
                let upper = DVector::from_element(*dim, f64::INFINITY);
                self.project_box(a, &lower, &upper)?
            }
            ConstraintSpec::GeneratedCone { generators } => {
                let cols: Vec<DVector<f64>> =
                    generators.iter().map(|g| self.image_of(g)).collect();
                let amat = DMatrix::from_columns(&cols);
                let lambda = nnls(&amat, a)?;
                let mut c = DVector::zeros(self.dim_strategy());
                for (g, &l) in generators.iter().zip(lambda.iter()) {
                    c += g * l;
                }
                c
            }
        };
        let point = self.image_of(&c);
        let distance = (a - &point).norm();
        Ok(Projection {
            point,
            pullback: c,
            distance,
        })
    }

    fn enumerate_points(
        &self,
        a: &DVector<f64>,
        points: &[DVector<f64>],
        tie: TieBreak,
    ) -> Result<DVector<f64>> {
        let mut best: Option<(f64, &DVector<f64>)> = None;
        for p in points {
            let d2 = (a - self.image_of(p)).norm_squared();
            best = match best {
                None => Some((d2, p)),
                Some((bd2, bp)) => {
                    if d2 < bd2 || (d2 == bd2 && tie == TieBreak::Lexicographic && lex_less(p, bp))
                    {
                        Some((d2, p))
                    } else {
                        Some((bd2, bp))
                    }
                }
            };
        }
        Ok(best.expect("validated nonempty").1.clone())
    }

    fn project_box(
        &self,
        a: &DVector<f64>,
        lower: &DVector<f64>,
        upper: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let h = &self.sigma * a;
        if let Some(diag) = &self.gram_diag {
            let mut c = DVector::zeros(lower.len());
            for j in 0..lower.len() {
                c[j] = (h[j] / diag[j]).clamp(lower[j], upper[j]);
            }
            return Ok(c);
        }
        // Non-diagonal Gram: projected gradient with step 1/λ_max. The
        // objective is strongly convex (Gram is positive definite), so the
        // iteration contracts.
        let clamp = |v: &mut DVector<f64>| {
            for j in 0..v.len() {
                v[j] = v[j].clamp(lower[j], upper[j]);
            }
        };
        let step = 1.0 / self.lambda_max;
        let mut c = self.chol.solve(&h);
        clamp(&mut c);
        for _ in 0..self.max_iterations {
            let grad = &self.gram * &c - &h;
            let mut next = &c - grad * step;
            clamp(&mut next);
            let delta = (&next - &c).amax();
            c = next;
            if delta <= self.tau_proj {
                return Ok(c);
            }
        }
        Err(Error::ConvergenceFailure {
            best: (a - self.image_of(&c)).norm(),
            iterations: self.max_iterations,
        })
    }

    /// `⟨Π(a), a − Π(a)⟩`, which vanishes when the set is a convex cone.
    pub fn cone_identity_residual(&self, a: &DVector<f64>) -> Result<f64> {
        if !self.base.is_convex_cone() {
            return Err(Error::invalid(
                "cone identity requires a convex cone variant",
            ));
        }
        let proj = self.project(a)?;
        Ok(proj.point.dot(&(a - &proj.point)))
    }

    /// Constructive selection rule on a lattice of spacing `1/n`: among the
    /// lattice points within `1/n` of the (possibly truncated) image set,
    /// returns the one closest to `a`, ties broken by the smallest enumeration
    /// index. The returned point `g` satisfies `||g − a| − dist(a, Cσ)| ≤ 2/n`.
    ///
    /// Unbounded variants must be truncated by a strategy-space radius `r`.
    pub fn grid_select(&self, a: &DVector<f64>, n: u32, r: Option<f64>) -> Result<DVector<f64>> {
        self.check_input(a)?;
        if n == 0 {
            return Err(Error::invalid("resolution index must be >= 1"));
        }
        let m = self.dim_image();
        if m > 4 {
            return Err(Error::invalid(
                "grid selection supports image dimension <= 4",
            ));
        }
        let oracle = self.truncated_oracle(r)?;
        let h = 1.0 / n as f64;
        let dist_a = oracle.distance(self, a)?;
        let radius = dist_a + 1.5 * h;

        let mut k_min = vec![0i64; m];
        let mut k_max = vec![0i64; m];
        let mut count: u128 = 1;
        for j in 0..m {
            k_min[j] = ((a[j] - radius) / h).ceil() as i64;
            k_max[j] = ((a[j] + radius) / h).floor() as i64;
            if k_max[j] < k_min[j] {
                k_max[j] = k_min[j];
            }
            count *= (k_max[j] - k_min[j] + 1) as u128;
            if count > 4_000_000 {
                return Err(Error::invalid(
                    "lattice candidate window too large; reduce n or the distance to the set",
                ));
            }
        }

        let mut best: Option<(f64, DVector<f64>)> = None;
        let mut idx = vec![0i64; m];
        idx.clone_from_slice(&k_min);
        let membership_tol = h + 1e-12;
        'outer: loop {
            let g = DVector::from_iterator(m, idx.iter().map(|&k| k as f64 * h));
            if oracle.distance(self, &g)? <= membership_tol {
                let score = (a - &g).norm();
                // strict inequality keeps the first (minimal-index) candidate
                if best.as_ref().map_or(true, |(b, _)| score < *b) {
                    best = Some((score, g));
                }
            }
            // row-major increment, last coordinate fastest
            for j in (0..m).rev() {
                idx[j] += 1;
                if idx[j] <= k_max[j] {
                    continue 'outer;
                }
                idx[j] = k_min[j];
                if j == 0 {
                    break 'outer;
                }
            }
        }
        best.map(|(_, g)| g).ok_or_else(|| {
            Error::invalid("no lattice point within 1/n of the (truncated) set; is it empty?")
        })
    }

    fn truncated_oracle(&self, r: Option<f64>) -> Result<TruncatedOracle> {
        if let Some(r) = r {
            if !(r > 0.0) {
                return Err(Error::invalid("truncation radius must be positive"));
            }
        }
        match (&self.base, r) {
            (b, None) if b.is_bounded() => Ok(TruncatedOracle::Direct),
            (_, None) => Err(Error::invalid(
                "unbounded constraint set: grid selection needs a truncation radius",
            )),
            (ConstraintSpec::FiniteSet { points }, Some(r))
            | (ConstraintSpec::CustomGrid { points, .. }, Some(r)) => {
                let kept: Vec<DVector<f64>> =
                    points.iter().filter(|p| p.norm() <= r).cloned().collect();
                if kept.is_empty() {
                    return Err(Error::invalid("truncated set is empty"));
                }
                let spec = ConstraintSpec::FiniteSet { points: kept };
                Ok(TruncatedOracle::Surrogate(Box::new(
                    InducedSet::new(spec, self.sigma.clone())?
                        .with_tolerance(self.tau_proj, self.max_iterations),
                )))
            }
            (ConstraintSpec::GeneratedCone { generators }, Some(r)) => {
                let cols: Vec<DVector<f64>> =
                    generators.iter().map(|g| self.image_of(g)).collect();
                let gen_cols: Vec<DVector<f64>> = generators.to_vec();
                Ok(TruncatedOracle::TruncatedCone {
                    image: DMatrix::from_columns(&cols),
                    strategy: DMatrix::from_columns(&gen_cols),
                    radius: r,
                })
            }
            (base, Some(r)) => {
                // Full space, orthant and boxes truncate to a box; the
                // sup-norm ball keeps the truncated set exactly representable.
                let d = self.dim_strategy();
                let (mut lower, mut upper) = match base {
                    ConstraintSpec::FullSpace { .. } => (
                        DVector::from_element(d, -r),
                        DVector::from_element(d, r),
                    ),
                    ConstraintSpec::NonnegativeOrthant { .. } => {
                        (DVector::zeros(d), DVector::from_element(d, r))
                    }
                    ConstraintSpec::Box { lower, upper } => (lower.clone(), upper.clone()),
                    _ => unreachable!("finite and cone variants handled above"),
                };
                for j in 0..d {
                    lower[j] = lower[j].max(-r);
                    upper[j] = upper[j].min(r);
                    if lower[j] > upper[j] {
                        return Err(Error::invalid("truncated set is empty"));
                    }
                }
                let spec = ConstraintSpec::Box { lower, upper };
                Ok(TruncatedOracle::Surrogate(Box::new(
                    InducedSet::new(spec, self.sigma.clone())?
                        .with_tolerance(self.tau_proj, self.max_iterations),
                )))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TieBreak {
    Lexicographic,
    FirstIndex,
}

enum TruncatedOracle {
    /// The set is already bounded: use it directly.
    Direct,
    /// Exactly representable truncation.
    Surrogate(Box<InducedSet>),
    /// Generated cone intersected with the strategy-space ball `|c| ≤ radius`;
    /// distances via ridge-penalized NNLS and bisection on the multiplier.
    TruncatedCone {
        image: DMatrix<f64>,
        strategy: DMatrix<f64>,
        radius: f64,
    },
}

impl TruncatedOracle {
    fn distance(&self, owner: &InducedSet, x: &DVector<f64>) -> Result<f64> {
        match self {
            TruncatedOracle::Direct => owner.distance(x),
            TruncatedOracle::Surrogate(s) => s.distance(x),
            TruncatedOracle::TruncatedCone {
                image,
                strategy,
                radius,
            } => truncated_cone_distance(image, strategy, *radius, x),
        }
    }
}

/// Distance from `x` to `{Aλ : λ ≥ 0, |Bλ| ≤ r}` where `A` maps multipliers
/// to image space and `B` to strategy space. Solved by bisection on the ridge
/// multiplier of `min |Aλ − x|² + μ|Bλ|²` over `λ ≥ 0`.
fn truncated_cone_distance(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r: f64,
    x: &DVector<f64>,
) -> Result<f64> {
    let solve_ridge = |mu: f64| -> Result<DVector<f64>> {
        if mu == 0.0 {
            return nnls(a, x);
        }
        let rows = a.nrows() + b.nrows();
        let mut stacked = DMatrix::zeros(rows, a.ncols());
        stacked.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
        stacked
            .view_mut((a.nrows(), 0), (b.nrows(), b.ncols()))
            .copy_from(&(b * mu.sqrt()));
        let mut rhs = DVector::zeros(rows);
        rhs.rows_mut(0, x.len()).copy_from(x);
        nnls(&stacked, &rhs)
    };
    let lam0 = solve_ridge(0.0)?;
    if (b * &lam0).norm() <= r * (1.0 + 1e-12) {
        return Ok((a * &lam0 - x).norm());
    }
    // |Bλ(μ)| decreases in μ; bracket then bisect onto the ball boundary.
    let mut lo = 0.0;
    let mut hi = 1.0;
    for _ in 0..200 {
        let lam = solve_ridge(hi)?;
        if (b * &lam).norm() <= r {
            break;
        }
        lo = hi;
        hi *= 4.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let lam = solve_ridge(mid)?;
        if (b * &lam).norm() > r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lam = solve_ridge(hi)?;
    Ok((a * &lam - x).norm())
}

fn lex_less(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    for (x, y) in a.iter().zip(b.iter()) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Lawson–Hanson active-set solver for `min |Aλ − y|` over `λ ≥ 0`.
///
/// Finite termination at machine precision; index choices are deterministic,
/// so the result is a pure function of the inputs.
fn nnls(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let scale = a.amax().max(1.0) * y.amax().max(1.0);
    let tol = 1e-12 * scale;

    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        if cols.is_empty() {
            return DVector::zeros(n);
        }
        let sub = a.select_columns(cols.iter());
        let sol = sub
            .svd(true, true)
            .solve(y, 1e-14)
            .expect("svd solve is infallible with computed factors");
        let mut z = DVector::zeros(n);
        for (k, &j) in cols.iter().enumerate() {
            z[j] = sol[k];
        }
        z
    };

    let outer_cap = 3 * n + 30;
    for _ in 0..outer_cap {
        let resid = y - a * &x;
        let w = a.transpose() * &resid;
        let mut jstar: Option<usize> = None;
        for j in 0..n {
            if !passive[j] && w[j] > tol && jstar.map_or(true, |jb| w[j] > w[jb]) {
                jstar = Some(j);
            }
        }
        let Some(jstar) = jstar else {
            return Ok(x);
        };
        passive[jstar] = true;
        let mut inner = 0;
        loop {
            inner += 1;
            if inner > n + 2 {
                break;
            }
            let z = solve_passive(&passive);
            let mut alpha = f64::INFINITY;
            let mut feasible = true;
            for j in 0..n {
                if passive[j] && z[j] <= 0.0 {
                    feasible = false;
                    let denom = x[j] - z[j];
                    if denom > 0.0 {
                        alpha = alpha.min(x[j] / denom);
                    }
                }
            }
            if feasible {
                x = z;
                break;
            }
            let alpha = alpha.min(1.0);
            for j in 0..n {
                if passive[j] {
                    x[j] += alpha * (z[j] - x[j]);
                    if x[j] <= tol.max(1e-300) {
                        x[j] = 0.0;
                        passive[j] = false;
                    }
                }
            }
        }
    }
    // KKT not certified within the iteration cap.
    Err(Error::ConvergenceFailure {
        best: (a * &x - y).norm(),
        iterations: outer_cap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec1(x: f64) -> DVector<f64> {
        DVector::from_vec(vec![x])
    }

    fn scalar_sigma(s: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 1, &[s])
    }

    fn two_point_set() -> InducedSet {
        InducedSet::new(
            ConstraintSpec::FiniteSet {
                points: vec![vec1(-1.0), vec1(1.0)],
            },
            scalar_sigma(1.0),
        )
        .unwrap()
    }

    #[test]
    fn full_space_distance_is_zero() {
        let s = InducedSet::new(
            ConstraintSpec::FullSpace { dim: 2 },
            DMatrix::from_row_slice(2, 2, &[0.7, 0.1, -0.2, 1.1]),
        )
        .unwrap();
        let a = DVector::from_vec(vec![3.0, -4.5]);
        assert!(s.distance(&a).unwrap() < 1e-10);
    }

    #[test]
    fn two_point_distance() {
        let s = two_point_set();
        assert!((s.distance(&vec1(0.2)).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn orthant_clips_negative_coordinate() {
        let s = InducedSet::identity(ConstraintSpec::NonnegativeOrthant { dim: 2 }).unwrap();
        let a = DVector::from_vec(vec![-1.0, 2.0]);
        assert!((s.distance(&a).unwrap() - 1.0).abs() < 1e-15);
        let p = s.project(&a).unwrap();
        assert_eq!(p.point.as_slice(), &[0.0, 2.0]);
    }

    #[test]
    fn tie_breaks_to_lexicographic_smallest() {
        let s = two_point_set();
        let p = s.project(&vec1(0.0)).unwrap();
        assert_eq!(p.point[0], -1.0);
        assert_eq!(p.pullback[0], -1.0);
    }

    #[test]
    fn box_boundary_projection() {
        let s = InducedSet::new(
            ConstraintSpec::Box {
                lower: vec1(0.0),
                upper: vec1(0.5),
            },
            scalar_sigma(1.0),
        )
        .unwrap();
        let p = s.project(&vec1(0.8)).unwrap();
        assert!((p.point[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn box_with_nondiagonal_gram_matches_enumeration() {
        // d=2, m=2, correlated sigma so the Gram matrix has off-diagonals.
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 0.8]);
        let s = InducedSet::new(
            ConstraintSpec::Box {
                lower: DVector::from_vec(vec![-0.5, -0.5]),
                upper: DVector::from_vec(vec![0.5, 0.5]),
            },
            sigma.clone(),
        )
        .unwrap();
        let a = DVector::from_vec(vec![1.4, -0.9]);
        let proj = s.project(&a).unwrap();
        // brute force over a fine grid of the box
        let mut best = f64::INFINITY;
        let n = 400;
        for i in 0..=n {
            for j in 0..=n {
                let c = DVector::from_vec(vec![
                    -0.5 + i as f64 / n as f64,
                    -0.5 + j as f64 / n as f64,
                ]);
                best = best.min((sigma.transpose() * c - &a).norm());
            }
        }
        assert!((proj.distance - best).abs() < 5e-3);
        assert!(proj.distance <= best + 1e-9);
    }

    #[test]
    fn generated_cone_projection_matches_orthant() {
        // Generators e1, e2 with identity sigma reproduce the orthant.
        let cone = InducedSet::new(
            ConstraintSpec::GeneratedCone {
                generators: vec![
                    DVector::from_vec(vec![1.0, 0.0]),
                    DVector::from_vec(vec![0.0, 1.0]),
                ],
            },
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let a = DVector::from_vec(vec![-1.0, 2.0]);
        let p = cone.project(&a).unwrap();
        assert!((p.point[0]).abs() < 1e-12);
        assert!((p.point[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cone_identity_on_orthant() {
        let s = InducedSet::identity(ConstraintSpec::NonnegativeOrthant { dim: 2 }).unwrap();
        let a = DVector::from_vec(vec![-1.0, 2.0]);
        assert!(s.cone_identity_residual(&a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn cone_identity_opposite_ray() {
        let g = DVector::from_vec(vec![2.0, 1.0]);
        let s = InducedSet::new(
            ConstraintSpec::GeneratedCone {
                generators: vec![g.clone()],
            },
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let a = -g;
        let p = s.project(&a).unwrap();
        assert!(p.point.norm() < 1e-12, "projection of -g must be 0");
        assert!(s.cone_identity_residual(&a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn cone_identity_rejects_non_cone() {
        let s = two_point_set();
        assert!(s.cone_identity_residual(&vec1(0.3)).is_err());
    }

    #[test]
    fn grid_select_near_single_point() {
        let s = InducedSet::new(
            ConstraintSpec::FiniteSet {
                points: vec![vec1(0.33)],
            },
            scalar_sigma(1.0),
        )
        .unwrap();
        let g = s.grid_select(&vec1(0.0), 100, None).unwrap();
        assert!((g[0] - 0.33).abs() <= 0.01 + 1e-12);
        // enumeration oracle: candidate lattice points within 0.01 of 0.33
        // are {0.32, 0.33, 0.34}; the closest to 0 is 0.32.
        assert!((g[0] - 0.32).abs() < 1e-12);
    }

    #[test]
    fn grid_select_self_projection() {
        let s = InducedSet::new(
            ConstraintSpec::Box {
                lower: vec1(-1.0),
                upper: vec1(1.0),
            },
            scalar_sigma(1.0),
        )
        .unwrap();
        let a = vec1(0.437);
        for n in [10u32, 100, 1000] {
            let g = s.grid_select(&a, n, None).unwrap();
            assert!((g[0] - a[0]).abs() <= 1.0 / n as f64 + 1e-12);
        }
    }

    #[test]
    fn grid_select_distance_converges() {
        let s = two_point_set();
        let a = vec1(0.21);
        let true_dist = s.distance(&a).unwrap();
        let mut prev = f64::INFINITY;
        for n in [10u32, 100, 1000] {
            let g = s.grid_select(&a, n, None).unwrap();
            let d = (g[0] - a[0]).abs();
            let err = (d - true_dist).abs();
            assert!(err <= 2.0 / n as f64 + 1e-12);
            assert!(err <= prev + 1e-12);
            prev = err;
        }
    }

    #[test]
    fn grid_select_requires_truncation_for_unbounded() {
        let s = InducedSet::identity(ConstraintSpec::FullSpace { dim: 1 }).unwrap();
        assert!(s.grid_select(&vec1(0.4), 10, None).is_err());
        let g = s.grid_select(&vec1(0.4), 10, Some(2.0)).unwrap();
        assert!((g[0] - 0.4).abs() <= 0.1 + 1e-12);
    }

    #[test]
    fn grid_select_empty_truncation_errors() {
        let s = InducedSet::new(
            ConstraintSpec::FiniteSet {
                points: vec![vec1(5.0)],
            },
            scalar_sigma(1.0),
        )
        .unwrap();
        assert!(s.grid_select(&vec1(0.0), 10, Some(1.0)).is_err());
    }

    #[test]
    fn grid_select_truncated_cone() {
        let s = InducedSet::new(
            ConstraintSpec::GeneratedCone {
                generators: vec![vec1(1.0)],
            },
            scalar_sigma(1.0),
        )
        .unwrap();
        // truncated ray [0, 2]; nearest to 3.0 is 2.0
        let g = s.grid_select(&vec1(3.0), 50, Some(2.0)).unwrap();
        assert!((g[0] - 2.0).abs() <= 2.0 / 50.0 + 1e-9);
    }

    #[test]
    fn k1_bound_is_distance_from_origin() {
        let s = two_point_set();
        assert!((s.k1_bound() - 1.0).abs() < 1e-15);
        let orthant = InducedSet::identity(ConstraintSpec::NonnegativeOrthant { dim: 3 }).unwrap();
        assert_eq!(orthant.k1_bound(), 0.0);
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(InducedSet::identity(ConstraintSpec::FiniteSet { points: vec![] }).is_err());
        assert!(InducedSet::new(
            ConstraintSpec::Box {
                lower: vec1(1.0),
                upper: vec1(0.0),
            },
            scalar_sigma(1.0),
        )
        .is_err());
        assert!(InducedSet::identity(ConstraintSpec::GeneratedCone {
            generators: vec![DVector::zeros(2)],
        })
        .is_err());
        // rank-deficient sigma
        assert!(InducedSet::new(
            ConstraintSpec::FullSpace { dim: 2 },
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]),
        )
        .is_err());
    }

    #[test]
    fn non_finite_input_rejected() {
        let s = two_point_set();
        assert!(s.distance(&vec1(f64::NAN)).is_err());
        assert!(s.project(&vec1(f64::INFINITY)).is_err());
    }

    #[test]
    fn nonexpansive_distance_spot_checks() {
        let s = two_point_set();
        let pairs = [(0.3, -0.7), (1.4, 1.5), (-2.0, 2.0), (0.0, 0.1)];
        for (x, y) in pairs {
            let dx = s.distance(&vec1(x)).unwrap();
            let dy = s.distance(&vec1(y)).unwrap();
            assert!((dx - dy).abs() <= (x - y).abs() + 1e-12);
        }
    }

    #[test]
    fn pullback_reported_with_image() {
        // d=1 < m=2: the image of the grid lives on a line in R^2.
        let sigma = DMatrix::from_row_slice(1, 2, &[0.6, 0.8]);
        let s = InducedSet::new(
            ConstraintSpec::CustomGrid {
                points: vec![vec1(0.0), vec1(1.0), vec1(2.0)],
                resolution: 1.0,
            },
            sigma,
        )
        .unwrap();
        let a = DVector::from_vec(vec![0.9, 1.2]);
        let p = s.project(&a).unwrap();
        // a = 1.5 (0.6, 0.8); images sit at 0, 1, 2 along that direction,
        // so c = 1 and c = 2 are both 0.5 away and rounding picks c = 1.
        assert_eq!(p.pullback[0], 1.0);
        assert!((p.distance - 0.5).abs() < 1e-12);
    }
}
