//! Control problems with action-affine drift, action-free diffusion and a
//! running reward that is a strictly concave quadratic in the action.
//!
//! For a state `z = (x, y)` and action `a in R^D`:
//!
//! ```text
//! drift      mu(z, a) = M(z) a + b(z)                 (2 x D matrix M)
//! diffusion  sigma(z) = diag(s1(z), s2(z))
//! reward     f(z, a)  = c(z) + r(z)^T a - a^T Q(z) a / 2   (Q symmetric positive definite)
//! ```
//!
//! The value of a Markov policy is the expected discounted running reward up
//! to the first exit from the rectangle plus the discounted exit payoff `g`.
//! Because the Hamiltonian `mu(z, a)^T grad V + f(z, a)` is strictly concave
//! in `a`, the greedy action solves `Q a = M^T grad V + r` in closed form.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SMatrix, SVector, Vector2};

use crate::error::{Error, Result};
use crate::grid::Grid2D;

pub type StateFn<T> = Arc<dyn Fn(f64, f64) -> T + Send + Sync>;

/// Closed axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        if !(x_min < x_max && y_min < y_max) {
            return Err(Error::InvalidBounds {
                x_min,
                x_max,
                y_min,
                y_max,
            });
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn contains_strictly(&self, x: f64, y: f64) -> bool {
        x > self.x_min && x < self.x_max && y > self.y_min && y < self.y_max
    }

    /// Nearest point of the rectangle.
    pub fn project(&self, x: f64, y: f64) -> (f64, f64) {
        (
            x.clamp(self.x_min, self.x_max),
            y.clamp(self.y_min, self.y_max),
        )
    }
}

/// `f(z, a) = c(z) + r(z)^T a - a^T Q(z) a / 2`.
#[derive(Clone)]
pub struct QuadraticReward<const D: usize> {
    pub constant: StateFn<f64>,
    pub linear: StateFn<SVector<f64, D>>,
    pub curvature: StateFn<SMatrix<f64, D, D>>,
}

impl<const D: usize> QuadraticReward<D> {
    /// Reward `c - |a|^2 / 2` with constant `c`.
    pub fn isotropic(c: f64) -> Self {
        Self {
            constant: Arc::new(move |_, _| c),
            linear: Arc::new(|_, _| SVector::zeros()),
            curvature: Arc::new(|_, _| SMatrix::identity()),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64, a: &SVector<f64, D>) -> f64 {
        let q = (self.curvature)(x, y);
        (self.constant)(x, y) + (self.linear)(x, y).dot(a) - 0.5 * a.dot(&(q * a))
    }
}

impl<const D: usize> fmt::Debug for QuadraticReward<D> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuadraticReward").finish_non_exhaustive()
    }
}

#[derive(Clone)]
pub struct ControlProblem<const D: usize> {
    drift_matrix: StateFn<SMatrix<f64, 2, D>>,
    drift_offset: StateFn<Vector2<f64>>,
    /// Diagonal entries of sigma.
    diffusion: StateFn<Vector2<f64>>,
    reward: QuadraticReward<D>,
    discount: f64,
    boundary_payoff: StateFn<f64>,
    domain: Rect,
}

impl<const D: usize> fmt::Debug for ControlProblem<D> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("discount", &self.discount)
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

impl<const D: usize> ControlProblem<D> {
    pub fn new(
        drift_matrix: StateFn<SMatrix<f64, 2, D>>,
        drift_offset: StateFn<Vector2<f64>>,
        diffusion: StateFn<Vector2<f64>>,
        reward: QuadraticReward<D>,
        discount: f64,
        boundary_payoff: StateFn<f64>,
        domain: Rect,
    ) -> Result<Self> {
        if !(discount > 0.0) {
            return Err(Error::NonPositiveParameter {
                name: "alpha",
                value: discount,
            });
        }
        Ok(Self {
            drift_matrix,
            drift_offset,
            diffusion,
            reward,
            discount,
            boundary_payoff,
            domain,
        })
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn domain(&self) -> Rect {
        self.domain
    }

    pub fn reward(&self) -> &QuadraticReward<D> {
        &self.reward
    }

    /// Same problem with a different running reward.
    pub fn with_reward(mut self, reward: QuadraticReward<D>) -> Self {
        self.reward = reward;
        self
    }

    /// Same problem with a different exit payoff.
    pub fn with_boundary_payoff(mut self, g: StateFn<f64>) -> Self {
        self.boundary_payoff = g;
        self
    }

    #[inline]
    pub fn drift_matrix(&self, x: f64, y: f64) -> SMatrix<f64, 2, D> {
        (self.drift_matrix)(x, y)
    }

    #[inline]
    pub fn drift(&self, x: f64, y: f64, a: &SVector<f64, D>) -> Vector2<f64> {
        (self.drift_matrix)(x, y) * a + (self.drift_offset)(x, y)
    }

    #[inline]
    pub fn diffusion(&self, x: f64, y: f64) -> Vector2<f64> {
        (self.diffusion)(x, y)
    }

    #[inline]
    pub fn running_reward(&self, x: f64, y: f64, a: &SVector<f64, D>) -> f64 {
        self.reward.eval(x, y, a)
    }

    #[inline]
    pub fn boundary_payoff(&self, x: f64, y: f64) -> f64 {
        (self.boundary_payoff)(x, y)
    }

    /// `mu(z, a)^T grad V + f(z, a)`, the action-dependent part of the generator
    /// applied to V plus the running reward.
    pub fn hamiltonian(&self, x: f64, y: f64, a: &SVector<f64, D>, grad: Vector2<f64>) -> f64 {
        self.drift(x, y, a).dot(&grad) + self.running_reward(x, y, a)
    }

    /// The maximiser of [`hamiltonian`](Self::hamiltonian):
    /// `Q(z)^{-1} (M(z)^T grad V + r(z))`.
    pub fn greedy_policy(&self, x: f64, y: f64, grad: Vector2<f64>) -> Result<SVector<f64, D>> {
        let rhs = self.drift_matrix(x, y).transpose() * grad + (self.reward.linear)(x, y);
        self.solve_curvature(x, y, rhs)
    }

    /// `Q(z)^{-1} rhs`.
    pub fn solve_curvature(&self, x: f64, y: f64, rhs: SVector<f64, D>) -> Result<SVector<f64, D>> {
        let q = (self.reward.curvature)(x, y);
        if D == 1 {
            let q00 = q[(0, 0)];
            if !(q00 > 0.0) || !q00.is_finite() {
                return Err(Error::SingularCurvature { x, y });
            }
            return Ok(rhs / q00);
        }
        q.cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or(Error::SingularCurvature { x, y })
    }

    /// Smallest and largest eigenvalue of `a(z) = sigma(z) sigma(z)^T / 2`
    /// over the nodes of `grid`.
    pub fn ellipticity_bounds(&self, grid: &Grid2D) -> Result<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for k in 0..grid.n {
            for j in 0..grid.n {
                let s = self.diffusion(grid.x(j), grid.y(k));
                for v in [0.5 * s.x * s.x, 0.5 * s.y * s.y] {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
        }
        if !(lo > 0.0) {
            return Err(Error::DegenerateDiffusion { a_min: lo });
        }
        Ok((lo, hi))
    }

    /// Smallest eigenvalue of `Q` over the nodes of `grid`: the uniform
    /// concavity constant of the reward in the action.
    pub fn concavity_bound(&self, grid: &Grid2D) -> f64 {
        let mut lo = f64::INFINITY;
        for k in 0..grid.n {
            for j in 0..grid.n {
                let q = (self.reward.curvature)(grid.x(j), grid.y(k));
                let ev = DMatrix::from_column_slice(D, D, q.as_slice())
                    .symmetric_eigenvalues()
                    .min();
                lo = lo.min(ev);
            }
        }
        lo
    }
}

/// Parameters of the two-factor example: drift `(a x, a y)`, volatility
/// `diag(sigma x, eta y)`, reward `1 - a^2/2`, zero exit payoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleParams {
    pub sigma: f64,
    pub eta: f64,
    pub alpha: f64,
    pub domain: Rect,
}

impl Default for ExampleParams {
    fn default() -> Self {
        Self {
            sigma: 2.0,
            eta: 0.2,
            alpha: 0.03,
            domain: Rect {
                x_min: 0.5,
                x_max: 2.0,
                y_min: 0.5,
                y_max: 2.0,
            },
        }
    }
}

/// Builds the scalar-action example problem. The domain must stay away from
/// the axes so that the diffusion is non-degenerate.
pub fn make_example_problem(params: ExampleParams) -> Result<ControlProblem<1>> {
    let ExampleParams {
        sigma,
        eta,
        alpha,
        domain,
    } = params;
    for (name, value) in [("sigma", sigma), ("eta", eta), ("alpha", alpha)] {
        if !(value > 0.0) {
            return Err(Error::NonPositiveParameter { name, value });
        }
    }
    let domain = Rect::new(domain.x_min, domain.x_max, domain.y_min, domain.y_max)?;
    if domain.x_min <= 0.0 || domain.y_min <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "domain must lie in the open positive quadrant, got {domain:?}"
        )));
    }
    ControlProblem::new(
        Arc::new(SMatrix::<f64, 2, 1>::new),
        Arc::new(|_, _| Vector2::zeros()),
        Arc::new(move |x, y| Vector2::new(sigma * x, eta * y)),
        QuadraticReward::isotropic(1.0),
        alpha,
        Arc::new(|_, _| 0.0),
        domain,
    )
}
