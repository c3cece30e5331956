//! Policy improvement: evaluate the current policy by solving the frozen
//! linear difference equations, replace it by the greedy policy for the
//! resulting value function, and stop once the policy moves by less than
//! `tol2` in sup norm.

use std::io::{self, Write};
use std::time::{Duration, Instant};

use log::{debug, warn};
use nalgebra::Vector2;
use thiserror::Error;

use crate::error::Error;
use crate::exec::Execution;
use crate::fdm::{
    assemble_stencil, check_diagonal_dominance, iterative_solve, DominanceReport, SolveOptions,
    SolveStats, SweepScheme,
};
use crate::grid::{Grid2D, PolicyField, ScalarField};
use crate::problem::ControlProblem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiaConfig {
    /// Inner solver tolerance on the sup-norm change between sweeps.
    pub tol1: f64,
    /// Outer tolerance on the sup-norm change of the policy.
    pub tol2: f64,
    pub max_pia_steps: usize,
    pub scheme: SweepScheme,
    pub max_sweeps: usize,
    pub exec: Execution,
}

impl Default for PiaConfig {
    fn default() -> Self {
        Self {
            tol1: 1e-5,
            tol2: 1e-3,
            max_pia_steps: 50,
            scheme: SweepScheme::GaussSeidel,
            max_sweeps: 1_000_000,
            exec: Execution::default(),
        }
    }
}

impl PiaConfig {
    pub fn validate(&self) -> Result<(), Error> {
        for (name, value) in [("tol1", self.tol1), ("tol2", self.tol2)] {
            if !(value > 0.0) {
                return Err(Error::NonPositiveParameter { name, value });
            }
        }
        if self.max_pia_steps == 0 || self.max_sweeps == 0 {
            return Err(Error::InvalidConfig(
                "max_pia_steps and max_sweeps must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.tol1,
            scheme: self.scheme,
            max_sweeps: self.max_sweeps,
            record_trace: false,
            exec: self.exec,
        }
    }
}

/// One outer step: policy `pi_i` was evaluated, giving `V^{pi_i}`, and
/// improved to `pi_{i+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub step: usize,
    /// `max |pi_{i+1} - pi_i|`.
    pub max_dpi: f64,
    /// `max |V^{pi_i} - V^{pi_{i-1}}|`; absent on step 0.
    pub max_dv: Option<f64>,
    pub point_updates: u64,
    pub solve: SolveStats,
    pub dominance: DominanceReport,
    pub wall_time: Duration,
}

#[derive(Debug, Clone)]
pub struct PiaResult<const D: usize> {
    /// Value of the last evaluated policy.
    pub value: ScalarField,
    /// Greedy policy for `value`.
    pub policy: PolicyField<D>,
    pub records: Vec<IterationRecord>,
    /// `values[i] = V^{pi_i}`.
    pub values: Vec<ScalarField>,
    /// `w_fields[i] = V^{pi_{i+1}} - V^{pi_i}`.
    pub w_fields: Vec<ScalarField>,
    /// `policies[i] = pi_i`, including the final improved policy.
    pub policies: Vec<PolicyField<D>>,
}

impl<const D: usize> PiaResult<D> {
    pub fn total_point_updates(&self) -> u64 {
        self.records.iter().map(|r| r.point_updates).sum()
    }
}

#[derive(Debug, Error)]
pub enum PiaError<const D: usize> {
    #[error(transparent)]
    Setup(#[from] Error),
    #[error("inner solve of step {step} did not reach tol1 within the sweep budget")]
    InnerNonConvergence {
        step: usize,
        partial: Box<PiaResult<D>>,
    },
    #[error("policy still moving after {steps} steps")]
    MaxStepsExceeded {
        steps: usize,
        partial: Box<PiaResult<D>>,
    },
}

impl<const D: usize> PiaError<D> {
    /// Iterates computed before the failure, when there are any.
    pub fn partial(&self) -> Option<&PiaResult<D>> {
        match self {
            PiaError::Setup(_) => None,
            PiaError::InnerNonConvergence { partial, .. }
            | PiaError::MaxStepsExceeded { partial, .. } => Some(partial),
        }
    }
}

/// Greedy policy for `v`, using central-difference gradients at interior nodes.
pub fn policy_update<const D: usize>(
    problem: &ControlProblem<D>,
    v: &ScalarField,
    exec: Execution,
) -> Result<PolicyField<D>, Error> {
    let g = *v.grid();
    let m = g.m();
    let actions = exec.map_collect(g.interior_count(), |i| {
        let (j, k) = (i % m + 1, i / m + 1);
        let (vx, vy) = v.central_diff(j, k);
        problem.greedy_policy(g.x(j), g.y(k), Vector2::new(vx, vy))
    });
    let actions = actions.into_iter().collect::<Result<Vec<_>, _>>()?;
    PolicyField::from_actions(g, actions)
}

/// Dirichlet data `g` on boundary nodes, zero inside.
pub fn boundary_field<const D: usize>(problem: &ControlProblem<D>, grid: &Grid2D) -> ScalarField {
    let mut f = ScalarField::zeros(*grid);
    for k in 0..grid.n {
        for j in 0..grid.n {
            if grid.is_boundary(j, k) {
                f.set(j, k, problem.boundary_payoff(grid.x(j), grid.y(k)));
            }
        }
    }
    f
}

/// Value of a fixed policy, solved from `initial`.
pub fn evaluate_policy<const D: usize>(
    problem: &ControlProblem<D>,
    grid: &Grid2D,
    policy: &PolicyField<D>,
    initial: &ScalarField,
    opts: &SolveOptions,
) -> Result<(crate::fdm::SolveOutcome, DominanceReport), Error> {
    let system = assemble_stencil(problem, grid, policy, opts.exec)?;
    let dominance = check_diagonal_dominance(&system);
    let outcome = iterative_solve(&system, &boundary_field(problem, grid), initial, opts)?;
    Ok((outcome, dominance))
}

/// Runs policy improvement from `pi_0 = 0`, `V^0 = 0`. Each evaluation is
/// warm-started from the previous value function.
pub fn run_pia<const D: usize>(
    problem: &ControlProblem<D>,
    grid: &Grid2D,
    config: &PiaConfig,
) -> Result<PiaResult<D>, PiaError<D>> {
    config.validate()?;
    if grid.rect() != problem.domain() {
        return Err(Error::InvalidConfig(format!(
            "grid covers {:?} but the problem lives on {:?}",
            grid.rect(),
            problem.domain()
        ))
        .into());
    }
    let opts = config.solve_options();
    let mut policy = PolicyField::<D>::zeros(*grid);
    let mut warm = ScalarField::zeros(*grid);
    let mut result = PiaResult {
        value: warm.clone(),
        policy: policy.clone(),
        records: Vec::new(),
        values: Vec::new(),
        w_fields: Vec::new(),
        policies: vec![policy.clone()],
    };

    for step in 0..config.max_pia_steps {
        let started = Instant::now();
        let (outcome, dominance) = evaluate_policy(problem, grid, &policy, &warm, &opts)?;
        if !dominance.holds {
            warn!(
                "step {step}: diagonal dominance fails at {:?} (margin {:.3e})",
                dominance.worst_node, dominance.worst_margin
            );
        }
        let next = policy_update(problem, &outcome.field, config.exec)?;
        let max_dpi = next.sup_norm_diff(&policy)?;
        let max_dv = match result.values.last() {
            Some(prev) => {
                let w = outcome.field.difference(prev)?;
                let norm = w.sup_norm();
                result.w_fields.push(w);
                Some(norm)
            }
            None => None,
        };
        let record = IterationRecord {
            step,
            max_dpi,
            max_dv,
            point_updates: outcome.stats.point_updates,
            solve: outcome.stats,
            dominance,
            wall_time: started.elapsed(),
        };
        debug!(
            "step {step}: max_dpi {max_dpi:.8} max_dv {max_dv:?} updates {}",
            record.point_updates
        );
        result.records.push(record);
        result.values.push(outcome.field.clone());
        result.policies.push(next.clone());
        result.value = outcome.field.clone();
        result.policy = next.clone();

        if !outcome.converged {
            return Err(PiaError::InnerNonConvergence {
                step,
                partial: Box::new(result),
            });
        }
        if max_dpi < config.tol2 {
            return Ok(result);
        }
        warm = outcome.field;
        policy = next;
    }
    Err(PiaError::MaxStepsExceeded {
        steps: config.max_pia_steps,
        partial: Box::new(result),
    })
}

/// The `pi = 0` evaluation from a zero start: identical to step 0 of
/// [`run_pia`].
pub fn solve_linear_baseline<const D: usize>(
    problem: &ControlProblem<D>,
    grid: &Grid2D,
    opts: &SolveOptions,
) -> Result<(ScalarField, SolveStats, bool), Error> {
    let (outcome, _) = evaluate_policy(
        problem,
        grid,
        &PolicyField::zeros(*grid),
        &ScalarField::zeros(*grid),
        opts,
    )?;
    Ok((outcome.field, outcome.stats, outcome.converged))
}

/// CSV `step,max_dpi,max_dv,point_updates,wall_ms`; `max_dv` is empty on step 0.
pub fn write_convergence_csv<W: Write>(records: &[IterationRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "step,max_dpi,max_dv,point_updates,wall_ms")?;
    for r in records {
        let dv = r.max_dv.map(|v| format!("{v:.8}")).unwrap_or_default();
        writeln!(
            out,
            "{},{:.8},{},{},{}",
            r.step,
            r.max_dpi,
            dv,
            r.point_updates,
            r.wall_time.as_millis()
        )?;
    }
    Ok(())
}
