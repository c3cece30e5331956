//! Empirical checks of the quadratic contraction of policy improvement.
//!
//! With `W_i = V^{pi_{i+1}} - V^{pi_i}`, the greedy first-order condition and a
//! second-order Taylor expansion give a linear equation for `W_i` whose
//! source is the quadratic form
//!
//! ```text
//! R_i = (M^T grad W_{i-1})^T Q^{-1} (M^T grad W_{i-1}) / 2 >= 0,
//! ```
//!
//! so `|W_i| <= C |W_{i-1}|^2`. This module measures the ratios
//! `C_i = |W_i| / |W_{i-1}|^2` under three discrete norms, checks the
//! iterated bound `|W_i| <= (C |W_0|)^(2^i) / C`, and evaluates the residuals
//! of the `W` equation and of the limiting semilinear equation on the grid.

use std::fmt::{self, Write as _};
use std::io::{self, Write};

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fdm::assemble_stencil;
use crate::grid::{Grid2D, PolicyField, ScalarField};
use crate::pia::{policy_update, PiaResult};
use crate::problem::ControlProblem;

/// Discrete stand-ins for a Hölder-type norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// `max |W|` over all nodes.
    Sup,
    /// `max |grad W|_inf` over interior nodes, central differences.
    Gradient,
    /// `max(|W_xx|, |W_yy|)` over interior nodes, centered second differences.
    SecondDifference,
}

impl NormKind {
    pub const ALL: [NormKind; 3] = [NormKind::Sup, NormKind::Gradient, NormKind::SecondDifference];

    pub fn name(self) -> &'static str {
        match self {
            NormKind::Sup => "sup",
            NormKind::Gradient => "grad",
            NormKind::SecondDifference => "second_diff",
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn field_norm(w: &ScalarField, kind: NormKind) -> f64 {
    let g = *w.grid();
    match kind {
        NormKind::Sup => w.sup_norm(),
        NormKind::Gradient => g.interior_nodes().fold(0.0, |m, (j, k)| {
            let (gx, gy) = w.central_diff(j, k);
            m.max(gx.abs()).max(gy.abs())
        }),
        NormKind::SecondDifference => g.interior_nodes().fold(0.0, |m, (j, k)| {
            let (xx, yy) = w.second_diff(j, k);
            m.max(xx.abs()).max(yy.abs())
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QlcEntry {
    /// Index `i` of `W_i`.
    pub step: usize,
    pub w_norm: f64,
    /// `w_i / w_{i-1}^2`; absent for `i = 0` or when `w_{i-1} = 0`.
    pub ratio: Option<f64>,
    /// `w_i` is below the noise floor of the inner solver.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QlcReport {
    pub entries: Vec<QlcEntry>,
    /// Largest ratio among unflagged entries.
    pub empirical_c: Option<f64>,
}

impl QlcReport {
    pub fn ratios(&self) -> impl Iterator<Item = &QlcEntry> {
        self.entries.iter().filter(|e| e.ratio.is_some())
    }

    pub fn unflagged_ratios(&self) -> Vec<f64> {
        self.ratios()
            .filter(|e| !e.flagged)
            .filter_map(|e| e.ratio)
            .collect()
    }
}

/// Successive contraction ratios `w_i / w_{i-1}^2`. Entries with
/// `w_i < noise_floor` are flagged and left out of the empirical constant.
pub fn qlc_ratios(w_norms: &[f64], noise_floor: f64) -> Result<QlcReport> {
    if w_norms.len() < 2 {
        return Err(Error::SequenceTooShort {
            needed: 2,
            got: w_norms.len(),
        });
    }
    let entries: Vec<QlcEntry> = w_norms
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let ratio = match i {
                0 => None,
                _ if w_norms[i - 1] > 0.0 => Some(w / (w_norms[i - 1] * w_norms[i - 1])),
                _ => None,
            };
            QlcEntry {
                step: i,
                w_norm: w,
                ratio,
                flagged: w < noise_floor,
            }
        })
        .collect();
    let empirical_c = entries
        .iter()
        .filter(|e| !e.flagged)
        .filter_map(|e| e.ratio)
        .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r))));
    Ok(QlcReport {
        entries,
        empirical_c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoublingStep {
    pub step: usize,
    /// `(C w_0)^(2^i) / C`.
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoublingReport {
    /// `C w_0 < 1`: the iterated bound decays doubly exponentially.
    pub in_contraction_region: bool,
    pub steps: Vec<DoublingStep>,
}

/// Checks `w_i <= (C w_0)^(2^i) / C` for `i >= 1`.
pub fn doubling_check(w_norms: &[f64], c: f64) -> Result<DoublingReport> {
    if !(c > 0.0) {
        return Err(Error::NonPositiveParameter {
            name: "C",
            value: c,
        });
    }
    let Some(&w0) = w_norms.first() else {
        return Err(Error::SequenceTooShort { needed: 1, got: 0 });
    };
    let base = c * w0;
    let steps = w_norms
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, &w)| {
            let exponent = 2f64.powi(i as i32);
            let bound = base.powf(exponent) / c;
            // the i = 1 bound is attained exactly when C is the first ratio
            DoublingStep {
                step: i,
                bound,
                holds: w <= bound * (1.0 + 1e-12),
            }
        })
        .collect();
    Ok(DoublingReport {
        in_contraction_region: base < 1.0,
        steps,
    })
}

/// `R(z) = (M^T grad W)^T Q^{-1} (M^T grad W) / 2` at interior nodes, zero on
/// the boundary.
pub fn residual_field<const D: usize>(
    problem: &ControlProblem<D>,
    w_prev: &ScalarField,
) -> Result<ScalarField> {
    let g = *w_prev.grid();
    let mut r = ScalarField::zeros(g);
    for (j, k) in g.interior_nodes() {
        let (x, y) = (g.x(j), g.y(k));
        let (wx, wy) = w_prev.central_diff(j, k);
        let mtg = problem.drift_matrix(x, y).transpose() * Vector2::new(wx, wy);
        let solved = problem.solve_curvature(x, y, mtg)?;
        r.set(j, k, 0.5 * mtg.dot(&solved));
    }
    Ok(r)
}

/// Largest residual of the difference equations for `W` under policy
/// `policy_next` with source `r` in place of the running reward.
pub fn verify_w_pde<const D: usize>(
    problem: &ControlProblem<D>,
    w: &ScalarField,
    policy_next: &PolicyField<D>,
    r: &ScalarField,
) -> Result<f64> {
    let g = *w.grid();
    if policy_next.grid() != &g || r.grid() != &g {
        return Err(Error::GridMismatch);
    }
    let system =
        assemble_stencil(problem, &g, policy_next, Execution::Sequential)?.with_source(|j, k| r.get(j, k));
    system.max_residual(w)
}

/// Largest residual of the discrete semilinear equation
/// `L^{a*} V - alpha V + f^{a*} = 0` with `a*` greedy for `V`; for the example
/// problem this is `s^2 x^2 V_xx / 2 + e^2 y^2 V_yy / 2 - alpha V + 1 + (x V_x + y V_y)^2 / 2`.
pub fn semilinear_residual<const D: usize>(
    problem: &ControlProblem<D>,
    v: &ScalarField,
) -> Result<f64> {
    let g = *v.grid();
    let policy = policy_update(problem, v, Execution::Sequential)?;
    assemble_stencil(problem, &g, &policy, Execution::Sequential)?.max_residual(v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    /// Index `i` of `W_i`.
    pub step: usize,
    pub max_abs_r: f64,
    pub max_w_pde_residual: f64,
}

#[derive(Debug, Clone)]
pub struct AnalysisReport {
    pub a_min: f64,
    pub a_max: f64,
    /// Uniform ellipticity constant: `max(a_max, 1 / a_min)`.
    pub nu: f64,
    /// Uniform concavity constant of the reward in the action.
    pub lambda: f64,
    pub noise_floor: f64,
    pub qlc: Vec<(NormKind, QlcReport, Option<DoublingReport>)>,
    pub residuals: Vec<ResidualReport>,
    pub semilinear_residual: f64,
}

/// Runs every check on the iterates of a policy improvement run.
pub fn analyze<const D: usize>(
    problem: &ControlProblem<D>,
    grid: &Grid2D,
    result: &PiaResult<D>,
    noise_floor: f64,
) -> Result<AnalysisReport> {
    let (a_min, a_max) = problem.ellipticity_bounds(grid)?;
    let lambda = problem.concavity_bound(grid);

    let mut qlc = Vec::new();
    if result.w_fields.len() >= 2 {
        for kind in NormKind::ALL {
            let norms: Vec<f64> = result.w_fields.iter().map(|w| field_norm(w, kind)).collect();
            let report = qlc_ratios(&norms, noise_floor)?;
            let doubling = match report.empirical_c {
                Some(c) if c > 0.0 => Some(doubling_check(&norms, c)?),
                _ => None,
            };
            qlc.push((kind, report, doubling));
        }
    }

    let mut residuals = Vec::new();
    for i in 1..result.w_fields.len() {
        let r = residual_field(problem, &result.w_fields[i - 1])?;
        let res = verify_w_pde(problem, &result.w_fields[i], &result.policies[i + 1], &r)?;
        residuals.push(ResidualReport {
            step: i,
            max_abs_r: r.sup_norm(),
            max_w_pde_residual: res,
        });
    }

    Ok(AnalysisReport {
        a_min,
        a_max,
        nu: a_max.max(1.0 / a_min),
        lambda,
        noise_floor,
        qlc,
        residuals,
        semilinear_residual: semilinear_residual(problem, &result.value)?,
    })
}

impl AnalysisReport {
    pub fn qlc_for(&self, kind: NormKind) -> Option<&QlcReport> {
        self.qlc.iter().find(|(k, _, _)| *k == kind).map(|(_, r, _)| r)
    }

    /// CSV `step,norm_kind,w_norm,ratio,flagged`.
    pub fn write_qlc_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "step,norm_kind,w_norm,ratio,flagged")?;
        for (kind, report, _) in &self.qlc {
            for e in &report.entries {
                let ratio = e.ratio.map(|r| format!("{r:.8}")).unwrap_or_default();
                writeln!(
                    out,
                    "{},{},{:.8},{},{}",
                    e.step, kind, e.w_norm, ratio, e.flagged
                )?;
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "ellipticity: a in [{:.6}, {:.6}], nu = {:.3}; concavity lambda = {:.6}; noise floor = {:.1e}",
            self.a_min, self.a_max, self.nu, self.lambda, self.noise_floor
        );
        for (kind, report, doubling) in &self.qlc {
            let ratios: Vec<String> = report
                .ratios()
                .map(|e| {
                    let r = e.ratio.unwrap_or(f64::NAN);
                    if e.flagged {
                        format!("{r:.4}*")
                    } else {
                        format!("{r:.4}")
                    }
                })
                .collect();
            let c = report
                .empirical_c
                .map(|c| format!("{c:.4}"))
                .unwrap_or_else(|| "-".into());
            let dbl = match doubling {
                Some(d) => {
                    let ok = d
                        .steps
                        .iter()
                        .zip(report.ratios())
                        .filter(|(_, e)| !e.flagged)
                        .all(|(s, _)| s.holds);
                    format!(
                        "doubling bound {} ({} contraction region)",
                        if ok { "holds" } else { "fails" },
                        if d.in_contraction_region { "inside" } else { "outside" }
                    )
                }
                None => "doubling bound n/a".into(),
            };
            let _ = writeln!(
                s,
                "qlc[{kind:>11}]: ratios [{}] C = {c}; {dbl}",
                ratios.join(", ")
            );
        }
        for r in &self.residuals {
            let _ = writeln!(
                s,
                "W_{}: max R = {:.3e}, W-equation residual = {:.3e}",
                r.step, r.max_abs_r, r.max_w_pde_residual
            );
        }
        let _ = writeln!(s, "semilinear residual of final V = {:.3e}", self.semilinear_residual);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{make_example_problem, ExampleParams};
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector1;
    use proptest::prelude::*;

    const PUBLISHED_DV: [f64; 4] = [0.02563695, 0.00372773, 0.00006031, 0.00000995];

    #[test]
    fn published_difference_ratios() {
        // noise floor at the inner tolerance: only the last difference sits below it
        let r = qlc_ratios(&PUBLISHED_DV, 1e-5).unwrap();
        let ratios: Vec<f64> = r.ratios().map(|e| e.ratio.unwrap()).collect();
        assert_abs_diff_eq!(ratios[0], 0.00372773 / (0.02563695f64 * 0.02563695), epsilon = 1e-12);
        assert_abs_diff_eq!(ratios[0], 5.672, epsilon = 1e-3);
        assert_abs_diff_eq!(ratios[1], 4.340, epsilon = 1e-3);
        assert_abs_diff_eq!(ratios[2], 0.00000995 / (0.00006031f64 * 0.00006031), epsilon = 1e-9);
        assert_abs_diff_eq!(ratios[2], 2735.5, epsilon = 0.1);
        let flags: Vec<bool> = r.ratios().map(|e| e.flagged).collect();
        assert_eq!(flags, vec![false, false, true]);
        assert_abs_diff_eq!(r.empirical_c.unwrap(), 5.672, epsilon = 1e-3);
    }

    #[test]
    fn exact_quadratic_cascade() {
        let r = qlc_ratios(&[0.1, 0.01, 0.0001], 0.0).unwrap();
        let ratios: Vec<f64> = r.ratios().map(|e| e.ratio.unwrap()).collect();
        assert_eq!(ratios.len(), 2);
        assert_abs_diff_eq!(ratios[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ratios[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_and_short_sequences() {
        let r = qlc_ratios(&[0.0, 0.0], 1e-5).unwrap();
        assert_eq!(r.ratios().count(), 0);
        assert_eq!(r.empirical_c, None);
        assert_eq!(
            qlc_ratios(&[0.1], 1e-5).unwrap_err(),
            Error::SequenceTooShort { needed: 2, got: 1 }
        );
    }

    #[test]
    fn doubling_on_published_differences() {
        let d = doubling_check(&PUBLISHED_DV, 5.68).unwrap();
        assert!(d.in_contraction_region);
        assert!(d.steps[0].holds);
        assert!(d.steps[1].holds);
        // the last difference is at the solver floor and outruns the bound
        assert!(!d.steps[2].holds);
    }

    #[test]
    fn doubling_bound_closed_form() {
        let c = 4.0;
        let w0 = 1.0 / (2.0 * c);
        let d = doubling_check(&[w0, 0.0, 0.0, 0.0, 0.0], c).unwrap();
        for s in &d.steps {
            assert_abs_diff_eq!(s.bound, 0.5f64.powi(1 << s.step) / c, epsilon = 1e-18);
        }
        assert!(d.steps.windows(2).all(|p| p[1].bound < p[0].bound));
    }

    #[test]
    fn doubling_outside_contraction_region() {
        let d = doubling_check(&[1.0, 0.5, 0.2], 3.0).unwrap();
        assert!(!d.in_contraction_region);
        assert!(d.steps[1].bound > d.steps[0].bound);
        assert!(doubling_check(&[1.0], 0.0).is_err());
    }

    fn example_grid(n: usize) -> (ControlProblem<1>, Grid2D) {
        let p = make_example_problem(ExampleParams::default()).unwrap();
        let g = Grid2D::over(p.domain(), n).unwrap();
        (p, g)
    }

    #[test]
    fn residual_of_zero_and_linear_w() {
        let (p, g) = example_grid(7);
        assert_eq!(residual_field(&p, &ScalarField::zeros(g)).unwrap().sup_norm(), 0.0);
        let (p, g) = example_grid(4);
        let r = residual_field(&p, &ScalarField::from_fn(g, |x, _| x)).unwrap();
        // node j = 1 sits at x = 1
        assert_abs_diff_eq!(r.get(1, 1), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(r.get(2, 2), 0.5 * 1.5 * 1.5, epsilon = 1e-14);
    }

    #[test]
    fn w_pde_of_zero() {
        let (p, g) = example_grid(9);
        let z = ScalarField::zeros(g);
        let pol = PolicyField::constant(g, Vector1::new(0.7));
        assert_eq!(verify_w_pde(&p, &z, &pol, &z).unwrap(), 0.0);
    }

    #[test]
    fn semilinear_residual_of_zero_is_one() {
        let (p, g) = example_grid(11);
        assert_abs_diff_eq!(
            semilinear_residual(&p, &ScalarField::zeros(g)).unwrap(),
            1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn semilinear_residual_matches_closed_form() {
        let (p, g) = example_grid(13);
        let v = ScalarField::from_fn(g, |x, y| 0.1 * (x - 0.5) * (2.0 - x) * (y - 0.5) * (2.0 - y));
        let mut expected = 0.0f64;
        for (j, k) in g.interior_nodes() {
            let (x, y) = (g.x(j), g.y(k));
            let (vx, vy) = v.central_diff(j, k);
            let (vxx, vyy) = v.second_diff(j, k);
            let pi = x * vx + y * vy;
            let r = 0.5 * 4.0 * x * x * vxx + 0.5 * 0.04 * y * y * vyy - 0.03 * v.get(j, k)
                + 1.0
                + 0.5 * pi * pi;
            expected = expected.max(r.abs());
        }
        assert_abs_diff_eq!(semilinear_residual(&p, &v).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn norms_of_simple_fields() {
        let (_, g) = example_grid(6);
        let w = ScalarField::from_fn(g, |x, _| 3.0 * x * x);
        assert_abs_diff_eq!(field_norm(&w, NormKind::Sup), 12.0, epsilon = 1e-12);
        // largest interior x is 1.7
        assert_abs_diff_eq!(field_norm(&w, NormKind::Gradient), 6.0 * 1.7, epsilon = 1e-9);
        assert_abs_diff_eq!(field_norm(&w, NormKind::SecondDifference), 6.0, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn residual_is_nonnegative(vals in prop::collection::vec(-1.0f64..1.0, 64)) {
            let (p, g) = example_grid(8);
            let w = ScalarField::from_values(g, vals).unwrap();
            let r = residual_field(&p, &w).unwrap();
            prop_assert!(r.values().iter().all(|&v| v >= 0.0));
        }
    }
}
