use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Vector1;
use pia_core::analysis::analyze;
use pia_core::mc::{estimate_value, PolicySource};
use pia_core::pia::{evaluate_policy, run_pia, solve_linear_baseline, write_convergence_csv, PiaError, PiaResult};
use pia_core::problem::make_example_problem;
use pia_core::{ControlProblem, Grid2D, IterationRecord, PolicyField, ScalarField, SolveOptions};

use crate::config::RunConfig;
use crate::CliError;

/// Point updates of the zero-policy solve in the published reference run.
const PUBLISHED_LINEAR_COUNT: u64 = 24_541_704;

fn write_file(
    out: &Path,
    name: &str,
    written: &mut Vec<String>,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let path = out.join(name);
    let wrap = |source| CliError::Output {
        path: path.clone(),
        source,
    };
    let mut w = BufWriter::new(File::create(&path).map_err(wrap)?);
    body(&mut w).and_then(|_| w.flush()).map_err(wrap)?;
    written.push(name.to_string());
    Ok(())
}

fn setup(cfg: &RunConfig) -> Result<(ControlProblem<1>, Grid2D), CliError> {
    let problem =
        make_example_problem(cfg.example_params()?).map_err(|e| CliError::Config(e.to_string()))?;
    let grid = Grid2D::over(problem.domain(), cfg.nodes).map_err(|e| CliError::Config(e.to_string()))?;
    Ok((problem, grid))
}

fn write_manifest(out: &Path, written: &[String], status: &str) -> Result<(), CliError> {
    let mut names = written.to_vec();
    write_file(out, "MANIFEST", &mut names, |w| {
        writeln!(w, "status: {status}")?;
        for name in written {
            writeln!(w, "{name}")?;
        }
        Ok(())
    })
}

fn print_table(records: &[IterationRecord]) {
    println!(
        "{:>4}  {:>16}  {:>16}  {:>12}  {:>10}",
        "step", "|pi_i - pi_i-1|", "|V_i - V_i-1|", "calculations", "time (s)"
    );
    for r in records {
        let dv = r.max_dv.map(|v| format!("{v:.8}")).unwrap_or_default();
        println!(
            "{:>4}  {:>16.8}  {:>16}  {:>12}  {:>10.3}",
            r.step,
            r.max_dpi,
            dv,
            r.point_updates,
            r.wall_time.as_secs_f64()
        );
    }
    let total: u64 = records.iter().map(|r| r.point_updates).sum();
    println!("total calculations: {total}");
}

fn write_iterates(
    out: &Path,
    problem: &ControlProblem<1>,
    grid: &Grid2D,
    result: &PiaResult<1>,
    noise_floor: f64,
    written: &mut Vec<String>,
) -> Result<(), CliError> {
    write_file(out, "convergence.csv", written, |w| {
        write_convergence_csv(&result.records, w)
    })?;
    write_file(out, "timing.csv", written, |w| {
        writeln!(w, "step,wall_ms")?;
        for r in &result.records {
            writeln!(w, "{},{:.3}", r.step, r.wall_time.as_secs_f64() * 1e3)?;
        }
        Ok(())
    })?;
    write_file(out, "value.csv", written, |w| result.value.write_csv(w))?;
    write_file(out, "policy.csv", written, |w| result.policy.write_csv(w))?;
    print_table(&result.records);
    let report = analyze(problem, grid, result, noise_floor)?;
    write_file(out, "qlc_report.csv", written, |w| report.write_qlc_csv(w))?;
    println!();
    print!("{}", report.summary());
    Ok(())
}

pub fn solve(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let (problem, grid) = setup(cfg)?;
    let pia_cfg = cfg.pia_config()?;
    let noise_floor = cfg.noise_floor.unwrap_or(cfg.tol1);
    let mut written = Vec::new();
    match run_pia(&problem, &grid, &pia_cfg) {
        Ok(result) => {
            write_iterates(out, &problem, &grid, &result, noise_floor, &mut written)?;
            write_manifest(out, &written, "complete")
        }
        Err(PiaError::Setup(e)) => Err(CliError::Config(e.to_string())),
        Err(err) => {
            let partial = err.partial().expect("failed runs keep their iterates");
            // the analysis may itself fail on a short run; the iterates are still useful
            if let Err(e) = write_iterates(out, &problem, &grid, partial, noise_floor, &mut written) {
                if matches!(e, CliError::Output { .. }) {
                    return Err(e);
                }
            }
            write_manifest(out, &written, &format!("incomplete ({err})"))?;
            Err(CliError::Numerical(err.to_string()))
        }
    }
}

pub fn baseline(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let (problem, grid) = setup(cfg)?;
    let opts = SolveOptions {
        tol: cfg.tol1,
        scheme: cfg.sweep_scheme()?,
        max_sweeps: cfg.max_sweeps,
        record_trace: false,
        exec: cfg.execution(),
    };
    let (value, stats, converged) = solve_linear_baseline(&problem, &grid, &opts)?;
    let mut written = Vec::new();
    write_file(out, "linear_value.csv", &mut written, |w| value.write_csv(w))?;
    let ratio = stats.point_updates as f64 / PUBLISHED_LINEAR_COUNT as f64;
    write_file(out, "baseline.csv", &mut written, |w| {
        writeln!(w, "scheme,sweeps,point_updates,published_point_updates,ratio")?;
        writeln!(
            w,
            "{},{},{},{},{:.8}",
            opts.scheme.name(),
            stats.sweeps,
            stats.point_updates,
            PUBLISHED_LINEAR_COUNT,
            ratio
        )
    })?;
    println!(
        "point updates: {} ({} sweeps, {}); published: {}; ratio {:.4}",
        stats.point_updates,
        stats.sweeps,
        opts.scheme.name(),
        PUBLISHED_LINEAR_COUNT,
        ratio
    );
    if converged {
        write_manifest(out, &written, "complete")
    } else {
        write_manifest(out, &written, "incomplete (sweep budget exhausted)")?;
        Err(CliError::Numerical(format!(
            "linear solve did not reach tol1 in {} sweeps",
            stats.sweeps
        )))
    }
}

struct Reference<'a> {
    label: &'static str,
    field: ScalarField,
    policy: PolicySource<'a, 1>,
}

pub fn validate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let (mc_cfg, block) = cfg.mc_config()?;
    let (problem, grid) = setup(cfg)?;
    let pia_cfg = cfg.pia_config()?;
    let result = run_pia(&problem, &grid, &pia_cfg).map_err(|e| match e {
        PiaError::Setup(e) => CliError::Config(e.to_string()),
        other => CliError::Numerical(other.to_string()),
    })?;
    let tight = SolveOptions {
        tol: block.reference_tol,
        scheme: pia_cfg.scheme,
        max_sweeps: cfg.max_sweeps,
        record_trace: false,
        exec: pia_cfg.exec,
    };
    let zero = PolicyField::zeros(grid);
    let (zero_out, _) = evaluate_policy(&problem, &grid, &zero, &ScalarField::zeros(grid), &tight)?;
    let (final_out, _) = evaluate_policy(&problem, &grid, &result.policy, &result.value, &tight)?;
    if !zero_out.converged || !final_out.converged {
        return Err(CliError::Numerical(
            "reference solve did not reach mc.reference_tol".into(),
        ));
    }
    let references = [
        Reference {
            label: "zero",
            field: zero_out.field,
            policy: PolicySource::Constant(Vector1::zeros()),
        },
        Reference {
            label: "converged",
            field: final_out.field,
            policy: PolicySource::Field(&result.policy),
        },
    ];

    let mut rows = Vec::new();
    for &[x, y] in &block.probes {
        for r in &references {
            let fdm = r.field.interpolate(x, y);
            let est = estimate_value(&problem, r.policy, (x, y), &mc_cfg, cfg.execution())?;
            let z = est.z_score(fdm, 0.02);
            let flagged = z.abs() > 3.0;
            println!(
                "{:>9} ({x}, {y}): FDM {fdm:.8}  MC {:.8} +- {:.8}  z {z:.3}{}",
                r.label,
                est.mean,
                est.std_error,
                if flagged { "  FLAGGED" } else { "" }
            );
            rows.push((r.label, x, y, fdm, est, z, flagged));
        }
    }
    let mut written = Vec::new();
    write_file(out, "mc_check.csv", &mut written, |w| {
        writeln!(w, "policy,x,y,fdm_value,mc_mean,std_error,z_score,flagged")?;
        for (label, x, y, fdm, est, z, flagged) in &rows {
            writeln!(
                w,
                "{label},{x:.8},{y:.8},{fdm:.8},{:.8},{:.8},{z:.8},{flagged}",
                est.mean, est.std_error
            )?;
        }
        Ok(())
    })?;
    write_manifest(out, &written, "complete")
}

