//! The three subcommands: denoise, validate, bench.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use pdsplit_core::imaging::{
    add_gaussian_noise, build_problem, isnr, DenoiseModel, Image, ModelConfig, SolverKind,
};
use pdsplit_core::inclusion::{evaluate_primal_objective, SolverState};
use pdsplit_core::prox::GroupNormParams;
use pdsplit_core::solvers::{
    certify_fb, certify_fbf, default_fb_params, default_fbf_params, instrument_problem, solve,
    ExtraMetrics, FbBlockSteps, FbParams, FbfParams, MethodParams, Schedule, SolveOptions,
    StopRule,
};
use pdsplit_core::Error;

use crate::checks;
use crate::config::{log_level, LogLevel, RunConfig};
use crate::csvout;
use crate::errors::{io_err, CliError};
use crate::pnm;

fn info(msg: &str) {
    if log_level() >= LogLevel::Info {
        eprintln!("pdsplit: {msg}");
    }
}

fn model_config(cfg: &RunConfig) -> Result<ModelConfig, CliError> {
    let model = DenoiseModel::parse(&cfg.model).map_err(|e| CliError::Usage(e.to_string()))?;
    // validate the weight pairs early for a usage-class error
    GroupNormParams::new(cfg.omega1.to_vec(), cfg.alpha1)
        .and_then(|_| GroupNormParams::new(cfg.omega2.to_vec(), cfg.alpha2))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(ModelConfig {
        model,
        alpha1: cfg.alpha1,
        alpha2: cfg.alpha2,
        omega1: cfg.omega1,
        omega2: cfg.omega2,
    })
}

struct PreparedRun {
    noisy: Image,
    reference: Option<Image>,
    model: ModelConfig,
    solver: SolverKind,
}

fn prepare(cfg: &RunConfig) -> Result<PreparedRun, CliError> {
    let input_path = cfg
        .input
        .as_ref()
        .ok_or_else(|| CliError::Usage("--input is required".into()))?;
    let input = pnm::read_pnm(input_path)?;
    let solver = SolverKind::parse(&cfg.solver).map_err(|e| CliError::Usage(e.to_string()))?;
    let model = model_config(cfg)?;

    // synthetic-noise mode: the input is treated as clean, noise is added
    // here, and the input doubles as the ISNR reference unless one is given
    let (noisy, mut reference) = match cfg.noise_sigma {
        Some(sigma) => {
            let noisy = add_gaussian_noise(&input, sigma, cfg.seed)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            (noisy, Some(input))
        }
        None => (input, None),
    };
    if let Some(ref_path) = &cfg.reference {
        reference = Some(pnm::read_pnm(ref_path)?);
    }
    if let Some(r) = &reference {
        if r.shape != noisy.shape {
            return Err(CliError::Usage(
                "reference image dimensions differ from the input".into(),
            ));
        }
    }
    Ok(PreparedRun {
        noisy,
        reference,
        model,
        solver,
    })
}

fn method_params(
    cfg: &RunConfig,
    spec: &pdsplit_core::inclusion::ProblemSpec,
    solver: SolverKind,
) -> Result<MethodParams, CliError> {
    match solver {
        SolverKind::ForwardBackward => {
            let mut params = match cfg.explicit_fb_steps()? {
                Some([tau, theta1, theta2, gamma1, gamma2, sigma]) => FbParams {
                    tau,
                    blocks: vec![
                        FbBlockSteps {
                            theta1,
                            theta2,
                            gamma1,
                            gamma2,
                            sigma,
                        };
                        spec.blocks.len()
                    ],
                    relaxation: Schedule::Constant(1.0),
                    epsilon: 1e-6,
                },
                None => default_fb_params(spec).map_err(|e| CliError::Usage(e.to_string()))?,
            };
            if let Some(lambda) = cfg.lambda {
                params.relaxation = Schedule::Constant(lambda);
            }
            certify_fb(spec, &params).map_err(|v| CliError::Certification(v.to_string()))?;
            Ok(MethodParams::Fb(params))
        }
        SolverKind::ForwardBackwardForward => {
            let defaults = default_fbf_params(spec);
            let params = match cfg.fbf_gamma {
                Some(g) => {
                    let beta = certify_fbf(spec);
                    let hi = (1.0 - defaults.epsilon) / beta;
                    if !(g >= defaults.epsilon && g <= hi) {
                        return Err(CliError::Certification(format!(
                            "fbf step gamma = {g} outside [{}, {hi}] for beta = {beta}",
                            defaults.epsilon
                        )));
                    }
                    FbfParams::new(beta, defaults.epsilon, Schedule::Constant(g))
                        .map_err(|e| CliError::Certification(e.to_string()))?
                }
                None => defaults,
            };
            Ok(MethodParams::Fbf(params))
        }
    }
}

fn map_solver_error(e: Error) -> CliError {
    match e {
        Error::Divergence { iteration } => {
            CliError::Divergence(format!("non-finite iterate at iteration {iteration}"))
        }
        Error::StepCondition(msg) => CliError::Certification(msg),
        other => CliError::Usage(other.to_string()),
    }
}

pub fn cmd_denoise(cfg: &RunConfig) -> Result<(), CliError> {
    let run = prepare(cfg)?;
    let output_path = cfg
        .output
        .as_ref()
        .ok_or_else(|| CliError::Usage("--output is required".into()))?;
    let spec = build_problem(&run.noisy, &run.model).map_err(|e| CliError::Usage(e.to_string()))?;
    let params = method_params(cfg, &spec, run.solver)?;

    let mut csv = match &cfg.metrics {
        Some(path) => {
            let file = File::create(path).map_err(|e| io_err("creating metrics file", e))?;
            let mut w = BufWriter::new(file);
            csvout::write_header(&mut w).map_err(|e| io_err("writing metrics", e))?;
            Some(w)
        }
        None => None,
    };
    let wall = cfg.wall_time;
    let mut observer = |rec: &pdsplit_core::solvers::TraceRecord| {
        if let Some(w) = csv.as_mut() {
            // write errors surface at the final flush
            let _ = csvout::write_record(w, rec, wall);
        }
    };

    let clean = run.reference.as_ref().map(|r| r.pixels.clone());
    let noisy_pixels = run.noisy.pixels.clone();
    let spec_metrics = spec.clone();
    let extra = move |_i: usize, state: &SolverState| -> ExtraMetrics {
        let ys: Vec<Vec<f64>> = state.blocks.iter().map(|b| b.right_split.clone()).collect();
        ExtraMetrics {
            objective: evaluate_primal_objective(&spec_metrics, &state.primal, &ys).ok(),
            isnr: clean
                .as_ref()
                .and_then(|c| isnr(c, &noisy_pixels, &state.primal).ok()),
        }
    };

    let report = solve(
        &spec,
        SolverState::from_primal(&spec, run.noisy.pixels.clone()),
        &params,
        &SolveOptions {
            stop: StopRule {
                max_iters: cfg.iters,
                residual_tol: cfg.tol,
            },
            injector: None,
        },
        Some(&extra),
        Some(&mut observer),
    )
    .map_err(|f| map_solver_error(f.error))?;

    if let Some(mut w) = csv {
        w.flush().map_err(|e| io_err("flushing metrics", e))?;
    }
    pnm::write_pnm(output_path, &report.state_image(&run.noisy))?;

    let last = report.trace.records.last();
    println!(
        "denoise: model={} solver={} iterations={} reason={:?} residual={}",
        cfg.model,
        cfg.solver,
        report.iterations,
        report.reason,
        last.map(|r| r.residual.to_string()).unwrap_or_default()
    );
    if let Some(r) = last {
        if let Some(gain) = r.isnr {
            println!("denoise: isnr={gain}");
        }
    }
    info(&format!(
        "run finished in {:.3}s",
        last.map(|r| r.elapsed_s).unwrap_or(0.0)
    ));
    Ok(())
}

trait StateImage {
    fn state_image(&self, template: &Image) -> Image;
}

impl StateImage for pdsplit_core::solvers::SolveReport {
    fn state_image(&self, template: &Image) -> Image {
        Image::new(template.shape, self.state.primal.clone())
            .expect("solver state has the input dimensions")
            .clamped_unit()
    }
}

pub fn cmd_validate() -> Result<(), CliError> {
    let rows = checks::run_all();
    let name_width = rows.iter().map(|r| r.name.len()).max().unwrap_or(8);
    println!("{:<name_width$}  {:<6}  max_error", "check", "status");
    let mut all_pass = true;
    for row in &rows {
        println!(
            "{:<name_width$}  {:<6}  {:e}",
            row.name,
            if row.pass { "pass" } else { "FAIL" },
            row.max_err
        );
        all_pass &= row.pass;
    }
    if all_pass {
        println!("validate: all {} checks passed", rows.len());
        Ok(())
    } else {
        Err(CliError::Usage("self-validation failed".into()))
    }
}

pub fn cmd_bench(cfg: &RunConfig) -> Result<(), CliError> {
    let run = prepare(cfg)?;
    let base = build_problem(&run.noisy, &run.model).map_err(|e| CliError::Usage(e.to_string()))?;
    let metrics_stem = cfg
        .metrics
        .as_ref()
        .ok_or_else(|| CliError::Usage("--metrics is required for bench".into()))?;

    let mut per_iter = Vec::new();
    let mut wall_per_iter = Vec::new();
    let mut iterations = Vec::new();
    for solver in [SolverKind::ForwardBackward, SolverKind::ForwardBackwardForward] {
        let label = match solver {
            SolverKind::ForwardBackward => "fb",
            SolverKind::ForwardBackwardForward => "fbf",
        };
        let (spec, counter) = instrument_problem(&base);
        let params = method_params(cfg, &spec, solver)?;
        let path = bench_csv_path(metrics_stem, label);
        let file = File::create(&path).map_err(|e| io_err("creating bench metrics", e))?;
        let mut w = BufWriter::new(file);
        csvout::write_header(&mut w).map_err(|e| io_err("writing bench metrics", e))?;
        let wall = cfg.wall_time;
        let mut observer = |rec: &pdsplit_core::solvers::TraceRecord| {
            let _ = csvout::write_record(&mut w, rec, wall);
        };

        let clean = run.reference.as_ref().map(|r| r.pixels.clone());
        let noisy_pixels = run.noisy.pixels.clone();
        // metrics evaluate through the uninstrumented spec so the counter
        // sees only the sweeps themselves
        let spec_metrics = base.clone();
        let extra = move |_i: usize, state: &SolverState| -> ExtraMetrics {
            let ys: Vec<Vec<f64>> =
                state.blocks.iter().map(|b| b.right_split.clone()).collect();
            ExtraMetrics {
                objective: evaluate_primal_objective(&spec_metrics, &state.primal, &ys).ok(),
                isnr: clean
                    .as_ref()
                    .and_then(|c| isnr(c, &noisy_pixels, &state.primal).ok()),
            }
        };
        let report = solve(
            &spec,
            SolverState::from_primal(&spec, run.noisy.pixels.clone()),
            &params,
            &SolveOptions {
                stop: StopRule {
                    max_iters: cfg.iters,
                    residual_tol: cfg.tol,
                },
                injector: None,
            },
            Some(&extra),
            Some(&mut observer),
        )
        .map_err(|f| map_solver_error(f.error))?;
        w.flush().map_err(|e| io_err("flushing bench metrics", e))?;

        let iters = report.iterations.max(1);
        per_iter.push(counter.get() as f64 / iters as f64);
        wall_per_iter.push(
            report
                .trace
                .records
                .last()
                .map(|r| r.elapsed_s / iters as f64)
                .unwrap_or(0.0),
        );
        iterations.push(report.iterations);
        info(&format!("{label}: {} iterations, csv {}", report.iterations, path.display()));
    }

    println!(
        "bench: fb_iters={} fbf_iters={} ops_per_iter_fb={} ops_per_iter_fbf={} op_ratio={}",
        iterations[0],
        iterations[1],
        per_iter[0],
        per_iter[1],
        per_iter[1] / per_iter[0]
    );
    info(&format!(
        "mean wall time per iteration: fb {:.3e}s, fbf {:.3e}s (ratio {:.2})",
        wall_per_iter[0],
        wall_per_iter[1],
        wall_per_iter[1] / wall_per_iter[0].max(1e-300)
    ));
    Ok(())
}

pub fn bench_csv_path(stem: &Path, label: &str) -> std::path::PathBuf {
    let mut name = stem.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".{label}.csv"));
    stem.with_file_name(name)
}
