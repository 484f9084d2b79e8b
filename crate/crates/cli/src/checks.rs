//! Embedded self-check suite behind the `validate` subcommand.
//!
//! Each check returns its name, the measured worst error, and a pass flag;
//! the check functions accept the objects under test so the test suite can
//! feed them deliberately broken doubles.

use std::sync::Arc;

use pdsplit_core::imaging::{Image, ModelConfig};
use pdsplit_core::inclusion::{optimality_residual, SolverState};
use pdsplit_core::linop::{
    gradient_stack, horizontal_diff, second_diff_stack, second_order_link, vertical_diff,
    GridShape, LinOp,
};
use pdsplit_core::oracle::prox_by_minimization;
use pdsplit_core::prox::{GroupNorm, GroupNormParams, Proximable, QuadraticFidelity, ScaledL1, ZeroFunction};
use pdsplit_core::rng::DetRng;
use pdsplit_core::solvers::{default_fb_params, default_fbf_params, solve, MethodParams, SolveOptions, StopRule};
use pdsplit_core::vecmath::{dist2, dot, norm2};

#[derive(Debug, Clone)]
pub struct CheckRow {
    pub name: String,
    pub pass: bool,
    pub max_err: f64,
}

impl CheckRow {
    fn from_error(name: &str, max_err: f64, tol: f64) -> CheckRow {
        CheckRow {
            name: name.to_string(),
            pass: max_err <= tol,
            max_err,
        }
    }
}

/// Adjoint-identity check on random pairs.
pub fn adjoint_check(name: &str, op: &LinOp, pairs: usize, tol: f64, seed: u64) -> CheckRow {
    let mut rng = DetRng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let x = rng.signed_vector(op.in_dim());
        let y = rng.signed_vector(op.out_dim());
        let (lx, lty) = match (op.apply(&x), op.apply_adjoint(&y)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => {
                return CheckRow {
                    name: name.to_string(),
                    pass: false,
                    max_err: f64::INFINITY,
                }
            }
        };
        let gap = (dot(&lx, &y) - dot(&x, &lty)).abs();
        worst = worst.max(gap / (1.0 + norm2(&lx) * norm2(&y)));
    }
    CheckRow::from_error(name, worst, tol)
}

/// Moreau decomposition for one proximable across a step sweep.
pub fn moreau_check(name: &str, f: &dyn Proximable, tol: f64, seed: u64) -> CheckRow {
    let mut rng = DetRng::new(seed);
    let mut worst: f64 = 0.0;
    for &gamma in &[1e-2, 0.3, 1.0, 30.0, 1e2] {
        for _ in 0..40 {
            let x: Vec<f64> = rng.signed_vector(f.dim()).iter().map(|v| 3.0 * v).collect();
            let outcome = (|| -> pdsplit_core::Result<f64> {
                let p = f.prox(gamma, &x)?;
                let scaled: Vec<f64> = x.iter().map(|v| v / gamma).collect();
                let pc = f.prox_conjugate(1.0 / gamma, &scaled)?;
                let recon: Vec<f64> = p.iter().zip(&pc).map(|(a, b)| a + gamma * b).collect();
                Ok(dist2(&recon, &x) / (1.0 + norm2(&x)))
            })();
            match outcome {
                Ok(err) => worst = worst.max(err),
                Err(_) => {
                    return CheckRow {
                        name: name.to_string(),
                        pass: false,
                        max_err: f64::INFINITY,
                    }
                }
            }
        }
    }
    CheckRow::from_error(name, worst, tol)
}

/// Closed-form prox against the minimization oracle in low dimensions.
pub fn prox_oracle_check(name: &str, f: &dyn Proximable, tol: f64, seed: u64) -> CheckRow {
    let mut rng = DetRng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..25 {
        let gamma = rng.uniform_in(0.1, 3.0);
        let x: Vec<f64> = rng.signed_vector(f.dim()).iter().map(|v| 2.0 * v).collect();
        let closed = match f.prox(gamma, &x) {
            Ok(v) => v,
            Err(_) => {
                return CheckRow {
                    name: name.to_string(),
                    pass: false,
                    max_err: f64::INFINITY,
                }
            }
        };
        let eval = |y: &[f64]| f.evaluate(y).unwrap_or(f64::INFINITY);
        match prox_by_minimization(&eval, gamma, &x, 1e-9) {
            Ok(oracle) => worst = worst.max(dist2(&closed, &oracle)),
            Err(_) => {
                return CheckRow {
                    name: name.to_string(),
                    pass: false,
                    max_err: f64::INFINITY,
                }
            }
        }
    }
    CheckRow::from_error(name, worst, tol)
}

/// Solve a tiny instance with both sweeps and verify the limit is a common
/// fixed point via the optimality residual.
pub fn fixed_point_check(tol: f64) -> CheckRow {
    let shape = GridShape::new(4, 4, 1).unwrap();
    let img = Image::constant(shape, 0.3);
    let noisy = pdsplit_core::imaging::add_gaussian_noise(&img, 0.05, 99).unwrap();
    let spec = pdsplit_core::imaging::build_ic_problem(&noisy, &ModelConfig::default()).unwrap();
    let stop = StopRule {
        max_iters: 200_000,
        residual_tol: 1e-13,
    };
    let mut worst: f64 = 0.0;
    for params in [
        MethodParams::Fb(default_fb_params(&spec).unwrap()),
        MethodParams::Fbf(default_fbf_params(&spec)),
    ] {
        let report = match solve(
            &spec,
            SolverState::from_primal(&spec, noisy.pixels.clone()),
            &params,
            &SolveOptions {
                stop,
                injector: None,
            },
            None,
            None,
        ) {
            Ok(r) => r,
            Err(_) => {
                return CheckRow {
                    name: "fixed_point_invariance".into(),
                    pass: false,
                    max_err: f64::INFINITY,
                }
            }
        };
        let fb = default_fb_params(&spec).unwrap();
        match optimality_residual(&spec, &report.state, &fb) {
            Ok(r) => worst = worst.max(r),
            Err(_) => {
                return CheckRow {
                    name: "fixed_point_invariance".into(),
                    pass: false,
                    max_err: f64::INFINITY,
                }
            }
        }
    }
    CheckRow::from_error("fixed_point_invariance", worst, tol)
}

/// The full stock suite run by `pdsplit validate`.
pub fn run_all() -> Vec<CheckRow> {
    let shape = GridShape::new(16, 16, 1).unwrap();
    let mut rows = vec![
        adjoint_check("adjoint/vertical_diff", &vertical_diff(shape), 100, 1e-10, 1),
        adjoint_check("adjoint/horizontal_diff", &horizontal_diff(shape), 100, 1e-10, 2),
        adjoint_check("adjoint/gradient_stack", &gradient_stack(shape), 100, 1e-10, 3),
        adjoint_check("adjoint/second_diff_stack", &second_diff_stack(shape), 100, 1e-10, 4),
        adjoint_check("adjoint/second_order_link", &second_order_link(shape), 100, 1e-10, 5),
    ];
    let proximables: Vec<(&str, Arc<dyn Proximable>)> = vec![
        ("moreau/zero", Arc::new(ZeroFunction::new(3))),
        ("moreau/l1", Arc::new(ScaledL1::new(3, 0.7).unwrap())),
        (
            "moreau/quadratic",
            Arc::new(QuadraticFidelity::new(vec![0.2, -0.4, 1.0])),
        ),
        (
            "moreau/group_uniform",
            Arc::new(GroupNorm::new(GroupNormParams::new(vec![1.0, 1.0], 0.5).unwrap(), 1).unwrap()),
        ),
        (
            "moreau/group_weighted",
            Arc::new(GroupNorm::new(GroupNormParams::new(vec![1.4, 0.6], 0.8).unwrap(), 1).unwrap()),
        ),
    ];
    for (i, (name, f)) in proximables.iter().enumerate() {
        rows.push(moreau_check(name, f.as_ref(), 1e-10, 10 + i as u64));
    }
    let oracle_targets: Vec<(&str, Arc<dyn Proximable>)> = vec![
        (
            "prox_oracle/group_uniform",
            Arc::new(GroupNorm::new(GroupNormParams::new(vec![1.0, 1.0], 0.5).unwrap(), 1).unwrap()),
        ),
        (
            "prox_oracle/group_weighted",
            Arc::new(GroupNorm::new(GroupNormParams::new(vec![1.4, 0.6], 0.8).unwrap(), 1).unwrap()),
        ),
        (
            "prox_oracle/quadratic",
            Arc::new(QuadraticFidelity::new(vec![0.3, -0.9])),
        ),
    ];
    for (i, (name, f)) in oracle_targets.iter().enumerate() {
        rows.push(prox_oracle_check(name, f.as_ref(), 1e-6, 20 + i as u64));
    }
    rows.push(fixed_point_check(1e-10));
    rows
}
