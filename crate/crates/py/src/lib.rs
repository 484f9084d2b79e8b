//! Python bindings for the splitting toolkit.
//!
//! Exposes the denoising pipeline and the main building blocks (difference
//! operators, group-norm prox, deterministic noise, ISNR) over plain Python
//! lists of floats. Images use the library's canonical layout: per-channel
//! planes, each column-major (`index = channel*rows*cols + col*rows + row`).
//!
//! ```python
//! import pdsplit
//! clean = pdsplit.synthesize_image("affine", 32, 32, seed=1)
//! noisy = pdsplit.add_gaussian_noise(clean, 32, 32, sigma=0.08, seed=2)
//! out = pdsplit.denoise(noisy, 32, 32, model="ic", solver="fb", max_iters=400)
//! print(pdsplit.isnr(clean, noisy, out.pixels))
//! ```

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use pdsplit_core::imaging::{
    self, DenoiseModel, Image, ModelConfig, SolverKind, TestImageKind,
};
use pdsplit_core::linop::{
    gradient_stack, power_iteration_norm, second_diff_stack, second_order_link, GridShape, LinOp,
};
use pdsplit_core::prox::{GroupNorm, GroupNormParams, Proximable};
use pdsplit_core::solvers::{SolveOptions, StopRule, StopReason};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn shape_of(rows: usize, cols: usize, channels: usize) -> PyResult<GridShape> {
    GridShape::new(rows, cols, channels).map_err(value_err)
}

fn image_of(pixels: Vec<f64>, rows: usize, cols: usize, channels: usize) -> PyResult<Image> {
    Image::new(shape_of(rows, cols, channels)?, pixels).map_err(value_err)
}

/// Result of a denoising run.
#[pyclass]
pub struct DenoiseResult {
    /// Restored image in the canonical layout (not clamped).
    #[pyo3(get)]
    pub pixels: Vec<f64>,
    #[pyo3(get)]
    pub iterations: usize,
    #[pyo3(get)]
    pub final_residual: f64,
    #[pyo3(get)]
    pub converged: bool,
    #[pyo3(get)]
    pub final_objective: Option<f64>,
    /// Per-iteration ISNR when a reference image was supplied.
    #[pyo3(get)]
    pub final_isnr: Option<f64>,
}

/// Deterministic synthetic test image ("affine" or "blocks") in [0, 1].
#[pyfunction]
#[pyo3(signature = (kind, rows, cols, seed, channels = 1))]
fn synthesize_image(
    kind: &str,
    rows: usize,
    cols: usize,
    seed: u64,
    channels: usize,
) -> PyResult<Vec<f64>> {
    let kind = TestImageKind::parse(kind).map_err(value_err)?;
    let shape = shape_of(rows, cols, channels)?;
    Ok(imaging::synthesize_test_image(kind, shape, seed).pixels)
}

/// Seeded i.i.d. Gaussian noise added per component (no clamping).
#[pyfunction]
#[pyo3(signature = (pixels, rows, cols, sigma, seed, channels = 1))]
fn add_gaussian_noise(
    pixels: Vec<f64>,
    rows: usize,
    cols: usize,
    sigma: f64,
    seed: u64,
    channels: usize,
) -> PyResult<Vec<f64>> {
    let img = image_of(pixels, rows, cols, channels)?;
    Ok(imaging::add_gaussian_noise(&img, sigma, seed)
        .map_err(value_err)?
        .pixels)
}

/// Improvement in signal-to-noise ratio in dB; +inf on exact recovery.
#[pyfunction]
fn isnr(clean: Vec<f64>, noisy: Vec<f64>, current: Vec<f64>) -> PyResult<f64> {
    imaging::isnr(&clean, &noisy, &current).map_err(value_err)
}

/// Run the denoiser. `model` is "ic" or "mic", `solver` is "fb" or "fbf";
/// step sizes are the certified heuristic defaults. Pass `reference` to get
/// the final ISNR in the result.
#[pyfunction]
#[pyo3(signature = (
    pixels, rows, cols, model = "ic", solver = "fb", alpha1 = 0.06, alpha2 = 0.2,
    max_iters = 500, tol = 1e-8, channels = 1, reference = None
))]
#[allow(clippy::too_many_arguments)]
fn denoise(
    pixels: Vec<f64>,
    rows: usize,
    cols: usize,
    model: &str,
    solver: &str,
    alpha1: f64,
    alpha2: f64,
    max_iters: usize,
    tol: f64,
    channels: usize,
    reference: Option<Vec<f64>>,
) -> PyResult<DenoiseResult> {
    let noisy = image_of(pixels, rows, cols, channels)?;
    let reference = reference
        .map(|r| image_of(r, rows, cols, channels))
        .transpose()?;
    let cfg = ModelConfig {
        model: DenoiseModel::parse(model).map_err(value_err)?,
        alpha1,
        alpha2,
        ..ModelConfig::default()
    };
    let solver = SolverKind::parse(solver).map_err(value_err)?;
    let outcome = imaging::denoise(
        &noisy,
        &cfg,
        solver,
        &SolveOptions {
            stop: StopRule {
                max_iters,
                residual_tol: tol,
            },
            injector: None,
        },
        reference.as_ref(),
        None,
    )
    .map_err(value_err)?;
    let last = outcome.report.trace.records.last();
    Ok(DenoiseResult {
        pixels: outcome.restored.pixels,
        iterations: outcome.report.iterations,
        final_residual: last.map(|r| r.residual).unwrap_or(0.0),
        converged: outcome.report.reason == StopReason::Converged,
        final_objective: last.and_then(|r| r.objective),
        final_isnr: last.and_then(|r| r.isnr),
    })
}

fn named_operator(name: &str, shape: GridShape) -> PyResult<LinOp> {
    match name {
        "gradient" => Ok(gradient_stack(shape)),
        "second" => Ok(second_diff_stack(shape)),
        "link" => Ok(second_order_link(shape)),
        "vertical" => Ok(pdsplit_core::linop::vertical_diff(shape)),
        "horizontal" => Ok(pdsplit_core::linop::horizontal_diff(shape)),
        other => Err(PyValueError::new_err(format!(
            "unknown operator '{other}' (gradient, second, link, vertical, horizontal)"
        ))),
    }
}

/// Apply a named grid operator to an image vector.
#[pyfunction]
#[pyo3(signature = (name, pixels, rows, cols, channels = 1))]
fn apply_operator(
    name: &str,
    pixels: Vec<f64>,
    rows: usize,
    cols: usize,
    channels: usize,
) -> PyResult<Vec<f64>> {
    let op = named_operator(name, shape_of(rows, cols, channels)?)?;
    op.apply(&pixels).map_err(value_err)
}

/// Apply the adjoint of a named grid operator.
#[pyfunction]
#[pyo3(signature = (name, field, rows, cols, channels = 1))]
fn apply_operator_adjoint(
    name: &str,
    field: Vec<f64>,
    rows: usize,
    cols: usize,
    channels: usize,
) -> PyResult<Vec<f64>> {
    let op = named_operator(name, shape_of(rows, cols, channels)?)?;
    op.apply_adjoint(&field).map_err(value_err)
}

/// Power-iteration estimate of a named operator's norm, with its certified
/// bound, as a `(estimate, bound)` pair.
#[pyfunction]
#[pyo3(signature = (name, rows, cols, iters = 300, seed = 7, channels = 1))]
fn operator_norm(
    name: &str,
    rows: usize,
    cols: usize,
    iters: usize,
    seed: u64,
    channels: usize,
) -> PyResult<(f64, f64)> {
    let op = named_operator(name, shape_of(rows, cols, channels)?)?;
    let est = power_iteration_norm(&op, iters, seed).map_err(value_err)?;
    Ok((est, op.norm_bound()))
}

/// Prox of the weighted group norm `alpha * ||.||_{1,w}` at step `gamma`.
/// `field` holds `len(weights)` stacked planes.
#[pyfunction]
fn prox_group_norm(
    field: Vec<f64>,
    weights: Vec<f64>,
    alpha: f64,
    gamma: f64,
) -> PyResult<Vec<f64>> {
    let params = GroupNormParams::new(weights, alpha).map_err(value_err)?;
    let k = params.block_size();
    if field.is_empty() || field.len() % k != 0 {
        return Err(PyValueError::new_err(format!(
            "field length {} is not a multiple of the block size {k}",
            field.len()
        )));
    }
    let g = GroupNorm::new(params, field.len() / k).map_err(value_err)?;
    g.prox(gamma, &field).map_err(value_err)
}

#[pymodule]
fn pdsplit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<DenoiseResult>()?;
    m.add_function(wrap_pyfunction!(synthesize_image, m)?)?;
    m.add_function(wrap_pyfunction!(add_gaussian_noise, m)?)?;
    m.add_function(wrap_pyfunction!(isnr, m)?)?;
    m.add_function(wrap_pyfunction!(denoise, m)?)?;
    m.add_function(wrap_pyfunction!(apply_operator, m)?)?;
    m.add_function(wrap_pyfunction!(apply_operator_adjoint, m)?)?;
    m.add_function(wrap_pyfunction!(operator_norm, m)?)?;
    m.add_function(wrap_pyfunction!(prox_group_norm, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
