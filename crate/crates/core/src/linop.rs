//! Matrix-free linear operators.
//!
//! A [`LinOp`] packages a forward rule, an adjoint rule, the two dimensions,
//! and a certified upper bound on the operator norm. Operators are immutable
//! value-semantics objects (closures behind `Arc`), cheap to clone and safe to
//! evaluate from multiple threads. Nothing here ever materializes a matrix;
//! the imaging stencils below act directly on the canonical vector layout.
//!
//! Canonical layout: an image of `rows x cols x channels` is stored as one
//! `f64` vector of per-channel planes, each plane column-major, i.e.
//! `index = channel*rows*cols + col*rows + row`. Grid operators act on each
//! channel plane independently.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::rng::DetRng;
use crate::vecmath;

type ApplyRule = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A bounded linear operator given by its forward and adjoint rules.
///
/// Invariants expected from every constructor:
/// * forward maps length `in_dim` to length `out_dim`, adjoint the reverse;
/// * `<apply(x), y> == <x, apply_adjoint(y)>` for all matching `x`, `y`;
/// * `norm_bound` is a true upper bound: `||apply(x)|| <= norm_bound * ||x||`.
#[derive(Clone)]
pub struct LinOp {
    in_dim: usize,
    out_dim: usize,
    norm_bound: f64,
    forward: ApplyRule,
    adjoint: ApplyRule,
}

impl fmt::Debug for LinOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinOp")
            .field("in_dim", &self.in_dim)
            .field("out_dim", &self.out_dim)
            .field("norm_bound", &self.norm_bound)
            .finish()
    }
}

impl LinOp {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        norm_bound: f64,
        forward: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        adjoint: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        assert!(in_dim > 0 && out_dim > 0, "operator dimensions must be positive");
        assert!(norm_bound >= 0.0, "norm bound must be nonnegative");
        LinOp {
            in_dim,
            out_dim,
            norm_bound,
            forward: Arc::new(forward),
            adjoint: Arc::new(adjoint),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Certified upper bound on the operator norm.
    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("LinOp::apply", self.in_dim, x)?;
        let y = (self.forward)(x);
        debug_assert_eq!(y.len(), self.out_dim);
        Ok(y)
    }

    pub fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("LinOp::apply_adjoint", self.out_dim, y)?;
        let x = (self.adjoint)(y);
        debug_assert_eq!(x.len(), self.in_dim);
        Ok(x)
    }
}

/// Image grid dimensions. `channels` is 1 (grayscale) or 3 (color).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    rows: usize,
    cols: usize,
    channels: usize,
}

impl GridShape {
    pub fn new(rows: usize, cols: usize, channels: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Parameter(format!(
                "grid must have positive extents, got {rows}x{cols}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Parameter(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        Ok(GridShape {
            rows,
            cols,
            channels,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Pixels in one channel plane.
    pub fn plane_len(&self) -> usize {
        self.rows * self.cols
    }

    /// Total vector length `rows * cols * channels`.
    pub fn len(&self) -> usize {
        self.rows * self.cols * self.channels
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        debug_assert!(row < self.rows && col < self.cols && channel < self.channels);
        channel * self.plane_len() + col * self.rows + row
    }
}

/// Forward difference with a zero last entry: `out[j] = v[j+1] - v[j]` for
/// `j < k-1`, `out[k-1] = 0`.
pub fn forward_difference_apply(k: usize, v: &[f64]) -> Result<Vec<f64>> {
    check_len("forward_difference_apply", k, v)?;
    let mut out = vec![0.0; k];
    fwd_diff_into(v, &mut out);
    Ok(out)
}

/// Adjoint (transpose) of [`forward_difference_apply`].
pub fn forward_difference_adjoint(k: usize, v: &[f64]) -> Result<Vec<f64>> {
    check_len("forward_difference_adjoint", k, v)?;
    let mut out = vec![0.0; k];
    fwd_diff_adjoint_into(v, &mut out);
    Ok(out)
}

fn fwd_diff_into(v: &[f64], out: &mut [f64]) {
    let k = v.len();
    for j in 0..k.saturating_sub(1) {
        out[j] = v[j + 1] - v[j];
    }
    if k > 0 {
        out[k - 1] = 0.0;
    }
}

fn fwd_diff_adjoint_into(v: &[f64], out: &mut [f64]) {
    let k = v.len();
    if k == 1 {
        out[0] = 0.0;
        return;
    }
    out[0] = -v[0];
    for i in 1..k - 1 {
        out[i] = v[i - 1] - v[i];
    }
    out[k - 1] = v[k - 2];
}

/// Vertical (within-column) forward differences, per channel plane.
/// Norm bound 2: the 1-D difference matrix has squared norm at most 4.
pub fn vertical_diff(shape: GridShape) -> LinOp {
    let n = shape.len();
    let rows = shape.rows;
    let fwd = move |x: &[f64]| {
        let mut out = vec![0.0; x.len()];
        // columns are contiguous runs of `rows`
        for (src, dst) in x.chunks_exact(rows).zip(out.chunks_exact_mut(rows)) {
            fwd_diff_into(src, dst);
        }
        out
    };
    let adj = move |y: &[f64]| {
        let mut out = vec![0.0; y.len()];
        for (src, dst) in y.chunks_exact(rows).zip(out.chunks_exact_mut(rows)) {
            fwd_diff_adjoint_into(src, dst);
        }
        out
    };
    LinOp::new(n, n, 2.0, fwd, adj)
}

/// Horizontal (within-row) forward differences, per channel plane.
pub fn horizontal_diff(shape: GridShape) -> LinOp {
    let n = shape.len();
    let (rows, cols, channels) = (shape.rows, shape.cols, shape.channels);
    let plane = rows * cols;
    let fwd = move |x: &[f64]| {
        let mut out = vec![0.0; x.len()];
        for ch in 0..channels {
            let base = ch * plane;
            for c in 0..cols - 1 {
                let here = base + c * rows;
                let next = base + (c + 1) * rows;
                for r in 0..rows {
                    out[here + r] = x[next + r] - x[here + r];
                }
            }
            // last column stays zero
        }
        out
    };
    let adj = move |y: &[f64]| {
        let mut out = vec![0.0; y.len()];
        for ch in 0..channels {
            let base = ch * plane;
            for c in 0..cols {
                let here = base + c * rows;
                for r in 0..rows {
                    let mut acc = 0.0;
                    if c >= 1 {
                        acc += y[base + (c - 1) * rows + r];
                    }
                    if c + 1 < cols {
                        acc -= y[here + r];
                    }
                    out[here + r] = acc;
                }
            }
        }
        out
    };
    LinOp::new(n, n, 2.0, fwd, adj)
}

/// Stacked first-order differences `[vertical; horizontal]`, mapping n -> 2n.
pub fn gradient_stack(shape: GridShape) -> LinOp {
    stack(&vertical_diff(shape), &horizontal_diff(shape)).expect("same input dim")
}

/// Stacked second-order differences `[-DvT Dv; -DhT Dh]`, mapping n -> 2n.
pub fn second_diff_stack(shape: GridShape) -> LinOp {
    let dv = vertical_diff(shape);
    let dh = horizontal_diff(shape);
    let dvv = scale(-1.0, &compose(&adjoint_of(&dv), &dv).expect("square"));
    let dhh = scale(-1.0, &compose(&adjoint_of(&dh), &dh).expect("square"));
    stack(&dvv, &dhh).expect("same input dim")
}

/// Block-diagonal `diag(-DvT, -DhT)` on stacked difference fields, 2n -> 2n.
/// Composing it with [`gradient_stack`] reproduces [`second_diff_stack`].
pub fn second_order_link(shape: GridShape) -> LinOp {
    let dv = vertical_diff(shape);
    let dh = horizontal_diff(shape);
    block_diag(
        &scale(-1.0, &adjoint_of(&dv)),
        &scale(-1.0, &adjoint_of(&dh)),
    )
}

/// Identity on `dim`.
pub fn identity(dim: usize) -> LinOp {
    LinOp::new(dim, dim, 1.0, |x| x.to_vec(), |y| y.to_vec())
}

/// `c * op`; the bound scales by `|c|`.
pub fn scale(c: f64, op: &LinOp) -> LinOp {
    let f = op.forward.clone();
    let a = op.adjoint.clone();
    LinOp::new(
        op.in_dim,
        op.out_dim,
        c.abs() * op.norm_bound,
        move |x| {
            let mut y = f(x);
            for v in &mut y {
                *v *= c;
            }
            y
        },
        move |y| {
            let mut x = a(y);
            for v in &mut x {
                *v *= c;
            }
            x
        },
    )
}

/// `outer . inner`; bounds multiply, adjoints compose in reverse.
pub fn compose(outer: &LinOp, inner: &LinOp) -> Result<LinOp> {
    if outer.in_dim != inner.out_dim {
        return Err(Error::Dimension {
            context: "compose",
            expected: outer.in_dim,
            got: inner.out_dim,
        });
    }
    let (of, oa) = (outer.forward.clone(), outer.adjoint.clone());
    let (inf, ina) = (inner.forward.clone(), inner.adjoint.clone());
    Ok(LinOp::new(
        inner.in_dim,
        outer.out_dim,
        outer.norm_bound * inner.norm_bound,
        move |x| of(&inf(x)),
        move |y| ina(&oa(y)),
    ))
}

/// Vertical stack `[top; bottom]` sharing one input; bound is the root of the
/// summed squares.
pub fn stack(top: &LinOp, bottom: &LinOp) -> Result<LinOp> {
    if top.in_dim != bottom.in_dim {
        return Err(Error::Dimension {
            context: "stack",
            expected: top.in_dim,
            got: bottom.in_dim,
        });
    }
    let (tf, ta) = (top.forward.clone(), top.adjoint.clone());
    let (bf, ba) = (bottom.forward.clone(), bottom.adjoint.clone());
    let split = top.out_dim;
    Ok(LinOp::new(
        top.in_dim,
        top.out_dim + bottom.out_dim,
        (top.norm_bound * top.norm_bound + bottom.norm_bound * bottom.norm_bound).sqrt(),
        move |x| {
            let mut out = tf(x);
            out.extend(bf(x));
            out
        },
        move |y| {
            let mut out = ta(&y[..split]);
            let rest = ba(&y[split..]);
            vecmath::axpy(&mut out, 1.0, &rest);
            out
        },
    ))
}

/// Block-diagonal `diag(a, b)`; bound is the larger of the two.
pub fn block_diag(a: &LinOp, b: &LinOp) -> LinOp {
    let (af, aa) = (a.forward.clone(), a.adjoint.clone());
    let (bf, ba) = (b.forward.clone(), b.adjoint.clone());
    let (in_split, out_split) = (a.in_dim, a.out_dim);
    LinOp::new(
        a.in_dim + b.in_dim,
        a.out_dim + b.out_dim,
        a.norm_bound.max(b.norm_bound),
        move |x| {
            let mut out = af(&x[..in_split]);
            out.extend(bf(&x[in_split..]));
            out
        },
        move |y| {
            let mut out = aa(&y[..out_split]);
            out.extend(ba(&y[out_split..]));
            out
        },
    )
}

/// Swap forward and adjoint; the norm bound is unchanged.
pub fn adjoint_of(op: &LinOp) -> LinOp {
    LinOp {
        in_dim: op.out_dim,
        out_dim: op.in_dim,
        norm_bound: op.norm_bound,
        forward: op.adjoint.clone(),
        adjoint: op.forward.clone(),
    }
}

/// Dense operator from explicit rows; the certified bound is the Frobenius
/// norm. Intended for small test instances.
pub fn from_dense(rows: Vec<Vec<f64>>) -> LinOp {
    let m = rows.len();
    assert!(m > 0);
    let n = rows[0].len();
    assert!(n > 0 && rows.iter().all(|r| r.len() == n));
    let frob: f64 = rows
        .iter()
        .flat_map(|r| r.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    let mat = Arc::new(rows);
    let mat_adj = mat.clone();
    LinOp::new(
        n,
        m,
        frob,
        move |x| mat.iter().map(|row| vecmath::dot(row, x)).collect(),
        move |y| {
            let mut out = vec![0.0; n];
            for (i, row) in mat_adj.iter().enumerate() {
                vecmath::axpy(&mut out, y[i], row);
            }
            out
        },
    )
}

/// Operator-norm estimate by power iteration on `op* . op`.
///
/// Deterministic given the seed; the Rayleigh quotient never exceeds the true
/// norm, so a valid `norm_bound` dominates the estimate up to roundoff.
/// Returns 0 for the zero operator.
pub fn power_iteration_norm(op: &LinOp, iters: usize, seed: u64) -> Result<f64> {
    if iters == 0 {
        return Err(Error::Parameter("power iteration needs iters >= 1".into()));
    }
    let mut rng = DetRng::for_stream(seed, 0x9d0e);
    let mut v = rng.unit_vector(op.in_dim());
    let mut rayleigh = 0.0;
    for _ in 0..iters {
        let w = op.apply_adjoint(&op.apply(&v)?)?;
        rayleigh = vecmath::dot(&v, &w);
        let norm = vecmath::norm2(&w);
        if norm == 0.0 {
            return Ok(0.0);
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
    }
    Ok(rayleigh.max(0.0).sqrt())
}

/// Shared counter for instrumented operators.
#[derive(Debug, Clone, Default)]
pub struct OpCounter(Arc<AtomicUsize>);

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self) -> usize {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }

    fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }
}

/// Wrap an operator so every forward or adjoint application bumps `counter`.
pub fn counted_op(op: &LinOp, counter: &OpCounter) -> LinOp {
    let (f, a) = (op.forward.clone(), op.adjoint.clone());
    let (cf, ca) = (counter.clone(), counter.clone());
    LinOp {
        in_dim: op.in_dim,
        out_dim: op.out_dim,
        norm_bound: op.norm_bound,
        forward: Arc::new(move |x| {
            cf.bump();
            f(x)
        }),
        adjoint: Arc::new(move |y| {
            ca.bump();
            a(y)
        }),
    }
}
