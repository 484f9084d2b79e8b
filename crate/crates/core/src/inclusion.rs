//! Problem data model and primal-dual optimality checks.
//!
//! A [`ProblemSpec`] describes the inclusion
//!
//! ```text
//! tilt in  A(x) + sum_i L_i* ( (K_i* B K_i) par-sum (M_i* D M_i) )(L_i x - r_i) + C(x)
//! ```
//!
//! where `A`, `B_i`, `D_i` are maximally monotone (given as [`Proximable`]
//! subdifferentials), `C` is a smooth monotone map, and the parallel sum
//! blends the two linearly composed legs of each block. In the convex
//! instantiation `A = subdiff f`, `B_i = subdiff g_i`, `D_i = subdiff l_i`,
//! `C = grad h`, and the same data carries primal/dual objective evaluators.

use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::linop::LinOp;
use crate::prox::Proximable;
use crate::vecmath;

type MapRule = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type ValueRule = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Single-valued smooth monotone term with Lipschitz constant `mu`.
///
/// `cocoercive` records whether the map is `1/mu`-cocoercive (true for
/// gradients of convex functions); the forward-backward certificate requires
/// it, the forward-backward-forward one does not. When the map is a gradient,
/// `potential` carries the underlying function and `conjugate_potential` its
/// Fenchel conjugate so objective evaluators can use them.
#[derive(Clone)]
pub struct SmoothMap {
    dim: usize,
    mu: f64,
    cocoercive: bool,
    zero: bool,
    map: MapRule,
    potential: Option<ValueRule>,
    conjugate_potential: Option<ValueRule>,
}

impl std::fmt::Debug for SmoothMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmoothMap")
            .field("dim", &self.dim)
            .field("mu", &self.mu)
            .field("cocoercive", &self.cocoercive)
            .field("zero", &self.zero)
            .finish()
    }
}

impl SmoothMap {
    /// The identically-zero map. `mu` is nominal (the step certificates switch
    /// to the relaxed rule when the smooth term vanishes).
    pub fn zero(dim: usize) -> Self {
        SmoothMap {
            dim,
            mu: 1.0,
            cocoercive: true,
            zero: true,
            map: Arc::new(|x| vec![0.0; x.len()]),
            potential: Some(Arc::new(|_| 0.0)),
            conjugate_potential: None,
        }
    }

    /// Gradient of `0.5*||x - center||^2`: the map `x -> x - center`, with
    /// `mu = 1` and cocoercivity from convexity.
    pub fn quadratic_fidelity(center: Vec<f64>) -> Self {
        let dim = center.len();
        let c1 = center.clone();
        let c2 = center.clone();
        let c3 = center;
        SmoothMap {
            dim,
            mu: 1.0,
            cocoercive: true,
            zero: false,
            map: Arc::new(move |x| vecmath::sub(x, &c1)),
            potential: Some(Arc::new(move |x| 0.5 * vecmath::dist2(x, &c2).powi(2))),
            conjugate_potential: Some(Arc::new(move |p| {
                0.5 * vecmath::norm2_sq(p) + vecmath::dot(p, &c3)
            })),
        }
    }

    /// Arbitrary smooth monotone map for tests and custom models.
    pub fn custom(
        dim: usize,
        mu: f64,
        cocoercive: bool,
        map: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        crate::error::check_positive("smooth-map constant mu", mu)?;
        Ok(SmoothMap {
            dim,
            mu,
            cocoercive,
            zero: false,
            map: Arc::new(map),
            potential: None,
            conjugate_potential: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn is_cocoercive(&self) -> bool {
        self.cocoercive
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("SmoothMap::eval", self.dim, x)?;
        if self.zero {
            return Ok(vec![0.0; self.dim]);
        }
        Ok((self.map)(x))
    }

    /// Value of the potential `h` with `C = grad h`, when known.
    pub fn potential_value(&self, x: &[f64]) -> Result<f64> {
        check_len("SmoothMap::potential_value", self.dim, x)?;
        match &self.potential {
            Some(h) => Ok(h(x)),
            None => Err(Error::Unsupported(
                "smooth term has no evaluable potential".into(),
            )),
        }
    }

    /// Value of the conjugate potential `h*`, when known.
    pub fn conjugate_potential_value(&self, p: &[f64]) -> Result<f64> {
        check_len("SmoothMap::conjugate_potential_value", self.dim, p)?;
        match &self.conjugate_potential {
            Some(h) => Ok(h(p)),
            None => Err(Error::Unsupported(
                "smooth term has no evaluable conjugate potential".into(),
            )),
        }
    }
}

/// One parallel-sum block: the lift `L` into the block space plus the two
/// composed legs `K* B K` and `M* D M` and the shift `r`.
#[derive(Clone)]
pub struct Block {
    /// `L_i`: primal space -> block space.
    pub lift: LinOp,
    /// `K_i`: block space -> domain of `left`.
    pub left_map: LinOp,
    /// `B_i` as the subdifferential of this function.
    pub left: Arc<dyn Proximable>,
    /// `M_i`: block space -> domain of `right`.
    pub right_map: LinOp,
    /// `D_i` as the subdifferential of this function.
    pub right: Arc<dyn Proximable>,
    /// `r_i`, subtracted from `L_i x` before the parallel sum acts.
    pub shift: Vec<f64>,
}

impl std::fmt::Debug for Block {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Block")
            .field("lift", &self.lift)
            .field("left_map", &self.left_map)
            .field("right_map", &self.right_map)
            .field("shift_len", &self.shift.len())
            .finish()
    }
}

impl Block {
    /// Dimension of the block space `G_i`.
    pub fn block_dim(&self) -> usize {
        self.lift.out_dim()
    }
}

/// Full problem instance.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    /// Primal dimension `n`.
    pub dim: usize,
    /// `A` (convex case: `f`), resolvent-accessible.
    pub nonsmooth: Arc<dyn Proximable>,
    /// `C` (convex case: `grad h`), forward-evaluable.
    pub smooth: SmoothMap,
    /// `z`: the constant tilt on the primal side.
    pub tilt: Vec<f64>,
    pub blocks: Vec<Block>,
}

impl std::fmt::Debug for dyn Proximable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Proximable(dim={})", self.dim())
    }
}

impl ProblemSpec {
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }
}

/// Check every dimension chain and positivity invariant; returns the empty
/// list when the spec is well formed, otherwise one line per violation.
pub fn validate_problem(spec: &ProblemSpec) -> Vec<String> {
    let mut issues = Vec::new();
    if spec.blocks.is_empty() {
        issues.push("problem needs at least one block (m >= 1)".to_string());
    }
    if spec.nonsmooth.dim() != spec.dim {
        issues.push(format!(
            "nonsmooth term dimension {} != problem dimension {}",
            spec.nonsmooth.dim(),
            spec.dim
        ));
    }
    if spec.smooth.dim() != spec.dim {
        issues.push(format!(
            "smooth term dimension {} != problem dimension {}",
            spec.smooth.dim(),
            spec.dim
        ));
    }
    if !(spec.smooth.mu() > 0.0) {
        issues.push("smooth term constant mu must be strictly positive".to_string());
    }
    if spec.tilt.len() != spec.dim {
        issues.push(format!(
            "tilt length {} != problem dimension {}",
            spec.tilt.len(),
            spec.dim
        ));
    }
    for (i, b) in spec.blocks.iter().enumerate() {
        if b.lift.in_dim() != spec.dim {
            issues.push(format!(
                "block {i}: lift input {} != problem dimension {}",
                b.lift.in_dim(),
                spec.dim
            ));
        }
        let g = b.lift.out_dim();
        if b.shift.len() != g {
            issues.push(format!(
                "block {i}: shift length {} != block dimension {g}",
                b.shift.len()
            ));
        }
        if b.left_map.in_dim() != g {
            issues.push(format!(
                "block {i}: left map input {} != block dimension {g}",
                b.left_map.in_dim()
            ));
        }
        if b.right_map.in_dim() != g {
            issues.push(format!(
                "block {i}: right map input {} != block dimension {g}",
                b.right_map.in_dim()
            ));
        }
        if b.left_map.out_dim() != b.left.dim() {
            issues.push(format!(
                "block {i}: left map output {} != left function dimension {}",
                b.left_map.out_dim(),
                b.left.dim()
            ));
        }
        if b.right_map.out_dim() != b.right.dim() {
            issues.push(format!(
                "block {i}: right map output {} != right function dimension {}",
                b.right_map.out_dim(),
                b.right.dim()
            ));
        }
        for (name, op) in [
            ("lift", &b.lift),
            ("left map", &b.left_map),
            ("right map", &b.right_map),
        ] {
            if !(op.norm_bound() > 0.0) {
                issues.push(format!("block {i}: {name} must be nonzero (norm bound > 0)"));
            }
        }
    }
    issues
}

/// Per-block iterate components.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockState {
    /// `p_i`, dual of the left leg.
    pub left_dual: Vec<f64>,
    /// `q_i`, dual of the right leg.
    pub right_dual: Vec<f64>,
    /// `z_i`, the left share of the split `L_i x - r_i = z_i + y_i`.
    pub left_split: Vec<f64>,
    /// `y_i`, the right share of the split.
    pub right_split: Vec<f64>,
    /// `v_i`, the block's coupling dual (`K_i* p_i = M_i* q_i` at solutions).
    pub coupling: Vec<f64>,
}

/// Full iterate of either solver: the primal point plus all block variables.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub primal: Vec<f64>,
    pub blocks: Vec<BlockState>,
}

impl SolverState {
    pub fn zeros(spec: &ProblemSpec) -> Self {
        Self::from_primal(spec, vec![0.0; spec.dim])
    }

    pub fn from_primal(spec: &ProblemSpec, primal: Vec<f64>) -> Self {
        assert_eq!(primal.len(), spec.dim);
        let blocks = spec
            .blocks
            .iter()
            .map(|b| BlockState {
                left_dual: vec![0.0; b.left.dim()],
                right_dual: vec![0.0; b.right.dim()],
                left_split: vec![0.0; b.block_dim()],
                right_split: vec![0.0; b.block_dim()],
                coupling: vec![0.0; b.block_dim()],
            })
            .collect();
        SolverState { primal, blocks }
    }

    pub fn matches_spec(&self, spec: &ProblemSpec) -> bool {
        self.primal.len() == spec.dim
            && self.blocks.len() == spec.blocks.len()
            && self.blocks.iter().zip(&spec.blocks).all(|(s, b)| {
                s.left_dual.len() == b.left.dim()
                    && s.right_dual.len() == b.right.dim()
                    && s.left_split.len() == b.block_dim()
                    && s.right_split.len() == b.block_dim()
                    && s.coupling.len() == b.block_dim()
            })
    }

    pub fn is_finite(&self) -> bool {
        vecmath::all_finite(&self.primal)
            && self.blocks.iter().all(|b| {
                vecmath::all_finite(&b.left_dual)
                    && vecmath::all_finite(&b.right_dual)
                    && vecmath::all_finite(&b.left_split)
                    && vecmath::all_finite(&b.right_split)
                    && vecmath::all_finite(&b.coupling)
            })
    }

    /// Euclidean distance over the concatenated tuple.
    pub fn distance(&self, other: &SolverState) -> f64 {
        let mut acc = vecmath::dist2(&self.primal, &other.primal).powi(2);
        for (a, b) in self.blocks.iter().zip(&other.blocks) {
            acc += vecmath::dist2(&a.left_dual, &b.left_dual).powi(2);
            acc += vecmath::dist2(&a.right_dual, &b.right_dual).powi(2);
            acc += vecmath::dist2(&a.left_split, &b.left_split).powi(2);
            acc += vecmath::dist2(&a.right_split, &b.right_split).powi(2);
            acc += vecmath::dist2(&a.coupling, &b.coupling).powi(2);
        }
        acc.sqrt()
    }

    /// Euclidean norm of the concatenated tuple.
    pub fn norm(&self) -> f64 {
        let mut acc = vecmath::norm2_sq(&self.primal);
        for b in &self.blocks {
            acc += vecmath::norm2_sq(&b.left_dual);
            acc += vecmath::norm2_sq(&b.right_dual);
            acc += vecmath::norm2_sq(&b.left_split);
            acc += vecmath::norm2_sq(&b.right_split);
            acc += vecmath::norm2_sq(&b.coupling);
        }
        acc.sqrt()
    }
}

/// Value of the joint primal objective
/// `f(x) + sum_i [ g_i(K_i(L_i x - r_i - y_i)) + l_i(M_i y_i) ] + h(x) - <x, tilt>`
/// for any split certificates `ys`; an upper bound on the inf-convolution
/// objective. Requires an evaluable smooth potential.
pub fn evaluate_primal_objective(spec: &ProblemSpec, x: &[f64], ys: &[Vec<f64>]) -> Result<f64> {
    check_len("evaluate_primal_objective (x)", spec.dim, x)?;
    if ys.len() != spec.blocks.len() {
        return Err(Error::Parameter(format!(
            "expected {} split certificates, got {}",
            spec.blocks.len(),
            ys.len()
        )));
    }
    let mut total = spec.nonsmooth.evaluate(x)?;
    total += spec.smooth.potential_value(x)?;
    total -= vecmath::dot(x, &spec.tilt);
    for (b, y) in spec.blocks.iter().zip(ys) {
        check_len("evaluate_primal_objective (split)", b.block_dim(), y)?;
        let mut lx = b.lift.apply(x)?;
        for (v, (ri, yi)) in lx.iter_mut().zip(b.shift.iter().zip(y.iter())) {
            *v -= ri + yi;
        }
        total += b.left.evaluate(&b.left_map.apply(&lx)?)?;
        total += b.right.evaluate(&b.right_map.apply(y)?)?;
    }
    Ok(total)
}

/// Distance moved by one exact forward-backward sweep with unit relaxation:
/// zero exactly at primal-dual solutions, since the sweep's fixed points are
/// the solution set. Fails if `fb_params` violate the step condition.
pub fn optimality_residual(
    spec: &ProblemSpec,
    state: &SolverState,
    fb_params: &crate::solvers::FbParams,
) -> Result<f64> {
    crate::solvers::certify_fb(spec, fb_params).map_err(Error::from)?;
    let mut params = fb_params.clone();
    params.relaxation = crate::solvers::Schedule::Constant(1.0);
    let outcome = crate::solvers::fb_step(spec, state, &params, 0, None)?;
    Ok(outcome.tilde_gap)
}

/// Outcome of a dual objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum DualValue {
    Feasible(f64),
    /// The linking constraint `K_i* p_i = M_i* q_i` failed for `block` by
    /// `violation` in Euclidean norm.
    Infeasible { block: usize, violation: f64 },
}

/// Value of the conjugate dual objective at `(ps, qs)`:
///
/// `-(f* infconv h*)(tilt - sum_i L_i* K_i* p_i) - sum_i [ g_i*(p_i) + l_i*(q_i) + <p_i, K_i r_i> ]`
///
/// subject to the linking constraints within `feas_tol`. The inf-convolution
/// of the conjugates is evaluated in the two closed-form cases (`f = 0`, or
/// `h = 0`); anything else is reported as unsupported.
pub fn evaluate_dual_objective(
    spec: &ProblemSpec,
    ps: &[Vec<f64>],
    qs: &[Vec<f64>],
    feas_tol: f64,
) -> Result<DualValue> {
    if ps.len() != spec.blocks.len() || qs.len() != spec.blocks.len() {
        return Err(Error::Parameter(
            "dual evaluation needs one (p, q) pair per block".into(),
        ));
    }
    for (i, (b, (p, q))) in spec.blocks.iter().zip(ps.iter().zip(qs)).enumerate() {
        check_len("evaluate_dual_objective (p)", b.left.dim(), p)?;
        check_len("evaluate_dual_objective (q)", b.right.dim(), q)?;
        let link = vecmath::sub(&b.left_map.apply_adjoint(p)?, &b.right_map.apply_adjoint(q)?);
        let violation = vecmath::norm2(&link);
        if violation > feas_tol {
            return Ok(DualValue::Infeasible {
                block: i,
                violation,
            });
        }
    }

    let mut w = spec.tilt.clone();
    for (b, p) in spec.blocks.iter().zip(ps) {
        let back = b.lift.apply_adjoint(&b.left_map.apply_adjoint(p)?)?;
        vecmath::axpy(&mut w, -1.0, &back);
    }
    let fh_conj = if spec.smooth.is_zero() {
        // h* is the indicator of the origin, so the inf-convolution is f*
        spec.nonsmooth.conjugate(&w)?
    } else if spec.nonsmooth.is_zero_function() {
        // f* is the indicator of the origin, so the inf-convolution is h*
        spec.smooth.conjugate_potential_value(&w)?
    } else {
        return Err(Error::Unsupported(
            "dual objective needs f = 0 or h = 0 for a closed-form conjugate inf-convolution"
                .into(),
        ));
    };

    let mut value = -fh_conj;
    for (b, (p, q)) in spec.blocks.iter().zip(ps.iter().zip(qs)) {
        value -= b.left.conjugate(p)?;
        value -= b.right.conjugate(q)?;
        value -= vecmath::dot(p, &b.left_map.apply(&b.shift)?);
    }
    Ok(DualValue::Feasible(value))
}

#[cfg(test)]
pub(crate) fn scalar_toy_spec() -> ProblemSpec {
    use crate::linop::identity;
    use crate::prox::{ScaledL1, ZeroFunction};
    // A = 0, C = 0, tilt = 0, B = D = subdiff |.|, K = M = L = 1, r = 0
    ProblemSpec {
        dim: 1,
        nonsmooth: Arc::new(ZeroFunction::new(1)),
        smooth: SmoothMap::zero(1),
        tilt: vec![0.0],
        blocks: vec![Block {
            lift: identity(1),
            left_map: identity(1),
            left: Arc::new(ScaledL1::new(1, 1.0).unwrap()),
            right_map: identity(1),
            right: Arc::new(ScaledL1::new(1, 1.0).unwrap()),
            shift: vec![0.0],
        }],
    }
}
