//! Matrix-free primal-dual splitting toolkit.
//!
//! The crate solves structured monotone inclusions whose set-valued part is a
//! sum of a resolvent-accessible term, a smooth forward-evaluable term, and a
//! family of parallel sums of linearly composed operators. Two iterative
//! schemes are provided: a forward-backward sweep with over-relaxation and a
//! forward-backward-forward (Tseng-type) sweep that tolerates a merely
//! Lipschitz smooth term. On top of the solver layer sits a convex-minimization
//! view (objective and dual evaluators) and image-denoising models that blend
//! first- and second-order total variation penalties through infimal
//! convolution.
//!
//! Everything is matrix-free: linear operators are closures with certified
//! norm bounds, and nonsmooth terms are function objects exposing their
//! proximal maps.

pub mod error;
pub mod imaging;
pub mod inclusion;
pub mod linop;
pub mod oracle;
pub mod prox;
pub mod rng;
pub mod solvers;
pub mod vecmath;

pub use error::{Error, Result};
