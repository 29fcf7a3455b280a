//! Numerical toolkit for the Ricci flow on nilmanifolds via the bracket flow.
//!
//! A left-invariant metric on a simply connected nilpotent Lie group is
//! encoded by structure constants μ in an orthonormal basis. Curvature is
//! then algebraic in μ, and the Ricci flow becomes the ODE
//! μ′ = δ_μ(Ric_μ) on V_n = Λ²(ℝⁿ)* ⊗ ℝⁿ.
//!
//! * [`algebra`]: brackets, the GL(n)-action, δ_μ and derivations.
//! * [`curvature`]: Ricci operator, scalar curvature, F = tr Ric² and its gradient.
//! * [`bch`]: the group law and the metric g_μ in exponential coordinates.
//! * [`flow`]: bracket flows, h(t) and the inner-product Ricci flow.
//! * [`soliton`]: nilsoliton certificates and convergence of normalized flows.
//! * [`io`]: JSON and CSV formats.

pub mod algebra;
pub mod bch;
pub mod curvature;
pub mod dual;
pub mod error;
pub mod flow;
pub mod io;
mod linalg;
pub mod ode;
pub mod sample;
pub mod soliton;

pub use algebra::{Bracket, Operator, VTangent};
pub use error::{Error, Result};
