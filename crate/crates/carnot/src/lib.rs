//! Calculus and numerics on stratified nilpotent (Carnot) groups.
//!
//! The crate provides, bottom up:
//!
//! - [`group`]: group tables in exponential coordinates, products through the
//!   truncated Baker-Campbell-Hausdorff series (step at most 3), dilations,
//!   homogeneous norms and the associated left-invariant metric;
//! - [`frame`]: the left-invariant horizontal frame, horizontal gradients and
//!   symmetrized horizontal Hessians of classical jets, bracket-generation
//!   rank probes;
//! - [`op`]: a family of degenerate second-order operators in divergence-free
//!   form `-Tr(A(grad) Hess) + H(grad)`, with samplers for ellipticity,
//!   scaling, and maximum-principle structure conditions;
//! - [`semiconvex`]: sup/inf convolutions in the group metric, semiconvexity
//!   scans, monotone-map chain rules, gradient-tilt perturbation bounds, and
//!   shrunken-domain translation maxima;
//! - [`solver`]: an explicit damped-relaxation solver for interior Dirichlet
//!   problems on box grids, with a p-family study and max-location witnesses;
//! - [`config`] / [`experiment`] / [`report`]: TOML-driven experiment runs
//!   producing deterministic JSON reports and CSV tables.
//!
//! Scalar data enters either as built-in fields or through the tiny
//! expression language in [`expr`] (see [`field`]).

pub mod config;
pub mod dual;
pub mod experiment;
pub mod expr;
pub mod field;
pub mod frame;
pub mod grid;
pub mod group;
pub mod op;
pub mod poly;
pub mod report;
pub mod semiconvex;
pub mod solver;
