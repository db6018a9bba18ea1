//! Finite element solver for the heat equation with rough Dirichlet boundary
//! data on the unit square, and for the box-constrained Dirichlet boundary
//! optimal control problem.
//!
//! The state equation is discretized with piecewise constants in time (DG(0))
//! and continuous piecewise linear elements in space (CG(1)); boundary data
//! enters through slab-wise L2 projection onto the boundary trace space. The
//! control problem is solved by accelerated projected gradient on the reduced
//! cost, with the discrete normal derivative of the adjoint supplying the
//! gradient.
//!
//! Modules, bottom up:
//! - [`sparse`]: CSR symmetric matrices, preconditioned CG, operator-norm
//!   estimation.
//! - [`mesh`]: structured triangulations of the unit square, uniform
//!   refinement, nested prolongation.
//! - [`timegrid`]: time partitions, slab projections/interpolations, jump
//!   energies.
//! - [`assembly`]: mass/stiffness/boundary-mass assembly and the spatial
//!   projection operators.
//! - [`parabolic`]: forward/backward DG(0)-CG(1) solvers, the space-time
//!   bilinear form, and the discrete normal derivative.
//! - [`control`]: the reduced optimal control problem and its projected
//!   gradient solver.
//! - [`study`]: manufactured problems, refinement studies, and order-of-
//!   convergence reports.
//! - [`config`] / [`io`]: TOML run configuration and CSV/JSON serialization.

pub mod assembly;
pub mod config;
pub mod control;
pub mod io;
pub mod mesh;
pub mod parabolic;
pub mod sparse;
pub mod study;
pub mod timegrid;
