//! The box-constrained Dirichlet boundary optimal control problem on the
//! DG(0)-CG(1) discretization, solved by accelerated projected gradient on
//! the reduced cost.
//!
//! The control lives in the boundary trace space; the box is enforced
//! coefficient-wise, which for piecewise linear traces is the pointwise
//! constraint at the nodes. The reduced gradient is the L2(Sigma)-Riesz
//! representative alpha*u - dn(z), with dn(z) the discrete normal derivative
//! of the adjoint, so at a solution u = clamp(dn(z)/alpha) holds coefficient
//! by coefficient.
//!
//! Because the control-to-state map is affine, gradients extrapolate
//! linearly: the momentum point's gradient is formed from stored normal
//! derivatives without extra solves, so each iteration costs one forward and
//! one adjoint solve.

use crate::assembly::FemOperators;
use crate::mesh::Mesh;
use crate::parabolic::{
    boundary_inner, boundary_norm, lifted_solve, normal_derivative, solve_adjoint, solve_state,
    space_time_inner, BoundaryData, BoundaryField, ProblemData, SolveError, SpaceTimeField,
};
use crate::sparse::estimate_opnorm;
use crate::timegrid::TimeGrid;
use thiserror::Error;

/// Power iteration count for the step-size estimate, with the safety slack
/// applied on top of the returned Rayleigh quotient.
const OPNORM_ITERS: usize = 20;
const OPNORM_SLACK: f64 = 1.05;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("inner solve failed: {0}")]
    Solve(#[from] SolveError),
    #[error("no convergence in {iterations} iterations: residual {residual:e} > tol {tol:e}")]
    MaxIterations {
        iterations: usize,
        residual: f64,
        tol: f64,
        best: Box<OptimalityResult>,
    },
}

/// Box bounds; infinite ends disable the respective constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlBounds {
    pub lower: f64,
    pub upper: f64,
}

impl ControlBounds {
    pub fn new(lower: f64, upper: f64) -> Self {
        assert!(lower < upper, "bounds must satisfy lower < upper");
        Self { lower, upper }
    }

    pub fn unconstrained() -> Self {
        Self {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.max(self.lower).min(self.upper)
    }
}

/// Coefficient-wise projection onto the box.
pub fn project_box(v: &BoundaryField, bounds: &ControlBounds) -> BoundaryField {
    let mut out = v.clone();
    out.coeffs.iter_mut().for_each(|x| *x = bounds.clamp(*x));
    out
}

/// Discretized control problem: regularization weight, bounds, and the data
/// folded into the uncontrolled state and the projected target.
pub struct ControlProblem<'a> {
    pub mesh: &'a Mesh,
    pub grid: &'a TimeGrid,
    pub ops: &'a FemOperators,
    pub alpha: f64,
    pub bounds: ControlBounds,
    /// state with zero control (carries f and y0)
    base_state: SpaceTimeField,
    /// target, discretized once by slab-average + spatial L2 projection
    target: SpaceTimeField,
}

impl<'a> ControlProblem<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mesh: &'a Mesh,
        grid: &'a TimeGrid,
        ops: &'a FemOperators,
        alpha: f64,
        bounds: ControlBounds,
        source: Option<&dyn Fn(f64, f64, f64) -> f64>,
        initial: Option<&dyn Fn(f64, f64) -> f64>,
        target: &dyn Fn(f64, f64, f64) -> f64,
    ) -> Result<Self, SolveError> {
        assert!(alpha > 0.0, "regularization weight must be positive");
        let target = SpaceTimeField::project(mesh, grid, ops, target)?;
        Self::with_target_field(mesh, grid, ops, alpha, bounds, source, initial, target)
    }

    /// Variant taking an already-discrete target field.
    #[allow(clippy::too_many_arguments)]
    pub fn with_target_field(
        mesh: &'a Mesh,
        grid: &'a TimeGrid,
        ops: &'a FemOperators,
        alpha: f64,
        bounds: ControlBounds,
        source: Option<&dyn Fn(f64, f64, f64) -> f64>,
        initial: Option<&dyn Fn(f64, f64) -> f64>,
        target: SpaceTimeField,
    ) -> Result<Self, SolveError> {
        assert!(alpha > 0.0, "regularization weight must be positive");
        let base_state = solve_state(
            &ProblemData {
                source,
                initial,
                boundary: BoundaryData::Zero,
            },
            mesh,
            grid,
            ops,
        )?;
        Ok(Self {
            mesh,
            grid,
            ops,
            alpha,
            bounds,
            base_state,
            target,
        })
    }

    pub fn target(&self) -> &SpaceTimeField {
        &self.target
    }

    /// State for a given control: uncontrolled state plus lifting.
    pub fn state_for(&self, u: &BoundaryField) -> Result<SpaceTimeField, SolveError> {
        let mut y = lifted_solve(u, self.mesh, self.grid, self.ops)?;
        y.axpy(1.0, &self.base_state);
        Ok(y)
    }

    fn cost_of(&self, u: &BoundaryField, y: &SpaceTimeField) -> f64 {
        let misfit = y.sub(&self.target);
        0.5 * space_time_inner(&misfit, &misfit, self.ops, self.grid)
            + 0.5 * self.alpha * boundary_inner(u, u, self.ops, self.grid)
    }

    /// Reduced cost and the state it was evaluated on.
    pub fn evaluate_cost(&self, u: &BoundaryField) -> Result<(f64, SpaceTimeField), SolveError> {
        let y = self.state_for(u)?;
        let cost = self.cost_of(u, &y);
        Ok((cost, y))
    }

    /// Adjoint of the misfit and its discrete normal derivative.
    fn adjoint_pair(
        &self,
        y: &SpaceTimeField,
    ) -> Result<(SpaceTimeField, BoundaryField), SolveError> {
        let misfit = y.sub(&self.target);
        let z = solve_adjoint(&misfit, self.mesh, self.grid, self.ops)?;
        let d = normal_derivative(&z, &misfit, self.mesh, self.grid, self.ops)?;
        Ok((z, d))
    }

    /// L2(Sigma)-Riesz representative of the reduced derivative at `u`:
    /// alpha*u - dn(z(u)).
    pub fn reduced_gradient(&self, u: &BoundaryField) -> Result<BoundaryField, SolveError> {
        let y = self.state_for(u)?;
        let (_, d) = self.adjoint_pair(&y)?;
        let mut g = u.clone();
        g.scale(self.alpha);
        g.axpy(-1.0, &d);
        Ok(g)
    }

    /// Fixed-point residual ||u - clamp(d/alpha)||_{L2(Sigma)}.
    fn residual(&self, u: &BoundaryField, d: &BoundaryField) -> f64 {
        let mut fp = d.clone();
        fp.scale(1.0 / self.alpha);
        let fp = project_box(&fp, &self.bounds);
        boundary_norm(&u.sub(&fp), self.ops, self.grid)
    }

    /// Action of the misfit Hessian part u -> -dn(z(lifted u)): self-adjoint
    /// positive semidefinite in the L2(Sigma) inner product by the discrete
    /// duality identity.
    pub fn hessian_misfit_apply(&self, v: &BoundaryField) -> Result<BoundaryField, SolveError> {
        let p = lifted_solve(v, self.mesh, self.grid, self.ops)?;
        let z = solve_adjoint(&p, self.mesh, self.grid, self.ops)?;
        let mut d = normal_derivative(&z, &p, self.mesh, self.grid, self.ops)?;
        d.scale(-1.0);
        Ok(d)
    }

    /// Lipschitz constant of the reduced gradient: alpha plus the estimated
    /// operator norm of the misfit Hessian in the boundary inner product,
    /// with 5% slack.
    pub fn gradient_lipschitz(&self) -> Result<f64, SolveError> {
        let nb = self.mesh.boundary_count();
        let dim = self.grid.slabs() * nb;
        let mut failure: Option<SolveError> = None;
        let est = estimate_opnorm(
            |flat| {
                let mut v = BoundaryField::zeros(self.grid, self.mesh);
                v.coeffs.copy_from_slice(flat);
                match self.hessian_misfit_apply(&v) {
                    Ok(d) => d.coeffs,
                    Err(e) => {
                        failure.get_or_insert(e);
                        vec![0.0; flat.len()]
                    }
                }
            },
            |a, b| {
                let (mut fa, mut fb) = (
                    BoundaryField::zeros(self.grid, self.mesh),
                    BoundaryField::zeros(self.grid, self.mesh),
                );
                fa.coeffs.copy_from_slice(a);
                fb.coeffs.copy_from_slice(b);
                boundary_inner(&fa, &fb, self.ops, self.grid)
            },
            dim,
            OPNORM_ITERS,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(self.alpha + OPNORM_SLACK * est)
    }

    /// Accelerated projected gradient with momentum restart on objective
    /// increase, step 1/L, stopping on the projected-optimality residual.
    ///
    /// `tol` defaults to 1e-8 * max(1, ||dn(z)|| at the initial iterate).
    pub fn solve(&self, opts: &SolveOptions) -> Result<OptimalityResult, ControlError> {
        self.solve_traced(opts).map(|(result, _)| result)
    }

    /// Like [`solve`](Self::solve), additionally returning the accepted cost
    /// sequence with restart markers, for convergence diagnostics.
    pub fn solve_traced(
        &self,
        opts: &SolveOptions,
    ) -> Result<(OptimalityResult, Vec<CostSample>), ControlError> {
        let step_l = self.gradient_lipschitz()?;
        let step = 1.0 / step_l;

        // Initial iterate: zero control projected into the box.
        let u0 = project_box(&BoundaryField::zeros(self.grid, self.mesh), &self.bounds);
        let y0 = self.state_for(&u0)?;
        let (z0, d0) = self.adjoint_pair(&y0)?;
        let cost0 = self.cost_of(&u0, &y0);
        let tol = opts
            .tol
            .unwrap_or_else(|| 1e-8 * boundary_norm(&d0, self.ops, self.grid).max(1.0));

        let res0 = self.residual(&u0, &d0);
        let mut trace = vec![CostSample {
            cost: cost0,
            residual: res0,
            restarted: false,
        }];
        let mut best = OptimalityResult {
            control: u0.clone(),
            state: y0,
            adjoint: z0,
            cost: cost0,
            residual: res0,
            iterations: 0,
            tolerance: tol,
        };
        if res0 <= tol {
            return Ok((best, trace));
        }

        let mut u_prev = u0.clone();
        let mut d_prev = d0.clone();
        let mut u_cur = u0;
        let mut d_cur = d0;
        let mut cost_cur = cost0;
        let mut t_cur: f64 = 1.0;

        for iter in 1..=opts.max_iters {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_cur * t_cur).sqrt());
            let beta = (t_cur - 1.0) / t_next;

            // Momentum point and its gradient, by affine extrapolation of the
            // stored normal derivatives.
            let mut v = u_cur.clone();
            v.axpy(beta, &u_cur.sub(&u_prev));
            let mut d_v = d_cur.clone();
            d_v.axpy(beta, &d_cur.sub(&d_prev));
            let mut grad_v = v.clone();
            grad_v.scale(self.alpha);
            grad_v.axpy(-1.0, &d_v);

            let mut u_next = v.clone();
            u_next.axpy(-step, &grad_v);
            let mut u_next = project_box(&u_next, &self.bounds);
            let mut y_next = self.state_for(&u_next)?;
            let mut cost_next = self.cost_of(&u_next, &y_next);
            let mut restarted = false;

            if cost_next > cost_cur + 1e-12 * cost_cur.abs().max(1.0) {
                // The extrapolated step overshot: restart the momentum and
                // take a plain projected gradient step from the last iterate.
                restarted = true;
                t_cur = 1.0;
                let mut grad = u_cur.clone();
                grad.scale(self.alpha);
                grad.axpy(-1.0, &d_cur);
                let mut cand = u_cur.clone();
                cand.axpy(-step, &grad);
                u_next = project_box(&cand, &self.bounds);
                y_next = self.state_for(&u_next)?;
                cost_next = self.cost_of(&u_next, &y_next);
            } else {
                t_cur = t_next;
            }

            let (z_next, d_next) = self.adjoint_pair(&y_next)?;
            let res = self.residual(&u_next, &d_next);
            trace.push(CostSample {
                cost: cost_next,
                residual: res,
                restarted,
            });

            if res < best.residual {
                best = OptimalityResult {
                    control: u_next.clone(),
                    state: y_next.clone(),
                    adjoint: z_next,
                    cost: cost_next,
                    residual: res,
                    iterations: iter,
                    tolerance: tol,
                };
            }
            if res <= tol {
                return Ok((best, trace));
            }

            u_prev = u_cur;
            d_prev = d_cur;
            u_cur = u_next;
            d_cur = d_next;
            cost_cur = cost_next;
        }

        let residual = best.residual;
        Err(ControlError::MaxIterations {
            iterations: opts.max_iters,
            residual,
            tol,
            best: Box::new(best),
        })
    }
}

/// Options for [`ControlProblem::solve`].
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Absolute residual tolerance in L2(Sigma); `None` selects the
    /// scale-aware default.
    pub tol: Option<f64>,
    pub max_iters: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: None,
            max_iters: 500,
        }
    }
}

/// One accepted iterate in the optimizer trace.
#[derive(Debug, Clone, Copy)]
pub struct CostSample {
    pub cost: f64,
    pub residual: f64,
    pub restarted: bool,
}

/// Converged control with its state, adjoint and diagnostics.
#[derive(Debug, Clone)]
pub struct OptimalityResult {
    pub control: BoundaryField,
    pub state: SpaceTimeField,
    pub adjoint: SpaceTimeField,
    pub cost: f64,
    pub residual: f64,
    pub iterations: usize,
    pub tolerance: f64,
}
