//! Manufactured problems, nested refinement studies and order-of-convergence
//! reporting for the state solver and the control solver.
//!
//! Studies keep the two refinement axes decoupled: a space study fixes the
//! slab count across all levels, a time study fixes the mesh. Errors are
//! measured against the solution on the finest (reference) level of a nested
//! chain, which cancels the error component of the frozen axis; for
//! manufactured state problems the error against the exact solution is
//! recorded alongside.
//!
//! Every manufactured right-hand side passes a finite-difference residual
//! gate before use: the construction fails if the stored source term does
//! not match the time derivative minus the Laplacian of the stored solution
//! at random sample points.

use crate::assembly::{assemble, boundary_space_time_l2, space_time_l2, FemOperators};
use crate::control::{ControlBounds, ControlError, ControlProblem, SolveOptions};
use crate::mesh::{prolong, prolong_boundary, refine, unit_square_mesh, Mesh};
use crate::parabolic::{
    solve_state, BoundaryData, BoundaryField, ProblemData, SolveError, SpaceTimeField,
};
use crate::timegrid::TimeGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("unknown problem id {0:?}")]
    UnknownProblem(String),
    #[error("manufactured data failed the residual gate: |residual| = {0:e} at (t,x,y) = ({1}, {2}, {3})")]
    ResidualGate(f64, f64, f64, f64),
    #[error("study levels must be strictly increasing, nested by powers of two, with the reference finer than every level: {0}")]
    BadLevels(String),
    #[error("mesh: {0}")]
    Mesh(#[from] crate::mesh::MeshError),
    #[error("assembly: {0}")]
    Assembly(#[from] crate::assembly::AssemblyError),
    #[error("solve: {0}")]
    Solve(#[from] SolveError),
    #[error("grid: {0}")]
    Grid(#[from] crate::timegrid::GridError),
    #[error("control solve: {0}")]
    Control(String),
}

/// Identifiers of the built-in benchmark problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemId {
    /// Smooth separable solution with inhomogeneous boundary data.
    SmoothInhomogeneous,
    /// Solution with a t^(3/4) startup factor: integrable source, boundary
    /// data of limited temporal smoothness.
    RoughBoundary,
    /// The pinned boundary-control benchmark (no exact solution).
    BoundaryControl,
}

impl std::str::FromStr for ProblemId {
    type Err = StudyError;
    fn from_str(s: &str) -> Result<Self, StudyError> {
        match s {
            "smooth-inhomogeneous" => Ok(Self::SmoothInhomogeneous),
            "rough-boundary" => Ok(Self::RoughBoundary),
            "boundary-control" => Ok(Self::BoundaryControl),
            other => Err(StudyError::UnknownProblem(other.to_string())),
        }
    }
}

impl std::fmt::Display for ProblemId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::SmoothInhomogeneous => "smooth-inhomogeneous",
            Self::RoughBoundary => "rough-boundary",
            Self::BoundaryControl => "boundary-control",
        };
        f.write_str(s)
    }
}

/// A state problem with known exact solution and matching data.
pub struct ManufacturedProblem {
    pub id: ProblemId,
    exact: fn(f64, f64, f64) -> f64,
    source: fn(f64, f64, f64) -> f64,
}

fn smooth_exact(t: f64, x: f64, y: f64) -> f64 {
    (-t).exp() * (x * x + y * y)
}

fn smooth_source(t: f64, x: f64, y: f64) -> f64 {
    // time derivative minus Laplacian of the exact solution
    -(-t).exp() * (x * x + y * y) - 4.0 * (-t).exp()
}

fn rough_exact(t: f64, x: f64, y: f64) -> f64 {
    t.powf(0.75) * (x * x - y * y)
}

fn rough_source(t: f64, x: f64, y: f64) -> f64 {
    // x^2 - y^2 is harmonic, so only the time derivative remains; the
    // t^(-1/4) factor is square integrable on (0,T).
    if t <= 0.0 {
        0.0
    } else {
        0.75 * t.powf(-0.25) * (x * x - y * y)
    }
}

/// Build a manufactured problem and run its finite-difference residual gate.
pub fn manufactured_state_problem(id: ProblemId) -> Result<ManufacturedProblem, StudyError> {
    let problem = match id {
        ProblemId::SmoothInhomogeneous => ManufacturedProblem {
            id,
            exact: smooth_exact,
            source: smooth_source,
        },
        ProblemId::RoughBoundary => ManufacturedProblem {
            id,
            exact: rough_exact,
            source: rough_source,
        },
        ProblemId::BoundaryControl => {
            return Err(StudyError::UnknownProblem(
                "boundary-control has no exact state".into(),
            ))
        }
    };
    problem.residual_gate(10, 0x5eed)?;
    Ok(problem)
}

impl ManufacturedProblem {
    pub fn exact(&self, t: f64, x: f64, y: f64) -> f64 {
        (self.exact)(t, x, y)
    }

    pub fn source(&self, t: f64, x: f64, y: f64) -> f64 {
        (self.source)(t, x, y)
    }

    pub fn initial(&self, x: f64, y: f64) -> f64 {
        (self.exact)(0.0, x, y)
    }

    /// Boundary data is the trace of the exact solution by construction.
    pub fn boundary(&self, t: f64, x: f64, y: f64) -> f64 {
        (self.exact)(t, x, y)
    }

    /// Check |dy/dt - Lap y - f| <= 1e-6 * scale at random interior points by
    /// central finite differences. Points stay away from t = 0, where the
    /// rough problem's startup factor is not differentiable.
    pub fn residual_gate(&self, points: usize, seed: u64) -> Result<(), StudyError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = 1e-4;
        for _ in 0..points {
            let t = rng.gen_range(0.1..0.9);
            let x = rng.gen_range(0.15..0.85);
            let y = rng.gen_range(0.15..0.85);
            let dt = ((self.exact)(t + eps, x, y) - (self.exact)(t - eps, x, y)) / (2.0 * eps);
            let lap = ((self.exact)(t, x + eps, y)
                + (self.exact)(t, x - eps, y)
                + (self.exact)(t, x, y + eps)
                + (self.exact)(t, x, y - eps)
                - 4.0 * (self.exact)(t, x, y))
                / (eps * eps);
            let f = (self.source)(t, x, y);
            let residual = dt - lap - f;
            let scale = f.abs().max(1.0);
            if residual.abs() > 1e-6 * scale {
                return Err(StudyError::ResidualGate(residual.abs(), t, x, y));
            }
        }
        Ok(())
    }
}

/// Target of the pinned control benchmark: antisymmetric in y so the optimal
/// control pushes against both box bounds on parts of the boundary.
pub fn control_benchmark_target(t: f64, x: f64, y: f64) -> f64 {
    2.0 * (1.0 + 0.5 * (1.0 - t)) * (std::f64::consts::PI * x).sin() * (y - 0.5)
}

/// Refinement axis of a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Space,
    Time,
    Coupled,
}

impl std::str::FromStr for Axis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "space" => Ok(Self::Space),
            "time" => Ok(Self::Time),
            "coupled" => Ok(Self::Coupled),
            other => Err(format!(
                "unknown axis {other:?} (expected space, time or coupled)"
            )),
        }
    }
}

/// Description of a refinement study.
#[derive(Debug, Clone)]
pub struct StudySpec {
    pub problem: ProblemId,
    pub axis: Axis,
    /// resolutions of the refined axis (n for space/coupled, M for time)
    pub levels: Vec<usize>,
    /// resolution of the reference level on the refined axis
    pub reference: usize,
    /// resolution of the frozen axis (M for space studies, n for time)
    pub fixed: usize,
    pub t_final: f64,
    pub alpha: f64,
    pub bounds: Option<(f64, f64)>,
    pub control_tol: Option<f64>,
    pub max_iters: usize,
}

impl StudySpec {
    pub fn validate(&self) -> Result<(), StudyError> {
        if self.levels.is_empty() {
            return Err(StudyError::BadLevels("empty level list".into()));
        }
        for pair in self.levels.windows(2) {
            if pair[1] <= pair[0]
                || !pair[1].is_multiple_of(pair[0])
                || !(pair[1] / pair[0]).is_power_of_two()
            {
                return Err(StudyError::BadLevels(format!("{} -> {}", pair[0], pair[1])));
            }
        }
        let last = *self.levels.last().unwrap();
        if self.reference <= last
            || !self.reference.is_multiple_of(last)
            || !(self.reference / last).is_power_of_two()
        {
            return Err(StudyError::BadLevels(format!(
                "reference {} vs finest level {last}",
                self.reference
            )));
        }
        Ok(())
    }

    fn resolution(&self, level: usize) -> (usize, usize) {
        match self.axis {
            Axis::Space => (level, self.fixed),
            Axis::Time => (self.fixed, level),
            Axis::Coupled => (level, level),
        }
    }

    fn reference_resolution(&self) -> (usize, usize) {
        self.resolution(self.reference)
    }

    /// The refinement parameter EOCs are measured in: h for space and
    /// coupled studies, k for time studies.
    fn parameter(&self, n: usize, m: usize) -> f64 {
        match self.axis {
            Axis::Space | Axis::Coupled => std::f64::consts::SQRT_2 / n as f64,
            Axis::Time => self.t_final / m as f64,
        }
    }
}

/// One study level.
#[derive(Debug, Clone)]
pub struct StudyRow {
    pub level: usize,
    pub n: usize,
    pub m: usize,
    pub h: f64,
    pub k: f64,
    /// state error against the reference level
    pub error_state: f64,
    /// state error against the exact solution, when one exists
    pub error_exact: Option<f64>,
    pub error_control: Option<f64>,
    pub cost: Option<f64>,
    pub iterations: Option<usize>,
    pub eoc_state: Option<f64>,
    pub eoc_control: Option<f64>,
    /// false when the level is within a factor 4 of the reference
    pub reliable: bool,
}

#[derive(Debug, Clone)]
pub struct StudyReport {
    pub axis: Axis,
    pub problem: ProblemId,
    pub rows: Vec<StudyRow>,
    pub reference_n: usize,
    pub reference_m: usize,
    /// least-squares slope of log error vs log parameter
    pub fitted_order_state: f64,
    pub fitted_order_control: Option<f64>,
    pub wall_seconds: f64,
}

/// Pairwise experimental order of convergence.
pub fn eoc(error_coarse: f64, error_fine: f64, ratio: f64) -> f64 {
    (error_coarse / error_fine).ln() / ratio.ln()
}

/// Least-squares slope of ln(e) against ln(p).
pub fn fitted_order(params: &[f64], errors: &[f64]) -> f64 {
    assert_eq!(params.len(), errors.len());
    let pts: Vec<(f64, f64)> = params
        .iter()
        .zip(errors)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&p, &e)| (p.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Nested meshes from `base_n` doubling up to `top_n`, with the assembled
/// operators of each level.
struct MeshChain {
    base_n: usize,
    meshes: Vec<Mesh>,
    ops: Vec<FemOperators>,
}

impl MeshChain {
    fn build(base_n: usize, top_n: usize) -> Result<Self, StudyError> {
        let mut meshes = vec![unit_square_mesh(base_n)?];
        let mut n = base_n;
        while n < top_n {
            let (child, _) = refine(meshes.last().unwrap());
            meshes.push(child);
            n *= 2;
        }
        let ops = meshes.iter().map(assemble).collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            base_n,
            meshes,
            ops,
        })
    }

    fn index_of(&self, n: usize) -> usize {
        assert!(n.is_multiple_of(self.base_n) && (n / self.base_n).is_power_of_two());
        (n / self.base_n).trailing_zeros() as usize
    }

    fn at(&self, n: usize) -> (&Mesh, &FemOperators) {
        let i = self.index_of(n);
        (&self.meshes[i], &self.ops[i])
    }

    /// Prolong a nodal field from the mesh with resolution `from_n` to the
    /// one with `to_n`.
    fn prolong_nodal(
        &self,
        field: &[f64],
        from_n: usize,
        to_n: usize,
    ) -> Result<Vec<f64>, StudyError> {
        let (mut i, j) = (self.index_of(from_n), self.index_of(to_n));
        let mut cur = field.to_vec();
        while i < j {
            cur = prolong(&cur, &self.meshes[i], &self.meshes[i + 1])?;
            i += 1;
        }
        Ok(cur)
    }

    fn prolong_boundary_field(
        &self,
        field: &[f64],
        from_n: usize,
        to_n: usize,
    ) -> Result<Vec<f64>, StudyError> {
        let (mut i, j) = (self.index_of(from_n), self.index_of(to_n));
        let mut cur = field.to_vec();
        while i < j {
            cur = prolong_boundary(&cur, &self.meshes[i], &self.meshes[i + 1])?;
            i += 1;
        }
        Ok(cur)
    }
}

/// Prolong a space-time field onto the reference discretization: spatial
/// nesting per slab, then exact slab splitting in time.
fn prolong_space_time(
    chain: &MeshChain,
    field: &SpaceTimeField,
    from_n: usize,
    to_n: usize,
    m_from: usize,
    m_to: usize,
) -> Result<Vec<f64>, StudyError> {
    assert!(m_to.is_multiple_of(m_from));
    let repeat = m_to / m_from;
    let (ref_mesh, _) = chain.at(to_n);
    let n_ref = ref_mesh.node_count();
    let mut out = vec![0.0; m_to * n_ref];
    for m in 0..m_from {
        let fine = chain.prolong_nodal(field.slab(m), from_n, to_n)?;
        for r in 0..repeat {
            let dst = (m * repeat + r) * n_ref;
            out[dst..dst + n_ref].copy_from_slice(&fine);
        }
    }
    Ok(out)
}

fn prolong_boundary_space_time(
    chain: &MeshChain,
    field: &BoundaryField,
    from_n: usize,
    to_n: usize,
    m_from: usize,
    m_to: usize,
) -> Result<Vec<f64>, StudyError> {
    assert!(m_to.is_multiple_of(m_from));
    let repeat = m_to / m_from;
    let (ref_mesh, _) = chain.at(to_n);
    let nb_ref = ref_mesh.boundary_count();
    let mut out = vec![0.0; m_to * nb_ref];
    for m in 0..m_from {
        let fine = chain.prolong_boundary_field(field.slab(m), from_n, to_n)?;
        for r in 0..repeat {
            let dst = (m * repeat + r) * nb_ref;
            out[dst..dst + nb_ref].copy_from_slice(&fine);
        }
    }
    Ok(out)
}

/// Degree-4 triangle quadrature (6 points), weights normalized to sum to 1.
const TRI6: [(f64, f64, f64); 6] = [
    (0.445948490915965, 0.445948490915965, 0.223381589678011),
    (0.445948490915965, 0.108103018168070, 0.223381589678011),
    (0.108103018168070, 0.445948490915965, 0.223381589678011),
    (0.091576213509771, 0.091576213509771, 0.109951743655322),
    (0.091576213509771, 0.816847572980459, 0.109951743655322),
    (0.816847572980459, 0.091576213509771, 0.109951743655322),
];

/// L2(I; L2(Omega)) error of a discrete field against a smooth function, by
/// 2-point Gauss in time and degree-4 quadrature in space.
pub fn state_error_vs_exact(
    mesh: &Mesh,
    grid: &TimeGrid,
    field: &SpaceTimeField,
    exact: impl Fn(f64, f64, f64) -> f64,
) -> f64 {
    let mut acc = 0.0;
    for m in 1..=grid.slabs() {
        let slab = field.slab(m - 1);
        for (t, wt) in grid.slab_gauss(m) {
            let mut space = 0.0;
            for &[a, b, c] in &mesh.triangles {
                let (pa, pb, pc) = (mesh.nodes[a], mesh.nodes[b], mesh.nodes[c]);
                let area = crate::mesh::triangle_area(pa, pb, pc);
                for &(l1, l2, w) in &TRI6 {
                    let l0 = 1.0 - l1 - l2;
                    let x = l0 * pa[0] + l1 * pb[0] + l2 * pc[0];
                    let y = l0 * pa[1] + l1 * pb[1] + l2 * pc[1];
                    let uh = l0 * slab[a] + l1 * slab[b] + l2 * slab[c];
                    let diff = exact(t, x, y) - uh;
                    space += area * w * diff * diff;
                }
            }
            acc += wt * space;
        }
    }
    acc.sqrt()
}

fn grid_for(spec: &StudySpec, m: usize) -> Result<TimeGrid, StudyError> {
    // Studies certify rates only on compliant grids; uniform grids satisfy
    // both step conditions with equality.
    let nodes: Vec<f64> = (0..=m)
        .map(|i| spec.t_final * i as f64 / m as f64)
        .collect();
    Ok(TimeGrid::from_nodes(&nodes, true)?)
}

/// Convergence study of the state solver on a manufactured problem.
pub fn run_state_convergence(spec: &StudySpec) -> Result<StudyReport, StudyError> {
    spec.validate()?;
    let start = Instant::now();
    let problem = manufactured_state_problem(spec.problem)?;

    let (n_ref, m_ref) = spec.reference_resolution();
    let base_n = spec
        .levels
        .iter()
        .map(|&l| spec.resolution(l).0)
        .chain([n_ref])
        .min()
        .unwrap();
    let chain = MeshChain::build(base_n, n_ref)?;

    let exact = |t: f64, x: f64, y: f64| problem.exact(t, x, y);
    let source = |t: f64, x: f64, y: f64| problem.source(t, x, y);
    let initial = |x: f64, y: f64| problem.initial(x, y);

    let solve_level = |n: usize, m: usize| -> Result<(SpaceTimeField, TimeGrid), StudyError> {
        let (mesh, ops) = chain.at(n);
        let grid = grid_for(spec, m)?;
        let data = ProblemData {
            source: Some(&source),
            initial: Some(&initial),
            boundary: BoundaryData::Function(&exact),
        };
        let y = solve_state(&data, mesh, &grid, ops)?;
        Ok((y, grid))
    };

    let (y_ref, grid_ref) = solve_level(n_ref, m_ref)?;
    let (_, ops_ref) = chain.at(n_ref);

    let mut rows = Vec::new();
    for &level in &spec.levels {
        let (n, m) = spec.resolution(level);
        let (y, grid) = solve_level(n, m)?;
        let (mesh_l, _) = chain.at(n);
        let error_exact = state_error_vs_exact(mesh_l, &grid, &y, exact);

        let coarse_on_ref = prolong_space_time(&chain, &y, n, n_ref, m, m_ref)?;
        let diff: Vec<f64> = coarse_on_ref
            .iter()
            .zip(&y_ref.coeffs)
            .map(|(a, b)| a - b)
            .collect();
        let error_state = space_time_l2(&grid_ref, ops_ref, &diff);

        let refined_axis_ratio = spec.reference as f64 / level as f64;
        rows.push(StudyRow {
            level,
            n,
            m,
            h: mesh_l.h,
            k: grid.k_max(),
            error_state,
            error_exact: Some(error_exact),
            error_control: None,
            cost: None,
            iterations: None,
            eoc_state: None,
            eoc_control: None,
            reliable: refined_axis_ratio >= 4.0,
        });
    }
    fill_eocs(spec, &mut rows);

    let params: Vec<f64> = rows.iter().map(|r| spec.parameter(r.n, r.m)).collect();
    let errors: Vec<f64> = rows.iter().map(|r| r.error_state).collect();
    Ok(StudyReport {
        axis: spec.axis,
        problem: spec.problem,
        rows,
        reference_n: n_ref,
        reference_m: m_ref,
        fitted_order_state: fitted_order(&params, &errors),
        fitted_order_control: None,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Convergence study of the control solver on the pinned benchmark, against
/// the reference-level control.
pub fn run_control_convergence(spec: &StudySpec) -> Result<StudyReport, StudyError> {
    spec.validate()?;
    let start = Instant::now();

    let (n_ref, m_ref) = spec.reference_resolution();
    let base_n = spec
        .levels
        .iter()
        .map(|&l| spec.resolution(l).0)
        .chain([n_ref])
        .min()
        .unwrap();
    let chain = MeshChain::build(base_n, n_ref)?;
    let bounds = spec
        .bounds
        .map(|(a, b)| ControlBounds::new(a, b))
        .unwrap_or_else(ControlBounds::unconstrained);

    let solve_level =
        |n: usize, m: usize| -> Result<(crate::control::OptimalityResult, TimeGrid), StudyError> {
            let (mesh, ops) = chain.at(n);
            let grid = grid_for(spec, m)?;
            let prob = ControlProblem::new(
                mesh,
                &grid,
                ops,
                spec.alpha,
                bounds,
                None,
                None,
                &control_benchmark_target,
            )?;
            let result = prob
                .solve(&SolveOptions {
                    tol: spec.control_tol,
                    max_iters: spec.max_iters,
                })
                .map_err(|e| match e {
                    ControlError::Solve(s) => StudyError::Solve(s),
                    other => StudyError::Control(other.to_string()),
                })?;
            Ok((result, grid))
        };

    let (ref_result, grid_ref) = solve_level(n_ref, m_ref)?;
    let (_, ops_ref) = chain.at(n_ref);

    let mut rows = Vec::new();
    for &level in &spec.levels {
        let (n, m) = spec.resolution(level);
        let (result, grid) = solve_level(n, m)?;
        let (mesh_l, _) = chain.at(n);

        let u_on_ref = prolong_boundary_space_time(&chain, &result.control, n, n_ref, m, m_ref)?;
        let du: Vec<f64> = u_on_ref
            .iter()
            .zip(&ref_result.control.coeffs)
            .map(|(a, b)| a - b)
            .collect();
        let error_control = boundary_space_time_l2(&grid_ref, ops_ref, &du);

        let y_on_ref = prolong_space_time(&chain, &result.state, n, n_ref, m, m_ref)?;
        let dy: Vec<f64> = y_on_ref
            .iter()
            .zip(&ref_result.state.coeffs)
            .map(|(a, b)| a - b)
            .collect();
        let error_state = space_time_l2(&grid_ref, ops_ref, &dy);

        let refined_axis_ratio = spec.reference as f64 / level as f64;
        rows.push(StudyRow {
            level,
            n,
            m,
            h: mesh_l.h,
            k: grid.k_max(),
            error_state,
            error_exact: None,
            error_control: Some(error_control),
            cost: Some(result.cost),
            iterations: Some(result.iterations),
            eoc_state: None,
            eoc_control: None,
            reliable: refined_axis_ratio >= 4.0,
        });
    }
    fill_eocs(spec, &mut rows);

    let params: Vec<f64> = rows.iter().map(|r| spec.parameter(r.n, r.m)).collect();
    let state_errors: Vec<f64> = rows.iter().map(|r| r.error_state).collect();
    let control_errors: Vec<f64> = rows.iter().map(|r| r.error_control.unwrap()).collect();
    Ok(StudyReport {
        axis: spec.axis,
        problem: spec.problem,
        rows,
        reference_n: n_ref,
        reference_m: m_ref,
        fitted_order_state: fitted_order(&params, &state_errors),
        fitted_order_control: Some(fitted_order(&params, &control_errors)),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

fn fill_eocs(spec: &StudySpec, rows: &mut [StudyRow]) {
    for i in 1..rows.len() {
        let p0 = spec.parameter(rows[i - 1].n, rows[i - 1].m);
        let p1 = spec.parameter(rows[i].n, rows[i].m);
        let ratio = p0 / p1;
        if rows[i - 1].error_state > 0.0 && rows[i].error_state > 0.0 {
            rows[i].eoc_state = Some(eoc(rows[i - 1].error_state, rows[i].error_state, ratio));
        }
        if let (Some(e0), Some(e1)) = (rows[i - 1].error_control, rows[i].error_control) {
            if e0 > 0.0 && e1 > 0.0 {
                rows[i].eoc_control = Some(eoc(e0, e1, ratio));
            }
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl StudyReport {
    /// CSV for state studies: level,n,M,h,k,error_state,eoc
    pub fn state_csv(&self) -> String {
        let mut out = String::from("level,n,M,h,k,error_state,eoc\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.12e},{:.12e},{:.12e},{}",
                r.level,
                r.n,
                r.m,
                r.h,
                r.k,
                r.error_state,
                fmt_opt(r.eoc_state)
            );
        }
        out
    }

    /// CSV for control studies:
    /// level,n,M,h,k,error_control,error_state,cost,iterations,eoc_control,eoc_state
    pub fn control_csv(&self) -> String {
        let mut out = String::from(
            "level,n,M,h,k,error_control,error_state,cost,iterations,eoc_control,eoc_state\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{},{},{}",
                r.level,
                r.n,
                r.m,
                r.h,
                r.k,
                r.error_control.unwrap_or(f64::NAN),
                r.error_state,
                r.cost.unwrap_or(f64::NAN),
                r.iterations.map(|i| i.to_string()).unwrap_or_default(),
                fmt_opt(r.eoc_control),
                fmt_opt(r.eoc_state)
            );
        }
        out
    }

    pub fn is_control(&self) -> bool {
        self.rows.iter().any(|r| r.error_control.is_some())
    }

    pub fn csv(&self) -> String {
        if self.is_control() {
            self.control_csv()
        } else {
            self.state_csv()
        }
    }

    /// JSON mirror of the CSV plus fit diagnostics.
    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "level": r.level,
                    "n": r.n,
                    "M": r.m,
                    "h": r.h,
                    "k": r.k,
                    "error_state": r.error_state,
                    "error_exact": r.error_exact,
                    "error_control": r.error_control,
                    "cost": r.cost,
                    "iterations": r.iterations,
                    "eoc_state": r.eoc_state,
                    "eoc_control": r.eoc_control,
                    "reliable": r.reliable,
                })
            })
            .collect();
        serde_json::json!({
            "problem": self.problem.to_string(),
            "axis": match self.axis { Axis::Space => "space", Axis::Time => "time", Axis::Coupled => "coupled" },
            "reference": {"n": self.reference_n, "M": self.reference_m},
            "rows": rows,
            "fitted_order_state": self.fitted_order_state,
            "fitted_order_control": self.fitted_order_control,
            "wall_seconds": self.wall_seconds,
            "version": crate::io::version_string(),
        })
    }
}
