//! DG(0)-in-time, CG(1)-in-space solvers for the heat equation with
//! inhomogeneous Dirichlet data, the backward adjoint solver, the space-time
//! bilinear form of the scheme, and the discrete normal derivative of the
//! adjoint.
//!
//! The forward scheme prescribes boundary coefficients by slab-averaged
//! boundary L2 projection of the data and steps the interior unknowns with
//! the backward-Euler-type system (M/k_m + K); inhomogeneous boundary values
//! enter as explicit lifting terms through the assembled coupling blocks.
//!
//! The discrete normal derivative is produced from the Green-identity form
//! (one boundary-mass solve per slab); the equivalent lifting-based
//! characterization, which costs one forward solve per boundary basis
//! function, lives in the test suite as an oracle.

use crate::assembly::{boundary_load_vector, load_vector, FemOperators};
use crate::mesh::Mesh;
use crate::sparse::{CgError, SparseSym};
use crate::timegrid::TimeGrid;
use std::collections::HashMap;
use thiserror::Error;

/// Inner CG tolerance used by the steppers; tight enough that the discrete
/// identities asserted at 1e-9..1e-10 measure algebra, not solver noise.
pub const STEP_TOL: f64 = 1e-11;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("linear solver: {0}")]
    Solver(#[from] CgError),
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
}

/// Piecewise-constant-in-time nodal field: slab-major coefficients plus the
/// initial nodal trace used to form the jump at t = 0.
#[derive(Debug, Clone)]
pub struct SpaceTimeField {
    pub coeffs: Vec<f64>,
    pub initial: Vec<f64>,
    slabs: usize,
    nodes: usize,
}

impl SpaceTimeField {
    pub fn zeros(grid: &TimeGrid, mesh: &Mesh) -> Self {
        Self {
            coeffs: vec![0.0; grid.slabs() * mesh.node_count()],
            initial: vec![0.0; mesh.node_count()],
            slabs: grid.slabs(),
            nodes: mesh.node_count(),
        }
    }

    /// Space-time L2 projection of a function: slab-averaged loads followed
    /// by one mass solve per slab.
    pub fn project(
        mesh: &Mesh,
        grid: &TimeGrid,
        ops: &FemOperators,
        w: impl Fn(f64, f64, f64) -> f64,
    ) -> Result<Self, SolveError> {
        let n = mesh.node_count();
        let mut field = Self::zeros(grid, mesh);
        let loads = grid.project_slab_avg_vec(|t| load_vector(mesh, |x, y| w(t, x, y)));
        for (m, load) in loads.values.iter().enumerate() {
            let x = crate::sparse::pcg(
                &ops.mass,
                &ops.mass.diagonal(),
                load,
                crate::assembly::PROJECTION_TOL,
                10 * n,
            )?;
            field.slab_mut(m).copy_from_slice(&x.x);
        }
        field.initial = crate::assembly::project_l2(mesh, ops, |x, y| w(0.0, x, y))?;
        Ok(field)
    }

    pub fn slabs(&self) -> usize {
        self.slabs
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// Coefficients of slab `m` (0-based: slab 0 is the interval (t_0, t_1]).
    pub fn slab(&self, m: usize) -> &[f64] {
        &self.coeffs[m * self.nodes..(m + 1) * self.nodes]
    }

    pub fn slab_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.coeffs[m * self.nodes..(m + 1) * self.nodes]
    }

    pub fn axpy(&mut self, a: f64, other: &Self) {
        assert_eq!(self.coeffs.len(), other.coeffs.len());
        for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x += a * y;
        }
        for (x, y) in self.initial.iter_mut().zip(&other.initial) {
            *x += a * y;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }
}

/// Piecewise-constant-in-time boundary field, boundary-local node layout.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryField {
    pub coeffs: Vec<f64>,
    slabs: usize,
    nodes: usize,
}

impl BoundaryField {
    pub fn zeros(grid: &TimeGrid, mesh: &Mesh) -> Self {
        Self {
            coeffs: vec![0.0; grid.slabs() * mesh.boundary_count()],
            slabs: grid.slabs(),
            nodes: mesh.boundary_count(),
        }
    }

    /// Boundary space-time L2 projection of a trace function.
    pub fn project(
        mesh: &Mesh,
        grid: &TimeGrid,
        ops: &FemOperators,
        u: impl Fn(f64, f64, f64) -> f64,
    ) -> Result<Self, SolveError> {
        let mut field = Self::zeros(grid, mesh);
        let loads = grid.project_slab_avg_vec(|t| boundary_load_vector(mesh, |x, y| u(t, x, y)));
        for (m, load) in loads.values.iter().enumerate() {
            let x = ops.solve_boundary_mass(load, crate::assembly::PROJECTION_TOL)?;
            field.slab_mut(m).copy_from_slice(&x);
        }
        Ok(field)
    }

    pub fn slabs(&self) -> usize {
        self.slabs
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn slab(&self, m: usize) -> &[f64] {
        &self.coeffs[m * self.nodes..(m + 1) * self.nodes]
    }

    pub fn slab_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.coeffs[m * self.nodes..(m + 1) * self.nodes]
    }

    pub fn axpy(&mut self, a: f64, other: &Self) {
        assert_eq!(self.coeffs.len(), other.coeffs.len());
        for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x += a * y;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.coeffs.iter_mut().for_each(|x| *x *= a);
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }
}

/// Dirichlet data for the forward solve.
pub enum BoundaryData<'a> {
    Zero,
    /// Trace function u(t, x, y); projected slab-by-slab onto the boundary space.
    Function(&'a dyn Fn(f64, f64, f64) -> f64),
    /// Discrete boundary coefficients, taken verbatim.
    Field(&'a BoundaryField),
}

/// Data triple (f, y0, u) of the state equation.
pub struct ProblemData<'a> {
    pub source: Option<&'a dyn Fn(f64, f64, f64) -> f64>,
    pub initial: Option<&'a dyn Fn(f64, f64) -> f64>,
    pub boundary: BoundaryData<'a>,
}

impl<'a> ProblemData<'a> {
    pub fn homogeneous() -> Self {
        Self {
            source: None,
            initial: None,
            boundary: BoundaryData::Zero,
        }
    }
}

/// Per-step system matrices M/k + K, cached by the bit pattern of k so a
/// uniform grid builds exactly one matrix.
struct StepSystems<'a> {
    ops: &'a FemOperators,
    cache: HashMap<u64, SparseSym>,
}

impl<'a> StepSystems<'a> {
    fn new(ops: &'a FemOperators) -> Self {
        Self {
            ops,
            cache: HashMap::new(),
        }
    }

    fn system(&mut self, k: f64) -> &SparseSym {
        self.cache.entry(k.to_bits()).or_insert_with(|| {
            SparseSym::linear_combination(1.0 / k, &self.ops.mass, 1.0, &self.ops.stiffness)
        })
    }
}

/// Slab-averaged volume load vectors of a time-dependent source.
fn slab_avg_loads(mesh: &Mesh, grid: &TimeGrid, f: &dyn Fn(f64, f64, f64) -> f64) -> Vec<Vec<f64>> {
    grid.project_slab_avg_vec(|t| load_vector(mesh, |x, y| f(t, x, y)))
        .values
}

/// Forward DG(0)-CG(1) solve of the state equation.
///
/// Boundary coefficients are the slab-averaged boundary L2 projection of the
/// data (discrete fields are taken verbatim); the initial value enters as its
/// volume L2 projection, whose boundary trace feeds the first lifting step.
pub fn solve_state(
    data: &ProblemData,
    mesh: &Mesh,
    grid: &TimeGrid,
    ops: &FemOperators,
) -> Result<SpaceTimeField, SolveError> {
    let n = mesh.node_count();
    let nb = mesh.boundary_count();
    let m_slabs = grid.slabs();

    let boundary: Vec<Vec<f64>> = match &data.boundary {
        BoundaryData::Zero => vec![vec![0.0; nb]; m_slabs],
        BoundaryData::Field(f) => {
            if f.slabs() != m_slabs || f.nodes() != nb {
                return Err(SolveError::Dimensions(format!(
                    "boundary field is {}x{}, expected {}x{}",
                    f.slabs(),
                    f.nodes(),
                    m_slabs,
                    nb
                )));
            }
            (0..m_slabs).map(|m| f.slab(m).to_vec()).collect()
        }
        BoundaryData::Function(u) => {
            let bf = BoundaryField::project(mesh, grid, ops, u)?;
            (0..m_slabs).map(|m| bf.slab(m).to_vec()).collect()
        }
    };

    let initial_full = match data.initial {
        Some(y0) => crate::assembly::project_l2(mesh, ops, y0)?,
        None => vec![0.0; n],
    };

    let loads: Option<Vec<Vec<f64>>> = data.source.map(|f| slab_avg_loads(mesh, grid, f));

    let mut systems = StepSystems::new(ops);
    let mut field = SpaceTimeField::zeros(grid, mesh);
    field.initial = initial_full.clone();

    let mut prev_full = initial_full;
    for m in 1..=m_slabs {
        let k = grid.step(m);
        let sys = systems.system(k);

        let m_prev = ops.mass.apply_vec(&prev_full);
        let lift = sys.apply_vec(&ops.scatter_boundary(&boundary[m - 1]));
        let mut rhs = Vec::with_capacity(ops.interior.len());
        for &g in &ops.interior {
            let f_term = loads.as_ref().map_or(0.0, |l| l[m - 1][g]);
            rhs.push(f_term + m_prev[g] / k - lift[g]);
        }
        let yi = ops.solve_interior(sys, &rhs, STEP_TOL)?;

        let slab = field.slab_mut(m - 1);
        for (loc, &g) in ops.interior.iter().enumerate() {
            slab[g] = yi[loc];
        }
        for (loc, &g) in ops.boundary.iter().enumerate() {
            slab[g] = boundary[m - 1][loc];
        }
        prev_full = slab.to_vec();
    }
    Ok(field)
}

/// Forward solve with zero source and initial value, driven by the given
/// boundary coefficients verbatim. The homogeneous-data lifting that the
/// duality identity and the control gradient are built on.
pub fn lifted_solve(
    u: &BoundaryField,
    mesh: &Mesh,
    grid: &TimeGrid,
    ops: &FemOperators,
) -> Result<SpaceTimeField, SolveError> {
    solve_state(
        &ProblemData {
            source: None,
            initial: None,
            boundary: BoundaryData::Field(u),
        },
        mesh,
        grid,
        ops,
    )
}

/// Backward adjoint solve with homogeneous Dirichlet values: terminal value
/// zero, stepping backward with (M/k_m + K) against the slab loads of `g`.
pub fn solve_adjoint(
    g: &SpaceTimeField,
    mesh: &Mesh,
    grid: &TimeGrid,
    ops: &FemOperators,
) -> Result<SpaceTimeField, SolveError> {
    let n = mesh.node_count();
    let m_slabs = grid.slabs();
    if g.slabs() != m_slabs || g.nodes() != n {
        return Err(SolveError::Dimensions(format!(
            "adjoint source is {}x{}, expected {}x{}",
            g.slabs(),
            g.nodes(),
            m_slabs,
            n
        )));
    }

    let mut systems = StepSystems::new(ops);
    let mut field = SpaceTimeField::zeros(grid, mesh);
    let mut next_full = vec![0.0; n];
    for m in (1..=m_slabs).rev() {
        let k = grid.step(m);
        let sys = systems.system(k);
        let mg = ops.mass.apply_vec(g.slab(m - 1));
        let m_next = ops.mass.apply_vec(&next_full);
        let mut rhs = Vec::with_capacity(ops.interior.len());
        for &g_idx in &ops.interior {
            rhs.push(mg[g_idx] + m_next[g_idx] / k);
        }
        let zi = ops.solve_interior(sys, &rhs, STEP_TOL)?;
        let slab = field.slab_mut(m - 1);
        for (loc, &g_idx) in ops.interior.iter().enumerate() {
            slab[g_idx] = zi[loc];
        }
        next_full = slab.to_vec();
    }
    // The adjoint has no data trace at t = 0; use its first slab so the
    // leading jump of the diagnostic energy vanishes.
    field.initial = field.slab(0).to_vec();
    Ok(field)
}

/// Discrete normal derivative of an adjoint solution, from the Green-identity
/// characterization: per slab one boundary-mass solve of the boundary-row
/// residual k_m K z_m + M (z_m - z_{m+1}) - k_m (g-load).
pub fn normal_derivative(
    z: &SpaceTimeField,
    g: &SpaceTimeField,
    mesh: &Mesh,
    grid: &TimeGrid,
    ops: &FemOperators,
) -> Result<BoundaryField, SolveError> {
    let m_slabs = grid.slabs();
    let n = mesh.node_count();
    if z.slabs() != m_slabs || g.slabs() != m_slabs || z.nodes() != n || g.nodes() != n {
        return Err(SolveError::Dimensions(
            "normal derivative field mismatch".into(),
        ));
    }
    let mut out = BoundaryField::zeros(grid, mesh);
    let zero = vec![0.0; n];
    for m in 1..=m_slabs {
        let k = grid.step(m);
        let z_cur = z.slab(m - 1);
        let z_next = if m < m_slabs { z.slab(m) } else { &zero[..] };
        let kz = ops.stiffness.apply_vec(z_cur);
        let diff: Vec<f64> = z_cur.iter().zip(z_next).map(|(a, b)| a - b).collect();
        let m_diff = ops.mass.apply_vec(&diff);
        let mg = ops.mass.apply_vec(g.slab(m - 1));
        let rhs: Vec<f64> = ops
            .boundary
            .iter()
            .map(|&gi| kz[gi] + m_diff[gi] / k - mg[gi])
            .collect();
        let d = ops.solve_boundary_mass(&rhs, STEP_TOL)?;
        out.slab_mut(m - 1).copy_from_slice(&d);
    }
    Ok(out)
}

/// Space-time bilinear form of the scheme for piecewise-constant-in-time
/// fields: gradient term plus temporal jumps tested against the first
/// argument, with the initial pairing on the first slab.
pub fn bilinear_b(
    v: &SpaceTimeField,
    w: &SpaceTimeField,
    ops: &FemOperators,
    grid: &TimeGrid,
) -> f64 {
    assert_eq!(v.slabs(), w.slabs(), "mismatched discretizations");
    assert_eq!(v.nodes(), w.nodes(), "mismatched discretizations");
    let m_slabs = grid.slabs();
    let mut acc = 0.0;
    for m in 1..=m_slabs {
        acc += grid.step(m) * ops.stiffness.inner(v.slab(m - 1), w.slab(m - 1));
    }
    for m in 2..=m_slabs {
        let jump: Vec<f64> = v
            .slab(m - 1)
            .iter()
            .zip(v.slab(m - 2))
            .map(|(a, b)| a - b)
            .collect();
        acc += ops.mass.inner(&jump, w.slab(m - 1));
    }
    acc += ops.mass.inner(v.slab(0), w.slab(0));
    acc
}

/// Dual representation of the bilinear form (summation by parts): jumps
/// tested against the second argument plus the terminal pairing. Equal to
/// [`bilinear_b`] up to rounding; kept as an independent algebraic route.
pub fn bilinear_b_dual(
    v: &SpaceTimeField,
    w: &SpaceTimeField,
    ops: &FemOperators,
    grid: &TimeGrid,
) -> f64 {
    assert_eq!(v.slabs(), w.slabs(), "mismatched discretizations");
    let m_slabs = grid.slabs();
    let mut acc = 0.0;
    for m in 1..=m_slabs {
        acc += grid.step(m) * ops.stiffness.inner(v.slab(m - 1), w.slab(m - 1));
    }
    for m in 1..m_slabs {
        let jump: Vec<f64> = w
            .slab(m)
            .iter()
            .zip(w.slab(m - 1))
            .map(|(a, b)| a - b)
            .collect();
        acc -= ops.mass.inner(v.slab(m - 1), &jump);
    }
    acc += ops.mass.inner(v.slab(m_slabs - 1), w.slab(m_slabs - 1));
    acc
}

/// L2(I; L2(Omega)) inner product of two fields.
pub fn space_time_inner(
    a: &SpaceTimeField,
    b: &SpaceTimeField,
    ops: &FemOperators,
    grid: &TimeGrid,
) -> f64 {
    assert_eq!(a.slabs(), b.slabs());
    (1..=grid.slabs())
        .map(|m| grid.step(m) * ops.mass.inner(a.slab(m - 1), b.slab(m - 1)))
        .sum()
}

/// L2(I; L2(Gamma)) inner product of two boundary fields.
pub fn boundary_inner(
    a: &BoundaryField,
    b: &BoundaryField,
    ops: &FemOperators,
    grid: &TimeGrid,
) -> f64 {
    assert_eq!(a.slabs(), b.slabs());
    (1..=grid.slabs())
        .map(|m| grid.step(m) * ops.boundary_mass.inner(a.slab(m - 1), b.slab(m - 1)))
        .sum()
}

pub fn space_time_norm(a: &SpaceTimeField, ops: &FemOperators, grid: &TimeGrid) -> f64 {
    space_time_inner(a, a, ops, grid).sqrt()
}

pub fn boundary_norm(a: &BoundaryField, ops: &FemOperators, grid: &TimeGrid) -> f64 {
    boundary_inner(a, a, ops, grid).sqrt()
}

/// Weighted temporal jump energy of a field, using its stored initial trace.
pub fn field_jump_energy(
    field: &SpaceTimeField,
    s: f64,
    ops: &FemOperators,
    grid: &TimeGrid,
) -> f64 {
    let slabs: Vec<&[f64]> = (0..field.slabs()).map(|m| field.slab(m)).collect();
    crate::timegrid::jump_energy(grid, &slabs, &field.initial, s, &ops.mass)
}

/// Discrete slab loads of the data, for residual checks of the Galerkin
/// identity: returns the pairs (k_m fbar_m, M y0h) entering the right-hand
/// side functional.
pub fn galerkin_rhs(
    data: &ProblemData,
    mesh: &Mesh,
    grid: &TimeGrid,
    ops: &FemOperators,
) -> Result<(Vec<Vec<f64>>, Vec<f64>), SolveError> {
    let loads = match data.source {
        Some(f) => slab_avg_loads(mesh, grid, f),
        None => vec![vec![0.0; mesh.node_count()]; grid.slabs()],
    };
    let y0 = match data.initial {
        Some(y0) => crate::assembly::project_l2(mesh, ops, y0)?,
        None => vec![0.0; mesh.node_count()],
    };
    let my0 = ops.mass.apply_vec(&y0);
    Ok((loads, my0))
}
