//! Assembly of the P1 finite element operators on a triangulation: mass M,
//! stiffness K, boundary mass, interior/boundary partitioning, and the
//! spatial projection operators built on them.
//!
//! Element integrals are analytic. Volume loads use the 3-point edge-midpoint
//! rule (exact for quadratics), boundary loads 2-point Gauss per edge (exact
//! for cubics); that exactness class covers every manufactured right-hand
//! side used by the tests, so quadrature never pollutes observed orders.
//!
//! Dirichlet conditions are handled by index partitioning, never by row
//! elimination: the solvers form lifted boundary contributions explicitly
//! through the full assembled matrices.

use crate::mesh::{triangle_area, Mesh};
use crate::sparse::{pcg, CgError, LinearMap, SparseSym};
use crate::timegrid::TimeGrid;
use std::cell::RefCell;
use thiserror::Error;

/// Inner solve tolerance for projections and time stepping. Tight enough
/// that identities asserted at 1e-9..1e-10 in tests measure discretization
/// algebra, not solver noise.
pub const PROJECTION_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("mesh construction: {0}")]
    Mesh(#[from] crate::mesh::MeshError),
    #[error("sparse assembly: {0}")]
    Sparse(#[from] crate::sparse::SparseError),
    #[error("linear solve: {0}")]
    Solve(#[from] CgError),
}

/// Assembled spatial operators of a mesh.
///
/// `mass` and `stiffness` share one sparsity pattern so per-step system
/// matrices can be formed as same-pattern linear combinations.
pub struct FemOperators {
    pub mass: SparseSym,
    pub stiffness: SparseSym,
    /// boundary mass over boundary-local indices, SPD
    pub boundary_mass: SparseSym,
    pub interior: Vec<usize>,
    pub boundary: Vec<usize>,
    n_nodes: usize,
}

/// Restriction of a full symmetric matrix to a subset of indices, applied by
/// scatter / full matvec / gather. Keeps one code path for all solves.
pub struct RestrictedMap<'a> {
    mat: &'a SparseSym,
    idx: &'a [usize],
    full_in: RefCell<Vec<f64>>,
    full_out: RefCell<Vec<f64>>,
}

impl<'a> RestrictedMap<'a> {
    pub fn new(mat: &'a SparseSym, idx: &'a [usize]) -> Self {
        Self {
            mat,
            idx,
            full_in: RefCell::new(vec![0.0; mat.n()]),
            full_out: RefCell::new(vec![0.0; mat.n()]),
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.idx.iter().map(|&g| self.mat.get(g, g)).collect()
    }
}

impl LinearMap for RestrictedMap<'_> {
    fn dim(&self) -> usize {
        self.idx.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut full_in = self.full_in.borrow_mut();
        let mut full_out = self.full_out.borrow_mut();
        full_in.iter_mut().for_each(|v| *v = 0.0);
        for (loc, &g) in self.idx.iter().enumerate() {
            full_in[g] = x[loc];
        }
        self.mat.apply(&full_in, &mut full_out);
        for (loc, &g) in self.idx.iter().enumerate() {
            y[loc] = full_out[g];
        }
    }
}

/// Assemble mass, stiffness and boundary mass with exact element integrals.
pub fn assemble(mesh: &Mesh) -> Result<FemOperators, AssemblyError> {
    let n = mesh.node_count();
    let mut mass_t = Vec::with_capacity(9 * mesh.triangles.len());
    let mut stiff_t = Vec::with_capacity(9 * mesh.triangles.len());
    for (t, &[a, b, c]) in mesh.triangles.iter().enumerate() {
        let (pa, pb, pc) = (mesh.nodes[a], mesh.nodes[b], mesh.nodes[c]);
        let area = triangle_area(pa, pb, pc);
        if area <= 0.0 {
            return Err(crate::mesh::MeshError::DegenerateTriangle(t, area).into());
        }
        // Gradient of hat i is (b_i, c_i) / (2 area) with the usual cofactors.
        let bs = [pb[1] - pc[1], pc[1] - pa[1], pa[1] - pb[1]];
        let cs = [pc[0] - pb[0], pa[0] - pc[0], pb[0] - pa[0]];
        let idx = [a, b, c];
        for i in 0..3 {
            for j in 0..3 {
                let mij = area / 12.0 * if i == j { 2.0 } else { 1.0 };
                let kij = (bs[i] * bs[j] + cs[i] * cs[j]) / (4.0 * area);
                mass_t.push((idx[i], idx[j], mij));
                stiff_t.push((idx[i], idx[j], kij));
            }
        }
    }
    let mass = SparseSym::from_triplets(n, &mass_t)?;
    let stiffness = SparseSym::from_triplets(n, &stiff_t)?;

    let nb = mesh.boundary_count();
    let mut bm_t = Vec::with_capacity(4 * mesh.boundary_edges.len());
    for &(p, q) in &mesh.boundary_edges {
        let (lp, lq) = (mesh.boundary_of[p].unwrap(), mesh.boundary_of[q].unwrap());
        let len = ((mesh.nodes[p][0] - mesh.nodes[q][0]).powi(2)
            + (mesh.nodes[p][1] - mesh.nodes[q][1]).powi(2))
        .sqrt();
        bm_t.push((lp, lp, len / 3.0));
        bm_t.push((lq, lq, len / 3.0));
        bm_t.push((lp, lq, len / 6.0));
        bm_t.push((lq, lp, len / 6.0));
    }
    let boundary_mass = SparseSym::from_triplets(nb, &bm_t)?;

    Ok(FemOperators {
        mass,
        stiffness,
        boundary_mass,
        interior: mesh.interior_nodes.clone(),
        boundary: mesh.boundary_nodes.clone(),
        n_nodes: n,
    })
}

impl FemOperators {
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Zero-extend an interior-local vector to all nodes.
    pub fn scatter_interior(&self, x: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_nodes];
        for (loc, &g) in self.interior.iter().enumerate() {
            full[g] = x[loc];
        }
        full
    }

    /// Zero-extend a boundary-local vector to all nodes.
    pub fn scatter_boundary(&self, x: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_nodes];
        for (loc, &g) in self.boundary.iter().enumerate() {
            full[g] = x[loc];
        }
        full
    }

    pub fn gather_interior(&self, full: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|&g| full[g]).collect()
    }

    pub fn gather_boundary(&self, full: &[f64]) -> Vec<f64> {
        self.boundary.iter().map(|&g| full[g]).collect()
    }

    /// Solve the interior block system `sys_ii x = b` for a full assembled
    /// symmetric matrix `sys`.
    pub fn solve_interior(
        &self,
        sys: &SparseSym,
        b: &[f64],
        tol: f64,
    ) -> Result<Vec<f64>, CgError> {
        let map = RestrictedMap::new(sys, &self.interior);
        let diag = map.diagonal();
        let sol = pcg(&map, &diag, b, tol, 10 * map.dim().max(1))?;
        Ok(sol.x)
    }

    /// Solve the boundary mass system.
    pub fn solve_boundary_mass(&self, b: &[f64], tol: f64) -> Result<Vec<f64>, CgError> {
        Ok(pcg(
            &self.boundary_mass,
            &self.boundary_mass.diagonal(),
            b,
            tol,
            10 * b.len().max(1),
        )?
        .x)
    }

    /// L2(Omega) inner product of two nodal fields.
    pub fn l2_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.mass.inner(a, b)
    }

    /// L2(Gamma) inner product of two boundary-local fields.
    pub fn boundary_l2_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.boundary_mass.inner(a, b)
    }
}

/// Volume load vector b_i = \int w phi_i by the 3-point edge-midpoint rule.
pub fn load_vector(mesh: &Mesh, w: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut b = vec![0.0; mesh.node_count()];
    for &[i, j, k] in &mesh.triangles {
        let (pi, pj, pk) = (mesh.nodes[i], mesh.nodes[j], mesh.nodes[k]);
        let area = triangle_area(pi, pj, pk);
        let mids = [
            [0.5 * (pi[0] + pj[0]), 0.5 * (pi[1] + pj[1])],
            [0.5 * (pj[0] + pk[0]), 0.5 * (pj[1] + pk[1])],
            [0.5 * (pk[0] + pi[0]), 0.5 * (pk[1] + pi[1])],
        ];
        let vals = [
            w(mids[0][0], mids[0][1]),
            w(mids[1][0], mids[1][1]),
            w(mids[2][0], mids[2][1]),
        ];
        // Hat i is 1/2 on the two midpoints of edges touching i, 0 opposite.
        b[i] += area / 3.0 * 0.5 * (vals[0] + vals[2]);
        b[j] += area / 3.0 * 0.5 * (vals[0] + vals[1]);
        b[k] += area / 3.0 * 0.5 * (vals[1] + vals[2]);
    }
    b
}

/// Boundary load vector (boundary-local) by 2-point Gauss per edge.
pub fn boundary_load_vector(mesh: &Mesh, w: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    const G: [f64; 2] = [-0.5773502691896257, 0.5773502691896257];
    let mut b = vec![0.0; mesh.boundary_count()];
    for &(p, q) in &mesh.boundary_edges {
        let (pp, pq) = (mesh.nodes[p], mesh.nodes[q]);
        let len = ((pp[0] - pq[0]).powi(2) + (pp[1] - pq[1]).powi(2)).sqrt();
        let (lp, lq) = (mesh.boundary_of[p].unwrap(), mesh.boundary_of[q].unwrap());
        for &g in &G {
            let s = 0.5 * (1.0 + g); // in [0,1] along the edge
            let x = pp[0] + s * (pq[0] - pp[0]);
            let y = pp[1] + s * (pq[1] - pp[1]);
            let wv = w(x, y) * len / 2.0;
            b[lp] += wv * (1.0 - s);
            b[lq] += wv * s;
        }
    }
    b
}

/// L2(Omega) projection onto V_h: solve M x = (w, phi_i).
pub fn project_l2(
    mesh: &Mesh,
    ops: &FemOperators,
    w: impl Fn(f64, f64) -> f64,
) -> Result<Vec<f64>, CgError> {
    let b = load_vector(mesh, w);
    Ok(pcg(
        &ops.mass,
        &ops.mass.diagonal(),
        &b,
        PROJECTION_TOL,
        10 * b.len(),
    )?
    .x)
}

/// L2(Omega) projection of a nodal field living on the refinement of
/// `parent` down to the parent space: the load vector is the transposed
/// prolongation of the fine mass moments, so no quadrature is involved and
/// the projection is exact up to solver tolerance.
pub fn project_l2_from_fine(
    parent: &Mesh,
    parent_ops: &FemOperators,
    child: &Mesh,
    child_ops: &FemOperators,
    fine_field: &[f64],
) -> Result<Vec<f64>, AssemblyError> {
    let map = crate::mesh::refinement_map(parent, child)?;
    if fine_field.len() != child.node_count() {
        return Err(crate::mesh::MeshError::FieldLength {
            found: fine_field.len(),
            expected: child.node_count(),
        }
        .into());
    }
    let moments = child_ops.mass.apply_vec(fine_field);
    let mut b = vec![0.0; parent.node_count()];
    b.copy_from_slice(&moments[..map.parent_nodes]);
    for (&(i, j), &mid) in &map.midpoint_of {
        b[i] += 0.5 * moments[mid];
        b[j] += 0.5 * moments[mid];
    }
    Ok(pcg(
        &parent_ops.mass,
        &parent_ops.mass.diagonal(),
        &b,
        PROJECTION_TOL,
        10 * b.len(),
    )?
    .x)
}

/// L2(Gamma) projection onto the boundary trace space (boundary-local).
pub fn project_l2_boundary(
    mesh: &Mesh,
    ops: &FemOperators,
    w: impl Fn(f64, f64) -> f64,
) -> Result<Vec<f64>, CgError> {
    let b = boundary_load_vector(mesh, w);
    ops.solve_boundary_mass(&b, PROJECTION_TOL)
}

/// Ritz projection of a function vanishing on the boundary, given its
/// gradient: solve K_ii x = (grad v, grad phi_i). Returns a full nodal field
/// with zero boundary values.
pub fn ritz_projection(
    mesh: &Mesh,
    ops: &FemOperators,
    grad: impl Fn(f64, f64) -> [f64; 2],
) -> Result<Vec<f64>, CgError> {
    let mut b_full = vec![0.0; mesh.node_count()];
    for &[i, j, k] in &mesh.triangles {
        let (pi, pj, pk) = (mesh.nodes[i], mesh.nodes[j], mesh.nodes[k]);
        let bs = [pj[1] - pk[1], pk[1] - pi[1], pi[1] - pj[1]];
        let cs = [pk[0] - pj[0], pi[0] - pk[0], pj[0] - pi[0]];
        let mids = [
            [0.5 * (pi[0] + pj[0]), 0.5 * (pi[1] + pj[1])],
            [0.5 * (pj[0] + pk[0]), 0.5 * (pj[1] + pk[1])],
            [0.5 * (pk[0] + pi[0]), 0.5 * (pk[1] + pi[1])],
        ];
        let mut gavg = [0.0, 0.0];
        for m in mids {
            let g = grad(m[0], m[1]);
            gavg[0] += g[0] / 3.0;
            gavg[1] += g[1] / 3.0;
        }
        for (loc, &node) in [i, j, k].iter().enumerate() {
            // grad phi = (b, c) / (2 area); quadrature weight is the area.
            b_full[node] += (gavg[0] * bs[loc] + gavg[1] * cs[loc]) / 2.0;
        }
    }
    let b = ops.gather_interior(&b_full);
    let x = ops.solve_interior(&ops.stiffness, &b, PROJECTION_TOL)?;
    Ok(ops.scatter_interior(&x))
}

/// Ritz projection of a member of the discrete space (full nodal field with
/// zero boundary values): exact right-hand side through the stiffness matrix.
pub fn ritz_projection_field(ops: &FemOperators, field: &[f64]) -> Result<Vec<f64>, CgError> {
    let full = ops.stiffness.apply_vec(field);
    let b = ops.gather_interior(&full);
    let x = ops.solve_interior(&ops.stiffness, &b, PROJECTION_TOL)?;
    Ok(ops.scatter_interior(&x))
}

/// Modified projection: interior coefficients from the volume L2 projection,
/// boundary coefficients replaced by the boundary L2 projection of the trace.
/// The boundary part is then L2(Gamma)-orthogonal by construction.
///
/// This operator appears in the spatial error analysis only; the solvers
/// never call it.
pub fn modified_projection(
    mesh: &Mesh,
    ops: &FemOperators,
    w: impl Fn(f64, f64) -> f64,
) -> Result<Vec<f64>, CgError> {
    let volume = project_l2(mesh, ops, &w)?;
    let trace = project_l2_boundary(mesh, ops, &w)?;
    let mut out = volume;
    for (loc, &g) in ops.boundary.iter().enumerate() {
        out[g] = trace[loc];
    }
    Ok(out)
}

/// Exact L2(I; L2(Omega)) norm of a piecewise-constant-in-time nodal field
/// given slab-major coefficients.
pub fn space_time_l2(grid: &TimeGrid, ops: &FemOperators, coeffs: &[f64]) -> f64 {
    let n = ops.n_nodes();
    assert_eq!(coeffs.len(), grid.slabs() * n);
    let mut acc = 0.0;
    for m in 0..grid.slabs() {
        let slab = &coeffs[m * n..(m + 1) * n];
        acc += grid.steps()[m] * ops.mass.quadratic_form(slab);
    }
    acc.sqrt()
}

/// Exact L2(I; L2(Gamma)) norm of a piecewise-constant-in-time boundary field.
pub fn boundary_space_time_l2(grid: &TimeGrid, ops: &FemOperators, coeffs: &[f64]) -> f64 {
    let nb = ops.boundary.len();
    assert_eq!(coeffs.len(), grid.slabs() * nb);
    let mut acc = 0.0;
    for m in 0..grid.slabs() {
        let slab = &coeffs[m * nb..(m + 1) * nb];
        acc += grid.steps()[m] * ops.boundary_mass.quadratic_form(slab);
    }
    acc.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::unit_square_mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ones(n: usize) -> Vec<f64> {
        vec![1.0; n]
    }

    #[test]
    fn partition_of_unity_and_constant_kernel() {
        let mesh = unit_square_mesh(1).unwrap();
        let ops = assemble(&mesh).unwrap();
        let one = ones(mesh.node_count());
        assert!((ops.mass.quadratic_form(&one) - 1.0).abs() < 1e-14);
        let bone = ones(mesh.boundary_count());
        assert!((ops.boundary_mass.quadratic_form(&bone) - 4.0).abs() < 1e-14);
        let k1 = ops.stiffness.apply_vec(&one);
        assert!(k1.iter().all(|v| v.abs() <= 1e-14));
    }

    #[test]
    fn invariants_hold_on_every_mesh() {
        for n in [2usize, 3, 5] {
            let mesh = unit_square_mesh(n).unwrap();
            let ops = assemble(&mesh).unwrap();
            let one = ones(mesh.node_count());
            assert!((ops.mass.quadratic_form(&one) - 1.0).abs() < 1e-13);
            let k1 = ops.stiffness.apply_vec(&one);
            assert!(k1.iter().all(|v| v.abs() <= 1e-13));
        }
    }

    #[test]
    fn reference_triangle_element_mass() {
        let mesh = crate::mesh::Mesh::from_cells(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let ops = assemble(&mesh).unwrap();
        let area = 0.5;
        for i in 0..3 {
            for j in 0..3 {
                let expected = area / 12.0 * if i == j { 2.0 } else { 1.0 };
                assert!((ops.mass.get(i, j) - expected).abs() < 1e-15);
            }
        }
    }

    /// Per-triangle quadrature of |grad v_h|^2 (gradient is constant per
    /// triangle), the independent route for the stiffness quadratic form.
    fn gradient_energy_oracle(mesh: &Mesh, v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &[i, j, k] in &mesh.triangles {
            let (pi, pj, pk) = (mesh.nodes[i], mesh.nodes[j], mesh.nodes[k]);
            let area = triangle_area(pi, pj, pk);
            let bs = [pj[1] - pk[1], pk[1] - pi[1], pi[1] - pj[1]];
            let cs = [pk[0] - pj[0], pi[0] - pk[0], pj[0] - pi[0]];
            let mut gx = 0.0;
            let mut gy = 0.0;
            for (loc, &node) in [i, j, k].iter().enumerate() {
                gx += v[node] * bs[loc] / (2.0 * area);
                gy += v[node] * cs[loc] / (2.0 * area);
            }
            acc += area * (gx * gx + gy * gy);
        }
        acc
    }

    #[test]
    fn stiffness_quadratic_form_matches_gradient_quadrature() {
        let mesh = unit_square_mesh(3).unwrap();
        let ops = assemble(&mesh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..mesh.node_count())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let a = ops.stiffness.quadratic_form(&v);
        let b = gradient_energy_oracle(&mesh, &v);
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn projection_reproduces_constants_and_linears() {
        let mesh = unit_square_mesh(2).unwrap();
        let ops = assemble(&mesh).unwrap();
        let c = project_l2(&mesh, &ops, |_, _| 2.5).unwrap();
        assert!(c.iter().all(|v| (v - 2.5).abs() < 1e-11));
        let lin = project_l2(&mesh, &ops, |x, y| x + y).unwrap();
        let exact = mesh.nodal_values(|x, y| x + y);
        for (a, b) in lin.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn projection_orthogonality_residual() {
        let mesh = unit_square_mesh(2).unwrap();
        let ops = assemble(&mesh).unwrap();
        let p = project_l2(&mesh, &ops, |x, _| x * x).unwrap();
        // Residual of M p = b per basis function, b exact for quadratics.
        let b = load_vector(&mesh, |x, _| x * x);
        let mp = ops.mass.apply_vec(&p);
        for (r, s) in mp.iter().zip(&b) {
            assert!((r - s).abs() <= 1e-10);
        }
    }

    #[test]
    fn projection_from_fine_restricts_prolongations_exactly() {
        let parent = unit_square_mesh(2).unwrap();
        let (child, _) = crate::mesh::refine(&parent);
        let parent_ops = assemble(&parent).unwrap();
        let child_ops = assemble(&child).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);

        // Restriction of a prolonged coarse field recovers it: the coarse
        // space member is fixed by its own projection.
        let coarse: Vec<f64> = (0..parent.node_count())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let fine = crate::mesh::prolong(&coarse, &parent, &child).unwrap();
        let back = project_l2_from_fine(&parent, &parent_ops, &child, &child_ops, &fine).unwrap();
        for (a, b) in back.iter().zip(&coarse) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }

        // Orthogonality against every coarse basis function for a general
        // fine field: the moment of the residual vanishes.
        let fine_free: Vec<f64> = (0..child.node_count())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let proj =
            project_l2_from_fine(&parent, &parent_ops, &child, &child_ops, &fine_free).unwrap();
        let residual: Vec<f64> = crate::mesh::prolong(&proj, &parent, &child)
            .unwrap()
            .iter()
            .zip(&fine_free)
            .map(|(p, w)| w - p)
            .collect();
        // Coarse moments of the residual via the transposed prolongation.
        let map = crate::mesh::refinement_map(&parent, &child).unwrap();
        let moments = child_ops.mass.apply_vec(&residual);
        let mut coarse_moments = moments[..map.parent_nodes].to_vec();
        for (&(i, j), &mid) in &map.midpoint_of {
            coarse_moments[i] += 0.5 * moments[mid];
            coarse_moments[j] += 0.5 * moments[mid];
        }
        for m in coarse_moments {
            assert!(m.abs() < 1e-10, "residual moment {m}");
        }
    }

    #[test]
    fn boundary_projection_constant_and_orthogonality() {
        let mesh = unit_square_mesh(2).unwrap();
        let ops = assemble(&mesh).unwrap();
        let c = project_l2_boundary(&mesh, &ops, |_, _| -1.5).unwrap();
        assert!(c.iter().all(|v| (v + 1.5).abs() < 1e-11));

        // Arclength hat on one edge: quadratic load, residual at solver tol.
        let w = |x: f64, y: f64| {
            if y == 0.0 {
                (1.0 - (2.0 * x - 1.0).abs()).max(0.0)
            } else {
                0.0
            }
        };
        let p = project_l2_boundary(&mesh, &ops, w).unwrap();
        let b = boundary_load_vector(&mesh, w);
        let mp = ops.boundary_mass.apply_vec(&p);
        for (r, s) in mp.iter().zip(&b) {
            assert!((r - s).abs() <= 1e-10);
        }
    }

    #[test]
    fn boundary_projection_matches_trace_of_volume_projection_for_linears() {
        let mesh = unit_square_mesh(2).unwrap();
        let ops = assemble(&mesh).unwrap();
        let vol = project_l2(&mesh, &ops, |x, y| x + y).unwrap();
        let tr = mesh.restrict_boundary(&vol);
        let bnd = project_l2_boundary(&mesh, &ops, |x, y| x + y).unwrap();
        for (a, b) in tr.iter().zip(&bnd) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn ritz_projection_fixes_members_and_zero() {
        let mesh = unit_square_mesh(3).unwrap();
        let ops = assemble(&mesh).unwrap();
        let mut member = vec![0.0; mesh.node_count()];
        for &g in &mesh.interior_nodes {
            member[g] = (g as f64 * 0.37).sin();
        }
        let r = ritz_projection_field(&ops, &member).unwrap();
        for (a, b) in r.iter().zip(&member) {
            assert!((a - b).abs() < 1e-10);
        }
        let z = ritz_projection_field(&ops, &vec![0.0; mesh.node_count()]).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn ritz_projection_h1_error_converges_first_order() {
        use std::f64::consts::PI;
        let v_grad = |x: f64, y: f64| {
            [
                PI * (PI * x).cos() * (PI * y).sin(),
                PI * (PI * x).sin() * (PI * y).cos(),
            ]
        };
        let mut errors = Vec::new();
        for n in [4usize, 8, 16] {
            let mesh = unit_square_mesh(n).unwrap();
            let ops = assemble(&mesh).unwrap();
            let rh = ritz_projection(&mesh, &ops, v_grad).unwrap();
            // H1 seminorm error by midpoint quadrature per triangle.
            let mut acc = 0.0;
            for &[i, j, k] in &mesh.triangles {
                let (pi, pj, pk) = (mesh.nodes[i], mesh.nodes[j], mesh.nodes[k]);
                let area = triangle_area(pi, pj, pk);
                let bs = [pj[1] - pk[1], pk[1] - pi[1], pi[1] - pj[1]];
                let cs = [pk[0] - pj[0], pi[0] - pk[0], pj[0] - pi[0]];
                let mut gx = 0.0;
                let mut gy = 0.0;
                for (loc, &node) in [i, j, k].iter().enumerate() {
                    gx += rh[node] * bs[loc] / (2.0 * area);
                    gy += rh[node] * cs[loc] / (2.0 * area);
                }
                let mids = [
                    [0.5 * (pi[0] + pj[0]), 0.5 * (pi[1] + pj[1])],
                    [0.5 * (pj[0] + pk[0]), 0.5 * (pj[1] + pk[1])],
                    [0.5 * (pk[0] + pi[0]), 0.5 * (pk[1] + pi[1])],
                ];
                for m in mids {
                    let g = v_grad(m[0], m[1]);
                    acc += area / 3.0 * ((g[0] - gx).powi(2) + (g[1] - gy).powi(2));
                }
            }
            errors.push(acc.sqrt());
        }
        for pair in errors.windows(2) {
            let eoc = (pair[0] / pair[1]).log2();
            assert!(eoc >= 0.9, "H1 EOC {eoc}");
        }
    }

    #[test]
    fn modified_projection_fixes_members_and_constants() {
        let mesh = unit_square_mesh(2).unwrap();
        let ops = assemble(&mesh).unwrap();
        let c = modified_projection(&mesh, &ops, |_, _| 4.0).unwrap();
        assert!(c.iter().all(|v| (v - 4.0).abs() < 1e-10));
        // x + y is a member of V_h; both parts reproduce it.
        let m = modified_projection(&mesh, &ops, |x, y| x + y).unwrap();
        let exact = mesh.nodal_values(|x, y| x + y);
        for (a, b) in m.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn modified_projection_boundary_orthogonality_and_order() {
        let w = |x: f64, y: f64| x * x + y * y;
        let mut errors = Vec::new();
        for n in [4usize, 8, 16] {
            let mesh = unit_square_mesh(n).unwrap();
            let ops = assemble(&mesh).unwrap();
            let p = modified_projection(&mesh, &ops, w).unwrap();
            if n == 4 {
                let tr = mesh.restrict_boundary(&p);
                let b = boundary_load_vector(&mesh, w);
                let mp = ops.boundary_mass.apply_vec(&tr);
                for (r, s) in mp.iter().zip(&b) {
                    assert!((r - s).abs() <= 1e-10);
                }
            }
            // L2 error by 6-point quadrature is overkill here; midpoint rule
            // on the squared difference of a smooth function is enough for
            // an order check.
            let mut acc = 0.0;
            for &[i, j, k] in &mesh.triangles {
                let (pi, pj, pk) = (mesh.nodes[i], mesh.nodes[j], mesh.nodes[k]);
                let area = triangle_area(pi, pj, pk);
                let mids = [
                    (
                        [0.5 * (pi[0] + pj[0]), 0.5 * (pi[1] + pj[1])],
                        0.5 * (p[i] + p[j]),
                    ),
                    (
                        [0.5 * (pj[0] + pk[0]), 0.5 * (pj[1] + pk[1])],
                        0.5 * (p[j] + p[k]),
                    ),
                    (
                        [0.5 * (pk[0] + pi[0]), 0.5 * (pk[1] + pi[1])],
                        0.5 * (p[k] + p[i]),
                    ),
                ];
                for (pt, ph) in mids {
                    acc += area / 3.0 * (w(pt[0], pt[1]) - ph).powi(2);
                }
            }
            errors.push(acc.sqrt());
        }
        for pair in errors.windows(2) {
            let eoc = (pair[0] / pair[1]).log2();
            assert!(eoc >= 0.9, "EOC {eoc}");
        }
    }

    #[test]
    fn space_time_norms_of_simple_fields() {
        let mesh = unit_square_mesh(2).unwrap();
        let ops = assemble(&mesh).unwrap();
        let grid = TimeGrid::uniform(3, 1.0);
        let zero = vec![0.0; grid.slabs() * mesh.node_count()];
        assert_eq!(space_time_l2(&grid, &ops, &zero), 0.0);
        let one = vec![1.0; grid.slabs() * mesh.node_count()];
        assert!((space_time_l2(&grid, &ops, &one) - 1.0).abs() < 1e-13);
    }

    /// Independent per-triangle/per-slab quadrature of the space-time norm.
    #[test]
    fn space_time_norm_matches_quadrature_oracle() {
        let mesh = unit_square_mesh(2).unwrap();
        let ops = assemble(&mesh).unwrap();
        let grid = TimeGrid::uniform(2, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let coeffs: Vec<f64> = (0..grid.slabs() * mesh.node_count())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let fast = space_time_l2(&grid, &ops, &coeffs);
        let n = mesh.node_count();
        let mut acc = 0.0;
        for m in 0..grid.slabs() {
            let slab = &coeffs[m * n..(m + 1) * n];
            // Exact integral of a P1 square via the element mass matrix is
            // the production path; the oracle uses the edge-midpoint rule,
            // exact for quadratics.
            let mut slab_acc = 0.0;
            for &[i, j, k] in &mesh.triangles {
                let (pi, pj, pk) = (mesh.nodes[i], mesh.nodes[j], mesh.nodes[k]);
                let area = triangle_area(pi, pj, pk);
                let midvals = [
                    0.5 * (slab[i] + slab[j]),
                    0.5 * (slab[j] + slab[k]),
                    0.5 * (slab[k] + slab[i]),
                ];
                for v in midvals {
                    slab_acc += area / 3.0 * v * v;
                }
            }
            acc += grid.steps()[m] * slab_acc;
        }
        let oracle = acc.sqrt();
        assert!((fast - oracle).abs() <= 1e-12 * oracle.max(1.0));
    }

    #[test]
    fn trace_commutes_with_slab_averaging_on_nodal_fields() {
        // Slab-average every node and restrict to the boundary, or restrict
        // first and slab-average only the boundary nodes: for nodal fields
        // both are slab averages of boundary values, equal bit for bit.
        let mesh = unit_square_mesh(2).unwrap();
        let grid = TimeGrid::uniform(3, 1.0);
        let w = |t: f64, x: f64, y: f64| (1.0 + t) * (x - 2.0 * y) + t * t * x * y;

        let mut averaged_all: Vec<Vec<f64>> = Vec::new();
        for &[x, y] in &mesh.nodes {
            averaged_all.push(grid.project_slab_avg(|t| w(t, x, y)).values);
        }
        for m in 0..grid.slabs() {
            let full: Vec<f64> = (0..mesh.node_count()).map(|g| averaged_all[g][m]).collect();
            let avg_then_trace = mesh.restrict_boundary(&full);
            let trace_then_avg: Vec<f64> = mesh
                .boundary_nodes
                .iter()
                .map(|&g| {
                    let [x, y] = mesh.nodes[g];
                    grid.project_slab_avg(|t| w(t, x, y)).values[m]
                })
                .collect();
            assert_eq!(avg_then_trace, trace_then_avg);
        }
    }

    #[test]
    fn volume_projection_idempotent_and_self_adjoint() {
        let mesh = unit_square_mesh(2).unwrap();
        let ops = assemble(&mesh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let v: Vec<f64> = (0..mesh.node_count())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        // Projecting a member reproduces it: evaluate the P1 field exactly.
        let eval = |x: f64, y: f64| {
            // On the structured mesh, locate the cell and interpolate.
            let n = 2.0;
            let i = ((x * n).floor() as usize).min(1);
            let j = ((y * n).floor() as usize).min(1);
            let (x0, y0) = (i as f64 / 2.0, j as f64 / 2.0);
            let (xi, eta) = ((x - x0) * n, (y - y0) * n);
            let id = |i: usize, j: usize| j * 3 + i;
            let (a, b, c, d) = (
                v[id(i, j)],
                v[id(i + 1, j)],
                v[id(i + 1, j + 1)],
                v[id(i, j + 1)],
            );
            if xi >= eta {
                a + (b - a) * xi + (c - b) * eta
            } else {
                a + (c - d) * xi + (d - a) * eta
            }
        };
        let p = project_l2(&mesh, &ops, eval).unwrap();
        for (a, b) in p.iter().zip(&v) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }

        // Self-adjointness in the mass inner product: (f, P g) = (P f, P g)
        // = (g, P f) with the pairing evaluated through the load rule.
        let f = |x: f64, y: f64| (2.0 * x).cos() + y;
        let g = |x: f64, y: f64| x * y + 0.5 * y * y;
        let pf = project_l2(&mesh, &ops, f).unwrap();
        let pg = project_l2(&mesh, &ops, g).unwrap();
        let f_pg = crate::sparse::dot(&load_vector(&mesh, f), &pg);
        let g_pf = crate::sparse::dot(&load_vector(&mesh, g), &pf);
        let pf_m_pg = ops.mass.inner(&pf, &pg);
        assert!((f_pg - pf_m_pg).abs() <= 1e-10);
        assert!((g_pf - pf_m_pg).abs() <= 1e-10);
    }
}
