//! Conforming P1 triangulations of the unit square: structured construction,
//! uniform (red) refinement, and exact prolongation of nodal fields between
//! nested meshes.
//!
//! The domain is fixed to the unit square; each grid cell is split along the
//! same diagonal, which keeps refinement nested and quasi-uniformity trivial.
//! General convex polygons would only need a different constructor feeding
//! the same `Mesh` structure.

use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("subdivision count must be at least 1")]
    DegenerateSubdivision,
    #[error("triangle {0} has non-positive area {1:e}")]
    DegenerateTriangle(usize, f64),
    #[error("meshes are not a nested parent/child pair: {0}")]
    NotNested(String),
    #[error("field length {found} does not match node count {expected}")]
    FieldLength { found: usize, expected: usize },
    #[error("boundary edges do not form a single closed cycle")]
    BrokenBoundary,
}

/// Triangulation with boundary/interior node classification.
///
/// Triangles are counterclockwise. `boundary_nodes` is sorted by global node
/// index and fixes the layout of boundary-local vectors everywhere in the
/// crate; `boundary_edges` is the counterclockwise traversal of the boundary
/// starting at the node closest to the origin.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<(usize, usize)>,
    pub boundary_nodes: Vec<usize>,
    pub interior_nodes: Vec<usize>,
    /// boundary-local index of each global node, if on the boundary
    pub boundary_of: Vec<Option<usize>>,
    /// interior-local index of each global node, if interior
    pub interior_of: Vec<Option<usize>>,
    /// max triangle diameter, recomputed from geometry
    pub h: f64,
}

pub fn triangle_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Mesh {
    /// Assemble classification data from nodes and triangles.
    ///
    /// Boundary edges are the edges owned by exactly one triangle, oriented
    /// as in that triangle (counterclockwise along the boundary), chained
    /// into a single cycle.
    pub fn from_cells(nodes: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        let mut oriented: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
        let mut h: f64 = 0.0;
        for (t, tri) in triangles.iter().enumerate() {
            let [a, b, c] = *tri;
            let area = triangle_area(nodes[a], nodes[b], nodes[c]);
            if area <= 0.0 {
                return Err(MeshError::DegenerateTriangle(t, area));
            }
            for (p, q) in [(a, b), (b, c), (c, a)] {
                *edge_count.entry(edge_key(p, q)).or_insert(0) += 1;
                oriented.insert(edge_key(p, q), (p, q));
                let d = ((nodes[p][0] - nodes[q][0]).powi(2) + (nodes[p][1] - nodes[q][1]).powi(2))
                    .sqrt();
                h = h.max(d);
            }
        }

        // Every edge belongs to one triangle (boundary) or two (interior).
        // Chain the boundary edges into one cycle starting nearest the origin.
        let mut next: HashMap<usize, usize> = HashMap::new();
        for (key, count) in &edge_count {
            match count {
                1 => {
                    let (p, q) = oriented[key];
                    if next.insert(p, q).is_some() {
                        return Err(MeshError::BrokenBoundary);
                    }
                }
                2 => {}
                _ => return Err(MeshError::BrokenBoundary),
            }
        }
        if next.is_empty() {
            return Err(MeshError::BrokenBoundary);
        }
        let start = *next
            .keys()
            .min_by(|&&a, &&b| {
                let ka = nodes[a][1] * nodes[a][1] + nodes[a][0] * nodes[a][0];
                let kb = nodes[b][1] * nodes[b][1] + nodes[b][0] * nodes[b][0];
                ka.total_cmp(&kb)
            })
            .unwrap();
        let mut boundary_edges = Vec::with_capacity(next.len());
        let mut cur = start;
        loop {
            let nxt = *next.get(&cur).ok_or(MeshError::BrokenBoundary)?;
            boundary_edges.push((cur, nxt));
            cur = nxt;
            if cur == start {
                break;
            }
            if boundary_edges.len() > next.len() {
                return Err(MeshError::BrokenBoundary);
            }
        }
        if boundary_edges.len() != next.len() {
            return Err(MeshError::BrokenBoundary);
        }

        let mut on_boundary = vec![false; nodes.len()];
        for &(p, q) in &boundary_edges {
            on_boundary[p] = true;
            on_boundary[q] = true;
        }
        let boundary_nodes: Vec<usize> = (0..nodes.len()).filter(|&i| on_boundary[i]).collect();
        let interior_nodes: Vec<usize> = (0..nodes.len()).filter(|&i| !on_boundary[i]).collect();
        let mut boundary_of = vec![None; nodes.len()];
        for (loc, &g) in boundary_nodes.iter().enumerate() {
            boundary_of[g] = Some(loc);
        }
        let mut interior_of = vec![None; nodes.len()];
        for (loc, &g) in interior_nodes.iter().enumerate() {
            interior_of[g] = Some(loc);
        }

        Ok(Self {
            nodes,
            triangles,
            boundary_edges,
            boundary_nodes,
            interior_nodes,
            boundary_of,
            interior_of,
            h,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn boundary_count(&self) -> usize {
        self.boundary_nodes.len()
    }

    pub fn interior_count(&self) -> usize {
        self.interior_nodes.len()
    }

    /// Sum of triangle areas.
    pub fn total_area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|&[a, b, c]| triangle_area(self.nodes[a], self.nodes[b], self.nodes[c]))
            .sum()
    }

    /// Evaluate a spatial function at every node.
    pub fn nodal_values(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&[x, y]| f(x, y)).collect()
    }

    /// Evaluate a spatial function at the boundary nodes, boundary-local layout.
    pub fn boundary_values(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.boundary_nodes
            .iter()
            .map(|&g| f(self.nodes[g][0], self.nodes[g][1]))
            .collect()
    }

    /// Restrict a full nodal vector to boundary-local layout.
    pub fn restrict_boundary(&self, full: &[f64]) -> Vec<f64> {
        self.boundary_nodes.iter().map(|&g| full[g]).collect()
    }

    /// Plain-text dump: header, coordinates, connectivity.
    pub fn dump(&self) -> String {
        let mut s = format!(
            "nodes {} triangles {}\n",
            self.nodes.len(),
            self.triangles.len()
        );
        for &[x, y] in &self.nodes {
            s.push_str(&format!("{x:.17e} {y:.17e}\n"));
        }
        for &[a, b, c] in &self.triangles {
            s.push_str(&format!("{a} {b} {c}\n"));
        }
        s
    }
}

/// Structured triangulation of the unit square with `n` subdivisions per
/// side: (n+1)^2 nodes ordered lexicographically by (y, x), each cell split
/// along the (lower-left, upper-right) diagonal.
pub fn unit_square_mesh(n: usize) -> Result<Mesh, MeshError> {
    if n == 0 {
        return Err(MeshError::DegenerateSubdivision);
    }
    let step = 1.0 / n as f64;
    let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            nodes.push([i as f64 * step, j as f64 * step]);
        }
    }
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    Mesh::from_cells(nodes, triangles)
}

/// Map from parent edges to the child midpoint nodes created by [`refine`].
pub struct RefinementMap {
    pub parent_nodes: usize,
    pub midpoint_of: HashMap<(usize, usize), usize>,
}

/// Uniform quadrisection: every triangle is split into four by its edge
/// midpoints. Parent nodes keep their indices and coordinates; midpoint
/// nodes are appended in order of first use.
pub fn refine(parent: &Mesh) -> (Mesh, RefinementMap) {
    let mut nodes = parent.nodes.clone();
    let mut midpoint_of: HashMap<(usize, usize), usize> = HashMap::new();
    let mut midpoint = |a: usize, b: usize, nodes: &mut Vec<[f64; 2]>| -> usize {
        *midpoint_of.entry(edge_key(a, b)).or_insert_with(|| {
            let pa = nodes[a];
            let pb = nodes[b];
            nodes.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
            nodes.len() - 1
        })
    };
    let mut triangles = Vec::with_capacity(4 * parent.triangles.len());
    for &[a, b, c] in &parent.triangles {
        let mab = midpoint(a, b, &mut nodes);
        let mbc = midpoint(b, c, &mut nodes);
        let mca = midpoint(c, a, &mut nodes);
        triangles.push([a, mab, mca]);
        triangles.push([mab, b, mbc]);
        triangles.push([mca, mbc, c]);
        triangles.push([mab, mbc, mca]);
    }
    let child = Mesh::from_cells(nodes, triangles).expect("refinement preserves validity");
    let map = RefinementMap {
        parent_nodes: parent.node_count(),
        midpoint_of,
    };
    (child, map)
}

/// Recover the parent-to-child relation of a `refine` pair, verifying that
/// `child` really is the refinement of `parent`.
pub fn refinement_map(parent: &Mesh, child: &Mesh) -> Result<RefinementMap, MeshError> {
    let (expected, map) = refine(parent);
    if expected.node_count() != child.node_count() || expected.triangles != child.triangles {
        return Err(MeshError::NotNested(
            "connectivity differs from refine(parent)".into(),
        ));
    }
    for (a, b) in expected.nodes.iter().zip(&child.nodes) {
        if (a[0] - b[0]).abs() > 1e-12 || (a[1] - b[1]).abs() > 1e-12 {
            return Err(MeshError::NotNested("node coordinates differ".into()));
        }
    }
    Ok(map)
}

/// Exact P1 interpolation of a parent nodal field onto the child of a
/// refinement pair: parent values persist, midpoints average the edge ends.
pub fn prolong(field: &[f64], parent: &Mesh, child: &Mesh) -> Result<Vec<f64>, MeshError> {
    if field.len() != parent.node_count() {
        return Err(MeshError::FieldLength {
            found: field.len(),
            expected: parent.node_count(),
        });
    }
    let map = refinement_map(parent, child)?;
    let mut out = vec![0.0; child.node_count()];
    out[..map.parent_nodes].copy_from_slice(field);
    for (&(a, b), &m) in &map.midpoint_of {
        out[m] = 0.5 * (field[a] + field[b]);
    }
    Ok(out)
}

/// Prolong a boundary-local field from parent to child boundary layout.
pub fn prolong_boundary(field: &[f64], parent: &Mesh, child: &Mesh) -> Result<Vec<f64>, MeshError> {
    if field.len() != parent.boundary_count() {
        return Err(MeshError::FieldLength {
            found: field.len(),
            expected: parent.boundary_count(),
        });
    }
    let map = refinement_map(parent, child)?;
    let mut out = vec![0.0; child.boundary_count()];
    for (loc, &g) in parent.boundary_nodes.iter().enumerate() {
        let cl = child.boundary_of[g]
            .ok_or_else(|| MeshError::NotNested("parent boundary node interior in child".into()))?;
        out[cl] = field[loc];
    }
    for &(p, q) in &parent.boundary_edges {
        let m = map.midpoint_of[&edge_key(p, q)];
        let cl = child.boundary_of[m]
            .ok_or_else(|| MeshError::NotNested("boundary midpoint interior in child".into()))?;
        let (lp, lq) = (
            parent.boundary_of[p].unwrap(),
            parent.boundary_of[q].unwrap(),
        );
        out[cl] = 0.5 * (field[lp] + field[lq]);
    }
    Ok(out)
}
