//! CSV and JSON serialization: space-time fields, boundary fields, optimal
//! control results, and study reports.
//!
//! Field CSVs carry one row per (slab, node) with the slab end time, the node
//! id and the coefficient, printed with full round-trip precision so results
//! re-verify bit-exactly after a read-back. Identical inputs produce
//! byte-identical files.

use crate::assembly::FemOperators;
use crate::control::OptimalityResult;
use crate::mesh::Mesh;
use crate::parabolic::{BoundaryField, SpaceTimeField};
use crate::timegrid::TimeGrid;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed field csv at line {0}: {1}")]
    Malformed(usize, String),
    #[error("field does not match discretization: {0}")]
    Mismatch(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Version string stamped into JSON summaries.
pub fn version_string() -> String {
    format!("heatbc-v{}", env!("CARGO_PKG_VERSION"))
}

pub fn space_time_csv(field: &SpaceTimeField, grid: &TimeGrid) -> String {
    let mut out = String::from("t,node,value\n");
    for m in 0..field.slabs() {
        let t = grid.nodes()[m + 1];
        for (i, v) in field.slab(m).iter().enumerate() {
            let _ = writeln!(out, "{t:.17e},{i},{v:.17e}");
        }
    }
    out
}

/// Boundary fields use global node ids in the CSV so rows locate points on
/// the mesh without the boundary-local convention.
pub fn boundary_csv(field: &BoundaryField, grid: &TimeGrid, mesh: &Mesh) -> String {
    let mut out = String::from("t,node,value\n");
    for m in 0..field.slabs() {
        let t = grid.nodes()[m + 1];
        for (loc, v) in field.slab(m).iter().enumerate() {
            let node = mesh.boundary_nodes[loc];
            let _ = writeln!(out, "{t:.17e},{node},{v:.17e}");
        }
    }
    out
}

pub fn parse_space_time_csv(
    text: &str,
    grid: &TimeGrid,
    mesh: &Mesh,
) -> Result<SpaceTimeField, IoError> {
    let mut field = SpaceTimeField::zeros(grid, mesh);
    let n = mesh.node_count();
    let mut count = 0usize;
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let t: f64 = next_field(&mut parts, lineno)?;
        let node: usize = next_field(&mut parts, lineno)?;
        let value: f64 = next_field(&mut parts, lineno)?;
        let m = slab_of(grid, t, lineno)?;
        if node >= n {
            return Err(IoError::Mismatch(format!("node {node} out of range {n}")));
        }
        field.slab_mut(m)[node] = value;
        count += 1;
    }
    if count != grid.slabs() * n {
        return Err(IoError::Mismatch(format!(
            "expected {} rows, found {count}",
            grid.slabs() * n
        )));
    }
    Ok(field)
}

pub fn parse_boundary_csv(
    text: &str,
    grid: &TimeGrid,
    mesh: &Mesh,
) -> Result<BoundaryField, IoError> {
    let mut field = BoundaryField::zeros(grid, mesh);
    let mut count = 0usize;
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let t: f64 = next_field(&mut parts, lineno)?;
        let node: usize = next_field(&mut parts, lineno)?;
        let value: f64 = next_field(&mut parts, lineno)?;
        let m = slab_of(grid, t, lineno)?;
        let loc = mesh
            .boundary_of
            .get(node)
            .copied()
            .flatten()
            .ok_or_else(|| IoError::Mismatch(format!("node {node} is not a boundary node")))?;
        field.slab_mut(m)[loc] = value;
        count += 1;
    }
    if count != grid.slabs() * mesh.boundary_count() {
        return Err(IoError::Mismatch(format!(
            "expected {} rows, found {count}",
            grid.slabs() * mesh.boundary_count()
        )));
    }
    Ok(field)
}

fn next_field<T: std::str::FromStr>(
    parts: &mut std::str::Split<'_, char>,
    lineno: usize,
) -> Result<T, IoError> {
    parts
        .next()
        .ok_or_else(|| IoError::Malformed(lineno + 1, "missing column".into()))?
        .trim()
        .parse()
        .map_err(|_| IoError::Malformed(lineno + 1, "unparseable column".into()))
}

fn slab_of(grid: &TimeGrid, t: f64, lineno: usize) -> Result<usize, IoError> {
    let nodes = grid.nodes();
    for m in 1..nodes.len() {
        if (nodes[m] - t).abs() <= 1e-12 * nodes[m].abs().max(1.0) {
            return Ok(m - 1);
        }
    }
    Err(IoError::Malformed(
        lineno + 1,
        format!("time {t} not a grid node"),
    ))
}

/// Write the control/state/adjoint CSVs plus a JSON summary of an optimal
/// control solve into `dir`.
pub fn write_result(
    dir: &Path,
    result: &OptimalityResult,
    mesh: &Mesh,
    grid: &TimeGrid,
    config_echo: Option<&serde_json::Value>,
) -> Result<(), IoError> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("control.csv"),
        boundary_csv(&result.control, grid, mesh),
    )?;
    fs::write(dir.join("state.csv"), space_time_csv(&result.state, grid))?;
    fs::write(
        dir.join("adjoint.csv"),
        space_time_csv(&result.adjoint, grid),
    )?;
    let mut summary = serde_json::json!({
        "cost": result.cost,
        "residual": result.residual,
        "iterations": result.iterations,
        "tolerance": result.tolerance,
        "version": version_string(),
    });
    if let Some(echo) = config_echo {
        summary["config"] = echo.clone();
    }
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(())
}

/// Post-hoc verification of a serialized control solve: read the CSVs back,
/// rebuild the normal derivative from the deserialized state and adjoint,
/// and return the projected-optimality residual of the deserialized control.
pub fn reverify_fixed_point(
    dir: &Path,
    mesh: &Mesh,
    grid: &TimeGrid,
    ops: &FemOperators,
    target: &SpaceTimeField,
    alpha: f64,
    bounds: &crate::control::ControlBounds,
) -> Result<f64, IoError> {
    let control = parse_boundary_csv(&fs::read_to_string(dir.join("control.csv"))?, grid, mesh)?;
    let state = parse_space_time_csv(&fs::read_to_string(dir.join("state.csv"))?, grid, mesh)?;
    let adjoint = parse_space_time_csv(&fs::read_to_string(dir.join("adjoint.csv"))?, grid, mesh)?;
    let misfit = state.sub(target);
    let d = crate::parabolic::normal_derivative(&adjoint, &misfit, mesh, grid, ops)
        .map_err(|e| IoError::Mismatch(e.to_string()))?;
    let mut fp = d;
    fp.scale(1.0 / alpha);
    let fp = crate::control::project_box(&fp, bounds);
    Ok(crate::parabolic::boundary_norm(
        &control.sub(&fp),
        ops,
        grid,
    ))
}
