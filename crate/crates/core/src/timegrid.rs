//! Time partitions for the DG(0) discretization: slab-average projection,
//! end-point interpolations, step-size compliance flags, and weighted jump
//! energies.
//!
//! The solvers run on any positive partition; the convergence theory assumes
//! quasi-uniformity and non-increasing steps, so grids carry compliance flags
//! and a strict validation mode for studies.

use crate::sparse::SparseSym;
use thiserror::Error;

/// Gauss-Legendre points on (-1, 1), weight 1 each after scaling.
const GAUSS2: [f64; 2] = [-0.5773502691896257, 0.5773502691896257];

#[derive(Debug, Error)]
pub enum GridError {
    #[error("time nodes are not strictly increasing at index {0}")]
    NonMonotone(usize),
    #[error("time step increases at slab {0}: {1:e} > previous step {2:e}")]
    IncreasingStep(usize, f64, f64),
    #[error("grid needs t_0 = 0 and at least one slab")]
    Empty,
}

/// Partition 0 = t_0 < ... < t_M = T.
#[derive(Debug, Clone)]
pub struct TimeGrid {
    t: Vec<f64>,
    k: Vec<f64>,
    k_max: f64,
    k_min: f64,
    non_increasing: bool,
}

impl TimeGrid {
    /// Uniform partition of (0, T] into `m` slabs.
    pub fn uniform(m: usize, t_final: f64) -> Self {
        assert!(m >= 1, "need at least one slab");
        assert!(t_final > 0.0, "horizon must be positive");
        let t: Vec<f64> = (0..=m).map(|i| t_final * i as f64 / m as f64).collect();
        Self::from_nodes_unchecked(t)
    }

    /// Build from explicit nodes, checking monotonicity. In strict mode a
    /// grid with an increasing step is rejected rather than flagged.
    pub fn from_nodes(t: &[f64], strict: bool) -> Result<Self, GridError> {
        if t.len() < 2 || t[0] != 0.0 {
            return Err(GridError::Empty);
        }
        for m in 1..t.len() {
            if t[m] <= t[m - 1] {
                return Err(GridError::NonMonotone(m));
            }
        }
        let grid = Self::from_nodes_unchecked(t.to_vec());
        if strict && !grid.non_increasing {
            let m = (2..t.len())
                .find(|&m| grid.k[m - 1] > grid.k[m - 2])
                .unwrap();
            return Err(GridError::IncreasingStep(m, grid.k[m - 1], grid.k[m - 2]));
        }
        Ok(grid)
    }

    fn from_nodes_unchecked(t: Vec<f64>) -> Self {
        let k: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        let k_max = k.iter().cloned().fold(0.0, f64::max);
        let k_min = k.iter().cloned().fold(f64::INFINITY, f64::min);
        let non_increasing = k
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-14 * w[0].abs().max(1.0));
        Self {
            t,
            k,
            k_max,
            k_min,
            non_increasing,
        }
    }

    pub fn slabs(&self) -> usize {
        self.k.len()
    }

    pub fn horizon(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.t
    }

    pub fn steps(&self) -> &[f64] {
        &self.k
    }

    /// Step of slab `m`, 1-based like the slab numbering t_{m-1} -> t_m.
    pub fn step(&self, m: usize) -> f64 {
        self.k[m - 1]
    }

    pub fn k_max(&self) -> f64 {
        self.k_max
    }

    /// Quasi-uniformity ratio k_max / k_min.
    pub fn uniformity_ratio(&self) -> f64 {
        self.k_max / self.k_min
    }

    /// Whether the steps are non-increasing along the horizon.
    pub fn non_increasing(&self) -> bool {
        self.non_increasing
    }

    /// 2-point Gauss nodes and weights on slab `m` (1-based).
    pub fn slab_gauss(&self, m: usize) -> [(f64, f64); 2] {
        let (a, b) = (self.t[m - 1], self.t[m]);
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        [
            (mid + half * GAUSS2[0], half),
            (mid + half * GAUSS2[1], half),
        ]
    }

    /// Slab averages of a scalar function of time, one value per slab,
    /// by 2-point Gauss quadrature (exact through cubics).
    pub fn project_slab_avg(&self, w: impl Fn(f64) -> f64) -> SlabFunction<f64> {
        let values = (1..=self.slabs())
            .map(|m| {
                let k = self.step(m);
                self.slab_gauss(m)
                    .iter()
                    .map(|&(t, wt)| wt * w(t))
                    .sum::<f64>()
                    / k
            })
            .collect();
        SlabFunction { values }
    }

    /// Slab averages of a vector-valued function of time (nodal or boundary
    /// payloads), same quadrature as the scalar version.
    pub fn project_slab_avg_vec(&self, w: impl Fn(f64) -> Vec<f64>) -> SlabFunction<Vec<f64>> {
        let values = (1..=self.slabs())
            .map(|m| {
                let k = self.step(m);
                let gauss = self.slab_gauss(m);
                let mut acc = w(gauss[0].0);
                acc.iter_mut().for_each(|v| *v *= gauss[0].1 / k);
                let second = w(gauss[1].0);
                for (a, b) in acc.iter_mut().zip(&second) {
                    *a += gauss[1].1 / k * b;
                }
                acc
            })
            .collect();
        SlabFunction { values }
    }

    /// Right end-point interpolation: slab m takes w(t_m).
    pub fn interp_right(&self, w: impl Fn(f64) -> f64) -> SlabFunction<f64> {
        SlabFunction {
            values: (1..=self.slabs()).map(|m| w(self.t[m])).collect(),
        }
    }

    /// Left end-point interpolation: slab m takes w(t_{m-1}).
    pub fn interp_left(&self, w: impl Fn(f64) -> f64) -> SlabFunction<f64> {
        SlabFunction {
            values: (1..=self.slabs()).map(|m| w(self.t[m - 1])).collect(),
        }
    }

    /// L2(0,T) norm of a piecewise-constant-in-time scalar function.
    pub fn slab_l2(&self, f: &SlabFunction<f64>) -> f64 {
        assert_eq!(f.values.len(), self.slabs());
        self.k
            .iter()
            .zip(&f.values)
            .map(|(&k, &v)| k * v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Serialize as a JSON array of the time nodes.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.t).expect("nodes serialize")
    }

    /// Parse a grid from a JSON array of time nodes.
    pub fn from_json(text: &str, strict: bool) -> Result<Self, GridError> {
        let nodes: Vec<f64> = serde_json::from_str(text).map_err(|_| GridError::Empty)?;
        Self::from_nodes(&nodes, strict)
    }
}

/// One payload per slab of an associated grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SlabFunction<T> {
    pub values: Vec<T>,
}

impl<T> SlabFunction<T> {
    pub fn new(grid: &TimeGrid, values: Vec<T>) -> Self {
        assert_eq!(
            values.len(),
            grid.slabs(),
            "payload count must equal slab count"
        );
        Self { values }
    }
}

/// Weighted temporal jump energy sum_m k_m^(-(2s-1)) of the squared mass
/// norms of the jumps of a piecewise-constant vector payload, with the
/// leading jump formed against `initial`.
///
/// The exponent s in [1/2, 1] matches the regularity scale of the temporal
/// error analysis; s = 1/2 gives the plain sum of squared jumps.
pub fn jump_energy(
    grid: &TimeGrid,
    slabs: &[&[f64]],
    initial: &[f64],
    s: f64,
    mass: &SparseSym,
) -> f64 {
    assert_eq!(slabs.len(), grid.slabs());
    let mut total = 0.0;
    let mut prev = initial;
    for (m, &cur) in slabs.iter().enumerate() {
        let jump: Vec<f64> = cur.iter().zip(prev).map(|(a, b)| a - b).collect();
        let weight = grid.k[m].powf(-(2.0 * s - 1.0));
        total += weight * mass.quadratic_form(&jump);
        prev = cur;
    }
    total
}
