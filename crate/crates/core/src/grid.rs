//! The spherical spring-connected block ground model: grid construction,
//! solver parameters, and the map from design variables to stiffnesses and
//! node positions.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_8, PI};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Zero-length spring between two edge-adjacent blocks at a shared corner node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpring {
    pub node: usize,
    /// Lower-index block `(m,1)` and higher-index block `(m,2)`.
    pub blocks: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub node: usize,
    pub block: usize,
}

/// Uniform latitude/longitude discretization of the design surface.
///
/// Nodes are numbered row-major starting from `(Θ = π/2, Φ = −Φ_p)`,
/// increasing in `Φ` first, then decreasing in `Θ`. Blocks follow the same
/// order, so block 0 is the lower-left block and block `N_p − 1` the lower-right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphericalGrid {
    pub n_azimuth: usize,
    pub n_polar: usize,
    pub phi_p: f64,
    pub theta_t: f64,
    /// Initial `(Θ, Φ)` per node.
    pub nodes: Vec<(f64, f64)>,
    /// Corner nodes per block: `(i,j), (i+1,j), (i+1,j+1), (i,j+1)`.
    pub blocks: Vec<[usize; 4]>,
    pub springs: Vec<GridSpring>,
    pub anchor: Anchor,
    pub block_i: usize,
    pub block_a: usize,
    pub fixed_node: usize,
}

impl SphericalGrid {
    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_springs(&self) -> usize {
        self.springs.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Number of design variables: one per spring plus two per movable node.
    pub fn n_design(&self) -> usize {
        self.n_springs() + 2 * (self.n_nodes() - 1)
    }

    /// Index of the first shape variable of node `l`, or `None` for the fixed node.
    pub fn shape_var(&self, l: usize) -> Option<usize> {
        match l.cmp(&self.fixed_node) {
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Less => Some(self.n_springs() + 2 * l),
            std::cmp::Ordering::Greater => Some(self.n_springs() + 2 * (l - 1)),
        }
    }

    pub fn theta_range(&self) -> (f64, f64) {
        (FRAC_PI_2 - self.theta_t, FRAC_PI_2)
    }

    /// Moves the end-effector to another block.
    pub fn with_end_effector(mut self, block_a: usize) -> Result<Self> {
        if block_a >= self.n_blocks() || block_a == self.block_i {
            return Err(Error::InvalidGrid(format!(
                "end-effector block {block_a} must differ from block {} and be < {}",
                self.block_i,
                self.n_blocks()
            )));
        }
        self.block_a = block_a;
        Ok(self)
    }
}

pub fn build_grid(n_azimuth: usize, n_polar: usize, phi_p: f64, theta_t: f64) -> Result<SphericalGrid> {
    if n_azimuth == 0 || n_polar == 0 {
        return Err(Error::InvalidGrid(format!(
            "block counts must be positive, got {n_azimuth}×{n_polar}"
        )));
    }
    if !(phi_p > 0.0 && phi_p <= PI) {
        return Err(Error::InvalidGrid(format!("Φ_p = {phi_p} outside (0, π]")));
    }
    if !(theta_t > 0.0 && theta_t < FRAC_PI_2) {
        return Err(Error::InvalidGrid(format!("Θ_T = {theta_t} outside (0, π/2)")));
    }

    let row = n_azimuth + 1;
    let node = |i: usize, j: usize| j * row + i;

    let mut nodes = Vec::with_capacity(row * (n_polar + 1));
    for j in 0..=n_polar {
        for i in 0..=n_azimuth {
            let theta = FRAC_PI_2 - j as f64 * theta_t / n_polar as f64;
            let phi = -phi_p + i as f64 * phi_p / n_azimuth as f64;
            nodes.push((theta, phi));
        }
    }

    let mut blocks = Vec::with_capacity(n_azimuth * n_polar);
    for j in 0..n_polar {
        for i in 0..n_azimuth {
            blocks.push([node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)]);
        }
    }

    let mut springs = Vec::new();
    for j in 0..n_polar {
        for i in 0..n_azimuth {
            let b = j * n_azimuth + i;
            if i + 1 < n_azimuth {
                for n in [node(i + 1, j), node(i + 1, j + 1)] {
                    springs.push(GridSpring { node: n, blocks: (b, b + 1) });
                }
            }
            if j + 1 < n_polar {
                for n in [node(i, j + 1), node(i + 1, j + 1)] {
                    springs.push(GridSpring { node: n, blocks: (b, b + n_azimuth) });
                }
            }
        }
    }

    let block_a = if n_azimuth > 1 {
        n_azimuth - 1
    } else if n_polar > 1 {
        n_azimuth
    } else {
        0
    };

    Ok(SphericalGrid {
        n_azimuth,
        n_polar,
        phi_p,
        theta_t,
        nodes,
        blocks,
        springs,
        anchor: Anchor { node: 0, block: 0 },
        block_i: 0,
        block_a,
        fixed_node: 0,
    })
}

/// Numerical constants of the synthesis problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverParams {
    pub p: f64,
    pub k_max: f64,
    pub xi_min: f64,
    pub f0: f64,
    pub eps: f64,
    pub theta_max: f64,
    pub theta_min: f64,
    pub phi_max: f64,
    pub phi_min: f64,
    pub delta_theta: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            p: 3.0,
            k_max: 1e4,
            xi_min: 1e-3,
            f0: 1.0,
            eps: 2e-4,
            theta_max: FRAC_PI_8,
            theta_min: -FRAC_PI_8,
            phi_max: FRAC_PI_8,
            phi_min: -FRAC_PI_8,
            delta_theta: 1e-3,
        }
    }
}

impl SolverParams {
    /// Scales all four node-variation bounds by `s`.
    pub fn with_shape_scale(mut self, s: f64) -> Self {
        self.theta_max *= s;
        self.theta_min *= s;
        self.phi_max *= s;
        self.phi_min *= s;
        self
    }
}

pub fn stiffness(xi: f64, params: &SolverParams) -> Result<f64> {
    if !(params.xi_min..=1.0).contains(&xi) {
        return Err(Error::OutOfBounds(format!(
            "ξ^K = {xi} outside [{}, 1]",
            params.xi_min
        )));
    }
    Ok(stiffness_unchecked(xi, params))
}

pub(crate) fn stiffness_unchecked(xi: f64, params: &SolverParams) -> f64 {
    params.k_max * xi.powf(params.p)
}

pub(crate) fn stiffness_derivative(xi: f64, params: &SolverParams) -> f64 {
    params.k_max * params.p * xi.powf(params.p - 1.0)
}

/// Flattened design variables: `N_s` stiffness variables followed by a
/// `(ξ^Θ, ξ^Φ)` pair for each node other than the fixed node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignVector {
    pub xi: Vec<f64>,
    pub n_springs: usize,
}

impl DesignVector {
    pub fn uniform(grid: &SphericalGrid, value: f64) -> Self {
        Self { xi: vec![value; grid.n_design()], n_springs: grid.n_springs() }
    }

    pub fn from_vec(grid: &SphericalGrid, xi: Vec<f64>) -> Result<Self> {
        if xi.len() != grid.n_design() {
            return Err(Error::OutOfBounds(format!(
                "design vector has {} entries, grid needs {}",
                xi.len(),
                grid.n_design()
            )));
        }
        Ok(Self { xi, n_springs: grid.n_springs() })
    }

    pub fn xi_k(&self) -> &[f64] {
        &self.xi[..self.n_springs]
    }

    pub fn xi_shape(&self) -> &[f64] {
        &self.xi[self.n_springs..]
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    pub fn lower_bounds(&self, params: &SolverParams) -> Vec<f64> {
        (0..self.len())
            .map(|i| if i < self.n_springs { params.xi_min } else { 0.0 })
            .collect()
    }

    pub fn check_bounds(&self, params: &SolverParams) -> Result<()> {
        let lo = self.lower_bounds(params);
        for (i, (&x, &l)) in self.xi.iter().zip(&lo).enumerate() {
            if !(l..=1.0).contains(&x) {
                return Err(Error::OutOfBounds(format!("ξ[{i}] = {x} outside [{l}, 1]")));
            }
        }
        Ok(())
    }
}

/// Unit position of a node and its derivatives with respect to the node's two
/// shape variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeGeometry {
    pub position: Vector3<f64>,
    /// Index of the `ξ^Θ` variable; `ξ^Φ` follows it. `None` for the fixed node.
    pub var: Option<usize>,
    pub d_position: [Vector3<f64>; 2],
}

pub fn spherical_point(theta: f64, phi: f64) -> Vector3<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vector3::new(st * cp, st * sp, ct)
}

pub fn node_geometry(l: usize, design: &DesignVector, grid: &SphericalGrid, params: &SolverParams) -> NodeGeometry {
    let (theta0, phi0) = grid.nodes[l];
    let Some(var) = grid.shape_var(l) else {
        return NodeGeometry {
            position: spherical_point(theta0, phi0),
            var: None,
            d_position: [Vector3::zeros(); 2],
        };
    };

    let (xt, xp) = (design.xi[var], design.xi[var + 1]);
    let theta_raw = theta0 + params.theta_max * xt + params.theta_min * (1.0 - xt);
    let phi = phi0 + params.phi_max * xp + params.phi_min * (1.0 - xp);

    let (lo, hi) = grid.theta_range();
    let theta = theta_raw.clamp(lo, hi);
    let dtheta = if theta_raw < lo || theta_raw > hi { 0.0 } else { params.theta_max - params.theta_min };
    let dphi = params.phi_max - params.phi_min;

    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let ds_dtheta = Vector3::new(ct * cp, ct * sp, -st);
    let ds_dphi = Vector3::new(-st * sp, st * cp, 0.0);

    NodeGeometry {
        position: Vector3::new(st * cp, st * sp, ct),
        var: Some(var),
        d_position: [ds_dtheta * dtheta, ds_dphi * dphi],
    }
}

pub fn node_position(l: usize, design: &DesignVector, grid: &SphericalGrid, params: &SolverParams) -> Vector3<f64> {
    node_geometry(l, design, grid, params).position
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_4;

    fn standard_grid() -> SphericalGrid {
        build_grid(4, 2, FRAC_PI_2, FRAC_PI_4).unwrap()
    }

    #[test]
    fn four_by_two_counts() {
        let g = standard_grid();
        assert_eq!((g.n_blocks(), g.n_springs(), g.n_nodes()), (8, 20, 15));
        assert_eq!(g.n_design(), 48);
        assert_eq!((g.block_i, g.block_a), (0, 3));
        assert_eq!(g.fixed_node, g.anchor.node);
    }

    #[test]
    fn single_and_double_block_counts() {
        let g = build_grid(1, 1, FRAC_PI_2, FRAC_PI_4).unwrap();
        assert_eq!((g.n_blocks(), g.n_springs(), g.n_nodes()), (1, 0, 4));
        let g = build_grid(2, 1, FRAC_PI_2, FRAC_PI_4).unwrap();
        assert_eq!((g.n_blocks(), g.n_springs(), g.n_nodes()), (2, 2, 6));
        assert_eq!(g.springs[0], GridSpring { node: 1, blocks: (0, 1) });
        assert_eq!(g.springs[1], GridSpring { node: 4, blocks: (0, 1) });
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(build_grid(0, 2, FRAC_PI_2, FRAC_PI_4).is_err());
        assert!(build_grid(2, 2, 0.0, FRAC_PI_4).is_err());
        assert!(build_grid(2, 2, 4.0, FRAC_PI_4).is_err());
        assert!(build_grid(2, 2, FRAC_PI_2, FRAC_PI_2).is_err());
    }

    #[test]
    fn springs_sit_on_shared_corners() {
        let g = standard_grid();
        for s in &g.springs {
            assert!(s.blocks.0 < s.blocks.1);
            assert!(g.blocks[s.blocks.0].contains(&s.node));
            assert!(g.blocks[s.blocks.1].contains(&s.node));
        }
    }

    #[test]
    fn anchor_is_lower_left_of_block_zero() {
        let g = standard_grid();
        assert_eq!(g.blocks[0][0], g.anchor.node);
        let s = spherical_point(g.nodes[0].0, g.nodes[0].1);
        assert_relative_eq!(s, Vector3::new(0.0, -1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn stiffness_values() {
        let p = SolverParams::default();
        assert_eq!(stiffness(1.0, &p).unwrap(), 1e4);
        assert_relative_eq!(stiffness(0.5, &p).unwrap(), 1.25e3, max_relative = 1e-15);
        assert_relative_eq!(stiffness(1e-3, &p).unwrap(), 1e-5, max_relative = 1e-12);
        assert!(stiffness(1.5, &p).is_err());
        assert!(stiffness(0.0, &p).is_err());
    }

    #[test]
    fn midpoint_design_keeps_nodes() {
        let g = standard_grid();
        let p = SolverParams::default();
        let d = DesignVector::uniform(&g, 0.5);
        for l in 0..g.n_nodes() {
            let (t, f) = g.nodes[l];
            assert_relative_eq!(node_position(l, &d, &g, &p), spherical_point(t, f), epsilon = 1e-15);
        }
    }

    #[test]
    fn equator_point() {
        assert_relative_eq!(spherical_point(FRAC_PI_2, 0.0), Vector3::x(), epsilon = 1e-15);
    }

    #[test]
    fn fixed_node_ignores_design() {
        let g = standard_grid();
        let p = SolverParams::default();
        let d = DesignVector::uniform(&g, 0.9);
        let geo = node_geometry(0, &d, &g, &p);
        assert_eq!(geo.var, None);
        assert_relative_eq!(geo.position, Vector3::new(0.0, -1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn altitude_is_clamped() {
        let g = standard_grid();
        let p = SolverParams::default();
        let mut d = DesignVector::uniform(&g, 0.5);
        let v = g.shape_var(1).unwrap();
        d.xi[v] = 1.0;
        let geo = node_geometry(1, &d, &g, &p);
        assert_relative_eq!(geo.position[2], 0.0, epsilon = 1e-15);
        assert_eq!(geo.d_position[0], Vector3::zeros());
    }

    #[test]
    fn node_derivatives_match_finite_differences() {
        let g = standard_grid();
        let p = SolverParams::default();
        let mut d = DesignVector::uniform(&g, 0.5);
        for (i, x) in d.xi.iter_mut().enumerate() {
            *x = 0.3 + 0.4 * ((i * 7 % 11) as f64 / 11.0);
        }
        let h = 1e-7;
        for l in 1..g.n_nodes() {
            let geo = node_geometry(l, &d, &g, &p);
            let v = geo.var.unwrap();
            for c in 0..2 {
                let mut dp = d.clone();
                let mut dm = d.clone();
                dp.xi[v + c] += h;
                dm.xi[v + c] -= h;
                let fd = (node_position(l, &dp, &g, &p) - node_position(l, &dm, &g, &p)) / (2.0 * h);
                assert_relative_eq!(geo.d_position[c], fd, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn shape_variables_skip_fixed_node() {
        let g = standard_grid();
        assert_eq!(g.shape_var(0), None);
        assert_eq!(g.shape_var(1), Some(20));
        assert_eq!(g.shape_var(14), Some(46));
    }
}
