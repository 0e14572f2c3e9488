//! Strain energy, internal forces and Jacobian of a network of rigid bodies
//! rotating about a common center and joined by zero-length springs, plus a
//! damped Newton solver for static equilibrium.
//!
//! Two kinds of network are built: the block ground model (one body per block,
//! one spring per grid spring plus the anchor) and an extracted mechanism (one
//! body per rigid link, one stiff spring per revolute joint). The ground body is
//! implicit and always sits at the identity.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x6, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{node_geometry, stiffness_derivative, stiffness_unchecked, DesignVector, SolverParams, SphericalGrid};
use crate::response::{load_response, LoadResponse};
use crate::rotation::{Angles, RotationDerivs};

/// Tait-Bryan triples for every (non-ground) body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub q: Vec<Angles>,
}

impl SystemState {
    pub fn zeros(n_bodies: usize) -> Self {
        Self { q: vec![Vector3::zeros(); n_bodies] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpring {
    /// Body playing the `(m,1)` role; `n_bodies` denotes ground.
    pub a: usize,
    /// Body playing the `(m,2)` role.
    pub b: usize,
    pub k: f64,
    pub s: Vector3<f64>,
    /// Stiffness design variable and `dk/dξ`.
    pub k_var: Option<(usize, f64)>,
    /// First shape design variable of the node and `ds/dξ` for it and the next one.
    pub s_var: Option<(usize, [Vector3<f64>; 2])>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpringNetwork {
    pub n_bodies: usize,
    /// Body carrying the actuator and the resistive load.
    pub input: usize,
    /// Body whose orientation is prescribed.
    pub output: usize,
    pub springs: Vec<NetworkSpring>,
    pub n_design: usize,
    pub k_max: f64,
}

/// External generalized load on the input body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Load {
    None,
    /// Constant generalized force.
    Fixed(Vector3<f64>),
    /// Moment `f0 (w × w_prev)` with `w = A_I e_z`.
    Resistive { w_prev: Vector3<f64>, f0: f64 },
}

impl SpringNetwork {
    /// Block ground model for a design: grid springs followed by the anchor spring.
    pub fn from_grid(grid: &SphericalGrid, design: &DesignVector, params: &SolverParams) -> Self {
        let mut springs = Vec::with_capacity(grid.n_springs() + 1);
        for (m, gs) in grid.springs.iter().enumerate() {
            let xi = design.xi[m];
            let geo = node_geometry(gs.node, design, grid, params);
            springs.push(NetworkSpring {
                a: gs.blocks.0,
                b: gs.blocks.1,
                k: stiffness_unchecked(xi, params),
                s: geo.position,
                k_var: Some((m, stiffness_derivative(xi, params))),
                s_var: geo.var.map(|v| (v, geo.d_position)),
            });
        }
        let geo = node_geometry(grid.anchor.node, design, grid, params);
        springs.push(NetworkSpring {
            a: grid.n_blocks(),
            b: grid.anchor.block,
            k: params.k_max,
            s: geo.position,
            k_var: None,
            s_var: geo.var.map(|v| (v, geo.d_position)),
        });
        Self {
            n_bodies: grid.n_blocks(),
            input: grid.block_i,
            output: grid.block_a,
            springs,
            n_design: design.len(),
            k_max: params.k_max,
        }
    }

    pub fn ground(&self) -> usize {
        self.n_bodies
    }

    pub fn n_unknowns(&self) -> usize {
        3 * (self.n_bodies - 1)
    }

    /// Offset of a body's triple in the unknown vector.
    pub fn slot(&self, body: usize) -> Option<usize> {
        if body >= self.n_bodies || body == self.output {
            None
        } else if body < self.output {
            Some(3 * body)
        } else {
            Some(3 * (body - 1))
        }
    }

    pub fn unknowns(&self, state: &SystemState) -> DVector<f64> {
        let mut v = DVector::zeros(self.n_unknowns());
        for (n, q) in state.q.iter().enumerate() {
            if let Some(o) = self.slot(n) {
                v.fixed_rows_mut::<3>(o).copy_from(q);
            }
        }
        v
    }

    pub fn state_from(&self, v: &DVector<f64>, q_out: &Angles) -> SystemState {
        let q = (0..self.n_bodies)
            .map(|n| match self.slot(n) {
                Some(o) => v.fixed_rows::<3>(o).into_owned(),
                None => *q_out,
            })
            .collect();
        SystemState { q }
    }

    fn derivs(&self, state: &SystemState) -> Vec<RotationDerivs> {
        let mut d: Vec<RotationDerivs> = state.q.iter().map(RotationDerivs::new).collect();
        d.push(RotationDerivs::fixed_identity());
        d
    }

    fn displacement(&self, sp: &NetworkSpring, rd: &[RotationDerivs]) -> Vector3<f64> {
        (rd[sp.b].a - rd[sp.a].a) * sp.s
    }

    /// `du/dq` for `(q_a, q_b)`.
    fn local_jacobian(sp: &NetworkSpring, rd: &[RotationDerivs]) -> Matrix3x6<f64> {
        let mut g = Matrix3x6::zeros();
        for i in 0..3 {
            g.set_column(i, &(-rd[sp.a].d[i] * sp.s));
            g.set_column(3 + i, &(rd[sp.b].d[i] * sp.s));
        }
        g
    }

    pub fn energy(&self, state: &SystemState) -> f64 {
        let rd = self.derivs(state);
        self.springs
            .iter()
            .map(|sp| 0.5 * sp.k * self.displacement(sp, &rd).norm_squared())
            .sum()
    }

    /// Per-spring energies in network order.
    pub fn spring_energies(&self, state: &SystemState) -> Vec<f64> {
        let rd = self.derivs(state);
        self.springs
            .iter()
            .map(|sp| 0.5 * sp.k * self.displacement(sp, &rd).norm_squared())
            .collect()
    }

    /// `∂U/∂v`.
    pub fn internal_force(&self, state: &SystemState) -> DVector<f64> {
        let rd = self.derivs(state);
        let mut f = DVector::zeros(self.n_unknowns());
        for sp in &self.springs {
            let u = self.displacement(sp, &rd);
            let g = Self::local_jacobian(sp, &rd);
            let local = g.transpose() * u * sp.k;
            for (side, body) in [sp.a, sp.b].into_iter().enumerate() {
                if let Some(o) = self.slot(body) {
                    for i in 0..3 {
                        f[o + i] += local[3 * side + i];
                    }
                }
            }
        }
        f
    }

    /// `∂²U/∂v²`.
    pub fn jacobian(&self, state: &SystemState) -> DMatrix<f64> {
        let rd = self.derivs(state);
        let n = self.n_unknowns();
        let mut j = DMatrix::zeros(n, n);
        for sp in &self.springs {
            let u = self.displacement(sp, &rd);
            let g = Self::local_jacobian(sp, &rd);
            let mut h = g.transpose() * g;
            for r in 0..3 {
                for c in 0..3 {
                    h[(r, c)] -= (rd[sp.a].dd[r][c] * sp.s).dot(&u);
                    h[(3 + r, 3 + c)] += (rd[sp.b].dd[r][c] * sp.s).dot(&u);
                }
            }
            h *= sp.k;
            let bodies = [sp.a, sp.b];
            for (si, &bi) in bodies.iter().enumerate() {
                let Some(oi) = self.slot(bi) else { continue };
                for (sj, &bj) in bodies.iter().enumerate() {
                    let Some(oj) = self.slot(bj) else { continue };
                    for r in 0..3 {
                        for c in 0..3 {
                            j[(oi + r, oj + c)] += h[(3 * si + r, 3 * sj + c)];
                        }
                    }
                }
            }
        }
        j
    }

    /// Explicit `∂U/∂ξ` at fixed state.
    pub fn energy_design_gradient(&self, state: &SystemState) -> DVector<f64> {
        let rd = self.derivs(state);
        let mut g = DVector::zeros(self.n_design);
        for sp in &self.springs {
            let e = rd[sp.b].a - rd[sp.a].a;
            let u = e * sp.s;
            if let Some((m, dk)) = sp.k_var {
                g[m] += 0.5 * dk * u.norm_squared();
            }
            if let Some((v, ds)) = sp.s_var {
                let du_ds = e.transpose() * u * sp.k;
                g[v] += du_ds.dot(&ds[0]);
                g[v + 1] += du_ds.dot(&ds[1]);
            }
        }
        g
    }

    /// Explicit `∂F_int/∂ξ` at fixed state, one column per design variable.
    pub fn internal_force_design(&self, state: &SystemState) -> DMatrix<f64> {
        let rd = self.derivs(state);
        let mut m = DMatrix::zeros(self.n_unknowns(), self.n_design);
        for sp in &self.springs {
            let e = rd[sp.b].a - rd[sp.a].a;
            let u = e * sp.s;
            let g = Self::local_jacobian(sp, &rd);
            for (side, body) in [sp.a, sp.b].into_iter().enumerate() {
                let Some(o) = self.slot(body) else { continue };
                let sign = if side == 0 { -1.0 } else { 1.0 };
                for i in 0..3 {
                    let c = 3 * side + i;
                    if let Some((var, dk)) = sp.k_var {
                        m[(o + i, var)] += dk * g.column(c).dot(&u);
                    }
                    if let Some((var, ds)) = sp.s_var {
                        let p = rd[body].d[i] * sign;
                        let dgs: Vector3<f64> = (p.transpose() * u + e.transpose() * g.column(c)) * sp.k;
                        m[(o + i, var)] += dgs.dot(&ds[0]);
                        m[(o + i, var + 1)] += dgs.dot(&ds[1]);
                    }
                }
            }
        }
        m
    }

    fn load_at(&self, state: &SystemState, load: &Load) -> Option<LoadResponse> {
        self.slot(self.input)?;
        Some(load_response(load, &state.q[self.input]))
    }

    /// Equilibrium residual `F_int − F_ext`.
    pub fn residual(&self, state: &SystemState, load: &Load) -> DVector<f64> {
        let mut r = self.internal_force(state);
        if let Some(lr) = self.load_at(state, load) {
            let o = self.slot(self.input).unwrap();
            for i in 0..3 {
                r[o + i] -= lr.force[i];
            }
        }
        r
    }

    /// Total potential `U + V_ext` whose gradient is the residual. The
    /// resistive moment derives from `V = −f0 w·w_prev`.
    pub fn potential(&self, state: &SystemState, load: &Load) -> f64 {
        let u = self.energy(state);
        if self.slot(self.input).is_none() {
            return u;
        }
        let q = &state.q[self.input];
        match *load {
            Load::None => u,
            Load::Fixed(f) => u - f.dot(q),
            Load::Resistive { w_prev, f0 } => {
                let w = crate::rotation::rotation_matrix(q) * Vector3::z();
                u - f0 * w.dot(&w_prev)
            }
        }
    }

    /// Newton matrix `J − ∂F_ext/∂v`.
    pub fn system_matrix(&self, state: &SystemState, load: &Load) -> DMatrix<f64> {
        let mut k = self.jacobian(state);
        if let Some(lr) = self.load_at(state, load) {
            let o = self.slot(self.input).unwrap();
            for r in 0..3 {
                for c in 0..3 {
                    k[(o + r, o + c)] -= lr.d_force_dq[(r, c)];
                }
            }
        }
        k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub max_iter: usize,
    /// Converged when `‖r‖∞ ≤ tol · k_max`.
    pub tol: f64,
    /// Regularization `μ = reg · k_max` for near-singular systems.
    pub reg: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-9, reg: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub state: SystemState,
    pub iterations: usize,
    pub residual: f64,
}

fn solve_linear(k: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let x = k.clone().lu().solve(rhs)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Solves `F_int(v) = F_ext(v)` with the output body held at `q_out`.
pub fn solve_equilibrium(
    net: &SpringNetwork,
    q_out: &Angles,
    load: &Load,
    warm_start: &SystemState,
    opts: &NewtonOptions,
) -> Result<Solution> {
    let tol = opts.tol * net.k_max;
    let mu = opts.reg * net.k_max;
    let mut v = net.unknowns(warm_start);
    let mut state = net.state_from(&v, q_out);
    let mut r = net.residual(&state, load);
    let mut rn = r.amax();

    for it in 0..opts.max_iter {
        if rn <= tol {
            return Ok(polish(net, q_out, load, state, r, it, opts));
        }
        let k = net.system_matrix(&state, load);
        let phi = r.norm_squared();
        let mut accepted = false;
        for regularize in [false, true] {
            let mut kk = k.clone();
            if regularize {
                for i in 0..kk.nrows() {
                    kk[(i, i)] += mu;
                }
            }
            let Some(d) = solve_linear(&kk, &(-&r)) else { continue };
            let mut alpha = 1.0;
            while alpha >= 1e-6 {
                let vt = &v + &d * alpha;
                let st = net.state_from(&vt, q_out);
                let rt = net.residual(&st, load);
                let pt = rt.norm_squared();
                if pt.is_finite() && pt <= (1.0 - 1e-4 * alpha) * phi {
                    v = vt;
                    state = st;
                    r = rt;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if accepted {
                break;
            }
        }
        if !accepted {
            break;
        }
        rn = r.amax();
    }
    if rn <= tol {
        return Ok(polish(net, q_out, load, state, r, opts.max_iter, opts));
    }
    descend(net, q_out, load, warm_start, opts)
}

/// Fallback for stalled Newton runs: Levenberg-shifted Newton descent on the
/// total potential, which cannot stall at non-stationary points of `‖r‖`.
fn descend(
    net: &SpringNetwork,
    q_out: &Angles,
    load: &Load,
    warm_start: &SystemState,
    opts: &NewtonOptions,
) -> Result<Solution> {
    let tol = opts.tol * net.k_max;
    let mu_min = opts.reg * net.k_max;
    let mut v = net.unknowns(warm_start);
    let mut state = net.state_from(&v, q_out);
    let mut pot = net.potential(&state, load);
    let mut r = net.residual(&state, load);
    let mut lambda = 0.0;
    let max_iter = 10 * opts.max_iter;

    for it in 0..max_iter {
        let rn = r.amax();
        if rn <= tol {
            return Ok(polish(net, q_out, load, state, r, it, opts));
        }
        let k = net.system_matrix(&state, load);
        let n = k.nrows();
        let mut step = None;
        while lambda <= 1e6 * net.k_max {
            let shifted = &k + DMatrix::identity(n, n) * lambda;
            if let Some(ch) = shifted.cholesky() {
                step = Some(ch.solve(&(-&r)));
                break;
            }
            lambda = (4.0 * lambda).max(mu_min);
        }
        let Some(d) = step else { return Err(Error::Singular) };
        let slope = r.dot(&d);
        let mut alpha = 1.0;
        let mut moved = false;
        while alpha >= 1e-10 {
            let vt = &v + &d * alpha;
            let st = net.state_from(&vt, q_out);
            let pt = net.potential(&st, load);
            if pt.is_finite() && pt <= pot + 1e-4 * alpha * slope {
                v = vt;
                state = st;
                pot = pt;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if moved {
            r = net.residual(&state, load);
            if alpha == 1.0 {
                lambda *= 0.25;
                if lambda < mu_min {
                    lambda = 0.0;
                }
            }
            continue;
        }
        // Potential differences are below round-off; finish with plain Newton.
        if let Ok(sol) = newton_only(net, q_out, load, &state, opts) {
            return Ok(sol);
        }
        if lambda >= 1e6 * net.k_max {
            break;
        }
        lambda = (16.0 * lambda).max(mu_min);
    }
    Err(Error::NoConvergence { iterations: max_iter, residual: r.amax() })
}

fn newton_only(
    net: &SpringNetwork,
    q_out: &Angles,
    load: &Load,
    start: &SystemState,
    opts: &NewtonOptions,
) -> Result<Solution> {
    let tol = opts.tol * net.k_max;
    let mut state = start.clone();
    let mut r = net.residual(&state, load);
    for it in 0..20 {
        if r.amax() <= tol {
            return Ok(polish(net, q_out, load, state, r, it, opts));
        }
        let k = net.system_matrix(&state, load);
        let d = solve_linear(&k, &(-&r)).ok_or(Error::Singular)?;
        let st = net.state_from(&(net.unknowns(&state) + d), q_out);
        let rt = net.residual(&st, load);
        if rt.amax().is_nan() || rt.amax() >= r.amax() {
            break;
        }
        state = st;
        r = rt;
    }
    Err(Error::NoConvergence { iterations: 20, residual: r.amax() })
}

/// A few extra full Newton steps while the residual keeps halving, so that
/// finite-difference checks see converged states.
fn polish(
    net: &SpringNetwork,
    q_out: &Angles,
    load: &Load,
    mut state: SystemState,
    mut r: DVector<f64>,
    mut iterations: usize,
    _opts: &NewtonOptions,
) -> Solution {
    let mut rn = r.amax();
    for _ in 0..4 {
        if rn == 0.0 {
            break;
        }
        let k = net.system_matrix(&state, load);
        let Some(d) = solve_linear(&k, &(-&r)) else { break };
        let v = net.unknowns(&state) + d;
        let st = net.state_from(&v, q_out);
        let rt = net.residual(&st, load);
        let rtn = rt.amax();
        if rtn.is_nan() || rtn >= 0.5 * rn {
            break;
        }
        state = st;
        r = rt;
        rn = rtn;
        iterations += 1;
    }
    Solution { state, iterations, residual: rn }
}

/// Solve from `warm` (converged at `q_from`) to `q_to`, subdividing the pose
/// increment when a direct solve fails.
pub fn solve_with_continuation(
    net: &SpringNetwork,
    q_from: &Angles,
    q_to: &Angles,
    load: &Load,
    warm: &SystemState,
    opts: &NewtonOptions,
) -> Result<Solution> {
    let first = match solve_equilibrium(net, q_to, load, warm, opts) {
        Ok(s) => return Ok(s),
        Err(e) => e,
    };
    for substeps in [4usize, 16, 64] {
        let mut state = warm.clone();
        let mut iterations = 0;
        let mut ok = true;
        for s in 1..=substeps {
            let q = q_from + (q_to - q_from) * (s as f64 / substeps as f64);
            match solve_equilibrium(net, &q, load, &state, opts) {
                Ok(sol) => {
                    iterations += sol.iterations;
                    state = sol.state;
                }
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            let sol = solve_equilibrium(net, q_to, load, &state, opts)?;
            return Ok(Solution { iterations: iterations + sol.iterations, ..sol });
        }
    }
    Err(first)
}

/// Loading applied along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrajectoryLoad {
    None,
    /// Resistive moment of magnitude scale `f0`.
    Resistive(f64),
}

/// Sequence of converged states along a pose trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// States for `t* = 0..=T`; index 0 is the undeformed reference.
    pub states: Vec<SystemState>,
    /// Generalized force on the input body for `t* = 1..=T` (index `t* − 1`).
    pub forces: Vec<Vector3<f64>>,
    /// Load used at each step.
    pub loads: Vec<Load>,
    pub iterations: Vec<usize>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.forces.len()
    }
}

/// `w = A_I e_z` for a block state.
pub fn input_point(q: &Angles) -> Vector3<f64> {
    crate::rotation::rotation_matrix(q) * Vector3::z()
}

pub fn run_trajectory(
    net: &SpringNetwork,
    poses: &[Angles],
    load: TrajectoryLoad,
    opts: &NewtonOptions,
) -> Result<Trajectory> {
    let mut states = vec![SystemState::zeros(net.n_bodies)];
    let mut forces = Vec::with_capacity(poses.len());
    let mut loads = Vec::with_capacity(poses.len());
    let mut iterations = Vec::with_capacity(poses.len());
    let mut q_prev = Vector3::zeros();

    for (t, q_out) in poses.iter().enumerate() {
        let prev = states.last().unwrap();
        let l = match load {
            TrajectoryLoad::None => Load::None,
            TrajectoryLoad::Resistive(f0) => Load::Resistive { w_prev: input_point(&prev.q[net.input]), f0 },
        };
        let sol = solve_with_continuation(net, &q_prev, q_out, &l, prev, opts)
            .map_err(|e| Error::AtStep { step: t + 1, source: Box::new(e) })?;
        let f = if net.slot(net.input).is_some() {
            load_response(&l, &sol.state.q[net.input]).force
        } else {
            Vector3::zeros()
        };
        forces.push(f);
        loads.push(l);
        iterations.push(sol.iterations);
        states.push(sol.state);
        q_prev = *q_out;
    }
    Ok(Trajectory { states, forces, loads, iterations })
}

/// Rotation matrices of all bodies.
pub fn body_rotations(state: &SystemState) -> Vec<Matrix3<f64>> {
    state.q.iter().map(crate::rotation::rotation_matrix).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn small(nx: usize, ny: usize, xi: f64) -> (SphericalGrid, DesignVector, SolverParams) {
        let g = build_grid(nx, ny, FRAC_PI_2, FRAC_PI_4).unwrap();
        let p = SolverParams::default();
        let mut d = DesignVector::uniform(&g, xi);
        for (i, x) in d.xi.iter_mut().enumerate().skip(g.n_springs()) {
            *x = 0.2 + 0.6 * ((i * 5 % 7) as f64 / 7.0);
        }
        (g, d, p)
    }

    fn random_state(n: usize, seed: u64) -> SystemState {
        let mut x = seed;
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((x >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.6
        };
        SystemState { q: (0..n).map(|_| Vector3::new(next(), next(), next())).collect() }
    }

    #[test]
    fn zero_state_has_zero_energy_and_force() {
        let (g, d, p) = small(4, 2, 0.5);
        let net = SpringNetwork::from_grid(&g, &d, &p);
        let s = SystemState::zeros(g.n_blocks());
        assert_eq!(net.energy(&s), 0.0);
        assert_eq!(net.internal_force(&s).amax(), 0.0);
        assert_eq!(net.n_unknowns(), 21);
    }

    #[test]
    fn residual_is_gradient_of_potential() {
        let (g, d, p) = small(4, 2, 0.7);
        let net = SpringNetwork::from_grid(&g, &d, &p);
        let s = random_state(g.n_blocks(), 5);
        let q_out = s.q[net.output];
        let load = Load::Resistive { w_prev: Vector3::new(0.3, -0.2, 0.93).normalize(), f0: 40.0 };
        let r = net.residual(&s, &load);
        let v = net.unknowns(&s);
        let h = 1e-6;
        for i in 0..v.len() {
            let mut vp = v.clone();
            vp[i] += h;
            let mut vm = v.clone();
            vm[i] -= h;
            let fd = (net.potential(&net.state_from(&vp, &q_out), &load)
                - net.potential(&net.state_from(&vm, &q_out), &load))
                / (2.0 * h);
            assert_relative_eq!(r[i], fd, epsilon = 1e-5 * net.k_max, max_relative = 1e-6);
        }
    }

    #[test]
    fn two_block_energy_matches_hand_value() {
        let (g, d, p) = small(2, 1, 1.0);
        let net = SpringNetwork::from_grid(&g, &d, &p);
        let mut s = SystemState::zeros(2);
        s.q[1] = Vector3::new(0.2, -0.1, 0.3);
        let a2 = crate::rotation::rotation_matrix(&s.q[1]);
        let expected: f64 = g
            .springs
            .iter()
            .map(|sp| {
                let x = crate::grid::node_position(sp.node, &d, &g, &p);
                0.5 * p.k_max * ((a2 * x) - x).norm_squared()
            })
            .sum();
        assert_relative_eq!(net.energy(&s), expected, max_relative = 1e-14);
    }

    #[test]
    fn energy_is_linear_in_stiffness() {
        let (g, d, p) = small(2, 2, 0.7);
        let mut net = SpringNetwork::from_grid(&g, &d, &p);
        let s = random_state(4, 3);
        let u = net.energy(&s);
        for sp in &mut net.springs {
            sp.k *= 2.0;
        }
        assert_relative_eq!(net.energy(&s), 2.0 * u, max_relative = 1e-14);
    }

    #[test]
    fn force_is_energy_gradient() {
        let (g, d, p) = small(2, 2, 0.6);
        let net = SpringNetwork::from_grid(&g, &d, &p);
        let s = random_state(4, 11);
        let f = net.internal_force(&s);
        let v = net.unknowns(&s);
        let q_out = s.q[net.output];
        let h = 1e-6;
        for i in 0..v.len() {
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp[i] += h;
            vm[i] -= h;
            let fd = (net.energy(&net.state_from(&vp, &q_out)) - net.energy(&net.state_from(&vm, &q_out))) / (2.0 * h);
            assert_relative_eq!(f[i], fd, max_relative = 1e-6, epsilon = 1e-6);
        }
    }

    #[test]
    fn jacobian_is_force_derivative_and_symmetric() {
        let (g, d, p) = small(2, 2, 0.6);
        let net = SpringNetwork::from_grid(&g, &d, &p);
        let s = random_state(4, 5);
        let j = net.jacobian(&s);
        assert!((&j - j.transpose()).amax() <= 1e-9 * j.amax());
        let v = net.unknowns(&s);
        let q_out = s.q[net.output];
        let h = 1e-6;
        for c in 0..v.len() {
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp[c] += h;
            vm[c] -= h;
            let fd = (net.internal_force(&net.state_from(&vp, &q_out))
                - net.internal_force(&net.state_from(&vm, &q_out)))
                / (2.0 * h);
            for r in 0..v.len() {
                assert_relative_eq!(j[(r, c)], fd[r], max_relative = 1e-5, epsilon = 1e-4);
            }
        }
    }

    #[test]
    fn design_derivatives_match_finite_differences() {
        let (g, d, p) = small(2, 1, 0.6);
        let s = random_state(2, 9);
        let net = SpringNetwork::from_grid(&g, &d, &p);
        let du = net.energy_design_gradient(&s);
        let df = net.internal_force_design(&s);
        let h = 1e-6;
        for k in 0..d.len() {
            let mut dp = d.clone();
            let mut dm = d.clone();
            dp.xi[k] += h;
            dm.xi[k] -= h;
            let np = SpringNetwork::from_grid(&g, &dp, &p);
            let nm = SpringNetwork::from_grid(&g, &dm, &p);
            let fd_u = (np.energy(&s) - nm.energy(&s)) / (2.0 * h);
            assert_relative_eq!(du[k], fd_u, max_relative = 1e-6, epsilon = 1e-6);
            let fd_f = (np.internal_force(&s) - nm.internal_force(&s)) / (2.0 * h);
            for r in 0..fd_f.len() {
                assert_relative_eq!(df[(r, k)], fd_f[r], max_relative = 1e-6, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn minimum_stiffness_leaves_only_anchor_rows() {
        let (g, mut d, p) = small(2, 2, 0.5);
        for x in d.xi.iter_mut().take(g.n_springs()) {
            *x = p.xi_min;
        }
        let net = SpringNetwork::from_grid(&g, &d, &p);
        let j = net.jacobian(&SystemState::zeros(4));
        let o = net.slot(g.block_i).unwrap();
        for r in 0..j.nrows() {
            for c in 0..j.ncols() {
                let in_anchor = (o..o + 3).contains(&r) && (o..o + 3).contains(&c);
                if !in_anchor {
                    assert!(j[(r, c)].abs() < 1e-4);
                }
            }
        }
        assert!(j.view((o, o), (3, 3)).amax() > 1e3);
    }

    #[test]
    fn zero_pose_solves_to_zero() {
        let (g, d, p) = small(4, 2, 0.5);
        let net = SpringNetwork::from_grid(&g, &d, &p);
        let sol = solve_equilibrium(
            &net,
            &Vector3::zeros(),
            &Load::None,
            &SystemState::zeros(8),
            &NewtonOptions::default(),
        )
        .unwrap();
        assert_eq!(sol.iterations, 0);
        assert!(sol.state.q.iter().all(|q| q.norm() == 0.0));
        let _ = p;
    }

    #[test]
    fn resistive_solve_reaches_tolerance() {
        let (g, d, p) = small(4, 2, 0.5);
        let net = SpringNetwork::from_grid(&g, &d, &p);
        let poses: Vec<Angles> = (0..4).map(|i| Vector3::new(0.0, 0.0, -0.4 + 0.2 * i as f64)).collect();
        let traj = run_trajectory(&net, &poses, TrajectoryLoad::Resistive(1.0), &NewtonOptions::default()).unwrap();
        for (t, st) in traj.states.iter().enumerate().skip(1) {
            let r = net.residual(st, &traj.loads[t - 1]);
            assert!(r.amax() <= 1e-9 * p.k_max);
            assert_relative_eq!(st.q[g.block_a], poses[t - 1]);
        }
        assert!(traj.iterations.iter().all(|&n| n <= 20));
    }
}
