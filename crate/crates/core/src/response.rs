//! Optimization responses: the reverse work transmittance efficiency along a
//! trajectory and the displacement-based output-moment constraints obtained
//! from small end-effector perturbations.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::cases::MomentCase;
use crate::equilibrium::{
    input_point, run_trajectory, solve_equilibrium, Load, NewtonOptions, SpringNetwork, SystemState, Trajectory,
    TrajectoryLoad,
};
use crate::error::{Error, Result};
use crate::grid::SolverParams;
use crate::rotation::{
    angles_from_matrix, exp_axis_angle, rot_x, rot_y, rot_z, rotation_log, rotation_matrix, rotation_vector, skew,
    Angles,
};

/// Fixed direction of the actuator input moment.
pub const INPUT_DIRECTION: Vector3<f64> = Vector3::new(0.0, -1.0, 0.0);

pub const AXES: [char; 3] = ['X', 'Y', 'Z'];

pub fn resistive_moment(w: &Vector3<f64>, w_prev: &Vector3<f64>, f0: f64) -> Vector3<f64> {
    w.cross(w_prev) * f0
}

/// Rows are the world-frame rotation axes of `ρ`, `θ` and `φ` at `q`.
fn axis_matrix(q: &Angles) -> Matrix3<f64> {
    let (sr, cr) = q[0].sin_cos();
    let (st, ct) = q[1].sin_cos();
    Matrix3::new(0.0, 1.0, 0.0, sr, 0.0, cr, cr * ct, st, -sr * ct)
}

/// Generalized force conjugate to `(ρ, θ, φ)` for a moment acting on a body at `q`.
pub fn generalized_force(m: &Vector3<f64>, q: &Angles) -> Vector3<f64> {
    axis_matrix(q) * m
}

/// Generalized load on the input body and its derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadResponse {
    pub force: Vector3<f64>,
    pub d_force_dq: Matrix3<f64>,
    pub d_force_dw_prev: Matrix3<f64>,
}

pub fn load_response(load: &Load, q: &Angles) -> LoadResponse {
    match *load {
        Load::None => LoadResponse {
            force: Vector3::zeros(),
            d_force_dq: Matrix3::zeros(),
            d_force_dw_prev: Matrix3::zeros(),
        },
        Load::Fixed(f) => LoadResponse { force: f, d_force_dq: Matrix3::zeros(), d_force_dw_prev: Matrix3::zeros() },
        Load::Resistive { w_prev, f0 } => {
            let rd = crate::rotation::RotationDerivs::new(q);
            let w = rd.a * Vector3::z();
            let m = resistive_moment(&w, &w_prev, f0);
            let t = axis_matrix(q);

            let (sr, cr) = q[0].sin_cos();
            let (st, ct) = q[1].sin_cos();
            // d(axis_i)/d(q_j) for the two non-constant axes.
            let d_theta_axis = [Vector3::new(cr, 0.0, -sr), Vector3::zeros(), Vector3::zeros()];
            let d_phi_axis = [
                Vector3::new(-sr * ct, 0.0, -cr * ct),
                Vector3::new(-cr * st, ct, sr * st),
                Vector3::zeros(),
            ];

            let mut d_force_dq = Matrix3::zeros();
            for j in 0..3 {
                let dm = (rd.d[j] * Vector3::z()).cross(&w_prev) * f0;
                let dt = Vector3::new(0.0, d_theta_axis[j].dot(&m), d_phi_axis[j].dot(&m));
                d_force_dq.set_column(j, &(dt + t * dm));
            }
            LoadResponse { force: t * m, d_force_dq, d_force_dw_prev: t * skew(&w) * f0 }
        }
    }
}

/// Cumulative output work at the actuator for every step: entry `t − 1` holds
/// `Σ_{s ≤ t} F_s · (q_{I,s−1} − q_{I,s})`.
pub fn output_work(input_states: &[Angles], forces: &[Vector3<f64>]) -> Vec<f64> {
    let mut acc = 0.0;
    forces
        .iter()
        .enumerate()
        .map(|(s, f)| {
            acc += f.dot(&(input_states[s] - input_states[s + 1]));
            acc
        })
        .collect()
}

/// `W / (W + U)`; the degenerate `W + U = 0` case returns `(0, true)`.
pub fn efficiency(w_out: f64, u: f64) -> (f64, bool) {
    let den = w_out + u;
    if den == 0.0 {
        (0.0, true)
    } else {
        (w_out / den, false)
    }
}

/// Steps that enter the mean efficiency: all except a degenerate first step at the zero pose.
pub fn efficiency_mask(degenerate: &[bool], poses: &[Angles]) -> Vec<bool> {
    degenerate
        .iter()
        .enumerate()
        .map(|(t, &d)| !(d && t == 0 && poses[0] == Vector3::zeros()))
        .collect()
}

pub fn mean_efficiency(zeta: &[f64], mask: &[bool]) -> f64 {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return 0.0;
    }
    zeta.iter().zip(mask).filter(|(_, &m)| m).map(|(z, _)| z).sum::<f64>() / n as f64
}

pub fn perturbation_matrix(axis: usize, delta: f64) -> Matrix3<f64> {
    match axis {
        0 => rot_x(delta),
        1 => rot_y(delta),
        _ => rot_z(delta),
    }
}

/// End-effector pose after a small rotation about a global axis.
pub fn perturbed_pose(q_a: &Angles, axis: usize, delta: f64) -> Angles {
    angles_from_matrix(&(perturbation_matrix(axis, delta) * rotation_matrix(q_a)))
}

/// Re-solves step `t` (1-based) with the end-effector perturbed about `axis`.
pub fn perturbed_solve(
    net: &SpringNetwork,
    trajectory: &Trajectory,
    poses: &[Angles],
    t: usize,
    axis: usize,
    delta: f64,
    opts: &NewtonOptions,
) -> Result<SystemState> {
    let q = perturbed_pose(&poses[t - 1], axis, delta);
    solve_equilibrium(net, &q, &trajectory.loads[t - 1], &trajectory.states[t], opts)
        .map(|s| s.state)
        .map_err(|e| Error::AtPerturbation { step: t, axis: AXES[axis], source: Box::new(e) })
}

pub fn unit_points() -> [Vector3<f64>; 3] {
    [Vector3::x(), Vector3::y(), Vector3::z()]
}

/// Displacements of the three unit points of the input body between its base
/// and perturbed orientations.
pub fn position_variations(q_base: &Angles, q_pert: &Angles) -> [Vector3<f64>; 3] {
    let rel = rotation_matrix(q_pert) * rotation_matrix(q_base).transpose();
    let (axis, angle) = rotation_log(&rel);
    let step = exp_axis_angle(&axis, angle) - Matrix3::identity();
    unit_points().map(|p| step * p)
}

/// Displacements for an ideal input body rotating by `κ Δθ` about `[0, −1, 0]`.
pub fn target_variations(kappa: f64, delta: f64) -> [Vector3<f64>; 3] {
    let step = target_rotation(kappa, delta) - Matrix3::identity();
    unit_points().map(|p| step * p)
}

pub(crate) fn target_rotation(kappa: f64, delta: f64) -> Matrix3<f64> {
    exp_axis_angle(&INPUT_DIRECTION, kappa * delta)
}

/// The three constraint values of one perturbation axis.
pub fn axis_constraints(q_base: &Angles, q_pert: &Angles, kappa: f64, delta: f64) -> [f64; 3] {
    let m = position_variations(q_base, q_pert);
    let t = target_variations(kappa, delta);
    [0, 1, 2].map(|j| (m[j] - t[j]).norm())
}

/// All nine constraints of a step: index `3α + j` for axis `α` and point `j`.
pub fn constraints(q_base: &Angles, q_pert: &[Angles; 3], kappa: &Vector3<f64>, delta: f64) -> [f64; 9] {
    let mut psi = [0.0; 9];
    for a in 0..3 {
        let c = axis_constraints(q_base, &q_pert[a], kappa[a], delta);
        psi[3 * a..3 * a + 3].copy_from_slice(&c);
    }
    psi
}

/// Direction and magnitude errors between measured and target output moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentError {
    /// Squared cosine minus one; zero at alignment, `−1` when orthogonal.
    pub dir: f64,
    pub dir_abs: f64,
    pub mag: f64,
}

pub fn diagnostic_moment_error(
    m_out: &Vector3<f64>,
    m_target: &Vector3<f64>,
    m_inp: &Vector3<f64>,
) -> Option<MomentError> {
    let (a, b, c) = (m_out.norm(), m_target.norm(), m_inp.norm());
    if a == 0.0 || b == 0.0 || c == 0.0 {
        return None;
    }
    let cos = m_out.dot(m_target) / (a * b);
    let dir = cos * cos - 1.0;
    Some(MomentError { dir, dir_abs: dir.abs(), mag: (a - b).abs() / c })
}

/// Output moment implied by virtual work: component `α` is the input-direction
/// rotation of the input body per unit end-effector rotation about `α`.
pub fn virtual_work_moment(q_base: &Angles, q_pert: &[Angles; 3], delta: f64) -> Vector3<f64> {
    let base = rotation_matrix(q_base);
    Vector3::from_fn(|a, _| {
        let rel = rotation_matrix(&q_pert[a]) * base.transpose();
        INPUT_DIRECTION.dot(&rotation_vector(&rel)) / delta
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub zeta: f64,
    pub degenerate: bool,
    pub work: f64,
    pub energy: f64,
    pub psi: [f64; 9],
    pub moment: [f64; 3],
    pub moment_error: Option<MomentError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseReport {
    pub steps: Vec<StepReport>,
    pub mask: Vec<bool>,
    pub zeta_bar: f64,
}

impl ResponseReport {
    pub fn max_psi(&self) -> f64 {
        self.steps.iter().flat_map(|s| s.psi).fold(0.0, f64::max)
    }

    /// Largest constraint per perturbation axis group.
    pub fn max_psi_groups(&self) -> [f64; 3] {
        let mut g = [0.0_f64; 3];
        for s in &self.steps {
            for (i, p) in s.psi.iter().enumerate() {
                g[i / 3] = g[i / 3].max(*p);
            }
        }
        g
    }

    pub fn psi_flat(&self) -> Vec<f64> {
        self.steps.iter().flat_map(|s| s.psi).collect()
    }
}

/// Forward analysis of a network over a case trajectory.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub trajectory: Trajectory,
    /// Perturbed states per step (index `t* − 1`) and axis.
    pub perturbed: Vec<[SystemState; 3]>,
    pub report: ResponseReport,
}

pub fn evaluate_network(
    net: &SpringNetwork,
    case: &MomentCase,
    params: &SolverParams,
    load: TrajectoryLoad,
    opts: &NewtonOptions,
) -> Result<Evaluation> {
    let traj = run_trajectory(net, &case.poses, load, opts)?;
    let input_q: Vec<Angles> = traj.states.iter().map(|s| s.q[net.input]).collect();
    let work = output_work(&input_q, &traj.forces);

    let mut perturbed = Vec::with_capacity(case.steps());
    let mut steps = Vec::with_capacity(case.steps());
    for t in 1..=case.steps() {
        let pert: [SystemState; 3] = [0, 1, 2]
            .map(|a| perturbed_solve(net, &traj, &case.poses, t, a, params.delta_theta, opts))
            .into_iter()
            .collect::<Result<Vec<_>>>()?
            .try_into()
            .unwrap();
        let q_pert = [0, 1, 2].map(|a| pert[a].q[net.input]);
        let q_base = input_q[t];
        let kappa = case.moment_ratio(t - 1);
        let energy = net.energy(&traj.states[t]);
        let (zeta, degenerate) = efficiency(work[t - 1], energy);
        let moment = virtual_work_moment(&q_base, &q_pert, params.delta_theta);
        steps.push(StepReport {
            zeta,
            degenerate,
            work: work[t - 1],
            energy,
            psi: constraints(&q_base, &q_pert, &kappa, params.delta_theta),
            moment: moment.into(),
            moment_error: diagnostic_moment_error(&moment, &kappa, &INPUT_DIRECTION),
        });
        perturbed.push(pert);
    }

    let degenerate: Vec<bool> = steps.iter().map(|s| s.degenerate).collect();
    let mask = efficiency_mask(&degenerate, &case.poses);
    let zeta: Vec<f64> = steps.iter().map(|s| s.zeta).collect();
    let zeta_bar = mean_efficiency(&zeta, &mask);
    Ok(Evaluation { trajectory: traj, perturbed, report: ResponseReport { steps, mask, zeta_bar } })
}

/// `w` of the input body for each trajectory state.
pub fn input_points(net: &SpringNetwork, traj: &Trajectory) -> Vec<Vector3<f64>> {
    traj.states.iter().map(|s| input_point(&s.q[net.input])).collect()
}
