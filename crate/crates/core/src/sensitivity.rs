//! Direct design sensitivities of the mean efficiency and the constraints, and
//! a central finite-difference oracle.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::cases::MomentCase;
use crate::equilibrium::{Load, SpringNetwork, SystemState};
use crate::error::{Error, Result};
use crate::grid::SolverParams;
use crate::response::{load_response, target_rotation, unit_points, Evaluation};
use crate::rotation::RotationDerivs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SensitivityOptions {
    /// Treat `w_{t−1}` in the resistive load as a constant.
    pub frozen_w: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub d_zeta_bar: DVector<f64>,
    /// One row per constraint, ordered step-major then `3α + j`.
    pub d_psi: DMatrix<f64>,
    /// `dv_t/dξ` for `t* = 1..=T`.
    pub d_states: Vec<DMatrix<f64>>,
}

/// `dv/dξ = −K⁻¹ (∂F_int/∂ξ + coupling)`, with `K = J − ∂F_ext/∂v`.
fn solve_sensitivity(
    net: &SpringNetwork,
    state: &SystemState,
    load: &Load,
    coupling: Option<&DMatrix<f64>>,
    reg: f64,
) -> Result<DMatrix<f64>> {
    let k = net.system_matrix(state, load);
    let mut rhs = net.internal_force_design(state);
    if let Some(c) = coupling {
        rhs += c;
    }
    rhs.neg_mut();
    if let Some(x) = k.clone().lu().solve(&rhs).filter(|x| x.iter().all(|v| v.is_finite())) {
        return Ok(x);
    }
    let mut kr = k;
    for i in 0..kr.nrows() {
        kr[(i, i)] += reg * net.k_max;
    }
    kr.lu()
        .solve(&rhs)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or(Error::Singular)
}

/// Rows of `dv/dξ` belonging to the input body, or zeros when it is prescribed.
fn input_rows(net: &SpringNetwork, dv: &DMatrix<f64>) -> DMatrix<f64> {
    match net.slot(net.input) {
        Some(o) => dv.rows(o, 3).into_owned(),
        None => DMatrix::zeros(3, net.n_design),
    }
}

/// `dw/dq` for `w = A(q) e_z`.
fn dw_dq(q: &Vector3<f64>) -> Matrix3<f64> {
    let rd = RotationDerivs::new(q);
    Matrix3::from_columns(&[rd.d[0] * Vector3::z(), rd.d[1] * Vector3::z(), rd.d[2] * Vector3::z()])
}

/// Residual coupling `∂R_t/∂q_{I,t−1} · dq_{I,t−1}/dξ` through `w_{t−1}`.
fn previous_step_coupling(
    net: &SpringNetwork,
    state: &SystemState,
    load: &Load,
    q_prev: &Vector3<f64>,
    dq_prev: &DMatrix<f64>,
) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let o = net.slot(net.input)?;
    let lr = load_response(load, &state.q[net.input]);
    let df_prev = lr.d_force_dw_prev * dw_dq(q_prev);
    let df = to_dmatrix(&df_prev) * dq_prev;
    let mut c = DMatrix::zeros(net.n_unknowns(), net.n_design);
    c.rows_mut(o, 3).copy_from(&(-&df));
    Some((c, df))
}

fn to_dmatrix(m: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(3, 3, |r, c| m[(r, c)])
}

pub fn gradients(
    net: &SpringNetwork,
    case: &MomentCase,
    params: &SolverParams,
    eval: &Evaluation,
    opts: &SensitivityOptions,
) -> Result<GradientBundle> {
    let traj = &eval.trajectory;
    let n_steps = case.steps();
    let nd = net.n_design;
    let reg = 1e-8;
    let input = net.input;

    let mut d_states = Vec::with_capacity(n_steps);
    // dq_I/dξ for t* = 0..=T and dF_t/dξ for t* = 1..=T.
    let mut dq_in = vec![DMatrix::zeros(3, nd)];
    let mut d_forces = Vec::with_capacity(n_steps);

    for t in 1..=n_steps {
        let state = &traj.states[t];
        let load = &traj.loads[t - 1];
        let coupled = if opts.frozen_w || t == 1 {
            None
        } else {
            previous_step_coupling(net, state, load, &traj.states[t - 1].q[input], &dq_in[t - 1])
        };
        let dv = solve_sensitivity(net, state, load, coupled.as_ref().map(|c| &c.0), reg)
            .map_err(|e| Error::AtStep { step: t, source: Box::new(e) })?;
        let dq = input_rows(net, &dv);
        let lr = load_response(load, &state.q[input]);
        let mut df = to_dmatrix(&lr.d_force_dq) * &dq;
        if let Some((_, df_prev)) = &coupled {
            df += df_prev;
        }
        d_forces.push(df);
        dq_in.push(dq);
        d_states.push(dv);
    }

    // Efficiency.
    let mut d_zeta_bar = DVector::zeros(nd);
    let mut dw = DVector::zeros(nd);
    let n_used = eval.report.mask.iter().filter(|&&m| m).count().max(1) as f64;
    for t in 1..=n_steps {
        let q_prev = traj.states[t - 1].q[input];
        let q_cur = traj.states[t].q[input];
        let dqd = &dq_in[t - 1] - &dq_in[t];
        dw += d_forces[t - 1].transpose() * DVector::from_column_slice((q_prev - q_cur).as_slice())
            + dqd.transpose() * DVector::from_column_slice(traj.forces[t - 1].as_slice());

        let step = &eval.report.steps[t - 1];
        if step.degenerate || !eval.report.mask[t - 1] {
            continue;
        }
        let state = &traj.states[t];
        let du = net.energy_design_gradient(state) + d_states[t - 1].transpose() * net.internal_force(state);
        let (w, u) = (step.work, step.energy);
        let den = (w + u) * (w + u);
        d_zeta_bar += (&dw * u - du * w) / (den * n_used);
    }

    // Constraints.
    let mut d_psi = DMatrix::zeros(9 * n_steps, nd);
    for t in 1..=n_steps {
        let load = &traj.loads[t - 1];
        let base = &traj.states[t];
        let a_base = RotationDerivs::new(&base.q[input]);
        for axis in 0..3 {
            let pert = &eval.perturbed[t - 1][axis];
            let coupled = if opts.frozen_w || t == 1 {
                None
            } else {
                previous_step_coupling(net, pert, load, &traj.states[t - 1].q[input], &dq_in[t - 1])
            };
            let dv = solve_sensitivity(net, pert, load, coupled.as_ref().map(|c| &c.0), reg).map_err(|e| {
                Error::AtPerturbation { step: t, axis: crate::response::AXES[axis], source: Box::new(e) }
            })?;
            let dq_pert = input_rows(net, &dv);
            let a_pert = RotationDerivs::new(&pert.q[input]);
            let target = target_rotation(case.moment_ratio(t - 1)[axis], params.delta_theta);
            for (j, p) in unit_points().iter().enumerate() {
                let d = a_pert.a * a_base.a.transpose() * p - target * p;
                let norm = d.norm();
                if norm == 0.0 {
                    continue;
                }
                let unit = d / norm;
                let row = 9 * (t - 1) + 3 * axis + j;
                for i in 0..3 {
                    let gp = unit.dot(&(a_pert.d[i] * a_base.a.transpose() * p));
                    let gb = unit.dot(&(a_pert.a * a_base.d[i].transpose() * p));
                    for c in 0..nd {
                        d_psi[(row, c)] += gp * dq_pert[(i, c)] + gb * dq_in[t][(i, c)];
                    }
                }
            }
        }
    }

    Ok(GradientBundle { d_zeta_bar, d_psi, d_states })
}

/// Central finite differences of a vector-valued function; one row per output.
pub fn fd_oracle<F>(f: F, x: &[f64], step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if step <= 0.0 {
        return Err(Error::Invalid(format!("finite-difference step {step} must be positive")));
    }
    let mut cols = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + step;
        let fp = f(&xp)?;
        xp[i] = x[i] - step;
        let fm = f(&xp)?;
        xp[i] = x[i];
        cols.push(DVector::from_iterator(fp.len(), fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * step))));
    }
    if cols.is_empty() {
        return Ok(DMatrix::zeros(f(x)?.len(), 0));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Agreement test used by gradient checks.
pub fn gradients_agree(analytic: f64, fd: f64, rel: f64, abs_floor: f64) -> bool {
    (analytic - fd).abs() <= rel * analytic.abs().max(fd.abs()) + abs_floor
}
