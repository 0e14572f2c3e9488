//! The optimization loop: forward solve, responses, sensitivities and an MMA
//! update per iteration.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cases::MomentCase;
use crate::equilibrium::{NewtonOptions, SpringNetwork, TrajectoryLoad};
use crate::error::{Error, Result};
use crate::mechanism::CRISP_BAND;
use crate::grid::{DesignVector, SolverParams, SphericalGrid};
use crate::mma::{MmaOptions, MmaState};
use crate::response::{evaluate_network, Evaluation, ResponseReport};
use crate::sensitivity::{gradients, GradientBundle, SensitivityOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOptions {
    pub budget: usize,
    pub mma: MmaOptions,
    pub newton: NewtonOptions,
    pub sensitivity: SensitivityOptions,
    /// Number of trailing iterations that must be feasible and flat.
    pub window: usize,
    /// Largest allowed spread of `ζ̄` over the window.
    pub zeta_tol: f64,
    /// Convergence also waits until no stiffness variable lies in the crispness band.
    pub require_crisp: bool,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            budget: 300,
            mma: MmaOptions::default(),
            newton: NewtonOptions::default(),
            sensitivity: SensitivityOptions::default(),
            window: 10,
            zeta_tol: 1e-5,
            require_crisp: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub zeta_bar: f64,
    /// Largest constraint per perturbation axis: flexion (X), abduction (Y), rotation (Z).
    pub max_psi: [f64; 3],
    pub feasible: bool,
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub design: DesignVector,
    pub report: ResponseReport,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub feasible: bool,
}

/// Responses and gradients of one design.
pub struct DesignEvaluation {
    pub network: SpringNetwork,
    pub evaluation: Evaluation,
    pub gradients: GradientBundle,
}

pub fn evaluate_design(
    grid: &SphericalGrid,
    design: &DesignVector,
    params: &SolverParams,
    case: &MomentCase,
    newton: &NewtonOptions,
    sens: &SensitivityOptions,
) -> Result<DesignEvaluation> {
    let network = SpringNetwork::from_grid(grid, design, params);
    let evaluation = evaluate_network(&network, case, params, TrajectoryLoad::Resistive(params.f0), newton)?;
    let gradients = gradients(&network, case, params, &evaluation, sens)?;
    Ok(DesignEvaluation { network, evaluation, gradients })
}

pub fn is_feasible(report: &ResponseReport, params: &SolverParams) -> bool {
    report.max_psi() <= params.eps
}

fn record(iter: usize, report: &ResponseReport, params: &SolverParams) -> IterationRecord {
    IterationRecord {
        iter,
        zeta_bar: report.zeta_bar,
        max_psi: report.max_psi_groups(),
        feasible: is_feasible(report, params),
    }
}

pub fn is_crisp(design: &DesignVector) -> bool {
    design.xi_k().iter().all(|x| !(CRISP_BAND.0..=CRISP_BAND.1).contains(x))
}

fn converged(history: &[IterationRecord], window: usize, tol: f64) -> bool {
    if window == 0 || history.len() < window {
        return false;
    }
    let tail = &history[history.len() - window..];
    if !tail.iter().all(|r| r.feasible) {
        return false;
    }
    let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        (lo.min(r.zeta_bar), hi.max(r.zeta_bar))
    });
    hi - lo <= tol
}

/// Maximizes `ζ̄` subject to `ψ ≤ ε`, starting from all variables at 0.5.
pub fn synthesize(
    grid: &SphericalGrid,
    params: &SolverParams,
    case: &MomentCase,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult> {
    synthesize_with(grid, params, case, opts, |_| {})
}

/// As [`synthesize`], calling `observer` after every evaluated iterate.
pub fn synthesize_with<F>(
    grid: &SphericalGrid,
    params: &SolverParams,
    case: &MomentCase,
    opts: &SynthesisOptions,
    mut observer: F,
) -> Result<SynthesisResult>
where
    F: FnMut(&IterationRecord),
{
    let mut design = DesignVector::uniform(grid, 0.5);
    let xmin = design.lower_bounds(params);
    let xmax = vec![1.0; design.len()];
    let mut current = evaluate_design(grid, &design, params, case, &opts.newton, &opts.sensitivity)?;
    let mut mma = MmaState::new(design.xi.clone(), &opts.mma);

    let mut history = vec![record(0, &current.evaluation.report, params)];
    observer(&history[0]);
    let mut best: Option<(DesignVector, ResponseReport)> =
        history[0].feasible.then(|| (design.clone(), current.evaluation.report.clone()));

    let mut is_converged = false;
    for iter in 1..=opts.budget {
        if converged(&history, opts.window, opts.zeta_tol) && (!opts.require_crisp || is_crisp(&design)) {
            is_converged = true;
            break;
        }
        let report = &current.evaluation.report;
        let g = &current.gradients;
        let df0: Vec<f64> = g.d_zeta_bar.iter().map(|v| -v).collect();
        let fval: Vec<f64> = report.psi_flat().iter().map(|p| p / params.eps - 1.0).collect();
        let dfdx: DMatrix<f64> = &g.d_psi / params.eps;

        let proposal = mma.step(&df0, &fval, &dfdx, &xmin, &xmax, &opts.mma)?;

        let mut candidate = proposal;
        let mut next = None;
        for _ in 0..6 {
            let d = DesignVector::from_vec(grid, candidate.clone())?;
            match evaluate_design(grid, &d, params, case, &opts.newton, &opts.sensitivity) {
                Ok(ev) => {
                    next = Some((d, ev));
                    break;
                }
                Err(_) => {
                    candidate = candidate.iter().zip(&design.xi).map(|(c, x)| 0.5 * (c + x)).collect();
                }
            }
        }
        let Some((d, ev)) = next else {
            return Err(Error::Invalid(format!("design evaluation failed repeatedly at iteration {iter}")));
        };
        if d.xi != mma.x {
            mma.restart_at(d.xi.clone());
        }
        design = d;
        current = ev;

        let rec = record(iter, &current.evaluation.report, params);
        observer(&rec);
        if rec.feasible && best.as_ref().is_none_or(|(_, r)| r.zeta_bar < rec.zeta_bar) {
            best = Some((design.clone(), current.evaluation.report.clone()));
        }
        history.push(rec);
    }
    if !is_converged {
        is_converged = converged(&history, opts.window, opts.zeta_tol) && (!opts.require_crisp || is_crisp(&design));
    }

    if is_converged {
        let feasible = is_feasible(&current.evaluation.report, params);
        return Ok(SynthesisResult {
            design,
            report: current.evaluation.report,
            history,
            converged: true,
            feasible,
        });
    }
    match best {
        Some((design, report)) => Ok(SynthesisResult { design, report, history, converged: false, feasible: true }),
        None => Ok(SynthesisResult {
            design,
            report: current.evaluation.report,
            history,
            converged: false,
            feasible: false,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(z: f64, feasible: bool) -> IterationRecord {
        IterationRecord { iter: 0, zeta_bar: z, max_psi: [0.0; 3], feasible }
    }

    #[test]
    fn convergence_needs_full_feasible_flat_window() {
        let mut h: Vec<_> = (0..10).map(|_| rec(0.97, true)).collect();
        assert!(converged(&h, 10, 1e-5));
        h[3].feasible = false;
        assert!(!converged(&h, 10, 1e-5));
        h[3] = rec(0.9701, true);
        assert!(!converged(&h, 10, 1e-5));
        assert!(!converged(&h[..5], 10, 1e-5));
    }
}
