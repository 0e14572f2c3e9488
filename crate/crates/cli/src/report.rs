//! Artifact formats. Floats in CSV files carry 9 significant digits.

use std::fmt::Write;
use std::time::Duration;

use nalgebra::DMatrix;
use sbm_synth::grid::SolverParams;
use sbm_synth::mechanism::MechanismGraph;
use sbm_synth::screw::Analysis;
use sbm_synth::sensitivity::GradientBundle;
use sbm_synth::synthesis::{IterationRecord, SynthesisResult};
use serde::{Deserialize, Serialize};

use crate::config::GridConfig;

pub fn f(x: f64) -> String {
    format!("{x:.8e}")
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact types serialize");
    s.push('\n');
    s
}

/// A design together with everything needed to rebuild its geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignFile {
    pub grid: GridConfig,
    pub params: SolverParams,
    pub xi: Vec<f64>,
}

impl DesignFile {
    pub fn to_json(&self) -> String {
        to_json(self)
    }
}

pub fn history_csv(history: &[IterationRecord]) -> String {
    let mut s = String::from("iter,zeta_bar,max_psi_flex,max_psi_abd,max_psi_rot,feasible\n");
    for r in history {
        let [x, y, z] = r.max_psi;
        writeln!(s, "{},{},{},{},{},{}", r.iter, f(r.zeta_bar), f(x), f(y), f(z), u8::from(r.feasible)).unwrap();
    }
    s
}

pub fn analysis_csv(a: &Analysis) -> String {
    let mut s = String::from(
        "step,rho,theta,phi,dir_x,dir_y,dir_z,latitude_deg,longitude_deg,vl1_deg,vl2_deg,angle_to_target_deg,energy,method\n",
    );
    let deg = |v: Option<f64>| f(v.map_or(f64::NAN, f64::to_degrees));
    for r in &a.rows {
        let method = match r.method {
            sbm_synth::screw::Method::ClosedForm => "closed-form",
            sbm_synth::screw::Method::VirtualWork => "virtual-work",
        };
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{method}",
            r.step,
            f(r.pose.x),
            f(r.pose.y),
            f(r.pose.z),
            f(r.direction.x),
            f(r.direction.y),
            f(r.direction.z),
            f(r.latitude),
            f(r.longitude),
            deg(r.vl1),
            deg(r.vl2),
            f(r.angle_to_target),
            f(r.energy),
        )
        .unwrap();
    }
    s
}

fn response_name(row: usize) -> String {
    if row == 0 {
        return "zeta_bar".into();
    }
    let k = row - 1;
    format!("psi_t{}_{}{}", k / 9 + 1, ['x', 'y', 'z'][(k % 9) / 3], k % 3)
}

pub fn gradient_csv(g: &GradientBundle, fd: &DMatrix<f64>) -> String {
    let mut s = String::from("response,variable,analytic,fd,rel_error\n");
    for row in 0..fd.nrows() {
        for k in 0..fd.ncols() {
            let a = if row == 0 { g.d_zeta_bar[k] } else { g.d_psi[(row - 1, k)] };
            let b = fd[(row, k)];
            let rel = (a - b).abs() / b.abs().max(1e-8);
            writeln!(s, "{},{k},{},{},{}", response_name(row), f(a), f(b), f(rel)).unwrap();
        }
    }
    s
}

pub fn profile_csv(rows: &[(f64, f64, f64)]) -> String {
    let mut s = String::from("x_gait,tau_right,tau_left\n");
    for (x, r, l) in rows {
        writeln!(s, "{},{},{}", f(*x), f(*r), f(*l)).unwrap();
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub status: String,
    pub case: Option<u32>,
    pub iterations: usize,
    pub converged: bool,
    pub feasible: bool,
    pub zeta_bar: Option<f64>,
    pub max_psi: Option<[f64; 3]>,
    pub dof: Option<i64>,
    pub topology: Option<String>,
    pub max_angle_to_target_deg: Option<f64>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
    pub wall_time_s: f64,
}

impl Summary {
    pub fn new(case: Option<u32>, history: &[IterationRecord]) -> Self {
        let last = history.last();
        Self {
            status: "running".into(),
            case,
            iterations: history.len().saturating_sub(1),
            converged: false,
            feasible: last.is_some_and(|r| r.feasible),
            zeta_bar: last.map(|r| r.zeta_bar),
            max_psi: last.map(|r| r.max_psi),
            dof: None,
            topology: None,
            max_angle_to_target_deg: None,
            warnings: vec![],
            error: None,
            wall_time_s: 0.0,
        }
    }

    pub fn record_result(&mut self, r: &SynthesisResult) {
        self.converged = r.converged;
        self.feasible = r.feasible;
        self.zeta_bar = Some(r.report.zeta_bar);
        self.max_psi = Some(r.report.max_psi_groups());
    }

    pub fn record_mechanism(&mut self, g: &MechanismGraph) {
        self.dof = Some(g.dof);
        self.warnings.extend(g.warnings.iter().cloned());
    }

    pub fn record_analysis(&mut self, a: &Analysis) {
        self.topology = Some(a.topology.name().into());
        self.max_angle_to_target_deg = (!a.rows.is_empty()).then(|| a.max_angle());
    }

    pub fn fail(&mut self, status: &str, e: &sbm_synth::Error, elapsed: Duration) {
        self.status = status.into();
        self.error = Some(e.to_string());
        self.wall_time_s = elapsed.as_secs_f64();
    }

    pub fn finish(&mut self, elapsed: Duration) {
        self.status = if self.feasible { "ok" } else { "infeasible" }.into();
        self.wall_time_s = elapsed.as_secs_f64();
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }
}
