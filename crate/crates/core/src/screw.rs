//! Screw-theory analysis of extracted mechanisms: the virtual joint of an
//! embedded four-bar, the actuation moment direction, equivalent serial arcs and
//! pose-wise output-moment directions.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::cases::MomentCase;
use crate::equilibrium::{NewtonOptions, SystemState, TrajectoryLoad};
use crate::error::{Error, Result};
use crate::grid::SolverParams;
use crate::mechanism::MechanismGraph;
use crate::response::evaluate_network;
use crate::rotation::{rotation_matrix, Angles};

/// Largest allowed mismatch of a joint axis as carried by its two links.
pub const JOINT_TOLERANCE: f64 = 1e-6;

const SINGULAR: f64 = 1e-12;

/// Instantaneous axis of the coupler of a spherical four-bar whose two dyads
/// have axes `(r2, r3)` and `(r4, r5)`.
pub fn virtual_axis(r2: &Vector3<f64>, r3: &Vector3<f64>, r4: &Vector3<f64>, r5: &Vector3<f64>) -> Result<Vector3<f64>> {
    let v = r2.cross(r3).cross(&r4.cross(r5));
    let n = v.norm();
    if n < SINGULAR {
        return Err(Error::SingularConfiguration("four-bar great circles coincide".into()));
    }
    Ok(v / n)
}

pub fn actuation_moment_direction(r6: &Vector3<f64>, rv: &Vector3<f64>) -> Result<Vector3<f64>> {
    let v = r6.cross(rv);
    let n = v.norm();
    if n < SINGULAR {
        return Err(Error::SingularConfiguration("output joint parallel to virtual joint".into()));
    }
    Ok(v / n)
}

/// Arcs `(VL1, VL2)` in radians of the equivalent R–VR–R chain.
pub fn equivalent_serial(r1: &Vector3<f64>, rv: &Vector3<f64>, r6: &Vector3<f64>) -> (f64, f64) {
    (r1.dot(rv).clamp(-1.0, 1.0).acos(), rv.dot(r6).clamp(-1.0, 1.0).acos())
}

/// Latitude `90° − Θ` and longitude `Φ` in degrees; longitude is 0 at the poles.
pub fn moment_lat_long(direction: &Vector3<f64>) -> (f64, f64) {
    let d = direction.normalize();
    let lat = 90.0 - d.z.clamp(-1.0, 1.0).acos().to_degrees();
    let lon = if d.x.hypot(d.y) < 1e-12 { 0.0 } else { d.y.atan2(d.x).to_degrees() };
    (lat, lon)
}

pub fn lat_long_direction(latitude: f64, longitude: f64) -> Vector3<f64> {
    let (sl, cl) = latitude.to_radians().sin_cos();
    let (so, co) = longitude.to_radians().sin_cos();
    Vector3::new(cl * co, cl * so, sl)
}

/// Joint indices of the closed-form families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Topology {
    /// Ground joint, middle joint, output joint.
    SerialRrr { joints: [usize; 3] },
    /// `R1`, the four-bar dyads `(R2, R3)` and `(R4, R5)`, then `R6`.
    R4bR { joints: [usize; 6] },
    Other,
}

impl Topology {
    pub fn name(&self) -> &'static str {
        match self {
            Topology::SerialRrr { .. } => "R-R-R",
            Topology::R4bR { .. } => "R-4B-R",
            Topology::Other => "other",
        }
    }
}

pub fn classify(graph: &MechanismGraph) -> Topology {
    if let Some(chain) = graph.serial_chain() {
        if chain.len() == 3 {
            return Topology::SerialRrr { joints: [chain[0], chain[1], chain[2]] };
        }
    }
    r4br(graph).map_or(Topology::Other, |joints| Topology::R4bR { joints })
}

fn r4br(g: &MechanismGraph) -> Option<[usize; 6]> {
    if g.links.len() != 6 || g.joints.len() != 6 {
        return None;
    }
    let single = |link: usize| -> Option<usize> {
        let js = g.joints_of(link);
        (js.len() == 1).then(|| js[0])
    };
    let j1 = single(g.ground_link)?;
    let l1 = g.other_link(j1, g.ground_link);
    let j6 = single(g.output_link)?;
    let l4 = g.other_link(j6, g.output_link);
    if l1 != g.input_link || l1 == l4 {
        return None;
    }
    let from_l1: Vec<usize> = g.joints_of(l1).into_iter().filter(|&j| j != j1).collect();
    if from_l1.len() != 2 {
        return None;
    }
    let mut dyads = Vec::with_capacity(2);
    for &ja in &from_l1 {
        let mid = g.other_link(ja, l1);
        let rest: Vec<usize> = g.joints_of(mid).into_iter().filter(|&j| j != ja).collect();
        if rest.len() != 1 || g.other_link(rest[0], mid) != l4 {
            return None;
        }
        dyads.push((ja, rest[0]));
    }
    if g.joints_of(l4).len() != 3 {
        return None;
    }
    Some([j1, dyads[0].0, dyads[0].1, dyads[1].0, dyads[1].1, j6])
}

/// Link rotations for a state of the mechanism network; ground is the identity.
pub fn link_rotations(graph: &MechanismGraph, state: &SystemState) -> Vec<Matrix3<f64>> {
    let mut rot = vec![Matrix3::identity(); graph.links.len()];
    for (body, link) in graph.body_links().into_iter().enumerate() {
        rot[link] = rotation_matrix(&state.q[body]);
    }
    rot
}

/// Current joint axes; each joint must be carried identically by both links.
pub fn pose_axes(graph: &MechanismGraph, state: &SystemState) -> Result<Vec<Vector3<f64>>> {
    let rot = link_rotations(graph, state);
    graph
        .joints
        .iter()
        .enumerate()
        .map(|(i, j)| {
            let a = rot[j.links.0] * j.axis();
            let b = rot[j.links.1] * j.axis();
            let separation = (a - b).norm();
            if separation > JOINT_TOLERANCE {
                return Err(Error::JointSeparation { joint: i, separation });
            }
            Ok(a.normalize())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ClosedForm,
    VirtualWork,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRow {
    /// Step `t*`, starting at 1.
    pub step: usize,
    pub pose: Angles,
    pub direction: Vector3<f64>,
    pub latitude: f64,
    pub longitude: f64,
    /// Equivalent serial arcs; absent without a closed form.
    pub vl1: Option<f64>,
    pub vl2: Option<f64>,
    pub angle_to_target: f64,
    pub energy: f64,
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub topology: Topology,
    pub rows: Vec<AnalysisRow>,
}

impl Analysis {
    pub fn max_angle(&self) -> f64 {
        self.rows.iter().map(|r| r.angle_to_target).fold(0.0, f64::max)
    }
}

/// Unsigned direction line and arcs from the closed forms.
fn closed_form(topology: &Topology, axes: &[Vector3<f64>]) -> Result<Option<(Vector3<f64>, f64, f64)>> {
    let (r1, rv, r6) = match *topology {
        Topology::SerialRrr { joints } => (axes[joints[0]], axes[joints[1]], axes[joints[2]]),
        Topology::R4bR { joints } => {
            let r = joints.map(|j| axes[j]);
            (r[0], virtual_axis(&r[1], &r[2], &r[3], &r[4])?, r[5])
        }
        Topology::Other => return Ok(None),
    };
    let d = actuation_moment_direction(&r6, &rv)?;
    let (vl1, vl2) = equivalent_serial(&r1, &rv, &r6);
    Ok(Some((d, vl1, vl2)))
}

/// Drives the mechanism through the case poses without external load and
/// reports the output-moment direction at each pose. Closed-form directions
/// take their sign from the target at the most neutral pose and stay
/// continuous from there.
pub fn analyze(
    graph: &MechanismGraph,
    case: &MomentCase,
    params: &SolverParams,
    opts: &NewtonOptions,
) -> Result<Analysis> {
    graph.validate()?;
    let net = graph.network(params.k_max);
    let eval = evaluate_network(&net, case, params, TrajectoryLoad::None, opts)?;
    let topology = classify(graph);
    let n = case.steps();

    let mut lines = Vec::with_capacity(n);
    for t in 1..=n {
        let axes = pose_axes(graph, &eval.trajectory.states[t])?;
        lines.push(closed_form(&topology, &axes)?);
    }

    let neutral = (0..n)
        .min_by(|&a, &b| case.poses[a].norm().total_cmp(&case.poses[b].norm()))
        .unwrap_or(0);
    let mut signed: Vec<Option<Vector3<f64>>> = vec![None; n];
    if let Some(&Some((d, _, _))) = lines.get(neutral) {
        let d = if d.dot(&case.target_direction(neutral)) < 0.0 { -d } else { d };
        signed[neutral] = Some(d);
        for t in (neutral + 1..n).chain((0..neutral).rev()) {
            let prev = if t > neutral { signed[t - 1] } else { signed[t + 1] };
            if let (Some((d, _, _)), Some(p)) = (lines[t], prev) {
                signed[t] = Some(if d.dot(&p) < 0.0 { -d } else { d });
            }
        }
    }

    let rows = (0..n)
        .map(|i| {
            let step = &eval.report.steps[i];
            let (direction, vl1, vl2, method) = match (signed[i], lines[i]) {
                (Some(d), Some((_, a, b))) => (d, Some(a), Some(b), Method::ClosedForm),
                _ => (Vector3::from(step.moment).normalize(), None, None, Method::VirtualWork),
            };
            let (latitude, longitude) = moment_lat_long(&direction);
            AnalysisRow {
                step: i + 1,
                pose: case.poses[i],
                direction,
                latitude,
                longitude,
                vl1,
                vl2,
                angle_to_target: direction.dot(&case.target_direction(i)).clamp(-1.0, 1.0).acos().to_degrees(),
                energy: step.energy,
                method,
            }
        })
        .collect();
    Ok(Analysis { topology, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::{Joint, Link};
    use approx::assert_relative_eq;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    fn joint(links: (usize, usize), axis: Vector3<f64>) -> Joint {
        Joint { links, node: None, axis: axis.normalize().into() }
    }

    fn graph(joints: Vec<Joint>, n_links: usize, output: usize) -> MechanismGraph {
        let mut g = MechanismGraph {
            links: (0..n_links).map(|id| Link { id, blocks: vec![] }).collect(),
            joints,
            ground_link: 0,
            input_link: 1,
            output_link: output,
            dof: 0,
            debris: vec![],
            warnings: vec![],
        };
        g.dof = crate::mechanism::mobility(&g);
        g
    }

    #[test]
    fn virtual_axis_of_orthonormal_dyads() {
        let rv = virtual_axis(&v(1.0, 0.0, 0.0), &v(0.0, 0.0, 1.0), &v(0.0, 1.0, 0.0), &v(0.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(rv, v(0.0, 0.0, 1.0), epsilon = 1e-15);
        assert!(virtual_axis(&v(1.0, 0.0, 0.0), &v(0.0, 1.0, 0.0), &v(1.0, 1.0, 0.0), &v(1.0, -1.0, 0.0)).is_err());
    }

    #[test]
    fn actuation_direction_and_arcs() {
        let d = actuation_moment_direction(&v(1.0, 0.0, 0.0), &v(0.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(d, v(0.0, -1.0, 0.0), epsilon = 1e-15);
        assert!(actuation_moment_direction(&v(1.0, 0.0, 0.0), &v(-1.0, 0.0, 0.0)).is_err());
        let (a, b) = equivalent_serial(&v(1.0, 0.0, 0.0), &v(1.0, 0.0, 0.0), &v(0.0, 1.0, 0.0));
        assert_eq!(a, 0.0);
        assert_relative_eq!(b, std::f64::consts::FRAC_PI_2, epsilon = 1e-15);
    }

    #[test]
    fn lat_long_conventions() {
        assert_eq!(moment_lat_long(&v(0.0, -1.0, 0.0)), (0.0, -90.0));
        let (lat, lon) = moment_lat_long(&v(0.0, 0.0, 1.0));
        assert_relative_eq!(lat, 90.0, epsilon = 1e-12);
        assert_eq!(lon, 0.0);
        let d = v(0.3, -0.8, 0.2).normalize();
        let (lat, lon) = moment_lat_long(&d);
        assert_relative_eq!(lat_long_direction(lat, lon), d, epsilon = 1e-10);
    }

    #[test]
    fn classifies_both_families() {
        let rrr = graph(
            vec![joint((0, 1), v(0.0, -1.0, 0.0)), joint((1, 2), v(1.0, -1.0, 1.0)), joint((2, 3), v(1.0, 0.0, 1.0))],
            4,
            3,
        );
        assert_eq!(classify(&rrr), Topology::SerialRrr { joints: [0, 1, 2] });
        let r4br = graph(
            vec![
                joint((0, 1), v(0.0, -1.0, 0.0)),
                joint((1, 2), v(-0.2, -0.7, 0.7)),
                joint((2, 4), v(0.7, -0.4, 0.6)),
                joint((1, 3), v(0.0, -0.98, 0.2)),
                joint((3, 4), v(0.9, -0.4, 0.1)),
                joint((4, 5), v(0.8, 0.3, 0.6)),
            ],
            6,
            5,
        );
        assert_eq!(r4br.dof, 3);
        assert_eq!(classify(&r4br), Topology::R4bR { joints: [0, 1, 2, 3, 4, 5] });
    }

    #[test]
    fn zero_state_keeps_axes() {
        let g = graph(vec![joint((0, 1), v(0.0, -1.0, 0.0)), joint((1, 2), v(1.0, 0.0, 0.0))], 3, 2);
        let axes = pose_axes(&g, &SystemState::zeros(2)).unwrap();
        assert_relative_eq!(axes[1], v(1.0, 0.0, 0.0), epsilon = 1e-15);
        let mut s = SystemState::zeros(2);
        s.q[1] = v(0.0, 0.1, 0.0);
        assert!(matches!(pose_axes(&g, &s), Err(Error::JointSeparation { joint: 1, .. })));
    }
}
