//! Built-in case studies and the gait assistance torque profiles.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::Angles;

/// End-effector poses and target output-moment ratios `(κ_X, κ_Y, κ_Z)` per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentCase {
    pub poses: Vec<Angles>,
    pub kappa: Vec<Vector3<f64>>,
    /// `κ_X` counts extension as positive while a positive `φ` pose flexes the
    /// hip, so the right-handed moment has X component `−κ_X`.
    #[serde(default)]
    pub extension_positive: bool,
}

impl MomentCase {
    pub fn new(poses: Vec<Angles>, kappa: Vec<Vector3<f64>>) -> Result<Self> {
        if poses.len() != kappa.len() {
            return Err(Error::Invalid(format!("{} poses but {} moment targets", poses.len(), kappa.len())));
        }
        Ok(Self { poses, kappa, extension_positive: false })
    }

    /// Target moment ratios as a right-handed vector in the pose frame.
    pub fn moment_ratio(&self, t: usize) -> Vector3<f64> {
        let mut k = self.kappa[t];
        if self.extension_positive {
            k.x = -k.x;
        }
        k
    }

    pub fn steps(&self) -> usize {
        self.poses.len()
    }

    /// Target output moment direction at a step (unit length).
    pub fn target_direction(&self, t: usize) -> Vector3<f64> {
        self.moment_ratio(t).normalize()
    }

    /// The first `n` steps.
    pub fn truncated(&self, n: usize) -> Self {
        Self { poses: self.poses[..n].to_vec(), kappa: self.kappa[..n].to_vec(), ..*self }
    }
}

pub fn case_study(id: u32) -> Result<MomentCase> {
    let flexion = || (0..7).map(|i| -0.4 + 0.2 * i as f64);
    let (poses, kappa): (Vec<_>, Vec<_>) = match id {
        1 => flexion().map(|p| (Vector3::new(0.0, 0.0, p), Vector3::new(p, -1.0, 0.0))).unzip(),
        2 => flexion().map(|p| (Vector3::new(0.0, 0.0, p), Vector3::new(0.0, -1.0, 0.0))).unzip(),
        3 => flexion()
            .enumerate()
            .map(|(i, p)| (Vector3::new(0.0, -0.2, p), Vector3::new(-0.8 + 0.4 * i as f64, -1.0, 0.0)))
            .unzip(),
        _ => return Err(Error::UnknownCase(id)),
    };
    Ok(MomentCase { extension_positive: true, ..MomentCase::new(poses, kappa)? })
}

/// Shape-variation bound scale used with a case study.
pub fn default_shape_scale(id: u32) -> f64 {
    if id == 3 {
        0.45
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Leg {
    Right,
    Left,
}

/// One amplified normal distribution `α/(σ√(2π)) exp(−½((x−μ)/σ)²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub sigma: f64,
    pub mu: f64,
    pub alpha: f64,
}

impl Gaussian {
    pub fn eval(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        self.alpha / (self.sigma * (2.0 * PI).sqrt()) * (-0.5 * z * z).exp()
    }
}

/// Time (s) at which the gait cycle starts and its duration.
pub const GAIT_START: f64 = 0.53;
pub const GAIT_PERIOD: f64 = 1.2;

/// Ratio between the time-domain and gait-percent profile values.
pub const GAIT_PROFILE_SCALE: f64 = 1e4;

pub fn time_to_gait(t: f64) -> f64 {
    (t - GAIT_START) / GAIT_PERIOD * 100.0
}

pub fn gait_to_time(x: f64) -> f64 {
    GAIT_START + x / 100.0 * GAIT_PERIOD
}

const fn g(sigma: f64, mu: f64, alpha: f64) -> Gaussian {
    Gaussian { sigma, mu, alpha }
}

/// Authoritative time-domain parameters.
pub fn time_domain_terms(leg: Leg) -> [Gaussian; 4] {
    match leg {
        Leg::Right => [g(0.15, 0.9, -13.0), g(0.09, 1.2, -8.0), g(0.15, 2.1, -13.0), g(0.09, 2.4, -8.0)],
        Leg::Left => [g(0.2, 1.55, -20.0), g(0.09, 1.83, -9.0), g(0.2, 0.35, -20.0), g(0.09, 0.6, -9.0)],
    }
}

/// Published gait-percent parameters (four-digit rounding). The first left-leg
/// mean is listed as +15 %, but its time-domain counterpart maps to −15 %.
pub fn gait_domain_terms(leg: Leg) -> [Gaussian; 4] {
    match leg {
        Leg::Right => [
            g(12.5, 30.83, -0.108),
            g(7.5, 55.83, -0.067),
            g(12.5, 130.83, -0.108),
            g(7.5, 155.83, -0.067),
        ],
        Leg::Left => [g(16.67, -15.0, -0.167), g(7.5, 5.83, -0.075), g(16.67, 85.0, -0.1667), g(7.5, 108.33, -0.075)],
    }
}

/// Actuator torque at time `t` seconds.
pub fn torque_at_time(leg: Leg, t: f64) -> f64 {
    time_domain_terms(leg).iter().map(|g| g.eval(t)).sum()
}

/// Actuator torque at gait percentage `x`, evaluated from the time-domain
/// parameters and expressed in time-domain units.
pub fn torque_profile(leg: Leg, x_gait: f64) -> f64 {
    torque_at_time(leg, gait_to_time(x_gait))
}

/// Torque from the printed gait-percent parameters, rescaled to time-domain units.
pub fn torque_profile_gait_table(leg: Leg, x_gait: f64) -> f64 {
    GAIT_PROFILE_SCALE * gait_domain_terms(leg).iter().map(|g| g.eval(x_gait)).sum::<f64>()
}
