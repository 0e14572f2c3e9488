//! Tait-Bryan rotations, their angle derivatives, and the SO(3) exponential/logarithm.
//!
//! Block orientations are parameterized as `A(ρ, θ, φ) = R_y(ρ) · R_z(θ) · R_x(φ)`.
//! The angle triple is stored as a [`Vector3`] in the order `(ρ, θ, φ)`.

use nalgebra::{Matrix3, Vector3};

/// Angle triple `(ρ, θ, φ)` in radians.
pub type Angles = Vector3<f64>;

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn d_rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn d_rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn d_rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

// Second derivatives of the elementary rotations: minus the rotation with the
// fixed-axis entry zeroed.
fn dd_rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -c, s, 0.0, -s, -c)
}

fn dd_rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-c, 0.0, -s, 0.0, 0.0, 0.0, s, 0.0, -c)
}

fn dd_rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-c, s, 0.0, -s, -c, 0.0, 0.0, 0.0, 0.0)
}

/// Block orientation `R_y(ρ) R_z(θ) R_x(φ)`.
pub fn rotation_matrix(q: &Angles) -> Matrix3<f64> {
    rot_y(q[0]) * rot_z(q[1]) * rot_x(q[2])
}

/// A rotation matrix together with its first and second partial derivatives
/// with respect to `(ρ, θ, φ)`.
#[derive(Debug, Clone)]
pub struct RotationDerivs {
    pub a: Matrix3<f64>,
    pub d: [Matrix3<f64>; 3],
    pub dd: [[Matrix3<f64>; 3]; 3],
}

impl RotationDerivs {
    pub fn new(q: &Angles) -> Self {
        let (ry, rz, rx) = (rot_y(q[0]), rot_z(q[1]), rot_x(q[2]));
        let (dy, dz, dx) = (d_rot_y(q[0]), d_rot_z(q[1]), d_rot_x(q[2]));
        let (ddy, ddz, ddx) = (dd_rot_y(q[0]), dd_rot_z(q[1]), dd_rot_x(q[2]));

        let d = [dy * rz * rx, ry * dz * rx, ry * rz * dx];
        let m01 = dy * dz * rx;
        let m02 = dy * rz * dx;
        let m12 = ry * dz * dx;
        let dd = [
            [ddy * rz * rx, m01, m02],
            [m01, ry * ddz * rx, m12],
            [m02, m12, ry * rz * ddx],
        ];
        Self { a: ry * rz * rx, d, dd }
    }

    /// Identity orientation with vanishing derivatives, used for the fixed ground body.
    pub fn fixed_identity() -> Self {
        Self {
            a: Matrix3::identity(),
            d: [Matrix3::zeros(); 3],
            dd: [[Matrix3::zeros(); 3]; 3],
        }
    }
}

/// Recovers `(ρ, θ, φ)` from a rotation matrix, with `θ ∈ [−π/2, π/2]`.
pub fn angles_from_matrix(a: &Matrix3<f64>) -> Angles {
    let theta = a[(1, 0)].clamp(-1.0, 1.0).asin();
    let phi = (-a[(1, 2)]).atan2(a[(1, 1)]);
    let rho = (-a[(2, 0)]).atan2(a[(0, 0)]);
    Vector3::new(rho, theta, phi)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// `exp(angle · [axis]×)` by the Rodrigues formula. `axis` must be unit length.
pub fn exp_axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = skew(axis);
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

/// Rotation about a unit `axis` given as a rotation vector `axis · angle`.
pub fn exp_rotation_vector(v: &Vector3<f64>) -> Matrix3<f64> {
    let angle = v.norm();
    if angle == 0.0 {
        return Matrix3::identity();
    }
    exp_axis_angle(&(v / angle), angle)
}

/// Axis-angle decomposition of a rotation: returns `(ω, Δλ)` with `Δλ ∈ [0, π]`
/// and `exp(Δλ [ω]×) = rotation`. The axis of the identity is reported as `e_z`.
pub fn rotation_log(rotation: &Matrix3<f64>) -> (Vector3<f64>, f64) {
    let asym = vee(&(rotation - rotation.transpose())) * 0.5;
    let sin_l = asym.norm();
    let cos_l = 0.5 * (rotation.trace() - 1.0);
    let angle = sin_l.atan2(cos_l);

    if angle == 0.0 || sin_l == 0.0 && cos_l > 0.0 {
        return (Vector3::z(), 0.0);
    }
    if cos_l > -0.5 {
        return (asym / sin_l, angle);
    }

    // Near π the antisymmetric part vanishes; take the axis from the symmetric part.
    let sym = (rotation + rotation.transpose()) * 0.5;
    let outer = (sym - Matrix3::identity() * cos_l) / (1.0 - cos_l);
    let mut col = 0;
    for i in 1..3 {
        if outer[(i, i)] > outer[(col, col)] {
            col = i;
        }
    }
    let mut axis: Vector3<f64> = outer.column(col).into();
    axis /= axis.norm();
    if axis.dot(&asym) < 0.0 {
        axis = -axis;
    }
    (axis, angle)
}

/// Rotation vector `Δλ · ω` of a rotation matrix.
pub fn rotation_vector(rotation: &Matrix3<f64>) -> Vector3<f64> {
    let (axis, angle) = rotation_log(rotation);
    axis * angle
}
