//! Minimal 3-vector and quaternion arithmetic.
//!
//! Kept in-crate rather than pulling in a linear-algebra dependency: the
//! wire format pins 3-vectors to `[x, y, z]` arrays and quaternions to
//! `[w, x, y, z]` arrays (w first), and the only operations needed are
//! norms, lerp, slerp, and the geodesic angle.

use serde::{Deserialize, Serialize};

/// A 3-vector in meters, serialized as `[x, y, z]`.
pub type Vec3 = [f64; 3];

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn dist(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

pub fn lerp(a: Vec3, b: Vec3, t: f64) -> Vec3 {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

pub fn is_finite(a: Vec3) -> bool {
    a.iter().all(|c| c.is_finite())
}

/// Unit quaternion, serialized as `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat(pub [f64; 4]);

impl Quat {
    pub const IDENTITY: Quat = Quat([1.0, 0.0, 0.0, 0.0]);

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat([w, x, y, z])
    }

    /// Rotation of `angle` radians about a (normalized) axis.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = norm(axis);
        if n == 0.0 {
            return Quat::IDENTITY;
        }
        let half = angle * 0.5;
        let s = half.sin() / n;
        Quat([half.cos(), axis[0] * s, axis[1] * s, axis[2] * s])
    }

    /// Convert a row-major 3x3 rotation matrix to a quaternion
    /// (Shepperd's method, picking the numerically largest pivot).
    pub fn from_rotation_matrix(m: &[f64; 9]) -> Self {
        let (m00, m01, m02) = (m[0], m[1], m[2]);
        let (m10, m11, m12) = (m[3], m[4], m[5]);
        let (m20, m21, m22) = (m[6], m[7], m[8]);
        let trace = m00 + m11 + m22;
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Quat([s / 4.0, (m21 - m12) / s, (m02 - m20) / s, (m10 - m01) / s])
        } else if m00 > m11 && m00 > m22 {
            let s = (1.0 + m00 - m11 - m22).sqrt() * 2.0;
            Quat([(m21 - m12) / s, s / 4.0, (m01 + m10) / s, (m02 + m20) / s])
        } else if m11 > m22 {
            let s = (1.0 + m11 - m00 - m22).sqrt() * 2.0;
            Quat([(m02 - m20) / s, (m01 + m10) / s, s / 4.0, (m12 + m21) / s])
        } else {
            let s = (1.0 + m22 - m00 - m11).sqrt() * 2.0;
            Quat([(m10 - m01) / s, (m02 + m20) / s, (m12 + m21) / s, s / 4.0])
        };
        q.normalized()
    }

    pub fn w(&self) -> f64 {
        self.0[0]
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn normalized(&self) -> Quat {
        let n = self.norm();
        Quat([self.0[0] / n, self.0[1] / n, self.0[2] / n, self.0[3] / n])
    }

    fn neg(&self) -> Quat {
        Quat([-self.0[0], -self.0[1], -self.0[2], -self.0[3]])
    }

    /// Sign-canonical form with w >= 0 (q and -q are the same rotation).
    pub fn canonical(&self) -> Quat {
        if self.w() < 0.0 {
            self.neg()
        } else {
            *self
        }
    }

    pub fn dot(&self, other: &Quat) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Geodesic angle between two rotations, in [0, pi].
    pub fn geodesic_angle(&self, other: &Quat) -> f64 {
        let d = self.dot(other).abs().clamp(0.0, 1.0);
        2.0 * d.acos()
    }

    /// Spherical interpolation along the shorter arc.
    ///
    /// Both endpoints are sign-canonicalized (w >= 0) first, then the
    /// second is flipped if needed so the interpolation never crosses
    /// the longer arc. Falls back to normalized lerp for nearly
    /// parallel inputs.
    pub fn slerp(&self, other: &Quat, t: f64) -> Quat {
        let a = self.canonical();
        let mut b = other.canonical();
        let mut cos_theta = a.dot(&b);
        if cos_theta < 0.0 {
            b = b.neg();
            cos_theta = -cos_theta;
        }
        if cos_theta > 1.0 - 1e-10 {
            let mixed = [
                a.0[0] + (b.0[0] - a.0[0]) * t,
                a.0[1] + (b.0[1] - a.0[1]) * t,
                a.0[2] + (b.0[2] - a.0[2]) * t,
                a.0[3] + (b.0[3] - a.0[3]) * t,
            ];
            return Quat(mixed).normalized();
        }
        let theta = cos_theta.clamp(-1.0, 1.0).acos();
        let sin_theta = theta.sin();
        let wa = ((1.0 - t) * theta).sin() / sin_theta;
        let wb = (t * theta).sin() / sin_theta;
        Quat([
            wa * a.0[0] + wb * b.0[0],
            wa * a.0[1] + wb * b.0[1],
            wa * a.0[2] + wb * b.0[2],
            wa * a.0[3] + wb * b.0[3],
        ])
    }
}
