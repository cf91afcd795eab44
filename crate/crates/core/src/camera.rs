//! Orbit cameras looking at the scene origin.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type Vec3 = [f64; 3];

/// Camera on a sphere of `radius` around the origin, +y up. Yaw 0 / pitch 0
/// sits on the +z axis looking down -z (the frontal view).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraPose {
    pub yaw: f64,
    #[serde(default)]
    pub pitch: f64,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_fov")]
    pub fov: f64,
}

pub const DEFAULT_RADIUS: f64 = 2.7;
pub const DEFAULT_FOV: f64 = 0.5;

fn default_radius() -> f64 {
    DEFAULT_RADIUS
}

fn default_fov() -> f64 {
    DEFAULT_FOV
}

impl Default for CameraPose {
    fn default() -> Self {
        Self::frontal()
    }
}

impl CameraPose {
    pub fn frontal() -> Self {
        Self::with_yaw(0.0)
    }

    pub fn with_yaw(yaw: f64) -> Self {
        Self {
            yaw,
            pitch: 0.0,
            radius: DEFAULT_RADIUS,
            fov: DEFAULT_FOV,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.yaw, self.pitch, self.radius, self.fov]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(invalid("camera pose has non-finite fields"));
        }
        if !(-PI..=PI).contains(&self.yaw) {
            return Err(invalid(format!("yaw {} outside [-pi, pi]", self.yaw)));
        }
        if !(-FRAC_PI_2..=FRAC_PI_2).contains(&self.pitch) {
            return Err(invalid(format!("pitch {} outside [-pi/2, pi/2]", self.pitch)));
        }
        if self.radius <= 0.0 {
            return Err(invalid(format!("camera radius {} must be positive", self.radius)));
        }
        if !(self.fov > 0.0 && self.fov < PI) {
            return Err(invalid(format!("fov {} outside (0, pi)", self.fov)));
        }
        Ok(())
    }

    pub fn origin(&self) -> Vec3 {
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        [
            self.radius * cp * sy,
            self.radius * sp,
            self.radius * cp * cy,
        ]
    }

    /// Orthonormal (right, up, forward) frame.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let forward = normalize(scale(self.origin(), -1.0));
        let mut right = cross(forward, [0.0, 1.0, 0.0]);
        if norm(right) < 1e-12 {
            // Looking straight up or down.
            right = [1.0, 0.0, 0.0];
        }
        let right = normalize(right);
        let up = cross(right, forward);
        (right, up, forward)
    }

    /// Unit ray direction through the centre of pixel (row, col) of an
    /// `height` x `width` grid.
    pub fn ray_direction(&self, row: usize, col: usize, height: usize, width: usize) -> Vec3 {
        let (right, up, forward) = self.basis();
        let half = (self.fov * 0.5).tan();
        let x = ((col as f64 + 0.5) / width as f64 * 2.0 - 1.0) * half;
        let y = (1.0 - (row as f64 + 0.5) / height as f64 * 2.0) * half;
        normalize([
            forward[0] + x * right[0] + y * up[0],
            forward[1] + x * right[1] + y * up[1],
            forward[2] + x * right[2] + y * up[2],
        ])
    }

    /// Row-major ray directions for a full image grid.
    pub fn ray_directions(&self, height: usize, width: usize) -> Vec<Vec3> {
        let mut dirs = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                dirs.push(self.ray_direction(row, col, height, width));
            }
        }
        dirs
    }
}

/// Evenly spaced frontal-pitch yaw sweep, e.g. `yaw_sweep(&[-0.4, 0.0, 0.4])`.
pub fn yaw_sweep(yaws: &[f64]) -> Vec<CameraPose> {
    yaws.iter().map(|&y| CameraPose::with_yaw(y)).collect()
}

pub const DEFAULT_SWEEP_YAWS: [f64; 5] = [-0.4, -0.2, 0.0, 0.2, 0.4];

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}
