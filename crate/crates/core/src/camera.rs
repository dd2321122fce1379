//! Calibrated perspective cameras with two-term radial distortion.
//!
//! Conventions: world-to-camera `x_c = R·x + t`, camera looks down `+z`,
//! pixel origin at the top-left corner with `y` pointing down.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{vec3, Mat3, Vec3};
use crate::tensor::Real;

/// Points closer than this to the image plane count as behind the camera.
pub const DEPTH_EPSILON: Real = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub fx: Real,
    pub fy: Real,
    pub cx: Real,
    pub cy: Real,
    /// World-to-camera rotation.
    pub rotation: Mat3,
    /// Translation in camera coordinates.
    pub translation: Vec3,
    /// Radial coefficients `[k1, k2]`.
    pub dist: [Real; 2],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Pixel coordinates (x right, y down).
    pub uv: [Real; 2],
    pub depth: Real,
    pub in_front: bool,
}

impl Projection {
    /// In front of the camera and inside the bilinear-sampleable rectangle.
    pub fn in_image(&self, cam: &Camera) -> bool {
        self.in_front
            && self.uv[0] >= 0.0
            && self.uv[1] >= 0.0
            && self.uv[0] <= (cam.width - 1) as Real
            && self.uv[1] <= (cam.height - 1) as Real
    }
}

impl Camera {
    /// Camera center `o = −Rᵀ·t`.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    fn distort(&self, u: Real, v: Real) -> (Real, Real) {
        let r2 = u * u + v * v;
        let f = 1.0 + self.dist[0] * r2 + self.dist[1] * r2 * r2;
        (u * f, v * f)
    }

    pub fn project(&self, p: Vec3) -> Projection {
        let xc = self.to_camera(p);
        let (u, v) = self.distort(xc.x / xc.z, xc.y / xc.z);
        Projection {
            uv: [self.fx * u + self.cx, self.fy * v + self.cy],
            depth: xc.z,
            in_front: xc.z > DEPTH_EPSILON,
        }
    }

    /// Projection plus the 2×3 Jacobian `∂uv/∂p`.
    pub fn project_with_jacobian(&self, p: Vec3) -> (Projection, [[Real; 3]; 2]) {
        let xc = self.to_camera(p);
        let iz = 1.0 / xc.z;
        let (u, v) = (xc.x * iz, xc.y * iz);
        let (k1, k2) = (self.dist[0], self.dist[1]);
        let r2 = u * u + v * v;
        let f = 1.0 + k1 * r2 + k2 * r2 * r2;
        // ∂f/∂(r²)
        let fr = k1 + 2.0 * k2 * r2;
        let du_du = f + 2.0 * u * u * fr;
        let du_dv = 2.0 * u * v * fr;
        let dv_du = du_dv;
        let dv_dv = f + 2.0 * v * v * fr;
        // ∂(u,v)/∂x_c
        let dn = [[iz, 0.0, -u * iz], [0.0, iz, -v * iz]];
        let mut jc = [[0.0; 3]; 2];
        for k in 0..3 {
            jc[0][k] = self.fx * (du_du * dn[0][k] + du_dv * dn[1][k]);
            jc[1][k] = self.fy * (dv_du * dn[0][k] + dv_dv * dn[1][k]);
        }
        // chain through x_c = R·p + t
        let r = &self.rotation.0;
        let mut j = [[0.0; 3]; 2];
        for row in 0..2 {
            for col in 0..3 {
                j[row][col] = (0..3).map(|k| jc[row][k] * r[k][col]).sum();
            }
        }
        let proj = Projection {
            uv: [self.fx * u * f + self.cx, self.fy * v * f + self.cy],
            depth: xc.z,
            in_front: xc.z > DEPTH_EPSILON,
        };
        (proj, j)
    }

    /// Unit vector from `p` toward the camera center.
    pub fn view_direction(&self, p: Vec3) -> Result<Vec3> {
        let d = self.center() - p;
        let n = d.norm();
        if n < 1e-12 {
            return Err(Error::Degenerate(format!(
                "point coincides with the center of camera {}",
                self.name
            )));
        }
        Ok(d / n)
    }

    /// Unit ray direction (world frame) through pixel `uv` for a
    /// distortion-free camera.
    pub fn pixel_ray(&self, uv: [Real; 2]) -> Vec3 {
        let dir_cam = vec3((uv[0] - self.cx) / self.fx, (uv[1] - self.cy) / self.fy, 1.0);
        (self.rotation.transpose() * dir_cam)
            .normalized()
            .expect("pixel ray is never zero")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Calibration(format!("camera {}: {m}", self.name)));
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive".into());
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad(format!("focal lengths must be positive, got ({}, {})", self.fx, self.fy));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as Real && self.cy >= 0.0 && self.cy < self.height as Real) {
            return bad(format!("principal point ({}, {}) outside the image", self.cx, self.cy));
        }
        let orth = self.rotation.orthonormality_error();
        if orth > 1e-9 {
            return bad(format!("rotation is not orthonormal (error {orth:e})"));
        }
        let det = self.rotation.det();
        if (det - 1.0).abs() > 1e-9 {
            return bad(format!("rotation determinant is {det}, expected +1"));
        }
        if !self.translation.is_finite() || !self.dist.iter().all(|d| d.is_finite()) {
            return bad("non-finite translation or distortion".into());
        }
        if !self.distortion_is_monotone() {
            return bad(format!(
                "radial distortion {:?} is not monotone within the image",
                self.dist
            ));
        }
        Ok(())
    }

    /// Largest normalized radius reached by the image corners.
    pub fn normalized_radius(&self) -> Real {
        let corners = [
            (0.0, 0.0),
            (self.width as Real, 0.0),
            (0.0, self.height as Real),
            (self.width as Real, self.height as Real),
        ];
        corners
            .iter()
            .map(|&(x, y)| {
                let u = (x - self.cx) / self.fx;
                let v = (y - self.cy) / self.fy;
                (u * u + v * v).sqrt()
            })
            .fold(0.0, Real::max)
    }

    /// `d/dr [r(1 + k1 r² + k2 r⁴)] = 1 + 3k1 s + 5k2 s²` with `s = r²`
    /// stays positive for `s` in `[0, s_max]`.
    pub fn distortion_is_monotone(&self) -> bool {
        let s_max = self.normalized_radius().powi(2);
        let (k1, k2) = (self.dist[0], self.dist[1]);
        let g = |s: Real| 1.0 + 3.0 * k1 * s + 5.0 * k2 * s * s;
        let mut ok = g(0.0) > 0.0 && g(s_max) > 0.0;
        if k2 != 0.0 {
            let vertex = -3.0 * k1 / (10.0 * k2);
            if vertex > 0.0 && vertex < s_max {
                ok &= g(vertex) > 0.0;
            }
        }
        ok
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rig {
    pub cameras: Vec<Camera>,
}

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    name: String,
    width: usize,
    height: usize,
    #[serde(rename = "K")]
    k: [[Real; 3]; 3],
    #[serde(rename = "R")]
    r: [[Real; 3]; 3],
    t: [Real; 3],
    dist: [Real; 2],
}

#[derive(Serialize, Deserialize)]
struct RigRecord {
    cameras: Vec<CameraRecord>,
}

impl Rig {
    pub fn new(cameras: Vec<Camera>) -> Result<Self> {
        let rig = Rig { cameras };
        rig.validate()?;
        Ok(rig)
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.len() < 2 {
            return Err(Error::Calibration(format!(
                "a rig needs at least 2 cameras, got {}",
                self.cameras.len()
            )));
        }
        let mut names = HashSet::new();
        for cam in &self.cameras {
            if !names.insert(cam.name.as_str()) {
                return Err(Error::Calibration(format!("duplicate camera name {:?}", cam.name)));
            }
            cam.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: RigRecord = serde_json::from_str(text).map_err(|e| Error::parse("calibration JSON", e))?;
        let cameras = rec
            .cameras
            .into_iter()
            .map(|c| {
                let k = c.k;
                if k[0][1] != 0.0 || k[1][0] != 0.0 || k[2] != [0.0, 0.0, 1.0] {
                    return Err(Error::Calibration(format!(
                        "camera {}: K must be [[fx,0,cx],[0,fy,cy],[0,0,1]]",
                        c.name
                    )));
                }
                Ok(Camera {
                    name: c.name,
                    width: c.width,
                    height: c.height,
                    fx: k[0][0],
                    fy: k[1][1],
                    cx: k[0][2],
                    cy: k[1][2],
                    rotation: Mat3(c.r),
                    translation: Vec3::from_slice(&c.t),
                    dist: c.dist,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Rig::new(cameras)
    }

    pub fn to_json(&self) -> String {
        let rec = RigRecord {
            cameras: self
                .cameras
                .iter()
                .map(|c| CameraRecord {
                    name: c.name.clone(),
                    width: c.width,
                    height: c.height,
                    k: [[c.fx, 0.0, c.cx], [0.0, c.fy, c.cy], [0.0, 0.0, 1.0]],
                    r: c.rotation.0,
                    t: c.translation.to_array(),
                    dist: c.dist,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&rec).expect("rig serialization cannot fail")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Rig::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Same cameras with intrinsics rescaled for images resized by `factor`.
    pub fn scaled(&self, factor: Real) -> Rig {
        let cameras = self
            .cameras
            .iter()
            .map(|c| {
                let width = ((c.width as Real * factor).round() as usize).max(1);
                let height = ((c.height as Real * factor).round() as usize).max(1);
                let sx = width as Real / c.width as Real;
                let sy = height as Real / c.height as Real;
                // Pixel centers: x' + 0.5 = (x + 0.5)·s
                Camera {
                    width,
                    height,
                    fx: c.fx * sx,
                    fy: c.fy * sy,
                    cx: (c.cx + 0.5) * sx - 0.5,
                    cy: (c.cy + 0.5) * sy - 0.5,
                    ..c.clone()
                }
            })
            .collect();
        Rig { cameras }
    }
}

impl Rig {
    /// Cameras matching images box-filtered by an integer `factor`, as done
    /// by [`crate::io::GrayImage::downsample`].
    pub fn downsampled(&self, factor: usize) -> Rig {
        assert!(factor >= 1, "downsample factor must be >= 1");
        let s = 1.0 / factor as Real;
        let cameras = self
            .cameras
            .iter()
            .map(|c| Camera {
                width: c.width.div_ceil(factor),
                height: c.height.div_ceil(factor),
                fx: c.fx * s,
                fy: c.fy * s,
                cx: (c.cx + 0.5) * s - 0.5,
                cy: (c.cy + 0.5) * s - 0.5,
                ..c.clone()
            })
            .collect();
        Rig { cameras }
    }
}

pub fn load_rig(path: &Path) -> Result<Rig> {
    Rig::load(path)
}
