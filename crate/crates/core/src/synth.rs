//! Synthetic capture: a deformable template head with a detached
//! eyeball-like component, ring rigs, a z-buffer renderer, noisy scans, and
//! the on-disk dataset layout.
//!
//! Layout written by [`build_dataset`]:
//!
//! ```text
//! dataset/rig.json
//! dataset/template.obj
//! dataset/spec.json
//! dataset/masks/{eyeball,face,scalp,neck}.txt
//! dataset/{train,test}/{frame_id}/view_{c}.pgm, scan.ply, gt.obj, ref.obj, params.json
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Rig};
use crate::error::{Error, Result};
use crate::geom::{vec3, Mat3, Vec3};
use crate::io::{self, GrayImage};
use crate::losses::mask_to_string;
use crate::mesh::{ScanCloud, TriMesh};
use crate::par;
use crate::tensor::Real;

/// Radius of the undeformed template head.
pub const HEAD_RADIUS: Real = 100.0;
const EYE_RADIUS: Real = 10.0;
/// Template-space direction of the eyeball analog.
const EYE_DIR: Vec3 = vec3(0.0, 0.3, 0.953_939_201_416_945_6);
/// How far the eyeball center sits outside the head surface.
const EYE_OUT: Real = 4.0;

/// Bump centers (template directions) driven by the expression coefficients.
const EXPRESSION_CENTERS: [Vec3; 6] = [
    vec3(0.0, -0.4, 0.916_515_138_991_168),
    vec3(0.35, 0.45, 0.821_583_836_257_749),
    vec3(-0.35, 0.45, 0.821_583_836_257_749),
    vec3(0.6, -0.1, 0.793_725_393_319_377),
    vec3(-0.6, -0.1, 0.793_725_393_319_377),
    vec3(0.0, -0.8, 0.6),
];
const EXPRESSION_WIDTH2: Real = 0.06;
const MAX_RADIAL: Real = 0.29;

/// Unit icosphere: icosahedron with `levels` midpoint subdivisions.
pub fn icosphere(levels: usize) -> TriMesh {
    let t = (1.0 + (5.0 as Real).sqrt()) / 2.0;
    let mut v: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| vec3(x, y, z) / vec3(x, y, z).norm())
    .collect();
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, v: &mut Vec<Vec3>| {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let m = (v[a] + v[b]) * 0.5;
                v.push(m / m.norm());
                v.len() - 1
            })
        };
        let mut next = Vec::with_capacity(f.len() * 4);
        for &[a, b, c] in &f {
            let ab = mid(a, b, &mut v);
            let bc = mid(b, c, &mut v);
            let ca = mid(c, a, &mut v);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    TriMesh { vertices: v, faces: f }
}

/// Canonical head: a radius-100 icosphere (162 vertices) plus a detached
/// icosahedron (12 vertices) standing in for an eyeball.
#[derive(Clone, Debug)]
pub struct Template {
    pub mesh: TriMesh,
    /// Number of head-surface vertices; the eyeball follows.
    pub n_head: usize,
    /// Unit template directions of the head vertices.
    directions: Vec<Vec3>,
    /// Unit offsets of the eyeball vertices from the eyeball center.
    eye_offsets: Vec<Vec3>,
}

impl Default for Template {
    fn default() -> Self {
        Template::new()
    }
}

impl Template {
    pub fn new() -> Template {
        let head = icosphere(2);
        let eye = icosphere(0);
        let n_head = head.n_vertices();
        let directions = head.vertices.clone();
        let eye_offsets = eye.vertices.clone();
        let mut faces = head.faces.clone();
        faces.extend(eye.faces.iter().map(|f| f.map(|i| i + n_head)));
        let mut t = Template {
            mesh: TriMesh {
                vertices: vec![Vec3::ZERO; n_head + eye_offsets.len()],
                faces,
            },
            n_head,
            directions,
            eye_offsets,
        };
        t.mesh = t.deform(&SynthHeadParams::default());
        t
    }

    pub fn n_vertices(&self) -> usize {
        self.mesh.n_vertices()
    }

    /// Vertex indices of the detached component.
    pub fn eyeball(&self) -> Vec<usize> {
        (self.n_head..self.mesh.n_vertices()).collect()
    }

    /// Disjoint evaluation regions on the head surface, by template direction.
    pub fn regions(&self) -> Vec<(String, Vec<usize>)> {
        let pick = |f: &dyn Fn(Vec3) -> bool| -> Vec<usize> {
            (0..self.n_head).filter(|&i| f(self.directions[i])).collect()
        };
        let face = |d: Vec3| d.z > 0.35 && d.y > -0.55 && d.y < 0.6;
        vec![
            ("face".to_string(), pick(&face)),
            ("scalp".to_string(), pick(&|d| d.y >= 0.5 && !face(d))),
            ("neck".to_string(), pick(&|d| d.y < -0.6 && !face(d))),
        ]
    }

    fn radial(&self, d: Vec3, p: &SynthHeadParams, expression_scale: Real) -> Real {
        let id = &p.identity;
        let mut r = id[0] * d.x * d.x + id[1] * d.y * d.y + id[2] * d.z * d.z + id[3] * d.x;
        for (c, e) in EXPRESSION_CENTERS.iter().zip(&p.expression) {
            r += expression_scale * e * (-(1.0 - d.dot(*c)) / EXPRESSION_WIDTH2).exp();
        }
        1.0 + r.clamp(-MAX_RADIAL, MAX_RADIAL)
    }

    fn deform_scaled(&self, p: &SynthHeadParams, expression_scale: Real) -> TriMesh {
        let rot = Mat3::from_axis_angle(p.rotation);
        let place = |q: Vec3| rot * q + p.translation;
        let mut v: Vec<Vec3> = self
            .directions
            .iter()
            .map(|&d| place(d * (HEAD_RADIUS * self.radial(d, p, expression_scale))))
            .collect();
        let eye_dir = EYE_DIR / EYE_DIR.norm();
        let eye_center = eye_dir * (HEAD_RADIUS * self.radial(eye_dir, p, expression_scale) + EYE_OUT) + p.eye_offset;
        v.extend(self.eye_offsets.iter().map(|&o| place(eye_center + o * EYE_RADIUS)));
        self.mesh.with_vertices(v)
    }

    /// Deformed, posed head in template correspondence.
    pub fn deform(&self, p: &SynthHeadParams) -> TriMesh {
        self.deform_scaled(p, 1.0)
    }
}

/// Identity, expression, pose, and eyeball offset of one synthetic frame.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthHeadParams {
    /// Quadratic radius terms along x, y, z and a left/right asymmetry.
    pub identity: [Real; 4],
    /// Amplitudes of the localized bumps (fractions of the head radius).
    pub expression: [Real; 6],
    /// Axis-angle rotation.
    pub rotation: Vec3,
    pub translation: Vec3,
    pub eye_offset: Vec3,
}

pub fn synth_head(params: &SynthHeadParams, template: &Template) -> TriMesh {
    template.deform(params)
}

/// Ring of `k` cameras around the vertical axis, all aimed at the origin.
/// Odd cameras are raised and even ones lowered by `elevation`.
pub fn make_rig(
    k: usize,
    radius: Real,
    width: usize,
    height: usize,
    focal: Real,
    elevation: Real,
    dist: [Real; 2],
) -> Result<Rig> {
    if k < 2 {
        return Err(Error::Config(format!("a rig needs at least 2 cameras, got {k}")));
    }
    let cameras = (0..k)
        .map(|i| {
            let phi = 2.0 * std::f64::consts::PI as Real * i as Real / k as Real;
            let h = if i % 2 == 0 { -elevation } else { elevation };
            let center = vec3(radius * phi.sin(), h, radius * phi.cos());
            let center = center * (radius / center.norm());
            look_at(format!("cam{i:02}"), center, Vec3::ZERO, width, height, focal, dist)
        })
        .collect();
    Rig::new(cameras)
}

/// Camera at `center` looking at `target` with image y pointing down.
pub fn look_at(
    name: String,
    center: Vec3,
    target: Vec3,
    width: usize,
    height: usize,
    focal: Real,
    dist: [Real; 2],
) -> Camera {
    let z = (target - center) / (target - center).norm();
    let down = vec3(0.0, -1.0, 0.0);
    let x = down.cross(z);
    let x = x / x.norm();
    let y = z.cross(x);
    let rotation = Mat3::from_rows(x, y, z);
    Camera {
        name,
        width,
        height,
        fx: focal,
        fy: focal,
        cx: (width as Real - 1.0) / 2.0,
        cy: (height as Real - 1.0) / 2.0,
        rotation,
        translation: -(rotation * center),
        dist,
    }
}

fn hash3(x: i64, y: i64, z: i64, salt: u64) -> Real {
    let mut h = salt ^ 0x9E37_79B9_7F4A_7C15;
    for v in [x, y, z] {
        h ^= v as u64;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    (h >> 11) as Real / (1u64 << 53) as Real
}

fn value_noise(p: Vec3, cell: Real, salt: u64) -> Real {
    let q = p / cell;
    let (fx, fy, fz) = (q.x.floor(), q.y.floor(), q.z.floor());
    let (ix, iy, iz) = (fx as i64, fy as i64, fz as i64);
    let s = |t: Real| t * t * (3.0 - 2.0 * t);
    let (tx, ty, tz) = (s(q.x - fx), s(q.y - fy), s(q.z - fz));
    let mut acc = 0.0;
    for dx in 0..2 {
        for dy in 0..2 {
            for dz in 0..2 {
                let w = (if dx == 1 { tx } else { 1.0 - tx })
                    * (if dy == 1 { ty } else { 1.0 - ty })
                    * (if dz == 1 { tz } else { 1.0 - tz });
                acc += w * hash3(ix + dx, iy + dy, iz + dz, salt);
            }
        }
    }
    acc
}

/// Speckle albedo in `[0.2, 1]` at a template-space point.
pub fn speckle(p: Vec3) -> Real {
    let n = 0.6 * value_noise(p, 4.5, 1) + 0.4 * value_noise(p, 13.0, 2);
    0.2 + 0.8 * n
}

const LIGHT: Vec3 = vec3(0.267_261_241_912_424_4, 0.534_522_483_824_848_8, 0.801_783_725_737_273_1);

/// Z-buffered rendering of `mesh` into every camera. Surface points are
/// textured through their barycentric position on `texture_space` (a mesh
/// with the same topology, normally the template) and shaded with a fixed
/// directional light.
pub fn render_views(mesh: &TriMesh, texture_space: &TriMesh, rig: &Rig) -> Vec<GrayImage> {
    assert!(mesh.same_topology(texture_space), "texture mesh topology differs");
    par::map_slice(&rig.cameras, |cam| render_view(mesh, texture_space, cam))
}

fn render_view(mesh: &TriMesh, texture_space: &TriMesh, cam: &Camera) -> GrayImage {
    let (w, h) = (cam.width, cam.height);
    let mut depth = vec![Real::INFINITY; w * h];
    let mut img = GrayImage::new(w, h);
    let o = cam.center();
    for (fi, f) in mesh.faces.iter().enumerate() {
        let tri = mesh.triangle(fi);
        let n = (tri[1] - tri[0]).cross(tri[2] - tri[0]);
        let nn = n.norm();
        if nn <= 0.0 {
            continue;
        }
        let n = n / nn;
        // Back faces are hidden by closed surfaces anyway.
        if n.dot(o - tri[0]) <= 0.0 {
            continue;
        }
        let proj = tri.map(|p| cam.project(p));
        if proj.iter().any(|p| !p.in_front) {
            continue;
        }
        let [p0, p1, p2] = proj.map(|p| p.uv);
        let area = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]);
        if area.abs() < 1e-12 {
            continue;
        }
        let lo_x = p0[0].min(p1[0]).min(p2[0]).ceil().max(0.0) as usize;
        let hi_x = p0[0].max(p1[0]).max(p2[0]).floor().min((w - 1) as Real);
        let lo_y = p0[1].min(p1[1]).min(p2[1]).ceil().max(0.0) as usize;
        let hi_y = p0[1].max(p1[1]).max(p2[1]).floor().min((h - 1) as Real);
        if hi_x < 0.0 || hi_y < 0.0 {
            continue;
        }
        let (hi_x, hi_y) = (hi_x as usize, hi_y as usize);
        let inv_z = proj.map(|p| 1.0 / p.depth);
        let tex = [
            texture_space.vertices[f[0]],
            texture_space.vertices[f[1]],
            texture_space.vertices[f[2]],
        ];
        let shade = 0.25 + 0.75 * n.dot(LIGHT).max(0.0);
        for y in lo_y..=hi_y {
            for x in lo_x..=hi_x {
                let (px, py) = (x as Real, y as Real);
                let e0 = (p2[0] - p1[0]) * (py - p1[1]) - (p2[1] - p1[1]) * (px - p1[0]);
                let e1 = (p0[0] - p2[0]) * (py - p2[1]) - (p0[1] - p2[1]) * (px - p2[0]);
                let e2 = (p1[0] - p0[0]) * (py - p0[1]) - (p1[1] - p0[1]) * (px - p0[0]);
                let (b0, b1, b2) = (e0 / area, e1 / area, e2 / area);
                if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                    continue;
                }
                // Perspective-correct interpolation.
                let iz = b0 * inv_z[0] + b1 * inv_z[1] + b2 * inv_z[2];
                let z = 1.0 / iz;
                let idx = y * w + x;
                if z >= depth[idx] {
                    continue;
                }
                depth[idx] = z;
                let c = [b0 * inv_z[0] * z, b1 * inv_z[1] * z, b2 * inv_z[2] * z];
                let tp = tex[0] * c[0] + tex[1] * c[1] + tex[2] * c[2];
                let v = (255.0 * speckle(tp) * shade).round().clamp(1.0, 255.0);
                img.pixels[idx] = v as u8;
            }
        }
    }
    img
}

/// Spherical region with no scan coverage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    pub center: Vec3,
    pub radius: Real,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    /// Surface samples drawn before hole removal.
    pub points: usize,
    pub noise_sigma: Real,
    pub holes: Vec<Hole>,
    /// Outliers added, as a fraction of `points`, uniform in the bounding box.
    pub outlier_fraction: Real,
}

pub fn synth_scan(mesh: &TriMesh, cfg: &ScanConfig, seed: u64) -> Result<ScanCloud> {
    if !(cfg.noise_sigma >= 0.0) {
        return Err(Error::Config("scan noise must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = mesh.sample_surface(cfg.points, &mut rng)?;
    let mut points = Vec::with_capacity(samples.len());
    for s in samples {
        let p = if cfg.noise_sigma > 0.0 {
            let n: [Real; 3] = [
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            ];
            s.point + Vec3::from_slice(&n) * cfg.noise_sigma
        } else {
            s.point
        };
        if cfg.holes.iter().all(|h| (p - h.center).norm() > h.radius) {
            points.push(p);
        }
    }
    let n_out = (cfg.outlier_fraction * cfg.points as Real).round() as usize;
    let (lo, hi) = mesh.bounds();
    for _ in 0..n_out {
        let u: [Real; 3] = [rng.random(), rng.random(), rng.random()];
        points.push(vec3(
            lo.x + u[0] * (hi.x - lo.x),
            lo.y + u[1] * (hi.y - lo.y),
            lo.z + u[2] * (hi.z - lo.z),
        ));
    }
    Ok(ScanCloud::new(points))
}

/// Pose and hole settings for one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub identities: usize,
    pub frames_per_identity: usize,
    /// Largest rotation angle, degrees.
    pub max_rotation_deg: Real,
    pub max_translation: Real,
    pub holes: usize,
    pub hole_radius: Real,
}

/// Everything needed to regenerate a dataset bit-identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub seed: u64,
    pub cameras: usize,
    pub width: usize,
    pub height: usize,
    pub ring_radius: Real,
    pub focal: Real,
    pub elevation: Real,
    pub distortion: [Real; 2],
    pub train: SplitSpec,
    pub test: SplitSpec,
    pub scan_points: usize,
    pub noise_sigma: Real,
    pub outlier_fraction: Real,
    /// Tangential jitter of reference registrations, scene units.
    pub ref_jitter: Real,
    /// Fraction of each expression kept in the reference registration.
    pub ref_expression_scale: Real,
    pub max_identity: Real,
    pub max_expression: Real,
    pub max_eye_offset: Real,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            seed: 0,
            cameras: 8,
            width: 200,
            height: 150,
            ring_radius: 600.0,
            focal: 300.0,
            elevation: 60.0,
            distortion: [0.0, 0.0],
            train: SplitSpec {
                identities: 20,
                frames_per_identity: 10,
                max_rotation_deg: 20.0,
                max_translation: 30.0,
                holes: 1,
                hole_radius: 20.0,
            },
            test: SplitSpec {
                identities: 4,
                frames_per_identity: 10,
                max_rotation_deg: 40.0,
                max_translation: 30.0,
                holes: 3,
                hole_radius: 25.0,
            },
            scan_points: 10_000,
            noise_sigma: 0.3,
            outlier_fraction: 0.005,
            ref_jitter: 0.5,
            ref_expression_scale: 0.6,
            max_identity: 0.12,
            max_expression: 0.06,
            max_eye_offset: 3.0,
        }
    }
}

impl DatasetSpec {
    pub fn from_json(text: &str) -> Result<DatasetSpec> {
        let s: DatasetSpec = serde_json::from_str(text).map_err(|e| Error::parse("dataset spec", e))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<DatasetSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DatasetSpec::from_json(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("dataset spec: {m}")));
        if self.cameras < 2 {
            return bad("at least 2 cameras required");
        }
        if self.width < 2 || self.height < 2 {
            return bad("image size must be at least 2x2");
        }
        if self.train.identities == 0 || self.train.frames_per_identity == 0 {
            return bad("training split is empty");
        }
        if self.scan_points == 0 {
            return bad("scan_points must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.ref_jitter >= 0.0 && self.outlier_fraction >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        if !(self.ring_radius > 0.0 && self.focal > 0.0) {
            return bad("ring radius and focal length must be positive");
        }
        Ok(())
    }

    pub fn rig(&self) -> Result<Rig> {
        make_rig(
            self.cameras,
            self.ring_radius,
            self.width,
            self.height,
            self.focal,
            self.elevation,
            self.distortion,
        )
    }

    /// Small dataset for tests and smoke runs.
    pub fn tiny() -> DatasetSpec {
        DatasetSpec {
            train: SplitSpec {
                identities: 2,
                frames_per_identity: 2,
                ..DatasetSpec::default().train
            },
            test: SplitSpec {
                identities: 1,
                frames_per_identity: 2,
                ..DatasetSpec::default().test
            },
            scan_points: 2000,
            ..DatasetSpec::default()
        }
    }
}

fn sub_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut h = seed ^ 0x5851_F42D_4C95_7F2D;
    for &p in parts {
        h = (h ^ p).wrapping_mul(0x1000_0000_01B3).rotate_left(29) ^ 0x2545_F491_4F6C_DD1D;
        h = (h ^ (h >> 33)).wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    }
    h ^ (h >> 29)
}

fn uniform_vec(rng: &mut ChaCha8Rng, max: Real) -> Vec3 {
    vec3(
        rng.random_range(-max..=max),
        rng.random_range(-max..=max),
        rng.random_range(-max..=max),
    )
}

fn random_rotation(rng: &mut ChaCha8Rng, max_deg: Real) -> Vec3 {
    let axis: [Real; 3] = [
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    ];
    let axis = Vec3::from_slice(&axis);
    let axis = axis.normalized().unwrap_or(vec3(0.0, 1.0, 0.0));
    let angle = rng.random_range(0.0..=max_deg.max(0.0)).to_radians();
    axis * angle
}

/// Identity coefficients for `split` (train and test draw from separate
/// streams).
pub fn identity_coefficients(spec: &DatasetSpec, split: &str, identity: usize) -> ([Real; 4], Vec3) {
    let tag = if split == "train" { 1 } else { 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, &[tag, identity as u64]));
    let m = spec.max_identity;
    let id = [
        rng.random_range(-m..=m),
        rng.random_range(-m..=m),
        rng.random_range(-m..=m),
        rng.random_range(-m..=m) * 0.4,
    ];
    (id, uniform_vec(&mut rng, spec.max_eye_offset))
}

/// Everything generated for one frame.
#[derive(Clone, Debug)]
pub struct FrameRecord {
    pub id: String,
    pub params: SynthHeadParams,
    pub images: Vec<GrayImage>,
    pub scan: ScanCloud,
    pub gt: TriMesh,
    pub reference: TriMesh,
}

pub fn frame_id(identity: usize, frame: usize) -> String {
    format!("id{identity:03}_f{frame:03}")
}

pub fn generate_frame(
    spec: &DatasetSpec,
    template: &Template,
    rig: &Rig,
    split: &str,
    identity: usize,
    frame: usize,
) -> Result<FrameRecord> {
    let ss = if split == "train" { &spec.train } else { &spec.test };
    let tag = if split == "train" { 1 } else { 2 };
    let (id, eye) = identity_coefficients(spec, split, identity);
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, &[tag, identity as u64, frame as u64, 7]));
    let me = spec.max_expression;
    let mut expression = [0.0; 6];
    for e in &mut expression {
        *e = rng.random_range(-me..=me);
    }
    let params = SynthHeadParams {
        identity: id,
        expression,
        rotation: random_rotation(&mut rng, ss.max_rotation_deg),
        translation: uniform_vec(&mut rng, ss.max_translation),
        eye_offset: eye,
    };
    let gt = template.deform(&params);
    let images = render_views(&gt, &template.mesh, rig);
    let holes = (0..ss.holes)
        .map(|_| Hole {
            center: gt.vertices[rng.random_range(0..template.n_head)],
            radius: ss.hole_radius,
        })
        .collect();
    let scan_cfg = ScanConfig {
        points: spec.scan_points,
        noise_sigma: spec.noise_sigma,
        holes,
        outlier_fraction: spec.outlier_fraction,
    };
    let scan = synth_scan(&gt, &scan_cfg, rng.random())?;
    let reference = reference_registration(template, &params, spec, &mut rng);
    Ok(FrameRecord {
        id: frame_id(identity, frame),
        params,
        images,
        scan,
        gt,
        reference,
    })
}

/// Imperfect registration: expressions attenuated by
/// `ref_expression_scale`, then per-vertex tangential jitter.
fn reference_registration(
    template: &Template,
    params: &SynthHeadParams,
    spec: &DatasetSpec,
    rng: &mut ChaCha8Rng,
) -> TriMesh {
    let base = template.deform_scaled(params, spec.ref_expression_scale);
    if spec.ref_jitter == 0.0 {
        return base;
    }
    let normals = base.vertex_normals();
    let noise = Normal::new(0.0, spec.ref_jitter).expect("finite jitter");
    let v = base
        .vertices
        .iter()
        .zip(&normals.normals)
        .map(|(&p, &n)| {
            let r = vec3(
                noise.sample(rng) as Real,
                noise.sample(rng) as Real,
                noise.sample(rng) as Real,
            );
            p + (r - n * n.dot(r))
        })
        .collect();
    base.with_vertices(v)
}

pub fn write_frame(dir: &Path, rec: &FrameRecord) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (c, img) in rec.images.iter().enumerate() {
        img.save(&dir.join(format!("view_{c}.pgm")))?;
    }
    io::write_scan(&dir.join("scan.ply"), &rec.scan)?;
    io::write_obj(&dir.join("gt.obj"), &rec.gt)?;
    io::write_obj(&dir.join("ref.obj"), &rec.reference)?;
    let params = serde_json::to_string_pretty(&rec.params).expect("params serialize");
    let p = dir.join("params.json");
    std::fs::write(&p, params).map_err(|e| Error::io(p, e))
}

/// Generates every frame of `spec` under `out`.
pub fn build_dataset(spec: &DatasetSpec, out: &Path) -> Result<usize> {
    spec.validate()?;
    let template = Template::new();
    let rig = spec.rig()?;
    std::fs::create_dir_all(out.join("masks")).map_err(|e| Error::io(out, e))?;
    rig.save(&out.join("rig.json"))?;
    io::write_obj(&out.join("template.obj"), &template.mesh)?;
    let sp = out.join("spec.json");
    std::fs::write(&sp, spec.to_json()).map_err(|e| Error::io(sp, e))?;
    let mp = out.join("masks").join("eyeball.txt");
    std::fs::write(&mp, mask_to_string(&template.eyeball())).map_err(|e| Error::io(mp, e))?;
    for (name, idx) in template.regions() {
        let p = out.join("masks").join(format!("{name}.txt"));
        std::fs::write(&p, mask_to_string(&idx)).map_err(|e| Error::io(p, e))?;
    }
    let mut jobs = Vec::new();
    for (split, ss) in [("train", &spec.train), ("test", &spec.test)] {
        for i in 0..ss.identities {
            for f in 0..ss.frames_per_identity {
                jobs.push((split, i, f));
            }
        }
    }
    let results = par::map_slice(&jobs, |&(split, i, f)| -> Result<()> {
        let rec = generate_frame(spec, &template, &rig, split, i, f)?;
        write_frame(&out.join(split).join(&rec.id), &rec)
    });
    for r in results {
        r?;
    }
    Ok(jobs.len())
}

/// One frame's files on disk.
#[derive(Clone, Debug)]
pub struct FrameFiles {
    pub id: String,
    pub dir: PathBuf,
}

impl FrameFiles {
    pub fn images(&self, k: usize) -> Result<Vec<GrayImage>> {
        (0..k)
            .map(|c| GrayImage::load(&self.dir.join(format!("view_{c}.pgm"))))
            .collect()
    }

    pub fn scan(&self) -> Result<ScanCloud> {
        io::read_scan(&self.dir.join("scan.ply"))
    }

    pub fn gt(&self) -> Result<TriMesh> {
        io::read_obj(&self.dir.join("gt.obj"))
    }

    pub fn reference(&self) -> Result<TriMesh> {
        io::read_obj(&self.dir.join("ref.obj"))
    }
}

/// A dataset directory written by [`build_dataset`].
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub rig: Rig,
    pub template: TriMesh,
    pub eyeball: Vec<usize>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Dataset> {
        let rig = Rig::load(&root.join("rig.json"))?;
        let template = io::read_obj(&root.join("template.obj"))?;
        let eyeball = crate::losses::read_mask(&root.join("masks").join("eyeball.txt"), template.n_vertices())?;
        Ok(Dataset {
            root: root.to_path_buf(),
            rig,
            template,
            eyeball,
        })
    }

    /// Frames of a split in sorted id order.
    pub fn frames(&self, split: &str) -> Result<Vec<FrameFiles>> {
        list_frames(&self.root.join(split))
    }
}

/// Frame directories under `dir`, sorted by name.
pub fn list_frames(dir: &Path) -> Result<Vec<FrameFiles>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path().is_dir() {
            out.push(FrameFiles {
                id: entry.file_name().to_string_lossy().into_owned(),
                dir: entry.path(),
            });
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}
