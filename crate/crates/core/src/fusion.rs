//! Sample grids, multi-view feature fusion, and grid localization.
//!
//! Feature maps for `k` views are stored as one `[k, C, H, W]` tensor. A fused
//! feature for a 3D point is the concatenation of the per-channel mean and
//! variance of the bilinearly sampled view features: unweighted for the
//! coarse volume, and weighted by `softplus(δ·cosθ)` for surface-aware
//! fusion around a coarse mesh.

use crate::autodiff::ops::{sigmoid_scalar, softplus_scalar};
use crate::autodiff::sample::Bilinear;
use crate::autodiff::Var;
use crate::camera::Rig;
use crate::error::{Error, Result};
use crate::geom::{Mat3, Vec3};
use crate::par;
use crate::tensor::{Real, Tensor};
use serde::{Deserialize, Serialize};

/// Minimum extent added to the activated scale.
pub const MIN_SCALE: Real = 0.05;

/// A `d×d×d` lattice of world points, ordered with x slowest and z fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGrid {
    pub resolution: usize,
    pub points: Vec<Vec3>,
}

impl SampleGrid {
    /// Evenly spaced lattice including both corners.
    pub fn axis_aligned(min: Vec3, max: Vec3, d: usize) -> Result<SampleGrid> {
        if d < 2 {
            return Err(Error::Config(format!("grid resolution must be >= 2, got {d}")));
        }
        for i in 0..3 {
            if !(min[i] < max[i]) {
                return Err(Error::Config(format!(
                    "grid bounds must satisfy min < max on every axis, got {min:?} / {max:?}"
                )));
            }
        }
        let step = (max - min) / (d - 1) as Real;
        let coord = |lo: Real, hi: Real, s: Real, i: usize| if i == d - 1 { hi } else { lo + s * i as Real };
        let mut points = Vec::with_capacity(d * d * d);
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    points.push(Vec3 {
                        x: coord(min.x, max.x, step.x, i),
                        y: coord(min.y, max.y, step.y, j),
                        z: coord(min.z, max.z, step.z, k),
                    });
                }
            }
        }
        Ok(SampleGrid { resolution: d, points })
    }

    /// Cube of half-extent `half` centered at `center`.
    pub fn centered(center: Vec3, half: Real, d: usize) -> Result<SampleGrid> {
        let h = Vec3 { x: half, y: half, z: half };
        SampleGrid::axis_aligned(center - h, center + h, d)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        let mut c = Vec3::ZERO;
        for &p in &self.points {
            c += p;
        }
        c / self.points.len() as Real
    }

    /// `[N, 3]` tensor of the points.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.points.iter().flat_map(|p| p.to_array()).collect();
        Tensor::from_vec(&[self.points.len(), 3], data)
    }

    pub fn from_tensor(t: &Tensor) -> SampleGrid {
        let n = t.shape()[0];
        let d = (n as f64).cbrt().round() as usize;
        assert_eq!(d * d * d, n, "grid tensor does not hold a cube of points");
        SampleGrid {
            resolution: d,
            points: t.data().chunks_exact(3).map(Vec3::from_slice).collect(),
        }
    }

    /// Whether `p` lies in the parallelepiped spanned by the grid corners.
    pub fn contains(&self, p: Vec3, tol: Real) -> bool {
        let d = self.resolution;
        let at = |i: usize, j: usize, k: usize| self.points[(i * d + j) * d + k];
        let o = at(0, 0, 0);
        let ex = at(d - 1, 0, 0) - o;
        let ey = at(0, d - 1, 0) - o;
        let ez = at(0, 0, d - 1) - o;
        let m = Mat3::from_cols(ex, ey, ez);
        let det = m.det();
        if det.abs() < 1e-300 {
            return false;
        }
        // Cramer's rule for the lattice coordinates of p.
        let q = p - o;
        let a = q.dot(ey.cross(ez)) / det;
        let b = ex.dot(q.cross(ez)) / det;
        let c = ex.dot(ey.cross(q)) / det;
        [a, b, c].iter().all(|&x| x >= -tol && x <= 1.0 + tol)
    }
}

pub fn build_coarse_grid(min: Vec3, max: Vec3, d_c: usize) -> Result<SampleGrid> {
    SampleGrid::axis_aligned(min, max, d_c)
}

/// Gram–Schmidt map from six numbers to a rotation whose columns are
/// `b1 = â1`, `b2 = normalize(a2 − (b1·a2)b1)`, `b3 = b1 × b2`.
///
/// The flag reports a degenerate input (`‖a1‖` or the orthogonalized `a2`
/// below 1e-8); those norms are regularized by adding 1e-8.
pub fn rotation_6d_to_matrix(r: &[Real]) -> (Mat3, bool) {
    let f = Rot6Forward::new(r);
    (Mat3::from_cols(f.b1, f.b2, f.b3), f.degenerate)
}

struct Rot6Forward {
    a2: Vec3,
    n1: Real,
    n2: Real,
    b1: Vec3,
    b2: Vec3,
    b3: Vec3,
    degenerate: bool,
}

impl Rot6Forward {
    fn new(r: &[Real]) -> Self {
        assert_eq!(r.len(), 6, "6D rotation needs six values");
        let a1 = Vec3::from_slice(&r[0..3]);
        let a2 = Vec3::from_slice(&r[3..6]);
        let mut degenerate = false;
        let mut n1 = a1.norm();
        if n1 < 1e-8 {
            n1 += 1e-8;
            degenerate = true;
        }
        let b1 = a1 / n1;
        let u2 = a2 - b1 * b1.dot(a2);
        let mut n2 = u2.norm();
        if n2 < 1e-8 {
            n2 += 1e-8;
            degenerate = true;
        }
        let b2 = u2 / n2;
        Rot6Forward {
            a2,
            n1,
            n2,
            b1,
            b2,
            b3: b1.cross(b2),
            degenerate,
        }
    }

    /// Pulls a gradient on the matrix back to the six inputs.
    fn vjp(&self, g: &Mat3) -> [Real; 6] {
        let (b1, b2) = (self.b1, self.b2);
        let g3 = g.col(2);
        let mut g1 = g.col(0) + b2.cross(g3);
        let g2 = g.col(1) + g3.cross(b1);
        // b2 = u2 / n2
        let gu2 = (g2 - b2 * b2.dot(g2)) / self.n2;
        // u2 = a2 − (b1·a2) b1
        let ga2 = gu2 - b1 * b1.dot(gu2);
        g1 += -(gu2 * b1.dot(self.a2)) - self.a2 * b1.dot(gu2);
        // b1 = a1 / n1
        let ga1 = (g1 - b1 * b1.dot(g1)) / self.n1;
        [ga1.x, ga1.y, ga1.z, ga2.x, ga2.y, ga2.z]
    }
}

/// Scale, 6D rotation, and translation emitted by head localization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadTransform {
    pub scale: Vec3,
    pub rotation: [Real; 6],
    pub translation: Vec3,
}

impl HeadTransform {
    pub const IDENTITY: HeadTransform = HeadTransform {
        scale: Vec3 { x: 1.0, y: 1.0, z: 1.0 },
        rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        translation: Vec3::ZERO,
    };

    /// From the 12 raw network outputs `(ŝ, r, t)`, with `s = softplus(ŝ) + 0.05`.
    pub fn from_raw(raw: &[Real]) -> HeadTransform {
        assert_eq!(raw.len(), 12, "head transform needs 12 raw values");
        let s = |x: Real| softplus_scalar(x) + MIN_SCALE;
        HeadTransform {
            scale: Vec3 {
                x: s(raw[0]),
                y: s(raw[1]),
                z: s(raw[2]),
            },
            rotation: raw[3..9].try_into().expect("six values"),
            translation: Vec3::from_slice(&raw[9..12]),
        }
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        rotation_6d_to_matrix(&self.rotation).0
    }

    /// `p' = R·(diag(s)·p) + t`.
    pub fn apply(&self, p: Vec3) -> Vec3 {
        let r = self.rotation_matrix();
        let sp = Vec3 {
            x: self.scale.x * p.x,
            y: self.scale.y * p.y,
            z: self.scale.z * p.z,
        };
        r * sp + self.translation
    }
}

pub fn transform_grid(grid: &SampleGrid, ht: &HeadTransform) -> SampleGrid {
    SampleGrid {
        resolution: grid.resolution,
        points: grid.points.iter().map(|&p| ht.apply(p)).collect(),
    }
}

/// Differentiable grid transform from raw localization outputs.
///
/// `raw` is `[12]` = `(ŝ, r, t)`; `grid` is `[N, 3]`. Returns `[N, 3]`.
pub fn transform_grid_op<'t>(raw: Var<'t>, grid: Var<'t>) -> Var<'t> {
    assert_eq!(raw.shape(), vec![12], "transform_grid_op raw must be [12]");
    let gs = grid.shape();
    assert!(gs.len() == 2 && gs[1] == 3, "transform_grid_op grid must be [N,3], got {gs:?}");
    let rv = raw.value();
    let ht = HeadTransform::from_raw(rv.data());
    let gv = grid.value();
    let out: Vec<Real> = gv
        .data()
        .chunks_exact(3)
        .flat_map(|p| ht.apply(Vec3::from_slice(p)).to_array())
        .collect();
    raw.tape().op(
        &[raw, grid],
        Tensor::from_vec(&gs, out),
        Box::new(move |a| {
            let raw = a.inputs[0].data();
            let ht = HeadTransform::from_raw(raw);
            let rot = Rot6Forward::new(&ht.rotation);
            let r = Mat3::from_cols(rot.b1, rot.b2, rot.b3);
            let rt = r.transpose();
            let s = ht.scale;
            let pts = a.inputs[1].data();
            let g = a.grad.data();
            let mut dt = Vec3::ZERO;
            let mut dr = [[0.0; 3]; 3];
            let mut ds = Vec3::ZERO;
            let mut dgrid = a.needs[1].then(|| vec![0.0; pts.len()]);
            for (n, (p, gp)) in pts.chunks_exact(3).zip(g.chunks_exact(3)).enumerate() {
                let p = Vec3::from_slice(p);
                let gp = Vec3::from_slice(gp);
                let sp = Vec3 {
                    x: s.x * p.x,
                    y: s.y * p.y,
                    z: s.z * p.z,
                };
                dt += gp;
                for (i, row) in dr.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v += gp[i] * sp[j];
                    }
                }
                let q = rt * gp;
                ds += Vec3 {
                    x: q.x * p.x,
                    y: q.y * p.y,
                    z: q.z * p.z,
                };
                if let Some(d) = dgrid.as_mut() {
                    d[n * 3] = s.x * q.x;
                    d[n * 3 + 1] = s.y * q.y;
                    d[n * 3 + 2] = s.z * q.z;
                }
            }
            let draw = a.needs[0].then(|| {
                let d6 = rot.vjp(&Mat3(dr));
                let mut d = vec![0.0; 12];
                for i in 0..3 {
                    d[i] = ds[i] * sigmoid_scalar(raw[i]);
                    d[9 + i] = dt[i];
                }
                d[3..9].copy_from_slice(&d6);
                Tensor::from_vec(&[12], d)
            });
            vec![draw, dgrid.map(|d| Tensor::from_vec(&gs, d))]
        }),
    )
}

/// How views are weighted when fusing features.
#[derive(Clone, Debug)]
pub enum ViewWeights {
    /// Equal weights; views where the point is not visible contribute zeros.
    Uniform,
    /// One weight per (group, view), `[G, k]`, shared by all points in a group.
    PerGroup(Tensor),
}

/// Fused volume of `2·C` (+ identifier) channels over a cubic grid.
#[derive(Clone, Debug)]
pub struct FeatureVolume {
    pub resolution: usize,
    /// `[channels, d, d, d]`.
    pub data: Tensor,
}

impl FeatureVolume {
    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }
}

fn check_maps(maps: &Tensor, rig: &Rig) -> Result<(usize, usize, usize, usize)> {
    let s = maps.shape();
    if s.len() != 4 {
        return Err(Error::Mismatch(format!("feature maps must be [k,C,H,W], got {s:?}")));
    }
    let (k, c, h, w) = (s[0], s[1], s[2], s[3]);
    if k == 0 || k != rig.len() {
        return Err(Error::Mismatch(format!(
            "{k} feature maps for a rig of {} cameras",
            rig.len()
        )));
    }
    for cam in &rig.cameras {
        if cam.width != w || cam.height != h {
            return Err(Error::Mismatch(format!(
                "camera {} is {}x{} but feature maps are {w}x{h}",
                cam.name, cam.width, cam.height
            )));
        }
    }
    Ok((k, c, h, w))
}

struct FuseLayout {
    k: usize,
    c: usize,
    plane: usize,
    groups: usize,
    per_group: usize,
}

/// Forward pass of multi-view fusion. `points` is `[N, 3]` with
/// `N = groups · per_group`; the output is `[groups, 2C, per_group]`.
fn fuse_forward(points: &[Real], maps: &Tensor, rig: &Rig, weights: &ViewWeights, lay: &FuseLayout) -> Vec<Real> {
    let (k, c, plane) = (lay.k, lay.c, lay.plane);
    let md = maps.data();
    let per_point: Vec<Vec<Real>> = par::map_range(lay.groups * lay.per_group, |n| {
        let p = Vec3::from_slice(&points[n * 3..n * 3 + 3]);
        let g = n / lay.per_group;
        let mut mean = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let mut total = 0.0;
        for (i, cam) in rig.cameras.iter().enumerate() {
            let w = match weights {
                ViewWeights::Uniform => 1.0,
                ViewWeights::PerGroup(t) => t[g * k + i],
            };
            total += w;
            let proj = cam.project(p);
            if !proj.in_front {
                continue;
            }
            let Some(b) = Bilinear::at(proj.uv[0], proj.uv[1], cam.width, cam.height) else {
                continue;
            };
            let view = &md[i * c * plane..(i + 1) * c * plane];
            for ch in 0..c {
                let f = b.sample(&view[ch * plane..(ch + 1) * plane]);
                mean[ch] += w * f;
                sq[ch] += w * f * f;
            }
        }
        let inv = 1.0 / total;
        let mut out = Vec::with_capacity(2 * c);
        mean.iter_mut().for_each(|m| *m *= inv);
        out.extend_from_slice(&mean);
        for ch in 0..c {
            out.push(sq[ch] * inv - mean[ch] * mean[ch]);
        }
        out
    });
    // Transpose to channel-first per group.
    let m = lay.per_group;
    let mut out = vec![0.0; lay.groups * 2 * c * m];
    for (n, f) in per_point.iter().enumerate() {
        let (g, j) = (n / m, n % m);
        for (ch, v) in f.iter().enumerate() {
            out[(g * 2 * c + ch) * m + j] = *v;
        }
    }
    out
}

struct FuseGrads {
    dpoints: Option<Vec<Real>>,
    dmaps: Option<Vec<Real>>,
}

#[allow(clippy::too_many_arguments)]
fn fuse_backward(
    points: &[Real],
    maps: &Tensor,
    rig: &Rig,
    weights: &ViewWeights,
    lay: &FuseLayout,
    output: &[Real],
    grad: &[Real],
    need: [bool; 2],
) -> FuseGrads {
    let (k, c, plane, m) = (lay.k, lay.c, lay.plane, lay.per_group);
    let n_pts = lay.groups * m;
    let md = maps.data();
    let weight = |g: usize, i: usize| match weights {
        ViewWeights::Uniform => 1.0,
        ViewWeights::PerGroup(t) => t[g * k + i],
    };
    let total = |g: usize| (0..k).map(|i| weight(g, i)).sum::<Real>();
    let totals: Vec<Real> = (0..lay.groups).map(total).collect();
    // Upstream gradient on the fused mean/variance and the fused mean itself.
    let at = |n: usize, ch: usize| {
        let (g, j) = (n / m, n % m);
        (g * 2 * c + ch) * m + j
    };
    // ∂L/∂f_i for view i at point n is (w_i/W)(gμ + 2gσ(f_i − μ)).
    let df = |n: usize, i: usize, ch: usize, f: Real| {
        let g = n / m;
        let s = weight(g, i) / totals[g];
        s * (grad[at(n, ch)] + 2.0 * grad[at(n, c + ch)] * (f - output[at(n, ch)]))
    };

    let dmaps = need[1].then(|| {
        let mut d = vec![0.0; md.len()];
        // One view per task: scatters into disjoint planes.
        par::for_each_chunk_mut(&mut d, c * plane, |i, dview| {
            let cam = &rig.cameras[i];
            let view = &md[i * c * plane..(i + 1) * c * plane];
            for n in 0..n_pts {
                let p = Vec3::from_slice(&points[n * 3..n * 3 + 3]);
                let proj = cam.project(p);
                if !proj.in_front {
                    continue;
                }
                let Some(b) = Bilinear::at(proj.uv[0], proj.uv[1], cam.width, cam.height) else {
                    continue;
                };
                for ch in 0..c {
                    let pl = &view[ch * plane..(ch + 1) * plane];
                    let gf = df(n, i, ch, b.sample(pl));
                    let dpl = &mut dview[ch * plane..(ch + 1) * plane];
                    for q in 0..4 {
                        dpl[b.index[q]] += b.weight[q] * gf;
                    }
                }
            }
        });
        d
    });

    let dpoints = need[0].then(|| {
        par::map_range(n_pts, |n| {
            let p = Vec3::from_slice(&points[n * 3..n * 3 + 3]);
            let mut gp = [0.0; 3];
            for (i, cam) in rig.cameras.iter().enumerate() {
                let (proj, jac) = cam.project_with_jacobian(p);
                if !proj.in_front {
                    continue;
                }
                let Some(b) = Bilinear::at(proj.uv[0], proj.uv[1], cam.width, cam.height) else {
                    continue;
                };
                let view = &md[i * c * plane..(i + 1) * c * plane];
                let (mut gu, mut gv) = (0.0, 0.0);
                for ch in 0..c {
                    let pl = &view[ch * plane..(ch + 1) * plane];
                    let gf = df(n, i, ch, b.sample(pl));
                    let (fu, fv) = b.gradient(pl);
                    gu += gf * fu;
                    gv += gf * fv;
                }
                for (x, g) in gp.iter_mut().enumerate() {
                    *g += gu * jac[0][x] + gv * jac[1][x];
                }
            }
            gp
        })
        .into_iter()
        .flatten()
        .collect()
    });

    FuseGrads { dpoints, dmaps }
}

/// Differentiable multi-view fusion.
///
/// `points` is `[N, 3]`, `maps` is `[k, C, H, W]`. Points are split into
/// `groups` consecutive blocks; the result is `[groups, 2C, N/groups]` with
/// the fused mean in channels `0..C` and the variance in `C..2C`.
pub fn sample_views<'t>(points: Var<'t>, maps: Var<'t>, rig: &Rig, weights: ViewWeights, groups: usize) -> Var<'t> {
    let mv = maps.value();
    let (k, c, h, w) = check_maps(&mv, rig).unwrap_or_else(|e| panic!("sample_views: {e}"));
    let ps = points.shape();
    assert!(ps.len() == 2 && ps[1] == 3, "sample_views points must be [N,3], got {ps:?}");
    assert!(groups >= 1 && ps[0].is_multiple_of(groups), "{} points do not split into {groups} groups", ps[0]);
    if let ViewWeights::PerGroup(t) = &weights {
        assert_eq!(t.shape(), &[groups, k], "view weights must be [groups, k]");
        for g in 0..groups {
            let s: Real = t.data()[g * k..(g + 1) * k].iter().sum();
            assert!(s > 0.0, "view weights of group {g} must have a positive sum");
        }
    }
    let lay = FuseLayout {
        k,
        c,
        plane: h * w,
        groups,
        per_group: ps[0] / groups,
    };
    let pv = points.value();
    let out = fuse_forward(pv.data(), &mv, rig, &weights, &lay);
    let rig = rig.clone();
    points.tape().op(
        &[points, maps],
        Tensor::from_vec(&[groups, 2 * c, lay.per_group], out),
        Box::new(move |a| {
            let gr = fuse_backward(
                a.inputs[0].data(),
                a.inputs[1],
                &rig,
                &weights,
                &lay,
                a.output.data(),
                a.grad.data(),
                [a.needs[0], a.needs[1]],
            );
            vec![
                gr.dpoints.map(|d| Tensor::from_vec(a.inputs[0].shape(), d)),
                gr.dmaps.map(|d| Tensor::from_vec(a.inputs[1].shape(), d)),
            ]
        }),
    )
}

/// Naive fusion over a whole grid: `[2C, d, d, d]`.
pub fn sample_feature_volume(grid: &SampleGrid, maps: &Tensor, rig: &Rig) -> Result<FeatureVolume> {
    let (k, c, h, w) = check_maps(maps, rig)?;
    let lay = FuseLayout {
        k,
        c,
        plane: h * w,
        groups: 1,
        per_group: grid.len(),
    };
    let pts = grid.to_tensor();
    let out = fuse_forward(pts.data(), maps, rig, &ViewWeights::Uniform, &lay);
    let d = grid.resolution;
    Ok(FeatureVolume {
        resolution: d,
        data: Tensor::from_vec(&[2 * c, d, d, d], out),
    })
}

/// `η_i = softplus(δ_i · cosθ_i)` with `cosθ_i = ⟨normal, d_i⟩` and `d_i`
/// the unit direction from `p` to camera `i`. Views where `p` is behind the
/// camera or outside the image have `δ_i` forced to 0.
pub fn surface_weights(p: Vec3, normal: Vec3, visibility: &[bool], rig: &Rig) -> Result<Vec<Real>> {
    if visibility.len() != rig.len() {
        return Err(Error::Mismatch(format!(
            "{} visibility flags for {} cameras",
            visibility.len(),
            rig.len()
        )));
    }
    rig.cameras
        .iter()
        .zip(visibility)
        .map(|(cam, &vis)| {
            let cos = normal.dot(cam.view_direction(p)?);
            let delta = if vis && cam.project(p).in_image(cam) { 1.0 } else { 0.0 };
            Ok(softplus_scalar(delta * cos))
        })
        .collect()
}

/// Surface-aware fused feature at one point: `μ_r ⊕ σ_r² ⊕ v`, length
/// `2·C + 3`.
pub fn fuse_surface_aware(
    p: Vec3,
    normal: Vec3,
    maps: &Tensor,
    rig: &Rig,
    visibility: &[bool],
    template_vertex: Vec3,
) -> Result<Vec<Real>> {
    let nn = normal.norm();
    if (nn - 1.0).abs() > 1e-6 {
        return Err(Error::Degenerate(format!("normal must be unit length, got norm {nn}")));
    }
    let (k, c, h, w) = check_maps(maps, rig)?;
    let eta = surface_weights(p, normal, visibility, rig)?;
    let total: Real = eta.iter().sum();
    assert!(total > 0.0, "softplus weights are always positive");
    let lay = FuseLayout {
        k,
        c,
        plane: h * w,
        groups: 1,
        per_group: 1,
    };
    let mut out = fuse_forward(
        &p.to_array(),
        maps,
        rig,
        &ViewWeights::PerGroup(Tensor::from_vec(&[1, k], eta)),
        &lay,
    );
    out.extend_from_slice(&template_vertex.to_array());
    Ok(out)
}
