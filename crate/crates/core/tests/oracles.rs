//! Independent reference implementations checked against the library.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tempeh::autodiff::ops::{linear, relu, soft_argmax, softmax_volume, sum};
use tempeh::autodiff::{conv2d, conv3d, reduce_mean_var, Tape};
use tempeh::camera::{Camera, Rig};
use tempeh::fusion::{
    fuse_surface_aware, sample_feature_volume, transform_grid, HeadTransform, SampleGrid,
};
use tempeh::geom::{vec3, Mat3, Vec3};
use tempeh::losses::{edge_regularization, geman_mcclure, geman_mcclure_grad, scan_to_mesh_loss};
use tempeh::mesh::{closest_point_on_triangle, Bvh, TriMesh};
use tempeh::synth::{icosphere, look_at, make_rig};
use tempeh::tensor::{Real, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn conv2d_loops(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; c_out * ho * wo];
    for o in 0..c_out {
        for i in 0..ho {
            for j in 0..wo {
                let mut acc = b.data()[o];
                for c in 0..c_in {
                    for p in 0..kh {
                        for q in 0..kw {
                            let y = (i * stride + p) as isize - pad as isize;
                            let xx = (j * stride + q) as isize - pad as isize;
                            if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                continue;
                            }
                            let xv = x.data()[(c * h + y as usize) * wd + xx as usize];
                            acc += w.data()[((o * c_in + c) * kh + p) * kw + q] * xv;
                        }
                    }
                }
                out[(o * ho + i) * wo + j] = acc;
            }
        }
    }
    Tensor::from_vec(&[c_out, ho, wo], out)
}

#[allow(clippy::too_many_arguments)]
fn conv3d_loops(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let s = x.shape();
    let (c_in, d, h, wd) = (s[0], s[1], s[2], s[3]);
    let (c_out, k) = (w.shape()[0], w.shape()[2]);
    let osz = |n: usize| (n + 2 * pad - k) / stride + 1;
    let (do_, ho, wo) = (osz(d), osz(h), osz(wd));
    let mut out = vec![0.0; c_out * do_ * ho * wo];
    for o in 0..c_out {
        for a in 0..do_ {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = b.data()[o];
                    for c in 0..c_in {
                        for r in 0..k {
                            for p in 0..k {
                                for q in 0..k {
                                    let z = (a * stride + r) as isize - pad as isize;
                                    let y = (i * stride + p) as isize - pad as isize;
                                    let xx = (j * stride + q) as isize - pad as isize;
                                    if z < 0 || y < 0 || xx < 0 || z >= d as isize || y >= h as isize || xx >= wd as isize {
                                        continue;
                                    }
                                    let xv = x.data()[((c * d + z as usize) * h + y as usize) * wd + xx as usize];
                                    acc += w.data()[(((o * c_in + c) * k + r) * k + p) * k + q] * xv;
                                }
                            }
                        }
                    }
                    out[((o * do_ + a) * ho + i) * wo + j] = acc;
                }
            }
        }
    }
    Tensor::from_vec(&[c_out, do_, ho, wo], out)
}

fn forward(f: impl for<'t> Fn(&'t Tape) -> tempeh::autodiff::Var<'t>) -> Tensor {
    let tape = Tape::new();
    (*f(&tape).value()).clone()
}

#[test]
fn conv2d_matches_loops() {
    let mut r = rng(1);
    let x = Tensor::randn(&[2, 4, 4], 1.0, &mut r);
    let w = Tensor::randn(&[3, 2, 3, 3], 1.0, &mut r);
    let b = Tensor::randn(&[3], 1.0, &mut r);
    for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 0)] {
        let got = forward(|t| conv2d(t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()), stride, pad));
        let want = conv2d_loops(&x, &w, &b, stride, pad);
        assert_eq!(got.shape(), want.shape());
        assert!(got.max_abs_diff(&want) <= 1e-12, "stride {stride} pad {pad}");
    }
}

#[test]
fn batched_conv2d_matches_loops_per_item() {
    let mut r = rng(2);
    let x = Tensor::randn(&[3, 2, 5, 6], 1.0, &mut r);
    let w = Tensor::randn(&[4, 2, 3, 3], 1.0, &mut r);
    let b = Tensor::randn(&[4], 1.0, &mut r);
    let got = forward(|t| conv2d(t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()), 2, 1));
    let per = 2 * 5 * 6;
    for i in 0..3 {
        let xi = Tensor::from_vec(&[2, 5, 6], x.data()[i * per..(i + 1) * per].to_vec());
        let want = conv2d_loops(&xi, &w, &b, 2, 1);
        let n = want.len();
        let gi = Tensor::from_vec(want.shape(), got.data()[i * n..(i + 1) * n].to_vec());
        assert!(gi.max_abs_diff(&want) <= 1e-12);
    }
}

#[test]
fn conv3d_matches_loops() {
    let mut r = rng(3);
    let x = Tensor::randn(&[2, 4, 5, 3], 1.0, &mut r);
    let w = Tensor::randn(&[3, 2, 3, 3, 3], 1.0, &mut r);
    let b = Tensor::randn(&[3], 1.0, &mut r);
    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        let got = forward(|t| conv3d(t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()), stride, pad));
        let want = conv3d_loops(&x, &w, &b, stride, pad);
        assert_eq!(got.shape(), want.shape());
        assert!(got.max_abs_diff(&want) <= 1e-12, "stride {stride} pad {pad}");
    }
}

#[test]
fn linear_matches_dot_products() {
    let mut r = rng(4);
    let x = Tensor::randn(&[6], 1.0, &mut r);
    let w = Tensor::randn(&[4, 6], 1.0, &mut r);
    let b = Tensor::randn(&[4], 1.0, &mut r);
    let got = forward(|t| linear(t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone())));
    for i in 0..4 {
        let want: Real = b.data()[i] + (0..6).map(|j| w.data()[i * 6 + j] * x.data()[j]).sum::<Real>();
        assert!((got.data()[i] - want).abs() <= 1e-12);
    }
}

#[test]
fn softmax_random_volume_sums_to_one() {
    let x = Tensor::randn(&[4, 4, 4], 2.0, &mut rng(5));
    let p = forward(|t| softmax_volume(t.constant(x.clone())));
    assert!((p.sum() - 1.0).abs() <= 1e-12);
}

#[test]
fn weighted_mean_var_matches_two_pass() {
    let mut r = rng(6);
    let f = Tensor::randn(&[5, 3], 1.0, &mut r);
    let w = Tensor::uniform(&[5], 0.1, 2.0, &mut r);
    let got = forward(|t| reduce_mean_var(t.constant(f.clone()), Some(&w)));
    let tw: Real = w.data().iter().sum();
    for c in 0..3 {
        let mu: Real = (0..5).map(|i| w.data()[i] * f.data()[i * 3 + c]).sum::<Real>() / tw;
        let var: Real = (0..5)
            .map(|i| w.data()[i] * (f.data()[i * 3 + c] - mu).powi(2))
            .sum::<Real>()
            / tw;
        assert!((got.data()[c] - mu).abs() <= 1e-10);
        assert!((got.data()[3 + c] - var).abs() <= 1e-10);
    }
}

#[test]
fn conv_relu_sum_weight_gradients_match_differences() {
    let mut r = rng(7);
    let x = Tensor::randn(&[2, 5, 5], 1.0, &mut r);
    let w = Tensor::randn(&[3, 2, 3, 3], 1.0, &mut r);
    let b = Tensor::randn(&[3], 0.1, &mut r);
    let loss = |w: &Tensor| {
        forward(|t| sum(relu(conv2d(t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()), 1, 1)))).item()
    };
    let tape = Tape::new();
    let wv = tape.leaf(w.clone());
    let out = sum(relu(conv2d(tape.constant(x.clone()), wv, tape.constant(b.clone()), 1, 1)));
    let g = tape.backward(out);
    let analytic = g.get(wv).unwrap();
    let h = 1e-5;
    for i in 0..w.len() {
        let mut wp = w.clone();
        wp.data_mut()[i] += h;
        let mut wm = w.clone();
        wm.data_mut()[i] -= h;
        let fd = (loss(&wp) - loss(&wm)) / (2.0 * h);
        let a = analytic.data()[i];
        assert!((a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1.0), "weight {i}: {a} vs {fd}");
    }
}

fn symbolic_project(cam: &Camera, p: Vec3) -> [Real; 2] {
    // Written out component by component from the camera model.
    let r = &cam.rotation;
    let xc = r.row(0).dot(p) + cam.translation.x;
    let yc = r.row(1).dot(p) + cam.translation.y;
    let zc = r.row(2).dot(p) + cam.translation.z;
    let (xn, yn) = (xc / zc, yc / zc);
    let rr = xn * xn + yn * yn;
    let radial = 1.0 + cam.dist[0] * rr + cam.dist[1] * rr * rr;
    [cam.fx * xn * radial + cam.cx, cam.fy * yn * radial + cam.cy]
}

#[test]
fn projection_matches_symbolic_form() {
    let mut r = rng(8);
    let rig = make_rig(4, 500.0, 200, 150, 300.0, 40.0, [0.1, 0.01]).unwrap();
    for _ in 0..200 {
        let p = vec3(r.random_range(-80.0..80.0), r.random_range(-80.0..80.0), r.random_range(-80.0..80.0));
        for cam in &rig.cameras {
            let got = cam.project(p).uv;
            let want = symbolic_project(cam, p);
            assert!((got[0] - want[0]).abs() <= 1e-12 && (got[1] - want[1]).abs() <= 1e-12);
        }
    }
}

#[test]
fn sixteen_camera_rig_file_loads() {
    let rig = make_rig(16, 800.0, 64, 48, 100.0, 30.0, [0.0, 0.0]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rig.json");
    rig.save(&path).unwrap();
    let back = tempeh::camera::load_rig(&path).unwrap();
    assert_eq!(back.len(), 16);
    assert_eq!(back, rig);
}

#[test]
fn icosphere_normals_are_radial() {
    let s = icosphere(3);
    let n = s.vertex_normals();
    for (v, nv) in s.vertices.iter().zip(&n.normals) {
        let cos = v.dot(*nv) / v.norm();
        assert!(cos >= (2.0 as Real).to_radians().cos(), "normal off radial by more than 2°");
    }
}

fn brute_closest(mesh: &TriMesh, p: Vec3) -> Real {
    (0..mesh.n_faces())
        .map(|f| {
            let [a, b, c] = mesh.triangle(f);
            (closest_point_on_triangle(p, a, b, c).0 - p).norm2()
        })
        .fold(Real::INFINITY, Real::min)
}

fn bumpy_sphere(faces_at_least: usize, seed: u64) -> TriMesh {
    let mut r = rng(seed);
    let mut level = 0;
    while icosphere(level).n_faces() < faces_at_least {
        level += 1;
    }
    let s = icosphere(level);
    let v = s.vertices.iter().map(|&p| p * (50.0 + r.random_range(-5.0..5.0))).collect();
    s.with_vertices(v)
}

#[test]
fn bvh_closest_point_matches_brute_force() {
    // 640 faces: at least 500 as required.
    let mesh = bumpy_sphere(500, 9);
    assert!(mesh.n_faces() >= 500);
    let bvh = Bvh::build(&mesh);
    let mut r = rng(10);
    for _ in 0..1000 {
        let p = vec3(r.random_range(-90.0..90.0), r.random_range(-90.0..90.0), r.random_range(-90.0..90.0));
        let got = bvh.closest_point(p).unwrap().squared_distance;
        assert!((got - brute_closest(&mesh, p)).abs() <= 1e-12);
    }
}

#[test]
fn area_weighted_sampling_ratio() {
    let mesh = TriMesh::new(
        vec![
            vec3(0.0, 0.0, 0.0),
            vec3(3.0, 0.0, 0.0),
            vec3(0.0, 3.0, 0.0),
            vec3(10.0, 0.0, 0.0),
            vec3(11.0, 0.0, 0.0),
            vec3(10.0, 1.0, 0.0),
        ],
        vec![[0, 1, 2], [3, 4, 5]],
    )
    .unwrap();
    let samples = mesh.sample_surface(100_000, &mut rng(11)).unwrap();
    let first = samples.iter().filter(|s| s.face == 0).count() as Real / 1e5;
    assert!((first - 0.9).abs() <= 0.01, "fraction {first}");
}

#[test]
fn transform_composition() {
    let grid = SampleGrid::centered(vec3(1.0, -2.0, 3.0), 5.0, 4).unwrap();
    let a = HeadTransform {
        scale: vec3(1.5, 0.7, 1.1),
        rotation: [0.3, 0.9, -0.2, -0.5, 0.4, 0.8],
        translation: vec3(3.0, -1.0, 2.0),
    };
    let rb = Mat3::from_axis_angle(vec3(0.2, -0.4, 0.1));
    let tb = vec3(-7.0, 4.0, 0.5);
    let twice = transform_grid(&grid, &a);
    let combined_r = rb * a.rotation_matrix() * Mat3::diag(a.scale);
    let combined_t = rb * a.translation + tb;
    for (p, q) in grid.points.iter().zip(&twice.points) {
        let two_step = rb * *q + tb;
        let one_step = combined_r * *p + combined_t;
        assert!((two_step - one_step).norm() <= 1e-12);
    }
}

fn bilinear_reference(plane: &[Real], w: usize, h: usize, u: Real, v: Real) -> Option<Real> {
    if u < 0.0 || v < 0.0 || u > (w - 1) as Real || v > (h - 1) as Real {
        return None;
    }
    let x0 = u.floor().min((w - 1) as Real) as usize;
    let y0 = v.floor().min((h - 1) as Real) as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let (fx, fy) = (u - x0 as Real, v - y0 as Real);
    let at = |x: usize, y: usize| plane[y * w + x];
    Some(
        at(x0, y0) * (1.0 - fx) * (1.0 - fy)
            + at(x1, y0) * fx * (1.0 - fy)
            + at(x0, y1) * (1.0 - fx) * fy
            + at(x1, y1) * fx * fy,
    )
}

#[test]
fn feature_volume_matches_straight_line_fusion() {
    let mut r = rng(12);
    let rig = make_rig(2, 120.0, 20, 16, 30.0, 15.0, [0.02, 0.0]).unwrap();
    let c = 3;
    let maps = Tensor::randn(&[2, c, 16, 20], 1.0, &mut r);
    let grid = SampleGrid::centered(vec3(1.0, 2.0, -1.0), 25.0, 4).unwrap();
    let vol = sample_feature_volume(&grid, &maps, &rig).unwrap();
    let n = grid.len();
    for (i, &p) in grid.points.iter().enumerate() {
        for ch in 0..c {
            let mut samples = Vec::new();
            for (k, cam) in rig.cameras.iter().enumerate() {
                let pr = cam.project(p);
                let plane = &maps.data()[(k * c + ch) * 320..(k * c + ch + 1) * 320];
                let s = if pr.in_front {
                    bilinear_reference(plane, 20, 16, pr.uv[0], pr.uv[1]).unwrap_or(0.0)
                } else {
                    0.0
                };
                samples.push(s);
            }
            let mu = samples.iter().sum::<Real>() / 2.0;
            let var = samples.iter().map(|s| (s - mu).powi(2)).sum::<Real>() / 2.0;
            assert!((vol.data.data()[ch * n + i] - mu).abs() <= 1e-10);
            assert!((vol.data.data()[(c + ch) * n + i] - var).abs() <= 1e-10);
        }
    }
}

#[test]
fn constant_maps_give_constant_mean_and_zero_variance() {
    let rig = make_rig(3, 120.0, 12, 10, 20.0, 10.0, [0.0, 0.0]).unwrap();
    let maps = Tensor::full(&[3, 2, 10, 12], 0.75);
    let grid = SampleGrid::centered(Vec3::ZERO, 5.0, 3).unwrap();
    let vol = sample_feature_volume(&grid, &maps, &rig).unwrap();
    let n = grid.len();
    assert!(vol.data.data()[..2 * n].iter().all(|&m| (m - 0.75).abs() <= 1e-12));
    assert!(vol.data.data()[2 * n..].iter().all(|&v| v.abs() <= 1e-12));
}

#[test]
fn point_behind_every_camera_fuses_to_zero() {
    // Both cameras look down -z from z = 100; the point sits above them.
    let cams = vec![
        look_at("a".into(), vec3(0.0, 0.0, 100.0), Vec3::ZERO, 12, 10, 20.0, [0.0, 0.0]),
        look_at("b".into(), vec3(10.0, 0.0, 100.0), vec3(10.0, 0.0, 0.0), 12, 10, 20.0, [0.0, 0.0]),
    ];
    let rig = Rig::new(cams).unwrap();
    let maps = Tensor::full(&[2, 2, 10, 12], 3.0);
    let grid = SampleGrid::centered(vec3(0.0, 0.0, 300.0), 1.0, 2).unwrap();
    let vol = sample_feature_volume(&grid, &maps, &rig).unwrap();
    assert!(vol.data.data().iter().all(|&x| x == 0.0));
}

/// `ln(1 + e)` and `ln 2`, evaluated by hand.
const SOFTPLUS_ONE: Real = 1.313_261_687_518_222_8;
#[allow(clippy::approx_constant)]
const SOFTPLUS_ZERO: Real = 0.693_147_180_559_945_3;

fn two_view_scene(cos2: Real) -> (Rig, Vec3) {
    let s = (1.0 - cos2 * cos2).sqrt();
    let cams = vec![
        look_at("front".into(), vec3(0.0, 0.0, 100.0), Vec3::ZERO, 21, 21, 30.0, [0.0, 0.0]),
        look_at("side".into(), vec3(100.0 * s, 0.0, 100.0 * cos2), Vec3::ZERO, 21, 21, 30.0, [0.0, 0.0]),
    ];
    (Rig::new(cams).unwrap(), vec3(0.0, 0.0, 1.0))
}

#[test]
fn surface_aware_weights_hand_calculation() {
    assert!((SOFTPLUS_ONE - 1.313262).abs() < 5e-7);
    #[allow(clippy::approx_constant)]
    let ln2_6 = 0.693147;
    assert!((SOFTPLUS_ZERO - ln2_6).abs() < 5e-7);
    let (rig, normal) = two_view_scene(0.9);
    let f1 = [0.4, -1.2];
    let f2 = [2.0, 0.5];
    let mut data = Vec::new();
    for f in [f1, f2] {
        for v in f {
            data.extend(std::iter::repeat_n(v, 21 * 21));
        }
    }
    let maps = Tensor::from_vec(&[2, 2, 21, 21], data);
    let t = vec3(0.1, 0.2, 0.3);
    let out = fuse_surface_aware(Vec3::ZERO, normal, &maps, &rig, &[true, false], t).unwrap();
    let total = SOFTPLUS_ONE + SOFTPLUS_ZERO;
    assert!((total - 2.006409).abs() < 1e-6);
    for ch in 0..2 {
        let mu = (SOFTPLUS_ONE * f1[ch] + SOFTPLUS_ZERO * f2[ch]) / total;
        let var = (SOFTPLUS_ONE * (f1[ch] - mu).powi(2) + SOFTPLUS_ZERO * (f2[ch] - mu).powi(2)) / total;
        assert!((out[ch] - mu).abs() <= 1e-10);
        assert!((out[2 + ch] - var).abs() <= 1e-10);
    }
    assert_eq!(&out[4..], &[0.1, 0.2, 0.3]);
}

#[test]
fn single_facing_view_returns_its_feature() {
    let cams = vec![
        look_at("front".into(), vec3(0.0, 0.0, 100.0), Vec3::ZERO, 21, 21, 30.0, [0.0, 0.0]),
        look_at("back".into(), vec3(0.0, 0.0, -100.0), Vec3::ZERO, 21, 21, 30.0, [0.0, 0.0]),
    ];
    let rig = Rig::new(cams).unwrap();
    let eta = tempeh::fusion::surface_weights(Vec3::ZERO, vec3(0.0, 0.0, 1.0), &[true, false], &rig).unwrap();
    assert!((eta[0] - SOFTPLUS_ONE).abs() <= 1e-12);
    let mut data = vec![1.7; 21 * 21];
    data.extend(vec![1.7; 21 * 21]);
    let maps = Tensor::from_vec(&[2, 1, 21, 21], data);
    let out = fuse_surface_aware(Vec3::ZERO, vec3(0.0, 0.0, 1.0), &maps, &rig, &[true, false], Vec3::ZERO).unwrap();
    assert!((out[0] - 1.7).abs() <= 1e-12 && out[1].abs() <= 1e-12);
}

#[test]
fn soft_argmax_matches_triple_loop() {
    let mut r = rng(13);
    let grid = SampleGrid::axis_aligned(vec3(-1.0, 0.0, 2.0), vec3(3.0, 5.0, 4.0), 4).unwrap();
    let raw = Tensor::uniform(&[1, 64], 0.0, 1.0, &mut r);
    let total = raw.sum();
    let prob = raw.map(|x| x / total);
    let got = forward(|t| soft_argmax(t.constant(prob.clone()), t.constant(grid.to_tensor())));
    let mut want = Vec3::ZERO;
    for j in 0..4 {
        for k in 0..4 {
            for l in 0..4 {
                let idx = (j * 4 + k) * 4 + l;
                want += grid.points[idx] * prob.data()[idx];
            }
        }
    }
    assert!((Vec3::from_slice(got.data()) - want).norm() <= 1e-12);
}

#[test]
fn uniform_soft_argmax_is_centroid() {
    let grid = SampleGrid::axis_aligned(vec3(-1.0, 0.0, 2.0), vec3(3.0, 5.0, 4.0), 5).unwrap();
    let prob = Tensor::full(&[1, 125], 1.0 / 125.0);
    let got = forward(|t| soft_argmax(t.constant(prob.clone()), t.constant(grid.to_tensor())));
    assert!((Vec3::from_slice(got.data()) - vec3(1.0, 2.5, 3.0)).norm() <= 1e-12);
}

#[test]
fn scan_to_mesh_loss_matches_brute_force() {
    let mesh = bumpy_sphere(80, 14);
    let mut r = rng(15);
    let scan: Vec<Vec3> = (0..300)
        .map(|_| vec3(r.random_range(-70.0..70.0), r.random_range(-70.0..70.0), r.random_range(-70.0..70.0)))
        .collect();
    let (lambda, sigma) = (10.0, 2.0);
    let got = forward(|t| scan_to_mesh_loss(t.constant(mesh.vertex_tensor()), &mesh.faces, &scan, lambda, sigma)).item();
    let want = lambda * scan.iter().map(|&p| geman_mcclure(brute_closest(&mesh, p), sigma)).sum::<Real>() / scan.len() as Real;
    assert!((got - want).abs() <= 1e-10);
}

#[test]
fn doubled_mesh_edge_energy() {
    let reference = TriMesh::new(
        vec![vec3(0.0, 0.0, 0.0), vec3(2.0, 0.0, 0.0), vec3(0.0, 1.0, 0.0), vec3(2.0, 1.0, 1.0)],
        vec![[0, 1, 2], [1, 3, 2]],
    )
    .unwrap();
    // Edges (0,1) (0,2) (1,2) (1,3) (2,3): squared lengths 4, 1, 5, 2, 5.
    let want = (4.0 + 1.0 + 5.0 + 2.0 + 5.0) / 5.0;
    let doubled: Vec<Real> = reference.vertex_tensor().data().iter().map(|x| 2.0 * x).collect();
    let got = forward(|t| {
        edge_regularization(t.constant(Tensor::from_vec(&[4, 3], doubled.clone())), &reference, &[1.0; 5], 1.0)
    })
    .item();
    assert!((got - want).abs() <= 1e-12);
}

#[test]
fn robustifier_gradient_matches_differences() {
    let mut r = rng(16);
    for _ in 0..100 {
        let e: Real = r.random_range(0.0..20.0);
        let sigma: Real = r.random_range(0.5..3.0);
        let h = 1e-6;
        let fd = (geman_mcclure(e + h, sigma) - geman_mcclure(e - h, sigma)) / (2.0 * h);
        assert!((geman_mcclure_grad(e, sigma) - fd).abs() <= 1e-8);
    }
}
