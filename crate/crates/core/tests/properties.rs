use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tempeh::autodiff::conv2d;
use tempeh::autodiff::ops::{relu, soft_argmax, softmax_volume, sum};
use tempeh::autodiff::Tape;
use tempeh::camera::Rig;
use tempeh::fusion::{rotation_6d_to_matrix, sample_views, surface_weights, SampleGrid, ViewWeights};
use tempeh::geom::{vec3, Mat3, Vec3};
use tempeh::losses::{edge_regularization, geman_mcclure, scan_to_mesh_loss};
use tempeh::mesh::{vertex_visibility, Bvh, TriMesh};
use tempeh::synth::{icosphere, look_at, make_rig, synth_scan, ScanConfig};
use tempeh::tensor::{Real, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn value(f: impl for<'t> Fn(&'t Tape) -> tempeh::autodiff::Var<'t>) -> Tensor {
    let tape = Tape::new();
    (*f(&tape).value()).clone()
}

fn small_rig() -> Rig {
    make_rig(4, 120.0, 16, 12, 25.0, 15.0, [0.01, 0.0]).unwrap()
}

fn vec3_in(r: Real) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| vec3(x, y, z))
}

fn brute_closest(mesh: &TriMesh, p: Vec3) -> Real {
    (0..mesh.n_faces())
        .map(|f| {
            let [a, b, c] = mesh.triangle(f);
            (tempeh::mesh::closest_point_on_triangle(p, a, b, c).0 - p).norm2()
        })
        .fold(Real::INFINITY, Real::min)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(seed in any::<u64>(), shift in -50.0..50.0 as Real) {
        let x = Tensor::randn(&[3, 4, 5], 3.0, &mut rng(seed));
        let p = value(|t| softmax_volume(t.constant(x.clone())));
        prop_assert!((p.sum() - 1.0).abs() <= 1e-12);
        let q = value(|t| softmax_volume(t.constant(x.map(|v| v + shift))));
        prop_assert!(p.max_abs_diff(&q) <= 1e-12);
    }

    #[test]
    fn six_d_rotation_is_orthonormal(r in proptest::array::uniform6(-5.0..5.0 as Real)) {
        let (m, degenerate) = rotation_6d_to_matrix(&r);
        prop_assume!(!degenerate);
        prop_assert!(m.orthonormality_error() <= 1e-10);
        prop_assert!((m.det() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn degenerate_rotation_inputs_are_flagged_and_finite(a in vec3_in(3.0), scale in -4.0..4.0 as Real) {
        // Parallel columns, and a vanishing first column.
        for r in [
            [a.x, a.y, a.z, a.x * scale, a.y * scale, a.z * scale],
            [0.0, 0.0, 0.0, a.x, a.y, a.z],
        ] {
            let (m, degenerate) = rotation_6d_to_matrix(&r);
            prop_assert!(degenerate);
            for j in 0..3 {
                prop_assert!(m.col(j).is_finite());
            }
        }
    }

    #[test]
    fn edge_energy_ignores_translation(seed in any::<u64>(), t in vec3_in(100.0)) {
        let reference = icosphere(1);
        let mut r = rng(seed);
        let v: Vec<Vec3> = reference
            .vertices
            .iter()
            .map(|&p| p * 40.0 + vec3(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)))
            .collect();
        let gamma = vec![1.0; reference.edges().len()];
        let moved = reference.with_vertices(v.iter().map(|&p| p + t).collect());
        let a = value(|tp| edge_regularization(tp.constant(reference.with_vertices(v.clone()).vertex_tensor()), &reference, &gamma, 0.3)).item();
        let b = value(|tp| edge_regularization(tp.constant(moved.vertex_tensor()), &reference, &gamma, 0.3)).item();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn robustifier_is_monotone_and_bounded(e1 in 0.0..1e6 as Real, e2 in 0.0..1e6 as Real, sigma in 0.1..10.0 as Real) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(geman_mcclure(lo, sigma) <= geman_mcclure(hi, sigma));
        prop_assert!(geman_mcclure(hi, sigma) < sigma * sigma + 1e-12);
        prop_assert!(geman_mcclure(lo, sigma) >= 0.0);
    }

    #[test]
    fn naive_fusion_ignores_camera_order(seed in any::<u64>(), perm_seed in any::<u64>()) {
        let rig = small_rig();
        let mut r = rng(seed);
        let maps = Tensor::randn(&[4, 2, 12, 16], 1.0, &mut r);
        let pts = Tensor::uniform(&[10, 3], -15.0, 15.0, &mut r);
        let mut order: Vec<usize> = (0..4).collect();
        let mut pr = rng(perm_seed);
        for i in (1..4).rev() {
            order.swap(i, pr.random_range(0..=i));
        }
        let rig2 = Rig::new(order.iter().map(|&i| rig.cameras[i].clone()).collect()).unwrap();
        let plane = 2 * 12 * 16;
        let mut data = Vec::new();
        for &i in &order {
            data.extend_from_slice(&maps.data()[i * plane..(i + 1) * plane]);
        }
        let maps2 = Tensor::from_vec(&[4, 2, 12, 16], data);
        let a = value(|t| sample_views(t.constant(pts.clone()), t.constant(maps.clone()), &rig, ViewWeights::Uniform, 1));
        let b = value(|t| sample_views(t.constant(pts.clone()), t.constant(maps2.clone()), &rig2, ViewWeights::Uniform, 1));
        prop_assert!(a.max_abs_diff(&b) <= 1e-12);
    }

    #[test]
    fn equal_view_weights_reduce_to_naive_fusion(seed in any::<u64>(), w in 0.01..5.0 as Real) {
        let rig = small_rig();
        let mut r = rng(seed);
        let maps = Tensor::randn(&[4, 3, 12, 16], 1.0, &mut r);
        let pts = Tensor::uniform(&[12, 3], -15.0, 15.0, &mut r);
        let a = value(|t| sample_views(t.constant(pts.clone()), t.constant(maps.clone()), &rig, ViewWeights::Uniform, 2));
        let weights = ViewWeights::PerGroup(Tensor::full(&[2, 4], w));
        let b = value(|t| sample_views(t.constant(pts.clone()), t.constant(maps.clone()), &rig, weights.clone(), 2));
        prop_assert!(a.max_abs_diff(&b) <= 1e-12);
    }

    #[test]
    fn surface_weights_positive_and_increasing_in_facing(c1 in -1.0..1.0 as Real, c2 in -1.0..1.0 as Real) {
        let cam = |name: &str, c: Real| {
            let s = (1.0 - c * c).sqrt();
            look_at(name.into(), vec3(100.0 * s, 0.0, 100.0 * c), Vec3::ZERO, 21, 21, 30.0, [0.0, 0.0])
        };
        prop_assume!((c1 - c2).abs() > 1e-9);
        let rig = Rig::new(vec![cam("a", c1), cam("b", c2)]).unwrap();
        let eta = surface_weights(Vec3::ZERO, vec3(0.0, 0.0, 1.0), &[true, true], &rig).unwrap();
        prop_assert!(eta.iter().all(|&e| e > 0.0));
        prop_assert_eq!(eta[0] > eta[1], c1 > c2);
    }

    #[test]
    fn occluded_view_weight_is_the_neutral_value(c in -1.0..1.0 as Real) {
        let s = (1.0 - c * c).sqrt();
        let rig = Rig::new(vec![
            look_at("a".into(), vec3(100.0 * s, 0.0, 100.0 * c), Vec3::ZERO, 21, 21, 30.0, [0.0, 0.0]),
            look_at("b".into(), vec3(0.0, 0.0, -100.0), Vec3::ZERO, 21, 21, 30.0, [0.0, 0.0]),
        ])
        .unwrap();
        let seen = surface_weights(Vec3::ZERO, vec3(0.0, 0.0, 1.0), &[true, true], &rig).unwrap()[0];
        let hidden = surface_weights(Vec3::ZERO, vec3(0.0, 0.0, 1.0), &[false, true], &rig).unwrap()[0];
        prop_assert!((hidden - (2.0 as Real).ln()).abs() <= 1e-12);
        prop_assert_eq!(seen > hidden, c > 0.0);
    }

    #[test]
    fn bvh_agrees_with_brute_force(seed in any::<u64>(), p in vec3_in(80.0)) {
        let mut r = rng(seed);
        let s = icosphere(1);
        let mesh = s.with_vertices(s.vertices.iter().map(|&v| v * r.random_range(20.0..50.0)).collect());
        let got = Bvh::build(&mesh).closest_point(p).unwrap().squared_distance;
        prop_assert!((got - brute_closest(&mesh, p)).abs() <= 1e-9);
    }

    #[test]
    fn adding_an_occluder_never_reveals_a_vertex(offset in vec3_in(10.0), size in 1.0..30.0 as Real) {
        let rig = make_rig(3, 150.0, 40, 40, 60.0, 10.0, [0.0, 0.0]).unwrap();
        let s = icosphere(2);
        let head = s.with_vertices(s.vertices.iter().map(|&v| v * 30.0).collect());
        // A square plate between the rig and the head.
        let n0 = head.n_vertices();
        let cam = &rig.cameras[0];
        let toward = cam.center() * (1.0 / cam.center().norm());
        let c = toward * 60.0 + offset;
        let u = toward.cross(vec3(0.0, 1.0, 0.0)).normalized().unwrap();
        let w = toward.cross(u);
        let mut verts = head.vertices.clone();
        verts.extend([c - u * size - w * size, c + u * size - w * size, c + u * size + w * size, c - u * size + w * size]);
        let mut faces = head.faces.clone();
        faces.extend([[n0, n0 + 1, n0 + 2], [n0, n0 + 2, n0 + 3]]);
        let occluded = TriMesh::new(verts, faces).unwrap();
        for cam in &rig.cameras {
            let before = vertex_visibility(&head, &Bvh::build(&head), cam);
            let after = vertex_visibility(&occluded, &Bvh::build(&occluded), cam);
            for i in 0..n0 {
                prop_assert!(!after[i] || before[i], "vertex {} became visible", i);
            }
        }
    }

    #[test]
    fn soft_argmax_stays_in_grid_hull(seed in any::<u64>()) {
        let grid = SampleGrid::axis_aligned(vec3(-3.0, 1.0, 0.0), vec3(2.0, 4.0, 7.0), 4).unwrap();
        let logits = Tensor::randn(&[1, 4, 4, 4], 4.0, &mut rng(seed));
        let out = value(|t| {
            let p = tempeh::autodiff::ops::reshape(softmax_volume(t.constant(logits.clone())), &[1, 64]);
            soft_argmax(p, t.constant(grid.to_tensor()))
        });
        let q = Vec3::from_slice(out.data());
        prop_assert!(grid.contains(q, 1e-9));
    }

    #[test]
    fn scan_loss_vanishes_on_the_surface(seed in any::<u64>()) {
        let s = icosphere(2);
        let mesh = s.with_vertices(s.vertices.iter().map(|&v| v * 40.0).collect());
        let cfg = ScanConfig { points: 200, noise_sigma: 0.0, holes: vec![], outlier_fraction: 0.0 };
        let scan = synth_scan(&mesh, &cfg, seed).unwrap();
        let loss = value(|t| scan_to_mesh_loss(t.constant(mesh.vertex_tensor()), &mesh.faces, &scan.points, 10.0, 1.0)).item();
        prop_assert!(loss <= 1e-18);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn edges_are_unique_and_counted_once(level in 0usize..4) {
        let m = icosphere(level);
        let e = m.edges();
        prop_assert_eq!(e.len() * 2, m.n_faces() * 3);
        prop_assert!(e.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(e.iter().all(|&(a, b)| a < b));
    }

    #[test]
    fn backward_pass_is_deterministic(seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = Tensor::randn(&[2, 3, 9, 9], 1.0, &mut r);
        let w = Tensor::randn(&[4, 3, 3, 3], 1.0, &mut r);
        let b = Tensor::randn(&[4], 1.0, &mut r);
        let grads = || {
            let tape = Tape::new();
            let wv = tape.leaf(w.clone());
            let xv = tape.leaf(x.clone());
            let out = sum(relu(conv2d(xv, wv, tape.constant(b.clone()), 2, 1)));
            let g = tape.backward(out);
            (g.get(wv).unwrap().clone(), g.get(xv).unwrap().clone())
        };
        let (a, b1) = grads();
        let (c, d) = grads();
        prop_assert_eq!(a.data(), c.data());
        prop_assert_eq!(b1.data(), d.data());
    }

    #[test]
    fn mesh_loss_vertex_gradients_match_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let reference = icosphere(1);
        let v0: Vec<Vec3> = reference
            .vertices
            .iter()
            .map(|&p| p * 20.0 + vec3(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
            .collect();
        let scan: Vec<Vec3> = (0..40)
            .map(|_| vec3(r.random_range(-25.0..25.0), r.random_range(-25.0..25.0), r.random_range(-25.0..25.0)))
            .collect();
        let gamma = vec![1.0; reference.edges().len()];
        let loss = |t: &Tensor| {
            value(|tp| {
                let v = tp.constant(t.clone());
                tempeh::autodiff::ops::add(
                    scan_to_mesh_loss(v, &reference.faces, &scan, 10.0, 3.0),
                    edge_regularization(v, &reference, &gamma, 0.3),
                )
            })
            .item()
        };
        let x = reference.with_vertices(v0).vertex_tensor();
        let tape = Tape::new();
        let v = tape.leaf(x.clone());
        let out = tempeh::autodiff::ops::add(
            scan_to_mesh_loss(v, &reference.faces, &scan, 10.0, 3.0),
            edge_regularization(v, &reference, &gamma, 0.3),
        );
        let g = tape.backward(out).get(v).unwrap().clone();
        let h = 1e-6;
        let mut num = 0.0;
        let mut den: Real = 0.0;
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            num += (fd - g.data()[i]).powi(2);
            den += fd * fd;
        }
        prop_assert!(num.sqrt() / den.sqrt().max(1e-7) <= 1e-4);
    }

    #[test]
    fn scan_noise_is_unbiased(seed in any::<u64>()) {
        // Flat square in z = 0: the mean offset along z estimates the noise bias.
        let plane = TriMesh::new(
            vec![vec3(-50.0, -50.0, 0.0), vec3(50.0, -50.0, 0.0), vec3(50.0, 50.0, 0.0), vec3(-50.0, 50.0, 0.0)],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        let sigma = 0.5;
        let n = 20_000;
        let cfg = ScanConfig { points: n, noise_sigma: sigma, holes: vec![], outlier_fraction: 0.0 };
        let scan = synth_scan(&plane, &cfg, seed).unwrap();
        let mean_z = scan.points.iter().map(|p| p.z).sum::<Real>() / n as Real;
        prop_assert!(mean_z.abs() <= 5.0 * sigma / (n as Real).sqrt());
    }
}

#[test]
fn rotation_helper_matches_axis_angle_for_its_own_columns() {
    let m = Mat3::from_axis_angle(vec3(0.3, -0.7, 0.2));
    let c0 = m.col(0);
    let c1 = m.col(1);
    let (r, degenerate) = rotation_6d_to_matrix(&[c0.x, c0.y, c0.z, c1.x, c1.y, c1.z]);
    assert!(!degenerate);
    for j in 0..3 {
        assert!((r.col(j) - m.col(j)).norm() <= 1e-12);
    }
}
