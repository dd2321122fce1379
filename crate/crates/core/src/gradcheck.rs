//! Finite-difference checks of every differentiable operator.
//!
//! Each check projects the operator output onto a fixed pseudo-random
//! cotangent, so all output elements contribute to the compared gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::ops::{
    add, concat, linear, mean, mul, relu, reshape, scale, soft_argmax, softmax_volume, softplus, sub, sum,
    upsample_nearest,
};
use crate::autodiff::{bilinear_sample2d, conv2d, conv3d, reduce_mean_var, Tape, Var};
use crate::fusion::{sample_views, transform_grid_op, ViewWeights};
use crate::geom::{vec3, Vec3};
use crate::losses::{edge_regularization, scan_to_mesh_loss, vertex_loss};
use crate::mesh::TriMesh;
use crate::synth::{icosphere, make_rig};
use crate::tensor::{Real, Tensor};

pub const TOLERANCE: Real = 1e-4;
pub const DEFAULT_SEEDS: usize = 20;
const STEP: Real = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub op: &'static str,
    pub seeds: usize,
    pub max_rel_error: Real,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

fn cotangent(shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|i| (1.0 + 0.7 * i as Real).sin()).collect())
}

fn rel_error(a: &[Real], n: &[Real]) -> Real {
    let norm = |x: &[Real]| x.iter().map(|v| v * v).sum::<Real>().sqrt();
    let diff: Vec<Real> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(n)).max(1e-7)
}

/// Largest relative error between tape gradients and central differences of
/// `⟨f(inputs), c⟩` over all inputs.
pub fn max_relative_error<F>(inputs: &[Tensor], f: F) -> Real
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    let eval = |vals: &[Tensor]| -> Real {
        let tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| tape.constant(v.clone())).collect();
        let out = f(&vars).value();
        let c = cotangent(out.shape());
        out.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
    };
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
    let out = f(&vars);
    let c = tape.constant(cotangent(&out.shape()));
    let grads = tape.backward(sum(mul(out, c)));
    let mut worst: Real = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; x.len()]);
        let mut numeric = vec![0.0; x.len()];
        let mut vals = inputs.to_vec();
        for (k, nk) in numeric.iter_mut().enumerate() {
            let x0 = x.data()[k];
            vals[i].data_mut()[k] = x0 + STEP;
            let fp = eval(&vals);
            vals[i].data_mut()[k] = x0 - STEP;
            let fm = eval(&vals);
            vals[i].data_mut()[k] = x0;
            *nk = (fp - fm) / (2.0 * STEP);
        }
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    worst
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n)
            .map(|_| {
                let m: Real = rng.random_range(0.1..1.5);
                if rng.random::<bool>() {
                    m
                } else {
                    -m
                }
            })
            .collect(),
    )
}

fn small_mesh(rng: &mut ChaCha8Rng) -> TriMesh {
    let s = icosphere(0);
    let v = s
        .vertices
        .iter()
        .map(|&p| p * 10.0 + vec3(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    s.with_vertices(v)
}

fn random_points(n: usize, r: Real, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    (0..n)
        .map(|_| vec3(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r)))
        .collect()
}

type Case = fn(&mut ChaCha8Rng) -> Real;

fn case_list() -> Vec<(&'static str, Case)> {
    vec![
        ("add", |r| {
            let i = [Tensor::randn(&[3, 4], 1.0, r), Tensor::randn(&[3, 4], 1.0, r)];
            max_relative_error(&i, |v| add(v[0], v[1]))
        }),
        ("sub", |r| {
            let i = [Tensor::randn(&[3, 4], 1.0, r), Tensor::randn(&[3, 4], 1.0, r)];
            max_relative_error(&i, |v| sub(v[0], v[1]))
        }),
        ("mul", |r| {
            let i = [Tensor::randn(&[3, 4], 1.0, r), Tensor::randn(&[3, 4], 1.0, r)];
            max_relative_error(&i, |v| mul(v[0], v[1]))
        }),
        ("scale", |r| {
            let f: Real = r.random_range(-3.0..3.0);
            max_relative_error(&[Tensor::randn(&[5], 1.0, r)], move |v| scale(v[0], f))
        }),
        ("sum", |r| max_relative_error(&[Tensor::randn(&[2, 3, 2], 1.0, r)], |v| sum(v[0]))),
        ("mean", |r| max_relative_error(&[Tensor::randn(&[2, 3, 2], 1.0, r)], |v| mean(v[0]))),
        ("relu", |r| max_relative_error(&[away_from_zero(&[4, 5], r)], |v| relu(v[0]))),
        ("softplus", |r| max_relative_error(&[Tensor::randn(&[4, 5], 3.0, r)], |v| softplus(v[0]))),
        ("linear", |r| {
            let i = [
                Tensor::randn(&[2, 5], 1.0, r),
                Tensor::randn(&[4, 5], 1.0, r),
                Tensor::randn(&[4], 1.0, r),
            ];
            max_relative_error(&i, |v| linear(v[0], v[1], v[2]))
        }),
        ("reshape", |r| {
            max_relative_error(&[Tensor::randn(&[2, 6], 1.0, r)], |v| mul(reshape(v[0], &[3, 4]), reshape(v[0], &[3, 4])))
        }),
        ("concat", |r| {
            let i = [Tensor::randn(&[2, 3, 2], 1.0, r), Tensor::randn(&[2, 1, 2], 1.0, r)];
            max_relative_error(&i, |v| concat(&[v[0], v[1]], 1))
        }),
        ("upsample_nearest_2d", |r| {
            max_relative_error(&[Tensor::randn(&[2, 3, 3, 2], 1.0, r)], |v| upsample_nearest(v[0], &[5, 4]))
        }),
        ("upsample_nearest_3d", |r| {
            max_relative_error(&[Tensor::randn(&[1, 2, 2, 3, 2], 1.0, r)], |v| upsample_nearest(v[0], &[3, 5, 4]))
        }),
        ("softmax_volume", |r| {
            max_relative_error(&[Tensor::randn(&[2, 3, 3, 3], 1.0, r)], |v| softmax_volume(v[0]))
        }),
        ("soft_argmax", |r| {
            let i = [Tensor::uniform(&[4, 8], 0.0, 1.0, r), Tensor::randn(&[8, 3], 1.0, r)];
            max_relative_error(&i, |v| soft_argmax(v[0], v[1]))
        }),
        ("soft_argmax_per_row_grid", |r| {
            let i = [Tensor::uniform(&[4, 8], 0.0, 1.0, r), Tensor::randn(&[4, 8, 3], 1.0, r)];
            max_relative_error(&i, |v| soft_argmax(v[0], v[1]))
        }),
        ("conv2d", |r| {
            let i = [
                Tensor::randn(&[2, 2, 5, 4], 1.0, r),
                Tensor::randn(&[3, 2, 3, 3], 1.0, r),
                Tensor::randn(&[3], 1.0, r),
            ];
            max_relative_error(&i, |v| conv2d(v[0], v[1], v[2], 1, 1))
        }),
        ("conv2d_stride2", |r| {
            let i = [
                Tensor::randn(&[2, 5, 6], 1.0, r),
                Tensor::randn(&[3, 2, 3, 3], 1.0, r),
                Tensor::randn(&[3], 1.0, r),
            ];
            max_relative_error(&i, |v| conv2d(v[0], v[1], v[2], 2, 1))
        }),
        ("conv3d", |r| {
            let i = [
                Tensor::randn(&[2, 2, 3, 4, 3], 1.0, r),
                Tensor::randn(&[2, 2, 3, 3, 3], 1.0, r),
                Tensor::randn(&[2], 1.0, r),
            ];
            max_relative_error(&i, |v| conv3d(v[0], v[1], v[2], 1, 1))
        }),
        ("conv3d_stride2", |r| {
            let i = [
                Tensor::randn(&[2, 5, 4, 5], 1.0, r),
                Tensor::randn(&[2, 2, 3, 3, 3], 1.0, r),
                Tensor::randn(&[2], 1.0, r),
            ];
            max_relative_error(&i, |v| conv3d(v[0], v[1], v[2], 2, 1))
        }),
        ("bilinear_sample2d", |r| {
            let uv = Tensor::from_vec(&[2], vec![r.random_range(0.3..4.7), r.random_range(0.3..3.7)]);
            let i = [Tensor::randn(&[2, 5, 6], 1.0, r), uv];
            max_relative_error(&i, |v| bilinear_sample2d(v[0], v[1]).0)
        }),
        ("reduce_mean_var", |r| {
            max_relative_error(&[Tensor::randn(&[4, 3], 1.0, r)], |v| reduce_mean_var(v[0], None))
        }),
        ("reduce_mean_var_weighted", |r| {
            let w = Tensor::uniform(&[4], 0.1, 2.0, r);
            max_relative_error(&[Tensor::randn(&[4, 3], 1.0, r)], move |v| reduce_mean_var(v[0], Some(&w)))
        }),
        ("transform_grid", |r| {
            let i = [Tensor::randn(&[12], 1.0, r), Tensor::randn(&[6, 3], 5.0, r)];
            max_relative_error(&i, |v| transform_grid_op(v[0], v[1]))
        }),
        ("sample_views", |r| {
            let rig = make_rig(3, 60.0, 16, 12, 20.0, 10.0, [0.01, 0.0]).expect("valid rig");
            let pts: Vec<Real> = random_points(6, 8.0, r).iter().flat_map(|p| p.to_array()).collect();
            let i = [Tensor::from_vec(&[6, 3], pts), Tensor::randn(&[3, 2, 12, 16], 1.0, r)];
            max_relative_error(&i, move |v| sample_views(v[0], v[1], &rig, ViewWeights::Uniform, 2))
        }),
        ("sample_views_weighted", |r| {
            let rig = make_rig(3, 60.0, 16, 12, 20.0, 10.0, [0.0, 0.0]).expect("valid rig");
            let pts: Vec<Real> = random_points(6, 8.0, r).iter().flat_map(|p| p.to_array()).collect();
            let w = ViewWeights::PerGroup(Tensor::uniform(&[3, 3], 0.2, 1.5, r));
            let i = [Tensor::from_vec(&[6, 3], pts), Tensor::randn(&[3, 2, 12, 16], 1.0, r)];
            max_relative_error(&i, move |v| sample_views(v[0], v[1], &rig, w.clone(), 3))
        }),
        ("scan_to_mesh", |r| {
            let m = small_mesh(r);
            let scan = random_points(30, 12.0, r);
            let faces = m.faces.clone();
            max_relative_error(&[m.vertex_tensor()], move |v| scan_to_mesh_loss(v[0], &faces, &scan, 10.0, 3.0))
        }),
        ("edge_regularization", |r| {
            let reference = small_mesh(r);
            let m = small_mesh(r);
            let gamma: Vec<Real> = (0..reference.edges().len()).map(|_| r.random_range(0.5..2.0)).collect();
            max_relative_error(&[m.vertex_tensor()], move |v| edge_regularization(v[0], &reference, &gamma, 0.7))
        }),
        ("vertex_loss", |r| {
            let reference = small_mesh(r);
            let m = small_mesh(r);
            let mask: Vec<Real> = (0..m.n_vertices()).map(|_| r.random_range(0.0..1.0)).collect();
            max_relative_error(&[m.vertex_tensor()], move |v| vertex_loss(v[0], &reference, &mask))
        }),
        ("project", |r| {
            let rig = make_rig(2, 50.0, 40, 30, 30.0, 5.0, [0.05, 0.01]).expect("valid rig");
            let cam = &rig.cameras[0];
            let p = random_points(1, 10.0, r)[0];
            let (_, jac) = cam.project_with_jacobian(p);
            let mut analytic = Vec::new();
            let mut numeric = Vec::new();
            for (row, jr) in jac.iter().enumerate() {
                for (k, &j) in jr.iter().enumerate() {
                    let mut e = [0.0; 3];
                    e[k] = STEP;
                    let d = Vec3::from_slice(&e);
                    analytic.push(j);
                    numeric.push((cam.project(p + d).uv[row] - cam.project(p - d).uv[row]) / (2.0 * STEP));
                }
            }
            rel_error(&analytic, &numeric)
        }),
    ]
}

/// Operator names covered by [`run_ops`].
pub fn op_names() -> Vec<&'static str> {
    case_list().into_iter().map(|(n, _)| n).collect()
}

/// Checks every operator over `seeds` random instances.
pub fn run_ops(seeds: usize, base_seed: u64) -> Vec<CheckResult> {
    case_list()
        .into_iter()
        .enumerate()
        .map(|(c, (op, case))| {
            let mut worst: Real = 0.0;
            for s in 0..seeds {
                let mut rng = ChaCha8Rng::seed_from_u64(base_seed ^ ((c as u64) << 32 | s as u64));
                let e = case(&mut rng);
                worst = if e.is_nan() { Real::INFINITY } else { worst.max(e) };
            }
            CheckResult {
                op,
                seeds,
                max_rel_error: worst,
            }
        })
        .collect()
}
