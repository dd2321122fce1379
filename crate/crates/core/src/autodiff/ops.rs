//! Elementwise, dense, and structural operators.

use super::gemm::{gemm, Mat};
use super::tape::Var;
use crate::par;
use crate::tensor::{Real, Tensor};

fn same_shape(a: &Var<'_>, b: &Var<'_>, what: &str) {
    let (sa, sb) = (a.shape(), b.shape());
    assert_eq!(sa, sb, "{what}: shape mismatch {sa:?} vs {sb:?}");
}

pub fn add<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    same_shape(&a, &b, "add");
    let (av, bv) = (a.value(), b.value());
    let out: Vec<Real> = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
    a.tape().op(
        &[a, b],
        Tensor::from_vec(av.shape(), out),
        Box::new(|a| vec![Some(a.grad.clone()), Some(a.grad.clone())]),
    )
}

pub fn sub<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    same_shape(&a, &b, "sub");
    let (av, bv) = (a.value(), b.value());
    let out: Vec<Real> = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
    a.tape().op(
        &[a, b],
        Tensor::from_vec(av.shape(), out),
        Box::new(|a| vec![Some(a.grad.clone()), Some(a.grad.map(|g| -g))]),
    )
}

/// Elementwise product.
pub fn mul<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    same_shape(&a, &b, "mul");
    let (av, bv) = (a.value(), b.value());
    let out: Vec<Real> = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
    a.tape().op(
        &[a, b],
        Tensor::from_vec(av.shape(), out),
        Box::new(|a| {
            let g = a.grad.data();
            let da = a.needs[0].then(|| {
                let d = g.iter().zip(a.inputs[1].data()).map(|(g, y)| g * y).collect();
                Tensor::from_vec(a.grad.shape(), d)
            });
            let db = a.needs[1].then(|| {
                let d = g.iter().zip(a.inputs[0].data()).map(|(g, x)| g * x).collect();
                Tensor::from_vec(a.grad.shape(), d)
            });
            vec![da, db]
        }),
    )
}

pub fn scale<'t>(a: Var<'t>, factor: Real) -> Var<'t> {
    let av = a.value();
    a.tape().op(
        &[a],
        av.map(|x| x * factor),
        Box::new(move |a| vec![Some(a.grad.map(|g| g * factor))]),
    )
}

/// Sum of all elements, as a one-element tensor.
pub fn sum(a: Var<'_>) -> Var<'_> {
    let av = a.value();
    let shape = av.shape().to_vec();
    a.tape().op(
        &[a],
        Tensor::scalar(av.sum()),
        Box::new(move |a| vec![Some(Tensor::full(&shape, a.grad.item()))]),
    )
}

pub fn mean(a: Var<'_>) -> Var<'_> {
    let n = a.value().len() as Real;
    scale(sum(a), 1.0 / n)
}

/// Sum of several scalars.
pub fn add_all<'t>(terms: &[Var<'t>]) -> Var<'t> {
    assert!(!terms.is_empty(), "add_all needs at least one term");
    terms[1..].iter().fold(terms[0], |acc, &t| add(acc, t))
}

pub fn relu(x: Var<'_>) -> Var<'_> {
    let xv = x.value();
    x.tape().op(
        &[x],
        xv.map(|v| v.max(0.0)),
        Box::new(|a| {
            let d = a
                .grad
                .data()
                .iter()
                .zip(a.inputs[0].data())
                .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                .collect();
            vec![Some(Tensor::from_vec(a.grad.shape(), d))]
        }),
    )
}

/// `ln(1 + e^x)` evaluated as `max(x, 0) + ln(1 + e^-|x|)`.
pub fn softplus_scalar(x: Real) -> Real {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid, the derivative of softplus.
pub fn sigmoid_scalar(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: Var<'_>) -> Var<'_> {
    let xv = x.value();
    x.tape().op(
        &[x],
        xv.map(softplus_scalar),
        Box::new(|a| {
            let d = a
                .grad
                .data()
                .iter()
                .zip(a.inputs[0].data())
                .map(|(g, &x)| g * sigmoid_scalar(x))
                .collect();
            vec![Some(Tensor::from_vec(a.grad.shape(), d))]
        }),
    )
}

/// `y = W·x + b`. `x` is `[n]` or batched `[B,n]`; `weight` is `[m,n]`.
pub fn linear<'t>(x: Var<'t>, weight: Var<'t>, bias: Var<'t>) -> Var<'t> {
    let (xv, wv, bv) = (x.value(), weight.value(), bias.value());
    let ws = wv.shape().to_vec();
    assert_eq!(ws.len(), 2, "linear weight must be [m,n], got {ws:?}");
    let (m, n) = (ws[0], ws[1]);
    assert_eq!(bv.shape(), &[m], "linear bias must be [{m}], got {:?}", bv.shape());
    let xs = xv.shape().to_vec();
    let (batch, out_shape) = match *xs.as_slice() {
        [k] if k == n => (1, vec![m]),
        [b, k] if k == n => (b, vec![b, m]),
        _ => panic!("linear input {xs:?} does not match weight {ws:?}"),
    };
    let mut out = vec![0.0; batch * m];
    for row in out.chunks_mut(m) {
        row.copy_from_slice(bv.data());
    }
    gemm(
        Mat::new(xv.data(), batch, n),
        Mat::new(wv.data(), m, n).t(),
        1.0,
        &mut out,
    );
    x.tape().op(
        &[x, weight, bias],
        Tensor::from_vec(&out_shape, out),
        Box::new(move |a| {
            let g = Mat::new(a.grad.data(), batch, m);
            let dx = a.needs[0].then(|| {
                let mut d = vec![0.0; batch * n];
                gemm(g, Mat::new(a.inputs[1].data(), m, n), 0.0, &mut d);
                Tensor::from_vec(&xs, d)
            });
            let dw = a.needs[1].then(|| {
                let mut d = vec![0.0; m * n];
                gemm(g.t(), Mat::new(a.inputs[0].data(), batch, n), 0.0, &mut d);
                Tensor::from_vec(&[m, n], d)
            });
            let db = a.needs[2].then(|| {
                let mut d = vec![0.0; m];
                for row in a.grad.data().chunks(m) {
                    for (acc, v) in d.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                Tensor::from_vec(&[m], d)
            });
            vec![dx, dw, db]
        }),
    )
}

/// Same data under a new shape.
pub fn reshape<'t>(x: Var<'t>, shape: &[usize]) -> Var<'t> {
    let xv = x.value();
    let old = xv.shape().to_vec();
    let out = (*xv).clone().reshape(shape);
    x.tape().op(
        &[x],
        out,
        Box::new(move |a| vec![Some(a.grad.clone().reshape(&old))]),
    )
}

/// Concatenation along `axis`; all other dimensions must agree.
pub fn concat<'t>(xs: &[Var<'t>], axis: usize) -> Var<'t> {
    assert!(!xs.is_empty(), "concat needs at least one input");
    let shapes: Vec<Vec<usize>> = xs.iter().map(|v| v.shape()).collect();
    let rank = shapes[0].len();
    assert!(axis < rank, "concat axis {axis} out of range for rank {rank}");
    for s in &shapes {
        assert_eq!(s.len(), rank, "concat rank mismatch: {shapes:?}");
        for d in 0..rank {
            if d != axis {
                assert_eq!(s[d], shapes[0][d], "concat shape mismatch: {shapes:?}");
            }
        }
    }
    let outer: usize = shapes[0][..axis].iter().product();
    let inner: usize = shapes[0][axis + 1..].iter().product();
    let sizes: Vec<usize> = shapes.iter().map(|s| s[axis] * inner).collect();
    let total: usize = sizes.iter().sum();
    let mut out = Vec::with_capacity(outer * total);
    let values: Vec<_> = xs.iter().map(|v| v.value()).collect();
    for o in 0..outer {
        for (v, &sz) in values.iter().zip(&sizes) {
            out.extend_from_slice(&v.data()[o * sz..(o + 1) * sz]);
        }
    }
    let mut out_shape = shapes[0].clone();
    out_shape[axis] = shapes.iter().map(|s| s[axis]).sum();
    xs[0].tape().op(
        xs,
        Tensor::from_vec(&out_shape, out),
        Box::new(move |a| {
            let g = a.grad.data();
            let mut offset = 0;
            let mut grads = Vec::with_capacity(sizes.len());
            for (i, &sz) in sizes.iter().enumerate() {
                if a.needs[i] {
                    let mut d = Vec::with_capacity(outer * sz);
                    for o in 0..outer {
                        let start = o * total + offset;
                        d.extend_from_slice(&g[start..start + sz]);
                    }
                    grads.push(Some(Tensor::from_vec(&shapes[i], d)));
                } else {
                    grads.push(None);
                }
                offset += sz;
            }
            grads
        }),
    )
}

/// Nearest-neighbour ×2 upsampling of the trailing spatial dimensions,
/// cropped to `target` (which must not exceed twice the input size).
pub fn upsample_nearest<'t>(x: Var<'t>, target: &[usize]) -> Var<'t> {
    let xs = x.shape();
    let rank = target.len();
    assert!(
        (2..=3).contains(&rank) && xs.len() > rank,
        "upsample_nearest: bad target {target:?} for input {xs:?}"
    );
    let src: Vec<usize> = xs[xs.len() - rank..].to_vec();
    for (t, s) in target.iter().zip(&src) {
        assert!(*t <= 2 * s && *t >= 1, "upsample target {target:?} too large for {xs:?}");
    }
    // Pad 2D to 3D with a unit depth.
    let (sd, sh, sw) = if rank == 3 { (src[0], src[1], src[2]) } else { (1, src[0], src[1]) };
    let (td, th, tw) = if rank == 3 {
        (target[0], target[1], target[2])
    } else {
        (1, target[0], target[1])
    };
    let map_d = |i: usize| if rank == 3 { i / 2 } else { 0 };
    let lead: usize = xs[..xs.len() - rank].iter().product();
    let in_plane = sd * sh * sw;
    let out_plane = td * th * tw;
    let index: Vec<usize> = (0..out_plane)
        .map(|o| {
            let (z, y, w) = (o / (th * tw), (o / tw) % th, o % tw);
            (map_d(z) * sh + y / 2) * sw + w / 2
        })
        .collect();
    let xv = x.value();
    let mut out = vec![0.0; lead * out_plane];
    par::for_each_chunk_mut(&mut out, out_plane, |c, plane| {
        let srcp = &xv.data()[c * in_plane..(c + 1) * in_plane];
        for (o, &i) in plane.iter_mut().zip(&index) {
            *o = srcp[i];
        }
    });
    let mut out_shape = xs[..xs.len() - rank].to_vec();
    out_shape.extend_from_slice(target);
    x.tape().op(
        &[x],
        Tensor::from_vec(&out_shape, out),
        Box::new(move |a| {
            let mut d = vec![0.0; lead * in_plane];
            par::for_each_chunk_mut(&mut d, in_plane, |c, plane| {
                let g = &a.grad.data()[c * out_plane..(c + 1) * out_plane];
                for (gv, &i) in g.iter().zip(&index) {
                    plane[i] += gv;
                }
            });
            vec![Some(Tensor::from_vec(&xs, d))]
        }),
    )
}

/// Softmax over the three trailing (spatial) dimensions, separately for
/// every leading index (channel, or batch and channel).
pub fn softmax_volume(x: Var<'_>) -> Var<'_> {
    let xs = x.shape();
    assert!(xs.len() >= 3, "softmax_volume needs at least three dimensions, got {xs:?}");
    let cell: usize = xs[xs.len() - 3..].iter().product();
    let xv = x.value();
    let mut out = xv.data().to_vec();
    par::for_each_chunk_mut(&mut out, cell, |_, ch| {
        let m = ch.iter().copied().fold(Real::NEG_INFINITY, Real::max);
        let mut total = 0.0;
        for v in ch.iter_mut() {
            *v = (*v - m).exp();
            total += *v;
        }
        let inv = 1.0 / total;
        for v in ch.iter_mut() {
            *v *= inv;
        }
    });
    x.tape().op(
        &[x],
        Tensor::from_vec(&xs, out),
        Box::new(move |a| {
            let mut d = a.grad.data().to_vec();
            let y = a.output.data();
            par::for_each_chunk_mut(&mut d, cell, |c, gch| {
                let ych = &y[c * cell..(c + 1) * cell];
                let dot: Real = gch.iter().zip(ych).map(|(g, y)| g * y).sum();
                for (g, y) in gch.iter_mut().zip(ych) {
                    *g = y * (*g - dot);
                }
            });
            vec![Some(Tensor::from_vec(a.grad.shape(), d))]
        }),
    )
}

/// Expected grid coordinate per distribution.
///
/// `prob` is `[V, S]` (rows are distributions over `S` cells, any trailing
/// spatial shape flattened). `grid` is either `[S, 3]` shared by all rows or
/// `[V, S, 3]` with one grid per row. Returns `[V, 3]`.
pub fn soft_argmax<'t>(prob: Var<'t>, grid: Var<'t>) -> Var<'t> {
    let ps = prob.shape();
    let gs = grid.shape();
    let v = ps[0];
    let s: usize = ps[1..].iter().product();
    let shared = match *gs.as_slice() {
        [n, 3] if n == s => true,
        [nv, n, 3] if nv == v && n == s => false,
        _ => panic!("soft_argmax: grid {gs:?} does not match probabilities {ps:?}"),
    };
    let (pv, gv) = (prob.value(), grid.value());
    let out: Vec<Real> = par::map_range(v, |i| {
        let p = &pv.data()[i * s..(i + 1) * s];
        let g = if shared { gv.data() } else { &gv.data()[i * s * 3..(i + 1) * s * 3] };
        let mut acc = [0.0; 3];
        for (w, pt) in p.iter().zip(g.chunks_exact(3)) {
            acc[0] += w * pt[0];
            acc[1] += w * pt[1];
            acc[2] += w * pt[2];
        }
        acc
    })
    .into_iter()
    .flatten()
    .collect();
    prob.tape().op(
        &[prob, grid],
        Tensor::from_vec(&[v, 3], out),
        Box::new(move |a| {
            let (p, g, up) = (a.inputs[0].data(), a.inputs[1].data(), a.grad.data());
            let dprob = a.needs[0].then(|| {
                let mut d = vec![0.0; v * s];
                par::for_each_chunk_mut(&mut d, s, |i, row| {
                    let gg = if shared { g } else { &g[i * s * 3..(i + 1) * s * 3] };
                    let u = &up[i * 3..i * 3 + 3];
                    for (r, pt) in row.iter_mut().zip(gg.chunks_exact(3)) {
                        *r = u[0] * pt[0] + u[1] * pt[1] + u[2] * pt[2];
                    }
                });
                Tensor::from_vec(&ps, d)
            });
            let dgrid = a.needs[1].then(|| {
                if shared {
                    let mut d = vec![0.0; s * 3];
                    for i in 0..v {
                        let u = &up[i * 3..i * 3 + 3];
                        for (j, w) in p[i * s..(i + 1) * s].iter().enumerate() {
                            d[j * 3] += w * u[0];
                            d[j * 3 + 1] += w * u[1];
                            d[j * 3 + 2] += w * u[2];
                        }
                    }
                    Tensor::from_vec(&gs, d)
                } else {
                    let mut d = vec![0.0; v * s * 3];
                    for i in 0..v {
                        let u = &up[i * 3..i * 3 + 3];
                        for (j, w) in p[i * s..(i + 1) * s].iter().enumerate() {
                            let o = (i * s + j) * 3;
                            d[o] = w * u[0];
                            d[o + 1] = w * u[1];
                            d[o + 2] = w * u[2];
                        }
                    }
                    Tensor::from_vec(&gs, d)
                }
            });
            vec![dprob, dgrid]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tape::Tape;

    #[test]
    fn softplus_values() {
        assert!((softplus_scalar(0.0) - (2.0 as Real).ln()).abs() < 1e-15);
        assert!((softplus_scalar(30.0) - 30.0).abs() < 1e-9);
        assert!(softplus_scalar(-800.0) >= 0.0);
        assert!(softplus_scalar(800.0).is_finite());
    }

    #[test]
    fn relu_values() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(&[2], vec![-3.0, 3.0]));
        assert_eq!(relu(x).value().data(), &[0.0, 3.0]);
    }

    #[test]
    fn linear_small_cases() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(&[2], vec![2.0, 3.0]));
        let w = tape.constant(Tensor::from_vec(&[1, 2], vec![1.0, 1.0]));
        let b = tape.constant(Tensor::zeros(&[1]));
        assert_eq!(linear(x, w, b).value().data(), &[5.0]);

        let eye = tape.constant(Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let zb = tape.constant(Tensor::zeros(&[2]));
        assert_eq!(linear(x, eye, zb).value().data(), &[2.0, 3.0]);
    }

    #[test]
    fn softmax_constant_is_uniform() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2, 3, 3, 3], 4.2));
        let y = softmax_volume(x).value();
        for v in y.data() {
            assert!((v - 1.0 / 27.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_saturates() {
        let tape = Tape::new();
        let mut t = Tensor::zeros(&[2, 2, 2]);
        t[5] = 1000.0;
        let y = softmax_volume(tape.constant(t)).value();
        assert!((y[5] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn concat_channels() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::from_vec(&[1, 1, 2], vec![1.0, 2.0]));
        let b = tape.constant(Tensor::from_vec(&[1, 2, 2], vec![3.0, 4.0, 5.0, 6.0]));
        let c = concat(&[a, b], 1);
        assert_eq!(c.shape(), vec![1, 3, 2]);
        assert_eq!(c.value().data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn upsample_crops_to_target() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let y = upsample_nearest(x, &[3, 4]);
        assert_eq!(
            y.value().data(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]
        );
    }

    #[test]
    fn soft_argmax_one_hot() {
        let tape = Tape::new();
        let grid: Vec<Real> = (0..8 * 3).map(|i| i as Real * 0.25).collect();
        let mut p = Tensor::zeros(&[1, 8]);
        p[5] = 1.0;
        let v = soft_argmax(tape.constant(p), tape.constant(Tensor::from_vec(&[8, 3], grid.clone())));
        assert_eq!(v.value().data(), &grid[15..18]);
    }
}
