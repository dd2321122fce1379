//! 2D and 3D cross-correlation via im2col and GEMM.
//!
//! Both ranks share one implementation: a 2D convolution is a 3D convolution
//! with depth one.

use super::gemm::{gemm, Mat};
use super::tape::Var;
use crate::par;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeom {
    fn new(
        batch: usize,
        c_in: usize,
        c_out: usize,
        input: [usize; 3],
        kernel: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Self {
        let mut output = [0; 3];
        for d in 0..3 {
            assert!(stride[d] >= 1, "convolution stride must be >= 1");
            let padded = input[d] + 2 * pad[d];
            assert!(
                kernel[d] <= padded,
                "kernel {kernel:?} does not fit padded input {input:?} (padding {pad:?})"
            );
            output[d] = (padded - kernel[d]) / stride[d] + 1;
        }
        ConvGeom {
            batch,
            c_in,
            c_out,
            input,
            kernel,
            stride,
            pad,
            output,
        }
    }

    fn in_plane(&self) -> usize {
        self.input.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.output.iter().product()
    }

    fn patch(&self) -> usize {
        self.c_in * self.kernel.iter().product::<usize>()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }
}

fn im2col(x: &[Real], g: &ConvGeom, cols: &mut [Real]) {
    let [d, h, w] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [od, oh, ow] = g.output;
    let n = g.out_plane();
    par::for_each_chunk_mut(cols, n, |row, out| {
        let e = row % kw;
        let b = (row / kw) % kh;
        let a = (row / (kw * kh)) % kd;
        let c = row / (kw * kh * kd);
        let plane = &x[c * d * h * w..(c + 1) * d * h * w];
        let mut idx = 0;
        for z in 0..od {
            let iz = (z * g.stride[0] + a) as isize - g.pad[0] as isize;
            for y in 0..oh {
                let iy = (y * g.stride[1] + b) as isize - g.pad[1] as isize;
                let row_ok = iz >= 0 && iz < d as isize && iy >= 0 && iy < h as isize;
                for xx in 0..ow {
                    let ix = (xx * g.stride[2] + e) as isize - g.pad[2] as isize;
                    out[idx] = if row_ok && ix >= 0 && ix < w as isize {
                        plane[(iz as usize * h + iy as usize) * w + ix as usize]
                    } else {
                        0.0
                    };
                    idx += 1;
                }
            }
        }
    });
}

fn col2im(cols: &[Real], g: &ConvGeom, dx: &mut [Real]) {
    let [d, h, w] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [od, oh, ow] = g.output;
    let n = g.out_plane();
    let k = kd * kh * kw;
    // One input channel per task keeps the scatter race-free.
    par::for_each_chunk_mut(dx, d * h * w, |c, plane| {
        for kk in 0..k {
            let e = kk % kw;
            let b = (kk / kw) % kh;
            let a = kk / (kw * kh);
            let src = &cols[(c * k + kk) * n..(c * k + kk + 1) * n];
            let mut idx = 0;
            for z in 0..od {
                let iz = (z * g.stride[0] + a) as isize - g.pad[0] as isize;
                for y in 0..oh {
                    let iy = (y * g.stride[1] + b) as isize - g.pad[1] as isize;
                    let row_ok = iz >= 0 && iz < d as isize && iy >= 0 && iy < h as isize;
                    for xx in 0..ow {
                        let ix = (xx * g.stride[2] + e) as isize - g.pad[2] as isize;
                        if row_ok && ix >= 0 && ix < w as isize {
                            plane[(iz as usize * h + iy as usize) * w + ix as usize] += src[idx];
                        }
                        idx += 1;
                    }
                }
            }
        }
    });
}

fn forward(x: &[Real], w: &[Real], bias: &[Real], g: &ConvGeom) -> Vec<Real> {
    let n = g.out_plane();
    let p = g.patch();
    let mut out = vec![0.0; g.batch * g.c_out * n];
    let wm = Mat::new(w, g.c_out, p);
    let in_sz = g.c_in * g.in_plane();
    let run = |b: usize, o: &mut [Real]| {
        for (oc, chunk) in o.chunks_mut(n).enumerate() {
            chunk.fill(bias[oc]);
        }
        let xb = &x[b * in_sz..(b + 1) * in_sz];
        if g.is_pointwise() {
            gemm(wm, Mat::new(xb, p, n), 1.0, o);
        } else {
            let mut cols = vec![0.0; p * n];
            im2col(xb, g, &mut cols);
            gemm(wm, Mat::new(&cols, p, n), 1.0, o);
        }
    };
    par::for_each_chunk_mut(&mut out, g.c_out * n, run);
    out
}

struct ConvGrads {
    dx: Option<Vec<Real>>,
    dw: Option<Vec<Real>>,
    db: Option<Vec<Real>>,
}

fn backward(
    x: &[Real],
    w: &[Real],
    gout: &[Real],
    g: &ConvGeom,
    need: [bool; 3],
) -> ConvGrads {
    let n = g.out_plane();
    let p = g.patch();
    let in_sz = g.c_in * g.in_plane();
    let out_sz = g.c_out * n;
    let wm = Mat::new(w, g.c_out, p);

    let dx = need[0].then(|| {
        let mut dx = vec![0.0; g.batch * in_sz];
        par::for_each_chunk_mut(&mut dx, in_sz, |b, dxb| {
            let gb = Mat::new(&gout[b * out_sz..(b + 1) * out_sz], g.c_out, n);
            if g.is_pointwise() {
                gemm(wm.t(), gb, 0.0, dxb);
            } else {
                let mut dcols = vec![0.0; p * n];
                gemm(wm.t(), gb, 0.0, &mut dcols);
                col2im(&dcols, g, dxb);
            }
        });
        dx
    });

    let dw = need[1].then(|| {
        // Per-item partial sums reduced in batch order for reproducibility.
        let partial = par::map_range(g.batch, |b| {
            let gb = Mat::new(&gout[b * out_sz..(b + 1) * out_sz], g.c_out, n);
            let xb = &x[b * in_sz..(b + 1) * in_sz];
            let mut dwb = vec![0.0; g.c_out * p];
            if g.is_pointwise() {
                gemm(gb, Mat::new(xb, p, n).t(), 0.0, &mut dwb);
            } else {
                let mut cols = vec![0.0; p * n];
                im2col(xb, g, &mut cols);
                gemm(gb, Mat::new(&cols, p, n).t(), 0.0, &mut dwb);
            }
            dwb
        });
        let mut dw = vec![0.0; g.c_out * p];
        for part in partial {
            for (a, b) in dw.iter_mut().zip(part) {
                *a += b;
            }
        }
        dw
    });

    let db = need[2].then(|| {
        let mut db = vec![0.0; g.c_out];
        for b in 0..g.batch {
            for (oc, acc) in db.iter_mut().enumerate() {
                let off = b * out_sz + oc * n;
                *acc += gout[off..off + n].iter().sum::<Real>();
            }
        }
        db
    });

    ConvGrads { dx, dw, db }
}

fn conv_op<'t>(
    x: Var<'t>,
    weight: Var<'t>,
    bias: Var<'t>,
    geom: ConvGeom,
    out_shape: Vec<usize>,
) -> Var<'t> {
    let xv = x.value();
    let wv = weight.value();
    let bv = bias.value();
    assert_eq!(
        bv.shape(),
        &[geom.c_out],
        "bias must have one entry per output channel"
    );
    let out = forward(xv.data(), wv.data(), bv.data(), &geom);
    let in_shape = xv.shape().to_vec();
    let w_shape = wv.shape().to_vec();
    x.tape().op(
        &[x, weight, bias],
        Tensor::from_vec(&out_shape, out),
        Box::new(move |a| {
            let gr = backward(
                a.inputs[0].data(),
                a.inputs[1].data(),
                a.grad.data(),
                &geom,
                [a.needs[0], a.needs[1], a.needs[2]],
            );
            vec![
                gr.dx.map(|d| Tensor::from_vec(&in_shape, d)),
                gr.dw.map(|d| Tensor::from_vec(&w_shape, d)),
                gr.db.map(|d| Tensor::from_vec(&[geom.c_out], d)),
            ]
        }),
    )
}

/// 2D cross-correlation. `x` is `[C_in,H,W]` or batched `[B,C_in,H,W]`,
/// `weight` is `[C_out,C_in,kh,kw]`, `bias` is `[C_out]`.
pub fn conv2d<'t>(x: Var<'t>, weight: Var<'t>, bias: Var<'t>, stride: usize, padding: usize) -> Var<'t> {
    let xs = x.shape();
    let ws = weight.shape();
    assert_eq!(ws.len(), 4, "conv2d weight must be [C_out,C_in,kh,kw], got {ws:?}");
    let (batch, c, h, w, batched) = match *xs.as_slice() {
        [c, h, w] => (1, c, h, w, false),
        [b, c, h, w] => (b, c, h, w, true),
        _ => panic!("conv2d input must be [C,H,W] or [B,C,H,W], got {xs:?}"),
    };
    assert_eq!(ws[1], c, "conv2d channel mismatch: input {xs:?}, weight {ws:?}");
    let geom = ConvGeom::new(
        batch,
        c,
        ws[0],
        [1, h, w],
        [1, ws[2], ws[3]],
        [1, stride, stride],
        [0, padding, padding],
    );
    let [_, oh, ow] = geom.output;
    let out_shape = if batched {
        vec![batch, ws[0], oh, ow]
    } else {
        vec![ws[0], oh, ow]
    };
    conv_op(x, weight, bias, geom, out_shape)
}

/// 3D cross-correlation. `x` is `[C_in,D,H,W]` or batched `[B,C_in,D,H,W]`,
/// `weight` is `[C_out,C_in,kd,kh,kw]`, `bias` is `[C_out]`.
pub fn conv3d<'t>(x: Var<'t>, weight: Var<'t>, bias: Var<'t>, stride: usize, padding: usize) -> Var<'t> {
    let xs = x.shape();
    let ws = weight.shape();
    assert_eq!(ws.len(), 5, "conv3d weight must be [C_out,C_in,kd,kh,kw], got {ws:?}");
    let (batch, c, d, h, w, batched) = match *xs.as_slice() {
        [c, d, h, w] => (1, c, d, h, w, false),
        [b, c, d, h, w] => (b, c, d, h, w, true),
        _ => panic!("conv3d input must be [C,D,H,W] or [B,C,D,H,W], got {xs:?}"),
    };
    assert_eq!(ws[1], c, "conv3d channel mismatch: input {xs:?}, weight {ws:?}");
    let geom = ConvGeom::new(
        batch,
        c,
        ws[0],
        [d, h, w],
        [ws[2], ws[3], ws[4]],
        [stride; 3],
        [padding; 3],
    );
    let [od, oh, ow] = geom.output;
    let out_shape = if batched {
        vec![batch, ws[0], od, oh, ow]
    } else {
        vec![ws[0], od, oh, ow]
    };
    conv_op(x, weight, bias, geom, out_shape)
}
