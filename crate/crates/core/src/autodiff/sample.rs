//! Bilinear texture lookup and mean/variance reduction across views.

use super::tape::Var;
use crate::tensor::{Real, Tensor};

/// The four texels around a pixel position and their interpolation weights,
/// with the derivatives of the weights w.r.t. `u` and `v`.
#[derive(Clone, Copy, Debug)]
pub struct Bilinear {
    pub index: [usize; 4],
    pub weight: [Real; 4],
    pub dw_du: [Real; 4],
    pub dw_dv: [Real; 4],
}

impl Bilinear {
    /// `None` when `(u, v)` lies outside `[0, w-1] × [0, h-1]`.
    pub fn at(u: Real, v: Real, w: usize, h: usize) -> Option<Self> {
        if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as Real && v <= (h - 1) as Real) {
            return None;
        }
        let x0 = (u.floor() as usize).min(w - 1);
        let y0 = (v.floor() as usize).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = u - x0 as Real;
        let fy = v - y0 as Real;
        Some(Bilinear {
            index: [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1],
            weight: [
                (1.0 - fx) * (1.0 - fy),
                fx * (1.0 - fy),
                (1.0 - fx) * fy,
                fx * fy,
            ],
            dw_du: [-(1.0 - fy), 1.0 - fy, -fy, fy],
            dw_dv: [-(1.0 - fx), -fx, 1.0 - fx, fx],
        })
    }

    /// Interpolated value of one channel plane.
    #[inline]
    pub fn sample(&self, plane: &[Real]) -> Real {
        (0..4).map(|i| self.weight[i] * plane[self.index[i]]).sum()
    }

    /// Derivatives of the interpolated value w.r.t. `u` and `v`.
    #[inline]
    pub fn gradient(&self, plane: &[Real]) -> (Real, Real) {
        let mut du = 0.0;
        let mut dv = 0.0;
        for i in 0..4 {
            let t = plane[self.index[i]];
            du += self.dw_du[i] * t;
            dv += self.dw_dv[i] * t;
        }
        (du, dv)
    }
}

/// Bilinear lookup of every channel of `map` (`[C,H,W]`) at pixel
/// coordinates `uv` (`[2]`, x then y). Samples outside the image are zero
/// and report `outside = true`. Gradients reach both the map and `uv`.
pub fn bilinear_sample2d<'t>(map: Var<'t>, uv: Var<'t>) -> (Var<'t>, bool) {
    let ms = map.shape();
    assert_eq!(ms.len(), 3, "bilinear_sample2d map must be [C,H,W], got {ms:?}");
    assert_eq!(uv.shape(), vec![2], "bilinear_sample2d uv must be [2]");
    let (c, h, w) = (ms[0], ms[1], ms[2]);
    let (mv, uvv) = (map.value(), uv.value());
    let bil = Bilinear::at(uvv[0], uvv[1], w, h);
    let plane = h * w;
    let out: Vec<Real> = match &bil {
        Some(b) => (0..c)
            .map(|ch| b.sample(&mv.data()[ch * plane..(ch + 1) * plane]))
            .collect(),
        None => vec![0.0; c],
    };
    let var = map.tape().op(
        &[map, uv],
        Tensor::from_vec(&[c], out),
        Box::new(move |a| {
            let Some(b) = bil else {
                return vec![None, None];
            };
            let g = a.grad.data();
            let dmap = a.needs[0].then(|| {
                let mut d = Tensor::zeros(&ms);
                for ch in 0..c {
                    for i in 0..4 {
                        d[ch * plane + b.index[i]] += b.weight[i] * g[ch];
                    }
                }
                d
            });
            let duv = a.needs[1].then(|| {
                let m = a.inputs[0].data();
                let (mut du, mut dv) = (0.0, 0.0);
                for ch in 0..c {
                    let (gu, gv) = b.gradient(&m[ch * plane..(ch + 1) * plane]);
                    du += g[ch] * gu;
                    dv += g[ch] * gv;
                }
                Tensor::from_vec(&[2], vec![du, dv])
            });
            vec![dmap, duv]
        }),
    );
    (var, bil.is_none())
}

/// Mean and (weighted) variance over the rows of `f` (`[k, d]`).
///
/// Without weights: `μ = (1/k)Σf_i`, `σ² = (1/k)Σf_i² − μ²`. With weights
/// `w` (constant, positive sum): `μ = Σw_i f_i / Σw`, `σ² = Σw_i f_i² / Σw − μ²`.
/// Returns `[2, d]`: row 0 is `μ`, row 1 is `σ²`.
pub fn reduce_mean_var<'t>(f: Var<'t>, weights: Option<&Tensor>) -> Var<'t> {
    let fs = f.shape();
    assert_eq!(fs.len(), 2, "reduce_mean_var input must be [k,d], got {fs:?}");
    let (k, d) = (fs[0], fs[1]);
    let w: Vec<Real> = match weights {
        Some(w) => {
            assert_eq!(w.shape(), &[k], "reduce_mean_var weights must be [{k}]");
            assert!(w.all_finite(), "reduce_mean_var weights must be finite");
            w.data().to_vec()
        }
        None => vec![1.0; k],
    };
    let total: Real = w.iter().sum();
    assert!(total > 0.0, "reduce_mean_var weight sum must be positive, got {total}");
    let fv = f.value();
    let (mean, var) = mean_var_rows(fv.data(), k, d, &w, total);
    let mut out = mean;
    out.extend(var);
    f.tape().op(
        &[f],
        Tensor::from_vec(&[2, d], out),
        Box::new(move |a| {
            let fdat = a.inputs[0].data();
            let (g, mu) = (a.grad.data(), &a.output.data()[..d]);
            let mut df = vec![0.0; k * d];
            for i in 0..k {
                let s = w[i] / total;
                for j in 0..d {
                    df[i * d + j] = s * (g[j] + 2.0 * g[d + j] * (fdat[i * d + j] - mu[j]));
                }
            }
            vec![Some(Tensor::from_vec(&[k, d], df))]
        }),
    )
}

/// Row-weighted mean and `E[f²] − μ²` for a `[k, d]` block.
pub(crate) fn mean_var_rows(f: &[Real], k: usize, d: usize, w: &[Real], total: Real) -> (Vec<Real>, Vec<Real>) {
    let mut mean = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for i in 0..k {
        for j in 0..d {
            let x = f[i * d + j];
            mean[j] += w[i] * x;
            sq[j] += w[i] * x * x;
        }
    }
    for j in 0..d {
        mean[j] /= total;
        sq[j] = sq[j] / total - mean[j] * mean[j];
    }
    (mean, sq)
}
