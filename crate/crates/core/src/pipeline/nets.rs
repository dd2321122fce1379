//! Convolutional building blocks: a 2D/3D encoder–decoder with skip
//! connections and the localization head.

use rand::Rng;

use crate::autodiff::ops::{concat, linear, relu, reshape, upsample_nearest};
use crate::autodiff::{conv2d, conv3d, Bound, ParamId, ParamStore, Var};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub dims: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    /// He-normal weights (`gain = 2`) or LeCun-normal (`gain = 1`), zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: usize,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        gain: Real,
        rng: &mut impl Rng,
    ) -> Conv {
        let mut shape = vec![c_out, c_in];
        shape.extend(std::iter::repeat_n(k, dims));
        let fan_in = (c_in * k.pow(dims as u32)) as Real;
        let w = store.add(format!("{name}.w"), Tensor::randn(&shape, (gain / fan_in).sqrt(), rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[c_out]));
        Conv {
            w,
            b,
            dims,
            stride,
            padding: k / 2,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        match self.dims {
            2 => conv2d(x, p[self.w], p[self.b], self.stride, self.padding),
            3 => conv3d(x, p[self.w], p[self.b], self.stride, self.padding),
            d => unreachable!("unsupported convolution rank {d}"),
        }
    }
}

/// Encoder–decoder over batched `[B, C, spatial...]` inputs. Level 0 runs at
/// input resolution; each further level halves it with a stride-2 conv.
/// Decoder levels upsample ×2 (nearest), convolve, concatenate the skip, and
/// convolve again. A final 1×1 conv with no activation emits the output.
#[derive(Clone, Debug)]
pub struct UNet {
    dims: usize,
    enc: Vec<Vec<Conv>>,
    dec: Vec<[Conv; 2]>,
    head: Conv,
}

impl UNet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: usize,
        c_in: usize,
        widths: &[usize],
        c_out: usize,
        head_gain: Real,
        rng: &mut impl Rng,
    ) -> UNet {
        assert!(!widths.is_empty(), "encoder needs at least one level");
        let mut enc = Vec::new();
        let mut prev = c_in;
        for (i, &w) in widths.iter().enumerate() {
            let mut level = Vec::new();
            if i == 0 {
                level.push(Conv::new(store, &format!("{name}.enc0.0"), dims, prev, w, 3, 1, 2.0, rng));
            } else {
                level.push(Conv::new(store, &format!("{name}.enc{i}.0"), dims, prev, w, 3, 2, 2.0, rng));
                level.push(Conv::new(store, &format!("{name}.enc{i}.1"), dims, w, w, 3, 1, 2.0, rng));
            }
            enc.push(level);
            prev = w;
        }
        let mut dec = Vec::new();
        for i in (1..widths.len()).rev() {
            let (hi, lo) = (widths[i], widths[i - 1]);
            dec.push([
                Conv::new(store, &format!("{name}.dec{i}.up"), dims, hi, lo, 3, 1, 2.0, rng),
                Conv::new(store, &format!("{name}.dec{i}.merge"), dims, 2 * lo, lo, 3, 1, 2.0, rng),
            ]);
        }
        let head = Conv::new(store, &format!("{name}.head"), dims, widths[0], c_out, 1, 1, head_gain, rng);
        UNet { dims, enc, dec, head }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        let mut skips = Vec::new();
        let mut h = x;
        for level in &self.enc {
            for c in level {
                h = relu(c.forward(p, h));
            }
            skips.push(h);
        }
        skips.pop();
        for [up, merge] in &self.dec {
            let skip = skips.pop().expect("one skip per decoder level");
            let target = skip.shape()[2..].to_vec();
            debug_assert_eq!(target.len(), self.dims);
            h = relu(up.forward(p, upsample_nearest(h, &target)));
            h = relu(merge.forward(p, concat(&[h, skip], 1)));
        }
        self.head.forward(p, h)
    }
}

/// Two stride-2 3D convs, a ReLU fully-connected layer, and a linear layer
/// emitting `(ŝ, r, t)`.
#[derive(Clone, Debug)]
pub struct LocHead {
    convs: [Conv; 2],
    fc: (ParamId, ParamId),
    out: (ParamId, ParamId),
}

/// Raw scale bias that makes the activated scale exactly 1.
pub fn unit_scale_bias() -> Real {
    // softplus(x) + 0.05 = 1
    (0.95 as Real).exp_m1().ln()
}

impl LocHead {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        d: usize,
        channels: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> LocHead {
        let c1 = Conv::new(store, &format!("{name}.conv0"), 3, c_in, channels, 3, 2, 2.0, rng);
        let c2 = Conv::new(store, &format!("{name}.conv1"), 3, channels, channels, 3, 2, 2.0, rng);
        let side = |n: usize| (n + 2 - 3) / 2 + 1;
        let flat = channels * side(side(d)).pow(3);
        let fc_w = store.add(
            format!("{name}.fc.w"),
            Tensor::randn(&[hidden, flat], (2.0 / flat as Real).sqrt(), rng),
        );
        let fc_b = store.add(format!("{name}.fc.b"), Tensor::zeros(&[hidden]));
        // Zero weights and an identity bias: the initial transform is exactly
        // the identity.
        let out_w = store.add(format!("{name}.out.w"), Tensor::zeros(&[12, hidden]));
        let s = unit_scale_bias();
        let out_b = store.add(
            format!("{name}.out.b"),
            Tensor::from_vec(&[12], vec![s, s, s, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]),
        );
        LocHead {
            convs: [c1, c2],
            fc: (fc_w, fc_b),
            out: (out_w, out_b),
        }
    }

    /// `q` is `[1, C, d, d, d]`; returns the 12 raw outputs.
    pub fn forward<'t>(&self, p: &Bound<'t>, q: Var<'t>) -> Var<'t> {
        let mut h = q;
        for c in &self.convs {
            h = relu(c.forward(p, h));
        }
        let n: usize = h.shape().iter().product();
        let h = relu(linear(reshape(h, &[n]), p[self.fc.0], p[self.fc.1]));
        linear(h, p[self.out.0], p[self.out.1])
    }
}
