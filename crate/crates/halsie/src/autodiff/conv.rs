//! 2-D cross-correlation with stride, dilation, and zero padding.
//!
//! Lowered to im2col plus the GEMM kernels. The column matrix is laid out
//! `[C_in·k_h·k_w × H_out·W_out]`, matching the flattened weight rows, and
//! is rebuilt on the backward pass rather than cached.

use super::gemm::{gemm_abt, gemm_atb, gemm_nn};
use super::tape::{BwdCtx, OpKernel, Tape, Tensor};
use super::{AdError, Scalar, Shape};

/// Stride, dilation, and padding of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dCfg {
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: (usize, usize),
}

impl Default for Conv2dCfg {
    fn default() -> Self {
        Conv2dCfg {
            stride: (1, 1),
            dilation: (1, 1),
            padding: (0, 0),
        }
    }
}

impl Conv2dCfg {
    pub fn strided(s: usize, padding: usize) -> Self {
        Conv2dCfg {
            stride: (s, s),
            dilation: (1, 1),
            padding: (padding, padding),
        }
    }

    /// "Same" padding for a 3×3 kernel at the given dilation rates: the
    /// dilated footprint is 2r+1, so padding r preserves the spatial size
    /// at stride 1.
    pub fn dilated_same_3x3(r_h: usize, r_w: usize) -> Self {
        Conv2dCfg {
            stride: (1, 1),
            dilation: (r_h, r_w),
            padding: (r_h, r_w),
        }
    }

    /// `floor((extent + 2p − r(k−1) − 1) / s) + 1`, or an error when the
    /// kernel footprint exceeds the padded input.
    pub fn out_extent(
        &self,
        (h, w): (usize, usize),
        (kh, kw): (usize, usize),
    ) -> Result<(usize, usize), AdError> {
        let dim = |x: usize, k: usize, s: usize, d: usize, p: usize| -> Option<usize> {
            let span = (x + 2 * p).checked_sub(d * (k - 1) + 1)?;
            Some(span / s + 1)
        };
        match (
            dim(h, kh, self.stride.0, self.dilation.0, self.padding.0),
            dim(w, kw, self.stride.1, self.dilation.1, self.padding.1),
        ) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(AdError::Shape(format!(
                "kernel {kh}×{kw} (dilation {:?}) does not fit a {h}×{w} input with padding {:?}",
                self.dilation, self.padding
            ))),
        }
    }
}

struct ConvDims {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl ConvDims {
    fn ckk(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn ohw(&self) -> usize {
        self.oh * self.ow
    }
}

/// Strided/dilated 2-D cross-correlation of `x` with `weight`, plus an
/// optional per-output-channel bias.
pub fn conv2d<T: Scalar>(
    tape: &mut Tape<T>,
    x: Tensor,
    weight: Tensor,
    bias: Option<Tensor>,
    cfg: Conv2dCfg,
) -> Result<Tensor, AdError> {
    if cfg.stride.0 == 0 || cfg.stride.1 == 0 || cfg.dilation.0 == 0 || cfg.dilation.1 == 0 {
        return Err(AdError::Config("stride and dilation must be ≥ 1".into()));
    }
    let (n, c_in, h, w) = tape.shape(x).as_nchw()?;
    let (c_out, wc_in, kh, kw) = tape.shape(weight).as_nchw()?;
    if wc_in != c_in {
        return Err(AdError::Shape(format!(
            "weight expects {wc_in} input channels, input has {c_in}"
        )));
    }
    if let Some(b) = bias {
        if tape.shape(b).dims() != [c_out] {
            return Err(AdError::Shape(format!(
                "bias shape {} does not match {c_out} output channels",
                tape.shape(b)
            )));
        }
    }
    let (oh, ow) = cfg.out_extent((h, w), (kh, kw))?;
    let dims = ConvDims {
        n,
        c_in,
        h,
        w,
        c_out,
        kh,
        kw,
        oh,
        ow,
    };

    let mut out = vec![T::zero(); n * c_out * dims.ohw()];
    let mut cols = vec![T::zero(); dims.ckk() * dims.ohw()];
    let wv = tape.value(weight);
    let xv = tape.value(x);
    for i in 0..n {
        im2col(&xv[i * c_in * h * w..], &dims, cfg, &mut cols);
        gemm_nn(
            c_out,
            dims.ckk(),
            dims.ohw(),
            wv,
            &cols,
            &mut out[i * c_out * dims.ohw()..(i + 1) * c_out * dims.ohw()],
        );
    }
    if let Some(b) = bias {
        let bv = tape.value(b);
        for i in 0..n {
            for c in 0..c_out {
                let row = &mut out[(i * c_out + c) * dims.ohw()..(i * c_out + c + 1) * dims.ohw()];
                for v in row.iter_mut() {
                    *v += bv[c];
                }
            }
        }
    }

    let mut requires = tape.any_requires(&[x, weight]);
    if let Some(b) = bias {
        requires |= tape.requires_grad(b);
    }
    Ok(tape.push_custom(
        out,
        Shape::nchw(n, c_out, oh, ow),
        requires,
        Box::new(Conv2dOp {
            x,
            weight,
            bias,
            cfg,
            dims,
        }),
    ))
}

/// 1×1 convolution (per-pixel channel mixing). Validates that the weight
/// really is pointwise before delegating to [`conv2d`].
pub fn pointwise_conv<T: Scalar>(
    tape: &mut Tape<T>,
    x: Tensor,
    weight: Tensor,
    bias: Option<Tensor>,
) -> Result<Tensor, AdError> {
    let (_, _, kh, kw) = tape.shape(weight).as_nchw()?;
    if (kh, kw) != (1, 1) {
        return Err(AdError::Shape(format!(
            "pointwise weight must be 1×1, got {kh}×{kw}"
        )));
    }
    conv2d(tape, x, weight, bias, Conv2dCfg::default())
}

struct Conv2dOp {
    x: Tensor,
    weight: Tensor,
    bias: Option<Tensor>,
    cfg: Conv2dCfg,
    dims: ConvDims,
}

impl<T: Scalar> OpKernel<T> for Conv2dOp {
    fn backward(&self, ctx: &mut BwdCtx<'_, T>, g: &[T]) {
        let d = &self.dims;
        let want_x = ctx.wants(self.x);
        let want_w = ctx.wants(self.weight);
        let want_b = self.bias.map(|b| ctx.wants(b)).unwrap_or(false);

        let mut dx = want_x.then(|| vec![T::zero(); d.n * d.c_in * d.h * d.w]);
        let mut dw = want_w.then(|| vec![T::zero(); d.c_out * d.ckk()]);
        let mut db = want_b.then(|| vec![T::zero(); d.c_out]);

        let mut cols = vec![T::zero(); d.ckk() * d.ohw()];
        let mut col_grad = vec![T::zero(); d.ckk() * d.ohw()];
        let xv = ctx.value(self.x);
        let wv = ctx.value(self.weight);
        for i in 0..d.n {
            let gy = &g[i * d.c_out * d.ohw()..(i + 1) * d.c_out * d.ohw()];
            if let Some(dw) = dw.as_mut() {
                im2col(&xv[i * d.c_in * d.h * d.w..], d, self.cfg, &mut cols);
                gemm_abt(d.c_out, d.ckk(), d.ohw(), gy, &cols, dw);
            }
            if let Some(dx) = dx.as_mut() {
                col_grad.iter_mut().for_each(|v| *v = T::zero());
                gemm_atb(d.ckk(), d.c_out, d.ohw(), wv, gy, &mut col_grad);
                col2im(&col_grad, d, self.cfg, &mut dx[i * d.c_in * d.h * d.w..]);
            }
            if let Some(db) = db.as_mut() {
                for c in 0..d.c_out {
                    let row = &gy[c * d.ohw()..(c + 1) * d.ohw()];
                    let mut acc = T::zero();
                    for &v in row {
                        acc += v;
                    }
                    db[c] += acc;
                }
            }
        }

        if let Some(dx) = dx {
            ctx.accumulate(self.x, dx);
        }
        if let Some(dw) = dw {
            ctx.accumulate(self.weight, dw);
        }
        if let (Some(db), Some(b)) = (db, self.bias) {
            ctx.accumulate(b, db);
        }
    }
}

/// Valid output-column range `[lo, hi]` for one kernel tap, i.e. the `o`
/// values with `0 ≤ o·s + k·d − p < extent`.
fn tap_range(extent: usize, out: usize, s: usize, d: usize, p: usize, k: usize) -> (usize, usize) {
    let off = k as isize * d as isize - p as isize;
    let lo = if off >= 0 {
        0
    } else {
        ((-off) as usize).div_ceil(s)
    };
    let hi_num = extent as isize - 1 - off;
    if hi_num < 0 || lo >= out {
        return (1, 0); // empty
    }
    let hi = ((hi_num as usize) / s).min(out - 1);
    (lo, hi)
}

fn im2col<T: Scalar>(x: &[T], d: &ConvDims, cfg: Conv2dCfg, cols: &mut [T]) {
    let (sh, sw) = cfg.stride;
    let (dh, dw) = cfg.dilation;
    let (ph, pw) = cfg.padding;
    let mut row = 0;
    for ci in 0..d.c_in {
        let plane = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let (xlo, xhi) = tap_range(d.w, d.ow, sw, dw, pw, kj);
                for oy in 0..d.oh {
                    let dst = &mut cols[(row * d.oh + oy) * d.ow..(row * d.oh + oy + 1) * d.ow];
                    let iy = (oy * sh + ki * dh) as isize - ph as isize;
                    if iy < 0 || iy >= d.h as isize || xlo > xhi {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    dst[..xlo].iter_mut().for_each(|v| *v = T::zero());
                    dst[xhi + 1..].iter_mut().for_each(|v| *v = T::zero());
                    let base = kj as isize * dw as isize - pw as isize;
                    if sw == 1 {
                        let start = (xlo as isize + base) as usize;
                        dst[xlo..=xhi].copy_from_slice(&src_row[start..start + (xhi - xlo + 1)]);
                    } else {
                        for ox in xlo..=xhi {
                            dst[ox] = src_row[(ox as isize * sw as isize + base) as usize];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], d: &ConvDims, cfg: Conv2dCfg, dx: &mut [T]) {
    let (sh, sw) = cfg.stride;
    let (dh, dw) = cfg.dilation;
    let (ph, pw) = cfg.padding;
    let mut row = 0;
    for ci in 0..d.c_in {
        let plane = &mut dx[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let (xlo, xhi) = tap_range(d.w, d.ow, sw, dw, pw, kj);
                if xlo <= xhi {
                    for oy in 0..d.oh {
                        let iy = (oy * sh + ki * dh) as isize - ph as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let src = &cols[(row * d.oh + oy) * d.ow..(row * d.oh + oy + 1) * d.ow];
                        let dst_row = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                        let base = kj as isize * dw as isize - pw as isize;
                        for ox in xlo..=xhi {
                            dst_row[(ox as isize * sw as isize + base) as usize] += src[ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_ref(
        x: &[f64],
        w: &[f64],
        b: Option<&[f64]>,
        (n, c_in, h, wd): (usize, usize, usize, usize),
        (c_out, kh, kw): (usize, usize, usize),
        cfg: Conv2dCfg,
    ) -> Vec<f64> {
        let (oh, ow) = cfg.out_extent((h, wd), (kh, kw)).unwrap();
        let mut out = vec![0.0; n * c_out * oh * ow];
        for i in 0..n {
            for co in 0..c_out {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.map(|b| b[co]).unwrap_or(0.0);
                        for ci in 0..c_in {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * cfg.stride.0 + ky * cfg.dilation.0) as isize
                                        - cfg.padding.0 as isize;
                                    let ix = (ox * cfg.stride.1 + kx * cfg.dilation.1) as isize
                                        - cfg.padding.1 as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x[((i * c_in + ci) * h + iy as usize) * wd + ix as usize]
                                        * w[((co * c_in + ci) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out[((i * c_out + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo(vals: usize, phase: f64) -> Vec<f64> {
        (0..vals).map(|i| ((i as f64) * phase + 0.3).sin()).collect()
    }

    #[test]
    fn identity_pointwise_kernel_preserves_input() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(pseudo(2 * 3 * 4 * 4, 0.9), Shape::nchw(2, 3, 4, 4));
        // 3×3 identity channel map as 1×1 kernels
        let mut w = vec![0.0; 3 * 3];
        for c in 0..3 {
            w[c * 3 + c] = 1.0;
        }
        let wt = tape.constant(w, Shape::nchw(3, 3, 1, 1));
        let y = pointwise_conv(&mut tape, x, wt, None).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn matches_direct_reference_across_configs() {
        let cases = [
            ((1, 2, 6, 7), (3, 3, 3), Conv2dCfg::strided(2, 1)),
            ((2, 3, 5, 5), (4, 3, 3), Conv2dCfg::default()),
            ((1, 1, 9, 9), (2, 3, 3), Conv2dCfg::dilated_same_3x3(2, 3)),
            (
                (1, 2, 8, 8),
                (2, 3, 3),
                Conv2dCfg {
                    stride: (2, 3),
                    dilation: (1, 2),
                    padding: (2, 1),
                },
            ),
        ];
        for (xs, ws, cfg) in cases {
            let (n, c_in, h, wd) = xs;
            let (c_out, kh, kw) = ws;
            let xv = pseudo(n * c_in * h * wd, 0.7);
            let wv = pseudo(c_out * c_in * kh * kw, 1.1);
            let bv = pseudo(c_out, 0.5);
            let want = conv_ref(&xv, &wv, Some(&bv), xs, ws, cfg);

            let mut tape = Tape::<f64>::new();
            let x = tape.constant(xv, Shape::nchw(n, c_in, h, wd));
            let w = tape.constant(wv, Shape::nchw(c_out, c_in, kh, kw));
            let b = tape.constant(bv, Shape::of(&[c_out]));
            let y = conv2d(&mut tape, x, w, Some(b), cfg).unwrap();
            for (got, want) in tape.value(y).iter().zip(&want) {
                assert!((got - want).abs() < 1e-12, "cfg {cfg:?}");
            }
        }
    }

    #[test]
    fn same_padding_keeps_64x64_at_dilation_6x21() {
        let cfg = Conv2dCfg::dilated_same_3x3(6, 21);
        assert_eq!(cfg.out_extent((64, 64), (3, 3)).unwrap(), (64, 64));
    }

    #[test]
    fn stride2_overlapping_kernel_halves_odd_sizes_by_ceil() {
        let cfg = Conv2dCfg::strided(2, 1);
        assert_eq!(cfg.out_extent((65, 33), (3, 3)).unwrap(), (33, 17));
        assert_eq!(cfg.out_extent((64, 64), (3, 3)).unwrap(), (32, 32));
    }

    #[test]
    fn dilation_equals_zero_padded_kernel() {
        // a 3×3 kernel at dilation (r, r) matches the (2r+1)×(2r+1) kernel
        // holding the same taps with zeros in between, at dilation 1
        for r in [2usize, 3] {
            let (n, c_in, c_out, h, wd) = (1, 2, 3, 12, 13);
            let xv = pseudo(n * c_in * h * wd, 0.61);
            let wv = pseudo(c_out * c_in * 9, 1.23);
            let k_big = 2 * r + 1;
            let mut w_big = vec![0.0; c_out * c_in * k_big * k_big];
            for co in 0..c_out {
                for ci in 0..c_in {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            w_big[((co * c_in + ci) * k_big + ky * r) * k_big + kx * r] =
                                wv[((co * c_in + ci) * 3 + ky) * 3 + kx];
                        }
                    }
                }
            }
            let dilated_cfg = Conv2dCfg {
                stride: (1, 1),
                dilation: (r, r),
                padding: (0, 0),
            };
            let mut tape = Tape::<f64>::new();
            let x = tape.constant(xv.clone(), Shape::nchw(n, c_in, h, wd));
            let w = tape.constant(wv, Shape::nchw(c_out, c_in, 3, 3));
            let y_dil = conv2d(&mut tape, x, w, None, dilated_cfg).unwrap();
            let wb = tape.constant(w_big, Shape::nchw(c_out, c_in, k_big, k_big));
            let y_big = conv2d(&mut tape, x, wb, None, Conv2dCfg::default()).unwrap();
            assert_eq!(tape.shape(y_dil), tape.shape(y_big));
            for (a, b) in tape.value(y_dil).iter().zip(tape.value(y_big)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_op_chain_is_exactly_homogeneous() {
        // conv → upsample → concat is linear: doubling the input doubles
        // the output bit for bit, and doubling the root projection doubles
        // every gradient bit for bit
        let (n, c, h, wd) = (1, 2, 5, 4);
        let xv = pseudo(n * c * h * wd, 0.83);
        let wv = pseudo(3 * c * 9, 0.47);
        let proj = pseudo(2 * 3 * 8 * 8, 1.7);
        let run = |scale_x: f64, scale_proj: f64| {
            let mut tape = Tape::<f64>::new();
            let x = tape.leaf(xv.iter().map(|v| v * scale_x).collect(), Shape::nchw(n, c, h, wd));
            let w = tape.constant(wv.clone(), Shape::nchw(3, c, 3, 3));
            let y = conv2d(&mut tape, x, w, None, Conv2dCfg::dilated_same_3x3(1, 1)).unwrap();
            let up = crate::autodiff::upsample_bilinear(&mut tape, y, 8, 8).unwrap();
            let both = tape.concat(&[up, up]).unwrap();
            let root = tape
                .weighted_sum(both, proj.iter().map(|v| v * scale_proj).collect())
                .unwrap();
            tape.backward(root).unwrap();
            (
                tape.value(both).to_vec(),
                tape.grad(x).unwrap().to_vec(),
            )
        };
        let (y1, g1) = run(1.0, 1.0);
        let (y2, _) = run(2.0, 1.0);
        let (_, g4) = run(1.0, 2.0);
        for (a, b) in y1.iter().zip(&y2) {
            assert_eq!((2.0 * a).to_bits(), b.to_bits());
        }
        for (a, b) in g1.iter().zip(&g4) {
            assert_eq!((2.0 * a).to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(vec![0.0; 2 * 4 * 4], Shape::nchw(1, 2, 4, 4));
        let w = tape.constant(vec![0.0; 4 * 3 * 9], Shape::nchw(4, 3, 3, 3));
        assert!(conv2d(&mut tape, x, w, None, Conv2dCfg::default()).is_err());
    }

    #[test]
    #[ignore = "manual throughput probe"]
    fn throughput_probe() {
        // forward+backward of an encoder-sized conv, f32
        let (n, c_in, h, w) = (8usize, 16usize, 32usize, 32usize);
        let c_out = 32usize;
        let cfg = Conv2dCfg::strided(2, 1);
        let xv: Vec<f32> = (0..n * c_in * h * w).map(|i| (i as f32 * 0.7).sin()).collect();
        let wv: Vec<f32> = (0..c_out * c_in * 9).map(|i| (i as f32 * 1.3).cos()).collect();
        let reps = 50;
        let start = std::time::Instant::now();
        let mut sink = 0.0f32;
        for _ in 0..reps {
            let mut tape = Tape::<f32>::new();
            let x = tape.leaf(xv.clone(), Shape::nchw(n, c_in, h, w));
            let wt = tape.leaf(wv.clone(), Shape::nchw(c_out, c_in, 3, 3));
            let y = conv2d(&mut tape, x, wt, None, cfg).unwrap();
            let s = tape.sum(y);
            tape.backward(s).unwrap();
            sink += tape.value(s)[0];
        }
        let secs = start.elapsed().as_secs_f64();
        let oh = 16 * 16;
        let macs = (n * c_out * oh * c_in * 9) as f64;
        // forward + dW + dX ≈ 3× the forward MACs
        let gflops = 3.0 * 2.0 * macs * reps as f64 / secs / 1e9;
        println!("conv fwd+bwd: {gflops:.2} GFLOP/s (sink {sink})");
    }

    #[test]
    fn channel_sum_by_ones_pointwise() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(vec![1.0, 2.0, 3.0, 4.0], Shape::nchw(1, 2, 1, 2));
        let w = tape.constant(vec![1.0, 1.0], Shape::nchw(1, 2, 1, 1));
        let y = pointwise_conv(&mut tape, x, w, None).unwrap();
        assert_eq!(tape.value(y), &[4.0, 6.0]);
    }
}
