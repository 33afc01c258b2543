//! Bilinear upsampling (align_corners = false).

use super::tape::{BwdCtx, OpKernel, Tape, Tensor};
use super::{AdError, Scalar, Shape};

/// Per-axis source taps: destination index `i` reads `lo[i]` and `hi[i]`
/// blended by `frac[i]`.
struct AxisTaps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
}

fn axis_taps(src: usize, dst: usize) -> AxisTaps {
    let scale = src as f64 / dst as f64;
    let mut lo = Vec::with_capacity(dst);
    let mut hi = Vec::with_capacity(dst);
    let mut frac = Vec::with_capacity(dst);
    for i in 0..dst {
        let center = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
        let l = (center.floor() as usize).min(src - 1);
        lo.push(l);
        hi.push((l + 1).min(src - 1));
        frac.push((center - l as f64).clamp(0.0, 1.0));
    }
    AxisTaps { lo, hi, frac }
}

/// Resize rank-4 input to `out_h × out_w` by bilinear interpolation. The
/// gradient scatters the same interpolation weights back onto the source.
pub fn upsample_bilinear<T: Scalar>(
    tape: &mut Tape<T>,
    x: Tensor,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor, AdError> {
    let (n, c, h, w) = tape.shape(x).as_nchw()?;
    if out_h == 0 || out_w == 0 {
        return Err(AdError::Shape("upsample target must be non-empty".into()));
    }
    let ys = axis_taps(h, out_h);
    let xs = axis_taps(w, out_w);

    let xv = tape.value(x);
    let mut out = vec![T::zero(); n * c * out_h * out_w];
    for plane in 0..n * c {
        let src = &xv[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        for oy in 0..out_h {
            let (y0, y1, fy) = (ys.lo[oy], ys.hi[oy], ys.frac[oy]);
            for ox in 0..out_w {
                let (x0, x1, fx) = (xs.lo[ox], xs.hi[ox], xs.frac[ox]);
                let v00 = src[y0 * w + x0].as_f64();
                let v01 = src[y0 * w + x1].as_f64();
                let v10 = src[y1 * w + x0].as_f64();
                let v11 = src[y1 * w + x1].as_f64();
                let top = v00 * (1.0 - fx) + v01 * fx;
                let bot = v10 * (1.0 - fx) + v11 * fx;
                dst[oy * out_w + ox] = T::from_f64_c(top * (1.0 - fy) + bot * fy);
            }
        }
    }

    let requires = tape.requires_grad(x);
    Ok(tape.push_custom(
        out,
        Shape::nchw(n, c, out_h, out_w),
        requires,
        Box::new(UpsampleOp {
            x,
            planes: n * c,
            h,
            w,
            out_h,
            out_w,
        }),
    ))
}

struct UpsampleOp {
    x: Tensor,
    planes: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
}

impl<T: Scalar> OpKernel<T> for UpsampleOp {
    fn backward(&self, ctx: &mut BwdCtx<'_, T>, g: &[T]) {
        if !ctx.wants(self.x) {
            return;
        }
        let ys = axis_taps(self.h, self.out_h);
        let xs = axis_taps(self.w, self.out_w);
        let mut dx = vec![T::zero(); self.planes * self.h * self.w];
        for plane in 0..self.planes {
            let src = &g[plane * self.out_h * self.out_w..(plane + 1) * self.out_h * self.out_w];
            let dst = &mut dx[plane * self.h * self.w..(plane + 1) * self.h * self.w];
            for oy in 0..self.out_h {
                let (y0, y1, fy) = (ys.lo[oy], ys.hi[oy], ys.frac[oy]);
                for ox in 0..self.out_w {
                    let (x0, x1, fx) = (xs.lo[ox], xs.hi[ox], xs.frac[ox]);
                    let gv = src[oy * self.out_w + ox].as_f64();
                    dst[y0 * self.w + x0] += T::from_f64_c(gv * (1.0 - fy) * (1.0 - fx));
                    dst[y0 * self.w + x1] += T::from_f64_c(gv * (1.0 - fy) * fx);
                    dst[y1 * self.w + x0] += T::from_f64_c(gv * fy * (1.0 - fx));
                    dst[y1 * self.w + x1] += T::from_f64_c(gv * fy * fx);
                }
            }
        }
        ctx.accumulate(self.x, dx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_stays_constant() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(vec![3.25; 4], Shape::nchw(1, 1, 2, 2));
        let y = upsample_bilinear(&mut tape, x, 5, 7).unwrap();
        assert!(tape.value(y).iter().all(|&v| (v - 3.25).abs() < 1e-12));
    }

    #[test]
    fn doubling_a_2x2_interpolates_the_interior() {
        // Hand interpolation with align_corners=false, scale 0.5:
        // source centers sit at dst 0.5/2.5 per axis, so the 4×4 output is
        //   a            a+(b-a)/4      b-(b-a)/4     b     (rows blend alike)
        let (a, b, c, d) = (0.0, 4.0, 8.0, 12.0);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(vec![a, b, c, d], Shape::nchw(1, 1, 2, 2));
        let y = upsample_bilinear(&mut tape, x, 4, 4).unwrap();
        let want = [
            0.0, 1.0, 3.0, 4.0, //
            2.0, 3.0, 5.0, 6.0, //
            6.0, 7.0, 9.0, 10.0, //
            8.0, 9.0, 11.0, 12.0,
        ];
        for (got, want) in tape.value(y).iter().zip(&want) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }
}
