//! Batch normalization over the channel axis.

use super::tape::{BwdCtx, OpKernel, Tape, Tensor};
use super::{AdError, Scalar, Shape};

/// Whether normalization uses batch statistics (updating the running ones)
/// or the stored running statistics.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running mean/variance buffers, one entry per channel. Not learnable;
/// updated in place by train-mode forward passes.
#[derive(Clone, Debug)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BnStats<T> {
    pub fn new(channels: usize) -> Self {
        BnStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

/// Normalize `x` per channel, scale by `gamma`, shift by `beta`.
///
/// Train mode normalizes with biased batch statistics and folds them into
/// `running` with the given momentum; eval mode normalizes with `running`.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm<T: Scalar>(
    tape: &mut Tape<T>,
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running: &mut BnStats<T>,
    mode: BnMode,
    momentum: T,
    eps: T,
) -> Result<Tensor, AdError> {
    let (n, c, h, w) = tape.shape(x).as_nchw()?;
    if tape.shape(gamma).dims() != [c] || tape.shape(beta).dims() != [c] {
        return Err(AdError::Shape(format!(
            "batch_norm affine parameters must have {c} channels"
        )));
    }
    if running.mean.len() != c || running.var.len() != c {
        return Err(AdError::Shape(format!(
            "running statistics must have {c} channels"
        )));
    }

    let hw = h * w;
    let count = n * hw;
    let per_channel = |xv: &[T], f: &mut dyn FnMut(usize, T)| {
        for i in 0..n {
            for ch in 0..c {
                for &v in &xv[(i * c + ch) * hw..(i * c + ch + 1) * hw] {
                    f(ch, v);
                }
            }
        }
    };

    let (mean, invstd) = match mode {
        BnMode::Train => {
            if count == 0 {
                return Err(AdError::Shape("batch_norm over an empty batch".into()));
            }
            let mut mean = vec![T::zero(); c];
            per_channel(tape.value(x), &mut |ch, v| mean[ch] += v);
            let cnt = T::from_f64_c(count as f64);
            mean.iter_mut().for_each(|m| *m /= cnt);
            let mut var = vec![T::zero(); c];
            per_channel(tape.value(x), &mut |ch, v| {
                let d = v - mean[ch];
                var[ch] += d * d;
            });
            var.iter_mut().for_each(|s| *s /= cnt);
            for ch in 0..c {
                running.mean[ch] = (T::one() - momentum) * running.mean[ch] + momentum * mean[ch];
                running.var[ch] = (T::one() - momentum) * running.var[ch] + momentum * var[ch];
            }
            let invstd: Vec<T> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
            (mean, invstd)
        }
        BnMode::Eval => {
            let invstd: Vec<T> = running.var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
            (running.mean.clone(), invstd)
        }
    };

    let xv = tape.value(x);
    let gv = tape.value(gamma);
    let bv = tape.value(beta);
    let mut out = vec![T::zero(); xv.len()];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * hw;
            let (m, is, g, b) = (mean[ch], invstd[ch], gv[ch], bv[ch]);
            for k in 0..hw {
                out[base + k] = (xv[base + k] - m) * is * g + b;
            }
        }
    }

    let requires = tape.any_requires(&[x, gamma, beta]);
    Ok(tape.push_custom(
        out,
        Shape::nchw(n, c, h, w),
        requires,
        Box::new(BatchNormOp {
            x,
            gamma,
            mode,
            mean,
            invstd,
            beta,
            n,
            c,
            hw,
        }),
    ))
}

struct BatchNormOp<T> {
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    mode: BnMode,
    // statistics actually used by the forward pass
    mean: Vec<T>,
    invstd: Vec<T>,
    n: usize,
    c: usize,
    hw: usize,
}

impl<T: Scalar> OpKernel<T> for BatchNormOp<T> {
    fn backward(&self, ctx: &mut BwdCtx<'_, T>, g: &[T]) {
        let (n, c, hw) = (self.n, self.c, self.hw);
        let xv = ctx.value(self.x);
        let gv = ctx.value(self.gamma);
        let cnt = T::from_f64_c((n * hw) as f64);

        // Channel sums of dy and dy·x̂ feed every gradient below.
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * hw;
                let (m, is) = (self.mean[ch], self.invstd[ch]);
                for k in 0..hw {
                    let xhat = (xv[base + k] - m) * is;
                    sum_dy[ch] += g[base + k];
                    sum_dy_xhat[ch] += g[base + k] * xhat;
                }
            }
        }

        if ctx.wants(self.beta) {
            ctx.accumulate(self.beta, sum_dy.clone());
        }
        if ctx.wants(self.gamma) {
            ctx.accumulate(self.gamma, sum_dy_xhat.clone());
        }
        if ctx.wants(self.x) {
            let mut dx = vec![T::zero(); xv.len()];
            for i in 0..n {
                for ch in 0..c {
                    let base = (i * c + ch) * hw;
                    let (m, is, ga) = (self.mean[ch], self.invstd[ch], gv[ch]);
                    match self.mode {
                        BnMode::Train => {
                            // d/dx through the batch statistics:
                            // dx = γ·is/N · (N·dy − Σdy − x̂·Σ(dy·x̂))
                            let k1 = ga * is / cnt;
                            for k in 0..hw {
                                let xhat = (xv[base + k] - m) * is;
                                dx[base + k] = k1
                                    * (cnt * g[base + k]
                                        - sum_dy[ch]
                                        - xhat * sum_dy_xhat[ch]);
                            }
                        }
                        BnMode::Eval => {
                            // Running statistics are constants.
                            let k1 = ga * is;
                            for k in 0..hw {
                                dx[base + k] = k1 * g[base + k];
                            }
                        }
                    }
                }
            }
            ctx.accumulate(self.x, dx);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_trains_to_beta() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(vec![5.0; 2 * 3 * 2 * 2], Shape::nchw(2, 3, 2, 2));
        let gamma = tape.constant(vec![1.5, 2.0, 0.5], Shape::of(&[3]));
        let beta = tape.constant(vec![0.1, -0.2, 0.3], Shape::of(&[3]));
        let mut running = BnStats::new(3);
        let y = batch_norm(
            &mut tape, x, gamma, beta, &mut running, BnMode::Train, 0.1, 1e-5,
        )
        .unwrap();
        let out = tape.value(y);
        for i in 0..2 {
            for (ch, &b) in [0.1, -0.2, 0.3].iter().enumerate() {
                for k in 0..4 {
                    assert!((out[(i * 3 + ch) * 4 + k] - b).abs() < 1e-12);
                }
            }
        }
        // running stats moved toward the batch: mean 0.9·0 + 0.1·5
        assert!((running.mean[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn standardized_input_passes_through_with_identity_affine() {
        // mean 0, variance 1 per channel
        let vals = vec![-1.0, 1.0, -1.0, 1.0];
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(vals.clone(), Shape::nchw(1, 1, 2, 2));
        let gamma = tape.constant(vec![1.0], Shape::of(&[1]));
        let beta = tape.constant(vec![0.0], Shape::of(&[1]));
        let mut running = BnStats::new(1);
        let y = batch_norm(
            &mut tape, x, gamma, beta, &mut running, BnMode::Train, 0.1, 1e-5,
        )
        .unwrap();
        for (a, b) in tape.value(y).iter().zip(&vals) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn eval_mode_uses_running_statistics() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(vec![2.0, 4.0], Shape::nchw(1, 1, 1, 2));
        let gamma = tape.constant(vec![1.0], Shape::of(&[1]));
        let beta = tape.constant(vec![0.0], Shape::of(&[1]));
        let mut running = BnStats {
            mean: vec![2.0],
            var: vec![4.0],
        };
        let y = batch_norm(
            &mut tape, x, gamma, beta, &mut running, BnMode::Eval, 0.1, 0.0,
        )
        .unwrap();
        assert_eq!(tape.value(y), &[0.0, 1.0]);
        // eval must not touch the buffers
        assert_eq!(running.mean, vec![2.0]);
        assert_eq!(running.var, vec![4.0]);
    }
}
