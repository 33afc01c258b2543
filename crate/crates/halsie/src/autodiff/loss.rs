//! Weighted pixel-wise cross entropy.

use super::tape::{BwdCtx, OpKernel, Tape, Tensor};
use super::{AdError, Scalar, Shape};

/// Mean over non-ignored pixels of `w[target] · (−log softmax(logits)[target])`.
///
/// `targets` holds one class id per pixel in N×H×W order; `ignore_id` pixels
/// contribute neither loss nor gradient. Returns a scalar tensor.
pub fn weighted_cross_entropy<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Tensor,
    targets: &[u32],
    class_weights: &[T],
    ignore_id: u32,
) -> Result<Tensor, AdError> {
    let (n, k, h, w) = tape.shape(logits).as_nchw()?;
    if class_weights.len() != k {
        return Err(AdError::Shape(format!(
            "{} class weights for {k} classes",
            class_weights.len()
        )));
    }
    if targets.len() != n * h * w {
        return Err(AdError::Shape(format!(
            "{} target pixels for an {n}×{h}×{w} batch",
            targets.len()
        )));
    }
    for &t in targets {
        if t != ignore_id && t as usize >= k {
            return Err(AdError::Label {
                label: t,
                classes: k,
            });
        }
    }

    let hw = h * w;
    let lv = tape.value(logits);
    // softmax per pixel, kept for the backward pass
    let mut probs = vec![T::zero(); lv.len()];
    let mut loss = 0.0f64;
    let mut valid = 0usize;
    for i in 0..n {
        for p in 0..hw {
            let mut max = T::neg_infinity();
            for ch in 0..k {
                max = max.max(lv[(i * k + ch) * hw + p]);
            }
            let mut denom = T::zero();
            for ch in 0..k {
                let e = (lv[(i * k + ch) * hw + p] - max).exp();
                probs[(i * k + ch) * hw + p] = e;
                denom += e;
            }
            for ch in 0..k {
                probs[(i * k + ch) * hw + p] /= denom;
            }
            let t = targets[i * hw + p];
            if t == ignore_id {
                continue;
            }
            valid += 1;
            let pt = probs[(i * k + t as usize) * hw + p].as_f64().max(f64::MIN_POSITIVE);
            loss -= class_weights[t as usize].as_f64() * pt.ln();
        }
    }
    if valid > 0 {
        loss /= valid as f64;
    }

    let requires = tape.requires_grad(logits);
    Ok(tape.push_custom(
        vec![T::from_f64_c(loss)],
        Shape::scalar(),
        requires,
        Box::new(CrossEntropyOp {
            logits,
            probs,
            targets: targets.to_vec(),
            weights: class_weights.to_vec(),
            ignore_id,
            n,
            k,
            hw,
            valid,
        }),
    ))
}

struct CrossEntropyOp<T> {
    logits: Tensor,
    probs: Vec<T>,
    targets: Vec<u32>,
    weights: Vec<T>,
    ignore_id: u32,
    n: usize,
    k: usize,
    hw: usize,
    valid: usize,
}

impl<T: Scalar> OpKernel<T> for CrossEntropyOp<T> {
    fn backward(&self, ctx: &mut BwdCtx<'_, T>, g: &[T]) {
        if !ctx.wants(self.logits) || self.valid == 0 {
            return;
        }
        let scale = g[0] / T::from_f64_c(self.valid as f64);
        let mut dl = vec![T::zero(); self.probs.len()];
        for i in 0..self.n {
            for p in 0..self.hw {
                let t = self.targets[i * self.hw + p];
                if t == self.ignore_id {
                    continue;
                }
                let wt = self.weights[t as usize] * scale;
                for ch in 0..self.k {
                    let idx = (i * self.k + ch) * self.hw + p;
                    let indicator = if ch == t as usize { T::one() } else { T::zero() };
                    dl[idx] = wt * (self.probs[idx] - indicator);
                }
            }
        }
        ctx.accumulate(self.logits, dl);
    }
}
