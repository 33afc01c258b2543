//! Leaky-integrate-and-fire dynamics with learnable threshold and leak.
//!
//! One step of the membrane recurrence is
//!
//! ```text
//! u[t] = drive[t] + λ·u[t−1] − v_th·o[t−1]      (soft reset, one step late)
//! o[t] = 1 if u[t] ≥ v_th else 0
//! ```
//!
//! The forward spike is an exact Heaviside; during backpropagation its
//! derivative is replaced by the unit-mass arctan pseudo-derivative
//! `g(x) = γ / (2(1 + ((π/2)γx)²))` evaluated at `x = u − v_th`, which is
//! the derivative of `σ(x) = arctan((π/2)γx)/π + 1/2`.
//!
//! Plain-array forms ([`lif_step`], [`run_sequence`]) carry the reference
//! semantics; [`unroll`] records the same recurrence on a [`Tape`] so the
//! network can backpropagate through time.

use crate::autodiff::{AdError, BwdCtx, OpKernel, Scalar, Tape, Tensor};
use thiserror::Error;

use std::f64::consts::{FRAC_PI_2, PI};

/// Smallest admissible firing threshold after a training step.
pub const MIN_THRESHOLD: f64 = 0.01;

/// Default initialization for a fresh layer.
pub const INIT_THRESHOLD: f64 = 1.0;
pub const INIT_LEAK: f64 = 0.9;

#[derive(Debug, Error)]
pub enum LifError {
    #[error("drive has {got} elements, state has {want}")]
    ShapeMismatch { got: usize, want: usize },
    #[error("configuration error: {0}")]
    Config(String),
}

/// Per-layer firing threshold and leak factor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LifParams<T> {
    pub v_th: T,
    pub leak: T,
}

impl<T: Scalar> Default for LifParams<T> {
    fn default() -> Self {
        LifParams {
            v_th: T::from_f64_c(INIT_THRESHOLD),
            leak: T::from_f64_c(INIT_LEAK),
        }
    }
}

impl<T: Scalar> LifParams<T> {
    pub fn new(v_th: T, leak: T) -> Self {
        LifParams { v_th, leak }
    }

    /// Clamp to the admissible region: `v_th ≥ 0.01`, `λ ∈ [0, 1]`.
    /// Applied after every optimizer step.
    pub fn clamp(&mut self) {
        self.v_th = self.v_th.max(T::from_f64_c(MIN_THRESHOLD));
        self.leak = self.leak.max(T::zero()).min(T::one());
    }
}

/// Evolving state of one layer: the membrane map and the previous binary
/// spike map. Reset to zeros between samples.
#[derive(Clone, Debug)]
pub struct LifState<T> {
    pub u_mem: Vec<T>,
    pub o_prev: Vec<T>,
}

impl<T: Scalar> LifState<T> {
    pub fn zeros(len: usize) -> Self {
        LifState {
            u_mem: vec![T::zero(); len],
            o_prev: vec![T::zero(); len],
        }
    }

    pub fn reset(&mut self) {
        self.u_mem.iter_mut().for_each(|v| *v = T::zero());
        self.o_prev.iter_mut().for_each(|v| *v = T::zero());
    }
}

/// Advance the membrane one step and return the new binary spike map.
pub fn lif_step<T: Scalar>(
    state: &mut LifState<T>,
    drive: &[T],
    params: &LifParams<T>,
) -> Result<Vec<T>, LifError> {
    if drive.len() != state.u_mem.len() {
        return Err(LifError::ShapeMismatch {
            got: drive.len(),
            want: state.u_mem.len(),
        });
    }
    let mut spikes = vec![T::zero(); drive.len()];
    for i in 0..drive.len() {
        let u = drive[i] + params.leak * state.u_mem[i] - params.v_th * state.o_prev[i];
        state.u_mem[i] = u;
        spikes[i] = if u >= params.v_th { T::one() } else { T::zero() };
    }
    state.o_prev.copy_from_slice(&spikes);
    Ok(spikes)
}

/// Run a full bin sequence from a zeroed state. Returns the spike map of
/// every step and the final membrane map (the temporal-accumulator
/// read-out); the state does not outlive the call.
pub fn run_sequence<T: Scalar>(
    bins: &[Vec<T>],
    params: &LifParams<T>,
) -> Result<(Vec<Vec<T>>, Vec<T>), LifError> {
    let Some(first) = bins.first() else {
        return Err(LifError::Config("sequence must have at least one bin".into()));
    };
    let mut state = LifState::zeros(first.len());
    let mut spikes = Vec::with_capacity(bins.len());
    for bin in bins {
        spikes.push(lif_step(&mut state, bin, params)?);
    }
    Ok((spikes, state.u_mem))
}

/// The arctan pseudo-derivative `g(x) = γ / (2(1 + ((π/2)γx)²))`; integrates
/// to 1 over the real line for any width γ.
pub fn pseudo_derivative(x: f64, gamma: f64) -> f64 {
    let s = FRAC_PI_2 * gamma * x;
    gamma / (2.0 * (1.0 + s * s))
}

/// The smooth spike `σ(x) = arctan((π/2)γx)/π + 1/2` whose derivative is
/// [`pseudo_derivative`]; exercised by the gradient-verification oracle.
pub fn smooth_spike(x: f64, gamma: f64) -> f64 {
    (FRAC_PI_2 * gamma * x).atan() / PI + 0.5
}

/// The pseudo-derivative map `∂o/∂u` at a membrane map `u`: the quantity
/// substituted for the Heaviside derivative in backward passes.
pub fn surrogate_grad<T: Scalar>(u: &[T], params: &LifParams<T>, gamma: f64) -> Vec<T> {
    u.iter()
        .map(|&v| T::from_f64_c(pseudo_derivative((v - params.v_th).as_f64(), gamma)))
        .collect()
}

/// Forward semantics of the spike nonlinearity on a tape.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SpikeKind {
    /// Exact Heaviside; production forward.
    Hard,
    /// The smooth `σ` counterpart. Backward is identical, which makes the
    /// relaxed graph an exactly differentiable system — this is what the
    /// finite-difference oracle for the surrogate backward runs against.
    Relaxed,
}

/// Record `o = spike(u − v_th)` on the tape. `v_th` must be a one-element
/// tensor; gradients flow into both `u` and `v_th` through the surrogate.
pub fn spike<T: Scalar>(
    tape: &mut Tape<T>,
    u: Tensor,
    v_th: Tensor,
    gamma: f64,
    kind: SpikeKind,
) -> Result<Tensor, AdError> {
    if tape.shape(v_th).numel() != 1 {
        return Err(AdError::Shape(format!(
            "spike threshold must have one element, got {}",
            tape.shape(v_th)
        )));
    }
    let th = tape.value(v_th)[0];
    let out: Vec<T> = tape
        .value(u)
        .iter()
        .map(|&v| match kind {
            SpikeKind::Hard => {
                if v >= th {
                    T::one()
                } else {
                    T::zero()
                }
            }
            SpikeKind::Relaxed => T::from_f64_c(smooth_spike((v - th).as_f64(), gamma)),
        })
        .collect();
    let shape = tape.shape(u).clone();
    let requires = tape.any_requires(&[u, v_th]);
    Ok(tape.push_custom(out, shape, requires, Box::new(SpikeOp { u, v_th, gamma })))
}

struct SpikeOp {
    u: Tensor,
    v_th: Tensor,
    gamma: f64,
}

impl<T: Scalar> OpKernel<T> for SpikeOp {
    fn backward(&self, ctx: &mut BwdCtx<'_, T>, g: &[T]) {
        let th = ctx.value(self.v_th)[0];
        let uv = ctx.value(self.u);
        if ctx.wants(self.u) {
            let du: Vec<T> = uv
                .iter()
                .zip(g)
                .map(|(&u, &gv)| {
                    gv * T::from_f64_c(pseudo_derivative((u - th).as_f64(), self.gamma))
                })
                .collect();
            ctx.accumulate(self.u, du);
        }
        if ctx.wants(self.v_th) {
            let mut acc = T::zero();
            for (&u, &gv) in uv.iter().zip(g) {
                acc -= gv * T::from_f64_c(pseudo_derivative((u - th).as_f64(), self.gamma));
            }
            ctx.accumulate(self.v_th, vec![acc]);
        }
    }
}

/// Spike maps and final membrane of one layer unrolled over a bin sequence.
pub struct Unrolled {
    pub spikes: Vec<Tensor>,
    pub final_u: Tensor,
}

/// Record the full recurrence over `drives` on the tape, starting from a
/// zeroed state. Backpropagation through the returned graph is BPTT: the
/// soft-reset term contributes both a direct `∂/∂v_th` path and a path
/// through the previous spike map, and the leak receives `Σ_t ∂L/∂u[t]·u[t−1]`.
pub fn unroll<T: Scalar>(
    tape: &mut Tape<T>,
    drives: &[Tensor],
    v_th: Tensor,
    leak: Tensor,
    gamma: f64,
    kind: SpikeKind,
) -> Result<Unrolled, AdError> {
    if drives.is_empty() {
        return Err(AdError::Config("unroll needs at least one drive".into()));
    }
    let mut prev: Option<(Tensor, Tensor)> = None; // (u, o) of the previous step
    let mut spikes = Vec::with_capacity(drives.len());
    for &drive in drives {
        let u = match prev {
            None => drive,
            Some((u_prev, o_prev)) => {
                let decayed = tape.scalar_mul(leak, u_prev)?;
                let reset = tape.scalar_mul(v_th, o_prev)?;
                let kept = tape.sub(decayed, reset)?;
                tape.add(drive, kept)?
            }
        };
        let o = spike(tape, u, v_th, gamma, kind)?;
        spikes.push(o);
        prev = Some((u, o));
    }
    Ok(Unrolled {
        spikes,
        final_u: prev.expect("non-empty").0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Shape;

    #[test]
    fn decay_without_drive() {
        // drive 0, u_prev 0.5, λ 0.8 → u 0.4, below threshold 1
        let mut state = LifState::<f64>::zeros(1);
        state.u_mem[0] = 0.5;
        let params = LifParams::new(1.0, 0.8);
        let spikes = lif_step(&mut state, &[0.0], &params).unwrap();
        assert!((state.u_mem[0] - 0.4).abs() < 1e-12);
        assert_eq!(spikes, vec![0.0]);
    }

    #[test]
    fn spike_then_delayed_soft_reset() {
        // u = 0.7 + 0.8·0.5 = 1.1 ≥ 1 → spike; next step u = 0.8·1.1 − 1 = −0.12
        let mut state = LifState::<f64>::zeros(1);
        state.u_mem[0] = 0.5;
        let params = LifParams::new(1.0, 0.8);
        let spikes = lif_step(&mut state, &[0.7], &params).unwrap();
        assert_eq!(spikes, vec![1.0]);
        assert!((state.u_mem[0] - 1.1).abs() < 1e-12);
        let spikes = lif_step(&mut state, &[0.0], &params).unwrap();
        assert_eq!(spikes, vec![0.0]);
        assert!((state.u_mem[0] - (-0.12)).abs() < 1e-12);
    }

    #[test]
    fn pure_integrator_limit_sums_drives() {
        // λ=1 and an unreachable threshold: u is the running sum
        let params = LifParams::new(1e12f64, 1.0);
        let bins = vec![vec![0.3], vec![0.5], vec![-0.1]];
        let (spikes, u) = run_sequence(&bins, &params).unwrap();
        assert!(spikes.iter().all(|s| s[0] == 0.0));
        assert!((u[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn all_zero_bins_do_nothing() {
        let params = LifParams::<f64>::default();
        let bins = vec![vec![0.0; 4]; 3];
        let (spikes, u) = run_sequence(&bins, &params).unwrap();
        assert!(spikes.iter().flatten().all(|&s| s == 0.0));
        assert!(u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_bin_equals_single_step() {
        let params = LifParams::new(0.6, 0.9);
        let drive = vec![0.2, 0.9, -0.4];
        let (seq_spikes, seq_u) = run_sequence(std::slice::from_ref(&drive), &params).unwrap();
        let mut state = LifState::zeros(3);
        let step_spikes = lif_step(&mut state, &drive, &params).unwrap();
        assert_eq!(seq_spikes[0], step_spikes);
        assert_eq!(seq_u, state.u_mem);
    }

    #[test]
    fn surrogate_peaks_at_half_gamma_and_vanishes_in_tails() {
        let gamma = 100.0;
        let params = LifParams::new(1.0, 0.9);
        let g = surrogate_grad(&[1.0f64], &params, gamma);
        assert!((g[0] - gamma / 2.0).abs() < 1e-9);
        let far = surrogate_grad(&[1e6f64, -1e6], &params, gamma);
        assert!(far.iter().all(|&v| v < 1e-9));
    }

    #[test]
    fn pseudo_derivative_has_unit_mass() {
        // midpoint quadrature over [-40, 40] with tail correction; the tail
        // of γ/(2(1+((π/2)γx)²)) integrates to (1 − (2/π)·atan((π/2)γX))/2
        for gamma in [1.0, 10.0, 100.0] {
            let (lo, hi, n) = (-40.0, 40.0, 800_000);
            let step = (hi - lo) / n as f64;
            let mut acc = 0.0;
            for i in 0..n {
                let x = lo + (i as f64 + 0.5) * step;
                acc += pseudo_derivative(x, gamma) * step;
            }
            let tail = 1.0 - (2.0 / PI) * (FRAC_PI_2 * gamma * hi).atan();
            acc += tail;
            assert!((acc - 1.0).abs() < 1e-6, "γ={gamma}: ∫g = {acc}");
        }
    }

    #[test]
    fn reset_clean_rerun_is_identical() {
        let params = LifParams::new(0.8, 0.7);
        let bins: Vec<Vec<f64>> = (0..6).map(|i| vec![0.3 + 0.2 * (i as f64)]).collect();
        let a = run_sequence(&bins, &params).unwrap();
        let b = run_sequence(&bins, &params).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn membrane_magnitude_decays_between_spikes() {
        let params = LifParams::new(10.0, 0.85);
        let mut state = LifState::<f64>::zeros(1);
        state.u_mem[0] = 2.0;
        let mut last = 2.0f64;
        for _ in 0..20 {
            lif_step(&mut state, &[0.0], &params).unwrap();
            assert!(state.u_mem[0].abs() <= last.abs() + 1e-15);
            last = state.u_mem[0];
        }
    }

    #[test]
    fn tape_unroll_matches_plain_sequence() {
        let params = LifParams::new(0.9, 0.75);
        let bins: Vec<Vec<f64>> = vec![
            vec![0.5, 1.2, 0.0],
            vec![0.7, 0.0, 0.3],
            vec![1.5, 0.2, 0.9],
            vec![0.0, 0.0, 2.0],
        ];
        let (plain_spikes, plain_u) = run_sequence(&bins, &params).unwrap();

        let mut tape = Tape::<f64>::new();
        let v_th = tape.scalar_leaf(params.v_th);
        let leak = tape.scalar_leaf(params.leak);
        let drives: Vec<Tensor> = bins
            .iter()
            .map(|b| tape.constant(b.clone(), Shape::of(&[3])))
            .collect();
        let out = unroll(&mut tape, &drives, v_th, leak, 100.0, SpikeKind::Hard).unwrap();
        for (t, o) in out.spikes.iter().enumerate() {
            assert_eq!(tape.value(*o), plain_spikes[t].as_slice());
        }
        assert_eq!(tape.value(out.final_u), plain_u.as_slice());
    }

    #[test]
    fn spike_free_leak_gradient_matches_the_closed_form() {
        // with an unreachable threshold, u_B = Σ_t λ^(B−t)·d_t, so
        // du_B/dλ = Σ_t (B−t)·λ^(B−t−1)·d_t
        let drives = [0.4f64, -0.2, 0.9, 0.3];
        let leak_v = 0.7f64;
        let b = drives.len();

        let mut tape = Tape::<f64>::new();
        let v_th = tape.scalar_leaf(1e9);
        let leak = tape.scalar_leaf(leak_v);
        let ds: Vec<Tensor> = drives
            .iter()
            .map(|&d| tape.constant(vec![d], crate::autodiff::Shape::of(&[1])))
            .collect();
        let out = unroll(&mut tape, &ds, v_th, leak, 100.0, SpikeKind::Hard).unwrap();
        let root = tape.sum(out.final_u);
        tape.backward(root).unwrap();
        let got = tape.grad(leak).unwrap()[0];

        let want: f64 = drives
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let exp = (b - 1 - i) as i32;
                if exp == 0 {
                    0.0
                } else {
                    exp as f64 * leak_v.powi(exp - 1) * d
                }
            })
            .sum();
        assert!(
            (got - want).abs() / want.abs() < 1e-6,
            "analytic {got} vs closed form {want}"
        );
    }

    #[test]
    fn subthreshold_surrogate_kills_drive_gradient() {
        // u well below threshold: ∂spike/∂drive ≈ 0
        let mut tape = Tape::<f64>::new();
        let v_th = tape.scalar_leaf(1.0);
        let drive = tape.leaf(vec![-2.0], Shape::of(&[1]));
        let o = spike(&mut tape, drive, v_th, 100.0, SpikeKind::Hard).unwrap();
        let s = tape.sum(o);
        tape.backward(s).unwrap();
        assert!(tape.grad(drive).unwrap()[0].abs() < 1e-3);
    }
}
