//! Shared oracles for the integration suites: central finite differences
//! against a scalar-valued graph, independent of the engine's backward
//! path.

use halsie::autodiff::{Tape, Tensor};

pub struct FdReport {
    pub max_rel: f64,
    pub compared: usize,
    pub skipped: usize,
}

/// Central-difference gradient check at double precision.
///
/// `build` must deterministically reconstruct the same scalar-rooted graph
/// from the given leaf values. Elements where `|analytic| + |numeric|`
/// falls below `skip_below` are excluded; the rest must agree to `tol`
/// relative error.
#[allow(clippy::needless_range_loop)] // the loop body perturbs work[l].0[i] in place
pub fn fd_check<F>(
    leaf_values: &[(Vec<f64>, Vec<usize>)],
    build: F,
    eps: f64,
    tol: f64,
    skip_below: f64,
) -> FdReport
where
    F: Fn(&mut Tape<f64>, &[Tensor]) -> Tensor,
{
    let eval = |values: &[(Vec<f64>, Vec<usize>)]| -> f64 {
        let mut tape = Tape::new();
        let leaves: Vec<Tensor> = values
            .iter()
            .map(|(v, s)| tape.leaf(v.clone(), s.as_slice()))
            .collect();
        let root = build(&mut tape, &leaves);
        tape.value(root)[0]
    };

    // analytic gradients
    let mut tape = Tape::new();
    let leaves: Vec<Tensor> = leaf_values
        .iter()
        .map(|(v, s)| tape.leaf(v.clone(), s.as_slice()))
        .collect();
    let root = build(&mut tape, &leaves);
    assert!(
        tape.shape(root).numel() == 1,
        "fd_check graphs must end in a scalar"
    );
    tape.backward(root).expect("backward");
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|&t| {
            tape.grad(t)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; tape.value(t).len()])
        })
        .collect();

    let mut report = FdReport {
        max_rel: 0.0,
        compared: 0,
        skipped: 0,
    };
    let mut work: Vec<(Vec<f64>, Vec<usize>)> = leaf_values.to_vec();
    for l in 0..work.len() {
        for i in 0..work[l].0.len() {
            let orig = work[l].0[i];
            work[l].0[i] = orig + eps;
            let plus = eval(&work);
            work[l].0[i] = orig - eps;
            let minus = eval(&work);
            work[l].0[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[l][i];
            if a.abs() + numeric.abs() < skip_below {
                report.skipped += 1;
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
            assert!(
                rel < tol,
                "leaf {l} element {i}: analytic {a:.9e} vs numeric {numeric:.9e} (rel {rel:.3e})"
            );
            report.max_rel = report.max_rel.max(rel);
            report.compared += 1;
        }
    }
    report
}
