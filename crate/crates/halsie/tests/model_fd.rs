//! End-to-end finite-difference checks of whole-model gradients on a
//! 16×16 toy description. The frames-only setting is smooth everywhere;
//! the hybrid setting is checked in the spike-free regime (thresholds out
//! of reach), where the unrolled recurrence is differentiable too.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use halsie::autodiff::{weighted_cross_entropy, BnMode, Tape};
use halsie::model::{HalsieModel, MmixRates, ModelInput, NetworkSpec, Setting};

fn toy_spec() -> NetworkSpec {
    NetworkSpec {
        width: 16,
        height: 16,
        bins: 3,
        stages: 2,
        base_channels: 4,
        classes: 3,
        frame_channels: 1,
        mmix: MmixRates::default(),
    }
}

fn toy_input(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> (ModelInput<f64>, Vec<u32>) {
    let hw = spec.height * spec.width;
    let input = ModelInput {
        n: 1,
        height: spec.height,
        width: spec.width,
        frame: (0..hw).map(|_| rng.gen_range(0.0..1.0)).collect(),
        bins: (0..spec.bins)
            .map(|_| {
                (0..2 * hw)
                    .map(|_| if rng.gen_bool(0.2) { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect(),
    };
    let targets = (0..hw).map(|_| rng.gen_range(0..spec.classes) as u32).collect();
    (input, targets)
}

/// The scalar training loss of the current parameters (train mode, so
/// normalization uses batch statistics and the value is independent of the
/// running buffers the pass updates).
fn loss_of(model: &mut HalsieModel<f64>, input: &ModelInput<f64>, targets: &[u32]) -> f64 {
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, input, BnMode::Train).unwrap();
    let loss = weighted_cross_entropy(&mut tape, out.logits, targets, &[1.0, 1.0, 1.0], 255)
        .unwrap();
    tape.value(loss)[0]
}

fn check_setting(setting: Setting, silence_spikes: bool, probes: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(setting.code() as u64 + 50);
    let spec = toy_spec();
    let mut model = HalsieModel::<f64>::new(spec.clone(), setting, 9).unwrap();
    if silence_spikes {
        for s in 0..spec.stages {
            let id = model
                .params()
                .lookup(&format!("tfe_events.s{s}.lif.v_th"))
                .unwrap();
            model.params_mut().get_mut(id).value[0] = 1e9;
        }
    }
    let (input, targets) = toy_input(&spec, &mut rng);

    // analytic gradients of every learnable
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &input, BnMode::Train).unwrap();
    let loss =
        weighted_cross_entropy(&mut tape, out.logits, &targets, &[1.0, 1.0, 1.0], 255).unwrap();
    tape.backward(loss).unwrap();
    model.harvest_grads(&tape, &out.binding);
    let analytic: Vec<(String, Vec<f64>)> = model
        .params()
        .entries()
        .iter()
        .filter(|p| p.kind.learnable())
        .map(|p| (p.name.clone(), p.grad.clone()))
        .collect();

    // probe a random subset of parameter elements with central differences
    let eps = 1e-5;
    let learnable: Vec<usize> = model
        .params()
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.kind.learnable())
        .map(|(i, _)| i)
        .collect();
    let mut compared = 0;
    let mut attempts = 0;
    while compared < probes && attempts < probes * 4 {
        attempts += 1;
        let which = learnable[rng.gen_range(0..learnable.len())];
        let name = model.params().entries()[which].name.clone();
        let len = model.params().entries()[which].value.len();
        let elem = rng.gen_range(0..len);

        let id = model.params().lookup(&name).unwrap();
        let orig = model.params().get(id).value[elem];
        model.params_mut().get_mut(id).value[elem] = orig + eps;
        let plus = loss_of(&mut model, &input, &targets);
        model.params_mut().get_mut(id).value[elem] = orig - eps;
        let minus = loss_of(&mut model, &input, &targets);
        model.params_mut().get_mut(id).value[elem] = orig;

        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, g)| g[elem])
            .unwrap();
        if a.abs() + numeric.abs() < 1e-8 {
            continue;
        }
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
        assert!(
            rel < 1e-4,
            "{setting}: {name}[{elem}] analytic {a:.6e} vs numeric {numeric:.6e} (rel {rel:.2e})"
        );
        compared += 1;
    }
    assert!(compared >= probes / 2, "only {compared} elements compared");
}

#[test]
fn frames_only_model_matches_finite_differences_end_to_end() {
    check_setting(Setting::A, false, 48);
}

#[test]
fn hybrid_model_matches_finite_differences_when_spike_free() {
    check_setting(Setting::H, true, 48);
}
