//! FLOPs counting and the 45nm inference-energy estimator.
//!
//! Only convolutions are counted; batch-norm and activations are neglected.
//! A layer with `M` output neurons, `C` synaptic connections per neuron,
//! and mean input firing rate `F` costs `M·C` FLOPs when dense (ANN) and
//! `N·M·C·F` when spiking over `N` timesteps. Dense FLOPs are multiply-
//! accumulates at 4.6 pJ each; spiking FLOPs are accumulates at 0.9 pJ.
//! Energies are held as integer tenths of a picojoule and converted to
//! millijoules only for display.

use std::io::Write;

use crate::autodiff::{BnMode, Scalar, Tape};
use crate::model::{HalsieModel, ModelError, ModelInput};

use thiserror::Error;

/// MAC cost, tenths of a picojoule (4.6 pJ, 45nm CMOS, 32-bit float).
pub const E_MAC_TENTH_PJ: u128 = 46;
/// Accumulate-only cost, tenths of a picojoule (0.9 pJ).
pub const E_AC_TENTH_PJ: u128 = 9;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("cannot measure firing rates over an empty sample set")]
    EmptySampleSet,
    #[error("firing rate {0} is negative")]
    NegativeRate(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LayerKind {
    Ann,
    Snn,
}

impl LayerKind {
    fn label(self) -> &'static str {
        match self {
            LayerKind::Ann => "ANN",
            LayerKind::Snn => "SNN",
        }
    }
}

/// Cost profile of one convolution: `M` output neurons, `C` connections
/// per neuron, and the mean firing rate `F` of its input. Dense layers
/// have `F = 1` by definition.
#[derive(Clone, Debug)]
pub struct LayerProfile {
    pub name: String,
    pub kind: LayerKind,
    pub neurons: u64,
    pub fan_in: u64,
    rate: f64,
}

impl LayerProfile {
    pub fn ann(name: impl Into<String>, neurons: u64, fan_in: u64) -> Self {
        LayerProfile {
            name: name.into(),
            kind: LayerKind::Ann,
            neurons,
            fan_in,
            rate: 1.0,
        }
    }

    pub fn snn(
        name: impl Into<String>,
        neurons: u64,
        fan_in: u64,
        rate: f64,
    ) -> Result<Self, EnergyError> {
        if rate < 0.0 || !rate.is_finite() {
            return Err(EnergyError::NegativeRate(rate));
        }
        Ok(LayerProfile {
            name: name.into(),
            kind: LayerKind::Snn,
            neurons,
            fan_in,
            rate,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

/// FLOPs of one layer: `M·C` dense, `N·M·C·F` spiking. The timestep count
/// only applies to spiking layers (dense layers run once).
pub fn layer_flops(profile: &LayerProfile, timesteps: u32) -> f64 {
    let mc = profile.neurons as f64 * profile.fan_in as f64;
    match profile.kind {
        LayerKind::Ann => mc,
        LayerKind::Snn => timesteps as f64 * mc * profile.rate,
    }
}

/// Aggregated FLOPs and energy, with the per-layer breakdown.
#[derive(Clone, Debug)]
pub struct EnergyReport {
    pub layers: Vec<(LayerProfile, f64)>,
    pub flops_ann: f64,
    pub flops_snn: f64,
    pub timesteps: u32,
    e_total_tenth_pj: u128,
}

impl EnergyReport {
    /// Apply the cost model to raw FLOPs totals.
    pub fn from_totals(flops_ann: f64, flops_snn: f64) -> Self {
        EnergyReport {
            layers: Vec::new(),
            flops_ann,
            flops_snn,
            timesteps: 1,
            e_total_tenth_pj: energy_tenths(flops_ann, flops_snn),
        }
    }

    pub fn e_total_tenth_pj(&self) -> u128 {
        self.e_total_tenth_pj
    }

    /// Total energy in millijoules (0.1 pJ = 1e-10 mJ).
    pub fn e_total_mj(&self) -> f64 {
        self.e_total_tenth_pj as f64 * 1e-10
    }
}

fn energy_tenths(flops_ann: f64, flops_snn: f64) -> u128 {
    (flops_ann * E_MAC_TENTH_PJ as f64).round() as u128
        + (flops_snn * E_AC_TENTH_PJ as f64).round() as u128
}

/// Aggregate per-layer FLOPs by kind and apply the energy constants.
pub fn estimate_energy(profiles: &[LayerProfile], timesteps: u32) -> EnergyReport {
    let mut layers = Vec::with_capacity(profiles.len());
    let mut flops_ann = 0.0;
    let mut flops_snn = 0.0;
    for p in profiles {
        let flops = layer_flops(p, timesteps);
        match p.kind {
            LayerKind::Ann => flops_ann += flops,
            LayerKind::Snn => flops_snn += flops,
        }
        layers.push((p.clone(), flops));
    }
    EnergyReport {
        layers,
        flops_ann,
        flops_snn,
        timesteps,
        e_total_tenth_pj: energy_tenths(flops_ann, flops_snn),
    }
}

/// Mean input spike rate of every spiking convolution, measured over a
/// sample set in eval mode. Returns rates keyed by conv-desc index.
pub fn measure_firing_rates<T: Scalar>(
    model: &mut HalsieModel<T>,
    samples: &[ModelInput<T>],
) -> Result<Vec<(usize, f64)>, EnergyError> {
    if samples.is_empty() {
        return Err(EnergyError::EmptySampleSet);
    }
    let mut sums: Vec<f64> = vec![0.0; model.conv_descs().len()];
    let mut seen: Vec<usize> = vec![0; model.conv_descs().len()];
    for input in samples {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, input, BnMode::Eval)?;
        for (idx, rate) in out.snn_input_rates {
            sums[idx] += rate;
            seen[idx] += 1;
        }
    }
    Ok(sums
        .into_iter()
        .zip(seen)
        .enumerate()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(idx, (sum, n))| (idx, sum / n as f64))
        .collect())
}

/// Profile every convolution of a model: static M·C from the architecture,
/// spiking rates measured on the given samples, timesteps = the network's
/// bin count.
pub fn profile_model<T: Scalar>(
    model: &mut HalsieModel<T>,
    samples: &[ModelInput<T>],
) -> Result<EnergyReport, EnergyError> {
    let rates = measure_firing_rates(model, samples)?;
    let mut profiles = Vec::with_capacity(model.conv_descs().len());
    for (idx, desc) in model.conv_descs().iter().enumerate() {
        if desc.snn {
            let rate = rates
                .iter()
                .find(|(i, _)| *i == idx)
                .map(|&(_, r)| r)
                .unwrap_or(0.0);
            profiles.push(LayerProfile::snn(&desc.name, desc.neurons, desc.fan_in, rate)?);
        } else {
            profiles.push(LayerProfile::ann(&desc.name, desc.neurons, desc.fan_in));
        }
    }
    let bins = model.spec().bins as u32;
    Ok(estimate_energy(&profiles, bins))
}

/// CSV form: `layer,kind,M,C,F,flops` rows, per-kind totals, and the total
/// energy in millijoules.
pub fn write_csv(report: &EnergyReport, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "layer,kind,M,C,F,flops")?;
    for (p, flops) in &report.layers {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            p.name,
            p.kind.label(),
            p.neurons,
            p.fan_in,
            p.rate,
            flops
        )?;
    }
    writeln!(out, "TOTAL_ANN,ANN,,,,{}", report.flops_ann)?;
    writeln!(out, "TOTAL_SNN,SNN,,,,{}", report.flops_snn)?;
    writeln!(out, "E_TOTAL_MJ,,,,,{:.6}", report.e_total_mj())?;
    Ok(())
}

/// Human-readable table for the terminal.
pub fn render_table(report: &EnergyReport) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{:<24} {:>4} {:>12} {:>6} {:>8} {:>16}\n",
        "layer", "kind", "M", "C", "F", "FLOPs"
    ));
    for (p, flops) in &report.layers {
        s.push_str(&format!(
            "{:<24} {:>4} {:>12} {:>6} {:>8.4} {:>16.0}\n",
            p.name,
            p.kind.label(),
            p.neurons,
            p.fan_in,
            p.rate,
            flops
        ));
    }
    s.push_str(&format!(
        "FLOPs(ANN) = {:.4e}   FLOPs(SNN) = {:.4e}   timesteps = {}\n",
        report.flops_ann, report.flops_snn, report.timesteps
    ));
    s.push_str(&format!("E_total = {:.4} mJ\n", report.e_total_mj()));
    s
}
