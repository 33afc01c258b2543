//! Network construction and forward passes for every encoder setting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    batch_norm, conv2d, pointwise_conv, upsample_bilinear, BnMode, BnStats, Conv2dCfg, Scalar,
    Tape, Tensor,
};
use crate::lif::{self, SpikeKind};

use super::params::{ParamId, ParamKind, ParamStore};
use super::spec::NetworkSpec;
use super::ModelError;

pub(crate) const LEAKY_SLOPE: f64 = 0.01;
pub(crate) const BN_MOMENTUM: f64 = 0.1;
pub(crate) const BN_EPS: f64 = 1e-5;
const DEFAULT_SURROGATE_WIDTH: f64 = 100.0;

/// Encoder/input configuration of one model.
///
/// `A` and `B` are single spatial encoders (frames / stacked event bins),
/// `C` is the spiking encoder alone, `D` and `E` are dual same-kind
/// encoders, and `H` is the hybrid: spatial on frames, spiking on events.
/// All settings share the mixer and head shapes.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Setting {
    A,
    B,
    C,
    D,
    E,
    H,
}

impl Setting {
    pub fn uses_frames(self) -> bool {
        matches!(self, Setting::A | Setting::D | Setting::E | Setting::H)
    }

    pub fn uses_events(self) -> bool {
        !matches!(self, Setting::A)
    }

    pub fn code(self) -> u32 {
        match self {
            Setting::A => 0,
            Setting::B => 1,
            Setting::C => 2,
            Setting::D => 3,
            Setting::E => 4,
            Setting::H => 5,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        [
            Setting::A,
            Setting::B,
            Setting::C,
            Setting::D,
            Setting::E,
            Setting::H,
        ]
        .into_iter()
        .find(|s| s.code() == code)
    }
}

impl std::str::FromStr for Setting {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Setting::A),
            "B" => Ok(Setting::B),
            "C" => Ok(Setting::C),
            "D" => Ok(Setting::D),
            "E" => Ok(Setting::E),
            "H" => Ok(Setting::H),
            other => Err(ModelError::Spec(format!("unknown setting `{other}`"))),
        }
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let c = match self {
            Setting::A => 'A',
            Setting::B => 'B',
            Setting::C => 'C',
            Setting::D => 'D',
            Setting::E => 'E',
            Setting::H => 'H',
        };
        write!(f, "{c}")
    }
}

/// Static profile of one convolution at the declared input geometry:
/// output neuron count M and per-neuron fan-in C, for the energy model.
#[derive(Clone, Debug)]
pub struct ConvDesc {
    pub name: String,
    pub snn: bool,
    pub neurons: u64,
    pub fan_in: u64,
}

struct Conv {
    w: ParamId,
    b: ParamId,
    cfg: Conv2dCfg,
    desc: usize,
}

struct Bn {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

struct Lif {
    v_th: ParamId,
    leak: ParamId,
}

struct SfeBranch {
    stages: Vec<(Conv, Bn)>,
}

struct TfeBranch {
    stages: Vec<(Conv, Lif)>,
}

struct Mmix {
    pre: Conv,
    parallel: [Conv; 3],
    par_mix: Conv,
    post: Conv,
    high_mix: Conv,
    low_mix: Conv,
}

struct Head {
    c1: Conv,
    bn1: Bn,
    c2: Conv,
    bn2: Bn,
    out: Conv,
}

/// One batch of network inputs. Frames are normalized grayscale in
/// `[0, 1]`; event bins are raw kernel-weighted counts, one `n·2·h·w`
/// block per temporal bin. Branches a setting does not use ignore the
/// corresponding field.
pub struct ModelInput<T> {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub frame: Vec<T>,
    pub bins: Vec<Vec<T>>,
}

/// Result of one forward pass.
pub struct ForwardOut {
    pub logits: Tensor,
    /// Measured mean input spike rate per spiking convolution, keyed by
    /// [`ConvDesc`] index.
    pub snn_input_rates: Vec<(usize, f64)>,
    /// Temporal-accumulator read-outs (lowest/highest stage membrane maps)
    /// of the events branch, when the setting has one.
    pub tfe_low: Option<Tensor>,
    pub tfe_high: Option<Tensor>,
    /// Tape handle of every learnable parameter, in store order; feed back
    /// into [`HalsieModel::harvest_grads`] after a backward pass.
    pub binding: Vec<Option<Tensor>>,
}

/// The assembled network.
pub struct HalsieModel<T: Scalar> {
    spec: NetworkSpec,
    setting: Setting,
    params: ParamStore<T>,
    sfe_frame: Option<SfeBranch>,
    sfe_events: Option<SfeBranch>,
    tfe_events: Option<TfeBranch>,
    tfe_frame: Option<TfeBranch>,
    mmix: Mmix,
    head: Head,
    descs: Vec<ConvDesc>,
    surrogate_width: f64,
}

struct Builder<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
    descs: Vec<ConvDesc>,
}

impl<'a, T: Scalar> Builder<'a, T> {
    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        (kh, kw): (usize, usize),
        cfg: Conv2dCfg,
        snn: bool,
        (oh, ow): (usize, usize),
    ) -> Conv {
        let fan_in = c_in * kh * kw;
        let bound = (6.0 / fan_in as f64).sqrt();
        let weights: Vec<T> = (0..c_out * fan_in)
            .map(|_| T::from_f64_c(self.rng.gen_range(-bound..bound)))
            .collect();
        let w = self.store.add(
            format!("{name}.w"),
            [c_out, c_in, kh, kw],
            weights,
            ParamKind::ConvWeight,
        );
        let b = self.store.add(
            format!("{name}.b"),
            [c_out],
            vec![T::zero(); c_out],
            ParamKind::ConvBias,
        );
        let desc = self.descs.len();
        self.descs.push(ConvDesc {
            name: name.to_string(),
            snn,
            neurons: (c_out * oh * ow) as u64,
            fan_in: fan_in as u64,
        });
        Conv { w, b, cfg, desc }
    }

    fn bn(&mut self, name: &str, c: usize) -> Bn {
        Bn {
            gamma: self.store.add(
                format!("{name}.gamma"),
                [c],
                vec![T::one(); c],
                ParamKind::BnGamma,
            ),
            beta: self.store.add(
                format!("{name}.beta"),
                [c],
                vec![T::zero(); c],
                ParamKind::BnBeta,
            ),
            mean: self.store.add(
                format!("{name}.running_mean"),
                [c],
                vec![T::zero(); c],
                ParamKind::BnRunningMean,
            ),
            var: self.store.add(
                format!("{name}.running_var"),
                [c],
                vec![T::one(); c],
                ParamKind::BnRunningVar,
            ),
        }
    }

    fn lif(&mut self, name: &str) -> Lif {
        Lif {
            v_th: self.store.add(
                format!("{name}.v_th"),
                [1],
                vec![T::from_f64_c(lif::INIT_THRESHOLD)],
                ParamKind::LifThreshold,
            ),
            leak: self.store.add(
                format!("{name}.leak"),
                [1],
                vec![T::from_f64_c(lif::INIT_LEAK)],
                ParamKind::LifLeak,
            ),
        }
    }

    fn sfe(&mut self, name: &str, spec: &NetworkSpec, in_channels: usize) -> SfeBranch {
        let mut stages = Vec::with_capacity(spec.stages);
        let mut c_in = in_channels;
        for s in 0..spec.stages {
            let c_out = spec.channels_at(s);
            let extent = (
                NetworkSpec::stage_extent(spec.height, s),
                NetworkSpec::stage_extent(spec.width, s),
            );
            let conv = self.conv(
                &format!("{name}.s{s}.conv"),
                c_in,
                c_out,
                (3, 3),
                Conv2dCfg::strided(2, 1),
                false,
                extent,
            );
            let bn = self.bn(&format!("{name}.s{s}.bn"), c_out);
            stages.push((conv, bn));
            c_in = c_out;
        }
        SfeBranch { stages }
    }

    fn tfe(&mut self, name: &str, spec: &NetworkSpec, in_channels: usize) -> TfeBranch {
        let mut stages = Vec::with_capacity(spec.stages);
        let mut c_in = in_channels;
        for s in 0..spec.stages {
            let c_out = spec.channels_at(s);
            let extent = (
                NetworkSpec::stage_extent(spec.height, s),
                NetworkSpec::stage_extent(spec.width, s),
            );
            let conv = self.conv(
                &format!("{name}.s{s}.conv"),
                c_in,
                c_out,
                (3, 3),
                Conv2dCfg::strided(2, 1),
                true,
                extent,
            );
            let lif = self.lif(&format!("{name}.s{s}.lif"));
            stages.push((conv, lif));
            c_in = c_out;
        }
        TfeBranch { stages }
    }
}

impl<T: Scalar> HalsieModel<T> {
    /// Build a freshly initialized model. Weights draw from a seeded
    /// generator in construction order, so equal seeds give bit-identical
    /// parameters.
    pub fn new(spec: NetworkSpec, setting: Setting, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut params = ParamStore::new();
        let mut b = Builder {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            descs: Vec::new(),
        };

        let event_channels = 2 * spec.bins;
        let sfe_frame = matches!(setting, Setting::A | Setting::D | Setting::H)
            .then(|| b.sfe("sfe_frame", &spec, spec.frame_channels));
        let sfe_events = matches!(setting, Setting::B | Setting::D)
            .then(|| b.sfe("sfe_events", &spec, event_channels));
        let tfe_events = matches!(setting, Setting::C | Setting::E | Setting::H)
            .then(|| b.tfe("tfe_events", &spec, 2));
        let tfe_frame =
            matches!(setting, Setting::E).then(|| b.tfe("tfe_frame", &spec, spec.frame_channels));

        let c_h = spec.high_channels();
        let high_extent = (
            NetworkSpec::stage_extent(spec.height, spec.stages - 1),
            NetworkSpec::stage_extent(spec.width, spec.stages - 1),
        );
        let low_extent = (
            NetworkSpec::stage_extent(spec.height, 0),
            NetworkSpec::stage_extent(spec.width, 0),
        );
        let rates = spec.mmix.clone();
        let dil = |(rh, rw): (usize, usize)| Conv2dCfg::dilated_same_3x3(rh, rw);
        let mmix = Mmix {
            pre: b.conv("mmix.pre", c_h, c_h, (3, 3), dil(rates.pre), false, high_extent),
            parallel: [
                b.conv("mmix.par0", c_h, c_h, (3, 3), dil(rates.parallel[0]), false, high_extent),
                b.conv("mmix.par1", c_h, c_h, (3, 3), dil(rates.parallel[1]), false, high_extent),
                b.conv("mmix.par2", c_h, c_h, (3, 3), dil(rates.parallel[2]), false, high_extent),
            ],
            par_mix: b.conv(
                "mmix.par_mix",
                3 * c_h,
                c_h,
                (1, 1),
                Conv2dCfg::default(),
                false,
                high_extent,
            ),
            post: b.conv("mmix.post", c_h, c_h, (3, 3), dil(rates.post), false, high_extent),
            high_mix: b.conv(
                "mmix.high_mix",
                c_h,
                c_h,
                (1, 1),
                Conv2dCfg::default(),
                false,
                low_extent,
            ),
            low_mix: b.conv(
                "mmix.low_mix",
                spec.base_channels,
                spec.low_mix_width(),
                (1, 1),
                Conv2dCfg::default(),
                false,
                low_extent,
            ),
        };

        let head_w = spec.head_width();
        let head = Head {
            c1: b.conv(
                "head.c1",
                spec.mix_channels(),
                head_w,
                (3, 3),
                Conv2dCfg::dilated_same_3x3(1, 1),
                false,
                low_extent,
            ),
            bn1: b.bn("head.bn1", head_w),
            c2: b.conv(
                "head.c2",
                head_w,
                head_w,
                (3, 3),
                Conv2dCfg::dilated_same_3x3(1, 1),
                false,
                low_extent,
            ),
            bn2: b.bn("head.bn2", head_w),
            out: b.conv(
                "head.out",
                head_w,
                spec.classes,
                (1, 1),
                Conv2dCfg::default(),
                false,
                low_extent,
            ),
        };

        let descs = b.descs;
        Ok(HalsieModel {
            spec,
            setting,
            params,
            sfe_frame,
            sfe_events,
            tfe_events,
            tfe_frame,
            mmix,
            head,
            descs,
            surrogate_width: DEFAULT_SURROGATE_WIDTH,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn setting(&self) -> Setting {
        self.setting
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Static conv profiles (name, ANN/SNN kind, M, C) at the declared geometry.
    pub fn conv_descs(&self) -> &[ConvDesc] {
        &self.descs
    }

    /// Exact learnable-scalar count of this instance.
    pub fn count_params(&self) -> usize {
        self.params.learnable_scalars()
    }

    /// Surrogate width γ used by the spiking backward pass.
    pub fn set_surrogate_width(&mut self, gamma: f64) {
        self.surrogate_width = gamma;
    }

    fn validate_input(&self, input: &ModelInput<T>) -> Result<(), ModelError> {
        let hw = input.height * input.width;
        if input.n == 0 || hw == 0 {
            return Err(ModelError::Input("empty batch".into()));
        }
        if self.setting.uses_frames() {
            let want = input.n * self.spec.frame_channels * hw;
            if input.frame.len() != want {
                return Err(ModelError::Input(format!(
                    "frame batch holds {} values, expected {want}",
                    input.frame.len()
                )));
            }
        }
        if self.setting.uses_events() {
            if input.bins.len() != self.spec.bins {
                return Err(ModelError::Input(format!(
                    "{} event bins, network expects {}",
                    input.bins.len(),
                    self.spec.bins
                )));
            }
            for (i, bin) in input.bins.iter().enumerate() {
                if bin.len() != input.n * 2 * hw {
                    return Err(ModelError::Input(format!(
                        "bin {i} holds {} values, expected {}",
                        bin.len(),
                        input.n * 2 * hw
                    )));
                }
            }
        }
        Ok(())
    }

    /// One forward pass. Train mode updates batch-norm running statistics;
    /// eval mode is read-only apart from the tape.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        input: &ModelInput<T>,
        mode: BnMode,
    ) -> Result<ForwardOut, ModelError> {
        self.validate_input(input)?;
        let trainable = mode == BnMode::Train;
        let binding = bind_params(&self.params, tape, trainable);
        let (n, h, w) = (input.n, input.height, input.width);

        let frame_t = self.setting.uses_frames().then(|| {
            tape.constant(
                input.frame.clone(),
                [n, self.spec.frame_channels, h, w],
            )
        });
        let bin_ts: Vec<Tensor> = if self.setting.uses_events() {
            input
                .bins
                .iter()
                .map(|bin| tape.constant(bin.clone(), [n, 2, h, w]))
                .collect()
        } else {
            Vec::new()
        };

        let mut lows: Vec<Tensor> = Vec::new();
        let mut highs: Vec<Tensor> = Vec::new();
        let mut rates: Vec<(usize, f64)> = Vec::new();
        let mut tfe_low = None;
        let mut tfe_high = None;

        if let Some(branch) = &self.sfe_frame {
            let (low, high) = sfe_forward(
                tape,
                &mut self.params,
                &binding,
                branch,
                frame_t.expect("frame input bound"),
                mode,
            )?;
            lows.push(low);
            highs.push(high);
        }
        if let Some(branch) = &self.sfe_events {
            let stacked = tape.concat(&bin_ts)?;
            let (low, high) = sfe_forward(tape, &mut self.params, &binding, branch, stacked, mode)?;
            lows.push(low);
            highs.push(high);
        }
        if let Some(branch) = &self.tfe_events {
            let out = tfe_forward(tape, &binding, branch, &bin_ts, self.surrogate_width)?;
            rates.extend(out.rates);
            tfe_low = Some(out.low);
            tfe_high = Some(out.high);
            lows.push(out.low);
            highs.push(out.high);
        }
        if let Some(branch) = &self.tfe_frame {
            let drives = [frame_t.expect("frame input bound")];
            let out = tfe_forward(tape, &binding, branch, &drives, self.surrogate_width)?;
            rates.extend(out.rates);
            lows.push(out.low);
            highs.push(out.high);
        }

        // mixed potential maps: element-wise sums of the per-branch features
        let u_low = sum_maps(tape, &lows)?;
        let u_high = sum_maps(tape, &highs)?;

        let u_mix = self.mmix_forward(tape, &binding, u_high, u_low)?;
        let logits = self.head_forward(tape, &binding, u_mix, mode, (h, w))?;

        Ok(ForwardOut {
            logits,
            snn_input_rates: rates,
            tfe_low,
            tfe_high,
            binding,
        })
    }

    /// Copy the gradients of a completed backward pass into the parameter
    /// store. The binding is reconstructed from tape order, so this must be
    /// the tape the last `forward` ran on.
    pub fn harvest_grads(&mut self, tape: &Tape<T>, binding: &[Option<Tensor>]) {
        self.params.harvest_grads(tape, binding);
    }

    fn mmix_forward(
        &self,
        tape: &mut Tape<T>,
        binding: &[Option<Tensor>],
        u_high: Tensor,
        u_low: Tensor,
    ) -> Result<Tensor, ModelError> {
        let conv = |tape: &mut Tape<T>, layer: &Conv, x: Tensor| -> Result<Tensor, ModelError> {
            Ok(conv2d(
                tape,
                x,
                binding[layer.w.0].expect("weights bound"),
                Some(binding[layer.b.0].expect("bias bound")),
                layer.cfg,
            )?)
        };
        let d = conv(tape, &self.mmix.pre, u_high)?;
        let p0 = conv(tape, &self.mmix.parallel[0], d)?;
        let p1 = conv(tape, &self.mmix.parallel[1], d)?;
        let p2 = conv(tape, &self.mmix.parallel[2], d)?;
        let trio = tape.concat(&[p0, p1, p2])?;
        let mixed = conv(tape, &self.mmix.par_mix, trio)?;
        let d2 = conv(tape, &self.mmix.post, mixed)?;

        let (_, _, lh, lw) = tape.shape(u_low).as_nchw()?;
        let up = upsample_bilinear(tape, d2, lh, lw)?;
        let high_mixed = conv(tape, &self.mmix.high_mix, up)?;
        let low_mixed = conv(tape, &self.mmix.low_mix, u_low)?;
        Ok(tape.concat(&[high_mixed, low_mixed])?)
    }

    fn head_forward(
        &mut self,
        tape: &mut Tape<T>,
        binding: &[Option<Tensor>],
        u_mix: Tensor,
        mode: BnMode,
        (out_h, out_w): (usize, usize),
    ) -> Result<Tensor, ModelError> {
        let x = conv2d(
            tape,
            u_mix,
            binding[self.head.c1.w.0].expect("bound"),
            Some(binding[self.head.c1.b.0].expect("bound")),
            self.head.c1.cfg,
        )?;
        let x = bn_apply(tape, &mut self.params, binding, &self.head.bn1, x, mode)?;
        let x = tape.relu(x);
        let x = conv2d(
            tape,
            x,
            binding[self.head.c2.w.0].expect("bound"),
            Some(binding[self.head.c2.b.0].expect("bound")),
            self.head.c2.cfg,
        )?;
        let x = bn_apply(tape, &mut self.params, binding, &self.head.bn2, x, mode)?;
        let x = tape.relu(x);
        let logits = pointwise_conv(
            tape,
            x,
            binding[self.head.out.w.0].expect("bound"),
            Some(binding[self.head.out.b.0].expect("bound")),
        )?;
        Ok(upsample_bilinear(tape, logits, out_h, out_w)?)
    }
}

pub(crate) fn bind_params<T: Scalar>(
    params: &ParamStore<T>,
    tape: &mut Tape<T>,
    trainable: bool,
) -> Vec<Option<Tensor>> {
    params
        .entries()
        .iter()
        .map(|p| {
            p.kind.learnable().then(|| {
                if trainable {
                    tape.leaf(p.value.clone(), p.shape.clone())
                } else {
                    tape.constant(p.value.clone(), p.shape.clone())
                }
            })
        })
        .collect()
}

fn bn_apply<T: Scalar>(
    tape: &mut Tape<T>,
    params: &mut ParamStore<T>,
    binding: &[Option<Tensor>],
    bn: &Bn,
    x: Tensor,
    mode: BnMode,
) -> Result<Tensor, ModelError> {
    let mut stats = BnStats {
        mean: std::mem::take(&mut params.get_mut(bn.mean).value),
        var: std::mem::take(&mut params.get_mut(bn.var).value),
    };
    let result = batch_norm(
        tape,
        x,
        binding[bn.gamma.0].expect("bound"),
        binding[bn.beta.0].expect("bound"),
        &mut stats,
        mode,
        T::from_f64_c(BN_MOMENTUM),
        T::from_f64_c(BN_EPS),
    );
    params.get_mut(bn.mean).value = stats.mean;
    params.get_mut(bn.var).value = stats.var;
    Ok(result?)
}

fn sfe_forward<T: Scalar>(
    tape: &mut Tape<T>,
    params: &mut ParamStore<T>,
    binding: &[Option<Tensor>],
    branch: &SfeBranch,
    x: Tensor,
    mode: BnMode,
) -> Result<(Tensor, Tensor), ModelError> {
    let slope = T::from_f64_c(LEAKY_SLOPE);
    let mut low = None;
    let mut cur = x;
    for (conv, bn) in &branch.stages {
        let z = conv2d(
            tape,
            cur,
            binding[conv.w.0].expect("bound"),
            Some(binding[conv.b.0].expect("bound")),
            conv.cfg,
        )?;
        let z = bn_apply(tape, params, binding, bn, z, mode)?;
        cur = tape.leaky_relu(z, slope);
        if low.is_none() {
            low = Some(cur);
        }
    }
    Ok((low.expect("at least two stages"), cur))
}

struct TfeOut {
    low: Tensor,
    high: Tensor,
    rates: Vec<(usize, f64)>,
}

/// Run the bin sequence through all spiking stages. Each bin passes every
/// stage before the next bin enters, spikes carry between stages within a
/// timestep, and the final-step membranes are the accumulator read-outs.
fn tfe_forward<T: Scalar>(
    tape: &mut Tape<T>,
    binding: &[Option<Tensor>],
    branch: &TfeBranch,
    drives: &[Tensor],
    gamma: f64,
) -> Result<TfeOut, ModelError> {
    if drives.is_empty() {
        return Err(ModelError::Input("spiking branch received no bins".into()));
    }
    let stages = branch.stages.len();
    let steps = drives.len();
    let mut u_prev: Vec<Option<Tensor>> = vec![None; stages];
    let mut o_prev: Vec<Option<Tensor>> = vec![None; stages];
    let mut spike_mass = vec![0.0f64; stages];
    let mut spike_count = vec![0usize; stages];
    let mut input_density = 0.0f64;

    for &bin in drives {
        // layer-1 inputs are the raw bin values; their nonzero density is
        // the measured firing rate of the first spiking convolution
        let bv = tape.value(bin);
        input_density += bv.iter().filter(|&&v| v != T::zero()).count() as f64 / bv.len() as f64;

        let mut x = bin;
        for (s, (conv, lif_layer)) in branch.stages.iter().enumerate() {
            let drive = conv2d(
                tape,
                x,
                binding[conv.w.0].expect("bound"),
                Some(binding[conv.b.0].expect("bound")),
                conv.cfg,
            )?;
            let v_th = binding[lif_layer.v_th.0].expect("bound");
            let leak = binding[lif_layer.leak.0].expect("bound");
            let u = match (u_prev[s], o_prev[s]) {
                (Some(up), Some(op)) => {
                    let decayed = tape.scalar_mul(leak, up)?;
                    let reset = tape.scalar_mul(v_th, op)?;
                    let kept = tape.sub(decayed, reset)?;
                    tape.add(drive, kept)?
                }
                _ => drive,
            };
            let o = lif::spike(tape, u, v_th, gamma, SpikeKind::Hard)?;
            let ov = tape.value(o);
            spike_mass[s] += ov.iter().map(|v| v.as_f64()).sum::<f64>();
            spike_count[s] += ov.len();
            u_prev[s] = Some(u);
            o_prev[s] = Some(o);
            x = o;
        }
    }

    let mut rates = Vec::with_capacity(stages);
    for (s, (conv, _)) in branch.stages.iter().enumerate() {
        let rate = if s == 0 {
            input_density / steps as f64
        } else {
            spike_mass[s - 1] / spike_count[s - 1] as f64
        };
        rates.push((conv.desc, rate));
    }
    Ok(TfeOut {
        low: u_prev[0].expect("at least one step"),
        high: u_prev[stages - 1].expect("at least one step"),
        rates,
    })
}

fn sum_maps<T: Scalar>(tape: &mut Tape<T>, maps: &[Tensor]) -> Result<Tensor, ModelError> {
    let mut iter = maps.iter();
    let first = *iter
        .next()
        .ok_or_else(|| ModelError::Input("no encoder branch produced features".into()))?;
    let mut acc = first;
    for &m in iter {
        acc = tape.add(acc, m)?;
    }
    Ok(acc)
}
