//! Declarative network description and its TOML schema.

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Dilation rates `r_h × r_w` of the mixer's 3×3 convolutions: one cascade
/// branch in, a parallel trio, and one cascade branch out.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MmixRates {
    pub pre: (usize, usize),
    pub parallel: [(usize, usize); 3],
    pub post: (usize, usize),
}

impl Default for MmixRates {
    fn default() -> Self {
        MmixRates {
            pre: (1, 6),
            parallel: [(6, 21), (18, 15), (1, 1)],
            post: (6, 3),
        }
    }
}

/// Architecture description. Channel widths double per encoder stage:
/// stage `s` (0-based) has `base_channels · 2^s` channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub width: usize,
    pub height: usize,
    /// Temporal bins per event volume (timesteps of the spiking encoder).
    pub bins: usize,
    /// Encoder stages; at least 2 so distinct low/high scales exist.
    pub stages: usize,
    pub base_channels: usize,
    pub classes: usize,
    #[serde(default = "one")]
    pub frame_channels: usize,
    #[serde(default)]
    pub mmix: MmixRates,
}

fn one() -> usize {
    1
}

impl Default for NetworkSpec {
    /// The desk-scale default: 192×192 crops, 10 bins, 4 stages of 16..128
    /// channels, 6 classes.
    fn default() -> Self {
        NetworkSpec {
            width: 192,
            height: 192,
            bins: 10,
            stages: 4,
            base_channels: 16,
            classes: 6,
            frame_channels: 1,
            mmix: MmixRates::default(),
        }
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.stages < 2 {
            return Err(ModelError::Spec(
                "at least 2 encoder stages are required".into(),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(ModelError::Spec("geometry must be non-zero".into()));
        }
        if self.bins == 0 {
            return Err(ModelError::Spec("at least one temporal bin".into()));
        }
        if self.base_channels == 0 || self.classes == 0 || self.frame_channels == 0 {
            return Err(ModelError::Spec(
                "channel and class counts must be positive".into(),
            ));
        }
        let rates = [self.mmix.pre, self.mmix.post]
            .into_iter()
            .chain(self.mmix.parallel);
        for (rh, rw) in rates {
            if rh == 0 || rw == 0 {
                return Err(ModelError::Spec("dilation rates must be ≥ 1".into()));
            }
        }
        Ok(())
    }

    /// Channels at encoder stage `s` (0-based).
    pub fn channels_at(&self, s: usize) -> usize {
        self.base_channels << s
    }

    /// Channels of the highest encoder stage.
    pub fn high_channels(&self) -> usize {
        self.channels_at(self.stages - 1)
    }

    /// Output channels of the low-level pointwise mixer.
    pub fn low_mix_width(&self) -> usize {
        2 * self.base_channels
    }

    /// Hidden width of the semantic head.
    pub fn head_width(&self) -> usize {
        (self.high_channels() / 2).max(4)
    }

    /// Channels entering the semantic head.
    pub fn mix_channels(&self) -> usize {
        self.high_channels() + self.low_mix_width()
    }

    /// Spatial extent after `s + 1` stride-2 stages (ceil division).
    pub fn stage_extent(extent: usize, s: usize) -> usize {
        let mut e = extent;
        for _ in 0..=s {
            e = e.div_ceil(2);
        }
        e
    }

    pub fn from_toml(text: &str) -> Result<Self, ModelError> {
        let spec: NetworkSpec =
            toml::from_str(text).map_err(|e| ModelError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_rates_match_the_mixer_layout() {
        let r = MmixRates::default();
        assert_eq!(r.pre, (1, 6));
        assert_eq!(r.parallel, [(6, 21), (18, 15), (1, 1)]);
        assert_eq!(r.post, (6, 3));
    }

    #[test]
    fn channels_double_per_stage() {
        let spec = NetworkSpec::default();
        assert_eq!(spec.channels_at(0), 16);
        assert_eq!(spec.channels_at(3), 128);
        assert_eq!(spec.high_channels(), 128);
    }

    #[test]
    fn stage_extents_are_ceil_halvings() {
        assert_eq!(NetworkSpec::stage_extent(64, 0), 32);
        assert_eq!(NetworkSpec::stage_extent(64, 2), 8);
        assert_eq!(NetworkSpec::stage_extent(65, 0), 33);
        assert_eq!(NetworkSpec::stage_extent(65, 1), 17);
    }

    #[test]
    fn toml_round_trip_and_defaults() {
        let spec = NetworkSpec::default();
        let text = spec.to_toml();
        let back = NetworkSpec::from_toml(&text).unwrap();
        assert_eq!(back, spec);

        let minimal = "width = 64\nheight = 64\nbins = 10\nstages = 3\n\
                       base_channels = 8\nclasses = 3\n";
        let spec = NetworkSpec::from_toml(minimal).unwrap();
        assert_eq!(spec.frame_channels, 1);
        assert_eq!(spec.mmix, MmixRates::default());
    }

    #[test]
    fn single_stage_is_rejected() {
        let bad = NetworkSpec {
            stages: 1,
            ..NetworkSpec::default()
        };
        assert!(bad.validate().is_err());
    }
}
