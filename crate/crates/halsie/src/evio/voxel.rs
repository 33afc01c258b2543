//! Timestamp normalization and the B×2×H×W event volume.

use super::event::{EventWindow, Polarity};
use super::EvioError;
use crate::autodiff::Scalar;

/// The bilinear sampling kernel `k_b(a) = max(0, 1 − |a|)`.
pub fn bilinear_kernel(a: f64) -> f64 {
    (1.0 - a.abs()).max(0.0)
}

/// Map every event timestamp onto `[0, B−1]` via
/// `t* = (B−1)(t − t_first)/(t_last − t_first)`. A window whose events all
/// share one timestamp maps everything to 0.
pub fn normalize_timestamps(window: &EventWindow, bins: usize) -> Result<Vec<f64>, EvioError> {
    if bins < 2 {
        return Err(EvioError::Config(format!(
            "timestamp normalization needs at least 2 bins, got {bins}"
        )));
    }
    let events = window.events();
    let (Some(first), Some(last)) = (events.first(), events.last()) else {
        return Err(EvioError::Config(
            "cannot normalize an empty window".into(),
        ));
    };
    let denom = last.t - first.t;
    if denom == 0 {
        return Ok(vec![0.0; events.len()]);
    }
    let scale = (bins - 1) as f64 / denom as f64;
    Ok(events.iter().map(|e| (e.t - first.t) as f64 * scale).collect())
}

/// Kernel-weighted event counts: B temporal bins × 2 polarity channels
/// (OFF, ON) × H × W. Each event deposits a total weight of exactly 1 into
/// the channel matching its polarity, so per-channel mass equals the event
/// count of that polarity.
#[derive(Clone, Debug, PartialEq)]
pub struct EventVolume {
    bins: usize,
    height: u32,
    width: u32,
    data: Vec<f32>,
}

impl EventVolume {
    pub fn zeros(bins: usize, height: u32, width: u32) -> Self {
        EventVolume {
            bins,
            height,
            width,
            data: vec![0.0; bins * 2 * height as usize * width as usize],
        }
    }

    pub fn from_data(bins: usize, height: u32, width: u32, data: Vec<f32>) -> Result<Self, EvioError> {
        if data.len() != bins * 2 * height as usize * width as usize {
            return Err(EvioError::Config(format!(
                "volume data length {} does not match {bins}×2×{height}×{width}",
                data.len()
            )));
        }
        Ok(EventVolume {
            bins,
            height,
            width,
            data,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    fn index(&self, bin: usize, polarity: Polarity, y: u32, x: u32) -> usize {
        let hw = self.height as usize * self.width as usize;
        ((bin * 2 + polarity.channel()) * hw) + y as usize * self.width as usize + x as usize
    }

    pub fn get(&self, bin: usize, polarity: Polarity, y: u32, x: u32) -> f32 {
        self.data[self.index(bin, polarity, y, x)]
    }

    fn add(&mut self, bin: usize, polarity: Polarity, y: u32, x: u32, w: f32) {
        let i = self.index(bin, polarity, y, x);
        self.data[i] += w;
    }

    /// One bin as a contiguous 2×H×W block.
    pub fn bin_slice(&self, bin: usize) -> &[f32] {
        let sz = 2 * self.height as usize * self.width as usize;
        &self.data[bin * sz..(bin + 1) * sz]
    }

    /// Total kernel weight in one polarity channel, summed in f64.
    pub fn mass(&self, polarity: Polarity) -> f64 {
        let hw = self.height as usize * self.width as usize;
        let mut acc = 0.0f64;
        for b in 0..self.bins {
            let base = (b * 2 + polarity.channel()) * hw;
            for &v in &self.data[base..base + hw] {
                acc += v as f64;
            }
        }
        acc
    }

    /// Fraction of nonzero entries per bin, averaged over bins: the input
    /// "firing rate" of the first spiking layer.
    pub fn mean_nonzero_density(&self) -> f64 {
        if self.bins == 0 {
            return 0.0;
        }
        let per_bin = 2 * self.height as usize * self.width as usize;
        let nonzero = self.data.iter().filter(|&&v| v != 0.0).count();
        nonzero as f64 / (self.bins * per_bin) as f64
    }

    /// The volume as scalar values of the compute type.
    pub fn to_values<T: Scalar>(&self) -> Vec<T> {
        self.data.iter().map(|&v| T::from_f64_c(v as f64)).collect()
    }
}

/// Discretize a window into an event volume. Each event's weight
/// `k_b(b − t*)` lands in bins `floor(t*)` and `floor(t*)+1` (where in
/// range) of its polarity channel; the spatial kernels are identically 1 at
/// the event's integer pixel.
pub fn voxelize(window: &EventWindow, bins: usize) -> Result<EventVolume, EvioError> {
    if bins < 2 {
        return Err(EvioError::Config(format!(
            "voxelization needs at least 2 bins, got {bins}"
        )));
    }
    let mut volume = EventVolume::zeros(bins, window.height(), window.width());
    if window.is_empty() {
        return Ok(volume);
    }
    let tstar = normalize_timestamps(window, bins)?;
    for (e, &ts) in window.events().iter().zip(&tstar) {
        let b0 = ts.floor() as usize;
        let w0 = bilinear_kernel(b0 as f64 - ts);
        if w0 > 0.0 {
            volume.add(b0, e.polarity, e.y, e.x, w0 as f32);
        }
        if b0 + 1 < bins {
            let w1 = bilinear_kernel((b0 + 1) as f64 - ts);
            if w1 > 0.0 {
                volume.add(b0 + 1, e.polarity, e.y, e.x, w1 as f32);
            }
        }
    }
    Ok(volume)
}
