//! Geometric augmentation: horizontal flip, right-angle rotation, and a
//! random square crop, applied consistently to frame, event volume, and
//! label map.

use rand::Rng;

use crate::autodiff::Scalar;
use crate::evio::EventVolume;

use super::run::PreparedSample;
use super::TrainError;

/// One sampled transform. Rotation happens after the flip; the crop offset
/// refers to the rotated geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeomTransform {
    pub flip_h: bool,
    pub quarter_turns: u8,
    pub crop: usize,
    pub crop_y: usize,
    pub crop_x: usize,
}

impl GeomTransform {
    pub fn identity(crop: usize) -> Self {
        GeomTransform {
            flip_h: false,
            quarter_turns: 0,
            crop,
            crop_y: 0,
            crop_x: 0,
        }
    }
}

/// Draw a transform: flip with probability ½, rotation from
/// {0°, 90°, 180°, 270°}, and a uniform crop position.
pub fn sample_transform(
    h: usize,
    w: usize,
    crop: usize,
    rng: &mut impl Rng,
) -> Result<GeomTransform, TrainError> {
    let flip_h = rng.gen_bool(0.5);
    let quarter_turns = rng.gen_range(0..4u8);
    let (rh, rw) = if quarter_turns % 2 == 1 { (w, h) } else { (h, w) };
    if crop > rh || crop > rw {
        return Err(TrainError::Config(format!(
            "crop {crop} exceeds the {rh}×{rw} input"
        )));
    }
    Ok(GeomTransform {
        flip_h,
        quarter_turns,
        crop,
        crop_y: rng.gen_range(0..=rh - crop),
        crop_x: rng.gen_range(0..=rw - crop),
    })
}

/// Transform one h×w plane; returns a crop×crop plane.
fn transform_plane<E: Copy + Default>(src: &[E], h: usize, w: usize, t: &GeomTransform) -> Vec<E> {
    debug_assert_eq!(src.len(), h * w);
    let mut cur = src.to_vec();
    let (mut ch, mut cw) = (h, w);
    if t.flip_h {
        for row in cur.chunks_mut(cw) {
            row.reverse();
        }
    }
    for _ in 0..t.quarter_turns {
        // 90° clockwise: (y, x) → (x, h−1−y)
        let mut next = vec![E::default(); cur.len()];
        for y in 0..ch {
            for x in 0..cw {
                next[x * ch + (ch - 1 - y)] = cur[y * cw + x];
            }
        }
        cur = next;
        std::mem::swap(&mut ch, &mut cw);
    }
    let mut out = vec![E::default(); t.crop * t.crop];
    for y in 0..t.crop {
        let src_row = (t.crop_y + y) * cw + t.crop_x;
        out[y * t.crop..(y + 1) * t.crop].copy_from_slice(&cur[src_row..src_row + t.crop]);
    }
    out
}

/// Apply one transform to a whole sample. Every frame channel, every
/// bin/polarity plane of the volume, and the label map see the same
/// geometry.
pub fn augment<T: Scalar>(
    sample: &PreparedSample<T>,
    frame_channels: usize,
    t: &GeomTransform,
) -> PreparedSample<T> {
    let h = sample.volume.height() as usize;
    let w = sample.volume.width() as usize;

    let mut frame = Vec::with_capacity(frame_channels * t.crop * t.crop);
    for c in 0..frame_channels {
        frame.extend(transform_plane(&sample.frame[c * h * w..(c + 1) * h * w], h, w, t));
    }

    let bins = sample.volume.bins();
    let mut vol_data = Vec::with_capacity(bins * 2 * t.crop * t.crop);
    for b in 0..bins {
        let bin = sample.volume.bin_slice(b);
        for pol in 0..2 {
            vol_data.extend(transform_plane(&bin[pol * h * w..(pol + 1) * h * w], h, w, t));
        }
    }
    let volume = EventVolume::from_data(bins, t.crop as u32, t.crop as u32, vol_data)
        .expect("transformed volume keeps its layout");

    let label = transform_plane(&sample.label, h, w, t);

    PreparedSample {
        frame,
        volume,
        label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evio::Polarity;

    fn sample(h: usize, w: usize, bins: usize) -> PreparedSample<f64> {
        let data: Vec<f32> = (0..bins * 2 * h * w).map(|i| (i % 7) as f32 * 0.5).collect();
        PreparedSample {
            frame: (0..h * w).map(|i| i as f64 / (h * w) as f64).collect(),
            volume: EventVolume::from_data(bins, h as u32, w as u32, data).unwrap(),
            label: (0..h * w).map(|i| (i % 3) as u32).collect(),
        }
    }

    #[test]
    fn identity_transform_changes_nothing() {
        let s = sample(6, 6, 3);
        let t = GeomTransform::identity(6);
        let out = augment(&s, 1, &t);
        assert_eq!(out.frame, s.frame);
        assert_eq!(out.volume.data(), s.volume.data());
        assert_eq!(out.label, s.label);
    }

    #[test]
    fn double_flip_is_the_identity() {
        let s = sample(8, 8, 1);
        let t = GeomTransform {
            flip_h: true,
            quarter_turns: 0,
            crop: 8,
            crop_y: 0,
            crop_x: 0,
        };
        let once = augment(&s, 1, &t);
        let again = augment(&once, 1, &t);
        assert_eq!(again.frame, s.frame);
        assert_eq!(again.label, s.label);
        assert_eq!(again.volume.data(), s.volume.data());
    }

    #[test]
    fn four_quarter_turns_are_the_identity() {
        let s = sample(6, 6, 2);
        let t = GeomTransform {
            flip_h: false,
            quarter_turns: 1,
            crop: 6,
            crop_y: 0,
            crop_x: 0,
        };
        let mut cur = s.label.clone();
        for _ in 0..4 {
            cur = transform_plane(&cur, 6, 6, &t);
        }
        assert_eq!(cur, s.label);
    }

    #[test]
    fn flip_conserves_per_polarity_mass() {
        let s = sample(8, 8, 4);
        let t = GeomTransform {
            flip_h: true,
            quarter_turns: 3,
            crop: 8,
            crop_y: 0,
            crop_x: 0,
        };
        let out = augment(&s, 1, &t);
        for p in [Polarity::Off, Polarity::On] {
            assert!((out.volume.mass(p) - s.volume.mass(p)).abs() < 1e-9);
        }
    }

    #[test]
    fn oversized_crop_is_rejected() {
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        assert!(sample_transform(8, 8, 9, &mut rng).is_err());
    }

    #[test]
    fn crop_takes_the_requested_window() {
        let s = sample(4, 4, 1);
        let t = GeomTransform {
            flip_h: false,
            quarter_turns: 0,
            crop: 2,
            crop_y: 1,
            crop_x: 2,
        };
        let out = augment(&s, 1, &t);
        assert_eq!(out.label.len(), 4);
        assert_eq!(out.label[0], s.label[4 + 2]); // row 1, col 2
        assert_eq!(out.label[3], s.label[2 * 4 + 3]);
    }
}
