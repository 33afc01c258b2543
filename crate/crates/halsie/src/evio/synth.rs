//! Synthetic moving-shapes scenes: frames, events, and labels.
//!
//! Rectangles and bars drift over a flat background on a toroidal canvas.
//! Every object class shares one intensity, so frames alone cannot tell the
//! classes apart; what separates them is motion speed — object class `c` of
//! `K` moves at `velocity_px · ((K − c + 1)/K)²` pixels per frame, so class
//! 1 is fast and later classes crawl — which only shows up in the event
//! stream. Events are emitted wherever the rendered intensity changes
//! between consecutive frames (ON brighter, OFF darker), plus uniform noise
//! events at the configured rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::event::{Event, EventWindow, Polarity};
use super::EvioError;

pub const BACKGROUND_INTENSITY: u8 = 48;
pub const OBJECT_INTENSITY: u8 = 208;

/// Scene description, loaded from a TOML file of plain `key = value` pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: u32,
    pub height: u32,
    pub num_objects: usize,
    /// Total class count including background 0.
    pub classes: usize,
    /// Speed, in pixels per frame, of the fastest object class.
    pub velocity_px: f64,
    /// Mean rate of uniformly random noise events over the whole sensor.
    pub noise_rate_hz: f64,
    pub frames: usize,
    pub frame_dt_us: u64,
    pub seed: u64,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), EvioError> {
        if self.width == 0 || self.height == 0 {
            return Err(EvioError::Config("scene geometry must be non-zero".into()));
        }
        if self.classes < 2 {
            return Err(EvioError::Config(
                "need at least background plus one object class".into(),
            ));
        }
        if self.frames < 2 {
            return Err(EvioError::Config(
                "need at least two frames to form an event window".into(),
            ));
        }
        if self.frame_dt_us == 0 {
            return Err(EvioError::Config("frame interval must be positive".into()));
        }
        if self.velocity_px < 0.0 || self.noise_rate_hz < 0.0 {
            return Err(EvioError::Config("rates must be non-negative".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, EvioError> {
        let cfg: SceneConfig =
            toml::from_str(text).map_err(|e| EvioError::Config(format!("scene config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One training triple: the grayscale frame closing an event window, the
/// window itself, and the label map synchronized to that frame.
#[derive(Clone, Debug)]
pub struct SynthSample {
    pub frame: Vec<u8>,
    pub window: EventWindow,
    pub label: Vec<u8>,
}

struct MovingObject {
    class_id: u8,
    cx: f64,
    cy: f64,
    vx: f64,
    vy: f64,
    half_w: f64,
    half_h: f64,
}

impl MovingObject {
    /// Pixels covered at frame `k`, as (y, x) pairs on the torus.
    fn raster(&self, k: usize, width: u32, height: u32, out: &mut Vec<(u32, u32)>) {
        out.clear();
        let cx = self.cx + self.vx * k as f64;
        let cy = self.cy + self.vy * k as f64;
        let x0 = (cx - self.half_w).round() as i64;
        let x1 = (cx + self.half_w).round() as i64;
        let y0 = (cy - self.half_h).round() as i64;
        let y1 = (cy + self.half_h).round() as i64;
        for y in y0..=y1 {
            let wy = y.rem_euclid(height as i64) as u32;
            for x in x0..=x1 {
                out.push((wy, x.rem_euclid(width as i64) as u32));
            }
        }
    }
}

fn spawn_objects(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<MovingObject> {
    let object_classes = cfg.classes - 1;
    let min_dim = cfg.width.min(cfg.height) as f64;
    let lo = (min_dim / 8.0).max(1.5);
    let hi = (min_dim / 3.0).max(2.5);
    (0..cfg.num_objects)
        .map(|i| {
            let class_in_set = i % object_classes; // 0-based within object classes
            // quadratic speed falloff: class 1 at full velocity, the last
            // class at (1/K)² of it
            let factor = (object_classes - class_in_set) as f64 / object_classes as f64;
            let speed = cfg.velocity_px * factor * factor;
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            MovingObject {
                class_id: (1 + class_in_set) as u8,
                cx: rng.gen_range(0.0..cfg.width as f64),
                cy: rng.gen_range(0.0..cfg.height as f64),
                vx: speed * angle.cos(),
                vy: speed * angle.sin(),
                half_w: rng.gen_range(lo..hi) / 2.0,
                half_h: rng.gen_range(lo..hi) / 2.0,
            }
        })
        .collect()
}

fn render(
    objects: &[MovingObject],
    k: usize,
    width: u32,
    height: u32,
    scratch: &mut Vec<(u32, u32)>,
) -> (Vec<u8>, Vec<u8>) {
    let n = width as usize * height as usize;
    let mut frame = vec![BACKGROUND_INTENSITY; n];
    let mut label = vec![0u8; n];
    for obj in objects {
        obj.raster(k, width, height, scratch);
        for &(y, x) in scratch.iter() {
            let idx = y as usize * width as usize + x as usize;
            frame[idx] = OBJECT_INTENSITY;
            label[idx] = obj.class_id;
        }
    }
    (frame, label)
}

/// Generate `frames − 1` triples, deterministically for a fixed seed.
pub fn synth_scene(cfg: &SceneConfig) -> Result<Vec<SynthSample>, EvioError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let objects = spawn_objects(cfg, &mut rng);

    let mut scratch = Vec::new();
    let mut samples = Vec::with_capacity(cfg.frames - 1);
    let (mut prev_frame, _) = render(&objects, 0, cfg.width, cfg.height, &mut scratch);
    for k in 1..cfg.frames {
        let (frame, label) = render(&objects, k, cfg.width, cfg.height, &mut scratch);
        let t_start = (k as u64 - 1) * cfg.frame_dt_us;
        let t_end = k as u64 * cfg.frame_dt_us;

        let mut events = Vec::new();
        for y in 0..cfg.height {
            for x in 0..cfg.width {
                let idx = y as usize * cfg.width as usize + x as usize;
                if frame[idx] != prev_frame[idx] {
                    events.push(Event {
                        t: rng.gen_range(t_start..t_end),
                        x,
                        y,
                        polarity: if frame[idx] > prev_frame[idx] {
                            Polarity::On
                        } else {
                            Polarity::Off
                        },
                    });
                }
            }
        }
        // background sensor noise: expected rate · Δt events, uniform in
        // position, time, and polarity
        let expected = cfg.noise_rate_hz * cfg.frame_dt_us as f64 / 1e6;
        let mut noise_count = expected.floor() as usize;
        if rng.gen_bool((expected - expected.floor()).clamp(0.0, 1.0)) {
            noise_count += 1;
        }
        for _ in 0..noise_count {
            events.push(Event {
                t: rng.gen_range(t_start..t_end),
                x: rng.gen_range(0..cfg.width),
                y: rng.gen_range(0..cfg.height),
                polarity: if rng.gen_bool(0.5) { Polarity::On } else { Polarity::Off },
            });
        }
        events.sort_by_key(|e| e.t);
        let window = EventWindow::new(events, cfg.width, cfg.height, t_start, t_end)?;
        samples.push(SynthSample {
            frame: frame.clone(),
            window,
            label,
        });
        prev_frame = frame;
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> SceneConfig {
        SceneConfig {
            width: 32,
            height: 32,
            num_objects: 2,
            classes: 3,
            velocity_px: 1.0,
            noise_rate_hz: 0.0,
            frames: 5,
            frame_dt_us: 10_000,
            seed: 7,
        }
    }

    #[test]
    fn static_noiseless_scene_emits_nothing() {
        let cfg = SceneConfig {
            velocity_px: 0.0,
            ..base_config()
        };
        for s in synth_scene(&cfg).unwrap() {
            assert!(s.window.is_empty());
        }
    }

    #[test]
    fn events_sit_exactly_on_frame_differences() {
        // brute-force oracle: diff the returned frames and compare pixel sets
        let cfg = SceneConfig {
            num_objects: 1,
            classes: 2,
            ..base_config()
        };
        let samples = synth_scene(&cfg).unwrap();
        let mut prev: Option<Vec<u8>> = None;
        for s in &samples {
            if let Some(prev) = prev {
                let mut expected = std::collections::BTreeSet::new();
                for (idx, (&now, &before)) in s.frame.iter().zip(&prev).enumerate() {
                    if now != before {
                        let on = now > before;
                        expected.insert((idx as u32 % cfg.width, idx as u32 / cfg.width, on));
                    }
                }
                let got: std::collections::BTreeSet<_> = s
                    .window
                    .events()
                    .iter()
                    .map(|e| (e.x, e.y, e.polarity == Polarity::On))
                    .collect();
                assert_eq!(got, expected);
                // a uniform solid object only changes along its edges: far
                // fewer changed pixels than labeled object pixels
                let object_px = s.label.iter().filter(|&&l| l != 0).count();
                assert!(got.len() < object_px, "{} vs {object_px}", got.len());
            }
            prev = Some(s.frame.clone());
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = SceneConfig {
            noise_rate_hz: 2000.0,
            ..base_config()
        };
        let a = synth_scene(&cfg).unwrap();
        let b = synth_scene(&cfg).unwrap();
        assert_eq!(a.len(), b.len());
        for (sa, sb) in a.iter().zip(&b) {
            assert_eq!(sa.frame, sb.frame);
            assert_eq!(sa.label, sb.label);
            assert_eq!(sa.window.events(), sb.window.events());
        }
    }

    #[test]
    fn zero_area_geometry_is_rejected() {
        let cfg = SceneConfig {
            width: 0,
            ..base_config()
        };
        assert!(matches!(synth_scene(&cfg), Err(EvioError::Config(_))));
    }

    #[test]
    fn toml_schema_round_trip() {
        let text = "width = 64\nheight = 48\nnum_objects = 3\nclasses = 3\n\
                    velocity_px = 1.5\nnoise_rate_hz = 100.0\nframes = 10\n\
                    frame_dt_us = 20000\nseed = 99\n";
        let cfg = SceneConfig::from_toml(text).unwrap();
        assert_eq!(cfg.width, 64);
        assert_eq!(cfg.frames, 10);
        assert_eq!(cfg.seed, 99);
    }

    #[test]
    fn labels_mark_object_pixels_with_their_class() {
        let cfg = base_config();
        let samples = synth_scene(&cfg).unwrap();
        let labels: std::collections::BTreeSet<u8> =
            samples[0].label.iter().copied().collect();
        assert!(labels.contains(&0));
        assert!(labels.iter().all(|&l| (l as usize) < cfg.classes));
        // both object classes appear with two objects and classes = 3
        assert!(labels.contains(&1) && labels.contains(&2));
    }
}
