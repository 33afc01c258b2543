//! Datasets on disk: numbered triples of event CSV, frame PGM, and label
//! PGM files.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::evio::{parse_events, write_events_csv, EventWindow, SynthSample};
use crate::pnm;

use super::TrainError;

/// One unprocessed training sample.
#[derive(Clone, Debug)]
pub struct RawSample {
    pub frame: Vec<u8>,
    pub label: Vec<u8>,
    pub window: EventWindow,
}

/// A set of raw samples with a shared geometry.
pub struct Dataset {
    pub width: u32,
    pub height: u32,
    pub samples: Vec<RawSample>,
}

impl Dataset {
    pub fn from_synth(samples: Vec<SynthSample>, width: u32, height: u32) -> Self {
        Dataset {
            width,
            height,
            samples: samples
                .into_iter()
                .map(|s| RawSample {
                    frame: s.frame,
                    label: s.label,
                    window: s.window,
                })
                .collect(),
        }
    }

    /// File names of the three parts of sample `idx`.
    pub fn file_names(idx: usize) -> (String, String, String) {
        (
            format!("events_{idx:04}.csv"),
            format!("frame_{idx:04}.pgm"),
            format!("label_{idx:04}.pgm"),
        )
    }

    /// Write every sample as `events_NNNN.csv` / `frame_NNNN.pgm` /
    /// `label_NNNN.pgm`.
    pub fn save_dir(&self, dir: &Path) -> Result<(), TrainError> {
        std::fs::create_dir_all(dir)?;
        for (idx, s) in self.samples.iter().enumerate() {
            let (events, frame, label) = Self::file_names(idx);
            let out = BufWriter::new(File::create(dir.join(events))?);
            write_events_csv(&s.window, out)?;
            pnm::write_pgm(&dir.join(frame), self.width, self.height, &s.frame)?;
            pnm::write_pgm(&dir.join(label), self.width, self.height, &s.label)?;
        }
        Ok(())
    }

    /// Load every numbered triple from a directory, in index order.
    pub fn load_dir(dir: &Path) -> Result<Self, TrainError> {
        let mut indices: Vec<usize> = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(num) = name
                .strip_prefix("frame_")
                .and_then(|s| s.strip_suffix(".pgm"))
            {
                if let Ok(idx) = num.parse::<usize>() {
                    indices.push(idx);
                }
            }
        }
        indices.sort_unstable();
        if indices.is_empty() {
            return Err(TrainError::Config(format!(
                "no frame_NNNN.pgm files under {}",
                dir.display()
            )));
        }

        let mut width = 0;
        let mut height = 0;
        let mut samples = Vec::with_capacity(indices.len());
        for idx in indices {
            let (events, frame, label) = Self::file_names(idx);
            let (fw, fh, frame_px) = pnm::read_pgm(&dir.join(frame))?;
            let (lw, lh, label_px) = pnm::read_pgm(&dir.join(label))?;
            if (fw, fh) != (lw, lh) {
                return Err(TrainError::Config(format!(
                    "sample {idx}: frame is {fw}×{fh} but label is {lw}×{lh}"
                )));
            }
            if width == 0 {
                width = fw;
                height = fh;
            } else if (fw, fh) != (width, height) {
                return Err(TrainError::Config(format!(
                    "sample {idx}: geometry {fw}×{fh} differs from {width}×{height}"
                )));
            }
            let reader = BufReader::new(File::open(dir.join(events))?);
            let window = parse_events(reader, width, height)?;
            samples.push(RawSample {
                frame: frame_px,
                label: label_px,
                window,
            });
        }
        Ok(Dataset {
            width,
            height,
            samples,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evio::{synth_scene, SceneConfig};

    #[test]
    fn save_and_load_round_trip() {
        let cfg = SceneConfig {
            width: 24,
            height: 20,
            num_objects: 2,
            classes: 3,
            velocity_px: 1.0,
            noise_rate_hz: 500.0,
            frames: 4,
            frame_dt_us: 10_000,
            seed: 3,
        };
        let synth = synth_scene(&cfg).unwrap();
        let data = Dataset::from_synth(synth, cfg.width, cfg.height);

        let dir = tempfile::tempdir().unwrap();
        data.save_dir(dir.path()).unwrap();
        let back = Dataset::load_dir(dir.path()).unwrap();
        assert_eq!(back.width, 24);
        assert_eq!(back.height, 20);
        assert_eq!(back.samples.len(), data.samples.len());
        for (a, b) in data.samples.iter().zip(&back.samples) {
            assert_eq!(a.frame, b.frame);
            assert_eq!(a.label, b.label);
            assert_eq!(a.window.events(), b.window.events());
        }
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(Dataset::load_dir(dir.path()).is_err());
    }
}
