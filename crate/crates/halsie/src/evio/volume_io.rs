//! Binary event-volume files: magic `EVOL0001`, four little-endian u32
//! extents (B, 2, H, W), then little-endian f32 data.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::voxel::EventVolume;
use super::EvioError;

const MAGIC: &[u8; 8] = b"EVOL0001";

pub fn write_volume(volume: &EventVolume, path: &Path) -> Result<(), EvioError> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    for dim in [volume.bins() as u32, 2, volume.height(), volume.width()] {
        out.write_all(&dim.to_le_bytes())?;
    }
    for &v in volume.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<EventVolume, EvioError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(EvioError::Config(format!(
            "{} is not an event-volume file",
            path.display()
        )));
    }
    let mut dims = [0u32; 4];
    for d in dims.iter_mut() {
        *d = read_u32(&mut reader)?;
    }
    let [bins, channels, height, width] = dims;
    if channels != 2 {
        return Err(EvioError::Config(format!(
            "event volumes have 2 polarity channels, file has {channels}"
        )));
    }
    let count = bins as usize * 2 * height as usize * width as usize;
    let mut data = Vec::with_capacity(count);
    let mut buf = [0u8; 4];
    for _ in 0..count {
        reader.read_exact(&mut buf)?;
        data.push(f32::from_le_bytes(buf));
    }
    EventVolume::from_data(bins as usize, height, width, data)
}

fn read_u32(reader: &mut impl Read) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evio::event::{Event, EventWindow, Polarity};
    use crate::evio::voxel::voxelize;

    #[test]
    fn volume_file_round_trip_is_bit_exact() {
        let events = (0..50u64)
            .map(|i| Event {
                t: i * 100,
                x: (i % 6) as u32,
                y: (i % 4) as u32,
                polarity: if i % 3 == 0 { Polarity::Off } else { Polarity::On },
            })
            .collect();
        let w = EventWindow::from_events(events, 6, 4).unwrap();
        let v = voxelize(&w, 5).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.evol");
        write_volume(&v, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"EVOL0001");

        let back = read_volume(&path).unwrap();
        assert_eq!(back, v);
        write_volume(&back, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
    }
}
