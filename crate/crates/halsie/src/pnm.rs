//! Binary PGM (P5) and PPM (P6) readers and writers, maxval 255.
//!
//! The writers emit the exact byte layout `P5\n<w> <h>\n255\n<raster>`, so
//! identical inputs produce identical files.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("invalid {0} file: {1}")]
    Format(&'static str, String),
}

fn write_header(w: &mut impl Write, magic: &str, width: u32, height: u32) -> io::Result<()> {
    write!(w, "{magic}\n{width} {height}\n255\n")
}

/// Write an 8-bit grayscale map as binary PGM.
pub fn write_pgm(path: &Path, width: u32, height: u32, pixels: &[u8]) -> Result<(), PnmError> {
    assert_eq!(pixels.len(), (width * height) as usize);
    let mut out = BufWriter::new(File::create(path)?);
    write_header(&mut out, "P5", width, height)?;
    out.write_all(pixels)?;
    out.flush()?;
    Ok(())
}

/// Write an 8-bit RGB map as binary PPM.
pub fn write_ppm(path: &Path, width: u32, height: u32, rgb: &[u8]) -> Result<(), PnmError> {
    assert_eq!(rgb.len(), (width * height * 3) as usize);
    let mut out = BufWriter::new(File::create(path)?);
    write_header(&mut out, "P6", width, height)?;
    out.write_all(rgb)?;
    out.flush()?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<(u32, u32, Vec<u8>), PnmError> {
    read_pnm(path, "P5", 1)
}

pub fn read_ppm(path: &Path) -> Result<(u32, u32, Vec<u8>), PnmError> {
    read_pnm(path, "P6", 3)
}

fn read_pnm(
    path: &Path,
    magic: &'static str,
    samples: usize,
) -> Result<(u32, u32, Vec<u8>), PnmError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() < 2 || &bytes[..2] != magic.as_bytes() {
        return Err(PnmError::Format(magic, "wrong magic number".into()));
    }
    // three whitespace-separated header tokens follow the magic; '#' starts
    // a comment running to end of line
    let mut pos = 2;
    let mut tokens = [0u32; 3];
    for token in tokens.iter_mut() {
        while pos < bytes.len() {
            match bytes[pos] {
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                b' ' | b'\t' | b'\r' | b'\n' => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(PnmError::Format(magic, "truncated header".into()));
        }
        *token = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PnmError::Format(magic, "bad header integer".into()))?;
    }
    let [width, height, maxval] = tokens;
    if maxval != 255 {
        return Err(PnmError::Format(magic, format!("unsupported maxval {maxval}")));
    }
    // a single whitespace byte separates header and raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(PnmError::Format(magic, "missing raster separator".into()));
    }
    pos += 1;
    let want = width as usize * height as usize * samples;
    if bytes.len() - pos < want {
        return Err(PnmError::Format(
            magic,
            format!("raster holds {} bytes, expected {want}", bytes.len() - pos),
        ));
    }
    Ok((width, height, bytes[pos..pos + want].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        let pixels: Vec<u8> = (0..12).map(|i| (i * 20) as u8).collect();
        write_pgm(&path, 4, 3, &pixels).unwrap();
        let first = std::fs::read(&path).unwrap();
        let (w, h, back) = read_pgm(&path).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(back, pixels);
        write_pgm(&path, 4, 3, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ppm");
        let rgb: Vec<u8> = (0..2 * 2 * 3).map(|i| i as u8).collect();
        write_ppm(&path, 2, 2, &rgb).unwrap();
        let (w, h, back) = read_ppm(&path).unwrap();
        assert_eq!((w, h), (2, 2));
        assert_eq!(back, rgb);
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        std::fs::write(&path, b"P6\n1 1\n255\nxyz").unwrap();
        assert!(read_pgm(&path).is_err());
    }
}
