//! Raw volume files and 8-bit PGM export.
//!
//! Volume layout: 32-byte header (`HPVOL1\0\0`, then D, H, W as u32 LE, then
//! 12 zero bytes) followed by row-major `(D, H, W)` f32 LE voxels.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Image, Mask, SliceVolume};
use crate::error::{Error, Result};

pub const VOLUME_MAGIC: &[u8; 8] = b"HPVOL1\0\0";

pub fn write_volume(w: &mut impl Write, v: &SliceVolume) -> Result<()> {
    w.write_all(VOLUME_MAGIC)?;
    for d in [v.depth, v.height, v.width] {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("extent {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    w.write_all(&[0u8; 12])?;
    for &x in &v.voxels {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_volume(r: &mut impl Read) -> Result<SliceVolume> {
    let mut header = [0u8; 32];
    r.read_exact(&mut header)?;
    if &header[..8] != VOLUME_MAGIC {
        return Err(Error::Format("bad volume magic".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(header[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let (d, h, w) = (dim(0), dim(1), dim(2));
    let mut raw = vec![0u8; d * h * w * 4];
    r.read_exact(&mut raw)?;
    let voxels = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    SliceVolume::from_voxels(d, h, w, voxels)
}

pub fn save_volume(path: impl AsRef<Path>, v: &SliceVolume) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_volume(&mut w, v)?;
    w.flush()?;
    Ok(())
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<SliceVolume> {
    read_volume(&mut BufReader::new(File::open(path)?))
}

/// Binary PGM with `[lo, hi]` mapped linearly onto 0..=255.
pub fn write_pgm(w: &mut impl Write, img: &Image, lo: f64, hi: f64) -> Result<()> {
    write!(w, "P5\n{} {}\n255\n", img.width, img.height)?;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn save_pgm(path: impl AsRef<Path>, img: &Image, lo: f64, hi: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pgm(&mut w, img, lo, hi)?;
    w.flush()?;
    Ok(())
}

pub fn mask_image(m: &Mask) -> Image {
    Image {
        height: m.height,
        width: m.width,
        data: m.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    }
}
