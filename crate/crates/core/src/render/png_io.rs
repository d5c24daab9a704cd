//! PNG encoding of soft masks (8-bit gray) and label maps (paletted).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::render::{LandmarkMap2D, SoftMask};

const RIDGE: u8 = 1;
const LIGAMENT: u8 = 2;
const SILHOUETTE: u8 = 4;

/// Palette entries: background, ridge, ligament, silhouette, ridge+ligament, then the
/// silhouette overlaps ridge, ligament and both.
const PALETTE: [[u8; 3]; 8] = [
    [0, 0, 0],
    [255, 0, 0],
    [0, 0, 255],
    [255, 255, 0],
    [255, 0, 255],
    [255, 128, 0],
    [0, 255, 255],
    [255, 255, 255],
];

const INDEX_BITS: [u8; 8] = [
    0,
    RIDGE,
    LIGAMENT,
    SILHOUETTE,
    RIDGE | LIGAMENT,
    RIDGE | SILHOUETTE,
    LIGAMENT | SILHOUETTE,
    RIDGE | LIGAMENT | SILHOUETTE,
];

fn palette_index(bits: u8) -> u8 {
    let bits = bits & (RIDGE | LIGAMENT | SILHOUETTE);
    INDEX_BITS.iter().position(|&b| b == bits).expect("every class combination has an entry") as u8
}

fn index_bits(index: u8) -> Option<u8> {
    INDEX_BITS.get(usize::from(index)).copied()
}

pub(crate) fn open_writer(path: &Path, width: usize, height: usize) -> Result<png::Encoder<'static, BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let w = u32::try_from(width).map_err(|_| Error::InvalidArgument("image too wide".into()))?;
    let h = u32::try_from(height).map_err(|_| Error::InvalidArgument("image too tall".into()))?;
    Ok(png::Encoder::new(BufWriter::new(file), w, h))
}

pub(crate) fn encode_err(path: &Path, e: png::EncodingError) -> Error {
    Error::parse(path, format!("PNG encoding failed: {e}"))
}

pub fn write_mask_png(path: &Path, mask: &SoftMask) -> Result<()> {
    let mut enc = open_writer(path, mask.width(), mask.height())?;
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let data: Vec<u8> = mask.values().iter().map(|v| (v * 255.0).round() as u8).collect();
    let mut w = enc.write_header().map_err(|e| encode_err(path, e))?;
    w.write_image_data(&data).map_err(|e| encode_err(path, e))
}

pub fn write_label_png(path: &Path, map: &LandmarkMap2D) -> Result<()> {
    let mut enc = open_writer(path, map.width(), map.height())?;
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(PALETTE.iter().flatten().copied().collect::<Vec<u8>>());
    let data: Vec<u8> = map.bits().iter().map(|&b| palette_index(b)).collect();
    let mut w = enc.write_header().map_err(|e| encode_err(path, e))?;
    w.write_image_data(&data).map_err(|e| encode_err(path, e))
}

pub(crate) struct Decoded {
    pub width: usize,
    pub height: usize,
    pub color: png::ColorType,
    pub palette: Option<Vec<u8>>,
    /// One sample per channel per pixel, widened to 16 bits.
    pub samples: Vec<u16>,
    pub max: u16,
}

pub(crate) fn decode(path: &Path) -> Result<Decoded> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingAsset { path: path.into() }
        } else {
            Error::io(path, e)
        }
    })?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| Error::parse(path, format!("invalid PNG: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::parse(path, format!("invalid PNG: {e}")))?;
    let info = reader.info();
    let palette = info.palette.as_ref().map(|p| p.to_vec());
    let (width, height) = (frame.width as usize, frame.height as usize);
    let channels = frame.color_type.samples();
    let depth = frame.bit_depth as u8 as usize;
    let mut samples = Vec::with_capacity(width * height * channels);
    for row in buf[..frame.buffer_size()].chunks_exact(frame.line_size) {
        match depth {
            16 => samples.extend(row.chunks_exact(2).take(width * channels).map(|b| u16::from_be_bytes([b[0], b[1]]))),
            8 => samples.extend(row.iter().take(width * channels).map(|&b| u16::from(b))),
            d => {
                let per_byte = 8 / d;
                let mask = (1u16 << d) - 1;
                samples.extend((0..width * channels).map(|i| {
                    let byte = u16::from(row[i / per_byte]);
                    let shift = 8 - d * (i % per_byte + 1);
                    (byte >> shift) & mask
                }));
            }
        }
    }
    Ok(Decoded {
        width,
        height,
        color: frame.color_type,
        palette,
        samples,
        max: if depth == 16 { u16::MAX } else { (1u16 << depth) - 1 },
    })
}

/// Reads a grayscale (or colour, using the first channel) PNG as a soft mask.
pub fn read_mask_png(path: &Path) -> Result<SoftMask> {
    let d = decode(path)?;
    let values: Vec<f64> = match d.color {
        png::ColorType::Indexed => {
            let pal = d.palette.as_deref().unwrap_or(&[]);
            d.samples
                .iter()
                .map(|&i| pal.get(3 * i as usize).map_or(0.0, |&r| f64::from(r) / 255.0))
                .collect()
        }
        c => d
            .samples
            .chunks_exact(c.samples())
            .map(|px| f64::from(px[0]) / f64::from(d.max))
            .collect(),
    };
    Ok(SoftMask::from_values(d.width, d.height, values))
}

/// Reads a label map from a paletted PNG (by index), a grayscale PNG holding raw
/// indices, or an RGB(A) PNG using the standard palette colours.
pub fn read_label_png(path: &Path) -> Result<LandmarkMap2D> {
    let d = decode(path)?;
    let mut map = LandmarkMap2D::new(d.width, d.height);
    let bad = |what: String| Error::parse(path, what);
    let channels = d.color.samples();
    for (i, px) in d.samples.chunks_exact(channels).enumerate() {
        let bits = match d.color {
            png::ColorType::Indexed | png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => {
                index_bits(u8::try_from(px[0]).unwrap_or(u8::MAX))
                    .ok_or_else(|| bad(format!("label index {} at pixel {i} is not in 0..=7", px[0])))?
            }
            png::ColorType::Rgb | png::ColorType::Rgba => {
                let scale = |v: u16| if d.max == 255 { v as u8 } else { (v >> 8) as u8 };
                let rgb = [scale(px[0]), scale(px[1]), scale(px[2])];
                let idx = PALETTE
                    .iter()
                    .position(|&p| p == rgb)
                    .ok_or_else(|| bad(format!("colour {rgb:?} at pixel {i} is not a label colour")))?;
                index_bits(idx as u8).expect("palette index")
            }
        };
        map.set_bits(i % d.width, i / d.width, bits);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::Channel;

    #[test]
    fn label_map_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.png");
        let mut map = LandmarkMap2D::new(7, 5);
        map.insert(1, 1, Channel::Ridge);
        map.insert(2, 1, Channel::Ligament);
        map.insert(3, 1, Channel::Silhouette);
        map.insert(4, 2, Channel::Ridge);
        map.insert(4, 2, Channel::Ligament);
        write_label_png(&path, &map).unwrap();
        assert_eq!(read_label_png(&path).unwrap(), map);
    }

    #[test]
    fn every_combination_has_its_own_colour() {
        for bits in 0..8u8 {
            assert_eq!(index_bits(palette_index(bits)), Some(bits));
        }
        let mut colours = PALETTE.to_vec();
        colours.sort();
        colours.dedup();
        assert_eq!(colours.len(), PALETTE.len());
    }

    #[test]
    fn mask_round_trips_at_eight_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.png");
        let m = SoftMask::from_values(3, 2, vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.1]);
        write_mask_png(&path, &m).unwrap();
        let r = read_mask_png(&path).unwrap();
        for (a, b) in r.values().iter().zip(m.values()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn missing_file_is_reported() {
        let r = read_label_png(Path::new("/nonexistent/labels.png"));
        assert!(matches!(r, Err(Error::MissingAsset { .. })));
    }
}
