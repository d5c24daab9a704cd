//! 8-bit RGB images for laparoscopic frames and overlays.

use std::path::Path;

use crate::error::{Error, Result};
use crate::render::png_io::{decode, encode_err, open_writer};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![color; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, color: [u8; 3]) {
        self.data[y * self.width + x] = color;
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.data
    }
}

/// Reads any 8- or 16-bit PNG as RGB. Gray is replicated, alpha dropped.
pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    let d = decode(path)?;
    let to8 = |v: u16| if d.max == 255 { v as u8 } else { (u32::from(v) * 255 / u32::from(d.max)) as u8 };
    let data: Vec<[u8; 3]> = match d.color {
        png::ColorType::Indexed => {
            let pal = d.palette.as_deref().unwrap_or(&[]);
            d.samples
                .iter()
                .map(|&i| {
                    let k = 3 * i as usize;
                    pal.get(k..k + 3)
                        .map(|c| [c[0], c[1], c[2]])
                        .ok_or_else(|| Error::parse(path, format!("palette index {i} out of range")))
                })
                .collect::<Result<_>>()?
        }
        c => d
            .samples
            .chunks_exact(c.samples())
            .map(|px| match c {
                png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => [to8(px[0]); 3],
                _ => [to8(px[0]), to8(px[1]), to8(px[2])],
            })
            .collect(),
    };
    Ok(RgbImage {
        width: d.width,
        height: d.height,
        data,
    })
}

pub fn write_rgb_png(path: &Path, image: &RgbImage) -> Result<()> {
    let mut enc = open_writer(path, image.width, image.height)?;
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = image.data.iter().flatten().copied().collect();
    let mut w = enc.write_header().map_err(|e| encode_err(path, e))?;
    w.write_image_data(&bytes).map_err(|e| encode_err(path, e))
}
