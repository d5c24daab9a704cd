//! Polyline landmark annotations, rasterized into label maps on load.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pixels::PixelMask;
use crate::render::{Channel, LandmarkMap2D};

/// Default dilation applied to rasterized polylines (pixels).
pub const DEFAULT_POLYLINE_DILATION: f64 = 3.0;

/// Polylines per class in continuous pixel coordinates (pixel `(i, j)` has its center at
/// `(i + 0.5, j + 0.5)`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolylineFile {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub ridge: Vec<Vec<[f64; 2]>>,
    #[serde(default)]
    pub ligament: Vec<Vec<[f64; 2]>>,
    #[serde(default)]
    pub silhouette: Vec<Vec<[f64; 2]>>,
}

fn mark(mask: &mut PixelMask, x: f64, y: f64) {
    if x >= 0.0 && y >= 0.0 && x < mask.width() as f64 && y < mask.height() as f64 {
        mask.set(x as usize, y as usize, true);
    }
}

/// Marks every pixel a polyline passes through.
fn rasterize_line(mask: &mut PixelMask, line: &[[f64; 2]]) {
    if let [p] = line {
        mark(mask, p[0], p[1]);
    }
    for seg in line.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let steps = (len / 0.25).ceil().max(1.0) as usize;
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            mark(mask, a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]));
        }
    }
}

impl PolylineFile {
    /// Rasterizes each class at 1 px width, then dilates by `dilation` pixels.
    pub fn rasterize(&self, dilation: f64) -> Result<LandmarkMap2D> {
        if !(dilation >= 0.0) {
            return Err(Error::InvalidArgument(format!("dilation must be non-negative, got {dilation}")));
        }
        let mut map = LandmarkMap2D::new(self.width, self.height);
        for (c, lines) in [
            (Channel::Ridge, &self.ridge),
            (Channel::Ligament, &self.ligament),
            (Channel::Silhouette, &self.silhouette),
        ] {
            let mut mask = PixelMask::new(self.width, self.height);
            for line in lines {
                if line.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument(format!("non-finite {} polyline vertex", c.name())));
                }
                rasterize_line(&mut mask, line);
            }
            let mask = if dilation > 0.0 { mask.dilated(dilation) } else { mask };
            map.paint(c, &mask);
        }
        Ok(map)
    }
}

pub fn read_polyline_json(path: &Path, dilation: f64) -> Result<LandmarkMap2D> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingAsset { path: path.into() }
        } else {
            Error::io(path, e)
        }
    })?;
    let file: PolylineFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    file.rasterize(dilation).map_err(|e| Error::parse(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn horizontal_line_covers_its_row() {
        let f = PolylineFile {
            width: 20,
            height: 10,
            ridge: vec![vec![[2.5, 4.5], [12.5, 4.5]]],
            ..Default::default()
        };
        let map = f.rasterize(0.0).unwrap();
        let m = map.channel(Channel::Ridge);
        assert_eq!(m.count(), 11);
        assert!((2..=12).all(|x| m.get(x, 4)));
        assert!(!map.channel(Channel::Ligament).any());
    }

    #[test]
    fn dilation_widens_by_the_requested_radius() {
        let f = PolylineFile {
            width: 40,
            height: 40,
            ligament: vec![vec![[20.5, 5.5], [20.5, 35.5]]],
            ..Default::default()
        };
        let m = f.rasterize(DEFAULT_POLYLINE_DILATION).unwrap().channel(Channel::Ligament);
        assert!(m.get(17, 20) && m.get(23, 20));
        assert!(!m.get(16, 20) && !m.get(24, 20));
    }

    #[test]
    fn diagonal_lines_stay_connected() {
        let f = PolylineFile {
            width: 30,
            height: 30,
            ridge: vec![vec![[1.2, 1.7], [27.9, 22.3]]],
            ..Default::default()
        };
        let m = f.rasterize(0.0).unwrap().channel(Channel::Ridge);
        for (x, y) in m.pixels() {
            let neighbours = m
                .pixels()
                .into_iter()
                .filter(|&(a, b)| (a, b) != (x, y) && a.abs_diff(x) <= 1 && b.abs_diff(y) <= 1)
                .count();
            assert!(neighbours >= 1);
        }
    }

    #[test]
    fn points_outside_the_image_are_clipped() {
        let f = PolylineFile {
            width: 8,
            height: 8,
            silhouette: vec![vec![[-5.0, 4.5], [20.0, 4.5]]],
            ..Default::default()
        };
        assert_eq!(f.rasterize(0.0).unwrap().channel(Channel::Silhouette).count(), 8);
    }
}
