//! Small grayscale pictures of a view, for backends that expect images.

use super::view::Observation;

pub const RASTER_WIDTH: u32 = 64;
pub const RASTER_HEIGHT: u32 = 48;

const CEILING: u8 = 40;
const FLOOR: u8 = 90;

/// Pseudo-perspective rendering: each column draws a wall slice whose height
/// falls off with depth, and each visible landmark is a bright block sized by
/// proximity. Output is a PNG byte stream.
pub fn render_png(obs: &Observation) -> Vec<u8> {
    let w = RASTER_WIDTH as usize;
    let h = RASTER_HEIGHT as usize;
    let mut pixels = vec![0u8; w * h];
    let desc = &obs.descriptor;
    let rays = desc.depth.len().max(1);

    for col in 0..w {
        // leftmost column looks +fov/2
        let frac = (col as f64 + 0.5) / w as f64;
        let ray = ((frac * rays as f64) as usize).min(rays - 1);
        let depth = desc.depth.get(ray).copied().unwrap_or(desc.range);
        let wall = if depth >= desc.range {
            0
        } else {
            ((h as f64 * 0.6) / depth.max(0.25)).min(h as f64) as usize
        };
        let shade = (220.0 - 30.0 * depth).clamp(110.0, 220.0) as u8;
        let top = (h - wall) / 2;
        for row in 0..h {
            pixels[row * w + col] = if row >= top && row < top + wall {
                shade
            } else if row < h / 2 {
                CEILING
            } else {
                FLOOR
            };
        }
    }

    for lm in &desc.landmarks {
        let frac = 0.5 - lm.bearing / desc.fov;
        let cx = (frac * w as f64).clamp(0.0, w as f64 - 1.0) as i64;
        let half = ((8.0 / lm.range.max(0.5)).round() as i64).clamp(1, 8);
        let cy = h as i64 / 2;
        for y in (cy - half)..=(cy + half) {
            for x in (cx - half)..=(cx + half) {
                if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                    pixels[y as usize * w + x as usize] = 255;
                }
            }
        }
    }

    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, RASTER_WIDTH, RASTER_HEIGHT);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().expect("png header into memory");
        writer
            .write_image_data(&pixels)
            .expect("png body into memory");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{render_view, Pose, SceneMap, SimConfig};

    #[test]
    fn renders_a_png() {
        let scene = SceneMap::from_rows("s", 0.5, &["...", "...", "###"], vec![]).unwrap();
        let obs = render_view(&scene, &Pose::new(0.75, 0.25, 0.0), 0.0, &SimConfig::default());
        let bytes = render_png(&obs);
        assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
        assert_eq!(bytes, render_png(&obs));
    }
}
