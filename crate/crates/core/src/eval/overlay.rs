use std::path::Path;

use crate::camera::{material_at, Material, RawImage};
use crate::sim::{Pose, TrackMap};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlayStyle {
    /// Pixels per tile.
    pub scale: usize,
    pub path_color: [u8; 3],
    pub start_color: [u8; 3],
    pub start_radius: i64,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self { scale: 64, path_color: [30, 60, 230], start_color: [230, 20, 20], start_radius: 3 }
    }
}

fn to_pixel(style: &OverlayStyle, height: usize, x: f64, y: f64) -> (i64, i64) {
    let s = style.scale as f64;
    ((x * s).floor() as i64, height as i64 - 1 - (y * s).floor() as i64)
}

fn put(img: &mut RawImage, u: i64, v: i64, rgb: [u8; 3]) {
    if u >= 0 && v >= 0 && (u as usize) < img.width && (v as usize) < img.height {
        let i = 3 * (v as usize * img.width + u as usize);
        img.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Bresenham segment, endpoints included.
fn line(img: &mut RawImage, (mut u0, mut v0): (i64, i64), (u1, v1): (i64, i64), rgb: [u8; 3]) {
    let du = (u1 - u0).abs();
    let dv = -(v1 - v0).abs();
    let su = if u0 < u1 { 1 } else { -1 };
    let sv = if v0 < v1 { 1 } else { -1 };
    let mut err = du + dv;
    loop {
        put(img, u0, v0, rgb);
        if u0 == u1 && v0 == v1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dv {
            err += dv;
            u0 += su;
        }
        if e2 <= du {
            err += du;
            v0 += sv;
        }
    }
}

/// Top-down map with the trace drawn as a polyline and the start marked.
pub fn rasterize_overlay(trace: &[Pose], map: &TrackMap, style: &OverlayStyle) -> RawImage {
    let (w, h) = (map.cols() * style.scale, map.rows() * style.scale);
    let s = style.scale as f64;
    let mut img = RawImage::filled(w, h, Material::Grass.base_color());
    for v in 0..h {
        for u in 0..w {
            let x = (u as f64 + 0.5) / s;
            let y = (h - 1 - v) as f64 / s + 0.5 / s;
            put(&mut img, u as i64, v as i64, material_at(map, x, y).base_color());
        }
    }
    for pair in trace.windows(2) {
        let a = to_pixel(style, h, pair[0].x, pair[0].y);
        let b = to_pixel(style, h, pair[1].x, pair[1].y);
        line(&mut img, a, b, style.path_color);
    }
    if let Some(start) = trace.first() {
        let (cu, cv) = to_pixel(style, h, start.x, start.y);
        let r = style.start_radius;
        for dv in -r..=r {
            for du in -r..=r {
                if du * du + dv * dv <= r * r {
                    put(&mut img, cu + du, cv + dv, style.start_color);
                }
            }
        }
    }
    img
}

/// Write the overlay as PNG or PPM depending on the extension.
pub fn export_path_overlay(trace: &[Pose], map: &TrackMap, out: impl AsRef<Path>, style: &OverlayStyle) -> Result<(), EvalError> {
    rasterize_overlay(trace, map, style).save(out)?;
    Ok(())
}
