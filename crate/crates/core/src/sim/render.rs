//! Procedural textures and per-frame rasterization.

use image::{Rgb, RgbImage};

use crate::affine::AffineTransform;
use crate::mask::BinaryMask;

use super::{ObjectScript, Shape};

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(seed ^ splitmix(ix as u64 ^ splitmix(iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothly interpolated lattice noise in `[0, 1]` with the given cell size.
pub fn value_noise(seed: u64, x: f64, y: f64, cell: f64) -> f64 {
    let (gx, gy) = (x / cell, y / cell);
    let (x0, y0) = (gx.floor(), gy.floor());
    let (tx, ty) = (smooth(gx - x0), smooth(gy - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

fn background(seed: u64, x: f64, y: f64) -> Rgb<u8> {
    let v = 0.6 * value_noise(seed, x, y, 7.0) + 0.4 * value_noise(seed.wrapping_add(17), x, y, 3.0);
    Rgb([
        (35.0 + 190.0 * v) as u8,
        (45.0 + 170.0 * v) as u8,
        (55.0 + 150.0 * v) as u8,
    ])
}

fn object_color(seed: u64, obj: &ObjectScript, lx: f64, ly: f64) -> Rgb<u8> {
    let v = value_noise(seed.wrapping_add(obj.id as u64 * 7919), lx, ly, 4.0);
    let s = 0.55 + 0.45 * v;
    Rgb(obj.color.map(|c| (c as f64 * s).round().clamp(0.0, 255.0) as u8))
}

pub(super) fn inside(obj: &ObjectScript, dx: f64, dy: f64) -> bool {
    let (hw, hh) = (obj.size[0] / 2.0, obj.size[1] / 2.0);
    match obj.shape {
        Shape::Rect => dx >= -hw && dx < hw && dy >= -hh && dy < hh,
        Shape::Ellipse => (dx / hw).powi(2) + (dy / hh).powi(2) <= 1.0,
    }
}

/// One rendered frame: the image plus full and visible masks per object,
/// in the order of `objects`.
pub(super) struct RenderedFrame {
    pub image: RgbImage,
    pub full: Vec<BinaryMask>,
    pub visible: Vec<BinaryMask>,
}

/// Rasterizes objects at the given world centres through the camera
/// transform `cam` (world to image). Higher depth is drawn on top.
pub(super) fn render_frame(
    seed: u64,
    width: u32,
    height: u32,
    cam: &AffineTransform,
    objects: &[ObjectScript],
    centers: &[(f64, f64)],
) -> RenderedFrame {
    let inv = cam.inverse().expect("camera transforms are validated invertible");
    let (w, h) = (width as usize, height as usize);
    let mut order: Vec<usize> = (0..objects.len()).collect();
    order.sort_by_key(|&i| (objects[i].depth, objects[i].id));

    let mut owner = vec![u16::MAX; w * h];
    let mut full_bits = vec![vec![false; w * h]; objects.len()];
    let mut image = RgbImage::new(width, height);
    for y in 0..h {
        for x in 0..w {
            let crate::geometry::Point2D { x: wx, y: wy } =
                inv.apply(crate::geometry::Point2D::new(x as f64 + 0.5, y as f64 + 0.5));
            let mut top = None;
            for &i in &order {
                let (cx, cy) = centers[i];
                if inside(&objects[i], wx - cx, wy - cy) {
                    full_bits[i][y * w + x] = true;
                    top = Some(i);
                }
            }
            let px = match top {
                Some(i) => {
                    owner[y * w + x] = i as u16;
                    let (cx, cy) = centers[i];
                    object_color(seed, &objects[i], wx - cx, wy - cy)
                }
                None => background(seed, wx, wy),
            };
            image.put_pixel(x as u32, y as u32, px);
        }
    }
    let full = full_bits
        .iter()
        .map(|bits| BinaryMask::from_fn(width, height, |x, y| bits[y as usize * w + x as usize]))
        .collect();
    let visible = (0..objects.len())
        .map(|i| BinaryMask::from_fn(width, height, |x, y| owner[y as usize * w + x as usize] == i as u16))
        .collect();
    RenderedFrame { image, full, visible }
}
