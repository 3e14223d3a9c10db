//! Mask overlays on bundle frames.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::perception::PerceptionBundle;
use crate::pipeline::RunResult;

pub const ALPHA: f64 = 0.5;

const PALETTE: [[u8; 3]; 6] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
];

pub fn color_for(id: u32) -> Rgb<u8> {
    Rgb(PALETTE[id as usize % PALETTE.len()])
}

// 3x5 digit glyphs, one row per entry, high bit on the left.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

/// Draws `id` in a 3x5 font on a black plate with its top-left at `(x, y)`.
pub fn draw_label(img: &mut RgbImage, x: i64, y: i64, id: u32, color: Rgb<u8>) {
    let text = id.to_string();
    let w = text.len() as i64 * 4 + 1;
    for dy in 0..7 {
        for dx in 0..w {
            put(img, x + dx, y + dy, Rgb([0, 0, 0]));
        }
    }
    for (i, ch) in text.bytes().enumerate() {
        let glyph = DIGITS[(ch - b'0') as usize];
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..3 {
                if bits & (0b100 >> col) != 0 {
                    put(img, x + 1 + i as i64 * 4 + col, y + 1 + row as i64, color);
                }
            }
        }
    }
}

/// Blends `mask` into `img` with the given colour and opacity.
pub fn blend_mask(img: &mut RgbImage, mask: &BinaryMask, color: Rgb<u8>, alpha: f64) -> Result<()> {
    if (mask.width(), mask.height()) != img.dimensions() {
        return Err(Error::Shape(format!(
            "mask {}x{} on frame {}x{}",
            mask.width(),
            mask.height(),
            img.width(),
            img.height()
        )));
    }
    for (x, y, px) in img.enumerate_pixels_mut() {
        if mask.get(x, y) {
            for c in 0..3 {
                px.0[c] = (px.0[c] as f64 * (1.0 - alpha) + color.0[c] as f64 * alpha).round() as u8;
            }
        }
    }
    Ok(())
}

/// One overlay frame: every selected id's mask tinted and labelled at its
/// box corner.
pub fn overlay_frame(frame: &RgbImage, result: &RunResult, index: usize) -> Result<RgbImage> {
    let mut img = frame.clone();
    for id in &result.selected_ids {
        let Some(masks) = result.per_id_masks.get(id) else {
            continue;
        };
        let Some(mask) = masks.get(index) else { continue };
        if let Some(b) = mask.bbox() {
            blend_mask(&mut img, mask, color_for(*id), ALPHA)?;
            draw_label(
                &mut img,
                b.xmin.floor() as i64,
                b.ymin.floor() as i64,
                *id,
                color_for(*id),
            );
        }
    }
    Ok(img)
}

/// Writes `out_dir/%06d.png` for every frame and returns the paths.
pub fn render_overlays(result: &RunResult, bundle: &PerceptionBundle, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut paths = Vec::with_capacity(bundle.frame_count());
    for i in 0..bundle.frame_count() {
        let frame = bundle.frame(i)?;
        let img = overlay_frame(&frame, result, i)?;
        let path = out_dir.join(format!("{i:06}.png"));
        img.save(&path).map_err(|e| Error::Image {
            path: path.clone(),
            message: e.to_string(),
        })?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{run_pipeline, Backends, PipelineConfig};
    use crate::sim::generate_scene;
    use crate::sim::suite::suite_scene;

    #[test]
    fn blend_arithmetic() {
        let mut img = RgbImage::from_pixel(4, 4, Rgb([100, 0, 200]));
        let mask = BinaryMask::from_fn(4, 4, |x, _| x < 2);
        blend_mask(&mut img, &mask, Rgb([200, 100, 0]), 0.5).unwrap();
        assert_eq!(img.get_pixel(0, 0).0, [150, 50, 100]);
        assert_eq!(img.get_pixel(3, 0).0, [100, 0, 200]);
        let wrong = BinaryMask::empty(3, 4);
        assert!(blend_mask(&mut img, &wrong, Rgb([0, 0, 0]), 0.5).is_err());
    }

    #[test]
    fn label_glyphs() {
        let mut img = RgbImage::new(12, 8);
        draw_label(&mut img, 0, 0, 17, Rgb([255, 255, 255]));
        // "1": centre column lit on every row.
        for row in 0..5 {
            assert_eq!(img.get_pixel(2, 1 + row).0, [255; 3]);
        }
        // "7": top row lit, bottom-left dark.
        assert_eq!(img.get_pixel(5, 1).0, [255; 3]);
        assert_eq!(img.get_pixel(5, 5).0, [0; 3]);
        // Clipped at the image edge without panicking.
        draw_label(&mut img, 10, 6, 123, Rgb([255, 0, 0]));
    }

    #[test]
    fn overlays_tint_selected_and_copy_others() {
        let s = suite_scene(3, 0);
        let scene = generate_scene(&s.spec, s.seed).unwrap();
        let result = run_pipeline(
            &scene.bundle,
            &scene.query,
            &PipelineConfig::default(),
            Backends::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = render_overlays(&result, &scene.bundle, dir.path()).unwrap();
        assert_eq!(paths.len(), scene.bundle.frame_count());
        for (i, p) in paths.iter().enumerate() {
            let out = image::open(p).unwrap().to_rgb8();
            let frame = scene.bundle.frame(i).unwrap();
            let covered = result.masks.frames[i].area() > 0;
            assert_eq!(out != *frame, covered, "frame {i}");
        }

        let mut empty = result.clone();
        empty.selected_ids.clear();
        let copy_dir = dir.path().join("empty");
        for p in render_overlays(&empty, &scene.bundle, &copy_dir)
            .unwrap()
            .iter()
            .take(3)
        {
            let i: usize = p.file_stem().unwrap().to_str().unwrap().parse().unwrap();
            assert_eq!(image::open(p).unwrap().to_rgb8(), *scene.bundle.frame(i).unwrap());
        }
    }
}
