//! Grid-seeded pyramidal Lucas–Kanade tracking.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2D;
use crate::perception::luma;

/// Minimum correspondences a frame pair must yield.
pub const MIN_CORRESPONDENCES: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct LumaImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl LumaImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height || width == 0 || height == 0 {
            return Err(Error::Shape(format!(
                "{} samples for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_rgb(img: &RgbImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: luma(img),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    fn at(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    /// Bilinear sample with edge clamping.
    pub fn sample(&self, x: f64, y: f64) -> f32 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = ((x - x0) as f32, (y - y0) as f32);
        let (xi, yi) = (x0 as isize, y0 as isize);
        let top = self.at(xi, yi) * (1.0 - fx) + self.at(xi + 1, yi) * fx;
        let bottom = self.at(xi, yi + 1) * (1.0 - fx) + self.at(xi + 1, yi + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Binomial 5-tap blur followed by 2x subsampling.
    fn pyr_down(&self) -> LumaImage {
        const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = (0..5)
                    .map(|i| K[i] * self.at(x as isize + i as isize - 2, y as isize))
                    .sum();
            }
        }
        let blurred = LumaImage {
            width: w,
            height: h,
            data: tmp,
        };
        let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
        let mut data = Vec::with_capacity(nw * nh);
        for y in 0..nh {
            for x in 0..nw {
                let (sx, sy) = (2 * x as isize, 2 * y as isize);
                data.push((0..5).map(|i| K[i] * blurred.at(sx, sy + i as isize - 2)).sum());
            }
        }
        LumaImage {
            width: nw,
            height: nh,
            data,
        }
    }

    /// Central-difference gradients with edge clamping.
    fn gradients(&self) -> (LumaImage, LumaImage) {
        let (w, h) = (self.width, self.height);
        let mut gx = Vec::with_capacity(w * h);
        let mut gy = Vec::with_capacity(w * h);
        for y in 0..h as isize {
            for x in 0..w as isize {
                gx.push((self.at(x + 1, y) - self.at(x - 1, y)) * 0.5);
                gy.push((self.at(x, y + 1) - self.at(x, y - 1)) * 0.5);
            }
        }
        (
            LumaImage {
                width: w,
                height: h,
                data: gx,
            },
            LumaImage {
                width: w,
                height: h,
                data: gy,
            },
        )
    }

    /// Sobel gradient magnitude at an integer pixel, scaled to intensity per pixel.
    fn sobel_magnitude(&self, x: isize, y: isize) -> f32 {
        let p = |dx: isize, dy: isize| self.at(x + dx, y + dy);
        let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1) - p(-1, -1) - 2.0 * p(-1, 0) - p(-1, 1)) / 8.0;
        let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1) - p(-1, -1) - 2.0 * p(0, -1) - p(1, -1)) / 8.0;
        (gx * gx + gy * gy).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub grid_step: usize,
    /// Seeds need a gradient magnitude above this, in intensity per pixel.
    pub gradient_floor: f32,
    /// Odd window side length.
    pub window: usize,
    pub max_iterations: usize,
    pub levels: usize,
    /// Update norm below which iteration stops, in pixels.
    pub epsilon: f64,
    /// Minimum eigenvalue of the normalized structure tensor.
    pub min_eigen: f64,
    /// Mean absolute intensity difference above which a track is dropped.
    pub max_residual: f32,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            grid_step: 16,
            gradient_floor: 10.0 / 255.0,
            window: 21,
            max_iterations: 30,
            levels: 3,
            epsilon: 0.01,
            min_eigen: 1e-5,
            max_residual: 0.08,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub prev: Point2D,
    pub next: Point2D,
    /// Distance to the fitted model; zero until a fit assigns it.
    pub residual: f64,
}

impl Correspondence {
    pub fn new(prev: Point2D, next: Point2D) -> Self {
        Self {
            prev,
            next,
            residual: 0.0,
        }
    }

    pub fn flow(&self) -> (f64, f64) {
        (self.next.x - self.prev.x, self.next.y - self.prev.y)
    }
}

/// Image pyramid with per-level gradients, reusable across frame pairs.
pub struct Pyramid {
    levels: Vec<LumaImage>,
    grads: Vec<(LumaImage, LumaImage)>,
}

impl Pyramid {
    pub fn new(base: LumaImage, levels: usize) -> Self {
        let mut imgs = vec![base];
        for _ in 1..levels.max(1) {
            let next = imgs.last().unwrap().pyr_down();
            imgs.push(next);
        }
        let grads = imgs.iter().map(LumaImage::gradients).collect();
        Self { levels: imgs, grads }
    }

    pub fn base(&self) -> &LumaImage {
        &self.levels[0]
    }
}

/// Grid seeds whose window lies inside the image and whose gradient
/// magnitude clears the floor.
pub fn seed_points(img: &LumaImage, params: &FlowParams) -> Vec<Point2D> {
    let half = params.window / 2;
    let step = params.grid_step.max(1);
    let mut out = Vec::new();
    let mut y = step;
    while y + half < img.height {
        let mut x = step;
        while x + half < img.width {
            if x >= half && y >= half && img.sobel_magnitude(x as isize, y as isize) > params.gradient_floor {
                out.push(Point2D::new(x as f64, y as f64));
            }
            x += step;
        }
        y += step;
    }
    out
}

/// Tracks one point from `a` to `b`. Returns `None` when the structure
/// tensor is ill-conditioned, iteration fails to converge, the point leaves
/// the image, or the final window residual is too large.
pub fn track_point(a: &Pyramid, b: &Pyramid, p: Point2D, params: &FlowParams) -> Option<Point2D> {
    let half = (params.window / 2) as isize;
    let n_levels = a.levels.len().min(b.levels.len());
    let area = ((2 * half + 1) * (2 * half + 1)) as f64;
    let mut guess = (0.0f64, 0.0f64);
    let mut last_step = f64::INFINITY;
    for level in (0..n_levels).rev() {
        let scale = (1u32 << level) as f64;
        let (px, py) = (p.x / scale, p.y / scale);
        let (ia, ib) = (&a.levels[level], &b.levels[level]);
        let (gx, gy) = &a.grads[level];

        let mut template = Vec::with_capacity(area as usize);
        let (mut gxx, mut gxy, mut gyy) = (0.0f64, 0.0f64, 0.0f64);
        for dy in -half..=half {
            for dx in -half..=half {
                let (sx, sy) = (px + dx as f64, py + dy as f64);
                let ix = gx.sample(sx, sy) as f64;
                let iy = gy.sample(sx, sy) as f64;
                template.push((ia.sample(sx, sy), ix, iy));
                gxx += ix * ix;
                gxy += ix * iy;
                gyy += iy * iy;
            }
        }
        let det = gxx * gyy - gxy * gxy;
        let trace = gxx + gyy;
        let min_eig = (trace - ((gxx - gyy).powi(2) + 4.0 * gxy * gxy).sqrt()) / 2.0;
        if min_eig / area < params.min_eigen || det.abs() < f64::EPSILON {
            return None;
        }

        let mut v = (0.0f64, 0.0f64);
        last_step = f64::INFINITY;
        for _ in 0..params.max_iterations {
            let (mut bx, mut by) = (0.0f64, 0.0f64);
            let mut k = 0;
            for dy in -half..=half {
                for dx in -half..=half {
                    let (ta, ix, iy) = template[k];
                    k += 1;
                    let sb = ib.sample(px + guess.0 + v.0 + dx as f64, py + guess.1 + v.1 + dy as f64);
                    let diff = (ta - sb) as f64;
                    bx += diff * ix;
                    by += diff * iy;
                }
            }
            let ddx = (gyy * bx - gxy * by) / det;
            let ddy = (gxx * by - gxy * bx) / det;
            v.0 += ddx;
            v.1 += ddy;
            last_step = ddx.hypot(ddy);
            if last_step < params.epsilon {
                break;
            }
        }
        if level > 0 {
            guess = (2.0 * (guess.0 + v.0), 2.0 * (guess.1 + v.1));
        } else {
            guess = (guess.0 + v.0, guess.1 + v.1);
        }
    }
    if !last_step.is_finite() || last_step > 10.0 * params.epsilon {
        return None;
    }
    let q = Point2D::new(p.x + guess.0, p.y + guess.1);
    let (w, h) = (b.base().width as f64, b.base().height as f64);
    if !(q.x >= 0.0 && q.y >= 0.0 && q.x <= w - 1.0 && q.y <= h - 1.0) {
        return None;
    }
    let (ia, ib) = (a.base(), b.base());
    let mut sad = 0.0f32;
    for dy in -half..=half {
        for dx in -half..=half {
            sad += (ia.sample(p.x + dx as f64, p.y + dy as f64) - ib.sample(q.x + dx as f64, q.y + dy as f64)).abs();
        }
    }
    if sad / area as f32 > params.max_residual {
        return None;
    }
    Some(q)
}

pub fn track_pyramids(a: &Pyramid, b: &Pyramid, params: &FlowParams) -> Result<Vec<Correspondence>> {
    if a.base().width != b.base().width || a.base().height != b.base().height {
        return Err(Error::Shape("frames differ in size".into()));
    }
    let out: Vec<Correspondence> = seed_points(a.base(), params)
        .into_iter()
        .filter_map(|p| track_point(a, b, p, params).map(|q| Correspondence::new(p, q)))
        .collect();
    if out.len() < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientFeatures {
            found: out.len(),
            required: MIN_CORRESPONDENCES,
        });
    }
    Ok(out)
}

pub fn track_sparse_features(
    frame_a: &RgbImage,
    frame_b: &RgbImage,
    params: &FlowParams,
) -> Result<Vec<Correspondence>> {
    if frame_a.dimensions() != frame_b.dimensions() {
        return Err(Error::Shape(format!(
            "{:?} vs {:?}",
            frame_a.dimensions(),
            frame_b.dimensions()
        )));
    }
    let a = Pyramid::new(LumaImage::from_rgb(frame_a), params.levels);
    let b = Pyramid::new(LumaImage::from_rgb(frame_b), params.levels);
    track_pyramids(&a, &b, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Smooth deterministic texture, evaluated at continuous coordinates so
    /// shifted copies carry no resampling error.
    fn texture(x: f64, y: f64) -> f64 {
        0.5 + 0.2 * (x * 0.31).sin() * (y * 0.23).cos()
            + 0.15 * ((x + 2.0 * y) * 0.17).sin()
            + 0.1 * ((x * 0.07) - (y * 0.11)).cos()
    }

    fn render(w: u32, h: u32, dx: f64, dy: f64) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            let v = (texture(x as f64 - dx, y as f64 - dy) * 255.0)
                .round()
                .clamp(0.0, 255.0) as u8;
            image::Rgb([v, v, v])
        })
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    #[test]
    fn identical_frames_have_zero_flow() {
        let a = render(128, 96, 0.0, 0.0);
        let c = track_sparse_features(&a, &a, &FlowParams::default()).unwrap();
        assert!(c.len() >= MIN_CORRESPONDENCES);
        for k in c {
            let (fx, fy) = k.flow();
            assert!(fx.abs() < 0.1 && fy.abs() < 0.1, "{fx} {fy}");
        }
    }

    #[test]
    fn recovers_three_pixel_shift() {
        let a = render(128, 96, 0.0, 0.0);
        let b = render(128, 96, 3.0, 0.0);
        let c = track_sparse_features(&a, &b, &FlowParams::default()).unwrap();
        let mx = median(c.iter().map(|k| k.flow().0).collect());
        let my = median(c.iter().map(|k| k.flow().1).collect());
        assert!((mx - 3.0).abs() <= 0.2, "{mx}");
        assert!(my.abs() <= 0.2, "{my}");
    }

    #[test]
    fn flat_image_has_no_features() {
        let a = RgbImage::from_pixel(64, 64, image::Rgb([90, 90, 90]));
        assert!(matches!(
            track_sparse_features(&a, &a, &FlowParams::default()),
            Err(Error::InsufficientFeatures { found: 0, .. })
        ));
    }

    #[test]
    fn larger_shift_within_pyramid_range() {
        let a = render(160, 120, 0.0, 0.0);
        let b = render(160, 120, 9.0, -4.0);
        let c = track_sparse_features(&a, &b, &FlowParams::default()).unwrap();
        let mx = median(c.iter().map(|k| k.flow().0).collect());
        let my = median(c.iter().map(|k| k.flow().1).collect());
        assert!((mx - 9.0).abs() < 0.3 && (my + 4.0).abs() < 0.3, "{mx} {my}");
    }

    #[test]
    fn grayscale_conversion_weights() {
        let img = RgbImage::from_pixel(2, 1, image::Rgb([0, 255, 0]));
        let l = LumaImage::from_rgb(&img);
        assert!((l.sample(0.0, 0.0) - 0.587).abs() < 1e-6);
    }
}
