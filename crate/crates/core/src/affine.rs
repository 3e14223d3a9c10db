//! 2×3 affine transforms and robust fitting from point correspondences.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::Correspondence;
use crate::geometry::Point2D;

/// `[[a, b, tx], [c, d, ty]]`, mapping `(x, y)` to `(a x + b y + tx, c x + d y + ty)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub m: [[f64; 3]; 2],
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineTransform {
    pub const fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    pub const fn new(a: f64, b: f64, tx: f64, c: f64, d: f64, ty: f64) -> Self {
        Self {
            m: [[a, b, tx], [c, d, ty]],
        }
    }

    pub const fn translation(tx: f64, ty: f64) -> Self {
        Self::new(1.0, 0.0, tx, 0.0, 1.0, ty)
    }

    /// Uniform scale `s` and rotation `theta` (radians) about the origin.
    pub fn similarity(s: f64, theta: f64, tx: f64, ty: f64) -> Self {
        let (sin, cos) = theta.sin_cos();
        Self::new(s * cos, -s * sin, tx, s * sin, s * cos, ty)
    }

    /// `[a, b, tx, c, d, ty]`.
    pub fn coefficients(&self) -> [f64; 6] {
        let [[a, b, tx], [c, d, ty]] = self.m;
        [a, b, tx, c, d, ty]
    }

    pub fn apply(&self, p: Point2D) -> Point2D {
        let [[a, b, tx], [c, d, ty]] = self.m;
        Point2D::new(a * p.x + b * p.y + tx, c * p.x + d * p.y + ty)
    }

    pub fn determinant(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn is_finite(&self) -> bool {
        self.coefficients().iter().all(|v| v.is_finite())
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &AffineTransform) -> AffineTransform {
        let [[a1, b1, t1], [c1, d1, u1]] = self.m;
        let [[a2, b2, t2], [c2, d2, u2]] = other.m;
        AffineTransform::new(
            a1 * a2 + b1 * c2,
            a1 * b2 + b1 * d2,
            a1 * t2 + b1 * u2 + t1,
            c1 * a2 + d1 * c2,
            c1 * b2 + d1 * d2,
            c1 * t2 + d1 * u2 + u1,
        )
    }

    pub fn inverse(&self) -> Result<AffineTransform> {
        let det = self.determinant();
        if !det.is_finite() || det.abs() < 1e-12 {
            return Err(Error::Model(format!(
                "affine transform is not invertible (det = {det})"
            )));
        }
        let [[a, b, tx], [c, d, ty]] = self.m;
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Ok(AffineTransform::new(
            ia,
            ib,
            -(ia * tx + ib * ty),
            ic,
            id,
            -(ic * tx + id * ty),
        ))
    }

    pub fn translation_part(&self) -> (f64, f64) {
        (self.m[0][2], self.m[1][2])
    }

    /// `sqrt(|det|)`.
    pub fn scale(&self) -> f64 {
        self.determinant().abs().sqrt()
    }

    /// `atan2(c, a)` in degrees.
    pub fn rotation_degrees(&self) -> f64 {
        self.m[1][0].atan2(self.m[0][0]).to_degrees()
    }

    pub fn max_abs_diff(&self, other: &AffineTransform) -> f64 {
        self.coefficients()
            .iter()
            .zip(other.coefficients())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_px: f64,
    pub seed: u64,
    /// Lower bound on the refit threshold. Refits keep points within
    /// three robust standard deviations of the current fit, never more than
    /// `inlier_px` and never less than this.
    #[serde(default = "default_refine_floor")]
    pub refine_floor_px: f64,
}

fn default_refine_floor() -> f64 {
    0.25
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 200,
            inlier_px: 2.0,
            seed: 0,
            refine_floor_px: default_refine_floor(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub transform: AffineTransform,
    pub inliers: usize,
    /// Root-mean-square transfer error over the inliers, in pixels.
    pub residual_rms: f64,
    /// Input correspondences with `residual` filled from the final fit.
    pub correspondences: Vec<Correspondence>,
}

fn transfer_error(t: &AffineTransform, c: &Correspondence) -> f64 {
    t.apply(c.prev).distance(&c.next)
}

/// Least-squares affine fit on centered coordinates.
pub fn fit_least_squares(corrs: &[&Correspondence]) -> Result<AffineTransform> {
    let n = corrs.len();
    if n < 3 {
        return Err(Error::DegenerateInput(format!("{n} correspondences, need at least 3")));
    }
    let nf = n as f64;
    let (mut mx, mut my, mut mu, mut mv) = (0.0, 0.0, 0.0, 0.0);
    for c in corrs {
        mx += c.prev.x;
        my += c.prev.y;
        mu += c.next.x;
        mv += c.next.y;
    }
    mx /= nf;
    my /= nf;
    mu /= nf;
    mv /= nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    let (mut sxu, mut syu, mut sxv, mut syv) = (0.0, 0.0, 0.0, 0.0);
    for c in corrs {
        let (x, y) = (c.prev.x - mx, c.prev.y - my);
        let (u, v) = (c.next.x - mu, c.next.y - mv);
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
        sxu += x * u;
        syu += y * u;
        sxv += x * v;
        syv += y * v;
    }
    let det = sxx * syy - sxy * sxy;
    if det.abs() <= 1e-9 * (sxx * syy).max(f64::MIN_POSITIVE) || det.abs() < 1e-12 {
        return Err(Error::DegenerateGeometry("source points are collinear".into()));
    }
    let a = (syy * sxu - sxy * syu) / det;
    let b = (sxx * syu - sxy * sxu) / det;
    let c = (syy * sxv - sxy * syv) / det;
    let d = (sxx * syv - sxy * sxv) / det;
    Ok(AffineTransform::new(
        a,
        b,
        mu - a * mx - b * my,
        c,
        d,
        mv - c * mx - d * my,
    ))
}

/// RANSAC over minimal 3-point samples, then a least-squares refit on the
/// consensus set.
/// Three MAD-derived standard deviations of the residuals inside
/// `inlier_px`, clamped to `[refine_floor_px, inlier_px]`.
fn refit_threshold(t: &AffineTransform, corrs: &[Correspondence], params: &RansacParams) -> f64 {
    let mut errs: Vec<f64> = corrs
        .iter()
        .map(|c| transfer_error(t, c))
        .filter(|e| *e <= params.inlier_px)
        .collect();
    if errs.is_empty() {
        return params.inlier_px;
    }
    errs.sort_by(f64::total_cmp);
    let median = errs[errs.len() / 2];
    (3.0 * 1.4826 * median).clamp(params.refine_floor_px.min(params.inlier_px), params.inlier_px)
}

pub fn estimate_affine(corrs: &[Correspondence], params: &RansacParams) -> Result<AffineFit> {
    let n = corrs.len();
    if n < 3 {
        return Err(Error::DegenerateInput(format!("{n} correspondences, need at least 3")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(usize, f64, AffineTransform)> = None;
    for _ in 0..params.iterations.max(1) {
        let idx = sample(&mut rng, n, 3);
        let pick: Vec<&Correspondence> = idx.iter().map(|i| &corrs[i]).collect();
        let Ok(model) = fit_least_squares(&pick) else {
            continue;
        };
        if !model.is_finite() {
            continue;
        }
        let mut count = 0;
        let mut sq = 0.0;
        for c in corrs {
            let e = transfer_error(&model, c);
            if e <= params.inlier_px {
                count += 1;
                sq += e * e;
            }
        }
        let better = match &best {
            None => true,
            Some((bc, bsq, _)) => count > *bc || (count == *bc && sq < *bsq),
        };
        if better {
            best = Some((count, sq, model));
        }
    }
    let Some((_, _, model)) = best else {
        return Err(Error::DegenerateGeometry("every sample was collinear".into()));
    };

    let mut transform = model;
    let mut inlier_set: Vec<&Correspondence> = Vec::new();
    for _ in 0..5 {
        let threshold = refit_threshold(&transform, corrs, params);
        let next: Vec<&Correspondence> = corrs
            .iter()
            .filter(|c| transfer_error(&transform, c) <= threshold)
            .collect();
        if next.len() < 3 {
            break;
        }
        let Ok(refit) = fit_least_squares(&next) else {
            break;
        };
        let same = next.len() == inlier_set.len();
        transform = refit;
        inlier_set = next;
        if same {
            break;
        }
    }
    if inlier_set.is_empty() {
        inlier_set = corrs
            .iter()
            .filter(|c| transfer_error(&transform, c) <= params.inlier_px)
            .collect();
    }
    let sq: f64 = inlier_set.iter().map(|c| transfer_error(&transform, c).powi(2)).sum();
    let residual_rms = if inlier_set.is_empty() {
        0.0
    } else {
        (sq / inlier_set.len() as f64).sqrt()
    };
    let correspondences = corrs
        .iter()
        .map(|c| Correspondence {
            residual: transfer_error(&transform, c),
            ..*c
        })
        .collect();
    Ok(AffineFit {
        transform,
        inliers: inlier_set.len(),
        residual_rms,
        correspondences,
    })
}
