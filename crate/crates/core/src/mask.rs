//! Run-length encoded binary masks.
//!
//! Runs are column-major and start with a count of zeros, the COCO convention,
//! so masks written by common perception exporters load unchanged. The wire
//! form is `{"size": [height, width], "counts": "<compressed string>"}`.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::Box2D;

/// Binary mask in canonical RLE form: the first run counts zeros (possibly
/// zero-length) and every later run is non-empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    counts: Vec<u32>,
}

impl BinaryMask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            counts: vec![width * height],
        }
    }

    /// Builds a mask from raw run counts, re-canonicalizing them.
    pub fn from_counts(width: u32, height: u32, counts: Vec<u32>) -> Result<Self> {
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        if total != width as u64 * height as u64 {
            return Err(Error::validation(
                "counts",
                format!("run counts sum to {total}, expected {}x{}", width, height),
            ));
        }
        Ok(Self::canonicalize(width, height, &counts))
    }

    fn canonicalize(width: u32, height: u32, counts: &[u32]) -> Self {
        let mut out: Vec<u32> = Vec::with_capacity(counts.len());
        let mut value = false;
        for &c in counts {
            if c > 0 {
                // the last pushed run sits at index len-1; odd indices are ones
                let last_value = (!out.is_empty()).then(|| out.len() % 2 == 0);
                match last_value {
                    Some(v) if v == value => *out.last_mut().unwrap() += c,
                    _ => {
                        if out.is_empty() && value {
                            out.push(0);
                        }
                        out.push(c);
                    }
                }
            }
            value = !value;
        }
        if out.is_empty() {
            out.push(0);
        }
        Self {
            width,
            height,
            counts: out,
        }
    }

    /// Builds a mask from a row-major bitmap (`index = y * width + x`).
    pub fn from_bitmap(width: u32, height: u32, bits: &[bool]) -> Result<Self> {
        let n = width as usize * height as usize;
        if bits.len() != n {
            return Err(Error::Shape(format!(
                "bitmap has {} entries, expected {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        Ok(Self::from_fn(width, height, |x, y| {
            bits[y as usize * width as usize + x as usize]
        }))
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut counts = Vec::new();
        let mut prev = false;
        let mut run = 0u32;
        for x in 0..width {
            for y in 0..height {
                let v = f(x, y);
                if v != prev {
                    counts.push(run);
                    run = 0;
                    prev = v;
                }
                run += 1;
            }
        }
        counts.push(run);
        Self { width, height, counts }
    }

    /// Filled axis-aligned rectangle of pixels `[x0, x1) × [y0, y1)`, clipped.
    pub fn from_rect(width: u32, height: u32, x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        Self::from_fn(width, height, |x, y| {
            let (x, y) = (x as i64, y as i64);
            x >= x0 && x < x1 && y >= y0 && y < y1
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Row-major bitmap (`index = y * width + x`).
    pub fn to_bitmap(&self) -> Vec<bool> {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut bits = vec![false; w * h];
        let mut idx = 0usize;
        for (i, &c) in self.counts.iter().enumerate() {
            let c = c as usize;
            if i % 2 == 1 {
                for k in idx..idx + c {
                    let (x, y) = (k / h, k % h);
                    bits[y * w + x] = true;
                }
            }
            idx += c;
        }
        bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        if x >= self.width || y >= self.height {
            return false;
        }
        let target = x as u64 * self.height as u64 + y as u64;
        let mut idx = 0u64;
        for (i, &c) in self.counts.iter().enumerate() {
            idx += c as u64;
            if target < idx {
                return i % 2 == 1;
            }
        }
        false
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    /// Tight pixel bounding box, or `None` when the mask has no set pixels.
    pub fn bbox(&self) -> Option<Box2D> {
        let h = self.height as u64;
        if h == 0 {
            return None;
        }
        let (mut x0, mut y0, mut x1, mut y1) = (u64::MAX, u64::MAX, 0u64, 0u64);
        let mut idx = 0u64;
        for (i, &c) in self.counts.iter().enumerate() {
            let c = c as u64;
            if i % 2 == 1 && c > 0 {
                let (sx, sy) = (idx / h, idx % h);
                let end = idx + c - 1;
                let (ex, ey) = (end / h, end % h);
                x0 = x0.min(sx);
                x1 = x1.max(ex + 1);
                if sx != ex {
                    y0 = 0;
                    y1 = h;
                } else {
                    y0 = y0.min(sy);
                    y1 = y1.max(ey + 1);
                }
            }
            idx += c;
        }
        if x0 == u64::MAX {
            return None;
        }
        Some(Box2D::from_corners_unchecked(
            x0 as f64, y0 as f64, x1 as f64, y1 as f64,
        ))
    }

    fn check_same_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Shape(format!(
                "mask sizes differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Walks both run streams in lockstep, combining values with `op`.
    fn merge_with(&self, other: &BinaryMask, op: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        self.check_same_shape(other)?;
        let mut out = Vec::new();
        let mut runs_a = RunCursor::new(&self.counts);
        let mut runs_b = RunCursor::new(&other.counts);
        let mut prev: Option<bool> = None;
        while let (Some((va, ca)), Some((vb, cb))) = (runs_a.peek(), runs_b.peek()) {
            let step = ca.min(cb);
            let v = op(va, vb);
            match prev {
                Some(p) if p == v => *out.last_mut().unwrap() += step,
                _ => {
                    if prev.is_none() && v {
                        out.push(0);
                    }
                    out.push(step);
                    prev = Some(v);
                }
            }
            runs_a.advance(step);
            runs_b.advance(step);
        }
        if out.is_empty() {
            out.push(0);
        }
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            counts: out,
        })
    }

    pub fn intersection_area(&self, other: &BinaryMask) -> Result<u64> {
        Ok(self.merge_with(other, |a, b| a && b)?.area())
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.merge_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.merge_with(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.merge_with(other, |a, b| a && !b)
    }

    /// Shifts set pixels by `(dx, dy)`; pixels leaving the image are dropped.
    pub fn translate(&self, dx: i64, dy: i64) -> BinaryMask {
        if dx == 0 && dy == 0 {
            return self.clone();
        }
        let bits = self.to_bitmap();
        let (w, h) = (self.width as i64, self.height as i64);
        BinaryMask::from_fn(self.width, self.height, |x, y| {
            let (sx, sy) = (x as i64 - dx, y as i64 - dy);
            sx >= 0 && sy >= 0 && sx < w && sy < h && bits[(sy * w + sx) as usize]
        })
    }

    /// Morphological dilation with a `(2r+1)×(2r+1)` square.
    pub fn dilate(&self, radius: u32) -> BinaryMask {
        if radius == 0 {
            return self.clone();
        }
        let bits = self.to_bitmap();
        let (w, h, r) = (self.width as i64, self.height as i64, radius as i64);
        BinaryMask::from_fn(self.width, self.height, |x, y| {
            let (x, y) = (x as i64, y as i64);
            ((y - r).max(0)..=(y + r).min(h - 1))
                .any(|yy| ((x - r).max(0)..=(x + r).min(w - 1)).any(|xx| bits[(yy * w + xx) as usize]))
        })
    }

    /// COCO compressed count string (the LEB128-like scheme of `maskApi.c`).
    pub fn to_coco_string(&self) -> String {
        let mut s = String::new();
        for (i, &c) in self.counts.iter().enumerate() {
            let mut x = c as i64;
            if i > 2 {
                x -= self.counts[i - 2] as i64;
            }
            loop {
                let mut ch = x & 0x1f;
                x >>= 5;
                let more = if ch & 0x10 != 0 { x != -1 } else { x != 0 };
                if more {
                    ch |= 0x20;
                }
                s.push((ch as u8 + 48) as char);
                if !more {
                    break;
                }
            }
        }
        s
    }

    pub fn from_coco_string(width: u32, height: u32, s: &str) -> Result<Self> {
        let bytes = s.as_bytes();
        let mut counts: Vec<i64> = Vec::new();
        let mut p = 0usize;
        while p < bytes.len() {
            let mut x: i64 = 0;
            let mut k = 0u32;
            loop {
                let b = *bytes
                    .get(p)
                    .ok_or_else(|| Error::validation("counts", "truncated compressed RLE string"))?;
                if !(48..48 + 64).contains(&b) {
                    return Err(Error::validation(
                        "counts",
                        format!("invalid character {:?} in compressed RLE", b as char),
                    ));
                }
                let c = (b - 48) as i64;
                if k >= 12 {
                    return Err(Error::validation("counts", "compressed RLE value overflow"));
                }
                x |= (c & 0x1f) << (5 * k);
                p += 1;
                k += 1;
                if c & 0x20 == 0 {
                    if c & 0x10 != 0 {
                        x |= -1i64 << (5 * k);
                    }
                    break;
                }
            }
            if counts.len() > 2 {
                x += counts[counts.len() - 2];
            }
            if x < 0 || x > u32::MAX as i64 {
                return Err(Error::validation("counts", format!("decoded run {x} out of range")));
            }
            counts.push(x);
        }
        Self::from_counts(width, height, counts.into_iter().map(|c| c as u32).collect())
    }
}

struct RunCursor<'a> {
    counts: &'a [u32],
    idx: usize,
    left: u32,
}

impl<'a> RunCursor<'a> {
    fn new(counts: &'a [u32]) -> Self {
        let mut c = Self {
            counts,
            idx: 0,
            left: counts.first().copied().unwrap_or(0),
        };
        c.skip_empty();
        c
    }

    fn skip_empty(&mut self) {
        while self.left == 0 && self.idx + 1 < self.counts.len() {
            self.idx += 1;
            self.left = self.counts[self.idx];
        }
    }

    fn peek(&self) -> Option<(bool, u32)> {
        (self.left > 0).then_some((self.idx % 2 == 1, self.left))
    }

    fn advance(&mut self, n: u32) {
        self.left -= n;
        self.skip_empty();
    }
}

#[derive(Serialize, Deserialize)]
struct RleWire {
    size: [u32; 2],
    counts: WireCounts,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WireCounts {
    Compressed(String),
    Raw(Vec<u32>),
}

impl Serialize for BinaryMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        RleWire {
            size: [self.height, self.width],
            counts: WireCounts::Compressed(self.to_coco_string()),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BinaryMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = RleWire::deserialize(deserializer)?;
        let [height, width] = wire.size;
        match wire.counts {
            WireCounts::Compressed(s) => BinaryMask::from_coco_string(width, height, &s),
            WireCounts::Raw(c) => BinaryMask::from_counts(width, height, c),
        }
        .map_err(D::Error::custom)
    }
}

/// Intersection over union; two empty masks count as a perfect match.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.intersection_area(b)?;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

pub fn translate_mask(m: &BinaryMask, dx: i64, dy: i64) -> BinaryMask {
    m.translate(dx, dy)
}

/// One mask per video frame, all at the same resolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSequence {
    pub video_id: String,
    pub frames: Vec<BinaryMask>,
}

impl MaskSequence {
    pub fn new(video_id: impl Into<String>, frames: Vec<BinaryMask>) -> Result<Self> {
        let seq = Self {
            video_id: video_id.into(),
            frames,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn empty(video_id: impl Into<String>, width: u32, height: u32, len: usize) -> Self {
        Self {
            video_id: video_id.into(),
            frames: vec![BinaryMask::empty(width, height); len],
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(first) = self.frames.first() {
            for (i, m) in self.frames.iter().enumerate() {
                if m.width() != first.width() || m.height() != first.height() {
                    return Err(Error::Shape(format!(
                        "frame {i} is {}x{}, expected {}x{}",
                        m.width(),
                        m.height(),
                        first.width(),
                        first.height()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Frame-wise union.
    pub fn union(&self, other: &MaskSequence) -> Result<MaskSequence> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "sequence lengths differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        let frames = self
            .frames
            .iter()
            .zip(&other.frames)
            .map(|(a, b)| a.union(b))
            .collect::<Result<Vec<_>>>()?;
        Ok(MaskSequence {
            video_id: self.video_id.clone(),
            frames,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(w: u32, h: u32, px: u32, py: u32) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| x == px && y == py)
    }

    #[test]
    fn empty_mask_has_single_zero_run() {
        let m = BinaryMask::empty(4, 3);
        assert_eq!(m.counts(), &[12]);
        assert!(m.is_empty());
        assert_eq!(m.bbox(), None);
    }

    #[test]
    fn column_major_with_leading_zero_count() {
        // 2x2, only (0,0) set: column-major order is (0,0),(0,1),(1,0),(1,1)
        let m = single(2, 2, 0, 0);
        assert_eq!(m.counts(), &[0, 1, 3]);
        let m = single(2, 2, 1, 0);
        assert_eq!(m.counts(), &[2, 1, 1]);
    }

    #[test]
    fn from_counts_canonicalizes_zero_runs() {
        let m = BinaryMask::from_counts(2, 2, vec![1, 0, 1, 1, 1]).unwrap();
        // zeros:1, ones:0, zeros:1 -> zeros:2, ones:1, zeros:1
        assert_eq!(m.counts(), &[2, 1, 1]);
        assert!(BinaryMask::from_counts(2, 2, vec![1, 1]).is_err());
    }

    #[test]
    fn iou_self_and_empty() {
        let m = BinaryMask::from_rect(5, 5, 1, 1, 3, 4);
        assert_eq!(mask_iou(&m, &m).unwrap(), 1.0);
        let e = BinaryMask::empty(5, 5);
        assert_eq!(mask_iou(&e, &e).unwrap(), 1.0);
        assert_eq!(mask_iou(&m, &e).unwrap(), 0.0);
    }

    #[test]
    fn iou_shifted_square_brute_force() {
        // 2x2 block (4 px) in a 3x3 image and the same block shifted right by 1:
        // overlap 2 px, union 6 px.
        let a = BinaryMask::from_rect(3, 3, 0, 0, 2, 2);
        let b = a.translate(1, 0);
        let (ba, bb) = (a.to_bitmap(), b.to_bitmap());
        let inter = ba.iter().zip(&bb).filter(|(x, y)| **x && **y).count();
        let union = ba.iter().zip(&bb).filter(|(x, y)| **x || **y).count();
        assert_eq!((inter, union), (2, 6));
        assert!((mask_iou(&a, &b).unwrap() - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn iou_shape_mismatch() {
        let a = BinaryMask::empty(3, 3);
        let b = BinaryMask::empty(3, 4);
        assert!(matches!(mask_iou(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn translate_examples() {
        let m = BinaryMask::from_rect(6, 4, 1, 1, 3, 3);
        assert_eq!(translate_mask(&m, 0, 0), m);
        assert_eq!(single(4, 4, 0, 0).translate(1, 1), single(4, 4, 1, 1));
        assert!(single(4, 3, 3, 2).translate(1, 0).is_empty());
    }

    #[test]
    fn bbox_is_tight() {
        let m = BinaryMask::from_rect(10, 8, 2, 3, 5, 7);
        assert_eq!(m.bbox().unwrap().to_array(), [2., 3., 5., 7.]);
        let m = single(10, 8, 9, 7);
        assert_eq!(m.bbox().unwrap().to_array(), [9., 7., 10., 8.]);
    }

    #[test]
    fn dilate_grows_single_pixel_to_square() {
        let m = single(5, 5, 2, 2).dilate(1);
        assert_eq!(m, BinaryMask::from_rect(5, 5, 1, 1, 4, 4));
        let corner = single(5, 5, 0, 0).dilate(1);
        assert_eq!(corner.area(), 4);
    }

    #[test]
    fn coco_string_known_values() {
        // Golden strings produced by pycocotools.mask.encode on the same masks.
        let cases: [(u32, u32, &[u32], &str); 4] = [
            (4, 4, &[5, 3, 8], "538"),
            (100, 100, &[4000, 2000, 4000], "Pm3`n1Pm3"),
            (7, 5, &[0, 3, 10, 1, 2, 19], "03:NHb0"),
            (30, 20, &[33, 100, 7, 260, 200], "Q1T37P5Q6"),
        ];
        for (w, h, counts, golden) in cases {
            let m = BinaryMask::from_counts(w, h, counts.to_vec()).unwrap();
            assert_eq!(m.to_coco_string(), golden);
            assert_eq!(BinaryMask::from_coco_string(w, h, golden).unwrap(), m);
        }
    }

    #[test]
    fn wire_form_uses_height_width_order() {
        let m = BinaryMask::from_rect(3, 2, 0, 0, 1, 1);
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v["size"], serde_json::json!([2, 3]));
        let back: BinaryMask = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
        let raw: BinaryMask = serde_json::from_str(r#"{"size": [2, 3], "counts": [0, 1, 5]}"#).unwrap();
        assert_eq!(raw, m);
    }

    #[test]
    fn union_of_sequences() {
        let a = MaskSequence::new("v", vec![BinaryMask::from_rect(3, 3, 0, 0, 1, 1)]).unwrap();
        let b = MaskSequence::new("v", vec![BinaryMask::from_rect(3, 3, 2, 2, 3, 3)]).unwrap();
        assert_eq!(a.union(&b).unwrap().frames[0].area(), 2);
        let mixed = MaskSequence::new("v", vec![BinaryMask::empty(3, 3), BinaryMask::empty(2, 3)]);
        assert!(mixed.is_err());
    }

    fn random_mask(seed: u64, w: u32, h: u32, density: f64) -> BinaryMask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bits: Vec<bool> = (0..w * h).map(|_| rng.random_bool(density)).collect();
        BinaryMask::from_bitmap(w, h, &bits).unwrap()
    }

    proptest! {
        #[test]
        fn rle_round_trip(seed in any::<u64>(), w in 1u32..24, h in 1u32..24, density in 0.0..1.0f64) {
            let m = random_mask(seed, w, h, density);
            let bits = m.to_bitmap();
            prop_assert_eq!(&BinaryMask::from_bitmap(w, h, &bits).unwrap(), &m);
            let s = m.to_coco_string();
            prop_assert_eq!(&BinaryMask::from_coco_string(w, h, &s).unwrap(), &m);
            prop_assert_eq!(m.counts().iter().map(|&c| c as u64).sum::<u64>(), (w * h) as u64);
        }

        #[test]
        fn mask_iou_symmetric_bounded(s1 in any::<u64>(), s2 in any::<u64>(), w in 1u32..16, h in 1u32..16) {
            let a = random_mask(s1, w, h, 0.4);
            let b = random_mask(s2, w, h, 0.4);
            let ab = mask_iou(&a, &b).unwrap();
            prop_assert_eq!(ab, mask_iou(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn translate_inverse_without_clipping(x0 in 4i64..8, y0 in 4i64..8, dx in -4i64..=4, dy in -4i64..=4) {
            let m = BinaryMask::from_rect(16, 16, x0, y0, x0 + 4, y0 + 3);
            prop_assert_eq!(m.translate(dx, dy).translate(-dx, -dy), m);
        }

        #[test]
        fn merge_matches_bitmap_ops(s1 in any::<u64>(), s2 in any::<u64>(), w in 1u32..12, h in 1u32..12) {
            let a = random_mask(s1, w, h, 0.5);
            let b = random_mask(s2, w, h, 0.5);
            let (ba, bb) = (a.to_bitmap(), b.to_bitmap());
            let inter = ba.iter().zip(&bb).filter(|(x, y)| **x && **y).count() as u64;
            prop_assert_eq!(a.intersection_area(&b).unwrap(), inter);
            let uni: Vec<bool> = ba.iter().zip(&bb).map(|(x, y)| *x || *y).collect();
            prop_assert_eq!(a.union(&b).unwrap(), BinaryMask::from_bitmap(w, h, &uni).unwrap());
        }
    }
}
