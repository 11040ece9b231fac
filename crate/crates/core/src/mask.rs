//! Binary masks, pixel boxes and per-instance annotations.
//!
//! Masks are stored row-major as packed 64-bit words. Bits past
//! `width * height` in the last word are always zero, so word-wise popcounts
//! never need a tail fix-up.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    words: Vec<u64>,
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BinaryMask {}x{} ({} set)", self.width, self.height, self.count())?;
        if self.width * self.height <= 4096 {
            for row in 0..self.height {
                let line: String = (0..self.width)
                    .map(|col| if self.get(row, col) { '#' } else { '.' })
                    .collect();
                writeln!(f, "  {line}")?;
            }
        }
        Ok(())
    }
}

impl BinaryMask {
    /// An all-zero mask.
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidMask(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(Self {
            width,
            height,
            words: vec![0; (width * height).div_ceil(64)],
        })
    }

    pub fn full(width: usize, height: usize) -> Result<Self> {
        Self::from_fn(width, height, |_, _| true)
    }

    /// Builds a mask from a predicate over `(row, col)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut m = Self::new(width, height)?;
        for row in 0..height {
            for col in 0..width {
                if f(row, col) {
                    m.set(row, col, true);
                }
            }
        }
        Ok(m)
    }

    pub fn from_bools(width: usize, height: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::InvalidMask(format!(
                "expected {} bits for {width}x{height}, got {}",
                width * height,
                bits.len()
            )));
        }
        Self::from_fn(width, height, |r, c| bits[r * width + c])
    }

    /// Axis-aligned filled rectangle.
    pub fn rect(width: usize, height: usize, b: BBox) -> Result<Self> {
        Self::from_fn(width, height, |r, c| b.contains_pixel(r, c))
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        debug_assert!(row < self.height && col < self.width);
        let i = row * self.width + col;
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn get_index(&self, i: usize) -> bool {
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        debug_assert!(row < self.height && col < self.width);
        self.set_index(row * self.width + col, value);
    }

    #[inline]
    pub fn set_index(&mut self, i: usize, value: bool) {
        let bit = 1u64 << (i & 63);
        if value {
            self.words[i >> 6] |= bit;
        } else {
            self.words[i >> 6] &= !bit;
        }
    }

    /// Number of set pixels.
    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                a_width: self.width,
                a_height: self.height,
                b_width: other.width,
                b_height: other.height,
            })
        }
    }

    fn zip_words(&self, other: &BinaryMask, f: impl Fn(u64, u64) -> u64) -> Result<BinaryMask> {
        self.check_dims(other)?;
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            words: self.words.iter().zip(&other.words).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// `|self ∧ other|`.
    pub fn intersection_count(&self, other: &BinaryMask) -> Result<usize> {
        self.check_dims(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum())
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_words(other, |a, b| a & b)
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_words(other, |a, b| a | b)
    }

    /// `self ∧ ¬other`.
    pub fn and_not(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_words(other, |a, b| a & !b)
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.same_dims(other) && self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    /// Row-major iterator over set pixels as `(row, col)`.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.words.iter().enumerate().flat_map(move |(wi, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let tz = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let i = wi * 64 + tz;
                Some((i / w, i % w))
            })
        })
    }

    /// Tight bounding box, `None` for an empty mask.
    pub fn bbox(&self) -> Option<BBox> {
        let mut it = self.iter_set();
        let (r0, c0) = it.next()?;
        let (mut rmin, mut rmax, mut cmin, mut cmax) = (r0, r0, c0, c0);
        for (r, c) in it {
            rmax = rmax.max(r);
            cmin = cmin.min(c);
            cmax = cmax.max(c);
            rmin = rmin.min(r);
        }
        Some(BBox {
            x: cmin,
            y: rmin,
            w: cmax - cmin + 1,
            h: rmax - rmin + 1,
        })
    }

    /// Mean pixel-center position as `(x, y)`.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let mut n = 0usize;
        let (mut sx, mut sy) = (0.0, 0.0);
        for (r, c) in self.iter_set() {
            n += 1;
            sx += c as f64 + 0.5;
            sy += r as f64 + 0.5;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Pixels of the mask with at least one 4-neighbor unset or outside the image.
    pub fn boundary(&self) -> BinaryMask {
        let mut out = BinaryMask {
            width: self.width,
            height: self.height,
            words: vec![0; self.words.len()],
        };
        let (w, h) = (self.width, self.height);
        for (r, c) in self.iter_set() {
            let edge = r == 0
                || c == 0
                || r + 1 == h
                || c + 1 == w
                || !self.get(r - 1, c)
                || !self.get(r + 1, c)
                || !self.get(r, c - 1)
                || !self.get(r, c + 1);
            if edge {
                out.set(r, c, true);
            }
        }
        out
    }

    /// Chebyshev dilation: a pixel is set iff some set pixel lies within
    /// `radius` in both axes.
    pub fn dilate(&self, radius: usize) -> BinaryMask {
        if radius == 0 {
            return self.clone();
        }
        // Separable square structuring element: rows then columns.
        let horizontal = self.sweep(radius, true, true);
        horizontal.sweep(radius, false, true)
    }

    /// Chebyshev erosion: a pixel survives iff every pixel within `radius`
    /// is set and inside the image.
    pub fn erode(&self, radius: usize) -> BinaryMask {
        if radius == 0 {
            return self.clone();
        }
        let horizontal = self.sweep(radius, true, false);
        horizontal.sweep(radius, false, false)
    }

    /// One-axis running window. `any = true` dilates, `any = false` erodes
    /// (pixels outside the image count as unset).
    fn sweep(&self, radius: usize, along_rows: bool, any: bool) -> BinaryMask {
        let (w, h) = (self.width, self.height);
        let mut out = BinaryMask {
            width: w,
            height: h,
            words: vec![0; self.words.len()],
        };
        let (lines, len) = if along_rows { (h, w) } else { (w, h) };
        let mut prefix = vec![0usize; len + 1];
        for line in 0..lines {
            for k in 0..len {
                let v = if along_rows { self.get(line, k) } else { self.get(k, line) };
                prefix[k + 1] = prefix[k] + v as usize;
            }
            for k in 0..len {
                let lo = k.saturating_sub(radius);
                let hi = (k + radius + 1).min(len);
                let set = prefix[hi] - prefix[lo];
                let on = if any {
                    set > 0
                } else {
                    k >= radius && k + radius < len && set == 2 * radius + 1
                };
                if on {
                    if along_rows {
                        out.set(line, k, true);
                    } else {
                        out.set(k, line, true);
                    }
                }
            }
        }
        out
    }

    /// Run-length encoding in row-major order, background run first.
    pub fn to_rle(&self) -> RunLength {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0usize;
        for i in 0..self.len() {
            let v = self.get_index(i);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
        counts.push(run);
        RunLength { counts }
    }

    pub fn from_rle(width: usize, height: usize, rle: &RunLength) -> Result<Self> {
        let expected = width * height;
        let actual: usize = rle.counts.iter().sum();
        if actual != expected {
            return Err(Error::RunLengthSum { expected, actual });
        }
        let mut m = Self::new(width, height)?;
        let mut i = 0usize;
        for (k, &run) in rle.counts.iter().enumerate() {
            if k % 2 == 1 {
                for j in i..i + run {
                    m.set_index(j, true);
                }
            }
            i += run;
        }
        Ok(m)
    }

    /// Bisects the mask along a vertical (`vertical = true`) or horizontal
    /// line; the first half gets pixels strictly before `at`.
    pub fn split_at(&self, at: usize, vertical: bool) -> (BinaryMask, BinaryMask) {
        let mut a = BinaryMask::new(self.width, self.height).expect("dims already valid");
        let mut b = a.clone();
        for (r, c) in self.iter_set() {
            let coord = if vertical { c } else { r };
            if coord < at {
                a.set(r, c, true);
            } else {
                b.set(r, c, true);
            }
        }
        (a, b)
    }
}

/// `|a ∧ b|`; errors when dimensions differ.
pub fn mask_intersection_count(a: &BinaryMask, b: &BinaryMask) -> Result<usize> {
    a.intersection_count(b)
}

/// The occluded part of an object, `amodal ∧ ¬visible`.
pub fn invisible_mask(amodal: &BinaryMask, visible: &BinaryMask) -> Result<BinaryMask> {
    if !amodal.same_dims(visible) {
        return Err(Error::DimensionMismatch {
            a_width: amodal.width,
            a_height: amodal.height,
            b_width: visible.width,
            b_height: visible.height,
        });
    }
    if let Some((row, col)) = visible.and_not(amodal)?.iter_set().next() {
        return Err(Error::NotSubset { row, col });
    }
    amodal.and_not(visible)
}

pub fn boundary_mask(m: &BinaryMask) -> BinaryMask {
    m.boundary()
}

pub fn dilate(m: &BinaryMask, radius: usize) -> BinaryMask {
    m.dilate(radius)
}

pub fn rle_encode(m: &BinaryMask) -> RunLength {
    m.to_rle()
}

pub fn rle_decode(width: usize, height: usize, rle: &RunLength) -> Result<BinaryMask> {
    BinaryMask::from_rle(width, height, rle)
}

/// Alternating background/foreground run lengths, serialized as a
/// comma-separated decimal string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLength {
    pub counts: Vec<usize>,
}

impl fmt::Display for RunLength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.counts.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for RunLength {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::RunLengthParse("empty string".into()));
        }
        let counts = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::RunLengthParse(format!("`{t}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RunLength { counts })
    }
}

impl Serialize for RunLength {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RunLength {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Integer pixel rectangle. Serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 4]", into = "[usize; 4]")]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl From<[usize; 4]> for BBox {
    fn from([x, y, w, h]: [usize; 4]) -> Self {
        BBox { x, y, w, h }
    }
}

impl From<BBox> for [usize; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        BBox { x, y, w, h }
    }

    #[inline]
    pub fn right(&self) -> usize {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    #[inline]
    pub fn contains_pixel(&self, row: usize, col: usize) -> bool {
        col >= self.x && col < self.right() && row >= self.y && row < self.bottom()
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.x >= self.x && other.y >= self.y && other.right() <= self.right() && other.bottom() <= self.bottom()
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.w >= 1 && self.h >= 1 && self.right() <= width && self.bottom() <= height
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &BBox) -> BBox {
        let x = self.x.min(other.x);
        let y = self.y.min(other.y);
        BBox {
            x,
            y,
            w: self.right().max(other.right()) - x,
            h: self.bottom().max(other.bottom()) - y,
        }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }
}

/// One object instance: box, visible and amodal masks, occlusion and
/// foreground flags.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceAnnotation {
    pub bbox: BBox,
    pub visible: BinaryMask,
    pub amodal: BinaryMask,
    pub occluded: bool,
    pub class_fg: bool,
}

impl InstanceAnnotation {
    /// Ground-truth annotation: box tight on `amodal`, occluded iff any
    /// amodal pixel is hidden.
    pub fn ground_truth(visible: BinaryMask, amodal: BinaryMask) -> Result<Self> {
        let hidden = invisible_mask(&amodal, &visible)?;
        let bbox = amodal.bbox().ok_or_else(|| Error::InvalidMask("empty amodal mask".into()))?;
        Ok(Self {
            bbox,
            visible,
            amodal,
            occluded: !hidden.is_empty(),
            class_fg: true,
        })
    }

    pub fn invisible(&self) -> BinaryMask {
        self.amodal.and_not(&self.visible).expect("annotation masks share dimensions")
    }

    pub fn mask(&self, kind: MaskKind) -> BinaryMask {
        match kind {
            MaskKind::Visible => self.visible.clone(),
            MaskKind::Amodal => self.amodal.clone(),
            MaskKind::Invisible => self.invisible(),
        }
    }

    /// Checks the prediction-side invariants: `visible ⊆ amodal` and the box
    /// covers the tight box of `amodal`.
    pub fn validate(&self) -> Result<()> {
        invisible_mask(&self.amodal, &self.visible)?;
        if let Some(tight) = self.amodal.bbox() {
            if !self.bbox.contains(&tight) {
                return Err(Error::InvalidMask(format!(
                    "box {:?} does not cover amodal extent {:?}",
                    self.bbox, tight
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Visible,
    Amodal,
    Invisible,
}

impl MaskKind {
    pub const ALL: [MaskKind; 3] = [MaskKind::Visible, MaskKind::Amodal, MaskKind::Invisible];
}
