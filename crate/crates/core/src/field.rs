//! Grid containers shared by every solver: scalar and vector fields,
//! multichannel images and binary masks, plus thresholding and Dice overlap.
//!
//! All grids are row-major with `width` columns and `height` rows; index
//! `(x, y)` maps to `y * width + x`.

use crate::error::{Error, Result};

/// A 2-D grid of finite real values.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScalarField {
    /// Builds a field from row-major values. Rejects a length mismatch and
    /// any non-finite entry.
    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", width * height),
                got: format!("{} values", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ScalarField::from_vec"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Evaluates `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self {
            width,
            height,
            data,
        }
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
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub(crate) fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination of two equally sized fields.
    pub fn zip_map(&self, other: &ScalarField, mut f: impl FnMut(f64, f64) -> f64) -> Result<Self> {
        self.check_same_dims(other)?;
        Ok(Self {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn check_same_dims(&self, other: &ScalarField) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sum of absolute values (discrete L¹ norm with unit pixel area).
    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    /// L¹ distance to another field of the same size.
    pub fn l1_distance(&self, other: &ScalarField) -> f64 {
        debug_assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        debug_assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn dot(&self, other: &ScalarField) -> f64 {
        debug_assert_eq!(self.dims(), other.dims());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Projects every value onto `[lo, hi]`.
    pub fn clamp(&self, lo: f64, hi: f64) -> Self {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts a mask to a 0/1 field.
    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            width: mask.width,
            height: mask.height,
            data: mask.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// A pair of scalar fields holding the x and y components of a vector field.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub x: ScalarField,
    pub y: ScalarField,
}

impl VectorField {
    pub fn new(x: ScalarField, y: ScalarField) -> Result<Self> {
        x.check_same_dims(&y)?;
        Ok(Self { x, y })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            x: ScalarField::zeros(width, height),
            y: ScalarField::zeros(width, height),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.x.dims()
    }

    /// Pixelwise Euclidean magnitude.
    pub fn magnitude(&self) -> ScalarField {
        self.x
            .zip_map(&self.y, |a, b| a.hypot(b))
            .expect("components share dimensions")
    }

    /// Σ(|x| + |y|) over pixels.
    pub fn l1_norm(&self) -> f64 {
        self.x.l1_norm() + self.y.l1_norm()
    }

    pub fn l1_distance(&self, other: &VectorField) -> f64 {
        self.x.l1_distance(&other.x) + self.y.l1_distance(&other.y)
    }

    pub fn max_abs_diff(&self, other: &VectorField) -> f64 {
        self.x.max_abs_diff(&other.x).max(self.y.max_abs_diff(&other.y))
    }

    pub fn dot(&self, other: &VectorField) -> f64 {
        self.x.dot(&other.x) + self.y.dot(&other.y)
    }
}

/// An image with `m >= 1` channels of identical size.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiChannelField {
    channels: Vec<ScalarField>,
}

impl MultiChannelField {
    pub fn new(channels: Vec<ScalarField>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::param("channels", "at least one channel is required"))?;
        for c in &channels[1..] {
            first.check_same_dims(c)?;
        }
        Ok(Self { channels })
    }

    pub fn single(channel: ScalarField) -> Self {
        Self {
            channels: vec![channel],
        }
    }

    pub fn channels(&self) -> &[ScalarField] {
        &self.channels
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.channels[0].dims()
    }

    pub fn into_channels(self) -> Vec<ScalarField> {
        self.channels
    }

    /// Clamps every channel into `[floor, 1]`.
    pub fn clamp_floor(&self, floor: f64) -> Self {
        Self {
            channels: self.channels.iter().map(|c| c.clamp(floor, 1.0)).collect(),
        }
    }

    /// Per-pixel mean over channels.
    pub fn channel_mean(&self) -> ScalarField {
        let (w, h) = self.dims();
        let m = self.channels.len() as f64;
        let mut out = ScalarField::zeros(w, h);
        for c in &self.channels {
            for (o, v) in out.as_mut_slice().iter_mut().zip(c.as_slice()) {
                *o += v;
            }
        }
        out.as_mut_slice().iter_mut().for_each(|v| *v /= m);
        out
    }
}

/// A {0,1}-valued grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} bits", width * height),
                got: format!("{} bits", bits.len()),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Number of 4-connected components of set pixels (no wraparound).
    pub fn connected_components(&self) -> usize {
        let (w, h) = self.dims();
        let mut seen = vec![false; w * h];
        let mut stack = Vec::new();
        let mut count = 0;
        for start in 0..w * h {
            if !self.bits[start] || seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                let mut visit = |j: usize| {
                    if self.bits[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < w {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - w);
                }
                if y + 1 < h {
                    visit(i + w);
                }
            }
        }
        count
    }
}

/// Binarizes a relaxed label: a pixel is set where `phi >= eta`.
pub fn threshold(phi: &ScalarField, eta: f64) -> BinaryMask {
    BinaryMask {
        width: phi.width(),
        height: phi.height(),
        bits: phi.as_slice().iter().map(|&v| v >= eta).collect(),
    }
}

/// Dice overlap `2|a∩b| / (|a| + |b|)`; two empty masks score 1.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::dims(a.dims(), b.dims()));
    }
    let (mut inter, mut total) = (0usize, 0usize);
    for (&p, &q) in a.bits.iter().zip(&b.bits) {
        inter += (p && q) as usize;
        total += p as usize + q as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(bits: &[u8]) -> BinaryMask {
        BinaryMask::from_bits(bits.len(), 1, bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn threshold_ties_round_up() {
        let phi = ScalarField::from_vec(3, 1, vec![0.2, 0.5, 0.8]).unwrap();
        assert_eq!(threshold(&phi, 0.5), mask(&[0, 1, 1]));
        let phi = ScalarField::from_vec(2, 1, vec![0.49, 0.51]).unwrap();
        assert_eq!(threshold(&phi, 0.5), mask(&[0, 1]));
        assert_eq!(threshold(&ScalarField::zeros(4, 4), 0.5).count(), 0);
    }

    #[test]
    fn dice_cases() {
        let a = mask(&[1, 1, 0, 0]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &mask(&[0, 0, 1, 1])).unwrap(), 0.0);
        assert_eq!(dice(&mask(&[0, 0]), &mask(&[0, 0])).unwrap(), 1.0);
        // 4 px each, overlap 2 px
        let a = mask(&[1, 1, 1, 1, 0, 0]);
        let b = mask(&[0, 0, 1, 1, 1, 1]);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        assert!(dice(&a, &mask(&[1])).is_err());
    }

    #[test]
    fn from_vec_rejects_bad_input() {
        assert!(ScalarField::from_vec(2, 2, vec![0.0; 3]).is_err());
        assert!(ScalarField::from_vec(1, 1, vec![f64::NAN]).is_err());
        assert!(MultiChannelField::new(vec![]).is_err());
        assert!(MultiChannelField::new(vec![ScalarField::zeros(2, 2), ScalarField::zeros(3, 2)]).is_err());
    }

    #[test]
    fn components_are_four_connected() {
        let m = BinaryMask::from_bits(3, 3, [1, 0, 0, 0, 1, 0, 0, 0, 1].iter().map(|&b| b == 1).collect()).unwrap();
        assert_eq!(m.connected_components(), 3);
        let m = BinaryMask::from_bits(3, 2, [1, 1, 1, 0, 0, 1].iter().map(|&b| b == 1).collect()).unwrap();
        assert_eq!(m.connected_components(), 1);
    }

    proptest! {
        #[test]
        fn threshold_is_monotone_in_eta(vals in prop::collection::vec(0.0f64..1.0, 16), e1 in 0.01f64..0.99, e2 in 0.01f64..0.99) {
            let phi = ScalarField::from_vec(4, 4, vals).unwrap();
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            let a = threshold(&phi, lo);
            let b = threshold(&phi, hi);
            for (p, q) in a.bits().iter().zip(b.bits()) {
                prop_assert!(!*q || *p);
            }
        }

        #[test]
        fn dice_symmetric_and_bounded(a in prop::collection::vec(any::<bool>(), 25), b in prop::collection::vec(any::<bool>(), 25)) {
            let a = BinaryMask::from_bits(5, 5, a).unwrap();
            let b = BinaryMask::from_bits(5, 5, b).unwrap();
            let d = dice(&a, &b).unwrap();
            prop_assert_eq!(d, dice(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&d));
        }
    }
}
