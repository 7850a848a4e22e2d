//! Single-channel raster containers and the Dice metric.
//!
//! All rasters are row-major. [`ImageGrid`] and [`ProbMap`] hold reals in
//! `[0, 1]`; [`BinaryMask`] holds `0` (background) or `1` (foreground).

use crate::error::{Error, Result};

fn check_dims(height: usize, width: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::EmptyRaster { height, width });
    }
    if height * width != len {
        return Err(Error::LengthMismatch {
            height,
            width,
            expected: height * width,
            actual: len,
        });
    }
    Ok(())
}

fn check_unit_interval(values: &[f64]) -> Result<()> {
    match values
        .iter()
        .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
    {
        Some(index) => Err(Error::ValueOutOfRange {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

macro_rules! raster_accessors {
    ($ty:ty, $elem:ty) => {
        impl $ty {
            pub fn height(&self) -> usize {
                self.height
            }

            pub fn width(&self) -> usize {
                self.width
            }

            pub fn dims(&self) -> (usize, usize) {
                (self.height, self.width)
            }

            pub fn len(&self) -> usize {
                self.values.len()
            }

            pub fn is_empty(&self) -> bool {
                self.values.is_empty()
            }

            pub fn values(&self) -> &[$elem] {
                &self.values
            }

            pub fn get(&self, row: usize, col: usize) -> $elem {
                self.values[row * self.width + col]
            }

            pub fn into_values(self) -> Vec<$elem> {
                self.values
            }
        }
    };
}

/// Grayscale input image with intensities normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(height, width, values.len())?;
        check_unit_interval(&values)?;
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Edge-replicating pad so both sides become multiples of `multiple`.
    pub fn pad_to_multiple(&self, multiple: usize) -> ImageGrid {
        let h = self.height.div_ceil(multiple) * multiple;
        let w = self.width.div_ceil(multiple) * multiple;
        if h == self.height && w == self.width {
            return self.clone();
        }
        let mut values = Vec::with_capacity(h * w);
        for r in 0..h {
            let sr = r.min(self.height - 1);
            for c in 0..w {
                values.push(self.get(sr, c.min(self.width - 1)));
            }
        }
        ImageGrid {
            height: h,
            width: w,
            values,
        }
    }
}

raster_accessors!(ImageGrid, f64);

/// Binary segmentation mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        check_dims(height, width, values.len())?;
        if let Some(index) = values.iter().position(|v| *v > 1) {
            return Err(Error::NonBinaryMask {
                index,
                value: values[index],
            });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0; height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(u8::from(f(r, c)));
            }
        }
        Self::new(height, width, values)
    }

    /// Edge-replicating pad, the mask counterpart of [`ImageGrid::pad_to_multiple`].
    pub fn pad_to_multiple(&self, multiple: usize) -> BinaryMask {
        let h = self.height.div_ceil(multiple) * multiple;
        let w = self.width.div_ceil(multiple) * multiple;
        let mut values = Vec::with_capacity(h * w);
        for r in 0..h {
            let sr = r.min(self.height - 1);
            for c in 0..w {
                values.push(self.get(sr, c.min(self.width - 1)));
            }
        }
        BinaryMask {
            height: h,
            width: w,
            values,
        }
    }

    pub fn foreground_count(&self) -> usize {
        self.values.iter().map(|&v| v as usize).sum()
    }

    /// Crops the top-left `height x width` window.
    pub fn crop(&self, height: usize, width: usize) -> Result<BinaryMask> {
        if height > self.height || width > self.width {
            return Err(Error::DimensionMismatch {
                left: self.dims(),
                right: (height, width),
            });
        }
        let values = (0..height)
            .flat_map(|r| {
                self.values[r * self.width..r * self.width + width]
                    .iter()
                    .copied()
            })
            .collect();
        BinaryMask::new(height, width, values)
    }

    /// The mask as a probability map with values exactly 0 or 1.
    pub fn to_prob(&self) -> ProbMap {
        ProbMap {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| v as f64).collect(),
        }
    }
}

raster_accessors!(BinaryMask, u8);

/// Per-pixel foreground probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ProbMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(height, width, values.len())?;
        check_unit_interval(&values)?;
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Crops the top-left `height x width` window.
    pub fn crop(&self, height: usize, width: usize) -> Result<ProbMap> {
        if height > self.height || width > self.width {
            return Err(Error::DimensionMismatch {
                left: self.dims(),
                right: (height, width),
            });
        }
        let values = (0..height)
            .flat_map(|r| {
                self.values[r * self.width..r * self.width + width]
                    .iter()
                    .copied()
            })
            .collect();
        ProbMap::new(height, width, values)
    }

    // Used by the segmenter, whose sigmoid outputs are in range by construction.
    pub(crate) fn from_raw(height: usize, width: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(height * width, values.len());
        debug_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        ProbMap {
            height,
            width,
            values,
        }
    }
}

raster_accessors!(ProbMap, f64);

pub(crate) fn ensure_same_dims(left: (usize, usize), right: (usize, usize)) -> Result<()> {
    if left != right {
        return Err(Error::DimensionMismatch { left, right });
    }
    Ok(())
}

/// Dice coefficient `2|A∩B| / (|A|+|B|)` over foreground pixels.
///
/// Two all-background masks agree perfectly and score 1.0.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    ensure_same_dims(a.dims(), b.dims())?;
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&x, &y) in a.values.iter().zip(&b.values) {
        inter += (x & y) as usize;
        total += (x + y) as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Thresholds a probability map: a pixel is foreground iff `p >= threshold`.
pub fn binarize(p: &ProbMap, threshold: f64) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(
            "threshold",
            format!("{threshold} is outside (0, 1)"),
        ));
    }
    Ok(BinaryMask {
        height: p.height,
        width: p.width,
        values: p.values.iter().map(|&v| u8::from(v >= threshold)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(h: usize, w: usize, v: &[u8]) -> BinaryMask {
        BinaryMask::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn dice_identity_disjoint_and_half() {
        let a = mask(2, 4, &[1, 1, 1, 1, 0, 0, 0, 0]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = mask(2, 4, &[0, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        let c = mask(2, 4, &[0, 0, 1, 1, 1, 1, 0, 0]);
        assert_eq!(dice(&a, &c).unwrap(), 0.5);
    }

    #[test]
    fn dice_empty_conventions() {
        let z = BinaryMask::zeros(3, 3).unwrap();
        assert_eq!(dice(&z, &z).unwrap(), 1.0);
        let one = mask(3, 3, &[0, 0, 0, 0, 1, 0, 0, 0, 0]);
        assert_eq!(dice(&z, &one).unwrap(), 0.0);
    }

    #[test]
    fn dice_rejects_mismatched_dims() {
        let a = BinaryMask::zeros(2, 3).unwrap();
        let b = BinaryMask::zeros(3, 2).unwrap();
        assert!(matches!(dice(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn binarize_examples() {
        let p = ProbMap::filled(2, 2, 0.7).unwrap();
        assert_eq!(binarize(&p, 0.5).unwrap().values(), &[1, 1, 1, 1]);
        let p = ProbMap::filled(2, 2, 0.3).unwrap();
        assert_eq!(binarize(&p, 0.5).unwrap().values(), &[0, 0, 0, 0]);
        let p = ProbMap::new(1, 2, vec![0.4, 0.6]).unwrap();
        assert_eq!(binarize(&p, 0.5).unwrap().values(), &[0, 1]);
        assert_eq!(
            binarize(&ProbMap::filled(1, 1, 0.5).unwrap(), 0.5)
                .unwrap()
                .values(),
            &[1]
        );
    }

    #[test]
    fn binarize_rejects_bad_threshold() {
        let p = ProbMap::filled(1, 1, 0.5).unwrap();
        for t in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(binarize(&p, t).is_err(), "threshold {t}");
        }
    }

    #[test]
    fn constructors_validate() {
        assert!(ImageGrid::new(0, 3, vec![]).is_err());
        assert!(ImageGrid::new(2, 2, vec![0.0; 3]).is_err());
        assert!(ImageGrid::new(1, 2, vec![0.0, 1.1]).is_err());
        assert!(ProbMap::new(1, 1, vec![f64::NAN]).is_err());
        assert!(BinaryMask::new(1, 2, vec![0, 2]).is_err());
    }

    #[test]
    fn pad_replicates_edges_and_crop_inverts() {
        let img = ImageGrid::new(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let padded = img.pad_to_multiple(4);
        assert_eq!(padded.dims(), (4, 4));
        assert_eq!(padded.get(3, 3), 0.6);
        assert_eq!(padded.get(0, 3), 0.3);
        assert_eq!(padded.get(3, 0), 0.4);
        let m = BinaryMask::from_fn(4, 4, |r, c| r == c).unwrap();
        assert_eq!(m.crop(2, 3).unwrap().values(), &[1, 0, 0, 0, 1, 0]);
    }

    fn arb_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
        (1usize..8, 1usize..8).prop_flat_map(|(h, w)| {
            (
                proptest::collection::vec(0u8..2, h * w),
                proptest::collection::vec(0u8..2, h * w),
            )
                .prop_map(move |(a, b)| (mask(h, w, &a), mask(h, w, &b)))
        })
    }

    proptest! {
        #[test]
        fn dice_is_symmetric_and_bounded((a, b) in arb_pair()) {
            let ab = dice(&a, &b).unwrap();
            prop_assert_eq!(ab, dice(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
        }
    }
}
