//! Keypoint anchors and the fixed-pose local descriptor.
//!
//! Keypoints are not detected; they are anchored either on Canny edge pixels
//! (inter-class mode) or on a dense grid over the foreground (intra-class
//! mode). Every keypoint is described by the classic 4x4-cell, 8-orientation
//! gradient histogram at one fixed scale and without orientation
//! normalization, so the descriptor is deliberately not rotation- or
//! scale-invariant.

use crate::edge::{self, EdgeMap, GradientField};
use crate::error::{Error, Result};
use crate::imgio::{GrayImage, Mask};
use crate::scalar::Real;

/// Descriptor dimensionality: 4x4 spatial cells times 8 orientation bins.
pub const DESCRIPTOR_LEN: usize = 128;

/// Half of the 16x16 descriptor window; anchors must keep this margin from
/// every image border.
pub const PATCH_RADIUS: usize = 8;

const GRID: usize = 4;
const CELL: usize = 4;
const ORI_BINS: usize = 8;

/// Pixel location a descriptor is computed at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Keypoint {
    pub x: usize,
    pub y: usize,
}

/// 128-dimensional unit-norm gradient histogram.
///
/// Components are non-negative and at most 1; all-zero descriptors are never
/// emitted (the keypoint is dropped instead).
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor<F> {
    values: [F; DESCRIPTOR_LEN],
}

impl<F: Real> Descriptor<F> {
    /// Panics if the slice is not unit-length 128; intended for tests and
    /// deserialization, which validate beforehand.
    pub fn from_values(values: &[F]) -> Self {
        let mut v = [F::zero(); DESCRIPTOR_LEN];
        v.copy_from_slice(values);
        Descriptor { values: v }
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn norm(&self) -> F {
        self.values
            .iter()
            .fold(F::zero(), |a, &v| a + v * v)
            .sqrt()
    }
}

/// Anchor selection and descriptor parameters for one pipeline run.
///
/// `canny_low` / `canny_high` are fractions of the image's maximum gradient
/// magnitude, so thresholds adapt to contrast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureParams<F> {
    pub sigma: F,
    pub canny_low: F,
    pub canny_high: F,
    /// Dense-anchor grid step for intra mode; 1 uses every foreground pixel.
    pub stride: usize,
}

impl<F: Real> Default for FeatureParams<F> {
    fn default() -> Self {
        FeatureParams {
            sigma: F::from_f64(1.4).unwrap(),
            canny_low: F::from_f64(0.1).unwrap(),
            canny_high: F::from_f64(0.3).unwrap(),
            stride: 2,
        }
    }
}

/// Which anchor set feeds the descriptor stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractMode {
    /// Canny edge pixels on the foreground.
    Inter,
    /// Dense foreground grid.
    Intra,
}

#[inline]
fn within_margin(x: usize, y: usize, width: usize, height: usize) -> bool {
    x >= PATCH_RADIUS && y >= PATCH_RADIUS && x + PATCH_RADIUS < width && y + PATCH_RADIUS < height
}

/// Edge pixels that are foreground and keep the window margin, row-major.
pub fn edge_anchors(edges: &EdgeMap, mask: &Mask) -> Result<Vec<Keypoint>> {
    if edges.width != mask.width() || edges.height != mask.height() {
        return Err(Error::DimensionMismatch(format!(
            "edges {}x{}, mask {}x{}",
            edges.width,
            edges.height,
            mask.width(),
            mask.height()
        )));
    }
    let mut out = Vec::new();
    for y in 0..edges.height {
        for x in 0..edges.width {
            if edges.get(x, y) && mask.get(x, y) && within_margin(x, y, edges.width, edges.height)
            {
                out.push(Keypoint { x, y });
            }
        }
    }
    Ok(out)
}

/// Foreground pixels on the `stride` grid (`x % stride == 0` and
/// `y % stride == 0`) that keep the window margin, row-major. Stride 1 uses
/// every foreground pixel.
pub fn dense_anchors(mask: &Mask, stride: usize) -> Vec<Keypoint> {
    assert!(stride >= 1, "stride must be >= 1");
    let mut out = Vec::new();
    for y in 0..mask.height() {
        if y % stride != 0 {
            continue;
        }
        for x in 0..mask.width() {
            if x % stride == 0 && mask.get(x, y) && within_margin(x, y, mask.width(), mask.height())
            {
                out.push(Keypoint { x, y });
            }
        }
    }
    out
}

/// Computes the descriptor at `kp` from a precomputed gradient field.
///
/// The 16x16 window covers offsets [-8, 8) in both axes, split into a 4x4
/// grid of 4x4 cells. Each pixel votes its gradient magnitude, weighted by a
/// Gaussian of sigma 8 centered on the keypoint, into 8 orientation bins with
/// linear interpolation between adjacent bins. There is no spatial
/// interpolation, no window rotation and no scale selection. The vector is
/// L2-normalized, clamped at 0.2 per component, and renormalized.
///
/// Returns `None` when every gradient in the window is zero. Panics if the
/// window leaves the image; anchors from [`edge_anchors`] / [`dense_anchors`]
/// always satisfy the margin.
pub fn describe<F: Real>(grads: &GradientField<F>, kp: Keypoint) -> Option<Descriptor<F>> {
    assert!(
        within_margin(kp.x, kp.y, grads.width, grads.height),
        "keypoint ({}, {}) too close to the border of a {}x{} field",
        kp.x,
        kp.y,
        grads.width,
        grads.height
    );
    let r = PATCH_RADIUS as isize;
    let two_pi = F::from_f64(std::f64::consts::TAU).unwrap();
    let bins = F::from_usize(ORI_BINS).unwrap();
    // 2 * sigma^2 with sigma = 8.
    let gauss_denom = F::from_f64(128.0).unwrap();

    let mut acc = [F::zero(); DESCRIPTOR_LEN];
    for dy in -r..r {
        for dx in -r..r {
            let x = (kp.x as isize + dx) as usize;
            let y = (kp.y as isize + dy) as usize;
            let mag = grads.magnitude_at(x, y);
            if mag == F::zero() {
                continue;
            }
            let d2 = F::from_isize(dx * dx + dy * dy).unwrap();
            let weight = (-d2 / gauss_denom).exp();

            let mut theta = grads.orientation_at(x, y);
            if theta < F::zero() {
                theta = theta + two_pi;
            }
            let b = theta / two_pi * bins;
            let b_floor = b.floor();
            let frac = b - b_floor;
            let bin0 = (b_floor.to_usize().unwrap()) % ORI_BINS;
            let bin1 = (bin0 + 1) % ORI_BINS;

            let cell_x = ((dx + r) as usize) / CELL;
            let cell_y = ((dy + r) as usize) / CELL;
            let base = (cell_y * GRID + cell_x) * ORI_BINS;
            let vote = weight * mag;
            acc[base + bin0] = acc[base + bin0] + vote * (F::one() - frac);
            acc[base + bin1] = acc[base + bin1] + vote * frac;
        }
    }

    let norm = acc.iter().fold(F::zero(), |a, &v| a + v * v).sqrt();
    if norm == F::zero() {
        return None;
    }
    let clamp = F::from_f64(0.2).unwrap();
    for v in &mut acc {
        *v = (*v / norm).min(clamp);
    }
    let norm2 = acc.iter().fold(F::zero(), |a, &v| a + v * v).sqrt();
    for v in &mut acc {
        *v = *v / norm2;
    }
    Some(Descriptor { values: acc })
}

/// Runs the full feature stage for one image: blur, gradients, anchors
/// (Canny edges in inter mode, dense grid in intra mode), descriptors.
///
/// Keypoints whose window has zero gradient everywhere are skipped. The
/// output order is the row-major anchor order, so two runs on identical
/// inputs produce identical lists.
pub fn extract<F: Real>(
    image: &GrayImage,
    mask: &Mask,
    mode: ExtractMode,
    params: &FeatureParams<F>,
) -> Result<Vec<(Keypoint, Descriptor<F>)>> {
    if image.width() != mask.width() || image.height() != mask.height() {
        return Err(Error::DimensionMismatch(format!(
            "image {}x{}, mask {}x{}",
            image.width(),
            image.height(),
            mask.width(),
            mask.height()
        )));
    }
    if image.width() < 3 || image.height() < 3 {
        return Err(Error::ImageTooSmall {
            width: image.width(),
            height: image.height(),
        });
    }
    let blurred = edge::gaussian_blur(image, params.sigma)?;
    let grads = edge::sobel_gradients(&blurred)?;
    let anchors = match mode {
        ExtractMode::Inter => {
            let edges = edge::canny_relative(&grads, params.canny_low, params.canny_high)?;
            edge_anchors(&edges, mask)?
        }
        ExtractMode::Intra => dense_anchors(mask, params.stride),
    };
    Ok(anchors
        .into_iter()
        .filter_map(|kp| describe(&grads, kp).map(|d| (kp, d)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgio::full_mask;

    fn gradient_field_of(img: &GrayImage, sigma: f64) -> GradientField<f64> {
        edge::sobel_gradients(&edge::gaussian_blur(img, sigma).unwrap()).unwrap()
    }

    fn random_image(w: usize, h: usize, seed: u64) -> GrayImage {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        GrayImage::new(w, h, (0..w * h).map(|_| rng.random()).collect())
    }

    /// Hollow rectangle outline on black, handy as an edge-rich pattern.
    fn rectangle_outline(w: usize, h: usize) -> GrayImage {
        let mut data = vec![0u8; w * h];
        let (x0, y0, x1, y1) = (w / 4, h / 4, 3 * w / 4, 3 * h / 4);
        for x in x0..=x1 {
            data[y0 * w + x] = 220;
            data[y1 * w + x] = 220;
        }
        for y in y0..=y1 {
            data[y * w + x0] = 220;
            data[y * w + x1] = 220;
        }
        GrayImage::new(w, h, data)
    }

    #[test]
    fn empty_edge_map_gives_no_anchors() {
        let edges = EdgeMap {
            width: 32,
            height: 32,
            data: vec![false; 32 * 32],
        };
        let mask = Mask::new(32, 32, vec![true; 32 * 32]);
        assert!(edge_anchors(&edges, &mask).unwrap().is_empty());
    }

    #[test]
    fn single_edge_pixel_anchors_once() {
        let mut data = vec![false; 64 * 64];
        data[16 * 64 + 16] = true;
        let edges = EdgeMap {
            width: 64,
            height: 64,
            data,
        };
        let mask = Mask::new(64, 64, vec![true; 64 * 64]);
        assert_eq!(
            edge_anchors(&edges, &mask).unwrap(),
            vec![Keypoint { x: 16, y: 16 }]
        );
    }

    #[test]
    fn edge_pixel_inside_border_margin_is_excluded() {
        let mut data = vec![false; 64 * 64];
        data[3 * 64 + 3] = true;
        let edges = EdgeMap {
            width: 64,
            height: 64,
            data,
        };
        let mask = Mask::new(64, 64, vec![true; 64 * 64]);
        assert!(edge_anchors(&edges, &mask).unwrap().is_empty());
    }

    #[test]
    fn edge_anchor_dimension_mismatch_errors() {
        let edges = EdgeMap {
            width: 8,
            height: 8,
            data: vec![false; 64],
        };
        let mask = Mask::new(9, 8, vec![true; 72]);
        assert!(edge_anchors(&edges, &mask).is_err());
    }

    #[test]
    fn dense_anchor_counts_match_grid_arithmetic() {
        let mask = Mask::new(64, 64, vec![true; 64 * 64]);
        assert_eq!(dense_anchors(&mask, 1).len(), 48 * 48);
        assert_eq!(dense_anchors(&mask, 4).len(), 12 * 12);
        let empty = Mask::new(64, 64, vec![false; 64 * 64]);
        assert!(dense_anchors(&empty, 1).is_empty());
    }

    #[test]
    fn uniform_window_yields_no_descriptor() {
        let img = GrayImage::new(32, 32, vec![130; 32 * 32]);
        let grads = gradient_field_of(&img, 1.0);
        assert!(describe(&grads, Keypoint { x: 16, y: 16 }).is_none());
    }

    #[test]
    fn descriptors_are_unit_norm_with_components_in_range() {
        let img = random_image(64, 64, 5);
        let grads = gradient_field_of(&img, 1.0);
        for (x, y) in [(8, 8), (20, 33), (55, 55), (31, 9)] {
            let d = describe(&grads, Keypoint { x, y }).unwrap();
            assert!((d.norm() - 1.0).abs() < 1e-6);
            assert!(d.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn integer_translation_shifts_descriptors_exactly() {
        let (dx, dy) = (5usize, 3usize);
        let base = random_image(64, 64, 42);
        // shifted(x, y) = base(x - dx, y - dy); out-of-range stays 0.
        let mut shifted_data = vec![0u8; 64 * 64];
        for y in dy..64 {
            for x in dx..64 {
                shifted_data[y * 64 + x] = base.get(x - dx, y - dy);
            }
        }
        let shifted = GrayImage::new(64, 64, shifted_data);
        let g0 = gradient_field_of(&base, 1.0);
        let g1 = gradient_field_of(&shifted, 1.0);
        // Keep the window plus blur/Sobel support inside the copied region.
        let kp = Keypoint { x: 24, y: 24 };
        let kp_shifted = Keypoint {
            x: kp.x + dx,
            y: kp.y + dy,
        };
        let d0 = describe(&g0, kp).unwrap();
        let d1 = describe(&g1, kp_shifted).unwrap();
        for (a, b) in d0.values().iter().zip(d1.values()) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn rotating_the_image_changes_the_descriptor() {
        // An L-shaped corner: descriptors are intentionally not
        // rotation-invariant because the window is never rotated.
        let mut data = vec![0u8; 48 * 48];
        for y in 20..28 {
            for x in 20..40 {
                data[y * 48 + x] = 230;
            }
        }
        for y in 20..40 {
            for x in 20..26 {
                data[y * 48 + x] = 230;
            }
        }
        let img = GrayImage::new(48, 48, data);
        // Rotate 90 degrees clockwise: (x, y) -> (h - 1 - y, x).
        let rotated = GrayImage::new(
            48,
            48,
            (0..48 * 48)
                .map(|i| {
                    let (x, y) = (i % 48, i / 48);
                    img.get(y, 47 - x)
                })
                .collect(),
        );
        let g0 = gradient_field_of(&img, 1.0);
        let g1 = gradient_field_of(&rotated, 1.0);
        let kp = Keypoint { x: 22, y: 22 };
        let rotated_kp = Keypoint { x: 47 - 22, y: 22 };
        let d0 = describe(&g0, kp).unwrap();
        let d1 = describe(&g1, rotated_kp).unwrap();
        let dist: f64 = d0
            .values()
            .iter()
            .zip(d1.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(dist > 0.1, "rotation barely changed the descriptor: {dist}");
    }

    #[test]
    fn blank_image_extracts_nothing_in_either_mode() {
        let img = GrayImage::new(48, 48, vec![90; 48 * 48]);
        let mask = full_mask(&img);
        let params = FeatureParams::<f64>::default();
        assert!(extract(&img, &mask, ExtractMode::Inter, &params)
            .unwrap()
            .is_empty());
        assert!(extract(&img, &mask, ExtractMode::Intra, &params)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn inter_descriptor_count_tracks_edge_anchors() {
        let img = rectangle_outline(64, 64);
        let mask = full_mask(&img);
        let params = FeatureParams::<f64>::default();
        let descs = extract(&img, &mask, ExtractMode::Inter, &params).unwrap();
        // Count anchors through the edge module on the same inputs.
        let grads = gradient_field_of(&img, 1.4);
        let edges = edge::canny_relative(&grads, 0.1, 0.3).unwrap();
        let anchors = edge_anchors(&edges, &mask).unwrap();
        let zero_drops = anchors
            .iter()
            .filter(|&&kp| describe(&grads, kp).is_none())
            .count();
        assert!(!descs.is_empty());
        assert_eq!(descs.len(), anchors.len() - zero_drops);
    }

    #[test]
    fn intra_stride_one_yields_more_descriptors_than_inter() {
        let img = rectangle_outline(64, 64);
        let mask = full_mask(&img);
        let params = FeatureParams::<f64> {
            stride: 1,
            ..Default::default()
        };
        let inter = extract(&img, &mask, ExtractMode::Inter, &params).unwrap();
        let intra = extract(&img, &mask, ExtractMode::Intra, &params).unwrap();
        assert!(intra.len() > inter.len(), "{} <= {}", intra.len(), inter.len());
    }

    #[test]
    fn extract_is_deterministic() {
        let img = random_image(48, 40, 21);
        let mask = full_mask(&img);
        let params = FeatureParams::<f64>::default();
        let a = extract(&img, &mask, ExtractMode::Intra, &params).unwrap();
        let b = extract(&img, &mask, ExtractMode::Intra, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn extract_works_in_f32_too() {
        let img = rectangle_outline(64, 64);
        let mask = full_mask(&img);
        let params = FeatureParams::<f32>::default();
        let descs = extract(&img, &mask, ExtractMode::Inter, &params).unwrap();
        assert!(!descs.is_empty());
        for (_, d) in &descs {
            assert!((d.norm() - 1.0).abs() < 1e-5);
        }
    }
}
