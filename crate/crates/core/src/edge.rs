//! Canny edge detection: Gaussian blur, Sobel gradients, non-maximum
//! suppression and hysteresis.
//!
//! The edge pixels are not an end in themselves here; they anchor the
//! keypoints of the inter-class pipeline. The gradient field is shared with
//! descriptor extraction.

use crate::error::{Error, Result};
use crate::imgio::GrayImage;
use crate::scalar::Real;

/// Real-valued raster, row-major; the post-blur working image.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<F> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<F>,
}

impl<F: Real> Raster<F> {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> F {
        self.data[y * self.width + x]
    }

    /// Clamp-to-edge access for signed coordinates.
    #[inline]
    fn get_clamped(&self, x: isize, y: isize) -> F {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }
}

/// Per-pixel gradient magnitude and direction from Sobel responses.
///
/// `magnitude[i] = sqrt(gx^2 + gy^2)`, `orientation[i] = atan2(gy, gx)` in
/// [-pi, pi], with y pointing down.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField<F> {
    pub width: usize,
    pub height: usize,
    pub magnitude: Vec<F>,
    pub orientation: Vec<F>,
}

impl<F: Real> GradientField<F> {
    #[inline]
    pub fn magnitude_at(&self, x: usize, y: usize) -> F {
        self.magnitude[y * self.width + x]
    }

    #[inline]
    pub fn orientation_at(&self, x: usize, y: usize) -> F {
        self.orientation[y * self.width + x]
    }

    /// Largest gradient magnitude in the field; 0 for a constant image.
    pub fn max_magnitude(&self) -> F {
        self.magnitude.iter().copied().fold(F::zero(), F::max)
    }
}

/// Binary edge map; `true` pixels survived suppression and hysteresis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl EdgeMap {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Debug view: edge = 255, non-edge = 0.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::new(
            self.width,
            self.height,
            self.data.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        )
    }

    fn empty(width: usize, height: usize) -> Self {
        EdgeMap {
            width,
            height,
            data: vec![false; width * height],
        }
    }
}

/// Separable Gaussian blur with kernel radius `ceil(3 sigma)`, kernel
/// normalized to sum 1, borders clamped to the image edge.
pub fn gaussian_blur<F: Real>(image: &GrayImage, sigma: F) -> Result<Raster<F>> {
    if sigma <= F::zero() {
        return Err(Error::InvalidParam(format!(
            "sigma must be > 0, got {sigma}"
        )));
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (image.width(), image.height());

    let as_real = Raster {
        width: w,
        height: h,
        data: image
            .data()
            .iter()
            .map(|&p| F::from_u8(p).unwrap())
            .collect(),
    };

    // Horizontal pass, then vertical.
    let mut horiz = Raster {
        width: w,
        height: h,
        data: vec![F::zero(); w * h],
    };
    for y in 0..h {
        for x in 0..w {
            let mut acc = F::zero();
            for (ki, &k) in kernel.iter().enumerate() {
                let dx = ki as isize - radius;
                acc = acc + k * as_real.get_clamped(x as isize + dx, y as isize);
            }
            horiz.data[y * w + x] = acc;
        }
    }
    let mut out = Raster {
        width: w,
        height: h,
        data: vec![F::zero(); w * h],
    };
    for y in 0..h {
        for x in 0..w {
            let mut acc = F::zero();
            for (ki, &k) in kernel.iter().enumerate() {
                let dy = ki as isize - radius;
                acc = acc + k * horiz.get_clamped(x as isize, y as isize + dy);
            }
            out.data[y * w + x] = acc;
        }
    }
    Ok(out)
}

fn gaussian_kernel<F: Real>(sigma: F) -> Vec<F> {
    let radius = (F::from_f64(3.0).unwrap() * sigma).ceil().to_usize().unwrap().max(1);
    let two_sigma_sq = F::from_f64(2.0).unwrap() * sigma * sigma;
    let mut kernel: Vec<F> = (0..=2 * radius)
        .map(|i| {
            let d = F::from_isize(i as isize - radius as isize).unwrap();
            (-d * d / two_sigma_sq).exp()
        })
        .collect();
    let sum = kernel.iter().copied().fold(F::zero(), |a, b| a + b);
    for k in &mut kernel {
        *k = *k / sum;
    }
    kernel
}

/// Sobel gradients with clamp-to-edge borders.
///
/// `gx` uses `[[-1,0,1],[-2,0,2],[-1,0,1]]`, `gy` its transpose.
pub fn sobel_gradients<F: Real>(image: &Raster<F>) -> Result<GradientField<F>> {
    let (w, h) = (image.width, image.height);
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
        });
    }
    let two = F::from_f64(2.0).unwrap();
    let mut magnitude = vec![F::zero(); w * h];
    let mut orientation = vec![F::zero(); w * h];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let p = |dx: isize, dy: isize| image.get_clamped(xi + dx, yi + dy);
            let gx = p(1, -1) - p(-1, -1) + two * (p(1, 0) - p(-1, 0)) + p(1, 1) - p(-1, 1);
            let gy = p(-1, 1) - p(-1, -1) + two * (p(0, 1) - p(0, -1)) + p(1, 1) - p(1, -1);
            magnitude[y * w + x] = (gx * gx + gy * gy).sqrt();
            orientation[y * w + x] = gy.atan2(gx);
        }
    }
    Ok(GradientField {
        width: w,
        height: h,
        magnitude,
        orientation,
    })
}

/// Full Canny pass: blur, Sobel, non-maximum suppression, hysteresis.
///
/// `low` and `high` are absolute magnitude thresholds, `0 < low < high`.
/// Pixels at or above `high` seed the edge set; pixels at or above `low`
/// join it when 8-connected (transitively) to a seed. The outermost one-pixel
/// frame is never marked.
pub fn canny<F: Real>(image: &GrayImage, sigma: F, low: F, high: F) -> Result<EdgeMap> {
    let blurred = gaussian_blur(image, sigma)?;
    let grads = sobel_gradients(&blurred)?;
    canny_from_gradients(&grads, low, high)
}

/// Suppression + hysteresis on an existing gradient field.
///
/// Lets callers that already blurred the image (descriptor extraction) share
/// the work; `canny` is exactly this on its own blur.
pub fn canny_from_gradients<F: Real>(grads: &GradientField<F>, low: F, high: F) -> Result<EdgeMap> {
    if !(low > F::zero() && low < high) {
        return Err(Error::InvalidParam(format!(
            "thresholds must satisfy 0 < low < high, got low={low} high={high}"
        )));
    }
    let thinned = non_maximum_suppression(grads);
    Ok(hysteresis(grads.width, grads.height, &thinned, low, high))
}

/// Relative-threshold Canny: `low = low_frac * maxMag`, `high = high_frac *
/// maxMag`. Adapts to contrast; a constant image (zero max magnitude) yields
/// an empty map.
pub fn canny_relative<F: Real>(
    grads: &GradientField<F>,
    low_frac: F,
    high_frac: F,
) -> Result<EdgeMap> {
    if !(low_frac > F::zero() && low_frac < high_frac) {
        return Err(Error::InvalidParam(format!(
            "threshold fractions must satisfy 0 < low < high, got low={low_frac} high={high_frac}"
        )));
    }
    let max_mag = grads.max_magnitude();
    if max_mag == F::zero() {
        return Ok(EdgeMap::empty(grads.width, grads.height));
    }
    canny_from_gradients(grads, low_frac * max_mag, high_frac * max_mag)
}

/// Direction sectors for suppression: 0, 45, 90, 135 degrees (mod 180).
fn quantize_direction<F: Real>(orientation: F) -> u8 {
    let mut deg = orientation.to_f64().unwrap().to_degrees();
    if deg < 0.0 {
        deg += 180.0;
    }
    if deg >= 180.0 {
        deg -= 180.0;
    }
    if !(22.5..157.5).contains(&deg) {
        0
    } else if deg < 67.5 {
        45
    } else if deg < 112.5 {
        90
    } else {
        135
    }
}

/// Keeps a pixel only when it is a local maximum of magnitude along its
/// quantized gradient direction. Ties go to the pixel earlier in row-major
/// order (strict comparison against the earlier neighbor) so a symmetric
/// two-pixel ridge thins to one pixel deterministically.
fn non_maximum_suppression<F: Real>(grads: &GradientField<F>) -> Vec<F> {
    let (w, h) = (grads.width, grads.height);
    let mut out = vec![F::zero(); w * h];
    if w < 3 || h < 3 {
        return out;
    }
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let m = grads.magnitude_at(x, y);
            if m == F::zero() {
                continue;
            }
            // (earlier, later) in row-major order along the direction.
            let (early, late) = match quantize_direction(grads.orientation_at(x, y)) {
                0 => ((x - 1, y), (x + 1, y)),
                45 => ((x - 1, y - 1), (x + 1, y + 1)),
                90 => ((x, y - 1), (x, y + 1)),
                _ => ((x + 1, y - 1), (x - 1, y + 1)),
            };
            if m > grads.magnitude_at(early.0, early.1) && m >= grads.magnitude_at(late.0, late.1) {
                out[y * w + x] = m;
            }
        }
    }
    out
}

fn hysteresis<F: Real>(w: usize, h: usize, thinned: &[F], low: F, high: F) -> EdgeMap {
    let mut map = EdgeMap::empty(w, h);
    if w < 3 || h < 3 {
        return map;
    }
    let mut stack = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            if thinned[y * w + x] >= high && !map.data[y * w + x] {
                map.data[y * w + x] = true;
                stack.push((x, y));
                while let Some((cx, cy)) = stack.pop() {
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            if dx == 0 && dy == 0 {
                                continue;
                            }
                            let (nx, ny) = (cx as isize + dx, cy as isize + dy);
                            if nx < 1 || ny < 1 || nx >= w as isize - 1 || ny >= h as isize - 1 {
                                continue;
                            }
                            let (nx, ny) = (nx as usize, ny as usize);
                            if !map.data[ny * w + nx] && thinned[ny * w + nx] >= low {
                                map.data[ny * w + nx] = true;
                                stack.push((nx, ny));
                            }
                        }
                    }
                }
            }
        }
    }
    map
}
