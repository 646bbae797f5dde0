//! Image representation and the preprocessing the registration stage consumes.
//!
//! Everything here is a pure function over immutable images: polar scan
//! rendering, area downsampling, spectral high-pass filtering and spatial
//! rotation. Scan intensities are normalized to `[0, 1]` at ingestion;
//! derived images (filtered output, spectra) may leave that range but must
//! stay finite.

use crate::error::{Error, Result};
use crate::spectral;
use serde::{Deserialize, Serialize};

/// Dense 2D grayscale intensity grid with physical metadata.
///
/// `meters_per_pixel` is 0 for non-spatial images (e.g. a magnitude
/// spectrum). Pixels are row-major, pixel centers at integer coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    meters_per_pixel: f64,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>, meters_per_pixel: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "pixel count {} does not match {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        if !pixels.iter().all(|p| p.is_finite()) {
            return Err(Error::invalid("image contains non-finite intensities"));
        }
        if !meters_per_pixel.is_finite() || meters_per_pixel < 0.0 {
            return Err(Error::invalid("meters_per_pixel must be finite and non-negative"));
        }
        Ok(Image {
            width,
            height,
            meters_per_pixel,
            pixels,
        })
    }

    pub fn zeros(width: usize, height: usize, meters_per_pixel: f64) -> Self {
        Image::new(width, height, vec![0.0; width * height], meters_per_pixel)
            .expect("zero image is always valid")
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        meters_per_pixel: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Image::new(width, height, pixels, meters_per_pixel)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn meters_per_pixel(&self) -> f64 {
        self.meters_per_pixel
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Pixel coordinate of the image center. This is the fftshift DC bin
    /// (`n/2`), shared by the polar warp and the spatial rotation so the
    /// two stages agree on the rotation center.
    pub fn center(&self) -> (f64, f64) {
        ((self.width / 2) as f64, (self.height / 2) as f64)
    }

    /// Bilinear sample at continuous pixel coordinates; out-of-bounds
    /// neighborhoods contribute 0.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let x0 = x0 as i64;
        let y0 = y0 as i64;
        let mut acc = 0.0;
        for (dx, dy, w) in [
            (0i64, 0i64, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ] {
            let sx = x0 + dx;
            let sy = y0 + dy;
            if sx >= 0 && sy >= 0 && (sx as usize) < self.width && (sy as usize) < self.height {
                acc += w * self.get(sx as usize, sy as usize);
            }
        }
        acc
    }

    /// Nearest-neighbor sample; out of bounds is 0.
    pub fn sample_nearest(&self, x: f64, y: f64) -> f64 {
        let sx = x.round() as i64;
        let sy = y.round() as i64;
        if sx >= 0 && sy >= 0 && (sx as usize) < self.width && (sy as usize) < self.height {
            self.get(sx as usize, sy as usize)
        } else {
            0.0
        }
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Scales every pixel; used by tests and the synthetic generator.
    pub fn scaled(&self, s: f64) -> Image {
        let pixels = self.pixels.iter().map(|p| p * s).collect();
        Image::new(self.width, self.height, pixels, self.meters_per_pixel)
            .expect("scaling a valid image by a finite factor stays valid")
    }
}

/// Native azimuth/range storage format of scanning-radar datasets.
#[derive(Debug, Clone)]
pub struct PolarScan {
    /// Beam angles in radians over [0, 2π), strictly increasing.
    pub azimuths: Vec<f64>,
    pub ranges_per_beam: usize,
    /// Azimuth-major intensity grid in [0, 1].
    pub intensities: Vec<f64>,
    /// Meters per range bin.
    pub range_resolution: f64,
    /// Seconds.
    pub timestamp: f64,
}

impl PolarScan {
    pub fn validate(&self) -> Result<()> {
        if self.azimuths.is_empty() || self.ranges_per_beam == 0 {
            return Err(Error::invalid("empty polar scan"));
        }
        if self.intensities.len() != self.azimuths.len() * self.ranges_per_beam {
            return Err(Error::invalid("polar scan grid dimensions inconsistent"));
        }
        if !self.azimuths.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("azimuths must be strictly increasing"));
        }
        if self.azimuths[0] < 0.0 || *self.azimuths.last().unwrap() >= std::f64::consts::TAU {
            return Err(Error::invalid("azimuths must lie in [0, 2π)"));
        }
        if self.range_resolution <= 0.0 {
            return Err(Error::invalid("range resolution must be positive"));
        }
        Ok(())
    }

    pub fn max_range(&self) -> f64 {
        self.ranges_per_beam as f64 * self.range_resolution
    }

    #[inline]
    fn intensity(&self, beam: usize, bin: usize) -> f64 {
        self.intensities[beam * self.ranges_per_beam + bin]
    }

    /// Sample the polar grid at a continuous (azimuth, range) position.
    /// The azimuth axis wraps; range bins are centered at `(i + 0.5)·res`.
    fn sample(&self, phi: f64, range_m: f64, interp: PolarInterp) -> f64 {
        let n = self.azimuths.len();
        let rc = range_m / self.range_resolution - 0.5;
        let first = self.azimuths[0];
        let last = *self.azimuths.last().unwrap();
        // Fractional beam index: find the wedge containing phi. Angles
        // outside [first, last] fall in the wrap wedge last -> first + 2π.
        let beam = if phi < first || phi > last {
            let span = first + std::f64::consts::TAU - last;
            let offset = if phi >= last { phi - last } else { phi + std::f64::consts::TAU - last };
            (n - 1) as f64 + offset / span
        } else {
            match self.azimuths.binary_search_by(|a| a.partial_cmp(&phi).unwrap()) {
                Ok(i) => i as f64,
                Err(i) => {
                    let lo = self.azimuths[i - 1];
                    let hi = self.azimuths[i];
                    (i - 1) as f64 + (phi - lo) / (hi - lo)
                }
            }
        };
        match interp {
            PolarInterp::Nearest => {
                let b = (beam.round() as usize) % n;
                let r = rc.round();
                if r < 0.0 || r as usize >= self.ranges_per_beam {
                    0.0
                } else {
                    self.intensity(b, r as usize)
                }
            }
            PolarInterp::Bilinear => {
                let b0 = beam.floor();
                let fb = beam - b0;
                let b0 = (b0 as usize) % n;
                let b1 = (b0 + 1) % n;
                let r0 = rc.floor();
                let fr = rc - r0;
                let mut acc = 0.0;
                for (bi, wb) in [(b0, 1.0 - fb), (b1, fb)] {
                    for (ri, wr) in [(r0, 1.0 - fr), (r0 + 1.0, fr)] {
                        if ri >= 0.0 && (ri as usize) < self.ranges_per_beam {
                            acc += wb * wr * self.intensity(bi, ri as usize);
                        }
                    }
                }
                acc
            }
        }
    }
}

/// Resampling mode for polar scan rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarInterp {
    Bilinear,
    Nearest,
}

impl Default for PolarInterp {
    fn default() -> Self {
        PolarInterp::Bilinear
    }
}

/// Renders an azimuth/range scan onto a Cartesian grid with the sensor at
/// the image center, +x right and +y up. Pixels beyond the maximum range
/// are 0.
pub fn polar_to_cartesian(scan: &PolarScan, out_size: usize, meters_per_pixel: f64) -> Result<Image> {
    polar_to_cartesian_with(scan, out_size, meters_per_pixel, PolarInterp::Bilinear)
}

pub fn polar_to_cartesian_with(
    scan: &PolarScan,
    out_size: usize,
    meters_per_pixel: f64,
    interp: PolarInterp,
) -> Result<Image> {
    if out_size == 0 {
        return Err(Error::invalid("out_size must be positive"));
    }
    if !(meters_per_pixel > 0.0) {
        return Err(Error::invalid("meters_per_pixel must be positive"));
    }
    scan.validate()?;
    let c = (out_size / 2) as f64;
    let max_range = scan.max_range();
    Image::from_fn(out_size, out_size, meters_per_pixel, |px, py| {
        let bx = (px as f64 - c) * meters_per_pixel;
        let by = (c - py as f64) * meters_per_pixel;
        let r = (bx * bx + by * by).sqrt();
        if r > max_range {
            return 0.0;
        }
        let mut phi = by.atan2(bx);
        if phi < 0.0 {
            phi += std::f64::consts::TAU;
        }
        scan.sample(phi, r, interp)
    })
}

/// Area-averaged downsampling. Target dimensions must not exceed the
/// source; `meters_per_pixel` is rescaled by the source/target ratio.
pub fn downsample(img: &Image, target_w: usize, target_h: usize) -> Result<Image> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::invalid("target dimensions must be positive"));
    }
    if target_w > img.width() || target_h > img.height() {
        return Err(Error::invalid(format!(
            "upscaling request: {}x{} -> {}x{}",
            img.width(),
            img.height(),
            target_w,
            target_h
        )));
    }
    let sx = img.width() as f64 / target_w as f64;
    let sy = img.height() as f64 / target_h as f64;
    let mpp = img.meters_per_pixel() * sx;
    Image::from_fn(target_w, target_h, mpp, |tx, ty| {
        let x0 = tx as f64 * sx;
        let x1 = (tx + 1) as f64 * sx;
        let y0 = ty as f64 * sy;
        let y1 = (ty + 1) as f64 * sy;
        let mut acc = 0.0;
        let mut y = y0.floor() as usize;
        while (y as f64) < y1 {
            let wy = (y1.min((y + 1) as f64) - y0.max(y as f64)).max(0.0);
            let mut x = x0.floor() as usize;
            while (x as f64) < x1 {
                let wx = (x1.min((x + 1) as f64) - x0.max(x as f64)).max(0.0);
                acc += wx * wy * img.get(x.min(img.width() - 1), y.min(img.height() - 1));
                x += 1;
            }
            y += 1;
        }
        acc / (sx * sy)
    })
}

/// Spectral emphasis window used as the high-pass filter: a real,
/// non-negative gain over normalized frequency that vanishes at DC and
/// rises radially.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HpfProfile {
    /// `(1 - X)(2 - X)` with `X = cos(π ξx) cos(π ξy)`: zero at DC,
    /// reaching 6 at the Nyquist corners.
    CosineProduct,
    /// `sin²(π ρ)` on the normalized radius clamped to 1/2.
    RadialSine,
}

impl Default for HpfProfile {
    fn default() -> Self {
        HpfProfile::CosineProduct
    }
}

impl HpfProfile {
    /// Gain at normalized frequency (cycles/sample, each axis in
    /// (-0.5, 0.5]).
    pub fn gain(&self, xi_x: f64, xi_y: f64) -> f64 {
        match self {
            HpfProfile::CosineProduct => {
                let x = (std::f64::consts::PI * xi_x).cos() * (std::f64::consts::PI * xi_y).cos();
                (1.0 - x) * (2.0 - x)
            }
            HpfProfile::RadialSine => {
                let rho = (xi_x * xi_x + xi_y * xi_y).sqrt().min(0.5);
                let s = (std::f64::consts::PI * rho).sin();
                s * s
            }
        }
    }
}

/// High-pass filters an image by weighting its 2D spectrum with the
/// profile gain and transforming back. Removes the DC component and
/// amplifies edge energy; output keeps dimensions and metadata but is no
/// longer confined to [0, 1].
pub fn high_pass_filter(img: &Image) -> Result<Image> {
    high_pass_filter_with(img, HpfProfile::default())
}

pub fn high_pass_filter_with(img: &Image, profile: HpfProfile) -> Result<Image> {
    let w = img.width();
    let h = img.height();
    let mut spec = spectral::forward_real(img.pixels(), w, h);
    for v in 0..h {
        let fy = spectral::bin_frequency(v, h);
        for u in 0..w {
            let fx = spectral::bin_frequency(u, w);
            spec[v * w + u] *= profile.gain(fx, fy);
        }
    }
    spectral::fft2d(&mut spec, w, h, true);
    let pixels = spec.iter().map(|c| c.re).collect();
    Image::new(w, h, pixels, img.meters_per_pixel())
}

/// Rotates image content by `angle` radians about the image center
/// (positive from +x toward +y in pixel axes), bilinear interpolation,
/// out-of-bounds samples 0. Dimensions and metadata are preserved.
pub fn rotate_image(img: &Image, angle: f64) -> Image {
    assert!(angle.is_finite(), "rotation angle must be finite");
    if angle == 0.0 {
        return img.clone();
    }
    let (cx, cy) = img.center();
    let (sin, cos) = angle.sin_cos();
    Image::from_fn(img.width(), img.height(), img.meters_per_pixel(), |x, y| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        // Inverse mapping: sample the source at R(-angle) * offset.
        let sx = cx + cos * dx + sin * dy;
        let sy = cy - sin * dx + cos * dy;
        img.sample_bilinear(sx, sy)
    })
    .expect("rotation of a valid image is valid")
}
