//! Two-stage phase-correlation registration of consecutive radar images.
//!
//! Stage one recovers the rotation angle from polar-warped spectral
//! magnitudes: by the Fourier shift theorem the magnitude images carry no
//! translation, only the inter-frame rotation, which the polar warp turns
//! into a cyclic shift along the angular axis. Stage two corrects one image
//! for that rotation in the spatial domain and runs phase correlation again
//! to recover the translation in pixels, which is mapped to meters and,
//! together with the scan interval, converted to a velocity measurement for
//! the filter.

use crate::error::{Error, Result};
use crate::imaging::{rotate_image, HpfProfile, Image};
use crate::spectral::{self, C64};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use std::time::Instant;

/// Complex 2D frequency grid of an image.
#[derive(Debug, Clone)]
pub struct Spectrum {
    width: usize,
    height: usize,
    values: Vec<C64>,
}

impl Spectrum {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }
}

/// Signed, wrap-corrected correlation peak.
#[derive(Debug, Clone, Copy)]
pub struct CorrelationPeak {
    /// Column shift in pixels (content displacement from `a` to `b`).
    pub dx: f64,
    /// Row shift in pixels.
    pub dy: f64,
    /// Peak height of the inverse-transformed cross-power spectrum, in [0, 1].
    pub response: f64,
}

/// Output of the two-stage registration of a scan pair.
#[derive(Debug, Clone, Copy)]
pub struct RegistrationResult {
    /// Vehicle yaw change from frame k-1 to k, folded to (-π/2, π/2].
    pub theta: f64,
    /// Vehicle translation expressed in the k-1 body frame, meters.
    pub dx_m: f64,
    pub dy_m: f64,
    pub rotation_response: f64,
    pub translation_response: f64,
    /// Scan interval in seconds.
    pub dt: f64,
    /// Timestamp of the later scan (end of interval), seconds.
    pub t: f64,
}

/// Velocity measurement derived from a registration result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarVelocity {
    pub v_x: f64,
    pub v_y: f64,
    pub w_z: f64,
    /// End-of-interval scan time, seconds.
    pub timestamp: f64,
    /// min(rotation_response, translation_response); diagnostic only.
    pub quality: f64,
}

/// Knobs of the registration pipeline.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    /// Angular upsampling factor applied at the polar warp.
    pub upsample: u32,
    /// Base angular bin count before upsampling.
    pub angular_bins: usize,
    /// Radial bin count; defaults to min(width, height)/2.
    pub radial_bins: Option<usize>,
    /// High-pass filter the inputs of the rotation stage.
    pub hpf: bool,
    /// Also high-pass filter the translation stage inputs.
    pub hpf_translation: bool,
    pub hpf_profile: HpfProfile,
    /// Parabolic subpixel refinement of correlation peaks.
    pub subpixel: bool,
    /// Apodize inputs with a Hann window before the transforms.
    pub hann_window: bool,
    /// Cross-power bins below this magnitude are dropped from the
    /// normalized spectrum instead of being divided by ~0.
    pub epsilon: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            upsample: 4,
            angular_bins: 360,
            radial_bins: None,
            hpf: true,
            hpf_translation: true,
            hpf_profile: HpfProfile::default(),
            subpixel: true,
            hann_window: false,
            epsilon: 1e-12,
        }
    }
}

/// Wall-clock split of one registration, for the runtime report.
#[derive(Debug, Clone, Copy, Default)]
pub struct RegistrationTiming {
    pub rotation_ms: f64,
    pub translation_ms: f64,
}

/// Discrete 2D Fourier transform of an image. Invertible by
/// [`inverse_transform`] up to ~1e-12 round-trip error.
pub fn forward_transform(img: &Image) -> Spectrum {
    Spectrum {
        width: img.width(),
        height: img.height(),
        values: spectral::forward_real(img.pixels(), img.width(), img.height()),
    }
}

/// Inverse 2D transform; returns the real part as a non-spatial image.
pub fn inverse_transform(spec: &Spectrum) -> Image {
    let mut data = spec.values.clone();
    spectral::fft2d(&mut data, spec.width, spec.height, true);
    let pixels = data.iter().map(|c| c.re).collect();
    Image::new(spec.width, spec.height, pixels, 0.0)
        .expect("inverse transform of a finite spectrum is finite")
}

/// Per-bin complex magnitude, DC shifted to the image center,
/// log-compressed and normalized to [0, 1].
pub fn magnitude_spectrum(spec: &Spectrum) -> Image {
    magnitude_spectrum_weighted(spec, None)
}

/// Magnitude image with an optional real gain over normalized frequency
/// applied before log compression. Weighting the magnitudes by a high-pass
/// gain is exactly the magnitude spectrum of the high-pass-filtered image,
/// without the extra transform pair.
fn magnitude_spectrum_weighted(spec: &Spectrum, weight: Option<HpfProfile>) -> Image {
    let w = spec.width;
    let h = spec.height;
    let mut mags = vec![0.0f64; w * h];
    let mut max = 0.0f64;
    for sy in 0..h {
        let ry = spectral::unshift_index(sy, h);
        let fy = spectral::bin_frequency(ry, h);
        for sx in 0..w {
            let rx = spectral::unshift_index(sx, w);
            let fx = spectral::bin_frequency(rx, w);
            let mut m = spec.values[ry * w + rx].norm();
            if let Some(profile) = weight {
                m *= profile.gain(fx, fy);
            }
            let v = m.ln_1p();
            mags[sy * w + sx] = v;
            if v > max {
                max = v;
            }
        }
    }
    if max > 0.0 {
        for v in mags.iter_mut() {
            *v /= max;
        }
    }
    Image::new(w, h, mags, 0.0).expect("magnitude image is finite")
}

/// Resamples an image onto (angle, radius) axes: rows index angle over
/// [0, 2π), columns index radius from the center out to min(w, h)/2.
/// Bilinear sampling; the angular axis is periodic.
pub fn warp_polar(img: &Image, angular_bins: usize, radial_bins: usize) -> Result<Image> {
    if angular_bins == 0 || radial_bins == 0 {
        return Err(Error::invalid("polar bin counts must be positive"));
    }
    let (cx, cy) = img.center();
    let r_max = img.width().min(img.height()) as f64 / 2.0;
    let dr = r_max / radial_bins as f64;
    let da = TAU / angular_bins as f64;
    Image::from_fn(radial_bins, angular_bins, 0.0, |rx, ay| {
        let r = (rx as f64 + 0.5) * dr;
        let phi = ay as f64 * da;
        img.sample_bilinear(cx + r * phi.cos(), cy + r * phi.sin())
    })
}

fn check_not_degenerate(img: &Image) -> Result<()> {
    let peak = img.pixels().iter().fold(0.0f64, |m, p| m.max(p.abs()));
    if peak < 1e-12 {
        return Err(Error::UnusableScan("scan carries no signal".into()));
    }
    Ok(())
}

fn apply_hann(img: &Image) -> Image {
    let w = img.width();
    let h = img.height();
    let wx: Vec<f64> = (0..w)
        .map(|x| 0.5 * (1.0 - (TAU * x as f64 / (w - 1).max(1) as f64).cos()))
        .collect();
    let wy: Vec<f64> = (0..h)
        .map(|y| 0.5 * (1.0 - (TAU * y as f64 / (h - 1).max(1) as f64).cos()))
        .collect();
    Image::from_fn(w, h, img.meters_per_pixel(), |x, y| img.get(x, y) * wx[x] * wy[y])
        .expect("windowed image is finite")
}

fn parabolic_offset(prev: f64, center: f64, next: f64) -> f64 {
    let denom = prev - 2.0 * center + next;
    if denom.abs() < 1e-12 {
        return 0.0;
    }
    let d = 0.5 * (prev - next) / denom;
    if d.is_finite() && d.abs() < 1.0 {
        d
    } else {
        0.0
    }
}

/// Core of Eq.-style phase correlation on two spectra of equal dims:
/// normalized cross-power, inverse transform, wrap-corrected peak with
/// optional parabolic subpixel refinement. `weight` is an optional real
/// gain over (unshifted) bin indices applied to the cross-power before
/// normalization.
fn cross_power_peak(
    fa: &Spectrum,
    fb: &Spectrum,
    cfg: &RegistrationConfig,
    weight: Option<HpfProfile>,
) -> CorrelationPeak {
    let w = fa.width;
    let h = fa.height;
    let mut pc: Vec<C64> = Vec::with_capacity(w * h);
    for v in 0..h {
        let fy = spectral::bin_frequency(v, h);
        for u in 0..w {
            let mut cross = fb.values[v * w + u] * fa.values[v * w + u].conj();
            if let Some(profile) = weight {
                let fx = spectral::bin_frequency(u, w);
                // Filtering both inputs scales the cross-power by gain²;
                // the normalization below removes everything but the bins
                // the gain pushes under the epsilon guard.
                let g = profile.gain(fx, fy);
                cross *= g * g;
            }
            let mag = cross.norm();
            pc.push(if mag < cfg.epsilon {
                C64::new(0.0, 0.0)
            } else {
                cross / mag
            });
        }
    }
    spectral::fft2d(&mut pc, w, h, true);

    let mut peak_idx = 0usize;
    let mut peak_val = f64::MIN;
    for (i, v) in pc.iter().enumerate() {
        if v.re > peak_val {
            peak_val = v.re;
            peak_idx = i;
        }
    }
    let px = peak_idx % w;
    let py = peak_idx / w;

    let mut dx = if px > w / 2 { px as f64 - w as f64 } else { px as f64 };
    let mut dy = if py > h / 2 { py as f64 - h as f64 } else { py as f64 };

    if cfg.subpixel {
        let at = |x: usize, y: usize| pc[y * w + x].re;
        let xm = at((px + w - 1) % w, py);
        let xp = at((px + 1) % w, py);
        let ym = at(px, (py + h - 1) % h);
        let yp = at(px, (py + 1) % h);
        dx += parabolic_offset(xm, peak_val, xp);
        dy += parabolic_offset(ym, peak_val, yp);
    }

    CorrelationPeak {
        dx,
        dy,
        response: peak_val.clamp(0.0, 1.0),
    }
}

/// Phase correlation between two equally-sized images. The returned shift
/// is the content displacement from `a` to `b` in pixels: a peak at
/// (dx, dy) means `b(x, y) ≈ a(x - dx, y - dy)`.
pub fn phase_correlation(a: &Image, b: &Image) -> Result<CorrelationPeak> {
    phase_correlation_with(a, b, &RegistrationConfig::default())
}

pub fn phase_correlation_with(
    a: &Image,
    b: &Image,
    cfg: &RegistrationConfig,
) -> Result<CorrelationPeak> {
    if !a.same_dims(b) {
        return Err(Error::DimensionMismatch(a.width(), a.height(), b.width(), b.height()));
    }
    let fa = forward_transform(a);
    let fb = forward_transform(b);
    Ok(cross_power_peak(&fa, &fb, cfg, None))
}

fn rotation_from_spectra(
    fa: &Spectrum,
    fb: &Spectrum,
    cfg: &RegistrationConfig,
) -> Result<(f64, f64)> {
    let weight = if cfg.hpf { Some(cfg.hpf_profile) } else { None };
    let mag_a = magnitude_spectrum_weighted(fa, weight);
    let mag_b = magnitude_spectrum_weighted(fb, weight);
    let angular = cfg.angular_bins * cfg.upsample.max(1) as usize;
    let radial = cfg
        .radial_bins
        .unwrap_or_else(|| (fa.width.min(fa.height) / 2).max(1));
    let polar_a = warp_polar(&mag_a, angular, radial)?;
    let polar_b = warp_polar(&mag_b, angular, radial)?;
    let peak = cross_power_peak(&forward_transform(&polar_a), &forward_transform(&polar_b), cfg, None);
    // Rows index angle, so the angular shift is the row component. The
    // column (radial) component pertains to scale and is discarded.
    let mut theta = peak.dy * TAU / angular as f64;
    // Spectral magnitudes are point-symmetric, so θ and θ±π are
    // indistinguishable here; report the representative in (-π/2, π/2].
    while theta > PI / 2.0 {
        theta -= PI;
    }
    while theta <= -PI / 2.0 {
        theta += PI;
    }
    Ok((theta, peak.response))
}

/// Rotation between two images from the polar warp of their (optionally
/// high-pass-weighted) spectral magnitudes. Returns (theta, response) with
/// theta folded to (-π/2, π/2]. Translation between the inputs does not
/// affect the estimate.
pub fn estimate_rotation(prev: &Image, curr: &Image, upsample: u32) -> Result<(f64, f64)> {
    let cfg = RegistrationConfig {
        upsample: upsample.max(1),
        ..RegistrationConfig::default()
    };
    estimate_rotation_with(prev, curr, &cfg)
}

pub fn estimate_rotation_with(
    prev: &Image,
    curr: &Image,
    cfg: &RegistrationConfig,
) -> Result<(f64, f64)> {
    if !prev.same_dims(curr) {
        return Err(Error::DimensionMismatch(
            prev.width(),
            prev.height(),
            curr.width(),
            curr.height(),
        ));
    }
    check_not_degenerate(prev)?;
    check_not_degenerate(curr)?;
    let (pa, pb) = if cfg.hann_window {
        (apply_hann(prev), apply_hann(curr))
    } else {
        (prev.clone(), curr.clone())
    };
    rotation_from_spectra(&forward_transform(&pa), &forward_transform(&pb), cfg)
}

fn translation_from_spectra(
    f_prev: &Spectrum,
    f_curr: &Spectrum,
    cfg: &RegistrationConfig,
) -> (f64, f64, f64) {
    let weight = if cfg.hpf && cfg.hpf_translation {
        Some(cfg.hpf_profile)
    } else {
        None
    };
    let peak = cross_power_peak(f_prev, f_curr, cfg, weight);
    (peak.dx, peak.dy, peak.response)
}

/// Pixel translation between a previous image and a rotation-corrected
/// current image, by phase correlation of the (optionally high-pass
/// filtered) pair. Returns (dx, dy, response) in image axes.
pub fn estimate_translation(prev: &Image, curr_rot_corrected: &Image) -> Result<(f64, f64, f64)> {
    estimate_translation_with(prev, curr_rot_corrected, &RegistrationConfig::default())
}

pub fn estimate_translation_with(
    prev: &Image,
    curr_rot_corrected: &Image,
    cfg: &RegistrationConfig,
) -> Result<(f64, f64, f64)> {
    if !prev.same_dims(curr_rot_corrected) {
        return Err(Error::DimensionMismatch(
            prev.width(),
            prev.height(),
            curr_rot_corrected.width(),
            curr_rot_corrected.height(),
        ));
    }
    check_not_degenerate(prev)?;
    check_not_degenerate(curr_rot_corrected)?;
    let (pa, pb) = if cfg.hann_window {
        (apply_hann(prev), apply_hann(curr_rot_corrected))
    } else {
        (prev.clone(), curr_rot_corrected.clone())
    };
    let fa = forward_transform(&pa);
    let fb = forward_transform(&pb);
    Ok(translation_from_spectra(&fa, &fb, cfg))
}

/// Two-stage registration of a consecutive scan pair: rotation first, then
/// translation after correcting the current scan by -theta in the spatial
/// domain. Pixel shifts are mapped to meters with the image resolution and
/// expressed as vehicle motion in the k-1 body frame (+x right, +y up).
pub fn register(
    prev: &Image,
    t_prev: f64,
    curr: &Image,
    t_curr: f64,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    register_with_timing(prev, t_prev, curr, t_curr, cfg).map(|(res, _)| res)
}

/// [`register`] plus the wall-clock split between the two stages.
pub fn register_with_timing(
    prev: &Image,
    t_prev: f64,
    curr: &Image,
    t_curr: f64,
    cfg: &RegistrationConfig,
) -> Result<(RegistrationResult, RegistrationTiming)> {
    if !prev.same_dims(curr) {
        return Err(Error::DimensionMismatch(
            prev.width(),
            prev.height(),
            curr.width(),
            curr.height(),
        ));
    }
    if !(t_curr > t_prev) {
        return Err(Error::invalid(format!(
            "scan timestamps must increase: {t_prev} -> {t_curr}"
        )));
    }
    let mpp = prev.meters_per_pixel();
    if !(mpp > 0.0) {
        return Err(Error::invalid("registration requires a spatial resolution"));
    }
    check_not_degenerate(prev)?;
    check_not_degenerate(curr)?;

    let rot_start = Instant::now();
    let windowed_prev = if cfg.hann_window { apply_hann(prev) } else { prev.clone() };
    let windowed_curr = if cfg.hann_window { apply_hann(curr) } else { curr.clone() };
    let f_prev = forward_transform(&windowed_prev);
    let f_curr = forward_transform(&windowed_curr);
    let (theta, rotation_response) = rotation_from_spectra(&f_prev, &f_curr, cfg)?;
    let rotation_ms = rot_start.elapsed().as_secs_f64() * 1e3;

    let tr_start = Instant::now();
    let corrected = rotate_image(curr, -theta);
    let windowed_corrected = if cfg.hann_window { apply_hann(&corrected) } else { corrected };
    let f_corrected = forward_transform(&windowed_corrected);
    let (shift_x, shift_y, translation_response) =
        translation_from_spectra(&f_prev, &f_corrected, cfg);
    let translation_ms = tr_start.elapsed().as_secs_f64() * 1e3;

    // A vehicle step of +d (body frame, +x right / +y up) moves image
    // content by (-d_x, +d_y)/mpp in pixel axes (rows grow downward).
    let dx_m = -shift_x * mpp;
    let dy_m = shift_y * mpp;

    Ok((
        RegistrationResult {
            theta,
            dx_m,
            dy_m,
            rotation_response,
            translation_response,
            dt: t_curr - t_prev,
            t: t_curr,
        },
        RegistrationTiming {
            rotation_ms,
            translation_ms,
        },
    ))
}

/// Converts a registration result into the velocity measurement consumed by
/// the filter: translation and rotation divided by the scan interval,
/// stamped at the end of the interval.
pub fn to_velocity(res: &RegistrationResult) -> Result<RadarVelocity> {
    if !(res.dt > 0.0) {
        return Err(Error::invalid(format!("interval must be positive, got {}", res.dt)));
    }
    Ok(RadarVelocity {
        v_x: res.dx_m / res.dt,
        v_y: res.dy_m / res.dt,
        w_z: res.theta / res.dt,
        timestamp: res.t,
        quality: res.rotation_response.min(res.translation_response),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    /// Renders Gaussian blobs seen from a vehicle pose; the exact analog of
    /// what the radar sees, so registration must recover the pose change.
    fn render_scene(
        size: usize,
        mpp: f64,
        blobs: &[(f64, f64, f64)],
        pose: (f64, f64, f64),
    ) -> Image {
        let (tx, ty, yaw) = pose;
        let c = (size / 2) as f64;
        let sigma = 1.8f64;
        let mut pixels = vec![0.0f64; size * size];
        for &(wx, wy, amp) in blobs {
            // World -> body frame.
            let rx = wx - tx;
            let ry = wy - ty;
            let bx = yaw.cos() * rx + yaw.sin() * ry;
            let by = -yaw.sin() * rx + yaw.cos() * ry;
            let px = c + bx / mpp;
            let py = c - by / mpp;
            let x0 = (px - 4.0 * sigma).floor().max(0.0) as usize;
            let x1 = ((px + 4.0 * sigma).ceil() as usize).min(size - 1);
            let y0 = (py - 4.0 * sigma).floor().max(0.0) as usize;
            let y1 = ((py + 4.0 * sigma).ceil() as usize).min(size - 1);
            if px < -4.0 * sigma || py < -4.0 * sigma {
                continue;
            }
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let d2 = (x as f64 - px).powi(2) + (y as f64 - py).powi(2);
                    pixels[y * size + x] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
                }
            }
        }
        for p in pixels.iter_mut() {
            *p = p.min(1.0);
        }
        Image::new(size, size, pixels, mpp).unwrap()
    }

    fn scene_blobs(seed: u64, count: usize, extent: f64) -> Vec<(f64, f64, f64)> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                (
                    rng.random_range(-extent..extent),
                    rng.random_range(-extent..extent),
                    rng.random_range(0.4..1.0),
                )
            })
            .collect()
    }

    fn random_image(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        Image::from_fn(w, h, 1.0, |_, _| rng.random::<f64>()).unwrap()
    }

    /// Content moved by (+sx, +sy) with wraparound.
    fn circular_shift(img: &Image, sx: i64, sy: i64) -> Image {
        let w = img.width() as i64;
        let h = img.height() as i64;
        Image::from_fn(img.width(), img.height(), img.meters_per_pixel(), |x, y| {
            let ox = ((x as i64 - sx).rem_euclid(w)) as usize;
            let oy = ((y as i64 - sy).rem_euclid(h)) as usize;
            img.get(ox, oy)
        })
        .unwrap()
    }

    /// Brute-force spatial circular cross-correlation argmax oracle.
    fn brute_force_peak(a: &Image, b: &Image) -> (i64, i64) {
        let w = a.width();
        let h = a.height();
        let mut best = (0i64, 0i64, f64::MIN);
        for sy in 0..h {
            for sx in 0..w {
                let mut acc = 0.0;
                for y in 0..h {
                    for x in 0..w {
                        acc += a.get(x, y) * b.get((x + sx) % w, (y + sy) % h);
                    }
                }
                if acc > best.2 {
                    best = (sx as i64, sy as i64, acc);
                }
            }
        }
        let dx = if best.0 > w as i64 / 2 { best.0 - w as i64 } else { best.0 };
        let dy = if best.1 > h as i64 / 2 { best.1 - h as i64 } else { best.1 };
        (dx, dy)
    }

    #[test]
    fn forward_transform_of_zero_is_zero() {
        let img = Image::zeros(16, 16, 0.0);
        let spec = forward_transform(&img);
        assert!(spec.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn forward_transform_of_constant_concentrates_at_dc() {
        let c = 0.42;
        let img = Image::new(8, 8, vec![c; 64], 0.0).unwrap();
        let spec = forward_transform(&img);
        assert_abs_diff_eq!(spec.values()[0].re, c * 64.0, epsilon = 1e-9);
        for (i, v) in spec.values().iter().enumerate().skip(1) {
            assert!(v.norm() < 1e-9, "bin {i} = {v}");
        }
    }

    #[test]
    fn forward_transform_of_impulse_is_flat() {
        let mut pixels = vec![0.0; 64];
        pixels[0] = 1.0;
        let img = Image::new(8, 8, pixels, 0.0).unwrap();
        let spec = forward_transform(&img);
        for v in spec.values() {
            assert_abs_diff_eq!(v.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn transform_round_trip() {
        let img = random_image(3, 24, 18);
        let back = inverse_transform(&forward_transform(&img));
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn magnitude_is_translation_blind() {
        let img = render_scene(64, 0.5, &scene_blobs(11, 25, 12.0), (0.0, 0.0, 0.0));
        let shifted = circular_shift(&img, 9, -4);
        let m1 = magnitude_spectrum(&forward_transform(&img));
        let m2 = magnitude_spectrum(&forward_transform(&shifted));
        for (a, b) in m1.pixels().iter().zip(m2.pixels()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn magnitude_rotates_with_the_image() {
        let img = render_scene(128, 0.5, &scene_blobs(5, 40, 25.0), (0.0, 0.0, 0.0));
        let theta = 0.4;
        let rotated = rotate_image(&img, theta);
        let m_img = magnitude_spectrum(&forward_transform(&img));
        let m_rot = magnitude_spectrum(&forward_transform(&rotated));
        let expected = rotate_image(&m_img, theta);
        // Compare interiors; borders suffer from interpolation support loss.
        let (cx, cy) = m_img.center();
        let mut err = 0.0;
        let mut n = 0usize;
        for y in 0..m_img.height() {
            for x in 0..m_img.width() {
                let r = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                if r < 40.0 {
                    err += (expected.get(x, y) - m_rot.get(x, y)).abs();
                    n += 1;
                }
            }
        }
        assert!(err / (n as f64) < 0.05, "mae = {}", err / n as f64);
    }

    #[test]
    fn magnitude_of_zero_spectrum_is_zero() {
        let spec = forward_transform(&Image::zeros(12, 12, 0.0));
        let mag = magnitude_spectrum(&spec);
        assert!(mag.pixels().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn warp_polar_isotropic_rows_identical() {
        let n = 65;
        let img = Image::from_fn(n, n, 0.0, |x, y| {
            let r = ((x as f64 - 32.0).powi(2) + (y as f64 - 32.0).powi(2)).sqrt();
            (-r / 10.0).exp()
        })
        .unwrap();
        let polar = warp_polar(&img, 90, 24).unwrap();
        for a in 1..90 {
            for r in 0..24 {
                assert!(
                    (polar.get(r, a) - polar.get(r, 0)).abs() < 1e-6,
                    "row {a} bin {r}"
                );
            }
        }
    }

    #[test]
    fn warp_polar_turns_rotation_into_row_shift() {
        let img = render_scene(128, 0.5, &scene_blobs(17, 30, 25.0), (0.0, 0.0, 0.0));
        let angular = 180usize;
        let theta = 25.0f64.to_radians();
        let rotated = rotate_image(&img, theta);
        let pa = warp_polar(&img, angular, 48).unwrap();
        let pb = warp_polar(&rotated, angular, 48).unwrap();
        // Brute-force row correlation oracle.
        let mut best = (0usize, f64::MIN);
        for shift in 0..angular {
            let mut acc = 0.0;
            for a in 0..angular {
                for r in 0..48 {
                    acc += pa.get(r, a) * pb.get(r, (a + angular - shift) % angular);
                }
            }
            if acc > best.1 {
                best = (shift, acc);
            }
        }
        let expected = theta / TAU * angular as f64;
        let got = best.0 as f64;
        let alt = got - angular as f64;
        let err = (got - expected).abs().min((alt - expected).abs());
        assert!(err <= 1.0, "row shift {got}, expected {expected}");
    }

    #[test]
    fn warp_polar_zero_image() {
        let polar = warp_polar(&Image::zeros(32, 32, 0.0), 45, 10).unwrap();
        assert!(polar.pixels().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn phase_correlation_identity() {
        let img = random_image(21, 48, 48);
        let peak = phase_correlation(&img, &img).unwrap();
        assert_eq!(peak.dx, 0.0);
        assert_eq!(peak.dy, 0.0);
        assert!(peak.response > 0.99);
    }

    #[test]
    fn phase_correlation_exact_integer_shift() {
        let img = random_image(22, 64, 64);
        let shifted = circular_shift(&img, 5, -3);
        let peak = phase_correlation(&img, &shifted).unwrap();
        assert_abs_diff_eq!(peak.dx, 5.0, epsilon = 1e-9);
        assert_abs_diff_eq!(peak.dy, -3.0, epsilon = 1e-9);
        // Cross-check against the brute-force spatial oracle.
        assert_eq!(brute_force_peak(&img, &shifted), (5, -3));
    }

    #[test]
    fn phase_correlation_rejects_dimension_mismatch() {
        let a = Image::zeros(16, 16, 0.0);
        let b = Image::zeros(16, 8, 0.0);
        assert!(matches!(
            phase_correlation(&a, &b),
            Err(Error::DimensionMismatch(..))
        ));
    }

    #[test]
    fn phase_correlation_under_noise() {
        let clean = random_image(33, 64, 64);
        let noiseless = phase_correlation(&clean, &circular_shift(&clean, 5, -3))
            .unwrap()
            .response;
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let mut hits = 0;
        let mut responses = 0.0;
        let trials = 100;
        for _ in 0..trials {
            let shifted = circular_shift(&clean, 5, -3);
            let noisy = Image::from_fn(64, 64, 1.0, |x, y| {
                shifted.get(x, y) + 0.05 * rng.sample::<f64, _>(rand_distr::StandardNormal)
            })
            .unwrap();
            let peak = phase_correlation(&clean, &noisy).unwrap();
            if (peak.dx - 5.0).abs() <= 1.0 && (peak.dy + 3.0).abs() <= 1.0 {
                hits += 1;
            }
            responses += peak.response;
        }
        assert!(hits >= 95, "only {hits}/{trials} within 1 px");
        assert!(responses / (trials as f64) < noiseless);
    }

    fn small_cfg() -> RegistrationConfig {
        RegistrationConfig {
            radial_bins: Some(64),
            ..RegistrationConfig::default()
        }
    }

    #[test]
    fn rotation_of_identical_images_is_exactly_zero() {
        for seed in [1u64, 2, 3] {
            let img = render_scene(96, 0.5, &scene_blobs(seed, 30, 18.0), (0.0, 0.0, 0.0));
            let (theta, resp) = estimate_rotation(&img, &img, 4).unwrap();
            assert_eq!(theta, 0.0);
            assert!(resp > 0.5);
        }
    }

    #[test]
    fn rotation_recovered_within_one_upsampled_bin() {
        let blobs = scene_blobs(41, 45, 25.0);
        let prev = render_scene(128, 0.5, &blobs, (0.0, 0.0, 0.0));
        let truth = 10.0f64.to_radians();
        let curr = render_scene(128, 0.5, &blobs, (0.0, 0.0, truth));
        let cfg = small_cfg();
        let (theta, _) = estimate_rotation_with(&prev, &curr, &cfg).unwrap();
        let bin = TAU / (cfg.angular_bins * cfg.upsample as usize) as f64;
        assert!(
            (theta - truth).abs() <= bin,
            "theta {} vs truth {truth} (bin {bin})",
            theta
        );
    }

    #[test]
    fn rotation_is_translation_blind() {
        let blobs = scene_blobs(42, 45, 25.0);
        let prev = render_scene(128, 0.5, &blobs, (0.0, 0.0, 0.0));
        let truth = 5.0f64.to_radians();
        // Compound motion: translate by (8, -4) px worth of meters and rotate.
        let curr = render_scene(128, 0.5, &blobs, (8.0 * 0.5, -4.0 * 0.5, truth));
        let cfg = small_cfg();
        let (theta, _) = estimate_rotation_with(&prev, &curr, &cfg).unwrap();
        let bin = TAU / (cfg.angular_bins * cfg.upsample as usize) as f64;
        assert!((theta - truth).abs() <= bin, "theta {theta} vs {truth}");
    }

    #[test]
    fn rotation_rejects_degenerate_input() {
        let zero = Image::zeros(64, 64, 0.5);
        assert!(matches!(
            estimate_rotation(&zero, &zero, 4),
            Err(Error::UnusableScan(_))
        ));
    }

    #[test]
    fn translation_zero_motion() {
        let img = render_scene(96, 0.5, &scene_blobs(51, 30, 18.0), (0.0, 0.0, 0.0));
        let (dx, dy, resp) = estimate_translation(&img, &img).unwrap();
        assert_eq!((dx, dy), (0.0, 0.0));
        assert!(resp > 0.5);
    }

    #[test]
    fn translation_pure_shift_subpixel() {
        let blobs = scene_blobs(52, 35, 18.0);
        let prev = render_scene(128, 0.5, &blobs, (0.0, 0.0, 0.0));
        // Vehicle moves +x by 12 px worth: content shifts -12 columns.
        let curr = render_scene(128, 0.5, &blobs, (12.0 * 0.5, 0.0, 0.0));
        let (dx, dy, _) = estimate_translation(&prev, &curr).unwrap();
        assert!((dx + 12.0).abs() <= 0.5, "dx = {dx}");
        assert!(dy.abs() <= 0.5, "dy = {dy}");
    }

    #[test]
    fn translation_survives_clutter() {
        let blobs = scene_blobs(53, 35, 18.0);
        let prev = render_scene(128, 0.5, &blobs, (0.0, 0.0, 0.0));
        let curr = render_scene(128, 0.5, &blobs, (3.0 * 0.5, -1.0 * 0.5, 0.0));
        // Replace 20% of each image's pixels with independent clutter.
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let clutterize = |img: &Image, rng: &mut ChaCha12Rng| {
            let mut pixels = img.pixels().to_vec();
            let n = pixels.len();
            for _ in 0..n / 5 {
                let i = rng.random_range(0..n);
                pixels[i] = rng.random::<f64>();
            }
            Image::new(img.width(), img.height(), pixels, img.meters_per_pixel()).unwrap()
        };
        let prev_c = clutterize(&prev, &mut rng);
        let curr_c = clutterize(&curr, &mut rng);
        let (dx, dy, _) = estimate_translation(&prev_c, &curr_c).unwrap();
        assert!((dx + 3.0).abs() <= 1.0, "dx = {dx}");
        assert!((dy - 1.0).abs() <= 1.0, "dy = {dy}");
    }

    #[test]
    fn register_identical_scans() {
        let img = render_scene(96, 0.5, &scene_blobs(61, 30, 18.0), (0.0, 0.0, 0.0));
        let res = register(&img, 0.0, &img, 0.25, &small_cfg()).unwrap();
        assert_eq!(res.theta, 0.0);
        assert_eq!(res.dx_m, 0.0);
        assert_eq!(res.dy_m, 0.0);
        assert_abs_diff_eq!(res.dt, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn register_constructed_pair() {
        let blobs = scene_blobs(62, 45, 28.0);
        let mpp = 0.2;
        let theta = 2.0f64.to_radians();
        let prev = render_scene(160, mpp, &blobs, (0.0, 0.0, 0.0));
        let curr = render_scene(160, mpp, &blobs, (2.4, 0.0, theta));
        let cfg = small_cfg();
        let res = register(&prev, 0.0, &curr, 0.25, &cfg).unwrap();
        let bin = TAU / (cfg.angular_bins * cfg.upsample as usize) as f64;
        assert!((res.theta - theta).abs() <= bin, "theta {}", res.theta);
        assert!((res.dx_m - 2.4).abs() <= 2.0 * mpp, "dx_m {}", res.dx_m);
        assert!(res.dy_m.abs() <= 2.0 * mpp, "dy_m {}", res.dy_m);
        let vel = to_velocity(&res).unwrap();
        assert!((vel.v_x - 9.6).abs() <= 2.0 * mpp / 0.25);
        assert_abs_diff_eq!(vel.timestamp, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn register_antisymmetry() {
        let blobs = scene_blobs(63, 45, 28.0);
        let prev = render_scene(128, 0.4, &blobs, (0.0, 0.0, 0.0));
        let curr = render_scene(128, 0.4, &blobs, (1.6, 0.6, 0.03));
        let cfg = small_cfg();
        let fwd = register(&prev, 0.0, &curr, 0.25, &cfg).unwrap();
        let bwd = register(&curr, 0.0, &prev, 0.25, &cfg).unwrap();
        let bin = TAU / (cfg.angular_bins * cfg.upsample as usize) as f64;
        assert!((fwd.theta + bwd.theta).abs() <= 2.0 * bin);
        // Backward translation is the forward one rotated into the other
        // frame and negated; for this small angle compare magnitudes.
        assert!((fwd.dx_m + bwd.dx_m).abs() <= 3.0 * 0.4);
        assert!((fwd.dy_m + bwd.dy_m).abs() <= 3.0 * 0.4);
    }

    #[test]
    fn register_rejects_degenerate_scan() {
        let img = render_scene(96, 0.5, &scene_blobs(61, 30, 18.0), (0.0, 0.0, 0.0));
        let zero = Image::zeros(96, 96, 0.5);
        assert!(matches!(
            register(&img, 0.0, &zero, 0.25, &small_cfg()),
            Err(Error::UnusableScan(_))
        ));
    }

    #[test]
    fn to_velocity_arithmetic() {
        let res = RegistrationResult {
            theta: 0.0349,
            dx_m: 2.4,
            dy_m: 0.0,
            rotation_response: 0.8,
            translation_response: 0.6,
            dt: 0.25,
            t: 10.25,
        };
        let v = to_velocity(&res).unwrap();
        assert_abs_diff_eq!(v.v_x, 9.6, epsilon = 1e-12);
        assert_abs_diff_eq!(v.v_y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v.w_z, 0.1396, epsilon = 1e-12);
        assert_abs_diff_eq!(v.quality, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(v.timestamp, 10.25, epsilon = 1e-12);
    }

    #[test]
    fn to_velocity_zero_motion_and_unit_interval() {
        let mut res = RegistrationResult {
            theta: 0.0,
            dx_m: 0.0,
            dy_m: 0.0,
            rotation_response: 1.0,
            translation_response: 1.0,
            dt: 0.2,
            t: 0.2,
        };
        let v = to_velocity(&res).unwrap();
        assert_eq!((v.v_x, v.v_y, v.w_z), (0.0, 0.0, 0.0));

        res.theta = PI / 100.0;
        res.dt = 1.0;
        let v = to_velocity(&res).unwrap();
        assert_abs_diff_eq!(v.w_z, PI / 100.0, epsilon = 1e-15);
        assert_eq!(v.v_x, 0.0);

        res.dt = 0.0;
        assert!(to_velocity(&res).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn peak_response_invariant_to_intensity_scaling(
            scale_a in 0.1f64..5.0,
            scale_b in 0.1f64..5.0,
            seed in 0u64..500,
        ) {
            let img = random_image(seed, 32, 32);
            let shifted = circular_shift(&img, 3, 1);
            let base = phase_correlation(&img, &shifted).unwrap();
            let scaled = phase_correlation(&img.scaled(scale_a), &shifted.scaled(scale_b)).unwrap();
            prop_assert!((base.response - scaled.response).abs() < 1e-9);
            prop_assert_eq!(base.dx, scaled.dx);
            prop_assert_eq!(base.dy, scaled.dy);
        }

        #[test]
        fn integer_peaks_match_brute_force_oracle(seed in 0u64..200) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let img = random_image(seed.wrapping_add(1000), 32, 32);
            let sx = rng.random_range(-12i64..=12);
            let sy = rng.random_range(-12i64..=12);
            let shifted = circular_shift(&img, sx, sy);
            let cfg = RegistrationConfig { subpixel: false, ..RegistrationConfig::default() };
            let peak = phase_correlation_with(&img, &shifted, &cfg).unwrap();
            let oracle = brute_force_peak(&img, &shifted);
            prop_assert_eq!((peak.dx as i64, peak.dy as i64), oracle);
            prop_assert_eq!(oracle, (sx, sy));
        }
    }
}
