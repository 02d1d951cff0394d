//! Static saliency maps: spectral residual and fine-grained center-surround.
//!
//! Both algorithms are deterministic functions of the input pixels. The
//! spectral pipeline runs in f64 with its amplitude epsilon taken relative
//! to the peak spectral amplitude, so maps are invariant under power-of-two
//! intensity scaling to within floating-point noise. The fine-grained
//! pipeline quantizes to u8 and works on integer luminance sums, which makes
//! the on/off symmetry map(I) == map(max - I) hold bitwise.

use crate::geometry::ImagePlane;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

// Integer Rec.601-style luminance weights summing to 256, so quantized
// luminance lives on an exact integer grid.
const LUMA_QR: i64 = 77;
const LUMA_QG: i64 = 150;
const LUMA_QB: i64 = 29;

/// Single-plane visual-importance field in [0, 1] with the source image's
/// spatial dimensions. After normalization the maximum is exactly 1 unless
/// the map is identically 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl SaliencyMap {
    fn zeros(width: usize, height: usize) -> SaliencyMap {
        SaliencyMap {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn to_plane(&self) -> ImagePlane {
        let data: Vec<f32> = self.data.iter().map(|&v| v as f32).collect();
        ImagePlane::new(1, self.width, self.height, data).expect("same dims as source image")
    }
}

/// Constants of the spectral-residual pipeline. All values are
/// config-surfaced so goldens can be regenerated against any setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralParams {
    /// Width of the working raster the spectrum is computed on.
    pub working_width: usize,
    /// Log-amplitude epsilon, relative to the peak spectral amplitude.
    pub epsilon: f64,
    /// Gaussian smoothing sigma at the working scale.
    pub sigma: f64,
}

impl Default for SpectralParams {
    fn default() -> Self {
        SpectralParams {
            working_width: 64,
            epsilon: 1e-8,
            sigma: 2.5,
        }
    }
}

fn luminance_f64(img: &ImagePlane) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let v = if img.channels() == 1 {
                img.get(0, x, y) as f64
            } else {
                LUMA_R * img.get(0, x, y) as f64
                    + LUMA_G * img.get(1, x, y) as f64
                    + LUMA_B * img.get(2, x, y) as f64
            };
            out.push(v);
        }
    }
    out
}

/// Center-aligned bilinear resample on an f64 raster; identity when the
/// sizes already match.
fn resize_f64(src: &[f64], w: usize, h: usize, tw: usize, th: usize) -> Vec<f64> {
    if (w, h) == (tw, th) {
        return src.to_vec();
    }
    let sx = w as f64 / tw as f64;
    let sy = h as f64 / th as f64;
    let mut out = Vec::with_capacity(tw * th);
    for y in 0..th {
        let src_y = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = src_y.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = src_y - y0 as f64;
        for x in 0..tw {
            let src_x = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = src_x.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = src_x - x0 as f64;
            let v00 = src[y0 * w + x0];
            let v10 = src[y0 * w + x1];
            let v01 = src[y1 * w + x0];
            let v11 = src[y1 * w + x1];
            let top = v00 + (v10 - v00) * fx;
            let bottom = v01 + (v11 - v01) * fx;
            out.push(top + (bottom - top) * fy);
        }
    }
    out
}

fn transpose_complex(src: &[Complex64], w: usize, h: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); src.len()];
    for y in 0..h {
        for x in 0..w {
            out[x * h + y] = src[y * w + x];
        }
    }
    out
}

/// In-place 2-D DFT: row transforms followed by column transforms.
fn fft2d(data: &mut Vec<Complex64>, w: usize, h: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(w)
    } else {
        planner.plan_fft_forward(w)
    };
    row_fft.process(data);
    let mut cols = transpose_complex(data, w, h);
    let col_fft = if inverse {
        planner.plan_fft_inverse(h)
    } else {
        planner.plan_fft_forward(h)
    };
    col_fft.process(&mut cols);
    *data = transpose_complex(&cols, h, w);
}

/// 3x3 box mean with replicate borders, separable.
fn box3_mean(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let xm = clamp(x as isize - 1, w);
            let xp = clamp(x as isize + 1, w);
            rows[y * w + x] = src[y * w + xm] + src[y * w + x] + src[y * w + xp];
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let ym = clamp(y as isize - 1, h);
        let yp = clamp(y as isize + 1, h);
        for x in 0..w {
            out[y * w + x] = (rows[ym * w + x] + rows[y * w + x] + rows[yp * w + x]) / 9.0;
        }
    }
    out
}

/// Separable Gaussian with replicate borders; kernel radius ceil(3 sigma).
fn gaussian_blur(src: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for i in -radius..=radius {
        kernel.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= norm;
    }
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sx = clamp(x as isize + ki as isize - radius, w);
                acc += k * src[y * w + sx];
            }
            rows[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sy = clamp(y as isize + ki as isize - radius, h);
                acc += k * rows[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Min-max normalize to [0, 1]. A relatively flat field (span below 1e-12 of
/// its magnitude) becomes the all-zero map instead of amplifying noise; the
/// relative guard keeps the decision invariant under intensity scaling.
fn normalize_unit(data: &mut [f64]) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in data.iter() {
        min = min.min(v);
        max = max.max(v);
    }
    let span = max - min;
    if !(span > 1e-12 * max.abs().max(min.abs())) {
        data.fill(0.0);
        return;
    }
    for v in data.iter_mut() {
        *v = (*v - min) / span;
    }
}

fn constant_luminance(lum: &[f64]) -> bool {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in lum.iter() {
        min = min.min(v);
        max = max.max(v);
    }
    max - min <= 1e-9 * max.abs().max(min.abs())
}

/// Spectral-residual saliency: suppress the locally averaged log-amplitude
/// spectrum, reconstruct with the original phase, and smooth the squared
/// magnitude. Computed on a working raster of `params.working_width`, then
/// upscaled to the source size and min-max normalized.
pub fn spectral_residual(img: &ImagePlane, params: &SpectralParams) -> SaliencyMap {
    let (sw, sh) = (img.width(), img.height());
    let lum = luminance_f64(img);
    // A flat image has no salient structure; the raw pipeline would only
    // amplify rounding noise, so short-circuit to the zero map.
    if constant_luminance(&lum) {
        return SaliencyMap::zeros(sw, sh);
    }
    let tw = params.working_width.max(1);
    let th = ((sh as f64 * tw as f64 / sw as f64).round() as usize).max(1);
    let working = resize_f64(&lum, sw, sh, tw, th);

    let mut freq: Vec<Complex64> = working.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2d(&mut freq, tw, th, false);

    let amplitude: Vec<f64> = freq
        .iter()
        .map(|c| (c.re * c.re + c.im * c.im).sqrt())
        .collect();
    let peak = amplitude.iter().copied().fold(0.0, f64::max);
    let eps = params.epsilon * peak;
    let log_amp: Vec<f64> = amplitude.iter().map(|&a| (a + eps).ln()).collect();
    let smoothed = box3_mean(&log_amp, tw, th);

    for (i, c) in freq.iter_mut().enumerate() {
        let residual = log_amp[i] - smoothed[i];
        let magnitude = residual.exp();
        let unit = if amplitude[i] > 0.0 {
            Complex64::new(c.re / amplitude[i], c.im / amplitude[i])
        } else {
            Complex64::new(1.0, 0.0)
        };
        *c = Complex64::new(magnitude * unit.re, magnitude * unit.im);
    }
    fft2d(&mut freq, tw, th, true);

    let spatial: Vec<f64> = freq.iter().map(|c| c.re * c.re + c.im * c.im).collect();
    let blurred = gaussian_blur(&spatial, tw, th, params.sigma);
    let mut full = resize_f64(&blurred, tw, th, sw, sh);
    normalize_unit(&mut full);
    SaliencyMap {
        width: sw,
        height: sh,
        data: full,
    }
}

fn quantize_u8(v: f32) -> i64 {
    (v * 255.0).round().clamp(0.0, 255.0) as i64
}

/// Quantized integer luminance per pixel; weights sum to 256 so values live
/// in 0..=65280 and all center-surround differences are exact integers.
fn luminance_q(img: &ImagePlane) -> Vec<i64> {
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let v = if img.channels() == 1 {
                256 * quantize_u8(img.get(0, x, y))
            } else {
                LUMA_QR * quantize_u8(img.get(0, x, y))
                    + LUMA_QG * quantize_u8(img.get(1, x, y))
                    + LUMA_QB * quantize_u8(img.get(2, x, y))
            };
            out.push(v);
        }
    }
    out
}

struct Integral {
    w: usize,
    sums: Vec<i64>,
}

impl Integral {
    fn build(values: &[i64], w: usize, h: usize) -> Integral {
        let stride = w + 1;
        let mut sums = vec![0i64; stride * (h + 1)];
        for y in 0..h {
            for x in 0..w {
                sums[(y + 1) * stride + (x + 1)] = values[y * w + x]
                    + sums[y * stride + (x + 1)]
                    + sums[(y + 1) * stride + x]
                    - sums[y * stride + x];
            }
        }
        Integral { w, sums }
    }

    /// Sum over the inclusive pixel rectangle [x0, x1] x [y0, y1].
    fn rect(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> i64 {
        let stride = self.w + 1;
        self.sums[(y1 + 1) * stride + (x1 + 1)] + self.sums[y0 * stride + x0]
            - self.sums[y0 * stride + (x1 + 1)]
            - self.sums[(y1 + 1) * stride + x0]
    }
}

/// Per-scale absolute center-surround responses, accumulated in scale order.
/// Each term is |center * n - sum| / n with integer numerator, so inverting
/// the image negates every difference and leaves the accumulation bitwise
/// identical.
fn center_surround_combined(lum: &[i64], w: usize, h: usize, scales: &[usize]) -> Vec<f64> {
    let integral = Integral::build(lum, w, h);
    let mut combined = vec![0.0; w * h];
    for &s in scales {
        if s == 0 {
            continue;
        }
        for y in 0..h {
            let y0 = y.saturating_sub(s);
            let y1 = (y + s).min(h - 1);
            for x in 0..w {
                let x0 = x.saturating_sub(s);
                let x1 = (x + s).min(w - 1);
                let n = ((x1 - x0 + 1) * (y1 - y0 + 1)) as i64;
                let d = lum[y * w + x] * n - integral.rect(x0, y0, x1, y1);
                combined[y * w + x] += d.unsigned_abs() as f64 / n as f64;
            }
        }
    }
    combined
}

/// Fine-grained saliency from on-center and off-center differences against
/// box-filter surrounds at octave scales (`scales` are box half-widths,
/// windows clamped to the image).
pub fn fine_grained(img: &ImagePlane, scales: &[usize]) -> SaliencyMap {
    let (w, h) = (img.width(), img.height());
    let lum = luminance_q(img);
    let mut combined = center_surround_combined(&lum, w, h, scales);
    normalize_unit(&mut combined);
    SaliencyMap {
        width: w,
        height: h,
        data: combined,
    }
}

/// On and off component fields before normalization, for inspection: the
/// positive part of center - surround and its negation, summed over scales.
pub fn fine_grained_components(
    img: &ImagePlane,
    scales: &[usize],
) -> (SaliencyMap, SaliencyMap) {
    let (w, h) = (img.width(), img.height());
    let lum = luminance_q(img);
    let integral = Integral::build(&lum, w, h);
    let mut on = vec![0.0; w * h];
    let mut off = vec![0.0; w * h];
    for &s in scales {
        if s == 0 {
            continue;
        }
        for y in 0..h {
            let y0 = y.saturating_sub(s);
            let y1 = (y + s).min(h - 1);
            for x in 0..w {
                let x0 = x.saturating_sub(s);
                let x1 = (x + s).min(w - 1);
                let n = ((x1 - x0 + 1) * (y1 - y0 + 1)) as i64;
                let d = lum[y * w + x] * n - integral.rect(x0, y0, x1, y1);
                if d >= 0 {
                    on[y * w + x] += d as f64 / n as f64;
                } else {
                    off[y * w + x] += (-d) as f64 / n as f64;
                }
            }
        }
    }
    (
        SaliencyMap {
            width: w,
            height: h,
            data: on,
        },
        SaliencyMap {
            width: w,
            height: h,
            data: off,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SCALES: &[usize] = &[8, 16, 32];

    fn random_plane(channels: usize, w: usize, h: usize, seed: u64) -> ImagePlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImagePlane::from_fn(channels, w, h, |_, _, _| rng.gen::<f32>()).unwrap()
    }

    /// Image whose f32 pixels sit exactly on the u8/255 grid.
    fn random_u8_plane(channels: usize, w: usize, h: usize, seed: u64) -> ImagePlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImagePlane::from_fn(channels, w, h, |_, _, _| {
            rng.gen_range(0u32..=255) as f32 / 255.0
        })
        .unwrap()
    }

    fn scale_plane(img: &ImagePlane, c: f32) -> ImagePlane {
        let data = img.data().iter().map(|&v| v * c).collect();
        ImagePlane::new(img.channels(), img.width(), img.height(), data).unwrap()
    }

    #[test]
    fn constant_images_produce_zero_maps() {
        for value in [0.0f32, 0.37, 1.0] {
            let img = ImagePlane::filled(3, 40, 30, value).unwrap();
            assert!(
                spectral_residual(&img, &SpectralParams::default()).is_zero(),
                "spectral, value {value}"
            );
            assert!(fine_grained(&img, SCALES).is_zero(), "fine, value {value}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn maps_have_unit_range_and_source_dims(
            w in 8usize..70,
            h in 8usize..70,
            channels in prop_oneof![Just(1usize), Just(3usize)],
            seed in 0u64..1000,
        ) {
            let img = random_plane(channels, w, h, seed);
            for map in [
                spectral_residual(&img, &SpectralParams::default()),
                fine_grained(&img, SCALES),
            ] {
                prop_assert_eq!((map.width(), map.height()), (w, h));
                for &v in map.data() {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                // Normalization pins the max at exactly 1 for non-zero maps.
                prop_assert!(map.is_zero() || map.max() == 1.0);
            }
        }
    }

    #[test]
    fn spectral_scale_invariance_for_power_of_two_factors() {
        for (seed, w, h) in [(1u64, 97, 61), (2, 64, 64), (3, 33, 80)] {
            let img = random_plane(3, w, h, seed);
            let base = spectral_residual(&img, &SpectralParams::default());
            for c in [0.5f32, 2.0] {
                let scaled = spectral_residual(&scale_plane(&img, c), &SpectralParams::default());
                let max_diff = base
                    .data()
                    .iter()
                    .zip(scaled.data())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(
                    max_diff <= 1e-6,
                    "c={c} seed={seed}: max diff {max_diff}"
                );
            }
        }
    }

    #[test]
    fn fine_grained_on_off_symmetry_is_bitwise() {
        for seed in 0..5u64 {
            let img = random_u8_plane(3, 57, 43, seed);
            let max = img.data().iter().copied().fold(0.0f32, f32::max);
            let inverted = ImagePlane::new(
                3,
                57,
                43,
                img.data().iter().map(|&v| max - v).collect(),
            )
            .unwrap();
            let a = fine_grained(&img, SCALES);
            let b = fine_grained(&inverted, SCALES);
            assert_eq!(a.data(), b.data(), "seed {seed}");
        }
    }

    #[test]
    fn fine_grained_symmetry_holds_for_gray_images_too() {
        let img = random_u8_plane(1, 40, 40, 9);
        let inverted = ImagePlane::new(
            1,
            40,
            40,
            img.data().iter().map(|&v| 1.0 - v).collect(),
        )
        .unwrap();
        assert_eq!(
            fine_grained(&img, SCALES).data(),
            fine_grained(&inverted, SCALES).data()
        );
    }

    #[test]
    fn maps_are_deterministic() {
        let img = random_plane(3, 50, 38, 21);
        assert_eq!(
            spectral_residual(&img, &SpectralParams::default()),
            spectral_residual(&img, &SpectralParams::default())
        );
        assert_eq!(fine_grained(&img, SCALES), fine_grained(&img, SCALES));
    }

    /// Direct-summation DFT, the independent oracle for the FFT route.
    /// Twiddle exponents are reduced modulo the period before the trig
    /// calls so the oracle's own rounding stays small.
    fn naive_dft2d(data: &[Complex64], w: usize, h: usize, inverse: bool) -> Vec<Complex64> {
        let sign = if inverse { 1.0 } else { -1.0 };
        let tau = 2.0 * std::f64::consts::PI;
        let mut out = vec![Complex64::new(0.0, 0.0); w * h];
        for v in 0..h {
            for u in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let phase = (u * x % w) as f64 / w as f64 + (v * y % h) as f64 / h as f64;
                        let angle = sign * tau * (phase - phase.floor());
                        let tw = Complex64::new(angle.cos(), angle.sin());
                        acc += data[y * w + x] * tw;
                    }
                }
                out[v * w + u] = acc;
            }
        }
        out
    }

    /// Reimplementation of the spectral pipeline around the naive DFT.
    fn spectral_oracle(img: &ImagePlane, params: &SpectralParams) -> Vec<f64> {
        let (w, h) = (img.width(), img.height());
        assert_eq!(w, params.working_width, "oracle expects no resize step");
        let lum = luminance_f64(img);
        let freq = naive_dft2d(
            &lum.iter().map(|&v| Complex64::new(v, 0.0)).collect::<Vec<_>>(),
            w,
            h,
            false,
        );
        let amplitude: Vec<f64> = freq.iter().map(|c| (c.re * c.re + c.im * c.im).sqrt()).collect();
        let peak = amplitude.iter().copied().fold(0.0, f64::max);
        let eps = params.epsilon * peak;
        let log_amp: Vec<f64> = amplitude.iter().map(|&a| (a + eps).ln()).collect();
        let smoothed = box3_mean(&log_amp, w, h);
        let recon: Vec<Complex64> = freq
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mag = (log_amp[i] - smoothed[i]).exp();
                let unit = if amplitude[i] > 0.0 {
                    Complex64::new(c.re / amplitude[i], c.im / amplitude[i])
                } else {
                    Complex64::new(1.0, 0.0)
                };
                Complex64::new(mag * unit.re, mag * unit.im)
            })
            .collect();
        let spatial = naive_dft2d(&recon, w, h, true);
        // The library inverse is unnormalized; match it so magnitudes agree
        // before normalization.
        let sal: Vec<f64> = spatial.iter().map(|c| c.re * c.re + c.im * c.im).collect();
        let mut blurred = gaussian_blur(&sal, w, h, params.sigma);
        normalize_unit(&mut blurred);
        blurred
    }

    #[test]
    fn spectral_matches_naive_dft_oracle_and_peaks_in_bright_square() {
        // 48-wide source with working width 48: the pipeline never resizes,
        // so the oracle and the implementation see identical inputs.
        let params = SpectralParams {
            working_width: 48,
            ..SpectralParams::default()
        };
        // Mild noise keeps every spectral amplitude away from the exact
        // sinc nulls a flat square would produce; at a null, the epsilon-
        // regularized log would amplify the two routes' last-ulp rounding
        // differences past any tight tolerance.
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let img = ImagePlane::from_fn(1, 48, 36, |_, x, y| {
            let base = if (20..28).contains(&x) && (14..22).contains(&y) {
                0.9
            } else {
                0.1
            };
            base + 0.05 * (rng.gen::<f32>() - 0.5)
        })
        .unwrap();
        let map = spectral_residual(&img, &params);
        let oracle = spectral_oracle(&img, &params);
        let max_diff = map
            .data()
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff <= 1e-6, "max diff vs oracle {max_diff}");

        let argmax = |vals: &[f64]| {
            let (mut best, mut best_v) = (0usize, f64::NEG_INFINITY);
            for (i, &v) in vals.iter().enumerate() {
                if v > best_v {
                    best = i;
                    best_v = v;
                }
            }
            (best % 48, best / 48)
        };
        for (label, vals) in [("map", map.data()), ("oracle", &oracle[..])] {
            let (x, y) = argmax(vals);
            // The smoothed peak must land inside the bright square's region
            // (one pixel of slack for the Gaussian tails).
            assert!(
                (19..=28).contains(&x) && (13..=22).contains(&y),
                "{label} argmax at ({x},{y})"
            );
        }
    }

    #[test]
    fn fine_grained_components_localize_a_bright_disk() {
        let (w, h, cx, cy, r) = (96usize, 96usize, 48f64, 48f64, 12f64);
        let img = ImagePlane::from_fn(1, w, h, |_, x, y| {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            if (dx * dx + dy * dy).sqrt() <= r {
                0.9
            } else {
                0.1
            }
        })
        .unwrap();
        let (on, off) = fine_grained_components(&img, SCALES);
        let region_mean = |map: &SaliencyMap, pred: &dyn Fn(f64) -> bool| {
            let mut sum = 0.0;
            let mut n = 0usize;
            for y in 0..h {
                for x in 0..w {
                    let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                    if pred(d) {
                        sum += map.get(x, y);
                        n += 1;
                    }
                }
            }
            sum / n as f64
        };
        let inside = |d: f64| d <= r;
        let rim = |d: f64| d > r && d <= r + 6.0;
        let far = |d: f64| d > r + 30.0;
        // On-responses concentrate in the bright disk, off-responses just
        // outside its rim.
        assert!(region_mean(&on, &inside) > 10.0 * region_mean(&on, &far));
        assert!(region_mean(&off, &rim) > region_mean(&off, &far));
        assert!(region_mean(&on, &inside) > region_mean(&off, &rim));

        let combined = fine_grained(&img, SCALES);
        assert!(region_mean(&combined, &inside) > region_mean(&combined, &far));

        // Inverting the disk swaps on and off but preserves the combination.
        let inverted = ImagePlane::new(
            1,
            w,
            h,
            img.data().iter().map(|&v| 0.9 - v).collect(),
        )
        .unwrap();
        assert_eq!(fine_grained(&inverted, SCALES).data(), combined.data());
    }

    #[test]
    fn fine_grained_scales_cap_at_image_size() {
        // Scales larger than the image degrade to whole-image surrounds
        // instead of misindexing.
        let img = random_u8_plane(1, 10, 7, 3);
        let map = fine_grained(&img, &[8, 16, 32]);
        assert_eq!((map.width(), map.height()), (10, 7));
        for &v in map.data() {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}
