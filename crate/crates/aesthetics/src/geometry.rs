//! Deterministic geometric preprocessing: aspect-aware resize, zero padding
//! to square, center crop, and separation-constrained random crops.
//!
//! Crop sampling draws integer top-left positions and compares doubled
//! integer centers, so results for a fixed seed are bit-identical across
//! platforms. Interpolation is center-aligned bilinear computed in f64,
//! which is exactly the identity for same-size resizes.

use ndarray::Array3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("image has zero area")]
    EmptyImage,
    #[error("expected {expected} channels or 1/3, got {got}")]
    BadChannelCount { expected: &'static str, got: usize },
    #[error("pixel buffer holds {got} values, expected {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("image is {width}x{height}, expected {expected}")]
    BadShape {
        width: usize,
        height: usize,
        expected: String,
    },
    #[error("image {width}x{height} is smaller than the {size}x{size} crop")]
    TooSmall {
        width: usize,
        height: usize,
        size: usize,
    },
    #[error("crop x={x} y={y} w={w} h={h} exceeds the {width}x{height} image")]
    BadCrop {
        x: usize,
        y: usize,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },
    #[error("placed {} of {needed} random crops before exhausting attempts", placed.len())]
    InsufficientSeparation {
        needed: usize,
        placed: Vec<CropSpec>,
    },
}

/// Planar image, channel-major (CHW), pixel values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    channels: usize,
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ImagePlane {
    pub fn new(
        channels: usize,
        width: usize,
        height: usize,
        data: Vec<f32>,
    ) -> Result<ImagePlane, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyImage);
        }
        if channels != 1 && channels != 3 {
            return Err(GeometryError::BadChannelCount {
                expected: "1 or 3",
                got: channels,
            });
        }
        let expected = channels * width * height;
        if data.len() != expected {
            return Err(GeometryError::DataLength {
                expected,
                got: data.len(),
            });
        }
        Ok(ImagePlane {
            channels,
            width,
            height,
            data,
        })
    }

    pub fn filled(
        channels: usize,
        width: usize,
        height: usize,
        value: f32,
    ) -> Result<ImagePlane, GeometryError> {
        ImagePlane::new(channels, width, height, vec![value; channels * width * height])
    }

    pub fn from_fn(
        channels: usize,
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<ImagePlane, GeometryError> {
        let mut data = Vec::with_capacity(channels * width * height);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, x, y));
                }
            }
        }
        ImagePlane::new(channels, width, height, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        debug_assert!(c < self.channels && x < self.width && y < self.height);
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        debug_assert!(c < self.channels && x < self.width && y < self.height);
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Row-major f64 accumulation; adding zero padding never changes it.
    pub fn pixel_sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn from_image(img: &image::DynamicImage) -> Result<ImagePlane, GeometryError> {
        let rgb = img.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        if w == 0 || h == 0 {
            return Err(GeometryError::EmptyImage);
        }
        let mut plane = ImagePlane::filled(3, w, h, 0.0)?;
        for (x, y, pixel) in rgb.enumerate_pixels() {
            for c in 0..3 {
                plane.set(c, x as usize, y as usize, pixel.0[c] as f32 / 255.0);
            }
        }
        Ok(plane)
    }

    pub fn to_rgb_image(&self) -> image::RgbImage {
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = |c: usize| {
                let v = if self.channels == 1 {
                    self.get(0, x as usize, y as usize)
                } else {
                    self.get(c, x as usize, y as usize)
                };
                (v.clamp(0.0, 1.0) * 255.0).round() as u8
            };
            image::Rgb([px(0), px(1), px(2)])
        })
    }

    /// Linear [0,1] -> u8 quantization of a single-channel plane.
    pub fn to_gray_image(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let v = if self.channels == 1 {
                self.get(0, x as usize, y as usize)
            } else {
                0.299 * self.get(0, x as usize, y as usize)
                    + 0.587 * self.get(1, x as usize, y as usize)
                    + 0.114 * self.get(2, x as usize, y as usize)
            };
            image::Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
        })
    }
}

/// Axis-aligned crop window; origin is the image's top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropSpec {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl CropSpec {
    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }

    /// Center in doubled coordinates: exact integers, no halves.
    fn center2(&self) -> (u64, u64) {
        (
            2 * self.x as u64 + self.w as u64,
            2 * self.y as u64 + self.h as u64,
        )
    }

    pub fn in_bounds(&self, width: usize, height: usize) -> bool {
        self.w >= 1
            && self.h >= 1
            && self.x.checked_add(self.w).is_some_and(|r| r <= width)
            && self.y.checked_add(self.h).is_some_and(|b| b <= height)
    }
}

impl fmt::Display for CropSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (cx, cy) = self.center();
        write!(
            f,
            "x={} y={} w={} h={} center=({cx},{cy})",
            self.x, self.y, self.w, self.h
        )
    }
}

/// Chebyshev distance between crop centers.
pub fn center_separation(a: &CropSpec, b: &CropSpec) -> f64 {
    let (ax, ay) = a.center2();
    let (bx, by) = b.center2();
    (ax.abs_diff(bx).max(ay.abs_diff(by)) as f64) / 2.0
}

fn separated(a: &CropSpec, b: &CropSpec, min_sep: usize) -> bool {
    let (ax, ay) = a.center2();
    let (bx, by) = b.center2();
    ax.abs_diff(bx).max(ay.abs_diff(by)) >= 2 * min_sep as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeMode {
    /// Scale the shorter side to the target, then crop the longer axis
    /// centrally. Preserves aspect ratio; discards the overhang.
    AspectCrop,
    /// Plain anisotropic resize straight to the target. Ablation mode.
    Stretch,
}

impl ResizeMode {
    pub fn parse(s: &str) -> Option<ResizeMode> {
        match s {
            "aspect" => Some(ResizeMode::AspectCrop),
            "stretch" => Some(ResizeMode::Stretch),
            _ => None,
        }
    }
}

/// Center-aligned bilinear resample. Exact identity when sizes match.
pub fn bilinear_resize(img: &ImagePlane, tw: usize, th: usize) -> ImagePlane {
    assert!(tw >= 1 && th >= 1, "target size must be positive");
    let (w, h) = (img.width, img.height);
    let sx = w as f64 / tw as f64;
    let sy = h as f64 / th as f64;
    let mut out = Vec::with_capacity(img.channels * tw * th);
    for c in 0..img.channels {
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
                let v00 = img.get(c, x0, y0) as f64;
                let v10 = img.get(c, x1, y0) as f64;
                let v01 = img.get(c, x0, y1) as f64;
                let v11 = img.get(c, x1, y1) as f64;
                let top = v00 + (v10 - v00) * fx;
                let bottom = v01 + (v11 - v01) * fx;
                out.push((top + (bottom - top) * fy) as f32);
            }
        }
    }
    ImagePlane::new(img.channels, tw, th, out).expect("sized by construction")
}

fn crop_window_center(img: &ImagePlane, tw: usize, th: usize) -> ImagePlane {
    let spec = CropSpec {
        x: (img.width - tw) / 2,
        y: (img.height - th) / 2,
        w: tw,
        h: th,
    };
    apply_crop(img, &spec).expect("window fits by construction")
}

/// Resize to exactly `tw` x `th`. AspectCrop scales the shorter side to the
/// target, then center-crops the longer axis.
pub fn resize_to(img: &ImagePlane, tw: usize, th: usize, mode: ResizeMode) -> ImagePlane {
    assert!(tw >= 1 && th >= 1, "target size must be positive");
    match mode {
        ResizeMode::Stretch => bilinear_resize(img, tw, th),
        ResizeMode::AspectCrop => {
            let scale = (tw as f64 / img.width as f64).max(th as f64 / img.height as f64);
            let iw = ((img.width as f64 * scale).round() as usize).max(tw);
            let ih = ((img.height as f64 * scale).round() as usize).max(th);
            let scaled = bilinear_resize(img, iw, ih);
            crop_window_center(&scaled, tw, th)
        }
    }
}

/// Zero-pad the shorter axis on both sides to make the image square; an odd
/// difference puts the extra pixel on the bottom/right. The returned spec
/// locates the original content, so cropping it back is the exact inverse.
pub fn pad_to_square(img: &ImagePlane) -> (ImagePlane, CropSpec) {
    let side = img.width.max(img.height);
    let dx = (side - img.width) / 2;
    let dy = (side - img.height) / 2;
    let mut out = ImagePlane::filled(img.channels, side, side, 0.0).expect("positive side");
    for c in 0..img.channels {
        for y in 0..img.height {
            for x in 0..img.width {
                out.set(c, x + dx, y + dy, img.get(c, x, y));
            }
        }
    }
    (
        out,
        CropSpec {
            x: dx,
            y: dy,
            w: img.width,
            h: img.height,
        },
    )
}

pub fn center_crop(img: &ImagePlane, size: usize) -> Result<(ImagePlane, CropSpec), GeometryError> {
    if img.width < size || img.height < size {
        return Err(GeometryError::TooSmall {
            width: img.width,
            height: img.height,
            size,
        });
    }
    let spec = CropSpec {
        x: (img.width - size) / 2,
        y: (img.height - size) / 2,
        w: size,
        h: size,
    };
    Ok((apply_crop(img, &spec)?, spec))
}

pub fn apply_crop(img: &ImagePlane, spec: &CropSpec) -> Result<ImagePlane, GeometryError> {
    if !spec.in_bounds(img.width, img.height) {
        return Err(GeometryError::BadCrop {
            x: spec.x,
            y: spec.y,
            w: spec.w,
            h: spec.h,
            width: img.width,
            height: img.height,
        });
    }
    let mut out = ImagePlane::filled(img.channels, spec.w, spec.h, 0.0)?;
    for c in 0..img.channels {
        for y in 0..spec.h {
            for x in 0..spec.w {
                out.set(c, x, y, img.get(c, spec.x + x, spec.y + y));
            }
        }
    }
    Ok(out)
}

/// Draw `k` size x size crops by rejection sampling over integer top-left
/// positions. Every accepted crop keeps a Chebyshev center separation of at
/// least `min_sep` from the center crop and from all previously accepted
/// crops. On exhausting `max_attempts`, the error carries whatever was
/// placed so callers can degrade gracefully.
pub fn random_crops(
    img: &ImagePlane,
    size: usize,
    k: usize,
    min_sep: usize,
    seed: u64,
    max_attempts: usize,
) -> Result<Vec<CropSpec>, GeometryError> {
    if img.width < size || img.height < size {
        return Err(GeometryError::TooSmall {
            width: img.width,
            height: img.height,
            size,
        });
    }
    let center = CropSpec {
        x: (img.width - size) / 2,
        y: (img.height - size) / 2,
        w: size,
        h: size,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placed: Vec<CropSpec> = Vec::with_capacity(k);
    for _ in 0..max_attempts {
        if placed.len() == k {
            break;
        }
        let candidate = CropSpec {
            x: rng.gen_range(0..=img.width - size),
            y: rng.gen_range(0..=img.height - size),
            w: size,
            h: size,
        };
        let ok = separated(&candidate, &center, min_sep)
            && placed.iter().all(|p| separated(&candidate, p, min_sep));
        if ok {
            placed.push(candidate);
        }
    }
    if placed.len() == k {
        Ok(placed)
    } else {
        Err(GeometryError::InsufficientSeparation { needed: k, placed })
    }
}

/// Standardize a size x size image into a (3, size, size) tensor:
/// single-channel input is replicated to three channels, then each channel
/// is shifted and scaled by the pretraining-corpus constants.
pub fn normalize_pixels(
    img: &ImagePlane,
    size: usize,
    mean: [f32; 3],
    std: [f32; 3],
) -> Result<Array3<f32>, GeometryError> {
    if img.width != size || img.height != size {
        return Err(GeometryError::BadShape {
            width: img.width,
            height: img.height,
            expected: format!("{size}x{size}"),
        });
    }
    let mut out = Array3::<f32>::zeros((3, size, size));
    for c in 0..3 {
        let src_c = if img.channels == 1 { 0 } else { c };
        for y in 0..size {
            for x in 0..size {
                out[[c, y, x]] = (img.get(src_c, x, y) - mean[c]) / std[c];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_plane(channels: usize, w: usize, h: usize, seed: u64) -> ImagePlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImagePlane::from_fn(channels, w, h, |_, _, _| rng.gen::<f32>()).unwrap()
    }

    #[test]
    fn constructor_rejects_degenerate_shapes() {
        assert!(matches!(
            ImagePlane::new(3, 0, 10, vec![]),
            Err(GeometryError::EmptyImage)
        ));
        assert!(matches!(
            ImagePlane::new(2, 4, 4, vec![0.0; 32]),
            Err(GeometryError::BadChannelCount { got: 2, .. })
        ));
        assert!(matches!(
            ImagePlane::new(1, 4, 4, vec![0.0; 15]),
            Err(GeometryError::DataLength {
                expected: 16,
                got: 15
            })
        ));
    }

    #[test]
    fn same_size_resize_is_identity() {
        let img = random_plane(3, 224, 224, 1);
        let out = resize_to(&img, 224, 224, ResizeMode::AspectCrop);
        assert_eq!(img, out);
        let stretched = resize_to(&img, 224, 224, ResizeMode::Stretch);
        assert_eq!(img, stretched);
    }

    #[test]
    fn aspect_resize_matches_hand_crop_window() {
        // 448x896 (w x h): shorter side 448 scales to 224 giving 224x448,
        // then the height is center-cropped from 448 to 224 at y=112.
        let img = random_plane(3, 448, 896, 2);
        let got = resize_to(&img, 224, 224, ResizeMode::AspectCrop);
        let intermediate = bilinear_resize(&img, 224, 448);
        let window = CropSpec {
            x: 0,
            y: 112,
            w: 224,
            h: 224,
        };
        let oracle = apply_crop(&intermediate, &window).unwrap();
        assert_eq!(got, oracle);
    }

    #[test]
    fn degenerate_aspect_still_hits_target_size() {
        let img = random_plane(3, 10, 2000, 3);
        let out = resize_to(&img, 224, 224, ResizeMode::AspectCrop);
        assert_eq!((out.width(), out.height()), (224, 224));
    }

    #[test]
    fn stretch_mode_ignores_aspect() {
        let img = random_plane(1, 100, 50, 4);
        let out = resize_to(&img, 30, 60, ResizeMode::Stretch);
        assert_eq!((out.width(), out.height()), (30, 60));
    }

    #[test]
    fn pad_wide_image_adds_equal_zero_rows() {
        // 1024 wide x 512 high: pads 256 zero rows above and below.
        let img = ImagePlane::filled(1, 1024, 512, 0.5).unwrap();
        let (padded, spec) = pad_to_square(&img);
        assert_eq!((padded.width(), padded.height()), (1024, 1024));
        assert_eq!((spec.x, spec.y, spec.w, spec.h), (0, 256, 1024, 512));
        for y in 0..1024 {
            let expect = if (256..768).contains(&y) { 0.5 } else { 0.0 };
            assert_eq!(padded.get(0, 0, y), expect, "row {y}");
        }
    }

    #[test]
    fn pad_square_image_is_unchanged() {
        let img = random_plane(3, 100, 100, 5);
        let (padded, spec) = pad_to_square(&img);
        assert_eq!(padded, img);
        assert_eq!((spec.x, spec.y), (0, 0));
    }

    #[test]
    fn pad_odd_difference_goes_below() {
        // 5 wide x 4 high: one zero row, none above, one below.
        let img = ImagePlane::filled(1, 5, 4, 1.0).unwrap();
        let (padded, spec) = pad_to_square(&img);
        assert_eq!((padded.width(), padded.height()), (5, 5));
        assert_eq!(spec.y, 0);
        for x in 0..5 {
            assert_eq!(padded.get(0, x, 0), 1.0);
            assert_eq!(padded.get(0, x, 4), 0.0);
        }
    }

    proptest! {
        #[test]
        fn pad_is_square_sum_preserving_and_invertible(
            w in 1usize..80,
            h in 1usize..80,
            seed in 0u64..500,
        ) {
            let img = random_plane(1, w, h, seed);
            let (padded, spec) = pad_to_square(&img);
            prop_assert_eq!(padded.width(), padded.height());
            prop_assert_eq!(padded.width(), w.max(h));
            // Zero padding adds exact zeros, so the f64 row-major sums match.
            prop_assert_eq!(padded.pixel_sum(), img.pixel_sum());
            prop_assert!(spec.in_bounds(padded.width(), padded.height()));
            let back = apply_crop(&padded, &spec).unwrap();
            prop_assert_eq!(back, img);
        }
    }

    #[test]
    fn center_crop_arithmetic() {
        let img = random_plane(3, 448, 448, 6);
        let (_, spec) = center_crop(&img, 224).unwrap();
        assert_eq!((spec.x, spec.y, spec.w, spec.h), (112, 112, 224, 224));

        let img = random_plane(3, 224, 224, 7);
        let (out, spec) = center_crop(&img, 224).unwrap();
        assert_eq!((spec.x, spec.y), (0, 0));
        assert_eq!(out, img);

        let img = random_plane(3, 200, 300, 8);
        assert!(matches!(
            center_crop(&img, 224),
            Err(GeometryError::TooSmall {
                width: 200,
                height: 300,
                size: 224
            })
        ));
    }

    #[test]
    fn apply_crop_identity_pixel_and_bounds() {
        let img = random_plane(3, 20, 30, 9);
        let full = CropSpec {
            x: 0,
            y: 0,
            w: 20,
            h: 30,
        };
        assert_eq!(apply_crop(&img, &full).unwrap(), img);

        let single = CropSpec {
            x: 0,
            y: 0,
            w: 1,
            h: 1,
        };
        let px = apply_crop(&img, &single).unwrap();
        assert_eq!(px.get(0, 0, 0), img.get(0, 0, 0));

        let oob = CropSpec {
            x: 10,
            y: 0,
            w: 11,
            h: 5,
        };
        assert!(matches!(
            apply_crop(&img, &oob),
            Err(GeometryError::BadCrop { .. })
        ));
    }

    #[test]
    fn random_crops_satisfy_separation_on_large_image() {
        let img = random_plane(3, 1000, 1000, 10);
        let crops = random_crops(&img, 224, 3, 100, 42, 1000).unwrap();
        assert_eq!(crops.len(), 3);
        let center = CropSpec {
            x: 388,
            y: 388,
            w: 224,
            h: 224,
        };
        assert_eq!(center.center(), (500.0, 500.0));
        for (i, a) in crops.iter().enumerate() {
            assert!(a.in_bounds(1000, 1000));
            assert!(
                center_separation(a, &center) >= 100.0,
                "crop {i} too close to center"
            );
            for b in crops.iter().skip(i + 1) {
                assert!(center_separation(a, b) >= 100.0);
            }
        }
    }

    #[test]
    fn random_crops_deterministic_per_seed() {
        let img = random_plane(1, 600, 500, 11);
        let a = random_crops(&img, 224, 3, 100, 7, 1000).unwrap();
        let b = random_crops(&img, 224, 3, 100, 7, 1000).unwrap();
        assert_eq!(a, b);
        let c = random_crops(&img, 224, 3, 100, 8, 1000).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn random_crops_forced_infeasible_on_exact_size() {
        // A 224x224 image admits exactly one crop position, which coincides
        // with the center crop, so nothing can be placed.
        let img = random_plane(3, 224, 224, 12);
        match random_crops(&img, 224, 3, 100, 1, 1000) {
            Err(GeometryError::InsufficientSeparation { needed: 3, placed }) => {
                assert!(placed.is_empty());
            }
            other => panic!("expected InsufficientSeparation, got {other:?}"),
        }
    }

    #[test]
    fn random_crops_rejects_undersized_images() {
        let img = random_plane(3, 100, 300, 13);
        assert!(matches!(
            random_crops(&img, 224, 3, 100, 1, 10),
            Err(GeometryError::TooSmall { .. })
        ));
    }

    proptest! {
        #[test]
        fn random_crop_bounds_and_separation_hold(
            w in 224usize..420,
            h in 224usize..420,
            seed in 0u64..300,
        ) {
            let img = ImagePlane::filled(1, w, h, 0.3).unwrap();
            let center = CropSpec {
                x: (w - 224) / 2,
                y: (h - 224) / 2,
                w: 224,
                h: 224,
            };
            let check = |specs: &[CropSpec]| {
                for (i, a) in specs.iter().enumerate() {
                    assert!(a.in_bounds(w, h));
                    assert!(center_separation(a, &center) >= 100.0);
                    for b in specs.iter().skip(i + 1) {
                        assert!(center_separation(a, b) >= 100.0);
                    }
                }
            };
            match random_crops(&img, 224, 3, 100, seed, 200) {
                Ok(crops) => {
                    prop_assert_eq!(crops.len(), 3);
                    check(&crops);
                }
                Err(GeometryError::InsufficientSeparation { placed, .. }) => check(&placed),
                Err(other) => return Err(TestCaseError::fail(format!("{other}"))),
            }
        }
    }

    #[test]
    fn normalize_zero_image_gives_negative_mean_over_std() {
        let img = ImagePlane::filled(3, 8, 8, 0.0).unwrap();
        let mean = [0.485, 0.456, 0.406];
        let std = [0.229, 0.224, 0.225];
        let t = normalize_pixels(&img, 8, mean, std).unwrap();
        for c in 0..3 {
            let want = -mean[c] / std[c];
            assert!((t[[c, 3, 5]] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn normalize_replicates_single_channel() {
        let img = ImagePlane::filled(1, 8, 8, 0.4).unwrap();
        let mean = [0.1, 0.2, 0.3];
        let std = [0.5, 0.5, 0.5];
        let t = normalize_pixels(&img, 8, mean, std).unwrap();
        for c in 0..3 {
            let want = (0.4 - mean[c]) / std[c];
            assert!((t[[c, 0, 0]] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn normalize_rejects_wrong_spatial_size() {
        let img = ImagePlane::filled(3, 100, 100, 0.4).unwrap();
        assert!(matches!(
            normalize_pixels(&img, 224, [0.0; 3], [1.0; 3]),
            Err(GeometryError::BadShape { .. })
        ));
    }

    #[test]
    fn normalize_tensor_layout_is_chw() {
        let mut img = ImagePlane::filled(3, 4, 4, 0.0).unwrap();
        img.set(1, 2, 3, 1.0); // channel 1, x=2, y=3
        let t = normalize_pixels(&img, 4, [0.0; 3], [1.0; 3]).unwrap();
        assert_eq!(t[[1, 3, 2]], 1.0);
        assert_eq!(t[[1, 2, 3]], 0.0);
    }
}
