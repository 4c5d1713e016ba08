//! Flip, rotation, shear, zoom and brightness augmentation.
//!
//! Geometry is applied as one inverse-mapped affine warp about the image
//! center with bilinear interpolation and nearest-edge fill. Flips and
//! multiples of 90° take exact index-permutation paths.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::image::Image;
use crate::math::{abs, cos, deg_to_rad, floor, sin, tan};
use crate::rng::RngStream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSpec {
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    /// Degrees; angles drawn from `[-r, r]`.
    pub rotation_range: f64,
    /// Degrees in `[0, 90)`; horizontal shear angle drawn from `[-s, s]`.
    pub shear_range: f64,
    /// Scale drawn from `[1 - z, 1 + z]`, clamped to `[0.05, 2]`.
    pub zoom_range: f64,
    /// Brightness factor drawn from `[1 - b, 1 + b]`, clamped to `>= 0`.
    pub brightness_range: f64,
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        let ranges = [self.rotation_range, self.shear_range, self.zoom_range, self.brightness_range];
        if ranges.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::invalid(format!("augmentation ranges must be finite and >= 0: {self:?}")));
        }
        if self.shear_range >= 90.0 {
            return Err(Error::invalid(format!("shear_range must be < 90 degrees, got {}", self.shear_range)));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        *self == AugmentSpec::default()
    }

    /// Field-wise union: flips are OR-ed, ranges take the maximum.
    pub fn union(&self, other: &AugmentSpec) -> AugmentSpec {
        AugmentSpec {
            horizontal_flip: self.horizontal_flip || other.horizontal_flip,
            vertical_flip: self.vertical_flip || other.vertical_flip,
            rotation_range: self.rotation_range.max(other.rotation_range),
            shear_range: self.shear_range.max(other.shear_range),
            zoom_range: self.zoom_range.max(other.zoom_range),
            brightness_range: self.brightness_range.max(other.brightness_range),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub flip_h: bool,
    pub flip_v: bool,
    /// Degrees.
    pub angle: f64,
    /// Degrees.
    pub shear: f64,
    pub scale: f64,
    pub brightness: f64,
}

impl TransformParams {
    pub const IDENTITY: TransformParams =
        TransformParams { flip_h: false, flip_v: false, angle: 0.0, shear: 0.0, scale: 1.0, brightness: 1.0 };
}

pub const MIN_SCALE: f64 = 0.05;
pub const MAX_SCALE: f64 = 2.0;

/// Draws one set of transform parameters. Disabled components consume no draws.
pub fn sample_params(spec: &AugmentSpec, rng: &mut RngStream) -> TransformParams {
    let mut p = TransformParams::IDENTITY;
    if spec.horizontal_flip {
        p.flip_h = rng.bernoulli(0.5);
    }
    if spec.vertical_flip {
        p.flip_v = rng.bernoulli(0.5);
    }
    if spec.rotation_range > 0.0 {
        p.angle = rng.uniform_in(-spec.rotation_range, spec.rotation_range);
    }
    if spec.shear_range > 0.0 {
        p.shear = rng.uniform_in(-spec.shear_range, spec.shear_range);
    }
    if spec.zoom_range > 0.0 {
        p.scale = rng.uniform_in(1.0 - spec.zoom_range, 1.0 + spec.zoom_range).clamp(MIN_SCALE, MAX_SCALE);
    }
    if spec.brightness_range > 0.0 {
        p.brightness = rng.uniform_in(1.0 - spec.brightness_range, 1.0 + spec.brightness_range).max(0.0);
    }
    p
}

/// Row-major 2×3 forward affine `[a b tx; c d ty]` acting on pixel
/// coordinates relative to the image center.
pub type Affine = [[f64; 3]; 2];

pub const IDENTITY_AFFINE: Affine = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];

/// Rotation ∘ shear ∘ scale about the center, in (x, y) pixel coordinates.
pub fn compose_affine(angle_deg: f64, shear_deg: f64, scale: f64) -> Affine {
    let (s, c) = (sin(deg_to_rad(angle_deg)), cos(deg_to_rad(angle_deg)));
    let k = tan(deg_to_rad(shear_deg));
    // R = [c -s; s c], Sh = [1 k; 0 1], S = scale·I
    let a = c * scale;
    let b = (c * k - s) * scale;
    let cc = s * scale;
    let d = (s * k + c) * scale;
    [[a, b, 0.0], [cc, d, 0.0]]
}

fn snap(v: f64) -> Option<i8> {
    let r = floor(v + 0.5);
    if abs(v - r) < 1e-9 && (-1.0..=1.0).contains(&r) {
        Some(r as i8)
    } else {
        None
    }
}

/// Exact permutation path for signed-permutation matrices with no translation.
fn permutation_warp(image: &Image, m: &Affine) -> Option<Image> {
    if abs(m[0][2]) > 1e-12 || abs(m[1][2]) > 1e-12 {
        return None;
    }
    let (a, b, c, d) = (snap(m[0][0])?, snap(m[0][1])?, snap(m[1][0])?, snap(m[1][1])?);
    let signed_perm = (a != 0 && d != 0 && b == 0 && c == 0) || (a == 0 && d == 0 && b != 0 && c != 0);
    if !signed_perm {
        return None;
    }
    let (h, w, ch) = (image.height(), image.width(), image.channels());
    if b != 0 && h != w {
        return None;
    }
    // inverse of a signed permutation is its transpose
    let (ia, ib, ic, id) = (a, c, b, d);
    let src = image.data();
    let mut out = vec![0.0; src.len()];
    // doubled centered coordinates keep everything integral
    let (cx2, cy2) = (w as i64 - 1, h as i64 - 1);
    for y in 0..h {
        for x in 0..w {
            let dx = 2 * x as i64 - cx2;
            let dy = 2 * y as i64 - cy2;
            let sx = (i64::from(ia) * dx + i64::from(ib) * dy + cx2) / 2;
            let sy = (i64::from(ic) * dx + i64::from(id) * dy + cy2) / 2;
            let s = (sy as usize * w + sx as usize) * ch;
            let o = (y * w + x) * ch;
            out[o..o + ch].copy_from_slice(&src[s..s + ch]);
        }
    }
    Some(Image::from_raw_unchecked(h, w, ch, out))
}

/// Warps `image` by the forward affine `matrix` about its center.
pub fn warp_affine(image: &Image, matrix: &Affine) -> Result<Image> {
    let [[a, b, tx], [c, d, ty]] = *matrix;
    let det = a * d - b * c;
    if !det.is_finite() || abs(det) < 1e-12 {
        return Err(Error::SingularMatrix(det));
    }
    if let Some(img) = permutation_warp(image, matrix) {
        return Ok(img);
    }
    let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
    let (h, w, ch) = (image.height(), image.width(), image.channels());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (maxx, maxy) = ((w - 1) as f64, (h - 1) as f64);
    let src = image.data();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx - tx;
            let dy = y as f64 - cy - ty;
            let sx = (ia * dx + ib * dy + cx).clamp(0.0, maxx);
            let sy = (ic * dx + id * dy + cy).clamp(0.0, maxy);
            let x0 = floor(sx) as usize;
            let y0 = floor(sy) as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = sx - x0 as f64;
            let fy = sy - y0 as f64;
            let o = (y * w + x) * ch;
            for k in 0..ch {
                let v00 = src[(y0 * w + x0) * ch + k];
                let v01 = src[(y0 * w + x1) * ch + k];
                let v10 = src[(y1 * w + x0) * ch + k];
                let v11 = src[(y1 * w + x1) * ch + k];
                // lerp form keeps constant regions exactly constant
                let top = v00 + fx * (v01 - v00);
                let bottom = v10 + fx * (v11 - v10);
                out[o + k] = (top + fy * (bottom - top)).clamp(0.0, 1.0);
            }
        }
    }
    Ok(Image::from_raw_unchecked(h, w, ch, out))
}

pub fn flip_horizontal(image: &Image) -> Image {
    let (h, w, ch) = (image.height(), image.width(), image.channels());
    let src = image.data();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let s = (y * w + (w - 1 - x)) * ch;
            let o = (y * w + x) * ch;
            out[o..o + ch].copy_from_slice(&src[s..s + ch]);
        }
    }
    Image::from_raw_unchecked(h, w, ch, out)
}

pub fn flip_vertical(image: &Image) -> Image {
    let (h, w, ch) = (image.height(), image.width(), image.channels());
    let row = w * ch;
    let src = image.data();
    let mut out = Vec::with_capacity(src.len());
    for y in (0..h).rev() {
        out.extend_from_slice(&src[y * row..(y + 1) * row]);
    }
    Image::from_raw_unchecked(h, w, ch, out)
}

/// Flips, then the combined affine, then brightness with clamping.
pub fn apply(image: &Image, params: &TransformParams) -> Image {
    let mut img = if params.flip_h { flip_horizontal(image) } else { image.clone() };
    if params.flip_v {
        img = flip_vertical(&img);
    }
    if params.angle != 0.0 || params.shear != 0.0 || params.scale != 1.0 {
        let m = compose_affine(params.angle, params.shear, params.scale.clamp(MIN_SCALE, MAX_SCALE));
        // shear < 90° and scale >= 0.05 keep the matrix invertible
        img = warp_affine(&img, &m).unwrap_or(img);
    }
    if params.brightness != 1.0 {
        let (h, w, ch) = (img.height(), img.width(), img.channels());
        let data = img.into_data().into_iter().map(|v| (v * params.brightness).clamp(0.0, 1.0)).collect();
        img = Image::from_raw_unchecked(h, w, ch, data);
    }
    img
}

/// Augments the images at `indices` with one fresh draw per sample.
pub fn augment_batch(dataset: &Dataset, indices: &[usize], spec: &AugmentSpec, rng: &mut RngStream) -> Vec<Image> {
    indices
        .iter()
        .map(|&i| {
            let img = &dataset.sample(i).image;
            if spec.is_identity() {
                img.clone()
            } else {
                apply(img, &sample_params(spec, rng))
            }
        })
        .collect()
}
