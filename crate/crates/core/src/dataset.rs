//! Labeled image collections and the synthetic recycling-style generator.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::math::{abs, cos, deg_to_rad, floor, sin, tan};
use crate::rng::RngStream;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub image: Image,
    pub label: usize,
}

/// Ordered samples plus lexicographically ordered class names.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(class_names: Vec<String>, samples: Vec<LabeledSample>) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::invalid("zero classes"));
        }
        if let Some(s) = samples.iter().find(|s| s.label >= class_names.len()) {
            return Err(Error::invalid(format!(
                "label {} out of range for {} classes",
                s.label,
                class_names.len()
            )));
        }
        if let Some(first) = samples.first() {
            if samples.iter().any(|s| !s.image.same_dims(&first.image)) {
                return Err(Error::Shape("mixed image dimensions".to_string()));
            }
        }
        Ok(Self { samples, class_names })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &LabeledSample {
        &self.samples[i]
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// `(height, width, channels)` of the images, if any.
    pub fn image_dims(&self) -> Option<(usize, usize, usize)> {
        self.samples.first().map(|s| (s.image.height(), s.image.width(), s.image.channels()))
    }
}

/// Shapes rendered for the synthetic classes, in class order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    FilledRectangle,
    Circle,
    Triangle,
    Stripes,
    Ring,
}

/// Class names sort in the same order as [`SYNTHETIC_SHAPES`].
pub const SYNTHETIC_CLASSES: [&str; 5] = ["cardboard", "glass", "metal", "paper", "plastic"];
pub const SYNTHETIC_SHAPES: [Shape; 5] =
    [Shape::FilledRectangle, Shape::Circle, Shape::Triangle, Shape::Stripes, Shape::Ring];
const BASE_HUES: [f64; 5] = [30.0, 180.0, 240.0, 60.0, 320.0];

/// Pose variation applied when rendering the object.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseSpec {
    /// Fraction of samples drawn with a random rotation and shear.
    pub variant_fraction: f64,
    /// Rotation range in degrees for variant samples.
    pub rotation: f64,
    /// Horizontal shear range in degrees for variant samples.
    pub shear: f64,
    /// Object scale drawn from `[1 - scale_jitter, 1 + scale_jitter]` for every sample.
    pub scale_jitter: f64,
    /// Center offset range as a fraction of the half side, every sample.
    pub translate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub side: usize,
    /// Standard deviation of the additive Gaussian pixel noise.
    pub noise: f64,
    #[serde(default = "three")]
    pub channels: usize,
    /// Per-sample hue offset range in degrees around the class hue.
    #[serde(default)]
    pub hue_jitter: f64,
    /// Ignore class hues and draw a uniform random hue per sample.
    #[serde(default)]
    pub random_hue: bool,
    #[serde(default)]
    pub pose: PoseSpec,
    /// Whole-image brightness factor range; 0 keeps the set brightness-uniform.
    #[serde(default)]
    pub brightness_jitter: f64,
    /// Mirror half of the samples horizontally, as in an already flip-augmented set.
    #[serde(default)]
    pub preflip_horizontal: bool,
}

fn three() -> usize {
    3
}

impl SyntheticSpec {
    pub fn new(per_class: usize, side: usize, noise: f64) -> Self {
        Self {
            classes: 5,
            per_class,
            side,
            noise,
            channels: 3,
            hue_jitter: 0.0,
            random_hue: false,
            pose: PoseSpec::default(),
            brightness_jitter: 0.0,
            preflip_horizontal: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.classes) {
            return Err(Error::invalid(format!("classes must be in 1..=5, got {}", self.classes)));
        }
        if self.per_class < 1 {
            return Err(Error::invalid("per_class must be >= 1"));
        }
        if self.side < 16 {
            return Err(Error::invalid(format!("side must be >= 16, got {}", self.side)));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::invalid("channels must be 1 or 3"));
        }
        let ranges = [
            self.noise,
            self.hue_jitter,
            self.brightness_jitter,
            self.pose.rotation,
            self.pose.shear,
            self.pose.scale_jitter,
            self.pose.translate,
        ];
        if ranges.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("synthetic ranges must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.pose.variant_fraction) {
            return Err(Error::invalid("variant_fraction must be in [0, 1]"));
        }
        if self.pose.shear >= 90.0 || self.pose.scale_jitter >= 1.0 {
            return Err(Error::invalid("shear must be < 90 degrees and scale_jitter < 1"));
        }
        Ok(())
    }
}

/// Renders `spec.per_class` images for each of the first `spec.classes`
/// synthetic classes. Sample `(c, i)` uses its own child stream, so
/// growing `per_class` leaves earlier samples unchanged.
pub fn generate_synthetic(spec: &SyntheticSpec, rng: &RngStream) -> Result<Dataset> {
    spec.validate()?;
    let mut samples = Vec::with_capacity(spec.classes * spec.per_class);
    for class in 0..spec.classes {
        for i in 0..spec.per_class {
            let mut r = rng.child(&format!("{class}/{i}"));
            samples.push(LabeledSample { image: render(spec, class, &mut r), label: class });
        }
    }
    let names = SYNTHETIC_CLASSES[..spec.classes].iter().map(|s| s.to_string()).collect();
    Dataset::new(names, samples)
}

fn hsv_to_rgb(hue_deg: f64, s: f64, v: f64) -> [f64; 3] {
    let h = (((hue_deg % 360.0) + 360.0) % 360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - abs(h % 2.0 - 1.0));
    let (r, g, b) = match floor(h) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Membership test in object-local coordinates (object fits in [-0.6, 0.6]²).
fn inside(shape: Shape, s: f64, t: f64) -> bool {
    match shape {
        Shape::FilledRectangle => abs(s) <= 0.62 && abs(t) <= 0.34,
        Shape::Circle => s * s + t * t <= 0.52 * 0.52,
        Shape::Triangle => {
            // apex at the top (negative t), base at t = 0.45
            (-0.55..=0.45).contains(&t) && abs(s) <= 0.6 * (t + 0.55)
        }
        Shape::Stripes => {
            abs(s) <= 0.55 && abs(t) <= 0.55 && (floor((t + 0.55) / 0.22) as i64) % 2 == 0
        }
        Shape::Ring => {
            let r2 = s * s + t * t;
            (0.3 * 0.3..=0.58 * 0.58).contains(&r2)
        }
    }
}

const BACKGROUND: f64 = 0.35;
const SUPERSAMPLE: usize = 3;

fn render(spec: &SyntheticSpec, class: usize, rng: &mut RngStream) -> Image {
    let shape = SYNTHETIC_SHAPES[class];
    let hue = if spec.random_hue {
        rng.uniform_in(0.0, 360.0)
    } else {
        BASE_HUES[class] + rng.uniform_in(-spec.hue_jitter, spec.hue_jitter)
    };
    let color = hsv_to_rgb(hue, 0.75, 0.85);
    let pose = &spec.pose;
    let variant = pose.variant_fraction > 0.0 && rng.bernoulli(pose.variant_fraction);
    let (angle, shear) = if variant {
        (
            deg_to_rad(rng.uniform_in(-pose.rotation, pose.rotation)),
            deg_to_rad(rng.uniform_in(-pose.shear, pose.shear)),
        )
    } else {
        (0.0, 0.0)
    };
    let scale = rng.uniform_in(1.0 - pose.scale_jitter, 1.0 + pose.scale_jitter);
    let dx = rng.uniform_in(-pose.translate, pose.translate);
    let dy = rng.uniform_in(-pose.translate, pose.translate);
    let brightness = rng.uniform_in(1.0 - spec.brightness_jitter, 1.0 + spec.brightness_jitter);
    let flip = spec.preflip_horizontal && rng.bernoulli(0.5);

    // World point p = center + R * Sh * scale * q; invert for object coords q.
    let (sn, cs) = (sin(angle), cos(angle));
    let k = tan(shear);
    let n = spec.side;
    let half = n as f64 / 2.0;
    let mut data = vec![0.0; n * n * spec.channels];
    let sub = SUPERSAMPLE as f64;
    for y in 0..n {
        for x in 0..n {
            let mut coverage = 0.0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = (x as f64 + (sx as f64 + 0.5) / sub - half) / half - dx;
                    let py = (y as f64 + (sy as f64 + 0.5) / sub - half) / half - dy;
                    // undo rotation
                    let rx = cs * px + sn * py;
                    let ry = -sn * px + cs * py;
                    // undo shear x' = x + k*y, then scale
                    let s = (rx - k * ry) / scale;
                    let t = ry / scale;
                    if inside(shape, s, t) {
                        coverage += 1.0;
                    }
                }
            }
            coverage /= sub * sub;
            let ox = if flip { n - 1 - x } else { x };
            let base = (y * n + ox) * spec.channels;
            if spec.channels == 3 {
                for c in 0..3 {
                    data[base + c] = coverage * color[c] + (1.0 - coverage) * BACKGROUND;
                }
            } else {
                let luma = 0.299 * color[0] + 0.587 * color[1] + 0.114 * color[2];
                data[base] = coverage * luma + (1.0 - coverage) * BACKGROUND;
            }
        }
    }
    for v in &mut data {
        let noisy = if spec.noise > 0.0 { *v * brightness + spec.noise * rng.gaussian() } else { *v * brightness };
        *v = noisy.clamp(0.0, 1.0);
    }
    Image::from_raw_unchecked(n, n, spec.channels, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;

    #[test]
    fn same_seed_same_dataset() {
        let spec = SyntheticSpec::new(10, 32, 0.05);
        let a = generate_synthetic(&spec, &derive_rng(7, "data")).unwrap();
        let b = generate_synthetic(&spec, &derive_rng(7, "data")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_classes_are_constant() {
        let spec = SyntheticSpec::new(4, 16, 0.0);
        let ds = generate_synthetic(&spec, &derive_rng(3, "data")).unwrap();
        for c in 0..5 {
            let imgs: Vec<_> = ds.samples().iter().filter(|s| s.label == c).collect();
            assert!(imgs.windows(2).all(|w| w[0].image == w[1].image));
        }
        // and classes differ from each other
        assert_ne!(ds.sample(0).image, ds.sample(4).image);
    }

    #[test]
    fn counts_per_class() {
        let spec = SyntheticSpec::new(50, 16, 0.1);
        let ds = generate_synthetic(&spec, &derive_rng(1, "data")).unwrap();
        assert_eq!(ds.len(), 250);
        assert_eq!(ds.class_counts(), vec![50; 5]);
        let other = generate_synthetic(&spec, &derive_rng(2, "data")).unwrap();
        assert_eq!(other.class_counts(), vec![50; 5]);
        assert_ne!(ds, other);
    }

    #[test]
    fn class_names_are_sorted() {
        let mut sorted = SYNTHETIC_CLASSES;
        sorted.sort();
        assert_eq!(sorted, SYNTHETIC_CLASSES);
    }

    #[test]
    fn preconditions() {
        assert!(generate_synthetic(&SyntheticSpec::new(0, 32, 0.0), &derive_rng(0, "d")).is_err());
        assert!(generate_synthetic(&SyntheticSpec::new(1, 8, 0.0), &derive_rng(0, "d")).is_err());
    }

    #[test]
    fn rejects_bad_labels_and_empty_classes() {
        let img = Image::filled(2, 2, 1, 0.0).unwrap();
        assert!(Dataset::new(vec![], vec![]).is_err());
        let err = Dataset::new(vec!["a".into()], vec![LabeledSample { image: img, label: 1 }]);
        assert!(err.is_err());
    }
}
