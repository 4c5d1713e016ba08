//! A small named-layer CNN with hand-written backpropagation.
//!
//! ```text
//! conv1 3×3 (8) → relu → maxpool 2 → conv2 3×3 (16) → relu → maxpool 2
//!   → flatten → dense1 (32) → relu → head (C)
//! ```
//!
//! Convolutions use zero "same" padding. Parameters live in one flat
//! vector; [`Architecture::layout`] maps layer names onto ranges of it.
//! Convolution weights are stored `[ky][kx][in][out]`, dense weights
//! `[in][out]`.

mod loss;
mod net;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::math::sqrt;
use crate::rng::RngStream;
use crate::{Error, Result};

pub use loss::{head_loss, HeadKind};
pub use net::{backward, backward_partial, forward, forward_cached, predict, ForwardCache, Logits};

pub const LAYER_NAMES: [&str; 4] = ["conv1", "conv2", "dense1", "head"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub side: usize,
    pub channels: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub dense1: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSlot {
    pub name: &'static str,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
    pub weight_shape: Vec<usize>,
    pub fan_in: usize,
}

impl Architecture {
    /// The standard 8/16/32 network for `side`×`side` inputs.
    pub fn new(side: usize, channels: usize, classes: usize) -> Result<Self> {
        let arch = Self { side, channels, conv1: 8, conv2: 16, dense1: 32, classes };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.side < 4 || !self.side.is_multiple_of(4) {
            return Err(Error::invalid(format!("input side must be a positive multiple of 4, got {}", self.side)));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::invalid("input channels must be 1 or 3"));
        }
        if self.conv1 == 0 || self.conv2 == 0 || self.dense1 == 0 || self.classes < 2 {
            return Err(Error::invalid("layer widths must be positive and classes >= 2"));
        }
        Ok(())
    }

    pub fn with_classes(&self, classes: usize) -> Self {
        Self { classes, ..*self }
    }

    pub(crate) fn flat_len(&self) -> usize {
        (self.side / 4) * (self.side / 4) * self.conv2
    }

    pub fn layout(&self) -> Vec<LayerSlot> {
        let shapes = [
            (vec![3, 3, self.channels, self.conv1], 9 * self.channels, self.conv1),
            (vec![3, 3, self.conv1, self.conv2], 9 * self.conv1, self.conv2),
            (vec![self.flat_len(), self.dense1], self.flat_len(), self.dense1),
            (vec![self.dense1, self.classes], self.dense1, self.classes),
        ];
        let mut offset = 0;
        LAYER_NAMES
            .iter()
            .zip(shapes)
            .map(|(&name, (shape, fan_in, out))| {
                let wlen: usize = shape.iter().product();
                let weight = offset..offset + wlen;
                let bias = weight.end..weight.end + out;
                offset = bias.end;
                LayerSlot { name, weight, bias, weight_shape: shape, fan_in }
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layout().last().map_or(0, |s| s.bias.end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    values: Vec<f64>,
}

/// Same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    arch: Architecture,
    values: Vec<f64>,
}

macro_rules! flat_store {
    ($t:ty) => {
        impl $t {
            pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
                arch.validate()?;
                if values.len() != arch.param_count() {
                    return Err(Error::Shape(format!(
                        "architecture needs {} values, got {}",
                        arch.param_count(),
                        values.len()
                    )));
                }
                Ok(Self { arch, values })
            }

            pub fn zeros(arch: &Architecture) -> Self {
                Self { arch: *arch, values: vec![0.0; arch.param_count()] }
            }

            pub fn arch(&self) -> &Architecture {
                &self.arch
            }

            pub fn values(&self) -> &[f64] {
                &self.values
            }

            pub fn values_mut(&mut self) -> &mut [f64] {
                &mut self.values
            }

            fn slot(&self, name: &str) -> Result<LayerSlot> {
                self.arch
                    .layout()
                    .into_iter()
                    .find(|s| s.name == name)
                    .ok_or_else(|| Error::invalid(format!("no layer named `{name}`")))
            }

            /// `(weight, bias)` slices of a named layer.
            pub fn layer(&self, name: &str) -> Result<(&[f64], &[f64])> {
                let s = self.slot(name)?;
                Ok((&self.values[s.weight], &self.values[s.bias]))
            }

            pub fn layer_mut(&mut self, name: &str) -> Result<(&mut [f64], &mut [f64])> {
                let s = self.slot(name)?;
                let (head, tail) = self.values.split_at_mut(s.bias.start);
                Ok((&mut head[s.weight], &mut tail[..s.bias.len()]))
            }
        }
    };
}

flat_store!(ModelParams);
flat_store!(Gradients);

impl ModelParams {
    /// FNV-1a over the bit patterns; identifies a parameter snapshot.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.values {
            for b in v.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Rounds every value to the nearest `f32`, for single-precision runs.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            *v = f64::from(*v as f32);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    #[default]
    Kaiming,
}

/// Kaiming-uniform fan-in weights (bound `√(6 / fan_in)`), zero biases.
pub fn init_model(arch: &Architecture, rng: &mut RngStream, _scheme: InitScheme) -> Result<ModelParams> {
    arch.validate()?;
    let mut params = ModelParams::zeros(arch);
    for slot in arch.layout() {
        init_slot(&mut params.values, &slot, rng);
    }
    Ok(params)
}

fn init_slot(values: &mut [f64], slot: &LayerSlot, rng: &mut RngStream) {
    let bound = sqrt(6.0 / slot.fan_in as f64);
    for v in &mut values[slot.weight.clone()] {
        *v = rng.uniform_in(-bound, bound);
    }
    for v in &mut values[slot.bias.clone()] {
        *v = 0.0;
    }
}

/// Replaces the head with a freshly initialized one for `classes` outputs;
/// every other layer is copied bit for bit.
pub fn reinit_head(params: &ModelParams, classes: usize, rng: &mut RngStream) -> Result<ModelParams> {
    let arch = params.arch.with_classes(classes);
    arch.validate()?;
    let mut out = ModelParams::zeros(&arch);
    let head_start = arch.layout()[3].weight.start;
    out.values[..head_start].copy_from_slice(&params.values[..head_start]);
    init_slot(&mut out.values, &arch.layout()[3], rng);
    Ok(out)
}

/// Per-layer trainable flags, serialized as `{"conv1": bool, ...}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, bool>", into = "BTreeMap<String, bool>")]
pub struct FreezeMask {
    trainable: [bool; 4],
}

impl TryFrom<BTreeMap<String, bool>> for FreezeMask {
    type Error = Error;

    fn try_from(map: BTreeMap<String, bool>) -> Result<Self> {
        if let Some(k) = map.keys().find(|k| !LAYER_NAMES.contains(&k.as_str())) {
            return Err(Error::invalid(format!("freeze mask names unknown layer `{k}`")));
        }
        let mut trainable = [false; 4];
        for (i, name) in LAYER_NAMES.iter().enumerate() {
            trainable[i] = *map
                .get(*name)
                .ok_or_else(|| Error::invalid(format!("freeze mask is missing layer `{name}`")))?;
        }
        Ok(Self { trainable })
    }
}

impl From<FreezeMask> for BTreeMap<String, bool> {
    fn from(m: FreezeMask) -> Self {
        LAYER_NAMES.iter().zip(m.trainable).map(|(n, t)| (n.to_string(), t)).collect()
    }
}

impl Default for FreezeMask {
    fn default() -> Self {
        Self::all_trainable()
    }
}

impl FreezeMask {
    pub fn all_trainable() -> Self {
        Self { trainable: [true; 4] }
    }

    pub fn all_frozen() -> Self {
        Self { trainable: [false; 4] }
    }

    /// Top `count` layers trainable (head first), the rest frozen.
    pub fn top_unfrozen(count: usize) -> Self {
        let mut trainable = [false; 4];
        for (i, t) in trainable.iter_mut().enumerate() {
            *t = i + count >= 4;
        }
        Self { trainable }
    }

    pub fn from_frozen(frozen: &[&str]) -> Result<Self> {
        let mut m = Self::all_trainable();
        for name in frozen {
            let i = LAYER_NAMES
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::invalid(format!("unknown layer `{name}`")))?;
            m.trainable[i] = false;
        }
        Ok(m)
    }

    pub fn is_trainable(&self, layer: usize) -> bool {
        self.trainable[layer]
    }

    /// Index of the lowest trainable layer, if any.
    pub fn lowest_trainable(&self) -> Option<usize> {
        self.trainable.iter().position(|&t| t)
    }

    pub fn any_trainable(&self) -> bool {
        self.trainable.iter().any(|&t| t)
    }

    /// Short label: the comma-joined trainable layers, or `none`.
    pub fn label(&self) -> String {
        let names: Vec<&str> = LAYER_NAMES.iter().zip(self.trainable).filter(|(_, t)| *t).map(|(n, _)| *n).collect();
        if names.is_empty() {
            "none".to_string()
        } else {
            names.join("+")
        }
    }
}

/// Cumulative unfreeze states, from all frozen down to all trainable.
pub fn unfreeze_sequence() -> Vec<FreezeMask> {
    (0..=4).map(FreezeMask::top_unfrozen).collect()
}

/// Zeroes the gradients of non-trainable layers.
pub fn apply_freeze(mut grads: Gradients, mask: &FreezeMask) -> Gradients {
    for (i, slot) in grads.arch.layout().into_iter().enumerate() {
        if !mask.is_trainable(i) {
            grads.values[slot.weight].fill(0.0);
            grads.values[slot.bias].fill(0.0);
        }
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;

    fn arch() -> Architecture {
        Architecture::new(16, 3, 5).unwrap()
    }

    #[test]
    fn layout_is_contiguous() {
        let a = arch();
        let l = a.layout();
        assert_eq!(l[0].weight.start, 0);
        for w in l.windows(2) {
            assert_eq!(w[0].bias.end, w[1].weight.start);
        }
        assert_eq!(l[2].weight_shape, vec![4 * 4 * 16, 32]);
        assert_eq!(a.param_count(), 27 * 8 + 8 + 72 * 16 + 16 + 256 * 32 + 32 + 32 * 5 + 5);
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let a = init_model(&arch(), &mut derive_rng(1, "init"), InitScheme::Kaiming).unwrap();
        let b = init_model(&arch(), &mut derive_rng(1, "init"), InitScheme::Kaiming).unwrap();
        assert_eq!(a, b);
        for name in LAYER_NAMES {
            assert!(a.layer(name).unwrap().1.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn kaiming_std_matches_closed_form() {
        // U(-b, b) with b = √(6/fan_in) has std b/√3 = √(2/fan_in)
        let expected = (2.0f64 / 27.0).sqrt();
        for seed in 0..10 {
            let p = init_model(&arch(), &mut derive_rng(seed, "init"), InitScheme::Kaiming).unwrap();
            let w = p.layer("conv1").unwrap().0;
            let m = w.iter().sum::<f64>() / w.len() as f64;
            let sd = (w.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / w.len() as f64).sqrt();
            assert!((sd - expected).abs() < 0.2 * expected, "seed {seed}: {sd} vs {expected}");
        }
    }

    #[test]
    fn head_reinit_keeps_body() {
        let p = init_model(&arch(), &mut derive_rng(1, "init"), InitScheme::Kaiming).unwrap();
        let q = reinit_head(&p, 3, &mut derive_rng(2, "head")).unwrap();
        assert_eq!(q.arch().classes, 3);
        for name in ["conv1", "conv2", "dense1"] {
            assert_eq!(p.layer(name).unwrap(), q.layer(name).unwrap());
        }
        assert_eq!(q.layer("head").unwrap().0.len(), 32 * 3);
    }

    #[test]
    fn freeze_mask_serde_and_sequence() {
        let seq = unfreeze_sequence();
        assert_eq!(seq.len(), 5);
        assert_eq!(seq[0], FreezeMask::all_frozen());
        assert_eq!(seq[1].label(), "head");
        assert_eq!(seq[2].label(), "dense1+head");
        assert_eq!(seq[4], FreezeMask::all_trainable());
        let m = FreezeMask::from_frozen(&["conv1"]).unwrap();
        assert_eq!(m, seq[3]);
        let map: BTreeMap<String, bool> = m.into();
        assert_eq!(FreezeMask::try_from(map.clone()).unwrap(), m);
        let mut bad = map.clone();
        bad.remove("head");
        assert!(FreezeMask::try_from(bad).is_err());
        let mut extra = map;
        extra.insert("conv9".into(), true);
        assert!(FreezeMask::try_from(extra).is_err());
    }

    #[test]
    fn apply_freeze_cases() {
        let a = arch();
        let mut g = Gradients::zeros(&a);
        g.values_mut().iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 + 1.0);
        assert!(apply_freeze(g.clone(), &FreezeMask::all_frozen()).values().iter().all(|&v| v == 0.0));
        assert_eq!(apply_freeze(g.clone(), &FreezeMask::all_trainable()), g);
        let only = apply_freeze(g.clone(), &FreezeMask::from_frozen(&["conv1"]).unwrap());
        assert!(only.layer("conv1").unwrap().0.iter().all(|&v| v == 0.0));
        assert_eq!(only.layer("conv2").unwrap(), g.layer("conv2").unwrap());
        assert_eq!(only.layer("head").unwrap(), g.layer("head").unwrap());
    }
}
