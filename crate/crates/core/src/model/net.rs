//! Forward and backward passes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Architecture, Gradients, ModelParams};
use crate::image::Image;
use crate::{Error, Result};

/// Row-major `rows × cols` matrix of class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Logits {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Argmax per row, lowest index on ties.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|i| {
                let r = self.row(i);
                let mut best = 0;
                for (j, &v) in r.iter().enumerate().skip(1) {
                    if v > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

struct SampleCache {
    input: Vec<f64>,
    a1: Vec<f64>,
    p1: Vec<f64>,
    p1_arg: Vec<u32>,
    a2: Vec<f64>,
    p2: Vec<f64>,
    p2_arg: Vec<u32>,
    h: Vec<f64>,
}

/// Activations saved by [`forward_cached`] for one batch.
pub struct ForwardCache {
    fingerprint: u64,
    samples: Vec<SampleCache>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.samples.len()
    }

    /// Hash of every ReLU on/off state and pooling choice. Equal patterns
    /// mean the network is the same linear map of its parameters per layer.
    pub fn activation_pattern(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for s in &self.samples {
            for a in s.a1.iter().chain(&s.a2).chain(&s.h) {
                feed(u64::from(*a > 0.0));
            }
            for &i in s.p1_arg.iter().chain(&s.p2_arg) {
                feed(u64::from(i));
            }
        }
        h
    }
}

struct Views<'a> {
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
    wd: &'a [f64],
    bd: &'a [f64],
    wh: &'a [f64],
    bh: &'a [f64],
}

fn views(p: &ModelParams) -> Views<'_> {
    let l = p.arch().layout();
    let v = p.values();
    Views {
        w1: &v[l[0].weight.clone()],
        b1: &v[l[0].bias.clone()],
        w2: &v[l[1].weight.clone()],
        b2: &v[l[1].bias.clone()],
        wd: &v[l[2].weight.clone()],
        bd: &v[l[2].bias.clone()],
        wh: &v[l[3].weight.clone()],
        bh: &v[l[3].bias.clone()],
    }
}

fn check_batch(arch: &Architecture, batch: &[&Image]) -> Result<()> {
    for (i, img) in batch.iter().enumerate() {
        if img.height() != arch.side || img.width() != arch.side || img.channels() != arch.channels {
            return Err(Error::Shape(format!(
                "batch image {i} is {}x{}x{}, model expects {}x{}x{}",
                img.height(),
                img.width(),
                img.channels(),
                arch.side,
                arch.side,
                arch.channels
            )));
        }
    }
    Ok(())
}

fn gather_patch(input: &[f64], side: usize, cin: usize, y: usize, x: usize, patch: &mut [f64]) {
    for ky in 0..3 {
        for kx in 0..3 {
            let dst = &mut patch[(ky * 3 + kx) * cin..(ky * 3 + kx + 1) * cin];
            let iy = y as isize + ky as isize - 1;
            let ix = x as isize + kx as isize - 1;
            if iy < 0 || ix < 0 || iy >= side as isize || ix >= side as isize {
                dst.fill(0.0);
            } else {
                let s = (iy as usize * side + ix as usize) * cin;
                dst.copy_from_slice(&input[s..s + cin]);
            }
        }
    }
}

/// 3×3 same-padded convolution followed by ReLU, writing into `out`.
fn conv_relu(input: &[f64], side: usize, cin: usize, w: &[f64], b: &[f64], out: &mut [f64]) {
    let cout = b.len();
    let mut patch = vec![0.0; 9 * cin];
    for y in 0..side {
        for x in 0..side {
            gather_patch(input, side, cin, y, x, &mut patch);
            let o = &mut out[(y * side + x) * cout..(y * side + x + 1) * cout];
            o.copy_from_slice(b);
            for (k, &p) in patch.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for (oj, wj) in o.iter_mut().zip(&w[k * cout..(k + 1) * cout]) {
                    *oj += p * wj;
                }
            }
            for v in o.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
/// Gradients of a 3×3 conv given `dout` with respect to its pre-activation.
fn conv_backward(
    input: &[f64],
    side: usize,
    cin: usize,
    w: &[f64],
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut dinput: Option<&mut [f64]>,
) {
    let cout = db.len();
    let mut patch = vec![0.0; 9 * cin];
    for y in 0..side {
        for x in 0..side {
            let g = &dout[(y * side + x) * cout..(y * side + x + 1) * cout];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            gather_patch(input, side, cin, y, x, &mut patch);
            for (dbj, gj) in db.iter_mut().zip(g) {
                *dbj += gj;
            }
            for (k, &p) in patch.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for (dwj, gj) in dw[k * cout..(k + 1) * cout].iter_mut().zip(g) {
                    *dwj += p * gj;
                }
            }
            if let Some(din) = dinput.as_deref_mut() {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let iy = y as isize + ky as isize - 1;
                        let ix = x as isize + kx as isize - 1;
                        if iy < 0 || ix < 0 || iy >= side as isize || ix >= side as isize {
                            continue;
                        }
                        let base = (iy as usize * side + ix as usize) * cin;
                        for c in 0..cin {
                            let k = (ky * 3 + kx) * cin + c;
                            let wr = &w[k * cout..(k + 1) * cout];
                            let s: f64 = wr.iter().zip(g).map(|(a, b)| a * b).sum();
                            din[base + c] += s;
                        }
                    }
                }
            }
        }
    }
}

/// 2×2 stride-2 max pool; `arg` receives the source index (first max wins).
fn maxpool(input: &[f64], side: usize, ch: usize, out: &mut [f64], arg: &mut [u32]) {
    let half = side / 2;
    for y in 0..half {
        for x in 0..half {
            for c in 0..ch {
                let mut best_i = ((2 * y) * side + 2 * x) * ch + c;
                let mut best = input[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = ((2 * y + dy) * side + 2 * x + dx) * ch + c;
                    if input[i] > best {
                        best = input[i];
                        best_i = i;
                    }
                }
                out[(y * half + x) * ch + c] = best;
                arg[(y * half + x) * ch + c] = best_i as u32;
            }
        }
    }
}

/// `out = b + x·W` with `W` stored `[in][out]`; zero inputs are skipped.
fn dense(x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    let n = b.len();
    out.copy_from_slice(b);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (o, wv) in out.iter_mut().zip(&w[i * n..(i + 1) * n]) {
            *o += xi * wv;
        }
    }
}

fn dense_backward(x: &[f64], w: &[f64], g: &[f64], dw: &mut [f64], db: &mut [f64], dx: Option<&mut [f64]>) {
    let n = g.len();
    for (d, gv) in db.iter_mut().zip(g) {
        *d += gv;
    }
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (d, gv) in dw[i * n..(i + 1) * n].iter_mut().zip(g) {
            *d += xi * gv;
        }
    }
    if let Some(dx) = dx {
        for (i, d) in dx.iter_mut().enumerate() {
            *d = w[i * n..(i + 1) * n].iter().zip(g).map(|(a, b)| a * b).sum();
        }
    }
}

fn forward_sample(arch: &Architecture, v: &Views<'_>, img: &Image, logits: &mut [f64]) -> SampleCache {
    let s = arch.side;
    let input = img.data().to_vec();
    let mut a1 = vec![0.0; s * s * arch.conv1];
    conv_relu(&input, s, arch.channels, v.w1, v.b1, &mut a1);
    let s2 = s / 2;
    let mut p1 = vec![0.0; s2 * s2 * arch.conv1];
    let mut p1_arg = vec![0u32; p1.len()];
    maxpool(&a1, s, arch.conv1, &mut p1, &mut p1_arg);
    let mut a2 = vec![0.0; s2 * s2 * arch.conv2];
    conv_relu(&p1, s2, arch.conv1, v.w2, v.b2, &mut a2);
    let s4 = s2 / 2;
    let mut p2 = vec![0.0; s4 * s4 * arch.conv2];
    let mut p2_arg = vec![0u32; p2.len()];
    maxpool(&a2, s2, arch.conv2, &mut p2, &mut p2_arg);
    let mut h = vec![0.0; arch.dense1];
    dense(&p2, v.wd, v.bd, &mut h);
    for x in &mut h {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    dense(&h, v.wh, v.bh, logits);
    SampleCache { input, a1, p1, p1_arg, a2, p2, p2_arg, h }
}

/// Pure forward pass; rows are independent of batch composition.
pub fn forward(params: &ModelParams, batch: &[&Image]) -> Result<Logits> {
    forward_cached(params, batch).map(|(l, _)| l)
}

pub fn forward_cached(params: &ModelParams, batch: &[&Image]) -> Result<(Logits, ForwardCache)> {
    let arch = params.arch();
    check_batch(arch, batch)?;
    let v = views(params);
    let mut logits = Logits::zeros(batch.len(), arch.classes);
    let samples = batch.iter().enumerate().map(|(i, img)| forward_sample(arch, &v, img, logits.row_mut(i))).collect();
    Ok((logits, ForwardCache { fingerprint: params.fingerprint(), samples }))
}

/// Predicted class per image (argmax, lowest index on ties).
pub fn predict(params: &ModelParams, batch: &[&Image]) -> Result<Vec<usize>> {
    Ok(forward(params, batch)?.argmax())
}

/// Full backward pass: gradients for every layer.
pub fn backward(params: &ModelParams, cache: &ForwardCache, dlogits: &Logits) -> Result<Gradients> {
    backward_partial(params, cache, dlogits, 0)
}

/// Backward pass that stops below layer index `lowest` (0 = conv1 ... 3 = head);
/// gradients of skipped layers are left at zero.
pub fn backward_partial(
    params: &ModelParams,
    cache: &ForwardCache,
    dlogits: &Logits,
    lowest: usize,
) -> Result<Gradients> {
    let arch = *params.arch();
    if cache.fingerprint != params.fingerprint() {
        return Err(Error::StaleCache);
    }
    if dlogits.rows != cache.samples.len() || dlogits.cols != arch.classes {
        return Err(Error::Shape(format!(
            "dlogits is {}x{}, cache holds {} samples of {} classes",
            dlogits.rows,
            dlogits.cols,
            cache.samples.len(),
            arch.classes
        )));
    }
    let v = views(params);
    let layout = arch.layout();
    let mut grads = Gradients::zeros(&arch);
    let g = grads.values_mut();
    let (s, s2) = (arch.side, arch.side / 2);
    let (c1, c2, d1) = (arch.conv1, arch.conv2, arch.dense1);

    // split the flat gradient buffer into per-layer pieces
    let (gw1, rest) = g.split_at_mut(layout[0].weight.len());
    let (gb1, rest) = rest.split_at_mut(c1);
    let (gw2, rest) = rest.split_at_mut(layout[1].weight.len());
    let (gb2, rest) = rest.split_at_mut(c2);
    let (gwd, rest) = rest.split_at_mut(layout[2].weight.len());
    let (gbd, rest) = rest.split_at_mut(d1);
    let (gwh, gbh) = rest.split_at_mut(layout[3].weight.len());

    let mut dh = vec![0.0; d1];
    let mut dp2 = vec![0.0; arch.flat_len()];
    let mut da2 = vec![0.0; s2 * s2 * c2];
    let mut dp1 = vec![0.0; s2 * s2 * c1];
    let mut da1 = vec![0.0; s * s * c1];

    for (n, sc) in cache.samples.iter().enumerate() {
        let gl = dlogits.row(n);
        dense_backward(&sc.h, v.wh, gl, gwh, gbh, if lowest <= 2 { Some(&mut dh) } else { None });
        if lowest > 2 {
            continue;
        }
        for (d, &h) in dh.iter_mut().zip(&sc.h) {
            if h <= 0.0 {
                *d = 0.0;
            }
        }
        dense_backward(&sc.p2, v.wd, &dh, gwd, gbd, if lowest <= 1 { Some(&mut dp2) } else { None });
        if lowest > 1 {
            continue;
        }
        da2.fill(0.0);
        for (&src, &d) in sc.p2_arg.iter().zip(&dp2) {
            if sc.a2[src as usize] > 0.0 {
                da2[src as usize] += d;
            }
        }
        let dp1_opt = if lowest == 0 {
            dp1.fill(0.0);
            Some(&mut dp1[..])
        } else {
            None
        };
        conv_backward(&sc.p1, s2, c1, v.w2, &da2, gw2, gb2, dp1_opt);
        if lowest > 0 {
            continue;
        }
        da1.fill(0.0);
        for (&src, &d) in sc.p1_arg.iter().zip(&dp1) {
            if sc.a1[src as usize] > 0.0 {
                da1[src as usize] += d;
            }
        }
        conv_backward(&sc.input, s, arch.channels, v.w1, &da1, gw1, gb1, None);
    }
    Ok(grads)
}
