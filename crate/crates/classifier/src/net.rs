//! A two-block convolutional network with a global avg+max pooled linear head.
//!
//! conv3x3(C0→C1) → ReLU → maxpool2 → conv3x3(C1→C2) → ReLU → maxpool2 →
//! [global mean ‖ global max] → linear(2·C2 → classes).
//!
//! Activations for a batch are stored channel-major as `[channel][image][y][x]`
//! so each convolution is a single GEMM over im2col columns.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub classes: usize,
}

impl Arch {
    pub fn features(&self) -> usize {
        2 * self.conv2
    }

    fn k1(&self) -> usize {
        self.in_channels * 9
    }

    fn k2(&self) -> usize {
        self.conv1 * 9
    }

    fn p1(&self) -> usize {
        self.height * self.width
    }

    fn hw2(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    fn hw4(&self) -> (usize, usize) {
        (self.height / 4, self.width / 4)
    }
}

/// All trainable tensors. Weight matrices are row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
    pub wf: Vec<f32>,
    pub bf: Vec<f32>,
}

impl Params {
    pub fn zeros(a: &Arch) -> Self {
        Self {
            w1: vec![0.0; a.conv1 * a.k1()],
            b1: vec![0.0; a.conv1],
            w2: vec![0.0; a.conv2 * a.k2()],
            b2: vec![0.0; a.conv2],
            wf: vec![0.0; a.classes * a.features()],
            bf: vec![0.0; a.classes],
        }
    }

    /// Uniform(±1/√fan_in) for weights and biases alike.
    pub fn init(a: &Arch, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(a);
        let fill = |v: &mut [f32], fan_in: usize, rng: &mut dyn rand::RngCore| {
            let bound = 1.0 / (fan_in as f32).sqrt();
            for x in v {
                *x = rng.gen_range(-bound..bound);
            }
        };
        fill(&mut p.w1, a.k1(), rng);
        fill(&mut p.b1, a.k1(), rng);
        fill(&mut p.w2, a.k2(), rng);
        fill(&mut p.b2, a.k2(), rng);
        p.init_head(a, rng);
        p
    }

    pub fn init_head(&mut self, a: &Arch, rng: &mut dyn rand::RngCore) {
        let bound = 1.0 / (a.features() as f32).sqrt();
        for x in self.wf.iter_mut().chain(self.bf.iter_mut()) {
            *x = rng.gen_range(-bound..bound);
        }
    }

    pub fn tensors(&self) -> [(&'static str, &[f32]); 6] {
        [
            ("conv1.weight", &self.w1),
            ("conv1.bias", &self.b1),
            ("conv2.weight", &self.w2),
            ("conv2.bias", &self.b2),
            ("head.weight", &self.wf),
            ("head.bias", &self.bf),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f32>; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.wf,
            &mut self.bf,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }
}

/// C ← alpha·op(A)·op(B) + beta·C with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the slices cover every index touched for the given shapes and
    // strides (checked above in debug builds); `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 3×3, pad 1, stride 1 im2col. `input` is `[c][b][h][w]`; the output is
/// `[c·9][b·h·w]`.
fn im2col(input: &[f32], c: usize, b: usize, h: usize, w: usize, cols: &mut Vec<f32>) {
    let n = b * h * w;
    cols.clear();
    cols.resize(c * 9 * n, 0.0);
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * n..][..n];
                for bi in 0..b {
                    let src = &input[(ci * b + bi) * h * w..][..h * w];
                    let dst = &mut row[bi * h * w..][..h * w];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let srow = &src[sy as usize * w..][..w];
                        let drow = &mut dst[y * w..][..w];
                        // x range where sx = x + kx - 1 is in bounds.
                        let (x0, x1) = match kx {
                            0 => (1, w),
                            1 => (0, w),
                            _ => (0, w - 1),
                        };
                        let off = kx as isize - 1;
                        for x in x0..x1 {
                            drow[x] = srow[(x as isize + off) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates column gradients back into `[c][b][h][w]`.
fn col2im(cols: &[f32], c: usize, b: usize, h: usize, w: usize, out: &mut [f32]) {
    let n = b * h * w;
    out.iter_mut().for_each(|v| *v = 0.0);
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * n..][..n];
                for bi in 0..b {
                    let src = &row[bi * h * w..][..h * w];
                    let dst = &mut out[(ci * b + bi) * h * w..][..h * w];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let drow = &mut dst[sy as usize * w..][..w];
                        let srow = &src[y * w..][..w];
                        let (x0, x1) = match kx {
                            0 => (1, w),
                            1 => (0, w),
                            _ => (0, w - 1),
                        };
                        let off = kx as isize - 1;
                        for x in x0..x1 {
                            drow[(x as isize + off) as usize] += srow[x];
                        }
                    }
                }
            }
        }
    }
}

/// 2×2 stride-2 max pool over `[planes][h][w]`, recording argmax offsets.
fn maxpool(input: &[f32], planes: usize, h: usize, w: usize, out: &mut Vec<f32>, arg: &mut Vec<u32>) {
    let (h2, w2) = (h / 2, w / 2);
    out.clear();
    arg.clear();
    out.reserve(planes * h2 * w2);
    arg.reserve(planes * h2 * w2);
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..h2 {
            for x in 0..w2 {
                let mut best = base + 2 * y * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * x + dx;
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
}

fn add_bias_relu(act: &mut [f32], bias: &[f32]) {
    let n = act.len() / bias.len();
    for (row, &b) in act.chunks_mut(n).zip(bias) {
        for v in row {
            *v = (*v + b).max(0.0);
        }
    }
}

/// Intermediate values of one batched forward pass, kept for backprop.
#[derive(Default)]
pub struct Cache {
    batch: usize,
    cols1: Vec<f32>,
    a1: Vec<f32>,
    pool1: Vec<f32>,
    arg1: Vec<u32>,
    cols2: Vec<f32>,
    a2: Vec<f32>,
    pool2: Vec<f32>,
    arg2: Vec<u32>,
    gmax: Vec<u32>,
    /// `[b][features]`
    pub features: Vec<f32>,
    /// `[b][classes]`
    pub logits: Vec<f32>,
    // Scratch for the backward pass.
    d_a2: Vec<f32>,
    d_cols2: Vec<f32>,
    d_pool1: Vec<f32>,
    d_a1: Vec<f32>,
}

/// Converts HWC u8 images into the network's `[c][b][h][w]` float layout.
pub fn pack_inputs(a: &Arch, images: &[&[u8]], out: &mut Vec<f32>) {
    let (c, hw) = (a.in_channels, a.p1());
    let b = images.len();
    out.clear();
    out.resize(c * b * hw, 0.0);
    for (bi, img) in images.iter().enumerate() {
        for p in 0..hw {
            for ci in 0..c {
                out[(ci * b + bi) * hw + p] = img[p * c + ci] as f32 / 255.0 - 0.5;
            }
        }
    }
}

/// Runs the convolutional body, filling `cache.features`.
pub fn forward_features(a: &Arch, p: &Params, input: &[f32], batch: usize, cache: &mut Cache) {
    let (h, w) = (a.height, a.width);
    let (h2, w2) = a.hw2();
    let (h4, w4) = a.hw4();
    let n1 = batch * h * w;
    let n2 = batch * h2 * w2;
    let p4 = h4 * w4;
    cache.batch = batch;

    im2col(input, a.in_channels, batch, h, w, &mut cache.cols1);
    cache.a1.resize(a.conv1 * n1, 0.0);
    gemm(a.conv1, a.k1(), n1, &p.w1, (a.k1(), 1), &cache.cols1, (n1, 1), 0.0, &mut cache.a1);
    add_bias_relu(&mut cache.a1, &p.b1);
    maxpool(&cache.a1, a.conv1 * batch, h, w, &mut cache.pool1, &mut cache.arg1);

    im2col(&cache.pool1, a.conv1, batch, h2, w2, &mut cache.cols2);
    cache.a2.resize(a.conv2 * n2, 0.0);
    gemm(a.conv2, a.k2(), n2, &p.w2, (a.k2(), 1), &cache.cols2, (n2, 1), 0.0, &mut cache.a2);
    add_bias_relu(&mut cache.a2, &p.b2);
    maxpool(&cache.a2, a.conv2 * batch, h2, w2, &mut cache.pool2, &mut cache.arg2);

    let f = a.features();
    cache.features.clear();
    cache.features.resize(batch * f, 0.0);
    cache.gmax.clear();
    cache.gmax.resize(a.conv2 * batch, 0);
    for c in 0..a.conv2 {
        for b in 0..batch {
            let plane = &cache.pool2[(c * batch + b) * p4..][..p4];
            let mut sum = 0.0;
            let mut best = 0;
            for (i, &v) in plane.iter().enumerate() {
                sum += v;
                if v > plane[best] {
                    best = i;
                }
            }
            cache.features[b * f + c] = sum / p4 as f32;
            cache.features[b * f + a.conv2 + c] = plane[best];
            cache.gmax[c * batch + b] = best as u32;
        }
    }
}

/// `features` is `[b][F]`; writes `[b][classes]` logits.
pub fn head(a: &Arch, p: &Params, features: &[f32], batch: usize, logits: &mut Vec<f32>) {
    let f = a.features();
    logits.clear();
    logits.resize(batch * a.classes, 0.0);
    for b in 0..batch {
        logits[b * a.classes..][..a.classes].copy_from_slice(&p.bf);
    }
    // logits[b][c] += Σ_f features[b][f] · wf[c][f]
    gemm(batch, f, a.classes, features, (f, 1), &p.wf, (1, f), 1.0, logits);
}

pub fn forward(a: &Arch, p: &Params, input: &[f32], batch: usize, cache: &mut Cache) {
    forward_features(a, p, input, batch, cache);
    let mut logits = std::mem::take(&mut cache.logits);
    head(a, p, &cache.features, batch, &mut logits);
    cache.logits = logits;
}

/// In-place softmax over each row of `[rows][classes]`.
pub fn softmax_rows(x: &mut [f32], classes: usize) {
    for row in x.chunks_mut(classes) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Per-sample cross-entropy and the gradient of `Σ weight_b · ce_b` with
/// respect to the logits, written to `d_logits`.
pub fn cross_entropy(logits: &[f32], classes: usize, targets: &[usize], weights: &[f32], d_logits: &mut Vec<f32>) -> Vec<f32> {
    d_logits.clear();
    d_logits.extend_from_slice(logits);
    softmax_rows(d_logits, classes);
    let mut losses = Vec::with_capacity(targets.len());
    for (b, (&t, &wt)) in targets.iter().zip(weights).enumerate() {
        let row = &mut d_logits[b * classes..][..classes];
        losses.push(-(row[t].max(1e-30)).ln());
        row[t] -= 1.0;
        for v in row.iter_mut() {
            *v *= wt;
        }
    }
    losses
}

/// Gradient of the head only, given cached features.
pub fn backward_head(a: &Arch, features: &[f32], batch: usize, d_logits: &[f32], grad: &mut Params) {
    let f = a.features();
    // dWf[c][f] += Σ_b dlogits[b][c] · features[b][f]
    gemm(a.classes, batch, f, d_logits, (1, a.classes), features, (f, 1), 1.0, &mut grad.wf);
    for b in 0..batch {
        for c in 0..a.classes {
            grad.bf[c] += d_logits[b * a.classes + c];
        }
    }
}

/// Full backward pass, accumulating into `grad`.
pub fn backward(a: &Arch, p: &Params, cache: &mut Cache, d_logits: &[f32], grad: &mut Params) {
    let batch = cache.batch;
    let f = a.features();
    let (h, w) = (a.height, a.width);
    let (h2, w2) = a.hw2();
    let (h4, w4) = a.hw4();
    let (n1, n2, p4) = (batch * h * w, batch * h2 * w2, h4 * w4);

    backward_head(a, &cache.features, batch, d_logits, grad);
    let mut d_feat = vec![0.0f32; batch * f];
    gemm(batch, a.classes, f, d_logits, (a.classes, 1), &p.wf, (f, 1), 0.0, &mut d_feat);

    // Global pooling → pool2 gradient → scatter through maxpool into a2.
    cache.d_a2.clear();
    cache.d_a2.resize(a.conv2 * n2, 0.0);
    for c in 0..a.conv2 {
        for b in 0..batch {
            let plane = (c * batch + b) * p4;
            let g_avg = d_feat[b * f + c] / p4 as f32;
            let g_max = d_feat[b * f + a.conv2 + c];
            for i in 0..p4 {
                let mut g = g_avg;
                if i as u32 == cache.gmax[c * batch + b] {
                    g += g_max;
                }
                let src = cache.arg2[plane + i] as usize;
                cache.d_a2[src] += g;
            }
        }
    }
    for (d, &v) in cache.d_a2.iter_mut().zip(&cache.a2) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }

    gemm(a.conv2, n2, a.k2(), &cache.d_a2, (n2, 1), &cache.cols2, (1, n2), 1.0, &mut grad.w2);
    for (c, row) in cache.d_a2.chunks(n2).enumerate() {
        grad.b2[c] += row.iter().sum::<f32>();
    }
    cache.d_cols2.resize(a.k2() * n2, 0.0);
    gemm(a.k2(), a.conv2, n2, &p.w2, (1, a.k2()), &cache.d_a2, (n2, 1), 0.0, &mut cache.d_cols2);
    cache.d_pool1.resize(a.conv1 * n2, 0.0);
    col2im(&cache.d_cols2, a.conv1, batch, h2, w2, &mut cache.d_pool1);

    cache.d_a1.clear();
    cache.d_a1.resize(a.conv1 * n1, 0.0);
    for (i, &g) in cache.d_pool1.iter().enumerate() {
        let src = cache.arg1[i] as usize;
        if cache.a1[src] > 0.0 {
            cache.d_a1[src] += g;
        }
    }
    gemm(a.conv1, n1, a.k1(), &cache.d_a1, (n1, 1), &cache.cols1, (1, n1), 1.0, &mut grad.w1);
    for (c, row) in cache.d_a1.chunks(n1).enumerate() {
        grad.b1[c] += row.iter().sum::<f32>();
    }
}
