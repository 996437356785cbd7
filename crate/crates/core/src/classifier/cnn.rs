//! 1-D CNN over 512 payload bytes.
//!
//! Dimension chain with valid stride-1 convolutions (kernel 25) and
//! non-overlapping max pooling (kernel 3):
//!
//! ```text
//! input 512
//! conv1 16x25 -> 16 x 488 -> relu -> pool3 -> 16 x 162
//! conv2 32x25 -> 32 x 138 -> relu -> pool3 -> 32 x 46
//! flatten     -> 1472
//! dense 256   -> relu -> dropout
//! dense C     -> softmax
//! ```
//!
//! All parameters live in one flat vector so the optimizer and the
//! checkpoint code can treat them uniformly.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::Rng;

pub const INPUT_LEN: usize = 512;
pub const KERNEL: usize = 25;
pub const CONV1: usize = 16;
pub const CONV2: usize = 32;
pub const POOL: usize = 3;
pub const L1: usize = INPUT_LEN - KERNEL + 1;
pub const P1: usize = L1 / POOL;
pub const L2: usize = P1 - KERNEL + 1;
pub const P2: usize = L2 / POOL;
pub const FLAT: usize = CONV2 * P2;
pub const HIDDEN: usize = 256;

const _: () = assert!(L1 == 488 && P1 == 162 && L2 == 138 && P2 == 46 && FLAT == 1472);

pub trait Scalar: Float + AddAssign + SubAssign + MulAssign + Default + Send + Sync + Debug + 'static {}
impl<T: Float + AddAssign + SubAssign + MulAssign + Default + Send + Sync + Debug + 'static> Scalar for T {}

pub(crate) fn cast<F: Scalar>(v: f64) -> F {
    F::from(v).expect("finite constant")
}

/// Dot product with eight independent accumulators.
#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy<F: Scalar>(alpha: F, x: &[F], y: &mut [F]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub classes: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub w3: usize,
    pub b3: usize,
    pub w4: usize,
    pub b4: usize,
    pub len: usize,
}

impl Layout {
    pub fn new(classes: usize) -> Self {
        let w1 = 0;
        let b1 = w1 + CONV1 * KERNEL;
        let w2 = b1 + CONV1;
        let b2 = w2 + CONV2 * CONV1 * KERNEL;
        let w3 = b2 + CONV2;
        let b3 = w3 + HIDDEN * FLAT;
        let w4 = b3 + HIDDEN;
        let b4 = w4 + classes * HIDDEN;
        Layout {
            classes,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            w4,
            b4,
            len: b4 + classes,
        }
    }

    /// `(name, shape, offset)` for each tensor.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, usize)> {
        vec![
            ("conv1.weight", vec![CONV1, 1, KERNEL], self.w1),
            ("conv1.bias", vec![CONV1], self.b1),
            ("conv2.weight", vec![CONV2, CONV1, KERNEL], self.w2),
            ("conv2.bias", vec![CONV2], self.b2),
            ("dense.weight", vec![HIDDEN, FLAT], self.w3),
            ("dense.bias", vec![HIDDEN], self.b3),
            ("output.weight", vec![self.classes, HIDDEN], self.w4),
            ("output.bias", vec![self.classes], self.b4),
        ]
    }
}

/// Intermediate activations for one sample.
#[derive(Debug, Clone)]
pub struct Workspace<F> {
    c1: Vec<F>,
    p1: Vec<F>,
    a1: Vec<u32>,
    c2: Vec<F>,
    p2: Vec<F>,
    a2: Vec<u32>,
    z3: Vec<F>,
    d3: Vec<F>,
    pub logits: Vec<F>,
    pub probs: Vec<F>,
    dd3: Vec<F>,
    dh: Vec<F>,
    dc2: Vec<F>,
    dp1: Vec<F>,
    dc1: Vec<F>,
}

impl<F: Scalar> Workspace<F> {
    pub fn new(classes: usize) -> Self {
        let z = F::zero();
        Workspace {
            c1: vec![z; CONV1 * L1],
            p1: vec![z; CONV1 * P1],
            a1: vec![0; CONV1 * P1],
            c2: vec![z; CONV2 * L2],
            p2: vec![z; FLAT],
            a2: vec![0; FLAT],
            z3: vec![z; HIDDEN],
            d3: vec![z; HIDDEN],
            logits: vec![z; classes],
            probs: vec![z; classes],
            dd3: vec![z; HIDDEN],
            dh: vec![z; FLAT],
            dc2: vec![z; CONV2 * L2],
            dp1: vec![z; CONV1 * P1],
            dc1: vec![z; CONV1 * L1],
        }
    }

    /// Flattened pooled features fed to the dense layer.
    pub fn features(&self) -> &[F] {
        &self.p2
    }
}

fn relu<F: Scalar>(v: &mut [F]) {
    for x in v {
        if *x < F::zero() {
            *x = F::zero();
        }
    }
}

fn max_pool<F: Scalar>(src: &[F], channels: usize, len: usize, out_len: usize, out: &mut [F], arg: &mut [u32]) {
    for ch in 0..channels {
        let row = &src[ch * len..];
        for u in 0..out_len {
            let base = u * POOL;
            let mut best = base;
            for j in base + 1..base + POOL {
                if row[j] > row[best] {
                    best = j;
                }
            }
            out[ch * out_len + u] = row[best];
            arg[ch * out_len + u] = (ch * len + best) as u32;
        }
    }
}

/// Numerically stable softmax.
pub fn softmax<F: Scalar>(logits: &[F], out: &mut [F]) {
    let m = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cnn<F> {
    pub layout: Layout,
    pub params: Vec<F>,
}

impl<F: Scalar> Cnn<F> {
    /// Uniform init in ±1/sqrt(fan_in) for every weight and bias.
    pub fn init(classes: usize, rng: &mut impl Rng) -> Self {
        let layout = Layout::new(classes);
        let mut params = vec![F::zero(); layout.len];
        let fan_ins = [
            (layout.w1, layout.w2, KERNEL),
            (layout.w2, layout.w3, CONV1 * KERNEL),
            (layout.w3, layout.w4, FLAT),
            (layout.w4, layout.len, HIDDEN),
        ];
        for (start, end, fan_in) in fan_ins {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[start..end] {
                *p = cast(rng.gen_range(-bound..bound));
            }
        }
        Cnn { layout, params }
    }

    pub fn classes(&self) -> usize {
        self.layout.classes
    }

    /// Forward pass; `dropout` holds per-unit multipliers for the hidden
    /// layer (already scaled), `None` at inference.
    pub fn forward(&self, x: &[F], dropout: Option<&[F]>, ws: &mut Workspace<F>) {
        assert_eq!(x.len(), INPUT_LEN, "input must have {INPUT_LEN} values");
        let p = &self.params;
        let lay = &self.layout;

        for f in 0..CONV1 {
            let row = &mut ws.c1[f * L1..(f + 1) * L1];
            row.fill(p[lay.b1 + f]);
            for k in 0..KERNEL {
                axpy(p[lay.w1 + f * KERNEL + k], &x[k..k + L1], row);
            }
        }
        relu(&mut ws.c1);
        max_pool(&ws.c1, CONV1, L1, P1, &mut ws.p1, &mut ws.a1);

        for g in 0..CONV2 {
            let row = &mut ws.c2[g * L2..(g + 1) * L2];
            row.fill(p[lay.b2 + g]);
            for f in 0..CONV1 {
                let w = &p[lay.w2 + (g * CONV1 + f) * KERNEL..];
                let src = &ws.p1[f * P1..(f + 1) * P1];
                for k in 0..KERNEL {
                    axpy(w[k], &src[k..k + L2], row);
                }
            }
        }
        relu(&mut ws.c2);
        max_pool(&ws.c2, CONV2, L2, P2, &mut ws.p2, &mut ws.a2);

        for j in 0..HIDDEN {
            let z = p[lay.b3 + j] + dot(&p[lay.w3 + j * FLAT..lay.w3 + (j + 1) * FLAT], &ws.p2);
            ws.z3[j] = z;
            let h = z.max(F::zero());
            ws.d3[j] = match dropout {
                Some(m) => h * m[j],
                None => h,
            };
        }
        for c in 0..lay.classes {
            ws.logits[c] = p[lay.b4 + c] + dot(&p[lay.w4 + c * HIDDEN..lay.w4 + (c + 1) * HIDDEN], &ws.d3);
        }
        softmax(&ws.logits, &mut ws.probs);
    }

    /// Cross-entropy of the last forward pass.
    pub fn loss(ws: &Workspace<F>, label: usize) -> F {
        -(ws.probs[label].max(F::min_positive_value())).ln()
    }

    /// Adds `scale` times the gradient of the cross-entropy of the last
    /// forward pass into `grad`.
    pub fn backward(&self, x: &[F], label: usize, dropout: Option<&[F]>, scale: F, ws: &mut Workspace<F>, grad: &mut [F]) {
        let p = &self.params;
        let lay = &self.layout;

        ws.dd3.fill(F::zero());
        for c in 0..lay.classes {
            let target = if c == label { F::one() } else { F::zero() };
            let dl = (ws.probs[c] - target) * scale;
            grad[lay.b4 + c] += dl;
            axpy(dl, &ws.d3, &mut grad[lay.w4 + c * HIDDEN..lay.w4 + (c + 1) * HIDDEN]);
            axpy(dl, &p[lay.w4 + c * HIDDEN..lay.w4 + (c + 1) * HIDDEN], &mut ws.dd3);
        }

        ws.dh.fill(F::zero());
        for j in 0..HIDDEN {
            let mut dz = ws.dd3[j];
            if let Some(m) = dropout {
                dz *= m[j];
            }
            if ws.z3[j] <= F::zero() || dz == F::zero() {
                continue;
            }
            grad[lay.b3 + j] += dz;
            axpy(dz, &ws.p2, &mut grad[lay.w3 + j * FLAT..lay.w3 + (j + 1) * FLAT]);
            axpy(dz, &p[lay.w3 + j * FLAT..lay.w3 + (j + 1) * FLAT], &mut ws.dh);
        }

        ws.dc2.fill(F::zero());
        for (i, &a) in ws.a2.iter().enumerate() {
            let a = a as usize;
            if ws.c2[a] > F::zero() {
                ws.dc2[a] += ws.dh[i];
            }
        }
        ws.dp1.fill(F::zero());
        for g in 0..CONV2 {
            let dc = &ws.dc2[g * L2..(g + 1) * L2];
            grad[lay.b2 + g] += dc.iter().copied().fold(F::zero(), |s, v| s + v);
            for f in 0..CONV1 {
                let wi = lay.w2 + (g * CONV1 + f) * KERNEL;
                let src = &ws.p1[f * P1..(f + 1) * P1];
                let dsrc = &mut ws.dp1[f * P1..(f + 1) * P1];
                for k in 0..KERNEL {
                    grad[wi + k] += dot(dc, &src[k..k + L2]);
                    axpy(p[wi + k], dc, &mut dsrc[k..k + L2]);
                }
            }
        }

        ws.dc1.fill(F::zero());
        for (i, &a) in ws.a1.iter().enumerate() {
            let a = a as usize;
            if ws.c1[a] > F::zero() {
                ws.dc1[a] += ws.dp1[i];
            }
        }
        for f in 0..CONV1 {
            let dc = &ws.dc1[f * L1..(f + 1) * L1];
            grad[lay.b1 + f] += dc.iter().copied().fold(F::zero(), |s, v| s + v);
            for k in 0..KERNEL {
                grad[lay.w1 + f * KERNEL + k] += dot(dc, &x[k..k + L1]);
            }
        }
    }

    /// Logits for one input, inference mode.
    pub fn logits(&self, x: &[F]) -> Vec<F> {
        let mut ws = Workspace::new(self.classes());
        self.forward(x, None, &mut ws);
        ws.logits
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f32) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f32], grad: &[f32]) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let step = self.lr * c2.sqrt() / c1;
        let eps = self.eps * c2.sqrt();
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / (v.sqrt() + eps);
        }
    }
}
