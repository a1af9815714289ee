use rand::Rng;

use super::EncodedSample;
use crate::mutation::MutatorId;
use crate::Scalar;

/// Byte values 0..=255 plus the PAD token.
pub const VOCAB: usize = 257;
pub const PAD: u16 = 256;
pub const KERNEL: usize = 3;
pub const DEFAULT_D: usize = 8;
pub const DEFAULT_D_PRIME: usize = 16;

/// Model dimensions: sequence length `n`, embedding width `d`, feature
/// width `dp`, mutator count `n_mut`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub n: usize,
    pub d: usize,
    pub dp: usize,
    pub n_mut: usize,
}

/// Offsets of every tensor inside the flat parameter vector, in
/// declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layout {
    pub embed: usize,
    pub conv_w: [usize; 3],
    pub conv_b: [usize; 3],
    pub att_u_w: usize,
    pub att_u_b: usize,
    pub att_m: usize,
    pub att_p_w: usize,
    pub att_p_b: usize,
    pub cls_w: usize,
    pub cls_b: usize,
    pub total: usize,
}

impl ModelShape {
    pub fn new(n: usize, d: usize, dp: usize) -> Self {
        Self { n, d, dp, n_mut: MutatorId::COUNT }
    }

    fn conv_in(&self, layer: usize) -> usize {
        if layer == 0 {
            self.d
        } else {
            self.dp
        }
    }

    pub(crate) fn layout(&self) -> Layout {
        let mut off = 0;
        let mut take = |len: usize| {
            let o = off;
            off += len;
            o
        };
        let embed = take(VOCAB * self.d);
        let mut conv_w = [0; 3];
        let mut conv_b = [0; 3];
        for l in 0..3 {
            conv_w[l] = take(self.dp * self.conv_in(l) * KERNEL);
            conv_b[l] = take(self.dp);
        }
        let att_u_w = take(self.dp);
        let att_u_b = take(1);
        let att_m = take(self.n_mut);
        let att_p_w = take(1);
        let att_p_b = take(1);
        let cls_w = take(2 * self.dp * self.n);
        let cls_b = take(2);
        Layout { embed, conv_w, conv_b, att_u_w, att_u_b, att_m, att_p_w, att_p_b, cls_w, cls_b, total: off }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    /// `(name, offset, len, fan_in)` for each tensor, in declaration order.
    pub fn tensors(&self) -> Vec<(&'static str, usize, usize, usize)> {
        let l = self.layout();
        let names = ["conv1", "conv2", "conv3"];
        let bias_names = ["conv1.bias", "conv2.bias", "conv3.bias"];
        let mut v = vec![("embed", l.embed, VOCAB * self.d, 1)];
        for k in 0..3 {
            let fan = self.conv_in(k) * KERNEL;
            v.push((names[k], l.conv_w[k], self.dp * fan, fan));
            v.push((bias_names[k], l.conv_b[k], self.dp, fan));
        }
        v.extend([
            ("att_u", l.att_u_w, self.dp, self.dp),
            ("att_u.bias", l.att_u_b, 1, self.dp),
            ("att_m", l.att_m, self.n_mut, 1),
            ("att_p", l.att_p_w, 1, 1),
            ("att_p.bias", l.att_p_b, 1, 1),
            ("classifier", l.cls_w, 2 * self.dp * self.n, self.dp * self.n),
            ("classifier.bias", l.cls_b, 2, self.dp * self.n),
        ]);
        v
    }
}

/// Attention classifier weights, stored as one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub shape: ModelShape,
    pub data: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(shape: ModelShape) -> Self {
        Self { shape, data: vec![T::zero(); shape.param_count()] }
    }

    /// Uniform in `(-s, s)` with `s = 1 / sqrt(fan_in)` per tensor.
    pub fn init<R: Rng + ?Sized>(shape: ModelShape, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        for (_, off, len, fan_in) in shape.tensors() {
            let s = 1.0 / (fan_in as f64).sqrt();
            for v in &mut p.data[off..off + len] {
                *v = T::of(rng.gen_range(-s..s));
            }
        }
        p
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams { shape: self.shape, data: self.data.iter().map(|v| U::of(v.to_f64_lossy())).collect() }
    }

    pub(crate) fn layout(&self) -> Layout {
        self.shape.layout()
    }

    /// Class logits and attention weights for one sample.
    pub fn forward(&self, s: &EncodedSample) -> ([T; 2], Vec<T>) {
        let mut ws = Workspace::new(self.shape);
        ws.forward(self, s);
        (ws.logits, ws.alpha.clone())
    }

    /// Cross-entropy loss of one sample.
    pub fn loss(&self, s: &EncodedSample) -> T {
        let mut ws = Workspace::new(self.shape);
        ws.forward(self, s);
        ws.loss(s.label)
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, s: &EncodedSample) -> (T, Vec<T>) {
        let mut ws = Workspace::new(self.shape);
        let mut grad = vec![T::zero(); self.data.len()];
        let l = ws.forward_backward(self, s, &mut grad);
        (l, grad)
    }
}

/// Per-sample activations kept for the backward pass. Reused across
/// samples to avoid reallocating.
pub(crate) struct Workspace<T> {
    shape: ModelShape,
    /// Layer inputs/outputs, position-major: `h[0]` is the embedding,
    /// `h[l + 1]` the ReLU output of conv layer `l`.
    h: [Vec<T>; 4],
    z: [Vec<T>; 3],
    softmax: Vec<T>,
    pub alpha: Vec<T>,
    pub logits: [T; 2],
    dh: Vec<T>,
    dh_prev: Vec<T>,
    du_att: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    pub fn new(shape: ModelShape) -> Self {
        let (n, d, dp) = (shape.n, shape.d, shape.dp);
        let wide = d.max(dp);
        Self {
            shape,
            h: [vec![T::zero(); n * d], vec![T::zero(); n * dp], vec![T::zero(); n * dp], vec![T::zero(); n * dp]],
            z: [vec![T::zero(); n * dp], vec![T::zero(); n * dp], vec![T::zero(); n * dp]],
            softmax: vec![T::zero(); n],
            alpha: vec![T::zero(); n],
            logits: [T::zero(); 2],
            dh: vec![T::zero(); n * wide],
            dh_prev: vec![T::zero(); n * wide],
            du_att: vec![T::zero(); n],
        }
    }

    pub fn forward(&mut self, p: &ModelParams<T>, s: &EncodedSample) {
        let ModelShape { n, d, dp, .. } = self.shape;
        debug_assert_eq!(s.x.len(), n);
        let lay = p.layout();
        let w = &p.data;
        for (i, &tok) in s.x.iter().enumerate() {
            let row = lay.embed + tok as usize * d;
            self.h[0][i * d..(i + 1) * d].copy_from_slice(&w[row..row + d]);
        }
        for l in 0..3 {
            let cin = self.shape.conv_in(l);
            let (wo, bo) = (lay.conv_w[l], lay.conv_b[l]);
            let (inp, rest) = self.h.split_at_mut(l + 1);
            let input = &inp[l];
            let out = &mut rest[0];
            let z = &mut self.z[l];
            for i in 0..n {
                for o in 0..dp {
                    let mut acc = w[bo + o];
                    for k in 0..KERNEL {
                        let j = i + k;
                        if j == 0 || j > n {
                            continue;
                        }
                        let src = &input[(j - 1) * cin..j * cin];
                        let wk = wo + o * cin * KERNEL;
                        for (c, &x) in src.iter().enumerate() {
                            acc += w[wk + c * KERNEL + k] * x;
                        }
                    }
                    z[i * dp + o] = acc;
                    out[i * dp + o] = acc.max(T::zero());
                }
            }
        }
        let u = &self.h[3];
        let valid = s.valid_len.min(n);
        // Constant across positions; kept for fidelity to the score formula.
        let side =
            w[lay.att_u_b] + w[lay.att_m + s.mutator.code()] + w[lay.att_p_w] * T::of(s.param_norm) + w[lay.att_p_b];
        let mut max = T::neg_infinity();
        for i in 0..n {
            let e = if i < valid {
                let row = &u[i * dp..(i + 1) * dp];
                row.iter().zip(&w[lay.att_u_w..lay.att_u_w + dp]).fold(side, |a, (&x, &k)| a + x * k)
            } else {
                T::neg_infinity()
            };
            self.softmax[i] = e;
            max = max.max(e);
        }
        let mut sum = T::zero();
        for i in 0..n {
            let v = if i < valid { (self.softmax[i] - max).exp() } else { T::zero() };
            self.softmax[i] = v;
            sum += v;
        }
        for v in &mut self.softmax[..valid] {
            *v /= sum;
        }
        // Renormalize; the identity after softmax up to rounding.
        let total = self.softmax.iter().fold(T::zero(), |a, &v| a + v);
        for i in 0..n {
            self.alpha[i] = if i < valid { self.softmax[i] / total } else { T::zero() };
        }
        for k in 0..2 {
            let wk = lay.cls_w + k * dp * n;
            let mut acc = w[lay.cls_b + k];
            for c in 0..dp {
                let row = &w[wk + c * n..wk + (c + 1) * n];
                for i in 0..valid {
                    acc += row[i] * self.alpha[i] * u[i * dp + c];
                }
            }
            self.logits[k] = acc;
        }
    }

    fn probs(&self) -> [T; 2] {
        let m = self.logits[0].max(self.logits[1]);
        let e0 = (self.logits[0] - m).exp();
        let e1 = (self.logits[1] - m).exp();
        let s = e0 + e1;
        [e0 / s, e1 / s]
    }

    pub fn loss(&self, label: u8) -> T {
        let m = self.logits[0].max(self.logits[1]);
        let lse = m + ((self.logits[0] - m).exp() + (self.logits[1] - m).exp()).ln();
        lse - self.logits[label as usize]
    }

    /// Runs forward, then adds this sample's loss gradient into `grad`.
    pub fn forward_backward(&mut self, p: &ModelParams<T>, s: &EncodedSample, grad: &mut [T]) -> T {
        self.forward(p, s);
        let loss = self.loss(s.label);
        let ModelShape { n, d, dp, .. } = self.shape;
        let lay = p.layout();
        let w = &p.data;
        let valid = s.valid_len.min(n);
        let pr = self.probs();
        let dlog = [pr[0] - T::of((s.label == 0) as u8 as f64), pr[1] - T::of((s.label == 1) as u8 as f64)];

        // Classifier, and gradients w.r.t. alpha and U through U' = alpha * U.
        let u = &self.h[3];
        let du = &mut self.dh;
        du[..n * dp].iter_mut().for_each(|v| *v = T::zero());
        let dalpha = &mut self.du_att;
        dalpha.iter_mut().for_each(|v| *v = T::zero());
        for k in 0..2 {
            grad[lay.cls_b + k] += dlog[k];
            let wk = lay.cls_w + k * dp * n;
            for c in 0..dp {
                for i in 0..valid {
                    let uic = u[i * dp + c];
                    let a = self.alpha[i];
                    grad[wk + c * n + i] += dlog[k] * a * uic;
                    let dup = dlog[k] * w[wk + c * n + i];
                    du[i * dp + c] += a * dup;
                    dalpha[i] += dup * uic;
                }
            }
        }

        // Renormalization W = s / sum(s), then softmax.
        let total = self.softmax[..valid].iter().fold(T::zero(), |a, &v| a + v);
        let dot = (0..valid).fold(T::zero(), |a, i| a + dalpha[i] * self.softmax[i]);
        for d in &mut dalpha[..valid] {
            *d = *d / total - dot / (total * total);
        }
        let dot = (0..valid).fold(T::zero(), |a, i| a + dalpha[i] * self.softmax[i]);
        let mut de_sum = T::zero();
        for i in 0..valid {
            let de = self.softmax[i] * (dalpha[i] - dot);
            de_sum += de;
            for c in 0..dp {
                grad[lay.att_u_w + c] += de * u[i * dp + c];
                du[i * dp + c] += de * w[lay.att_u_w + c];
            }
        }
        grad[lay.att_u_b] += de_sum;
        grad[lay.att_m + s.mutator.code()] += de_sum;
        grad[lay.att_p_w] += de_sum * T::of(s.param_norm);
        grad[lay.att_p_b] += de_sum;

        // Convolutions, top down. `self.dh` holds d(output of layer l).
        for l in (0..3).rev() {
            let cin = self.shape.conv_in(l);
            let (wo, bo) = (lay.conv_w[l], lay.conv_b[l]);
            let input = &self.h[l];
            let z = &self.z[l];
            let dout = &mut self.dh;
            let din = &mut self.dh_prev;
            din[..n * cin].iter_mut().for_each(|v| *v = T::zero());
            for i in 0..n {
                for o in 0..dp {
                    if z[i * dp + o] <= T::zero() {
                        continue;
                    }
                    let dz = dout[i * dp + o];
                    grad[bo + o] += dz;
                    let wk = wo + o * cin * KERNEL;
                    for k in 0..KERNEL {
                        let j = i + k;
                        if j == 0 || j > n {
                            continue;
                        }
                        let j = j - 1;
                        for c in 0..cin {
                            grad[wk + c * KERNEL + k] += dz * input[j * cin + c];
                            din[j * cin + c] += dz * w[wk + c * KERNEL + k];
                        }
                    }
                }
            }
            std::mem::swap(&mut self.dh, &mut self.dh_prev);
        }
        for (i, &tok) in s.x.iter().enumerate() {
            let row = lay.embed + tok as usize * d;
            for c in 0..d {
                grad[row + c] += self.dh[i * d + c];
            }
        }
        loss
    }
}
