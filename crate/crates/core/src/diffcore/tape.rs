use std::collections::{BTreeMap, HashMap};

use super::kernels::{col2im, im2col, matmul, matmul_at, matmul_bt, ConvGeom};
use super::{shape_err, DiffError, ParamSet, Result, Tensor};
use crate::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// `k / 2` zeros on each border (odd kernels), output `ceil(H / stride)`.
    Same,
    /// No padding.
    Valid,
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(String),
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    Relu(Var),
    MaxPool2 { x: Var, argmax: Vec<u32> },
    GlobalAvgPool(Var),
    Dense { x: Var, w: Var, b: Var },
    Concat(Var, Var),
    Upsample2(Var),
    Sigmoid(Var),
    BceWithLogits { logits: Var, targets: Vec<T> },
    Add(Var, Var),
    Scale(Var, T),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Record of a forward evaluation, sufficient for one backward pass.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    param_vars: HashMap<String, Var>,
    consumed: bool,
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    params: BTreeMap<String, Tensor<T>>,
    inputs: BTreeMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn input(&self, var: Var) -> Option<&Tensor<T>> {
        self.inputs.get(&var)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Scales every gradient by `s` in place.
    pub fn scale(&mut self, s: T) {
        for t in self.params.values_mut().chain(self.inputs.values_mut()) {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

fn dims4<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<[usize; 4]> {
    match *t.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        ref s => shape_err(op, format!("expected [N, C, H, W], got {s:?}")),
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), param_vars: HashMap::new(), consumed: false }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input)
    }

    /// Reads a named parameter. Repeated reads return the same variable so its
    /// gradient accumulates in one place.
    pub fn param(&mut self, params: &ParamSet<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(name) {
            return Ok(v);
        }
        let t = params.tensor(name)?.clone();
        let v = self.push(t, Op::Param(name.to_string()));
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// `x: [N, C, H, W]`, `w: [Co, C, k, k]` (odd `k` for `Same`), `b: [Co]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: Padding) -> Result<Var> {
        let [n, c, h, wd] = dims4("conv2d", self.value(x))?;
        let [co, ci, kh, kw] = dims4("conv2d", self.value(w))?;
        if ci != c || kh != kw {
            return shape_err("conv2d", format!("input channels {c}, kernel {:?}", self.value(w).shape()));
        }
        if self.value(b).shape() != [co] {
            return shape_err("conv2d", format!("bias {:?} for {co} output channels", self.value(b).shape()));
        }
        if stride == 0 {
            return shape_err("conv2d", "stride must be positive");
        }
        let k = kh;
        let pad = match padding {
            Padding::Same => {
                if k % 2 == 0 {
                    return shape_err("conv2d", format!("same padding needs an odd kernel, got {k}"));
                }
                k / 2
            }
            Padding::Valid => 0,
        };
        if h + 2 * pad < k || wd + 2 * pad < k {
            return shape_err("conv2d", format!("kernel {k} larger than padded input {h}x{wd}"));
        }
        let out_h = (h + 2 * pad - k) / stride + 1;
        let out_w = (wd + 2 * pad - k) / stride + 1;
        let geom = ConvGeom { channels: c, height: h, width: wd, kernel: k, stride, pad, out_h, out_w };

        let (rows, ncol) = (geom.col_rows(), geom.col_cols());
        let mut out = vec![T::zero(); n * co * ncol];
        let mut cols = vec![T::zero(); rows * ncol];
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let bs = self.value(b).data();
        for s in 0..n {
            im2col(&xs[s * c * h * wd..(s + 1) * c * h * wd], &geom, &mut cols);
            let o = &mut out[s * co * ncol..(s + 1) * co * ncol];
            for (oc, chunk) in o.chunks_mut(ncol).enumerate() {
                chunk.iter_mut().for_each(|v| *v = bs[oc]);
            }
            matmul(ws, &cols, o, co, rows, ncol);
        }
        let value = Tensor::new(vec![n, co, out_h, out_w], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| if a > T::zero() { a } else { T::zero() });
        self.push(v, Op::Relu(x))
    }

    /// Hash of every ReLU sign and max-pool choice on the tape. Two
    /// evaluations with equal signatures lie on the same smooth piece.
    pub fn activation_signature(&self) -> u64 {
        use std::hash::{DefaultHasher, Hash, Hasher};
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => self.nodes[x.0].value.data().iter().for_each(|&v| (v > T::zero()).hash(&mut h)),
                Op::MaxPool2 { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    /// 2x2 window, stride 2; spatial dims must be even. Ties route to the first
    /// maximum in row-major window order.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = dims4("max_pool2", self.value(x))?;
        if h % 2 != 0 || w % 2 != 0 {
            return shape_err("max_pool2", format!("spatial dims {h}x{w} must be even"));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + (2 * oy) * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xs[i] > xs[best] {
                            best = i;
                        }
                    }
                    out.push(xs[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push(value, Op::MaxPool2 { x, argmax }))
    }

    /// `[N, C, H, W] -> [N, C]`
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = dims4("global_avg_pool", self.value(x))?;
        let hw = h * w;
        let inv = T::one() / T::lit(hw as f64);
        let out: Vec<T> = self.value(x).data().chunks(hw).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let value = Tensor::new(vec![n, c], out)?;
        Ok(self.push(value, Op::GlobalAvgPool(x)))
    }

    /// `x: [N, in]`, `w: [out, in]`, `b: [out]` -> `x w^T + b`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        let (n, fin, fout) = match (xs, ws) {
            ([n, fin], [fout, win]) if fin == win => (*n, *fin, *fout),
            _ => return shape_err("dense", format!("input {xs:?}, weight {ws:?}")),
        };
        if bs != [fout] {
            return shape_err("dense", format!("bias {bs:?} for {fout} outputs"));
        }
        let mut out = Vec::with_capacity(n * fout);
        for _ in 0..n {
            out.extend_from_slice(self.value(b).data());
        }
        matmul_bt(self.value(x).data(), self.value(w).data(), &mut out, n, fin, fout);
        let value = Tensor::new(vec![n, fout], out)?;
        Ok(self.push(value, Op::Dense { x, w, b }))
    }

    /// Channel concatenation of two `[N, C_i, H, W]` tensors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let [na, ca, ha, wa] = dims4("concat", self.value(a))?;
        let [nb, cb, hb, wb] = dims4("concat", self.value(b))?;
        if (na, ha, wa) != (nb, hb, wb) {
            return shape_err("concat", format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()));
        }
        let (pa, pb) = (ca * ha * wa, cb * hb * wb);
        let mut out = Vec::with_capacity(na * (pa + pb));
        for s in 0..na {
            out.extend_from_slice(&self.value(a).data()[s * pa..(s + 1) * pa]);
            out.extend_from_slice(&self.value(b).data()[s * pb..(s + 1) * pb]);
        }
        let value = Tensor::new(vec![na, ca + cb, ha, wa], out)?;
        Ok(self.push(value, Op::Concat(a, b)))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = dims4("upsample2", self.value(x))?;
        let xs = self.value(x).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * c * oh * ow];
        for plane in 0..n * c {
            for y in 0..oh {
                for xx in 0..ow {
                    out[plane * oh * ow + y * ow + xx] = xs[plane * h * w + (y / 2) * w + xx / 2];
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push(value, Op::Upsample2(x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return shape_err("add", format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()));
        }
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let v = self.value(x).map(|a| a * s);
        self.push(v, Op::Scale(x, s))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`.
    /// `logits` is `[N]` or `[N, 1]`; returns a `[1]` tensor.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let z = self.value(logits);
        let ok = matches!(z.shape(), [n] if *n == targets.len()) || matches!(z.shape(), [n, 1] if *n == targets.len());
        if !ok || targets.is_empty() {
            return shape_err("bce_with_logits", format!("logits {:?} vs {} targets", z.shape(), targets.len()));
        }
        let mut total = T::zero();
        for (&zi, &ti) in z.data().iter().zip(targets) {
            // max(z, 0) - z t + log(1 + exp(-|z|))
            total += zi.max(T::zero()) - zi * ti + (-zi.abs()).exp().ln_1p();
        }
        let loss = total / T::lit(targets.len() as f64);
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogits { logits, targets: targets.to_vec() }))
    }

    /// Reverse pass from `output` seeded with `output_grad`.
    ///
    /// Every recorded parameter receives a gradient (zeros when it does not
    /// influence `output`). A tape supports exactly one backward pass.
    pub fn backward(&mut self, output: Var, output_grad: Tensor<T>) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(DiffError::TapeConsumed);
        }
        if output_grad.shape() != self.value(output).shape() {
            return shape_err(
                "backward",
                format!("seed {:?} for output {:?}", output_grad.shape(), self.value(output).shape()),
            );
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(output_grad);
        let mut params = BTreeMap::new();
        let mut inputs = BTreeMap::new();

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {
                    inputs.insert(Var(i), g);
                }
                Op::Param(name) => {
                    params.insert(name.clone(), g);
                }
                Op::Relu(x) => {
                    let xv = self.nodes[x.0].value.data();
                    let d: Vec<T> =
                        g.data().iter().zip(xv).map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() }).collect();
                    accumulate(&mut grads, *x, Tensor::new(g.shape().to_vec(), d)?);
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    let d: Vec<T> = g.data().iter().zip(y).map(|(&gi, &yi)| gi * yi * (T::one() - yi)).collect();
                    accumulate(&mut grads, *x, Tensor::new(g.shape().to_vec(), d)?);
                }
                Op::Scale(x, s) => {
                    let s = *s;
                    accumulate(&mut grads, *x, g.map(|v| v * s));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::MaxPool2 { x, argmax } => {
                    let mut d = Tensor::zeros(self.nodes[x.0].value.shape());
                    let ds = d.data_mut();
                    for (&gi, &j) in g.data().iter().zip(argmax) {
                        ds[j as usize] += gi;
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::GlobalAvgPool(x) => {
                    let shape = self.nodes[x.0].value.shape().to_vec();
                    let hw = shape[2] * shape[3];
                    let inv = T::one() / T::lit(hw as f64);
                    let mut d = Vec::with_capacity(g.len() * hw);
                    for &gi in g.data() {
                        d.extend(std::iter::repeat_n(gi * inv, hw));
                    }
                    accumulate(&mut grads, *x, Tensor::new(shape, d)?);
                }
                Op::Upsample2(x) => {
                    let shape = self.nodes[x.0].value.shape().to_vec();
                    let (h, w) = (shape[2], shape[3]);
                    let (oh, ow) = (2 * h, 2 * w);
                    let mut d = vec![T::zero(); shape.iter().product()];
                    for plane in 0..shape[0] * shape[1] {
                        for y in 0..oh {
                            for xx in 0..ow {
                                d[plane * h * w + (y / 2) * w + xx / 2] += g.data()[plane * oh * ow + y * ow + xx];
                            }
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(shape, d)?);
                }
                Op::Concat(a, b) => {
                    let sa = self.nodes[a.0].value.shape().to_vec();
                    let sb = self.nodes[b.0].value.shape().to_vec();
                    let pa: usize = sa[1..].iter().product();
                    let pb: usize = sb[1..].iter().product();
                    let (mut da, mut db) = (Vec::with_capacity(sa[0] * pa), Vec::with_capacity(sb[0] * pb));
                    for chunk in g.data().chunks(pa + pb) {
                        da.extend_from_slice(&chunk[..pa]);
                        db.extend_from_slice(&chunk[pa..]);
                    }
                    accumulate(&mut grads, *a, Tensor::new(sa, da)?);
                    accumulate(&mut grads, *b, Tensor::new(sb, db)?);
                }
                Op::Dense { x, w, b } => {
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    let (n, fin) = (xv.shape()[0], xv.shape()[1]);
                    let fout = wv.shape()[0];
                    let mut dx = vec![T::zero(); n * fin];
                    matmul(g.data(), wv.data(), &mut dx, n, fout, fin);
                    let mut dw = vec![T::zero(); fout * fin];
                    matmul_at(g.data(), xv.data(), &mut dw, fout, n, fin);
                    let mut db = vec![T::zero(); fout];
                    for row in g.data().chunks(fout) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    let (xs, ws) = (xv.shape().to_vec(), wv.shape().to_vec());
                    accumulate(&mut grads, *x, Tensor::new(xs, dx)?);
                    accumulate(&mut grads, *w, Tensor::new(ws, dw)?);
                    accumulate(&mut grads, *b, Tensor::new(vec![fout], db)?);
                }
                Op::Conv2d { x, w, b, geom } => {
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    let n = xv.shape()[0];
                    let co = wv.shape()[0];
                    let (rows, ncol) = (geom.col_rows(), geom.col_cols());
                    let plane_in = geom.channels * geom.height * geom.width;
                    let mut dx = vec![T::zero(); xv.len()];
                    let mut dw = vec![T::zero(); wv.len()];
                    let mut db = vec![T::zero(); co];
                    let mut cols = vec![T::zero(); rows * ncol];
                    let mut dcols = vec![T::zero(); rows * ncol];
                    for s in 0..n {
                        let gs = &g.data()[s * co * ncol..(s + 1) * co * ncol];
                        for (oc, chunk) in gs.chunks(ncol).enumerate() {
                            db[oc] += chunk.iter().copied().sum::<T>();
                        }
                        im2col(&xv.data()[s * plane_in..(s + 1) * plane_in], geom, &mut cols);
                        matmul_bt(gs, &cols, &mut dw, co, ncol, rows);
                        dcols.iter_mut().for_each(|v| *v = T::zero());
                        matmul_at(wv.data(), gs, &mut dcols, rows, co, ncol);
                        col2im(&dcols, geom, &mut dx[s * plane_in..(s + 1) * plane_in]);
                    }
                    let (xs, ws) = (xv.shape().to_vec(), wv.shape().to_vec());
                    accumulate(&mut grads, *x, Tensor::new(xs, dx)?);
                    accumulate(&mut grads, *w, Tensor::new(ws, dw)?);
                    accumulate(&mut grads, *b, Tensor::new(vec![co], db)?);
                }
                Op::BceWithLogits { logits, targets } => {
                    let z = &self.nodes[logits.0].value;
                    let scale = g.data()[0] / T::lit(targets.len() as f64);
                    let d: Vec<T> =
                        z.data().iter().zip(targets).map(|(&zi, &ti)| (sigmoid(zi) - ti) * scale).collect();
                    accumulate(&mut grads, *logits, Tensor::new(z.shape().to_vec(), d)?);
                }
            }
        }

        for node in &self.nodes {
            if let Op::Param(name) = &node.op {
                params.entry(name.clone()).or_insert_with(|| Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { params, inputs })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
