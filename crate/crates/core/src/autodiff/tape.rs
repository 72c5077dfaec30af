use super::params::ParamSlot;
use super::real::{axpy, dot, Real};
use crate::error::{config_err, data_err, Result};

/// Handle to one recorded node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Dense row-major tensor. `grad`, when present, has the same length as `data`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return config_err(format!("tensor shape {shape:?} needs {n} values, got {}", data.len()));
        }
        Ok(Self { shape, data, grad: None })
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self { shape: vec![data.len()], data, grad: None }
    }

    pub fn scalar(x: T) -> Self {
        Self { shape: vec![1], data: vec![x], grad: None }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![T::zero(); n], grad: None }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Geometry of a valid-padding 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(in_c: usize, in_h: usize, in_w: usize, out_c: usize, kernel: usize, stride: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return config_err("convolution kernel and stride must be positive");
        }
        if kernel > in_h || kernel > in_w {
            return config_err(format!("kernel {kernel}x{kernel} larger than input {in_h}x{in_w}"));
        }
        Ok(Self {
            in_c,
            in_h,
            in_w,
            out_c,
            kernel,
            stride,
            out_h: (in_h - kernel) / stride + 1,
            out_w: (in_w - kernel) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [self.out_c, self.out_h, self.out_w]
    }
}

enum Op<T> {
    Constant,
    Variable,
    Param { offset: usize },
    Linear { x: Var, w: Var, b: Var },
    Conv2d { x: Var, k: Var, b: Var, geom: ConvGeom, patches: Vec<T> },
    Lstm { x: Var, h: Var, c: Var, w: Var, b: Var, xh: Vec<T>, gates: Vec<T>, tanh_c: Vec<T> },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax { x: Var, width: usize },
    LogSoftmax { x: Var, width: usize },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Pick { x: Var, index: usize },
    WeightedSum(Vec<(Var, T)>),
    CategoricalNll { logits: Var, width: usize, targets: Vec<usize>, probs: Vec<T> },
    BernoulliNll { logit: Var, label: T },
    Mse { pred: Var, target: Vec<T> },
    Entropy { logits: Var, width: usize, probs: Vec<T>, logp: Vec<T> },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Per-node gradients returned by [`Tape::backward`]. Parameter gradients are
/// not stored here; they go to the caller's flat buffer.
pub struct Grads<T> {
    nodes: Vec<Option<Vec<T>>>,
}

impl<T> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Ordered record of executed ops over a borrowed flat parameter array.
pub struct Tape<'p, T: Real> {
    params: &'p [T],
    nodes: Vec<Node<T>>,
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softmax_row<T: Real>(row: &[T], out: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

fn log_softmax_row<T: Real>(row: &[T], out: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&x| (x - m).exp()).sum();
    let lse = m + s.ln();
    for (o, &x) in out.iter_mut().zip(row) {
        *o = x - lse;
    }
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p [T]) -> Self {
        Self { params, nodes: Vec::with_capacity(256) }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn params(&self) -> &'p [T] {
        self.params
    }

    pub fn value(&self, v: Var) -> &[T] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param { offset } => &self.params[offset..offset + node.value_len()],
            _ => &node.value,
        }
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor { shape: self.shape(v).to_vec(), data: self.value(v).to_vec(), grad: None }
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { shape, value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn len_of(&self, v: Var) -> usize {
        self.nodes[v.0].value_len()
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t.shape, t.data, Op::Constant, false)
    }

    pub fn constant_vec(&mut self, data: Vec<T>) -> Var {
        self.constant(Tensor::vector(data))
    }

    /// Differentiable input leaf; its gradient is reported by `backward`.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t.shape, t.data, Op::Variable, true)
    }

    /// Leaf bound to a slice of the parameter array.
    pub fn param(&mut self, slot: &ParamSlot) -> Result<Var> {
        if slot.offset + slot.len() > self.params.len() {
            return config_err(format!(
                "parameter slot {}..{} outside parameter array of length {}",
                slot.offset,
                slot.offset + slot.len(),
                self.params.len()
            ));
        }
        Ok(self.push(slot.shape.clone(), Vec::new(), Op::Param { offset: slot.offset }, true))
    }

    /// `y = W x + b` with `W` of shape `[n_out, n_in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 {
            return config_err(format!("linear weight must be 2-D, got {ws:?}"));
        }
        let (n_out, n_in) = (ws[0], ws[1]);
        if self.len_of(x) != n_in || self.len_of(b) != n_out {
            return config_err(format!(
                "linear shape mismatch: weight {ws:?}, input len {}, bias len {}",
                self.len_of(x),
                self.len_of(b)
            ));
        }
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let y: Vec<T> = (0..n_out).map(|i| bv[i] + dot(&wv[i * n_in..(i + 1) * n_in], xv)).collect();
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(vec![n_out], y, Op::Linear { x, w, b }, ng))
    }

    /// Valid-padding convolution. `x` is `[C, H, W]`, `kernels` is `[C', C, k, k]`.
    pub fn conv2d(&mut self, x: Var, kernels: Var, bias: Var, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernels).to_vec();
        if xs.len() != 3 || ks.len() != 4 || ks[2] != ks[3] {
            return config_err(format!("conv2d expects [C,H,W] input and [C',C,k,k] kernels, got {xs:?} / {ks:?}"));
        }
        if ks[1] != xs[0] {
            return config_err(format!("conv2d channel mismatch: input {xs:?}, kernels {ks:?}"));
        }
        if self.len_of(bias) != ks[0] {
            return config_err("conv2d bias length must equal output channels");
        }
        let geom = ConvGeom::new(xs[0], xs[1], xs[2], ks[0], ks[2], stride)?;
        let xv = self.value(x);
        let (pl, np, k) = (geom.patch_len(), geom.positions(), geom.kernel);
        let mut patches = vec![T::zero(); np * pl];
        for oy in 0..geom.out_h {
            for ox in 0..geom.out_w {
                let p = oy * geom.out_w + ox;
                let dst = &mut patches[p * pl..(p + 1) * pl];
                let mut j = 0;
                for ci in 0..geom.in_c {
                    for ky in 0..k {
                        let row = (ci * geom.in_h + oy * stride + ky) * geom.in_w + ox * stride;
                        dst[j..j + k].copy_from_slice(&xv[row..row + k]);
                        j += k;
                    }
                }
            }
        }
        let (kv, bv) = (self.value(kernels), self.value(bias));
        let mut y = vec![T::zero(); geom.out_c * np];
        for co in 0..geom.out_c {
            let kr = &kv[co * pl..(co + 1) * pl];
            for p in 0..np {
                y[co * np + p] = bv[co] + dot(kr, &patches[p * pl..(p + 1) * pl]);
            }
        }
        let ng = self.needs(x) || self.needs(kernels) || self.needs(bias);
        Ok(self.push(geom.output_shape().to_vec(), y, Op::Conv2d { x, k: kernels, b: bias, geom, patches }, ng))
    }

    /// Forget-gate LSTM cell. Gate rows of `w` (`[4n, nx + n]`) are ordered
    /// input, forget, candidate, output and act on `[x; h]`. The result has
    /// shape `[2, n]`: the new hidden state followed by the new cell state.
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, w: Var, b: Var) -> Result<Var> {
        let n = self.len_of(h);
        if self.len_of(c) != n {
            return config_err(format!("lstm hidden width {n} != cell width {}", self.len_of(c)));
        }
        let nx = self.len_of(x);
        let ws = self.shape(w).to_vec();
        if ws != [4 * n, nx + n] || self.len_of(b) != 4 * n {
            return config_err(format!(
                "lstm weight shape {ws:?} does not match input {nx} / hidden {n} (expected [{}, {}])",
                4 * n,
                nx + n
            ));
        }
        let mut xh = Vec::with_capacity(nx + n);
        xh.extend_from_slice(self.value(x));
        xh.extend_from_slice(self.value(h));
        let (wv, bv, cv) = (self.value(w), self.value(b), self.value(c));
        let m = nx + n;
        let mut gates = vec![T::zero(); 4 * n];
        for (r, g) in gates.iter_mut().enumerate() {
            let z = bv[r] + dot(&wv[r * m..(r + 1) * m], &xh);
            *g = if (2 * n..3 * n).contains(&r) { z.tanh() } else { sigmoid(z) };
        }
        let mut out = vec![T::zero(); 2 * n];
        let mut tanh_c = vec![T::zero(); n];
        for j in 0..n {
            let (i, f, g, o) = (gates[j], gates[n + j], gates[2 * n + j], gates[3 * n + j]);
            let cn = f * cv[j] + i * g;
            tanh_c[j] = cn.tanh();
            out[j] = o * tanh_c[j];
            out[n + j] = cn;
        }
        let ng = [x, h, c, w, b].iter().any(|&v| self.needs(v));
        Ok(self.push(vec![2, n], out, Op::Lstm { x, h, c, w, b, xh, gates, tanh_c }, ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).iter().map(|&v| v.max(T::zero())).collect();
        let (s, ng) = (self.shape(x).to_vec(), self.needs(x));
        self.push(s, y, Op::Relu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let (s, ng) = (self.shape(x).to_vec(), self.needs(x));
        self.push(s, y, Op::Sigmoid(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).iter().map(|&v| v.tanh()).collect();
        let (s, ng) = (self.shape(x).to_vec(), self.needs(x));
        self.push(s, y, Op::Tanh(x), ng)
    }

    fn row_width(&self, x: Var) -> usize {
        *self.shape(x).last().unwrap_or(&1)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let width = self.row_width(x);
        let xv = self.value(x);
        let mut y = vec![T::zero(); xv.len()];
        for (row, out) in xv.chunks(width).zip(y.chunks_mut(width)) {
            softmax_row(row, out);
        }
        let (s, ng) = (self.shape(x).to_vec(), self.needs(x));
        self.push(s, y, Op::Softmax { x, width }, ng)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let width = self.row_width(x);
        let xv = self.value(x);
        let mut y = vec![T::zero(); xv.len()];
        for (row, out) in xv.chunks(width).zip(y.chunks_mut(width)) {
            log_softmax_row(row, out);
        }
        let (s, ng) = (self.shape(x).to_vec(), self.needs(x));
        self.push(s, y, Op::LogSoftmax { x, width }, ng)
    }

    /// Flat concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut y = Vec::with_capacity(parts.iter().map(|&p| self.len_of(p)).sum());
        for &p in parts {
            y.extend_from_slice(self.value(p));
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(vec![y.len()], y, Op::Concat(parts.to_vec()), ng)
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        if start + len > self.len_of(x) {
            return config_err(format!("slice {start}..{} out of range for length {}", start + len, self.len_of(x)));
        }
        let y = self.value(x)[start..start + len].to_vec();
        let ng = self.needs(x);
        Ok(self.push(vec![len], y, Op::Slice { x, start }, ng))
    }

    /// Same values under a new shape with the same element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n = self.len_of(x);
        if shape.iter().product::<usize>() != n {
            return config_err(format!("cannot reshape {n} elements to {shape:?}"));
        }
        let y = self.value(x).to_vec();
        let ng = self.needs(x);
        Ok(self.push(shape.to_vec(), y, Op::Slice { x, start: 0 }, ng))
    }

    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        if index >= self.len_of(x) {
            return data_err(format!("index {index} out of range for length {}", self.len_of(x)));
        }
        let y = vec![self.value(x)[index]];
        let ng = self.needs(x);
        Ok(self.push(vec![1], y, Op::Pick { x, index }, ng))
    }

    /// `sum_k w_k * x_k` over equally sized terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let Some(&(first, _)) = terms.first() else {
            return Ok(self.push(vec![1], vec![T::zero()], Op::WeightedSum(Vec::new()), false));
        };
        let n = self.len_of(first);
        let mut y = vec![T::zero(); n];
        for &(v, wt) in terms {
            if self.len_of(v) != n {
                return config_err("weighted_sum terms must have equal length");
            }
            axpy(wt, self.value(v), &mut y);
        }
        let s = self.shape(first).to_vec();
        let ng = terms.iter().any(|&(v, _)| self.needs(v));
        Ok(self.push(s, y, Op::WeightedSum(terms.to_vec()), ng))
    }

    pub fn scale(&mut self, x: Var, k: T) -> Result<Var> {
        self.weighted_sum(&[(x, k)])
    }

    /// Mean over rows of `-log softmax(row)[target]`.
    pub fn categorical_nll(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let width = self.row_width(logits);
        let xv = self.value(logits);
        if xv.len() != width * targets.len() {
            return config_err(format!(
                "categorical_nll: {} logits do not form {} rows of width {width}",
                xv.len(),
                targets.len()
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= width) {
            return data_err(format!("class index {bad} out of range for {width} classes"));
        }
        let mut probs = vec![T::zero(); xv.len()];
        let mut logp = vec![T::zero(); width];
        let mut total = T::zero();
        for (r, (&t, row)) in targets.iter().zip(xv.chunks(width)).enumerate() {
            softmax_row(row, &mut probs[r * width..(r + 1) * width]);
            log_softmax_row(row, &mut logp);
            total -= logp[t];
        }
        let y = vec![total / T::of(targets.len().max(1) as f64)];
        let ng = self.needs(logits);
        Ok(self.push(vec![1], y, Op::CategoricalNll { logits, width, targets: targets.to_vec(), probs }, ng))
    }

    /// `-[y log sigmoid(z) + (1 - y) log(1 - sigmoid(z))]` in the stable form.
    pub fn bernoulli_nll(&mut self, logit: Var, label: T) -> Result<Var> {
        if self.len_of(logit) != 1 {
            return config_err("bernoulli_nll takes a single logit");
        }
        if !(label >= T::zero() && label <= T::one()) {
            return data_err("bernoulli label must lie in [0, 1]");
        }
        let z = self.scalar(logit);
        let loss = z.max(T::zero()) - z * label + (T::one() + (-z.abs()).exp()).ln();
        let ng = self.needs(logit);
        Ok(self.push(vec![1], vec![loss], Op::BernoulliNll { logit, label }, ng))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        let pv = self.value(pred);
        if pv.len() != target.len() || pv.is_empty() {
            return config_err(format!("mse length mismatch: {} vs {}", pv.len(), target.len()));
        }
        let s: T = pv.iter().zip(target).map(|(&p, &t)| (p - t) * (p - t)).sum();
        let y = vec![s / T::of(pv.len() as f64)];
        let ng = self.needs(pred);
        Ok(self.push(vec![1], y, Op::Mse { pred, target: target.to_vec() }, ng))
    }

    /// Entropy of softmax(logits), averaged over rows.
    pub fn policy_entropy(&mut self, logits: Var) -> Var {
        let width = self.row_width(logits);
        let xv = self.value(logits);
        let mut probs = vec![T::zero(); xv.len()];
        let mut logp = vec![T::zero(); xv.len()];
        let mut h = T::zero();
        for (r, row) in xv.chunks(width).enumerate() {
            let span = r * width..(r + 1) * width;
            softmax_row(row, &mut probs[span.clone()]);
            log_softmax_row(row, &mut logp[span.clone()]);
            for j in span {
                h -= probs[j] * logp[j];
            }
        }
        let rows = (xv.len() / width.max(1)).max(1);
        let y = vec![h / T::of(rows as f64)];
        let ng = self.needs(logits);
        self.push(vec![1], y, Op::Entropy { logits, width, probs, logp }, ng)
    }

    /// Reverse pass from a scalar `loss`. Parameter gradients are added into
    /// `param_grads` (indexed like the parameter array); gradients of other
    /// nodes are returned. Calling this twice adds the gradients twice.
    pub fn backward(&self, loss: Var, param_grads: &mut [T]) -> Result<Grads<T>> {
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        if self.nodes.is_empty() {
            return Ok(Grads { nodes: grads });
        }
        if self.len_of(loss) != 1 {
            return config_err("backward needs a scalar loss");
        }
        if param_grads.len() != self.params.len() {
            return config_err("gradient buffer length differs from parameter array");
        }
        if !self.needs(loss) {
            return Ok(Grads { nodes: grads });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.propagate(i, &gy, &mut grads, param_grads);
            grads[i] = Some(gy);
        }
        Ok(Grads { nodes: grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], pg: &mut [T], v: Var, f: impl FnOnce(&mut [T])) {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return;
        }
        let n = node.value_len();
        match node.op {
            Op::Param { offset } => f(&mut pg[offset..offset + n]),
            _ => f(grads[v.0].get_or_insert_with(|| vec![T::zero(); n])),
        }
    }

    fn propagate(&self, i: usize, gy: &[T], grads: &mut [Option<Vec<T>>], pg: &mut [T]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Constant | Op::Variable | Op::Param { .. } => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let n_in = xv.len();
                self.accumulate(grads, pg, *w, |dw| {
                    for (r, &g) in gy.iter().enumerate() {
                        if g != T::zero() {
                            axpy(g, xv, &mut dw[r * n_in..(r + 1) * n_in]);
                        }
                    }
                });
                self.accumulate(grads, pg, *b, |db| axpy(T::one(), gy, db));
                self.accumulate(grads, pg, *x, |dx| {
                    for (r, &g) in gy.iter().enumerate() {
                        if g != T::zero() {
                            axpy(g, &wv[r * n_in..(r + 1) * n_in], dx);
                        }
                    }
                });
            }
            Op::Conv2d { x, k, b, geom, patches } => {
                let (pl, np) = (geom.patch_len(), geom.positions());
                let kv = self.value(*k);
                self.accumulate(grads, pg, *k, |dk| {
                    for co in 0..geom.out_c {
                        let dst = &mut dk[co * pl..(co + 1) * pl];
                        for p in 0..np {
                            let g = gy[co * np + p];
                            if g != T::zero() {
                                axpy(g, &patches[p * pl..(p + 1) * pl], dst);
                            }
                        }
                    }
                });
                self.accumulate(grads, pg, *b, |db| {
                    for co in 0..geom.out_c {
                        db[co] += gy[co * np..(co + 1) * np].iter().copied().sum::<T>();
                    }
                });
                if self.needs(*x) {
                    let mut dpatch = vec![T::zero(); np * pl];
                    for co in 0..geom.out_c {
                        let kr = &kv[co * pl..(co + 1) * pl];
                        for p in 0..np {
                            let g = gy[co * np + p];
                            if g != T::zero() {
                                axpy(g, kr, &mut dpatch[p * pl..(p + 1) * pl]);
                            }
                        }
                    }
                    let kk = geom.kernel;
                    self.accumulate(grads, pg, *x, |dx| {
                        for oy in 0..geom.out_h {
                            for ox in 0..geom.out_w {
                                let p = oy * geom.out_w + ox;
                                let src = &dpatch[p * pl..(p + 1) * pl];
                                let mut j = 0;
                                for ci in 0..geom.in_c {
                                    for ky in 0..kk {
                                        let row = (ci * geom.in_h + oy * geom.stride + ky) * geom.in_w + ox * geom.stride;
                                        axpy(T::one(), &src[j..j + kk], &mut dx[row..row + kk]);
                                        j += kk;
                                    }
                                }
                            }
                        }
                    });
                }
            }
            Op::Lstm { x, h, c, w, b, xh, gates, tanh_c } => {
                let n = tanh_c.len();
                let m = xh.len();
                let nx = m - n;
                let cv = self.value(*c);
                let (dh, dc_out) = gy.split_at(n);
                let mut dz = vec![T::zero(); 4 * n];
                let mut dc_prev = vec![T::zero(); n];
                for j in 0..n {
                    let (ig, fg, gg, og) = (gates[j], gates[n + j], gates[2 * n + j], gates[3 * n + j]);
                    let tc = tanh_c[j];
                    let dct = dc_out[j] + dh[j] * og * (T::one() - tc * tc);
                    let d_o = dh[j] * tc;
                    let d_i = dct * gg;
                    let d_g = dct * ig;
                    let d_f = dct * cv[j];
                    dc_prev[j] = dct * fg;
                    dz[j] = d_i * ig * (T::one() - ig);
                    dz[n + j] = d_f * fg * (T::one() - fg);
                    dz[2 * n + j] = d_g * (T::one() - gg * gg);
                    dz[3 * n + j] = d_o * og * (T::one() - og);
                }
                let wv = self.value(*w);
                self.accumulate(grads, pg, *w, |dw| {
                    for (r, &g) in dz.iter().enumerate() {
                        if g != T::zero() {
                            axpy(g, xh, &mut dw[r * m..(r + 1) * m]);
                        }
                    }
                });
                self.accumulate(grads, pg, *b, |db| axpy(T::one(), &dz, db));
                self.accumulate(grads, pg, *c, |dc| axpy(T::one(), &dc_prev, dc));
                if self.needs(*x) || self.needs(*h) {
                    let mut dxh = vec![T::zero(); m];
                    for (r, &g) in dz.iter().enumerate() {
                        if g != T::zero() {
                            axpy(g, &wv[r * m..(r + 1) * m], &mut dxh);
                        }
                    }
                    self.accumulate(grads, pg, *x, |dx| axpy(T::one(), &dxh[..nx], dx));
                    self.accumulate(grads, pg, *h, |dhp| axpy(T::one(), &dxh[nx..], dhp));
                }
            }
            Op::Relu(x) => {
                let y = &node.value;
                self.accumulate(grads, pg, *x, |dx| {
                    for ((d, &g), &yv) in dx.iter_mut().zip(gy).zip(y) {
                        if yv > T::zero() {
                            *d += g;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                self.accumulate(grads, pg, *x, |dx| {
                    for ((d, &g), &yv) in dx.iter_mut().zip(gy).zip(y) {
                        *d += g * yv * (T::one() - yv);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = &node.value;
                self.accumulate(grads, pg, *x, |dx| {
                    for ((d, &g), &yv) in dx.iter_mut().zip(gy).zip(y) {
                        *d += g * (T::one() - yv * yv);
                    }
                });
            }
            Op::Softmax { x, width } => {
                let y = &node.value;
                self.accumulate(grads, pg, *x, |dx| {
                    for ((d, g), yr) in dx.chunks_mut(*width).zip(gy.chunks(*width)).zip(y.chunks(*width)) {
                        let s = dot(g, yr);
                        for j in 0..*width {
                            d[j] += yr[j] * (g[j] - s);
                        }
                    }
                });
            }
            Op::LogSoftmax { x, width } => {
                let y = &node.value;
                self.accumulate(grads, pg, *x, |dx| {
                    for ((d, g), yr) in dx.chunks_mut(*width).zip(gy.chunks(*width)).zip(y.chunks(*width)) {
                        let s: T = g.iter().copied().sum();
                        for j in 0..*width {
                            d[j] += g[j] - yr[j].exp() * s;
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.len_of(p);
                    self.accumulate(grads, pg, p, |dp| axpy(T::one(), &gy[off..off + n], dp));
                    off += n;
                }
            }
            Op::Slice { x, start } => {
                let s = *start;
                self.accumulate(grads, pg, *x, |dx| axpy(T::one(), gy, &mut dx[s..s + gy.len()]));
            }
            Op::Pick { x, index } => {
                let ix = *index;
                self.accumulate(grads, pg, *x, |dx| dx[ix] += gy[0]);
            }
            Op::WeightedSum(terms) => {
                for &(v, wt) in terms {
                    self.accumulate(grads, pg, v, |dv| axpy(wt, gy, dv));
                }
            }
            Op::CategoricalNll { logits, width, targets, probs } => {
                let scale = gy[0] / T::of(targets.len().max(1) as f64);
                self.accumulate(grads, pg, *logits, |dx| {
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..*width {
                            let p = probs[r * width + j];
                            let ind = if j == t { T::one() } else { T::zero() };
                            dx[r * width + j] += scale * (p - ind);
                        }
                    }
                });
            }
            Op::BernoulliNll { logit, label } => {
                let z = self.scalar(*logit);
                let g = gy[0] * (sigmoid(z) - *label);
                self.accumulate(grads, pg, *logit, |dz| dz[0] += g);
            }
            Op::Mse { pred, target } => {
                let pv = self.value(*pred);
                let k = gy[0] * T::of(2.0 / target.len() as f64);
                self.accumulate(grads, pg, *pred, |dp| {
                    for ((d, &p), &t) in dp.iter_mut().zip(pv).zip(target) {
                        *d += k * (p - t);
                    }
                });
            }
            Op::Entropy { logits, width, probs, logp } => {
                let rows = (probs.len() / (*width).max(1)).max(1);
                let scale = gy[0] / T::of(rows as f64);
                self.accumulate(grads, pg, *logits, |dx| {
                    for r in 0..rows {
                        let span = r * width..(r + 1) * width;
                        let h: T = span.clone().map(|j| -probs[j] * logp[j]).sum();
                        for j in span {
                            dx[j] += -scale * probs[j] * (logp[j] + h);
                        }
                    }
                });
            }
        }
    }
}

impl<T> Node<T> {
    fn value_len(&self) -> usize {
        match self.op {
            Op::Param { .. } => self.shape.iter().product(),
            _ => self.value.len(),
        }
    }
}
