//! Reverse-mode differentiation over a recorded sequence of tensor operations.

use super::params::{ParamGrads, ParamSet};
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Input,
    Param(usize),
    PointwiseConv { x: Var, w: Var, b: Var },
    DepthwiseConv { x: Var, w: Var, b: Var },
    Conv3x3 { x: Var, w: Var, b: Var },
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    Sigmoid(Var),
    MaxPool { x: Var, argmax: Vec<u32> },
    Upsample(Var),
    Concat(Vec<Var>),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Abs(Var),
}

struct Node<T> {
    // Parameter nodes borrow their value from the parameter set.
    value: Option<Tensor<T>>,
    op: Op,
}

/// Records a forward pass over parameters borrowed from a [`ParamSet`].
pub struct Tape<'p, T: Scalar> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<Var>>,
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: ParamGrads<T>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to an input recorded with [`Tape::input`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].as_ref()
    }

    pub fn params(&self) -> &ParamGrads<T> {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads<T> {
        self.params
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamSet<T> {
        self.params
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input)
    }

    /// Node for the named parameter; repeated lookups share one node.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let i = self
            .params
            .index_of(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))?;
        if let Some(v) = self.param_nodes[i] {
            return Ok(v);
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(i),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[i] = Some(v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.nodes[v.0]
            .value
            .as_ref()
            .expect("parameter nodes have no tensor value; use param_data")
    }

    fn param_data(&self, v: Var) -> &'p [T] {
        match self.nodes[v.0].op {
            Op::Param(i) => &self.params.entry(i).data,
            _ => panic!("expected a parameter node"),
        }
    }

    fn param_shape(&self, v: Var) -> &'p [usize] {
        match self.nodes[v.0].op {
            Op::Param(i) => &self.params.entry(i).shape,
            _ => panic!("expected a parameter node"),
        }
    }

    fn check_bias(&self, b: Var, c: usize) -> Result<()> {
        if self.param_shape(b) != [c] {
            return Err(Error::Contract(format!(
                "bias shape {:?}, expected [{c}]",
                self.param_shape(b)
            )));
        }
        Ok(())
    }

    /// 1x1 convolution; `w` is `[cout, cin]`, `b` is `[cout]`.
    pub fn pointwise_conv(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape;
        let ws = self.param_shape(w);
        if ws.len() != 2 || ws[1] != xs[1] {
            return Err(Error::Contract(format!(
                "pointwise weight {ws:?} does not fit {} input channels",
                xs[1]
            )));
        }
        let (cout, cin, hw) = (ws[0], ws[1], xs[2] * xs[3]);
        self.check_bias(b, cout)?;
        let (wd, bd) = (self.param_data(w), self.param_data(b));
        let xv = self.value(x);
        let mut y = Tensor::zeros([xs[0], cout, xs[2], xs[3]]);
        for n in 0..xs[0] {
            let yn = &mut y.data[n * cout * hw..(n + 1) * cout * hw];
            for (co, row) in yn.chunks_mut(hw).enumerate() {
                row.fill(bd[co]);
            }
            T::gemm(cout, cin, hw, wd, (cin, 1), xv.item(n), (hw, 1), yn, (hw, 1), true);
        }
        Ok(self.push(y, Op::PointwiseConv { x, w, b }))
    }

    /// Per-channel 3x3 convolution with zero padding 1; `w` is `[c, 3, 3]`.
    pub fn depthwise_conv(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape;
        let c = xs[1];
        if self.param_shape(w) != [c, 3, 3] {
            return Err(Error::Contract(format!(
                "depthwise weight {:?}, expected [{c}, 3, 3]",
                self.param_shape(w)
            )));
        }
        self.check_bias(b, c)?;
        let (wd, bd) = (self.param_data(w), self.param_data(b));
        let xv = self.value(x);
        let (h, wi) = (xs[2], xs[3]);
        let hw = h * wi;
        let mut y = Tensor::zeros(xs);
        for (plane, (yp, xp)) in y.data.chunks_mut(hw).zip(xv.data.chunks(hw)).enumerate() {
            let ch = plane % c;
            yp.fill(bd[ch]);
            for (tap, &k) in wd[ch * 9..ch * 9 + 9].iter().enumerate() {
                for_each_tap_row(h, wi, tap, |yr, xr| {
                    for (a, &v) in yp[yr.clone()].iter_mut().zip(&xp[xr]) {
                        *a = *a + k * v;
                    }
                });
            }
        }
        Ok(self.push(y, Op::DepthwiseConv { x, w, b }))
    }

    /// Dense 3x3 convolution with zero padding 1; `w` is `[cout, cin, 3, 3]`.
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape;
        let ws = self.param_shape(w);
        if ws.len() != 4 || ws[1] != xs[1] || ws[2] != 3 || ws[3] != 3 {
            return Err(Error::Contract(format!(
                "conv weight {ws:?} does not fit {} input channels",
                xs[1]
            )));
        }
        let (cout, cin, hw) = (ws[0], ws[1], xs[2] * xs[3]);
        self.check_bias(b, cout)?;
        let (wd, bd) = (self.param_data(w), self.param_data(b));
        let xv = self.value(x);
        let mut y = Tensor::zeros([xs[0], cout, xs[2], xs[3]]);
        let mut col = vec![T::zero(); cin * 9 * hw];
        for n in 0..xs[0] {
            im2col(xv.item(n), cin, xs[2], xs[3], &mut col);
            let yn = &mut y.data[n * cout * hw..(n + 1) * cout * hw];
            for (co, row) in yn.chunks_mut(hw).enumerate() {
                row.fill(bd[co]);
            }
            T::gemm(cout, cin * 9, hw, wd, (cin * 9, 1), &col, (hw, 1), yn, (hw, 1), true);
        }
        Ok(self.push(y, Op::Conv3x3 { x, w, b }))
    }

    /// Fully connected layer on flattened items; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, din) = (xv.batch(), xv.item_len());
        let ws = self.param_shape(w);
        if ws.len() != 2 || ws[1] != din {
            return Err(Error::Contract(format!(
                "linear weight {ws:?} does not fit input width {din}"
            )));
        }
        let dout = ws[0];
        self.check_bias(b, dout)?;
        let (wd, bd) = (self.param_data(w), self.param_data(b));
        let mut y = Tensor::zeros([n, dout, 1, 1]);
        for row in y.data.chunks_mut(dout) {
            row.copy_from_slice(bd);
        }
        T::gemm(n, din, dout, &xv.data, (din, 1), wd, (1, din), &mut y.data, (dout, 1), true);
        Ok(self.push(y, Op::Linear { x, w, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut y = self.value(x).clone();
        for v in &mut y.data {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        self.push(y, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut y = self.value(x).clone();
        for v in &mut y.data {
            *v = sigmoid(*v);
        }
        self.push(y, Op::Sigmoid(x))
    }

    /// 2x2 max pooling with stride 2; spatial sides must be even.
    pub fn max_pool(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Contract(format!("max pool needs even sides, got {h}x{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut y = Tensor::zeros([n, c, oh, ow]);
        let mut argmax = vec![0u32; y.len()];
        for (p, xp) in xv.data.chunks(h * w).enumerate() {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = 2 * i * w + 2 * j;
                    for cand in [best + 1, best + w, best + w + 1] {
                        if xp[cand] > xp[best] {
                            best = cand;
                        }
                    }
                    let o = p * oh * ow + i * ow + j;
                    y.data[o] = xp[best];
                    argmax[o] = best as u32;
                }
            }
        }
        Ok(self.push(y, Op::MaxPool { x, argmax }))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape;
        let ow = 2 * w;
        let mut y = Tensor::zeros([n, c, 2 * h, ow]);
        for (yp, xp) in y.data.chunks_mut(4 * h * w).zip(xv.data.chunks(h * w)) {
            for i in 0..2 * h {
                for j in 0..ow {
                    yp[i * ow + j] = xp[(i / 2) * w + j / 2];
                }
            }
        }
        self.push(y, Op::Upsample(x))
    }

    /// Channel-wise concatenation of equally sized tensors.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.value(xs[0]).shape;
        let mut channels = 0;
        for &v in xs {
            let s = self.value(v).shape;
            if s[0] != first[0] || s[2] != first[2] || s[3] != first[3] {
                return Err(Error::Contract(format!("cannot concatenate {s:?} with {first:?}")));
            }
            channels += s[1];
        }
        let mut y = Tensor::zeros([first[0], channels, first[2], first[3]]);
        let item = y.item_len();
        for n in 0..first[0] {
            let mut off = n * item;
            for &v in xs {
                let src = self.value(v).item(n);
                y.data[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(y, Op::Concat(xs.to_vec())))
    }

    /// Reshapes each item to a `[d, 1, 1]` vector.
    pub fn flatten(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let shape = [xv.batch(), xv.item_len(), 1, 1];
        self.reshape(x, shape).expect("flatten preserves element count")
    }

    pub fn reshape(&mut self, x: Var, shape: [usize; 4]) -> Result<Var> {
        let xv = self.value(x);
        if shape.iter().product::<usize>() != xv.len() {
            return Err(Error::Contract(format!("cannot reshape {:?} to {shape:?}", xv.shape)));
        }
        let y = Tensor::from_vec(shape, xv.data.clone());
        Ok(self.push(y, Op::Reshape(x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.zip(a, b, |p, q| p + q)?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.zip(a, b, |p, q| p - q)?;
        Ok(self.push(y, Op::Sub(a, b)))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let mut y = self.value(x).clone();
        for v in &mut y.data {
            *v = v.abs();
        }
        self.push(y, Op::Abs(x))
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape != bv.shape {
            return Err(Error::Contract(format!(
                "shape mismatch {:?} vs {:?}",
                av.shape, bv.shape
            )));
        }
        let data = av.data.iter().zip(&bv.data).map(|(&p, &q)| f(p, q)).collect();
        Ok(Tensor::from_vec(av.shape, data))
    }

    /// Propagates the given output gradients back to inputs and parameters.
    pub fn backward(&self, seeds: &[(Var, Tensor<T>)]) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut pgrads = ParamGrads::zeros_like(self.params);
        for (v, g) in seeds {
            assert_eq!(g.shape, self.value(*v).shape, "seed gradient shape mismatch");
            accumulate(&mut grads, *v, g.clone());
        }
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => {
                    grads[i] = Some(g);
                }
                Op::Param(p) => {
                    for (a, b) in pgrads.grads[*p].iter_mut().zip(&g.data) {
                        *a = *a + *b;
                    }
                }
                Op::PointwiseConv { x, w, b } => {
                    let xv = self.value(*x);
                    let ws = self.param_shape(*w);
                    let (cout, cin, hw) = (ws[0], ws[1], xv.plane());
                    let wd = self.param_data(*w);
                    let mut dx = Tensor::zeros(xv.shape);
                    let mut dw = vec![T::zero(); cout * cin];
                    let mut db = vec![T::zero(); cout];
                    for n in 0..xv.batch() {
                        let gn = g.item(n);
                        T::gemm(cout, hw, cin, gn, (hw, 1), xv.item(n), (1, hw), &mut dw, (cin, 1), true);
                        let dxn = &mut dx.data[n * cin * hw..(n + 1) * cin * hw];
                        T::gemm(cin, cout, hw, wd, (1, cin), gn, (hw, 1), dxn, (hw, 1), false);
                        for (co, row) in gn.chunks(hw).enumerate() {
                            db[co] = db[co] + row.iter().copied().sum::<T>();
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    self.accumulate_param(&mut pgrads, *w, &dw);
                    self.accumulate_param(&mut pgrads, *b, &db);
                }
                Op::DepthwiseConv { x, w, b } => {
                    let xv = self.value(*x);
                    let [_, c, h, wi] = xv.shape;
                    let hw = h * wi;
                    let wd = self.param_data(*w);
                    let mut dx = Tensor::zeros(xv.shape);
                    let mut dw = vec![T::zero(); c * 9];
                    let mut db = vec![T::zero(); c];
                    for (plane, ((gp, xp), dxp)) in g
                        .data
                        .chunks(hw)
                        .zip(xv.data.chunks(hw))
                        .zip(dx.data.chunks_mut(hw))
                        .enumerate()
                    {
                        let ch = plane % c;
                        db[ch] = db[ch] + gp.iter().copied().sum::<T>();
                        for tap in 0..9 {
                            let k = wd[ch * 9 + tap];
                            let mut acc = T::zero();
                            for_each_tap_row(h, wi, tap, |yr, xr| {
                                for ((&gy, &xv), dxv) in
                                    gp[yr.clone()].iter().zip(&xp[xr.clone()]).zip(&mut dxp[xr])
                                {
                                    acc = acc + gy * xv;
                                    *dxv = *dxv + k * gy;
                                }
                            });
                            dw[ch * 9 + tap] = dw[ch * 9 + tap] + acc;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    self.accumulate_param(&mut pgrads, *w, &dw);
                    self.accumulate_param(&mut pgrads, *b, &db);
                }
                Op::Conv3x3 { x, w, b } => {
                    let xv = self.value(*x);
                    let [_, cin, h, wi] = xv.shape;
                    let hw = h * wi;
                    let cout = self.param_shape(*w)[0];
                    let wd = self.param_data(*w);
                    let k = cin * 9;
                    let mut dx = Tensor::zeros(xv.shape);
                    let mut dw = vec![T::zero(); cout * k];
                    let mut db = vec![T::zero(); cout];
                    let mut col = vec![T::zero(); k * hw];
                    let mut dcol = vec![T::zero(); k * hw];
                    for n in 0..xv.batch() {
                        let gn = g.item(n);
                        im2col(xv.item(n), cin, h, wi, &mut col);
                        T::gemm(cout, hw, k, gn, (hw, 1), &col, (1, hw), &mut dw, (k, 1), true);
                        T::gemm(k, cout, hw, wd, (1, k), gn, (hw, 1), &mut dcol, (hw, 1), false);
                        col2im(&dcol, cin, h, wi, &mut dx.data[n * cin * hw..(n + 1) * cin * hw]);
                        for (co, row) in gn.chunks(hw).enumerate() {
                            db[co] = db[co] + row.iter().copied().sum::<T>();
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    self.accumulate_param(&mut pgrads, *w, &dw);
                    self.accumulate_param(&mut pgrads, *b, &db);
                }
                Op::Linear { x, w, b } => {
                    let xv = self.value(*x);
                    let (n, din) = (xv.batch(), xv.item_len());
                    let dout = self.param_shape(*w)[0];
                    let wd = self.param_data(*w);
                    let mut dx = Tensor::zeros(xv.shape);
                    let mut dw = vec![T::zero(); dout * din];
                    T::gemm(n, dout, din, &g.data, (dout, 1), wd, (din, 1), &mut dx.data, (din, 1), false);
                    T::gemm(dout, n, din, &g.data, (1, dout), &xv.data, (din, 1), &mut dw, (din, 1), false);
                    let mut db = vec![T::zero(); dout];
                    for row in g.data.chunks(dout) {
                        for (a, &v) in db.iter_mut().zip(row) {
                            *a = *a + v;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    self.accumulate_param(&mut pgrads, *w, &dw);
                    self.accumulate_param(&mut pgrads, *b, &db);
                }
                Op::Relu(x) => {
                    let y = self.nodes[i].value.as_ref().expect("op value");
                    let mut dx = g;
                    for (d, &v) in dx.data.iter_mut().zip(&y.data) {
                        if v <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let y = self.nodes[i].value.as_ref().expect("op value");
                    let mut dx = g;
                    for (d, &v) in dx.data.iter_mut().zip(&y.data) {
                        *d = *d * v * (T::one() - v);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::MaxPool { x, argmax } => {
                    let xv = self.value(*x);
                    let mut dx = Tensor::zeros(xv.shape);
                    let (ip, op) = (xv.plane(), g.plane());
                    for (p, (gp, ap)) in g.data.chunks(op).zip(argmax.chunks(op)).enumerate() {
                        for (&gv, &a) in gp.iter().zip(ap) {
                            let d = &mut dx.data[p * ip + a as usize];
                            *d = *d + gv;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Upsample(x) => {
                    let xv = self.value(*x);
                    let [_, _, h, w] = xv.shape;
                    let ow = 2 * w;
                    let mut dx = Tensor::zeros(xv.shape);
                    for (gp, dp) in g.data.chunks(4 * h * w).zip(dx.data.chunks_mut(h * w)) {
                        for i in 0..2 * h {
                            for j in 0..ow {
                                let d = &mut dp[(i / 2) * w + j / 2];
                                *d = *d + gp[i * ow + j];
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Concat(xs) => {
                    let item = g.item_len();
                    let mut off = 0;
                    for &v in xs {
                        let shape = self.value(v).shape;
                        let len = shape[1] * shape[2] * shape[3];
                        let mut dx = Tensor::zeros(shape);
                        for n in 0..shape[0] {
                            dx.data[n * len..(n + 1) * len]
                                .copy_from_slice(&g.data[n * item + off..n * item + off + len]);
                        }
                        off += len;
                        accumulate(&mut grads, v, dx);
                    }
                }
                Op::Reshape(x) => {
                    let shape = self.value(*x).shape;
                    accumulate(&mut grads, *x, Tensor::from_vec(shape, g.data));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    let mut neg = g.clone();
                    for v in &mut neg.data {
                        *v = -*v;
                    }
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, neg);
                }
                Op::Abs(x) => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    for (d, &v) in dx.data.iter_mut().zip(&xv.data) {
                        *d = if v > T::zero() {
                            *d
                        } else if v < T::zero() {
                            -*d
                        } else {
                            T::zero()
                        };
                    }
                    accumulate(&mut grads, *x, dx);
                }
            }
        }
        Gradients {
            nodes: grads,
            params: pgrads,
        }
    }

    fn accumulate_param(&self, pgrads: &mut ParamGrads<T>, v: Var, g: &[T]) {
        if let Op::Param(p) = self.nodes[v.0].op {
            for (a, &b) in pgrads.grads[p].iter_mut().zip(g) {
                *a = *a + b;
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

/// Logistic function, evaluated without overflow for large magnitudes.
pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Calls `f(out_range, in_range)` for every output row touched by a 3x3 tap,
/// where both ranges index flat `h x w` planes.
#[inline]
fn for_each_tap_row(
    h: usize,
    w: usize,
    tap: usize,
    mut f: impl FnMut(std::ops::Range<usize>, std::ops::Range<usize>),
) {
    let (di, dj) = (tap / 3, tap % 3);
    let j0 = 1usize.saturating_sub(dj);
    let j1 = (w + 1 - dj).min(w);
    if j0 >= j1 {
        return;
    }
    for i in 0..h {
        let si = i + di;
        if si < 1 || si > h {
            continue;
        }
        let si = si - 1;
        f(i * w + j0..i * w + j1, si * w + j0 + dj - 1..si * w + j1 + dj - 1);
    }
}

fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, col: &mut [T]) {
    let hw = h * w;
    col.fill(T::zero());
    for ch in 0..c {
        let xp = &x[ch * hw..(ch + 1) * hw];
        for tap in 0..9 {
            let row = &mut col[(ch * 9 + tap) * hw..(ch * 9 + tap + 1) * hw];
            for_each_tap_row(h, w, tap, |yr, xr| row[yr].copy_from_slice(&xp[xr]));
        }
    }
}

fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let dp = &mut dx[ch * hw..(ch + 1) * hw];
        for tap in 0..9 {
            let row = &col[(ch * 9 + tap) * hw..(ch * 9 + tap + 1) * hw];
            for_each_tap_row(h, w, tap, |yr, xr| {
                for (d, &v) in dp[xr].iter_mut().zip(&row[yr]) {
                    *d = *d + v;
                }
            });
        }
    }
}
