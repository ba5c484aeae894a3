//! Reverse-mode differentiation over a linear record of tensor operations.
//!
//! Each operation appends a node holding its output value and whatever it
//! needs for the backward pass. Nodes only refer to earlier nodes, so walking
//! the record backwards visits every node after all of its consumers.

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{Scalar, Tensor4};
use crate::error::{Error, Result};
use crate::field::Taps;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        pad: usize,
    },
    Relu {
        input: NodeId,
    },
    MaxPool2 {
        input: NodeId,
        argmax: Vec<u32>,
    },
    Upsample2 {
        input: NodeId,
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
    PadEven {
        input: NodeId,
    },
    Crop {
        input: NodeId,
    },
    Sum {
        input: NodeId,
    },
    PointLoss {
        field: NodeId,
        taps: Vec<Taps<T>>,
        residual: Vec<[T; 2]>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor4<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to every node that requires them.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor4<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `id`; `None` when the node does not influence the loss or
    /// does not require gradients.
    pub fn get(&self, id: NodeId) -> Option<&Tensor4<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor4<T>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

fn shape_err<T>(msg: alloc::string::String) -> Result<T> {
    Err(Error::Shape(msg))
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor4<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor4<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Records an input. Parameters pass `requires_grad = true`.
    pub fn leaf(&mut self, value: Tensor4<T>, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Cross-correlation with zero padding `pad` on every side plus an
    /// optional per-channel bias of shape `(1, out, 1, 1)`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        pad: usize,
    ) -> Result<NodeId> {
        let x = self.value(input);
        let k = self.value(kernel);
        let [_, c, h, w] = x.shape();
        let [o, kc, kh, kw] = k.shape();
        if kc != c {
            return shape_err(alloc::format!(
                "kernel expects {kc} input channels, input has {c}"
            ));
        }
        if kh != kw || kh % 2 == 0 {
            return shape_err(alloc::format!(
                "kernel must be square and odd, got {kh}x{kw}"
            ));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return shape_err(alloc::format!("{h}x{w} input is smaller than the kernel"));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [1, o, 1, 1] {
                return shape_err(alloc::format!(
                    "bias shape {:?} does not match {o} output channels",
                    self.value(b).shape()
                ));
            }
        }
        let out = conv_forward(x, k, bias.map(|b| self.value(b)), pad);
        let rg = self.rg(input) || self.rg(kernel) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                pad,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
        let out = Tensor4::new(x.shape(), data).unwrap();
        let rg = self.rg(input);
        self.push(out, Op::Relu { input }, rg)
    }

    /// 2x2 max pooling with stride 2. Ties resolve to the first element of
    /// the window in row-major order.
    pub fn maxpool2(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let [n, c, h, w] = x.shape();
        if h % 2 != 0 || w % 2 != 0 {
            return shape_err(alloc::format!("max pooling needs even dims, got {h}x{w}"));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor4::zeros([n, c, oh, ow]);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        let src = x.data();
        let dst = out.data_mut();
        let mut o = 0;
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let i0 = base + 2 * oy * w + 2 * ox;
                    let mut best = i0;
                    for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                        if src[cand] > src[best] {
                            best = cand;
                        }
                    }
                    dst[o] = src[best];
                    argmax.push(best as u32);
                    o += 1;
                }
            }
        }
        let rg = self.rg(input);
        Ok(self.push(out, Op::MaxPool2 { input, argmax }, rg))
    }

    /// Bilinear 2x upsampling with half-pixel centres and edge clamping.
    pub fn upsample2(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let [n, c, h, w] = x.shape();
        let ys = upsample_axis::<T>(h);
        let xs = upsample_axis::<T>(w);
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = Tensor4::zeros([n, c, oh, ow]);
        let src = x.data();
        let dst = out.data_mut();
        for plane in 0..n * c {
            let s = &src[plane * h * w..(plane + 1) * h * w];
            let d = &mut dst[plane * oh * ow..(plane + 1) * oh * ow];
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let top = s[y0 * w + x0] * (T::one() - fx) + s[y0 * w + x1] * fx;
                    let bot = s[y1 * w + x0] * (T::one() - fx) + s[y1 * w + x1] * fx;
                    d[oy * ow + ox] = top * (T::one() - fy) + bot * fy;
                }
            }
        }
        let rg = self.rg(input);
        self.push(out, Op::Upsample2 { input }, rg)
    }

    /// Stacks `b`'s channels after `a`'s.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let [n, ca, h, w] = va.shape();
        let [nb, cb, hb, wb] = vb.shape();
        if (n, h, w) != (nb, hb, wb) {
            return shape_err(alloc::format!(
                "cannot concatenate {:?} with {:?}",
                va.shape(),
                vb.shape()
            ));
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * (ca + cb) * hw);
        for i in 0..n {
            data.extend_from_slice(&va.data()[i * ca * hw..(i + 1) * ca * hw]);
            data.extend_from_slice(&vb.data()[i * cb * hw..(i + 1) * cb * hw]);
        }
        let out = Tensor4::new([n, ca + cb, h, w], data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Concat { a, b }, rg))
    }

    /// Reflect-pads one row and/or column at the bottom/right so both spatial
    /// dims are even. A no-op node when they already are.
    pub fn pad_even(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let [n, c, h, w] = x.shape();
        let (ph, pw) = (h + h % 2, w + w % 2);
        let mut out = Tensor4::zeros([n, c, ph, pw]);
        let src = x.data();
        let dst = out.data_mut();
        for plane in 0..n * c {
            for y in 0..ph {
                let sy = reflect_last(y, h);
                for xx in 0..pw {
                    let sx = reflect_last(xx, w);
                    dst[plane * ph * pw + y * pw + xx] = src[plane * h * w + sy * w + sx];
                }
            }
        }
        let rg = self.rg(input);
        self.push(out, Op::PadEven { input }, rg)
    }

    /// Keeps the top-left `height x width` window.
    pub fn crop(&mut self, input: NodeId, height: usize, width: usize) -> Result<NodeId> {
        let x = self.value(input);
        let [n, c, h, w] = x.shape();
        if height > h || width > w {
            return shape_err(alloc::format!("cannot crop {h}x{w} to {height}x{width}"));
        }
        let mut out = Tensor4::zeros([n, c, height, width]);
        let dst = out.data_mut();
        for plane in 0..n * c {
            for y in 0..height {
                let s = plane * h * w + y * w;
                let d = plane * height * width + y * width;
                dst[d..d + width].copy_from_slice(&x.data()[s..s + width]);
            }
        }
        let rg = self.rg(input);
        Ok(self.push(out, Op::Crop { input }, rg))
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let total = self
            .value(input)
            .data()
            .iter()
            .fold(T::zero(), |acc, &v| acc + v);
        let rg = self.rg(input);
        self.push(Tensor4::scalar(total), Op::Sum { input }, rg)
    }

    /// Mean squared distance between the field sampled at `coords` and
    /// `targets`: `(1/N) * sum ||F(p_i) - t_i||^2`, with bilinear lookup.
    ///
    /// `field` must have shape `(1, 2, H, W)`.
    pub fn point_loss(
        &mut self,
        field: NodeId,
        coords: &[[T; 2]],
        targets: &[[T; 2]],
    ) -> Result<NodeId> {
        let f = self.value(field);
        let [n, c, h, w] = f.shape();
        if n != 1 || c != 2 {
            return shape_err(alloc::format!(
                "point loss needs a (1, 2, H, W) field, got {:?}",
                f.shape()
            ));
        }
        if coords.len() != targets.len() || coords.is_empty() {
            return shape_err(alloc::format!(
                "{} sample coordinates for {} targets",
                coords.len(),
                targets.len()
            ));
        }
        let (fx, fy) = (f.plane(0, 0), f.plane(0, 1));
        let mut taps = Vec::with_capacity(coords.len());
        let mut residual = Vec::with_capacity(coords.len());
        let mut total = T::zero();
        for (p, t) in coords.iter().zip(targets) {
            let tp = Taps::bilinear(w, h, p[0], p[1]);
            let r = [tp.apply(fx) - t[0], tp.apply(fy) - t[1]];
            total = total + r[0] * r[0] + r[1] * r[1];
            taps.push(tp);
            residual.push(r);
        }
        let count = T::from_f64(coords.len() as f64);
        let rg = self.rg(field);
        Ok(self.push(
            Tensor4::scalar(total / count),
            Op::PointLoss {
                field,
                taps,
                residual,
            },
            rg,
        ))
    }

    /// Back-propagates from the scalar node `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::Usage(
                "backward called before a forward pass was recorded".into(),
            ));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return shape_err(alloc::format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            ));
        }
        self.backward_from(loss, Tensor4::scalar(T::one()))
    }

    /// Back-propagates an arbitrary upstream gradient `seed` into node `from`.
    pub fn backward_from(&self, from: NodeId, seed: Tensor4<T>) -> Result<Gradients<T>> {
        if from.0 >= self.nodes.len() {
            return Err(Error::Usage(
                "backward called before a forward pass was recorded".into(),
            ));
        }
        if seed.shape() != self.nodes[from.0].value.shape() {
            return shape_err(alloc::format!(
                "seed gradient {:?} does not match node {:?}",
                seed.shape(),
                self.nodes[from.0].value.shape()
            ));
        }
        let mut grads: Vec<Option<Tensor4<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[from.0] = Some(seed);

        for i in (0..=from.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    pad,
                } => {
                    let x = self.value(*input);
                    let k = self.value(*kernel);
                    let (dx, dk, db) = conv_backward(x, k, &g, *pad, self.rg(*input));
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *input, dx);
                    }
                    if self.rg(*kernel) {
                        accumulate(&mut grads, *kernel, dk);
                    }
                    if let Some(b) = bias {
                        if self.rg(*b) {
                            accumulate(&mut grads, *b, db);
                        }
                    }
                }
                Op::Relu { input } => {
                    let mut d = g;
                    for (dv, &v) in d.data_mut().iter_mut().zip(node.value.data()) {
                        if v <= T::zero() {
                            *dv = T::zero();
                        }
                    }
                    accumulate(&mut grads, *input, d);
                }
                Op::MaxPool2 { input, argmax } => {
                    let mut d = Tensor4::zeros(self.value(*input).shape());
                    let dd = d.data_mut();
                    for (&src, &gv) in argmax.iter().zip(g.data()) {
                        dd[src as usize] = dd[src as usize] + gv;
                    }
                    accumulate(&mut grads, *input, d);
                }
                Op::Upsample2 { input } => {
                    let d = upsample_backward(self.value(*input).shape(), &g);
                    accumulate(&mut grads, *input, d);
                }
                Op::Concat { a, b } => {
                    let [n, c, h, w] = g.shape();
                    let ca = self.value(*a).channels();
                    let cb = c - ca;
                    let hw = h * w;
                    let mut da = Vec::with_capacity(n * ca * hw);
                    let mut db = Vec::with_capacity(n * cb * hw);
                    for s in 0..n {
                        let chunk = &g.data()[s * c * hw..(s + 1) * c * hw];
                        da.extend_from_slice(&chunk[..ca * hw]);
                        db.extend_from_slice(&chunk[ca * hw..]);
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, Tensor4::new([n, ca, h, w], da)?);
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, Tensor4::new([n, cb, h, w], db)?);
                    }
                }
                Op::PadEven { input } => {
                    let [n, c, h, w] = self.value(*input).shape();
                    let [_, _, ph, pw] = g.shape();
                    let mut d = Tensor4::zeros([n, c, h, w]);
                    let dd = d.data_mut();
                    for plane in 0..n * c {
                        for y in 0..ph {
                            let sy = reflect_last(y, h);
                            for xx in 0..pw {
                                let sx = reflect_last(xx, w);
                                let t = plane * h * w + sy * w + sx;
                                dd[t] = dd[t] + g.data()[plane * ph * pw + y * pw + xx];
                            }
                        }
                    }
                    accumulate(&mut grads, *input, d);
                }
                Op::Crop { input } => {
                    let [n, c, h, w] = self.value(*input).shape();
                    let [_, _, ch, cw] = g.shape();
                    let mut d = Tensor4::zeros([n, c, h, w]);
                    let dd = d.data_mut();
                    for plane in 0..n * c {
                        for y in 0..ch {
                            let t = plane * h * w + y * w;
                            let s = plane * ch * cw + y * cw;
                            dd[t..t + cw].copy_from_slice(&g.data()[s..s + cw]);
                        }
                    }
                    accumulate(&mut grads, *input, d);
                }
                Op::Sum { input } => {
                    let shape = self.value(*input).shape();
                    accumulate(&mut grads, *input, Tensor4::filled(shape, g.data()[0]));
                }
                Op::PointLoss {
                    field,
                    taps,
                    residual,
                } => {
                    let shape = self.value(*field).shape();
                    let hw = shape[2] * shape[3];
                    let two = T::from_f64(2.0);
                    let scale = g.data()[0] * two / T::from_f64(taps.len() as f64);
                    let mut d = Tensor4::zeros(shape);
                    let dd = d.data_mut();
                    for (tp, r) in taps.iter().zip(residual) {
                        for (&ix, &wt) in tp.index.iter().zip(&tp.weight) {
                            dd[ix] = dd[ix] + wt * r[0] * scale;
                            dd[hw + ix] = dd[hw + ix] + wt * r[1] * scale;
                        }
                    }
                    accumulate(&mut grads, *field, d);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor4<T>>], id: NodeId, g: Tensor4<T>) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn reflect_last(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else {
        n.saturating_sub(2)
    }
}

/// For each output position along an upsampled axis: the two source indices
/// and the weight of the second.
fn upsample_axis<T: Scalar>(n: usize) -> Vec<(usize, usize, T)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, T::from_f64(src - i0 as f64))
        })
        .collect()
}

fn upsample_backward<T: Scalar>(in_shape: [usize; 4], g: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = in_shape;
    let ys = upsample_axis::<T>(h);
    let xs = upsample_axis::<T>(w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut d = Tensor4::zeros(in_shape);
    let dd = d.data_mut();
    for plane in 0..n * c {
        let gs = &g.data()[plane * oh * ow..(plane + 1) * oh * ow];
        let ds = &mut dd[plane * h * w..(plane + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let gv = gs[oy * ow + ox];
                let (one_fx, one_fy) = (T::one() - fx, T::one() - fy);
                ds[y0 * w + x0] = ds[y0 * w + x0] + gv * one_fx * one_fy;
                ds[y0 * w + x1] = ds[y0 * w + x1] + gv * fx * one_fy;
                ds[y1 * w + x0] = ds[y1 * w + x0] + gv * one_fx * fy;
                ds[y1 * w + x1] = ds[y1 * w + x1] + gv * fx * fy;
            }
        }
    }
    d
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(x: [usize; 4], k: [usize; 4], pad: usize) -> Self {
        let [_, c, h, w] = x;
        let kk = k[2];
        Self {
            c,
            h,
            w,
            k: kk,
            pad,
            oh: h + 2 * pad + 1 - kk,
            ow: w + 2 * pad + 1 - kk,
        }
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Valid output-column range for kernel column `kx`.
    fn x_range(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx);
        let hi = (self.w + self.pad).saturating_sub(kx).min(self.ow);
        (lo, hi.max(lo))
    }

    fn im2col<T: Scalar>(&self, x: &[T], col: &mut [T]) {
        let cols = self.cols();
        for ch in 0..self.c {
            let plane = &x[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ch * self.k + ky) * self.k + kx;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    let (lo, hi) = self.x_range(kx);
                    for oy in 0..self.oh {
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        let iy = oy + ky;
                        if iy < self.pad || iy - self.pad >= self.h {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[(iy - self.pad) * self.w..(iy - self.pad + 1) * self.w];
                        line[..lo].fill(T::zero());
                        line[hi..].fill(T::zero());
                        let ix0 = lo + kx - self.pad;
                        line[lo..hi].copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, col: &[T], dx: &mut [T]) {
        let cols = self.cols();
        for ch in 0..self.c {
            let plane = &mut dx[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ch * self.k + ky) * self.k + kx;
                    let src = &col[row * cols..(row + 1) * cols];
                    let (lo, hi) = self.x_range(kx);
                    for oy in 0..self.oh {
                        let iy = oy + ky;
                        if iy < self.pad || iy - self.pad >= self.h {
                            continue;
                        }
                        let line = &src[oy * self.ow..(oy + 1) * self.ow];
                        let ix0 = lo + kx - self.pad;
                        let dst = &mut plane[(iy - self.pad) * self.w + ix0
                            ..(iy - self.pad) * self.w + ix0 + (hi - lo)];
                        for (d, &s) in dst.iter_mut().zip(&line[lo..hi]) {
                            *d = *d + s;
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward<T: Scalar>(
    x: &Tensor4<T>,
    k: &Tensor4<T>,
    bias: Option<&Tensor4<T>>,
    pad: usize,
) -> Tensor4<T> {
    let geom = ConvGeom::new(x.shape(), k.shape(), pad);
    let n = x.batch();
    let o = k.batch();
    let in_size = geom.c * geom.h * geom.w;
    let out_size = o * geom.cols();
    let mut out = Tensor4::zeros([n, o, geom.oh, geom.ow]);
    let direct = geom.k == 1 && pad == 0;
    let mut col = if direct {
        Vec::new()
    } else {
        vec![T::zero(); geom.rows() * geom.cols()]
    };
    for b in 0..n {
        let xb = &x.data()[b * in_size..(b + 1) * in_size];
        let ob = &mut out.data_mut()[b * out_size..(b + 1) * out_size];
        let colb: &[T] = if direct {
            xb
        } else {
            geom.im2col(xb, &mut col);
            &col
        };
        T::gemm(
            o,
            geom.rows(),
            geom.cols(),
            k.data(),
            false,
            colb,
            false,
            T::zero(),
            ob,
        );
        if let Some(bias) = bias {
            for (oc, &bv) in bias.data().iter().enumerate() {
                for v in &mut ob[oc * geom.cols()..(oc + 1) * geom.cols()] {
                    *v = *v + bv;
                }
            }
        }
    }
    out
}

#[allow(clippy::type_complexity)]
fn conv_backward<T: Scalar>(
    x: &Tensor4<T>,
    k: &Tensor4<T>,
    g: &Tensor4<T>,
    pad: usize,
    want_input: bool,
) -> (Option<Tensor4<T>>, Tensor4<T>, Tensor4<T>) {
    let geom = ConvGeom::new(x.shape(), k.shape(), pad);
    let n = x.batch();
    let o = k.batch();
    let in_size = geom.c * geom.h * geom.w;
    let out_size = o * geom.cols();
    let mut dk = Tensor4::zeros(k.shape());
    let mut db = Tensor4::zeros([1, o, 1, 1]);
    let mut dx = want_input.then(|| Tensor4::zeros(x.shape()));
    let direct = geom.k == 1 && pad == 0;
    let mut col = vec![T::zero(); if direct { 0 } else { geom.rows() * geom.cols() }];
    let mut dcol = vec![
        T::zero();
        if want_input {
            geom.rows() * geom.cols()
        } else {
            0
        }
    ];
    for b in 0..n {
        let xb = &x.data()[b * in_size..(b + 1) * in_size];
        let gb = &g.data()[b * out_size..(b + 1) * out_size];
        let colb: &[T] = if direct {
            xb
        } else {
            geom.im2col(xb, &mut col);
            &col
        };
        // dK (o x rows) += dOut (o x cols) * col^T
        T::gemm(
            o,
            geom.cols(),
            geom.rows(),
            gb,
            false,
            colb,
            true,
            T::one(),
            dk.data_mut(),
        );
        for (oc, d) in db.data_mut().iter_mut().enumerate() {
            *d = gb[oc * geom.cols()..(oc + 1) * geom.cols()]
                .iter()
                .fold(*d, |acc, &v| acc + v);
        }
        if let Some(dx) = dx.as_mut() {
            // dcol (rows x cols) = K^T * dOut
            T::gemm(
                geom.rows(),
                o,
                geom.cols(),
                k.data(),
                true,
                gb,
                false,
                T::zero(),
                &mut dcol,
            );
            let dxb = &mut dx.data_mut()[b * in_size..(b + 1) * in_size];
            if direct {
                for (d, &s) in dxb.iter_mut().zip(&dcol) {
                    *d = *d + s;
                }
            } else {
                geom.col2im(&dcol, dxb);
            }
        }
    }
    (dx, dk, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: [usize; 4], data: &[f64]) -> Tensor4<f64> {
        Tensor4::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn conv_of_ones_counts_window_overlap() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor4::filled([1, 1, 3, 3], 1.0), false);
        let k = tape.leaf(Tensor4::filled([1, 1, 3, 3], 1.0), true);
        let b = tape.leaf(Tensor4::zeros([1, 1, 1, 1]), true);
        let y = tape.conv2d(x, k, Some(b), 1).unwrap();
        assert_eq!(
            tape.value(y).data(),
            &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]
        );
    }

    #[test]
    fn identity_and_bias_only_kernels() {
        let data: Vec<f64> = (0..12).map(|v| v as f64 * 0.5 - 2.0).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(t([1, 1, 3, 4], &data), false);
        let k = tape.leaf(Tensor4::filled([1, 1, 1, 1], 1.0), true);
        let y = tape.conv2d(x, k, None, 0).unwrap();
        assert_eq!(tape.value(y).data(), &data[..]);

        let k0 = tape.leaf(Tensor4::zeros([1, 1, 3, 3]), true);
        let b = tape.leaf(Tensor4::filled([1, 1, 1, 1], 0.75), true);
        let y = tape.conv2d(x, k0, Some(b), 1).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor4::zeros([1, 2, 4, 4]), false);
        let k = tape.leaf(Tensor4::zeros([3, 1, 3, 3]), true);
        assert!(matches!(tape.conv2d(x, k, None, 1), Err(Error::Shape(_))));
        let k = tape.leaf(Tensor4::zeros([3, 2, 2, 2]), true);
        assert!(tape.conv2d(x, k, None, 1).is_err());
    }

    #[test]
    fn kernel_gradient_of_summed_conv_is_summed_windows() {
        // d/dK sum(conv(x, K)) = for each tap, the sum of the input values
        // that tap touches.
        let data: Vec<f64> = (0..16).map(|v| (v as f64).sin()).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(t([1, 1, 4, 4], &data), false);
        let k = tape.leaf(Tensor4::filled([1, 1, 3, 3], 0.3), true);
        let b = tape.leaf(Tensor4::zeros([1, 1, 1, 1]), true);
        let y = tape.conv2d(x, k, Some(b), 1).unwrap();
        let s = tape.sum(y);
        let grads = tape.backward(s).unwrap();
        let dk = grads.get(k).unwrap();
        for ky in 0..3 {
            for kx in 0..3 {
                let mut expected = 0.0;
                for oy in 0..4isize {
                    for ox in 0..4isize {
                        let (iy, ix) = (oy + ky as isize - 1, ox + kx as isize - 1);
                        if (0..4).contains(&iy) && (0..4).contains(&ix) {
                            expected += data[(iy * 4 + ix) as usize];
                        }
                    }
                }
                assert!((dk.at(0, 0, ky, kx) - expected).abs() < 1e-12);
            }
        }
        assert_eq!(grads.get(b).unwrap().data(), &[16.0]);
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn maxpool_relu_upsample_basics() {
        let mut tape = Tape::new();
        let x = tape.leaf(t([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), true);
        let p = tape.maxpool2(x).unwrap();
        assert_eq!(tape.value(p).data(), &[4.0]);

        let tie = tape.leaf(t([1, 1, 2, 2], &[5.0, 5.0, 5.0, 5.0]), true);
        let pt = tape.maxpool2(tie).unwrap();
        let s = tape.sum(pt);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(tie).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);

        let odd = tape.leaf(Tensor4::zeros([1, 1, 3, 2]), true);
        assert!(tape.maxpool2(odd).is_err());

        let r = tape.leaf(t([1, 1, 1, 3], &[-2.0, 0.0, 3.5]), true);
        let ry = tape.relu(r);
        assert_eq!(tape.value(ry).data(), &[0.0, 0.0, 3.5]);

        let c = tape.leaf(Tensor4::filled([1, 2, 3, 5], 1.25), true);
        let u = tape.upsample2(c);
        assert_eq!(tape.value(u).shape(), [1, 2, 6, 10]);
        assert!(tape.value(u).data().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn upsample_interpolates_half_pixel() {
        let mut tape = Tape::new();
        let x = tape.leaf(t([1, 1, 1, 2], &[0.0, 4.0]), true);
        let u = tape.upsample2(x);
        assert_eq!(
            tape.value(u).data(),
            &[0.0, 1.0, 3.0, 4.0, 0.0, 1.0, 3.0, 4.0]
        );
    }

    #[test]
    fn pad_even_and_crop() {
        let mut tape = Tape::new();
        let x = tape.leaf(t([1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]), true);
        let p = tape.pad_even(x);
        assert_eq!(tape.value(p).shape(), [1, 1, 4, 4]);
        assert_eq!(
            tape.value(p).data(),
            &[1., 2., 3., 2., 4., 5., 6., 5., 7., 8., 9., 8., 4., 5., 6., 5.]
        );
        let c = tape.crop(p, 3, 3).unwrap();
        assert_eq!(tape.value(c).data(), tape.value(x).data());
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        assert_eq!(
            g.get(x).unwrap().data(),
            &[1., 2., 1., 2., 4., 2., 1., 2., 1.]
        );
    }

    #[test]
    fn concat_stacks_channels() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor4::filled([1, 1, 2, 2], 1.0), true);
        let b = tape.leaf(Tensor4::filled([1, 2, 2, 2], 2.0), true);
        let c = tape.concat(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), [1, 3, 2, 2]);
        assert_eq!(tape.value(c).plane(0, 2), &[2.0; 4]);
        let bad = tape.leaf(Tensor4::zeros([1, 1, 3, 2]), true);
        assert!(tape.concat(a, bad).is_err());
    }

    #[test]
    fn point_loss_values() {
        let mut tape = Tape::new();
        let field = tape.leaf(Tensor4::zeros([1, 2, 4, 4]), true);
        // predicted 0, offset (0, 0): target is 0 -> loss 0
        let l = tape
            .point_loss(field, &[[1.0, 1.0]], &[[0.0, 0.0]])
            .unwrap();
        assert_eq!(tape.value(l).data(), &[0.0]);
        let mut data = vec![0.0; 32];
        data[5] = 1.0;
        data[16 + 5] = 2.0;
        let f = tape.leaf(t([1, 2, 4, 4], &data), true);
        // predicted (1, 2) at (1, 1); applied offset (3, 4) -> target (-3, -4)
        let l = tape.point_loss(f, &[[1.0, 1.0]], &[[-3.0, -4.0]]).unwrap();
        assert_eq!(tape.value(l).data(), &[52.0]);
        assert!(tape.point_loss(f, &[], &[]).is_err());
    }

    #[test]
    fn backward_usage_errors() {
        let tape = Tape::<f32>::new();
        assert!(matches!(tape.backward(NodeId(0)), Err(Error::Usage(_))));
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor4::zeros([1, 1, 2, 2]), true);
        assert!(matches!(tape.backward(x), Err(Error::Shape(_))));
        let z = tape.sum(x);
        let g = tape.backward(z).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }
}
