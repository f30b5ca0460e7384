use super::conv;
use super::tensor::{numel, Tensor};
use super::DiffError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Maximum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum UnaryKind {
    Neg,
    Tanh,
    Exp,
    Log,
    Square,
    Sqrt,
    Relu,
}

pub(crate) enum Op {
    Binary(BinaryKind, Tensor, Tensor),
    Unary(UnaryKind, Tensor),
    Scale(Tensor, f64),
    AddScalar(Tensor),
    Clamp(Tensor, f64, f64),
    MatMul(Tensor, Tensor),
    Sum(Tensor),
    SumAxis { input: Tensor, axis: usize },
    Reshape(Tensor),
    Concat { inputs: Vec<Tensor>, axis: usize },
    Narrow { input: Tensor, axis: usize, start: usize },
    QuatMul(Tensor, Tensor),
    Conv2d { input: Tensor, weight: Tensor, bias: Tensor, stride: usize, pad: usize },
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<&Tensor> {
        match self {
            Op::Binary(_, a, b) | Op::MatMul(a, b) | Op::QuatMul(a, b) => vec![a, b],
            Op::Unary(_, a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Clamp(a, _, _)
            | Op::Sum(a)
            | Op::Reshape(a) => vec![a],
            Op::SumAxis { input, .. } | Op::Narrow { input, .. } => vec![input],
            Op::Concat { inputs, .. } => inputs.iter().collect(),
            Op::Conv2d { input, weight, bias, .. } => vec![input, weight, bias],
        }
    }

    /// Pushes `(input, d loss / d input)` for every input, given `g = d loss / d out`.
    pub(crate) fn backward(&self, out: &Tensor, g: &[f64], emit: &mut dyn FnMut(&Tensor, Vec<f64>)) {
        match self {
            Op::Binary(kind, a, b) => {
                let (ia, ib) = broadcast_offsets(a.shape(), b.shape(), out.shape());
                let (ad, bd) = (a.data(), b.data());
                let mut ga = vec![0.0; a.numel()];
                let mut gb = vec![0.0; b.numel()];
                for k in 0..g.len() {
                    let (i, j) = (ia[k], ib[k]);
                    let (x, y) = (ad[i], bd[j]);
                    let (da, db) = match kind {
                        BinaryKind::Add => (g[k], g[k]),
                        BinaryKind::Sub => (g[k], -g[k]),
                        BinaryKind::Mul => (g[k] * y, g[k] * x),
                        BinaryKind::Div => (g[k] / y, -g[k] * x / (y * y)),
                        BinaryKind::Maximum => {
                            if x >= y {
                                (g[k], 0.0)
                            } else {
                                (0.0, g[k])
                            }
                        }
                    };
                    ga[i] += da;
                    gb[j] += db;
                }
                emit(a, ga);
                emit(b, gb);
            }
            Op::Unary(kind, a) => {
                let x = a.data();
                let y = out.data();
                let ga = (0..g.len())
                    .map(|k| match kind {
                        UnaryKind::Neg => -g[k],
                        UnaryKind::Tanh => g[k] * (1.0 - y[k] * y[k]),
                        UnaryKind::Exp => g[k] * y[k],
                        UnaryKind::Log => g[k] / x[k],
                        UnaryKind::Square => 2.0 * x[k] * g[k],
                        // subgradient 0 at the origin
                        UnaryKind::Sqrt => {
                            if y[k] > 0.0 {
                                g[k] / (2.0 * y[k])
                            } else {
                                0.0
                            }
                        }
                        UnaryKind::Relu => {
                            if x[k] > 0.0 {
                                g[k]
                            } else {
                                0.0
                            }
                        }
                    })
                    .collect();
                emit(a, ga);
            }
            Op::Scale(a, s) => emit(a, g.iter().map(|v| v * s).collect()),
            Op::AddScalar(a) | Op::Reshape(a) => emit(a, g.to_vec()),
            Op::Clamp(a, lo, hi) => {
                let x = a.data();
                emit(
                    a,
                    g.iter()
                        .zip(x)
                        .map(|(gv, xv)| if *xv >= *lo && *xv <= *hi { *gv } else { 0.0 })
                        .collect(),
                );
            }
            Op::MatMul(a, b) => {
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[1];
                if a.requires_grad() {
                    // dA = G · Bᵀ
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, (n as isize, 1), b.data(), (1, n as isize), &mut ga);
                    emit(a, ga);
                }
                if b.requires_grad() {
                    // dB = Aᵀ · G
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, a.data(), (1, k as isize), g, (n as isize, 1), &mut gb);
                    emit(b, gb);
                }
            }
            Op::Sum(a) => emit(a, vec![g[0]; a.numel()]),
            Op::SumAxis { input, axis } => {
                let (outer, len, inner) = split_axis(input.shape(), *axis);
                let mut ga = vec![0.0; input.numel()];
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            ga[(o * len + l) * inner + i] = g[o * inner + i];
                        }
                    }
                }
                emit(input, ga);
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for t in inputs {
                    let len = t.shape()[*axis];
                    if t.requires_grad() {
                        let mut gt = Vec::with_capacity(t.numel());
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gt.extend_from_slice(&g[base..base + len * inner]);
                        }
                        emit(t, gt);
                    }
                    offset += len;
                }
            }
            Op::Narrow { input, axis, start } => {
                let (outer, total, inner) = split_axis(input.shape(), *axis);
                let len = out.shape()[*axis];
                let mut ga = vec![0.0; input.numel()];
                for o in 0..outer {
                    let dst = (o * total + start) * inner;
                    let src = o * len * inner;
                    ga[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                emit(input, ga);
            }
            Op::QuatMul(a, b) => {
                let (ad, bd) = (a.data(), b.data());
                let mut ga = vec![0.0; a.numel()];
                let mut gb = vec![0.0; b.numel()];
                for r in 0..ad.len() / 4 {
                    let (p, q, gq) = (&ad[4 * r..4 * r + 4], &bd[4 * r..4 * r + 4], &g[4 * r..4 * r + 4]);
                    let [gw, gx, gy, gz] = [gq[0], gq[1], gq[2], gq[3]];
                    ga[4 * r] = gw * q[0] + gx * q[1] + gy * q[2] + gz * q[3];
                    ga[4 * r + 1] = -gw * q[1] + gx * q[0] - gy * q[3] + gz * q[2];
                    ga[4 * r + 2] = -gw * q[2] + gx * q[3] + gy * q[0] - gz * q[1];
                    ga[4 * r + 3] = -gw * q[3] - gx * q[2] + gy * q[1] + gz * q[0];
                    gb[4 * r] = gw * p[0] + gx * p[1] + gy * p[2] + gz * p[3];
                    gb[4 * r + 1] = -gw * p[1] + gx * p[0] + gy * p[3] - gz * p[2];
                    gb[4 * r + 2] = -gw * p[2] - gx * p[3] + gy * p[0] + gz * p[1];
                    gb[4 * r + 3] = -gw * p[3] + gx * p[2] - gy * p[1] + gz * p[0];
                }
                emit(a, ga);
                emit(b, gb);
            }
            Op::Conv2d { input, weight, bias, stride, pad } => {
                let grads = conv::conv2d_backward(
                    input.data(),
                    input.shape(),
                    weight.data(),
                    weight.shape(),
                    g,
                    *stride,
                    *pad,
                    input.requires_grad(),
                );
                if let Some(gi) = grads.input {
                    emit(input, gi);
                }
                emit(weight, grads.weight);
                emit(bias, grads.bias);
            }
        }
    }
}

/// `(outer, len, inner)` sizes around `axis` for a row-major shape.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Flat offsets into `a` and `b` for every element of the broadcast output.
fn broadcast_offsets(a: &[usize], b: &[usize], out: &[usize]) -> (Vec<usize>, Vec<usize>) {
    if a == b {
        let idx: Vec<usize> = (0..numel(out)).collect();
        return (idx.clone(), idx);
    }
    (offsets_for(a, out), offsets_for(b, out))
}

fn offsets_for(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let n = out.len();
    let total = numel(out);
    if numel(shape) == total {
        return (0..total).collect();
    }
    // strides of `shape` aligned to the right of `out`, 0 on broadcast axes
    let mut strides = vec![0usize; n];
    let mut s = 1;
    for i in (0..shape.len()).rev() {
        let oi = i + n - shape.len();
        strides[oi] = if shape[i] == 1 { 0 } else { s };
        s *= shape[i];
    }
    let mut offsets = Vec::with_capacity(total);
    let mut counter = vec![0usize; n];
    let mut off = 0usize;
    for _ in 0..total {
        offsets.push(off);
        for d in (0..n).rev() {
            counter[d] += 1;
            off += strides[d];
            if counter[d] < out[d] {
                break;
            }
            off -= strides[d] * out[d];
            counter[d] = 0;
        }
    }
    offsets
}

/// C = A·B for row-major buffers with explicit (row, col) strides on A and B.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
) {
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    // SAFETY: the slices cover every index reachable through the given dims and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tensor {
    fn binary(&self, other: &Tensor, kind: BinaryKind) -> Result<Tensor, DiffError> {
        let out_shape = broadcast_shape(self.shape(), other.shape()).ok_or_else(|| DiffError::Shape {
            op: kind_name(kind),
            lhs: self.shape().to_vec(),
            rhs: other.shape().to_vec(),
        })?;
        let (ia, ib) = broadcast_offsets(self.shape(), other.shape(), &out_shape);
        let (a, b) = (self.data(), other.data());
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
            BinaryKind::Maximum => {
                if x >= y {
                    x
                } else {
                    y
                }
            }
        };
        let data = ia.iter().zip(&ib).map(|(&i, &j)| f(a[i], b[j])).collect();
        Ok(Tensor::from_op(data, out_shape, Op::Binary(kind, self.clone(), other.clone())))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, DiffError> {
        self.binary(other, BinaryKind::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, DiffError> {
        self.binary(other, BinaryKind::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor, DiffError> {
        self.binary(other, BinaryKind::Mul)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor, DiffError> {
        self.binary(other, BinaryKind::Div)
    }

    /// Elementwise maximum; ties send the gradient to `self`.
    pub fn maximum(&self, other: &Tensor) -> Result<Tensor, DiffError> {
        self.binary(other, BinaryKind::Maximum)
    }

    fn unary(&self, kind: UnaryKind) -> Tensor {
        let f = |x: f64| match kind {
            UnaryKind::Neg => -x,
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Exp => x.exp(),
            UnaryKind::Log => x.ln(),
            UnaryKind::Square => x * x,
            UnaryKind::Sqrt => x.sqrt(),
            UnaryKind::Relu => x.max(0.0),
        };
        let data = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Unary(kind, self.clone()))
    }

    pub fn neg(&self) -> Tensor {
        self.unary(UnaryKind::Neg)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(UnaryKind::Tanh)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(UnaryKind::Exp)
    }

    pub fn log(&self) -> Tensor {
        self.unary(UnaryKind::Log)
    }

    pub fn square(&self) -> Tensor {
        self.unary(UnaryKind::Square)
    }

    /// Square root with a zero subgradient at the origin.
    pub fn sqrt(&self) -> Tensor {
        self.unary(UnaryKind::Sqrt)
    }

    pub fn relu(&self) -> Tensor {
        self.unary(UnaryKind::Relu)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        let data = self.data().iter().map(|x| x * s).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Scale(self.clone(), s))
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        let data = self.data().iter().map(|x| x + s).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::AddScalar(self.clone()))
    }

    /// Clamp into `[lo, hi]`; gradient passes where the input lies inside the closed interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        let data = self.data().iter().map(|x| x.clamp(lo, hi)).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Clamp(self.clone(), lo, hi))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, DiffError> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(DiffError::Shape { op: "matmul", lhs: sa.to_vec(), rhs: sb.to_vec() });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, self.data(), (k as isize, 1), other.data(), (n as isize, 1), &mut c);
        Ok(Tensor::from_op(c, vec![m, n], Op::MatMul(self.clone(), other.clone())))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        Tensor::from_op(vec![s], vec![], Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor, DiffError> {
        if axis >= self.ndim() {
            return Err(DiffError::Axis { axis, shape: self.shape().to_vec() });
        }
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let row = &x[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (dst, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *dst += v;
                }
            }
        }
        let mut shape = self.shape().to_vec();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
        }
        Ok(Tensor::from_op(out, shape, Op::SumAxis { input: self.clone(), axis }))
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor, DiffError> {
        let len = *self.shape().get(axis).ok_or_else(|| DiffError::Axis { axis, shape: self.shape().to_vec() })?;
        Ok(self.sum_axis(axis, keepdim)?.scale(1.0 / len.max(1) as f64))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor, DiffError> {
        if numel(shape) != self.numel() {
            return Err(DiffError::Shape { op: "reshape", lhs: self.shape().to_vec(), rhs: shape.to_vec() });
        }
        Ok(Tensor::from_op(self.to_vec(), shape.to_vec(), Op::Reshape(self.clone())))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor, DiffError> {
        let first = parts.first().ok_or(DiffError::Empty("concat"))?;
        if axis >= first.ndim() {
            return Err(DiffError::Axis { axis, shape: first.shape().to_vec() });
        }
        for p in &parts[1..] {
            let ok = p.ndim() == first.ndim()
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(DiffError::Shape { op: "concat", lhs: first.shape().to_vec(), rhs: p.shape().to_vec() });
            }
        }
        let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = p.shape()[axis];
                data.extend_from_slice(&p.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let inputs = parts.iter().map(|p| (*p).clone()).collect();
        Ok(Tensor::from_op(data, shape, Op::Concat { inputs, axis }))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor, DiffError> {
        if axis >= self.ndim() || start + len > self.shape()[axis] {
            return Err(DiffError::Narrow { axis, start, len, shape: self.shape().to_vec() });
        }
        let (outer, total, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * total + start) * inner;
            data.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(data, shape, Op::Narrow { input: self.clone(), axis, start }))
    }

    /// Hamilton product of scalar-first quaternions stored in the last axis (extent 4).
    pub fn quat_mul(&self, other: &Tensor) -> Result<Tensor, DiffError> {
        if self.shape() != other.shape() || self.shape().last() != Some(&4) {
            return Err(DiffError::Shape { op: "quat_mul", lhs: self.shape().to_vec(), rhs: other.shape().to_vec() });
        }
        let (a, b) = (self.data(), other.data());
        let mut out = vec![0.0; a.len()];
        for r in 0..a.len() / 4 {
            let q = quat_product(
                [a[4 * r], a[4 * r + 1], a[4 * r + 2], a[4 * r + 3]],
                [b[4 * r], b[4 * r + 1], b[4 * r + 2], b[4 * r + 3]],
            );
            out[4 * r..4 * r + 4].copy_from_slice(&q);
        }
        Ok(Tensor::from_op(out, self.shape().to_vec(), Op::QuatMul(self.clone(), other.clone())))
    }

    /// 2D convolution, NCHW input, OIHW weight, per-output-channel bias.
    pub fn conv2d(&self, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor, DiffError> {
        let (si, sw) = (self.shape(), weight.shape());
        if si.len() != 4 || sw.len() != 4 || si[1] != sw[1] || bias.shape() != [sw[0]] || stride == 0 {
            return Err(DiffError::Shape { op: "conv2d", lhs: si.to_vec(), rhs: sw.to_vec() });
        }
        let (data, shape) = conv::conv2d_forward(self.data(), si, weight.data(), sw, bias.data(), stride, pad);
        let op = Op::Conv2d { input: self.clone(), weight: weight.clone(), bias: bias.clone(), stride, pad };
        Ok(Tensor::from_op(data, shape, op))
    }
}

fn kind_name(kind: BinaryKind) -> &'static str {
    match kind {
        BinaryKind::Add => "add",
        BinaryKind::Sub => "sub",
        BinaryKind::Mul => "mul",
        BinaryKind::Div => "div",
        BinaryKind::Maximum => "maximum",
    }
}

/// Hamilton product `p ⊗ q`, scalar-first.
pub fn quat_product(p: [f64; 4], q: [f64; 4]) -> [f64; 4] {
    [
        p[0] * q[0] - p[1] * q[1] - p[2] * q[2] - p[3] * q[3],
        p[0] * q[1] + p[1] * q[0] + p[2] * q[3] - p[3] * q[2],
        p[0] * q[2] - p[1] * q[3] + p[2] * q[0] + p[3] * q[1],
        p[0] * q[3] + p[1] * q[2] - p[2] * q[1] + p[3] * q[0],
    ]
}
