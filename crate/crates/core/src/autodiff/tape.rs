use std::borrow::Cow;
use std::f64::consts::PI;

use super::tensor::{gemm, Tensor};
use super::AutodiffError;

/// Handle to a node recorded on a [`Tape`].
///
/// The node owns its forward data; its gradient lives in the tape and is
/// read back with [`Tape::grad`] after [`Tape::backward`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Value(usize);

impl Value {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Elementwise single-input operations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Relu,
    /// Negative-side slope; the partial at exactly zero is the slope.
    LeakyRelu(f64),
    Sin,
    Cos,
    Square,
    Sqrt,
    Neg,
    Scale(f64),
    Offset(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

/// Layout of a 2-D convolution over an NCHW batch with square kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

enum Op<'a> {
    Leaf,
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
        rows: usize,
        fan_in: usize,
        fan_out: usize,
    },
    Conv2d {
        x: usize,
        w: usize,
        b: usize,
        geom: ConvGeometry,
        cols: Vec<f64>,
    },
    AvgPool {
        x: usize,
        area: usize,
    },
    Transpose {
        x: usize,
        rows: usize,
        cols: usize,
    },
    Unary {
        x: usize,
        f: Unary,
    },
    Binary {
        a: usize,
        b: usize,
        f: Binary,
    },
    ScaleBy {
        x: usize,
        s: usize,
    },
    Sum {
        x: usize,
    },
    Mean {
        x: usize,
    },
    Norm {
        x: usize,
    },
    AddN {
        xs: Vec<usize>,
    },
    Slice {
        x: usize,
        offset: usize,
    },
    SliceCols {
        x: usize,
        cols: usize,
        start: usize,
    },
    Concat {
        xs: Vec<usize>,
    },
    AnglePair {
        x: usize,
    },
    RotateTranslate {
        cs: usize,
        tau: usize,
        pts: usize,
    },
    Fourier {
        x: usize,
        freqs: &'a [f64],
    },
}

struct Node<'a> {
    data: Cow<'a, [f64]>,
    shape: Vec<usize>,
    op: Op<'a>,
    needs_grad: bool,
}

/// Append-only record of a forward computation, replayed in reverse by
/// [`Tape::backward`].
///
/// Nodes are stored in creation order, so every node's inputs precede it.
/// Leaves may borrow their data (parameters are not copied per batch).
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Cow<'a, [f64]>, shape: Vec<usize>, op: Op<'a>, needs_grad: bool) -> Value {
        debug_assert_eq!(data.len(), numel(&shape));
        self.nodes.push(Node {
            data,
            shape,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Value(self.nodes.len() - 1)
    }

    fn needs(&self, v: usize) -> bool {
        self.nodes[v].needs_grad
    }

    /// Trainable leaf that borrows its data.
    pub fn param(&mut self, data: &'a [f64], shape: &[usize]) -> Result<Value, AutodiffError> {
        self.leaf(Cow::Borrowed(data), shape, true)
    }

    /// Trainable leaf that owns its data.
    pub fn variable(&mut self, tensor: Tensor) -> Value {
        let shape = tensor.shape().to_vec();
        self.push(Cow::Owned(tensor.into_data()), shape, Op::Leaf, true)
    }

    /// Leaf excluded from gradient propagation.
    pub fn constant(&mut self, tensor: Tensor) -> Value {
        let shape = tensor.shape().to_vec();
        self.push(Cow::Owned(tensor.into_data()), shape, Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, data: &'a [f64], shape: &[usize]) -> Result<Value, AutodiffError> {
        self.leaf(Cow::Borrowed(data), shape, false)
    }

    pub fn scalar(&mut self, value: f64) -> Value {
        self.constant(Tensor::scalar(value))
    }

    fn leaf(&mut self, data: Cow<'a, [f64]>, shape: &[usize], needs_grad: bool) -> Result<Value, AutodiffError> {
        if numel(shape) != data.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "leaf",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(self.push(data, shape.to_vec(), Op::Leaf, needs_grad))
    }

    pub fn data(&self, v: Value) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Value) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Value) -> Tensor {
        let node = &self.nodes[v.0];
        Tensor::new(&node.shape, node.data.to_vec()).expect("node shape is consistent")
    }

    /// First element of a node; the value of a scalar.
    pub fn item(&self, v: Value) -> f64 {
        self.nodes[v.0].data[0]
    }

    /// Accumulated gradient of `v`, or `None` if no backward pass reached it.
    pub fn grad(&self, v: Value) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient of `v` with zeros for unreached nodes.
    pub fn grad_or_zeros(&self, v: Value) -> Vec<f64> {
        self.grad(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; self.nodes[v.0].data.len()])
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    // ---------------------------------------------------------------------
    // Forward operations
    // ---------------------------------------------------------------------

    /// `x·Wᵀ + b` for `x` of shape `[n]` or `[rows, n]`, `W` of shape `[m, n]`.
    pub fn linear(&mut self, x: Value, w: Value, b: Option<Value>) -> Result<Value, AutodiffError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let mismatch = || AutodiffError::ShapeMismatch {
            op: "linear",
            lhs: xs.clone(),
            rhs: ws.clone(),
        };
        if ws.len() != 2 {
            return Err(mismatch());
        }
        let (fan_out, fan_in) = (ws[0], ws[1]);
        let (rows, out_shape) = match xs.as_slice() {
            [n] if *n == fan_in => (1, vec![fan_out]),
            [r, n] if *n == fan_in => (*r, vec![*r, fan_out]),
            _ => return Err(mismatch()),
        };
        if let Some(b) = b {
            if self.shape(b) != [fan_out] {
                return Err(AutodiffError::ShapeMismatch {
                    op: "linear bias",
                    lhs: vec![fan_out],
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let mut out = vec![0.0; rows * fan_out];
        if let Some(b) = b {
            let bias = self.data(b);
            for row in out.chunks_exact_mut(fan_out) {
                row.copy_from_slice(bias);
            }
        }
        gemm(
            rows,
            fan_in,
            fan_out,
            1.0,
            self.data(x),
            (fan_in, 1),
            self.data(w),
            (1, fan_in),
            1.0,
            &mut out,
            (fan_out, 1),
        );
        let needs = self.needs(x.0) || self.needs(w.0) || b.is_some_and(|b| self.needs(b.0));
        Ok(self.push(
            Cow::Owned(out),
            out_shape,
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
                rows,
                fan_in,
                fan_out,
            },
            needs,
        ))
    }

    /// Plain matrix product `[m,k]·[k,n]`.
    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value, AutodiffError> {
        let (ash, bsh) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: ash,
                rhs: bsh,
            });
        }
        let bt = self.transpose(b)?;
        self.linear(a, bt, None)
    }

    pub fn transpose(&mut self, x: Value) -> Result<Value, AutodiffError> {
        let shape = self.shape(x).to_vec();
        let [rows, cols] = shape[..] else {
            return Err(AutodiffError::ShapeMismatch {
                op: "transpose",
                lhs: shape,
                rhs: vec![2],
            });
        };
        let data = self.data(x);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = data[r * cols + c];
            }
        }
        let needs = self.needs(x.0);
        Ok(self.push(Cow::Owned(out), vec![cols, rows], Op::Transpose { x: x.0, rows, cols }, needs))
    }

    /// Convolution of an NCHW batch with weights `[out, in·k·k]` and bias `[out]`.
    pub fn conv2d(&mut self, x: Value, w: Value, b: Value, geom: ConvGeometry) -> Result<Value, AutodiffError> {
        let expect_x = [geom.batch, geom.in_channels, geom.height, geom.width];
        if self.shape(x) != expect_x {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv2d input",
                lhs: expect_x.to_vec(),
                rhs: self.shape(x).to_vec(),
            });
        }
        let patch = geom.patch();
        if self.shape(w) != [geom.out_channels, patch] || self.shape(b) != [geom.out_channels] {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv2d weights",
                lhs: vec![geom.out_channels, patch],
                rhs: self.shape(w).to_vec(),
            });
        }
        let (ho, wo) = (geom.out_height(), geom.out_width());
        let area = ho * wo;
        let mut cols = vec![0.0; geom.batch * patch * area];
        let input = self.data(x);
        let plane = geom.height * geom.width;
        for n in 0..geom.batch {
            let img = &input[n * geom.in_channels * plane..(n + 1) * geom.in_channels * plane];
            let col = &mut cols[n * patch * area..(n + 1) * patch * area];
            im2col(img, col, &geom);
        }
        let mut out = vec![0.0; geom.batch * geom.out_channels * area];
        let (wdata, bdata) = (self.data(w), self.data(b));
        for n in 0..geom.batch {
            let o = &mut out[n * geom.out_channels * area..(n + 1) * geom.out_channels * area];
            for (co, row) in o.chunks_exact_mut(area).enumerate() {
                row.fill(bdata[co]);
            }
            gemm(
                geom.out_channels,
                patch,
                area,
                1.0,
                wdata,
                (patch, 1),
                &cols[n * patch * area..(n + 1) * patch * area],
                (area, 1),
                1.0,
                o,
                (area, 1),
            );
        }
        let needs = self.needs(x.0) || self.needs(w.0) || self.needs(b.0);
        Ok(self.push(
            Cow::Owned(out),
            vec![geom.batch, geom.out_channels, ho, wo],
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.0,
                geom,
                cols,
            },
            needs,
        ))
    }

    /// Mean over the trailing spatial axes of an NCHW tensor, giving `[N, C]`.
    pub fn global_avg_pool(&mut self, x: Value) -> Result<Value, AutodiffError> {
        let shape = self.shape(x).to_vec();
        let [n, c, h, w] = shape[..] else {
            return Err(AutodiffError::ShapeMismatch {
                op: "global_avg_pool",
                lhs: shape,
                rhs: vec![4],
            });
        };
        let area = h * w;
        let out: Vec<f64> = self
            .data(x)
            .chunks_exact(area)
            .map(|p| p.iter().sum::<f64>() / area as f64)
            .collect();
        let needs = self.needs(x.0);
        Ok(self.push(Cow::Owned(out), vec![n, c], Op::AvgPool { x: x.0, area }, needs))
    }

    pub fn unary(&mut self, x: Value, f: Unary) -> Value {
        let out: Vec<f64> = self
            .data(x)
            .iter()
            .map(|&v| match f {
                Unary::Relu => v.max(0.0),
                Unary::LeakyRelu(slope) => {
                    if v > 0.0 {
                        v
                    } else {
                        slope * v
                    }
                }
                Unary::Sin => v.sin(),
                Unary::Cos => v.cos(),
                Unary::Square => v * v,
                Unary::Sqrt => v.sqrt(),
                Unary::Neg => -v,
                Unary::Scale(c) => c * v,
                Unary::Offset(c) => v + c,
            })
            .collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x.0);
        self.push(Cow::Owned(out), shape, Op::Unary { x: x.0, f }, needs)
    }

    pub fn relu(&mut self, x: Value) -> Value {
        self.unary(x, Unary::Relu)
    }

    pub fn leaky_relu(&mut self, x: Value, slope: f64) -> Value {
        self.unary(x, Unary::LeakyRelu(slope))
    }

    pub fn sin(&mut self, x: Value) -> Value {
        self.unary(x, Unary::Sin)
    }

    pub fn cos(&mut self, x: Value) -> Value {
        self.unary(x, Unary::Cos)
    }

    pub fn square(&mut self, x: Value) -> Value {
        self.unary(x, Unary::Square)
    }

    pub fn scale(&mut self, x: Value, c: f64) -> Value {
        self.unary(x, Unary::Scale(c))
    }

    pub fn offset(&mut self, x: Value, c: f64) -> Value {
        self.unary(x, Unary::Offset(c))
    }

    pub fn binary(&mut self, a: Value, b: Value, f: Binary) -> Result<Value, AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::ShapeMismatch {
                op: "elementwise",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&p, &q)| match f {
                Binary::Add => p + q,
                Binary::Sub => p - q,
                Binary::Mul => p * q,
                Binary::Div => p / q,
            })
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(Cow::Owned(out), shape, Op::Binary { a: a.0, b: b.0, f }, needs))
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value, AutodiffError> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value, AutodiffError> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value, AutodiffError> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn div(&mut self, a: Value, b: Value) -> Result<Value, AutodiffError> {
        self.binary(a, b, Binary::Div)
    }

    /// Multiplies every element of `x` by the single-element node `s`.
    pub fn scale_by(&mut self, x: Value, s: Value) -> Result<Value, AutodiffError> {
        if self.data(s).len() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "scale_by",
                lhs: vec![1],
                rhs: self.shape(s).to_vec(),
            });
        }
        let k = self.item(s);
        let out: Vec<f64> = self.data(x).iter().map(|v| v * k).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x.0) || self.needs(s.0);
        Ok(self.push(Cow::Owned(out), shape, Op::ScaleBy { x: x.0, s: s.0 }, needs))
    }

    pub fn sum(&mut self, x: Value) -> Value {
        let s = self.data(x).iter().sum();
        let needs = self.needs(x.0);
        self.push(Cow::Owned(vec![s]), Vec::new(), Op::Sum { x: x.0 }, needs)
    }

    pub fn mean(&mut self, x: Value) -> Value {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len().max(1) as f64;
        let needs = self.needs(x.0);
        self.push(Cow::Owned(vec![s]), Vec::new(), Op::Mean { x: x.0 }, needs)
    }

    /// Euclidean norm; its subgradient at the zero vector is taken as zero.
    pub fn norm(&mut self, x: Value) -> Value {
        let s = self.data(x).iter().map(|v| v * v).sum::<f64>().sqrt();
        let needs = self.needs(x.0);
        self.push(Cow::Owned(vec![s]), Vec::new(), Op::Norm { x: x.0 }, needs)
    }

    pub fn dot(&mut self, a: Value, b: Value) -> Result<Value, AutodiffError> {
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    /// Sum of same-shaped nodes.
    pub fn add_n(&mut self, xs: &[Value]) -> Result<Value, AutodiffError> {
        let Some(first) = xs.first() else {
            return Err(AutodiffError::EmptyInput("add_n"));
        };
        let shape = self.shape(*first).to_vec();
        let mut out = vec![0.0; numel(&shape)];
        for x in xs {
            if self.shape(*x) != shape.as_slice() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "add_n",
                    lhs: shape,
                    rhs: self.shape(*x).to_vec(),
                });
            }
            add_into(&mut out, self.data(*x));
        }
        let needs = xs.iter().any(|x| self.needs(x.0));
        Ok(self.push(
            Cow::Owned(out),
            shape,
            Op::AddN {
                xs: xs.iter().map(|x| x.0).collect(),
            },
            needs,
        ))
    }

    /// Contiguous window of the flattened node, reshaped to `shape`.
    pub fn slice(&mut self, x: Value, offset: usize, shape: &[usize]) -> Result<Value, AutodiffError> {
        let len = numel(shape);
        let total = self.data(x).len();
        if offset + len > total {
            return Err(AutodiffError::SliceOutOfBounds {
                offset,
                end: offset + len,
                len: total,
            });
        }
        let out = self.data(x)[offset..offset + len].to_vec();
        let needs = self.needs(x.0);
        Ok(self.push(Cow::Owned(out), shape.to_vec(), Op::Slice { x: x.0, offset }, needs))
    }

    pub fn reshape(&mut self, x: Value, shape: &[usize]) -> Result<Value, AutodiffError> {
        if numel(shape) != self.data(x).len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        self.slice(x, 0, shape)
    }

    /// Row `i` of a 2-D node.
    pub fn row(&mut self, x: Value, i: usize) -> Result<Value, AutodiffError> {
        let shape = self.shape(x).to_vec();
        let [rows, cols] = shape[..] else {
            return Err(AutodiffError::ShapeMismatch {
                op: "row",
                lhs: shape,
                rhs: vec![2],
            });
        };
        if i >= rows {
            return Err(AutodiffError::SliceOutOfBounds {
                offset: i,
                end: i + 1,
                len: rows,
            });
        }
        self.slice(x, i * cols, &[cols])
    }

    /// Columns `start..start+len` of a 2-D node.
    pub fn slice_cols(&mut self, x: Value, start: usize, len: usize) -> Result<Value, AutodiffError> {
        let shape = self.shape(x).to_vec();
        let [rows, cols] = shape[..] else {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice_cols",
                lhs: shape,
                rhs: vec![2],
            });
        };
        if start + len > cols {
            return Err(AutodiffError::SliceOutOfBounds {
                offset: start,
                end: start + len,
                len: cols,
            });
        }
        let data = self.data(x);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&data[r * cols + start..r * cols + start + len]);
        }
        let needs = self.needs(x.0);
        Ok(self.push(
            Cow::Owned(out),
            vec![rows, len],
            Op::SliceCols { x: x.0, cols, start },
            needs,
        ))
    }

    /// Flat concatenation into a vector.
    pub fn concat(&mut self, xs: &[Value]) -> Result<Value, AutodiffError> {
        if xs.is_empty() {
            return Err(AutodiffError::EmptyInput("concat"));
        }
        let mut out = Vec::new();
        for x in xs {
            out.extend_from_slice(self.data(*x));
        }
        let n = out.len();
        let needs = xs.iter().any(|x| self.needs(x.0));
        Ok(self.push(
            Cow::Owned(out),
            vec![n],
            Op::Concat {
                xs: xs.iter().map(|x| x.0).collect(),
            },
            needs,
        ))
    }

    /// Maps an angle pair `(u, v)` to `(cos θ, sin θ)` with `θ = atan2(v, u)`.
    ///
    /// The exact zero pair maps to `θ = 0`, i.e. `(1, 0)`, with zero gradient.
    pub fn angle_pair(&mut self, x: Value) -> Result<Value, AutodiffError> {
        if self.data(x).len() != 2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "angle_pair",
                lhs: vec![2],
                rhs: self.shape(x).to_vec(),
            });
        }
        let (u, v) = (self.data(x)[0], self.data(x)[1]);
        let r = u.hypot(v);
        let out = if r == 0.0 { vec![1.0, 0.0] } else { vec![u / r, v / r] };
        let needs = self.needs(x.0);
        Ok(self.push(Cow::Owned(out), vec![2], Op::AnglePair { x: x.0 }, needs))
    }

    /// Applies `p ↦ R(p + τ)` to every row of `points` (`[P, 2]`), where `R`
    /// is the rotation with `(cos, sin)` given by `cs` and `τ` by `tau`.
    pub fn rotate_translate(&mut self, cs: Value, tau: Value, points: Value) -> Result<Value, AutodiffError> {
        let ps = self.shape(points).to_vec();
        if self.data(cs).len() != 2 || self.data(tau).len() != 2 || ps.len() != 2 || ps[1] != 2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "rotate_translate",
                lhs: ps,
                rhs: vec![2],
            });
        }
        let (c, s) = (self.data(cs)[0], self.data(cs)[1]);
        let (tx, ty) = (self.data(tau)[0], self.data(tau)[1]);
        let mut out = Vec::with_capacity(ps[0] * 2);
        for p in self.data(points).chunks_exact(2) {
            let (qx, qy) = (p[0] + tx, p[1] + ty);
            out.push(c * qx - s * qy);
            out.push(s * qx + c * qy);
        }
        let needs = self.needs(cs.0) || self.needs(tau.0) || self.needs(points.0);
        Ok(self.push(
            Cow::Owned(out),
            ps,
            Op::RotateTranslate {
                cs: cs.0,
                tau: tau.0,
                pts: points.0,
            },
            needs,
        ))
    }

    /// Random Fourier features `(cos(2π B p), sin(2π B p))` for each row `p`
    /// of `points` (`[P, 2]`), with `freqs` the row-major `f×2` matrix `B`.
    pub fn fourier_features(&mut self, points: Value, freqs: &'a [f64]) -> Result<Value, AutodiffError> {
        let ps = self.shape(points).to_vec();
        if ps.len() != 2 || ps[1] != 2 || !freqs.len().is_multiple_of(2) {
            return Err(AutodiffError::ShapeMismatch {
                op: "fourier_features",
                lhs: ps,
                rhs: vec![freqs.len() / 2, 2],
            });
        }
        let f = freqs.len() / 2;
        let mut out = vec![0.0; ps[0] * 2 * f];
        for (p, row) in self.data(points).chunks_exact(2).zip(out.chunks_exact_mut(2 * f)) {
            let (cos_half, sin_half) = row.split_at_mut(f);
            for (j, b) in freqs.chunks_exact(2).enumerate() {
                let (s, c) = (2.0 * PI * (b[0] * p[0] + b[1] * p[1])).sin_cos();
                cos_half[j] = c;
                sin_half[j] = s;
            }
        }
        let needs = self.needs(points.0);
        Ok(self.push(
            Cow::Owned(out),
            vec![ps[0], 2 * f],
            Op::Fourier { x: points.0, freqs },
            needs,
        ))
    }

    // ---------------------------------------------------------------------
    // Reverse sweep
    // ---------------------------------------------------------------------

    /// Accumulates `d loss / d node` into every node that depends on a
    /// trainable leaf. Calling it twice without [`Tape::zero_grad`] doubles
    /// the stored gradients.
    pub fn backward(&mut self, loss: Value) -> Result<(), AutodiffError> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(self.nodes[loss.0].shape.clone()));
        }
        let mut sweep: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        sweep[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = sweep[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.propagate(i, &g, &mut sweep);
            }
            match &mut self.grads[i] {
                Some(acc) => add_into(acc, &g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], sweep: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf => {}
            &Op::Linear {
                x,
                w,
                b,
                rows,
                fan_in,
                fan_out,
            } => {
                if let Some(dx) = grad_slot(nodes, sweep, x) {
                    gemm(
                        rows,
                        fan_out,
                        fan_in,
                        1.0,
                        g,
                        (fan_out, 1),
                        &nodes[w].data,
                        (fan_in, 1),
                        1.0,
                        dx,
                        (fan_in, 1),
                    );
                }
                if let Some(dw) = grad_slot(nodes, sweep, w) {
                    gemm(
                        fan_out,
                        rows,
                        fan_in,
                        1.0,
                        g,
                        (1, fan_out),
                        &nodes[x].data,
                        (fan_in, 1),
                        1.0,
                        dw,
                        (fan_in, 1),
                    );
                }
                if let Some(b) = b {
                    if let Some(db) = grad_slot(nodes, sweep, b) {
                        for row in g.chunks_exact(fan_out) {
                            add_into(db, row);
                        }
                    }
                }
            }
            Op::Conv2d { x, w, b, geom, cols } => {
                let (x, w, b, geom) = (*x, *w, *b, *geom);
                let area = geom.out_height() * geom.out_width();
                let patch = geom.patch();
                let per_out = geom.out_channels * area;
                if let Some(db) = grad_slot(nodes, sweep, b) {
                    for gimg in g.chunks_exact(per_out) {
                        for (co, row) in gimg.chunks_exact(area).enumerate() {
                            db[co] += row.iter().sum::<f64>();
                        }
                    }
                }
                if let Some(dw) = grad_slot(nodes, sweep, w) {
                    for n in 0..geom.batch {
                        gemm(
                            geom.out_channels,
                            area,
                            patch,
                            1.0,
                            &g[n * per_out..(n + 1) * per_out],
                            (area, 1),
                            &cols[n * patch * area..(n + 1) * patch * area],
                            (1, area),
                            1.0,
                            dw,
                            (patch, 1),
                        );
                    }
                }
                if let Some(dx) = grad_slot(nodes, sweep, x) {
                    let mut dcols = vec![0.0; patch * area];
                    let plane = geom.in_channels * geom.height * geom.width;
                    for n in 0..geom.batch {
                        gemm(
                            patch,
                            geom.out_channels,
                            area,
                            1.0,
                            &nodes[w].data,
                            (1, patch),
                            &g[n * per_out..(n + 1) * per_out],
                            (area, 1),
                            0.0,
                            &mut dcols,
                            (area, 1),
                        );
                        col2im(&dcols, &mut dx[n * plane..(n + 1) * plane], &geom);
                    }
                }
            }
            &Op::AvgPool { x, area } => {
                if let Some(dx) = grad_slot(nodes, sweep, x) {
                    let inv = 1.0 / area as f64;
                    for (plane, &gp) in dx.chunks_exact_mut(area).zip(g) {
                        for d in plane {
                            *d += gp * inv;
                        }
                    }
                }
            }
            &Op::Transpose { x, rows, cols } => {
                if let Some(dx) = grad_slot(nodes, sweep, x) {
                    for r in 0..rows {
                        for c in 0..cols {
                            dx[r * cols + c] += g[c * rows + r];
                        }
                    }
                }
            }
            &Op::Unary { x, f } => {
                let xin = &nodes[x].data;
                let out = &node.data;
                if let Some(dx) = grad_slot(nodes, sweep, x) {
                    for k in 0..dx.len() {
                        let v = xin[k];
                        let local = match f {
                            Unary::Relu => {
                                if v > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::LeakyRelu(slope) => {
                                if v > 0.0 {
                                    1.0
                                } else {
                                    slope
                                }
                            }
                            Unary::Sin => v.cos(),
                            Unary::Cos => -v.sin(),
                            Unary::Square => 2.0 * v,
                            Unary::Sqrt => 0.5 / out[k],
                            Unary::Neg => -1.0,
                            Unary::Scale(c) => c,
                            Unary::Offset(_) => 1.0,
                        };
                        dx[k] += g[k] * local;
                    }
                }
            }
            &Op::Binary { a, b, f } => {
                let (ad, bd) = (&nodes[a].data, &nodes[b].data);
                if let Some(da) = grad_slot(nodes, sweep, a) {
                    for k in 0..da.len() {
                        da[k] += match f {
                            Binary::Add | Binary::Sub => g[k],
                            Binary::Mul => g[k] * bd[k],
                            Binary::Div => g[k] / bd[k],
                        };
                    }
                }
                if let Some(db) = grad_slot(nodes, sweep, b) {
                    for k in 0..db.len() {
                        db[k] += match f {
                            Binary::Add => g[k],
                            Binary::Sub => -g[k],
                            Binary::Mul => g[k] * ad[k],
                            Binary::Div => -g[k] * ad[k] / (bd[k] * bd[k]),
                        };
                    }
                }
            }
            &Op::ScaleBy { x, s } => {
                let k = nodes[s].data[0];
                if let Some(dx) = grad_slot(nodes, sweep, x) {
                    for (d, gv) in dx.iter_mut().zip(g) {
                        *d += gv * k;
                    }
                }
                if let Some(ds) = grad_slot(nodes, sweep, s) {
                    ds[0] += g.iter().zip(nodes[x].data.iter()).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            &Op::Sum { x } => {
                if let Some(dx) = grad_slot(nodes, sweep, x) {
                    for d in dx.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            &Op::Mean { x } => {
                if let Some(dx) = grad_slot(nodes, sweep, x) {
                    let scale = g[0] / dx.len().max(1) as f64;
                    for d in dx.iter_mut() {
                        *d += scale;
                    }
                }
            }
            &Op::Norm { x } => {
                let n = node.data[0];
                if n > 0.0 {
                    if let Some(dx) = grad_slot(nodes, sweep, x) {
                        for (d, v) in dx.iter_mut().zip(nodes[x].data.iter()) {
                            *d += g[0] * v / n;
                        }
                    }
                }
            }
            Op::AddN { xs } => {
                for &x in xs {
                    if let Some(dx) = grad_slot(nodes, sweep, x) {
                        add_into(dx, g);
                    }
                }
            }
            &Op::Slice { x, offset } => {
                if let Some(dx) = grad_slot(nodes, sweep, x) {
                    add_into(&mut dx[offset..offset + g.len()], g);
                }
            }
            &Op::SliceCols { x, cols, start } => {
                if let Some(dx) = grad_slot(nodes, sweep, x) {
                    let len = node.shape[1];
                    for (r, grow) in g.chunks_exact(len).enumerate() {
                        add_into(&mut dx[r * cols + start..r * cols + start + len], grow);
                    }
                }
            }
            Op::Concat { xs } => {
                let mut at = 0;
                for &x in xs {
                    let len = nodes[x].data.len();
                    if let Some(dx) = grad_slot(nodes, sweep, x) {
                        add_into(dx, &g[at..at + len]);
                    }
                    at += len;
                }
            }
            &Op::AnglePair { x } => {
                let (u, v) = (nodes[x].data[0], nodes[x].data[1]);
                let r2 = u * u + v * v;
                if r2 > 0.0 {
                    if let Some(dx) = grad_slot(nodes, sweep, x) {
                        let r3 = r2 * r2.sqrt();
                        // c = u/r, s = v/r
                        let (dc, ds) = (g[0], g[1]);
                        dx[0] += dc * v * v / r3 - ds * u * v / r3;
                        dx[1] += -dc * u * v / r3 + ds * u * u / r3;
                    }
                }
            }
            &Op::RotateTranslate { cs, tau, pts } => {
                let (c, s) = (nodes[cs].data[0], nodes[cs].data[1]);
                let (tx, ty) = (nodes[tau].data[0], nodes[tau].data[1]);
                let points = &nodes[pts].data;
                // d/dq of R q is Rᵀ applied to the upstream gradient.
                let back = |gx: f64, gy: f64| (c * gx + s * gy, -s * gx + c * gy);
                let (mut dc, mut ds, mut dtx, mut dty) = (0.0, 0.0, 0.0, 0.0);
                for (p, gp) in points.chunks_exact(2).zip(g.chunks_exact(2)) {
                    let (qx, qy) = (p[0] + tx, p[1] + ty);
                    dc += qx * gp[0] + qy * gp[1];
                    ds += -qy * gp[0] + qx * gp[1];
                    let (bx, by) = back(gp[0], gp[1]);
                    dtx += bx;
                    dty += by;
                }
                if let Some(d) = grad_slot(nodes, sweep, cs) {
                    d[0] += dc;
                    d[1] += ds;
                }
                if let Some(d) = grad_slot(nodes, sweep, tau) {
                    d[0] += dtx;
                    d[1] += dty;
                }
                if let Some(d) = grad_slot(nodes, sweep, pts) {
                    for (dp, gp) in d.chunks_exact_mut(2).zip(g.chunks_exact(2)) {
                        let (bx, by) = back(gp[0], gp[1]);
                        dp[0] += bx;
                        dp[1] += by;
                    }
                }
            }
            &Op::Fourier { x, freqs } => {
                if let Some(dx) = grad_slot(nodes, sweep, x) {
                    let f = freqs.len() / 2;
                    for ((dp, grow), frow) in dx
                        .chunks_exact_mut(2)
                        .zip(g.chunks_exact(2 * f))
                        .zip(node.data.chunks_exact(2 * f))
                    {
                        let (gc, gs) = grow.split_at(f);
                        let (cv, sv) = frow.split_at(f);
                        let (mut ax, mut ay) = (0.0, 0.0);
                        for j in 0..f {
                            // d cos(a)/da = -sin(a), d sin(a)/da = cos(a)
                            let da = -sv[j] * gc[j] + cv[j] * gs[j];
                            ax += da * freqs[2 * j];
                            ay += da * freqs[2 * j + 1];
                        }
                        dp[0] += 2.0 * PI * ax;
                        dp[1] += 2.0 * PI * ay;
                    }
                }
            }
        }
    }
}

fn grad_slot<'s>(nodes: &[Node<'_>], sweep: &'s mut [Option<Vec<f64>>], id: usize) -> Option<&'s mut Vec<f64>> {
    if !nodes[id].needs_grad {
        return None;
    }
    let len = nodes[id].data.len();
    Some(sweep[id].get_or_insert_with(|| vec![0.0; len]))
}

fn im2col(img: &[f64], col: &mut [f64], g: &ConvGeometry) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let area = ho * wo;
    let k = g.kernel;
    for ci in 0..g.in_channels {
        let plane = &img[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * area..((ci * k + ky) * k + kx + 1) * area];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        row[oy * wo + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < g.height && (ix as usize) < g.width {
                            plane[iy as usize * g.width + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], img: &mut [f64], g: &ConvGeometry) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let area = ho * wo;
    let k = g.kernel;
    for ci in 0..g.in_channels {
        let plane = &mut img[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * area..((ci * k + ky) * k + kx + 1) * area];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy as usize >= g.height {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && (ix as usize) < g.width {
                            plane[iy as usize * g.width + ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}
