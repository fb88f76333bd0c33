//! Dense row-major `f64` tensors and the primitive kernels the models are
//! built from.
//!
//! Every kernel sums in a fixed index order, so results are bitwise
//! reproducible for identical inputs.

use std::fmt;
use std::ops::Range;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("{op}: expected rank {expected}, found rank {found}")]
    RankMismatch { op: &'static str, expected: usize, found: usize },
    #[error("{op}: extent mismatch on axis `{axis}`: expected {expected}, found {found}")]
    ShapeMismatch { op: &'static str, axis: &'static str, expected: usize, found: usize },
    #[error("{op}: shapes {lhs:?} and {rhs:?} differ")]
    ShapesDiffer { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("conv2d: kernel extent {extent} on axis `{axis}` is even; same padding needs an odd extent")]
    EvenKernel { axis: &'static str, extent: usize },
    #[error("avg_pool2d: pooling factor must be at least 1")]
    ZeroPoolFactor,
    #[error("invalid shape {shape:?}: rank must be >= 1 and every extent >= 1")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} holds {expected} values, got {found}")]
    LengthMismatch { shape: Vec<usize>, expected: usize, found: usize },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense N-dimensional array of `f64` in row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.iter().any(|&e| e == 0) {
        return Err(TensorError::InvalidShape { shape: shape.to_vec() });
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let expected = check_shape(shape)?;
        if values.len() != expected {
            return Err(TensorError::LengthMismatch { shape: shape.to_vec(), expected, found: values.len() });
        }
        Ok(Self { shape: shape.to_vec(), values })
    }

    /// Panics on an invalid shape; use [`Tensor::new`] for fallible construction.
    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = check_shape(shape).expect("valid tensor shape");
        Self { shape: shape.to_vec(), values: vec![value; n] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], values: vec![value] }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        let n = values.len();
        Self::new(&[n], values).expect("non-empty vector")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Same values, new shape. Fails if the element counts differ.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.values)
    }

    pub fn flatten(self) -> Self {
        let n = self.values.len();
        Self { shape: vec![n], values: self.values }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Sum of all elements, accumulated in index order.
    pub fn sum(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, &v| acc + v)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        same_shape("max_abs_diff", self, other)?;
        Ok(self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Value at a multi-index. Panics when out of bounds.
    pub fn at(&self, index: &[usize]) -> f64 {
        self.values[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.values[off] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index.iter().zip(&self.shape).fold(0, |off, (&i, &e)| {
            assert!(i < e, "index {i} out of bounds for extent {e}");
            off * e + i
        })
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor").field("shape", &self.shape).field("values", &self.values).finish()
    }
}

fn expect_rank(op: &'static str, shape: &[usize], rank: usize) -> Result<()> {
    if shape.len() != rank {
        return Err(TensorError::RankMismatch { op, expected: rank, found: shape.len() });
    }
    Ok(())
}

fn expect_extent(op: &'static str, axis: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(TensorError::ShapeMismatch { op, axis, expected, found });
    }
    Ok(())
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    same_shape_dims(op, &a.shape, &b.shape)
}

pub(crate) fn same_shape_dims(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(TensorError::ShapesDiffer { op, lhs: a.to_vec(), rhs: b.to_vec() });
    }
    Ok(())
}

/// Validates a same-padded convolution and returns the output shape `[O, H, W]`.
pub fn conv2d_shape(input: &[usize], kernels: &[usize], bias: Option<&[usize]>) -> Result<Vec<usize>> {
    expect_rank("conv2d", input, 3)?;
    expect_rank("conv2d", kernels, 4)?;
    expect_extent("conv2d", "in_channels", kernels[1], input[0])?;
    if kernels[2] % 2 == 0 {
        return Err(TensorError::EvenKernel { axis: "kernel_height", extent: kernels[2] });
    }
    if kernels[3] % 2 == 0 {
        return Err(TensorError::EvenKernel { axis: "kernel_width", extent: kernels[3] });
    }
    if let Some(bias) = bias {
        expect_rank("conv2d", bias, 1)?;
        expect_extent("conv2d", "out_channels", kernels[0], bias[0])?;
    }
    Ok(vec![kernels[0], input[1], input[2]])
}

/// Geometry of a same-padded convolution, shared by the forward and
/// backward kernels so all three walk taps in the same order.
#[derive(Clone, Copy)]
pub(crate) struct ConvGeom {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernels: &[usize]) -> Self {
        Self { out_ch: kernels[0], in_ch: kernels[1], kh: kernels[2], kw: kernels[3], h: input[1], w: input[2] }
    }

    /// Calls `f(tap, out_range, in_range)` for every kernel tap `(dy, dx)` and
    /// output row `y`, where the two ranges index matching contiguous runs
    /// of the output plane and the input plane. Cells whose input would fall
    /// in the zero padding are skipped.
    #[inline]
    pub fn for_each_row(&self, mut f: impl FnMut(usize, Range<usize>, Range<usize>)) {
        let (ph, pw) = (self.kh as isize / 2, self.kw as isize / 2);
        let (h, w) = (self.h as isize, self.w as isize);
        for dy in 0..self.kh {
            let sy = dy as isize - ph;
            let (ylo, yhi) = ((-sy).max(0), (h - sy).min(h));
            for dx in 0..self.kw {
                let sx = dx as isize - pw;
                let (xlo, xhi) = ((-sx).max(0), (w - sx).min(w));
                if xlo >= xhi {
                    continue;
                }
                let tap = dy * self.kw + dx;
                for y in ylo..yhi {
                    let out = (y * w + xlo) as usize..(y * w + xhi) as usize;
                    let src = ((y + sy) * w + xlo + sx) as usize..((y + sy) * w + xhi + sx) as usize;
                    f(tap, out, src);
                }
            }
        }
    }
}

/// Same-padded 2-D convolution (cross-correlation, as in every deep learning
/// framework): `out[o][y][x] = bias[o] + Σ k[o][c][dy][dx] · in[c][y+dy−Kh/2][x+dx−Kw/2]`
/// with zeros outside the input.
pub fn conv2d(input: &Tensor, kernels: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let out_shape = conv2d_shape(&input.shape, &kernels.shape, bias.map(|b| b.shape.as_slice()))?;
    let g = ConvGeom::new(&input.shape, &kernels.shape);
    let plane = g.h * g.w;
    let mut out = vec![0.0; g.out_ch * plane];
    for o in 0..g.out_ch {
        let dst = &mut out[o * plane..(o + 1) * plane];
        for c in 0..g.in_ch {
            let src = &input.values[c * plane..(c + 1) * plane];
            let kbase = (o * g.in_ch + c) * g.kh * g.kw;
            g.for_each_row(|tap, dst_row, src_row| {
                let k = kernels.values[kbase + tap];
                for (d, s) in dst[dst_row].iter_mut().zip(&src[src_row]) {
                    *d += k * s;
                }
            });
        }
        if let Some(bias) = bias {
            let b = bias.values[o];
            dst.iter_mut().for_each(|v| *v = b + *v);
        }
    }
    Tensor::new(&out_shape, out)
}

pub fn affine_shape(input: &[usize], weight: &[usize], bias: &[usize]) -> Result<Vec<usize>> {
    expect_rank("affine", input, 1)?;
    expect_rank("affine", weight, 2)?;
    expect_rank("affine", bias, 1)?;
    expect_extent("affine", "in_features", weight[1], input[0])?;
    expect_extent("affine", "out_features", weight[0], bias[0])?;
    Ok(vec![weight[0]])
}

/// `weight · input + bias`.
pub fn affine(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let shape = affine_shape(&input.shape, &weight.shape, &bias.shape)?;
    let n = input.len();
    let out = weight.values.chunks_exact(n).zip(&bias.values).map(|(row, b)| b + dot(row, &input.values)).collect();
    Tensor::new(&shape, out)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn map_sigmoid(t: &Tensor) -> Tensor {
    t.map(sigmoid)
}

pub fn map_tanh(t: &Tensor) -> Tensor {
    t.map(f64::tanh)
}

pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("hadamard", a, b, |x, y| x * y)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("add", a, b, |x, y| x + y)
}

fn zip_with(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    same_shape(op, a, b)?;
    Ok(Tensor { shape: a.shape.clone(), values: a.values.iter().zip(&b.values).map(|(&x, &y)| f(x, y)).collect() })
}

pub fn global_avg_pool_shape(input: &[usize]) -> Result<Vec<usize>> {
    expect_rank("global_avg_pool", input, 3)?;
    Ok(vec![input[0]])
}

/// Per-channel mean over the spatial plane: `[C,H,W] -> [C]`.
pub fn global_avg_pool(t: &Tensor) -> Result<Tensor> {
    let shape = global_avg_pool_shape(&t.shape)?;
    let plane = t.shape[1] * t.shape[2];
    let out = t.values.chunks_exact(plane).map(|ch| ch.iter().fold(0.0, |a, &v| a + v) / plane as f64).collect();
    Tensor::new(&shape, out)
}

pub fn avg_pool2d_shape(input: &[usize], factor: usize) -> Result<Vec<usize>> {
    if factor == 0 {
        return Err(TensorError::ZeroPoolFactor);
    }
    expect_rank("avg_pool2d", input, 3)?;
    Ok(vec![input[0], input[1].div_ceil(factor), input[2].div_ceil(factor)])
}

/// Non-overlapping `factor × factor` window means. Windows clipped by the
/// border average only the cells they cover.
pub fn avg_pool2d(t: &Tensor, factor: usize) -> Result<Tensor> {
    let shape = avg_pool2d_shape(&t.shape, factor)?;
    if factor == 1 {
        return Ok(t.clone());
    }
    let (h, w) = (t.shape[1], t.shape[2]);
    let (oh, ow) = (shape[1], shape[2]);
    let mut out = Vec::with_capacity(shape.iter().product());
    for ch in t.values.chunks_exact(h * w) {
        for oy in 0..oh {
            let ys = oy * factor..((oy + 1) * factor).min(h);
            for ox in 0..ow {
                let xs = ox * factor..((ox + 1) * factor).min(w);
                let mut sum = 0.0;
                for y in ys.clone() {
                    for x in xs.clone() {
                        sum += ch[y * w + x];
                    }
                }
                out.push(sum / (ys.len() * xs.len()) as f64);
            }
        }
    }
    Tensor::new(&shape, out)
}

/// Vector-Jacobian products of [`conv2d`] with respect to its input and its
/// kernels, given the upstream gradient `grad_out` of shape `[O, H, W]`.
pub(crate) fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
    need_input: bool,
    need_kernels: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let g = ConvGeom::new(&input.shape, &kernels.shape);
    let plane = g.h * g.w;
    let ktaps = g.kh * g.kw;
    let mut gin = need_input.then(|| vec![0.0; input.len()]);
    let mut gk = need_kernels.then(|| vec![0.0; kernels.len()]);
    for o in 0..g.out_ch {
        let up = &grad_out.values[o * plane..(o + 1) * plane];
        for c in 0..g.in_ch {
            let kbase = (o * g.in_ch + c) * ktaps;
            let src = &input.values[c * plane..(c + 1) * plane];
            if let Some(gin) = gin.as_mut() {
                let dst = &mut gin[c * plane..(c + 1) * plane];
                g.for_each_row(|tap, out_row, src_row| {
                    let k = kernels.values[kbase + tap];
                    for (d, u) in dst[src_row].iter_mut().zip(&up[out_row]) {
                        *d += k * u;
                    }
                });
            }
            if let Some(gk) = gk.as_mut() {
                g.for_each_row(|tap, out_row, src_row| {
                    gk[kbase + tap] += dot(&up[out_row], &src[src_row]);
                });
            }
        }
    }
    (
        gin.map(|v| Tensor { shape: input.shape.clone(), values: v }),
        gk.map(|v| Tensor { shape: kernels.shape.clone(), values: v }),
    )
}

/// Spreads each pooled gradient uniformly over the cells of its window.
pub(crate) fn avg_pool2d_backward(input_shape: &[usize], factor: usize, grad_out: &Tensor) -> Tensor {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (oh, ow) = (grad_out.shape[1], grad_out.shape[2]);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            let ys = oy * factor..((oy + 1) * factor).min(h);
            for ox in 0..ow {
                let xs = ox * factor..((ox + 1) * factor).min(w);
                let share = grad_out.values[(ch * oh + oy) * ow + ox] / (ys.len() * xs.len()) as f64;
                for y in ys.clone() {
                    for x in xs.clone() {
                        out[(ch * h + y) * w + x] += share;
                    }
                }
            }
        }
    }
    Tensor { shape: input_shape.to_vec(), values: out }
}
