//! Layer kernels with hand-written forward and backward passes.
//!
//! Every layer consumes and produces batch-major tensors: `[N, C, H, W]` for
//! image-shaped activations and `[N, D]` for vectors. `forward` caches what
//! `backward` needs; `infer` is the cache-free evaluation path.

use ndarray::{Array1, Array2, ArrayD, Axis, Ix2, Ix4, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::{col2im, im2col, Geometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

impl Param {
    pub fn new(value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

fn uniform_param(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Param {
    let value = ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-bound..=bound));
    Param::new(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

impl Activation {
    fn apply(&self, v: f64) -> f64 {
        match *self {
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu(a) => {
                if v > 0.0 {
                    v
                } else {
                    a * v
                }
            }
            Activation::Sigmoid => sigmoid(v),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(&self, x: f64, y: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => {
                if x > 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn to4(x: &ArrayD<f64>) -> ndarray::ArrayView4<'_, f64> {
    x.view().into_dimensionality::<Ix4>().expect("rank-4 activation")
}

fn to2(x: &ArrayD<f64>) -> ndarray::ArrayView2<'_, f64> {
    x.view().into_dimensionality::<Ix2>().expect("rank-2 activation")
}

/// `[C, N*P]` matrix to `[N, C, H, W]` tensor.
fn channel_major_to_batch(m: Array2<f64>, n: usize, h: usize, w: usize) -> ArrayD<f64> {
    let c = m.nrows();
    let t = m
        .into_shape_with_order((c, n, h * w))
        .expect("channel-major layout")
        .permuted_axes([1, 0, 2]);
    t.as_standard_layout()
        .into_owned()
        .into_shape_with_order(IxDyn(&[n, c, h, w]))
        .expect("batch layout")
}

/// `[N, C, H, W]` tensor to `[C, N*H*W]` matrix.
fn batch_to_channel_major(x: ndarray::ArrayView4<f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let t = x
        .into_shape_with_order((n, c, h * w))
        .expect("contiguous activation")
        .permuted_axes([1, 0, 2]);
    t.as_standard_layout()
        .into_owned()
        .into_shape_with_order((c, n * h * w))
        .expect("channel-major layout")
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    geometry: Geometry,
    /// `[out, in * k * k]`
    pub weight: Param,
    pub bias: Param,
    cache: Option<(Array2<f64>, (usize, usize, usize, usize))>,
}

impl Conv2d {
    pub(crate) fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad_lo: usize,
        pad_hi: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Conv2d {
            in_channels,
            out_channels,
            geometry: Geometry { kernel, stride, pad_lo, pad_hi },
            weight: uniform_param(&[out_channels, fan_in], bound, rng),
            bias: uniform_param(&[out_channels], bound, rng),
            cache: None,
        }
    }

    fn compute(&self, x: &ArrayD<f64>) -> (ArrayD<f64>, Array2<f64>) {
        let x4 = to4(x);
        let (n, _, h, w) = x4.dim();
        let oh = self.geometry.out_len(h).expect("validated");
        let ow = self.geometry.out_len(w).expect("validated");
        let cols = im2col(x4, &self.geometry);
        let mut out = to2(&self.weight.value).dot(&cols);
        let b = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        for (mut row, &bv) in out.outer_iter_mut().zip(b.iter()) {
            row += bv;
        }
        (channel_major_to_batch(out, n, oh, ow), cols)
    }

    /// Accumulates parameter gradients; returns the input gradient only
    /// when `input_grad` is set.
    fn backward_inner(&mut self, grad: &ArrayD<f64>, input_grad: bool) -> Option<ArrayD<f64>> {
        let (cols, in_shape) = self.cache.take().expect("conv backward without forward");
        let g = batch_to_channel_major(to4(grad));
        {
            let mut gw = self.weight.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
            ndarray::linalg::general_mat_mul(1.0, &g, &cols.t(), 1.0, &mut gw);
        }
        let gb = g.sum_axis(Axis(1));
        self.bias.grad += &gb.into_dyn();
        input_grad.then(|| {
            let dcols = to2(&self.weight.value).t().dot(&g);
            col2im(dcols.view(), in_shape, &self.geometry).into_dyn()
        })
    }

    fn backward(&mut self, grad: &ArrayD<f64>) -> ArrayD<f64> {
        self.backward_inner(grad, true).expect("requested")
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub in_channels: usize,
    pub out_channels: usize,
    geometry: Geometry,
    output_padding: usize,
    /// `[in, out * k * k]`
    pub weight: Param,
    pub bias: Param,
    cache: Option<Array2<f64>>,
    in_shape: (usize, usize, usize, usize),
}

impl ConvTranspose2d {
    pub(crate) fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        // Same fan-in convention as the usual transposed-conv initializer:
        // weight dim 1 times the kernel area.
        let fan_in = out_channels * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        ConvTranspose2d {
            in_channels,
            out_channels,
            geometry: Geometry { kernel, stride, pad_lo: padding, pad_hi: padding },
            output_padding,
            weight: uniform_param(&[in_channels, out_channels * kernel * kernel], bound, rng),
            bias: uniform_param(&[out_channels], bound, rng),
            cache: None,
            in_shape: (0, 0, 0, 0),
        }
    }

    pub(crate) fn out_len(
        len: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Option<usize> {
        ((len.checked_sub(1)? * stride) + kernel + output_padding).checked_sub(2 * padding)
    }

    fn compute(&self, x: &ArrayD<f64>) -> (ArrayD<f64>, Array2<f64>) {
        let x4 = to4(x);
        let (n, _, h, w) = x4.dim();
        let g = &self.geometry;
        let oh = Self::out_len(h, g.kernel, g.stride, g.pad_lo, self.output_padding).unwrap();
        let ow = Self::out_len(w, g.kernel, g.stride, g.pad_lo, self.output_padding).unwrap();
        let xm = batch_to_channel_major(x4);
        let cols = to2(&self.weight.value).t().dot(&xm);
        let mut out = col2im(cols.view(), (n, self.out_channels, oh, ow), g);
        let b = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        for mut sample in out.outer_iter_mut() {
            for (mut ch, &bv) in sample.outer_iter_mut().zip(b.iter()) {
                ch += bv;
            }
        }
        (out.into_dyn(), xm)
    }

    fn backward(&mut self, grad: &ArrayD<f64>) -> ArrayD<f64> {
        let xm = self.cache.take().expect("deconv backward without forward");
        let g4 = to4(grad);
        let gcols = im2col(g4, &self.geometry);
        {
            let mut gw = self.weight.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
            ndarray::linalg::general_mat_mul(1.0, &xm, &gcols.t(), 1.0, &mut gw);
        }
        let gb = g4.sum_axis(Axis(0)).sum_axis(Axis(1)).sum_axis(Axis(1));
        self.bias.grad += &gb.into_dyn();
        let dx = to2(&self.weight.value).dot(&gcols);
        let (n, _, h, w) = self.in_shape;
        channel_major_to_batch(dx, n, h, w)
    }
}

#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    pub(crate) fn new(kernel: usize, stride: usize) -> Self {
        MaxPool2d { kernel, stride, cache: None }
    }

    fn compute(&self, x: &ArrayD<f64>) -> (ArrayD<f64>, Vec<usize>) {
        let x4 = to4(x);
        let (n, c, h, w) = x4.dim();
        let oh = (h - self.kernel) / self.stride + 1;
        let ow = (w - self.kernel) / self.stride + 1;
        let xs = x4.as_standard_layout();
        let src = xs.as_slice().unwrap();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut arg = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = base;
                    for ky in 0..self.kernel {
                        let row = base + (oy * self.stride + ky) * w + ox * self.stride;
                        for kx in 0..self.kernel {
                            let v = src[row + kx];
                            if v > best {
                                best = v;
                                best_i = row + kx;
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_i);
                }
            }
        }
        (ArrayD::from_shape_vec(IxDyn(&[n, c, oh, ow]), out).unwrap(), arg)
    }

    fn backward(&mut self, grad: &ArrayD<f64>) -> ArrayD<f64> {
        let (arg, shape) = self.cache.take().expect("pool backward without forward");
        let mut dx = vec![0.0; shape.iter().product()];
        let g = grad.as_standard_layout();
        for (&i, &gv) in arg.iter().zip(g.iter()) {
            dx[i] += gv;
        }
        ArrayD::from_shape_vec(IxDyn(&shape), dx).unwrap()
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `[out, in]`
    pub weight: Param,
    pub bias: Param,
    cache: Option<Array2<f64>>,
}

impl Dense {
    pub(crate) fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Dense {
            in_dim,
            out_dim,
            weight: uniform_param(&[out_dim, in_dim], bound, rng),
            bias: uniform_param(&[out_dim], bound, rng),
            cache: None,
        }
    }

    fn compute(&self, x: &ArrayD<f64>) -> ArrayD<f64> {
        let x2 = to2(x);
        let mut y = x2.dot(&to2(&self.weight.value).t());
        let b = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        y += &b;
        y.into_dyn()
    }

    fn backward(&mut self, grad: &ArrayD<f64>) -> ArrayD<f64> {
        let x = self.cache.take().expect("dense backward without forward");
        let g = to2(grad);
        {
            let mut gw = self.weight.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
            ndarray::linalg::general_mat_mul(1.0, &g.t(), &x, 1.0, &mut gw);
        }
        self.bias.grad += &g.sum_axis(Axis(0)).into_dyn();
        g.dot(&to2(&self.weight.value)).into_dyn()
    }
}

#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    mask: Option<ArrayD<f64>>,
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    momentum: f64,
    eps: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    mode: Mode,
    shape: Vec<usize>,
}

impl BatchNorm {
    pub(crate) fn new(channels: usize) -> Self {
        BatchNorm {
            channels,
            gamma: Param::new(ArrayD::ones(IxDyn(&[channels]))),
            beta: Param::new(ArrayD::zeros(IxDyn(&[channels]))),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    /// Reorders to `[C, N*S]` so statistics run along rows.
    fn to_rows(&self, x: &ArrayD<f64>) -> Array2<f64> {
        let n = x.shape()[0];
        let c = self.channels;
        let s = x.len() / (n * c);
        let v = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, c, s))
            .unwrap()
            .permuted_axes([1, 0, 2]);
        v.as_standard_layout().into_owned().into_shape_with_order((c, n * s)).unwrap()
    }

    fn from_rows(&self, m: Array2<f64>, shape: &[usize]) -> ArrayD<f64> {
        let n = shape[0];
        let c = self.channels;
        let s = m.ncols() / n;
        let v = m.into_shape_with_order((c, n, s)).unwrap().permuted_axes([1, 0, 2]);
        v.as_standard_layout().into_owned().into_shape_with_order(IxDyn(shape)).unwrap()
    }

    fn gamma_beta(&self) -> (Vec<f64>, Vec<f64>) {
        (self.gamma.value.iter().copied().collect(), self.beta.value.iter().copied().collect())
    }

    fn compute(&mut self, x: &ArrayD<f64>, mode: Mode, update_stats: bool) -> (ArrayD<f64>, BnCache) {
        let shape = x.shape().to_vec();
        let rows = self.to_rows(x);
        let m = rows.ncols() as f64;
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = rows.mean_axis(Axis(1)).unwrap();
                let var = rows.var_axis(Axis(1), 0.0);
                if update_stats {
                    let unbiased = if m > 1.0 { &var * (m / (m - 1.0)) } else { var.clone() };
                    self.running_mean = &self.running_mean * (1.0 - self.momentum) + &mean * self.momentum;
                    self.running_var = &self.running_var * (1.0 - self.momentum) + unbiased * self.momentum;
                }
                (mean, var)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let (gamma, beta) = self.gamma_beta();
        let mut xhat = rows;
        let mut y = Array2::zeros(xhat.raw_dim());
        for (ch, (mut xr, mut yr)) in xhat.outer_iter_mut().zip(y.outer_iter_mut()).enumerate() {
            for (xv, yv) in xr.iter_mut().zip(yr.iter_mut()) {
                *xv = (*xv - mean[ch]) * inv_std[ch];
                *yv = gamma[ch] * *xv + beta[ch];
            }
        }
        let out = self.from_rows(y, &shape);
        (out, BnCache { xhat, inv_std, mode, shape })
    }

    fn backward(&mut self, grad: &ArrayD<f64>) -> ArrayD<f64> {
        let cache = self.cache.take().expect("batchnorm backward without forward");
        let g = self.to_rows(grad);
        let (gamma, _) = self.gamma_beta();
        let m = g.ncols() as f64;
        let mut dx = Array2::zeros(g.raw_dim());
        for ch in 0..self.channels {
            let gr = g.row(ch);
            let xr = cache.xhat.row(ch);
            let sum_g: f64 = gr.sum();
            let sum_gx: f64 = gr.iter().zip(xr.iter()).map(|(a, b)| a * b).sum();
            self.gamma.grad[[ch]] += sum_gx;
            self.beta.grad[[ch]] += sum_g;
            let k = gamma[ch] * cache.inv_std[ch];
            let mut dr = dx.row_mut(ch);
            match cache.mode {
                Mode::Train => {
                    for ((d, &gv), &xv) in dr.iter_mut().zip(gr.iter()).zip(xr.iter()) {
                        *d = k * (gv - sum_g / m - xv * sum_gx / m);
                    }
                }
                Mode::Eval => {
                    for (d, &gv) in dr.iter_mut().zip(gr.iter()) {
                        *d = k * gv;
                    }
                }
            }
        }
        self.from_rows(dx, &cache.shape)
    }
}

/// One executable layer.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d(Conv2d),
    ConvTranspose2d(ConvTranspose2d),
    MaxPool2d(MaxPool2d),
    Activation { act: Activation, cache: Option<(ArrayD<f64>, ArrayD<f64>)> },
    Flatten { in_shape: Vec<usize> },
    Unflatten { shape: Vec<usize>, in_dim: usize },
    Dense(Dense),
    Dropout(Dropout),
    BatchNorm(BatchNorm),
}

impl Layer {
    pub(crate) fn activation(act: Activation) -> Self {
        Layer::Activation { act, cache: None }
    }

    pub(crate) fn dropout(rate: f64) -> Self {
        Layer::Dropout(Dropout { rate, mask: None })
    }

    pub fn forward(&mut self, x: ArrayD<f64>, mode: Mode, rng: &mut ChaCha8Rng) -> ArrayD<f64> {
        match self {
            Layer::Conv2d(l) => {
                let in_shape = to4(&x).dim();
                let (y, cols) = l.compute(&x);
                l.cache = Some((cols, in_shape));
                y
            }
            Layer::ConvTranspose2d(l) => {
                l.in_shape = to4(&x).dim();
                let (y, xm) = l.compute(&x);
                l.cache = Some(xm);
                y
            }
            Layer::MaxPool2d(l) => {
                let (y, arg) = l.compute(&x);
                l.cache = Some((arg, x.shape().to_vec()));
                y
            }
            Layer::Activation { act, cache } => {
                let y = x.mapv(|v| act.apply(v));
                *cache = Some((x, y.clone()));
                y
            }
            Layer::Flatten { .. } | Layer::Unflatten { .. } => self.infer(&x),
            Layer::Dense(l) => {
                let y = l.compute(&x);
                l.cache = Some(to2(&x).to_owned());
                y
            }
            Layer::Dropout(d) => match mode {
                Mode::Train if d.rate > 0.0 => {
                    let keep = 1.0 - d.rate;
                    let mask = ArrayD::from_shape_fn(x.raw_dim(), |_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    let y = &x * &mask;
                    d.mask = Some(mask);
                    y
                }
                _ => {
                    d.mask = None;
                    x
                }
            },
            Layer::BatchNorm(bn) => {
                let (y, cache) = bn.compute(&x, mode, true);
                bn.cache = Some(cache);
                y
            }
        }
    }

    pub fn infer(&self, x: &ArrayD<f64>) -> ArrayD<f64> {
        match self {
            Layer::Conv2d(l) => l.compute(x).0,
            Layer::ConvTranspose2d(l) => l.compute(x).0,
            Layer::MaxPool2d(l) => l.compute(x).0,
            Layer::Activation { act, .. } => x.mapv(|v| act.apply(v)),
            Layer::Flatten { .. } => {
                let n = x.shape()[0];
                let d = if n == 0 { x.shape()[1..].iter().product() } else { x.len() / n };
                x.as_standard_layout().into_owned().into_shape_with_order(IxDyn(&[n, d])).unwrap()
            }
            Layer::Unflatten { shape, .. } => {
                let mut full = vec![x.shape()[0]];
                full.extend_from_slice(shape);
                x.as_standard_layout().into_owned().into_shape_with_order(IxDyn(&full)).unwrap()
            }
            Layer::Dense(l) => l.compute(x),
            Layer::Dropout(_) => x.clone(),
            Layer::BatchNorm(bn) => {
                let mut frozen = bn.clone();
                frozen.compute(x, Mode::Eval, false).0
            }
        }
    }

    pub fn backward(&mut self, grad: ArrayD<f64>) -> ArrayD<f64> {
        match self {
            Layer::Conv2d(l) => l.backward(&grad),
            Layer::ConvTranspose2d(l) => l.backward(&grad),
            Layer::MaxPool2d(l) => l.backward(&grad),
            Layer::Activation { act, cache } => {
                let (x, y) = cache.take().expect("activation backward without forward");
                let mut g = grad;
                ndarray::Zip::from(&mut g).and(&x).and(&y).for_each(|g, &xv, &yv| {
                    *g *= act.derivative(xv, yv);
                });
                g
            }
            Layer::Flatten { in_shape } => {
                let mut full = vec![grad.shape()[0]];
                full.extend_from_slice(in_shape);
                grad.as_standard_layout().into_owned().into_shape_with_order(IxDyn(&full)).unwrap()
            }
            Layer::Unflatten { in_dim, .. } => {
                let n = grad.shape()[0];
                grad.as_standard_layout().into_owned().into_shape_with_order(IxDyn(&[n, *in_dim])).unwrap()
            }
            Layer::Dense(l) => l.backward(&grad),
            Layer::Dropout(d) => match d.mask.take() {
                Some(mask) => grad * mask,
                None => grad,
            },
            Layer::BatchNorm(bn) => bn.backward(&grad),
        }
    }

    /// Like [`backward`](Self::backward) but may skip the input gradient,
    /// returning an empty array instead. Used for the first layer.
    pub fn backward_params(&mut self, grad: ArrayD<f64>) -> ArrayD<f64> {
        match self {
            Layer::Conv2d(l) => {
                l.backward_inner(&grad, false);
                ArrayD::zeros(IxDyn(&[0]))
            }
            _ => self.backward(grad),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv2d(l) => vec![&l.weight, &l.bias],
            Layer::ConvTranspose2d(l) => vec![&l.weight, &l.bias],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm(bn) => vec![&bn.gamma, &bn.beta],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv2d(l) => vec![&mut l.weight, &mut l.bias],
            Layer::ConvTranspose2d(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(bn) => vec![&mut bn.gamma, &mut bn.beta],
            _ => Vec::new(),
        }
    }

    /// Non-trainable state persisted with checkpoints.
    pub fn buffers(&self) -> Vec<&Array1<f64>> {
        match self {
            Layer::BatchNorm(bn) => vec![&bn.running_mean, &bn.running_var],
            _ => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Array1<f64>> {
        match self {
            Layer::BatchNorm(bn) => vec![&mut bn.running_mean, &mut bn.running_var],
            _ => Vec::new(),
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv2d(l) => l.cache = None,
            Layer::ConvTranspose2d(l) => l.cache = None,
            Layer::MaxPool2d(l) => l.cache = None,
            Layer::Activation { cache, .. } => *cache = None,
            Layer::Dense(l) => l.cache = None,
            Layer::Dropout(d) => d.mask = None,
            Layer::BatchNorm(bn) => bn.cache = None,
            Layer::Flatten { .. } | Layer::Unflatten { .. } => {}
        }
    }
}
