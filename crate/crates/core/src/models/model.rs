use ndarray::{Array1, Array2, ArrayD, Ix2, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::spec::{ArchitectureSpec, LayerKind};
use crate::error::{CmktError, Result};
use crate::nn::{Layer, Mode, Param};
use crate::nn::layers::{BatchNorm, Conv2d, ConvTranspose2d, Dense, MaxPool2d};

/// A parameterized network built from an [`ArchitectureSpec`].
///
/// Weights and biases are drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` in
/// layer order from a ChaCha8 stream seeded with `seed`; batch-norm starts at
/// unit scale and zero shift. Dropout masks use a second stream derived from
/// the same seed.
#[derive(Debug, Clone)]
pub struct TrainableModel {
    spec: ArchitectureSpec,
    layers: Vec<Layer>,
    shapes: Vec<Vec<usize>>,
    seed: u64,
    mode: Mode,
    dropout_rng: ChaCha8Rng,
}

pub fn build_model(spec: &ArchitectureSpec, seed: u64) -> Result<TrainableModel> {
    TrainableModel::new(spec.clone(), seed)
}

impl TrainableModel {
    pub fn new(spec: ArchitectureSpec, seed: u64) -> Result<Self> {
        let shapes = spec.layer_shapes()?;
        let mut init = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut cur = spec.input_shape.clone();
        for (l, out_shape) in spec.layers.iter().zip(&shapes) {
            let layer = match &l.kind {
                LayerKind::Conv { out_channels, kernel, stride, padding } => {
                    let (lo, hi) = LayerKind::conv_padding(*kernel, *stride, *padding)
                        .map_err(CmktError::Config)?;
                    Layer::Conv2d(Conv2d::new(cur[0], *out_channels, *kernel, *stride, lo, hi, &mut init))
                }
                LayerKind::Maxpool { kernel, stride } => {
                    Layer::MaxPool2d(MaxPool2d::new(*kernel, stride.unwrap_or(*kernel)))
                }
                LayerKind::Activation { .. } => Layer::activation(l.kind.activation().expect("activation")?),
                LayerKind::Flatten => Layer::Flatten { in_shape: cur.clone() },
                LayerKind::Dense { out_dim } => Layer::Dense(Dense::new(cur[0], *out_dim, &mut init)),
                LayerKind::Dropout { rate } => Layer::dropout(*rate),
                LayerKind::Batchnorm => Layer::BatchNorm(BatchNorm::new(cur[0])),
                LayerKind::Unflatten { shape } => Layer::Unflatten { shape: shape.clone(), in_dim: cur[0] },
                LayerKind::Deconv { out_channels, kernel, stride, padding, output_padding } => {
                    Layer::ConvTranspose2d(ConvTranspose2d::new(
                        cur[0],
                        *out_channels,
                        *kernel,
                        *stride,
                        *padding,
                        *output_padding,
                        &mut init,
                    ))
                }
            };
            layers.push(layer);
            cur = out_shape.clone();
        }
        Ok(TrainableModel {
            spec,
            layers,
            shapes,
            seed,
            mode: Mode::Eval,
            dropout_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15),
        })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.spec.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().map(Vec::as_slice).unwrap_or(&self.spec.input_shape)
    }

    /// Per-sample shape at the boundary after layer `index`.
    pub fn shape_at(&self, index: usize) -> &[usize] {
        &self.shapes[index]
    }

    fn check_input(&self, x: &ArrayD<f64>) -> Result<()> {
        if x.ndim() == 0 || x.shape()[1..] != self.spec.input_shape[..] {
            return Err(CmktError::shape(
                format!("[N, {:?}]", self.spec.input_shape),
                format!("{:?}", x.shape()),
            ));
        }
        Ok(())
    }

    fn empty_output(&self, end: usize) -> ArrayD<f64> {
        let mut shape = vec![0];
        if self.layers.is_empty() {
            shape.extend_from_slice(&self.spec.input_shape);
        } else {
            shape.extend_from_slice(&self.shapes[end]);
        }
        ArrayD::zeros(IxDyn(&shape))
    }

    /// Training-path forward pass in the current mode; caches activations for
    /// [`backward`](Self::backward).
    pub fn forward(&mut self, x: ArrayD<f64>) -> Result<ArrayD<f64>> {
        self.check_input(&x)?;
        let mode = self.mode;
        let mut h = x;
        for layer in &mut self.layers {
            h = layer.forward(h, mode, &mut self.dropout_rng);
        }
        Ok(h)
    }

    /// Backpropagates `grad` (gradient w.r.t. the last forward output),
    /// accumulating parameter gradients, and returns the input gradient.
    pub fn backward(&mut self, grad: ArrayD<f64>) -> ArrayD<f64> {
        let mut g = grad;
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(g);
        }
        g
    }

    /// Backpropagation for parameter gradients only; the input gradient of
    /// the first layer is not computed.
    pub fn backward_params(&mut self, grad: ArrayD<f64>) {
        let mut g = grad;
        let n = self.layers.len();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            g = if i == 0 && n > 0 { layer.backward_params(g) } else { layer.backward(g) };
        }
    }

    /// Deterministic eval-mode forward pass without caching.
    pub fn infer(&self, x: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        if self.layers.is_empty() {
            self.check_input(x)?;
            return Ok(x.clone());
        }
        self.infer_until(x, self.layers.len() - 1)
    }

    /// Eval-mode activations after layer `end` (inclusive).
    pub fn infer_until(&self, x: &ArrayD<f64>, end: usize) -> Result<ArrayD<f64>> {
        self.check_input(x)?;
        if x.shape()[0] == 0 {
            return Ok(self.empty_output(end));
        }
        let mut h = self.layers[0].infer(x);
        for layer in &self.layers[1..=end] {
            h = layer.infer(&h);
        }
        Ok(h)
    }

    /// Convenience for `[N, D]` outputs.
    pub fn infer_matrix(&self, x: &ArrayD<f64>) -> Result<Array2<f64>> {
        let y = self.infer(x)?;
        let n = y.shape()[0];
        let d = if n == 0 { self.output_shape().iter().product() } else { y.len() / n };
        Ok(y.into_shape_with_order((n, d)).expect("contiguous output"))
    }

    /// Feature extractor for the activations at `tag`.
    pub fn extract_hidden(&self, tag: &str) -> Result<HiddenExtractor<'_>> {
        let end = self.spec.boundary(tag)?;
        Ok(HiddenExtractor { model: self, end })
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
        for l in &mut self.layers {
            l.clear_cache();
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// All parameters concatenated in layer order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.value.iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.grad.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(CmktError::shape(self.param_count().to_string(), values.len().to_string()));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            for (dst, src) in p.value.iter_mut().zip(&values[offset..offset + n]) {
                *dst = *src;
            }
            offset += n;
        }
        Ok(())
    }

    pub fn flat_buffers(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.buffers())
            .flat_map(|b| b.iter().copied())
            .collect()
    }

    pub fn set_flat_buffers(&mut self, values: &[f64]) -> Result<()> {
        let total: usize = self.layers.iter().flat_map(|l| l.buffers()).map(Array1::len).sum();
        if values.len() != total {
            return Err(CmktError::shape(total.to_string(), values.len().to_string()));
        }
        let mut offset = 0;
        for b in self.layers.iter_mut().flat_map(|l| l.buffers_mut()) {
            let n = b.len();
            b.assign(&Array1::from(values[offset..offset + n].to_vec()));
            offset += n;
        }
        Ok(())
    }
}

/// Maps inputs to the activations at one tagged boundary.
#[derive(Debug, Clone, Copy)]
pub struct HiddenExtractor<'a> {
    model: &'a TrainableModel,
    end: usize,
}

impl HiddenExtractor<'_> {
    pub fn dim(&self) -> usize {
        self.model.shapes[self.end].iter().product()
    }

    pub fn apply(&self, x: &ArrayD<f64>) -> Result<Array2<f64>> {
        let y = self.model.infer_until(x, self.end)?;
        let n = y.shape()[0];
        Ok(y.into_shape_with_order((n, self.dim())).expect("contiguous activations"))
    }
}

/// Flattens per-sample outputs to rows.
pub(crate) fn as_rows(y: ArrayD<f64>) -> Array2<f64> {
    let n = y.shape()[0];
    let d: usize = y.shape()[1..].iter().product();
    y.into_shape_with_order((n, d)).expect("contiguous").into_dimensionality::<Ix2>().unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::spec::layer::*;
    use ndarray::Array;
    use rand::Rng;

    fn rand_input(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_shape_fn(IxDyn(shape), |_| rng.random::<f64>())
    }

    #[test]
    fn identity_dense_is_identity() {
        let spec = ArchitectureSpec::new(vec![1], vec![dense(1)]);
        let mut m = build_model(&spec, 0).unwrap();
        m.set_flat_params(&[1.0, 0.0]).unwrap();
        let x = ArrayD::from_shape_vec(IxDyn(&[3, 1]), vec![-2.0, 0.5, 7.0]).unwrap();
        assert_eq!(m.infer(&x).unwrap(), x);
    }

    #[test]
    fn eval_forward_is_bit_identical() {
        let spec = ArchitectureSpec::new(
            vec![1, 12, 12],
            vec![conv_same(3, 3), relu(), maxpool(2), flatten(), dropout(0.5), dense(4), batchnorm()],
        );
        let m = build_model(&spec, 9).unwrap();
        let x = rand_input(&[5, 1, 12, 12], 1);
        assert_eq!(m.infer(&x).unwrap(), m.infer(&x).unwrap());
    }

    #[test]
    fn same_seed_same_parameters() {
        let spec = ArchitectureSpec::new(vec![6], vec![dense(5), relu(), dense(1)]);
        assert_eq!(build_model(&spec, 3).unwrap().flat_params(), build_model(&spec, 3).unwrap().flat_params());
        assert_ne!(build_model(&spec, 3).unwrap().flat_params(), build_model(&spec, 4).unwrap().flat_params());
    }

    #[test]
    fn output_tag_matches_forward() {
        let spec = ArchitectureSpec::new(vec![4], vec![dense(3), act("tanh"), dense(2)]);
        let m = build_model(&spec, 1).unwrap();
        let x = rand_input(&[2, 4], 5);
        let h = m.extract_hidden("output").unwrap().apply(&x).unwrap();
        assert_eq!(h.into_dyn(), m.infer(&x).unwrap());
    }

    #[test]
    fn wrong_input_shape_is_error() {
        let spec = ArchitectureSpec::new(vec![4], vec![dense(2)]);
        let m = build_model(&spec, 1).unwrap();
        assert!(m.infer(&rand_input(&[2, 5], 0)).is_err());
    }

    #[test]
    fn empty_batch_gives_empty_output() {
        let spec = ArchitectureSpec::new(vec![1, 8, 8], vec![conv_same(2, 3), flatten()]);
        let m = build_model(&spec, 1).unwrap();
        let y = m.infer(&ArrayD::zeros(IxDyn(&[0, 1, 8, 8]))).unwrap();
        assert_eq!(y.shape(), &[0, 128]);
    }
}
