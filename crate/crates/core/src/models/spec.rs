use serde::{Deserialize, Serialize};

use crate::error::{CmktError, Result};
use crate::nn::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedPadding {
    /// Output spatial size equals input size (stride-1 only). Odd totals
    /// put the extra row/column at the bottom/right.
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Padding {
    Explicit(usize),
    Named(NamedPadding),
}

impl Default for Padding {
    fn default() -> Self {
        Padding::Explicit(0)
    }
}

fn one() -> usize {
    1
}

/// One entry of the layer vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: Padding,
    },
    /// Stride defaults to the kernel size.
    Maxpool {
        kernel: usize,
        #[serde(default)]
        stride: Option<usize>,
    },
    Activation {
        name: String,
        #[serde(default)]
        slope: Option<f64>,
    },
    Flatten,
    Dense {
        out_dim: usize,
    },
    Dropout {
        rate: f64,
    },
    Batchnorm,
    Unflatten {
        shape: Vec<usize>,
    },
    Deconv {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default)]
        output_padding: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    /// Names the activation boundary right after this layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

impl From<LayerKind> for LayerSpec {
    fn from(kind: LayerKind) -> Self {
        LayerSpec { kind, tag: None }
    }
}

/// Declarative description of a feed-forward network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    /// Per-sample input shape: `[C, H, W]` or `[D]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    /// Declared output shape; checked against inference when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_shape: Option<Vec<usize>>,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::Maxpool { .. } => "maxpool",
            LayerKind::Activation { .. } => "activation",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::Batchnorm => "batchnorm",
            LayerKind::Unflatten { .. } => "unflatten",
            LayerKind::Deconv { .. } => "deconv",
        }
    }

    pub(crate) fn activation(&self) -> Option<Result<Activation>> {
        match self {
            LayerKind::Activation { name, slope } => Some(parse_activation(name, *slope)),
            _ => None,
        }
    }

    /// Resolved `(pad_lo, pad_hi)` for a conv layer.
    pub(crate) fn conv_padding(kernel: usize, stride: usize, padding: Padding) -> std::result::Result<(usize, usize), String> {
        match padding {
            Padding::Explicit(p) => Ok((p, p)),
            Padding::Named(NamedPadding::Valid) => Ok((0, 0)),
            Padding::Named(NamedPadding::Same) => {
                if stride != 1 {
                    return Err("padding 'same' requires stride 1".into());
                }
                let total = kernel - 1;
                Ok((total / 2, total - total / 2))
            }
        }
    }
}

pub(crate) fn parse_activation(name: &str, slope: Option<f64>) -> Result<Activation> {
    match name.to_ascii_lowercase().as_str() {
        "relu" => Ok(Activation::Relu),
        "leaky_relu" | "leakyrelu" => Ok(Activation::LeakyRelu(slope.unwrap_or(0.01))),
        "sigmoid" => Ok(Activation::Sigmoid),
        "tanh" => Ok(Activation::Tanh),
        other => Err(CmktError::Config(format!("unknown activation `{other}`"))),
    }
}

fn fmt_shape(s: &[usize]) -> String {
    format!("{s:?}")
}

impl ArchitectureSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Self {
        ArchitectureSpec { input_shape, layers, output_shape: None }
    }

    /// Per-sample output shape after every layer; fails with the index of the
    /// first layer whose input shape it cannot accept.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(CmktError::Config(format!(
                "invalid input shape {}",
                fmt_shape(&self.input_shape)
            )));
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut cur = self.input_shape.clone();
        for (index, layer) in self.layers.iter().enumerate() {
            let err = |reason: String| CmktError::LayerShape {
                index,
                layer: layer.kind.name().to_string(),
                reason,
            };
            let need3 = |cur: &[usize]| -> std::result::Result<(usize, usize, usize), String> {
                match cur {
                    [c, h, w] => Ok((*c, *h, *w)),
                    _ => Err(format!("expects [C, H, W] input, got {}", fmt_shape(cur))),
                }
            };
            cur = match &layer.kind {
                LayerKind::Conv { out_channels, kernel, stride, padding } => {
                    let (_, h, w) = need3(&cur).map_err(err)?;
                    if *out_channels == 0 || *kernel == 0 || *stride == 0 {
                        return Err(err("channels, kernel and stride must be positive".into()));
                    }
                    let (lo, hi) = LayerKind::conv_padding(*kernel, *stride, *padding).map_err(err)?;
                    let out = |len: usize| {
                        let padded = len + lo + hi;
                        (padded >= *kernel).then(|| (padded - kernel) / stride + 1)
                    };
                    match (out(h), out(w)) {
                        (Some(oh), Some(ow)) => vec![*out_channels, oh, ow],
                        _ => return Err(err(format!("kernel {kernel} larger than padded input {}", fmt_shape(&cur)))),
                    }
                }
                LayerKind::Maxpool { kernel, stride } => {
                    let (c, h, w) = need3(&cur).map_err(err)?;
                    let s = stride.unwrap_or(*kernel);
                    if *kernel == 0 || s == 0 {
                        return Err(err("kernel and stride must be positive".into()));
                    }
                    if *kernel > h || *kernel > w {
                        return Err(err(format!("kernel {kernel} larger than input {}", fmt_shape(&cur))));
                    }
                    vec![c, (h - kernel) / s + 1, (w - kernel) / s + 1]
                }
                LayerKind::Activation { .. } => {
                    layer.kind.activation().expect("activation").map_err(|e| err(e.to_string()))?;
                    cur
                }
                LayerKind::Dropout { rate } => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(err(format!("dropout rate {rate} outside [0, 1)")));
                    }
                    cur
                }
                LayerKind::Flatten => vec![cur.iter().product()],
                LayerKind::Dense { out_dim } => {
                    if cur.len() != 1 {
                        return Err(err(format!("expects flat input, got {}", fmt_shape(&cur))));
                    }
                    if *out_dim == 0 {
                        return Err(err("out_dim must be positive".into()));
                    }
                    vec![*out_dim]
                }
                LayerKind::Batchnorm => {
                    if cur.len() != 1 && cur.len() != 3 {
                        return Err(err(format!("expects [D] or [C, H, W], got {}", fmt_shape(&cur))));
                    }
                    cur
                }
                LayerKind::Unflatten { shape } => {
                    if cur.len() != 1 || shape.iter().product::<usize>() != cur[0] {
                        return Err(err(format!(
                            "cannot unflatten {} into {}",
                            fmt_shape(&cur),
                            fmt_shape(shape)
                        )));
                    }
                    shape.clone()
                }
                LayerKind::Deconv { out_channels, kernel, stride, padding, output_padding } => {
                    let (_, h, w) = need3(&cur).map_err(err)?;
                    if output_padding >= stride && *output_padding > 0 {
                        return Err(err("output_padding must be smaller than stride".into()));
                    }
                    let out = |len: usize| {
                        crate::nn::layers::ConvTranspose2d::out_len(len, *kernel, *stride, *padding, *output_padding)
                    };
                    match (out(h), out(w)) {
                        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => vec![*out_channels, oh, ow],
                        _ => return Err(err("non-positive output size".into())),
                    }
                }
            };
            shapes.push(cur.clone());
        }
        if let Some(declared) = &self.output_shape {
            let actual = shapes.last().cloned().unwrap_or_else(|| self.input_shape.clone());
            if declared != &actual {
                return Err(CmktError::LayerShape {
                    index: self.layers.len().saturating_sub(1),
                    layer: "output".into(),
                    reason: format!("declared output {} but layers produce {}", fmt_shape(declared), fmt_shape(&actual)),
                });
            }
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.layer_shapes()?.pop().unwrap_or_else(|| self.input_shape.clone()))
    }

    /// Index of the layer carrying `tag`. `output` names the final layer and
    /// `layer:<i>` the output of layer `i`.
    pub fn boundary(&self, tag: &str) -> Result<usize> {
        if tag == "output" && !self.layers.is_empty() {
            return Ok(self.layers.len() - 1);
        }
        if let Some(i) = tag.strip_prefix("layer:").and_then(|s| s.parse::<usize>().ok()) {
            if i < self.layers.len() {
                return Ok(i);
            }
        }
        self.layers
            .iter()
            .position(|l| l.tag.as_deref() == Some(tag))
            .ok_or_else(|| CmktError::UnknownTag(tag.to_string()))
    }

    /// Replaces the `out_dim` of the last dense layer.
    pub fn with_final_dense(mut self, out_dim: usize) -> Result<Self> {
        let last = self
            .layers
            .iter_mut()
            .rev()
            .find_map(|l| match &mut l.kind {
                LayerKind::Dense { out_dim } => Some(out_dim),
                _ => None,
            })
            .ok_or_else(|| CmktError::Config("spec has no dense layer".into()))?;
        *last = out_dim;
        self.output_shape = None;
        Ok(self)
    }

    pub fn with_input_shape(mut self, input_shape: Vec<usize>) -> Self {
        self.input_shape = input_shape;
        self
    }
}

/// Shorthand constructors used by presets and tests.
pub mod layer {
    use super::*;

    pub fn conv_same(out_channels: usize, kernel: usize) -> LayerSpec {
        LayerKind::Conv { out_channels, kernel, stride: 1, padding: Padding::Named(NamedPadding::Same) }.into()
    }

    pub fn conv(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> LayerSpec {
        LayerKind::Conv { out_channels, kernel, stride, padding: Padding::Explicit(padding) }.into()
    }

    pub fn maxpool(kernel: usize) -> LayerSpec {
        LayerKind::Maxpool { kernel, stride: None }.into()
    }

    pub fn relu() -> LayerSpec {
        act("relu")
    }

    pub fn act(name: &str) -> LayerSpec {
        LayerKind::Activation { name: name.into(), slope: None }.into()
    }

    pub fn leaky_relu(slope: f64) -> LayerSpec {
        LayerKind::Activation { name: "leaky_relu".into(), slope: Some(slope) }.into()
    }

    pub fn flatten() -> LayerSpec {
        LayerKind::Flatten.into()
    }

    pub fn dense(out_dim: usize) -> LayerSpec {
        LayerKind::Dense { out_dim }.into()
    }

    pub fn dropout(rate: f64) -> LayerSpec {
        LayerKind::Dropout { rate }.into()
    }

    pub fn batchnorm() -> LayerSpec {
        LayerKind::Batchnorm.into()
    }

    pub fn unflatten(shape: &[usize]) -> LayerSpec {
        LayerKind::Unflatten { shape: shape.to_vec() }.into()
    }

    pub fn deconv(out_channels: usize, kernel: usize, stride: usize, padding: usize, output_padding: usize) -> LayerSpec {
        LayerKind::Deconv { out_channels, kernel, stride, padding, output_padding }.into()
    }

    pub fn tagged(mut l: LayerSpec, tag: &str) -> LayerSpec {
        l.tag = Some(tag.into());
        l
    }
}

#[cfg(test)]
mod tests {
    use super::layer::*;
    use super::*;

    #[test]
    fn inconsistent_chain_reports_layer_index() {
        let spec = ArchitectureSpec::new(vec![1, 8, 8], vec![conv_same(4, 3), dense(3)]);
        match spec.layer_shapes() {
            Err(CmktError::LayerShape { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn declared_output_must_match() {
        let mut spec = ArchitectureSpec::new(vec![4], vec![dense(2)]);
        spec.output_shape = Some(vec![3]);
        assert!(spec.layer_shapes().is_err());
        spec.output_shape = Some(vec![2]);
        assert!(spec.layer_shapes().is_ok());
    }

    #[test]
    fn layers_parse_from_toml() {
        let text = r#"
            input_shape = [1, 80, 80]
            layers = [
              { type = "conv", out_channels = 31, kernel = 2, padding = "same" },
              { type = "activation", name = "relu" },
              { type = "maxpool", kernel = 2 },
              { type = "flatten", tag = "embedding" },
              { type = "dropout", rate = 0.1 },
            ]
        "#;
        let spec: ArchitectureSpec = toml::from_str(text).unwrap();
        assert_eq!(spec.output_shape().unwrap(), vec![31 * 40 * 40]);
        assert_eq!(spec.boundary("embedding").unwrap(), 3);
        assert!(matches!(spec.boundary("nope"), Err(CmktError::UnknownTag(_))));
    }
}
