//! Model descriptions and the flat parameter vector.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One layer of a feedforward classifier.
///
/// Activations are either flat vectors `[d]` or `[channels, height, width]`
/// volumes. Convolutions use valid padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Dense {
        inputs: usize,
        outputs: usize,
        bias: bool,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    /// 2x2 window, stride 2, odd trailing rows/columns dropped.
    MaxPool2d,
    Flatten,
}

impl Layer {
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            Layer::Dense { inputs, outputs, .. } => {
                if input != [inputs] {
                    return Err(Error::Shape(format!("dense({inputs}->{outputs}) got input {input:?}")));
                }
                Ok(vec![outputs])
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let [c, h, w] = *input else {
                    return Err(Error::Shape(format!("conv2d needs [c, h, w], got {input:?}")));
                };
                if c != in_channels || h < kernel || w < kernel || kernel == 0 || stride == 0 {
                    return Err(Error::Shape(format!(
                        "conv2d({in_channels}->{out_channels}, k={kernel}, s={stride}) got input {input:?}"
                    )));
                }
                Ok(vec![out_channels, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2d => {
                let [c, h, w] = *input else {
                    return Err(Error::Shape(format!("maxpool2d needs [c, h, w], got {input:?}")));
                };
                if h < 2 || w < 2 {
                    return Err(Error::Shape(format!("maxpool2d input too small: {input:?}")));
                }
                Ok(vec![c, h / 2, w / 2])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Weight and bias shapes, in storage order.
    fn param_shapes(&self) -> Vec<(ParamKind, Vec<usize>)> {
        match *self {
            Layer::Dense { inputs, outputs, bias } => {
                let mut v = vec![(ParamKind::Weight, vec![outputs, inputs])];
                if bias {
                    v.push((ParamKind::Bias, vec![outputs]));
                }
                v
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                (ParamKind::Weight, vec![out_channels, in_channels, kernel, kernel]),
                (ParamKind::Bias, vec![out_channels]),
            ],
            _ => Vec::new(),
        }
    }

    fn fans(&self) -> (usize, usize) {
        match *self {
            Layer::Dense { inputs, outputs, .. } => (inputs, outputs),
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (in_channels * kernel * kernel, out_channels * kernel * kernel),
            _ => (0, 0),
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Layer::Dense { inputs, outputs, bias } => {
                if bias {
                    write!(f, "dense:{inputs}:{outputs}")
                } else {
                    write!(f, "dense:{inputs}:{outputs}:nobias")
                }
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => write!(f, "conv:{in_channels}:{out_channels}:{kernel}:{stride}"),
            Layer::Relu => f.write_str("relu"),
            Layer::MaxPool2d => f.write_str("maxpool"),
            Layer::Flatten => f.write_str("flatten"),
        }
    }
}

impl FromStr for Layer {
    type Err = Error;

    /// Parses the compact form produced by `Display`, e.g. `conv:1:8:3:1`,
    /// `dense:784:128`, `dense:4:2:nobias`, `relu`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize| -> Result<usize> {
            parts
                .get(i)
                .ok_or_else(|| Error::Config(format!("layer `{s}` is missing field {i}")))?
                .parse::<usize>()
                .map_err(|e| Error::Config(format!("layer `{s}`: {e}")))
        };
        match parts[0] {
            "dense" => {
                let bias = match parts.get(3) {
                    None => true,
                    Some(&"nobias") => false,
                    Some(other) => return Err(Error::Config(format!("layer `{s}`: unknown flag `{other}`"))),
                };
                Ok(Layer::Dense {
                    inputs: num(1)?,
                    outputs: num(2)?,
                    bias,
                })
            }
            "conv" => Ok(Layer::Conv2d {
                in_channels: num(1)?,
                out_channels: num(2)?,
                kernel: num(3)?,
                stride: if parts.len() > 4 { num(4)? } else { 1 },
            }),
            "relu" => Ok(Layer::Relu),
            "maxpool" => Ok(Layer::MaxPool2d),
            "flatten" => Ok(Layer::Flatten),
            other => Err(Error::Config(format!("unknown layer kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Where one parameter tensor lives inside a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlot {
    pub layer: usize,
    pub kind: ParamKind,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamSlot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// A validated classifier architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    num_classes: usize,
    /// `shapes[i]` is the input shape of layer `i`; the last entry is `[num_classes]`.
    shapes: Vec<Vec<usize>>,
    layout: Vec<ParamSlot>,
}

impl ModelSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>, num_classes: usize) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Shape(format!("bad input shape {input_shape:?}")));
        }
        if num_classes == 0 {
            return Err(Error::Shape("model needs at least one class".into()));
        }
        let mut shapes = vec![input_shape.clone()];
        for layer in &layers {
            let next = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        if shapes.last().unwrap() != &[num_classes] {
            return Err(Error::Shape(format!(
                "final output {:?} does not match {num_classes} classes",
                shapes.last().unwrap()
            )));
        }
        let mut layout = Vec::new();
        let mut offset = 0;
        for (i, layer) in layers.iter().enumerate() {
            for (kind, shape) in layer.param_shapes() {
                let slot = ParamSlot {
                    layer: i,
                    kind,
                    offset,
                    shape,
                };
                offset += slot.len();
                layout.push(slot);
            }
        }
        Ok(Self {
            input_shape,
            layers,
            num_classes,
            shapes,
            layout,
        })
    }

    /// Parses a comma-separated layer list such as
    /// `flatten,dense:784:128,relu,dense:128:10`.
    pub fn parse(input_shape: Vec<usize>, layers: &str, num_classes: usize) -> Result<Self> {
        let layers = layers
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Layer>>>()?;
        Self::new(input_shape, layers, num_classes)
    }

    /// Multinomial logistic regression on flat inputs.
    pub fn linear(inputs: usize, num_classes: usize) -> Result<Self> {
        Self::new(
            vec![inputs],
            vec![Layer::Dense {
                inputs,
                outputs: num_classes,
                bias: true,
            }],
            num_classes,
        )
    }

    /// Fully connected relu network over any input shape.
    pub fn mlp(input_shape: Vec<usize>, hidden: &[usize], num_classes: usize) -> Result<Self> {
        let mut layers = Vec::new();
        if input_shape.len() > 1 {
            layers.push(Layer::Flatten);
        }
        let mut width: usize = input_shape.iter().product();
        for &h in hidden {
            layers.push(Layer::Dense {
                inputs: width,
                outputs: h,
                bias: true,
            });
            layers.push(Layer::Relu);
            width = h;
        }
        layers.push(Layer::Dense {
            inputs: width,
            outputs: num_classes,
            bias: true,
        });
        Self::new(input_shape, layers, num_classes)
    }

    /// 784-128-10 MLP for 28x28 single-channel images.
    pub fn mnist_mlp() -> Self {
        Self::mlp(vec![1, 28, 28], &[128], 10).expect("static architecture")
    }

    /// conv(8,3x3)-relu-pool, conv(16,3x3)-relu-pool, dense(64)-relu, dense(10).
    pub fn mnist_cnn() -> Self {
        Self::new(
            vec![1, 28, 28],
            vec![
                Layer::Conv2d {
                    in_channels: 1,
                    out_channels: 8,
                    kernel: 3,
                    stride: 1,
                },
                Layer::Relu,
                Layer::MaxPool2d,
                Layer::Conv2d {
                    in_channels: 8,
                    out_channels: 16,
                    kernel: 3,
                    stride: 1,
                },
                Layer::Relu,
                Layer::MaxPool2d,
                Layer::Flatten,
                Layer::Dense {
                    inputs: 16 * 5 * 5,
                    outputs: 64,
                    bias: true,
                },
                Layer::Relu,
                Layer::Dense {
                    inputs: 64,
                    outputs: 10,
                    bias: true,
                },
            ],
            10,
        )
        .expect("static architecture")
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Input shape of every layer followed by the logit shape.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn layout(&self) -> &[ParamSlot] {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.last().map_or(0, |s| s.offset + s.len())
    }

    /// Compact layer list accepted by [`ModelSpec::parse`].
    pub fn layers_string(&self) -> String {
        self.layers
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Glorot-uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut values = vec![0.0; self.num_params()];
        for slot in &self.layout {
            if slot.kind == ParamKind::Weight {
                let (fan_in, fan_out) = self.layers[slot.layer].fans();
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in &mut values[slot.range()] {
                    *v = rng.random_range(-limit..limit);
                }
            }
        }
        ParamVector {
            values,
            layout: self.layout.clone(),
        }
    }

    pub fn zero_params(&self) -> ParamVector {
        ParamVector {
            values: vec![0.0; self.num_params()],
            layout: self.layout.clone(),
        }
    }
}

/// All trainable parameters flattened into one vector, with a map back to
/// per-layer tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<ParamSlot>,
}

impl ParamVector {
    pub fn new(layout: Vec<ParamSlot>, values: Vec<f64>) -> Result<Self> {
        let mut expected = 0;
        for slot in &layout {
            if slot.offset != expected {
                return Err(Error::Shape(format!(
                    "slot for layer {} starts at {}, expected {expected}",
                    slot.layer, slot.offset
                )));
            }
            expected += slot.len();
        }
        if expected != values.len() {
            return Err(Error::Shape(format!(
                "layout covers {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self { values, layout })
    }

    /// A vector with a single anonymous slot; handy for optimizer-level code
    /// that does not care about layers.
    pub fn from_flat(values: Vec<f64>) -> Self {
        let layout = vec![ParamSlot {
            layer: 0,
            kind: ParamKind::Weight,
            offset: 0,
            shape: vec![values.len()],
        }];
        Self { values, layout }
    }

    /// Inverse of [`ParamVector::unflatten`].
    pub fn from_tensors(layout: Vec<ParamSlot>, tensors: &[Tensor]) -> Result<Self> {
        if tensors.len() != layout.len() {
            return Err(Error::Shape(format!(
                "{} tensors for {} slots",
                tensors.len(),
                layout.len()
            )));
        }
        let mut values = Vec::new();
        for (slot, t) in layout.iter().zip(tensors) {
            if t.shape() != slot.shape.as_slice() {
                return Err(Error::Shape(format!(
                    "tensor {:?} does not fit slot {:?}",
                    t.shape(),
                    slot.shape
                )));
            }
            values.extend_from_slice(t.data());
        }
        Self::new(layout, values)
    }

    pub fn unflatten(&self) -> Vec<Tensor> {
        self.layout
            .iter()
            .map(|slot| {
                Tensor::new(slot.shape.clone(), self.values[slot.range()].to_vec())
                    .expect("layout validated at construction")
            })
            .collect()
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

    pub fn layout(&self) -> &[ParamSlot] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.layout.clone(), values)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            layout: self.layout.clone(),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    pub(crate) fn same_layout(&self, layout: &[ParamSlot]) -> bool {
        self.layout == layout
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mnist_presets_validate() {
        let cnn = ModelSpec::mnist_cnn();
        assert_eq!(cnn.shapes()[7], vec![400]);
        assert_eq!(
            cnn.num_params(),
            8 * 9 + 8 + 16 * 8 * 9 + 16 + 400 * 64 + 64 + 64 * 10 + 10
        );
        assert_eq!(ModelSpec::mnist_mlp().num_params(), 784 * 128 + 128 + 1290);
    }

    #[test]
    fn incompatible_layers_are_rejected() {
        let bad = ModelSpec::new(
            vec![4],
            vec![Layer::Dense {
                inputs: 3,
                outputs: 2,
                bias: true,
            }],
            2,
        );
        assert!(matches!(bad, Err(Error::Shape(_))));
        let wrong_classes = ModelSpec::linear(4, 3).unwrap();
        assert!(ModelSpec::new(vec![4], wrong_classes.layers().to_vec(), 2).is_err());
        assert!(ModelSpec::new(vec![1, 2, 2], vec![Layer::MaxPool2d, Layer::Flatten], 1).is_ok());
        assert!(ModelSpec::new(vec![4], vec![Layer::MaxPool2d], 4).is_err());
    }

    #[test]
    fn layer_strings_round_trip() {
        let cnn = ModelSpec::mnist_cnn();
        let parsed = ModelSpec::parse(vec![1, 28, 28], &cnn.layers_string(), 10).unwrap();
        assert_eq!(parsed, cnn);
        assert!("dense:3".parse::<Layer>().is_err());
        assert!("softmax".parse::<Layer>().is_err());
    }

    #[test]
    fn layout_is_contiguous_and_unflatten_round_trips() {
        let model = ModelSpec::mnist_cnn();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = model.init_params(&mut rng);
        let tensors = p.unflatten();
        let back = ParamVector::from_tensors(p.layout().to_vec(), &tensors).unwrap();
        assert_eq!(back, p);
        let mut bad = p.layout().to_vec();
        bad[1].offset += 1;
        assert!(ParamVector::new(bad, p.values().to_vec()).is_err());
    }

    #[test]
    fn init_respects_glorot_bounds_and_zero_bias() {
        let model = ModelSpec::mlp(vec![10], &[6], 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = model.init_params(&mut rng);
        for slot in p.layout() {
            let vals = &p.values()[slot.range()];
            match slot.kind {
                ParamKind::Bias => assert!(vals.iter().all(|&v| v == 0.0)),
                ParamKind::Weight => {
                    let (fi, fo) = model.layers()[slot.layer].fans();
                    let lim = (6.0 / (fi + fo) as f64).sqrt();
                    assert!(vals.iter().all(|v| v.abs() <= lim));
                }
            }
        }
    }
}
