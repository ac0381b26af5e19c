//! Declarative network descriptions and shape inference.

use serde::{Deserialize, Serialize};

use super::NnError;

/// Slope of the LeakyReLU that follows every convolution.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    /// Zero padding that keeps `ceil(in / stride)` outputs.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Convolution over (time, width), followed by LeakyReLU(0.01).
    Conv {
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
    },
    /// Stride-1 max pooling with zero (same) padding.
    MaxPool {
        kernel: (usize, usize),
    },
    /// Parallel branches concatenated on the channel axis.
    Inception {
        branches: Vec<Vec<LayerSpec>>,
    },
    Dropout {
        rate: f64,
    },
    /// Consumes the time axis; emits the final hidden state.
    Lstm {
        units: usize,
    },
    /// Fully connected layer; the last one feeds a softmax.
    Dense {
        units: usize,
    },
}

impl LayerSpec {
    pub fn conv(filters: usize, kernel: (usize, usize)) -> Self {
        LayerSpec::Conv {
            filters,
            kernel,
            stride: (1, 1),
            padding: Padding::Valid,
        }
    }

    pub fn conv_zero(filters: usize, kernel: (usize, usize)) -> Self {
        LayerSpec::Conv {
            filters,
            kernel,
            stride: (1, 1),
            padding: Padding::Zero,
        }
    }

    pub fn conv_strided(filters: usize, kernel: (usize, usize), stride: (usize, usize)) -> Self {
        LayerSpec::Conv {
            filters,
            kernel,
            stride,
            padding: Padding::Valid,
        }
    }
}

/// Activation shape for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    /// Feature map: channels × time × width.
    Map {
        c: usize,
        t: usize,
        w: usize,
    },
    /// Sequence: time × features.
    Seq {
        t: usize,
        f: usize,
    },
    Flat {
        f: usize,
    },
}

impl Shape {
    pub fn numel(&self) -> usize {
        match *self {
            Shape::Map { c, t, w } => c * t * w,
            Shape::Seq { t, f } => t * f,
            Shape::Flat { f } => f,
        }
    }
}

/// Output length and (before, after) padding along one axis.
pub fn conv_axis(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Option<(usize, usize, usize)> {
    if kernel == 0 || stride == 0 || input == 0 {
        return None;
    }
    let (before, after) = match padding {
        Padding::Valid => (0, 0),
        Padding::Zero => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            (total / 2, total - total / 2)
        }
    };
    let padded = input + before + after;
    if padded < kernel {
        return None;
    }
    Some(((padded - kernel) / stride + 1, before, after))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub name: String,
    pub input_time: usize,
    pub input_width: usize,
    pub layers: Vec<LayerSpec>,
}

/// Shape after each top-level layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeTrace {
    pub input: Shape,
    pub outputs: Vec<Shape>,
}

pub(crate) fn infer_layer(layer: &LayerSpec, input: Shape, index: usize) -> Result<Shape, NnError> {
    let bad = |reason: String| NnError::ShapeMismatch { layer: index, reason };
    match layer {
        LayerSpec::Conv {
            filters,
            kernel,
            stride,
            padding,
        } => {
            let Shape::Map { t, w, .. } = input else {
                return Err(bad(format!("convolution needs a feature map, got {input:?}")));
            };
            if *filters == 0 {
                return Err(bad("zero filters".into()));
            }
            let (to, ..) = conv_axis(t, kernel.0, stride.0, *padding)
                .ok_or_else(|| bad(format!("kernel height {} exceeds time {t}", kernel.0)))?;
            let (wo, ..) = conv_axis(w, kernel.1, stride.1, *padding)
                .ok_or_else(|| bad(format!("kernel width {} exceeds width {w}", kernel.1)))?;
            Ok(Shape::Map {
                c: *filters,
                t: to,
                w: wo,
            })
        }
        LayerSpec::MaxPool { kernel } => match input {
            Shape::Map { .. } if kernel.0 > 0 && kernel.1 > 0 => Ok(input),
            _ => Err(bad(format!("max pooling needs a feature map, got {input:?}"))),
        },
        LayerSpec::Inception { branches } => {
            if branches.is_empty() {
                return Err(bad("inception without branches".into()));
            }
            let mut channels = 0;
            let mut spatial = None;
            for branch in branches {
                let mut s = input;
                for l in branch {
                    s = infer_layer(l, s, index)?;
                }
                let Shape::Map { c, t, w } = s else {
                    return Err(bad("inception branch must end in a feature map".into()));
                };
                if *spatial.get_or_insert((t, w)) != (t, w) {
                    return Err(bad("inception branches disagree on time/width".into()));
                }
                channels += c;
            }
            let (t, w) = spatial.expect("at least one branch");
            Ok(Shape::Map { c: channels, t, w })
        }
        LayerSpec::Dropout { rate } => {
            if (0.0..1.0).contains(rate) {
                Ok(input)
            } else {
                Err(bad(format!("dropout rate {rate} outside [0, 1)")))
            }
        }
        LayerSpec::Lstm { units } => {
            let t = match input {
                Shape::Map { t, .. } | Shape::Seq { t, .. } => t,
                Shape::Flat { .. } => return Err(bad("LSTM needs a time axis".into())),
            };
            if *units == 0 || t == 0 {
                return Err(bad("empty LSTM".into()));
            }
            Ok(Shape::Flat { f: *units })
        }
        LayerSpec::Dense { units } => match input {
            Shape::Flat { .. } if *units > 0 => Ok(Shape::Flat { f: *units }),
            _ => Err(bad(format!("dense layer needs a flat input, got {input:?}"))),
        },
    }
}

impl ArchitectureSpec {
    pub fn input_shape(&self) -> Shape {
        Shape::Map {
            c: 1,
            t: self.input_time,
            w: self.input_width,
        }
    }

    /// Walks the layers, checking that each accepts its input, and that the
    /// network ends in a three-way dense head.
    pub fn infer_shapes(&self) -> Result<ShapeTrace, NnError> {
        let input = self.input_shape();
        if self.input_time == 0 || self.input_width == 0 {
            return Err(NnError::ShapeMismatch {
                layer: 0,
                reason: "empty input".into(),
            });
        }
        let mut s = input;
        let mut outputs = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            s = infer_layer(l, s, i)?;
            outputs.push(s);
        }
        match self.layers.last() {
            Some(LayerSpec::Dense { units: 3 }) => Ok(ShapeTrace { input, outputs }),
            _ => Err(NnError::ShapeMismatch {
                layer: self.layers.len().saturating_sub(1),
                reason: "network must end in Dense(3)".into(),
            }),
        }
    }
}

/// Layer widths for the preset networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PresetWidths {
    pub conv: usize,
    pub inception: usize,
    pub lstm: usize,
    pub dropout: f64,
}

impl Default for PresetWidths {
    /// Full-size widths: 32 conv filters, 64 per inception branch, LSTM(64),
    /// dropout 0.2.
    fn default() -> Self {
        PresetWidths {
            conv: 32,
            inception: 64,
            lstm: 64,
            dropout: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Full ten-level book, 100 × 40 input.
    DeeplobFull,
    /// Level-1 prices and volumes, 100 × 4 input.
    Level1,
    /// Reduced first stack for two- or three-column inputs.
    Slim,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::DeeplobFull => "deeplob_full",
            Preset::Level1 => "level1",
            Preset::Slim => "slim",
        }
    }
}

fn inception(filters: usize) -> LayerSpec {
    LayerSpec::Inception {
        branches: vec![
            vec![
                LayerSpec::conv_zero(filters, (1, 1)),
                LayerSpec::conv_zero(filters, (3, 1)),
            ],
            vec![
                LayerSpec::conv_zero(filters, (1, 1)),
                LayerSpec::conv_zero(filters, (5, 1)),
            ],
            vec![
                LayerSpec::MaxPool { kernel: (3, 1) },
                LayerSpec::conv_zero(filters, (1, 1)),
            ],
        ],
    }
}

impl ArchitectureSpec {
    pub fn preset(preset: Preset, input_time: usize, input_width: usize, w: PresetWidths) -> Self {
        let c = w.conv;
        let halve = || LayerSpec::conv_strided(c, (1, 2), (1, 2));
        let time = || LayerSpec::conv_zero(c, (4, 1));
        let mut layers = match preset {
            Preset::DeeplobFull => vec![
                halve(),
                time(),
                time(),
                halve(),
                time(),
                time(),
                LayerSpec::conv(c, (1, 10)),
                time(),
                time(),
            ],
            Preset::Level1 => vec![halve(), time(), time(), halve(), time(), time()],
            Preset::Slim => vec![LayerSpec::conv(c, (1, 2)), time(), time()],
        };
        layers.push(inception(w.inception));
        layers.push(LayerSpec::Dropout { rate: w.dropout });
        layers.push(LayerSpec::Lstm { units: w.lstm });
        layers.push(LayerSpec::Dense { units: 3 });
        ArchitectureSpec {
            name: preset.name().to_string(),
            input_time,
            input_width,
            layers,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_arithmetic() {
        assert_eq!(conv_axis(100, 4, 1, Padding::Zero), Some((100, 1, 2)));
        assert_eq!(conv_axis(100, 5, 1, Padding::Zero), Some((100, 2, 2)));
        assert_eq!(conv_axis(100, 3, 1, Padding::Zero), Some((100, 1, 1)));
        assert_eq!(conv_axis(40, 2, 2, Padding::Valid), Some((20, 0, 0)));
        assert_eq!(conv_axis(10, 10, 1, Padding::Valid), Some((1, 0, 0)));
        assert_eq!(conv_axis(3, 2, 1, Padding::Valid), Some((2, 0, 0)));
        assert_eq!(conv_axis(5, 2, 2, Padding::Valid), Some((2, 0, 0)));
        assert_eq!(conv_axis(2, 4, 1, Padding::Valid), None);
        // floor((in + pad - k)/s) + 1
        for input in 1..30 {
            for k in 1..=input {
                for s in 1..4 {
                    let (out, b, a) = conv_axis(input, k, s, Padding::Valid).unwrap();
                    assert_eq!(out, (input + b + a - k) / s + 1);
                }
            }
        }
    }

    #[test]
    fn deeplob_full_trace() {
        let spec = ArchitectureSpec::preset(Preset::DeeplobFull, 100, 40, PresetWidths::default());
        let trace = spec.infer_shapes().unwrap();
        let maps: Vec<_> = trace
            .outputs
            .iter()
            .map(|s| match *s {
                Shape::Map { c, t, w } => (c, t, w),
                _ => (0, 0, 0),
            })
            .collect();
        assert_eq!(maps[0], (32, 100, 20));
        assert_eq!(maps[2], (32, 100, 20));
        assert_eq!(maps[3], (32, 100, 10));
        assert_eq!(maps[6], (32, 100, 1));
        assert_eq!(maps[8], (32, 100, 1));
        assert_eq!(maps[9], (192, 100, 1));
        assert_eq!(trace.outputs[11], Shape::Flat { f: 64 });
        assert_eq!(trace.outputs[12], Shape::Flat { f: 3 });
    }

    #[test]
    fn level1_reaches_width_one() {
        let spec = ArchitectureSpec::preset(Preset::Level1, 100, 4, PresetWidths::default());
        let trace = spec.infer_shapes().unwrap();
        assert_eq!(trace.outputs[0], Shape::Map { c: 32, t: 100, w: 2 });
        assert_eq!(trace.outputs[5], Shape::Map { c: 32, t: 100, w: 1 });
        assert_eq!(trace.outputs[6], Shape::Map { c: 192, t: 100, w: 1 });
    }

    #[test]
    fn slim_accepts_narrow_inputs() {
        for (m, w) in [(2, 1), (3, 2), (4, 3)] {
            let spec = ArchitectureSpec::preset(Preset::Slim, 100, m, PresetWidths::default());
            let trace = spec.infer_shapes().unwrap();
            assert_eq!(trace.outputs[2], Shape::Map { c: 32, t: 100, w });
        }
    }

    #[test]
    fn oversized_kernel_is_rejected_with_index() {
        let spec = ArchitectureSpec::preset(Preset::DeeplobFull, 100, 2, PresetWidths::default());
        assert!(matches!(
            spec.infer_shapes(),
            Err(NnError::ShapeMismatch { layer: 3, .. })
        ));
        let mut spec = ArchitectureSpec::preset(Preset::Slim, 100, 2, PresetWidths::default());
        spec.layers.pop();
        assert!(spec.infer_shapes().is_err());
    }

    #[test]
    fn spec_serializes() {
        let spec = ArchitectureSpec::preset(Preset::Level1, 100, 4, PresetWidths::default());
        let text = serde_json::to_string(&spec).unwrap();
        let back: ArchitectureSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
