use std::fmt;
use std::str::FromStr;

use super::ModelError;
use crate::ops::window_out;

/// One layer of a sequential network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        inputs: usize,
        units: usize,
    },
    Relu,
    Sigmoid,
    Dropout {
        rate: f64,
    },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Dropout { .. } => "dropout",
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv2d {
                filters,
                kernel,
                stride,
                padding,
            } => write!(f, "conv2d filters={filters} kernel={kernel} stride={stride} padding={padding}"),
            LayerSpec::MaxPool2d { window, stride } => write!(f, "maxpool2d window={window} stride={stride}"),
            LayerSpec::Dense { inputs, units } => write!(f, "dense inputs={inputs} units={units}"),
            LayerSpec::Dropout { rate } => write!(f, "dropout rate={rate}"),
            _ => f.write_str(self.name()),
        }
    }
}

/// Input geometry plus the ordered layer list.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    /// `[channels, height, width]`
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// The default classifier for 3x64x64 images.
    ///
    /// | # | layer                        | output     | parameters |
    /// |---|------------------------------|------------|-----------:|
    /// | 0 | conv 16 3x3 pad 1            | 16x64x64   |        448 |
    /// | 2 | maxpool 2                    | 16x32x32   |            |
    /// | 3 | conv 32 3x3 pad 1            | 32x32x32   |      4 640 |
    /// | 5 | maxpool 2                    | 32x16x16   |            |
    /// | 6 | conv 64 3x3 pad 1            | 64x16x16   |     18 496 |
    /// | 8 | maxpool 2                    | 64x8x8     |            |
    /// | 9 | flatten                      | 4096       |            |
    /// |10 | dense 64                     | 64         |    262 208 |
    /// |12 | dropout 0.5                  | 64         |            |
    /// |13 | dense 1                      | 1          |         65 |
    /// |14 | sigmoid                      | 1          |            |
    ///
    /// Each conv and the first dense layer is followed by a relu.
    /// Total: 285 857 parameters.
    pub fn reference() -> Self {
        let conv = |filters| LayerSpec::Conv2d {
            filters,
            kernel: 3,
            stride: 1,
            padding: 1,
        };
        let pool = LayerSpec::MaxPool2d { window: 2, stride: 2 };
        Self {
            input: [3, 64, 64],
            layers: vec![
                conv(16),
                LayerSpec::Relu,
                pool,
                conv(32),
                LayerSpec::Relu,
                pool,
                conv(64),
                LayerSpec::Relu,
                pool,
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 4096, units: 64 },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::Dense { inputs: 64, units: 1 },
                LayerSpec::Sigmoid,
            ],
        }
    }

    /// Pushes the input shape through every layer and returns the shape
    /// after each one. Fails on the first layer whose input it cannot accept.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>, ModelError> {
        if self.input.contains(&0) {
            return Err(ModelError::InvalidSpec(format!("input shape {:?} has a zero dimension", self.input)));
        }
        let mut shape = self.input.to_vec();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (index, layer) in self.layers.iter().enumerate() {
            let fail = |reason: String| ModelError::IncompatibleLayer {
                index,
                layer: layer.to_string(),
                reason,
            };
            shape = match *layer {
                LayerSpec::Conv2d {
                    filters,
                    kernel,
                    stride,
                    padding,
                } => {
                    let [_, h, w] = shape[..] else {
                        return Err(fail(format!("needs a [C, H, W] input, got {shape:?}")));
                    };
                    if filters == 0 || kernel == 0 || stride == 0 {
                        return Err(fail("filters, kernel and stride must be positive".into()));
                    }
                    if kernel > h + 2 * padding || kernel > w + 2 * padding {
                        return Err(fail(format!("kernel {kernel} larger than padded input {shape:?}")));
                    }
                    vec![
                        filters,
                        window_out(h, kernel, stride, padding),
                        window_out(w, kernel, stride, padding),
                    ]
                }
                LayerSpec::MaxPool2d { window, stride } => {
                    let [c, h, w] = shape[..] else {
                        return Err(fail(format!("needs a [C, H, W] input, got {shape:?}")));
                    };
                    if window == 0 || stride == 0 {
                        return Err(fail("window and stride must be positive".into()));
                    }
                    if window > h || window > w {
                        return Err(fail(format!("window {window} larger than input {shape:?}")));
                    }
                    vec![c, window_out(h, window, stride, 0), window_out(w, window, stride, 0)]
                }
                LayerSpec::Flatten => vec![shape.iter().product()],
                LayerSpec::Dense { inputs, units } => {
                    if shape.len() != 1 {
                        return Err(fail(format!("needs a flat input, got {shape:?}")));
                    }
                    if shape[0] != inputs {
                        return Err(fail(format!("expects {inputs} inputs but receives {}", shape[0])));
                    }
                    if units == 0 {
                        return Err(fail("units must be positive".into()));
                    }
                    vec![units]
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(fail(format!("rate {rate} outside [0, 1)")));
                    }
                    shape
                }
                LayerSpec::Relu | LayerSpec::Sigmoid => shape,
            };
            shapes.push(shape.clone());
        }
        match (self.layers.last(), shapes.last()) {
            (Some(LayerSpec::Sigmoid), Some(s)) if s == &[1] => Ok(shapes),
            _ => Err(ModelError::InvalidSpec(
                "network must end in a sigmoid over a single unit".into(),
            )),
        }
    }

    /// Canonical text form: one `input` line, then one line per layer.
    pub fn to_canonical_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [c, h, w] = self.input;
        writeln!(f, "input channels={c} height={h} width={w}")?;
        for layer in &self.layers {
            writeln!(f, "{layer}")?;
        }
        Ok(())
    }
}

struct Fields<'a> {
    line: usize,
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Fields<'a> {
    fn parse(line: usize, tokens: &[&'a str]) -> Result<Self, ModelError> {
        let pairs = tokens
            .iter()
            .map(|t| {
                t.split_once('=')
                    .ok_or_else(|| ModelError::InvalidSpec(format!("line {line}: expected key=value, got {t:?}")))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { line, pairs })
    }

    fn get<V: FromStr>(&self, key: &str) -> Result<V, ModelError> {
        let raw = self
            .pairs
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| ModelError::InvalidSpec(format!("line {}: missing {key}", self.line)))?;
        raw.parse()
            .map_err(|_| ModelError::InvalidSpec(format!("line {}: bad value {raw:?} for {key}", self.line)))
    }

    fn expect_keys(&self, keys: &[&str]) -> Result<(), ModelError> {
        if self.pairs.len() != keys.len() || self.pairs.iter().any(|(k, _)| !keys.contains(k)) {
            return Err(ModelError::InvalidSpec(format!(
                "line {}: expected exactly the keys {keys:?}",
                self.line
            )));
        }
        Ok(())
    }
}

impl FromStr for NetworkSpec {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut lines = s.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| ModelError::InvalidSpec("empty network spec".into()))?;
        let tokens: Vec<&str> = first.split_whitespace().collect();
        if tokens.first() != Some(&"input") {
            return Err(ModelError::InvalidSpec("line 1: expected an input line".into()));
        }
        let fields = Fields::parse(1, &tokens[1..])?;
        fields.expect_keys(&["channels", "height", "width"])?;
        let input = [fields.get("channels")?, fields.get("height")?, fields.get("width")?];

        let mut layers = Vec::new();
        for (i, line) in lines {
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let f = Fields::parse(i + 1, &tokens[1..])?;
            let layer = match tokens[0] {
                "conv2d" => {
                    f.expect_keys(&["filters", "kernel", "stride", "padding"])?;
                    LayerSpec::Conv2d {
                        filters: f.get("filters")?,
                        kernel: f.get("kernel")?,
                        stride: f.get("stride")?,
                        padding: f.get("padding")?,
                    }
                }
                "maxpool2d" => {
                    f.expect_keys(&["window", "stride"])?;
                    LayerSpec::MaxPool2d {
                        window: f.get("window")?,
                        stride: f.get("stride")?,
                    }
                }
                "dense" => {
                    f.expect_keys(&["inputs", "units"])?;
                    LayerSpec::Dense {
                        inputs: f.get("inputs")?,
                        units: f.get("units")?,
                    }
                }
                "dropout" => {
                    f.expect_keys(&["rate"])?;
                    LayerSpec::Dropout { rate: f.get("rate")? }
                }
                other => {
                    f.expect_keys(&[])?;
                    match other {
                        "flatten" => LayerSpec::Flatten,
                        "relu" => LayerSpec::Relu,
                        "sigmoid" => LayerSpec::Sigmoid,
                        _ => {
                            return Err(ModelError::InvalidSpec(format!("line {}: unknown layer {other:?}", i + 1)))
                        }
                    }
                }
            };
            layers.push(layer);
        }
        Ok(Self { input, layers })
    }
}
