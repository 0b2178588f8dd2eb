use super::{LayerSpec, ModelError, NetworkSpec};
use crate::graph::{OpKind, Saved, Tape};
use crate::ops::{self, Mode};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Layer {
    Conv2d {
        weight: usize,
        bias: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Dense {
        weight: usize,
        bias: usize,
    },
    Relu,
    Sigmoid,
    Dropout {
        rate: f64,
    },
    Flatten,
}

/// A built sequential network with its named parameters.
#[derive(Debug, Clone)]
pub struct Network<T: Scalar = f64> {
    spec: NetworkSpec,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    layers: Vec<Layer>,
    mode: Mode,
}

struct Slot {
    name: String,
    shape: Vec<usize>,
    /// Uniform init half-width; zero for biases.
    bound: f64,
}

/// Weights feeding a relu get the He bound, everything else the LeCun bound.
fn init_bound(spec: &NetworkSpec, layer: usize, fan_in: usize) -> f64 {
    let gain = match spec.layers.get(layer + 1) {
        Some(LayerSpec::Relu) => 6.0,
        _ => 3.0,
    };
    (gain / fan_in as f64).sqrt()
}

/// Parameter names and shapes implied by a spec, in storage order.
fn parameter_layout(spec: &NetworkSpec) -> Result<(Vec<Layer>, Vec<Slot>), ModelError> {
    let shapes = spec.shapes()?;
    let mut layers = Vec::with_capacity(spec.layers.len());
    let mut layout = Vec::new();
    let (mut convs, mut denses) = (0, 0);
    for (i, layer) in spec.layers.iter().enumerate() {
        let in_shape: &[usize] = if i == 0 { &spec.input } else { &shapes[i - 1] };
        layers.push(match *layer {
            LayerSpec::Conv2d {
                filters,
                kernel,
                stride,
                padding,
            } => {
                convs += 1;
                let c_in = in_shape[0];
                let weight = layout.len();
                layout.push(Slot {
                    name: format!("conv{convs}.weight"),
                    shape: vec![filters, c_in, kernel, kernel],
                    bound: init_bound(spec, i, c_in * kernel * kernel),
                });
                layout.push(Slot {
                    name: format!("conv{convs}.bias"),
                    shape: vec![filters],
                    bound: 0.0,
                });
                Layer::Conv2d {
                    weight,
                    bias: weight + 1,
                    stride,
                    padding,
                }
            }
            LayerSpec::Dense { inputs, units } => {
                denses += 1;
                let weight = layout.len();
                layout.push(Slot {
                    name: format!("dense{denses}.weight"),
                    shape: vec![units, inputs],
                    bound: init_bound(spec, i, inputs),
                });
                layout.push(Slot {
                    name: format!("dense{denses}.bias"),
                    shape: vec![units],
                    bound: 0.0,
                });
                Layer::Dense { weight, bias: weight + 1 }
            }
            LayerSpec::MaxPool2d { window, stride } => Layer::MaxPool2d { window, stride },
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Sigmoid => Layer::Sigmoid,
            LayerSpec::Dropout { rate } => Layer::Dropout { rate },
        });
    }
    Ok((layers, layout))
}

impl<T: Scalar> Network<T> {
    /// Builds a network with fan-in scaled uniform weights and zero biases.
    ///
    /// Weights feeding a relu use the He bound `sqrt(6 / fan_in)`, all
    /// others the LeCun bound `sqrt(3 / fan_in)`.
    pub fn build(spec: NetworkSpec, seed: u64) -> Result<Self, ModelError> {
        let (layers, layout) = parameter_layout(&spec)?;
        let mut rng = SeededRng::new(seed);
        let mut names = Vec::with_capacity(layout.len());
        let mut params = Vec::with_capacity(layout.len());
        for slot in layout {
            let n: usize = slot.shape.iter().product();
            let data = if slot.bound > 0.0 {
                (0..n).map(|_| T::of(rng.range(-slot.bound, slot.bound))).collect()
            } else {
                vec![T::zero(); n]
            };
            params.push(Tensor::new(slot.shape, data)?);
            names.push(slot.name);
        }
        Ok(Self {
            spec,
            names,
            params,
            layers,
            mode: Mode::Train,
        })
    }

    /// Reassembles a network from named parameters, checking every name and shape.
    pub fn from_parameters(spec: NetworkSpec, named: Vec<(String, Tensor<T>)>) -> Result<Self, ModelError> {
        let (layers, layout) = parameter_layout(&spec)?;
        if named.len() != layout.len() {
            return Err(ModelError::Parameter {
                name: "*".into(),
                reason: format!("spec needs {} parameters, got {}", layout.len(), named.len()),
            });
        }
        let mut names = Vec::with_capacity(named.len());
        let mut params = Vec::with_capacity(named.len());
        for ((name, tensor), slot) in named.into_iter().zip(layout) {
            if name != slot.name || tensor.shape() != slot.shape.as_slice() {
                return Err(ModelError::Parameter {
                    name,
                    reason: format!("expected {} with shape {:?}, got shape {:?}", slot.name, slot.shape, tensor.shape()),
                });
            }
            names.push(name);
            params.push(tensor);
        }
        Ok(Self {
            spec,
            names,
            params,
            layers,
            mode: Mode::Eval,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn parameters(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn parameter_names(&self) -> &[String] {
        &self.names
    }

    /// Parameter tensors in storage order, for optimizers and gradient checks.
    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            layers: self.layers.clone(),
            mode: self.mode,
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(), ModelError> {
        if input.shape() != self.spec.input {
            return Err(ModelError::InputShape {
                expected: self.spec.input.to_vec(),
                actual: input.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn run(&self, input: &Tensor<T>, mode: Mode, rng: &mut SeededRng, mut tape: Option<&mut Tape<T>>) -> Result<Tensor<T>, ModelError> {
        self.check_input(input)?;
        let mut x = input.clone();
        x.clear_grad();
        for layer in &self.layers {
            let p = &self.params;
            x = match *layer {
                Layer::Conv2d {
                    weight,
                    bias,
                    stride,
                    padding,
                } => {
                    let y = ops::conv2d(&x, &p[weight], &p[bias], stride, padding)?;
                    if let Some(t) = tape.as_deref_mut() {
                        t.record(OpKind::Conv2d { stride, padding }, vec![weight, bias], Saved::Input(x));
                    }
                    y
                }
                Layer::Dense { weight, bias } => {
                    let y = ops::dense(&x, &p[weight], &p[bias])?;
                    if let Some(t) = tape.as_deref_mut() {
                        t.record(OpKind::Dense, vec![weight, bias], Saved::Input(x));
                    }
                    y
                }
                Layer::MaxPool2d { window, stride } => {
                    let (y, argmax) = ops::maxpool2d(&x, window, stride)?;
                    if let Some(t) = tape.as_deref_mut() {
                        t.record(OpKind::MaxPool2d, vec![], Saved::Argmax { input_len: x.len(), argmax });
                    }
                    y
                }
                Layer::Relu => {
                    let y = ops::relu(&x);
                    if let Some(t) = tape.as_deref_mut() {
                        t.record(OpKind::Relu, vec![], Saved::Input(x));
                    }
                    y
                }
                Layer::Sigmoid => {
                    let y = ops::sigmoid(&x);
                    if let Some(t) = tape.as_deref_mut() {
                        t.record(OpKind::Sigmoid, vec![], Saved::Output(y.clone()));
                    }
                    y
                }
                Layer::Dropout { rate } => {
                    let (y, mask) = ops::dropout(&x, rate, mode, rng)?;
                    if let Some(t) = tape.as_deref_mut() {
                        t.record(OpKind::Dropout, vec![], Saved::Mask(mask));
                    }
                    y
                }
                Layer::Flatten => {
                    let shape = x.shape().to_vec();
                    let n = x.len();
                    if let Some(t) = tape.as_deref_mut() {
                        t.record(OpKind::Flatten, vec![], Saved::Shape(shape));
                    }
                    x.reshape(vec![n])?
                }
            };
        }
        Ok(x)
    }

    /// Forward pass in the network's current mode, recorded for backward.
    /// `rng` drives dropout in train mode.
    pub fn forward(&self, input: &Tensor<T>, rng: &mut SeededRng) -> Result<Tape<T>, ModelError> {
        let mut tape = Tape::new();
        let out = self.run(input, self.mode, rng, Some(&mut tape))?;
        tape.finish(out);
        Ok(tape)
    }

    /// Eval-mode forward pass without recording.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        // eval-mode dropout never draws
        let mut rng = SeededRng::new(0);
        self.run(input, Mode::Eval, &mut rng, None)
    }

    /// Contamination score in (0, 1) for one `[3, H, W]` image.
    ///
    /// Always evaluated with eval semantics, so the result is a pure
    /// function of the parameters and the image. A sigmoid that rounds to
    /// exactly 0 or 1 is nudged to the nearest representable value inside
    /// the interval.
    pub fn predict(&self, image: &Tensor<T>) -> Result<T, ModelError> {
        let out = self.infer(image)?;
        let lo = T::min_positive_value();
        let hi = T::one() - T::epsilon() / T::of(2.0);
        Ok(out.data()[0].max(lo).min(hi))
    }

    /// Back-propagates a recorded tape into this network's parameter grads.
    pub fn backward(&mut self, tape: Tape<T>) -> Result<Vec<T>, ModelError> {
        Ok(tape.backward(&mut self.params)?)
    }

    /// Back-propagates binary cross-entropy of the tape output against `label`.
    pub fn backward_bce(&mut self, tape: Tape<T>, label: T, scale: T) -> Result<Vec<T>, ModelError> {
        Ok(tape.backward_bce(&mut self.params, label, scale)?)
    }
}
