use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lif::LifConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A network layer. Linear layers flatten whatever they receive.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear {
        /// `[out, in]`
        weight: Tensor,
        bias: Tensor,
    },
    /// Stride-1 convolution with symmetric zero padding.
    Conv2d {
        /// `[out_channels, in_channels, kh, kw]`
        kernel: Tensor,
        bias: Tensor,
        padding: usize,
    },
    Lif(LifConfig),
    /// Global spatial mean, `[C, H, W] → [C]`.
    MeanPoolReadout,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Linear { .. } => "linear",
            Layer::Conv2d { .. } => "conv2d",
            Layer::Lif(_) => "lif",
            Layer::MeanPoolReadout => "mean_pool",
        }
    }

    fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |detail: String| Error::LayerShapeMismatch {
            layer: index,
            detail,
        };
        match self {
            Layer::Linear { weight, bias } => {
                let fan_in: usize = input.iter().product();
                if weight.rank() != 2 || weight.shape()[1] != fan_in {
                    return Err(mismatch(format!(
                        "linear weight {:?} cannot take input {:?}",
                        weight.shape(),
                        input
                    )));
                }
                if bias.shape() != [weight.shape()[0]] {
                    return Err(mismatch(format!("bias {:?}", bias.shape())));
                }
                Ok(vec![weight.shape()[0]])
            }
            Layer::Conv2d {
                kernel,
                bias,
                padding,
            } => {
                if input.len() != 3 || kernel.rank() != 4 || kernel.shape()[1] != input[0] {
                    return Err(mismatch(format!(
                        "conv kernel {:?} cannot take input {:?}",
                        kernel.shape(),
                        input
                    )));
                }
                let (kh, kw) = (kernel.shape()[2], kernel.shape()[3]);
                if input[1] + 2 * padding < kh || input[2] + 2 * padding < kw {
                    return Err(mismatch("kernel larger than padded input".into()));
                }
                if bias.shape() != [kernel.shape()[0]] {
                    return Err(mismatch(format!("bias {:?}", bias.shape())));
                }
                Ok(vec![
                    kernel.shape()[0],
                    input[1] + 2 * padding - kh + 1,
                    input[2] + 2 * padding - kw + 1,
                ])
            }
            Layer::Lif(cfg) => {
                cfg.validate().map_err(|e| mismatch(e.to_string()))?;
                Ok(input.to_vec())
            }
            Layer::MeanPoolReadout => {
                if input.len() != 3 {
                    return Err(mismatch(format!("mean pool needs [C,H,W], got {input:?}")));
                }
                Ok(vec![input[0]])
            }
        }
    }
}

/// Borrowed view of one named parameter.
#[derive(Debug)]
pub struct ParamRef<'a> {
    pub name: String,
    pub tensor: &'a Tensor,
}

/// Ordered layer stack followed by a non-spiking leaky readout membrane.
///
/// The readout potential `ŷ_t` integrates the last layer's output with time
/// constant `readout_tau` and never fires.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    /// Shapes seen by each layer; `shapes[i]` is the input of layer `i`,
    /// `shapes[len]` the output.
    shapes: Vec<Vec<usize>>,
    readout_tau: f64,
    version: u64,
}

impl Model {
    pub fn new(input_shape: &[usize], layers: Vec<Layer>, readout_tau: f64) -> Result<Self> {
        if !(readout_tau >= 1.0) {
            return Err(Error::Config(format!(
                "readout_tau must be >= 1, got {readout_tau}"
            )));
        }
        let mut shapes = vec![input_shape.to_vec()];
        for (i, layer) in layers.iter().enumerate() {
            let next = layer.output_shape(i, shapes.last().unwrap())?;
            shapes.push(next);
        }
        if shapes.last().unwrap().len() != 1 {
            return Err(Error::LayerShapeMismatch {
                layer: layers.len().saturating_sub(1),
                detail: format!("network output must be a class vector, got {:?}", shapes.last()),
            });
        }
        Ok(Self {
            layers,
            input_shape: input_shape.to_vec(),
            shapes,
            readout_tau,
            version: 0,
        })
    }

    /// `Linear → LIF` blocks for each hidden width, then a linear readout.
    pub fn mlp(
        input_shape: &[usize],
        hidden: &[usize],
        classes: usize,
        lif: LifConfig,
        init_gain: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fan_in: usize = input_shape.iter().product();
        let mut layers = Vec::new();
        for &h in hidden {
            layers.push(linear(&mut rng, fan_in, h, init_gain));
            layers.push(Layer::Lif(lif));
            fan_in = h;
        }
        layers.push(linear(&mut rng, fan_in, classes, init_gain));
        Self::new(input_shape, layers, lif.tau)
    }

    /// Two `Conv(3×3, pad 1) → LIF` blocks, one `Linear → LIF` block and a
    /// linear readout.
    pub fn conv(
        input_shape: &[usize],
        channels: [usize; 2],
        dense: usize,
        classes: usize,
        lif: LifConfig,
        init_gain: f64,
        seed: u64,
    ) -> Result<Self> {
        if input_shape.len() != 3 {
            return Err(Error::Config(format!(
                "conv architecture needs [C,H,W] input, got {input_shape:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut c_in = input_shape[0];
        for &c in &channels {
            let fan_in = (c_in * 9) as f64;
            let bound = init_gain / fan_in.sqrt();
            let kernel = uniform(&mut rng, &[c, c_in, 3, 3], bound);
            let bias = uniform(&mut rng, &[c], bound);
            layers.push(Layer::Conv2d {
                kernel,
                bias,
                padding: 1,
            });
            layers.push(Layer::Lif(lif));
            c_in = c;
        }
        let flat = c_in * input_shape[1] * input_shape[2];
        layers.push(linear(&mut rng, flat, dense, init_gain));
        layers.push(Layer::Lif(lif));
        layers.push(linear(&mut rng, dense, classes, init_gain));
        Self::new(input_shape, layers, lif.tau)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layer_input_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().unwrap()[0]
    }

    pub fn readout_tau(&self) -> f64 {
        self.readout_tau
    }

    /// Bumped on every parameter mutation; tapes remember the version they
    /// were recorded against.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Parameters in their canonical flat order (layer order, weight before bias).
    pub fn params(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Linear { weight, bias } => {
                    out.push(ParamRef {
                        name: format!("layers.{i}.weight"),
                        tensor: weight,
                    });
                    out.push(ParamRef {
                        name: format!("layers.{i}.bias"),
                        tensor: bias,
                    });
                }
                Layer::Conv2d { kernel, bias, .. } => {
                    out.push(ParamRef {
                        name: format!("layers.{i}.kernel"),
                        tensor: kernel,
                    });
                    out.push(ParamRef {
                        name: format!("layers.{i}.bias"),
                        tensor: bias,
                    });
                }
                Layer::Lif(_) | Layer::MeanPoolReadout => {}
            }
        }
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params().into_iter().map(|p| p.name).collect()
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.params()
            .into_iter()
            .map(|p| p.tensor.shape().to_vec())
            .collect()
    }

    /// Mutable access in canonical order. Bumps the version.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.version += 1;
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Linear { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                Layer::Conv2d { kernel, bias, .. } => {
                    out.push(kernel);
                    out.push(bias);
                }
                Layer::Lif(_) | Layer::MeanPoolReadout => {}
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for p in self.params() {
            out.extend_from_slice(p.tensor.data());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "flat parameter vector has {} entries, model has {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for t in self.params_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Zeroes every weight and bias.
    pub fn zero_params(&mut self) {
        for t in self.params_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("shape product")
}

fn linear(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, gain: f64) -> Layer {
    let bound = gain / (fan_in as f64).sqrt();
    Layer::Linear {
        weight: uniform(rng, &[fan_out, fan_in], bound),
        bias: uniform(rng, &[fan_out], bound),
    }
}
