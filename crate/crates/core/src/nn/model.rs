//! Small UNet-style encoder/decoder mapping a grayscale image to a
//! two-channel offset field of the same spatial size.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use super::tape::{NodeId, Tape};
use super::tensor::{Scalar, Tensor4};
use crate::annot::ImageGrid;
use crate::error::{Error, Result};
use crate::field::VectorField;

/// Network layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Channel width of each encoder stage; the decoder mirrors them. Every
    /// stage after the first starts with a 2x downsampling.
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub skip: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 64],
            kernel: 3,
            skip: true,
        }
    }
}

impl ModelConfig {
    pub fn stages(&self) -> usize {
        self.widths.len()
    }

    /// Smallest accepted input side, `2^stages`.
    pub fn min_input(&self) -> usize {
        1 << self.stages()
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config(format!(
                "model needs at least one stage of positive width, got {:?}",
                self.widths
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel size must be odd, got {}",
                self.kernel
            )));
        }
        if self.stages() > 16 {
            return Err(Error::Config("at most 16 stages are supported".into()));
        }
        Ok(())
    }

    /// Names and shapes of every parameter, in canonical order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let k = self.kernel;
        let mut out = Vec::new();
        let mut conv = |name: String, cin: usize, cout: usize, k: usize| {
            out.push((format!("{name}.weight"), vec![cout, cin, k, k]));
            out.push((format!("{name}.bias"), vec![cout]));
        };
        let mut cin = 1;
        for (s, &w) in self.widths.iter().enumerate() {
            conv(format!("enc{s}.conv1"), cin, w, k);
            conv(format!("enc{s}.conv2"), w, w, k);
            cin = w;
        }
        for s in (0..self.stages() - 1).rev() {
            let w = self.widths[s];
            let from_below = self.widths[s + 1];
            let cin = if self.skip {
                from_below + w
            } else {
                from_below
            };
            conv(format!("dec{s}.conv1"), cin, w, k);
            conv(format!("dec{s}.conv2"), w, w, k);
        }
        conv("head".into(), self.widths[0], 2, 1);
        out
    }
}

/// A named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Param<T> {
    fn as_tensor(&self) -> Tensor4<T> {
        let shape = match self.dims.as_slice() {
            [o] => [1, *o, 1, 1],
            [a, b, c, d] => [*a, *b, *c, *d],
            _ => unreachable!("parameters are rank 1 or 4"),
        };
        Tensor4::new(shape, self.data.clone()).unwrap()
    }
}

/// All trainable tensors of a model, in the order given by
/// [`ModelConfig::layout`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub params: Vec<Param<T>>,
}

impl<T: Scalar> ModelParams<T> {
    /// Kaiming-uniform kernels (fan-in), zero biases, and an all-zero output
    /// head so the untrained model predicts the zero field.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = config
            .layout()
            .into_iter()
            .map(|(name, dims)| {
                let len: usize = dims.iter().product();
                let data = if dims.len() == 4 && !name.starts_with("head") {
                    let fan_in = (dims[1] * dims[2] * dims[3]) as f64;
                    let bound = Float::sqrt(6.0 / fan_in);
                    (0..len)
                        .map(|_| T::from_f64(rng.random_range(-bound..bound)))
                        .collect()
                } else {
                    vec![T::zero(); len]
                };
                Param { name, dims, data }
            })
            .collect();
        Ok(Self { params })
    }

    /// Checks that names and shapes match `config`.
    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        let layout = config.layout();
        if layout.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "config expects {} parameter tensors, found {}",
                layout.len(),
                self.params.len()
            )));
        }
        for ((name, dims), p) in layout.iter().zip(&self.params) {
            if *name != p.name || *dims != p.dims {
                return Err(Error::Shape(format!(
                    "expected {name} {dims:?}, found {} {:?}",
                    p.name, p.dims
                )));
            }
            if p.data.len() != dims.iter().product::<usize>() {
                return Err(Error::Shape(format!(
                    "{name} has the wrong number of values"
                )));
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    dims: p.dims.clone(),
                    data: vec![T::zero(); p.data.len()],
                })
                .collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    dims: p.dims.clone(),
                    data: p.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.data.iter().all(|v| v.is_finite()))
    }
}

/// Node handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardNodes {
    /// One node per parameter, aligned with [`ModelParams::params`].
    pub params: Vec<NodeId>,
    pub input: NodeId,
    /// Decoder output just before the 1x1 head.
    pub features: NodeId,
    /// `(1, 2, H, W)` offsets.
    pub field: NodeId,
}

/// Converts an image into a `(1, 1, H, W)` tensor.
pub fn image_tensor<T: Scalar>(image: &ImageGrid) -> Tensor4<T> {
    let data = image
        .pixels()
        .iter()
        .map(|&v| T::from_f64(v as f64))
        .collect();
    Tensor4::new([1, 1, image.height(), image.width()], data).unwrap()
}

/// Records the network on `tape` for an input tensor of shape `(n, 1, H, W)`.
pub fn forward_on_tape<T: Scalar>(
    config: &ModelConfig,
    params: &ModelParams<T>,
    tape: &mut Tape<T>,
    input: Tensor4<T>,
) -> Result<ForwardNodes> {
    params.check(config)?;
    let [_, c, h, w] = input.shape();
    if c != 1 {
        return Err(Error::Shape(format!("expected 1 input channel, got {c}")));
    }
    let min = config.min_input();
    if h < min || w < min {
        return Err(Error::Shape(format!(
            "{w}x{h} input is too small for {} stages (need at least {min}x{min})",
            config.stages()
        )));
    }
    let ids: Vec<NodeId> = params
        .params
        .iter()
        .map(|p| tape.leaf(p.as_tensor(), true))
        .collect();
    let input_id = tape.leaf(input, false);
    let pad = config.kernel / 2;
    let mut next = 0;
    let mut conv_relu = |tape: &mut Tape<T>, x: NodeId, relu: bool| -> Result<NodeId> {
        let y = tape.conv2d(x, ids[next], Some(ids[next + 1]), pad)?;
        next += 2;
        Ok(if relu { tape.relu(y) } else { y })
    };

    let mut skips = Vec::with_capacity(config.stages());
    let mut x = input_id;
    for s in 0..config.stages() {
        if s > 0 {
            let even = tape.pad_even(x);
            x = tape.maxpool2(even)?;
        }
        x = conv_relu(tape, x, true)?;
        x = conv_relu(tape, x, true)?;
        skips.push(x);
    }
    for s in (0..config.stages() - 1).rev() {
        let skip = skips[s];
        let [_, _, sh, sw] = tape.value(skip).shape();
        let up = tape.upsample2(x);
        x = tape.crop(up, sh, sw)?;
        if config.skip {
            x = tape.concat(x, skip)?;
        }
        x = conv_relu(tape, x, true)?;
        x = conv_relu(tape, x, true)?;
    }
    let features = x;
    // The 1x1 head has no padding.
    let field = tape.conv2d(features, ids[next], Some(ids[next + 1]), 0)?;
    Ok(ForwardNodes {
        params: ids,
        input: input_id,
        features,
        field,
    })
}

/// Predicts the offset field for `image`.
pub fn predict_field<T: Scalar>(
    config: &ModelConfig,
    params: &ModelParams<T>,
    image: &ImageGrid,
) -> Result<VectorField> {
    let mut tape = Tape::new();
    let nodes = forward_on_tape(config, params, &mut tape, image_tensor(image))?;
    let out = tape.value(nodes.field);
    let to_f32 = |s: &[T]| s.iter().map(|v| v.as_f64() as f32).collect::<Vec<f32>>();
    VectorField::new(
        image.width(),
        image.height(),
        to_f32(out.plane(0, 0)),
        to_f32(out.plane(0, 1)),
    )
}
