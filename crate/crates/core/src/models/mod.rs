//! Encoder, degrader and generator networks.
//!
//! * Encoder: five 5×5 convolutions (no normalization) with leaky-rectifier
//!   activations, then global average pooling to a `c_repr` vector.
//! * Degrader: conditional residual blocks at HR resolution, ending in a
//!   stride-`s` convolution that emits the pseudo-LR image.
//! * Generator: the representation is compressed by a two-layer MLP, then
//!   conditional blocks on LR features, nearest-neighbour upsampling and a
//!   final convolution, plus a global upsampled-input skip.
//!
//! Conditional blocks apply a per-channel affine modulation predicted from
//! the representation. The heads start at zero weight with scale bias 1 and
//! shift bias 0, so every block is unmodulated at initialization.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Result};
use crate::image::Image;
use crate::rng;
use crate::tensor::{Bindings, Graph, ParamSet, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub c_repr: usize,
    /// Output channels of the first four encoder convolutions.
    pub encoder_widths: Vec<usize>,
    /// Strides of the five encoder convolutions.
    pub encoder_strides: Vec<usize>,
    pub blocks: usize,
    pub degrader_width: usize,
    pub generator_width: usize,
    pub mlp_width: usize,
    pub scale: usize,
    /// Second encoder head emitting a log-variance (KL variant).
    pub logvar_head: bool,
    pub leaky_slope: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            c_repr: 16,
            encoder_widths: vec![32, 32, 64, 64],
            encoder_strides: vec![1, 2, 1, 2, 1],
            blocks: 4,
            degrader_width: 32,
            generator_width: 32,
            mlp_width: 64,
            scale: 2,
            logvar_head: false,
            leaky_slope: 0.1,
        }
    }
}

pub const ENCODER_KERNEL: usize = 5;
pub const BLOCK_KERNEL: usize = 3;
pub const MIN_ENCODER_INPUT: usize = 16;

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_widths.len() != 4 || self.encoder_strides.len() != 5 {
            return Err(param_err!("encoder needs 4 hidden widths and 5 strides"));
        }
        let all = [self.c_repr, self.degrader_width, self.generator_width, self.mlp_width];
        if all.contains(&0) || self.encoder_widths.contains(&0) || self.encoder_strides.contains(&0) {
            return Err(param_err!("architecture sizes must be positive"));
        }
        if !(1..=4).contains(&self.scale) {
            return Err(param_err!("scale must be in 1..=4, got {}", self.scale));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(param_err!("leaky slope must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Every parameter name and shape, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let k = ENCODER_KERNEL;
        let bk = BLOCK_KERNEL;
        let mut out = Vec::new();
        let conv = |out: &mut Vec<(String, Vec<usize>)>, name: String, cin: usize, cout: usize, k: usize| {
            out.push((format!("{name}.w"), vec![cout, cin, k, k]));
            out.push((format!("{name}.b"), vec![cout]));
        };
        let mut cin = 3;
        for (i, &w) in self.encoder_widths.iter().chain(std::iter::once(&self.c_repr)).enumerate() {
            conv(&mut out, format!("enc.conv{i}"), cin, w, k);
            cin = w;
        }
        if self.logvar_head {
            conv(&mut out, "enc.logvar".into(), self.encoder_widths[3], self.c_repr, k);
        }
        let film = |out: &mut Vec<(String, Vec<usize>)>, name: &str, cond: usize, width: usize| {
            for head in ["gamma", "beta"] {
                out.push((format!("{name}.{head}.w"), vec![width, cond]));
                out.push((format!("{name}.{head}.b"), vec![width]));
            }
        };

        let wd = self.degrader_width;
        conv(&mut out, "deg.head".into(), 3, wd, bk);
        for i in 0..self.blocks {
            conv(&mut out, format!("deg.block{i}.conv"), wd, wd, bk);
            film(&mut out, &format!("deg.block{i}"), self.c_repr, wd);
        }
        conv(&mut out, "deg.tail".into(), wd, 3, bk);

        let wg = self.generator_width;
        let m = self.mlp_width;
        out.push(("gen.mlp0.w".into(), vec![m, self.c_repr]));
        out.push(("gen.mlp0.b".into(), vec![m]));
        out.push(("gen.mlp1.w".into(), vec![m, m]));
        out.push(("gen.mlp1.b".into(), vec![m]));
        conv(&mut out, "gen.head".into(), 3, wg, bk);
        for i in 0..self.blocks {
            conv(&mut out, format!("gen.block{i}.conv"), wg, wg, bk);
            film(&mut out, &format!("gen.block{i}"), m, wg);
        }
        conv(&mut out, "gen.tail".into(), wg, 3, bk);
        out
    }
}

/// Architecture plus its parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub params: ParamSet,
}

/// Which network a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Encoder,
    Degrader,
    Generator,
}

impl Part {
    pub fn of(name: &str) -> Option<Part> {
        match name.split('.').next()? {
            "enc" => Some(Part::Encoder),
            "deg" => Some(Part::Degrader),
            "gen" => Some(Part::Generator),
            _ => None,
        }
    }
}

impl ModelParams {
    /// Seeded init: weights `N(0, 2/fan_in)`, biases 0, modulation heads at
    /// identity (zero weights, scale bias 1). The generator's last conv starts
    /// at zero so the initial output is the upsampled input.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut params = ParamSet::new();
        for (idx, (name, shape)) in arch.param_shapes().into_iter().enumerate() {
            let tensor = if name.ends_with(".gamma.b") {
                Tensor::full(&shape, 1.0)
            } else if name.ends_with(".b") || name.contains(".gamma.") || name.contains(".beta.") || name == "gen.tail.w" {
                Tensor::zeros(&shape)
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                let mut r = rng::stream(seed, &[idx as u64]);
                Tensor::from_fn(&shape, |_| normal.sample(&mut r))
            };
            params.insert(name, tensor)?;
        }
        Ok(Self { arch, params })
    }

    /// Checks that every tensor exists with the shape `arch` prescribes.
    pub fn check_layout(&self) -> Result<()> {
        let shapes = self.arch.param_shapes();
        if shapes.len() != self.params.len() {
            return Err(dim_err!(
                "architecture expects {} tensors, found {}",
                shapes.len(),
                self.params.len()
            ));
        }
        for ((name, shape), p) in shapes.iter().zip(self.params.iter()) {
            if &p.name != name || p.value.shape() != shape.as_slice() {
                return Err(dim_err!(
                    "expected `{name}` {shape:?}, found `{}` {:?}",
                    p.name,
                    p.value.shape()
                ));
            }
        }
        Ok(())
    }

    /// Representations for a batch of LR images, `[N, c_repr]` as rows.
    pub fn encode_images(&self, lr: &[Image]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let b = self.params.bind_frozen(&mut g)?;
        let x = g.constant(Image::batch(lr)?)?;
        let enc = encode(&mut g, &b, &self.arch, x)?;
        let c = self.arch.c_repr;
        Ok(g.value(enc.f).data().chunks(c).map(<[f64]>::to_vec).collect())
    }

    /// Super-resolves each `lr[i]` conditioned on `reprs[i]`.
    pub fn super_resolve(&self, lr: &[Image], reprs: &[Vec<f64>]) -> Result<Vec<Image>> {
        if lr.len() != reprs.len() {
            return Err(dim_err!("{} images but {} representations", lr.len(), reprs.len()));
        }
        let mut g = Graph::new();
        let b = self.params.bind_frozen(&mut g)?;
        let x = g.constant(Image::batch(lr)?)?;
        let f = g.constant(Tensor::new(vec![reprs.len(), self.arch.c_repr], reprs.concat())?)?;
        let sr = generate(&mut g, &b, &self.arch, x, f)?;
        Image::unbatch(g.value(sr))
    }

    /// Encoder then generator on the same images.
    pub fn blind_super_resolve(&self, lr: &[Image]) -> Result<Vec<Image>> {
        let reprs = self.encode_images(lr)?;
        self.super_resolve(lr, &reprs)
    }

    /// Pseudo-LR images from HR inputs and representations.
    pub fn reproduce_lr(&self, hr: &[Image], reprs: &[Vec<f64>]) -> Result<Vec<Image>> {
        let mut g = Graph::new();
        let b = self.params.bind_frozen(&mut g)?;
        let x = g.constant(Image::batch(hr)?)?;
        let f = g.constant(Tensor::new(vec![reprs.len(), self.arch.c_repr], reprs.concat())?)?;
        let out = degrade_net(&mut g, &b, &self.arch, x, f)?;
        Image::unbatch(g.value(out))
    }
}

/// Encoder outputs: the representation and, for the KL variant, its log-variance.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub f: Var,
    pub logvar: Option<Var>,
}

fn conv_layer(g: &mut Graph, b: &Bindings, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
    g.conv2d_bias(x, b.get(&format!("{name}.w"))?, b.get(&format!("{name}.b"))?, stride, pad)
}

fn dense(g: &mut Graph, b: &Bindings, name: &str, x: Var) -> Result<Var> {
    g.linear(x, b.get(&format!("{name}.w"))?, b.get(&format!("{name}.b"))?)
}

fn check_images(g: &Graph, x: Var, what: &str) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = g.value(x).dims4()?;
    if c != 3 {
        return Err(dim_err!("{what}: expected 3 channels, got {c}"));
    }
    Ok((n, h, w))
}

fn check_cond(g: &Graph, f: Var, n: usize, c_repr: usize) -> Result<()> {
    if g.value(f).shape() != [n, c_repr] {
        return Err(dim_err!(
            "representation batch {:?} does not match [{n}, {c_repr}]",
            g.value(f).shape()
        ));
    }
    Ok(())
}

pub fn encode(g: &mut Graph, b: &Bindings, arch: &Architecture, lr: Var) -> Result<Encoded> {
    let (_, h, w) = check_images(g, lr, "encoder")?;
    if h < MIN_ENCODER_INPUT || w < MIN_ENCODER_INPUT {
        return Err(dim_err!("encoder input {h}x{w} is below {MIN_ENCODER_INPUT}x{MIN_ENCODER_INPUT}"));
    }
    let pad = ENCODER_KERNEL / 2;
    let mut x = g.add_scalar(lr, -0.5)?;
    for i in 0..4 {
        x = conv_layer(g, b, &format!("enc.conv{i}"), x, arch.encoder_strides[i], pad)?;
        x = g.leaky_relu(x, arch.leaky_slope)?;
    }
    let hidden = x;
    let y = conv_layer(g, b, "enc.conv4", hidden, arch.encoder_strides[4], pad)?;
    let f = g.global_avg_pool(y)?;
    let logvar = if arch.logvar_head {
        let lv = conv_layer(g, b, "enc.logvar", hidden, arch.encoder_strides[4], pad)?;
        Some(g.global_avg_pool(lv)?)
    } else {
        None
    };
    Ok(Encoded { f, logvar })
}

/// `x + lrelu(film(conv(x), γ(cond), β(cond)))`.
fn conditional_block(g: &mut Graph, b: &Bindings, name: &str, x: Var, cond: Var, slope: f64) -> Result<Var> {
    let h = conv_layer(g, b, &format!("{name}.conv"), x, 1, BLOCK_KERNEL / 2)?;
    let gamma = dense(g, b, &format!("{name}.gamma"), cond)?;
    let beta = dense(g, b, &format!("{name}.beta"), cond)?;
    let h = g.film(h, gamma, beta)?;
    let h = g.leaky_relu(h, slope)?;
    g.add(x, h)
}

pub fn degrade_net(g: &mut Graph, b: &Bindings, arch: &Architecture, hr: Var, f: Var) -> Result<Var> {
    let (n, h, w) = check_images(g, hr, "degrader")?;
    check_cond(g, f, n, arch.c_repr)?;
    let s = arch.scale;
    if h % s != 0 || w % s != 0 {
        return Err(dim_err!("degrader input {h}x{w} is not divisible by scale {s}"));
    }
    let pad = BLOCK_KERNEL / 2;
    let x = g.add_scalar(hr, -0.5)?;
    let mut x = conv_layer(g, b, "deg.head", x, 1, pad)?;
    for i in 0..arch.blocks {
        x = conditional_block(g, b, &format!("deg.block{i}"), x, f, arch.leaky_slope)?;
    }
    let y = conv_layer(g, b, "deg.tail", x, s, pad)?;
    g.add_scalar(y, 0.5)
}

pub fn generate(g: &mut Graph, b: &Bindings, arch: &Architecture, lr: Var, f: Var) -> Result<Var> {
    let (n, ..) = check_images(g, lr, "generator")?;
    check_cond(g, f, n, arch.c_repr)?;
    let pad = BLOCK_KERNEL / 2;
    let c = dense(g, b, "gen.mlp0", f)?;
    let c = g.leaky_relu(c, arch.leaky_slope)?;
    let cond = dense(g, b, "gen.mlp1", c)?;

    let x = g.add_scalar(lr, -0.5)?;
    let mut x = conv_layer(g, b, "gen.head", x, 1, pad)?;
    for i in 0..arch.blocks {
        x = conditional_block(g, b, &format!("gen.block{i}"), x, cond, arch.leaky_slope)?;
    }
    let up = g.nn_upsample(x, arch.scale)?;
    let residual = conv_layer(g, b, "gen.tail", up, 1, pad)?;
    let skip = g.nn_upsample(lr, arch.scale)?;
    g.add(residual, skip)
}
