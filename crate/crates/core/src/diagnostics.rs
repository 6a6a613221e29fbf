//! Self-verification: finite-difference gradient checks for every graph
//! operation and loss, plus closed-form loss identities.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::losses::{loss_ed, loss_kl, loss_rd, loss_sr, modulation_coefficient};
use crate::models::{degrade_net, encode, generate, Architecture, ModelParams};
use crate::rng;
use crate::tensor::{grad_check, Graph, Tensor, Var};

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    /// Worst relative error for gradient checks, absolute error otherwise.
    pub error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error < self.tolerance
    }
}

/// Values in `±[0.1, 1]`, away from the kinks of |·| and leaky rectifiers.
fn rand_tensor(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m: f64 = r.random_range(0.1..1.0);
        if r.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Contracts an arbitrary output with fixed random weights so every output
/// element contributes to the checked scalar.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let shape = g.value(y).shape().to_vec();
    let w = rand_tensor(&mut rng::stream(seed, &[0xfeed]), &shape);
    let w = g.constant(w)?;
    let p = g.mul(y, w)?;
    g.sum(p)
}

type Build = Box<dyn Fn(&mut Graph, Var) -> Result<Var>>;

fn case(name: &str, x: Tensor, f: Build, out: &mut Vec<(String, Tensor, Build)>) {
    out.push((name.to_string(), x, f));
}

fn op_cases(seed: u64) -> Vec<(String, Tensor, Build)> {
    let mut r = rng::stream(seed, &[1]);
    let mut v = Vec::new();
    let img = rand_tensor(&mut r, &[2, 3, 6, 6]);
    let weight = rand_tensor(&mut r, &[4, 3, 3, 3]);
    let bias = rand_tensor(&mut r, &[4]);

    let (w, b) = (weight.clone(), bias.clone());
    case("conv2d/input", img.clone(), Box::new(move |g, x| {
        let w = g.constant(w.clone())?;
        let b = g.constant(b.clone())?;
        let y = g.conv2d_bias(x, w, b, 1, 1)?;
        project(g, y, 1)
    }), &mut v);
    let i2 = img.clone();
    case("conv2d/weight stride 2", weight.clone(), Box::new(move |g, w| {
        let x = g.constant(i2.clone())?;
        let y = g.conv2d(x, w, 2, 0)?;
        project(g, y, 2)
    }), &mut v);
    let (i3, w3) = (img.clone(), weight.clone());
    case("conv2d/bias", bias.clone(), Box::new(move |g, b| {
        let x = g.constant(i3.clone())?;
        let w = g.constant(w3.clone())?;
        let y = g.conv2d_bias(x, w, b, 2, 1)?;
        project(g, y, 3)
    }), &mut v);
    let cb = rand_tensor(&mut r, &[3]);
    case("channel_bias/input", img.clone(), Box::new(move |g, x| {
        let b = g.constant(cb.clone())?;
        let y = g.channel_bias(x, b)?;
        project(g, y, 4)
    }), &mut v);
    let i5 = img.clone();
    case("channel_bias/bias", rand_tensor(&mut r, &[3]), Box::new(move |g, b| {
        let x = g.constant(i5.clone())?;
        let y = g.channel_bias(x, b)?;
        project(g, y, 5)
    }), &mut v);

    let feats = rand_tensor(&mut r, &[3, 5]);
    let lw = rand_tensor(&mut r, &[4, 5]);
    let lb = rand_tensor(&mut r, &[4]);
    let (w6, b6) = (lw.clone(), lb.clone());
    case("linear/input", feats.clone(), Box::new(move |g, x| {
        let w = g.constant(w6.clone())?;
        let b = g.constant(b6.clone())?;
        let y = g.linear(x, w, b)?;
        project(g, y, 6)
    }), &mut v);
    let (f7, b7) = (feats.clone(), lb.clone());
    case("linear/weight", lw.clone(), Box::new(move |g, w| {
        let x = g.constant(f7.clone())?;
        let b = g.constant(b7.clone())?;
        let y = g.linear(x, w, b)?;
        project(g, y, 7)
    }), &mut v);
    let (f8, w8) = (feats.clone(), lw.clone());
    case("linear/bias", lb.clone(), Box::new(move |g, b| {
        let x = g.constant(f8.clone())?;
        let w = g.constant(w8.clone())?;
        let y = g.linear(x, w, b)?;
        project(g, y, 8)
    }), &mut v);

    let other = rand_tensor(&mut r, &[2, 3, 6, 6]);
    let o = other.clone();
    case("add", img.clone(), Box::new(move |g, x| {
        let c = g.constant(o.clone())?;
        let y = g.add(c, x)?;
        project(g, y, 9)
    }), &mut v);
    let o = other.clone();
    case("sub", img.clone(), Box::new(move |g, x| {
        let c = g.constant(o.clone())?;
        let y = g.sub(c, x)?;
        project(g, y, 10)
    }), &mut v);
    let o = other.clone();
    case("mul", img.clone(), Box::new(move |g, x| {
        let c = g.constant(o.clone())?;
        let y = g.mul(x, c)?;
        project(g, y, 11)
    }), &mut v);
    let o = other.clone();
    case("mul/scalar broadcast", Tensor::scalar(0.7), Box::new(move |g, s| {
        let c = g.constant(o.clone())?;
        let y = g.mul(c, s)?;
        project(g, y, 12)
    }), &mut v);
    case("scale", img.clone(), Box::new(|g, x| {
        let y = g.scale(x, -1.7)?;
        project(g, y, 13)
    }), &mut v);
    case("add_scalar", img.clone(), Box::new(|g, x| {
        let y = g.add_scalar(x, 0.3)?;
        project(g, y, 14)
    }), &mut v);
    case("leaky_relu", img.clone(), Box::new(|g, x| {
        let y = g.leaky_relu(x, 0.1)?;
        project(g, y, 15)
    }), &mut v);
    case("exp", img.clone(), Box::new(|g, x| {
        let y = g.exp(x)?;
        project(g, y, 16)
    }), &mut v);
    case("sum", img.clone(), Box::new(|g, x| {
        let y = g.exp(x)?;
        g.sum(y)
    }), &mut v);
    case("mean", img.clone(), Box::new(|g, x| {
        let y = g.exp(x)?;
        g.mean(y)
    }), &mut v);
    case("global_avg_pool", img.clone(), Box::new(|g, x| {
        let y = g.global_avg_pool(x)?;
        project(g, y, 17)
    }), &mut v);
    let o = other.clone();
    case("l1_mean", img.clone(), Box::new(move |g, x| {
        let c = g.constant(o.clone())?;
        g.l1_mean(x, c)
    }), &mut v);
    let o = other.clone();
    case("l1_per_sample", img.clone(), Box::new(move |g, x| {
        let c = g.constant(o.clone())?;
        let y = g.l1_per_sample(c, x)?;
        project(g, y, 18)
    }), &mut v);
    let pts = rand_tensor(&mut r, &[4, 3]);
    case("pairwise_l2/self", feats.clone(), Box::new(|g, x| {
        let y = g.pairwise_l2(x, x)?;
        project(g, y, 19)
    }), &mut v);
    case("pairwise_l2/cross", feats.clone(), Box::new(move |g, x| {
        let t = g.constant(Tensor::from_fn(&[4, 5], |i| pts.data()[i % 12] * 2.0))?;
        let y = g.pairwise_l2(x, t)?;
        project(g, y, 20)
    }), &mut v);
    case("decimate", img.clone(), Box::new(|g, x| {
        let y = g.decimate(x, 2)?;
        project(g, y, 21)
    }), &mut v);
    case("nn_upsample", img.clone(), Box::new(|g, x| {
        let y = g.nn_upsample(x, 2)?;
        project(g, y, 22)
    }), &mut v);

    let gamma = rand_tensor(&mut r, &[2, 3]);
    let beta = rand_tensor(&mut r, &[2, 3]);
    let (g1, b1) = (gamma.clone(), beta.clone());
    case("film/input", img.clone(), Box::new(move |g, x| {
        let ga = g.constant(g1.clone())?;
        let be = g.constant(b1.clone())?;
        let y = g.film(x, ga, be)?;
        project(g, y, 23)
    }), &mut v);
    let (i9, b2) = (img.clone(), beta.clone());
    case("film/gamma", gamma.clone(), Box::new(move |g, ga| {
        let x = g.constant(i9.clone())?;
        let be = g.constant(b2.clone())?;
        let y = g.film(x, ga, be)?;
        project(g, y, 24)
    }), &mut v);
    let (i10, g2) = (img.clone(), gamma.clone());
    case("film/beta", beta, Box::new(move |g, be| {
        let x = g.constant(i10.clone())?;
        let ga = g.constant(g2.clone())?;
        let y = g.film(x, ga, be)?;
        project(g, y, 25)
    }), &mut v);
    v
}

fn loss_cases(seed: u64) -> Vec<(String, Tensor, Build)> {
    let mut r = rng::stream(seed, &[2]);
    let mut v = Vec::new();
    let lr_true = rand_tensor(&mut r, &[2, 3, 4, 4]);
    let lr_pred = rand_tensor(&mut r, &[2, 3, 4, 4]);
    case("loss_rd", lr_pred, Box::new(move |g, x| {
        let t = g.constant(lr_true.clone())?;
        loss_rd(g, t, x)
    }), &mut v);
    let f = rand_tensor(&mut r, &[4, 3]);
    let t = rand_tensor(&mut r, &[6, 3]);
    case("loss_ed", f, Box::new(move |g, x| {
        let t = g.constant(t.clone())?;
        loss_ed(g, x, t)
    }), &mut v);
    let sr = rand_tensor(&mut r, &[2, 3, 8, 8]);
    let hr = rand_tensor(&mut r, &[2, 3, 8, 8]);
    case("loss_sr", sr, Box::new(move |g, x| {
        let h = g.constant(hr.clone())?;
        loss_sr(g, x, h, &[1.6, 1.1])
    }), &mut v);
    let mu = rand_tensor(&mut r, &[3, 4]);
    let lv = rand_tensor(&mut r, &[3, 4]);
    let l1 = lv.clone();
    case("loss_kl/mu", mu.clone(), Box::new(move |g, x| {
        let lv = g.constant(l1.clone())?;
        loss_kl(g, x, lv)
    }), &mut v);
    case("loss_kl/logvar", lv, Box::new(move |g, x| {
        let m = g.constant(mu.clone())?;
        loss_kl(g, m, x)
    }), &mut v);
    v
}

fn tiny_arch() -> Architecture {
    Architecture {
        c_repr: 3,
        encoder_widths: vec![2, 2, 3, 3],
        blocks: 1,
        degrader_width: 3,
        generator_width: 3,
        mlp_width: 4,
        ..Architecture::default()
    }
}

/// Networks whose trunk weights are randomized, so the conditioning path is live.
fn live_model(seed: u64) -> Result<ModelParams> {
    let mut m = ModelParams::init(tiny_arch(), seed)?;
    let mut r = rng::stream(seed, &[3]);
    for p in m.params.iter_mut() {
        if p.name.contains(".gamma.") || p.name.contains(".beta.") {
            let t = rand_tensor(&mut r, p.value.shape());
            p.value = Tensor::from_fn(t.shape(), |i| 0.5 * t.data()[i]);
        }
    }
    Ok(m)
}

fn model_cases(seed: u64) -> Result<Vec<(String, Tensor, Build)>> {
    let mut r = rng::stream(seed, &[4]);
    let mut v = Vec::new();
    let model = live_model(seed)?;
    let f = rand_tensor(&mut r, &[2, 3]);
    let hr = Tensor::from_fn(&[2, 3, 8, 8], |_| r.random_range(0.0..1.0));
    let lr = Tensor::from_fn(&[2, 3, 4, 4], |_| r.random_range(0.0..1.0));
    let enc_in = Tensor::from_fn(&[1, 3, 16, 16], |_| r.random_range(0.0..1.0));

    let m = model.clone();
    case("degrader/representation", f.clone(), Box::new(move |g, x| {
        let b = m.params.bind_frozen(g)?;
        let h = g.constant(hr.clone())?;
        let y = degrade_net(g, &b, &m.arch, h, x)?;
        let sq = g.mul(y, y)?;
        g.sum(sq)
    }), &mut v);
    let (m, l) = (model.clone(), lr.clone());
    case("generator/representation", f.clone(), Box::new(move |g, x| {
        let b = m.params.bind_frozen(g)?;
        let lr = g.constant(l.clone())?;
        let y = generate(g, &b, &m.arch, lr, x)?;
        project(g, y, 30)
    }), &mut v);
    let m = model.clone();
    case("generator/input", lr, Box::new(move |g, x| {
        let b = m.params.bind_frozen(g)?;
        let fc = g.constant(f.clone())?;
        let y = generate(g, &b, &m.arch, x, fc)?;
        project(g, y, 31)
    }), &mut v);
    let m = model;
    case("encoder/input", enc_in, Box::new(move |g, x| {
        let b = m.params.bind_frozen(g)?;
        let e = encode(g, &b, &m.arch, x)?;
        project(g, e.f, 32)
    }), &mut v);
    Ok(v)
}

fn run(cases: Vec<(String, Tensor, Build)>) -> Result<Vec<Check>> {
    cases
        .into_iter()
        .map(|(name, x, f)| {
            let error = grad_check(f, &x, FD_STEP)?;
            Ok(Check {
                name,
                error,
                tolerance: GRAD_TOLERANCE,
            })
        })
        .collect()
}

/// Gradient checks for every differentiable graph operation.
pub fn op_gradient_checks(seed: u64) -> Result<Vec<Check>> {
    run(op_cases(seed))
}

/// Gradient checks for the four training losses (KL on both inputs).
pub fn loss_gradient_checks(seed: u64) -> Result<Vec<Check>> {
    run(loss_cases(seed))
}

/// Gradient checks through small encoder, degrader and generator networks.
pub fn model_gradient_checks(seed: u64) -> Result<Vec<Check>> {
    run(model_cases(seed)?)
}

fn scalar_of(build: impl FnOnce(&mut Graph) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let v = build(&mut g)?;
    g.value(v).item()
}

fn t(shape: &[usize], data: &[f64]) -> Result<Tensor> {
    Tensor::new(shape.to_vec(), data.to_vec())
}

/// Closed-form identities of the losses and the modulation coefficient.
pub fn loss_identities() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut push = |name: &str, got: f64, want: f64| {
        out.push(Check {
            name: name.to_string(),
            error: (got - want).abs(),
            tolerance: 1e-9,
        })
    };
    let x = rand_tensor(&mut rng::stream(7, &[]), &[5, 4]);
    let ed = |f: Tensor, t: Tensor| {
        scalar_of(|g| {
            let f = g.constant(f)?;
            let t = g.constant(t)?;
            loss_ed(g, f, t)
        })
    };
    push("energy distance of a set with itself", ed(x.clone(), x)?, 0.0);
    push("energy distance {0} vs {3}", ed(t(&[1, 1], &[0.0])?, t(&[1, 1], &[3.0])?)?, 6.0);
    push(
        "energy distance {0,0} vs {1,1}",
        ed(t(&[2, 1], &[0.0, 0.0])?, t(&[2, 1], &[1.0, 1.0])?)?,
        2.0,
    );
    let kl = scalar_of(|g| {
        let mu = g.constant(Tensor::zeros(&[2, 3]))?;
        let lv = g.constant(Tensor::zeros(&[2, 3]))?;
        loss_kl(g, mu, lv)
    })?;
    push("KL of the standard normal", kl, 0.0);
    let sr = scalar_of(|g| {
        let a = g.constant(t(&[2, 1], &[0.1, 0.3])?)?;
        let b = g.constant(Tensor::zeros(&[2, 1]))?;
        loss_sr(g, a, b, &[2.0, 1.0])
    })?;
    push("modulated L1 of (2, 0.1) and (1, 0.3)", sr, 0.25);
    push("modulation coefficient at d = 0", modulation_coefficient(0.0), 2.0);
    push("modulation coefficient at d = 1", modulation_coefficient(1.0), 1.0);
    Ok(out)
}
