//! Training objectives: re-degradation L1, energy distance to a target
//! distribution, the KL alternative, and the confidence-modulated
//! reconstruction loss.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Error, Result};
use crate::rng;
use crate::tensor::{Graph, Tensor, Var};

/// Family of the distribution the representation cloud is pulled toward.
/// All three are standardized to zero mean and unit variance per coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Gaussian,
    Uniform,
    Exponential,
}

impl FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "uniform" => Ok(Self::Uniform),
            "exponential" => Ok(Self::Exponential),
            _ => Err(Error::Config(format!("unknown target distribution `{s}`"))),
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gaussian => "gaussian",
            Self::Uniform => "uniform",
            Self::Exponential => "exponential",
        })
    }
}

impl TargetKind {
    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Self::Gaussian => StandardNormal.sample(rng),
            Self::Uniform => {
                let r3 = 3f64.sqrt();
                rng.random_range(-r3..=r3)
            }
            Self::Exponential => {
                let e: f64 = Exp1.sample(rng);
                e - 1.0
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetDistribution {
    pub kind: TargetKind,
    pub dim: usize,
    pub seed: u64,
}

impl TargetDistribution {
    /// `m` i.i.d. samples as an `[m, dim]` tensor, determined by `seed`.
    pub fn sample(&self, m: usize) -> Result<Tensor> {
        self.sample_with(m, &mut rng::stream(self.seed, &[]))
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Tensor> {
        if m == 0 || self.dim == 0 {
            return Err(param_err!("need at least one target sample of positive dimension"));
        }
        Ok(Tensor::from_fn(&[m, self.dim], |_| self.kind.draw(rng)))
    }
}

pub fn sample_targets(dist: &TargetDistribution, m: usize) -> Result<Tensor> {
    dist.sample(m)
}

/// Mean absolute error between the real and the reproduced LR batch.
pub fn loss_rd(g: &mut Graph, lr_true: Var, lr_pred: Var) -> Result<Var> {
    g.l1_mean(lr_pred, lr_true)
}

/// Energy distance between representations `f: [b, C]` and target samples
/// `t: [m, C]`:
///
/// `2/(bm) ΣΣ‖fᵢ−tⱼ‖ − 1/b² ΣΣ‖fᵢ−fⱼ‖ − 1/m² ΣΣ‖tᵢ−tⱼ‖`.
pub fn loss_ed(g: &mut Graph, f: Var, t: Var) -> Result<Var> {
    let cross = g.pairwise_l2(f, t)?;
    let cross = g.mean(cross)?;
    let cross = g.scale(cross, 2.0)?;
    let within_f = g.pairwise_l2(f, f)?;
    let within_f = g.mean(within_f)?;
    let within_t = g.pairwise_l2(t, t)?;
    let within_t = g.mean(within_t)?;
    let d = g.sub(cross, within_f)?;
    g.sub(d, within_t)
}

/// Batch mean of `KL(N(mu, exp(logvar)) ‖ N(0, I))`.
pub fn loss_kl(g: &mut Graph, mu: Var, logvar: Var) -> Result<Var> {
    let (b, _) = g.value(mu).dims2()?;
    if g.value(logvar).shape() != g.value(mu).shape() {
        return Err(dim_err!(
            "loss_kl: mu {:?} vs logvar {:?}",
            g.value(mu).shape(),
            g.value(logvar).shape()
        ));
    }
    let c = g.value(mu).shape()[1] as f64;
    let var = g.exp(logvar)?;
    let mu2 = g.mul(mu, mu)?;
    let s = g.add(var, mu2)?;
    let s = g.sub(s, logvar)?;
    let s = g.sum(s)?;
    // ½ Σ (e^lv + μ² − 1 − lv) / b
    let s = g.scale(s, 0.5 / b as f64)?;
    g.add_scalar(s, -0.5 * c)
}

/// Per-sample confidence bookkeeping for the modulated loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfidenceWeight {
    /// RMSE between reproduced and real LR.
    pub rmse: f64,
    /// `1 / rmse`; infinite for a perfect reproduction.
    pub confidence: f64,
    /// Modulation coefficient `2 / (1 + 1/confidence) = 2 / (1 + rmse)`.
    pub weight: f64,
}

impl ConfidenceWeight {
    pub fn from_rmse(d: f64) -> Result<Self> {
        if !(d >= 0.0) || !d.is_finite() {
            return Err(param_err!("RMSE must be finite and non-negative, got {d}"));
        }
        Ok(Self {
            rmse: d,
            confidence: 1.0 / d,
            weight: modulation_coefficient(d),
        })
    }
}

/// `W = 2 / (1 + d)`, the modulation coefficient as a function of RMSE.
pub fn modulation_coefficient(d: f64) -> f64 {
    2.0 / (1.0 + d)
}

/// Per-sample weights from an `[N, ...]` pair of LR batches. Computed on
/// plain values, so no gradient flows through them.
pub fn modulation_weight(lr_true: &Tensor, lr_pred: &Tensor) -> Result<Vec<ConfidenceWeight>> {
    if lr_true.shape() != lr_pred.shape() {
        return Err(dim_err!(
            "modulation_weight: {:?} vs {:?}",
            lr_true.shape(),
            lr_pred.shape()
        ));
    }
    let n = lr_true.shape()[0];
    let inner = lr_true.numel() / n;
    lr_true
        .data()
        .chunks(inner)
        .zip(lr_pred.data().chunks(inner))
        .map(|(a, b)| {
            let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / inner as f64;
            ConfidenceWeight::from_rmse(mse.sqrt())
        })
        .collect()
}

/// Batch mean of `W_i · mean|SR_i − HR_i|`.
pub fn loss_sr(g: &mut Graph, sr: Var, hr: Var, weights: &[f64]) -> Result<Var> {
    let per_sample = g.l1_per_sample(sr, hr)?;
    let n = g.value(per_sample).numel();
    if weights.len() != n {
        return Err(dim_err!("{} weights for a batch of {n}", weights.len()));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(param_err!("modulation weights must be positive"));
    }
    let w = g.constant(Tensor::new(vec![n], weights.to_vec())?)?;
    let weighted = g.mul(per_sample, w)?;
    g.mean(weighted)
}

/// Loss weighting and the ablation switches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub loss_rd: bool,
    pub loss_ed: bool,
    pub modulated_sr: bool,
    pub kl_substitute: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.01,
            loss_rd: true,
            loss_ed: true,
            modulated_sr: true,
            kl_substitute: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0) || !self.lambda1.is_finite() {
            return Err(Error::Config(format!("lambda1 must be non-negative, got {}", self.lambda1)));
        }
        if self.kl_substitute && self.loss_ed {
            return Err(Error::Config(
                "kl_substitute replaces the energy-distance loss; disable loss_ed to use it".into(),
            ));
        }
        if self.modulated_sr && !self.loss_rd {
            return Err(Error::Config(
                "modulated_sr needs loss_rd: the weight comes from the degrader's reproduction error".into(),
            ));
        }
        Ok(())
    }
}

/// Loss terms present in a step; `None` for terms that were not computed.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossComponents {
    pub rd: Option<Var>,
    pub ed: Option<Var>,
    pub kl: Option<Var>,
    pub sr: Option<Var>,
}

/// `λ₁·(L_ED or L_KL) + L_RD + L_SR`, including only enabled terms.
pub fn total_loss(g: &mut Graph, c: &LossComponents, w: &LossWeights) -> Result<Var> {
    let mut terms = Vec::new();
    if w.loss_rd {
        terms.extend(c.rd);
    }
    if w.loss_ed {
        if let Some(ed) = c.ed {
            terms.push(g.scale(ed, w.lambda1)?);
        }
    }
    if w.kl_substitute {
        if let Some(kl) = c.kl {
            terms.push(g.scale(kl, w.lambda1)?);
        }
    }
    terms.extend(c.sr);
    let mut it = terms.into_iter();
    let first = it
        .next()
        .ok_or_else(|| Error::Config("every loss component is disabled".into()))?;
    it.try_fold(first, |acc, t| g.add(acc, t))
}
