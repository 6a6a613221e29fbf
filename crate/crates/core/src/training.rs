//! Joint training of encoder, degrader and generator.
//!
//! Every step draws its batch from `(data_seed, step)` and its target
//! samples from `(target_seed, step)`, so a run is fully determined by the
//! config and the dataset, and can be resumed from any checkpoint.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::degradation::{degrade, list_images, DegradationMode, DegradationSpec, SpecSampler};
use crate::error::{param_err, Error, Result};
use crate::image::Image;
use crate::losses::{
    loss_ed, loss_kl, loss_rd, loss_sr, modulation_weight, total_loss, ConfidenceWeight, LossComponents,
    LossWeights, TargetDistribution, TargetKind,
};
use crate::models::{
    degrade_net, encode, generate, load_checkpoint, save_checkpoint, Architecture, ModelParams,
};
use crate::rng;
use crate::synthetic;
use crate::tensor::{adam_step, AdamState, Tensor, Var};
use crate::Graph;

pub const LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.rdck";
pub const LOG_HEADER: &str = "step,loss_rd,loss_ed,loss_sr,loss_total,mean_w,lr,ms";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Slots per step; each slot yields one pair in each group.
    pub batch_size: usize,
    /// LR patch side. HR crops are `patch * scale`.
    pub patch: usize,
    /// Target samples `m` drawn per step for the energy distance.
    pub target_samples: usize,
    pub lambda1: f64,
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub initial_lr: f64,
    /// Epochs between learning-rate halvings.
    pub schedule_period: usize,
    pub mode: DegradationMode,
    /// Restricts isotropic widths to this set when present.
    pub sigma_set: Option<Vec<f64>>,
    pub scale: usize,

    pub init_seed: u64,
    pub data_seed: u64,
    pub noise_seed: u64,
    pub target_seed: u64,

    pub loss_rd: bool,
    pub loss_ed: bool,
    pub ed_target: TargetKind,
    pub kl_substitute: bool,
    pub modulated_sr: bool,

    pub c_repr: usize,
    pub blocks: usize,
    pub degrader_width: usize,
    pub generator_width: usize,
    pub mlp_width: usize,

    /// Extra numbered checkpoint every this many steps; 0 keeps only the latest.
    pub checkpoint_every: usize,
    /// When false the `ms` column is written as 0 so logs are byte-stable.
    pub log_wall_time: bool,

    /// Directory of PPM/PGM training images; the synthetic set is used when absent.
    pub hr_dir: Option<PathBuf>,
    pub synthetic_count: usize,
    pub synthetic_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let arch = Architecture::default();
        Self {
            batch_size: 8,
            patch: 32,
            target_samples: 64,
            lambda1: 0.01,
            epochs: 20,
            iters_per_epoch: 100,
            initial_lr: 1e-4,
            schedule_period: 8,
            mode: DegradationMode::Isotropic,
            sigma_set: None,
            scale: arch.scale,
            init_seed: 1,
            data_seed: 2,
            noise_seed: 3,
            target_seed: 4,
            loss_rd: true,
            loss_ed: true,
            ed_target: TargetKind::Gaussian,
            kl_substitute: false,
            modulated_sr: true,
            c_repr: arch.c_repr,
            blocks: arch.blocks,
            degrader_width: arch.degrader_width,
            generator_width: arch.generator_width,
            mlp_width: arch.mlp_width,
            checkpoint_every: 0,
            log_wall_time: true,
            hr_dir: None,
            synthetic_count: 32,
            synthetic_size: synthetic::DEFAULT_SIZE,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.iters_per_epoch
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            loss_rd: self.loss_rd,
            loss_ed: self.loss_ed,
            modulated_sr: self.modulated_sr,
            kl_substitute: self.kl_substitute,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            c_repr: self.c_repr,
            blocks: self.blocks,
            degrader_width: self.degrader_width,
            generator_width: self.generator_width,
            mlp_width: self.mlp_width,
            scale: self.scale,
            logvar_head: self.kl_substitute,
            ..Architecture::default()
        }
    }

    pub fn sampler(&self) -> SpecSampler {
        SpecSampler {
            mode: self.mode,
            sigma_set: self.sigma_set.clone(),
            scale: self.scale,
        }
    }

    /// The degrader runs only when something consumes its output.
    pub fn needs_degrader(&self) -> bool {
        self.loss_rd || self.modulated_sr
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("patch", self.patch),
            ("target_samples", self.target_samples),
            ("iters_per_epoch", self.iters_per_epoch),
            ("schedule_period", self.schedule_period),
            ("scale", self.scale),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.initial_lr > 0.0) || !self.initial_lr.is_finite() {
            return Err(Error::Config(format!("initial_lr must be positive, got {}", self.initial_lr)));
        }
        if let Some(set) = &self.sigma_set {
            if set.is_empty() || set.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::Config("sigma_set must hold positive widths".into()));
            }
        }
        if self.hr_dir.is_none() && self.synthetic_count == 0 {
            return Err(Error::Config("synthetic_count must be positive without hr_dir".into()));
        }
        self.loss_weights().validate()?;
        self.architecture()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// `initial_lr / 2^⌊epoch / schedule_period⌋` for the epoch containing `step`.
    pub fn learning_rate(&self, step: usize) -> f64 {
        let epoch = step / self.iters_per_epoch;
        let halvings = (epoch / self.schedule_period).min(1000) as i32;
        self.initial_lr * 0.5f64.powi(halvings)
    }
}

/// Training images; each must hold two disjoint HR crops.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub images: Vec<Image>,
}

impl TrainData {
    /// Keeps images that fit two disjoint `side`×`side` crops, warning about the rest.
    pub fn new(images: Vec<Image>, side: usize) -> Result<Self> {
        let total = images.len();
        let images: Vec<Image> = images
            .into_iter()
            .enumerate()
            .filter_map(|(i, img)| {
                if fits_two(&img, side) {
                    Some(img.to_rgb())
                } else {
                    log::warn!(
                        "skipping image {i} ({}x{}): too small for two disjoint {side}x{side} patches",
                        img.height,
                        img.width
                    );
                    None
                }
            })
            .collect();
        if images.is_empty() {
            return Err(param_err!("none of {total} images can hold two disjoint {side}x{side} patches"));
        }
        Ok(Self { images })
    }

    pub fn from_config(cfg: &TrainConfig) -> Result<Self> {
        let side = cfg.patch * cfg.scale;
        let images = match &cfg.hr_dir {
            Some(dir) => {
                let files = list_images(dir)?;
                if files.is_empty() {
                    return Err(Error::io(
                        dir,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "no PPM/PGM images found"),
                    ));
                }
                files.iter().map(Image::read_pnm).collect::<Result<Vec<_>>>()?
            }
            None => synthetic::dataset(cfg.data_seed, cfg.synthetic_count, cfg.synthetic_size, cfg.synthetic_size),
        };
        Self::new(images, side)
    }
}

fn fits_two(img: &Image, side: usize) -> bool {
    (img.width >= 2 * side && img.height >= side) || (img.height >= 2 * side && img.width >= side)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub size: usize,
}

impl Rect {
    pub fn overlaps(&self, o: &Rect) -> bool {
        self.top < o.top + o.size
            && o.top < self.top + self.size
            && self.left < o.left + o.size
            && o.left < self.left + self.size
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Slot {
    pub image: usize,
    pub spec: DegradationSpec,
    /// Crop feeding the encoder and generator.
    pub crop1: Rect,
    /// Crop the degrader must reproduce.
    pub crop2: Rect,
    pub noise_seeds: [u64; 2],
}

/// Group B is `(hr1, lr1)`, group A is `(hr2, lr2)`; slot `i` of both
/// groups shares one image and one degradation.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub hr1: Tensor,
    pub lr1: Tensor,
    pub hr2: Tensor,
    pub lr2: Tensor,
    pub slots: Vec<Slot>,
}

/// Two disjoint crops: side by side or stacked, whichever the image allows.
fn disjoint_crops<R: Rng + ?Sized>(img: &Image, side: usize, rng: &mut R) -> (Rect, Rect) {
    let horizontal = img.width >= 2 * side;
    let vertical = img.height >= 2 * side;
    let split_columns = match (horizontal, vertical) {
        (true, true) => rng.random::<bool>(),
        (h, _) => h,
    };
    let (along, across) = if split_columns {
        (img.width, img.height)
    } else {
        (img.height, img.width)
    };
    let a = rng.random_range(0..=along - 2 * side);
    let b = rng.random_range(a + side..=along - side);
    let c1 = rng.random_range(0..=across - side);
    let c2 = rng.random_range(0..=across - side);
    let (first, second) = if split_columns {
        (Rect { top: c1, left: a, size: side }, Rect { top: c2, left: b, size: side })
    } else {
        (Rect { top: a, left: c1, size: side }, Rect { top: b, left: c2, size: side })
    };
    if rng.random::<bool>() {
        (second, first)
    } else {
        (first, second)
    }
}

/// Batch for `step`, a pure function of `(data, cfg, step)`.
pub fn build_batch(data: &TrainData, cfg: &TrainConfig, step: usize) -> Result<Batch> {
    if data.images.is_empty() {
        return Err(param_err!("empty training set"));
    }
    let side = cfg.patch * cfg.scale;
    let sampler = cfg.sampler();
    let mut rng = rng::stream(cfg.data_seed, &[step as u64]);
    let mut groups: [Vec<Image>; 4] = Default::default();
    let mut slots = Vec::with_capacity(cfg.batch_size);
    for i in 0..cfg.batch_size {
        let image = rng.random_range(0..data.images.len());
        let img = &data.images[image];
        let (crop1, crop2) = disjoint_crops(img, side, &mut rng);
        let spec = sampler.sample(&mut rng);
        let noise_seeds = [0u64, 1].map(|k| rng::derive_seed(cfg.noise_seed, &[step as u64, i as u64, k]));
        for (k, r) in [crop1, crop2].iter().enumerate() {
            let hr = img.crop(r.top, r.left, r.size, r.size)?;
            let lr = degrade(&hr, &spec, noise_seeds[k])?;
            groups[2 * k].push(hr);
            groups[2 * k + 1].push(lr);
        }
        slots.push(Slot {
            image,
            spec,
            crop1,
            crop2,
            noise_seeds,
        });
    }
    let [hr1, lr1, hr2, lr2] = groups.map(|g| Image::batch(&g));
    Ok(Batch {
        hr1: hr1?,
        lr1: lr1?,
        hr2: hr2?,
        lr2: lr2?,
        slots,
    })
}

/// Scalar outcomes of one forward/backward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub rd: Option<f64>,
    pub ed: Option<f64>,
    pub kl: Option<f64>,
    pub sr: f64,
    pub total: f64,
    pub weights: Vec<ConfidenceWeight>,
}

impl StepLosses {
    pub fn mean_weight(&self) -> f64 {
        if self.weights.is_empty() {
            1.0
        } else {
            self.weights.iter().map(|w| w.weight).sum::<f64>() / self.weights.len() as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainRecord {
    /// 1-based index of the optimizer step.
    pub step: usize,
    pub loss_rd: Option<f64>,
    /// Energy distance, or the KL term when it substitutes.
    pub loss_ed: Option<f64>,
    pub loss_sr: f64,
    pub loss_total: f64,
    pub mean_w: f64,
    pub lr: f64,
    pub ms: f64,
}

impl TrainRecord {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{:.3}",
            self.step,
            opt(self.loss_rd),
            opt(self.loss_ed),
            self.loss_sr,
            self.loss_total,
            self.mean_w,
            self.lr,
            self.ms
        )
    }
}

fn annotate(step: usize, partial: &StepLosses) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::NonFinite(msg) => Error::NonFinite(format!(
            "step {step}: {msg} (losses so far: rd={:?} ed={:?} kl={:?} sr={})",
            partial.rd, partial.ed, partial.kl, partial.sr
        )),
        other => other,
    }
}

/// Forward and backward pass for `step`, leaving gradients on `params`.
///
/// `forced_rmse` replaces the measured reproduction error in the modulation
/// weights; it exists to probe the weighting in isolation.
pub fn step_gradients(
    model: &mut ModelParams,
    batch: &Batch,
    cfg: &TrainConfig,
    step: usize,
    forced_rmse: Option<f64>,
) -> Result<StepLosses> {
    let mut out = StepLosses::default();
    let run = |out: &mut StepLosses| -> Result<(Graph, crate::tensor::Bindings)> {
        let arch = &model.arch;
        let mut g = Graph::new();
        let b = model.params.bind(&mut g)?;
        let lr1 = g.constant(batch.lr1.clone())?;
        let hr1 = g.constant(batch.hr1.clone())?;
        let enc = encode(&mut g, &b, arch, lr1)?;
        let mut comps = LossComponents::default();

        let f: Var = match (cfg.kl_substitute, enc.logvar) {
            (true, Some(lv)) => {
                comps.kl = Some(loss_kl(&mut g, enc.f, lv)?);
                out.kl = Some(g.value(comps.kl.unwrap()).item()?);
                // Reparameterized draw f = μ + exp(lv/2)·ε.
                let shape = g.value(enc.f).shape().to_vec();
                let mut r = rng::stream(cfg.target_seed, &[step as u64, 1]);
                let eps = Tensor::from_fn(&shape, |_| StandardNormal.sample(&mut r));
                let eps = g.constant(eps)?;
                let half = g.scale(lv, 0.5)?;
                let std = g.exp(half)?;
                let noise = g.mul(std, eps)?;
                g.add(enc.f, noise)?
            }
            (true, None) => return Err(Error::State("KL variant needs the log-variance head".into())),
            _ => enc.f,
        };

        if cfg.needs_degrader() {
            let hr2 = g.constant(batch.hr2.clone())?;
            let lr2 = g.constant(batch.lr2.clone())?;
            let pred = degrade_net(&mut g, &b, arch, hr2, f)?;
            if cfg.loss_rd {
                let rd = loss_rd(&mut g, lr2, pred)?;
                out.rd = Some(g.value(rd).item()?);
                comps.rd = Some(rd);
            }
            if cfg.modulated_sr {
                out.weights = match forced_rmse {
                    Some(d) => vec![ConfidenceWeight::from_rmse(d)?; batch.slots.len()],
                    None => modulation_weight(&batch.lr2, g.value(pred))?,
                };
            }
        }
        if cfg.loss_ed {
            let dist = TargetDistribution {
                kind: cfg.ed_target,
                dim: arch.c_repr,
                seed: rng::derive_seed(cfg.target_seed, &[step as u64]),
            };
            let t = g.constant(dist.sample(cfg.target_samples)?)?;
            let ed = loss_ed(&mut g, f, t)?;
            out.ed = Some(g.value(ed).item()?);
            comps.ed = Some(ed);
        }

        let sr = generate(&mut g, &b, arch, lr1, f)?;
        let w: Vec<f64> = if out.weights.is_empty() {
            vec![1.0; batch.slots.len()]
        } else {
            out.weights.iter().map(|c| c.weight).collect()
        };
        let lsr = loss_sr(&mut g, sr, hr1, &w)?;
        out.sr = g.value(lsr).item()?;
        comps.sr = Some(lsr);

        let total = total_loss(&mut g, &comps, &cfg.loss_weights())?;
        out.total = g.value(total).item()?;
        g.backward(total)?;
        Ok((g, b))
    };
    let result = run(&mut out);
    let (g, b) = result.map_err(annotate(step, &out))?;
    model.params.collect_grads(&g, &b)?;
    Ok(out)
}

/// One optimizer step at 0-based index `step`.
pub fn train_step(
    model: &mut ModelParams,
    adam: &mut AdamState,
    batch: &Batch,
    cfg: &TrainConfig,
    step: usize,
) -> Result<TrainRecord> {
    let start = Instant::now();
    let lr = cfg.learning_rate(step);
    adam.set_learning_rate(lr)?;
    let losses = step_gradients(model, batch, cfg, step, None)?;
    adam_step(&mut model.params, adam)?;
    let ms = if cfg.log_wall_time {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    Ok(TrainRecord {
        step: step + 1,
        loss_rd: losses.rd,
        loss_ed: losses.ed.or(losses.kl),
        loss_sr: losses.sr,
        loss_total: losses.total,
        mean_w: losses.mean_weight(),
        lr,
        ms,
    })
}

/// Outcome of [`train`].
#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub model: ModelParams,
    pub records: Vec<TrainRecord>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

fn read_log_prefix(path: &Path, upto: usize) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != LOG_HEADER {
                return Err(Error::Format(format!("{}: unexpected log header", path.display())));
            }
        } else {
            let step: usize = line
                .split(',')
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format(format!("{}: bad log row `{line}`", path.display())))?;
            if step > upto {
                break;
            }
        }
        out.push_str(line);
        out.push('\n');
    }
    Ok(out)
}

/// Runs `cfg.total_steps()` steps, writing `checkpoint.rdck` (initial,
/// periodic and final) and `train_log.csv` into `out_dir`. With `resume`, an
/// existing checkpoint in `out_dir` is continued and the log is truncated to
/// its step.
pub fn train(cfg: &TrainConfig, data: &TrainData, out_dir: &Path, resume: bool) -> Result<TrainSummary> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let log_path = out_dir.join(LOG_FILE);
    let arch = cfg.architecture();

    let (mut model, mut adam, start, mut log) = if resume && ckpt_path.exists() {
        let ck = load_checkpoint(&ckpt_path, Some(&arch))?;
        let adam = match ck.optimizer {
            Some(a) => a,
            None => AdamState::new(&ck.model.params, cfg.initial_lr)?,
        };
        let log = if log_path.exists() {
            read_log_prefix(&log_path, ck.step as usize)?
        } else {
            format!("{LOG_HEADER}\n")
        };
        (ck.model, adam, ck.step as usize, log)
    } else {
        let model = ModelParams::init(arch, cfg.init_seed)?;
        let adam = AdamState::new(&model.params, cfg.initial_lr)?;
        save_checkpoint(&ckpt_path, &model, Some(&adam), 0)?;
        (model, adam, 0, format!("{LOG_HEADER}\n"))
    };
    write_atomic(&log_path, &log)?;

    let total = cfg.total_steps();
    let mut records = Vec::with_capacity(total.saturating_sub(start));
    for step in start..total {
        let batch = build_batch(data, cfg, step)?;
        let rec = train_step(&mut model, &mut adam, &batch, cfg, step)?;
        log::debug!("{}", rec.csv_row());
        writeln!(log, "{}", rec.csv_row()).expect("string write");
        records.push(rec);
        let done = step + 1;
        let periodic = cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0;
        if periodic || done == total || done % cfg.iters_per_epoch == 0 {
            write_atomic(&log_path, &log)?;
            save_checkpoint(&ckpt_path, &model, Some(&adam), done as u64)?;
        }
        if periodic {
            let numbered = out_dir.join(format!("checkpoint_{done:06}.rdck"));
            save_checkpoint(&numbered, &model, Some(&adam), done as u64)?;
        }
    }
    Ok(TrainSummary {
        model,
        records,
        checkpoint: ckpt_path,
        log: log_path,
    })
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
