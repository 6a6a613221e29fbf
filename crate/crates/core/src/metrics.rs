//! Image fidelity metrics and representation-space statistics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::degradation::{degrade, DegradationSpec, ManifestEntry};
use crate::error::{dim_err, param_err, Error, Result};
use crate::image::Image;
use crate::models::ModelParams;
use crate::rng;
use crate::tensor::Tensor;

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn same_shape(a: &Image, b: &Image) -> Result<()> {
    if (a.height, a.width, a.channels) != (b.height, b.width, b.channels) {
        return Err(dim_err!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            a.height,
            a.width,
            a.channels,
            b.height,
            b.width,
            b.channels
        ));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data.len() as f64)
}

pub fn rmse(a: &Image, b: &Image) -> Result<f64> {
    Ok(mse(a, b)?.sqrt())
}

/// Peak signal-to-noise ratio for a peak of 1, over every channel and pixel.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

fn luma(img: &Image) -> Vec<f64> {
    if img.channels == 3 {
        let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
        r.iter()
            .zip(g)
            .zip(b)
            .map(|((r, g), b)| 0.299 * r + 0.587 * g + 0.114 * b)
            .collect()
    } else {
        img.plane(0).to_vec()
    }
}

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable valid-region filtering of an `h×w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        let src = &x[y * w..(y + 1) * w];
        for (xo, out) in rows[y * wo..(y + 1) * wo].iter_mut().enumerate() {
            *out = win.iter().zip(&src[xo..xo + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for yo in 0..ho {
        for (t, wt) in win.iter().enumerate() {
            let src = &rows[(yo + t) * wo..(yo + t + 1) * wo];
            for (o, v) in out[yo * wo..(yo + 1) * wo].iter_mut().zip(src) {
                *o += wt * v;
            }
        }
    }
    out
}

/// Mean structural similarity on luma with an 11×11 Gaussian window.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(dim_err!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.height,
            a.width
        ));
    }
    let (h, w) = (a.height, a.width);
    let (x, y) = (luma(a), luma(b));
    let win = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter_valid(&x, h, w, &win);
    let my = filter_valid(&y, h, w, &win);
    let mxx = filter_valid(&prod(&x, &x), h, w, &win);
    let myy = filter_valid(&prod(&y, &y), h, w, &win);
    let mxy = filter_valid(&prod(&x, &y), h, w, &win);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = mxx[i] - ux * ux;
        let vy = myy[i] - uy * uy;
        let cxy = mxy[i] - ux * uy;
        total += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
            / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
    }
    Ok(total / mx.len() as f64)
}

#[derive(Clone, Debug, Serialize)]
pub struct ClusterReport {
    /// Distinct labels in sorted order; indexes the other fields.
    pub labels: Vec<String>,
    pub counts: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub centroid_distances: Vec<Vec<f64>>,
    /// Leave-one-out nearest-centroid accuracy.
    pub accuracy: f64,
    pub silhouette: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn cluster_report(reps: &[Vec<f64>], labels: &[String]) -> Result<ClusterReport> {
    if reps.len() != labels.len() {
        return Err(dim_err!("{} representations but {} labels", reps.len(), labels.len()));
    }
    let dim = reps.first().map_or(0, Vec::len);
    if dim == 0 || reps.iter().any(|r| r.len() != dim) {
        return Err(dim_err!("representations must share one positive length"));
    }
    let mut names: Vec<String> = labels.to_vec();
    names.sort();
    names.dedup();
    if names.len() < 2 {
        return Err(param_err!("cluster report needs at least 2 labels, got {}", names.len()));
    }
    let class: Vec<usize> = labels
        .iter()
        .map(|l| names.binary_search(l).expect("label present"))
        .collect();
    let k = names.len();
    let mut counts = vec![0usize; k];
    let mut sums = vec![vec![0.0; dim]; k];
    for (r, &c) in reps.iter().zip(&class) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(r) {
            *s += v;
        }
    }
    if let Some(c) = counts.iter().position(|&n| n < 2) {
        return Err(param_err!("label '{}' has fewer than 2 samples", names[c]));
    }
    let centroids: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| s.iter().map(|v| v / n as f64).collect())
        .collect();
    let centroid_distances = centroids
        .iter()
        .map(|a| centroids.iter().map(|b| dist(a, b)).collect())
        .collect();

    let mut correct = 0usize;
    for (r, &c) in reps.iter().zip(&class) {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in 0..k {
            let d = if j == c {
                let n = counts[c] as f64;
                let loo: Vec<f64> = sums[c].iter().zip(r).map(|(s, v)| (s - v) / (n - 1.0)).collect();
                dist(r, &loo)
            } else {
                dist(r, &centroids[j])
            };
            if d < best.0 {
                best = (d, j);
            }
        }
        correct += usize::from(best.1 == c);
    }

    let mut sil = 0.0;
    for (i, r) in reps.iter().enumerate() {
        let mut totals = vec![0.0; k];
        for (j, q) in reps.iter().enumerate() {
            if i != j {
                totals[class[j]] += dist(r, q);
            }
        }
        let own = class[i];
        let a = totals[own] / (counts[own] - 1) as f64;
        let b = (0..k)
            .filter(|&j| j != own)
            .map(|j| totals[j] / counts[j] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m == 0.0 {
            return Err(param_err!("silhouette undefined: sample {i} coincides with every other sample"));
        }
        sil += (b - a) / m;
    }

    Ok(ClusterReport {
        labels: names,
        counts,
        centroids,
        centroid_distances,
        accuracy: correct as f64 / reps.len() as f64,
        silhouette: sil / reps.len() as f64,
    })
}

/// Writes `reps.rdt` (`[N, C]`) and `labels.csv` into `dir`.
pub fn export_representations(dir: &Path, reps: &[Vec<f64>], labels: &[String]) -> Result<()> {
    if reps.len() != labels.len() || reps.is_empty() {
        return Err(dim_err!("{} representations but {} labels", reps.len(), labels.len()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let t = Tensor::new(vec![reps.len(), reps[0].len()], reps.concat())?;
    t.save(dir.join("reps.rdt"))?;
    let mut csv = String::from("index,label\n");
    for (i, l) in labels.iter().enumerate() {
        writeln!(csv, "{i},{l}").expect("string write");
    }
    let path = dir.join("labels.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    /// PSNR of the fixed target super-resolved with each content's
    /// representation; entry 0 uses the target's own.
    pub psnr: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl SweepReport {
    pub fn from_values(psnr: Vec<f64>) -> Result<Self> {
        if psnr.is_empty() {
            return Err(param_err!("empty sweep"));
        }
        let n = psnr.len() as f64;
        let mean = psnr.iter().sum::<f64>() / n;
        let std = (psnr.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n).sqrt();
        let min = psnr.iter().copied().fold(f64::INFINITY, f64::min);
        let max = psnr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { psnr, mean, std, min, max })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,psnr\n");
        for (i, p) in self.psnr.iter().enumerate() {
            writeln!(s, "content{i},{p:.6}").expect("string write");
        }
        s
    }
}

/// Super-resolves `hr_pool[0]`, degraded by `spec`, with representations
/// taken from the first `n_contents` pool images degraded the same way.
pub fn robustness_sweep(
    model: &ModelParams,
    hr_pool: &[Image],
    spec: &DegradationSpec,
    n_contents: usize,
    seed: u64,
) -> Result<SweepReport> {
    if n_contents == 0 {
        return Err(param_err!("robustness sweep needs at least one content"));
    }
    if hr_pool.len() < n_contents {
        return Err(param_err!(
            "pool has {} images, sweep needs {n_contents}",
            hr_pool.len()
        ));
    }
    let lrs = hr_pool[..n_contents]
        .iter()
        .enumerate()
        .map(|(i, hr)| degrade(hr, spec, rng::derive_seed(seed, &[i as u64])))
        .collect::<Result<Vec<_>>>()?;
    let mut reps = Vec::with_capacity(n_contents);
    for lr in &lrs {
        reps.extend(model.encode_images(std::slice::from_ref(lr))?);
    }
    let targets = vec![lrs[0].clone(); n_contents];
    let srs = model.super_resolve(&targets, &reps)?;
    let values = srs
        .iter()
        .map(|sr| psnr(&sr.clamped(), &hr_pool[0]))
        .collect::<Result<Vec<_>>>()?;
    SweepReport::from_values(values)
}

/// Per-image evaluation result.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSample {
    pub spec: DegradationSpec,
    pub psnr: f64,
    pub ssim: f64,
}

/// Mean metrics over all samples sharing `(sigma1, sigma2, theta, noise)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpecRow {
    pub sigma1: f64,
    pub sigma2: f64,
    pub theta: f64,
    pub noise: f64,
    pub count: usize,
    pub psnr: f64,
    pub ssim: f64,
}

pub const SPEC_TABLE_HEADER: &str = "sigma1,sigma2,theta,noise,count,psnr,ssim";

/// Groups samples by degradation, ordered by the spec parameters.
pub fn group_by_spec(samples: &[EvalSample]) -> Vec<SpecRow> {
    let key = |s: &DegradationSpec| [s.sigma1, s.sigma2, s.theta, s.noise_level];
    let mut sorted: Vec<&EvalSample> = samples.iter().collect();
    sorted.sort_by(|a, b| {
        key(&a.spec)
            .iter()
            .zip(key(&b.spec).iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut rows: Vec<SpecRow> = Vec::new();
    for s in sorted {
        let k = key(&s.spec);
        match rows.last_mut() {
            Some(r) if [r.sigma1, r.sigma2, r.theta, r.noise] == k => {
                r.count += 1;
                r.psnr += s.psnr;
                r.ssim += s.ssim;
            }
            _ => rows.push(SpecRow {
                sigma1: k[0],
                sigma2: k[1],
                theta: k[2],
                noise: k[3],
                count: 1,
                psnr: s.psnr,
                ssim: s.ssim,
            }),
        }
    }
    for r in &mut rows {
        r.psnr /= r.count as f64;
        r.ssim /= r.count as f64;
    }
    rows
}

pub fn spec_table_csv(rows: &[SpecRow]) -> String {
    let mut s = format!("{SPEC_TABLE_HEADER}\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{:.6},{:.6}",
            r.sigma1, r.sigma2, r.theta, r.noise, r.count, r.psnr, r.ssim
        )
        .expect("string write");
    }
    s
}

/// Blind super-resolution of every manifest entry, scored against its HR.
pub fn evaluate_manifest(model: &ModelParams, dir: &Path, entries: &[ManifestEntry]) -> Result<Vec<EvalSample>> {
    entries
        .iter()
        .map(|e| {
            let lr = e.load_lr(dir)?;
            let hr = e.load_hr(dir)?;
            let sr = model.blind_super_resolve(std::slice::from_ref(&lr))?.remove(0).clamped();
            Ok(EvalSample {
                spec: e.spec,
                psnr: psnr(&sr, &hr)?,
                ssim: ssim(&sr, &hr)?,
            })
        })
        .collect()
}
