//! The synthetic degradation model `LR = (HR ⊗ k)↓s + n`: rotated anisotropic
//! Gaussian blur with reflective borders, s-fold decimation, then additive
//! Gaussian noise.

mod dataset;

pub use dataset::{
    gen_dataset, gen_dataset_from_images, list_images, read_manifest, write_manifest, GenOptions,
    ManifestEntry,
};

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Error, Result};
use crate::image::Image;

pub const KERNEL_SIZE: usize = 21;
const KERNEL_CENTER: usize = KERNEL_SIZE / 2;

/// Training ranges for kernel widths and noise level (0–255 scale).
pub const SIGMA_RANGE: (f64, f64) = (0.2, 4.0);
pub const NOISE_RANGE: (f64, f64) = (0.0, 25.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub sigma1: f64,
    pub sigma2: f64,
    /// Rotation of the first principal axis, radians.
    pub theta: f64,
    /// Noise standard deviation on the 0–255 intensity scale.
    #[serde(rename = "noise")]
    pub noise_level: f64,
    pub scale: usize,
}

impl DegradationSpec {
    pub fn isotropic(sigma: f64, scale: usize) -> Self {
        Self {
            sigma1: sigma,
            sigma2: sigma,
            theta: 0.0,
            noise_level: 0.0,
            scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma1 > 0.0) || !(self.sigma2 > 0.0) {
            return Err(param_err!(
                "kernel widths must be positive, got {} and {}",
                self.sigma1,
                self.sigma2
            ));
        }
        if !self.theta.is_finite() {
            return Err(param_err!("rotation angle must be finite"));
        }
        if !(self.noise_level >= 0.0) || !self.noise_level.is_finite() {
            return Err(param_err!("noise level must be non-negative, got {}", self.noise_level));
        }
        if !(1..=4).contains(&self.scale) {
            return Err(param_err!("scale must be in 1..=4, got {}", self.scale));
        }
        Ok(())
    }

    /// Grouping key ignoring the scale, e.g. for per-degradation reports.
    pub fn key(&self) -> String {
        format!(
            "s1={:.4} s2={:.4} th={:.4} n={:.2}",
            self.sigma1, self.sigma2, self.theta, self.noise_level
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationMode {
    /// `sigma1 == sigma2`, `theta = 0`, no noise.
    Isotropic,
    Anisotropic,
    #[serde(alias = "anisotropic+noise")]
    AnisotropicNoise,
}

impl FromStr for DegradationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isotropic" => Ok(Self::Isotropic),
            "anisotropic" => Ok(Self::Anisotropic),
            "anisotropic_noise" | "anisotropic+noise" => Ok(Self::AnisotropicNoise),
            _ => Err(Error::Config(format!("unknown degradation mode `{s}`"))),
        }
    }
}

impl fmt::Display for DegradationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Isotropic => "isotropic",
            Self::Anisotropic => "anisotropic",
            Self::AnisotropicNoise => "anisotropic_noise",
        })
    }
}

/// Draws a spec from the training ranges for `mode`.
pub fn sample_spec<R: Rng + ?Sized>(rng: &mut R, mode: DegradationMode, scale: usize) -> DegradationSpec {
    let (lo, hi) = SIGMA_RANGE;
    match mode {
        DegradationMode::Isotropic => DegradationSpec::isotropic(rng.random_range(lo..=hi), scale),
        DegradationMode::Anisotropic | DegradationMode::AnisotropicNoise => {
            let sigma1 = rng.random_range(lo..=hi);
            let sigma2 = rng.random_range(lo..=hi);
            let theta = rng.random_range(0.0..PI);
            let noise_level = if mode == DegradationMode::AnisotropicNoise {
                rng.random_range(NOISE_RANGE.0..=NOISE_RANGE.1)
            } else {
                0.0
            };
            DegradationSpec {
                sigma1,
                sigma2,
                theta,
                noise_level,
                scale,
            }
        }
    }
}

/// Spec sampler that optionally restricts isotropic widths to a finite set.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecSampler {
    pub mode: DegradationMode,
    pub sigma_set: Option<Vec<f64>>,
    pub scale: usize,
}

impl SpecSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DegradationSpec {
        match &self.sigma_set {
            Some(set) if !set.is_empty() => {
                let sigma = set[rng.random_range(0..set.len())];
                let mut spec = sample_spec(rng, self.mode, self.scale);
                spec.sigma1 = sigma;
                spec.sigma2 = sigma;
                spec.theta = 0.0;
                spec
            }
            _ => sample_spec(rng, self.mode, self.scale),
        }
    }
}

/// Normalized 21×21 rotated Gaussian, row-major, centred at (10, 10).
#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel {
    weights: Vec<f64>,
}

impl BlurKernel {
    pub fn size(&self) -> usize {
        KERNEL_SIZE
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.weights[row * KERNEL_SIZE + col]
    }
}

pub fn make_kernel(spec: &DegradationSpec) -> Result<BlurKernel> {
    if !(spec.sigma1 > 0.0) || !(spec.sigma2 > 0.0) || !spec.theta.is_finite() {
        return Err(param_err!(
            "kernel needs positive widths and finite angle, got ({}, {}, {})",
            spec.sigma1,
            spec.sigma2,
            spec.theta
        ));
    }
    // Σ⁻¹ = R · diag(1/σ₁², 1/σ₂²) · Rᵀ
    let (s, c) = spec.theta.sin_cos();
    let (a, b) = (1.0 / (spec.sigma1 * spec.sigma1), 1.0 / (spec.sigma2 * spec.sigma2));
    let ixx = c * c * a + s * s * b;
    let iyy = s * s * a + c * c * b;
    let ixy = c * s * (a - b);

    let mut weights = Vec::with_capacity(KERNEL_SIZE * KERNEL_SIZE);
    for row in 0..KERNEL_SIZE {
        let y = row as f64 - KERNEL_CENTER as f64;
        for col in 0..KERNEL_SIZE {
            let x = col as f64 - KERNEL_CENTER as f64;
            let q = ixx * x * x + 2.0 * ixy * x * y + iyy * y * y;
            weights.push((-0.5 * q).exp());
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(BlurKernel { weights })
}

/// Mirror index without edge repetition (`d c b | a b c d | c b a`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Correlates every channel with `kernel` under reflective borders. The
/// kernel is centrally symmetric, so this equals convolution.
pub fn blur(img: &Image, kernel: &BlurKernel) -> Image {
    blur_strided(img, kernel, 1)
}

/// `decimate(blur(img, kernel), s)` evaluated only at the kept pixels, with
/// the same per-pixel summation order, so results match bit for bit.
fn blur_strided(img: &Image, kernel: &BlurKernel, s: usize) -> Image {
    let (h, w) = (img.height, img.width);
    let (ho, wo) = (h / s, w / s);
    let r = KERNEL_CENTER;
    let pw = w + 2 * r;
    let taps: Vec<(usize, usize, f64)> = (0..KERNEL_SIZE)
        .flat_map(|i| (0..KERNEL_SIZE).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, kernel.at(i, j)))
        .filter(|&(_, _, wt)| wt != 0.0)
        .collect();

    let mut out = Vec::with_capacity(ho * wo * img.channels);
    let mut padded = vec![0.0; (h + 2 * r) * pw];
    let mut plane_out = vec![0.0; ho * wo];
    for c in 0..img.channels {
        let plane = img.plane(c);
        for py in 0..h + 2 * r {
            let sy = reflect(py as isize - r as isize, h);
            for px in 0..pw {
                let sx = reflect(px as isize - r as isize, w);
                padded[py * pw + px] = plane[sy * w + sx];
            }
        }
        plane_out.fill(0.0);
        for &(i, j, wt) in &taps {
            for y in 0..ho {
                let start = (y * s + i) * pw + j;
                let dst = &mut plane_out[y * wo..(y + 1) * wo];
                if s == 1 {
                    for (d, v) in dst.iter_mut().zip(&padded[start..start + w]) {
                        *d += wt * v;
                    }
                } else {
                    for (d, v) in dst.iter_mut().zip(padded[start..].iter().step_by(s)) {
                        *d += wt * v;
                    }
                }
            }
        }
        out.extend_from_slice(&plane_out);
    }
    Image::new(ho, wo, img.channels, out).expect("blur geometry")
}

/// Keeps rows and columns `0, s, 2s, …`.
pub fn decimate(img: &Image, s: usize) -> Result<Image> {
    if s == 0 {
        return Err(param_err!("scale must be positive"));
    }
    if img.height % s != 0 || img.width % s != 0 {
        return Err(dim_err!(
            "{}x{} image is not divisible by scale {s}",
            img.height,
            img.width
        ));
    }
    let (h, w) = (img.height / s, img.width / s);
    let mut data = Vec::with_capacity(h * w * img.channels);
    for c in 0..img.channels {
        for y in 0..h {
            for x in 0..w {
                data.push(img.at(c, y * s, x * s));
            }
        }
    }
    Image::new(h, w, img.channels, data)
}

/// Adds i.i.d. `N(0, (level/255)²)` noise drawn from a ChaCha8 stream keyed by `seed`.
pub fn add_noise(img: &mut Image, level: f64, seed: u64) -> Result<()> {
    if level == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, level / 255.0)
        .map_err(|e| param_err!("invalid noise level {level}: {e}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in img.data.iter_mut() {
        *v += normal.sample(&mut rng);
    }
    Ok(())
}

/// Blur, decimate, add noise. The result is not clamped.
pub fn degrade(hr: &Image, spec: &DegradationSpec, noise_seed: u64) -> Result<Image> {
    spec.validate()?;
    if hr.height % spec.scale != 0 || hr.width % spec.scale != 0 {
        return Err(dim_err!(
            "{}x{} image is not divisible by scale {}",
            hr.height,
            hr.width,
            spec.scale
        ));
    }
    let kernel = make_kernel(spec)?;
    let mut lr = blur_strided(hr, &kernel, spec.scale);
    add_noise(&mut lr, spec.noise_level, noise_seed)?;
    Ok(lr)
}

/// Draws a fresh noise seed; kept separate so callers can log it.
pub fn draw_noise_seed<R: RngCore + ?Sized>(rng: &mut R) -> u64 {
    rng.next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strided_blur_matches_blur_then_decimate() {
        let img = crate::synthetic::texture(4, 0, 24, 36);
        let spec = DegradationSpec { sigma1: 2.5, sigma2: 0.7, theta: 0.4, noise_level: 0.0, scale: 3 };
        let k = make_kernel(&spec).unwrap();
        let slow = decimate(&blur(&img, &k), 3).unwrap();
        assert_eq!(blur_strided(&img, &k, 3), slow);
        assert_eq!(degrade(&img, &spec, 0).unwrap(), slow);
    }

    fn spec(s1: f64, s2: f64, theta: f64) -> DegradationSpec {
        DegradationSpec {
            sigma1: s1,
            sigma2: s2,
            theta,
            noise_level: 0.0,
            scale: 2,
        }
    }

    #[test]
    fn kernel_is_normalized_and_centrally_symmetric() {
        let k = make_kernel(&spec(3.1, 0.7, 0.4)).unwrap();
        assert!((k.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for r in 0..KERNEL_SIZE {
            for c in 0..KERNEL_SIZE {
                assert!((k.at(r, c) - k.at(20 - r, 20 - c)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn isotropic_kernel_ignores_rotation() {
        let a = make_kernel(&spec(1.7, 1.7, 0.0)).unwrap();
        let b = make_kernel(&spec(1.7, 1.7, 1.1)).unwrap();
        for (x, y) in a.weights().iter().zip(b.weights()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn narrow_kernel_is_nearly_delta() {
        let k = make_kernel(&spec(0.2, 0.2, 0.0)).unwrap();
        // Nearest neighbours carry exp(-1/(2·0.04)) relative weight each.
        let neighbour = (-12.5f64).exp();
        let expected_center = 1.0 / (1.0 + 4.0 * neighbour + 4.0 * (-25.0f64).exp());
        assert!(k.at(10, 10) > 0.9999);
        assert!((k.at(10, 10) - expected_center).abs() < 1e-12);
    }

    #[test]
    fn axis_swap_with_quarter_turn_gives_same_kernel() {
        let a = make_kernel(&spec(3.0, 0.9, 0.3)).unwrap();
        let b = make_kernel(&spec(0.9, 3.0, 0.3 + PI / 2.0)).unwrap();
        for (x, y) in a.weights().iter().zip(b.weights()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_rejects_non_positive_width() {
        assert!(matches!(make_kernel(&spec(0.0, 1.0, 0.0)), Err(Error::Parameter(_))));
        assert!(matches!(make_kernel(&spec(1.0, -1.0, 0.0)), Err(Error::Parameter(_))));
    }

    #[test]
    fn reflect_indexing() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect(-5, 1), 0);
    }

    #[test]
    fn constant_image_is_fixed_point() {
        let img = Image::filled(12, 16, 3, 0.37);
        let lr = degrade(&img, &spec(3.5, 1.2, 0.8), 0).unwrap();
        assert_eq!((lr.height, lr.width), (6, 8));
        assert!(lr.data.iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn indivisible_dims_rejected() {
        let img = Image::filled(5, 6, 1, 0.0);
        assert!(matches!(degrade(&img, &spec(1.0, 1.0, 0.0), 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn noise_std_matches_level() {
        let img = Image::filled(64, 64, 1, 0.5);
        let mut s = spec(1.0, 1.0, 0.0);
        s.noise_level = 25.0;
        s.scale = 1;
        let lr = degrade(&img, &s, 99).unwrap();
        let n = lr.data.len() as f64;
        let mean = lr.data.iter().sum::<f64>() / n;
        let std = (lr.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let target = 25.0 / 255.0;
        assert!((std - target).abs() < 0.2 * target, "std {std}");
    }

    #[test]
    fn sampler_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let s = sample_spec(&mut rng, DegradationMode::Isotropic, 2);
            assert_eq!(s.sigma1, s.sigma2);
            assert_eq!((s.theta, s.noise_level), (0.0, 0.0));
            let a = sample_spec(&mut rng, DegradationMode::AnisotropicNoise, 4);
            assert!((0.0..PI).contains(&a.theta));
            assert!((0.0..=25.0).contains(&a.noise_level));
        }
        let set = SpecSampler {
            mode: DegradationMode::Isotropic,
            sigma_set: Some(vec![0.2, 2.0, 4.0]),
            scale: 2,
        };
        for _ in 0..50 {
            let s = set.sample(&mut rng);
            assert!([0.2, 2.0, 4.0].contains(&s.sigma1));
        }
        assert_eq!("anisotropic+noise".parse::<DegradationMode>().unwrap(), DegradationMode::AnisotropicNoise);
    }
}
