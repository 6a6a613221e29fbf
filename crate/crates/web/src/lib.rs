//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export is a thin wrapper around a plain function so the logic can
//! be tested natively.

use wasm_bindgen::prelude::*;

use redsr::degradation::{degrade, make_kernel, DegradationSpec};
use redsr::image::Image;
use redsr::losses::{loss_ed, TargetDistribution, TargetKind};
use redsr::{synthetic, Graph, Tensor};

fn spec(sigma1: f64, sigma2: f64, theta_deg: f64, noise: f64, scale: usize) -> Result<DegradationSpec, String> {
    let s = DegradationSpec {
        sigma1,
        sigma2,
        theta: theta_deg.to_radians(),
        noise_level: noise,
        scale,
    };
    s.validate().map_err(|e| e.to_string())?;
    Ok(s)
}

/// Kernel weights, 21×21 row-major, scaled so the peak is 1 for display.
pub fn kernel_weights(sigma1: f64, sigma2: f64, theta_deg: f64) -> Result<Vec<f64>, String> {
    let k = make_kernel(&spec(sigma1, sigma2, theta_deg, 0.0, 1)?).map_err(|e| e.to_string())?;
    let peak = k.weights().iter().copied().fold(0.0, f64::max);
    Ok(k.weights().iter().map(|w| w / peak).collect())
}

fn to_rgba(img: &Image) -> Vec<u8> {
    let hw = img.height * img.width;
    let mut out = Vec::with_capacity(hw * 4);
    for i in 0..hw {
        for c in 0..3 {
            out.push((img.data[c * hw + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        out.push(255);
    }
    out
}

/// RGBA pixels of a bundled synthetic texture.
pub fn texture_rgba(seed: u64, size: usize) -> Vec<u8> {
    to_rgba(&synthetic::texture(seed, 0, size, size))
}

/// Degrades the synthetic texture `seed` and returns the LR image as RGBA,
/// nearest-neighbour enlarged back to `size` so both render at one scale.
pub fn degraded_rgba(
    seed: u64,
    size: usize,
    sigma1: f64,
    sigma2: f64,
    theta_deg: f64,
    noise: f64,
    scale: usize,
) -> Result<Vec<u8>, String> {
    let s = spec(sigma1, sigma2, theta_deg, noise, scale)?;
    let side = size / scale * scale;
    let hr = synthetic::texture(seed, 0, side, side);
    let lr = degrade(&hr, &s, seed).map_err(|e| e.to_string())?;
    let mut big = Image::filled(side, side, 3, 0.0);
    for c in 0..3 {
        for y in 0..side {
            for x in 0..side {
                big.data[(c * side + y) * side + x] = lr.at(c, y / scale, x / scale);
            }
        }
    }
    Ok(to_rgba(&big))
}

/// `m` target samples of dimension `dim`, flattened row-major.
pub fn target_samples(kind: &str, m: usize, dim: usize, seed: u64) -> Result<Vec<f64>, String> {
    let kind: TargetKind = kind.parse().map_err(|e: redsr::Error| e.to_string())?;
    let t = TargetDistribution { kind, dim, seed }
        .sample(m)
        .map_err(|e| e.to_string())?;
    Ok(t.into_data())
}

/// Energy distance between two flattened point sets of dimension `dim`.
pub fn energy(points: &[f64], targets: &[f64], dim: usize) -> Result<f64, String> {
    if dim == 0 || points.is_empty() || targets.is_empty() || points.len() % dim != 0 || targets.len() % dim != 0 {
        return Err("point sets must be non-empty multiples of the dimension".into());
    }
    let err = |e: redsr::Error| e.to_string();
    let mut g = Graph::new();
    let f = g
        .constant(Tensor::new(vec![points.len() / dim, dim], points.to_vec()).map_err(err)?)
        .map_err(err)?;
    let t = g
        .constant(Tensor::new(vec![targets.len() / dim, dim], targets.to_vec()).map_err(err)?)
        .map_err(err)?;
    let l = loss_ed(&mut g, f, t).map_err(err)?;
    g.value(l).item().map_err(err)
}

/// Energy distance and its gradient with respect to `points`, for the
/// "descend" button that nudges the points toward the target cloud.
pub fn energy_step(points: &[f64], targets: &[f64], dim: usize, step: f64) -> Result<Vec<f64>, String> {
    let err = |e: redsr::Error| e.to_string();
    let mut g = Graph::new();
    let f = g
        .leaf(Tensor::new(vec![points.len() / dim, dim], points.to_vec()).map_err(err)?, true)
        .map_err(err)?;
    let t = g
        .constant(Tensor::new(vec![targets.len() / dim, dim], targets.to_vec()).map_err(err)?)
        .map_err(err)?;
    let l = loss_ed(&mut g, f, t).map_err(err)?;
    g.backward(l).map_err(err)?;
    let grad = g.grad(f).ok_or("no gradient")?;
    Ok(points.iter().zip(grad.data()).map(|(p, d)| p - step * d).collect())
}

#[wasm_bindgen(js_name = kernelWeights)]
pub fn js_kernel_weights(sigma1: f64, sigma2: f64, theta_deg: f64) -> Result<Vec<f64>, JsError> {
    kernel_weights(sigma1, sigma2, theta_deg).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = textureRgba)]
pub fn js_texture_rgba(seed: u32, size: usize) -> Vec<u8> {
    texture_rgba(seed as u64, size)
}

#[wasm_bindgen(js_name = degradedRgba)]
#[allow(clippy::too_many_arguments)]
pub fn js_degraded_rgba(
    seed: u32,
    size: usize,
    sigma1: f64,
    sigma2: f64,
    theta_deg: f64,
    noise: f64,
    scale: usize,
) -> Result<Vec<u8>, JsError> {
    degraded_rgba(seed as u64, size, sigma1, sigma2, theta_deg, noise, scale).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = targetSamples)]
pub fn js_target_samples(kind: &str, m: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    target_samples(kind, m, 2, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = energyDistance)]
pub fn js_energy(points: &[f64], targets: &[f64]) -> Result<f64, JsError> {
    energy(points, targets, 2).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = energyStep)]
pub fn js_energy_step(points: &[f64], targets: &[f64], step: f64) -> Result<Vec<f64>, JsError> {
    energy_step(points, targets, 2, step).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_peak_is_centre_for_isotropic() {
        let w = kernel_weights(2.0, 2.0, 30.0).unwrap();
        assert_eq!(w.len(), 21 * 21);
        assert_eq!(w[10 * 21 + 10], 1.0);
        assert!(kernel_weights(-1.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn degraded_preview_has_display_size() {
        let out = degraded_rgba(3, 64, 2.0, 1.0, 45.0, 5.0, 2).unwrap();
        assert_eq!(out.len(), 64 * 64 * 4);
        assert_eq!(texture_rgba(3, 64).len(), 64 * 64 * 4);
        assert!(degraded_rgba(3, 64, 2.0, 1.0, 45.0, 5.0, 0).is_err());
    }

    #[test]
    fn descending_reduces_energy() {
        let t = target_samples("gaussian", 64, 2, 1).unwrap();
        let mut p: Vec<f64> = (0..32).map(|i| 3.0 + (i % 5) as f64 * 0.1).collect();
        let before = energy(&p, &t, 2).unwrap();
        for _ in 0..20 {
            p = energy_step(&p, &t, 2, 0.5).unwrap();
        }
        assert!(energy(&p, &t, 2).unwrap() < before);
        assert!(energy(&t, &t, 2).unwrap().abs() < 1e-12);
    }
}
