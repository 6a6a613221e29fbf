//! Procedural HR test images: smooth colour fields overlaid with hard-edged
//! shapes and stripes, with per-image contrast. Lets the training and
//! acceptance code run without any external data.

use std::f64::consts::PI;

use rand::Rng;

use crate::image::Image;
use crate::rng;

pub const DEFAULT_SIZE: usize = 128;

/// One deterministic texture for `(seed, index)`.
pub fn texture(seed: u64, index: u64, height: usize, width: usize) -> Image {
    let mut rng = rng::stream(seed, &[index]);
    let hw = height * width;
    let mut data = vec![0.0; 3 * hw];

    let base: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let contrast = rng.random_range(0.25..1.0);

    // Low-frequency field: a few random plane waves.
    let waves: Vec<(f64, f64, f64, [f64; 3])> = (0..rng.random_range(2..5))
        .map(|_| {
            let freq = rng.random_range(0.01..0.08);
            let angle = rng.random_range(0.0..PI);
            let phase = rng.random_range(0.0..2.0 * PI);
            let amp = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
            (freq * angle.cos(), freq * angle.sin(), phase, amp)
        })
        .collect();

    enum Shape {
        Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
        Disc { cy: f64, cx: f64, r: f64 },
        Stripes { ky: f64, kx: f64, period: f64 },
    }
    // Shape count follows the area and sizes are in absolute pixels, so any
    // crop of any image carries a similar density of hard edges.
    let (hf, wf) = (height as f64, width as f64);
    let count = 2 + (height * width) / 300;
    let shapes: Vec<(Shape, [f64; 3])> = (0..rng.random_range(count / 2..=count))
        .map(|_| {
            let color = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
            let shape = match rng.random_range(0..8) {
                0..4 => {
                    let (y0, x0) = (rng.random_range(-8.0..hf), rng.random_range(-8.0..wf));
                    Shape::Rect {
                        y0,
                        x0,
                        y1: y0 + rng.random_range(6.0..28.0),
                        x1: x0 + rng.random_range(6.0..28.0),
                    }
                }
                4..7 => Shape::Disc {
                    cy: rng.random_range(0.0..hf),
                    cx: rng.random_range(0.0..wf),
                    r: rng.random_range(3.0..14.0),
                },
                _ => {
                    let a = rng.random_range(0.0..PI);
                    Shape::Stripes {
                        ky: a.sin(),
                        kx: a.cos(),
                        period: rng.random_range(8.0..24.0),
                    }
                }
            };
            (shape, color)
        })
        .collect();

    for y in 0..height {
        for x in 0..width {
            let (yf, xf) = (y as f64, x as f64);
            let mut px = base;
            for (ky, kx, phase, amp) in &waves {
                let s = (2.0 * PI * (ky * yf + kx * xf) + phase).sin();
                px.iter_mut().zip(amp).for_each(|(p, a)| *p += a * s);
            }
            for (shape, color) in &shapes {
                let inside = match *shape {
                    Shape::Rect { y0, x0, y1, x1 } => yf >= y0 && yf < y1 && xf >= x0 && xf < x1,
                    Shape::Disc { cy, cx, r } => (yf - cy).powi(2) + (xf - cx).powi(2) < r * r,
                    Shape::Stripes { ky, kx, period } => ((ky * yf + kx * xf) / period).rem_euclid(1.0) < 0.5,
                };
                if inside {
                    px.iter_mut().zip(color).for_each(|(p, c)| *p += c);
                }
            }
            for c in 0..3 {
                let v = 0.5 + contrast * (px[c] - 0.5);
                data[c * hw + y * width + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    Image::new(height, width, 3, data).expect("valid geometry")
}

/// `count` textures with indices `0..count`.
pub fn dataset(seed: u64, count: usize, height: usize, width: usize) -> Vec<Image> {
    (0..count as u64)
        .map(|i| texture(seed, i, height, width))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textures_are_deterministic_and_varied() {
        let a = texture(1, 0, 32, 32);
        assert_eq!(a, texture(1, 0, 32, 32));
        assert_ne!(a, texture(1, 1, 32, 32));
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
        let mean = a.data.iter().sum::<f64>() / a.data.len() as f64;
        let var = a.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / a.data.len() as f64;
        assert!(var > 1e-4);
    }
}
