//! Deterministic synthetic images for tests, fixtures and calibration.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::math;
use crate::types::ImagePlane;

/// Smooth background, a few flat and textured shapes and light noise, so
/// that rate and distortion behave roughly like a photograph.
pub fn natural_image(width: usize, height: usize, channels: usize, seed: u64) -> Result<ImagePlane> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (wf, hf) = (width as f64, height as f64);
    // Natural scenes carry most of their energy in luma; colours are a
    // grey level plus a modest tint.
    let tinted = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
        let l: f64 = rng.random_range(lo..hi);
        let t: [f64; 3] = [rng.random_range(-25.0..25.0), rng.random_range(-25.0..25.0), rng.random_range(-25.0..25.0)];
        [l + t[0], l + t[1], l + t[2]]
    };
    let base = [tinted(&mut rng, 50.0, 205.0), tinted(&mut rng, 50.0, 205.0), tinted(&mut rng, 50.0, 205.0)];
    struct Shape {
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
        ellipse: bool,
        color: [f64; 3],
        freq: f64,
        angle: f64,
        amp: f64,
    }
    let n = rng.random_range(4..9);
    let shapes: Vec<Shape> = (0..n)
        .map(|_| Shape {
            cx: rng.random_range(0.0..wf),
            cy: rng.random_range(0.0..hf),
            rx: rng.random_range(0.06..0.3) * wf,
            ry: rng.random_range(0.06..0.3) * hf,
            ellipse: rng.random_bool(0.5),
            color: tinted(&mut rng, 20.0, 235.0),
            freq: rng.random_range(0.05..0.6),
            angle: rng.random_range(0.0..core::f64::consts::PI),
            amp: if rng.random_bool(0.5) { rng.random_range(5.0..40.0) } else { 0.0 },
        })
        .collect();
    let noise = rng.random_range(1.0..6.0);

    let mut out = Vec::with_capacity(width * height * channels);
    for y in 0..height {
        for x in 0..width {
            let (u, v) = (x as f64 / wf, y as f64 / hf);
            let mut px = [0.0f64; 3];
            for (c, p) in px.iter_mut().enumerate() {
                *p = base[0][c] * (1.0 - u) * (1.0 - v) + base[1][c] * u + base[2][c] * v * (1.0 - u);
            }
            for s in &shapes {
                let (dx, dy) = ((x as f64 - s.cx) / s.rx, (y as f64 - s.cy) / s.ry);
                let inside = if s.ellipse { dx * dx + dy * dy <= 1.0 } else { math::abs(dx) <= 1.0 && math::abs(dy) <= 1.0 };
                if inside {
                    let t = (x as f64 * math::cos(s.angle) + y as f64 * math::cos(s.angle - core::f64::consts::FRAC_PI_2)) * s.freq;
                    let tex = s.amp * math::cos(t);
                    for (p, c) in px.iter_mut().zip(s.color) {
                        *p = c + tex;
                    }
                }
            }
            let nz = rng.random_range(-noise..noise);
            if channels == 1 {
                out.push(to_u8(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2] + nz));
            } else {
                for p in px {
                    out.push(to_u8(p + nz));
                }
            }
        }
    }
    ImagePlane::new(width, height, channels, out)
}

fn to_u8(v: f64) -> u8 {
    math::round(v).clamp(0.0, 255.0) as u8
}
