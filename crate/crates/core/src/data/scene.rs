use std::f64::consts::PI;

use ndarray::Array4;
use rand::Rng;

use super::FrameSequence;
use crate::error::{Error, Result};
use crate::seed;

struct Shape {
    round: bool,
    cx: f64,
    cy: f64,
    half: f64,
    vx: f64,
    vy: f64,
    color: [f64; 3],
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Signed offset from `a` to `b` on a ring of length `n`, in `(-n/2, n/2]`.
fn ring_delta(a: f64, b: f64, n: f64) -> f64 {
    let d = (b - a).rem_euclid(n);
    if d > n / 2.0 {
        d - n
    } else {
        d
    }
}

fn color(rng: &mut impl Rng) -> [f64; 3] {
    [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)]
}

/// A panning two-colour gradient with a faint plaid texture, overlaid with
/// soft-edged discs and squares drifting on a torus.
pub fn gen_clean_video(n_frames: usize, resolution: usize, seed: u64) -> Result<FrameSequence> {
    if n_frames == 0 || resolution == 0 {
        return Err(Error::Parameter("video needs at least one frame and one pixel".into()));
    }
    let mut rng = seed::rng(seed, &[seed::tag::SCENE]);
    let res = resolution as f64;
    let c0 = color(&mut rng);
    let c1 = color(&mut rng);
    let theta = rng.random_range(0.0..2.0 * PI);
    let (pan_x, pan_y) = (rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7));
    let tex_amp = rng.random_range(0.03..0.08);
    let (fx, fy) = (rng.random_range(1.0..4.0), rng.random_range(1.0..4.0));
    let tex_phase: [f64; 3] = [rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)];
    let n_shapes = rng.random_range(4..=7);
    let shapes: Vec<Shape> = (0..n_shapes)
        .map(|_| Shape {
            round: rng.random_bool(0.5),
            cx: rng.random_range(0.0..res),
            cy: rng.random_range(0.0..res),
            half: rng.random_range(0.06..0.2) * res,
            vx: rng.random_range(-1.5..1.5),
            vy: rng.random_range(-1.5..1.5),
            color: color(&mut rng),
        })
        .collect();

    let mut frames = Array4::<f32>::zeros([n_frames, 3, resolution, resolution]);
    let mut px = [0.0f64; 3];
    for f in 0..n_frames {
        let t = f as f64;
        for y in 0..resolution {
            for x in 0..resolution {
                let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
                let (u, v) = (xf + pan_x * t, yf + pan_y * t);
                let g = (0.5 + 0.5 * ((u - res / 2.0) * theta.cos() + (v - res / 2.0) * theta.sin()) / (0.75 * res)).clamp(0.0, 1.0);
                for ch in 0..3 {
                    let tex = tex_amp * (2.0 * PI * (fx * u + fy * v) / res + tex_phase[ch]).sin();
                    px[ch] = c0[ch] * (1.0 - g) + c1[ch] * g + tex;
                }
                for s in &shapes {
                    let dx = ring_delta(s.cx + s.vx * t, xf, res);
                    let dy = ring_delta(s.cy + s.vy * t, yf, res);
                    let dist = if s.round { (dx * dx + dy * dy).sqrt() } else { dx.abs().max(dy.abs()) };
                    let a = 1.0 - smoothstep(s.half - 0.75, s.half + 0.75, dist);
                    for (p, c) in px.iter_mut().zip(&s.color) {
                        *p = *p * (1.0 - a) + c * a;
                    }
                }
                for ch in 0..3 {
                    frames[[f, ch, y, x]] = px[ch].clamp(0.0, 1.0) as f32;
                }
            }
        }
    }
    Ok(FrameSequence::new(frames))
}
